//! Pointwise nonlinearities used both as targets σ* and as MLP activations σ.

use alloc::string::ToString;
use core::fmt;

use crate::error::{Error, Result};

/// A user-registered pointwise function.
#[derive(Clone, Copy)]
pub struct PointwiseFn {
    pub name: &'static str,
    pub f: fn(f64) -> f64,
}

impl fmt::Debug for PointwiseFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PointwiseFn({})", self.name)
    }
}

#[derive(Clone, Copy, Debug)]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
    Custom(PointwiseFn),
}

impl PartialEq for Activation {
    fn eq(&self, other: &Self) -> bool {
        self.name() == other.name()
    }
}

impl Activation {
    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            "identity" => Ok(Activation::Identity),
            other => Err(Error::UnknownActivation(other.to_string())),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
            Activation::Identity => "identity",
            Activation::Custom(p) => p.name,
        }
    }

    #[inline]
    pub fn apply(&self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => libm::tanh(x),
            Activation::Identity => x,
            Activation::Custom(p) => (p.f)(x),
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Resolves a target-function identifier.
pub fn target_fn(name: &str) -> Result<Activation> {
    Activation::from_name(name)
}
