//! On-disk formats: sweep CSV and JSON sidecar, the binary feature-matrix
//! artifact and persisted models. Every file is written to a temporary
//! sibling and renamed into place.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use icl_core::activation::Activation;
use icl_core::config::ExperimentConfig;
use icl_core::features::RandomFeatureMatrix;
use icl_core::hermite::HermiteExpansion;

use crate::error::{LabError, Result};
use crate::experiments::{AggregateRow, RunFailure, SweepParam, SweepResult};
use crate::models::{FitReport, LinearModel, MlpModel, SurrogateModel, TrainedModel};
use crate::ridge::SolverPath;

pub const CSV_COLUMNS: [&str; 9] = [
    "sweep_param",
    "sweep_value",
    "model",
    "run_index",
    "icl_error",
    "stderr",
    "null_risk",
    "solver_path",
    "wall_time_seconds",
];

/// Writes `bytes` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    let name = path
        .file_name()
        .ok_or_else(|| LabError::Invalid(format!("{} is not a file path", path.display())))?;
    let mut tmp = dir.to_path_buf();
    tmp.push(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    result.map_err(|e| {
        let _ = fs::remove_file(&tmp);
        LabError::io(path, e)
    })
}

pub fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| LabError::io(path, e))
}

/// Shortest decimal that parses back to the same `f64`.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:?}")
}

/// One parsed CSV data row.
#[derive(Clone, Debug, PartialEq)]
pub struct CsvRow {
    pub sweep_param: SweepParam,
    pub sweep_value: f64,
    pub model: String,
    pub run_index: usize,
    pub icl_error: f64,
    pub stderr: f64,
    pub null_risk: f64,
    pub solver_path: SolverPath,
    pub wall_time_seconds: Option<f64>,
}

/// Sweep rows as CSV. Wall times are only written when `timings` is set, so
/// that repeated runs produce identical bytes by default.
pub fn sweep_csv(result: &SweepResult, timings: bool) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let fail = |e: csv::Error| LabError::Invalid(format!("csv encoding failed: {e}"));
    w.write_record(CSV_COLUMNS).map_err(fail)?;
    let param = result.spec.sweep_param.as_str();
    for r in &result.rows {
        let wall = if timings {
            fmt_f64(r.wall_time_seconds)
        } else {
            String::new()
        };
        w.write_record([
            param.to_string(),
            fmt_f64(r.sweep_value),
            r.model.clone(),
            r.run_index.to_string(),
            fmt_f64(r.icl_error),
            fmt_f64(r.stderr),
            fmt_f64(r.null_risk),
            r.solver_path.to_string(),
            wall,
        ])
        .map_err(fail)?;
    }
    w.into_inner()
        .map_err(|e| LabError::Invalid(format!("csv encoding failed: {e}")))
}

pub fn parse_csv(path: &Path, bytes: &[u8]) -> Result<Vec<CsvRow>> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(bytes);
    let headers = r
        .headers()
        .map_err(|e| LabError::format(path, e.to_string()))?
        .clone();
    if headers.iter().collect::<Vec<_>>() != CSV_COLUMNS {
        return Err(LabError::format(
            path,
            format!("expected header `{}`", CSV_COLUMNS.join(",")),
        ));
    }
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| LabError::format(path, e.to_string()))?;
        let bad = |col: &str| LabError::format(path, format!("line {line}: bad `{col}`"));
        let num = |idx: usize| -> Result<f64> { rec[idx].parse::<f64>().map_err(|_| bad(CSV_COLUMNS[idx])) };
        rows.push(CsvRow {
            sweep_param: SweepParam::parse(&rec[0]).ok_or_else(|| bad("sweep_param"))?,
            sweep_value: num(1)?,
            model: rec[2].to_string(),
            run_index: rec[3].parse().map_err(|_| bad("run_index"))?,
            icl_error: num(4)?,
            stderr: num(5)?,
            null_risk: num(6)?,
            solver_path: SolverPath::parse(&rec[7]).ok_or_else(|| bad("solver_path"))?,
            wall_time_seconds: if rec[8].is_empty() { None } else { Some(num(8)?) },
        });
    }
    Ok(rows)
}

pub fn read_csv(path: &Path) -> Result<Vec<CsvRow>> {
    parse_csv(path, &read_file(path)?)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct WallTime {
    pub sweep_value: f64,
    pub model: String,
    pub run_index: usize,
    pub seconds: f64,
}

/// Provenance record written next to each sweep CSV.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Sidecar {
    pub preset: String,
    pub software_version: String,
    pub master_seed: u64,
    pub n_runs: usize,
    pub sweep_param: SweepParam,
    pub values: Vec<f64>,
    pub models: Vec<String>,
    pub base: ExperimentConfig,
    /// Seed of each `(value, run)`, in job order.
    pub run_seeds: Vec<(f64, usize, u64)>,
    pub threads: Option<usize>,
    pub total_wall_time_seconds: f64,
    pub wall_times: Vec<WallTime>,
    pub failures: Vec<RunFailure>,
    pub aggregate: Vec<AggregateRow>,
}

impl Sidecar {
    pub fn of(result: &SweepResult, threads: Option<usize>, total_seconds: f64) -> Self {
        let spec = &result.spec;
        Self {
            preset: spec.name.clone(),
            software_version: env!("CARGO_PKG_VERSION").into(),
            master_seed: spec.base.master_seed,
            n_runs: spec.n_runs,
            sweep_param: spec.sweep_param,
            values: spec.values.clone(),
            models: spec.models.iter().map(|m| m.label()).collect(),
            base: spec.base.clone(),
            run_seeds: spec
                .values
                .iter()
                .flat_map(|&v| {
                    (0..spec.n_runs)
                        .map(move |r| (v, r, crate::experiments::run_seed(spec.base.master_seed, v, r)))
                })
                .collect(),
            threads,
            total_wall_time_seconds: total_seconds,
            wall_times: result
                .rows
                .iter()
                .map(|r| WallTime {
                    sweep_value: r.sweep_value,
                    model: r.model.clone(),
                    run_index: r.run_index,
                    seconds: r.wall_time_seconds,
                })
                .collect(),
            failures: result.failures.clone(),
            aggregate: result.aggregate.clone(),
        }
    }

    pub fn to_json(&self) -> Vec<u8> {
        let mut s = serde_json::to_vec_pretty(self).expect("sidecar serializes");
        s.push(b'\n');
        s
    }
}

/// Output paths `<dir>/<preset>_<d>.csv` and `.json`.
pub fn sweep_paths(dir: &Path, preset: &str, d: usize) -> (PathBuf, PathBuf) {
    (
        dir.join(format!("{preset}_{d}.csv")),
        dir.join(format!("{preset}_{d}.json")),
    )
}

const FEATURES_MAGIC: &[u8; 8] = b"ICLFEAT1";

/// Header of a feature-matrix artifact.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FeatureHeader {
    pub d: u64,
    pub ell: u64,
    pub seed: u64,
}

/// `magic | d ell m p seed (u64 LE) | t (f64 LE) | checksum (u64 LE) | entries`.
pub fn encode_features(f: &RandomFeatureMatrix, header: FeatureHeader) -> Vec<u8> {
    let mut out = Vec::with_capacity(64 + 8 * f.entries().len());
    out.extend_from_slice(FEATURES_MAGIC);
    for v in [header.d, header.ell, f.m() as u64, f.p() as u64, header.seed] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&f.trace_constant().to_le_bytes());
    out.extend_from_slice(&f.checksum().to_le_bytes());
    for v in f.entries() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_features(path: &Path, bytes: &[u8]) -> Result<(RandomFeatureMatrix, FeatureHeader)> {
    let bad = |msg: &str| LabError::format(path, msg.to_string());
    if bytes.len() < 64 || &bytes[..8] != FEATURES_MAGIC {
        return Err(bad("not a feature-matrix file"));
    }
    let word = |i: usize| u64::from_le_bytes(bytes[8 + 8 * i..16 + 8 * i].try_into().unwrap());
    let (d, ell, m, p, seed) = (word(0), word(1), word(2) as usize, word(3) as usize, word(4));
    let t = f64::from_bits(word(5));
    let checksum = word(6);
    let body = &bytes[64..];
    if p.checked_mul(m).and_then(|n| n.checked_mul(8)) != Some(body.len()) {
        return Err(bad("entry count does not match the header"));
    }
    let entries = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let f = RandomFeatureMatrix::from_parts(p, m, entries, t)?;
    if f.checksum() != checksum {
        return Err(bad("checksum mismatch"));
    }
    Ok((f, FeatureHeader { d, ell, seed }))
}

/// JSON form of a trained model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format: String,
    pub kind: String,
    pub activation: Option<String>,
    pub config: ExperimentConfig,
    pub f_checksum: Option<u64>,
    pub report: FitReport,
    pub weights: Vec<f64>,
    pub expansion: Option<HermiteExpansion>,
}

pub const MODEL_FORMAT: &str = "icl-lab-model/1";

impl ModelFile {
    pub fn of(model: &TrainedModel, config: &ExperimentConfig) -> Self {
        let (kind, activation, weights, expansion) = match model {
            TrainedModel::Linear(m) => ("linear", None, m.gamma_vec.clone(), None),
            TrainedModel::Mlp(m) => ("mlp", Some(m.activation.name().to_string()), m.w.clone(), None),
            TrainedModel::Surrogate(m) => (
                "surrogate",
                Some(m.activation.name().to_string()),
                m.w.clone(),
                Some(m.expansion.clone()),
            ),
        };
        Self {
            format: MODEL_FORMAT.into(),
            kind: kind.into(),
            activation,
            config: config.clone(),
            f_checksum: model.f_checksum(),
            report: *model.report(),
            weights,
            expansion,
        }
    }

    pub fn into_model(self, path: &Path) -> Result<TrainedModel> {
        if self.format != MODEL_FORMAT {
            return Err(LabError::format(
                path,
                format!("unsupported format `{}`", self.format),
            ));
        }
        let activation = || -> Result<Activation> {
            let name = self
                .activation
                .as_deref()
                .ok_or_else(|| LabError::format(path, "missing activation"))?;
            Ok(Activation::from_name(name)?)
        };
        let checksum = || {
            self.f_checksum
                .ok_or_else(|| LabError::format(path, "missing f_checksum"))
        };
        Ok(match self.kind.as_str() {
            "linear" => TrainedModel::Linear(LinearModel {
                gamma_vec: self.weights,
                report: self.report,
            }),
            "mlp" => TrainedModel::Mlp(MlpModel {
                activation: activation()?,
                f_checksum: checksum()?,
                w: self.weights,
                report: self.report,
            }),
            "surrogate" => TrainedModel::Surrogate(SurrogateModel {
                activation: activation()?,
                f_checksum: checksum()?,
                expansion: self
                    .expansion
                    .ok_or_else(|| LabError::format(path, "missing expansion"))?,
                w: self.weights,
                report: self.report,
            }),
            other => return Err(LabError::format(path, format!("unknown model kind `{other}`"))),
        })
    }

    pub fn to_json(&self) -> Vec<u8> {
        let mut s = serde_json::to_vec_pretty(self).expect("model serializes");
        s.push(b'\n');
        s
    }

    pub fn from_json(path: &Path, bytes: &[u8]) -> Result<Self> {
        serde_json::from_slice(bytes).map_err(|e| LabError::format(path, e.to_string()))
    }
}

pub fn read_config(path: &Path) -> Result<ExperimentConfig> {
    let bytes = read_file(path)?;
    serde_json::from_slice(&bytes).map_err(|e| LabError::format(path, e.to_string()))
}
