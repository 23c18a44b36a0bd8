//! Command-line front end. [`run`] takes the argument list and output
//! sinks and returns the process exit code, so it can be driven in-process.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

use icl_core::activation::Activation;
use icl_core::config::{validate_config, TraceMode, ValidConfig};
use icl_core::features::{calibrate_trace, sample_feature_matrix};
use icl_core::hermite::HermiteExpansion;
use icl_core::rng::{derive_stream, Purpose};
use icl_core::task::build_dataset;

use crate::error::{LabError, Result};
use crate::evaluation::{
    diagnostics_csv, gaussianity_diagnostic, gaussianity_diagnostic_with, icl_error, lemma1_ratios,
    null_risk, render_table, DiagnosticRow,
};
use crate::experiments::{preset, run_sweep, RunOptions, DEFAULT_SCALE_D};
use crate::io::{self, FeatureHeader, ModelFile};
use crate::models::{fit_linear, fit_mlp, fit_surrogate, TrainedModel};
use crate::plot::render_svg;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_PARTIAL: i32 = 2;
pub const EXIT_IO: i32 = 3;

pub const THREADS_ENV: &str = "ICL_LAB_THREADS";

#[derive(Debug, Parser)]
#[command(
    name = "icl-lab",
    version,
    about = "Random-feature in-context regression experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Print the Hermite coefficients c_0..c_r of an activation.
    Coeffs { activation: String, r: usize },
    /// Estimate the trace constant t for a configuration.
    Calibrate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run a preset sweep and write `<preset>_<d>.csv` and `.json`.
    Sweep {
        #[arg(long)]
        preset: String,
        #[arg(long, default_value_t = DEFAULT_SCALE_D)]
        d: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        runs: Option<usize>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
        /// Worker threads (overrides ICL_LAB_THREADS).
        #[arg(long)]
        threads: Option<usize>,
        /// Fill the wall_time_seconds column of the CSV.
        #[arg(long)]
        record_timings: bool,
        /// Suppress the progress line.
        #[arg(long)]
        quiet: bool,
    },
    /// Render a sweep CSV as an SVG plot.
    Plot {
        csv: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit one model on the configuration's training set.
    Fit {
        #[arg(long)]
        config: PathBuf,
        /// linear, mlp or surrogate.
        #[arg(long)]
        model: String,
        /// Directory for model.json (and features.bin).
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a saved model on fresh test prompts.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        features: Option<PathBuf>,
        /// Seed of the test stream (defaults to the model's master seed).
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Concentration and Gaussianity diagnostics of the random features.
    Diagnose {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 10_000)]
        samples: usize,
        /// Also write the table as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
}

/// Runs the CLI on `args` (program name first) and returns the exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{e}");
                    EXIT_OK
                }
                _ => {
                    let _ = write!(err, "{e}");
                    EXIT_USAGE
                }
            };
        }
    };
    match dispatch(cli.command, out, err) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &LabError) -> i32 {
    match e {
        LabError::Io { .. } => EXIT_IO,
        _ => EXIT_USAGE,
    }
}

/// `--threads` wins over the environment; neither means rayon's default.
pub fn resolve_threads(flag: Option<usize>, env: Option<&str>) -> Result<Option<usize>> {
    if let Some(n) = flag {
        return positive_threads(n).map(Some);
    }
    match env.map(str::trim).filter(|s| !s.is_empty()) {
        None => Ok(None),
        Some(s) => {
            let n = s.parse().map_err(|_| {
                LabError::Invalid(format!("{THREADS_ENV} must be a positive integer (got `{s}`)"))
            })?;
            positive_threads(n).map(Some)
        }
    }
}

fn positive_threads(n: usize) -> Result<usize> {
    if n == 0 {
        Err(LabError::Invalid("thread count must be at least 1".into()))
    } else {
        Ok(n)
    }
}

fn load_config(path: &Path) -> Result<ValidConfig> {
    Ok(validate_config(io::read_config(path)?)?)
}

fn out_err(e: std::io::Error) -> LabError {
    LabError::io("<stdout>", e)
}

fn dispatch(cmd: Command, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32> {
    match cmd {
        Command::Coeffs { activation, r } => cmd_coeffs(&activation, r, out),
        Command::Calibrate { config } => cmd_calibrate(&config, out),
        Command::Sweep {
            preset,
            d,
            seed,
            runs,
            out: dir,
            threads,
            record_timings,
            quiet,
        } => {
            let env = std::env::var(THREADS_ENV).ok();
            let threads = resolve_threads(threads, env.as_deref())?;
            cmd_sweep(
                SweepArgs {
                    preset: &preset,
                    d,
                    seed,
                    runs,
                    dir: &dir,
                    threads,
                    record_timings,
                    progress: !quiet,
                },
                out,
                err,
            )
        }
        Command::Plot { csv, out: path } => {
            cmd_plot(&csv, &path)?;
            writeln!(out, "wrote {}", path.display()).map_err(out_err)?;
            Ok(EXIT_OK)
        }
        Command::Fit {
            config,
            model,
            out: dir,
        } => cmd_fit(&config, &model, &dir, out),
        Command::Eval {
            model,
            features,
            seed,
        } => cmd_eval(&model, features.as_deref(), seed, out),
        Command::Diagnose { config, samples, csv } => cmd_diagnose(&config, samples, csv.as_deref(), out),
    }
}

fn fixed(x: f64, digits: usize) -> String {
    let s = format!("{x:.digits$}");
    if s.starts_with('-') && s[1..].chars().all(|c| c == '0' || c == '.') {
        s[1..].to_string()
    } else {
        s
    }
}

pub fn cmd_coeffs(activation: &str, r: usize, out: &mut dyn Write) -> Result<i32> {
    let act = Activation::from_name(activation)?;
    let exp = HermiteExpansion::of(act, r)?;
    let mut text = format!(
        "activation {act}, r = {r}, E[sigma^2] = {}\n{:>3}  {:>16}  {:>12}\n",
        fixed(exp.second_moment, 10),
        "i",
        "c_i",
        "parseval"
    );
    let frac = exp.parseval_terms();
    for (i, c) in exp.coeffs.iter().enumerate() {
        let share = if exp.second_moment > 0.0 {
            frac[i] / exp.second_moment
        } else {
            0.0
        };
        text.push_str(&format!(
            "{i:>3}  {:>16}  {:>12}\n",
            fixed(*c, 10),
            fixed(share, 8)
        ));
    }
    text.push_str(&format!("residual c_r* = {}\n", fixed(exp.residual, 10)));
    out.write_all(text.as_bytes()).map_err(out_err)?;
    Ok(EXIT_OK)
}

pub fn cmd_calibrate(path: &Path, out: &mut dyn Write) -> Result<i32> {
    let cfg = load_config(path)?;
    let t = calibrate_trace(&derive_stream(cfg.master_seed, Purpose::Calibration, 0), &cfg)?;
    let samples = cfg.n_cal.max(100);
    let ratios = lemma1_ratios(
        &cfg,
        t,
        &derive_stream(cfg.master_seed, Purpose::Test, 0),
        samples,
    )?;
    writeln!(
        out,
        "t = {}\nN_cal = {}\nlemma1_std = {} (N = {samples})",
        io::fmt_f64(t),
        cfg.n_cal,
        io::fmt_f64(icl_core::stats::sample_std(&ratios))
    )
    .map_err(out_err)?;
    Ok(EXIT_OK)
}

struct SweepArgs<'a> {
    preset: &'a str,
    d: usize,
    seed: u64,
    runs: Option<usize>,
    dir: &'a Path,
    threads: Option<usize>,
    record_timings: bool,
    progress: bool,
}

fn cmd_sweep(args: SweepArgs<'_>, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32> {
    let mut spec = preset(args.preset, args.d)?.with_seed(args.seed);
    if let Some(r) = args.runs {
        spec = spec.with_runs(r);
    }
    spec.validate()?;
    std::fs::create_dir_all(args.dir).map_err(|e| LabError::io(args.dir, e))?;
    let start = Instant::now();
    let result = run_sweep(
        &spec,
        RunOptions {
            threads: args.threads,
            progress: args.progress,
        },
    )?;
    let total = start.elapsed().as_secs_f64();
    let (csv_path, json_path) = io::sweep_paths(args.dir, &spec.name, spec.d());
    io::write_atomic(&csv_path, &io::sweep_csv(&result, args.record_timings)?)?;
    io::write_atomic(
        &json_path,
        &io::Sidecar::of(&result, args.threads, total).to_json(),
    )?;

    let mut text = format!(
        "{} d={} seed={} runs={}: {} rows\n{:>14}  {:<16}  {:>14}  {:>12}  {:>4}\n",
        spec.name,
        spec.d(),
        args.seed,
        spec.n_runs,
        result.rows.len(),
        spec.sweep_param.as_str(),
        "model",
        "mean",
        "std",
        "runs"
    );
    for a in &result.aggregate {
        text.push_str(&format!(
            "{:>14}  {:<16}  {:>14.6e}  {:>12.4e}  {:>4}\n",
            io::fmt_f64(a.sweep_value),
            a.model,
            a.mean,
            a.std,
            a.runs
        ));
    }
    text.push_str(&format!(
        "wrote {} and {}\n",
        csv_path.display(),
        json_path.display()
    ));
    out.write_all(text.as_bytes()).map_err(out_err)?;

    if result.failures.is_empty() {
        return Ok(EXIT_OK);
    }
    let _ = writeln!(err, "{} run(s) failed:", result.failures.len());
    for f in &result.failures {
        let _ = writeln!(
            err,
            "  {}={} run {}: {}",
            spec.sweep_param,
            io::fmt_f64(f.sweep_value),
            f.run_index,
            f.message
        );
    }
    Ok(EXIT_PARTIAL)
}

pub fn cmd_plot(csv: &Path, svg: &Path) -> Result<()> {
    let rows = io::read_csv(csv)?;
    let text = render_svg(&rows).map_err(|e| LabError::format(csv, e.to_string()))?;
    io::write_atomic(svg, text.as_bytes())
}

fn cmd_fit(path: &Path, kind: &str, dir: &Path, out: &mut dyn Write) -> Result<i32> {
    let cfg = load_config(path)?;
    let seed = cfg.master_seed;
    let train = build_dataset(&derive_stream(seed, Purpose::Task, 0), &cfg);
    let features = || -> Result<_> {
        let t = calibrate_trace(&derive_stream(seed, Purpose::Calibration, 0), &cfg)?;
        Ok(sample_feature_matrix(
            &mut derive_stream(seed, Purpose::Features, 0),
            cfg.p(),
            cfg.m,
            t,
        )?)
    };
    let (model, f) = match kind {
        "linear" => (TrainedModel::Linear(fit_linear(&train, &cfg)?), None),
        "mlp" => {
            let f = features()?;
            (TrainedModel::Mlp(fit_mlp(&train, &f, &cfg)?), Some(f))
        }
        "surrogate" => {
            let f = features()?;
            let exp = HermiteExpansion::of(cfg.activation(), cfg.degree_r)?;
            let noise = derive_stream(seed, Purpose::SurrogateNoise, 0);
            (
                TrainedModel::Surrogate(fit_surrogate(&train, &f, &exp, &cfg, &noise)?),
                Some(f),
            )
        }
        other => {
            return Err(LabError::Invalid(format!(
                "unknown model kind `{other}` (expected linear, mlp or surrogate)"
            )))
        }
    };
    std::fs::create_dir_all(dir).map_err(|e| LabError::io(dir, e))?;
    let model_path = dir.join("model.json");
    io::write_atomic(&model_path, &ModelFile::of(&model, cfg.config()).to_json())?;
    let mut text = String::new();
    if let Some(f) = &f {
        let fp = dir.join("features.bin");
        let header = FeatureHeader {
            d: cfg.d as u64,
            ell: cfg.ell as u64,
            seed,
        };
        io::write_atomic(&fp, &io::encode_features(f, header))?;
        text.push_str(&format!("wrote {}\n", fp.display()));
    }
    let r = model.report();
    text.push_str(&format!(
        "{}: solver {} residual {} certificate {}\nwrote {}\n",
        model.label(),
        r.solver_path,
        io::fmt_f64(r.residual_norm),
        io::fmt_f64(r.certificate),
        model_path.display()
    ));
    out.write_all(text.as_bytes()).map_err(out_err)?;
    Ok(EXIT_OK)
}

fn cmd_eval(
    model_path: &Path,
    features: Option<&Path>,
    seed: Option<u64>,
    out: &mut dyn Write,
) -> Result<i32> {
    let file = ModelFile::from_json(model_path, &io::read_file(model_path)?)?;
    let cfg = validate_config(file.config.clone())?;
    let model = file.into_model(model_path)?;
    let f = match features {
        Some(p) => Some(io::decode_features(p, &io::read_file(p)?)?.0),
        None => None,
    };
    let stream = derive_stream(seed.unwrap_or(cfg.master_seed), Purpose::Test, 0);
    let est = icl_error(&model, f.as_ref(), &cfg, &stream)?;
    writeln!(
        out,
        "{}: icl_error = {} stderr = {} n_test = {}",
        model.label(),
        io::fmt_f64(est.mean),
        io::fmt_f64(est.stderr),
        est.n_test
    )
    .map_err(out_err)?;
    Ok(EXIT_OK)
}

fn cmd_diagnose(path: &Path, samples: usize, csv: Option<&Path>, out: &mut dyn Write) -> Result<i32> {
    let cfg = load_config(path)?;
    let seed = cfg.master_seed;
    let t = calibrate_trace(&derive_stream(seed, Purpose::Calibration, 0), &cfg)?;
    let test = derive_stream(seed, Purpose::Test, 0);
    let ratios = lemma1_ratios(&cfg, t, &test, samples)?;
    let f = sample_feature_matrix(&mut derive_stream(seed, Purpose::Features, 0), cfg.p(), 1, t)?;
    let fixed_task = gaussianity_diagnostic(&cfg, &f, &test, samples)?;
    let fresh = gaussianity_diagnostic_with(&cfg, &f, &test, samples, TraceMode::Marginal)?;
    let rows = vec![
        DiagnosticRow::new("trace_t", t, cfg.n_cal, &cfg),
        DiagnosticRow::new("lemma1_mean", icl_core::stats::mean(&ratios), samples, &cfg),
        DiagnosticRow::new("lemma1_std", icl_core::stats::sample_std(&ratios), samples, &cfg),
        DiagnosticRow::new("proj_skewness", fixed_task.skewness, samples, &cfg),
        DiagnosticRow::new("proj_excess_kurtosis", fixed_task.excess_kurtosis, samples, &cfg),
        DiagnosticRow::new("proj_cross_cov", fixed_task.cross_cov, samples, &cfg),
        DiagnosticRow::new("proj_var_fixed_task", fixed_task.sample_var, samples, &cfg),
        DiagnosticRow::new("proj_var_fresh_tasks", fresh.sample_var, samples, &cfg),
        DiagnosticRow::new("null_risk", null_risk(&cfg, &test, samples)?, samples, &cfg),
    ];
    out.write_all(render_table(&rows).as_bytes()).map_err(out_err)?;
    if let Some(p) = csv {
        io::write_atomic(p, diagnostics_csv(&rows)?.as_bytes())?;
    }
    Ok(EXIT_OK)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_str(args: &[&str]) -> (i32, String, String) {
        let (mut o, mut e) = (Vec::new(), Vec::new());
        let code = run(
            std::iter::once("icl-lab").chain(args.iter().copied()),
            &mut o,
            &mut e,
        );
        (code, String::from_utf8(o).unwrap(), String::from_utf8(e).unwrap())
    }

    #[test]
    fn threads_resolution() {
        assert_eq!(resolve_threads(Some(3), Some("5")).unwrap(), Some(3));
        assert_eq!(resolve_threads(None, Some("5")).unwrap(), Some(5));
        assert_eq!(resolve_threads(None, None).unwrap(), None);
        assert_eq!(resolve_threads(None, Some(" ")).unwrap(), None);
        assert!(resolve_threads(None, Some("many")).is_err());
        assert!(resolve_threads(Some(0), None).is_err());
    }

    #[test]
    fn coeffs_tables() {
        let (code, out, _) = run_str(&["coeffs", "relu", "4"]);
        assert_eq!(code, 0);
        let c1 = out.lines().find(|l| l.trim_start().starts_with("1 ")).unwrap();
        assert!(c1.contains("0.5000000000"), "{c1}");
        let (_, out, _) = run_str(&["coeffs", "identity", "2"]);
        assert!(out.contains("residual c_r* = 0.0000000000"));
        let (_, out, _) = run_str(&["coeffs", "tanh", "4"]);
        let c0 = out.lines().find(|l| l.trim_start().starts_with("0 ")).unwrap();
        assert!(c0.contains(" 0.0000000000"), "{c0}");
    }

    #[test]
    fn usage_errors_exit_one() {
        assert_eq!(run_str(&["coeffs", "softsign", "4"]).0, EXIT_USAGE);
        assert_eq!(run_str(&["sweep"]).0, EXIT_USAGE);
        assert_eq!(run_str(&["sweep", "--preset", "fig9", "--quiet"]).0, EXIT_USAGE);
        assert_eq!(run_str(&["frobnicate"]).0, EXIT_USAGE);
        let (code, out, _) = run_str(&["--help"]);
        assert_eq!(code, 0);
        assert!(out.contains("sweep"));
    }

    #[test]
    fn missing_files_exit_three() {
        let (code, _, err) = run_str(&["calibrate", "--config", "/nonexistent/cfg.json"]);
        assert_eq!(code, EXIT_IO);
        assert!(err.contains("/nonexistent/cfg.json"));
        assert_eq!(
            run_str(&["plot", "/nonexistent.csv", "--out", "x.svg"]).0,
            EXIT_IO
        );
    }
}
