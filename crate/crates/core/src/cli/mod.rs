//! Command implementations behind the `energy-attention` binary.
//!
//! Commands write JSON reports (and CSV for `trace` / `sweep`) and return an
//! [`Outcome`] that maps onto the process exit code:
//! 0 ok, 1 verification failure, 2 usage or config error, 3 divergence.

mod config;
mod matrix_file;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use thiserror::Error;

pub use config::RunConfig;
pub use matrix_file::{format_f64, MatrixFile};

use crate::attention::{AttentionContext, ProjectionWeights};
use crate::energy::EnergyForm;
use crate::error::Error;
use crate::heads::{self, HeadSpec};
use crate::matrix::DenseMatrix;
use crate::rng::GaussianStream;
use crate::verify::{self, GradCheckReport, StationarityReport};

/// Stream offset for the evaluation points used by `gradcheck`.
const GRADCHECK_STREAM: u64 = 1 << 32;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{0}")]
    Usage(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(Error::ExponentialOverflow { .. }) => 3,
            _ => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Ok,
    CheckFailed,
    Diverged,
}

impl Outcome {
    pub fn exit_code(self) -> i32 {
        match self {
            Outcome::Ok => 0,
            Outcome::CheckFailed => 1,
            Outcome::Diverged => 3,
        }
    }
}

/// Token matrix and per-head weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Problem {
    pub x: DenseMatrix,
    pub weights: Vec<ProjectionWeights>,
}

impl Problem {
    /// Entries are i.i.d. `N(0, 1/d)` from stream 0 of `seed`, drawn in
    /// the order `X, W_q_0, W_k_0, W_v_0, W_q_1, ...`, each row-major.
    pub fn generate(config: &RunConfig) -> Result<Self, CliError> {
        config.validate()?;
        let std_dev = 1.0 / (config.d as f64).sqrt();
        let mut g = GaussianStream::new(config.seed, 0);
        let x = g.matrix(config.n, config.d, std_dev);
        let weights = (0..config.heads)
            .map(|_| {
                let w_q = g.matrix(config.d, config.d_k, std_dev);
                let w_k = g.matrix(config.d, config.d_k, std_dev);
                let w_v = g.matrix(config.d, config.d_v, std_dev);
                ProjectionWeights::new(w_q, w_k, w_v)
            })
            .collect::<Result<_, _>>()?;
        Ok(Self { x, weights })
    }

    pub fn files(&self) -> Vec<MatrixFile> {
        let mut files = vec![MatrixFile::new("X", self.x.clone())];
        for (h, w) in self.weights.iter().enumerate() {
            files.push(MatrixFile::new(format!("W_q_{h}"), w.w_q().clone()));
            files.push(MatrixFile::new(format!("W_k_{h}"), w.w_k().clone()));
            files.push(MatrixFile::new(format!("W_v_{h}"), w.w_v().clone()));
        }
        files
    }

    /// Reads `X.json` and `W_{q,k,v}_{h}.json` and checks them against the
    /// config's shapes.
    pub fn load(config: &RunConfig, dir: &Path) -> Result<Self, CliError> {
        let read = |name: &str, rows: usize, cols: usize| -> Result<DenseMatrix, CliError> {
            let file = MatrixFile::load(&dir.join(format!("{name}.json")))?;
            if file.matrix.shape() != (rows, cols) {
                return Err(CliError::Usage(format!(
                    "{name}: expected {rows}x{cols}, found {}x{}",
                    file.matrix.rows(),
                    file.matrix.cols()
                )));
            }
            Ok(file.matrix)
        };
        let x = read("X", config.n, config.d)?;
        let weights = (0..config.heads)
            .map(|h| {
                ProjectionWeights::new(
                    read(&format!("W_q_{h}"), config.d, config.d_k)?,
                    read(&format!("W_k_{h}"), config.d, config.d_k)?,
                    read(&format!("W_v_{h}"), config.d, config.d_v)?,
                )
                .map_err(CliError::from)
            })
            .collect::<Result<_, _>>()?;
        Ok(Self { x, weights })
    }

    fn heads(&self, config: &RunConfig) -> Vec<(ProjectionWeights, HeadSpec)> {
        self.weights
            .iter()
            .cloned()
            .zip(config.head_specs())
            .collect()
    }
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut text = serde_json::to_string_pretty(value).expect("reports always serialize");
    text.push('\n');
    text
}

/// Writes the seeded inputs as matrix files under `out_dir`.
pub fn cmd_gen(config: &RunConfig, out_dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let problem = Problem::generate(config)?;
    std::fs::create_dir_all(out_dir).map_err(|source| CliError::Io {
        path: out_dir.to_path_buf(),
        source,
    })?;
    problem
        .files()
        .into_iter()
        .map(|file| {
            let path = out_dir.join(format!("{}.json", file.name));
            file.save(&path)?;
            Ok(path)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MatrixJson {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl From<&DenseMatrix> for MatrixJson {
    fn from(m: &DenseMatrix) -> Self {
        Self {
            rows: m.rows(),
            cols: m.cols(),
            data: m.data().to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HeadReport {
    pub head: usize,
    pub form: EnergyForm,
    pub iters: usize,
    pub converged: bool,
    pub diverged: bool,
    pub final_grad_norm: f64,
    pub energy_initial: f64,
    pub energy_final: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub z: Option<MatrixJson>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub config: RunConfig,
    pub heads: Vec<HeadReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub z: Option<MatrixJson>,
}

impl RunReport {
    pub fn to_json(&self) -> String {
        to_json(self)
    }

    pub fn outcome(&self) -> Outcome {
        if self.heads.iter().any(|h| h.diverged) {
            Outcome::Diverged
        } else {
            Outcome::Ok
        }
    }
}

/// Runs every head on the inputs in `in_dir`. For the linear form the
/// energies are the linear energy at `AV`; otherwise they are `E_R`.
pub fn cmd_run(config: &RunConfig, in_dir: &Path, emit_z: bool) -> Result<RunReport, CliError> {
    config.validate()?;
    let problem = Problem::load(config, in_dir)?;
    run_problem(config, &problem, emit_z)
}

pub fn run_problem(
    config: &RunConfig,
    problem: &Problem,
    emit_z: bool,
) -> Result<RunReport, CliError> {
    let out = heads::multi_head(&problem.x, &problem.heads(config))?;
    let heads = out
        .heads
        .iter()
        .enumerate()
        .map(|(h, head)| HeadReport {
            head: h,
            form: config.form,
            iters: head.trace.iters,
            converged: head.trace.converged,
            diverged: head.trace.diverged,
            final_grad_norm: head.trace.final_grad_norm(),
            energy_initial: head.trace.initial_energy(),
            energy_final: head.trace.final_energy(),
            z: emit_z.then(|| MatrixJson::from(&head.z)),
        })
        .collect();
    Ok(RunReport {
        config: config.clone(),
        heads,
        z: emit_z.then(|| MatrixJson::from(&out.z)),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HeadGradCheck {
    pub head: usize,
    pub report: GradCheckReport,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckCmdReport {
    pub config: RunConfig,
    pub h: f64,
    pub tol: f64,
    pub heads: Vec<HeadGradCheck>,
    pub pass: bool,
}

impl GradCheckCmdReport {
    pub fn outcome(&self) -> Outcome {
        if self.pass {
            Outcome::Ok
        } else {
            Outcome::CheckFailed
        }
    }
}

/// Analytic vs central-difference gradient of `E_R` for every head, at
/// `Z = AV + N` with `N` standard normal.
pub fn cmd_gradcheck(config: &RunConfig, h: f64, tol: f64) -> Result<GradCheckCmdReport, CliError> {
    let problem = Problem::generate(config)?;
    let mut heads = Vec::new();
    for (idx, w) in problem.weights.iter().enumerate() {
        let ctx = AttentionContext::build(&problem.x, w)?;
        let noise = GaussianStream::new(config.seed, GRADCHECK_STREAM + idx as u64).matrix(
            ctx.n(),
            ctx.d_v(),
            1.0,
        );
        let z = DenseMatrix::axpy(1.0, &noise, ctx.av())?;
        let report = verify::gradcheck(config.form, ctx.a(), ctx.v(), &z, h, tol)?;
        heads.push(HeadGradCheck { head: idx, report });
    }
    let pass = heads.iter().all(|c| c.report.pass);
    Ok(GradCheckCmdReport {
        config: config.clone(),
        h,
        tol,
        heads,
        pass,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HeadStationarity {
    pub head: usize,
    pub regularized: StationarityReport,
    /// The same check without the regularizer, for comparison.
    pub unregularized: StationarityReport,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StationarityCmdReport {
    pub config: RunConfig,
    pub tol: f64,
    pub heads: Vec<HeadStationarity>,
    pub pass: bool,
}

impl StationarityCmdReport {
    pub fn outcome(&self) -> Outcome {
        if self.pass {
            Outcome::Ok
        } else {
            Outcome::CheckFailed
        }
    }
}

/// `‖∇E_R(AV)‖` per head. Only the regularized check decides `pass`.
pub fn cmd_stationarity(config: &RunConfig, tol: f64) -> Result<StationarityCmdReport, CliError> {
    let problem = Problem::generate(config)?;
    let mut heads = Vec::new();
    for (idx, w) in problem.weights.iter().enumerate() {
        let ctx = AttentionContext::build(&problem.x, w)?;
        let regularized = match config.form {
            EnergyForm::Linear => verify::linear_stationarity_check(ctx.a(), ctx.v(), tol)?,
            form => verify::stationarity_check(form, ctx.a(), ctx.v(), tol)?,
        };
        let unregularized =
            verify::stationarity_check_unregularized(config.form, ctx.a(), ctx.v(), tol)?;
        heads.push(HeadStationarity {
            head: idx,
            regularized,
            unregularized,
        });
    }
    let pass = heads.iter().all(|c| c.regularized.pass);
    Ok(StationarityCmdReport {
        config: config.clone(),
        tol,
        heads,
        pass,
    })
}

pub const TRACE_HEADER: &str = "iter,energy,grad_norm";

/// Descent trace of head 0 on the seeded inputs, as CSV.
pub fn cmd_trace(config: &RunConfig) -> Result<(String, Outcome), CliError> {
    let problem = Problem::generate(config)?;
    let spec = config.head_specs().remove(0);
    let out = heads::nonlinear_head(&problem.x, &problem.weights[0], &spec)?;
    let mut csv = String::from(TRACE_HEADER);
    csv.push('\n');
    for (t, (e, g)) in out
        .trace
        .energies
        .iter()
        .zip(&out.trace.grad_norms)
        .enumerate()
    {
        let _ = writeln!(csv, "{t},{e},{g}");
    }
    let outcome = if out.trace.diverged {
        Outcome::Diverged
    } else {
        Outcome::Ok
    };
    Ok((csv, outcome))
}

/// Parameters `cmd_sweep` can vary.
pub const SWEEP_PARAMS: &[&str] = &[
    "n",
    "d",
    "d_k",
    "d_v",
    "p",
    "eta",
    "perturb_sigma",
    "t_max",
    "grad_tol",
    "clip_norm",
    "heads",
];

fn as_count(param: &str, value: f64) -> Result<usize, CliError> {
    if value >= 1.0 && value.fract() == 0.0 && value <= u32::MAX as f64 {
        Ok(value as usize)
    } else {
        Err(CliError::Usage(format!(
            "{param} needs a positive integer, got {value}"
        )))
    }
}

/// `config` with `param` set to `value`.
pub fn apply_sweep_value(
    config: &RunConfig,
    param: &str,
    value: f64,
) -> Result<RunConfig, CliError> {
    let mut cfg = config.clone();
    match param {
        "n" => cfg.n = as_count(param, value)?,
        "d" => cfg.d = as_count(param, value)?,
        "d_k" => cfg.d_k = as_count(param, value)?,
        "d_v" => cfg.d_v = as_count(param, value)?,
        "heads" => cfg.heads = as_count(param, value)?,
        "t_max" => cfg.t_max = as_count(param, value)?,
        "p" => cfg.form = EnergyForm::Polynomial(as_count(param, value)? as u32),
        "eta" => cfg.eta = value,
        "perturb_sigma" => cfg.perturb_sigma = value,
        "grad_tol" => cfg.grad_tol = value,
        "clip_norm" => cfg.clip_norm = Some(value),
        other => {
            return Err(CliError::Usage(format!(
                "unknown sweep parameter '{other}', expected one of {}",
                SWEEP_PARAMS.join(", ")
            )))
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub value: f64,
    pub converged: bool,
    pub iters: usize,
    pub final_grad_norm: f64,
    pub wall_time_ms: f64,
}

/// Evaluates the run at every grid value. Grid point `i` uses seed
/// `config.seed + i`; only the head forward pass is timed.
pub fn sweep(config: &RunConfig, param: &str, values: &[f64]) -> Result<Vec<SweepRow>, CliError> {
    if !SWEEP_PARAMS.contains(&param) {
        return Err(CliError::Usage(format!(
            "unknown sweep parameter '{param}', expected one of {}",
            SWEEP_PARAMS.join(", ")
        )));
    }
    let mut rows = Vec::with_capacity(values.len());
    for (i, &value) in values.iter().enumerate() {
        let mut cfg = apply_sweep_value(config, param, value)?;
        cfg.seed = config.seed.wrapping_add(i as u64);
        let problem = Problem::generate(&cfg)?;
        let head_list = problem.heads(&cfg);
        let start = Instant::now();
        let out = heads::multi_head(&problem.x, &head_list)?;
        let wall_time_ms = start.elapsed().as_secs_f64() * 1e3;
        rows.push(SweepRow {
            value,
            converged: out.heads.iter().all(|h| h.trace.converged),
            iters: out.heads.iter().map(|h| h.trace.iters).max().unwrap_or(0),
            final_grad_norm: out
                .heads
                .iter()
                .map(|h| h.trace.final_grad_norm())
                .fold(0.0, f64::max),
            wall_time_ms,
        });
    }
    Ok(rows)
}

/// CSV with header `<param>,converged,iters,final_grad_norm,wall_time_ms`.
pub fn cmd_sweep(config: &RunConfig, param: &str, values: &[f64]) -> Result<String, CliError> {
    let rows = sweep(config, param, values)?;
    let mut csv = format!("{param},converged,iters,final_grad_norm,wall_time_ms\n");
    for r in rows {
        let _ = writeln!(
            csv,
            "{},{},{},{},{:.3}",
            r.value, r.converged, r.iters, r.final_grad_norm, r.wall_time_ms
        );
    }
    Ok(csv)
}

pub fn write_output(path: Option<&Path>, text: &str) -> Result<(), CliError> {
    match path {
        Some(p) => write_text(p, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

pub fn report_json<T: Serialize>(report: &T) -> String {
    to_json(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(form: EnergyForm) -> RunConfig {
        let mut c = RunConfig::new(4, 8, 2, 2, form);
        c.seed = 7;
        c
    }

    #[test]
    fn generate_shapes_and_determinism() {
        let mut c = cfg(EnergyForm::Quadratic);
        c.heads = 2;
        let p = Problem::generate(&c).unwrap();
        assert_eq!(p.x.shape(), (4, 8));
        assert_eq!(p.weights.len(), 2);
        assert_eq!(p, Problem::generate(&c).unwrap());
        c.seed = 8;
        assert_ne!(p, Problem::generate(&c).unwrap());
        let names: Vec<_> = p.files().into_iter().map(|f| f.name).collect();
        assert_eq!(
            names,
            ["X", "W_q_0", "W_k_0", "W_v_0", "W_q_1", "W_k_1", "W_v_1"]
        );
    }

    #[test]
    fn sweep_rejects_unknown_parameter() {
        let err = sweep(&cfg(EnergyForm::Quadratic), "beta", &[1.0]).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        let err = sweep(&cfg(EnergyForm::Quadratic), "n", &[2.5]).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn sweep_over_degree() {
        let mut c = cfg(EnergyForm::Quadratic);
        c.perturb_sigma = 0.1;
        let rows = sweep(&c, "p", &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(rows.len(), 3);
        assert_eq!(rows[0].iters, 0);
        assert_eq!(rows[0].final_grad_norm, 0.0);
        assert!(rows[1].iters > 0);
        let csv = cmd_sweep(&c, "p", &[1.0]).unwrap();
        assert!(csv.starts_with("p,converged,iters,final_grad_norm,wall_time_ms\n1,true,0,0,"));
    }

    #[test]
    fn trace_rows_follow_iterations() {
        let c = cfg(EnergyForm::Quadratic);
        let (csv, outcome) = cmd_trace(&c).unwrap();
        assert_eq!(outcome, Outcome::Ok);
        assert_eq!(csv.lines().count(), 2);
        assert_eq!(csv.lines().next(), Some(TRACE_HEADER));

        let mut c = cfg(EnergyForm::Quadratic);
        c.perturb_sigma = 0.1;
        c.t_max = 50;
        c.grad_tol = 0.0;
        let (csv, _) = cmd_trace(&c).unwrap();
        assert_eq!(csv.lines().count(), 52);
        let energies: Vec<f64> = csv
            .lines()
            .skip(1)
            .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
            .collect();
        assert!(energies.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn stationarity_and_gradcheck_outcomes() {
        for form in [
            EnergyForm::Linear,
            EnergyForm::Quadratic,
            EnergyForm::Polynomial(4),
            EnergyForm::Exponential,
        ] {
            let c = cfg(form);
            assert_eq!(cmd_stationarity(&c, 1e-8).unwrap().outcome(), Outcome::Ok);
            assert_eq!(
                cmd_gradcheck(&c, 1e-6, 1e-5).unwrap().outcome(),
                Outcome::Ok
            );
        }
        let rep = cmd_gradcheck(&cfg(EnergyForm::Quadratic), 1e-6, 1e-15).unwrap();
        assert_eq!(rep.outcome(), Outcome::CheckFailed);
        assert!(rep.heads[0].report.max_rel_err > 1e-15);
    }
}
