//! Gradient-descent dynamics on the regularized energy.
//!
//! [`descend`] iterates `Z ← Z - η ∇E_R(Z)` with optional gradient clipping
//! and step halving (backtracking), recording `E_R` and `‖∇E_R‖_F` at every
//! iterate. [`linear_descent`] runs the same loop on the linear energy, and
//! [`hebbian_update`] is the constant-drift rule `Z + η AV`.

use crate::attention::AttentionContext;
use crate::energy::{self, EnergyForm};
use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;

/// Consecutive energy increases tolerated before a run is flagged divergent.
pub const DIVERGENCE_WINDOW: usize = 10;

/// Step halvings attempted per iteration before backtracking gives up.
pub const MAX_HALVINGS: usize = 60;

#[derive(Debug, Clone, PartialEq)]
pub struct DescentConfig {
    /// Step size.
    pub eta: f64,
    pub max_iters: usize,
    /// Stop once `‖∇E_R‖_F <= grad_tol`.
    pub grad_tol: f64,
    /// Rescale the gradient to this Frobenius norm when it is larger.
    pub clip_norm: Option<f64>,
    /// Start each iteration at `eta` and halve the step until the
    /// sufficient-decrease test below holds.
    pub backtracking: bool,
    /// Armijo constant in `[0, 1)`: a step `s` along `g` is accepted when
    /// `E_R` drops by at least `armijo · s · ‖g‖²`. Zero accepts any step
    /// that does not increase `E_R`; one half keeps steps within a factor
    /// two of the exact minimizer on quadratics.
    pub armijo: f64,
}

impl Default for DescentConfig {
    fn default() -> Self {
        Self {
            eta: 0.01,
            max_iters: 100,
            grad_tol: 1e-8,
            clip_norm: None,
            backtracking: true,
            armijo: 0.5,
        }
    }
}

impl DescentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "eta must be positive, got {}",
                self.eta
            )));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidConfig("max_iters must be at least 1".into()));
        }
        if self.grad_tol.is_nan() || self.grad_tol < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "grad_tol must be non-negative, got {}",
                self.grad_tol
            )));
        }
        if !(0.0..1.0).contains(&self.armijo) {
            return Err(Error::InvalidConfig(format!(
                "armijo must lie in [0, 1), got {}",
                self.armijo
            )));
        }
        if let Some(clip) = self.clip_norm {
            if clip.is_nan() || clip <= 0.0 {
                return Err(Error::InvalidConfig(format!(
                    "clip_norm must be positive, got {clip}"
                )));
            }
        }
        Ok(())
    }
}

/// Per-iterate record of a descent run. Entry `t` describes `Z^(t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DescentTrace {
    pub energies: Vec<f64>,
    pub grad_norms: Vec<f64>,
    /// Steps taken.
    pub iters: usize,
    /// The last gradient norm reached `grad_tol`.
    pub converged: bool,
    /// The energy grew for [`DIVERGENCE_WINDOW`] consecutive steps, or an
    /// iterate became non-finite.
    pub diverged: bool,
}

impl DescentTrace {
    /// Trace of a run that starts, and stays, at a known stationary point.
    pub fn stationary(energy: f64) -> Self {
        Self {
            energies: vec![energy],
            grad_norms: vec![0.0],
            iters: 0,
            converged: true,
            diverged: false,
        }
    }

    pub fn final_energy(&self) -> f64 {
        *self
            .energies
            .last()
            .expect("trace always holds the initial iterate")
    }

    pub fn initial_energy(&self) -> f64 {
        self.energies[0]
    }

    pub fn final_grad_norm(&self) -> f64 {
        *self
            .grad_norms
            .last()
            .expect("trace always holds the initial iterate")
    }
}

fn clip(grad: DenseMatrix, norm: f64, clip_norm: Option<f64>) -> DenseMatrix {
    match clip_norm {
        Some(limit) if norm > limit => grad.scale(limit / norm),
        _ => grad,
    }
}

/// One fixed-size step `z - η·clip(∇E_R(z))`. Returns the next iterate and
/// the unclipped gradient norm at `z`.
pub fn descend_step(
    form: EnergyForm,
    ctx: &AttentionContext,
    z: &DenseMatrix,
    c: &[f64],
    config: &DescentConfig,
) -> Result<(DenseMatrix, f64)> {
    let grad = energy::grad_regularized(form, ctx.a(), z, ctx.v(), c)?;
    let norm = grad.frobenius_norm();
    if !norm.is_finite() {
        let idx = grad.data().iter().position(|v| !v.is_finite()).unwrap_or(0);
        return Err(Error::NonFinite {
            row: idx / grad.cols(),
            col: idx % grad.cols(),
            value: grad.data()[idx],
        });
    }
    let step = clip(grad, norm, config.clip_norm);
    Ok((DenseMatrix::axpy(-config.eta, &step, z)?, norm))
}

/// Gradient descent on `E_R` from `z0`.
///
/// Fails up front on invalid configuration, shape errors, or an overflow at
/// `z0`. Problems that appear later in the run end it with
/// `trace.diverged` set instead.
pub fn descend(
    form: EnergyForm,
    ctx: &AttentionContext,
    z0: &DenseMatrix,
    config: &DescentConfig,
) -> Result<(DenseMatrix, DescentTrace)> {
    form.validate()?;
    let c = energy::reg_coeffs(ctx.a(), ctx.v())?;
    let objective = |z: &DenseMatrix| {
        energy::evaluate(form, ctx.a(), z, ctx.v(), &c).map(|ev| (ev.e_r, ev.grad))
    };
    run(z0, config, config.backtracking, objective)
}

/// Fixed-step descent on `-⟨Z, AV⟩ + ½⟨Z, Z⟩`: `Z ← Z - η(Z - AV)`.
/// `config.backtracking` is ignored.
pub fn linear_descent(
    ctx: &AttentionContext,
    z0: &DenseMatrix,
    config: &DescentConfig,
) -> Result<(DenseMatrix, DescentTrace)> {
    let objective = |z: &DenseMatrix| {
        Ok((
            energy::linear_energy(ctx.a(), z, ctx.v())?,
            energy::linear_grad(ctx.a(), z, ctx.v())?,
        ))
    };
    run(z0, config, false, objective)
}

/// `Z + η AV`. Has no fixed point unless `AV = 0`.
pub fn hebbian_update(ctx: &AttentionContext, z: &DenseMatrix, eta: f64) -> Result<DenseMatrix> {
    DenseMatrix::axpy(eta, ctx.av(), z)
}

fn run(
    z0: &DenseMatrix,
    config: &DescentConfig,
    backtracking: bool,
    objective: impl Fn(&DenseMatrix) -> Result<(f64, DenseMatrix)>,
) -> Result<(DenseMatrix, DescentTrace)> {
    config.validate()?;
    let mut z = z0.clone();
    let (mut e, mut grad) = objective(&z)?;
    let mut trace = DescentTrace {
        energies: Vec::new(),
        grad_norms: Vec::new(),
        iters: 0,
        converged: false,
        diverged: false,
    };
    let mut increases = 0;

    loop {
        let norm = grad.frobenius_norm();
        trace.energies.push(e);
        trace.grad_norms.push(norm);
        if !(e.is_finite() && norm.is_finite()) {
            trace.diverged = true;
            break;
        }
        if norm <= config.grad_tol {
            trace.converged = true;
            break;
        }
        if increases >= DIVERGENCE_WINDOW {
            trace.diverged = true;
            break;
        }
        if trace.iters >= config.max_iters {
            break;
        }

        let direction = clip(grad, norm, config.clip_norm);
        let next = if backtracking {
            let mut step = config.eta;
            let mut accepted = None;
            let dir_sq = direction.frobenius_inner(&direction)?;
            for _ in 0..MAX_HALVINGS {
                let cand = DenseMatrix::axpy(-step, &direction, &z)?;
                match objective(&cand) {
                    Ok((ce, cg))
                        if ce.is_finite()
                            && ce <= e - config.armijo * step * dir_sq
                            && cg.is_finite() =>
                    {
                        accepted = Some((cand, ce, cg));
                        break;
                    }
                    Ok(_) | Err(Error::ExponentialOverflow { .. }) => step *= 0.5,
                    Err(other) => return Err(other),
                }
            }
            match accepted {
                Some(next) => next,
                // no representable decrease left along this direction
                None => break,
            }
        } else {
            let cand = DenseMatrix::axpy(-config.eta, &direction, &z)?;
            match objective(&cand) {
                Ok((ce, cg)) => (cand, ce, cg),
                Err(Error::ExponentialOverflow { .. }) => {
                    trace.diverged = true;
                    break;
                }
                Err(other) => return Err(other),
            }
        };

        let (nz, ne, ng) = next;
        if ne > e {
            increases += 1;
        } else {
            increases = 0;
        }
        z = nz;
        e = ne;
        grad = ng;
        trace.iters += 1;
    }
    Ok((z, trace))
}
