//! Independent oracles for the energy module.
//!
//! Nothing here calls the matrix fast paths in [`crate::energy`] for the
//! quantities it checks: finite differences only evaluate the energy, and
//! the brute-force evaluator is a literal transcription of the index sums.

use serde::Serialize;

use crate::energy::{self, EnergyForm};
use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;

/// Largest `n` accepted by [`bruteforce_energy`].
pub const BRUTE_FORCE_CAP: usize = 16;

/// Central differences `(E(z + h e_ik) - E(z - h e_ik)) / 2h` with the step
/// scaled per entry to `h (1 + |z_ik|)`.
pub fn fd_gradient(
    energy_fn: impl Fn(&DenseMatrix) -> Result<f64>,
    z: &DenseMatrix,
    h: f64,
) -> Result<DenseMatrix> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "finite-difference step must be positive, got {h}"
        )));
    }
    let mut grad = DenseMatrix::zeros(z.rows(), z.cols());
    let mut probe = z.clone();
    for i in 0..z.rows() {
        for k in 0..z.cols() {
            let base = z.get(i, k);
            let step = h * (1.0 + base.abs());
            probe.set(i, k, base + step);
            let plus = energy_fn(&probe)?;
            probe.set(i, k, base - step);
            let minus = energy_fn(&probe)?;
            probe.set(i, k, base);
            if !(plus.is_finite() && minus.is_finite()) {
                return Err(Error::NonFiniteProbe { row: i, col: k });
            }
            grad.set(i, k, (plus - minus) / (2.0 * step));
        }
    }
    Ok(grad)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub max_abs_err: f64,
    /// Relative to `max(1, |analytic|)` per entry.
    pub max_rel_err: f64,
    pub worst_index: (usize, usize),
    pub h: f64,
    pub tol: f64,
    pub pass: bool,
}

/// Compares an analytic gradient with a numeric one entry by entry.
pub fn compare_gradients(
    analytic: &DenseMatrix,
    numeric: &DenseMatrix,
    h: f64,
    tol: f64,
) -> Result<GradCheckReport> {
    if analytic.shape() != numeric.shape() {
        return Err(Error::DimensionMismatch {
            op: "compare_gradients",
            left: analytic.shape(),
            right: numeric.shape(),
        });
    }
    let mut report = GradCheckReport {
        max_abs_err: 0.0,
        max_rel_err: 0.0,
        worst_index: (0, 0),
        h,
        tol,
        pass: false,
    };
    for i in 0..analytic.rows() {
        for k in 0..analytic.cols() {
            let an = analytic.get(i, k);
            let abs = (an - numeric.get(i, k)).abs();
            let rel = abs / an.abs().max(1.0);
            report.max_abs_err = report.max_abs_err.max(abs);
            if rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst_index = (i, k);
            }
        }
    }
    report.pass = report.max_rel_err <= tol;
    Ok(report)
}

/// `∇E_R` from [`energy::grad_regularized`] against central differences
/// of [`energy::regularized_energy`].
pub fn gradcheck(
    form: EnergyForm,
    a: &DenseMatrix,
    v: &DenseMatrix,
    z: &DenseMatrix,
    h: f64,
    tol: f64,
) -> Result<GradCheckReport> {
    let c = energy::reg_coeffs(a, v)?;
    let analytic = energy::grad_regularized(form, a, z, v, &c)?;
    let numeric = fd_gradient(|zz| Ok(energy::evaluate(form, a, zz, v, &c)?.e_r), z, h)?;
    compare_gradients(&analytic, &numeric, h, tol)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StationarityReport {
    pub grad_norm_at_av: f64,
    /// `1 + ‖AV‖_F`.
    pub scale: f64,
    pub tol: f64,
    pub pass: bool,
}

impl StationarityReport {
    fn new(grad: &DenseMatrix, av: &DenseMatrix, tol: f64) -> Self {
        let grad_norm_at_av = grad.frobenius_norm();
        let scale = 1.0 + av.frobenius_norm();
        Self {
            grad_norm_at_av,
            scale,
            tol,
            pass: grad_norm_at_av <= tol * scale,
        }
    }
}

/// `‖∇E_R(AV)‖_F <= tol (1 + ‖AV‖_F)`.
pub fn stationarity_check(
    form: EnergyForm,
    a: &DenseMatrix,
    v: &DenseMatrix,
    tol: f64,
) -> Result<StationarityReport> {
    let av = a.matmul(v)?;
    let c = energy::reg_coeffs(a, v)?;
    let grad = energy::grad_regularized(form, a, &av, v, &c)?;
    Ok(StationarityReport::new(&grad, &av, tol))
}

/// Same check with the regularizer left out, i.e. on `∇E` alone.
pub fn stationarity_check_unregularized(
    form: EnergyForm,
    a: &DenseMatrix,
    v: &DenseMatrix,
    tol: f64,
) -> Result<StationarityReport> {
    let av = a.matmul(v)?;
    let grad = energy::energy_grad(form, a, &av, v)?;
    Ok(StationarityReport::new(&grad, &av, tol))
}

/// Same check for the linear energy `-⟨Z, AV⟩ + ½⟨Z, Z⟩`.
pub fn linear_stationarity_check(
    a: &DenseMatrix,
    v: &DenseMatrix,
    tol: f64,
) -> Result<StationarityReport> {
    let av = a.matmul(v)?;
    let grad = energy::linear_grad(a, &av, v)?;
    Ok(StationarityReport::new(&grad, &av, tol))
}

/// All energy quantities from literal index sums.
#[derive(Debug, Clone, PartialEq)]
pub struct BruteForceEval {
    pub e: f64,
    pub r: f64,
    pub e_r: f64,
    pub u: Vec<f64>,
    pub c: Vec<f64>,
    pub grad: DenseMatrix,
}

/// Loop-only evaluation of `u`, `c`, `E`, `R`, `E_R` and `∇E_R`.
/// Limited to [`BRUTE_FORCE_CAP`] tokens.
#[allow(clippy::needless_range_loop)]
pub fn bruteforce_energy(
    form: EnergyForm,
    a: &DenseMatrix,
    z: &DenseMatrix,
    v: &DenseMatrix,
) -> Result<BruteForceEval> {
    let n = a.rows();
    if n > BRUTE_FORCE_CAP {
        return Err(Error::TooLarge {
            n,
            cap: BRUTE_FORCE_CAP,
        });
    }
    if a.cols() != n || v.rows() != n || z.shape() != v.shape() {
        return Err(Error::DimensionMismatch {
            op: "bruteforce_energy",
            left: a.shape(),
            right: v.shape(),
        });
    }
    form.validate()?;
    let d_v = v.cols();

    // u_j = Σ_m A_mj Σ_l Z_ml V_jl
    let mut u = vec![0.0; n];
    for (j, u_j) in u.iter_mut().enumerate() {
        for m in 0..n {
            let mut dot = 0.0;
            for l in 0..d_v {
                dot += z.get(m, l) * v.get(j, l);
            }
            *u_j += a.get(m, j) * dot;
        }
    }

    // c_j = Σ_m A_mj Σ_l A_ml v_l·v_j
    let mut c = vec![0.0; n];
    for (j, c_j) in c.iter_mut().enumerate() {
        for m in 0..n {
            let mut inner = 0.0;
            for l in 0..n {
                let mut dot = 0.0;
                for k in 0..d_v {
                    dot += v.get(l, k) * v.get(j, k);
                }
                inner += a.get(m, l) * dot;
            }
            *c_j += a.get(m, j) * inner;
        }
    }

    let mut e = 0.0;
    for &u_j in &u {
        e += form.apply(u_j)?;
    }
    let dfc = c
        .iter()
        .map(|&x| form.derivative(x))
        .collect::<Result<Vec<_>>>()?;
    let dfu = u
        .iter()
        .map(|&x| form.derivative(x))
        .collect::<Result<Vec<_>>>()?;

    // R = -Σ_i Σ_j F'(c_j) A_ij z_i·v_j
    let mut r = 0.0;
    for i in 0..n {
        for j in 0..n {
            let mut dot = 0.0;
            for k in 0..d_v {
                dot += z.get(i, k) * v.get(j, k);
            }
            r -= dfc[j] * a.get(i, j) * dot;
        }
    }

    // (∇E_R)_ik = Σ_j [F'(u_j) - F'(c_j)] A_ij V_jk
    let mut grad = DenseMatrix::zeros(n, d_v);
    for i in 0..n {
        for k in 0..d_v {
            let mut g = 0.0;
            for j in 0..n {
                g += (dfu[j] - dfc[j]) * a.get(i, j) * v.get(j, k);
            }
            grad.set(i, k, g);
        }
    }

    Ok(BruteForceEval {
        e,
        r,
        e_r: e + r,
        u,
        c,
        grad,
    })
}

/// `c_j = Σ_l (AᵀA)_jl v_l·v_j` through the explicit `n x n` Gram matrix,
/// an `O(n³ + n² d_v)` route.
pub fn reg_coeffs_via_gram(a: &DenseMatrix, v: &DenseMatrix) -> Result<Vec<f64>> {
    let gram = a.transpose().matmul(a)?;
    let vvt = v.matmul(&v.transpose())?;
    Ok((0..a.cols())
        .map(|j| (0..a.cols()).map(|l| gram.get(j, l) * vvt.get(l, j)).sum())
        .collect())
}
