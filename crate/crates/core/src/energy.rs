//! The energy family `E(Z) = Σ_j F(u_j)` over the state `Z` (`n x d_v`).
//!
//! * alignment score `u_j = Σ_m A_mj (z_m · v_j)`
//! * coefficient `c_j = u_j` evaluated at `Z = AV`
//! * regularizer `R(Z) = -Σ_j F'(c_j) u_j(Z)`
//! * gradient `∇E_R = A · diag(F'(u_j) - F'(c_j)) · V`
//!
//! `R` is linear in `Z` and cancels `∇E` exactly where `u = c`, so `Z = AV`
//! is a stationary point of `E_R` for every differentiable `F`.
//!
//! The linear energy `-⟨Z, AV⟩ + ½⟨Z, Z⟩` is kept separately in
//! [`linear_energy`] / [`linear_grad`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;

/// Inputs to `exp` above this bound are rejected.
pub const EXP_LIMIT: f64 = 700.0;

/// Scalar nonlinearity `F` applied to each alignment score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "p", rename_all = "lowercase")]
pub enum EnergyForm {
    Linear,
    Quadratic,
    /// `F(u) = u^p`, `p >= 1`.
    Polynomial(u32),
    Exponential,
}

impl EnergyForm {
    pub fn validate(&self) -> Result<()> {
        match self {
            EnergyForm::Polynomial(0) => Err(zero_degree()),
            _ => Ok(()),
        }
    }

    pub fn name(&self) -> String {
        match self {
            EnergyForm::Linear => "linear".into(),
            EnergyForm::Quadratic => "quadratic".into(),
            EnergyForm::Polynomial(p) => format!("polynomial(p={p})"),
            EnergyForm::Exponential => "exponential".into(),
        }
    }

    /// `F(u)`.
    pub fn apply(&self, u: f64) -> Result<f64> {
        match *self {
            EnergyForm::Linear => Ok(u),
            EnergyForm::Quadratic => Ok(u * u),
            EnergyForm::Polynomial(0) => Err(zero_degree()),
            EnergyForm::Polynomial(p) => Ok(u.powi(p as i32)),
            EnergyForm::Exponential => checked_exp(u, "u", 0),
        }
    }

    /// `F'(u)`.
    pub fn derivative(&self, u: f64) -> Result<f64> {
        match *self {
            EnergyForm::Linear | EnergyForm::Polynomial(1) => Ok(1.0),
            EnergyForm::Quadratic => Ok(2.0 * u),
            EnergyForm::Polynomial(0) => Err(zero_degree()),
            EnergyForm::Polynomial(p) => Ok(p as f64 * u.powi(p as i32 - 1)),
            EnergyForm::Exponential => checked_exp(u, "u", 0),
        }
    }

    fn map_all(
        &self,
        values: &[f64],
        quantity: &'static str,
        f: impl Fn(&Self, f64) -> Result<f64>,
    ) -> Result<Vec<f64>> {
        values
            .iter()
            .enumerate()
            .map(|(index, &x)| {
                f(self, x).map_err(|e| match e {
                    Error::ExponentialOverflow { value, limit, .. } => Error::ExponentialOverflow {
                        quantity,
                        index,
                        value,
                        limit,
                    },
                    other => other,
                })
            })
            .collect()
    }
}

fn zero_degree() -> Error {
    Error::InvalidConfig("polynomial degree must be at least 1".into())
}

fn checked_exp(x: f64, quantity: &'static str, index: usize) -> Result<f64> {
    if x > EXP_LIMIT || x.is_nan() {
        return Err(Error::ExponentialOverflow {
            quantity,
            index,
            value: x,
            limit: EXP_LIMIT,
        });
    }
    Ok(x.exp())
}

fn check_shapes(a: &DenseMatrix, z: &DenseMatrix, v: &DenseMatrix) -> Result<()> {
    if a.rows() != a.cols() || a.rows() != v.rows() {
        return Err(Error::DimensionMismatch {
            op: "energy (a vs v)",
            left: a.shape(),
            right: v.shape(),
        });
    }
    if z.shape() != v.shape() {
        return Err(Error::DimensionMismatch {
            op: "energy (z vs v)",
            left: z.shape(),
            right: v.shape(),
        });
    }
    Ok(())
}

/// `u_j = Σ_m A_mj (z_m · v_j)`, evaluated as `(AᵀZ)_j · v_j` in
/// `O(n² d_v)`.
pub fn alignment_scores(a: &DenseMatrix, z: &DenseMatrix, v: &DenseMatrix) -> Result<Vec<f64>> {
    check_shapes(a, z, v)?;
    let (n, d_v) = v.shape();
    // atz[j] = Σ_m A_mj z_m
    let mut atz = vec![0.0; n * d_v];
    for m in 0..n {
        let z_m = z.row(m);
        for j in 0..n {
            let a_mj = a.get(m, j);
            for (acc, zv) in atz[j * d_v..(j + 1) * d_v].iter_mut().zip(z_m) {
                *acc += a_mj * zv;
            }
        }
    }
    Ok((0..n)
        .map(|j| {
            atz[j * d_v..(j + 1) * d_v]
                .iter()
                .zip(v.row(j))
                .map(|(x, y)| x * y)
                .sum()
        })
        .collect())
}

/// `c_j = Σ_m A_mj Σ_l A_ml v_l·v_j`, i.e. the alignment scores at
/// `Z = AV`. Costs `O(n² d_v)`.
pub fn reg_coeffs(a: &DenseMatrix, v: &DenseMatrix) -> Result<Vec<f64>> {
    let av = a.matmul(v)?;
    alignment_scores(a, &av, v)
}

/// `E(Z) = Σ_j F(u_j)`.
pub fn energy(form: EnergyForm, a: &DenseMatrix, z: &DenseMatrix, v: &DenseMatrix) -> Result<f64> {
    let u = alignment_scores(a, z, v)?;
    Ok(form.map_all(&u, "u", EnergyForm::apply)?.iter().sum())
}

/// `-⟨Z, AV⟩ + ½⟨Z, Z⟩`.
pub fn linear_energy(a: &DenseMatrix, z: &DenseMatrix, v: &DenseMatrix) -> Result<f64> {
    check_shapes(a, z, v)?;
    let av = a.matmul(v)?;
    Ok(-z.frobenius_inner(&av)? + 0.5 * z.frobenius_inner(z)?)
}

/// `Z - AV`; zero exactly when `Z = AV`.
pub fn linear_grad(a: &DenseMatrix, z: &DenseMatrix, v: &DenseMatrix) -> Result<DenseMatrix> {
    check_shapes(a, z, v)?;
    z.sub(&a.matmul(v)?)
}

/// `R(Z) = -Σ_j F'(c_j) u_j(Z)`.
pub fn regularizer(
    form: EnergyForm,
    a: &DenseMatrix,
    z: &DenseMatrix,
    v: &DenseMatrix,
    c: &[f64],
) -> Result<f64> {
    check_coeffs(c, v)?;
    let u = alignment_scores(a, z, v)?;
    let fc = form.map_all(c, "c", EnergyForm::derivative)?;
    Ok(-fc.iter().zip(&u).map(|(f, u)| f * u).sum::<f64>())
}

fn check_coeffs(c: &[f64], v: &DenseMatrix) -> Result<()> {
    if c.len() != v.rows() {
        return Err(Error::DimensionMismatch {
            op: "regularization coefficients",
            left: (c.len(), 1),
            right: v.shape(),
        });
    }
    Ok(())
}

/// `A · diag(weights) · V`.
fn weighted_gradient(a: &DenseMatrix, v: &DenseMatrix, weights: &[f64]) -> Result<DenseMatrix> {
    a.matmul(&v.scale_rows(weights)?)
}

/// Gradient of the unregularized energy, `A · diag(F'(u_j)) · V`.
pub fn energy_grad(
    form: EnergyForm,
    a: &DenseMatrix,
    z: &DenseMatrix,
    v: &DenseMatrix,
) -> Result<DenseMatrix> {
    let u = alignment_scores(a, z, v)?;
    let fu = form.map_all(&u, "u", EnergyForm::derivative)?;
    weighted_gradient(a, v, &fu)
}

/// `∇_Z E_R = A · diag(F'(u_j) - F'(c_j)) · V`.
pub fn grad_regularized(
    form: EnergyForm,
    a: &DenseMatrix,
    z: &DenseMatrix,
    v: &DenseMatrix,
    c: &[f64],
) -> Result<DenseMatrix> {
    check_coeffs(c, v)?;
    let u = alignment_scores(a, z, v)?;
    let weights = gradient_weights(form, &u, c)?;
    weighted_gradient(a, v, &weights)
}

fn gradient_weights(form: EnergyForm, u: &[f64], c: &[f64]) -> Result<Vec<f64>> {
    let fu = form.map_all(u, "u", EnergyForm::derivative)?;
    let fc = form.map_all(c, "c", EnergyForm::derivative)?;
    Ok(fu.iter().zip(&fc).map(|(a, b)| a - b).collect())
}

/// Everything about `E_R` at one state.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyEval {
    pub u: Vec<f64>,
    pub c: Vec<f64>,
    pub e: f64,
    pub r: f64,
    /// `e + r`.
    pub e_r: f64,
    pub grad: DenseMatrix,
}

/// [`regularized_energy`] with precomputed coefficients `c`.
pub fn evaluate(
    form: EnergyForm,
    a: &DenseMatrix,
    z: &DenseMatrix,
    v: &DenseMatrix,
    c: &[f64],
) -> Result<EnergyEval> {
    form.validate()?;
    check_coeffs(c, v)?;
    let u = alignment_scores(a, z, v)?;
    let fu = form.map_all(&u, "u", EnergyForm::apply)?;
    let dfu = form.map_all(&u, "u", EnergyForm::derivative)?;
    let dfc = form.map_all(c, "c", EnergyForm::derivative)?;

    let e: f64 = fu.iter().sum();
    let r = -dfc.iter().zip(&u).map(|(f, u)| f * u).sum::<f64>();
    let weights: Vec<f64> = dfu.iter().zip(&dfc).map(|(a, b)| a - b).collect();
    let grad = weighted_gradient(a, v, &weights)?;
    Ok(EnergyEval {
        u,
        c: c.to_vec(),
        e,
        r,
        e_r: e + r,
        grad,
    })
}

/// `E_R(Z) = E(Z) + R(Z)` together with its gradient.
pub fn regularized_energy(
    form: EnergyForm,
    a: &DenseMatrix,
    z: &DenseMatrix,
    v: &DenseMatrix,
) -> Result<EnergyEval> {
    let c = reg_coeffs(a, v)?;
    evaluate(form, a, z, v, &c)
}
