//! Attention heads built on the energy dynamics.
//!
//! A head projects tokens, forms `A` and `AV`, starts the state at
//! `Z⁰ = AV + σN` and descends `E_R`. The linear head skips descent and
//! returns `AV` directly. With `σ = 0` every form starts at its stationary
//! point, so descent ends at iteration zero.

use crate::attention::{AttentionContext, ProjectionWeights};
use crate::dynamics::{self, DescentConfig, DescentTrace};
use crate::energy::{self, EnergyForm};
use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;
use crate::rng::GaussianStream;

/// Seeded Gaussian offset added to the initial state.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Perturbation {
    pub sigma: f64,
    pub seed: u64,
    pub stream: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadSpec {
    pub d: usize,
    pub d_k: usize,
    pub d_v: usize,
    pub form: EnergyForm,
    pub descent: DescentConfig,
    pub perturbation: Perturbation,
}

impl HeadSpec {
    pub fn new(d: usize, d_k: usize, d_v: usize, form: EnergyForm) -> Self {
        Self {
            d,
            d_k,
            d_v,
            form,
            descent: DescentConfig::default(),
            perturbation: Perturbation::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.d_k == 0 || self.d_v == 0 {
            return Err(Error::InvalidConfig(format!(
                "head dimensions must be positive, got d={} d_k={} d_v={}",
                self.d, self.d_k, self.d_v
            )));
        }
        let sigma = self.perturbation.sigma;
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "perturbation sigma must be non-negative, got {sigma}"
            )));
        }
        self.form.validate()?;
        self.descent.validate()
    }

    fn check_inputs(&self, x: &DenseMatrix, w: &ProjectionWeights) -> Result<()> {
        self.validate()?;
        if (w.d(), w.d_k(), w.d_v()) != (self.d, self.d_k, self.d_v) {
            return Err(Error::InvalidConfig(format!(
                "weights are {}x{} / {}x{}, head expects d={} d_k={} d_v={}",
                w.d(),
                w.d_k(),
                w.d(),
                w.d_v(),
                self.d,
                self.d_k,
                self.d_v
            )));
        }
        if x.cols() != self.d {
            return Err(Error::DimensionMismatch {
                op: "head input",
                left: x.shape(),
                right: (x.rows(), self.d),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct HeadOutput {
    pub z: DenseMatrix,
    pub trace: DescentTrace,
    pub context: AttentionContext,
}

/// Closed-form head: `Z = AV`, no descent. Its trace holds the single
/// linear energy `-½‖AV‖²` at the output.
pub fn linear_head(x: &DenseMatrix, w: &ProjectionWeights, spec: &HeadSpec) -> Result<HeadOutput> {
    if spec.form != EnergyForm::Linear {
        return Err(Error::InvalidConfig(format!(
            "linear_head needs the linear form, got {}",
            spec.form.name()
        )));
    }
    spec.check_inputs(x, w)?;
    let context = AttentionContext::build(x, w)?;
    let z = context.av().clone();
    let e = energy::linear_energy(context.a(), &z, context.v())?;
    Ok(HeadOutput {
        z,
        trace: DescentTrace::stationary(e),
        context,
    })
}

/// Iterative head: descends `E_R` from `AV + σN`. The linear form is
/// delegated to [`linear_head`].
pub fn nonlinear_head(
    x: &DenseMatrix,
    w: &ProjectionWeights,
    spec: &HeadSpec,
) -> Result<HeadOutput> {
    if spec.form == EnergyForm::Linear {
        return linear_head(x, w, spec);
    }
    spec.check_inputs(x, w)?;
    let context = AttentionContext::build(x, w)?;
    let z0 = initial_state(&context, &spec.perturbation)?;
    let (z, trace) = dynamics::descend(spec.form, &context, &z0, &spec.descent)?;
    Ok(HeadOutput { z, trace, context })
}

fn initial_state(ctx: &AttentionContext, p: &Perturbation) -> Result<DenseMatrix> {
    if p.sigma == 0.0 {
        return Ok(ctx.av().clone());
    }
    let noise = GaussianStream::new(p.seed, p.stream).matrix(ctx.n(), ctx.d_v(), p.sigma);
    DenseMatrix::axpy(1.0, &noise, ctx.av())
}

/// Concatenated output of several heads plus each head's own result.
#[derive(Debug, Clone)]
pub struct MultiHeadOutput {
    /// `n x Σ d_v`, head outputs side by side in input order.
    pub z: DenseMatrix,
    pub heads: Vec<HeadOutput>,
}

/// Runs every head on the same tokens and concatenates along features.
/// No output projection is applied.
pub fn multi_head(
    x: &DenseMatrix,
    heads: &[(ProjectionWeights, HeadSpec)],
) -> Result<MultiHeadOutput> {
    if heads.is_empty() {
        return Err(Error::InvalidConfig(
            "multi_head needs at least one head".into(),
        ));
    }
    let d = heads[0].1.d;
    if let Some((_, spec)) = heads.iter().find(|(_, s)| s.d != d) {
        return Err(Error::InvalidConfig(format!(
            "heads disagree on embedding dimension: {d} vs {}",
            spec.d
        )));
    }
    let outputs = heads
        .iter()
        .map(|(w, spec)| nonlinear_head(x, w, spec))
        .collect::<Result<Vec<_>>>()?;
    let parts: Vec<DenseMatrix> = outputs.iter().map(|h| h.z.clone()).collect();
    Ok(MultiHeadOutput {
        z: DenseMatrix::hcat(&parts)?,
        heads: outputs,
    })
}
