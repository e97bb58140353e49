use std::path::Path;

use serde::{Deserialize, Serialize};

use super::CliError;
use crate::dynamics::DescentConfig;
use crate::energy::EnergyForm;
use crate::heads::{HeadSpec, Perturbation};

/// Run configuration, read from JSON. Every report embeds the resolved copy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub n: usize,
    pub d: usize,
    pub d_k: usize,
    pub d_v: usize,
    pub form: EnergyForm,
    #[serde(default = "defaults::eta")]
    pub eta: f64,
    #[serde(default = "defaults::t_max")]
    pub t_max: usize,
    #[serde(default = "defaults::grad_tol")]
    pub grad_tol: f64,
    #[serde(default)]
    pub clip_norm: Option<f64>,
    #[serde(default)]
    pub perturb_sigma: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "defaults::heads")]
    pub heads: usize,
    #[serde(default = "defaults::backtracking")]
    pub backtracking: bool,
    #[serde(default = "defaults::armijo")]
    pub armijo: f64,
}

mod defaults {
    use crate::dynamics::DescentConfig;

    pub fn eta() -> f64 {
        DescentConfig::default().eta
    }
    pub fn t_max() -> usize {
        DescentConfig::default().max_iters
    }
    pub fn grad_tol() -> f64 {
        DescentConfig::default().grad_tol
    }
    pub fn heads() -> usize {
        1
    }
    pub fn backtracking() -> bool {
        DescentConfig::default().backtracking
    }
    pub fn armijo() -> f64 {
        DescentConfig::default().armijo
    }
}

impl RunConfig {
    /// A config with the default dynamics settings.
    pub fn new(n: usize, d: usize, d_k: usize, d_v: usize, form: EnergyForm) -> Self {
        Self {
            n,
            d,
            d_k,
            d_v,
            form,
            eta: defaults::eta(),
            t_max: defaults::t_max(),
            grad_tol: defaults::grad_tol(),
            clip_norm: None,
            perturb_sigma: 0.0,
            seed: 0,
            heads: 1,
            backtracking: defaults::backtracking(),
            armijo: defaults::armijo(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let cfg: Self =
            serde_json::from_str(text).map_err(|e| CliError::Usage(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn descent(&self) -> DescentConfig {
        DescentConfig {
            eta: self.eta,
            max_iters: self.t_max,
            grad_tol: self.grad_tol,
            clip_norm: self.clip_norm,
            backtracking: self.backtracking,
            armijo: self.armijo,
        }
    }

    /// One spec per head. Head `h` draws its perturbation from stream
    /// `h + 1` of the run seed; stream 0 is reserved for the inputs.
    pub fn head_specs(&self) -> Vec<HeadSpec> {
        (0..self.heads)
            .map(|h| HeadSpec {
                d: self.d,
                d_k: self.d_k,
                d_v: self.d_v,
                form: self.form,
                descent: self.descent(),
                perturbation: Perturbation {
                    sigma: self.perturb_sigma,
                    seed: self.seed,
                    stream: h as u64 + 1,
                },
            })
            .collect()
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.n == 0 {
            return Err(CliError::Usage("n must be positive".into()));
        }
        if self.heads == 0 {
            return Err(CliError::Usage("heads must be positive".into()));
        }
        for spec in self.head_specs().iter().take(1) {
            spec.validate()?;
        }
        Ok(())
    }
}
