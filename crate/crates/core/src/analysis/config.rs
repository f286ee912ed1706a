//! TOML run configuration. Every key is optional and mirrors a CLI flag.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::engine::{TrajectoryConfig, XMode};
use crate::error::{Error, Result};
use crate::noise::NoiseConfig;
use crate::operators::{ModelKind, ModelSpec};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: Option<ModelKind>,
    pub n: Option<usize>,
    pub j: Option<f64>,
    pub delta: Option<f64>,
    pub gamma: Option<f64>,
    pub kappa: Option<f64>,
    pub omega: Option<f64>,
    pub dt: Option<f64>,
    pub steps: Option<usize>,
    pub traj: Option<usize>,
    pub seed: Option<u64>,
    pub x_mode: Option<String>,
    pub noise_p: Option<f64>,
    pub shots: Option<usize>,
    pub repeats: Option<usize>,
    pub substeps: Option<usize>,
    pub out: Option<PathBuf>,
}

macro_rules! overlay {
    ($dst:ident, $src:ident; $($f:ident),*) => {
        $( if $src.$f.is_some() { $dst.$f = $src.$f.clone(); } )*
    };
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse(format!("config: {}", e.message())))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    /// Values set in `other` replace those in `self`.
    pub fn overlay(mut self, other: &RunConfig) -> Self {
        overlay!(self, other; model, n, j, delta, gamma, kappa, omega, dt, steps, traj, seed, x_mode, noise_p, shots, repeats, substeps, out);
        self
    }

    pub fn model_spec(&self) -> Result<ModelSpec> {
        let model = self.model.ok_or_else(|| Error::InvalidConfig("--model is required".into()))?;
        let n = self.n.ok_or_else(|| Error::InvalidConfig("--n is required".into()))?;
        Ok(ModelSpec {
            model,
            n,
            j: self.j.unwrap_or(1.0),
            delta: self.delta.unwrap_or(1.0),
            omega: self.omega.unwrap_or(0.0),
            kappa: self.kappa.unwrap_or(0.0),
            gamma: self.gamma.unwrap_or(1.0),
        })
    }

    pub fn x_mode(&self) -> Result<XMode> {
        self.x_mode.as_deref().map_or(Ok(XMode::Initial), str::parse)
    }

    pub fn trajectory(&self) -> Result<TrajectoryConfig> {
        let d = TrajectoryConfig::default();
        let noise = match self.noise_p {
            Some(p) => {
                let n = NoiseConfig::new(p);
                n.validate()?;
                Some(n)
            }
            None => None,
        };
        Ok(TrajectoryConfig {
            dt: self.dt.unwrap_or(d.dt),
            n_steps: self.steps.unwrap_or(d.n_steps),
            n_traj: self.traj.unwrap_or(d.n_traj),
            master_seed: self.seed.unwrap_or(d.master_seed),
            x_mode: self.x_mode()?,
            shots: self.shots,
            noise,
            repeats: self.repeats.unwrap_or(3),
            ..d
        })
    }

    /// Flat `key=value` pairs of the resolved configuration.
    pub fn resolved_pairs(&self) -> Result<Vec<(String, String)>> {
        let spec = self.model_spec()?;
        let tc = self.trajectory()?;
        let mut out = vec![
            ("model".to_string(), spec.model.to_string()),
            ("n".into(), spec.n.to_string()),
            ("j".into(), spec.j.to_string()),
            ("delta".into(), spec.delta.to_string()),
            ("gamma".into(), spec.gamma.to_string()),
            ("kappa".into(), spec.kappa.to_string()),
            ("omega".into(), spec.omega.to_string()),
            ("dt".into(), tc.dt.to_string()),
            ("steps".into(), tc.n_steps.to_string()),
            ("traj".into(), tc.n_traj.to_string()),
            ("seed".into(), tc.master_seed.to_string()),
            ("x_mode".into(), tc.x_mode.to_string()),
            ("repeats".into(), tc.repeats.to_string()),
            ("initial".into(), "all_up".into()),
        ];
        if let Some(n) = tc.noise {
            out.push(("noise_p2".into(), n.p2.to_string()));
            out.push(("noise_p1".into(), n.p1.to_string()));
        }
        if let Some(s) = tc.shots {
            out.push(("shots".into(), s.to_string()));
        }
        Ok(out)
    }
}
