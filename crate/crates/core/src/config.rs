//! JSON run configuration for the `fk-lab` binary.
//!
//! Every section has defaults; unknown keys are rejected. The effective
//! configuration (defaults filled in, seed override applied) is what gets
//! hashed and recorded next to the outputs.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::coupling_lab::CouplingPlan;
use crate::dynamics_maps::{BurgersMap, TimeOneMap, ToyDiagonalMap};
use crate::embedding::FiniteChainModel;
use crate::error::{Error, Result};
use crate::feynman_kac::{ParticleConfig, PotentialFn};
use crate::kernel_lab::{FiniteKernel, KernelConditionParams, KernelFile, PotentialVector};
use crate::rds_core::{absorbing_radius, KickLaw, MapSamplePlan, RdsModel};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KickSpec {
    /// Number of kicked coordinates (defaults to the state dimension).
    #[serde(default)]
    pub dim: Option<usize>,
    /// Explicit amplitudes; overrides `b0`/`decay`.
    #[serde(default)]
    pub b: Option<Vec<f64>>,
    #[serde(default = "default_b0")]
    pub b0: f64,
    #[serde(default = "default_decay")]
    pub decay: f64,
}

fn default_b0() -> f64 {
    0.5
}

fn default_decay() -> f64 {
    1.0
}

impl Default for KickSpec {
    fn default() -> Self {
        KickSpec {
            dim: None,
            b: None,
            b0: default_b0(),
            decay: default_decay(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSpec {
    /// A finite kernel run as a chain on its points.
    Chain { kernel: KernelFile<f64> },
    /// Diagonal toy map with explicit contraction factors.
    Toy {
        gamma: Vec<f64>,
        #[serde(default)]
        q: f64,
        #[serde(default = "default_cutoff")]
        cutoff: f64,
        #[serde(default)]
        kicks: KickSpec,
        /// Absorbing radius; defaults to `‖b‖/(1 − γ_1)`.
        #[serde(default)]
        rho: Option<f64>,
    },
    /// Spectral Burgers time-one map.
    Burgers {
        nu: f64,
        modes: usize,
        dt: f64,
        #[serde(default)]
        kicks: KickSpec,
        /// Absorbing radius; defaults to `‖b‖/(1 − e^{−ν})`.
        #[serde(default)]
        rho: Option<f64>,
    },
}

fn default_cutoff() -> f64 {
    1.0
}

/// Potentials and observables.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FunctionSpec {
    Zero,
    Constant { value: f64 },
    /// One value per chain state.
    Vector { values: Vec<f64> },
    /// `scale · clamp(u_index, −clip, clip)`.
    Coordinate {
        index: usize,
        #[serde(default = "one")]
        scale: f64,
        #[serde(default = "default_clip")]
        clip: f64,
    },
}

fn one() -> f64 {
    1.0
}

fn default_clip() -> f64 {
    10.0
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ParticleSection {
    pub particles: usize,
    pub islands: usize,
    pub ess_threshold: f64,
    pub resample: bool,
}

impl Default for ParticleSection {
    fn default() -> Self {
        let d = ParticleConfig::default();
        ParticleSection {
            particles: d.particles,
            islands: d.islands,
            ess_threshold: d.ess_threshold,
            resample: d.resample,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LdpSection {
    /// Thresholds; empty means `mean ± {0.5, 1}·spread` chosen at run time.
    pub xs: Vec<f64>,
    pub ks: Vec<usize>,
    pub alpha_max: f64,
    /// Grid for the estimated pressure curve (non-chain models).
    pub alphas: Vec<f64>,
}

impl Default for LdpSection {
    fn default() -> Self {
        LdpSection {
            xs: Vec::new(),
            ks: vec![10, 20, 30, 40],
            alpha_max: 4.0,
            alphas: vec![-1.0, -0.5, 0.0, 0.5, 1.0],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttractSection {
    /// Neighbourhood radius; defaults to twice the cloud resolution.
    pub eps: Option<f64>,
    pub cloud_points: usize,
    pub cloud_levels: usize,
    pub cloud_steps: usize,
}

impl Default for AttractSection {
    fn default() -> Self {
        AttractSection {
            eps: None,
            cloud_points: 2000,
            cloud_levels: 9,
            cloud_steps: 20,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SllnSection {
    pub eps: f64,
    pub c: f64,
}

impl Default for SllnSection {
    fn default() -> Self {
        SllnSection { eps: 0.1, c: 1.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelSpec,
    /// Defaults to the kernel's `V` for chains, zero otherwise.
    #[serde(default)]
    pub potential: Option<FunctionSpec>,
    /// Test function / observable; defaults to the first coordinate.
    #[serde(default)]
    pub observable: Option<FunctionSpec>,
    #[serde(default)]
    pub seed: u64,
    /// Defaults to the first state of `A` for chains, the origin otherwise.
    #[serde(default)]
    pub start: Option<Vec<f64>>,
    #[serde(default = "default_horizon")]
    pub horizon: usize,
    #[serde(default = "default_trajectories")]
    pub trajectories: usize,
    /// Trajectories written out by `simulate`.
    #[serde(default = "default_export")]
    pub export: usize,
    #[serde(default)]
    pub particles: ParticleSection,
    #[serde(default)]
    pub kernel_conditions: KernelConditionParams,
    #[serde(default)]
    pub map_conditions: MapSamplePlan,
    #[serde(default)]
    pub coupling: CouplingPlan,
    #[serde(default)]
    pub ldp: LdpSection,
    #[serde(default)]
    pub attract: AttractSection,
    #[serde(default)]
    pub slln: SllnSection,
}

fn default_horizon() -> usize {
    60
}

fn default_trajectories() -> usize {
    1000
}

fn default_export() -> usize {
    10
}

/// A recorded run, also accepted in place of a configuration.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub command: String,
    pub config: RunConfig,
    pub config_hash: String,
    pub seed: u64,
    pub version: String,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let cfg = if value.get("config").is_some() && value.get("command").is_some() {
            serde_json::from_value::<Manifest>(value).map(|m| m.config)
        } else {
            serde_json::from_value::<RunConfig>(value)
        }
        .map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon < 1 || self.trajectories < 1 {
            return Err(Error::Config("horizon and trajectories must be positive".into()));
        }
        if self.ldp.ks.iter().any(|&k| k < 1) {
            return Err(Error::Config("ldp.ks must be positive".into()));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serialises");
        hex::encode(Sha256::digest(&bytes))
    }

    pub fn particle_config(&self) -> ParticleConfig {
        ParticleConfig {
            particles: self.particles.particles,
            islands: self.particles.islands,
            ess_threshold: self.particles.ess_threshold,
            resample: self.particles.resample,
            seed: self.seed,
        }
    }

    pub fn build(&self) -> Result<Built> {
        let model = match &self.model {
            ModelSpec::Chain { kernel } => {
                let (k, v) = FiniteKernel::from_file(kernel.clone())?;
                let chain = if k.is_stochastic(1e-9) {
                    Some(FiniteChainModel::new(k.clone())?)
                } else {
                    None
                };
                BuiltModel::Chain {
                    kernel: k,
                    chain,
                    file_v: v,
                }
            }
            ModelSpec::Toy {
                gamma,
                q,
                cutoff,
                kicks,
                rho,
            } => {
                let map = ToyDiagonalMap::new(gamma.clone(), *q, *cutoff)?;
                let a = gamma.first().copied().unwrap_or(0.0);
                BuiltModel::Rds(rds(Arc::new(map), kicks, *rho, a)?)
            }
            ModelSpec::Burgers {
                nu,
                modes,
                dt,
                kicks,
                rho,
            } => {
                let map = BurgersMap::new(*nu, *modes, *dt)?;
                BuiltModel::Rds(rds(Arc::new(map), kicks, *rho, (-nu).exp())?)
            }
        };
        let dim = model.dim();
        let start = match (&self.start, &model) {
            (Some(s), _) => s.clone(),
            (None, BuiltModel::Chain { kernel, .. }) => kernel.points()[kernel.a()[0]].clone(),
            (None, BuiltModel::Rds(_)) => vec![0.0; dim],
        };
        if start.len() != dim {
            return Err(Error::Config(format!("start has {} coordinates, model has {dim}", start.len())));
        }
        let potential = match (&self.potential, &model) {
            (Some(spec), _) => function(spec, &model)?,
            (None, BuiltModel::Chain { file_v: Some(v), .. }) => function(&FunctionSpec::Vector { values: v.clone() }, &model)?,
            (None, _) => BuiltFunction::zero(&model),
        };
        let default_obs = FunctionSpec::Coordinate {
            index: 0,
            scale: 1.0,
            clip: default_clip(),
        };
        let observable = function(self.observable.as_ref().unwrap_or(&default_obs), &model)?;
        Ok(Built {
            model,
            start,
            potential,
            observable,
        })
    }
}

fn rds(map: Arc<dyn TimeOneMap<f64>>, kicks: &KickSpec, rho: Option<f64>, a: f64) -> Result<RdsModel<f64>> {
    let law = match &kicks.b {
        Some(b) => KickLaw::new(b.clone())?,
        None => KickLaw::power_law(kicks.dim.unwrap_or(map.dim()), kicks.b0, kicks.decay)?,
    };
    let rho = match rho {
        Some(r) => r,
        None => absorbing_radius(law.norm_bound(), a)?,
    };
    RdsModel::new(map, law, rho)
}

#[derive(Debug)]
pub enum BuiltModel {
    Chain {
        kernel: FiniteKernel<f64>,
        /// Present when the kernel is stochastic and can be simulated.
        chain: Option<FiniteChainModel<f64>>,
        file_v: Option<Vec<f64>>,
    },
    Rds(RdsModel<f64>),
}

impl BuiltModel {
    pub fn dim(&self) -> usize {
        match self {
            BuiltModel::Chain { kernel, .. } => kernel.points()[0].len(),
            BuiltModel::Rds(m) => m.map().dim(),
        }
    }
}

/// A function usable by both model kinds; `values` is set on chains.
#[derive(Clone, Debug)]
pub struct BuiltFunction {
    pub func: PotentialFn<f64>,
    pub values: Option<PotentialVector<f64>>,
}

impl BuiltFunction {
    fn zero(model: &BuiltModel) -> Self {
        BuiltFunction {
            func: PotentialFn::zero(),
            values: match model {
                BuiltModel::Chain { kernel, .. } => Some(PotentialVector::zero(kernel)),
                BuiltModel::Rds(_) => None,
            },
        }
    }
}

fn function(spec: &FunctionSpec, model: &BuiltModel) -> Result<BuiltFunction> {
    let values = match (spec, model) {
        (FunctionSpec::Vector { values }, BuiltModel::Chain { kernel, .. }) => {
            Some(PotentialVector::new(kernel, values.clone())?)
        }
        (FunctionSpec::Vector { .. }, BuiltModel::Rds(_)) => {
            return Err(Error::Config("vector functions need a chain model".into()))
        }
        (_, BuiltModel::Chain { kernel, .. }) => {
            let f = scalar_function(spec, model.dim())?;
            let vals = kernel.points().iter().map(|p| f.eval(p)).collect();
            Some(PotentialVector::new(kernel, vals)?)
        }
        (_, BuiltModel::Rds(_)) => None,
    };
    let func = match (&values, model) {
        (Some(v), BuiltModel::Chain { kernel, .. }) => PotentialFn::on_kernel(kernel, v),
        _ => scalar_function(spec, model.dim())?,
    };
    Ok(BuiltFunction { func, values })
}

fn scalar_function(spec: &FunctionSpec, dim: usize) -> Result<PotentialFn<f64>> {
    Ok(match *spec {
        FunctionSpec::Zero => PotentialFn::zero(),
        FunctionSpec::Constant { value } => PotentialFn::constant(value),
        FunctionSpec::Coordinate { index, scale, clip } => {
            if index >= dim {
                return Err(Error::Config(format!("coordinate {index} out of range for dimension {dim}")));
            }
            if !(clip > 0.0) {
                return Err(Error::Config("clip must be positive".into()));
            }
            PotentialFn::new(
                move |u: &[f64]| scale * u[index].clamp(-clip, clip),
                scale.abs(),
                2.0 * scale.abs() * clip,
                "coordinate",
            )
        }
        FunctionSpec::Vector { .. } => unreachable!("handled by the caller"),
    })
}

/// Everything a command needs, built from a configuration.
#[derive(Debug)]
pub struct Built {
    pub model: BuiltModel,
    pub start: Vec<f64>,
    pub potential: BuiltFunction,
    pub observable: BuiltFunction,
}

#[cfg(test)]
mod tests {
    use super::*;

    const TWO_STATE: &str = r#"{
        "model": {"kind": "chain", "kernel": {"points": [[0.0], [1.0]], "P": [[1.0, 0.5], [0.5, 1.0]], "A": [0, 1]}}
    }"#;

    #[test]
    fn defaults_fill_in_and_hash_is_stable() {
        let c = RunConfig::from_json(TWO_STATE).unwrap();
        assert_eq!(c.horizon, 60);
        assert_eq!(c.hash(), RunConfig::from_json(TWO_STATE).unwrap().hash());
        let mut d = c.clone();
        d.seed = 1;
        assert_ne!(c.hash(), d.hash());
    }

    #[test]
    fn unknown_keys_rejected() {
        let bad = TWO_STATE.replacen("\"model\"", "\"modle\": 1, \"model\"", 1);
        assert!(matches!(RunConfig::from_json(&bad), Err(Error::Config(_))));
    }

    #[test]
    fn manifest_round_trip() {
        let c = RunConfig::from_json(TWO_STATE).unwrap();
        let m = Manifest {
            command: "eigen".into(),
            config_hash: c.hash(),
            seed: c.seed,
            version: "0".into(),
            config: c.clone(),
        };
        let back = RunConfig::from_json(&serde_json::to_string(&m).unwrap()).unwrap();
        assert_eq!(back, c);
    }
}
