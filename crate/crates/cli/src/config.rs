//! Run configuration, read from TOML with one section per component.
//!
//! ```toml
//! method = "gfn-hier"
//! seed = 0
//! seeds = 3
//!
//! [instance]
//! sizes = [90, 89, 197]
//! min_size = 20000
//! max_size = 25000
//!
//! [paths]
//! scores = "scores.dels"
//! fingerprints = "fingerprints.txt"
//!
//! [gfn]
//! iterations = 5000
//! ```

use std::path::{Path, PathBuf};

use delgfn::baselines::{McmcConfig, PpoConfig};
use delgfn::env::{FlatEnv, MaskRule};
use delgfn::gflownet::GfnConfig;
use delgfn::{CycleSpec, SizeConstraint};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    GfnFlat,
    GfnHier,
    Random,
    Greedy,
    Mcmc,
    Ppo,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::GfnFlat => "gfn-flat",
            Method::GfnHier => "gfn-hier",
            Method::Random => "random",
            Method::Greedy => "greedy",
            Method::Mcmc => "mcmc",
            Method::Ppo => "ppo",
        }
    }

    pub fn is_learned(self) -> bool {
        matches!(self, Method::GfnFlat | Method::GfnHier | Method::Ppo)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Instance {
    pub sizes: CycleSpec,
    pub min_size: u64,
    pub max_size: u64,
    #[serde(default)]
    pub mask_rule: MaskRule,
}

impl Instance {
    pub fn constraint(&self) -> CliResult<SizeConstraint> {
        Ok(SizeConstraint::new(self.min_size, self.max_size)?)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub scores: Option<PathBuf>,
    pub fingerprints: Option<PathBuf>,
    pub clusters: Option<PathBuf>,
    pub properties: Vec<PathBuf>,
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HierSection {
    pub clusters_per_cycle: Vec<usize>,
}

impl Default for HierSection {
    fn default() -> Self {
        Self {
            clusters_per_cycle: vec![10, 10, 20],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GreedySection {
    pub k: Vec<usize>,
}

impl Default for GreedySection {
    fn default() -> Self {
        Self {
            k: vec![25, 25, 40],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub n_samples: usize,
    pub top_k: usize,
    pub bins: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            n_samples: 5000,
            top_k: 100,
            bins: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub method: Method,
    #[serde(default)]
    pub seed: u64,
    /// Number of consecutive seeds starting at `seed`.
    #[serde(default = "one")]
    pub seeds: usize,
    /// Shared reward scale; overrides the per-method `beta` keys when set.
    #[serde(default)]
    pub beta: Option<f64>,
    pub instance: Instance,
    #[serde(default)]
    pub paths: Paths,
    #[serde(default)]
    pub eval: EvalSection,
    #[serde(default)]
    pub gfn: GfnConfig,
    #[serde(default)]
    pub hier: HierSection,
    #[serde(default)]
    pub mcmc: McmcConfig,
    #[serde(default)]
    pub ppo: PpoConfig,
    #[serde(default)]
    pub greedy: GreedySection,
}

fn one() -> usize {
    1
}

impl RunConfig {
    pub fn from_toml(text: &str) -> CliResult<Self> {
        let mut cfg: RunConfig =
            toml::from_str(text).map_err(|e| CliError::Usage(format!("config: {e}")))?;
        cfg.apply_shared();
        Ok(cfg)
    }

    /// Reads a config file; relative paths are resolved against its directory.
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut cfg = Self::from_toml(&text)?;
        if let Some(base) = path.parent() {
            cfg.paths.resolve(base);
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config is always serializable")
    }

    fn apply_shared(&mut self) {
        if let Some(b) = self.beta {
            self.gfn.beta = b;
            self.mcmc.beta = b;
            self.ppo.beta = b;
        }
    }

    /// Reward scale of the selected method.
    pub fn method_beta(&self) -> f64 {
        match self.method {
            Method::GfnFlat | Method::GfnHier | Method::Random | Method::Greedy => self.gfn.beta,
            Method::Mcmc => self.mcmc.beta,
            Method::Ppo => self.ppo.beta,
        }
    }

    /// Copy with every seed field set to `seed`.
    pub fn with_seed(&self, seed: u64) -> Self {
        let mut c = self.clone();
        c.seed = seed;
        c.gfn.seed = seed;
        c.mcmc.seed = seed;
        c.ppo.seed = seed;
        c
    }

    pub fn validate(&self) -> CliResult<()> {
        let spec = &self.instance.sizes;
        if spec.n_cycles() != 3 {
            return Err(CliError::Usage(format!(
                "instances must have 3 cycles, got {}",
                spec.n_cycles()
            )));
        }
        // rejects windows no design can reach
        FlatEnv::new(
            spec.clone(),
            self.instance.constraint()?,
            self.instance.mask_rule,
        )?;
        if self.seeds == 0 {
            return Err(CliError::Usage("seeds must be positive".into()));
        }
        match self.method {
            Method::GfnFlat | Method::GfnHier => self.gfn.validate()?,
            Method::Mcmc => self.mcmc.validate()?,
            Method::Ppo => self.ppo.validate()?,
            Method::Greedy => {
                if self.greedy.k.len() != 3 {
                    return Err(CliError::Usage("greedy.k needs one count per cycle".into()));
                }
                let size: u64 = self.greedy.k.iter().map(|&k| k as u64).product();
                if !self.instance.constraint()?.contains(size) {
                    log::warn!("greedy selection of size {size} lies outside the size window");
                }
            }
            Method::Random => {}
        }
        if self.method == Method::GfnHier
            && self.paths.clusters.is_none()
            && self.hier.clusters_per_cycle.len() != 3
        {
            return Err(CliError::Usage(
                "hier.clusters_per_cycle needs 3 entries".into(),
            ));
        }
        Ok(())
    }
}

impl Paths {
    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for p in [
            &mut self.scores,
            &mut self.fingerprints,
            &mut self.clusters,
            &mut self.output,
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
        self.properties.iter_mut().for_each(fix);
    }
}
