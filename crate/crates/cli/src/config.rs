//! Experiment configuration: one JSON document, every key optional.
//!
//! Command-line flags are applied on top of the file with
//! [`ExperimentConfig::apply`].

use std::path::Path;

use serde::{Deserialize, Serialize};
use sphcov::gp::HyperPrior;
use sphcov::models::{DynamicChainConfig, DynamicOptions, GpHyper, StaticChainConfig};
use sphcov::samplers::{SphHmcConfig, StopRule};
use sphcov::Exec;

use crate::error::{CliError, CliResult};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub iters: usize,
    pub burnin: usize,
    pub thin: usize,
    pub chains: usize,
    /// Acceptance target `a₀` of step-size adaptation.
    pub target_accept: f64,
    /// Initial spherical HMC step size.
    pub step_size: f64,
    /// Leapfrog cap per trajectory.
    pub max_steps: usize,
    pub stop_rule: StopRuleConfig,
    /// A chain whose acceptance rate over this many post-burn-in sweeps
    /// falls below 1% counts as diverged.
    pub divergence_window: usize,
    pub generate: GenerateConfig,
    #[serde(rename = "static")]
    pub static_model: StaticConfig,
    pub dynamic: DynamicConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let sph = SphHmcConfig::default();
        Self {
            seed: 2024,
            iters: 102_000,
            burnin: 2_000,
            thin: 10,
            chains: 1,
            target_accept: sphcov::samplers::DEFAULT_TARGET_ACCEPT,
            step_size: sph.h,
            max_steps: sph.t_max,
            stop_rule: StopRuleConfig::TwoOrthants,
            divergence_window: 500,
            generate: GenerateConfig::default(),
            static_model: StaticConfig::default(),
            dynamic: DynamicConfig::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopRuleConfig {
    TwoOrthants,
    Stochastic,
    Fixed(usize),
}

impl From<StopRuleConfig> for StopRule {
    fn from(s: StopRuleConfig) -> Self {
        match s {
            StopRuleConfig::TwoOrthants => StopRule::TwoOrthants,
            StopRuleConfig::Stochastic => StopRule::Stochastic,
            StopRuleConfig::Fixed(t) => StopRule::FixedT(t),
        }
    }
}

/// Synthetic periodic data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateConfig {
    pub dim: usize,
    pub trials: usize,
    pub times: usize,
    pub t_start: f64,
    pub t_end: f64,
    /// Sparse-correlation variant with unit variances on `[0, 1]`;
    /// `t_start` and `t_end` are then ignored.
    pub sparse: bool,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        Self {
            dim: 2,
            trials: 10,
            times: 20,
            t_start: 0.0,
            t_end: 2.0,
            sparse: false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum PriorKind {
    Iw,
    Sqdir,
    Vmf,
    Bingham,
}

/// Static normal model and the inverse-Wishart validation run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StaticConfig {
    pub prior: PriorKind,
    /// Degrees of freedom of `W⁻¹(Ψ, ν)`; defaults to the dimension.
    pub nu: Option<f64>,
    /// Scale matrix `Ψ` as rows; defaults to the identity.
    pub psi: Option<Vec<Vec<f64>>>,
    /// Known mean; defaults to zero.
    pub mu0: Option<Vec<f64>>,
    /// Squared-Dirichlet row concentrations `(α·1, α_last)`.
    pub alpha: f64,
    pub alpha_last: f64,
    pub kappa: f64,
    pub zeta: f64,
    /// Normal prior on each log standard deviation.
    pub tau_mean: f64,
    pub tau_sd: f64,
    pub tau_step: f64,
    pub tau_leapfrog: usize,
    pub prior_proposals: usize,
    /// Dimension and sample size of the validation data.
    pub dim: usize,
    pub observations: usize,
    /// Largest two-sample KS statistic accepted by `validate-iw`.
    pub ks_threshold: f64,
}

impl Default for StaticConfig {
    fn default() -> Self {
        let chain = StaticChainConfig::default();
        Self {
            prior: PriorKind::Iw,
            nu: None,
            psi: None,
            mu0: None,
            alpha: 1.0,
            alpha_last: 1.0,
            kappa: 1.0,
            zeta: 1.0,
            tau_mean: 0.0,
            tau_sd: 0.1,
            tau_step: chain.tau_step,
            tau_leapfrog: chain.tau_leapfrog,
            prior_proposals: chain.prior_proposals,
            dim: 3,
            observations: 20,
            ks_threshold: 0.05,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HyperConfig {
    pub a: f64,
    pub b: f64,
    pub m: f64,
    #[serde(rename = "V")]
    pub v: f64,
}

impl From<HyperPrior> for HyperConfig {
    fn from(h: HyperPrior) -> Self {
        Self {
            a: h.a,
            b: h.b,
            m: h.m,
            v: h.v,
        }
    }
}

impl HyperConfig {
    fn build(&self) -> CliResult<HyperPrior> {
        Ok(HyperPrior::new(self.a, self.b, self.m, self.v)?)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HyperSet {
    pub mean: HyperConfig,
    pub log_sd: HyperConfig,
    pub chol: HyperConfig,
}

impl Default for HyperSet {
    fn default() -> Self {
        let h = GpHyper::default();
        Self {
            mean: h.mean.into(),
            log_sd: h.log_sd.into(),
            chol: h.chol.into(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitKind {
    /// Zero mean, unit variance and identity correlation.
    Prior,
    /// Per-time sample moments.
    Data,
}

/// Dynamic correlation model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DynamicConfig {
    /// Band width `w`; absent for full Cholesky rows.
    pub band: Option<usize>,
    pub sample_mean: bool,
    pub sample_variance: bool,
    /// Kernel exponent `s`.
    pub s: f64,
    pub nugget: f64,
    pub hyper: HyperSet,
    pub init: InitKind,
    /// Map observation times onto `(0, 1]` before building kernels.
    pub rescale_time: bool,
    pub ess_steps: usize,
    pub centred_ess: bool,
    /// Disable data-parallel likelihood evaluation.
    pub sequential: bool,
}

impl Default for DynamicConfig {
    fn default() -> Self {
        let o = DynamicOptions::default();
        let c = DynamicChainConfig::default();
        Self {
            band: o.band,
            sample_mean: o.sample_mean,
            sample_variance: o.sample_variance,
            s: o.s,
            nugget: o.nugget,
            hyper: HyperSet::default(),
            init: InitKind::Prior,
            rescale_time: true,
            ess_steps: c.ess_steps,
            centred_ess: c.centred_ess,
            sequential: false,
        }
    }
}

/// Command-line values that take precedence over the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub iters: Option<usize>,
    pub burnin: Option<usize>,
    pub thin: Option<usize>,
    pub chains: Option<usize>,
    pub band: Option<usize>,
    pub prior: Option<PriorKind>,
    pub fix_variance: bool,
    pub fix_mean: bool,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::parse(path, e))
    }

    /// Reads `path` if given, otherwise starts from the defaults, then
    /// applies the overrides and validates.
    pub fn resolve(path: Option<&Path>, o: &Overrides) -> CliResult<Self> {
        let mut cfg = match path {
            Some(p) => Self::load(p)?,
            None => Self::default(),
        };
        cfg.apply(o);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(v) = o.seed {
            self.seed = v;
        }
        if let Some(v) = o.iters {
            self.iters = v;
        }
        if let Some(v) = o.burnin {
            self.burnin = v;
        }
        if let Some(v) = o.thin {
            self.thin = v;
        }
        if let Some(v) = o.chains {
            self.chains = v;
        }
        if let Some(v) = o.band {
            self.dynamic.band = Some(v);
        }
        if let Some(v) = o.prior {
            self.static_model.prior = v;
        }
        if o.fix_variance {
            self.dynamic.sample_variance = false;
        }
        if o.fix_mean {
            self.dynamic.sample_mean = false;
        }
    }

    pub fn validate(&self) -> CliResult<()> {
        let bad = |m: String| Err(CliError::InvalidConfig(m));
        if self.iters <= self.burnin {
            return bad(format!(
                "iters ({}) must exceed burnin ({})",
                self.iters, self.burnin
            ));
        }
        if self.thin == 0 || self.chains == 0 {
            return bad("thin and chains must be at least 1".into());
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return bad(format!(
                "target_accept {} must lie in (0, 1)",
                self.target_accept
            ));
        }
        if self.dynamic.band == Some(0) {
            return bad("band must be at least 1".into());
        }
        if !(self.static_model.ks_threshold > 0.0) {
            return bad("ks_threshold must be positive".into());
        }
        Ok(())
    }

    /// Number of retained draws per chain.
    pub fn retained(&self) -> usize {
        (self.iters - self.burnin).div_ceil(self.thin)
    }

    pub fn sph(&self) -> CliResult<SphHmcConfig> {
        Ok(SphHmcConfig::new(
            self.step_size,
            self.max_steps,
            self.stop_rule.into(),
        )?)
    }

    pub fn dynamic_options(&self) -> CliResult<DynamicOptions> {
        let d = &self.dynamic;
        Ok(DynamicOptions {
            hyper: GpHyper {
                mean: d.hyper.mean.build()?,
                log_sd: d.hyper.log_sd.build()?,
                chol: d.hyper.chol.build()?,
            },
            s: d.s,
            band: d.band,
            sample_mean: d.sample_mean,
            sample_variance: d.sample_variance,
            nugget: d.nugget,
        })
    }

    pub fn dynamic_chain(&self) -> CliResult<DynamicChainConfig> {
        Ok(DynamicChainConfig {
            iters: self.iters,
            burnin: self.burnin,
            thin: self.thin,
            sph: self.sph()?,
            target_accept: self.target_accept,
            ess_steps: self.dynamic.ess_steps,
            centred_ess: self.dynamic.centred_ess,
            exec: if self.dynamic.sequential {
                Exec::Sequential
            } else {
                Exec::Parallel
            },
        })
    }

    pub fn static_chain(&self) -> CliResult<StaticChainConfig> {
        let s = &self.static_model;
        Ok(StaticChainConfig {
            iters: self.iters,
            burnin: self.burnin,
            thin: self.thin,
            sph: self.sph()?,
            target_accept: self.target_accept,
            tau_step: s.tau_step,
            tau_leapfrog: s.tau_leapfrog,
            prior_proposals: s.prior_proposals,
        })
    }
}
