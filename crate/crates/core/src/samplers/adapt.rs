//! Dual-averaging step-size adaptation.

use rand::Rng;

use crate::error::Result;
use crate::sphere::SphereProduct;

use super::sphhmc::{
    delta_sphhmc_step, find_reasonable_step, SphHmcConfig, SphereTarget, StepInfo,
};

pub const DA_GAMMA: f64 = 0.05;
pub const DA_N0: f64 = 10.0;
pub const DA_KAPPA: f64 = 0.75;
pub const DEFAULT_TARGET_ACCEPT: f64 = 0.7;

#[derive(Clone, Debug, PartialEq)]
pub struct DualAvgState {
    pub mu: f64,
    pub h: f64,
    pub h_bar: f64,
    pub a_bar: f64,
    pub n: u64,
    pub gamma: f64,
    pub n0: f64,
    pub kappa: f64,
    pub target: f64,
}

impl DualAvgState {
    /// Starts the recursion from an initial step size `h0`.
    pub fn new(h0: f64, target: f64) -> Self {
        Self {
            mu: (10.0 * h0).ln(),
            h: h0,
            h_bar: 1.0,
            a_bar: 0.0,
            n: 0,
            gamma: DA_GAMMA,
            n0: DA_N0,
            kappa: DA_KAPPA,
            target,
        }
    }
}

/// Feeds the acceptance statistic of iteration `n` into the recursion and
/// returns the next step size.
pub fn dual_averaging_update(state: &mut DualAvgState, accept: f64) -> f64 {
    state.n += 1;
    let n = state.n as f64;
    let w = 1.0 / (n + state.n0);
    state.a_bar = (1.0 - w) * state.a_bar + w * (state.target - accept);
    let log_h = state.mu - n.sqrt() / state.gamma * state.a_bar;
    let eta = n.powf(-state.kappa);
    let log_h_bar = eta * log_h + (1.0 - eta) * state.h_bar.ln();
    state.h = log_h.exp();
    state.h_bar = log_h_bar.exp();
    state.h
}

/// Δ-spherical HMC that adapts its step size for a fixed number of
/// transitions and then freezes it at the averaged value `h̄`.
#[derive(Clone, Debug)]
pub struct AdaptiveSphHmc {
    pub cfg: SphHmcConfig,
    pub state: DualAvgState,
    pub adapt_steps: u64,
    steps: u64,
    accepted: u64,
    invalid: u64,
}

impl AdaptiveSphHmc {
    pub fn new(cfg: SphHmcConfig, target_accept: f64, adapt_steps: u64) -> Self {
        Self {
            cfg,
            state: DualAvgState::new(cfg.h, target_accept),
            adapt_steps,
            steps: 0,
            accepted: 0,
            invalid: 0,
        }
    }

    /// Replaces the initial step size with one found by doubling/halving and
    /// restarts the recursion from it.
    pub fn initialize<T, R>(&mut self, q: &SphereProduct, target: &T, rng: &mut R) -> Result<()>
    where
        T: SphereTarget + ?Sized,
        R: Rng + ?Sized,
    {
        let h0 = find_reasonable_step(q, target, self.cfg.h, rng)?;
        self.cfg.h = h0;
        self.state = DualAvgState::new(h0, self.state.target);
        Ok(())
    }

    pub fn step<T, R>(&mut self, q: &mut SphereProduct, target: &T, rng: &mut R) -> Result<StepInfo>
    where
        T: SphereTarget + ?Sized,
        R: Rng + ?Sized,
    {
        let info = delta_sphhmc_step(q, target, &self.cfg, rng)?;
        self.steps += 1;
        self.accepted += info.accepted as u64;
        self.invalid += info.invalid as u64;
        if self.steps <= self.adapt_steps {
            let h = dual_averaging_update(&mut self.state, info.accept_prob);
            self.cfg.h = if self.steps == self.adapt_steps {
                self.state.h_bar
            } else {
                h
            };
        }
        Ok(info)
    }

    pub fn is_adapting(&self) -> bool {
        self.steps < self.adapt_steps
    }

    pub fn step_size(&self) -> f64 {
        self.cfg.h
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn acceptance_rate(&self) -> f64 {
        if self.steps == 0 {
            0.0
        } else {
            self.accepted as f64 / self.steps as f64
        }
    }

    /// Number of trajectories rejected for non-finite gradients or equator
    /// crossings.
    pub fn invalid_count(&self) -> u64 {
        self.invalid
    }
}
