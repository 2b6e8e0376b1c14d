//! Statistical models built on the samplers.
//!
//! - [`static_niw`]: normal model with a static covariance, including the
//!   inverse-Wishart conditionals and a direct conjugate sampler.
//! - [`dynamic`]: the dynamic correlation model over a time grid with
//!   GP priors on mean, log standard deviation and Cholesky rows.
//! - [`periodic`]: synthetic periodic processes with known truth.
//! - [`summary`]: pointwise posterior summaries and error curves.

pub mod dynamic;
pub mod periodic;
pub mod static_niw;
pub mod summary;

pub use dynamic::{
    dynamic_loglik_grad_l, mwg_sweep, run_dynamic, run_dynamic_from, BandLayout, ChainState,
    DynamicChainConfig, DynamicCorrModel, DynamicOptions, DynamicSampler, DynamicSamples, GpHyper,
    SweepInfo, TrialTensor,
};
pub use periodic::{generate_periodic, generate_sparse_periodic, PeriodicTruth};
pub use static_niw::{
    iw_conditional_logpriors, iw_direct_posterior, iw_posterior_params, mle_correlation,
    run_static, static_loglik_grad_l, static_loglik_grad_tau, static_loglik_grad_u, InverseWishart,
    IwConditionalTerms, LogNormalSd, StaticChainConfig, StaticGibbs, StaticNiwModel, StaticPrior,
    StaticSamples,
};
pub use summary::{
    frobenius_distance_curve, pointwise_band, summarize_posterior, Band, PosteriorSummary,
    TruthComparison,
};
