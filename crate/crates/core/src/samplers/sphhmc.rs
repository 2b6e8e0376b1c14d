//! Spherical HMC over products of spheres.
//!
//! Each leapfrog step is a half kick along the projected gradient, an exact
//! geodesic rotation on every sphere, and a second half kick. All rows share
//! one trajectory and one accept/reject decision on the summed energy.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::dot;
use crate::sphere::{SpherePoint, SphereProduct, TangentVector};

/// When to stop a trajectory.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopRule {
    /// Stop once `Σ_k ⟨q₀_k, q_τ_k⟩ < 0`.
    TwoOrthants,
    /// Stop with probability `1 − p_τ`, `p_τ = (⟨q₀, q_τ⟩ / Σ r_k² + 1) / 2`.
    Stochastic,
    /// Exactly `T` leapfrog steps.
    FixedT(usize),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SphHmcConfig {
    pub h: f64,
    pub t_max: usize,
    pub stop_rule: StopRule,
}

impl SphHmcConfig {
    pub fn new(h: f64, t_max: usize, stop_rule: StopRule) -> Result<Self> {
        if !(h > 0.0 && h.is_finite()) || t_max == 0 {
            return Err(Error::InvalidParameter(format!(
                "step size {h} must be positive and t_max {t_max} at least 1"
            )));
        }
        Ok(Self {
            h,
            t_max,
            stop_rule,
        })
    }
}

impl Default for SphHmcConfig {
    fn default() -> Self {
        Self {
            h: 0.1,
            t_max: 100,
            stop_rule: StopRule::TwoOrthants,
        }
    }
}

/// A log-density on a product of spheres, with respect to the product of
/// surface measures.
pub trait SphereTarget {
    /// Returns `log p(q)` and writes the ambient gradient `∇ log p(q)` into
    /// `grad` (same flat layout as `q`).
    fn log_density(&self, q: &SphereProduct, grad: &mut [f64]) -> Result<f64>;
}

impl<F> SphereTarget for F
where
    F: Fn(&SphereProduct, &mut [f64]) -> Result<f64>,
{
    fn log_density(&self, q: &SphereProduct, grad: &mut [f64]) -> Result<f64> {
        self(q, grad)
    }
}

/// One point on a trajectory: position, velocity, potential `Ũ = −log p`
/// and its ambient gradient `g = ∇Ũ`.
#[derive(Clone, Debug)]
pub struct TrajectoryPoint {
    pub q: SphereProduct,
    pub v: Vec<f64>,
    pub u: f64,
    pub g: Vec<f64>,
}

impl TrajectoryPoint {
    /// Evaluates the target at `q`; `v` must be tangent.
    pub fn new<T: SphereTarget + ?Sized>(
        q: SphereProduct,
        v: Vec<f64>,
        target: &T,
    ) -> Result<Self> {
        let mut g = vec![0.0; q.total_dim()];
        let logp = target.log_density(&q, &mut g)?;
        g.iter_mut().for_each(|x| *x = -*x);
        if !logp.is_finite() || g.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFiniteGradient);
        }
        Ok(Self { q, v, u: -logp, g })
    }

    /// Total energy `Ũ + ½‖v‖²`.
    pub fn energy(&self) -> f64 {
        self.u + 0.5 * dot(&self.v, &self.v)
    }
}

fn half_kick(q: &SphereProduct, v: &mut [f64], g: &[f64], h: f64) {
    let mut pg = g.to_vec();
    q.project(&mut pg);
    v.iter_mut()
        .zip(&pg)
        .for_each(|(vk, gk)| *vk -= 0.5 * h * gk);
}

/// One geometric leapfrog step from `p`. Returns the new point and the
/// largest row-norm deviation corrected by renormalization.
pub fn leapfrog<T: SphereTarget + ?Sized>(
    p: &TrajectoryPoint,
    h: f64,
    target: &T,
) -> Result<(TrajectoryPoint, f64)> {
    let mut q = p.q.clone();
    let mut v = p.v.clone();
    half_kick(&q, &mut v, &p.g, h);
    let drift = q.rotate(&mut v, h);
    if q.touches_equator() {
        return Err(Error::InvalidSpherePoint(
            "trajectory reached an excluded equator".into(),
        ));
    }
    let mut next = TrajectoryPoint::new(q, Vec::new(), target)?;
    half_kick(&next.q, &mut v, &next.g, h);
    next.v = v;
    Ok((next, drift))
}

/// Single-sphere leapfrog step. `grad_log_p` returns `∇ log p` at a point.
pub fn sphhmc_leapfrog(
    q: &SpherePoint,
    v: &TangentVector,
    h: f64,
    log_p: &dyn Fn(&SpherePoint, &mut [f64]) -> Result<f64>,
) -> Result<(SpherePoint, TangentVector)> {
    let target = |prod: &SphereProduct, g: &mut [f64]| log_p(&prod.point(0), g);
    let prod = SphereProduct::from_points(vec![q.clone()], vec![None])?;
    let start = TrajectoryPoint::new(prod, v.vec().to_vec(), &target)?;
    let (end, _) = leapfrog(&start, h, &target)?;
    let qn = end.q.point(0);
    let vn = TangentVector::new(qn.clone(), end.v)?;
    Ok((qn, vn))
}

/// Energy change over a trajectory `τ = 0..T` computed from positions,
/// velocities and gradients only:
///
/// `ΔE = Ũ_T − Ũ_0 − h²/8 (‖g_T‖²_P − ‖g_0‖²_P) − h/2 (⟨v_0, g_0⟩ + ⟨v_T, g_T⟩)
///       − h Σ_{τ=1}^{T−1} ⟨v_τ, g_τ⟩`,
///
/// where `‖g‖²_P` is the squared norm of the tangent projection.
pub fn sphhmc_accept_delta(trajectory: &[TrajectoryPoint], h: f64) -> f64 {
    let first = &trajectory[0];
    let last = &trajectory[trajectory.len() - 1];
    let mut acc = DeltaAccumulator::start(first);
    for p in &trajectory[1..trajectory.len() - 1] {
        acc.interior(p);
    }
    acc.finish(last, h)
}

/// Running form of [`sphhmc_accept_delta`] that avoids storing trajectories.
struct DeltaAccumulator {
    u0: f64,
    gnorm0: f64,
    vg0: f64,
    interior: f64,
}

impl DeltaAccumulator {
    fn start(p: &TrajectoryPoint) -> Self {
        Self {
            u0: p.u,
            gnorm0: p.q.projected_norm_sq(&p.g),
            vg0: dot(&p.v, &p.g),
            interior: 0.0,
        }
    }

    fn interior(&mut self, p: &TrajectoryPoint) {
        self.interior += dot(&p.v, &p.g);
    }

    fn finish(&self, p: &TrajectoryPoint, h: f64) -> f64 {
        let gnorm = p.q.projected_norm_sq(&p.g);
        p.u - self.u0
            - h * h / 8.0 * (gnorm - self.gnorm0)
            - h / 2.0 * (self.vg0 + dot(&p.v, &p.g))
            - h * self.interior
    }
}

/// `1 ∧ exp(−ΔE)`.
pub fn accept_probability(delta_e: f64) -> f64 {
    if delta_e.is_nan() {
        0.0
    } else {
        (-delta_e).exp().min(1.0)
    }
}

pub fn stop_two_orthants(q0: &SphereProduct, q: &SphereProduct) -> bool {
    q0.inner(q) < 0.0
}

pub fn stop_stochastic<R: Rng + ?Sized>(
    q0: &SphereProduct,
    q: &SphereProduct,
    rng: &mut R,
) -> bool {
    let p = ((q0.inner(q) / q0.radius_sq_sum() + 1.0) / 2.0).clamp(0.0, 1.0);
    !rng.random_bool(p)
}

/// Outcome of one transition.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StepInfo {
    pub accepted: bool,
    /// `1 ∧ exp(−ΔE)`, zero for rejected invalid trajectories.
    pub accept_prob: f64,
    pub n_leapfrog: usize,
    /// The trajectory hit a non-finite gradient or an excluded equator.
    pub invalid: bool,
    /// Largest row-norm correction applied along the trajectory.
    pub max_norm_drift: f64,
    /// The reversed trajectory would not stop at the same length.
    pub asymmetric: bool,
}

/// Draws `v ~ N(0, I)` and projects each row onto its tangent space.
pub fn refresh_velocity<R: Rng + ?Sized>(q: &SphereProduct, rng: &mut R) -> Vec<f64> {
    let mut v: Vec<f64> = (0..q.total_dim())
        .map(|_| rng.sample(StandardNormal))
        .collect();
    q.project(&mut v);
    v
}

/// One Δ-spherical HMC transition on the whole product. On rejection `q`
/// is left untouched.
///
/// With an adaptive stop rule the trajectory length depends on the path, so
/// the acceptance ratio includes the probability that the reversed
/// trajectory, started from the end point, stops at the same length. For
/// [`StopRule::TwoOrthants`] that probability is 0 or 1.
pub fn delta_sphhmc_step<T, R>(
    q: &mut SphereProduct,
    target: &T,
    cfg: &SphHmcConfig,
    rng: &mut R,
) -> Result<StepInfo>
where
    T: SphereTarget + ?Sized,
    R: Rng + ?Sized,
{
    let v = refresh_velocity(q, rng);
    let start = TrajectoryPoint::new(q.clone(), v, target)?;
    let mut acc = DeltaAccumulator::start(&start);
    let mut info = StepInfo::default();
    let max_steps = match cfg.stop_rule {
        StopRule::FixedT(t) => t.max(1),
        _ => cfg.t_max,
    };
    let adaptive = !matches!(cfg.stop_rule, StopRule::FixedT(_));
    let r2 = q.radius_sq_sum();
    let keep_prob = |a: &[f64], b: &[f64]| ((dot(a, b) / r2 + 1.0) / 2.0).clamp(0.0, 1.0);
    let mut path: Vec<Vec<f64>> = Vec::new();
    if adaptive {
        path.push(q.coords().to_vec());
    }
    let mut log_fwd = 0.0;
    let mut cur = start;
    let mut prev_interior: Option<f64> = None;
    let mut stopped = false;
    for tau in 1..=max_steps {
        let next = match leapfrog(&cur, cfg.h, target) {
            Ok((p, drift)) => {
                info.max_norm_drift = info.max_norm_drift.max(drift);
                p
            }
            Err(
                e @ (Error::NonFiniteGradient
                | Error::InvalidSpherePoint(_)
                | Error::ZeroDiagonal(_)),
            ) => {
                log::debug!("rejecting trajectory at step {tau}: {e}");
                info.invalid = true;
                info.n_leapfrog = tau;
                return Ok(info);
            }
            Err(e) => return Err(e),
        };
        if let Some(x) = prev_interior.take() {
            acc.interior += x;
        }
        info.n_leapfrog = tau;
        if adaptive {
            path.push(next.q.coords().to_vec());
        }
        if tau < max_steps {
            stopped = match cfg.stop_rule {
                StopRule::TwoOrthants => stop_two_orthants(q, &next.q),
                StopRule::Stochastic => {
                    let p = keep_prob(q.coords(), next.q.coords());
                    let stop = !rng.random_bool(p);
                    log_fwd += if stop { (1.0 - p).ln() } else { p.ln() };
                    stop
                }
                StopRule::FixedT(_) => false,
            };
        }
        prev_interior = Some(dot(&next.v, &next.g));
        cur = next;
        if stopped {
            break;
        }
    }
    let delta = acc.finish(&cur, cfg.h);
    let log_ratio = if adaptive {
        let t = path.len() - 1;
        let end = &path[t];
        match cfg.stop_rule {
            StopRule::TwoOrthants => {
                let symmetric = (1..t).all(|j| dot(end, &path[j]) >= 0.0);
                info.asymmetric = !symmetric;
                if symmetric {
                    0.0
                } else {
                    f64::NEG_INFINITY
                }
            }
            _ => {
                let mut log_rev: f64 = (1..t).map(|j| keep_prob(end, &path[j]).ln()).sum();
                if stopped {
                    log_rev += (1.0 - keep_prob(end, &path[0])).ln();
                }
                log_rev - log_fwd
            }
        }
    } else {
        0.0
    };
    info.accept_prob = if log_ratio == f64::NEG_INFINITY {
        0.0
    } else {
        accept_probability(delta - log_ratio)
    };
    if rng.random::<f64>() < info.accept_prob {
        info.accepted = true;
        *q = cur.q;
    }
    Ok(info)
}

/// Doubles or halves a starting step size until the one-step acceptance
/// probability crosses ½.
pub fn find_reasonable_step<T, R>(
    q: &SphereProduct,
    target: &T,
    h0: f64,
    rng: &mut R,
) -> Result<f64>
where
    T: SphereTarget + ?Sized,
    R: Rng + ?Sized,
{
    let one_step = |h: f64, rng: &mut R| -> Result<f64> {
        let v = refresh_velocity(q, rng);
        let start = TrajectoryPoint::new(q.clone(), v, target)?;
        Ok(match leapfrog(&start, h, target) {
            Ok((end, _)) => accept_probability(end.energy() - start.energy()),
            Err(
                Error::NonFiniteGradient | Error::InvalidSpherePoint(_) | Error::ZeroDiagonal(_),
            ) => 0.0,
            Err(e) => return Err(e),
        })
    };
    let mut h = h0;
    let up = one_step(h, rng)? > 0.5;
    for _ in 0..50 {
        let a = one_step(h, rng)?;
        if up && (a <= 0.5 || h >= std::f64::consts::PI) {
            break;
        }
        if !up && a > 0.5 {
            break;
        }
        h = if up { h * 2.0 } else { h / 2.0 };
    }
    Ok(h.min(std::f64::consts::PI))
}
