//! Euclidean HMC with an identity mass matrix.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::dot;

fn eval<F>(target: &F, q: &[f64], g: &mut [f64]) -> Result<f64>
where
    F: Fn(&[f64], &mut [f64]) -> Result<f64>,
{
    let lp = target(q, g)?;
    if !lp.is_finite() || g.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFiniteGradient);
    }
    Ok(lp)
}

/// `T` leapfrog steps of size `h` on `(q, p)`; `target` returns `log π` and
/// writes `∇ log π`. Returns the final log-density and gradient.
pub fn leapfrog<F>(
    q: &mut [f64],
    p: &mut [f64],
    h: f64,
    steps: usize,
    target: &F,
) -> Result<(f64, Vec<f64>)>
where
    F: Fn(&[f64], &mut [f64]) -> Result<f64>,
{
    let mut g = vec![0.0; q.len()];
    let mut lp = eval(target, q, &mut g)?;
    for _ in 0..steps {
        p.iter_mut()
            .zip(&g)
            .for_each(|(pk, gk)| *pk += 0.5 * h * gk);
        q.iter_mut()
            .zip(p.iter())
            .for_each(|(qk, pk)| *qk += h * pk);
        lp = eval(target, q, &mut g)?;
        p.iter_mut()
            .zip(&g)
            .for_each(|(pk, gk)| *pk += 0.5 * h * gk);
    }
    Ok((lp, g))
}

/// One HMC transition. Non-finite densities or gradients along the
/// trajectory reject the move. Returns whether the move was accepted.
pub fn hmc_step_euclidean<F, R>(
    q: &mut Vec<f64>,
    target: &F,
    h: f64,
    steps: usize,
    rng: &mut R,
) -> Result<bool>
where
    F: Fn(&[f64], &mut [f64]) -> Result<f64>,
    R: Rng + ?Sized,
{
    let mut g = vec![0.0; q.len()];
    let lp0 = eval(target, q, &mut g)?;
    let mut p: Vec<f64> = (0..q.len()).map(|_| rng.sample(StandardNormal)).collect();
    let h0 = lp0 - 0.5 * dot(&p, &p);
    let mut qn = q.clone();
    let lp1 = match leapfrog(&mut qn, &mut p, h, steps, target) {
        Ok((lp, _)) => lp,
        Err(Error::NonFiniteGradient) => {
            log::debug!("HMC trajectory hit a non-finite gradient");
            return Ok(false);
        }
        Err(e) => return Err(e),
    };
    let h1 = lp1 - 0.5 * dot(&p, &p);
    if rng.random::<f64>().ln() < h1 - h0 {
        *q = qn;
        Ok(true)
    } else {
        Ok(false)
    }
}
