//! Importance-sampled estimator of the truncated Neumann series, valid in
//! any dimension.
//!
//! Each series term is an integral over a time simplex and a chain of
//! phase points in which every factor contains a Gaussian transition
//! density. Sampling the times backward with inverse-square-root
//! densities and the chain from the Gaussian factors themselves leaves a
//! bounded weight: the grad-factor singularities (gap^{-1/2} per link)
//! cancel against the time-sampling density, so the estimator has finite
//! variance.

use crate::drift_fields::DriftField;
use crate::error::{Error, Result};
use crate::gaussian_kernel::{grad_log_factor, log_p_parts};
use crate::lie_group::{shift, PhasePoint};
use crate::mat2::Sym2;
use crate::parametrix::{EvalMode, ParametrixConfig};
use crate::rngs;
use rand::Rng;

#[derive(Debug, Clone, Copy)]
pub struct McEval {
    pub estimate: f64,
    pub standard_error: f64,
    /// Set when the standard error exceeds half the estimate.
    pub unreliable: bool,
}

/// Monte Carlo evaluation using the path budget from `config.mode`.
pub fn mc_eval_p(
    field: &DriftField,
    config: &ParametrixConfig,
    s: f64,
    z: &PhasePoint,
    t: f64,
    y: &PhasePoint,
) -> Result<McEval> {
    match config.mode {
        EvalMode::MonteCarlo { paths, seed } => {
            mc_eval_p_with(field, config, s, z, t, y, paths, seed, 0)
        }
        _ => Err(Error::InvalidParameter(
            "mc_eval_p requires EvalMode::MonteCarlo".into(),
        )),
    }
}

/// Monte Carlo evaluation with an explicit budget; `salt` separates
/// independent invocations under one seed.
#[allow(clippy::too_many_arguments)]
pub fn mc_eval_p_with(
    field: &DriftField,
    config: &ParametrixConfig,
    s: f64,
    z: &PhasePoint,
    t: f64,
    y: &PhasePoint,
    paths: usize,
    seed: u64,
    salt: u64,
) -> Result<McEval> {
    if !(s < t) {
        return Err(Error::TimeOrdering { expected: "s < t", s, t });
    }
    if z.dim() != y.dim() {
        return Err(Error::DimensionMismatch(z.dim(), y.dim()));
    }
    let scale = config.convention.scale(config.sigma);
    let base =
        log_p_parts(scale, t - s, &z.x, &z.v, &y.x, &y.v).exp();
    let mut estimate = base;
    let mut var_sum = 0.0;
    for k in 1..=config.depth {
        let weights: Vec<f64> = (0..paths)
            .map(|i| {
                let mut rng =
                    rngs::stream(seed, salt | ((k as u64) << 40) | ((i as u64) << 8));
                term_sample(field, scale, k, s, z, t, y, &mut rng)
            })
            .collect();
        let mean = crate::stats::mean(&weights);
        let se = crate::stats::standard_error(&weights);
        estimate += mean;
        var_sum += se * se;
    }
    let standard_error = var_sum.sqrt();
    Ok(McEval {
        estimate,
        standard_error,
        unreliable: standard_error > 0.5 * estimate.abs().max(1e-300),
    })
}

/// One sample of the k-th term.
#[allow(clippy::too_many_arguments)]
fn term_sample(
    field: &DriftField,
    scale: f64,
    k: usize,
    s: f64,
    z: &PhasePoint,
    t: f64,
    y: &PhasePoint,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> f64 {
    let d = z.dim();
    // Backward stick-breaking of the time simplex with inverse-sqrt
    // densities: tau = upper - range * u^2.
    let mut taus = vec![0.0; k];
    let mut upper = t;
    let mut weight = 1.0;
    for idx in (0..k).rev() {
        let u: f64 = rng.random();
        let range = upper - s;
        let tau = upper - range * u * u;
        weight *= 2.0 * range.sqrt() * (upper - tau).sqrt();
        taus[idx] = tau;
        upper = tau;
    }
    // Chain of Gaussian transitions. The last link samples from the product
    // of the transition Gaussian and the closing Gaussian toward (t, y);
    // the analytic prefactor keeps the estimator's second moment finite,
    // which plain evaluation of the closing density at a sampled point
    // does not.
    let mut cur_t = s;
    let mut cur = z.clone();
    for (idx, &tau) in taus.iter().enumerate() {
        let gap = tau - cur_t;
        if gap <= 0.0 {
            return 0.0;
        }
        let last = idx == k - 1;
        let mean = shift(gap, &cur);
        let mut nxt = PhasePoint { x: vec![0.0; d], v: vec![0.0; d] };
        if last {
            let delta = t - tau;
            let trans = Sym2::kinetic(scale, gap);
            let close = Sym2::kinetic(scale, delta).shear(-delta);
            let mut logpre = 0.0;
            for i in 0..d {
                let m1 = (mean.x[i], mean.v[i]);
                let m2 = (y.x[i] - delta * y.v[i], y.v[i]);
                let (pcov, pm, lp) = Sym2::gaussian_product(&trans, m1, &close, m2);
                logpre += lp;
                let (l11, l21, l22) = pcov.chol();
                let g1 = rngs::normal(rng);
                let g2 = rngs::normal(rng);
                nxt.x[i] = pm.0 + l11 * g1;
                nxt.v[i] = pm.1 + l21 * g1 + l22 * g2;
            }
            if logpre < -740.0 {
                return 0.0;
            }
            weight *= logpre.exp();
        } else {
            let block = Sym2::kinetic(scale, gap);
            let (l11, l21, l22) = block.chol();
            for i in 0..d {
                let g1 = rngs::normal(rng);
                let g2 = rngs::normal(rng);
                nxt.x[i] = mean.x[i] + l11 * g1;
                nxt.v[i] = mean.v[i] + l21 * g1 + l22 * g2;
            }
        }
        if idx >= 1 {
            // leftover of the phi_1 link (tau_{idx-1} -> tau_idx)
            let mut fbuf = vec![0.0; d];
            field.eval_into(cur_t, &cur.x, &cur.v, &mut fbuf);
            let mut dot = 0.0;
            for i in 0..d {
                let w1 = nxt.x[i] - mean.x[i];
                let w2 = nxt.v[i] - mean.v[i];
                dot += fbuf[i] * grad_log_factor(scale, gap, w1, w2);
            }
            weight *= dot;
            if weight == 0.0 {
                return 0.0;
            }
        }
        cur = nxt;
        cur_t = tau;
    }
    // closing leftover: F(tau_k, eta_k) . grad factor toward (t, y)
    let gap = t - cur_t;
    let mut fbuf = vec![0.0; d];
    field.eval_into(cur_t, &cur.x, &cur.v, &mut fbuf);
    let mean = shift(gap, &cur);
    let mut dot = 0.0;
    for i in 0..d {
        let w1 = y.x[i] - mean.x[i];
        let w2 = y.v[i] - mean.v[i];
        dot += fbuf[i] * grad_log_factor(scale, gap, w1, w2);
    }
    weight * dot
}

/// Monte Carlo normalization check: integral of p(s, z; t, y) dy
/// estimated with the driftless kernel as proposal and independent inner
/// estimates per proposal point. Returns (estimate, standard error).
#[allow(clippy::too_many_arguments)]
pub fn mc_normalization_check(
    field: &DriftField,
    config: &ParametrixConfig,
    s: f64,
    z: &PhasePoint,
    t: f64,
    outer: usize,
    inner_paths: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    let ys = crate::gaussian_kernel::sample(
        config.sigma,
        s,
        z,
        t,
        outer,
        seed,
        u64::MAX,
        config.convention,
    )?;
    let scale = config.convention.scale(config.sigma);
    let mut ratios = Vec::with_capacity(outer);
    for (j, y) in ys.iter().enumerate() {
        let prop = log_p_parts(scale, t - s, &z.x, &z.v, &y.x, &y.v).exp();
        let est = mc_eval_p_with(
            field,
            config,
            s,
            z,
            t,
            y,
            inner_paths,
            seed,
            ((j as u64) << 20) | (1u64 << 63),
        )?;
        ratios.push(est.estimate / prop);
    }
    Ok((crate::stats::mean(&ratios), crate::stats::standard_error(&ratios)))
}
