//! Wasserstein-1 estimators for empirical measures and the
//! narrow-convergence check of the kernel toward its terminal Dirac mass.
//!
//! No exact transport solver in dimension 2d: the order-statistics
//! formula settles the 1-D case and sliced averages over random
//! directions give the surrogate the acceptance checks need (the W_1
//! topology enters the theory qualitatively, never quantitatively).

use crate::error::{Error, Result};
use crate::langevin_sim::EmpiricalFlow;
use crate::lie_group::PhasePoint;
use crate::rngs;
use serde::Serialize;

/// A W_1 estimate with its method tag.
#[derive(Debug, Clone, Serialize)]
pub struct W1Estimate {
    pub value: f64,
    pub method: String,
    /// Standard error over directions (sliced estimates only).
    pub se: Option<f64>,
}

/// Exact 1-D W_1 of two equal-size samples: mean absolute difference of
/// the order statistics. Unequal sizes are index-resampled first.
pub fn w1_1d(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::DegenerateSample("empty sample in w1_1d".into()));
    }
    let mut xs = a.to_vec();
    let mut ys = b.to_vec();
    xs.sort_by(|p, q| p.partial_cmp(q).unwrap());
    ys.sort_by(|p, q| p.partial_cmp(q).unwrap());
    let n = xs.len().max(ys.len());
    let pick = |v: &[f64], i: usize| v[(i * v.len()) / n];
    let mut acc = 0.0;
    for i in 0..n {
        acc += (pick(&xs, i) - pick(&ys, i)).abs();
    }
    Ok(acc / n as f64)
}

/// Uniform random direction on the sphere of R^{2d}.
fn random_direction(rng: &mut rand_chacha::ChaCha8Rng, dim2: usize) -> Vec<f64> {
    loop {
        let u: Vec<f64> = (0..dim2).map(|_| rngs::normal(rng)).collect();
        let n = u.iter().map(|c| c * c).sum::<f64>().sqrt();
        if n > 1e-9 {
            return u.iter().map(|c| c / n).collect();
        }
    }
}

fn project(cloud: &[PhasePoint], u: &[f64]) -> Vec<f64> {
    cloud
        .iter()
        .map(|z| {
            let d = z.dim();
            let mut acc = 0.0;
            for i in 0..d {
                acc += z.x[i] * u[i] + z.v[i] * u[d + i];
            }
            acc
        })
        .collect()
}

/// Sliced W_1: average of the 1-D distances over k random directions.
/// Deterministic for a fixed seed; a lower-bound surrogate up to the
/// directional constant (for point masses it never exceeds |z1 - z2|).
pub fn w1_sliced(a: &[PhasePoint], b: &[PhasePoint], k: usize, seed: u64) -> Result<W1Estimate> {
    if k == 0 {
        return Err(Error::InvalidParameter("sliced W1 needs k >= 1 directions".into()));
    }
    if a.is_empty() || b.is_empty() {
        return Err(Error::DegenerateSample("empty cloud in w1_sliced".into()));
    }
    let dim2 = 2 * a[0].dim();
    let mut rng = rngs::stream(seed, 3);
    let vals: Vec<f64> = (0..k)
        .map(|_| {
            let u = random_direction(&mut rng, dim2);
            w1_1d(&project(a, &u), &project(b, &u))
        })
        .collect::<Result<_>>()?;
    let value = crate::stats::mean(&vals);
    let se = if k >= 2 { Some(crate::stats::standard_error(&vals)) } else { None };
    Ok(W1Estimate { value, method: format!("sliced({k})"), se })
}

/// max over adjacent stored times of W1(mu_i, mu_{i+1}) / sqrt(dt):
/// continuity-in-W1 evidence for the flow.
pub fn flow_continuity_modulus(flow: &EmpiricalFlow, k: usize, seed: u64) -> Result<f64> {
    if flow.times.len() < 2 {
        return Err(Error::InvalidParameter("flow needs at least two times".into()));
    }
    let mut modulus = 0.0f64;
    for ti in 0..flow.times.len() - 1 {
        let a: Vec<PhasePoint> = (0..flow.samples(ti)).map(|p| flow.point(ti, p)).collect();
        let b: Vec<PhasePoint> =
            (0..flow.samples(ti + 1)).map(|p| flow.point(ti + 1, p)).collect();
        let w = w1_sliced(&a, &b, k, seed)?.value;
        let dt = flow.times[ti + 1] - flow.times[ti];
        modulus = modulus.max(w / dt.sqrt());
    }
    Ok(modulus)
}

/// One row of the narrow-convergence table.
#[derive(Debug, Clone, Serialize)]
pub struct NarrowRow {
    pub gap: f64,
    pub difference: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct NarrowReport {
    pub test_function: String,
    pub rows: Vec<NarrowRow>,
    pub decreasing: bool,
    pub final_below: bool,
}

/// Narrow convergence of p(s, z; t, .) toward the Dirac mass at y as
/// (s, z) -> (t, y) along the drift flow: the caller supplies the
/// integral of the kernel against a test function for a given source.
pub fn narrow_delta_check(
    integrate: &dyn Fn(f64, &PhasePoint, &dyn Fn(&PhasePoint) -> f64) -> Result<f64>,
    t: f64,
    y: &PhasePoint,
    test_function: (&str, &dyn Fn(&PhasePoint) -> f64),
    gaps: &[f64],
    threshold: f64,
) -> Result<NarrowReport> {
    let (name, g) = test_function;
    let target = g(y);
    let mut rows = Vec::with_capacity(gaps.len());
    for &gap in gaps {
        let s = t - gap;
        let z = crate::lie_group::shift(-gap, y);
        let integral = integrate(s, &z, g)?;
        rows.push(NarrowRow { gap, difference: (integral - target).abs() });
    }
    let decreasing = rows.windows(2).all(|w| w[1].difference <= w[0].difference + 1e-12);
    let final_below = rows.last().map(|r| r.difference <= threshold).unwrap_or(false);
    Ok(NarrowReport {
        test_function: name.to_string(),
        rows,
        decreasing,
        final_below,
    })
}
