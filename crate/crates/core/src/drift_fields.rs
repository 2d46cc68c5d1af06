//! Drift fields F(t, z) with declared growth and local-Hoelder data, plus
//! empirical validators for the standing assumptions: F is Caratheodory,
//! |F(t,z)| <= C(F)(1 + ||z||_B^beta) with beta in (0,1), and F is locally
//! alpha-Hoelder in the gauge with alpha in (beta, 1].
//!
//! Validators produce empirical lower bounds, never proofs: they can
//! falsify a declaration but not certify it, so pass thresholds carry a
//! few percent of slack.

use crate::error::{Error, Result};
use crate::lie_group::{b_norm, b_norm_slices, PhasePoint};
use crate::rngs;
use rand::Rng;
use std::sync::Arc;

type EvalFn = dyn Fn(f64, &[f64], &[f64], &mut [f64]) + Send + Sync;

#[derive(Clone)]
enum Kind {
    Zero,
    Constant(Vec<f64>),
    Oscillatory { amp: f64, omega: f64 },
    HolderGrowth { c: f64, beta: f64, dir: Vec<f64> },
    Custom(Arc<EvalFn>),
}

/// A drift field together with its declared constants.
#[derive(Clone)]
pub struct DriftField {
    kind: Kind,
    pub name: String,
    pub dim: usize,
    /// Declared growth constant C(F).
    pub growth_c: f64,
    /// Declared growth exponent beta in (0, 1).
    pub growth_beta: f64,
    /// Declared local Hoelder constant (per desk-scale compact).
    pub holder_l: f64,
    /// Declared Hoelder exponent alpha in (beta, 1].
    pub holder_alpha: f64,
    /// Sup norm for bounded fields; None when the field is unbounded.
    pub bounded_sup: Option<f64>,
}

impl std::fmt::Debug for DriftField {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DriftField")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("growth_c", &self.growth_c)
            .field("growth_beta", &self.growth_beta)
            .finish()
    }
}

impl DriftField {
    fn validate(self) -> Result<Self> {
        if !(0.0 < self.growth_beta && self.growth_beta < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "growth exponent beta must lie in (0,1), got {}",
                self.growth_beta
            )));
        }
        if !(self.growth_beta < self.holder_alpha && self.holder_alpha <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "Hoelder exponent alpha must lie in (beta, 1], got alpha={} beta={}",
                self.holder_alpha, self.growth_beta
            )));
        }
        Ok(self)
    }

    pub fn zero(d: usize) -> Self {
        DriftField {
            kind: Kind::Zero,
            name: "zero".into(),
            dim: d,
            growth_c: 1.0,
            growth_beta: 0.5,
            holder_l: 1.0,
            holder_alpha: 1.0,
            bounded_sup: Some(0.0),
        }
    }

    pub fn constant(c: Vec<f64>) -> Self {
        let sup = c.iter().map(|x| x * x).sum::<f64>().sqrt();
        DriftField {
            dim: c.len(),
            kind: Kind::Constant(c),
            name: "constant".into(),
            growth_c: sup.max(1e-9),
            growth_beta: 0.5,
            holder_l: 1.0,
            holder_alpha: 1.0,
            bounded_sup: Some(sup),
        }
    }

    /// Bounded oscillatory field F_i = amp * sin(x_i + v_i + omega t).
    pub fn oscillatory(d: usize, amp: f64, omega: f64) -> Self {
        DriftField {
            kind: Kind::Oscillatory { amp, omega },
            name: "oscillatory".into(),
            dim: d,
            growth_c: amp.abs().max(1e-9) * (d as f64).sqrt(),
            growth_beta: 0.5,
            // |sin a - sin b| <= |a - b| and |dx| <= (2R)^2 ||dz||_B,
            // |dv| <= ||dz||_B on a gauge ball of radius R: desk scale R = 4.
            holder_l: amp.abs() * (d as f64).sqrt() * (1.0 + 64.0),
            holder_alpha: 1.0,
            bounded_sup: Some(amp.abs() * (d as f64).sqrt()),
        }
    }

    /// Unbounded field with gauge growth exponent beta:
    /// F(t, z) = c (1 + ||z||_B)^{beta - 1} ||z||_B * u for a fixed unit
    /// direction u. Globally Lipschitz in the gauge with constant c.
    pub fn holder_growth(d: usize, c: f64, beta: f64, direction_seed: u64) -> Result<Self> {
        let mut rng = rngs::stream(direction_seed, 0);
        let mut dir: Vec<f64> = (0..d).map(|_| rngs::normal(&mut rng)).collect();
        let norm = dir.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            dir = vec![1.0; 1];
        } else {
            dir.iter_mut().for_each(|x| *x /= norm);
        }
        DriftField {
            kind: Kind::HolderGrowth { c, beta, dir },
            name: format!("holder(beta={beta})"),
            dim: d,
            growth_c: c,
            growth_beta: beta,
            holder_l: c,
            holder_alpha: 1.0,
            bounded_sup: None,
        }
        .validate()
    }

    /// Wrap an arbitrary evaluator with declared constants.
    pub fn from_fn(
        name: impl Into<String>,
        d: usize,
        growth_c: f64,
        growth_beta: f64,
        holder_l: f64,
        holder_alpha: f64,
        bounded_sup: Option<f64>,
        f: Arc<EvalFn>,
    ) -> Result<Self> {
        DriftField {
            kind: Kind::Custom(f),
            name: name.into(),
            dim: d,
            growth_c,
            growth_beta,
            holder_l,
            holder_alpha,
            bounded_sup,
        }
        .validate()
    }

    /// Evaluate into a caller-provided buffer (hot path).
    pub fn eval_into(&self, t: f64, x: &[f64], v: &[f64], out: &mut [f64]) {
        match &self.kind {
            Kind::Zero => out.fill(0.0),
            Kind::Constant(c) => out.copy_from_slice(c),
            Kind::Oscillatory { amp, omega } => {
                for i in 0..x.len() {
                    out[i] = amp * (x[i] + v[i] + omega * t).sin();
                }
            }
            Kind::HolderGrowth { c, beta, dir } => {
                let r = b_norm_slices(x, v);
                let mag = c * (1.0 + r).powf(beta - 1.0) * r;
                for i in 0..x.len() {
                    out[i] = mag * dir[i];
                }
            }
            Kind::Custom(f) => f(t, x, v, out),
        }
    }

    /// Evaluate at a phase point, flagging non-finite output.
    pub fn eval(&self, t: f64, z: &PhasePoint) -> Result<Vec<f64>> {
        if t < 0.0 {
            return Err(Error::InvalidParameter(format!("drift evaluated at t = {t} < 0")));
        }
        let mut out = vec![0.0; self.dim];
        self.eval_into(t, &z.x, &z.v, &mut out);
        if out.iter().any(|c| !c.is_finite()) {
            let mut point = z.x.clone();
            point.extend_from_slice(&z.v);
            return Err(Error::NonFinite { context: "drift evaluation", t, point });
        }
        Ok(out)
    }

    /// Euclidean magnitude |F(t, z)|.
    pub fn magnitude(&self, t: f64, z: &PhasePoint) -> f64 {
        let mut out = vec![0.0; self.dim];
        self.eval_into(t, &z.x, &z.v, &mut out);
        out.iter().map(|c| c * c).sum::<f64>().sqrt()
    }
}

/// Outcome of the growth-assumption validator.
#[derive(Debug, Clone, serde::Serialize)]
pub struct GrowthEstimate {
    pub c_hat: f64,
    pub beta_hat: f64,
    pub regression_residual: f64,
    pub pass: bool,
}

/// Sample a phase point with prescribed gauge norm via the spatial dilation
/// (r^3 x, r v).
fn point_on_gauge_sphere(rng: &mut rand_chacha::ChaCha8Rng, d: usize, radius: f64) -> PhasePoint {
    loop {
        let x: Vec<f64> = (0..d).map(|_| rngs::normal(rng)).collect();
        let v: Vec<f64> = (0..d).map(|_| rngs::normal(rng)).collect();
        let n = b_norm_slices(&x, &v);
        if n > 1e-9 {
            let r = radius / n;
            return PhasePoint {
                x: x.iter().map(|c| r * r * r * c).collect(),
                v: v.iter().map(|c| r * c).collect(),
            };
        }
    }
}

/// Log-log regression of max |F| over gauge shells against the shell radius.
/// The validator passes iff the fitted exponent does not exceed the declared
/// beta by more than 0.05 and the growth ratio stays within 1% of C(F).
pub fn estimate_growth(
    field: &DriftField,
    sample_radius: f64,
    n: usize,
    seed: u64,
) -> Result<GrowthEstimate> {
    if n < 100 {
        return Err(Error::InvalidParameter("growth estimation needs n >= 100".into()));
    }
    // Shells below radius 1 only feed the constant estimate; the exponent
    // regression uses the growth regime r >= 1.
    let inner_shells = 8usize;
    let shells = 24usize;
    let per_shell = n / shells;
    let mut log_r = Vec::new();
    let mut log_f = Vec::new();
    let mut c_hat = 0.0f64;
    for k in 0..inner_shells + shells {
        let r = if k < inner_shells {
            1e-6f64.powf(1.0 - k as f64 / inner_shells as f64)
        } else {
            let k = k - inner_shells;
            sample_radius.powf(k as f64 / (shells - 1) as f64)
        };
        let mut max_f = 0.0f64;
        // One stream per (shell, sample index): enlarging n extends the
        // sample set, so the fitted maxima are monotone in n.
        for j in 0..per_shell.max(4) {
            let mut rng = rngs::stream(seed, ((k as u64) << 32) | j as u64);
            let z = point_on_gauge_sphere(&mut rng, field.dim, r);
            let t = rng.random_range(0.0..1.0);
            let mag = field.magnitude(t, &z);
            max_f = max_f.max(mag);
            c_hat = c_hat.max(mag / (1.0 + b_norm(&z).powf(field.growth_beta)));
        }
        if k >= inner_shells && max_f > 0.0 {
            log_r.push(r.ln());
            log_f.push(max_f.ln());
        }
    }
    let (beta_hat, _, resid) = if log_r.len() >= 2 {
        crate::stats::linear_fit(&log_r, &log_f)
    } else {
        (0.0, 0.0, 0.0)
    };
    let pass = beta_hat <= field.growth_beta + 0.05 && c_hat <= field.growth_c * 1.01;
    Ok(GrowthEstimate { c_hat, beta_hat, regression_residual: resid, pass })
}

/// Outcome of the local-Hoelder validator.
#[derive(Debug, Clone, serde::Serialize)]
pub struct HolderEstimate {
    pub l_hat: f64,
    pub alpha: f64,
    pub pairs_used: usize,
}

/// Empirical lower bound for the local Hoelder constant on the gauge ball
/// of the given radius, at the declared exponent.
pub fn estimate_local_holder(
    field: &DriftField,
    compact_radius: f64,
    t_grid: &[f64],
    pair_count: usize,
    seed: u64,
) -> Result<HolderEstimate> {
    if pair_count < 100 {
        return Err(Error::InvalidParameter("Hoelder estimation needs pair_count >= 100".into()));
    }
    let mut rng = rngs::stream(seed, 2);
    let alpha = field.holder_alpha;
    let mut l_hat = 0.0f64;
    let mut used = 0usize;
    for _ in 0..pair_count {
        let r1 = rng.random_range(0.0..compact_radius);
        let r2 = rng.random_range(0.0..compact_radius);
        let z1 = point_on_gauge_sphere(&mut rng, field.dim, r1.max(1e-6));
        let z2 = point_on_gauge_sphere(&mut rng, field.dim, r2.max(1e-6));
        let diff = PhasePoint {
            x: z2.x.iter().zip(&z1.x).map(|(a, b)| a - b).collect(),
            v: z2.v.iter().zip(&z1.v).map(|(a, b)| a - b).collect(),
        };
        let dist = b_norm(&diff);
        if dist == 0.0 {
            continue;
        }
        for &t in t_grid {
            let f1 = field.eval(t, &z1)?;
            let f2 = field.eval(t, &z2)?;
            let dmag =
                f1.iter().zip(&f2).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            l_hat = l_hat.max(dmag / dist.powf(alpha));
        }
        used += 1;
    }
    if used == 0 {
        return Err(Error::DegenerateSample("all sampled pairs coincide".into()));
    }
    Ok(HolderEstimate { l_hat, alpha, pairs_used: used })
}
