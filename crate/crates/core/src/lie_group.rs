//! Group structure of kinetic space-time.
//!
//! R^{1+2d} carries the group law
//! `(t0,x0,v0) o (t,x,v) = (t0+t, x0+x+t*v0, v0+v)`, the dilations
//! `Phi_r(t,x,v) = (r^2 t, r^3 x, r v)` and the 1-homogeneous gauge
//! `|(t,z)| = |t|^{1/2} + sum |x_i|^{1/3} + sum |v_i|`. The drift flow is
//! `e^{tau B}(x,v) = (x + tau v, v)` and the Lie derivative `Y` is the
//! derivative along its integral curves.

use crate::error::{Error, Result};
use crate::rngs;

/// A point (t, x, v) of kinetic space-time R^{1+2d}.
#[derive(Debug, Clone, PartialEq)]
pub struct SpaceTimePoint {
    pub t: f64,
    pub x: Vec<f64>,
    pub v: Vec<f64>,
}

/// A phase-space point (x, v) of R^{2d}.
#[derive(Debug, Clone, PartialEq)]
pub struct PhasePoint {
    pub x: Vec<f64>,
    pub v: Vec<f64>,
}

impl SpaceTimePoint {
    pub fn new(t: f64, x: Vec<f64>, v: Vec<f64>) -> Result<Self> {
        if x.len() != v.len() {
            return Err(Error::DimensionMismatch(x.len(), v.len()));
        }
        let p = SpaceTimePoint { t, x, v };
        if !p.is_finite() {
            return Err(Error::NonFinite { context: "SpaceTimePoint::new", t, point: p.flat() });
        }
        Ok(p)
    }

    /// Convenience constructor for d = 1.
    pub fn d1(t: f64, x: f64, v: f64) -> Self {
        SpaceTimePoint { t, x: vec![x], v: vec![v] }
    }

    pub fn dim(&self) -> usize {
        self.x.len()
    }

    pub fn identity(d: usize) -> Self {
        SpaceTimePoint { t: 0.0, x: vec![0.0; d], v: vec![0.0; d] }
    }

    pub fn spatial(&self) -> PhasePoint {
        PhasePoint { x: self.x.clone(), v: self.v.clone() }
    }

    fn is_finite(&self) -> bool {
        self.t.is_finite()
            && self.x.iter().all(|c| c.is_finite())
            && self.v.iter().all(|c| c.is_finite())
    }

    fn flat(&self) -> Vec<f64> {
        let mut out = vec![self.t];
        out.extend_from_slice(&self.x);
        out.extend_from_slice(&self.v);
        out
    }
}

impl PhasePoint {
    pub fn new(x: Vec<f64>, v: Vec<f64>) -> Result<Self> {
        if x.len() != v.len() {
            return Err(Error::DimensionMismatch(x.len(), v.len()));
        }
        Ok(PhasePoint { x, v })
    }

    pub fn d1(x: f64, v: f64) -> Self {
        PhasePoint { x: vec![x], v: vec![v] }
    }

    pub fn zero(d: usize) -> Self {
        PhasePoint { x: vec![0.0; d], v: vec![0.0; d] }
    }

    pub fn dim(&self) -> usize {
        self.x.len()
    }

    /// Euclidean norm of (x, v).
    pub fn euclidean_norm(&self) -> f64 {
        let s: f64 =
            self.x.iter().map(|c| c * c).sum::<f64>() + self.v.iter().map(|c| c * c).sum::<f64>();
        s.sqrt()
    }
}

/// Structural constants of the group.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct GroupConstants {
    /// Homogeneous dimension 2 + 4d of R^{1+2d}.
    pub homogeneous_dimension: u32,
    /// Measured quasi-triangle constant k (sampled, not assumed).
    pub quasi_triangle_k: f64,
    /// Measured swap constant: d(a,b) <= k_swap d(b,a).
    pub swap_k: f64,
}

/// Group composition a o b.
pub fn compose(a: &SpaceTimePoint, b: &SpaceTimePoint) -> Result<SpaceTimePoint> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch(a.dim(), b.dim()));
    }
    let d = a.dim();
    let mut x = Vec::with_capacity(d);
    let mut v = Vec::with_capacity(d);
    for i in 0..d {
        x.push(a.x[i] + b.x[i] + b.t * a.v[i]);
        v.push(a.v[i] + b.v[i]);
    }
    Ok(SpaceTimePoint { t: a.t + b.t, x, v })
}

/// Group inverse (t,x,v)^{-1} = (-t, -x + t v, -v).
pub fn inverse(a: &SpaceTimePoint) -> SpaceTimePoint {
    let d = a.dim();
    let mut x = Vec::with_capacity(d);
    let mut v = Vec::with_capacity(d);
    for i in 0..d {
        x.push(-a.x[i] + a.t * a.v[i]);
        v.push(-a.v[i]);
    }
    SpaceTimePoint { t: -a.t, x, v }
}

/// Dilation Phi_r(t,x,v) = (r^2 t, r^3 x, r v).
pub fn dilate(r: f64, a: &SpaceTimePoint) -> Result<SpaceTimePoint> {
    if r <= 0.0 {
        return Err(Error::InvalidParameter(format!("dilation factor must be positive, got {r}")));
    }
    Ok(SpaceTimePoint {
        t: r * r * a.t,
        x: a.x.iter().map(|c| r * r * r * c).collect(),
        v: a.v.iter().map(|c| r * c).collect(),
    })
}

/// Drift flow e^{tau B} z = (x + tau v, v).
pub fn shift(tau: f64, z: &PhasePoint) -> PhasePoint {
    PhasePoint {
        x: z.x.iter().zip(&z.v).map(|(x, v)| x + tau * v).collect(),
        v: z.v.clone(),
    }
}

/// Homogeneous norm |t|^{1/2} + sum |x_i|^{1/3} + sum |v_i|.
pub fn homogeneous_norm(a: &SpaceTimePoint) -> f64 {
    a.t.abs().sqrt() + b_norm_slices(&a.x, &a.v)
}

/// Spatial gauge ||z||_B = sum |x_i|^{1/3} + sum |v_i|.
pub fn b_norm(z: &PhasePoint) -> f64 {
    b_norm_slices(&z.x, &z.v)
}

pub(crate) fn b_norm_slices(x: &[f64], v: &[f64]) -> f64 {
    let sx: f64 = x.iter().map(|c| c.abs().cbrt()).sum();
    let sv: f64 = v.iter().map(|c| c.abs()).sum();
    sx + sv
}

/// Left-invariant quasi-distance d(a; b) = |b^{-1} o a|_K.
pub fn quasi_distance(a: &SpaceTimePoint, b: &SpaceTimePoint) -> Result<f64> {
    Ok(homogeneous_norm(&compose(&inverse(b), a)?))
}

/// Lie derivative of f at p by a central difference along the integral
/// curve s -> (s, x + (s-t) v, v); second-order accurate for C^3 fields.
pub fn lie_derivative_fd<F: Fn(&SpaceTimePoint) -> f64>(
    f: F,
    p: &SpaceTimePoint,
    h: f64,
) -> Result<f64> {
    if h == 0.0 {
        return Err(Error::InvalidParameter("Lie derivative step must be nonzero".into()));
    }
    let fwd = SpaceTimePoint {
        t: p.t + h,
        x: p.x.iter().zip(&p.v).map(|(x, v)| x + h * v).collect(),
        v: p.v.clone(),
    };
    let bwd = SpaceTimePoint {
        t: p.t - h,
        x: p.x.iter().zip(&p.v).map(|(x, v)| x - h * v).collect(),
        v: p.v.clone(),
    };
    let value = (f(&fwd) - f(&bwd)) / (2.0 * h);
    if !value.is_finite() {
        return Err(Error::NonFinite {
            context: "lie_derivative_fd",
            t: p.t,
            point: p.flat(),
        });
    }
    Ok(value)
}

/// Empirical lower bound for the anisotropic Hoelder seminorm
/// sup |f(z2)-f(z1)| / ||z2-z1||_B^alpha over the supplied pairs.
pub fn holder_seminorm_estimate<F: Fn(&PhasePoint) -> f64>(
    f: F,
    pairs: &[(PhasePoint, PhasePoint)],
    alpha: f64,
) -> Result<f64> {
    if !(0.0 < alpha && alpha <= 1.0) {
        return Err(Error::InvalidParameter(format!("alpha must be in (0,1], got {alpha}")));
    }
    let mut best = 0.0f64;
    let mut seen = 0;
    for (z1, z2) in pairs {
        let diff = PhasePoint {
            x: z2.x.iter().zip(&z1.x).map(|(a, b)| a - b).collect(),
            v: z2.v.iter().zip(&z1.v).map(|(a, b)| a - b).collect(),
        };
        let dist = b_norm(&diff);
        if dist == 0.0 {
            continue;
        }
        seen += 1;
        best = best.max((f(z2) - f(z1)).abs() / dist.powf(alpha));
    }
    if seen == 0 {
        return Err(Error::DegenerateSample("all sample pairs coincide".into()));
    }
    Ok(best)
}

/// Measure the quasi-triangle and swap constants of the quasi-distance by
/// sampling random triples in a box of the given radius.
pub fn measure_group_constants(d: usize, samples: usize, radius: f64, seed: u64) -> GroupConstants {
    let mut rng = rngs::stream(seed, 0);
    let point = |rng: &mut rand_chacha::ChaCha8Rng| -> SpaceTimePoint {
        use rand::Rng;
        SpaceTimePoint {
            t: rng.random_range(-radius..radius),
            x: (0..d).map(|_| rng.random_range(-radius..radius)).collect(),
            v: (0..d).map(|_| rng.random_range(-radius..radius)).collect(),
        }
    };
    let mut k_tri = 0.0f64;
    let mut k_swap = 0.0f64;
    for _ in 0..samples {
        let a = point(&mut rng);
        let b = point(&mut rng);
        let c = point(&mut rng);
        let dab = quasi_distance(&a, &b).unwrap();
        let dbc = quasi_distance(&b, &c).unwrap();
        let dac = quasi_distance(&a, &c).unwrap();
        if dab + dbc > 0.0 {
            k_tri = k_tri.max(dac / (dab + dbc));
        }
        let dba = quasi_distance(&b, &a).unwrap();
        if dba > 0.0 {
            k_swap = k_swap.max(dab / dba);
        }
    }
    GroupConstants {
        homogeneous_dimension: 2 + 4 * d as u32,
        quasi_triangle_k: k_tri,
        swap_k: k_swap,
    }
}
