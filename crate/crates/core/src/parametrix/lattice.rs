//! Level-lattice evaluation of the Neumann series (d = 1).
//!
//! Iterated Volterra kernels are stored on time levels clustered like
//! theta^2 toward the anchor (theta equispaced), each level carrying a
//! tensor grid in the whitened coordinates of a reference Gaussian
//! envelope. Stored values are ratios to the envelope, which stay O(1)
//! and smooth, so a coarse grid plus cubic interpolation reproduces the
//! iterates; the square-root time singularities are absorbed
//! analytically by the sin^2 substitution in every time integral and by
//! a sqrt(gap) rescaling of the stored backward fields.
//!
//! Space integrals put Gauss-Hermite nodes on the closed-form product of
//! the two Gaussian factors present in every integrand (the importance
//! center of the left Gaussian shifted by the right one), leaving only
//! O(1) smooth factors to the quadrature.

use crate::drift_fields::DriftField;
use crate::error::{Error, Result};
use crate::gaussian_kernel::{grad_log_factor, log_p_parts, CovarianceConvention};
use crate::lie_group::PhasePoint;
use crate::mat2::{Sym2, LN_2PI};
use crate::parametrix::ParametrixConfig;
use crate::quadrature::{GaussHermite, GaussLegendre};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Resolution of the level lattice.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LatticeParams {
    /// Number of time levels J (even).
    pub levels: usize,
    /// Grid points per whitened axis (odd).
    pub grid_points: usize,
    /// Half-width L of the whitened grid.
    pub halfwidth: f64,
    /// Envelope covariance widening over the kernel covariance.
    pub widen: f64,
    /// Gauss-Legendre nodes for the sin^2-substituted time integrals.
    pub inner_time_order: usize,
    /// Gauss-Hermite nodes per axis on the product Gaussian.
    pub inner_space_order: usize,
}

impl Default for LatticeParams {
    fn default() -> Self {
        LatticeParams {
            levels: 16,
            grid_points: 43,
            halfwidth: 7.0,
            widen: 1.5,
            inner_time_order: 12,
            inner_space_order: 10,
        }
    }
}

impl LatticeParams {
    /// Cheaper profile for residual stencils and subsampled averages.
    pub fn coarse() -> Self {
        LatticeParams {
            levels: 10,
            grid_points: 31,
            halfwidth: 6.5,
            widen: 1.5,
            inner_time_order: 8,
            inner_space_order: 8,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.levels < 4 || self.levels % 2 != 0 {
            return Err(Error::InvalidParameter("lattice levels must be even and >= 4".into()));
        }
        if self.grid_points < 9 || self.grid_points % 2 == 0 {
            return Err(Error::InvalidParameter("grid_points must be odd and >= 9".into()));
        }
        if self.widen <= 1.05 {
            return Err(Error::InvalidParameter("envelope widen factor must exceed 1.05".into()));
        }
        if self.inner_time_order < 2 || self.inner_space_order < 2 {
            return Err(Error::InvalidParameter("inner quadrature orders must be >= 2".into()));
        }
        Ok(())
    }
}

/// Whitening frame of one level: mean, Cholesky factor and normalization
/// of the envelope Gaussian.
#[derive(Debug, Clone, Copy)]
struct Frame {
    tau: f64,
    gap: f64,
    mx: f64,
    mv: f64,
    l11: f64,
    l21: f64,
    l22: f64,
    log_norm: f64,
}

impl Frame {
    fn new(tau: f64, gap: f64, mean: (f64, f64), cov: Sym2) -> Frame {
        let (l11, l21, l22) = cov.chol();
        Frame {
            tau,
            gap,
            mx: mean.0,
            mv: mean.1,
            l11,
            l21,
            l22,
            log_norm: -(LN_2PI + 0.5 * cov.det().ln()),
        }
    }

    fn whiten(&self, x: f64, v: f64) -> (f64, f64) {
        let u1 = (x - self.mx) / self.l11;
        let u2 = ((v - self.mv) - self.l21 * u1) / self.l22;
        (u1, u2)
    }

    fn unwhiten(&self, u1: f64, u2: f64) -> (f64, f64) {
        (self.mx + self.l11 * u1, self.mv + self.l21 * u1 + self.l22 * u2)
    }
}

fn cr_weights(t: f64) -> [f64; 4] {
    let t2 = t * t;
    let t3 = t2 * t;
    [
        -0.5 * t3 + t2 - 0.5 * t,
        1.5 * t3 - 2.5 * t2 + 1.0,
        -1.5 * t3 + 2.0 * t2 + 0.5 * t,
        0.5 * t3 - 0.5 * t2,
    ]
}

/// Catmull-Rom interpolation on an n x n grid given fractional
/// coordinates; indices clamp at the border where the fields vanish.
fn interp2(vals: &[f64], n: usize, a: f64, b: f64) -> f64 {
    let ia = a.floor() as isize;
    let ib = b.floor() as isize;
    let wa = cr_weights(a - ia as f64);
    let wb = cr_weights(b - ib as f64);
    let clamp = |i: isize| i.clamp(0, n as isize - 1) as usize;
    let mut acc = 0.0;
    for (da, wai) in wa.iter().enumerate() {
        let row = clamp(ia - 1 + da as isize) * n;
        let mut racc = 0.0;
        for (db, wbi) in wb.iter().enumerate() {
            racc += wbi * vals[row + clamp(ib - 1 + db as isize)];
        }
        acc += wai * racc;
    }
    acc
}

fn simpson_axis(n: usize, h: f64) -> Vec<f64> {
    let mut w = vec![0.0; n];
    for (i, wi) in w.iter_mut().enumerate() {
        *wi = if i == 0 || i == n - 1 {
            1.0
        } else if i % 2 == 1 {
            4.0
        } else {
            2.0
        } * h
            / 3.0;
    }
    w
}

fn require_d1(z: &PhasePoint) -> Result<(f64, f64)> {
    if z.dim() != 1 {
        return Err(Error::InvalidParameter(
            "tensor-quadrature parametrix evaluation requires d = 1".into(),
        ));
    }
    Ok((z.x[0], z.v[0]))
}

struct LatticeCore {
    params: LatticeParams,
    sigma: f64,
    scale: f64,
    ref_scale: f64,
    convention: CovarianceConvention,
    axis: Vec<f64>,
    step: f64,
    gl: GaussLegendre,
    gh: GaussHermite,
}

impl LatticeCore {
    fn new(config: &ParametrixConfig) -> Result<LatticeCore> {
        let params = config.lattice;
        params.validate()?;
        let n = params.grid_points;
        let step = 2.0 * params.halfwidth / (n - 1) as f64;
        let axis = (0..n).map(|i| -params.halfwidth + step * i as f64).collect();
        Ok(LatticeCore {
            params,
            sigma: config.sigma,
            scale: config.convention.scale(config.sigma),
            ref_scale: config.convention.scale(config.sigma) * params.widen,
            convention: config.convention,
            axis,
            step,
            gl: GaussLegendre::new(params.inner_time_order),
            gh: GaussHermite::new(params.inner_space_order),
        })
    }

    fn grid_coord(&self, u: f64) -> f64 {
        (u + self.params.halfwidth) / self.step
    }

    fn read(&self, vals: &[f64], frame: &Frame, x: f64, v: f64) -> f64 {
        let (u1, u2) = frame.whiten(x, v);
        let l = self.params.halfwidth;
        if u1.abs() > l || u2.abs() > l {
            return 0.0;
        }
        interp2(vals, self.params.grid_points, self.grid_coord(u1), self.grid_coord(u2))
    }

    /// Interpolate a stored ratio field across levels at (tau, x, v);
    /// theta is the sqrt-time coordinate of the query in [0, 1].
    fn read_field(&self, levels: &[Vec<f64>], frames: &[Frame], theta: f64, x: f64, v: f64) -> f64 {
        let j_count = frames.len();
        let pos = theta.clamp(0.0, 1.0) * j_count as f64;
        let j1 = pos.floor() as usize;
        if j1 == 0 {
            // fields vanish like theta at the anchor
            let v1 = self.read(&levels[0], &frames[0], x, v);
            return pos * v1;
        }
        if j1 >= j_count {
            return self.read(&levels[j_count - 1], &frames[j_count - 1], x, v);
        }
        let frac = pos - j1 as f64;
        let va = self.read(&levels[j1 - 1], &frames[j1 - 1], x, v);
        let vb = self.read(&levels[j1], &frames[j1], x, v);
        (1.0 - frac) * va + frac * vb
    }
}

/// Forward-anchored solution: the series with source (s0, z0) fixed,
/// evaluable at any (t, y) up to the configured horizon.
pub struct ForwardSolution {
    core: LatticeCore,
    field: DriftField,
    depth: usize,
    s0: f64,
    z0: (f64, f64),
    top: f64,
    span: f64,
    frames: Vec<Frame>,
    /// fields[k-1][j-1] = ratio grid of the k-th iterate at level j.
    fields: Vec<Vec<Vec<f64>>>,
}

impl ForwardSolution {
    /// Build the lattice for source (s0, z0) with evaluation horizon `top`.
    pub fn build(
        field: &DriftField,
        config: &ParametrixConfig,
        s0: f64,
        z0: &PhasePoint,
        top: f64,
    ) -> Result<ForwardSolution> {
        if !(s0 < top) {
            return Err(Error::TimeOrdering { expected: "s0 < top", s: s0, t: top });
        }
        let z0 = require_d1(z0)?;
        let core = LatticeCore::new(config)?;
        let span = top - s0;
        let j_count = core.params.levels;
        let mut frames = Vec::with_capacity(j_count);
        for j in 1..=j_count {
            let theta = j as f64 / j_count as f64;
            let gap = span * theta * theta;
            let mean = (z0.0 + gap * z0.1, z0.1);
            frames.push(Frame::new(s0 + gap, gap, mean, Sym2::kinetic(core.ref_scale, gap)));
        }
        let mut sol = ForwardSolution {
            core,
            field: field.clone(),
            depth: config.depth,
            s0,
            z0,
            top,
            span,
            frames,
            fields: Vec::new(),
        };
        for k in 1..=config.depth {
            let mut levels = Vec::with_capacity(j_count);
            for j in 0..j_count {
                let frame = sol.frames[j];
                let n = sol.core.params.grid_points;
                let vals: Vec<f64> = (0..n * n)
                    .into_par_iter()
                    .map(|idx| {
                        let (iu, iv) = (idx / n, idx % n);
                        let (x, v) = frame.unwhiten(sol.core.axis[iu], sol.core.axis[iv]);
                        let g = sol.apply(k - 1, frame.tau, x, v);
                        let u1 = sol.core.axis[iu];
                        let u2 = sol.core.axis[iv];
                        let log_env = frame.log_norm - 0.5 * (u1 * u1 + u2 * u2);
                        g * (-log_env).exp()
                    })
                    .collect();
                levels.push(vals);
            }
            sol.fields.push(levels);
        }
        Ok(sol)
    }

    /// One Volterra application: integral over (tau, eta) of
    /// g_{k_prev}(tau, eta) * phi_1(tau, eta; t_prime, y').
    fn apply(&self, k_prev: usize, t_prime: f64, yx: f64, yv: f64) -> f64 {
        let core = &self.core;
        let span_here = t_prime - self.s0;
        let mut total = 0.0;
        let mut fbuf = [0.0f64; 1];
        for (chi, wchi) in core.gl.mapped(0.0, std::f64::consts::FRAC_PI_2) {
            let (sin, cos) = chi.sin_cos();
            let tau = self.s0 + span_here * sin * sin;
            let gap_left = tau - self.s0;
            let delta = t_prime - tau;
            if gap_left <= 1e-9 * span_here || delta <= 1e-9 * span_here {
                continue;
            }
            let jac = span_here * 2.0 * sin * cos;
            // left Gaussian: the exact kernel for k_prev = 0, else the envelope
            let left_scale = if k_prev == 0 { core.scale } else { core.ref_scale };
            let lcov = Sym2::kinetic(left_scale, gap_left);
            let lm = (self.z0.0 + gap_left * self.z0.1, self.z0.1);
            // right Gaussian: P^sigma(tau, .; t', y') as a function of eta
            let rcov = Sym2::kinetic(core.scale, delta).shear(-delta);
            let rm = (yx - delta * yv, yv);
            let (pcov, pm, logpre) = Sym2::gaussian_product(&lcov, lm, &rcov, rm);
            if logpre < -740.0 {
                continue;
            }
            let (l11, l21, l22) = pcov.chol();
            let pre = logpre.exp();
            let theta_tau = (gap_left / self.span).sqrt();
            let mut inner = 0.0;
            for (g1, w1) in core.gh.nodes.iter().zip(&core.gh.weights) {
                for (g2, w2) in core.gh.nodes.iter().zip(&core.gh.weights) {
                    let ex = pm.0 + l11 * g1;
                    let ev = pm.1 + l21 * g1 + l22 * g2;
                    let left = if k_prev == 0 {
                        1.0
                    } else {
                        core.read_field(
                            &self.fields[k_prev - 1],
                            &self.frames,
                            theta_tau,
                            ex,
                            ev,
                        )
                    };
                    if left == 0.0 {
                        continue;
                    }
                    self.field.eval_into(tau, &[ex], &[ev], &mut fbuf);
                    let w1c = yx - (ex + delta * ev);
                    let w2c = yv - ev;
                    let gf = grad_log_factor(core.scale, delta, w1c, w2c);
                    inner += w1 * w2 * left * fbuf[0] * gf;
                }
            }
            total += wchi * jac * pre * inner;
        }
        total
    }

    /// k-th correction term g_k(t, y), 1 <= k <= depth.
    pub fn term(&self, k: usize, t: f64, y: &PhasePoint) -> Result<f64> {
        if k == 0 || k > self.depth {
            return Err(Error::InvalidParameter(format!("term index {k} out of range")));
        }
        let (yx, yv) = require_d1(y)?;
        let gap = t - self.s0;
        if !(gap > 0.0 && t <= self.top + 1e-12) {
            return Err(Error::TimeOrdering { expected: "s0 < t <= top", s: self.s0, t });
        }
        let theta = (gap / self.span).sqrt();
        let r = self.core.read_field(&self.fields[k - 1], &self.frames, theta, yx, yv);
        let env = Sym2::kinetic(self.core.ref_scale, gap)
            .log_normal_density(yx - (self.z0.0 + gap * self.z0.1), yv - self.z0.1);
        Ok(r * env.exp())
    }

    /// Kernel value truncated at depth n <= the built depth (partial sums
    /// of one lattice; used by depth-monotonicity sweeps).
    pub fn p_truncated(&self, n: usize, t: f64, y: &PhasePoint) -> Result<f64> {
        if n > self.depth {
            return Err(Error::InvalidParameter(format!(
                "truncation depth {n} exceeds built depth {}",
                self.depth
            )));
        }
        let (yx, yv) = require_d1(y)?;
        let gap = t - self.s0;
        if !(gap > 0.0 && t <= self.top + 1e-12) {
            return Err(Error::TimeOrdering { expected: "s0 < t <= top", s: self.s0, t });
        }
        let mut acc = log_p_parts(
            self.core.scale,
            gap,
            &[self.z0.0],
            &[self.z0.1],
            &[yx],
            &[yv],
        )
        .exp();
        for k in 1..=n {
            acc += self.term(k, t, y)?;
        }
        Ok(acc)
    }

    /// Truncated kernel value p(s0, z0; t, y).
    pub fn p(&self, t: f64, y: &PhasePoint) -> Result<f64> {
        let (yx, yv) = require_d1(y)?;
        let gap = t - self.s0;
        if !(gap > 0.0 && t <= self.top + 1e-12) {
            return Err(Error::TimeOrdering { expected: "s0 < t <= top", s: self.s0, t });
        }
        let mut acc = log_p_parts(
            self.core.scale,
            gap,
            &[self.z0.0],
            &[self.z0.1],
            &[yx],
            &[yv],
        )
        .exp();
        for k in 1..=self.depth {
            acc += self.term(k, t, y)?;
        }
        Ok(acc)
    }

    pub fn level_count(&self) -> usize {
        self.frames.len()
    }

    pub fn level_time(&self, j: usize) -> f64 {
        self.frames[j - 1].tau
    }

    pub fn source(&self) -> (f64, PhasePoint) {
        (self.s0, PhasePoint::d1(self.z0.0, self.z0.1))
    }

    pub fn horizon(&self) -> f64 {
        self.top
    }

    pub fn sigma(&self) -> f64 {
        self.core.sigma
    }

    pub fn convention(&self) -> CovarianceConvention {
        self.core.convention
    }

    /// Integral over y of p(s0, z0; tau, y) * w(y) at any interior time:
    /// the exact Gaussian part by Gauss-Hermite, corrections by Simpson
    /// sums of the (level-interpolated) stored ratio fields on a whitened
    /// grid anchored at tau.
    pub fn integrate_at<W: Fn(f64, f64) -> f64>(&self, tau: f64, w: W) -> Result<f64> {
        let gap = tau - self.s0;
        if !(gap > 0.0 && tau <= self.top + 1e-12) {
            return Err(Error::TimeOrdering { expected: "s0 < tau <= top", s: self.s0, t: tau });
        }
        let core = &self.core;
        let mean = (self.z0.0 + gap * self.z0.1, self.z0.1);
        let frame = Frame::new(tau, gap, mean, Sym2::kinetic(core.ref_scale, gap));
        // exact Gaussian part
        let exact_cov = Sym2::kinetic(core.scale, gap);
        let (l11, l21, l22) = exact_cov.chol();
        let gh = GaussHermite::new(core.params.inner_space_order.max(20));
        let mut acc = 0.0;
        for (g1, w1) in gh.nodes.iter().zip(&gh.weights) {
            for (g2, w2) in gh.nodes.iter().zip(&gh.weights) {
                let x = frame.mx + l11 * g1;
                let v = frame.mv + l21 * g1 + l22 * g2;
                acc += w1 * w2 * w(x, v);
            }
        }
        // correction terms on the whitened grid
        let theta = (gap / self.span).sqrt();
        let n = core.params.grid_points;
        let sw = simpson_axis(n, core.step);
        let det_w = frame.l11 * frame.l22;
        for k in 1..=self.depth {
            let mut corr = 0.0;
            for iu in 0..n {
                let u1 = core.axis[iu];
                for iv in 0..n {
                    let u2 = core.axis[iv];
                    let (x, v) = frame.unwhiten(u1, u2);
                    let r = core.read_field(&self.fields[k - 1], &self.frames, theta, x, v);
                    if r == 0.0 {
                        continue;
                    }
                    let env = (frame.log_norm - 0.5 * (u1 * u1 + u2 * u2)).exp();
                    corr += sw[iu] * sw[iv] * r * env * w(x, v) * det_w;
                }
            }
            acc += corr;
        }
        Ok(acc)
    }

    /// Integral over y of p(s0, z0; tau_j, y) * w(y) at level j.
    pub fn integrate_level<W: Fn(f64, f64) -> f64>(&self, j: usize, w: W) -> Result<f64> {
        if j == 0 || j > self.frames.len() {
            return Err(Error::InvalidParameter(format!("level {j} out of range")));
        }
        self.integrate_at(self.frames[j - 1].tau, w)
    }

    /// Integral over y of p(s0, z0; top, y) * w(y).
    pub fn integrate_top<W: Fn(f64, f64) -> f64>(&self, w: W) -> Result<f64> {
        self.integrate_level(self.frames.len(), w)
    }
}

/// Backward-anchored solution: the per-term series kernels
/// phi_n(., .; t0, y0) with the target fixed, plus the assembled kernel
/// p(s, z; t0, y0) for any source.
pub struct BackwardSolution {
    core: LatticeCore,
    field: DriftField,
    depth: usize,
    t0: f64,
    y0: (f64, f64),
    bottom: f64,
    span: f64,
    frames: Vec<Frame>,
    /// fields[k-2][j-1] = sqrt(gap)-rescaled ratio grid of phi_k, k >= 2.
    fields: Vec<Vec<Vec<f64>>>,
}

impl BackwardSolution {
    /// Build the lattice for target (t0, y0); sources range over
    /// [bottom, t0). `depth` series terms are materialized.
    pub fn build(
        field: &DriftField,
        config: &ParametrixConfig,
        bottom: f64,
        t0: f64,
        y0: &PhasePoint,
        depth: usize,
    ) -> Result<BackwardSolution> {
        if !(bottom < t0) {
            return Err(Error::TimeOrdering { expected: "bottom < t0", s: bottom, t: t0 });
        }
        let y0 = require_d1(y0)?;
        let core = LatticeCore::new(config)?;
        let span = t0 - bottom;
        let j_count = core.params.levels;
        let mut frames = Vec::with_capacity(j_count);
        for j in 1..=j_count {
            let theta = j as f64 / j_count as f64;
            let gap = span * theta * theta;
            let mean = (y0.0 - gap * y0.1, y0.1);
            let cov = Sym2::kinetic(core.ref_scale, gap).shear(-gap);
            frames.push(Frame::new(t0 - gap, gap, mean, cov));
        }
        let mut sol = BackwardSolution {
            core,
            field: field.clone(),
            depth,
            t0,
            y0,
            bottom,
            span,
            frames,
            fields: Vec::new(),
        };
        for k in 2..=depth {
            let mut levels = Vec::with_capacity(j_count);
            for j in 0..j_count {
                let frame = sol.frames[j];
                let n = sol.core.params.grid_points;
                let vals: Vec<f64> = (0..n * n)
                    .into_par_iter()
                    .map(|idx| {
                        let (iu, iv) = (idx / n, idx % n);
                        let (x, v) = frame.unwhiten(sol.core.axis[iu], sol.core.axis[iv]);
                        let psi = sol.apply(true, k - 1, frame.tau, x, v);
                        let u1 = sol.core.axis[iu];
                        let u2 = sol.core.axis[iv];
                        let log_env = frame.log_norm - 0.5 * (u1 * u1 + u2 * u2);
                        psi * frame.gap.sqrt() * (-log_env).exp()
                    })
                    .collect();
                levels.push(vals);
            }
            sol.fields.push(levels);
        }
        Ok(sol)
    }

    /// Exact first term phi_1(s, z; t0, y0).
    fn phi1_exact(&self, s: f64, zx: f64, zv: f64) -> f64 {
        let gap = self.t0 - s;
        let lp = log_p_parts(self.core.scale, gap, &[zx], &[zv], &[self.y0.0], &[self.y0.1]);
        let w1 = self.y0.0 - (zx + gap * zv);
        let w2 = self.y0.1 - zv;
        let gf = grad_log_factor(self.core.scale, gap, w1, w2);
        let mut fbuf = [0.0f64; 1];
        self.field.eval_into(s, &[zx], &[zv], &mut fbuf);
        fbuf[0] * gf * lp.exp()
    }

    /// Volterra application at (s', z'): integral over (tau, eta) of
    /// K(s', z'; tau, eta) * phi_{k_prev}(tau, eta; t0, y0), where K is
    /// phi_1 when `front` and the plain kernel P^sigma otherwise.
    fn apply(&self, front: bool, k_prev: usize, s_prime: f64, zx: f64, zv: f64) -> f64 {
        let core = &self.core;
        let span_here = self.t0 - s_prime;
        let mut fbuf = [0.0f64; 1];
        let f_front = if front {
            self.field.eval_into(s_prime, &[zx], &[zv], &mut fbuf);
            fbuf[0]
        } else {
            1.0
        };
        if front && f_front == 0.0 {
            return 0.0;
        }
        let mut total = 0.0;
        for (chi, wchi) in core.gl.mapped(0.0, std::f64::consts::FRAC_PI_2) {
            let (sin, cos) = chi.sin_cos();
            let tau = s_prime + span_here * sin * sin;
            let delta_f = tau - s_prime;
            let gap_b = self.t0 - tau;
            if delta_f <= 1e-9 * span_here || gap_b <= 1e-9 * span_here {
                continue;
            }
            let jac = span_here * 2.0 * sin * cos;
            // left Gaussian: P^sigma(s', z'; tau, .) in eta
            let lcov = Sym2::kinetic(core.scale, delta_f);
            let lm = (zx + delta_f * zv, zv);
            // second Gaussian: exact backward kernel for k_prev = 1,
            // else the level envelope (same backward mean).
            let second_scale = if k_prev == 1 { core.scale } else { core.ref_scale };
            let rcov = Sym2::kinetic(second_scale, gap_b).shear(-gap_b);
            let rm = (self.y0.0 - gap_b * self.y0.1, self.y0.1);
            let (pcov, pm, logpre) = Sym2::gaussian_product(&lcov, lm, &rcov, rm);
            if logpre < -740.0 {
                continue;
            }
            let (l11, l21, l22) = pcov.chol();
            let pre = logpre.exp();
            let theta_tau = (gap_b / self.span).sqrt();
            let inv_sqrt_gap = 1.0 / gap_b.sqrt();
            let mut inner = 0.0;
            for (g1, w1) in core.gh.nodes.iter().zip(&core.gh.weights) {
                for (g2, w2) in core.gh.nodes.iter().zip(&core.gh.weights) {
                    let ex = pm.0 + l11 * g1;
                    let ev = pm.1 + l21 * g1 + l22 * g2;
                    let second = if k_prev == 1 {
                        self.field.eval_into(tau, &[ex], &[ev], &mut fbuf);
                        let w1c = self.y0.0 - (ex + gap_b * ev);
                        let w2c = self.y0.1 - ev;
                        fbuf[0] * grad_log_factor(core.scale, gap_b, w1c, w2c)
                    } else {
                        let r = core.read_field(
                            &self.fields[k_prev - 2],
                            &self.frames,
                            theta_tau,
                            ex,
                            ev,
                        );
                        r * inv_sqrt_gap
                    };
                    if second == 0.0 {
                        continue;
                    }
                    let fr = if front {
                        let w1c = ex - (zx + delta_f * zv);
                        let w2c = ev - zv;
                        grad_log_factor(core.scale, delta_f, w1c, w2c)
                    } else {
                        1.0
                    };
                    inner += w1 * w2 * fr * second;
                }
            }
            total += wchi * jac * pre * inner;
        }
        f_front * total
    }

    /// phi_n(s, z; t0, y0) for 1 <= n <= depth.
    pub fn phi_n(&self, n: usize, s: f64, z: &PhasePoint) -> Result<f64> {
        let (zx, zv) = require_d1(z)?;
        if !(self.bottom - 1e-12 <= s && s < self.t0) {
            return Err(Error::TimeOrdering { expected: "bottom <= s < t0", s, t: self.t0 });
        }
        match n {
            0 => Err(Error::InvalidParameter("phi_n starts at n = 1".into())),
            1 => Ok(self.phi1_exact(s, zx, zv)),
            _ if n <= self.depth => Ok(self.apply(true, n - 1, s, zx, zv)),
            _ => Err(Error::InvalidParameter(format!(
                "phi_{n} exceeds the materialized depth {}",
                self.depth
            ))),
        }
    }

    /// Assembled kernel p(s, z; t0, y0) with `depth` correction terms.
    pub fn p(&self, s: f64, z: &PhasePoint) -> Result<f64> {
        let (zx, zv) = require_d1(z)?;
        if !(self.bottom - 1e-12 <= s && s < self.t0) {
            return Err(Error::TimeOrdering { expected: "bottom <= s < t0", s, t: self.t0 });
        }
        let gap = self.t0 - s;
        let mut acc =
            log_p_parts(self.core.scale, gap, &[zx], &[zv], &[self.y0.0], &[self.y0.1]).exp();
        for k in 1..=self.depth {
            acc += self.apply(false, k, s, zx, zv);
        }
        Ok(acc)
    }

    pub fn target(&self) -> (f64, PhasePoint) {
        (self.t0, PhasePoint::d1(self.y0.0, self.y0.1))
    }

    pub fn sigma(&self) -> f64 {
        self.core.sigma
    }

    pub fn convention(&self) -> CovarianceConvention {
        self.core.convention
    }
}
