//! Terminal-value problem for the operator
//! `L = sigma*Laplace_v + Y + F.grad_v`: representation of the unique
//! bounded strong Lie solution of `L u = Psi, u(T, .) = g` as
//! `u(t,z) = int p(t,z;T,y) g(y) dy - int_t^T int p(t,z;tau,y) Psi(tau,y)`,
//! plus the residual, duality and gradient-bound checks that certify it
//! numerically.

use crate::drift_fields::DriftField;
use crate::error::{Error, Result};
use crate::gaussian_kernel::CovarianceConvention;
use crate::langevin_sim::EmpiricalFlow;
use crate::lie_group::{PhasePoint, SpaceTimePoint};
use crate::parametrix::{ForwardSolution, ParametrixConfig};
use crate::quadrature::{GaussHermite, GaussLegendre};
use crate::test_functions::SmoothBump;
use std::sync::Arc;

type PhaseFn = dyn Fn(&PhasePoint) -> f64 + Send + Sync;
type SpaceTimeFn = dyn Fn(f64, &PhasePoint) -> f64 + Send + Sync;

/// Data of the backward problem L u = Psi, u(T, .) = g.
#[derive(Clone)]
pub struct BackwardProblem {
    pub horizon: f64,
    /// Terminal data g (None means g = 0).
    pub terminal: Option<Arc<PhaseFn>>,
    /// Source Psi(t, z).
    pub source: Arc<SpaceTimeFn>,
    /// Singular weight: |Psi(t, .)| may blow up like (T - t)^{-gamma}.
    pub gamma_psi: f64,
    /// Declared gauge-Hoelder exponent of Psi(t, .).
    pub beta_psi: f64,
    /// Declared class exponent of g.
    pub beta_g: f64,
}

impl BackwardProblem {
    /// The application case: g = 0 and Psi(t, z) = psi(z) smooth compactly
    /// supported.
    pub fn autonomous_source(horizon: f64, psi: SmoothBump) -> Self {
        BackwardProblem {
            horizon,
            terminal: None,
            source: Arc::new(move |_, z| psi.value(z)),
            gamma_psi: 0.0,
            beta_psi: 0.5,
            beta_g: 0.0,
        }
    }

    pub fn validate(&self, field: &DriftField) -> Result<()> {
        if !(0.0..1.0).contains(&self.gamma_psi) {
            return Err(Error::InvalidParameter(format!(
                "gamma_psi must lie in [0,1), got {}",
                self.gamma_psi
            )));
        }
        if !(0.0 < self.beta_psi && self.beta_psi < field.holder_alpha) {
            return Err(Error::InvalidParameter(format!(
                "beta_psi must lie in (0, alpha) = (0, {}), got {}",
                field.holder_alpha, self.beta_psi
            )));
        }
        if !(0.0 <= self.beta_g && self.beta_g <= 2.0 + self.beta_psi) {
            return Err(Error::InvalidParameter(format!(
                "beta_g must lie in [0, 2 + beta_psi], got {}",
                self.beta_g
            )));
        }
        Ok(())
    }
}

/// Evaluate u(t, z) by quadrature of both integrals against the
/// parametrix kernel. One forward lattice is built per source point; the
/// time integral runs over the sqrt-clustered levels, and a gamma > 0
/// endpoint singularity at tau = T is absorbed by the substitution
/// tau = T - (T - tau_*) w^{1/(1-gamma)} on the top segment.
pub fn solve_u(
    problem: &BackwardProblem,
    field: &DriftField,
    config: &ParametrixConfig,
    t: f64,
    z: &PhasePoint,
) -> Result<f64> {
    problem.validate(field)?;
    let t_end = problem.horizon;
    if !(0.0 <= t && t < t_end) {
        return Err(Error::TimeOrdering { expected: "0 <= t < T", s: t, t: t_end });
    }
    let sol = ForwardSolution::build(field, config, t, z, t_end)?;
    let mut u = 0.0;
    if let Some(g) = &problem.terminal {
        u += sol.integrate_top(|x, v| g(&PhasePoint::d1(x, v)))?;
    }
    // source term: composite Simpson in theta = sqrt((tau - t)/(T - t))
    let psi = &problem.source;
    let levels = sol.level_count();
    let span = t_end - t;
    let source_at = |tau: f64| -> Result<f64> {
        sol.integrate_at(tau, |x, v| psi(tau, &PhasePoint::d1(x, v)))
    };
    let mut psi_term = 0.0;
    if problem.gamma_psi == 0.0 {
        // values at theta_0 = 0 (delta limit) and the levels
        let mut vals = Vec::with_capacity(levels + 1);
        vals.push(psi(t, z));
        for j in 1..=levels {
            vals.push(source_at(sol.level_time(j))?);
        }
        // int_t^T L dtau = 2 span int_0^1 L(theta) theta dtheta
        let h = 1.0 / levels as f64;
        for (j, val) in vals.iter().enumerate() {
            let theta = j as f64 * h;
            let w = if j == 0 || j == levels {
                1.0
            } else if j % 2 == 1 {
                4.0
            } else {
                2.0
            };
            psi_term += w * h / 3.0 * 2.0 * span * theta * val;
        }
    } else {
        // levels cover [t, tau_*], the singular tail [tau_*, T] is handled
        // by the power substitution with the kernel interpolated in time
        let j_star = levels - 2;
        let tau_star = sol.level_time(j_star);
        let mut vals = Vec::with_capacity(j_star + 1);
        vals.push(psi(t, z));
        for j in 1..=j_star {
            vals.push(source_at(sol.level_time(j))?);
        }
        let theta_star = ((tau_star - t) / span).sqrt();
        let h = theta_star / j_star as f64;
        for (j, val) in vals.iter().enumerate() {
            let w = if j == 0 || j == j_star {
                1.0
            } else if j % 2 == 1 {
                4.0
            } else {
                2.0
            };
            psi_term += w * h / 3.0 * 2.0 * span * (j as f64 * h) * val;
        }
        let gamma = problem.gamma_psi;
        let gl = GaussLegendre::new(config.time_order.max(8));
        let seg = t_end - tau_star;
        for (wv, ww) in gl.mapped(0.0, 1.0) {
            let tau = t_end - seg * wv.powf(1.0 / (1.0 - gamma));
            if tau >= t_end || tau <= tau_star {
                continue;
            }
            // d tau = seg/(1-gamma) w^{gamma/(1-gamma)} dw
            let jac = seg / (1.0 - gamma) * wv.powf(gamma / (1.0 - gamma));
            psi_term += ww * jac * source_at(tau)?;
        }
    }
    Ok(u - psi_term)
}

/// Closed-form route for the driftless operator: u built from the exact
/// Gaussian kernel by tensor quadrature. Serves as the oracle for the
/// residual checks and the acceptance criteria that fix F = 0.
pub struct GaussianBackwardSolver {
    pub sigma: f64,
    pub convention: CovarianceConvention,
    pub time_order: usize,
    pub space_order: usize,
}

impl GaussianBackwardSolver {
    pub fn desk(sigma: f64) -> Self {
        GaussianBackwardSolver {
            sigma,
            convention: CovarianceConvention::Generator,
            time_order: 32,
            space_order: 64,
        }
    }

    /// E[g(Z_tau)] for the driftless kinetic Gaussian started at (t, z).
    fn expect(&self, t: f64, z: &PhasePoint, tau: f64, g: &dyn Fn(&PhasePoint) -> f64) -> f64 {
        let gh = GaussHermite::new(self.space_order);
        let cov = crate::mat2::Sym2::kinetic(self.convention.scale(self.sigma), tau - t);
        let (l11, l21, l22) = cov.chol();
        let m = crate::lie_group::shift(tau - t, z);
        let mut acc = 0.0;
        for (g1, w1) in gh.nodes.iter().zip(&gh.weights) {
            for (g2, w2) in gh.nodes.iter().zip(&gh.weights) {
                let p = PhasePoint::d1(m.x[0] + l11 * g1, m.v[0] + l21 * g1 + l22 * g2);
                acc += w1 * w2 * g(&p);
            }
        }
        acc
    }

    /// E[g(Z_tau)] for compactly supported g: trapezoid over the support
    /// box when the Gaussian is wide (the integrand is C^infty with all
    /// derivatives vanishing at the edges, so the trapezoid converges
    /// super-algebraically), Gauss-Hermite when it is narrow.
    fn expect_supported(
        &self,
        t: f64,
        z: &PhasePoint,
        tau: f64,
        g: &dyn Fn(&PhasePoint) -> f64,
        support: [f64; 4],
    ) -> f64 {
        let cov = crate::mat2::Sym2::kinetic(self.convention.scale(self.sigma), tau - t);
        let sigma_x = cov.a.sqrt();
        let [lo_x, hi_x, lo_v, hi_v] = support;
        if sigma_x < (hi_x - lo_x) / 170.0 {
            return self.expect(t, z, tau, g);
        }
        let n = 221usize;
        let m = crate::lie_group::shift(tau - t, z);
        let inv = cov.inv();
        let norm = 1.0 / (2.0 * std::f64::consts::PI * cov.det().sqrt());
        let hx = (hi_x - lo_x) / (n - 1) as f64;
        let hv = (hi_v - lo_v) / (n - 1) as f64;
        let mut acc = 0.0;
        for i in 0..n {
            let x = lo_x + hx * i as f64;
            for j in 0..n {
                let v = lo_v + hv * j as f64;
                let gv = g(&PhasePoint::d1(x, v));
                if gv == 0.0 {
                    continue;
                }
                let q = inv.quad(x - m.x[0], v - m.v[0]);
                acc += gv * norm * (-0.5 * q).exp();
            }
        }
        acc * hx * hv
    }

    /// u(t, z) for the application problem g = 0, Psi(t, z) = psi(z) with
    /// F = 0, at quadrature accuracy sufficient for second differences.
    pub fn solve_u_bump(&self, psi: &SmoothBump, t_end: f64, t: f64, z: &PhasePoint) -> Result<f64> {
        if !(t < t_end) {
            return Err(Error::TimeOrdering { expected: "t < T", s: t, t: t_end });
        }
        let pad = psi.radius * 1.02;
        let support = [
            psi.center.x[0] - pad,
            psi.center.x[0] + pad,
            psi.center.v[0] - pad,
            psi.center.v[0] + pad,
        ];
        let gl = GaussLegendre::new(self.time_order);
        let mut term = 0.0;
        for (tau, w) in gl.mapped(t, t_end) {
            term += w * self.expect_supported(t, z, tau, &|p| psi.value(p), support);
        }
        Ok(-term)
    }

    /// u(t, z) for the problem L u = Psi, u(T) = g with F = 0.
    pub fn solve_u(&self, problem: &BackwardProblem, t: f64, z: &PhasePoint) -> Result<f64> {
        let t_end = problem.horizon;
        if !(t < t_end) {
            return Err(Error::TimeOrdering { expected: "t < T", s: t, t: t_end });
        }
        let mut u = 0.0;
        if let Some(g) = &problem.terminal {
            u += self.expect(t, z, t_end, &**g);
        }
        if problem.gamma_psi != 0.0 {
            return Err(Error::InvalidParameter(
                "the Gaussian oracle implements gamma_psi = 0 only".into(),
            ));
        }
        let gl = GaussLegendre::new(self.time_order);
        let psi = &problem.source;
        let mut term = 0.0;
        for (tau, w) in gl.mapped(t, t_end) {
            term += w * self.expect(t, z, tau, &|p: &PhasePoint| psi(tau, p));
        }
        Ok(u - term)
    }
}

/// Report of the strong-Lie residual sweep.
#[derive(Debug, Clone, serde::Serialize)]
pub struct LieResidualReport {
    pub max_residual: f64,
    pub normalizer: f64,
    pub points: usize,
}

/// max over the grid of |sigma*Laplace_v u + Y u + F.grad_v u - Psi|
/// normalized by sup|Psi| + 1, with the Lie derivative taken along the
/// drift flow (never as separate d_t and grad_x, which need not exist).
pub fn strong_lie_residual(
    u: &dyn Fn(f64, &PhasePoint) -> Result<f64>,
    field: &DriftField,
    sigma: f64,
    psi: &dyn Fn(f64, &PhasePoint) -> f64,
    grid: &[(f64, PhasePoint)],
    h: f64,
) -> Result<LieResidualReport> {
    let mut sup_psi = 0.0f64;
    for (t, z) in grid {
        sup_psi = sup_psi.max(psi(*t, z).abs());
    }
    let normalizer = sup_psi + 1.0;
    let mut max_residual = 0.0f64;
    for (t, z) in grid {
        let u0 = u(*t, z)?;
        // velocity derivatives
        let mut lap = 0.0;
        let mut fdotgrad = 0.0;
        let f = field.eval(*t, z)?;
        for i in 0..z.dim() {
            let mut zp = z.clone();
            zp.v[i] += h;
            let mut zm = z.clone();
            zm.v[i] -= h;
            let up = u(*t, &zp)?;
            let um = u(*t, &zm)?;
            lap += (up - 2.0 * u0 + um) / (h * h);
            fdotgrad += f[i] * (up - um) / (2.0 * h);
        }
        // Lie derivative along the flow
        let p = SpaceTimePoint { t: *t, x: z.x.clone(), v: z.v.clone() };
        let zf = crate::lie_group::shift(h, z);
        let zb = crate::lie_group::shift(-h, z);
        let yu = (u(*t + h, &zf)? - u(*t - h, &zb)?) / (2.0 * h);
        if !yu.is_finite() || !lap.is_finite() {
            return Err(Error::NonFinite { context: "strong_lie_residual", t: p.t, point: z.x.clone() });
        }
        let res = (sigma * lap + yu + fdotgrad - psi(*t, z)).abs() / normalizer;
        max_residual = max_residual.max(res);
    }
    Ok(LieResidualReport { max_residual, normalizer, points: grid.len() })
}

/// Two-sided duality identity
/// `int u(t,.) d mu_t = - int_t^T int psi d mu_s ds` tested with Monte
/// Carlo averages on both sides.
#[derive(Debug, Clone, serde::Serialize)]
pub struct DualityReport {
    pub lhs: f64,
    pub lhs_se: f64,
    pub rhs: f64,
    pub rhs_se: f64,
    pub residual: f64,
    pub combined_se: f64,
    pub pass: bool,
}

/// `u_eval` is the PDE-side solution; the left side averages it over a
/// subsample of the flow at the stored index, the right side integrates
/// psi along the paths by the trapezoid rule.
#[allow(clippy::too_many_arguments)]
pub fn duality_identity_check(
    u_eval: &(dyn Fn(f64, &PhasePoint) -> Result<f64> + Sync),
    psi: &SmoothBump,
    flow: &EmpiricalFlow,
    t_index: usize,
    subsample: usize,
    quadrature_budget: f64,
) -> Result<DualityReport> {
    use rayon::prelude::*;
    if t_index >= flow.times.len() {
        return Err(Error::InvalidParameter(format!("time index {t_index} out of range")));
    }
    let t = flow.times[t_index];
    let n = flow.samples(t_index);
    let stride = (n / subsample.max(1)).max(1);
    let picked: Vec<usize> = (0..n).step_by(stride).collect();
    let lhs_vals: Vec<f64> = picked
        .par_iter()
        .map(|p| u_eval(t, &flow.point(t_index, *p)))
        .collect::<Result<_>>()?;
    let lhs = crate::stats::mean(&lhs_vals);
    let lhs_se = if lhs_vals.len() > 1 { crate::stats::standard_error(&lhs_vals) } else { 0.0 };
    // right side: per-path trapezoid of psi over [t, T]
    let rhs_vals: Vec<f64> = (0..n)
        .map(|p| {
            let mut acc = 0.0;
            for ti in t_index..flow.times.len() - 1 {
                let (ta, tb) = (flow.times[ti], flow.times[ti + 1]);
                let va = psi.value(&flow.point(ti, p));
                let vb = psi.value(&flow.point(ti + 1, p));
                acc += 0.5 * (va + vb) * (tb - ta);
            }
            -acc
        })
        .collect();
    let rhs = crate::stats::mean(&rhs_vals);
    let rhs_se = crate::stats::standard_error(&rhs_vals);
    let residual = lhs - rhs;
    let combined_se = (lhs_se * lhs_se + rhs_se * rhs_se).sqrt();
    Ok(DualityReport {
        lhs,
        lhs_se,
        rhs,
        rhs_se,
        residual,
        combined_se,
        pass: residual.abs() <= 3.0 * combined_se + quadrature_budget,
    })
}

/// C_beta(psi) = max{2^{1-beta} ||psi|| ||grad psi||^beta, ||grad psi||}
/// and the fitted constant of ||u|| + ||grad_v u|| <= C_u C_beta(psi).
#[derive(Debug, Clone, serde::Serialize)]
pub struct GradientBoundReport {
    pub c_beta_psi: f64,
    pub c_u: f64,
    pub sup_u: f64,
    pub sup_grad_v_u: f64,
}

pub fn gradient_bound_check(
    u: &dyn Fn(f64, &PhasePoint) -> Result<f64>,
    psi: &SmoothBump,
    beta: f64,
    grid: &[(f64, PhasePoint)],
    h: f64,
) -> Result<GradientBoundReport> {
    let sup_psi = psi.sup();
    let sup_grad = psi.sup_grad();
    let c_beta_psi =
        (2f64.powf(1.0 - beta) * sup_psi * sup_grad.powf(beta)).max(sup_grad);
    let mut sup_u = 0.0f64;
    let mut sup_gv = 0.0f64;
    for (t, z) in grid {
        sup_u = sup_u.max(u(*t, z)?.abs());
        for i in 0..z.dim() {
            let mut zp = z.clone();
            zp.v[i] += h;
            let mut zm = z.clone();
            zm.v[i] -= h;
            sup_gv = sup_gv.max(((u(*t, &zp)? - u(*t, &zm)?) / (2.0 * h)).abs());
        }
    }
    let c_u = if c_beta_psi > 0.0 { (sup_u + sup_gv) / c_beta_psi } else { 0.0 };
    Ok(GradientBoundReport { c_beta_psi, c_u, sup_u, sup_grad_v_u: sup_gv })
}
