//! Levy parametrix construction of the fundamental solution of
//! `L = sigma*Laplace_v + Y + F.grad_v`.
//!
//! The kernel is represented as
//! `p = P^sigma + int P^sigma * phi` with `phi = sum_k phi_k` the Neumann
//! series of the Volterra equation driven by
//! `phi_1 = F(s,z) . grad_v P^sigma(s,z;t,y)`. The recursion is the
//! standard Volterra form
//! `phi_{k+1}(s,z;t,y) = int_s^t int phi_1(s,z;tau,eta) phi_k(tau,eta;t,y)`.
//!
//! Alongside the numerical series, this module exposes the closed-form
//! bound functions used by the convergence argument (the H majorant, the
//! J and K constants and the per-term induction bound with the
//! Gamma(n/2) decay) as diagnostics: empirical term norms are compared
//! against them with fitted constants.

pub mod lattice;
pub mod mc;

use crate::drift_fields::DriftField;
use crate::error::{Error, Result};
use crate::gaussian_kernel::{self, CovarianceConvention};
use crate::lie_group::PhasePoint;
use crate::quadrature::{GaussHermite, GaussLegendre};
use serde::{Deserialize, Serialize};

pub use lattice::{BackwardSolution, ForwardSolution, LatticeParams};

/// Evaluation mode for the series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    /// Deterministic tensor quadrature on a whitened level lattice (d = 1).
    TensorQuadrature,
    /// Importance-sampled chain estimator (any d).
    MonteCarlo { paths: usize, seed: u64 },
}

/// Configuration of the truncated Neumann series.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ParametrixConfig {
    /// Diffusion parameter sigma > 0 of the principal part.
    pub sigma: f64,
    /// Truncation depth N >= 0.
    pub depth: usize,
    /// Gaussian-shift slack delta > 0 used by the bound functions.
    pub delta: f64,
    /// Prefactor of the summability sequence eps_n = eps * n^(eta - 1/beta).
    pub eps: f64,
    /// Exponent eta in (0, 1/beta - 1).
    pub eta: f64,
    /// Nodes for the singularity-absorbing time substitution.
    pub time_order: usize,
    /// Gauss-Hermite nodes per axis for the direct space quadrature.
    pub space_order: usize,
    pub mode: EvalMode,
    /// Resolution of the level lattice behind eval_p.
    pub lattice: LatticeParams,
    /// Covariance convention of the underlying kernel.
    pub convention: CovarianceConvention,
    /// The beta-only constant of the H majorant; never given numerically,
    /// exposed as a parameter (fit it with `fit_c_beta`).
    pub c_beta: f64,
    /// The gradient-bound constant; fit it with
    /// `gaussian_kernel::gradient_bound_fit`.
    pub c_grad: f64,
}

impl Default for ParametrixConfig {
    fn default() -> Self {
        ParametrixConfig {
            sigma: 1.0,
            depth: 3,
            delta: 0.1,
            eps: 0.05,
            eta: 0.5,
            time_order: 16,
            space_order: 24,
            mode: EvalMode::TensorQuadrature,
            lattice: LatticeParams::default(),
            convention: CovarianceConvention::Generator,
            c_beta: 1.0,
            c_grad: 1.0,
        }
    }
}

impl ParametrixConfig {
    /// eps_n = eps * n^(eta - 1/beta), n >= 1.
    pub fn epsilon_n(&self, beta: f64, n: usize) -> f64 {
        self.eps * (n as f64).powf(self.eta - 1.0 / beta)
    }

    /// S = sum of the eps_n; must be < 1 for the induction bound.
    pub fn epsilon_sum(&self, beta: f64) -> f64 {
        let q = 1.0 / beta - self.eta;
        let cut = 10_000usize;
        let mut s = 0.0;
        for n in 1..=cut {
            s += (n as f64).powf(-q);
        }
        // Euler-Maclaurin remainder: integral plus half the boundary term
        s += (cut as f64).powf(1.0 - q) / (q - 1.0) - 0.5 * (cut as f64).powf(-q);
        self.eps * s
    }

    /// Check the construction invariants against a field's growth exponent.
    pub fn validate_for_beta(&self, beta: f64) -> Result<f64> {
        if self.sigma <= 0.0 || self.delta <= 0.0 || self.eps <= 0.0 {
            return Err(Error::InvalidParameter(
                "sigma, delta and eps must be positive".into(),
            ));
        }
        if !(0.0 < self.eta && self.eta < 1.0 / beta - 1.0) {
            return Err(Error::InvalidParameter(format!(
                "eta must lie in (0, 1/beta - 1) = (0, {}), got {}",
                1.0 / beta - 1.0,
                self.eta
            )));
        }
        let s = self.epsilon_sum(beta);
        if s >= 1.0 {
            return Err(Error::InvalidParameter(format!(
                "summability constant S = {s} >= 1; decrease eps"
            )));
        }
        Ok(s)
    }

    /// Clamp eta into the admissible range for the given beta.
    pub fn adapted_to_beta(mut self, beta: f64) -> Self {
        let limit = 1.0 / beta - 1.0;
        if self.eta >= limit {
            self.eta = 0.5 * limit;
        }
        self
    }
}

/// First series term phi_1(s,z;t,y) = F(s,z) . grad_v P^sigma(s,z;t,y).
pub fn phi1(
    field: &DriftField,
    sigma: f64,
    convention: CovarianceConvention,
    s: f64,
    z: &PhasePoint,
    t: f64,
    y: &PhasePoint,
) -> Result<f64> {
    if t <= s {
        return Err(Error::TimeOrdering { expected: "s < t", s, t });
    }
    let grad = gaussian_kernel::grad_v_p(sigma, s, z, t, y, convention)?;
    let f = field.eval(s, z)?;
    Ok(f.iter().zip(&grad).map(|(a, b)| a * b).sum())
}

/// One Volterra iterate
/// `int_s^t int phi_1(s,z;tau,eta) phi_k(tau,eta;t,y) d eta d tau`.
///
/// The time integral substitutes tau = s + (t-s) u^2 on the lower half and
/// the mirrored u^2 map on the upper half, which absorbs the inverse
/// square-root singularities of phi_1 at tau = s and of phi_1-type
/// iterates at tau = t. Gauss-Hermite nodes sit in the whitened
/// coordinates of the Gaussian factor of phi_1 centered at
/// e^{(tau-s)B} z, shifted by the backward concentration envelope of
/// phi_k toward (t, y) (every series iterate concentrates like a
/// sigma-kernel there). The shift matters: the iterates change sign in
/// tau, so the small unshifted-proposal errors near tau = t do not
/// average out of the heavily cancelling time integral.
#[allow(clippy::too_many_arguments)]
pub fn phi_next(
    field: &DriftField,
    sigma: f64,
    convention: CovarianceConvention,
    phi_k: &dyn Fn(f64, &PhasePoint) -> f64,
    s: f64,
    z: &PhasePoint,
    t: f64,
    y: &PhasePoint,
    time_order: usize,
    space_order: usize,
) -> Result<f64> {
    if t <= s {
        return Err(Error::TimeOrdering { expected: "s < t", s, t });
    }
    if time_order < 2 || space_order < 2 {
        return Err(Error::InvalidParameter("quadrature orders must be >= 2".into()));
    }
    if z.dim() != 1 {
        return Err(Error::InvalidParameter("tensor quadrature requires d = 1".into()));
    }
    use crate::mat2::Sym2;
    let gl = GaussLegendre::new(time_order);
    let gh = GaussHermite::new(space_order);
    let scale = convention.scale(sigma);
    let f_at_sz = field.eval(s, z)?;
    if f_at_sz[0] == 0.0 {
        return Ok(0.0);
    }
    let mid = 0.5 * (s + t);
    let widen = 1.5;

    let mut total = 0.0;
    // lower panel: tau = s + (mid - s) u^2; upper: tau = t - (t - mid) u^2
    for panel in 0..2 {
        for (u, wu) in gl.mapped(0.0, 1.0) {
            let (tau, jac) = if panel == 0 {
                (s + (mid - s) * u * u, 2.0 * (mid - s) * u)
            } else {
                (t - (t - mid) * u * u, 2.0 * (t - mid) * u)
            };
            let gap = tau - s;
            let delta = t - tau;
            // gaps this small contribute nothing but break the 2x2 algebra
            if gap < 1e-9 * (t - s) || delta < 1e-9 * (t - s) {
                continue;
            }
            let left = Sym2::kinetic(scale, gap);
            let m = crate::lie_group::shift(gap, z);
            let env = Sym2::kinetic(scale * widen, delta).shear(-delta);
            let em = (y.x[0] - delta * y.v[0], y.v[0]);
            let (pcov, pm, logpre) = Sym2::gaussian_product(&left, (m.x[0], m.v[0]), &env, em);
            if logpre < -740.0 {
                continue;
            }
            let env_norm = -(crate::mat2::LN_2PI + 0.5 * env.det().ln());
            let env_inv = env.inv();
            let (l11, l21, l22) = pcov.chol();
            let mut inner = 0.0;
            for (g1, w1) in gh.nodes.iter().zip(&gh.weights) {
                for (g2, w2) in gh.nodes.iter().zip(&gh.weights) {
                    let ex = pm.0 + l11 * g1;
                    let ev = pm.1 + l21 * g1 + l22 * g2;
                    // grad factor of P^sigma(s,z;tau,eta) in the v of z
                    let gf =
                        gaussian_kernel::grad_log_factor(scale, gap, ex - m.x[0], ev - m.v[0]);
                    let eta = PhasePoint::d1(ex, ev);
                    let le = env_norm - 0.5 * env_inv.quad(ex - em.0, ev - em.1);
                    inner += w1 * w2 * f_at_sz[0] * gf * phi_k(tau, &eta) * (-le).exp();
                }
            }
            if !inner.is_finite() {
                return Err(Error::NonFinite {
                    context: "phi_next inner quadrature",
                    t: tau,
                    point: vec![z.x[0], z.v[0]],
                });
            }
            total += wu * jac * logpre.exp() * inner;
        }
    }
    Ok(total)
}

/// ln Gamma(n/2) for integer n >= 1.
pub fn ln_gamma_half(n: usize) -> f64 {
    if n % 2 == 0 {
        // Gamma(m) = (m-1)!
        let m = n / 2;
        (1..m).map(|k| (k as f64).ln()).sum()
    } else {
        // Gamma(m + 1/2) = sqrt(pi) (2m-1)!! / 2^m
        let m = n / 2;
        let mut acc = 0.5 * std::f64::consts::PI.ln();
        for k in 0..m {
            acc += ((2 * k + 1) as f64).ln();
        }
        acc - m as f64 * std::f64::consts::LN_2
    }
}

/// The majorant H_{sigma,beta}(y; t) with y = (xi, nu):
/// C_beta (|nu| + (|xi| + t |nu|)^{1/3} + ((beta sigma^d + beta^{1/3}
/// sigma^{d/3}) t)^{1/2})^beta. Implemented exactly as printed, sigma^d
/// factors included; it is a diagnostic upper bound only.
pub fn h_function(sigma: f64, beta: f64, y: &PhasePoint, t: f64, c_beta: f64) -> Result<f64> {
    if !(0.0 < beta && beta < 1.0) {
        return Err(Error::InvalidParameter(format!("beta must be in (0,1), got {beta}")));
    }
    let d = y.dim() as f64;
    let xi: f64 = y.x.iter().map(|c| c * c).sum::<f64>().sqrt();
    let nu: f64 = y.v.iter().map(|c| c * c).sum::<f64>().sqrt();
    let sig_d = sigma.powf(d);
    let sig_d3 = sigma.powf(d / 3.0);
    let inner = nu
        + (xi + t * nu).cbrt()
        + ((beta * sig_d + beta.cbrt() * sig_d3) * t).sqrt();
    Ok(c_beta * inner.powf(beta))
}

/// J_beta(T; sigma) = C_beta (T^{beta/3} + ((beta sigma^d +
/// beta^{1/3} sigma^{d/3}) T)^{beta/2}).
pub fn j_function(t_horizon: f64, sigma: f64, beta: f64, d: usize, c_beta: f64) -> Result<f64> {
    if !(0.0 < beta && beta < 1.0) {
        return Err(Error::InvalidParameter(format!("beta must be in (0,1), got {beta}")));
    }
    let sig_d = sigma.powf(d as f64);
    let sig_d3 = sigma.powf(d as f64 / 3.0);
    Ok(c_beta
        * (t_horizon.powf(beta / 3.0)
            + ((beta * sig_d + beta.cbrt() * sig_d3) * t_horizon).powf(beta / 2.0)))
}

/// K = sqrt(1 + eps_1/(1-S)) (1 + J_beta(T, (sigma+delta)/eps_1^{1/d}) +
/// C_beta (1 + T^{beta/3})).
pub fn k_constant(
    config: &ParametrixConfig,
    beta: f64,
    d: usize,
    t_horizon: f64,
) -> Result<f64> {
    let s = config.validate_for_beta(beta)?;
    let eps1 = config.epsilon_n(beta, 1);
    let shifted = (config.sigma + config.delta) / eps1.powf(1.0 / d as f64);
    let j = j_function(t_horizon, shifted, beta, d, config.c_beta)?;
    Ok((1.0 + eps1 / (1.0 - s)).sqrt()
        * (1.0 + j + config.c_beta * (1.0 + t_horizon.powf(beta / 3.0))))
}

/// Per-term induction bound on |phi_n|:
/// K^{n-1} pi^{n/2} (t-s)^{(n-2)/2} / Gamma(n/2) * (d C_T(F) C)^n /
/// (1-S)^{n/2} * P^{lambda_n}(s,z;t,y) * prod_{j<=n} (1 + H_j(y;T)),
/// with lambda_n = (sigma+delta)/(1 - sum_{j<=n} eps_j)^{1/d}.
#[allow(clippy::too_many_arguments)]
pub fn induction_bound(
    n: usize,
    config: &ParametrixConfig,
    field: &DriftField,
    t_horizon: f64,
    s: f64,
    z: &PhasePoint,
    t: f64,
    y: &PhasePoint,
) -> Result<f64> {
    if n == 0 {
        return Err(Error::InvalidParameter("induction bound starts at n = 1".into()));
    }
    let beta = field.growth_beta;
    let d = z.dim();
    let big_s = config.validate_for_beta(beta)?;
    let k = k_constant(config, beta, d, t_horizon)?;
    let gap = t - s;
    let mut partial = 0.0;
    let mut log_prod_h = 0.0;
    for j in 1..=n {
        let eps_j = config.epsilon_n(beta, j);
        partial += eps_j;
        let shifted = (config.sigma + config.delta) / eps_j.powf(1.0 / d as f64);
        let h = h_function(shifted, beta, y, t_horizon, config.c_beta)?;
        log_prod_h += (1.0 + h).ln();
    }
    let lambda_n = (config.sigma + config.delta) / (1.0 - partial).powf(1.0 / d as f64);
    let log_p = gaussian_kernel::eval_log_p(lambda_n, s, z, t, y, config.convention)?;
    let nf = n as f64;
    let log_bound = (nf - 1.0) * k.ln()
        + 0.5 * nf * std::f64::consts::PI.ln()
        + 0.5 * (nf - 2.0) * gap.ln()
        - ln_gamma_half(n)
        + nf * (d as f64 * field.growth_c * config.c_grad).ln()
        - 0.5 * nf * (1.0 - big_s).ln()
        + log_p
        + log_prod_h;
    Ok(log_bound.exp())
}

/// Sum of the induction bounds over n > depth: the reported truncation tail.
pub fn tail_bound(
    config: &ParametrixConfig,
    field: &DriftField,
    t_horizon: f64,
    s: f64,
    z: &PhasePoint,
    t: f64,
    y: &PhasePoint,
) -> Result<f64> {
    let mut acc = 0.0;
    for n in (config.depth + 1)..=(config.depth + 400) {
        let b = induction_bound(n, config, field, t_horizon, s, z, t, y)?;
        acc += b;
        if b < 1e-18 * acc.max(1e-300) {
            break;
        }
    }
    Ok(acc)
}

/// Fit the constant of the closed-form majorant: the largest sampled ratio
/// LHS / (H / C_beta) over random (z, y, s, t), where LHS is
/// ||z||_B^beta exp(-(1/2) quadratic form of C_sigma(t-s)).
pub fn fit_c_beta(
    sigma: f64,
    beta: f64,
    convention: CovarianceConvention,
    samples: usize,
    seed: u64,
) -> f64 {
    use rand::Rng;
    let mut rng = crate::rngs::stream(seed, 0);
    let mut best = 0.0f64;
    for _ in 0..samples {
        let z = PhasePoint::d1(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
        let y = PhasePoint::d1(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
        let s = rng.random_range(0.0..0.5);
        let t = s + rng.random_range(0.05..1.0);
        let scale = convention.scale(sigma);
        let block = crate::mat2::Sym2::kinetic(scale, t - s).inv();
        let m = crate::lie_group::shift(t - s, &z);
        let q = block.quad(y.x[0] - m.x[0], y.v[0] - m.v[0]);
        let lhs = crate::lie_group::b_norm(&z).powf(beta) * (-0.5 * q).exp();
        let h_over_c = h_function(sigma, beta, &y, t - s, 1.0).unwrap();
        if h_over_c > 0.0 {
            best = best.max(lhs / h_over_c);
        }
    }
    best
}

/// Per-term diagnostics of the truncated series on an evaluation set.
#[derive(Debug, Clone, Serialize)]
pub struct SeriesDiagnostics {
    /// Empirical sup |phi_n| over the evaluation set, n = 1..
    pub term_sup: Vec<f64>,
    /// Closed-form induction bounds at the same points.
    pub bound_sup: Vec<f64>,
    /// Consecutive ratios sup|phi_{n+1}| / sup|phi_n|.
    pub ratios: Vec<f64>,
    pub k_constant: f64,
    pub j_constant: f64,
    pub epsilon_sum: f64,
    /// Truncation tail after the configured depth, at the worst point.
    pub tail: f64,
    /// All empirical terms below their bounds.
    pub bounded: bool,
    /// S < 1.
    pub summable: bool,
}

/// Value plus the reported truncation tail.
#[derive(Debug, Clone, Copy)]
pub struct PEval {
    pub value: f64,
    pub tail_bound: f64,
    /// Negative values are reported, never clamped: they diagnose an
    /// insufficient depth or quadrature resolution.
    pub negative: bool,
}

/// Evaluate the truncated parametrix series at a single tuple. Builds a
/// one-shot forward lattice; batch callers should hold a
/// [`ForwardSolution`] instead.
pub fn eval_p(
    field: &DriftField,
    config: &ParametrixConfig,
    s: f64,
    z: &PhasePoint,
    t: f64,
    y: &PhasePoint,
) -> Result<PEval> {
    if !(s < t) {
        return Err(Error::TimeOrdering { expected: "s < t", s, t });
    }
    let sol = ForwardSolution::build(field, config, s, z, t)?;
    let value = sol.p(t, y)?;
    let tail = tail_bound(config, field, t, s, z, t, y)?;
    Ok(PEval { value, tail_bound: tail, negative: value < 0.0 })
}

/// Outcome of the two-sided Gaussian comparison on a grid.
#[derive(Debug, Clone, Serialize)]
pub struct SandwichReport {
    /// Smallest C with p <= C P^{sigma+eps_up} on the grid.
    pub c_upper: f64,
    pub eps_upper: f64,
    /// Largest lower constant over the lambda sweep.
    pub c_lower: f64,
    pub lambda_lower: f64,
    pub min_p: f64,
    /// Grid points where p < 0, if any.
    pub negative_sites: Vec<(f64, f64, f64)>,
    pub pass: bool,
}

/// Fit the upper and lower Gaussian envelopes of p over a grid of (s, z)
/// for a fixed target, using a backward solution.
pub fn gaussian_sandwich_check(
    solution: &BackwardSolution,
    grid: &[(f64, PhasePoint)],
    eps_upper: f64,
    lambda_sweep: &[f64],
) -> Result<SandwichReport> {
    let (t0, y0) = solution.target();
    let sigma = solution.sigma();
    let conv = solution.convention();
    let mut c_upper = 0.0f64;
    let mut min_p = f64::INFINITY;
    let mut negative_sites = Vec::new();
    let mut p_vals = Vec::with_capacity(grid.len());
    for (s, z) in grid {
        let p = solution.p(*s, z)?;
        min_p = min_p.min(p);
        if p < 0.0 {
            negative_sites.push((*s, z.x[0], z.v[0]));
        }
        let upper = gaussian_kernel::eval_p(sigma + eps_upper, *s, z, t0, &y0, conv)?;
        if upper > 0.0 {
            c_upper = c_upper.max(p / upper);
        }
        p_vals.push(p);
    }
    let mut c_lower = 0.0f64;
    let mut lambda_lower = sigma;
    for &lam in lambda_sweep {
        let mut c = f64::INFINITY;
        for ((s, z), p) in grid.iter().zip(&p_vals) {
            let low = gaussian_kernel::eval_p(lam, *s, z, t0, &y0, conv)?;
            if low > 0.0 {
                c = c.min(p / low);
            }
        }
        if c.is_finite() && c > c_lower {
            c_lower = c;
            lambda_lower = lam;
        }
    }
    let pass = negative_sites.is_empty() && c_upper.is_finite() && c_lower > 0.0;
    Ok(SandwichReport {
        c_upper,
        eps_upper,
        c_lower,
        lambda_lower,
        min_p,
        negative_sites,
        pass,
    })
}

/// Empirical per-term convergence report against the induction bounds.
pub fn series_convergence_report(
    field: &DriftField,
    config: &ParametrixConfig,
    solution: &BackwardSolution,
    eval_points: &[(f64, PhasePoint)],
    t_horizon: f64,
    n_max: usize,
) -> Result<SeriesDiagnostics> {
    let beta = field.growth_beta;
    let s_sum = config.validate_for_beta(beta)?;
    let (t0, y0) = solution.target();
    let d = y0.dim();
    let mut term_sup = vec![0.0f64; n_max];
    let mut bound_sup = vec![0.0f64; n_max];
    let mut tail = 0.0f64;
    for (s, z) in eval_points {
        for n in 1..=n_max {
            let phi = solution.phi_n(n, *s, z)?.abs();
            term_sup[n - 1] = term_sup[n - 1].max(phi);
            let b = induction_bound(n, config, field, t_horizon, *s, z, t0, &y0)?;
            bound_sup[n - 1] = bound_sup[n - 1].max(b);
        }
        tail = tail.max(tail_bound(config, field, t_horizon, *s, z, t0, &y0)?);
    }
    let ratios = term_sup.windows(2).map(|w| w[1] / w[0].max(1e-300)).collect();
    let bounded = term_sup.iter().zip(&bound_sup).all(|(t, b)| t <= b);
    let eps1 = config.epsilon_n(beta, 1);
    let shifted = (config.sigma + config.delta) / eps1.powf(1.0 / d as f64);
    Ok(SeriesDiagnostics {
        term_sup,
        bound_sup,
        ratios,
        k_constant: k_constant(config, beta, d, t_horizon)?,
        j_constant: j_function(t_horizon, shifted, beta, d, config.c_beta)?,
        epsilon_sum: s_sum,
        tail,
        bounded,
        summable: s_sum < 1.0,
    })
}

#[cfg(test)]
mod tests;
