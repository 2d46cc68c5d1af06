//! One-dimensional quadrature rules used throughout the crate:
//! Gauss-Legendre on [a, b], Gauss-Hermite for integrals against a standard
//! normal weight, and an adaptive Simpson fallback used as an independent
//! oracle in tests.

/// Gauss-Legendre rule on [-1, 1]; nodes and weights via Newton iteration
/// on the Legendre recurrence.
#[derive(Debug, Clone)]
pub struct GaussLegendre {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussLegendre {
    pub fn new(n: usize) -> Self {
        assert!(n >= 2, "quadrature order must be at least 2");
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let m = n.div_ceil(2);
        for i in 0..m {
            // Initial guess (Abramowitz-Stegun 25.4.30 style).
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-15 {
                    break;
                }
            }
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        GaussLegendre { nodes, weights }
    }

    /// Integrate f over [a, b].
    pub fn integrate<F: Fn(f64) -> f64>(&self, a: f64, b: f64, f: F) -> f64 {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        let mut acc = 0.0;
        for (x, w) in self.nodes.iter().zip(&self.weights) {
            acc += w * f(mid + half * x);
        }
        acc * half
    }

    /// Nodes and weights mapped to [a, b].
    pub fn mapped(&self, a: f64, b: f64) -> Vec<(f64, f64)> {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(x, w)| (mid + half * x, w * half))
            .collect()
    }
}

/// Evaluate (P_n(x), P_n'(x)).
fn legendre(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Gauss-Hermite rule in probabilists' normalization: integrates
/// E[f(Z)] for Z ~ N(0,1), i.e. sum w_i f(x_i) with sum w_i = 1.
#[derive(Debug, Clone)]
pub struct GaussHermite {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussHermite {
    pub fn new(n: usize) -> Self {
        assert!(n >= 2, "quadrature order must be at least 2");
        // the Newton initial guesses degrade past ~160 nodes
        assert!(n <= 160, "Gauss-Hermite order capped at 160");
        // Physicists' rule for weight exp(-x^2), then rescale by sqrt(2).
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let m = n.div_ceil(2);
        let nf = n as f64;
        let mut roots = vec![0.0; m];
        let mut z = 0.0;
        for i in 0..m {
            z = match i {
                0 => (2.0 * nf + 1.0).sqrt() - 1.85575 * (2.0 * nf + 1.0).powf(-1.0 / 6.0),
                1 => z - 1.14 * nf.powf(0.426) / z,
                2 => 1.86 * z - 0.86 * roots[0],
                3 => 1.91 * z - 0.91 * roots[1],
                _ => 2.0 * z - roots[i - 2],
            };
            let mut dp = 0.0;
            for _ in 0..200 {
                let (p, d) = hermite(n, z);
                dp = d;
                let dz = p / d;
                z -= dz;
                if dz.abs() < 1e-14 * (1.0 + z.abs()) {
                    break;
                }
            }
            roots[i] = z;
            nodes[n - 1 - i] = z;
            nodes[i] = -z;
            // Physicists' weight: 2 / (dp^2) with orthonormal recurrence.
            let w = 2.0 / (dp * dp);
            weights[n - 1 - i] = w;
            weights[i] = w;
        }
        // Convert to probabilists' normalization: x -> sqrt(2) x,
        // weights sum to sqrt(pi) -> divide.
        let spi = std::f64::consts::PI.sqrt();
        for i in 0..n {
            nodes[i] *= std::f64::consts::SQRT_2;
            weights[i] /= spi;
        }
        GaussHermite { nodes, weights }
    }

    /// E[f(Z)], Z ~ N(0,1).
    pub fn expect<F: Fn(f64) -> f64>(&self, f: F) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(x, w)| w * f(*x)).sum()
    }
}

/// Orthonormal Hermite (physicists') value and derivative at x.
fn hermite(n: usize, x: f64) -> (f64, f64) {
    let pi4 = std::f64::consts::PI.powf(-0.25);
    let mut p0 = pi4;
    let mut p1 = std::f64::consts::SQRT_2 * x * pi4;
    for k in 2..=n {
        let k = k as f64;
        let p2 = x * (2.0 / k).sqrt() * p1 - ((k - 1.0) / k).sqrt() * p0;
        p0 = p1;
        p1 = p2;
    }
    let d = (2.0 * n as f64).sqrt() * p0;
    (p1, d)
}

/// Adaptive Simpson on [a, b] with absolute tolerance eps. The interval is
/// pre-split into panels so localized features cannot fool the coarse
/// first-level error estimate.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, eps: f64) -> f64 {
    let panels = 16;
    let mut acc = 0.0;
    for k in 0..panels {
        let pa = a + (b - a) * k as f64 / panels as f64;
        let pb = a + (b - a) * (k + 1) as f64 / panels as f64;
        acc += adaptive_simpson_raw(f, pa, pb, eps / panels as f64);
    }
    acc
}

fn adaptive_simpson_raw<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, eps: f64) -> f64 {
    fn simpson<F: Fn(f64) -> f64>(f: &F, a: f64, fa: f64, b: f64, fb: f64) -> (f64, f64, f64) {
        let c = 0.5 * (a + b);
        let fc = f(c);
        ((b - a) / 6.0 * (fa + 4.0 * fc + fb), c, fc)
    }
    fn recurse<F: Fn(f64) -> f64>(
        f: &F,
        a: f64,
        fa: f64,
        b: f64,
        fb: f64,
        c: f64,
        fc: f64,
        whole: f64,
        eps: f64,
        depth: u32,
    ) -> f64 {
        let (left, lc, flc) = simpson(f, a, fa, c, fc);
        let (right, rc, frc) = simpson(f, c, fc, b, fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * eps {
            left + right + delta / 15.0
        } else {
            recurse(f, a, fa, c, fc, lc, flc, left, eps / 2.0, depth - 1)
                + recurse(f, c, fc, b, fb, rc, frc, right, eps / 2.0, depth - 1)
        }
    }
    let fa = f(a);
    let fb = f(b);
    let (whole, c, fc) = simpson(f, a, fa, b, fb);
    // depth 18 bounds the bisection tree when the tolerance sits below the
    // integrand's floating-point noise floor
    recurse(f, a, fa, b, fb, c, fc, whole, eps, 18)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn legendre_exact_on_polynomials() {
        let gl = GaussLegendre::new(8);
        // degree 15 exact: int_0^1 x^15 = 1/16
        let v = gl.integrate(0.0, 1.0, |x| x.powi(15));
        assert!((v - 1.0 / 16.0).abs() < 1e-14);
        let s: f64 = gl.weights.iter().sum();
        assert!((s - 2.0).abs() < 1e-13);
    }

    #[test]
    fn legendre_smooth_integral() {
        let gl = GaussLegendre::new(24);
        let v = gl.integrate(0.0, 1.0, |x| (3.0 * x).sin() * (-x).exp());
        // oracle from adaptive Simpson
        let oracle = adaptive_simpson(&|x: f64| (3.0 * x).sin() * (-x).exp(), 0.0, 1.0, 1e-13);
        assert!((v - oracle).abs() < 1e-12);
    }

    #[test]
    fn hermite_moments() {
        let gh = GaussHermite::new(16);
        assert!((gh.expect(|_| 1.0) - 1.0).abs() < 1e-13);
        assert!(gh.expect(|x| x).abs() < 1e-13);
        assert!((gh.expect(|x| x * x) - 1.0).abs() < 1e-12);
        assert!((gh.expect(|x| x.powi(4)) - 3.0).abs() < 1e-11);
        assert!((gh.expect(|x| x.powi(6)) - 15.0).abs() < 1e-10);
    }

    #[test]
    fn hermite_nonpolynomial() {
        let gh = GaussHermite::new(40);
        // E[cos Z] = exp(-1/2)
        assert!((gh.expect(|x| x.cos()) - (-0.5f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn hermite_high_order_is_finite() {
        for n in [2, 3, 8, 24, 48, 64] {
            let gh = GaussHermite::new(n);
            assert!(gh.nodes.iter().all(|x| x.is_finite()));
            assert!((gh.expect(|_| 1.0) - 1.0).abs() < 1e-12, "order {n}");
        }
    }
}
