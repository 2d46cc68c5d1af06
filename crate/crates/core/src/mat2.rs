//! Symmetric 2x2 blocks for the kinetic covariance structure.
//!
//! Every covariance matrix in this crate decomposes into identical 2x2
//! blocks acting on one coordinate pair (x_i, v_i), so all linear algebra
//! is done in closed form per block and never through a dense
//! factorization.

/// Symmetric 2x2 matrix [[a, b], [b, c]] on one (x, v) coordinate pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sym2 {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl Sym2 {
    pub const fn new(a: f64, b: f64, c: f64) -> Self {
        Sym2 { a, b, c }
    }

    /// Kinetic covariance block scale * [[g^3/3, g^2/2], [g^2/2, g]] for a
    /// time gap g.
    pub fn kinetic(scale: f64, gap: f64) -> Self {
        Sym2 {
            a: scale * gap * gap * gap / 3.0,
            b: scale * gap * gap / 2.0,
            c: scale * gap,
        }
    }

    pub fn det(&self) -> f64 {
        self.a * self.c - self.b * self.b
    }

    pub fn inv(&self) -> Sym2 {
        let d = self.det();
        Sym2 { a: self.c / d, b: -self.b / d, c: self.a / d }
    }

    /// Lower Cholesky factor [[l11, 0], [l21, l22]].
    pub fn chol(&self) -> (f64, f64, f64) {
        let l11 = self.a.sqrt();
        let l21 = self.b / l11;
        let l22 = (self.c - l21 * l21).sqrt();
        (l11, l21, l22)
    }

    pub fn add(&self, other: &Sym2) -> Sym2 {
        Sym2 { a: self.a + other.a, b: self.b + other.b, c: self.c + other.c }
    }

    /// Conjugation by the shear exp(g B) = [[1, g], [0, 1]]:
    /// returns exp(gB) * S * exp(gB)^T.
    pub fn shear(&self, g: f64) -> Sym2 {
        Sym2 {
            a: self.a + 2.0 * g * self.b + g * g * self.c,
            b: self.b + g * self.c,
            c: self.c,
        }
    }

    /// Quadratic form w^T S w for w = (w1, w2).
    pub fn quad(&self, w1: f64, w2: f64) -> f64 {
        self.a * w1 * w1 + 2.0 * self.b * w1 * w2 + self.c * w2 * w2
    }

    /// Matrix-vector product S w.
    pub fn mul_vec(&self, w1: f64, w2: f64) -> (f64, f64) {
        (self.a * w1 + self.b * w2, self.b * w1 + self.c * w2)
    }

    /// Log-density of N(0, S) at w, for one 2-dimensional block.
    pub fn log_normal_density(&self, w1: f64, w2: f64) -> f64 {
        let inv = self.inv();
        -0.5 * inv.quad(w1, w2) - 0.5 * (self.det().ln() + 2.0 * LN_2PI)
    }

    /// Gaussian product: N(w; m1, S1) * N(w; m2, S2)
    /// = N(m1 - m2; 0, S1 + S2) * N(w; m, S).
    /// Returns (S, m, log prefactor) for one block.
    pub fn gaussian_product(
        s1: &Sym2,
        m1: (f64, f64),
        s2: &Sym2,
        m2: (f64, f64),
    ) -> (Sym2, (f64, f64), f64) {
        let i1 = s1.inv();
        let i2 = s2.inv();
        let prec = i1.add(&i2);
        let cov = prec.inv();
        let (r1, r2) = i1.mul_vec(m1.0, m1.1);
        let (q1, q2) = i2.mul_vec(m2.0, m2.1);
        let m = cov.mul_vec(r1 + q1, r2 + q2);
        let sum = s1.add(s2);
        let logpre = sum.log_normal_density(m1.0 - m2.0, m1.1 - m2.1);
        (cov, m, logpre)
    }
}

pub const LN_2PI: f64 = 1.8378770664093453;
