//! Smooth compactly supported test functions with exact derivatives, used
//! by the weak-solution, duality and backward-solver checks.

use crate::lie_group::PhasePoint;

/// Radial bump A * exp(1 - 1/(1 - |z - c|^2 / R^2)) supported on the
/// Euclidean ball of radius R around c, with closed-form gradient and
/// velocity Laplacian.
#[derive(Debug, Clone)]
pub struct SmoothBump {
    pub center: PhasePoint,
    pub radius: f64,
    pub amplitude: f64,
}

impl SmoothBump {
    pub fn new(center: PhasePoint, radius: f64, amplitude: f64) -> Self {
        SmoothBump { center, radius, amplitude }
    }

    pub fn standard(d: usize) -> Self {
        SmoothBump::new(PhasePoint::zero(d), 2.0, 1.0)
    }

    fn q(&self, z: &PhasePoint) -> f64 {
        let mut s = 0.0;
        for i in 0..z.dim() {
            let dx = z.x[i] - self.center.x[i];
            let dv = z.v[i] - self.center.v[i];
            s += dx * dx + dv * dv;
        }
        s / (self.radius * self.radius)
    }

    pub fn value(&self, z: &PhasePoint) -> f64 {
        let q = self.q(z);
        if q >= 1.0 {
            0.0
        } else {
            self.amplitude * (1.0 - 1.0 / (1.0 - q)).exp()
        }
    }

    /// d psi / d q.
    fn dpsi_dq(&self, q: f64, psi: f64) -> f64 {
        let r = 1.0 - q;
        -psi / (r * r)
    }

    pub fn grad_x(&self, z: &PhasePoint) -> Vec<f64> {
        let q = self.q(z);
        if q >= 1.0 {
            return vec![0.0; z.dim()];
        }
        let psi = self.value(z);
        let dq = self.dpsi_dq(q, psi);
        (0..z.dim())
            .map(|i| dq * 2.0 * (z.x[i] - self.center.x[i]) / (self.radius * self.radius))
            .collect()
    }

    pub fn grad_v(&self, z: &PhasePoint) -> Vec<f64> {
        let q = self.q(z);
        if q >= 1.0 {
            return vec![0.0; z.dim()];
        }
        let psi = self.value(z);
        let dq = self.dpsi_dq(q, psi);
        (0..z.dim())
            .map(|i| dq * 2.0 * (z.v[i] - self.center.v[i]) / (self.radius * self.radius))
            .collect()
    }

    pub fn laplace_v(&self, z: &PhasePoint) -> f64 {
        let q = self.q(z);
        if q >= 1.0 {
            return 0.0;
        }
        let psi = self.value(z);
        let r = 1.0 - q;
        let d1 = self.dpsi_dq(q, psi);
        // second derivative in q: psi (1/r^4 - 2/r^3)
        let d2 = psi * (1.0 / (r * r * r * r) - 2.0 / (r * r * r));
        let r2 = self.radius * self.radius;
        let mut acc = 0.0;
        for i in 0..z.dim() {
            let dv = z.v[i] - self.center.v[i];
            acc += d2 * (2.0 * dv / r2) * (2.0 * dv / r2) + d1 * 2.0 / r2;
        }
        acc
    }

    pub fn sup(&self) -> f64 {
        self.amplitude.abs()
    }

    /// Numerical sup of |grad psi| (radial profile scan).
    pub fn sup_grad(&self) -> f64 {
        let mut best = 0.0f64;
        for k in 1..2000 {
            let q = k as f64 / 2000.0;
            let psi = self.amplitude * (1.0 - 1.0 / (1.0 - q)).exp();
            let mag = (psi / ((1.0 - q) * (1.0 - q))) * 2.0 * q.sqrt() / self.radius;
            best = best.max(mag.abs());
        }
        best
    }

    /// Numerical sup of |laplace_v psi| on the support (1-D scan suffices
    /// for the radial profile at d = 1).
    pub fn sup_laplace_v(&self) -> f64 {
        let mut best = 0.0f64;
        let d = self.center.dim();
        for k in 0..2000 {
            let rho = k as f64 / 2000.0;
            let z = PhasePoint {
                x: self.center.x.clone(),
                v: self
                    .center
                    .v
                    .iter()
                    .map(|c| c + rho * self.radius / (d as f64).sqrt())
                    .collect(),
            };
            best = best.max(self.laplace_v(&z).abs());
        }
        best
    }
}
