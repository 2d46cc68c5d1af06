//! Euler-Maruyama simulation of the kinetic Langevin SDE
//! `dX = V dt, dV = F(t, X, V) dt + sqrt(2 sigma) dB`, with the cutoff
//! localization ladder for unbounded drift, per-path stopping-time
//! records, empirical measure flows and the weak-solution and moment
//! checks.
//!
//! Determinism contract: path i draws from the ChaCha stream keyed by
//! (seed, i); results are bitwise identical for a fixed seed under any
//! thread count, and ladder runs at different cutoff radii share the
//! noise stream, so they coincide exactly until the smaller exit time.

use crate::drift_fields::DriftField;
use crate::error::{Error, Result};
use crate::lie_group::PhasePoint;
use crate::rngs;
use crate::test_functions::SmoothBump;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::sync::Arc;

/// Initial law of (X_0, V_0).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialLaw {
    Point { x: Vec<f64>, v: Vec<f64> },
    GaussianProduct { mean_x: Vec<f64>, mean_v: Vec<f64>, std_x: f64, std_v: f64 },
}

impl InitialLaw {
    pub fn origin(d: usize) -> Self {
        InitialLaw::Point { x: vec![0.0; d], v: vec![0.0; d] }
    }

    fn dim(&self) -> usize {
        match self {
            InitialLaw::Point { x, .. } => x.len(),
            InitialLaw::GaussianProduct { mean_x, .. } => mean_x.len(),
        }
    }

    fn draw(&self, rng: &mut rand_chacha::ChaCha8Rng) -> PhasePoint {
        match self {
            InitialLaw::Point { x, v } => PhasePoint { x: x.clone(), v: v.clone() },
            InitialLaw::GaussianProduct { mean_x, mean_v, std_x, std_v } => PhasePoint {
                x: mean_x.iter().map(|m| m + std_x * rngs::normal(rng)).collect(),
                v: mean_v.iter().map(|m| m + std_v * rngs::normal(rng)).collect(),
            },
        }
    }

    /// Upper bound for the first moment E|Z_0| (exact for point masses).
    pub fn first_moment_bound(&self) -> f64 {
        match self {
            InitialLaw::Point { x, v } => {
                (x.iter().map(|c| c * c).sum::<f64>() + v.iter().map(|c| c * c).sum::<f64>())
                    .sqrt()
            }
            InitialLaw::GaussianProduct { mean_x, mean_v, std_x, std_v } => {
                // E|Z| <= sqrt(E|Z|^2)
                let d = mean_x.len() as f64;
                let m2: f64 = mean_x.iter().map(|c| c * c).sum::<f64>()
                    + mean_v.iter().map(|c| c * c).sum::<f64>()
                    + d * (std_x * std_x + std_v * std_v);
                m2.sqrt()
            }
        }
    }
}

/// Simulation configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub sigma: f64,
    pub horizon: f64,
    pub dt: f64,
    pub paths: usize,
    pub seed: u64,
    pub initial: InitialLaw,
    /// Store every k-th grid state (the final state is always stored).
    pub store_stride: usize,
    /// Cutoff ladder radii, strictly increasing.
    pub ladder: Vec<f64>,
    pub bump_smoothness: f64,
}

impl SimConfig {
    pub fn desk(d: usize) -> Self {
        SimConfig {
            sigma: 1.0,
            horizon: 1.0,
            dt: 1.0 / 1024.0,
            paths: 10_000,
            seed: 1,
            initial: InitialLaw::origin(d),
            store_stride: 16,
            ladder: vec![4.0, 8.0, 16.0, 32.0],
            bump_smoothness: 1.0,
        }
    }

    pub fn steps(&self) -> usize {
        (self.horizon / self.dt).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.dt <= 0.0 || self.horizon <= 0.0 || self.sigma <= 0.0 {
            return Err(Error::InvalidParameter("dt, horizon and sigma must be positive".into()));
        }
        let steps = self.horizon / self.dt;
        if (steps - steps.round()).abs() > 1e-9 {
            return Err(Error::InvalidParameter(format!(
                "horizon/dt must be integral, got {steps}"
            )));
        }
        if self.paths == 0 || self.store_stride == 0 {
            return Err(Error::InvalidParameter("paths and store_stride must be positive".into()));
        }
        if self.ladder.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidParameter("ladder radii must be strictly increasing".into()));
        }
        Ok(())
    }
}

/// Per-path summary record.
#[derive(Debug, Clone)]
pub struct PathRecord {
    /// max |B(t)| over the grid.
    pub max_b: f64,
    /// max |Z(t)| (Euclidean) over the grid.
    pub max_z: f64,
    pub max_x: f64,
    pub max_v: f64,
    /// First grid time exceeding each ladder radius, per tried level.
    pub exit_times: Vec<Option<f64>>,
    /// Ladder level adopted (0 = first radius).
    pub ladder_level: usize,
    /// Count of Groenwall-envelope violations along the path.
    pub gronwall_violations: usize,
    pub flagged: bool,
}

/// Simulated ensemble: states stored path-major at the stored subgrid.
#[derive(Debug)]
pub struct PathEnsemble {
    pub dim: usize,
    pub sigma: f64,
    pub times: Vec<f64>,
    /// layout: path * (times.len() * 2d) + time_index * 2d + [x.., v..]
    data: Vec<f64>,
    pub records: Vec<PathRecord>,
}

impl PathEnsemble {
    pub fn paths(&self) -> usize {
        self.records.len()
    }

    /// (x, v) slices of path p at stored index ti.
    pub fn state(&self, p: usize, ti: usize) -> (&[f64], &[f64]) {
        let d = self.dim;
        let base = p * self.times.len() * 2 * d + ti * 2 * d;
        (&self.data[base..base + d], &self.data[base + d..base + 2 * d])
    }

    pub fn phase_point(&self, p: usize, ti: usize) -> PhasePoint {
        let (x, v) = self.state(p, ti);
        PhasePoint { x: x.to_vec(), v: v.to_vec() }
    }

    /// Index of the stored time closest to t.
    pub fn time_index(&self, t: f64) -> usize {
        self.times
            .iter()
            .enumerate()
            .min_by(|a, b| {
                (a.1 - t).abs().partial_cmp(&(b.1 - t).abs()).unwrap()
            })
            .map(|(i, _)| i)
            .unwrap()
    }

    /// Binary columnar dump: header (magic, version, d, paths, times) then
    /// times and per-path per-time (x, v) blocks, all little-endian f64.
    pub fn write_binary(&self, path: &std::path::Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        f.write_all(b"KFPPATH1")?;
        f.write_all(&1u32.to_le_bytes())?;
        f.write_all(&(self.dim as u32).to_le_bytes())?;
        f.write_all(&(self.paths() as u64).to_le_bytes())?;
        f.write_all(&(self.times.len() as u64).to_le_bytes())?;
        for t in &self.times {
            f.write_all(&t.to_le_bytes())?;
        }
        for v in &self.data {
            f.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }
}

/// Groenwall envelope constant from the declared field constants:
/// C = max{1, C(F)(3 - 4 beta / 3), sqrt(2 sigma), C(F) beta + 1}.
pub fn gronwall_constant(field: &DriftField, sigma: f64) -> f64 {
    let c = field.growth_c;
    let beta = field.growth_beta;
    [1.0, c * (3.0 - 4.0 * beta / 3.0), (2.0 * sigma).sqrt(), c * beta + 1.0]
        .into_iter()
        .fold(0.0f64, f64::max)
}

struct PathOutput {
    stored: Vec<f64>,
    record: PathRecord,
}

/// Simulate one path with the given drift; optional exit radius for the
/// ladder (first grid time with |Z| > radius stops further exit checks but
/// the path keeps running; callers decide whether to retry).
#[allow(clippy::too_many_arguments)]
fn simulate_path(
    field: &DriftField,
    config: &SimConfig,
    path_index: u64,
    store_at: &[usize],
    exit_radii: &[f64],
    gronwall_c: f64,
    z0_override: Option<&PhasePoint>,
) -> PathOutput {
    let d = field.dim;
    let mut rng = rngs::stream(config.seed, path_index);
    let z0 = match z0_override {
        Some(z) => z.clone(),
        None => config.initial.draw(&mut rng),
    };
    let steps = config.steps();
    let mut x = z0.x.clone();
    let mut v = z0.v.clone();
    let mut b = vec![0.0; d];
    let mut fbuf = vec![0.0; d];
    let sqrt_noise = (2.0 * config.sigma * config.dt).sqrt();
    let sqrt_dt = config.dt.sqrt();
    let z0_norm = z0.euclidean_norm();

    let mut stored = Vec::with_capacity(store_at.len() * 2 * d);
    let mut record = PathRecord {
        max_b: 0.0,
        max_z: z0_norm,
        max_x: z0.x.iter().map(|c| c * c).sum::<f64>().sqrt(),
        max_v: z0.v.iter().map(|c| c * c).sum::<f64>().sqrt(),
        exit_times: vec![None; exit_radii.len()],
        ladder_level: 0,
        gronwall_violations: 0,
        flagged: false,
    };
    let mut store_cursor = 0;
    if store_at.first() == Some(&0) {
        stored.extend_from_slice(&x);
        stored.extend_from_slice(&v);
        store_cursor = 1;
    }
    for k in 0..steps {
        let t = k as f64 * config.dt;
        field.eval_into(t, &x, &v, &mut fbuf);
        if fbuf.iter().any(|c| !c.is_finite()) {
            record.flagged = true;
            fbuf.fill(0.0);
        }
        for i in 0..d {
            let xi = rngs::normal(&mut rng);
            x[i] += v[i] * config.dt;
            v[i] += fbuf[i] * config.dt + sqrt_noise * xi;
            b[i] += sqrt_dt * xi;
        }
        let t_next = (k + 1) as f64 * config.dt;
        let nx: f64 = x.iter().map(|c| c * c).sum::<f64>().sqrt();
        let nv: f64 = v.iter().map(|c| c * c).sum::<f64>().sqrt();
        let nz = (nx * nx + nv * nv).sqrt();
        let nb: f64 = b.iter().map(|c| c * c).sum::<f64>().sqrt();
        record.max_x = record.max_x.max(nx);
        record.max_v = record.max_v.max(nv);
        record.max_z = record.max_z.max(nz);
        record.max_b = record.max_b.max(nb);
        for (ri, r) in exit_radii.iter().enumerate() {
            if record.exit_times[ri].is_none() && nz > *r {
                record.exit_times[ri] = Some(t_next);
            }
        }
        // Groenwall envelope |Z(t)| <= C (|Z0| + t + max|B|) e^{Ct}
        let envelope =
            gronwall_c * (z0_norm + t_next + record.max_b) * (gronwall_c * t_next).exp();
        if nz > envelope {
            record.gronwall_violations += 1;
        }
        if store_cursor < store_at.len() && store_at[store_cursor] == k + 1 {
            stored.extend_from_slice(&x);
            stored.extend_from_slice(&v);
            store_cursor += 1;
        }
    }
    PathOutput { stored, record }
}

fn stored_indices(config: &SimConfig) -> Vec<usize> {
    let steps = config.steps();
    let mut idx: Vec<usize> = (0..=steps).step_by(config.store_stride).collect();
    if idx.last() != Some(&steps) {
        idx.push(steps);
    }
    idx
}

/// Plain Euler-Maruyama ensemble (no cutoff).
pub fn euler_maruyama(field: &DriftField, config: &SimConfig) -> Result<PathEnsemble> {
    config.validate()?;
    if field.dim != config.initial.dim() {
        return Err(Error::DimensionMismatch(field.dim, config.initial.dim()));
    }
    let store_at = stored_indices(config);
    let gc = gronwall_constant(field, config.sigma);
    let outputs: Vec<PathOutput> = (0..config.paths)
        .into_par_iter()
        .map(|p| simulate_path(field, config, p as u64, &store_at, &[], gc, None))
        .collect();
    assemble(field.dim, config, &store_at, outputs)
}

fn assemble(
    d: usize,
    config: &SimConfig,
    store_at: &[usize],
    outputs: Vec<PathOutput>,
) -> Result<PathEnsemble> {
    let times: Vec<f64> = store_at.iter().map(|k| *k as f64 * config.dt).collect();
    let mut data = Vec::with_capacity(outputs.len() * times.len() * 2 * d);
    let mut records = Vec::with_capacity(outputs.len());
    for out in outputs {
        data.extend_from_slice(&out.stored);
        records.push(out.record);
    }
    Ok(PathEnsemble { dim: d, sigma: config.sigma, times, data, records })
}

/// F * eta_radius with eta a smooth radial bump in the Euclidean norm:
/// identically 1 on the ball of the given radius, vanishing outside
/// radius + 1.
pub fn cutoff_drift(field: &DriftField, radius: f64, smoothness: f64) -> Result<DriftField> {
    if radius < 1.0 {
        return Err(Error::InvalidParameter("cutoff radius must be >= 1".into()));
    }
    let parent = field.clone();
    let d = field.dim;
    let transition = move |s: f64| -> f64 {
        // C^infty partition step: 1 at s = 0, 0 at s = 1
        if s <= 0.0 {
            1.0
        } else if s >= 1.0 {
            0.0
        } else {
            let phi = (-smoothness / (1.0 - s)).exp();
            let psi = (-smoothness / s).exp();
            phi / (phi + psi)
        }
    };
    // sup ||z||_B over the Euclidean ball of radius R
    let r1 = radius + 1.0;
    let df = d as f64;
    let gauge_sup = df.powf(5.0 / 6.0) * r1.cbrt() + df.sqrt() * r1;
    let bounded_sup = field.growth_c * (1.0 + gauge_sup.powf(field.growth_beta));
    let inner = parent.clone();
    DriftField::from_fn(
        format!("{}*cutoff({radius})", parent.name),
        d,
        field.growth_c,
        field.growth_beta,
        field.holder_l,
        field.holder_alpha,
        Some(bounded_sup),
        Arc::new(move |t, x, v, out| {
            inner.eval_into(t, x, v, out);
            let nz = (x.iter().map(|c| c * c).sum::<f64>()
                + v.iter().map(|c| c * c).sum::<f64>())
            .sqrt();
            let eta = transition(nz - radius);
            out.iter_mut().for_each(|o| *o *= eta);
        }),
    )
}

/// Localized solve: per path, run with the first cutoff radius; on grid
/// exit restart from time zero with the next radius and the same noise
/// stream; adopt the first run that stays inside its ball through the
/// horizon. Paths for radii m <= n coincide bitwise up to the recorded
/// exit time by construction.
pub fn localized_solve(field: &DriftField, config: &SimConfig) -> Result<PathEnsemble> {
    config.validate()?;
    if config.ladder.is_empty() {
        return Err(Error::InvalidParameter("localized solve needs a cutoff ladder".into()));
    }
    let store_at = stored_indices(config);
    let gc = gronwall_constant(field, config.sigma);
    let cutoffs: Vec<DriftField> = config
        .ladder
        .iter()
        .map(|r| cutoff_drift(field, *r, config.bump_smoothness))
        .collect::<Result<_>>()?;
    let outputs: Vec<Result<PathOutput>> = (0..config.paths)
        .into_par_iter()
        .map(|p| {
            let mut rng = rngs::stream(config.seed, p as u64);
            let z0 = config.initial.draw(&mut rng);
            let mut adopted: Option<PathOutput> = None;
            let mut exits: Vec<Option<f64>> = Vec::new();
            for (level, cut) in cutoffs.iter().enumerate() {
                let mut out = simulate_path(
                    cut,
                    config,
                    p as u64,
                    &store_at,
                    &config.ladder,
                    gc,
                    Some(&z0),
                );
                exits.push(out.record.exit_times[level]);
                if out.record.exit_times[level].is_none() {
                    out.record.ladder_level = level;
                    out.record.exit_times = exits.clone();
                    adopted = Some(out);
                    break;
                }
            }
            match adopted {
                Some(mut out) => {
                    out.record.exit_times.resize(config.ladder.len(), None);
                    Ok(out)
                }
                None => {
                    let bound = gc
                        * (z0.euclidean_norm() + config.horizon + 3.0 * config.horizon.sqrt())
                        * (gc * config.horizon).exp();
                    Err(Error::LadderExhausted {
                        max_radius: *config.ladder.last().unwrap(),
                        hint: format!(
                            "Groenwall-predicted radius C(|Z0|+T+max|B|)e^{{CT}} ~ {bound:.2}; \
                             extend the ladder beyond it"
                        ),
                    })
                }
            }
        })
        .collect();
    let outputs: Vec<PathOutput> = outputs.into_iter().collect::<Result<_>>()?;
    assemble(field.dim, config, &store_at, outputs)
}

/// Time-indexed empirical measures with uniform weights.
pub struct EmpiricalFlow {
    pub dim: usize,
    pub times: Vec<f64>,
    /// time-major: states[ti] is a flat [x.., v..] per path.
    pub states: Vec<Vec<f64>>,
}

impl EmpiricalFlow {
    pub fn samples(&self, ti: usize) -> usize {
        self.states[ti].len() / (2 * self.dim)
    }

    pub fn point(&self, ti: usize, p: usize) -> PhasePoint {
        let d = self.dim;
        let row = &self.states[ti][p * 2 * d..(p + 1) * 2 * d];
        PhasePoint { x: row[..d].to_vec(), v: row[d..].to_vec() }
    }

    /// Uniform weight of each sample at a stored time.
    pub fn weight(&self, ti: usize) -> f64 {
        1.0 / self.samples(ti) as f64
    }

    /// 1-D projection u . z of the cloud at a stored time.
    pub fn project(&self, ti: usize, direction: &[f64]) -> Vec<f64> {
        let d = self.dim;
        (0..self.samples(ti))
            .map(|p| {
                let row = &self.states[ti][p * 2 * d..(p + 1) * 2 * d];
                row.iter().zip(direction).map(|(a, b)| a * b).sum()
            })
            .collect()
    }
}

/// Restrict an ensemble to a subgrid of its stored times.
pub fn empirical_flow(ensemble: &PathEnsemble, time_indices: &[usize]) -> Result<EmpiricalFlow> {
    let d = ensemble.dim;
    let mut times = Vec::with_capacity(time_indices.len());
    let mut states = Vec::with_capacity(time_indices.len());
    for &ti in time_indices {
        if ti >= ensemble.times.len() {
            return Err(Error::InvalidParameter(format!("time index {ti} out of range")));
        }
        times.push(ensemble.times[ti]);
        let mut row = Vec::with_capacity(ensemble.paths() * 2 * d);
        for p in 0..ensemble.paths() {
            let (x, v) = ensemble.state(p, ti);
            row.extend_from_slice(x);
            row.extend_from_slice(v);
        }
        states.push(row);
    }
    Ok(EmpiricalFlow { dim: d, times, states })
}

/// Weak-solution residual at a stored time: per-path
/// psi(Z_t) - psi(Z_0) - trapezoid of (v.grad_x + F.grad_v + sigma
/// Laplace_v) psi over the stored grid, averaged across paths.
pub fn weak_solution_residual(
    ensemble: &PathEnsemble,
    field: &DriftField,
    sigma: f64,
    psi: &SmoothBump,
    t_index: usize,
) -> Result<(f64, f64)> {
    if t_index >= ensemble.times.len() {
        return Err(Error::InvalidParameter(format!("time index {t_index} out of range")));
    }
    let gen_at = |t: f64, z: &PhasePoint| -> Result<f64> {
        let gx = psi.grad_x(z);
        let gv = psi.grad_v(z);
        let f = field.eval(t, z)?;
        let mut acc = sigma * psi.laplace_v(z);
        for i in 0..z.dim() {
            acc += z.v[i] * gx[i] + f[i] * gv[i];
        }
        Ok(acc)
    };
    let per_path: Vec<f64> = (0..ensemble.paths())
        .map(|p| -> Result<f64> {
            let z0 = ensemble.phase_point(p, 0);
            let zt = ensemble.phase_point(p, t_index);
            let mut integral = 0.0;
            for ti in 0..t_index {
                let (ta, tb) = (ensemble.times[ti], ensemble.times[ti + 1]);
                let ga = gen_at(ta, &ensemble.phase_point(p, ti))?;
                let gb = gen_at(tb, &ensemble.phase_point(p, ti + 1))?;
                integral += 0.5 * (ga + gb) * (tb - ta);
            }
            Ok(psi.value(&zt) - psi.value(&z0) - integral)
        })
        .collect::<Result<_>>()?;
    Ok((crate::stats::mean(&per_path), crate::stats::standard_error(&per_path)))
}

/// Empirical sup-moment report against the closed-form bounds
/// H_{1,V} = M_1 + ||F||_inf T + sqrt(8 sigma T), H_{1,X} = M_1 + T H_{1,V}.
#[derive(Debug, Clone, Serialize)]
pub struct MomentReport {
    pub e_sup_v: f64,
    pub e_sup_x: f64,
    pub e_sup_z: f64,
    pub h1_v: f64,
    pub h1_x: f64,
    pub h1: f64,
    pub f_sup_used: f64,
    pub f_sup_from_cutoff: bool,
    pub gronwall_violations: usize,
    pub pass: bool,
}

pub fn moment_bound_check(
    ensemble: &PathEnsemble,
    field: &DriftField,
    config: &SimConfig,
) -> MomentReport {
    let m1 = config.initial.first_moment_bound();
    let (f_sup, from_cutoff) = match field.bounded_sup {
        Some(s) => (s, false),
        None => {
            // unbounded field: use the sup of the largest cutoff actually
            // configured, noted in the report
            let r = config.ladder.last().copied().unwrap_or(8.0);
            let cut = cutoff_drift(field, r, config.bump_smoothness)
                .map(|c| c.bounded_sup.unwrap_or(f64::INFINITY))
                .unwrap_or(f64::INFINITY);
            (cut, true)
        }
    };
    let t = config.horizon;
    let h1_v = m1 + f_sup * t + (8.0 * config.sigma * t).sqrt();
    let h1_x = m1 + t * h1_v;
    let h1 = h1_v + h1_x;
    let sup_v: Vec<f64> = ensemble.records.iter().map(|r| r.max_v).collect();
    let sup_x: Vec<f64> = ensemble.records.iter().map(|r| r.max_x).collect();
    let sup_z: Vec<f64> = ensemble.records.iter().map(|r| r.max_z).collect();
    let e_sup_v = crate::stats::mean(&sup_v);
    let e_sup_x = crate::stats::mean(&sup_x);
    let e_sup_z = crate::stats::mean(&sup_z);
    let gronwall_violations = ensemble.records.iter().map(|r| r.gronwall_violations).sum();
    let pass = e_sup_v <= h1_v && e_sup_x <= h1_x && e_sup_z <= h1 && gronwall_violations == 0;
    MomentReport {
        e_sup_v,
        e_sup_x,
        e_sup_z,
        h1_v,
        h1_x,
        h1,
        f_sup_used: f_sup,
        f_sup_from_cutoff: from_cutoff,
        gronwall_violations,
        pass,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian_kernel::CovarianceConvention;

    fn quick_config(paths: usize) -> SimConfig {
        SimConfig { paths, dt: 1.0 / 512.0, store_stride: 32, ..SimConfig::desk(1) }
    }

    #[test]
    fn driftless_moments_match_generator_covariance() {
        let field = DriftField::zero(1);
        let config = quick_config(100_000);
        let ens = euler_maruyama(&field, &config).unwrap();
        let last = ens.times.len() - 1;
        let xs: Vec<f64> = (0..ens.paths()).map(|p| ens.state(p, last).0[0]).collect();
        let vs: Vec<f64> = (0..ens.paths()).map(|p| ens.state(p, last).1[0]).collect();
        let n = ens.paths() as f64;
        // Var V_T = 2, Var X_T = 2/3, Cov = 1 (sigma = T = 1); Euler bias
        // on Var X is O(dt), well inside the 4 SE window at this n.
        let vv = crate::stats::variance(&vs);
        let vx = crate::stats::variance(&xs);
        let cxv = crate::stats::covariance(&xs, &vs);
        assert!((vv - 2.0).abs() < 4.0 * 2.0 * (2.0f64 / n).sqrt(), "Var V = {vv}");
        assert!((vx - 2.0 / 3.0).abs() < 4.0 * (2.0 / 3.0) * (2.0f64 / n).sqrt() + 2e-3, "Var X = {vx}");
        let se_c = ((2.0 * 2.0f64 / 3.0 + 1.0) / n).sqrt();
        assert!((cxv - 1.0).abs() < 4.0 * se_c + 2e-3, "Cov = {cxv}");
    }

    #[test]
    fn constant_drift_means() {
        let c = 0.8;
        let field = DriftField::constant(vec![c]);
        let config = quick_config(50_000);
        let ens = euler_maruyama(&field, &config).unwrap();
        let last = ens.times.len() - 1;
        let xs: Vec<f64> = (0..ens.paths()).map(|p| ens.state(p, last).0[0]).collect();
        let vs: Vec<f64> = (0..ens.paths()).map(|p| ens.state(p, last).1[0]).collect();
        let n = ens.paths() as f64;
        let se_v = (2.0f64 / n).sqrt();
        let se_x = (0.667f64 / n).sqrt();
        assert!((crate::stats::mean(&vs) - c).abs() < 4.0 * se_v + 1e-3);
        assert!((crate::stats::mean(&xs) - c / 2.0).abs() < 4.0 * se_x + 1e-3);
    }

    #[test]
    fn weak_error_first_order() {
        // E[psi(Z_T)] error decreases roughly linearly in dt
        let field = DriftField::oscillatory(1, 1.0, 1.0);
        let psi = SmoothBump::standard(1);
        let mut means = Vec::new();
        for &dt in &[1.0 / 64.0, 1.0 / 128.0, 1.0 / 256.0, 1.0 / 2048.0] {
            let config = SimConfig {
                dt,
                paths: 200_000,
                store_stride: 100_000,
                seed: 7,
                ..SimConfig::desk(1)
            };
            let ens = euler_maruyama(&field, &config).unwrap();
            let last = ens.times.len() - 1;
            let vals: Vec<f64> =
                (0..ens.paths()).map(|p| psi.value(&ens.phase_point(p, last))).collect();
            means.push(crate::stats::mean(&vals));
        }
        let reference = means[3];
        let e0 = (means[0] - reference).abs();
        let e1 = (means[1] - reference).abs();
        let e2 = (means[2] - reference).abs();
        assert!(e1 < e0 && e2 < e1, "weak errors not decreasing: {e0} {e1} {e2}");
        let order = (e0 / e1).log2();
        assert!(order > 0.5 && order < 2.0, "observed weak order {order}");
    }

    #[test]
    fn determinism_bitwise() {
        let field = DriftField::holder_growth(1, 0.8, 0.5, 7).unwrap();
        let config = quick_config(32);
        let a = euler_maruyama(&field, &config).unwrap();
        let b = euler_maruyama(&field, &config).unwrap();
        for p in 0..32 {
            let last = a.times.len() - 1;
            assert_eq!(a.state(p, last).0[0].to_bits(), b.state(p, last).0[0].to_bits());
            assert_eq!(a.state(p, last).1[0].to_bits(), b.state(p, last).1[0].to_bits());
        }
    }

    #[test]
    fn cutoff_field_geometry() {
        let field = DriftField::holder_growth(1, 1.0, 0.5, 7).unwrap();
        let cut = cutoff_drift(&field, 4.0, 1.0).unwrap();
        // inside the ball: identical
        let z_in = PhasePoint::d1(1.0, 2.0);
        assert_eq!(field.eval(0.3, &z_in).unwrap(), cut.eval(0.3, &z_in).unwrap());
        // outside radius + 1: zero
        let z_out = PhasePoint::d1(5.0, 3.0);
        assert_eq!(cut.eval(0.0, &z_out).unwrap(), vec![0.0]);
        // transition zone: between 0 and 1 and continuous
        let mut prev = 1.0;
        for k in 0..=100 {
            let r = 4.0 + k as f64 / 100.0;
            let z = PhasePoint::d1(r / 2f64.sqrt(), r / 2f64.sqrt());
            let full = field.eval(0.0, &z).unwrap()[0];
            let cutv = cut.eval(0.0, &z).unwrap()[0];
            let eta = if full != 0.0 { cutv / full } else { 1.0 };
            assert!((0.0..=1.0 + 1e-12).contains(&eta), "eta = {eta} at r = {r}");
            assert!(eta <= prev + 1e-6, "bump must decrease radially");
            prev = eta;
        }
        assert!(cut.bounded_sup.unwrap().is_finite());
    }

    #[test]
    fn ladder_monotone_exits_and_shared_noise() {
        let field = DriftField::holder_growth(1, 1.0, 0.5, 7).unwrap();
        let config = SimConfig {
            ladder: vec![1.0, 1.5, 2.0, 4.0, 8.0],
            paths: 2000,
            dt: 1.0 / 256.0,
            store_stride: 8,
            ..SimConfig::desk(1)
        };
        let ens = localized_solve(&field, &config).unwrap();
        for rec in &ens.records {
            // recorded exits nondecreasing in the radius
            let mut last = 0.0;
            for e in rec.exit_times.iter().flatten() {
                assert!(*e >= last, "exit times must be nondecreasing: {:?}", rec.exit_times);
                last = *e;
            }
            assert!(rec.ladder_level < config.ladder.len());
        }
        // shared-noise coupling: paths at two radii agree before the
        // smaller exit time, bitwise
        let small = cutoff_drift(&field, 1.0, 1.0).unwrap();
        let large = cutoff_drift(&field, 2.0, 1.0).unwrap();
        let cfg_small = SimConfig { ladder: vec![], store_stride: 1, paths: 64, ..config.clone() };
        let a = euler_maruyama(&small, &cfg_small).unwrap();
        let b = euler_maruyama(&large, &cfg_small).unwrap();
        for p in 0..64 {
            // find first stored index where |Z| > 1 for the small run
            for ti in 0..a.times.len() {
                let (ax, av) = a.state(p, ti);
                let nz = (ax[0] * ax[0] + av[0] * av[0]).sqrt();
                let (bx, bv) = b.state(p, ti);
                assert_eq!(ax[0].to_bits(), bx[0].to_bits());
                assert_eq!(av[0].to_bits(), bv[0].to_bits());
                if nz > 1.0 {
                    break;
                }
            }
        }
    }

    #[test]
    fn ladder_exhaustion_reports_gronwall_hint() {
        let field = DriftField::holder_growth(1, 1.0, 0.5, 7).unwrap();
        let config = SimConfig {
            ladder: vec![1.0],
            paths: 200,
            dt: 1.0 / 128.0,
            ..SimConfig::desk(1)
        };
        let err = localized_solve(&field, &config).unwrap_err();
        match err {
            Error::LadderExhausted { hint, .. } => {
                assert!(hint.contains("Groenwall"), "hint: {hint}")
            }
            other => panic!("expected ladder exhaustion, got {other:?}"),
        }
    }

    #[test]
    fn empirical_flow_mass_and_point_mass() {
        let field = DriftField::zero(1);
        let config = quick_config(1);
        let ens = euler_maruyama(&field, &config).unwrap();
        let flow = empirical_flow(&ens, &[0, ens.times.len() - 1]).unwrap();
        assert_eq!(flow.samples(0), 1);
        assert_eq!(flow.weight(0), 1.0);
        let config = quick_config(500);
        let ens = euler_maruyama(&field, &config).unwrap();
        let flow = empirical_flow(&ens, &[0, 1, ens.times.len() - 1]).unwrap();
        for ti in 0..flow.times.len() {
            let total: f64 = (0..flow.samples(ti)).map(|_| flow.weight(ti)).sum();
            assert!((total - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn driftless_law_matches_kernel_by_ks() {
        let field = DriftField::zero(1);
        let config = quick_config(100_000);
        let ens = euler_maruyama(&field, &config).unwrap();
        let last = ens.times.len() - 1;
        let sde_x: Vec<f64> = (0..ens.paths()).map(|p| ens.state(p, last).0[0]).collect();
        let sde_v: Vec<f64> = (0..ens.paths()).map(|p| ens.state(p, last).1[0]).collect();
        let kernel = crate::gaussian_kernel::sample(
            1.0,
            0.0,
            &PhasePoint::d1(0.0, 0.0),
            1.0,
            100_000,
            99,
            0,
            CovarianceConvention::Generator,
        )
        .unwrap();
        let ker_x: Vec<f64> = kernel.iter().map(|p| p.x[0]).collect();
        let ker_v: Vec<f64> = kernel.iter().map(|p| p.v[0]).collect();
        let (_, px) = crate::stats::ks_two_sample(&sde_x, &ker_x);
        let (_, pv) = crate::stats::ks_two_sample(&sde_v, &ker_v);
        assert!(px > 0.01, "x marginal KS p = {px}");
        assert!(pv > 0.01, "v marginal KS p = {pv}");
    }

    #[test]
    fn weak_solution_residual_within_se() {
        let psi = SmoothBump::standard(1);
        for field in [
            DriftField::zero(1),
            DriftField::oscillatory(1, 1.0, 1.0),
            DriftField::holder_growth(1, 0.8, 0.5, 7).unwrap(),
        ] {
            let config = SimConfig { paths: 40_000, ..quick_config(40_000) };
            let ens = euler_maruyama(&field, &config).unwrap();
            // t = 0 vanishes exactly
            let (r0, _) = weak_solution_residual(&ens, &field, 1.0, &psi, 0).unwrap();
            assert_eq!(r0, 0.0);
            let last = ens.times.len() - 1;
            let (r, se) = weak_solution_residual(&ens, &field, 1.0, &psi, last).unwrap();
            // 3 SE plus an O(dt) weak-bias budget
            let budget = 2.0 * config.dt * (psi.sup_grad() + psi.sup_laplace_v());
            assert!(r.abs() <= 3.0 * se + budget, "field {}: residual {r} vs SE {se}", field.name);
        }
    }

    #[test]
    fn moment_bounds_driftless() {
        let field = DriftField::zero(1);
        let config = quick_config(20_000);
        let ens = euler_maruyama(&field, &config).unwrap();
        let rep = moment_bound_check(&ens, &field, &config);
        assert!((rep.h1_v - (8.0f64).sqrt()).abs() < 1e-12);
        assert!(rep.e_sup_v < rep.h1_v, "E sup |V| = {} vs {}", rep.e_sup_v, rep.h1_v);
        assert!(rep.pass, "report: {rep:?}");
        assert_eq!(rep.gronwall_violations, 0);
    }

    #[test]
    fn binary_dump_layout() {
        let field = DriftField::zero(1);
        let config = quick_config(3);
        let ens = euler_maruyama(&field, &config).unwrap();
        let dir = std::env::temp_dir().join("kfp_path_dump_test");
        std::fs::create_dir_all(&dir).unwrap();
        let file = dir.join("paths.bin");
        ens.write_binary(&file).unwrap();
        let bytes = std::fs::read(&file).unwrap();
        assert_eq!(&bytes[..8], b"KFPPATH1");
        let d = u32::from_le_bytes(bytes[12..16].try_into().unwrap());
        let n = u64::from_le_bytes(bytes[16..24].try_into().unwrap());
        let nt = u64::from_le_bytes(bytes[24..32].try_into().unwrap());
        assert_eq!((d, n, nt), (1, 3, ens.times.len() as u64));
        let expected = 32 + 8 * (nt as usize) + 8 * 3 * (nt as usize) * 2;
        assert_eq!(bytes.len(), expected);
        std::fs::remove_dir_all(&dir).ok();
    }
}
