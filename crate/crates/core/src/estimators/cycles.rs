//! Estimators built on regeneration cycles: velocity, diffusion matrix,
//! cycle-average functionals and the tail of the cycle length.
//!
//! Cycles are annealed-i.i.d., so they are produced in batches: each batch
//! draws a fresh environment and walk seed and runs its share of consecutive
//! cycles. Batches run in parallel and are reduced in batch order.

use serde::{Deserialize, Serialize};

use super::stats::{mean_se, par_replicas, split_evenly, vector_mean_se, EstimateWithError, LineFit, ScanPoint, ScanResult};
use crate::environment::{Environment, SiteLaws};
use crate::error::{Error, Result};
use crate::lattice::LatticePoint;
use crate::model::{validate_model, ModelSpec, ValidationReport};
use crate::rng::derive_seed;
use crate::walker::{Walk, DEFAULT_CYCLE_CAP};

pub(crate) fn default_cycle_cap() -> u64 {
    DEFAULT_CYCLE_CAP
}

fn default_batches() -> usize {
    100
}

/// Checks forbidden direction and nonnestling, without which cycles need not end.
pub fn require_ballistic(model: &ModelSpec) -> Result<ValidationReport> {
    let report = validate_model(model)?;
    if !report.forbidden_direction_ok {
        return Err(Error::Precondition(
            "model violates the forbidden direction".into(),
        ));
    }
    if report.nonnestling_delta.is_none() {
        return Err(Error::Precondition("model is not nonnestling".into()));
    }
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CycleParams {
    pub cycles: u64,
    #[serde(default = "default_batches")]
    pub batches: usize,
    #[serde(default = "default_cycle_cap")]
    pub cycle_cap: u64,
}

impl CycleParams {
    pub fn new(cycles: u64) -> Self {
        CycleParams {
            cycles,
            batches: default_batches(),
            cycle_cap: DEFAULT_CYCLE_CAP,
        }
    }
}

/// Runs `f` once per batch on a walk from the origin in a fresh environment.
pub(crate) fn run_batches<T, F>(model: &ModelSpec, cycles: u64, batches: usize, seed: u64, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(&mut Walk<'_, Environment<'_>>, u64) -> Result<T> + Sync + Send,
{
    if cycles == 0 {
        return Err(Error::Precondition("at least one cycle is required".into()));
    }
    let sizes = split_evenly(cycles, batches.clamp(1, cycles.min(usize::MAX as u64) as usize));
    par_replicas(sizes.len(), |b| {
        let env = Environment::new(model, derive_seed(seed, &[b as u64, 0]));
        let mut walk = Walk::new(&env, LatticePoint::origin(model.dimension()), derive_seed(seed, &[b as u64, 1]));
        f(&mut walk, sizes[b])
    })
}

/// Exact integer moments of `(tau_i, Delta_i)` over a set of cycles.
#[derive(Clone, Debug, PartialEq)]
struct CycleMoments {
    d: usize,
    n: u64,
    t: i128,
    s: Vec<i128>,
    m_dd: Vec<i128>,
    m_td: Vec<i128>,
    m_tt: i128,
}

impl CycleMoments {
    fn new(d: usize) -> Self {
        CycleMoments {
            d,
            n: 0,
            t: 0,
            s: vec![0; d],
            m_dd: vec![0; d * d],
            m_td: vec![0; d],
            m_tt: 0,
        }
    }

    fn add(&mut self, tau: u64, delta: &LatticePoint) {
        let tau = tau as i128;
        let x = delta.coords();
        self.n += 1;
        self.t += tau;
        self.m_tt += tau * tau;
        for j in 0..self.d {
            let xj = x[j] as i128;
            self.s[j] += xj;
            self.m_td[j] += tau * xj;
            for k in 0..self.d {
                self.m_dd[j * self.d + k] += xj * x[k] as i128;
            }
        }
    }

    fn merge(&mut self, o: &CycleMoments) {
        self.n += o.n;
        self.t += o.t;
        self.m_tt += o.m_tt;
        for j in 0..self.d {
            self.s[j] += o.s[j];
            self.m_td[j] += o.m_td[j];
        }
        for (a, b) in self.m_dd.iter_mut().zip(&o.m_dd) {
            *a += b;
        }
    }

    /// `Q = sum_i c_i c_i^t` with `c_i = Delta_i T - S tau_i`, computed exactly.
    fn centered_form(&self) -> Result<Vec<i128>> {
        const OVF: &str = "cycle moment arithmetic";
        let t = self.t;
        let t2 = t.checked_mul(t).ok_or(Error::Overflow(OVF))?;
        let mut q = vec![0i128; self.d * self.d];
        for j in 0..self.d {
            for k in 0..self.d {
                let a = t2.checked_mul(self.m_dd[j * self.d + k]).ok_or(Error::Overflow(OVF))?;
                let cross = self.s[j]
                    .checked_mul(self.m_td[k])
                    .and_then(|x| x.checked_add(self.m_td[j].checked_mul(self.s[k])?))
                    .and_then(|x| x.checked_mul(t))
                    .ok_or(Error::Overflow(OVF))?;
                let c = self.s[j]
                    .checked_mul(self.s[k])
                    .and_then(|x| x.checked_mul(self.m_tt))
                    .ok_or(Error::Overflow(OVF))?;
                q[j * self.d + k] = a
                    .checked_sub(cross)
                    .and_then(|x| x.checked_add(c))
                    .ok_or(Error::Overflow(OVF))?;
            }
        }
        Ok(q)
    }

    fn velocity(&self) -> Vec<f64> {
        self.s.iter().map(|&s| s as f64 / self.t as f64).collect()
    }

    /// Plug-in diffusion matrix `Q / T^3`.
    fn diffusion(&self) -> Result<Vec<Vec<f64>>> {
        let q = self.centered_form()?;
        let t3 = (self.t as f64).powi(3);
        Ok((0..self.d)
            .map(|j| (0..self.d).map(|k| q[j * self.d + k] as f64 / t3).collect())
            .collect())
    }
}

fn collect_moments(model: &ModelSpec, params: &CycleParams, seed: u64) -> Result<Vec<CycleMoments>> {
    require_ballistic(model)?;
    let d = model.dimension();
    run_batches(model, params.cycles, params.batches, seed, |walk, count| {
        let mut acc = CycleMoments::new(d);
        let mut anchor = walk.position().clone();
        for _ in 0..count {
            let tau = walk.advance_level(params.cycle_cap)?;
            let delta = walk.position() - &anchor;
            acc.add(tau, &delta);
            anchor = walk.position().clone();
        }
        Ok(acc)
    })
}

fn merge_all(d: usize, parts: &[CycleMoments]) -> CycleMoments {
    let mut total = CycleMoments::new(d);
    for p in parts {
        total.merge(p);
    }
    total
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VelocityEstimate {
    pub v: Vec<f64>,
    pub se: Vec<f64>,
    pub mean_cycle_time: f64,
    pub mean_cycle_disp: Vec<f64>,
    pub cycles: u64,
}

impl VelocityEstimate {
    pub fn as_estimate(&self) -> EstimateWithError {
        EstimateWithError {
            value: self.v.clone(),
            std_error: self.se.clone(),
            replicas: self.cycles as usize,
        }
    }
}

fn velocity_from(total: &CycleMoments) -> Result<VelocityEstimate> {
    let q = total.centered_form()?;
    let n = total.n as f64;
    let t = total.t as f64;
    let d = total.d;
    // delta method: Var(v_j) ~ sum_i (Delta_ij - v_j tau_i)^2 / (N - 1) / N / mean(tau)^2
    let se = (0..d)
        .map(|j| {
            if total.n < 2 {
                f64::NAN
            } else {
                (q[j * d + j] as f64 * n / (n - 1.0)).sqrt() / (t * t)
            }
        })
        .collect();
    Ok(VelocityEstimate {
        v: total.velocity(),
        se,
        mean_cycle_time: t / n,
        mean_cycle_disp: total.s.iter().map(|&s| s as f64 / n).collect(),
        cycles: total.n,
    })
}

/// Ratio of mean cycle displacement to mean cycle length.
pub fn estimate_velocity(model: &ModelSpec, params: &CycleParams, seed: u64) -> Result<VelocityEstimate> {
    let parts = collect_moments(model, params, seed)?;
    velocity_from(&merge_all(model.dimension(), &parts))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiffusionEstimate {
    pub matrix: Vec<Vec<f64>>,
    /// Batch-means standard errors.
    pub se: Vec<Vec<f64>>,
    pub velocity: VelocityEstimate,
    pub batches: usize,
    #[serde(skip)]
    batch_matrices: Vec<Vec<Vec<f64>>>,
}

impl DiffusionEstimate {
    /// `xi^t D xi` with its batch-means standard error.
    pub fn quadratic_form(&self, xi: &[f64]) -> (f64, f64) {
        let form = |m: &Vec<Vec<f64>>| {
            let mut acc = 0.0;
            for (j, row) in m.iter().enumerate() {
                for (k, v) in row.iter().enumerate() {
                    acc += xi[j] * v * xi[k];
                }
            }
            acc
        };
        let per_batch: Vec<f64> = self.batch_matrices.iter().map(form).collect();
        (form(&self.matrix), mean_se(&per_batch).1)
    }

    pub fn max_se(&self) -> f64 {
        self.se.iter().flatten().copied().fold(0.0, f64::max)
    }

    /// Eigenvalues of the symmetrized estimate (Jacobi rotations).
    pub fn eigenvalues(&self) -> Vec<f64> {
        let d = self.matrix.len();
        let mut a: Vec<Vec<f64>> = (0..d)
            .map(|i| (0..d).map(|j| 0.5 * (self.matrix[i][j] + self.matrix[j][i])).collect())
            .collect();
        for _ in 0..100 {
            let mut off = 0.0;
            for i in 0..d {
                for j in i + 1..d {
                    off += a[i][j] * a[i][j];
                }
            }
            if off < 1e-30 {
                break;
            }
            for p in 0..d {
                for q in p + 1..d {
                    if a[p][q].abs() < 1e-300 {
                        continue;
                    }
                    let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                    let t = if theta == 0.0 { 1.0 } else { t };
                    let c = 1.0 / (t * t + 1.0).sqrt();
                    let s = t * c;
                    for k in 0..d {
                        let (akp, akq) = (a[k][p], a[k][q]);
                        a[k][p] = c * akp - s * akq;
                        a[k][q] = s * akp + c * akq;
                    }
                    for k in 0..d {
                        let (apk, aqk) = (a[p][k], a[q][k]);
                        a[p][k] = c * apk - s * aqk;
                        a[q][k] = s * apk + c * aqk;
                    }
                }
            }
        }
        let mut ev: Vec<f64> = (0..d).map(|i| a[i][i]).collect();
        ev.sort_by(|x, y| x.total_cmp(y));
        ev
    }
}

/// Plug-in diffusion matrix from cycle moments, with the velocity of the same run.
pub fn estimate_diffusion(model: &ModelSpec, params: &CycleParams, seed: u64) -> Result<DiffusionEstimate> {
    let d = model.dimension();
    let parts = collect_moments(model, params, seed)?;
    let total = merge_all(d, &parts);
    let matrix = total.diffusion()?;
    let batch_matrices: Vec<Vec<Vec<f64>>> = parts.iter().map(|p| p.diffusion()).collect::<Result<_>>()?;
    let se = (0..d)
        .map(|j| {
            (0..d)
                .map(|k| {
                    let col: Vec<f64> = batch_matrices.iter().map(|m| m[j][k]).collect();
                    mean_se(&col).1
                })
                .collect()
        })
        .collect();
    Ok(DiffusionEstimate {
        matrix,
        se,
        velocity: velocity_from(&total)?,
        batches: parts.len(),
        batch_matrices,
    })
}

/// Functions of the environment seen from the walk, `f(T_x omega)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SiteFunctional {
    One,
    Drift,
    DriftDotU,
    /// Indicator that the current site carries the given mixture component.
    Component(usize),
    /// `drift . u_hat` at the site `x + offset`.
    DriftDotUAt(LatticePoint),
}

impl SiteFunctional {
    fn dim(&self, model: &ModelSpec) -> usize {
        match self {
            SiteFunctional::Drift => model.dimension(),
            _ => 1,
        }
    }

    /// Lowest relative level the functional reads.
    fn depth(&self, model: &ModelSpec) -> i64 {
        match self {
            SiteFunctional::One => i64::MAX,
            SiteFunctional::DriftDotUAt(off) => model.level(off),
            _ => 0,
        }
    }

    fn eval<E: SiteLaws + ?Sized>(&self, env: &E, x: &LatticePoint, out: &mut [f64]) {
        let model = env.model();
        match self {
            SiteFunctional::One => out[0] += 1.0,
            SiteFunctional::Drift => {
                for (o, dj) in out.iter_mut().zip(env.site_law(x).drift()) {
                    *o += dj;
                }
            }
            SiteFunctional::DriftDotU => {
                out[0] += model.u_hat().dot_f64(&env.site_law(x).drift());
            }
            SiteFunctional::Component(c) => {
                if env.component_at(x) == *c {
                    out[0] += 1.0;
                }
            }
            SiteFunctional::DriftDotUAt(off) => {
                out[0] += model.u_hat().dot_f64(&env.site_law(&(x + off)).drift());
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EquilibriumParams {
    pub functional: SiteFunctional,
    #[serde(default)]
    pub k: u64,
    pub cycles: u64,
    #[serde(default = "default_batches")]
    pub batches: usize,
    #[serde(default = "default_cycle_cap")]
    pub cycle_cap: u64,
}

#[derive(Default)]
struct RatioMoments {
    a: Vec<f64>,
    aa: Vec<f64>,
    at: Vec<f64>,
    t: f64,
    tt: f64,
    n: u64,
}

/// Cycle-average estimate of the equilibrium expectation of `f`: the sum of
/// `f(T_{X_m} omega)` over `m` in a cycle, divided by the mean cycle length.
/// Every cycle from the `k`-th on contributes.
pub fn estimate_equilibrium(model: &ModelSpec, params: &EquilibriumParams, seed: u64) -> Result<EstimateWithError> {
    require_ballistic(model)?;
    let f = &params.functional;
    if f.depth(model) < -(params.k as i64) {
        return Err(Error::Precondition(format!(
            "functional reads level {} below the allowed slab -{}",
            f.depth(model),
            params.k
        )));
    }
    let dim = f.dim(model);
    let parts = run_batches(model, params.cycles, params.batches, seed, |walk, count| {
        for _ in 0..params.k {
            walk.advance_level(params.cycle_cap)?;
        }
        let mut m = RatioMoments {
            a: vec![0.0; dim],
            aa: vec![0.0; dim],
            at: vec![0.0; dim],
            ..Default::default()
        };
        let mut cycle = vec![0.0; dim];
        for _ in 0..count {
            cycle.iter_mut().for_each(|c| *c = 0.0);
            let start_level = walk.level();
            let t0 = walk.time();
            while walk.level() <= start_level {
                if walk.time() - t0 >= params.cycle_cap {
                    return Err(Error::CycleCapExceeded {
                        cap: params.cycle_cap,
                        start: t0,
                    });
                }
                f.eval(walk.environment(), walk.position(), &mut cycle);
                walk.step();
            }
            let tau = (walk.time() - t0) as f64;
            for j in 0..dim {
                m.a[j] += cycle[j];
                m.aa[j] += cycle[j] * cycle[j];
                m.at[j] += cycle[j] * tau;
            }
            m.t += tau;
            m.tt += tau * tau;
            m.n += 1;
        }
        Ok(m)
    })?;
    let mut tot = RatioMoments {
        a: vec![0.0; dim],
        aa: vec![0.0; dim],
        at: vec![0.0; dim],
        ..Default::default()
    };
    for p in &parts {
        for j in 0..dim {
            tot.a[j] += p.a[j];
            tot.aa[j] += p.aa[j];
            tot.at[j] += p.at[j];
        }
        tot.t += p.t;
        tot.tt += p.tt;
        tot.n += p.n;
    }
    let n = tot.n as f64;
    let mut value = Vec::with_capacity(dim);
    let mut std_error = Vec::with_capacity(dim);
    for j in 0..dim {
        let r = tot.a[j] / tot.t;
        // residuals a_i - r tau_i, delta method for a ratio of means
        let rss = (tot.aa[j] - 2.0 * r * tot.at[j] + r * r * tot.tt).max(0.0);
        let tbar = tot.t / n;
        value.push(r);
        std_error.push((rss / (n - 1.0) / n).sqrt() / tbar);
    }
    Ok(EstimateWithError {
        value,
        std_error,
        replicas: tot.n as usize,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SigmaTailParams {
    pub cycles: u64,
    #[serde(default = "default_n_max")]
    pub n_max: u64,
    #[serde(default = "default_batches")]
    pub batches: usize,
    #[serde(default = "default_cycle_cap")]
    pub cycle_cap: u64,
}

fn default_n_max() -> u64 {
    30
}

/// Points with fewer exceedances than this are left out of the log-linear fit.
pub const MIN_TAIL_COUNT: u64 = 5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SigmaTail {
    /// `P(sigma_1 > n)` for `n = 1..=n_max`; `fitted_exponent` holds the
    /// log-linear slope (log of the geometric rate per step).
    pub scan: ScanResult,
    pub rate: Option<f64>,
    pub rate_se: Option<f64>,
    pub cycles: u64,
}

/// Empirical tail of the cycle length with a weighted log-linear fit.
pub fn sigma_tail(model: &ModelSpec, params: &SigmaTailParams, seed: u64) -> Result<SigmaTail> {
    require_ballistic(model)?;
    let n_max = params.n_max as usize;
    let parts = run_batches(model, params.cycles, params.batches, seed, |walk, count| {
        let mut exceed = vec![0u64; n_max + 1];
        for _ in 0..count {
            let tau = walk.advance_level(params.cycle_cap)? as usize;
            for e in exceed.iter_mut().take(tau.min(n_max + 1)) {
                *e += 1;
            }
        }
        Ok(exceed)
    })?;
    let mut exceed = vec![0u64; n_max + 1];
    for p in &parts {
        for (a, b) in exceed.iter_mut().zip(p) {
            *a += b;
        }
    }
    let total = params.cycles as f64;
    let points: Vec<ScanPoint> = (1..=n_max)
        .map(|n| {
            let p = exceed[n] as f64 / total;
            ScanPoint {
                n: n as u64,
                value: p,
                se: (p * (1.0 - p) / total).sqrt(),
            }
        })
        .collect();
    let usable: Vec<(f64, f64, f64)> = (1..=n_max)
        .filter(|&n| exceed[n] >= MIN_TAIL_COUNT)
        .map(|n| {
            let p = exceed[n] as f64 / total;
            // Var(log p_hat) ~ (1 - p) / (N p)
            let var = ((1.0 - p) / (total * p)).max(1.0 / (total * total));
            (n as f64, p.ln(), 1.0 / var)
        })
        .collect();
    if usable.len() < 3 {
        let note = if exceed[1..].iter().all(|&c| c == 0) {
            "tail vanishes for every n >= 1"
        } else {
            "fewer than three tail points with enough exceedances"
        };
        return Ok(SigmaTail {
            scan: ScanResult {
                points,
                fitted_exponent: None,
                exponent_se: None,
                degenerate: true,
                note: Some(note.into()),
            },
            rate: None,
            rate_se: None,
            cycles: params.cycles,
        });
    }
    let x: Vec<f64> = usable.iter().map(|u| u.0).collect();
    let y: Vec<f64> = usable.iter().map(|u| u.1).collect();
    let w: Vec<f64> = usable.iter().map(|u| u.2).collect();
    let LineFit { slope, slope_se, .. } = super::stats::weighted_line_fit(&x, &y, &w)?;
    Ok(SigmaTail {
        scan: ScanResult {
            points,
            fitted_exponent: Some(slope),
            exponent_se: Some(slope_se),
            degenerate: false,
            note: None,
        },
        rate: Some(slope.exp()),
        rate_se: Some(slope.exp() * slope_se),
        cycles: params.cycles,
    })
}

/// Empirical law of the level gained per cycle, `(X_{sigma_1} - X_0) . u_hat`.
pub fn level_increment_counts(model: &ModelSpec, params: &CycleParams, seed: u64) -> Result<Vec<(u64, u64)>> {
    require_ballistic(model)?;
    let parts = run_batches(model, params.cycles, params.batches, seed, |walk, count| {
        let mut counts = std::collections::BTreeMap::<u64, u64>::new();
        for _ in 0..count {
            let before = walk.level();
            walk.advance_level(params.cycle_cap)?;
            *counts.entry((walk.level() - before) as u64).or_default() += 1;
        }
        Ok(counts)
    })?;
    let mut total = std::collections::BTreeMap::<u64, u64>::new();
    for p in parts {
        for (k, v) in p {
            *total.entry(k).or_default() += v;
        }
    }
    Ok(total.into_iter().collect())
}

/// `X_n / n` from `walks` independent (environment, walk) pairs.
pub fn lln_velocity(model: &ModelSpec, n: u64, walks: usize, seed: u64) -> Result<EstimateWithError> {
    require_ballistic(model)?;
    let samples = par_replicas(walks, |r| {
        let env = Environment::new(model, derive_seed(seed, &[r as u64, 0]));
        let mut walk = Walk::new(&env, LatticePoint::origin(model.dimension()), derive_seed(seed, &[r as u64, 1]));
        for _ in 0..n {
            walk.step();
        }
        Ok(walk.position().to_f64().iter().map(|x| x / n as f64).collect::<Vec<f64>>())
    })?;
    Ok(vector_mean_se(&samples))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::presets::*;

    #[test]
    fn point_mass_velocity_and_diffusion() {
        let m = point_mass([1, 0], [1, 0]);
        let v = estimate_velocity(&m, &CycleParams::new(1000), 1).unwrap();
        assert_eq!(v.v, vec![1.0, 0.0]);
        let d = estimate_diffusion(&m, &CycleParams::new(1000), 1).unwrap();
        assert_eq!(d.matrix, vec![vec![0.0, 0.0], vec![0.0, 0.0]]);
    }

    #[test]
    fn symmetric_two_jump_velocity() {
        let m = two_jump([1, 0], [0, 1], [1, 1]);
        let v = estimate_velocity(&m, &CycleParams::new(200_000), 5).unwrap();
        for j in 0..2 {
            assert!((v.v[j] - 0.5).abs() <= 3.0 * v.se[j], "{:?}", v);
        }
    }

    #[test]
    fn vertical_two_jump_diffusion() {
        // a = (1,1), b = (1,-1): D = 1/4 (a-b)(a-b)^t = [[0,0],[0,1]]
        let m = two_jump([1, 1], [1, -1], [1, 0]);
        let d = estimate_diffusion(&m, &CycleParams::new(200_000), 8).unwrap();
        let target = [[0.0, 0.0], [0.0, 1.0]];
        for j in 0..2 {
            for k in 0..2 {
                let err = (d.matrix[j][k] - target[j][k]).abs();
                assert!(err <= 3.0 * d.se[j][k] + 1e-15, "{j}{k}: {:?}", d);
            }
        }
    }

    #[test]
    fn diffusion_is_symmetric_and_psd() {
        let m = lazy_desk_model();
        let d = estimate_diffusion(&m, &CycleParams::new(50_000), 2).unwrap();
        assert!((d.matrix[0][1] - d.matrix[1][0]).abs() <= 1e-12);
        let ev = d.eigenvalues();
        assert!(ev[0] >= -3.0 * d.max_se());
    }

    #[test]
    fn ballisticity_of_velocity() {
        let m = desk_model();
        let delta = validate_model(&m).unwrap().nonnestling_delta.unwrap();
        let v = estimate_velocity(&m, &CycleParams::new(20_000), 3).unwrap();
        let vu = m.u_hat().dot_f64(&v.v);
        let se_u = v.se.iter().map(|s| s * s).sum::<f64>().sqrt();
        assert!(vu >= delta - 3.0 * se_u * m.u_hat().norm());
    }

    #[test]
    fn equilibrium_of_one_is_one() {
        let m = lazy_desk_model();
        let p = EquilibriumParams {
            functional: SiteFunctional::One,
            k: 0,
            cycles: 10_000,
            batches: 10,
            cycle_cap: DEFAULT_CYCLE_CAP,
        };
        let e = estimate_equilibrium(&m, &p, 4).unwrap();
        assert_eq!(e.value, vec![1.0]);
    }

    #[test]
    fn equilibrium_drift_dot_u_on_point_mass() {
        let m = point_mass([1, 0], [1, 0]);
        let p = EquilibriumParams {
            functional: SiteFunctional::DriftDotU,
            k: 0,
            cycles: 100,
            batches: 4,
            cycle_cap: DEFAULT_CYCLE_CAP,
        };
        assert_eq!(estimate_equilibrium(&m, &p, 4).unwrap().value, vec![1.0]);
    }

    #[test]
    fn equilibrium_slab_is_enforced() {
        let m = desk_model();
        let p = EquilibriumParams {
            functional: SiteFunctional::DriftDotUAt(LatticePoint::from([-2, 0])),
            k: 1,
            cycles: 100,
            batches: 4,
            cycle_cap: DEFAULT_CYCLE_CAP,
        };
        assert!(estimate_equilibrium(&m, &p, 4).is_err());
        let p = EquilibriumParams { k: 2, ..p };
        assert!(estimate_equilibrium(&m, &p, 4).is_ok());
    }

    #[test]
    fn unit_steps_have_no_tail() {
        let m = desk_model();
        let t = sigma_tail(
            &m,
            &SigmaTailParams {
                cycles: 10_000,
                n_max: 30,
                batches: 10,
                cycle_cap: DEFAULT_CYCLE_CAP,
            },
            1,
        )
        .unwrap();
        assert!(t.scan.points.iter().all(|p| p.value == 0.0));
        assert!(t.scan.degenerate);
    }

    #[test]
    fn geometric_tail_rate() {
        let m = two_jump([0, 1], [1, 1], [1, 0]);
        let t = sigma_tail(
            &m,
            &SigmaTailParams {
                cycles: 200_000,
                n_max: 30,
                batches: 20,
                cycle_cap: DEFAULT_CYCLE_CAP,
            },
            6,
        )
        .unwrap();
        let (rate, se) = (t.rate.unwrap(), t.rate_se.unwrap());
        assert!((rate - 0.5).abs() <= 3.0 * se, "rate {rate} +- {se}");
    }

    #[test]
    fn desk_level_increments() {
        let m = desk_model();
        let counts = level_increment_counts(&m, &CycleParams::new(80_000), 2).unwrap();
        assert_eq!(counts.iter().map(|c| c.0).collect::<Vec<_>>(), vec![1, 2]);
        let p2 = counts[1].1 as f64 / 80_000.0;
        let se = (0.125 * 0.875 / 80_000.0f64).sqrt();
        assert!((p2 - 0.125).abs() <= 3.0 * se);
    }
}
