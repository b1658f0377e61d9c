//! The difference chain of two walks at their common levels: the overlap
//! function h, one-step kernel statistics and Green functions.

use serde::{Deserialize, Serialize};

use super::cycles::{default_cycle_cap, require_ballistic};
use super::stats::{mean_se, par_replicas, vector_mean_se, EstimateWithError, ScanPoint, ScanResult};
use crate::environment::Environment;
use crate::error::{Error, Result};
use crate::lattice::LatticePoint;
use crate::model::ModelSpec;
use crate::rng::derive_seed;
use crate::walker::{level_chain, site_intersection, Walk};

/// Exponent used in the increment moment of the kernel; finite support makes
/// every moment finite, so the cap of 2 applies.
pub const P_HAT: f64 = 2.0;

fn require_zero_level(model: &ModelSpec, x: &LatticePoint, what: &str) -> Result<()> {
    if x.dim() != model.dimension() {
        return Err(Error::DimensionMismatch {
            expected: model.dimension(),
            got: x.dim(),
        });
    }
    if model.level(x) != 0 {
        return Err(Error::Precondition(format!("{what} = {x} is not on level 0")));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HParams {
    pub z: LatticePoint,
    pub reps: usize,
    #[serde(default = "default_cycle_cap")]
    pub cycle_cap: u64,
}

/// Sites `X_0, ..., X_{sigma_1}` of a walk run to its first regeneration.
fn first_cycle_sites(walk: &mut Walk<'_, Environment<'_>>, cap: u64) -> Result<Vec<LatticePoint>> {
    let start_level = walk.level();
    let t0 = walk.time();
    let mut sites = vec![walk.position().clone()];
    while walk.level() <= start_level {
        if walk.time() - t0 >= cap {
            return Err(Error::CycleCapExceeded { cap, start: t0 });
        }
        sites.push(walk.step().clone());
    }
    Ok(sites)
}

/// `h(z)`: mean number of sites shared by the first cycles of walks from `z`
/// and from the origin in a common environment.
pub fn estimate_h(model: &ModelSpec, params: &HParams, seed: u64) -> Result<EstimateWithError> {
    require_ballistic(model)?;
    require_zero_level(model, &params.z, "z")?;
    let origin = LatticePoint::origin(model.dimension());
    let samples = par_replicas(params.reps, |r| {
        let r = r as u64;
        let env = Environment::new(model, derive_seed(seed, &[r, 0]));
        let mut a = Walk::new(&env, params.z.clone(), derive_seed(seed, &[r, 1]));
        let mut b = Walk::new(&env, origin.clone(), derive_seed(seed, &[r, 2]));
        let sa = first_cycle_sites(&mut a, params.cycle_cap)?;
        let sb = first_cycle_sites(&mut b, params.cycle_cap)?;
        Ok(site_intersection(&sa, &sb) as f64)
    })?;
    let (m, se) = mean_se(&samples);
    Ok(EstimateWithError::scalar(m, se, samples.len()))
}

/// One transition of the difference chain from state `z`: two walks from `z`
/// and the origin in a fresh environment, run to their first common level.
pub fn z_chain_step(model: &ModelSpec, z: &LatticePoint, seed: u64, cap: u64) -> Result<LatticePoint> {
    let env = Environment::new(model, derive_seed(seed, &[0]));
    let origin = LatticePoint::origin(model.dimension());
    let seeds = (derive_seed(seed, &[1]), derive_seed(seed, &[2]));
    let rec = level_chain(&env, z, &origin, 1, seeds, cap)?;
    Ok(rec.into_iter().next().expect("one common level").z_state)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QParams {
    pub x: LatticePoint,
    pub reps: usize,
    #[serde(default = "default_cycle_cap")]
    pub cycle_cap: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QKernelEstimate {
    pub state_x: LatticePoint,
    pub mean_increment: Vec<f64>,
    pub mean_increment_se: Vec<f64>,
    /// Mean of `|Z_1 - x|^p_hat` with `p_hat = 2`.
    pub p_hat_moment: f64,
    pub p_hat_moment_se: f64,
    pub holding_prob: f64,
    pub holding_prob_se: f64,
    pub reps: usize,
    /// True when the model fails ellipticity (negative control).
    pub degenerate: bool,
}

/// Statistics of `Z_1 - x` under the kernel started from `x`.
pub fn estimate_q(model: &ModelSpec, params: &QParams, seed: u64) -> Result<QKernelEstimate> {
    let report = require_ballistic(model)?;
    require_zero_level(model, &params.x, "x")?;
    let steps = par_replicas(params.reps, |r| {
        let z1 = z_chain_step(model, &params.x, derive_seed(seed, &[r as u64]), params.cycle_cap)?;
        Ok(&z1 - &params.x)
    })?;
    let incr: Vec<Vec<f64>> = steps.iter().map(|m| m.to_f64()).collect();
    let mean = vector_mean_se(&incr);
    let moments: Vec<f64> = steps.iter().map(|m| (m.norm_sq() as f64).powf(P_HAT / 2.0)).collect();
    let (pm, pm_se) = mean_se(&moments);
    let hold: Vec<f64> = steps.iter().map(|m| if m.is_zero() { 1.0 } else { 0.0 }).collect();
    let (h, h_se) = mean_se(&hold);
    Ok(QKernelEstimate {
        state_x: params.x.clone(),
        mean_increment: mean.value,
        mean_increment_se: mean.std_error,
        p_hat_moment: pm,
        p_hat_moment_se: pm_se,
        holding_prob: h,
        holding_prob_se: h_se,
        reps: params.reps,
        degenerate: !report.is_elliptic(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GreenParams {
    pub x: LatticePoint,
    pub y: LatticePoint,
    pub n_list: Vec<u64>,
    pub chains: usize,
    #[serde(default = "default_cycle_cap")]
    pub cycle_cap: u64,
}

/// `G_n(x, y)`: mean number of visits to `y` by the difference chain from `x`
/// within `n` transitions, for each `n` in `n_list`, with a log-log fit.
pub fn green_function(model: &ModelSpec, params: &GreenParams, seed: u64) -> Result<ScanResult> {
    require_ballistic(model)?;
    require_zero_level(model, &params.x, "x")?;
    require_zero_level(model, &params.y, "y")?;
    if params.n_list.is_empty() || params.n_list.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Precondition(
            "n_list must be nonempty and strictly increasing".into(),
        ));
    }
    if params.chains < 2 {
        return Err(Error::Precondition("chains must be at least 2".into()));
    }
    if model.dimension() < 2 {
        return Err(Error::Precondition("Green function scan needs d >= 2".into()));
    }
    let n_max = *params.n_list.last().unwrap();
    let counts = par_replicas(params.chains, |c| {
        let c = c as u64;
        let mut z = params.x.clone();
        let mut visits = u64::from(z == params.y);
        let mut out = Vec::with_capacity(params.n_list.len());
        let mut next = params.n_list.iter().peekable();
        if next.peek() == Some(&&0) {
            out.push(visits as f64);
            next.next();
        }
        for k in 1..=n_max {
            z = z_chain_step(model, &z, derive_seed(seed, &[c, k]), params.cycle_cap)?;
            visits += u64::from(z == params.y);
            if next.peek() == Some(&&k) {
                out.push(visits as f64);
                next.next();
            }
        }
        Ok(out)
    })?;
    let points = params
        .n_list
        .iter()
        .enumerate()
        .map(|(i, &n)| {
            let col: Vec<f64> = counts.iter().map(|c| c[i]).collect();
            let (value, se) = mean_se(&col);
            ScanPoint { n, value, se }
        })
        .collect::<Vec<_>>();
    // n = 0 has no logarithm; fit on the positive horizons only
    let fit_points: Vec<ScanPoint> = points.iter().copied().filter(|p| p.n > 0).collect();
    let fitted = ScanResult::with_exponent_fit(fit_points)?;
    Ok(ScanResult { points, ..fitted })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::presets::*;
    use crate::walker::DEFAULT_CYCLE_CAP;

    #[test]
    fn parallel_rays_do_not_meet() {
        let m = point_mass([1, 0], [1, 0]);
        let p = HParams {
            z: LatticePoint::from([0, 5]),
            reps: 100,
            cycle_cap: DEFAULT_CYCLE_CAP,
        };
        assert_eq!(estimate_h(&m, &p, 1).unwrap().v(), 0.0);
    }

    #[test]
    fn shared_start_is_counted() {
        let m = desk_model();
        let p = HParams {
            z: LatticePoint::from([0, 0]),
            reps: 1000,
            cycle_cap: DEFAULT_CYCLE_CAP,
        };
        let h = estimate_h(&m, &p, 1).unwrap();
        assert!(h.v() >= 1.0);
    }

    #[test]
    fn h_is_summable() {
        // partial sums of h over |z| <= R stop growing once R exceeds the reach
        // of two unit-level cycles
        let m = lazy_desk_model();
        let h = |k: i64| {
            let p = HParams {
                z: LatticePoint::from([0, k]),
                reps: 20_000,
                cycle_cap: DEFAULT_CYCLE_CAP,
            };
            estimate_h(&m, &p, 77).unwrap().v()
        };
        let partial = |r: i64| (-r..=r).map(h).sum::<f64>();
        let (s4, s8, s12) = (partial(4), partial(8), partial(12));
        assert!(s8 - s4 < 0.1 * s4, "{s4} {s8}");
        assert!(s12 - s8 <= s8 - s4 + 1e-12);
    }

    #[test]
    fn lockstep_walks_hold() {
        let m = point_mass([1, 0], [1, 0]);
        let p = QParams {
            x: LatticePoint::from([0, 2]),
            reps: 200,
            cycle_cap: DEFAULT_CYCLE_CAP,
        };
        let q = estimate_q(&m, &p, 3).unwrap();
        assert_eq!(q.mean_increment, vec![0.0, 0.0]);
        assert_eq!(q.holding_prob, 1.0);
        assert!(q.degenerate);
    }

    #[test]
    fn green_at_horizon_zero() {
        let m = desk_model();
        let run = |x: [i64; 2]| {
            let p = GreenParams {
                x: LatticePoint::from(x),
                y: LatticePoint::from([0, 0]),
                n_list: vec![0],
                chains: 10,
                cycle_cap: DEFAULT_CYCLE_CAP,
            };
            green_function(&m, &p, 5).unwrap().points[0].value
        };
        assert_eq!(run([0, 0]), 1.0);
        assert_eq!(run([0, 3]), 0.0);
    }

    #[test]
    fn off_level_states_are_rejected() {
        let m = desk_model();
        let p = QParams {
            x: LatticePoint::from([1, 0]),
            reps: 10,
            cycle_cap: DEFAULT_CYCLE_CAP,
        };
        assert!(matches!(estimate_q(&m, &p, 1), Err(Error::Precondition(_))));
    }
}
