//! Growth scans: environment-to-environment variance of the quenched mean and
//! the intersection count of two walks in a common environment.

use serde::{Deserialize, Serialize};

use super::cycles::require_ballistic;
use super::stats::{mean_se, par_replicas, ScanPoint, ScanResult};
use crate::environment::Environment;
use crate::error::{Error, Result};
use crate::lattice::LatticePoint;
use crate::model::ModelSpec;
use crate::quenched::{quenched_means_at, DEFAULT_SUPPORT_CAP};
use crate::rng::derive_seed;
use crate::walker::{IntersectionCounter, Walk};

fn default_support_cap() -> usize {
    DEFAULT_SUPPORT_CAP
}

fn check_horizons(n_list: &[u64]) -> Result<()> {
    if n_list.is_empty() || n_list.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Precondition(
            "n_list must be nonempty and strictly increasing".into(),
        ));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VarianceScanParams {
    pub n_list: Vec<u64>,
    pub env_count: usize,
    #[serde(default = "default_support_cap")]
    pub support_cap: usize,
}

/// `E|E^omega(X_n) - E(X_n)|^2` estimated over `env_count` environments with
/// exact quenched means, plus the log-log growth exponent.
pub fn variance_scan(model: &ModelSpec, params: &VarianceScanParams, seed: u64) -> Result<ScanResult> {
    require_ballistic(model)?;
    check_horizons(&params.n_list)?;
    if params.env_count < 2 {
        return Err(Error::Precondition("env_count must be at least 2".into()));
    }
    let horizons: Vec<usize> = params.n_list.iter().map(|&n| n as usize).collect();
    let origin = LatticePoint::origin(model.dimension());
    let means = par_replicas(params.env_count, |e| {
        let env = Environment::new(model, derive_seed(seed, &[e as u64]));
        quenched_means_at(&env, &origin, &horizons, params.support_cap)
    })?;
    let envs = means.len() as f64;
    let points = horizons
        .iter()
        .enumerate()
        .map(|(h, &n)| {
            // deviations from the first environment keep the subtraction small
            let base = &means[0][h];
            let dev: Vec<Vec<f64>> = means
                .iter()
                .map(|m| m[h].iter().zip(base).map(|(a, b)| a - b).collect())
                .collect();
            let d = base.len();
            let centre: Vec<f64> = (0..d)
                .map(|j| dev.iter().map(|v| v[j]).sum::<f64>() / envs)
                .collect();
            let sq: Vec<f64> = dev
                .iter()
                .map(|v| v.iter().zip(&centre).map(|(a, c)| (a - c) * (a - c)).sum())
                .collect();
            let (value, se) = mean_se(&sq);
            ScanPoint {
                n: n as u64,
                value,
                se,
            }
        })
        .collect();
    let mut scan = ScanResult::with_exponent_fit(points)?;
    if model.is_degenerate_mixture() {
        scan.degenerate = true;
        scan.fitted_exponent = None;
        scan.exponent_se = None;
        scan.note = Some("environment is deterministic".into());
    }
    Ok(scan)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntersectionScanParams {
    pub n_list: Vec<u64>,
    pub pair_count: usize,
    /// Starting point of the second walk (the first starts at the origin).
    #[serde(default)]
    pub start_b: Option<LatticePoint>,
}

/// Mean of `|X_[0,n-1] ∩ X~_[0,n-1]|` for two walks in one environment.
pub fn intersection_scan(model: &ModelSpec, params: &IntersectionScanParams, seed: u64) -> Result<ScanResult> {
    require_ballistic(model)?;
    check_horizons(&params.n_list)?;
    if params.pair_count < 2 {
        return Err(Error::Precondition("pair_count must be at least 2".into()));
    }
    if params.n_list[0] == 0 {
        return Err(Error::Precondition("horizons must be positive".into()));
    }
    let origin = LatticePoint::origin(model.dimension());
    let start_b = params.start_b.clone().unwrap_or_else(|| origin.clone());
    if start_b.dim() != model.dimension() {
        return Err(Error::DimensionMismatch {
            expected: model.dimension(),
            got: start_b.dim(),
        });
    }
    let n_max = *params.n_list.last().unwrap();
    let counts = par_replicas(params.pair_count, |r| {
        let r = r as u64;
        let env = Environment::new(model, derive_seed(seed, &[r, 0]));
        let mut a = Walk::new(&env, origin.clone(), derive_seed(seed, &[r, 1]));
        let mut b = Walk::new(&env, start_b.clone(), derive_seed(seed, &[r, 2]));
        let mut counter = IntersectionCounter::new();
        let mut out = Vec::with_capacity(params.n_list.len());
        let mut next = params.n_list.iter().peekable();
        for t in 1..=n_max {
            // prefix of length t holds X_0..X_{t-1}
            counter.push_a(a.position());
            counter.push_b(b.position());
            if next.peek() == Some(&&t) {
                out.push(counter.count() as f64);
                next.next();
            }
            if t < n_max {
                a.step();
                b.step();
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
        .collect();
    ScanResult::with_exponent_fit(points)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::presets::*;

    #[test]
    fn deterministic_environment_has_zero_variance() {
        let m = two_jump([1, 0], [1, 1], [1, 0]);
        let p = VarianceScanParams {
            n_list: vec![4, 8, 16],
            env_count: 10,
            support_cap: DEFAULT_SUPPORT_CAP,
        };
        let s = variance_scan(&m, &p, 1).unwrap();
        assert!(s.points.iter().all(|p| p.value == 0.0));
        assert!(s.degenerate && s.fitted_exponent.is_none());
    }

    #[test]
    fn variance_se_scales_with_env_count() {
        let m = desk_model();
        let se = |count: usize| {
            let p = VarianceScanParams {
                n_list: vec![16, 32, 64],
                env_count: count,
                support_cap: DEFAULT_SUPPORT_CAP,
            };
            variance_scan(&m, &p, 42).unwrap().points[2].se
        };
        let ratio = (se(800) / se(400)).powi(2);
        // squared SE should roughly halve
        assert!((0.35..=0.7).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn point_mass_intersections_are_linear() {
        let m = point_mass([1, 0], [1, 0]);
        let p = IntersectionScanParams {
            n_list: vec![8, 16, 32],
            pair_count: 4,
            start_b: None,
        };
        let s = intersection_scan(&m, &p, 0).unwrap();
        for pt in &s.points {
            assert_eq!(pt.value, pt.n as f64);
        }
        assert!((s.fitted_exponent.unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn distant_starts_meet_less() {
        let m = desk_model();
        let mean_at = |k: i64| {
            let p = IntersectionScanParams {
                n_list: vec![64, 128, 256],
                pair_count: 2000,
                start_b: Some(LatticePoint::from([0, k])),
            };
            let s = intersection_scan(&m, &p, 9).unwrap();
            (s.points[2].value, s.points[2].se)
        };
        let (near, se_near) = mean_at(0);
        let (mid, se_mid) = mean_at(4);
        let (far, se_far) = mean_at(16);
        assert!(near - mid > 2.0 * (se_near.powi(2) + se_mid.powi(2)).sqrt());
        assert!(mid - far > 2.0 * (se_mid.powi(2) + se_far.powi(2)).sqrt());
    }
}
