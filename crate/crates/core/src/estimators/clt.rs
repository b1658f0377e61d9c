//! Quenched central limit checks in a single fixed environment.

use serde::{Deserialize, Serialize};

use super::cycles::{require_ballistic, DiffusionEstimate};
use super::stats::{ks_distance_fitted_normal, par_replicas};
use crate::environment::Environment;
use crate::error::{Error, Result};
use crate::lattice::LatticePoint;
use crate::model::ModelSpec;
use crate::rng::derive_seed;
use crate::walker::Walk;

const CHUNK: usize = 256;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CltParams {
    pub env_seed: u64,
    pub n: u64,
    pub walks: usize,
    /// Horizons `c` at which the centering gap is reported; defaults to
    /// `n / 10` and `n`.
    #[serde(default)]
    pub checkpoints: Vec<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CenteringGap {
    pub c: u64,
    /// `max_{k <= c} |mean_k - k v| / sqrt(c)` with `mean_k` the Monte Carlo
    /// quenched mean.
    pub gap: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CltReport {
    pub env_seed: u64,
    pub n: u64,
    pub walks: usize,
    /// Sample covariance of `B_n(1) = (X_n - n v) / sqrt(n)`.
    pub covariance: Vec<Vec<f64>>,
    pub reference: Vec<Vec<f64>>,
    pub frobenius_distance: f64,
    /// Distance relative to the reference norm; absent when the reference is 0.
    pub frobenius_relative: Option<f64>,
    /// KS distance of each coordinate of `X_n` against its fitted normal.
    pub ks: Vec<f64>,
    pub centering: Vec<CenteringGap>,
    /// Reference matrix vanishes (negative control).
    pub degenerate: bool,
}

struct ChunkSums {
    /// Per-step coordinate sums, `k = 1..=n`, flattened.
    sums: Vec<i64>,
    ends: Vec<LatticePoint>,
}

fn frobenius(a: &[Vec<f64>]) -> f64 {
    a.iter().flatten().map(|x| x * x).sum::<f64>().sqrt()
}

/// Runs `walks` quenched walks of `n` steps in the environment `env_seed` and
/// compares them with the annealed reference `(v, D)`.
pub fn clt_test(model: &ModelSpec, params: &CltParams, reference: &DiffusionEstimate, seed: u64) -> Result<CltReport> {
    require_ballistic(model)?;
    let d = model.dimension();
    if params.n == 0 || params.walks < 2 {
        return Err(Error::Precondition("clt needs n >= 1 and at least 2 walks".into()));
    }
    if reference.matrix.len() != d || reference.velocity.v.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: reference.matrix.len(),
        });
    }
    let mut checkpoints = params.checkpoints.clone();
    if checkpoints.is_empty() {
        checkpoints = vec![(params.n / 10).max(1), params.n];
    }
    if checkpoints.iter().any(|&c| c == 0 || c > params.n) {
        return Err(Error::Precondition("checkpoints must lie in 1..=n".into()));
    }
    let n = params.n as usize;
    let env = Environment::new(model, params.env_seed);
    let origin = LatticePoint::origin(d);
    let chunks = params.walks.div_ceil(CHUNK);
    let parts = par_replicas(chunks, |c| {
        let lo = c * CHUNK;
        let hi = (lo + CHUNK).min(params.walks);
        let mut sums = vec![0i64; n * d];
        let mut ends = Vec::with_capacity(hi - lo);
        for w in lo..hi {
            let mut walk = Walk::new(&env, origin.clone(), derive_seed(seed, &[w as u64]));
            for k in 0..n {
                let x = walk.step();
                for (s, &xi) in sums[k * d..(k + 1) * d].iter_mut().zip(x.coords()) {
                    *s += xi;
                }
            }
            ends.push(walk.position().clone());
        }
        Ok(ChunkSums { sums, ends })
    })?;
    let mut sums = vec![0i64; n * d];
    let mut ends = Vec::with_capacity(params.walks);
    for p in parts {
        for (a, b) in sums.iter_mut().zip(&p.sums) {
            *a = a.checked_add(*b).ok_or(Error::Overflow("quenched mean sums"))?;
        }
        ends.extend(p.ends);
    }

    let v = &reference.velocity.v;
    let w = params.walks as f64;
    let sqrt_n = (params.n as f64).sqrt();
    let b: Vec<Vec<f64>> = ends
        .iter()
        .map(|x| {
            x.coords()
                .iter()
                .zip(v)
                .map(|(&xi, vi)| (xi as f64 - params.n as f64 * vi) / sqrt_n)
                .collect()
        })
        .collect();
    let mean: Vec<f64> = (0..d).map(|j| b.iter().map(|r| r[j]).sum::<f64>() / w).collect();
    let covariance: Vec<Vec<f64>> = (0..d)
        .map(|j| {
            (0..d)
                .map(|k| {
                    b.iter().map(|r| (r[j] - mean[j]) * (r[k] - mean[k])).sum::<f64>() / (w - 1.0)
                })
                .collect()
        })
        .collect();
    let diff: Vec<Vec<f64>> = covariance
        .iter()
        .zip(&reference.matrix)
        .map(|(r, s)| r.iter().zip(s).map(|(a, b)| a - b).collect())
        .collect();
    let ref_norm = frobenius(&reference.matrix);
    let frobenius_distance = frobenius(&diff);
    let ks = (0..d)
        .map(|j| {
            let col: Vec<f64> = b.iter().map(|r| r[j]).collect();
            ks_distance_fitted_normal(&col)
        })
        .collect();

    let mut running = 0.0f64;
    let mut gaps = vec![0.0; n + 1];
    for k in 1..=n {
        let g: f64 = (0..d)
            .map(|j| {
                let e = sums[(k - 1) * d + j] as f64 / w - k as f64 * v[j];
                e * e
            })
            .sum::<f64>()
            .sqrt();
        running = running.max(g);
        gaps[k] = running;
    }
    let centering = checkpoints
        .iter()
        .map(|&c| CenteringGap {
            c,
            gap: gaps[c as usize] / (c as f64).sqrt(),
        })
        .collect();

    Ok(CltReport {
        env_seed: params.env_seed,
        n: params.n,
        walks: params.walks,
        covariance,
        reference: reference.matrix.clone(),
        frobenius_distance,
        frobenius_relative: (ref_norm > 0.0).then(|| frobenius_distance / ref_norm),
        ks,
        centering,
        degenerate: ref_norm == 0.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::cycles::{estimate_diffusion, CycleParams};
    use crate::model::presets::*;

    #[test]
    fn point_mass_is_degenerate() {
        let m = point_mass([1, 0], [1, 0]);
        let reference = estimate_diffusion(&m, &CycleParams::new(100), 1).unwrap();
        let p = CltParams {
            env_seed: 3,
            n: 50,
            walks: 20,
            checkpoints: vec![],
        };
        let r = clt_test(&m, &p, &reference, 2).unwrap();
        assert!(r.degenerate);
        assert_eq!(r.covariance, vec![vec![0.0, 0.0], vec![0.0, 0.0]]);
        assert!(r.centering.iter().all(|c| c.gap == 0.0));
        assert_eq!(r.frobenius_relative, None);
    }

    #[test]
    fn homogeneous_two_jump_matches_classical_clt() {
        let m = two_jump([1, 0], [0, 1], [1, 1]);
        let reference = estimate_diffusion(&m, &CycleParams::new(200_000), 4).unwrap();
        let p = CltParams {
            env_seed: 0,
            n: 2000,
            walks: 4000,
            checkpoints: vec![],
        };
        let r = clt_test(&m, &p, &reference, 9).unwrap();
        assert!(r.frobenius_relative.unwrap() < 0.1, "{r:?}");
        assert!(r.ks.iter().all(|&k| k < 0.03), "{r:?}");
    }

    #[test]
    fn rejects_bad_checkpoints() {
        let m = desk_model();
        let reference = estimate_diffusion(&m, &CycleParams::new(1000), 1).unwrap();
        let p = CltParams {
            env_seed: 0,
            n: 10,
            walks: 4,
            checkpoints: vec![11],
        };
        assert!(clt_test(&m, &p, &reference, 0).is_err());
    }
}
