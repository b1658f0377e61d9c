//! Influence of a single-site perturbation on the quenched mean, against the
//! probability of visiting that site.

use serde::{Deserialize, Serialize};

use super::cycles::require_ballistic;
use super::stats::{par_replicas, vector_mean_se};
use crate::environment::{perturb_site, Environment, HalfSpaceResampled};
use crate::error::{Error, Result};
use crate::lattice::LatticePoint;
use crate::model::ModelSpec;
use crate::quenched::{quenched_mean, visit_probability, DEFAULT_SUPPORT_CAP};
use crate::rng::derive_seed;

pub const MAX_PERTURBATION_HORIZON: u64 = 24;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InfluenceSample {
    pub z: LatticePoint,
    pub env_index: usize,
    /// `|mean_r (E^{omega_r}(X_n) - E^{omega~_r}(X_n))|`.
    pub left: f64,
    pub left_se: f64,
    /// `P_0^omega(z in X_[0, n-1])`.
    pub right: f64,
}

/// Both sides of the perturbation bound at one site `z` for `env_reps`
/// environments, each averaged over `resample_reps` redraws of the half-space
/// above `z`.
pub fn perturbation_influence(
    model: &ModelSpec,
    z: &LatticePoint,
    n: u64,
    env_reps: usize,
    resample_reps: usize,
    seed: u64,
) -> Result<Vec<InfluenceSample>> {
    require_ballistic(model)?;
    if z.dim() != model.dimension() {
        return Err(Error::DimensionMismatch {
            expected: model.dimension(),
            got: z.dim(),
        });
    }
    let zl = model.level(z);
    if zl < 0 {
        return Err(Error::Precondition(format!("z = {z} lies below level 0")));
    }
    if n == 0 || n > MAX_PERTURBATION_HORIZON {
        return Err(Error::Precondition(format!(
            "horizon must lie in 1..={MAX_PERTURBATION_HORIZON}"
        )));
    }
    if resample_reps < 2 {
        return Err(Error::Precondition("resample_reps must be at least 2".into()));
    }
    let n = n as usize;
    let origin = LatticePoint::origin(model.dimension());
    (0..env_reps)
        .map(|e| {
            let base = Environment::new(model, derive_seed(seed, &[e as u64, 0]));
            let tilde_seed = derive_seed(seed, &[e as u64, 1]);
            let right = visit_probability(&base, &origin, z, n, DEFAULT_SUPPORT_CAP)?;
            let diffs = par_replicas(resample_reps, |r| {
                let omega = HalfSpaceResampled::new(&base, zl, derive_seed(seed, &[e as u64, 2, r as u64]));
                let tilde = perturb_site(&omega, z, tilde_seed);
                let a = quenched_mean(&omega, &origin, n)?;
                let b = quenched_mean(&tilde, &origin, n)?;
                Ok(a.iter().zip(&b).map(|(x, y)| x - y).collect::<Vec<f64>>())
            })?;
            let est = vector_mean_se(&diffs);
            let left = est.value.iter().map(|x| x * x).sum::<f64>().sqrt();
            let left_se = est.std_error.iter().map(|x| x * x).sum::<f64>().sqrt();
            Ok(InfluenceSample {
                z: z.clone(),
                env_index: e,
                left,
                left_se,
                right,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbationParams {
    pub z_list: Vec<LatticePoint>,
    pub n: u64,
    pub env_reps: usize,
    pub resample_reps: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerturbationGridResult {
    pub samples: Vec<InfluenceSample>,
    /// `max left / right` over even-indexed environments with `right > 0`.
    pub c_hat: f64,
    /// Worst `(left - c_hat right) / left_se` over odd-indexed environments,
    /// or over all samples when there is only one environment.
    pub holdout_max_z: f64,
    /// `left == 0` at every sample with `right == 0`.
    pub zero_consistent: bool,
    pub unreachable: usize,
}

pub fn perturbation_grid(model: &ModelSpec, params: &PerturbationParams, seed: u64) -> Result<PerturbationGridResult> {
    if params.z_list.is_empty() || params.env_reps == 0 {
        return Err(Error::Precondition("empty perturbation grid".into()));
    }
    let mut samples = Vec::new();
    for (i, z) in params.z_list.iter().enumerate() {
        samples.extend(perturbation_influence(
            model,
            z,
            params.n,
            params.env_reps,
            params.resample_reps,
            derive_seed(seed, &[i as u64]),
        )?);
    }
    let fit = |s: &&InfluenceSample| params.env_reps == 1 || s.env_index % 2 == 0;
    let c_hat = samples
        .iter()
        .filter(fit)
        .filter(|s| s.right > 0.0)
        .map(|s| s.left / s.right)
        .fold(0.0, f64::max);
    let holdout_max_z = samples
        .iter()
        .filter(|s| params.env_reps == 1 || s.env_index % 2 == 1)
        .map(|s| {
            let excess = s.left - c_hat * s.right;
            if excess <= 0.0 {
                0.0
            } else if s.left_se > 0.0 {
                excess / s.left_se
            } else {
                f64::INFINITY
            }
        })
        .fold(0.0, f64::max);
    let zero_consistent = samples.iter().all(|s| s.right > 0.0 || s.left == 0.0);
    let unreachable = samples.iter().filter(|s| s.right == 0.0).count();
    Ok(PerturbationGridResult {
        samples,
        c_hat,
        holdout_max_z,
        zero_consistent,
        unreachable,
    })
}
