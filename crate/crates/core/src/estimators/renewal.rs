//! First common point of two independent delayed renewal processes.

use num::Integer;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::stats::{mean_se, par_replicas, EstimateWithError};
use crate::error::{Error, Result};
use crate::model::NORMALIZATION_TOL;
use crate::rng::{derive_seed, pick_cumulative, stream_rng};

/// A finitely supported law on the positive integers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<(u64, f64)>", into = "Vec<(u64, f64)>")]
pub struct IncrementLaw {
    values: Vec<u64>,
    probs: Vec<f64>,
    cumulative: Vec<f64>,
}

impl IncrementLaw {
    pub fn new(entries: Vec<(u64, f64)>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::Precondition("increment law has empty support".into()));
        }
        let mut entries = entries;
        entries.sort_by_key(|e| e.0);
        if entries.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(Error::Precondition("repeated value in increment law".into()));
        }
        for &(v, p) in &entries {
            if v == 0 {
                return Err(Error::Precondition("increments must be positive".into()));
            }
            if !(p.is_finite() && p >= 0.0) {
                return Err(Error::Precondition(format!("invalid probability {p}")));
            }
        }
        let total: f64 = entries.iter().map(|e| e.1).sum();
        if (total - 1.0).abs() > NORMALIZATION_TOL {
            return Err(Error::Precondition(format!(
                "increment probabilities sum to {total}"
            )));
        }
        let values = entries.iter().map(|e| e.0).collect();
        let probs: Vec<f64> = entries.iter().map(|e| e.1).collect();
        let cumulative = probs
            .iter()
            .scan(0.0, |acc, p| {
                *acc += p;
                Some(*acc)
            })
            .collect();
        Ok(IncrementLaw {
            values,
            probs,
            cumulative,
        })
    }

    /// Empirical law from `(value, count)` pairs.
    pub fn from_counts(counts: &[(u64, u64)]) -> Result<Self> {
        let total: u64 = counts.iter().map(|c| c.1).sum();
        if total == 0 {
            return Err(Error::Precondition("no increments observed".into()));
        }
        let mut entries: Vec<(u64, f64)> = counts
            .iter()
            .filter(|c| c.1 > 0)
            .map(|&(v, c)| (v, c as f64 / total as f64))
            .collect();
        // absorb rounding in the last entry so the law normalizes
        let head: f64 = entries[..entries.len() - 1].iter().map(|e| e.1).sum();
        entries.last_mut().unwrap().1 = 1.0 - head;
        Self::new(entries)
    }

    pub fn uniform(values: &[u64]) -> Result<Self> {
        let p = 1.0 / values.len() as f64;
        Self::new(values.iter().map(|&v| (v, p)).collect())
    }

    /// Largest `h` with the support inside `h N*`.
    pub fn span(&self) -> u64 {
        self.values.iter().fold(0, |g, &v| g.gcd(&v))
    }

    pub fn entries(&self) -> impl Iterator<Item = (u64, f64)> + '_ {
        self.values.iter().copied().zip(self.probs.iter().copied())
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> u64 {
        self.values[pick_cumulative(&self.cumulative, rng.gen::<f64>())]
    }
}

impl TryFrom<Vec<(u64, f64)>> for IncrementLaw {
    type Error = Error;
    fn try_from(v: Vec<(u64, f64)>) -> Result<Self> {
        IncrementLaw::new(v)
    }
}

impl From<IncrementLaw> for Vec<(u64, f64)> {
    fn from(l: IncrementLaw) -> Self {
        l.entries().collect()
    }
}

/// `L_{i,j}`: the first level `>= 1` hit by both `i + S_m` and `j + S~_n`.
pub fn first_common_point<R: Rng>(law: &IncrementLaw, i: u64, j: u64, rng: &mut R) -> u64 {
    let (mut a, mut b) = (i, j);
    while !(a == b && a >= 1) {
        if a <= b {
            a += law.sample(rng);
        } else {
            b += law.sample(rng);
        }
    }
    a
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RenewalParams {
    pub step_dist: IncrementLaw,
    pub i: u64,
    pub j: u64,
    pub reps: usize,
    /// Moment orders to estimate from the same replicas.
    pub r: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RenewalMoments {
    pub i: u64,
    pub j: u64,
    pub r: Vec<f64>,
    /// `E(L_{i,j}^r)` for each requested `r`.
    pub moments: Vec<EstimateWithError>,
    pub min_l: u64,
    pub max_l: u64,
}

pub fn renewal_moments(params: &RenewalParams, seed: u64) -> Result<RenewalMoments> {
    let h = params.step_dist.span();
    if params.i % h != 0 || params.j % h != 0 {
        return Err(Error::Precondition(format!(
            "delays ({}, {}) are not multiples of the span {h}",
            params.i, params.j
        )));
    }
    if params.r.iter().any(|&r| !(r >= 1.0 && r.is_finite())) {
        return Err(Error::Precondition("moment orders must be finite and >= 1".into()));
    }
    // replicas are grouped into fixed blocks so the RNG stream layout does not
    // depend on scheduling
    const BLOCK: usize = 4096;
    let blocks = params.reps.div_ceil(BLOCK);
    let samples: Vec<Vec<u64>> = par_replicas(blocks, |b| {
        let mut rng = stream_rng(derive_seed(seed, &[b as u64]));
        let len = BLOCK.min(params.reps - b * BLOCK);
        Ok((0..len)
            .map(|_| first_common_point(&params.step_dist, params.i, params.j, &mut rng))
            .collect())
    })?;
    let ls: Vec<u64> = samples.into_iter().flatten().collect();
    let moments = params
        .r
        .iter()
        .map(|&r| {
            let vals: Vec<f64> = ls.iter().map(|&l| (l as f64).powf(r)).collect();
            let (m, se) = mean_se(&vals);
            EstimateWithError::scalar(m, se, vals.len())
        })
        .collect();
    Ok(RenewalMoments {
        i: params.i,
        j: params.j,
        r: params.r.clone(),
        moments,
        min_l: ls.iter().copied().min().unwrap_or(0),
        max_l: ls.iter().copied().max().unwrap_or(0),
    })
}

/// Monte Carlo estimate of `E(L_{i,j}^r)`.
pub fn renewal_common_level(
    step_dist: &IncrementLaw,
    i: u64,
    j: u64,
    reps: usize,
    r: f64,
    seed: u64,
) -> Result<EstimateWithError> {
    let params = RenewalParams {
        step_dist: step_dist.clone(),
        i,
        j,
        reps,
        r: vec![r],
    };
    Ok(renewal_moments(&params, seed)?.moments.remove(0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equal_positive_delays() {
        let law = IncrementLaw::uniform(&[1, 2]).unwrap();
        let p = RenewalParams {
            step_dist: law,
            i: 5,
            j: 5,
            reps: 1000,
            r: vec![1.0],
        };
        let m = renewal_moments(&p, 1).unwrap();
        assert_eq!((m.min_l, m.max_l), (5, 5));
    }

    #[test]
    fn unit_steps_meet_at_one() {
        let law = IncrementLaw::new(vec![(1, 1.0)]).unwrap();
        let e = renewal_common_level(&law, 0, 0, 500, 1.0, 2).unwrap();
        assert_eq!(e.v(), 1.0);
        assert_eq!(e.se(), 0.0);
    }

    #[test]
    fn span_and_delay_checks() {
        let law = IncrementLaw::uniform(&[2, 4]).unwrap();
        assert_eq!(law.span(), 2);
        assert!(renewal_common_level(&law, 1, 0, 10, 1.0, 0).is_err());
        assert!(IncrementLaw::new(vec![(0, 1.0)]).is_err());
        assert!(IncrementLaw::new(vec![(1, 0.5)]).is_err());
    }

    /// Exhaustive expectation over the outcome tree, truncated at `depth`
    /// draws. Returns (truncated expectation, residual mass).
    fn tree_expectation(law: &IncrementLaw, a: u64, b: u64, depth: u32) -> (f64, f64) {
        if a == b && a >= 1 {
            return (a as f64, 0.0);
        }
        if depth == 0 {
            return (0.0, 1.0);
        }
        let mut e = 0.0;
        let mut rest = 0.0;
        for (y, p) in law.entries() {
            let (na, nb) = if a <= b { (a + y, b) } else { (a, b + y) };
            let (ce, cr) = tree_expectation(law, na, nb, depth - 1);
            e += p * ce;
            rest += p * cr;
        }
        (e, rest)
    }

    #[test]
    fn tree_oracle_for_uniform_one_two() {
        let law = IncrementLaw::uniform(&[1, 2]).unwrap();
        let (e20, rest20) = tree_expectation(&law, 0, 0, 20);
        assert!(rest20 < 1e-5);
        assert!((e20 - 2.249959945678711).abs() < 1e-12);
        let est = renewal_common_level(&law, 0, 0, 400_000, 1.0, 11).unwrap();
        // the truncated tree misses at most rest20 * (a bounded tail), far below MC noise
        assert!((est.v() - 2.25).abs() <= 3.0 * est.se(), "{est:?}");
        assert!((est.v() - e20).abs() <= 3.0 * est.se() + 1e-4);
    }
}
