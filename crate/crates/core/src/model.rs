//! Step laws, the i.i.d. mixture model and its hypothesis validator.
//!
//! A [`ModelSpec`] is a finite mixture of finitely supported step laws together
//! with an integral direction `u_hat`. The environment at every site is an
//! independent draw from the mixture.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::LatticePoint;
use crate::rng::pick_cumulative;

/// Tolerance on probability and weight normalization.
pub const NORMALIZATION_TOL: f64 = 1e-12;

/// Current version of the model JSON schema.
pub const MODEL_SCHEMA_VERSION: u32 = 1;

/// A finitely supported probability vector over lattice steps.
#[derive(Clone, Debug, PartialEq)]
pub struct StepLaw {
    steps: Vec<LatticePoint>,
    probs: Vec<f64>,
    cumulative: Vec<f64>,
}

impl StepLaw {
    pub fn new(entries: Vec<(LatticePoint, f64)>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::InvalidModel("step law has no entries".into()));
        }
        let dim = entries[0].0.dim();
        let mut seen = BTreeSet::new();
        for (z, p) in &entries {
            if z.dim() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: z.dim(),
                });
            }
            if !p.is_finite() || *p < 0.0 {
                return Err(Error::InvalidModel(format!(
                    "step {z} has invalid probability {p}"
                )));
            }
            if !seen.insert(z.clone()) {
                return Err(Error::InvalidModel(format!("step {z} listed twice")));
            }
        }
        let total: f64 = entries.iter().map(|(_, p)| p).sum();
        if (total - 1.0).abs() > NORMALIZATION_TOL {
            return Err(Error::InvalidModel(format!(
                "step probabilities sum to {total}, not 1"
            )));
        }
        let (steps, probs): (Vec<_>, Vec<_>) = entries.into_iter().unzip();
        let cumulative = probs
            .iter()
            .scan(0.0, |acc, p| {
                *acc += p;
                Some(*acc)
            })
            .collect();
        Ok(StepLaw {
            steps,
            probs,
            cumulative,
        })
    }

    pub fn point_mass(z: LatticePoint) -> Self {
        StepLaw {
            steps: vec![z],
            probs: vec![1.0],
            cumulative: vec![1.0],
        }
    }

    /// Uniform law over the given distinct steps.
    pub fn uniform(steps: Vec<LatticePoint>) -> Result<Self> {
        let p = 1.0 / steps.len() as f64;
        StepLaw::new(steps.into_iter().map(|z| (z, p)).collect())
    }

    pub fn dim(&self) -> usize {
        self.steps[0].dim()
    }

    pub fn steps(&self) -> &[LatticePoint] {
        &self.steps
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn entries(&self) -> impl Iterator<Item = (&LatticePoint, f64)> {
        self.steps.iter().zip(self.probs.iter().copied())
    }

    /// Steps carrying positive probability.
    pub fn support(&self) -> impl Iterator<Item = &LatticePoint> {
        self.entries().filter(|(_, p)| *p > 0.0).map(|(z, _)| z)
    }

    pub fn prob_of(&self, z: &LatticePoint) -> f64 {
        self.entries()
            .find(|(s, _)| *s == z)
            .map(|(_, p)| p)
            .unwrap_or(0.0)
    }

    /// Picks a step from a uniform variate in [0, 1).
    #[inline]
    pub fn sample(&self, u: f64) -> &LatticePoint {
        &self.steps[pick_cumulative(&self.cumulative, u)]
    }

    pub fn drift(&self) -> Vec<f64> {
        drift(self)
    }
}

/// Mean step `sum_z z * p(z)` of a law.
pub fn drift(law: &StepLaw) -> Vec<f64> {
    let mut out = vec![0.0; law.dim()];
    for (z, p) in law.entries() {
        for (o, &c) in out.iter_mut().zip(z.coords()) {
            *o += c as f64 * p;
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct Component {
    pub weight: f64,
    pub law: StepLaw,
}

/// Finite mixture of step laws plus the integral direction `u_hat`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ModelDoc", into = "ModelDoc")]
pub struct ModelSpec {
    dimension: usize,
    u_hat: LatticePoint,
    components: Vec<Component>,
    cumulative_weights: Vec<f64>,
}

impl ModelSpec {
    pub fn new(dimension: usize, u_hat: LatticePoint, components: Vec<Component>) -> Result<Self> {
        if dimension == 0 {
            return Err(Error::InvalidModel("dimension must be at least 1".into()));
        }
        if u_hat.dim() != dimension {
            return Err(Error::DimensionMismatch {
                expected: dimension,
                got: u_hat.dim(),
            });
        }
        if u_hat.is_zero() {
            return Err(Error::InvalidModel("u_hat must be nonzero".into()));
        }
        if components.is_empty() {
            return Err(Error::InvalidModel("model has no components".into()));
        }
        for c in &components {
            if c.law.dim() != dimension {
                return Err(Error::DimensionMismatch {
                    expected: dimension,
                    got: c.law.dim(),
                });
            }
            if !c.weight.is_finite() || c.weight < 0.0 {
                return Err(Error::InvalidModel(format!(
                    "invalid component weight {}",
                    c.weight
                )));
            }
        }
        let total: f64 = components.iter().map(|c| c.weight).sum();
        if (total - 1.0).abs() > NORMALIZATION_TOL {
            return Err(Error::InvalidModel(format!(
                "component weights sum to {total}, not 1"
            )));
        }
        let cumulative_weights = components
            .iter()
            .scan(0.0, |acc, c| {
                *acc += c.weight;
                Some(*acc)
            })
            .collect();
        Ok(ModelSpec {
            dimension,
            u_hat,
            components,
            cumulative_weights,
        })
    }

    /// A model whose every site carries the same law.
    pub fn homogeneous(u_hat: LatticePoint, law: StepLaw) -> Result<Self> {
        ModelSpec::new(u_hat.dim(), u_hat, vec![Component { weight: 1.0, law }])
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serialization cannot fail")
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn u_hat(&self) -> &LatticePoint {
        &self.u_hat
    }

    pub fn components(&self) -> &[Component] {
        &self.components
    }

    pub fn component_law(&self, index: usize) -> &StepLaw {
        &self.components[index].law
    }

    /// Level `x . u_hat` of a site.
    #[inline]
    pub fn level(&self, x: &LatticePoint) -> i64 {
        x.dot(&self.u_hat)
    }

    /// Component index selected by a uniform variate.
    #[inline]
    pub fn pick_component(&self, u: f64) -> usize {
        if self.components.len() == 1 {
            0
        } else {
            pick_cumulative(&self.cumulative_weights, u)
        }
    }

    /// True when the environment is deterministic (one component carries all the weight).
    pub fn is_degenerate_mixture(&self) -> bool {
        self.components.iter().filter(|c| c.weight > 0.0).count() <= 1
    }

    /// Union of the supports of all positively weighted components.
    pub fn support_j(&self) -> BTreeSet<LatticePoint> {
        self.components
            .iter()
            .filter(|c| c.weight > 0.0)
            .flat_map(|c| c.law.support().cloned())
            .collect()
    }

    /// Per-coordinate minimum and maximum over all supported steps.
    pub fn step_bounds(&self) -> (Vec<i64>, Vec<i64>) {
        let mut lo = vec![i64::MAX; self.dimension];
        let mut hi = vec![i64::MIN; self.dimension];
        for z in self.support_j() {
            for (i, &c) in z.coords().iter().enumerate() {
                lo[i] = lo[i].min(c);
                hi[i] = hi[i].max(c);
            }
        }
        (lo, hi)
    }

    /// Annealed one-step mean `E[drift(omega_0)]`.
    pub fn mean_drift(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dimension];
        for c in &self.components {
            for (o, d) in out.iter_mut().zip(c.law.drift()) {
                *o += c.weight * d;
            }
        }
        out
    }

    /// The same mixture re-expressed with a different direction.
    pub fn with_direction(&self, u_hat: LatticePoint) -> Result<Self> {
        ModelSpec::new(self.dimension, u_hat, self.components.clone())
    }
}

/// Outcome of checking a model against the forbidden-direction, nonnestling,
/// moment and ellipticity hypotheses.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub forbidden_direction_ok: bool,
    pub nonnestling_delta: Option<f64>,
    pub moment_bound_m: f64,
    pub ellipticity_2_3_ok: bool,
    pub ellipticity_span_ok: bool,
    pub support_j: BTreeSet<LatticePoint>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Valid,
    ValidButInelliptic,
    Invalid,
}

impl ValidationReport {
    /// Forbidden direction and nonnestling both hold: the regeneration
    /// structure exists and every simulation engine may run.
    pub fn is_ballistic(&self) -> bool {
        self.forbidden_direction_ok && self.nonnestling_delta.is_some()
    }

    pub fn is_elliptic(&self) -> bool {
        self.ellipticity_2_3_ok && self.ellipticity_span_ok
    }

    pub fn verdict(&self) -> Verdict {
        match (self.is_ballistic(), self.is_elliptic()) {
            (false, _) => Verdict::Invalid,
            (true, false) => Verdict::ValidButInelliptic,
            (true, true) => Verdict::Valid,
        }
    }
}

pub fn validate_model(model: &ModelSpec) -> Result<ValidationReport> {
    let d = model.dimension();
    let u = model.u_hat();
    if u.dim() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: u.dim(),
        });
    }
    let weighted: Vec<&Component> = model
        .components()
        .iter()
        .filter(|c| c.weight > 0.0)
        .collect();
    for c in &weighted {
        for z in c.law.steps() {
            if z.dim() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: z.dim(),
                });
            }
        }
    }

    let forbidden_direction_ok = weighted
        .iter()
        .all(|c| c.law.support().all(|z| z.dot(u) >= 0));

    let delta = weighted
        .iter()
        .map(|c| {
            c.law
                .entries()
                .map(|(z, p)| z.dot(u) as f64 * p)
                .sum::<f64>()
        })
        .fold(f64::INFINITY, f64::min);
    let nonnestling_delta = (delta > 0.0 && delta.is_finite()).then_some(delta);

    let support_j = model.support_j();
    let moment_bound_m = support_j.iter().map(|z| z.norm()).fold(0.0, f64::max);

    let ellipticity_2_3_ok = weighted.iter().any(|c| {
        let origin = LatticePoint::origin(d);
        let p00 = c.law.prob_of(&origin);
        c.law
            .entries()
            .filter(|(z, _)| !z.is_zero())
            .all(|(_, p)| p00 + p < 1.0 - NORMALIZATION_TOL)
            // a law that only holds still has pi_00 = 1
            && p00 < 1.0 - NORMALIZATION_TOL
    });

    let ellipticity_span_ok = spans_more_than_a_line(&support_j);

    Ok(ValidationReport {
        forbidden_direction_ok,
        nonnestling_delta,
        moment_bound_m,
        ellipticity_2_3_ok,
        ellipticity_span_ok,
        support_j,
    })
}

/// True iff the points are not all contained in one line through the origin,
/// i.e. some pair of them is linearly independent (a nonzero 2x2 minor).
fn spans_more_than_a_line(points: &BTreeSet<LatticePoint>) -> bool {
    let nonzero: Vec<&LatticePoint> = points.iter().filter(|p| !p.is_zero()).collect();
    let Some(first) = nonzero.first() else {
        return false;
    };
    nonzero.iter().skip(1).any(|p| {
        let (a, b) = (first.coords(), p.coords());
        (0..a.len()).any(|i| (i + 1..a.len()).any(|j| a[i] * b[j] != a[j] * b[i]))
    })
}

// ---- JSON schema -------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct StepDoc {
    z: Vec<i64>,
    p: f64,
}

#[derive(Serialize, Deserialize)]
struct ComponentDoc {
    weight: f64,
    steps: Vec<StepDoc>,
}

/// On-disk form: `{schema_version, dimension, u_hat, components: [{weight, steps: [{z, p}]}]}`.
#[derive(Serialize, Deserialize)]
struct ModelDoc {
    #[serde(default = "default_schema_version")]
    schema_version: u32,
    dimension: usize,
    u_hat: Vec<i64>,
    components: Vec<ComponentDoc>,
}

fn default_schema_version() -> u32 {
    MODEL_SCHEMA_VERSION
}

impl TryFrom<ModelDoc> for ModelSpec {
    type Error = Error;

    fn try_from(doc: ModelDoc) -> Result<Self> {
        if doc.schema_version != MODEL_SCHEMA_VERSION {
            return Err(Error::InvalidModel(format!(
                "unsupported model schema version {}",
                doc.schema_version
            )));
        }
        let components = doc
            .components
            .into_iter()
            .map(|c| {
                let law = StepLaw::new(
                    c.steps
                        .into_iter()
                        .map(|s| (LatticePoint::new(s.z), s.p))
                        .collect(),
                )?;
                Ok(Component {
                    weight: c.weight,
                    law,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        ModelSpec::new(doc.dimension, LatticePoint::new(doc.u_hat), components)
    }
}

impl From<ModelSpec> for ModelDoc {
    fn from(m: ModelSpec) -> Self {
        ModelDoc {
            schema_version: MODEL_SCHEMA_VERSION,
            dimension: m.dimension,
            u_hat: m.u_hat.coords().to_vec(),
            components: m
                .components
                .into_iter()
                .map(|c| ComponentDoc {
                    weight: c.weight,
                    steps: c
                        .law
                        .entries()
                        .map(|(z, p)| StepDoc {
                            z: z.coords().to_vec(),
                            p,
                        })
                        .collect(),
                })
                .collect(),
        }
    }
}

// ---- reference models ------------------------------------------------------------

/// Ready-made models used throughout the tests, the acceptance suite and the CLI examples.
pub mod presets {
    use super::*;

    fn law(entries: &[([i64; 2], f64)]) -> StepLaw {
        StepLaw::new(
            entries
                .iter()
                .map(|(z, p)| (LatticePoint::from(*z), *p))
                .collect(),
        )
        .expect("preset law is valid")
    }

    /// The two-component elliptic nonnestling reference model in d = 2, u_hat = (1,0):
    /// A = {1/2 on (1,0), 1/2 on (1,1)}, B = uniform on {(1,0),(1,1),(1,-1),(2,0)}.
    pub fn desk_model() -> ModelSpec {
        let a = law(&[([1, 0], 0.5), ([1, 1], 0.5)]);
        let b = law(&[([1, 0], 0.25), ([1, 1], 0.25), ([1, -1], 0.25), ([2, 0], 0.25)]);
        ModelSpec::new(
            2,
            LatticePoint::from([1, 0]),
            vec![
                Component { weight: 0.5, law: a },
                Component { weight: 0.5, law: b },
            ],
        )
        .expect("desk model is valid")
    }

    /// Desk model with a zero-level holding move added to every component, so
    /// that regeneration cycles have nontrivial (geometric) length.
    pub fn lazy_desk_model() -> ModelSpec {
        let a = law(&[([0, 1], 0.25), ([1, 0], 0.375), ([1, 1], 0.375)]);
        let b = law(&[
            ([0, -1], 0.25),
            ([1, 0], 0.1875),
            ([1, 1], 0.1875),
            ([1, -1], 0.1875),
            ([2, 0], 0.1875),
        ]);
        ModelSpec::new(
            2,
            LatticePoint::from([1, 0]),
            vec![
                Component { weight: 0.5, law: a },
                Component { weight: 0.5, law: b },
            ],
        )
        .expect("lazy desk model is valid")
    }

    /// Homogeneous walk choosing `a` or `b` with probability 1/2 each.
    pub fn two_jump(a: [i64; 2], b: [i64; 2], u_hat: [i64; 2]) -> ModelSpec {
        ModelSpec::homogeneous(LatticePoint::from(u_hat), law(&[(a, 0.5), (b, 0.5)]))
            .expect("two-jump model is valid")
    }

    pub fn point_mass(z: [i64; 2], u_hat: [i64; 2]) -> ModelSpec {
        ModelSpec::homogeneous(
            LatticePoint::from(u_hat),
            StepLaw::point_mass(LatticePoint::from(z)),
        )
        .expect("point-mass model is valid")
    }
}
