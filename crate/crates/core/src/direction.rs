//! Exact rational linear algebra for choosing an integral direction.
//!
//! Given a finite set `A` of lattice points and a direction `v_hat` with
//! `v_hat . x >= 0` on `A`, [`rationalize_direction`] returns an integer vector
//! `u_hat` whose dot products with `A` have exactly the same zero/positive
//! pattern. The construction approximates `v_hat` by a rational `w` orthogonal
//! to the zero class, with `|w - v_hat| <= delta / (2M)` where `M = max |x|` and
//! `delta` is the smallest positive dot product, then clears denominators.

use num::{BigInt, BigRational, Integer, One, Signed, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lattice::LatticePoint;

pub type RationalVector = Vec<BigRational>;

/// Largest grid resolution tried before giving up.
const MAX_RESOLUTION_LOG2: u32 = 60;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DirectionError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("ambiguous zero classification: {0}")]
    Ambiguous(String),
    #[error("no rational approximation found up to resolution 2^{MAX_RESOLUTION_LOG2}")]
    NoConvergence,
}

type DResult<T> = std::result::Result<T, DirectionError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sign {
    Positive,
    Zero,
}

/// Either an exact rational direction or a floating-point one with an
/// explicit zero classification and precision bound.
#[derive(Clone, Debug, PartialEq)]
pub enum DirectionInput {
    Rational(RationalVector),
    Real {
        values: Vec<f64>,
        /// Indices into `A` of the points declared orthogonal to `v_hat`.
        zeros: Vec<usize>,
        precision: f64,
    },
}

impl DirectionInput {
    fn dim(&self) -> usize {
        match self {
            DirectionInput::Rational(v) => v.len(),
            DirectionInput::Real { values, .. } => values.len(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DirectionResult {
    pub u_hat: Vec<BigInt>,
    /// Sign class of `u_hat . x` for each point of `A`, in input order.
    pub certificate: Vec<Sign>,
}

impl DirectionResult {
    /// `u_hat` as a lattice point, if every coordinate fits in 64 bits.
    pub fn to_lattice_point(&self) -> Option<LatticePoint> {
        self.u_hat
            .iter()
            .map(|c| c.to_i64())
            .collect::<Option<Vec<_>>>()
            .map(LatticePoint::new)
    }
}

// ---- small exact helpers ------------------------------------------------------------

pub fn rational(num: i64, den: i64) -> BigRational {
    BigRational::new(BigInt::from(num), BigInt::from(den))
}

pub fn int_vector(x: &[i64]) -> RationalVector {
    x.iter().map(|&c| BigRational::from_integer(c.into())).collect()
}

pub fn dot(a: &[BigRational], b: &[BigRational]) -> BigRational {
    a.iter().zip(b).fold(BigRational::zero(), |acc, (x, y)| acc + x * y)
}

fn norm_sq(a: &[BigRational]) -> BigRational {
    dot(a, a)
}

fn sub(a: &[BigRational], b: &[BigRational]) -> RationalVector {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

fn scale(s: &BigRational, a: &[BigRational]) -> RationalVector {
    a.iter().map(|x| s * x).collect()
}

fn is_zero_vec(a: &[BigRational]) -> bool {
    a.iter().all(|x| x.is_zero())
}

/// Rounds `m * x` to the nearest integer and divides back by `m`.
fn round_to_grid(x: &BigRational, m: &BigInt) -> BigRational {
    let scaled = x * BigRational::from_integer(m.clone());
    BigRational::new(scaled.round().to_integer(), m.clone())
}

/// Determinant by Gaussian elimination over the rationals.
pub fn determinant(rows: &[RationalVector]) -> BigRational {
    let n = rows.len();
    let mut a = rows.to_vec();
    let mut det = BigRational::one();
    for col in 0..n {
        let Some(p) = (col..n).find(|&r| !a[r][col].is_zero()) else {
            return BigRational::zero();
        };
        if p != col {
            a.swap(p, col);
            det = -det;
        }
        let prow = a[col].clone();
        det *= &prow[col];
        for row in a.iter_mut().skip(col + 1) {
            if row[col].is_zero() {
                continue;
            }
            let f = &row[col] / &prow[col];
            for c in col..n {
                let t = &f * &prow[c];
                row[c] -= t;
            }
        }
    }
    det
}

/// The generalized cross product `F(h_1, ..., h_{d-1})`: the vector `z` with
/// `det[h_1, ..., h_{d-1}, x] = x . z` for every `x`, where the `h_j` are columns.
pub fn vector_product(h: &[RationalVector]) -> DResult<RationalVector> {
    let d = h.len() + 1;
    for v in h {
        if v.len() != d {
            return Err(DirectionError::Dimension {
                expected: d,
                got: v.len(),
            });
        }
    }
    let mut z = Vec::with_capacity(d);
    for i in 0..d {
        // rows of [h_1 ... h_{d-1}] with row i removed
        let minor: Vec<RationalVector> = (0..d)
            .filter(|&r| r != i)
            .map(|r| h.iter().map(|v| v[r].clone()).collect())
            .collect();
        let det = determinant(&minor);
        // (-1)^{(i+1)+d} with 1-based row index
        z.push(if (i + 1 + d) % 2 == 0 { det } else { -det });
    }
    Ok(z)
}

/// Incremental row-echelon basis used for independence tests.
#[derive(Default)]
struct Echelon {
    rows: Vec<(usize, RationalVector)>,
}

impl Echelon {
    fn reduce(&self, v: &[BigRational]) -> RationalVector {
        let mut r = v.to_vec();
        for (pivot, row) in &self.rows {
            if !r[*pivot].is_zero() {
                let f = &r[*pivot] / &row[*pivot];
                for (x, y) in r.iter_mut().zip(row) {
                    *x -= &f * y;
                }
            }
        }
        r
    }

    fn is_independent(&self, v: &[BigRational]) -> bool {
        !is_zero_vec(&self.reduce(v))
    }

    /// Adds `v` if it is independent of the rows so far.
    fn insert(&mut self, v: &[BigRational]) -> bool {
        let r = self.reduce(v);
        match r.iter().position(|x| !x.is_zero()) {
            Some(pivot) => {
                self.rows.push((pivot, r));
                true
            }
            None => false,
        }
    }
}

/// A maximal linearly independent subset, chosen greedily in input order.
fn maximal_independent(vs: &[RationalVector]) -> Vec<RationalVector> {
    let mut ech = Echelon::default();
    vs.iter().filter(|v| ech.insert(v)).cloned().collect()
}

/// Orthogonal projection of `v` onto the complement of `span(basis)`.
fn project_out(v: &[BigRational], basis: &[RationalVector]) -> RationalVector {
    let mut ortho: Vec<RationalVector> = Vec::new();
    for b in basis {
        let mut u = b.clone();
        for o in &ortho {
            let c = dot(&u, o) / norm_sq(o);
            u = sub(&u, &scale(&c, o));
        }
        if !is_zero_vec(&u) {
            ortho.push(u);
        }
    }
    let mut out = v.to_vec();
    for o in &ortho {
        let c = dot(&out, o) / norm_sq(o);
        out = sub(&out, &scale(&c, o));
    }
    out
}

/// Sign pattern and working rational direction from the user input.
fn classify(a: &[RationalVector], input: &DirectionInput) -> DResult<(RationalVector, Vec<bool>)> {
    match input {
        DirectionInput::Rational(v) => {
            let mut zero = Vec::with_capacity(a.len());
            for (k, x) in a.iter().enumerate() {
                let s = dot(v, x);
                if s.is_negative() {
                    return Err(DirectionError::Precondition(format!(
                        "v_hat . x < 0 for point {k}"
                    )));
                }
                zero.push(s.is_zero());
            }
            Ok((v.clone(), zero))
        }
        DirectionInput::Real {
            values,
            zeros,
            precision,
        } => {
            if !precision.is_finite() || *precision < 0.0 {
                return Err(DirectionError::Precondition(format!(
                    "precision must be finite and nonnegative, got {precision}"
                )));
            }
            let v: RationalVector = values
                .iter()
                .map(|&f| {
                    BigRational::from_float(f).ok_or_else(|| {
                        DirectionError::Precondition(format!("non-finite coordinate {f}"))
                    })
                })
                .collect::<DResult<_>>()?;
            let mut zero = vec![false; a.len()];
            for &k in zeros {
                if k >= a.len() {
                    return Err(DirectionError::Precondition(format!(
                        "zero index {k} out of range for {} points",
                        a.len()
                    )));
                }
                zero[k] = true;
            }
            let tol = BigRational::from_float(*precision).expect("finite");
            for (k, x) in a.iter().enumerate() {
                let s = dot(&v, x);
                if zero[k] {
                    if s.abs() > tol {
                        return Err(DirectionError::Precondition(format!(
                            "point {k} declared orthogonal but |v_hat . x| = {} exceeds the precision",
                            s.to_f64().unwrap_or(f64::NAN)
                        )));
                    }
                } else if s < -tol.clone() {
                    return Err(DirectionError::Precondition(format!(
                        "v_hat . x < 0 for point {k}"
                    )));
                } else if s.abs() <= tol {
                    return Err(DirectionError::Ambiguous(format!(
                        "point {k} declared positive but |v_hat . x| is within the precision"
                    )));
                }
            }
            // Make the declared zeros exact by removing the component of
            // v_hat in their span.
            let zero_pts: Vec<RationalVector> = a
                .iter()
                .zip(&zero)
                .filter(|(_, z)| **z)
                .map(|(x, _)| x.clone())
                .collect();
            let projected = project_out(&v, &zero_pts);
            for (k, x) in a.iter().enumerate() {
                if !zero[k] && !dot(&projected, x).is_positive() {
                    return Err(DirectionError::Ambiguous(format!(
                        "point {k} loses positivity once the declared zeros are enforced"
                    )));
                }
            }
            Ok((projected, zero))
        }
    }
}

/// Completes `vs` to a basis of the orthogonal complement of `v` using the
/// projections of the standard basis vectors, in coordinate order.
fn complete_basis(vs: &[RationalVector], v: &[BigRational]) -> Vec<RationalVector> {
    let d = v.len();
    let vv = norm_sq(v);
    let mut ech = Echelon::default();
    for x in vs {
        ech.insert(x);
    }
    let mut xi = Vec::new();
    for i in 0..d {
        if vs.len() + xi.len() == d - 1 {
            break;
        }
        let mut e: RationalVector = vec![BigRational::zero(); d];
        e[i] = BigRational::one();
        let c = &v[i] / &vv;
        let p = sub(&e, &scale(&c, v));
        if ech.insert(&p) {
            xi.push(p);
        }
    }
    xi
}

/// Every vector of `{-1, 0, 1}^d` in lexicographic order, zero vector first.
fn offsets(d: usize) -> Vec<Vec<i64>> {
    let mut all = vec![vec![]];
    for _ in 0..d {
        all = all
            .into_iter()
            .flat_map(|p: Vec<i64>| {
                [-1, 0, 1].into_iter().map(move |o| {
                    let mut q = p.clone();
                    q.push(o);
                    q
                })
            })
            .collect();
    }
    all.sort_by_key(|o| o.iter().any(|&c| c != 0));
    all
}

/// A rational `w` within `sqrt(eps_sq)` of `v` and orthogonal to `vs`.
fn approximate(v: &[BigRational], vs: &[RationalVector], eps_sq: &BigRational) -> DResult<RationalVector> {
    let d = v.len();
    let close = |w: &RationalVector| !is_zero_vec(w) && norm_sq(&sub(w, v)) <= *eps_sq;
    if vs.is_empty() {
        for k in 0..=MAX_RESOLUTION_LOG2 {
            let m = BigInt::one() << k;
            let w: RationalVector = v.iter().map(|x| round_to_grid(x, &m)).collect();
            if close(&w) {
                return Ok(w);
            }
        }
        return Err(DirectionError::NoConvergence);
    }
    let xi = complete_basis(vs, v);
    let shifts = offsets(d);
    for k in 0..=MAX_RESOLUTION_LOG2 {
        let m = BigInt::one() << k;
        let mr = BigRational::from_integer(m.clone());
        let mut ech = Echelon::default();
        for x in vs {
            ech.insert(x);
        }
        let mut hs: Vec<RationalVector> = vs.to_vec();
        for target in &xi {
            let base: Vec<BigInt> = target.iter().map(|x| (x * &mr).round().to_integer()).collect();
            let eta = shifts.iter().find_map(|o| {
                let cand: RationalVector = base
                    .iter()
                    .zip(o)
                    .map(|(b, &oi)| BigRational::new(b + BigInt::from(oi), m.clone()))
                    .collect();
                ech.is_independent(&cand).then_some(cand)
            });
            let eta = eta.expect("a full offset cube always leaves a proper subspace");
            ech.insert(&eta);
            hs.push(eta);
        }
        let zeta = vector_product(&hs)?;
        if is_zero_vec(&zeta) {
            continue;
        }
        let s = dot(v, &zeta) / norm_sq(&zeta);
        let q = round_to_grid(&s, &m);
        let w = scale(&q, &zeta);
        if close(&w) {
            return Ok(w);
        }
    }
    Err(DirectionError::NoConvergence)
}

/// Smallest positive integer multiple of a rational vector with coprime entries.
fn clear_denominators(w: &[BigRational]) -> Vec<BigInt> {
    let l = w.iter().fold(BigInt::one(), |acc, x| acc.lcm(x.denom()));
    let ints: Vec<BigInt> = w.iter().map(|x| (x * BigRational::from_integer(l.clone())).to_integer()).collect();
    let g = ints.iter().fold(BigInt::zero(), |acc, x| acc.gcd(x));
    if g.is_zero() {
        return ints;
    }
    ints.into_iter().map(|x| x / &g).collect()
}

pub fn rationalize_direction(a: &[LatticePoint], v_hat: &DirectionInput) -> DResult<DirectionResult> {
    let d = v_hat.dim();
    if d == 0 {
        return Err(DirectionError::Precondition("v_hat has dimension 0".into()));
    }
    for x in a {
        if x.dim() != d {
            return Err(DirectionError::Dimension {
                expected: d,
                got: x.dim(),
            });
        }
    }
    let pts: Vec<RationalVector> = a.iter().map(|x| int_vector(x.coords())).collect();
    let (v, zero) = classify(&pts, v_hat)?;
    if is_zero_vec(&v) {
        return Err(DirectionError::Precondition("v_hat must be nonzero".into()));
    }

    let delta = pts
        .iter()
        .zip(&zero)
        .filter(|(_, z)| !**z)
        .map(|(x, _)| dot(&v, x))
        .min();
    let m_sq = pts.iter().map(|x| norm_sq(x)).max();
    let eps_sq = match (delta, m_sq) {
        (Some(delta), Some(m_sq)) => &delta * &delta / (BigRational::from_integer(4.into()) * m_sq),
        // nothing to keep positive: stay close enough to v_hat to remain nonzero
        _ => norm_sq(&v) / BigRational::from_integer(4.into()),
    };

    let zero_pts: Vec<RationalVector> = pts
        .iter()
        .zip(&zero)
        .filter(|(_, z)| **z)
        .map(|(x, _)| x.clone())
        .collect();
    let vs = maximal_independent(&zero_pts);
    let w = approximate(&v, &vs, &eps_sq)?;
    let u_hat = clear_denominators(&w);

    let u_rat: RationalVector = u_hat.iter().cloned().map(BigRational::from_integer).collect();
    let mut certificate = Vec::with_capacity(a.len());
    for (k, x) in pts.iter().enumerate() {
        let s = dot(&u_rat, x);
        let sign = if s.is_zero() {
            Sign::Zero
        } else if s.is_positive() {
            Sign::Positive
        } else {
            return Err(DirectionError::Ambiguous(format!(
                "constructed direction is negative on point {k}"
            )));
        };
        if (sign == Sign::Zero) != zero[k] {
            return Err(DirectionError::Ambiguous(format!(
                "constructed direction changes the sign class of point {k}"
            )));
        }
        certificate.push(sign);
    }
    Ok(DirectionResult { u_hat, certificate })
}

// ---- JSON interface -------------------------------------------------------------

/// JSON form of a direction problem:
/// `{"A": [[ints]], "v_hat": [[num, den], ...]}` or
/// `{"A": [[ints]], "v_hat": {"values": [floats], "zeros": [indices], "precision": p}}`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DirectionProblem {
    #[serde(rename = "A")]
    pub a: Vec<LatticePoint>,
    pub v_hat: VHatDoc,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum VHatDoc {
    Rational(Vec<[i64; 2]>),
    Real {
        values: Vec<f64>,
        #[serde(default)]
        zeros: Vec<usize>,
        precision: f64,
    },
}

impl VHatDoc {
    pub fn to_input(&self) -> DResult<DirectionInput> {
        match self {
            VHatDoc::Rational(pairs) => pairs
                .iter()
                .map(|&[n, d]| {
                    if d == 0 {
                        Err(DirectionError::Precondition("zero denominator in v_hat".into()))
                    } else {
                        Ok(rational(n, d))
                    }
                })
                .collect::<DResult<_>>()
                .map(DirectionInput::Rational),
            VHatDoc::Real {
                values,
                zeros,
                precision,
            } => Ok(DirectionInput::Real {
                values: values.clone(),
                zeros: zeros.clone(),
                precision: *precision,
            }),
        }
    }
}

impl DirectionProblem {
    pub fn solve(&self) -> DResult<DirectionResult> {
        rationalize_direction(&self.a, &self.v_hat.to_input()?)
    }
}

impl DirectionResult {
    /// `{"u_hat": [...], "certificate": [...]}`; coordinates that do not fit in
    /// 64 bits are written as decimal strings.
    pub fn to_json(&self) -> serde_json::Value {
        let u: Vec<serde_json::Value> = self
            .u_hat
            .iter()
            .map(|c| match c.to_i64() {
                Some(i) => serde_json::Value::from(i),
                None => serde_json::Value::from(c.to_string()),
            })
            .collect();
        serde_json::json!({ "u_hat": u, "certificate": self.certificate })
    }
}
