use std::fmt;
use std::ops::{Add, Sub};

use serde::{Deserialize, Serialize};
use smallvec::SmallVec;

/// A point of the integer lattice Z^d.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LatticePoint(SmallVec<[i64; 4]>);

impl LatticePoint {
    pub fn new(coords: impl Into<Vec<i64>>) -> Self {
        LatticePoint(SmallVec::from_vec(coords.into()))
    }

    pub fn from_slice(coords: &[i64]) -> Self {
        LatticePoint(SmallVec::from_slice(coords))
    }

    pub fn origin(dim: usize) -> Self {
        LatticePoint(smallvec::smallvec![0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn coords(&self) -> &[i64] {
        &self.0
    }

    pub fn dot(&self, other: &LatticePoint) -> i64 {
        debug_assert_eq!(self.dim(), other.dim());
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }

    pub fn dot_f64(&self, v: &[f64]) -> f64 {
        self.0.iter().zip(v).map(|(&a, b)| a as f64 * b).sum()
    }

    pub fn norm_sq(&self) -> i64 {
        self.0.iter().map(|a| a * a).sum()
    }

    pub fn norm(&self) -> f64 {
        (self.norm_sq() as f64).sqrt()
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&a| a == 0)
    }

    pub fn add_assign(&mut self, other: &LatticePoint) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a += b;
        }
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.0.iter().map(|&a| a as f64).collect()
    }
}

impl Add for &LatticePoint {
    type Output = LatticePoint;
    fn add(self, rhs: &LatticePoint) -> LatticePoint {
        LatticePoint(self.0.iter().zip(&rhs.0).map(|(a, b)| a + b).collect())
    }
}

impl Sub for &LatticePoint {
    type Output = LatticePoint;
    fn sub(self, rhs: &LatticePoint) -> LatticePoint {
        LatticePoint(self.0.iter().zip(&rhs.0).map(|(a, b)| a - b).collect())
    }
}

impl From<Vec<i64>> for LatticePoint {
    fn from(v: Vec<i64>) -> Self {
        LatticePoint::new(v)
    }
}

impl<const N: usize> From<[i64; N]> for LatticePoint {
    fn from(v: [i64; N]) -> Self {
        LatticePoint::from_slice(&v)
    }
}

impl fmt::Debug for LatticePoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl fmt::Display for LatticePoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, c) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{c}")?;
        }
        write!(f, ")")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn arithmetic() {
        let a = LatticePoint::from([1, -2]);
        let b = LatticePoint::from([3, 4]);
        assert_eq!(&a + &b, LatticePoint::from([4, 2]));
        assert_eq!(&a - &b, LatticePoint::from([-2, -6]));
        assert_eq!(a.dot(&b), -5);
        assert_eq!(a.norm_sq(), 5);
        assert_eq!(format!("{a}"), "(1,-2)");
    }

    #[test]
    fn serializes_as_plain_array() {
        let a = LatticePoint::from([1, 0, -3]);
        assert_eq!(serde_json::to_string(&a).unwrap(), "[1,0,-3]");
        let back: LatticePoint = serde_json::from_str("[1,0,-3]").unwrap();
        assert_eq!(back, a);
    }
}
