#![allow(dead_code)]

use num::{BigInt, BigRational, Integer, Signed, Zero};
use rand::Rng;
use rwre::direction::{dot, int_vector, rational, DirectionResult, RationalVector};
use rwre::LatticePoint;

pub fn random_rational<R: Rng>(rng: &mut R, span: i64) -> BigRational {
    rational(rng.gen_range(-span..=span), rng.gen_range(1..=6))
}

pub fn random_rational_vector<R: Rng>(rng: &mut R, d: usize, span: i64) -> RationalVector {
    (0..d).map(|_| random_rational(rng, span)).collect()
}

/// `v` scaled to a primitive integer vector.
fn integer_multiple(v: &[BigRational]) -> Vec<BigInt> {
    let l = v.iter().fold(BigInt::from(1), |acc, x| acc.lcm(x.denom()));
    let ints: Vec<BigInt> = v.iter().map(|x| (x * BigRational::from_integer(l.clone())).to_integer()).collect();
    let g = ints.iter().fold(BigInt::zero(), |acc, x| acc.gcd(x));
    ints.into_iter().map(|x| x / &g).collect()
}

fn to_i64(v: &[BigInt]) -> Option<Vec<i64>> {
    use num::ToPrimitive;
    v.iter().map(|x| x.to_i64()).collect()
}

/// A random instance: `d <= 5`, `|A| <= 20`, rational `v_hat`, points with
/// negative dot product filtered out and a few points forced orthogonal.
pub fn random_direction_instance<R: Rng>(rng: &mut R) -> (Vec<LatticePoint>, RationalVector) {
    loop {
        let d = rng.gen_range(1..=5);
        let v = random_rational_vector(rng, d, 5);
        if v.iter().all(|x| x.is_zero()) {
            continue;
        }
        let w = integer_multiple(&v);
        let Some(w) = to_i64(&w) else { continue };
        let mut a = Vec::new();
        let target = rng.gen_range(1..=20);
        // orthogonal points x = w_j e_i - w_i e_j, plus sums of two of them
        let forced = if d >= 2 { rng.gen_range(0..=target.min(4)) } else { 0 };
        for _ in 0..forced {
            let i = rng.gen_range(0..d);
            let j = (i + rng.gen_range(1..d)) % d;
            let mut x = vec![0i64; d];
            x[i] += w[j];
            x[j] -= w[i];
            if rng.gen_bool(0.3) {
                let k = rng.gen_range(0..d);
                let l = (k + rng.gen_range(1..d)) % d;
                x[k] += w[l];
                x[l] -= w[k];
            }
            if x.iter().any(|&c| c != 0) && x.iter().all(|c| c.abs() < 1000) {
                a.push(LatticePoint::new(x));
            }
        }
        let mut tries = 0;
        while a.len() < target && tries < 200 {
            tries += 1;
            let x: Vec<i64> = (0..d).map(|_| rng.gen_range(-4..=4)).collect();
            if !dot(&int_vector(&x), &v).is_negative() {
                a.push(LatticePoint::new(x));
            }
        }
        if a.is_empty() {
            continue;
        }
        return (a, v);
    }
}

/// Exact sign-pattern postcondition.
pub fn sign_pattern_holds(a: &[LatticePoint], v: &[BigRational], res: &DirectionResult) -> bool {
    let u: RationalVector = res.u_hat.iter().map(|c| BigRational::from_integer(c.clone())).collect();
    if u.len() != v.len() {
        return false;
    }
    a.iter().all(|x| {
        let xr = int_vector(x.coords());
        let (dv, du) = (dot(&xr, v), dot(&xr, &u));
        dv.is_positive() == du.is_positive() && dv.is_zero() == du.is_zero()
    })
}
