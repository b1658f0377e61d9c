//! Exact forward iteration of the quenched law `P_0^omega(X_n = .)`.
//!
//! Mass lives in a dense array over the bounding box of all sites reachable
//! within the horizon. Each step only sweeps the current support box, which
//! grows by the per-coordinate step bounds. Sources are swept in
//! lexicographic site order, so accumulation order is fixed.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::environment::SiteLaws;
use crate::error::{Error, Result};
use crate::lattice::LatticePoint;

/// Default cap on the number of cells of the dense support box.
pub const DEFAULT_SUPPORT_CAP: usize = 10_000_000;

const UNKNOWN: u16 = u16::MAX;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuenchedDistribution {
    pub horizon: usize,
    pub support: BTreeMap<LatticePoint, f64>,
}

impl QuenchedDistribution {
    pub fn total_mass(&self) -> f64 {
        self.support.values().sum()
    }

    pub fn mean(&self) -> Vec<f64> {
        let d = self.support.keys().next().map_or(0, |x| x.dim());
        let mut m = vec![0.0; d];
        for (x, p) in &self.support {
            for (mi, &c) in m.iter_mut().zip(x.coords()) {
                *mi += p * c as f64;
            }
        }
        m
    }

    pub fn prob(&self, x: &LatticePoint) -> f64 {
        self.support.get(x).copied().unwrap_or(0.0)
    }

    /// CSV dump: `coord_0..coord_{d-1}, probability`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let d = self.support.keys().next().map_or(0, |x| x.dim());
        let mut header: Vec<String> = (0..d).map(|i| format!("coord_{i}")).collect();
        header.push("probability".into());
        w.write_record(&header)?;
        for (x, p) in &self.support {
            let mut row: Vec<String> = x.coords().iter().map(|c| c.to_string()).collect();
            row.push(format!("{p:e}"));
            w.write_record(&row)?;
        }
        w.flush().map_err(|e| Error::io("<distribution csv>", e))?;
        Ok(())
    }
}

/// Step-by-step evolution of the quenched law from a fixed start.
pub struct QuenchedEvolution<'e, E: ?Sized> {
    env: &'e E,
    origin: Vec<i64>,
    shape: Vec<usize>,
    strides: Vec<usize>,
    cur: Vec<f64>,
    next: Vec<f64>,
    lo: Vec<i64>,
    hi: Vec<i64>,
    step_lo: Vec<i64>,
    step_hi: Vec<i64>,
    components: Vec<u16>,
    offsets: Vec<Vec<(isize, f64)>>,
    time: usize,
    horizon: usize,
}

impl<'e, E: SiteLaws + ?Sized> QuenchedEvolution<'e, E> {
    /// Prepares storage for up to `horizon` steps from `x0`.
    pub fn new(env: &'e E, x0: &LatticePoint, horizon: usize, support_cap: usize) -> Result<Self> {
        let model = env.model();
        let d = model.dimension();
        if x0.dim() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: x0.dim(),
            });
        }
        if model.components().len() >= UNKNOWN as usize {
            return Err(Error::InvalidModel("too many mixture components".into()));
        }
        let (step_lo, step_hi) = model.step_bounds();
        let h = horizon as i64;
        let mut origin = Vec::with_capacity(d);
        let mut shape = Vec::with_capacity(d);
        let mut cells: u128 = 1;
        for i in 0..d {
            let a = x0.coords()[i] + h * step_lo[i].min(0);
            let b = x0.coords()[i] + h * step_hi[i].max(0);
            origin.push(a);
            let len = (b - a + 1) as usize;
            shape.push(len);
            cells = cells.saturating_mul(len as u128);
        }
        if cells > support_cap as u128 {
            return Err(Error::SupportCapExceeded {
                needed: usize::try_from(cells).unwrap_or(usize::MAX),
                cap: support_cap,
            });
        }
        let cells = cells as usize;
        let mut strides = vec![1usize; d];
        for i in (0..d.saturating_sub(1)).rev() {
            strides[i] = strides[i + 1] * shape[i + 1];
        }
        let offsets = model
            .components()
            .iter()
            .map(|c| {
                c.law
                    .entries()
                    .filter(|(_, p)| *p > 0.0)
                    .map(|(z, p)| {
                        let off: isize = z
                            .coords()
                            .iter()
                            .zip(&strides)
                            .map(|(&zi, &s)| zi as isize * s as isize)
                            .sum();
                        (off, p)
                    })
                    .collect()
            })
            .collect();
        let mut evo = QuenchedEvolution {
            env,
            origin,
            shape,
            strides,
            cur: vec![0.0; cells],
            next: vec![0.0; cells],
            lo: x0.coords().to_vec(),
            hi: x0.coords().to_vec(),
            step_lo,
            step_hi,
            components: vec![UNKNOWN; cells],
            offsets,
            time: 0,
            horizon,
        };
        let i0 = evo.index_of(x0).expect("start lies in the box");
        evo.cur[i0] = 1.0;
        Ok(evo)
    }

    pub fn time(&self) -> usize {
        self.time
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    fn index_of(&self, x: &LatticePoint) -> Option<usize> {
        let mut idx = 0usize;
        for i in 0..self.origin.len() {
            let off = x.coords()[i] - self.origin[i];
            if off < 0 || off as usize >= self.shape[i] {
                return None;
            }
            idx += off as usize * self.strides[i];
        }
        Some(idx)
    }

    fn point_of(&self, mut idx: usize) -> LatticePoint {
        let mut coords = vec![0i64; self.origin.len()];
        for i in 0..coords.len() {
            coords[i] = self.origin[i] + (idx / self.strides[i]) as i64;
            idx %= self.strides[i];
        }
        LatticePoint::new(coords)
    }

    /// Start index and length of every last-coordinate row of the current
    /// support box, in lexicographic order.
    fn rows(&self) -> Vec<(usize, usize)> {
        let d = self.origin.len();
        let last = d - 1;
        let row_len = (self.hi[last] - self.lo[last] + 1) as usize;
        let mut pos: Vec<i64> = self.lo[..last].to_vec();
        let mut out = Vec::new();
        loop {
            let mut start = (self.lo[last] - self.origin[last]) as usize;
            for i in 0..last {
                start += (pos[i] - self.origin[i]) as usize * self.strides[i];
            }
            out.push((start, row_len));
            // odometer over the leading coordinates
            let mut i = last;
            loop {
                if i == 0 {
                    return out;
                }
                i -= 1;
                if pos[i] < self.hi[i] {
                    pos[i] += 1;
                    break;
                }
                pos[i] = self.lo[i];
            }
        }
    }

    #[inline]
    fn component(&mut self, idx: usize) -> usize {
        let c = self.components[idx];
        if c != UNKNOWN {
            return c as usize;
        }
        let x = self.point_of(idx);
        let c = self.env.component_at(&x);
        self.components[idx] = c as u16;
        c
    }

    /// Advances the law by one step.
    ///
    /// # Panics
    /// If called more than `horizon` times.
    pub fn step(&mut self) {
        assert!(
            self.time < self.horizon,
            "quenched evolution stepped past its horizon {}",
            self.horizon
        );
        for (start, len) in self.rows() {
            for idx in start..start + len {
                let p = self.cur[idx];
                if p == 0.0 {
                    continue;
                }
                self.cur[idx] = 0.0;
                let c = self.component(idx);
                for &(off, q) in &self.offsets[c] {
                    self.next[(idx as isize + off) as usize] += p * q;
                }
            }
        }
        std::mem::swap(&mut self.cur, &mut self.next);
        for i in 0..self.lo.len() {
            self.lo[i] += self.step_lo[i];
            self.hi[i] += self.step_hi[i];
        }
        self.time += 1;
    }

    pub fn mass_at(&self, x: &LatticePoint) -> f64 {
        self.index_of(x).map_or(0.0, |i| self.cur[i])
    }

    /// Removes and returns the mass currently at `x`.
    pub fn take_mass_at(&mut self, x: &LatticePoint) -> f64 {
        match self.index_of(x) {
            Some(i) => std::mem::take(&mut self.cur[i]),
            None => 0.0,
        }
    }

    pub fn total_mass(&self) -> f64 {
        self.rows()
            .into_iter()
            .map(|(s, l)| self.cur[s..s + l].iter().sum::<f64>())
            .sum()
    }

    /// Quenched mean `E^omega(X_t)` at the current time.
    pub fn mean(&self) -> Vec<f64> {
        let d = self.origin.len();
        let last = d - 1;
        let mut m = vec![0.0; d];
        for (start, len) in self.rows() {
            let head = self.point_of(start);
            let mut mass = 0.0;
            let mut moment = 0.0;
            for (j, &p) in self.cur[start..start + len].iter().enumerate() {
                mass += p;
                moment += p * (self.lo[last] + j as i64) as f64;
            }
            for i in 0..last {
                m[i] += mass * head.coords()[i] as f64;
            }
            m[last] += moment;
        }
        m
    }

    /// Nonzero cells of the current law in lexicographic order.
    pub fn support(&self) -> Vec<(LatticePoint, f64)> {
        let mut out = Vec::new();
        for (start, len) in self.rows() {
            for idx in start..start + len {
                if self.cur[idx] != 0.0 {
                    out.push((self.point_of(idx), self.cur[idx]));
                }
            }
        }
        out
    }

    pub fn distribution(&self) -> QuenchedDistribution {
        QuenchedDistribution {
            horizon: self.time,
            support: self.support().into_iter().collect(),
        }
    }
}

pub fn quenched_distribution<E: SiteLaws + ?Sized>(
    env: &E,
    x0: &LatticePoint,
    n: usize,
) -> Result<QuenchedDistribution> {
    quenched_distribution_capped(env, x0, n, DEFAULT_SUPPORT_CAP)
}

pub fn quenched_distribution_capped<E: SiteLaws + ?Sized>(
    env: &E,
    x0: &LatticePoint,
    n: usize,
    support_cap: usize,
) -> Result<QuenchedDistribution> {
    let mut evo = QuenchedEvolution::new(env, x0, n, support_cap)?;
    for _ in 0..n {
        evo.step();
    }
    Ok(evo.distribution())
}

pub fn quenched_mean<E: SiteLaws + ?Sized>(env: &E, x0: &LatticePoint, n: usize) -> Result<Vec<f64>> {
    let mut evo = QuenchedEvolution::new(env, x0, n, DEFAULT_SUPPORT_CAP)?;
    for _ in 0..n {
        evo.step();
    }
    Ok(evo.mean())
}

/// Quenched means at several horizons from a single sweep. `horizons` must be
/// nondecreasing.
pub fn quenched_means_at<E: SiteLaws + ?Sized>(
    env: &E,
    x0: &LatticePoint,
    horizons: &[usize],
    support_cap: usize,
) -> Result<Vec<Vec<f64>>> {
    if horizons.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::Precondition("horizons must be nondecreasing".into()));
    }
    let max = horizons.last().copied().unwrap_or(0);
    let mut evo = QuenchedEvolution::new(env, x0, max, support_cap)?;
    let mut out = Vec::with_capacity(horizons.len());
    for &h in horizons {
        while evo.time() < h {
            evo.step();
        }
        out.push(evo.mean());
    }
    Ok(out)
}

/// `P_{x0}^omega(z in X_[0, n-1])`, computed by absorbing mass on arrival at `z`.
pub fn visit_probability<E: SiteLaws + ?Sized>(
    env: &E,
    x0: &LatticePoint,
    z: &LatticePoint,
    n: usize,
    support_cap: usize,
) -> Result<f64> {
    if n == 0 {
        return Ok(0.0);
    }
    let mut evo = QuenchedEvolution::new(env, x0, n - 1, support_cap)?;
    let mut absorbed = evo.take_mass_at(z);
    for _ in 1..n {
        evo.step();
        absorbed += evo.take_mass_at(z);
    }
    Ok(absorbed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environment::Environment;
    use crate::model::presets::*;
    use crate::model::{Component, ModelSpec, StepLaw};

    fn lp(c: [i64; 2]) -> LatticePoint {
        LatticePoint::from(c)
    }

    #[test]
    fn horizon_zero_is_point_mass() {
        let m = desk_model();
        let env = Environment::new(&m, 3);
        let q = quenched_distribution(&env, &lp([2, -1]), 0).unwrap();
        assert_eq!(q.support.len(), 1);
        assert_eq!(q.prob(&lp([2, -1])), 1.0);
    }

    #[test]
    fn point_mass_model() {
        let m = point_mass([1, 0], [1, 0]);
        let env = Environment::new(&m, 3);
        let q = quenched_distribution(&env, &lp([0, 0]), 9).unwrap();
        assert_eq!(q.support.len(), 1);
        assert_eq!(q.prob(&lp([9, 0])), 1.0);
        assert_eq!(quenched_mean(&env, &lp([0, 0]), 7).unwrap(), vec![7.0, 0.0]);
    }

    #[test]
    fn binomial_two_steps() {
        let m = two_jump([1, 0], [0, 1], [1, 1]);
        let env = Environment::new(&m, 0);
        let q = quenched_distribution(&env, &lp([0, 0]), 2).unwrap();
        assert_eq!(q.support.len(), 3);
        assert_eq!(q.prob(&lp([2, 0])), 0.25);
        assert_eq!(q.prob(&lp([1, 1])), 0.5);
        assert_eq!(q.prob(&lp([0, 2])), 0.25);
        assert_eq!(quenched_mean(&env, &lp([0, 0]), 4).unwrap(), vec![2.0, 2.0]);
    }

    #[test]
    fn mass_is_conserved() {
        let m = lazy_desk_model();
        let env = Environment::new(&m, 12);
        let mut evo = QuenchedEvolution::new(&env, &lp([0, 0]), 60, DEFAULT_SUPPORT_CAP).unwrap();
        for k in 1..=60 {
            evo.step();
            let total = evo.total_mass();
            assert!((total - 1.0).abs() <= k as f64 * 1e-12, "k={k} total={total}");
        }
    }

    #[test]
    fn support_respects_level_bounds() {
        let m = desk_model();
        let env = Environment::new(&m, 1);
        let n = 15;
        let q = quenched_distribution(&env, &lp([0, 0]), n).unwrap();
        for x in q.support.keys() {
            let l = m.level(x);
            assert!(l >= 0 && l <= 2 * n as i64);
        }
    }

    #[test]
    fn successive_supports_follow_local_laws() {
        let m = desk_model();
        let env = Environment::new(&m, 21);
        let mut evo = QuenchedEvolution::new(&env, &lp([0, 0]), 12, DEFAULT_SUPPORT_CAP).unwrap();
        for _ in 0..12 {
            let before: Vec<LatticePoint> = evo.support().into_iter().map(|(x, _)| x).collect();
            evo.step();
            let after: std::collections::BTreeSet<LatticePoint> =
                evo.support().into_iter().map(|(x, _)| x).collect();
            let expected: std::collections::BTreeSet<LatticePoint> = before
                .iter()
                .flat_map(|x| {
                    env.site_law(x)
                        .entries()
                        .filter(|(_, p)| *p > 0.0)
                        .map(move |(z, _)| x + z)
                        .collect::<Vec<_>>()
                })
                .collect();
            assert_eq!(after, expected);
        }
    }

    #[test]
    fn three_dimensional_dp_matches_naive_recursion() {
        let law = |e: &[([i64; 3], f64)]| {
            StepLaw::new(e.iter().map(|(z, p)| (LatticePoint::from(*z), *p)).collect()).unwrap()
        };
        let m = ModelSpec::new(
            3,
            LatticePoint::from([0, 0, 1]),
            vec![
                Component {
                    weight: 0.4,
                    law: law(&[([1, 0, 1], 0.5), ([0, -1, 1], 0.3), ([0, 0, 0], 0.2)]),
                },
                Component {
                    weight: 0.6,
                    law: law(&[([-1, 0, 1], 0.6), ([0, 1, 2], 0.4)]),
                },
            ],
        )
        .unwrap();
        let env = Environment::new(&m, 77);
        let x0 = LatticePoint::from([1, -2, 3]);
        let n = 7;
        let q = quenched_distribution(&env, &x0, n).unwrap();
        let mut naive: BTreeMap<LatticePoint, f64> = BTreeMap::from([(x0.clone(), 1.0)]);
        for _ in 0..n {
            let mut next = BTreeMap::new();
            for (x, p) in &naive {
                for (z, w) in env.site_law(x).entries() {
                    *next.entry(x + z).or_insert(0.0) += p * w;
                }
            }
            naive = next;
        }
        assert_eq!(q.support.len(), naive.len());
        for (x, p) in &naive {
            assert!((q.prob(x) - p).abs() < 1e-15, "{x}");
        }
    }

    #[test]
    fn means_at_several_horizons() {
        let m = desk_model();
        let env = Environment::new(&m, 4);
        let ms = quenched_means_at(&env, &lp([0, 0]), &[3, 5, 5, 9], DEFAULT_SUPPORT_CAP).unwrap();
        for (h, mean) in [3, 5, 5, 9].iter().zip(&ms) {
            assert_eq!(mean, &quenched_mean(&env, &lp([0, 0]), *h).unwrap());
        }
        assert!(quenched_means_at(&env, &lp([0, 0]), &[5, 3], DEFAULT_SUPPORT_CAP).is_err());
    }

    #[test]
    fn support_cap_is_reported() {
        let m = desk_model();
        let env = Environment::new(&m, 4);
        let err = QuenchedEvolution::new(&env, &lp([0, 0]), 100, 1000).err().unwrap();
        assert!(matches!(err, Error::SupportCapExceeded { cap: 1000, .. }));
    }

    #[test]
    fn visit_probability_examples() {
        let m = point_mass([1, 0], [1, 0]);
        let env = Environment::new(&m, 0);
        assert_eq!(visit_probability(&env, &lp([0, 0]), &lp([3, 0]), 4, DEFAULT_SUPPORT_CAP).unwrap(), 1.0);
        assert_eq!(visit_probability(&env, &lp([0, 0]), &lp([3, 0]), 3, DEFAULT_SUPPORT_CAP).unwrap(), 0.0);
        assert_eq!(visit_probability(&env, &lp([0, 0]), &lp([0, 0]), 1, DEFAULT_SUPPORT_CAP).unwrap(), 1.0);

        // 1/2 on (1,0), 1/2 on (0,1): the first passage probability to (1,1) within
        // two steps is 1/2 and revisiting is impossible.
        let m = two_jump([1, 0], [0, 1], [1, 1]);
        let env = Environment::new(&m, 0);
        let p = visit_probability(&env, &lp([0, 0]), &lp([1, 1]), 3, DEFAULT_SUPPORT_CAP).unwrap();
        assert_eq!(p, 0.5);
    }

    #[test]
    fn csv_dump() {
        let m = two_jump([1, 0], [0, 1], [1, 1]);
        let env = Environment::new(&m, 0);
        let q = quenched_distribution(&env, &lp([0, 0]), 1).unwrap();
        let mut buf = Vec::new();
        q.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "coord_0,coord_1,probability\n0,1,5e-1\n1,0,5e-1\n");
    }
}
