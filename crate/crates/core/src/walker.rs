//! Simulation engines: quenched walks, walk pairs in a common environment,
//! the single-site edge coupling, regeneration cycles and common levels.

use std::collections::{HashMap, HashSet};
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::environment::{perturb_site, SiteLaws};
use crate::error::{Error, Result};
use crate::lattice::LatticePoint;
use crate::rng::{domain, hash_words, unit_f64};

/// Default cap on the length of a single regeneration cycle or level search.
pub const DEFAULT_CYCLE_CAP: u64 = 10_000_000;

/// A quenched walk driven by the step stream keyed on `(walk_seed, step index)`.
#[derive(Clone, Debug)]
pub struct Walk<'e, E: ?Sized> {
    env: &'e E,
    position: LatticePoint,
    level: i64,
    time: u64,
    seed: u64,
}

impl<'e, E: SiteLaws + ?Sized> Walk<'e, E> {
    pub fn new(env: &'e E, start: LatticePoint, walk_seed: u64) -> Self {
        let level = env.model().level(&start);
        Walk {
            env,
            position: start,
            level,
            time: 0,
            seed: walk_seed,
        }
    }

    pub fn environment(&self) -> &'e E {
        self.env
    }

    pub fn position(&self) -> &LatticePoint {
        &self.position
    }

    pub fn level(&self) -> i64 {
        self.level
    }

    pub fn time(&self) -> u64 {
        self.time
    }

    #[inline]
    pub fn step(&mut self) -> &LatticePoint {
        let law = self.env.site_law(&self.position);
        let u = unit_f64(hash_words(self.seed, domain::STEP, [self.time]));
        let z = law.sample(u);
        self.level += z.dot(self.env.model().u_hat());
        self.position.add_assign(z);
        self.time += 1;
        &self.position
    }

    /// Steps until the level strictly exceeds its current value and returns
    /// the number of steps taken.
    pub fn advance_level(&mut self, cap: u64) -> Result<u64> {
        let start_level = self.level;
        let start_time = self.time;
        while self.level <= start_level {
            if self.time - start_time >= cap {
                return Err(Error::CycleCapExceeded {
                    cap,
                    start: start_time,
                });
            }
            self.step();
        }
        Ok(self.time - start_time)
    }
}

/// Positions `X_0, ..., X_n` of one walk.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub start: LatticePoint,
    pub positions: Vec<LatticePoint>,
    pub walk_seed: u64,
}

impl Trajectory {
    /// Number of steps (one less than the number of positions).
    pub fn steps(&self) -> usize {
        self.positions.len() - 1
    }

    pub fn end(&self) -> &LatticePoint {
        self.positions.last().expect("trajectory holds X_0")
    }

    pub fn levels(&self, u_hat: &LatticePoint) -> Vec<i64> {
        self.positions.iter().map(|x| x.dot(u_hat)).collect()
    }

    /// CSV dump with columns `step_index, coord_0..coord_{d-1}, level`.
    pub fn write_csv<W: Write>(&self, u_hat: &LatticePoint, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let d = self.start.dim();
        let mut header = vec!["step_index".to_string()];
        header.extend((0..d).map(|i| format!("coord_{i}")));
        header.push("level".into());
        w.write_record(&header)?;
        for (k, x) in self.positions.iter().enumerate() {
            let mut row = vec![k.to_string()];
            row.extend(x.coords().iter().map(|c| c.to_string()));
            row.push(x.dot(u_hat).to_string());
            w.write_record(&row)?;
        }
        w.flush().map_err(|e| Error::io("<trajectory csv>", e))?;
        Ok(())
    }
}

pub fn simulate<E: SiteLaws + ?Sized>(
    env: &E,
    x0: &LatticePoint,
    n: usize,
    walk_seed: u64,
) -> Trajectory {
    let mut walk = Walk::new(env, x0.clone(), walk_seed);
    let mut positions = Vec::with_capacity(n + 1);
    positions.push(x0.clone());
    for _ in 0..n {
        positions.push(walk.step().clone());
    }
    Trajectory {
        start: x0.clone(),
        positions,
        walk_seed,
    }
}

/// Two walks with independent step streams in the same environment.
pub fn simulate_pair<E: SiteLaws + ?Sized>(
    env: &E,
    x0_a: &LatticePoint,
    x0_b: &LatticePoint,
    n: usize,
    seed_a: u64,
    seed_b: u64,
) -> (Trajectory, Trajectory) {
    (
        simulate(env, x0_a, n, seed_a),
        simulate(env, x0_b, n, seed_b),
    )
}

/// One regeneration cycle: `(sigma_k - sigma_{k-1}, X_{sigma_k} - X_{sigma_{k-1}})`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegenerationRecord {
    pub sigma_increment: u64,
    pub x_increment: LatticePoint,
}

/// The first `k` regeneration cycles of the walk started at `x0`.
pub fn regenerations<E: SiteLaws + ?Sized>(
    env: &E,
    x0: &LatticePoint,
    k: usize,
    walk_seed: u64,
    cap: u64,
) -> Result<Vec<RegenerationRecord>> {
    let mut walk = Walk::new(env, x0.clone(), walk_seed);
    let mut records = Vec::with_capacity(k);
    let mut anchor = x0.clone();
    for _ in 0..k {
        let sigma_increment = walk.advance_level(cap)?;
        let x_increment = walk.position() - &anchor;
        anchor = walk.position().clone();
        records.push(RegenerationRecord {
            sigma_increment,
            x_increment,
        });
    }
    Ok(records)
}

/// Number of distinct sites visited by both trajectories.
pub fn intersections(a: &Trajectory, b: &Trajectory) -> Result<usize> {
    if a.positions.len() != b.positions.len() {
        return Err(Error::Precondition(format!(
            "trajectories have different lengths ({} vs {})",
            a.positions.len(),
            b.positions.len()
        )));
    }
    Ok(site_intersection(&a.positions, &b.positions))
}

/// Cardinality of the intersection of two site sets given as position lists.
pub fn site_intersection(a: &[LatticePoint], b: &[LatticePoint]) -> usize {
    let sa: HashSet<&LatticePoint> = a.iter().collect();
    let sb: HashSet<&LatticePoint> = b.iter().collect();
    sb.iter().filter(|x| sa.contains(*x)).count()
}

/// Running count of `|A ∩ B|` as sites are appended to either set.
#[derive(Default, Debug, Clone)]
pub struct IntersectionCounter {
    a: HashSet<LatticePoint>,
    b: HashSet<LatticePoint>,
    common: usize,
}

impl IntersectionCounter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push_a(&mut self, x: &LatticePoint) {
        if !self.a.contains(x) {
            if self.b.contains(x) {
                self.common += 1;
            }
            self.a.insert(x.clone());
        }
    }

    pub fn push_b(&mut self, x: &LatticePoint) {
        if !self.b.contains(x) {
            if self.a.contains(x) {
                self.common += 1;
            }
            self.b.insert(x.clone());
        }
    }

    pub fn count(&self) -> usize {
        self.common
    }
}

// ---- common levels ----------------------------------------------------------------

/// Per-common-level data of two walks in one environment.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LevelChainRecord {
    pub common_level: i64,
    pub entry_a: LatticePoint,
    pub entry_b: LatticePoint,
    /// `entry_a - entry_b`, a point of the zero level.
    pub z_state: LatticePoint,
}

/// Iterates over the levels a walk hits exactly, with entry points.
struct LevelHits<'e, E: ?Sized> {
    walk: Walk<'e, E>,
    cap: u64,
}

impl<E: SiteLaws + ?Sized> LevelHits<'_, E> {
    /// Runs to the next level change. Because the level never decreases, the
    /// level just entered is hit exactly and the current site is its entry point.
    fn next_hit(&mut self) -> Result<(i64, LatticePoint)> {
        self.walk.advance_level(self.cap)?;
        Ok((self.walk.level(), self.walk.position().clone()))
    }
}

/// The first `j_max` common levels `L_1 < L_2 < ...` above the starting level.
pub fn level_chain<E: SiteLaws + ?Sized>(
    env: &E,
    x0_a: &LatticePoint,
    x0_b: &LatticePoint,
    j_max: usize,
    seeds: (u64, u64),
    cap: u64,
) -> Result<Vec<LevelChainRecord>> {
    let model = env.model();
    if model.level(x0_a) != model.level(x0_b) {
        return Err(Error::Precondition(format!(
            "starting points {x0_a} and {x0_b} lie on different levels"
        )));
    }
    let mut a = LevelHits {
        walk: Walk::new(env, x0_a.clone(), seeds.0),
        cap,
    };
    let mut b = LevelHits {
        walk: Walk::new(env, x0_b.clone(), seeds.1),
        cap,
    };
    let mut records = Vec::with_capacity(j_max);
    if j_max == 0 {
        return Ok(records);
    }
    let (mut la, mut ea) = a.next_hit()?;
    let (mut lb, mut eb) = b.next_hit()?;
    loop {
        if la == lb {
            let z_state = &ea - &eb;
            records.push(LevelChainRecord {
                common_level: la,
                entry_a: ea,
                entry_b: eb,
                z_state,
            });
            if records.len() == j_max {
                return Ok(records);
            }
            (la, ea) = a.next_hit()?;
            (lb, eb) = b.next_hit()?;
        } else if la < lb {
            (la, ea) = a.next_hit()?;
        } else {
            (lb, eb) = b.next_hit()?;
        }
    }
}

// ---- single-site edge coupling ------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoupledPairResult {
    /// Walk in the original environment.
    pub traj_a: Trajectory,
    /// Walk in the environment perturbed at `z`.
    pub traj_b: Trajectory,
    /// First hitting time of `z` (common to both walks).
    pub tau: Option<usize>,
}

/// Edge-stack walk: the i-th visit to site x consumes edge i of x's stack.
struct EdgeWalk<'e, E: ?Sized> {
    env: &'e E,
    seed: u64,
    /// Site whose stack is drawn from the resampled domain.
    resampled_site: Option<LatticePoint>,
    visits: HashMap<LatticePoint, u64>,
}

impl<E: SiteLaws + ?Sized> EdgeWalk<'_, E> {
    fn next_step(&mut self, x: &LatticePoint) -> LatticePoint {
        let count = self.visits.entry(x.clone()).or_insert(0);
        let visit = *count;
        *count += 1;
        let dom = if self.resampled_site.as_ref() == Some(x) {
            domain::EDGE_RESAMPLED
        } else {
            domain::EDGE
        };
        let words = x.coords().iter().map(|&c| c as u64).chain([visit]);
        let u = unit_f64(hash_words(self.seed, dom, words));
        x + self.env.site_law(x).sample(u)
    }
}

/// Runs the walk in `env` and in the view perturbed at `z` on shared edge
/// stacks; only the stack at `z` differs between the two walks.
pub fn coupled_pair<E: SiteLaws + ?Sized>(
    env: &E,
    z: &LatticePoint,
    resample_seed: u64,
    x0: &LatticePoint,
    n: usize,
    walk_seed: u64,
) -> CoupledPairResult {
    let perturbed = perturb_site(env, z, resample_seed);
    let mut walk_a = EdgeWalk {
        env,
        seed: walk_seed,
        resampled_site: None,
        visits: HashMap::new(),
    };
    let mut walk_b = EdgeWalk {
        env: &perturbed,
        seed: walk_seed,
        resampled_site: Some(z.clone()),
        visits: HashMap::new(),
    };
    let mut pa = Vec::with_capacity(n + 1);
    let mut pb = Vec::with_capacity(n + 1);
    pa.push(x0.clone());
    pb.push(x0.clone());
    for _ in 0..n {
        let next_a = walk_a.next_step(pa.last().unwrap());
        let next_b = walk_b.next_step(pb.last().unwrap());
        pa.push(next_a);
        pb.push(next_b);
    }
    let tau = pa.iter().position(|x| x == z);
    CoupledPairResult {
        traj_a: Trajectory {
            start: x0.clone(),
            positions: pa,
            walk_seed,
        },
        traj_b: Trajectory {
            start: x0.clone(),
            positions: pb,
            walk_seed,
        },
        tau,
    }
}
