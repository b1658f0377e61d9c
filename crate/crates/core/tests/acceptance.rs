//! The full acceptance suite. Runs every config in `configs/acceptance`, prints
//! one line per criterion and fails if any criterion fails.

mod common;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use common::*;
use num::Zero;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rwre::direction::{determinant, dot, rationalize_direction, vector_product, DirectionInput, RationalVector};
use rwre::harness::{run, ExperimentConfig, ExperimentRecord, RunOptions, Status};

fn config_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/acceptance")
}

struct Run {
    record: ExperimentRecord,
    elapsed: Duration,
}

struct Suite(BTreeMap<String, Run>);

impl Suite {
    fn run(out: &Path, threads: usize) -> Suite {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        let mut paths: Vec<PathBuf> = fs::read_dir(config_dir())
            .unwrap()
            .map(|e| e.unwrap().path())
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        paths.sort();
        let mut runs = BTreeMap::new();
        for p in paths {
            let name = p.file_stem().unwrap().to_string_lossy().into_owned();
            let cfg = ExperimentConfig::load(&p).unwrap();
            let opts = RunOptions {
                seed: None,
                output_dir: Some(out.join(&name)),
            };
            let t = Instant::now();
            let outcome = pool.install(|| run(&cfg, &opts)).unwrap_or_else(|e| panic!("{name}: {e}"));
            let elapsed = t.elapsed();
            eprintln!("  ran {name} in {:.1}s: {}", elapsed.as_secs_f64(), outcome.record.headline);
            runs.insert(
                name,
                Run {
                    record: outcome.record,
                    elapsed,
                },
            );
        }
        Suite(runs)
    }

    fn get(&self, name: &str) -> &Run {
        self.0.get(name).unwrap_or_else(|| panic!("no config named {name}"))
    }

    fn metric(&self, name: &str, key: &str) -> f64 {
        self.get(name).record.metrics.get(key).copied().flatten().unwrap_or(f64::NAN)
    }
}

type Verdict = (bool, String);

fn diffusion_matrix(s: &Suite) -> Verdict {
    let mut ok = true;
    let mut worst: f64 = 0.0;
    for (j, k, target) in [(0, 0, 0.25), (0, 1, -0.25), (1, 0, -0.25), (1, 1, 0.25)] {
        let d = s.metric("diffusion", &format!("d_{j}_{k}"));
        let se = s.metric("diffusion", &format!("se_{j}_{k}"));
        let dev = (d - target).abs();
        ok &= dev <= (3.0 * se).max(0.01);
        worst = worst.max(dev);
    }
    let t = s.get("diffusion").elapsed.as_secs_f64();
    ok &= t < 60.0;
    (ok, format!("max |D - D_exact| = {worst:.2e}, {t:.1}s"))
}

fn degeneracy(s: &Suite) -> Verdict {
    let form = s.metric("diffusion", "xi_form");
    let se = s.metric("diffusion", "xi_form_se");
    (form.abs() <= 3.0 * se || form == 0.0, format!("xi^t D xi = {form:.3e} (se {se:.1e})"))
}

fn velocity(s: &Suite) -> Verdict {
    let z = s.metric("velocity", "lln_max_z");
    let v = [s.metric("velocity", "v_0"), s.metric("velocity", "v_1")];
    (z <= 4.0, format!("v = ({:.5}, {:.5}), max z vs X_n/n = {z:.2}", v[0], v[1]))
}

fn equilibrium(s: &Suite) -> Verdict {
    let z = s.metric("equilibrium", "velocity_max_z");
    (z <= 4.0, format!("max z vs velocity = {z:.2}"))
}

fn sigma_tail(s: &Suite) -> Verdict {
    let desk = s.metric("sigma-tail-desk", "tail_max");
    let z = s.metric("sigma-tail-lazy", "slope_z");
    let rate = s.metric("sigma-tail-lazy", "rate");
    (
        desk == 0.0 && z <= -3.0,
        format!("desk tail identically {desk}, lazy slope z = {z:.1}, rate {rate:.4}"),
    )
}

fn variance(s: &Suite) -> Verdict {
    let e = s.metric("variance-scan", "exponent");
    let se = s.metric("variance-scan", "exponent_se");
    let t = s.get("variance-scan").elapsed.as_secs_f64();
    (e <= 0.75 && e > 2.0 * se && t < 600.0, format!("exponent {e:.3} (se {se:.3}), {t:.1}s"))
}

fn intersection(s: &Suite) -> Verdict {
    let e = s.metric("intersection-scan", "exponent");
    let se = s.metric("intersection-scan", "exponent_se");
    (e <= 0.75, format!("exponent {e:.3} (se {se:.3})"))
}

fn ordering(s: &Suite) -> Verdict {
    let a = s.metric("variance-scan", "exponent");
    let b = s.metric("intersection-scan", "exponent");
    (a <= b + 0.15, format!("{a:.3} <= {b:.3} + 0.15"))
}

fn q_kernel(s: &Suite) -> Verdict {
    let z = s.metric("q-kernel", "mean_increment_max_z");
    let ratio = s.metric("q-kernel", "p_moment_ratio");
    let eps = s.metric("q-kernel", "epsilon_lower_3se");
    (
        z <= 3.0 && ratio <= 5.0 && eps >= 0.05,
        format!("mean z {z:.2}, moment max/min {ratio:.3}, epsilon lower {eps:.3}"),
    )
}

fn green(s: &Suite) -> Verdict {
    let e = s.metric("green", "exponent");
    let spot = s.metric("green", "spot_max_z");
    (e <= 0.75 && spot <= 4.0, format!("exponent {e:.3}, spot max z {spot:.2}"))
}

fn renewal(s: &Suite) -> Verdict {
    let r1 = s.metric("renewal", "ratio_r1");
    let r2 = s.metric("renewal", "ratio_r2");
    let id = s.metric("renewal", "identity_ok");
    (
        r1 <= 5.0 && r2 <= 5.0 && id == 1.0,
        format!("max/min r=1 {r1:.3}, r=2 {r2:.3}, identity {}", id == 1.0),
    )
}

fn clt(s: &Suite) -> Verdict {
    let f = s.metric("clt", "max_frobenius_relative");
    let ks = s.metric("clt", "max_ks");
    let dec = s.metric("clt", "centering_decreasing");
    (
        f <= 0.15 && ks <= 0.02 && dec == 1.0,
        format!("max rel. Frobenius {f:.4}, max KS {ks:.4}, centering decreasing {}", dec == 1.0),
    )
}

fn perturbation(s: &Suite) -> Verdict {
    let c = s.metric("perturbation", "c_hat");
    let z = s.metric("perturbation", "holdout_max_z");
    let zero = s.metric("perturbation", "zero_consistent");
    let unreachable = s.metric("perturbation", "unreachable");
    (
        zero == 1.0 && z <= 3.0,
        format!("C = {c:.4}, holdout max z {z:.2}, {unreachable} unreachable samples all zero: {}", zero == 1.0),
    )
}

fn direction() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut sign_failures = 0;
    for _ in 0..1000 {
        let (a, v) = random_direction_instance(&mut rng);
        match rationalize_direction(&a, &DirectionInput::Rational(v.clone())) {
            Ok(res) if sign_pattern_holds(&a, &v, &res) => {}
            _ => sign_failures += 1,
        }
    }
    let mut f_failures = 0;
    for _ in 0..10_000 {
        let d = rng.gen_range(2..=5usize);
        let h: Vec<RationalVector> = (0..d - 1).map(|_| random_rational_vector(&mut rng, d, 9)).collect();
        let x = random_rational_vector(&mut rng, d, 9);
        let Ok(z) = vector_product(&h) else {
            f_failures += 1;
            continue;
        };
        let mut rows = h.clone();
        rows.push(x.clone());
        if !h.iter().all(|hi| dot(hi, &z).is_zero()) || determinant(&rows) != dot(&x, &z) {
            f_failures += 1;
        }
    }
    (
        sign_failures == 0 && f_failures == 0,
        format!("{sign_failures}/1000 sign-pattern failures, {f_failures}/10000 identity failures"),
    )
}

fn files_under(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    for e in fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(files_under(&p));
        } else {
            out.push(p);
        }
    }
    out.sort();
    out
}

fn manifest_without_times(path: &Path) -> serde_json::Value {
    let mut v: serde_json::Value = serde_json::from_slice(&fs::read(path).unwrap()).unwrap();
    let o = v.as_object_mut().unwrap();
    o.remove("started_at");
    o.remove("finished_at");
    v
}

fn reproducibility(a: &Path, b: &Path) -> Verdict {
    let fa = files_under(a);
    let fb = files_under(b);
    let rel = |root: &Path, v: &[PathBuf]| -> Vec<PathBuf> { v.iter().map(|p| p.strip_prefix(root).unwrap().to_path_buf()).collect() };
    if rel(a, &fa) != rel(b, &fb) {
        return (false, "file sets differ".into());
    }
    let mut mismatched = Vec::new();
    for (x, y) in fa.iter().zip(&fb) {
        let same = if x.file_name().is_some_and(|n| n == "manifest.json") {
            manifest_without_times(x) == manifest_without_times(y)
        } else {
            fs::read(x).unwrap() == fs::read(y).unwrap()
        };
        if !same {
            mismatched.push(x.strip_prefix(a).unwrap().display().to_string());
        }
    }
    (
        mismatched.is_empty(),
        format!("{} files compared, mismatches: {mismatched:?}", fa.len()),
    )
}

#[test]
fn acceptance_suite() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let first = Suite::run(&a, 1);
    eprintln!("  re-running with 2 worker threads");
    Suite::run(&b, 2);

    let verdicts: Vec<(&str, Verdict)> = vec![
        ("two-jump diffusion matrix", diffusion_matrix(&first)),
        ("degenerate direction", degeneracy(&first)),
        ("velocity vs law of large numbers", velocity(&first)),
        ("equilibrium drift vs velocity", equilibrium(&first)),
        ("regeneration time tail", sigma_tail(&first)),
        ("quenched mean variance scaling", variance(&first)),
        ("intersection scaling", intersection(&first)),
        ("exponent ordering", ordering(&first)),
        ("difference chain kernel", q_kernel(&first)),
        ("Green function", green(&first)),
        ("renewal moments", renewal(&first)),
        ("quenched CLT", clt(&first)),
        ("perturbation influence", perturbation(&first)),
        ("direction algorithm", direction()),
        ("reproducibility", reproducibility(&a, &b)),
    ];

    let mut failed = Vec::new();
    for (i, (name, (ok, detail))) in verdicts.iter().enumerate() {
        println!("criterion {:>2} {} {name}: {detail}", i + 1, if *ok { "PASS" } else { "FAIL" });
        if !ok {
            failed.push(i + 1);
        }
    }
    for (name, r) in &first.0 {
        if r.record.status == Status::Fail {
            println!("config {name} has failing checks");
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
