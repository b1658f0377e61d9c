//! Config-driven experiment runner.
//!
//! A config names one experiment, a model, experiment parameters, a master
//! seed and optional checks on the reported metrics. A run writes
//! `<out>/<experiment>.json` (no timestamps, so identical configs give
//! identical bytes), any CSV tables, and `<out>/manifest.json`.
//!
//! The experiment seed is `derive_seed(master_seed, [tag])` with a distinct
//! tag per experiment kind; all replica seeds are derived from it.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::direction::DirectionProblem;
use crate::error::{Error, Result};
use crate::estimators::chain::{estimate_h, estimate_q, green_function, GreenParams, HParams, QParams};
use crate::estimators::clt::{clt_test, CltParams};
use crate::estimators::cycles::{
    default_cycle_cap, estimate_diffusion, estimate_equilibrium, estimate_velocity, level_increment_counts,
    lln_velocity, sigma_tail, CycleParams, EquilibriumParams, SigmaTailParams, SiteFunctional,
};
use crate::estimators::perturbation::{perturbation_grid, PerturbationParams};
use crate::estimators::renewal::{renewal_moments, IncrementLaw, RenewalParams};
use crate::estimators::scans::{intersection_scan, variance_scan, IntersectionScanParams, VarianceScanParams};
use crate::estimators::stats::{fmt_f64, ScanResult};
use crate::lattice::LatticePoint;
use crate::model::{validate_model, ModelSpec, Verdict};
use crate::rng::derive_seed;

pub const SCHEMA_VERSION: u32 = 1;
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Validate,
    Velocity,
    Diffusion,
    Equilibrium,
    VarianceScan,
    IntersectionScan,
    HProfile,
    QKernel,
    Green,
    Renewal,
    Clt,
    Perturbation,
    SigmaTail,
    Rationalize,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 14] = [
        ExperimentKind::Validate,
        ExperimentKind::Velocity,
        ExperimentKind::Diffusion,
        ExperimentKind::Equilibrium,
        ExperimentKind::VarianceScan,
        ExperimentKind::IntersectionScan,
        ExperimentKind::HProfile,
        ExperimentKind::QKernel,
        ExperimentKind::Green,
        ExperimentKind::Renewal,
        ExperimentKind::Clt,
        ExperimentKind::Perturbation,
        ExperimentKind::SigmaTail,
        ExperimentKind::Rationalize,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Validate => "validate",
            ExperimentKind::Velocity => "velocity",
            ExperimentKind::Diffusion => "diffusion",
            ExperimentKind::Equilibrium => "equilibrium",
            ExperimentKind::VarianceScan => "variance-scan",
            ExperimentKind::IntersectionScan => "intersection-scan",
            ExperimentKind::HProfile => "h-profile",
            ExperimentKind::QKernel => "q-kernel",
            ExperimentKind::Green => "green",
            ExperimentKind::Renewal => "renewal",
            ExperimentKind::Clt => "clt",
            ExperimentKind::Perturbation => "perturbation",
            ExperimentKind::SigmaTail => "sigma-tail",
            ExperimentKind::Rationalize => "rationalize",
        }
    }

    /// Path word under which this experiment's seed is derived.
    pub fn stream_tag(self) -> u64 {
        0x4558_5000_0000_0000 | (Self::ALL.iter().position(|&k| k == self).unwrap() as u64 + 1)
    }

    pub fn seed(self, master_seed: u64) -> u64 {
        derive_seed(master_seed, &[self.stream_tag()])
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ExperimentKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .iter()
            .copied()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown experiment `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CompareOp {
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = "<")]
    Lt,
    #[serde(rename = ">=")]
    Ge,
    #[serde(rename = ">")]
    Gt,
    #[serde(rename = "==")]
    Eq,
}

impl CompareOp {
    fn holds(self, a: f64, b: f64) -> bool {
        match self {
            CompareOp::Le => a <= b,
            CompareOp::Lt => a < b,
            CompareOp::Ge => a >= b,
            CompareOp::Gt => a > b,
            CompareOp::Eq => a == b,
        }
    }
}

fn default_k() -> f64 {
    3.0
}

/// A pass/fail condition on one reported metric.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Check {
    /// `metric op value`.
    Bound { metric: String, op: CompareOp, value: f64 },
    /// `|metric - target| <= max(k * se_metric, abs_tol)`.
    Near {
        metric: String,
        target: f64,
        #[serde(default)]
        se_metric: Option<String>,
        #[serde(default = "default_k")]
        k: f64,
        #[serde(default)]
        abs_tol: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckOutcome {
    pub check: Check,
    pub observed: Option<f64>,
    pub passed: bool,
}

impl Check {
    fn evaluate(&self, metrics: &BTreeMap<String, f64>) -> CheckOutcome {
        let get = |m: &str| metrics.get(m).copied().filter(|x| !x.is_nan());
        let (observed, passed) = match self {
            Check::Bound { metric, op, value } => {
                let obs = get(metric);
                (obs, obs.is_some_and(|o| op.holds(o, *value)))
            }
            Check::Near {
                metric,
                target,
                se_metric,
                k,
                abs_tol,
            } => {
                let obs = get(metric);
                let se = match se_metric {
                    Some(s) => get(s),
                    None => Some(0.0),
                };
                let ok = match (obs, se) {
                    (Some(o), Some(se)) => (o - target).abs() <= (k * se).max(*abs_tol),
                    _ => false,
                };
                (obs, ok)
            }
        };
        CheckOutcome {
            check: self.clone(),
            observed,
            passed,
        }
    }
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("results")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub experiment: ExperimentKind,
    /// Inline model document, or a path (relative to the config file).
    #[serde(default)]
    pub model: Option<Value>,
    #[serde(default)]
    pub params: Value,
    pub master_seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub checks: Vec<Check>,
    #[serde(skip)]
    base_dir: Option<PathBuf>,
    #[serde(skip)]
    source_hash: Option<String>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

impl ExperimentConfig {
    pub fn new(experiment: ExperimentKind, model: Option<&ModelSpec>, params: Value, master_seed: u64) -> Self {
        ExperimentConfig {
            schema_version: SCHEMA_VERSION,
            experiment,
            model: model.map(|m| serde_json::to_value(m).expect("model serializes")),
            params,
            master_seed,
            output_dir: default_output_dir(),
            checks: Vec::new(),
            base_dir: None,
            source_hash: None,
        }
    }

    pub fn with_checks(mut self, checks: Vec<Check>) -> Self {
        self.checks = checks;
        self
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("config does not parse: {e}")))?;
        if cfg.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                cfg.schema_version
            )));
        }
        Ok(ExperimentConfig {
            source_hash: Some(sha256_hex(text.as_bytes())),
            ..cfg
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_json_str(&text)?;
        cfg.base_dir = path.parent().map(Path::to_path_buf);
        Ok(cfg)
    }

    /// SHA-256 of the config source text, or of its canonical JSON when built
    /// in memory.
    pub fn hash(&self) -> String {
        match &self.source_hash {
            Some(h) => h.clone(),
            None => sha256_hex(&serde_json::to_vec(self).expect("config serializes")),
        }
    }

    pub fn resolve_model(&self) -> Result<Option<ModelSpec>> {
        match &self.model {
            None | Some(Value::Null) => Ok(None),
            Some(Value::String(p)) => {
                let path = match &self.base_dir {
                    Some(b) if Path::new(p).is_relative() => b.join(p),
                    _ => PathBuf::from(p),
                };
                let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
                serde_json::from_str(&text)
                    .map(Some)
                    .map_err(|e| Error::Config(format!("model {}: {e}", path.display())))
            }
            Some(v) => serde_json::from_value(v.clone())
                .map(Some)
                .map_err(|e| Error::Config(format!("inline model: {e}"))),
        }
    }
}

/// Output of one experiment before checks are applied.
#[derive(Debug, Default)]
pub struct ExperimentOutput {
    pub result: Value,
    pub metrics: BTreeMap<String, f64>,
    pub headline: String,
    /// `(file suffix, csv bytes)`.
    pub tables: Vec<(String, Vec<u8>)>,
    pub warnings: Vec<String>,
    /// Verdict-level failure independent of configured checks.
    pub intrinsic_fail: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Pass,
    Fail,
}

/// The per-experiment result document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub schema_version: u32,
    pub experiment: ExperimentKind,
    pub tool_version: String,
    pub master_seed: u64,
    pub seed: u64,
    pub model: Option<Value>,
    pub params: Value,
    pub headline: String,
    pub metrics: BTreeMap<String, Option<f64>>,
    pub result: Value,
    pub checks: Vec<CheckOutcome>,
    pub warnings: Vec<String>,
    pub status: Status,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub experiment: ExperimentKind,
    pub result: String,
    pub tables: Vec<String>,
    pub status: Status,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub tool_version: String,
    pub config_sha256: String,
    pub master_seed: u64,
    pub started_at: String,
    pub finished_at: String,
    pub experiments: Vec<ManifestEntry>,
    pub status: Status,
}

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    pub seed: Option<u64>,
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug)]
pub struct RunOutcome {
    pub manifest: RunManifest,
    pub record: ExperimentRecord,
    pub output_dir: PathBuf,
}

impl RunOutcome {
    pub fn passed(&self) -> bool {
        self.manifest.status == Status::Pass
    }
}

fn params<T: serde::de::DeserializeOwned>(kind: ExperimentKind, v: &Value) -> Result<T> {
    let v = if v.is_null() { json!({}) } else { v.clone() };
    serde_json::from_value(v).map_err(|e| Error::Config(format!("params for {kind}: {e}")))
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Runs the experiment named in `config` and persists its outputs.
pub fn run(config: &ExperimentConfig, opts: &RunOptions) -> Result<RunOutcome> {
    let started_at = chrono::Utc::now().to_rfc3339();
    let kind = config.experiment;
    let master_seed = opts.seed.unwrap_or(config.master_seed);
    let out_dir = opts.output_dir.clone().unwrap_or_else(|| config.output_dir.clone());
    let model = config.resolve_model()?;
    let seed = kind.seed(master_seed);
    let output = run_experiment(kind, model.as_ref(), &config.params, seed)
        .map_err(|e| e.with_context(format!("experiment {kind}")))?;

    let checks: Vec<CheckOutcome> = config.checks.iter().map(|c| c.evaluate(&output.metrics)).collect();
    let status = if output.intrinsic_fail || checks.iter().any(|c| !c.passed) {
        Status::Fail
    } else {
        Status::Pass
    };
    let record = ExperimentRecord {
        schema_version: SCHEMA_VERSION,
        experiment: kind,
        tool_version: TOOL_VERSION.to_string(),
        master_seed,
        seed,
        model: model.as_ref().map(|m| serde_json::to_value(m).expect("model serializes")),
        params: config.params.clone(),
        headline: output.headline.clone(),
        metrics: output
            .metrics
            .iter()
            .map(|(k, &v)| (k.clone(), v.is_finite().then_some(v)))
            .collect(),
        result: output.result,
        checks,
        warnings: output.warnings,
        status,
    };

    fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;
    let result_name = format!("{kind}.json");
    let mut body = serde_json::to_vec_pretty(&record)?;
    body.push(b'\n');
    write_atomic(&out_dir.join(&result_name), &body)?;
    let mut tables = Vec::new();
    for (suffix, bytes) in &output.tables {
        let name = format!("{kind}_{suffix}.csv");
        write_atomic(&out_dir.join(&name), bytes)?;
        tables.push(name);
    }
    let manifest = RunManifest {
        schema_version: SCHEMA_VERSION,
        tool_version: TOOL_VERSION.to_string(),
        config_sha256: config.hash(),
        master_seed,
        started_at,
        finished_at: chrono::Utc::now().to_rfc3339(),
        experiments: vec![ManifestEntry {
            experiment: kind,
            result: result_name,
            tables,
            status,
        }],
        status,
    };
    let mut mbody = serde_json::to_vec_pretty(&manifest)?;
    mbody.push(b'\n');
    write_atomic(&out_dir.join(MANIFEST_FILE), &mbody)?;
    Ok(RunOutcome {
        manifest,
        record,
        output_dir: out_dir,
    })
}

fn need_model(kind: ExperimentKind, model: Option<&ModelSpec>) -> Result<&ModelSpec> {
    model.ok_or_else(|| Error::Config(format!("experiment {kind} needs a model")))
}

fn scan_table(scan: &ScanResult) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    scan.write_csv(&mut buf)?;
    Ok(buf)
}

fn scan_metrics(metrics: &mut BTreeMap<String, f64>, scan: &ScanResult) {
    metrics.insert("degenerate".into(), f64::from(u8::from(scan.degenerate)));
    if let (Some(e), Some(se)) = (scan.fitted_exponent, scan.exponent_se) {
        metrics.insert("exponent".into(), e);
        metrics.insert("exponent_se".into(), se);
        metrics.insert("exponent_z".into(), e / se);
    }
    if let Some(last) = scan.points.last() {
        metrics.insert("final_value".into(), last.value);
        metrics.insert("final_se".into(), last.se);
    }
}

fn exponent_headline(scan: &ScanResult) -> String {
    match (scan.fitted_exponent, scan.exponent_se) {
        (Some(e), Some(se)) => format!("exponent {e:.4} ± {se:.4}"),
        _ => format!("exponent undefined ({})", scan.note.as_deref().unwrap_or("degenerate")),
    }
}

/// `|a| / se`, with `0/0 = 0`.
fn z_score(a: f64, se: f64) -> f64 {
    if a == 0.0 {
        0.0
    } else if se > 0.0 {
        a.abs() / se
    } else {
        f64::INFINITY
    }
}

fn to_value<T: Serialize>(x: &T) -> Value {
    serde_json::to_value(x).expect("result serializes")
}

fn vec_headline(name: &str, v: &[f64], se: &[f64]) -> String {
    let parts: Vec<String> = v.iter().zip(se).map(|(a, s)| format!("{a:.5} ± {s:.5}")).collect();
    format!("{name} = ({})", parts.join(", "))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct NoParams {}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct LlnParams {
    n: u64,
    walks: usize,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct VelocityParams {
    cycles: u64,
    #[serde(default)]
    batches: Option<usize>,
    #[serde(default)]
    cycle_cap: Option<u64>,
    #[serde(default)]
    lln: Option<LlnParams>,
}

fn cycle_params(cycles: u64, batches: Option<usize>, cycle_cap: Option<u64>) -> CycleParams {
    let mut p = CycleParams::new(cycles);
    if let Some(b) = batches {
        p.batches = b;
    }
    if let Some(c) = cycle_cap {
        p.cycle_cap = c;
    }
    p
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct DiffusionParams {
    cycles: u64,
    #[serde(default)]
    batches: Option<usize>,
    #[serde(default)]
    cycle_cap: Option<u64>,
    #[serde(default)]
    xi: Option<Vec<f64>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct EquilibriumExpParams {
    functional: SiteFunctional,
    #[serde(default)]
    k: u64,
    cycles: u64,
    #[serde(default)]
    batches: Option<usize>,
    #[serde(default)]
    cycle_cap: Option<u64>,
    #[serde(default)]
    compare_velocity: bool,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct HProfileParams {
    z_list: Vec<LatticePoint>,
    reps: usize,
    #[serde(default = "default_cycle_cap")]
    cycle_cap: u64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct QKernelParams {
    x_list: Vec<LatticePoint>,
    reps: usize,
    #[serde(default = "default_cycle_cap")]
    cycle_cap: u64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct GreenExpParams {
    x: LatticePoint,
    y: LatticePoint,
    n_list: Vec<u64>,
    chains: usize,
    #[serde(default = "default_cycle_cap")]
    cycle_cap: u64,
    #[serde(default)]
    spot_x: Vec<LatticePoint>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RenewalExpParams {
    #[serde(default)]
    step_dist: Option<IncrementLaw>,
    /// Cycles used to estimate the level-increment law from the model when
    /// `step_dist` is absent.
    #[serde(default)]
    law_cycles: Option<u64>,
    grid: Vec<u64>,
    r: Vec<f64>,
    reps: usize,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CltExpParams {
    env_seeds: Vec<u64>,
    n: u64,
    walks: usize,
    reference_cycles: u64,
    #[serde(default)]
    checkpoints: Vec<u64>,
}

/// Computes one experiment without touching the filesystem.
pub fn run_experiment(kind: ExperimentKind, model: Option<&ModelSpec>, raw: &Value, seed: u64) -> Result<ExperimentOutput> {
    let mut out = ExperimentOutput::default();
    let m = &mut out.metrics;
    match kind {
        ExperimentKind::Validate => {
            let _: NoParams = params(kind, raw)?;
            let model = need_model(kind, model)?;
            let report = validate_model(model)?;
            let verdict = report.verdict();
            let flag = |b: bool| f64::from(u8::from(b));
            m.insert("forbidden_direction_ok".into(), flag(report.forbidden_direction_ok));
            if let Some(d) = report.nonnestling_delta {
                m.insert("nonnestling_delta".into(), d);
            }
            m.insert("moment_bound_m".into(), report.moment_bound_m);
            m.insert("ellipticity_2_3_ok".into(), flag(report.ellipticity_2_3_ok));
            m.insert("ellipticity_span_ok".into(), flag(report.ellipticity_span_ok));
            m.insert("valid".into(), flag(verdict == Verdict::Valid));
            out.headline = format!("verdict {}", to_value(&verdict).as_str().unwrap_or("?"));
            match verdict {
                Verdict::Valid => {}
                Verdict::ValidButInelliptic => {
                    out.warnings.push("model is valid but fails ellipticity".into());
                    out.intrinsic_fail = true;
                }
                Verdict::Invalid => {
                    out.warnings.push("model violates the forbidden direction or nonnestling".into());
                    out.intrinsic_fail = true;
                }
            }
            out.result = json!({ "report": report, "verdict": verdict });
        }
        ExperimentKind::Velocity => {
            let p: VelocityParams = params(kind, raw)?;
            let model = need_model(kind, model)?;
            let v = estimate_velocity(model, &cycle_params(p.cycles, p.batches, p.cycle_cap), derive_seed(seed, &[0]))?;
            for (j, (a, s)) in v.v.iter().zip(&v.se).enumerate() {
                m.insert(format!("v_{j}"), *a);
                m.insert(format!("se_{j}"), *s);
            }
            m.insert("mean_cycle_time".into(), v.mean_cycle_time);
            out.headline = vec_headline("v", &v.v, &v.se);
            let mut result = json!({ "velocity": v });
            if let Some(l) = p.lln {
                let est = lln_velocity(model, l.n, l.walks, derive_seed(seed, &[1]))?;
                for j in 0..est.value.len() {
                    m.insert(format!("lln_{j}"), est.value[j]);
                    m.insert(format!("lln_se_{j}"), est.std_error[j]);
                }
                m.insert("lln_max_z".into(), est.max_z_distance(&v.as_estimate()));
                result["lln"] = to_value(&est);
            }
            out.result = result;
        }
        ExperimentKind::Diffusion => {
            let p: DiffusionParams = params(kind, raw)?;
            let model = need_model(kind, model)?;
            let d = estimate_diffusion(model, &cycle_params(p.cycles, p.batches, p.cycle_cap), derive_seed(seed, &[0]))?;
            let dim = d.matrix.len();
            let mut table = csv::Writer::from_writer(Vec::new());
            table.write_record(["j", "k", "value", "se"])?;
            for j in 0..dim {
                for k in 0..dim {
                    m.insert(format!("d_{j}_{k}"), d.matrix[j][k]);
                    m.insert(format!("se_{j}_{k}"), d.se[j][k]);
                    table.write_record([j.to_string(), k.to_string(), fmt_f64(d.matrix[j][k]), fmt_f64(d.se[j][k])])?;
                }
            }
            let asym = (0..dim)
                .flat_map(|j| (0..dim).map(move |k| (j, k)))
                .map(|(j, k)| (d.matrix[j][k] - d.matrix[k][j]).abs())
                .fold(0.0, f64::max);
            let ev = d.eigenvalues();
            m.insert("asymmetry".into(), asym);
            m.insert("min_eigenvalue".into(), ev[0]);
            m.insert("max_se".into(), d.max_se());
            let mut result = json!({ "diffusion": d, "eigenvalues": ev });
            if let Some(xi) = p.xi {
                if xi.len() != dim {
                    return Err(Error::Config(format!("xi has dimension {}, model has {dim}", xi.len())));
                }
                let norm = xi.iter().map(|x| x * x).sum::<f64>().sqrt();
                let unit: Vec<f64> = xi.iter().map(|x| x / norm).collect();
                let (form, se) = d.quadratic_form(&unit);
                m.insert("xi_form".into(), form);
                m.insert("xi_form_se".into(), se);
                m.insert("xi_form_z".into(), z_score(form, se));
                result["xi_form"] = json!({ "xi": unit, "value": form, "se": se });
            }
            out.headline = format!("D = {:?}, max se {:.2e}", d.matrix, d.max_se());
            out.tables.push(("matrix".into(), table.into_inner().map_err(|e| Error::Config(e.to_string()))?));
            out.result = result;
        }
        ExperimentKind::Equilibrium => {
            let p: EquilibriumExpParams = params(kind, raw)?;
            let model = need_model(kind, model)?;
            let cp = cycle_params(p.cycles, p.batches, p.cycle_cap);
            let ep = EquilibriumParams {
                functional: p.functional.clone(),
                k: p.k,
                cycles: cp.cycles,
                batches: cp.batches,
                cycle_cap: cp.cycle_cap,
            };
            let est = estimate_equilibrium(model, &ep, derive_seed(seed, &[0]))?;
            for j in 0..est.value.len() {
                m.insert(format!("value_{j}"), est.value[j]);
                m.insert(format!("se_{j}"), est.std_error[j]);
            }
            out.headline = vec_headline("equilibrium", &est.value, &est.std_error);
            let mut result = json!({ "estimate": est });
            if p.compare_velocity {
                let v = estimate_velocity(model, &cp, derive_seed(seed, &[1]))?.as_estimate();
                m.insert("velocity_max_z".into(), est.max_z_distance(&v));
                result["velocity"] = to_value(&v);
            }
            out.result = result;
        }
        ExperimentKind::VarianceScan | ExperimentKind::IntersectionScan => {
            let model = need_model(kind, model)?;
            let scan = if kind == ExperimentKind::VarianceScan {
                variance_scan(model, &params::<VarianceScanParams>(kind, raw)?, derive_seed(seed, &[0]))?
            } else {
                intersection_scan(model, &params::<IntersectionScanParams>(kind, raw)?, derive_seed(seed, &[0]))?
            };
            scan_metrics(m, &scan);
            out.headline = exponent_headline(&scan);
            out.tables.push(("scan".into(), scan_table(&scan)?));
            out.result = to_value(&scan);
        }
        ExperimentKind::HProfile => {
            let p: HProfileParams = params(kind, raw)?;
            let model = need_model(kind, model)?;
            let mut rows = Vec::new();
            let mut table = csv::Writer::from_writer(Vec::new());
            let d = model.dimension();
            let mut header: Vec<String> = (0..d).map(|i| format!("z_{i}")).collect();
            header.extend(["value".to_string(), "se".to_string()]);
            table.write_record(&header)?;
            let mut total = 0.0;
            for (i, z) in p.z_list.iter().enumerate() {
                let hp = HParams {
                    z: z.clone(),
                    reps: p.reps,
                    cycle_cap: p.cycle_cap,
                };
                let h = estimate_h(model, &hp, derive_seed(seed, &[i as u64]))?;
                m.insert(format!("h_{i}"), h.v());
                m.insert(format!("h_se_{i}"), h.se());
                total += h.v();
                let mut rec: Vec<String> = z.coords().iter().map(|c| c.to_string()).collect();
                rec.extend([fmt_f64(h.v()), fmt_f64(h.se())]);
                table.write_record(&rec)?;
                rows.push(json!({ "z": z, "h": h }));
            }
            m.insert("h_sum".into(), total);
            out.headline = format!("sum of h over {} sites = {total:.4}", p.z_list.len());
            out.tables.push(("profile".into(), table.into_inner().map_err(|e| Error::Config(e.to_string()))?));
            out.result = json!({ "profile": rows });
        }
        ExperimentKind::QKernel => {
            let p: QKernelParams = params(kind, raw)?;
            let model = need_model(kind, model)?;
            if p.x_list.is_empty() {
                return Err(Error::Config("q-kernel needs at least one state".into()));
            }
            let mut ests = Vec::new();
            for (i, x) in p.x_list.iter().enumerate() {
                let qp = QParams {
                    x: x.clone(),
                    reps: p.reps,
                    cycle_cap: p.cycle_cap,
                };
                ests.push(estimate_q(model, &qp, derive_seed(seed, &[i as u64]))?);
            }
            let mean_z = ests
                .iter()
                .flat_map(|q| q.mean_increment.iter().zip(&q.mean_increment_se))
                .map(|(a, s)| z_score(*a, *s))
                .fold(0.0, f64::max);
            let moments: Vec<f64> = ests.iter().map(|q| q.p_hat_moment).collect();
            let mmax = moments.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mmin = moments.iter().copied().fold(f64::INFINITY, f64::min);
            let hold_max = ests.iter().map(|q| q.holding_prob).fold(0.0, f64::max);
            let eps_lower = ests
                .iter()
                .map(|q| 1.0 - q.holding_prob - 3.0 * q.holding_prob_se)
                .fold(f64::INFINITY, f64::min);
            m.insert("mean_increment_max_z".into(), mean_z);
            m.insert("p_moment_max".into(), mmax);
            m.insert("p_moment_ratio".into(), if mmin > 0.0 { mmax / mmin } else { f64::INFINITY });
            m.insert("holding_max".into(), hold_max);
            m.insert("epsilon_lower_3se".into(), eps_lower);
            m.insert("degenerate".into(), f64::from(u8::from(ests[0].degenerate)));
            out.headline = format!("max |mean|/se {mean_z:.2}, max holding {hold_max:.4}, moment ratio {:.3}", mmax / mmin);
            out.result = json!({ "states": ests });
        }
        ExperimentKind::Green => {
            let p: GreenExpParams = params(kind, raw)?;
            let model = need_model(kind, model)?;
            let base = GreenParams {
                x: p.x.clone(),
                y: p.y.clone(),
                n_list: p.n_list.clone(),
                chains: p.chains,
                cycle_cap: p.cycle_cap,
            };
            let scan = green_function(model, &base, derive_seed(seed, &[0]))?;
            scan_metrics(m, &scan);
            let mut spots = Vec::new();
            let mut spot_z = 0.0f64;
            for (i, x) in p.spot_x.iter().enumerate() {
                let gp = GreenParams {
                    x: x.clone(),
                    ..base.clone()
                };
                let s = green_function(model, &gp, derive_seed(seed, &[1, i as u64]))?;
                for (a, b) in s.points.iter().zip(&scan.points) {
                    let excess = a.value - b.value;
                    if excess > 0.0 {
                        spot_z = spot_z.max(z_score(excess, (a.se * a.se + b.se * b.se).sqrt()));
                    }
                }
                spots.push(json!({ "x": x, "scan": s }));
            }
            m.insert("spot_max_z".into(), spot_z);
            out.headline = exponent_headline(&scan);
            out.tables.push(("scan".into(), scan_table(&scan)?));
            out.result = json!({ "scan": scan, "spot": spots });
        }
        ExperimentKind::Renewal => {
            let p: RenewalExpParams = params(kind, raw)?;
            let (law, counts) = match (&p.step_dist, p.law_cycles) {
                (Some(l), None) => (l.clone(), None),
                (None, Some(c)) => {
                    let model = need_model(kind, model)?;
                    let counts = level_increment_counts(model, &CycleParams::new(c), derive_seed(seed, &[0]))?;
                    (IncrementLaw::from_counts(&counts)?, Some(counts))
                }
                _ => {
                    return Err(Error::Config(
                        "renewal needs exactly one of step_dist and law_cycles".into(),
                    ))
                }
            };
            let h = law.span();
            let mut table = csv::Writer::from_writer(Vec::new());
            table.write_record(["i", "j", "r", "value", "se", "normalized"])?;
            let mut normalized: Vec<Vec<f64>> = vec![Vec::new(); p.r.len()];
            let mut identity_ok = true;
            let mut cells = Vec::new();
            for (a, &i) in p.grid.iter().enumerate() {
                for (b, &j) in p.grid.iter().enumerate() {
                    if i % h != 0 || j % h != 0 {
                        continue;
                    }
                    let rp = RenewalParams {
                        step_dist: law.clone(),
                        i,
                        j,
                        reps: p.reps,
                        r: p.r.clone(),
                    };
                    let res = renewal_moments(&rp, derive_seed(seed, &[1, a as u64, b as u64]))?;
                    if i == j && i > 0 && (res.min_l != i || res.max_l != i) {
                        identity_ok = false;
                    }
                    for (ri, (&r, est)) in p.r.iter().zip(&res.moments).enumerate() {
                        let norm = est.v() / (1.0 + (i as f64).powf(r) + (j as f64).powf(r));
                        normalized[ri].push(norm);
                        table.write_record([
                            i.to_string(),
                            j.to_string(),
                            fmt_f64(r),
                            fmt_f64(est.v()),
                            fmt_f64(est.se()),
                            fmt_f64(norm),
                        ])?;
                    }
                    cells.push(res);
                }
            }
            let mut ratios = Vec::new();
            for (ri, &r) in p.r.iter().enumerate() {
                let mx = normalized[ri].iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let mn = normalized[ri].iter().copied().fold(f64::INFINITY, f64::min);
                m.insert(format!("ratio_r{r}"), mx / mn);
                m.insert(format!("normalized_max_r{r}"), mx);
                ratios.push(mx / mn);
            }
            m.insert("identity_ok".into(), f64::from(u8::from(identity_ok)));
            m.insert("span".into(), h as f64);
            out.headline = format!("normalized max/min ratios {ratios:.3?}, identity {}", if identity_ok { "holds" } else { "FAILS" });
            out.tables.push(("grid".into(), table.into_inner().map_err(|e| Error::Config(e.to_string()))?));
            out.result = json!({ "law": law, "level_increment_counts": counts, "cells": cells });
        }
        ExperimentKind::Clt => {
            let p: CltExpParams = params(kind, raw)?;
            let model = need_model(kind, model)?;
            if p.env_seeds.is_empty() {
                return Err(Error::Config("clt needs at least one environment seed".into()));
            }
            let reference = estimate_diffusion(model, &CycleParams::new(p.reference_cycles), derive_seed(seed, &[0]))?;
            let mut reports = Vec::new();
            for (e, &s) in p.env_seeds.iter().enumerate() {
                let cp = CltParams {
                    env_seed: derive_seed(seed, &[2, s]),
                    n: p.n,
                    walks: p.walks,
                    checkpoints: p.checkpoints.clone(),
                };
                reports.push(clt_test(model, &cp, &reference, derive_seed(seed, &[1, e as u64]))?);
            }
            let frob = reports
                .iter()
                .map(|r| r.frobenius_relative.unwrap_or(f64::NAN))
                .fold(f64::NEG_INFINITY, f64::max);
            let ks = reports.iter().flat_map(|r| r.ks.iter().copied()).fold(0.0, f64::max);
            let decreasing = reports.iter().all(|r| {
                r.centering.windows(2).all(|w| w[1].gap < w[0].gap)
            });
            m.insert("max_frobenius_relative".into(), frob);
            m.insert("max_ks".into(), ks);
            m.insert("centering_decreasing".into(), f64::from(u8::from(decreasing)));
            m.insert("degenerate".into(), f64::from(u8::from(reports[0].degenerate)));
            out.headline = format!("max rel. Frobenius {frob:.4}, max KS {ks:.4}, centering decreasing {decreasing}");
            out.result = json!({ "reference": reference, "environments": reports, "env_seeds": p.env_seeds });
        }
        ExperimentKind::Perturbation => {
            let p: PerturbationParams = params(kind, raw)?;
            let model = need_model(kind, model)?;
            let r = perturbation_grid(model, &p, derive_seed(seed, &[0]))?;
            let mut table = csv::Writer::from_writer(Vec::new());
            let mut header: Vec<String> = (0..model.dimension()).map(|i| format!("z_{i}")).collect();
            header.extend(["env", "left", "left_se", "right"].map(String::from));
            table.write_record(&header)?;
            for s in &r.samples {
                let mut rec: Vec<String> = s.z.coords().iter().map(|c| c.to_string()).collect();
                rec.extend([s.env_index.to_string(), fmt_f64(s.left), fmt_f64(s.left_se), fmt_f64(s.right)]);
                table.write_record(&rec)?;
            }
            m.insert("c_hat".into(), r.c_hat);
            m.insert("holdout_max_z".into(), r.holdout_max_z);
            m.insert("zero_consistent".into(), f64::from(u8::from(r.zero_consistent)));
            m.insert("unreachable".into(), r.unreachable as f64);
            out.headline = format!("C = {:.4}, holdout max z {:.2}, zero-consistent {}", r.c_hat, r.holdout_max_z, r.zero_consistent);
            out.tables.push(("grid".into(), table.into_inner().map_err(|e| Error::Config(e.to_string()))?));
            out.result = to_value(&r);
        }
        ExperimentKind::SigmaTail => {
            let p: SigmaTailParams = params(kind, raw)?;
            let model = need_model(kind, model)?;
            let t = sigma_tail(model, &p, derive_seed(seed, &[0]))?;
            m.insert("degenerate".into(), f64::from(u8::from(t.scan.degenerate)));
            m.insert("tail_max".into(), t.scan.points.iter().map(|p| p.value).fold(0.0, f64::max));
            if let (Some(s), Some(se)) = (t.scan.fitted_exponent, t.scan.exponent_se) {
                m.insert("slope".into(), s);
                m.insert("slope_se".into(), se);
                m.insert("slope_z".into(), s / se);
            }
            if let Some(r) = t.rate {
                m.insert("rate".into(), r);
                m.insert("rate_se".into(), t.rate_se.unwrap_or(f64::NAN));
            }
            out.headline = match (t.rate, t.rate_se) {
                (Some(r), Some(se)) => format!("geometric rate {r:.4} ± {se:.4}"),
                _ => format!("no fit ({})", t.scan.note.as_deref().unwrap_or("degenerate")),
            };
            out.tables.push(("tail".into(), scan_table(&t.scan)?));
            out.result = to_value(&t);
        }
        ExperimentKind::Rationalize => {
            let problem: DirectionProblem = params(kind, raw)?;
            let res = problem.solve()?;
            let zeros = res
                .certificate
                .iter()
                .filter(|s| matches!(s, crate::direction::Sign::Zero))
                .count();
            m.insert("points".into(), problem.a.len() as f64);
            m.insert("zero_points".into(), zeros as f64);
            let mut result = res.to_json();
            if let Some(model) = model {
                // the model re-validated under the integer direction
                match res.to_lattice_point().map(|u| model.with_direction(u)) {
                    Some(Ok(m2)) => {
                        let before = validate_model(model)?.verdict();
                        let after = validate_model(&m2)?.verdict();
                        m.insert("verdict_preserved".into(), f64::from(u8::from(before == after)));
                        result["model_verdict"] = json!({ "before": before, "after": after });
                    }
                    _ => out.warnings.push("u_hat does not fit the model".into()),
                }
            }
            out.headline = format!("u_hat = {}", result["u_hat"]);
            out.result = result;
        }
    }
    Ok(out)
}

/// One row of the summary table.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReportRow {
    pub dir: String,
    pub experiment: String,
    pub headline: String,
    pub exponent: Option<f64>,
    pub status: String,
}

/// Reads the manifests in `dirs` and their result documents.
pub fn report(dirs: &[PathBuf]) -> Result<Vec<ReportRow>> {
    let mut rows = Vec::new();
    for dir in dirs {
        let mpath = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
        let manifest: RunManifest = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("corrupt manifest {}: {e}", mpath.display())))?;
        for entry in &manifest.experiments {
            let rpath = dir.join(&entry.result);
            let text = fs::read_to_string(&rpath).map_err(|e| Error::io(&rpath, e))?;
            let rec: Value = serde_json::from_str(&text)
                .map_err(|e| Error::Config(format!("corrupt result {}: {e}", rpath.display())))?;
            let metrics = &rec["metrics"];
            let exponent = metrics["exponent"].as_f64().or_else(|| metrics["slope"].as_f64());
            rows.push(ReportRow {
                dir: dir.display().to_string(),
                experiment: entry.experiment.to_string(),
                headline: rec["headline"].as_str().unwrap_or("").to_string(),
                exponent,
                status: to_value(&entry.status).as_str().unwrap_or("?").to_string(),
            });
        }
    }
    Ok(rows)
}

pub fn format_report_text(rows: &[ReportRow]) -> String {
    let mut s = String::new();
    let w = rows.iter().map(|r| r.experiment.len()).max().unwrap_or(0).max(10);
    for r in rows {
        let e = r.exponent.map(|e| format!("{e:.4}")).unwrap_or_else(|| "-".into());
        s.push_str(&format!(
            "{:<5} {:<w$} {:>8}  {}  [{}]\n",
            r.status, r.experiment, e, r.headline, r.dir
        ));
    }
    s
}

pub fn format_report_csv(rows: &[ReportRow]) -> Result<String> {
    let mut wtr = csv::Writer::from_writer(Vec::new());
    wtr.write_record(["dir", "experiment", "headline", "exponent", "status"])?;
    for r in rows {
        wtr.write_record([
            r.dir.as_str(),
            r.experiment.as_str(),
            r.headline.as_str(),
            &r.exponent.map(fmt_f64).unwrap_or_default(),
            r.status.as_str(),
        ])?;
    }
    let bytes = wtr.into_inner().map_err(|e| Error::Config(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv is utf-8"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::presets::*;

    #[test]
    fn kinds_round_trip() {
        for k in ExperimentKind::ALL {
            assert_eq!(k.name().parse::<ExperimentKind>().unwrap(), k);
            assert_eq!(to_value(&k), json!(k.name()));
        }
        assert!("nope".parse::<ExperimentKind>().is_err());
    }

    #[test]
    fn experiment_seeds_are_disjoint() {
        // replica seeds of different experiments never collide on a probe
        let mut seen = std::collections::HashSet::new();
        for k in ExperimentKind::ALL {
            let s = k.seed(42);
            for a in 0..200u64 {
                for b in 0..4u64 {
                    assert!(seen.insert(derive_seed(s, &[a, b])), "{k}");
                }
            }
        }
    }

    #[test]
    fn checks() {
        let mut m = BTreeMap::new();
        m.insert("x".to_string(), 0.5);
        m.insert("se".to_string(), 0.1);
        let b = Check::Bound {
            metric: "x".into(),
            op: CompareOp::Le,
            value: 0.75,
        };
        assert!(b.evaluate(&m).passed);
        let n = Check::Near {
            metric: "x".into(),
            target: 0.8,
            se_metric: Some("se".into()),
            k: 3.0,
            abs_tol: 0.0,
        };
        assert!(n.evaluate(&m).passed);
        let missing = Check::Bound {
            metric: "y".into(),
            op: CompareOp::Le,
            value: 1.0,
        };
        assert!(!missing.evaluate(&m).passed);
        let parsed: Check = serde_json::from_str(r#"{"kind":"bound","metric":"x","op":">","value":0}"#).unwrap();
        assert!(parsed.evaluate(&m).passed);
    }

    #[test]
    fn validate_flags_inelliptic() {
        let out = run_experiment(ExperimentKind::Validate, Some(&point_mass([1, 0], [1, 0])), &Value::Null, 0).unwrap();
        assert!(out.intrinsic_fail);
        assert_eq!(out.metrics["ellipticity_2_3_ok"], 0.0);
        let out = run_experiment(ExperimentKind::Validate, Some(&desk_model()), &json!({}), 0).unwrap();
        assert!(!out.intrinsic_fail);
    }

    #[test]
    fn unknown_params_are_config_errors() {
        let e = run_experiment(ExperimentKind::Velocity, Some(&desk_model()), &json!({"cycles": 10, "bogus": 1}), 0);
        assert!(matches!(e, Err(Error::Config(_))), "{e:?}");
        let e = run_experiment(ExperimentKind::Velocity, None, &json!({"cycles": 10}), 0);
        assert!(matches!(e, Err(Error::Config(_))));
    }

    #[test]
    fn config_parses_model_forms() {
        let text = r#"{"schema_version":1,"experiment":"velocity","model":"m.json","params":{"cycles":5},"master_seed":3}"#;
        let cfg = ExperimentConfig::from_json_str(text).unwrap();
        assert_eq!(cfg.experiment, ExperimentKind::Velocity);
        assert_eq!(cfg.hash().len(), 64);
        let bad = text.replace("\"schema_version\":1", "\"schema_version\":9");
        assert!(ExperimentConfig::from_json_str(&bad).is_err());
    }
}
