//! Pipeline runner behind the command-line tool: one [`RunConfig`] in, one
//! JSON report out.
//!
//! Reports are deterministic for a fixed config and seed except for the
//! values stored under `"timing"` keys. Every number is checked to be finite
//! before it is written.

use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{json, Map, Value};

use crate::error::{Error, Result};
use crate::io::{read_matrix_market, write_matrix_market, write_sparse_matrix_market, LoadedMatrix};
use crate::linalg::{congruence_transform, inverse_sqrt_factor, Congruence, SymmetricMatrix};
use crate::mixed::{reduced_precision_pipeline, Precision, SingleAlgebra, SplitHalfAlgebra};
use crate::models::{chain_tridiagonal, generate_model, ModelKind, ModelSpec};
use crate::oracles::{duality_audit, relative_deviation, tridiagonal_response_oracle};
use crate::response::{
    dm_perturbation_replay, forward_expansion_with, susceptibility_backward_replay,
    susceptibility_backward_with, susceptibility_forward,
};
use crate::scf::{kernel_from_spec, scf_dm_response, scf_ground_state, scf_susceptibility, ScfConfig};
use crate::sp2::{sp2_ground_state, sp2_ground_state_with, Sp2Trace};
use crate::sparse::{sparsify, SparseMatrix, ThresholdedAlgebra};
use crate::thermal::ThermalState;

pub const REPORT_SCHEMA: u64 = 1;

/// Number of trailing idempotency or residual values kept in reports.
pub const LOG_TAIL: usize = 5;

/// Width of the local observable and perturbation used by chain benchmarks.
pub const BENCHMARK_WINDOW: usize = 8;

// salts separating the random streams drawn from one seed
const SALT_OBS: u64 = 0x0b5e_4a7e;
const SALT_PERT: u64 = 0x9e47_0b11;
const SALT_KERNEL: u64 = 0x6e7e_1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Generate,
    GroundState,
    Respond,
    Scf,
    Audit,
    Benchmark,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Generate => "generate",
            Command::GroundState => "ground-state",
            Command::Respond => "respond",
            Command::Scf => "scf",
            Command::Audit => "audit",
            Command::Benchmark => "benchmark",
        }
    }
}

/// Which response routes `respond` and `scf` evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ResponseMode {
    /// `Tr[A D1]` from the density-matrix perturbation.
    Perturb,
    /// `Tr[chi H1]` with the forward susceptibility.
    SusceptFwd,
    /// `Tr[chi H1]` with the backward susceptibility.
    SusceptBwd,
    #[default]
    Both,
}

impl ResponseMode {
    fn direct(self) -> bool {
        matches!(self, ResponseMode::Perturb | ResponseMode::Both)
    }

    fn forward(self) -> bool {
        matches!(self, ResponseMode::SusceptFwd | ResponseMode::Both)
    }

    fn backward(self) -> bool {
        matches!(self, ResponseMode::SusceptBwd | ResponseMode::Both)
    }
}

impl FromStr for ResponseMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "perturb" => Ok(ResponseMode::Perturb),
            "suscept-fwd" => Ok(ResponseMode::SusceptFwd),
            "suscept-bwd" => Ok(ResponseMode::SusceptBwd),
            "both" => Ok(ResponseMode::Both),
            other => Err(Error::InvalidArgument(format!("unknown mode {other:?}"))),
        }
    }
}

/// Everything a run needs. Missing observables and perturbations default to
/// random diagonal (on-site) operators drawn from `seed`.
#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub command: Command,
    pub h0: Option<PathBuf>,
    pub h1: Option<PathBuf>,
    pub obs: Option<PathBuf>,
    /// Overlap input; for `generate`, where to write a generated overlap.
    pub overlap: Option<PathBuf>,
    /// Generated Hamiltonian used instead of `h0`.
    pub model: Option<ModelSpec>,
    /// Benchmark sizes.
    pub sizes: Vec<usize>,
    pub n_occ: Option<usize>,
    pub tau: Option<f64>,
    pub beta_t: Option<f64>,
    /// `NAME:STRENGTH`, see [`kernel_from_spec`].
    pub kernel: Option<String>,
    pub precision: Precision,
    pub mode: ResponseMode,
    pub seed: u64,
    /// Report path; for `generate`, the Hamiltonian output path.
    pub out: Option<PathBuf>,
}

impl RunConfig {
    pub fn new(command: Command) -> Self {
        RunConfig {
            command,
            h0: None,
            h1: None,
            obs: None,
            overlap: None,
            model: None,
            sizes: Vec::new(),
            n_occ: None,
            tau: None,
            beta_t: None,
            kernel: None,
            precision: Precision::F64,
            mode: ResponseMode::Both,
            seed: 0,
            out: None,
        }
    }

    /// Rejects unsupported flag combinations before any work is done.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        let cmd = self.command;
        if let Some(t) = self.tau {
            if !(t.is_finite() && t >= 0.0) {
                return bad("--tau must be a non-negative number");
            }
        }
        if let Some(b) = self.beta_t {
            if !(b.is_finite() && b > 0.0) {
                return bad("--beta-t must be a positive number");
            }
        }
        let reduced = self.precision != Precision::F64;
        if self.tau.is_some() {
            if reduced {
                return bad("sparse thresholding (--tau) is only supported with --precision f64");
            }
            if self.overlap.is_some() && cmd != Command::Generate {
                return bad("--tau cannot be combined with --overlap");
            }
            if self.beta_t.is_some() {
                return bad("--tau cannot be combined with --beta-t");
            }
            if matches!(cmd, Command::Scf | Command::Audit) {
                return bad("--tau is not supported by scf or audit");
            }
        }
        if self.beta_t.is_some() && reduced {
            return bad("--beta-t is only supported with --precision f64");
        }
        if reduced && matches!(cmd, Command::Scf | Command::Audit) {
            return bad("scf and audit run in f64 only");
        }
        if self.kernel.is_some() && cmd != Command::Scf {
            return bad("--kernel only applies to scf");
        }
        if self.mode == ResponseMode::SusceptBwd {
            if self.beta_t.is_some() {
                return bad("the backward susceptibility is a zero-temperature route");
            }
            if reduced {
                return bad("the backward susceptibility runs in f64 only");
            }
            if cmd == Command::Scf {
                return bad("scf supports --mode perturb, suscept-fwd or both");
            }
        }
        match cmd {
            Command::Generate => {
                if self.model.is_none() {
                    return bad("generate needs a model (--model)");
                }
                if self.out.is_none() {
                    return bad("generate needs --out for the Hamiltonian file");
                }
            }
            Command::Benchmark => {
                if self.model.is_none() {
                    return bad("benchmark needs a model kind (--kind)");
                }
                if self.sizes.is_empty() {
                    return bad("benchmark needs --sizes");
                }
                if self.sizes.iter().any(|&n| n < 2) {
                    return bad("benchmark sizes must be at least 2");
                }
                if self.h0.is_some() {
                    return bad("benchmark generates its own Hamiltonians");
                }
            }
            _ => match (&self.h0, &self.model) {
                (Some(_), Some(_)) => return bad("give either --h0 or a model, not both"),
                (None, None) => return bad("an input Hamiltonian (--h0) or a model is required"),
                _ => {}
            },
        }
        if let Some(m) = &self.model {
            if m.kind == ModelKind::OverlapChain && self.overlap.is_some() && cmd != Command::Generate {
                return bad("overlap_chain generates its own overlap; drop --overlap");
            }
        }
        Ok(())
    }
}

/// Process exit status for a failed run.
pub fn exit_status(err: &Error) -> i32 {
    if err.is_numerical() {
        1
    } else {
        2
    }
}

fn finite(field: &str, x: f64) -> Result<Value> {
    if x.is_finite() {
        Ok(json!(x))
    } else {
        Err(Error::NonFiniteResult {
            field: field.to_string(),
        })
    }
}

fn finite_list(field: &str, xs: &[f64]) -> Result<Value> {
    xs.iter()
        .map(|&x| finite(field, x))
        .collect::<Result<Vec<_>>>()
        .map(Value::Array)
}

fn tail(xs: &[f64]) -> &[f64] {
    &xs[xs.len().saturating_sub(LOG_TAIL)..]
}

fn seconds(t: Instant) -> f64 {
    t.elapsed().as_secs_f64()
}

fn header(cfg: &RunConfig) -> Result<Map<String, Value>> {
    let mut m = Map::new();
    m.insert("schema".into(), json!(REPORT_SCHEMA));
    m.insert("command".into(), json!(cfg.command.name()));
    m.insert(
        "inputs".into(),
        serde_json::to_value(cfg).map_err(|e| Error::InvalidArgument(e.to_string()))?,
    );
    m.insert("precision".into(), serde_json::to_value(cfg.precision).unwrap_or(Value::Null));
    Ok(m)
}

/// Runs the configured pipeline and returns its report.
pub fn run(cfg: &RunConfig) -> Result<Value> {
    cfg.validate()?;
    let start = Instant::now();
    let mut report = header(cfg)?;
    let body = match cfg.command {
        Command::Generate => run_generate(cfg)?,
        Command::GroundState => run_ground_state(cfg)?,
        Command::Respond => run_respond(cfg)?,
        Command::Scf => run_scf(cfg)?,
        Command::Audit => run_audit(cfg)?,
        Command::Benchmark => run_benchmark(cfg)?,
    };
    report.insert("status".into(), json!("ok"));
    report.extend(body);
    let timing = report
        .entry("timing")
        .or_insert_with(|| json!({}))
        .as_object_mut()
        .expect("timing is an object");
    timing.insert("total_s".into(), json!(seconds(start)));
    Ok(Value::Object(report))
}

/// Report for a run that failed with `err`.
pub fn error_report(cfg: &RunConfig, err: &Error) -> Value {
    let mut report = header(cfg).unwrap_or_default();
    report.insert("schema".into(), json!(REPORT_SCHEMA));
    report.insert("status".into(), json!("error"));
    let mut e = Map::new();
    e.insert("kind".into(), json!(err.kind()));
    e.insert("message".into(), json!(err.to_string()));
    e.insert("numerical".into(), json!(err.is_numerical()));
    let finite_tail = |xs: &[f64]| -> Value { tail(xs).iter().filter(|x| x.is_finite()).copied().collect() };
    match err {
        Error::Sp2NoConvergence { iterations, idempotency_log } => {
            e.insert("iterations".into(), json!(iterations));
            e.insert("idempotency_tail".into(), finite_tail(idempotency_log));
        }
        Error::ScfNoConvergence { iterations, residuals } => {
            e.insert("iterations".into(), json!(iterations));
            e.insert("residual_tail".into(), finite_tail(residuals));
        }
        Error::Parse { line, .. } => {
            e.insert("line".into(), json!(line));
        }
        _ => {}
    }
    report.insert("error".into(), Value::Object(e));
    Value::Object(report)
}

/// Runs and writes the report to `cfg.out` (or returns it for printing);
/// the integer is the process exit status.
pub fn run_to_report(cfg: &RunConfig) -> (Value, i32) {
    match run(cfg) {
        Ok(r) => (r, 0),
        Err(e) => (error_report(cfg, &e), exit_status(&e)),
    }
}

// ---------------------------------------------------------------- inputs

fn chain_sparse(n: usize, gap: f64) -> Result<SparseMatrix> {
    let (d, e) = chain_tridiagonal(n, gap);
    let mut t: Vec<(usize, usize, f64)> = d.iter().enumerate().map(|(i, &v)| (i, i, v)).collect();
    for (i, &v) in e.iter().enumerate() {
        t.push((i, i + 1, v));
        t.push((i + 1, i, v));
    }
    SparseMatrix::from_triplets(n, &t)
}

fn overlap_sparse(n: usize, s: f64) -> Result<SparseMatrix> {
    let mut t: Vec<(usize, usize, f64)> = (0..n).map(|i| (i, i, 1.0)).collect();
    for i in 0..n.saturating_sub(1) {
        t.push((i, i + 1, s));
        t.push((i + 1, i, s));
    }
    SparseMatrix::from_triplets(n, &t)
}

fn model_for(cfg: &RunConfig) -> Result<ModelSpec> {
    let mut m = cfg
        .model
        .clone()
        .ok_or_else(|| Error::InvalidArgument("no model given".into()))?;
    if m.n_occ.is_none() {
        m.n_occ = cfg.n_occ;
    }
    Ok(m)
}

struct Problem {
    h0: LoadedMatrix,
    /// Löwdin factor of the overlap, when one is present.
    z: Option<SymmetricMatrix>,
    s: Option<SymmetricMatrix>,
    n_occ: usize,
}

impl Problem {
    fn n(&self) -> usize {
        self.h0.dim()
    }
}

fn load_problem(cfg: &RunConfig) -> Result<Problem> {
    let (h0, s) = match (&cfg.h0, &cfg.model) {
        (Some(p), _) => {
            let s = cfg.overlap.as_ref().map(read_matrix_market).transpose()?.map(LoadedMatrix::into_dense);
            (read_matrix_market(p)?, s)
        }
        (None, Some(_)) => {
            let m = model_for(cfg)?;
            if m.kind == ModelKind::Chain && cfg.tau.is_some() {
                // large chains never go through a dense matrix
                generate_model(&ModelSpec { n: 1, ..m.clone() })?;
                (LoadedMatrix::Sparse(chain_sparse(m.n, m.gap)?), None)
            } else {
                let (h, s) = generate_model(&m)?;
                let s = match (s, &cfg.overlap) {
                    (Some(s), _) => Some(s),
                    (None, Some(p)) => Some(read_matrix_market(p)?.into_dense()),
                    (None, None) => None,
                };
                (LoadedMatrix::Dense(h), s)
            }
        }
        (None, None) => return Err(Error::InvalidArgument("no Hamiltonian given".into())),
    };
    let n = h0.dim();
    if let Some(s) = &s {
        if s.dim() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: s.dim(),
            });
        }
    }
    let n_occ = cfg.n_occ.or(cfg.model.as_ref().and_then(|m| m.n_occ)).unwrap_or(n / 2);
    if n_occ < 1 || n_occ >= n {
        return Err(Error::InvalidOccupation {
            n_occ: n_occ as f64,
            dim: n,
        });
    }
    let z = s.as_ref().map(inverse_sqrt_factor).transpose()?;
    Ok(Problem { h0, z, s, n_occ })
}

fn random_onsite(n: usize, seed: u64, salt: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ salt);
    (0..n).map(|_| rng.gen_range(-1.0..=1.0)).collect()
}

/// Observable or perturbation from a file, or a random on-site operator.
fn load_operator(path: Option<&PathBuf>, n: usize, seed: u64, salt: u64) -> Result<LoadedMatrix> {
    let m = match path {
        Some(p) => read_matrix_market(p)?,
        None => {
            let d = random_onsite(n, seed, salt);
            let t: Vec<_> = d.iter().enumerate().map(|(i, &v)| (i, i, v)).collect();
            LoadedMatrix::Sparse(SparseMatrix::from_triplets(n, &t)?)
        }
    };
    if m.dim() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: m.dim(),
        });
    }
    Ok(m)
}

fn to_sparse(m: LoadedMatrix, tau: f64) -> Result<SparseMatrix> {
    match m {
        LoadedMatrix::Sparse(s) => Ok(s),
        LoadedMatrix::Dense(d) => sparsify(&d, tau),
    }
}

/// Dense operator in the orthogonal basis (`Z^T X Z` when an overlap is present).
fn orthogonal(x: &SymmetricMatrix, z: Option<&SymmetricMatrix>) -> Result<SymmetricMatrix> {
    match z {
        Some(z) => congruence_transform(x, z, Congruence::ToOrthogonal),
        None => Ok(x.clone()),
    }
}

fn problem_json(p: &Problem, representation: &str) -> Value {
    json!({
        "n": p.n(),
        "n_occ": p.n_occ,
        "representation": representation,
        "nonorthogonal": p.s.is_some(),
    })
}

fn trace_json(t: &Sp2Trace) -> Result<Map<String, Value>> {
    let mut m = Map::new();
    m.insert("m_steps".into(), json!(t.m_steps));
    m.insert("sigmas".into(), json!(t.sigmas));
    m.insert("idempotency_tail".into(), finite_list("idempotency_tail", tail(&t.idempotency_log))?);
    m.insert(
        "bounds".into(),
        finite_list("bounds", &[t.bounds.eps_min, t.bounds.eps_max])?,
    );
    Ok(m)
}

// ---------------------------------------------------------------- commands

fn run_generate(cfg: &RunConfig) -> Result<Map<String, Value>> {
    let m = model_for(cfg)?;
    let out = cfg.out.as_ref().expect("validated");
    let overlap_path = cfg
        .overlap
        .clone()
        .unwrap_or_else(|| out.with_extension("overlap.mtx"));
    let mut files = Map::new();
    files.insert("h0".into(), json!(out));
    match m.kind {
        ModelKind::Chain | ModelKind::OverlapChain => {
            generate_model(&ModelSpec { n: 1, ..m.clone() })?;
            write_sparse_matrix_market(out, &chain_sparse(m.n, m.gap)?)?;
            if m.kind == ModelKind::OverlapChain {
                write_sparse_matrix_market(&overlap_path, &overlap_sparse(m.n, m.overlap)?)?;
                files.insert("overlap".into(), json!(overlap_path));
            }
        }
        ModelKind::GappedRandom => {
            let (h, _) = generate_model(&m)?;
            write_matrix_market(out, &h)?;
        }
    }
    let mut r = Map::new();
    r.insert("model".into(), serde_json::to_value(&m).map_err(|e| Error::InvalidArgument(e.to_string()))?);
    r.insert("files".into(), Value::Object(files));
    Ok(r)
}

fn run_ground_state(cfg: &RunConfig) -> Result<Map<String, Value>> {
    let p = load_problem(cfg)?;
    let n = p.n();
    let a = load_operator(cfg.obs.as_ref(), n, cfg.seed, SALT_OBS)?;
    let mut r = Map::new();
    let mut timing = Map::new();
    let t0 = Instant::now();
    if let Some(tau) = cfg.tau {
        let h0 = to_sparse(p.h0.clone(), tau)?;
        let a = to_sparse(a, tau)?;
        let (d0, trace) = sp2_ground_state_with(&mut ThresholdedAlgebra::new(tau), &h0, p.n_occ, None)?;
        timing.insert("ground_state_s".into(), json!(seconds(t0)));
        r.insert("problem".into(), problem_json(&p, "sparse"));
        r.insert("a0".into(), finite("a0", a.trace_product(&d0))?);
        r.insert("trace_d0".into(), finite("trace_d0", d0.trace())?);
        r.insert("nnz".into(), json!({"h0": h0.nnz(), "d0": d0.nnz(), "max_row_d0": d0.max_row_nnz()}));
        r.extend(trace_json(&trace)?);
    } else {
        let h_perp = orthogonal(&p.h0.to_dense(), p.z.as_ref())?;
        let a_perp = orthogonal(&a.into_dense(), p.z.as_ref())?;
        let (d_perp, trace, mu0, mults) = match (cfg.beta_t, cfg.precision) {
            (Some(b), _) => {
                let st = ThermalState::new(&h_perp, b, p.n_occ as f64)?;
                (st.d, None, Some(st.config.mu0), None)
            }
            (None, Precision::F64) => {
                let (d, t) = sp2_ground_state(&h_perp, p.n_occ, None)?;
                (d, Some(t), None, None)
            }
            (None, Precision::F32) => {
                let mut alg = SingleAlgebra::default();
                let (d, t) = sp2_ground_state_with(&mut alg, &h_perp, p.n_occ, None)?;
                (d, Some(t), None, Some(alg.multiplications))
            }
            (None, Precision::Split16) => {
                let mut alg = SplitHalfAlgebra::default();
                let (d, t) = sp2_ground_state_with(&mut alg, &h_perp, p.n_occ, None)?;
                (d, Some(t), None, Some(alg.gemm.multiplications))
            }
        };
        timing.insert("ground_state_s".into(), json!(seconds(t0)));
        r.insert("problem".into(), problem_json(&p, "dense"));
        r.insert("a0".into(), finite("a0", a_perp.trace_product(&d_perp))?);
        r.insert("trace_d0".into(), finite("trace_d0", d_perp.trace())?);
        r.insert(
            "idempotency_error".into(),
            finite("idempotency_error", d_perp.square().distance(&d_perp))?,
        );
        if let Some(t) = &trace {
            r.extend(trace_json(t)?);
        }
        if let Some(mu) = mu0 {
            r.insert("mu0".into(), finite("mu0", mu)?);
        }
        if let Some(k) = mults {
            r.insert("multiplications".into(), json!(k));
            r.insert("trace_arithmetic".into(), json!("f64"));
        }
    }
    r.insert("timing".into(), Value::Object(timing));
    Ok(r)
}

/// Collected first-order values of one run.
#[derive(Default)]
struct Routes {
    direct: Option<f64>,
    dual_forward: Option<f64>,
    dual_backward: Option<f64>,
}

impl Routes {
    fn present(&self) -> Vec<(&'static str, f64)> {
        [
            ("direct", self.direct),
            ("dual_forward", self.dual_forward),
            ("dual_backward", self.dual_backward),
        ]
        .into_iter()
        .filter_map(|(k, v)| v.map(|v| (k, v)))
        .collect()
    }

    fn write(&self, r: &mut Map<String, Value>) -> Result<()> {
        let present = self.present();
        let mut a1 = Map::new();
        for (k, v) in &present {
            a1.insert((*k).into(), finite(k, *v)?);
        }
        r.insert("a1".into(), Value::Object(a1));
        let mut dev = Map::new();
        let mut worst = 0.0f64;
        for (i, (ka, va)) in present.iter().enumerate() {
            for (kb, vb) in &present[i + 1..] {
                let d = relative_deviation(*va, *vb);
                worst = worst.max(d);
                dev.insert(format!("{ka}_vs_{kb}"), finite("duality", d)?);
            }
        }
        if present.len() > 1 {
            dev.insert("max".into(), finite("duality", worst)?);
        }
        r.insert("duality".into(), Value::Object(dev));
        Ok(())
    }
}

fn run_respond(cfg: &RunConfig) -> Result<Map<String, Value>> {
    let p = load_problem(cfg)?;
    let n = p.n();
    let a = load_operator(cfg.obs.as_ref(), n, cfg.seed, SALT_OBS)?;
    let h1 = load_operator(cfg.h1.as_ref(), n, cfg.seed, SALT_PERT)?;
    let mode = cfg.mode;
    let mut r = Map::new();
    let mut timing = Map::new();
    let mut routes = Routes::default();

    if let Some(tau) = cfg.tau {
        let h0 = to_sparse(p.h0.clone(), tau)?;
        let a = to_sparse(a, tau)?;
        let h1 = to_sparse(h1, tau)?;
        let mut alg = ThresholdedAlgebra::new(tau);
        let mut seeds = Vec::new();
        if mode.forward() {
            seeds.push(&a);
        }
        if mode.direct() {
            seeds.push(&h1);
        }
        let t0 = Instant::now();
        let (d0, resp, trace) = forward_expansion_with(&mut alg, &h0, &seeds, p.n_occ, None)?;
        timing.insert("forward_s".into(), json!(seconds(t0)));
        let mut resp = resp.into_iter();
        let mut nnz = Map::new();
        nnz.insert("h0".into(), json!(h0.nnz()));
        nnz.insert("d0".into(), json!(d0.nnz()));
        if mode.forward() {
            let chi = resp.next().expect("one response per seed");
            routes.dual_forward = Some(chi.trace_product(&h1));
            nnz.insert("chi".into(), json!(chi.nnz()));
        }
        if mode.direct() {
            let d1 = resp.next().expect("one response per seed");
            routes.direct = Some(a.trace_product(&d1));
            nnz.insert("d1".into(), json!(d1.nnz()));
        }
        if mode.backward() {
            let t1 = Instant::now();
            let (_, chi_b, _) = susceptibility_backward_with(&mut alg, &h0, &a, p.n_occ)?;
            timing.insert("backward_s".into(), json!(seconds(t1)));
            routes.dual_backward = Some(chi_b.trace_product(&h1));
            nnz.insert("chi_backward".into(), json!(chi_b.nnz()));
        }
        r.insert("problem".into(), problem_json(&p, "sparse"));
        r.insert("a0".into(), finite("a0", a.trace_product(&d0))?);
        r.insert("nnz".into(), Value::Object(nnz));
        r.extend(trace_json(&trace)?);
        routes.write(&mut r)?;
        r.insert("timing".into(), Value::Object(timing));
        return Ok(r);
    }

    let z = p.z.as_ref();
    let h0 = orthogonal(&p.h0.to_dense(), z)?;
    let a = orthogonal(&a.into_dense(), z)?;
    let h1 = orthogonal(&h1.into_dense(), z)?;
    r.insert("problem".into(), problem_json(&p, "dense"));

    if let Some(b) = cfg.beta_t {
        let t0 = Instant::now();
        let st = ThermalState::new(&h0, b, p.n_occ as f64)?;
        r.insert("a0".into(), finite("a0", a.trace_product(&st.d))?);
        r.insert("mu0".into(), finite("mu0", st.config.mu0)?);
        let mut mu1 = Map::new();
        if mode.direct() {
            let (d1, m) = st.canonical_derivative(&h1)?;
            routes.direct = Some(a.trace_product(&d1));
            mu1.insert("perturbation".into(), finite("mu1", m)?);
        }
        if mode.forward() {
            let (chi, m) = st.canonical_derivative(&a)?;
            routes.dual_forward = Some(chi.trace_product(&h1));
            mu1.insert("observable".into(), finite("mu1", m)?);
            r.insert(
                "chi_trace".into(),
                finite("chi_trace", chi.trace())?,
            );
        }
        r.insert("mu1".into(), Value::Object(mu1));
        timing.insert("thermal_s".into(), json!(seconds(t0)));
        routes.write(&mut r)?;
        r.insert("timing".into(), Value::Object(timing));
        return Ok(r);
    }

    if cfg.precision != Precision::F64 {
        let mut reduced = Routes::default();
        let mut mults = Map::new();
        let mut last_trace = None;
        let t0 = Instant::now();
        if mode.direct() {
            let run = reduced_precision_pipeline(&h0, &h1, p.n_occ, cfg.precision)?;
            reduced.direct = Some(a.trace_product(&run.response));
            mults.insert("direct".into(), json!(run.multiplications));
            r.insert("a0".into(), finite("a0", a.trace_product(&run.d0))?);
            last_trace = Some(run.trace);
        }
        if mode.forward() {
            let run = reduced_precision_pipeline(&h0, &a, p.n_occ, cfg.precision)?;
            reduced.dual_forward = Some(run.response.trace_product(&h1));
            mults.insert("dual_forward".into(), json!(run.multiplications));
            r.insert("a0".into(), finite("a0", a.trace_product(&run.d0))?);
            last_trace = Some(run.trace);
        }
        timing.insert("reduced_s".into(), json!(seconds(t0)));
        if let Some(t) = &last_trace {
            r.extend(trace_json(t)?);
            if let Some(k) = mults.values().next().and_then(Value::as_u64) {
                if t.m_steps > 0 {
                    r.insert("multiplications_per_step".into(), finite("multiplications_per_step", k as f64 / t.m_steps as f64)?);
                }
            }
        }
        r.insert("multiplications".into(), Value::Object(mults));
        r.insert("trace_arithmetic".into(), json!("f64"));
        reduced.write(&mut r)?;

        // f64 reference for the same routes
        let fwd = susceptibility_forward(&h0, &a, p.n_occ)?;
        let mut reference = Map::new();
        let mut rel = Map::new();
        if let Some(v) = reduced.direct {
            let exact = a.trace_product(&dm_perturbation_replay(&h0, &h1, &fwd.trace)?);
            reference.insert("direct".into(), finite("reference", exact)?);
            rel.insert("direct".into(), finite("relative_error", (v - exact).abs() / exact.abs().max(1e-12))?);
        }
        if let Some(v) = reduced.dual_forward {
            let exact = fwd.chi.trace_product(&h1);
            reference.insert("dual_forward".into(), finite("reference", exact)?);
            rel.insert("dual_forward".into(), finite("relative_error", (v - exact).abs() / exact.abs().max(1e-12))?);
        }
        r.insert("reference_f64".into(), Value::Object(reference));
        r.insert("relative_error".into(), Value::Object(rel));
        r.insert("timing".into(), Value::Object(timing));
        return Ok(r);
    }

    let t0 = Instant::now();
    let fwd = susceptibility_forward(&h0, &a, p.n_occ)?;
    timing.insert("forward_s".into(), json!(seconds(t0)));
    r.insert("a0".into(), finite("a0", a.trace_product(&fwd.d0))?);
    if mode.forward() {
        routes.dual_forward = Some(fwd.chi.trace_product(&h1));
    }
    if mode.direct() {
        let t1 = Instant::now();
        let d1 = dm_perturbation_replay(&h0, &h1, &fwd.trace)?;
        timing.insert("perturbation_s".into(), json!(seconds(t1)));
        routes.direct = Some(a.trace_product(&d1));
    }
    if mode.backward() {
        let t1 = Instant::now();
        let bwd = susceptibility_backward_replay(&h0, &a, &fwd.trace)?;
        timing.insert("backward_s".into(), json!(seconds(t1)));
        routes.dual_backward = Some(bwd.chi.trace_product(&h1));
        r.insert("stored_bytes".into(), json!(bwd.stored_bytes));
    }
    r.extend(trace_json(&fwd.trace)?);
    routes.write(&mut r)?;
    r.insert("timing".into(), Value::Object(timing));
    Ok(r)
}

fn run_scf(cfg: &RunConfig) -> Result<Map<String, Value>> {
    let p = load_problem(cfg)?;
    let n = p.n();
    let h_core = p.h0.to_dense();
    let a = load_operator(cfg.obs.as_ref(), n, cfg.seed, SALT_OBS)?.into_dense();
    let h1 = load_operator(cfg.h1.as_ref(), n, cfg.seed, SALT_PERT)?.into_dense();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ SALT_KERNEL);
    let spec = cfg.kernel.as_deref().unwrap_or("zero");
    let g = kernel_from_spec(spec, n, &mut rng)?;
    let scf_cfg = ScfConfig {
        beta_t: cfg.beta_t,
        ..ScfConfig::default()
    };
    let mut r = Map::new();
    let mut timing = Map::new();
    let t0 = Instant::now();
    let state = scf_ground_state(&h_core, p.s.as_ref(), g.as_ref(), p.n_occ, &scf_cfg)?;
    timing.insert("ground_state_s".into(), json!(seconds(t0)));
    r.insert("problem".into(), problem_json(&p, "dense"));
    r.insert(
        "kernel".into(),
        json!({"name": g.name(), "strength": finite("kernel.strength", g.strength())?}),
    );
    r.insert("a0".into(), finite("a0", a.trace_product(&state.d))?);
    r.insert("scf_iterations".into(), json!(state.iterations()));
    r.insert("residual_tail".into(), finite_list("residual_tail", tail(&state.residuals))?);
    if let Some(mu) = state.mu0 {
        r.insert("mu0".into(), finite("mu0", mu)?);
    }
    if let Some(t) = state.trace() {
        r.extend(trace_json(t)?);
    }
    let mut routes = Routes::default();
    let mut iters = Map::new();
    if cfg.mode.direct() {
        let t1 = Instant::now();
        let d1 = scf_dm_response(&state, g.as_ref(), &h1, &scf_cfg)?;
        timing.insert("perturbation_s".into(), json!(seconds(t1)));
        routes.direct = Some(a.trace_product(&d1.matrix));
        iters.insert("direct".into(), json!(d1.residuals.len()));
    }
    if cfg.mode.forward() {
        let t1 = Instant::now();
        let chi = scf_susceptibility(&state, g.as_ref(), &a, &scf_cfg)?;
        timing.insert("susceptibility_s".into(), json!(seconds(t1)));
        routes.dual_forward = Some(chi.matrix.trace_product(&h1));
        iters.insert("dual_forward".into(), json!(chi.residuals.len()));
    }
    r.insert("response_iterations".into(), Value::Object(iters));
    routes.write(&mut r)?;
    r.insert("timing".into(), Value::Object(timing));
    Ok(r)
}

fn run_audit(cfg: &RunConfig) -> Result<Map<String, Value>> {
    let p = load_problem(cfg)?;
    let n = p.n();
    let z = p.z.as_ref();
    let h0 = orthogonal(&p.h0.to_dense(), z)?;
    let a = orthogonal(&load_operator(cfg.obs.as_ref(), n, cfg.seed, SALT_OBS)?.into_dense(), z)?;
    let h1 = orthogonal(&load_operator(cfg.h1.as_ref(), n, cfg.seed, SALT_PERT)?.into_dense(), z)?;
    let t0 = Instant::now();
    let audit = duality_audit(&h0, &a, &h1, p.n_occ, cfg.beta_t)?;
    let mut r = Map::new();
    r.insert("problem".into(), problem_json(&p, "dense"));
    r.insert("a0".into(), finite("a0", audit.a0)?);
    r.insert("m_steps".into(), json!(audit.m_steps));
    let routes = Routes {
        direct: Some(audit.direct),
        dual_forward: Some(audit.dual_forward),
        dual_backward: Some(audit.dual_backward),
    };
    routes.write(&mut r)?;
    let a1 = r.get_mut("a1").and_then(Value::as_object_mut).expect("a1 written");
    a1.insert("oracle".into(), finite("oracle", audit.oracle)?);
    r.insert(
        "max_relative_deviation".into(),
        finite("max_relative_deviation", audit.max_relative_deviation)?,
    );
    if let Some(t) = audit.thermal {
        r.insert(
            "thermal".into(),
            json!({
                "beta_t": finite("thermal.beta_t", t.beta_t)?,
                "direct": finite("thermal.direct", t.direct)?,
                "dual": finite("thermal.dual", t.dual)?,
                "relative_deviation": finite("thermal.relative_deviation", t.relative_deviation)?,
            }),
        );
    }
    r.insert("timing".into(), json!({"audit_s": seconds(t0)}));
    Ok(r)
}

/// Window-local random observable and perturbation for chain benchmarks.
fn chain_window(n: usize, seed: u64) -> (usize, SymmetricMatrix, SymmetricMatrix) {
    let w = BENCHMARK_WINDOW.min(n);
    let offset = n / 2 - w / 2;
    let mut ra = ChaCha8Rng::seed_from_u64(seed ^ SALT_OBS);
    let mut rh = ChaCha8Rng::seed_from_u64(seed ^ SALT_PERT);
    let a = SymmetricMatrix::from_fn(w, |_, _| ra.gen_range(-1.0..=1.0));
    let h1 = SymmetricMatrix::from_fn(w, |_, _| rh.gen_range(-1.0..=1.0));
    (offset, a, h1)
}

fn embed(n: usize, offset: usize, w: &SymmetricMatrix) -> Result<SparseMatrix> {
    let k = w.dim();
    let mut t = Vec::with_capacity(k * k);
    for i in 0..k {
        for j in 0..k {
            t.push((offset + i, offset + j, w.get(i, j)));
        }
    }
    SparseMatrix::from_triplets(n, &t)
}

/// Thresholded merged expansion on one chain size, compared to the
/// tridiagonal eigenvector oracle.
pub fn chain_benchmark_point(n: usize, gap: f64, tau: f64, seed: u64) -> Result<Value> {
    let (offset, aw, hw) = chain_window(n, seed);
    let h0 = chain_sparse(n, gap)?;
    let a = embed(n, offset, &aw)?;
    let h1 = embed(n, offset, &hw)?;
    let n_occ = n / 2;
    let t0 = Instant::now();
    let (d0, resp, trace) = forward_expansion_with(&mut ThresholdedAlgebra::new(tau), &h0, &[&a, &h1], n_occ, None)?;
    let wall = seconds(t0);
    let (chi, d1) = (&resp[0], &resp[1]);
    let dual = chi.trace_product(&h1);
    let direct = a.trace_product(d1);
    let (d, e) = chain_tridiagonal(n, gap);
    let oracle = tridiagonal_response_oracle(&d, &e, n_occ, offset, &aw, &hw)?;
    let a0 = a.trace_product(&d0);
    Ok(json!({
        "n": n,
        "m_steps": trace.m_steps,
        "a0": finite("a0", a0)?,
        "a1": {
            "direct": finite("a1.direct", direct)?,
            "dual_forward": finite("a1.dual_forward", dual)?,
        },
        "oracle": {
            "a0": finite("oracle.a0", oracle.a0)?,
            "a1": finite("oracle.a1", oracle.a1)?,
            "homo_lumo_gap": finite("oracle.homo_lumo_gap", oracle.homo_lumo_gap)?,
        },
        "abs_error": {
            "a0": finite("abs_error", (a0 - oracle.a0).abs())?,
            "direct": finite("abs_error", (direct - oracle.a1).abs())?,
            "dual_forward": finite("abs_error", (dual - oracle.a1).abs())?,
        },
        "nnz": {
            "h0": h0.nnz(),
            "d0": d0.nnz(),
            "chi": chi.nnz(),
            "d1": d1.nnz(),
            "max_row_d0": d0.max_row_nnz(),
        },
        "timing": {"wall_s": wall},
    }))
}

/// Dense gapped-random point: reduced-precision routes against f64.
fn dense_benchmark_point(spec: &ModelSpec, n: usize, precision: Precision, seed: u64) -> Result<Value> {
    let m = ModelSpec {
        n,
        n_occ: None,
        seed,
        ..spec.clone()
    };
    let (h0, _) = generate_model(&m)?;
    let n_occ = n / 2;
    let mut ra = ChaCha8Rng::seed_from_u64(seed ^ SALT_OBS);
    let mut rh = ChaCha8Rng::seed_from_u64(seed ^ SALT_PERT);
    let a = SymmetricMatrix::from_fn(n, |_, _| ra.gen_range(-1.0..=1.0));
    let h1 = SymmetricMatrix::from_fn(n, |_, _| rh.gen_range(-1.0..=1.0));
    let t0 = Instant::now();
    let fwd = susceptibility_forward(&h0, &a, n_occ)?;
    let d1 = dm_perturbation_replay(&h0, &h1, &fwd.trace)?;
    let f64_s = seconds(t0);
    let exact_direct = a.trace_product(&d1);
    let exact_dual = fwd.chi.trace_product(&h1);
    let mut point = json!({
        "n": n,
        "m_steps": fwd.trace.m_steps,
        "reference_f64": {
            "direct": finite("reference.direct", exact_direct)?,
            "dual_forward": finite("reference.dual_forward", exact_dual)?,
        },
        "timing": {"f64_s": f64_s},
    });
    if precision != Precision::F64 {
        let t1 = Instant::now();
        let direct = reduced_precision_pipeline(&h0, &h1, n_occ, precision)?;
        let dual = reduced_precision_pipeline(&h0, &a, n_occ, precision)?;
        let reduced_s = seconds(t1);
        let vd = a.trace_product(&direct.response);
        let vc = dual.response.trace_product(&h1);
        let obj = point.as_object_mut().expect("object");
        obj.insert(
            "reduced".into(),
            json!({
                "direct": finite("reduced.direct", vd)?,
                "dual_forward": finite("reduced.dual_forward", vc)?,
                "relative_error": {
                    "direct": finite("relative_error", (vd - exact_direct).abs() / exact_direct.abs().max(1e-12))?,
                    "dual_forward": finite("relative_error", (vc - exact_dual).abs() / exact_dual.abs().max(1e-12))?,
                },
                "m_steps": dual.trace.m_steps,
                "multiplications": dual.multiplications,
            }),
        );
        obj["timing"]
            .as_object_mut()
            .expect("object")
            .insert("reduced_s".into(), json!(reduced_s));
    }
    Ok(point)
}

fn run_benchmark(cfg: &RunConfig) -> Result<Map<String, Value>> {
    let spec = model_for(cfg)?;
    let mut points = Vec::new();
    let mut walls = Vec::new();
    for &n in &cfg.sizes {
        let point = match spec.kind {
            ModelKind::Chain => chain_benchmark_point(n, spec.gap, cfg.tau.unwrap_or(0.0), cfg.seed)?,
            ModelKind::GappedRandom => dense_benchmark_point(&spec, n, cfg.precision, cfg.seed)?,
            ModelKind::OverlapChain => {
                return Err(Error::InvalidArgument("benchmark supports chain and gapped_random".into()))
            }
        };
        let wall = point["timing"]
            .as_object()
            .and_then(|t| t.get("wall_s").or_else(|| t.get("f64_s")))
            .and_then(Value::as_f64)
            .unwrap_or(0.0);
        walls.push(wall);
        points.push(point);
    }
    let ratios: Vec<f64> = walls.windows(2).map(|w| w[1] / w[0].max(1e-9)).collect();
    let mut r = Map::new();
    r.insert("kind".into(), serde_json::to_value(spec.kind).unwrap_or(Value::Null));
    if spec.kind == ModelKind::GappedRandom {
        r.insert("trace_arithmetic".into(), json!("f64"));
    }
    r.insert("points".into(), Value::Array(points));
    r.insert("timing".into(), json!({"wall_s": walls, "ratios": ratios}));
    Ok(r)
}

/// Removes every `"timing"` entry, leaving the deterministic part of a report.
pub fn strip_timing(v: &mut Value) {
    match v {
        Value::Object(m) => {
            m.remove("timing");
            m.values_mut().for_each(strip_timing);
        }
        Value::Array(a) => a.iter_mut().for_each(strip_timing),
        _ => {}
    }
}

/// Writes `report` as one line of JSON to `path`.
pub fn write_report(path: &Path, report: &Value) -> Result<()> {
    let mut text = serde_json::to_string(report).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}
