//! Scenario files, task dispatch and report emission for the `pqcm-lab` binary.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::composite::{self, check_all_pairs, discrimination_limit, x_basis, ProbabilityPolicy};
use crate::epr::{self, AliceOperation, EprScenario};
use crate::error::LabError;
use crate::linalg::{eigenvalues_hermitian, norm, ComplexMatrix, HilbertLayout, C64, DEFAULT_PSD_TOL};
use crate::pqcm::{self, build_machine, feasibility, gram_rank, max_uniform_probability, CloneJob};
use crate::state::{MeasurementBasis, StateVector};

pub const DEFAULT_TOL: f64 = 1e-9;
pub const TOL_ENV: &str = "PQCM_LAB_TOL";
/// Loaded vectors further than this from unit norm are rejected.
pub const NORM_REJECT_TOL: f64 = 1e-6;
/// Loaded vectors further than this from unit norm are renormalized with a warning.
pub const NORM_WARN_TOL: f64 = 1e-10;
const SIGNIFICANT_DIGITS: usize = 12;
const DEFAULT_SECOND_BASIS: f64 = std::f64::consts::PI / 6.0;
const DEFAULT_TRIALS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    Feasibility,
    MaxP,
    BuildMachine,
    EprRun,
    FourState,
    CompositeBound,
    DiscriminationLimit,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::Feasibility => "feasibility",
            Task::MaxP => "max-p",
            Task::BuildMachine => "build-machine",
            Task::EprRun => "epr-run",
            Task::FourState => "four-state",
            Task::CompositeBound => "composite-bound",
            Task::DiscriminationLimit => "discrimination-limit",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub task: Task,
    #[serde(default)]
    pub states: Vec<Vec<[f64; 2]>>,
    #[serde(rename = "M", default)]
    pub copies: Option<usize>,
    #[serde(default)]
    pub p: Option<Vec<f64>>,
    #[serde(default)]
    pub theta: Option<f64>,
    #[serde(rename = "M_list", default)]
    pub copies_list: Option<Vec<usize>>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub tol: Option<f64>,
    /// Subsystem dimensions `[dim_A, dim_B]` of a composite input.
    #[serde(default)]
    pub dims: Option<Vec<usize>>,
    /// Haar-random Alice unitaries in an `epr-run`.
    #[serde(default)]
    pub trials: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub value: f64,
    pub tolerance: f64,
}

impl Check {
    fn at_most(name: &str, value: f64, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            pass: value <= tolerance,
            value,
            tolerance,
        }
    }

    fn at_least(name: &str, value: f64, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            pass: value >= tolerance,
            value,
            tolerance,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub task: String,
    /// SHA-256 of the scenario file bytes.
    pub inputs_digest: String,
    pub version: String,
    pub outputs: Value,
    pub checks: Vec<Check>,
    #[serde(skip)]
    pub wall_time: Duration,
}

impl Report {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Format {
    #[default]
    Json,
    Csv,
}

impl Format {
    pub fn extension(self) -> &'static str {
        match self {
            Format::Json => "json",
            Format::Csv => "csv",
        }
    }
}

impl std::str::FromStr for Format {
    type Err = RunError;

    fn from_str(s: &str) -> Result<Self, RunError> {
        match s {
            "json" => Ok(Format::Json),
            "csv" => Ok(Format::Csv),
            other => Err(RunError::Input(format!("unsupported format `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum RunError {
    /// Unreadable or schema-invalid input; exit code 1.
    Input(String),
    /// The computation itself failed; exit code 2.
    Numeric(String),
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Input(_) => 1,
            RunError::Numeric(_) => 2,
        }
    }
}

impl fmt::Display for RunError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RunError::Input(m) => write!(f, "input error: {m}"),
            RunError::Numeric(m) => write!(f, "numeric failure: {m}"),
        }
    }
}

impl std::error::Error for RunError {}

fn numeric(e: LabError) -> RunError {
    RunError::Numeric(e.to_string())
}

#[derive(Debug, Clone, Default)]
pub struct RunFlags {
    pub out: Option<PathBuf>,
    pub format: Format,
    pub tol: Option<f64>,
    pub seed: Option<u64>,
    pub jobs: usize,
    /// Value of the tolerance environment variable, if set.
    pub env_tol: Option<String>,
}

/// Rounds to 12 significant digits; `-0` becomes `0`.
pub fn round_sig(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return if x == 0.0 { 0.0 } else { x };
    }
    let r: f64 = format!("{:.*e}", SIGNIFICANT_DIGITS - 1, x).parse().unwrap_or(x);
    if r == 0.0 {
        0.0
    } else {
        r
    }
}

fn round_value(v: &mut Value) {
    match v {
        Value::Number(n) if !(n.is_i64() || n.is_u64()) => {
            if let Some(x) = n.as_f64() {
                *v = json!(round_sig(x));
            }
        }
        Value::Array(a) => a.iter_mut().for_each(round_value),
        Value::Object(o) => o.values_mut().for_each(round_value),
        _ => {}
    }
}

/// Serializes a report. JSON is pretty-printed; CSV holds the checks table.
pub fn emit(report: &Report, format: Format) -> Result<Vec<u8>, RunError> {
    let mut report = report.clone();
    round_value(&mut report.outputs);
    for c in &mut report.checks {
        c.value = round_sig(c.value);
        c.tolerance = round_sig(c.tolerance);
    }
    match format {
        Format::Json => {
            let mut out = serde_json::to_vec_pretty(&report).map_err(|e| RunError::Numeric(e.to_string()))?;
            out.push(b'\n');
            Ok(out)
        }
        Format::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(["name", "pass", "value", "tolerance"])
                .map_err(|e| RunError::Numeric(e.to_string()))?;
            for c in &report.checks {
                w.write_record([
                    c.name.clone(),
                    c.pass.to_string(),
                    c.value.to_string(),
                    c.tolerance.to_string(),
                ])
                .map_err(|e| RunError::Numeric(e.to_string()))?;
            }
            w.into_inner().map_err(|e| RunError::Numeric(e.to_string()))
        }
    }
}

fn c(z: C64) -> Value {
    json!([z.re, z.im])
}

fn vector_json(v: &[C64]) -> Value {
    Value::Array(v.iter().map(|&z| c(z)).collect())
}

fn matrix_json(m: &ComplexMatrix) -> Value {
    Value::Array(
        (0..m.rows())
            .map(|i| Value::Array((0..m.cols()).map(|j| c(m[(i, j)])).collect()))
            .collect(),
    )
}

/// A validated scenario with all overrides resolved.
#[derive(Debug, Clone)]
pub struct ResolvedScenario {
    pub file: ScenarioFile,
    pub tol: f64,
    pub seed: u64,
    pub digest: String,
}

fn parse_tol(raw: &str, source: &str) -> Result<f64, RunError> {
    let t: f64 = raw
        .trim()
        .parse()
        .map_err(|_| RunError::Input(format!("{source}: `{raw}` is not a number")))?;
    check_tol(t, source)
}

fn check_tol(t: f64, source: &str) -> Result<f64, RunError> {
    if t.is_finite() && t > 0.0 {
        Ok(t)
    } else {
        Err(RunError::Input(format!(
            "{source}: tolerance must be positive and finite, got {t}"
        )))
    }
}

/// Parses and validates scenario bytes; `tol` precedence is flag, file,
/// environment, default.
pub fn load_scenario(bytes: &[u8], flags: &RunFlags) -> Result<ResolvedScenario, RunError> {
    let file: ScenarioFile = serde_json::from_slice(bytes).map_err(|e| RunError::Input(e.to_string()))?;
    validate(&file)?;
    let tol = match (flags.tol, file.tol, &flags.env_tol) {
        (Some(t), _, _) => check_tol(t, "--tol")?,
        (None, Some(t), _) => check_tol(t, "field `tol`")?,
        (None, None, Some(raw)) => parse_tol(raw, TOL_ENV)?,
        (None, None, None) => DEFAULT_TOL,
    };
    let seed = flags.seed.or(file.seed).unwrap_or(0);
    let digest = hex::encode(Sha256::digest(bytes));
    Ok(ResolvedScenario {
        file,
        tol,
        seed,
        digest,
    })
}

fn require<'a, T>(v: &'a Option<T>, field: &str, task: Task) -> Result<&'a T, RunError> {
    v.as_ref()
        .ok_or_else(|| RunError::Input(format!("field `{field}` is required for task `{}`", task.name())))
}

fn validate(f: &ScenarioFile) -> Result<(), RunError> {
    let task = f.task;
    let needs_states = !matches!(task, Task::FourState);
    if needs_states && f.states.is_empty() {
        return Err(RunError::Input(format!(
            "field `states` is required for task `{}`",
            task.name()
        )));
    }
    match task {
        Task::Feasibility | Task::MaxP | Task::BuildMachine | Task::EprRun | Task::CompositeBound | Task::FourState => {
            if task != Task::FourState || f.copies.is_some() {
                let m = *require(&f.copies, "M", task)?;
                if m < 2 {
                    return Err(RunError::Input(format!("field `M`: need at least 2 copies, got {m}")));
                }
            }
        }
        Task::DiscriminationLimit => {
            let list = require(&f.copies_list, "M_list", task)?;
            if list.is_empty() || list.iter().any(|&m| m < 2) || list.windows(2).any(|w| w[0] >= w[1]) {
                return Err(RunError::Input(
                    "field `M_list`: must be strictly ascending with every entry ≥ 2".into(),
                ));
            }
        }
    }
    if task == Task::Feasibility {
        require(&f.p, "p", task)?;
    }
    if task == Task::FourState {
        require(&f.theta, "theta", task)?;
    }
    if let Some(p) = &f.p {
        if let Some((i, x)) = p.iter().enumerate().find(|(_, x)| !(0.0..=1.0).contains(*x)) {
            return Err(RunError::Input(format!("field `p[{i}]`: {x} outside [0, 1]")));
        }
        let expected = match task {
            Task::CompositeBound | Task::DiscriminationLimit => None,
            _ => Some(f.states.len()),
        };
        if let Some(n) = expected {
            if p.len() != n {
                return Err(RunError::Input(format!(
                    "field `p`: {} entries for {n} states",
                    p.len()
                )));
            }
        }
    }
    if let Some(t) = f.theta {
        if !t.is_finite() {
            return Err(RunError::Input("field `theta`: must be finite".into()));
        }
    }
    if let Some(i) = f.states.iter().position(|s| s.is_empty()) {
        return Err(RunError::Input(format!("field `states[{i}]`: empty vector")));
    }
    if f.states.iter().any(|s| s.len() != f.states[0].len()) {
        return Err(RunError::Input("field `states`: vectors differ in length".into()));
    }
    if matches!(task, Task::CompositeBound | Task::DiscriminationLimit) && f.states.len() != 1 {
        return Err(RunError::Input(format!(
            "field `states`: task `{}` takes exactly one bipartite vector",
            task.name()
        )));
    }
    if task == Task::EprRun && f.states[0].len() != 2 {
        return Err(RunError::Input(
            "field `states`: task `epr-run` clones qubit states".into(),
        ));
    }
    Ok(())
}

/// Loads `states[i]`, rejecting vectors off unit norm by more than
/// [`NORM_REJECT_TOL`] and renormalizing (with a warning) beyond [`NORM_WARN_TOL`].
fn load_vector(raw: &[[f64; 2]], index: usize) -> Result<Vec<C64>, RunError> {
    let mut v: Vec<C64> = raw.iter().map(|&[re, im]| C64::new(re, im)).collect();
    if v.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(RunError::Input(format!(
            "field `states[{index}]`: non-finite amplitude"
        )));
    }
    let n = norm(&v);
    let dev = (n - 1.0).abs();
    if dev > NORM_REJECT_TOL {
        return Err(RunError::Input(format!("field `states[{index}]`: norm {n} is not 1")));
    }
    if dev > NORM_WARN_TOL {
        eprintln!("warning: states[{index}] has norm {n}; renormalized");
        v.iter_mut().for_each(|z| *z /= n);
    }
    Ok(v)
}

fn load_states(f: &ScenarioFile) -> Result<Vec<StateVector>, RunError> {
    let d = f.states[0].len();
    let layout = HilbertLayout::single("B", d).map_err(|e| RunError::Input(e.to_string()))?;
    f.states
        .iter()
        .enumerate()
        .map(|(i, raw)| {
            let v = load_vector(raw, i)?;
            StateVector::new(layout.clone(), v).map_err(|e| RunError::Input(format!("field `states[{i}]`: {e}")))
        })
        .collect()
}

fn load_bipartite(f: &ScenarioFile) -> Result<StateVector, RunError> {
    let v = load_vector(&f.states[0], 0)?;
    let dims = match &f.dims {
        Some(d) => d.clone(),
        None => {
            let root = (v.len() as f64).sqrt().round() as usize;
            if root * root != v.len() {
                return Err(RunError::Input(format!(
                    "field `dims`: required when the vector length {} is not a square",
                    v.len()
                )));
            }
            vec![root, root]
        }
    };
    if dims.len() != 2 || dims.iter().product::<usize>() != v.len() {
        return Err(RunError::Input(format!(
            "field `dims`: {dims:?} does not factor length {}",
            v.len()
        )));
    }
    let layout = HilbertLayout::new([("A", dims[0]), ("B", dims[1])])
        .map_err(|e| RunError::Input(format!("field `dims`: {e}")))?;
    StateVector::new(layout, v).map_err(|e| RunError::Input(format!("field `states[0]`: {e}")))
}

fn job_input(f: &ScenarioFile) -> Result<(Vec<StateVector>, usize), RunError> {
    let states = load_states(f)?;
    Ok((states, f.copies.expect("validated")))
}

fn pmax_or_explicit(f: &ScenarioFile, states: &[StateVector], m: usize, tol: f64) -> Result<Vec<f64>, RunError> {
    match &f.p {
        Some(p) => Ok(p.clone()),
        None => Ok(vec![
            max_uniform_probability(states, m, tol).map_err(numeric)?;
            states.len()
        ]),
    }
}

type Outcome = (Value, Vec<Check>);

fn task_feasibility(s: &ResolvedScenario) -> Result<Outcome, RunError> {
    let (states, m) = job_input(&s.file)?;
    let job =
        CloneJob::new(states, m, s.file.p.clone().expect("validated")).map_err(|e| RunError::Input(e.to_string()))?;
    let fr = feasibility(&job, DEFAULT_PSD_TOL);
    let eig = eigenvalues_hermitian(&fr.residual).map_err(numeric)?;
    let outputs = json!({
        "feasible": fr.feasible,
        "min_eigenvalue": fr.min_eigenvalue,
        "residual_eigenvalues": eig,
        "residual": matrix_json(&fr.residual),
    });
    Ok((
        outputs,
        vec![Check::at_least("residual_psd", fr.min_eigenvalue, -DEFAULT_PSD_TOL)],
    ))
}

fn task_max_p(s: &ResolvedScenario) -> Result<Outcome, RunError> {
    let (states, m) = job_input(&s.file)?;
    let rank = gram_rank(&states).map_err(numeric)?;
    let p = max_uniform_probability(&states, m, s.tol).map_err(numeric)?;
    let at = feasibility(
        &CloneJob::uniform(states.clone(), m, p).map_err(numeric)?,
        DEFAULT_PSD_TOL,
    );
    let mut checks = vec![Check::at_least(
        "boundary_feasible",
        at.min_eigenvalue,
        -DEFAULT_PSD_TOL,
    )];
    let above = (p + 2.0 * s.tol).min(1.0);
    if rank == states.len() && above > p {
        let over = feasibility(&CloneJob::uniform(states, m, above).map_err(numeric)?, DEFAULT_PSD_TOL);
        checks.push(Check {
            name: "boundary_tight".into(),
            pass: !over.feasible,
            value: over.min_eigenvalue,
            tolerance: -DEFAULT_PSD_TOL,
        });
    }
    let outputs = json!({
        "gram_rank": rank,
        "p_max": p,
        "min_eigenvalue_at_p_max": at.min_eigenvalue,
    });
    Ok((outputs, checks))
}

fn task_build_machine(s: &ResolvedScenario) -> Result<Outcome, RunError> {
    let (states, m) = job_input(&s.file)?;
    let p = pmax_or_explicit(&s.file, &states, m, s.tol)?;
    let job = CloneJob::new(states, m, p.clone()).map_err(|e| RunError::Input(e.to_string()))?;
    let machine = build_machine(&job, DEFAULT_PSD_TOL).map_err(numeric)?;
    let trips: Vec<(f64, f64)> = (0..job.len()).map(|i| machine.round_trip(i)).collect();
    let prob_err = trips
        .iter()
        .zip(&p)
        .map(|((q, _), p)| (q - p).abs())
        .fold(0.0, f64::max);
    let min_fid = trips
        .iter()
        .zip(&p)
        .filter(|(_, &p)| p > 0.0)
        .map(|((_, f), _)| *f)
        .fold(1.0, f64::min);
    let failure_gram = crate::linalg::gram_matrix(machine.failure_states()).map_err(numeric)?;
    let outputs = json!({
        "dimension": machine.layout().total_dim(),
        "layout": machine.layout().to_string(),
        "probabilities": p,
        "success_probabilities": trips.iter().map(|t| t.0).collect::<Vec<_>>(),
        "fidelities": trips.iter().map(|t| t.1).collect::<Vec<_>>(),
        "unitarity_error": machine.unitarity_error(),
        "image_error": machine.image_error(),
        "failure_gram": matrix_json(&failure_gram),
    });
    let checks = vec![
        Check::at_most("unitarity", machine.unitarity_error(), pqcm::MACHINE_UNITARITY_TOL),
        Check::at_most("image", machine.image_error(), pqcm::MACHINE_IMAGE_TOL),
        Check::at_least("success_fidelity", min_fid, 1.0 - s.tol),
        Check::at_most("branch_probability", prob_err, s.tol),
    ];
    Ok((outputs, checks))
}

fn task_epr_run(s: &ResolvedScenario) -> Result<Outcome, RunError> {
    let (states, m) = job_input(&s.file)?;
    let p = pmax_or_explicit(&s.file, &states, m, s.tol)?;
    let job = CloneJob::new(states, m, p).map_err(|e| RunError::Input(e.to_string()))?;
    let machine = build_machine(&job, DEFAULT_PSD_TOL).map_err(numeric)?;
    let theta = s.file.theta.unwrap_or(DEFAULT_SECOND_BASIS);
    let bases = vec![MeasurementBasis::z(), MeasurementBasis::new(theta)];
    let scenario = EprScenario::new(machine.clone(), bases.clone(), true).map_err(numeric)?;
    let report = epr::run_scenario(&scenario).map_err(numeric)?;
    let ops: Vec<AliceOperation> = bases.iter().map(|b| AliceOperation::Measure(*b)).collect();
    let trials = s.file.trials.unwrap_or(DEFAULT_TRIALS);
    let survey = epr::no_signalling_survey(&machine, &ops, trials, s.seed).map_err(numeric)?;
    let runs: Vec<Value> = report
        .runs
        .iter()
        .map(|r| {
            let post = r.postselected.as_ref().expect("postselect requested");
            json!({
                "theta": r.basis.theta,
                "outcome_probabilities": r.outcome_ensemble.iter().map(|o| o.0).collect::<Vec<_>>(),
                "success_probability": post.success_probability,
                "joint_success_probabilities": post.per_outcome.iter().map(|o| o.0).collect::<Vec<_>>(),
                "postselected_rho_bc": post.renormalized.as_ref().map(|d| matrix_json(d.matrix())),
            })
        })
        .collect();
    let outputs = json!({
        "bases": runs,
        "pairwise_trace_distances": report.pairwise_distances.iter().map(|t| json!([t.0, t.1, t.2])).collect::<Vec<_>>(),
        "max_trace_distance": report.max_distance,
        "seed": s.seed,
        "trials": trials,
        "survey_operations": survey.operations,
        "survey_max_trace_distance": survey.max_trace_distance,
        "survey_success_spread": survey.success_probability_spread,
    });
    let checks = vec![
        Check::at_most("no_signalling_bases", report.max_distance, epr::NO_SIGNALLING_TOL),
        Check::at_most(
            "no_signalling_survey",
            survey.max_trace_distance,
            epr::NO_SIGNALLING_TOL,
        ),
        Check::at_most(
            "success_probability_spread",
            survey.success_probability_spread,
            epr::NO_SIGNALLING_TOL,
        ),
    ];
    Ok((outputs, checks))
}

fn task_four_state(s: &ResolvedScenario) -> Result<Outcome, RunError> {
    let theta = s.file.theta.expect("validated");
    let m = s.file.copies.unwrap_or(2);
    let r = epr::four_state_obstruction(theta, m, s.tol).map_err(|e| match e {
        LabError::DegenerateAngle(_) => RunError::Input(format!("field `theta`: {e}")),
        other => numeric(other),
    })?;
    let min_pair = r.pair_probabilities.iter().map(|t| t.2).fold(f64::INFINITY, f64::min);
    let outputs = json!({
        "theta": theta,
        "M": m,
        "gram_rank": r.gram_rank,
        "p_max": r.max_uniform_probability,
        "pair_p_max": r.pair_probabilities.iter().map(|t| json!([t.0, t.1, t.2])).collect::<Vec<_>>(),
    });
    let checks = vec![
        Check {
            name: "gram_rank".into(),
            pass: r.gram_rank == 2,
            value: r.gram_rank as f64,
            tolerance: 2.0,
        },
        Check::at_most("four_state_p_max", r.max_uniform_probability, 1e-6),
        Check {
            name: "pairs_clonable".into(),
            pass: min_pair > 0.0,
            value: min_pair,
            tolerance: 0.0,
        },
    ];
    Ok((outputs, checks))
}

fn policy_of(f: &ScenarioFile) -> ProbabilityPolicy {
    f.p.clone()
        .map_or(ProbabilityPolicy::MaxUniform, ProbabilityPolicy::Explicit)
}

fn task_composite_bound(s: &ResolvedScenario) -> Result<Outcome, RunError> {
    let input = load_bipartite(&s.file)?;
    let m = s.file.copies.expect("validated");
    let sc = composite::build_composite(&input, m, &policy_of(&s.file)).map_err(numeric)?;
    let xb = x_basis(&sc).map_err(numeric)?;
    let bounds = check_all_pairs(&sc).map_err(numeric)?;
    let min_slack = bounds.iter().map(|b| b.slack).fold(f64::INFINITY, f64::min);
    let v = &sc.uniform.v_states;
    let outputs = json!({
        "rank": sc.rank(),
        "M": m,
        "probabilities": sc.probabilities(),
        "v_states": v.iter().map(|s| vector_json(s.amplitudes())).collect::<Vec<_>>(),
        "postselection_probability": sc.postselected().map_or(0.0, |o| o.probability),
        "x_completeness": xb.completeness,
        "x_decomposition_residual": xb.decomposition_residual,
        "bounds": bounds.iter().map(|b| json!({
            "pair": [b.pair.0, b.pair.1],
            "lhs": b.lhs,
            "overlap_v": b.overlap_v,
            "overlap_x": b.overlap_x,
            "rhs": b.rhs,
            "slack": b.slack,
            "satisfied": b.satisfied,
        })).collect::<Vec<_>>(),
    });
    let mut checks = vec![
        Check::at_most(
            "x_completeness",
            (xb.completeness - 1.0).abs(),
            composite::DECOMPOSITION_TOL,
        ),
        Check::at_most(
            "x_decomposition",
            xb.decomposition_residual,
            composite::DECOMPOSITION_TOL,
        ),
    ];
    if !bounds.is_empty() {
        checks.push(Check::at_least("bound_slack", min_slack, -composite::BOUND_SLACK_TOL));
    }
    Ok((outputs, checks))
}

fn task_discrimination_limit(s: &ResolvedScenario) -> Result<Outcome, RunError> {
    let input = load_bipartite(&s.file)?;
    let list = s.file.copies_list.clone().expect("validated");
    let rows = discrimination_limit(&input, &policy_of(&s.file), &list).map_err(numeric)?;
    let mut worst_increase: f64 = 0.0;
    let mut pairs: Vec<(usize, usize)> = rows.iter().map(|r| r.pair).collect();
    pairs.sort_unstable();
    pairs.dedup();
    for pair in &pairs {
        let gaps: Vec<f64> = rows.iter().filter(|r| r.pair == *pair).map(|r| r.gap).collect();
        for w in gaps.windows(2) {
            worst_increase = worst_increase.max(w[1] - w[0]);
        }
    }
    // The gap is (1 − s) s^M / (1 − s^M), itself at most s^M.
    let uniform = crate::state::uniform_form(&input, &["A"]).map_err(numeric)?;
    let m_last = *list.last().expect("validated nonempty");
    let last_excess = rows
        .iter()
        .filter(|r| r.copies == m_last)
        .map(|r| {
            r.gap
                - uniform.v_states[r.pair.0]
                    .overlap(&uniform.v_states[r.pair.1])
                    .powi(m_last as i32)
        })
        .fold(f64::NEG_INFINITY, f64::max);
    let outputs = json!({
        "rows": rows.iter().map(|r| json!({
            "M": r.copies,
            "pair": [r.pair.0, r.pair.1],
            "rhs": r.rhs,
            "limit_rhs": r.limit_rhs,
            "gap": r.gap,
        })).collect::<Vec<_>>(),
    });
    let mut checks = vec![Check::at_most("gap_non_increasing", worst_increase, s.tol)];
    if last_excess.is_finite() {
        checks.push(Check::at_most("final_gap_below_overlap_power", last_excess, s.tol));
    }
    Ok((outputs, checks))
}

/// Runs an already loaded scenario; digest and task are echoed in the report.
pub fn execute(s: &ResolvedScenario) -> Result<Report, RunError> {
    let start = Instant::now();
    let (outputs, checks) = match s.file.task {
        Task::Feasibility => task_feasibility(s),
        Task::MaxP => task_max_p(s),
        Task::BuildMachine => task_build_machine(s),
        Task::EprRun => task_epr_run(s),
        Task::FourState => task_four_state(s),
        Task::CompositeBound => task_composite_bound(s),
        Task::DiscriminationLimit => task_discrimination_limit(s),
    }?;
    Ok(Report {
        task: s.file.task.name().into(),
        inputs_digest: s.digest.clone(),
        version: env!("CARGO_PKG_VERSION").into(),
        outputs,
        checks,
        wall_time: start.elapsed(),
    })
}

/// Loads, runs and emits one scenario file; returns the exit code.
pub fn run_file(path: &Path, out: Option<&Path>, flags: &RunFlags) -> i32 {
    let label = path.display();
    let bytes = match fs::read(path) {
        Ok(b) => b,
        Err(e) => {
            eprintln!("{label}: input error: {e}");
            return 1;
        }
    };
    let result = load_scenario(&bytes, flags).and_then(|s| execute(&s));
    let report = match result {
        Ok(r) => r,
        Err(e) => {
            eprintln!("{label}: {e}");
            return e.exit_code();
        }
    };
    eprintln!("{label}: wall time {:.3} s", report.wall_time.as_secs_f64());
    let bytes = match emit(&report, flags.format) {
        Ok(b) => b,
        Err(e) => {
            eprintln!("{label}: {e}");
            return e.exit_code();
        }
    };
    let written = match out {
        Some(p) => fs::write(p, &bytes),
        None => {
            use std::io::Write;
            std::io::stdout().lock().write_all(&bytes)
        }
    };
    if let Err(e) = written {
        eprintln!("{label}: cannot write report: {e}");
        return 1;
    }
    for c in report.checks.iter().filter(|c| !c.pass) {
        eprintln!(
            "{label}: check `{}` failed: value {:e}, tolerance {:e}",
            c.name, c.value, c.tolerance
        );
    }
    if report.passed() {
        0
    } else {
        2
    }
}

/// Entry point behind `pqcm-lab run`. A directory runs every `*.json` inside
/// it in filename order, `flags.jobs` at a time.
pub fn run(scenario: &Path, flags: &RunFlags) -> i32 {
    if !scenario.is_dir() {
        return run_file(scenario, flags.out.as_deref(), flags);
    }
    let mut files: Vec<PathBuf> = match fs::read_dir(scenario) {
        Ok(rd) => rd
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect(),
        Err(e) => {
            eprintln!("{}: input error: {e}", scenario.display());
            return 1;
        }
    };
    files.sort();
    if let Some(dir) = &flags.out {
        if let Err(e) = fs::create_dir_all(dir) {
            eprintln!("{}: input error: {e}", dir.display());
            return 1;
        }
    }
    let targets: Vec<Option<PathBuf>> = files
        .iter()
        .map(|f| {
            flags.out.as_ref().map(|dir| {
                let stem = f.file_stem().unwrap_or_default().to_string_lossy();
                dir.join(format!("{stem}.{}", flags.format.extension()))
            })
        })
        .collect();
    let run_all = || -> Vec<i32> {
        use rayon::prelude::*;
        if flags.out.is_some() {
            files
                .par_iter()
                .zip(&targets)
                .map(|(f, t)| run_file(f, t.as_deref(), flags))
                .collect()
        } else {
            // Stdout keeps file order.
            files.iter().map(|f| run_file(f, None, flags)).collect()
        }
    };
    let codes = match rayon::ThreadPoolBuilder::new().num_threads(flags.jobs.max(1)).build() {
        Ok(pool) => pool.install(run_all),
        Err(e) => {
            eprintln!("cannot start worker pool: {e}");
            return 1;
        }
    };
    codes.into_iter().max().unwrap_or(0)
}
