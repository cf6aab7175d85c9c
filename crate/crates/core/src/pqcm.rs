//! Probabilistic exact cloning machines.
//!
//! A set `{|ψ_i⟩}` can be mapped as
//! `|ψ_i⟩|blank⟩|P₀⟩ → √p_i |ψ_i⟩^{⊗M}|P₀⟩ + √(1−p_i)|Φ_i⟩|P₁⟩` by a single
//! unitary iff `X⁽¹⁾ − √P X⁽ᴹ⁾ √P ⪰ 0`, where `X⁽¹⁾_ij = ⟨ψ_i|ψ_j⟩`,
//! `X⁽ᴹ⁾_ij = ⟨ψ_i|ψ_j⟩^M` and `√P = diag(√p_i)`. The residual is the Gram
//! matrix of the unnormalized failure vectors `√(1−p_i)|Φ_i⟩`, so factoring it
//! yields the failure states and a tandem basis completion yields the unitary.
//!
//! The first clone reuses the input register `B`; the register `C` holds the
//! remaining `M − 1` blanks and `D` is the two-level probe.

use crate::error::{LabError, Result};
use crate::linalg::{
    self, apply_local, max_abs_diff, norm, numerical_rank, psd_factor, unitarity_deviation, unitary_completion,
    ComplexMatrix, HilbertLayout, C64, DEFAULT_PSD_TOL, ONE, ZERO,
};
use crate::state::{gram_of_states, tensor_power, StateVector, ZERO_BRANCH_TOL};

/// Absolute bracket width at which probability bisection stops.
pub const DEFAULT_BISECTION_TOL: f64 = 1e-9;
pub const MAX_BISECTION_ITERS: usize = 60;
/// Residual eigenvalue floor accepted while searching for the boundary.
///
/// Kept at round-off level so the returned `p` does not overshoot the exact
/// boundary by `DEFAULT_PSD_TOL / (1 − s^M)` for nearly parallel states.
pub const BOUNDARY_PSD_TOL: f64 = 1e-13;

/// Componentwise accuracy required of a synthesized machine on its job states.
pub const MACHINE_IMAGE_TOL: f64 = 1e-9;
pub const MACHINE_UNITARITY_TOL: f64 = 1e-10;

pub const PROBE_LABEL: &str = "D";

/// Label of the `k`-th blank register (1-based).
pub fn clone_label(k: usize) -> String {
    format!("C{k}")
}

/// A set of states to clone `copies` times with per-state success probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct CloneJob {
    states: Vec<StateVector>,
    copies: usize,
    probabilities: Vec<f64>,
}

impl CloneJob {
    pub fn new(states: Vec<StateVector>, copies: usize, probabilities: Vec<f64>) -> Result<Self> {
        if states.is_empty() {
            return Err(LabError::InvalidJob("empty state set".into()));
        }
        if copies < 2 {
            return Err(LabError::InvalidJob(format!("copy count {copies} < 2")));
        }
        if probabilities.len() != states.len() {
            return Err(LabError::InvalidJob(format!(
                "{} probabilities for {} states",
                probabilities.len(),
                states.len()
            )));
        }
        if let Some(p) = probabilities.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(LabError::InvalidJob(format!("probability {p} outside [0, 1]")));
        }
        if states.iter().any(|s| s.layout() != states[0].layout()) {
            return Err(LabError::MixedLayouts);
        }
        Ok(Self {
            states,
            copies,
            probabilities,
        })
    }

    pub fn uniform(states: Vec<StateVector>, copies: usize, p: f64) -> Result<Self> {
        let k = states.len();
        Self::new(states, copies, vec![p; k])
    }

    pub fn states(&self) -> &[StateVector] {
        &self.states
    }

    pub fn copies(&self) -> usize {
        self.copies
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probabilities
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// Dimension of the system being cloned.
    pub fn dim(&self) -> usize {
        self.states[0].dim()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeasibilityResult {
    /// `X⁽¹⁾ − √P X⁽ᴹ⁾ √P`.
    pub residual: ComplexMatrix,
    pub min_eigenvalue: f64,
    pub feasible: bool,
}

/// `X⁽¹⁾` and its entrywise `M`-th power.
pub fn gram_pair(states: &[StateVector], copies: usize) -> Result<(ComplexMatrix, ComplexMatrix)> {
    let x1 = gram_of_states(states)?;
    let k = x1.rows();
    let mut xm = ComplexMatrix::zeros(k, k);
    for i in 0..k {
        for j in 0..k {
            xm[(i, j)] = x1[(i, j)].powu(copies as u32);
        }
    }
    Ok((x1, xm))
}

fn residual(x1: &ComplexMatrix, xm: &ComplexMatrix, probabilities: &[f64]) -> ComplexMatrix {
    let k = x1.rows();
    let roots: Vec<f64> = probabilities.iter().map(|p| p.sqrt()).collect();
    let mut b = ComplexMatrix::zeros(k, k);
    for i in 0..k {
        for j in 0..k {
            b[(i, j)] = x1[(i, j)] - xm[(i, j)] * (roots[i] * roots[j]);
        }
    }
    b.hermitian_part()
}

fn residual_min_eig(b: &ComplexMatrix) -> f64 {
    linalg::min_eig_hermitian(b).expect("residual is Hermitian by construction")
}

/// PSD test of the cloning residual for the job's probability vector.
pub fn feasibility(job: &CloneJob, tol: f64) -> FeasibilityResult {
    let (x1, xm) = gram_pair(&job.states, job.copies).expect("job states share a layout");
    let residual = residual(&x1, &xm, &job.probabilities);
    let min_eigenvalue = residual_min_eig(&residual);
    FeasibilityResult {
        feasible: min_eigenvalue >= -tol,
        residual,
        min_eigenvalue,
    }
}

/// Numerical rank of the Gram matrix of `states`.
pub fn gram_rank(states: &[StateVector]) -> Result<usize> {
    numerical_rank(&gram_of_states(states)?, DEFAULT_PSD_TOL)
}

/// Largest `p` whose uniform job is PSD-feasible, by bisection on `[0, 1]`.
///
/// This does not look at the rank of `X⁽¹⁾`; for dependent sets it collapses
/// towards zero on its own, with a remainder set by `psd_tol`.
pub fn uniform_boundary_bisection(x1: &ComplexMatrix, xm: &ComplexMatrix, width: f64, psd_tol: f64) -> f64 {
    let k = x1.rows();
    let feasible = |p: f64| residual_min_eig(&residual(x1, xm, &vec![p; k])) >= -psd_tol;
    if feasible(1.0) {
        return 1.0;
    }
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    for _ in 0..MAX_BISECTION_ITERS {
        if hi - lo <= width {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if feasible(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

/// Maximal uniform success probability for cloning `states` into `copies`
/// copies, to absolute precision `tol`. Zero for linearly dependent sets.
pub fn max_uniform_probability(states: &[StateVector], copies: usize, tol: f64) -> Result<f64> {
    if gram_rank(states)? < states.len() {
        return Ok(0.0);
    }
    let (x1, xm) = gram_pair(states, copies)?;
    Ok(uniform_boundary_bisection(&x1, &xm, tol, BOUNDARY_PSD_TOL))
}

/// An explicit cloning unitary on `B ⊗ C₁ ⊗ … ⊗ C_{M−1} ⊗ D`.
#[derive(Debug, Clone)]
pub struct MachineUnitary {
    job: CloneJob,
    layout: HilbertLayout,
    unitary: ComplexMatrix,
    failure_states: Vec<Vec<C64>>,
    probe_projectors: [ComplexMatrix; 2],
}

impl MachineUnitary {
    pub fn job(&self) -> &CloneJob {
        &self.job
    }

    /// Dimension of the cloned system.
    pub fn dim(&self) -> usize {
        self.job.dim()
    }

    pub fn copies(&self) -> usize {
        self.job.copies
    }

    /// `B ⊗ C₁ ⊗ … ⊗ C_{M−1} ⊗ D`.
    pub fn layout(&self) -> &HilbertLayout {
        &self.layout
    }

    pub fn unitary(&self) -> &ComplexMatrix {
        &self.unitary
    }

    /// Normalized `|Φ_i⟩` on the clone register `B ⊗ C`; the zero vector
    /// where `p_i = 1` and no failure branch exists.
    pub fn failure_states(&self) -> &[Vec<C64>] {
        &self.failure_states
    }

    /// `|P₀⟩⟨P₀|` and `|P₁⟩⟨P₁|` on the probe.
    pub fn probe_projectors(&self) -> &[ComplexMatrix; 2] {
        &self.probe_projectors
    }

    /// Dimension of the clone register `B ⊗ C`, i.e. `d^M`.
    pub fn clone_dim(&self) -> usize {
        self.dim().pow(self.copies() as u32)
    }

    /// `|ψ⟩|0…0⟩|P₀⟩` for a vector on the cloned system.
    pub fn embed_input(&self, psi: &[C64]) -> Vec<C64> {
        let mut blank_probe = vec![ZERO; self.clone_dim() / self.dim() * 2];
        blank_probe[0] = ONE;
        linalg::tensor_vec(psi, &blank_probe)
    }

    /// `√p_i |ψ_i⟩^{⊗M}|P₀⟩ + √(1−p_i)|Φ_i⟩|P₁⟩`.
    pub fn target_output(&self, i: usize) -> Vec<C64> {
        let p = self.job.probabilities[i];
        let clones = tensor_power(self.job.states[i].amplitudes(), self.copies());
        let fail_amp = (1.0 - p).max(0.0).sqrt();
        let mut out = vec![ZERO; 2 * self.clone_dim()];
        for (k, (c, f)) in clones.iter().zip(&self.failure_states[i]).enumerate() {
            out[2 * k] = c * p.sqrt();
            out[2 * k + 1] = f * fail_amp;
        }
        out
    }

    pub fn apply(&self, v: &[C64]) -> Vec<C64> {
        self.unitary.mul_vec(v)
    }

    /// Success-branch probability and fidelity with `|ψ_i⟩^{⊗M}` for job state `i`.
    pub fn round_trip(&self, i: usize) -> (f64, f64) {
        let out = self.apply(&self.embed_input(self.job.states[i].amplitudes()));
        let success: Vec<C64> = out.iter().step_by(2).copied().collect();
        let prob = success.iter().map(|z| z.norm_sqr()).sum::<f64>();
        let clones = tensor_power(self.job.states[i].amplitudes(), self.copies());
        let fidelity = if prob > 0.0 {
            linalg::inner(&clones, &success).norm() / prob.sqrt()
        } else {
            0.0
        };
        (prob, fidelity)
    }

    /// Largest componentwise error of `U` on the job's input vectors.
    pub fn image_error(&self) -> f64 {
        (0..self.job.len())
            .map(|i| {
                let got = self.apply(&self.embed_input(self.job.states[i].amplitudes()));
                max_abs_diff(&got, &self.target_output(i))
            })
            .fold(0.0, f64::max)
    }

    pub fn unitarity_error(&self) -> f64 {
        unitarity_deviation(&self.unitary)
    }
}

struct MachineParts {
    layout: HilbertLayout,
    failure_states: Vec<Vec<C64>>,
    outputs: Vec<Vec<C64>>,
}

fn machine_layout(d: usize, m: usize) -> Result<HilbertLayout> {
    let mut parts: Vec<(String, usize)> = vec![("B".into(), d)];
    parts.extend((1..m).map(|k| (clone_label(k), d)));
    parts.push((PROBE_LABEL.into(), 2));
    HilbertLayout::new(parts)
}

fn machine_parts(job: &CloneJob, tol: f64) -> Result<MachineParts> {
    let fr = feasibility(job, tol);
    if !fr.feasible {
        return Err(LabError::Infeasible {
            min_eigenvalue: fr.min_eigenvalue,
        });
    }
    if gram_rank(&job.states)? < job.len() {
        return Err(LabError::DependentInputs);
    }
    let d = job.dim();
    let m = job.copies;
    let clone_dim = d.pow(m as u32);
    let total = 2 * clone_dim;
    let factors = psd_factor(&fr.residual, tol)?;

    // Failure components occupy the first K basis vectors of B ⊗ C.
    let failure_states: Vec<Vec<C64>> = factors
        .iter()
        .map(|f| {
            let mut phi = vec![ZERO; clone_dim];
            phi[..f.len()].copy_from_slice(f);
            let n = norm(&phi);
            if n * n > tol {
                phi.iter_mut().for_each(|z| *z /= n);
            } else {
                phi.iter_mut().for_each(|z| *z = ZERO);
            }
            phi
        })
        .collect();

    let outputs: Vec<Vec<C64>> = (0..job.len())
        .map(|i| {
            // Built from the raw factor so the Gram equality does not depend on
            // the normalization above.
            let mut out = vec![ZERO; total];
            let clones = tensor_power(job.states[i].amplitudes(), m);
            let sp = job.probabilities[i].sqrt();
            for (k, c) in clones.iter().enumerate() {
                out[2 * k] = c * sp;
            }
            for (k, f) in factors[i].iter().enumerate() {
                out[2 * k + 1] = *f;
            }
            out
        })
        .collect();
    Ok(MachineParts {
        layout: machine_layout(d, m)?,
        failure_states,
        outputs,
    })
}

/// Synthesizes the cloning unitary for a feasible job of linearly independent states.
pub fn build_machine(job: &CloneJob, tol: f64) -> Result<MachineUnitary> {
    let parts = machine_parts(job, tol)?;
    let total = parts.layout.total_dim();
    let p0 = [ONE, ZERO];
    let p1 = [ZERO, ONE];
    let mut machine = MachineUnitary {
        job: job.clone(),
        layout: parts.layout,
        unitary: ComplexMatrix::identity(total),
        failure_states: parts.failure_states,
        probe_projectors: [ComplexMatrix::outer(&p0, &p0), ComplexMatrix::outer(&p1, &p1)],
    };
    let inputs: Vec<Vec<C64>> = job.states.iter().map(|s| machine.embed_input(s.amplitudes())).collect();
    machine.unitary = unitary_completion(&inputs, &parts.outputs, total)?;

    let image = machine.image_error();
    let unitarity = machine.unitarity_error();
    if image > MACHINE_IMAGE_TOL || unitarity > MACHINE_UNITARITY_TOL {
        return Err(LabError::GramMismatch {
            deviation: image.max(unitarity),
        });
    }
    Ok(machine)
}

/// The cloning map restricted to inputs `|ψ⟩|blank⟩|P₀⟩` with `|ψ⟩` in the
/// span of the job states, stored as a `2d^M × d` matrix.
///
/// Agrees with every [`MachineUnitary`] for the same job on that span, and
/// stays affordable when `d^M` is too large for a dense unitary.
#[derive(Debug, Clone)]
pub struct MachineIsometry {
    job: CloneJob,
    layout: HilbertLayout,
    map: ComplexMatrix,
    failure_states: Vec<Vec<C64>>,
}

impl MachineIsometry {
    pub fn job(&self) -> &CloneJob {
        &self.job
    }

    pub fn dim(&self) -> usize {
        self.job.dim()
    }

    pub fn copies(&self) -> usize {
        self.job.copies
    }

    pub fn layout(&self) -> &HilbertLayout {
        &self.layout
    }

    pub fn map(&self) -> &ComplexMatrix {
        &self.map
    }

    pub fn failure_states(&self) -> &[Vec<C64>] {
        &self.failure_states
    }

    /// Output for a single-system input; norm is lost outside the span.
    pub fn apply(&self, psi: &[C64]) -> Vec<C64> {
        self.map.mul_vec(psi)
    }

    /// Same contract as [`apply_and_postselect`]; the target's reduced state
    /// must be supported on the span of the job states.
    pub fn apply_and_postselect(&self, global_state: &StateVector, target_label: &str) -> Result<PostselectionRun> {
        let layout = global_state.layout();
        let target = layout.position(target_label)?;
        let d = self.dim();
        if layout.subsystems()[target].dim != d {
            return Err(LabError::DimensionMismatch {
                expected: d,
                found: layout.subsystems()[target].dim,
            });
        }
        let extra = HilbertLayout::new(self.layout.subsystems()[1..].iter().map(|s| (s.label.clone(), s.dim)))?;
        let full = layout.concat(&extra)?;
        let rest = layout.complement(&[target]);
        let in_rest = layout.offsets(&rest);
        let in_target = layout.offsets(&[target]);
        let out_rest = full.offsets(&rest);
        let mut block = vec![target];
        block.extend(layout.len()..full.len());
        let out_block = full.offsets(&block);

        let amps = global_state.amplitudes();
        let mut out = vec![ZERO; full.total_dim()];
        for (&ri, &ro) in in_rest.iter().zip(&out_rest) {
            let psi: Vec<C64> = in_target.iter().map(|&t| amps[ri + t]).collect();
            for (&o, z) in out_block.iter().zip(self.map.mul_vec(&psi)) {
                out[ro + o] = z;
            }
        }
        let unconditional = StateVector::new(full, out)?;
        let outcomes = split_probe(&unconditional)?;
        Ok(PostselectionRun {
            unconditional,
            outcomes,
        })
    }
}

/// Builds the span-restricted cloning map `W = Σ_k |out_k⟩⟨ṽ_k|` with the dual
/// frame `ṽ_k` of the job states.
pub fn build_isometry(job: &CloneJob, tol: f64) -> Result<MachineIsometry> {
    let parts = machine_parts(job, tol)?;
    let inputs: Vec<Vec<C64>> = job.states.iter().map(|s| s.amplitudes().to_vec()).collect();
    let v = ComplexMatrix::from_columns(&inputs)?;
    let g = &v.adjoint() * &v;
    let dual = &v * &g.inverse()?;
    let outputs = ComplexMatrix::from_columns(&parts.outputs)?;
    let map = &outputs * &dual.adjoint();

    let image = (0..job.len())
        .map(|i| max_abs_diff(&map.mul_vec(&inputs[i]), &parts.outputs[i]))
        .fold(0.0, f64::max);
    let gram_dev = (&outputs.adjoint() * &outputs).max_abs_diff(&g);
    if image > MACHINE_IMAGE_TOL || gram_dev > MACHINE_IMAGE_TOL {
        return Err(LabError::GramMismatch {
            deviation: image.max(gram_dev),
        });
    }
    Ok(MachineIsometry {
        job: job.clone(),
        layout: parts.layout,
        map,
        failure_states: parts.failure_states,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    Success,
    Failure,
}

/// One probe outcome with the renormalized state of everything but the probe.
#[derive(Debug, Clone, PartialEq)]
pub struct PostselectionOutcome {
    pub branch: Branch,
    pub probability: f64,
    pub state: StateVector,
}

#[derive(Debug, Clone)]
pub struct PostselectionRun {
    /// Global state after the machine acted, probe included.
    pub unconditional: StateVector,
    /// Probe outcomes with nonzero probability, success first.
    pub outcomes: Vec<PostselectionOutcome>,
}

impl PostselectionRun {
    pub fn success(&self) -> Option<&PostselectionOutcome> {
        self.outcomes.iter().find(|o| o.branch == Branch::Success)
    }

    pub fn success_probability(&self) -> f64 {
        self.success().map_or(0.0, |o| o.probability)
    }
}

/// Unnormalized `(I ⊗ ⟨P_b|)|Ψ⟩` with the probe as the last subsystem.
pub(crate) fn project_probe(state: &StateVector, outcome: usize) -> Result<(HilbertLayout, Vec<C64>)> {
    let layout = state.layout();
    let pos = layout.position(PROBE_LABEL)?;
    if pos != layout.len() - 1 || layout.subsystems()[pos].dim != 2 {
        return Err(LabError::UnknownLabel(PROBE_LABEL.into()));
    }
    let rest = layout.restrict(&(0..pos).collect::<Vec<_>>());
    let amps = state.amplitudes().iter().skip(outcome).step_by(2).copied().collect();
    Ok((rest, amps))
}

/// Attaches blanks and probe to `target_label`, runs the machine and
/// postselects on the probe.
pub fn apply_and_postselect(
    machine: &MachineUnitary,
    global_state: &StateVector,
    target_label: &str,
) -> Result<PostselectionRun> {
    let layout = global_state.layout();
    let target = layout.position(target_label)?;
    let target_dim = layout.subsystems()[target].dim;
    if target_dim != machine.dim() {
        return Err(LabError::DimensionMismatch {
            expected: machine.dim(),
            found: target_dim,
        });
    }
    let m = machine.copies();
    let mut extra: Vec<(String, usize)> = (1..m).map(|k| (clone_label(k), machine.dim())).collect();
    extra.push((PROBE_LABEL.into(), 2));
    let extra = HilbertLayout::new(extra)?;
    let full = layout.concat(&extra)?;

    let mut blank_probe = vec![ZERO; extra.total_dim()];
    blank_probe[0] = ONE;
    let start = linalg::tensor_vec(global_state.amplitudes(), &blank_probe);
    let mut positions = vec![target];
    positions.extend(layout.len()..full.len());
    let out = apply_local(machine.unitary(), &start, &full, &positions)?;
    let unconditional = StateVector::new(full, out)?;
    let outcomes = split_probe(&unconditional)?;
    Ok(PostselectionRun {
        unconditional,
        outcomes,
    })
}

fn split_probe(unconditional: &StateVector) -> Result<Vec<PostselectionOutcome>> {
    let mut outcomes = Vec::new();
    for (b, branch) in [(0, Branch::Success), (1, Branch::Failure)] {
        let (rest, amps) = project_probe(unconditional, b)?;
        let probability: f64 = amps.iter().map(|z| z.norm_sqr()).sum();
        if probability > ZERO_BRANCH_TOL {
            outcomes.push(PostselectionOutcome {
                branch,
                probability,
                state: StateVector::normalized(rest, amps)?,
            });
        }
    }
    Ok(outcomes)
}
