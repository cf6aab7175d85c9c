//! The entangled-pair signalling experiment.
//!
//! Alice and Bob share a singlet. Bob runs a cloning machine on his half,
//! Alice picks a measurement basis (or any local unitary). Bob's unconditional
//! operator on `B ⊗ C ⊗ D` must not depend on Alice's choice; only the
//! ensembles conditioned on her (unknown to Bob) outcomes may differ.

use crate::error::{LabError, Result};
use crate::haar;
use crate::linalg::{apply_local, partial_trace_pure, ComplexMatrix, HilbertLayout, C64};
use crate::pqcm::{
    self, apply_and_postselect, clone_label, gram_rank, max_uniform_probability, project_probe, MachineUnitary,
    PROBE_LABEL,
};
use crate::state::{measure_and_collapse, trace_distance, DensityOperator, MeasurementBasis, StateVector};

pub const ALICE: &str = "A";
pub const BOB: &str = "B";

/// Largest trace distance allowed between Bob's unconditional operators.
pub const NO_SIGNALLING_TOL: f64 = 1e-10;

/// Bob's qubit is cloned by `machine`; Alice measures in each of `alice_bases`.
#[derive(Debug, Clone)]
pub struct EprScenario {
    pub machine: MachineUnitary,
    pub alice_bases: Vec<MeasurementBasis>,
    pub postselect: bool,
}

impl EprScenario {
    pub fn new(machine: MachineUnitary, alice_bases: Vec<MeasurementBasis>, postselect: bool) -> Result<Self> {
        if machine.dim() != 2 {
            return Err(LabError::DimensionMismatch {
                expected: 2,
                found: machine.dim(),
            });
        }
        Ok(Self {
            machine,
            alice_bases,
            postselect,
        })
    }
}

/// Bob's clone register after postselecting the probe on `P₀`.
#[derive(Debug, Clone)]
pub struct PostselectedEnsemble {
    pub success_probability: f64,
    /// Mixture over Alice's outcomes of the success-projected operator on
    /// `B ⊗ C`; its trace is `success_probability`.
    pub subnormalized: DensityOperator,
    pub renormalized: Option<DensityOperator>,
    /// Per Alice outcome: joint probability of (outcome, success) and the
    /// subnormalized operator on `B ⊗ C` with that trace.
    pub per_outcome: Vec<(f64, DensityOperator)>,
}

#[derive(Debug, Clone)]
pub struct BasisRun {
    pub basis: MeasurementBasis,
    /// `Σ_a p(a) ρ_BCD|a`.
    pub unconditional: DensityOperator,
    /// Alice outcome probability and Bob's renormalized operator on `B ⊗ C ⊗ D`.
    pub outcome_ensemble: Vec<(f64, DensityOperator)>,
    pub postselected: Option<PostselectedEnsemble>,
}

#[derive(Debug, Clone)]
pub struct SignallingReport {
    pub runs: Vec<BasisRun>,
    /// `(i, j, D(ρ_i, ρ_j))` for every pair of bases.
    pub pairwise_distances: Vec<(usize, usize, f64)>,
    pub max_distance: f64,
}

impl SignallingReport {
    /// Spread of the probe success probability across Alice's bases.
    pub fn success_probability_spread(&self) -> f64 {
        let probs: Vec<f64> = self
            .runs
            .iter()
            .filter_map(|r| r.postselected.as_ref().map(|p| p.success_probability))
            .collect();
        spread(&probs)
    }
}

fn spread(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    if values.is_empty() {
        0.0
    } else {
        max - min
    }
}

fn bob_labels(machine: &MachineUnitary) -> Vec<String> {
    let mut labels = vec![BOB.to_string()];
    labels.extend((1..machine.copies()).map(clone_label));
    labels.push(PROBE_LABEL.to_string());
    labels
}

fn as_strs(labels: &[String]) -> Vec<&str> {
    labels.iter().map(String::as_str).collect()
}

/// `(I_A ⊗ U_BCD)(|ψ⁻⟩|blank⟩|P₀⟩)` on `A ⊗ B ⊗ C ⊗ D`.
pub fn cloned_singlet(machine: &MachineUnitary) -> Result<StateVector> {
    let singlet = StateVector::singlet(ALICE, BOB)?;
    Ok(apply_and_postselect(machine, &singlet, BOB)?.unconditional)
}

fn weighted_sum(layout: &HilbertLayout, terms: &[(f64, &ComplexMatrix)]) -> ComplexMatrix {
    let n = layout.total_dim();
    terms.iter().fold(ComplexMatrix::zeros(n, n), |acc, (w, m)| {
        &acc + &m.scale(C64::new(*w, 0.0))
    })
}

pub fn run_scenario(s: &EprScenario) -> Result<SignallingReport> {
    let global = cloned_singlet(&s.machine)?;
    let bob = bob_labels(&s.machine);
    let bob = as_strs(&bob);
    let clone_register = &bob[..bob.len() - 1];

    let mut runs = Vec::with_capacity(s.alice_bases.len());
    for basis in &s.alice_bases {
        let branches = measure_and_collapse(&global, ALICE, basis)?;
        let mut outcome_ensemble = Vec::with_capacity(branches.len());
        for (p, st) in &branches {
            outcome_ensemble.push((*p, st.reduced(&bob)?));
        }
        let bob_layout = outcome_ensemble[0].1.layout().clone();
        let terms: Vec<(f64, &ComplexMatrix)> = outcome_ensemble.iter().map(|(p, r)| (*p, r.matrix())).collect();
        let unconditional = DensityOperator::new(bob_layout, weighted_sum(outcome_ensemble[0].1.layout(), &terms))?;

        let postselected = if s.postselect {
            let mut per_outcome = Vec::with_capacity(branches.len());
            for (p, st) in &branches {
                let (rest, amps) = project_probe(st, 0)?;
                let reduced = partial_trace_pure(&amps, &rest, clone_register)?.scale(C64::new(*p, 0.0));
                let positions = rest.positions(clone_register)?;
                let op = DensityOperator::subnormalized(rest.restrict(&positions), reduced)?;
                per_outcome.push((op.trace(), op));
            }
            let bc_layout = per_outcome[0].1.layout().clone();
            let terms: Vec<(f64, &ComplexMatrix)> = per_outcome.iter().map(|(_, r)| (1.0, r.matrix())).collect();
            let subnormalized = DensityOperator::subnormalized(bc_layout.clone(), weighted_sum(&bc_layout, &terms))?;
            let success_probability = subnormalized.trace();
            let renormalized = if success_probability > 0.0 {
                Some(subnormalized.renormalized()?)
            } else {
                None
            };
            Some(PostselectedEnsemble {
                success_probability,
                subnormalized,
                renormalized,
                per_outcome,
            })
        } else {
            None
        };
        runs.push(BasisRun {
            basis: *basis,
            unconditional,
            outcome_ensemble,
            postselected,
        });
    }

    let mut pairwise_distances = Vec::new();
    for i in 0..runs.len() {
        for j in i + 1..runs.len() {
            pairwise_distances.push((i, j, trace_distance(&runs[i].unconditional, &runs[j].unconditional)?));
        }
    }
    let max_distance = pairwise_distances.iter().map(|t| t.2).fold(0.0, f64::max);
    Ok(SignallingReport {
        runs,
        pairwise_distances,
        max_distance,
    })
}

/// Something Alice may do to her qubit.
#[derive(Debug, Clone)]
pub enum AliceOperation {
    Unitary(ComplexMatrix),
    /// Complete projective measurement whose outcome Bob does not learn.
    Measure(MeasurementBasis),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoSignallingSummary {
    pub operations: usize,
    pub max_trace_distance: f64,
    /// Spread of Bob's probe success probability across Alice's operations.
    pub success_probability_spread: f64,
}

fn bob_view(global: &StateVector, op: &AliceOperation, bob: &[&str]) -> Result<(DensityOperator, f64)> {
    let layout = global.layout();
    let alice = layout.position(ALICE)?;
    let (rho, success) = match op {
        AliceOperation::Unitary(v) => {
            let amps = apply_local(v, global.amplitudes(), layout, &[alice])?;
            let after = StateVector::new(layout.clone(), amps)?;
            let success: f64 = after.amplitudes().iter().step_by(2).map(|z| z.norm_sqr()).sum();
            (after.reduced(bob)?, success)
        }
        AliceOperation::Measure(basis) => {
            let mut acc: Option<ComplexMatrix> = None;
            let mut success = 0.0;
            let mut bob_layout = None;
            for (p, st) in measure_and_collapse(global, ALICE, basis)? {
                let r = st.reduced(bob)?;
                success += p * st.amplitudes().iter().step_by(2).map(|z| z.norm_sqr()).sum::<f64>();
                let term = r.matrix().scale(C64::new(p, 0.0));
                acc = Some(match acc {
                    Some(a) => &a + &term,
                    None => term,
                });
                bob_layout = Some(r.layout().clone());
            }
            let layout = bob_layout.expect("a complete measurement has a nonzero branch");
            (DensityOperator::new(layout, acc.expect("nonempty"))?, success)
        }
    };
    Ok((rho, success))
}

/// Compares Bob's unconditional operator across every supplied Alice
/// operation plus `trials` Haar-random unitaries drawn from `seed`.
pub fn no_signalling_survey(
    machine: &MachineUnitary,
    alice_ops: &[AliceOperation],
    trials: usize,
    seed: u64,
) -> Result<NoSignallingSummary> {
    if machine.dim() != 2 {
        return Err(LabError::DimensionMismatch {
            expected: 2,
            found: machine.dim(),
        });
    }
    let global = cloned_singlet(machine)?;
    let bob = bob_labels(machine);
    let bob = as_strs(&bob);
    let mut rng = haar::rng(seed);
    let mut ops: Vec<AliceOperation> = alice_ops.to_vec();
    ops.extend((0..trials).map(|_| AliceOperation::Unitary(haar::random_unitary_with(2, &mut rng))));

    let views = ops
        .iter()
        .map(|op| bob_view(&global, op, &bob))
        .collect::<Result<Vec<_>>>()?;
    let mut max_trace_distance: f64 = 0.0;
    for i in 0..views.len() {
        for j in i + 1..views.len() {
            max_trace_distance = max_trace_distance.max(trace_distance(&views[i].0, &views[j].0)?);
        }
    }
    let successes: Vec<f64> = views.iter().map(|v| v.1).collect();
    Ok(NoSignallingSummary {
        operations: views.len(),
        max_trace_distance,
        success_probability_spread: spread(&successes),
    })
}

/// Maximum trace distance between Bob's unconditional operators; see
/// [`no_signalling_survey`].
pub fn no_signalling_check(
    machine: &MachineUnitary,
    alice_ops: &[AliceOperation],
    trials: usize,
    seed: u64,
) -> Result<f64> {
    Ok(no_signalling_survey(machine, alice_ops, trials, seed)?.max_trace_distance)
}

/// Why Bob cannot signal-clone: the union of Alice's two bases is dependent.
#[derive(Debug, Clone, PartialEq)]
pub struct FourStateReport {
    pub theta: f64,
    pub copies: usize,
    pub states: Vec<StateVector>,
    pub gram_rank: usize,
    pub max_uniform_probability: f64,
    /// `(i, j, p_max)` for every linearly independent pair of the four states,
    /// with state `j` rephased so that `⟨ψ_i|ψ_j⟩ ≥ 0`. Clones of a ray may
    /// carry any global phase, and this choice attains the pair optimum
    /// `(1 − |s|)/(1 − |s|^M)`.
    pub pair_probabilities: Vec<(usize, usize, f64)>,
}

/// `{|0⟩, |1⟩, cosθ|0⟩+sinθ|1⟩, sinθ|0⟩−cosθ|1⟩}` on Bob's qubit.
pub fn four_states(theta: f64) -> Result<Vec<StateVector>> {
    let layout = HilbertLayout::single(BOB, 2)?;
    let mut states = vec![
        StateVector::basis(layout.clone(), 0)?,
        StateVector::basis(layout.clone(), 1)?,
    ];
    for v in MeasurementBasis::new(theta).vectors() {
        states.push(StateVector::new(layout.clone(), v.to_vec())?);
    }
    Ok(states)
}

/// `b` times the phase making `⟨a|b⟩` real and nonnegative.
pub fn phase_aligned(a: &StateVector, b: &StateVector) -> Result<StateVector> {
    let z = a.inner(b);
    if z.norm() == 0.0 {
        return Ok(b.clone());
    }
    let phase = z.conj() / z.norm();
    StateVector::new(b.layout().clone(), b.amplitudes().iter().map(|x| x * phase).collect())
}

pub fn four_state_obstruction(theta: f64, copies: usize, tol: f64) -> Result<FourStateReport> {
    if (2.0 * theta).sin().abs() < 1e-9 {
        return Err(LabError::DegenerateAngle(theta));
    }
    let states = four_states(theta)?;
    let rank = gram_rank(&states)?;
    let p_max = max_uniform_probability(&states, copies, tol)?;
    let mut pair_probabilities = Vec::new();
    for i in 0..states.len() {
        for j in i + 1..states.len() {
            let pair = [states[i].clone(), phase_aligned(&states[i], &states[j])?];
            if pqcm::gram_rank(&pair)? == 2 {
                pair_probabilities.push((i, j, max_uniform_probability(&pair, copies, tol)?));
            }
        }
    }
    Ok(FourStateReport {
        theta,
        copies,
        states,
        gram_rank: rank,
        max_uniform_probability: p_max,
        pair_probabilities,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{max_abs_diff, DEFAULT_PSD_TOL, ZERO};
    use crate::pqcm::{build_machine, CloneJob, DEFAULT_BISECTION_TOL};
    use crate::state::tensor_power;
    use std::f64::consts::{FRAC_1_SQRT_2, PI};

    fn bob_qubit(a: f64, b: f64) -> StateVector {
        StateVector::new(
            HilbertLayout::single(BOB, 2).unwrap(),
            vec![C64::new(a, 0.0), C64::new(b, 0.0)],
        )
        .unwrap()
    }

    fn perfect_copier() -> MachineUnitary {
        let job = CloneJob::uniform(vec![bob_qubit(1.0, 0.0), bob_qubit(0.0, 1.0)], 2, 1.0).unwrap();
        build_machine(&job, DEFAULT_PSD_TOL).unwrap()
    }

    fn plus_cloner() -> MachineUnitary {
        let states = vec![bob_qubit(1.0, 0.0), bob_qubit(FRAC_1_SQRT_2, FRAC_1_SQRT_2)];
        let p = max_uniform_probability(&states, 2, DEFAULT_BISECTION_TOL).unwrap();
        build_machine(&CloneJob::uniform(states, 2, p).unwrap(), DEFAULT_PSD_TOL).unwrap()
    }

    fn bases() -> Vec<MeasurementBasis> {
        vec![MeasurementBasis::z(), MeasurementBasis::new(PI / 6.0)]
    }

    #[test]
    fn perfect_copier_does_not_signal() {
        let s = EprScenario::new(perfect_copier(), bases(), true).unwrap();
        let report = run_scenario(&s).unwrap();
        assert!(report.max_distance <= 1e-10);
        for run in &report.runs {
            assert!((run.unconditional.trace() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn perfect_copier_conditional_mixture_in_z() {
        let s = EprScenario::new(perfect_copier(), vec![MeasurementBasis::z()], true).unwrap();
        let report = run_scenario(&s).unwrap();
        let post = report.runs[0].postselected.as_ref().unwrap();
        let mut expected = ComplexMatrix::zeros(4, 4);
        expected[(0, 0)] = C64::new(0.5, 0.0);
        expected[(3, 3)] = C64::new(0.5, 0.0);
        let target = DensityOperator::new(post.subnormalized.layout().clone(), expected).unwrap();
        assert!((post.success_probability - 1.0).abs() < 1e-12);
        assert!(trace_distance(&post.renormalized.clone().unwrap(), &target).unwrap() < 1e-10);
        assert!(post.subnormalized.is_subnormalized());
        // Alice finding |0⟩ leaves the clones in |11⟩, and vice versa.
        let (p0, op0) = &post.per_outcome[0];
        assert!((p0 - 0.5).abs() < 1e-12);
        assert!((op0.matrix()[(3, 3)].re - 0.5).abs() < 1e-12);
    }

    #[test]
    fn plus_cloner_conditional_ensembles_differ_but_do_not_signal() {
        let s = EprScenario::new(plus_cloner(), bases(), true).unwrap();
        let report = run_scenario(&s).unwrap();
        assert!(report.max_distance <= 1e-10);
        assert!(report.success_probability_spread() <= 1e-10);
        let z = &report.runs[0].outcome_ensemble;
        let t = &report.runs[1].outcome_ensemble;
        let d = trace_distance(&z[0].1, &t[0].1).unwrap();
        assert!(d > 1e-3, "conditional ensembles coincide: {d}");
    }

    #[test]
    fn conditional_operators_carry_joint_probabilities() {
        let m = plus_cloner();
        let p = m.job().probabilities()[0];
        let s = EprScenario::new(m, bases(), true).unwrap();
        let report = run_scenario(&s).unwrap();
        for run in &report.runs {
            let post = run.postselected.as_ref().unwrap();
            let total: f64 = post.per_outcome.iter().map(|(q, _)| q).sum();
            assert!((total - post.success_probability).abs() < 1e-12);
            for (q, op) in &post.per_outcome {
                assert!((op.trace() - q).abs() < 1e-12);
            }
        }
        // In Z, Alice's |1⟩ outcome leaves Bob with |0⟩, a job state: the
        // operator is ½ p |00⟩⟨00|.
        let (q, op) = &report.runs[0].postselected.as_ref().unwrap().per_outcome[1];
        assert!((q - 0.5 * p).abs() < 1e-9);
        assert!((op.matrix()[(0, 0)].re - 0.5 * p).abs() < 1e-9);
    }

    #[test]
    fn orthonormal_pair_postselected_state_is_antisymmetrized_clones() {
        let theta = 0.3;
        let [psi, perp] = MeasurementBasis::new(theta).vectors();
        let l = HilbertLayout::single(BOB, 2).unwrap();
        let states = vec![
            StateVector::new(l.clone(), psi.to_vec()).unwrap(),
            StateVector::new(l, perp.to_vec()).unwrap(),
        ];
        let (p, p_perp) = (0.7, 0.4);
        let m = build_machine(&CloneJob::new(states, 3, vec![p, p_perp]).unwrap(), DEFAULT_PSD_TOL).unwrap();
        let singlet = StateVector::singlet(ALICE, BOB).unwrap();
        let run = apply_and_postselect(&m, &singlet, BOB).unwrap();
        let success = run.success().unwrap();
        let a = crate::linalg::tensor_vec(&psi, &tensor_power(&perp, 3));
        let b = crate::linalg::tensor_vec(&perp, &tensor_power(&psi, 3));
        let expected: Vec<C64> = a
            .iter()
            .zip(&b)
            .map(|(x, y)| (x * p_perp.sqrt() - y * p.sqrt()) * FRAC_1_SQRT_2)
            .collect();
        let expected = StateVector::normalized(success.state.layout().clone(), expected).unwrap();
        assert!(expected.equal_up_to_phase(&success.state, 1e-9));
        assert!((success.probability - 0.5 * (p + p_perp)).abs() < 1e-10);
    }

    #[test]
    fn no_signalling_examples() {
        let m = perfect_copier();
        let d = no_signalling_check(&m, &[], 100, 1).unwrap();
        assert!(d <= 1e-10);
        let single = no_signalling_check(&m, &[AliceOperation::Unitary(ComplexMatrix::identity(2))], 0, 1).unwrap();
        assert_eq!(single, 0.0);
        let ops = [
            AliceOperation::Measure(MeasurementBasis::z()),
            AliceOperation::Measure(MeasurementBasis::new(PI / 6.0)),
        ];
        let summary = no_signalling_survey(&plus_cloner(), &ops, 20, 2).unwrap();
        assert_eq!(summary.operations, 22);
        assert!(summary.max_trace_distance <= 1e-10);
        assert!(summary.success_probability_spread <= 1e-10);
    }

    #[test]
    fn scenario_rejects_qutrit_machine() {
        let l = HilbertLayout::single(BOB, 3).unwrap();
        let states = vec![
            StateVector::basis(l.clone(), 0).unwrap(),
            StateVector::basis(l, 1).unwrap(),
        ];
        let m = build_machine(&CloneJob::uniform(states, 2, 1.0).unwrap(), DEFAULT_PSD_TOL).unwrap();
        assert!(EprScenario::new(m.clone(), bases(), true).is_err());
        assert!(no_signalling_check(&m, &[], 1, 0).is_err());
    }

    #[test]
    fn four_state_examples() {
        for theta in [PI / 6.0, PI / 4.0] {
            let r = four_state_obstruction(theta, 2, DEFAULT_BISECTION_TOL).unwrap();
            assert_eq!(r.gram_rank, 2);
            assert!(r.max_uniform_probability <= 1e-6);
            assert_eq!(r.pair_probabilities.len(), 6);
            for &(i, j, p) in &r.pair_probabilities {
                let s = r.states[i].overlap(&r.states[j]);
                assert!((p - (1.0 - s) / (1.0 - s * s)).abs() < 1e-7, "pair ({i}, {j})");
            }
        }
        assert!(matches!(
            four_state_obstruction(0.0, 2, 1e-9),
            Err(LabError::DegenerateAngle(_))
        ));
        assert!(matches!(
            four_state_obstruction(PI / 2.0, 2, 1e-9),
            Err(LabError::DegenerateAngle(_))
        ));
    }

    #[test]
    fn cloned_singlet_layout() {
        let g = cloned_singlet(&perfect_copier()).unwrap();
        assert_eq!(g.layout().labels(), vec!["A", "B", "C1", "D"]);
        let mut expected = vec![ZERO; 16];
        expected[0b0110] = C64::new(FRAC_1_SQRT_2, 0.0);
        expected[0b1000] = C64::new(-FRAC_1_SQRT_2, 0.0);
        assert!(max_abs_diff(g.amplitudes(), &expected) < 1e-12);
    }
}
