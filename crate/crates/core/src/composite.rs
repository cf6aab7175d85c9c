//! Cloning one arm of a bipartite state and the discrimination bound it implies.
//!
//! The input `|ψ⟩_AB` is rewritten as `(1/√N) Σ_k |u_k⟩|v_k⟩`, the `v_k` are
//! cloned on `B`, and `|X_k⟩ = (⟨u_k| ⊗ I)|Ψ⟩` is read off the post-cloning
//! state `|Ψ⟩` on `A ⊗ B ⊗ C ⊗ D`.

use crate::error::{LabError, Result};
use crate::linalg::{inner, C64, DEFAULT_PSD_TOL};
use crate::pqcm::{
    apply_and_postselect, build_isometry, build_machine, max_uniform_probability, CloneJob, MachineIsometry,
    MachineUnitary, PostselectionOutcome, DEFAULT_BISECTION_TOL,
};
use crate::state::{uniform_form, RawVector, StateVector, UniformForm};

/// Slack below which a bound is reported as violated.
pub const BOUND_SLACK_TOL: f64 = 1e-9;
/// Tolerance on the X-basis decomposition and completeness checks.
pub const DECOMPOSITION_TOL: f64 = 1e-9;
/// `|⟨v_i|v_j⟩|^M` closer to 1 than this leaves the bound undefined.
const COINCIDENCE_TOL: f64 = 1e-12;
/// Largest machine dimension `2d^M` synthesized as a dense unitary.
pub const DENSE_MACHINE_LIMIT: usize = 256;

/// The cloning machine behind a scenario.
#[derive(Debug, Clone)]
pub enum Cloner {
    Dense(MachineUnitary),
    /// Span-restricted map, used once `2d^M` exceeds [`DENSE_MACHINE_LIMIT`].
    Isometry(MachineIsometry),
}

impl Cloner {
    pub fn job(&self) -> &CloneJob {
        match self {
            Cloner::Dense(m) => m.job(),
            Cloner::Isometry(m) => m.job(),
        }
    }

    pub fn failure_states(&self) -> &[Vec<C64>] {
        match self {
            Cloner::Dense(m) => m.failure_states(),
            Cloner::Isometry(m) => m.failure_states(),
        }
    }

    pub fn dense(&self) -> Option<&MachineUnitary> {
        match self {
            Cloner::Dense(m) => Some(m),
            Cloner::Isometry(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub enum ProbabilityPolicy {
    #[default]
    MaxUniform,
    /// Uniform `p` scaled from the boundary, `0 < f ≤ 1`.
    FractionOfMax(f64),
    Explicit(Vec<f64>),
}

#[derive(Debug, Clone)]
pub struct CompositeScenario {
    pub input: StateVector,
    pub uniform: UniformForm,
    pub machine: Cloner,
    pub copies: usize,
    /// `U_BCD(|ψ⟩_AB |0…0⟩|P₀⟩)`.
    pub post_cloning: StateVector,
    postselected: Option<PostselectionOutcome>,
}

impl CompositeScenario {
    pub fn rank(&self) -> usize {
        self.uniform.rank()
    }

    pub fn probabilities(&self) -> &[f64] {
        self.machine.job().probabilities()
    }

    /// Renormalized global state after the probe reads `P₀`.
    pub fn postselected(&self) -> Option<&PostselectionOutcome> {
        self.postselected.as_ref()
    }
}

fn split_labels(input: &StateVector) -> Result<(String, String)> {
    let labels = input.layout().labels();
    if labels.len() != 2 {
        return Err(LabError::InvalidArgument(format!(
            "composite input needs exactly two subsystems, found {}",
            labels.len()
        )));
    }
    Ok((labels[0].to_string(), labels[1].to_string()))
}

/// Clones the second subsystem of `input` with `copies` outputs.
pub fn build_composite(input: &StateVector, copies: usize, policy: &ProbabilityPolicy) -> Result<CompositeScenario> {
    let (left, right) = split_labels(input)?;
    let uniform = uniform_form(input, &[left.as_str()])?;
    let states = uniform.v_states.clone();
    let n = states.len();
    let probabilities = match policy {
        ProbabilityPolicy::MaxUniform => vec![max_uniform_probability(&states, copies, DEFAULT_BISECTION_TOL)?; n],
        ProbabilityPolicy::FractionOfMax(f) => {
            if !(*f > 0.0 && *f <= 1.0) {
                return Err(LabError::InvalidArgument(format!("fraction {f} outside (0, 1]")));
            }
            vec![f * max_uniform_probability(&states, copies, DEFAULT_BISECTION_TOL)?; n]
        }
        ProbabilityPolicy::Explicit(p) => p.clone(),
    };
    let job = CloneJob::new(states, copies, probabilities)?;
    let total = 2 * job.dim().pow(copies as u32);
    let (machine, run) = if total <= DENSE_MACHINE_LIMIT {
        let m = build_machine(&job, DEFAULT_PSD_TOL)?;
        let run = apply_and_postselect(&m, input, &right)?;
        (Cloner::Dense(m), run)
    } else {
        let m = build_isometry(&job, DEFAULT_PSD_TOL)?;
        let run = m.apply_and_postselect(input, &right)?;
        (Cloner::Isometry(m), run)
    };
    let postselected = run.success().cloned();
    Ok(CompositeScenario {
        input: input.clone(),
        uniform,
        machine,
        copies,
        post_cloning: run.unconditional,
        postselected,
    })
}

#[derive(Debug, Clone)]
pub struct XBasisStates {
    /// `x_k = (⟨u_k| ⊗ I)|Ψ⟩` on `B ⊗ C ⊗ D`.
    pub x: Vec<RawVector>,
    /// `Σ_k ‖x_k‖²`.
    pub completeness: f64,
    /// Largest `|N⟨X_i|X_j⟩ − (√(p_ip_j)⟨v_i|v_j⟩^M + √((1−p_i)(1−p_j))⟨Φ_i|Φ_j⟩)|`.
    pub decomposition_residual: f64,
}

impl XBasisStates {
    pub fn overlap(&self, i: usize, j: usize) -> C64 {
        self.x[i].inner(&self.x[j])
    }

    pub fn is_consistent(&self) -> bool {
        (self.completeness - 1.0).abs() <= DECOMPOSITION_TOL && self.decomposition_residual <= DECOMPOSITION_TOL
    }
}

/// `√(p_ip_j)⟨v_i|v_j⟩^M + √((1−p_i)(1−p_j))⟨Φ_i|Φ_j⟩` from the machine's parts.
pub fn decomposition_terms(s: &CompositeScenario, i: usize, j: usize) -> (C64, C64) {
    let p = s.probabilities();
    let v = &s.uniform.v_states;
    let phi = s.machine.failure_states();
    let clone_term = v[i].inner(&v[j]).powu(s.copies as u32) * (p[i] * p[j]).sqrt();
    let fail_weight = ((1.0 - p[i]).max(0.0) * (1.0 - p[j]).max(0.0)).sqrt();
    (clone_term, inner(&phi[i], &phi[j]) * fail_weight)
}

pub fn x_basis(s: &CompositeScenario) -> Result<XBasisStates> {
    let (left, _) = split_labels(&s.input)?;
    let full = s.post_cloning.layout();
    let cut = crate::state::Bipartition::new(full, &[left.as_str()])?;
    let rest = cut.right_layout();
    let x = s
        .uniform
        .u_basis
        .iter()
        .map(|u| RawVector::new(rest.clone(), cut.contract_left(u, s.post_cloning.amplitudes())))
        .collect::<Result<Vec<_>>>()?;
    let completeness = x.iter().map(RawVector::norm_sqr).sum();
    let n = x.len() as f64;
    let mut residual: f64 = 0.0;
    for i in 0..x.len() {
        for j in 0..x.len() {
            let (a, b) = decomposition_terms(s, i, j);
            residual = residual.max((x[i].inner(&x[j]) * n - a - b).norm());
        }
    }
    Ok(XBasisStates {
        x,
        completeness,
        decomposition_residual: residual,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundReport {
    pub pair: (usize, usize),
    /// `(p_i + p_j)/2`.
    pub lhs: f64,
    /// `|⟨v_i|v_j⟩|`.
    pub overlap_v: f64,
    /// `N|⟨X_i|X_j⟩|`.
    pub overlap_x: f64,
    /// `(1 − N|⟨X_i|X_j⟩|)/(1 − |⟨v_i|v_j⟩|^M)`.
    pub rhs: f64,
    pub satisfied: bool,
    pub slack: f64,
}

fn bound_for(s: &CompositeScenario, xb: &XBasisStates, i: usize, j: usize) -> Result<BoundReport> {
    let n = s.rank();
    if i == j || i >= n || j >= n {
        return Err(LabError::InvalidArgument(format!("pair ({i}, {j}) for rank {n}")));
    }
    let p = s.probabilities();
    let overlap_v = s.uniform.v_states[i].overlap(&s.uniform.v_states[j]);
    let denom = 1.0 - overlap_v.powi(s.copies as i32);
    if denom <= COINCIDENCE_TOL {
        return Err(LabError::CoincidentStates(i, j));
    }
    let overlap_x = n as f64 * xb.overlap(i, j).norm();
    let lhs = 0.5 * (p[i] + p[j]);
    let rhs = (1.0 - overlap_x) / denom;
    let slack = rhs - lhs;
    Ok(BoundReport {
        pair: (i, j),
        lhs,
        overlap_v,
        overlap_x,
        rhs,
        satisfied: slack >= -BOUND_SLACK_TOL,
        slack,
    })
}

pub fn check_bound(s: &CompositeScenario, i: usize, j: usize) -> Result<BoundReport> {
    bound_for(s, &x_basis(s)?, i, j)
}

/// Every unordered pair `i < j`.
pub fn check_all_pairs(s: &CompositeScenario) -> Result<Vec<BoundReport>> {
    let xb = x_basis(s)?;
    let n = s.rank();
    let mut out = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            out.push(bound_for(s, &xb, i, j)?);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LimitRow {
    pub copies: usize,
    pub pair: (usize, usize),
    pub rhs: f64,
    /// `1 − N|⟨X_i|X_j⟩|`, the large-`M` form of `rhs`.
    pub limit_rhs: f64,
    pub gap: f64,
}

/// Rebuilds the scenario for each `M` and tabulates the bound against its limit.
pub fn discrimination_limit(
    input: &StateVector,
    policy: &ProbabilityPolicy,
    copies_list: &[usize],
) -> Result<Vec<LimitRow>> {
    if copies_list.iter().any(|&m| m < 2) {
        return Err(LabError::InvalidArgument("every M must be at least 2".into()));
    }
    if copies_list.windows(2).any(|w| w[0] >= w[1]) {
        return Err(LabError::InvalidArgument("M list must be strictly ascending".into()));
    }
    let mut rows = Vec::new();
    for &m in copies_list {
        let s = build_composite(input, m, policy)?;
        for b in check_all_pairs(&s)? {
            let limit_rhs = 1.0 - b.overlap_x;
            rows.push(LimitRow {
                copies: m,
                pair: b.pair,
                rhs: b.rhs,
                limit_rhs,
                gap: (b.rhs - limit_rhs).abs(),
            });
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::haar;
    use crate::linalg::HilbertLayout;
    use proptest::prelude::*;

    fn two_qubit(amps: &[f64]) -> StateVector {
        let l = HilbertLayout::new([("A", 2), ("B", 2)]).unwrap();
        StateVector::new(l, amps.iter().map(|&x| C64::new(x, 0.0)).collect()).unwrap()
    }

    fn overlap_06() -> StateVector {
        two_qubit(&[0.8f64.sqrt(), 0.0, 0.0, 0.2f64.sqrt()])
    }

    fn singlet() -> StateVector {
        StateVector::singlet("A", "B").unwrap()
    }

    fn random_bipartite(n: usize, dim_b: usize, seed: u64) -> StateVector {
        haar::random_state(&HilbertLayout::new([("A", n), ("B", dim_b)]).unwrap(), seed)
    }

    #[test]
    fn singlet_scenario_is_perfect() {
        let s = build_composite(&singlet(), 2, &ProbabilityPolicy::MaxUniform).unwrap();
        assert_eq!(s.rank(), 2);
        assert!(s.uniform.v_states[0].overlap(&s.uniform.v_states[1]) < 1e-12);
        assert!((s.probabilities()[0] - 1.0).abs() < 1e-12);
        let post = s.postselected().unwrap();
        assert!((post.probability - 1.0).abs() < 1e-12);
        // (1/√2) Σ_k u_k v_k^{⊗2}
        let terms: Vec<(Vec<C64>, Vec<C64>)> = s
            .uniform
            .u_basis
            .iter()
            .zip(&s.uniform.v_states)
            .map(|(u, v)| {
                let w = crate::state::tensor_power(v.amplitudes(), 2);
                (u.iter().map(|z| z * std::f64::consts::FRAC_1_SQRT_2).collect(), w)
            })
            .collect();
        let cut = crate::state::Bipartition::new(post.state.layout(), &["A"]).unwrap();
        let expected = StateVector::new(post.state.layout().clone(), cut.join(&terms)).unwrap();
        assert!(expected.equal_up_to_phase(&post.state, 1e-10));

        let xb = x_basis(&s).unwrap();
        assert!(xb.overlap(0, 1).norm() < 1e-12);
        let b = check_bound(&s, 0, 1).unwrap();
        assert!((b.lhs - 1.0).abs() < 1e-12 && (b.rhs - 1.0).abs() < 1e-12 && b.satisfied);
    }

    #[test]
    fn overlap_06_worked_point() {
        let s = build_composite(&overlap_06(), 2, &ProbabilityPolicy::MaxUniform).unwrap();
        let v = &s.uniform.v_states;
        assert!((v[0].overlap(&v[1]) - 0.6).abs() < 1e-12);
        assert!((s.probabilities()[0] - 0.625).abs() < 1e-9);
        let xb = x_basis(&s).unwrap();
        assert!(xb.is_consistent());
        assert!((2.0 * xb.overlap(0, 1).norm() - 0.6).abs() < 1e-9);
        let b = check_bound(&s, 0, 1).unwrap();
        assert!((b.lhs - 0.625).abs() < 1e-9);
        assert!((b.rhs - 0.625).abs() < 1e-9);
        assert!(b.slack.abs() < 1e-9 && b.satisfied);
    }

    #[test]
    fn sub_maximal_p_has_positive_slack() {
        let s = build_composite(&overlap_06(), 2, &ProbabilityPolicy::Explicit(vec![0.5, 0.5])).unwrap();
        let b = check_bound(&s, 0, 1).unwrap();
        assert!((b.lhs - 0.5).abs() < 1e-12);
        assert!(b.slack > 0.1 && b.satisfied);
    }

    #[test]
    fn explicit_p_above_boundary_is_rejected() {
        let r = build_composite(&overlap_06(), 2, &ProbabilityPolicy::Explicit(vec![0.7, 0.7]));
        assert!(matches!(r, Err(LabError::Infeasible { .. })));
    }

    #[test]
    fn rank_deficient_and_malformed_inputs() {
        let product = two_qubit(&[1.0, 0.0, 0.0, 0.0]);
        assert!(matches!(
            build_composite(&product, 2, &ProbabilityPolicy::MaxUniform),
            Err(LabError::RankDeficient { .. })
        ));
        let l = HilbertLayout::new([("A", 2), ("B", 2), ("E", 2)]).unwrap();
        let three = haar::random_state(&l, 3);
        assert!(matches!(
            build_composite(&three, 2, &ProbabilityPolicy::MaxUniform),
            Err(LabError::InvalidArgument(_))
        ));
        let s = build_composite(&overlap_06(), 2, &ProbabilityPolicy::MaxUniform).unwrap();
        assert!(check_bound(&s, 0, 0).is_err());
        assert!(check_bound(&s, 0, 2).is_err());
    }

    #[test]
    fn discrimination_limit_examples() {
        let rows = discrimination_limit(&overlap_06(), &ProbabilityPolicy::MaxUniform, &[2, 4, 8, 16]).unwrap();
        assert_eq!(rows.len(), 4);
        for w in rows.windows(2) {
            assert!(w[1].gap < w[0].gap);
        }
        // Oracle: N|⟨X_0|X_1⟩| = s, so the gap is (1−s)s^M/(1−s^M).
        for r in &rows {
            let s: f64 = 0.6;
            let sm = s.powi(r.copies as i32);
            assert!((r.gap - (1.0 - s) * sm / (1.0 - sm)).abs() < 1e-9);
        }
        assert!(rows[3].gap <= 3e-4);

        let orth = discrimination_limit(&singlet(), &ProbabilityPolicy::MaxUniform, &[2, 3]).unwrap();
        assert!(orth.iter().all(|r| r.gap < 1e-12));

        let c = 0.95f64.sqrt();
        let slow = two_qubit(&[c, 0.0, 0.0, (1.0 - c * c).sqrt()]);
        let rows = discrimination_limit(&slow, &ProbabilityPolicy::MaxUniform, &[2, 16]).unwrap();
        assert!(rows[1].gap < rows[0].gap);

        assert!(discrimination_limit(&overlap_06(), &ProbabilityPolicy::MaxUniform, &[4, 2]).is_err());
        assert!(discrimination_limit(&overlap_06(), &ProbabilityPolicy::MaxUniform, &[1, 2]).is_err());
    }

    #[test]
    fn large_copy_counts_use_the_isometry() {
        let s = build_composite(&overlap_06(), 16, &ProbabilityPolicy::MaxUniform).unwrap();
        assert!(s.machine.dense().is_none());
        let xb = x_basis(&s).unwrap();
        assert!(xb.is_consistent());
        let small = build_composite(&overlap_06(), 3, &ProbabilityPolicy::MaxUniform).unwrap();
        assert!(small.machine.dense().is_some());
    }

    #[test]
    fn qutrit_arm_larger_than_rank() {
        let input = random_bipartite(2, 3, 17);
        let s = build_composite(&input, 2, &ProbabilityPolicy::MaxUniform).unwrap();
        assert_eq!(s.rank(), 2);
        let xb = x_basis(&s).unwrap();
        assert!(xb.is_consistent(), "{xb:?}");
        assert!(check_all_pairs(&s).unwrap()[0].satisfied);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn bound_holds_and_decomposition_is_exact(seed in any::<u64>(), n in 2usize..=3, m in 2usize..=3, frac in 0.3f64..=1.0) {
            let input = random_bipartite(n, n, seed);
            let s = build_composite(&input, m, &ProbabilityPolicy::FractionOfMax(frac)).unwrap();
            let xb = x_basis(&s).unwrap();
            prop_assert!((xb.completeness - 1.0).abs() <= 1e-9);
            prop_assert!(xb.decomposition_residual <= 1e-9);
            for b in check_all_pairs(&s).unwrap() {
                prop_assert!(b.satisfied, "{b:?}");
                let (a, f) = decomposition_terms(&s, b.pair.0, b.pair.1);
                prop_assert!(b.overlap_x <= a.norm() + f.norm() + 1e-9);
            }
        }

        #[test]
        fn two_dimensional_boundary_saturates(seed in any::<u64>(), m in 2usize..=4) {
            let s = build_composite(&random_bipartite(2, 2, seed), m, &ProbabilityPolicy::MaxUniform).unwrap();
            let b = check_bound(&s, 0, 1).unwrap();
            prop_assert!(b.slack.abs() <= 1e-7, "{b:?}");
        }
    }
}
