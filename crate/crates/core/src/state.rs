//! Pure and mixed quantum states, Born-rule statistics and bipartite forms.

use std::f64::consts::PI;

use crate::error::{LabError, Result};
use crate::linalg::{
    self, apply_local, eigenvalues_hermitian, inner, norm, partial_trace, partial_trace_pure, svd, tensor_vec,
    ComplexMatrix, HilbertLayout, C64, ONE, ZERO,
};

/// Norm tolerance for [`StateVector`] and trace tolerance for [`DensityOperator`].
pub const STATE_TOL: f64 = 1e-10;

/// Branches whose Born probability is at or below this are dropped.
pub const ZERO_BRANCH_TOL: f64 = 1e-12;

/// Schmidt coefficients at or below this do not count towards the rank.
pub const SCHMIDT_RANK_TOL: f64 = 1e-10;

/// A normalized pure state on a labeled layout.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    layout: HilbertLayout,
    amplitudes: Vec<C64>,
}

impl StateVector {
    pub fn new(layout: HilbertLayout, amplitudes: Vec<C64>) -> Result<Self> {
        check_len(&layout, &amplitudes)?;
        let n = norm(&amplitudes);
        if (n - 1.0).abs() > STATE_TOL {
            return Err(LabError::NotNormalized { norm: n });
        }
        Ok(Self { layout, amplitudes })
    }

    /// Rescales `amplitudes` to unit norm; fails only on the zero vector.
    pub fn normalized(layout: HilbertLayout, mut amplitudes: Vec<C64>) -> Result<Self> {
        check_len(&layout, &amplitudes)?;
        let n = norm(&amplitudes);
        if n == 0.0 || !n.is_finite() {
            return Err(LabError::NotNormalized { norm: n });
        }
        for z in &mut amplitudes {
            *z /= n;
        }
        Ok(Self { layout, amplitudes })
    }

    pub fn basis(layout: HilbertLayout, index: usize) -> Result<Self> {
        let n = layout.total_dim();
        if index >= n {
            return Err(LabError::DimensionMismatch {
                expected: n,
                found: index,
            });
        }
        let mut amplitudes = vec![ZERO; n];
        amplitudes[index] = ONE;
        Ok(Self { layout, amplitudes })
    }

    /// Single-qubit state `a|0⟩ + b|1⟩` on a subsystem called `label`.
    pub fn qubit(label: &str, a: C64, b: C64) -> Result<Self> {
        Self::new(HilbertLayout::single(label, 2)?, vec![a, b])
    }

    /// `(|01⟩ − |10⟩)/√2` on `label_a ⊗ label_b`.
    pub fn singlet(label_a: &str, label_b: &str) -> Result<Self> {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        Self::new(
            HilbertLayout::new([(label_a, 2), (label_b, 2)])?,
            vec![ZERO, C64::new(h, 0.0), C64::new(-h, 0.0), ZERO],
        )
    }

    pub fn layout(&self) -> &HilbertLayout {
        &self.layout
    }

    pub fn amplitudes(&self) -> &[C64] {
        &self.amplitudes
    }

    pub fn into_amplitudes(self) -> Vec<C64> {
        self.amplitudes
    }

    pub fn dim(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn tensor(&self, other: &StateVector) -> Result<StateVector> {
        Ok(Self {
            layout: self.layout.concat(&other.layout)?,
            amplitudes: tensor_vec(&self.amplitudes, &other.amplitudes),
        })
    }

    pub fn inner(&self, other: &StateVector) -> C64 {
        inner(&self.amplitudes, &other.amplitudes)
    }

    /// `|⟨self|other⟩|`.
    pub fn overlap(&self, other: &StateVector) -> f64 {
        self.inner(other).norm()
    }

    pub fn equal_up_to_phase(&self, other: &StateVector, tol: f64) -> bool {
        self.layout == other.layout && (1.0 - self.overlap(other)).abs() <= tol
    }

    /// Same amplitudes relabeled onto `layout` (dimensions must agree).
    pub fn with_layout(&self, layout: HilbertLayout) -> Result<StateVector> {
        check_len(&layout, &self.amplitudes)?;
        Ok(Self {
            layout,
            amplitudes: self.amplitudes.clone(),
        })
    }

    pub fn density(&self) -> DensityOperator {
        DensityOperator {
            layout: self.layout.clone(),
            matrix: ComplexMatrix::outer(&self.amplitudes, &self.amplitudes),
            subnormalized: false,
        }
    }

    /// Reduced operator on `keep`, computed directly from the amplitudes.
    pub fn reduced(&self, keep: &[&str]) -> Result<DensityOperator> {
        let matrix = partial_trace_pure(&self.amplitudes, &self.layout, keep)?;
        let mut positions = self.layout.positions(keep)?;
        positions.sort_unstable();
        Ok(DensityOperator {
            layout: self.layout.restrict(&positions),
            matrix,
            subnormalized: false,
        })
    }
}

impl AsRef<[C64]> for StateVector {
    fn as_ref(&self) -> &[C64] {
        &self.amplitudes
    }
}

/// A vector on a layout with no normalization requirement.
#[derive(Debug, Clone, PartialEq)]
pub struct RawVector {
    pub layout: HilbertLayout,
    pub amplitudes: Vec<C64>,
}

impl RawVector {
    pub fn new(layout: HilbertLayout, amplitudes: Vec<C64>) -> Result<Self> {
        check_len(&layout, &amplitudes)?;
        Ok(Self { layout, amplitudes })
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amplitudes.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn inner(&self, other: &RawVector) -> C64 {
        inner(&self.amplitudes, &other.amplitudes)
    }
}

impl AsRef<[C64]> for RawVector {
    fn as_ref(&self) -> &[C64] {
        &self.amplitudes
    }
}

fn check_len(layout: &HilbertLayout, amplitudes: &[C64]) -> Result<()> {
    if amplitudes.len() != layout.total_dim() {
        return Err(LabError::DimensionMismatch {
            expected: layout.total_dim(),
            found: amplitudes.len(),
        });
    }
    Ok(())
}

/// `v^{⊗m}` as a flat amplitude vector.
pub fn tensor_power(v: &[C64], m: usize) -> Vec<C64> {
    (1..m).fold(v.to_vec(), |acc, _| tensor_vec(&acc, v))
}

/// Gram matrix of states that share one layout.
pub fn gram_of_states(states: &[StateVector]) -> Result<ComplexMatrix> {
    if let Some(first) = states.first() {
        if states.iter().any(|s| s.layout != first.layout) {
            return Err(LabError::MixedLayouts);
        }
    }
    linalg::gram_matrix(states)
}

/// Hermitian PSD operator on a layout.
///
/// Unit trace unless `subnormalized` is set, in which case the trace is a
/// branch probability in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityOperator {
    layout: HilbertLayout,
    matrix: ComplexMatrix,
    subnormalized: bool,
}

impl DensityOperator {
    pub fn new(layout: HilbertLayout, matrix: ComplexMatrix) -> Result<Self> {
        let rho = Self::validated(layout, matrix, false)?;
        let tr = rho.trace();
        if (tr - 1.0).abs() > STATE_TOL {
            return Err(LabError::NotNormalized { norm: tr });
        }
        Ok(rho)
    }

    /// An operator whose trace is a probability rather than one.
    pub fn subnormalized(layout: HilbertLayout, matrix: ComplexMatrix) -> Result<Self> {
        let rho = Self::validated(layout, matrix, true)?;
        let tr = rho.trace();
        if !(-STATE_TOL..=1.0 + STATE_TOL).contains(&tr) {
            return Err(LabError::NotNormalized { norm: tr });
        }
        Ok(rho)
    }

    fn validated(layout: HilbertLayout, matrix: ComplexMatrix, subnormalized: bool) -> Result<Self> {
        let n = layout.total_dim();
        if !matrix.is_square() || matrix.rows() != n {
            return Err(LabError::DimensionMismatch {
                expected: n,
                found: matrix.rows(),
            });
        }
        let deviation = matrix.hermitian_deviation();
        if deviation > STATE_TOL {
            return Err(LabError::NotHermitian { deviation });
        }
        let min = linalg::min_eig_hermitian(&matrix)?;
        if min < -STATE_TOL {
            return Err(LabError::Indefinite { min_eigenvalue: min });
        }
        Ok(Self {
            layout,
            matrix,
            subnormalized,
        })
    }

    pub fn layout(&self) -> &HilbertLayout {
        &self.layout
    }

    pub fn matrix(&self) -> &ComplexMatrix {
        &self.matrix
    }

    pub fn is_subnormalized(&self) -> bool {
        self.subnormalized
    }

    pub fn trace(&self) -> f64 {
        self.matrix.trace().re
    }

    /// Unit-trace version of this operator.
    pub fn renormalized(&self) -> Result<DensityOperator> {
        let tr = self.trace();
        if tr <= 0.0 {
            return Err(LabError::NotNormalized { norm: tr });
        }
        Ok(Self {
            layout: self.layout.clone(),
            matrix: self.matrix.scale(C64::new(1.0 / tr, 0.0)),
            subnormalized: false,
        })
    }

    pub fn reduce(&self, keep: &[&str]) -> Result<DensityOperator> {
        let matrix = partial_trace(&self.matrix, &self.layout, keep)?;
        let mut positions = self.layout.positions(keep)?;
        positions.sort_unstable();
        Ok(Self {
            layout: self.layout.restrict(&positions),
            matrix,
            subnormalized: self.subnormalized,
        })
    }

    /// Sum of two operators on the same layout; the result is subnormalized
    /// if either input is.
    pub fn add(&self, other: &DensityOperator) -> Result<DensityOperator> {
        if self.layout != other.layout {
            return Err(LabError::MixedLayouts);
        }
        Ok(Self {
            layout: self.layout.clone(),
            matrix: &self.matrix + &other.matrix,
            subnormalized: self.subnormalized || other.subnormalized,
        })
    }
}

/// `½ Σ |λ_i(ρ − σ)|`.
pub fn trace_distance(a: &DensityOperator, b: &DensityOperator) -> Result<f64> {
    if a.layout != b.layout {
        return Err(LabError::MixedLayouts);
    }
    let diff = &a.matrix - &b.matrix;
    Ok(0.5 * eigenvalues_hermitian(&diff)?.iter().map(|l| l.abs()).sum::<f64>())
}

/// Qubit basis `{cosθ|0⟩ + sinθ|1⟩, sinθ|0⟩ − cosθ|1⟩}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeasurementBasis {
    pub theta: f64,
}

impl MeasurementBasis {
    pub fn new(theta: f64) -> Self {
        Self { theta }
    }

    /// The computational basis, up to the sign of the second vector.
    pub fn z() -> Self {
        Self { theta: 0.0 }
    }

    pub fn vectors(&self) -> [[C64; 2]; 2] {
        let (s, c) = self.theta.sin_cos();
        [
            [C64::new(c, 0.0), C64::new(s, 0.0)],
            [C64::new(s, 0.0), C64::new(-c, 0.0)],
        ]
    }

    pub fn projectors(&self) -> [ComplexMatrix; 2] {
        let [a, b] = self.vectors();
        [ComplexMatrix::outer(&a, &a), ComplexMatrix::outer(&b, &b)]
    }

    pub fn povm(&self, label: &str) -> Result<PovmSet> {
        PovmSet::new(HilbertLayout::single(label, 2)?, self.projectors().to_vec())
    }
}

/// Measurement operators `{P_a}` with `Σ P_a†P_a = I`.
#[derive(Debug, Clone, PartialEq)]
pub struct PovmSet {
    layout: HilbertLayout,
    elements: Vec<ComplexMatrix>,
}

impl PovmSet {
    pub fn new(layout: HilbertLayout, elements: Vec<ComplexMatrix>) -> Result<Self> {
        let n = layout.total_dim();
        let mut sum = ComplexMatrix::zeros(n, n);
        for e in &elements {
            if !e.is_square() || e.rows() != n {
                return Err(LabError::DimensionMismatch {
                    expected: n,
                    found: e.rows(),
                });
            }
            if !e.is_psd(STATE_TOL) {
                return Err(LabError::InvalidPovm {
                    deviation: e.hermitian_deviation(),
                });
            }
            sum = &sum + &(&e.adjoint() * e);
        }
        let deviation = sum.max_abs_diff(&ComplexMatrix::identity(n));
        if deviation > STATE_TOL {
            return Err(LabError::InvalidPovm { deviation });
        }
        Ok(Self { layout, elements })
    }

    pub fn layout(&self) -> &HilbertLayout {
        &self.layout
    }

    pub fn elements(&self) -> &[ComplexMatrix] {
        &self.elements
    }

    /// Embeds each element as `P_a ⊗ I` on a larger layout containing these labels.
    pub fn lift(&self, outer: &HilbertLayout) -> Result<PovmSet> {
        let labels = self.layout.labels();
        let positions = outer.positions(&labels)?;
        for (p, s) in positions.iter().zip(self.layout.subsystems()) {
            if outer.subsystems()[*p].dim != s.dim {
                return Err(LabError::DimensionMismatch {
                    expected: s.dim,
                    found: outer.subsystems()[*p].dim,
                });
            }
        }
        let n = outer.total_dim();
        let elements = self
            .elements
            .iter()
            .map(|e| {
                let cols: Vec<Vec<C64>> = (0..n)
                    .map(|j| {
                        let mut basis = vec![ZERO; n];
                        basis[j] = ONE;
                        apply_local(e, &basis, outer, &positions).expect("dimensions checked")
                    })
                    .collect();
                ComplexMatrix::from_columns(&cols).expect("square")
            })
            .collect();
        Ok(PovmSet {
            layout: outer.clone(),
            elements,
        })
    }
}

/// `p(a) = tr(ρ P_a†P_a)` for every element of `povm`.
pub fn born_probabilities(rho: &DensityOperator, povm: &PovmSet) -> Result<Vec<f64>> {
    if rho.layout != povm.layout {
        return Err(LabError::MixedLayouts);
    }
    Ok(povm
        .elements
        .iter()
        .map(|p| {
            let effect = &p.adjoint() * p;
            (&rho.matrix * &effect).trace().re.max(0.0)
        })
        .collect())
}

/// Measures qubit `label` of `state` in `basis`, returning each surviving
/// branch with its probability and renormalized global state.
pub fn measure_and_collapse(
    state: &StateVector,
    label: &str,
    basis: &MeasurementBasis,
) -> Result<Vec<(f64, StateVector)>> {
    let pos = state.layout.position(label)?;
    if state.layout.subsystems()[pos].dim != 2 {
        return Err(LabError::NotQubit(label.to_string()));
    }
    let mut out = Vec::new();
    for projector in basis.projectors() {
        let branch = apply_local(&projector, &state.amplitudes, &state.layout, &[pos])?;
        let prob: f64 = branch.iter().map(|z| z.norm_sqr()).sum();
        if prob > ZERO_BRANCH_TOL {
            out.push((prob, StateVector::normalized(state.layout.clone(), branch)?));
        }
    }
    Ok(out)
}

/// A split of a layout into a left and a right group of subsystems.
#[derive(Debug, Clone, PartialEq)]
pub struct Bipartition {
    layout: HilbertLayout,
    left: Vec<usize>,
    right: Vec<usize>,
}

impl Bipartition {
    pub fn new(layout: &HilbertLayout, left_labels: &[&str]) -> Result<Self> {
        let mut left = layout.positions(left_labels)?;
        left.sort_unstable();
        let right = layout.complement(&left);
        if left.is_empty() || right.is_empty() {
            return Err(LabError::EmptyCut);
        }
        Ok(Self {
            layout: layout.clone(),
            left,
            right,
        })
    }

    pub fn layout(&self) -> &HilbertLayout {
        &self.layout
    }

    pub fn left_layout(&self) -> HilbertLayout {
        self.layout.restrict(&self.left)
    }

    pub fn right_layout(&self) -> HilbertLayout {
        self.layout.restrict(&self.right)
    }

    /// Amplitudes reshaped to a `dim_left × dim_right` matrix.
    pub fn matrix(&self, amplitudes: &[C64]) -> ComplexMatrix {
        let lo = self.layout.offsets(&self.left);
        let ro = self.layout.offsets(&self.right);
        let mut m = ComplexMatrix::zeros(lo.len(), ro.len());
        for (i, &l) in lo.iter().enumerate() {
            for (j, &r) in ro.iter().enumerate() {
                m[(i, j)] = amplitudes[l + r];
            }
        }
        m
    }

    /// Flat amplitudes of `Σ_k a_k ⊗ b_k` on the full layout.
    pub fn join(&self, terms: &[(Vec<C64>, Vec<C64>)]) -> Vec<C64> {
        let lo = self.layout.offsets(&self.left);
        let ro = self.layout.offsets(&self.right);
        let mut out = vec![ZERO; self.layout.total_dim()];
        for (a, b) in terms {
            for (i, &l) in lo.iter().enumerate() {
                if a[i] == ZERO {
                    continue;
                }
                for (j, &r) in ro.iter().enumerate() {
                    out[l + r] += a[i] * b[j];
                }
            }
        }
        out
    }

    /// `(⟨bra| ⊗ I)|ψ⟩` with `bra` on the left group.
    pub fn contract_left(&self, bra: &[C64], amplitudes: &[C64]) -> Vec<C64> {
        let m = self.matrix(amplitudes);
        (0..m.cols())
            .map(|j| (0..m.rows()).map(|i| bra[i].conj() * m[(i, j)]).sum())
            .collect()
    }
}

/// `Σ_k c_k |α_k⟩|β_k⟩` with `c_k` descending and above the rank threshold.
#[derive(Debug, Clone)]
pub struct SchmidtForm {
    pub cut: Bipartition,
    pub coefficients: Vec<f64>,
    pub left_basis: Vec<Vec<C64>>,
    pub right_basis: Vec<Vec<C64>>,
}

impl SchmidtForm {
    pub fn rank(&self) -> usize {
        self.coefficients.len()
    }

    pub fn reconstruct(&self) -> Vec<C64> {
        let terms: Vec<(Vec<C64>, Vec<C64>)> = self
            .coefficients
            .iter()
            .zip(self.left_basis.iter().zip(&self.right_basis))
            .map(|(&c, (a, b))| (a.iter().map(|z| z * c).collect(), b.clone()))
            .collect();
        self.cut.join(&terms)
    }
}

struct FullSchmidt {
    cut: Bipartition,
    values: Vec<f64>,
    left: ComplexMatrix,
    right: ComplexMatrix,
}

fn full_schmidt(state: &StateVector, left_labels: &[&str]) -> Result<FullSchmidt> {
    let cut = Bipartition::new(&state.layout, left_labels)?;
    let dec = svd(&cut.matrix(&state.amplitudes));
    Ok(FullSchmidt {
        cut,
        values: dec.singular_values,
        left: dec.u,
        right: dec.v,
    })
}

/// Schmidt decomposition across the cut `left_labels | rest`.
pub fn schmidt_decompose(state: &StateVector, left_labels: &[&str]) -> Result<SchmidtForm> {
    let full = full_schmidt(state, left_labels)?;
    let rank = full.values.iter().filter(|&&c| c > SCHMIDT_RANK_TOL).count();
    Ok(SchmidtForm {
        coefficients: full.values[..rank].to_vec(),
        left_basis: (0..rank).map(|k| full.left.column_vec(k)).collect(),
        // ψ = U Σ V†, so β_k is the conjugate of the k-th column of V.
        right_basis: (0..rank)
            .map(|k| full.right.column_vec(k).iter().map(|z| z.conj()).collect())
            .collect(),
        cut: full.cut,
    })
}

/// `(1/√N) Σ_k |u_k⟩|v_k⟩` with orthonormal `u_k` and unit, linearly
/// independent (generally non-orthogonal) `v_k`.
#[derive(Debug, Clone)]
pub struct UniformForm {
    pub cut: Bipartition,
    pub u_basis: Vec<Vec<C64>>,
    pub v_states: Vec<StateVector>,
}

impl UniformForm {
    pub fn rank(&self) -> usize {
        self.u_basis.len()
    }

    pub fn reconstruct(&self) -> Vec<C64> {
        let s = 1.0 / (self.rank() as f64).sqrt();
        let terms: Vec<(Vec<C64>, Vec<C64>)> = self
            .u_basis
            .iter()
            .zip(&self.v_states)
            .map(|(u, v)| (u.iter().map(|z| z * s).collect(), v.amplitudes.clone()))
            .collect();
        self.cut.join(&terms)
    }
}

/// Rewrites a full-Schmidt-rank state in uniform form.
///
/// `u_k = (1/√N) Σ_l e^{2πi·kl/N} α_l`, and `v_k = √N (⟨u_k| ⊗ I)|ψ⟩`, which
/// has norm `Σ_l c_l² = 1` for every `k`.
pub fn uniform_form(state: &StateVector, left_labels: &[&str]) -> Result<UniformForm> {
    let full = full_schmidt(state, left_labels)?;
    let smallest = full.values.last().copied().unwrap_or(0.0);
    if smallest <= SCHMIDT_RANK_TOL {
        return Err(LabError::RankDeficient { coefficient: smallest });
    }
    let n = full.values.len();
    let alphas: Vec<Vec<C64>> = (0..n).map(|l| full.left.column_vec(l)).collect();
    let dim_left = full.left.rows();
    let scale = 1.0 / (n as f64).sqrt();
    let u_basis: Vec<Vec<C64>> = (0..n)
        .map(|k| {
            let mut u = vec![ZERO; dim_left];
            for (l, alpha) in alphas.iter().enumerate() {
                let phase = C64::from_polar(scale, 2.0 * PI * (k * l) as f64 / n as f64);
                for (x, a) in u.iter_mut().zip(alpha) {
                    *x += phase * a;
                }
            }
            u
        })
        .collect();
    let right_layout = full.cut.right_layout();
    let root_n = (n as f64).sqrt();
    let v_states = u_basis
        .iter()
        .map(|u| {
            let v: Vec<C64> = full
                .cut
                .contract_left(u, &state.amplitudes)
                .into_iter()
                .map(|z| z * root_n)
                .collect();
            StateVector::normalized(right_layout.clone(), v)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(UniformForm {
        cut: full.cut,
        u_basis,
        v_states,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::haar;
    use crate::linalg::{max_abs_diff, numerical_rank};

    fn c(x: f64) -> C64 {
        C64::new(x, 0.0)
    }

    fn ab_layout() -> HilbertLayout {
        HilbertLayout::new([("A", 2), ("B", 2)]).unwrap()
    }

    fn weighted_bell() -> StateVector {
        StateVector::new(ab_layout(), vec![c(0.8f64.sqrt()), ZERO, ZERO, c(0.2f64.sqrt())]).unwrap()
    }

    #[test]
    fn state_vector_rejects_unnormalized() {
        let l = HilbertLayout::single("A", 2).unwrap();
        assert!(matches!(
            StateVector::new(l.clone(), vec![ONE, ONE]),
            Err(LabError::NotNormalized { .. })
        ));
        assert!(matches!(
            StateVector::new(l.clone(), vec![ONE]),
            Err(LabError::DimensionMismatch { .. })
        ));
        assert!(StateVector::normalized(l, vec![ZERO, ZERO]).is_err());
    }

    #[test]
    fn born_examples() {
        let b = HilbertLayout::single("B", 2).unwrap();
        let mixed = DensityOperator::new(b.clone(), ComplexMatrix::identity(2).scale(c(0.5))).unwrap();
        let z = MeasurementBasis::z().povm("B").unwrap();
        let p = born_probabilities(&mixed, &z).unwrap();
        assert!((p[0] - 0.5).abs() < 1e-15 && (p[1] - 0.5).abs() < 1e-15);

        let zero = StateVector::basis(b.clone(), 0).unwrap().density();
        let theta = MeasurementBasis::new(PI / 6.0).povm("B").unwrap();
        let p = born_probabilities(&zero, &theta).unwrap();
        assert!((p[0] - 0.75).abs() < 1e-12);
        assert!((p[1] - 0.25).abs() < 1e-12);

        let trivial = PovmSet::new(b, vec![ComplexMatrix::identity(2)]).unwrap();
        assert_eq!(born_probabilities(&zero, &trivial).unwrap().len(), 1);
        assert!((born_probabilities(&zero, &trivial).unwrap()[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn povm_validation() {
        let b = HilbertLayout::single("B", 2).unwrap();
        let half = ComplexMatrix::identity(2).scale(c(0.5));
        assert!(matches!(
            PovmSet::new(b.clone(), vec![half.clone()]),
            Err(LabError::InvalidPovm { .. })
        ));
        // Two copies of √(I/2) form a valid unsharp measurement.
        let root = ComplexMatrix::identity(2).scale(c(0.5f64.sqrt()));
        assert!(PovmSet::new(b.clone(), vec![root.clone(), root]).is_ok());
        let rho = DensityOperator::new(b, half).unwrap();
        let wrong = MeasurementBasis::z().povm("A").unwrap();
        assert!(matches!(born_probabilities(&rho, &wrong), Err(LabError::MixedLayouts)));
    }

    #[test]
    fn density_operator_validation() {
        let b = HilbertLayout::single("B", 2).unwrap();
        assert!(DensityOperator::new(b.clone(), ComplexMatrix::identity(2)).is_err());
        let neg = ComplexMatrix::from_real_rows(&[&[1.5, 0.0], &[0.0, -0.5]]);
        assert!(matches!(
            DensityOperator::new(b.clone(), neg),
            Err(LabError::Indefinite { .. })
        ));
        let sub = DensityOperator::subnormalized(b, ComplexMatrix::identity(2).scale(c(0.3))).unwrap();
        assert!(sub.is_subnormalized());
        assert!((sub.renormalized().unwrap().trace() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn collapse_singlet_in_z() {
        let s = StateVector::singlet("A", "B").unwrap();
        let branches = measure_and_collapse(&s, "A", &MeasurementBasis::z()).unwrap();
        assert_eq!(branches.len(), 2);
        let one_b = StateVector::basis(HilbertLayout::single("B", 2).unwrap(), 1).unwrap();
        let zero_b = StateVector::basis(HilbertLayout::single("B", 2).unwrap(), 0).unwrap();
        for ((p, st), expected_b) in branches.iter().zip([one_b, zero_b]) {
            assert!((p - 0.5).abs() < 1e-12);
            let rb = st.reduced(&["B"]).unwrap();
            let target = expected_b.density();
            assert!(trace_distance(&rb, &target).unwrap() < 1e-12);
        }
    }

    #[test]
    fn collapse_product_state_single_branch() {
        let s = StateVector::basis(ab_layout(), 0).unwrap();
        let branches = measure_and_collapse(&s, "A", &MeasurementBasis::z()).unwrap();
        assert_eq!(branches.len(), 1);
        assert!((branches[0].0 - 1.0).abs() < 1e-15);
    }

    #[test]
    fn collapse_singlet_in_theta_basis() {
        let theta = PI / 6.0;
        let basis = MeasurementBasis::new(theta);
        let [psi, perp] = basis.vectors();
        let s = StateVector::singlet("A", "B").unwrap();
        let branches = measure_and_collapse(&s, "A", &basis).unwrap();
        assert_eq!(branches.len(), 2);
        let bl = HilbertLayout::single("B", 2).unwrap();
        let partners = [perp, psi];
        for ((p, st), partner) in branches.iter().zip(partners) {
            assert!((p - 0.5).abs() < 1e-12);
            let expected = StateVector::new(bl.clone(), partner.to_vec()).unwrap().density();
            assert!(trace_distance(&st.reduced(&["B"]).unwrap(), &expected).unwrap() < 1e-12);
        }
    }

    #[test]
    fn collapse_rejects_qutrit() {
        let l = HilbertLayout::new([("A", 3), ("B", 2)]).unwrap();
        let s = StateVector::basis(l, 0).unwrap();
        assert!(matches!(
            measure_and_collapse(&s, "A", &MeasurementBasis::z()),
            Err(LabError::NotQubit(_))
        ));
    }

    #[test]
    fn singlet_is_basis_invariant() {
        let s = StateVector::singlet("A", "B").unwrap();
        let l = ab_layout();
        for k in 0..16 {
            let basis = MeasurementBasis::new(k as f64 * 0.37);
            let [psi, perp] = basis.vectors();
            let amps: Vec<C64> = tensor_vec(&psi, &perp)
                .iter()
                .zip(tensor_vec(&perp, &psi))
                .map(|(a, b)| (a - b) * std::f64::consts::FRAC_1_SQRT_2)
                .collect();
            let rewritten = StateVector::new(l.clone(), amps).unwrap();
            assert!(rewritten.equal_up_to_phase(&s, 1e-10));
        }
    }

    #[test]
    fn schmidt_examples() {
        let s = StateVector::singlet("A", "B").unwrap();
        let f = schmidt_decompose(&s, &["A"]).unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert_eq!(f.rank(), 2);
        assert!(f.coefficients.iter().all(|c| (c - h).abs() < 1e-12));
        assert!(max_abs_diff(&f.reconstruct(), s.amplitudes()) < 1e-12);

        let prod = StateVector::basis(ab_layout(), 3).unwrap();
        let f = schmidt_decompose(&prod, &["A"]).unwrap();
        assert_eq!(f.rank(), 1);
        assert!((f.coefficients[0] - 1.0).abs() < 1e-12);

        let f = schmidt_decompose(&weighted_bell(), &["A"]).unwrap();
        assert!((f.coefficients[0] - 0.8f64.sqrt()).abs() < 1e-12);
        assert!((f.coefficients[1] - 0.2f64.sqrt()).abs() < 1e-12);

        assert!(matches!(schmidt_decompose(&s, &["A", "B"]), Err(LabError::EmptyCut)));
        assert!(matches!(schmidt_decompose(&s, &[]), Err(LabError::EmptyCut)));
    }

    #[test]
    fn schmidt_on_non_prefix_cut() {
        let l = HilbertLayout::new([("A", 2), ("B", 3), ("C", 2)]).unwrap();
        let s = haar::random_state(&l, 11);
        let f = schmidt_decompose(&s, &["C", "A"]).unwrap();
        assert_eq!(f.cut.left_layout().labels(), vec!["A", "C"]);
        assert!(max_abs_diff(&f.reconstruct(), s.amplitudes()) < 1e-12);
        assert!((f.coefficients.iter().map(|c| c * c).sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn uniform_form_examples() {
        let s = StateVector::singlet("A", "B").unwrap();
        let uf = uniform_form(&s, &["A"]).unwrap();
        assert!(uf.v_states[0].overlap(&uf.v_states[1]) < 1e-12);
        assert!(max_abs_diff(&uf.reconstruct(), s.amplitudes()) < 1e-12);

        let uf = uniform_form(&weighted_bell(), &["A"]).unwrap();
        let ov = uf.v_states[0].inner(&uf.v_states[1]);
        assert!((ov.norm() - 0.6).abs() < 1e-12);
        assert!(max_abs_diff(&uf.reconstruct(), weighted_bell().amplitudes()) < 1e-12);
        let u_gram = linalg::gram_matrix(&uf.u_basis).unwrap();
        assert!(u_gram.max_abs_diff(&ComplexMatrix::identity(2)) < 1e-12);

        let prod = StateVector::basis(ab_layout(), 0).unwrap();
        assert!(matches!(
            uniform_form(&prod, &["A"]),
            Err(LabError::RankDeficient { .. })
        ));
    }

    #[test]
    fn uniform_form_on_random_qutrits() {
        let l = HilbertLayout::new([("A", 3), ("B", 3)]).unwrap();
        for seed in 0..20 {
            let s = haar::random_state(&l, seed);
            let uf = uniform_form(&s, &["A"]).unwrap();
            for v in &uf.v_states {
                assert!((norm(v.amplitudes()) - 1.0).abs() < 1e-10);
            }
            let g = gram_of_states(&uf.v_states).unwrap();
            assert_eq!(numerical_rank(&g, 1e-10).unwrap(), 3);
            assert!(max_abs_diff(&uf.reconstruct(), s.amplitudes()) < 1e-9);
        }
    }

    #[test]
    fn gram_of_states_rejects_mixed_layouts() {
        let a = StateVector::basis(HilbertLayout::single("A", 2).unwrap(), 0).unwrap();
        let b = StateVector::basis(HilbertLayout::single("B", 2).unwrap(), 0).unwrap();
        assert!(matches!(gram_of_states(&[a, b]), Err(LabError::MixedLayouts)));
    }

    #[test]
    fn lifted_povm_matches_reduced_statistics() {
        let l = HilbertLayout::new([("A", 2), ("B", 2)]).unwrap();
        let s = haar::random_state(&l, 5);
        let povm = MeasurementBasis::new(0.4).povm("B").unwrap();
        let local = born_probabilities(&s.reduced(&["B"]).unwrap(), &povm).unwrap();
        let joint = born_probabilities(&s.density(), &povm.lift(&l).unwrap()).unwrap();
        assert!(
            max_abs_diff(
                &local.iter().map(|&x| c(x)).collect::<Vec<_>>(),
                &joint.iter().map(|&x| c(x)).collect::<Vec<_>>()
            ) < 1e-10
        );
    }
}
