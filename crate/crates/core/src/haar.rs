//! Seeded Haar-random states and unitaries for tests and scenario sweeps.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::linalg::{inner, norm, ComplexMatrix, HilbertLayout, C64};
use crate::state::StateVector;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn gaussian_vector<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Vec<C64> {
    (0..dim)
        .map(|_| C64::new(rng.sample(StandardNormal), rng.sample(StandardNormal)))
        .collect()
}

pub fn random_state_with<R: Rng + ?Sized>(layout: &HilbertLayout, rng: &mut R) -> StateVector {
    loop {
        let v = gaussian_vector(layout.total_dim(), rng);
        if norm(&v) > 1e-6 {
            return StateVector::normalized(layout.clone(), v).expect("nonzero vector");
        }
    }
}

/// Haar-random pure state; identical output for identical seeds.
pub fn random_state(layout: &HilbertLayout, seed: u64) -> StateVector {
    random_state_with(layout, &mut rng(seed))
}

/// Haar-random unitary from the Gram-Schmidt orthonormalization of a
/// complex Ginibre matrix (equivalently, QR with a positive diagonal).
pub fn random_unitary_with<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> ComplexMatrix {
    loop {
        let mut columns: Vec<Vec<C64>> = Vec::with_capacity(dim);
        for _ in 0..dim {
            let mut w = gaussian_vector(dim, rng);
            for _ in 0..2 {
                for e in &columns {
                    let c = inner(e, &w);
                    for (x, y) in w.iter_mut().zip(e) {
                        *x -= c * y;
                    }
                }
            }
            let n = norm(&w);
            if n < 1e-8 {
                break;
            }
            columns.push(w.into_iter().map(|z| z / n).collect());
        }
        if columns.len() == dim {
            return ComplexMatrix::from_columns(&columns).expect("square");
        }
    }
}

pub fn random_unitary(dim: usize, seed: u64) -> ComplexMatrix {
    random_unitary_with(dim, &mut rng(seed))
}
