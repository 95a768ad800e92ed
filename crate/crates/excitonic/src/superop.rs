//! Superoperators acting on column-stacked density matrices.
//!
//! Vectorization is column-stacking throughout: entry rho[(i, j)] lands at
//! vec index i + j*n, so vec(A rho B) = (B^T kron A) vec(rho). Every builder
//! below is documented against this convention.

use ndarray::linalg::kron;
use ndarray::{Array1, Array2};
use num_complex::Complex64 as C64;

use crate::linalg::{dagger, CMat, CVec};
use crate::{Error, Result};

/// vec(rho) with column stacking.
pub fn vectorize(rho: &CMat) -> CVec {
    let n = rho.nrows();
    let mut v = Array1::zeros(n * n);
    for j in 0..n {
        for i in 0..n {
            v[i + j * n] = rho[(i, j)];
        }
    }
    v
}

pub fn devectorize(v: &CVec, n: usize) -> CMat {
    let mut rho = Array2::zeros((n, n));
    for j in 0..n {
        for i in 0..n {
            rho[(i, j)] = v[i + j * n];
        }
    }
    rho
}

/// A linear map on vectorized density matrices.
#[derive(Clone, Debug)]
pub struct Superoperator {
    pub dim: usize,
    pub matrix: CMat,
}

impl Superoperator {
    pub fn zero(dim: usize) -> Self {
        Self {
            dim,
            matrix: Array2::zeros((dim * dim, dim * dim)),
        }
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            dim,
            matrix: Array2::eye(dim * dim),
        }
    }

    /// vec(A rho B): (B^T kron A).
    pub fn left_right(a: &CMat, b: &CMat) -> Self {
        let dim = a.nrows();
        Self {
            dim,
            matrix: kron(&b.t(), a),
        }
    }

    pub fn apply(&self, rho: &CMat) -> CMat {
        devectorize(&self.matrix.dot(&vectorize(rho)), self.dim)
    }

    pub fn apply_vec(&self, v: &CVec) -> CVec {
        self.matrix.dot(v)
    }

    pub fn compose(&self, other: &Superoperator) -> Result<Superoperator> {
        if self.dim != other.dim {
            return Err(Error::Dimension(format!(
                "compose of superoperators on dim {} and {}",
                self.dim, other.dim
            )));
        }
        Ok(Superoperator {
            dim: self.dim,
            matrix: self.matrix.dot(&other.matrix),
        })
    }

    pub fn add(&self, other: &Superoperator) -> Result<Superoperator> {
        if self.dim != other.dim {
            return Err(Error::Dimension(format!(
                "sum of superoperators on dim {} and {}",
                self.dim, other.dim
            )));
        }
        Ok(Superoperator {
            dim: self.dim,
            matrix: &self.matrix + &other.matrix,
        })
    }

    pub fn scale(&self, factor: C64) -> Superoperator {
        Superoperator {
            dim: self.dim,
            matrix: self.matrix.mapv(|z| z * factor),
        }
    }
}

/// -i [H, .] as a superoperator: -i (I kron H - H^T kron I).
pub fn commutator_superoperator(h: &CMat) -> Superoperator {
    let n = h.nrows();
    let eye = Array2::eye(n);
    let m = kron(&eye, h) - kron(&h.t(), &eye);
    Superoperator {
        dim: n,
        matrix: m.mapv(|z| z * C64::new(0.0, -1.0)),
    }
}

/// -rate {P, .} as a superoperator: -rate (I kron P + P^T kron I).
pub fn anticommutator_superoperator(p: &CMat, rate: f64) -> Superoperator {
    let n = p.nrows();
    let eye = Array2::eye(n);
    let m = kron(&eye, p) + kron(&p.t(), &eye);
    Superoperator {
        dim: n,
        matrix: m.mapv(|z| z * C64::new(-rate, 0.0)),
    }
}

/// L . L^dagger as a superoperator: conj(L) kron L.
pub fn sandwich_superoperator(l: &CMat) -> Superoperator {
    let n = l.nrows();
    let lconj = l.mapv(|z| z.conj());
    Superoperator {
        dim: n,
        matrix: kron(&lconj, l),
    }
}

/// Full Lindblad dissipator rate (L . L^dagger - 1/2 {L^dagger L, .}).
pub fn lindblad_superoperator(l: &CMat, rate: f64) -> Superoperator {
    let ldl = dagger(l).dot(l);
    let jump = sandwich_superoperator(l).scale(C64::new(rate, 0.0));
    let damp = anticommutator_superoperator(&ldl, 0.5 * rate);
    jump.add(&damp).expect("same dim")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{hermiticity_residual, max_abs};
    use ndarray::array;
    use proptest::prelude::*;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn random_cmat(n: usize, seed: u64) -> CMat {
        let mut state = seed.max(1);
        let mut next = move || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state as f64 / u64::MAX as f64) - 0.5
        };
        Array2::from_shape_fn((n, n), |_| c(next(), next()))
    }

    fn random_hermitian(n: usize, seed: u64) -> CMat {
        let a = random_cmat(n, seed);
        (&a + &dagger(&a)).mapv(|z| z * 0.5)
    }

    #[test]
    fn diagonal_commutator_is_zero() {
        let h = array![[c(1.0, 0.0), c(0.0, 0.0)], [c(0.0, 0.0), c(2.0, 0.0)]];
        let rho = array![[c(0.3, 0.0), c(0.0, 0.0)], [c(0.0, 0.0), c(0.7, 0.0)]];
        let s = commutator_superoperator(&h);
        assert_eq!(max_abs(&s.apply(&rho)), 0.0);
    }

    #[test]
    fn anticommutator_of_projector_with_itself() {
        // P = |1><1|, rho = |1><1|: -rate {P, rho} = -2 rate |1><1|
        let p = array![[c(0.0, 0.0), c(0.0, 0.0)], [c(0.0, 0.0), c(1.0, 0.0)]];
        let rho = p.clone();
        let kappa = 0.37;
        let out = anticommutator_superoperator(&p, kappa).apply(&rho);
        assert!((out[(1, 1)] - c(-2.0 * kappa, 0.0)).norm() < 1e-15);
        assert!((out[(0, 0)]).norm() < 1e-15);
    }

    #[test]
    fn superoperators_match_direct_matrix_arithmetic() {
        let h = random_hermitian(3, 42);
        let rho = random_hermitian(3, 7);
        let l = random_cmat(3, 99);

        let direct_comm = (h.dot(&rho) - rho.dot(&h)).mapv(|z| z * c(0.0, -1.0));
        let via_super = commutator_superoperator(&h).apply(&rho);
        assert!(max_abs(&(&direct_comm - &via_super)) < 1e-13);

        let rate = 0.8;
        let direct_anti = (h.dot(&rho) + rho.dot(&h)).mapv(|z| z * c(-rate, 0.0));
        let via_anti = anticommutator_superoperator(&h, rate).apply(&rho);
        assert!(max_abs(&(&direct_anti - &via_anti)) < 1e-13);

        let direct_sand = l.dot(&rho).dot(&dagger(&l));
        let via_sand = sandwich_superoperator(&l).apply(&rho);
        assert!(max_abs(&(&direct_sand - &via_sand)) < 1e-13);
    }

    #[test]
    fn composition_matches_sequential_application() {
        let s1 = commutator_superoperator(&random_hermitian(3, 5));
        let s2 = lindblad_superoperator(&random_cmat(3, 6), 0.4);
        let composed = s1.compose(&s2).unwrap();
        for seed in 0..100 {
            let rho = random_hermitian(3, 1000 + seed);
            let seq = s1.apply(&s2.apply(&rho));
            let one = composed.apply(&rho);
            assert!(max_abs(&(&seq - &one)) < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn vectorize_roundtrip(seed in 1u64..5000) {
            let rho = random_cmat(4, seed);
            let back = devectorize(&vectorize(&rho), 4);
            prop_assert!(max_abs(&(&back - &rho)) == 0.0);
        }

        #[test]
        fn hermitian_generators_preserve_hermiticity(seed in 1u64..2000) {
            let h = random_hermitian(3, seed);
            let p = random_hermitian(3, seed + 1);
            let l = random_cmat(3, seed + 2);
            let rho = random_hermitian(3, seed + 3);
            let s = commutator_superoperator(&h)
                .add(&anticommutator_superoperator(&p, 0.3)).unwrap()
                .add(&lindblad_superoperator(&l, 0.7)).unwrap();
            let out = s.apply(&rho);
            prop_assert!(hermiticity_residual(&out) <= 1e-12 * max_abs(&out).max(1.0));
        }
    }
}
