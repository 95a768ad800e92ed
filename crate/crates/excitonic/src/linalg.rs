//! Dense complex linear algebra shared by all propagation and inversion code.
//!
//! Thin layer over LAPACK (via `ndarray-linalg`) plus the pieces it lacks:
//! a scaling-and-squaring matrix exponential, a Hager-style 1-norm condition
//! estimate, and deterministic eigenvector phase fixing.

use ndarray::{Array1, Array2};
use ndarray_linalg::solve::LUFactorized;
use ndarray_linalg::{Eig, Eigh, Factorize, OperationNorm, Solve, UPLO};
use num_complex::Complex64 as C64;
use num_traits::Zero;

use crate::{Error, Result};

pub type CMat = Array2<C64>;
pub type CVec = Array1<C64>;

pub fn identity(n: usize) -> CMat {
    Array2::eye(n)
}

pub fn dagger(a: &CMat) -> CMat {
    a.t().mapv(|z| z.conj())
}

/// Max-abs residual of a - a^dagger.
pub fn hermiticity_residual(a: &CMat) -> f64 {
    let n = a.nrows();
    let mut res: f64 = 0.0;
    for i in 0..n {
        for j in 0..n {
            res = res.max((a[(i, j)] - a[(j, i)].conj()).norm());
        }
    }
    res
}

pub fn is_hermitian(a: &CMat, tol: f64) -> bool {
    let scale = a.iter().map(|z| z.norm()).fold(1.0_f64, f64::max);
    hermiticity_residual(a) <= tol * scale
}

/// (a + a^dagger) / 2.
pub fn hermitize(a: &CMat) -> CMat {
    (a + &dagger(a)).mapv(|z| z * 0.5)
}

pub fn trace(a: &CMat) -> C64 {
    a.diag().sum()
}

pub fn max_abs(a: &CMat) -> f64 {
    a.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Outer product x y^dagger.
pub fn outer(x: &CVec, y: &CVec) -> CMat {
    let n = x.len();
    let m = y.len();
    let mut out = Array2::zeros((n, m));
    for i in 0..n {
        for j in 0..m {
            out[(i, j)] = x[i] * y[j].conj();
        }
    }
    out
}

/// Eigendecomposition of a Hermitian matrix with ascending eigenvalues and a
/// deterministic phase convention: the largest-magnitude component of every
/// eigenvector is made real and positive.
pub fn eigh_ascending(a: &CMat, herm_tol: f64) -> Result<(Array1<f64>, CMat)> {
    let residual = hermiticity_residual(a);
    let scale = max_abs(a).max(1.0);
    if residual > herm_tol * scale {
        return Err(Error::NotHermitian {
            residual: residual / scale,
            tol: herm_tol,
        });
    }
    let (vals, mut vecs) = hermitize(a).eigh(UPLO::Lower)?;
    fix_phases(&mut vecs);
    Ok((vals, vecs))
}

/// Rotate each column so its largest-magnitude entry is real positive.
pub fn fix_phases(vecs: &mut CMat) {
    let (n, m) = vecs.dim();
    for j in 0..m {
        let mut imax = 0;
        let mut vmax = 0.0;
        for i in 0..n {
            let v = vecs[(i, j)].norm();
            if v > vmax + 1e-14 {
                vmax = v;
                imax = i;
            }
        }
        let pivot = vecs[(imax, j)];
        if pivot.norm() > 0.0 {
            let phase = pivot / pivot.norm();
            let correction = phase.conj();
            for i in 0..n {
                vecs[(i, j)] *= correction;
            }
        }
    }
}

/// Eigenvalues of a general complex matrix.
pub fn eigenvalues(a: &CMat) -> Result<CVec> {
    let (vals, _) = a.eig()?;
    Ok(vals)
}

/// Eigendecomposition of a general complex matrix: a = s diag(vals) s^-1.
pub fn eig_general(a: &CMat) -> Result<(CVec, CMat, CMat)> {
    let (vals, vecs) = a.eig()?;
    let inv = LuSolver::new(vecs.clone())?.solve_matrix(&identity(a.nrows()))?;
    Ok((vals, vecs, inv))
}

/// Smallest eigenvalue of the Hermitian part of `a`.
pub fn min_eigenvalue_hermitian(a: &CMat) -> Result<f64> {
    let (vals, _) = hermitize(a).eigh(UPLO::Lower)?;
    Ok(vals[0])
}

/// LU factorization with one step of iterative refinement per solve.
pub struct LuSolver {
    a: CMat,
    fact: LUFactorized<ndarray::OwnedRepr<C64>>,
}

impl LuSolver {
    pub fn new(a: CMat) -> Result<Self> {
        let fact = a.factorize()?;
        Ok(Self { a, fact })
    }

    pub fn dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn solve(&self, b: &CVec) -> Result<CVec> {
        let mut x = self.fact.solve(b)?;
        let r = b - &self.a.dot(&x);
        let dx = self.fact.solve(&r)?;
        x += &dx;
        Ok(x)
    }

    pub fn solve_matrix(&self, b: &CMat) -> Result<CMat> {
        let n = self.a.nrows();
        let m = b.ncols();
        let mut out = Array2::zeros((n, m));
        for j in 0..m {
            let col = b.column(j).to_owned();
            out.column_mut(j).assign(&self.solve(&col)?);
        }
        Ok(out)
    }

    /// Reciprocal 1-norm condition estimate via Hager's method.
    pub fn rcond_estimate(&self) -> f64 {
        let n = self.a.nrows();
        let anorm = self.a.opnorm_one().unwrap_or(f64::INFINITY);
        // Hager iteration estimates ||A^-1||_1 from a few solves with A and A^H.
        let ah = dagger(&self.a);
        let fact_h = match ah.factorize() {
            Ok(f) => f,
            Err(_) => return 0.0,
        };
        let mut x: CVec = Array1::from_elem(n, C64::new(1.0 / n as f64, 0.0));
        let mut est = 0.0_f64;
        for _ in 0..5 {
            let y = match self.fact.solve(&x) {
                Ok(y) => y,
                Err(_) => return 0.0,
            };
            let ynorm: f64 = y.iter().map(|z| z.norm()).sum();
            est = est.max(ynorm);
            let xi: CVec = y.mapv(|z| {
                if z.is_zero() {
                    C64::new(1.0, 0.0)
                } else {
                    z / z.norm()
                }
            });
            let z = match fact_h.solve(&xi) {
                Ok(z) => z,
                Err(_) => return 0.0,
            };
            let (jmax, zmax) = z
                .iter()
                .enumerate()
                .map(|(j, v)| (j, v.norm()))
                .fold((0, 0.0), |acc, it| if it.1 > acc.1 { it } else { acc });
            let xnorm_dot: f64 = z
                .iter()
                .zip(x.iter())
                .map(|(zj, xj)| (zj.conj() * xj).re)
                .sum();
            if zmax <= xnorm_dot {
                break;
            }
            x = Array1::zeros(n);
            x[jmax] = C64::new(1.0, 0.0);
        }
        if est == 0.0 || anorm == 0.0 {
            return 0.0;
        }
        1.0 / (anorm * est)
    }

    /// Approximate null direction by inverse iteration; used to describe what
    /// makes a generator singular.
    pub fn null_direction(&self) -> CVec {
        let n = self.a.nrows();
        let mut x: CVec = Array1::from_shape_fn(n, |i| {
            C64::new(((i * 2654435761) % 1000) as f64 / 1000.0 + 0.1, 0.0)
        });
        for _ in 0..4 {
            if let Ok(y) = self.fact.solve(&x) {
                let norm: f64 = y.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
                if norm == 0.0 || !norm.is_finite() {
                    break;
                }
                x = y.mapv(|z| z / norm);
            } else {
                break;
            }
        }
        x
    }
}

/// Matrix exponential by degree-13 Pade approximation with scaling and
/// squaring (Higham 2005).
pub fn expm(a: &CMat) -> Result<CMat> {
    const THETA13: f64 = 5.371920351148152;
    const B: [f64; 14] = [
        64764752532480000.0,
        32382376266240000.0,
        7771770303897600.0,
        1187353796428800.0,
        129060195264000.0,
        10559470521600.0,
        670442572800.0,
        33522128640.0,
        1323241920.0,
        40840800.0,
        960960.0,
        16380.0,
        182.0,
        1.0,
    ];
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::Dimension(format!("expm of {}x{} matrix", n, a.ncols())));
    }
    let norm = a.opnorm_one()?;
    let s = if norm > THETA13 {
        (norm / THETA13).log2().ceil() as i32
    } else {
        0
    };
    let scale = C64::new(0.5_f64.powi(s), 0.0);
    let a = a.mapv(|z| z * scale);
    let eye = identity(n);
    let a2 = a.dot(&a);
    let a4 = a2.dot(&a2);
    let a6 = a4.dot(&a2);
    let u_inner = &a6.mapv(|z| z * B[13]) + &a4.mapv(|z| z * B[11]) + &a2.mapv(|z| z * B[9]);
    let u = a.dot(
        &(&a6.dot(&u_inner)
            + &a6.mapv(|z| z * B[7])
            + &a4.mapv(|z| z * B[5])
            + &a2.mapv(|z| z * B[3])
            + &eye.mapv(|z| z * B[1])),
    );
    let v_inner = &a6.mapv(|z| z * B[12]) + &a4.mapv(|z| z * B[10]) + &a2.mapv(|z| z * B[8]);
    let v = &a6.dot(&v_inner)
        + &a6.mapv(|z| z * B[6])
        + &a4.mapv(|z| z * B[4])
        + &a2.mapv(|z| z * B[2])
        + &eye.mapv(|z| z * B[0]);
    let lhs = &v - &u;
    let rhs = &v + &u;
    let mut x = LuSolver::new(lhs)?.solve_matrix(&rhs)?;
    for _ in 0..s {
        x = x.dot(&x);
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::array;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    #[test]
    fn eigh_dimer_closed_form() {
        // 2x2 eigenvalues (e1+e2)/2 +- sqrt((de/2)^2 + j^2)
        let h = array![[c(0.0, 0.0), c(-87.7, 0.0)], [c(-87.7, 0.0), c(120.0, 0.0)]];
        let (vals, vecs) = eigh_ascending(&h, 1e-12).unwrap();
        let disc = (60.0_f64.powi(2) + 87.7_f64.powi(2)).sqrt();
        assert_relative_eq!(vals[0], 60.0 - disc, epsilon = 1e-2);
        assert_relative_eq!(vals[1], 60.0 + disc, epsilon = 1e-2);
        // reconstruction residual
        let d = Array2::from_diag(&vals.mapv(|v| c(v, 0.0)));
        let rebuilt = vecs.dot(&d).dot(&dagger(&vecs));
        assert!(max_abs(&(&rebuilt - &h)) <= 1e-10 * max_abs(&h));
    }

    #[test]
    fn eigh_rejects_non_hermitian() {
        let a = array![[c(0.0, 0.0), c(1.0, 0.0)], [c(2.0, 0.0), c(0.0, 0.0)]];
        assert!(eigh_ascending(&a, 1e-12).is_err());
    }

    #[test]
    fn eigh_orthonormal_7x7() {
        let mut h: CMat = Array2::zeros((7, 7));
        let mut state = 88172645463325252u64;
        let mut rng = || {
            // xorshift, deterministic test data
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state as f64 / u64::MAX as f64) - 0.5
        };
        for i in 0..7 {
            for j in i..7 {
                let z = c(rng(), if i == j { 0.0 } else { rng() });
                h[(i, j)] = z;
                h[(j, i)] = z.conj();
            }
        }
        let (_, vecs) = eigh_ascending(&h, 1e-12).unwrap();
        let gram = dagger(&vecs).dot(&vecs);
        assert!(max_abs(&(&gram - &identity(7))) <= 1e-12);
    }

    #[test]
    fn expm_matches_diagonal() {
        let a = array![[c(-0.3, 0.4), c(0.0, 0.0)], [c(0.0, 0.0), c(0.1, -2.0)]];
        let e = expm(&a).unwrap();
        assert_relative_eq!(e[(0, 0)].re, (c(-0.3, 0.4)).exp().re, epsilon = 1e-13);
        assert_relative_eq!(e[(1, 1)].im, (c(0.1, -2.0)).exp().im, epsilon = 1e-12);
        assert_eq!(e[(0, 1)], C64::zero());
    }

    #[test]
    fn expm_unitary_for_anti_hermitian() {
        let h = array![[c(0.0, 0.0), c(-0.5, 0.0)], [c(-0.5, 0.0), c(0.8, 0.0)]];
        let a = h.mapv(|z| z * c(0.0, -1.0));
        let u = expm(&a).unwrap();
        let gram = dagger(&u).dot(&u);
        assert!(max_abs(&(&gram - &identity(2))) <= 1e-13);
    }

    #[test]
    fn lu_solver_roundtrip_and_rcond() {
        let a = array![
            [c(2.0, 1.0), c(0.3, 0.0), c(0.0, -0.2)],
            [c(0.5, 0.0), c(1.0, -1.0), c(0.1, 0.0)],
            [c(0.0, 0.1), c(0.2, 0.2), c(3.0, 0.0)]
        ];
        let b = array![c(1.0, 0.0), c(2.0, -1.0), c(0.0, 3.0)];
        let solver = LuSolver::new(a.clone()).unwrap();
        let x = solver.solve(&b).unwrap();
        let r = &b - &a.dot(&x);
        assert!(r.iter().map(|z| z.norm()).fold(0.0, f64::max) < 1e-13);
        let rc = solver.rcond_estimate();
        assert!(rc > 1e-3 && rc <= 1.0, "rcond {}", rc);
    }
}
