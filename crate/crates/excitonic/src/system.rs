//! Exciton model definition: site energies, couplings, bath and sink
//! parameters, plus Hamiltonian construction and diagonalization.
//!
//! The single-exciton Hamiltonian is
//!
//!   H_e = sum_m (eps_m + lambda) |m><m| + sum_{m<n} J_mn (|m><n| + |n><m|)
//!
//! with the uniform reorganization energy lambda on the diagonal. Everything
//! here is stored in cm^-1 / K / fs at the boundary; generator modules convert
//! to rad/fs internally.

use ndarray::{Array1, Array2};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::linalg::{eigh_ascending, CMat};
use crate::units::cm1_to_rad_fs;
use crate::{Error, Result};

/// Complete single-exciton model of a pigment network with one trap site and
/// a uniform loss channel. All types here are immutable after construction
/// and safe to share across parallel workers.
#[derive(Clone, Debug)]
pub struct ExcitonSystem {
    pub site_energies_cm1: Array1<f64>,
    /// Symmetric coupling matrix with zero diagonal, cm^-1.
    pub couplings_cm1: Array2<f64>,
    pub reorganization_cm1: f64,
    /// Bath correlation time 1/gamma in fs.
    pub bath_correlation_fs: f64,
    pub temperature_k: f64,
    /// 0-based index of the site connected to the reaction center.
    pub trap_site: usize,
    /// Trapping rate kappa in 1/fs.
    pub trap_rate_per_fs: f64,
    /// Loss rate Gamma in 1/fs.
    pub loss_rate_per_fs: f64,
    /// Per-site transition dipoles (arbitrary magnitude units).
    pub dipoles: Vec<[f64; 3]>,
}

impl ExcitonSystem {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        site_energies_cm1: Array1<f64>,
        couplings_cm1: Array2<f64>,
        reorganization_cm1: f64,
        bath_correlation_fs: f64,
        temperature_k: f64,
        trap_site: usize,
        trap_rate_per_fs: f64,
        loss_rate_per_fs: f64,
        dipoles: Vec<[f64; 3]>,
    ) -> Result<Self> {
        let n = site_energies_cm1.len();
        if n == 0 {
            return Err(Error::Config("system needs at least one site".into()));
        }
        if couplings_cm1.dim() != (n, n) {
            return Err(Error::Config(format!(
                "coupling matrix is {:?}, expected {}x{}",
                couplings_cm1.dim(),
                n,
                n
            )));
        }
        for i in 0..n {
            if couplings_cm1[(i, i)] != 0.0 {
                return Err(Error::Config(format!("coupling diagonal nonzero at site {i}")));
            }
            for j in 0..n {
                if (couplings_cm1[(i, j)] - couplings_cm1[(j, i)]).abs() > 1e-12 {
                    return Err(Error::Config(format!("couplings not symmetric at ({i},{j})")));
                }
            }
        }
        if reorganization_cm1 < 0.0 {
            return Err(Error::Config("reorganization energy must be >= 0".into()));
        }
        if bath_correlation_fs <= 0.0 {
            return Err(Error::Config("bath correlation time must be > 0".into()));
        }
        if temperature_k <= 0.0 {
            return Err(Error::Config("temperature must be > 0".into()));
        }
        if trap_site >= n {
            return Err(Error::Config(format!(
                "trap site {trap_site} out of range for {n} sites"
            )));
        }
        if trap_rate_per_fs < 0.0 || loss_rate_per_fs < 0.0 {
            return Err(Error::Config("trap and loss rates must be >= 0".into()));
        }
        if dipoles.len() != n {
            return Err(Error::Config(format!(
                "{} dipoles given for {} sites",
                dipoles.len(),
                n
            )));
        }
        Ok(Self {
            site_energies_cm1,
            couplings_cm1,
            reorganization_cm1,
            bath_correlation_fs,
            temperature_k,
            trap_site,
            trap_rate_per_fs,
            loss_rate_per_fs,
            dipoles,
        })
    }

    pub fn n_sites(&self) -> usize {
        self.site_energies_cm1.len()
    }

    /// Bath correlation decay rate gamma in 1/fs.
    pub fn gamma_per_fs(&self) -> f64 {
        1.0 / self.bath_correlation_fs
    }

    /// H_e in cm^-1: diagonal eps_m + lambda, off-diagonal J_mn.
    pub fn hamiltonian_cm1(&self) -> Array2<f64> {
        let n = self.n_sites();
        let mut h = self.couplings_cm1.clone();
        for m in 0..n {
            h[(m, m)] = self.site_energies_cm1[m] + self.reorganization_cm1;
        }
        h
    }

    /// H_e as a complex matrix in rad/fs.
    pub fn hamiltonian_rad_fs(&self) -> CMat {
        self.hamiltonian_cm1().mapv(|e| C64::new(cm1_to_rad_fs(e), 0.0))
    }

    /// Copy with a different reorganization energy (used by sweeps).
    pub fn with_reorganization(&self, lambda_cm1: f64) -> Self {
        let mut s = self.clone();
        s.reorganization_cm1 = lambda_cm1;
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: SystemFile = serde_json::from_str(text)?;
        file.into_system()
    }

    pub fn from_json_file(path: &std::path::Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&SystemFile::from_system(self))?)
    }
}

/// On-disk system definition.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SystemFile {
    pub site_energies_cm1: Vec<f64>,
    pub couplings_cm1: Vec<Vec<f64>>,
    pub reorganization_cm1: f64,
    pub bath_correlation_fs: f64,
    #[serde(rename = "temperature_K")]
    pub temperature_k: f64,
    pub trap: TrapFile,
    pub loss_rate_per_ns: f64,
    pub dipoles: Vec<[f64; 3]>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrapFile {
    /// 0-based site index.
    pub site: usize,
    pub rate_per_ps: f64,
}

impl SystemFile {
    pub fn into_system(self) -> Result<ExcitonSystem> {
        let n = self.site_energies_cm1.len();
        let mut j = Array2::zeros((n, n));
        if self.couplings_cm1.len() != n {
            return Err(Error::Config("couplings row count mismatch".into()));
        }
        for (i, row) in self.couplings_cm1.iter().enumerate() {
            if row.len() != n {
                return Err(Error::Config(format!("couplings row {i} length mismatch")));
            }
            for (k, v) in row.iter().enumerate() {
                j[(i, k)] = *v;
            }
        }
        ExcitonSystem::new(
            Array1::from_vec(self.site_energies_cm1),
            j,
            self.reorganization_cm1,
            self.bath_correlation_fs,
            self.temperature_k,
            self.trap.site,
            self.trap.rate_per_ps * 1e-3,
            self.loss_rate_per_ns * 1e-6,
            self.dipoles,
        )
    }

    pub fn from_system(s: &ExcitonSystem) -> Self {
        let n = s.n_sites();
        SystemFile {
            site_energies_cm1: s.site_energies_cm1.to_vec(),
            couplings_cm1: (0..n)
                .map(|i| (0..n).map(|j| s.couplings_cm1[(i, j)]).collect())
                .collect(),
            reorganization_cm1: s.reorganization_cm1,
            bath_correlation_fs: s.bath_correlation_fs,
            temperature_k: s.temperature_k,
            trap: TrapFile {
                site: s.trap_site,
                rate_per_ps: s.trap_rate_per_fs * 1e3,
            },
            loss_rate_per_ns: s.loss_rate_per_fs * 1e6,
            dipoles: s.dipoles.clone(),
        }
    }
}

/// Eigenbasis of an excitonic Hamiltonian: ascending energies, orthonormal
/// eigenvectors as columns (site m, exciton alpha), and any near-degenerate
/// pairs flagged for the secular machinery.
#[derive(Clone, Debug)]
pub struct ExcitonBasis {
    /// Ascending eigenvalues, in the units of the input Hamiltonian.
    pub energies: Array1<f64>,
    /// Column alpha is the exciton |alpha> expanded over the input basis.
    pub vectors: CMat,
    /// Pairs with |E_a - E_b| below the degeneracy tolerance.
    pub degenerate_pairs: Vec<(usize, usize)>,
}

/// Degeneracy flag threshold in cm^-1.
pub const DEGENERACY_TOL_CM1: f64 = 1e-9;

/// Diagonalize a Hermitian Hamiltonian given in cm^-1.
///
/// Eigenvalues come back ascending; the largest-magnitude component of each
/// eigenvector is made real positive so downstream dipole projections are
/// reproducible. Non-Hermitian input is rejected.
pub fn diagonalize(h: &CMat) -> Result<ExcitonBasis> {
    diagonalize_with_tol(h, DEGENERACY_TOL_CM1)
}

pub fn diagonalize_with_tol(h: &CMat, degeneracy_tol: f64) -> Result<ExcitonBasis> {
    let (energies, vectors) = eigh_ascending(h, 1e-10)?;
    let mut degenerate_pairs = Vec::new();
    for i in 1..energies.len() {
        if (energies[i] - energies[i - 1]).abs() < degeneracy_tol {
            degenerate_pairs.push((i - 1, i));
        }
    }
    Ok(ExcitonBasis {
        energies,
        vectors,
        degenerate_pairs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{dagger, identity, max_abs};
    use approx::assert_relative_eq;
    use ndarray::array;

    pub(crate) fn dimer(lambda_cm1: f64) -> ExcitonSystem {
        ExcitonSystem::new(
            array![0.0, 120.0],
            array![[0.0, -87.7], [-87.7, 0.0]],
            lambda_cm1,
            50.0,
            300.0,
            1,
            1e-3,
            1e-6,
            vec![[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
        )
        .unwrap()
    }

    #[test]
    fn hamiltonian_entries() {
        let h = dimer(0.0).hamiltonian_cm1();
        assert_eq!(h[(0, 0)], 0.0);
        assert_eq!(h[(1, 1)], 120.0);
        assert_eq!(h[(0, 1)], -87.7);
        assert_eq!(h[(1, 0)], -87.7);

        // uniform diagonal shift by lambda
        let h35 = dimer(35.0).hamiltonian_cm1();
        assert_eq!(h35[(0, 0)], 35.0);
        assert_eq!(h35[(1, 1)], 155.0);
        assert_eq!(h35[(0, 1)], -87.7);
    }

    #[test]
    fn uncoupled_limit_is_diagonal() {
        let s = ExcitonSystem::new(
            array![10.0, 20.0, 30.0],
            Array2::zeros((3, 3)),
            0.0,
            50.0,
            300.0,
            0,
            0.0,
            0.0,
            vec![[1.0, 0.0, 0.0]; 3],
        )
        .unwrap();
        let h = s.hamiltonian_cm1();
        for i in 0..3 {
            for j in 0..3 {
                if i != j {
                    assert_eq!(h[(i, j)], 0.0);
                }
            }
        }
        assert_eq!(h[(2, 2)], 30.0);
    }

    #[test]
    fn eigenvalue_shift_under_uniform_lambda() {
        let b0 = diagonalize(&dimer(0.0).hamiltonian_rad_fs()).unwrap();
        let b35 = diagonalize(&dimer(35.0).hamiltonian_rad_fs()).unwrap();
        let shift = cm1_to_rad_fs(35.0);
        for k in 0..2 {
            assert_relative_eq!(b35.energies[k], b0.energies[k] + shift, epsilon = 1e-12);
        }
    }

    #[test]
    fn diagonal_input_diagonalizes_to_sorted_identity() {
        let h = array![
            [C64::new(3.0, 0.0), C64::new(0.0, 0.0)],
            [C64::new(0.0, 0.0), C64::new(1.0, 0.0)]
        ];
        let b = diagonalize(&h).unwrap();
        assert_eq!(b.energies[0], 1.0);
        assert_eq!(b.energies[1], 3.0);
        // identity permutation eigenvectors
        assert_relative_eq!(b.vectors[(1, 0)].re, 1.0, epsilon = 1e-14);
        assert_relative_eq!(b.vectors[(0, 1)].re, 1.0, epsilon = 1e-14);
    }

    #[test]
    fn basis_is_unitary() {
        let b = diagonalize(&dimer(35.0).hamiltonian_rad_fs()).unwrap();
        let gram = dagger(&b.vectors).dot(&b.vectors);
        assert!(max_abs(&(&gram - &identity(2))) <= 1e-12);
        assert!(b.degenerate_pairs.is_empty());
    }

    #[test]
    fn invalid_systems_rejected() {
        // asymmetric couplings
        assert!(ExcitonSystem::new(
            array![0.0, 1.0],
            array![[0.0, 1.0], [2.0, 0.0]],
            0.0,
            50.0,
            300.0,
            0,
            0.0,
            0.0,
            vec![[1.0, 0.0, 0.0]; 2],
        )
        .is_err());
        // trap out of range
        assert!(ExcitonSystem::new(
            array![0.0, 1.0],
            Array2::zeros((2, 2)),
            0.0,
            50.0,
            300.0,
            2,
            0.0,
            0.0,
            vec![[1.0, 0.0, 0.0]; 2],
        )
        .is_err());
    }

    #[test]
    fn json_roundtrip() {
        let s = dimer(35.0);
        let text = s.to_json().unwrap();
        let back = ExcitonSystem::from_json(&text).unwrap();
        assert_eq!(back.trap_site, 1);
        assert_relative_eq!(back.trap_rate_per_fs, 1e-3);
        assert_relative_eq!(back.loss_rate_per_fs, 1e-6);
        assert_eq!(back.site_energies_cm1[1], 120.0);
    }
}
