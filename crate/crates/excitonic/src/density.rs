//! Density matrix constructors and physicality checks.

use ndarray::Array2;
use num_complex::Complex64 as C64;

use crate::linalg::{eigh_ascending, hermiticity_residual, max_abs, outer, trace, CMat, CVec};
use crate::{Error, Result};

/// Pure state |m><m| localized on one basis element.
pub fn site_state(n: usize, m: usize) -> CMat {
    let mut rho = Array2::zeros((n, n));
    rho[(m, m)] = C64::new(1.0, 0.0);
    rho
}

/// |psi><psi| from an (unnormalized) ket.
pub fn pure_state(psi: &CVec) -> CMat {
    let norm: f64 = psi.iter().map(|z| z.norm_sqr()).sum();
    outer(psi, psi).mapv(|z| z / norm)
}

/// Equal-or-weighted classical mixture of site states.
pub fn site_mixture(n: usize, sites: &[usize]) -> CMat {
    let w = 1.0 / sites.len() as f64;
    let mut rho = Array2::zeros((n, n));
    for &m in sites {
        rho[(m, m)] += C64::new(w, 0.0);
    }
    rho
}

/// Validate Hermiticity, unit-or-less trace and positive semidefiniteness.
pub fn validate_density(rho: &CMat) -> Result<()> {
    let scale = max_abs(rho).max(1.0);
    let herm = hermiticity_residual(rho);
    if herm > 1e-12 * scale {
        return Err(Error::NotHermitian {
            residual: herm / scale,
            tol: 1e-12,
        });
    }
    let tr = trace(rho);
    if tr.im.abs() > 1e-12 || tr.re < -1e-12 || tr.re > 1.0 + 1e-9 {
        return Err(Error::Config(format!(
            "density trace {tr} outside [0, 1]"
        )));
    }
    let (vals, _) = eigh_ascending(rho, 1e-10)?;
    if vals[0] < -1e-12 {
        return Err(Error::Config(format!(
            "density has negative eigenvalue {:.3e}",
            vals[0]
        )));
    }
    Ok(())
}

/// Smallest eigenvalue, for positivity monitoring along trajectories.
pub fn min_population_eigenvalue(rho: &CMat) -> Result<f64> {
    let (vals, _) = eigh_ascending(rho, 1e-6)?;
    Ok(vals[0])
}
