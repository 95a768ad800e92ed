//! Secular Redfield master equation in Lindblad form, with trapping and loss
//! channels, for a Drude-Lorentz bath.
//!
//! The generator splits as M = M_H + M_decoherence + M_trap + M_loss.
//! M_decoherence carries relaxation operators |a><b| between excitons and
//! pure-dephasing operators |a><a|, built from the spectral density
//!
//!   J(w) = 2 lambda gamma w / (pi (w^2 + gamma^2))
//!
//! evaluated at the excitonic transition frequencies. Downhill/uphill rates
//! carry Bose-Einstein factors n(w)+1 and n(w), so every relaxation pair
//! satisfies detailed balance. Pure dephasing enters through one collective
//! operator per site, A_m = sum_a <a|V_m|a> |a><a|, at the w -> 0 rate
//! 4 lambda k_B T / gamma -- linear in temperature and the weak-coupling
//! limit of the hierarchy. A secular Lamb shift from the same bath kernel
//! (diagonal in the exciton basis, grouped under M_decoherence) keeps the
//! coherence beat frequencies consistent with the hierarchy as well.
//!
//! Trapping and loss are anti-commutator sinks,
//! M_trap rho = -kappa {P_trap, rho} and M_loss rho = -Gamma {1, rho};
//! both only remove trace.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2};
use num_complex::Complex64 as C64;

use crate::integrate::{integrate_grid, RkOptions};
use crate::linalg::{expm, CMat, CVec};
use crate::superop::{
    anticommutator_superoperator, commutator_superoperator, devectorize, lindblad_superoperator,
    vectorize, Superoperator,
};
use crate::system::{diagonalize, ExcitonBasis, ExcitonSystem};
use crate::units::{cm1_to_rad_fs, rad_fs_to_cm1, thermal_energy_rad_fs};
use crate::{Error, Result};

/// Drude-Lorentz bath parameters in internal units (rad/fs).
#[derive(Clone, Copy, Debug)]
pub struct DrudeBath {
    /// Reorganization energy lambda.
    pub lambda: f64,
    /// Bath correlation decay rate gamma (inverse correlation time).
    pub gamma: f64,
    /// Thermal energy k_B T.
    pub kbt: f64,
}

impl DrudeBath {
    pub fn new(lambda: f64, gamma: f64, kbt: f64) -> Result<Self> {
        if lambda < 0.0 || gamma <= 0.0 || kbt <= 0.0 {
            return Err(Error::Config(
                "bath requires lambda >= 0, gamma > 0, T > 0".into(),
            ));
        }
        Ok(Self { lambda, gamma, kbt })
    }

    pub fn from_cm1(lambda_cm1: f64, bath_correlation_fs: f64, temperature_k: f64) -> Result<Self> {
        Self::new(
            cm1_to_rad_fs(lambda_cm1),
            1.0 / bath_correlation_fs,
            thermal_energy_rad_fs(temperature_k),
        )
    }

    pub fn from_system(system: &ExcitonSystem) -> Result<Self> {
        Self::from_cm1(
            system.reorganization_cm1,
            system.bath_correlation_fs,
            system.temperature_k,
        )
    }

    /// J(w), odd in w, maximal at w = gamma.
    pub fn spectral_density(&self, omega: f64) -> f64 {
        2.0 * self.lambda * self.gamma * omega
            / (std::f64::consts::PI * (omega * omega + self.gamma * self.gamma))
    }

    /// Bose-Einstein occupation at w > 0.
    pub fn bose_einstein(&self, omega: f64) -> f64 {
        1.0 / ((omega / self.kbt).exp() - 1.0)
    }

    /// 2 pi J(w) n(w) in the w -> 0 limit: 4 lambda k_B T / gamma.
    pub fn dephasing_prefactor(&self) -> f64 {
        4.0 * self.lambda * self.kbt / self.gamma
    }

    /// Lamb-shift kernel S(w) = Im int_0^inf c(tau) e^{i w tau} dtau of the
    /// high-temperature exponential bath expansion. S(0) = -lambda.
    pub fn lamb_shift_kernel(&self, omega: f64) -> f64 {
        bath_modes(self, 0)
            .iter()
            .map(|m| (m.coeff.im * m.decay + m.coeff.re * omega) / (m.decay * m.decay + omega * omega))
            .sum()
    }
}

/// One exponential of the bath correlation expansion
/// c(t) = sum_k c_k e^{-nu_k t}.
#[derive(Clone, Copy, Debug)]
pub struct BathMode {
    /// Prefactor c_k in (rad/fs)^2.
    pub coeff: C64,
    /// Decay rate nu_k in 1/fs.
    pub decay: f64,
}

/// High-temperature Drude term plus `n_matsubara` Matsubara exponentials.
pub fn bath_modes(bath: &DrudeBath, n_matsubara: usize) -> Vec<BathMode> {
    let mut modes = Vec::with_capacity(1 + n_matsubara);
    let half_beta_gamma = bath.gamma / (2.0 * bath.kbt);
    let cot = 1.0 / half_beta_gamma.tan();
    modes.push(BathMode {
        coeff: C64::new(bath.lambda * bath.gamma * cot, -bath.lambda * bath.gamma),
        decay: bath.gamma,
    });
    for k in 1..=n_matsubara {
        let nu = 2.0 * std::f64::consts::PI * k as f64 * bath.kbt;
        let c =
            4.0 * bath.lambda * bath.gamma * bath.kbt * nu / (nu * nu - bath.gamma * bath.gamma);
        modes.push(BathMode {
            coeff: C64::new(c, 0.0),
            decay: nu,
        });
    }
    modes
}

/// Free-function form of the spectral density.
pub fn drude_spectral_density(omega: f64, bath: &DrudeBath) -> f64 {
    bath.spectral_density(omega)
}

/// Population relaxation channel between excitons, in ascending-energy
/// indexing of the exciton basis.
#[derive(Clone, Copy, Debug)]
pub struct RelaxationChannel {
    pub from: usize,
    pub to: usize,
    pub rate: f64,
}

/// One Lindblad operator with its rate; the adjoint and op^dagger op are
/// cached for the propagation kernel.
#[derive(Clone, Debug)]
pub struct LindbladChannel {
    pub op: CMat,
    op_dag: CMat,
    op2: CMat,
    pub rate: f64,
}

impl LindbladChannel {
    pub fn new(op: CMat, rate: f64) -> Self {
        let op_dag = crate::linalg::dagger(&op);
        let op2 = op_dag.dot(&op);
        Self {
            op,
            op_dag,
            op2,
            rate,
        }
    }
}

/// Assembled secular model: Hamiltonian, Lindblad channels and sinks, all in
/// the basis the Hamiltonian was supplied in.
#[derive(Clone, Debug)]
pub struct LindbladModel {
    pub dim: usize,
    /// Bare excitonic Hamiltonian, rad/fs.
    pub hamiltonian: CMat,
    pub basis: ExcitonBasis,
    pub bath: DrudeBath,
    pub relaxation: Vec<RelaxationChannel>,
    /// Pure-dephasing rate of each exciton coherence (a, b, rate), the decay
    /// the site-projected dephasing operators induce on rho_ab.
    pub dephasing: Vec<(usize, usize, f64)>,
    pub channels: Vec<LindbladChannel>,
    /// Bath-induced level shift per exciton (secular Lamb shift). Counted as
    /// part of M_decoherence so M_H stays the bare commutator.
    pub lamb_shift: Vec<f64>,
    /// H_LS in the input basis.
    pub h_lamb: CMat,
    pub trap_site: Option<usize>,
    pub trap_rate: f64,
    pub loss_rate: f64,
}

/// Secular Redfield generator for an exciton system; errors on degenerate
/// exciton levels where the secular rates are ill-defined.
pub fn build_redfield_generator(system: &ExcitonSystem) -> Result<LindbladModel> {
    let n = system.n_sites();
    let site_vecs: Vec<CVec> = (0..n)
        .map(|m| {
            let mut u = Array1::zeros(n);
            u[m] = C64::new(1.0, 0.0);
            u
        })
        .collect();
    build_generic(
        &system.hamiltonian_rad_fs(),
        &site_vecs,
        &DrudeBath::from_system(system)?,
        Some(system.trap_site),
        system.trap_rate_per_fs,
        system.loss_rate_per_fs,
    )
}

/// Generic builder over an arbitrary Hermitian Hamiltonian (rad/fs) and a set
/// of bath coupling projectors V_m = u_m u_m^dagger. The trap site indexes the
/// input basis.
pub fn build_generic(
    hamiltonian: &CMat,
    site_vecs: &[CVec],
    bath: &DrudeBath,
    trap_site: Option<usize>,
    trap_rate: f64,
    loss_rate: f64,
) -> Result<LindbladModel> {
    let n = hamiltonian.nrows();
    let basis = diagonalize(hamiltonian)?;
    if let Some(&(a, b)) = basis.degenerate_pairs.first() {
        return Err(Error::DegenerateSpectrum {
            a,
            b,
            gap_cm1: rad_fs_to_cm1((basis.energies[b] - basis.energies[a]).abs()),
        });
    }

    let exciton = |a: usize| basis.vectors.column(a).to_owned();
    let overlap2 = |a: usize, b: usize| -> f64 {
        site_vecs
            .iter()
            .map(|u| {
                let pa: C64 = exciton(a).iter().zip(u.iter()).map(|(v, w)| v.conj() * w).sum();
                let pb: C64 = exciton(b).iter().zip(u.iter()).map(|(v, w)| v.conj() * w).sum();
                pa.norm_sqr() * pb.norm_sqr()
            })
            .sum()
    };

    let mut relaxation = Vec::new();
    let mut channels = Vec::new();
    for b in 0..n {
        for a in 0..b {
            let omega = basis.energies[b] - basis.energies[a];
            let overlap = overlap2(a, b);
            if overlap == 0.0 || bath.lambda == 0.0 {
                continue;
            }
            let j = bath.spectral_density(omega);
            let nbe = bath.bose_einstein(omega);
            let down = 2.0 * std::f64::consts::PI * j * (nbe + 1.0) * overlap;
            let up = 2.0 * std::f64::consts::PI * j * nbe * overlap;
            if down > 0.0 {
                relaxation.push(RelaxationChannel {
                    from: b,
                    to: a,
                    rate: down,
                });
                channels.push(LindbladChannel::new(
                    crate::linalg::outer(&exciton(a), &exciton(b)),
                    down,
                ));
            }
            if up > 0.0 {
                relaxation.push(RelaxationChannel {
                    from: a,
                    to: b,
                    rate: up,
                });
                channels.push(LindbladChannel::new(
                    crate::linalg::outer(&exciton(b), &exciton(a)),
                    up,
                ));
            }
        }
    }

    // Pure dephasing: one collective operator per site,
    // A_m = sum_a <a|V_m|a> |a><a|, with the w -> 0 rate. This is the
    // zero-frequency secular operator, and it reproduces the hierarchy's
    // weak-coupling dephasing (an independent projector per exciton would
    // double-count it).
    let mut dephasing = Vec::new();
    if bath.lambda > 0.0 {
        let pref = bath.dephasing_prefactor();
        let site_weight = |m: usize, a: usize| -> f64 {
            let va = exciton(a);
            let p: C64 = va
                .iter()
                .zip(site_vecs[m].iter())
                .map(|(v, w)| v.conj() * w)
                .sum();
            p.norm_sqr()
        };
        for m in 0..site_vecs.len() {
            let mut op: CMat = Array2::zeros((n, n));
            for a in 0..n {
                let va = exciton(a);
                let w = site_weight(m, a);
                for i in 0..n {
                    for j in 0..n {
                        op[(i, j)] += va[i] * va[j].conj() * w;
                    }
                }
            }
            channels.push(LindbladChannel::new(op, pref));
        }
        for b in 0..n {
            for a in 0..b {
                let rate: f64 = (0..site_vecs.len())
                    .map(|m| 0.5 * pref * (site_weight(m, a) - site_weight(m, b)).powi(2))
                    .sum();
                dephasing.push((a, b, rate));
            }
        }
    }

    // Secular Lamb shift from the same exponential kernel the hierarchy uses:
    // s_a = sum_m [ sum_{b!=a} |<a|V_m|b>|^2 S(E_a - E_b) + |<a|V_m|a>|^2 S(0) ].
    let mut lamb_shift = vec![0.0; n];
    let mut h_lamb: CMat = Array2::zeros((n, n));
    if bath.lambda > 0.0 {
        for a in 0..n {
            let va = exciton(a);
            let mut s_a = 0.0;
            for u in site_vecs {
                let pa: C64 = va.iter().zip(u.iter()).map(|(v, w)| v.conj() * w).sum();
                s_a += pa.norm_sqr().powi(2) * bath.lamb_shift_kernel(0.0);
                for b in 0..n {
                    if b == a {
                        continue;
                    }
                    let vb = exciton(b);
                    let pab: C64 = {
                        let left: C64 =
                            va.iter().zip(u.iter()).map(|(v, w)| v.conj() * w).sum();
                        let right: C64 =
                            u.iter().zip(vb.iter()).map(|(w, v)| w.conj() * v).sum();
                        left * right
                    };
                    s_a += pab.norm_sqr()
                        * bath.lamb_shift_kernel(basis.energies[a] - basis.energies[b]);
                }
            }
            lamb_shift[a] = s_a;
            for i in 0..n {
                for j in 0..n {
                    h_lamb[(i, j)] += va[i] * va[j].conj() * s_a;
                }
            }
        }
    }

    Ok(LindbladModel {
        dim: n,
        hamiltonian: hamiltonian.clone(),
        basis,
        bath: *bath,
        relaxation,
        dephasing,
        channels,
        lamb_shift,
        h_lamb,
        trap_site,
        trap_rate,
        loss_rate,
    })
}

/// M_trap and M_loss as superoperators.
pub fn build_trap_loss(
    dim: usize,
    trap_site: usize,
    trap_rate: f64,
    loss_rate: f64,
) -> (Superoperator, Superoperator) {
    let mut p: CMat = Array2::zeros((dim, dim));
    p[(trap_site, trap_site)] = C64::new(1.0, 0.0);
    let trap = anticommutator_superoperator(&p, trap_rate);
    let loss = anticommutator_superoperator(&Array2::eye(dim), loss_rate);
    (trap, loss)
}

impl LindbladModel {
    pub fn coherent_superoperator(&self) -> Superoperator {
        commutator_superoperator(&self.hamiltonian)
    }

    pub fn decoherence_superoperator(&self) -> Superoperator {
        let mut s = commutator_superoperator(&self.h_lamb);
        for ch in &self.channels {
            s = s
                .add(&lindblad_superoperator(&ch.op, ch.rate))
                .expect("same dim");
        }
        s
    }

    pub fn trap_superoperator(&self) -> Superoperator {
        match self.trap_site {
            Some(m) => build_trap_loss(self.dim, m, self.trap_rate, self.loss_rate).0,
            None => Superoperator::zero(self.dim),
        }
    }

    pub fn loss_superoperator(&self) -> Superoperator {
        anticommutator_superoperator(&Array2::eye(self.dim), self.loss_rate)
    }

    /// Full generator M = M_H + M_decoherence + M_trap + M_loss.
    pub fn generator(&self) -> Superoperator {
        self.coherent_superoperator()
            .add(&self.decoherence_superoperator())
            .expect("same dim")
            .add(&self.trap_superoperator())
            .expect("same dim")
            .add(&self.loss_superoperator())
            .expect("same dim")
    }

    /// No-jump generator: M with every jump term L rho L^dagger removed,
    /// leaving the anti-Hermitian damping halves plus trap and loss.
    pub fn no_jump_generator(&self) -> Superoperator {
        let mut s = self
            .coherent_superoperator()
            .add(&commutator_superoperator(&self.h_lamb))
            .expect("same dim")
            .add(&self.trap_superoperator())
            .expect("same dim")
            .add(&self.loss_superoperator())
            .expect("same dim");
        for ch in &self.channels {
            s = s
                .add(&anticommutator_superoperator(&ch.op2, 0.5 * ch.rate))
                .expect("same dim");
        }
        s
    }

    /// Matrix-free right-hand side; `jumps` disables the L rho L^dagger terms
    /// for no-jump propagation.
    pub fn apply(&self, rho: &CMat, out: &mut CMat, ws: &mut RhsWorkspace, jumps: bool) {
        let n = self.dim;
        let minus_i = C64::new(0.0, -1.0);
        // -i (H rho - rho H), with the Lamb-shifted Hamiltonian
        general_mat_mul(minus_i, &self.hamiltonian, rho, C64::new(0.0, 0.0), out);
        general_mat_mul(-minus_i, rho, &self.hamiltonian, C64::new(1.0, 0.0), out);
        general_mat_mul(minus_i, &self.h_lamb, rho, C64::new(1.0, 0.0), out);
        general_mat_mul(-minus_i, rho, &self.h_lamb, C64::new(1.0, 0.0), out);

        let zero = C64::new(0.0, 0.0);
        let one = C64::new(1.0, 0.0);
        for ch in &self.channels {
            let half = C64::new(-0.5 * ch.rate, 0.0);
            // -rate/2 (L^dagger L rho + rho L^dagger L)
            general_mat_mul(half, &ch.op2, rho, one, out);
            general_mat_mul(half, rho, &ch.op2, one, out);
            if jumps {
                // + rate L rho L^dagger
                general_mat_mul(one, &ch.op, rho, zero, &mut ws.m1);
                general_mat_mul(C64::new(ch.rate, 0.0), &ws.m1, &ch.op_dag, one, out);
            }
        }

        if let Some(m) = self.trap_site {
            let k = self.trap_rate;
            for j in 0..n {
                out[(m, j)] -= rho[(m, j)] * k;
                out[(j, m)] -= rho[(j, m)] * k;
            }
        }
        if self.loss_rate != 0.0 {
            let g = 2.0 * self.loss_rate;
            for i in 0..n {
                for j in 0..n {
                    out[(i, j)] -= rho[(i, j)] * g;
                }
            }
        }
    }

    /// Propagate, invoking the observer at every grid time.
    pub fn propagate_observe<O>(
        &self,
        rho0: &CMat,
        t_grid: &[f64],
        opts: &RkOptions,
        mut observer: O,
    ) -> Result<()>
    where
        O: FnMut(usize, f64, &CMat),
    {
        let n = self.dim;
        let mut ws = RhsWorkspace::new(n);
        let mut rho_buf: CMat = Array2::zeros((n, n));
        let mut out_buf: CMat = Array2::zeros((n, n));
        let rhs = |_t: f64, y: &CVec, dy: &mut CVec| {
            copy_vec_to_mat(y, &mut rho_buf);
            self.apply(&rho_buf, &mut out_buf, &mut ws, true);
            copy_mat_to_vec(&out_buf, dy);
        };
        integrate_grid(rhs, vectorize(rho0), t_grid, opts, |k, t, y| {
            observer(k, t, &devectorize(y, n))
        })
    }

    pub fn propagate(&self, rho0: &CMat, t_grid: &[f64], opts: &RkOptions) -> Result<Vec<CMat>> {
        let mut traj = Vec::with_capacity(t_grid.len());
        self.propagate_observe(rho0, t_grid, opts, |_, _, rho| traj.push(rho.clone()))?;
        Ok(traj)
    }
}

/// Scratch matrix reused across right-hand-side evaluations.
#[derive(Clone, Debug)]
pub struct RhsWorkspace {
    m1: CMat,
}

impl RhsWorkspace {
    pub fn new(n: usize) -> Self {
        Self {
            m1: Array2::zeros((n, n)),
        }
    }
}

pub(crate) fn copy_vec_to_mat(v: &CVec, m: &mut CMat) {
    let n = m.nrows();
    for j in 0..n {
        for i in 0..n {
            m[(i, j)] = v[i + j * n];
        }
    }
}

pub(crate) fn copy_mat_to_vec(m: &CMat, v: &mut CVec) {
    let n = m.nrows();
    for j in 0..n {
        for i in 0..n {
            v[i + j * n] = m[(i, j)];
        }
    }
}

/// Propagate under an explicit superoperator (dense path).
pub fn propagate_superop(
    m: &Superoperator,
    rho0: &CMat,
    t_grid: &[f64],
    opts: &RkOptions,
) -> Result<Vec<CMat>> {
    let n = m.dim;
    let traj = crate::integrate::integrate_collect(
        |_t, y, dy| dy.assign(&m.matrix.dot(y)),
        vectorize(rho0),
        t_grid,
        opts,
    )?;
    Ok(traj.iter().map(|v| devectorize(v, n)).collect())
}

/// Propagate by repeated matrix exponentials over a uniform grid.
pub fn propagate_expm(m: &Superoperator, rho0: &CMat, t_grid: &[f64]) -> Result<Vec<CMat>> {
    let n = m.dim;
    let mut out = Vec::with_capacity(t_grid.len());
    let mut v = vectorize(rho0);
    out.push(rho0.clone());
    let mut cached: Option<(f64, CMat)> = None;
    for w in t_grid.windows(2) {
        let dt = w[1] - w[0];
        let propagator = match &cached {
            Some((cdt, p)) if (cdt - dt).abs() < 1e-12 * dt.abs().max(1.0) => p.clone(),
            _ => {
                let p = expm(&m.matrix.mapv(|z| z * C64::new(dt, 0.0)))?;
                cached = Some((dt, p.clone()));
                p
            }
        };
        v = propagator.dot(&v);
        out.push(devectorize(&v, n));
    }
    Ok(out)
}

/// Thermal state of H at inverse temperature 1/kbt.
pub fn gibbs_state(hamiltonian: &CMat, kbt: f64) -> Result<CMat> {
    let basis = diagonalize(hamiltonian)?;
    let e0 = basis.energies[0];
    let weights: Vec<f64> = basis
        .energies
        .iter()
        .map(|e| (-(e - e0) / kbt).exp())
        .collect();
    let z: f64 = weights.iter().sum();
    let n = hamiltonian.nrows();
    let mut rho: CMat = Array2::zeros((n, n));
    for (a, w) in weights.iter().enumerate() {
        let v = basis.vectors.column(a);
        for i in 0..n {
            for j in 0..n {
                rho[(i, j)] += v[i] * v[j].conj() * (w / z);
            }
        }
    }
    Ok(rho)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::site_state;
    use crate::linalg::{max_abs, trace};
    use crate::units::thermal_energy_cm1;
    use approx::assert_relative_eq;
    use ndarray::array;

    fn dimer(lambda_cm1: f64) -> ExcitonSystem {
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
    fn spectral_density_shape() {
        let bath = DrudeBath::from_cm1(35.0, 50.0, 300.0).unwrap();
        assert_eq!(bath.spectral_density(0.0), 0.0);
        // J(gamma) = lambda / pi
        assert_relative_eq!(
            bath.spectral_density(bath.gamma),
            bath.lambda / std::f64::consts::PI,
            max_relative = 1e-14
        );
        // odd function
        for k in 1..20 {
            let w = 0.003 * k as f64;
            assert_relative_eq!(
                bath.spectral_density(-w),
                -bath.spectral_density(w),
                max_relative = 1e-14
            );
        }
        // maximum at w = gamma
        let jd = bath.spectral_density(bath.gamma);
        assert!(jd > bath.spectral_density(bath.gamma * 0.9));
        assert!(jd > bath.spectral_density(bath.gamma * 1.1));
    }

    #[test]
    fn zero_coupling_kills_all_rates() {
        let model = build_redfield_generator(&dimer(0.0)).unwrap();
        assert!(model.relaxation.is_empty());
        assert!(model.dephasing.is_empty());
        assert!(model.channels.is_empty());
        // generator reduces to M_H + M_trap + M_loss
        let expect = model
            .coherent_superoperator()
            .add(&model.trap_superoperator())
            .unwrap()
            .add(&model.loss_superoperator())
            .unwrap();
        let full = model.generator();
        assert!(max_abs(&(&full.matrix - &expect.matrix)) == 0.0);
    }

    #[test]
    fn detailed_balance_ratio() {
        let model = build_redfield_generator(&dimer(35.0)).unwrap();
        let kbt_cm1 = thermal_energy_cm1(300.0);
        let gap_cm1 = rad_fs_to_cm1(model.basis.energies[1] - model.basis.energies[0]);
        assert_relative_eq!(gap_cm1, 212.52, epsilon = 5e-3);

        let down = model
            .relaxation
            .iter()
            .find(|c| c.from == 1 && c.to == 0)
            .unwrap()
            .rate;
        let up = model
            .relaxation
            .iter()
            .find(|c| c.from == 0 && c.to == 1)
            .unwrap()
            .rate;
        let expect = (gap_cm1 / kbt_cm1).exp();
        assert_relative_eq!(down / up, expect, max_relative = 1e-10);
        // numeric value of the exponential for the dimer gap at 300 K
        assert_relative_eq!(down / up, 2.7711, epsilon = 2e-3);
    }

    #[test]
    fn gibbs_state_is_stationary_without_sinks() {
        let mut sys = dimer(35.0);
        sys.trap_rate_per_fs = 0.0;
        sys.loss_rate_per_fs = 0.0;
        let model = build_redfield_generator(&sys).unwrap();
        let rho_gibbs = gibbs_state(&model.hamiltonian, model.bath.kbt).unwrap();
        let gen = model.generator();
        let drho = gen.apply(&rho_gibbs);
        assert!(max_abs(&drho) < 1e-10, "generator on Gibbs: {}", max_abs(&drho));

        // and propagation from a site state converges to it
        let grid = [0.0, 2000.0, 4000.0];
        let traj = model
            .propagate(&site_state(2, 0), &grid, &RkOptions::default())
            .unwrap();
        let last = &traj[2];
        assert!(
            max_abs(&(last - &rho_gibbs)) < 1e-8,
            "distance to Gibbs {:.2e}",
            max_abs(&(last - &rho_gibbs))
        );
    }

    #[test]
    fn trap_loss_superoperators() {
        let (trap, loss) = build_trap_loss(2, 1, 1e-3, 1e-6);
        // kappa = 0 gives zero trap
        let (trap0, _) = build_trap_loss(2, 1, 0.0, 1e-6);
        assert_eq!(max_abs(&trap0.matrix), 0.0);
        // Tr{M_trap |m><m|} = -2 kappa on the trap site
        let rho = site_state(2, 1);
        assert_relative_eq!(trace(&trap.apply(&rho)).re, -2e-3, max_relative = 1e-14);
        // loss removes trace at 2 Gamma regardless of the state
        let rho0 = site_state(2, 0);
        assert_relative_eq!(trace(&loss.apply(&rho0)).re, -2e-6, max_relative = 1e-14);
    }

    #[test]
    fn uniform_loss_decay_is_exact_exponential() {
        let mut sys = dimer(0.0);
        sys.trap_rate_per_fs = 0.0;
        sys.loss_rate_per_fs = 2e-4;
        let model = build_redfield_generator(&sys).unwrap();
        let grid = [0.0, 500.0, 1000.0];
        let traj = model
            .propagate(&site_state(2, 0), &grid, &RkOptions::default())
            .unwrap();
        for (k, t) in grid.iter().enumerate() {
            assert_relative_eq!(
                trace(&traj[k]).re,
                (-2.0 * 2e-4 * t).exp(),
                max_relative = 1e-8
            );
        }
    }

    #[test]
    fn rabi_oscillation_matches_closed_form() {
        // coherent-only dimer: rho_11(t) = 1 - sin^2(2 theta) sin^2(Omega t / 2)
        let mut sys = dimer(0.0);
        sys.trap_rate_per_fs = 0.0;
        sys.loss_rate_per_fs = 0.0;
        let model = build_redfield_generator(&sys).unwrap();
        let de = cm1_to_rad_fs(120.0);
        let j = cm1_to_rad_fs(-87.7);
        let omega = (de * de + 4.0 * j * j).sqrt();
        let sin2_2theta = 4.0 * j * j / (de * de + 4.0 * j * j);
        let grid: Vec<f64> = (0..=100).map(|k| k as f64 * 10.0).collect();
        let opts = RkOptions {
            rtol: 1e-11,
            atol: 1e-13,
            ..Default::default()
        };
        let traj = model.propagate(&site_state(2, 0), &grid, &opts).unwrap();
        for (k, t) in grid.iter().enumerate() {
            let expect = 1.0 - sin2_2theta * (omega * t / 2.0).sin().powi(2);
            assert!(
                (traj[k][(0, 0)].re - expect).abs() < 1e-8,
                "t={t}: {} vs {}",
                traj[k][(0, 0)].re,
                expect
            );
        }
    }

    #[test]
    fn zero_generator_keeps_state() {
        let m = Superoperator::zero(2);
        let rho0 = site_state(2, 0);
        let traj = propagate_superop(&m, &rho0, &[0.0, 100.0], &RkOptions::default()).unwrap();
        assert_eq!(max_abs(&(&traj[1] - &rho0)), 0.0);
    }

    #[test]
    fn full_dimer_trace_decays_to_zero() {
        let model = build_redfield_generator(&dimer(35.0)).unwrap();
        let grid = [0.0, 20000.0];
        let traj = model
            .propagate(&site_state(2, 0), &grid, &RkOptions::default())
            .unwrap();
        assert!(trace(&traj[1]).re < 5e-3);
    }

    #[test]
    fn expm_and_rk_agree_on_dimer() {
        let model = build_redfield_generator(&dimer(35.0)).unwrap();
        let gen = model.generator();
        let rho0 = site_state(2, 0);
        let grid: Vec<f64> = (0..=10).map(|k| k as f64 * 100.0).collect();
        let via_rk = model.propagate(&rho0, &grid, &RkOptions::default()).unwrap();
        let via_expm = propagate_expm(&gen, &rho0, &grid).unwrap();
        for k in 0..grid.len() {
            assert!(
                max_abs(&(&via_rk[k] - &via_expm[k])) < 1e-8,
                "k={k}: {:.2e}",
                max_abs(&(&via_rk[k] - &via_expm[k]))
            );
        }
    }

    #[test]
    fn trace_never_increases() {
        let model = build_redfield_generator(&dimer(35.0)).unwrap();
        let grid: Vec<f64> = (0..=50).map(|k| k as f64 * 20.0).collect();
        let traj = model
            .propagate(&site_state(2, 0), &grid, &RkOptions::default())
            .unwrap();
        let mut prev = f64::INFINITY;
        for rho in &traj {
            let tr = trace(rho).re;
            assert!(tr <= prev + 1e-10);
            prev = tr;
        }
    }

    #[test]
    fn decoherence_part_is_completely_positive() {
        // Choi matrix of exp(M_dec t) for small t must be PSD.
        let model = build_redfield_generator(&dimer(35.0)).unwrap();
        let dec = model.decoherence_superoperator();
        let e = expm(&dec.matrix.mapv(|z| z * C64::new(10.0, 0.0))).unwrap();
        let n = model.dim;
        // Choi[(a,c),(b,d)] = E[(a + b n),(c + d n)]
        let mut choi: CMat = Array2::zeros((n * n, n * n));
        for a in 0..n {
            for b in 0..n {
                for c in 0..n {
                    for d in 0..n {
                        choi[(a * n + c, b * n + d)] = e[(a + b * n, c + d * n)];
                    }
                }
            }
        }
        let min = crate::linalg::min_eigenvalue_hermitian(&choi).unwrap();
        assert!(min >= -1e-9, "Choi min eigenvalue {min:.3e}");
    }

    #[test]
    fn degenerate_spectrum_is_rejected() {
        let sys = ExcitonSystem::new(
            array![100.0, 100.0],
            array![[0.0, 0.0], [0.0, 0.0]],
            35.0,
            50.0,
            300.0,
            0,
            0.0,
            0.0,
            vec![[1.0, 0.0, 0.0]; 2],
        )
        .unwrap();
        match build_redfield_generator(&sys) {
            Err(Error::DegenerateSpectrum { a, b, .. }) => {
                assert_eq!((a, b), (0, 1));
            }
            other => panic!("expected degeneracy error, got {other:?}"),
        }
    }
}
