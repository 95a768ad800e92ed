//! Scaled hierarchical equations of motion for Drude-Lorentz baths.
//!
//! The bath correlation function per site is expanded in exponentials,
//!
//!   c(t) = lambda gamma (cot(gamma / 2 k_B T) - i) e^{-gamma t}
//!          + sum_k c_k e^{-nu_k t},   nu_k = 2 pi k k_B T,
//!
//! with the high-temperature Drude term always present and `n_matsubara`
//! optional Matsubara exponentials for low temperatures. Auxiliary density
//! operators carry one counting index per (site, mode) pair; the ADO at
//! multi-index n couples only to tiers n +- e_j. ADOs are rescaled by
//! (prod_j n_j! |c_j|^{n_j})^{-1/2} so deep hierarchies stay well
//! conditioned, and the hierarchy is closed by hard truncation above the
//! configured tier.
//!
//! Trapping and loss anti-commutators act identically on every ADO. The
//! generator is applied matrix-free; a dense matrix is materialized only for
//! the algebraic efficiency solves and only below a memory budget.

use ndarray::{Array1, Array2};
use num_complex::Complex64 as C64;

use crate::integrate::{integrate_grid, RkOptions};
use crate::linalg::{CMat, CVec};
use crate::redfield::{bath_modes, BathMode, DrudeBath};
use crate::superop::vectorize;
use crate::system::ExcitonSystem;
use crate::{exec, Error, Result, Threading};

/// Largest system dimension the stack-allocated kernels support.
const MAX_DIM: usize = 16;

/// Parallelize the right-hand side over ADO blocks only above this state
/// length; below it the rayon dispatch overhead dominates.
const PARALLEL_RHS_THRESHOLD: usize = 8192;

/// Counting multi-index over (site, mode) pairs; the tier is the index sum.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct HierarchyIndex(pub Vec<u32>);

impl HierarchyIndex {
    pub fn tier(&self) -> u32 {
        self.0.iter().sum()
    }
}

/// Number of ADOs for `b = n_sites * n_modes_per_site` bath coordinates
/// truncated at `tiers`: C(b + tiers, tiers).
///
/// Errors when the implied state for an `n_sites`-dimensional system would
/// not fit in `memory_budget_bytes`.
pub fn hierarchy_size(
    n_sites: usize,
    n_modes_per_site: usize,
    tiers: usize,
    memory_budget_bytes: u128,
) -> Result<usize> {
    let b = (n_sites * n_modes_per_site) as u128;
    let l = tiers as u128;
    let mut count: u128 = 1;
    for k in 1..=l {
        count = count
            .checked_mul(b + k)
            .ok_or(Error::MemoryBudget {
                required: u128::MAX,
                budget: memory_budget_bytes,
            })?
            / k;
    }
    let required = count
        .checked_mul((n_sites * n_sites) as u128 * 16)
        .unwrap_or(u128::MAX);
    if required > memory_budget_bytes {
        return Err(Error::MemoryBudget {
            required,
            budget: memory_budget_bytes,
        });
    }
    Ok(count as usize)
}

#[derive(Clone, Debug)]
enum CouplingKind {
    /// Tier-raising term -i f [V, sigma], f = sqrt((n_j + 1) |c_j|).
    Up { factor: f64 },
    /// Tier-lowering term -i (cpos V sigma - cneg sigma V),
    /// cpos = sqrt(n_j / |c_j|) c_j, cneg = sqrt(n_j / |c_j|) c_j^*.
    Down { cpos: C64, cneg: C64 },
}

#[derive(Clone, Debug)]
struct Coupling {
    neighbor: usize,
    site: usize,
    kind: CouplingKind,
}

#[derive(Clone, Debug)]
pub struct HeomOptions {
    pub tiers: usize,
    pub n_matsubara: usize,
    /// Permit the bare high-temperature expansion even when
    /// beta hbar gamma > 1.
    pub allow_high_t_violation: bool,
    pub memory_budget_bytes: u128,
    pub threading: Threading,
}

impl Default for HeomOptions {
    fn default() -> Self {
        Self {
            tiers: 15,
            n_matsubara: 0,
            allow_high_t_violation: false,
            memory_budget_bytes: 2 << 30,
            threading: Threading::Auto,
        }
    }
}

/// Matrix-free HEOM generator over the flat state of all scaled ADOs.
///
/// The state layout is one column-stacked n x n block per ADO, physical
/// rho first.
pub struct HeomGenerator {
    pub dim: usize,
    pub hamiltonian: CMat,
    site_vecs: Vec<CVec>,
    pub modes: Vec<BathMode>,
    pub indices: Vec<HierarchyIndex>,
    decay: Vec<f64>,
    couplings: Vec<Vec<Coupling>>,
    pub trap_site: Option<usize>,
    pub trap_rate: f64,
    pub loss_rate: f64,
    pub threading: Threading,
}

/// Build the generator for an exciton system (site-basis bath projectors).
pub fn build_heom_generator(system: &ExcitonSystem, opts: &HeomOptions) -> Result<HeomGenerator> {
    let n = system.n_sites();
    let site_vecs: Vec<CVec> = (0..n)
        .map(|m| {
            let mut u = Array1::zeros(n);
            u[m] = C64::new(1.0, 0.0);
            u
        })
        .collect();
    build_heom_generic(
        &system.hamiltonian_rad_fs(),
        &site_vecs,
        &DrudeBath::from_system(system)?,
        Some(system.trap_site),
        system.trap_rate_per_fs,
        system.loss_rate_per_fs,
        opts,
    )
}

/// Generic builder over any Hermitian Hamiltonian (rad/fs) and bath coupling
/// projectors V_m = u_m u_m^dagger.
pub fn build_heom_generic(
    hamiltonian: &CMat,
    site_vecs: &[CVec],
    bath: &DrudeBath,
    trap_site: Option<usize>,
    trap_rate: f64,
    loss_rate: f64,
    opts: &HeomOptions,
) -> Result<HeomGenerator> {
    let n = hamiltonian.nrows();
    if n > MAX_DIM {
        return Err(Error::Dimension(format!(
            "hierarchy kernels support dim <= {MAX_DIM}, got {n}"
        )));
    }
    let beta_gamma = bath.gamma / bath.kbt;
    if bath.lambda > 0.0
        && beta_gamma > 1.0
        && opts.n_matsubara == 0
        && !opts.allow_high_t_violation
    {
        return Err(Error::HighTemperatureViolation {
            betagamma: beta_gamma,
        });
    }
    if bath.lambda > 0.0 && opts.tiers == 0 {
        return Err(Error::Config(
            "hierarchy needs at least one tier when lambda > 0".into(),
        ));
    }

    let modes = if bath.lambda > 0.0 {
        bath_modes(bath, opts.n_matsubara)
    } else {
        Vec::new()
    };
    let n_sites = site_vecs.len();
    let b = n_sites * modes.len();
    let tiers = if b == 0 { 0 } else { opts.tiers };

    let count = count_indices(b, tiers);
    let required = count as u128 * (n * n) as u128 * 16;
    if required > opts.memory_budget_bytes {
        return Err(Error::MemoryBudget {
            required,
            budget: opts.memory_budget_bytes,
        });
    }

    let indices = enumerate_indices(b, tiers);
    let lookup: std::collections::HashMap<&[u32], usize> = indices
        .iter()
        .enumerate()
        .map(|(pos, idx)| (idx.0.as_slice(), pos))
        .collect();

    let mut decay = Vec::with_capacity(indices.len());
    let mut couplings = Vec::with_capacity(indices.len());
    for idx in &indices {
        let mut nu_sum = 0.0;
        let mut list = Vec::new();
        for (j, &nj) in idx.0.iter().enumerate() {
            let site = j / modes.len();
            let mode = &modes[j % modes.len()];
            let abs_c = mode.coeff.norm();
            nu_sum += nj as f64 * mode.decay;
            if abs_c == 0.0 {
                continue;
            }
            if idx.tier() < tiers as u32 {
                let mut up = idx.0.clone();
                up[j] += 1;
                if let Some(&neighbor) = lookup.get(up.as_slice()) {
                    list.push(Coupling {
                        neighbor,
                        site,
                        kind: CouplingKind::Up {
                            factor: ((nj as f64 + 1.0) * abs_c).sqrt(),
                        },
                    });
                }
            }
            if nj > 0 {
                let mut down = idx.0.clone();
                down[j] -= 1;
                let neighbor = lookup[down.as_slice()];
                let s = (nj as f64 / abs_c).sqrt();
                list.push(Coupling {
                    neighbor,
                    site,
                    kind: CouplingKind::Down {
                        cpos: mode.coeff * s,
                        cneg: mode.coeff.conj() * s,
                    },
                });
            }
        }
        decay.push(nu_sum);
        couplings.push(list);
    }

    Ok(HeomGenerator {
        dim: n,
        hamiltonian: hamiltonian.clone(),
        site_vecs: site_vecs.to_vec(),
        modes,
        indices,
        decay,
        couplings,
        trap_site,
        trap_rate,
        loss_rate,
        threading: opts.threading,
    })
}

fn count_indices(b: usize, tiers: usize) -> usize {
    let mut count: u128 = 1;
    for k in 1..=tiers as u128 {
        count = count * (b as u128 + k) / k;
    }
    count as usize
}

/// All multi-indices with tier <= `tiers`, tier by tier, the zero index
/// (physical rho) first.
fn enumerate_indices(b: usize, tiers: usize) -> Vec<HierarchyIndex> {
    let mut out = Vec::new();
    let mut current = vec![0u32; b];
    if b == 0 {
        out.push(HierarchyIndex(Vec::new()));
        return out;
    }
    for tier in 0..=tiers as u32 {
        fill_tier(&mut out, &mut current, 0, tier);
    }
    out
}

fn fill_tier(out: &mut Vec<HierarchyIndex>, current: &mut Vec<u32>, pos: usize, remaining: u32) {
    if pos == current.len() - 1 {
        current[pos] = remaining;
        out.push(HierarchyIndex(current.clone()));
        current[pos] = 0;
        return;
    }
    for v in (0..=remaining).rev() {
        current[pos] = v;
        fill_tier(out, current, pos + 1, remaining - v);
        current[pos] = 0;
    }
}

impl HeomGenerator {
    pub fn n_ados(&self) -> usize {
        self.indices.len()
    }

    pub fn state_len(&self) -> usize {
        self.n_ados() * self.dim * self.dim
    }

    /// Factorized initial condition: physical rho, all ADOs zero.
    pub fn lift(&self, rho0: &CMat) -> CVec {
        let mut state = Array1::zeros(self.state_len());
        let v = vectorize(rho0);
        state.slice_mut(ndarray::s![..v.len()]).assign(&v);
        state
    }

    /// Extract the physical density matrix (block 0).
    pub fn physical(&self, state: &CVec) -> CMat {
        let n = self.dim;
        let mut rho = Array2::zeros((n, n));
        for j in 0..n {
            for i in 0..n {
                rho[(i, j)] = state[i + j * n];
            }
        }
        rho
    }

    /// Full right-hand side, parallel over ADO blocks when large enough.
    pub fn apply(&self, state: &[C64], out: &mut [C64]) {
        let n2 = self.dim * self.dim;
        let threading = if state.len() >= PARALLEL_RHS_THRESHOLD {
            self.threading
        } else {
            Threading::Sequential
        };
        let mut blocks: Vec<&mut [C64]> = out.chunks_mut(n2).collect();
        exec::for_each_chunk(&mut blocks, threading, |a, block| {
            self.apply_block(a, state, block);
        });
    }

    /// d sigma_a / dt written into `out`.
    fn apply_block(&self, a: usize, state: &[C64], out: &mut [C64]) {
        let n = self.dim;
        let n2 = n * n;
        let sigma = &state[a * n2..(a + 1) * n2];
        let at = |blk: &[C64], i: usize, j: usize| blk[i + j * n];

        // -i [H, sigma] - nu sigma - kappa {P, sigma} - 2 Gamma sigma
        let damp = self.decay[a] + 2.0 * self.loss_rate;
        for j in 0..n {
            for i in 0..n {
                let mut h_comm = C64::new(0.0, 0.0);
                for k in 0..n {
                    h_comm += self.hamiltonian[(i, k)] * at(sigma, k, j)
                        - at(sigma, i, k) * self.hamiltonian[(k, j)];
                }
                let mut v = C64::new(0.0, -1.0) * h_comm - at(sigma, i, j) * damp;
                if let Some(m) = self.trap_site {
                    if i == m || j == m {
                        let k = if i == m && j == m { 2.0 } else { 1.0 };
                        v -= at(sigma, i, j) * (self.trap_rate * k);
                    }
                }
                out[i + j * n] = v;
            }
        }

        // hierarchy couplings through V_m = u u^dagger
        let mut left = [C64::new(0.0, 0.0); MAX_DIM]; // u^dagger sigma_b
        let mut right = [C64::new(0.0, 0.0); MAX_DIM]; // sigma_b u
        for c in &self.couplings[a] {
            let nb = &state[c.neighbor * n2..(c.neighbor + 1) * n2];
            let u = &self.site_vecs[c.site];
            for j in 0..n {
                let mut acc = C64::new(0.0, 0.0);
                for i in 0..n {
                    acc += u[i].conj() * at(nb, i, j);
                }
                left[j] = acc;
            }
            for i in 0..n {
                let mut acc = C64::new(0.0, 0.0);
                for j in 0..n {
                    acc += at(nb, i, j) * u[j];
                }
                right[i] = acc;
            }
            match c.kind {
                CouplingKind::Up { factor } => {
                    let mi_f = C64::new(0.0, -factor);
                    for j in 0..n {
                        for i in 0..n {
                            out[i + j * n] += mi_f * (u[i] * left[j] - right[i] * u[j].conj());
                        }
                    }
                }
                CouplingKind::Down { cpos, cneg } => {
                    let mi = C64::new(0.0, -1.0);
                    for j in 0..n {
                        for i in 0..n {
                            out[i + j * n] +=
                                mi * (cpos * u[i] * left[j] - cneg * right[i] * u[j].conj());
                        }
                    }
                }
            }
        }
    }

    /// Dense matrix of the generator, for the algebraic efficiency solves.
    /// Refuses above the memory budget.
    pub fn dense_generator(&self, memory_budget_bytes: u128) -> Result<CMat> {
        let len = self.state_len();
        let required = (len as u128) * (len as u128) * 16;
        if required > memory_budget_bytes {
            return Err(Error::MemoryBudget {
                required,
                budget: memory_budget_bytes,
            });
        }
        let mut dense = Array2::zeros((len, len));
        let mut basis = vec![C64::new(0.0, 0.0); len];
        let mut col = vec![C64::new(0.0, 0.0); len];
        for j in 0..len {
            basis[j] = C64::new(1.0, 0.0);
            self.apply(&basis, &mut col);
            for i in 0..len {
                dense[(i, j)] = col[i];
            }
            basis[j] = C64::new(0.0, 0.0);
        }
        Ok(dense)
    }

    /// Lifted coherent part: -i [H, .] on every ADO (for the efficiency
    /// decomposition on the full hierarchy vector).
    pub fn apply_coherent(&self, state: &[C64], out: &mut [C64]) {
        let n = self.dim;
        let n2 = n * n;
        for a in 0..self.n_ados() {
            let sigma = &state[a * n2..(a + 1) * n2];
            let block = &mut out[a * n2..(a + 1) * n2];
            for j in 0..n {
                for i in 0..n {
                    let mut h_comm = C64::new(0.0, 0.0);
                    for k in 0..n {
                        h_comm += self.hamiltonian[(i, k)] * sigma[k + j * n]
                            - sigma[i + k * n] * self.hamiltonian[(k, j)];
                    }
                    block[i + j * n] = C64::new(0.0, -1.0) * h_comm;
                }
            }
        }
    }
}

/// Propagate the hierarchy, handing the physical density matrix to the
/// observer at each grid time.
pub fn propagate_heom_observe<O>(
    gen: &HeomGenerator,
    rho0: &CMat,
    t_grid: &[f64],
    opts: &RkOptions,
    mut observer: O,
) -> Result<()>
where
    O: FnMut(usize, f64, &CMat),
{
    let state0 = gen.lift(rho0);
    integrate_grid(
        |_t, y, dy| {
            gen.apply(
                y.as_slice().expect("contiguous"),
                dy.as_slice_mut().expect("contiguous"),
            )
        },
        state0,
        t_grid,
        opts,
        |k, t, y| observer(k, t, &gen.physical(y)),
    )
}

/// Propagate and collect the physical trajectory.
pub fn propagate_heom(
    gen: &HeomGenerator,
    rho0: &CMat,
    t_grid: &[f64],
    opts: &RkOptions,
) -> Result<Vec<CMat>> {
    let mut traj = Vec::with_capacity(t_grid.len());
    propagate_heom_observe(gen, rho0, t_grid, opts, |_, _, rho| traj.push(rho.clone()))?;
    Ok(traj)
}

/// Propagate and additionally return the full final hierarchy state.
pub fn propagate_heom_full(
    gen: &HeomGenerator,
    rho0: &CMat,
    t_grid: &[f64],
    opts: &RkOptions,
) -> Result<(Vec<CMat>, CVec)> {
    let state0 = gen.lift(rho0);
    let mut traj = Vec::with_capacity(t_grid.len());
    let mut last: CVec = Array1::zeros(0);
    integrate_grid(
        |_t, y, dy| {
            gen.apply(
                y.as_slice().expect("contiguous"),
                dy.as_slice_mut().expect("contiguous"),
            )
        },
        state0,
        t_grid,
        opts,
        |k, _t, y| {
            traj.push(gen.physical(y));
            if k + 1 == t_grid.len() {
                last = y.clone();
            }
        },
    )?;
    Ok((traj, last))
}

const DUMP_MAGIC: &[u8; 4] = b"HADO";

/// Binary dump of the full hierarchy state.
///
/// Layout, all little-endian: magic "HADO", u32 version (1), u32 system dim,
/// u64 ADO count, u32 bath coordinate count B, f64 time (fs), then the tier
/// map (B u32 words per ADO), then per ADO n^2 complex doubles (re, im)
/// row-major.
pub fn write_ado_dump(
    path: &std::path::Path,
    gen: &HeomGenerator,
    state: &CVec,
    t_fs: f64,
) -> Result<()> {
    use std::io::Write;
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    f.write_all(DUMP_MAGIC)?;
    f.write_all(&1u32.to_le_bytes())?;
    f.write_all(&(gen.dim as u32).to_le_bytes())?;
    f.write_all(&(gen.n_ados() as u64).to_le_bytes())?;
    let b = gen.indices.first().map_or(0, |i| i.0.len());
    f.write_all(&(b as u32).to_le_bytes())?;
    f.write_all(&t_fs.to_le_bytes())?;
    for idx in &gen.indices {
        for &v in &idx.0 {
            f.write_all(&v.to_le_bytes())?;
        }
    }
    let n = gen.dim;
    let n2 = n * n;
    for a in 0..gen.n_ados() {
        let block = &state.as_slice().expect("contiguous")[a * n2..(a + 1) * n2];
        for i in 0..n {
            for j in 0..n {
                let z = block[i + j * n]; // row-major on disk
                f.write_all(&z.re.to_le_bytes())?;
                f.write_all(&z.im.to_le_bytes())?;
            }
        }
    }
    f.flush()?;
    Ok(())
}

/// Read a hierarchy dump back: (system dim, tier map, time, flat state in the
/// in-memory column-stacked layout).
pub fn read_ado_dump(path: &std::path::Path) -> Result<(usize, Vec<HierarchyIndex>, f64, CVec)> {
    use std::io::Read;
    let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 4];
    f.read_exact(&mut magic)?;
    if &magic != DUMP_MAGIC {
        return Err(Error::Config("not a hierarchy dump".into()));
    }
    let mut u32buf = [0u8; 4];
    let mut u64buf = [0u8; 8];
    f.read_exact(&mut u32buf)?;
    let version = u32::from_le_bytes(u32buf);
    if version != 1 {
        return Err(Error::Config(format!("unsupported dump version {version}")));
    }
    f.read_exact(&mut u32buf)?;
    let n = u32::from_le_bytes(u32buf) as usize;
    f.read_exact(&mut u64buf)?;
    let n_ados = u64::from_le_bytes(u64buf) as usize;
    f.read_exact(&mut u32buf)?;
    let b = u32::from_le_bytes(u32buf) as usize;
    f.read_exact(&mut u64buf)?;
    let t_fs = f64::from_le_bytes(u64buf);
    let mut indices = Vec::with_capacity(n_ados);
    for _ in 0..n_ados {
        let mut idx = Vec::with_capacity(b);
        for _ in 0..b {
            f.read_exact(&mut u32buf)?;
            idx.push(u32::from_le_bytes(u32buf));
        }
        indices.push(HierarchyIndex(idx));
    }
    let mut state = Array1::zeros(n_ados * n * n);
    for a in 0..n_ados {
        for i in 0..n {
            for j in 0..n {
                f.read_exact(&mut u64buf)?;
                let re = f64::from_le_bytes(u64buf);
                f.read_exact(&mut u64buf)?;
                let im = f64::from_le_bytes(u64buf);
                state[a * n * n + i + j * n] = C64::new(re, im);
            }
        }
    }
    Ok((n, indices, t_fs, state))
}
