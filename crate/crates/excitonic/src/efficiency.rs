//! Energy-transfer efficiency and its decomposition, integrated coherence,
//! and concurrence, for both master-equation backends.
//!
//! The efficiency is the integrated probability of trapping,
//! eta = int_0^inf 2 kappa rho_trap(t) dt. It is computed two independent
//! ways: time-domain quadrature of the trapped flux (carried as an extra
//! integrated component of the propagated state), and algebraically from
//! int_0^inf rho dt = -M^-1 rho(0) via a dense LU solve. The coherent and
//! decoherent contributions follow
//!
//!   eta_part = Tr{ M_trap (M_trap + M_loss)^-1 M_part M^-1 rho(0) },
//!
//! realized as two nested solves: the outer one against the full generator,
//! the inner one against the trap+loss superoperator (whose matrix is
//! diagonal in the vectorized site basis, so that solve is exact). For a
//! hierarchy generator the same expressions act on the full vector of ADOs,
//! with the coherent part applied block-diagonally to every ADO.
//!
//! The initial-state contribution eta_init propagates the damped no-jump
//! evolution (coherent part, the anti-Hermitian halves of every Lindblad
//! channel, and the trap/loss decay) of a pure initial state, and integrates
//! the trapped flux it still delivers.
//!
//! The integrated coherence is C = sum_{m != n} int_0^tcut |rho_mn(t)| dt in
//! the site basis, cut off where Tr rho drops below 1e-3, and normalized by
//! the same quantity at lambda = 0 (coherent evolution plus sinks only,
//! identical for both backends).

use ndarray::{Array1, Array2};
use num_complex::Complex64 as C64;

use crate::exec;
use crate::heom::{HeomGenerator, HeomOptions};
use crate::integrate::{integrate_grid, RkOptions};
use crate::linalg::{eig_general, CMat, CVec, LuSolver};
use crate::redfield::{build_redfield_generator, LindbladModel, RhsWorkspace};
use crate::superop::vectorize;
use crate::system::ExcitonSystem;
use crate::{Error, Result, Threading};

/// A master-equation backend viewed as a linear generator on a flat state.
pub enum Engine<'a> {
    Redfield(&'a LindbladModel),
    /// Redfield with every jump term removed (no-jump evolution).
    RedfieldNoJump(&'a LindbladModel),
    Heom(&'a HeomGenerator),
}

impl Engine<'_> {
    pub fn system_dim(&self) -> usize {
        match self {
            Engine::Redfield(m) | Engine::RedfieldNoJump(m) => m.dim,
            Engine::Heom(g) => g.dim,
        }
    }

    pub fn state_len(&self) -> usize {
        match self {
            Engine::Redfield(m) | Engine::RedfieldNoJump(m) => m.dim * m.dim,
            Engine::Heom(g) => g.state_len(),
        }
    }

    pub fn trap(&self) -> Option<(usize, f64)> {
        match self {
            Engine::Redfield(m) | Engine::RedfieldNoJump(m) => {
                m.trap_site.map(|s| (s, m.trap_rate))
            }
            Engine::Heom(g) => g.trap_site.map(|s| (s, g.trap_rate)),
        }
    }

    pub fn loss_rate(&self) -> f64 {
        match self {
            Engine::Redfield(m) | Engine::RedfieldNoJump(m) => m.loss_rate,
            Engine::Heom(g) => g.loss_rate,
        }
    }

    pub fn lift(&self, rho0: &CMat) -> CVec {
        match self {
            Engine::Redfield(_) | Engine::RedfieldNoJump(_) => vectorize(rho0),
            Engine::Heom(g) => g.lift(rho0),
        }
    }

    /// Full generator applied to a flat state.
    pub fn rhs(&self, y: &CVec, dy: &mut CVec, ws: &mut EngineWorkspace) {
        match self {
            Engine::Redfield(m) => {
                crate::redfield::copy_vec_to_mat(y, &mut ws.rho);
                m.apply(&ws.rho, &mut ws.out, &mut ws.inner, true);
                crate::redfield::copy_mat_to_vec(&ws.out, dy);
            }
            Engine::RedfieldNoJump(m) => {
                crate::redfield::copy_vec_to_mat(y, &mut ws.rho);
                m.apply(&ws.rho, &mut ws.out, &mut ws.inner, false);
                crate::redfield::copy_mat_to_vec(&ws.out, dy);
            }
            Engine::Heom(g) => g.apply(
                y.as_slice().expect("contiguous"),
                dy.as_slice_mut().expect("contiguous"),
            ),
        }
    }

    /// M_H applied to a flat state (block-diagonally on every ADO for the
    /// hierarchy).
    pub fn rhs_coherent(&self, y: &CVec, dy: &mut CVec) {
        match self {
            Engine::Redfield(m) | Engine::RedfieldNoJump(m) => {
                let rho = crate::superop::devectorize(y, m.dim);
                let comm = m.hamiltonian.dot(&rho) - rho.dot(&m.hamiltonian);
                let out = comm.mapv(|z| z * C64::new(0.0, -1.0));
                crate::redfield::copy_mat_to_vec(&out, dy);
            }
            Engine::Heom(g) => g.apply_coherent(
                y.as_slice().expect("contiguous"),
                dy.as_slice_mut().expect("contiguous"),
            ),
        }
    }

    /// Diagonal of M_trap + M_loss on the flat state (site-basis elementwise).
    pub fn trap_loss_diagonal(&self) -> Vec<f64> {
        let n = self.system_dim();
        let len = self.state_len();
        let trap = self.trap();
        let loss = self.loss_rate();
        let mut diag = vec![0.0; len];
        for (k, d) in diag.iter_mut().enumerate() {
            let within = k % (n * n);
            let i = within % n;
            let j = within / n;
            let mut v = -2.0 * loss;
            if let Some((site, kappa)) = trap {
                if i == site {
                    v -= kappa;
                }
                if j == site {
                    v -= kappa;
                }
            }
            *d = v;
        }
        diag
    }

    pub fn dense_generator(&self, budget: u128) -> Result<CMat> {
        match self {
            Engine::Redfield(m) => {
                guard_budget(m.dim * m.dim, budget)?;
                Ok(m.generator().matrix)
            }
            Engine::RedfieldNoJump(m) => {
                guard_budget(m.dim * m.dim, budget)?;
                Ok(m.no_jump_generator().matrix)
            }
            Engine::Heom(g) => g.dense_generator(budget),
        }
    }

    /// Trapped-flux functional 2 kappa rho_trap of the physical block.
    pub fn flux(&self, y: &CVec) -> f64 {
        match self.trap() {
            Some((site, kappa)) => {
                let n = self.system_dim();
                2.0 * kappa * y[site + site * n].re
            }
            None => 0.0,
        }
    }
}

fn guard_budget(len: usize, budget: u128) -> Result<()> {
    let required = (len as u128) * (len as u128) * 16;
    if required > budget {
        return Err(Error::MemoryBudget { required, budget });
    }
    Ok(())
}

/// Scratch buffers for Redfield right-hand sides.
pub struct EngineWorkspace {
    rho: CMat,
    out: CMat,
    inner: RhsWorkspace,
}

impl EngineWorkspace {
    pub fn new(n: usize) -> Self {
        Self {
            rho: Array2::zeros((n, n)),
            out: Array2::zeros((n, n)),
            inner: RhsWorkspace::new(n),
        }
    }
}

#[derive(Clone, Debug)]
pub struct EfficiencyOptions {
    pub memory_budget_bytes: u128,
    /// Below this reciprocal condition estimate the generator is treated as
    /// singular.
    pub rcond_threshold: f64,
    /// Verify strict dissipativity by an explicit eigenvalue computation when
    /// the flat state is at most this long (structural checks otherwise).
    pub eigenvalue_check_max_len: usize,
    pub rk: RkOptions,
    /// Quadrature continues until the trace falls below this.
    pub tail_trace: f64,
    pub max_horizon_fs: f64,
}

impl Default for EfficiencyOptions {
    fn default() -> Self {
        Self {
            memory_budget_bytes: 2 << 30,
            rcond_threshold: 1e-13,
            eigenvalue_check_max_len: 600,
            rk: RkOptions {
                rtol: 1e-10,
                atol: 1e-12,
                ..Default::default()
            },
            tail_trace: 1e-8,
            max_horizon_fs: 5e7,
        }
    }
}

/// LU-factorized full generator with its condition estimate, reusable across
/// the solves of one run.
pub struct FactorizedGenerator {
    solver: LuSolver,
    pub rcond: f64,
}

pub fn factorize_generator(
    engine: &Engine,
    opts: &EfficiencyOptions,
) -> Result<FactorizedGenerator> {
    let dense = engine.dense_generator(opts.memory_budget_bytes)?;
    verify_dissipative(engine, &dense, opts)?;
    let solver = LuSolver::new(dense)?;
    let rcond = solver.rcond_estimate();
    if rcond < opts.rcond_threshold {
        let null = solver.null_direction();
        return Err(Error::SingularGenerator {
            rcond,
            direction: describe_direction(&null, engine.system_dim()),
        });
    }
    Ok(FactorizedGenerator { solver, rcond })
}

/// Strict dissipativity: all generator eigenvalues in the open left half
/// plane. Checked spectrally for small problems; structurally (a trap or
/// loss channel must be present) for large ones.
fn verify_dissipative(engine: &Engine, dense: &CMat, opts: &EfficiencyOptions) -> Result<()> {
    if engine.trap().map_or(true, |(_, k)| k == 0.0) && engine.loss_rate() == 0.0 {
        return Err(Error::Config(
            "efficiency needs a dissipative generator (kappa or Gamma > 0)".into(),
        ));
    }
    if engine.state_len() <= opts.eigenvalue_check_max_len {
        let vals = crate::linalg::eigenvalues(dense)?;
        let max_re = vals.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max);
        if max_re >= 0.0 {
            return Err(Error::Config(format!(
                "generator is not strictly dissipative (max Re eigenvalue {max_re:.3e})"
            )));
        }
    }
    Ok(())
}

fn describe_direction(v: &CVec, n: usize) -> String {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[b].norm().partial_cmp(&v[a].norm()).unwrap());
    idx.iter()
        .take(3)
        .map(|&k| {
            let within = k % (n * n);
            let (i, j) = (within % n, within / n);
            let block = k / (n * n);
            if block == 0 {
                format!("rho[{i},{j}] ({:.2})", v[k].norm())
            } else {
                format!("ado{block}[{i},{j}] ({:.2})", v[k].norm())
            }
        })
        .collect::<Vec<_>>()
        .join(", ")
}

/// Integrated state x = int_0^inf rho(t) dt = -M^-1 rho(0) on the flat state.
pub fn integrated_state(fact: &FactorizedGenerator, engine: &Engine, rho0: &CMat) -> Result<CVec> {
    let b = engine.lift(rho0).mapv(|z| -z);
    fact.solver.solve(&b)
}

/// Algebraic efficiency: trapped flux of the integrated state.
pub fn efficiency_algebraic(
    fact: &FactorizedGenerator,
    engine: &Engine,
    rho0: &CMat,
) -> Result<f64> {
    Ok(engine.flux(&integrated_state(fact, engine, rho0)?))
}

/// Time-domain efficiency: the trapped flux is carried as one extra
/// integrated component so it converges with full integrator accuracy.
/// Windows grow geometrically until the trace falls below the tail cutoff.
pub fn efficiency_quadrature(
    engine: &Engine,
    rho0: &CMat,
    opts: &EfficiencyOptions,
) -> Result<f64> {
    let len = engine.state_len();
    let n = engine.system_dim();
    let mut ws = EngineWorkspace::new(n);
    let mut y: CVec = Array1::zeros(len + 1);
    y.slice_mut(ndarray::s![..len]).assign(&engine.lift(rho0));

    let mut state_buf: CVec = Array1::zeros(len);
    let mut dstate: CVec = Array1::zeros(len);
    let mut t0 = 0.0;
    let mut window = 1000.0;
    loop {
        let grid = [t0, t0 + window];
        let mut final_y: CVec = Array1::zeros(len + 1);
        integrate_grid(
            |_t, yy, dy| {
                state_buf.assign(&yy.slice(ndarray::s![..len]));
                engine.rhs(&state_buf, &mut dstate, &mut ws);
                dy.slice_mut(ndarray::s![..len]).assign(&dstate);
                dy[len] = C64::new(engine.flux(&state_buf), 0.0);
            },
            y.clone(),
            &grid,
            &opts.rk,
            |k, _t, yy| {
                if k == 1 {
                    final_y.assign(yy);
                }
            },
        )?;
        y = final_y;
        t0 += window;
        let trace: f64 = (0..n).map(|i| y[i + i * n].re).sum();
        if trace.abs() <= opts.tail_trace {
            break;
        }
        if t0 >= opts.max_horizon_fs {
            return Err(Error::CutoffNotReached {
                cutoff: opts.tail_trace,
                horizon_fs: opts.max_horizon_fs,
                trace,
            });
        }
        window *= 1.5;
    }
    Ok(y[len].re)
}

/// Which piece of the generator a contribution is computed for.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GeneratorPart {
    Full,
    Coherent,
    Decoherence,
}

/// eta_part = Tr{ M_trap (M_trap + M_loss)^-1 M_part M^-1 rho(0) }, by two
/// nested solves. Requires kappa > 0 and Gamma > 0 so the inner (diagonal)
/// solve exists.
pub fn contribution(
    fact: &FactorizedGenerator,
    engine: &Engine,
    part: GeneratorPart,
    rho0: &CMat,
) -> Result<f64> {
    let trap_ok = engine.trap().is_some_and(|(_, k)| k > 0.0);
    if !trap_ok || engine.loss_rate() <= 0.0 {
        return Err(Error::Config(
            "contribution decomposition needs kappa > 0 and Gamma > 0 \
             (M_trap + M_loss must be invertible)"
                .into(),
        ));
    }
    let x = integrated_state(fact, engine, rho0)?;
    let len = engine.state_len();
    let mut y: CVec = Array1::zeros(len);
    match part {
        GeneratorPart::Full => {
            let mut ws = EngineWorkspace::new(engine.system_dim());
            engine.rhs(&x, &mut y, &mut ws);
        }
        GeneratorPart::Coherent => engine.rhs_coherent(&x, &mut y),
        GeneratorPart::Decoherence => {
            // M_dec x = M x - M_H x - (M_trap + M_loss) x
            let mut ws = EngineWorkspace::new(engine.system_dim());
            let mut full: CVec = Array1::zeros(len);
            engine.rhs(&x, &mut full, &mut ws);
            let mut coh: CVec = Array1::zeros(len);
            engine.rhs_coherent(&x, &mut coh);
            let diag = engine.trap_loss_diagonal();
            for k in 0..len {
                y[k] = full[k] - coh[k] - x[k] * diag[k];
            }
        }
    }
    // z = (M_trap + M_loss)^-1 y elementwise. Under the generator convention
    // the contribution comes out with the sign of the paper's negative-flux
    // eta; it is flipped here so the parts sum to the reported positive
    // efficiency.
    let diag = engine.trap_loss_diagonal();
    let mut z: CVec = Array1::zeros(len);
    for k in 0..len {
        z[k] = y[k] / diag[k];
    }
    Ok(-engine.flux(&z))
}

/// eta_init for a pure initial state under a Lindblad-form model: the
/// trapped flux of the damped no-jump evolution.
pub fn initial_state_contribution(
    model: &LindbladModel,
    psi: &CVec,
    opts: &EfficiencyOptions,
) -> Result<f64> {
    let rho0 = crate::density::pure_state(psi);
    let engine = Engine::RedfieldNoJump(model);
    let fact = factorize_generator(&engine, opts)?;
    efficiency_algebraic(&fact, &engine, &rho0)
}

/// eta_init for a classical mixture: probability-weighted sum over pure
/// components (the no-jump construction is linear over the decomposition).
pub fn initial_state_contribution_mixture(
    model: &LindbladModel,
    components: &[(f64, CVec)],
    opts: &EfficiencyOptions,
) -> Result<f64> {
    let engine = Engine::RedfieldNoJump(model);
    let fact = factorize_generator(&engine, opts)?;
    let mut eta = 0.0;
    for (w, psi) in components {
        let rho0 = crate::density::pure_state(psi);
        eta += w * efficiency_algebraic(&fact, &engine, &rho0)?;
    }
    Ok(eta)
}

/// Full efficiency decomposition for one run.
#[derive(Clone, Debug)]
pub struct EfficiencyReport {
    /// Total efficiency (algebraic when available, else quadrature).
    pub eta: f64,
    pub eta_algebraic: Option<f64>,
    pub eta_quadrature: Option<f64>,
    pub eta_h: Option<f64>,
    pub eta_decoherence: Option<f64>,
    pub eta_init: Option<f64>,
    /// eta_dyn = eta_H - eta_init, by construction.
    pub eta_dyn: Option<f64>,
    /// eta - (eta_H + eta_decoherence).
    pub residual: Option<f64>,
    pub rcond: Option<f64>,
}

/// Initial excitation used by the drivers.
#[derive(Clone, Debug)]
pub enum InitialState {
    Site(usize),
    /// Equal-weight classical mixture of sites.
    SiteMixture(Vec<usize>),
}

impl InitialState {
    pub fn density(&self, n: usize) -> CMat {
        match self {
            InitialState::Site(m) => crate::density::site_state(n, *m),
            InitialState::SiteMixture(sites) => crate::density::site_mixture(n, sites),
        }
    }

    pub fn pure_components(&self, n: usize) -> Vec<(f64, CVec)> {
        let ket = |m: usize| {
            let mut v: CVec = Array1::zeros(n);
            v[m] = C64::new(1.0, 0.0);
            v
        };
        match self {
            InitialState::Site(m) => vec![(1.0, ket(*m))],
            InitialState::SiteMixture(sites) => {
                let w = 1.0 / sites.len() as f64;
                sites.iter().map(|&m| (w, ket(m))).collect()
            }
        }
    }

    pub fn label(&self) -> String {
        match self {
            InitialState::Site(m) => format!("site{}", m + 1),
            InitialState::SiteMixture(sites) => format!(
                "mix{}",
                sites
                    .iter()
                    .map(|m| (m + 1).to_string())
                    .collect::<Vec<_>>()
                    .join("+")
            ),
        }
    }
}

/// Assemble the full decomposition; `no_jump_model` enables eta_init (it is
/// only defined for Lindblad-form dynamics). Falls back to quadrature-only
/// when the dense generator exceeds the memory budget.
pub fn efficiency_report(
    engine: &Engine,
    no_jump_model: Option<&LindbladModel>,
    init: &InitialState,
    opts: &EfficiencyOptions,
) -> Result<EfficiencyReport> {
    let n = engine.system_dim();
    let rho0 = init.density(n);
    let (eta_alg, eta_h, eta_dec, rcond) = match factorize_generator(engine, opts) {
        Ok(fact) => {
            let eta = efficiency_algebraic(&fact, engine, &rho0)?;
            let eta_h = contribution(&fact, engine, GeneratorPart::Coherent, &rho0)?;
            let eta_dec = contribution(&fact, engine, GeneratorPart::Decoherence, &rho0)?;
            (Some(eta), Some(eta_h), Some(eta_dec), Some(fact.rcond))
        }
        Err(Error::MemoryBudget { .. }) => (None, None, None, None),
        Err(e) => return Err(e),
    };
    let eta_quad = efficiency_quadrature(engine, &rho0, opts)?;
    let eta = eta_alg.unwrap_or(eta_quad);

    let eta_init = match no_jump_model {
        Some(model) => Some(initial_state_contribution_mixture(
            model,
            &init.pure_components(n),
            opts,
        )?),
        None => None,
    };
    let eta_dyn = match (eta_h, eta_init) {
        (Some(h), Some(i)) => Some(h - i),
        _ => None,
    };
    let residual = match (eta_h, eta_dec) {
        (Some(h), Some(d)) => Some(eta - h - d),
        _ => None,
    };
    Ok(EfficiencyReport {
        eta,
        eta_algebraic: eta_alg,
        eta_quadrature: Some(eta_quad),
        eta_h,
        eta_decoherence: eta_dec,
        eta_init,
        eta_dyn,
        residual,
        rcond,
    })
}

/// Concurrence of a shared single excitation: 2 |rho_12|.
pub fn concurrence(rho: &CMat) -> f64 {
    2.0 * rho[(0, 1)].norm()
}

/// Integrated-coherence result.
#[derive(Clone, Debug)]
pub struct CoherenceReport {
    /// C = sum_{m != n} int |rho_mn| dt up to the cutoff, in fs.
    pub integral_fs: f64,
    /// C(lambda) / C(0); 1 by definition at lambda = 0.
    pub normalized: Option<f64>,
    /// First time Tr rho <= the trace cutoff.
    pub cutoff_time_fs: f64,
    /// |C_dt - C_2dt| / C, a step-halving consistency estimate.
    pub refinement_error: f64,
}

#[derive(Clone, Debug)]
pub struct CoherencePolicy {
    pub trace_cutoff: f64,
    pub sample_dt_fs: f64,
    pub max_horizon_fs: f64,
    pub rk: RkOptions,
    /// Integrate in the exciton basis instead of the site basis.
    pub exciton_basis: bool,
}

impl Default for CoherencePolicy {
    fn default() -> Self {
        Self {
            trace_cutoff: 1e-3,
            sample_dt_fs: 1.0,
            max_horizon_fs: 1e8,
            rk: RkOptions::default(),
            exciton_basis: false,
        }
    }
}

fn offdiag_abs_sum(rho: &CMat, basis: Option<&CMat>) -> f64 {
    let n = rho.nrows();
    let work;
    let r = match basis {
        Some(v) => {
            work = crate::linalg::dagger(v).dot(rho).dot(v);
            &work
        }
        None => rho,
    };
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                s += r[(i, j)].norm();
            }
        }
    }
    s
}

/// Trapezoid accumulation of the off-diagonal magnitude with trace-cutoff
/// detection, fed sample by sample.
struct CoherenceAccumulator {
    dt: f64,
    cutoff: f64,
    prev: Option<f64>,
    prev_coarse: Option<f64>,
    integral: f64,
    integral_coarse: f64,
    samples: usize,
    cutoff_time: Option<f64>,
}

impl CoherenceAccumulator {
    fn new(dt: f64, cutoff: f64) -> Self {
        Self {
            dt,
            cutoff,
            prev: None,
            prev_coarse: None,
            integral: 0.0,
            integral_coarse: 0.0,
            samples: 0,
            cutoff_time: None,
        }
    }

    fn push(&mut self, t: f64, coh: f64, trace: f64) {
        if self.cutoff_time.is_some() {
            return;
        }
        if let Some(p) = self.prev {
            self.integral += 0.5 * (p + coh) * self.dt;
        }
        self.prev = Some(coh);
        if self.samples % 2 == 0 {
            if let Some(p) = self.prev_coarse {
                self.integral_coarse += 0.5 * (p + coh) * (2.0 * self.dt);
            }
            self.prev_coarse = Some(coh);
        }
        self.samples += 1;
        if trace <= self.cutoff {
            self.cutoff_time = Some(t);
        }
    }
}

/// Integrated coherence of an engine's dynamics from rho0.
pub fn integrated_coherence(
    engine: &Engine,
    rho0: &CMat,
    policy: &CoherencePolicy,
) -> Result<CoherenceReport> {
    let n = engine.system_dim();
    let basis = if policy.exciton_basis {
        Some(match engine {
            Engine::Redfield(m) | Engine::RedfieldNoJump(m) => m.basis.vectors.clone(),
            Engine::Heom(g) => crate::system::diagonalize(&g.hamiltonian)?.vectors,
        })
    } else {
        None
    };
    let mut acc = CoherenceAccumulator::new(policy.sample_dt_fs, policy.trace_cutoff);
    let len = engine.state_len();
    let mut ws = EngineWorkspace::new(n);
    let mut y = engine.lift(rho0);
    let window_samples = 4096usize;
    let mut t0_index = 0usize;
    while (t0_index as f64) * policy.sample_dt_fs < policy.max_horizon_fs {
        let grid: Vec<f64> = (0..=window_samples)
            .map(|k| (t0_index + k) as f64 * policy.sample_dt_fs)
            .collect();
        let mut final_y: CVec = Array1::zeros(len);
        {
            let acc_ref = &mut acc;
            let basis_ref = basis.as_ref();
            let first_window = t0_index == 0;
            integrate_grid(
                |_t, yy, dy| engine.rhs(yy, dy, &mut ws),
                y,
                &grid,
                &policy.rk,
                |k, t, yy| {
                    if k > 0 || first_window {
                        let rho = flat_physical(yy, n);
                        let trace: f64 = (0..n).map(|i| rho[(i, i)].re).sum();
                        acc_ref.push(t, offdiag_abs_sum(&rho, basis_ref), trace);
                    }
                    if k == window_samples {
                        final_y.assign(yy);
                    }
                },
            )?;
        }
        if acc.cutoff_time.is_some() {
            break;
        }
        y = final_y;
        t0_index += window_samples;
    }
    let cutoff_time = acc.cutoff_time.ok_or(Error::CutoffNotReached {
        cutoff: policy.trace_cutoff,
        horizon_fs: policy.max_horizon_fs,
        trace: f64::NAN,
    })?;
    let refinement = if acc.integral > 0.0 {
        (acc.integral - acc.integral_coarse).abs() / acc.integral
    } else {
        0.0
    };
    Ok(CoherenceReport {
        integral_fs: acc.integral,
        normalized: None,
        cutoff_time_fs: cutoff_time,
        refinement_error: refinement,
    })
}

fn flat_physical(y: &CVec, n: usize) -> CMat {
    let mut rho = Array2::zeros((n, n));
    for j in 0..n {
        for i in 0..n {
            rho[(i, j)] = y[i + j * n];
        }
    }
    rho
}

/// Integrated coherence of the lambda = 0 dynamics (coherent evolution plus
/// trap and loss), via eigendecomposition of the non-Hermitian effective
/// Hamiltonian H - i kappa P - i Gamma. This is the shared normalization
/// C(0) for both backends.
pub fn coherence_coherent_sinks(
    hamiltonian: &CMat,
    trap_site: usize,
    trap_rate: f64,
    loss_rate: f64,
    rho0: &CMat,
    policy: &CoherencePolicy,
) -> Result<CoherenceReport> {
    let n = hamiltonian.nrows();
    let mut heff = hamiltonian.clone();
    for i in 0..n {
        heff[(i, i)] += C64::new(0.0, -loss_rate);
    }
    heff[(trap_site, trap_site)] += C64::new(0.0, -trap_rate);
    let (vals, vecs, vecs_inv) = eig_general(&heff)?;
    // rho(t) = V e^{-i mu t} C e^{i mu^* t} V^dagger with C = V^-1 rho0 V^-dagger
    let rho0_coeff = vecs_inv.dot(rho0).dot(&crate::linalg::dagger(&vecs_inv));
    let basis = if policy.exciton_basis {
        Some(crate::system::diagonalize(hamiltonian)?.vectors)
    } else {
        None
    };

    let mut acc = CoherenceAccumulator::new(policy.sample_dt_fs, policy.trace_cutoff);
    let mut k = 0usize;
    let mut phases: CVec = Array1::zeros(n);
    let mut middle: CMat = Array2::zeros((n, n));
    while acc.cutoff_time.is_none() {
        let t = k as f64 * policy.sample_dt_fs;
        if t > policy.max_horizon_fs {
            return Err(Error::CutoffNotReached {
                cutoff: policy.trace_cutoff,
                horizon_fs: policy.max_horizon_fs,
                trace: f64::NAN,
            });
        }
        for (a, p) in phases.iter_mut().enumerate() {
            *p = (C64::new(0.0, -1.0) * vals[a] * t).exp();
        }
        for i in 0..n {
            for j in 0..n {
                middle[(i, j)] = rho0_coeff[(i, j)] * phases[i] * phases[j].conj();
            }
        }
        let rho = vecs.dot(&middle).dot(&crate::linalg::dagger(&vecs));
        let trace: f64 = (0..n).map(|i| rho[(i, i)].re).sum();
        acc.push(t, offdiag_abs_sum(&rho, basis.as_ref()), trace);
        k += 1;
    }
    let refinement = if acc.integral > 0.0 {
        (acc.integral - acc.integral_coarse).abs() / acc.integral
    } else {
        0.0
    };
    Ok(CoherenceReport {
        integral_fs: acc.integral,
        normalized: None,
        cutoff_time_fs: acc.cutoff_time.unwrap(),
        refinement_error: refinement,
    })
}

/// Which master equation drives a run.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelKind {
    Redfield,
    Heom,
}

/// One row of an efficiency/coherence sweep.
#[derive(Clone, Debug)]
pub struct SweepPoint {
    pub lambda_cm1: f64,
    pub report: EfficiencyReport,
    pub coherence: CoherenceReport,
}

#[derive(Clone, Debug)]
pub struct SweepOptions {
    pub efficiency: EfficiencyOptions,
    pub coherence: CoherencePolicy,
    pub heom: HeomOptions,
    pub threading: Threading,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self {
            efficiency: EfficiencyOptions::default(),
            coherence: CoherencePolicy::default(),
            heom: HeomOptions::default(),
            threading: Threading::Auto,
        }
    }
}

/// Efficiency + coherence across a reorganization-energy grid. The lambda = 0
/// normalization run is shared by all grid points (the Hamiltonian's uniform
/// lambda shift does not change the dynamics).
pub fn efficiency_sweep(
    system: &ExcitonSystem,
    kind: ModelKind,
    lambdas_cm1: &[f64],
    init: &InitialState,
    opts: &SweepOptions,
) -> Result<Vec<SweepPoint>> {
    if lambdas_cm1.is_empty() {
        return Err(Error::Config("empty reorganization-energy grid".into()));
    }
    let rho0 = init.density(system.n_sites());
    let c0 = coherence_coherent_sinks(
        &system.hamiltonian_rad_fs(),
        system.trap_site,
        system.trap_rate_per_fs,
        system.loss_rate_per_fs,
        &rho0,
        &opts.coherence,
    )?;
    exec::try_map_indexed(lambdas_cm1.len(), opts.threading, |i| {
        sweep_point(system, kind, lambdas_cm1[i], init, opts, c0.integral_fs)
    })
}

fn sweep_point(
    system: &ExcitonSystem,
    kind: ModelKind,
    lambda_cm1: f64,
    init: &InitialState,
    opts: &SweepOptions,
    c0: f64,
) -> Result<SweepPoint> {
    let sys = system.with_reorganization(lambda_cm1);
    let rho0 = init.density(sys.n_sites());
    let coherent_only = |sys: &ExcitonSystem| {
        coherence_coherent_sinks(
            &sys.hamiltonian_rad_fs(),
            sys.trap_site,
            sys.trap_rate_per_fs,
            sys.loss_rate_per_fs,
            &rho0,
            &opts.coherence,
        )
    };
    let (report, mut coherence) = match kind {
        ModelKind::Redfield => {
            let model = build_redfield_generator(&sys)?;
            let engine = Engine::Redfield(&model);
            let report = efficiency_report(&engine, Some(&model), init, &opts.efficiency)?;
            let coh = if lambda_cm1 == 0.0 {
                coherent_only(&sys)?
            } else {
                integrated_coherence(&engine, &rho0, &opts.coherence)?
            };
            (report, coh)
        }
        ModelKind::Heom => {
            let gen = crate::heom::build_heom_generator(&sys, &opts.heom)?;
            let engine = Engine::Heom(&gen);
            let report = efficiency_report(&engine, None, init, &opts.efficiency)?;
            let coh = if lambda_cm1 == 0.0 {
                coherent_only(&sys)?
            } else {
                integrated_coherence(&engine, &rho0, &opts.coherence)?
            };
            (report, coh)
        }
    };
    coherence.normalized = Some(coherence.integral_fs / c0);
    Ok(SweepPoint {
        lambda_cm1,
        report,
        coherence,
    })
}

/// CSV serialization of sweep rows; absent quantities stay empty.
pub fn sweep_csv(points: &[SweepPoint], model: ModelKind, init: &InitialState) -> String {
    let mut out = String::from(
        "lambda_cm1,eta,eta_H,eta_decoherence,eta_init,eta_dyn,C,C_normalized,model,initial_state\n",
    );
    let model_name = match model {
        ModelKind::Redfield => "redfield",
        ModelKind::Heom => "heom",
    };
    let fmt = |v: Option<f64>| v.map(|x| format!("{x:.8}")).unwrap_or_default();
    for p in points {
        out.push_str(&format!(
            "{:.6},{:.8},{},{},{},{},{:.6},{},{},{}\n",
            p.lambda_cm1,
            p.report.eta,
            fmt(p.report.eta_h),
            fmt(p.report.eta_decoherence),
            fmt(p.report.eta_init),
            fmt(p.report.eta_dyn),
            p.coherence.integral_fs,
            fmt(p.coherence.normalized),
            model_name,
            init.label(),
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::site_state;
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
    fn kappa_zero_gives_zero_efficiency() {
        let mut sys = dimer(35.0);
        sys.trap_rate_per_fs = 0.0;
        let model = build_redfield_generator(&sys).unwrap();
        let engine = Engine::Redfield(&model);
        let opts = EfficiencyOptions::default();
        let fact = factorize_generator(&engine, &opts).unwrap();
        let eta = efficiency_algebraic(&fact, &engine, &site_state(2, 0)).unwrap();
        assert_eq!(eta, 0.0);
    }

    #[test]
    fn trap_only_exit_gives_unit_efficiency() {
        let mut sys = dimer(35.0);
        sys.loss_rate_per_fs = 0.0;
        let model = build_redfield_generator(&sys).unwrap();
        let engine = Engine::Redfield(&model);
        let opts = EfficiencyOptions::default();
        let fact = factorize_generator(&engine, &opts).unwrap();
        let eta = efficiency_algebraic(&fact, &engine, &site_state(2, 0)).unwrap();
        assert!((eta - 1.0).abs() < 1e-6, "eta = {eta}");
    }

    #[test]
    fn algebraic_and_quadrature_agree() {
        let sys = dimer(35.0);
        let model = build_redfield_generator(&sys).unwrap();
        let engine = Engine::Redfield(&model);
        let opts = EfficiencyOptions::default();
        let fact = factorize_generator(&engine, &opts).unwrap();
        let rho0 = site_state(2, 0);
        let alg = efficiency_algebraic(&fact, &engine, &rho0).unwrap();
        let quad = efficiency_quadrature(&engine, &rho0, &opts).unwrap();
        assert!(
            (alg - quad).abs() < 1e-6,
            "algebraic {alg} vs quadrature {quad}"
        );
        // close to unity for the dimer at these rates
        assert!(alg > 0.97 && alg <= 1.0 + 1e-9, "eta = {alg}");
    }

    #[test]
    fn partition_identity_holds() {
        for lambda in [5.0, 35.0, 100.0] {
            let sys = dimer(lambda);
            let model = build_redfield_generator(&sys).unwrap();
            let engine = Engine::Redfield(&model);
            let opts = EfficiencyOptions::default();
            let fact = factorize_generator(&engine, &opts).unwrap();
            let rho0 = site_state(2, 0);
            let eta = efficiency_algebraic(&fact, &engine, &rho0).unwrap();
            let eta_h = contribution(&fact, &engine, GeneratorPart::Coherent, &rho0).unwrap();
            let eta_dec =
                contribution(&fact, &engine, GeneratorPart::Decoherence, &rho0).unwrap();
            assert!(
                (eta - eta_h - eta_dec).abs() < 1e-6,
                "lambda={lambda}: eta {eta} != {eta_h} + {eta_dec}"
            );
        }
    }

    #[test]
    fn full_part_returns_partition_total() {
        // For rho0 with no trap population, Tr{M_trap (M_trap+M_loss)^-1 rho0}
        // vanishes, so the full-generator "contribution" is zero.
        let sys = dimer(35.0);
        let model = build_redfield_generator(&sys).unwrap();
        let engine = Engine::Redfield(&model);
        let opts = EfficiencyOptions::default();
        let fact = factorize_generator(&engine, &opts).unwrap();
        let total = contribution(&fact, &engine, GeneratorPart::Full, &site_state(2, 0)).unwrap();
        assert!(total.abs() < 1e-12, "partition total {total}");
    }

    #[test]
    fn lambda_zero_means_no_decoherence_contribution() {
        let sys = dimer(0.0);
        let model = build_redfield_generator(&sys).unwrap();
        let engine = Engine::Redfield(&model);
        let opts = EfficiencyOptions::default();
        let fact = factorize_generator(&engine, &opts).unwrap();
        let rho0 = site_state(2, 0);
        let eta = efficiency_algebraic(&fact, &engine, &rho0).unwrap();
        let eta_h = contribution(&fact, &engine, GeneratorPart::Coherent, &rho0).unwrap();
        let eta_dec = contribution(&fact, &engine, GeneratorPart::Decoherence, &rho0).unwrap();
        assert!(eta_dec.abs() < 1e-8, "eta_dec = {eta_dec}");
        assert!((eta - eta_h).abs() < 1e-8);
    }

    #[test]
    fn gamma_zero_makes_decomposition_singular() {
        let mut sys = dimer(35.0);
        sys.loss_rate_per_fs = 0.0;
        let model = build_redfield_generator(&sys).unwrap();
        let engine = Engine::Redfield(&model);
        let opts = EfficiencyOptions::default();
        let fact = factorize_generator(&engine, &opts).unwrap();
        let err = contribution(&fact, &engine, GeneratorPart::Coherent, &site_state(2, 0));
        assert!(err.is_err());
    }

    #[test]
    fn no_jump_without_channels_recovers_everything() {
        // lambda = 0 and Gamma = 0: no jumps ever happen, so the no-jump
        // trajectory is the full dynamics and eta_init = 1.
        let mut sys = dimer(0.0);
        sys.loss_rate_per_fs = 0.0;
        let model = build_redfield_generator(&sys).unwrap();
        let mut psi: CVec = Array1::zeros(2);
        psi[0] = C64::new(1.0, 0.0);
        let eta_init =
            initial_state_contribution(&model, &psi, &EfficiencyOptions::default()).unwrap();
        assert!((eta_init - 1.0).abs() < 1e-6, "eta_init = {eta_init}");
    }

    #[test]
    fn eta_init_small_at_physiological_coupling() {
        let sys = dimer(35.0);
        let model = build_redfield_generator(&sys).unwrap();
        let mut psi: CVec = Array1::zeros(2);
        psi[0] = C64::new(1.0, 0.0);
        let eta_init =
            initial_state_contribution(&model, &psi, &EfficiencyOptions::default()).unwrap();
        assert!(eta_init.abs() < 0.02, "eta_init = {eta_init}");
    }

    #[test]
    fn concurrence_reference_states() {
        assert_eq!(concurrence(&site_state(2, 0)), 0.0);
        let plus = {
            let mut v: CVec = Array1::zeros(2);
            v[0] = C64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
            v[1] = C64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
            crate::density::pure_state(&v)
        };
        assert!((concurrence(&plus) - 1.0).abs() < 1e-12);
        let mixed = crate::density::site_mixture(2, &[0, 1]);
        assert_eq!(concurrence(&mixed), 0.0);
    }

    #[test]
    fn coherence_normalization_is_one_at_lambda_zero() {
        let sys = dimer(0.0);
        let opts = SweepOptions {
            coherence: CoherencePolicy {
                sample_dt_fs: 2.0,
                ..Default::default()
            },
            ..Default::default()
        };
        let points =
            efficiency_sweep(&sys, ModelKind::Redfield, &[0.0], &InitialState::Site(0), &opts)
                .unwrap();
        let c_norm = points[0].coherence.normalized.unwrap();
        assert!((c_norm - 1.0).abs() < 1e-12, "C~ = {c_norm}");
    }

    #[test]
    fn dimer_coherence_ratio_redfield() {
        let sys = dimer(35.0);
        let opts = SweepOptions::default();
        let points =
            efficiency_sweep(&sys, ModelKind::Redfield, &[35.0], &InitialState::Site(0), &opts)
                .unwrap();
        let c_norm = points[0].coherence.normalized.unwrap();
        // paper-scale value 0.37, checked loosely here; the acceptance suite
        // pins the exact window
        assert!(c_norm > 0.2 && c_norm < 0.6, "C~ = {c_norm}");
        assert!(points[0].coherence.refinement_error < 2e-3);
    }

    #[test]
    fn singular_generator_is_reported() {
        // kappa = Gamma = 0 leaves stationary states; the factorization must
        // refuse rather than return garbage.
        let mut sys = dimer(35.0);
        sys.trap_rate_per_fs = 0.0;
        sys.loss_rate_per_fs = 0.0;
        let model = build_redfield_generator(&sys).unwrap();
        let engine = Engine::Redfield(&model);
        assert!(factorize_generator(&engine, &EfficiencyOptions::default()).is_err());
    }

    #[test]
    fn empty_sweep_grid_is_an_error() {
        let sys = dimer(35.0);
        let res = efficiency_sweep(
            &sys,
            ModelKind::Redfield,
            &[],
            &InitialState::Site(0),
            &SweepOptions::default(),
        );
        assert!(res.is_err());
    }
}
