use excitonic::efficiency::*;
use excitonic::linalg::outer;
use excitonic::redfield::{build_redfield_generator, LindbladChannel};
use excitonic::system::{diagonalize, ExcitonSystem};
use ndarray::array;
use num_complex::Complex64 as C64;

fn dimer(lambda: f64) -> ExcitonSystem {
    ExcitonSystem::new(
        array![0.0, 120.0],
        array![[0.0, -87.7], [-87.7, 0.0]],
        lambda, 50.0, 300.0, 1, 1e-3, 1e-6,
        vec![[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
    ).unwrap()
}

fn main() {
    let sys = dimer(35.0);
    let basis = diagonalize(&sys.hamiltonian_rad_fs()).unwrap();
    for variant in ["collective", "per-exciton", "per-exciton-x2"] {
        let mut model = build_redfield_generator(&sys).unwrap();
        if variant != "collective" {
            // strip the two site-collective dephasing channels (relaxation channels are rank-1 between distinct excitons)
            model.channels.truncate(2);
            let pref = model.bath.dephasing_prefactor() * if variant == "per-exciton-x2" { 2.0 } else { 1.0 };
            for a in 0..2 {
                let va = basis.vectors.column(a).to_owned();
                let factor: f64 = (0..2).map(|m| va[m].norm_sqr().powi(2)).sum();
                model.channels.push(LindbladChannel::new(outer(&va, &va), pref * factor));
            }
        }
        let engine = Engine::Redfield(&model);
        let opts = EfficiencyOptions::default();
        let fact = factorize_generator(&engine, &opts).unwrap();
        let rho0 = excitonic::density::site_state(2, 0);
        let eta = efficiency_algebraic(&fact, &engine, &rho0).unwrap();
        let eta_h = contribution(&fact, &engine, GeneratorPart::Coherent, &rho0).unwrap();
        let mut psi: excitonic::CVec = ndarray::Array1::zeros(2);
        psi[0] = C64::new(1.0, 0.0);
        let eta_init = initial_state_contribution(&model, &psi, &opts).unwrap();
        let coh = integrated_coherence(&engine, &rho0, &CoherencePolicy::default()).unwrap();
        let c0 = coherence_coherent_sinks(&sys.hamiltonian_rad_fs(), 1, 1e-3, 1e-6, &rho0, &CoherencePolicy::default()).unwrap();
        println!("{variant}: eta={:.4} eta_H={:.4} eta_init={:.4} eta_dyn={:.4} C~={:.4}",
            eta, eta_h, eta_init, eta_h - eta_init, coh.integral_fs / c0.integral_fs);
    }
}
