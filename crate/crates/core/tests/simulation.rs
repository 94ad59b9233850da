use cdl_core::data::CovariateKind;
use cdl_core::likelihood::{log_birth, log_mortality};
use cdl_core::model::{ModelSpec, Priors};
use cdl_core::popstate::AugmentedState;
use cdl_core::sampler::{run_with_inits, SamplerConfig};
use cdl_core::simulate::{generate, vole_like};
use cdl_core::Error;
use ndarray::Array2;

#[test]
fn fraction_born_before_the_study_matches_zeta1() {
    let sim = vole_like();
    let zeta1 = sim.params.birth.zeta[0];
    let (mut first, mut total) = (0usize, 0usize);
    for seed in 0..40 {
        let (t, _) = generate(&sim, seed).unwrap();
        for i in (0..t.w.len()).filter(|&i| t.w[i]) {
            total += 1;
            first += (t.birth[i] == 0) as usize;
        }
    }
    let p = first as f64 / total as f64;
    let se = (zeta1 * (1.0 - zeta1) / total as f64).sqrt();
    assert!((p - zeta1).abs() < 4.0 * se, "{p} vs {zeta1} (se {se})");
}

#[test]
fn true_birth_parameters_beat_perturbed_ones_on_average() {
    let sim = vole_like();
    let zeta = sim.params.birth.zeta.clone();
    let mut perturbed = zeta.clone();
    perturbed[0] = (zeta[0] + 0.15).min(0.99);
    perturbed[2] = (zeta[2] - 0.1).max(0.01);
    let (mut at_truth, mut at_other) = (0.0, 0.0);
    for seed in 0..20 {
        let (t, _) = generate(&sim, seed).unwrap();
        let aug = AugmentedState::from_intervals(6, &t.birth, &t.last_alive, &t.w).unwrap();
        let s = Array2::from_elem((t.w.len(), 5), 0.7);
        at_truth += log_birth(&aug.a_b, &aug.w, &zeta).unwrap() + log_mortality(&aug.a_d, &aug.a_b, &aug.w, &s).unwrap();
        at_other += log_birth(&aug.a_b, &aug.w, &perturbed).unwrap() + log_mortality(&aug.a_d, &aug.a_b, &aug.w, &s).unwrap();
    }
    assert!(at_truth > at_other);
}

#[test]
fn impossible_initial_state_is_an_initialization_error() {
    let sim = vole_like();
    let (truth, data) = generate(&sim, 1).unwrap();
    let mut init = truth.chain_state(&data).unwrap();
    // an observed individual marked as not in the population
    init.w[0] = false;
    let spec = ModelSpec {
        robust: true,
        covariate: CovariateKind::Mass,
        m: sim.m,
        n_states: 2,
        mass_censoring: true,
        standardization: sim.standardization,
    };
    let cfg = SamplerConfig { n_adapt: 1, n_iter: 1, n_chains: 1, ..Default::default() };
    let err = run_with_inits(&cfg, &spec, &Priors::default(), &data, Some(&[init])).unwrap_err();
    assert!(matches!(err, Error::Initialization(_)), "{err}");
    assert_eq!(err.exit_code(), 3);
}
