use std::path::Path;

use cdl_core::data::CovariateKind;
use cdl_core::diagnostics::psrf_table;
use cdl_core::draws::DrawSet;
use cdl_core::run::{export_plot_data, fit, summarize_run, ModelKind, Paths, RunConfig};
use cdl_core::sampler::SamplerConfig;
use cdl_core::simulate::{finch_like, generate, vole_like};
use cdl_core::Error;

fn vole_config(dir: &Path, m: Option<usize>, chains: usize) -> RunConfig {
    let sim = vole_like();
    let (_, data) = generate(&sim, 2).unwrap();
    let path = dir.join("captures.csv");
    data.write_csv(&path).unwrap();
    let mut cfg = RunConfig::default();
    cfg.model.kind = ModelKind::Robust;
    cfg.model.covariate = CovariateKind::Mass;
    cfg.model.m = m;
    cfg.sampler = SamplerConfig { n_adapt: 100, n_iter: 150, n_chains: chains, seed: 5, ..Default::default() };
    cfg.paths = Paths { data: Some(path), out: None };
    cfg
}

#[test]
fn fit_writes_a_complete_run_directory() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = vole_config(tmp.path(), Some(250), 2);
    let out = fit(&cfg, &tmp.path().join("run")).unwrap();
    for f in ["config.toml", "data.sha256", "chain_1.csv", "chain_2.csv", "summary.csv", "log.txt"] {
        assert!(out.dir.join(f).exists(), "missing {f}");
    }
    let draws = DrawSet::read_dir(&out.dir).unwrap();
    assert_eq!(draws.n_chains(), 2);
    assert_eq!(draws.chains[0].len(), 150);
    assert_eq!(draws, out.posterior.draws);
    let log = std::fs::read_to_string(out.dir.join("log.txt")).unwrap();
    assert!(log.contains("acceptance alpha1"));
    // auto standardization is resolved into the snapshot
    let snap = RunConfig::load(&out.dir.join("config.toml")).unwrap();
    assert!(snap.model.standardization.is_some());
    assert_eq!(snap.model.k2, Some(vec![5; 6]));
    let summary = std::fs::read_to_string(out.dir.join("summary.csv")).unwrap();
    assert!(summary.starts_with("name,median,q2.5,q25,q75,q97.5,psrf,n_draws\n"));
}

#[test]
fn default_m_is_twice_the_observed_count() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = vole_config(tmp.path(), None, 1);
    cfg.sampler.n_adapt = 5;
    cfg.sampler.n_iter = 5;
    let out = fit(&cfg, &tmp.path().join("run")).unwrap();
    let log = std::fs::read_to_string(out.dir.join("log.txt")).unwrap();
    let n_obs: usize = log.lines().next().unwrap().rsplit(' ').next().unwrap().parse().unwrap();
    assert_eq!(out.config.model.m, Some(2 * n_obs));
}

#[test]
fn single_chain_refuses_psrf() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = vole_config(tmp.path(), Some(250), 1);
    let out = fit(&cfg, &tmp.path().join("run")).unwrap();
    let rows = summarize_run(&out.dir, None).unwrap();
    assert!(rows.iter().all(|r| r.psrf.is_none()));
    let err = psrf_table(&out.posterior.draws).unwrap_err();
    assert!(matches!(err, Error::Diagnostics(_)));
    assert_eq!(err.exit_code(), 4);
    assert!(err.to_string().contains("two chains"), "{err}");
}

#[test]
fn small_m_triggers_the_augmentation_warning() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = vole_config(tmp.path(), None, 1);
    let (_, data) = generate(&vole_like(), 2).unwrap();
    cfg.model.m = Some(data.n_observed());
    let out = fit(&cfg, &tmp.path().join("run")).unwrap();
    assert!(out.warnings.iter().any(|w| w.contains("increase M")), "{:?}", out.warnings);
}

#[test]
fn export_quantities() {
    let tmp = tempfile::tempdir().unwrap();
    let sim = finch_like();
    let (_, data) = generate(&sim, 3).unwrap();
    let path = tmp.path().join("captures.csv");
    data.write_csv(&path).unwrap();
    let mut cfg = RunConfig::default();
    cfg.model.covariate = CovariateKind::Categorical;
    cfg.model.m = Some(sim.m);
    cfg.sampler = SamplerConfig { n_adapt: 30, n_iter: 60, n_chains: 2, seed: 8, ..Default::default() };
    cfg.paths = Paths { data: Some(path), out: None };
    let out = fit(&cfg, &tmp.path().join("run")).unwrap();

    let text = export_plot_data(&out.dir, "N_j").unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "quantity,index,median,lo50,hi50,lo95,hi95");
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    for q in ["N", "N_state.1", "N_state.2"] {
        assert_eq!(rows.iter().filter(|r| r[0] == q).count(), 16, "{q}");
    }
    for r in &rows {
        let v: Vec<f64> = r[2..].iter().map(|s| s.parse().unwrap()).collect();
        assert!(v[3] <= v[1] && v[1] <= v[0] && v[0] <= v[2] && v[2] <= v[4]);
    }
    let beta = export_plot_data(&out.dir, "beta").unwrap();
    assert_eq!(beta.lines().count(), 1 + 16);
    let err = export_plot_data(&out.dir, "nonsense").unwrap_err().to_string();
    assert!(err.contains("N_j") && err.contains("omega"), "{err}");
}
