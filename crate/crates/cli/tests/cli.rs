use std::path::Path;
use std::process::{Command, Output};

fn cdlcr(args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_cdlcr"));
    cmd.args(args).env_remove("CDLCR_SEED").env("RUST_LOG", "warn");
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().expect("run cdlcr")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn simulate(dir: &Path) -> std::path::PathBuf {
    let sim = dir.join("sim");
    let o = cdlcr(&["simulate", "--preset", "vole", "--seed", "3", "--out", p(&sim)], &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["captures.csv", "truth.json", "config.toml", "simulation.toml"] {
        assert!(sim.join(f).exists(), "missing {f}");
    }
    sim
}

#[test]
fn simulate_fit_summarize_diag_export() {
    let tmp = tempfile::tempdir().unwrap();
    let sim = simulate(tmp.path());
    let run = tmp.path().join("run");
    let cfg = sim.join("config.toml");
    let o = cdlcr(&["fit", "--config", p(&cfg), "--out", p(&run), "--chains", "2", "--adapt", "50", "--iter", "60"], &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let chain = std::fs::read_to_string(run.join("chain_2.csv")).unwrap();
    assert_eq!(chain.lines().count(), 61);

    let o = cdlcr(&["summarize", p(&run), "--names", "N_total,alpha1"], &[]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    assert_eq!(text.lines().count(), 3);
    assert!(text.starts_with("name,median,q2.5,q25,q75,q97.5,psrf,n_draws"));

    let o = cdlcr(&["diag", p(&run)], &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8(o.stdout).unwrap().contains("\nalpha1,"));

    let o = cdlcr(&["export", p(&run), "--quantity", "N_j"], &[]);
    assert!(o.status.success());
    assert_eq!(String::from_utf8(o.stdout).unwrap().lines().count(), 7);

    let o = cdlcr(&["export", p(&run), "--quantity", "wingspan"], &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8(o.stderr).unwrap().contains("N_j"));
}

#[test]
fn single_chain_diag_exits_with_precondition_status() {
    let tmp = tempfile::tempdir().unwrap();
    let sim = simulate(tmp.path());
    let run = tmp.path().join("run");
    let o = cdlcr(
        &["fit", "--config", p(&sim.join("config.toml")), "--out", p(&run), "--chains", "1", "--adapt", "10", "--iter", "20"],
        &[],
    );
    assert!(o.status.success());
    let o = cdlcr(&["diag", p(&run)], &[]);
    assert_eq!(o.status.code(), Some(4));
    assert!(String::from_utf8(o.stderr).unwrap().contains("--chains 2"));
    let o = cdlcr(&["summarize", p(&run)], &[]);
    assert!(o.status.success());
    assert!(String::from_utf8(o.stderr).unwrap().contains("single chain"));
    assert!(String::from_utf8(o.stdout).unwrap().contains(",NA,"));
}

#[test]
fn same_seed_gives_identical_files_and_seed_precedence() {
    let tmp = tempfile::tempdir().unwrap();
    let sim = simulate(tmp.path());
    // a config without a seed so the environment can supply it
    let cfg = tmp.path().join("noseed.toml");
    std::fs::write(
        &cfg,
        format!(
            "[model]\nkind = \"robust\"\ncovariate = \"mass\"\nm = 250\n[sampler]\nn_adapt = 20\nn_iter = 30\nn_chains = 2\n[paths]\ndata = \"{}\"\n",
            p(&sim.join("captures.csv"))
        ),
    )
    .unwrap();
    let fit = |out: &str, extra: &[&str], env: &[(&str, &str)]| {
        let dir = tmp.path().join(out);
        let mut args = vec!["fit", "--config", p(&cfg), "--out", p(&dir)];
        args.extend_from_slice(extra);
        let o = cdlcr(&args, env);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        std::fs::read(dir.join("chain_1.csv")).unwrap()
    };
    let flag = fit("a", &["--seed", "17"], &[]);
    assert_eq!(flag, fit("b", &["--seed", "17"], &[]));
    assert_eq!(flag, fit("c", &[], &[("CDLCR_SEED", "17")]));
    assert_eq!(flag, fit("d", &["--seed", "17"], &[("CDLCR_SEED", "99")]));
    assert_ne!(flag, fit("e", &["--seed", "18"], &[]));
    let snapshot = std::fs::read_to_string(tmp.path().join("c").join("config.toml")).unwrap();
    assert!(snapshot.contains("seed = 17"));
}

#[test]
fn invalid_input_exits_with_validation_status() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("bad.csv");
    std::fs::write(&data, "id,primary,secondary,captured\na,1,1,2\n").unwrap();
    let o = cdlcr(&["fit", "--data", p(&data), "--out", p(&tmp.path().join("r"))], &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8(o.stderr).unwrap().contains(":2:"));
    let o = cdlcr(&["fit", "--data", p(&data), "--out", "x", "--model", "fancy"], &[]);
    assert_eq!(o.status.code(), Some(2));
}
