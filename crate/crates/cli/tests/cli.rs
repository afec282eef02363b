use std::path::Path;
use std::process::Command;

use delgfn::metrics::EvalReport;
use delgfn_cli::formats::{load_json, load_samples};
use delgfn_cli::run::{Stat, SummaryRow};

fn delgfn(args: &[&str], dir: &Path) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_delgfn"))
        .args(args)
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, name: &str, method: &str, extra: &str) {
    let text = format!(
        r#"method = "{method}"
seed = 5
beta = 8.0

[instance]
sizes = [2, 2, 2]
min_size = 1
max_size = 4

[paths]
scores = "scores.dels"
fingerprints = "fp.txt"
output = "out_{name}"

[eval]
n_samples = 300
top_k = 10

[hier]
clusters_per_cycle = [2, 2, 2]

[gfn]
iterations = 60
hidden = [16, 16]
forward_batch = 8
replay_batch = 8

{extra}
"#
    );
    std::fs::write(dir.join(format!("{name}.toml")), text).unwrap();
}

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    let o = delgfn(
        &[
            "synth",
            "--sizes",
            "2,2,2",
            "--seed",
            "3",
            "--out",
            "scores.dels",
            "--fingerprints",
            "fp.txt",
            "--fp-width",
            "32",
        ],
        dir.path(),
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    dir
}

#[test]
fn greedy_run_reports_top1_only() {
    let dir = setup();
    write_config(dir.path(), "greedy", "greedy", "[greedy]\nk = [1, 2, 2]\n");
    let o = delgfn(&["run", "--config", "greedy.toml"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let out = dir.path().join("out_greedy");
    let samples = load_samples(&out.join("seed_5/samples.json")).unwrap();
    assert_eq!(samples.len(), 1);
    let row: SummaryRow = load_json(&out.join("summary.json")).unwrap();
    assert!(row.top1_probability.is_some());
    assert!(row.mean_probability.is_none() && row.diversity.is_none());
    assert!(row.top_k_probability.is_none() && row.top_k_diversity.is_none());
}

#[test]
fn identical_configs_give_identical_samples() {
    let dir = setup();
    write_config(dir.path(), "a", "gfn-hier", "");
    write_config(dir.path(), "b", "gfn-hier", "");
    for c in ["a.toml", "b.toml"] {
        let o = delgfn(&["run", "--config", c], dir.path());
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let a = std::fs::read(dir.path().join("out_a/seed_5/samples.json")).unwrap();
    let b = std::fs::read(dir.path().join("out_b/seed_5/samples.json")).unwrap();
    assert_eq!(a, b);
    let manifest: serde_json::Value = load_json(&dir.path().join("out_a/manifest.json")).unwrap();
    assert_eq!(manifest["config"]["gfn"]["iterations"], 60);
}

#[test]
fn multi_seed_summary_matches_per_seed_reports() {
    let dir = setup();
    write_config(dir.path(), "multi", "gfn-flat", "");
    let o = delgfn(
        &["run", "--config", "multi.toml", "--seeds", "3"],
        dir.path(),
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains('±'), "{stdout}");
    let out = dir.path().join("out_multi");
    let row: SummaryRow = load_json(&out.join("summary.json")).unwrap();
    assert_eq!(row.seeds, vec![5, 6, 7]);
    let reports: Vec<EvalReport> = (5..8)
        .map(|s| load_json(&out.join(format!("seed_{s}/report.json"))).unwrap())
        .collect();
    let check = |stat: Option<Stat>, f: &dyn Fn(&EvalReport) -> f64| {
        let v: Vec<f64> = reports.iter().map(f).collect();
        let mean = v.iter().sum::<f64>() / 3.0;
        let std = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 2.0).sqrt();
        let s = stat.unwrap();
        assert!((s.mean - mean).abs() < 1e-12 && (s.std - std).abs() < 1e-12);
    };
    check(row.mean_probability, &|r| r.mean_probability);
    check(row.diversity, &|r| r.diversity.unwrap());
    check(row.top_k_probability, &|r| r.top_k_probability);
    check(row.top_k_diversity, &|r| r.top_k_diversity.unwrap());
    check(row.top1_probability, &|r| r.top1_probability);

    let o = delgfn(&["report", "out_multi"], dir.path());
    assert!(o.status.success());
    let table = String::from_utf8_lossy(&o.stdout);
    assert!(table.contains("gfn-flat"));
    assert!(table.contains("top-10 prob."), "{table}");
}

#[test]
fn train_sample_evaluate_pipeline() {
    let dir = setup();
    write_config(
        dir.path(),
        "ppo",
        "ppo",
        "[ppo]\niterations = 3\nhidden = [8]\ntrajectories_per_iteration = 8\nepochs = 2\n",
    );
    let o = delgfn(&["train", "--config", "ppo.toml", "--out", "m"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let o = delgfn(
        &[
            "sample",
            "--config",
            "ppo.toml",
            "--model",
            "m/model.json",
            "--n",
            "40",
            "--out",
            "s.json",
        ],
        dir.path(),
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let o = delgfn(
        &["evaluate", "--samples", "s.json", "--top-k", "5"],
        dir.path(),
    );
    assert!(o.status.success());
    let r: EvalReport = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!((r.n_samples, r.k), (40, 5));

    write_config(
        dir.path(),
        "mcmc",
        "mcmc",
        "[mcmc]\nn_chains = 20\nchain_length = 10\n",
    );
    let o = delgfn(
        &["baseline", "--config", "mcmc.toml", "--out", "mc.json"],
        dir.path(),
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(load_samples(&dir.path().join("mc.json")).unwrap().len(), 20);
    assert!(dir.path().join("mc.mcmc.json").exists());

    let o = delgfn(
        &[
            "cluster",
            "--fingerprints",
            "fp.txt",
            "--clusters",
            "1,2,2",
            "--out",
            "c.json",
        ],
        dir.path(),
    );
    assert!(o.status.success());
}

#[test]
fn exit_codes() {
    let dir = setup();
    assert_eq!(delgfn(&["nonsense"], dir.path()).status.code(), Some(1));
    assert_eq!(delgfn(&["--help"], dir.path()).status.code(), Some(0));
    std::fs::write(dir.path().join("bad.dels"), b"DELS\x01\x00garbage").unwrap();
    std::fs::write(dir.path().join("bad.toml"), "method = \"random\"\n[instance]\nsizes=[2,2,2]\nmin_size=1\nmax_size=4\n[paths]\nscores=\"bad.dels\"\n").unwrap();
    let o = delgfn(
        &["baseline", "--config", "bad.toml", "--out", "x.json"],
        dir.path(),
    );
    assert_eq!(
        o.status.code(),
        Some(2),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    std::fs::write(
        dir.path().join("win.toml"),
        "method = \"random\"\n[instance]\nsizes=[2,2,2]\nmin_size=5\nmax_size=7\n",
    )
    .unwrap();
    let o = delgfn(
        &["baseline", "--config", "win.toml", "--out", "x.json"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(
        delgfn_cli::CliError::from(delgfn::Error::Numeric("x".into())).exit_code(),
        3
    );
}
