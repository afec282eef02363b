//! Method dispatch, evaluation and multi-seed orchestration.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use delgfn::baselines::{
    greedy_select, mcmc_sample, ppo_sample, ppo_train, sample_random, score_designs, McmcStats,
    PpoModel, PpoRecord,
};
use delgfn::cluster::{cluster_blocks, ClusterMap};
use delgfn::env::{Environment, FlatEnv, HierEnv};
use delgfn::gflownet::{sample_library_set, train_gfn, TbModel, TrainRecord};
use delgfn::metrics::{property_profile, topk_summary, EvalReport, Histogram, PropertyTable};
use delgfn::{SampleSet, ScoreTable};
use log::info;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{Method, RunConfig};
use crate::error::{CliError, CliResult};
use crate::formats::{
    load_cluster_map, load_fingerprints, load_property_table, load_score_table, store_json,
    store_samples,
};

/// Everything a run reads from disk.
pub struct Inputs {
    pub table: ScoreTable,
    pub clusters: Option<ClusterMap>,
    pub properties: Vec<PropertyTable>,
}

impl Inputs {
    pub fn load(cfg: &RunConfig) -> CliResult<Self> {
        let path = cfg.paths.scores.as_ref().ok_or_else(|| {
            CliError::Usage("paths.scores is required (`delgfn synth` writes one)".into())
        })?;
        let table = load_score_table(path)?;
        table
            .check_spec(&cfg.instance.sizes)
            .map_err(|e| CliError::parse(path, e))?;
        let clusters = if cfg.method == Method::GfnHier {
            Some(load_clusters(cfg)?)
        } else {
            None
        };
        let properties = cfg
            .paths
            .properties
            .iter()
            .map(|p| {
                let prop = load_property_table(p)?;
                prop.values
                    .check_spec(&cfg.instance.sizes)
                    .map_err(|e| CliError::parse(p, e))?;
                Ok(prop)
            })
            .collect::<CliResult<_>>()?;
        Ok(Self {
            table,
            clusters,
            properties,
        })
    }
}

fn load_clusters(cfg: &RunConfig) -> CliResult<ClusterMap> {
    if let Some(p) = &cfg.paths.clusters {
        let map = load_cluster_map(p)?;
        map.check_spec(&cfg.instance.sizes)
            .map_err(|e| CliError::parse(p, e))?;
        return Ok(map);
    }
    let Some(p) = &cfg.paths.fingerprints else {
        return Err(CliError::Usage(
            "gfn-hier needs paths.clusters or paths.fingerprints".into(),
        ));
    };
    let fps = load_fingerprints(p)?;
    fps.check_spec(&cfg.instance.sizes)
        .map_err(|e| CliError::parse(p, e))?;
    Ok(cluster_blocks(&fps, &cfg.hier.clusters_per_cycle)?)
}

pub fn flat_env(cfg: &RunConfig) -> CliResult<FlatEnv> {
    Ok(FlatEnv::new(
        cfg.instance.sizes.clone(),
        cfg.instance.constraint()?,
        cfg.instance.mask_rule,
    )?)
}

pub fn hier_env(cfg: &RunConfig, clusters: ClusterMap) -> CliResult<HierEnv> {
    Ok(HierEnv::new(
        cfg.instance.sizes.clone(),
        cfg.instance.constraint()?,
        clusters,
        cfg.instance.mask_rule,
    )?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TrainedModel {
    Gfn(TbModel),
    Ppo(PpoModel),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TrainLog {
    Gfn(Vec<TrainRecord>),
    Ppo(Vec<PpoRecord>),
}

impl TrainLog {
    /// One JSON object per line.
    pub fn to_jsonl(&self) -> String {
        fn lines<T: Serialize>(v: &[T]) -> String {
            v.iter()
                .map(|r| serde_json::to_string(r).expect("records serialize") + "\n")
                .collect()
        }
        match self {
            TrainLog::Gfn(v) => lines(v),
            TrainLog::Ppo(v) => lines(v),
        }
    }
}

fn hier_clusters(inputs: &Inputs) -> CliResult<ClusterMap> {
    inputs
        .clusters
        .clone()
        .ok_or_else(|| CliError::Usage("hierarchical method without a cluster map".into()))
}

/// Trains the learned method selected in `cfg`.
pub fn train(cfg: &RunConfig, inputs: &Inputs) -> CliResult<(TrainedModel, TrainLog)> {
    info!("training {} with seed {}", cfg.method.name(), cfg.seed);
    match cfg.method {
        Method::GfnFlat => {
            let (m, log) = train_gfn(&cfg.gfn, &flat_env(cfg)?, &inputs.table)?;
            Ok((TrainedModel::Gfn(m), TrainLog::Gfn(log)))
        }
        Method::GfnHier => {
            let env = hier_env(cfg, hier_clusters(inputs)?)?;
            let (m, log) = train_gfn(&cfg.gfn, &env, &inputs.table)?;
            Ok((TrainedModel::Gfn(m), TrainLog::Gfn(log)))
        }
        Method::Ppo => {
            let (m, log) = ppo_train(&flat_env(cfg)?, &inputs.table, &cfg.ppo)?;
            Ok((TrainedModel::Ppo(m), TrainLog::Ppo(log)))
        }
        other => Err(CliError::Usage(format!(
            "{} has nothing to train",
            other.name()
        ))),
    }
}

fn sampling_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    rng
}

/// Draws `n` designs from a trained model.
pub fn sample(
    cfg: &RunConfig,
    inputs: &Inputs,
    model: &TrainedModel,
    n: usize,
) -> CliResult<SampleSet> {
    let mut rng = sampling_rng(cfg.seed);
    let beta = cfg.method_beta();
    let set = match (cfg.method, model) {
        (Method::GfnFlat, TrainedModel::Gfn(m)) => {
            sample_library_set(m, &flat_env(cfg)?, &inputs.table, beta, n, &mut rng)?
        }
        (Method::GfnHier, TrainedModel::Gfn(m)) => {
            let env = hier_env(cfg, hier_clusters(inputs)?)?;
            sample_library_set(m, &env, &inputs.table, beta, n, &mut rng)?
        }
        (Method::Ppo, TrainedModel::Ppo(m)) => {
            ppo_sample(m, &flat_env(cfg)?, &inputs.table, beta, n, &mut rng)?
        }
        (method, _) => {
            return Err(CliError::Usage(format!(
                "model file does not match method {}",
                method.name()
            )))
        }
    };
    Ok(set)
}

/// Runs one of the untrained samplers.
pub fn baseline(cfg: &RunConfig, inputs: &Inputs) -> CliResult<(SampleSet, Option<McmcStats>)> {
    let spec = &cfg.instance.sizes;
    let constraint = cfg.instance.constraint()?;
    match cfg.method {
        Method::Random => {
            let mut rng = sampling_rng(cfg.seed);
            let set = sample_random(
                &flat_env(cfg)?,
                &inputs.table,
                cfg.method_beta(),
                cfg.eval.n_samples,
                &mut rng,
            )?;
            Ok((set, None))
        }
        Method::Greedy => {
            let d = greedy_select(&inputs.table, &cfg.greedy.k)?;
            let set = score_designs(spec, &constraint, &inputs.table, cfg.method_beta(), [d])?;
            Ok((set, None))
        }
        Method::Mcmc => {
            let (set, stats) = mcmc_sample(&inputs.table, spec, &constraint, &cfg.mcmc)?;
            Ok((set, Some(stats)))
        }
        other => Err(CliError::Usage(format!(
            "{} is a learned method; use `train` and `sample`",
            other.name()
        ))),
    }
}

/// Result of running a method for one seed.
pub struct SeedOutcome {
    pub seed: u64,
    pub samples: SampleSet,
    pub report: EvalReport,
    pub histograms: Vec<Histogram>,
    pub model: Option<TrainedModel>,
    pub log: Option<TrainLog>,
    pub mcmc: Option<McmcStats>,
}

pub fn evaluate(
    samples: &SampleSet,
    top_k: usize,
    props: &[PropertyTable],
    bins: usize,
) -> CliResult<(EvalReport, Vec<Histogram>)> {
    let report = topk_summary(samples, top_k)?;
    // property distributions are reported over the top-k libraries
    let order = delgfn::metrics::rank_by_reward(samples);
    let mut top = SampleSet::new(samples.spec.clone(), samples.constraint, samples.beta);
    top.entries = order[..report.k]
        .iter()
        .map(|&i| samples.entries[i].clone())
        .collect();
    let hist = property_profile(&top, props, bins)?;
    Ok((report, hist))
}

pub fn execute(cfg: &RunConfig, inputs: &Inputs) -> CliResult<SeedOutcome> {
    let (samples, model, log, mcmc) = if cfg.method.is_learned() {
        let (model, log) = train(cfg, inputs)?;
        let s = sample(cfg, inputs, &model, cfg.eval.n_samples)?;
        (s, Some(model), Some(log), None)
    } else {
        let (s, stats) = baseline(cfg, inputs)?;
        (s, None, None, stats)
    };
    let (report, histograms) =
        evaluate(&samples, cfg.eval.top_k, &inputs.properties, cfg.eval.bins)?;
    Ok(SeedOutcome {
        seed: cfg.seed,
        samples,
        report,
        histograms,
        model,
        log,
        mcmc,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

impl Stat {
    /// Mean and sample standard deviation (0 for a single value).
    pub fn of(values: &[f64]) -> Option<Stat> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Some(Stat { mean, std })
    }
}

/// Per-method aggregate over seeds. Greedy is deterministic and yields one
/// design, so only its top-1 column is reported.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: String,
    pub seeds: Vec<u64>,
    /// Configured top-k of the run.
    pub top_k: usize,
    pub mean_probability: Option<Stat>,
    pub diversity: Option<Stat>,
    pub top_k_probability: Option<Stat>,
    pub top_k_diversity: Option<Stat>,
    pub top1_probability: Option<Stat>,
}

pub fn summarize(method: Method, top_k: usize, reports: &[(u64, EvalReport)]) -> SummaryRow {
    let col = |f: &dyn Fn(&EvalReport) -> Option<f64>| -> Option<Stat> {
        let v: Vec<f64> = reports.iter().filter_map(|(_, r)| f(r)).collect();
        if v.len() == reports.len() {
            Stat::of(&v)
        } else {
            None
        }
    };
    let top1 = col(&|r| Some(r.top1_probability));
    let greedy = method == Method::Greedy;
    let unless_greedy = |s: Option<Stat>| if greedy { None } else { s };
    SummaryRow {
        method: method.name().to_string(),
        seeds: reports.iter().map(|(s, _)| *s).collect(),
        top_k,
        mean_probability: unless_greedy(col(&|r| Some(r.mean_probability))),
        diversity: unless_greedy(col(&|r| r.diversity)),
        top_k_probability: unless_greedy(col(&|r| Some(r.top_k_probability))),
        top_k_diversity: unless_greedy(col(&|r| r.top_k_diversity)),
        top1_probability: top1,
    }
}

/// Plain-text table with `mean ± std` cells.
pub fn format_summary(rows: &[SummaryRow]) -> String {
    let top_k = match rows.first() {
        Some(r) if rows.iter().all(|o| o.top_k == r.top_k) => r.top_k.to_string(),
        _ => "k".to_string(),
    };
    let cell = |s: &Option<Stat>| match s {
        Some(s) => format!("{:.3} ± {:.3}", s.mean, s.std),
        None => "-".to_string(),
    };
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<10} {:>15} {:>15} {:>15} {:>15} {:>15}",
        "method",
        "mean prob.",
        "diversity",
        format!("top-{top_k} prob."),
        format!("top-{top_k} div."),
        "top-1 prob."
    );
    for r in rows {
        let _ = writeln!(
            out,
            "{:<10} {:>15} {:>15} {:>15} {:>15} {:>15}",
            r.method,
            cell(&r.mean_probability),
            cell(&r.diversity),
            cell(&r.top_k_probability),
            cell(&r.top_k_diversity),
            cell(&r.top1_probability)
        );
    }
    out
}

/// Everything needed to repeat a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool_version: String,
    pub seeds: Vec<u64>,
    pub config: RunConfig,
}

pub fn histogram_csv(h: &Histogram) -> String {
    let mut s = String::from("bin,lower,upper,count\n");
    for (b, c) in h.counts.iter().enumerate() {
        let _ = writeln!(s, "{b},{},{},{c}", h.edges[b], h.edges[b + 1]);
    }
    s
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn write_outcome(dir: &Path, o: &SeedOutcome) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    store_samples(&dir.join("samples.json"), &o.samples)?;
    store_json(&dir.join("report.json"), &o.report)?;
    if let Some(m) = &o.model {
        store_json(&dir.join("model.json"), m)?;
    }
    if let Some(log) = &o.log {
        write_text(&dir.join("train_log.jsonl"), &log.to_jsonl())?;
    }
    if let Some(s) = &o.mcmc {
        store_json(&dir.join("mcmc_stats.json"), s)?;
    }
    for h in &o.histograms {
        if !h.edges.is_empty() {
            write_text(
                &dir.join(format!("property_{}.csv", h.name)),
                &histogram_csv(h),
            )?;
        }
    }
    Ok(())
}

/// Runs every configured seed, writing per-seed artifacts under
/// `out/seed_<s>/` plus `manifest.json`, `summary.json` and `summary.txt`.
pub fn run(cfg: &RunConfig, out: &Path) -> CliResult<SummaryRow> {
    cfg.validate()?;
    let inputs = Inputs::load(cfg)?;
    let seeds: Vec<u64> = (0..cfg.seeds as u64).map(|i| cfg.seed + i).collect();
    std::fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    store_json(
        &out.join("manifest.json"),
        &Manifest {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            seeds: seeds.clone(),
            config: cfg.clone(),
        },
    )?;
    let mut reports = Vec::with_capacity(seeds.len());
    for &s in &seeds {
        let o = execute(&cfg.with_seed(s), &inputs)?;
        write_outcome(&out.join(format!("seed_{s}")), &o)?;
        reports.push((s, o.report));
    }
    let row = summarize(cfg.method, cfg.eval.top_k, &reports);
    store_json(&out.join("summary.json"), &row)?;
    write_text(
        &out.join("summary.txt"),
        &format_summary(std::slice::from_ref(&row)),
    )?;
    Ok(row)
}

/// Output directory from the config, or `runs/<method>`.
pub fn output_dir(cfg: &RunConfig, flag: Option<PathBuf>) -> PathBuf {
    flag.or_else(|| cfg.paths.output.clone())
        .unwrap_or_else(|| PathBuf::from("runs").join(cfg.method.name()))
}

/// Checks that the environment implied by a config is usable by a model.
pub fn check_model(cfg: &RunConfig, inputs: &Inputs, model: &TrainedModel) -> CliResult<()> {
    match model {
        TrainedModel::Gfn(m) => match cfg.method {
            Method::GfnFlat => m.check_env(&flat_env(cfg)?)?,
            Method::GfnHier => m.check_env(&hier_env(cfg, hier_clusters(inputs)?)?)?,
            other => {
                return Err(CliError::Usage(format!(
                    "GFlowNet model given for {}",
                    other.name()
                )))
            }
        },
        TrainedModel::Ppo(m) => {
            let env = flat_env(cfg)?;
            if m.actor.input_dim() != env.observation_len()
                || m.actor.output_dim() != env.action_count()
            {
                return Err(CliError::Data(
                    "PPO model does not match the instance".into(),
                ));
            }
        }
    }
    Ok(())
}
