use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use delgfn::cluster::cluster_blocks;
use delgfn::CycleSpec;
use delgfn_cli::formats::{
    load_fingerprints, load_json, load_property_table, load_samples, store_fingerprints,
    store_json, store_samples, store_score_table,
};
use delgfn_cli::run::{
    self, check_model, evaluate, format_summary, histogram_csv, Inputs, SummaryRow, TrainedModel,
};
use delgfn_cli::synth::{synth_fingerprints, synth_scores, Structure};
use delgfn_cli::{CliError, CliResult, RunConfig};
use log::info;

#[derive(Parser)]
#[command(
    name = "delgfn",
    version,
    about = "Building-block subset design for combinatorial libraries"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a seeded synthetic score table (and optionally fingerprints).
    Synth {
        /// Blocks per cycle, e.g. 90,89,197.
        #[arg(long, value_delimiter = ',', required = true)]
        sizes: Vec<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = Structure::Additive)]
        structure: Structure,
        #[arg(long)]
        out: PathBuf,
        /// Also write synthetic fingerprints here.
        #[arg(long)]
        fingerprints: Option<PathBuf>,
        #[arg(long, default_value_t = 2048)]
        fp_width: usize,
    },
    /// Cluster building blocks by fingerprint similarity.
    Cluster {
        #[arg(long)]
        fingerprints: PathBuf,
        /// Clusters per cycle, e.g. 10,10,20.
        #[arg(long, value_delimiter = ',', required = true)]
        clusters: Vec<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a learned sampler (gfn-flat, gfn-hier or ppo).
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Directory for model.json and train_log.jsonl.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Draw designs from a trained model.
    Sample {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run random, greedy or MCMC sampling.
    Baseline {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Summarize a sample file.
    Evaluate {
        #[arg(long)]
        samples: PathBuf,
        #[arg(long, default_value_t = 100)]
        top_k: usize,
        #[arg(long)]
        properties: Vec<PathBuf>,
        #[arg(long, default_value_t = 20)]
        bins: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Tabulate the summaries of finished runs.
    Report {
        /// Run directories containing summary.json.
        #[arg(required = true)]
        runs: Vec<PathBuf>,
    },
    /// Train/sample/evaluate over one or more seeds with a manifest.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seeds: Option<usize>,
    },
}

fn load_config(path: &std::path::Path, seed: Option<u64>) -> CliResult<RunConfig> {
    let cfg = RunConfig::load(path)?;
    let cfg = match seed {
        Some(s) => cfg.with_seed(s),
        None => cfg.with_seed(cfg.seed),
    };
    cfg.validate()?;
    Ok(cfg)
}

fn dispatch(cmd: Command) -> CliResult<()> {
    match cmd {
        Command::Synth {
            sizes,
            seed,
            structure,
            out,
            fingerprints,
            fp_width,
        } => {
            let spec = CycleSpec::new(sizes)?;
            let table = synth_scores(&spec, seed, structure)?;
            store_score_table(&out, &table)?;
            info!(
                "wrote {} scores to {}",
                table.tensor().cells(),
                out.display()
            );
            if let Some(fp) = fingerprints {
                store_fingerprints(&fp, &synth_fingerprints(&spec, fp_width, seed)?)?;
            }
        }
        Command::Cluster {
            fingerprints,
            clusters,
            out,
        } => {
            let fps = load_fingerprints(&fingerprints)?;
            store_json(&out, &cluster_blocks(&fps, &clusters)?)?;
        }
        Command::Train { config, seed, out } => {
            let cfg = load_config(&config, seed)?;
            let inputs = Inputs::load(&cfg)?;
            let (model, log) = run::train(&cfg, &inputs)?;
            let dir = run::output_dir(&cfg, out);
            store_json(&dir.join("model.json"), &model)?;
            std::fs::write(dir.join("train_log.jsonl"), log.to_jsonl())
                .map_err(|e| CliError::io(&dir, e))?;
            info!("model written to {}", dir.display());
        }
        Command::Sample {
            config,
            model,
            n,
            seed,
            out,
        } => {
            let cfg = load_config(&config, seed)?;
            let inputs = Inputs::load(&cfg)?;
            let m: TrainedModel = load_json(&model)?;
            check_model(&cfg, &inputs, &m)?;
            let set = run::sample(&cfg, &inputs, &m, n.unwrap_or(cfg.eval.n_samples))?;
            store_samples(&out, &set)?;
        }
        Command::Baseline { config, seed, out } => {
            let cfg = load_config(&config, seed)?;
            let inputs = Inputs::load(&cfg)?;
            let (set, stats) = run::baseline(&cfg, &inputs)?;
            store_samples(&out, &set)?;
            if let Some(s) = stats {
                store_json(&out.with_extension("mcmc.json"), &s)?;
            }
        }
        Command::Evaluate {
            samples,
            top_k,
            properties,
            bins,
            out,
        } => {
            let set = load_samples(&samples)?;
            let props = properties
                .iter()
                .map(|p| load_property_table(p))
                .collect::<CliResult<Vec<_>>>()?;
            let (report, hists) = evaluate(&set, top_k, &props, bins)?;
            let json = serde_json::to_string_pretty(&report).expect("report serializes");
            match out {
                Some(path) => {
                    store_json(&path, &report)?;
                    for h in &hists {
                        let p = path.with_file_name(format!("property_{}.csv", h.name));
                        std::fs::write(&p, histogram_csv(h)).map_err(|e| CliError::io(&p, e))?;
                    }
                }
                None => println!("{json}"),
            }
        }
        Command::Report { runs } => {
            let rows = runs
                .iter()
                .map(|d| load_json::<SummaryRow>(&d.join("summary.json")))
                .collect::<CliResult<Vec<_>>>()?;
            print!("{}", format_summary(&rows));
        }
        Command::Run { config, out, seeds } => {
            let mut cfg = RunConfig::load(&config)?;
            if let Some(s) = seeds {
                cfg.seeds = s;
            }
            let dir = run::output_dir(&cfg, out);
            let row = run::run(&cfg, &dir)?;
            print!("{}", format_summary(&[row]));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
