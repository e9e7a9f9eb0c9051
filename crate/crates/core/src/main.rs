//! Thin command-line front end over the library. Exit codes: 0 success,
//! 2 configuration error, 3 training divergence, 4 I/O error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use dialogue_cl::data::{load_dataset, make_benchmark, save_dialogues, BenchmarkSpec, Setting};
use dialogue_cl::harness::{
    self, ablate_memory, export_plots, grid, run, RunConfig, RunManifest,
};
use dialogue_cl::strategies::StrategyKind;
use dialogue_cl::Error;

#[derive(Parser)]
#[command(name = "dialogue-cl", version, about = "Continual learning for task-oriented dialogue")]
struct Cli {
    /// Output root directory (falls back to $DIALOGUE_CL_OUT, then ./runs).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// TOML run configuration; defaults are used when absent.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the strategy (VANILLA, L2, EWC, AGEM, REPLAY, LAMOL, MULTI, ADAPTER).
    #[arg(long)]
    strategy: Option<String>,
    /// Override the setting (INTENT, DST, NLG, E2E).
    #[arg(long)]
    setting: Option<String>,
    /// Override the curriculum-permutation and training seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override epochs per task.
    #[arg(long)]
    epochs: Option<usize>,
    /// Override the learning rate.
    #[arg(long)]
    lr: Option<f64>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<RunConfig, Error> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::synthetic(StrategyKind::Vanilla, Setting::Intent),
        };
        if let Some(s) = &self.strategy {
            cfg.curriculum.strategy = s.parse()?;
        }
        if let Some(s) = &self.setting {
            cfg.curriculum.setting = s.parse()?;
        }
        if let Some(seed) = self.seed {
            cfg.curriculum_seed = seed;
            cfg.curriculum.train.seed = seed;
        }
        if let Some(e) = self.epochs {
            cfg.curriculum.train.epochs = e;
        }
        if let Some(lr) = self.lr {
            cfg.curriculum.train.lr = lr;
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train one strategy over the curriculum and write run artifacts.
    Run(ConfigArgs),
    /// Run the strategy × seed grid and report mean ± std per strategy.
    Grid {
        #[command(flatten)]
        config: ConfigArgs,
        /// Comma-separated strategies (default: all).
        #[arg(long)]
        strategies: Option<String>,
        /// Comma-separated curriculum seeds.
        #[arg(long, default_value = "0,1,2,3,4")]
        seeds: String,
    },
    /// REPLAY runs across memory capacities (use ALL for unbounded).
    AblateMem {
        #[command(flatten)]
        config: ConfigArgs,
        /// Comma-separated capacities, e.g. 10,50,100,500,ALL.
        #[arg(long, default_value = "10,50,100,500,ALL")]
        capacities: String,
    },
    /// Merge run manifests into columnar plot data (TSV on stdout or --plot-file).
    ExportPlots {
        /// manifest.json files from finished runs.
        manifests: Vec<PathBuf>,
        #[arg(long)]
        plot_file: Option<PathBuf>,
    },
    /// Generate the synthetic benchmark as a line-delimited dialogue file.
    GenData {
        #[arg(long, default_value_t = 8)]
        domains: usize,
        /// Comma-separated per-domain dialogue counts (cycled).
        #[arg(long, default_value = "200,100,400,150,2000,300,120,800")]
        sizes: String,
        /// Share surface vocabulary across domains.
        #[arg(long)]
        overlapping: bool,
        #[arg(long, default_value_t = 13)]
        seed: u64,
        /// Output file path.
        #[arg(long)]
        file: PathBuf,
    },
    /// Check a dataset file parses and report per-domain split sizes.
    ValidateData {
        file: PathBuf,
    },
}

fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>, Error> {
    s.split(',')
        .map(|p| p.trim())
        .filter(|p| !p.is_empty())
        .map(|p| {
            p.parse::<T>()
                .map_err(|_| Error::Config(format!("bad {what} entry `{p}`")))
        })
        .collect()
}

fn out_root(cli_out: &Option<PathBuf>) -> PathBuf {
    cli_out
        .clone()
        .or_else(|| std::env::var_os(harness::OUTPUT_ROOT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("runs"))
}

fn real_main() -> Result<(), Error> {
    let cli = Cli::parse();
    let root = out_root(&cli.out);
    match cli.command {
        Command::Run(args) => {
            let cfg = args.resolve()?;
            let m = run(&cfg, &root)?;
            println!(
                "{} {}: Avg. Metric {:.2} over {} tasks ({:.1}s)",
                cfg.curriculum.strategy,
                cfg.curriculum.setting.as_str(),
                m.avg_metric,
                m.task_labels.len(),
                m.wall_secs
            );
            if let Some(sel) = m.selection_accuracy {
                println!("selection accuracy: {:.2}%", 100.0 * sel);
            }
            println!("artifacts: {}", root.join(cfg.run_name()).display());
        }
        Command::Grid {
            config,
            strategies,
            seeds,
        } => {
            let cfg = config.resolve()?;
            let strategies = match strategies {
                Some(s) => parse_list::<StrategyKind>(&s, "strategy")?,
                None => StrategyKind::ALL.to_vec(),
            };
            let seeds: Vec<u64> = parse_list(&seeds, "seed")?;
            let report = grid(&cfg, &strategies, &seeds, Some(&root))?;
            for s in &report.summary {
                println!(
                    "{:<8} {:6.2} ± {:.2} (n={})",
                    s.strategy.to_string(),
                    s.mean,
                    s.std,
                    s.n
                );
            }
        }
        Command::AblateMem { config, capacities } => {
            let mut cfg = config.resolve()?;
            cfg.curriculum.strategy = StrategyKind::Replay;
            let caps: Vec<Option<usize>> = capacities
                .split(',')
                .map(|p| p.trim())
                .filter(|p| !p.is_empty())
                .map(|p| {
                    if p.eq_ignore_ascii_case("all") {
                        Ok(None)
                    } else {
                        p.parse::<usize>()
                            .map(Some)
                            .map_err(|_| Error::Config(format!("bad capacity `{p}`")))
                    }
                })
                .collect::<Result<_, Error>>()?;
            let points = ablate_memory(&cfg, &caps, Some(&root))?;
            for p in &points {
                let cap = p
                    .capacity
                    .map(|c| c.to_string())
                    .unwrap_or_else(|| "ALL".into());
                println!(
                    "capacity {:>5}: Avg. Metric {:6.2} ({} stored examples)",
                    cap, p.avg_metric, p.memory_examples
                );
            }
        }
        Command::ExportPlots {
            manifests,
            plot_file,
        } => {
            if manifests.is_empty() {
                return Err(Error::Config("no manifest files given".into()));
            }
            let loaded: Vec<RunManifest> = manifests
                .iter()
                .map(|p| {
                    let text = std::fs::read_to_string(p)?;
                    serde_json::from_str(&text).map_err(Error::from)
                })
                .collect::<Result<_, Error>>()?;
            let tsv = export_plots(&loaded)?;
            match plot_file {
                Some(p) => std::fs::write(p, tsv)?,
                None => print!("{tsv}"),
            }
        }
        Command::GenData {
            domains,
            sizes,
            overlapping,
            seed,
            file,
        } => {
            let spec = BenchmarkSpec {
                n_domains: domains,
                dialogues_per_domain: parse_list(&sizes, "size")?,
                disjoint: !overlapping,
                seed,
            };
            let mut all = Vec::new();
            for (_, dialogues) in make_benchmark(&spec)? {
                all.extend(dialogues);
            }
            save_dialogues(&file, &all)?;
            println!("wrote {} dialogues to {}", all.len(), file.display());
        }
        Command::ValidateData { file } => {
            let domains = load_dataset(&file)?;
            for d in &domains {
                println!(
                    "{}: train {} / valid {} / test {}",
                    d.label,
                    d.train.len(),
                    d.valid.len(),
                    d.test.len()
                );
            }
            println!("{} domains ok", domains.len());
        }
    }
    Ok(())
}

fn exit_code_for(e: &Error) -> u8 {
    match e {
        Error::Diverged { .. } | Error::NonFiniteLoss | Error::PoisonedGradient { .. } => 3,
        Error::Io(_) | Error::Checkpoint(_) => 4,
        _ => 2,
    }
}

fn main() -> ExitCode {
    match real_main() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}
