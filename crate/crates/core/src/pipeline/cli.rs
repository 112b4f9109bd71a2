//! Argument parsing and dispatch for the `ser` binary.
//!
//! Results go to files. Stdout carries only `report` output when no
//! `--out` is given, so `ser report --format csv` can be piped.

use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use super::{
    audit, balance, eval_one_fold, project, report, run_experiment, scan, split, synth, train_one_fold, tsne,
    ExperimentConfig, PipelineError, PipelineResult, TsneSettings,
};
use crate::balancing::{SamplerConfig, SamplingMethod};
use crate::metrics::GridFormat;
use crate::synthetic::SyntheticOptions;
use crate::taxonomy::EmotionSetKind;

#[derive(Debug, Parser)]
#[command(name = "ser", version, about = "Speech emotion recognition benchmarking over precomputed embeddings")]
pub struct Cli {
    /// Upper bound on parallel experiment cells (default: all cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

/// An experiment config file plus overrides; flags win over the file.
#[derive(Debug, Args)]
pub struct ConfigArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(long)]
    pub emotion_set: Option<EmotionSetKind>,
    /// Replaces the configured sampling list; repeatable.
    #[arg(long)]
    pub sampling: Vec<SamplingMethod>,
    /// Replaces the configured manifests; repeatable.
    #[arg(long = "manifest")]
    pub manifests: Vec<PathBuf>,
    /// Replaces the configured stores; repeatable.
    #[arg(long = "store")]
    pub stores: Vec<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
}

impl ConfigArgs {
    pub fn resolve(&self) -> PipelineResult<ExperimentConfig> {
        let mut cfg = ExperimentConfig::load(&self.config)?;
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(out) = &self.out_dir {
            cfg.paths.output_dir = out.clone();
        }
        if let Some(set) = self.emotion_set {
            cfg.emotion_set = set;
        }
        if !self.sampling.is_empty() {
            cfg.sampling = self.sampling.clone();
        }
        if !self.manifests.is_empty() {
            cfg.paths.manifests = self.manifests.clone();
        }
        if !self.stores.is_empty() {
            cfg.paths.stores = self.stores.clone();
        }
        if let Some(e) = self.epochs {
            cfg.train.epochs = e;
        }
        if let Some(lr) = self.learning_rate {
            cfg.train.learning_rate = lr;
        }
        Ok(cfg)
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Walk a dataset directory and write its manifest and skip list.
    Scan {
        #[arg(long)]
        root: PathBuf,
        #[arg(long)]
        dataset: String,
        /// Adapter rule file; defaults to the built-in rule for the dataset.
        #[arg(long)]
        adapter: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Map native labels into an emotion set and write the kept records.
    Project {
        #[arg(long = "manifest", required = true)]
        manifests: Vec<PathBuf>,
        #[arg(long)]
        mappings: Option<PathBuf>,
        #[arg(long, default_value = "four")]
        emotion_set: EmotionSetKind,
        /// Fail on native labels without a mapping rule.
        #[arg(long)]
        strict: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write split plans to `<out_dir>/plans`.
    Split(ConfigArgs),
    /// Check a plan file for speaker leakage and coverage problems.
    Audit { plan: PathBuf },
    /// Resample a labelled store.
    Balance {
        #[arg(long = "manifest", required = true)]
        manifests: Vec<PathBuf>,
        #[arg(long = "store", required = true)]
        stores: Vec<PathBuf>,
        #[arg(long)]
        mappings: Option<PathBuf>,
        #[arg(long, default_value = "four")]
        emotion_set: EmotionSetKind,
        #[arg(long)]
        method: SamplingMethod,
        #[arg(long, default_value_t = 5)]
        k_neighbors: usize,
        #[arg(long, default_value_t = 1.0)]
        beta: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one fold of a plan.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        plan: PathBuf,
        #[arg(long)]
        fold: usize,
    },
    /// Evaluate one trained fold and write its ledger records.
    Eval {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        plan: PathBuf,
        #[arg(long)]
        fold: usize,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Render the results grid from ledgers.
    Report {
        #[arg(long = "ledger", required = true)]
        ledgers: Vec<PathBuf>,
        #[arg(long, default_value = "markdown")]
        format: GridFormat,
        /// Manifests for the class count columns.
        #[arg(long = "manifest")]
        manifests: Vec<PathBuf>,
        #[arg(long)]
        mappings: Option<PathBuf>,
        /// Write here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Project embeddings to 2-D and plot them.
    Tsne {
        #[arg(long = "manifest", required = true)]
        manifests: Vec<PathBuf>,
        #[arg(long = "store", required = true)]
        stores: Vec<PathBuf>,
        #[arg(long)]
        mappings: Option<PathBuf>,
        #[arg(long, default_value = "four")]
        emotion_set: EmotionSetKind,
        #[arg(long, default_value_t = 30.0)]
        perplexity: f64,
        #[arg(long, default_value_t = 1000)]
        iterations: usize,
        #[arg(long, default_value_t = 5000)]
        max_points: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Run the whole pipeline for an experiment config.
    Run(ConfigArgs),
    /// Write a synthetic corpus and a matching experiment config.
    Synth {
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 32)]
        dim: usize,
        #[arg(long, default_value_t = 3.0)]
        separation: f64,
        #[arg(long)]
        max_speakers: Option<usize>,
        /// Restrict to these datasets; repeatable.
        #[arg(long = "dataset")]
        datasets: Vec<String>,
    },
}

fn fold_sampling(cfg: &ExperimentConfig) -> PipelineResult<SamplingMethod> {
    match cfg.sampling.as_slice() {
        [one] => Ok(*one),
        _ => Err(PipelineError::config("config", "train and eval need exactly one sampling method; pass --sampling")),
    }
}

fn write_output(path: &Path, text: &str) -> PipelineResult<()> {
    std::fs::write(path, text).map_err(|e| PipelineError::data("report", format!("{}: {e}", path.display())))
}

pub fn execute(cli: Cli) -> PipelineResult<()> {
    match cli.command {
        Command::Scan {
            root,
            dataset,
            adapter,
            out,
        } => scan(&root, &dataset, adapter.as_deref(), &out).map(|_| ()),
        Command::Project {
            manifests,
            mappings,
            emotion_set,
            strict,
            out,
        } => {
            let totals = project(&manifests, mappings.as_deref(), emotion_set, strict, &out)?;
            for (label, n) in totals {
                log::info!(target: "project", "{label}: {n}");
            }
            Ok(())
        }
        Command::Split(args) => {
            let cfg = args.resolve()?;
            cfg.validate()?;
            let policy = crate::splits::SplitPolicy {
                seed: cfg.seed,
                ..cfg.split.clone()
            };
            let paths = split(
                &cfg.paths.manifests,
                cfg.paths.mappings_dir.as_deref(),
                cfg.emotion_set,
                &cfg.regime,
                &policy,
                cfg.duration,
                &cfg.paths.output_dir.join("plans"),
            )?;
            log::info!(target: "split", "wrote {} plans", paths.len());
            Ok(())
        }
        Command::Audit { plan } => {
            let violations = audit(&plan)?;
            for v in &violations {
                eprintln!("{}", serde_json::to_string(v).expect("violations serialize"));
            }
            if violations.is_empty() {
                log::info!(target: "audit", "{}: no violations", plan.display());
                Ok(())
            } else {
                Err(PipelineError::data("audit", format!("{} violations in {}", violations.len(), plan.display())))
            }
        }
        Command::Balance {
            manifests,
            stores,
            mappings,
            emotion_set,
            method,
            k_neighbors,
            beta,
            seed,
            out,
        } => {
            let sampler = SamplerConfig {
                method,
                k_neighbors,
                beta,
                seed,
            };
            let report = balance(&manifests, &stores, mappings.as_deref(), emotion_set, &sampler, &out)?;
            log::info!(target: "balance", "{:?} -> {:?}", report.before, report.after);
            Ok(())
        }
        Command::Train { config, plan, fold } => {
            let cfg = config.resolve()?;
            let ckpt = train_one_fold(&cfg, &plan, fold_sampling(&cfg)?, fold)?;
            log::info!(target: "train", "wrote {}", ckpt.display());
            Ok(())
        }
        Command::Eval {
            config,
            plan,
            fold,
            checkpoint,
        } => {
            let cfg = config.resolve()?;
            let ledger = eval_one_fold(&cfg, &plan, fold_sampling(&cfg)?, fold, checkpoint.as_deref())?;
            log::info!(target: "eval", "wrote {}", ledger.display());
            Ok(())
        }
        Command::Report {
            ledgers,
            format,
            manifests,
            mappings,
            out,
        } => {
            let text = report(&ledgers, format, &manifests, mappings.as_deref())?;
            match out {
                Some(path) => write_output(&path, &text),
                None => {
                    let mut stdout = std::io::stdout().lock();
                    stdout
                        .write_all(text.as_bytes())
                        .and_then(|_| stdout.flush())
                        .map_err(|e| PipelineError::data("report", e))
                }
            }
        }
        Command::Tsne {
            manifests,
            stores,
            mappings,
            emotion_set,
            perplexity,
            iterations,
            max_points,
            seed,
            out_dir,
        } => {
            let mut settings = TsneSettings {
                max_points,
                ..Default::default()
            };
            settings.config.perplexity = perplexity;
            settings.config.iterations = iterations;
            tsne(&manifests, &stores, mappings.as_deref(), emotion_set, &settings, seed, &out_dir).map(|_| ())
        }
        Command::Run(args) => {
            let cfg = args.resolve()?;
            let summary = run_experiment(&cfg, cli.jobs)?;
            log::info!(
                target: "run",
                "{} ledger records, config hash {}",
                summary.records.len(),
                summary.config_hash
            );
            Ok(())
        }
        Command::Synth {
            out_dir,
            seed,
            dim,
            separation,
            max_speakers,
            datasets,
        } => {
            let opts = SyntheticOptions {
                max_speakers,
                datasets: (!datasets.is_empty()).then_some(datasets),
                ..Default::default()
            };
            let out = synth(&out_dir, seed, dim, separation, &opts)?;
            log::info!(target: "synth", "wrote {}", out.config.display());
            Ok(())
        }
    }
}

/// Parses `args` and runs the command. Returns the process exit code; on
/// failure the JSON error record goes to stderr.
pub fn dispatch<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            log::error!(target: e.stage.as_str(), "{}", e.message);
            eprintln!("{}", e.to_record());
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_subcommand_parses() {
        for args in [
            vec!["ser", "scan", "--root", "r", "--dataset", "TESS", "--out", "m.jsonl"],
            vec!["ser", "project", "--manifest", "m.jsonl", "--out", "p.jsonl", "--emotion-set", "five"],
            vec!["ser", "split", "--config", "c.json"],
            vec!["ser", "audit", "plan.json"],
            vec!["ser", "balance", "--manifest", "m", "--store", "s", "--method", "smote", "--out", "b.bin"],
            vec!["ser", "train", "--config", "c.json", "--plan", "p.json", "--fold", "0", "--sampling", "adasyn"],
            vec!["ser", "eval", "--config", "c.json", "--plan", "p.json", "--fold", "1"],
            vec!["ser", "report", "--ledger", "l.jsonl", "--format", "csv"],
            vec!["ser", "tsne", "--manifest", "m", "--store", "s", "--out-dir", "t"],
            vec!["ser", "--jobs", "2", "run", "--config", "c.json", "--seed", "7"],
            vec!["ser", "synth", "--out-dir", "d"],
        ] {
            Cli::try_parse_from(&args).unwrap_or_else(|e| panic!("{args:?}: {e}"));
        }
    }

    #[test]
    fn usage_errors_exit_two() {
        assert_eq!(dispatch(["ser", "run"]), 2);
        assert_eq!(dispatch(["ser", "balance", "--method", "bogus"]), 2);
    }

    #[test]
    fn flags_override_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(
            &path,
            r#"{"experiment_id": "x", "emotion_set": "four", "regime": "combined", "sampling": "none", "seed": 1,
                "paths": {"manifests": ["m"], "stores": ["s"], "output_dir": "o"}}"#,
        )
        .unwrap();
        let cli = Cli::try_parse_from([
            "ser", "run", "--config", path.to_str().unwrap(), "--seed", "9", "--sampling", "smote", "--sampling", "adasyn",
        ])
        .unwrap();
        let Command::Run(args) = cli.command else { panic!() };
        let cfg = args.resolve().unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.sampling, vec![SamplingMethod::Smote, SamplingMethod::Adasyn]);
        assert_eq!(cfg.paths.output_dir, dir.path().join("o"));
    }

    #[test]
    fn missing_config_exits_two() {
        assert_eq!(dispatch(["ser", "run", "--config", "/nonexistent/c.json"]), 2);
    }
}
