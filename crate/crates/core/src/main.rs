use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;

use ocean_fusion::btl::{fit_all_traits, merge_scores, parse_comparisons, score_table_jsonl, BtlOptions};
use ocean_fusion::fusion::{assemble_fused_model, verify_transfer, FusedModelConfig, SourceCheckpoint};
use ocean_fusion::pipeline::{emit_comparison_table, evaluate, generate_synthetic_dataset, train_stage1, train_stage2, Dataset, FrontendConfig, LoadedModel, TrainConfig, REFERENCE_SCORES};
use ocean_fusion::subnets::{Modality, SubnetCheckpoint};
use ocean_fusion::{DatasetManifest, Error, EvaluationReport, Result, Split};

#[derive(Parser)]
#[command(name = "ocean-fusion", version, about = "Multimodal apparent-personality training and evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Prepare every video's inputs and write them to a cache directory.
    Preprocess {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Train one modality network.
    TrainStage1 {
        #[arg(long)]
        modality: Modality,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        cache: Option<PathBuf>,
    },
    /// Assemble the fused model from four stage-1 checkpoints and fine-tune it.
    TrainStage2 {
        /// Ambient, facial, audio and transcript checkpoints, comma separated.
        #[arg(long, value_delimiter = ',', num_args = 1..)]
        ckpts: Vec<PathBuf>,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        cache: Option<PathBuf>,
    },
    /// Mean accuracy of a checkpoint on one split.
    Evaluate {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        split: Split,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        cache: Option<PathBuf>,
        /// Also write the report as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print a report beside the published reference scores.
    Compare {
        #[arg(long)]
        report: PathBuf,
    },
    /// Generate a synthetic dataset.
    SynthData {
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit per-trait scores from pairwise comparisons.
    BtlLabel {
        #[arg(long)]
        comparisons: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        no_regularize: bool,
        /// Manifest whose records receive the fitted labels.
        #[arg(long, requires = "merged_out")]
        manifest: Option<PathBuf>,
        #[arg(long)]
        merged_out: Option<PathBuf>,
    },
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn load_config(path: Option<&Path>) -> Result<TrainConfig> {
    path.map_or_else(|| Ok(TrainConfig::default()), TrainConfig::load)
}

fn open_dataset(manifest: &Path, cfg: &TrainConfig, cache: Option<&Path>) -> Result<Dataset> {
    let ds = Dataset::open(manifest, FrontendConfig::from(cfg))?;
    Ok(match cache {
        Some(dir) => ds.with_cache_dir(dir),
        None => ds,
    })
}

fn curve_jsonl<T: serde::Serialize>(points: &[T]) -> String {
    points.iter().map(|p| serde_json::to_string(p).expect("curve point") + "\n").collect()
}

/// A diverged run still leaves its last finite checkpoint at `out`.
fn save_on_divergence(e: Error, out: &Path) -> Error {
    if let Error::Diverged { last_good: Some(c), .. } = &e {
        if let Ok(sha) = c.save(out) {
            eprintln!("last good checkpoint written to {} (sha256 {sha})", out.display());
        }
    }
    e
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Preprocess { manifest, out, config } => {
            let cfg = load_config(config.as_deref())?;
            let ds = open_dataset(&manifest, &cfg, None)?;
            let files = ds.write_cache(&out)?;
            println!("wrote {} cached videos to {}", files.len(), out.display());
        }
        Command::TrainStage1 {
            modality,
            manifest,
            config,
            out,
            cache,
        } => {
            let mut cfg = load_config(config.as_deref())?;
            cfg.stage = 1;
            match cfg.modality {
                Some(m) if m != modality => {
                    return Err(Error::Config(format!("config names {m}, command line names {modality}")));
                }
                _ => cfg.modality = Some(modality),
            }
            cfg.validate()?;
            let ds = open_dataset(&manifest, &cfg, cache.as_deref())?;
            let ck = train_stage1(modality, &ds, &cfg).map_err(|e| save_on_divergence(e, &out))?;
            let sha = ck.save(&out)?;
            write(&with_suffix(&out, ".config.toml"), &cfg.to_toml())?;
            write(&with_suffix(&out, ".curve.jsonl"), &curve_jsonl(&ck.meta.curve))?;
            println!(
                "{}",
                json!({"checkpoint": out, "sha256": sha, "modality": modality, "learning_rates": ck.meta.learning_rates,
                       "final_train_accuracy": ck.meta.final_train_accuracy, "final_validation_accuracy": ck.meta.final_validation_accuracy})
            );
        }
        Command::TrainStage2 {
            ckpts,
            manifest,
            config,
            out,
            cache,
        } => {
            let mut cfg = load_config(config.as_deref())?;
            cfg.stage = 2;
            cfg.modality = None;
            cfg.checkpoints = ckpts.clone();
            cfg.validate()?;
            let sources: Vec<SourceCheckpoint> = ckpts.iter().map(|p| SourceCheckpoint::load(p)).collect::<Result<_>>()?;
            let stage1: Vec<SubnetCheckpoint> = sources.iter().map(|s| s.checkpoint.clone()).collect();
            let fused_cfg = cfg.fused_config(FusedModelConfig::from_checkpoints(&stage1)?.subnets);
            let model = assemble_fused_model(&sources, &fused_cfg, cfg.seed)?;
            let report = verify_transfer(&model, &stage1);
            write(&with_suffix(&out, ".transfer.jsonl"), &report.to_jsonl())?;
            let ds = open_dataset(&manifest, &cfg, cache.as_deref())?;
            let ck = train_stage2(model, &stage1, &ds, &cfg).map_err(|e| save_on_divergence(e, &out))?;
            let sha = ck.save(&out)?;
            write(&with_suffix(&out, ".config.toml"), &cfg.to_toml())?;
            write(&with_suffix(&out, ".curve.jsonl"), &curve_jsonl(&ck.meta.curve))?;
            println!(
                "{}",
                json!({"checkpoint": out, "sha256": sha, "provenance": ck.provenance, "learning_rates": ck.meta.learning_rates,
                       "final_train_accuracy": ck.meta.final_train_accuracy, "final_validation_accuracy": ck.meta.final_validation_accuracy})
            );
        }
        Command::Evaluate {
            ckpt,
            manifest,
            split,
            config,
            cache,
            out,
        } => {
            let cfg = load_config(config.as_deref())?;
            let model = LoadedModel::load(&ckpt)?;
            let ds = open_dataset(&manifest, &cfg, cache.as_deref())?;
            let report = evaluate(model.predictor(), &ds, split, cfg.frames_per_video)?;
            let text = serde_json::to_string_pretty(&report).expect("report serializes");
            if let Some(p) = out {
                write(&p, &(text.clone() + "\n"))?;
            }
            println!("{text}");
        }
        Command::Compare { report } => {
            let r: EvaluationReport = serde_json::from_str(&read(&report)?).map_err(|e| Error::Parse {
                line: e.line(),
                message: e.to_string(),
            })?;
            print!("{}", emit_comparison_table(&r, &REFERENCE_SCORES));
        }
        Command::SynthData { n, seed, out } => {
            let d = generate_synthetic_dataset(n, seed, &out)?;
            let [tr, va, te] = d.manifest.split_counts();
            println!("wrote {n} videos to {} (train {tr}, validation {va}, test {te})", d.manifest_path.display());
        }
        Command::BtlLabel {
            comparisons,
            out,
            no_regularize,
            manifest,
            merged_out,
        } => {
            let cs = parse_comparisons(&read(&comparisons)?)?;
            let opts = BtlOptions {
                regularize: !no_regularize,
                ..Default::default()
            };
            let fits = fit_all_traits(&cs, &opts)?;
            write(&out, &score_table_jsonl(&fits))?;
            for f in fits.values() {
                println!("{}: {} items, {} sweeps, converged {}", f.trait_, f.strengths.len(), f.iterations, f.converged);
            }
            if let (Some(m), Some(mo)) = (manifest, merged_out) {
                let mut man = DatasetManifest::load(&m)?;
                let n = merge_scores(&mut man, &fits)?;
                man.save(&mo)?;
                println!("labeled {n} of {} records", man.records.len());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
