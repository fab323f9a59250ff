use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::info;

use subband_aec::config::AppConfig;
use subband_aec::datagen::{build_manifest, render_all, write_manifest, SourcePool};
use subband_aec::eval::{ablate, ablation_table, evaluate, Variant};
use subband_aec::pipeline::Pipeline;
use subband_aec::signal::{read_wav_at, write_wav, WavFormat, FULLBAND_RATE};
use subband_aec::stfgcrn::Stfgcrn;
use subband_aec::train::{load_clips, load_examples, train, Trainer};
use subband_aec::Result;

#[derive(Parser)]
#[command(name = "aec", version, about = "Sub-band hybrid acoustic echo canceller")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Cancel the echo in a microphone recording.
    Process {
        #[arg(long)]
        mic: PathBuf,
        #[arg(long)]
        farend: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Skip the neural post-filter.
        #[arg(long)]
        linear_only: bool,
    },
    /// Train the post-filter on a rendered manifest.
    Train {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        val_manifest: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Score a checkpoint on a manifest (ERLE, near-end SNR, RTF).
    Eval {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Text table path; JSONL records go next to it with a `.jsonl` extension.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Generate and render a synthetic training manifest.
    Datagen {
        /// Key-value file with `datagen.*` keys.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train and score cumulative component variants.
    Ablate {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value = "base,+dsvad,+tfcm,+echo")]
        variants: String,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        report: Option<PathBuf>,
    },
}

fn load_config(path: Option<&Path>) -> Result<AppConfig> {
    match path {
        Some(p) => AppConfig::load(p),
        None => Ok(AppConfig::default()),
    }
}

fn write_report(path: &Path, table: &str, jsonl: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, table)?;
    fs::write(path.with_extension("jsonl"), jsonl)?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Process {
            mic,
            farend,
            out,
            config,
            checkpoint,
            linear_only,
        } => {
            let mut cfg = load_config(config.as_deref())?;
            if checkpoint.is_some() {
                cfg.pipeline.checkpoint = checkpoint;
            }
            cfg.pipeline.linear_only |= linear_only;
            let pipeline = Pipeline::new(cfg.pipeline)?;
            let mic = read_wav_at(&mic, FULLBAND_RATE)?;
            let far = read_wav_at(&farend, FULLBAND_RATE)?;
            let result = pipeline.process(&mic, &far)?;
            info!("estimated delay {} samples", result.linear.applied_delay);
            write_wav(&out, &result.output, WavFormat::Float32)?;
        }
        Command::Train {
            manifest,
            val_manifest,
            config,
            out_dir,
        } => {
            let cfg = load_config(config.as_deref())?;
            let train_set = load_examples(&manifest, &cfg.pipeline)?;
            let val_set = match &val_manifest {
                Some(p) => load_examples(p, &cfg.pipeline)?,
                None => Vec::new(),
            };
            info!("{} training clips, {} validation clips", train_set.len(), val_set.len());
            let net = Stfgcrn::<f32>::new(cfg.network, cfg.network_seed)?;
            info!("{} parameters", net.param_count());
            let mut trainer = Trainer::new(net, &cfg.train, cfg.loss);
            let history = train(&mut trainer, &train_set, &val_set, &cfg.train, &cfg.pipeline, Some(&out_dir))?;
            if let Some(last) = history.last() {
                println!(
                    "{} epochs, train {:.4}, val {:.4}, checkpoint {}",
                    last.epoch,
                    last.train_loss,
                    last.val_loss,
                    out_dir.join("last.ckpt").display()
                );
            }
        }
        Command::Eval {
            manifest,
            checkpoint,
            config,
            report,
        } => {
            let mut cfg = load_config(config.as_deref())?;
            if checkpoint.is_some() {
                cfg.pipeline.checkpoint = checkpoint;
            }
            let pipeline = Pipeline::new(cfg.pipeline)?;
            let clips = load_clips(&manifest)?;
            let metrics = evaluate(&pipeline, &clips, Some(cfg.rtf_seconds))?;
            let table = metrics.table();
            print!("{table}");
            if let Some(path) = report {
                let mut jsonl = Vec::new();
                metrics.write_jsonl(&mut jsonl)?;
                write_report(&path, &table, &jsonl)?;
            }
        }
        Command::Datagen { spec, out_dir, seed } => {
            let cfg = load_config(spec.as_deref())?;
            let d = &cfg.data;
            let pool = SourcePool::from_dirs(d.near_dir.as_deref(), d.far_dir.as_deref(), d.noise_dir.as_deref())?;
            let records = build_manifest(&pool, d.clips, &d.ranges, seed)?;
            let rendered = render_all(&records, &out_dir)?;
            let path = out_dir.join("manifest.jsonl");
            write_manifest(&path, &rendered)?;
            println!("{} clips, manifest {}", rendered.len(), path.display());
        }
        Command::Ablate {
            manifest,
            variants,
            config,
            report,
        } => {
            let cfg = load_config(config.as_deref())?;
            let variants = Variant::parse_list(&variants)?;
            let clips = load_clips(&manifest)?;
            let rows = ablate(&clips, &variants, &cfg)?;
            let table = ablation_table(&rows);
            print!("{table}");
            if let Some(path) = report {
                let mut jsonl = Vec::new();
                for r in &rows {
                    serde_json::to_writer(&mut jsonl, r)?;
                    jsonl.push(b'\n');
                }
                write_report(&path, &table, &jsonl)?;
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
