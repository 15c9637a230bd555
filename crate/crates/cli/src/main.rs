use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use fcd_core::dataset::{generate_synthetic, load_manifest, read_rgb, DatasetManifest, Split, SynthConfig};
use fcd_core::harness::{
    ablate_decoder, count_parameters, evaluate, format_ablation, format_sweep, presets, render_prediction,
    sweep_tau_lambda, train_manifest, Checkpoint, EvalOptions, RenderMode, TrainConfig, DEFAULT_GRID,
};
use fcd_core::model::Batch;
use fcd_core::prompt::PromptRecord;
use fcd_core::sample::{BitemporalSample, LabelMap};
use fcd_core::taxonomy::{default_taxonomy, Mode};

#[derive(Parser)]
#[command(name = "fcd", version, about = "Bitemporal semantic change detection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Where a training configuration comes from. `--set` is applied last.
#[derive(Args, Clone)]
struct ConfigArgs {
    /// Flat `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Named base configuration: synthetic or paper.
    #[arg(long)]
    preset: Option<String>,
    /// Override one key, e.g. `--set epochs=5`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<TrainConfig> {
        let base = match &self.preset {
            Some(p) => presets::by_name(p)?,
            None => TrainConfig::default(),
        };
        let mut cfg = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                TrainConfig::parse_with(base, &text)?
            }
            None => base,
        };
        for kv in &self.overrides {
            let Some((k, v)) = kv.split_once('=') else {
                bail!("--set expects KEY=VALUE, got {kv:?}");
            };
            cfg.set(k.trim(), v.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write checkpoints and the loss log.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Split used for per-epoch validation; the training split when absent.
        #[arg(long)]
        val_split: Option<Split>,
    },
    /// Score a checkpoint on a split and write a JSON report.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "test")]
        split: Split,
        #[arg(long)]
        report: PathBuf,
        /// Write one rendered prediction per sample here.
        #[arg(long)]
        render: Option<PathBuf>,
        #[arg(long, default_value = "bcd-diff")]
        render_mode: RenderMode,
        /// Score the labels against themselves.
        #[arg(long)]
        oracle: bool,
        #[arg(long, default_value_t = 8)]
        batch_size: usize,
    },
    /// Predict one image pair and render the class map.
    Predict {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        t1: PathBuf,
        #[arg(long)]
        t2: PathBuf,
        /// Prompt record as inline JSON or a path to a JSON file.
        #[arg(long)]
        prompt: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate the synthetic farmland change data set.
    MakeSynth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, alias = "n", default_value_t = 16)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        val: usize,
        #[arg(long, default_value_t = 0)]
        test: usize,
        #[arg(long, default_value_t = 256)]
        patch: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, alias = "pseudo-rate", default_value_t = 0.25)]
        pseudo_change_rate: f64,
    },
    /// Train and score one model per (tau, lambda) pair.
    Sweep {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        data: PathBuf,
        /// Comma-separated `tau:lambda` pairs; the published six by default.
        #[arg(long)]
        grid: Option<String>,
        /// Split scored after training; the training split when absent.
        #[arg(long)]
        eval_split: Option<Split>,
        /// JSON rows are written here in addition to the printed table.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train and score the five decoder component combinations.
    Ablate {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        eval_split: Option<Split>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Count trainable parameters of a checkpoint or a configuration.
    Params {
        #[arg(long, conflicts_with_all = ["config", "preset", "overrides"])]
        ckpt: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, default_value = "scd")]
        mode: Mode,
    },
    /// Print a resolved configuration in config file form.
    Config {
        #[command(flatten)]
        config: ConfigArgs,
    },
}

fn parse_grid(s: &str) -> Result<Vec<(f64, f64)>> {
    s.split(',')
        .map(|cell| {
            let (t, l) = cell
                .split_once(':')
                .with_context(|| format!("grid cell {cell:?} is not tau:lambda"))?;
            Ok((t.trim().parse()?, l.trim().parse()?))
        })
        .collect()
}

fn parse_prompt(arg: &str) -> Result<PromptRecord> {
    let text = if arg.trim_start().starts_with('{') {
        arg.to_owned()
    } else {
        fs::read_to_string(arg).with_context(|| format!("reading prompt {arg}"))?
    };
    serde_json::from_str(&text).context("parsing prompt record")
}

fn manifest(data: &Path, split: Split) -> Result<DatasetManifest> {
    let (m, report) = load_manifest(data, split)?;
    for w in &report.warnings {
        log::warn!("{w}");
    }
    for (id, why) in &report.rejects {
        log::warn!("skipping {id}: {why}");
    }
    Ok(m)
}

fn split_samples(data: &Path, split: Option<Split>) -> Result<Vec<BitemporalSample>> {
    match split {
        Some(s) => Ok(manifest(data, s)?.load_all()?),
        None => Ok(Vec::new()),
    }
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, serde_json::to_string_pretty(value)?).with_context(|| format!("writing {}", path.display()))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train {
            config,
            data,
            out,
            val_split,
        } => {
            let cfg = config.resolve()?;
            let train = manifest(&data, Split::Train)?;
            let val = val_split.map(|s| manifest(&data, s)).transpose()?;
            let outcome = train_manifest(&cfg, &train, val.as_ref())?;
            fs::create_dir_all(&out)?;
            outcome.best.save(&out.join("best.ckpt"))?;
            outcome.last.save(&out.join("last.ckpt"))?;
            fs::write(out.join("config.txt"), cfg.render())?;
            write_json(&out.join("train_log.json"), &outcome.report)?;
            if let Some(b) = &outcome.report.best {
                println!("best epoch {}: F1 {:.4}", b.epoch, b.f1);
            }
        }
        Command::Eval {
            ckpt,
            data,
            split,
            report,
            render,
            render_mode,
            oracle,
            batch_size,
        } => {
            let ckpt = Checkpoint::load(&ckpt)?;
            let m = manifest(&data, split)?;
            let opts = EvalOptions {
                batch_size,
                oracle,
                render: render.map(|d| (d, render_mode)),
            };
            let e = evaluate(&ckpt, &m, &opts)?;
            write_json(&report, &e.report)?;
            println!("{}", serde_json::to_string_pretty(&e.report)?);
        }
        Command::Predict {
            ckpt,
            t1,
            t2,
            prompt,
            out,
        } => {
            let ckpt = Checkpoint::load(&ckpt)?;
            let net = ckpt.to_network()?;
            let (image_t1, image_t2) = (read_rgb(&t1)?, read_rgb(&t2)?);
            if (image_t1.height, image_t1.width) != (image_t2.height, image_t2.width) {
                bail!("t1 and t2 differ in size");
            }
            let sample = BitemporalSample {
                id: "input".into(),
                label: LabelMap::filled(image_t1.height, image_t1.width, 0),
                image_t1,
                image_t2,
                prompt: prompt.as_deref().map(parse_prompt).transpose()?,
            };
            let pred = net.predict(&Batch::from_samples(&[&sample])?)?;
            let img = render_prediction(&pred[0], &net.taxonomy, RenderMode::Scd, None)?;
            img.save(&out).with_context(|| format!("writing {}", out.display()))?;
        }
        Command::MakeSynth {
            out,
            samples,
            val,
            test,
            patch,
            seed,
            pseudo_change_rate,
        } => {
            let cfg = SynthConfig {
                n_samples: samples,
                n_val: val,
                n_test: test,
                patch_size: patch,
                seed,
                pseudo_change_rate,
                ..SynthConfig::default()
            };
            generate_synthetic(&cfg, &out)?;
            println!("wrote {} samples to {}", samples + val + test, out.display());
        }
        Command::Sweep {
            config,
            data,
            grid,
            eval_split,
            out,
        } => {
            let cfg = config.resolve()?;
            let grid = match grid {
                Some(g) => parse_grid(&g)?,
                None => DEFAULT_GRID.to_vec(),
            };
            let train = manifest(&data, Split::Train)?;
            let rows = sweep_tau_lambda(
                &cfg,
                &grid,
                &train.taxonomy,
                &train.load_all()?,
                &split_samples(&data, eval_split)?,
            )?;
            print!("{}", format_sweep(&rows));
            if let Some(path) = out {
                write_json(&path, &rows)?;
            }
        }
        Command::Ablate {
            config,
            data,
            eval_split,
            out,
        } => {
            let cfg = config.resolve()?;
            let train = manifest(&data, Split::Train)?;
            let rows = ablate_decoder(
                &cfg,
                &train.taxonomy,
                &train.load_all()?,
                &split_samples(&data, eval_split)?,
            )?;
            print!("{}", format_ablation(&rows));
            if let Some(path) = out {
                write_json(&path, &rows)?;
            }
        }
        Command::Params { ckpt, config, mode } => {
            let n = match ckpt {
                Some(path) => Checkpoint::load(&path)?.count_parameters(),
                None => count_parameters(&config.resolve()?, &default_taxonomy(mode))?,
            };
            println!("{n}");
        }
        Command::Config { config } => print!("{}", config.resolve()?.render()),
    }
    Ok(())
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
