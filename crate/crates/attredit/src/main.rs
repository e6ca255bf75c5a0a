//! Command-line entry point: pretraining, editor training, inversion,
//! editing, evaluation, ablation and synthetic-data generation.
//!
//! Exit codes: 0 success, 1 usage error, 2 runtime failure. Every run
//! writes its resolved configuration beside its outputs. The environment
//! variable `ATTREDIT_OUT_ROOT`, when set, prefixes all relative output
//! paths.

use attredit::config::{Ablation, TrainConfig};
use attredit::data::{
    load_annotations, synth_toy_dataset, write_dataset, GuidedMode, LabeledImage, TagSchema,
};
use attredit::error::{Error, Result};
use attredit::eval::{evaluate, run_ablation_grid, write_edited_images, EvalOpts};
use attredit::pixelcls::PixelClassifier;
use attredit::schedule::{generate, invert};
use attredit::train::{pretrain_diffusion, train_editor, Models};
use clap::{Args, Parser, Subcommand};
use ndarray::Axis;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "attredit",
    version,
    about = "Feature-level adversarial attribute editing over a deterministic conditional diffusion backend"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// Flat key-value config file; flags override file values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a single config key, e.g. --set editor_steps=500 (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    /// Override the config seed.
    #[arg(long)]
    seed: Option<u64>,
}

impl ConfigArgs {
    fn resolve(&self, base: TrainConfig) -> Result<TrainConfig> {
        let mut config = match &self.config {
            Some(path) => TrainConfig::load(path)?,
            None => base,
        };
        for kv in &self.sets {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::config(format!("--set expects KEY=VALUE, got '{kv}'")))?;
            config.set(k, v)?;
        }
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        config.validate()?;
        Ok(config)
    }
}

#[derive(Args, Clone)]
struct DataArgs {
    /// Dataset directory (schema.txt + annotations.csv + images).
    /// Without it, a synthetic toy dataset is generated from the config.
    #[arg(long)]
    data: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic toy dataset directory (PNGs + annotations + schema).
    SynthData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 2000)]
        count: usize,
        #[arg(long, default_value_t = 1000)]
        seed: u64,
    },
    /// Phase 1: pretrain the diffusion autoencoder and fit the attribute classifier.
    Pretrain {
        #[command(flatten)]
        config: ConfigArgs,
        #[command(flatten)]
        data: DataArgs,
        /// Checkpoint output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Phase 2: train mapper, extractor, translators and discriminator.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        #[command(flatten)]
        data: DataArgs,
        /// Pretrained (phase-1) checkpoint directory.
        #[arg(long)]
        pretrained: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Deterministically invert an image to its terminal latent.
    Invert {
        #[arg(long)]
        ckpt: PathBuf,
        /// Input image (PNG or JPEG).
        #[arg(long)]
        input: PathBuf,
        /// Tag whose self-extracted style conditions the inversion.
        #[arg(long, default_value = "mouth")]
        tag: String,
        /// Uniform-stride steps (must divide the training schedule).
        #[arg(long, default_value_t = 20)]
        steps: usize,
        /// Also regenerate from the latent and report the round-trip error.
        #[arg(long, default_value_t = false)]
        roundtrip: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Edit one image and write the result as PNG.
    Edit {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        input: PathBuf,
        /// Tag to edit, by name.
        #[arg(long)]
        tag: String,
        /// Target attribute, by name.
        #[arg(long)]
        target: String,
        /// Guidance: `latent` (mapper from noise) or `reference` (extractor).
        #[arg(long, default_value = "latent")]
        mode: String,
        /// Reference image carrying the target attribute (reference mode).
        #[arg(long)]
        reference: Option<PathBuf>,
        /// Seed for the latent-guided noise tokens.
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 20)]
        steps: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate editing accuracy and Fréchet distance over the test split.
    Eval {
        #[command(flatten)]
        config: ConfigArgs,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        ckpt: PathBuf,
        /// Guidance mode to evaluate: `latent` or `reference`.
        #[arg(long, default_value = "latent")]
        mode: String,
        /// Cap per-direction sample count (0 = full test split).
        #[arg(long, default_value_t = 0)]
        max_per_direction: usize,
        /// Also write every edited image as PNG.
        #[arg(long, default_value_t = false)]
        save_images: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train and evaluate one model per ablation flag plus the full model.
    Ablate {
        #[command(flatten)]
        config: ConfigArgs,
        #[command(flatten)]
        data: DataArgs,
        /// Comma-separated flags (no_prior, no_priormapper, no_refineextractor,
        /// no_rl, no_cl, no_al).
        #[arg(long)]
        flags: String,
        #[arg(long)]
        out: PathBuf,
    },
}

fn out_root() -> PathBuf {
    std::env::var_os("ATTREDIT_OUT_ROOT").map(PathBuf::from).unwrap_or_else(|| PathBuf::from("."))
}

fn resolve_out(path: &Path) -> PathBuf {
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        out_root().join(path)
    }
}

fn parse_mode(s: &str) -> Result<GuidedMode> {
    match s.to_ascii_lowercase().as_str() {
        "latent" => Ok(GuidedMode::Latent),
        "reference" => Ok(GuidedMode::Reference),
        other => Err(Error::invalid(format!("unknown mode '{other}' (latent|reference)"))),
    }
}

/// Load a dataset directory or synthesize the toy set, then split
/// deterministically (first 90% train, last 10% test, ascending order).
fn load_split(
    data: &DataArgs,
    config: &TrainConfig,
) -> Result<(Vec<LabeledImage>, Vec<LabeledImage>, TagSchema)> {
    let all: Vec<LabeledImage>;
    let schema: TagSchema;
    match &data.data {
        Some(dir) => {
            schema = TagSchema::load(&dir.join("schema.txt"))?;
            let set = load_annotations(
                dir,
                &dir.join("annotations.csv"),
                &schema,
                config.dims.image_size,
            )?;
            if set.rejected > 0 {
                eprintln!("warning: rejected {} contradictory annotation rows", set.rejected);
            }
            all = set.images;
        }
        None => {
            schema = TagSchema::toy();
            all = synth_toy_dataset(config.dataset_seed, config.dataset_size, &schema)?;
        }
    }
    if all.len() < 10 {
        return Err(Error::invalid("dataset too small to split (need at least 10 images)"));
    }
    let split = all.len() - all.len() / 10;
    let (train, test) = all.split_at(split);
    Ok((train.to_vec(), test.to_vec(), schema))
}

fn write_resolved_config(dir: &Path, config: &TrainConfig) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    config.save(&dir.join("config.resolved.txt"))
}

fn train_eval_classifier(
    train: &[LabeledImage],
    schema: &TagSchema,
    config: &TrainConfig,
) -> Result<PixelClassifier> {
    let (cls, _) = PixelClassifier::train(
        train,
        schema,
        config.dims.image_size,
        config.seed ^ 0x00c1_a55e,
        config.pixelcls_steps,
        16,
    )?;
    Ok(cls)
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::SynthData { out, count, seed } => {
            let out = resolve_out(&out);
            let schema = TagSchema::toy();
            let data = synth_toy_dataset(seed, count, &schema)?;
            write_dataset(&out, &data, &schema)?;
            println!("wrote {count} images, annotations.csv and schema.txt to {}", out.display());
        }
        Cmd::Pretrain { config, data, out } => {
            let out = resolve_out(&out);
            let config = config.resolve(TrainConfig::default())?;
            let (train, _, schema) = load_split(&data, &config)?;
            write_resolved_config(&out, &config)?;
            let (models, report) = pretrain_diffusion(&train, &config, &schema)?;
            models.save_checkpoint(&out, &config, report.losses.len())?;
            std::fs::write(out.join("pretrain_report.json"), serde_json::to_string_pretty(&report)?)?;
            println!(
                "pretrained {} steps; final loss {:.5}; held-out round-trip error {:.4}",
                report.losses.len(),
                report.losses.last().unwrap_or(&f64::NAN),
                report.recon_curve.last().unwrap_or(&f64::NAN)
            );
            println!("checkpoint written to {}", out.display());
        }
        Cmd::Train { config, data, pretrained, out } => {
            let out = resolve_out(&out);
            let mut models = Models::from_checkpoint(&pretrained)?;
            let base = attredit::checkpoint::load_meta(&pretrained)?.config;
            let config = config.resolve(base)?;
            let (train, _, _) = load_split(&data, &config)?;
            write_resolved_config(&out, &config)?;
            models.ablation = config.ablation;
            let report = train_editor(&train, &mut models, &config, Some(&out.join("train_log.jsonl")))?;
            models.save_checkpoint(&out, &config, report.losses.len())?;
            let last = report.losses.last();
            println!(
                "trained {} generator steps; final total_g {:.5}",
                report.losses.len(),
                last.map(|l| l.total_g).unwrap_or(f64::NAN)
            );
            println!("checkpoint written to {}", out.display());
        }
        Cmd::Invert { ckpt, input, tag, steps, roundtrip, out } => {
            let out = resolve_out(&out);
            let models = Models::from_checkpoint(&ckpt)?;
            let tag_idx = models.schema.tag_index(&tag)?;
            let image = attredit::data::load_image(&input, models.dims.image_size)?;
            let batch = image.clone().insert_axis(Axis(0));
            let sched = models.eval_schedule(steps)?;
            let (codes, _) = models.self_semantic(&batch, tag_idx)?;
            let bound = models.predictor();
            let latent = invert(&batch, &codes, &bound, &sched)?;
            std::fs::create_dir_all(&out)?;
            write_resolved_config(&out, &models_config_base(&models))?;
            let flat: Vec<u8> =
                latent.iter().flat_map(|v| v.to_le_bytes()).collect();
            std::fs::write(out.join("latent.bin"), flat)?;
            std::fs::write(
                out.join("latent.json"),
                serde_json::to_string_pretty(&serde_json::json!({
                    "shape": latent.shape(),
                    "steps": steps,
                    "tag": tag,
                    "dtype": "f64le",
                }))?,
            )?;
            if roundtrip {
                let back = generate(&latent, &codes, &bound, &sched)?;
                let err = batch
                    .iter()
                    .zip(back.iter())
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0f64, f64::max);
                attredit::data::save_image(
                    &back.index_axis(Axis(0), 0).to_owned(),
                    &out.join("roundtrip.png"),
                )?;
                println!("round-trip max-abs error {err:.5}");
            }
            println!("latent written to {}", out.display());
        }
        Cmd::Edit { ckpt, input, tag, target, mode, reference, seed, steps, out } => {
            let out = resolve_out(&out);
            let mode = parse_mode(&mode)?;
            let models = Models::from_checkpoint(&ckpt)?;
            let tag_idx = models.schema.tag_index(&tag)?;
            let target_idx = models.schema.attr_index(tag_idx, &target)?;
            let image = attredit::data::load_image(&input, models.dims.image_size)?;
            let reference = match (mode, &reference) {
                (GuidedMode::Reference, Some(path)) => {
                    let img = attredit::data::load_image(path, models.dims.image_size)?;
                    // the reference is declared to carry the target attribute
                    let mut attrs = vec![0; models.schema.num_tags()];
                    attrs[tag_idx] = target_idx;
                    Some(LabeledImage { image: img, attrs })
                }
                (GuidedMode::Reference, None) => {
                    return Err(Error::invalid(
                        "--mode reference requires --reference <image>",
                    ))
                }
                (GuidedMode::Latent, _) => None,
            };
            let req = attredit::data::EditRequest {
                tag: tag_idx,
                // self style drives inversion; the source attribute is
                // irrelevant to the pipeline and unknown for file inputs
                source_attr: 0,
                target_attr: target_idx,
                mode,
                reference,
            };
            let edited = attredit::eval::edit(&models, &image, &req, seed, steps)?;
            std::fs::create_dir_all(&out)?;
            write_resolved_config(&out, &models_config_base(&models))?;
            let name = format!("edited_{tag}_{target}.png");
            attredit::data::save_image(&edited, &out.join(&name))?;
            println!("edited image written to {}", out.join(name).display());
        }
        Cmd::Eval { config, data, ckpt, mode, max_per_direction, save_images, out } => {
            let out = resolve_out(&out);
            let models = Models::from_checkpoint(&ckpt)?;
            let base = attredit::checkpoint::load_meta(&ckpt)?.config;
            let config = config.resolve(base)?;
            let (train, test, _) = load_split(&data, &config)?;
            write_resolved_config(&out, &config)?;
            let classifier = train_eval_classifier(&train, &models.schema, &config)?;
            let opts = EvalOpts {
                mode: parse_mode(&mode)?,
                eval_steps: config.eval_steps,
                z_seed: config.seed,
                max_per_direction,
            };
            let report = evaluate(&models, &test, &classifier, &opts)?;
            std::fs::write(out.join("report.json"), serde_json::to_string_pretty(&report)?)?;
            std::fs::write(out.join("report.txt"), report.text_table())?;
            if save_images {
                let n = write_edited_images(&models, &test, &out.join("images"), &opts)?;
                println!("wrote {n} edited images");
            }
            print!("{}", report.text_table());
            println!("report written to {}", out.display());
        }
        Cmd::Ablate { config, data, flags, out } => {
            let out = resolve_out(&out);
            let config = config.resolve(TrainConfig::default())?;
            let flags: Vec<Ablation> = flags
                .split(',')
                .filter(|s| !s.trim().is_empty())
                .map(Ablation::parse)
                .collect::<Result<_>>()?;
            let (train, test, schema) = load_split(&data, &config)?;
            write_resolved_config(&out, &config)?;
            let classifier = train_eval_classifier(&train, &schema, &config)?;
            let opts = EvalOpts {
                mode: GuidedMode::Latent,
                eval_steps: config.eval_steps,
                z_seed: config.seed,
                max_per_direction: 0,
            };
            let grid = run_ablation_grid(&train, &test, &config, &flags, &classifier, &opts)?;
            std::fs::write(out.join("grid.json"), serde_json::to_string_pretty(&grid)?)?;
            std::fs::write(out.join("grid.txt"), grid.text_table())?;
            print!("{}", grid.text_table());
            println!("grid written to {}", out.display());
        }
    }
    Ok(())
}

/// A config seeded from checkpoint metadata, so command-line overrides start
/// from the state the model was trained with.
fn models_config_base(models: &Models) -> TrainConfig {
    let mut c = TrainConfig::default();
    c.dims = models.dims.clone();
    c.ablation = models.ablation;
    c.t_train = models.sched.num_steps();
    c
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            // argument-level problems are usage errors; everything else is
            // a runtime failure
            let code = match &e {
                Error::InvalidArgument(_) | Error::Config(_) | Error::Schema(_) => 1u8,
                _ => 2u8,
            };
            eprintln!("error: {e}");
            ExitCode::from(code)
        }
    }
}
