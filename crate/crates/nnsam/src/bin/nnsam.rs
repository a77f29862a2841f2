use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nnsam::data::{save_dataset, synth_generate, Difficulty, Split, Splits};
use nnsam::predict::{list_pngs, predict_files, Predictor};
use nnsam::report::{summary_text, write_report};
use nnsam::train::{ablate, evaluate_checkpoint, prepare, sample_size_study, train_and_test, RunConfig, Trainer};
use nnsam::Result;

#[derive(Parser)]
#[command(name = "nnsam", version, about = "Train, evaluate and apply nnSAM segmentation models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train on the configured dataset and evaluate the best checkpoint on the test split.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a split of its dataset.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "test")]
        split: Split,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the full model and both ablations, then print a comparison table.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write label masks for every PNG in a directory.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also dump the level-set regression as a tensor archive.
        #[arg(long)]
        levelset: bool,
    },
    /// Generate a synthetic dataset with a manifest.
    Synth {
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 256)]
        size: usize,
        #[arg(long, value_enum, default_value_t = Difficulty::Easy)]
        difficulty: Difficulty,
        /// Samples (taken after the training ones) for the val split.
        #[arg(long, default_value_t = 0)]
        val: usize,
        /// Samples (taken last) for the test split.
        #[arg(long, default_value_t = 0)]
        test: usize,
    },
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// One size, or a comma-separated list for a sample-size study.
    #[arg(long, value_delimiter = ',')]
    train_size: Vec<usize>,
    #[arg(long)]
    no_frozen_encoder: bool,
    #[arg(long)]
    no_reg_head: bool,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Continue from `last.ckpt` in the output directory.
    #[arg(long)]
    resume: bool,
    /// Stop after this many epochs (the schedule still spans `epochs`).
    #[arg(long)]
    stop_after: Option<usize>,
}

fn load_config(path: &Path, seed: Option<u64>, out: Option<PathBuf>) -> Result<RunConfig> {
    let mut c = RunConfig::load(path)?;
    if let Some(s) = seed {
        c.seed = s;
    }
    if let Some(o) = out {
        c.output_dir = o;
    }
    Ok(c)
}

fn train(args: TrainArgs) -> Result<()> {
    let mut config = load_config(&args.config, args.seed, args.out)?;
    config.frozen_encoder &= !args.no_frozen_encoder;
    config.reg_head &= !args.no_reg_head;
    if args.no_reg_head {
        config.loss_weights = config.loss_weights.segmentation_only();
    }
    if let Some(e) = args.epochs {
        config.epochs = e;
    }
    config.validate()?;
    let out = config.output_dir.clone();
    if args.train_size.len() > 1 {
        let (_, table) = sample_size_study(&config, &args.train_size, &out)?;
        print!("{table}");
        return Ok(());
    }
    if let Some(&k) = args.train_size.first() {
        config.train_size = k;
    }
    if args.resume || args.stop_after.is_some() {
        let prepared = prepare(&config)?;
        let mut t = if args.resume {
            Trainer::resume(&config, prepared, &out.join("last.ckpt"))?
        } else {
            Trainer::new(&config, prepared)?
        };
        let summary = t.fit(&out, args.stop_after)?;
        println!("stopped after epoch {} (best val DICE {:?})", summary.state.epoch, summary.state.best_val_dice);
        if summary.state.epoch < config.epochs {
            return Ok(());
        }
        let report = evaluate_checkpoint(&summary.best_checkpoint, Split::Test)?;
        write_report(&report, &out, "nnSAM")?;
        print!("{}", summary_text(&report, "nnSAM"));
        return Ok(());
    }
    let (_, report) = train_and_test(&config, &out)?;
    print!("{}", summary_text(&report, "nnSAM"));
    Ok(())
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Train(args) => train(args)?,
        Command::Eval { checkpoint, split, out } => {
            let report = evaluate_checkpoint(&checkpoint, split)?;
            write_report(&report, &out, "nnSAM")?;
            print!("{}", summary_text(&report, "nnSAM"));
        }
        Command::Ablate { config, seed, out } => {
            let config = load_config(&config, seed, out)?;
            let result = ablate(&config, &config.output_dir)?;
            print!("{}", result.table);
        }
        Command::Predict {
            checkpoint,
            input,
            out,
            levelset,
        } => {
            let mut predictor = Predictor::load(&checkpoint)?;
            let inputs = if input.is_dir() { list_pngs(&input)? } else { vec![input] };
            let mut ok = true;
            for o in predict_files(&mut predictor, &inputs, &out, levelset)? {
                match o.result {
                    Ok(p) => println!("{} -> {}", o.input.display(), p.display()),
                    Err(e) => {
                        eprintln!("error: {}: {e}", o.input.display());
                        ok = false;
                    }
                }
            }
            return Ok(ok);
        }
        Command::Synth {
            seed,
            n,
            out,
            size,
            difficulty,
            val,
            test,
        } => {
            if val + test >= n {
                return Err(nnsam::Error::ConfigInvalid("val + test must leave at least one training sample".into()));
            }
            let samples = synth_generate(seed, n, size, difficulty)?;
            let ids: Vec<String> = samples.iter().map(|s| s.id.clone()).collect();
            let n_train = n - val - test;
            let splits = Splits {
                train: ids[..n_train].to_vec(),
                val: ids[n_train..n_train + val].to_vec(),
                test: ids[n_train + val..].to_vec(),
            };
            save_dataset(&out, &samples, splits)?;
            println!("wrote {n} samples to {}", out.display());
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
