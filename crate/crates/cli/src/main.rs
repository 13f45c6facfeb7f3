//! `ise3`: dataset generation, training, evaluation, study reproduction,
//! and verification for the iterative equivariant attention experiments.
//!
//! Exit codes: 0 success, 2 usage error, 3 verification failure,
//! 4 numeric abort.

mod config;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use config::RunConfig;
use ise3::net::{
    load_checkpoint, save_checkpoint, CheckpointMeta, ModelConfig, ModelParams,
};
use ise3::optim::{
    evaluate_gd, evaluate_model, train, MethodEval, ResultsTable, TrainError,
};
use ise3::sim::{mix_seed, read_jsonl, sample_instance, write_jsonl, SEED_DOMAIN_TEST};
use ise3::study::{run_study, summarize, StudySettings, TableSelection};
use ise3::verify::{equivariance_suite, gradcheck_suite, potential_suite, so3_suite};
use std::io::{BufReader, BufWriter, Write as _};
use std::path::PathBuf;
use std::process::ExitCode;

const EXIT_VERIFICATION: u8 = 3;
const EXIT_NUMERIC: u8 = 4;

#[derive(Parser)]
#[command(
    name = "ise3",
    about = "Iterative SE(3)-equivariant attention on a particle energy-minimization task",
    version
)]
struct Cli {
    /// Base seed for all derived randomness.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads. This build computes single-threaded and all results
    /// are independent of the value; accepted for interface stability.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    /// JSON configuration file (strict keys, defaults for anything omitted).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Single,
    Iterative,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScaleArg {
    Desk,
    Full,
}

#[derive(Clone, Copy, ValueEnum)]
enum Suite {
    So3,
    Gradcheck,
    Equivariance,
    Potential,
}

#[derive(Subcommand)]
enum Command {
    /// Sample problem instances into a JSON-lines dataset.
    Gen {
        /// Nodes per instance.
        #[arg(long, default_value_t = 10)]
        n: usize,
        /// Number of instances.
        #[arg(long)]
        count: usize,
        /// Output path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model and write a checkpoint plus per-epoch metrics.
    Train {
        #[arg(long, value_enum)]
        preset: Preset,
        /// Disable gradient flow through bases and radial inputs of
        /// blocks ≥ 2.
        #[arg(long)]
        no_basis_grad: bool,
        /// Neighborhood size (omit for fully connected).
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        out_checkpoint: PathBuf,
        #[arg(long)]
        out_metrics: PathBuf,
    },
    /// Evaluate checkpoints (and the gradient-descent baseline) on a
    /// dataset; writes a results CSV.
    Eval {
        /// Checkpoints to evaluate; may be empty for the baseline only.
        #[arg(long = "checkpoint")]
        checkpoints: Vec<PathBuf>,
        #[arg(long)]
        testset: PathBuf,
        /// Also refine each model's output with gradient descent.
        #[arg(long)]
        gd_post: bool,
        /// Expected neighborhood size; must match every checkpoint.
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train and evaluate every method of a results table.
    Reproduce {
        /// 1: method comparison; 2: neighborhood sizes.
        #[arg(long)]
        table: u8,
        #[arg(long, value_enum, default_value = "desk")]
        scale: ScaleArg,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Run a verification suite; non-zero exit on failure.
    Verify {
        #[arg(long, value_enum)]
        suite: Suite,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.threads == 0 {
        eprintln!("error: --threads must be at least 1");
        return ExitCode::from(2);
    }
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            // numeric aborts carry their own exit code
            if let Some(TrainError::NonFinite { .. }) = e.downcast_ref::<TrainError>() {
                eprintln!("numeric abort: {e}");
                return ExitCode::from(EXIT_NUMERIC);
            }
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    config.train.seed = cli.seed;

    match cli.command {
        Command::Gen { n, count, out } => {
            let instances: Vec<_> = (0..count)
                .map(|i| sample_instance(n, mix_seed(cli.seed, SEED_DOMAIN_TEST, i as u64)))
                .collect::<Result<_, _>>()?;
            let file = std::fs::File::create(&out)
                .with_context(|| format!("creating {}", out.display()))?;
            let mut writer = BufWriter::new(file);
            write_jsonl(&mut writer, &instances)?;
            writer.flush()?;
            eprintln!("wrote {} instances to {}", count, out.display());
            Ok(ExitCode::SUCCESS)
        }

        Command::Train {
            preset,
            no_basis_grad,
            k,
            out_checkpoint,
            out_metrics,
        } => {
            let mut model = match preset {
                Preset::Single => ModelConfig::single_pass(),
                Preset::Iterative => ModelConfig::iterative(),
            };
            model.radial_hidden = config.model.radial_hidden;
            model.hidden = config.model.hidden.clone();
            model.basis_gradients = !no_basis_grad;
            model.k = k.or(config.model.k);
            let method = match (preset, no_basis_grad) {
                (Preset::Single, false) => "single",
                (Preset::Single, true) => "single-no-basis-grad",
                (Preset::Iterative, false) => "iterative",
                (Preset::Iterative, true) => "no-basis-grad",
            };
            let single = ModelParams::init(&ModelConfig::single_pass(), 0)?.count();
            let iter = ModelParams::init(&ModelConfig::iterative(), 0)?.count();
            eprintln!(
                "training {method} ({} parameters; presets single/iterative have {single}/{iter})",
                ModelParams::init(&model, 0)?.count()
            );

            let (params, metrics) = train(&model, &config.train, |m| {
                eprintln!(
                    "epoch {:>4}: lr {:.6e}, mean train energy {:.6}",
                    m.epoch, m.lr, m.mean_train_energy
                );
            })?;

            let meta = CheckpointMeta {
                config: model,
                method: method.to_string(),
                train_seed: config.train.seed,
            };
            let file = std::fs::File::create(&out_checkpoint)
                .with_context(|| format!("creating {}", out_checkpoint.display()))?;
            let mut writer = BufWriter::new(file);
            save_checkpoint(&mut writer, &params, &meta)?;
            writer.flush()?;

            let mut csv = String::from("epoch,lr,mean_train_energy\n");
            for m in &metrics {
                csv.push_str(&format!("{},{},{}\n", m.epoch, m.lr, m.mean_train_energy));
            }
            std::fs::write(&out_metrics, csv)
                .with_context(|| format!("writing {}", out_metrics.display()))?;
            eprintln!(
                "checkpoint {} and metrics {} written",
                out_checkpoint.display(),
                out_metrics.display()
            );
            Ok(ExitCode::SUCCESS)
        }

        Command::Eval {
            checkpoints,
            testset,
            gd_post,
            k,
            out,
        } => {
            let file = std::fs::File::open(&testset)
                .with_context(|| format!("opening {}", testset.display()))?;
            let instances = read_jsonl(BufReader::new(file))?;
            if instances.is_empty() {
                bail!("test set {} is empty", testset.display());
            }
            let mut rows = Vec::new();
            let gd_mean = evaluate_gd(&instances, &config.gd);
            rows.push(
                MethodEval {
                    method: "gd".into(),
                    k: None,
                    run_means: vec![gd_mean],
                }
                .row(),
            );
            for path in &checkpoints {
                let file = std::fs::File::open(path)
                    .with_context(|| format!("opening {}", path.display()))?;
                let (params, meta) = load_checkpoint(&mut BufReader::new(file))?;
                if let Some(k) = k {
                    if meta.config.k != Some(k) {
                        bail!(
                            "checkpoint {} was trained with K {:?} but --k {} was requested",
                            path.display(),
                            meta.config.k,
                            k
                        );
                    }
                }
                let mean = evaluate_model(&params, &instances, None, config.train.batch_size)?;
                rows.push(
                    MethodEval {
                        method: meta.method.clone(),
                        k: meta.config.k,
                        run_means: vec![mean],
                    }
                    .row(),
                );
                if gd_post {
                    let refined =
                        evaluate_model(&params, &instances, Some(&config.gd), config.train.batch_size)?;
                    rows.push(
                        MethodEval {
                            method: format!("{}+gd", meta.method),
                            k: meta.config.k,
                            run_means: vec![refined],
                        }
                        .row(),
                    );
                }
            }
            let table = ResultsTable { rows };
            std::fs::write(&out, table.to_csv())
                .with_context(|| format!("writing {}", out.display()))?;
            print!("{}", table.to_csv());
            Ok(ExitCode::SUCCESS)
        }

        Command::Reproduce {
            table,
            scale,
            out_dir,
        } => {
            let selection = match table {
                1 => TableSelection::Table1,
                2 => TableSelection::Table2,
                other => bail!("--table must be 1 or 2, got {other}"),
            };
            let mut settings = match scale {
                ScaleArg::Desk => StudySettings::desk(cli.seed),
                ScaleArg::Full => StudySettings::full(cli.seed),
            };
            settings.test_size = config.experiment.test_size;
            if matches!(scale, ScaleArg::Full) {
                settings.runs = config.experiment.runs;
            }
            settings.gd = config.gd.clone();
            std::fs::create_dir_all(&out_dir)
                .with_context(|| format!("creating {}", out_dir.display()))?;
            let outcome = run_study(&settings, selection, &mut |msg| eprintln!("{msg}"))?;
            if let Some(t) = &outcome.table1 {
                std::fs::write(out_dir.join("table1.csv"), t.to_csv())?;
            }
            if let Some(t) = &outcome.table2 {
                std::fs::write(out_dir.join("table2.csv"), t.to_csv())?;
            }
            let summary = summarize(&outcome);
            std::fs::write(out_dir.join("summary.txt"), &summary)?;
            print!("{summary}");
            let all_pass = outcome
                .verdicts
                .iter()
                .all(|v| v.passed.unwrap_or(true));
            Ok(if all_pass {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(EXIT_VERIFICATION)
            })
        }

        Command::Verify { suite } => {
            let report = match suite {
                Suite::So3 => {
                    let cg = ise3::so3::CgTable::up_to(2)?;
                    so3_suite(&cg)
                }
                Suite::Gradcheck => gradcheck_suite(),
                Suite::Equivariance => equivariance_suite(20),
                Suite::Potential => potential_suite(),
            };
            print!("{}", report.render());
            Ok(if report.passed() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(EXIT_VERIFICATION)
            })
        }
    }
}
