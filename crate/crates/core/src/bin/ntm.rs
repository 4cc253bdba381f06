use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use ntm::eval::{evaluate, stats_row, EvalSpec, STATS_HEADER};
use ntm::io::{curve_csv, format_instance, render_trace, Checkpoint};
use ntm::rng::instance_rng;
use ntm::task::{CopyConfig, RepeatCopyConfig, Split, TaskConfig};
use ntm::train::{TrainConfig, Trainer};
use ntm::{NtmConfig, NtmError, NtmModel, Result};

#[derive(Parser)]
#[command(
    name = "ntm",
    version,
    about = "Neural Turing Machine on copy and repeat-copy tasks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum TaskArg {
    Copy,
    Repeat,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum SplitArg {
    Train,
    Test,
    All,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Test => Split::Test,
            SplitArg::All => Split::All,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Write one task instance as an NTMTASK v1 dump.
    Generate {
        #[arg(long, value_enum)]
        task: TaskArg,
        #[arg(long)]
        len: usize,
        #[arg(long, default_value_t = 1)]
        reps: usize,
        #[arg(long)]
        bits: usize,
        #[arg(long, value_enum)]
        split: SplitArg,
        #[arg(long)]
        seed: u64,
        /// Normalizer for the repetition channel (defaults to 10).
        #[arg(long)]
        rep_normalizer: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model from a TOML run configuration.
    Train {
        #[arg(long, value_enum)]
        task: TaskArg,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        curve: PathBuf,
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Bit-error statistics of a trained model.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        target: EvalTarget,
        #[arg(long)]
        count: u64,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        stats: PathBuf,
        #[arg(long, default_value_t = 1)]
        workers: usize,
        /// Error count above which a sequence counts as a global error
        /// (defaults to the vector width).
        #[arg(long)]
        global_threshold: Option<u64>,
    },
    /// Heatmaps of targets, outputs, differences and head weightings.
    Render {
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        target: EvalTarget,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        outdir: PathBuf,
    },
}

#[derive(Args)]
struct EvalTarget {
    #[arg(long, value_enum)]
    task: TaskArg,
    #[arg(long)]
    len: usize,
    #[arg(long, default_value_t = 1)]
    reps: usize,
    /// Vector split to draw from (copy defaults to test, repeat to all).
    #[arg(long, value_enum)]
    split: Option<SplitArg>,
}

/// TOML run configuration for `train`.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunConfig {
    model: ModelSection,
    #[serde(default)]
    task: TaskSection,
    #[serde(default)]
    train: TrainConfig,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelSection {
    memory_rows: usize,
    memory_width: usize,
    hidden: usize,
    #[serde(default)]
    init_seed: u64,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct TaskSection {
    bits: Option<usize>,
    min_len: Option<usize>,
    max_len: Option<usize>,
    max_reps: Option<usize>,
    rep_normalizer: Option<f64>,
}

impl TaskSection {
    fn resolve(&self, task: TaskArg) -> TaskConfig {
        match task {
            TaskArg::Copy => {
                let d = CopyConfig::default();
                TaskConfig::Copy(CopyConfig {
                    bits: self.bits.unwrap_or(d.bits),
                    min_len: self.min_len.unwrap_or(d.min_len),
                    max_len: self.max_len.unwrap_or(d.max_len),
                    split: Split::Train,
                })
            }
            TaskArg::Repeat => {
                let d = RepeatCopyConfig::default();
                let max_reps = self.max_reps.unwrap_or(d.max_reps);
                TaskConfig::RepeatCopy(RepeatCopyConfig {
                    bits: self.bits.unwrap_or(d.bits),
                    max_len: self.max_len.unwrap_or(d.max_len),
                    max_reps,
                    rep_normalizer: self.rep_normalizer.unwrap_or(max_reps as f64),
                    split: Split::All,
                })
            }
        }
    }
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| NtmError::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn task_matches(arg: TaskArg, task: &TaskConfig) -> Result<()> {
    let want = match arg {
        TaskArg::Copy => "copy",
        TaskArg::Repeat => "repeat",
    };
    if task.name() != want {
        return Err(NtmError::Config(format!(
            "model was trained on `{}`, not `{want}`",
            task.name()
        )));
    }
    Ok(())
}

fn eval_spec(arg: &EvalTarget, task: TaskConfig) -> Result<EvalSpec> {
    task_matches(arg.task, &task)?;
    let mut spec = EvalSpec::new(task, arg.len, arg.reps);
    if let Some(split) = arg.split {
        spec = spec.with_split(split.into());
    }
    Ok(spec)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate {
            task,
            len,
            reps,
            bits,
            split,
            seed,
            rep_normalizer,
            out,
        } => {
            let cfg = match task {
                TaskArg::Copy => TaskConfig::Copy(CopyConfig {
                    bits,
                    min_len: len,
                    max_len: len,
                    split: split.into(),
                }),
                TaskArg::Repeat => TaskConfig::RepeatCopy(RepeatCopyConfig {
                    bits,
                    rep_normalizer: rep_normalizer
                        .unwrap_or(RepeatCopyConfig::default().rep_normalizer),
                    split: split.into(),
                    ..RepeatCopyConfig::default()
                }),
            };
            cfg.validate()?;
            let inst = cfg.generate(&mut instance_rng(seed, 0), len, reps)?;
            write_file(&out, format_instance(cfg.name(), &inst))
        }
        Command::Train {
            task,
            config,
            out,
            curve,
            resume,
        } => {
            let text = std::fs::read_to_string(&config).map_err(|e| NtmError::Io {
                path: config.clone(),
                source: e,
            })?;
            let run: RunConfig = toml::from_str(&text)
                .map_err(|e| NtmError::Config(format!("{}: {e}", config.display())))?;
            let task_cfg = run.task.resolve(task);
            let mut trainer = match resume {
                Some(path) => {
                    let ck = Checkpoint::load(&path)?;
                    if ck.task != task_cfg {
                        return Err(NtmError::Config(
                            "resume checkpoint was trained on a different task".into(),
                        ));
                    }
                    ck.trainer(run.train.clone())?
                }
                None => {
                    let model_cfg = NtmConfig::new(
                        task_cfg.input_channels(),
                        task_cfg.target_channels(),
                        run.model.memory_rows,
                        run.model.memory_width,
                        run.model.hidden,
                    );
                    let model = NtmModel::new(model_cfg, run.model.init_seed)?;
                    Trainer::new(model, task_cfg, run.train.clone())?
                }
            };
            trainer.run(|t| {
                if let Some(p) = t.curve().last() {
                    eprintln!(
                        "instances {} loss {:.4} bits/seq",
                        p.instances_seen, p.loss_bits
                    );
                }
                Checkpoint::from_trainer(t).save(&out)?;
                write_file(&curve, curve_csv(t.curve()))
            })?;
            Checkpoint::from_trainer(&trainer).save(&out)?;
            write_file(&curve, curve_csv(trainer.curve()))
        }
        Command::Eval {
            model,
            target,
            count,
            seed,
            stats,
            workers,
            global_threshold,
        } => {
            let ck = Checkpoint::load(&model)?;
            let net = ck.model()?;
            let mut spec = eval_spec(&target, ck.task)?;
            if let Some(g) = global_threshold {
                spec.global_threshold = g;
            }
            let s = evaluate(&net, &spec, count, seed, workers)?;
            let row = stats_row(ck.task.name(), spec.len, spec.reps_label(), &s);
            write_file(&stats, format!("{STATS_HEADER}\n{row}\n"))
        }
        Command::Render {
            model,
            target,
            seed,
            outdir,
        } => {
            let ck = Checkpoint::load(&model)?;
            let net = ck.model()?;
            let spec = eval_spec(&target, ck.task)?;
            let inst = spec.task.with_split(spec.split).generate(
                &mut instance_rng(seed, 0),
                spec.len,
                spec.reps,
            )?;
            let (outputs, trace) = net.unroll(&inst.input)?;
            render_trace(&inst, &outputs, &trace, &outdir)?;
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
