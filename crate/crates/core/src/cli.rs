//! Command-line front end.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error
//! (unreadable or malformed input), 3 training failure.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufRead, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Parser, Subcommand};
use log::info;

use crate::error::{Error, Result};
use crate::evalcli::config::{load_config, Config};
use crate::evalcli::evaluate;
use crate::evalcli::report::{
    read_profiles, read_sweep, write_profiles, write_report, write_sweep, ProfileSeries,
};
use crate::evalcli::svg::{profile_chart, sweep_chart};
use crate::evalcli::sweep::{run_sweep, SweepParam, SweepSpec};
use crate::forecaster::{train_pipeline, PipelineModel, TextModels};
use crate::intensity::{reply_scores, windowed_profile, HateLexicon};
use crate::threadstore::{
    generate_synthetic, parse_corpus, parse_thread_line, save_corpus, split_train_test,
    synthetic_lexicon, Corpus,
};

pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_TRAINING: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "hatecast",
    version,
    about = "Forecast hate-intensity profiles of conversation threads"
)]
struct Cli {
    /// Seed for splitting, training and synthetic generation.
    #[arg(long, global = true, default_value_t = 42)]
    seed: u64,
    /// key=value configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Model checkpoint path.
    #[arg(long, global = true)]
    checkpoint: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic corpus and its ground-truth sidecar.
    Synth {
        #[arg(long)]
        out: PathBuf,
    },
    /// Validate a corpus and write its intensity profiles as CSV.
    Ingest {
        #[arg(long)]
        corpus: PathBuf,
        /// Tab-separated `word<TAB>score` lexicon (default: the built-in one).
        #[arg(long)]
        lexicon: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train on the training split and write a checkpoint.
    Train {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        lexicon: Option<PathBuf>,
    },
    /// Print the forecast profile of one thread as comma-separated values.
    Forecast {
        /// Corpus holding the thread; without it the thread is read from stdin.
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        thread: Option<String>,
    },
    /// Score the checkpoint on the held-out split.
    Evaluate {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long)]
        profiles: Option<PathBuf>,
    },
    /// Retrain across values of one hyperparameter and seeds.
    Sweep {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        lexicon: Option<PathBuf>,
        /// delta, t_h, j, w or scorer.
        #[arg(long)]
        param: String,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
        #[arg(long, value_delimiter = ',', default_value = "42")]
        seeds: Vec<u64>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        parallel: bool,
    },
    /// Render a profiles or sweep CSV as an SVG line chart.
    Report {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Thread to plot from a profiles file (default: the first).
        #[arg(long)]
        thread: Option<String>,
    },
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code.
pub fn run<I, T>(args: I, stdin: &mut dyn BufRead, stdout: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli, stdin, stdout) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => EXIT_USAGE,
        Error::Stage { .. } => EXIT_TRAINING,
        Error::Contract(_)
        | Error::Parse { .. }
        | Error::Thread { .. }
        | Error::Checkpoint(_)
        | Error::Io(_) => EXIT_DATA,
    }
}

fn usage(msg: &str) -> Error {
    Error::Config(msg.into())
}

fn config(cli: &Cli) -> Result<Config> {
    match &cli.config {
        Some(p) => load_config(p),
        None => Ok(Config::default()),
    }
}

fn lexicon(path: &Option<PathBuf>) -> Result<Arc<HateLexicon>> {
    Ok(Arc::new(match path {
        Some(p) => HateLexicon::load(p)?,
        None => synthetic_lexicon(),
    }))
}

fn checkpoint(cli: &Cli) -> Result<&Path> {
    cli.checkpoint
        .as_deref()
        .ok_or_else(|| usage("this command needs --checkpoint <path>"))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn held_out(corpus: &Corpus, model: &PipelineModel) -> Result<Corpus> {
    Ok(split_train_test(corpus, model.hp.split, model.seed)?.1)
}

fn execute(cli: Cli, stdin: &mut dyn BufRead, stdout: &mut dyn Write) -> Result<()> {
    let cfg = config(&cli)?;
    match &cli.command {
        Command::Synth { out } => {
            let mut synth = cfg.synth.clone();
            synth.seed = cli.seed;
            let corpus = generate_synthetic(&synth)?;
            save_corpus(&corpus, out)?;
            info!("wrote {} threads to {}", corpus.len(), out.display());
        }
        Command::Ingest {
            corpus,
            lexicon: lex,
            out,
        } => {
            let corpus = parse_corpus(corpus)?;
            let text = TextModels::new(lexicon(lex)?, &cfg.hp)?;
            let split = cfg.hp.history_windows();
            let mut series = Vec::with_capacity(corpus.len());
            for t in corpus.threads() {
                let scores = reply_scores(t, cfg.hp.w, &text.scorer, &text.lexicon)?;
                let p = windowed_profile(t.id(), &scores, cfg.hp.delta, cfg.hp.window_mode)?;
                let cut = split.min(p.windows.len());
                series.push(ProfileSeries {
                    thread_id: t.id().into(),
                    history: p.windows[..cut].to_vec(),
                    predicted: Vec::new(),
                    actual: p.windows[cut..].to_vec(),
                });
            }
            write_profiles(&series, create(out)?)?;
            info!(
                "wrote profiles of {} threads to {}",
                series.len(),
                out.display()
            );
        }
        Command::Train {
            corpus,
            lexicon: lex,
        } => {
            let path = checkpoint(&cli)?;
            let corpus = parse_corpus(corpus)?;
            let (train, _) = split_train_test(&corpus, cfg.hp.split, cli.seed)?;
            let model = train_pipeline(&train, cfg.hp.clone(), lexicon(lex)?, cli.seed)?;
            model.save(path)?;
            info!("checkpoint written to {}", path.display());
        }
        Command::Forecast { corpus, thread } => {
            let model = PipelineModel::load(checkpoint(&cli)?)?;
            let t =
                match (corpus, thread) {
                    (Some(c), Some(id)) => {
                        parse_corpus(c)?
                            .get(id)
                            .cloned()
                            .ok_or_else(|| Error::Thread {
                                thread: id.clone(),
                                msg: "not in corpus".into(),
                            })?
                    }
                    (None, None) => {
                        let mut line = String::new();
                        stdin.read_line(&mut line)?;
                        parse_thread_line(line.trim(), 1)?
                    }
                    _ => return Err(usage(
                        "give both --corpus and --thread, or neither to read a thread from stdin",
                    )),
                };
            let f = model.forecast_profile(&t)?;
            let values: Vec<String> = f.predicted.iter().map(f64::to_string).collect();
            writeln!(stdout, "{}", values.join(","))?;
        }
        Command::Evaluate {
            corpus,
            report,
            profiles,
        } => {
            let model = PipelineModel::load(checkpoint(&cli)?)?;
            let corpus = parse_corpus(corpus)?;
            let test = held_out(&corpus, &model)?;
            let rep = evaluate(&model, &test)?;
            let mean = rep.mean();
            let pcc = mean
                .pcc
                .map(|p| format!("{p:.4}"))
                .unwrap_or_else(|| "n/a".into());
            writeln!(
                stdout,
                "threads={} pcc={pcc} rmse={:.4} mfe={:.4}",
                mean.threads, mean.rmse, mean.mfe
            )?;
            if let Some(p) = report {
                write_report(&rep.rows, create(p)?)?;
            }
            if let Some(p) = profiles {
                let series: Vec<ProfileSeries> =
                    rep.forecasts.iter().map(ProfileSeries::from).collect();
                write_profiles(&series, create(p)?)?;
            }
        }
        Command::Sweep {
            corpus,
            lexicon: lex,
            param,
            values,
            seeds,
            out,
            parallel,
        } => {
            let spec = SweepSpec {
                param: SweepParam::parse(param)?,
                values: values.clone(),
                seeds: seeds.clone(),
                base: cfg.hp.clone(),
                parallel: *parallel,
            };
            spec.settings()?;
            let corpus = parse_corpus(corpus)?;
            let rows = run_sweep(&spec, &corpus, lexicon(lex)?)?;
            write_sweep(&rows, create(out)?)?;
        }
        Command::Report { input, out, thread } => {
            let text = std::fs::read_to_string(input)?;
            let svg = if text.starts_with("param,") {
                sweep_chart(&read_sweep(text.as_bytes())?)
            } else {
                let series = read_profiles(text.as_bytes())?;
                let chosen = match thread {
                    Some(id) => series.iter().find(|s| &s.thread_id == id),
                    None => series.first(),
                };
                let s = chosen.ok_or_else(|| Error::Parse {
                    line: 0,
                    msg: "no matching profile in input".into(),
                })?;
                profile_chart(s)
            };
            std::fs::write(out, svg)?;
        }
    }
    Ok(())
}
