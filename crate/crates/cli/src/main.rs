//! `persuade`: the offline workflow from synthetic corpus to served model.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 bad arguments.
//! Progress goes to stderr; stdout carries only command results.

mod plot;

use std::fs;
use std::io::{self, BufRead, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context as _, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use persuade_core::config::Config;
use persuade_core::detectors::{annotate_response, CandidateStatus, RepetitionVerdict};
use persuade_core::dialogue::{
    generate_corpus, load_corpus, save_corpus, split_corpus, update_profiles, ActSet, Context, Corpus,
    Profiles, Role, RuleClassifier, SlotAssertion, SynthConfig, SynthStyle, Turn, Utterance,
};
use persuade_core::policy::{derive_seed, perplexity, train_mle, Policy, ResponseGenerator};
use persuade_core::selection::{
    eval_metrics, load_demos, reference_preference, select_response, simulate_demonstrations, train_imitator,
    DemoRecord, ImitatorParams,
};
use persuade_core::trainer::{refine, EpochRecord};

/// Fraction of `--corpus` used for training when no `--val` corpus is given.
const TRAIN_FRACTION: f64 = 0.8;

#[derive(Parser)]
#[command(name = "persuade", version, about = "Train, refine and serve a persuasive dialogue policy")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Style {
    Standard,
    Adversarial,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic persuasion corpus and its vocabulary file.
    GenCorpus {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "standard")]
        style: Style,
    },
    /// Fit the baseline policy by maximum likelihood.
    TrainMle {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Report validation perplexity on this corpus.
        #[arg(long)]
        val: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Refine a baseline with detector rewards; writes the best checkpoint and a history file.
    Refine {
        #[arg(long)]
        baseline: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Validation corpus; without it `--corpus` is split 80/20.
        #[arg(long)]
        val: Option<PathBuf>,
        /// Defaults to the checkpoint path with a `.history.jsonl` extension.
        #[arg(long)]
        history: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Label candidates with a hidden preference to produce a demonstration log.
    SynthDemos {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 100)]
        records: usize,
        /// Probability of flipping each label.
        #[arg(long, default_value_t = 0.1)]
        noise: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Fit the imitator on a demonstration log.
    TrainImitator {
        #[arg(long)]
        demos: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run the selection pipeline over every system turn and write a metrics report.
    Eval {
        #[arg(long)]
        model: PathBuf,
        /// Without one, every survivor is accepted.
        #[arg(long)]
        imitator: Option<PathBuf>,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Write the detector verdict for every generated candidate as JSONL.
    Annotate {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Chat in the terminal; an empty line ends the session.
    Chat {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        imitator: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Start the HTTP service.
    Serve {
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Draw mean reward and KL per epoch from a history file as SVG.
    PlotHistory {
        #[arg(long)]
        history: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::GenCorpus { seed, n, out, style } => {
            let mut synth = SynthConfig::new(seed, n);
            if let Style::Adversarial = style {
                synth.style = SynthStyle::Adversarial;
            }
            let corpus = generate_corpus(&synth);
            save_corpus(&corpus, &out)?;
            eprintln!(
                "wrote {} dialogues, {} system turns, vocabulary {}",
                corpus.len(),
                corpus.sys_turn_count(),
                corpus.vocab.len()
            );
            Ok(())
        }
        Command::TrainMle { corpus, out, val, config, epochs } => {
            let config = load_config(config.as_deref())?;
            let mut mle = config.mle;
            if let Some(e) = epochs {
                mle.epochs = e;
            }
            let train = load(&corpus)?;
            let val = val.as_deref().map(load).transpose()?;
            let (params, history) = train_mle(&train, val.as_ref(), &mle)?;
            if let Some(last) = history.last() {
                match last.val_ppl {
                    Some(v) => eprintln!("epoch {} train ppl {:.4} val ppl {v:.4}", last.epoch, last.train_ppl),
                    None => eprintln!("epoch {} train ppl {:.4}", last.epoch, last.train_ppl),
                }
            }
            Policy::new(params, train.vocab)?.save(&out)?;
            Ok(())
        }
        Command::Refine { baseline, corpus, config, out, val, history, seed } => {
            let config = load_config(config.as_deref())?;
            let mut trainer = config.trainer;
            if let Some(s) = seed {
                trainer.seed = s;
            }
            let baseline = Policy::load(&baseline)?;
            let full = load(&corpus)?;
            let (train, val) = match val {
                Some(v) => (full, load(&v)?),
                None => split_corpus(&full, TRAIN_FRACTION, trainer.seed)?,
            };
            eprintln!("refining on {} dialogues, validating on {}", train.len(), val.len());
            let outcome = refine(&baseline.params, &train, &val, &trainer, &config.decoding, &config.detector)?;
            for r in &outcome.history {
                eprintln!(
                    "epoch {:3} reward {:+.3} kl {:.5} val ppl {:.4} pass {:.3}",
                    r.epoch, r.mean_reward, r.kl, r.val_ppl, r.pass_rate
                );
            }
            eprintln!(
                "best epoch {} (baseline val ppl {:.4})",
                outcome.best_epoch, outcome.baseline_val_ppl
            );
            let history = history.unwrap_or_else(|| out.with_extension("history.jsonl"));
            write_jsonl(&history, &outcome.history)?;
            Policy::new(outcome.best, baseline.vocab)?.save(&out)?;
            Ok(())
        }
        Command::SynthDemos { model, corpus, out, records, noise, seed, config } => {
            let config = load_config(config.as_deref())?;
            let policy = Policy::load(&model)?;
            let corpus = load(&corpus)?;
            let demos = simulate_demonstrations(
                &policy,
                &corpus,
                &reference_preference(),
                noise,
                records,
                &config.decoding,
                &config.detector,
                seed,
            )?;
            let positives: usize = demos.iter().map(DemoRecord::positives).sum();
            eprintln!("wrote {} records, {positives} positive labels", demos.len());
            write_jsonl(&out, &demos)
        }
        Command::TrainImitator { demos, out, config, seed } => {
            let config = load_config(config.as_deref())?;
            let mut train = config.imitator;
            if let Some(s) = seed {
                train.seed = s;
            }
            let demos = load_demos(&demos)?;
            if demos.is_empty() {
                bail!("demonstration log is empty");
            }
            let (params, val_accuracy) = train_imitator(&demos, &train)?;
            eprintln!("{} records, validation accuracy {val_accuracy:.4}", demos.len());
            params.save(&out)?;
            Ok(())
        }
        Command::Eval { model, imitator, corpus, report, config, seed } => {
            let config = load_config(config.as_deref())?;
            let policy = Policy::load(&model)?;
            let imitator = load_imitator(imitator.as_deref())?;
            let corpus = load(&corpus)?;
            let metrics = eval_metrics(&policy, &imitator, &corpus, &config.decoding, &config.detector, seed)?;
            let json = serde_json::to_string_pretty(&metrics)?;
            fs::write(&report, format!("{json}\n")).with_context(|| format!("writing {}", report.display()))?;
            eprintln!(
                "ppl {:.4} pass {:.4} select {:.4} ooc {:.4}",
                metrics.ppl, metrics.pass_rate, metrics.select_rate, metrics.ooc_rate
            );
            Ok(())
        }
        Command::Annotate { corpus, model, out, config, seed } => {
            let config = load_config(config.as_deref())?;
            let policy = Policy::load(&model)?;
            let corpus = load(&corpus)?;
            check_vocab(&policy, &corpus)?;
            let mut rows = Vec::new();
            let mut k = 0u64;
            for d in &corpus.dialogues {
                for (turn_index, ctx) in d.sys_contexts() {
                    let n = config.decoding.n_candidates;
                    let candidates = policy.generate_n(&ctx, &config.decoding, n, derive_seed(seed, k))?;
                    k += 1;
                    for (candidate, c) in candidates.iter().enumerate() {
                        let a = annotate_response(&ctx, &c.utterance, c.acts, &config.detector);
                        rows.push(AnnotationRow {
                            dialogue_id: &d.id,
                            turn_index,
                            candidate,
                            text: c.utterance.text().to_string(),
                            acts: c.acts.iter().map(|a| a.name()).collect(),
                            status: a.status,
                            repetition: a.repetition,
                            assertions: a.assertions,
                            inconsistent: a.inconsistent,
                        });
                    }
                }
            }
            eprintln!("annotated {} candidates over {k} turns", rows.len());
            write_jsonl(&out, &rows)
        }
        Command::Chat { model, imitator, config, seed } => {
            let config = load_config(config.as_deref())?;
            let policy = Policy::load(&model)?;
            let imitator = load_imitator(imitator.as_deref())?;
            chat(&policy, &imitator, &config, seed)
        }
        Command::Serve { config } => {
            let config = load_config(config.as_deref())?;
            tracing_subscriber::fmt().with_writer(io::stderr).init();
            let runtime = tokio::runtime::Runtime::new()?;
            runtime
                .block_on(persuade_service::serve(config))
                .map_err(|e| anyhow::anyhow!(e))
        }
        Command::PlotHistory { history, out } => {
            let text = fs::read_to_string(&history).with_context(|| format!("reading {}", history.display()))?;
            let records = text
                .lines()
                .filter(|l| !l.trim().is_empty())
                .enumerate()
                .map(|(i, l)| {
                    serde_json::from_str::<EpochRecord>(l).with_context(|| format!("history line {}", i + 1))
                })
                .collect::<Result<Vec<_>>>()?;
            if records.is_empty() {
                bail!("history file is empty");
            }
            fs::write(&out, plot::history_svg(&records)).with_context(|| format!("writing {}", out.display()))?;
            Ok(())
        }
    }
}

#[derive(Serialize)]
struct AnnotationRow<'a> {
    dialogue_id: &'a str,
    turn_index: usize,
    candidate: usize,
    text: String,
    acts: Vec<&'static str>,
    status: CandidateStatus,
    repetition: RepetitionVerdict,
    assertions: Vec<SlotAssertion>,
    inconsistent: bool,
}

fn load_config(path: Option<&Path>) -> Result<Config> {
    Ok(Config::load(path)?)
}

fn load(path: &Path) -> Result<Corpus> {
    load_corpus(path).with_context(|| format!("loading corpus {}", path.display()))
}

fn load_imitator(path: Option<&Path>) -> Result<ImitatorParams> {
    Ok(match path {
        Some(p) => ImitatorParams::load(p)?,
        None => ImitatorParams::zeros(),
    })
}

fn check_vocab(policy: &Policy, corpus: &Corpus) -> Result<()> {
    // perplexity checks the vocabulary fingerprint without side effects
    perplexity(&policy.params, corpus).map(|_| ()).context("model and corpus disagree")
}

fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut out = Vec::new();
    for r in rows {
        serde_json::to_writer(&mut out, r)?;
        out.push(b'\n');
    }
    fs::write(path, out).with_context(|| format!("writing {}", path.display()))
}

fn chat(policy: &Policy, imitator: &ImitatorParams, config: &Config, seed: u64) -> Result<()> {
    let mut transcript: Vec<Turn> = Vec::new();
    let mut profiles = Profiles::default();
    let push = |transcript: &mut Vec<Turn>, profiles: &mut Profiles, turn: Turn| {
        let prev_sys = transcript
            .iter()
            .rev()
            .find(|t| t.role == Role::Sys)
            .map(|t| t.acts)
            .unwrap_or_else(ActSet::empty);
        *profiles = update_profiles(profiles, &turn, prev_sys);
        transcript.push(turn);
    };
    let stdin = io::stdin();
    let mut stdout = io::stdout();
    loop {
        let ctx = Context::new(&transcript, profiles.clone());
        let turn_seed = derive_seed(seed, transcript.len() as u64);
        let (chosen, trace) =
            select_response(policy, imitator, &ctx, &config.decoding, &config.detector, turn_seed)?;
        if trace.ooc {
            eprintln!("(every candidate failed the filter)");
        }
        writeln!(stdout, "SYS: {}", chosen.utterance.text())?;
        push(&mut transcript, &mut profiles, Turn::new(Role::Sys, chosen.utterance, chosen.acts));

        write!(stdout, "USR: ")?;
        stdout.flush()?;
        let mut line = String::new();
        if stdin.lock().read_line(&mut line)? == 0 || line.trim().is_empty() {
            return Ok(());
        }
        match Utterance::encode(line.trim(), &policy.vocab) {
            Ok(u) if u.word_len() > 0 => {
                push(&mut transcript, &mut profiles, Turn::classified(Role::Usr, u, &RuleClassifier));
            }
            _ => {
                eprintln!("(nothing recognizable in that line)");
                return Ok(());
            }
        }
    }
}
