//! Command-line front end for the coding benchmark: run an experiment
//! grid, run the ablation suite, inspect corpora, generate synthetic
//! corpora, and re-render reports from a finished run.

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use coi_core::assets::{builtin_assets, load_assets};
use coi_core::config::load_config;
use coi_core::metrics::{format_report, EvalReport};
use coi_core::runner::{run_ablation, run_experiment, RunOutcome};
use coi_core::synth::{generate_synthetic_corpus, write_corpus, SynthParams};
use coi_core::transcript::{corpus_stats, parse_corpus};
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(
    name = "coi-bench",
    version,
    about = "Valence coding benchmark for motivational-interviewing transcripts"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute the method-by-model grid described by a config file.
    Run { config: PathBuf },
    /// Execute the four-variant ablation suite for the same config.
    Ablate { config: PathBuf },
    /// Print corpus statistics as a table plus one JSON line.
    Stats { corpus: PathBuf },
    /// Generate a synthetic corpus file.
    Synth {
        /// Output corpus path (line-delimited records).
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 60)]
        sessions: usize,
        /// Utterances per session, alternating therapist/patient.
        #[arg(long, default_value_t = 40)]
        utterances: usize,
        /// Probability that a patient utterance embeds its cue phrase.
        #[arg(long = "cue-rate", default_value_t = 1.0)]
        cue_rate: f64,
        /// Gold-code mix as change,follow,sustain probabilities.
        #[arg(long, value_delimiter = ',', num_args = 3,
              default_values_t = [0.274, 0.598, 0.124])]
        mix: Vec<f64>,
        /// Directory with a cue table overriding the built-in one.
        #[arg(long)]
        asset_dir: Option<PathBuf>,
    },
    /// Re-render the summary table from a run directory's reports.
    Report { run_dir: PathBuf },
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().command {
        Command::Run { config } => {
            let config = load_config(&config)?;
            let outcome = run_experiment(&config)?;
            print_outcome(&outcome);
        }
        Command::Ablate { config } => {
            let config = load_config(&config)?;
            let outcome = run_ablation(&config)?;
            print_outcome(&outcome);
        }
        Command::Stats { corpus } => {
            let parsed = parse_corpus(&corpus)?;
            if parsed.rejected_count() > 0 {
                eprintln!("note: {} session(s) rejected during validation", parsed.rejected_count());
            }
            let stats = corpus_stats(&parsed.sessions);
            print!("{}", stats.render_table());
            println!("{}", serde_json::to_string(&stats)?);
        }
        Command::Synth {
            out,
            seed,
            sessions,
            utterances,
            cue_rate,
            mix,
            asset_dir,
        } => {
            let mix: [f64; 3] = mix
                .try_into()
                .map_err(|_| anyhow::anyhow!("--mix needs exactly three probabilities"))?;
            let assets = match asset_dir {
                Some(dir) => load_assets(&dir)?,
                None => builtin_assets(),
            };
            let params = SynthParams {
                seed,
                n_sessions: sessions,
                utterances_per_session: utterances,
                label_mix: mix,
                cue_rate,
            };
            let corpus = generate_synthetic_corpus(&params, &assets.cues)?;
            write_corpus(&corpus, &out)
                .with_context(|| format!("writing {}", out.display()))?;
            let patients: usize = corpus
                .iter()
                .map(|s| s.utterances.iter().filter(|u| u.gold_patient_code.is_some()).count())
                .sum();
            println!(
                "wrote {} session(s), {} gold-coded patient utterance(s) to {}",
                corpus.len(),
                patients,
                out.display()
            );
        }
        Command::Report { run_dir } => {
            let reports = read_reports(&run_dir)?;
            let scored: u64 = reports.iter().map(|r| r.n_scored).sum();
            println!("{}", format_report(&reports));
            if scored == 0 {
                bail!("no scored windows in {}", run_dir.display());
            }
        }
    }
    Ok(())
}

fn print_outcome(outcome: &RunOutcome) {
    println!(
        "{} support window(s), {} eval window(s)",
        outcome.n_support_windows, outcome.n_eval_windows
    );
    println!("{}", format_report(&outcome.reports));
    println!("artifacts under {}", outcome.run_dir.display());
}

fn read_reports(run_dir: &Path) -> Result<Vec<EvalReport>> {
    let path = run_dir.join("reports").join("reports.jsonl");
    let text = std::fs::read_to_string(&path)
        .with_context(|| format!("reading {}", path.display()))?;
    let mut reports = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let report: EvalReport = serde_json::from_str(line)
            .with_context(|| format!("{}:{}", path.display(), i + 1))?;
        reports.push(report);
    }
    Ok(reports)
}
