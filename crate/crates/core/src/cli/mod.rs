//! Command-line entry points: `synth`, `train`, `eval`, `gradcheck` and `table1`.
//!
//! Exit status is 0 on success, 1 when a check, metric or training run fails and
//! 2 for usage or configuration errors.

mod checks;
mod config;
mod experiment;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

pub use checks::{
    distinct_vector, format_table_value, gradcheck_suite, render_checks, render_table1, table1, urs_sweep, CheckRow,
    Table1Row, UrsSweep, GRAD_EPS, MODEL_TOLERANCE, OP_TOLERANCE, URS_TAUS,
};
pub use config::{ExperimentConfig, OUT_DIR_ENV};
pub use experiment::{
    describe, evaluate_checkpoint, load_data, run_experiment, summary, synth_to_file, write_outcome, AggregateReport,
    RunReport, TrainOutcome,
};

use crate::error::Error;
use crate::eval::{EvalConfig, GainKind, RankBy};
use crate::gradcore::OpTag;

pub const EXIT_FAILURE: u8 = 1;
pub const EXIT_USAGE: u8 = 2;

#[derive(Debug, Parser)]
#[command(name = "mtlds", version, about = "Multi-task learning with differentiable sorting")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset file from the `[synth]` section of a config.
    Synth {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output dataset file.
        #[arg(long)]
        out: PathBuf,
        /// Override the synth seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train one model per configured seed and write checkpoints and reports.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Output directory; takes precedence over the config and MTLDS_OUT_DIR.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Run this single seed instead of the configured list.
        #[arg(long)]
        seed: Option<u64>,
        /// `aggregate` or `task:NAME`.
        #[arg(long)]
        rank_by: Option<RankBy>,
    },
    /// Evaluate a checkpoint on a dataset file.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Take the `[eval]` section from this experiment config.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Comma-separated NDCG cutoffs.
        #[arg(long, value_delimiter = ',')]
        cutoffs: Option<Vec<usize>>,
        #[arg(long)]
        rank_by: Option<RankBy>,
        /// Use the binary final-task label as NDCG gain.
        #[arg(long)]
        final_gain: bool,
        /// Directory for `metrics.json`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the gradient-check suite and the URS property sweep.
    Gradcheck {
        /// Random vectors in the URS sweep.
        #[arg(long, default_value_t = 1000)]
        vectors: usize,
        /// Scale the analytic gradient of one op (negative control).
        #[arg(long, hide = true, value_parser = parse_op_tag)]
        corrupt: Option<OpTag>,
    },
    /// Print the aggregator demonstration table.
    Table1,
}

fn parse_op_tag(s: &str) -> Result<OpTag, String> {
    let tags = [
        ("add", OpTag::Add),
        ("sub", OpTag::Sub),
        ("mul_elem", OpTag::MulElem),
        ("matmul", OpTag::Matmul),
        ("scale", OpTag::Scale),
        ("neg", OpTag::Neg),
        ("abs", OpTag::Abs),
        ("log", OpTag::Log),
        ("sigmoid", OpTag::Sigmoid),
        ("relu", OpTag::Relu),
        ("softplus", OpTag::Softplus),
        ("softmax_rows", OpTag::SoftmaxRows),
        ("sum_all", OpTag::SumAll),
        ("max_rows", OpTag::MaxRows),
        ("gather_rows", OpTag::GatherRows),
        ("broadcast_row", OpTag::BroadcastRow),
        ("broadcast_col", OpTag::BroadcastCol),
        ("clip", OpTag::Clip),
        ("transpose", OpTag::Transpose),
    ];
    tags.iter().find(|(n, _)| *n == s).map(|(_, t)| *t).ok_or_else(|| format!("unknown op '{s}'"))
}

/// Exit status for an error: configuration and usage problems map to 2, everything else to 1.
pub fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config(_) | Error::InvalidArgument(_) => EXIT_USAGE,
        _ => EXIT_FAILURE,
    }
}

/// Runs a parsed command, printing results to stdout and errors to stderr.
pub fn run(cli: Cli) -> ExitCode {
    match dispatch(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn dispatch(command: Command) -> crate::Result<u8> {
    match command {
        Command::Synth { config, out, seed } => {
            let mut synth = match config {
                Some(path) => ExperimentConfig::load(path)?
                    .synth
                    .ok_or_else(|| Error::Config("config has no [synth] section".into()))?,
                None => Default::default(),
            };
            if let Some(seed) = seed {
                synth.seed = seed;
            }
            let stats = synth_to_file(&synth, &out)?;
            println!("wrote {} ({} impressions, {} samples)", out.display(), stats.impressions, stats.samples);
            let names = crate::data::default_task_names(synth.tasks);
            for (name, count) in names.iter().zip(&stats.positives) {
                println!("  {name:<10} {count} positives");
            }
            Ok(0)
        }
        Command::Train { config, out, seed, rank_by } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            cfg.apply_env();
            if let Some(out) = out {
                cfg.output_dir = out;
            }
            if let Some(seed) = seed {
                cfg.seeds = vec![seed];
            }
            if let Some(r) = rank_by {
                cfg.eval.rank_by = r;
            }
            let outcome = run_experiment(&cfg)?;
            write_outcome(&cfg, &outcome, &cfg.output_dir)?;
            print!("{}", summary(&outcome));
            println!("reports written to {}", cfg.output_dir.display());
            Ok(0)
        }
        Command::Eval { checkpoint, data, config, cutoffs, rank_by, final_gain, out } => {
            let mut eval = match config {
                Some(path) => ExperimentConfig::load(path)?.eval,
                None => EvalConfig::default(),
            };
            if let Some(c) = cutoffs {
                if c.is_empty() || c.contains(&0) {
                    return Err(Error::Config("cutoffs must be positive".into()));
                }
                eval.cutoffs = c;
            }
            if let Some(r) = rank_by {
                eval.rank_by = r;
            }
            if final_gain {
                eval.gain = GainKind::Final;
            }
            let report = evaluate_checkpoint(&checkpoint, &data, &eval)?;
            println!("{}", describe(&report));
            let dir = out.or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from));
            if let Some(dir) = dir {
                std::fs::create_dir_all(&dir)?;
                let json = serde_json::to_string_pretty(&report).map_err(|e| Error::Config(e.to_string()))?;
                std::fs::write(dir.join("metrics.json"), json + "\n")?;
            }
            Ok(0)
        }
        Command::Gradcheck { vectors, corrupt } => {
            let rows = gradcheck_suite(corrupt.map(|t| (t, 1.5)))?;
            let urs = urs_sweep(vectors, 1)?;
            print!("{}", render_checks(&rows, &urs));
            let ok = rows.iter().all(|r| r.passed) && urs.passed();
            Ok(if ok { 0 } else { EXIT_FAILURE })
        }
        Command::Table1 => {
            print!("{}", render_table1(&table1()?));
            Ok(0)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_flags() {
        let cli = Cli::try_parse_from(["mtlds", "train", "--config", "x.toml", "--seed", "4", "--rank-by", "task:purchase"])
            .unwrap();
        match cli.command {
            Command::Train { seed, rank_by, .. } => {
                assert_eq!(seed, Some(4));
                assert_eq!(rank_by, Some(RankBy::Task("purchase".into())));
            }
            other => panic!("{other:?}"),
        }
        assert!(Cli::try_parse_from(["mtlds", "train"]).is_err());
        assert!(Cli::try_parse_from(["mtlds", "gradcheck", "--corrupt", "nope"]).is_err());
    }

    #[test]
    fn error_exit_codes() {
        assert_eq!(exit_code(&Error::Config("x".into())), EXIT_USAGE);
        assert_eq!(exit_code(&Error::SchemaMismatch(vec!["tasks".into()])), EXIT_FAILURE);
        assert_eq!(exit_code(&Error::Divergence { epoch: 1, batch: 0, loss: f64::NAN }), EXIT_FAILURE);
    }
}
