use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use t2d_cli::{
    cmd_diarize, cmd_score, cmd_synth, cmd_train, CliError, CliResult, OracleSpeakers, RunConfig, HYP_RTTM, MODEL_CHECKPOINT,
};

#[derive(Parser)]
#[command(name = "t2d", version, about = "Speaker-attributed recognition and diarization on synthetic mixtures")]
struct Cli {
    /// JSON run configuration; unknown keys are rejected.
    #[arg(long, global = true, env = t2d_cli::CONFIG_ENV)]
    config: Option<PathBuf>,
    /// Worker threads for per-sample and per-chunk parallelism.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate train and test mixture datasets.
    Synth {
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        train_mixtures: Option<usize>,
        #[arg(long)]
        test_mixtures: Option<usize>,
    },
    /// Two-stage training; writes checkpoints and the loss log.
    Train {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        stage1_steps: Option<u64>,
        #[arg(long)]
        stage2_steps: Option<u64>,
    },
    /// Diarize and transcribe a dataset directory or one feature file.
    Diarize {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Dataset directory (synth root or split) or a `.f32` feature file.
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Fixed speaker count, or `ref` for each recording's reference count.
        #[arg(long)]
        oracle_speakers: Option<String>,
    },
    /// DER (and cpWER with transcripts) of hypothesis against reference.
    Score {
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long)]
        hyp: PathBuf,
        #[arg(long, requires = "hyp_transcript")]
        ref_transcript: Option<PathBuf>,
        #[arg(long, requires = "ref_transcript")]
        hyp_transcript: Option<PathBuf>,
        /// JSON report path.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_oracle(v: Option<&str>) -> CliResult<OracleSpeakers> {
    match v {
        None => Ok(OracleSpeakers::Config),
        Some("ref") => Ok(OracleSpeakers::Reference),
        Some(s) => match s.parse::<usize>() {
            Ok(k) if k > 0 => Ok(OracleSpeakers::Fixed(k)),
            _ => Err(CliError::Usage(format!("--oracle-speakers expects a positive count or `ref`, got {s:?}"))),
        },
    }
}

fn run(cli: Cli) -> CliResult<()> {
    if let Some(j) = cli.jobs {
        if j == 0 {
            return Err(CliError::Usage("--jobs must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new().num_threads(j).build_global().map_err(|e| CliError::Internal(e.to_string()))?;
    }
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::Synth { out, seed, train_mixtures, test_mixtures } => {
            if let Some(s) = seed {
                cfg.data.seed = s;
            }
            if let Some(n) = train_mixtures {
                cfg.data.train_mixtures = n;
            }
            if let Some(n) = test_mixtures {
                cfg.data.test_mixtures = n;
            }
            let out = out.unwrap_or(cfg.paths.data_dir.clone());
            let s = cmd_synth(&cfg, &out)?;
            println!("synth: {} train, {} test mixtures in {}", s.train_mixtures, s.test_mixtures, out.display());
        }
        Command::Train { data, out, seed, stage1_steps, stage2_steps } => {
            if let Some(s) = seed {
                cfg.train.seed = s;
            }
            if let Some(n) = stage1_steps {
                cfg.train.stage1_steps = n;
            }
            if let Some(n) = stage2_steps {
                cfg.train.stage2_steps = n;
            }
            let data = data.unwrap_or(cfg.paths.data_dir.clone());
            let out = out.unwrap_or(cfg.paths.model_dir.clone());
            let s = cmd_train(&cfg, &data, &out)?;
            println!("train: {} steps, final loss {:.6}, checkpoints in {}", s.steps, s.final_loss, out.display());
        }
        Command::Diarize { checkpoint, input, out, oracle_speakers } => {
            let oracle = parse_oracle(oracle_speakers.as_deref())?;
            let checkpoint = checkpoint.unwrap_or(cfg.paths.model_dir.join(MODEL_CHECKPOINT));
            let input = input.unwrap_or(cfg.paths.data_dir.clone());
            let out = out.unwrap_or(cfg.paths.output_dir.clone());
            let s = cmd_diarize(&cfg, &checkpoint, &input, &out, oracle)?;
            println!("diarize: {} recordings, {} segments in {}", s.recordings, s.segments, out.join(HYP_RTTM).display());
        }
        Command::Score { reference, hyp, ref_transcript, hyp_transcript, out } => {
            let tr = ref_transcript.as_deref().zip(hyp_transcript.as_deref());
            let (report, table) = cmd_score(&reference, &hyp, tr, out.as_deref())?;
            print!("{table}");
            if let Some(c) = report.overall_cpwer {
                println!("cpWER {:.2} ({} errors / {} words)", c.cpwer, c.errors, c.ref_words);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("t2d: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
