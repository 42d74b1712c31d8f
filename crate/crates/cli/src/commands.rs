use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use grc_attn::config::RunConfig;
use grc_attn::mechanism::AttentionKind;
use grc_attn::metrics::sweep_threshold;
use grc_attn::model::{load_checkpoint, save_checkpoint, Model};
use grc_attn::run::{self, matrix_csv, matrix_pgm};
use grc_attn::verify::{verify, Fault, VerifyOptions};
use grc_attn::Error;

#[derive(Debug, Parser)]
#[command(name = "grc-attn", version, about = "Train, verify and sweep softmax-free attention models")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a model; writes checkpoint.bin, loss.csv and config.json.
    Train(RunArgs),
    /// Run the randomized invariant suite.
    Verify(VerifyArgs),
    /// Online decoding of the dev split at each threshold; writes sweep.csv and sweep.jsonl.
    Sweep(ModelArgs),
    /// Attention weights and gates of one decoded utterance as CSV and PGM.
    DumpAttention(DumpArgs),
    /// Decode the dev split; writes decode.jsonl.
    Decode(ModelArgs),
}

#[derive(Debug, Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the configured output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ModelArgs {
    #[command(flatten)]
    run: RunArgs,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Comma-separated thresholds; replaces the configured list.
    #[arg(long, value_delimiter = ',', num_args = 0..)]
    nu: Option<Vec<f64>>,
}

#[derive(Debug, Args)]
struct DumpArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    utterance: usize,
}

#[derive(Debug, Args)]
struct VerifyArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1000)]
    trials: usize,
    /// Also write report.json here.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Self-test: corrupt one side of the duality check.
    #[arg(long, hide = true)]
    inject_fault: bool,
}

#[derive(Debug, thiserror::Error)]
pub enum Failure {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Verification(String),
    #[error("{0}")]
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) | Error::Checkpoint { .. } => Failure::Usage(e.to_string()),
            _ => Failure::Runtime(e.to_string()),
        }
    }
}

type Outcome = Result<(), Failure>;

pub fn run(cli: Cli) -> Outcome {
    match cli.command {
        Command::Train(a) => train(&a),
        Command::Verify(a) => verify_cmd(&a),
        Command::Sweep(a) => sweep(&a),
        Command::DumpAttention(a) => dump(&a),
        Command::Decode(a) => decode(&a),
    }
}

/// The effective config: file contents with command-line overrides applied.
fn load_config(args: &RunArgs, adjust: impl FnOnce(&mut RunConfig)) -> Result<(RunConfig, PathBuf), Failure> {
    let mut cfg = RunConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &args.out {
        cfg.out = Some(out.clone());
    }
    adjust(&mut cfg);
    cfg.validate()?;
    let out = cfg
        .out
        .clone()
        .ok_or_else(|| Failure::Usage("no output directory: pass --out or set \"out\"".into()))?;
    fs::create_dir_all(&out).map_err(|e| io_failure(&out, e))?;
    write(&out, "config.json", cfg.to_json()?.as_bytes())?;
    Ok((cfg, out))
}

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure::Runtime(format!("{}: {e}", path.display()))
}

fn write(dir: &Path, name: &str, bytes: &[u8]) -> Outcome {
    let path = dir.join(name);
    fs::write(&path, bytes).map_err(|e| io_failure(&path, e))
}

fn load_model(cfg: &RunConfig, path: &Path) -> Result<Model, Failure> {
    let model = load_checkpoint(path)?;
    run::check_model_matches(cfg, &model)?;
    Ok(model)
}

fn train(args: &RunArgs) -> Outcome {
    let (cfg, out) = load_config(args, |_| {})?;
    let outcome = run::train(&cfg, |s| {
        eprintln!(
            "epoch {:>3}  train_ce {:.5}  dev_ce {:.5}",
            s.epoch + 1,
            s.train_ce,
            s.dev_ce
        );
    })?;
    write(&out, "loss.csv", run::curve_csv(&outcome.curve)?.as_bytes())?;
    save_checkpoint(&outcome.model, &out.join("checkpoint.bin"))?;
    Ok(())
}

fn verify_cmd(args: &VerifyArgs) -> Outcome {
    if args.trials == 0 {
        return Err(Failure::Usage("--trials must be at least 1".into()));
    }
    let report = verify(&VerifyOptions {
        seed: args.seed,
        trials: args.trials,
        fault: args.inject_fault.then_some(Fault::FlipGateSign),
    })?;
    for c in &report.checks {
        println!(
            "{:<18} {:>4}  max_error {:.3e}  tolerance {:.0e}  {}",
            c.name,
            c.instances,
            c.max_error,
            c.tolerance,
            if c.passed { "ok" } else { "FAIL" }
        );
    }
    if let Some(out) = &args.out {
        fs::create_dir_all(out).map_err(|e| io_failure(out, e))?;
        let mut json = serde_json::to_string_pretty(&report).map_err(Error::from)?;
        json.push('\n');
        write(out, "report.json", json.as_bytes())?;
    }
    let failure = report.failures().next().map(|c| {
        format!(
            "{} failed: error {:e} above {:e}, replay with --seed {} --trials 1",
            c.name, c.max_error, c.tolerance, c.worst_seed
        )
    });
    failure.map_or(Ok(()), |m| Err(Failure::Verification(m)))
}

fn sweep(args: &ModelArgs) -> Outcome {
    if args.nu.as_ref().is_some_and(|nu| nu.is_empty()) {
        return Err(Failure::Usage("--nu needs at least one threshold".into()));
    }
    let (cfg, out) = load_config(&args.run, |cfg| {
        if let Some(nu) = &args.nu {
            cfg.nu = nu.clone();
        }
    })?;
    if cfg.attention != AttentionKind::DecGrc {
        return Err(Failure::Usage(format!(
            "threshold sweeps need a decgrc model, config has {}",
            cfg.attention
        )));
    }
    if cfg.nu.is_empty() {
        return Err(Failure::Usage("no thresholds: pass --nu or set \"nu\"".into()));
    }
    let model = load_model(&cfg, &args.checkpoint)?;
    let dev = cfg.dev_set()?;
    let result = sweep_threshold(&model, &dev, &cfg.nu, cfg.decode.max_len, cfg.frame_period)?;
    write(&out, "sweep.csv", result.to_csv()?.as_bytes())?;
    write(&out, "sweep.jsonl", result.to_jsonl()?.as_bytes())?;
    for row in &result.rows {
        println!(
            "nu {:<8} wer {:.4}  al {:.3} frames  endpoint_fraction {:.3}",
            row.nu, row.wer, row.al_frames, row.endpoint_fraction
        );
    }
    Ok(())
}

fn decode(args: &ModelArgs) -> Outcome {
    let nu = match args.nu.as_deref() {
        None => None,
        Some([nu]) => Some(*nu),
        Some(_) => return Err(Failure::Usage("decode takes a single --nu value".into())),
    };
    let (cfg, out) = load_config(&args.run, |cfg| {
        if nu.is_some() {
            cfg.decode.nu = nu;
        }
    })?;
    let model = load_model(&cfg, &args.checkpoint)?;
    let report = run::decode_set(&model, &cfg.dev_set()?, &cfg.decode)?;
    write(&out, "decode.jsonl", report.to_jsonl()?.as_bytes())?;
    println!("utterances {}  wer {:.4}", report.records.len(), report.wer);
    Ok(())
}

fn dump(args: &DumpArgs) -> Outcome {
    let (cfg, out) = load_config(&args.model.run, |_| {})?;
    let model = load_model(&cfg, &args.model.checkpoint)?;
    let ex = run::utterance(&cfg, args.utterance)?;
    let dump = run::dump_attention(&model, &ex, &cfg.decode)?;
    write(&out, "attention.csv", matrix_csv(&dump.weights).as_bytes())?;
    write(&out, "attention.pgm", &matrix_pgm(&dump.weights))?;
    if let Some(g) = &dump.gates {
        write(&out, "gates.csv", matrix_csv(g).as_bytes())?;
        write(&out, "gates.pgm", &matrix_pgm(g))?;
    }
    let tokens = serde_json::json!({
        "id": dump.id,
        "reference": dump.reference,
        "tokens": dump.tokens,
    });
    write(&out, "tokens.json", format!("{tokens}\n").as_bytes())?;
    Ok(())
}
