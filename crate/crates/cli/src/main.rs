//! `dsfnet`: generate synthetic ranking data, train, evaluate, probe, verify.

mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use dsfnet::data::{generate_stream, load_csv, partition_scenarios, save_csv};
use dsfnet::disentangle::DrVariant;
use dsfnet::evalkit::{fsl_attention, score, MetricReport};
use dsfnet::factorization::Dsfnet;
use dsfnet::training::{write_trace, Checkpoint, Trainer};
use dsfnet::verify::{gradcheck_suite, gradient_law_suite, lemma_suite, Report};

use config::RunConfig;

#[derive(Parser, Debug)]
#[command(name = "dsfnet", version, about = "Disentangled scenario factorization for multi-scenario ranking")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Debug, Default)]
struct Common {
    /// Flat `key = value` configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file, or the output directory for `train`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Input CSV.
    #[arg(long, global = true)]
    data: Option<PathBuf>,
    #[arg(long, global = true)]
    checkpoint: Option<PathBuf>,
    /// Regularizer variant.
    #[arg(long, global = true, value_parser = parse_variant)]
    variant: Option<DrVariant>,
    /// Number of factors (`train`) or frame size (`verify`).
    #[arg(long, global = true)]
    n: Option<usize>,
    /// Ambient dimension for `verify`.
    #[arg(long, global = true)]
    d: Option<usize>,
    #[arg(long, global = true, value_enum)]
    suite: Option<Suite>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic dataset to CSV.
    GenData(#[command(flatten)] Common),
    /// Train a model; writes checkpoint.json and trace.csv.
    Train(#[command(flatten)] Common),
    /// Print AUC, subset AUCs, and relative improvement for a checkpoint.
    Eval(#[command(flatten)] Common),
    /// Print the per-factor input attention matrix.
    Interpret(#[command(flatten)] Common),
    /// Run the equiangular-frame and gradient-law suites.
    Verify(#[command(flatten)] Common),
    /// Finite-difference checks of every analytic gradient.
    Gradcheck(#[command(flatten)] Common),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Suite {
    All,
    Lemma,
    Laws,
}

fn parse_variant(s: &str) -> Result<DrVariant, String> {
    s.parse().map_err(|e: dsfnet::Error| e.to_string())
}

/// Failures before any work starts exit 1; failures during work exit 2.
enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<dsfnet::Error> for Failure {
    fn from(e: dsfnet::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

fn usage(e: impl std::fmt::Display) -> Failure {
    Failure::Usage(e.to_string())
}

fn init_logging() -> Result<bool, Failure> {
    let (level, quiet) = match std::env::var("DSFNET_LOG").as_deref() {
        Err(_) | Ok("info") => (log::LevelFilter::Info, false),
        Ok("quiet") => (log::LevelFilter::Off, true),
        Ok("debug") => (log::LevelFilter::Debug, false),
        Ok(other) => return Err(usage(format!("DSFNET_LOG must be quiet, info or debug, got `{other}`"))),
    };
    env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp(None)
        .target(env_logger::Target::Stderr)
        .init();
    Ok(quiet)
}

/// File, then flags, then validation.
fn effective_config(c: &Common, is_train: bool) -> Result<RunConfig, Failure> {
    let mut cfg = match &c.config {
        Some(p) => RunConfig::from_file(p).map_err(|e| usage(format!("{}: {e}", p.display())))?,
        None => RunConfig::default(),
    };
    if let Some(seed) = c.seed {
        cfg.set("seed", &seed.to_string()).map_err(usage)?;
    }
    if let Some(v) = c.variant {
        cfg.train.dr.variant = v;
    }
    if is_train {
        if let Some(n) = c.n {
            cfg.factors = n;
        }
    }
    cfg.validate().map_err(usage)?;
    Ok(cfg)
}

fn require<'a>(p: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path, Failure> {
    p.as_deref().ok_or_else(|| usage(format!("missing required flag --{flag}")))
}

fn emit(text: &str, out: Option<&Path>) -> Result<(), Failure> {
    print!("{text}");
    if let Some(p) = out {
        std::fs::write(p, text).map_err(|e| Failure::Runtime(format!("{}: {e}", p.display())))?;
    }
    Ok(())
}

fn report_outcome(report: &Report, out: Option<&Path>) -> Result<(), Failure> {
    emit(&report.to_text(), out)?;
    if report.passed() {
        Ok(())
    } else {
        Err(Failure::Runtime("one or more checks failed".into()))
    }
}

fn gen_data(c: &Common, cfg: &RunConfig) -> Result<(), Failure> {
    let out = require(&c.out, "out")?;
    let data = generate_stream(&cfg.spec, cfg.groups, cfg.stream)?;
    at(out, save_csv(&data, out))?;
    log::info!("wrote {} rows to {}", data.len(), out.display());
    Ok(())
}

fn train(c: &Common, cfg: &RunConfig) -> Result<(), Failure> {
    let data = load_data(c)?;
    let dir = c.out.clone().unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&dir).map_err(dsfnet::Error::from)?;
    let model_cfg = cfg.model_config(data.feature_dim(), data.scenario_dim());
    let model = Dsfnet::new(model_cfg, &mut ChaCha8Rng::seed_from_u64(cfg.train.seed))?;
    log::info!(
        "training on {} rows, {} parameters, {} steps",
        data.len(),
        dsfnet::tensor::Parameters::num_params(&model.params),
        cfg.train.total_steps
    );
    let mut trainer = Trainer::new(model);
    let total = cfg.train.total_steps;
    let periodic = cfg.train.checkpoint_every > 0;
    let mut save_periodic = |ck: &Checkpoint| -> dsfnet::Result<()> {
        if periodic && ck.step < total {
            ck.save(&dir.join(format!("checkpoint_{:07}.json", ck.step)))?;
        }
        Ok(())
    };
    let outcome = trainer.train(&data, &cfg.train, Some(&mut save_periodic))?;
    trainer.checkpoint().save(&dir.join("checkpoint.json"))?;
    let trace = std::fs::File::create(dir.join("trace.csv")).map_err(dsfnet::Error::from)?;
    write_trace(&outcome.trace, std::io::BufWriter::new(trace))?;
    let f = outcome.final_loss;
    println!(
        "step {} bce {:.6} ncr {:.6e} cnc {:.6e} total {:.6}",
        trainer.step, f.bce, f.ncr, f.cnc, f.total
    );
    log::info!("wrote {} and {}", dir.join("checkpoint.json").display(), dir.join("trace.csv").display());
    Ok(())
}

fn at<T>(path: &Path, r: dsfnet::Result<T>) -> Result<T, Failure> {
    r.map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))
}

fn load_data(c: &Common) -> Result<dsfnet::data::Dataset, Failure> {
    let p = require(&c.data, "data")?;
    at(p, load_csv(p))
}

fn load_inputs(c: &Common) -> Result<(Checkpoint, dsfnet::data::Dataset), Failure> {
    let p = require(&c.checkpoint, "checkpoint")?;
    Ok((at(p, Checkpoint::load(p))?, load_data(c)?))
}

fn eval(c: &Common, cfg: &RunConfig) -> Result<(), Failure> {
    let (ck, data) = load_inputs(c)?;
    let scores = score(&ck.model, &ck.normalizer, &data)?;
    let partition = partition_scenarios(&data.scenario_ids, cfg.partition);
    let report = MetricReport::compute(&scores, &data.labels, &data.scenario_ids, &partition, cfg.baseline_auc)?;
    emit(&report.to_text(), c.out.as_deref())
}

fn interpret(c: &Common, cfg: &RunConfig) -> Result<(), Failure> {
    let (ck, data) = load_inputs(c)?;
    let att = fsl_attention(
        &ck.model,
        &ck.normalizer,
        &data,
        cfg.gate_threshold,
        cfg.samples_per_fsl,
        cfg.train.seed,
    )?;
    emit(&att.to_text(), c.out.as_deref())
}

fn verify(c: &Common) -> Result<(), Failure> {
    let d = c.d.unwrap_or(8);
    let ns: Vec<usize> = match c.n {
        Some(n) if n >= 2 => vec![n],
        Some(n) => return Err(usage(format!("--n must be at least 2, got {n}"))),
        None => (2..=7).collect(),
    };
    if ns.iter().any(|&n| n > d + 1) {
        return Err(usage(format!("no equiangular frame of {} vectors in dimension {d}", ns[0])));
    }
    let mut report = Report::default();
    let suite = c.suite.unwrap_or(Suite::All);
    if suite != Suite::Laws {
        report.extend(lemma_suite(&ns, d, 10)?);
    }
    if suite != Suite::Lemma {
        report.extend(gradient_law_suite()?);
    }
    report_outcome(&report, c.out.as_deref())
}

fn gradcheck(c: &Common) -> Result<(), Failure> {
    report_outcome(&gradcheck_suite(20, c.seed.unwrap_or(0))?, c.out.as_deref())
}

fn run(cli: Cli) -> Result<(), Failure> {
    let quiet = init_logging()?;
    let (common, name) = match &cli.command {
        Command::GenData(c) => (c, "gen-data"),
        Command::Train(c) => (c, "train"),
        Command::Eval(c) => (c, "eval"),
        Command::Interpret(c) => (c, "interpret"),
        Command::Verify(c) => (c, "verify"),
        Command::Gradcheck(c) => (c, "gradcheck"),
    };
    let cfg = effective_config(common, name == "train")?;
    if !quiet {
        eprintln!("# dsfnet {name}: effective configuration");
        for line in cfg.to_text().lines() {
            eprintln!("#   {line}");
        }
    }
    match &cli.command {
        Command::GenData(c) => gen_data(c, &cfg),
        Command::Train(c) => train(c, &cfg),
        Command::Eval(c) => eval(c, &cfg),
        Command::Interpret(c) => interpret(c, &cfg),
        Command::Verify(c) => verify(c),
        Command::Gradcheck(c) => gradcheck(c),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if e.use_stderr() => {
            let _ = e.print();
            return ExitCode::from(1);
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            eprintln!("run `dsfnet --help` for usage");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}
