//! `crisis-hmc` command-line entry point.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{ArgAction, CommandFactory, FromArgMatches, Parser, Subcommand};
use crisis_hmc::config::{documented_keys, parse_override, PipelineConfig};
use crisis_hmc::pipeline::{self, Command, CommandArgs, Manifest};
use crisis_hmc::Error;

const LOG_ENV: &str = "CRISIS_HMC_LOG";

#[derive(Parser, Debug)]
#[command(name = "crisis-hmc", version, about = "Entity-masked pre-training and hierarchical classification of crisis tweets")]
struct Cli {
    /// INI configuration, or a manifest.json to re-run.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Output directory.
    #[arg(long, global = true, value_name = "DIR", default_value = "out")]
    out: PathBuf,

    /// Seed for every random stream [default: 13].
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads; 1 gives bit-reproducible runs.
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Override a config key, e.g. `--set pretrain.lr=1e-3`.
    #[arg(long = "set", global = true, value_name = "SECT.KEY=VAL", action = ArgAction::Append)]
    set: Vec<String>,

    /// Leave labels without gold support out of macro averages.
    #[arg(long, global = true)]
    skip_zero_support: bool,

    #[command(subcommand)]
    command: Option<Cmd>,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Generate a synthetic corpus, split and gazetteer.
    Synth {
        /// Synthetic corpus spec (JSON); its seed is replaced by --seed.
        #[arg(long)]
        spec: Option<String>,
    },
    /// Annotate entities in the configured corpus.
    Annotate,
    /// Strict NER F1 of the configured annotator against gold spans.
    NerEval,
    /// Train the subword vocabulary on the fit split.
    Vocab,
    /// Adaptive masked-language-model pre-training.
    Pretrain,
    /// Fine-tune a classification head.
    Finetune {
        /// Start from this checkpoint instead of a fresh encoder.
        #[arg(long)]
        checkpoint: Option<String>,
    },
    /// Evaluate a fine-tuned checkpoint on dev and test.
    Evaluate {
        #[arg(long)]
        checkpoint: Option<String>,
    },
    /// Six-row component ablation.
    Ablate,
    /// TF-IDF + logistic regression baseline.
    Baseline,
    /// Full pipeline: annotate, encode, pre-train, fine-tune, evaluate.
    Run,
}

impl Cmd {
    fn split(&self) -> (Command, CommandArgs) {
        let args = |spec: &Option<String>, checkpoint: &Option<String>| CommandArgs { spec: spec.clone(), checkpoint: checkpoint.clone() };
        match self {
            Cmd::Synth { spec } => (Command::Synth, args(spec, &None)),
            Cmd::Annotate => (Command::Annotate, CommandArgs::default()),
            Cmd::NerEval => (Command::NerEval, CommandArgs::default()),
            Cmd::Vocab => (Command::Vocab, CommandArgs::default()),
            Cmd::Pretrain => (Command::Pretrain, CommandArgs::default()),
            Cmd::Finetune { checkpoint } => (Command::Finetune, args(&None, checkpoint)),
            Cmd::Evaluate { checkpoint } => (Command::Evaluate, args(&None, checkpoint)),
            Cmd::Ablate => (Command::Ablate, CommandArgs::default()),
            Cmd::Baseline => (Command::Baseline, CommandArgs::default()),
            Cmd::Run => (Command::Run, CommandArgs::default()),
        }
    }
}

fn keys_help() -> String {
    let keys = documented_keys();
    let width = keys.iter().map(|k| k.0.len()).max().unwrap_or(0);
    let mut s = String::from("Config keys (INI `[section]` + `key = value`, or --set section.key=value) and defaults:\n");
    for (k, v) in keys {
        s.push_str(&format!("  {k:width$}  {v}\n"));
    }
    s.push_str(&format!("\nEnvironment: {LOG_ENV} = error | info | debug (default info).\nExit codes: 0 ok, 1 invalid input or configuration, 2 runtime failure."));
    s
}

fn init_logging() -> Result<(), Error> {
    let level = std::env::var(LOG_ENV).unwrap_or_else(|_| "info".into());
    if !["error", "info", "debug"].contains(&level.as_str()) {
        return Err(Error::Config(format!("{LOG_ENV} must be error, info or debug, got `{level}`")));
    }
    let _ = env_logger::Builder::new().parse_filters(&level).format_timestamp(None).try_init();
    Ok(())
}

fn resolve(cli: &Cli) -> Result<(Command, PipelineConfig, CommandArgs), Error> {
    let mut overrides = cli.set.iter().map(|s| parse_override(s)).collect::<Result<Vec<_>, _>>()?;
    if let Some(seed) = cli.seed {
        overrides.push(("seed".into(), seed.to_string()));
    }
    if cli.skip_zero_support {
        overrides.push(("eval.skip_zero_support".into(), "true".into()));
    }
    let given = cli.command.as_ref().map(Cmd::split);
    match &cli.config {
        Some(path) if pipeline::is_manifest(path) => {
            let m = Manifest::load(path)?;
            let cfg = m.pipeline_config()?.with_overrides(&overrides)?;
            let (command, args) = match given {
                Some((c, a)) => (c, CommandArgs { spec: a.spec.or(m.args.spec.clone()), checkpoint: a.checkpoint.or(m.args.checkpoint.clone()) }),
                None => (m.command, m.args.clone()),
            };
            Ok((command, cfg, args))
        }
        other => {
            let (command, args) = given.ok_or_else(|| Error::Config("a command is required unless --config names a manifest".into()))?;
            let cfg = match other {
                Some(path) => PipelineConfig::load_ini(path, &overrides)?,
                None => PipelineConfig::default().with_overrides(&overrides)?,
            };
            Ok((command, cfg, args))
        }
    }
}

fn run(cli: Cli) -> Result<Manifest, Error> {
    init_logging()?;
    if let Some(t) = cli.threads {
        if t == 0 {
            return Err(Error::Config("--threads must be at least 1".into()));
        }
        crisis_hmc::parallel::configure_threads(t);
    }
    let (command, cfg, args) = resolve(&cli)?;
    log::info!("{command}: config {} -> {}", cfg.hash(), cli.out.display());
    pipeline::execute(command, &cfg, &args, Path::new(&cli.out))
}

fn main() -> ExitCode {
    let cmd = Cli::command().after_help(keys_help());
    let matches = match cmd.try_get_matches() {
        Ok(m) => m,
        Err(e) => {
            use clap::error::ErrorKind;
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(1);
        }
    };
    let out = cli.out.clone();
    match run(cli) {
        Ok(m) => {
            println!("{}", serde_json::to_string_pretty(&m.summary).unwrap_or_default());
            println!("manifest: {}", out.join(pipeline::MANIFEST_FILE).display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}
