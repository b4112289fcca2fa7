mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::RunConfig;
use error::CliError;

#[derive(Parser, Debug)]
#[command(name = "srnn", version, about = "Skipping RNN storyline summarization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Config file with `key = value` lines
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override any config key; repeatable
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(long, global = true)]
    data: Option<PathBuf>,
    #[arg(long, global = true)]
    train_data: Option<PathBuf>,
    #[arg(long, global = true)]
    model: Option<PathBuf>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    truth: Option<PathBuf>,
    #[arg(long, global = true)]
    album: Option<String>,
    /// Story length N
    #[arg(long, global = true)]
    n: Option<usize>,
    /// skip, noskip or diverse
    #[arg(long, global = true)]
    mode: Option<String>,
    /// subset or window
    #[arg(long, global = true)]
    prior: Option<String>,
    #[arg(long, global = true)]
    samples: Option<usize>,
    /// random, nn, fi, s-rnn, s-rnn-, d-rnn or rnn
    #[arg(long, global = true)]
    method: Option<String>,
    /// long or short
    #[arg(long, global = true)]
    horizon: Option<String>,
    /// Comma-separated story lengths for nsweep
    #[arg(long, global = true)]
    ns: Option<String>,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Generate a synthetic concept with planted storylines
    Gen,
    /// Train a model with stochastic EM
    Train,
    /// Best sampled storyline for every album
    Storyline,
    /// Storyline for one album
    Summarize,
    /// Next-image prediction with one method
    Predict,
    /// Prediction and recovery tables for all methods
    Eval,
    /// Export the storyline transition graph as DOT
    ExportGraph,
    /// Train and score one model per story length
    Nsweep,
}

impl Cli {
    fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut cfg = RunConfig::default();
        if let Some(path) = &self.config {
            cfg.apply_file(path)?;
        }
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| CliError::Validation(format!("--set expects KEY=VALUE, got `{kv}`")))?;
            cfg.set(k.trim(), v)?;
        }
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.to_string_lossy().into_owned());
        let flags = [
            ("seed", self.seed.map(|v| v.to_string())),
            ("threads", self.threads.map(|v| v.to_string())),
            ("data", path(&self.data)),
            ("train_data", path(&self.train_data)),
            ("model", path(&self.model)),
            ("out", path(&self.out)),
            ("truth", path(&self.truth)),
            ("album", self.album.clone()),
            ("n", self.n.map(|v| v.to_string())),
            ("mode", self.mode.clone()),
            ("prior", self.prior.clone()),
            ("samples", self.samples.map(|v| v.to_string())),
            ("method", self.method.clone()),
            ("horizon", self.horizon.clone()),
            ("ns", self.ns.clone()),
        ];
        for (k, v) in flags {
            if let Some(v) = v {
                cfg.set(k, &v)?;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn run(cli: &Cli) -> Result<String, CliError> {
    let cfg = cli.resolve()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    pool.install(|| match cli.command {
        Command::Gen => commands::gen(&cfg),
        Command::Train => commands::train_cmd(&cfg),
        Command::Storyline => commands::storyline(&cfg),
        Command::Summarize => commands::summarize(&cfg),
        Command::Predict => commands::predict(&cfg),
        Command::Eval => commands::eval(&cfg),
        Command::ExportGraph => commands::export_graph(&cfg),
        Command::Nsweep => commands::nsweep(&cfg),
    })
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
    match run(&cli) {
        Ok(msg) => {
            println!("{}", msg.trim_end());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
