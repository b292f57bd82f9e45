//! Command-line driver. Exit codes: 0 success, 1 internal error, 2 usage
//! or configuration error.

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::error::{Error, Result};
use crate::pipeline::{run_all, run_cluster, run_detect, run_eval, run_orient, run_synth, run_train, summary_line, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "subcat", about = "Subcategory vehicle detection pipeline")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// JSON run configuration; built-in defaults when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override a setting, e.g. `--set cluster.b=4` (repeatable).
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub sets: Vec<String>,
    /// Worker threads; falls back to SUBCAT_WORKERS.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Group training instances into subcategories.
    Cluster,
    /// Train one model per subcategory and resolution.
    Train,
    /// Run the ensemble over the test split.
    Detect,
    /// Train the angle estimator and attach angles to detections.
    Orient,
    /// Score results against the test labels.
    Eval,
    /// Generate synthetic training and test splits.
    Synth,
    /// cluster, train, detect, orient and eval in sequence.
    All,
}

pub fn resolve_config(cli: &Cli) -> Result<RunConfig> {
    let base = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let mut cfg = base.with_overrides(&cli.sets)?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.out_dir = o.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn worker_count(cli: &Cli) -> Result<Option<usize>> {
    if let Some(w) = cli.workers {
        return Ok(Some(w));
    }
    match std::env::var("SUBCAT_WORKERS") {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Error::Config(format!("SUBCAT_WORKERS={v:?} is not a count"))),
        Err(_) => Ok(None),
    }
}

pub fn execute(command: Command, cfg: &RunConfig) -> Result<()> {
    match command {
        Command::Cluster => {
            let c = run_cluster(cfg)?;
            println!("{} samples in {} clusters", c.samples.len(), c.model.k);
        }
        Command::Train => {
            let b = run_train(cfg)?;
            println!("trained {} models", b.models.len());
        }
        Command::Detect => {
            let d = run_detect(cfg)?;
            let n: usize = d.iter().map(|(_, o)| o.detections.len()).sum();
            println!("{n} detections in {} images", d.len());
        }
        Command::Orient => {
            run_orient(cfg)?;
            println!("orientation written to {}", cfg.results_dir().display());
        }
        Command::Eval => println!("{}", summary_line(&run_eval(cfg)?)),
        Command::Synth => {
            run_synth(cfg)?;
            println!("wrote {} and {}", cfg.train_dir.display(), cfg.test_dir.display());
        }
        Command::All => println!("{}", summary_line(&run_all(cfg)?)),
    }
    Ok(())
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Io { .. } => 2,
        _ => 1,
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let result = (|| {
        let cfg = resolve_config(&cli)?;
        let workers = worker_count(&cli)?;
        let mut pool = rayon::ThreadPoolBuilder::new();
        if let Some(w) = workers {
            pool = pool.num_threads(w.max(1));
        }
        let pool = pool
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
        pool.install(|| execute(cli.command, &cfg))
    })();
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
