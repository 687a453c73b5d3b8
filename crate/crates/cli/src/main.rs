use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use gradtree_cli::run::Overrides;
use gradtree_cli::{report, run, CliError, ExperimentConfig, Result};

/// Sampling, transforms, and pathology tests for integer gradient fields on
/// regular trees; experiments are described by one JSON config per run.
#[derive(Parser)]
#[command(name = "gradtree", version, about)]
struct Cli {
    /// Worker threads (overrides GRADTREE_THREADS; default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute every analysis in a config file and write a manifest.
    Run {
        config: PathBuf,
        /// Override the config's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the config's output directory.
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
    /// Render a one-page summary of a finished run.
    Report { manifest: PathBuf },
    /// Check a config file and list every problem found.
    Validate { config: PathBuf },
}

fn main() {
    match dispatch() {
        Ok(()) => {}
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(e.exit_code());
        }
    }
}

fn dispatch() -> Result<()> {
    let cli = Cli::parse();
    if let Some(n) = resolve_threads(cli.threads)? {
        // Only the first initialization wins; that is fine for one process.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match cli.command {
        Command::Run {
            config,
            seed,
            output_dir,
        } => {
            let (manifest, path) = run::run(&config, &Overrides { seed, output_dir })?;
            println!(
                "wrote {} ({} analyses, seed {})",
                path.display(),
                manifest.analyses.len(),
                manifest.seed
            );
            Ok(())
        }
        Command::Report { manifest } => {
            print!("{}", report::render(&manifest)?);
            Ok(())
        }
        Command::Validate { config } => {
            let (cfg, _) = ExperimentConfig::load(&config)?;
            let base = config.parent().unwrap_or(Path::new("."));
            let errors = cfg.validate(base);
            if !errors.is_empty() {
                return Err(CliError::Config(errors));
            }
            println!(
                "configuration OK: model {}, {} tree d = {} depth = {}, measure {}, {} analyses",
                cfg.model.kind,
                cfg.tree.kind,
                cfg.tree.d,
                cfg.tree.depth,
                cfg.measure.kind,
                cfg.analyses.len()
            );
            Ok(())
        }
    }
}

fn resolve_threads(flag: Option<usize>) -> Result<Option<usize>> {
    if flag.is_some() {
        return Ok(flag);
    }
    match std::env::var("GRADTREE_THREADS") {
        Ok(s) => s.parse().map(Some).map_err(|_| {
            CliError::Config(vec![format!(
                "GRADTREE_THREADS must be a positive integer, got {s:?}"
            )])
        }),
        Err(_) => Ok(None),
    }
}
