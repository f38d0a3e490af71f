use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use tagnet::pipeline::{self, RunOptions};
use tagnet::PipelineConfig;

#[derive(Parser)]
#[command(name = "pipeline", version, about = "Temporally aligned tag co-occurrence maps")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full pipeline from a config file.
    Run {
        /// TOML configuration file.
        #[arg(long)]
        config: PathBuf,
        /// Output directory for all artifacts.
        #[arg(long)]
        out: PathBuf,
        /// Override the config's random seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Omit wall-clock timings so repeated runs are byte-identical.
        #[arg(long)]
        deterministic: bool,
        /// Worker thread count (default: all cores).
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Re-render density maps from an exported 2D frames CSV.
    Render {
        /// frames_final.csv from a previous run.
        #[arg(long)]
        frames: PathBuf,
        /// Output directory for the SVG maps.
        #[arg(long)]
        out: PathBuf,
        /// Cells per grid axis.
        #[arg(long, default_value_t = 256)]
        resolution: usize,
    },
    /// Recompute cluster metrics from exported layers and cluster labels.
    Metrics {
        /// Directory of per-layer JSON exports.
        #[arg(long)]
        layers: PathBuf,
        /// clusters.csv from a previous run.
        #[arg(long)]
        clusters: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cli: Cli) -> Result<(), pipeline::PipelineError> {
    match cli.command {
        Command::Run {
            config,
            out,
            seed,
            deterministic,
            threads,
        } => {
            if let Some(n) = threads {
                // A duplicate initialization only matters in tests; ignore it.
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
            let config = PipelineConfig::load(&config)?;
            let summary = pipeline::run_pipeline(
                &config,
                &RunOptions {
                    out_dir: out,
                    seed,
                    deterministic,
                },
            )?;
            for warning in &summary.warnings {
                eprintln!("warning: {warning}");
            }
            println!(
                "done: {} layers, {} links, {} clusters -> {}",
                summary.counts.layers,
                summary.counts.links,
                summary.counts.clusters,
                summary.manifest_path.display()
            );
            Ok(())
        }
        Command::Render {
            frames,
            out,
            resolution,
        } => {
            let written = pipeline::render_from_csv(&frames, &out, resolution)?;
            println!("rendered {} maps to {}", written.len(), out.display());
            Ok(())
        }
        Command::Metrics { layers, clusters } => {
            let rows = pipeline::metrics_from_artifacts(&layers, &clusters)?;
            let stdout = std::io::stdout();
            pipeline::write_metrics_csv(&rows, stdout.lock()).map_err(|source| {
                pipeline::PipelineError::Io {
                    path: PathBuf::from("<stdout>"),
                    source,
                }
            })?;
            Ok(())
        }
    }
}
