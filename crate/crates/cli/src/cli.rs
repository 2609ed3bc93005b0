//! Command-line front end.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::config::{Overrides, PipelineConfig, ProviderKind};
use crate::demo::{write_demo, DemoScale};
use crate::error::{ExitStatus, PipelineError};
use crate::manifest::StageName;
use crate::pipeline::run_pipeline;

#[derive(Debug, Parser)]
#[command(name = "garment", version, about = "Garment deformation, evaluation, texturing and body fitting")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Pipeline configuration (JSON).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for every stage; overrides the file.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true, value_enum)]
    pub provider: Option<ProviderKind>,
    /// Embedding service URL; beats the environment and the file.
    #[arg(long, global = true)]
    pub endpoint: Option<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// All stages, or one stage and its dependencies.
    Pipeline {
        #[arg(long, value_enum)]
        stage: Option<StageName>,
    },
    /// Normalize the base and align the guide to it.
    Align,
    /// Deform the base toward the guide.
    Deform,
    /// Score the deformed mesh from 36 views.
    Evaluate,
    /// Backproject the view images into a UV texture.
    Texture,
    /// Fit the body model under the deformed garment.
    Fit,
    /// Write example inputs and a configuration.
    Demo {
        /// Target directory.
        #[arg(long)]
        out: PathBuf,
        /// Small budgets that finish in seconds.
        #[arg(long)]
        quick: bool,
    },
}

impl Command {
    fn target(&self) -> Option<StageName> {
        match self {
            Command::Pipeline { stage } => *stage,
            Command::Align => Some(StageName::Align),
            Command::Deform => Some(StageName::Deform),
            Command::Evaluate => Some(StageName::Evaluate),
            Command::Texture => Some(StageName::Texture),
            Command::Fit => Some(StageName::Fit),
            Command::Demo { .. } => None,
        }
    }
}

fn execute(cli: &Cli) -> Result<(), PipelineError> {
    if let Command::Demo { out, quick } = &cli.command {
        let path = write_demo(out, if *quick { DemoScale::Quick } else { DemoScale::Full })?;
        println!("wrote {}", path.display());
        return Ok(());
    }
    let path = cli.config.as_ref().ok_or_else(|| PipelineError::Validation("--config is required".into()))?;
    let overrides = Overrides { seed: cli.seed, provider: cli.provider, endpoint: cli.endpoint.clone() };
    let config = PipelineConfig::load(path, &overrides)?;
    let manifest = run_pipeline(&config, cli.command.target())?;
    for r in &manifest.stages {
        println!("{:<9} {:<10} {:>8.2}s", r.stage.as_str(), format!("{:?}", r.status).to_lowercase(), r.wall_time_seconds);
    }
    Ok(())
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitStatus::Validation.code() } else { ExitStatus::Success.code() };
        }
    };
    match execute(&cli) {
        Ok(()) => ExitStatus::Success.code(),
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            e.exit_status().code()
        }
    }
}
