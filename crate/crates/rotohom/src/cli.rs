use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "rotohom", version, about = "Two-photon interference in a rotating frame")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// JSON run configuration; defaults apply to anything left out.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides `noise.rng_seed`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "rotohom-out")]
    pub out: PathBuf,
    #[arg(long, global = true, value_enum, default_value_t = Format::Both)]
    pub format: Format,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Svg,
    Both,
}

impl Format {
    pub fn csv(self) -> bool {
        matches!(self, Format::Csv | Format::Both)
    }

    pub fn svg(self) -> bool {
        matches!(self, Format::Svg | Format::Both)
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Coincidence level over a rotation × delay grid.
    Landscape,
    /// One noisy delay scan at a fixed rotation.
    Scan {
        /// Signed rotation frequency (Hz).
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        rotation_hz: f64,
    },
    /// A campaign of stepped rotation sequences, alternating direction.
    Sequence {
        /// Overrides `sequence.count`.
        #[arg(long)]
        count: Option<usize>,
    },
    /// Feature amplitudes, sinusoid fits and half-period histogram of traces.
    Analyze {
        /// Trace CSV files or directories containing them.
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
    /// Power-law fit of measured against set rotation frequency.
    Calibrate {
        /// CSV with columns `set_hz,actual_hz`.
        input: PathBuf,
    },
    /// Closed forms against quadrature, plus model invariants.
    Validate,
}
