use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(
    name = "ptsw",
    version,
    about = "Exceptional points of a PT-symmetric two-qubit circuit QED model"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Full spectrum at one parameter point.
    Spectrum {
        #[command(flatten)]
        common: Common,
    },
    /// Tracked spectrum along a sweep of g or γ, with the EP2s found on it.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value_t = SweepAxis::G)]
        sweep: SweepAxis,
        /// Sweep start, in units of Ω.
        #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
        from: f64,
        /// Sweep end, in units of Ω.
        #[arg(long, default_value_t = 0.3)]
        to: f64,
        #[arg(long, default_value_t = 301)]
        steps: usize,
        /// Separate CSV file for the EP2 report (CSV format only).
        #[arg(long)]
        ep2_output: Option<PathBuf>,
    },
    /// Spectral class of the effective cubic over a (g, γ) grid.
    PhaseDiagram {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_parser = parse_range, default_value = "0:0.3")]
        g_range: (f64, f64),
        #[arg(long, value_parser = parse_range, default_value = "0:0.02")]
        gamma_range: (f64, f64),
        #[arg(long, value_enum, default_value_t = ModelArg::Approx)]
        model: ModelArg,
    },
    /// Locate the third-order exceptional point.
    Ep3 {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value_t = ModelArg::Approx)]
        model: ModelArg,
    },
    /// Effective-model energies against exact diagonalisation along g.
    Compare {
        #[command(flatten)]
        common: Common,
        /// Largest g, in units of Ω.
        #[arg(long, default_value_t = 0.3)]
        g_max: f64,
        #[arg(long, default_value_t = 61)]
        steps: usize,
    },
}

#[derive(Debug, Args)]
pub struct Common {
    /// Qubit tunnelling amplitude (absolute units); needs --epsilon.
    #[arg(long, requires = "epsilon", conflicts_with_all = ["theta_frac", "theta_rad"])]
    pub delta: Option<f64>,
    /// Qubit bias (absolute units); needs --delta.
    #[arg(long, requires = "delta", conflicts_with_all = ["theta_frac", "theta_rad"])]
    pub epsilon: Option<f64>,
    /// θ = π/N with Ω = 1.
    #[arg(long, conflicts_with = "theta_rad")]
    pub theta_frac: Option<f64>,
    /// θ in radians with Ω = 1.
    #[arg(long)]
    pub theta_rad: Option<f64>,
    #[arg(long, alias = "gamma", allow_negative_numbers = true)]
    pub gamma_over_omega: Option<f64>,
    #[arg(long, alias = "g", allow_negative_numbers = true)]
    pub g_over_omega: Option<f64>,
    /// ω_r/Ω; 1.07 unless the config file sets omega_r.
    #[arg(long)]
    pub omega_r_ratio: Option<f64>,
    /// Highest photon number kept.
    #[arg(long)]
    pub nmax: Option<usize>,
    /// Grid size as NxM: N points along g, M along γ.
    #[arg(long, value_parser = parse_grid, default_value = "61x41")]
    pub grid: (usize, usize),
    /// Worker threads; all cores by default.
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Artifact path; standard output when absent.
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
    /// TOML or JSON parameter file; flags override its entries.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SweepAxis {
    G,
    Gamma,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelArg {
    Approx,
    Full,
}

fn parse_grid(s: &str) -> Result<(usize, usize), String> {
    let (a, b) = s.split_once(['x', 'X']).ok_or("expected NxM")?;
    let n = a.trim().parse::<usize>().map_err(|e| e.to_string())?;
    let m = b.trim().parse::<usize>().map_err(|e| e.to_string())?;
    if n < 2 || m < 2 {
        return Err("grid needs at least 2 points per axis".into());
    }
    Ok((n, m))
}

fn parse_range(s: &str) -> Result<(f64, f64), String> {
    let (a, b) = s.split_once(':').ok_or("expected LO:HI")?;
    let lo = a.trim().parse::<f64>().map_err(|e| e.to_string())?;
    let hi = b.trim().parse::<f64>().map_err(|e| e.to_string())?;
    if !(lo < hi) {
        return Err("range must satisfy LO < HI".into());
    }
    Ok((lo, hi))
}
