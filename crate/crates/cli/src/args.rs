use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "trapkit", version, about = "Miniature linear Paul trap toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build, inspect and validate electrode geometry.
    #[command(subcommand)]
    Geometry(GeometryCmd),
    /// Solve the boundary-element basis and write a field cache.
    Solve(SolveArgs),
    /// Characterize the trap from a field cache.
    Analyze(AnalyzeArgs),
    /// Ion trajectories and tickle scans.
    #[command(subcommand)]
    Dynamics(DynamicsCmd),
    /// Dc offsets cancelling stray charge.
    Compensate(CompensateArgs),
    /// Fit imperfection coefficients or estimate resonator gain.
    #[command(subcommand)]
    Fit(FitCmd),
    /// Metalization coverage and trench isolation.
    Evaporate(EvaporateArgs),
    /// Run stages from a project manifest.
    #[command(subcommand)]
    Pipeline(PipelineCmd),
    /// Turn a report into plain CSV curves and grids.
    Plotdata(PlotdataArgs),
}

#[derive(Debug, Subcommand)]
pub enum GeometryCmd {
    /// Mesh the parametric trap.
    Build {
        /// Parameter file (JSON); defaults to the bundled trap.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Also write an ASCII STL next to the output.
        #[arg(long)]
        stl: bool,
    },
    /// Electrode-limited numerical aperture.
    Na {
        #[arg(long)]
        geometry: PathBuf,
        #[arg(long, value_enum, default_value_t = Axis::Y)]
        axis: Axis,
        /// Add a viewport stop of this NA on the axis.
        #[arg(long)]
        viewport_na: Option<f64>,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check meshes for defects; nonzero exit if any are found.
    Validate {
        #[arg(long)]
        geometry: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub fn vec(self) -> trapkit::Vec3 {
        match self {
            Axis::X => trapkit::Vec3::X,
            Axis::Y => trapkit::Vec3::Y,
            Axis::Z => trapkit::Vec3::Z,
        }
    }
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    #[arg(long)]
    pub geometry: PathBuf,
    /// Cache file; relative paths resolve inside $TRAPKIT_CACHE_DIR when set.
    #[arg(long)]
    pub out: PathBuf,
    /// Also sample a grid of this half-width (um) around the center.
    #[arg(long, num_args = 3, value_names = ["X", "Y", "Z"])]
    pub grid_half_um: Option<Vec<f64>>,
    #[arg(long, default_value_t = 5.0)]
    pub grid_spacing_um: f64,
}

#[derive(Debug, Args, Clone)]
pub struct DriveArgs {
    /// Drive file (JSON); defaults to the bundled drive.
    #[arg(long)]
    pub drive: Option<PathBuf>,
    /// Override the rf amplitude, V.
    #[arg(long)]
    pub u_rf: Option<f64>,
    /// Ground this endcap (repeatable).
    #[arg(long = "short-endcap")]
    pub short_endcap: Vec<String>,
}

#[derive(Debug, Args)]
pub struct CacheArgs {
    #[arg(long)]
    pub cache: PathBuf,
    /// Geometry the cache must have been built from; mismatch is a stale-cache error.
    #[arg(long)]
    pub geometry: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[command(flatten)]
    pub cache: CacheArgs,
    #[command(flatten)]
    pub drive: DriveArgs,
    #[arg(long)]
    pub no_depth: bool,
    /// Points per side of the pseudopotential cross-section (0 disables it).
    #[arg(long, default_value_t = 41)]
    pub plane_points: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum DynamicsCmd {
    /// Integrate from the equilibrium plus a displacement; writes a trajectory CSV and a spectrum.
    Run {
        #[command(flatten)]
        cache: CacheArgs,
        #[command(flatten)]
        drive: DriveArgs,
        #[arg(long, num_args = 3, value_names = ["X", "Y", "Z"], default_values_t = [1.0, 1.0, 1.0])]
        displace_um: Vec<f64>,
        #[arg(long, default_value_t = 200.0)]
        duration_us: f64,
        #[arg(long, default_value_t = 40)]
        steps_per_cycle: usize,
        #[arg(long, value_enum, default_value_t = Axis::X)]
        axis: Axis,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Scan a small ac voltage on one electrode around a center frequency.
    Tickle {
        #[command(flatten)]
        cache: CacheArgs,
        #[command(flatten)]
        drive: DriveArgs,
        #[arg(long)]
        electrode: String,
        #[arg(long, default_value_t = 0.01)]
        amplitude_v: f64,
        #[arg(long)]
        center_khz: f64,
        #[arg(long, default_value_t = 0.1)]
        rel_half_width: f64,
        #[arg(long, default_value_t = 41)]
        points: usize,
        #[arg(long, default_value_t = 60.0)]
        cycles: f64,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct CompensateArgs {
    #[command(flatten)]
    pub cache: CacheArgs,
    #[command(flatten)]
    pub drive: DriveArgs,
    /// JSON list of charged patches.
    #[arg(long)]
    pub patches: PathBuf,
    /// Electrodes allowed to carry offsets (default: the radial blades).
    #[arg(long, value_delimiter = ',')]
    pub electrodes: Option<Vec<String>>,
    /// Also compare rf-resolved micromotion before and after.
    #[arg(long)]
    pub micromotion: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum FitCmd {
    /// Radial frequencies against rf input voltage.
    Radial {
        #[command(flatten)]
        fit: FitArgs,
        /// Radial axis of the simulation report (1 or 2).
        #[arg(long, default_value_t = 1)]
        axis: usize,
        /// Resonator amplification from input to trap voltage.
        #[arg(long, default_value_t = 1.0)]
        amplification: f64,
        /// Endcap voltage during the rf scan; default from the report's drive.
        #[arg(long)]
        u_dc: Option<f64>,
    },
    /// Axial frequency against endcap voltage.
    Axial {
        #[command(flatten)]
        fit: FitArgs,
    },
    /// Amplification of a helical resonator with uncertainty.
    Resonator {
        #[arg(long)]
        params: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// CSV with header voltage_V,omega_Hz,sigma_Hz (frequencies in Hz).
    #[arg(long)]
    pub data: PathBuf,
    /// Characterization report from `analyze`.
    #[arg(long)]
    pub sim: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaporateArgs {
    #[arg(long)]
    pub geometry: PathBuf,
    #[arg(long, default_value_t = 60.0)]
    pub tilt_deg: f64,
    #[arg(long, default_value_t = 360)]
    pub samples: usize,
    #[arg(long, default_value_t = 2000.0)]
    pub nominal_nm: f64,
    #[arg(long, value_enum, default_value_t = Axis::Z)]
    pub base_normal: Axis,
    #[arg(long)]
    pub two_sided: bool,
    #[arg(long, default_value_t = 50.0)]
    pub threshold_nm: f64,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum PipelineCmd {
    /// Write a manifest and the bundled configs into a project directory.
    Init {
        #[arg(long)]
        dir: PathBuf,
    },
    /// Run stages in dependency order.
    Run {
        #[arg(long)]
        manifest: PathBuf,
        /// Comma-separated subset of geometry,solve,analyze,sweep,evaporate.
        #[arg(long, value_delimiter = ',')]
        stages: Option<Vec<String>>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PlotKind {
    /// pseudopotential_xy.csv from a characterization report.
    Pseudopotential,
    /// omega_vs_Urf.csv from a sweep report.
    OmegaVsUrf,
    /// tickle.csv from a tickle report.
    Tickle,
}

#[derive(Debug, Args)]
pub struct PlotdataArgs {
    #[arg(long)]
    pub report: PathBuf,
    #[arg(long, value_enum)]
    pub kind: PlotKind,
    #[arg(long)]
    pub out_dir: PathBuf,
}
