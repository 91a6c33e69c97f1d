//! Report schemas. Reports carry no timestamps; `metadata` holds only the tool identity.

use serde::{Deserialize, Serialize};
use trapkit::characterization_fit::{Amplification, ComparisonReport, FitResult, ResonatorParams, SeriesKind};
use trapkit::dynamics::{Spectrum, TicklePoint};
use trapkit::evaporation::{EvaporationConfig, FacetReport};
use trapkit::trap_analysis::{DriveConfig, TrapCharacterization};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub tool: String,
    pub version: String,
}

impl Default for Metadata {
    fn default() -> Self {
        Metadata { tool: "trapkit".into(), version: env!("CARGO_PKG_VERSION").into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElectrodeSummary {
    pub name: String,
    pub role: String,
    pub triangles: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApertureReport {
    pub seed: u64,
    /// Electrode-limited NA along y (radial) and z (axial).
    pub radial_y: f64,
    pub axial_z: f64,
    /// Radial NA with the viewport stop added.
    pub viewport_na: f64,
    pub radial_y_with_viewport: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeometryReport {
    pub metadata: Metadata,
    pub config_sha256: String,
    pub geometry_sha256: String,
    pub triangle_count: usize,
    pub r0_m: f64,
    pub electrodes: Vec<ElectrodeSummary>,
    pub aperture: Option<ApertureReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub metadata: Metadata,
    pub geometry_sha256: String,
    pub cache_sha256: String,
    pub panels: usize,
    pub collocation_residual: f64,
    pub grid_nodes: Option<usize>,
}

/// Total ion energy on a plane through the rf null, eV relative to the null.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlaneGrid {
    pub center_m: [f64; 3],
    pub x_m: Vec<f64>,
    pub y_m: Vec<f64>,
    /// Row `j` holds the values at `y_m[j]`; `null` where the field is unavailable.
    pub energy_ev: Vec<Vec<Option<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CharacterizationReport {
    pub metadata: Metadata,
    pub cache_sha256: String,
    pub drive: DriveConfig,
    pub r0_m: f64,
    pub frequencies_hz: [Option<f64>; 3],
    pub radial_asymmetry: Option<f64>,
    pub depth_ev: Option<f64>,
    pub characterization: TrapCharacterization,
    pub pseudopotential_xy: Option<PlaneGrid>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub u_rf_v: f64,
    pub frequencies_hz: [Option<f64>; 3],
    pub mathieu_q: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub metadata: Metadata,
    pub drive: DriveConfig,
    pub points: Vec<SweepPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynamicsReport {
    pub metadata: Metadata,
    pub start_m: [f64; 3],
    pub duration_s: f64,
    pub dt_s: f64,
    pub axis: [f64; 3],
    pub secular_hz: f64,
    pub spectrum: Spectrum,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TickleReport {
    pub metadata: Metadata,
    pub electrode: String,
    pub amplitude_v: f64,
    pub peak_hz: Option<f64>,
    pub points: Vec<TicklePoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub metadata: Metadata,
    pub kind: SeriesKind,
    pub axis: usize,
    pub amplification: Option<f64>,
    pub result: FitResult,
    pub comparison: ComparisonReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResonatorReport {
    pub metadata: Metadata,
    pub params: ResonatorParams,
    pub amplification: Amplification,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrenchCheck {
    pub serif_isolated: bool,
    pub plain_isolated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaporationReport {
    pub metadata: Metadata,
    pub config: EvaporationConfig,
    pub threshold_m: f64,
    pub facets: FacetReport,
    pub components: usize,
    pub electrodes_isolated: bool,
    pub shorts: Vec<(String, String)>,
    pub trench: TrenchCheck,
}
