//! Electrode geometry: meshes, the parametric blade trap, ray casting, numerical
//! aperture and over-etch compensation.

pub mod aperture;
pub mod config;
pub mod io;
pub mod mesh;
pub mod overetch;
pub mod primitives;
pub mod raycast;
pub mod trap;

pub use aperture::{numerical_aperture, CircularStop, NaSampling};
pub use config::{params_from_json, params_to_json};
pub use mesh::{validate_mesh, MeshDefect, SurfaceMesh};
pub use overetch::{apply_overetch_offset, DepthFrame, LinearOveretch};
pub use trap::{build_linear_trap, Electrode, ElectrodeRole, GroundFrame, ParametricTrapParams, TrapGeometry};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GeometryError {
    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParameter { field: String, reason: String },
    #[error("electrode `{electrode}` has mesh defects: {defects:?}")]
    InvalidMesh { electrode: String, defects: Vec<MeshDefect> },
    #[error("origin lies inside electrode `{0}`")]
    OriginInsideElectrode(String),
    #[error("offset surface self-intersects at triangle pairs {0:?}")]
    SelfIntersection(Vec<(usize, usize)>),
    #[error("format error: {0}")]
    Format(String),
}

impl GeometryError {
    pub fn invalid(field: &str, reason: impl Into<String>) -> Self {
        GeometryError::InvalidParameter { field: field.to_string(), reason: reason.into() }
    }
}
