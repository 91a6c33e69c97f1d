//! Versioned JSON form of [`ParametricTrapParams`] with explicit units.

use serde::{Deserialize, Serialize};

use super::trap::{GroundFrame, ParametricTrapParams};
use super::GeometryError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGround {
    offset: f64,
    thickness: f64,
    half_height: f64,
    half_length: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawParams {
    schema_version: u32,
    length_unit: String,
    angle_unit: String,
    blade_length: f64,
    blade_tip_width: f64,
    blade_separation: f64,
    blade_depth: f64,
    blade_wedge_half_angle: f64,
    rf_blade_angle: f64,
    endcap_axial_gap: f64,
    trench_positions: Vec<f64>,
    #[serde(default)]
    ground_frame: Option<RawGround>,
    mesh_resolution: f64,
    mesh_grading: f64,
    mesh_max_edge: f64,
}

pub fn length_scale(unit: &str) -> Option<f64> {
    match unit {
        "m" => Some(1.0),
        "mm" => Some(1e-3),
        "um" | "µm" => Some(1e-6),
        "nm" => Some(1e-9),
        _ => None,
    }
}

fn angle_scale(unit: &str) -> Option<f64> {
    match unit {
        "rad" => Some(1.0),
        "deg" => Some(std::f64::consts::PI / 180.0),
        _ => None,
    }
}

/// Parse a trap config. Lengths and angles are converted to SI and the result validated.
pub fn params_from_json(text: &str) -> Result<ParametricTrapParams, GeometryError> {
    let raw: RawParams = serde_json::from_str(text).map_err(|e| GeometryError::Format(e.to_string()))?;
    if raw.schema_version != SCHEMA_VERSION {
        return Err(GeometryError::invalid(
            "schema_version",
            format!("unsupported version {} (expected {SCHEMA_VERSION})", raw.schema_version),
        ));
    }
    let l = length_scale(&raw.length_unit)
        .ok_or_else(|| GeometryError::invalid("length_unit", format!("unknown unit '{}'", raw.length_unit)))?;
    let a = angle_scale(&raw.angle_unit)
        .ok_or_else(|| GeometryError::invalid("angle_unit", format!("unknown unit '{}'", raw.angle_unit)))?;
    let p = ParametricTrapParams {
        blade_length: raw.blade_length * l,
        blade_tip_width: raw.blade_tip_width * l,
        blade_separation: raw.blade_separation * l,
        blade_depth: raw.blade_depth * l,
        blade_wedge_half_angle: raw.blade_wedge_half_angle * a,
        rf_blade_angle: raw.rf_blade_angle * a,
        endcap_axial_gap: raw.endcap_axial_gap * l,
        trench_positions: raw.trench_positions.iter().map(|z| z * l).collect(),
        ground_frame: raw.ground_frame.map(|g| GroundFrame {
            offset: g.offset * l,
            thickness: g.thickness * l,
            half_height: g.half_height * l,
            half_length: g.half_length * l,
        }),
        mesh_resolution: raw.mesh_resolution * l,
        mesh_grading: raw.mesh_grading,
        mesh_max_edge: raw.mesh_max_edge * l,
    };
    p.validate()?;
    Ok(p)
}

/// Serialize in SI units (meters, radians).
pub fn params_to_json(p: &ParametricTrapParams) -> String {
    let raw = RawParams {
        schema_version: SCHEMA_VERSION,
        length_unit: "m".into(),
        angle_unit: "rad".into(),
        blade_length: p.blade_length,
        blade_tip_width: p.blade_tip_width,
        blade_separation: p.blade_separation,
        blade_depth: p.blade_depth,
        blade_wedge_half_angle: p.blade_wedge_half_angle,
        rf_blade_angle: p.rf_blade_angle,
        endcap_axial_gap: p.endcap_axial_gap,
        trench_positions: p.trench_positions.clone(),
        ground_frame: p.ground_frame.map(|g| RawGround {
            offset: g.offset,
            thickness: g.thickness,
            half_height: g.half_height,
            half_length: g.half_length,
        }),
        mesh_resolution: p.mesh_resolution,
        mesh_grading: p.mesh_grading,
        mesh_max_edge: p.mesh_max_edge,
    };
    serde_json::to_string_pretty(&raw).expect("params serialize")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_preserves_values() {
        let p = ParametricTrapParams::default();
        let back = params_from_json(&params_to_json(&p)).unwrap();
        assert_eq!(p, back);
    }

    #[test]
    fn unknown_unit_and_version_rejected() {
        let text = params_to_json(&ParametricTrapParams::default());
        let bad = text.replace("\"m\"", "\"furlong\"");
        assert!(matches!(params_from_json(&bad), Err(GeometryError::InvalidParameter { field, .. }) if field == "length_unit"));
        let bad = text.replace("\"schema_version\": 1", "\"schema_version\": 9");
        assert!(matches!(params_from_json(&bad), Err(GeometryError::InvalidParameter { field, .. }) if field == "schema_version"));
    }
}
