//! Closed-form field sources for testing analysis code against exact answers.

use super::{FieldError, FieldSource};
use crate::geometry::ElectrodeRole;
use crate::math::{Point3, Vec3};

type UnitField = Box<dyn Fn(Point3) -> (f64, Vec3) + Send + Sync>;

/// Electrodes whose unit-voltage potential and field are given as functions.
pub struct AnalyticSource {
    names: Vec<String>,
    roles: Vec<ElectrodeRole>,
    fields: Vec<UnitField>,
    /// Points farther than this from the origin are reported out of region.
    pub extent: f64,
}

impl AnalyticSource {
    pub fn new(extent: f64) -> Self {
        AnalyticSource { names: Vec::new(), roles: Vec::new(), fields: Vec::new(), extent }
    }

    /// Add an electrode; `f` returns `(potential, field)` at 1 V.
    pub fn with(mut self, name: &str, role: ElectrodeRole, f: impl Fn(Point3) -> (f64, Vec3) + Send + Sync + 'static) -> Self {
        self.names.push(name.to_string());
        self.roles.push(role);
        self.fields.push(Box::new(f));
        self
    }

    /// Ideal linear quadrupole: rf potential `(x^2 - y^2) / (2 r0^2)` and a dc endcap
    /// potential `kz (z^2 - (x^2 + y^2) / 2)` (per volt).
    pub fn ideal_linear(r0: f64, kz: f64) -> Self {
        AnalyticSource::new(10.0 * r0)
            .with("rf", ElectrodeRole::Rf, move |p| {
                let c = 1.0 / (2.0 * r0 * r0);
                (c * (p.x * p.x - p.y * p.y), Vec3::new(-2.0 * c * p.x, 2.0 * c * p.y, 0.0))
            })
            .with("dc", ElectrodeRole::DcEndcap1, move |p| {
                (kz * (p.z * p.z - 0.5 * (p.x * p.x + p.y * p.y)), Vec3::new(kz * p.x, kz * p.y, -2.0 * kz * p.z))
            })
    }
}

impl FieldSource for AnalyticSource {
    fn electrode_names(&self) -> &[String] {
        &self.names
    }

    fn electrode_roles(&self) -> &[ElectrodeRole] {
        &self.roles
    }

    fn unit_fields(&self, p: Point3) -> Result<Vec<(f64, Vec3)>, FieldError> {
        if p.norm() > self.extent {
            return Err(FieldError::OutOfRegion(p.to_array()));
        }
        Ok(self.fields.iter().map(|f| f(p)).collect())
    }
}
