//! Binary basis cache.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! magic        8 bytes  "TRAPBEM\0"
//! version      u32
//! electrodes   u32 count, then per electrode: u32 name length, UTF-8 name, u8 role
//! panels       u64 count, then per panel: 9 x f64 vertex coordinates, u32 owner
//! sigma        electrodes x panels f64 (C/m^2 per volt), electrode-major
//! grid flag    u8 (0 or 1)
//! grid         3 x f64 origin, 3 x f64 spacing, 3 x u64 dims, u32 channels,
//!              nodes x channels x 4 f64 (potential, Ex, Ey, Ez)
//! ```
//!
//! A JSON sidecar describes the same content for humans and tooling.

use serde::{Deserialize, Serialize};

use super::grid::{FieldGrid, GridData};
use super::kernel::Panel;
use super::{BasisFieldSet, BasisSolution, FieldError, PanelSystem};
use crate::geometry::ElectrodeRole;
use crate::math::Vec3;

pub const MAGIC: &[u8; 8] = b"TRAPBEM\0";
pub const VERSION: u32 = 1;

const ROLES: [ElectrodeRole; 7] = [
    ElectrodeRole::Rf,
    ElectrodeRole::RfGround,
    ElectrodeRole::DcEndcap1,
    ElectrodeRole::DcEndcap2,
    ElectrodeRole::DcEndcap3,
    ElectrodeRole::DcEndcap4,
    ElectrodeRole::Ground,
];

/// Sidecar metadata written next to a binary cache.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheSidecar {
    pub format: String,
    pub version: u32,
    pub electrodes: Vec<SidecarElectrode>,
    pub panel_count: usize,
    pub grid: Option<SidecarGrid>,
    /// Free-form provenance supplied by the writer (e.g. input hashes, resolution).
    pub source: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SidecarElectrode {
    pub name: String,
    pub role: ElectrodeRole,
    pub total_charge_c_per_v: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SidecarGrid {
    pub origin_m: [f64; 3],
    pub spacing_m: [f64; 3],
    pub dims: [usize; 3],
}

pub fn sidecar(set: &BasisFieldSet, grid: Option<&FieldGrid>, source: serde_json::Value) -> CacheSidecar {
    CacheSidecar {
        format: "trapkit-basis-cache".into(),
        version: VERSION,
        electrodes: set
            .system
            .names
            .iter()
            .zip(&set.system.roles)
            .enumerate()
            .map(|(k, (n, r))| SidecarElectrode { name: n.clone(), role: *r, total_charge_c_per_v: set.total_charge(k) })
            .collect(),
        panel_count: set.system.len(),
        grid: grid.map(|g| SidecarGrid { origin_m: g.data.origin.to_array(), spacing_m: g.data.spacing, dims: g.data.dims }),
        source,
    }
}

pub fn encode(set: &BasisFieldSet, grid: Option<&FieldGrid>) -> Vec<u8> {
    let sys = &set.system;
    let mut out = Vec::with_capacity(64 + sys.len() * (80 + 8 * sys.names.len()));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(sys.names.len() as u32).to_le_bytes());
    for (name, role) in sys.names.iter().zip(&sys.roles) {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(ROLES.iter().position(|r| r == role).unwrap() as u8);
    }
    out.extend_from_slice(&(sys.len() as u64).to_le_bytes());
    for (p, o) in sys.panels.iter().zip(&sys.owner) {
        for v in p.v {
            for c in v.to_array() {
                out.extend_from_slice(&c.to_le_bytes());
            }
        }
        out.extend_from_slice(&(*o as u32).to_le_bytes());
    }
    for s in &set.solutions {
        for v in &s.sigma {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    match grid {
        None => out.push(0),
        Some(g) => {
            out.push(1);
            let d = &g.data;
            for c in d.origin.to_array().iter().chain(&d.spacing) {
                out.extend_from_slice(&c.to_le_bytes());
            }
            for n in d.dims {
                out.extend_from_slice(&(n as u64).to_le_bytes());
            }
            out.extend_from_slice(&(d.channels as u32).to_le_bytes());
            for v in &d.values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], FieldError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| FieldError::Cache("truncated cache".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8, FieldError> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32, FieldError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64, FieldError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64, FieldError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn vec3(&mut self) -> Result<Vec3, FieldError> {
        Ok(Vec3::new(self.f64()?, self.f64()?, self.f64()?))
    }
}

pub fn decode(bytes: &[u8]) -> Result<(BasisFieldSet, Option<FieldGrid>), FieldError> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(FieldError::Cache("not a basis cache (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(FieldError::Cache(format!("unsupported cache version {version}")));
    }
    let ne = r.u32()? as usize;
    let mut names = Vec::with_capacity(ne);
    let mut roles = Vec::with_capacity(ne);
    for _ in 0..ne {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?).map_err(|_| FieldError::Cache("bad electrode name".into()))?;
        names.push(name.to_string());
        let role = *ROLES.get(r.u8()? as usize).ok_or_else(|| FieldError::Cache("bad role".into()))?;
        roles.push(role);
    }
    let np = r.u64()? as usize;
    if np.saturating_mul(76) > bytes.len() {
        return Err(FieldError::Cache("truncated cache".into()));
    }
    let mut panels = Vec::with_capacity(np);
    let mut owner = Vec::with_capacity(np);
    for _ in 0..np {
        let v = [r.vec3()?, r.vec3()?, r.vec3()?];
        panels.push(Panel::new(v));
        let o = r.u32()? as usize;
        if o >= ne {
            return Err(FieldError::Cache("panel owner out of range".into()));
        }
        owner.push(o);
    }
    let mut solutions = Vec::with_capacity(ne);
    for name in &names {
        let sigma = (0..np).map(|_| r.f64()).collect::<Result<Vec<_>, _>>()?;
        solutions.push(BasisSolution { electrode: name.clone(), sigma });
    }
    let grid = match r.u8()? {
        0 => None,
        1 => {
            let origin = r.vec3()?;
            let spacing = [r.f64()?, r.f64()?, r.f64()?];
            let dims = [r.u64()? as usize, r.u64()? as usize, r.u64()? as usize];
            let channels = r.u32()? as usize;
            let count = dims.iter().product::<usize>() * channels * 4;
            if count.saturating_mul(8) > bytes.len() {
                return Err(FieldError::Cache("truncated cache".into()));
            }
            let values = (0..count).map(|_| r.f64()).collect::<Result<Vec<_>, _>>()?;
            Some(FieldGrid {
                names: names.clone(),
                roles: roles.clone(),
                data: GridData { origin, spacing, dims, channels, values },
            })
        }
        _ => return Err(FieldError::Cache("bad grid flag".into())),
    };
    if r.pos != bytes.len() {
        return Err(FieldError::Cache("trailing bytes in cache".into()));
    }
    let system = PanelSystem { panels, owner, names, roles };
    Ok((BasisFieldSet::new(system, solutions), grid))
}

pub fn write(path: &std::path::Path, set: &BasisFieldSet, grid: Option<&FieldGrid>, source: serde_json::Value) -> std::io::Result<()> {
    std::fs::write(path, encode(set, grid))?;
    let meta = serde_json::to_string_pretty(&sidecar(set, grid, source)).expect("sidecar serializes");
    std::fs::write(sidecar_path(path), meta + "\n")
}

pub fn read(path: &std::path::Path) -> Result<(BasisFieldSet, Option<FieldGrid>), FieldError> {
    let bytes = std::fs::read(path).map_err(|e| FieldError::Cache(format!("{}: {e}", path.display())))?;
    decode(&bytes)
}

pub fn sidecar_path(path: &std::path::Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    s.into()
}
