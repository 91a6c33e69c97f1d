//! Standalone trench test piece: a plate cut by one straight trench along y, with
//! optional serifs (undercut pockets at the trench floor). The substrate lies below
//! z = 0; the surface normals point into the open space.

use serde::{Deserialize, Serialize};

use super::{EvaporationError, Pad, Scene};
use crate::geometry::SurfaceMesh;
use crate::math::Vec3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Serif {
    /// Lateral reach of each pocket beyond the trench wall.
    pub reach: f64,
    pub height: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrenchParams {
    pub width: f64,
    /// Depth of the straight walls (to the pocket ceilings when serifs are present).
    pub depth: f64,
    pub serif: Option<Serif>,
    /// Width of the metalized land on each side of the trench.
    pub land: f64,
    /// Extent along the trench.
    pub length: f64,
    /// Target edge length.
    pub cell: f64,
}

impl Default for TrenchParams {
    fn default() -> Self {
        TrenchParams {
            width: 30e-6,
            depth: 30e-6,
            serif: Some(Serif { reach: 20e-6, height: 30e-6 }),
            land: 100e-6,
            length: 600e-6,
            cell: 5e-6,
        }
    }
}

impl TrenchParams {
    pub fn without_serifs(&self) -> Self {
        TrenchParams { serif: None, ..self.clone() }
    }

    pub fn validate(&self) -> Result<(), EvaporationError> {
        let mut v = vec![("width", self.width), ("depth", self.depth), ("land", self.land), ("length", self.length), ("cell", self.cell)];
        if let Some(s) = self.serif {
            v.extend([("serif.reach", s.reach), ("serif.height", s.height)]);
        }
        for (name, x) in v {
            if !(x > 0.0 && x.is_finite()) {
                return Err(EvaporationError::InvalidConfig(format!("trench {name} must be positive")));
            }
        }
        Ok(())
    }

    /// Cross-section polyline (x, z), left land to right land.
    pub fn profile(&self) -> Vec<(f64, f64)> {
        let a = 0.5 * self.width;
        let x = a + self.land;
        let h = self.depth;
        let mut p = vec![(-x, 0.0), (-a, 0.0), (-a, -h)];
        match self.serif {
            Some(s) => {
                let (b, f) = (a + s.reach, -h - s.height);
                p.extend([(-b, -h), (-b, f), (b, f), (b, -h), (a, -h)]);
            }
            None => p.push((a, -h)),
        }
        p.extend([(a, 0.0), (x, 0.0)]);
        p
    }

    /// The mesh and two pads: the outer half of each land.
    pub fn build(&self) -> Result<(Scene, [Pad; 2]), EvaporationError> {
        self.validate()?;
        let profile = self.profile();
        let mut xs: Vec<(f64, f64)> = vec![profile[0]];
        for w in profile.windows(2) {
            let (p, q) = (w[0], w[1]);
            let len = ((q.0 - p.0).powi(2) + (q.1 - p.1).powi(2)).sqrt();
            let k = (len / self.cell).ceil().max(1.0) as usize;
            for i in 1..=k {
                let t = i as f64 / k as f64;
                xs.push((p.0 + t * (q.0 - p.0), p.1 + t * (q.1 - p.1)));
            }
        }
        let ny = (self.length / self.cell).ceil().max(1.0) as usize;
        let mut vertices = Vec::with_capacity(xs.len() * (ny + 1));
        for j in 0..=ny {
            let y = -0.5 * self.length + self.length * j as f64 / ny as f64;
            vertices.extend(xs.iter().map(|&(x, z)| Vec3::new(x, y, z)));
        }
        let w = xs.len();
        let mut triangles = Vec::new();
        let mut pads = [Vec::new(), Vec::new()];
        let edge = 0.5 * self.width + 0.5 * self.land;
        for j in 0..ny {
            for i in 0..w - 1 {
                let (a, b, c, d) = (j * w + i, j * w + i + 1, (j + 1) * w + i + 1, (j + 1) * w + i);
                let xm = 0.5 * (xs[i].0 + xs[i + 1].0);
                let on_top = xs[i].1 == 0.0 && xs[i + 1].1 == 0.0;
                for tri in [[a, b, c], [a, c, d]] {
                    if on_top && xm.abs() > edge {
                        pads[usize::from(xm > 0.0)].push(triangles.len());
                    }
                    triangles.push(tri);
                }
            }
        }
        let mesh = SurfaceMesh::new(vertices, triangles);
        let [l, r] = pads;
        Ok((Scene::single("trench", mesh), [Pad { name: "left".into(), triangles: l }, Pad { name: "right".into(), triangles: r }]))
    }
}
