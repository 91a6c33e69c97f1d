//! Trap depth: lowest barrier on any escape path out of the trap.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use super::{find_rf_null, AnalysisError, AnalysisSettings, DriveConfig, ResolvedDrive};
use crate::constants::joule_to_ev;
use crate::field_solver::FieldSource;
use crate::math::{Point3, Vec3};
use crate::par;

/// Sampling of the depth search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepthOptions {
    /// Half-width of the square radial-plane grid, in units of r0.
    pub half_width_r0: f64,
    /// Grid nodes per side (odd, so the centre node sits on the null).
    pub points: usize,
    /// Half-length of the axial line scan, in units of r0; `None` skips it.
    pub axial_half_length_r0: Option<f64>,
    pub axial_points: usize,
    /// Polish the grid saddle with Newton iterations on the gradient.
    pub refine: bool,
}

impl Default for DepthOptions {
    fn default() -> Self {
        DepthOptions { half_width_r0: 1.6, points: 81, axial_half_length_r0: Some(8.0), axial_points: 321, refine: true }
    }
}

#[derive(Clone, Copy, PartialEq, PartialOrd)]
struct Level(f64);
impl Eq for Level {}
impl Ord for Level {
    fn cmp(&self, o: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&o.0)
    }
}

/// Energy (J) or +inf for points inside or touching an electrode.
fn energy_or_wall(source: &dyn FieldSource, d: &ResolvedDrive, p: Point3) -> f64 {
    d.energy(source, p).unwrap_or(f64::INFINITY)
}

/// Escape over the radial plane through `centre`: priority flood from the centre node.
/// Returns (barrier energy, saddle node position).
fn radial_spill(
    source: &dyn FieldSource,
    d: &ResolvedDrive,
    centre: Point3,
    half: f64,
    n: usize,
) -> Result<(f64, Point3), AnalysisError> {
    let step = 2.0 * half / (n - 1) as f64;
    let pos = |i: usize, j: usize| centre + Vec3::new(-half + i as f64 * step, -half + j as f64 * step, 0.0);
    let values = par::map_range(n * n, |k| energy_or_wall(source, d, pos(k % n, k / n)));
    let c = n / 2;
    let start = c + c * n;
    let mut level = vec![f64::INFINITY; n * n];
    let mut argmax = vec![usize::MAX; n * n];
    let mut done = vec![false; n * n];
    let mut heap = BinaryHeap::new();
    level[start] = values[start];
    argmax[start] = start;
    heap.push(Reverse((Level(values[start]), start)));
    while let Some(Reverse((Level(l), k))) = heap.pop() {
        if done[k] || !l.is_finite() {
            continue;
        }
        done[k] = true;
        let (i, j) = (k % n, k / n);
        if i == 0 || j == 0 || i == n - 1 || j == n - 1 {
            let s = argmax[k];
            let (si, sj) = (s % n, s / n);
            if si == 0 || sj == 0 || si == n - 1 || sj == n - 1 {
                return Err(AnalysisError::Unbounded(format!(
                    "radial barrier lies on the edge of the {:.3e} m half-width grid",
                    half
                )));
            }
            return Ok((l, pos(si, sj)));
        }
        for dj in -1i64..=1 {
            for di in -1i64..=1 {
                if di == 0 && dj == 0 {
                    continue;
                }
                let (ni, nj) = ((i as i64 + di) as usize, (j as i64 + dj) as usize);
                let nk = ni + nj * n;
                if done[nk] || !values[nk].is_finite() {
                    continue;
                }
                let (nl, na) = if values[nk] > l { (values[nk], nk) } else { (l, argmax[k]) };
                if nl < level[nk] {
                    level[nk] = nl;
                    argmax[nk] = na;
                    heap.push(Reverse((Level(nl), nk)));
                }
            }
        }
    }
    Err(AnalysisError::Unbounded("no open path to the grid edge".into()))
}

/// Newton iteration on the in-plane gradient, starting from a grid saddle.
fn refine_saddle(source: &dyn FieldSource, d: &ResolvedDrive, start: Point3, h: f64, max_move: f64) -> Option<(f64, Point3)> {
    let f = |p: Point3| d.energy(source, p).ok();
    let mut x = start;
    for _ in 0..30 {
        let (fx, fy) = (Vec3::X * h, Vec3::Y * h);
        let f0 = f(x)?;
        let (fxp, fxm, fyp, fym) = (f(x + fx)?, f(x - fx)?, f(x + fy)?, f(x - fy)?);
        let gx = (fxp - fxm) / (2.0 * h);
        let gy = (fyp - fym) / (2.0 * h);
        let hxx = (fxp - 2.0 * f0 + fxm) / (h * h);
        let hyy = (fyp - 2.0 * f0 + fym) / (h * h);
        let hxy = (f(x + fx + fy)? - f(x + fx - fy)? - f(x - fx + fy)? + f(x - fx - fy)?) / (4.0 * h * h);
        let det = hxx * hyy - hxy * hxy;
        if det >= 0.0 {
            return None;
        }
        let dx = (-gx * hyy + gy * hxy) / det;
        let dy = (-gy * hxx + gx * hxy) / det;
        x = x + Vec3::new(dx, dy, 0.0);
        if (x - start).norm() > max_move {
            return None;
        }
        if dx.hypot(dy) < 1e-6 * h {
            return Some((f(x)?, x));
        }
    }
    None
}

/// Barrier along the axis from the centre, in each direction; `Err(end value)` when the
/// line maximum sits at the scan end.
fn axial_barriers(source: &dyn FieldSource, d: &ResolvedDrive, centre: Point3, len: f64, n: usize) -> [Result<(f64, Point3), f64>; 2] {
    let n = n.max(3);
    [1.0, -1.0].map(|s| {
        let pts: Vec<Point3> = (0..n).map(|k| centre + Vec3::Z * (s * len * k as f64 / (n - 1) as f64)).collect();
        let vals = par::map_slice(&pts, |p| energy_or_wall(source, d, *p));
        let (k, v) = vals.iter().enumerate().fold((0, f64::NEG_INFINITY), |a, (k, &v)| if v > a.1 { (k, v) } else { a });
        if k == n - 1 || !v.is_finite() {
            Err(vals[n - 1])
        } else {
            Ok((v, pts[k]))
        }
    })
}

/// Depth in eV (barrier minus the value at the rf null) and the saddle location.
///
/// The radial plane through the null is flooded on a grid; the grid saddle is then
/// refined by Newton iteration. An axial line scan covers escape along the trap axis.
pub fn trap_depth(
    source: &dyn FieldSource,
    drive: &DriveConfig,
    settings: &AnalysisSettings,
    opts: &DepthOptions,
) -> Result<(f64, Point3), AnalysisError> {
    if opts.points < 5 || opts.half_width_r0 <= 0.0 {
        return Err(AnalysisError::InvalidDrive("depth grid needs >= 5 points and a positive half-width".into()));
    }
    let d = drive.resolve(source)?;
    let null = find_rf_null(source, drive, settings)?;
    let e0 = d.energy(source, null)?;
    let n = opts.points | 1;
    let half = opts.half_width_r0 * settings.r0;
    let (mut barrier, mut saddle) = radial_spill(source, &d, null, half, n)?;
    if opts.refine {
        let cell = 2.0 * half / (n - 1) as f64;
        if let Some((b, s)) = refine_saddle(source, &d, saddle, cell / 20.0, 2.0 * cell) {
            barrier = b;
            saddle = s;
        }
    }
    if let Some(l) = opts.axial_half_length_r0 {
        for dir in axial_barriers(source, &d, null, l * settings.r0, opts.axial_points) {
            match dir {
                Ok((b, s)) if b < barrier => {
                    barrier = b;
                    saddle = s;
                }
                Err(end) if end < barrier => {
                    return Err(AnalysisError::Unbounded(format!(
                        "axial potential still rising {:.3e} m from the null",
                        l * settings.r0
                    )))
                }
                _ => {}
            }
        }
    }
    Ok((joule_to_ev(barrier - e0), saddle))
}
