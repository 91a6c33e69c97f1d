//! Trajectory and tickle-curve export.
//!
//! Binary trajectory layout (little-endian):
//!
//! ```text
//! magic     8 bytes "TRAPTRJ\0"
//! version   u32
//! dt        f64 (s)
//! rf_omega  f64 (rad/s, NaN if unknown)
//! count     u64
//! states    count x 7 f64 (t, x, y, z, vx, vy, vz)
//! ```

use std::fmt::Write as _;

use super::{DynamicsError, IonState, TicklePoint, Trajectory};
use crate::constants::rad_to_hz;
use crate::math::Vec3;

pub const MAGIC: &[u8; 8] = b"TRAPTRJ\0";
pub const VERSION: u32 = 1;

pub fn trajectory_to_csv(traj: &Trajectory) -> String {
    let mut out = String::from("t,x,y,z,vx,vy,vz\n");
    for s in &traj.states {
        let (p, v) = (s.position, s.velocity);
        writeln!(out, "{},{},{},{},{},{},{}", s.time, p.x, p.y, p.z, v.x, v.y, v.z).unwrap();
    }
    out
}

pub fn tickle_to_csv(points: &[TicklePoint]) -> String {
    let mut out = String::from("freq_Hz,response_J\n");
    for p in points {
        writeln!(out, "{},{}", rad_to_hz(p.omega), p.response_j).unwrap();
    }
    out
}

pub fn encode_trajectory(traj: &Trajectory) -> Vec<u8> {
    let mut b = Vec::with_capacity(36 + traj.states.len() * 56);
    b.extend_from_slice(MAGIC);
    b.extend_from_slice(&VERSION.to_le_bytes());
    b.extend_from_slice(&traj.dt.to_le_bytes());
    b.extend_from_slice(&traj.rf_omega.unwrap_or(f64::NAN).to_le_bytes());
    b.extend_from_slice(&(traj.states.len() as u64).to_le_bytes());
    for s in &traj.states {
        for v in [s.time, s.position.x, s.position.y, s.position.z, s.velocity.x, s.velocity.y, s.velocity.z] {
            b.extend_from_slice(&v.to_le_bytes());
        }
    }
    b
}

pub fn decode_trajectory(bytes: &[u8]) -> Result<Trajectory, DynamicsError> {
    let err = |m: &str| DynamicsError::Format(m.to_string());
    if bytes.len() < 36 || &bytes[..8] != MAGIC {
        return Err(err("not a trajectory file"));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let f64_at = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
    if u32_at(8) != VERSION {
        return Err(err("unsupported trajectory version"));
    }
    let dt = f64_at(12);
    let rf = f64_at(20);
    let count = u64::from_le_bytes(bytes[28..36].try_into().unwrap()) as usize;
    if bytes.len() != 36 + count.checked_mul(56).ok_or_else(|| err("bad count"))? {
        return Err(err("truncated or oversized trajectory"));
    }
    let states = (0..count)
        .map(|i| {
            let o = 36 + i * 56;
            let v: Vec<f64> = (0..7).map(|k| f64_at(o + 8 * k)).collect();
            IonState { time: v[0], position: Vec3::new(v[1], v[2], v[3]), velocity: Vec3::new(v[4], v[5], v[6]) }
        })
        .collect();
    Ok(Trajectory { dt, rf_omega: if rf.is_nan() { None } else { Some(rf) }, states })
}
