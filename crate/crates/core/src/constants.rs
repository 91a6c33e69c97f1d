//! Physical constants (CODATA 2018) and unit helpers. Everything internal is SI.

/// Vacuum permittivity, F/m.
pub const EPSILON_0: f64 = 8.8541878128e-12;
/// Coulomb constant 1/(4 pi eps0), m/F.
pub const COULOMB_K: f64 = 1.0 / (4.0 * std::f64::consts::PI * EPSILON_0);
/// Elementary charge, C.
pub const ELEMENTARY_CHARGE: f64 = 1.602176634e-19;
/// Unified atomic mass unit, kg.
pub const ATOMIC_MASS_UNIT: f64 = 1.66053906660e-27;
/// Mass of 40Ca, in u.
pub const CA40_MASS_U: f64 = 39.9625909;

pub const TWO_PI: f64 = 2.0 * std::f64::consts::PI;

/// Angular frequency (rad/s) from a frequency in Hz.
pub fn hz_to_rad(f: f64) -> f64 {
    TWO_PI * f
}

/// Frequency in Hz from an angular frequency (rad/s).
pub fn rad_to_hz(w: f64) -> f64 {
    w / TWO_PI
}

/// Surface charge density in C/m^2 from elementary charges per square micrometer.
pub fn e_per_um2_to_c_per_m2(n: f64) -> f64 {
    n * ELEMENTARY_CHARGE / 1e-12
}

/// Elementary charges per square micrometer from C/m^2.
pub fn c_per_m2_to_e_per_um2(s: f64) -> f64 {
    s * 1e-12 / ELEMENTARY_CHARGE
}

/// Energy in eV from joules.
pub fn joule_to_ev(e: f64) -> f64 {
    e / ELEMENTARY_CHARGE
}
