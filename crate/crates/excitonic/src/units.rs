//! Unit conventions and conversions.
//!
//! All generators and integrators work in angular frequency (rad/fs) and
//! femtoseconds; wavenumbers (cm^-1) appear only at I/O boundaries. With
//! hbar = 1, an energy E in cm^-1 corresponds to the angular frequency
//! omega = 2 pi c E.

use crate::{Error, Result};

/// Speed of light in cm/fs.
pub const C_CM_PER_FS: f64 = 2.99792458e-5;

/// Boltzmann constant in cm^-1 per kelvin.
pub const KB_CM1_PER_K: f64 = 0.695034800;

/// rad/fs per cm^-1 (= 2 pi c).
pub const RAD_FS_PER_CM1: f64 = 2.0 * std::f64::consts::PI * C_CM_PER_FS;

#[inline]
pub fn cm1_to_rad_fs(e_cm1: f64) -> f64 {
    e_cm1 * RAD_FS_PER_CM1
}

#[inline]
pub fn rad_fs_to_cm1(w: f64) -> f64 {
    w / RAD_FS_PER_CM1
}

/// Thermal energy k_B T in cm^-1.
#[inline]
pub fn thermal_energy_cm1(temperature_k: f64) -> f64 {
    KB_CM1_PER_K * temperature_k
}

/// Thermal energy k_B T in rad/fs.
#[inline]
pub fn thermal_energy_rad_fs(temperature_k: f64) -> f64 {
    cm1_to_rad_fs(thermal_energy_cm1(temperature_k))
}

/// Units accepted by [`convert`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Unit {
    Wavenumber,
    RadPerFs,
    Femtosecond,
    Picosecond,
    Nanosecond,
    Kelvin,
}

impl Unit {
    fn name(self) -> &'static str {
        match self {
            Unit::Wavenumber => "cm^-1",
            Unit::RadPerFs => "rad/fs",
            Unit::Femtosecond => "fs",
            Unit::Picosecond => "ps",
            Unit::Nanosecond => "ns",
            Unit::Kelvin => "K",
        }
    }

    fn dimension(self) -> u8 {
        match self {
            Unit::Wavenumber | Unit::RadPerFs => 0,
            Unit::Femtosecond | Unit::Picosecond | Unit::Nanosecond => 1,
            Unit::Kelvin => 2,
        }
    }

    /// Scale to the base unit of its dimension (rad/fs or fs or K).
    fn to_base(self, v: f64) -> f64 {
        match self {
            Unit::Wavenumber => cm1_to_rad_fs(v),
            Unit::RadPerFs => v,
            Unit::Femtosecond => v,
            Unit::Picosecond => v * 1e3,
            Unit::Nanosecond => v * 1e6,
            Unit::Kelvin => v,
        }
    }

    fn from_base(self, v: f64) -> f64 {
        match self {
            Unit::Wavenumber => rad_fs_to_cm1(v),
            Unit::RadPerFs => v,
            Unit::Femtosecond => v,
            Unit::Picosecond => v * 1e-3,
            Unit::Nanosecond => v * 1e-6,
            Unit::Kelvin => v,
        }
    }
}

/// Convert `value` between compatible units.
pub fn convert(value: f64, from: Unit, to: Unit) -> Result<f64> {
    if from.dimension() != to.dimension() {
        return Err(Error::UnitConversion {
            from: from.name(),
            to: to.name(),
        });
    }
    Ok(to.from_base(from.to_base(value)))
}
