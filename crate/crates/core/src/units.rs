//! Physical constants and unit conversions.
//!
//! Every model runs with ħ = 1, so energies are angular frequencies in the
//! model's time unit. The trapped-molecule models use milliseconds and
//! rad/ms; the molecular-crystal models keep energies in cm⁻¹ and time in
//! femtoseconds, converting with [`CM_INV_TO_RAD_PER_FS`] where a
//! Hamiltonian is assembled.

use std::f64::consts::PI;

/// Speed of light in cm/s.
pub const SPEED_OF_LIGHT_CM_PER_S: f64 = 2.997_924_58e10;

/// 1 cm⁻¹ expressed as an angular frequency in rad/fs (2πc·10⁻¹⁵),
/// 1.88365156731e-4 to 12 significant digits.
pub const CM_INV_TO_RAD_PER_FS: f64 = 2.0 * PI * SPEED_OF_LIGHT_CM_PER_S * 1e-15;

/// 1 meV in cm⁻¹.
pub const MEV_TO_CM_INV: f64 = 8.065_543_937;

/// Boltzmann constant in cm⁻¹/K.
pub const KB_CM_INV_PER_K: f64 = 0.695_034_800;

/// Boltzmann constant divided by the elementary charge, in V/K.
pub const KB_OVER_E_VOLT_PER_K: f64 = 8.617_333_262e-5;

/// Boltzmann constant in J/K.
pub const KB_J_PER_K: f64 = 1.380_649e-23;

/// Atomic mass unit in kg.
pub const AMU_KG: f64 = 1.660_539_066_60e-27;

/// Boltzmann constant in the molecular-dynamics unit system
/// (amu·µm²/ms² per kelvin).
pub const KB_MD_UNITS: f64 = KB_J_PER_K / (AMU_KG * 1e-12 / 1e-6);

/// Mass of a ⁴⁰Ca¹⁹F molecule in amu.
pub const CAF_MASS_AMU: f64 = 59.076;

/// Converts an ordinary frequency in Hz to an angular frequency in rad/ms.
pub fn hz_to_rad_per_ms(hz: f64) -> f64 {
    2.0 * PI * hz * 1e-3
}

/// Converts a temperature to the molecular-dynamics energy unit.
pub fn kelvin_to_md_energy(t_kelvin: f64) -> f64 {
    KB_MD_UNITS * t_kelvin
}

/// Thermal energy k_B·T in cm⁻¹.
pub fn kelvin_to_cm_inv(t_kelvin: f64) -> f64 {
    KB_CM_INV_PER_K * t_kelvin
}

/// Time units used by the shipped models and datasets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TimeUnit {
    Millisecond,
    Femtosecond,
}

impl TimeUnit {
    pub fn suffix(self) -> &'static str {
        match self {
            TimeUnit::Millisecond => "ms",
            TimeUnit::Femtosecond => "fs",
        }
    }

    pub fn from_suffix(s: &str) -> Option<Self> {
        match s {
            "ms" => Some(TimeUnit::Millisecond),
            "fs" => Some(TimeUnit::Femtosecond),
            _ => None,
        }
    }
}
