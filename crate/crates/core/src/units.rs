//! Physical constants (CODATA 2018, SI) and reporting conversions.

use crate::scalar::{lit, Scalar};

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;
pub const VACUUM_PERMITTIVITY: f64 = 8.854_187_812_8e-12;
pub const VACUUM_PERMEABILITY: f64 = 1.256_637_062_12e-6;
pub const HBAR: f64 = 1.054_571_817e-34;
pub const PLANCK: f64 = 6.626_070_15e-34;
pub const BOLTZMANN: f64 = 1.380_649e-23;
pub const ATOMIC_MASS_UNIT: f64 = 1.660_539_066_60e-27;
/// Atomic unit of polarizability, 4πε₀a₀³, in C·m²/V.
pub const ATOMIC_UNIT_POLARIZABILITY: f64 = 1.648_777_274_36e-41;

/// Energy in joules to temperature in microkelvin.
pub fn joules_to_microkelvin<T: Scalar>(energy: T) -> T {
    energy / lit::<T>(BOLTZMANN) * lit(1e6)
}

pub fn microkelvin_to_joules<T: Scalar>(temperature: T) -> T {
    temperature * lit::<T>(1e-6) * lit(BOLTZMANN)
}

/// Energy in joules to frequency in kHz via E = h·ν.
pub fn joules_to_khz<T: Scalar>(energy: T) -> T {
    energy / lit::<T>(PLANCK) / lit(1e3)
}
