//! Atomic reference data and scalar light shifts.
//!
//! The trap beams use a two-line (D1 + D2) dispersive sum including the
//! counter-rotating terms:
//!
//! α(ω) = Σⱼ wⱼ · 3πε₀c³Γⱼ/ωⱼ³ · [1/(ωⱼ − ω) + 1/(ωⱼ + ω)]
//!
//! where wⱼ is the line's effective strength (2/3 for D2 and 1/3 for D1 for an
//! alkali ground state). The near-resonant probe uses the two-level dispersive
//! shift per unit intensity ħΓ²/(8δI_sat) instead.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{lit, Scalar};
use crate::units::{HBAR, SPEED_OF_LIGHT, VACUUM_PERMITTIVITY};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum LineLabel {
    D1,
    D2,
}

impl fmt::Display for LineLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LineLabel::D1 => f.write_str("D1"),
            LineLabel::D2 => f.write_str("D2"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionLine<T> {
    pub label: LineLabel,
    /// Vacuum wavelength, m.
    pub wavelength: T,
    /// Natural linewidth Γ, rad/s.
    pub natural_linewidth: T,
    /// W/m².
    pub saturation_intensity: T,
    pub effective_line_strength: T,
}

impl<T: Scalar> TransitionLine<T> {
    pub fn angular_frequency(&self) -> T {
        lit::<T>(2.0) * T::PI() * lit(SPEED_OF_LIGHT) / self.wavelength
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AtomSpecies<T> {
    pub name: String,
    /// kg.
    pub mass: T,
    pub transitions: Vec<TransitionLine<T>>,
    pub probe_reference: LineLabel,
    /// Minimum |ν − νⱼ| (Hz) allowed on the trap-polarizability path.
    pub resonance_guard_hz: T,
    /// The probe path requires |δ| ≥ factor · Γ.
    pub dispersive_guard_factor: T,
}

impl<T: Scalar> AtomSpecies<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.mass > T::zero()) {
            return Err(Error::InvalidConfig(format!("{}: mass must be positive", self.name)));
        }
        if self.transitions.is_empty() {
            return Err(Error::InvalidConfig(format!("{}: no transitions", self.name)));
        }
        for line in &self.transitions {
            if !(line.wavelength > T::zero()) || !(line.natural_linewidth > T::zero()) {
                return Err(Error::InvalidConfig(format!(
                    "{} {}: wavelength and linewidth must be positive",
                    self.name, line.label
                )));
            }
            if !(line.saturation_intensity > T::zero()) {
                return Err(Error::InvalidConfig(format!(
                    "{} {}: saturation intensity must be positive",
                    self.name, line.label
                )));
            }
        }
        self.line(self.probe_reference)?;
        Ok(())
    }

    pub fn line(&self, label: LineLabel) -> Result<&TransitionLine<T>> {
        self.transitions.iter().find(|l| l.label == label).ok_or_else(|| {
            Error::InvalidConfig(format!("{}: no {} line in atomic data", self.name, label))
        })
    }

    /// Scalar ground-state polarizability in C·m²/V.
    pub fn scalar_polarizability(&self, wavelength: T) -> Result<T> {
        if !(wavelength > T::zero()) {
            return Err(Error::Domain(format!("wavelength must be positive, got {wavelength}")));
        }
        let two_pi = lit::<T>(2.0) * T::PI();
        let c = lit::<T>(SPEED_OF_LIGHT);
        let omega = two_pi * c / wavelength;
        let mut alpha = T::zero();
        for line in &self.transitions {
            let omega_j = line.angular_frequency();
            let separation_hz = (omega_j - omega).abs() / two_pi;
            if separation_hz < self.resonance_guard_hz {
                return Err(Error::ResonanceSingularity {
                    wavelength_nm: wavelength.to_f64_lossy() * 1e9,
                    line: line.label.to_string(),
                    guard_hz: self.resonance_guard_hz.to_f64_lossy(),
                });
            }
            let prefactor = lit::<T>(3.0) * T::PI() * lit(VACUUM_PERMITTIVITY) * c * c * c
                * line.natural_linewidth
                / (omega_j * omega_j * omega_j);
            let dispersion = T::one() / (omega_j - omega) + T::one() / (omega_j + omega);
            alpha = alpha + line.effective_line_strength * prefactor * dispersion;
        }
        Ok(alpha)
    }

    /// U = −α(ω)·I/(2ε₀c), in J.
    pub fn intensity_to_potential(&self, wavelength: T, intensity: T) -> Result<T> {
        if intensity < T::zero() {
            return Err(Error::Domain(format!("intensity must be non-negative, got {intensity}")));
        }
        Ok(self.potential_per_intensity(wavelength)? * intensity)
    }

    /// −α/(2ε₀c), the trap-path light shift per unit intensity (J·m²/W).
    pub fn potential_per_intensity(&self, wavelength: T) -> Result<T> {
        let alpha = self.scalar_polarizability(wavelength)?;
        Ok(-alpha / (lit::<T>(2.0) * lit(VACUUM_PERMITTIVITY) * lit(SPEED_OF_LIGHT)))
    }

    /// ħΓ²/(8δI_sat) for the probe reference line; `detuning` in rad/s,
    /// positive to the blue.
    pub fn probe_potential_coefficient(&self, detuning: T) -> Result<T> {
        let line = self.line(self.probe_reference)?;
        let gamma = line.natural_linewidth;
        let threshold = self.dispersive_guard_factor * gamma;
        if !(detuning.abs() >= threshold) {
            let two_pi = lit::<T>(2.0) * T::PI();
            return Err(Error::DispersiveRegime {
                detuning_hz: (detuning / two_pi).to_f64_lossy(),
                threshold_hz: (threshold / two_pi).to_f64_lossy(),
            });
        }
        Ok(lit::<T>(HBAR) * gamma * gamma / (lit::<T>(8.0) * detuning * line.saturation_intensity))
    }
}
