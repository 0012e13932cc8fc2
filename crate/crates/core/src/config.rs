//! Run configuration: TOML documents in which every physical quantity is a
//! string carrying an explicit unit, e.g. `radius = "235 nm"`.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::de::{self, Visitor};
use serde::{Deserialize, Deserializer, Serialize};
use sha2::{Digest, Sha256};

use crate::analysis::{AnalysisParams, Taper};
use crate::atom::{AtomSpecies, LineLabel, TransitionLine};
use crate::dynamics::{
    Anchor, DistributionShape, InitialDistribution, MotionMode, Pulse, SignalModel, VelocityModel,
};
use crate::error::{Error, Result};
use crate::fiber::{CoreIndex, Direction, FiberSpec};
use crate::scalar::{lit, Scalar};
use crate::trap::{BeamRole, BeamSpec, GridSpec, TrapConfig};
use crate::units::ATOMIC_MASS_UNIT;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dimension {
    Length,
    Power,
    /// Cyclic frequency, Hz.
    Frequency,
    Angle,
    Time,
    Temperature,
    Mass,
    Intensity,
}

impl fmt::Display for Dimension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Dimension::Length => "length",
            Dimension::Power => "power",
            Dimension::Frequency => "frequency",
            Dimension::Angle => "angle",
            Dimension::Time => "time",
            Dimension::Temperature => "temperature",
            Dimension::Mass => "mass",
            Dimension::Intensity => "intensity",
        })
    }
}

fn unit(symbol: &str) -> Option<(Dimension, f64)> {
    use Dimension::*;
    let deg = std::f64::consts::PI / 180.0;
    Some(match symbol {
        "m" => (Length, 1.0),
        "cm" => (Length, 1e-2),
        "mm" => (Length, 1e-3),
        "um" | "µm" => (Length, 1e-6),
        "nm" => (Length, 1e-9),
        "pm" => (Length, 1e-12),
        "W" => (Power, 1.0),
        "mW" => (Power, 1e-3),
        "uW" | "µW" => (Power, 1e-6),
        "nW" => (Power, 1e-9),
        "pW" => (Power, 1e-12),
        "Hz" => (Frequency, 1.0),
        "kHz" => (Frequency, 1e3),
        "MHz" => (Frequency, 1e6),
        "GHz" => (Frequency, 1e9),
        "THz" => (Frequency, 1e12),
        "rad" => (Angle, 1.0),
        "mrad" => (Angle, 1e-3),
        "deg" | "°" => (Angle, deg),
        "s" => (Time, 1.0),
        "ms" => (Time, 1e-3),
        "us" | "µs" => (Time, 1e-6),
        "ns" => (Time, 1e-9),
        "ps" => (Time, 1e-12),
        "K" => (Temperature, 1.0),
        "mK" => (Temperature, 1e-3),
        "uK" | "µK" => (Temperature, 1e-6),
        "nK" => (Temperature, 1e-9),
        "kg" => (Mass, 1.0),
        "g" => (Mass, 1e-3),
        "u" | "Da" => (Mass, ATOMIC_MASS_UNIT),
        "W/m^2" | "W/m2" => (Intensity, 1.0),
        "W/cm^2" | "W/cm2" => (Intensity, 1e4),
        "mW/cm^2" | "mW/cm2" => (Intensity, 10.0),
        _ => return None,
    })
}

/// A parsed physical quantity in SI base units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quantity {
    pub value: f64,
    pub dimension: Dimension,
}

impl Quantity {
    pub fn parse(text: &str) -> std::result::Result<Self, String> {
        let t = text.trim();
        let (number, symbol) = match t.split_once(char::is_whitespace) {
            Some((n, u)) => (n.trim(), u.trim()),
            None => {
                let split = t
                    .char_indices()
                    .find(|&(i, _)| !t[..i].is_empty() && t[..i].parse::<f64>().is_ok() && unit(&t[i..]).is_some())
                    .map(|(i, _)| i)
                    .ok_or_else(|| format!("'{text}' has no recognized unit suffix"))?;
                (&t[..split], &t[split..])
            }
        };
        let value: f64 = number.parse().map_err(|_| format!("'{number}' is not a number in '{text}'"))?;
        let (dimension, scale) = unit(symbol).ok_or_else(|| format!("unknown unit '{symbol}' in '{text}'"))?;
        if !value.is_finite() {
            return Err(format!("'{text}' is not finite"));
        }
        Ok(Quantity { value: value * scale, dimension })
    }

    pub fn expect(&self, dimension: Dimension, field: &str) -> Result<f64> {
        if self.dimension != dimension {
            return Err(Error::InvalidConfig(format!(
                "{field}: expected a {dimension}, found a {}",
                self.dimension
            )));
        }
        Ok(self.value)
    }
}

impl<'de> Deserialize<'de> for Quantity {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        struct V;
        impl Visitor<'_> for V {
            type Value = Quantity;
            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a string with a number and a unit, e.g. \"235 nm\"")
            }
            fn visit_str<E: de::Error>(self, v: &str) -> std::result::Result<Quantity, E> {
                Quantity::parse(v).map_err(E::custom)
            }
            fn visit_i64<E: de::Error>(self, v: i64) -> std::result::Result<Quantity, E> {
                Err(E::custom(format!("bare number {v}: physical quantities need a unit suffix")))
            }
            fn visit_u64<E: de::Error>(self, v: u64) -> std::result::Result<Quantity, E> {
                Err(E::custom(format!("bare number {v}: physical quantities need a unit suffix")))
            }
            fn visit_f64<E: de::Error>(self, v: f64) -> std::result::Result<Quantity, E> {
                Err(E::custom(format!("bare number {v}: physical quantities need a unit suffix")))
            }
        }
        d.deserialize_any(V)
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LineData {
    pub label: LineLabel,
    pub wavelength: Quantity,
    /// Γ/2π.
    pub linewidth: Quantity,
    pub saturation_intensity: Quantity,
    pub strength: f64,
}

/// Contents of an atomic-data file.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AtomicData {
    pub schema: String,
    pub name: String,
    pub mass: Quantity,
    pub probe_reference: LineLabel,
    pub resonance_guard: Quantity,
    pub dispersive_guard_factor: f64,
    #[serde(rename = "line")]
    pub lines: Vec<LineData>,
}

pub const ATOMIC_DATA_SCHEMA: &str = "nanotrap.atomic-data/1";
const BUILTIN_RB87: &str = include_str!("../../../data/rb87.toml");

impl AtomicData {
    pub fn from_toml(text: &str, origin: &Path) -> Result<Self> {
        let data: AtomicData =
            toml::from_str(text).map_err(|e| Error::Parse { path: origin.to_path_buf(), message: e.to_string() })?;
        if data.schema != ATOMIC_DATA_SCHEMA {
            return Err(Error::Parse {
                path: origin.to_path_buf(),
                message: format!("unsupported schema '{}' (expected {ATOMIC_DATA_SCHEMA})", data.schema),
            });
        }
        Ok(data)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text, path)
    }

    /// The bundled `data/rb87.toml`.
    pub fn builtin_rb87() -> Self {
        Self::from_toml(BUILTIN_RB87, Path::new("builtin:rb87")).expect("bundled Rb-87 data parses")
    }

    pub fn to_species<T: Scalar>(&self) -> Result<AtomSpecies<T>> {
        let two_pi = 2.0 * std::f64::consts::PI;
        let transitions = self
            .lines
            .iter()
            .map(|l| {
                let field = |f: &str| format!("line {}: {f}", l.label);
                Ok(TransitionLine {
                    label: l.label,
                    wavelength: lit(l.wavelength.expect(Dimension::Length, &field("wavelength"))?),
                    natural_linewidth: lit(two_pi * l.linewidth.expect(Dimension::Frequency, &field("linewidth"))?),
                    saturation_intensity: lit(
                        l.saturation_intensity.expect(Dimension::Intensity, &field("saturation_intensity"))?,
                    ),
                    effective_line_strength: lit(l.strength),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let species = AtomSpecies {
            name: self.name.clone(),
            mass: lit(self.mass.expect(Dimension::Mass, "mass")?),
            transitions,
            probe_reference: self.probe_reference,
            resonance_guard_hz: lit(self.resonance_guard.expect(Dimension::Frequency, "resonance_guard")?),
            dispersive_guard_factor: lit(self.dispersive_guard_factor),
        };
        species.validate()?;
        Ok(species)
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LineOverride {
    pub wavelength: Option<Quantity>,
    pub linewidth: Option<Quantity>,
    pub saturation_intensity: Option<Quantity>,
    pub strength: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AtomSection {
    /// Path relative to the config file, or `builtin:rb87`.
    pub data: String,
    pub mass: Option<Quantity>,
    #[serde(default)]
    pub line: BTreeMap<LineLabel, LineOverride>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum CoreIndexSection {
    Fixed(f64),
    /// Name of a built-in table ("fused_silica").
    Named(String),
    Table(Vec<(Quantity, f64)>),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FiberSection {
    pub radius: Quantity,
    pub core_index: Option<CoreIndexSection>,
    pub cladding_index: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BeamSection {
    pub label: String,
    pub role: BeamRole,
    pub wavelength: Quantity,
    pub power: Quantity,
    pub polarization: Quantity,
    #[serde(default = "forward")]
    pub direction: Direction,
    #[serde(default)]
    pub standing_wave: bool,
    /// Probe only; positive is blue of the probe reference line.
    pub detuning: Option<Quantity>,
}

fn forward() -> Direction {
    Direction::Forward
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub r_offset: Option<Quantity>,
    pub r_span: Option<Quantity>,
    pub r_samples: Option<usize>,
    pub phi_samples: Option<usize>,
    pub z_plane: Option<Quantity>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    #[default]
    Single,
    Pulsed,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PulseSection {
    pub on: Quantity,
    pub off: Quantity,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSection {
    #[serde(default)]
    pub mode: MotionMode,
    #[serde(default)]
    pub protocol: Protocol,
    pub atoms: usize,
    #[serde(default)]
    pub distribution: DistributionShape,
    #[serde(default)]
    pub anchor: Anchor,
    pub center_offset: Quantity,
    pub half_width: Quantity,
    /// Omitted: atoms start at rest.
    pub temperature: Option<Quantity>,
    pub decay_time: Quantity,
    #[serde(default = "unit_normalization")]
    pub normalization: f64,
    pub dt: Quantity,
    pub duration: Quantity,
    #[serde(default)]
    pub pulses: Vec<PulseSection>,
}

fn unit_normalization() -> f64 {
    1.0
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisSection {
    pub start: Option<Quantity>,
    pub moving_average: Option<Quantity>,
    pub taper: Option<Taper>,
    pub band: Option<(Quantity, Quantity)>,
    pub min_prominence: Option<f64>,
    pub max_peaks: Option<usize>,
    pub fit_half_window: Option<Quantity>,
    pub detrend: Option<bool>,
    pub lifetime_rebin: Option<usize>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensitivitySection {
    pub fraction: Option<f64>,
}

/// A config file as written.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub output: Option<PathBuf>,
    pub atom: AtomSection,
    pub fiber: FiberSection,
    #[serde(rename = "beam", default)]
    pub beams: Vec<BeamSection>,
    #[serde(default)]
    pub grid: GridSection,
    pub simulation: SimulationSection,
    #[serde(default)]
    pub analysis: AnalysisSection,
    #[serde(default)]
    pub sensitivity: SensitivitySection,
    /// Directory that relative paths resolve against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationParams<T> {
    pub mode: MotionMode,
    pub protocol: Protocol,
    pub distribution: InitialDistribution<T>,
    pub signal: SignalModel<T>,
    pub dt: T,
    pub duration: T,
    pub pulses: Vec<Pulse<T>>,
}

/// A fully resolved, validated configuration in SI units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario<T> {
    pub seed: u64,
    pub output: Option<PathBuf>,
    pub trap: TrapConfig<T>,
    pub simulation: SimulationParams<T>,
    pub analysis: AnalysisParams<T>,
    pub sensitivity_fraction: T,
}

impl RunConfig {
    pub fn from_toml(text: &str, origin: &Path) -> Result<Self> {
        let mut c: RunConfig =
            toml::from_str(text).map_err(|e| Error::Parse { path: origin.to_path_buf(), message: e.to_string() })?;
        c.base_dir = origin.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text, path)
    }

    fn atomic_data(&self) -> Result<AtomicData> {
        match self.atom.data.as_str() {
            "builtin:rb87" => Ok(AtomicData::builtin_rb87()),
            p => AtomicData::load(&self.base_dir.join(p)),
        }
    }

    pub fn resolve<T: Scalar>(&self) -> Result<Scenario<T>> {
        let mut atom: AtomSpecies<T> = self.atomic_data()?.to_species()?;
        if let Some(m) = &self.atom.mass {
            atom.mass = lit(m.expect(Dimension::Mass, "atom.mass")?);
        }
        for (label, o) in &self.atom.line {
            let field = |f: &str| format!("atom.line.{label}.{f}");
            let line = atom
                .transitions
                .iter_mut()
                .find(|l| l.label == *label)
                .ok_or_else(|| Error::InvalidConfig(format!("atom.line.{label}: no such line in the data file")))?;
            if let Some(q) = &o.wavelength {
                line.wavelength = lit(q.expect(Dimension::Length, &field("wavelength"))?);
            }
            if let Some(q) = &o.linewidth {
                line.natural_linewidth =
                    lit(2.0 * std::f64::consts::PI * q.expect(Dimension::Frequency, &field("linewidth"))?);
            }
            if let Some(q) = &o.saturation_intensity {
                line.saturation_intensity = lit(q.expect(Dimension::Intensity, &field("saturation_intensity"))?);
            }
            if let Some(s) = o.strength {
                line.effective_line_strength = lit(s);
            }
        }
        atom.validate()?;

        let core_index = match &self.fiber.core_index {
            None => CoreIndex::fused_silica(),
            Some(CoreIndexSection::Fixed(n)) => CoreIndex::Fixed(lit(*n)),
            Some(CoreIndexSection::Named(name)) if name == "fused_silica" => CoreIndex::fused_silica(),
            Some(CoreIndexSection::Named(name)) => {
                return Err(Error::InvalidConfig(format!("fiber.core_index: unknown table '{name}'")))
            }
            Some(CoreIndexSection::Table(rows)) => CoreIndex::Table(
                rows.iter()
                    .map(|(q, n)| Ok((lit(q.expect(Dimension::Length, "fiber.core_index")?), lit(*n))))
                    .collect::<Result<Vec<_>>>()?,
            ),
        };
        let radius = self.fiber.radius.expect(Dimension::Length, "fiber.radius")?;
        if !(radius > 0.0) {
            return Err(Error::InvalidConfig("fiber.radius must be positive".into()));
        }
        let fiber = FiberSpec {
            radius: lit(radius),
            core_index,
            cladding_index: lit(self.fiber.cladding_index.unwrap_or(1.0)),
        };

        let two_pi = 2.0 * std::f64::consts::PI;
        let beams = self
            .beams
            .iter()
            .map(|b| {
                let field = |f: &str| format!("beam {}: {f}", b.label);
                Ok(BeamSpec {
                    label: b.label.clone(),
                    role: b.role,
                    wavelength: lit(b.wavelength.expect(Dimension::Length, &field("wavelength"))?),
                    power: lit(b.power.expect(Dimension::Power, &field("power"))?),
                    pol_angle: lit(b.polarization.expect(Dimension::Angle, &field("polarization"))?),
                    direction: b.direction,
                    standing_wave: b.standing_wave,
                    detuning: b
                        .detuning
                        .as_ref()
                        .map(|q| q.expect(Dimension::Frequency, &field("detuning")).map(|v| lit(two_pi * v)))
                        .transpose()?,
                })
            })
            .collect::<Result<Vec<_>>>()?;

        let g = &self.grid;
        let defaults = GridSpec::<T>::default();
        let opt_len = |q: &Option<Quantity>, f: &str| -> Result<Option<T>> {
            q.as_ref().map(|q| q.expect(Dimension::Length, f).map(lit)).transpose()
        };
        let grid = GridSpec {
            r_offset: opt_len(&g.r_offset, "grid.r_offset")?.unwrap_or(defaults.r_offset),
            r_span: opt_len(&g.r_span, "grid.r_span")?.unwrap_or(defaults.r_span),
            r_samples: g.r_samples.unwrap_or(defaults.r_samples),
            phi_samples: g.phi_samples.unwrap_or(defaults.phi_samples),
        };
        let trap = TrapConfig { fiber, atom, beams, grid, z_plane: opt_len(&g.z_plane, "grid.z_plane")? };
        trap.validate()?;

        let s = &self.simulation;
        let time = |q: &Quantity, f: &str| q.expect(Dimension::Time, f).map(lit::<T>);
        let distribution = InitialDistribution {
            shape: s.distribution,
            center_offset: lit(s.center_offset.expect(Dimension::Length, "simulation.center_offset")?),
            half_width: lit(s.half_width.expect(Dimension::Length, "simulation.half_width")?),
            velocity: match &s.temperature {
                None => VelocityModel::Zero,
                Some(q) => VelocityModel::Thermal {
                    temperature: lit(q.expect(Dimension::Temperature, "simulation.temperature")?),
                },
            },
            atom_count: s.atoms,
            seed: self.seed,
            anchor: s.anchor,
        };
        distribution.validate()?;
        let signal = SignalModel {
            decay_time: time(&s.decay_time, "simulation.decay_time")?,
            normalization: lit(s.normalization),
        };
        signal.validate()?;
        let pulses = s
            .pulses
            .iter()
            .map(|p| Ok(Pulse { on: time(&p.on, "simulation.pulses.on")?, off: time(&p.off, "simulation.pulses.off")? }))
            .collect::<Result<Vec<_>>>()?;
        if s.protocol == Protocol::Pulsed && pulses.is_empty() {
            return Err(Error::InvalidConfig("pulsed protocol needs a non-empty pulse list".into()));
        }
        let simulation = SimulationParams {
            mode: s.mode,
            protocol: s.protocol,
            distribution,
            signal,
            dt: time(&s.dt, "simulation.dt")?,
            duration: time(&s.duration, "simulation.duration")?,
            pulses,
        };
        if !(simulation.dt > T::zero() && simulation.duration > T::zero()) {
            return Err(Error::InvalidConfig("simulation dt and duration must be positive".into()));
        }

        let a = &self.analysis;
        let mut analysis = AnalysisParams::<T>::default();
        if let Some(q) = &a.start {
            analysis.start = time(q, "analysis.start")?;
        }
        if let Some(q) = &a.moving_average {
            analysis.moving_average = time(q, "analysis.moving_average")?;
        }
        if let Some(t) = a.taper {
            analysis.taper = t;
        }
        if let Some((lo, hi)) = &a.band {
            analysis.band = (
                lit(lo.expect(Dimension::Frequency, "analysis.band")?),
                lit(hi.expect(Dimension::Frequency, "analysis.band")?),
            );
        }
        if let Some(v) = a.min_prominence {
            analysis.min_prominence = lit(v);
        }
        if let Some(v) = a.max_peaks {
            analysis.max_peaks = v;
        }
        if let Some(q) = &a.fit_half_window {
            let v = q.expect(Dimension::Frequency, "analysis.fit_half_window")?;
            if !(v > 0.0) {
                return Err(Error::InvalidConfig("analysis.fit_half_window must be > 0".into()));
            }
            analysis.fit_half_window = lit(v);
        }
        if let Some(v) = a.detrend {
            analysis.detrend = v;
        }
        if let Some(v) = a.lifetime_rebin {
            analysis.lifetime_rebin = v;
        }

        let fraction = self.sensitivity.fraction.unwrap_or(0.05);
        if !(fraction >= 0.0) {
            return Err(Error::InvalidConfig("sensitivity.fraction must be >= 0".into()));
        }
        Ok(Scenario {
            seed: self.seed,
            output: self.output.as_ref().map(|p| self.base_dir.join(p)),
            trap,
            simulation,
            analysis,
            sensitivity_fraction: lit(fraction),
        })
    }
}

impl<T: Scalar> Scenario<T> {
    pub fn load(path: &Path) -> Result<Self> {
        RunConfig::load(path)?.resolve()
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.simulation.distribution.seed = seed;
    }

    /// SHA-256 over the canonical JSON of the resolved scenario.
    pub fn digest(&self) -> String {
        let json = serde_json::to_vec(self).expect("scenario serializes");
        hex::encode(Sha256::digest(&json))
    }
}
