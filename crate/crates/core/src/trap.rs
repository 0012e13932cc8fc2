//! Composition of beam intensities into the transverse trapping potential
//! U(r, φ) at a red-lattice antinode, plus minimum location, depth, harmonic
//! trap frequencies and parameter sensitivity.
//!
//! Beams at different wavelengths add incoherently. Beams flagged as a
//! standing wave at the same wavelength are summed coherently as fields.

use std::fmt;

use num_complex::Complex;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::atom::AtomSpecies;
use crate::error::{Error, Result};
use crate::fiber::{
    field_from_envelope, intensity_of, solve_he11, Direction, FiberSpec, FieldSample, ModeSolution,
};
use crate::linalg::linear_least_squares;
use crate::scalar::{lit, Scalar};
use crate::units::joules_to_microkelvin;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BeamRole {
    Red,
    Blue,
    Probe,
}

impl fmt::Display for BeamRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BeamRole::Red => "red",
            BeamRole::Blue => "blue",
            BeamRole::Probe => "probe",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeamSpec<T> {
    pub label: String,
    pub role: BeamRole,
    /// m.
    pub wavelength: T,
    /// W.
    pub power: T,
    /// rad.
    pub pol_angle: T,
    pub direction: Direction,
    /// Coherently combined with the counter-propagating beam of the same wavelength.
    pub standing_wave: bool,
    /// rad/s, probe only; positive is blue of the probe reference line.
    pub detuning: Option<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec<T> {
    /// Distance of the first radial sample from the fiber surface, m.
    pub r_offset: T,
    /// Radial extent of the grid, m.
    pub r_span: T,
    pub r_samples: usize,
    /// Samples over φ ∈ [0, 2π).
    pub phi_samples: usize,
}

impl<T: Scalar> Default for GridSpec<T> {
    fn default() -> Self {
        GridSpec { r_offset: T::zero(), r_span: lit(1.5e-6), r_samples: 600, phi_samples: 360 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrapConfig<T> {
    pub fiber: FiberSpec<T>,
    pub atom: AtomSpecies<T>,
    pub beams: Vec<BeamSpec<T>>,
    pub grid: GridSpec<T>,
    /// Axial plane of the transverse cut, m. `None` selects a red-lattice antinode.
    pub z_plane: Option<T>,
}

impl<T: Scalar> TrapConfig<T> {
    pub fn validate(&self) -> Result<()> {
        self.atom.validate()?;
        if self.beams.is_empty() {
            return Err(Error::InvalidConfig("beam list is empty".into()));
        }
        for beam in &self.beams {
            if !(beam.power >= T::zero()) {
                return Err(Error::InvalidConfig(format!("beam {}: power must be >= 0", beam.label)));
            }
            if !(beam.wavelength > T::zero()) {
                return Err(Error::InvalidConfig(format!("beam {}: wavelength must be > 0", beam.label)));
            }
            if beam.role == BeamRole::Probe && beam.detuning.is_none() {
                return Err(Error::InvalidConfig(format!("probe beam {} needs a detuning", beam.label)));
            }
            if beam.standing_wave {
                if beam.role != BeamRole::Red {
                    return Err(Error::InvalidConfig(format!(
                        "beam {}: only red beams form the standing-wave lattice",
                        beam.label
                    )));
                }
                let partner = self.beams.iter().any(|b| {
                    b.standing_wave && b.wavelength == beam.wavelength && b.direction != beam.direction
                });
                if !partner {
                    return Err(Error::InvalidConfig(format!(
                        "standing-wave beam {} has no counter-propagating partner",
                        beam.label
                    )));
                }
            }
        }
        let g = &self.grid;
        if g.r_samples < 10 || g.phi_samples < 40 || !(g.r_span > T::zero()) || g.r_offset < T::zero() {
            return Err(Error::Resolution(format!(
                "grid needs >= 10 radial and >= 40 azimuthal samples and a positive span (got {} x {})",
                g.r_samples, g.phi_samples
            )));
        }
        Ok(())
    }

    pub fn has_probe(&self) -> bool {
        self.beams.iter().any(|b| b.role == BeamRole::Probe)
    }

    pub fn without_probe(&self) -> Self {
        let mut c = self.clone();
        c.beams.retain(|b| b.role != BeamRole::Probe);
        c
    }

    pub fn without_beam(&self, label: &str) -> Self {
        let mut c = self.clone();
        c.beams.retain(|b| b.label != label);
        c
    }

    pub fn beam_mut(&mut self, label: &str) -> Option<&mut BeamSpec<T>> {
        self.beams.iter_mut().find(|b| b.label == label)
    }

    /// Multiplies every beam power by `factor`.
    pub fn scale_powers(&mut self, factor: T) {
        for b in &mut self.beams {
            b.power = b.power * factor;
        }
    }

    /// Adds `delta` to every polarization angle.
    pub fn rotate_polarizations(&mut self, delta: T) {
        for b in &mut self.beams {
            b.pol_angle = b.pol_angle + delta;
        }
    }

    /// SHA-256 of the canonical JSON serialization.
    pub fn digest(&self) -> String {
        let json = serde_json::to_vec(self).expect("trap config serializes");
        hex::encode(Sha256::digest(&json))
    }
}

#[derive(Debug, Clone)]
struct Member<T> {
    /// √P·e^{±iβz}.
    amplitude: Complex<T>,
    pol_angle: T,
    direction: Direction,
}

#[derive(Debug, Clone)]
struct BeamGroup<T> {
    labels: Vec<String>,
    role: BeamRole,
    mode: ModeSolution<T>,
    /// Potential per unit intensity, J·m²/W.
    coefficient: T,
    members: Vec<Member<T>>,
}

impl<T: Scalar> BeamGroup<T> {
    fn field(&self, r: T, phi: T) -> FieldSample<T> {
        let env = self.mode.radial_envelope(r).expect("r outside the fiber");
        let mut total = FieldSample::zero();
        for m in &self.members {
            total = total.add(&field_from_envelope(&env, phi, m.pol_angle, m.direction).scaled(m.amplitude));
        }
        total
    }
}

/// Potential value and gradient at one transverse point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PotentialSample<T> {
    pub u: T,
    pub du_dr: T,
    pub du_dphi: T,
}

/// A transverse potential the dynamics can integrate in.
pub trait TransversePotential<T: Scalar>: Sync {
    /// Innermost allowed radius (the fiber surface).
    fn inner_radius(&self) -> T;
    /// Atoms beyond this radius have escaped.
    fn outer_radius(&self) -> T {
        T::infinity()
    }
    /// U and its gradient; callers guarantee r ≥ `inner_radius()`.
    fn sample(&self, r: T, phi: T) -> PotentialSample<T>;
    fn value(&self, r: T, phi: T) -> T {
        self.sample(r, phi).u
    }
}

/// Solved modes and coefficients for one configuration, evaluable anywhere
/// outside the fiber.
#[derive(Debug, Clone)]
pub struct TrapModel<T> {
    radius: T,
    z_plane: T,
    groups: Vec<BeamGroup<T>>,
}

impl<T: Scalar> TrapModel<T> {
    pub fn new(config: &TrapConfig<T>) -> Result<Self> {
        config.validate()?;
        let mut modes: Vec<ModeSolution<T>> = Vec::new();
        let mut mode_for = |wavelength: T| -> Result<ModeSolution<T>> {
            if let Some(m) = modes.iter().find(|m| m.wavelength == wavelength) {
                return Ok(m.clone());
            }
            let m = solve_he11(&config.fiber, wavelength)?;
            modes.push(m.clone());
            Ok(m)
        };

        let z_plane = match config.z_plane {
            Some(z) => z,
            None => match config.beams.iter().find(|b| b.standing_wave) {
                Some(b) => mode_for(b.wavelength)?.lattice_period() / lit(2.0),
                None => T::zero(),
            },
        };

        let mut groups: Vec<BeamGroup<T>> = Vec::new();
        for beam in &config.beams {
            let mode = mode_for(beam.wavelength)?;
            let coefficient = match beam.role {
                BeamRole::Probe => config
                    .atom
                    .probe_potential_coefficient(beam.detuning.expect("validated probe detuning"))?,
                _ => config.atom.potential_per_intensity(beam.wavelength)?,
            };
            let phase = match beam.direction {
                Direction::Forward => mode.beta * z_plane,
                Direction::Backward => -mode.beta * z_plane,
            };
            let member = Member {
                amplitude: Complex::from_polar(beam.power.sqrt(), phase),
                pol_angle: beam.pol_angle,
                direction: beam.direction,
            };
            let coherent_with = if beam.standing_wave {
                groups.iter_mut().find(|g| {
                    g.mode.wavelength == beam.wavelength && g.labels.iter().any(|l| {
                        config.beams.iter().any(|b| &b.label == l && b.standing_wave)
                    })
                })
            } else {
                None
            };
            match coherent_with {
                Some(g) => {
                    g.labels.push(beam.label.clone());
                    g.members.push(member);
                }
                None => groups.push(BeamGroup {
                    labels: vec![beam.label.clone()],
                    role: beam.role,
                    mode,
                    coefficient,
                    members: vec![member],
                }),
            }
        }
        Ok(TrapModel { radius: config.fiber.radius, z_plane, groups })
    }

    pub fn radius(&self) -> T {
        self.radius
    }

    pub fn z_plane(&self) -> T {
        self.z_plane
    }

    pub fn modes(&self) -> Vec<&ModeSolution<T>> {
        self.groups.iter().map(|g| &g.mode).collect()
    }

    /// Largest outside decay constant among the beams, 1/m.
    pub fn max_decay_constant(&self) -> T {
        self.groups.iter().fold(T::zero(), |m, g| m.max(g.mode.q))
    }

    /// U(r, φ) in J; errors inside the fiber.
    pub fn potential(&self, r: T, phi: T) -> Result<T> {
        self.check_radius(r)?;
        Ok(self.sample(r, phi).u)
    }

    /// Contribution of the beam group containing `label`.
    pub fn group_potential(&self, label: &str, r: T, phi: T) -> Result<T> {
        self.check_radius(r)?;
        let g = self
            .groups
            .iter()
            .find(|g| g.labels.iter().any(|l| l == label))
            .ok_or_else(|| Error::InvalidConfig(format!("no beam labelled {label}")))?;
        Ok(g.coefficient * intensity_of(&g.field(r, phi)))
    }

    pub fn has_role(&self, role: BeamRole) -> bool {
        self.groups.iter().any(|g| g.role == role)
    }

    /// Summed intensity (W/m²) of the beams with `role`, with its gradient.
    pub fn intensity_sample(&self, role: BeamRole, r: T, phi: T) -> PotentialSample<T> {
        let half_eps_c = lit::<T>(0.5 * crate::units::VACUUM_PERMITTIVITY * crate::units::SPEED_OF_LIGHT);
        let mut out = PotentialSample { u: T::zero(), du_dr: T::zero(), du_dphi: T::zero() };
        for g in self.groups.iter().filter(|g| g.role == role) {
            let f = g.field(r, phi);
            let (dr, dphi) = f.norm_sqr_gradient();
            out.u = out.u + half_eps_c * f.norm_sqr();
            out.du_dr = out.du_dr + half_eps_c * dr;
            out.du_dphi = out.du_dphi + half_eps_c * dphi;
        }
        out
    }

    fn check_radius(&self, r: T) -> Result<()> {
        if r < self.radius {
            return Err(Error::Domain(format!(
                "r = {:.4e} m lies inside the fiber",
                r.to_f64_lossy()
            )));
        }
        Ok(())
    }

    fn row(&self, r: T, phis: &[T]) -> Vec<T> {
        let envs: Vec<_> = self
            .groups
            .iter()
            .map(|g| g.mode.radial_envelope(r).expect("grid starts at the surface"))
            .collect();
        phis.iter()
            .map(|&phi| {
                self.groups
                    .iter()
                    .zip(&envs)
                    .map(|(g, env)| {
                        let mut f = FieldSample::zero();
                        for m in &g.members {
                            f = f.add(&field_from_envelope(env, phi, m.pol_angle, m.direction).scaled(m.amplitude));
                        }
                        g.coefficient * intensity_of(&f)
                    })
                    .sum()
            })
            .collect()
    }
}

impl<T: Scalar> TransversePotential<T> for TrapModel<T> {
    fn inner_radius(&self) -> T {
        self.radius
    }

    fn sample(&self, r: T, phi: T) -> PotentialSample<T> {
        let half_eps_c = lit::<T>(0.5 * crate::units::VACUUM_PERMITTIVITY * crate::units::SPEED_OF_LIGHT);
        let mut out = PotentialSample { u: T::zero(), du_dr: T::zero(), du_dphi: T::zero() };
        for g in &self.groups {
            let f = g.field(r, phi);
            let scale = g.coefficient * half_eps_c;
            let (dr, dphi) = f.norm_sqr_gradient();
            out.u = out.u + scale * f.norm_sqr();
            out.du_dr = out.du_dr + scale * dr;
            out.du_dphi = out.du_dphi + scale * dphi;
        }
        out
    }
}

/// U(r, φ) sampled on a polar grid; `values[ir * phi.len() + ip]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PotentialField<T> {
    pub radius: T,
    pub r: Vec<T>,
    pub phi: Vec<T>,
    pub values: Vec<T>,
    pub config_digest: String,
}

impl<T: Scalar> PotentialField<T> {
    pub fn value(&self, ir: usize, ip: usize) -> T {
        self.values[ir * self.phi.len() + ip]
    }

    pub fn n_r(&self) -> usize {
        self.r.len()
    }

    pub fn n_phi(&self) -> usize {
        self.phi.len()
    }

    pub fn phi_step(&self) -> T {
        lit::<T>(2.0) * T::PI() / T::from_usize_lossy(self.phi.len())
    }

    /// Builds a field from a closure, e.g. for synthetic tests.
    pub fn from_fn(radius: T, r: Vec<T>, phi: Vec<T>, f: impl Fn(T, T) -> T) -> Self {
        let values = r.iter().flat_map(|&ri| phi.iter().map(move |&pj| (ri, pj))).map(|(a, b)| f(a, b)).collect();
        PotentialField { radius, r, phi, values, config_digest: String::new() }
    }
}

/// Evaluates the total potential on the configured grid.
pub fn build_potential<T: Scalar>(config: &TrapConfig<T>) -> Result<PotentialField<T>> {
    let model = TrapModel::new(config)?;
    build_potential_with(config, &model)
}

fn build_potential_with<T: Scalar>(config: &TrapConfig<T>, model: &TrapModel<T>) -> Result<PotentialField<T>> {
    let g = &config.grid;
    let dr = g.r_span / T::from_usize_lossy(g.r_samples - 1);
    // at least 10 samples per shortest intensity decay length 1/(2q)
    let shortest = T::one() / (lit::<T>(2.0) * model.max_decay_constant());
    if dr * lit(10.0) > shortest {
        return Err(Error::Resolution(format!(
            "radial step {:.3e} m resolves the {:.3e} m decay length with fewer than 10 samples",
            dr.to_f64_lossy(),
            shortest.to_f64_lossy()
        )));
    }
    let r0 = config.fiber.radius + g.r_offset;
    let r: Vec<T> = (0..g.r_samples).map(|i| r0 + dr * T::from_usize_lossy(i)).collect();
    let dphi = lit::<T>(2.0) * T::PI() / T::from_usize_lossy(g.phi_samples);
    let phi: Vec<T> = (0..g.phi_samples).map(|j| dphi * T::from_usize_lossy(j)).collect();

    let rows: Vec<Vec<T>> = r.par_iter().map(|&ri| model.row(ri, &phi)).collect();
    let values: Vec<T> = rows.into_iter().flatten().collect();
    if let Some(bad) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::Domain(format!("non-finite potential at grid index {bad}")));
    }
    let max_abs = values.iter().fold(T::zero(), |m, v| m.max(v.abs()));
    let outer = &values[(g.r_samples - 1) * g.phi_samples..];
    let outer_abs = outer.iter().fold(T::zero(), |m, v| m.max(v.abs()));
    if max_abs > T::zero() && outer_abs > lit::<T>(0.02) * max_abs {
        return Err(Error::Resolution(format!(
            "potential at the outer boundary is {:.2}% of its peak; extend the radial span",
            (outer_abs / max_abs).to_f64_lossy() * 100.0
        )));
    }
    Ok(PotentialField { radius: config.fiber.radius, r, phi, values, config_digest: config.digest() })
}

/// Grid-refined potential minimum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Minimum<T> {
    pub r: T,
    /// Reduced to (−π/2, π/2] using the π-periodicity of the potential.
    pub phi: T,
    pub u: T,
    pub ir: usize,
    pub ip: usize,
}

/// Wraps an angle into (−π/2, π/2].
pub fn reduce_half_turn<T: Scalar>(phi: T) -> T {
    let pi = T::PI();
    let mut p = phi - pi * (phi / pi).round();
    if p <= -pi / lit(2.0) {
        p = p + pi;
    }
    p
}

/// Lowest grid sample, with no boundary check or refinement.
pub fn grid_argmin<T: Scalar>(field: &PotentialField<T>) -> Minimum<T> {
    let (idx, &u) = field
        .values
        .iter()
        .enumerate()
        .fold((0, &field.values[0]), |best, cur| if cur.1 < best.1 { cur } else { best });
    let ir = idx / field.n_phi();
    let ip = idx % field.n_phi();
    Minimum { r: field.r[ir], phi: reduce_half_turn(field.phi[ip]), u, ir, ip }
}

fn parabolic_vertex<T: Scalar>(minus: T, centre: T, plus: T) -> (T, T) {
    let curvature = minus - lit::<T>(2.0) * centre + plus;
    if !(curvature > T::zero()) {
        return (T::zero(), T::zero());
    }
    let offset = (minus - plus) / (lit::<T>(2.0) * curvature);
    let correction = -(minus - plus) * (minus - plus) / (lit::<T>(8.0) * curvature);
    (offset, correction)
}

/// Grid argmin refined by three-point quadratic interpolation in r and φ.
pub fn find_minimum<T: Scalar>(field: &PotentialField<T>) -> Result<Minimum<T>> {
    let coarse = grid_argmin(field);
    let (ir, ip) = (coarse.ir, coarse.ip);
    if ir == 0 || ir + 1 == field.n_r() {
        return Err(Error::NoTrap(format!(
            "potential minimum lies on the {} radial boundary",
            if ir == 0 { "inner" } else { "outer" }
        )));
    }
    if !(coarse.u < T::zero()) {
        return Err(Error::NoTrap("potential has no negative minimum".into()));
    }
    let np = field.n_phi();
    let (dr_off, dr_corr) =
        parabolic_vertex(field.value(ir - 1, ip), coarse.u, field.value(ir + 1, ip));
    let (dp_off, dp_corr) =
        parabolic_vertex(field.value(ir, (ip + np - 1) % np), coarse.u, field.value(ir, (ip + 1) % np));
    let dr = field.r[1] - field.r[0];
    Ok(Minimum {
        r: field.r[ir] + dr_off * dr,
        phi: reduce_half_turn(field.phi[ip] + dp_off * field.phi_step()),
        u: coarse.u + dr_corr + dp_corr,
        ir,
        ip,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrapDepth<T> {
    /// J.
    pub depth: T,
    pub depth_uk: T,
    /// Highest potential between the minimum and the surface along its radial ray.
    pub inner_barrier: T,
    /// Highest potential between the minimum and the outer boundary along the ray.
    pub outer_escape: T,
}

/// min(inner barrier, outer escape) − U_min along the minimum's radial ray.
pub fn trap_depth<T: Scalar>(field: &PotentialField<T>, minimum: &Minimum<T>) -> TrapDepth<T> {
    let column = |range: std::ops::Range<usize>| {
        range.map(|i| field.value(i, minimum.ip)).fold(T::neg_infinity(), |m, v| m.max(v))
    };
    let inner = if minimum.ir == 0 { T::infinity() } else { column(0..minimum.ir) };
    let outer = if minimum.ir + 1 >= field.n_r() {
        T::infinity()
    } else {
        column(minimum.ir + 1..field.n_r())
    };
    let depth = inner.min(outer) - minimum.u;
    TrapDepth { depth, depth_uk: joules_to_microkelvin(depth), inner_barrier: inner, outer_escape: outer }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrapFrequencies<T> {
    /// Hz.
    pub nu_r: T,
    pub nu_phi: T,
    /// ∂²U/∂x² along r and along the arc r_min·φ, J/m².
    pub k_r: T,
    pub k_phi: T,
    /// RMS misfit of the harmonic part over the window, divided by the window energy.
    pub fit_residual: T,
    pub samples: usize,
}

/// Default fit window: samples within this fraction of the depth above U_min.
pub const HARMONIC_WINDOW_FRACTION: f64 = 0.1;

/// Highest total degree of the polynomial surface used by [`fit_harmonic`].
pub const SURFACE_DEGREE: usize = 4;

fn monomials() -> Vec<(i32, i32)> {
    (0..=SURFACE_DEGREE as i32).flat_map(|d| (0..=d).map(move |j| (d - j, j))).collect()
}

/// Harmonic constants at the minimum from samples `(r, φ, U)`.
///
/// A full polynomial surface of total degree [`SURFACE_DEGREE`] in
/// x = r − r_min and y = r_min·(φ − φ_min) is fitted, so cubic and quartic
/// anharmonicity inside the window does not leak into the curvatures; k_r and
/// k_φ are twice the x² and y² coefficients. `fit_residual` is the RMS misfit
/// of the harmonic (degree ≤ 2) part alone over the window energy.
pub fn fit_harmonic<T: Scalar>(
    samples: &[(T, T, T)],
    minimum: &Minimum<T>,
    mass: T,
    window_energy: T,
) -> Result<TrapFrequencies<T>> {
    let terms = monomials();
    if samples.len() < 2 * terms.len() {
        return Err(Error::Resolution(format!(
            "only {} samples inside the harmonic-fit window (need >= {})",
            samples.len(),
            2 * terms.len()
        )));
    }
    let local: Vec<(T, T, T)> = samples
        .iter()
        .map(|&(r, phi, u)| (r - minimum.r, minimum.r * reduce_half_turn(phi - minimum.phi), u - minimum.u))
        .collect();
    let sx = local.iter().fold(T::zero(), |m, s| m.max(s.0.abs()));
    let sy = local.iter().fold(T::zero(), |m, s| m.max(s.1.abs()));
    let su = local.iter().fold(T::zero(), |m, s| m.max(s.2.abs()));
    if sx == T::zero() || sy == T::zero() || su == T::zero() {
        return Err(Error::Resolution("harmonic-fit window is degenerate".into()));
    }
    let design: Vec<Vec<T>> = local
        .iter()
        .map(|&(x, y, _)| {
            let (x, y) = (x / sx, y / sy);
            terms.iter().map(|&(i, j)| x.powi(i) * y.powi(j)).collect()
        })
        .collect();
    let target: Vec<T> = local.iter().map(|s| s.2 / su).collect();
    let c = linear_least_squares(&design, &target)
        .ok_or_else(|| Error::Resolution("harmonic fit is singular".into()))?;
    let coeff = |i: i32, j: i32| c[terms.iter().position(|&t| t == (i, j)).expect("monomial present")];
    let two = lit::<T>(2.0);
    let k_r = two * coeff(2, 0) * su / (sx * sx);
    let k_phi = two * coeff(0, 2) * su / (sy * sy);
    if !(k_r > T::zero()) {
        return Err(Error::Saddle { direction: "r", curvature: k_r.to_f64_lossy() });
    }
    if !(k_phi > T::zero()) {
        return Err(Error::Saddle { direction: "phi", curvature: k_phi.to_f64_lossy() });
    }
    let sq: T = design
        .iter()
        .zip(&target)
        .map(|(row, &t)| {
            let fit: T = row
                .iter()
                .zip(&c)
                .zip(&terms)
                .filter(|(_, &(i, j))| i + j <= 2)
                .map(|((a, b), _)| *a * *b)
                .sum();
            (fit - t) * (fit - t)
        })
        .sum();
    let rms = (sq / T::from_usize_lossy(design.len())).sqrt() * su;
    let nu = |k: T| (k / mass).sqrt() / (two * T::PI());
    Ok(TrapFrequencies {
        nu_r: nu(k_r),
        nu_phi: nu(k_phi),
        k_r,
        k_phi,
        fit_residual: rms / window_energy,
        samples: design.len(),
    })
}

/// Harmonic fit over grid samples lying within `window_fraction · depth` of
/// the minimum and within a quarter turn of it.
pub fn trap_frequencies<T: Scalar>(
    field: &PotentialField<T>,
    minimum: &Minimum<T>,
    depth: T,
    atom: &AtomSpecies<T>,
    window_fraction: T,
) -> Result<TrapFrequencies<T>> {
    let window = window_fraction * depth;
    let np = field.n_phi();
    let mut samples = Vec::new();
    for ir in 0..field.n_r() {
        for ip in 0..np {
            let d = (ip as isize - minimum.ip as isize).unsigned_abs();
            if d.min(np - d) > np / 4 {
                continue;
            }
            let u = field.value(ir, ip);
            if u - minimum.u < window {
                samples.push((field.r[ir], field.phi[ip], u));
            }
        }
    }
    fit_harmonic(&samples, minimum, atom.mass, window)
}

/// Harmonic fit of a callable potential on a local 21×21 box sized from
/// finite-difference curvature estimates so its edges reach the window energy.
pub fn trap_frequencies_callable<T: Scalar, P: TransversePotential<T> + ?Sized>(
    potential: &P,
    minimum: &Minimum<T>,
    depth: T,
    atom: &AtomSpecies<T>,
    window_fraction: T,
) -> Result<TrapFrequencies<T>> {
    let (k_r, k_phi) = finite_difference_curvature(potential, minimum.r, minimum.phi);
    if !(k_r > T::zero()) {
        return Err(Error::Saddle { direction: "r", curvature: k_r.to_f64_lossy() });
    }
    if !(k_phi > T::zero()) {
        return Err(Error::Saddle { direction: "phi", curvature: k_phi.to_f64_lossy() });
    }
    let window = window_fraction * depth;
    let two = lit::<T>(2.0);
    let half_x = (two * window / k_r).sqrt();
    let half_y = (two * window / k_phi).sqrt();
    let n = 10usize;
    let mut samples = Vec::with_capacity((2 * n + 1) * (2 * n + 1));
    let centre = Minimum { u: potential.value(minimum.r, minimum.phi), ..*minimum };
    for i in 0..=2 * n {
        for j in 0..=2 * n {
            let fx = (T::from_usize_lossy(i) - T::from_usize_lossy(n)) / T::from_usize_lossy(n);
            let fy = (T::from_usize_lossy(j) - T::from_usize_lossy(n)) / T::from_usize_lossy(n);
            let r = (minimum.r + fx * half_x).max(potential.inner_radius());
            let phi = minimum.phi + fy * half_y / minimum.r;
            samples.push((r, phi, potential.value(r, phi)));
        }
    }
    fit_harmonic(&samples, &centre, atom.mass, window)
}

/// Central second differences (∂²U/∂r², r⁻²·∂²U/∂φ²) at (r, φ).
pub fn finite_difference_curvature<T: Scalar, P: TransversePotential<T> + ?Sized>(
    potential: &P,
    r: T,
    phi: T,
) -> (T, T) {
    let h = lit::<T>(1e-9);
    let dphi = h / r;
    let u0 = potential.value(r, phi);
    let two = lit::<T>(2.0);
    let k_r = (potential.value(r + h, phi) - two * u0 + potential.value(r - h, phi)) / (h * h);
    let k_phi = (potential.value(r, phi + dphi) - two * u0 + potential.value(r, phi - dphi)) / (h * h);
    (k_r, k_phi)
}

/// Summary of one trap configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrapReport<T> {
    pub schema: String,
    pub config_digest: String,
    /// m.
    pub r_min: T,
    pub surface_distance: T,
    /// rad.
    pub phi_min: T,
    /// J.
    pub u_min: T,
    pub u_min_uk: T,
    pub depth: T,
    pub depth_uk: T,
    /// Hz.
    pub nu_r: T,
    pub nu_phi: T,
    pub fit_residual: T,
}

pub const TRAP_REPORT_SCHEMA: &str = "nanotrap.trap-report/1";

/// Everything derived from one configuration's grid.
#[derive(Debug, Clone)]
pub struct TrapAnalysis<T> {
    pub field: PotentialField<T>,
    pub minimum: Minimum<T>,
    pub depth: TrapDepth<T>,
    pub frequencies: TrapFrequencies<T>,
    pub report: TrapReport<T>,
}

pub fn analyze_trap<T: Scalar>(config: &TrapConfig<T>) -> Result<TrapAnalysis<T>> {
    let model = TrapModel::new(config)?;
    let field = build_potential_with(config, &model)?;
    let minimum = find_minimum(&field)?;
    let depth = trap_depth(&field, &minimum);
    let frequencies =
        trap_frequencies(&field, &minimum, depth.depth, &config.atom, lit(HARMONIC_WINDOW_FRACTION))?;
    let report = TrapReport {
        schema: TRAP_REPORT_SCHEMA.to_string(),
        config_digest: field.config_digest.clone(),
        r_min: minimum.r,
        surface_distance: minimum.r - config.fiber.radius,
        phi_min: minimum.phi,
        u_min: minimum.u,
        u_min_uk: joules_to_microkelvin(minimum.u),
        depth: depth.depth,
        depth_uk: depth.depth_uk,
        nu_r: frequencies.nu_r,
        nu_phi: frequencies.nu_phi,
        fit_residual: frequencies.fit_residual,
    };
    Ok(TrapAnalysis { field, minimum, depth, frequencies, report })
}

/// Signed radial shift of the minimum (positive outward) when going from
/// `without` to `with`.
pub fn probe_displacement<T: Scalar>(without: &TrapConfig<T>, with: &TrapConfig<T>) -> Result<T> {
    let a = find_minimum(&build_potential(without)?)?;
    let b = find_minimum(&build_potential(with)?)?;
    Ok(b.r - a.r)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SensitivityParameter {
    Power,
    PolAngle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityRun<T> {
    pub label: String,
    /// (beam label, parameter, sign) for every perturbation applied.
    pub perturbations: Vec<(String, SensitivityParameter, i8)>,
    pub nu_r: Option<T>,
    pub nu_phi: Option<T>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityReport<T> {
    pub schema: String,
    pub config_digest: String,
    pub fraction: T,
    pub baseline_nu_r: T,
    pub baseline_nu_phi: T,
    pub runs: Vec<SensitivityRun<T>>,
    pub nu_r_min: T,
    pub nu_r_max: T,
    pub nu_phi_min: T,
    pub nu_phi_max: T,
    /// (max − min)/2 over the one-at-a-time runs, Hz; the quoted uncertainty.
    pub half_spread_r: T,
    pub half_spread_phi: T,
    /// Same, including the corners where every parameter pushes the same way.
    pub worst_case_half_spread_r: T,
    pub worst_case_half_spread_phi: T,
}

pub const SENSITIVITY_SCHEMA: &str = "nanotrap.sensitivity/1";

type Perturbation = (String, SensitivityParameter, i8);

fn perturbed<T: Scalar>(base: &TrapConfig<T>, fraction: T, perturbations: &[Perturbation]) -> TrapConfig<T> {
    let mut c = base.clone();
    for (label, param, sign) in perturbations {
        let s = if *sign > 0 { fraction } else { -fraction };
        let beam = c.beam_mut(label).expect("perturbation names an existing beam");
        match param {
            SensitivityParameter::Power => beam.power = beam.power * (T::one() + s),
            // angles move by the fraction of a quarter turn
            SensitivityParameter::PolAngle => beam.pol_angle = beam.pol_angle + s * T::FRAC_PI_2(),
        }
    }
    c
}

fn run_frequencies<T: Scalar>(config: &TrapConfig<T>) -> Result<(T, T)> {
    let a = analyze_trap(config)?;
    Ok((a.frequencies.nu_r, a.frequencies.nu_phi))
}

/// Varies every beam power by ±fraction and every polarization angle by
/// ±fraction·π/2, one at a time, then evaluates the four corners built from
/// the one-at-a-time signs that push each frequency up or down. The min/max
/// and half-spreads come from the one-at-a-time runs; the aligned corners
/// only enter the worst-case spreads.
pub fn sensitivity_analysis<T: Scalar>(config: &TrapConfig<T>, fraction: T) -> Result<SensitivityReport<T>> {
    let (base_r, base_phi) = run_frequencies(config)?;
    let params: Vec<(String, SensitivityParameter)> = config
        .beams
        .iter()
        .flat_map(|b| {
            [(b.label.clone(), SensitivityParameter::Power), (b.label.clone(), SensitivityParameter::PolAngle)]
        })
        .collect();

    let single: Vec<Vec<Perturbation>> = params
        .iter()
        .flat_map(|(l, p)| [1i8, -1].map(|s| vec![(l.clone(), *p, s)]))
        .collect();
    let evaluate = |perts: &Vec<Perturbation>| run_frequencies(&perturbed(config, fraction, perts));
    let single_results: Vec<Result<(T, T)>> = single.par_iter().map(evaluate).collect();

    // corner sign per parameter: the sign that moved the frequency in the wanted direction
    let corner = |pick: &dyn Fn((T, T)) -> T, upward: bool| -> Vec<Perturbation> {
        params
            .iter()
            .enumerate()
            .map(|(i, (l, p))| {
                let plus = single_results[2 * i].as_ref().ok().map(|v| pick(*v));
                let minus = single_results[2 * i + 1].as_ref().ok().map(|v| pick(*v));
                let sign = match (plus, minus) {
                    (Some(a), Some(b)) => {
                        if (a >= b) == upward {
                            1
                        } else {
                            -1
                        }
                    }
                    (Some(_), None) => 1,
                    _ => -1,
                };
                (l.clone(), *p, sign)
            })
            .collect()
    };
    let by_r = |v: (T, T)| v.0;
    let by_phi = |v: (T, T)| v.1;
    let corners = vec![
        ("corner_nu_r_max", corner(&by_r, true)),
        ("corner_nu_r_min", corner(&by_r, false)),
        ("corner_nu_phi_max", corner(&by_phi, true)),
        ("corner_nu_phi_min", corner(&by_phi, false)),
    ];
    let corner_results: Vec<Result<(T, T)>> = corners.par_iter().map(|(_, p)| evaluate(p)).collect();

    let mut runs = Vec::new();
    let mut record = |label: String, perts: Vec<Perturbation>, res: &Result<(T, T)>| {
        runs.push(match res {
            Ok((r, p)) => SensitivityRun { label, perturbations: perts, nu_r: Some(*r), nu_phi: Some(*p), error: None },
            Err(e) => SensitivityRun { label, perturbations: perts, nu_r: None, nu_phi: None, error: Some(e.to_string()) },
        });
    };
    for (perts, res) in single.into_iter().zip(&single_results) {
        let (l, p, s) = &perts[0];
        let name = format!("{}_{}_{}", l, if *p == SensitivityParameter::Power { "power" } else { "pol" }, if *s > 0 { "plus" } else { "minus" });
        record(name, perts.clone(), res);
    }
    for ((name, perts), res) in corners.into_iter().zip(&corner_results) {
        record(name.to_string(), perts, res);
    }

    let lo = |v: &[T]| v.iter().fold(T::infinity(), |m, x| m.min(*x));
    let hi = |v: &[T]| v.iter().fold(T::neg_infinity(), |m, x| m.max(*x));
    let collect = |set: &[Result<(T, T)>]| -> (Vec<T>, Vec<T>) {
        let ok: Vec<(T, T)> = set.iter().filter_map(|r| r.as_ref().ok().copied()).collect();
        (
            std::iter::once(base_r).chain(ok.iter().map(|v| v.0)).collect(),
            std::iter::once(base_phi).chain(ok.iter().map(|v| v.1)).collect(),
        )
    };
    let (r_vals, p_vals) = collect(&single_results);
    let (mut rc_vals, mut pc_vals) = collect(&corner_results);
    rc_vals.extend(&r_vals);
    pc_vals.extend(&p_vals);
    let two = lit::<T>(2.0);
    Ok(SensitivityReport {
        schema: SENSITIVITY_SCHEMA.to_string(),
        config_digest: config.digest(),
        fraction,
        baseline_nu_r: base_r,
        baseline_nu_phi: base_phi,
        nu_r_min: lo(&r_vals),
        nu_r_max: hi(&r_vals),
        nu_phi_min: lo(&p_vals),
        nu_phi_max: hi(&p_vals),
        half_spread_r: (hi(&r_vals) - lo(&r_vals)) / two,
        half_spread_phi: (hi(&p_vals) - lo(&p_vals)) / two,
        worst_case_half_spread_r: (hi(&rc_vals) - lo(&rc_vals)) / two,
        worst_case_half_spread_phi: (hi(&pc_vals) - lo(&pc_vals)) / two,
        runs,
    })
}
