//! Exact HE11 solutions of a step-index cylinder and the quasi-linearly
//! polarized evanescent fields built from them.
//!
//! Notation: u = h·a, w = q·a with h² = (n₁k)² − β², q² = β² − (n₂k)². The
//! hybrid parameter s fixes the E_z/H_z mix of the mode. Outside the fiber the
//! circularly polarized (l = +1) components are
//!
//! e_r = i·A·(β/2q)·(J₁(u)/K₁(w))·[(1−s)K₀(qr) + (1+s)K₂(qr)]
//! e_φ =  −A·(β/2q)·(J₁(u)/K₁(w))·[(1−s)K₀(qr) − (1+s)K₂(qr)]
//! e_z =    A·(J₁(u)/K₁(w))·K₁(qr)
//!
//! and the quasi-linear mode with polarization axis φ₀ is the equal-weight
//! superposition of l = ±1, giving cos(φ−φ₀) and sin(φ−φ₀) envelopes.

use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{lit, Scalar};
use crate::special::{bessel_j_orders, bessel_k_orders, integrate};
use crate::units::{SPEED_OF_LIGHT, VACUUM_PERMEABILITY, VACUUM_PERMITTIVITY};

/// First zero of J₀: the TE01/TM01 cutoff.
pub const SINGLE_MODE_CUTOFF: f64 = 2.404_825_557_695_773;
const BRACKET_EPS: f64 = 1e-9;
const SCAN_POINTS: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum CoreIndex<T> {
    Fixed(T),
    /// (wavelength m, index) pairs, linearly interpolated.
    Table(Vec<(T, T)>),
}

impl<T: Scalar> CoreIndex<T> {
    /// Fused silica (Malitson Sellmeier) at 750, 780.24, 794.98 and 1064 nm.
    pub fn fused_silica() -> Self {
        CoreIndex::Table(vec![
            (lit(750e-9), lit(1.454_237)),
            (lit(780.241_209_686e-9), lit(1.453_667)),
            (lit(794.978_851_156e-9), lit(1.453_405)),
            (lit(1064e-9), lit(1.449_631)),
        ])
    }

    pub fn at(&self, wavelength: T) -> Result<T> {
        match self {
            CoreIndex::Fixed(n) => Ok(*n),
            CoreIndex::Table(rows) => {
                let mut rows = rows.clone();
                rows.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite table"));
                let tol = lit::<T>(1e-12);
                for pair in rows.windows(2) {
                    let (l0, n0) = pair[0];
                    let (l1, n1) = pair[1];
                    if wavelength >= l0 - tol && wavelength <= l1 + tol {
                        let t = ((wavelength - l0) / (l1 - l0)).max(T::zero()).min(T::one());
                        return Ok(n0 + (n1 - n0) * t);
                    }
                }
                if let [(l0, n0)] = rows.as_slice() {
                    if (wavelength - *l0).abs() <= tol {
                        return Ok(*n0);
                    }
                }
                Err(Error::InvalidConfig(format!(
                    "no core index for {:.3} nm (outside the index table)",
                    wavelength.to_f64_lossy() * 1e9
                )))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiberSpec<T> {
    /// m.
    pub radius: T,
    pub core_index: CoreIndex<T>,
    pub cladding_index: T,
}

impl<T: Scalar> FiberSpec<T> {
    pub fn silica_in_vacuum(radius: T) -> Self {
        FiberSpec { radius, core_index: CoreIndex::fused_silica(), cladding_index: T::one() }
    }

    pub fn validate_at(&self, wavelength: T) -> Result<T> {
        if !(self.radius > T::zero()) {
            return Err(Error::InvalidConfig("fiber radius must be positive".into()));
        }
        if !(wavelength > T::zero()) {
            return Err(Error::InvalidConfig("wavelength must be positive".into()));
        }
        let n1 = self.core_index.at(wavelength)?;
        if !(self.cladding_index >= T::one()) || !(n1 > self.cladding_index) {
            return Err(Error::InvalidConfig(format!(
                "need core index > cladding index >= 1, got {n1} and {}",
                self.cladding_index
            )));
        }
        Ok(n1)
    }

    pub fn v_number(&self, wavelength: T) -> Result<T> {
        let n1 = self.validate_at(wavelength)?;
        let n2 = self.cladding_index;
        let k = lit::<T>(2.0) * T::PI() / wavelength;
        Ok(k * self.radius * (n1 * n1 - n2 * n2).sqrt())
    }
}

/// Propagation direction along the fiber axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Forward,
    Backward,
}

impl Direction {
    fn sign<T: Scalar>(self) -> T {
        match self {
            Direction::Forward => T::one(),
            Direction::Backward => -T::one(),
        }
    }
}

/// Solved HE11 mode at one wavelength, normalized to 1 W.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeSolution<T> {
    pub wavelength: T,
    pub radius: T,
    pub core_index: T,
    pub cladding_index: T,
    pub v_number: T,
    /// rad/m.
    pub beta: T,
    /// Outside decay constant, 1/m.
    pub q: T,
    /// Inside transverse wavenumber, 1/m.
    pub h: T,
    pub hybrid_parameter: T,
    /// J₁(ha)/K₁(qa), matching the inside and outside E_z at the surface.
    pub bessel_ratio: T,
    /// Amplitude A (V/m) carrying 1 W in either circular or quasi-linear polarization.
    pub power_norm: T,
}

/// Real radial envelopes of the quasi-linear mode outside the fiber, per √W:
/// e_r = i·σ·radial·cos(φ−φ₀), e_φ = i·σ·azimuthal·sin(φ−φ₀), e_z = axial·cos(φ−φ₀),
/// with σ = ±1 for forward/backward propagation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RadialEnvelope<T> {
    pub radial: T,
    pub azimuthal: T,
    pub axial: T,
    pub d_radial: T,
    pub d_azimuthal: T,
    pub d_axial: T,
}

/// Complex field components in the local (r̂, φ̂, ẑ) basis with their
/// derivatives with respect to r and φ.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldSample<T> {
    pub e: [Complex<T>; 3],
    pub d_r: [Complex<T>; 3],
    pub d_phi: [Complex<T>; 3],
}

impl<T: Scalar> FieldSample<T> {
    pub fn zero() -> Self {
        let z = Complex::new(T::zero(), T::zero());
        FieldSample { e: [z; 3], d_r: [z; 3], d_phi: [z; 3] }
    }

    pub fn scaled(&self, factor: Complex<T>) -> Self {
        let m = |a: [Complex<T>; 3]| [a[0] * factor, a[1] * factor, a[2] * factor];
        FieldSample { e: m(self.e), d_r: m(self.d_r), d_phi: m(self.d_phi) }
    }

    pub fn add(&self, other: &Self) -> Self {
        let s = |a: [Complex<T>; 3], b: [Complex<T>; 3]| [a[0] + b[0], a[1] + b[1], a[2] + b[2]];
        FieldSample { e: s(self.e, other.e), d_r: s(self.d_r, other.d_r), d_phi: s(self.d_phi, other.d_phi) }
    }

    /// |E|².
    pub fn norm_sqr(&self) -> T {
        self.e.iter().map(|c| c.norm_sqr()).sum()
    }

    /// (∂|E|²/∂r, ∂|E|²/∂φ).
    pub fn norm_sqr_gradient(&self) -> (T, T) {
        let two = lit::<T>(2.0);
        let dr: T = (0..3).map(|i| (self.e[i].conj() * self.d_r[i]).re).sum();
        let dphi: T = (0..3).map(|i| (self.e[i].conj() * self.d_phi[i]).re).sum();
        (two * dr, two * dphi)
    }
}

/// Time-averaged intensity (ε₀c/2)|E|² for a field sample.
pub fn intensity_of<T: Scalar>(field: &FieldSample<T>) -> T {
    lit::<T>(0.5 * VACUUM_PERMITTIVITY * SPEED_OF_LIGHT) * field.norm_sqr()
}

struct Characteristic<T> {
    k: T,
    n1: T,
    n2: T,
    radius: T,
}

impl<T: Scalar> Characteristic<T> {
    fn wavenumbers(&self, beta: T) -> (T, T) {
        let h = ((self.n1 * self.k).powi(2) - beta * beta).sqrt();
        let q = (beta * beta - (self.n2 * self.k).powi(2)).sqrt();
        (h, q)
    }

    /// J₀(u)/(uJ₁(u)) − [right-hand side of the HE11 eigenvalue equation].
    fn eval(&self, beta: T) -> T {
        let (h, q) = self.wavenumbers(beta);
        let u = h * self.radius;
        let w = q * self.radius;
        let j = bessel_j_orders(1, u);
        let kk = bessel_k_orders(1, w);
        let k_log_deriv = (-kk[0] - kk[1] / w) / (w * kk[1]);
        let n1s = self.n1 * self.n1;
        let n2s = self.n2 * self.n2;
        let two = lit::<T>(2.0);
        let inv_u2 = T::one() / (u * u);
        let inv_w2 = T::one() / (w * w);
        let lhs = j[0] / (u * j[1]);
        let contrast = (n1s - n2s) / (two * n1s);
        let root = (contrast * contrast * k_log_deriv * k_log_deriv
            + (beta * beta / (n1s * self.k * self.k)) * (inv_w2 + inv_u2).powi(2))
        .sqrt();
        let rhs = -(n1s + n2s) / (two * n1s) * k_log_deriv + inv_u2 - root;
        lhs - rhs
    }
}

/// Solves the HE11 eigenvalue equation by a dense scan of the guided bracket
/// followed by bisection.
pub fn solve_he11<T: Scalar>(fiber: &FiberSpec<T>, wavelength: T) -> Result<ModeSolution<T>> {
    let n1 = fiber.validate_at(wavelength)?;
    let n2 = fiber.cladding_index;
    let v = fiber.v_number(wavelength)?;
    if v >= lit(SINGLE_MODE_CUTOFF) {
        return Err(Error::Multimode {
            wavelength_nm: wavelength.to_f64_lossy() * 1e9,
            v_number: v.to_f64_lossy(),
        });
    }
    let k = lit::<T>(2.0) * T::PI() / wavelength;
    let ch = Characteristic { k, n1, n2, radius: fiber.radius };
    // 1e-9 is below f32 resolution; keep the bracket ends a few ulps inside
    let eps = lit::<T>(BRACKET_EPS).max(lit::<T>(8.0) * T::epsilon());
    let lo = n2 * k * (T::one() + eps);
    let hi = n1 * k * (T::one() - eps);
    let no_root = || Error::NoGuidedMode { wavelength_nm: wavelength.to_f64_lossy() * 1e9 };
    if !(lo < hi) {
        return Err(no_root());
    }

    let step = (hi - lo) / T::from_usize_lossy(SCAN_POINTS - 1);
    let samples: Vec<(T, T)> = (0..SCAN_POINTS)
        .map(|i| {
            let b = if i == SCAN_POINTS - 1 { hi } else { lo + step * T::from_usize_lossy(i) };
            (b, ch.eval(b))
        })
        .collect();
    // The fundamental mode has the largest β, so take the highest sign change.
    let bracket = samples
        .windows(2)
        .rev()
        .find(|w| w[0].1.is_finite() && w[1].1.is_finite() && (w[0].1 * w[1].1) <= T::zero())
        .map(|w| (w[0], w[1]))
        .ok_or_else(no_root)?;

    let ((mut a, mut fa), (mut b, _)) = bracket;
    for _ in 0..200 {
        let mid = (a + b) / lit(2.0);
        if mid <= a || mid >= b {
            break;
        }
        let fm = ch.eval(mid);
        if fm == T::zero() {
            a = mid;
            b = mid;
            break;
        }
        if (fa * fm) < T::zero() {
            b = mid;
        } else {
            a = mid;
            fa = fm;
        }
    }
    let beta = (a + b) / lit(2.0);
    let (h, q) = ch.wavenumbers(beta);

    let u = h * fiber.radius;
    let w = q * fiber.radius;
    let j = bessel_j_orders(1, u);
    let kk = bessel_k_orders(1, w);
    let j_log_deriv = (j[0] - j[1] / u) / (u * j[1]);
    let k_log_deriv = (-kk[0] - kk[1] / w) / (w * kk[1]);
    let s = (T::one() / (u * u) + T::one() / (w * w)) / (j_log_deriv + k_log_deriv);

    let mut mode = ModeSolution {
        wavelength,
        radius: fiber.radius,
        core_index: n1,
        cladding_index: n2,
        v_number: v,
        beta,
        q,
        h,
        hybrid_parameter: s,
        bessel_ratio: j[1] / kk[1],
        power_norm: T::one(),
    };
    let power_at_unit_amplitude = mode.guided_power();
    mode.power_norm = T::one() / power_at_unit_amplitude.sqrt();
    Ok(mode)
}

impl<T: Scalar> ModeSolution<T> {
    pub fn free_space_wavenumber(&self) -> T {
        lit::<T>(2.0) * T::PI() / self.wavelength
    }

    pub fn effective_index(&self) -> T {
        self.beta / self.free_space_wavenumber()
    }

    /// Residual of the HE11 eigenvalue equation at the stored β.
    pub fn characteristic_residual(&self) -> T {
        Characteristic {
            k: self.free_space_wavenumber(),
            n1: self.core_index,
            n2: self.cladding_index,
            radius: self.radius,
        }
        .eval(self.beta)
    }

    /// Axial standing-wave lattice period π/β.
    pub fn lattice_period(&self) -> T {
        T::PI() / self.beta
    }

    fn angular_frequency(&self) -> T {
        lit::<T>(SPEED_OF_LIGHT) * self.free_space_wavenumber()
    }

    /// Circular-mode components (e_r, e_φ, e_z) and ∂e_z/∂r at radius r for the
    /// current amplitude, φ-dependence e^{iφ} stripped.
    fn circular_components(&self, r: T) -> ([Complex<T>; 3], Complex<T>) {
        let a = self.power_norm;
        let s = self.hybrid_parameter;
        let beta = self.beta;
        let two = lit::<T>(2.0);
        let one = T::one();
        let i = Complex::new(T::zero(), one);
        let re = |x: T| Complex::new(x, T::zero());
        if r < self.radius {
            let hr = self.h * r;
            let j = bessel_j_orders(2, hr);
            let p = beta / (two * self.h);
            let er = i * re(a * p * ((one - s) * j[0] - (one + s) * j[2]));
            let ephi = re(-a * p * ((one - s) * j[0] + (one + s) * j[2]));
            let ez = re(a * j[1]);
            let dez = re(a * self.h * (j[0] - j[2]) / two);
            ([er, ephi, ez], dez)
        } else {
            let qr = self.q * r;
            let k = bessel_k_orders(3, qr);
            let c = a * self.bessel_ratio;
            let p = beta / (two * self.q);
            let er = i * re(c * p * ((one - s) * k[0] + (one + s) * k[2]));
            let ephi = re(-c * p * ((one - s) * k[0] - (one + s) * k[2]));
            let ez = re(c * k[1]);
            let dez = re(-c * self.q * (k[0] + k[2]) / two);
            ([er, ephi, ez], dez)
        }
    }

    /// Axial Poynting flux density S_z (W/m²) of the circular mode at radius r,
    /// with H obtained from Faraday's law.
    pub fn axial_flux_density(&self, r: T) -> T {
        let ([er, ephi, ez], dez) = self.circular_components(r);
        let omega_mu = self.angular_frequency() * lit(VACUUM_PERMEABILITY);
        let i = Complex::new(T::zero(), T::one());
        let beta = Complex::new(self.beta, T::zero());
        // l = +1: ∂/∂φ → i
        let h_r = (i * ez / Complex::new(r, T::zero()) - i * beta * ephi) / (i * omega_mu);
        let h_phi = (i * beta * er - dez) / (i * omega_mu);
        lit::<T>(0.5) * (er * h_phi.conj() - ephi * h_r.conj()).re
    }

    /// Total guided power for the current amplitude, by radial quadrature of S_z.
    pub fn guided_power(&self) -> T {
        let two_pi = lit::<T>(2.0) * T::PI();
        let a = self.radius;
        let f = |r: T| self.axial_flux_density(r) * two_pi * r;
        let inside = integrate(f, T::zero(), a, 8, 16);
        let outer = a + lit::<T>(60.0) / self.q;
        let outside = integrate(f, a, outer, 120, 16);
        inside + outside
    }

    /// Radial envelopes of the quasi-linear mode outside the fiber for 1 W.
    pub fn radial_envelope(&self, r: T) -> Result<RadialEnvelope<T>> {
        if r < self.radius {
            return Err(Error::Domain(format!(
                "r = {:.4e} m is inside the fiber (radius {:.4e} m)",
                r.to_f64_lossy(),
                self.radius.to_f64_lossy()
            )));
        }
        let one = T::one();
        let two = lit::<T>(2.0);
        let s = self.hybrid_parameter;
        let q = self.q;
        let k = bessel_k_orders(3, q * r);
        let dk0 = -q * k[1];
        let dk1 = -q * (k[0] + k[2]) / two;
        let dk2 = -q * (k[1] + k[3]) / two;
        let c = two.sqrt() * self.power_norm * self.bessel_ratio;
        let p = self.beta / (two * q);
        Ok(RadialEnvelope {
            radial: c * p * ((one - s) * k[0] + (one + s) * k[2]),
            azimuthal: -c * p * ((one - s) * k[0] - (one + s) * k[2]),
            axial: c * k[1],
            d_radial: c * p * ((one - s) * dk0 + (one + s) * dk2),
            d_azimuthal: -c * p * ((one - s) * dk0 - (one + s) * dk2),
            d_axial: c * dk1,
        })
    }

    /// Quasi-linear field per √W at (r, φ) with polarization axis `pol_angle`.
    pub fn field(&self, r: T, phi: T, pol_angle: T, direction: Direction) -> Result<FieldSample<T>> {
        Ok(field_from_envelope(&self.radial_envelope(r)?, phi, pol_angle, direction))
    }

    /// Time-averaged intensity (W/m²) of a single quasi-linearly polarized beam.
    pub fn evanescent_intensity(&self, power: T, pol_angle: T, r: T, phi: T) -> Result<T> {
        if power < T::zero() {
            return Err(Error::Domain("power must be non-negative".into()));
        }
        let f = self.field(r, phi, pol_angle, Direction::Forward)?;
        Ok(power * intensity_of(&f))
    }

    /// Counter-propagating pair sharing one polarization axis, at axial position z.
    pub fn standing_wave_intensity(
        &self,
        power_fwd: T,
        power_bwd: T,
        r: T,
        phi: T,
        z: T,
        pol_angle: T,
    ) -> Result<T> {
        let f = self.standing_wave_field(power_fwd, pol_angle, power_bwd, pol_angle, r, phi, z)?;
        Ok(intensity_of(&f))
    }

    /// Coherent sum √P_f·E_f·e^{iβz} + √P_b·E_b·e^{−iβz}.
    #[allow(clippy::too_many_arguments)]
    pub fn standing_wave_field(
        &self,
        power_fwd: T,
        pol_fwd: T,
        power_bwd: T,
        pol_bwd: T,
        r: T,
        phi: T,
        z: T,
    ) -> Result<FieldSample<T>> {
        if power_fwd < T::zero() || power_bwd < T::zero() {
            return Err(Error::Domain("power must be non-negative".into()));
        }
        let env = self.radial_envelope(r)?;
        let phase = self.beta * z;
        let fwd = field_from_envelope(&env, phi, pol_fwd, Direction::Forward)
            .scaled(Complex::from_polar(power_fwd.sqrt(), phase));
        if power_bwd == T::zero() {
            return Ok(fwd);
        }
        let bwd = field_from_envelope(&env, phi, pol_bwd, Direction::Backward)
            .scaled(Complex::from_polar(power_bwd.sqrt(), -phase));
        Ok(fwd.add(&bwd))
    }
}

/// Assembles complex components from precomputed radial envelopes.
pub fn field_from_envelope<T: Scalar>(
    env: &RadialEnvelope<T>,
    phi: T,
    pol_angle: T,
    direction: Direction,
) -> FieldSample<T> {
    let sigma: T = direction.sign();
    let (sin, cos) = (phi - pol_angle).sin_cos();
    let i = |x: T| Complex::new(T::zero(), x);
    let re = |x: T| Complex::new(x, T::zero());
    FieldSample {
        e: [i(sigma * env.radial * cos), i(sigma * env.azimuthal * sin), re(env.axial * cos)],
        d_r: [i(sigma * env.d_radial * cos), i(sigma * env.d_azimuthal * sin), re(env.d_axial * cos)],
        d_phi: [i(-sigma * env.radial * sin), i(sigma * env.azimuthal * cos), re(-env.axial * sin)],
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fiber() -> FiberSpec<f64> {
        FiberSpec::silica_in_vacuum(235e-9)
    }

    #[test]
    fn v_number_at_750() {
        // V = (2π/λ)·a·√(n₁² − 1) with n₁ = 1.454237
        let oracle = 2.0 * std::f64::consts::PI / 750e-9 * 235e-9 * (1.454_237_f64.powi(2) - 1.0).sqrt();
        let v = fiber().v_number(750e-9).unwrap();
        assert!((v - oracle).abs() < 1e-12);
        assert!((v - 2.0787).abs() < 1e-3);
    }

    #[test]
    fn multimode_rejected() {
        let thick = FiberSpec::silica_in_vacuum(400e-9);
        match solve_he11(&thick, 750e-9) {
            Err(Error::Multimode { v_number, .. }) => assert!(v_number > 2.405),
            other => panic!("expected multimode error, got {other:?}"),
        }
    }

    #[test]
    fn index_table_lookup() {
        let idx = CoreIndex::<f64>::fused_silica();
        assert_eq!(idx.at(750e-9).unwrap(), 1.454_237);
        assert_eq!(idx.at(1064e-9).unwrap(), 1.449_631);
        let mid = idx.at(900e-9).unwrap();
        assert!(mid < 1.453_405 && mid > 1.449_631);
        assert!(idx.at(1550e-9).is_err());
    }

    #[test]
    fn bracket_and_residual() {
        for &lam in &[750e-9, 780.241_209_686e-9, 1064e-9] {
            let m = solve_he11(&fiber(), lam).unwrap();
            let k = 2.0 * std::f64::consts::PI / lam;
            assert!(m.beta > k && m.beta < m.core_index * k);
            assert!(m.characteristic_residual().abs() < 1e-10);
            assert!((m.q * m.q - (m.beta * m.beta - k * k)).abs() < 1e-9 * m.beta * m.beta);
        }
    }

    #[test]
    fn inside_radius_is_a_domain_error() {
        let m = solve_he11(&fiber(), 1064e-9).unwrap();
        assert!(matches!(m.evanescent_intensity(1e-3, 0.0, 200e-9, 0.0), Err(Error::Domain(_))));
    }

    #[test]
    fn f32_solve_is_close_to_f64() {
        let f32_fiber = FiberSpec::<f32>::silica_in_vacuum(235e-9);
        let m32 = solve_he11(&f32_fiber, 1064e-9).unwrap();
        let m64 = solve_he11(&fiber(), 1064e-9).unwrap();
        assert!(((m32.beta as f64) - m64.beta).abs() < 1e-4 * m64.beta);
    }
}
