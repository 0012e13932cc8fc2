//! Classical transverse motion of an atom ensemble and synthesis of the
//! coupling-proportional probe signal.
//!
//! Every beam here is a superposition of quasi-linear HE11 modes, so any
//! potential or intensity has the exact form a(r) + b(r)·cos 2φ + c(r)·sin 2φ.
//! Trajectories therefore run on cubic-Hermite tables of a, b, c (values and
//! exact r-derivatives) instead of re-evaluating Bessel functions each step.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::TimeSeries;
use crate::atom::AtomSpecies;
use crate::error::{Error, Result};
use crate::scalar::{lit, Scalar};
use crate::trap::{analyze_trap, BeamRole, Minimum, PotentialSample, TrapConfig, TrapModel, TransversePotential};
use crate::units::BOLTZMANN;

/// Default table node spacing, m.
pub const TABLE_STEP: f64 = 0.25e-9;

/// a, b, c and their r-derivatives on a uniform radial grid.
#[derive(Debug, Clone)]
pub struct AngularTable<T> {
    r0: T,
    step: T,
    coeff: Vec<[T; 3]>,
    slope: Vec<[T; 3]>,
}

impl<T: Scalar> AngularTable<T> {
    /// Tabulates `f(r, φ)` (value and radial derivative) from its samples at
    /// φ = 0, π/4 and π/2.
    pub fn new(r0: T, r1: T, step: T, f: impl Fn(T, T) -> PotentialSample<T> + Sync) -> Self {
        let n = ((r1 - r0) / step).ceil().to_usize().unwrap_or(1).max(1) + 1;
        let quarter = T::FRAC_PI_4();
        let half = T::FRAC_PI_2();
        let two = lit::<T>(2.0);
        let nodes: Vec<([T; 3], [T; 3])> = (0..n)
            .into_par_iter()
            .map(|i| {
                let r = r0 + step * T::from_usize_lossy(i);
                let (s0, s1, s2) = (f(r, T::zero()), f(r, quarter), f(r, half));
                let a = (s0.u + s2.u) / two;
                let da = (s0.du_dr + s2.du_dr) / two;
                ([a, (s0.u - s2.u) / two, s1.u - a], [da, (s0.du_dr - s2.du_dr) / two, s1.du_dr - da])
            })
            .collect();
        let (coeff, slope) = nodes.into_iter().unzip();
        AngularTable { r0, step, coeff, slope }
    }

    pub fn r_max(&self) -> T {
        self.r0 + self.step * T::from_usize_lossy(self.coeff.len() - 1)
    }

    /// (value, ∂/∂r, ∂/∂φ) at (r, φ); r is clamped to the table range.
    #[inline]
    pub fn eval(&self, r: T, phi: T) -> PotentialSample<T> {
        let two = lit::<T>(2.0);
        let (sin2, cos2) = (two * phi).sin_cos();
        let x = ((r - self.r0) / self.step).max(T::zero());
        let last = self.coeff.len() - 2;
        let i = x.floor().to_usize().unwrap_or(0).min(last);
        let t = x - T::from_usize_lossy(i);
        let (t2, t3) = (t * t, t * t * t);
        let three = lit::<T>(3.0);
        let h00 = two * t3 - three * t2 + T::one();
        let h10 = t3 - two * t2 + t;
        let h01 = three * t2 - two * t3;
        let h11 = t3 - t2;
        let six = lit::<T>(6.0);
        let d00 = six * t2 - six * t;
        let d10 = three * t2 - lit::<T>(4.0) * t + T::one();
        let d01 = six * t - six * t2;
        let d11 = three * t2 - two * t;
        let (c0, c1, m0, m1) = (&self.coeff[i], &self.coeff[i + 1], &self.slope[i], &self.slope[i + 1]);
        let h = self.step;
        let mut v = [T::zero(); 3];
        let mut d = [T::zero(); 3];
        for k in 0..3 {
            v[k] = h00 * c0[k] + h10 * h * m0[k] + h01 * c1[k] + h11 * h * m1[k];
            d[k] = (d00 * c0[k] + d10 * h * m0[k] + d01 * c1[k] + d11 * h * m1[k]) / h;
        }
        PotentialSample {
            u: v[0] + v[1] * cos2 + v[2] * sin2,
            du_dr: d[0] + d[1] * cos2 + d[2] * sin2,
            du_dphi: two * (v[2] * cos2 - v[1] * sin2),
        }
    }
}

/// Tabulated potential plus (optionally) the probe intensity that sets the
/// signal coupling.
#[derive(Debug, Clone)]
pub struct TabulatedPotential<T> {
    inner: T,
    potential: AngularTable<T>,
    probe: Option<AngularTable<T>>,
}

impl<T: Scalar> TabulatedPotential<T> {
    pub fn from_model(model: &TrapModel<T>, span: T, step: T) -> Self {
        let a = model.radius();
        let b = a + span;
        let potential = AngularTable::new(a, b, step, |r, p| model.sample(r, p));
        let probe = model
            .has_role(BeamRole::Probe)
            .then(|| AngularTable::new(a, b, step, |r, p| model.intensity_sample(BeamRole::Probe, r, p)));
        TabulatedPotential { inner: a, potential, probe }
    }

    /// Probe intensity, W/m²; zero without a probe.
    pub fn probe_intensity(&self, r: T, phi: T) -> T {
        self.probe.as_ref().map_or(T::zero(), |t| t.eval(r, phi).u)
    }
}

impl<T: Scalar> TransversePotential<T> for TabulatedPotential<T> {
    fn inner_radius(&self) -> T {
        self.inner
    }

    fn outer_radius(&self) -> T {
        self.potential.r_max()
    }

    fn sample(&self, r: T, phi: T) -> PotentialSample<T> {
        self.potential.eval(r, phi)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MotionMode {
    /// 1D in r with φ frozen at the with-probe minimum.
    #[default]
    RadialOnly,
    /// Full transverse plane.
    Planar,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AtomState<T> {
    pub r: T,
    pub phi: T,
    pub v_r: T,
    pub v_phi: T,
}

/// Kinetic plus potential energy, J.
pub fn energy<T: Scalar, P: TransversePotential<T> + ?Sized>(potential: &P, mass: T, s: &AtomState<T>) -> T {
    lit::<T>(0.5) * mass * (s.v_r * s.v_r + s.v_phi * s.v_phi) + potential.value(s.r, s.phi)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntegratorOptions<T> {
    pub mode: MotionMode,
    /// Largest trap frequency, Hz; enforces dt ≤ 1/(50·ν_max) when set.
    pub nu_max: Option<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory<T> {
    pub dt: T,
    /// States at t = 0, dt, 2dt, … up to the duration or the loss step.
    pub states: Vec<AtomState<T>>,
    /// Step at which the atom hit the surface or escaped.
    pub lost_at: Option<usize>,
}

/// Velocity-Verlet stepper. The planar mode integrates in Cartesian (x, y),
/// which carries the polar metric terms implicitly.
#[derive(Debug, Clone, Copy)]
struct Walker<T> {
    x: T,
    y: T,
    vx: T,
    vy: T,
    ax: T,
    ay: T,
    phi_frozen: Option<T>,
}

impl<T: Scalar> Walker<T> {
    fn new<P: TransversePotential<T> + ?Sized>(p: &P, mass: T, s: &AtomState<T>, mode: MotionMode) -> Self {
        let mut w = match mode {
            MotionMode::RadialOnly => Walker {
                x: s.r,
                y: T::zero(),
                vx: s.v_r,
                vy: T::zero(),
                ax: T::zero(),
                ay: T::zero(),
                phi_frozen: Some(s.phi),
            },
            MotionMode::Planar => {
                let (sin, cos) = s.phi.sin_cos();
                Walker {
                    x: s.r * cos,
                    y: s.r * sin,
                    vx: s.v_r * cos - s.v_phi * sin,
                    vy: s.v_r * sin + s.v_phi * cos,
                    ax: T::zero(),
                    ay: T::zero(),
                    phi_frozen: None,
                }
            }
        };
        w.update_force(p, mass);
        w
    }

    #[inline]
    fn polar(&self) -> (T, T) {
        match self.phi_frozen {
            Some(phi) => (self.x, phi),
            None => ((self.x * self.x + self.y * self.y).sqrt(), self.y.atan2(self.x)),
        }
    }

    #[inline]
    fn update_force<P: TransversePotential<T> + ?Sized>(&mut self, p: &P, mass: T) {
        let (r, phi) = self.polar();
        let g = p.sample(r, phi);
        match self.phi_frozen {
            Some(_) => {
                self.ax = -g.du_dr / mass;
            }
            None => {
                let (sin, cos) = phi.sin_cos();
                let tangential = g.du_dphi / r;
                self.ax = -(g.du_dr * cos - tangential * sin) / mass;
                self.ay = -(g.du_dr * sin + tangential * cos) / mass;
            }
        }
    }

    /// Advances one step; returns false once the atom leaves the allowed annulus.
    #[inline]
    fn step<P: TransversePotential<T> + ?Sized>(&mut self, p: &P, mass: T, dt: T) -> bool {
        let half = dt / lit(2.0);
        self.vx = self.vx + self.ax * half;
        self.vy = self.vy + self.ay * half;
        self.x = self.x + self.vx * dt;
        self.y = self.y + self.vy * dt;
        let (r, _) = self.polar();
        if r <= p.inner_radius() || r >= p.outer_radius() {
            return false;
        }
        self.update_force(p, mass);
        self.vx = self.vx + self.ax * half;
        self.vy = self.vy + self.ay * half;
        true
    }

    fn state(&self) -> AtomState<T> {
        let (r, phi) = self.polar();
        match self.phi_frozen {
            Some(_) => AtomState { r, phi, v_r: self.vx, v_phi: T::zero() },
            None => AtomState {
                r,
                phi,
                v_r: (self.x * self.vx + self.y * self.vy) / r,
                v_phi: (self.x * self.vy - self.y * self.vx) / r,
            },
        }
    }
}

fn check_step<T: Scalar>(dt: T, nu_max: Option<T>) -> Result<()> {
    if !(dt > T::zero()) {
        return Err(Error::InvalidConfig("time step must be positive".into()));
    }
    if let Some(nu) = nu_max {
        let limit = T::one() / (lit::<T>(50.0) * nu);
        if dt > limit {
            return Err(Error::StepSize { dt: dt.to_f64_lossy(), limit: limit.to_f64_lossy() });
        }
    }
    Ok(())
}

fn step_count<T: Scalar>(duration: T, dt: T) -> usize {
    (duration / dt).round().to_usize().unwrap_or(0)
}

pub fn integrate_trajectory<T: Scalar, P: TransversePotential<T> + ?Sized>(
    potential: &P,
    atom: &AtomSpecies<T>,
    initial: AtomState<T>,
    dt: T,
    duration: T,
    options: &IntegratorOptions<T>,
) -> Result<Trajectory<T>> {
    check_step(dt, options.nu_max)?;
    if initial.r <= potential.inner_radius() {
        return Ok(Trajectory { dt, states: vec![initial], lost_at: Some(0) });
    }
    let steps = step_count(duration, dt);
    let mut w = Walker::new(potential, atom.mass, &initial, options.mode);
    let mut states = Vec::with_capacity(steps + 1);
    states.push(w.state());
    for n in 1..=steps {
        if !w.step(potential, atom.mass, dt) {
            return Ok(Trajectory { dt, states, lost_at: Some(n) });
        }
        states.push(w.state());
    }
    Ok(Trajectory { dt, states, lost_at: None })
}

/// Newton refinement of a minimum on a callable potential, starting from a
/// grid estimate; in radial-only mode φ is held fixed.
pub fn refine_minimum<T: Scalar, P: TransversePotential<T> + ?Sized>(
    potential: &P,
    start: &Minimum<T>,
    mode: MotionMode,
) -> Minimum<T> {
    let (mut r, mut phi) = (start.r, start.phi);
    let h = lit::<T>(1e-10);
    for _ in 0..50 {
        let g = potential.sample(r, phi);
        let gp = potential.sample(r + h, phi);
        let gm = potential.sample(r - h, phi);
        let hrr = (gp.du_dr - gm.du_dr) / (h + h);
        let (dr, dphi) = match mode {
            MotionMode::RadialOnly => {
                if !(hrr > T::zero()) {
                    break;
                }
                (-g.du_dr / hrr, T::zero())
            }
            MotionMode::Planar => {
                let ha = h / r;
                let ap = potential.sample(r, phi + ha);
                let am = potential.sample(r, phi - ha);
                let hpp = (ap.du_dphi - am.du_dphi) / (ha + ha);
                let hrp = (gp.du_dphi - gm.du_dphi) / (h + h);
                let det = hrr * hpp - hrp * hrp;
                if !(det > T::zero() && hrr > T::zero()) {
                    break;
                }
                ((-hpp * g.du_dr + hrp * g.du_dphi) / det, (hrp * g.du_dr - hrr * g.du_dphi) / det)
            }
        };
        // never jump farther than the grid estimate could plausibly be off
        let cap = lit::<T>(5e-9);
        let dr = dr.max(-cap).min(cap);
        let dphi = dphi.max(-cap / r).min(cap / r);
        r = r + dr;
        phi = phi + dphi;
        if dr.abs() < lit(1e-16) && (dphi * r).abs() < lit(1e-16) {
            break;
        }
    }
    Minimum { r, phi, u: potential.value(r, phi), ..*start }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DistributionShape {
    #[default]
    Flat,
    Delta,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum VelocityModel<T> {
    #[default]
    Zero,
    /// Maxwell–Boltzmann at `temperature` (K) per transverse component.
    Thermal { temperature: T },
}

/// Where the initial distribution is centred before the radial offset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Anchor {
    /// (r, φ) of the probe-free minimum.
    #[default]
    NoProbeMinimum,
    /// (r, φ) of the with-probe minimum.
    WithProbeMinimum,
    /// r of the with-probe minimum, φ of the probe-free one: atoms still sit at
    /// the azimuth they were trapped at when the probe comes on.
    WithProbeRadius,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InitialDistribution<T> {
    pub shape: DistributionShape,
    /// Signed radial offset from the anchor minimum, negative toward the fiber, m.
    pub center_offset: T,
    pub half_width: T,
    pub velocity: VelocityModel<T>,
    pub atom_count: usize,
    pub seed: u64,
    pub anchor: Anchor,
}

impl<T: Scalar> InitialDistribution<T> {
    pub fn validate(&self) -> Result<()> {
        if self.atom_count == 0 {
            return Err(Error::InvalidConfig("atom_count must be >= 1".into()));
        }
        if !(self.half_width >= T::zero()) {
            return Err(Error::InvalidConfig("half_width must be >= 0".into()));
        }
        if let VelocityModel::Thermal { temperature } = self.velocity {
            if !(temperature >= T::zero()) {
                return Err(Error::InvalidConfig("temperature must be >= 0".into()));
            }
        }
        Ok(())
    }

    /// Initial state of atom `index`, drawn from its own ChaCha8 stream
    /// (seed = `seed`, stream = `index`), so results do not depend on the
    /// order or number of workers.
    pub fn sample(&self, index: usize, centre: &Minimum<T>, mass: T) -> AtomState<T> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(index as u64);
        let r0 = centre.r + self.center_offset;
        let r = match self.shape {
            DistributionShape::Delta => r0,
            DistributionShape::Flat => {
                let u: f64 = rng.random();
                r0 + self.half_width * lit::<T>(2.0 * u - 1.0)
            }
        };
        let (v_r, v_phi) = match self.velocity {
            VelocityModel::Zero => (T::zero(), T::zero()),
            VelocityModel::Thermal { temperature } => {
                let sigma = (lit::<T>(BOLTZMANN) * temperature / mass).sqrt();
                let a: f64 = rng.sample(StandardNormal);
                let b: f64 = rng.sample(StandardNormal);
                (sigma * lit(a), sigma * lit(b))
            }
        };
        AtomState { r, phi: centre.phi, v_r, v_phi }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignalModel<T> {
    /// Trap lifetime τ, s.
    pub decay_time: T,
    pub normalization: T,
}

impl<T: Scalar> SignalModel<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.decay_time > T::zero()) {
            return Err(Error::InvalidConfig("decay_time must be positive".into()));
        }
        Ok(())
    }
}

/// One probe-on window followed by a probe-off gap, both in s.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pulse<T> {
    pub on: T,
    pub off: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationOutput<T> {
    pub series: TimeSeries<T>,
    /// Live-atom count per sample.
    pub live: Vec<u32>,
    /// True when every atom was lost before the requested duration.
    pub all_lost: bool,
    /// Sample indices at which each pulse starts and ends (exclusive).
    pub pulse_windows: Vec<(usize, usize)>,
    pub with_probe_minimum: Minimum<T>,
    pub no_probe_minimum: Minimum<T>,
    pub nu_max: T,
}

/// Precomputed pieces shared by all ensemble runs of one configuration.
#[derive(Debug, Clone)]
pub struct EnsembleSetup<T> {
    pub on: TabulatedPotential<T>,
    pub off: TabulatedPotential<T>,
    pub on_minimum: Minimum<T>,
    pub off_minimum: Minimum<T>,
    pub nu_max: T,
    pub mass: T,
    pub reference_intensity: T,
}

impl<T: Scalar> EnsembleSetup<T> {
    pub fn new(config: &TrapConfig<T>, mode: MotionMode) -> Result<Self> {
        if !config.has_probe() {
            return Err(Error::InvalidConfig("the signal model needs a probe beam".into()));
        }
        let without = config.without_probe();
        let with_trap = analyze_trap(config)?;
        let without_trap = analyze_trap(&without)?;
        let span = config.grid.r_offset + config.grid.r_span;
        let step = lit::<T>(TABLE_STEP);
        let on = TabulatedPotential::from_model(&TrapModel::new(config)?, span, step);
        let off = TabulatedPotential::from_model(&TrapModel::new(&without)?, span, step);
        let on_minimum = refine_minimum(&on, &with_trap.minimum, MotionMode::Planar);
        let mut off_minimum = refine_minimum(&off, &without_trap.minimum, MotionMode::Planar);
        if mode == MotionMode::RadialOnly {
            // radial-only motion happens on the with-probe minimum's ray
            off_minimum = refine_minimum(&off, &Minimum { phi: on_minimum.phi, ..off_minimum }, mode);
        }
        let reference_intensity = on.probe_intensity(on_minimum.r, on_minimum.phi);
        let f = &with_trap.frequencies;
        Ok(EnsembleSetup {
            on,
            off,
            on_minimum,
            off_minimum,
            nu_max: f.nu_r.max(f.nu_phi),
            mass: config.atom.mass,
            reference_intensity,
        })
    }
}

/// Atoms simulated together per parallel batch; bounds memory while keeping
/// the reduction order fixed.
const BATCH: usize = 32;

/// Ensemble evolution through alternating probe-on/probe-off windows. During
/// a window the signal is normalization·exp(−t/τ)·⟨I_probe/I_probe(min)⟩ over
/// live atoms; gaps emit 0.
pub fn pulse_sequence_signal<T: Scalar>(
    setup: &EnsembleSetup<T>,
    dist: &InitialDistribution<T>,
    signal: &SignalModel<T>,
    pulses: &[Pulse<T>],
    dt: T,
    mode: MotionMode,
) -> Result<SimulationOutput<T>> {
    dist.validate()?;
    signal.validate()?;
    if pulses.is_empty() {
        return Err(Error::InvalidConfig("pulse list is empty".into()));
    }
    check_step(dt, Some(setup.nu_max))?;
    // (steps, probe on)
    let mut schedule = Vec::new();
    let mut windows = Vec::new();
    let mut cursor = 0usize;
    for p in pulses {
        let on = step_count(p.on, dt);
        let off = step_count(p.off, dt);
        if on == 0 {
            return Err(Error::InvalidConfig("pulse shorter than one time step".into()));
        }
        windows.push((cursor, cursor + on));
        schedule.push((on, true));
        cursor += on;
        if off > 0 {
            schedule.push((off, false));
            cursor += off;
        }
    }
    let total = cursor;
    let anchor = match dist.anchor {
        Anchor::NoProbeMinimum => setup.off_minimum,
        Anchor::WithProbeMinimum => setup.on_minimum,
        Anchor::WithProbeRadius => Minimum { phi: setup.off_minimum.phi, ..setup.on_minimum },
    };
    let anchor = Minimum {
        phi: if mode == MotionMode::RadialOnly { setup.on_minimum.phi } else { anchor.phi },
        ..anchor
    };

    let mut sum = vec![T::zero(); total];
    let mut live = vec![0u32; total];
    let run_atom = |index: usize| -> Vec<T> {
        let state = dist.sample(index, &anchor, setup.mass);
        let mut coupling = Vec::with_capacity(total);
        if state.r <= setup.on.inner_radius() {
            return coupling;
        }
        let mut probe_on = schedule[0].1;
        let pot = |on: bool| -> &TabulatedPotential<T> { if on { &setup.on } else { &setup.off } };
        let mut w = Walker::new(pot(probe_on), setup.mass, &state, mode);
        let mut first = true;
        for &(steps, on) in &schedule {
            if on != probe_on {
                probe_on = on;
                w.update_force(pot(on), setup.mass);
            }
            for _ in 0..steps {
                if !first && !w.step(pot(on), setup.mass, dt) {
                    return coupling;
                }
                first = false;
                let (r, phi) = w.polar();
                coupling.push(if on { setup.on.probe_intensity(r, phi) / setup.reference_intensity } else { T::zero() });
            }
        }
        coupling
    };
    let mut start = 0;
    while start < dist.atom_count {
        let end = (start + BATCH).min(dist.atom_count);
        let batch: Vec<Vec<T>> = (start..end).into_par_iter().map(run_atom).collect();
        for c in &batch {
            for (k, v) in c.iter().enumerate() {
                sum[k] = sum[k] + *v;
                live[k] += 1;
            }
        }
        start = end;
    }

    let alive_until = live.iter().position(|&n| n == 0).unwrap_or(total);
    let values: Vec<T> = (0..alive_until)
        .map(|k| {
            let t = dt * T::from_usize_lossy(k);
            signal.normalization * (-t / signal.decay_time).exp() * sum[k] / T::from_usize_lossy(live[k] as usize)
        })
        .collect();
    live.truncate(alive_until);
    Ok(SimulationOutput {
        series: TimeSeries::new(T::zero(), dt, values)?,
        live,
        all_lost: alive_until < total,
        pulse_windows: windows,
        with_probe_minimum: setup.on_minimum,
        no_probe_minimum: setup.off_minimum,
        nu_max: setup.nu_max,
    })
}

/// Probe switched on at t = 0 and left on for `duration`.
pub fn monte_carlo_signal<T: Scalar>(
    setup: &EnsembleSetup<T>,
    dist: &InitialDistribution<T>,
    signal: &SignalModel<T>,
    dt: T,
    duration: T,
    mode: MotionMode,
) -> Result<SimulationOutput<T>> {
    pulse_sequence_signal(setup, dist, signal, &[Pulse { on: duration, off: T::zero() }], dt, mode)
}

/// Largest signal value inside each pulse window.
pub fn pulse_peaks<T: Scalar>(out: &SimulationOutput<T>) -> Vec<T> {
    out.pulse_windows
        .iter()
        .filter(|(a, _)| *a < out.series.len())
        .map(|&(a, b)| out.series.values[a..b.min(out.series.len())].iter().fold(T::zero(), |m, v| m.max(*v)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeFit<T> {
    pub tau: T,
    pub tau_stderr: T,
    pub amplitude: T,
}

/// Lifetime from the pulse envelope: mean signal over the second half of each
/// pulse (after the turn-on transient has dephased) against the window's mean
/// time, fitted log-linearly.
pub fn fit_pulse_envelope<T: Scalar>(out: &SimulationOutput<T>) -> Result<EnvelopeFit<T>> {
    let s = &out.series;
    let mut t = Vec::new();
    let mut y = Vec::new();
    for &(a, b) in &out.pulse_windows {
        let b = b.min(s.len());
        let mid = a + (b.saturating_sub(a)) / 2;
        if b <= mid {
            continue;
        }
        let n = T::from_usize_lossy(b - mid);
        let mean = s.values[mid..b].iter().copied().sum::<T>() / n;
        let tm = (mid..b).map(|i| s.time(i)).sum::<T>() / n;
        if mean > T::zero() {
            t.push(tm);
            y.push(mean.ln());
        }
    }
    if t.len() < 2 {
        return Err(Error::Segment("envelope fit needs at least two populated pulses".into()));
    }
    let design: Vec<Vec<T>> = t.iter().map(|&x| vec![T::one(), x]).collect();
    let c = crate::linalg::linear_least_squares(&design, &y)
        .ok_or_else(|| Error::FitFailure("envelope regression is singular".into()))?;
    if !(c[1] < T::zero()) {
        return Err(Error::NoDecay);
    }
    let n = t.len();
    let resid: T = t.iter().zip(&y).map(|(&x, &v)| (v - c[0] - c[1] * x).powi(2)).sum();
    let tbar = t.iter().copied().sum::<T>() / T::from_usize_lossy(n);
    let sxx: T = t.iter().map(|&x| (x - tbar) * (x - tbar)).sum();
    let slope_err = if n > 2 { (resid / T::from_usize_lossy(n - 2) / sxx).sqrt() } else { T::zero() };
    let tau = -T::one() / c[1];
    Ok(EnvelopeFit { tau, tau_stderr: tau * tau * slope_err, amplitude: c[0].exp() })
}
