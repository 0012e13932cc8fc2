mod common;

use std::f64::consts::PI;
use std::sync::OnceLock;

use nanotrap::analysis::{fit_exponential_decay, power_spectrum, Taper, TimeSeries};
use nanotrap::config::AtomicData;
use nanotrap::dynamics::{
    energy, integrate_trajectory, monte_carlo_signal, pulse_sequence_signal, Anchor, AtomState,
    DistributionShape, EnsembleSetup, IntegratorOptions, MotionMode, Pulse, VelocityModel,
};
use nanotrap::trap::{analyze_trap, PotentialSample, TransversePotential};
use nanotrap::{AtomSpecies, Error, InitialDistribution, SignalModel};

use common::{defaults, rel};

fn radial_setup() -> &'static EnsembleSetup<f64> {
    static S: OnceLock<EnsembleSetup<f64>> = OnceLock::new();
    S.get_or_init(|| EnsembleSetup::new(&defaults().trap, MotionMode::RadialOnly).unwrap())
}

fn planar_setup() -> &'static EnsembleSetup<f64> {
    static S: OnceLock<EnsembleSetup<f64>> = OnceLock::new();
    S.get_or_init(|| EnsembleSetup::new(&defaults().trap, MotionMode::Planar).unwrap())
}

fn rb87() -> AtomSpecies {
    AtomicData::builtin_rb87().to_species().unwrap()
}

fn at_rest(r: f64, phi: f64) -> AtomState<f64> {
    AtomState { r, phi, v_r: 0.0, v_phi: 0.0 }
}

fn signal() -> SignalModel {
    SignalModel { decay_time: 265e-6, normalization: 1.0 }
}

fn narrow(shape: DistributionShape, half_width: f64, atoms: usize) -> InitialDistribution {
    InitialDistribution {
        shape,
        center_offset: 0.0,
        half_width,
        velocity: VelocityModel::Zero,
        atom_count: atoms,
        seed: 7,
        anchor: Anchor::WithProbeMinimum,
    }
}

#[test]
fn atom_at_the_minimum_stays_put() {
    let s = planar_setup();
    let m = s.on_minimum;
    let opts = IntegratorOptions { mode: MotionMode::Planar, nu_max: Some(s.nu_max) };
    let tr = integrate_trajectory(&s.on, &rb87(), at_rest(m.r, m.phi), 1e-9, 20e-6, &opts).unwrap();
    for st in &tr.states {
        let dx = st.r * st.phi.cos() - m.r * m.phi.cos();
        let dy = st.r * st.phi.sin() - m.r * m.phi.sin();
        assert!(dx.hypot(dy) < 1e-12);
    }
}

#[test]
fn small_oscillation_matches_the_harmonic_frequency() {
    let s = radial_setup();
    let m = s.on_minimum;
    let nu_r = analyze_trap(&defaults().trap).unwrap().frequencies.nu_r;
    let opts = IntegratorOptions { mode: MotionMode::RadialOnly, nu_max: Some(s.nu_max) };
    let dt = 1e-9;
    let tr = integrate_trajectory(&s.on, &rb87(), at_rest(m.r + 1e-9, m.phi), dt, 200e-6, &opts).unwrap();
    // upward zero crossings of r − r_min, linearly interpolated
    let x: Vec<f64> = tr.states.iter().map(|st| st.r - m.r).collect();
    let mut t_cross = Vec::new();
    for i in 0..x.len() - 1 {
        if x[i] < 0.0 && x[i + 1] >= 0.0 {
            t_cross.push((i as f64 + x[i] / (x[i] - x[i + 1])) * dt);
        }
    }
    let nu = (t_cross.len() - 1) as f64 / (t_cross[t_cross.len() - 1] - t_cross[0]);
    assert!(rel(nu, nu_r) < 0.01, "{nu} vs {nu_r}");

    let series = TimeSeries::new(0.0, dt, x).unwrap();
    let spec = power_spectrum(&series, 0.0, Taper::Hann).unwrap();
    let k = spec.argmax_in(20e3, 1e6).unwrap();
    assert!((spec.frequency[k] - nu_r).abs() <= spec.resolution.max(0.01 * nu_r));
}

#[test]
fn verlet_energy_drift_is_small() {
    let s = planar_setup();
    let m = s.on_minimum;
    let atom = rb87();
    let opts = IntegratorOptions { mode: MotionMode::Planar, nu_max: Some(s.nu_max) };
    let start = AtomState { r: m.r + 30e-9, phi: m.phi + 0.05, v_r: 0.0, v_phi: 0.0 };
    let tr = integrate_trajectory(&s.on, &atom, start, 1e-9, 100e-6, &opts).unwrap();
    assert!(tr.lost_at.is_none());
    let e0 = energy(&s.on, atom.mass, &tr.states[0]);
    let excitation = e0 - m.u;
    let worst = tr.states.iter().map(|st| (energy(&s.on, atom.mass, st) - e0).abs()).fold(0.0, f64::max);
    assert!(worst / excitation < 1e-4, "relative drift {:e}", worst / excitation);
}

struct Harmonic {
    k: f64,
    r0: f64,
}

impl TransversePotential<f64> for Harmonic {
    fn inner_radius(&self) -> f64 {
        1e-8
    }
    fn sample(&self, r: f64, phi: f64) -> PotentialSample<f64> {
        // isotropic about the Cartesian point (r0, 0)
        let (x, y) = (r * phi.cos() - self.r0, r * phi.sin());
        let (fx, fy) = (self.k * x, self.k * y);
        PotentialSample {
            u: 0.5 * self.k * (x * x + y * y),
            du_dr: fx * phi.cos() + fy * phi.sin(),
            du_dphi: r * (-fx * phi.sin() + fy * phi.cos()),
        }
    }
}

#[test]
fn symplectic_energy_stays_bounded_over_ten_thousand_periods() {
    let atom = rb87();
    let p = Harmonic { k: 1e-12, r0: 1e-6 };
    let omega = (p.k / atom.mass).sqrt();
    let period = 2.0 * PI / omega;
    let dt = period / 50.0;
    let opts = IntegratorOptions { mode: MotionMode::Planar, nu_max: None };
    let start = AtomState { r: 1.05e-6, phi: 0.0, v_r: 0.0, v_phi: 0.02 };
    let tr = integrate_trajectory(&p, &atom, start, dt, 1e4 * period, &opts).unwrap();
    let e0 = energy(&p, atom.mass, &tr.states[0]);
    let err: Vec<f64> = tr.states.iter().map(|st| (energy(&p, atom.mass, st) - e0).abs() / e0).collect();
    let tenth = err.len() / 10;
    let early = err[..tenth].iter().cloned().fold(0.0, f64::max);
    let late = err[err.len() - tenth..].iter().cloned().fold(0.0, f64::max);
    // Verlet's shadow energy: O((ω·dt)²) oscillation, no secular growth
    assert!(early < 5e-3 && late < 5e-3, "{early:e} {late:e}");
    assert!(late < 1.5 * early, "{early:e} -> {late:e}");
}

#[test]
fn seeded_runs_are_reproducible_across_pools() {
    let s = radial_setup();
    let mut d = defaults().simulation.distribution;
    d.atom_count = 70;
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| monte_carlo_signal(s, &d, &signal(), 2e-9, 20e-6, MotionMode::RadialOnly).unwrap())
    };
    let (a, b) = (run(1), run(5));
    assert_eq!(a.series.values, b.series.values);
    assert_eq!(a.live, b.live);
    d.seed += 1;
    let c = monte_carlo_signal(s, &d, &signal(), 2e-9, 20e-6, MotionMode::RadialOnly).unwrap();
    assert_ne!(a.series.values, c.series.values);
}

#[test]
fn atoms_resting_at_the_minimum_give_a_pure_exponential() {
    let s = radial_setup();
    let out = monte_carlo_signal(s, &narrow(DistributionShape::Delta, 0.0, 4), &signal(), 2e-9, 200e-6, MotionMode::RadialOnly)
        .unwrap();
    let fit = fit_exponential_decay(&out.series, 0.0).unwrap();
    assert!(rel(fit.tau, 265e-6) < 1e-3, "τ = {:e}", fit.tau);
}

#[test]
fn narrow_ensemble_recovers_the_lifetime() {
    let s = radial_setup();
    let out =
        monte_carlo_signal(s, &narrow(DistributionShape::Flat, 5e-9, 64), &signal(), 2e-9, 200e-6, MotionMode::RadialOnly)
            .unwrap();
    let fit = fit_exponential_decay(&out.series, 0.0).unwrap();
    assert!(rel(fit.tau, 265e-6) < 0.02, "τ = {:e}", fit.tau);
}

#[test]
fn signal_is_positive_and_live_counts_never_grow() {
    let s = radial_setup();
    let mut d = defaults().simulation.distribution;
    d.atom_count = 96;
    let out = monte_carlo_signal(s, &d, &signal(), 2e-9, 100e-6, MotionMode::RadialOnly).unwrap();
    assert!(out.series.values.iter().all(|&v| v > 0.0));
    assert!(out.live.windows(2).all(|w| w[1] <= w[0]));
    assert!(out.live[0] as usize <= d.atom_count);
}

#[test]
fn one_pulse_equals_the_continuous_run() {
    let s = radial_setup();
    let mut d = defaults().simulation.distribution;
    d.atom_count = 40;
    let a = monte_carlo_signal(s, &d, &signal(), 2e-9, 30e-6, MotionMode::RadialOnly).unwrap();
    let b = pulse_sequence_signal(s, &d, &signal(), &[Pulse { on: 30e-6, off: 0.0 }], 2e-9, MotionMode::RadialOnly)
        .unwrap();
    assert_eq!(a.series.values, b.series.values);
}

#[test]
fn gaps_are_dark() {
    let s = radial_setup();
    let mut d = defaults().simulation.distribution;
    d.atom_count = 40;
    let pulses = [Pulse { on: 10e-6, off: 5e-6 }, Pulse { on: 10e-6, off: 0.0 }];
    let out = pulse_sequence_signal(s, &d, &signal(), &pulses, 2e-9, MotionMode::RadialOnly).unwrap();
    assert_eq!(out.pulse_windows.len(), 2);
    let (end0, start1) = (out.pulse_windows[0].1, out.pulse_windows[1].0);
    assert!(start1 > end0);
    assert!(out.series.values[end0..start1].iter().all(|&v| v == 0.0));
    assert!(out.series.values[start1..].iter().all(|&v| v > 0.0));
}

#[test]
fn coarse_steps_are_refused() {
    let s = radial_setup();
    let d = narrow(DistributionShape::Delta, 0.0, 1);
    let err = monte_carlo_signal(s, &d, &signal(), 1e-6, 20e-6, MotionMode::RadialOnly).unwrap_err();
    assert!(matches!(err, Error::StepSize { .. }), "{err}");
}
