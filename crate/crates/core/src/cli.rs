//! Command-line front end: each subcommand loads a config, runs the
//! relevant library stage and writes its files into the output directory.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::analysis::{analyze_series, ExponentialFit, PeakCandidate, SpectrumPeak};
use crate::config::{Protocol, Scenario};
use crate::dynamics::{
    fit_pulse_envelope, monte_carlo_signal, pulse_peaks, pulse_sequence_signal, EnsembleSetup, EnvelopeFit,
    MotionMode,
};
use crate::error::{Error, ErrorKind, Result};
use crate::fiber::solve_he11;
use crate::io::{self, Header};
use crate::trap::{analyze_trap, sensitivity_analysis, Minimum, TrapConfig};

#[derive(Debug, Parser)]
#[command(name = "nanotrap", version, about = "Two-color nanofiber trap simulator and signal analysis")]
pub struct Cli {
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory; overrides the config's `output`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Switch {
    On,
    Off,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ProtocolArg {
    Single,
    Pulsed,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve the HE11 mode at every beam wavelength.
    Modes,
    /// Potential grid and trap report, with the probe off, on, or both.
    Potential {
        #[arg(long, value_enum)]
        probe: Option<Switch>,
    },
    /// Frequency spread under ±fraction parameter changes.
    Sensitivity {
        #[arg(long)]
        fraction: Option<f64>,
    },
    /// Monte Carlo probe signal.
    Simulate {
        #[command(flatten)]
        motion: MotionArgs,
        /// Also write the series in the binary format.
        #[arg(long)]
        binary: bool,
    },
    /// Spectrum, peaks and lifetime of a time series.
    Analyze {
        /// Series to analyze; defaults to signal.csv in the output directory.
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Every stage in sequence, plus a manifest.
    Pipeline {
        #[command(flatten)]
        motion: MotionArgs,
        #[arg(long)]
        fraction: Option<f64>,
    },
}

#[derive(Debug, Clone, clap::Args)]
pub struct MotionArgs {
    /// Radial motion only, φ frozen at the minimum.
    #[arg(long, conflicts_with = "planar")]
    pub radial_only: bool,
    /// Full (r, φ) motion.
    #[arg(long)]
    pub planar: bool,
    #[arg(long, value_enum)]
    pub protocol: Option<ProtocolArg>,
}

impl MotionArgs {
    fn apply(&self, s: &mut Scenario<f64>) -> Result<()> {
        if self.radial_only {
            s.simulation.mode = MotionMode::RadialOnly;
        }
        if self.planar {
            s.simulation.mode = MotionMode::Planar;
        }
        match self.protocol {
            Some(ProtocolArg::Single) => s.simulation.protocol = Protocol::Single,
            Some(ProtocolArg::Pulsed) => {
                if s.simulation.pulses.is_empty() {
                    return Err(Error::InvalidConfig("pulsed protocol needs simulation.pulses".into()));
                }
                s.simulation.protocol = Protocol::Pulsed;
            }
            None => {}
        }
        Ok(())
    }
}

/// Loaded scenario plus where and how to write.
pub struct Context {
    pub scenario: Scenario<f64>,
    pub out_dir: PathBuf,
}

impl Context {
    pub fn load(config: &Path, out: Option<&Path>, seed: Option<u64>) -> Result<Self> {
        let mut scenario = Scenario::<f64>::load(config)?;
        if let Some(s) = seed {
            scenario.set_seed(s);
        }
        let out_dir = out
            .map(Path::to_path_buf)
            .or_else(|| scenario.output.clone())
            .unwrap_or_else(|| PathBuf::from("out"));
        Ok(Context { scenario, out_dir })
    }

    pub fn header(&self) -> Header {
        Header::new(self.scenario.digest(), self.scenario.seed)
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ModeReport {
    pub wavelength_m: f64,
    pub core_index: f64,
    pub v_number: f64,
    pub single_mode: bool,
    pub beta_per_m: f64,
    pub effective_index: f64,
    pub q_per_m: f64,
    pub h_per_m: f64,
    /// 1/q: field decay length.
    pub field_decay_length_m: f64,
    /// 1/(2q): intensity decay length.
    pub intensity_decay_length_m: f64,
    pub hybrid_parameter: f64,
    pub lattice_period_m: f64,
    pub characteristic_residual: f64,
}

pub fn cmd_modes(ctx: &Context) -> Result<Vec<PathBuf>> {
    let trap = &ctx.scenario.trap;
    trap.validate()?;
    let mut wavelengths: Vec<f64> = trap.beams.iter().map(|b| b.wavelength).collect();
    wavelengths.sort_by(|a, b| a.partial_cmp(b).expect("finite wavelengths"));
    wavelengths.dedup();
    let reports = wavelengths
        .iter()
        .map(|&w| {
            let m = solve_he11(&trap.fiber, w)?;
            Ok(ModeReport {
                wavelength_m: w,
                core_index: m.core_index,
                v_number: m.v_number,
                single_mode: m.v_number < crate::fiber::SINGLE_MODE_CUTOFF,
                beta_per_m: m.beta,
                effective_index: m.effective_index(),
                q_per_m: m.q,
                h_per_m: m.h,
                field_decay_length_m: 1.0 / m.q,
                intensity_decay_length_m: 0.5 / m.q,
                hybrid_parameter: m.hybrid_parameter,
                lattice_period_m: m.lattice_period(),
                characteristic_residual: m.characteristic_residual(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let path = ctx.path("modes.json");
    io::write_json(&path, &ctx.header(), &reports)?;
    Ok(vec![path])
}

fn potential_variant(ctx: &Context, trap: &TrapConfig<f64>, tag: &str) -> Result<Vec<PathBuf>> {
    let analysis = analyze_trap(trap)?;
    let csv = ctx.path(&format!("potential_{tag}.csv"));
    let json = ctx.path(&format!("trap_report_{tag}.json"));
    io::write_potential_csv(&csv, &ctx.header(), &analysis.field)?;
    io::write_json(&json, &ctx.header(), &analysis.report)?;
    Ok(vec![csv, json])
}

pub fn cmd_potential(ctx: &Context, probe: Option<Switch>) -> Result<Vec<PathBuf>> {
    let trap = &ctx.scenario.trap;
    let mut out = Vec::new();
    if probe != Some(Switch::On) {
        out.extend(potential_variant(ctx, &trap.without_probe(), "off")?);
    }
    if probe != Some(Switch::Off) {
        if !trap.has_probe() {
            if probe == Some(Switch::On) {
                return Err(Error::InvalidConfig("--probe on needs a probe beam in the config".into()));
            }
        } else {
            out.extend(potential_variant(ctx, trap, "on")?);
        }
    }
    Ok(out)
}

pub fn cmd_sensitivity(ctx: &Context, fraction: Option<f64>) -> Result<Vec<PathBuf>> {
    let fraction = fraction.unwrap_or(ctx.scenario.sensitivity_fraction);
    if !(fraction >= 0.0) {
        return Err(Error::InvalidConfig("--fraction must be >= 0".into()));
    }
    let report = sensitivity_analysis(&ctx.scenario.trap, fraction)?;
    let path = ctx.path("sensitivity.json");
    io::write_json(&path, &ctx.header(), &report)?;
    Ok(vec![path])
}

#[derive(Debug, Clone, Serialize)]
pub struct SimulationSummary {
    pub mode: MotionMode,
    pub protocol: Protocol,
    pub samples: usize,
    pub dt_s: f64,
    pub atoms: usize,
    pub final_live_atoms: u32,
    pub all_lost: bool,
    pub no_probe_minimum: Minimum<f64>,
    pub with_probe_minimum: Minimum<f64>,
    pub pulse_windows: Vec<(usize, usize)>,
    pub pulse_peaks: Vec<f64>,
    pub envelope: Option<EnvelopeFit<f64>>,
}

pub fn cmd_simulate(ctx: &Context, binary: bool) -> Result<Vec<PathBuf>> {
    let s = &ctx.scenario;
    let sim = &s.simulation;
    let setup = EnsembleSetup::new(&s.trap, sim.mode)?;
    let out = match sim.protocol {
        Protocol::Single => {
            monte_carlo_signal(&setup, &sim.distribution, &sim.signal, sim.dt, sim.duration, sim.mode)?
        }
        Protocol::Pulsed => pulse_sequence_signal(&setup, &sim.distribution, &sim.signal, &sim.pulses, sim.dt, sim.mode)?,
    };
    let header = ctx.header();
    let mut files = Vec::new();
    let csv = ctx.path("signal.csv");
    io::write_series_csv(&csv, &header, &out.series)?;
    files.push(csv);
    if binary {
        let bin = ctx.path("signal.bin");
        io::write_series_binary(&bin, &header, &out.series)?;
        files.push(bin);
    }
    let summary = SimulationSummary {
        mode: sim.mode,
        protocol: sim.protocol,
        samples: out.series.len(),
        dt_s: sim.dt,
        atoms: sim.distribution.atom_count,
        final_live_atoms: out.live.last().copied().unwrap_or(0),
        all_lost: out.all_lost,
        no_probe_minimum: out.no_probe_minimum,
        with_probe_minimum: out.with_probe_minimum,
        pulse_windows: out.pulse_windows.clone(),
        pulse_peaks: pulse_peaks(&out),
        envelope: match sim.protocol {
            Protocol::Pulsed => fit_pulse_envelope(&out).ok(),
            Protocol::Single => None,
        },
    };
    let json = ctx.path("simulation.json");
    io::write_json(&json, &header, &summary)?;
    files.push(json);
    Ok(files)
}

#[derive(Debug, Clone, Serialize)]
pub struct PeaksReport {
    pub source: String,
    pub candidates: Vec<PeakCandidate<f64>>,
    pub failed_fits: Vec<(f64, String)>,
    pub peaks: Vec<SpectrumPeak<f64>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct LifetimeReport {
    pub fit: Option<ExponentialFit<f64>>,
    pub error: Option<String>,
}

pub fn cmd_analyze(ctx: &Context, input: Option<&Path>) -> Result<Vec<PathBuf>> {
    let input = input.map(Path::to_path_buf).unwrap_or_else(|| ctx.path("signal.csv"));
    let series = io::read_series::<f64>(&input)?;
    let report = analyze_series(&series, &ctx.scenario.analysis)?;
    let header = ctx.header();
    let spectrum = ctx.path("spectrum.csv");
    io::write_spectrum_csv(&spectrum, &header, &report.spectrum)?;
    let smoothed = ctx.path("smoothed.csv");
    io::write_series_csv(&smoothed, &header, &report.smoothed)?;
    let peaks = ctx.path("peaks.json");
    io::write_json(
        &peaks,
        &header,
        &PeaksReport { source: input.display().to_string(), candidates: report.candidates, failed_fits: report.failed_fits, peaks: report.peaks },
    )?;
    let lifetime = ctx.path("lifetime.json");
    io::write_json(&lifetime, &header, &LifetimeReport { fit: report.lifetime, error: report.lifetime_error })?;
    Ok(vec![spectrum, smoothed, peaks, lifetime])
}

#[derive(Debug, Clone, Serialize)]
pub struct ManifestEntry {
    pub stage: String,
    pub file: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub config_digest: String,
    pub seed: u64,
    pub files: Vec<ManifestEntry>,
}

pub fn cmd_pipeline(ctx: &Context, fraction: Option<f64>) -> Result<Vec<PathBuf>> {
    let mut entries = Vec::new();
    let mut all = Vec::new();
    let stages: Vec<(&str, Vec<PathBuf>)> = vec![
        ("modes", cmd_modes(ctx)?),
        ("potential", cmd_potential(ctx, None)?),
        ("sensitivity", cmd_sensitivity(ctx, fraction)?),
        ("simulate", cmd_simulate(ctx, false)?),
        ("analyze", cmd_analyze(ctx, None)?),
    ];
    for (stage, files) in stages {
        for f in files {
            entries.push(ManifestEntry {
                stage: stage.to_string(),
                file: f.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default(),
                sha256: io::file_digest(&f)?,
            });
            all.push(f);
        }
    }
    let header = ctx.header();
    let manifest = Manifest { config_digest: header.config_digest.clone(), seed: header.seed, files: entries };
    let path = ctx.path("manifest.json");
    io::write_json(&path, &header, &manifest)?;
    all.push(path);
    Ok(all)
}

pub fn run(cli: &Cli) -> Result<Vec<PathBuf>> {
    let config = cli
        .config
        .as_deref()
        .ok_or_else(|| Error::InvalidConfig("--config PATH is required".into()))?;
    let mut ctx = Context::load(config, cli.out.as_deref(), cli.seed)?;
    match &cli.command {
        Command::Modes => cmd_modes(&ctx),
        Command::Potential { probe } => cmd_potential(&ctx, *probe),
        Command::Sensitivity { fraction } => cmd_sensitivity(&ctx, *fraction),
        Command::Simulate { motion, binary } => {
            motion.apply(&mut ctx.scenario)?;
            cmd_simulate(&ctx, *binary)
        }
        Command::Analyze { input } => cmd_analyze(&ctx, input.as_deref()),
        Command::Pipeline { motion, fraction } => {
            motion.apply(&mut ctx.scenario)?;
            cmd_pipeline(&ctx, *fraction)
        }
    }
}

pub fn exit_code(kind: ErrorKind) -> i32 {
    match kind {
        ErrorKind::Validation => 1,
        ErrorKind::Numerical => 2,
        ErrorKind::Io => 3,
    }
}
