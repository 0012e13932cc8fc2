//! Signal-processing chain: smoothing, rebinning, power spectra, peak
//! detection, Lorentzian line fits and exponential lifetime fits.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lsq::{levenberg_marquardt, levenberg_marquardt_outcome, LmOptions, LmOutcome};
use crate::scalar::{lit, Scalar};

/// Uniformly sampled signal; sample i sits at t0 + i·dt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeries<T> {
    pub t0: T,
    pub dt: T,
    pub values: Vec<T>,
}

impl<T: Scalar> TimeSeries<T> {
    pub fn new(t0: T, dt: T, values: Vec<T>) -> Result<Self> {
        if !(dt > T::zero()) {
            return Err(Error::InvalidConfig("time step must be positive".into()));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("non-finite sample at index {i}")));
        }
        Ok(TimeSeries { t0, dt, values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn time(&self, i: usize) -> T {
        self.t0 + self.dt * T::from_usize_lossy(i)
    }

    pub fn times(&self) -> Vec<T> {
        (0..self.len()).map(|i| self.time(i)).collect()
    }

    /// Index of the first sample at or after `t`.
    pub fn index_at(&self, t: T) -> usize {
        let x = (t - self.t0) / self.dt;
        if x <= T::zero() {
            return 0;
        }
        // tolerate rounding in t so that t = t0 + i·dt maps to i
        let i = (x - lit(1e-6)).ceil();
        i.to_usize().unwrap_or(usize::MAX).min(self.len())
    }

    /// Samples from time `start` on.
    pub fn from_time(&self, start: T) -> TimeSeries<T> {
        let i = self.index_at(start);
        TimeSeries { t0: self.time(i), dt: self.dt, values: self.values[i..].to_vec() }
    }

    pub fn mean(&self) -> T {
        if self.is_empty() {
            return T::zero();
        }
        self.values.iter().copied().sum::<T>() / T::from_usize_lossy(self.len())
    }
}

/// Centered boxcar of round(window/dt) samples (forced odd); the window
/// shrinks symmetrically near the ends.
pub fn moving_average<T: Scalar>(series: &TimeSeries<T>, window: T) -> Result<TimeSeries<T>> {
    let ratio = window / series.dt;
    if !(ratio >= T::one() - lit(1e-9)) {
        return Err(Error::Window(format!(
            "window {:.3e} s is shorter than the sample spacing {:.3e} s",
            window.to_f64_lossy(),
            series.dt.to_f64_lossy()
        )));
    }
    let mut width = ratio.round().to_usize().unwrap_or(1).max(1);
    if width.is_multiple_of(2) {
        width += 1;
    }
    if width == 1 {
        return Ok(series.clone());
    }
    let n = series.len();
    let half = width / 2;
    let mut prefix = Vec::with_capacity(n + 1);
    let mut acc = T::zero();
    prefix.push(acc);
    for &v in &series.values {
        acc = acc + v;
        prefix.push(acc);
    }
    let values = (0..n)
        .map(|i| {
            let h = half.min(i).min(n - 1 - i);
            let (lo, hi) = (i - h, i + h + 1);
            (prefix[hi] - prefix[lo]) / T::from_usize_lossy(hi - lo)
        })
        .collect();
    Ok(TimeSeries { t0: series.t0, dt: series.dt, values })
}

/// Averages consecutive groups of `factor` samples; a partial trailing group
/// is dropped. Output times are bin centers.
pub fn rebin<T: Scalar>(series: &TimeSeries<T>, factor: usize) -> Result<TimeSeries<T>> {
    if factor == 0 {
        return Err(Error::Window("rebin factor must be >= 1".into()));
    }
    let f = T::from_usize_lossy(factor);
    let values = series
        .values
        .chunks_exact(factor)
        .map(|c| c.iter().copied().sum::<T>() / f)
        .collect();
    Ok(TimeSeries {
        t0: series.t0 + series.dt * (f - T::one()) / lit(2.0),
        dt: series.dt * f,
        values,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Taper {
    #[default]
    None,
    /// Periodic-free Hann window w = ½(1 − cos 2πn/(N−1)); powers are divided
    /// by mean(w²) so white noise keeps its level.
    Hann,
}

/// One-sided power spectrum; `power` sums to the mean square of the
/// mean-subtracted (tapered, rescaled) segment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrum<T> {
    pub frequency: Vec<T>,
    pub power: Vec<T>,
    /// Bin spacing, Hz.
    pub resolution: T,
}

impl<T: Scalar> Spectrum<T> {
    pub fn len(&self) -> usize {
        self.power.len()
    }

    pub fn is_empty(&self) -> bool {
        self.power.is_empty()
    }

    pub fn total_power(&self) -> T {
        self.power.iter().copied().sum()
    }

    pub fn argmax_in(&self, lo: T, hi: T) -> Option<usize> {
        (0..self.len())
            .filter(|&i| self.frequency[i] >= lo && self.frequency[i] <= hi)
            .fold(None, |best: Option<usize>, i| match best {
                Some(b) if self.power[b] >= self.power[i] => Some(b),
                _ => Some(i),
            })
    }
}

pub fn power_spectrum<T: Scalar>(series: &TimeSeries<T>, start: T, taper: Taper) -> Result<Spectrum<T>> {
    let seg = series.from_time(start);
    let n = seg.len();
    if n < 2 {
        return Err(Error::Segment(format!(
            "{} samples after t = {:.4e} s; need at least 2",
            n,
            start.to_f64_lossy()
        )));
    }
    let mean = seg.mean();
    let nf = T::from_usize_lossy(n);
    let weights: Vec<T> = match taper {
        Taper::None => vec![T::one(); n],
        Taper::Hann => (0..n)
            .map(|i| {
                let x = lit::<T>(2.0) * T::PI() * T::from_usize_lossy(i) / T::from_usize_lossy(n - 1);
                lit::<T>(0.5) * (T::one() - x.cos())
            })
            .collect(),
    };
    let w2 = weights.iter().map(|w| *w * *w).sum::<T>() / nf;
    let mut buf: Vec<Complex<T>> = seg
        .values
        .iter()
        .zip(&weights)
        .map(|(v, w)| Complex::new((*v - mean) * *w, T::zero()))
        .collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let half = n / 2;
    let norm = nf * nf * w2;
    let power: Vec<T> = (0..=half)
        .map(|k| {
            let p = buf[k].norm_sqr() / norm;
            if k == 0 || (n.is_multiple_of(2) && k == half) {
                p
            } else {
                p + p
            }
        })
        .collect();
    let resolution = T::one() / (nf * seg.dt);
    let frequency = (0..=half).map(|k| resolution * T::from_usize_lossy(k)).collect();
    Ok(Spectrum { frequency, power, resolution })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeakCandidate<T> {
    pub index: usize,
    pub frequency: T,
    pub power: T,
    pub prominence: T,
}

/// Strict local maxima inside `band` whose topographic prominence is at least
/// `min_prominence` times the largest power in the band, sorted by frequency.
pub fn find_peaks<T: Scalar>(spectrum: &Spectrum<T>, min_prominence: T, band: (T, T)) -> Vec<PeakCandidate<T>> {
    let p = &spectrum.power;
    let n = p.len();
    let in_band: Vec<usize> =
        (0..n).filter(|&i| spectrum.frequency[i] >= band.0 && spectrum.frequency[i] <= band.1).collect();
    let (Some(&lo), Some(&hi)) = (in_band.first(), in_band.last()) else {
        return Vec::new();
    };
    let max_power = in_band.iter().fold(T::zero(), |m, &i| m.max(p[i]));
    let threshold = min_prominence * max_power;
    let mut out = Vec::new();
    for i in lo..=hi {
        let left_lower = i == 0 || p[i - 1] < p[i];
        let right_lower = i + 1 == n || p[i + 1] <= p[i];
        if !(left_lower && right_lower) || i == 0 || i + 1 == n {
            continue;
        }
        if p[i - 1] == p[i] && p[i + 1] == p[i] {
            continue;
        }
        let mut left_min = p[i];
        let mut j = i;
        while j > 0 && p[j - 1] <= p[i] {
            j -= 1;
            left_min = left_min.min(p[j]);
        }
        let mut right_min = p[i];
        let mut k = i;
        while k + 1 < n && p[k + 1] <= p[i] {
            k += 1;
            right_min = right_min.min(p[k]);
        }
        let prominence = p[i] - left_min.max(right_min);
        if prominence > T::zero() && prominence >= threshold {
            out.push(PeakCandidate { index: i, frequency: spectrum.frequency[i], power: p[i], prominence });
        }
    }
    out
}

/// Standard errors of the Lorentzian parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeakStderr<T> {
    pub center: T,
    pub fwhm: T,
    pub amplitude: T,
    pub baseline: T,
}

/// Fitted spectral line; construct through [`SpectrumPeak::new`] so the
/// uncertainty rule always holds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectrumPeak<T> {
    pub center: T,
    pub fwhm: T,
    pub amplitude: T,
    pub baseline: T,
    pub snr: T,
    /// fwhm / snr.
    pub uncertainty: T,
    /// 1/(π·fwhm): decay time of a damped oscillator with this linewidth.
    pub decoherence_time: T,
    pub stderr: PeakStderr<T>,
    pub window_bins: usize,
}

impl<T: Scalar> SpectrumPeak<T> {
    pub fn new(
        center: T,
        fwhm: T,
        amplitude: T,
        baseline: T,
        snr: T,
        stderr: PeakStderr<T>,
        window_bins: usize,
    ) -> Result<Self> {
        Ok(SpectrumPeak {
            center,
            fwhm,
            amplitude,
            baseline,
            snr,
            uncertainty: frequency_uncertainty(fwhm, snr)?,
            decoherence_time: T::one() / (T::PI() * fwhm),
            stderr,
            window_bins,
        })
    }
}

/// A(γ/2)²/((f − f₀)² + (γ/2)²) + B.
pub fn lorentzian<T: Scalar>(f: T, amplitude: T, center: T, fwhm: T, baseline: T) -> T {
    let hw = fwhm / lit(2.0);
    amplitude * hw * hw / ((f - center) * (f - center) + hw * hw) + baseline
}

pub fn frequency_uncertainty<T: Scalar>(fwhm: T, snr: T) -> Result<T> {
    if !(snr > T::zero()) {
        return Err(Error::Domain(format!("signal-to-noise ratio must be positive, got {}", snr)));
    }
    Ok(fwhm / snr)
}

/// Fits a Lorentzian over bins `index − half_window ..= index + half_window`.
///
/// Starts from the peak bin (f₀), the half-power crossing distance (γ) and the
/// peak height above the window minimum (A). The SNR is A over the RMS fit
/// residual, with the residual floored at machine epsilon times A.
pub fn fit_lorentzian<T: Scalar>(spectrum: &Spectrum<T>, index: usize, half_window: usize) -> Result<SpectrumPeak<T>> {
    let n = spectrum.len();
    let df = spectrum.resolution;
    let lo = index.saturating_sub(half_window);
    let hi = (index + half_window).min(n.saturating_sub(1));
    let bins = if n == 0 || index >= n { 0 } else { hi - lo + 1 };
    if bins < 5 {
        return Err(Error::DegenerateWidth { fwhm_hz: 0.0, bin_hz: df.to_f64_lossy() });
    }
    let p = &spectrum.power;
    let peak = p[index];
    if !(peak > T::zero()) {
        return Err(Error::FitFailure("candidate bin has no power".into()));
    }
    let base0 = (lo..=hi).fold(peak, |m, i| m.min(p[i]));
    let half_level = base0 + (peak - base0) / lit(2.0);
    let mut l = index;
    while l > lo && p[l] > half_level {
        l -= 1;
    }
    let mut r = index;
    while r < hi && p[r] > half_level {
        r += 1;
    }
    let width_bins = T::from_usize_lossy((r - l).max(2));

    // fit in bin units relative to the candidate, powers relative to its height
    let f_ref = spectrum.frequency[index];
    let x: Vec<T> = (lo..=hi).map(|i| (spectrum.frequency[i] - f_ref) / df).collect();
    let y: Vec<T> = (lo..=hi).map(|i| p[i] / peak).collect();
    let b0 = base0 / peak;
    let model = |f: T, q: &[T]| lorentzian(f, q[0], q[1], q[2], q[3]);
    let fit = match levenberg_marquardt_outcome(model, &x, &y, &[T::one() - b0, T::zero(), width_bins, b0], &LmOptions::default())? {
        LmOutcome::Converged(fit) => fit,
        // the usual way a non-Lorentzian line stalls: the width runs to zero
        LmOutcome::Stalled { params, .. } if params[2].abs() < T::one() => {
            return Err(Error::DegenerateWidth { fwhm_hz: (params[2].abs() * df).to_f64_lossy(), bin_hz: df.to_f64_lossy() });
        }
        LmOutcome::Stalled { params, ssr, iterations } => {
            return Err(Error::FitFailure(format!(
                "no convergence after {iterations} iterations (SSR {:.4e}, params {:?})",
                ssr.to_f64_lossy(),
                params.iter().map(|v| v.to_f64_lossy()).collect::<Vec<_>>()
            )));
        }
    };
    let q = &fit.params;
    let fwhm = q[2].abs() * df;
    if !(fwhm >= df) {
        return Err(Error::DegenerateWidth { fwhm_hz: fwhm.to_f64_lossy(), bin_hz: df.to_f64_lossy() });
    }
    let amplitude = q[0] * peak;
    let rms = (fit.rms_residual * peak).max(T::epsilon() * amplitude.abs());
    let snr = amplitude / rms;
    let stderr = PeakStderr {
        center: fit.stderr[1] * df,
        fwhm: fit.stderr[2] * df,
        amplitude: fit.stderr[0] * peak,
        baseline: fit.stderr[3] * peak,
    };
    SpectrumPeak::new(f_ref + q[1] * df, fwhm, amplitude, q[3] * peak, snr, stderr, bins)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExponentialFit<T> {
    /// Amplitude at t_start.
    pub amplitude: T,
    pub tau: T,
    pub offset: T,
    pub tau_stderr: T,
    pub t_start: T,
    pub samples: usize,
}

impl<T: Scalar> ExponentialFit<T> {
    pub fn eval(&self, t: T) -> T {
        self.amplitude * (-(t - self.t_start) / self.tau).exp() + self.offset
    }
}

/// Least-squares fit of A·exp(−(t − t_start)/τ) + C to samples at t ≥ t_start.
pub fn fit_exponential_decay<T: Scalar>(series: &TimeSeries<T>, t_start: T) -> Result<ExponentialFit<T>> {
    let seg = series.from_time(t_start);
    let n = seg.len();
    if n < 10 {
        return Err(Error::Segment(format!("{n} samples after t_start; need at least 10")));
    }
    let tenth = (n / 10).max(1);
    let avg = |s: &[T]| s.iter().copied().sum::<T>() / T::from_usize_lossy(s.len());
    let head = avg(&seg.values[..tenth]);
    let tail = avg(&seg.values[n - tenth..]);
    let scale = seg.values.iter().fold(T::zero(), |m, v| m.max(v.abs()));
    if !(head - tail > lit::<T>(1e-12) * scale) || scale == T::zero() {
        return Err(Error::NoDecay);
    }
    let span = seg.dt * T::from_usize_lossy(n - 1);
    let x: Vec<T> = (0..n).map(|i| seg.dt * T::from_usize_lossy(i) / span).collect();
    let y: Vec<T> = seg.values.iter().map(|v| *v / scale).collect();

    // initial guess from a log-linear fit with the offset set just below the data
    let ymin = y.iter().fold(T::infinity(), |m, v| m.min(*v));
    let c0 = if ymin > T::zero() { T::zero() } else { ymin - lit::<T>(1e-3) * (T::one() - ymin) };
    let design: Vec<Vec<T>> = x.iter().map(|&t| vec![T::one(), t]).collect();
    let logs: Vec<T> = y.iter().map(|v| (*v - c0).max(lit(1e-12)).ln()).collect();
    let line = crate::linalg::linear_least_squares(&design, &logs)
        .ok_or_else(|| Error::FitFailure("degenerate time axis".into()))?;
    let tau0 = if line[1] < T::zero() { -T::one() / line[1] } else { T::one() };
    let p0 = [line[0].exp(), tau0, c0];
    let model = |t: T, p: &[T]| p[0] * (-t / p[1]).exp() + p[2];
    let fit = levenberg_marquardt(model, &x, &y, &p0, &LmOptions::default())?;
    if !(fit.params[1] > T::zero()) {
        return Err(Error::NoDecay);
    }
    Ok(ExponentialFit {
        amplitude: fit.params[0] * scale,
        tau: fit.params[1] * span,
        offset: fit.params[2] * scale,
        tau_stderr: fit.stderr[1] * span,
        t_start: seg.t0,
        samples: n,
    })
}

/// Subtracts a fitted decay (evaluated at every sample time) from the series.
pub fn subtract_decay<T: Scalar>(series: &TimeSeries<T>, fit: &ExponentialFit<T>) -> TimeSeries<T> {
    let values = series.values.iter().enumerate().map(|(i, v)| *v - fit.eval(series.time(i))).collect();
    TimeSeries { t0: series.t0, dt: series.dt, values }
}

/// Parameters of the full analysis chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisParams<T> {
    /// Spectrum and lifetime segments start here, s.
    pub start: T,
    /// Boxcar width for the smoothed output series, s.
    pub moving_average: T,
    pub taper: Taper,
    /// Peak search band, Hz.
    pub band: (T, T),
    /// Fraction of the largest in-band power.
    pub min_prominence: T,
    pub max_peaks: usize,
    /// Half-width of the Lorentzian fit window, Hz (at least 3 bins).
    pub fit_half_window: T,
    /// Subtract the fitted decay before taking the spectrum.
    pub detrend: bool,
    /// Rebin factor applied before the lifetime fit.
    pub lifetime_rebin: usize,
}

impl<T: Scalar> Default for AnalysisParams<T> {
    fn default() -> Self {
        AnalysisParams {
            start: T::zero(),
            moving_average: lit(400e-9),
            taper: Taper::None,
            band: (lit(20e3), lit(1e6)),
            min_prominence: lit(0.1),
            max_peaks: 2,
            fit_half_window: lit(50e3),
            detrend: true,
            lifetime_rebin: 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport<T> {
    pub smoothed: TimeSeries<T>,
    pub spectrum: Spectrum<T>,
    pub candidates: Vec<PeakCandidate<T>>,
    /// Sorted by center frequency.
    pub peaks: Vec<SpectrumPeak<T>>,
    /// Candidates whose line fit failed, with the reason.
    pub failed_fits: Vec<(T, String)>,
    pub lifetime: Option<ExponentialFit<T>>,
    pub lifetime_error: Option<String>,
}

/// Lifetime fit (on the rebinned series), optional detrending, spectrum,
/// peak search and a Lorentzian fit for each of the strongest candidates.
pub fn analyze_series<T: Scalar>(series: &TimeSeries<T>, params: &AnalysisParams<T>) -> Result<AnalysisReport<T>> {
    let smoothed = moving_average(series, params.moving_average)?;
    let binned = rebin(series, params.lifetime_rebin.max(1).min(series.len().max(1)))?;
    let (lifetime, lifetime_error) = match fit_exponential_decay(&binned, params.start) {
        Ok(f) => (Some(f), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let detrended = match (&lifetime, params.detrend) {
        (Some(fit), true) => subtract_decay(series, fit),
        _ => series.clone(),
    };
    let spectrum = power_spectrum(&detrended, params.start, params.taper)?;
    let all = find_peaks(&spectrum, params.min_prominence, params.band);
    let base_half = (params.fit_half_window / spectrum.resolution).round().to_usize().unwrap_or(3).max(3);
    let mut ranked = all.clone();
    ranked.sort_by(|a, b| b.power.partial_cmp(&a.power).unwrap_or(std::cmp::Ordering::Equal));
    // a weaker candidate inside a stronger one's fit window is a shoulder of that line
    let mut strongest: Vec<PeakCandidate<T>> = Vec::new();
    for c in ranked {
        if strongest.len() == params.max_peaks {
            break;
        }
        if strongest.iter().all(|s| s.index.abs_diff(c.index) > base_half) {
            strongest.push(c);
        }
    }
    strongest.sort_by_key(|c| c.index);
    let mut peaks = Vec::new();
    let mut failed_fits = Vec::new();
    for (k, c) in strongest.iter().enumerate() {
        let mut half = base_half;
        // keep the window clear of neighbouring fitted peaks
        if k > 0 {
            half = half.min((c.index - strongest[k - 1].index) / 2);
        }
        if k + 1 < strongest.len() {
            half = half.min((strongest[k + 1].index - c.index) / 2);
        }
        match fit_lorentzian(&spectrum, c.index, half.max(2)) {
            Ok(p) => peaks.push(p),
            Err(e) => failed_fits.push((c.frequency, e.to_string())),
        }
    }
    peaks.sort_by(|a, b| a.center.partial_cmp(&b.center).unwrap_or(std::cmp::Ordering::Equal));
    Ok(AnalysisReport { smoothed, spectrum, candidates: all, peaks, failed_fits, lifetime, lifetime_error })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn moving_average_identity_and_constant() {
        let s = TimeSeries::new(0.0, 2e-9, vec![1.0, 5.0, -2.0, 3.0]).unwrap();
        assert_eq!(moving_average(&s, 2e-9).unwrap(), s);
        let c = TimeSeries::new(0.0_f64, 1.0, vec![2.5; 100]).unwrap();
        let m = moving_average(&c, 21.0).unwrap();
        assert!(m.values.iter().all(|v| (v - 2.5).abs() < 1e-12));
        assert!(matches!(moving_average(&c, 0.5), Err(Error::Window(_))));
    }

    #[test]
    fn parseval() {
        let v: Vec<f64> = (0..1001).map(|i| ((i * 7919) % 113) as f64 * 0.01).collect();
        let s = TimeSeries::new(0.0, 1e-3, v.clone()).unwrap();
        let sp = power_spectrum(&s, 0.0, Taper::None).unwrap();
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        let ms = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / v.len() as f64;
        assert!((sp.total_power() - ms).abs() < 1e-9 * ms);
    }

    #[test]
    fn uncertainty_rule() {
        assert!((frequency_uncertainty(64e3_f64, 21.3).unwrap() - 3004.69).abs() < 0.01);
        assert_eq!(frequency_uncertainty(0.0, 5.0).unwrap(), 0.0);
        assert_eq!(frequency_uncertainty(10.0, f64::INFINITY).unwrap(), 0.0);
        assert!(frequency_uncertainty(1.0, 0.0).is_err());
    }

    #[test]
    fn exponential_round_trip() {
        let s = TimeSeries::new(0.0, 1e-6, (0..2000).map(|i| 2.0 * (-(i as f64) * 1e-6 / 370e-6).exp() + 0.1).collect()).unwrap();
        let fit = fit_exponential_decay(&s, 0.0).unwrap();
        assert!((fit.tau / 370e-6 - 1.0).abs() < 1e-6, "{}", fit.tau);
        let flat = TimeSeries::new(0.0, 1.0, vec![1.0; 50]).unwrap();
        assert!(matches!(fit_exponential_decay(&flat, 0.0), Err(Error::NoDecay)));
    }
}
