//! Detection-event simulation and photon-statistics estimators.
//!
//! Streams carry integer-picosecond timestamps. Each event also carries a
//! provenance tag (signal, converter noise, dark count) for diagnostics; the
//! estimators read only timestamps and channels.

use std::collections::HashMap;
use std::fmt::Write as _;

use rand::Rng;
use rand_distr::{Distribution, Exp, Poisson};
use serde::{Deserialize, Serialize};

use crate::converter::{external_efficiency, noise_rate, ConverterModel};
use crate::error::{check_non_negative, check_positive, check_unit, invalid, Error, Result};
use crate::rng::{self, SimRng};

const PS_PER_NS: f64 = 1e3;
const PS_PER_S: f64 = 1e12;

// Substream ids within one simulation seed.
const SIGNAL_STREAM: u64 = 0;
const NOISE_STREAM: u64 = 16;
const DARK_STREAM: u64 = 32;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SourceKind {
    /// At most one photon per trigger.
    SingleEmitter { emission_probability: f64 },
    /// Poisson photon number per trigger.
    CoherentPulse { mean_photon_number: f64 },
}

impl SourceKind {
    pub fn mean_photons(&self) -> f64 {
        match *self {
            SourceKind::SingleEmitter { emission_probability } => emission_probability,
            SourceKind::CoherentPulse { mean_photon_number } => mean_photon_number,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PulseShape {
    Rectangular { width_ns: f64 },
    Lorentzian { fwhm_ns: f64 },
}

impl PulseShape {
    /// Draws an emission time in `[0, window)` for a pulse centred on the
    /// window.
    fn sample_offset_ns(&self, window_ns: f64, rng: &mut SimRng) -> f64 {
        let center = 0.5 * window_ns;
        let t = match *self {
            PulseShape::Rectangular { width_ns } => {
                center + width_ns * (rng.gen::<f64>() - 0.5)
            }
            PulseShape::Lorentzian { fwhm_ns } => {
                // Inverse CDF of the Cauchy law truncated to the window.
                let hwhm = 0.5 * fwhm_ns;
                let cdf = |x: f64| 0.5 + ((x - center) / hwhm).atan() / std::f64::consts::PI;
                let (lo, hi) = (cdf(0.0), cdf(window_ns));
                let u = lo + (hi - lo) * rng.gen::<f64>();
                center + hwhm * (std::f64::consts::PI * (u - 0.5)).tan()
            }
        };
        t.clamp(0.0, window_ns * (1.0 - f64::EPSILON))
    }

    /// Fraction of the emission (centred in `window_ns`) inside `[lo, hi)`.
    pub fn fraction_in(&self, window_ns: f64, lo_ns: f64, hi_ns: f64) -> f64 {
        let center = 0.5 * window_ns;
        let (lo, hi) = (lo_ns.max(0.0), hi_ns.min(window_ns));
        if hi <= lo {
            return 0.0;
        }
        match *self {
            PulseShape::Rectangular { width_ns } => {
                let a = lo.max(center - 0.5 * width_ns);
                let b = hi.min(center + 0.5 * width_ns);
                ((b - a) / width_ns).clamp(0.0, 1.0)
            }
            PulseShape::Lorentzian { fwhm_ns } => {
                let cdf = |x: f64| ((x - center) / (0.5 * fwhm_ns)).atan();
                (cdf(hi) - cdf(lo)) / (cdf(window_ns) - cdf(0.0))
            }
        }
    }

    pub fn width_ns(&self) -> f64 {
        match *self {
            PulseShape::Rectangular { width_ns } => width_ns,
            PulseShape::Lorentzian { fwhm_ns } => fwhm_ns,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceModel {
    pub kind: SourceKind,
    pub repetition_rate_hz: f64,
    pub pulse_shape: PulseShape,
    /// Emission window per trigger; pulses are centred in it.
    pub window_ns: f64,
}

impl SourceModel {
    /// SiV single-photon emitter: 5 % generation efficiency in a 75 ns window
    /// at 670 kHz, 30 ns wide photons.
    pub fn siv_emitter() -> Self {
        Self {
            kind: SourceKind::SingleEmitter {
                emission_probability: 0.05,
            },
            repetition_rate_hz: 670e3,
            pulse_shape: PulseShape::Rectangular { width_ns: 30.0 },
            window_ns: 75.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            SourceKind::SingleEmitter {
                emission_probability,
            } => check_unit("emission_probability", emission_probability)?,
            SourceKind::CoherentPulse { mean_photon_number } => {
                check_non_negative("mean_photon_number", mean_photon_number)?
            }
        }
        check_positive("repetition_rate_hz", self.repetition_rate_hz)?;
        check_positive("pulse width", self.pulse_shape.width_ns())?;
        check_positive("window_ns", self.window_ns)?;
        if self.window_ns >= self.trigger_period_ns() {
            return Err(invalid("window_ns", "emission window must be shorter than the trigger period"));
        }
        Ok(())
    }

    pub fn trigger_period_ns(&self) -> f64 {
        1e9 / self.repetition_rate_hz
    }

    fn photons_per_trigger(&self, rng: &mut SimRng) -> u64 {
        match self.kind {
            SourceKind::SingleEmitter {
                emission_probability,
            } => u64::from(rng.gen::<f64>() < emission_probability),
            SourceKind::CoherentPulse { mean_photon_number } => {
                if mean_photon_number == 0.0 {
                    0
                } else {
                    Poisson::new(mean_photon_number)
                        .map(|d| d.sample(rng) as u64)
                        .unwrap_or(0)
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorModel {
    pub efficiency: f64,
    pub dark_rate_hz: f64,
    pub gate_window_ns: f64,
}

impl DetectorModel {
    /// Telecom SNSPD.
    pub fn snspd() -> Self {
        Self {
            efficiency: 0.29,
            dark_rate_hz: 0.0,
            gate_window_ns: 75.0,
        }
    }

    pub fn ideal() -> Self {
        Self {
            efficiency: 1.0,
            dark_rate_hz: 0.0,
            gate_window_ns: 75.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_unit("detector.efficiency", self.efficiency)?;
        check_non_negative("detector.dark_rate_hz", self.dark_rate_hz)?;
        check_positive("detector.gate_window_ns", self.gate_window_ns)
    }
}

/// Frequency converter reduced to its effect on a photon stream.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConverterOperatingPoint {
    pub efficiency: f64,
    /// Noise photons per second leaving the final filter.
    pub noise_rate_hz: f64,
}

impl ConverterOperatingPoint {
    pub fn from_model(model: &ConverterModel, pump_mw: f64) -> Result<Self> {
        Ok(Self {
            efficiency: external_efficiency(model, pump_mw)?,
            noise_rate_hz: noise_rate(model, pump_mw)?,
        })
    }

    pub fn validate(&self) -> Result<()> {
        check_unit("converter.efficiency", self.efficiency)?;
        check_non_negative("converter.noise_rate_hz", self.noise_rate_hz)
    }
}

/// Source → converter → lossy channel segments → detector(s).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhotonChain {
    pub source: SourceModel,
    pub converter: Option<ConverterOperatingPoint>,
    /// Losses in dB, applied in order.
    pub channel_losses_db: Vec<f64>,
    pub detector: DetectorModel,
}

impl PhotonChain {
    pub fn validate(&self) -> Result<()> {
        self.source.validate()?;
        if let Some(c) = &self.converter {
            c.validate()?;
        }
        for &l in &self.channel_losses_db {
            check_non_negative("channel_loss_db", l)?;
        }
        self.detector.validate()
    }

    pub fn channel_transmission(&self) -> f64 {
        self.channel_losses_db.iter().map(|&l| db_to_transmission(l)).product()
    }

    /// Probability that a photon leaving the source produces a detection.
    pub fn photon_detection_probability(&self) -> f64 {
        self.converter.map_or(1.0, |c| c.efficiency)
            * self.channel_transmission()
            * self.detector.efficiency
    }

    /// Rate of detected converter-noise events (summed over detectors).
    pub fn detected_noise_rate_hz(&self) -> f64 {
        self.converter.map_or(0.0, |c| c.noise_rate_hz)
            * self.channel_transmission()
            * self.detector.efficiency
    }

    /// Survival of one photon from the source to the detector output.
    fn photon_survives(&self, rng: &mut SimRng) -> bool {
        if let Some(c) = &self.converter {
            if rng.gen::<f64>() >= c.efficiency {
                return false;
            }
        }
        for &loss in &self.channel_losses_db {
            if rng.gen::<f64>() >= db_to_transmission(loss) {
                return false;
            }
        }
        rng.gen::<f64>() < self.detector.efficiency
    }
}

pub fn db_to_transmission(loss_db: f64) -> f64 {
    10f64.powf(-loss_db / 10.0)
}

pub fn transmission_to_db(transmission: f64) -> f64 {
    -10.0 * transmission.log10()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Provenance {
    Signal,
    ConverterNoise,
    Dark,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DetectionEvent {
    pub timestamp_ps: u64,
    pub channel: u16,
    pub provenance: Provenance,
}

/// Time-ordered detection events. Ties are broken by channel.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EventStream {
    events: Vec<DetectionEvent>,
}

impl EventStream {
    pub fn from_events(mut events: Vec<DetectionEvent>) -> Self {
        events.sort_by_key(|e| (e.timestamp_ps, e.channel));
        Self { events }
    }

    pub fn events(&self) -> &[DetectionEvent] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Mutable access to provenance tags only; ordering is preserved.
    pub fn provenance_mut(&mut self) -> impl Iterator<Item = &mut Provenance> {
        self.events.iter_mut().map(|e| &mut e.provenance)
    }

    pub fn count(&self, provenance: Provenance) -> usize {
        self.events.iter().filter(|e| e.provenance == provenance).count()
    }

    pub fn merge(&self, other: &EventStream) -> EventStream {
        let mut all = self.events.clone();
        all.extend_from_slice(&other.events);
        EventStream::from_events(all)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("timestamp_ps,channel\n");
        for e in &self.events {
            let _ = writeln!(out, "{},{}", e.timestamp_ps, e.channel);
        }
        out
    }
}

fn trigger_time_ps(k: u64, period_ps: f64) -> u64 {
    (k as f64 * period_ps).round() as u64
}

/// Homogeneous Poisson arrivals on `[0, duration)`.
fn poisson_arrivals(
    rate_hz: f64,
    duration_s: f64,
    channel: u16,
    provenance: Provenance,
    rng: &mut SimRng,
    out: &mut Vec<DetectionEvent>,
) {
    if rate_hz <= 0.0 {
        return;
    }
    let gap = Exp::new(rate_hz).expect("positive rate");
    let mut t = 0.0;
    loop {
        t += gap.sample(rng);
        if t >= duration_s {
            break;
        }
        out.push(DetectionEvent {
            timestamp_ps: (t * PS_PER_S) as u64,
            channel,
            provenance,
        });
    }
}

fn check_duration(duration_s: f64) -> Result<()> {
    check_positive("duration_s", duration_s)
}

/// Simulates the chain onto `outputs` detectors behind a balanced splitter
/// (one detector means no splitter).
fn simulate_outputs(
    chain: &PhotonChain,
    outputs: u16,
    duration_s: f64,
    seed: u64,
) -> Result<Vec<EventStream>> {
    chain.validate()?;
    check_duration(duration_s)?;
    let period_ps = chain.source.trigger_period_ns() * PS_PER_NS;
    let triggers = (duration_s * chain.source.repetition_rate_hz).floor() as u64;
    let mut per_output: Vec<Vec<DetectionEvent>> = vec![Vec::new(); outputs as usize];

    let mut rng = rng::stream(seed, SIGNAL_STREAM);
    for k in 0..triggers {
        let t0 = trigger_time_ps(k, period_ps);
        for _ in 0..chain.source.photons_per_trigger(&mut rng) {
            if !chain.photon_survives(&mut rng) {
                continue;
            }
            let port = if outputs > 1 { rng.gen_range(0..outputs) } else { 0 };
            let offset = chain
                .source
                .pulse_shape
                .sample_offset_ns(chain.source.window_ns, &mut rng);
            per_output[port as usize].push(DetectionEvent {
                timestamp_ps: t0 + (offset * PS_PER_NS) as u64,
                channel: port,
                provenance: Provenance::Signal,
            });
        }
    }

    let noise_per_output = chain.detected_noise_rate_hz() / f64::from(outputs);
    for ch in 0..outputs {
        let mut noise_rng = rng::stream(seed, NOISE_STREAM + u64::from(ch));
        poisson_arrivals(
            noise_per_output,
            duration_s,
            ch,
            Provenance::ConverterNoise,
            &mut noise_rng,
            &mut per_output[ch as usize],
        );
        let mut dark_rng = rng::stream(seed, DARK_STREAM + u64::from(ch));
        poisson_arrivals(
            chain.detector.dark_rate_hz,
            duration_s,
            ch,
            Provenance::Dark,
            &mut dark_rng,
            &mut per_output[ch as usize],
        );
    }
    Ok(per_output.into_iter().map(EventStream::from_events).collect())
}

/// Single-detector event stream. Identical `(chain, duration, seed)` give an
/// identical stream.
pub fn simulate_stream(chain: &PhotonChain, duration_s: f64, seed: u64) -> Result<EventStream> {
    Ok(simulate_outputs(chain, 1, duration_s, seed)?.remove(0))
}

/// Streams on channels 0 and 1 behind a balanced beamsplitter, each with its
/// own detector noise.
pub fn simulate_split(
    chain: &PhotonChain,
    duration_s: f64,
    seed: u64,
) -> Result<(EventStream, EventStream)> {
    let mut v = simulate_outputs(chain, 2, duration_s, seed)?;
    let b = v.pop().expect("two outputs");
    let a = v.pop().expect("two outputs");
    Ok((a, b))
}

/// Gated coincidence analysis settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorrelationSettings {
    pub trigger_period_ns: f64,
    /// Analysis gate length per trigger.
    pub window_ns: f64,
    /// Gate start relative to the trigger.
    pub gate_offset_ns: f64,
    /// Largest delay peak evaluated, in trigger periods.
    pub max_delay_periods: u32,
    /// Peaks with `|delay| >= norm_min_delay` normalize g²(0).
    pub norm_min_delay: u32,
    pub histogram_bin_ns: f64,
}

impl CorrelationSettings {
    pub fn new(trigger_period_ns: f64, window_ns: f64) -> Self {
        Self {
            trigger_period_ns,
            window_ns,
            gate_offset_ns: 0.0,
            max_delay_periods: 20,
            norm_min_delay: 5,
            histogram_bin_ns: 2.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_positive("trigger_period_ns", self.trigger_period_ns)?;
        check_positive("window_ns", self.window_ns)?;
        check_non_negative("gate_offset_ns", self.gate_offset_ns)?;
        if self.gate_offset_ns + self.window_ns > self.trigger_period_ns {
            return Err(invalid("window_ns", "gate extends past the trigger period"));
        }
        if self.norm_min_delay == 0 || self.norm_min_delay > self.max_delay_periods {
            return Err(invalid(
                "norm_min_delay",
                "normalization peaks must satisfy 1 <= min <= max_delay_periods",
            ));
        }
        check_positive("histogram_bin_ns", self.histogram_bin_ns)
    }

    /// Gate of `gate_ns` centred in the source's emission window.
    pub fn centered(source: &SourceModel, gate_ns: f64) -> Self {
        Self {
            gate_offset_ns: (0.5 * (source.window_ns - gate_ns)).max(0.0),
            ..Self::new(source.trigger_period_ns(), gate_ns)
        }
    }

    /// Trigger index of an in-gate timestamp.
    fn gate_index(&self, t_ps: u64) -> Option<i64> {
        let period_ps = self.trigger_period_ns * PS_PER_NS;
        let t = t_ps as f64;
        let k = (t / period_ps).floor();
        let offset = t - k * period_ps - self.gate_offset_ns * PS_PER_NS;
        (offset >= 0.0 && offset < self.window_ns * PS_PER_NS).then_some(k as i64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PeakCount {
    pub delay_periods: i64,
    pub coincidences: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HistogramBin {
    pub delay_ns: f64,
    pub coincidences: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorrelationResult {
    pub g2_zero: f64,
    pub g2_uncertainty: f64,
    pub zero_delay_coincidences: u64,
    pub normalization_coincidences: u64,
    pub normalization_peaks: u32,
    /// Fewer than 10 coincidences in the normalization peaks.
    pub low_confidence: bool,
    pub window_ns: f64,
    pub peaks: Vec<PeakCount>,
    pub histogram: Vec<HistogramBin>,
}

impl CorrelationResult {
    pub fn histogram_csv(&self) -> String {
        let mut out = String::from("delay_ns,coincidences\n");
        for b in &self.histogram {
            let _ = writeln!(out, "{},{}", b.delay_ns, b.coincidences);
        }
        out
    }
}

fn gated_counts(stream: &EventStream, s: &CorrelationSettings) -> Vec<(i64, u64)> {
    let mut out: Vec<(i64, u64)> = Vec::new();
    for e in stream.events() {
        if let Some(k) = s.gate_index(e.timestamp_ps) {
            match out.last_mut() {
                Some((last, n)) if *last == k => *n += 1,
                _ => out.push((k, 1)),
            }
        }
    }
    out
}

/// Start–stop cross-correlation histogram of `b` relative to `a`.
fn cross_histogram(a: &EventStream, b: &EventStream, s: &CorrelationSettings) -> Vec<HistogramBin> {
    let span_ps = (f64::from(s.max_delay_periods) + 0.5) * s.trigger_period_ns * PS_PER_NS;
    let bin_ps = s.histogram_bin_ns * PS_PER_NS;
    let half_bins = (span_ps / bin_ps).ceil() as i64;
    let mut counts = vec![0u64; (2 * half_bins + 1) as usize];
    let bt: Vec<u64> = b.events().iter().map(|e| e.timestamp_ps).collect();
    let mut lo = 0usize;
    for e in a.events() {
        let ta = e.timestamp_ps as f64;
        while lo < bt.len() && (bt[lo] as f64) < ta - span_ps {
            lo += 1;
        }
        for &tb in &bt[lo..] {
            let dt = tb as f64 - ta;
            if dt > span_ps {
                break;
            }
            let bin = (dt / bin_ps).round() as i64 + half_bins;
            if (0..counts.len() as i64).contains(&bin) {
                counts[bin as usize] += 1;
            }
        }
    }
    counts
        .into_iter()
        .enumerate()
        .map(|(i, c)| HistogramBin {
            delay_ns: (i as i64 - half_bins) as f64 * s.histogram_bin_ns,
            coincidences: c,
        })
        .collect()
}

/// Gated second-order correlation between two detector streams.
///
/// Coincidences are counted between gate `k` on `a` and gate `k + d` on `b`.
/// g²(0) is the zero-delay peak over the mean of the far peaks
/// (`|d| >= norm_min_delay`), with no background or dark-count subtraction.
/// The uncertainty propagates Poisson counting errors through the ratio.
pub fn correlate(a: &EventStream, b: &EventStream, s: &CorrelationSettings) -> Result<CorrelationResult> {
    s.validate()?;
    let ca = gated_counts(a, s);
    let cb: HashMap<i64, u64> = gated_counts(b, s).into_iter().collect();
    let max = i64::from(s.max_delay_periods);
    let mut peaks = Vec::with_capacity((2 * max + 1) as usize);
    for d in -max..=max {
        let c: u64 = ca
            .iter()
            .filter_map(|&(k, na)| cb.get(&(k + d)).map(|&nb| na * nb))
            .sum();
        peaks.push(PeakCount {
            delay_periods: d,
            coincidences: c,
        });
    }
    let zero = peaks[max as usize].coincidences;
    let norm: Vec<u64> = peaks
        .iter()
        .filter(|p| p.delay_periods.unsigned_abs() >= u64::from(s.norm_min_delay))
        .map(|p| p.coincidences)
        .collect();
    let norm_total: u64 = norm.iter().sum();
    let norm_mean = norm_total as f64 / norm.len() as f64;
    let (g2, sigma) = if norm_total == 0 {
        (if zero == 0 { 0.0 } else { f64::INFINITY }, f64::INFINITY)
    } else if zero == 0 {
        (0.0, 1.0 / norm_mean)
    } else {
        let g = zero as f64 / norm_mean;
        (g, g * (1.0 / zero as f64 + 1.0 / norm_total as f64).sqrt())
    };
    Ok(CorrelationResult {
        g2_zero: g2,
        g2_uncertainty: sigma,
        zero_delay_coincidences: zero,
        normalization_coincidences: norm_total,
        normalization_peaks: norm.len() as u32,
        low_confidence: norm_total < 10,
        window_ns: s.window_ns,
        peaks,
        histogram: cross_histogram(a, b, s),
    })
}

/// HBT g²(0) with default peak and histogram settings.
pub fn hbt_g2(
    a: &EventStream,
    b: &EventStream,
    trigger_period_ns: f64,
    window_ns: f64,
) -> Result<CorrelationResult> {
    correlate(a, b, &CorrelationSettings::new(trigger_period_ns, window_ns))
}

/// Flat-background g²(0) for mean signal `s` and background `b` per gate:
/// `(2sb + b²)/(s + b)²`.
pub fn background_limited_g2(signal: f64, background: f64) -> f64 {
    (2.0 * signal * background + background * background) / (signal + background).powi(2)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GatedSnr {
    /// Signal-attributable in-gate rate over background rate. `None` when no
    /// background is observed.
    pub snr: Option<f64>,
    /// Total in-gate rate over background rate; ≈ 1 for a pure noise stream.
    pub in_gate_to_background: Option<f64>,
    pub in_gate_events: u64,
    pub out_of_gate_events: u64,
}

impl GatedSnr {
    pub fn is_infinite(&self) -> bool {
        self.snr.is_none()
    }
}

/// Gated signal-to-noise ratio with the background rate taken from the
/// out-of-gate part of each trigger period. The gate starts at the trigger.
pub fn gated_snr(stream: &EventStream, trigger_period_ns: f64, gate_ns: f64) -> Result<GatedSnr> {
    check_positive("trigger_period_ns", trigger_period_ns)?;
    check_positive("gate_ns", gate_ns)?;
    if gate_ns >= trigger_period_ns {
        return Err(invalid("gate_ns", "gate must be shorter than the trigger period"));
    }
    let period_ps = trigger_period_ns * PS_PER_NS;
    let gate_ps = gate_ns * PS_PER_NS;
    let (mut inside, mut outside) = (0u64, 0u64);
    for e in stream.events() {
        let t = e.timestamp_ps as f64;
        let offset = t - (t / period_ps).floor() * period_ps;
        if offset < gate_ps {
            inside += 1;
        } else {
            outside += 1;
        }
    }
    if outside == 0 {
        return Ok(GatedSnr {
            snr: None,
            in_gate_to_background: None,
            in_gate_events: inside,
            out_of_gate_events: 0,
        });
    }
    // Background counts expected inside the gates, scaled by relative duty.
    let expected_bg = outside as f64 * gate_ns / (trigger_period_ns - gate_ns);
    let ratio = inside as f64 / expected_bg;
    Ok(GatedSnr {
        snr: Some(ratio - 1.0),
        in_gate_to_background: Some(ratio),
        in_gate_events: inside,
        out_of_gate_events: outside,
    })
}

/// Unbalanced Mach–Zehnder HOM setup: successive emissions meet at the second
/// beamsplitter through a delay of one trigger period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HomSetup {
    /// Source and everything up to the first beamsplitter, plus the
    /// detectors after the second one.
    pub chain: PhotonChain,
    pub delay_line_loss_db: f64,
    /// Spectral/temporal indistinguishability of successive photons.
    pub indistinguishability: f64,
    /// Coincidence analysis gate.
    pub analysis: CorrelationSettings,
}

impl HomSetup {
    pub fn validate(&self) -> Result<()> {
        self.chain.validate()?;
        check_non_negative("delay_line_loss_db", self.delay_line_loss_db)?;
        check_unit("indistinguishability", self.indistinguishability)?;
        self.analysis.validate()
    }
}

/// Per-detector dark rate that sets the in-gate signal-to-background ratio to
/// `snr` when the chain's photons are shared evenly by two detectors.
/// Converter noise already counts towards the background.
pub fn dark_rate_for_snr(chain: &PhotonChain, snr: f64, gate_ns: f64) -> Result<f64> {
    check_positive("snr", snr)?;
    check_positive("gate_ns", gate_ns)?;
    let signal = 0.5 * chain.source.kind.mean_photons() * chain.photon_detection_probability();
    let noise = 0.5 * chain.detected_noise_rate_hz() * gate_ns * 1e-9;
    let dark = (signal / snr - noise) / (gate_ns * 1e-9);
    if dark < 0.0 {
        return Err(Error::Infeasible(format!(
            "converter noise alone exceeds the background for snr {snr}"
        )));
    }
    Ok(dark)
}

/// Mean signal and background events per analysis gate on each of two
/// detectors sharing the chain's photons evenly.
pub fn split_gate_means(chain: &PhotonChain, settings: &CorrelationSettings) -> (f64, f64) {
    let src = &chain.source;
    let lo = settings.gate_offset_ns;
    let frac = src.pulse_shape.fraction_in(src.window_ns, lo, lo + settings.window_ns);
    let signal = 0.5 * src.kind.mean_photons() * chain.photon_detection_probability() * frac;
    let rate = chain.detector.dark_rate_hz + 0.5 * chain.detected_noise_rate_hz();
    (signal, rate * settings.window_ns * 1e-9)
}

impl PhotonChain {
    /// SiV emitter with ideal detectors, detected on 30 % of triggers, and
    /// dark counts setting the per-detector ratio `snr` over the full window.
    pub fn background_limited_emitter(snr: f64) -> Result<Self> {
        let mut chain = PhotonChain {
            source: SourceModel {
                kind: SourceKind::SingleEmitter {
                    emission_probability: 0.3,
                },
                ..SourceModel::siv_emitter()
            },
            converter: None,
            channel_losses_db: Vec::new(),
            detector: DetectorModel::ideal(),
        };
        chain.detector.dark_rate_hz = dark_rate_for_snr(&chain, snr, chain.source.window_ns)?;
        Ok(chain)
    }
}

impl HomSetup {
    /// Background-limited emitter analysed in a 45 ns gate around the 30 ns
    /// photon, with lossless delay line and indistinguishable photons.
    pub fn background_limited(snr: f64) -> Result<Self> {
        let chain = PhotonChain::background_limited_emitter(snr)?;
        let analysis = CorrelationSettings::centered(&chain.source, 45.0);
        Ok(Self {
            chain,
            delay_line_loss_db: 0.0,
            indistinguishability: 1.0,
            analysis,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HomResult {
    /// `1 − g²∥(0)/g²⊥(0)`; `None` when g²⊥(0) is statistically zero.
    pub visibility: Option<f64>,
    pub uncertainty: Option<f64>,
    pub parallel: CorrelationResult,
    pub perpendicular: CorrelationResult,
}

/// Arm photons at BS2 for one configuration. Returns streams on channels 0/1.
fn simulate_hom_arm(
    setup: &HomSetup,
    overlap: f64,
    duration_s: f64,
    seed: u64,
) -> (EventStream, EventStream) {
    let chain = &setup.chain;
    let src = &chain.source;
    let period_ps = src.trigger_period_ns() * PS_PER_NS;
    let triggers = (duration_s * src.repetition_rate_hz).floor() as u64;
    let delay_t = db_to_transmission(setup.delay_line_loss_db);
    let pre_bs = chain.converter.map_or(1.0, |c| c.efficiency) * chain.channel_transmission();
    let mix = overlap * setup.indistinguishability;
    let mut out: [Vec<DetectionEvent>; 2] = [Vec::new(), Vec::new()];
    let mut rng = rng::stream(seed, SIGNAL_STREAM);

    // Photon travelling the long arm, arriving one slot later.
    let mut pending_long = false;
    for k in 0..=triggers {
        let mut short = false;
        let mut long_next = false;
        if k < triggers {
            let emitted = src.photons_per_trigger(&mut rng) > 0 && rng.gen::<f64>() < pre_bs;
            if emitted {
                if rng.gen::<bool>() {
                    short = true;
                } else {
                    long_next = rng.gen::<f64>() < delay_t;
                }
            }
        }
        let long = pending_long;
        pending_long = long_next;

        // Output ports of the photons reaching BS2 in slot k.
        let ports: Vec<u16> = match (short, long) {
            (true, true) => {
                let u: f64 = rng.gen();
                let split = 0.5 * (1.0 - mix);
                if u < split {
                    vec![0, 1]
                } else if u < split + 0.5 * (1.0 - split) {
                    vec![0, 0]
                } else {
                    vec![1, 1]
                }
            }
            (true, false) | (false, true) => vec![u16::from(rng.gen::<bool>())],
            (false, false) => Vec::new(),
        };
        let t0 = trigger_time_ps(k, period_ps);
        for port in ports {
            if rng.gen::<f64>() >= chain.detector.efficiency {
                continue;
            }
            let offset = src.pulse_shape.sample_offset_ns(src.window_ns, &mut rng);
            out[port as usize].push(DetectionEvent {
                timestamp_ps: t0 + (offset * PS_PER_NS) as u64,
                channel: port,
                provenance: Provenance::Signal,
            });
        }
    }

    let noise_per_output = chain.detected_noise_rate_hz() / 2.0;
    for ch in 0..2u16 {
        let mut noise_rng = rng::stream(seed, NOISE_STREAM + u64::from(ch));
        poisson_arrivals(
            noise_per_output,
            duration_s,
            ch,
            Provenance::ConverterNoise,
            &mut noise_rng,
            &mut out[ch as usize],
        );
        let mut dark_rng = rng::stream(seed, DARK_STREAM + u64::from(ch));
        poisson_arrivals(
            chain.detector.dark_rate_hz,
            duration_s,
            ch,
            Provenance::Dark,
            &mut dark_rng,
            &mut out[ch as usize],
        );
    }
    let [a, b] = out;
    (EventStream::from_events(a), EventStream::from_events(b))
}

/// HOM visibility from a cross-polarized and a co-polarized run.
///
/// Two-photon interference is applied at the coincidence-probability level:
/// photons meeting at the second beamsplitter leave through different ports
/// with probability `(1 − overlap·indistinguishability)/2`.
pub fn hom_visibility(
    setup: &HomSetup,
    polarization_overlap: f64,
    duration_s: f64,
    seed: u64,
) -> Result<HomResult> {
    setup.validate()?;
    check_unit("polarization_overlap", polarization_overlap)?;
    check_duration(duration_s)?;
    let (pa, pb) = simulate_hom_arm(
        setup,
        polarization_overlap,
        duration_s,
        rng::derive_seed(seed, "parallel"),
    );
    let (xa, xb) = simulate_hom_arm(setup, 0.0, duration_s, rng::derive_seed(seed, "perpendicular"));
    let parallel = correlate(&pa, &pb, &setup.analysis)?;
    let perpendicular = correlate(&xa, &xb, &setup.analysis)?;

    let (gp, sp) = (parallel.g2_zero, parallel.g2_uncertainty);
    let (gx, sx) = (perpendicular.g2_zero, perpendicular.g2_uncertainty);
    let undefined = !gx.is_finite() || gx <= 0.0 || gx <= 2.0 * sx || !gp.is_finite();
    let (visibility, uncertainty) = if undefined {
        (None, None)
    } else {
        let ratio = gp / gx;
        let rel = ((sp / gx).powi(2) + (ratio * sx / gx).powi(2)).sqrt();
        (Some(1.0 - ratio), Some(rel))
    };
    Ok(HomResult {
        visibility,
        uncertainty,
        parallel,
        perpendicular,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ideal_chain(p: f64) -> PhotonChain {
        PhotonChain {
            source: SourceModel {
                kind: SourceKind::SingleEmitter {
                    emission_probability: p,
                },
                ..SourceModel::siv_emitter()
            },
            converter: None,
            channel_losses_db: vec![],
            detector: DetectorModel::ideal(),
        }
    }

    #[test]
    fn lossless_emitter_clicks_every_trigger() {
        let chain = ideal_chain(1.0);
        let s = simulate_stream(&chain, 1e-3, 1).unwrap();
        assert_eq!(s.len(), 670);
        let period = chain.source.trigger_period_ns() * 1e3;
        for (k, e) in s.events().iter().enumerate() {
            assert_eq!((e.timestamp_ps as f64 / period).floor() as usize, k);
        }
    }

    #[test]
    fn default_chain_click_probability() {
        let chain = PhotonChain {
            source: SourceModel::siv_emitter(),
            converter: Some(ConverterOperatingPoint {
                efficiency: 0.06,
                noise_rate_hz: 0.0,
            }),
            channel_losses_db: vec![transmission_to_db(0.69)],
            detector: DetectorModel::snspd(),
        };
        let p = 0.05 * chain.photon_detection_probability();
        assert!((p - 6.0e-4).abs() < 1e-5, "p = {p}");
        let duration = 2.0;
        let n = (duration * 670e3) as f64;
        let s = simulate_stream(&chain, duration, 9).unwrap();
        let expect = n * p;
        let sigma = (n * p * (1.0 - p)).sqrt();
        assert!((s.len() as f64 - expect).abs() < 3.0 * sigma, "{} vs {expect}", s.len());
    }

    #[test]
    fn noise_only_poisson_count() {
        let chain = PhotonChain {
            source: SourceModel {
                kind: SourceKind::SingleEmitter {
                    emission_probability: 0.0,
                },
                ..SourceModel::siv_emitter()
            },
            converter: Some(ConverterOperatingPoint {
                efficiency: 0.1,
                noise_rate_hz: 1000.0,
            }),
            channel_losses_db: vec![],
            detector: DetectorModel::ideal(),
        };
        let s = simulate_stream(&chain, 10.0, 4).unwrap();
        assert!((s.len() as f64 - 1e4).abs() < 300.0, "{}", s.len());
        assert_eq!(s.count(Provenance::ConverterNoise), s.len());
    }

    #[test]
    fn streams_are_sorted_and_reproducible() {
        let mut chain = ideal_chain(0.3);
        chain.detector.dark_rate_hz = 5e4;
        let (a, b) = simulate_split(&chain, 0.01, 77).unwrap();
        let (a2, b2) = simulate_split(&chain, 0.01, 77).unwrap();
        assert_eq!(a, a2);
        assert_eq!(b, b2);
        let merged = a.merge(&b);
        assert!(merged
            .events()
            .windows(2)
            .all(|w| (w[0].timestamp_ps, w[0].channel) <= (w[1].timestamp_ps, w[1].channel)));
        assert_ne!(a, simulate_split(&chain, 0.01, 78).unwrap().0);
    }

    #[test]
    fn ideal_single_photons_have_zero_g2() {
        let chain = ideal_chain(0.5);
        let (a, b) = simulate_split(&chain, 0.05, 3).unwrap();
        let r = hbt_g2(&a, &b, chain.source.trigger_period_ns(), 75.0).unwrap();
        assert_eq!(r.zero_delay_coincidences, 0);
        assert_eq!(r.g2_zero, 0.0);
        assert!(!r.low_confidence);
    }

    #[test]
    fn coherent_light_has_unit_g2() {
        let mut chain = ideal_chain(0.0);
        chain.source.kind = SourceKind::CoherentPulse {
            mean_photon_number: 0.2,
        };
        let (a, b) = simulate_split(&chain, 0.5, 11).unwrap();
        let r = hbt_g2(&a, &b, chain.source.trigger_period_ns(), 75.0).unwrap();
        assert!((r.g2_zero - 1.0).abs() < 3.0 * r.g2_uncertainty, "{} ± {}", r.g2_zero, r.g2_uncertainty);
    }

    #[test]
    fn sparse_data_flagged() {
        let chain = ideal_chain(0.001);
        let (a, b) = simulate_split(&chain, 1e-3, 1).unwrap();
        let r = hbt_g2(&a, &b, chain.source.trigger_period_ns(), 75.0).unwrap();
        assert!(r.low_confidence);
    }

    #[test]
    fn histogram_csv_has_header() {
        let chain = ideal_chain(0.5);
        let (a, b) = simulate_split(&chain, 1e-3, 1).unwrap();
        let r = hbt_g2(&a, &b, chain.source.trigger_period_ns(), 75.0).unwrap();
        let csv = r.histogram_csv();
        assert!(csv.starts_with("delay_ns,coincidences\n"));
        let total: u64 = r.histogram.iter().map(|b| b.coincidences).sum();
        assert!(total > 0);
    }

    #[test]
    fn snr_limits() {
        let chain = ideal_chain(0.5);
        let s = simulate_stream(&chain, 0.01, 1).unwrap();
        let r = gated_snr(&s, chain.source.trigger_period_ns(), 75.0).unwrap();
        assert!(r.is_infinite());

        let mut noise = ideal_chain(0.0);
        noise.detector.dark_rate_hz = 2e5;
        let s = simulate_stream(&noise, 1.0, 2).unwrap();
        let r = gated_snr(&s, noise.source.trigger_period_ns(), 75.0).unwrap();
        let ratio = r.in_gate_to_background.unwrap();
        assert!((ratio - 1.0).abs() < 0.05, "ratio {ratio}");
        assert!(r.snr.unwrap().abs() < 0.05);
    }

    #[test]
    fn snr_recovers_configured_ratio() {
        // s per gate = p; background per gate = rate·75 ns; target s/b = 14.5
        let p = 0.05;
        let rate = p / 14.5 / 75e-9;
        let mut chain = ideal_chain(p);
        chain.detector.dark_rate_hz = rate;
        let s = simulate_stream(&chain, 2.0, 5).unwrap();
        let r = gated_snr(&s, chain.source.trigger_period_ns(), 75.0).unwrap();
        let snr = r.snr.unwrap();
        assert!((snr - 14.5).abs() < 0.5, "snr {snr}");
    }

    #[test]
    fn gate_validation() {
        let s = EventStream::default();
        assert!(gated_snr(&s, 100.0, 150.0).is_err());
        let mut bad = CorrelationSettings::new(100.0, 75.0);
        bad.norm_min_delay = 0;
        assert!(correlate(&s, &s, &bad).is_err());
    }

    fn hom_setup(dark_rate: f64) -> HomSetup {
        let chain = PhotonChain {
            detector: DetectorModel {
                dark_rate_hz: dark_rate,
                ..DetectorModel::ideal()
            },
            ..ideal_chain(0.5)
        };
        let period = chain.source.trigger_period_ns();
        HomSetup {
            chain,
            delay_line_loss_db: 0.0,
            indistinguishability: 1.0,
            analysis: CorrelationSettings::new(period, 75.0),
        }
    }

    #[test]
    fn noiseless_hom_is_perfect() {
        let r = hom_visibility(&hom_setup(0.0), 1.0, 0.05, 1).unwrap();
        assert_eq!(r.parallel.zero_delay_coincidences, 0);
        assert_eq!(r.visibility, Some(1.0));
        // Distinguishable photons: the central peak is half the far peaks.
        let g = r.perpendicular.g2_zero;
        assert!((g - 0.5).abs() < 3.0 * r.perpendicular.g2_uncertainty, "g⊥ {g}");
    }

    #[test]
    fn no_overlap_no_visibility() {
        let r = hom_visibility(&hom_setup(0.0), 0.0, 0.05, 2).unwrap();
        let v = r.visibility.unwrap();
        assert!(v.abs() < 3.0 * r.uncertainty.unwrap(), "V {v}");
    }

    #[test]
    fn hom_undefined_without_signal() {
        let mut setup = hom_setup(0.0);
        setup.chain.source.kind = SourceKind::SingleEmitter {
            emission_probability: 0.0,
        };
        let r = hom_visibility(&setup, 1.0, 0.01, 2).unwrap();
        assert!(r.visibility.is_none());
    }

    #[test]
    fn provenance_is_invisible_to_estimators() {
        let mut setup = hom_setup(2e4);
        setup.chain.converter = Some(ConverterOperatingPoint {
            efficiency: 0.8,
            noise_rate_hz: 3e4,
        });
        let (mut a, b) = simulate_split(&setup.chain, 0.05, 8).unwrap();
        let s = CorrelationSettings::new(setup.chain.source.trigger_period_ns(), 75.0);
        let before = correlate(&a, &b, &s).unwrap();
        let snr_before = gated_snr(&a, s.trigger_period_ns, 75.0).unwrap();
        let mut r = rng::stream(1, 0);
        for p in a.provenance_mut() {
            *p = match r.gen_range(0..3) {
                0 => Provenance::Signal,
                1 => Provenance::ConverterNoise,
                _ => Provenance::Dark,
            };
        }
        assert_eq!(correlate(&a, &b, &s).unwrap(), before);
        assert_eq!(gated_snr(&a, s.trigger_period_ns, 75.0).unwrap(), snr_before);
    }

    #[test]
    fn analytic_background_formula() {
        assert_eq!(background_limited_g2(1.0, 0.0), 0.0);
        assert!((background_limited_g2(14.5, 1.0) - 30.0 / 240.25).abs() < 1e-12);
        assert!((background_limited_g2(0.0, 1.0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn dark_rate_sets_per_detector_ratio() {
        let chain = PhotonChain::background_limited_emitter(14.5).unwrap();
        assert!((chain.detector.dark_rate_hz - 0.15 / 14.5 / 75e-9).abs() < 1e-6);
        let (a, _) = simulate_split(&chain, 0.2, 8).unwrap();
        let snr = gated_snr(&a, chain.source.trigger_period_ns(), 75.0).unwrap();
        let signal = a.count(Provenance::Signal) as f64;
        let dark = a.count(Provenance::Dark) as f64 * 75.0 / chain.source.trigger_period_ns();
        assert!((signal / dark - 14.5).abs() < 0.6, "{}", signal / dark);
        assert!(snr.in_gate_events > 0);
    }

    #[test]
    fn noise_beyond_target_is_infeasible() {
        let mut chain = PhotonChain::background_limited_emitter(14.5).unwrap();
        chain.converter = Some(ConverterOperatingPoint {
            efficiency: 1.0,
            noise_rate_hz: 1e9,
        });
        assert!(dark_rate_for_snr(&chain, 14.5, 75.0).is_err());
    }

    #[test]
    fn centered_gate() {
        let s = CorrelationSettings::centered(&SourceModel::siv_emitter(), 45.0);
        assert_eq!(s.gate_offset_ns, 15.0);
        s.validate().unwrap();
    }

    #[test]
    fn pulse_fraction_in_gate() {
        let r = PulseShape::Rectangular { width_ns: 30.0 };
        assert_eq!(r.fraction_in(75.0, 0.0, 75.0), 1.0);
        assert!((r.fraction_in(75.0, 15.0, 60.0) - 1.0).abs() < 1e-12);
        assert!((r.fraction_in(75.0, 37.5, 75.0) - 0.5).abs() < 1e-12);
        let l = PulseShape::Lorentzian { fwhm_ns: 10.0 };
        assert!((l.fraction_in(75.0, 0.0, 75.0) - 1.0).abs() < 1e-12);
        // Half the mass lies within one HWHM of the centre for an untruncated line.
        let f = l.fraction_in(1e6, 0.5e6 - 5.0, 0.5e6 + 5.0);
        assert!((f - 0.5).abs() < 1e-5);
    }

    #[test]
    fn split_means_match_calibration() {
        let chain = PhotonChain::background_limited_emitter(14.5).unwrap();
        let full = CorrelationSettings::new(chain.source.trigger_period_ns(), 75.0);
        let (s, b) = split_gate_means(&chain, &full);
        assert!((s / b - 14.5).abs() < 1e-9);
        let narrow = CorrelationSettings::centered(&chain.source, 45.0);
        let (s2, b2) = split_gate_means(&chain, &narrow);
        assert!((s2 - s).abs() < 1e-15);
        assert!((b2 / b - 0.6).abs() < 1e-12);
    }
}
