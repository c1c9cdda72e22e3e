//! Deployed-link experiment: fiber channel, transmitter sequencer, and the
//! receiver's main and SiV sequencers on one discrete-event queue.
//!
//! The transmitter alternates data periods (trains of weak time-bin qubits)
//! with stabilization periods (strong reference pulses), announcing each with
//! a clock command. The receiver reacts only to commands and detections; its
//! switch sends light to the memory unless it is stabilizing.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rand::Rng;
use rand_distr::{Binomial, Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::converter::{self, ConverterModel};
use crate::error::{check_non_negative, check_positive, check_unit, invalid, Error, Result};
use crate::photonics::db_to_transmission;
use crate::rng::{self, derive_seed, SimRng};
use crate::spin::{self, SpinCavityModel, SpinState, TimeBinInput};
use crate::stats::binomial_se;

/// One-way delay in standard single-mode fiber.
pub const FIBER_DELAY_PS_PER_KM: u64 = 4_897_000;

fn us_to_ps(us: f64) -> u64 {
    (us * 1e6).round() as u64
}

fn ns_to_ps(ns: f64) -> u64 {
    (ns * 1e3).round() as u64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FiberSegment {
    pub name: String,
    pub length_km: f64,
    pub loss_db: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelModel {
    pub segments: Vec<FiberSegment>,
    /// Standard deviation of the polarization-angle step per data period.
    pub polarization_step_rad: f64,
    /// Angle left over after each feedback correction (standard deviation).
    pub polarization_residual_rad: f64,
    /// Standard deviation of the arrival-time step per data period.
    pub timing_step_ns: f64,
}

impl ChannelModel {
    /// Single 50 km span with the main-text budget.
    pub fn main_text() -> Self {
        Self {
            segments: vec![FiberSegment {
                name: "lexington-cambridge".into(),
                length_km: 50.0,
                loss_db: 40.8,
            }],
            ..Self::lossless()
        }
    }

    /// The two measured strands, joined at a passive pass-through node.
    pub fn deployed_segments() -> Self {
        Self {
            segments: vec![
                FiberSegment {
                    name: "strand-43km".into(),
                    length_km: 43.0,
                    loss_db: 24.1,
                },
                FiberSegment {
                    name: "strand-7km".into(),
                    length_km: 7.0,
                    loss_db: 19.7,
                },
            ],
            ..Self::lossless()
        }
    }

    pub fn lossless() -> Self {
        Self {
            segments: Vec::new(),
            polarization_step_rad: 0.1,
            polarization_residual_rad: 0.05,
            timing_step_ns: 0.05,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for s in &self.segments {
            check_non_negative("segment.loss_db", s.loss_db)?;
            check_non_negative("segment.length_km", s.length_km)?;
        }
        check_non_negative("polarization_step_rad", self.polarization_step_rad)?;
        check_non_negative("polarization_residual_rad", self.polarization_residual_rad)?;
        check_non_negative("timing_step_ns", self.timing_step_ns)
    }

    pub fn total_loss_db(&self) -> f64 {
        self.segments.iter().map(|s| s.loss_db).sum()
    }

    pub fn total_length_km(&self) -> f64 {
        self.segments.iter().map(|s| s.length_km).sum()
    }

    pub fn transmission(&self) -> f64 {
        db_to_transmission(self.total_loss_db())
    }

    pub fn propagation_delay_ps(&self) -> u64 {
        (self.total_length_km() * FIBER_DELAY_PS_PER_KM as f64).round() as u64
    }

    /// The same channel as one segment carrying the summed loss.
    pub fn collapsed(&self) -> Self {
        Self {
            segments: vec![FiberSegment {
                name: "collapsed".into(),
                length_km: self.total_length_km(),
                loss_db: self.total_loss_db(),
            }],
            ..self.clone()
        }
    }
}

/// Drift state the channel imposes on light passing through it.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct ChannelState {
    pub polarization_angle_rad: f64,
    pub timing_offset_ns: f64,
}

impl ChannelState {
    pub fn polarization_overlap(&self) -> f64 {
        self.polarization_angle_rad.cos().powi(2)
    }

    /// One drift step of both random walks.
    pub fn drift(&mut self, channel: &ChannelModel, rng: &mut SimRng) {
        self.polarization_angle_rad += gaussian(channel.polarization_step_rad, rng);
        self.timing_offset_ns += gaussian(channel.timing_step_ns, rng);
    }
}

fn gaussian(sigma: f64, rng: &mut SimRng) -> f64 {
    if sigma == 0.0 {
        return 0.0;
    }
    Normal::new(0.0, sigma).map(|d| d.sample(rng)).unwrap_or(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Transmitted {
    pub mean_photon_number: f64,
    pub polarization_overlap: f64,
    pub timing_offset_ns: f64,
}

/// Attenuates a pulse and advances the channel drift by one step.
pub fn channel_transmit(
    channel: &ChannelModel,
    state: &mut ChannelState,
    mean_photon_number: f64,
    rng: &mut SimRng,
) -> Result<Transmitted> {
    check_non_negative("mean_photon_number", mean_photon_number)?;
    state.drift(channel, rng);
    Ok(Transmitted {
        mean_photon_number: mean_photon_number * channel.transmission(),
        polarization_overlap: state.polarization_overlap(),
        timing_offset_ns: state.timing_offset_ns,
    })
}

/// Photon numbers surviving the channel for `samples` coherent pulses. Each
/// segment thins the photons binomially; the launch draw uses substream 0
/// and segment `i` substream `i + 1`, so cascades and collapsed channels
/// share their source draws.
pub fn sample_received_photons(
    channel: &ChannelModel,
    launch_mean: f64,
    samples: usize,
    seed: u64,
) -> Result<Vec<u64>> {
    check_non_negative("launch_mean", launch_mean)?;
    channel.validate()?;
    let mut source = rng::stream(seed, 0);
    let mut counts: Vec<u64> = if launch_mean == 0.0 {
        vec![0; samples]
    } else {
        let d = Poisson::new(launch_mean).map_err(|e| invalid("launch_mean", e.to_string()))?;
        (0..samples).map(|_| d.sample(&mut source) as u64).collect()
    };
    for (i, seg) in channel.segments.iter().enumerate() {
        let t = db_to_transmission(seg.loss_db);
        let mut r = rng::stream(seed, i as u64 + 1);
        for c in counts.iter_mut() {
            *c = Binomial::new(*c, t).map(|d| d.sample(&mut r)).unwrap_or(0);
        }
    }
    Ok(counts)
}

/// Polarization seen by the receiver's converter, with drift between
/// stabilizations and a reset by each feedback step.
#[derive(Debug, Clone, PartialEq)]
pub struct PolarizationTracker {
    pub state: ChannelState,
    pub stabilizations: u32,
}

impl PolarizationTracker {
    pub fn new() -> Self {
        Self {
            state: ChannelState::default(),
            stabilizations: 0,
        }
    }

    pub fn overlap(&self) -> f64 {
        self.state.polarization_overlap()
    }

    pub fn drift(&mut self, channel: &ChannelModel, rng: &mut SimRng) -> f64 {
        self.state.drift(channel, rng);
        self.overlap()
    }

    /// Rotates the measured angle away, leaving the configured residual.
    pub fn feedback(&mut self, channel: &ChannelModel, rng: &mut SimRng) -> f64 {
        self.stabilizations += 1;
        self.state.polarization_angle_rad = gaussian(channel.polarization_residual_rad, rng);
        self.overlap()
    }
}

impl Default for PolarizationTracker {
    fn default() -> Self {
        Self::new()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QubitSource {
    pub pulse_fwhm_ns: f64,
    pub bin_separation_ns: f64,
    /// Mean photon number per pulse arriving at the receiver.
    pub mean_photon_number: f64,
    pub qubit_spacing_us: f64,
    pub qubits_per_train: u32,
}

impl Default for QubitSource {
    fn default() -> Self {
        Self {
            pulse_fwhm_ns: 45.0,
            bin_separation_ns: 144.5,
            mean_photon_number: 0.1,
            qubit_spacing_us: 1.0,
            qubits_per_train: 10_000,
        }
    }
}

/// Period lengths and command timing. None of these are fixed by hardware.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Cadence {
    pub trains_per_data_period: u32,
    pub command_gap_us: f64,
    /// Time between a train's command and its first qubit.
    pub train_lead_us: f64,
    /// Idle time after a train for the spin readout.
    pub readout_reserve_us: f64,
    pub stabilize_us: f64,
    pub reference_pulses: u32,
    pub command_latency_ns: f64,
}

impl Default for Cadence {
    fn default() -> Self {
        Self {
            trains_per_data_period: 10,
            command_gap_us: 10.0,
            train_lead_us: 12_000.0,
            readout_reserve_us: 1_100.0,
            stabilize_us: 5_000.0,
            reference_pulses: 100,
            command_latency_ns: 1_000.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaultInjection {
    /// Each clock command is lost independently with this probability.
    pub command_loss_probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkConfig {
    pub channel: ChannelModel,
    pub qubit: QubitSource,
    pub upconverter: ConverterModel,
    /// `None` runs the converter at its optimum.
    pub upconverter_pump_mw: Option<f64>,
    /// Switch, splitters and circulator between converter and cavity.
    pub fiber_components_efficiency: f64,
    /// Window in which converter noise can herald, per qubit.
    pub herald_window_ns: f64,
    pub cadence: Cadence,
    pub max_init_attempts: u32,
    pub init_attempt_us: f64,
    pub faults: FaultInjection,
}

impl Default for LinkConfig {
    fn default() -> Self {
        Self {
            channel: ChannelModel::main_text(),
            qubit: QubitSource::default(),
            upconverter: ConverterModel::upconversion(),
            upconverter_pump_mw: None,
            fiber_components_efficiency: 0.09,
            herald_window_ns: 45.0,
            cadence: Cadence::default(),
            max_init_attempts: 100,
            init_attempt_us: 110.0,
            faults: FaultInjection::default(),
        }
    }
}

impl LinkConfig {
    pub fn validate(&self) -> Result<()> {
        self.channel.validate()?;
        self.upconverter.validate()?;
        if let Some(p) = self.upconverter_pump_mw {
            check_non_negative("upconverter_pump_mw", p)?;
        }
        let q = &self.qubit;
        check_positive("pulse_fwhm_ns", q.pulse_fwhm_ns)?;
        if !(q.bin_separation_ns > q.pulse_fwhm_ns) {
            return Err(invalid("bin_separation_ns", "must exceed the pulse FWHM"));
        }
        check_non_negative("mean_photon_number", q.mean_photon_number)?;
        if !(q.qubit_spacing_us * 1e3 > q.bin_separation_ns + q.pulse_fwhm_ns) {
            return Err(invalid("qubit_spacing_us", "qubits overlap"));
        }
        if q.qubits_per_train == 0 {
            return Err(invalid("qubits_per_train", "must be >= 1"));
        }
        if !(self.fiber_components_efficiency > 0.0) {
            return Err(invalid("fiber_components_efficiency", "must be in (0, 1]"));
        }
        check_unit("fiber_components_efficiency", self.fiber_components_efficiency)?;
        if self.conversion_efficiency()? <= 0.0 {
            return Err(invalid("upconverter", "conversion efficiency must be > 0"));
        }
        check_non_negative("herald_window_ns", self.herald_window_ns)?;
        let c = &self.cadence;
        if c.trains_per_data_period == 0 {
            return Err(invalid("trains_per_data_period", "must be >= 1"));
        }
        check_positive("command_gap_us", c.command_gap_us)?;
        check_positive("stabilize_us", c.stabilize_us)?;
        check_positive("command_latency_ns", c.command_latency_ns)?;
        if self.max_init_attempts == 0 {
            return Err(invalid("max_init_attempts", "must be >= 1"));
        }
        check_positive("init_attempt_us", self.init_attempt_us)?;
        let init_budget = c.command_latency_ns / 1e3 + self.max_init_attempts as f64 * self.init_attempt_us;
        if c.train_lead_us < init_budget {
            return Err(invalid(
                "train_lead_us",
                format!("must cover latency plus max_init_attempts * init_attempt_us = {init_budget} us"),
            ));
        }
        if c.command_latency_ns / 1e3 >= c.command_gap_us {
            return Err(invalid("command_latency_ns", "must be shorter than command_gap_us"));
        }
        check_positive("readout_reserve_us", c.readout_reserve_us)?;
        check_unit("command_loss_probability", self.faults.command_loss_probability)
    }

    /// Checks the cadence leaves room for the spin model's readout.
    pub fn validate_with(&self, spin: &SpinCavityModel) -> Result<()> {
        self.validate()?;
        let needed = spin.readout_bin_us + 2.0 * self.cadence.command_latency_ns / 1e3;
        if self.cadence.readout_reserve_us < needed {
            return Err(invalid(
                "readout_reserve_us",
                format!("must cover the readout bin plus latency ({needed} us)"),
            ));
        }
        Ok(())
    }

    pub fn upconverter_pump(&self) -> f64 {
        self.upconverter_pump_mw
            .unwrap_or_else(|| converter::optimal_pump_power(&self.upconverter))
    }

    pub fn conversion_efficiency(&self) -> Result<f64> {
        converter::external_efficiency(&self.upconverter, self.upconverter_pump())
    }

    pub fn noise_rate_hz(&self) -> Result<f64> {
        converter::noise_rate(&self.upconverter, self.upconverter_pump())
    }

    /// Conversion, fiber components and bright-state cavity reflection.
    pub fn detection_efficiency(&self, spin: &SpinCavityModel) -> Result<f64> {
        Ok(self.conversion_efficiency()? * self.fiber_components_efficiency * spin.reflect_up)
    }

    /// Mean photon number leaving the transmitter.
    pub fn launch_mean_photon_number(&self) -> f64 {
        self.qubit.mean_photon_number / self.channel.transmission()
    }

    fn train_slot_ps(&self) -> u64 {
        us_to_ps(self.cadence.train_lead_us)
            + u64::from(self.qubit.qubits_per_train) * us_to_ps(self.qubit.qubit_spacing_us)
            + us_to_ps(self.cadence.readout_reserve_us)
    }

    pub fn data_period_ps(&self) -> u64 {
        us_to_ps(self.cadence.command_gap_us)
            + u64::from(self.cadence.trains_per_data_period) * self.train_slot_ps()
    }

    pub fn stabilize_period_ps(&self) -> u64 {
        us_to_ps(self.cadence.stabilize_us)
    }

    pub fn cycle_ps(&self) -> u64 {
        self.data_period_ps() + self.stabilize_period_ps()
    }
}

/// Signal and noise photons reaching the cavity per qubit, at a given
/// polarization overlap.
pub fn photons_at_cavity(config: &LinkConfig, overlap: f64) -> Result<(f64, f64)> {
    let signal = config.qubit.mean_photon_number
        * config.conversion_efficiency()?
        * overlap
        * config.fiber_components_efficiency;
    let noise = config.noise_rate_hz()? * config.herald_window_ns * 1e-9 * config.fiber_components_efficiency;
    Ok((signal, noise))
}

/// Probability that one qubit produces a herald.
pub fn herald_probability_per_qubit(config: &LinkConfig, spin: &SpinCavityModel, overlap: f64) -> Result<f64> {
    let (s, n) = photons_at_cavity(config, overlap)?;
    Ok(-(-(s + n) * spin::herald_probability(spin)).exp_m1())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CommandKind {
    StartData { period: u32 },
    TrainStart { period: u32, train: u32, qubits: u32 },
    StartStabilize { period: u32 },
    End,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClockCommand {
    pub time_ps: u64,
    pub kind: CommandKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PulseClass {
    Qubit,
    Reference,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BatchKind {
    Qubits { period: u32, train: u32, encoding_seed: u64 },
    Reference { period: u32 },
}

impl BatchKind {
    pub fn class(&self) -> PulseClass {
        match self {
            BatchKind::Qubits { .. } => PulseClass::Qubit,
            BatchKind::Reference { .. } => PulseClass::Reference,
        }
    }
}

/// Evenly spaced pulses of one kind.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PulseBatch {
    pub kind: BatchKind,
    pub first_ps: u64,
    pub spacing_ps: u64,
    pub count: u32,
    pub mean_photon_number: f64,
}

impl PulseBatch {
    pub fn arrival_ps(&self, index: u32) -> u64 {
        self.first_ps + u64::from(index) * self.spacing_ps
    }
}

/// Time-bin state Alice encodes on qubit `index` of a train.
pub fn encoded_input(encoding_seed: u64, index: u32) -> TimeBinInput {
    let h = rng::run_seed(encoding_seed, u64::from(index));
    TimeBinInput::ALL[(h >> 62) as usize]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Machine {
    Transmitter,
    ReceiverMain,
    SivSequencer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SeqState {
    Idle,
    Stabilize,
    DataQubits,
    InitSpin,
    ReadSpin,
    Fault,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Routing {
    QubitPath,
    ReferencePath,
}

impl Routing {
    pub fn for_state(main: SeqState) -> Self {
        if main == SeqState::Stabilize {
            Routing::ReferencePath
        } else {
            Routing::QubitPath
        }
    }

    pub fn carries(self, class: PulseClass) -> bool {
        matches!(
            (self, class),
            (Routing::QubitPath, PulseClass::Qubit) | (Routing::ReferencePath, PulseClass::Reference)
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Cause {
    /// Transmitter schedule entry.
    Schedule { time_ps: u64 },
    Command { time_ps: u64, command: CommandKind },
    Herald { time_ps: u64 },
    /// First pulse of a qubit train that no command announced.
    StrayPulse { time_ps: u64 },
}

impl Cause {
    pub fn time_ps(&self) -> u64 {
        match *self {
            Cause::Schedule { time_ps }
            | Cause::Command { time_ps, .. }
            | Cause::Herald { time_ps }
            | Cause::StrayPulse { time_ps } => time_ps,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub seq: u64,
    pub time_ps: u64,
    pub machine: Machine,
    pub from_state: SeqState,
    pub to_state: SeqState,
    pub cause: Cause,
}

/// State transitions of all three sequencers, ordered by (time, seq).
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct ProtocolTrace {
    pub records: Vec<TraceRecord>,
}

impl ProtocolTrace {
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            // TraceRecord holds only plain enums and integers.
            out.push_str(&serde_json::to_string(r).expect("trace record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn for_machine(&self, machine: Machine) -> impl Iterator<Item = &TraceRecord> {
        self.records.iter().filter(move |r| r.machine == machine)
    }

    pub fn has_fault(&self) -> bool {
        self.records.iter().any(|r| r.to_state == SeqState::Fault)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TransmitterOutput {
    pub commands: Vec<ClockCommand>,
    pub batches: Vec<PulseBatch>,
    pub records: Vec<TraceRecord>,
    pub data_periods: u32,
    pub stabilize_periods: u32,
}

/// Alice's sequencer. Data periods are always followed by a stabilization
/// period, except that a run shorter than one full cycle gets a single data
/// period and nothing else.
pub fn run_transmitter(config: &LinkConfig, duration_s: f64, seed: u64) -> Result<TransmitterOutput> {
    config.validate()?;
    check_non_negative("duration_s", duration_s)?;
    let duration_ps = (duration_s * 1e12).round() as u64;
    let cycle = config.cycle_ps();
    let periods = (duration_ps / cycle).max(1) as u32;
    let launch = config.launch_mean_photon_number();
    let c = &config.cadence;

    let mut commands = Vec::new();
    let mut batches = Vec::new();
    let mut records = Vec::new();
    let mut state = SeqState::Idle;
    let mut transition = |records: &mut Vec<TraceRecord>, t: u64, to: SeqState| {
        records.push(TraceRecord {
            seq: 0,
            time_ps: t,
            machine: Machine::Transmitter,
            from_state: state,
            to_state: to,
            cause: Cause::Schedule { time_ps: t },
        });
        state = to;
    };
    let mut stabilize_periods = 0;
    let mut end = 0;
    for period in 0..periods {
        let t0 = u64::from(period) * cycle;
        commands.push(ClockCommand {
            time_ps: t0,
            kind: CommandKind::StartData { period },
        });
        transition(&mut records, t0, SeqState::DataQubits);
        for train in 0..c.trains_per_data_period {
            let tc = t0 + us_to_ps(c.command_gap_us) + u64::from(train) * config.train_slot_ps();
            commands.push(ClockCommand {
                time_ps: tc,
                kind: CommandKind::TrainStart {
                    period,
                    train,
                    qubits: config.qubit.qubits_per_train,
                },
            });
            batches.push(PulseBatch {
                kind: BatchKind::Qubits {
                    period,
                    train,
                    encoding_seed: derive_seed(seed, &format!("encoding/{period}/{train}")),
                },
                first_ps: tc + us_to_ps(c.train_lead_us),
                spacing_ps: us_to_ps(config.qubit.qubit_spacing_us),
                count: config.qubit.qubits_per_train,
                mean_photon_number: launch,
            });
        }
        end = t0 + config.data_period_ps();
        if t0 + cycle <= duration_ps {
            let ts = end;
            commands.push(ClockCommand {
                time_ps: ts,
                kind: CommandKind::StartStabilize { period },
            });
            transition(&mut records, ts, SeqState::Stabilize);
            let n = c.reference_pulses.max(1);
            let spacing = config.stabilize_period_ps() / (u64::from(n) + 1);
            batches.push(PulseBatch {
                kind: BatchKind::Reference { period },
                first_ps: ts + spacing,
                spacing_ps: spacing,
                count: n,
                mean_photon_number: 1e6,
            });
            stabilize_periods += 1;
            end = t0 + cycle;
        }
    }
    let t_end = end.max(duration_ps);
    commands.push(ClockCommand {
        time_ps: t_end,
        kind: CommandKind::End,
    });
    transition(&mut records, t_end, SeqState::Idle);
    Ok(TransmitterOutput {
        commands,
        batches,
        records,
        data_periods: periods,
        stabilize_periods,
    })
}

/// What reaches the receiver: commands and pulses after fiber delay, drift
/// and any injected command loss.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Incoming {
    pub commands: Vec<ClockCommand>,
    pub batches: Vec<PulseBatch>,
    pub lost_commands: Vec<ClockCommand>,
}

pub fn propagate(config: &LinkConfig, tx: &TransmitterOutput, seed: u64) -> Result<Incoming> {
    config.validate()?;
    let delay = config.channel.propagation_delay_ps();
    let mut loss_rng = rng::stream(derive_seed(seed, "command-loss"), 0);
    let mut timing_rng = rng::stream(derive_seed(seed, "timing"), 0);
    let mut commands = Vec::new();
    let mut lost_commands = Vec::new();
    for cmd in &tx.commands {
        if loss_rng.gen::<f64>() < config.faults.command_loss_probability {
            lost_commands.push(*cmd);
        } else {
            commands.push(ClockCommand {
                time_ps: cmd.time_ps + delay,
                kind: cmd.kind,
            });
        }
    }
    // Timing offset steps once per data period and shifts that period's pulses.
    let mut offset_ns = 0.0;
    let mut current_period = None;
    let t = config.channel.transmission();
    let batches = tx
        .batches
        .iter()
        .map(|b| {
            let period = match b.kind {
                BatchKind::Qubits { period, .. } | BatchKind::Reference { period } => period,
            };
            if current_period != Some(period) {
                offset_ns += gaussian(config.channel.timing_step_ns, &mut timing_rng);
                current_period = Some(period);
            }
            let shift = ns_to_ps(offset_ns.abs()) as i64 * offset_ns.signum() as i64;
            PulseBatch {
                first_ps: (b.first_ps + delay).saturating_add_signed(shift),
                mean_photon_number: b.mean_photon_number * t,
                ..*b
            }
        })
        .collect();
    Ok(Incoming {
        commands,
        batches,
        lost_commands,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Delivery {
    pub first_ps: u64,
    pub last_ps: u64,
    pub count: u32,
    pub class: PulseClass,
    pub main_state: SeqState,
    pub routing: Routing,
    pub blocked: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HeraldRecord {
    pub period: u32,
    pub train: u32,
    pub qubit_index: u32,
    pub time_ps: u64,
    pub input: TimeBinInput,
    pub from_noise: bool,
    pub readout: SpinState,
    pub correct: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum TrainStatus {
    Processed { qubits_interacted: u32, heralded: bool },
    SkippedInit { attempts: u32 },
    Aborted,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrainReport {
    pub period: u32,
    pub train: u32,
    pub status: TrainStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReceiverRun {
    pub trace: ProtocolTrace,
    pub deliveries: Vec<Delivery>,
    pub reports: Vec<TrainReport>,
    pub heralds: Vec<HeraldRecord>,
    /// Herald detection times, including heralds that arrived while the SiV
    /// sequencer could not act on them.
    pub detections_ps: Vec<u64>,
    /// Polarization overlap at the start of each data period.
    pub period_overlaps: Vec<f64>,
    pub qubits_interacted: u64,
    pub faults: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Event {
    Command(usize),
    Batch { batch: usize, next: u32 },
    InitDone { period: u32, train: u32, success: bool, attempts: u32, cause: Cause },
    TrainEnd { period: u32, train: u32, interacted: u32, cause: Cause },
    Herald { detect_ps: u64 },
    ReadoutDone { herald: usize, detect_ps: u64 },
    StrayQubits { arrival_ps: u64, period: u32, train: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Queued {
    time: u64,
    seq: u64,
    event: Event,
}

impl Ord for Queued {
    fn cmp(&self, other: &Self) -> Ordering {
        (other.time, other.seq).cmp(&(self.time, self.seq))
    }
}

impl PartialOrd for Queued {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

struct Queue {
    heap: BinaryHeap<Queued>,
    seq: u64,
}

impl Queue {
    fn push(&mut self, time: u64, event: Event) {
        self.heap.push(Queued {
            time,
            seq: self.seq,
            event,
        });
        self.seq += 1;
    }
}

#[derive(Debug, Clone, Copy)]
struct ActiveTrain {
    period: u32,
    train: u32,
    cause: Cause,
    ready: bool,
    interacted: u32,
    pending_herald: Option<PendingHerald>,
}

#[derive(Debug, Clone, Copy)]
struct PendingHerald {
    index: u32,
    input: TimeBinInput,
    from_noise: bool,
}

struct Receiver<'a> {
    config: &'a LinkConfig,
    spin: &'a SpinCavityModel,
    incoming: &'a Incoming,
    queue: Queue,
    latency: u64,
    main: SeqState,
    siv: SeqState,
    current_period: Option<u32>,
    trains_seen: u32,
    active: Option<ActiveTrain>,
    polarization: PolarizationTracker,
    herald_rng: SimRng,
    spin_rng: SimRng,
    channel_rng: SimRng,
    signal_photons: f64,
    noise_photons: f64,
    out: ReceiverRun,
}

impl<'a> Receiver<'a> {
    fn record(&mut self, time: u64, machine: Machine, to: SeqState, cause: Cause) {
        let from = match machine {
            Machine::ReceiverMain => &mut self.main,
            Machine::SivSequencer => &mut self.siv,
            Machine::Transmitter => unreachable!("receiver records only its own machines"),
        };
        if *from == to {
            return;
        }
        let record = TraceRecord {
            seq: 0,
            time_ps: time,
            machine,
            from_state: *from,
            to_state: to,
            cause,
        };
        *from = to;
        self.out.trace.records.push(record);
    }

    fn fault(&mut self, time: u64, cause: Cause, reason: String) {
        self.record(time, Machine::ReceiverMain, SeqState::Fault, cause);
        self.record(time, Machine::SivSequencer, SeqState::Fault, cause);
        if let Some(a) = self.active.take() {
            self.out.reports.push(TrainReport {
                period: a.period,
                train: a.train,
                status: TrainStatus::Aborted,
            });
        }
        self.out.faults.push(reason);
    }

    fn on_command(&mut self, time: u64, cmd: ClockCommand) {
        let cause = Cause::Command {
            time_ps: cmd.time_ps,
            command: cmd.kind,
        };
        if self.main == SeqState::Fault {
            return;
        }
        match cmd.kind {
            CommandKind::StartData { period } => {
                let fresh = self.current_period.map_or(true, |p| period > p);
                if self.main == SeqState::DataQubits || !fresh {
                    self.fault(time, cause, format!("unexpected StartData for period {period}"));
                    return;
                }
                self.current_period = Some(period);
                self.trains_seen = 0;
                let overlap = self.polarization.drift(&self.config.channel, &mut self.channel_rng);
                self.out.period_overlaps.push(overlap);
                self.update_photon_numbers(overlap);
                self.record(time, Machine::ReceiverMain, SeqState::DataQubits, cause);
            }
            CommandKind::TrainStart { period, train, qubits } => {
                let expected = self.main == SeqState::DataQubits
                    && self.current_period == Some(period)
                    && train == self.trains_seen
                    && qubits == self.config.qubit.qubits_per_train;
                if !expected || self.siv != SeqState::Idle {
                    self.fault(time, cause, format!("unexpected TrainStart {period}/{train}"));
                    return;
                }
                self.trains_seen += 1;
                self.record(time, Machine::SivSequencer, SeqState::InitSpin, cause);
                let outcome = spin::run_initialization_with(
                    self.spin,
                    SpinState::Down,
                    self.config.max_init_attempts,
                    &mut self.spin_rng,
                )
                .expect("max_init_attempts validated >= 1");
                let done = time + u64::from(outcome.attempts_used) * us_to_ps(self.config.init_attempt_us);
                self.active = Some(ActiveTrain {
                    period,
                    train,
                    cause,
                    ready: false,
                    interacted: 0,
                    pending_herald: None,
                });
                self.queue.push(
                    done,
                    Event::InitDone {
                        period,
                        train,
                        success: outcome.success,
                        attempts: outcome.attempts_used,
                        cause,
                    },
                );
            }
            CommandKind::StartStabilize { period } => {
                let ok = match self.main {
                    SeqState::Idle => true,
                    SeqState::DataQubits => {
                        self.current_period == Some(period)
                            && self.trains_seen == self.config.cadence.trains_per_data_period
                            && self.siv == SeqState::Idle
                    }
                    _ => false,
                };
                if !ok {
                    self.fault(time, cause, format!("unexpected StartStabilize for period {period}"));
                    return;
                }
                self.record(time, Machine::ReceiverMain, SeqState::Stabilize, cause);
            }
            CommandKind::End => {
                let expected = self.config.cadence.trains_per_data_period;
                if self.main == SeqState::DataQubits && self.trains_seen < expected {
                    self.fault(
                        time,
                        cause,
                        format!("End after {} of {expected} trains were announced", self.trains_seen),
                    );
                    return;
                }
                self.record(time, Machine::ReceiverMain, SeqState::Idle, cause);
            }
        }
    }

    fn update_photon_numbers(&mut self, overlap: f64) {
        let (s, n) = photons_at_cavity(self.config, overlap).expect("config validated");
        self.signal_photons = s;
        self.noise_photons = n;
    }

    fn on_batch(&mut self, time: u64, batch_index: usize, next: u32) {
        let batch = self.incoming.batches[batch_index];
        let horizon = self.queue.heap.peek().map_or(u64::MAX, |q| q.time);
        let mut end = next + 1;
        while end < batch.count && batch.arrival_ps(end) < horizon {
            end += 1;
        }
        if let BatchKind::Qubits { period, train, .. } = batch.kind {
            let announced = self.main == SeqState::DataQubits
                && self.current_period == Some(period)
                && train < self.trains_seen;
            if next == 0 && !announced {
                self.queue.push(
                    time + self.latency,
                    Event::StrayQubits {
                        arrival_ps: time,
                        period,
                        train,
                    },
                );
            }
        }
        let routing = Routing::for_state(self.main);
        let class = batch.kind.class();
        let blocked = !routing.carries(class);
        self.out.deliveries.push(Delivery {
            first_ps: time,
            last_ps: batch.arrival_ps(end - 1),
            count: end - next,
            class,
            main_state: self.main,
            routing,
            blocked,
        });
        if !blocked {
            match batch.kind {
                BatchKind::Qubits {
                    period,
                    train,
                    encoding_seed,
                } => self.interact(&batch, period, train, encoding_seed, next, end),
                BatchKind::Reference { .. } => {
                    if end == batch.count {
                        let overlap = self.polarization.feedback(&self.config.channel, &mut self.channel_rng);
                        self.update_photon_numbers(overlap);
                    }
                }
            }
        }
        if end < batch.count {
            self.queue.push(
                batch.arrival_ps(end),
                Event::Batch {
                    batch: batch_index,
                    next: end,
                },
            );
        }
    }

    fn interact(&mut self, batch: &PulseBatch, period: u32, train: u32, encoding_seed: u64, from: u32, to: u32) {
        let Some(mut active) = self.active else { return };
        if active.period != period || active.train != train || !active.ready || active.pending_herald.is_some() {
            return;
        }
        let p_photon = spin::herald_probability(self.spin);
        let mu = self.signal_photons + self.noise_photons;
        let p = -(-mu * p_photon).exp_m1();
        let n = to - from;
        let k = geometric_index(p, &mut self.herald_rng);
        let bin_sep = ns_to_ps(self.config.qubit.bin_separation_ns);
        if k < u64::from(n) {
            let index = from + k as u32;
            active.interacted += k as u32 + 1;
            let from_noise = self.herald_rng.gen::<f64>() * mu < self.noise_photons;
            active.pending_herald = Some(PendingHerald {
                index,
                input: encoded_input(encoding_seed, index),
                from_noise,
            });
            let detect = batch.arrival_ps(index) + bin_sep;
            self.out.detections_ps.push(detect);
            self.queue.push(detect + self.latency, Event::Herald { detect_ps: detect });
        } else {
            active.interacted += n;
            if to == batch.count {
                let last = batch.arrival_ps(to - 1) + bin_sep + self.latency;
                self.queue.push(
                    last,
                    Event::TrainEnd {
                        period,
                        train,
                        interacted: active.interacted,
                        cause: active.cause,
                    },
                );
            }
        }
        self.active = Some(active);
    }

    fn run(mut self) -> ReceiverRun {
        while let Some(Queued { time, event, .. }) = self.queue.heap.pop() {
            match event {
                Event::Command(i) => self.on_command(time, self.incoming.commands[i]),
                Event::Batch { batch, next } => self.on_batch(time, batch, next),
                Event::InitDone {
                    period,
                    train,
                    success,
                    attempts,
                    cause,
                } => {
                    let current = self.active.map(|a| (a.period, a.train)) == Some((period, train));
                    if !current || self.siv != SeqState::InitSpin {
                        continue;
                    }
                    if success {
                        if let Some(a) = self.active.as_mut() {
                            a.ready = true;
                        }
                        self.record(time, Machine::SivSequencer, SeqState::DataQubits, cause);
                    } else {
                        self.active = None;
                        self.out.reports.push(TrainReport {
                            period,
                            train,
                            status: TrainStatus::SkippedInit { attempts },
                        });
                        self.record(time, Machine::SivSequencer, SeqState::Idle, cause);
                    }
                }
                Event::TrainEnd {
                    period,
                    train,
                    interacted,
                    cause,
                } => {
                    let current = self.active.map(|a| (a.period, a.train)) == Some((period, train));
                    if !current || self.siv != SeqState::DataQubits {
                        continue;
                    }
                    self.active = None;
                    self.out.qubits_interacted += u64::from(interacted);
                    self.out.reports.push(TrainReport {
                        period,
                        train,
                        status: TrainStatus::Processed {
                            qubits_interacted: interacted,
                            heralded: false,
                        },
                    });
                    self.record(time, Machine::SivSequencer, SeqState::Idle, cause);
                }
                Event::Herald { detect_ps } => {
                    let Some(active) = self.active else { continue };
                    let Some(h) = active.pending_herald else { continue };
                    if self.siv != SeqState::DataQubits {
                        continue;
                    }
                    let readout = if h.from_noise {
                        if self.spin_rng.gen::<bool>() {
                            SpinState::Up
                        } else {
                            SpinState::Down
                        }
                    } else {
                        spin::heralded_readout(self.spin, h.input, &mut self.spin_rng)
                    };
                    self.out.heralds.push(HeraldRecord {
                        period: active.period,
                        train: active.train,
                        qubit_index: h.index,
                        time_ps: detect_ps,
                        input: h.input,
                        from_noise: h.from_noise,
                        readout,
                        correct: readout == h.input.expected_readout(),
                    });
                    let cause = Cause::Herald { time_ps: detect_ps };
                    self.record(time, Machine::SivSequencer, SeqState::ReadSpin, cause);
                    self.queue.push(
                        time + us_to_ps(self.spin.readout_bin_us),
                        Event::ReadoutDone {
                            herald: self.out.heralds.len() - 1,
                            detect_ps,
                        },
                    );
                }
                Event::StrayQubits {
                    arrival_ps,
                    period,
                    train,
                } => {
                    if self.main != SeqState::Fault {
                        self.fault(
                            time,
                            Cause::StrayPulse { time_ps: arrival_ps },
                            format!("qubit train {period}/{train} arrived unannounced"),
                        );
                    }
                }
                Event::ReadoutDone { herald, detect_ps } => {
                    if self.siv != SeqState::ReadSpin {
                        continue;
                    }
                    let Some(active) = self.active.take() else { continue };
                    let h = self.out.heralds[herald];
                    self.out.qubits_interacted += u64::from(active.interacted);
                    self.out.reports.push(TrainReport {
                        period: h.period,
                        train: h.train,
                        status: TrainStatus::Processed {
                            qubits_interacted: active.interacted,
                            heralded: true,
                        },
                    });
                    self.record(
                        time,
                        Machine::SivSequencer,
                        SeqState::Idle,
                        Cause::Herald { time_ps: detect_ps },
                    );
                }
            }
        }
        self.out
    }
}

/// Index of the first success in Bernoulli(p) trials; `u64::MAX` for p = 0.
fn geometric_index(p: f64, rng: &mut SimRng) -> u64 {
    if p <= 0.0 {
        return u64::MAX;
    }
    if p >= 1.0 {
        return 0;
    }
    let u: f64 = 1.0 - rng.gen::<f64>();
    let k = (u.ln() / (-p).ln_1p()).floor();
    if k >= u64::MAX as f64 {
        u64::MAX
    } else {
        k as u64
    }
}

/// Runs Bob's main and SiV sequencers over the received signals.
pub fn run_receiver(
    config: &LinkConfig,
    incoming: &Incoming,
    spin: &SpinCavityModel,
    seed: u64,
) -> Result<ReceiverRun> {
    config.validate_with(spin)?;
    if incoming.commands.windows(2).any(|w| w[0].time_ps > w[1].time_ps) {
        return Err(Error::Protocol("command log is not time-ordered".into()));
    }
    let latency = ns_to_ps(config.cadence.command_latency_ns);
    let mut queue = Queue {
        heap: BinaryHeap::new(),
        seq: 0,
    };
    for (i, c) in incoming.commands.iter().enumerate() {
        queue.push(c.time_ps + latency, Event::Command(i));
    }
    for (i, b) in incoming.batches.iter().enumerate() {
        if b.count > 0 {
            queue.push(b.first_ps, Event::Batch { batch: i, next: 0 });
        }
    }
    let base = derive_seed(seed, "receiver");
    let mut rx = Receiver {
        config,
        spin,
        incoming,
        queue,
        latency,
        main: SeqState::Idle,
        siv: SeqState::Idle,
        current_period: None,
        trains_seen: 0,
        active: None,
        polarization: PolarizationTracker::new(),
        herald_rng: rng::stream(base, 0),
        spin_rng: rng::stream(base, 1),
        channel_rng: rng::stream(base, 2),
        signal_photons: 0.0,
        noise_photons: 0.0,
        out: ReceiverRun {
            trace: ProtocolTrace::default(),
            deliveries: Vec::new(),
            reports: Vec::new(),
            heralds: Vec::new(),
            detections_ps: Vec::new(),
            period_overlaps: Vec::new(),
            qubits_interacted: 0,
            faults: Vec::new(),
        },
    };
    rx.update_photon_numbers(1.0);
    Ok(rx.run())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LinkSummary {
    pub data_periods: u32,
    pub stabilize_periods: u32,
    pub trains_sent: u32,
    pub trains_processed: u32,
    pub trains_skipped: u32,
    pub trains_aborted: u32,
    pub qubits_interacted: u64,
    pub heralds: u64,
    pub noise_heralds: u64,
    pub correct: u64,
    pub fidelity: Option<f64>,
    pub fidelity_uncertainty: Option<f64>,
    pub blocked_deliveries: u32,
    pub lost_commands: u32,
    pub faults: u32,
    pub mean_conversion_efficiency: f64,
    pub conversion_efficiency_spread: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LinkRun {
    pub transmitter: TransmitterOutput,
    pub incoming: Incoming,
    pub receiver: ReceiverRun,
    /// Transmitter and receiver records merged, seq assigned.
    pub trace: ProtocolTrace,
}

impl LinkRun {
    pub fn summary(&self, config: &LinkConfig) -> LinkSummary {
        let rx = &self.receiver;
        let count = |f: fn(&TrainStatus) -> bool| rx.reports.iter().filter(|r| f(&r.status)).count() as u32;
        let heralds = rx.heralds.len() as u64;
        let correct = rx.heralds.iter().filter(|h| h.correct).count() as u64;
        let eta = config.conversion_efficiency().unwrap_or(0.0);
        let effs: Vec<f64> = rx.period_overlaps.iter().map(|o| o * eta).collect();
        let mean = if effs.is_empty() {
            0.0
        } else {
            effs.iter().sum::<f64>() / effs.len() as f64
        };
        let spread = if effs.len() < 2 {
            0.0
        } else {
            (effs.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (effs.len() - 1) as f64).sqrt()
        };
        LinkSummary {
            data_periods: self.transmitter.data_periods,
            stabilize_periods: self.transmitter.stabilize_periods,
            trains_sent: self.transmitter.data_periods * config.cadence.trains_per_data_period,
            trains_processed: count(|s| matches!(s, TrainStatus::Processed { .. })),
            trains_skipped: count(|s| matches!(s, TrainStatus::SkippedInit { .. })),
            trains_aborted: count(|s| matches!(s, TrainStatus::Aborted)),
            qubits_interacted: rx.qubits_interacted,
            heralds,
            noise_heralds: rx.heralds.iter().filter(|h| h.from_noise).count() as u64,
            correct,
            fidelity: (heralds > 0).then(|| correct as f64 / heralds as f64),
            fidelity_uncertainty: (heralds > 0).then(|| binomial_se(correct, heralds)),
            blocked_deliveries: rx.deliveries.iter().filter(|d| d.blocked).count() as u32,
            lost_commands: self.incoming.lost_commands.len() as u32,
            faults: rx.faults.len() as u32,
            mean_conversion_efficiency: mean,
            conversion_efficiency_spread: spread,
        }
    }
}

/// Transmitter, channel and receiver end to end. Each stage draws from its
/// own seed derived from `seed`.
pub fn run_link(config: &LinkConfig, spin: &SpinCavityModel, duration_s: f64, seed: u64) -> Result<LinkRun> {
    config.validate_with(spin)?;
    let transmitter = run_transmitter(config, duration_s, derive_seed(seed, "transmitter"))?;
    let incoming = propagate(config, &transmitter, derive_seed(seed, "channel"))?;
    let receiver = run_receiver(config, &incoming, spin, derive_seed(seed, "receiver"))?;
    let trace = merge_traces(&transmitter.records, &receiver.trace.records);
    Ok(LinkRun {
        transmitter,
        incoming,
        receiver,
        trace,
    })
}

fn merge_traces(a: &[TraceRecord], b: &[TraceRecord]) -> ProtocolTrace {
    let mut records = Vec::with_capacity(a.len() + b.len());
    let (mut i, mut j) = (0, 0);
    while i < a.len() || j < b.len() {
        let take_a = j == b.len() || (i < a.len() && a[i].time_ps <= b[j].time_ps);
        if take_a {
            records.push(a[i]);
            i += 1;
        } else {
            records.push(b[j]);
            j += 1;
        }
    }
    for (k, r) in records.iter_mut().enumerate() {
        r.seq = k as u64;
    }
    ProtocolTrace { records }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub invariant: &'static str,
    pub detail: String,
}

fn violation(invariant: &'static str, detail: String) -> Violation {
    Violation { invariant, detail }
}

pub fn check_time_order(trace: &ProtocolTrace) -> Vec<Violation> {
    trace
        .records
        .windows(2)
        .filter(|w| (w[0].time_ps, w[0].seq) >= (w[1].time_ps, w[1].seq))
        .map(|w| violation("time-order", format!("record {} precedes {}", w[0].seq, w[1].seq)))
        .collect()
}

/// No qubit reaches the reference path, no reference pulse reaches the
/// memory, and the switch position always follows the main sequencer.
pub fn check_routing_safety(rx: &ReceiverRun) -> Vec<Violation> {
    let mut out = Vec::new();
    for d in &rx.deliveries {
        if d.routing != Routing::for_state(d.main_state) {
            out.push(violation(
                "routing",
                format!("switch at {:?} while main is {:?} (t={})", d.routing, d.main_state, d.first_ps),
            ));
        }
        if !d.blocked && !d.routing.carries(d.class) {
            out.push(violation(
                "routing",
                format!("{:?} pulse delivered on {:?} (t={})", d.class, d.routing, d.first_ps),
            ));
        }
    }
    out
}

/// Every receiver transition is caused by a received command, a herald
/// detection or a stray qubit pulse with an earlier timestamp.
pub fn check_clock_causality(trace: &ProtocolTrace, incoming: &Incoming, rx: &ReceiverRun) -> Vec<Violation> {
    let mut out = Vec::new();
    for r in trace.records.iter().filter(|r| r.machine != Machine::Transmitter) {
        let t = r.cause.time_ps();
        if t >= r.time_ps {
            out.push(violation(
                "causality",
                format!("record {} at {} caused at {}", r.seq, r.time_ps, t),
            ));
        }
        let known = match r.cause {
            Cause::Command { time_ps, command } => incoming
                .commands
                .iter()
                .any(|c| c.time_ps == time_ps && c.kind == command),
            Cause::Herald { time_ps } => rx.detections_ps.binary_search(&time_ps).is_ok(),
            Cause::StrayPulse { time_ps } => incoming
                .batches
                .iter()
                .any(|b| b.kind.class() == PulseClass::Qubit && b.count > 0 && b.first_ps == time_ps),
            Cause::Schedule { .. } => false,
        };
        if !known {
            out.push(violation(
                "causality",
                format!("record {} cites an event that never arrived", r.seq),
            ));
        }
    }
    out
}

/// Every announced train ends in a report, unless the receiver faulted.
pub fn check_liveness(tx: &TransmitterOutput, rx: &ReceiverRun) -> Vec<Violation> {
    if rx.trace.has_fault() {
        return Vec::new();
    }
    tx.commands
        .iter()
        .filter_map(|c| match c.kind {
            CommandKind::TrainStart { period, train, .. } => Some((period, train)),
            _ => None,
        })
        .filter(|&(p, t)| !rx.reports.iter().any(|r| r.period == p && r.train == t))
        .map(|(p, t)| violation("liveness", format!("train {p}/{t} silently dropped")))
        .collect()
}

/// All single-run invariants.
pub fn check_invariants(run: &LinkRun) -> Vec<Violation> {
    let mut v = check_time_order(&run.trace);
    v.extend(check_routing_safety(&run.receiver));
    v.extend(check_clock_causality(&run.trace, &run.incoming, &run.receiver));
    v.extend(check_liveness(&run.transmitter, &run.receiver));
    v
}
