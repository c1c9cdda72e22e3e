//! SiV spin node in absorption modality.
//!
//! The spin sets the cavity reflectivity: bright for |↑⟩, a small residual for
//! |↓⟩. Readout counts reflected photons in a bin and thresholds the Poisson
//! mixture. State transfer reflects an incoming time-bin qubit off the cavity
//! with a π-pulse between the bins, heralds on an X-basis click of the
//! time-delay interferometer, then reads the spin in the matching basis.

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{check_non_negative, check_unit, invalid, Result};
use crate::rng::{self, SimRng};
use crate::stats::{binomial_se, poisson_cdf, poisson_sf};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SpinState {
    Up,
    Down,
}

impl SpinState {
    pub fn flipped(self) -> Self {
        match self {
            SpinState::Up => SpinState::Down,
            SpinState::Down => SpinState::Up,
        }
    }
}

/// Photon-count thresholds of the pre-train initialization check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitCheck {
    pub bin_us: f64,
    /// |↓⟩ passes when counts are strictly below this.
    pub dark_below: u64,
    /// |↑⟩ passes when counts are strictly above this.
    pub bright_above: u64,
    /// Required bright/dark count-mean ratio.
    pub min_contrast: f64,
}

impl Default for InitCheck {
    fn default() -> Self {
        Self {
            bin_us: 100.0,
            dark_below: 2,
            bright_above: 20,
            min_contrast: 10.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpinCavityModel {
    /// Mean reflected counts per bin with the spin in |↑⟩.
    pub lambda_up: f64,
    /// Mean reflected counts per bin with the spin in |↓⟩.
    pub lambda_down: f64,
    pub readout_bin_us: f64,
    /// Readout says |↑⟩ iff counts > threshold.
    pub threshold: u64,
    pub init_fidelity: f64,
    pub pi_pulse_fidelity: f64,
    /// Cavity power reflectivity for |↑⟩ (includes taper coupling).
    pub reflect_up: f64,
    pub reflect_down: f64,
    /// π-pulses applied between initialization and readout in one transfer.
    pub pi_pulses_per_transfer: u32,
    pub init_check: InitCheck,
}

impl Default for SpinCavityModel {
    /// Measured device: λ↓ = 3.86, λ↑ = 39.1, threshold 15, 97.3 %
    /// initialization, 99.5 % per π-pulse, XY8 between the optical bins. The
    /// residual |↓⟩ reflectivity follows the readout contrast.
    fn default() -> Self {
        let (lambda_up, lambda_down) = (39.1, 3.86);
        let reflect_up = 0.15;
        Self {
            lambda_up,
            lambda_down,
            readout_bin_us: 1000.0,
            threshold: 15,
            init_fidelity: 0.973,
            pi_pulse_fidelity: 0.995,
            reflect_up,
            reflect_down: reflect_up * lambda_down / lambda_up,
            pi_pulses_per_transfer: 8,
            init_check: InitCheck::default(),
        }
    }
}

impl SpinCavityModel {
    /// No residual reflectivity, perfect gates and readout.
    pub fn perfect() -> Self {
        Self {
            lambda_up: 100.0,
            lambda_down: 0.0,
            init_fidelity: 1.0,
            pi_pulse_fidelity: 1.0,
            reflect_down: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_non_negative("lambda_down", self.lambda_down)?;
        if !(self.lambda_up > self.lambda_down) || !self.lambda_up.is_finite() {
            return Err(invalid("lambda_up", "need lambda_up > lambda_down >= 0"));
        }
        check_unit("init_fidelity", self.init_fidelity)?;
        check_unit("pi_pulse_fidelity", self.pi_pulse_fidelity)?;
        check_non_negative("reflect_down", self.reflect_down)?;
        check_unit("reflect_up", self.reflect_up)?;
        if !(self.reflect_up > self.reflect_down) {
            return Err(invalid("reflect_up", "need reflect_up > reflect_down >= 0"));
        }
        if !(self.readout_bin_us > 0.0 && self.init_check.bin_us > 0.0) {
            return Err(invalid("readout_bin_us", "bins must be > 0"));
        }
        Ok(())
    }

    pub fn contrast(&self) -> f64 {
        self.lambda_down / self.lambda_up
    }

    fn mean_counts(&self, state: SpinState) -> f64 {
        match state {
            SpinState::Up => self.lambda_up,
            SpinState::Down => self.lambda_down,
        }
    }

    /// Probability the thresholded readout misreports `state`.
    pub fn misread_probability(&self, state: SpinState) -> f64 {
        match state {
            SpinState::Up => poisson_cdf(self.lambda_up, self.threshold),
            SpinState::Down => poisson_sf(self.lambda_down, self.threshold),
        }
    }

    /// Mean reflectivity seen by a spin in an equal superposition.
    pub fn mean_reflectivity(&self) -> f64 {
        0.5 * (self.reflect_up + self.reflect_down)
    }

    /// Probability that a heralded transfer sits in the residual-reflection
    /// error branch.
    pub fn reflection_error(&self) -> f64 {
        self.reflect_down / (self.reflect_up + self.reflect_down)
    }
}

fn draw_counts(mean: f64, rng: &mut SimRng) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    Poisson::new(mean).map(|d| d.sample(rng) as u64).unwrap_or(0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Readout {
    pub state: SpinState,
    pub counts: u64,
}

pub fn single_shot_readout_with(model: &SpinCavityModel, true_state: SpinState, rng: &mut SimRng) -> Readout {
    let counts = draw_counts(model.mean_counts(true_state), rng);
    let state = if counts > model.threshold {
        SpinState::Up
    } else {
        SpinState::Down
    };
    Readout { state, counts }
}

pub fn single_shot_readout(model: &SpinCavityModel, true_state: SpinState, seed: u64) -> Readout {
    single_shot_readout_with(model, true_state, &mut rng::stream(seed, 0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ReadoutError {
    pub given_up: f64,
    pub given_down: f64,
    /// Equal-prior average of the two.
    pub mean: f64,
    /// Readout carries no information (λ↑ = λ↓).
    pub uninformative: bool,
}

/// Exact Poisson tail sums on either side of the threshold.
pub fn readout_error_analytic(model: &SpinCavityModel) -> ReadoutError {
    let given_up = model.misread_probability(SpinState::Up);
    let given_down = model.misread_probability(SpinState::Down);
    ReadoutError {
        given_up,
        given_down,
        mean: 0.5 * (given_up + given_down),
        uninformative: model.lambda_up == model.lambda_down,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ReadoutMonteCarlo {
    pub trials: u64,
    pub errors: u64,
    pub error_rate: f64,
    pub standard_error: f64,
}

/// Monte Carlo readout error with the true state alternating Up/Down.
pub fn readout_error_monte_carlo(model: &SpinCavityModel, trials: u64, seed: u64) -> ReadoutMonteCarlo {
    let mut rng = rng::stream(seed, 0);
    let mut errors = 0u64;
    for i in 0..trials {
        let truth = if i % 2 == 0 { SpinState::Up } else { SpinState::Down };
        if single_shot_readout_with(model, truth, &mut rng).state != truth {
            errors += 1;
        }
    }
    ReadoutMonteCarlo {
        trials,
        errors,
        error_rate: errors as f64 / trials as f64,
        standard_error: binomial_se(errors, trials),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ReadoutHistogramRow {
    pub counts: u64,
    pub up_frequency: f64,
    pub down_frequency: f64,
    pub up_pmf: f64,
    pub down_pmf: f64,
}

/// Normalized count histograms for each spin state, with the Poisson
/// expectations alongside.
pub fn readout_histogram(model: &SpinCavityModel, shots: u64, seed: u64) -> Vec<ReadoutHistogramRow> {
    let max = (model.lambda_up + 6.0 * model.lambda_up.sqrt()).ceil() as usize + 1;
    let mut up = vec![0u64; max + 1];
    let mut down = vec![0u64; max + 1];
    let mut rng = rng::stream(seed, 0);
    for _ in 0..shots {
        up[(draw_counts(model.lambda_up, &mut rng) as usize).min(max)] += 1;
        down[(draw_counts(model.lambda_down, &mut rng) as usize).min(max)] += 1;
    }
    let pmf = |mean: f64, k: u64| {
        let below = if k == 0 { 0.0 } else { poisson_cdf(mean, k - 1) };
        poisson_cdf(mean, k) - below
    };
    (0..=max)
        .map(|k| ReadoutHistogramRow {
            counts: k as u64,
            up_frequency: up[k] as f64 / shots as f64,
            down_frequency: down[k] as f64 / shots as f64,
            up_pmf: pmf(model.lambda_up, k as u64),
            down_pmf: pmf(model.lambda_down, k as u64),
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InitOutcome {
    pub attempts_used: u32,
    pub success: bool,
}

fn check_passes(model: &SpinCavityModel, target: SpinState, counts: u64) -> bool {
    match target {
        SpinState::Down => counts < model.init_check.dark_below,
        SpinState::Up => counts > model.init_check.bright_above,
    }
}

/// The bright/dark contrast check. A dark mean of zero always passes.
pub fn contrast_ok(model: &SpinCavityModel) -> bool {
    model.lambda_down == 0.0 || model.lambda_up / model.lambda_down > model.init_check.min_contrast
}

/// One initialization attempt: optical pumping, then a check bin.
pub fn init_attempt(model: &SpinCavityModel, target: SpinState, rng: &mut SimRng) -> bool {
    let prepared = if rng.gen::<f64>() < model.init_fidelity {
        target
    } else {
        target.flipped()
    };
    let counts = draw_counts(model.mean_counts(prepared), rng);
    contrast_ok(model) && check_passes(model, target, counts)
}

/// Probability one attempt passes the check.
pub fn init_acceptance_probability(model: &SpinCavityModel, target: SpinState) -> f64 {
    if !contrast_ok(model) {
        return 0.0;
    }
    let pass = |state: SpinState| {
        let mean = model.mean_counts(state);
        match target {
            SpinState::Down => match model.init_check.dark_below {
                0 => 0.0,
                n => poisson_cdf(mean, n - 1),
            },
            SpinState::Up => poisson_sf(mean, model.init_check.bright_above),
        }
    };
    model.init_fidelity * pass(target) + (1.0 - model.init_fidelity) * pass(target.flipped())
}

/// Repeats initialization until the check passes or attempts run out.
pub fn run_initialization_with(
    model: &SpinCavityModel,
    target: SpinState,
    max_attempts: u32,
    rng: &mut SimRng,
) -> Result<InitOutcome> {
    if max_attempts == 0 {
        return Err(invalid("max_attempts", "must be >= 1"));
    }
    for attempt in 1..=max_attempts {
        if init_attempt(model, target, rng) {
            return Ok(InitOutcome {
                attempts_used: attempt,
                success: true,
            });
        }
    }
    Ok(InitOutcome {
        attempts_used: max_attempts,
        success: false,
    })
}

pub fn run_initialization(
    model: &SpinCavityModel,
    target: SpinState,
    max_attempts: u32,
    seed: u64,
) -> Result<InitOutcome> {
    run_initialization_with(model, target, max_attempts, &mut rng::stream(seed, 0))
}

/// Probability that initialization plus `n` π-pulses leaves the spin where
/// intended.
pub fn sequence_fidelity(model: &SpinCavityModel, n_pi_pulses: u32) -> f64 {
    model.init_fidelity * model.pi_pulse_fidelity.powi(n_pi_pulses as i32)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TimeBinInput {
    Early,
    Late,
    Plus,
    Minus,
}

impl TimeBinInput {
    pub const ALL: [TimeBinInput; 4] = [
        TimeBinInput::Early,
        TimeBinInput::Late,
        TimeBinInput::Plus,
        TimeBinInput::Minus,
    ];

    pub fn basis(self) -> Basis {
        match self {
            TimeBinInput::Early | TimeBinInput::Late => Basis::Z,
            TimeBinInput::Plus | TimeBinInput::Minus => Basis::X,
        }
    }

    /// Spin readout expected after a faithful transfer. The entangled state
    /// is (|E↓⟩ + |L↑⟩)/√2; X-basis readout rotates |+⟩ to |↑⟩.
    pub fn expected_readout(self) -> SpinState {
        match self {
            TimeBinInput::Early | TimeBinInput::Minus => SpinState::Down,
            TimeBinInput::Late | TimeBinInput::Plus => SpinState::Up,
        }
    }

    /// Normalized (Early, Late) amplitudes.
    pub fn amplitudes(self) -> TimeBinQubit {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let (early, late) = match self {
            TimeBinInput::Early => ([1.0, 0.0], [0.0, 0.0]),
            TimeBinInput::Late => ([0.0, 0.0], [1.0, 0.0]),
            TimeBinInput::Plus => ([h, 0.0], [h, 0.0]),
            TimeBinInput::Minus => ([h, 0.0], [-h, 0.0]),
        };
        TimeBinQubit {
            early,
            late,
            bin_separation_ns: 144.5,
        }
    }
}

/// Time-bin qubit amplitudes as (re, im) pairs. Norm ≤ 1 allows loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeBinQubit {
    pub early: [f64; 2],
    pub late: [f64; 2],
    pub bin_separation_ns: f64,
}

impl TimeBinQubit {
    pub fn norm_squared(&self) -> f64 {
        self.early[0].powi(2) + self.early[1].powi(2) + self.late[0].powi(2) + self.late[1].powi(2)
    }

    pub fn validate(&self) -> Result<()> {
        if self.norm_squared() > 1.0 + 1e-12 {
            return Err(invalid("time_bin_qubit", "norm exceeds 1"));
        }
        if !(self.bin_separation_ns > 0.0) {
            return Err(invalid("bin_separation_ns", "must be > 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Basis {
    Z,
    X,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct TransferOutcome {
    pub input: TimeBinInput,
    pub heralded: bool,
    pub photon_basis: Basis,
    /// Present only when heralded.
    pub spin_readout: Option<SpinState>,
    pub correct: Option<bool>,
}

/// Probability that a photon reaching the cavity heralds: it is reflected
/// and exits the interferometer in the X-basis (middle) time slot.
pub fn herald_probability(model: &SpinCavityModel) -> f64 {
    0.5 * model.mean_reflectivity()
}

/// Spin readout after a herald. Branches: residual reflection of |↓⟩ swaps
/// the transferred state, an initialization or π-pulse error flips it, and the
/// readout misreports with its per-state error.
pub fn heralded_readout(model: &SpinCavityModel, input: TimeBinInput, rng: &mut SimRng) -> SpinState {
    let mut state = input.expected_readout();
    if rng.gen::<f64>() < model.reflection_error() {
        state = state.flipped();
    }
    if rng.gen::<f64>() >= sequence_fidelity(model, model.pi_pulses_per_transfer) {
        state = state.flipped();
    }
    if rng.gen::<f64>() < model.misread_probability(state) {
        state = state.flipped();
    }
    state
}

pub fn transfer_trial_with(model: &SpinCavityModel, input: TimeBinInput, rng: &mut SimRng) -> TransferOutcome {
    let heralded = rng.gen::<f64>() < herald_probability(model);
    let spin_readout = heralded.then(|| heralded_readout(model, input, rng));
    TransferOutcome {
        input,
        heralded,
        photon_basis: input.basis(),
        spin_readout,
        correct: spin_readout.map(|s| s == input.expected_readout()),
    }
}

pub fn transfer_trial(model: &SpinCavityModel, input: TimeBinInput, seed: u64) -> TransferOutcome {
    transfer_trial_with(model, input, &mut rng::stream(seed, 0))
}

/// Exact heralded-correct probability for one input, by enumerating the
/// reflection, gate and readout branches.
pub fn transfer_correct_probability(model: &SpinCavityModel, input: TimeBinInput) -> f64 {
    let expected = input.expected_readout();
    let p_refl = model.reflection_error();
    let p_gate = 1.0 - sequence_fidelity(model, model.pi_pulses_per_transfer);
    let mut total = 0.0;
    for refl_err in [false, true] {
        for gate_err in [false, true] {
            let weight = (if refl_err { p_refl } else { 1.0 - p_refl })
                * (if gate_err { p_gate } else { 1.0 - p_gate });
            let state = if refl_err ^ gate_err { expected.flipped() } else { expected };
            let misread = model.misread_probability(state);
            let reads_expected = if state == expected { 1.0 - misread } else { misread };
            total += weight * reads_expected;
        }
    }
    total
}

/// Unweighted mean of [`transfer_correct_probability`] over {E, L, +, −}.
pub fn transfer_fidelity_exact(model: &SpinCavityModel) -> f64 {
    TimeBinInput::ALL
        .iter()
        .map(|&i| transfer_correct_probability(model, i))
        .sum::<f64>()
        / 4.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InputTally {
    pub input: TimeBinInput,
    pub trials: u64,
    pub heralds: u64,
    pub correct: u64,
    pub fidelity: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TransferFidelity {
    pub per_input: Vec<InputTally>,
    /// Unweighted mean over inputs; `None` if any input never heralded.
    pub fidelity: Option<f64>,
    pub uncertainty: Option<f64>,
    pub total_heralds: u64,
    pub zero_herald_inputs: bool,
}

impl TransferFidelity {
    pub fn from_tallies(per_input: Vec<InputTally>) -> Self {
        let total_heralds = per_input.iter().map(|t| t.heralds).sum();
        let zero_herald_inputs = per_input.iter().any(|t| t.heralds == 0);
        let (fidelity, uncertainty) = if zero_herald_inputs || per_input.is_empty() {
            (None, None)
        } else {
            let n = per_input.len() as f64;
            let mean = per_input.iter().filter_map(|t| t.fidelity).sum::<f64>() / n;
            let var: f64 = per_input
                .iter()
                .map(|t| binomial_se(t.correct, t.heralds).powi(2))
                .sum();
            (Some(mean), Some(var.sqrt() / n))
        };
        Self {
            per_input,
            fidelity,
            uncertainty,
            total_heralds,
            zero_herald_inputs,
        }
    }
}

/// Monte Carlo transfer fidelity with `trials_per_state` attempts per input.
pub fn transfer_fidelity(model: &SpinCavityModel, trials_per_state: u64, seed: u64) -> Result<TransferFidelity> {
    if trials_per_state < 100 {
        return Err(invalid("trials_per_state", "must be >= 100"));
    }
    let per_input = TimeBinInput::ALL
        .iter()
        .enumerate()
        .map(|(i, &input)| {
            let mut rng = rng::stream(seed, i as u64);
            let (mut heralds, mut correct) = (0u64, 0u64);
            for _ in 0..trials_per_state {
                let o = transfer_trial_with(model, input, &mut rng);
                if o.heralded {
                    heralds += 1;
                    correct += u64::from(o.correct == Some(true));
                }
            }
            InputTally {
                input,
                trials: trials_per_state,
                heralds,
                correct,
                fidelity: (heralds > 0).then(|| correct as f64 / heralds as f64),
            }
        })
        .collect();
    Ok(TransferFidelity::from_tallies(per_input))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::ln_factorial;

    fn brute_tail(mean: f64, from: u64) -> f64 {
        // Terms summed until they drop below 1e-12 of the running total.
        let mut sum = 0.0;
        let mut k = from;
        loop {
            let t = (k as f64 * mean.ln() - mean - ln_factorial(k)).exp();
            sum += t;
            if k as f64 > mean && t < 1e-12 * sum.max(1e-300) {
                break;
            }
            k += 1;
        }
        sum
    }

    fn brute_head(mean: f64, to: u64) -> f64 {
        (0..=to)
            .map(|k| (k as f64 * mean.ln() - mean - ln_factorial(k)).exp())
            .sum()
    }

    #[test]
    fn default_readout_error() {
        let m = SpinCavityModel::default();
        let e = readout_error_analytic(&m);
        assert!((e.given_up - brute_head(39.1, 15)).abs() < 1e-12);
        assert!((e.given_down - brute_tail(3.86, 16)).abs() < 1e-12);
        assert!(e.mean > 3e-6 && e.mean < 1.2e-5, "{e:?}");
        assert!((e.mean - 6.41e-6).abs() < 0.01e-6, "{e:?}");
        assert!(!e.uninformative);
    }

    #[test]
    fn dark_state_without_counts_never_misreads() {
        let mut m = SpinCavityModel::default();
        m.lambda_down = 0.0;
        for seed in 0..200 {
            assert_eq!(single_shot_readout(&m, SpinState::Down, seed).state, SpinState::Down);
        }
        assert_eq!(readout_error_analytic(&m).given_down, 0.0);
        m.threshold = 1;
        assert_eq!(readout_error_analytic(&m).given_down, 0.0);
    }

    #[test]
    fn equal_means_uninformative() {
        let mut m = SpinCavityModel::default();
        m.lambda_down = m.lambda_up;
        let e = readout_error_analytic(&m);
        assert!(e.uninformative);
        assert!((e.mean - 0.5).abs() < 1e-12);
        assert!(m.validate().is_err());
    }

    #[test]
    fn zero_threshold() {
        let mut m = SpinCavityModel::default();
        m.threshold = 0;
        let e = readout_error_analytic(&m);
        assert!((e.given_up - (-39.1f64).exp()).abs() < 1e-25);
        assert!((e.given_down - (1.0 - (-3.86f64).exp())).abs() < 1e-12);
        assert!((e.mean - 0.5 * (e.given_up + e.given_down)).abs() < 1e-15);
    }

    #[test]
    fn monte_carlo_readout_matches_analytic() {
        let mut m = SpinCavityModel::default();
        m.threshold = 10; // larger error for a quick check
        let e = readout_error_analytic(&m);
        let mc = readout_error_monte_carlo(&m, 400_000, 3);
        assert!((mc.error_rate - e.mean).abs() < 3.0 * mc.standard_error.max(1e-9), "{mc:?} vs {e:?}");
    }

    #[test]
    fn readout_histogram_normalized() {
        let m = SpinCavityModel::default();
        let h = readout_histogram(&m, 20_000, 1);
        let up: f64 = h.iter().map(|r| r.up_frequency).sum();
        let down: f64 = h.iter().map(|r| r.down_frequency).sum();
        assert!((up - 1.0).abs() < 1e-12 && (down - 1.0).abs() < 1e-12);
        let pmf: f64 = h.iter().map(|r| r.down_pmf).sum();
        assert!((pmf - 1.0).abs() < 1e-9);
    }

    #[test]
    fn perfect_init_first_try() {
        let m = SpinCavityModel::perfect();
        for target in [SpinState::Up, SpinState::Down] {
            let o = run_initialization(&m, target, 5, 1).unwrap();
            assert_eq!(o.attempts_used, 1);
            assert!(o.success);
        }
    }

    #[test]
    fn default_init_acceptance() {
        let m = SpinCavityModel::default();
        // 0.973·e^{−3.86}(1 + 3.86) plus the negligible mis-prepared branch
        let oracle = 0.973 * (-3.86f64).exp() * (1.0 + 3.86);
        let p = init_acceptance_probability(&m, SpinState::Down);
        assert!((p - oracle).abs() < 1e-12, "{p} vs {oracle}");
        assert!((p - 0.0996).abs() < 1e-4);

        let mut rng = rng::stream(5, 0);
        let n = 200_000;
        let passes = (0..n).filter(|_| init_attempt(&m, SpinState::Down, &mut rng)).count();
        let rate = passes as f64 / n as f64;
        assert!((rate - p).abs() < 3.0 * binomial_se(passes as u64, n), "{rate}");
    }

    #[test]
    fn hopeless_init_exhausts() {
        let mut m = SpinCavityModel::perfect();
        m.init_fidelity = 0.0;
        let o = run_initialization(&m, SpinState::Down, 50, 2).unwrap();
        assert!(!o.success);
        assert_eq!(o.attempts_used, 50);
        assert!(run_initialization(&m, SpinState::Down, 0, 2).is_err());
    }

    #[test]
    fn poor_contrast_blocks_init() {
        let mut m = SpinCavityModel::default();
        m.lambda_down = 5.0;
        assert!(!contrast_ok(&m));
        assert_eq!(init_acceptance_probability(&m, SpinState::Down), 0.0);
    }

    #[test]
    fn sequence_fidelity_product() {
        let m = SpinCavityModel::default();
        assert_eq!(sequence_fidelity(&m, 0), 0.973);
        assert!((sequence_fidelity(&m, 8) - 0.973 * 0.995f64.powi(8)).abs() < 1e-15);
        assert!((sequence_fidelity(&m, 8) - 0.935).abs() < 5e-4);
        let mut ideal = m;
        ideal.pi_pulse_fidelity = 1.0;
        assert_eq!(sequence_fidelity(&ideal, 0), sequence_fidelity(&ideal, 64));
    }

    #[test]
    fn perfect_transfer_is_exact() {
        let m = SpinCavityModel::perfect();
        for input in TimeBinInput::ALL {
            assert_eq!(transfer_correct_probability(&m, input), 1.0);
        }
        assert_eq!(transfer_fidelity_exact(&m), 1.0);
        let f = transfer_fidelity(&m, 2000, 4).unwrap();
        assert_eq!(f.fidelity, Some(1.0));
    }

    #[test]
    fn reflectivity_limited_transfer() {
        let mut m = SpinCavityModel::perfect();
        m.reflect_down = m.reflect_up * 3.86 / 39.1;
        let expect = 39.1 / (39.1 + 3.86);
        for input in TimeBinInput::ALL {
            assert!((transfer_correct_probability(&m, input) - expect).abs() < 1e-12);
        }
        assert!((expect - 0.91).abs() < 0.005);
    }

    #[test]
    fn default_model_inside_band() {
        let f = transfer_fidelity_exact(&SpinCavityModel::default());
        assert!((0.845..=0.895).contains(&f), "F = {f}");
    }

    #[test]
    fn minimum_trials_enforced() {
        assert!(transfer_fidelity(&SpinCavityModel::default(), 99, 1).is_err());
    }

    #[test]
    fn no_heralds_flagged() {
        let mut m = SpinCavityModel::perfect();
        m.reflect_up = 0.0;
        m.reflect_down = 0.0;
        let f = transfer_fidelity(&m, 100, 1).unwrap();
        assert!(f.zero_herald_inputs);
        assert!(f.fidelity.is_none());
    }

    #[test]
    fn herald_rate_does_not_depend_on_basis() {
        let m = SpinCavityModel::default();
        let f = transfer_fidelity(&m, 100_000, 21).unwrap();
        let p = herald_probability(&m);
        for t in &f.per_input {
            let se = (p * (1.0 - p) / t.trials as f64).sqrt();
            let rate = t.heralds as f64 / t.trials as f64;
            assert!((rate - p).abs() < 4.0 * se, "{t:?}");
        }
    }

    #[test]
    fn fidelity_monotone_on_grid() {
        let base = SpinCavityModel::default();
        let mut prev = f64::INFINITY;
        for ratio in [0.0, 0.05, 0.1, 0.2, 0.4] {
            let m = SpinCavityModel {
                reflect_down: base.reflect_up * ratio,
                ..base
            };
            let f = transfer_fidelity_exact(&m);
            assert!(f <= prev + 1e-15);
            prev = f;
        }
        let mut prev = 0.0;
        for pi in [0.95, 0.97, 0.99, 1.0] {
            let f = transfer_fidelity_exact(&SpinCavityModel {
                pi_pulse_fidelity: pi,
                ..base
            });
            assert!(f >= prev - 1e-15);
            prev = f;
        }
        let mut prev = 0.0;
        for init in [0.9, 0.95, 0.973, 1.0] {
            let f = transfer_fidelity_exact(&SpinCavityModel {
                init_fidelity: init,
                ..base
            });
            assert!(f >= prev - 1e-15);
            prev = f;
        }
    }

    #[test]
    fn time_bin_inputs_normalized() {
        for input in TimeBinInput::ALL {
            let q = input.amplitudes();
            assert!((q.norm_squared() - 1.0).abs() < 1e-12);
            q.validate().unwrap();
        }
    }
}
