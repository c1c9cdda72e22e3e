//! PPLN frequency-converter model.
//!
//! Strong-pump conversion efficiency `η_ext = η_opt·η_int·sin²(L·√(η₀·P))`,
//! an ideal sinc² phase-matching transfer that tunes linearly with chip
//! temperature, pump-induced noise, and a flat-top filter chain.

use std::f64::consts::FRAC_PI_2;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{check_non_negative, check_positive, check_unit, invalid, Error, Result};
use crate::stats::fit_through_origin;
use crate::tradespace::bandwidth_nm_to_ghz;

/// Pump-induced noise photon rate at the converter output.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NoiseModel {
    /// Direct anti-Stokes Raman scattering: rate ∝ P.
    Linear { slope_hz_per_mw: f64 },
    /// Upconverted anti-Stokes photons: rate ∝ P².
    Quadratic { coeff_hz_per_mw2: f64 },
}

impl NoiseModel {
    pub fn rate_hz(&self, pump_mw: f64) -> f64 {
        match *self {
            NoiseModel::Linear { slope_hz_per_mw } => slope_hz_per_mw * pump_mw,
            NoiseModel::Quadratic { coeff_hz_per_mw2 } => coeff_hz_per_mw2 * pump_mw * pump_mw,
        }
    }

    fn coefficient(&self) -> f64 {
        match *self {
            NoiseModel::Linear { slope_hz_per_mw } => slope_hz_per_mw,
            NoiseModel::Quadratic { coeff_hz_per_mw2 } => coeff_hz_per_mw2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterStage {
    pub name: String,
    pub transmission: f64,
    pub bandwidth_ghz: f64,
}

/// Ordered filter stages. Only the last stage's bandwidth gates broadband
/// noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterChain {
    pub stages: Vec<FilterStage>,
}

impl FilterChain {
    pub fn validate(&self) -> Result<()> {
        if self.stages.is_empty() {
            return Err(invalid("filters", "filter chain needs at least one stage"));
        }
        for s in &self.stages {
            if !(s.transmission > 0.0 && s.transmission <= 1.0) {
                return Err(invalid(
                    "filters.transmission",
                    format!("stage `{}` transmission {} not in (0, 1]", s.name, s.transmission),
                ));
            }
            check_non_negative("filters.bandwidth_ghz", s.bandwidth_ghz)?;
        }
        Ok(())
    }

    pub fn transmission(&self) -> f64 {
        self.stages.iter().map(|s| s.transmission).product()
    }

    pub fn noise_bandwidth_ghz(&self) -> f64 {
        self.stages.last().map_or(0.0, |s| s.bandwidth_ghz)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseMatchCurve {
    pub peak_pump_nm: f64,
    pub ref_temp_c: f64,
    pub temp_slope_nm_per_c: f64,
    pub fwhm_nm: f64,
    pub min_temp_c: f64,
    pub max_temp_c: f64,
}

impl PhaseMatchCurve {
    /// Device used for 737 → 1350 nm conversion, phase-matched at 61 °C.
    pub fn siv_oband() -> Self {
        Self {
            peak_pump_nm: 1623.0,
            ref_temp_c: 61.0,
            temp_slope_nm_per_c: 0.28,
            fwhm_nm: 0.8,
            min_temp_c: 20.0,
            max_temp_c: 120.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_positive("phase_match.peak_pump_nm", self.peak_pump_nm)?;
        check_positive("phase_match.fwhm_nm", self.fwhm_nm)?;
        if !(self.min_temp_c < self.max_temp_c) {
            return Err(invalid("phase_match.min_temp_c", "empty operating temperature range"));
        }
        Ok(())
    }

    pub fn peak_at(&self, temp_c: f64) -> f64 {
        self.peak_pump_nm + self.temp_slope_nm_per_c * (temp_c - self.ref_temp_c)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConverterModel {
    pub eta_opt: f64,
    pub eta_int: f64,
    /// Normalized internal efficiency, W⁻¹·m⁻².
    pub eta0: f64,
    pub length_m: f64,
    pub noise: NoiseModel,
    pub filters: FilterChain,
    pub phase_match: PhaseMatchCurve,
}

impl ConverterModel {
    /// 737 → 1350 nm difference-frequency converter with FBG fine filtering.
    pub fn downconversion() -> Self {
        Self {
            eta_opt: 0.19,
            eta_int: 0.65,
            eta0: 1.54e4,
            length_m: 0.035,
            noise: NoiseModel::Linear {
                slope_hz_per_mw: 6.8,
            },
            filters: FilterChain {
                stages: vec![
                    FilterStage {
                        name: "bandpass-25nm".into(),
                        transmission: 1.0,
                        bandwidth_ghz: bandwidth_nm_to_ghz(1350.0, 25.0),
                    },
                    FilterStage {
                        name: "fbg-50ghz".into(),
                        transmission: 0.59,
                        bandwidth_ghz: 50.0,
                    },
                ],
            },
            phase_match: PhaseMatchCurve::siv_oband(),
        }
    }

    /// 1350 → 737 nm sum-frequency converter. Same chip design, so η_int,
    /// η₀ and L carry over; η_opt is set so the maximum is 18.0 % and the
    /// quadratic noise coefficient so the noise at that maximum is 1.63 kHz.
    pub fn upconversion() -> Self {
        let eta_int = 0.65;
        let eta0 = 1.54e4;
        let length_m = 0.035;
        let p_opt_mw = optimal_power_mw(eta0, length_m);
        Self {
            eta_opt: 0.18 / eta_int,
            eta_int,
            eta0,
            length_m,
            noise: NoiseModel::Quadratic {
                coeff_hz_per_mw2: 1.63e3 / (p_opt_mw * p_opt_mw),
            },
            filters: FilterChain {
                stages: vec![FilterStage {
                    name: "bandpass-13nm".into(),
                    transmission: 1.0,
                    bandwidth_ghz: bandwidth_nm_to_ghz(737.0, 13.0),
                }],
            },
            phase_match: PhaseMatchCurve::siv_oband(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_unit("eta_opt", self.eta_opt)?;
        check_unit("eta_int", self.eta_int)?;
        check_positive("eta0", self.eta0)?;
        check_positive("length_m", self.length_m)?;
        check_non_negative("noise coefficient", self.noise.coefficient())?;
        self.filters.validate()?;
        self.phase_match.validate()
    }

    /// Ceiling of the external efficiency, `η_opt·η_int`.
    pub fn max_efficiency(&self) -> f64 {
        self.eta_opt * self.eta_int
    }
}

fn optimal_power_mw(eta0: f64, length_m: f64) -> f64 {
    (FRAC_PI_2 / length_m).powi(2) / eta0 * 1e3
}

fn check_power(pump_mw: f64) -> Result<()> {
    if pump_mw >= 0.0 && pump_mw.is_finite() {
        Ok(())
    } else {
        Err(invalid("pump_power_mw", format!("{pump_mw} mW must be finite and >= 0")))
    }
}

pub fn external_efficiency(model: &ConverterModel, pump_mw: f64) -> Result<f64> {
    check_power(pump_mw)?;
    let phase = model.length_m * (model.eta0 * pump_mw * 1e-3).sqrt();
    Ok(model.max_efficiency() * phase.sin().powi(2))
}

/// Pump power of the first efficiency maximum, `(π/2L)²/η₀`, in mW.
pub fn optimal_pump_power(model: &ConverterModel) -> f64 {
    optimal_power_mw(model.eta0, model.length_m)
}

pub fn noise_rate(model: &ConverterModel, pump_mw: f64) -> Result<f64> {
    check_power(pump_mw)?;
    Ok(model.noise.rate_hz(pump_mw))
}

/// Noise rate per GHz of the noise-accepting (final) filter bandwidth.
pub fn noise_spectral_density(model: &ConverterModel, pump_mw: f64) -> Result<f64> {
    let bw = model.filters.noise_bandwidth_ghz();
    if bw <= 0.0 {
        return Err(invalid("filters.bandwidth_ghz", "final filter bandwidth must be > 0"));
    }
    Ok(noise_rate(model, pump_mw)? / bw)
}

/// Argument where sinc²(x) = 1/2, found by bisection on (0, π/2].
pub fn sinc2_half_max_argument() -> f64 {
    static ROOT: OnceLock<f64> = OnceLock::new();
    *ROOT.get_or_init(|| {
        let (mut lo, mut hi) = (1e-6, FRAC_PI_2);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if sinc2(mid) > 0.5 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    })
}

fn sinc2(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        let s = x.sin() / x;
        s * s
    }
}

/// Normalized conversion efficiency at a pump wavelength and chip
/// temperature. Peak value 1.
pub fn phase_match_transfer(curve: &PhaseMatchCurve, pump_nm: f64, temp_c: f64) -> Result<f64> {
    if !(curve.min_temp_c..=curve.max_temp_c).contains(&temp_c) {
        return Err(Error::OutOfRange {
            what: "chip temperature (°C)",
            value: temp_c,
            min: curve.min_temp_c,
            max: curve.max_temp_c,
        });
    }
    let detuning = pump_nm - curve.peak_at(temp_c);
    Ok(sinc2(sinc2_half_max_argument() * detuning / (0.5 * curve.fwhm_nm)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PowerPoint {
    pub pump_mw: f64,
    pub efficiency: f64,
    pub noise_hz: f64,
}

pub fn power_sweep(model: &ConverterModel, powers_mw: &[f64]) -> Result<Vec<PowerPoint>> {
    powers_mw
        .iter()
        .map(|&p| {
            Ok(PowerPoint {
                pump_mw: p,
                efficiency: external_efficiency(model, p)?,
                noise_hz: noise_rate(model, p)?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TransferPoint {
    pub pump_nm: f64,
    pub temp_c: f64,
    pub transfer: f64,
}

pub fn transfer_sweep(
    curve: &PhaseMatchCurve,
    pump_nm: &[f64],
    temps_c: &[f64],
) -> Result<Vec<TransferPoint>> {
    let mut out = Vec::with_capacity(pump_nm.len() * temps_c.len());
    for &t in temps_c {
        for &l in pump_nm {
            out.push(TransferPoint {
                pump_nm: l,
                temp_c: t,
                transfer: phase_match_transfer(curve, l, t)?,
            });
        }
    }
    Ok(out)
}

/// Full width at half maximum of a sampled single-peaked curve, using linear
/// interpolation at the two half-maximum crossings. `None` if the curve does
/// not fall below half maximum on both sides.
pub fn sampled_fwhm(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let (peak_i, &peak) = ys
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))?;
    let half = 0.5 * peak;
    let cross = |i: usize, j: usize| xs[i] + (half - ys[i]) * (xs[j] - xs[i]) / (ys[j] - ys[i]);
    let left = (1..=peak_i).rev().find(|&i| ys[i - 1] < half).map(|i| cross(i - 1, i))?;
    let right = (peak_i..xs.len() - 1).find(|&i| ys[i + 1] < half).map(|i| cross(i, i + 1))?;
    Some(right - left)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EfficiencyFit {
    /// Fitted `η_opt·η_int`.
    pub max_efficiency: f64,
    pub eta0: f64,
}

/// Least-squares fit of `(pump mW, η_ext)` samples for a known interaction
/// length.
///
/// For fixed η₀ the amplitude is linear and solved exactly; η₀ is found by a
/// log-spaced scan followed by golden-section refinement.
pub fn fit_efficiency(samples: &[(f64, f64)], length_m: f64) -> Result<EfficiencyFit> {
    if samples.len() < 3 {
        return Err(invalid("samples", "need at least three (P, η) samples"));
    }
    check_positive("length_m", length_m)?;
    let basis = |eta0: f64, p_mw: f64| (length_m * (eta0 * p_mw * 1e-3).sqrt()).sin().powi(2);
    let solve = |eta0: f64| {
        let (mut sy, mut ss) = (0.0, 0.0);
        for &(p, y) in samples {
            let s = basis(eta0, p);
            sy += s * y;
            ss += s * s;
        }
        let a = if ss > 0.0 { sy / ss } else { 0.0 };
        let sse: f64 = samples
            .iter()
            .map(|&(p, y)| (y - a * basis(eta0, p)).powi(2))
            .sum();
        (a, sse)
    };

    let (lo_exp, hi_exp, n) = (1.0f64, 7.0f64, 3000);
    let grid = |i: usize| 10f64.powf(lo_exp + (hi_exp - lo_exp) * i as f64 / n as f64);
    let best = (0..=n)
        .min_by(|&a, &b| solve(grid(a)).1.total_cmp(&solve(grid(b)).1))
        .unwrap_or(0);
    let (mut lo, mut hi) = (grid(best.saturating_sub(1)), grid((best + 1).min(n)));
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..200 {
        let m1 = hi - inv_phi * (hi - lo);
        let m2 = lo + inv_phi * (hi - lo);
        if solve(m1).1 < solve(m2).1 {
            hi = m2;
        } else {
            lo = m1;
        }
    }
    let eta0 = 0.5 * (lo + hi);
    Ok(EfficiencyFit {
        max_efficiency: solve(eta0).0,
        eta0,
    })
}

/// Least-squares noise coefficient for `(pump mW, rate Hz)` samples, keeping
/// the model's functional form.
pub fn fit_noise(form: &NoiseModel, samples: &[(f64, f64)]) -> NoiseModel {
    let y: Vec<f64> = samples.iter().map(|s| s.1).collect();
    match form {
        NoiseModel::Linear { .. } => {
            let x: Vec<f64> = samples.iter().map(|s| s.0).collect();
            NoiseModel::Linear {
                slope_hz_per_mw: fit_through_origin(&x, &y),
            }
        }
        NoiseModel::Quadratic { .. } => {
            let x: Vec<f64> = samples.iter().map(|s| s.0 * s.0).collect();
            NoiseModel::Quadratic {
                coeff_hz_per_mw2: fit_through_origin(&x, &y),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    #[test]
    fn default_operating_point() {
        let m = ConverterModel::downconversion();
        let eta = external_efficiency(&m, 130.0).unwrap();
        assert!((eta - 0.122).abs() < 0.005, "η = {eta}");
        // (π/(2·0.035))² / 1.54e4 W
        let p = optimal_pump_power(&m);
        assert!((p - 130.79).abs() < 0.05, "P* = {p}");
    }

    #[test]
    fn zero_pump_converts_nothing() {
        let m = ConverterModel::downconversion();
        assert_eq!(external_efficiency(&m, 0.0).unwrap(), 0.0);
        assert_eq!(noise_rate(&m, 0.0).unwrap(), 0.0);
        assert_eq!(noise_spectral_density(&m, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn half_sine_point() {
        let m = ConverterModel::downconversion();
        // L√(η₀P) = π/4
        let p = (PI / 4.0 / m.length_m).powi(2) / m.eta0 * 1e3;
        assert!((p - 32.7).abs() < 0.05);
        let eta = external_efficiency(&m, p).unwrap();
        assert!((eta - 0.5 * m.max_efficiency()).abs() < 1e-12);
        assert!((eta - 0.0617).abs() < 1e-3);
    }

    #[test]
    fn negative_power_rejected() {
        let m = ConverterModel::downconversion();
        assert!(external_efficiency(&m, -1.0).is_err());
        assert!(noise_rate(&m, -1.0).is_err());
    }

    #[test]
    fn optimal_power_scaling() {
        let m = ConverterModel::downconversion();
        let p = optimal_pump_power(&m);
        let mut longer = m.clone();
        longer.length_m *= 2.0;
        assert!((optimal_pump_power(&longer) - p / 4.0).abs() < 1e-9);
        let mut stronger = m.clone();
        stronger.eta0 *= 2.0;
        assert!((optimal_pump_power(&stronger) - p / 2.0).abs() < 1e-9);
    }

    #[test]
    fn full_back_conversion_zero() {
        let m = ConverterModel::downconversion();
        let p = 4.0 * optimal_pump_power(&m);
        assert!(external_efficiency(&m, p).unwrap() < 1e-20);
    }

    #[test]
    fn linear_noise_at_optimum() {
        let m = ConverterModel::downconversion();
        let r = noise_rate(&m, 130.0).unwrap();
        assert!((r - 884.0).abs() < 1e-9);
    }

    #[test]
    fn upconversion_calibration() {
        let m = ConverterModel::upconversion();
        m.validate().unwrap();
        let p = optimal_pump_power(&m);
        assert!((external_efficiency(&m, p).unwrap() - 0.18).abs() < 1e-12);
        assert!((noise_rate(&m, p).unwrap() - 1630.0).abs() < 1e-9);
        let NoiseModel::Quadratic { coeff_hz_per_mw2 } = m.noise else {
            panic!("upconversion noise must be quadratic");
        };
        assert!((coeff_hz_per_mw2 - 1.63e3 / (p * p)).abs() < 1e-15);
    }

    #[test]
    fn spectral_density() {
        let mut m = ConverterModel::downconversion();
        m.noise = NoiseModel::Linear {
            slope_hz_per_mw: 10.0,
        };
        // 1.0 kHz through 50 GHz
        assert!((noise_spectral_density(&m, 100.0).unwrap() - 20.0).abs() < 1e-12);

        let up = ConverterModel::upconversion();
        let p = optimal_pump_power(&up);
        // Δf = c·Δλ/λ² for 13 nm at 737 nm
        let bw_ghz: f64 = 299_792.458 * 13.0 / (737.0 * 737.0) * 1e3;
        assert!((bw_ghz - 7175.2).abs() < 0.5);
        let rho = noise_spectral_density(&up, p).unwrap();
        assert!((rho - 1630.0 / bw_ghz).abs() < 1e-12);

        m.filters.stages.last_mut().unwrap().bandwidth_ghz = 0.0;
        assert!(noise_spectral_density(&m, 10.0).is_err());
    }

    // Newton iteration on sinc²(x) − 1/2, independent of the bisection.
    fn half_max_oracle() -> f64 {
        let f = |x: f64| (x.sin() / x).powi(2) - 0.5;
        let mut x = 1.4;
        for _ in 0..50 {
            let h = 1e-7;
            let d = (f(x + h) - f(x - h)) / (2.0 * h);
            x -= f(x) / d;
        }
        x
    }

    #[test]
    fn phase_match_points() {
        let c = PhaseMatchCurve::siv_oband();
        assert!((sinc2_half_max_argument() - half_max_oracle()).abs() < 1e-9);
        assert!((sinc2_half_max_argument() - 1.3916).abs() < 1e-4);
        assert_eq!(phase_match_transfer(&c, 1623.0, 61.0).unwrap(), 1.0);
        let shifted = c.peak_at(71.0);
        assert!((shifted - 1625.8).abs() < 1e-9);
        assert!((phase_match_transfer(&c, shifted, 71.0).unwrap() - 1.0).abs() < 1e-12);
        assert!((phase_match_transfer(&c, 1623.4, 61.0).unwrap() - 0.5).abs() < 1e-12);
        assert!((phase_match_transfer(&c, 1622.6, 61.0).unwrap() - 0.5).abs() < 1e-12);
        let null = PI / sinc2_half_max_argument() * 0.4;
        assert!(phase_match_transfer(&c, 1623.0 + null, 61.0).unwrap() < 1e-25);
        assert!(phase_match_transfer(&c, 1623.0, 500.0).is_err());
    }

    #[test]
    fn sampled_fwhm_of_transfer_curve() {
        let c = PhaseMatchCurve::siv_oband();
        let xs: Vec<f64> = (0..=4000).map(|i| 1621.0 + i as f64 * 1e-3).collect();
        let ys: Vec<f64> = xs
            .iter()
            .map(|&x| phase_match_transfer(&c, x, 61.0).unwrap())
            .collect();
        let w = sampled_fwhm(&xs, &ys).unwrap();
        assert!((w - 0.8).abs() < 1e-4, "fwhm {w}");
    }

    #[test]
    fn fit_recovers_synthetic_parameters() {
        let m = ConverterModel::downconversion();
        let samples: Vec<(f64, f64)> = (0..=60)
            .map(|i| {
                let p = i as f64 * 5.0;
                // deterministic ±0.5 % ripple standing in for measurement noise
                let ripple = 1.0 + 0.005 * ((i * 7919) % 13) as f64 / 13.0 - 0.0025;
                (p, external_efficiency(&m, p).unwrap() * ripple)
            })
            .collect();
        let fit = fit_efficiency(&samples, m.length_m).unwrap();
        assert!((fit.eta0 / m.eta0 - 1.0).abs() < 0.01, "{fit:?}");
        assert!((fit.max_efficiency / m.max_efficiency() - 1.0).abs() < 0.01, "{fit:?}");
    }

    #[test]
    fn noise_fit_keeps_form() {
        let up = ConverterModel::upconversion();
        let samples: Vec<(f64, f64)> = (1..=20)
            .map(|i| (i as f64 * 10.0, up.noise.rate_hz(i as f64 * 10.0)))
            .collect();
        let fitted = fit_noise(&up.noise, &samples);
        assert!((fitted.coefficient() - up.noise.coefficient()).abs() < 1e-12);
    }

    #[test]
    fn invalid_models_rejected() {
        let mut m = ConverterModel::downconversion();
        m.eta_opt = 1.2;
        assert!(matches!(m.validate(), Err(Error::InvalidParameter { name: "eta_opt", .. })));
        let mut m = ConverterModel::downconversion();
        m.length_m = 0.0;
        assert!(m.validate().is_err());
        let mut m = ConverterModel::downconversion();
        m.filters.stages[0].transmission = 0.0;
        assert!(m.validate().is_err());
    }

    proptest! {
        #[test]
        fn bounded_by_ceiling(p in 0.0f64..2000.0) {
            let m = ConverterModel::downconversion();
            let eta = external_efficiency(&m, p).unwrap();
            prop_assert!((0.0..=m.max_efficiency() + 1e-15).contains(&eta));
        }

        #[test]
        fn monotone_below_optimum(a in 0.0f64..1.0, b in 0.0f64..1.0) {
            let m = ConverterModel::downconversion();
            let pstar = optimal_pump_power(&m);
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            prop_assume!(hi - lo > 1e-6);
            prop_assert!(
                external_efficiency(&m, lo * pstar).unwrap()
                    < external_efficiency(&m, hi * pstar).unwrap()
            );
        }

        #[test]
        fn noise_scaling(p in 0.0f64..500.0) {
            let down = ConverterModel::downconversion();
            let up = ConverterModel::upconversion();
            let tol = 1e-9 * (1.0 + p * p);
            prop_assert!((noise_rate(&down, 2.0 * p).unwrap() - 2.0 * noise_rate(&down, p).unwrap()).abs() < tol);
            prop_assert!((noise_rate(&up, 2.0 * p).unwrap() - 4.0 * noise_rate(&up, p).unwrap()).abs() < tol);
        }

        #[test]
        fn temperature_covariance(l in 1615.0f64..1635.0, t in 25.0f64..90.0, dt in -5.0f64..25.0) {
            let c = PhaseMatchCurve::siv_oband();
            let a = phase_match_transfer(&c, l, t + dt).unwrap();
            let b = phase_match_transfer(&c, l - c.temp_slope_nm_per_c * dt, t).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
        }
    }
}
