//! Frequency-conversion scheme planning.
//!
//! A χ⁽²⁾ difference-frequency step obeys `f_out = f_in − f_pump`. Given the
//! memory wavelength and a telecom target, the single-pump design has no free
//! parameter; a two-pump design has one (the first pump). Each scheme is
//! classified by where the pump sits relative to the converted light: pumping
//! below the target frequency (anti-Stokes side) avoids Raman and SPDC noise
//! landing on the converted photons.
//!
//! All arithmetic happens in frequency space; wavelengths are vacuum
//! nanometres.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// c in nm·THz.
pub const SPEED_OF_LIGHT_NM_THZ: f64 = 299_792.458;

/// Pump–target separation above which anti-Stokes Raman noise is negligible.
pub const LOW_NOISE_SEPARATION_THZ: f64 = 30.0;

/// Half-width of the band around [`LOW_NOISE_SEPARATION_THZ`] reported as
/// near-threshold.
pub const THRESHOLD_BAND_THZ: f64 = 0.5;

/// Energy-conservation tolerance. Also the width of the `Boundary` regime
/// around `f_pump == f_target`.
pub const ENERGY_TOLERANCE_THZ: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Wavelength(f64);

#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Frequency(f64);

impl Wavelength {
    pub fn new(nm: f64) -> Result<Self> {
        if nm > 0.0 && nm.is_finite() {
            Ok(Self(nm))
        } else {
            Err(invalid("wavelength", format!("{nm} nm must be finite and > 0")))
        }
    }

    pub fn nm(self) -> f64 {
        self.0
    }

    pub fn to_frequency(self) -> Frequency {
        Frequency(SPEED_OF_LIGHT_NM_THZ / self.0)
    }
}

impl Frequency {
    pub fn new(thz: f64) -> Result<Self> {
        if thz > 0.0 && thz.is_finite() {
            Ok(Self(thz))
        } else {
            Err(invalid("frequency", format!("{thz} THz must be finite and > 0")))
        }
    }

    pub fn thz(self) -> f64 {
        self.0
    }

    pub fn to_wavelength(self) -> Wavelength {
        Wavelength(SPEED_OF_LIGHT_NM_THZ / self.0)
    }
}

/// Converts a wavelength span around a centre wavelength to a frequency span
/// in GHz (`Δf = c·Δλ/λ²`).
pub fn bandwidth_nm_to_ghz(center_nm: f64, span_nm: f64) -> f64 {
    SPEED_OF_LIGHT_NM_THZ * span_nm / (center_nm * center_nm) * 1e3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GainBand {
    pub name: String,
    pub min_nm: f64,
    pub max_nm: f64,
}

impl GainBand {
    pub fn new(name: impl Into<String>, min_nm: f64, max_nm: f64) -> Result<Self> {
        let band = Self {
            name: name.into(),
            min_nm,
            max_nm,
        };
        band.validate()?;
        Ok(band)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.min_nm > 0.0 && self.min_nm < self.max_nm && self.max_nm.is_finite()) {
            return Err(invalid(
                "gain_band",
                format!(
                    "band `{}` needs 0 < min < max, got [{}, {}]",
                    self.name, self.min_nm, self.max_nm
                ),
            ));
        }
        Ok(())
    }

    /// Closed-interval containment.
    pub fn contains(&self, wavelength: Wavelength) -> bool {
        (self.min_nm..=self.max_nm).contains(&wavelength.nm())
    }
}

/// Editable default set of high-power laser gain media.
pub fn default_gain_bands() -> Vec<GainBand> {
    vec![
        GainBand {
            name: "semiconductor".into(),
            min_nm: 780.0,
            max_nm: 980.0,
        },
        GainBand {
            name: "ytterbium".into(),
            min_nm: 1010.0,
            max_nm: 1080.0,
        },
        GainBand {
            name: "erbium".into(),
            min_nm: 1530.0,
            max_nm: 1625.0,
        },
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Regime {
    AntiStokes,
    Stokes,
    Boundary,
}

/// One χ⁽²⁾ difference-frequency step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConversionStage {
    pub input_nm: f64,
    pub output_nm: f64,
    pub pump_nm: f64,
    pub regime: Regime,
    /// `f_out − f_pump` in THz.
    pub separation_thz: f64,
    pub low_noise: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConversionScheme {
    pub memory_wavelength: Wavelength,
    pub target_wavelength: Wavelength,
    pub pump_wavelengths: Vec<Wavelength>,
    pub regime: Regime,
    /// `f_target − f_pump` for the pump closest to the target, in THz.
    pub pump_target_separation: f64,
    pub low_noise: bool,
    /// Separation within ±0.5 THz of the 30 THz low-noise line.
    pub near_threshold: bool,
    pub stages: Vec<ConversionStage>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Classification {
    pub regime: Regime,
    pub separation_thz: f64,
    pub low_noise: bool,
    pub near_threshold: bool,
}

fn classify_separation(separation_thz: f64) -> Classification {
    let regime = if separation_thz.abs() <= ENERGY_TOLERANCE_THZ {
        Regime::Boundary
    } else if separation_thz > 0.0 {
        Regime::AntiStokes
    } else {
        Regime::Stokes
    };
    Classification {
        regime,
        separation_thz,
        low_noise: regime == Regime::AntiStokes && separation_thz > LOW_NOISE_SEPARATION_THZ,
        near_threshold: (separation_thz - LOW_NOISE_SEPARATION_THZ).abs() <= THRESHOLD_BAND_THZ,
    }
}

/// Classifies a scheme from its wavelengths alone.
///
/// The regime is set by the pump nearest the target in frequency: any pump
/// above the target frequency puts Stokes-side noise onto the output.
pub fn classify_regime(scheme: &ConversionScheme) -> Classification {
    let target = scheme.target_wavelength.to_frequency().thz();
    let highest_pump = scheme
        .pump_wavelengths
        .iter()
        .map(|p| p.to_frequency().thz())
        .fold(f64::NEG_INFINITY, f64::max);
    classify_separation(target - highest_pump)
}

fn stage(input: Frequency, output: Frequency, pump: Frequency) -> ConversionStage {
    let c = classify_separation(output.thz() - pump.thz());
    ConversionStage {
        input_nm: input.to_wavelength().nm(),
        output_nm: output.to_wavelength().nm(),
        pump_nm: pump.to_wavelength().nm(),
        regime: c.regime,
        separation_thz: c.separation_thz,
        low_noise: c.low_noise,
    }
}

fn assemble(
    memory: Wavelength,
    target: Wavelength,
    pumps: Vec<Wavelength>,
    stages: Vec<ConversionStage>,
) -> ConversionScheme {
    let mut scheme = ConversionScheme {
        memory_wavelength: memory,
        target_wavelength: target,
        pump_wavelengths: pumps,
        regime: Regime::Boundary,
        pump_target_separation: 0.0,
        low_noise: false,
        near_threshold: false,
        stages,
    };
    let c = classify_regime(&scheme);
    scheme.regime = c.regime;
    scheme.pump_target_separation = c.separation_thz;
    scheme.low_noise = c.low_noise;
    scheme.near_threshold = c.near_threshold;
    scheme
}

/// Plans a single-pump downconversion `memory → target`.
pub fn plan_single_pump(memory: Wavelength, target: Wavelength) -> Result<ConversionScheme> {
    let fv = memory.to_frequency();
    let ft = target.to_frequency();
    if ft.thz() >= fv.thz() {
        return Err(Error::NonPhysical(format!(
            "target {} nm is not longer than memory {} nm; difference-frequency \
             conversion only moves light to lower frequency",
            target.nm(),
            memory.nm()
        )));
    }
    let fp = Frequency(fv.thz() - ft.thz());
    let pump = fp.to_wavelength();
    Ok(assemble(memory, target, vec![pump], vec![stage(fv, ft, fp)]))
}

/// Plans a two-step conversion `memory → intermediate → target` with pump 1
/// driving the first step. `None` stands for a zero-frequency (degenerate)
/// first pump and yields the single-pump scheme.
pub fn plan_two_pump(
    memory: Wavelength,
    target: Wavelength,
    pump1: Option<Wavelength>,
) -> Result<ConversionScheme> {
    let Some(pump1) = pump1 else {
        return plan_single_pump(memory, target);
    };
    let fv = memory.to_frequency();
    let ft = target.to_frequency();
    if ft.thz() >= fv.thz() {
        return Err(Error::NonPhysical(format!(
            "target {} nm is not longer than memory {} nm",
            target.nm(),
            memory.nm()
        )));
    }
    let fp1 = pump1.to_frequency();
    let residual = fv.thz() - ft.thz() - fp1.thz();
    if residual <= 0.0 {
        return Err(Error::Infeasible(format!(
            "pump 1 at {} nm ({:.4} THz) leaves residual {:.4} THz <= 0 for pump 2",
            pump1.nm(),
            fp1.thz(),
            residual
        )));
    }
    let fp2 = Frequency(residual);
    let intermediate = Frequency(fv.thz() - fp1.thz());
    let stages = vec![stage(fv, intermediate, fp1), stage(intermediate, ft, fp2)];
    Ok(assemble(
        memory,
        target,
        vec![pump1, fp2.to_wavelength()],
        stages,
    ))
}

/// Residual of `f_v − f_t − Σ f_p` in THz.
pub fn energy_residual(scheme: &ConversionScheme) -> f64 {
    scheme.memory_wavelength.to_frequency().thz()
        - scheme.target_wavelength.to_frequency().thz()
        - scheme
            .pump_wavelengths
            .iter()
            .map(|p| p.to_frequency().thz())
            .sum::<f64>()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PumpBandHit {
    pub pump_index: usize,
    pub pump_nm: f64,
    pub band: GainBand,
}

/// Lists every (pump, band) pair where the band covers the pump wavelength.
pub fn feasible_pumps(scheme: &ConversionScheme, bands: &[GainBand]) -> Result<Vec<PumpBandHit>> {
    if bands.is_empty() {
        return Err(invalid("gain_bands", "at least one gain band is required"));
    }
    let mut hits = Vec::new();
    for (pump_index, pump) in scheme.pump_wavelengths.iter().enumerate() {
        for band in bands.iter().filter(|b| b.contains(*pump)) {
            hits.push(PumpBandHit {
                pump_index,
                pump_nm: pump.nm(),
                band: band.clone(),
            });
        }
    }
    Ok(hits)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn nm(v: f64) -> Wavelength {
        Wavelength::new(v).unwrap()
    }

    // Hand calculation: 1/λp = 1/λv − 1/λt.
    fn reciprocal_pump(v: f64, t: f64) -> f64 {
        1.0 / (1.0 / v - 1.0 / t)
    }

    #[test]
    fn siv_oband_scheme() {
        let s = plan_single_pump(nm(737.0), nm(1350.0)).unwrap();
        let pump = s.pump_wavelengths[0].nm();
        assert!((pump - 1623.0).abs() < 0.5, "pump {pump}");
        assert!((pump - reciprocal_pump(737.0, 1350.0)).abs() < 1e-9);
        assert_eq!(s.regime, Regime::AntiStokes);
        // 299792.458/1350 − 299792.458·(1/737 − 1/1350)
        assert!((s.pump_target_separation - 37.363).abs() < 1e-3);
        assert!(s.low_noise);
        assert!(!s.near_threshold);
    }

    #[test]
    fn symmetric_split_is_boundary() {
        let s = plan_single_pump(nm(700.0), nm(1400.0)).unwrap();
        assert!((s.pump_wavelengths[0].nm() - 1400.0).abs() < 1e-9);
        assert_eq!(s.regime, Regime::Boundary);
        assert!(!s.low_noise);
    }

    #[test]
    fn cband_target_is_stokes() {
        let s = plan_single_pump(nm(737.0), nm(1550.0)).unwrap();
        let pump = s.pump_wavelengths[0].nm();
        assert!((pump - reciprocal_pump(737.0, 1550.0)).abs() < 1e-9);
        assert!((pump - 1405.0).abs() < 0.5);
        assert_eq!(s.regime, Regime::Stokes);
        assert!(!s.low_noise);
    }

    #[test]
    fn upconversion_request_rejected() {
        assert!(matches!(
            plan_single_pump(nm(1350.0), nm(737.0)),
            Err(Error::NonPhysical(_))
        ));
        assert!(plan_single_pump(nm(737.0), nm(737.0)).is_err());
    }

    #[test]
    fn degenerate_first_pump_reduces_to_single_pump() {
        let two = plan_two_pump(nm(737.0), nm(1350.0), None).unwrap();
        let one = plan_single_pump(nm(737.0), nm(1350.0)).unwrap();
        assert_eq!(two, one);
    }

    #[test]
    fn barium_two_pump_oband() {
        let s = plan_two_pump(nm(493.0), nm(1310.0), Some(nm(1064.0))).unwrap();
        let oracle = 1.0 / (1.0 / 493.0 - 1.0 / 1310.0 - 1.0 / 1064.0);
        let p2 = s.pump_wavelengths[1].nm();
        assert!((p2 - oracle).abs() < 1e-6);
        assert!((p2 - 3075.0).abs() < 1.0, "pump2 {p2}");
        assert_eq!(s.stages.len(), 2);
        // 1064 nm sits below the 863 nm intermediate in frequency.
        assert_eq!(s.stages[0].regime, Regime::AntiStokes);
        assert_eq!(s.stages[1].regime, Regime::AntiStokes);
    }

    #[test]
    fn infeasible_first_pump_rejected() {
        // 1/737 − 1/1310 − 1/1623 < 0
        assert!(1.0 / 737.0 - 1.0 / 1310.0 - 1.0 / 1623.0 < 0.0);
        assert!(matches!(
            plan_two_pump(nm(737.0), nm(1310.0), Some(nm(1623.0))),
            Err(Error::Infeasible(_))
        ));
    }

    #[test]
    fn band_hits() {
        let s = plan_single_pump(nm(737.0), nm(1350.0)).unwrap();
        let er = GainBand::new("er", 1530.0, 1630.0).unwrap();
        assert_eq!(feasible_pumps(&s, &[er.clone()]).unwrap().len(), 1);
        assert_eq!(feasible_pumps(&s, &default_gain_bands()).unwrap().len(), 1);

        let ba = plan_two_pump(nm(493.0), nm(1310.0), Some(nm(1064.0))).unwrap();
        let telecom = [er.clone(), GainBand::new("o", 1260.0, 1360.0).unwrap()];
        assert!(feasible_pumps(&ba, &telecom).unwrap().is_empty());

        let edge = GainBand::new("edge", 1000.0, s.pump_wavelengths[0].nm()).unwrap();
        assert_eq!(feasible_pumps(&s, &[edge]).unwrap().len(), 1);
        assert!(feasible_pumps(&s, &[]).is_err());
    }

    #[test]
    fn band_invariant() {
        assert!(GainBand::new("bad", 1600.0, 1500.0).is_err());
        assert!(GainBand::new("bad", 1600.0, 1600.0).is_err());
    }

    #[test]
    fn threshold_band_flag() {
        let c = classify_separation(30.2);
        assert!(c.low_noise && c.near_threshold);
        let c = classify_separation(29.9);
        assert!(!c.low_noise && c.near_threshold);
    }

    proptest! {
        #[test]
        fn wavelength_round_trip(v in 100.0f64..10_000.0) {
            let back = nm(v).to_frequency().to_wavelength().nm();
            prop_assert!(((back - v) / v).abs() < 1e-9);
        }

        #[test]
        fn energy_conserved(v in 400.0f64..900.0, t in 1000.0f64..1700.0, p1 in 900.0f64..6000.0) {
            let s = plan_single_pump(nm(v), nm(t)).unwrap();
            prop_assert!(energy_residual(&s).abs() < ENERGY_TOLERANCE_THZ);
            if let Ok(s) = plan_two_pump(nm(v), nm(t), Some(nm(p1))) {
                prop_assert!(energy_residual(&s).abs() < ENERGY_TOLERANCE_THZ);
            }
        }

        #[test]
        fn regime_flips_when_pump_and_target_swap(v in 400.0f64..900.0, t in 1000.0f64..3000.0) {
            let s = plan_single_pump(nm(v), nm(t)).unwrap();
            prop_assume!(s.regime != Regime::Boundary);
            let swapped = plan_single_pump(nm(v), s.pump_wavelengths[0]).unwrap();
            let expect = match s.regime {
                Regime::AntiStokes => Regime::Stokes,
                _ => Regime::AntiStokes,
            };
            prop_assert_eq!(swapped.regime, expect);
        }

        #[test]
        fn planner_is_pure(v in 400.0f64..900.0, t in 1000.0f64..1700.0) {
            let a = serde_json::to_string(&plan_single_pump(nm(v), nm(t)).unwrap()).unwrap();
            let b = serde_json::to_string(&plan_single_pump(nm(v), nm(t)).unwrap()).unwrap();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn low_noise_implies_antistokes(v in 400.0f64..900.0, t in 1000.0f64..3000.0) {
            let s = plan_single_pump(nm(v), nm(t)).unwrap();
            if s.low_noise {
                prop_assert_eq!(s.regime, Regime::AntiStokes);
                prop_assert!(s.pump_target_separation > LOW_NOISE_SEPARATION_THZ);
            }
        }
    }
}
