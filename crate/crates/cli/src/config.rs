//! Experiment configuration: one TOML file whose sections override the
//! paper-defaults preset key by key.

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use toml::{Table, Value};

use qlink::converter::ConverterModel;
use qlink::link::LinkConfig;
use qlink::photonics::{dark_rate_for_snr, CorrelationSettings, HomSetup, PhotonChain};
use qlink::spin::SpinCavityModel;
use qlink::tradespace::{default_gain_bands, GainBand, Wavelength};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("{}", located(section, *line, message))]
    UnknownKey {
        section: String,
        line: Option<usize>,
        message: String,
    },
    #[error("{}", located(section, *line, message))]
    Invalid {
        section: String,
        line: Option<usize>,
        message: String,
    },
}

fn located(section: &str, line: Option<usize>, message: &str) -> String {
    match line {
        Some(l) => format!("[{section}] (line {l}): {message}"),
        None => format!("[{section}]: {message}"),
    }
}

impl ConfigError {
    pub fn kind(&self) -> &'static str {
        match self {
            ConfigError::Io { .. } => "io",
            ConfigError::Parse(_) => "parse",
            ConfigError::UnknownKey { .. } => "unknown_key",
            ConfigError::Invalid { .. } => "invalid",
        }
    }

    pub fn section(&self) -> Option<&str> {
        match self {
            ConfigError::UnknownKey { section, .. } | ConfigError::Invalid { section, .. } => Some(section),
            _ => None,
        }
    }

    pub fn line(&self) -> Option<usize> {
        match self {
            ConfigError::UnknownKey { line, .. } | ConfigError::Invalid { line, .. } => *line,
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanSection {
    pub memory_nm: f64,
    pub target_nm: f64,
    /// First pump of a two-pump cascade; absent for a single pump.
    pub first_pump_nm: Option<f64>,
    pub bands: Vec<GainBand>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PplnSection {
    pub converter: ConverterModel,
    pub min_pump_mw: f64,
    pub max_pump_mw: f64,
    pub points: usize,
    pub temperature_c: f64,
    /// Pump-wavelength span of the phase-matching sweep, centred on the peak.
    pub span_nm: f64,
    pub transfer_points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HbtSection {
    pub chain: PhotonChain,
    pub analysis: CorrelationSettings,
    pub duration_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HomSection {
    pub setup: HomSetup,
    pub polarization_overlap: f64,
    pub duration_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SnrSection {
    pub chain: PhotonChain,
    pub gate_ns: f64,
    pub duration_s: f64,
    pub histogram_bin_ns: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReadoutSection {
    pub trials: u64,
    pub histogram_shots: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransferSection {
    pub trials_per_state: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkrunSection {
    pub duration_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub output_dir: String,
    pub plan: PlanSection,
    pub ppln: PplnSection,
    pub hbt: HbtSection,
    pub hom: HomSection,
    pub snr: SnrSection,
    pub spin: SpinCavityModel,
    pub readout: ReadoutSection,
    pub transfer: TransferSection,
    pub link: LinkConfig,
    pub linkrun: LinkrunSection,
}

const SNR: f64 = 14.5;

impl ExperimentConfig {
    /// The "paper-defaults" preset.
    pub fn paper_defaults() -> Self {
        let hbt_chain = PhotonChain::background_limited_emitter(SNR).expect("preset is feasible");
        let hbt_analysis = CorrelationSettings::new(hbt_chain.source.trigger_period_ns(), hbt_chain.source.window_ns);
        // One detector sees all the light, so it needs twice the dark rate.
        let mut snr_chain = hbt_chain.clone();
        snr_chain.detector.dark_rate_hz = 2.0 * dark_rate_for_snr(&hbt_chain, SNR, 75.0).expect("preset is feasible");
        Self {
            seed: 0,
            output_dir: "qlink-out".into(),
            plan: PlanSection {
                memory_nm: 737.0,
                target_nm: 1350.0,
                first_pump_nm: None,
                bands: default_gain_bands(),
            },
            ppln: PplnSection {
                converter: ConverterModel::downconversion(),
                min_pump_mw: 0.0,
                max_pump_mw: 300.0,
                points: 301,
                temperature_c: 61.0,
                span_nm: 4.0,
                transfer_points: 801,
            },
            hbt: HbtSection {
                chain: hbt_chain,
                analysis: hbt_analysis,
                duration_s: 1.5,
            },
            hom: HomSection {
                setup: HomSetup::background_limited(SNR).expect("preset is feasible"),
                polarization_overlap: 1.0,
                duration_s: 1.5,
            },
            snr: SnrSection {
                chain: snr_chain,
                gate_ns: 75.0,
                duration_s: 1.0,
                histogram_bin_ns: 2.0,
            },
            spin: SpinCavityModel::default(),
            readout: ReadoutSection {
                trials: 1_000_000,
                histogram_shots: 100_000,
            },
            transfer: TransferSection {
                trials_per_state: 100_000,
            },
            link: LinkConfig::default(),
            linkrun: LinkrunSection { duration_s: 60.0 },
        }
    }

    /// SHA-256 of the resolved model sections. The seed and output directory
    /// are reported separately and do not enter the hash.
    pub fn hash(&self) -> String {
        let mut value = serde_json::to_value(self).expect("config serializes");
        if let Some(obj) = value.as_object_mut() {
            obj.remove("seed");
            obj.remove("output_dir");
        }
        let digest = Sha256::digest(value.to_string().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Parses `text` over the preset and validates every section.
pub fn load_str(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let user: Table = text.parse().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
    let preset = match Value::try_from(ExperimentConfig::paper_defaults()) {
        Ok(Value::Table(t)) => t,
        _ => unreachable!("preset serializes to a table"),
    };
    let mut merged = preset.clone();
    for (key, value) in user {
        match (merged.get_mut(&key), value) {
            (Some(Value::Table(base)), Value::Table(over)) => merge(base, over),
            (Some(slot), value) => *slot = value,
            (None, _) => {
                return Err(ConfigError::UnknownKey {
                    section: key.clone(),
                    line: find_line(text, &key, None),
                    message: format!("unknown top-level key `{key}`"),
                })
            }
        }
    }

    let take = |name: &str| merged.get(name).cloned().expect("preset has every section");
    let config = ExperimentConfig {
        seed: scalar(text, take("seed"), "seed")?,
        output_dir: scalar(text, take("output_dir"), "output_dir")?,
        plan: section(text, take("plan"), "plan")?,
        ppln: section(text, take("ppln"), "ppln")?,
        hbt: section(text, take("hbt"), "hbt")?,
        hom: section(text, take("hom"), "hom")?,
        snr: section(text, take("snr"), "snr")?,
        spin: section(text, take("spin"), "spin")?,
        readout: section(text, take("readout"), "readout")?,
        transfer: section(text, take("transfer"), "transfer")?,
        link: section(text, take("link"), "link")?,
        linkrun: section(text, take("linkrun"), "linkrun")?,
    };
    validate(&config, text)?;
    Ok(config)
}

pub fn load(path: &str) -> Result<ExperimentConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_string(),
        source,
    })?;
    load_str(&text)
}

/// Recursive key-by-key override. A table whose `kind` tag changes replaces
/// the preset table outright, since the variants carry different fields.
fn merge(base: &mut Table, over: Table) {
    let retagged = matches!((base.get("kind"), over.get("kind")), (Some(a), Some(b)) if a != b);
    if retagged {
        *base = over;
        return;
    }
    for (key, value) in over {
        match (base.get_mut(&key), value) {
            (Some(Value::Table(b)), Value::Table(o)) => merge(b, o),
            (_, value) => {
                base.insert(key, value);
            }
        }
    }
}

fn section<T: DeserializeOwned>(text: &str, value: Value, name: &str) -> Result<T, ConfigError> {
    value.try_into().map_err(|e: toml::de::Error| {
        let message = e.message().to_string();
        let field = message.split('`').nth(1).map(str::to_string);
        let line = find_line(text, name, field.as_deref());
        if message.starts_with("unknown field") {
            ConfigError::UnknownKey {
                section: name.to_string(),
                line,
                message,
            }
        } else {
            ConfigError::Invalid {
                section: name.to_string(),
                line,
                message,
            }
        }
    })
}

fn scalar<T: DeserializeOwned>(text: &str, value: Value, name: &str) -> Result<T, ConfigError> {
    value.try_into().map_err(|e: toml::de::Error| ConfigError::Invalid {
        section: name.to_string(),
        line: find_line(text, name, None),
        message: e.message().to_string(),
    })
}

/// 1-based line of `key` inside `[section...]`, or of the section header, or
/// of a top-level `section = ...` assignment.
fn find_line(text: &str, section: &str, key: Option<&str>) -> Option<usize> {
    let mut in_section = false;
    let mut header = None;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if let Some(h) = line.strip_prefix('[') {
            let name = h.trim_start_matches('[').trim_end_matches(']').trim();
            in_section = name == section || name.starts_with(&format!("{section}."));
            if in_section && header.is_none() {
                header = Some(i + 1);
            }
            continue;
        }
        let assigned = line.split('=').next().map(str::trim);
        if header.is_none() && !in_section && assigned == Some(section) {
            return Some(i + 1);
        }
        if in_section {
            if let (Some(k), Some(a)) = (key, assigned) {
                if a == k || a.ends_with(&format!(".{k}")) {
                    return Some(i + 1);
                }
            }
        }
    }
    header
}

fn invalid(text: &str, section: &str, err: impl std::fmt::Display) -> ConfigError {
    let message = err.to_string();
    let field = message.split('`').nth(1).map(str::to_string);
    ConfigError::Invalid {
        section: section.to_string(),
        line: find_line(text, section, field.as_deref()),
        message,
    }
}

fn check(text: &str, section: &str, ok: bool, message: &str) -> Result<(), ConfigError> {
    if ok {
        Ok(())
    } else {
        Err(invalid(text, section, message))
    }
}

fn validate(c: &ExperimentConfig, text: &str) -> Result<(), ConfigError> {
    let e = |s: &'static str| move |err: qlink::Error| invalid(text, s, err);

    Wavelength::new(c.plan.memory_nm).map_err(e("plan"))?;
    Wavelength::new(c.plan.target_nm).map_err(e("plan"))?;
    if let Some(p) = c.plan.first_pump_nm {
        Wavelength::new(p).map_err(e("plan"))?;
    }
    check(text, "plan", !c.plan.bands.is_empty(), "`bands` must not be empty")?;
    for b in &c.plan.bands {
        b.validate().map_err(e("plan"))?;
    }

    c.ppln.converter.validate().map_err(e("ppln"))?;
    check(
        text,
        "ppln",
        c.ppln.min_pump_mw >= 0.0 && c.ppln.max_pump_mw > c.ppln.min_pump_mw,
        "need 0 <= `min_pump_mw` < `max_pump_mw`",
    )?;
    check(text, "ppln", c.ppln.points >= 2, "`points` must be >= 2")?;
    check(text, "ppln", c.ppln.transfer_points >= 3, "`transfer_points` must be >= 3")?;
    check(text, "ppln", c.ppln.span_nm > 0.0, "`span_nm` must be > 0")?;

    c.hbt.chain.validate().map_err(e("hbt"))?;
    c.hbt.analysis.validate().map_err(e("hbt"))?;
    check(text, "hbt", c.hbt.duration_s > 0.0, "`duration_s` must be > 0")?;

    c.hom.setup.validate().map_err(e("hom"))?;
    check(
        text,
        "hom",
        (0.0..=1.0).contains(&c.hom.polarization_overlap),
        "`polarization_overlap` must be in [0, 1]",
    )?;
    check(text, "hom", c.hom.duration_s > 0.0, "`duration_s` must be > 0")?;

    c.snr.chain.validate().map_err(e("snr"))?;
    check(text, "snr", c.snr.duration_s > 0.0, "`duration_s` must be > 0")?;
    check(
        text,
        "snr",
        c.snr.gate_ns > 0.0 && c.snr.gate_ns < c.snr.chain.source.trigger_period_ns(),
        "`gate_ns` must lie inside the trigger period",
    )?;
    check(text, "snr", c.snr.histogram_bin_ns > 0.0, "`histogram_bin_ns` must be > 0")?;

    c.spin.validate().map_err(e("spin"))?;
    check(text, "readout", c.readout.trials > 0, "`trials` must be > 0")?;
    check(text, "readout", c.readout.histogram_shots > 0, "`histogram_shots` must be > 0")?;
    check(text, "transfer", c.transfer.trials_per_state >= 100, "`trials_per_state` must be >= 100")?;

    c.link.validate_with(&c.spin).map_err(e("link"))?;
    check(text, "linkrun", c.linkrun.duration_s >= 0.0, "`duration_s` must be >= 0")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_preset() {
        let c = load_str("").unwrap();
        assert_eq!(c, ExperimentConfig::paper_defaults());
    }

    #[test]
    fn preset_round_trips_through_toml() {
        let text = toml::to_string(&ExperimentConfig::paper_defaults()).unwrap();
        assert_eq!(load_str(&text).unwrap(), ExperimentConfig::paper_defaults());
    }

    #[test]
    fn partial_override() {
        let c = load_str("seed = 9\n[ppln.converter]\neta_int = 0.5\n").unwrap();
        assert_eq!(c.seed, 9);
        assert_eq!(c.ppln.converter.eta_int, 0.5);
        assert_eq!(c.ppln.converter.eta_opt, ConverterModel::downconversion().eta_opt);
    }

    #[test]
    fn bad_efficiency_names_invariant() {
        let err = load_str("[ppln.converter]\neta_opt = 1.2\n").unwrap_err();
        assert_eq!(err.kind(), "invalid");
        assert_eq!(err.section(), Some("ppln"));
        assert_eq!(err.line(), Some(2));
        assert!(err.to_string().contains("eta_opt"), "{err}");
    }

    #[test]
    fn unknown_keys_rejected() {
        let err = load_str("[spin]\nlambda_up = 40.0\nlamda_down = 3.0\n").unwrap_err();
        assert_eq!(err.kind(), "unknown_key");
        assert_eq!(err.line(), Some(3));
        let err = load_str("bogus = 1\n").unwrap_err();
        assert_eq!(err.kind(), "unknown_key");
        assert_eq!(err.line(), Some(1));
        let err = load_str("[nothing]\n").unwrap_err();
        assert_eq!(err.section(), Some("nothing"));
    }

    #[test]
    fn parse_error_has_line() {
        let err = load_str("seed = \n").unwrap_err();
        assert_eq!(err.kind(), "parse");
        assert!(err.to_string().contains("line 1"), "{err}");
    }

    #[test]
    fn variant_switch_replaces_table() {
        let c = load_str("[ppln.converter.noise]\nkind = \"quadratic\"\ncoeff_hz_per_mw2 = 0.1\n").unwrap();
        assert_eq!(
            c.ppln.converter.noise,
            qlink::converter::NoiseModel::Quadratic { coeff_hz_per_mw2: 0.1 }
        );
    }

    #[test]
    fn hash_ignores_seed_and_output() {
        let a = load_str("").unwrap();
        let b = load_str("seed = 4\noutput_dir = \"x\"\n").unwrap();
        let c = load_str("[readout]\ntrials = 5\n").unwrap();
        assert_eq!(a.hash(), b.hash());
        assert_ne!(a.hash(), c.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn default_efficiency_at_130_mw() {
        let c = load_str("").unwrap();
        let eta = qlink::converter::external_efficiency(&c.ppln.converter, 130.0).unwrap();
        assert!((eta - 0.122).abs() < 0.005, "{eta}");
    }
}
