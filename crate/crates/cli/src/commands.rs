use serde_json::json;

use qlink::converter::{self, noise_spectral_density, optimal_pump_power, phase_match_transfer};
use qlink::link::{self, check_invariants};
use qlink::photonics::{self, background_limited_g2, split_gate_means, CorrelationResult};
use qlink::rng::derive_seed;
use qlink::spin::{self, TimeBinInput};
use qlink::tradespace::{self, Wavelength};
use qlink::Result;

use crate::config::ExperimentConfig;
use crate::output::{num, opt, Artifact};
use crate::Command;

pub fn run(command: Command, config: &ExperimentConfig) -> Result<Vec<Artifact>> {
    let seed = derive_seed(config.seed, command.name());
    match command {
        Command::Plan => plan(config),
        Command::Ppln => ppln(config),
        Command::Hbt => hbt(config, seed),
        Command::Hom => hom(config, seed),
        Command::Snr => snr(config, seed),
        Command::Readout => readout(config, seed),
        Command::Transfer => transfer(config, seed),
        Command::Linkrun => linkrun(config, seed),
    }
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

fn plan(config: &ExperimentConfig) -> Result<Vec<Artifact>> {
    let c = &config.plan;
    let memory = Wavelength::new(c.memory_nm)?;
    let target = Wavelength::new(c.target_nm)?;
    let scheme = match c.first_pump_nm {
        Some(p) => tradespace::plan_two_pump(memory, target, Some(Wavelength::new(p)?))?,
        None => tradespace::plan_single_pump(memory, target)?,
    };
    let hits = tradespace::feasible_pumps(&scheme, &c.bands)?;
    let rows = scheme
        .stages
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let bands: Vec<&str> = hits
                .iter()
                .filter(|h| h.pump_index == i)
                .map(|h| h.band.name.as_str())
                .collect();
            vec![
                i.to_string(),
                num(s.input_nm),
                num(s.output_nm),
                num(s.pump_nm),
                format!("{:?}", s.regime),
                num(s.separation_thz),
                s.low_noise.to_string(),
                bands.join(";"),
            ]
        })
        .collect();
    Ok(vec![
        Artifact::csv(
            "plan.csv",
            &[
                "stage",
                "input_nm",
                "output_nm",
                "pump_nm",
                "regime",
                "separation_thz",
                "low_noise",
                "gain_bands",
            ],
            rows,
        ),
        Artifact::json(
            "plan.json",
            json!({
                "scheme": scheme,
                "energy_residual_thz": tradespace::energy_residual(&scheme),
                "pump_band_hits": hits.iter().map(|h| json!({
                    "pump_index": h.pump_index,
                    "pump_nm": h.pump_nm,
                    "band": h.band.name,
                })).collect::<Vec<_>>(),
            }),
        ),
    ])
}

fn ppln(config: &ExperimentConfig) -> Result<Vec<Artifact>> {
    let c = &config.ppln;
    let model = &c.converter;
    let sweep = converter::power_sweep(model, &linspace(c.min_pump_mw, c.max_pump_mw, c.points))?;
    let best = sweep
        .iter()
        .max_by(|a, b| a.efficiency.total_cmp(&b.efficiency))
        .copied()
        .expect("sweep has >= 2 points");
    let p_opt = optimal_pump_power(model);
    let rho = if model.filters.noise_bandwidth_ghz() > 0.0 {
        Some(noise_spectral_density(model, p_opt)?)
    } else {
        None
    };

    let curve = &model.phase_match;
    let center = curve.peak_at(c.temperature_c);
    let pumps = linspace(center - 0.5 * c.span_nm, center + 0.5 * c.span_nm, c.transfer_points);
    let transfer = pumps
        .iter()
        .map(|&l| phase_match_transfer(curve, l, c.temperature_c))
        .collect::<Result<Vec<_>>>()?;
    let fwhm = converter::sampled_fwhm(&pumps, &transfer);

    Ok(vec![
        Artifact::csv(
            "ppln.csv",
            &["pump_mw", "efficiency", "noise_hz"],
            sweep
                .iter()
                .map(|p| vec![num(p.pump_mw), num(p.efficiency), num(p.noise_hz)])
                .collect(),
        ),
        Artifact::csv(
            "ppln_transfer.csv",
            &["pump_nm", "temp_c", "transfer"],
            pumps
                .iter()
                .zip(&transfer)
                .map(|(l, t)| vec![num(*l), num(c.temperature_c), num(*t)])
                .collect(),
        ),
        Artifact::json(
            "ppln.json",
            json!({
                "sweep_max": best,
                "optimal_pump_mw": p_opt,
                "max_efficiency": model.max_efficiency(),
                "noise_at_optimum_hz": converter::noise_rate(model, p_opt)?,
                "rho_hz_per_ghz": rho,
                "phase_match_peak_nm": center,
                "phase_match_fwhm_nm": fwhm,
            }),
        ),
    ])
}

fn histogram_csv(name: &str, r: &CorrelationResult) -> Artifact {
    Artifact::csv(
        name,
        &["delay_ns", "coincidences"],
        r.histogram
            .iter()
            .map(|b| vec![num(b.delay_ns), b.coincidences.to_string()])
            .collect(),
    )
}

fn correlation_json(r: &CorrelationResult) -> serde_json::Value {
    json!({
        "g2_zero": r.g2_zero,
        "g2_uncertainty": r.g2_uncertainty,
        "zero_delay_coincidences": r.zero_delay_coincidences,
        "normalization_coincidences": r.normalization_coincidences,
        "normalization_peaks": r.normalization_peaks,
        "low_confidence": r.low_confidence,
        "window_ns": r.window_ns,
        "peaks": r.peaks,
    })
}

fn hbt(config: &ExperimentConfig, seed: u64) -> Result<Vec<Artifact>> {
    let c = &config.hbt;
    let (a, b) = photonics::simulate_split(&c.chain, c.duration_s, seed)?;
    let r = photonics::correlate(&a, &b, &c.analysis)?;
    let (s, bg) = split_gate_means(&c.chain, &c.analysis);
    let mut summary = correlation_json(&r);
    summary["closed_form_g2"] = json!(background_limited_g2(s, bg));
    summary["signal_per_gate"] = json!(s);
    summary["background_per_gate"] = json!(bg);
    summary["triggers"] = json!((c.duration_s * c.chain.source.repetition_rate_hz).floor());
    Ok(vec![histogram_csv("hbt_histogram.csv", &r), Artifact::json("hbt.json", summary)])
}

fn hom(config: &ExperimentConfig, seed: u64) -> Result<Vec<Artifact>> {
    let c = &config.hom;
    let r = photonics::hom_visibility(&c.setup, c.polarization_overlap, c.duration_s, seed)?;
    let rows = r
        .parallel
        .histogram
        .iter()
        .zip(&r.perpendicular.histogram)
        .map(|(p, x)| vec![num(p.delay_ns), p.coincidences.to_string(), x.coincidences.to_string()])
        .collect();
    Ok(vec![
        Artifact::csv("hom_histogram.csv", &["delay_ns", "parallel", "perpendicular"], rows),
        Artifact::json(
            "hom.json",
            json!({
                "visibility": r.visibility,
                "uncertainty": r.uncertainty,
                "polarization_overlap": c.polarization_overlap,
                "parallel": correlation_json(&r.parallel),
                "perpendicular": correlation_json(&r.perpendicular),
            }),
        ),
    ])
}

fn snr(config: &ExperimentConfig, seed: u64) -> Result<Vec<Artifact>> {
    let c = &config.snr;
    let stream = photonics::simulate_stream(&c.chain, c.duration_s, seed)?;
    let period = c.chain.source.trigger_period_ns();
    let g = photonics::gated_snr(&stream, period, c.gate_ns)?;
    let bins = (period / c.histogram_bin_ns).ceil() as usize;
    let mut hist = vec![0u64; bins];
    let period_ps = period * 1e3;
    for e in stream.events() {
        let t = e.timestamp_ps as f64;
        let offset_ns = (t - (t / period_ps).floor() * period_ps) / 1e3;
        hist[((offset_ns / c.histogram_bin_ns) as usize).min(bins - 1)] += 1;
    }
    Ok(vec![
        Artifact::csv(
            "snr_arrivals.csv",
            &["time_ns", "events"],
            hist.iter()
                .enumerate()
                .map(|(i, n)| vec![num(i as f64 * c.histogram_bin_ns), n.to_string()])
                .collect(),
        ),
        Artifact::json(
            "snr.json",
            json!({
                "snr": g.snr,
                "in_gate_to_background": g.in_gate_to_background,
                "infinite": g.snr.is_none(),
                "in_gate_events": g.in_gate_events,
                "out_of_gate_events": g.out_of_gate_events,
                "gate_ns": c.gate_ns,
            }),
        ),
    ])
}

fn readout(config: &ExperimentConfig, seed: u64) -> Result<Vec<Artifact>> {
    let m = &config.spin;
    let analytic = spin::readout_error_analytic(m);
    let mc = spin::readout_error_monte_carlo(m, config.readout.trials, derive_seed(seed, "monte-carlo"));
    let hist = spin::readout_histogram(m, config.readout.histogram_shots, derive_seed(seed, "histogram"));
    Ok(vec![
        Artifact::csv(
            "readout_histogram.csv",
            &["counts", "up_frequency", "down_frequency", "up_pmf", "down_pmf"],
            hist.iter()
                .map(|r| {
                    vec![
                        r.counts.to_string(),
                        num(r.up_frequency),
                        num(r.down_frequency),
                        num(r.up_pmf),
                        num(r.down_pmf),
                    ]
                })
                .collect(),
        ),
        Artifact::json(
            "readout.json",
            json!({
                "threshold": m.threshold,
                "lambda_up": m.lambda_up,
                "lambda_down": m.lambda_down,
                "analytic": analytic,
                "monte_carlo": mc,
                "init_acceptance_down": spin::init_acceptance_probability(m, spin::SpinState::Down),
            }),
        ),
    ])
}

fn transfer(config: &ExperimentConfig, seed: u64) -> Result<Vec<Artifact>> {
    let m = &config.spin;
    let f = spin::transfer_fidelity(m, config.transfer.trials_per_state, seed)?;
    let rows = f
        .per_input
        .iter()
        .map(|t| {
            vec![
                format!("{:?}", t.input),
                format!("{:?}", t.input.basis()),
                t.trials.to_string(),
                t.heralds.to_string(),
                t.correct.to_string(),
                opt(t.fidelity),
                num(spin::transfer_correct_probability(m, t.input)),
            ]
        })
        .collect();
    let exact: Vec<_> = TimeBinInput::ALL
        .iter()
        .map(|&i| json!({ "input": i, "fidelity": spin::transfer_correct_probability(m, i) }))
        .collect();
    Ok(vec![
        Artifact::csv(
            "transfer.csv",
            &["input", "basis", "trials", "heralds", "correct", "fidelity", "exact"],
            rows,
        ),
        Artifact::json(
            "transfer.json",
            json!({
                "monte_carlo": f,
                "exact_fidelity": spin::transfer_fidelity_exact(m),
                "exact_per_input": exact,
                "herald_probability": spin::herald_probability(m),
                "sequence_fidelity": spin::sequence_fidelity(m, m.pi_pulses_per_transfer),
            }),
        ),
    ])
}

fn linkrun(config: &ExperimentConfig, seed: u64) -> Result<Vec<Artifact>> {
    let run = link::run_link(&config.link, &config.spin, config.linkrun.duration_s, seed)?;
    let summary = run.summary(&config.link);
    let violations = check_invariants(&run);
    let heralds = run
        .receiver
        .heralds
        .iter()
        .map(|h| {
            vec![
                h.period.to_string(),
                h.train.to_string(),
                h.qubit_index.to_string(),
                h.time_ps.to_string(),
                format!("{:?}", h.input),
                h.from_noise.to_string(),
                format!("{:?}", h.readout),
                h.correct.to_string(),
            ]
        })
        .collect();
    Ok(vec![
        Artifact::Jsonl {
            name: "trace.jsonl".into(),
            lines: run.trace.to_jsonl(),
        },
        Artifact::csv(
            "heralds.csv",
            &[
                "period",
                "train",
                "qubit_index",
                "time_ps",
                "input",
                "from_noise",
                "readout",
                "correct",
            ],
            heralds,
        ),
        Artifact::json(
            "linkrun.json",
            json!({
                "summary": summary,
                "detection_efficiency": config.link.detection_efficiency(&config.spin)?,
                "herald_probability_per_qubit": link::herald_probability_per_qubit(&config.link, &config.spin, 1.0)?,
                "invariant_violations": violations,
            }),
        ),
    ])
}
