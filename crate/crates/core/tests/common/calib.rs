//! Calibration recovery over many synthetic worlds, shared by the
//! acceptance run and the trends invariants.

use std::sync::atomic::{AtomicUsize, Ordering};

use fcattention::attention::profile_from_series;
use fcattention::net::RetryPolicy;
use fcattention::synthprov::{generate_world, SimulatedTrendsProvider, SplitMix64, SynthConfig, SynthWorld, DEFAULT_COUNTRIES};
use fcattention::trendscal::{
    build_anchor_bank, calibrate, AnchorBank, Calibration, CalibrationConfig, Period, RawGroupResponse, TrendsError,
    TrendsProvider,
};
use rayon::prelude::*;

/// Simulated provider that checks every response against the group contract.
pub struct Validating {
    pub inner: SimulatedTrendsProvider,
    pub calls: AtomicUsize,
    pub invalid: AtomicUsize,
}

impl Validating {
    pub fn new(world: SynthWorld) -> Self {
        Validating { inner: SimulatedTrendsProvider::new(world), calls: AtomicUsize::new(0), invalid: AtomicUsize::new(0) }
    }
}

impl TrendsProvider for Validating {
    fn fetch_group(&self, queries: &[String], country: &str, period: &Period) -> Result<RawGroupResponse, TrendsError> {
        let r = self.inner.fetch_group(queries, country, period)?;
        self.calls.fetch_add(1, Ordering::Relaxed);
        if r.validate(queries).is_err() {
            self.invalid.fetch_add(1, Ordering::Relaxed);
        }
        Ok(r)
    }
}

pub fn cal_config() -> CalibrationConfig {
    CalibrationConfig { lo_band: 10, retry: RetryPolicy::no_wait(1) }
}

/// Pairs whose calibration chain is short and whose co-query values stay in
/// the informative range.
pub fn is_tight(chain_len: usize, min_co_value: u32) -> bool {
    chain_len <= 4 && min_co_value >= 20
}

/// One calibrated pair.
#[derive(Debug, Clone, Copy)]
pub struct PairStat {
    pub chain_len: usize,
    pub min_co_value: u32,
    pub bound: f64,
    pub truth_total: f64,
    pub total: f64,
    /// Error of the series scale alone: summed estimate over summed truth, minus one.
    pub scale_error: f64,
}

impl PairStat {
    pub fn total_error(&self) -> f64 {
        if self.truth_total == 0.0 {
            if self.total == 0.0 { 0.0 } else { f64::INFINITY }
        } else {
            (self.total / self.truth_total - 1.0).abs()
        }
    }
}

#[derive(Debug, Default, Clone)]
pub struct Recovery {
    pub worlds: u64,
    pub bank_failures: usize,
    pub pairs: usize,
    pub no_signal: usize,
    /// Weeks whose true value falls outside the calibrated value bounds.
    pub week_violations: usize,
    /// Pairs whose true total falls outside the profile's total bounds.
    pub total_violations: usize,
    pub tight_pairs: usize,
    pub worst_tight_bound: f64,
    pub worst_tight_peak_error: f64,
    pub scale_checked: usize,
    pub scale_mismatches: usize,
    pub responses: usize,
    pub invalid_responses: usize,
    pub detail: Vec<PairStat>,
}

fn world_for(base: &SynthConfig, seed: u64) -> SynthWorld {
    let country = DEFAULT_COUNTRIES[(seed % DEFAULT_COUNTRIES.len() as u64) as usize];
    let cfg = SynthConfig { countries: vec![country.to_string()], n_entities: 8, ..base.clone() };
    generate_world(&cfg, seed).expect("valid config")
}

fn calibrate_all(p: &dyn TrendsProvider, w: &SynthWorld) -> Result<(AnchorBank, Vec<Calibration>), TrendsError> {
    let country = &w.countries[0];
    let cfg = cal_config();
    let bank = build_anchor_bank(p, &w.anchor_candidates(), country, &w.period, &cfg)?;
    let mut out = vec![calibrate(p, &bank, &w.reference.entity_id, country, &w.period, &cfg)?];
    for e in &w.entities {
        out.push(calibrate(p, &bank, &e.entity_id, country, &w.period, &cfg)?);
    }
    Ok((bank, out))
}

fn one_world(base: &SynthConfig, seed: u64) -> Recovery {
    let mut r = Recovery { worlds: 1, ..Recovery::default() };
    let w = world_for(base, seed);
    let country = w.countries[0].clone();
    let p = Validating::new(w.clone());
    let (bank, cals) = match calibrate_all(&p, &w) {
        Ok(x) => x,
        Err(_) => {
            r.bank_failures += 1;
            return r;
        }
    };
    let Calibration::Series(reference) = &cals[0] else {
        r.bank_failures += 1;
        return r;
    };
    for (e, cal) in w.entities.iter().zip(&cals[1..]) {
        let Calibration::Series(s) = cal else {
            r.no_signal += 1;
            continue;
        };
        r.pairs += 1;
        let truth = w.reference_units(&country, &e.entity_id).expect("known pair");
        for (k, t) in truth.iter().enumerate() {
            let (lo, hi) = s.value_bounds(k);
            if *t < lo * (1.0 - 1e-12) || *t > hi * (1.0 + 1e-12) {
                r.week_violations += 1;
            }
        }
        let prof = profile_from_series(e, "c", s, reference, &w.years(), Vec::new()).expect("valid").expect("covered");
        let gt = w.ground_truth_total(&e.entity_id, &country).expect("known pair");
        if gt < prof.total_bounds.0 * (1.0 - 1e-12) || gt > prof.total_bounds.1 * (1.0 + 1e-12) {
            r.total_violations += 1;
        }
        r.detail.push(PairStat {
            chain_len: s.chain_len,
            min_co_value: s.min_co_value,
            bound: s.error_bound.relative(),
            truth_total: gt,
            total: prof.total,
            scale_error: s.values.iter().sum::<f64>() / truth.iter().sum::<f64>() - 1.0,
        });
        if is_tight(s.chain_len, s.min_co_value) {
            r.tight_pairs += 1;
            r.worst_tight_bound = r.worst_tight_bound.max(s.error_bound.relative());
            let true_peak = truth.iter().copied().fold(0.0, f64::max);
            let peak = s.values.iter().copied().fold(0.0, f64::max);
            r.worst_tight_peak_error = r.worst_tight_peak_error.max((peak / true_peak - 1.0).abs());
        }
    }
    // The same world with every true volume scaled must calibrate identically.
    let factor = 10f64.powf(SplitMix64::new(seed ^ 0x5ca1e).uniform(-3.0, 3.0));
    let scaled = Validating::new(w.scaled(factor));
    r.scale_checked += 1;
    match calibrate_all(&scaled, &w) {
        Ok((b2, c2)) if b2 == bank && c2 == cals => {}
        _ => r.scale_mismatches += 1,
    }
    r.responses = p.calls.load(Ordering::Relaxed) + scaled.calls.load(Ordering::Relaxed);
    r.invalid_responses = p.invalid.load(Ordering::Relaxed) + scaled.invalid.load(Ordering::Relaxed);
    r
}

/// Runs `worlds` single-country worlds with eight entities each.
pub fn calibration_recovery(worlds: u64) -> Recovery {
    calibration_recovery_with(worlds, &SynthConfig::default())
}

/// As [`calibration_recovery`], with every world built from `base`.
pub fn calibration_recovery_with(worlds: u64, base: &SynthConfig) -> Recovery {
    let parts: Vec<Recovery> = (0..worlds).into_par_iter().map(|s| one_world(base, s)).collect();
    let mut a = Recovery::default();
    for b in parts {
        a.worlds += b.worlds;
        a.bank_failures += b.bank_failures;
        a.pairs += b.pairs;
        a.no_signal += b.no_signal;
        a.week_violations += b.week_violations;
        a.total_violations += b.total_violations;
        a.tight_pairs += b.tight_pairs;
        a.worst_tight_bound = a.worst_tight_bound.max(b.worst_tight_bound);
        a.worst_tight_peak_error = a.worst_tight_peak_error.max(b.worst_tight_peak_error);
        a.scale_checked += b.scale_checked;
        a.scale_mismatches += b.scale_mismatches;
        a.responses += b.responses;
        a.invalid_responses += b.invalid_responses;
        a.detail.extend(b.detail);
    }
    a
}

impl Recovery {
    /// One-line digest without the per-pair detail.
    pub fn summary(&self) -> String {
        format!(
            "worlds={} bank_failures={} pairs={} no_signal={} week_violations={} total_violations={} tight={} \
             worst_tight_bound={:.4} worst_tight_peak_err={:.4} \
             scale_mismatches={}/{} invalid_responses={}/{}",
            self.worlds,
            self.bank_failures,
            self.pairs,
            self.no_signal,
            self.week_violations,
            self.total_violations,
            self.tight_pairs,
            self.worst_tight_bound,
            self.worst_tight_peak_error,
            self.scale_mismatches,
            self.scale_checked,
            self.invalid_responses,
            self.responses,
        )
    }
}
