//! Synthetic monthly performance histories with a tunable default signal.
//!
//! Every loan amortizes a fixed-rate 30-year balance. Healthy and defaulting
//! loans share the same noise: occasional single missed payments that are
//! caught up the next month, partial prepayments, and short forbearance
//! spells that resolve. A defaulting loan has a default month `D` (first
//! month 90+ days delinquent) drawn from `default_month_range` and an onset
//! `D − lead`. From the onset, with weight `signal_strength`, principal
//! payments shrink toward zero, unpaid interest accrues as deferred balance,
//! the LTV estimate drifts up and an assistance code appears. Delinquency
//! status reads 1 and 2 in the two months before `D`, then keeps climbing.
//! With `signal_strength = 0` the feature columns of both classes come from
//! the same distribution and only the delinquency status differs.

use serde::{Deserialize, Serialize};

use super::records::{Clds, LoanMonthRecord, YearMonth};
use super::sequence::LoanSequence;
use crate::error::{invalid, Result};
use crate::tensor::SeededRng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_loans: usize,
    /// Probability that a loan eventually defaults.
    pub default_rate: f64,
    /// Inclusive range of history lengths in months.
    pub seq_len_range: (usize, usize),
    /// 0 hides every pre-default trace from the features, 1 shows it fully.
    pub signal_strength: f64,
    pub seed: u64,
    pub cohort_year: u16,
    /// Shifts rate, LTV, balance and prepayment levels to mimic a later cohort.
    pub drift: f64,
    /// Inclusive range of the default month `D`.
    pub default_month_range: (usize, usize),
    /// Inclusive range of months between signal onset and `D`.
    pub onset_lead_range: (usize, usize),
    /// Chance that a defaulted history ends with a disposition code.
    pub disposition_prob: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_loans: 2000,
            default_rate: 0.3,
            seq_len_range: (12, 48),
            signal_strength: 1.0,
            seed: 0,
            cohort_year: 2019,
            drift: 0.0,
            default_month_range: (10, 30),
            onset_lead_range: (3, 10),
            disposition_prob: 0.3,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.default_rate > 0.0 && self.default_rate < 1.0) {
            return Err(invalid!("default_rate must lie in (0, 1), got {}", self.default_rate));
        }
        let ok_range = |r: (usize, usize)| r.0 <= r.1;
        if !ok_range(self.seq_len_range) || self.seq_len_range.0 == 0 {
            return Err(invalid!("bad seq_len_range {:?}", self.seq_len_range));
        }
        if !ok_range(self.default_month_range) || !ok_range(self.onset_lead_range) {
            return Err(invalid!("bad default month or onset lead range"));
        }
        if !(0.0..=1.0).contains(&self.signal_strength) || !(0.0..=1.0).contains(&self.disposition_prob) {
            return Err(invalid!("signal_strength and disposition_prob must lie in [0, 1]"));
        }
        Ok(())
    }
}

const TERM_MONTHS: i32 = 360;
const MISS_PROB: f64 = 0.01;
const PREPAY_FRACTION: f64 = 0.004;
const NOISE_SPELL_PROB: f64 = 0.03;
const ASSIST_PROB: f64 = 0.7;
const RAMP_MONTHS: f64 = 3.0;

struct DefaultPlan {
    month: usize,
    onset: usize,
    assistance: Option<(usize, &'static str)>,
    defers: bool,
}

/// Loans are generated from per-loan rng streams, so the first `k` loans do
/// not depend on `n_loans`.
pub fn synth_generate(cfg: &SynthConfig) -> Result<Vec<LoanSequence>> {
    cfg.validate()?;
    let root = SeededRng::new(cfg.seed);
    Ok((0..cfg.n_loans).map(|i| generate_loan(cfg, i, &mut root.derive(i as u64))).collect())
}

fn generate_loan(cfg: &SynthConfig, index: usize, rng: &mut SeededRng) -> LoanSequence {
    let s = cfg.signal_strength;
    let d = cfg.drift;
    let loan_id = format!("F{:02}Q1{:07}", cfg.cohort_year % 100, index);
    let upb0 = rng.uniform_range(80_000.0, 450_000.0) * (1.0 + 0.1 * d);
    let rate = rng.normal(4.0 + 0.5 * d, 0.6).clamp(2.0, 9.0);
    let ltv0 = (rng.uniform_range(55.0, 97.0) + 3.0 * d).min(105.0);
    let hpa = rng.normal(0.002, 0.001);
    let prepay_prob = (0.05 + 0.02 * d).clamp(0.0, 1.0);
    let age0 = rng.int_range(0, 3) as i32;
    let start = YearMonth { year: cfg.cohort_year, month: 1 + rng.int_range(0, 2) as u8 };
    let mut len = rng.int_range(cfg.seq_len_range.0, cfg.seq_len_range.1);

    let plan = rng.bernoulli(cfg.default_rate).then(|| {
        let month = rng.int_range(cfg.default_month_range.0, cfg.default_month_range.1);
        let lead = rng.int_range(cfg.onset_lead_range.0, cfg.onset_lead_range.1);
        let codes = ["F", "R", "T"];
        let assistance = rng
            .bernoulli(ASSIST_PROB * s)
            .then(|| (rng.int_range(0, 2), codes[rng.int_range(0, 2)]));
        DefaultPlan { month, onset: month.saturating_sub(lead), assistance, defers: rng.bernoulli(0.5 * s) }
    });
    let mut disposition_at = None;
    if let Some(p) = &plan {
        len = len.max(p.month + 1 + rng.int_range(0, 5));
        if rng.bernoulli(cfg.disposition_prob) {
            let at = p.month + rng.int_range(3, 8);
            len = len.min(at + 1).max(p.month + 1);
            disposition_at = Some(at).filter(|&a| a < len);
        }
    }
    let spell = rng.bernoulli(NOISE_SPELL_PROB).then(|| {
        // independent of the history length so both classes share the distribution
        let from = rng.int_range(0, cfg.seq_len_range.1 - 1);
        (from, from + rng.int_range(2, 4))
    });

    let r = rate / 1200.0;
    let remaining0 = TERM_MONTHS - age0;
    let payment = upb0 * r / (1.0 - (1.0 + r).powi(-remaining0));
    let (mut ib, mut deferred, mut ltv_drift) = (upb0, 0.0, 0.0);
    let mut catch_up = false;
    let mut months = Vec::with_capacity(len);
    for t in 0..len {
        let severity = plan.as_ref().map_or(0.0, |p| {
            if t + 2 >= p.month {
                s
            } else if t >= p.onset {
                s * ((t - p.onset + 1) as f64 / RAMP_MONTHS).min(1.0)
            } else {
                0.0
            }
        });
        let missed = rng.bernoulli(MISS_PROB);
        if t > 0 {
            let principal = (payment - ib * r).max(0.0).min(ib);
            let mut paid = if missed { 0.0 } else { principal * (1.0 - severity) };
            if catch_up && !missed {
                paid += principal * (1.0 - severity);
            }
            if rng.bernoulli(prepay_prob) {
                paid += rng.uniform_range(0.0, PREPAY_FRACTION) * ib * (1.0 - severity);
            }
            ib = (ib - paid).max(0.0);
            if plan.as_ref().is_some_and(|p| p.defers) {
                deferred += ib * r * severity;
            }
            ltv_drift += 0.5 * severity;
        }
        catch_up = missed;
        let ltv = ltv0 * (ib + deferred) / upb0 * (1.0 - hpa).powi(t as i32) + ltv_drift + rng.normal(0.0, 0.3);
        let mut assistance = spell.filter(|&(a, b)| t >= a && t < b).map(|_| "F");
        if let Some(DefaultPlan { onset, assistance: Some((delay, code)), .. }) = &plan {
            if t >= onset + delay {
                assistance = Some(code);
            }
        }
        let clds = match (&plan, disposition_at) {
            (_, Some(at)) if t == at => Clds::Code("RA".into()),
            (Some(p), _) if t >= p.month => Clds::Months(3 + (t - p.month) as u32),
            (Some(p), _) if t + 1 == p.month => Clds::Months(2),
            (Some(p), _) if t + 2 == p.month => Clds::Months(1),
            _ => Clds::Months(missed as u32),
        };
        months.push(LoanMonthRecord {
            loan_id: loan_id.clone(),
            period: start.plus_months(t as i64),
            clds,
            current_actual_upb: round_cents(ib + deferred),
            current_deferred_upb: round_cents(deferred),
            current_interest_rate: (rate * 1000.0).round() / 1000.0,
            estimated_ltv: Some(ltv.round().max(1.0)),
            interest_bearing_upb: Some(round_cents(ib)),
            assistance_status_code: assistance.map(str::to_string),
            remaining_months_to_maturity: remaining0 - t as i32,
        });
    }
    LoanSequence { loan_id, cohort_year: cfg.cohort_year, months }
}

fn round_cents(v: f64) -> f64 {
    (v * 100.0).round() / 100.0
}

/// Flattens sequences back into a record stream, loan by loan.
pub fn synth_records(seqs: &[LoanSequence]) -> Vec<LoanMonthRecord> {
    seqs.iter().flat_map(|s| s.months.iter().cloned()).collect()
}
