use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::records::{LoanMonthRecord, YearMonth};
use crate::error::{Error, Result};

/// One loan's monthly history in chronological order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoanSequence {
    pub loan_id: String,
    /// Origination cohort used for out-of-time splits.
    pub cohort_year: u16,
    pub months: Vec<LoanMonthRecord>,
}

impl LoanSequence {
    pub fn len(&self) -> usize {
        self.months.len()
    }

    pub fn is_empty(&self) -> bool {
        self.months.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct AssembleOptions {
    /// Drop every month after the first non-numeric delinquency status.
    pub truncate_after_non_numeric: bool,
}

impl Default for AssembleOptions {
    fn default() -> Self {
        Self { truncate_after_non_numeric: true }
    }
}

/// Cohort year from loan ids of the form `F19Q1...`; otherwise `None`.
pub fn cohort_from_loan_id(id: &str) -> Option<u16> {
    let b = id.as_bytes();
    if b.len() >= 4 && b[0].is_ascii_alphabetic() && b[1].is_ascii_digit() && b[2].is_ascii_digit() && b[3] == b'Q' {
        Some(2000 + ((b[1] - b'0') * 10 + (b[2] - b'0')) as u16)
    } else {
        None
    }
}

/// Groups records by loan in order of first appearance. Within a loan,
/// months are ordered by descending remaining term, ties broken by
/// ascending period. Exact duplicates are dropped; conflicting duplicates
/// of a `(loan_id, period)` pair are an error.
pub fn assemble_sequences(records: Vec<LoanMonthRecord>, opts: AssembleOptions) -> Result<Vec<LoanSequence>> {
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut groups: Vec<Vec<LoanMonthRecord>> = Vec::new();
    for r in records {
        let slot = *index.entry(r.loan_id.clone()).or_insert_with(|| {
            groups.push(Vec::new());
            groups.len() - 1
        });
        groups[slot].push(r);
    }
    let mut conflicts = Vec::new();
    let mut out = Vec::with_capacity(groups.len());
    for mut months in groups {
        months.sort_by(|a, b| {
            b.remaining_months_to_maturity.cmp(&a.remaining_months_to_maturity).then(a.period.cmp(&b.period))
        });
        let mut deduped: Vec<LoanMonthRecord> = Vec::with_capacity(months.len());
        let mut seen: HashMap<YearMonth, usize> = HashMap::with_capacity(months.len());
        let mut conflict = false;
        for m in months {
            match seen.get(&m.period) {
                Some(&i) if deduped[i] == m => {}
                Some(_) => conflict = true,
                None => {
                    seen.insert(m.period, deduped.len());
                    deduped.push(m);
                }
            }
        }
        let loan_id = deduped[0].loan_id.clone();
        if conflict {
            conflicts.push(loan_id);
            continue;
        }
        if opts.truncate_after_non_numeric {
            if let Some(pos) = deduped.iter().position(|m| !m.clds.is_numeric()) {
                deduped.truncate(pos + 1);
            }
        }
        let cohort_year = cohort_from_loan_id(&loan_id).unwrap_or(deduped[0].period.year);
        out.push(LoanSequence { loan_id, cohort_year, months: deduped });
    }
    if !conflicts.is_empty() {
        return Err(Error::Data(format!("conflicting duplicate months for loans: {}", conflicts.join(", "))));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::records::Clds;

    fn rec(id: &str, ym: (u16, u8), remaining: i32, clds: Clds) -> LoanMonthRecord {
        LoanMonthRecord {
            loan_id: id.into(),
            period: YearMonth::new(ym.0, ym.1).unwrap(),
            clds,
            current_actual_upb: 1000.0,
            current_deferred_upb: 0.0,
            current_interest_rate: 4.0,
            estimated_ltv: Some(80.0),
            interest_bearing_upb: Some(1000.0),
            assistance_status_code: None,
            remaining_months_to_maturity: remaining,
        }
    }

    #[test]
    fn groups_and_sorts() {
        let recs = vec![
            rec("F19Q1B", (2019, 3), 358, Clds::Months(0)),
            rec("F19Q1A", (2019, 2), 359, Clds::Months(0)),
            rec("F19Q1B", (2019, 1), 360, Clds::Months(0)),
            rec("F19Q1A", (2019, 1), 360, Clds::Months(0)),
            rec("F19Q1B", (2019, 2), 359, Clds::Months(0)),
        ];
        let seqs = assemble_sequences(recs, AssembleOptions::default()).unwrap();
        assert_eq!(seqs.len(), 2);
        assert_eq!(seqs[0].loan_id, "F19Q1B");
        let months: Vec<u8> = seqs[0].months.iter().map(|m| m.period.month).collect();
        assert_eq!(months, vec![1, 2, 3]);
        assert_eq!(seqs[1].len(), 2);
        assert_eq!(seqs[0].cohort_year, 2019);
    }

    #[test]
    fn remaining_term_tie_falls_back_to_period() {
        // a modification can leave the remaining term unchanged between months
        let recs = vec![
            rec("X", (2020, 5), 300, Clds::Months(0)),
            rec("X", (2020, 4), 300, Clds::Months(0)),
            rec("X", (2020, 3), 301, Clds::Months(0)),
        ];
        let seq = &assemble_sequences(recs, AssembleOptions::default()).unwrap()[0];
        let months: Vec<u8> = seq.months.iter().map(|m| m.period.month).collect();
        assert_eq!(months, vec![3, 4, 5]);
        assert_eq!(seq.cohort_year, 2020);
    }

    #[test]
    fn duplicates() {
        let a = rec("X", (2020, 1), 300, Clds::Months(0));
        let seqs = assemble_sequences(vec![a.clone(), a.clone()], AssembleOptions::default()).unwrap();
        assert_eq!(seqs[0].len(), 1);
        let mut b = a.clone();
        b.current_actual_upb = 5.0;
        let err = assemble_sequences(vec![a, b], AssembleOptions::default()).unwrap_err();
        assert!(err.to_string().contains('X'));
    }

    #[test]
    fn truncates_after_disposition_code() {
        let recs = vec![
            rec("X", (2020, 1), 300, Clds::Months(2)),
            rec("X", (2020, 2), 299, Clds::Code("RA".into())),
            rec("X", (2020, 3), 298, Clds::Months(0)),
        ];
        assert_eq!(assemble_sequences(recs.clone(), AssembleOptions::default()).unwrap()[0].len(), 2);
        let keep = AssembleOptions { truncate_after_non_numeric: false };
        assert_eq!(assemble_sequences(recs, keep).unwrap()[0].len(), 3);
    }

    #[test]
    fn cohort_parsing() {
        assert_eq!(cohort_from_loan_id("F18Q10012345"), Some(2018));
        assert_eq!(cohort_from_loan_id("loan-1"), None);
    }
}
