//! Per-step training records: the source for every curve and acceptance
//! check.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub step: u64,
    pub phase: String,
    pub queries_used: u64,
    pub loss_g: Option<f64>,
    pub loss_d: Option<f64>,
    pub loss_c: Option<f64>,
    pub clone_accuracy: Option<f64>,
    pub hist_entropy: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingHistory {
    pub rows: Vec<HistoryRow>,
}

impl TrainingHistory {
    pub fn push(&mut self, row: HistoryRow) -> Result<()> {
        if let Some(last) = self.rows.last() {
            if row.queries_used < last.queries_used {
                return Err(Error::validation(format!(
                    "queries_used must be nondecreasing ({} after {})",
                    row.queries_used, last.queries_used
                )));
            }
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn final_queries(&self) -> u64 {
        self.rows.last().map(|r| r.queries_used).unwrap_or(0)
    }

    /// Best checkpoint accuracy with the query count where it was reached.
    pub fn best_accuracy(&self) -> Option<(f64, u64)> {
        let mut best: Option<(f64, u64)> = None;
        for r in &self.rows {
            if let Some(acc) = r.clone_accuracy {
                if best.map(|(b, _)| acc > b).unwrap_or(true) {
                    best = Some((acc, r.queries_used));
                }
            }
        }
        best
    }

    pub fn last_entropy(&self) -> Option<f64> {
        self.rows.iter().rev().find_map(|r| r.hist_entropy)
    }

    /// Parses the CSV written by [`Self::to_csv`].
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut rows = Vec::new();
        let mut lines = text.lines();
        let header = lines.next().unwrap_or("");
        if !header.starts_with("step,phase,queries_used") {
            return Err(Error::validation("unrecognized history csv header"));
        }
        for (n, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.split(',').collect();
            if parts.len() != 8 {
                return Err(Error::validation(format!(
                    "history csv line {}: expected 8 fields",
                    n + 2
                )));
            }
            let opt = |s: &str| -> Result<Option<f64>> {
                if s.is_empty() {
                    Ok(None)
                } else {
                    s.parse()
                        .map(Some)
                        .map_err(|_| Error::validation(format!("bad number `{s}`")))
                }
            };
            rows.push(HistoryRow {
                step: parts[0]
                    .parse()
                    .map_err(|_| Error::validation("bad step"))?,
                phase: parts[1].to_string(),
                queries_used: parts[2]
                    .parse()
                    .map_err(|_| Error::validation("bad queries_used"))?,
                loss_g: opt(parts[3])?,
                loss_d: opt(parts[4])?,
                loss_c: opt(parts[5])?,
                clone_accuracy: opt(parts[6])?,
                hist_entropy: opt(parts[7])?,
            });
        }
        Ok(TrainingHistory { rows })
    }

    /// Full CSV dump: one line per step.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "step,phase,queries_used,loss_g,loss_d,loss_c,clone_accuracy,hist_entropy\n",
        );
        let fmt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                r.step,
                r.phase,
                r.queries_used,
                fmt(r.loss_g),
                fmt(r.loss_d),
                fmt(r.loss_c),
                fmt(r.clone_accuracy),
                fmt(r.hist_entropy),
            ));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(step: u64, q: u64) -> HistoryRow {
        HistoryRow {
            step,
            phase: "t".into(),
            queries_used: q,
            loss_g: None,
            loss_d: None,
            loss_c: None,
            clone_accuracy: None,
            hist_entropy: None,
        }
    }

    #[test]
    fn monotone_queries_enforced() {
        let mut h = TrainingHistory::default();
        h.push(row(0, 10)).unwrap();
        h.push(row(1, 10)).unwrap();
        assert!(h.push(row(2, 9)).is_err());
    }

    #[test]
    fn best_accuracy_tracks_maximum() {
        let mut h = TrainingHistory::default();
        let mut r = row(0, 100);
        r.clone_accuracy = Some(0.4);
        h.push(r).unwrap();
        let mut r = row(1, 200);
        r.clone_accuracy = Some(0.7);
        h.push(r).unwrap();
        let mut r = row(2, 300);
        r.clone_accuracy = Some(0.6);
        h.push(r).unwrap();
        assert_eq!(h.best_accuracy(), Some((0.7, 200)));
    }
}
