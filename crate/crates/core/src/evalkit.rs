//! Clone-quality metrics, diagnostic curve emission and the active-learning
//! query-bound calculator.

use std::path::Path;

use ndarray::{Array4, Axis};

use crate::attack::TrainingHistory;
use crate::data::LabeledImages;
use crate::error::{Error, Result};
use crate::nn::{generate_images_eval, Feature, Net};
use crate::oracle::{QueryLedger, VictimModel};
use crate::rng::Rng;
use crate::tensor::argmax_rows;

/// Label counts over generated samples, from either the clone (free) or the
/// victim (ledger-charged).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassHistogram {
    pub counts: Vec<u64>,
    pub source: HistogramSource,
    pub n: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HistogramSource {
    Victim,
    Clone,
}

impl ClassHistogram {
    /// Shannon entropy of the empirical distribution divided by `ln K`;
    /// 0 iff one class absorbs everything, 1 iff counts are exactly uniform.
    pub fn normalized_entropy(&self) -> f64 {
        let k = self.counts.len().max(1);
        if self.n == 0 || k < 2 {
            return 0.0;
        }
        let n = self.n as f64;
        let mut h = 0.0;
        for &c in &self.counts {
            if c > 0 {
                let p = c as f64 / n;
                h -= p * p.ln();
            }
        }
        h / (k as f64).ln()
    }
}

fn batched_argmax(net: &Net, images: &Array4<f32>, batch: usize) -> Result<Vec<usize>> {
    let n = images.dim().0;
    let mut out = Vec::with_capacity(n);
    let mut start = 0;
    while start < n {
        let end = (start + batch).min(n);
        let idx: Vec<usize> = (start..end).collect();
        let scores = net
            .forward_eval(Feature::Map(images.select(Axis(0), &idx)))?
            .into_flat()?;
        out.extend(argmax_rows(&scores.view()));
        start = end;
    }
    Ok(out)
}

/// Fraction of test images whose clone argmax matches the true label.
pub fn clone_accuracy(clone: &Net, test: &LabeledImages) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::validation("accuracy over an empty test set"));
    }
    if test.labels.iter().any(|&l| l >= test.num_classes) {
        return Err(Error::validation("test label out of range"));
    }
    let pred = batched_argmax(clone, &test.images, 256)?;
    let correct = pred
        .iter()
        .zip(test.labels.iter())
        .filter(|(p, l)| p == l)
        .count();
    Ok(correct as f64 / test.len() as f64)
}

/// Fraction of probe inputs on which clone and victim emit the same top-1
/// label (shared tie-break rule). No ledger charge: this is the
/// experimenter's metric, not an attack query.
pub fn agreement(clone: &Net, victim: &VictimModel, probe: &Array4<f32>) -> Result<f64> {
    if probe.dim().0 == 0 {
        return Err(Error::validation("agreement over an empty probe set"));
    }
    let (c, h, w) = (probe.dim().1, probe.dim().2, probe.dim().3);
    if (c, h, w) != victim.input_shape {
        return Err(Error::shape(format!(
            "probe {:?} vs victim input {:?}",
            (c, h, w),
            victim.input_shape
        )));
    }
    let a = batched_argmax(clone, probe, 256)?;
    let b = batched_argmax(&victim.net, probe, 256)?;
    let same = a.iter().zip(b.iter()).filter(|(x, y)| x == y).count();
    Ok(same as f64 / a.len() as f64)
}

/// Samples `n` images from the generator and counts labels from the chosen
/// scorer. Labeling by the clone is free; labeling by the victim goes
/// through the metered ledger.
pub fn class_histogram(
    generator: &Net,
    labeler_clone: Option<&Net>,
    labeler_victim: Option<(&VictimModel, &mut QueryLedger)>,
    num_classes: usize,
    n: usize,
    rng: &mut Rng,
) -> Result<ClassHistogram> {
    if n == 0 {
        return Err(Error::validation("histogram needs n > 0 samples"));
    }
    let mut counts = vec![0u64; num_classes];
    let (source, mut label_fn): (HistogramSource, Box<dyn FnMut(&Array4<f32>) -> Result<Vec<usize>>>) =
        match (labeler_clone, labeler_victim) {
            (Some(clone), None) => (
                HistogramSource::Clone,
                Box::new(move |imgs| batched_argmax(clone, imgs, 256)),
            ),
            (None, Some((victim, ledger))) => {
                let victim = victim;
                let ledger = ledger;
                (
                    HistogramSource::Victim,
                    Box::new(move |imgs| {
                        crate::oracle::hard_label_query(victim, imgs, ledger, "evaluation")
                    }),
                )
            }
            _ => {
                return Err(Error::validation(
                    "exactly one histogram labeler must be supplied",
                ))
            }
        };
    let mut remaining = n;
    while remaining > 0 {
        let b = remaining.min(256);
        let images = generate_images_eval(generator, b, rng)?;
        for label in label_fn(&images)? {
            if label >= num_classes {
                return Err(Error::validation("labeler emitted out-of-range class"));
            }
            counts[label] += 1;
        }
        remaining -= b;
    }
    Ok(ClassHistogram {
        counts,
        source,
        n: n as u64,
    })
}

/// Query bound for extraction against a label oracle that lies with
/// probability `rho < 1/2`: `(8 / (1 - 2 rho)^2) * q * ln(q / delta)`.
pub fn query_bound(q: f64, delta: f64, rho: f64) -> Result<f64> {
    if q < 1.0 {
        return Err(Error::validation("query bound needs q >= 1"));
    }
    if !(0.0 < delta && delta < 1.0) {
        return Err(Error::validation("query bound needs 0 < delta < 1"));
    }
    if !(0.0..0.5).contains(&rho) {
        return Err(Error::validation(
            "query bound needs 0 <= rho < 0.5 (diverges at 1/2)",
        ));
    }
    let front = 8.0 / (1.0 - 2.0 * rho).powi(2);
    Ok(front * q * (q / delta).ln())
}

/// Writes `curves.csv` (queries_used, clone_accuracy) and a cosmetic SVG
/// rendering. The CSV carries the contract; re-emitting the same history
/// yields identical bytes.
pub fn emit_curves(history: &TrainingHistory, out_dir: &Path) -> Result<()> {
    if history.rows.is_empty() {
        return Err(Error::validation("history is empty"));
    }
    std::fs::create_dir_all(out_dir)?;
    let points: Vec<(u64, f64)> = history
        .rows
        .iter()
        .filter_map(|r| r.clone_accuracy.map(|a| (r.queries_used, a)))
        .collect();
    let mut csv = String::from("queries_used,clone_accuracy\n");
    for (q, a) in &points {
        csv.push_str(&format!("{q},{a:.6}\n"));
    }
    std::fs::write(out_dir.join("curves.csv"), csv)?;
    if !points.is_empty() {
        let svg = line_plot_svg(
            &points
                .iter()
                .map(|&(q, a)| (q as f64, a))
                .collect::<Vec<_>>(),
            "queries",
            "accuracy",
        );
        std::fs::write(out_dir.join("curves.svg"), svg)?;
    }
    Ok(())
}

/// Writes `hist.csv` (class, count).
pub fn emit_histogram(hist: &ClassHistogram, out_dir: &Path) -> Result<()> {
    std::fs::create_dir_all(out_dir)?;
    let mut csv = String::from("class,count\n");
    for (class, count) in hist.counts.iter().enumerate() {
        csv.push_str(&format!("{class},{count}\n"));
    }
    std::fs::write(out_dir.join("hist.csv"), csv)?;
    Ok(())
}

/// Writes `sweep.csv` (lambda_div, accuracy) plus a cosmetic SVG.
pub fn emit_sweep(rows: &[(f64, f64)], out_dir: &Path) -> Result<()> {
    std::fs::create_dir_all(out_dir)?;
    let mut csv = String::from("lambda_div,accuracy\n");
    for (lambda, acc) in rows {
        csv.push_str(&format!("{lambda},{acc:.6}\n"));
    }
    std::fs::write(out_dir.join("sweep.csv"), csv)?;
    if !rows.is_empty() {
        let svg = line_plot_svg(rows, "lambda_div", "accuracy");
        std::fs::write(out_dir.join("sweep.svg"), svg)?;
    }
    Ok(())
}

/// Tiny dependency-free polyline chart; cosmetic only.
fn line_plot_svg(points: &[(f64, f64)], x_label: &str, y_label: &str) -> String {
    let (w, h, margin) = (640.0, 400.0, 48.0);
    let (x_min, x_max) = points
        .iter()
        .fold((f64::MAX, f64::MIN), |(lo, hi), p| (lo.min(p.0), hi.max(p.0)));
    let (y_min, y_max) = points
        .iter()
        .fold((f64::MAX, f64::MIN), |(lo, hi), p| (lo.min(p.1), hi.max(p.1)));
    let x_span = (x_max - x_min).max(1e-12);
    let y_span = (y_max - y_min).max(1e-12);
    let map = |p: &(f64, f64)| {
        (
            margin + (p.0 - x_min) / x_span * (w - 2.0 * margin),
            h - margin - (p.1 - y_min) / y_span * (h - 2.0 * margin),
        )
    };
    let path: Vec<String> = points
        .iter()
        .map(|p| {
            let (x, y) = map(p);
            format!("{x:.1},{y:.1}")
        })
        .collect();
    format!(
        concat!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\">",
            "<rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>",
            "<polyline fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"2\" points=\"{pts}\"/>",
            "<text x=\"{xc}\" y=\"{yb}\" text-anchor=\"middle\" font-size=\"14\">{xl}</text>",
            "<text x=\"14\" y=\"{ymid}\" font-size=\"14\" transform=\"rotate(-90 14 {ymid})\" ",
            "text-anchor=\"middle\">{yl}</text>",
            "</svg>"
        ),
        w = w,
        h = h,
        pts = path.join(" "),
        xc = w / 2.0,
        yb = h - 10.0,
        ymid = h / 2.0,
        xl = x_label,
        yl = y_label,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn query_bound_matches_worked_example() {
        // rho = 0.25: 8 / 0.25 = 32; 32 * 1000 * ln(10000)
        let b = query_bound(1000.0, 0.1, 0.25).unwrap();
        let expect = 32_000.0 * (10_000f64).ln();
        assert!((b - expect).abs() / expect < 1e-12);
        assert!((b - 294_730.9).abs() < 0.1);
        // rho = 0 reduces to 8 q ln(q/delta)
        let b0 = query_bound(1000.0, 0.1, 0.0).unwrap();
        assert!((b0 - 8.0 * 1000.0 * (10_000f64).ln()).abs() < 1e-9);
    }

    #[test]
    fn query_bound_domain_errors() {
        assert!(query_bound(1000.0, 0.1, 0.5).is_err());
        assert!(query_bound(1000.0, 0.1, -0.1).is_err());
        assert!(query_bound(0.5, 0.1, 0.0).is_err());
        assert!(query_bound(10.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn query_bound_monotonicity() {
        let base = query_bound(1000.0, 0.1, 0.1).unwrap();
        assert!(query_bound(2000.0, 0.1, 0.1).unwrap() > base);
        assert!(query_bound(1000.0, 0.05, 0.1).unwrap() > base);
        assert!(query_bound(1000.0, 0.1, 0.2).unwrap() > base);
    }

    #[test]
    fn histogram_entropy_extremes() {
        let one_hot = ClassHistogram {
            counts: vec![100, 0, 0, 0],
            source: HistogramSource::Clone,
            n: 100,
        };
        assert_eq!(one_hot.normalized_entropy(), 0.0);
        let uniform = ClassHistogram {
            counts: vec![25; 4],
            source: HistogramSource::Clone,
            n: 100,
        };
        assert!((uniform.normalized_entropy() - 1.0).abs() < 1e-12);
        let skewed = ClassHistogram {
            counts: vec![600, 400],
            source: HistogramSource::Clone,
            n: 1000,
        };
        let expect = -(0.6f64 * 0.6f64.ln() + 0.4 * 0.4f64.ln()) / 2f64.ln();
        assert!((skewed.normalized_entropy() - expect).abs() < 1e-12);
    }
}
