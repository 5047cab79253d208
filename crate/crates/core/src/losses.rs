//! Training objectives: clone cross-entropy, adversarial real/fake terms,
//! batch class-diversity, composite generator/discriminator losses, and the
//! soft-label distillation losses (KL and L1 on estimated logits).
//!
//! All logs are natural. Every function is generic over `f32`/`f64`: the
//! training loop runs in `f32`, oracle and finite-difference tests in `f64`.
//! Probability clamps are `1e-7` for discriminator outputs and `1e-12`
//! inside KL / logit estimation; each clamp bumps a process-wide counter and
//! emits a log line so silent saturation cannot hide.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, NdFloat};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::softmax_rows;

/// Discriminator-output clamp: keeps `ln p` and `ln (1 - p)` finite.
pub const DISC_CLAMP: f64 = 1e-7;
/// Probability clamp inside KL and logit estimation.
pub const PROB_CLAMP: f64 = 1e-12;

static CLAMP_EVENTS: AtomicU64 = AtomicU64::new(0);

/// Total clamp events since process start (observable alongside the logs).
pub fn clamp_event_count() -> u64 {
    CLAMP_EVENTS.load(Ordering::Relaxed)
}

fn note_clamps(context: &str, count: u64) {
    if count > 0 {
        CLAMP_EVENTS.fetch_add(count, Ordering::Relaxed);
        log::warn!("{context}: clamped {count} value(s)");
    }
}

/// A scalar loss with its named components; `value` always equals the
/// weighted sum of `components` by construction.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LossReport {
    pub name: String,
    pub value: f64,
    pub components: BTreeMap<String, f64>,
}

impl LossReport {
    /// One CSV line: `step,name,value,k1=v1;k2=v2`.
    pub fn csv_row(&self, step: u64) -> String {
        let comps = self
            .components
            .iter()
            .map(|(k, v)| format!("{k}={v:.9}"))
            .collect::<Vec<_>>()
            .join(";");
        format!("{step},{},{:.9},{comps}", self.name, self.value)
    }
}

fn check_labels(n_rows: usize, k: usize, labels: &[usize]) -> Result<()> {
    if labels.len() != n_rows {
        return Err(Error::shape(format!(
            "labels length {} does not match batch {}",
            labels.len(),
            n_rows
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::validation(format!(
            "label {bad} out of range for {k} classes"
        )));
    }
    Ok(())
}

/// Mean cross-entropy of raw scores against hard labels.
pub fn clone_ce_loss<F: NdFloat>(scores: &ArrayView2<F>, labels: &[usize]) -> Result<F> {
    Ok(clone_ce_grad(scores, labels)?.0)
}

/// Cross-entropy plus its gradient with respect to the scores:
/// `(softmax - onehot) / N`.
pub fn clone_ce_grad<F: NdFloat>(
    scores: &ArrayView2<F>,
    labels: &[usize],
) -> Result<(F, Array2<F>)> {
    let (n, k) = scores.dim();
    if n == 0 {
        return Err(Error::validation("cross-entropy over an empty batch"));
    }
    check_labels(n, k, labels)?;
    let log_p = crate::tensor::log_softmax_rows(scores);
    let inv_n = F::one() / F::from(n).unwrap();
    let mut loss = F::zero();
    let mut grad = log_p.mapv(F::exp);
    for (i, &label) in labels.iter().enumerate() {
        loss = loss - log_p[[i, label]];
        grad[[i, label]] = grad[[i, label]] - F::one();
    }
    grad.mapv_inplace(|g| g * inv_n);
    Ok((loss * inv_n, grad))
}

fn clamp_unit_interval<F: NdFloat>(values: &ArrayView1<F>, context: &str) -> Result<Array1<F>> {
    let lo = F::from(DISC_CLAMP).unwrap();
    let hi = F::one() - lo;
    let mut clamped = 0u64;
    for &v in values.iter() {
        if v < F::zero() || v > F::one() {
            return Err(Error::validation(format!(
                "{context}: discriminator output outside [0, 1]"
            )));
        }
    }
    let out = values.mapv(|v| {
        if v < lo {
            clamped += 1;
            lo
        } else if v > hi {
            clamped += 1;
            hi
        } else {
            v
        }
    });
    note_clamps(context, clamped);
    Ok(out)
}

/// Adversarial terms: `(mean ln D(real), mean ln (1 - D(fake)))`. Both are
/// non-positive; the discriminator ascends their sum and the generator
/// descends the fake term.
pub fn adv_losses<F: NdFloat>(d_real: &ArrayView1<F>, d_fake: &ArrayView1<F>) -> Result<(F, F)> {
    Ok((adv_real_grad(d_real)?.0, adv_fake_grad(d_fake)?.0))
}

/// `mean ln p` with gradient `1 / (N p)` (on the clamped values).
pub fn adv_real_grad<F: NdFloat>(d_real: &ArrayView1<F>) -> Result<(F, Array1<F>)> {
    if d_real.is_empty() {
        return Err(Error::validation("adversarial real term over empty batch"));
    }
    let p = clamp_unit_interval(d_real, "adv_real")?;
    let inv_n = F::one() / F::from(p.len()).unwrap();
    let loss = p.mapv(F::ln).sum() * inv_n;
    let grad = p.mapv(|v| inv_n / v);
    Ok((loss, grad))
}

/// `mean ln (1 - p)` with gradient `-1 / (N (1 - p))`.
pub fn adv_fake_grad<F: NdFloat>(d_fake: &ArrayView1<F>) -> Result<(F, Array1<F>)> {
    if d_fake.is_empty() {
        return Err(Error::validation("adversarial fake term over empty batch"));
    }
    let p = clamp_unit_interval(d_fake, "adv_fake")?;
    let inv_n = F::one() / F::from(p.len()).unwrap();
    let loss = p.mapv(|v| (F::one() - v).ln()).sum() * inv_n;
    let grad = p.mapv(|v| -inv_n / (F::one() - v));
    Ok((loss, grad))
}

fn check_probability_rows<F: NdFloat>(rows: &ArrayView2<F>, context: &str) -> Result<()> {
    let tol = F::from(1e-6).unwrap();
    for (i, row) in rows.rows().into_iter().enumerate() {
        let mut sum = F::zero();
        for &v in row.iter() {
            if v < F::zero() {
                return Err(Error::validation(format!(
                    "{context}: row {i} has a negative entry"
                )));
            }
            sum = sum + v;
        }
        if (sum - F::one()).abs() > tol {
            return Err(Error::validation(format!(
                "{context}: row {i} sums to {} (expected 1 within 1e-6)",
                sum.to_f64().unwrap_or(f64::NAN)
            )));
        }
    }
    Ok(())
}

/// Negative entropy of the batch-mean confidence vector: with
/// `alpha_j = mean_i softmax_ij`, returns `sum_j alpha_j ln alpha_j`
/// (`0 ln 0 = 0`). Lies in `[-ln K, 0]`, minimized at uniform `alpha`.
pub fn class_diversity_loss<F: NdFloat>(clone_softmax: &ArrayView2<F>) -> Result<F> {
    let (n, _k) = clone_softmax.dim();
    if n == 0 {
        return Err(Error::validation("class-diversity over an empty batch"));
    }
    check_probability_rows(clone_softmax, "class_diversity")?;
    let inv_n = F::one() / F::from(n).unwrap();
    let alpha = clone_softmax.sum_axis(ndarray::Axis(0)) * inv_n;
    let mut loss = F::zero();
    for &a in alpha.iter() {
        if a > F::zero() {
            loss = loss + a * a.ln();
        }
    }
    Ok(loss)
}

/// Class-diversity loss evaluated from raw clone scores, with the gradient
/// with respect to those scores (softmax differentiated analytically).
pub fn class_diversity_from_scores<F: NdFloat>(scores: &ArrayView2<F>) -> Result<(F, Array2<F>)> {
    let (n, k) = scores.dim();
    if n == 0 {
        return Err(Error::validation("class-diversity over an empty batch"));
    }
    let probs = softmax_rows(scores);
    let inv_n = F::one() / F::from(n).unwrap();
    let alpha = probs.sum_axis(ndarray::Axis(0)) * inv_n;
    let mut loss = F::zero();
    // dL/dP_ij = (ln alpha_j + 1) / N; alpha_j == 0 only when the whole
    // column is zero, where the subgradient 0 is used.
    let mut dp_row = Array1::<F>::zeros(k);
    for (j, &a) in alpha.iter().enumerate() {
        if a > F::zero() {
            loss = loss + a * a.ln();
            dp_row[j] = (a.ln() + F::one()) * inv_n;
        }
    }
    let mut grad = Array2::<F>::zeros((n, k));
    for i in 0..n {
        let p = probs.row(i);
        let inner: F = p
            .iter()
            .zip(dp_row.iter())
            .map(|(&pv, &gv)| pv * gv)
            .fold(F::zero(), |acc, v| acc + v);
        for j in 0..k {
            grad[[i, j]] = p[j] * (dp_row[j] - inner);
        }
    }
    Ok((loss, grad))
}

/// Composite generator objective: `adv_fake + lambda * class_div`.
pub fn generator_loss(adv_fake: f64, class_div: f64, lambda_div: f64) -> Result<LossReport> {
    if lambda_div < 0.0 {
        return Err(Error::validation("lambda_div must be nonnegative"));
    }
    let mut components = BTreeMap::new();
    components.insert("adv_fake".to_string(), adv_fake);
    components.insert("class_div".to_string(), class_div);
    components.insert("lambda_div".to_string(), lambda_div);
    Ok(LossReport {
        name: "generator".to_string(),
        value: adv_fake + lambda_div * class_div,
        components,
    })
}

/// Composite discriminator objective: `adv_real + adv_fake`. The
/// discriminator update ascends this value (descends its negation).
pub fn discriminator_loss(adv_real: f64, adv_fake: f64) -> LossReport {
    let mut components = BTreeMap::new();
    components.insert("adv_real".to_string(), adv_real);
    components.insert("adv_fake".to_string(), adv_fake);
    LossReport {
        name: "discriminator".to_string(),
        value: adv_real + adv_fake,
        components,
    }
}

/// Recovers zero-mean logits from softmax rows:
/// `ln p_i - mean_j ln p_j` per row. Zero entries clamp to 1e-12.
pub fn victim_logit_estimate<F: NdFloat>(victim_softmax: &ArrayView2<F>) -> Result<Array2<F>> {
    check_probability_rows(victim_softmax, "victim_logit_estimate")?;
    let floor = F::from(PROB_CLAMP).unwrap();
    let mut clamped = 0u64;
    let mut logs = victim_softmax.mapv(|v| {
        if v < floor {
            clamped += 1;
            floor.ln()
        } else {
            v.ln()
        }
    });
    note_clamps("victim_logit_estimate", clamped);
    let k = F::from(logs.ncols()).unwrap();
    for mut row in logs.rows_mut() {
        let mean = row.sum() / k;
        row.mapv_inplace(|v| v - mean);
    }
    Ok(logs)
}

/// Mean over the batch of the L1 distance between estimated victim logits
/// and raw clone logits.
pub fn l1_logit_loss<F: NdFloat>(
    victim_softmax: &ArrayView2<F>,
    clone_logits: &ArrayView2<F>,
) -> Result<F> {
    Ok(l1_logit_grad(victim_softmax, clone_logits)?.0)
}

/// L1 logit loss plus its gradient with respect to the clone logits:
/// `-sign(v - c) / N` elementwise (0 at exact ties).
pub fn l1_logit_grad<F: NdFloat>(
    victim_softmax: &ArrayView2<F>,
    clone_logits: &ArrayView2<F>,
) -> Result<(F, Array2<F>)> {
    if victim_softmax.dim() != clone_logits.dim() {
        return Err(Error::shape(format!(
            "victim {:?} vs clone {:?}",
            victim_softmax.dim(),
            clone_logits.dim()
        )));
    }
    let (n, _) = victim_softmax.dim();
    if n == 0 {
        return Err(Error::validation("l1 logit loss over an empty batch"));
    }
    let v_logits = victim_logit_estimate(victim_softmax)?;
    let inv_n = F::one() / F::from(n).unwrap();
    let mut loss = F::zero();
    let mut grad = Array2::<F>::zeros(clone_logits.dim());
    for ((idx, &c), &v) in clone_logits.indexed_iter().zip(v_logits.iter()) {
        let diff = v - c;
        loss = loss + diff.abs();
        grad[idx] = if diff > F::zero() {
            -inv_n
        } else if diff < F::zero() {
            inv_n
        } else {
            F::zero()
        };
    }
    Ok((loss * inv_n, grad))
}

/// Mean over the batch of `sum_i v_i ln (v_i / c_i)`; nonnegative, zero iff
/// the rows coincide. Zero clone entries clamp to 1e-12.
pub fn kl_distill_loss<F: NdFloat>(
    victim_softmax: &ArrayView2<F>,
    clone_softmax: &ArrayView2<F>,
) -> Result<F> {
    if victim_softmax.dim() != clone_softmax.dim() {
        return Err(Error::shape(format!(
            "victim {:?} vs clone {:?}",
            victim_softmax.dim(),
            clone_softmax.dim()
        )));
    }
    let (n, _) = victim_softmax.dim();
    if n == 0 {
        return Err(Error::validation("kl loss over an empty batch"));
    }
    check_probability_rows(victim_softmax, "kl_distill victim")?;
    check_probability_rows(clone_softmax, "kl_distill clone")?;
    let floor = F::from(PROB_CLAMP).unwrap();
    let mut clamped = 0u64;
    let mut loss = F::zero();
    for (&v, &c) in victim_softmax.iter().zip(clone_softmax.iter()) {
        if v > F::zero() {
            let c = if c < floor {
                clamped += 1;
                floor
            } else {
                c
            };
            loss = loss + v * (v / c).ln();
        }
    }
    note_clamps("kl_distill", clamped);
    Ok(loss / F::from(n).unwrap())
}

/// KL distillation evaluated from raw clone scores, with the gradient with
/// respect to those scores: `(softmax(scores) - victim) / N`.
pub fn kl_grad_scores<F: NdFloat>(
    victim_softmax: &ArrayView2<F>,
    clone_scores: &ArrayView2<F>,
) -> Result<(F, Array2<F>)> {
    if victim_softmax.dim() != clone_scores.dim() {
        return Err(Error::shape(format!(
            "victim {:?} vs clone {:?}",
            victim_softmax.dim(),
            clone_scores.dim()
        )));
    }
    let clone_softmax = softmax_rows(clone_scores);
    let loss = kl_distill_loss(victim_softmax, &clone_softmax.view())?;
    let inv_n = F::one() / F::from(victim_softmax.nrows()).unwrap();
    let grad = (&clone_softmax - victim_softmax) * inv_n;
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};
    use rand::Rng as _;

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(1e-12)
    }

    #[test]
    fn ce_uniform_scores_is_ln_k() {
        for k in [2usize, 10] {
            let scores = Array2::<f64>::zeros((4, k));
            let labels = vec![k - 1; 4];
            let loss = clone_ce_loss(&scores.view(), &labels).unwrap();
            assert!((loss - (k as f64).ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn ce_rejects_out_of_range_label() {
        let scores = Array2::<f64>::zeros((2, 3));
        assert!(matches!(
            clone_ce_loss(&scores.view(), &[0, 3]),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn adv_midpoint_is_minus_ln_2() {
        let half = Array1::from_elem(8, 0.5f64);
        let (real, fake) = adv_losses(&half.view(), &half.view()).unwrap();
        assert!((real + std::f64::consts::LN_2).abs() < 1e-12);
        assert!((fake + std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn adv_perfect_real_approaches_zero_and_clamps_log() {
        let before = clamp_event_count();
        let ones = Array1::from_elem(4, 1.0f64);
        let (real, _) = adv_losses(&ones.view(), &Array1::from_elem(4, 0.5f64).view()).unwrap();
        assert!(real.abs() < 1e-6, "supremum not approached: {real}");
        assert!(clamp_event_count() > before, "clamp events not recorded");
    }

    #[test]
    fn adv_rejects_out_of_interval() {
        let bad = array![1.2f64];
        let ok = array![0.5f64];
        assert!(adv_losses(&bad.view(), &ok.view()).is_err());
    }

    #[test]
    fn diversity_uniform_alpha_is_minimum() {
        let k = 10;
        let p = Array2::<f64>::from_elem((6, k), 1.0 / k as f64);
        let loss = class_diversity_loss(&p.view()).unwrap();
        assert!((loss + (k as f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn diversity_one_hot_alpha_is_zero() {
        for k in [2usize, 5, 17] {
            let mut p = Array2::<f64>::zeros((3, k));
            for i in 0..3 {
                p[[i, k - 1]] = 1.0;
            }
            let loss = class_diversity_loss(&p.view()).unwrap();
            assert!(loss.abs() < 1e-12, "k={k}: {loss}");
        }
    }

    #[test]
    fn diversity_worked_example() {
        // alpha = (0.3, 0.45, 0.25) from the two rows below.
        let p = array![[0.5f64, 0.3, 0.2], [0.1, 0.6, 0.3]];
        let loss = class_diversity_loss(&p.view()).unwrap();
        let expect = 0.3f64 * 0.3f64.ln() + 0.45 * 0.45f64.ln() + 0.25 * 0.25f64.ln();
        assert!((loss - expect).abs() < 1e-12);
    }

    #[test]
    fn diversity_rejects_malformed_rows() {
        let p = array![[0.5f64, 0.6]];
        assert!(class_diversity_loss(&p.view()).is_err());
        let neg = array![[1.1f64, -0.1]];
        assert!(class_diversity_loss(&neg.view()).is_err());
    }

    #[test]
    fn generator_loss_is_affine_in_lambda() {
        let base = generator_loss(-0.7, -2.3, 0.0).unwrap();
        assert_eq!(base.value, -0.7);
        let heavy = generator_loss(-0.7, -2.3, 500.0).unwrap();
        assert!((heavy.value - (-0.7 + 500.0 * -2.3)).abs() < 1e-9);
        assert!((heavy.value - -1150.7).abs() < 1e-9);
        // slope in lambda equals the diversity component
        let l1 = generator_loss(-0.7, -2.3, 10.0).unwrap().value;
        let l2 = generator_loss(-0.7, -2.3, 11.0).unwrap().value;
        assert!((l2 - l1 - -2.3).abs() < 1e-9);
        assert!(generator_loss(0.0, 0.0, -1.0).is_err());
    }

    #[test]
    fn report_value_matches_components() {
        let rep = generator_loss(-0.31, -1.7, 500.0).unwrap();
        let sum = rep.components["adv_fake"] + rep.components["lambda_div"] * rep.components["class_div"];
        assert!((rep.value - sum).abs() < 1e-6);
        let rep = discriminator_loss(-0.4, -0.9);
        assert!((rep.value - (rep.components["adv_real"] + rep.components["adv_fake"])).abs() < 1e-9);
    }

    #[test]
    fn logit_estimate_uniform_rows_are_zero() {
        let k = 7;
        let p = Array2::<f64>::from_elem((3, k), 1.0 / k as f64);
        let logits = victim_logit_estimate(&p.view()).unwrap();
        assert!(logits.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn logit_estimate_rows_are_mean_centered() {
        let p = array![[0.9f64, 0.1], [0.3, 0.7]];
        let logits = victim_logit_estimate(&p.view()).unwrap();
        for row in logits.rows() {
            assert!(row.sum().abs() < 1e-9);
        }
        let m = (0.9f64.ln() + 0.1f64.ln()) / 2.0;
        assert!((logits[[0, 0]] - (0.9f64.ln() - m)).abs() < 1e-12);
        assert!((logits[[0, 1]] - (0.1f64.ln() - m)).abs() < 1e-12);
    }

    #[test]
    fn l1_zero_when_clone_matches_estimate() {
        let p = array![[0.6f64, 0.3, 0.1], [0.2, 0.5, 0.3]];
        let v_logits = victim_logit_estimate(&p.view()).unwrap();
        let loss = l1_logit_loss(&p.view(), &v_logits.view()).unwrap();
        assert!(loss.abs() < 1e-12);
        // uniform victim rows + all-zero clone logits: both sides are zero
        let u = Array2::<f64>::from_elem((2, 4), 0.25);
        let z = Array2::<f64>::zeros((2, 4));
        assert!(l1_logit_loss(&u.view(), &z.view()).unwrap().abs() < 1e-12);
    }

    #[test]
    fn kl_identity_and_closed_form() {
        let p = array![[0.2f64, 0.8], [0.7, 0.3]];
        assert!(kl_distill_loss(&p.view(), &p.view()).unwrap().abs() < 1e-12);
        let v = array![[1.0f64, 0.0]];
        let c = array![[0.5f64, 0.5]];
        let loss = kl_distill_loss(&v.view(), &c.view()).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn kl_nonnegative_on_random_rows() {
        let mut rng = crate::rng::seed_rng(9);
        for _ in 0..50 {
            let v = random_softmax(&mut rng, 5, 4);
            let c = random_softmax(&mut rng, 5, 4);
            let loss = kl_distill_loss(&v.view(), &c.view()).unwrap();
            assert!(loss >= -1e-12);
        }
    }

    fn random_softmax(rng: &mut crate::rng::Rng, n: usize, k: usize) -> Array2<f64> {
        let scores = Array2::from_shape_fn((n, k), |_| rng.gen_range(-3.0..3.0));
        softmax_rows(&scores.view())
    }

    #[test]
    fn diversity_permutation_invariance() {
        let mut rng = crate::rng::seed_rng(3);
        let p = random_softmax(&mut rng, 6, 4);
        let base = class_diversity_loss(&p.view()).unwrap();
        // sample-axis permutation
        let mut rows: Vec<_> = (0..6).collect();
        rows.reverse();
        let permuted = p.select(ndarray::Axis(0), &rows);
        assert!(rel_err(class_diversity_loss(&permuted.view()).unwrap(), base) < 1e-12);
        // class-axis permutation
        let cols = [2usize, 0, 3, 1];
        let permuted = p.select(ndarray::Axis(1), &cols);
        assert!(rel_err(class_diversity_loss(&permuted.view()).unwrap(), base) < 1e-12);
    }
}
