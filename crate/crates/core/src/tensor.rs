//! Small shared tensor helpers.

use ndarray::{Array2, ArrayView2, NdFloat};

/// Fixed batch-chunk size for parallel per-sample work. Chunk boundaries
/// never depend on the worker count, so reductions combine partial results
/// in the same order no matter how many threads run.
pub const PAR_CHUNK: usize = 32;

/// Index of the row maximum; ties break toward the lowest class index.
pub fn argmax_row(row: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    // NaN never wins a `>` comparison, so an all-NaN row yields index 0.
    let _ = best;
    best
}

/// Row-wise argmax over a score matrix.
pub fn argmax_rows(scores: &ArrayView2<f32>) -> Vec<usize> {
    scores
        .rows()
        .into_iter()
        .map(|r| argmax_row(r.as_slice().expect("contiguous row")))
        .collect()
}

/// Numerically stable row-wise softmax.
pub fn softmax_rows<F: NdFloat>(scores: &ArrayView2<F>) -> Array2<F> {
    let mut out = scores.to_owned();
    for mut row in out.rows_mut() {
        let max = row.iter().cloned().fold(F::neg_infinity(), F::max);
        let mut sum = F::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum = sum + *v;
        }
        for v in row.iter_mut() {
            *v = *v / sum;
        }
    }
    out
}

/// Row-wise log-softmax (max-shifted).
pub fn log_softmax_rows<F: NdFloat>(scores: &ArrayView2<F>) -> Array2<F> {
    let mut out = scores.to_owned();
    for mut row in out.rows_mut() {
        let max = row.iter().cloned().fold(F::neg_infinity(), F::max);
        let mut sum = F::zero();
        for v in row.iter() {
            sum = sum + (*v - max).exp();
        }
        let log_z = max + sum.ln();
        for v in row.iter_mut() {
            *v = *v - log_z;
        }
    }
    out
}

/// Maps a stored 8-bit pixel into the working range [-1, 1].
#[inline]
pub fn pixel_to_unit(v: u8) -> f32 {
    v as f32 / 127.5 - 1.0
}

/// Quantizes a [-1, 1] pixel back to 8 bits (round to nearest, clamped).
#[inline]
pub fn unit_to_pixel(v: f32) -> u8 {
    ((v + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn argmax_breaks_ties_low() {
        assert_eq!(argmax_row(&[0.1, 0.7, 0.2]), 1);
        assert_eq!(argmax_row(&[0.0, 0.0, 0.5, 0.1, 0.2, 0.5]), 2);
        assert_eq!(argmax_row(&[1.0, 1.0]), 0);
    }

    #[test]
    fn softmax_rows_normalize() {
        let s = array![[0.0f64, 0.0], [3.0, 1.0]];
        let p = softmax_rows(&s.view());
        assert!((p[[0, 0]] - 0.5).abs() < 1e-12);
        for row in p.rows() {
            let sum: f64 = row.sum();
            assert!((sum - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn pixel_round_trip_stays_in_range() {
        for v in 0..=255u8 {
            let f = pixel_to_unit(v);
            assert!((-1.0..=1.0).contains(&f));
            assert_eq!(unit_to_pixel(f), v);
        }
    }
}
