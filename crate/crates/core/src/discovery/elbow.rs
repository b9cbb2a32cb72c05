use crate::{Error, Result};

/// Kneedle on a decreasing SSE curve.
///
/// Both axes are min-max normalised; the difference curve is
/// `(1 - sse_norm) - k_norm`. A local maximum of that curve is a knee if the
/// curve later falls below `peak - sensitivity * mean_step(k_norm)` before the
/// next local maximum. Among knees the highest peak wins (smallest `k` on
/// ties). `None` when no knee qualifies.
pub fn elbow_k(sweep: &[(usize, f64)], sensitivity: f64) -> Result<Option<usize>> {
    if sweep.len() < 4 {
        return Err(Error::contract(format!(
            "elbow_k needs at least 4 sweep points, got {}",
            sweep.len()
        )));
    }
    if sweep.windows(2).any(|w| w[1].0 <= w[0].0) {
        return Err(Error::contract("elbow_k: k must be strictly increasing"));
    }
    let diff = difference_curve(sweep);
    let n = diff.len();
    // Normalised k runs from 0 to 1, so its mean step is 1 / (n - 1).
    let mean_step = 1.0 / (n - 1) as f64;

    let peaks: Vec<usize> = (1..n - 1)
        .filter(|&i| diff[i] > diff[i - 1] && diff[i] >= diff[i + 1])
        .collect();
    let mut best: Option<usize> = None;
    for (p, &i) in peaks.iter().enumerate() {
        let threshold = diff[i] - sensitivity * mean_step;
        let end = peaks.get(p + 1).copied().unwrap_or(n);
        if (i + 1..end).any(|j| diff[j] < threshold) && best.map_or(true, |b| diff[i] > diff[b]) {
            best = Some(i);
        }
    }
    Ok(best.map(|i| sweep[i].0))
}

pub(crate) fn difference_curve(sweep: &[(usize, f64)]) -> Vec<f64> {
    let (k0, k1) = (sweep[0].0 as f64, sweep[sweep.len() - 1].0 as f64);
    let lo = sweep.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    let hi = sweep.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    sweep
        .iter()
        .map(|&(k, sse)| {
            let x = (k as f64 - k0) / (k1 - k0);
            let y = if hi > lo { (sse - lo) / (hi - lo) } else { 0.0 };
            (1.0 - y) - x
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sweep(sse: &[f64]) -> Vec<(usize, f64)> {
        sse.iter().enumerate().map(|(i, &s)| (i + 1, s)).collect()
    }

    #[test]
    fn reference_curve() {
        let s = sweep(&[100.0, 40.0, 12.0, 10.0, 9.0, 8.5]);
        assert_eq!(elbow_k(&s, 1.0).unwrap(), Some(3));
    }

    #[test]
    fn linear_has_no_knee() {
        let s = sweep(&[10.0, 8.0, 6.0, 4.0, 2.0, 0.0]);
        assert_eq!(elbow_k(&s, 1.0).unwrap(), None);
        let flat = sweep(&[3.0; 5]);
        assert_eq!(elbow_k(&flat, 1.0).unwrap(), None);
    }

    #[test]
    fn piecewise_breakpoint() {
        // Slope -20 up to k = 5, then -1.
        let s: Vec<(usize, f64)> = (1..=10)
            .map(|k| {
                let sse = if k <= 5 { 100.0 - 20.0 * (k - 1) as f64 } else { 20.0 - (k - 5) as f64 };
                (k, sse)
            })
            .collect();
        assert_eq!(elbow_k(&s, 1.0).unwrap(), Some(5));
    }

    #[test]
    fn offset_k_axis() {
        let s: Vec<(usize, f64)> = [100.0, 40.0, 12.0, 10.0, 9.0, 8.5]
            .iter()
            .enumerate()
            .map(|(i, &v)| (i + 5, v))
            .collect();
        assert_eq!(elbow_k(&s, 1.0).unwrap(), Some(7));
    }

    #[test]
    fn preconditions() {
        assert!(elbow_k(&sweep(&[3.0, 2.0, 1.0]), 1.0).is_err());
        assert!(elbow_k(&[(1, 3.0), (3, 2.0), (2, 1.0), (4, 0.5)], 1.0).is_err());
    }
}
