//! AUROC with bootstrap intervals, calibration curves and log-loss.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream_rng, DOMAIN_BOOTSTRAP};

pub const PROB_CLAMP: f64 = 1e-15;

pub fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

fn check_lengths(labels: &[u8], values: &[f64]) -> Result<()> {
    if labels.len() != values.len() {
        return Err(Error::LengthMismatch(format!(
            "{} labels but {} predictions",
            labels.len(),
            values.len()
        )));
    }
    if let Some(v) = labels.iter().find(|&&y| y > 1) {
        return Err(Error::InvalidArgument(format!("label {v} is not 0 or 1")));
    }
    Ok(())
}

/// Indices ordered by ascending score.
fn score_order(scores: &[f64]) -> Result<Vec<usize>> {
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::InvalidArgument("scores contain NaN".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    Ok(order)
}

/// Twice the Mann–Whitney U statistic and the class counts, walking
/// `order` with per-row multiplicities `weight` (1 for every row when `None`).
fn twice_u(labels: &[u8], scores: &[f64], order: &[usize], weight: Option<&[u32]>) -> (u128, u64, u64) {
    let (mut two_u, mut neg_below, mut pos_total) = (0u128, 0u64, 0u64);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        let (mut p, mut q) = (0u64, 0u64);
        while i < order.len() && scores[order[i]] == s {
            let r = order[i];
            let w = weight.map_or(1, |w| w[r] as u64);
            if labels[r] == 1 {
                p += w;
            } else {
                q += w;
            }
            i += 1;
        }
        two_u += 2 * p as u128 * neg_below as u128 + p as u128 * q as u128;
        neg_below += q;
        pos_total += p;
    }
    (two_u, pos_total, neg_below)
}

/// Probability that a random positive outscores a random negative, ties
/// counting one half.
pub fn auroc(labels: &[u8], scores: &[f64]) -> Result<f64> {
    check_lengths(labels, scores)?;
    let order = score_order(scores)?;
    let (two_u, p, n) = twice_u(labels, scores, &order, None);
    if p == 0 || n == 0 {
        return Err(Error::SingleClass);
    }
    Ok(two_u as f64 / (2.0 * p as f64 * n as f64))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AurocCi {
    pub point: f64,
    pub lower: f64,
    pub upper: f64,
    pub alpha: f64,
    pub resamples: usize,
    pub seed: u64,
    /// Resamples discarded because they lost a class.
    pub skipped: usize,
    /// Population standard deviation of the retained resample AUROCs.
    pub std_dev: f64,
    pub half_width: f64,
}

/// Type-7 (linear interpolation) quantile of a sorted slice.
pub fn percentile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Percentile bootstrap interval. Resample `r` draws its rows from its own
/// RNG stream, so the result does not depend on the thread count.
pub fn bootstrap_auroc_ci(labels: &[u8], scores: &[f64], resamples: usize, alpha: f64, seed: u64) -> Result<AurocCi> {
    check_lengths(labels, scores)?;
    if labels.len() < 2 {
        return Err(Error::InvalidArgument("bootstrap needs at least 2 rows".into()));
    }
    if resamples == 0 {
        return Err(Error::InvalidArgument("resamples must be at least 1".into()));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument("alpha must be in (0, 1)".into()));
    }
    let point = auroc(labels, scores)?;
    let order = score_order(scores)?;
    let n = labels.len();
    let values: Vec<Option<f64>> = (0..resamples)
        .into_par_iter()
        .map(|r| {
            let mut rng = stream_rng(seed, DOMAIN_BOOTSTRAP, r as u64);
            let mut weight = vec![0u32; n];
            for _ in 0..n {
                weight[rng.random_range(0..n)] += 1;
            }
            let (two_u, p, q) = twice_u(labels, scores, &order, Some(&weight));
            (p > 0 && q > 0).then(|| two_u as f64 / (2.0 * p as f64 * q as f64))
        })
        .collect();
    let mut kept: Vec<f64> = values.into_iter().flatten().collect();
    let skipped = resamples - kept.len();
    if kept.is_empty() {
        return Err(Error::SingleClass);
    }
    kept.sort_by(f64::total_cmp);
    let lower = percentile_sorted(&kept, alpha / 2.0);
    let upper = percentile_sorted(&kept, 1.0 - alpha / 2.0);
    let mean = kept.iter().sum::<f64>() / kept.len() as f64;
    let var = kept.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / kept.len() as f64;
    Ok(AurocCi {
        point,
        lower,
        upper,
        alpha,
        resamples,
        seed,
        skipped,
        std_dev: var.sqrt(),
        half_width: (upper - lower) / 2.0,
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Binning {
    #[default]
    UniformWidth,
    EqualFrequency,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationBin {
    pub index: usize,
    /// Probability range covered: the fixed bin edges under uniform width,
    /// the smallest and largest member prediction under equal frequency.
    pub lower: f64,
    pub upper: f64,
    pub mean_predicted: f64,
    pub observed: f64,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub binning: Binning,
    pub n_bins: usize,
    /// Occupied bins only.
    pub bins: Vec<CalibrationBin>,
    pub empty_bins: Vec<usize>,
}

impl CalibrationReport {
    /// Largest |mean predicted − observed| over bins with at least `min_count` rows.
    pub fn max_gap(&self, min_count: usize) -> Option<f64> {
        self.bins
            .iter()
            .filter(|b| b.count >= min_count)
            .map(|b| (b.mean_predicted - b.observed).abs())
            .max_by(f64::total_cmp)
    }
}

pub fn calibration_curve(labels: &[u8], probs: &[f64], n_bins: usize, binning: Binning) -> Result<CalibrationReport> {
    check_lengths(labels, probs)?;
    if n_bins < 2 {
        return Err(Error::InvalidArgument("calibration needs at least 2 bins".into()));
    }
    if let Some(p) = probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::InvalidArgument(format!("probability {p} outside [0, 1]")));
    }
    let n = probs.len();
    let assignment: Vec<usize> = match binning {
        Binning::UniformWidth => probs
            .iter()
            .map(|&p| ((p * n_bins as f64).floor() as usize).min(n_bins - 1))
            .collect(),
        Binning::EqualFrequency => {
            let order = score_order(probs)?;
            let mut a = vec![0; n];
            for (rank, &i) in order.iter().enumerate() {
                a[i] = rank * n_bins / n;
            }
            a
        }
    };
    let mut sum_p = vec![0.0; n_bins];
    let mut pos = vec![0usize; n_bins];
    let mut count = vec![0usize; n_bins];
    let mut lo = vec![f64::INFINITY; n_bins];
    let mut hi = vec![f64::NEG_INFINITY; n_bins];
    for i in 0..n {
        let b = assignment[i];
        sum_p[b] += probs[i];
        pos[b] += labels[i] as usize;
        count[b] += 1;
        lo[b] = lo[b].min(probs[i]);
        hi[b] = hi[b].max(probs[i]);
    }
    let mut bins = Vec::new();
    let mut empty_bins = Vec::new();
    for b in 0..n_bins {
        if count[b] == 0 {
            empty_bins.push(b);
            continue;
        }
        let (lower, upper) = match binning {
            Binning::UniformWidth => (b as f64 / n_bins as f64, (b + 1) as f64 / n_bins as f64),
            Binning::EqualFrequency => (lo[b], hi[b]),
        };
        bins.push(CalibrationBin {
            index: b,
            lower,
            upper,
            mean_predicted: sum_p[b] / count[b] as f64,
            observed: pos[b] as f64 / count[b] as f64,
            count: count[b],
        });
    }
    Ok(CalibrationReport {
        binning,
        n_bins,
        bins,
        empty_bins,
    })
}

/// Mean negative log-likelihood with probabilities clamped to
/// `[PROB_CLAMP, 1 - PROB_CLAMP]`.
pub fn log_loss(labels: &[u8], probs: &[f64]) -> Result<f64> {
    check_lengths(labels, probs)?;
    if labels.is_empty() {
        return Err(Error::Empty("log-loss of no rows".into()));
    }
    let total: f64 = labels
        .iter()
        .zip(probs)
        .map(|(&y, &p)| {
            let p = clamp_prob(p);
            if y == 1 {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .sum();
    Ok(total / labels.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn pair_count_auroc(labels: &[u8], scores: &[f64]) -> f64 {
        let (mut num, mut den) = (0.0, 0.0);
        for i in 0..labels.len() {
            for j in 0..labels.len() {
                if labels[i] == 1 && labels[j] == 0 {
                    den += 1.0;
                    if scores[i] > scores[j] {
                        num += 1.0;
                    } else if scores[i] == scores[j] {
                        num += 0.5;
                    }
                }
            }
        }
        num / den
    }

    #[test]
    fn auroc_examples() {
        assert_eq!(auroc(&[0, 1], &[0.2, 0.8]).unwrap(), 1.0);
        assert_eq!(auroc(&[0, 1], &[0.5, 0.5]).unwrap(), 0.5);
        assert!(matches!(auroc(&[1, 1], &[0.1, 0.2]), Err(Error::SingleClass)));
        assert!(matches!(auroc(&[0, 1], &[0.1]), Err(Error::LengthMismatch(_))));
    }

    #[test]
    fn auroc_matches_pair_counting() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let labels: Vec<u8> = (0..200).map(|_| u8::from(rng.random_bool(0.3))).collect();
        let scores: Vec<f64> = (0..200).map(|_| rng.random_range(0..20) as f64 / 4.0).collect();
        assert_eq!(auroc(&labels, &scores).unwrap(), pair_count_auroc(&labels, &scores));
    }

    /// Straightforward reimplementation: materialize each resample and score it.
    fn naive_bootstrap(labels: &[u8], scores: &[f64], resamples: usize, alpha: f64, seed: u64) -> (f64, f64) {
        let n = labels.len();
        let mut vals = Vec::new();
        for r in 0..resamples {
            let mut rng = stream_rng(seed, DOMAIN_BOOTSTRAP, r as u64);
            let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
            let l: Vec<u8> = idx.iter().map(|&i| labels[i]).collect();
            let s: Vec<f64> = idx.iter().map(|&i| scores[i]).collect();
            if l.contains(&0) && l.contains(&1) {
                vals.push(pair_count_auroc(&l, &s));
            }
        }
        vals.sort_by(f64::total_cmp);
        let q = |p: f64| {
            let h = (vals.len() - 1) as f64 * p;
            let (a, b) = (vals[h.floor() as usize], vals[h.ceil() as usize]);
            a + (h - h.floor()) * (b - a)
        };
        (q(alpha / 2.0), q(1.0 - alpha / 2.0))
    }

    #[test]
    fn bootstrap_matches_independent_implementation() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let scores: Vec<f64> = (0..500).map(|_| rng.random::<f64>()).collect();
        let labels: Vec<u8> = scores.iter().map(|&s| u8::from(rng.random::<f64>() < 0.2 + 0.5 * s)).collect();
        let ci = bootstrap_auroc_ci(&labels, &scores, 200, 0.05, 42).unwrap();
        let (lo, hi) = naive_bootstrap(&labels, &scores, 200, 0.05, 42);
        assert!((ci.lower - lo).abs() < 1e-12 && (ci.upper - hi).abs() < 1e-12);
        assert!(ci.lower <= ci.point && ci.point <= ci.upper);
        assert_eq!(ci, bootstrap_auroc_ci(&labels, &scores, 200, 0.05, 42).unwrap());
    }

    #[test]
    fn bootstrap_edge_cases() {
        let labels = [0, 0, 0, 1, 1, 1];
        let scores = [0.1, 0.2, 0.3, 0.7, 0.8, 0.9];
        let ci = bootstrap_auroc_ci(&labels, &scores, 100, 0.05, 1).unwrap();
        assert_eq!((ci.lower, ci.point, ci.upper), (1.0, 1.0, 1.0));

        let labels: Vec<u8> = (0..40).map(|i| (i % 3 == 0) as u8).collect();
        let scores: Vec<f64> = (0..40).map(|i| ((i * 7) % 13) as f64).collect();
        let ci = bootstrap_auroc_ci(&labels, &scores, 1, 0.05, 3).unwrap();
        assert_eq!(ci.lower, ci.upper);
        assert_eq!(ci.std_dev, 0.0);
        assert!(matches!(bootstrap_auroc_ci(&[1], &[0.5], 10, 0.05, 0), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn calibration_examples() {
        let labels: Vec<u8> = (0..100).map(|i| u8::from(i < 20)).collect();
        let r = calibration_curve(&labels, &[0.2; 100], 10, Binning::UniformWidth).unwrap();
        assert_eq!(r.bins.len(), 1);
        assert_eq!(r.bins[0].observed, 0.2);
        assert_eq!(r.bins[0].index, 2);
        assert_eq!(r.empty_bins.len(), 9);

        let r = calibration_curve(&[0; 10], &[0.05; 10], 10, Binning::UniformWidth).unwrap();
        assert_eq!(r.bins.len(), 1);
        assert_eq!(r.bins[0].observed, 0.0);
        assert!(calibration_curve(&[0], &[0.5], 1, Binning::UniformWidth).is_err());
        assert!(calibration_curve(&[0], &[1.5], 10, Binning::UniformWidth).is_err());
        let r = calibration_curve(&[1], &[1.0], 10, Binning::UniformWidth).unwrap();
        assert_eq!(r.bins[0].index, 9);
    }

    #[test]
    fn calibration_of_true_probabilities() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let probs: Vec<f64> = (0..100_000).map(|_| rng.random::<f64>()).collect();
        let labels: Vec<u8> = probs.iter().map(|&p| u8::from(rng.random::<f64>() < p)).collect();
        for binning in [Binning::UniformWidth, Binning::EqualFrequency] {
            let r = calibration_curve(&labels, &probs, 10, binning).unwrap();
            assert!(r.max_gap(100).unwrap() <= 0.02, "{binning:?}");
            assert_eq!(r.bins.iter().map(|b| b.count).sum::<usize>(), 100_000);
        }
    }

    #[test]
    fn log_loss_examples() {
        assert!(log_loss(&[1, 0], &[1.0, 0.0]).unwrap() <= 1e-10);
        assert!((log_loss(&[1, 0, 1], &[0.5; 3]).unwrap() - 2f64.ln()).abs() < 1e-15);
        let hand = -(0.9f64.ln() + 0.8f64.ln() + 0.3f64.ln()) / 3.0;
        assert!((log_loss(&[1, 0, 0], &[0.9, 0.2, 0.7]).unwrap() - hand).abs() < 1e-15);
        assert!(log_loss(&[1], &[0.5, 0.5]).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn case() -> impl Strategy<Value = (Vec<u8>, Vec<f64>)> {
            (2usize..80).prop_flat_map(|n| {
                (
                    prop::collection::vec(0u8..2, n).prop_map(|mut l| {
                        l[0] = 0;
                        l[1] = 1;
                        l
                    }),
                    prop::collection::vec(-5.0..5.0f64, n),
                )
            })
        }

        proptest! {
            #[test]
            fn monotone_transform_invariance((labels, scores) in case()) {
                let a = auroc(&labels, &scores).unwrap();
                let exp: Vec<f64> = scores.iter().map(|s| s.exp()).collect();
                let affine: Vec<f64> = scores.iter().map(|s| 3.0 * s + 7.0).collect();
                prop_assert_eq!(a, auroc(&labels, &exp).unwrap());
                prop_assert_eq!(a, auroc(&labels, &affine).unwrap());
            }

            #[test]
            fn negation_complements((labels, scores) in case()) {
                let mut sorted = scores.clone();
                sorted.sort_by(f64::total_cmp);
                sorted.dedup();
                prop_assume!(sorted.len() == scores.len());
                let neg: Vec<f64> = scores.iter().map(|s| -s).collect();
                let sum = auroc(&labels, &scores).unwrap() + auroc(&labels, &neg).unwrap();
                prop_assert!((sum - 1.0).abs() < 1e-12);
            }

            #[test]
            fn calibration_counts((labels, scores) in case(), n_bins in 2usize..15) {
                let probs: Vec<f64> = scores.iter().map(|s| (s + 5.0) / 10.0).collect();
                let u = calibration_curve(&labels, &probs, n_bins, Binning::UniformWidth).unwrap();
                prop_assert_eq!(u.bins.iter().map(|b| b.count).sum::<usize>(), labels.len());
                for b in &u.bins {
                    prop_assert!(b.lower <= b.mean_predicted + 1e-12 && b.mean_predicted <= b.upper + 1e-12);
                }
                let e = calibration_curve(&labels, &probs, n_bins, Binning::EqualFrequency).unwrap();
                let counts: Vec<usize> = e.bins.iter().map(|b| b.count).collect();
                prop_assert_eq!(counts.iter().sum::<usize>(), labels.len());
                if labels.len() >= n_bins {
                    prop_assert!(counts.iter().max().unwrap() - counts.iter().min().unwrap() <= 1);
                }
            }
        }
    }
}
