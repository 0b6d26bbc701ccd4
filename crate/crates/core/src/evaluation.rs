//! Offline scoring of detector output against ground truth, plus latency
//! summaries for benchmark runs.

use std::time::Duration;

use thiserror::Error;

use crate::domain::AgentId;

/// One scored sample joined with its ground-truth label. The identity fields
/// are carried for reporting; the curve math orders by score alone.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledScore {
    pub frame: u64,
    pub agent: AgentId,
    pub score: f64,
    pub label: bool,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EvalError {
    #[error("ROC needs both classes, got {positives} positive / {negatives} negative samples")]
    DegenerateLabels { positives: usize, negatives: usize },
}

/// One operating point. `threshold` is the lowest score still classified
/// positive at this point (strict `>` elsewhere means scores equal to the
/// threshold are negative).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RocPoint {
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

/// ROC curve from (0,0) down the sorted scores to (1,1), with tied scores
/// collapsed into single points.
pub fn roc_curve(samples: &[LabeledScore]) -> Result<Vec<RocPoint>, EvalError> {
    let positives = samples.iter().filter(|s| s.label).count();
    let negatives = samples.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(EvalError::DegenerateLabels { positives, negatives });
    }

    let mut sorted: Vec<&LabeledScore> = samples.iter().collect();
    sorted.sort_by(|a, b| b.score.total_cmp(&a.score));

    let mut points = vec![RocPoint {
        threshold: f64::INFINITY,
        fpr: 0.0,
        tpr: 0.0,
    }];
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut i = 0;
    while i < sorted.len() {
        let score = sorted[i].score;
        while i < sorted.len() && sorted[i].score == score {
            if sorted[i].label {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(RocPoint {
            threshold: score,
            fpr: fp as f64 / negatives as f64,
            tpr: tp as f64 / positives as f64,
        });
    }
    Ok(points)
}

/// Trapezoidal area under the curve.
pub fn auc(points: &[RocPoint]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].fpr - w[0].fpr) * (w[0].tpr + w[1].tpr) / 2.0)
        .sum()
}

/// Convenience: ROC then AUC.
pub fn area_under_roc(samples: &[LabeledScore]) -> Result<f64, EvalError> {
    Ok(auc(&roc_curve(samples)?))
}

/// The rate where false positives equal false negatives, linearly
/// interpolated between the two operating points straddling the crossing.
pub fn equal_error_rate(points: &[RocPoint]) -> f64 {
    // f = fpr - (1 - tpr) rises monotonically from -1 at (0,0) to +1 at (1,1).
    for w in points.windows(2) {
        let f0 = w[0].fpr - (1.0 - w[0].tpr);
        let f1 = w[1].fpr - (1.0 - w[1].tpr);
        if f0 <= 0.0 && f1 >= 0.0 {
            if (f1 - f0).abs() < 1e-15 {
                return w[0].fpr;
            }
            let t = -f0 / (f1 - f0);
            return w[0].fpr + t * (w[1].fpr - w[0].fpr);
        }
    }
    // Curves from roc_curve always cross; treat anything else as total failure.
    1.0
}

/// Fraction of samples classified correctly with a strict `score > threshold`
/// positive rule.
pub fn accuracy_at(samples: &[LabeledScore], threshold: f64) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    let correct = samples
        .iter()
        .filter(|s| (s.score > threshold) == s.label)
        .count();
    correct as f64 / samples.len() as f64
}

/// Latency distribution of per-frame processing.
#[derive(Clone, Copy, Debug)]
pub struct TimingReport {
    pub samples: usize,
    pub median: Duration,
    pub p95: Duration,
    pub max: Duration,
}

/// Order statistics over raw per-frame durations. Returns `None` when empty.
pub fn summarize_timings(durations: &[Duration]) -> Option<TimingReport> {
    if durations.is_empty() {
        return None;
    }
    let mut sorted = durations.to_vec();
    sorted.sort();
    let n = sorted.len();
    let median = sorted[(n - 1) / 2];
    let p95_index = ((n as f64 * 0.95).ceil() as usize).clamp(1, n) - 1;
    Some(TimingReport {
        samples: n,
        median,
        p95: sorted[p95_index],
        max: sorted[n - 1],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ls(score: f64, label: bool) -> LabeledScore {
        LabeledScore {
            frame: 0,
            agent: AgentId::new("a"),
            score,
            label,
        }
    }

    /// Pairwise ranking probability, the textbook AUC definition, written
    /// without reference to the ROC construction.
    fn pairwise_auc(samples: &[LabeledScore]) -> f64 {
        let mut wins = 0.0;
        let mut pairs = 0.0;
        for p in samples.iter().filter(|s| s.label) {
            for n in samples.iter().filter(|s| !s.label) {
                pairs += 1.0;
                if p.score > n.score {
                    wins += 1.0;
                } else if p.score == n.score {
                    wins += 0.5;
                }
            }
        }
        wins / pairs
    }

    #[test]
    fn perfect_separation_scores_one() {
        let samples = vec![ls(0.9, true), ls(0.8, true), ls(0.2, false), ls(0.1, false)];
        let points = roc_curve(&samples).unwrap();
        assert!((auc(&points) - 1.0).abs() < 1e-12);
        assert!(equal_error_rate(&points) < 1e-12);
    }

    #[test]
    fn inverted_separation_scores_zero() {
        let samples = vec![ls(0.1, true), ls(0.2, true), ls(0.8, false), ls(0.9, false)];
        assert!(area_under_roc(&samples).unwrap() < 1e-12);
    }

    #[test]
    fn hand_computed_interleaved_case() {
        let samples = vec![ls(0.9, true), ls(0.8, false), ls(0.7, true), ls(0.6, false)];
        let points = roc_curve(&samples).unwrap();
        assert_eq!(points.len(), 5);
        assert!((auc(&points) - 0.75).abs() < 1e-12);
    }

    #[test]
    fn all_tied_scores_give_exactly_half() {
        let samples = vec![ls(0.5, true), ls(0.5, false), ls(0.5, true), ls(0.5, false)];
        let points = roc_curve(&samples).unwrap();
        // Single jump from (0,0) to (1,1): the chance diagonal.
        assert_eq!(points.len(), 2);
        assert!((auc(&points) - 0.5).abs() < 1e-15);
        assert!((equal_error_rate(&points) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn trapezoidal_auc_matches_pairwise_ranking_on_random_data() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for case in 0..100 {
            let n = rng.gen_range(4..60);
            let quantize = rng.gen_bool(0.5);
            let mut samples = Vec::with_capacity(n);
            let mut pos = 0;
            for i in 0..n {
                let label = if i == 0 {
                    true
                } else if i == 1 {
                    false
                } else {
                    rng.gen_bool(0.4)
                };
                pos += label as usize;
                let mut score: f64 = rng.gen_range(0.0..1.0);
                if quantize {
                    score = (score * 8.0).round() / 8.0;
                }
                samples.push(ls(score, label));
            }
            assert!(pos >= 1 && n - pos >= 1);
            let fast = area_under_roc(&samples).unwrap();
            let slow = pairwise_auc(&samples);
            assert!(
                (fast - slow).abs() < 1e-9,
                "case {case}: trapezoid {fast} vs pairwise {slow}"
            );
        }
    }

    #[test]
    fn single_class_input_is_rejected() {
        let samples = vec![ls(0.5, true), ls(0.4, true)];
        assert_eq!(
            roc_curve(&samples),
            Err(EvalError::DegenerateLabels {
                positives: 2,
                negatives: 0
            })
        );
        assert!(roc_curve(&[]).is_err());
    }

    #[test]
    fn eer_interpolates_between_operating_points() {
        // Points straddling the crossing: (0.2, 0.6) has f = -0.2,
        // (0.4, 0.9) has f = 0.3; crossing at t = 0.4 -> fpr = 0.28.
        let points = vec![
            RocPoint { threshold: f64::INFINITY, fpr: 0.0, tpr: 0.0 },
            RocPoint { threshold: 0.8, fpr: 0.2, tpr: 0.6 },
            RocPoint { threshold: 0.5, fpr: 0.4, tpr: 0.9 },
            RocPoint { threshold: 0.1, fpr: 1.0, tpr: 1.0 },
        ];
        assert!((equal_error_rate(&points) - 0.28).abs() < 1e-12);
    }

    #[test]
    fn accuracy_uses_strict_exceedance() {
        let samples = vec![ls(1.0, false), ls(1.5, true), ls(0.5, false), ls(0.9, true)];
        // At threshold 1.0: 1.0->negative (correct), 1.5->positive (correct),
        // 0.5->negative (correct), 0.9->negative (wrong).
        assert!((accuracy_at(&samples, 1.0) - 0.75).abs() < 1e-12);
        assert_eq!(accuracy_at(&[], 1.0), 0.0);
    }

    #[test]
    fn accuracy_extremes() {
        let samples = vec![ls(2.0, true), ls(0.1, false)];
        assert_eq!(accuracy_at(&samples, 1.0), 1.0);
        assert_eq!(accuracy_at(&samples, 5.0), 0.5, "everything negative");
    }

    #[test]
    fn timing_summary_picks_order_statistics() {
        let durations: Vec<Duration> = (1..=100).map(Duration::from_millis).collect();
        let report = summarize_timings(&durations).unwrap();
        assert_eq!(report.samples, 100);
        assert_eq!(report.median, Duration::from_millis(50));
        assert_eq!(report.p95, Duration::from_millis(95));
        assert_eq!(report.max, Duration::from_millis(100));
        assert!(summarize_timings(&[]).is_none());
    }

    #[test]
    fn timing_summary_is_order_independent() {
        let a = [3u64, 1, 2].map(Duration::from_millis);
        let b = [1u64, 2, 3].map(Duration::from_millis);
        let ra = summarize_timings(&a).unwrap();
        let rb = summarize_timings(&b).unwrap();
        assert_eq!(ra.median, rb.median);
        assert_eq!(ra.median, Duration::from_millis(2));
        assert_eq!(ra.max, rb.max);
    }
}
