//! MiD and RTE metrics and the dataset evaluation harness.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Result, TtcError};
use crate::estimate::Estimator;
use crate::sequence::Sequence;
use crate::ttc::{convert_scale_ratio_fps, truncate_ttc, ttc_interval, ScaleRatio, TtcInterval, TtcSeconds, REFERENCE_FPS};

/// `|ln a - ln b| * 1e4` on ratios already expressed at 10 Hz.
pub fn mid_10hz(alpha_hat: ScaleRatio, alpha_gt: ScaleRatio) -> f64 {
    (alpha_gt.value().ln() - alpha_hat.value().ln()).abs() * 1e4
}

/// Motion-in-depth error of two ratios measured at `gap` frames of a `fps`
/// stream, compared after conversion to 10 Hz.
pub fn mid_metric(alpha_hat: ScaleRatio, alpha_gt: ScaleRatio, fps: f64, gap: u32) -> Result<f64> {
    let from = fps / gap as f64;
    let a = convert_scale_ratio_fps(alpha_hat, from, REFERENCE_FPS)?;
    let b = convert_scale_ratio_fps(alpha_gt, from, REFERENCE_FPS)?;
    Ok(mid_10hz(a, b))
}

/// Relative TTC error in percent after truncating both values. `None` when
/// the truncated ground truth is zero.
pub fn rte_metric(tau_hat: TtcSeconds, tau_gt: TtcSeconds) -> Option<f64> {
    let gt = truncate_ttc(tau_gt).value();
    let hat = truncate_ttc(tau_hat).value();
    if gt == 0.0 {
        return None;
    }
    Some(((gt - hat) / gt).abs() * 100.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceRecord {
    pub id: String,
    pub interval: TtcInterval,
    pub tau_gt: f64,
    pub alpha_gt_10hz: f64,
    pub tau_hat: Option<f64>,
    pub alpha_hat_10hz: Option<f64>,
    pub mid: Option<f64>,
    pub rte: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    /// Sequences in the bucket, failures included.
    pub count: usize,
    pub failures: usize,
    /// Mean MiD over successful sequences; `None` if there are none.
    pub mid: Option<f64>,
    pub rte: Option<f64>,
    /// Sequences left out of the RTE mean because the ground truth was zero.
    pub rte_excluded: usize,
}

impl MetricSummary {
    fn from_records<'a>(records: impl Iterator<Item = &'a SequenceRecord>) -> Self {
        let mut s = MetricSummary::default();
        let (mut mid_sum, mut mid_n, mut rte_sum, mut rte_n) = (0.0, 0usize, 0.0, 0usize);
        for r in records {
            s.count += 1;
            match (r.error.is_some(), r.mid) {
                (false, Some(m)) => {
                    mid_sum += m;
                    mid_n += 1;
                    match r.rte {
                        Some(v) => {
                            rte_sum += v;
                            rte_n += 1;
                        }
                        None => s.rte_excluded += 1,
                    }
                }
                _ => s.failures += 1,
            }
        }
        s.mid = (mid_n > 0).then(|| mid_sum / mid_n as f64);
        s.rte = (rte_n > 0).then(|| rte_sum / rte_n as f64);
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalSummary {
    pub interval: TtcInterval,
    #[serde(flatten)]
    pub summary: MetricSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub estimator: String,
    pub config_hash: String,
    pub frame_gap: u32,
    pub overall: MetricSummary,
    /// Crucial, small, large, negative.
    pub intervals: Vec<IntervalSummary>,
    /// Sorted by sequence id.
    pub records: Vec<SequenceRecord>,
}

pub const TABLE_ORDER: [TtcInterval; 4] =
    [TtcInterval::Crucial, TtcInterval::Small, TtcInterval::Large, TtcInterval::Negative];

impl EvaluationReport {
    pub fn from_records(estimator: String, config_hash: String, frame_gap: u32, mut records: Vec<SequenceRecord>) -> Self {
        records.sort_by(|a, b| a.id.cmp(&b.id));
        let overall = MetricSummary::from_records(records.iter());
        let intervals = TABLE_ORDER
            .iter()
            .map(|&iv| IntervalSummary {
                interval: iv,
                summary: MetricSummary::from_records(records.iter().filter(|r| r.interval == iv)),
            })
            .collect();
        Self { estimator, config_hash, frame_gap, overall, intervals, records }
    }

    pub fn interval(&self, iv: TtcInterval) -> &MetricSummary {
        &self.intervals.iter().find(|s| s.interval == iv).expect("all intervals present").summary
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn table_row(&self) -> Vec<Option<f64>> {
        let mut row = vec![self.overall.mid];
        row.extend(TABLE_ORDER.iter().map(|&iv| self.interval(iv).mid));
        row.push(self.overall.rte);
        row.extend(TABLE_ORDER.iter().map(|&iv| self.interval(iv).rte));
        row
    }
}

pub fn table_header() -> Vec<String> {
    let mut h = vec!["MiD".to_string()];
    h.extend(TABLE_ORDER.iter().map(|iv| format!("MiD_{}", iv.suffix())));
    h.push("RTE".into());
    h.extend(TABLE_ORDER.iter().map(|iv| format!("RTE_{}", iv.suffix())));
    h
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.2}")).unwrap_or_default()
}

/// One row per report: estimator, then MiD and RTE overall and per interval.
pub fn table_csv(reports: &[EvaluationReport]) -> String {
    let mut out = String::from("estimator,");
    out.push_str(&table_header().join(","));
    out.push('\n');
    for r in reports {
        let cells: Vec<String> = r.table_row().into_iter().map(cell).collect();
        let _ = writeln!(out, "{},{}", r.estimator, cells.join(","));
    }
    out
}

/// Fixed-width rendering of the same grid for terminals.
pub fn format_table(reports: &[EvaluationReport]) -> String {
    let header = table_header();
    let name_w = reports.iter().map(|r| r.estimator.len()).max().unwrap_or(9).max(9);
    let mut out = format!("{:<name_w$}", "estimator");
    for h in &header {
        let _ = write!(out, " {h:>8}");
    }
    out.push('\n');
    for r in reports {
        let _ = write!(out, "{:<name_w$}", r.estimator);
        for v in r.table_row() {
            let _ = write!(out, " {:>8}", cell(v));
        }
        out.push('\n');
    }
    out
}

/// Scores one labelled sequence. Estimator failures become failure rows.
pub fn evaluate_sequence(seq: &Sequence, estimator: &dyn Estimator) -> Result<SequenceRecord> {
    let cfg = estimator.config();
    let label = seq
        .label
        .as_ref()
        .ok_or_else(|| TtcError::InvalidSequence(format!("sequence {} has no label", seq.id)))?;
    let tau_gt = truncate_ttc(TtcSeconds(label.tau_s));
    let alpha_gt = seq.alpha_gt_10hz(cfg.frame_gap, cfg.reference)?;
    let mut rec = SequenceRecord {
        id: seq.id.clone(),
        interval: ttc_interval(tau_gt),
        tau_gt: tau_gt.value(),
        alpha_gt_10hz: alpha_gt.value(),
        tau_hat: None,
        alpha_hat_10hz: None,
        mid: None,
        rte: None,
        error: None,
    };
    match estimator.estimate(seq) {
        Ok(e) => {
            rec.tau_hat = Some(e.tau_hat.value());
            rec.alpha_hat_10hz = Some(e.alpha_hat_10hz.value());
            rec.mid = Some(mid_10hz(e.alpha_hat_10hz, alpha_gt));
            rec.rte = rte_metric(e.tau_hat, tau_gt);
        }
        Err(err) => {
            log::warn!("{}: estimator failed on {}: {err}", estimator.id(), seq.id);
            rec.error = Some(err.to_string());
        }
    }
    Ok(rec)
}

/// Runs `estimator` over every sequence. Sequences are consumed one at a
/// time, so datasets larger than memory can be streamed from disk.
pub fn evaluate_dataset<I>(sequences: I, estimator: &dyn Estimator, config_hash: &str) -> Result<EvaluationReport>
where
    I: IntoIterator<Item = Result<Sequence>>,
{
    let mut records = Vec::new();
    for seq in sequences {
        records.push(evaluate_sequence(&seq?, estimator)?);
    }
    Ok(EvaluationReport::from_records(estimator.id(), config_hash.to_string(), estimator.config().frame_gap, records))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimate::{DetectionEstimator, DetectionMode, ScaleSearchConfig, SimilarityProfile};
    use crate::synth::{ConstantVelocitySuite, SynthOptions, CameraModel};
    use proptest::prelude::*;

    fn r(v: f64) -> ScaleRatio {
        ScaleRatio::new(v).unwrap()
    }

    #[test]
    fn mid_examples() {
        assert_eq!(mid_metric(r(0.93), r(0.93), 10.0, 1).unwrap(), 0.0);
        let m = mid_metric(r(0.96), r(0.95), 10.0, 1).unwrap();
        assert!((m - 104.7).abs() < 0.05, "{m}");
        assert!((m - (0.96f64.ln() - 0.95f64.ln()).abs() * 1e4).abs() < 1e-9);
        // a gap-5 pair against its own 10 Hz equivalents
        let (a, b) = (r(0.8), r(0.85));
        let a10 = convert_scale_ratio_fps(a, 2.0, 10.0).unwrap();
        let b10 = convert_scale_ratio_fps(b, 2.0, 10.0).unwrap();
        assert_eq!(mid_metric(a, b, 10.0, 5).unwrap(), mid_10hz(a10, b10));
    }

    #[test]
    fn rte_examples() {
        assert!((rte_metric(TtcSeconds(2.2), TtcSeconds(2.0)).unwrap() - 10.0).abs() < 1e-9);
        assert_eq!(rte_metric(TtcSeconds(4.0), TtcSeconds(4.0)), Some(0.0));
        assert!((rte_metric(TtcSeconds(40.0), TtcSeconds(2.0)).unwrap() - 900.0).abs() < 1e-9);
        assert_eq!(rte_metric(TtcSeconds(1.0), TtcSeconds(0.0)), None);
    }

    proptest! {
        #[test]
        fn mid_symmetric_and_scale_invariant(a in 0.5f64..1.6, b in 0.5f64..1.6, k in 0.1f64..10.0) {
            let m = mid_10hz(r(a), r(b));
            prop_assert!((m - mid_10hz(r(b), r(a))).abs() < 1e-9);
            prop_assert!((m - mid_10hz(r(k * a), r(k * b))).abs() < 1e-7);
            prop_assert!(m >= 0.0);
            prop_assert_eq!(mid_10hz(r(a), r(a)), 0.0);
        }

        #[test]
        fn rte_non_negative(h in -30.0f64..30.0, g in -20.0f64..20.0) {
            prop_assume!(g != 0.0);
            let v = rte_metric(TtcSeconds(h), TtcSeconds(g)).unwrap();
            prop_assert!(v >= 0.0);
            prop_assert_eq!(v == 0.0, truncate_ttc(TtcSeconds(h)).value() == g);
        }
    }

    /// Returns the ground truth for every sequence.
    struct Perfect(ScaleSearchConfig);

    impl Estimator for Perfect {
        fn id(&self) -> String {
            "perfect".into()
        }
        fn config(&self) -> &ScaleSearchConfig {
            &self.0
        }
        fn estimate_gap(&self, seq: &Sequence, gap: u32) -> Result<(f64, SimilarityProfile, bool)> {
            let a = seq.alpha_gt(gap, self.0.reference)?.value();
            let p = SimilarityProfile { kind: crate::estimate::ProfileKind::BoxRatio, alphas: vec![a], scores: vec![1.0], shifts: vec![(0, 0)] };
            Ok((a, p, false))
        }
    }

    fn toy_suite(n: usize) -> Vec<Sequence> {
        let opts = SynthOptions {
            camera: CameraModel { f: 300.0, cx: 80.0, cy: 60.0, width: 160, height: 120 },
            ..SynthOptions::default()
        };
        let suite = ConstantVelocitySuite { count: n, tau_range: (-12.0, 18.0), depth_range: (15.0, 25.0), ..Default::default() };
        suite.iter(&opts).collect()
    }

    #[test]
    fn perfect_estimator_scores_zero_mid() {
        let seqs = toy_suite(20);
        let rep = evaluate_dataset(seqs.into_iter().map(Ok), &Perfect(ScaleSearchConfig::pixel()), "h").unwrap();
        assert_eq!(rep.overall.count, 20);
        assert_eq!(rep.overall.failures, 0);
        assert!(rep.overall.mid.unwrap() < 1e-9);
    }

    #[test]
    fn interval_counts_match_hand_count() {
        let seqs = toy_suite(20);
        let mut hand = [0usize; 4];
        for s in &seqs {
            let t = s.label.as_ref().unwrap().tau_s;
            let t = t.clamp(-20.0, 20.0);
            let k = if t < 0.0 { 3 } else if t < 3.0 { 0 } else if t < 6.0 { 1 } else { 2 };
            hand[k] += 1;
        }
        let det = DetectionEstimator::new(ScaleSearchConfig::pixel(), DetectionMode::SqrtArea);
        let rep = evaluate_dataset(seqs.into_iter().map(Ok), &det, "h").unwrap();
        let counts: Vec<usize> = TABLE_ORDER.iter().map(|&iv| rep.interval(iv).count).collect();
        assert_eq!(counts, hand.to_vec());
        assert_eq!(counts.iter().sum::<usize>(), rep.overall.count);
        // overall mean is the count-weighted mean of the buckets
        let weighted: f64 = rep.intervals.iter().filter_map(|s| s.summary.mid.map(|m| m * s.summary.count as f64)).sum();
        assert!((weighted / 20.0 - rep.overall.mid.unwrap()).abs() < 1e-9);
        assert!(rep.overall.mid.unwrap() < 10.0);
    }

    #[test]
    fn report_serialization_is_stable() {
        let seqs = toy_suite(5);
        let det = DetectionEstimator::new(ScaleSearchConfig::pixel(), DetectionMode::SqrtArea);
        let a = evaluate_dataset(seqs.clone().into_iter().map(Ok), &det, "abc").unwrap();
        let b = evaluate_dataset(seqs.into_iter().rev().map(Ok), &det, "abc").unwrap();
        assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
        assert_eq!(EvaluationReport::from_json(&a.to_json().unwrap()).unwrap(), a);
        let csv = table_csv(&[a]);
        assert!(csv.starts_with("estimator,MiD,MiD_c,MiD_s,MiD_l,MiD_n,RTE,RTE_c,RTE_s,RTE_l,RTE_n\n"));
        assert_eq!(csv.lines().count(), 2);
    }

    #[test]
    fn failures_are_counted_not_averaged() {
        let mut seqs = toy_suite(4);
        seqs[1].frames[0].bbox.w = 0.0;
        let det = DetectionEstimator::new(ScaleSearchConfig::pixel(), DetectionMode::SqrtArea);
        let rep = evaluate_dataset(seqs.into_iter().map(Ok), &det, "h").unwrap();
        assert_eq!(rep.overall.failures, 1);
        assert_eq!(rep.overall.count, 4);
        assert!(rep.records.iter().filter(|r| r.error.is_some()).count() == 1);
    }
}
