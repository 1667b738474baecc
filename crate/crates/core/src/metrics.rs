//! Evaluation: map-based precision/recall, skeleton pairing, keypoint
//! recovery rate, scale-relative error and frame-difference statistics.
//!
//! Every ratio whose denominator is zero is reported as `None` and
//! serialized as `null`, never as 0.

use serde::{Deserialize, Serialize};

use crate::assignment::{hungarian, CostMatrix};
use crate::geometry::Point;
use crate::map_codec::{read_assoc, Grid};
use crate::skeleton::{skeleton_scale, Pose, SkeletonSpec};
use crate::tracker::FrameOutput;

pub const DEFAULT_PROB_CUTOFF: f64 = 0.5;
pub const DEFAULT_PAIR_GATE: f64 = 50.0;

fn ratio(num: f64, den: f64) -> Option<f64> {
    (den > 0.0).then(|| num / den)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PRCounts {
    /// Mean of the two counting directions, so possibly fractional.
    pub tp: f64,
    pub fp: f64,
    pub fn_: f64,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
}

impl PRCounts {
    fn finish(mut self) -> Self {
        self.precision = ratio(self.tp, self.tp + self.fp);
        self.recall = ratio(self.tp, self.tp + self.fn_);
        self
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PRReport {
    pub per_category: Vec<PRCounts>,
    pub overall: PRCounts,
}

/// Probability of a map at a sub-pixel location, zero outside the grid.
fn prob_at(map: &Grid, p: Point) -> f64 {
    read_assoc(map, p).unwrap_or(0.0)
}

/// Two-way precision/recall of candidate keypoints against ground truth.
///
/// A ground-truth keypoint counts as found when the predicted map reaches
/// `cutoff` at its location; a candidate counts as correct when the
/// ground-truth map reaches `cutoff` at its location. TP averages both counts.
pub fn precision_recall(
    gt_keypoints: &[Vec<Point>],
    candidates: &[Vec<Point>],
    gt_maps: &[Grid],
    pred_maps: &[Grid],
    cutoff: f64,
) -> PRReport {
    let n = gt_maps.len().min(pred_maps.len());
    let mut per_category = Vec::with_capacity(n);
    let mut overall = PRCounts::default();
    for k in 0..n {
        let gt = gt_keypoints.get(k).map(Vec::as_slice).unwrap_or(&[]);
        let cand = candidates.get(k).map(Vec::as_slice).unwrap_or(&[]);
        let found = gt.iter().filter(|&&p| prob_at(&pred_maps[k], p) >= cutoff).count() as f64;
        let correct = cand.iter().filter(|&&p| prob_at(&gt_maps[k], p) >= cutoff).count() as f64;
        let c = PRCounts {
            tp: (found + correct) / 2.0,
            fp: cand.len() as f64 - correct,
            fn_: gt.len() as f64 - found,
            ..Default::default()
        };
        overall.tp += c.tp;
        overall.fp += c.fp;
        overall.fn_ += c.fn_;
        per_category.push(c.finish());
    }
    PRReport { per_category, overall: overall.finish() }
}

/// Mean distance over categories present in both poses.
pub fn pose_distance(a: &Pose, b: &Pose) -> Option<f64> {
    let d: Vec<f64> = a.present().filter_map(|(i, p)| b.get(i).map(|q| p.distance(q))).collect();
    (!d.is_empty()).then(|| d.iter().sum::<f64>() / d.len() as f64)
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Pairing {
    /// (ground-truth index, prediction index, cost)
    pub pairs: Vec<(usize, usize, f64)>,
    pub unpaired_gt: Vec<usize>,
    pub unpaired_pred: Vec<usize>,
}

/// Optimal one-to-one pairing of predicted with ground-truth skeletons.
pub fn pair_skeletons(gt: &[Pose], pred: &[Pose], max_loss: f64) -> Pairing {
    let cost = CostMatrix::from_fn(gt.len(), pred.len(), |r, c| {
        pose_distance(&gt[r], &pred[c]).unwrap_or(f64::INFINITY)
    });
    let pairs: Vec<(usize, usize, f64)> = hungarian(&cost, Some(max_loss))
        .into_iter()
        .map(|(r, c)| (r, c, cost.get(r, c)))
        .collect();
    let unpaired_gt = (0..gt.len()).filter(|i| !pairs.iter().any(|p| p.0 == *i)).collect();
    let unpaired_pred = (0..pred.len()).filter(|i| !pairs.iter().any(|p| p.1 == *i)).collect();
    Pairing { pairs, unpaired_gt, unpaired_pred }
}

/// Counts toward the keypoint recovery rate, accumulable over frames.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RecoveryCounts {
    pub recovered: Vec<u64>,
    pub total: Vec<u64>,
}

impl RecoveryCounts {
    pub fn new(categories: usize) -> Self {
        RecoveryCounts { recovered: vec![0; categories], total: vec![0; categories] }
    }

    /// Adds one frame. Unpaired ground truth counts as missed.
    pub fn add(&mut self, gt: &[Pose], pred: &[Pose], pairing: &Pairing) {
        for pose in gt {
            for (i, _) in pose.present() {
                self.total[i] += 1;
            }
        }
        for &(g, p, _) in &pairing.pairs {
            for (i, _) in gt[g].present() {
                if pred[p].get(i).is_some() {
                    self.recovered[i] += 1;
                }
            }
        }
    }

    pub fn per_category(&self) -> Vec<Option<f64>> {
        self.recovered.iter().zip(&self.total).map(|(&r, &t)| ratio(r as f64, t as f64)).collect()
    }

    pub fn overall(&self) -> Option<f64> {
        ratio(self.recovered.iter().sum::<u64>() as f64, self.total.iter().sum::<u64>() as f64)
    }
}

/// Per-category recovery rate for a single frame.
pub fn recovery_rate(gt: &[Pose], pred: &[Pose], pairing: &Pairing, categories: usize) -> Vec<Option<f64>> {
    let mut c = RecoveryCounts::new(categories);
    c.add(gt, pred, pairing);
    c.per_category()
}

/// Per-category distances between paired keypoints divided by the ground
/// truth skeleton's scale. Pairs whose truth has no scale are skipped.
pub fn relative_error(gt: &[Pose], pred: &[Pose], pairing: &Pairing, spec: &SkeletonSpec) -> Vec<Vec<f64>> {
    let mut out = vec![Vec::new(); spec.len()];
    for &(g, p, _) in &pairing.pairs {
        let Some(scale) = skeleton_scale(spec, &gt[g]).filter(|s| *s > 0.0) else {
            log::warn!("ground-truth skeleton {g} has no scale; excluded from relative error");
            continue;
        };
        for (i, truth) in gt[g].present() {
            if let Some(q) = pred[p].get(i) {
                out[i].push(q.distance(truth) / scale);
            }
        }
    }
    out
}

/// Which coordinate set of a track record to difference.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CoordSet {
    Observed,
    Posterior,
}

/// Per-category displacement of every tracklet present in both frames.
pub fn frame_difference(prev: &FrameOutput, next: &FrameOutput, set: CoordSet, categories: usize) -> Vec<Vec<f64>> {
    let mut out = vec![Vec::new(); categories];
    for b in &next.tracks {
        let Some(a) = prev.tracks.iter().find(|a| a.id == b.id) else {
            continue;
        };
        let (ca, cb) = match set {
            CoordSet::Observed => (&a.observed, &b.observed),
            CoordSet::Posterior => (&a.posterior, &b.posterior),
        };
        for (i, (pa, pb)) in ca.iter().zip(cb).enumerate().take(categories) {
            if let (Some(pa), Some(pb)) = (pa, pb) {
                out[i].push(pa.distance(*pb));
            }
        }
    }
    out
}

/// Quantile with linear interpolation between order statistics
/// (position q·(n−1) in the sorted sample).
pub fn quantile(samples: &[f64], q: f64) -> Option<f64> {
    if samples.is_empty() || !(0.0..=1.0).contains(&q) {
        return None;
    }
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let pos = q * (s.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    Some(s[lo] + (s[hi] - s[lo]) * (pos - lo as f64))
}

pub fn mean(samples: &[f64]) -> Option<f64> {
    (!samples.is_empty()).then(|| samples.iter().sum::<f64>() / samples.len() as f64)
}

/// Sample standard deviation (n − 1 denominator).
pub fn std_dev(samples: &[f64]) -> Option<f64> {
    let m = mean(samples)?;
    (samples.len() > 1)
        .then(|| (samples.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (samples.len() - 1) as f64).sqrt())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Quantiles {
    pub q05: Option<f64>,
    pub q50: Option<f64>,
    pub q95: Option<f64>,
}

impl Quantiles {
    pub fn of(samples: &[f64]) -> Self {
        Quantiles { q05: quantile(samples, 0.05), q50: quantile(samples, 0.5), q95: quantile(samples, 0.95) }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CategoryReport {
    pub category: String,
    pub recovery: Option<f64>,
    pub rel_error_mean: Option<f64>,
    pub rel_error_std: Option<f64>,
    pub frame_diff: Quantiles,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub frames: usize,
    pub recovery_overall: Option<f64>,
    pub rel_error_overall: Option<f64>,
    pub categories: Vec<CategoryReport>,
    /// Raw frame-difference samples per category, for plotting.
    pub frame_diff_samples: Vec<Vec<f64>>,
}

/// Accumulates an [`EvalReport`] frame by frame.
#[derive(Clone, Debug)]
pub struct Evaluator {
    names: Vec<String>,
    pair_gate: f64,
    recovery: RecoveryCounts,
    rel_error: Vec<Vec<f64>>,
    frame_diff: Vec<Vec<f64>>,
    frames: usize,
}

impl Evaluator {
    pub fn new(spec: &SkeletonSpec, pair_gate: f64) -> Self {
        let n = spec.len();
        Evaluator {
            names: spec.categories().to_vec(),
            pair_gate,
            recovery: RecoveryCounts::new(n),
            rel_error: vec![Vec::new(); n],
            frame_diff: vec![Vec::new(); n],
            frames: 0,
        }
    }

    pub fn add_frame(&mut self, spec: &SkeletonSpec, gt: &[Pose], pred: &[Pose]) -> Pairing {
        let pairing = pair_skeletons(gt, pred, self.pair_gate);
        self.recovery.add(gt, pred, &pairing);
        for (acc, new) in self.rel_error.iter_mut().zip(relative_error(gt, pred, &pairing, spec)) {
            acc.extend(new);
        }
        self.frames += 1;
        pairing
    }

    pub fn add_frame_differences(&mut self, samples: Vec<Vec<f64>>) {
        for (acc, new) in self.frame_diff.iter_mut().zip(samples) {
            acc.extend(new);
        }
    }

    pub fn recovery(&self) -> &RecoveryCounts {
        &self.recovery
    }

    pub fn finish(self) -> EvalReport {
        let rates = self.recovery.per_category();
        let all_err: Vec<f64> = self.rel_error.iter().flatten().copied().collect();
        let categories = self
            .names
            .iter()
            .enumerate()
            .map(|(i, name)| CategoryReport {
                category: name.clone(),
                recovery: rates[i],
                rel_error_mean: mean(&self.rel_error[i]),
                rel_error_std: std_dev(&self.rel_error[i]),
                frame_diff: Quantiles::of(&self.frame_diff[i]),
            })
            .collect();
        EvalReport {
            frames: self.frames,
            recovery_overall: self.recovery.overall(),
            rel_error_overall: mean(&all_err),
            categories,
            frame_diff_samples: self.frame_diff,
        }
    }
}

/// Per-category residual variance (per axis) of paired predictions; the
/// usual source of the tracker's keypoint variances.
pub fn residual_variances(pairs: &[(Pose, Pose)], categories: usize) -> Vec<Option<f64>> {
    let mut acc = vec![(0.0, 0usize); categories];
    for (gt, pred) in pairs {
        for (i, t) in gt.present() {
            if let Some(p) = pred.get(i) {
                let d = p - t;
                acc[i].0 += d.x * d.x + d.y * d.y;
                acc[i].1 += 2;
            }
        }
    }
    acc.into_iter().map(|(s, n)| ratio(s, n as f64)).collect()
}
