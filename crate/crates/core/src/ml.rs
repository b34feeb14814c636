//! Training units and evaluation: cylinder sampling, tree mixing
//! augmentation, instance and semantic segmentation metrics.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rustc_hash::FxHashMap;
use serde::{Deserialize, Serialize};

use crate::cloud_io::{write_cloud, CloudFormat, LidarPoint, PointCloud, Provenance};
use crate::dataset::Plot;
use crate::error::{Error, Result};
use crate::geom::{Rect, Vec3};
use crate::labels::Semantic;
use crate::rng::{purpose, Stream};

pub const DEFAULT_RADIUS: f64 = 8.0;
pub const DEFAULT_STRIDE: f64 = 11.0;
pub const DEFAULT_MIX_FRACTION: f64 = 0.30;
pub const DEFAULT_IOU_THRESHOLD: f64 = 0.5;

#[derive(Clone, Debug, PartialEq)]
pub struct CylinderSample {
    pub center: [f64; 2],
    pub radius: f64,
    pub points: Vec<LidarPoint>,
    pub source_plot: String,
}

impl CylinderSample {
    pub fn contains(&self, p: &Vec3) -> bool {
        let dx = p.x - self.center[0];
        let dy = p.y - self.center[1];
        dx * dx + dy * dy <= self.radius * self.radius
    }

    /// Distinct non-zero instance ids, ascending.
    pub fn tree_ids(&self) -> Vec<u32> {
        let ids: BTreeSet<u32> = self.points.iter().map(|p| p.instance_id).filter(|&i| i != 0).collect();
        ids.into_iter().collect()
    }

    pub fn sidecar(&self) -> CylinderSidecar {
        CylinderSidecar {
            center: self.center,
            radius: self.radius,
            source_plot: self.source_plot.clone(),
            point_count: self.points.len() as u64,
        }
    }
}

/// Metadata stored next to a serialized cylinder sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CylinderSidecar {
    pub center: [f64; 2],
    pub radius: f64,
    pub source_plot: String,
    pub point_count: u64,
}

fn cut_cylinder(plot: &Plot, source: &str, center: [f64; 2], radius: f64) -> CylinderSample {
    let mut s = CylinderSample {
        center,
        radius,
        points: Vec::new(),
        source_plot: source.to_string(),
    };
    s.points = plot.cloud.points.iter().filter(|p| s.contains(&p.position)).copied().collect();
    s
}

/// Center `i` of a random draw: `x = min_x + w * u0`, `y = min_y + h * u1`
/// with `u0, u1` the first two values of `Stream(seed, [CYLINDER, i])`.
pub fn random_centers(bounds: &Rect, count: usize, seed: u64) -> Vec<[f64; 2]> {
    (0..count as u64)
        .map(|i| {
            let mut s = Stream::new(seed, &[purpose::CYLINDER, i]);
            let u0 = s.next_f64();
            let u1 = s.next_f64();
            [bounds.min_x + bounds.width() * u0, bounds.min_y + bounds.height() * u1]
        })
        .collect()
}

pub fn sample_cylinders_random(plot: &Plot, source: &str, radius: f64, count: usize, seed: u64) -> Result<Vec<CylinderSample>> {
    check_radius(radius)?;
    Ok(random_centers(&plot.bounds, count, seed)
        .into_iter()
        .map(|c| cut_cylinder(plot, source, c, radius))
        .collect())
}

fn check_radius(radius: f64) -> Result<()> {
    if !(radius > 0.0) || !radius.is_finite() {
        return Err(Error::Validation(format!("cylinder radius must be > 0, got {radius}")));
    }
    Ok(())
}

/// Lattice positions along one axis of length `len` starting at `lo`.
///
/// An axis no longer than `2r` gets one centered cylinder. Otherwise the
/// count is `ceil((len - r*sqrt2) / stride) + 1` and the lattice is centered,
/// which keeps every corner within `r` of a center when
/// `stride <= r*sqrt2`.
pub fn grid_axis(lo: f64, len: f64, radius: f64, stride: f64) -> Vec<f64> {
    if len <= 2.0 * radius {
        return vec![lo + len / 2.0];
    }
    let n = (((len - radius * std::f64::consts::SQRT_2) / stride).ceil() as i64 + 1).max(1) as usize;
    let first = lo + (len - (n - 1) as f64 * stride) / 2.0;
    (0..n).map(|i| first + i as f64 * stride).collect()
}

pub fn grid_centers(bounds: &Rect, radius: f64, stride: f64) -> Vec<[f64; 2]> {
    let xs = grid_axis(bounds.min_x, bounds.width(), radius, stride);
    let ys = grid_axis(bounds.min_y, bounds.height(), radius, stride);
    ys.iter().flat_map(|&y| xs.iter().map(move |&x| [x, y])).collect()
}

pub fn sample_cylinders_grid(plot: &Plot, source: &str, radius: f64, stride: f64) -> Result<Vec<CylinderSample>> {
    check_radius(radius)?;
    if !(stride > 0.0) {
        return Err(Error::Validation(format!("stride must be > 0, got {stride}")));
    }
    Ok(grid_centers(&plot.bounds, radius, stride)
        .into_iter()
        .map(|c| cut_cylinder(plot, source, c, radius))
        .collect())
}

/// Writes `<stem>.<ext>` with the points and `<stem>.toml` with the sidecar.
pub fn write_sample(sample: &CylinderSample, dir: &Path, stem: &str, format: CloudFormat) -> Result<()> {
    let cloud = PointCloud::new(
        sample.points.clone(),
        Rect::new(
            sample.center[0] - sample.radius,
            sample.center[1] - sample.radius,
            sample.center[0] + sample.radius,
            sample.center[1] + sample.radius,
        ),
        Provenance::Simulated,
    );
    write_cloud(&cloud, &dir.join(format!("{stem}.{}", format.extension())), format)?;
    let side = dir.join(format!("{stem}.toml"));
    let text = toml::to_string(&sample.sidecar()).expect("sidecar serializes");
    std::fs::write(&side, text).map_err(|e| Error::io(&side, e))
}

pub fn read_sidecar(path: &Path) -> Result<CylinderSidecar> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    toml::from_str(&text).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

/// Number of trees replaced when mixing `n` trees at `fraction`.
pub fn mix_count(n: usize, fraction: f64) -> usize {
    if fraction <= 0.0 {
        0
    } else {
        ((n as f64 * fraction).round() as usize).max(1)
    }
}

fn xy_centroid(points: &[&LidarPoint]) -> [f64; 2] {
    let n = points.len() as f64;
    let (sx, sy) = points.iter().fold((0.0, 0.0), |(x, y), p| (x + p.position.x, y + p.position.y));
    [sx / n, sy / n]
}

/// Ground height of `sample` near `at`: lowest non-tree ground point within
/// 2 m, else the nearest one, else `fallback`.
fn local_ground(sample: &CylinderSample, at: [f64; 2], fallback: f64) -> f64 {
    let ground: Vec<&LidarPoint> = sample
        .points
        .iter()
        .filter(|p| p.instance_id == 0 && matches!(p.semantic, Semantic::Ground | Semantic::NonTree))
        .collect();
    let d2 = |p: &LidarPoint| (p.position.x - at[0]).powi(2) + (p.position.y - at[1]).powi(2);
    let near = ground.iter().filter(|p| d2(p) <= 4.0).map(|p| p.position.z).fold(f64::INFINITY, f64::min);
    if near.is_finite() {
        return near;
    }
    ground
        .iter()
        .min_by(|a, b| d2(a).total_cmp(&d2(b)))
        .map_or(fallback, |p| p.position.z)
}

/// Replaces `k = mix_count(#trees(a), fraction)` trees of `a` with trees
/// from `b`.
///
/// Each inserted tree is translated so its xy centroid sits on the removed
/// tree's centroid and its lowest point on the local ground of `a`, gets a
/// fresh id above every id in `a`, and is clipped to `a`'s cylinder. Points
/// of `a` that belong to no replaced tree keep their order and come first.
pub fn tree_mix(a: &CylinderSample, b: &CylinderSample, fraction: f64, seed: u64) -> Result<CylinderSample> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::Augmentation(format!("mix fraction {fraction} outside [0, 1]")));
    }
    let a_ids = a.tree_ids();
    let b_ids = b.tree_ids();
    if a_ids.is_empty() {
        return Err(Error::Augmentation("sample a contains no tree instances".into()));
    }
    let k = mix_count(a_ids.len(), fraction);
    if k == 0 {
        return Ok(a.clone());
    }
    if b_ids.len() < k {
        return Err(Error::Augmentation(format!(
            "sample b has {} trees, {k} needed",
            b_ids.len()
        )));
    }

    let mut rng = Stream::new(seed, &[purpose::TREE_MIX]);
    let removed: Vec<u32> = rand::seq::index::sample(&mut rng, a_ids.len(), k).iter().map(|i| a_ids[i]).collect();
    let donors: Vec<u32> = rand::seq::index::sample(&mut rng, b_ids.len(), k).iter().map(|i| b_ids[i]).collect();
    let removed_set: BTreeSet<u32> = removed.iter().copied().collect();

    let mut points: Vec<LidarPoint> = a
        .points
        .iter()
        .filter(|p| !removed_set.contains(&p.instance_id))
        .copied()
        .collect();
    let mut next_id = a.points.iter().map(|p| p.instance_id).max().unwrap_or(0) + 1;

    for (old, donor) in removed.iter().zip(&donors) {
        let old_pts: Vec<&LidarPoint> = a.points.iter().filter(|p| p.instance_id == *old).collect();
        let donor_pts: Vec<&LidarPoint> = b.points.iter().filter(|p| p.instance_id == *donor).collect();
        let target = xy_centroid(&old_pts);
        let old_min_z = old_pts.iter().map(|p| p.position.z).fold(f64::INFINITY, f64::min);
        let ground = local_ground(a, target, old_min_z);
        let source = xy_centroid(&donor_pts);
        let donor_min_z = donor_pts.iter().map(|p| p.position.z).fold(f64::INFINITY, f64::min);
        let shift = Vec3::new(target[0] - source[0], target[1] - source[1], ground - donor_min_z);
        for p in donor_pts {
            let mut q = *p;
            q.position += shift;
            q.instance_id = next_id;
            if a.contains(&q.position) {
                points.push(q);
            }
        }
        next_id += 1;
    }

    Ok(CylinderSample {
        center: a.center,
        radius: a.radius,
        points,
        source_plot: a.source_plot.clone(),
    })
}

/// Per-point predictions aligned with a ground-truth cloud.
#[derive(Clone, Debug, PartialEq)]
pub struct SegmentationResult {
    pub instance: Vec<u32>,
    pub semantic: Vec<Semantic>,
}

impl SegmentationResult {
    pub fn from_points(points: &[LidarPoint]) -> Self {
        SegmentationResult {
            instance: points.iter().map(|p| p.instance_id).collect(),
            semantic: points.iter().map(|p| p.semantic).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.instance.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instance.is_empty()
    }

    /// Concatenates several results, renumbering instance ids so parts
    /// never share an id. Used for plot-level evaluation.
    pub fn concat(parts: &[SegmentationResult]) -> SegmentationResult {
        let mut out = SegmentationResult {
            instance: Vec::new(),
            semantic: Vec::new(),
        };
        let mut offset = 0u32;
        for part in parts {
            let top = part.instance.iter().copied().max().unwrap_or(0);
            out.instance.extend(part.instance.iter().map(|&i| if i == 0 { 0 } else { i + offset }));
            out.semantic.extend_from_slice(&part.semantic);
            offset += top;
        }
        out
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeanIouMode {
    /// Mean over true-positive pairs.
    #[default]
    Matched,
    /// Mean over every ground-truth instance, unmatched counting as 0.
    AllGroundTruth,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstanceMatch {
    pub pred: u32,
    pub gt: u32,
    pub iou: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstanceMetrics {
    pub mean_iou: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub true_positives: usize,
    pub pred_instances: usize,
    pub gt_instances: usize,
    pub matches: Vec<InstanceMatch>,
}

impl InstanceMetrics {
    pub fn to_report(&self) -> String {
        toml::to_string(self).expect("metrics serialize")
    }
}

pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    }
}

/// Every `(pred, gt, iou)` with non-empty overlap; instance 0 is ignored on
/// both sides. Also returns the instance counts per side.
pub fn instance_ious(pred: &[u32], gt: &[u32]) -> (Vec<InstanceMatch>, usize, usize) {
    let mut pred_size: FxHashMap<u32, u64> = FxHashMap::default();
    let mut gt_size: FxHashMap<u32, u64> = FxHashMap::default();
    let mut inter: FxHashMap<(u32, u32), u64> = FxHashMap::default();
    for (&p, &g) in pred.iter().zip(gt) {
        if p != 0 {
            *pred_size.entry(p).or_default() += 1;
        }
        if g != 0 {
            *gt_size.entry(g).or_default() += 1;
        }
        if p != 0 && g != 0 {
            *inter.entry((p, g)).or_default() += 1;
        }
    }
    let pairs = inter
        .into_iter()
        .map(|((p, g), i)| InstanceMatch {
            pred: p,
            gt: g,
            iou: i as f64 / (pred_size[&p] + gt_size[&g] - i) as f64,
        })
        .collect();
    (pairs, pred_size.len(), gt_size.len())
}

/// Greedy one-to-one matching in descending IoU order, ties broken by
/// `(pred, gt)`; pairs at or above `threshold` count as true positives.
pub fn greedy_match(mut pairs: Vec<InstanceMatch>, threshold: f64) -> Vec<InstanceMatch> {
    pairs.sort_by(|a, b| b.iou.total_cmp(&a.iou).then(a.pred.cmp(&b.pred)).then(a.gt.cmp(&b.gt)));
    let mut used_p = BTreeSet::new();
    let mut used_g = BTreeSet::new();
    let mut out = Vec::new();
    for m in pairs {
        if m.iou < threshold {
            break;
        }
        if !used_p.contains(&m.pred) && !used_g.contains(&m.gt) {
            used_p.insert(m.pred);
            used_g.insert(m.gt);
            out.push(m);
        }
    }
    out
}

pub fn evaluate_instances(
    pred: &SegmentationResult,
    gt: &SegmentationResult,
    threshold: f64,
    mode: MeanIouMode,
) -> Result<InstanceMetrics> {
    if pred.instance.len() != gt.instance.len() {
        return Err(Error::Validation(format!(
            "prediction has {} points, ground truth {}",
            pred.instance.len(),
            gt.instance.len()
        )));
    }
    let (pairs, n_pred, n_gt) = instance_ious(&pred.instance, &gt.instance);
    let matches = greedy_match(pairs, threshold);
    let tp = matches.len();
    let pct = |num: usize, den: usize| if den > 0 { 100.0 * num as f64 / den as f64 } else { 0.0 };
    let precision = pct(tp, n_pred);
    let recall = pct(tp, n_gt);
    let iou_sum: f64 = matches.iter().map(|m| m.iou).sum();
    let mean_iou = match mode {
        MeanIouMode::Matched if tp > 0 => 100.0 * iou_sum / tp as f64,
        MeanIouMode::AllGroundTruth if n_gt > 0 => 100.0 * iou_sum / n_gt as f64,
        _ => 0.0,
    };
    Ok(InstanceMetrics {
        mean_iou,
        precision,
        recall,
        f1: f1_score(precision, recall),
        true_positives: tp,
        pred_instances: n_pred,
        gt_instances: n_gt,
        matches,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: Semantic,
    pub iou: f64,
    pub precision: f64,
    pub recall: f64,
    pub support: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SemanticMetrics {
    pub accuracy: f64,
    pub classes: Vec<ClassMetrics>,
}

impl SemanticMetrics {
    pub fn to_report(&self) -> String {
        toml::to_string(self).expect("metrics serialize")
    }

    pub fn class(&self, c: Semantic) -> Option<&ClassMetrics> {
        self.classes.iter().find(|m| m.class == c)
    }
}

/// Confusion-matrix metrics in percent. Classes absent from both sides are
/// omitted.
pub fn evaluate_semantics(pred: &[Semantic], gt: &[Semantic]) -> Result<SemanticMetrics> {
    if pred.len() != gt.len() {
        return Err(Error::Validation(format!(
            "prediction has {} points, ground truth {}",
            pred.len(),
            gt.len()
        )));
    }
    let mut confusion: BTreeMap<(Semantic, Semantic), u64> = BTreeMap::new();
    for (&p, &g) in pred.iter().zip(gt) {
        *confusion.entry((g, p)).or_default() += 1;
    }
    let classes: BTreeSet<Semantic> = pred.iter().chain(gt).copied().collect();
    let pct = |n: u64, d: u64| if d > 0 { 100.0 * n as f64 / d as f64 } else { 0.0 };
    let correct: u64 = classes.iter().map(|&c| confusion.get(&(c, c)).copied().unwrap_or(0)).sum();
    let per_class = classes
        .iter()
        .map(|&c| {
            let tp = confusion.get(&(c, c)).copied().unwrap_or(0);
            let as_c: u64 = confusion.iter().filter(|((_, p), _)| *p == c).map(|(_, n)| n).sum();
            let is_c: u64 = confusion.iter().filter(|((g, _), _)| *g == c).map(|(_, n)| n).sum();
            ClassMetrics {
                class: c,
                iou: pct(tp, as_c + is_c - tp),
                precision: pct(tp, as_c),
                recall: pct(tp, is_c),
                support: is_c,
            }
        })
        .collect();
    Ok(SemanticMetrics {
        accuracy: pct(correct, gt.len() as u64),
        classes: per_class,
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    #[default]
    Unweighted,
    /// Weighted by each sample's point count.
    PointWeighted,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateMetrics {
    pub samples: usize,
    pub mean_iou: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Mean of per-sample metrics. `sizes` gives point counts for weighting.
pub fn aggregate_instance_metrics(per_sample: &[InstanceMetrics], sizes: &[usize], how: Aggregation) -> AggregateMetrics {
    let weights: Vec<f64> = match how {
        Aggregation::Unweighted => vec![1.0; per_sample.len()],
        Aggregation::PointWeighted => sizes.iter().map(|&n| n as f64).collect(),
    };
    let total: f64 = weights.iter().sum();
    let mean = |f: &dyn Fn(&InstanceMetrics) -> f64| {
        if total > 0.0 {
            per_sample.iter().zip(&weights).map(|(m, w)| f(m) * w).sum::<f64>() / total
        } else {
            0.0
        }
    };
    AggregateMetrics {
        samples: per_sample.len(),
        mean_iou: mean(&|m| m.mean_iou),
        precision: mean(&|m| m.precision),
        recall: mean(&|m| m.recall),
        f1: mean(&|m| m.f1),
    }
}
