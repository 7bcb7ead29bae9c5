//! Retrieval and trajectory metrics.
//!
//! Retrieval uses cosine distance over embedding vectors; trajectory accuracy
//! is the absolute trajectory error after a least-squares rigid alignment of
//! the estimated positions onto ground truth (no scale).

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use nalgebra::{Isometry3, Matrix3, Rotation3, Translation3, UnitQuaternion, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::capture::Condition;
use crate::error::IoContext;
use crate::geometry::Pose;
use crate::{Error, Result};

/// Default triplet margin.
pub const DEFAULT_MARGIN: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub condition: Option<Condition>,
    pub vector: Vec<f64>,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `1 - a·b / (|a| |b|)`, in `[0, 2]`.
pub fn cosine_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::invalid(format!(
            "dimension mismatch: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let (na, nb) = (norm(a), norm(b));
    if !(na > 0.0 && nb > 0.0) || !na.is_finite() || !nb.is_finite() {
        return Err(Error::invalid(
            "cosine distance of a zero or non-finite vector",
        ));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    Ok((1.0 - dot / (na * nb)).clamp(0.0, 2.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TripletLossParams {
    pub epsilon: f64,
}

impl Default for TripletLossParams {
    fn default() -> Self {
        Self {
            epsilon: DEFAULT_MARGIN,
        }
    }
}

impl TripletLossParams {
    pub fn new(epsilon: f64) -> Result<Self> {
        if epsilon.is_finite() && epsilon >= 0.0 {
            Ok(Self { epsilon })
        } else {
            Err(Error::invalid(format!(
                "margin must be finite and >= 0, got {epsilon}"
            )))
        }
    }
}

/// Margin loss `max(d(a, p) - d(a, n) + eps, 0)` with cosine distance.
pub fn triplet_loss(anchor: &[f64], positive: &[f64], negative: &[f64], eps: f64) -> Result<f64> {
    let params = TripletLossParams::new(eps)?;
    let dp = cosine_distance(anchor, positive)?;
    let dn = cosine_distance(anchor, negative)?;
    Ok((dp - dn + params.epsilon).max(0.0))
}

/// Anchor, positive and negative embedding of one training sample.
pub type TripletVectors<'a> = (&'a [f64], &'a [f64], &'a [f64]);

/// Mean triplet loss over a minibatch.
pub fn batch_triplet_loss(batch: &[TripletVectors<'_>], eps: f64) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::invalid("empty triplet batch"));
    }
    let total = batch
        .iter()
        .map(|(a, p, n)| triplet_loss(a, p, n, eps))
        .sum::<Result<f64>>()?;
    Ok(total / batch.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecallReport {
    pub ks: Vec<usize>,
    pub recall: Vec<f64>,
    pub queries: usize,
    /// Zero-based rank of each query's true match.
    #[serde(skip)]
    pub ranks: Vec<usize>,
}

impl RecallReport {
    pub fn at(&self, k: usize) -> Option<f64> {
        self.ks.iter().position(|&x| x == k).map(|i| self.recall[i])
    }

    pub fn render_text(&self) -> String {
        let mut out = format!("queries: {}\n", self.queries);
        for (k, r) in self.ks.iter().zip(&self.recall) {
            out.push_str(&format!("recall@{k}: {r:.4}\n"));
        }
        out
    }
}

/// Fraction of queries whose true database match is among the `k` nearest
/// database entries, for each requested `k`.
///
/// Entries at equal distance rank by database position.
pub fn topk_recall(
    queries: &[Embedding],
    database: &[Embedding],
    ground_truth: &HashMap<String, String>,
    ks: &[usize],
) -> Result<RecallReport> {
    if database.is_empty() {
        return Err(Error::invalid("empty database"));
    }
    if let Some(k) = ks.iter().find(|&&k| k == 0) {
        return Err(Error::invalid(format!("k must be positive, got {k}")));
    }
    let mut index = HashMap::with_capacity(database.len());
    for (i, e) in database.iter().enumerate() {
        if index.insert(e.id.as_str(), i).is_some() {
            return Err(Error::invalid(format!("duplicate database id {:?}", e.id)));
        }
    }
    let targets = queries
        .iter()
        .map(|q| {
            let gt = ground_truth
                .get(&q.id)
                .ok_or_else(|| Error::invalid(format!("query {:?} has no ground truth", q.id)))?;
            index.get(gt.as_str()).copied().ok_or_else(|| {
                Error::invalid(format!(
                    "ground truth {gt:?} of query {:?} is not in the database",
                    q.id
                ))
            })
        })
        .collect::<Result<Vec<usize>>>()?;

    let ranks = queries
        .par_iter()
        .zip(&targets)
        .map(|(q, &target)| {
            let dists = database
                .iter()
                .map(|d| cosine_distance(&q.vector, &d.vector))
                .collect::<Result<Vec<f64>>>()?;
            let dt = dists[target];
            Ok(dists
                .iter()
                .enumerate()
                .filter(|&(i, &d)| d < dt || (d == dt && i < target))
                .count())
        })
        .collect::<Result<Vec<usize>>>()?;

    let n = queries.len().max(1) as f64;
    let recall = ks
        .iter()
        .map(|&k| ranks.iter().filter(|&&r| r < k).count() as f64 / n)
        .collect();
    Ok(RecallReport {
        ks: ks.to_vec(),
        recall,
        queries: queries.len(),
        ranks,
    })
}

/// Reads `{id, condition, vector}` JSON lines; all vectors must share one
/// dimension and have non-zero norm.
pub fn read_embeddings(path: &Path) -> Result<Vec<Embedding>> {
    let text = fs::read_to_string(path).ctx(|| format!("reading {}", path.display()))?;
    let mut out: Vec<Embedding> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let e: Embedding = serde_json::from_str(line).map_err(|e| err(e.to_string()))?;
        if !(norm(&e.vector) > 0.0) {
            return Err(err(format!("embedding {:?} has zero norm", e.id)));
        }
        if let Some(first) = out.first() {
            if first.vector.len() != e.vector.len() {
                return Err(err(format!(
                    "dimension {} differs from {}",
                    e.vector.len(),
                    first.vector.len()
                )));
            }
        }
        out.push(e);
    }
    Ok(out)
}

/// Reads `query_id,db_id` rows (header optional).
pub fn read_ground_truth(path: &Path) -> Result<HashMap<String, String>> {
    let text = fs::read_to_string(path).ctx(|| format!("reading {}", path.display()))?;
    let mut map = HashMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || (i == 0 && line == "query_id,db_id") {
            continue;
        }
        let (q, d) = line.split_once(',').ok_or_else(|| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: "expected query_id,db_id".into(),
        })?;
        if map
            .insert(q.trim().to_string(), d.trim().to_string())
            .is_some()
        {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: format!("query {q:?} listed twice"),
            });
        }
    }
    Ok(map)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimedPose {
    pub timestamp: f64,
    pub pose: Pose,
}

/// Time-ordered poses.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    entries: Vec<TimedPose>,
}

impl Trajectory {
    pub fn new(entries: Vec<TimedPose>) -> Self {
        Self { entries }
    }

    pub fn from_poses(poses: &[Pose], period: f64) -> Self {
        Self::new(
            poses
                .iter()
                .enumerate()
                .map(|(i, &pose)| TimedPose {
                    timestamp: i as f64 * period,
                    pose,
                })
                .collect(),
        )
    }

    pub fn entries(&self) -> &[TimedPose] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn positions(&self) -> Vec<Vector3<f64>> {
        self.entries.iter().map(|e| e.pose.translation()).collect()
    }

    /// Applies `g` to every pose (position and orientation).
    pub fn transformed(&self, g: &Isometry3<f64>) -> Trajectory {
        Trajectory::new(
            self.entries
                .iter()
                .map(|e| TimedPose {
                    timestamp: e.timestamp,
                    pose: Pose::from_isometry(&(g * e.pose.isometry())),
                })
                .collect(),
        )
    }
}

/// Pairs each estimated pose with the ground-truth pose nearest in time,
/// keeping pairs closer than `max_dt`. Both inputs must be time-ordered.
pub fn associate_by_timestamp(
    estimated: &Trajectory,
    ground_truth: &Trajectory,
    max_dt: f64,
) -> (Trajectory, Trajectory) {
    let gt = ground_truth.entries();
    let mut est_out = Vec::new();
    let mut gt_out = Vec::new();
    if gt.is_empty() {
        return (Trajectory::default(), Trajectory::default());
    }
    let mut j = 0;
    for e in estimated.entries() {
        while j + 1 < gt.len()
            && (gt[j + 1].timestamp - e.timestamp).abs() <= (gt[j].timestamp - e.timestamp).abs()
        {
            j += 1;
        }
        if (gt[j].timestamp - e.timestamp).abs() <= max_dt {
            est_out.push(*e);
            gt_out.push(gt[j]);
        }
    }
    (Trajectory::new(est_out), Trajectory::new(gt_out))
}

/// Proper rigid motion `x -> R x + t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn to_isometry(&self) -> Isometry3<f64> {
        let rot = Rotation3::from_matrix_unchecked(self.rotation);
        Isometry3::from_parts(
            Translation3::from(self.translation),
            UnitQuaternion::from_rotation_matrix(&rot),
        )
    }

    pub fn from_isometry(iso: &Isometry3<f64>) -> Self {
        Self {
            rotation: *iso.rotation.to_rotation_matrix().matrix(),
            translation: iso.translation.vector,
        }
    }
}

/// Least-squares rigid alignment of `estimated` positions onto
/// `ground_truth` positions, matched by index.
///
/// Closed form: SVD of the centered cross-covariance, with the smallest
/// singular direction flipped when needed so the result is a rotation.
pub fn align_horn(estimated: &Trajectory, ground_truth: &Trajectory) -> Result<RigidTransform> {
    align_points(&estimated.positions(), &ground_truth.positions())
}

pub fn align_points(src: &[Vector3<f64>], dst: &[Vector3<f64>]) -> Result<RigidTransform> {
    if src.len() != dst.len() {
        return Err(Error::invalid(format!(
            "trajectories differ in length: {} vs {}",
            src.len(),
            dst.len()
        )));
    }
    if src.len() < 3 {
        return Err(Error::DegenerateGeometry(format!(
            "alignment needs at least 3 poses, got {}",
            src.len()
        )));
    }
    let n = src.len() as f64;
    let src_mean = src.iter().sum::<Vector3<f64>>() / n;
    let dst_mean = dst.iter().sum::<Vector3<f64>>() / n;
    let cross = src.iter().zip(dst).fold(Matrix3::zeros(), |acc, (p, q)| {
        acc + (p - src_mean) * (q - dst_mean).transpose()
    });

    let svd = cross.svd(true, true);
    let s = svd.singular_values;
    let s_max = s.max();
    let rank = s
        .iter()
        .filter(|&&v| v > 1e-10 * s_max.max(f64::MIN_POSITIVE))
        .count();
    if !(s_max > 0.0) || rank < 2 {
        return Err(Error::DegenerateGeometry(format!(
            "cross-covariance has rank {rank} (collinear or coincident positions)"
        )));
    }
    let u = svd.u.expect("requested U");
    let v = svd.v_t.expect("requested V^T").transpose();
    let mut correction = Matrix3::identity();
    if (v * u.transpose()).determinant() < 0.0 {
        correction[(s.imin(), s.imin())] = -1.0;
    }
    let rotation = v * correction * u.transpose();
    let translation = dst_mean - rotation * src_mean;
    Ok(RigidTransform {
        rotation,
        translation,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AteReport {
    pub rmse: f64,
    pub errors: Vec<f64>,
    pub n: usize,
    pub transform: RigidTransform,
}

impl AteReport {
    pub fn render_text(&self) -> String {
        let mean = self.errors.iter().sum::<f64>() / self.n.max(1) as f64;
        let max = self.errors.iter().copied().fold(0.0, f64::max);
        format!(
            "poses: {}\nRMSE {:.3} m\nmean {:.3} m\nmax {:.3} m\n",
            self.n, self.rmse, mean, max
        )
    }
}

/// Absolute trajectory error of `estimated` against `ground_truth`.
pub fn ate_rmse(estimated: &Trajectory, ground_truth: &Trajectory) -> Result<AteReport> {
    let transform = align_horn(estimated, ground_truth)?;
    let errors: Vec<f64> = estimated
        .positions()
        .iter()
        .zip(ground_truth.positions())
        .map(|(p, q)| (transform.apply(p) - q).norm())
        .collect();
    let n = errors.len();
    let rmse = (errors.iter().map(|e| e * e).sum::<f64>() / n as f64).sqrt();
    Ok(AteReport {
        rmse,
        errors,
        n,
        transform,
    })
}
