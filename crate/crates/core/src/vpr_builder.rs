//! Unsupervised place-recognition dataset construction from posed sequences.
//!
//! Places are chosen greedily: a frame becomes a new place when, against every
//! place chosen so far, it is at least `t_l_new` away in position or at least
//! `t_a_new` away in heading. Frames are then attached to the place that is
//! within both `t_l_same` and `t_a_same`. With `t_l_same < t_l_new / 2` and
//! `t_a_same < t_a_new / 2` no frame can qualify for two places.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use image::{imageops, RgbImage};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::capture::{Condition, TimeOfDay};
use crate::error::IoContext;
use crate::geometry::{dist_angular, dist_linear, Pose};
use crate::sequence_store::Sequence;
use crate::{Error, Result};

pub const PLACES_MANIFEST: &str = "places.jsonl";
pub const SUMMARY_FILE: &str = "summary.json";
pub const IMAGES_DIR: &str = "images";
/// Side of the square network input after cropping.
pub const RESIZE_TARGET: u32 = 224;
/// Aspect ratio of the random training crop.
pub const CROP_ASPECT: f64 = 4.0 / 3.0;

/// Place selection and association thresholds; meters and radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectionThresholds {
    pub t_l_new: f64,
    pub t_a_new: f64,
    pub t_l_same: f64,
    pub t_a_same: f64,
}

impl Default for SelectionThresholds {
    /// 100 m, 90°, 10 m, 20°.
    fn default() -> Self {
        Self::from_degrees(100.0, 90.0, 10.0, 20.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ThresholdViolation {
    NotPositive { name: &'static str, value: f64 },
    LinearRule { t_l_same: f64, t_l_new: f64 },
    AngularRule { t_a_same: f64, t_a_new: f64 },
}

impl fmt::Display for ThresholdViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ThresholdViolation::NotPositive { name, value } => {
                write!(f, "{name} must be > 0 (got {value})")
            }
            ThresholdViolation::LinearRule { t_l_same, t_l_new } => write!(
                f,
                "t_l_same < t_l_new/2 violated: {t_l_same} m >= {} m",
                t_l_new / 2.0
            ),
            ThresholdViolation::AngularRule { t_a_same, t_a_new } => write!(
                f,
                "t_a_same < t_a_new/2 violated: {}° >= {}°",
                t_a_same.to_degrees(),
                (t_a_new / 2.0).to_degrees()
            ),
        }
    }
}

impl SelectionThresholds {
    /// Linear thresholds in meters, angular ones in degrees.
    pub fn from_degrees(t_l_new: f64, t_a_new_deg: f64, t_l_same: f64, t_a_same_deg: f64) -> Self {
        Self {
            t_l_new,
            t_a_new: t_a_new_deg.to_radians(),
            t_l_same,
            t_a_same: t_a_same_deg.to_radians(),
        }
    }

    /// Every violated rule; empty when the thresholds are usable.
    pub fn violations(&self) -> Vec<ThresholdViolation> {
        let mut out = Vec::new();
        for (name, value) in [
            ("t_l_new", self.t_l_new),
            ("t_a_new", self.t_a_new),
            ("t_l_same", self.t_l_same),
            ("t_a_same", self.t_a_same),
        ] {
            if !(value.is_finite() && value > 0.0) {
                out.push(ThresholdViolation::NotPositive { name, value });
            }
        }
        if !(self.t_l_same < self.t_l_new / 2.0) {
            out.push(ThresholdViolation::LinearRule {
                t_l_same: self.t_l_same,
                t_l_new: self.t_l_new,
            });
        }
        if !(self.t_a_same < self.t_a_new / 2.0) {
            out.push(ThresholdViolation::AngularRule {
                t_a_same: self.t_a_same,
                t_a_new: self.t_a_new,
            });
        }
        out
    }
}

pub fn validate_thresholds(th: &SelectionThresholds) -> Result<()> {
    let v = th.violations();
    if v.is_empty() {
        Ok(())
    } else {
        Err(Error::Thresholds(v))
    }
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("{name} must be positive, got {v}")))
    }
}

/// True when `p` is far enough from `q` to count as a different place.
fn is_new_against(p: &Pose, q: &Pose, t_l_new: f64, t_a_new: f64) -> Result<bool> {
    Ok(dist_linear(p, q)? >= t_l_new || dist_angular(p, q)? >= t_a_new)
}

fn is_same_place(p: &Pose, place: &Pose, t_l_same: f64, t_a_same: f64) -> Result<bool> {
    Ok(dist_linear(p, place)? < t_l_same && dist_angular(p, place)? < t_a_same)
}

/// Greedy accept/reject decision for each pose, in order.
pub fn place_decisions(poses: &[Pose], t_l_new: f64, t_a_new: f64) -> Result<Vec<bool>> {
    check_positive("t_l_new", t_l_new)?;
    check_positive("t_a_new", t_a_new)?;
    let mut selected: Vec<Pose> = Vec::new();
    let mut decisions = Vec::with_capacity(poses.len());
    for p in poses {
        let mut new = true;
        for q in &selected {
            if !is_new_against(p, q, t_l_new, t_a_new)? {
                new = false;
                break;
            }
        }
        if new {
            selected.push(*p);
        }
        decisions.push(new);
    }
    Ok(decisions)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Place {
    pub id: u64,
    pub pose: Pose,
    /// Origin of the place pose: sequence position in the input and frame index.
    pub sequence: usize,
    pub frame_index: u64,
}

/// Selected places, in selection order with consecutive ids.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PlaceSet {
    pub places: Vec<Place>,
}

impl PlaceSet {
    pub fn len(&self) -> usize {
        self.places.len()
    }

    pub fn is_empty(&self) -> bool {
        self.places.is_empty()
    }

    pub fn from_poses(poses: &[Pose]) -> Self {
        Self {
            places: poses
                .iter()
                .enumerate()
                .map(|(i, &pose)| Place {
                    id: i as u64,
                    pose,
                    sequence: 0,
                    frame_index: i as u64,
                })
                .collect(),
        }
    }
}

/// Greedy single pass over the sequences in the given order, frames in
/// index order.
pub fn place_selection(sequences: &[&Sequence], t_l_new: f64, t_a_new: f64) -> Result<PlaceSet> {
    let frames: Vec<(usize, u64, Pose)> = sequences
        .iter()
        .enumerate()
        .flat_map(|(s, seq)| seq.frames.iter().map(move |f| (s, f.frame_index, f.pose)))
        .collect();
    let poses: Vec<Pose> = frames.iter().map(|f| f.2).collect();
    let decisions = place_decisions(&poses, t_l_new, t_a_new)?;
    let places = frames
        .iter()
        .zip(decisions)
        .filter(|(_, keep)| *keep)
        .enumerate()
        .map(|(id, (&(sequence, frame_index, pose), _))| Place {
            id: id as u64,
            pose,
            sequence,
            frame_index,
        })
        .collect();
    Ok(PlaceSet { places })
}

/// Ids of every place whose association condition `pose` meets.
pub fn matching_places(
    pose: &Pose,
    places: &PlaceSet,
    t_l_same: f64,
    t_a_same: f64,
) -> Result<Vec<u64>> {
    let mut out = Vec::new();
    for place in &places.places {
        if is_same_place(pose, &place.pose, t_l_same, t_a_same)? {
            out.push(place.id);
        }
    }
    Ok(out)
}

/// An image attached to a place.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlaceImage {
    pub path: PathBuf,
    pub sequence: String,
    pub source: String,
    pub frame_index: u64,
    pub condition: Condition,
    pub pose: Pose,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlaceRecord {
    pub id: u64,
    pub pose: Pose,
    pub images: Vec<PlaceImage>,
}

/// Place id to attached images, plus the number of frames no place claimed.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PlaceAssociations {
    pub places: Vec<PlaceRecord>,
    pub dropped: usize,
}

impl PlaceAssociations {
    pub fn image_count(&self) -> usize {
        self.places.iter().map(|p| p.images.len()).sum()
    }
}

/// Attaches every frame of every sequence to the place it is within
/// `(t_l_same, t_a_same)` of. Thresholds are checked against the full rule
/// set first.
pub fn frames_selection(
    sequences: &[&Sequence],
    places: &PlaceSet,
    thresholds: &SelectionThresholds,
) -> Result<PlaceAssociations> {
    validate_thresholds(thresholds)?;
    let frames: Vec<(usize, &Sequence, &crate::sequence_store::FrameRecord)> = sequences
        .iter()
        .enumerate()
        .flat_map(|(s, seq)| seq.frames.iter().map(move |f| (s, *seq, f)))
        .collect();
    let matches = frames
        .par_iter()
        .map(|(_, _, f)| matching_places(&f.pose, places, thresholds.t_l_same, thresholds.t_a_same))
        .collect::<Result<Vec<_>>>()?;

    let mut records: Vec<PlaceRecord> = places
        .places
        .iter()
        .map(|p| PlaceRecord {
            id: p.id,
            pose: p.pose,
            images: Vec::new(),
        })
        .collect();
    let slot: BTreeMap<u64, usize> = places
        .places
        .iter()
        .enumerate()
        .map(|(i, p)| (p.id, i))
        .collect();
    let mut dropped = 0;
    for ((_, seq, frame), ids) in frames.iter().zip(matches) {
        // the threshold rules leave at most one candidate
        let Some(id) = ids.first() else {
            dropped += 1;
            continue;
        };
        records[slot[id]].images.push(PlaceImage {
            path: seq.root.join(&frame.rgb),
            sequence: seq.path_name.clone(),
            source: seq.source.clone(),
            frame_index: frame.frame_index,
            condition: frame.condition,
            pose: frame.pose,
        });
    }
    Ok(PlaceAssociations {
        places: records,
        dropped,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportSummary {
    pub places: usize,
    pub images: usize,
    pub mean_images_per_place: f64,
    pub dropped_frames: usize,
}

fn image_file_name(seq_tag: usize, img: &PlaceImage) -> String {
    format!(
        "s{seq_tag:03}_{}_{:06}.png",
        img.condition.slug(),
        img.frame_index
    )
}

/// Writes `places.jsonl`, `summary.json` and `images/<place>/` copies.
///
/// Image paths in the manifest are relative to `out`.
pub fn export_vpr_dataset(assoc: &PlaceAssociations, out: &Path) -> Result<ExportSummary> {
    if assoc.places.is_empty() {
        return Err(Error::Insufficient("no places".into()));
    }
    fs::create_dir_all(out).ctx(|| format!("creating {}", out.display()))?;
    let images_root = out.join(IMAGES_DIR);
    if images_root.exists() {
        fs::remove_dir_all(&images_root).ctx(|| format!("clearing {}", images_root.display()))?;
    }

    // stable per-sequence tags keep file names unique across retraced paths
    let mut seq_tags: BTreeMap<(String, Condition), usize> = BTreeMap::new();
    for p in &assoc.places {
        for img in &p.images {
            seq_tags
                .entry((img.sequence.clone(), img.condition))
                .or_insert(0);
        }
    }
    for (i, v) in seq_tags.values_mut().enumerate() {
        *v = i;
    }

    let mut manifest = String::new();
    for place in &assoc.places {
        let rel_dir = Path::new(IMAGES_DIR).join(format!("{:06}", place.id));
        fs::create_dir_all(out.join(&rel_dir)).ctx(|| format!("creating {}", rel_dir.display()))?;
        let mut images = Vec::with_capacity(place.images.len());
        for img in &place.images {
            let tag = seq_tags[&(img.sequence.clone(), img.condition)];
            let rel = rel_dir.join(image_file_name(tag, img));
            fs::copy(&img.path, out.join(&rel))
                .ctx(|| format!("copying {}", img.path.display()))?;
            images.push(PlaceImage {
                path: rel,
                ..img.clone()
            });
        }
        let record = PlaceRecord {
            id: place.id,
            pose: place.pose,
            images,
        };
        manifest.push_str(&serde_json::to_string(&record)?);
        manifest.push('\n');
    }
    let manifest_path = out.join(PLACES_MANIFEST);
    fs::write(&manifest_path, manifest).ctx(|| format!("writing {}", manifest_path.display()))?;

    let images = assoc.image_count();
    let summary = ExportSummary {
        places: assoc.places.len(),
        images,
        mean_images_per_place: images as f64 / assoc.places.len() as f64,
        dropped_frames: assoc.dropped,
    };
    let summary_path = out.join(SUMMARY_FILE);
    fs::write(
        &summary_path,
        serde_json::to_string_pretty(&summary)? + "\n",
    )
    .ctx(|| format!("writing {}", summary_path.display()))?;
    Ok(summary)
}

/// Loads a `places.jsonl` manifest; image paths are resolved against the
/// manifest directory.
pub fn read_places_manifest(path: &Path) -> Result<PlaceAssociations> {
    let text = fs::read_to_string(path).ctx(|| format!("reading {}", path.display()))?;
    let root = path.parent().unwrap_or(Path::new(""));
    let mut places = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut rec: PlaceRecord = serde_json::from_str(line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        for img in &mut rec.images {
            img.path = root.join(&img.path);
        }
        places.push(rec);
    }
    Ok(PlaceAssociations { places, dropped: 0 })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripletImage {
    pub place_id: u64,
    pub path: PathBuf,
    pub condition: Condition,
    pub source: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Triplet {
    pub anchor: TripletImage,
    pub positive: TripletImage,
    pub negative: TripletImage,
}

impl Triplet {
    /// Opposite time of day for positive and negative; same source for both.
    pub fn satisfies_constraints(&self) -> bool {
        let tod = self.anchor.condition.time_of_day();
        self.positive.condition.time_of_day() == tod.opposite()
            && self.negative.condition.time_of_day() == tod.opposite()
            && self.negative.source == self.positive.source
            && self.positive.place_id == self.anchor.place_id
            && self.negative.place_id != self.anchor.place_id
    }
}

fn triplet_image(place_id: u64, img: &PlaceImage) -> TripletImage {
    TripletImage {
        place_id,
        path: img.path.clone(),
        condition: img.condition,
        source: img.source.clone(),
    }
}

// (place index, image index)
type Slot = (usize, usize);

/// Draws `count` day/night triplets.
///
/// The positive shows the anchor's place at the other time of day; the
/// negative shows a different place at that same time of day and comes from
/// the positive's source dataset.
pub fn sample_triplets(assoc: &PlaceAssociations, count: usize, seed: u64) -> Result<Vec<Triplet>> {
    let has =
        |p: &PlaceRecord, tod: TimeOfDay| p.images.iter().any(|i| i.condition.time_of_day() == tod);
    let deficient: Vec<String> = assoc
        .places
        .iter()
        .filter(|p| !(has(p, TimeOfDay::Day) && has(p, TimeOfDay::Night)))
        .map(|p| p.id.to_string())
        .collect();
    let paired = assoc.places.len() - deficient.len();
    if paired < 2 {
        return Err(Error::Insufficient(format!(
            "triplets need at least 2 places with both day and night images, found {paired}; deficient places: [{}]",
            deficient.join(", ")
        )));
    }

    // flat image table: (place index, image index)
    let all: Vec<(usize, usize)> = assoc
        .places
        .iter()
        .enumerate()
        .flat_map(|(pi, p)| (0..p.images.len()).map(move |ii| (pi, ii)))
        .collect();
    let img = |(pi, ii): (usize, usize)| &assoc.places[pi].images[ii];
    let negatives_for =
        |anchor_place: usize, tod: TimeOfDay, source: &str| -> Vec<(usize, usize)> {
            all.iter()
                .copied()
                .filter(|&(pi, ii)| {
                    let i = &assoc.places[pi].images[ii];
                    pi != anchor_place && i.condition.time_of_day() == tod && i.source == source
                })
                .collect()
        };

    // anchors that admit at least one complete triplet, with their positives
    let mut anchors: Vec<(Slot, Vec<Slot>)> = Vec::new();
    for &(pi, ii) in &all {
        let a = img((pi, ii));
        let want = a.condition.time_of_day().opposite();
        let positives: Vec<(usize, usize)> = (0..assoc.places[pi].images.len())
            .map(|j| (pi, j))
            .filter(|&k| {
                let p = img(k);
                p.condition.time_of_day() == want && !negatives_for(pi, want, &p.source).is_empty()
            })
            .collect();
        if !positives.is_empty() {
            anchors.push(((pi, ii), positives));
        }
    }
    if anchors.is_empty() {
        return Err(Error::Insufficient(format!(
            "no anchor has both a positive and a negative from the same source; deficient places: [{}]",
            deficient.join(", ")
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let (a, positives) = &anchors[rng.gen_range(0..anchors.len())];
        let p = *positives
            .choose(&mut rng)
            .expect("non-empty by construction");
        let pos = img(p);
        let negs = negatives_for(a.0, pos.condition.time_of_day(), &pos.source);
        let n = *negs.choose(&mut rng).expect("non-empty by construction");
        out.push(Triplet {
            anchor: triplet_image(assoc.places[a.0].id, img(*a)),
            positive: triplet_image(assoc.places[p.0].id, pos),
            negative: triplet_image(assoc.places[n.0].id, img(n)),
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CropWindow {
    pub x: u32,
    pub y: u32,
    pub width: u32,
    pub height: u32,
}

/// Size of the largest window with the given aspect (width / height) that
/// fits inside `width x height`.
pub fn max_crop_size(width: u32, height: u32, aspect: f64) -> Result<(u32, u32)> {
    if width == 0 || height == 0 {
        return Err(Error::invalid(format!("empty image {width}x{height}")));
    }
    if !(aspect.is_finite() && aspect > 0.0) {
        return Err(Error::invalid(format!(
            "aspect must be positive, got {aspect}"
        )));
    }
    let (w, h) = (f64::from(width), f64::from(height));
    Ok(if w / h >= aspect {
        (((h * aspect).round() as u32).clamp(1, width), height)
    } else {
        (width, ((w / aspect).round() as u32).clamp(1, height))
    })
}

/// Maximal window of the given aspect at a uniformly random position.
pub fn compute_crop_window(width: u32, height: u32, aspect: f64, seed: u64) -> Result<CropWindow> {
    crop_window_with(width, height, aspect, &mut ChaCha8Rng::seed_from_u64(seed))
}

pub fn crop_window_with<R: Rng>(
    width: u32,
    height: u32,
    aspect: f64,
    rng: &mut R,
) -> Result<CropWindow> {
    let (cw, ch) = max_crop_size(width, height, aspect)?;
    Ok(CropWindow {
        x: rng.gen_range(0..=width - cw),
        y: rng.gen_range(0..=height - ch),
        width: cw,
        height: ch,
    })
}

/// Crop window for an image on disk; only the header is read.
pub fn crop_window_for_file<R: Rng>(path: &Path, aspect: f64, rng: &mut R) -> Result<CropWindow> {
    let (w, h) = image::image_dimensions(path)?;
    crop_window_with(w, h, aspect, rng)
}

/// Crops `img` to `window` and resizes bilinearly to 224x224.
pub fn crop_and_resize(img: &RgbImage, window: &CropWindow) -> Result<RgbImage> {
    if window.x + window.width > img.width() || window.y + window.height > img.height() {
        return Err(Error::invalid(format!(
            "crop {window:?} exceeds image {}x{}",
            img.width(),
            img.height()
        )));
    }
    let view = imageops::crop_imm(img, window.x, window.y, window.width, window.height).to_image();
    Ok(imageops::resize(
        &view,
        RESIZE_TARGET,
        RESIZE_TARGET,
        imageops::FilterType::Triangle,
    ))
}
