//! On-disk sequences and trajectories.
//!
//! A sequence directory holds `frames.jsonl` (one [`FrameRecord`] per line),
//! an optional `sequence.json` with its path name and source tag, the image
//! folders, and `poses.csv`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::capture::Condition;
use crate::error::IoContext;
use crate::evaluation::{TimedPose, Trajectory};
use crate::geometry::Pose;
use crate::{Error, Result};

pub const FRAMES_MANIFEST: &str = "frames.jsonl";
pub const SEQUENCE_META: &str = "sequence.json";
pub const POSES_CSV: &str = "poses.csv";
pub const POSES_HEADER: &str = "frame_index,timestamp,x,y,z,phi_x,phi_y,phi_z";
pub const DEFAULT_SOURCE: &str = "synthetic";

/// One captured frame: image paths relative to the sequence directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub frame_index: u64,
    pub timestamp: f64,
    pub pose: Pose,
    pub condition: Condition,
    pub rgb: PathBuf,
    pub depth: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceMeta {
    pub path_name: String,
    #[serde(default = "default_source")]
    pub source: String,
}

fn default_source() -> String {
    DEFAULT_SOURCE.to_string()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sequence {
    pub path_name: String,
    /// Dataset tag used to pair triplet negatives with positives.
    pub source: String,
    /// `None` only for an empty sequence.
    pub condition: Option<Condition>,
    pub frames: Vec<FrameRecord>,
    /// Directory that relative image paths resolve against.
    pub root: PathBuf,
}

impl Sequence {
    pub fn new(path_name: impl Into<String>, frames: Vec<FrameRecord>) -> Result<Self> {
        let condition = uniform_condition(&frames, Path::new("<memory>"))?;
        Ok(Self {
            path_name: path_name.into(),
            source: DEFAULT_SOURCE.to_string(),
            condition,
            frames,
            root: PathBuf::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn trajectory(&self) -> Trajectory {
        Trajectory::new(
            self.frames
                .iter()
                .map(|f| TimedPose {
                    timestamp: f.timestamp,
                    pose: f.pose,
                })
                .collect(),
        )
    }
}

fn uniform_condition(frames: &[FrameRecord], path: &Path) -> Result<Option<Condition>> {
    let Some(first) = frames.first() else {
        return Ok(None);
    };
    if let Some(f) = frames.iter().find(|f| f.condition != first.condition) {
        return Err(Error::invalid(format!(
            "{}: frame {} has condition {} but the sequence is {}",
            path.display(),
            f.frame_index,
            f.condition,
            first.condition
        )));
    }
    Ok(Some(first.condition))
}

/// Loads a `frames.jsonl` manifest, ordering frames by index.
pub fn load_sequence(manifest: &Path) -> Result<Sequence> {
    let file = fs::File::open(manifest).ctx(|| format!("opening {}", manifest.display()))?;
    let mut frames = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.ctx(|| format!("reading {}", manifest.display()))?;
        if line.trim().is_empty() {
            continue;
        }
        let frame: FrameRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: manifest.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        frame.pose.validate().map_err(|e| Error::Parse {
            path: manifest.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        frames.push(frame);
    }
    frames.sort_by_key(|f| f.frame_index);
    if let Some(w) = frames.windows(2).find(|w| w[1].timestamp < w[0].timestamp) {
        return Err(Error::invalid(format!(
            "{}: timestamp decreases at frame {}",
            manifest.display(),
            w[1].frame_index
        )));
    }
    let condition = uniform_condition(&frames, manifest)?;

    let root = manifest.parent().map(Path::to_path_buf).unwrap_or_default();
    let meta_path = root.join(SEQUENCE_META);
    let meta = if meta_path.exists() {
        let text =
            fs::read_to_string(&meta_path).ctx(|| format!("reading {}", meta_path.display()))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: meta_path.clone(),
            line: e.line(),
            message: e.to_string(),
        })?
    } else {
        SequenceMeta {
            path_name: root
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default(),
            source: default_source(),
        }
    };
    Ok(Sequence {
        path_name: meta.path_name,
        source: meta.source,
        condition,
        frames,
        root,
    })
}

/// Writes `frames.jsonl` and `sequence.json` into `dir`.
pub fn save_sequence(seq: &Sequence, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).ctx(|| format!("creating {}", dir.display()))?;
    write_frames_manifest(&dir.join(FRAMES_MANIFEST), &seq.frames)?;
    write_sequence_meta(
        dir,
        &SequenceMeta {
            path_name: seq.path_name.clone(),
            source: seq.source.clone(),
        },
    )
}

pub fn write_sequence_meta(dir: &Path, meta: &SequenceMeta) -> Result<()> {
    let path = dir.join(SEQUENCE_META);
    let mut text = serde_json::to_string_pretty(meta)?;
    text.push('\n');
    fs::write(&path, text).ctx(|| format!("writing {}", path.display()))
}

pub fn write_frames_manifest(path: &Path, frames: &[FrameRecord]) -> Result<()> {
    let mut out = String::new();
    for f in frames {
        out.push_str(&serde_json::to_string(f)?);
        out.push('\n');
    }
    fs::write(path, out).ctx(|| format!("writing {}", path.display()))
}

/// Finds every directory under `root` holding a frames manifest and loads
/// it. Sequences come back sorted by directory path.
pub fn load_sequences_dir(root: &Path) -> Result<Vec<Sequence>> {
    let mut manifests = Vec::new();
    collect_manifests(root, &mut manifests)?;
    manifests.sort();
    manifests.iter().map(|m| load_sequence(m)).collect()
}

fn collect_manifests(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let manifest = dir.join(FRAMES_MANIFEST);
    if manifest.is_file() {
        out.push(manifest);
    }
    for entry in fs::read_dir(dir).ctx(|| format!("listing {}", dir.display()))? {
        let entry = entry.ctx(|| format!("listing {}", dir.display()))?;
        if entry.file_type().map(|t| t.is_dir()).unwrap_or(false) {
            collect_manifests(&entry.path(), out)?;
        }
    }
    Ok(())
}

/// Appends one `poses.csv` row. Floats use the shortest round-trip form.
pub fn format_pose_row(buf: &mut String, frame_index: u64, timestamp: f64, p: &Pose) {
    let _ = writeln!(
        buf,
        "{frame_index},{timestamp},{},{},{},{},{},{}",
        p.x, p.y, p.z, p.phi_x, p.phi_y, p.phi_z
    );
}

/// Writes the poses of a sequence in `poses.csv` layout.
pub fn write_trajectory(seq: &Sequence, out: &Path) -> Result<()> {
    let rows = seq
        .frames
        .iter()
        .map(|f| (f.frame_index, f.timestamp, f.pose));
    write_pose_rows(out, rows)
}

/// Writes a bare trajectory; frame indices are positions.
pub fn write_trajectory_csv(traj: &Trajectory, out: &Path) -> Result<()> {
    let rows = traj
        .entries()
        .iter()
        .enumerate()
        .map(|(i, e)| (i as u64, e.timestamp, e.pose));
    write_pose_rows(out, rows)
}

fn write_pose_rows(out: &Path, rows: impl Iterator<Item = (u64, f64, Pose)>) -> Result<()> {
    let mut buf = String::new();
    buf.push_str(POSES_HEADER);
    buf.push('\n');
    for (i, t, p) in rows {
        format_pose_row(&mut buf, i, t, &p);
    }
    let file = fs::File::create(out).ctx(|| format!("creating {}", out.display()))?;
    let mut w = BufWriter::new(file);
    w.write_all(buf.as_bytes())
        .and_then(|_| w.flush())
        .ctx(|| format!("writing {}", out.display()))
}

/// Reads a `poses.csv` file. A header-only file is an empty trajectory.
pub fn read_trajectory(path: &Path) -> Result<Trajectory> {
    let text = fs::read_to_string(path).ctx(|| format!("reading {}", path.display()))?;
    parse_trajectory(&text, path)
}

pub fn parse_trajectory(text: &str, path: &Path) -> Result<Trajectory> {
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header.trim() == POSES_HEADER => {}
        Some((_, header)) => {
            return Err(parse_err(
                1,
                format!("expected header {POSES_HEADER:?}, got {header:?}"),
            ))
        }
        None => return Err(parse_err(1, "missing header".into())),
    }
    let mut entries = Vec::new();
    for (i, line) in lines {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 8 {
            return Err(parse_err(
                line_no,
                format!("expected 8 fields, found {}", fields.len()),
            ));
        }
        fields[0]
            .parse::<u64>()
            .map_err(|e| parse_err(line_no, format!("frame_index: {e}")))?;
        let mut nums = [0.0f64; 7];
        for (slot, (name, raw)) in nums
            .iter_mut()
            .zip(POSES_HEADER.split(',').skip(1).zip(&fields[1..]))
        {
            *slot = raw
                .parse()
                .map_err(|e| parse_err(line_no, format!("{name}: {e}")))?;
            if !slot.is_finite() {
                return Err(parse_err(line_no, format!("{name} is not finite")));
            }
        }
        entries.push(TimedPose {
            timestamp: nums[0],
            pose: Pose::new(nums[1], nums[2], nums[3], nums[4], nums[5], nums[6]),
        });
    }
    Ok(Trajectory::new(entries))
}

/// Frame counts per path and condition.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DatasetStats {
    rows: BTreeMap<String, BTreeMap<Condition, usize>>,
}

pub fn stats_table(sequences: &[Sequence]) -> DatasetStats {
    let mut stats = DatasetStats::default();
    for seq in sequences {
        let row = stats.rows.entry(seq.path_name.clone()).or_default();
        if let Some(c) = seq.condition {
            *row.entry(c).or_default() += seq.len();
        }
    }
    stats
}

impl DatasetStats {
    pub fn paths(&self) -> impl Iterator<Item = &str> {
        self.rows.keys().map(String::as_str)
    }

    pub fn cell(&self, path: &str, condition: Condition) -> usize {
        self.rows
            .get(path)
            .and_then(|r| r.get(&condition))
            .copied()
            .unwrap_or(0)
    }

    pub fn row_total(&self, path: &str) -> usize {
        self.rows.get(path).map_or(0, |r| r.values().sum())
    }

    pub fn column_total(&self, condition: Condition) -> usize {
        self.rows.values().filter_map(|r| r.get(&condition)).sum()
    }

    pub fn grand_total(&self) -> usize {
        self.rows.values().flat_map(|r| r.values()).sum()
    }

    fn table(&self) -> Vec<Vec<String>> {
        let mut header = vec!["path".to_string()];
        header.extend(Condition::ALL.iter().map(Condition::to_string));
        header.push("total".into());
        let mut out = vec![header];
        for path in self.paths() {
            let mut row = vec![path.to_string()];
            row.extend(
                Condition::ALL
                    .iter()
                    .map(|&c| self.cell(path, c).to_string()),
            );
            row.push(self.row_total(path).to_string());
            out.push(row);
        }
        let mut total = vec!["total".to_string()];
        total.extend(
            Condition::ALL
                .iter()
                .map(|&c| self.column_total(c).to_string()),
        );
        total.push(self.grand_total().to_string());
        out.push(total);
        out
    }

    pub fn to_csv(&self) -> String {
        self.table()
            .into_iter()
            .map(|r| r.join(",") + "\n")
            .collect()
    }

    /// Plain-text table with right-aligned counts.
    pub fn render_text(&self) -> String {
        let table = self.table();
        let widths: Vec<usize> = (0..table[0].len())
            .map(|c| table.iter().map(|r| r[c].len()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for row in &table {
            let cells: Vec<String> = row
                .iter()
                .enumerate()
                .map(|(c, v)| {
                    if c == 0 {
                        format!("{v:<w$}", w = widths[c])
                    } else {
                        format!("{v:>w$}", w = widths[c])
                    }
                })
                .collect();
            out.push_str(cells.join("  ").trim_end());
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn frame(i: u64, condition: Condition) -> FrameRecord {
        FrameRecord {
            frame_index: i,
            timestamp: i as f64 * 0.1,
            pose: Pose::planar(i as f64, 0.5, 0.0, 0.1 * i as f64),
            condition,
            rgb: format!("rgb/{i:06}.png").into(),
            depth: format!("depth/{i:06}.png").into(),
        }
    }

    fn seq(name: &str, condition: Condition, n: u64) -> Sequence {
        Sequence::new(name, (0..n).map(|i| frame(i, condition)).collect()).unwrap()
    }

    #[test]
    fn manifest_round_trip_orders_by_index() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = seq("Stadium", Condition::DAY_RAIN, 5);
        s.frames.reverse();
        save_sequence(&s, dir.path()).unwrap();
        let loaded = load_sequence(&dir.path().join(FRAMES_MANIFEST)).unwrap();
        assert_eq!(loaded.path_name, "Stadium");
        assert_eq!(loaded.condition, Some(Condition::DAY_RAIN));
        let idx: Vec<u64> = loaded.frames.iter().map(|f| f.frame_index).collect();
        assert_eq!(idx, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn empty_manifest_is_empty_sequence() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(FRAMES_MANIFEST);
        fs::write(&path, "").unwrap();
        let s = load_sequence(&path).unwrap();
        assert!(s.is_empty());
        assert_eq!(s.condition, None);
    }

    #[test]
    fn missing_manifest_is_fatal() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            load_sequence(&dir.path().join(FRAMES_MANIFEST)),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn malformed_row_names_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(FRAMES_MANIFEST);
        let good = serde_json::to_string(&frame(0, Condition::DAY_RAIN)).unwrap();
        let mut bad: serde_json::Value = serde_json::from_str(&good).unwrap();
        bad["pose"].as_object_mut().unwrap().remove("phi_z");
        fs::write(&path, format!("{good}\n{bad}\n")).unwrap();
        match load_sequence(&path) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn mixed_conditions_are_rejected() {
        let frames = vec![
            frame(0, Condition::DAY_RAIN),
            frame(1, Condition::NIGHT_RAIN),
        ];
        assert!(Sequence::new("x", frames).is_err());
    }

    #[test]
    fn stats_examples() {
        let stats = stats_table(&[seq("Stadium", Condition::DAY_EXTRASUNNY, 695)]);
        assert_eq!(stats.cell("Stadium", Condition::DAY_EXTRASUNNY), 695);

        let empty = stats_table(&[]);
        assert_eq!(empty.grand_total(), 0);
        assert_eq!(empty.paths().count(), 0);
        assert!(empty.to_csv().ends_with("total,0,0,0,0,0,0\n"));

        let two = stats_table(&[
            seq("Ring", Condition::DAY_EXTRASUNNY, 10),
            seq("Ring", Condition::NIGHT_CLEAR, 20),
        ]);
        assert_eq!(two.row_total("Ring"), 30);
        assert_eq!(two.column_total(Condition::NIGHT_CLEAR), 20);
        let text = two.render_text();
        assert!(text.lines().next().unwrap().starts_with("path"));
        assert_eq!(text.lines().count(), 3);
    }

    #[test]
    fn trajectory_csv_cases() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(POSES_CSV);
        fs::write(&path, format!("{POSES_HEADER}\n")).unwrap();
        assert!(read_trajectory(&path).unwrap().is_empty());

        fs::write(
            &path,
            format!(
                "{POSES_HEADER}\n0,0,1,2,3,0,0,0.5\n1,0.1,2,2,3,0,0,0.6\n2,0.2,3,2,3,0,0,0.7\n"
            ),
        )
        .unwrap();
        let t = read_trajectory(&path).unwrap();
        let xs: Vec<f64> = t.entries().iter().map(|e| e.pose.x).collect();
        assert_eq!(xs, vec![1.0, 2.0, 3.0]);

        fs::write(
            &path,
            format!("{POSES_HEADER}\n0,0,1,2,3,0,0,0.5\n1,0.1,2,2,3,0\n"),
        )
        .unwrap();
        match read_trajectory(&path) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    proptest! {
        #[test]
        fn trajectory_round_trip_is_lossless(
            raw in prop::collection::vec(prop::array::uniform6(-1e4..1e4f64), 0..30)
        ) {
            let frames: Vec<FrameRecord> = raw
                .iter()
                .enumerate()
                .map(|(i, v)| FrameRecord { pose: Pose::from_array(*v), ..frame(i as u64, Condition::DAY_RAIN) })
                .collect();
            let s = Sequence::new("p", frames).unwrap();
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join(POSES_CSV);
            write_trajectory(&s, &path).unwrap();
            let t = read_trajectory(&path).unwrap();
            prop_assert_eq!(t.len(), s.len());
            for (e, f) in t.entries().iter().zip(&s.frames) {
                for (a, b) in e.pose.as_array().iter().zip(f.pose.as_array()) {
                    prop_assert!((a - b).abs() <= 1e-9);
                }
                prop_assert_eq!(e.timestamp, f.timestamp);
            }
        }

        #[test]
        fn stats_conserve_frames(sizes in prop::collection::vec((0usize..3, 0usize..5, 0u64..40), 0..12)) {
            let seqs: Vec<Sequence> = sizes
                .iter()
                .map(|&(p, c, n)| seq(&format!("path{p}"), Condition::ALL[c], n))
                .collect();
            let stats = stats_table(&seqs);
            let total: usize = seqs.iter().map(Sequence::len).sum();
            prop_assert_eq!(stats.grand_total(), total);
            let by_rows: usize = stats.paths().map(|p| stats.row_total(p)).sum();
            let by_cols: usize = Condition::ALL.iter().map(|&c| stats.column_total(c)).sum();
            prop_assert_eq!(by_rows, total);
            prop_assert_eq!(by_cols, total);
        }
    }
}
