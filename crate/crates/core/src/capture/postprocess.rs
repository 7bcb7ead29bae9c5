//! Offline split of raw frame messages into per-type files.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use base64::Engine;
use log::warn;
use rayon::prelude::*;
use serde::Serialize;

use super::{FrameMessage, Payload};
use crate::depth_codec::{decode_raw_grid, to_millimeter_map, DepthCodecParams};
use crate::error::IoContext;
use crate::sequence_store::{
    format_pose_row, write_frames_manifest, FrameRecord, FRAMES_MANIFEST, POSES_CSV, POSES_HEADER,
};
use crate::Result;

pub const RGB_DIR: &str = "rgb";
pub const DEPTH_DIR: &str = "depth";
pub const REJECTED_DIR: &str = "rejected";

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ProcessReport {
    pub ok: usize,
    pub rejected: usize,
    /// Raw file names moved to quarantine, sorted.
    pub rejected_files: Vec<String>,
}

fn payload_bytes(payload: &Payload, raw_dir: &Path) -> std::result::Result<Vec<u8>, String> {
    match payload {
        Payload::Inline { data } => base64::engine::general_purpose::STANDARD
            .decode(data)
            .map_err(|e| format!("bad base64: {e}")),
        Payload::Path { path } => {
            let full = raw_dir.join(path);
            fs::read(&full).map_err(|e| format!("{}: {e}", full.display()))
        }
    }
}

struct Decoded {
    message: FrameMessage,
    rgb_png: Vec<u8>,
    depth_png: Vec<u8>,
}

/// Everything that can be wrong with a single raw frame. Errors here
/// quarantine the frame.
fn decode_frame(
    bytes: &[u8],
    raw_dir: &Path,
    codec: &DepthCodecParams,
) -> std::result::Result<Decoded, String> {
    let message: FrameMessage = serde_json::from_slice(bytes).map_err(|e| e.to_string())?;
    message.pose.validate().map_err(|e| e.to_string())?;
    if !message.timestamp.is_finite() {
        return Err("non-finite timestamp".into());
    }
    let rgb_png = payload_bytes(&message.rgb, raw_dir)?;
    if image::guess_format(&rgb_png).ok() != Some(image::ImageFormat::Png) {
        return Err("rgb payload is not a PNG".into());
    }
    let codes =
        decode_raw_grid(&payload_bytes(&message.depth, raw_dir)?).map_err(|e| e.to_string())?;
    let meters = codes.decode(codec).map_err(|e| e.to_string())?;
    let mm = to_millimeter_map(&meters);
    let mut depth_png = Vec::new();
    image::ImageBuffer::<image::Luma<u16>, _>::from_raw(
        mm.width as u32,
        mm.height as u32,
        mm.values,
    )
    .ok_or("depth buffer size mismatch")?
    .write_to(
        &mut std::io::Cursor::new(&mut depth_png),
        image::ImageFormat::Png,
    )
    .map_err(|e| e.to_string())?;
    Ok(Decoded {
        message,
        rgb_png,
        depth_png,
    })
}

/// Splits every `*.json` in `raw_dir` into `rgb/`, `depth/` (16-bit mm),
/// `poses.csv` and `frames.jsonl` under `out_dir`.
///
/// Frames that fail to parse or decode are copied to `out_dir/rejected/`.
/// Output depends only on the raw directory contents.
pub fn postprocess_frames(
    raw_dir: &Path,
    out_dir: &Path,
    codec: &DepthCodecParams,
) -> Result<ProcessReport> {
    codec.validate()?;
    let mut raw_files: Vec<PathBuf> = fs::read_dir(raw_dir)
        .ctx(|| format!("reading {}", raw_dir.display()))?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()
        .ctx(|| format!("reading {}", raw_dir.display()))?;
    raw_files.retain(|p| p.is_file() && p.extension().is_some_and(|x| x == "json"));
    raw_files.sort();

    let rgb_dir = out_dir.join(RGB_DIR);
    let depth_dir = out_dir.join(DEPTH_DIR);
    let rejected_dir = out_dir.join(REJECTED_DIR);
    for d in [&rgb_dir, &depth_dir] {
        fs::create_dir_all(d).ctx(|| format!("creating {}", d.display()))?;
    }
    if rejected_dir.exists() {
        fs::remove_dir_all(&rejected_dir).ctx(|| format!("clearing {}", rejected_dir.display()))?;
    }

    let decoded: Vec<(PathBuf, std::result::Result<Decoded, String>)> = raw_files
        .par_iter()
        .map(|path| {
            let result = fs::read(path)
                .map_err(|e| e.to_string())
                .and_then(|bytes| decode_frame(&bytes, raw_dir, codec));
            (path.clone(), result)
        })
        .collect();

    let mut accepted = Vec::new();
    let mut rejected = Vec::new();
    let mut seen = HashSet::new();
    for (path, result) in decoded {
        match result {
            Ok(d) if seen.insert(d.message.frame_index) => accepted.push(d),
            Ok(d) => {
                warn!(
                    "{}: duplicate frame index {}",
                    path.display(),
                    d.message.frame_index
                );
                rejected.push(path);
            }
            Err(reason) => {
                warn!("{}: rejected: {reason}", path.display());
                rejected.push(path);
            }
        }
    }
    accepted.sort_by_key(|d| d.message.frame_index);

    accepted.par_iter().try_for_each(|d| -> Result<()> {
        let name = format!("{:06}.png", d.message.frame_index);
        let rgb = rgb_dir.join(&name);
        fs::write(&rgb, &d.rgb_png).ctx(|| format!("writing {}", rgb.display()))?;
        let depth = depth_dir.join(&name);
        fs::write(&depth, &d.depth_png).ctx(|| format!("writing {}", depth.display()))
    })?;

    let mut poses = String::from(POSES_HEADER);
    poses.push('\n');
    let mut records = Vec::with_capacity(accepted.len());
    for d in &accepted {
        let m = &d.message;
        format_pose_row(&mut poses, m.frame_index, m.timestamp, &m.pose);
        let name = format!("{:06}.png", m.frame_index);
        records.push(FrameRecord {
            frame_index: m.frame_index,
            timestamp: m.timestamp,
            pose: m.pose,
            condition: m.condition,
            rgb: Path::new(RGB_DIR).join(&name),
            depth: Path::new(DEPTH_DIR).join(&name),
        });
    }
    let poses_path = out_dir.join(POSES_CSV);
    fs::write(&poses_path, poses).ctx(|| format!("writing {}", poses_path.display()))?;
    write_frames_manifest(&out_dir.join(FRAMES_MANIFEST), &records)?;

    let mut rejected_files = Vec::new();
    if !rejected.is_empty() {
        fs::create_dir_all(&rejected_dir).ctx(|| format!("creating {}", rejected_dir.display()))?;
        for path in &rejected {
            let name = path.file_name().expect("raw files have names");
            let dest = rejected_dir.join(name);
            fs::copy(path, &dest).ctx(|| format!("quarantining {}", path.display()))?;
            rejected_files.push(name.to_string_lossy().into_owned());
        }
    }

    Ok(ProcessReport {
        ok: accepted.len(),
        rejected: rejected.len(),
        rejected_files,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::capture::synth::{FrameSynthesizer, ProceduralSynthesizer};
    use crate::capture::Condition;
    use crate::depth_codec::{encode_raw_grid, MillimeterMap};
    use crate::geometry::Pose;

    fn raw_frame(i: u64) -> Vec<u8> {
        let s = ProceduralSynthesizer {
            width: 8,
            height: 6,
        };
        let pose = Pose::planar(i as f64, 0.0, 0.0, 0.0);
        let msg = FrameMessage {
            frame_index: i,
            timestamp: i as f64 / 10.0,
            pose,
            condition: Condition::DAY_OVERCAST,
            rgb: Payload::inline(&s.rgb_png(&pose, Condition::DAY_OVERCAST).unwrap()),
            depth: Payload::inline(&encode_raw_grid(
                &s.depth_codes(&pose, Condition::DAY_OVERCAST),
            )),
        };
        serde_json::to_vec(&msg).unwrap()
    }

    fn populate(raw: &Path, n: u64) {
        fs::create_dir_all(raw).unwrap();
        for i in 0..n {
            fs::write(raw.join(format!("{i:06}.json")), raw_frame(i)).unwrap();
        }
    }

    #[test]
    fn empty_raw_dir() {
        let dir = tempfile::tempdir().unwrap();
        let raw = dir.path().join("raw");
        fs::create_dir(&raw).unwrap();
        let out = dir.path().join("out");
        let report = postprocess_frames(&raw, &out, &DepthCodecParams::default()).unwrap();
        assert_eq!((report.ok, report.rejected), (0, 0));
        assert_eq!(
            fs::read_to_string(out.join(POSES_CSV)).unwrap(),
            format!("{POSES_HEADER}\n")
        );
    }

    #[test]
    fn missing_raw_dir_is_fatal() {
        let dir = tempfile::tempdir().unwrap();
        assert!(postprocess_frames(
            &dir.path().join("nope"),
            dir.path(),
            &DepthCodecParams::default()
        )
        .is_err());
    }

    #[test]
    fn truncated_frame_is_quarantined() {
        let dir = tempfile::tempdir().unwrap();
        let raw = dir.path().join("raw");
        populate(&raw, 10);
        let victim = raw.join("000004.json");
        let bytes = fs::read(&victim).unwrap();
        fs::write(&victim, &bytes[..bytes.len() / 2]).unwrap();

        let out = dir.path().join("out");
        let report = postprocess_frames(&raw, &out, &DepthCodecParams::default()).unwrap();
        assert_eq!((report.ok, report.rejected), (9, 1));
        assert_eq!(report.rejected_files, vec!["000004.json".to_string()]);
        assert!(out.join(REJECTED_DIR).join("000004.json").exists());
        assert!(!out.join(RGB_DIR).join("000004.png").exists());
        assert_eq!(
            fs::read_to_string(out.join(POSES_CSV))
                .unwrap()
                .lines()
                .count(),
            10
        );
    }

    #[test]
    fn depth_is_written_in_millimeters() {
        let dir = tempfile::tempdir().unwrap();
        let raw = dir.path().join("raw");
        populate(&raw, 1);
        let out = dir.path().join("out");
        postprocess_frames(&raw, &out, &DepthCodecParams::default()).unwrap();
        let mm = MillimeterMap::read_png(&out.join(DEPTH_DIR).join("000000.png")).unwrap();
        let s = ProceduralSynthesizer {
            width: 8,
            height: 6,
        };
        let codes = s.depth_codes(&Pose::planar(0.0, 0.0, 0.0, 0.0), Condition::DAY_OVERCAST);
        // codes travel as f32 on the wire
        let code = f64::from(codes.values()[0] as f32);
        let expected =
            crate::depth_codec::decode_depth(code, &DepthCodecParams::default()).unwrap();
        assert_eq!(
            mm.values[0],
            ((expected * 1000.0).round()).min(65535.0) as u16
        );
    }

    #[test]
    fn rerun_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let raw = dir.path().join("raw");
        populate(&raw, 5);
        fs::write(raw.join("000005.json"), b"{\"frame_index\": 5,").unwrap();
        let out = dir.path().join("out");
        let snapshot = |out: &Path| -> Vec<(PathBuf, Vec<u8>)> {
            let mut files = Vec::new();
            for sub in ["", RGB_DIR, DEPTH_DIR, REJECTED_DIR] {
                let d = out.join(sub);
                for e in fs::read_dir(&d).unwrap() {
                    let p = e.unwrap().path();
                    if p.is_file() {
                        files.push((p.clone(), fs::read(&p).unwrap()));
                    }
                }
            }
            files.sort();
            files
        };
        postprocess_frames(&raw, &out, &DepthCodecParams::default()).unwrap();
        let first = snapshot(&out);
        postprocess_frames(&raw, &out, &DepthCodecParams::default()).unwrap();
        assert_eq!(first, snapshot(&out));
    }
}
