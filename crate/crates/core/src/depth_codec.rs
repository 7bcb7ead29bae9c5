//! Depth encodings and depth map / point cloud conversion.
//!
//! Raw renderer depth arrives as codes in `[0, 1]` on an inverted logarithmic
//! scale: `0` is the far limit, `1` the near limit. Decoded maps are in meters
//! and can be exported as the usual 16-bit millimeter images.

use std::io::{Read, Write};
use std::path::Path;

use image::{ImageBuffer, Luma};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::IoContext;
use crate::{Error, Result};

/// Magic bytes of the raw code grid format.
pub const RAW_GRID_MAGIC: [u8; 4] = *b"GTAD";
const RAW_GRID_HEADER_LEN: usize = 16;

/// Sentinel for pixels without a depth value in millimeter maps.
pub const INVALID_MM: u16 = 0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepthCodecParams {
    /// Distance encoded by code 0 (meters).
    pub d_max: f64,
    /// Distance encoded by code 1 (meters).
    pub d_min: f64,
}

impl Default for DepthCodecParams {
    fn default() -> Self {
        Self {
            d_max: 960.0,
            d_min: 1.0,
        }
    }
}

impl DepthCodecParams {
    pub fn new(d_min: f64, d_max: f64) -> Result<Self> {
        let p = Self { d_max, d_min };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_min.is_finite()
            && self.d_max.is_finite()
            && 0.0 < self.d_min
            && self.d_min < self.d_max
        {
            Ok(())
        } else {
            Err(Error::invalid(format!(
                "depth codec needs 0 < d_min < d_max, got d_min={} d_max={}",
                self.d_min, self.d_max
            )))
        }
    }
}

/// Code to meters: `d_max * (d_min / d_max)^v`.
pub fn decode_depth(v: f64, params: &DepthCodecParams) -> Result<f64> {
    if !(0.0..=1.0).contains(&v) {
        return Err(Error::Range(format!("depth code {v} outside [0, 1]")));
    }
    Ok(params.d_max * (params.d_min / params.d_max).powf(v))
}

/// Meters to code: `ln(d_max / d) / ln(d_max / d_min)`.
pub fn encode_depth(d: f64, params: &DepthCodecParams) -> Result<f64> {
    if !(params.d_min..=params.d_max).contains(&d) {
        return Err(Error::Range(format!(
            "depth {d} m outside [{}, {}]",
            params.d_min, params.d_max
        )));
    }
    Ok((params.d_max / d).ln() / (params.d_max / params.d_min).ln())
}

/// Dense row-major grid of depth values.
///
/// Holds meters after decoding, or raw codes before; `0` marks a pixel
/// without depth.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl DepthMap {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != width * height {
            return Err(Error::invalid(format!(
                "depth map {width}x{height} needs {} values, got {}",
                width * height,
                values.len()
            )));
        }
        if let Some(bad) = values.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::invalid(format!(
                "depth value {bad} is not finite and >= 0"
            )));
        }
        Ok(Self {
            width,
            height,
            values,
        })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            values: vec![0.0; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Value at column `u`, row `v`.
    pub fn get(&self, u: usize, v: usize) -> f64 {
        self.values[v * self.width + u]
    }

    /// Decodes a grid of raw codes into meters.
    pub fn decode(&self, params: &DepthCodecParams) -> Result<DepthMap> {
        let values = self
            .values
            .par_iter()
            .map(|&v| decode_depth(v, params))
            .collect::<Result<Vec<_>>>()?;
        Ok(DepthMap {
            width: self.width,
            height: self.height,
            values,
        })
    }
}

/// 16-bit depth image in millimeters.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MillimeterMap {
    pub width: usize,
    pub height: usize,
    pub values: Vec<u16>,
}

fn meters_to_mm(d: f64) -> u16 {
    if d <= 0.0 {
        return INVALID_MM;
    }
    (d * 1000.0).round().clamp(1.0, f64::from(u16::MAX)) as u16
}

/// Converts a metric depth map into millimeters, saturating at 65535.
///
/// Any positive depth maps to at least 1 mm so that 0 stays reserved for
/// missing values.
pub fn to_millimeter_map(depth: &DepthMap) -> MillimeterMap {
    MillimeterMap {
        width: depth.width,
        height: depth.height,
        values: depth.values.iter().map(|&d| meters_to_mm(d)).collect(),
    }
}

impl MillimeterMap {
    pub fn write_png(&self, path: &Path) -> Result<()> {
        let img: ImageBuffer<Luma<u16>, Vec<u16>> =
            ImageBuffer::from_raw(self.width as u32, self.height as u32, self.values.clone())
                .ok_or_else(|| Error::invalid("millimeter map buffer size mismatch"))?;
        img.save_with_format(path, image::ImageFormat::Png)?;
        Ok(())
    }

    pub fn read_png(path: &Path) -> Result<Self> {
        let img = image::open(path)?;
        let gray = match img {
            image::DynamicImage::ImageLuma16(g) => g,
            other => {
                return Err(Error::invalid(format!(
                    "{} is {:?}, expected 16-bit single channel",
                    path.display(),
                    other.color()
                )))
            }
        };
        Ok(Self {
            width: gray.width() as usize,
            height: gray.height() as usize,
            values: gray.into_raw(),
        })
    }
}

/// Serializes raw codes as the `GTAD` grid: 16-byte header (magic, width,
/// height, reserved; little-endian u32) followed by little-endian f32 values.
pub fn write_raw_grid<W: Write>(mut w: W, codes: &DepthMap) -> Result<()> {
    let mut buf = Vec::with_capacity(RAW_GRID_HEADER_LEN + 4 * codes.values.len());
    encode_raw_grid_into(&mut buf, codes);
    w.write_all(&buf).ctx(|| "writing raw depth grid".into())
}

pub fn encode_raw_grid(codes: &DepthMap) -> Vec<u8> {
    let mut buf = Vec::with_capacity(RAW_GRID_HEADER_LEN + 4 * codes.values.len());
    encode_raw_grid_into(&mut buf, codes);
    buf
}

fn encode_raw_grid_into(buf: &mut Vec<u8>, codes: &DepthMap) {
    buf.extend_from_slice(&RAW_GRID_MAGIC);
    buf.extend_from_slice(&(codes.width as u32).to_le_bytes());
    buf.extend_from_slice(&(codes.height as u32).to_le_bytes());
    buf.extend_from_slice(&0u32.to_le_bytes());
    for &v in &codes.values {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
}

pub fn read_raw_grid<R: Read>(mut r: R) -> Result<DepthMap> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)
        .ctx(|| "reading raw depth grid".into())?;
    decode_raw_grid(&bytes)
}

pub fn decode_raw_grid(bytes: &[u8]) -> Result<DepthMap> {
    if bytes.len() < RAW_GRID_HEADER_LEN || bytes[..4] != RAW_GRID_MAGIC {
        return Err(Error::invalid("raw depth grid: missing GTAD header"));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap()) as usize;
    let (width, height) = (word(4), word(8));
    let body = &bytes[RAW_GRID_HEADER_LEN..];
    if body.len() != 4 * width * height {
        return Err(Error::invalid(format!(
            "raw depth grid {width}x{height} needs {} payload bytes, got {}",
            4 * width * height,
            body.len()
        )));
    }
    let values = body
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap())))
        .collect();
    DepthMap::new(width, height, values)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        let k = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.fx.is_finite()
            && self.fy.is_finite()
            && self.fx > 0.0
            && self.fy > 0.0
            && (0.0..self.width as f64).contains(&self.cx)
            && (0.0..self.height as f64).contains(&self.cy);
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!(
                "invalid camera intrinsics {self:?}"
            )))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub color: Option<[u8; 3]>,
}

impl Point {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Self {
            x,
            y,
            z,
            color: None,
        }
    }
}

/// Camera-frame points, `z` forward.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Point>,
}

/// Back-projects every pixel with positive depth through the pinhole model.
pub fn depth_to_pointcloud(depth: &DepthMap, k: &CameraIntrinsics) -> Result<PointCloud> {
    k.validate()?;
    if depth.width != k.width || depth.height != k.height {
        return Err(Error::invalid(format!(
            "depth map is {}x{} but intrinsics are {}x{}",
            depth.width, depth.height, k.width, k.height
        )));
    }
    let points = depth
        .values
        .iter()
        .enumerate()
        .filter(|(_, d)| **d > 0.0)
        .map(|(idx, &d)| {
            let u = (idx % depth.width) as f64;
            let v = (idx / depth.width) as f64;
            Point::new((u - k.cx) * d / k.fx, (v - k.cy) * d / k.fy, d)
        })
        .collect();
    Ok(PointCloud { points })
}

/// Counts of points that could not be rendered into the depth map.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ProjectionDiagnostics {
    /// Points at or behind the camera plane.
    pub non_positive_z: usize,
    /// Points projecting outside the image.
    pub out_of_bounds: usize,
}

/// Renders a point cloud into a sparse depth map, nearest point wins.
pub fn pointcloud_to_depth(
    cloud: &PointCloud,
    k: &CameraIntrinsics,
) -> Result<(DepthMap, ProjectionDiagnostics)> {
    k.validate()?;
    let mut map = DepthMap::zeros(k.width, k.height);
    let mut diag = ProjectionDiagnostics::default();
    for p in &cloud.points {
        if !(p.z > 0.0) || !p.x.is_finite() || !p.y.is_finite() || !p.z.is_finite() {
            diag.non_positive_z += 1;
            continue;
        }
        let u = (k.fx * p.x / p.z + k.cx).round();
        let v = (k.fy * p.y / p.z + k.cy).round();
        if u < 0.0 || v < 0.0 || u >= k.width as f64 || v >= k.height as f64 {
            diag.out_of_bounds += 1;
            continue;
        }
        let slot = &mut map.values[v as usize * k.width + u as usize];
        if *slot == 0.0 || p.z < *slot {
            *slot = p.z;
        }
    }
    Ok((map, diag))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn decode_examples() {
        let p = DepthCodecParams::default();
        assert_eq!(decode_depth(0.0, &p).unwrap(), 960.0);
        assert_abs_diff_eq!(decode_depth(1.0, &p).unwrap(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(
            decode_depth(0.5, &p).unwrap(),
            960f64.sqrt(),
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(decode_depth(0.5, &p).unwrap(), 30.9839, epsilon = 1e-4);
        assert!(matches!(decode_depth(-0.01, &p), Err(Error::Range(_))));
        assert!(matches!(decode_depth(1.01, &p), Err(Error::Range(_))));
    }

    #[test]
    fn encode_examples() {
        let p = DepthCodecParams::default();
        assert_eq!(encode_depth(960.0, &p).unwrap(), 0.0);
        assert_eq!(encode_depth(1.0, &p).unwrap(), 1.0);
        assert!(matches!(encode_depth(0.5, &p), Err(Error::Range(_))));
        assert!(matches!(encode_depth(961.0, &p), Err(Error::Range(_))));
        for i in 0..=10 {
            let v = f64::from(i) / 10.0;
            let back = encode_depth(decode_depth(v, &p).unwrap(), &p).unwrap();
            assert_abs_diff_eq!(back, v, epsilon = 1e-9);
        }
    }

    #[test]
    fn codec_params_validation() {
        assert!(DepthCodecParams::new(1.0, 960.0).is_ok());
        assert!(DepthCodecParams::new(0.0, 960.0).is_err());
        assert!(DepthCodecParams::new(5.0, 5.0).is_err());
    }

    #[test]
    fn millimeter_examples() {
        let d = DepthMap::new(4, 1, vec![1.0, 70.0, 0.001, 0.0]).unwrap();
        let mm = to_millimeter_map(&d);
        assert_eq!(mm.values, vec![1000, 65535, 1, INVALID_MM]);
    }

    #[test]
    fn millimeter_png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.png");
        let d = DepthMap::new(3, 2, vec![0.5, 1.0, 2.25, 10.0, 64.0, 0.0]).unwrap();
        let mm = to_millimeter_map(&d);
        mm.write_png(&path).unwrap();
        assert_eq!(MillimeterMap::read_png(&path).unwrap(), mm);
    }

    #[test]
    fn raw_grid_round_trip_and_errors() {
        let codes = DepthMap::new(2, 2, vec![0.0, 0.25, 0.5, 1.0]).unwrap();
        let bytes = encode_raw_grid(&codes);
        assert_eq!(&bytes[..4], b"GTAD");
        assert_eq!(bytes.len(), 16 + 16);
        assert_eq!(decode_raw_grid(&bytes).unwrap(), codes);
        assert!(decode_raw_grid(&bytes[..20]).is_err());
        assert!(decode_raw_grid(b"NOPE000000000000").is_err());
    }

    #[test]
    fn depth_map_rejects_bad_values() {
        assert!(DepthMap::new(2, 1, vec![1.0]).is_err());
        assert!(DepthMap::new(1, 1, vec![-1.0]).is_err());
        assert!(DepthMap::new(1, 1, vec![f64::NAN]).is_err());
    }

    #[test]
    fn backprojection_examples() {
        let k = CameraIntrinsics::new(1000.0, 1000.0, 960.0, 540.0, 1920, 1080).unwrap();
        let mut values = vec![0.0; 1920 * 1080];
        values[540 * 1920 + 960] = 5.0;
        values[540 * 1920 + 1060] = 10.0;
        let d = DepthMap::new(1920, 1080, values).unwrap();
        let cloud = depth_to_pointcloud(&d, &k).unwrap();
        assert_eq!(cloud.points.len(), 2);
        assert_eq!(cloud.points[0], Point::new(0.0, 0.0, 5.0));
        assert_eq!(cloud.points[1], Point::new(1.0, 0.0, 10.0));

        let k1 = CameraIntrinsics::new(1.0, 1.0, 0.0, 0.0, 1, 1).unwrap();
        let one = DepthMap::new(1, 1, vec![3.0]).unwrap();
        assert_eq!(depth_to_pointcloud(&one, &k1).unwrap().points.len(), 1);
        assert!(depth_to_pointcloud(&d, &k1).is_err());
    }

    #[test]
    fn projection_examples() {
        let k = CameraIntrinsics::new(100.0, 100.0, 2.0, 2.0, 5, 5).unwrap();
        let (empty, diag) = pointcloud_to_depth(&PointCloud::default(), &k).unwrap();
        assert!(empty.values().iter().all(|&v| v == 0.0));
        assert_eq!(diag, ProjectionDiagnostics::default());

        let cloud = PointCloud {
            points: vec![
                Point::new(0.0, 0.0, 7.0),
                Point::new(0.0, 0.0, 3.0),
                Point::new(0.0, 0.0, -1.0),
                Point::new(0.0, 0.0, 0.0),
                Point::new(10.0, 0.0, 1.0),
            ],
        };
        let (map, diag) = pointcloud_to_depth(&cloud, &k).unwrap();
        assert_eq!(map.get(2, 2), 3.0);
        assert_eq!(diag.non_positive_z, 2);
        assert_eq!(diag.out_of_bounds, 1);
    }

    #[test]
    fn intrinsics_validation() {
        assert!(CameraIntrinsics::new(0.0, 1.0, 0.0, 0.0, 1, 1).is_err());
        assert!(CameraIntrinsics::new(1.0, 1.0, 1.0, 0.0, 1, 1).is_err());
    }

    proptest! {
        #[test]
        fn decode_strictly_decreasing(a in 0.0..1.0f64, delta in 1e-6..1.0f64) {
            let p = DepthCodecParams::default();
            let b = (a + delta).min(1.0);
            prop_assume!(b > a);
            prop_assert!(decode_depth(b, &p).unwrap() < decode_depth(a, &p).unwrap());
        }

        #[test]
        fn millimeters_never_zero_for_valid_depth(d in 0.0005..1000.0f64) {
            let m = DepthMap::new(1, 1, vec![d]).unwrap();
            prop_assert!(to_millimeter_map(&m).values[0] != INVALID_MM);
        }
    }
}
