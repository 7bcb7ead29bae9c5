//! Camera poses, pose distances and trajectory synthesis.
//!
//! Angles are radians everywhere in this module. Rotations compose as
//! intrinsic yaw (z), pitch (y), roll (x): `R = Rz(phi_z) * Ry(phi_y) * Rx(phi_x)`.

use std::f64::consts::{PI, TAU};

use nalgebra::{Isometry3, Rotation3, Translation3, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Six degree-of-freedom camera pose: position in meters, Euler angles in radians.
///
/// Angles are kept exactly as captured; wrapping only happens inside
/// [`dist_angular`].
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub phi_x: f64,
    pub phi_y: f64,
    pub phi_z: f64,
}

impl Pose {
    pub fn new(x: f64, y: f64, z: f64, phi_x: f64, phi_y: f64, phi_z: f64) -> Self {
        Self {
            x,
            y,
            z,
            phi_x,
            phi_y,
            phi_z,
        }
    }

    /// Planar pose: position plus heading, zero roll and pitch.
    pub fn planar(x: f64, y: f64, z: f64, yaw: f64) -> Self {
        Self::new(x, y, z, 0.0, 0.0, yaw)
    }

    pub fn as_array(&self) -> [f64; 6] {
        [self.x, self.y, self.z, self.phi_x, self.phi_y, self.phi_z]
    }

    pub fn from_array(v: [f64; 6]) -> Self {
        Self::new(v[0], v[1], v[2], v[3], v[4], v[5])
    }

    pub fn is_finite(&self) -> bool {
        self.as_array().iter().all(|v| v.is_finite())
    }

    pub fn validate(&self) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(Error::invalid(format!(
                "pose has non-finite fields: {self:?}"
            )))
        }
    }

    pub fn translation(&self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.z)
    }

    pub fn rotation(&self) -> Rotation3<f64> {
        Rotation3::from_axis_angle(&Vector3::z_axis(), self.phi_z)
            * Rotation3::from_axis_angle(&Vector3::y_axis(), self.phi_y)
            * Rotation3::from_axis_angle(&Vector3::x_axis(), self.phi_x)
    }

    /// Camera-to-world rigid transform.
    pub fn isometry(&self) -> Isometry3<f64> {
        Isometry3::from_parts(
            Translation3::new(self.x, self.y, self.z),
            UnitQuaternion::from_rotation_matrix(&self.rotation()),
        )
    }

    pub fn from_isometry(iso: &Isometry3<f64>) -> Self {
        let (roll, pitch, yaw) = iso.rotation.euler_angles();
        let t = iso.translation.vector;
        Self::new(t.x, t.y, t.z, roll, pitch, yaw)
    }
}

/// Sparse path vertex placed by hand on a map.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Waypoint {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub yaw: Option<f64>,
}

impl Waypoint {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z, yaw: None }
    }

    pub fn with_yaw(mut self, yaw: f64) -> Self {
        self.yaw = Some(yaw);
        self
    }

    fn is_finite(&self) -> bool {
        self.x.is_finite()
            && self.y.is_finite()
            && self.z.is_finite()
            && self.yaw.is_none_or(f64::is_finite)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerturbationParams {
    /// Half-width of the uniform noise on x, y and z (meters).
    pub sigma_linear: f64,
    /// Half-width of the uniform noise on yaw (radians).
    pub sigma_angular: f64,
    pub seed: u64,
}

impl PerturbationParams {
    pub fn new(sigma_linear: f64, sigma_angular: f64, seed: u64) -> Result<Self> {
        let params = Self {
            sigma_linear,
            sigma_angular,
            seed,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |s: f64| s.is_finite() && s >= 0.0;
        if ok(self.sigma_linear) && ok(self.sigma_angular) {
            Ok(())
        } else {
            Err(Error::invalid(format!(
                "perturbation sigmas must be finite and non-negative, got linear={} angular={}",
                self.sigma_linear, self.sigma_angular
            )))
        }
    }
}

fn check_finite(v: f64, what: &str) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("{what} must be finite, got {v}")))
    }
}

/// Maps an angle to `[0, 2π)`: negative angles get `2π` added, then the
/// result is reduced modulo `2π` so the map is idempotent.
pub fn normalize_angle(phi: f64) -> Result<f64> {
    check_finite(phi, "angle")?;
    let shifted = if phi < 0.0 { phi + TAU } else { phi };
    let r = shifted.rem_euclid(TAU);
    // rem_euclid can round up to exactly TAU for tiny negative inputs
    Ok(if r >= TAU { 0.0 } else { r })
}

/// Euclidean distance between the positions of two poses.
pub fn dist_linear(p: &Pose, q: &Pose) -> Result<f64> {
    p.validate()?;
    q.validate()?;
    Ok(((p.x - q.x).powi(2) + (p.y - q.y).powi(2) + (p.z - q.z).powi(2)).sqrt())
}

/// Wrapped heading difference in `[0, π]`. Only rotation about z counts.
pub fn dist_angular(p: &Pose, q: &Pose) -> Result<f64> {
    p.validate()?;
    q.validate()?;
    let a = normalize_angle(p.phi_z)?;
    let b = normalize_angle(q.phi_z)?;
    Ok(((a - b + PI).rem_euclid(TAU) - PI).abs().min(PI))
}

/// Piecewise-linear densification of a sparse waypoint path.
///
/// Every segment is split into `ceil(len / spacing)` equal steps, so
/// consecutive poses are never more than `spacing` apart and every waypoint
/// appears in the output. Heading is the direction of the segment a pose lies
/// on (the last pose takes the heading of the last segment). Segments with no
/// horizontal extent keep the previous heading, or the waypoint's own yaw.
pub fn densify_path(waypoints: &[Waypoint], spacing: f64) -> Result<Vec<Pose>> {
    if waypoints.is_empty() {
        return Err(Error::invalid("densify_path needs at least one waypoint"));
    }
    if !(spacing.is_finite() && spacing > 0.0) {
        return Err(Error::invalid(format!(
            "spacing must be positive, got {spacing}"
        )));
    }
    if let Some(w) = waypoints.iter().find(|w| !w.is_finite()) {
        return Err(Error::invalid(format!("non-finite waypoint {w:?}")));
    }

    let first = waypoints[0];
    let mut heading = first.yaw.unwrap_or(0.0);
    if waypoints.len() == 1 {
        return Ok(vec![Pose::planar(first.x, first.y, first.z, heading)]);
    }

    let mut poses = Vec::new();
    for pair in waypoints.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        let (dx, dy, dz) = (b.x - a.x, b.y - a.y, b.z - a.z);
        let len = (dx * dx + dy * dy + dz * dz).sqrt();
        if len == 0.0 {
            continue;
        }
        if dx != 0.0 || dy != 0.0 {
            heading = dy.atan2(dx);
        } else if let Some(yaw) = a.yaw {
            heading = yaw;
        }
        let steps = (len / spacing).ceil().max(1.0) as usize;
        for i in 0..steps {
            let t = i as f64 / steps as f64;
            poses.push(Pose::planar(
                a.x + t * dx,
                a.y + t * dy,
                a.z + t * dz,
                heading,
            ));
        }
    }
    let last = waypoints[waypoints.len() - 1];
    poses.push(Pose::planar(last.x, last.y, last.z, heading));
    Ok(poses)
}

/// Adds bounded uniform noise to position and yaw of each pose.
///
/// Offsets are drawn independently from `[-sigma, +sigma]` for x, y, z and
/// `phi_z`; the stream is fully determined by `params.seed`.
pub fn perturb_trajectory(poses: &[Pose], params: &PerturbationParams) -> Vec<Pose> {
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    poses
        .iter()
        .map(|p| {
            let mut draw = |sigma: f64| {
                let u: f64 = rng.gen_range(-1.0..=1.0);
                if sigma > 0.0 {
                    u * sigma
                } else {
                    0.0
                }
            };
            let (dx, dy, dz) = (
                draw(params.sigma_linear),
                draw(params.sigma_linear),
                draw(params.sigma_linear),
            );
            let dyaw = draw(params.sigma_angular);
            Pose {
                x: p.x + dx,
                y: p.y + dy,
                z: p.z + dz,
                phi_z: p.phi_z + dyaw,
                ..*p
            }
        })
        .collect()
}
