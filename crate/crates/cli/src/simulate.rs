//! Synthetic route generation for the `simulate` subcommand.

use std::f64::consts::TAU;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use navforge::capture::Condition;
use navforge::evaluation::Trajectory;
use navforge::geometry::{densify_path, perturb_trajectory, PerturbationParams, Waypoint};
use navforge::sequence_store::write_trajectory_csv;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const TRAJECTORY_FILE: &str = "trajectory.csv";

pub struct SimulateParams {
    pub paths: usize,
    pub spacing: f64,
    pub fps: f64,
    pub sigma_linear: f64,
    pub sigma_angular: f64,
    pub conditions: Vec<Condition>,
    pub waypoints: Option<PathBuf>,
}

/// A closed loop of jittered waypoints around a random center.
fn random_loop(rng: &mut ChaCha8Rng) -> Vec<Waypoint> {
    let cx = rng.gen_range(-2000.0..2000.0);
    let cy = rng.gen_range(-2000.0..2000.0);
    let radius = rng.gen_range(150.0..300.0);
    let vertices = rng.gen_range(6..10);
    let mut wps: Vec<Waypoint> = (0..vertices)
        .map(|i| {
            let a = TAU * i as f64 / vertices as f64;
            let r = radius * rng.gen_range(0.85..1.15);
            Waypoint::new(cx + r * a.cos(), cy + r * a.sin(), rng.gen_range(0.0..5.0))
        })
        .collect();
    wps.push(wps[0]);
    wps
}

fn read_waypoints(path: &Path) -> Result<Vec<Waypoint>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || (i == 0 && line.starts_with('x')) {
            continue;
        }
        let v: Vec<f64> = line
            .split(',')
            .map(|f| f.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .with_context(|| format!("{}:{}: bad number", path.display(), i + 1))?;
        match v.as_slice() {
            [x, y, z] => out.push(Waypoint::new(*x, *y, *z)),
            [x, y, z, yaw] => out.push(Waypoint::new(*x, *y, *z).with_yaw(yaw.to_radians())),
            _ => bail!("{}:{}: expected x,y,z[,yaw_deg]", path.display(), i + 1),
        }
    }
    Ok(out)
}

/// Writes `<out>/<path>/<condition>/trajectory.csv` for every route and
/// condition. Returns the written files in order.
pub fn simulate(out: &Path, params: &SimulateParams, seed: u64) -> Result<Vec<PathBuf>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let routes: Vec<(String, Vec<Waypoint>)> = match &params.waypoints {
        Some(file) => {
            let name = file
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "path00".into());
            vec![(name, read_waypoints(file)?)]
        }
        None => (0..params.paths)
            .map(|i| (format!("path{i:02}"), random_loop(&mut rng)))
            .collect(),
    };

    let mut written = Vec::new();
    for (name, waypoints) in &routes {
        let base = densify_path(waypoints, params.spacing)?;
        for condition in &params.conditions {
            let perturb =
                PerturbationParams::new(params.sigma_linear, params.sigma_angular, rng.gen())?;
            let poses = perturb_trajectory(&base, &perturb);
            let dir = out.join(name).join(condition.slug());
            fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
            let file = dir.join(TRAJECTORY_FILE);
            write_trajectory_csv(&Trajectory::from_poses(&poses, 1.0 / params.fps), &file)?;
            written.push(file);
        }
    }
    Ok(written)
}
