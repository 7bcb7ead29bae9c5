use std::fs;
use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use navforge::capture::{
    capture_client, postprocess_frames, CaptureOptions, Condition, ControlMessage, FrameServer,
    ProceduralSynthesizer, SessionConfig, SettingsUpdate, DEFAULT_FPS,
};
use navforge::depth_codec::DepthCodecParams;
use navforge::evaluation::{
    associate_by_timestamp, ate_rmse, read_embeddings, read_ground_truth, topk_recall,
};
use navforge::sequence_store::{
    load_sequences_dir, read_trajectory, stats_table, write_sequence_meta, SequenceMeta,
    DEFAULT_SOURCE,
};
use navforge::vpr_builder::{
    crop_window_for_file, export_vpr_dataset, frames_selection, place_selection,
    read_places_manifest, sample_triplets, validate_thresholds, SelectionThresholds, CROP_ASPECT,
    PLACES_MANIFEST,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

mod simulate;

const DEFAULT_SEED: u64 = 42;

#[derive(Parser)]
#[command(
    name = "navforge",
    version,
    about = "Synthetic place-recognition and SLAM data toolkit"
)]
struct Cli {
    /// Seed for every random draw.
    #[arg(long, global = true, default_value_t = DEFAULT_SEED)]
    seed: u64,
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate noisy per-condition trajectories along closed routes.
    Simulate(SimulateArgs),
    /// Stream frames for a trajectory to one capture client.
    Serve(ServeArgs),
    /// Receive frames from a server into <out>/raw.
    Capture(CaptureArgs),
    /// Split raw frames into rgb/, depth/, poses.csv and frames.jsonl.
    Postprocess(PostprocessArgs),
    /// Frame counts per path and condition.
    Stats(StatsArgs),
    /// Select places and export a place-recognition dataset.
    BuildVpr(BuildVprArgs),
    /// Sample day/night training triplets from an exported dataset.
    MakeTriplets(MakeTripletsArgs),
    /// Recall@k of query embeddings against a database.
    EvalRetrieval(EvalRetrievalArgs),
    /// Absolute trajectory error after rigid alignment.
    EvalAte(EvalAteArgs),
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    out: PathBuf,
    /// Number of random closed routes.
    #[arg(long, default_value_t = 2)]
    paths: usize,
    /// CSV of x,y,z[,yaw_deg] waypoints; replaces the random routes.
    #[arg(long)]
    waypoints: Option<PathBuf>,
    /// Meters between consecutive frames.
    #[arg(long, default_value_t = 5.0)]
    spacing: f64,
    #[arg(long, default_value_t = DEFAULT_FPS)]
    fps: f64,
    /// Uniform position noise bound, meters.
    #[arg(long, default_value_t = 0.5)]
    sigma_linear: f64,
    /// Uniform heading noise bound, degrees.
    #[arg(long, default_value_t = 2.0)]
    sigma_angular: f64,
    /// Conditions to generate, e.g. day/extrasunny; all five by default.
    #[arg(long = "condition")]
    conditions: Vec<Condition>,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long)]
    trajectory: PathBuf,
    #[arg(long, default_value = "day/extrasunny")]
    condition: Condition,
    #[arg(long, default_value_t = DEFAULT_FPS)]
    fps: f64,
    #[arg(long, env = "NAVFORGE_BIND", default_value = "127.0.0.1:8000")]
    bind: SocketAddr,
    #[arg(long, default_value_t = 32)]
    width: u32,
    #[arg(long, default_value_t = 24)]
    height: u32,
}

#[derive(Args)]
struct CaptureArgs {
    #[arg(long, env = "NAVFORGE_BIND", default_value = "127.0.0.1:8000")]
    connect: SocketAddr,
    #[arg(long)]
    out: PathBuf,
    /// Expected frame rate; sizes the receive queue.
    #[arg(long, default_value_t = DEFAULT_FPS)]
    fps: f64,
    /// AFTER:key=value[,key=value], sent once frame AFTER has arrived.
    /// Keys are weather and time_of_day.
    #[arg(long = "control")]
    controls: Vec<String>,
    /// Seconds to keep retrying the connection.
    #[arg(long, default_value_t = 10.0)]
    connect_timeout: f64,
}

#[derive(Args)]
struct PostprocessArgs {
    #[arg(long)]
    raw: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Route name recorded in sequence.json; defaults to the output directory name.
    #[arg(long)]
    path_name: Option<String>,
    #[arg(long, default_value = DEFAULT_SOURCE)]
    source: String,
    #[arg(long, default_value_t = 1.0)]
    d_min: f64,
    #[arg(long, default_value_t = 960.0)]
    d_max: f64,
}

#[derive(Args)]
struct StatsArgs {
    #[arg(long = "in")]
    input: PathBuf,
    /// Also write the table as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct BuildVprArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Minimum distance to every place for a new place, meters.
    #[arg(long, default_value_t = 100.0)]
    tl_new: f64,
    /// Minimum heading difference to every place for a new place, degrees.
    #[arg(long, default_value_t = 90.0)]
    ta_new: f64,
    /// Association distance, meters.
    #[arg(long, default_value_t = 10.0)]
    tl_same: f64,
    /// Association heading difference, degrees.
    #[arg(long, default_value_t = 20.0)]
    ta_same: f64,
    /// Select places from every sequence, not only day/extrasunny ones.
    #[arg(long)]
    all_conditions: bool,
}

#[derive(Args)]
struct MakeTripletsArgs {
    /// places.jsonl written by build-vpr.
    #[arg(long)]
    places: PathBuf,
    #[arg(long)]
    count: usize,
    #[arg(long)]
    out: PathBuf,
    /// Attach a random 4:3 crop window to every image.
    #[arg(long)]
    crops: bool,
}

#[derive(Args)]
struct EvalRetrievalArgs {
    #[arg(long)]
    queries: PathBuf,
    #[arg(long)]
    database: PathBuf,
    /// CSV of query_id,db_id.
    #[arg(long)]
    ground_truth: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "1,5,10")]
    ks: Vec<usize>,
    /// Write the report as JSON.
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args)]
struct EvalAteArgs {
    #[arg(long)]
    gt: PathBuf,
    #[arg(long)]
    est: PathBuf,
    /// Pair poses by nearest timestamp within this many seconds instead of by row.
    #[arg(long)]
    max_dt: Option<f64>,
    #[arg(long)]
    json: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", format!("{e:#}").replace('\n', " "));
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let seed = cli.seed;
    match cli.command {
        Command::Simulate(a) => cmd_simulate(a, seed),
        Command::Serve(a) => cmd_serve(a),
        Command::Capture(a) => cmd_capture(a),
        Command::Postprocess(a) => cmd_postprocess(a),
        Command::Stats(a) => cmd_stats(a),
        Command::BuildVpr(a) => cmd_build_vpr(a),
        Command::MakeTriplets(a) => cmd_make_triplets(a, seed),
        Command::EvalRetrieval(a) => cmd_eval_retrieval(a),
        Command::EvalAte(a) => cmd_eval_ate(a),
    }
}

fn cmd_simulate(a: SimulateArgs, seed: u64) -> Result<()> {
    if !(a.fps.is_finite() && a.fps > 0.0) {
        bail!("fps must be positive, got {}", a.fps);
    }
    let conditions = if a.conditions.is_empty() {
        Condition::ALL.to_vec()
    } else {
        a.conditions
    };
    let params = simulate::SimulateParams {
        paths: a.paths,
        spacing: a.spacing,
        fps: a.fps,
        sigma_linear: a.sigma_linear,
        sigma_angular: a.sigma_angular.to_radians(),
        conditions,
        waypoints: a.waypoints,
    };
    for file in simulate::simulate(&a.out, &params, seed)? {
        println!("{}", file.display());
    }
    Ok(())
}

fn cmd_serve(a: ServeArgs) -> Result<()> {
    let poses: Vec<_> = read_trajectory(&a.trajectory)?
        .entries()
        .iter()
        .map(|e| e.pose)
        .collect();
    let config = SessionConfig::new(a.bind, PathBuf::new())
        .with_fps(a.fps)
        .with_condition(a.condition);
    let server = FrameServer::bind(&config)?;
    // scripts read this line to find an ephemeral port
    println!("listening {}", server.local_addr()?);
    std::io::stdout().flush()?;
    let synth = ProceduralSynthesizer {
        width: a.width,
        height: a.height,
    };
    let summary = server.serve(&poses, &synth)?;
    for (frame, condition) in &summary.condition_changes {
        info!("condition {condition} from frame {frame}");
    }
    println!(
        "sent {} frames in {:.2} s",
        summary.frames_sent,
        summary.elapsed.as_secs_f64()
    );
    if !summary.completed {
        bail!(
            "client disconnected after {} of {} frames",
            summary.frames_sent,
            poses.len()
        );
    }
    Ok(())
}

fn parse_control(s: &str) -> Result<(u64, ControlMessage)> {
    let (after, settings) = s
        .split_once(':')
        .ok_or_else(|| anyhow!("control {s:?} is not AFTER:key=value"))?;
    let after: u64 = after
        .trim()
        .parse()
        .with_context(|| format!("control {s:?}"))?;
    let mut set = SettingsUpdate::default();
    for kv in settings.split(',') {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| anyhow!("control {s:?}: {kv:?} is not key=value"))?;
        match k.trim() {
            "weather" => set.weather = Some(v.trim().parse()?),
            "time_of_day" => set.time_of_day = Some(v.trim().parse()?),
            other => bail!("control {s:?}: unknown key {other:?}"),
        }
    }
    Ok((after, ControlMessage { set }))
}

fn cmd_capture(a: CaptureArgs) -> Result<()> {
    if !(a.connect_timeout.is_finite() && a.connect_timeout >= 0.0) {
        bail!("connect timeout must be non-negative");
    }
    let controls = a
        .controls
        .iter()
        .map(|c| parse_control(c))
        .collect::<Result<Vec<_>>>()?;
    let config = SessionConfig::new(a.connect, &a.out).with_fps(a.fps);
    let options = CaptureOptions {
        controls,
        connect_timeout: Duration::from_secs_f64(a.connect_timeout),
    };
    let summary = capture_client(&config, &options)?;
    println!(
        "received {} persisted {}",
        summary.received, summary.persisted
    );
    Ok(())
}

fn cmd_postprocess(a: PostprocessArgs) -> Result<()> {
    let codec = DepthCodecParams::new(a.d_min, a.d_max)?;
    let report = postprocess_frames(&a.raw, &a.out, &codec)?;
    let path_name = match a.path_name {
        Some(p) => p,
        None => dir_name(&a.out)?,
    };
    write_sequence_meta(
        &a.out,
        &SequenceMeta {
            path_name,
            source: a.source,
        },
    )?;
    for f in &report.rejected_files {
        warn!("rejected {f}");
    }
    println!("ok {} rejected {}", report.ok, report.rejected);
    Ok(())
}

fn dir_name(p: &Path) -> Result<String> {
    let abs = std::path::absolute(p)?;
    abs.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .ok_or_else(|| {
            anyhow!(
                "cannot derive a path name from {}; pass --path-name",
                p.display()
            )
        })
}

fn cmd_stats(a: StatsArgs) -> Result<()> {
    let sequences = load_sequences_dir(&a.input)?;
    let stats = stats_table(&sequences);
    print!("{}", stats.render_text());
    if let Some(csv) = a.csv {
        fs::write(&csv, stats.to_csv()).with_context(|| format!("writing {}", csv.display()))?;
    }
    Ok(())
}

fn cmd_build_vpr(a: BuildVprArgs) -> Result<()> {
    let thresholds = SelectionThresholds::from_degrees(a.tl_new, a.ta_new, a.tl_same, a.ta_same);
    validate_thresholds(&thresholds)?;
    let sequences = load_sequences_dir(&a.input)?;
    if sequences.is_empty() {
        bail!("no sequences under {}", a.input.display());
    }
    let all: Vec<_> = sequences.iter().collect();
    let selectors: Vec<_> = if a.all_conditions {
        all.clone()
    } else {
        all.iter()
            .copied()
            .filter(|s| s.condition == Some(Condition::DAY_EXTRASUNNY))
            .collect()
    };
    if selectors.is_empty() {
        bail!("no day/extrasunny sequences to select places from; pass --all-conditions");
    }
    let places = place_selection(&selectors, thresholds.t_l_new, thresholds.t_a_new)?;
    info!("{} places from {} sequences", places.len(), selectors.len());
    let assoc = frames_selection(&all, &places, &thresholds)?;
    let summary = export_vpr_dataset(&assoc, &a.out)?;
    println!("{}", serde_json::to_string(&summary)?);
    Ok(())
}

fn cmd_make_triplets(a: MakeTripletsArgs, seed: u64) -> Result<()> {
    let assoc = read_places_manifest(&a.places)?;
    let triplets = sample_triplets(&assoc, a.count, seed)?;
    let root = a.places.parent().unwrap_or(Path::new(""));
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut out = String::new();
    for t in &triplets {
        let mut line = serde_json::to_value(t)?;
        for role in ["anchor", "positive", "negative"] {
            let img = &mut line[role];
            let path = PathBuf::from(img["path"].as_str().unwrap_or_default());
            if a.crops {
                let window = crop_window_for_file(&path, CROP_ASPECT, &mut rng)?;
                img["crop"] = serde_json::to_value(window)?;
            }
            // keep paths relative to the dataset like places.jsonl does
            let rel = path.strip_prefix(root).unwrap_or(&path);
            img["path"] = serde_json::Value::String(rel.to_string_lossy().into_owned());
        }
        out.push_str(&serde_json::to_string(&line)?);
        out.push('\n');
    }
    fs::write(&a.out, out).with_context(|| format!("writing {}", a.out.display()))?;
    println!("{} triplets from {}", triplets.len(), a.places.display());
    if a.places.file_name().is_some_and(|n| n != PLACES_MANIFEST) {
        warn!("{} is not named {PLACES_MANIFEST}", a.places.display());
    }
    Ok(())
}

fn cmd_eval_retrieval(a: EvalRetrievalArgs) -> Result<()> {
    let queries = read_embeddings(&a.queries)?;
    let database = read_embeddings(&a.database)?;
    let gt = read_ground_truth(&a.ground_truth)?;
    let report = topk_recall(&queries, &database, &gt, &a.ks)?;
    print!("{}", report.render_text());
    if let Some(json) = a.json {
        fs::write(&json, serde_json::to_string_pretty(&report)? + "\n")
            .with_context(|| format!("writing {}", json.display()))?;
    }
    Ok(())
}

fn cmd_eval_ate(a: EvalAteArgs) -> Result<()> {
    let gt = read_trajectory(&a.gt)?;
    let est = read_trajectory(&a.est)?;
    let (est, gt) = match a.max_dt {
        Some(dt) => associate_by_timestamp(&est, &gt, dt),
        None => {
            if est.len() != gt.len() {
                bail!(
                    "trajectories differ in length ({} vs {}); pass --max-dt to pair by timestamp",
                    est.len(),
                    gt.len()
                );
            }
            (est, gt)
        }
    };
    let report = ate_rmse(&est, &gt)?;
    print!("{}", report.render_text());
    if let Some(json) = a.json {
        fs::write(&json, serde_json::to_string_pretty(&report)? + "\n")
            .with_context(|| format!("writing {}", json.display()))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use navforge::capture::{TimeOfDay, Weather};

    #[test]
    fn control_spec_parses() {
        let (after, msg) = parse_control("49:weather=rain,time_of_day=night").unwrap();
        assert_eq!(after, 49);
        assert_eq!(msg.set.weather, Some(Weather::Rain));
        assert_eq!(msg.set.time_of_day, Some(TimeOfDay::Night));
        assert!(parse_control("49").is_err());
        assert!(parse_control("x:weather=rain").is_err());
        assert!(parse_control("3:fog=thick").is_err());
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
