//! Frame server: streams one message per pose at a fixed rate and listens
//! for in-band settings changes from the client.

use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream};
use std::sync::mpsc;
use std::thread;
use std::time::{Duration, Instant};

use log::{debug, info, warn};

use super::protocol::{read_frame, write_frame, ControlMessage};
use super::synth::FrameSynthesizer;
use super::{Condition, FrameMessage, Payload, SessionConfig};
use crate::depth_codec::encode_raw_grid;
use crate::geometry::Pose;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SessionSummary {
    pub frames_sent: u64,
    /// False when the client went away before the last frame.
    pub completed: bool,
    /// `(first frame index carrying it, new condition)` for each applied change.
    pub condition_changes: Vec<(u64, Condition)>,
    pub elapsed: Duration,
}

/// A bound, not yet connected, frame server.
pub struct FrameServer {
    listener: TcpListener,
    fps: f64,
    condition: Condition,
}

impl FrameServer {
    pub fn bind(config: &SessionConfig) -> Result<Self> {
        config.validate()?;
        let listener = TcpListener::bind(config.endpoint)
            .map_err(|e| Error::Startup(format!("cannot bind {}: {e}", config.endpoint)))?;
        Ok(Self {
            listener,
            fps: config.fps,
            condition: config.condition,
        })
    }

    pub fn local_addr(&self) -> Result<SocketAddr> {
        self.listener
            .local_addr()
            .map_err(|e| Error::Startup(format!("no local address: {e}")))
    }

    /// Waits for one client and streams a frame per pose.
    pub fn serve(self, poses: &[Pose], synth: &dyn FrameSynthesizer) -> Result<SessionSummary> {
        if poses.is_empty() {
            return Err(Error::Startup("empty pose list".into()));
        }
        let (stream, peer) = self
            .listener
            .accept()
            .map_err(|e| Error::Startup(format!("accept failed: {e}")))?;
        info!("client connected from {peer}");
        stream_session(stream, poses, synth, self.fps, self.condition)
    }
}

/// Binds `config.endpoint`, accepts one client and streams `poses`.
pub fn serve_sequence(
    poses: &[Pose],
    synth: &dyn FrameSynthesizer,
    config: &SessionConfig,
) -> Result<SessionSummary> {
    if poses.is_empty() {
        return Err(Error::Startup("empty pose list".into()));
    }
    FrameServer::bind(config)?.serve(poses, synth)
}

fn spawn_control_reader(stream: &TcpStream) -> Result<mpsc::Receiver<ControlMessage>> {
    let mut reader = stream
        .try_clone()
        .map_err(|e| Error::Startup(format!("cannot clone stream: {e}")))?;
    let (tx, rx) = mpsc::channel();
    thread::spawn(move || {
        let mut offset = 0;
        loop {
            match read_frame(&mut reader, &mut offset) {
                Ok(Some(body)) => match serde_json::from_slice::<ControlMessage>(&body) {
                    Ok(msg) => {
                        if tx.send(msg).is_err() {
                            break;
                        }
                    }
                    Err(e) => warn!("ignoring malformed control message: {e}"),
                },
                Ok(None) => break,
                Err(e) => {
                    debug!("control channel closed: {e}");
                    break;
                }
            }
        }
    });
    Ok(rx)
}

fn stream_session(
    mut stream: TcpStream,
    poses: &[Pose],
    synth: &dyn FrameSynthesizer,
    fps: f64,
    initial: Condition,
) -> Result<SessionSummary> {
    let _ = stream.set_nodelay(true);
    let controls = spawn_control_reader(&stream)?;
    let period = 1.0 / fps;
    let start = Instant::now();
    let mut condition = initial;
    let mut changes = Vec::new();
    let mut sent = 0u64;
    let mut completed = true;

    for (i, pose) in poses.iter().enumerate() {
        let due = start + Duration::from_secs_f64(i as f64 * period);
        if let Some(wait) = due.checked_duration_since(Instant::now()) {
            thread::sleep(wait);
        }
        for msg in controls.try_iter() {
            match msg.apply(condition) {
                Ok(next) if next != condition => {
                    info!("frame {i}: condition {condition} -> {next}");
                    condition = next;
                    changes.push((i as u64, next));
                }
                Ok(_) => {}
                Err(e) => warn!("rejected control message {msg:?}: {e}"),
            }
        }
        let message = FrameMessage {
            frame_index: i as u64,
            timestamp: i as f64 * period,
            pose: *pose,
            condition,
            rgb: Payload::inline(&synth.rgb_png(pose, condition)?),
            depth: Payload::inline(&encode_raw_grid(&synth.depth_codes(pose, condition))),
        };
        let body = serde_json::to_vec(&message)?;
        if let Err(e) = write_frame(&mut stream, &body) {
            warn!("client disconnected after {sent} frames: {e}");
            completed = false;
            break;
        }
        sent += 1;
    }
    let _ = stream.shutdown(Shutdown::Write);
    Ok(SessionSummary {
        frames_sent: sent,
        completed,
        condition_changes: changes,
        elapsed: start.elapsed(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::capture::ProceduralSynthesizer;

    #[test]
    fn empty_pose_list_is_a_startup_error() {
        let cfg = SessionConfig::new("127.0.0.1:0".parse().unwrap(), "/tmp");
        let err = serve_sequence(&[], &ProceduralSynthesizer::default(), &cfg).unwrap_err();
        assert!(matches!(err, Error::Startup(_)));
    }

    #[test]
    fn bind_failure_is_a_startup_error() {
        let first = TcpListener::bind("127.0.0.1:0").unwrap();
        let cfg = SessionConfig::new(first.local_addr().unwrap(), "/tmp");
        assert!(matches!(FrameServer::bind(&cfg), Err(Error::Startup(_))));
    }

    #[test]
    fn disconnect_terminates_with_partial_count() {
        let cfg = SessionConfig::new("127.0.0.1:0".parse().unwrap(), "/tmp").with_fps(200.0);
        let server = FrameServer::bind(&cfg).unwrap();
        let addr = server.local_addr().unwrap();
        let poses = vec![Pose::default(); 400];
        let handle = thread::spawn(move || server.serve(&poses, &ProceduralSynthesizer::default()));
        {
            let mut client = TcpStream::connect(addr).unwrap();
            let mut off = 0;
            for _ in 0..3 {
                read_frame(&mut client, &mut off).unwrap().unwrap();
            }
        }
        let summary = handle.join().unwrap().unwrap();
        assert!(!summary.completed);
        assert!(summary.frames_sent >= 3 && summary.frames_sent < 400);
    }
}
