//! Capture client: persists every received message verbatim.
//!
//! Reception and disk writes run on separate threads joined by a bounded
//! queue. Nothing on the receive path parses the message body; files are
//! named by arrival order, which matches `frame_index` for a conforming
//! server.

use std::fs;
use std::io::{self, Read, Write};
use std::net::TcpStream;
use std::path::{Path, PathBuf};
use std::sync::mpsc::{self, TrySendError};
use std::thread;
use std::time::{Duration, Instant};

use log::{debug, info};

use super::protocol::{read_frame, write_frame, ControlMessage};
use super::SessionConfig;
use crate::error::IoContext;
use crate::{Error, Result};

pub const RAW_DIR: &str = "raw";

#[derive(Debug, Clone, Default)]
pub struct CaptureOptions {
    /// Control messages to send, each right after the frame with the given
    /// arrival index has been received.
    pub controls: Vec<(u64, ControlMessage)>,
    /// How long to keep retrying the initial connection.
    pub connect_timeout: Duration,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CaptureSummary {
    pub received: u64,
    pub persisted: u64,
}

/// Raw file name for the frame that arrived `index`-th.
pub fn raw_file_name(index: u64) -> String {
    format!("{index:06}.json")
}

fn connect(config: &SessionConfig, timeout: Duration) -> Result<TcpStream> {
    let deadline = Instant::now() + timeout;
    loop {
        match TcpStream::connect(config.endpoint) {
            Ok(s) => return Ok(s),
            Err(e) if Instant::now() >= deadline => {
                return Err(Error::io(format!("connecting to {}", config.endpoint), e))
            }
            Err(_) => thread::sleep(Duration::from_millis(20)),
        }
    }
}

/// Connects to the frame server and writes each message to
/// `out_dir/raw/NNNNNN.json` until the server closes the stream.
pub fn capture_client(config: &SessionConfig, options: &CaptureOptions) -> Result<CaptureSummary> {
    config.validate()?;
    let raw_dir = config.out_dir.join(RAW_DIR);
    fs::create_dir_all(&raw_dir).ctx(|| format!("creating {}", raw_dir.display()))?;
    let stream = connect(config, options.connect_timeout)?;
    let _ = stream.set_nodelay(true);
    let control = stream
        .try_clone()
        .map_err(|e| Error::io("cloning capture stream", e))?;
    let summary = receive_into(
        stream,
        control,
        &options.controls,
        config.queue_capacity(),
        FileSink { dir: raw_dir },
    )?;
    info!(
        "capture finished: {} received, {} persisted",
        summary.received, summary.persisted
    );
    Ok(summary)
}

pub(crate) trait FrameSink: Send + 'static {
    fn persist(&mut self, index: u64, body: &[u8]) -> io::Result<()>;
}

struct FileSink {
    dir: PathBuf,
}

impl FrameSink for FileSink {
    fn persist(&mut self, index: u64, body: &[u8]) -> io::Result<()> {
        write_file(&self.dir.join(raw_file_name(index)), body)
    }
}

fn write_file(path: &Path, body: &[u8]) -> io::Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(body)?;
    f.sync_data()
}

/// Receive loop with a bounded hand-off to a writer thread.
pub(crate) fn receive_into<R, W, S>(
    mut reader: R,
    mut control: W,
    controls: &[(u64, ControlMessage)],
    capacity: usize,
    mut sink: S,
) -> Result<CaptureSummary>
where
    R: Read,
    W: Write,
    S: FrameSink,
{
    let (tx, rx) = mpsc::sync_channel::<(u64, Vec<u8>)>(capacity);
    let writer = thread::spawn(move || -> Result<u64> {
        let mut persisted = 0u64;
        for (index, body) in rx {
            sink.persist(index, &body)
                .map_err(|source| Error::Persist { persisted, source })?;
            persisted += 1;
        }
        Ok(persisted)
    });

    let mut offset = 0u64;
    let mut received = 0u64;
    let outcome: Result<()> = loop {
        let body = match read_frame(&mut reader, &mut offset) {
            Ok(Some(body)) => body,
            Ok(None) => break Ok(()),
            Err(e) => break Err(e),
        };
        let index = received;
        received += 1;
        match tx.try_send((index, body)) {
            Ok(()) => {}
            Err(TrySendError::Full(_)) => {
                break Err(Error::BufferOverflow {
                    received: index,
                    capacity,
                })
            }
            // writer died; its error is collected below
            Err(TrySendError::Disconnected(_)) => break Ok(()),
        }
        for (_, msg) in controls.iter().filter(|(after, _)| *after == index) {
            debug!("sending control after frame {index}: {msg:?}");
            let bytes = serde_json::to_vec(msg).expect("control messages always serialize");
            if let Err(e) = write_frame(&mut control, &bytes) {
                debug!("control message not delivered: {e}");
            }
        }
    };
    drop(tx);
    let persisted = writer.join().expect("writer thread panicked")?;
    outcome?;
    if persisted != received {
        return Err(Error::Persist {
            persisted,
            source: io::Error::other("writer stopped early"),
        });
    }
    Ok(CaptureSummary {
        received,
        persisted,
    })
}
