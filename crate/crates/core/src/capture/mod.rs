//! Desk-scale acquisition pipeline.
//!
//! A [`server`] streams one JSON [`FrameMessage`] per pose over TCP, a
//! [`client`] persists every message verbatim, and [`postprocess`] later
//! splits the raw messages into per-type files.

use std::fmt;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::geometry::Pose;
use crate::{Error, Result};

pub mod client;
pub mod postprocess;
pub mod protocol;
pub mod server;
pub mod synth;

pub use client::{capture_client, CaptureOptions, CaptureSummary};
pub use postprocess::{postprocess_frames, ProcessReport};
pub use protocol::{ControlMessage, SettingsUpdate};
pub use server::{serve_sequence, FrameServer, SessionSummary};
pub use synth::{FrameSynthesizer, ProceduralSynthesizer};

/// Default acquisition rate (frames per second).
pub const DEFAULT_FPS: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TimeOfDay {
    Day,
    Night,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Weather {
    Extrasunny,
    Overcast,
    Rain,
    Clear,
}

impl TimeOfDay {
    pub fn as_str(self) -> &'static str {
        match self {
            TimeOfDay::Day => "day",
            TimeOfDay::Night => "night",
        }
    }

    pub fn opposite(self) -> Self {
        match self {
            TimeOfDay::Day => TimeOfDay::Night,
            TimeOfDay::Night => TimeOfDay::Day,
        }
    }
}

impl FromStr for TimeOfDay {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "day" => Ok(TimeOfDay::Day),
            "night" => Ok(TimeOfDay::Night),
            other => Err(Error::invalid(format!("unknown time of day {other:?}"))),
        }
    }
}

impl Weather {
    pub fn as_str(self) -> &'static str {
        match self {
            Weather::Extrasunny => "extrasunny",
            Weather::Overcast => "overcast",
            Weather::Rain => "rain",
            Weather::Clear => "clear",
        }
    }
}

impl FromStr for Weather {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "extrasunny" => Ok(Weather::Extrasunny),
            "overcast" => Ok(Weather::Overcast),
            "rain" => Ok(Weather::Rain),
            "clear" => Ok(Weather::Clear),
            other => Err(Error::invalid(format!("unknown weather {other:?}"))),
        }
    }
}

/// Lighting and weather of a capture. Only five combinations exist.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct Condition {
    time_of_day: TimeOfDay,
    weather: Weather,
}

impl Condition {
    pub const DAY_EXTRASUNNY: Condition = Condition::raw(TimeOfDay::Day, Weather::Extrasunny);
    pub const DAY_OVERCAST: Condition = Condition::raw(TimeOfDay::Day, Weather::Overcast);
    pub const DAY_RAIN: Condition = Condition::raw(TimeOfDay::Day, Weather::Rain);
    pub const NIGHT_CLEAR: Condition = Condition::raw(TimeOfDay::Night, Weather::Clear);
    pub const NIGHT_RAIN: Condition = Condition::raw(TimeOfDay::Night, Weather::Rain);

    /// The valid combinations, in canonical order.
    pub const ALL: [Condition; 5] = [
        Self::DAY_EXTRASUNNY,
        Self::DAY_OVERCAST,
        Self::DAY_RAIN,
        Self::NIGHT_CLEAR,
        Self::NIGHT_RAIN,
    ];

    const fn raw(time_of_day: TimeOfDay, weather: Weather) -> Self {
        Self {
            time_of_day,
            weather,
        }
    }

    pub fn new(time_of_day: TimeOfDay, weather: Weather) -> Result<Self> {
        let c = Self::raw(time_of_day, weather);
        if Self::ALL.contains(&c) {
            Ok(c)
        } else {
            Err(Error::invalid(format!(
                "{}/{} is not a capture condition",
                time_of_day.as_str(),
                weather.as_str()
            )))
        }
    }

    pub fn time_of_day(&self) -> TimeOfDay {
        self.time_of_day
    }

    pub fn weather(&self) -> Weather {
        self.weather
    }

    pub fn is_day(&self) -> bool {
        self.time_of_day == TimeOfDay::Day
    }

    /// Filesystem-friendly form, e.g. `day_extrasunny`.
    pub fn slug(&self) -> String {
        format!("{}_{}", self.time_of_day.as_str(), self.weather.as_str())
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.time_of_day.as_str(), self.weather.as_str())
    }
}

impl FromStr for Condition {
    type Err = Error;

    /// Accepts `day/extrasunny` or `day_extrasunny`.
    fn from_str(s: &str) -> Result<Self> {
        let (tod, weather) = s
            .split_once('/')
            .or_else(|| s.split_once('_'))
            .ok_or_else(|| Error::invalid(format!("condition {s:?} is not time/weather")))?;
        Condition::new(tod.parse()?, weather.parse()?)
    }
}

impl<'de> Deserialize<'de> for Condition {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Wire {
            time_of_day: TimeOfDay,
            weather: Weather,
        }
        let w = Wire::deserialize(d)?;
        Condition::new(w.time_of_day, w.weather).map_err(serde::de::Error::custom)
    }
}

/// Image data carried by a frame: inline base64 bytes or a path relative to
/// the raw directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Payload {
    Inline { data: String },
    Path { path: PathBuf },
}

impl Payload {
    pub fn inline(bytes: &[u8]) -> Self {
        use base64::Engine;
        Payload::Inline {
            data: base64::engine::general_purpose::STANDARD.encode(bytes),
        }
    }
}

/// One captured frame as sent over the wire.
///
/// `rgb` holds PNG bytes; `depth` holds a `GTAD` raw code grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameMessage {
    pub frame_index: u64,
    pub timestamp: f64,
    pub pose: Pose,
    pub condition: Condition,
    pub rgb: Payload,
    pub depth: Payload,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionConfig {
    pub fps: f64,
    pub endpoint: SocketAddr,
    pub out_dir: PathBuf,
    pub condition: Condition,
}

impl SessionConfig {
    pub fn new(endpoint: SocketAddr, out_dir: impl Into<PathBuf>) -> Self {
        Self {
            fps: DEFAULT_FPS,
            endpoint,
            out_dir: out_dir.into(),
            condition: Condition::DAY_EXTRASUNNY,
        }
    }

    pub fn with_fps(mut self, fps: f64) -> Self {
        self.fps = fps;
        self
    }

    pub fn with_condition(mut self, condition: Condition) -> Self {
        self.condition = condition;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.fps.is_finite() && self.fps > 0.0 {
            Ok(())
        } else {
            Err(Error::invalid(format!(
                "fps must be positive, got {}",
                self.fps
            )))
        }
    }

    /// Capacity of the client's receive queue: four seconds of frames.
    pub fn queue_capacity(&self) -> usize {
        ((4.0 * self.fps).ceil() as usize).max(1)
    }
}
