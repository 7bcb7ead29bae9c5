//! Wire format: every message is a 4-byte big-endian length followed by
//! that many bytes of UTF-8 JSON.

use std::io::{self, Read, Write};

use serde::{Deserialize, Serialize};

use super::{Condition, TimeOfDay, Weather};
use crate::{Error, Result};

/// Frames longer than this are treated as a corrupted length prefix.
pub const MAX_FRAME_LEN: u32 = 64 * 1024 * 1024;

pub fn write_frame<W: Write>(w: &mut W, body: &[u8]) -> io::Result<()> {
    let len = u32::try_from(body.len())
        .ok()
        .filter(|&l| l <= MAX_FRAME_LEN)
        .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidInput, "frame too large"))?;
    w.write_all(&len.to_be_bytes())?;
    w.write_all(body)?;
    w.flush()
}

/// Reads one framed message body.
///
/// `offset` is the stream position of the next byte and is advanced past the
/// frame. Returns `Ok(None)` on a clean end of stream at a frame boundary.
pub fn read_frame<R: Read>(r: &mut R, offset: &mut u64) -> Result<Option<Vec<u8>>> {
    let start = *offset;
    let mut prefix = [0u8; 4];
    let got = read_fully(r, &mut prefix).map_err(|e| Error::Protocol {
        offset: start,
        message: format!("reading length prefix: {e}"),
    })?;
    if got == 0 {
        return Ok(None);
    }
    if got < prefix.len() {
        return Err(Error::Protocol {
            offset: start,
            message: format!("stream ended inside length prefix ({got} of 4 bytes)"),
        });
    }
    let len = u32::from_be_bytes(prefix);
    if len == 0 || len > MAX_FRAME_LEN {
        return Err(Error::Protocol {
            offset: start,
            message: format!("corrupted length prefix {len:#010x}"),
        });
    }
    let mut body = vec![0u8; len as usize];
    let got = read_fully(r, &mut body).map_err(|e| Error::Protocol {
        offset: start + 4,
        message: format!("reading frame body: {e}"),
    })?;
    if got < body.len() {
        return Err(Error::Protocol {
            offset: start + 4 + got as u64,
            message: format!("stream ended inside frame body ({got} of {len} bytes)"),
        });
    }
    *offset = start + 4 + u64::from(len);
    Ok(Some(body))
}

/// Like `read_exact` but reports how many bytes arrived before EOF.
fn read_fully<R: Read>(r: &mut R, buf: &mut [u8]) -> io::Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        match r.read(&mut buf[filled..]) {
            Ok(0) => break,
            Ok(n) => filled += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    Ok(filled)
}

/// Client-to-server message changing session settings.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ControlMessage {
    pub set: SettingsUpdate,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SettingsUpdate {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weather: Option<Weather>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time_of_day: Option<TimeOfDay>,
}

impl ControlMessage {
    pub fn set_condition(condition: Condition) -> Self {
        Self {
            set: SettingsUpdate {
                weather: Some(condition.weather()),
                time_of_day: Some(condition.time_of_day()),
            },
        }
    }

    pub fn set_weather(weather: Weather) -> Self {
        Self {
            set: SettingsUpdate {
                weather: Some(weather),
                time_of_day: None,
            },
        }
    }

    /// The condition after applying this update to `current`.
    pub fn apply(&self, current: Condition) -> Result<Condition> {
        Condition::new(
            self.set.time_of_day.unwrap_or(current.time_of_day()),
            self.set.weather.unwrap_or(current.weather()),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    #[test]
    fn frames_round_trip_and_track_offsets() {
        let mut buf = Vec::new();
        write_frame(&mut buf, b"{\"a\":1}").unwrap();
        write_frame(&mut buf, b"[]").unwrap();
        assert_eq!(&buf[..4], &[0, 0, 0, 7]);
        let mut cur = Cursor::new(buf);
        let mut off = 0;
        assert_eq!(
            read_frame(&mut cur, &mut off).unwrap().unwrap(),
            b"{\"a\":1}"
        );
        assert_eq!(off, 11);
        assert_eq!(read_frame(&mut cur, &mut off).unwrap().unwrap(), b"[]");
        assert_eq!(off, 17);
        assert!(read_frame(&mut cur, &mut off).unwrap().is_none());
    }

    #[test]
    fn corrupted_prefix_names_offset() {
        let mut buf = Vec::new();
        write_frame(&mut buf, b"{}").unwrap();
        buf.extend_from_slice(&[0xff, 0xff, 0xff, 0xff, b'{']);
        let mut cur = Cursor::new(buf);
        let mut off = 0;
        read_frame(&mut cur, &mut off).unwrap();
        match read_frame(&mut cur, &mut off) {
            Err(Error::Protocol { offset, .. }) => assert_eq!(offset, 6),
            other => panic!("expected protocol error, got {other:?}"),
        }
    }

    #[test]
    fn truncated_body_and_prefix_are_errors() {
        let mut cur = Cursor::new(vec![0, 0, 0, 10, b'{']);
        let mut off = 0;
        assert!(matches!(
            read_frame(&mut cur, &mut off),
            Err(Error::Protocol { offset: 5, .. })
        ));
        let mut cur = Cursor::new(vec![0, 0]);
        let mut off = 0;
        assert!(matches!(
            read_frame(&mut cur, &mut off),
            Err(Error::Protocol { offset: 0, .. })
        ));
        let mut cur = Cursor::new(vec![0, 0, 0, 0]);
        assert!(read_frame(&mut cur, &mut 0).is_err());
    }

    #[test]
    fn control_message_wire_shape() {
        let msg: ControlMessage =
            serde_json::from_str(r#"{"set": {"weather": "rain", "time_of_day": "night"}}"#)
                .unwrap();
        assert_eq!(
            msg.apply(Condition::DAY_EXTRASUNNY).unwrap(),
            Condition::NIGHT_RAIN
        );
        let partial: ControlMessage =
            serde_json::from_str(r#"{"set": {"weather": "overcast"}}"#).unwrap();
        assert_eq!(
            partial.apply(Condition::DAY_RAIN).unwrap(),
            Condition::DAY_OVERCAST
        );
        assert!(partial.apply(Condition::NIGHT_RAIN).is_err());
        assert_eq!(
            serde_json::to_string(&ControlMessage::set_weather(Weather::Rain)).unwrap(),
            r#"{"set":{"weather":"rain"}}"#
        );
    }
}
