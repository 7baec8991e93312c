// Copyright 2026 The tb Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

//! Wire protocol of the model server.
//!
//! Transport is any ordered, reliable byte stream. Every message is one
//! frame: a 4-byte unsigned big-endian length `N` followed by exactly `N`
//! bytes of UTF-8 text. `1 <= N <= 65536`; there is no terminator.
//!
//! Payloads are ASCII tokens separated by single spaces (0x20):
//!
//! ```text
//! REQ <id> rtt_ms=<v> loss_rate=<v> jitter_ms=<v> last_send_rate=<v> request_rate=<v> queue_backlog=<v> delivery_rate=<v>
//! ACT <id> <rate>
//! ERR <id> <code>
//! ```
//!
//! * `<id>` is 1 to 64 bytes from `[A-Za-z0-9._:-]`, chosen by the client and
//!   echoed verbatim. `ERR - <code>` is used when no id could be read.
//! * A request carries every flow feature exactly once, in any order. Values
//!   are decimal floating point literals (`1.5`, `2e-3`, `10`) and must be
//!   finite; the state must satisfy the flow-state invariants.
//! * `<rate>` is the sending rate in Mbps, printed as the shortest decimal
//!   string that parses back to the same IEEE-754 double, without exponent.
//! * `<code>` is one of `bad-utf8`, `bad-verb`, `bad-id`, `bad-field`,
//!   `unknown-feature`, `duplicate-feature`, `missing-feature`, `bad-value`,
//!   `invalid-state`, `frame-too-large`, `internal`.
//!
//! Every frame the server reads yields exactly one reply: `ACT` or `ERR`.
//! An oversized frame is skipped and answered with `ERR - frame-too-large`.

use std::fmt;
use std::io::{self, Read, Write};
use std::str::FromStr;

use tb_core::cc::FlowState;

pub const MAX_FRAME: usize = 64 * 1024;
pub const MAX_ID_LEN: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ErrorCode {
    BadUtf8,
    BadVerb,
    BadId,
    BadField,
    UnknownFeature,
    DuplicateFeature,
    MissingFeature,
    BadValue,
    InvalidState,
    FrameTooLarge,
    Internal,
}

impl ErrorCode {
    const ALL: [(ErrorCode, &'static str); 11] = [
        (ErrorCode::BadUtf8, "bad-utf8"),
        (ErrorCode::BadVerb, "bad-verb"),
        (ErrorCode::BadId, "bad-id"),
        (ErrorCode::BadField, "bad-field"),
        (ErrorCode::UnknownFeature, "unknown-feature"),
        (ErrorCode::DuplicateFeature, "duplicate-feature"),
        (ErrorCode::MissingFeature, "missing-feature"),
        (ErrorCode::BadValue, "bad-value"),
        (ErrorCode::InvalidState, "invalid-state"),
        (ErrorCode::FrameTooLarge, "frame-too-large"),
        (ErrorCode::Internal, "internal"),
    ];

    pub fn as_str(self) -> &'static str {
        Self::ALL.iter().find(|(c, _)| *c == self).map(|(_, s)| *s).unwrap_or("internal")
    }
}

impl fmt::Display for ErrorCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ErrorCode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Self::ALL.iter().find(|(_, n)| *n == s).map(|(c, _)| *c).ok_or_else(|| format!("unknown error code '{s}'"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Request {
    pub id: String,
    pub state: FlowState,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Reply {
    Act { id: String, rate: f64 },
    Err { id: Option<String>, code: ErrorCode },
}

impl Reply {
    pub fn id(&self) -> Option<&str> {
        match self {
            Reply::Act { id, .. } => Some(id),
            Reply::Err { id, .. } => id.as_deref(),
        }
    }
}

/// A request that could not be accepted, with whatever id was readable.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rejection {
    pub id: Option<String>,
    pub code: ErrorCode,
}

pub fn valid_id(id: &str) -> bool {
    !id.is_empty()
        && id.len() <= MAX_ID_LEN
        && id.bytes().all(|b| b.is_ascii_alphanumeric() || matches!(b, b'.' | b'_' | b':' | b'-'))
}

pub fn parse_request(payload: &[u8]) -> Result<Request, Rejection> {
    let reject = |id: Option<&str>, code| Rejection { id: id.map(str::to_string), code };
    let text = std::str::from_utf8(payload).map_err(|_| reject(None, ErrorCode::BadUtf8))?;
    let mut toks = text.split(' ');
    if toks.next() != Some("REQ") {
        return Err(reject(None, ErrorCode::BadVerb));
    }
    let id = match toks.next() {
        Some(id) if valid_id(id) => id,
        _ => return Err(reject(None, ErrorCode::BadId)),
    };
    let mut values = [None; 7];
    for tok in toks {
        let (k, v) = tok.split_once('=').ok_or_else(|| reject(Some(id), ErrorCode::BadField))?;
        let slot = FlowState::FEATURES
            .iter()
            .position(|f| *f == k)
            .ok_or_else(|| reject(Some(id), ErrorCode::UnknownFeature))?;
        if values[slot].is_some() {
            return Err(reject(Some(id), ErrorCode::DuplicateFeature));
        }
        let x: f64 = v.parse().map_err(|_| reject(Some(id), ErrorCode::BadValue))?;
        if !x.is_finite() {
            return Err(reject(Some(id), ErrorCode::BadValue));
        }
        values[slot] = Some(x);
    }
    let mut arr = [0.0; 7];
    for (a, v) in arr.iter_mut().zip(values) {
        *a = v.ok_or_else(|| reject(Some(id), ErrorCode::MissingFeature))?;
    }
    let state = FlowState::from_array(arr);
    state.validate().map_err(|_| reject(Some(id), ErrorCode::InvalidState))?;
    Ok(Request { id: id.to_string(), state })
}

pub fn format_request(id: &str, state: &FlowState) -> String {
    let mut out = format!("REQ {id}");
    for (name, v) in FlowState::FEATURES.iter().zip(state.to_array()) {
        out.push_str(&format!(" {name}={v}"));
    }
    out
}

pub fn format_reply(reply: &Reply) -> String {
    match reply {
        Reply::Act { id, rate } => format!("ACT {id} {rate}"),
        Reply::Err { id, code } => format!("ERR {} {code}", id.as_deref().unwrap_or("-")),
    }
}

pub fn parse_reply(payload: &[u8]) -> Result<Reply, String> {
    let text = std::str::from_utf8(payload).map_err(|_| "reply is not UTF-8".to_string())?;
    let toks: Vec<&str> = text.split(' ').collect();
    match toks[..] {
        ["ACT", id, rate] if valid_id(id) => {
            let rate: f64 = rate.parse().map_err(|_| format!("bad rate '{rate}'"))?;
            Ok(Reply::Act { id: id.to_string(), rate })
        }
        ["ERR", id, code] if id == "-" || valid_id(id) => Ok(Reply::Err {
            id: (id != "-").then(|| id.to_string()),
            code: code.parse()?,
        }),
        _ => Err(format!("malformed reply '{text}'")),
    }
}

pub fn write_frame<W: Write + ?Sized>(w: &mut W, payload: &[u8]) -> io::Result<()> {
    if payload.is_empty() || payload.len() > MAX_FRAME {
        return Err(io::Error::new(io::ErrorKind::InvalidInput, "frame length outside [1, 65536]"));
    }
    let mut buf = Vec::with_capacity(4 + payload.len());
    buf.extend_from_slice(&(payload.len() as u32).to_be_bytes());
    buf.extend_from_slice(payload);
    w.write_all(&buf)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Frame {
    Payload(Vec<u8>),
    /// Declared length outside `[1, MAX_FRAME]`; its bytes were skipped.
    Oversized(u64),
    Eof,
}

/// Reads one frame. End of stream on a frame boundary is `Frame::Eof`; end
/// of stream inside a frame is an `UnexpectedEof` error.
pub fn read_frame(r: &mut impl Read) -> io::Result<Frame> {
    let mut len = [0u8; 4];
    let mut got = 0;
    while got < 4 {
        match r.read(&mut len[got..]) {
            Ok(0) if got == 0 => return Ok(Frame::Eof),
            Ok(0) => return Err(io::ErrorKind::UnexpectedEof.into()),
            Ok(n) => got += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    let n = u32::from_be_bytes(len) as usize;
    if n == 0 || n > MAX_FRAME {
        let skipped = io::copy(&mut r.take(n as u64), &mut io::sink())?;
        if skipped != n as u64 {
            return Err(io::ErrorKind::UnexpectedEof.into());
        }
        return Ok(Frame::Oversized(n as u64));
    }
    let mut buf = vec![0u8; n];
    r.read_exact(&mut buf)?;
    Ok(Frame::Payload(buf))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn state() -> FlowState {
        FlowState::from_array([40.0, 0.02, 1.5, 9.6, 10.0, 0.0, 9.6])
    }

    #[test]
    fn request_round_trip() {
        let text = format_request("flow-7", &state());
        assert_eq!(
            text,
            "REQ flow-7 rtt_ms=40 loss_rate=0.02 jitter_ms=1.5 last_send_rate=9.6 request_rate=10 queue_backlog=0 delivery_rate=9.6"
        );
        assert_eq!(parse_request(text.as_bytes()).unwrap(), Request { id: "flow-7".into(), state: state() });
    }

    #[test]
    fn frame_bytes_are_exact() {
        let mut buf = Vec::new();
        write_frame(&mut buf, b"ACT a 1.5").unwrap();
        assert_eq!(buf, [0, 0, 0, 9, b'A', b'C', b'T', b' ', b'a', b' ', b'1', b'.', b'5']);
        assert_eq!(read_frame(&mut buf.as_slice()).unwrap(), Frame::Payload(b"ACT a 1.5".to_vec()));
        assert_eq!(read_frame(&mut &b""[..]).unwrap(), Frame::Eof);
        assert!(read_frame(&mut &[0u8, 0, 0, 5, b'x'][..]).is_err());
    }

    #[test]
    fn oversized_frames_are_skipped() {
        let mut buf = ((MAX_FRAME + 1) as u32).to_be_bytes().to_vec();
        buf.extend(std::iter::repeat(b'x').take(MAX_FRAME + 1));
        write_frame(&mut buf, b"next").unwrap();
        let mut r = buf.as_slice();
        assert_eq!(read_frame(&mut r).unwrap(), Frame::Oversized(MAX_FRAME as u64 + 1));
        assert_eq!(read_frame(&mut r).unwrap(), Frame::Payload(b"next".to_vec()));
    }

    #[test]
    fn malformed_requests_name_the_problem() {
        let code = |s: &str| parse_request(s.as_bytes()).unwrap_err();
        assert_eq!(code("PING x").code, ErrorCode::BadVerb);
        assert_eq!(code("REQ").code, ErrorCode::BadId);
        assert_eq!(code("REQ a/b rtt_ms=1").code, ErrorCode::BadId);
        let r = code("REQ q1 rtt_ms=1");
        assert_eq!((r.id.as_deref(), r.code), (Some("q1"), ErrorCode::MissingFeature));
        assert_eq!(code("REQ q1 rtt_ms").code, ErrorCode::BadField);
        assert_eq!(code("REQ q1 speed=1").code, ErrorCode::UnknownFeature);
        assert_eq!(code("REQ q1 rtt_ms=1 rtt_ms=2").code, ErrorCode::DuplicateFeature);
        assert_eq!(code("REQ q1 rtt_ms=inf").code, ErrorCode::BadValue);
        let bad = format_request("q2", &state()).replace("loss_rate=0.02", "loss_rate=2");
        assert_eq!(code(&bad).code, ErrorCode::InvalidState);
        assert_eq!(parse_request(&[0xff, 0xfe]).unwrap_err().code, ErrorCode::BadUtf8);
    }

    #[test]
    fn replies_round_trip() {
        for r in [
            Reply::Act { id: "x".into(), rate: 0.1 + 0.2 },
            Reply::Err { id: None, code: ErrorCode::BadVerb },
            Reply::Err { id: Some("q".into()), code: ErrorCode::MissingFeature },
        ] {
            assert_eq!(parse_reply(format_reply(&r).as_bytes()).unwrap(), r);
        }
        assert_eq!(format_reply(&Reply::Act { id: "x".into(), rate: 1e-7 }), "ACT x 0.0000001");
    }
}
