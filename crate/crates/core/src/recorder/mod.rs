//! Append-only multi-topic session log.
//!
//! File layout (little-endian):
//!
//! ```text
//! header  = "RTLG" | version u16 | session_id (u16 len + utf8) | topic_count u16
//!           | per topic: id u16, name (u16 len + utf8), kind u8, rate f64
//! record  = topic_id u16 | seq u32 | t u64 | len u32 | payload | crc32 u32
//! ```
//!
//! The CRC (IEEE) covers `topic_id ‖ seq ‖ t ‖ payload`. Per topic, `seq`
//! counts up from zero and `t` never decreases.

mod reader;
mod writer;

pub use reader::{AlignedRecord, AlignmentResult, LogReader, TopicRecord, Truncation};
pub use writer::{LogWriter, SharedLogWriter};

use crate::protocol::{MsgKind, TopicDescriptor};
use std::collections::HashSet;

pub const MAGIC: [u8; 4] = *b"RTLG";
pub const VERSION: u16 = 1;
/// Bytes preceding the payload in every record.
pub const RECORD_HEADER_LEN: usize = 18;
pub const CRC_LEN: usize = 4;

#[derive(Debug, thiserror::Error)]
pub enum RecorderError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("topic {topic_id}: time {got} precedes last appended time {last}")]
    Ordering { topic_id: u16, last: u64, got: u64 },
    #[error("integrity error at topic {topic_id} seq {seq}: {detail}")]
    Integrity { topic_id: u16, seq: u32, detail: String },
    #[error("bad log header: {0}")]
    Header(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, RecorderError>;

#[derive(Debug, Clone, PartialEq)]
pub struct LogHeader {
    pub session_id: String,
    pub topics: Vec<TopicDescriptor>,
}

impl LogHeader {
    pub fn new(session_id: impl Into<String>, topics: Vec<TopicDescriptor>) -> Result<Self> {
        let h = LogHeader { session_id: session_id.into(), topics };
        h.validate()?;
        Ok(h)
    }

    fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for t in &self.topics {
            if !seen.insert(t.topic_id) {
                return Err(RecorderError::InvalidArgument(format!("duplicate topic id {}", t.topic_id)));
            }
            if !(t.declared_rate_hz > 0.0) {
                return Err(RecorderError::InvalidArgument(format!("topic {} rate must be positive", t.topic_id)));
            }
        }
        if self.session_id.len() > u16::MAX as usize || self.topics.len() > u16::MAX as usize {
            return Err(RecorderError::InvalidArgument("header field too long".into()));
        }
        Ok(())
    }

    pub fn topic(&self, topic_id: u16) -> Option<&TopicDescriptor> {
        self.topics.iter().find(|t| t.topic_id == topic_id)
    }

    pub fn topic_by_name(&self, name: &str) -> Option<&TopicDescriptor> {
        self.topics.iter().find(|t| t.name == name)
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        put_str(&mut out, &self.session_id);
        out.extend_from_slice(&(self.topics.len() as u16).to_le_bytes());
        for t in &self.topics {
            out.extend_from_slice(&t.topic_id.to_le_bytes());
            put_str(&mut out, &t.name);
            out.push(t.msg_kind.code());
            out.extend_from_slice(&t.declared_rate_hz.to_le_bytes());
        }
        out
    }

    /// Parses a header, returning it with its encoded length.
    pub fn decode(buf: &[u8]) -> Result<(Self, usize)> {
        let mut c = HeaderCursor { buf, pos: 0 };
        if c.take(4, "magic")? != MAGIC {
            return Err(RecorderError::Header("bad magic".into()));
        }
        let version = c.u16("version")?;
        if version != VERSION {
            return Err(RecorderError::Header(format!("unsupported version {version}")));
        }
        let session_id = c.string("session_id")?;
        let count = c.u16("topic_count")?;
        let mut topics = Vec::with_capacity(count as usize);
        for _ in 0..count {
            let topic_id = c.u16("topic id")?;
            let name = c.string("topic name")?;
            let code = c.take(1, "topic kind")?[0];
            let msg_kind =
                MsgKind::from_code(code).ok_or_else(|| RecorderError::Header(format!("unknown topic kind {code}")))?;
            let declared_rate_hz = f64::from_le_bytes(c.take(8, "topic rate")?.try_into().unwrap());
            topics.push(TopicDescriptor { topic_id, name, msg_kind, declared_rate_hz });
        }
        let header = LogHeader { session_id, topics };
        header.validate().map_err(|e| RecorderError::Header(e.to_string()))?;
        Ok((header, c.pos))
    }
}

struct HeaderCursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> HeaderCursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let s = self
            .buf
            .get(self.pos..self.pos + n)
            .ok_or_else(|| RecorderError::Header(format!("truncated in {what}")))?;
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn string(&mut self, what: &str) -> Result<String> {
        let len = self.u16(what)? as usize;
        String::from_utf8(self.take(len, what)?.to_vec()).map_err(|_| RecorderError::Header(format!("{what} not utf-8")))
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u16).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

pub fn record_crc(topic_id: u16, seq: u32, t: u64, payload: &[u8]) -> u32 {
    let mut h = crc32fast::Hasher::new();
    h.update(&topic_id.to_le_bytes());
    h.update(&seq.to_le_bytes());
    h.update(&t.to_le_bytes());
    h.update(payload);
    h.finalize()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header() -> LogHeader {
        LogHeader::new(
            "s-1",
            vec![
                TopicDescriptor::new(0, "phone", MsgKind::Phone, 50.0).unwrap(),
                TopicDescriptor::new(2, "rgb_front", MsgKind::RgbFrame, 30.0).unwrap(),
            ],
        )
        .unwrap()
    }

    #[test]
    fn header_round_trip() {
        let h = header();
        let bytes = h.encode();
        assert_eq!(&bytes[..4], b"RTLG");
        let (back, len) = LogHeader::decode(&bytes).unwrap();
        assert_eq!(back, h);
        assert_eq!(len, bytes.len());
    }

    #[test]
    fn header_rejects_bad_input() {
        let mut bytes = header().encode();
        assert!(matches!(LogHeader::decode(&bytes[..bytes.len() - 1]), Err(RecorderError::Header(_))));
        bytes[4] = 2;
        assert!(matches!(LogHeader::decode(&bytes), Err(RecorderError::Header(_))));
        assert!(matches!(LogHeader::decode(b"RTLX\x01\x00"), Err(RecorderError::Header(_))));
        let dup = vec![
            TopicDescriptor::new(1, "a", MsgKind::Event, 1.0).unwrap(),
            TopicDescriptor::new(1, "b", MsgKind::Event, 1.0).unwrap(),
        ];
        assert!(LogHeader::new("x", dup).is_err());
    }

    #[test]
    fn crc_is_ieee() {
        // standard check value for "123456789"
        let mut h = crc32fast::Hasher::new();
        h.update(b"123456789");
        assert_eq!(h.finalize(), 0xCBF4_3926);
        assert_ne!(record_crc(0, 0, 0, b"a"), record_crc(0, 1, 0, b"a"));
    }
}
