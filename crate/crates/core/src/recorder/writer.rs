use super::{record_crc, LogHeader, RecorderError, Result};
use crate::protocol::Timestamp;
use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::{Arc, Mutex};

#[derive(Debug, Clone, Copy)]
struct TopicCursor {
    next_seq: u32,
    last_t: Option<Timestamp>,
}

/// Appends records to one session log. Checks all preconditions before
/// touching the sink, so a rejected append leaves the output unchanged.
pub struct LogWriter<W: Write> {
    out: W,
    header: LogHeader,
    cursors: HashMap<u16, TopicCursor>,
    bytes_written: u64,
    records: u64,
}

impl LogWriter<BufWriter<File>> {
    pub fn create(path: impl AsRef<Path>, header: LogHeader) -> Result<Self> {
        LogWriter::new(BufWriter::new(File::create(path)?), header)
    }
}

impl<W: Write> LogWriter<W> {
    pub fn new(mut out: W, header: LogHeader) -> Result<Self> {
        let bytes = header.encode();
        out.write_all(&bytes)?;
        let cursors = header
            .topics
            .iter()
            .map(|t| (t.topic_id, TopicCursor { next_seq: 0, last_t: None }))
            .collect();
        Ok(LogWriter { out, header, cursors, bytes_written: bytes.len() as u64, records: 0 })
    }

    pub fn header(&self) -> &LogHeader {
        &self.header
    }

    pub fn bytes_written(&self) -> u64 {
        self.bytes_written
    }

    pub fn records_written(&self) -> u64 {
        self.records
    }

    /// Appends one record and returns its per-topic sequence number.
    pub fn append(&mut self, topic_id: u16, t: Timestamp, payload: &[u8]) -> Result<u32> {
        let cursor = self
            .cursors
            .get_mut(&topic_id)
            .ok_or_else(|| RecorderError::InvalidArgument(format!("topic {topic_id} not registered")))?;
        if let Some(last) = cursor.last_t {
            if t < last {
                return Err(RecorderError::Ordering { topic_id, last: last.0, got: t.0 });
            }
        }
        let len = u32::try_from(payload.len())
            .map_err(|_| RecorderError::InvalidArgument(format!("payload of {} bytes too large", payload.len())))?;
        let seq = cursor.next_seq;
        let mut rec = Vec::with_capacity(super::RECORD_HEADER_LEN + payload.len() + super::CRC_LEN);
        rec.extend_from_slice(&topic_id.to_le_bytes());
        rec.extend_from_slice(&seq.to_le_bytes());
        rec.extend_from_slice(&t.0.to_le_bytes());
        rec.extend_from_slice(&len.to_le_bytes());
        rec.extend_from_slice(payload);
        rec.extend_from_slice(&record_crc(topic_id, seq, t.0, payload).to_le_bytes());
        self.out.write_all(&rec)?;
        cursor.next_seq += 1;
        cursor.last_t = Some(t);
        self.bytes_written += rec.len() as u64;
        self.records += 1;
        Ok(seq)
    }

    pub fn flush(&mut self) -> Result<()> {
        self.out.flush()?;
        Ok(())
    }

    /// Flushes and hands back the sink.
    pub fn finish(mut self) -> Result<W> {
        self.out.flush()?;
        Ok(self.out)
    }
}

/// Writer shared by several producers; appends are serialized by one lock.
pub struct SharedLogWriter<W: Write> {
    inner: Arc<Mutex<LogWriter<W>>>,
}

impl<W: Write> Clone for SharedLogWriter<W> {
    fn clone(&self) -> Self {
        SharedLogWriter { inner: Arc::clone(&self.inner) }
    }
}

impl<W: Write> SharedLogWriter<W> {
    pub fn new(writer: LogWriter<W>) -> Self {
        SharedLogWriter { inner: Arc::new(Mutex::new(writer)) }
    }

    pub fn append(&self, topic_id: u16, t: Timestamp, payload: &[u8]) -> Result<u32> {
        self.inner.lock().expect("writer lock poisoned").append(topic_id, t, payload)
    }

    /// Returns the writer once every other handle is dropped.
    pub fn into_inner(self) -> Option<LogWriter<W>> {
        Arc::try_unwrap(self.inner).ok().map(|m| m.into_inner().expect("writer lock poisoned"))
    }
}
