use super::{record_crc, LogHeader, RecorderError, Result, CRC_LEN, RECORD_HEADER_LEN};
use crate::protocol::Timestamp;
use std::collections::BTreeMap;
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TopicRecord {
    pub topic_id: u16,
    pub seq: u32,
    pub t: Timestamp,
    pub payload: Vec<u8>,
    /// Byte offset of the record in the file.
    pub offset: u64,
}

/// Set when the file ends inside a record. Everything before `valid_len`
/// was read successfully.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Truncation {
    pub valid_len: u64,
    pub dropped_bytes: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AlignedRecord {
    pub seq: u32,
    pub t: Timestamp,
    /// `t_query - t`, nanoseconds.
    pub staleness_ns: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AlignmentResult {
    pub t_query: Timestamp,
    /// One entry per requested topic, in request order.
    pub entries: Vec<(u16, Option<AlignedRecord>)>,
}

impl AlignmentResult {
    pub fn get(&self, topic_id: u16) -> Option<&AlignedRecord> {
        self.entries.iter().find(|(id, _)| *id == topic_id).and_then(|(_, r)| r.as_ref())
    }
}

/// A fully indexed, verified log.
#[derive(Debug, Clone)]
pub struct LogReader {
    header: LogHeader,
    records: Vec<TopicRecord>,
    merged: Vec<usize>,
    by_topic: BTreeMap<u16, Vec<usize>>,
    truncation: Option<Truncation>,
}

impl LogReader {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        LogReader::from_bytes(&std::fs::read(path)?)
    }

    /// Parses and verifies every record. A CRC mismatch or a sequence/time
    /// violation is an error naming the record; a partial trailing record is
    /// reported through [`LogReader::truncation`] instead.
    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let (header, mut pos) = LogHeader::decode(buf)?;
        let mut by_topic: BTreeMap<u16, Vec<usize>> = header.topics.iter().map(|t| (t.topic_id, Vec::new())).collect();
        let mut records: Vec<TopicRecord> = Vec::new();
        let mut truncation = None;
        while pos < buf.len() {
            let rest = &buf[pos..];
            if rest.len() < RECORD_HEADER_LEN {
                truncation = Some(Truncation { valid_len: pos as u64, dropped_bytes: rest.len() as u64 });
                break;
            }
            let topic_id = u16::from_le_bytes(rest[0..2].try_into().unwrap());
            let seq = u32::from_le_bytes(rest[2..6].try_into().unwrap());
            let t = u64::from_le_bytes(rest[6..14].try_into().unwrap());
            let len = u32::from_le_bytes(rest[14..18].try_into().unwrap()) as usize;
            let total = RECORD_HEADER_LEN + len + CRC_LEN;
            if rest.len() < total {
                truncation = Some(Truncation { valid_len: pos as u64, dropped_bytes: rest.len() as u64 });
                break;
            }
            let payload = &rest[RECORD_HEADER_LEN..RECORD_HEADER_LEN + len];
            let stored = u32::from_le_bytes(rest[RECORD_HEADER_LEN + len..total].try_into().unwrap());
            let integrity = |detail: String| RecorderError::Integrity { topic_id, seq, detail };
            if record_crc(topic_id, seq, t, payload) != stored {
                return Err(integrity("crc mismatch".into()));
            }
            let index = by_topic
                .get_mut(&topic_id)
                .ok_or_else(|| integrity("topic not declared in header".into()))?;
            if let Some(&last) = index.last() {
                let prev: &TopicRecord = &records[last];
                if seq != prev.seq + 1 {
                    return Err(integrity(format!("expected seq {}", prev.seq + 1)));
                }
                if t < prev.t.0 {
                    return Err(integrity(format!("time {t} precedes {}", prev.t.0)));
                }
            } else if seq != 0 {
                return Err(integrity("first record of topic must have seq 0".into()));
            }
            index.push(records.len());
            records.push(TopicRecord {
                topic_id,
                seq,
                t: Timestamp(t),
                payload: payload.to_vec(),
                offset: pos as u64,
            });
            pos += total;
        }
        let mut merged: Vec<usize> = (0..records.len()).collect();
        merged.sort_by_key(|&i| (records[i].t, records[i].topic_id, records[i].seq));
        Ok(LogReader { header, records, merged, by_topic, truncation })
    }

    pub fn header(&self) -> &LogHeader {
        &self.header
    }

    pub fn truncation(&self) -> Option<Truncation> {
        self.truncation
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Records in file order.
    pub fn records(&self) -> &[TopicRecord] {
        &self.records
    }

    /// Every record once, ordered by `(t, topic_id, seq)`.
    pub fn read_merged(&self) -> impl Iterator<Item = &TopicRecord> + '_ {
        self.merged.iter().map(move |&i| &self.records[i])
    }

    /// Records of one topic in sequence order.
    pub fn topic_records(&self, topic_id: u16) -> impl Iterator<Item = &TopicRecord> + '_ {
        self.by_topic.get(&topic_id).into_iter().flatten().map(move |&i| &self.records[i])
    }

    pub fn count(&self, topic_id: u16) -> usize {
        self.by_topic.get(&topic_id).map_or(0, Vec::len)
    }

    /// For each topic, the latest record stamped at or before `t_query`.
    pub fn align(&self, t_query: Timestamp, topics: &[u16]) -> Result<AlignmentResult> {
        let mut entries = Vec::with_capacity(topics.len());
        for &topic_id in topics {
            let index = self
                .by_topic
                .get(&topic_id)
                .ok_or_else(|| RecorderError::InvalidArgument(format!("topic {topic_id} not registered")))?;
            // first position whose time exceeds the query
            let upper = index.partition_point(|&i| self.records[i].t <= t_query);
            let hit = upper.checked_sub(1).map(|k| {
                let r = &self.records[index[k]];
                AlignedRecord { seq: r.seq, t: r.t, staleness_ns: t_query.0 - r.t.0 }
            });
            entries.push((topic_id, hit));
        }
        Ok(AlignmentResult { t_query, entries })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::{MsgKind, TopicDescriptor};
    use crate::recorder::LogWriter;

    fn two_topic_log() -> Vec<u8> {
        let header = LogHeader::new(
            "r",
            vec![
                TopicDescriptor::new(2, "rgb", MsgKind::RgbFrame, 30.0).unwrap(),
                TopicDescriptor::new(1, "state", MsgKind::RobotState, 100.0).unwrap(),
            ],
        )
        .unwrap();
        let mut w = LogWriter::new(Vec::new(), header).unwrap();
        for k in 0..30u64 {
            w.append(2, Timestamp(k * 1_000_000_000 / 30), &[k as u8; 5]).unwrap();
        }
        for k in 0..100u64 {
            w.append(1, Timestamp(k * 10_000_000), &[k as u8; 3]).unwrap();
        }
        w.finish().unwrap()
    }

    #[test]
    fn merged_order_and_ties() {
        let r = LogReader::from_bytes(&two_topic_log()).unwrap();
        assert_eq!(r.len(), 130);
        let merged: Vec<_> = r.read_merged().map(|x| (x.t, x.topic_id, x.seq)).collect();
        assert!(merged.windows(2).all(|w| w[0] < w[1]));
        // t = 0 on both topics: topic 1 sorts first
        assert_eq!((merged[0].1, merged[1].1), (1, 2));
    }

    #[test]
    fn header_only_is_empty() {
        let header = LogHeader::new("e", vec![]).unwrap();
        let bytes = LogWriter::new(Vec::new(), header).unwrap().finish().unwrap();
        let r = LogReader::from_bytes(&bytes).unwrap();
        assert!(r.is_empty());
        assert_eq!(r.read_merged().count(), 0);
        assert!(r.truncation().is_none());
    }

    #[test]
    fn flipped_payload_byte_names_record() {
        let mut bytes = two_topic_log();
        let r = LogReader::from_bytes(&bytes).unwrap();
        let victim = r.records().iter().find(|x| x.topic_id == 2 && x.seq == 17).unwrap().clone();
        bytes[victim.offset as usize + RECORD_HEADER_LEN + 2] ^= 0x40;
        match LogReader::from_bytes(&bytes) {
            Err(RecorderError::Integrity { topic_id: 2, seq: 17, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn truncation_keeps_prior_records() {
        let bytes = two_topic_log();
        let full = LogReader::from_bytes(&bytes).unwrap();
        let (_, header_len) = LogHeader::decode(&bytes).unwrap();
        for cut in header_len..bytes.len() {
            let r = LogReader::from_bytes(&bytes[..cut]).unwrap();
            let whole = full.records().iter().filter(|x| {
                x.offset as usize + RECORD_HEADER_LEN + x.payload.len() + CRC_LEN <= cut
            });
            assert_eq!(r.len(), whole.count());
            assert_eq!(r.truncation().is_some(), !full.records().iter().any(|x| x.offset as usize == cut));
            assert_eq!(&r.records()[..], &full.records()[..r.len()]);
        }
    }

    #[test]
    fn align_examples() {
        let r = LogReader::from_bytes(&two_topic_log()).unwrap();
        let before = r.align(Timestamp(0), &[1, 2]).unwrap();
        assert_eq!(before.get(1).unwrap().staleness_ns, 0);
        let exact = r.align(Timestamp(500_000_000), &[1, 2]).unwrap();
        assert_eq!(exact.get(1).map(|a| (a.seq, a.staleness_ns)), Some((50, 0)));
        assert_eq!(exact.get(2).map(|a| (a.seq, a.staleness_ns)), Some((15, 0)));
        let mid = r.align(Timestamp(520_000_000), &[2]).unwrap();
        let a = mid.get(2).unwrap();
        assert!(a.staleness_ns < 1_000_000_000 / 30);
        assert!(r.align(Timestamp(0), &[9]).is_err());
    }

    #[test]
    fn align_before_all_records_is_absent() {
        let header = LogHeader::new("late", vec![TopicDescriptor::new(0, "p", MsgKind::Phone, 50.0).unwrap()]).unwrap();
        let mut w = LogWriter::new(Vec::new(), header).unwrap();
        w.append(0, Timestamp(1000), b"p").unwrap();
        let r = LogReader::from_bytes(&w.finish().unwrap()).unwrap();
        assert_eq!(r.align(Timestamp(999), &[0]).unwrap().entries, vec![(0, None)]);
    }
}
