use crate::coordination::Session;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;

/// Where finalized session logs go.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LogSink {
    /// Kept in memory and returned in [`SessionLog::data`].
    Memory,
    /// One `<session_id>.rtlg` file per session.
    Directory(PathBuf),
    /// Encoded and counted, then dropped.
    Discard,
}

pub enum SinkWriter {
    Memory(Vec<u8>),
    File(BufWriter<File>, PathBuf),
    Discard,
}

impl Write for SinkWriter {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        match self {
            SinkWriter::Memory(v) => v.write(buf),
            SinkWriter::File(f, _) => f.write(buf),
            SinkWriter::Discard => Ok(buf.len()),
        }
    }

    fn flush(&mut self) -> io::Result<()> {
        match self {
            SinkWriter::File(f, _) => f.flush(),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionLog {
    pub session: Session,
    pub bytes: u64,
    pub records: u64,
    pub safety_rejects: u64,
    pub data: Option<Vec<u8>>,
    pub path: Option<PathBuf>,
}

impl LogSink {
    pub(super) fn prepare(&self) -> io::Result<()> {
        match self {
            LogSink::Directory(dir) => std::fs::create_dir_all(dir),
            _ => Ok(()),
        }
    }

    pub(super) fn open(&self, session_id: &str) -> io::Result<SinkWriter> {
        Ok(match self {
            LogSink::Memory => SinkWriter::Memory(Vec::new()),
            LogSink::Directory(dir) => {
                let path = dir.join(format!("{session_id}.rtlg"));
                SinkWriter::File(BufWriter::new(File::create(&path)?), path)
            }
            LogSink::Discard => SinkWriter::Discard,
        })
    }

    pub(super) fn close(
        &self,
        session: Session,
        w: SinkWriter,
        bytes: u64,
        records: u64,
        safety_rejects: u64,
    ) -> io::Result<SessionLog> {
        let (data, path) = match w {
            SinkWriter::Memory(v) => (Some(v), None),
            SinkWriter::File(f, p) => {
                f.into_inner().map_err(|e| e.into_error())?.sync_all()?;
                (None, Some(p))
            }
            SinkWriter::Discard => (None, None),
        };
        Ok(SessionLog { session, bytes, records, safety_rejects, data, path })
    }
}
