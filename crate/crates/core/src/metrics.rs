//! Line-delimited JSON metric streams.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use crate::error::Result;

/// Receives one structured record per training step, epoch or round.
pub trait MetricsSink {
    fn record(&mut self, stream: &str, value: serde_json::Value) -> Result<()>;
}

/// Discards everything.
pub struct NullSink;

impl MetricsSink for NullSink {
    fn record(&mut self, _: &str, _: serde_json::Value) -> Result<()> {
        Ok(())
    }
}

/// Keeps records in memory, tagged by stream name.
#[derive(Debug, Default)]
pub struct MemorySink {
    pub records: Vec<(String, serde_json::Value)>,
}

impl MemorySink {
    pub fn stream(&self, name: &str) -> Vec<&serde_json::Value> {
        self.records
            .iter()
            .filter(|(s, _)| s == name)
            .map(|(_, v)| v)
            .collect()
    }
}

impl MetricsSink for MemorySink {
    fn record(&mut self, stream: &str, value: serde_json::Value) -> Result<()> {
        self.records.push((stream.to_string(), value));
        Ok(())
    }
}

/// Writes `<dir>/<stream>.jsonl`, one file per stream.
pub struct JsonlSink {
    dir: std::path::PathBuf,
    files: std::collections::BTreeMap<String, BufWriter<File>>,
}

impl JsonlSink {
    pub fn new(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            files: Default::default(),
        })
    }
}

impl MetricsSink for JsonlSink {
    fn record(&mut self, stream: &str, value: serde_json::Value) -> Result<()> {
        if !self.files.contains_key(stream) {
            let f = File::create(self.dir.join(format!("{stream}.jsonl")))?;
            self.files.insert(stream.to_string(), BufWriter::new(f));
        }
        let w = self.files.get_mut(stream).expect("inserted above");
        serde_json::to_writer(&mut *w, &value)?;
        w.write_all(b"\n")?;
        w.flush()?;
        Ok(())
    }
}

pub(crate) fn to_value<T: Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).expect("metric records serialize")
}
