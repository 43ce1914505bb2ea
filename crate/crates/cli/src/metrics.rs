//! Append-only JSON-lines metrics log. Every line carries the command, the
//! config hash and the seed; no wall-clock data is written.

use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde_json::{json, Map, Value};

use crate::error::CliResult;

pub const LOG_NAME: &str = "metrics.jsonl";

pub struct MetricsLog {
    path: PathBuf,
    writer: BufWriter<File>,
    command: String,
    config_hash: String,
    seed: u64,
}

impl MetricsLog {
    pub fn open(dir: &Path, command: &str, config_hash: &str, seed: u64) -> CliResult<Self> {
        std::fs::create_dir_all(dir)?;
        let path = dir.join(LOG_NAME);
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        Ok(Self {
            path,
            writer: BufWriter::new(file),
            command: command.to_string(),
            config_hash: config_hash.to_string(),
            seed,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Writes one line: the self-describing header fields, `event`, then
    /// every field of `body` (which must be a JSON object).
    pub fn write(&mut self, event: &str, body: Value) -> CliResult<()> {
        let mut line = Map::new();
        line.insert("command".into(), json!(self.command));
        line.insert("config_hash".into(), json!(self.config_hash));
        line.insert("seed".into(), json!(self.seed));
        line.insert("event".into(), json!(event));
        if let Value::Object(fields) = body {
            line.extend(fields);
        }
        serde_json::to_writer(&mut self.writer, &Value::Object(line)).map_err(std::io::Error::from)?;
        self.writer.write_all(b"\n")?;
        Ok(())
    }

    pub fn finish(mut self) -> CliResult<()> {
        self.writer.flush()?;
        Ok(())
    }
}
