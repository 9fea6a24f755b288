//! Append-only metric emission: CSV and JSON-lines with a fixed schema,
//! plus an in-memory sink for tests. Distinct runs own distinct sinks, so
//! concurrent runs never share a writer.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::TrainError;

/// One row of the metric stream.
///
/// `wall_ms` is zero unless timing capture is enabled: with it disabled the
/// stream is a pure function of config and seed, so repeated runs produce
/// byte-identical files (run duration still lands in the manifest).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub run_id: String,
    pub iter: usize,
    pub wall_ms: u64,
    pub loss_d: f64,
    pub loss_g: f64,
    /// Oracle spectral norm of each effective discriminator weight.
    pub sigmas: Vec<f64>,
    pub frechet: f64,
    pub mode_coverage: usize,
}

pub trait MetricSink {
    fn record(&mut self, record: &MetricRecord) -> Result<(), TrainError>;
    fn flush(&mut self) -> Result<(), TrainError> {
        Ok(())
    }
}

/// CSV with one `sigma_i` column per discriminator layer.
pub struct CsvSink {
    writer: BufWriter<File>,
    header_written: bool,
}

impl CsvSink {
    pub fn create(path: &Path) -> Result<Self, TrainError> {
        Ok(CsvSink { writer: BufWriter::new(File::create(path)?), header_written: false })
    }
}

impl MetricSink for CsvSink {
    fn record(&mut self, r: &MetricRecord) -> Result<(), TrainError> {
        if !self.header_written {
            let mut header = String::from("run_id,iter,wall_ms,loss_d,loss_g");
            for i in 0..r.sigmas.len() {
                header.push_str(&format!(",sigma_{i}"));
            }
            header.push_str(",frechet,mode_coverage");
            writeln!(self.writer, "{header}")?;
            self.header_written = true;
        }
        let sigmas: Vec<String> = r.sigmas.iter().map(|s| s.to_string()).collect();
        writeln!(
            self.writer,
            "{},{},{},{},{},{},{},{}",
            r.run_id,
            r.iter,
            r.wall_ms,
            r.loss_d,
            r.loss_g,
            sigmas.join(","),
            r.frechet,
            r.mode_coverage
        )?;
        Ok(())
    }

    fn flush(&mut self) -> Result<(), TrainError> {
        self.writer.flush()?;
        Ok(())
    }
}

/// One JSON object per line, same schema as the CSV.
pub struct JsonlSink {
    writer: BufWriter<File>,
}

impl JsonlSink {
    pub fn create(path: &Path) -> Result<Self, TrainError> {
        Ok(JsonlSink { writer: BufWriter::new(File::create(path)?) })
    }
}

impl MetricSink for JsonlSink {
    fn record(&mut self, r: &MetricRecord) -> Result<(), TrainError> {
        writeln!(self.writer, "{}", serde_json::to_string(r)?)?;
        Ok(())
    }

    fn flush(&mut self) -> Result<(), TrainError> {
        self.writer.flush()?;
        Ok(())
    }
}

#[derive(Default)]
pub struct MemorySink {
    pub records: Vec<MetricRecord>,
}

impl MetricSink for MemorySink {
    fn record(&mut self, r: &MetricRecord) -> Result<(), TrainError> {
        self.records.push(r.clone());
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_record() -> MetricRecord {
        MetricRecord {
            run_id: "r1".into(),
            iter: 10,
            wall_ms: 0,
            loss_d: 1.25,
            loss_g: 0.5,
            sigmas: vec![1.0, 0.99],
            frechet: 3.5,
            mode_coverage: 7,
        }
    }

    #[test]
    fn csv_layout_is_stable() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        {
            let mut sink = CsvSink::create(&path).unwrap();
            sink.record(&sample_record()).unwrap();
            sink.flush().unwrap();
        }
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(
            text,
            "run_id,iter,wall_ms,loss_d,loss_g,sigma_0,sigma_1,frechet,mode_coverage\nr1,10,0,1.25,0.5,1,0.99,3.5,7\n"
        );
    }

    #[test]
    fn jsonl_roundtrips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.jsonl");
        {
            let mut sink = JsonlSink::create(&path).unwrap();
            sink.record(&sample_record()).unwrap();
            sink.flush().unwrap();
        }
        let text = std::fs::read_to_string(&path).unwrap();
        let parsed: MetricRecord = serde_json::from_str(text.trim()).unwrap();
        assert_eq!(parsed, sample_record());
    }
}
