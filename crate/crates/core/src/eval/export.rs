use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::data::SplitData;
use crate::encoders::{EmbeddingBatch, Encoder};
use crate::error::{Error, Result};

/// Writes `record_id,label,subject,e_1..e_D` for every record of `split`.
pub fn export_embeddings(encoder: &Encoder, split: &SplitData, path: &Path) -> Result<EmbeddingBatch> {
    let batch = encoder.encode_split(split, 256)?;
    write_embeddings(&batch, path)?;
    Ok(batch)
}

pub fn write_embeddings(batch: &EmbeddingBatch, path: &Path) -> Result<()> {
    let mut wtr = csv::Writer::from_path(path)?;
    let mut header = vec!["record_id".to_string(), "label".into(), "subject".into()];
    header.extend((1..=batch.dim()).map(|i| format!("e_{i}")));
    wtr.write_record(&header)?;
    for i in 0..batch.len() {
        let mut row = vec![
            batch.record_ids[i].to_string(),
            batch.labels[i].to_string(),
            batch.subjects[i].to_string(),
        ];
        // shortest round-trip formatting keeps the file bit-exact on reread
        row.extend(batch.rows[i].iter().map(|v| v.to_string()));
        wtr.write_record(&row)?;
    }
    wtr.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn read_embeddings(path: &Path) -> Result<EmbeddingBatch> {
    let mut rdr = csv::Reader::from_path(path)?;
    let header = rdr.headers()?.clone();
    if header.len() < 4 || &header[0] != "record_id" || &header[1] != "label" || &header[2] != "subject" {
        return Err(Error::Data(format!("{} is not an embedding export", path.display())));
    }
    let mut out = EmbeddingBatch::default();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let bad = |what: &str| Error::Data(format!("{}: row {}: bad {what}", path.display(), line + 1));
        out.record_ids.push(rec[0].parse().map_err(|_| bad("record_id"))?);
        out.labels.push(rec[1].parse().map_err(|_| bad("label"))?);
        out.subjects.push(rec[2].parse().map_err(|_| bad("subject"))?);
        let row = rec
            .iter()
            .skip(3)
            .map(|v| v.parse::<f32>().map_err(|_| bad("embedding value")))
            .collect::<Result<Vec<f32>>>()?;
        out.rows.push(row);
    }
    Ok(out)
}

/// One metric result as persisted under `reports/`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub metric: String,
    pub value: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub std: Option<f64>,
    pub config: Value,
    pub dataset_hash: Option<String>,
    pub checkpoint_hash: Option<String>,
}

impl MetricReport {
    pub fn new(metric: &str, value: f64, config: Value) -> Self {
        Self {
            metric: metric.to_string(),
            value,
            std: None,
            config,
            dataset_hash: None,
            checkpoint_hash: None,
        }
    }

    pub fn with_std(mut self, std: f64) -> Self {
        self.std = Some(std);
        self
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}
