//! Labels and the JSON-lines dataset file.
//!
//! The dataset file starts with one metadata object followed by one object
//! per user-week:
//!
//! ```text
//! {"d":56,"feature_names":[...],"window_hours":24,...}
//! {"user_id":"u001","week_index":2817,"x":[[...],[...],[...],[...],[...]],"label":"normal"}
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Read, Write};

use serde::{Deserialize, Serialize};

use super::weeks::{UserWeek, WEEK_LEN};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Normal,
    Anomalous,
}

impl Label {
    pub fn is_anomalous(self) -> bool {
        self == Label::Anomalous
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Normal => "normal",
            Label::Anomalous => "anomalous",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "normal" | "0" | "n" => Some(Label::Normal),
            "anomalous" | "anomaly" | "1" | "a" => Some(Label::Anomalous),
            _ => None,
        }
    }
}

/// Ground truth per user-week. Window labels derive from the week label.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LabelTable {
    weeks: BTreeMap<(String, i64), Label>,
}

impl LabelTable {
    pub fn insert(&mut self, user_id: impl Into<String>, week_index: i64, label: Label) {
        self.weeks.insert((user_id.into(), week_index), label);
    }

    pub fn get(&self, user_id: &str, week_index: i64) -> Option<Label> {
        self.weeks.get(&(user_id.to_string(), week_index)).copied()
    }

    pub fn window_labels(&self, user_id: &str, week_index: i64) -> Option<[Label; WEEK_LEN]> {
        self.get(user_id, week_index).map(|l| [l; WEEK_LEN])
    }

    pub fn len(&self) -> usize {
        self.weeks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weeks.is_empty()
    }

    pub fn anomalous_count(&self) -> usize {
        self.weeks.values().filter(|l| l.is_anomalous()).count()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&(String, i64), &Label)> {
        self.weeks.iter()
    }

    /// CSV with header `user_id,week_index,label`; `#` lines are comments.
    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).trim(csv::Trim::All).from_reader(input);
        let mut table = LabelTable::default();
        for row in rdr.records() {
            let row = row?;
            let line = row.position().map_or(0, |p| p.line());
            let bad = |reason: &str| Error::Malformed {
                line,
                reason: reason.to_string(),
            };
            let user = row.get(0).ok_or_else(|| bad("missing user_id"))?;
            let week = row
                .get(1)
                .and_then(|w| w.parse::<i64>().ok())
                .ok_or_else(|| bad("bad week_index"))?;
            let label = row.get(2).and_then(Label::parse).ok_or_else(|| bad("bad label"))?;
            table.insert(user, week, label);
        }
        Ok(table)
    }

    pub fn write_csv<W: Write>(&self, out: W, header_comment: Option<&str>) -> Result<()> {
        let mut out = out;
        for line in header_comment.unwrap_or_default().lines() {
            writeln!(out, "# {line}")?;
        }
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["user_id", "week_index", "label"])?;
        for ((u, wk), l) in &self.weeks {
            w.write_record([u.as_str(), &wk.to_string(), l.as_str()])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub schema: String,
    pub d: usize,
    pub feature_names: Vec<String>,
    /// Per-day vector layout: indices of the clustering features.
    pub cluster_feature_indices: Vec<usize>,
    pub window_hours: u32,
    pub day_offset_seconds: i64,
    pub n_examples: usize,
    pub n_users: usize,
    pub parsed_records: usize,
    pub skipped_lines: usize,
    pub dropped_weeks: usize,
    pub config_hash: String,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RecordLine {
    user_id: String,
    week_index: i64,
    x: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    label: Option<Label>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub meta: DatasetMeta,
    pub weeks: Vec<UserWeek>,
    pub labels: LabelTable,
}

impl Dataset {
    pub fn users(&self) -> BTreeSet<&str> {
        self.weeks.iter().map(|w| w.user_id.as_str()).collect()
    }

    pub fn write<W: Write>(&self, out: W) -> Result<()> {
        let mut out = std::io::BufWriter::new(out);
        serde_json::to_writer(&mut out, &self.meta)?;
        out.write_all(b"\n")?;
        for w in &self.weeks {
            let line = RecordLine {
                user_id: w.user_id.clone(),
                week_index: w.week_index,
                x: w.x_seq().to_vec(),
                label: self.labels.get(&w.user_id, w.week_index),
            };
            serde_json::to_writer(&mut out, &line)?;
            out.write_all(b"\n")?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read<R: Read>(input: R) -> Result<Self> {
        let mut lines = std::io::BufReader::new(input).lines();
        let first = lines.next().ok_or_else(|| Error::invalid("empty dataset file"))??;
        let meta: DatasetMeta = serde_json::from_str(&first)?;
        let mut weeks = Vec::new();
        let mut labels = LabelTable::default();
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: RecordLine = serde_json::from_str(&line)?;
            if let Some(l) = rec.label {
                labels.insert(rec.user_id.clone(), rec.week_index, l);
            }
            let w = UserWeek::new(rec.user_id, rec.week_index, rec.x)?;
            if w.dim() != meta.d {
                return Err(Error::invalid(format!(
                    "record for {} has dimension {}, metadata says {}",
                    w.user_id,
                    w.dim(),
                    meta.d
                )));
            }
            weeks.push(w);
        }
        Ok(Self { meta, weeks, labels })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labels_csv_roundtrip() {
        let mut t = LabelTable::default();
        t.insert("u1", 3, Label::Anomalous);
        t.insert("u2", 3, Label::Normal);
        let mut buf = Vec::new();
        t.write_csv(&mut buf, Some("seed=1")).unwrap();
        let back = LabelTable::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back, t);
        assert_eq!(back.window_labels("u1", 3), Some([Label::Anomalous; 5]));
        assert_eq!(back.anomalous_count(), 1);
    }

    #[test]
    fn dataset_roundtrip_is_exact() {
        let mut labels = LabelTable::default();
        labels.insert("a", 1, Label::Normal);
        let w = UserWeek::new("a", 1, (0..5).map(|i| vec![0.1 * i as f64, 1.0 / 3.0]).collect()).unwrap();
        let ds = Dataset {
            meta: DatasetMeta {
                schema: "netflow-v1".into(),
                d: 2,
                feature_names: vec!["f0".into(), "f1".into()],
                cluster_feature_indices: vec![0],
                window_hours: 24,
                day_offset_seconds: 0,
                n_examples: 1,
                n_users: 1,
                parsed_records: 10,
                skipped_lines: 0,
                dropped_weeks: 0,
                config_hash: "x".into(),
                seed: 3,
            },
            weeks: vec![w],
            labels,
        };
        let mut buf = Vec::new();
        ds.write(&mut buf).unwrap();
        assert_eq!(Dataset::read(buf.as_slice()).unwrap(), ds);
    }
}
