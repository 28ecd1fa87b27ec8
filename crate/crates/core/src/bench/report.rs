use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, OutputFormat};
use crate::error::{Error, Result};

pub const REPORT_SCHEMA_VERSION: u32 = 1;
pub const CSV_HEADER: &str = "schema_version,group,metric,count,mean,min,max";

/// One measured row: a trial under one method setting (`group`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRow {
    pub trial: usize,
    pub group: String,
    pub metrics: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub info: BTreeMap<String, serde_json::Value>,
}

impl TrialRow {
    pub fn new(trial: usize, group: impl Into<String>) -> Self {
        Self { trial, group: group.into(), metrics: BTreeMap::new(), info: BTreeMap::new() }
    }

    pub fn metric(mut self, name: &str, value: f64) -> Self {
        self.metrics.insert(name.to_string(), value);
        self
    }

    pub fn info(mut self, name: &str, value: impl Serialize) -> Self {
        self.info.insert(name.to_string(), serde_json::to_value(value).expect("serializable"));
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub group: String,
    pub metric: String,
    pub count: usize,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub artifact_version: String,
    pub command: String,
    pub seed: u64,
    pub config: ExperimentConfig,
    pub metric_variants: BTreeMap<String, String>,
    pub trials: Vec<TrialRow>,
    pub aggregates: Vec<Aggregate>,
    /// Side files (name, contents) written next to the report.
    #[serde(skip)]
    pub attachments: Vec<(String, String)>,
}

/// Mean/min/max per (group, metric), in sorted order.
pub fn aggregate(trials: &[TrialRow]) -> Vec<Aggregate> {
    let mut acc: BTreeMap<(&str, &str), Vec<f64>> = BTreeMap::new();
    for t in trials {
        for (m, &v) in &t.metrics {
            acc.entry((&t.group, m)).or_default().push(v);
        }
    }
    acc.into_iter()
        .map(|((group, metric), vs)| Aggregate {
            group: group.to_string(),
            metric: metric.to_string(),
            count: vs.len(),
            mean: vs.iter().sum::<f64>() / vs.len() as f64,
            min: vs.iter().copied().fold(f64::INFINITY, f64::min),
            max: vs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        })
        .collect()
}

impl RunReport {
    pub fn new(command: &str, config: &ExperimentConfig, trials: Vec<TrialRow>) -> Self {
        Self {
            schema_version: REPORT_SCHEMA_VERSION,
            artifact_version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            seed: config.seed,
            config: config.clone(),
            metric_variants: BTreeMap::new(),
            aggregates: aggregate(&trials),
            trials,
            attachments: Vec::new(),
        }
    }

    pub fn variant(mut self, metric: &str, description: &str) -> Self {
        self.metric_variants.insert(metric.to_string(), description.to_string());
        self
    }

    pub fn find(&self, group: &str, metric: &str) -> Option<&Aggregate> {
        self.aggregates.iter().find(|a| a.group == group && a.metric == metric)
    }

    /// Errors unless every aggregate equals its recomputation from the trials.
    pub fn check_aggregates(&self) -> Result<()> {
        if aggregate(&self.trials) != self.aggregates {
            return Err(Error::Contract("report aggregates do not match their trial rows".into()));
        }
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for a in &self.aggregates {
            out.push_str(&format!(
                "{REPORT_SCHEMA_VERSION},{},{},{},{},{},{}\n",
                a.group, a.metric, a.count, a.mean, a.min, a.max
            ));
        }
        out
    }

    pub fn trials_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for t in &self.trials {
            out.push_str(&serde_json::to_string(t)?);
            out.push('\n');
        }
        Ok(out)
    }

    /// Writes `report.json`, `trials.jsonl`, `summary.csv` and attachments.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("report.json"), serde_json::to_string_pretty(self)?)?;
        std::fs::write(dir.join("trials.jsonl"), self.trials_jsonl()?)?;
        std::fs::write(dir.join("summary.csv"), self.to_csv())?;
        for (name, body) in &self.attachments {
            std::fs::write(dir.join(name), body)?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let r: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        if r.schema_version != REPORT_SCHEMA_VERSION {
            return Err(Error::Format(format!("unsupported report schema version {}", r.schema_version)));
        }
        Ok(r)
    }

    /// Aggregate summary in the requested format.
    pub fn write_summary<W: Write>(&self, mut out: W, format: OutputFormat) -> Result<()> {
        match format {
            OutputFormat::Csv => out.write_all(self.to_csv().as_bytes())?,
            OutputFormat::Json => {
                let summary = serde_json::json!({
                    "command": self.command,
                    "seed": self.seed,
                    "artifact_version": self.artifact_version,
                    "metric_variants": self.metric_variants,
                    "aggregates": self.aggregates,
                });
                serde_json::to_writer_pretty(&mut out, &summary)?;
                out.write_all(b"\n")?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn aggregates_recompute() {
        let cfg = ExperimentConfig::default_for("spec").unwrap();
        let rows = vec![
            TrialRow::new(0, "g").metric("x", 1.0),
            TrialRow::new(1, "g").metric("x", 3.0),
            TrialRow::new(0, "h").metric("x", 2.0),
        ];
        let mut r = RunReport::new("spec", &cfg, rows);
        let g = r.find("g", "x").unwrap();
        assert_eq!((g.count, g.mean, g.min, g.max), (2, 2.0, 1.0, 3.0));
        r.check_aggregates().unwrap();
        let back: RunReport = serde_json::from_str(&serde_json::to_string(&r).unwrap()).unwrap();
        back.check_aggregates().unwrap();
        r.aggregates[0].mean = 9.0;
        assert!(r.check_aggregates().is_err());
        assert!(r.to_csv().starts_with(CSV_HEADER));
    }
}
