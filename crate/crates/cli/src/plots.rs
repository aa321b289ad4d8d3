//! Plot-ready tidy tables: one observation per row, key columns followed by
//! `metric` and `value`.

use std::path::Path;

use serde_json::Value;

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum PlotKind {
    /// Training logs (JSON lines) → run, iteration, metric, value.
    TrainingCurve,
    /// Ablation table (JSON) → section, method, subset, metric, value.
    AblationTable,
    /// Robustness table (JSON) → level, policy, metric, value.
    RobustnessTable,
    /// Teacher logs, one per dataset variant → dataset, iteration, metric, value.
    DatasetComparison,
}

impl PlotKind {
    pub fn key_columns(self) -> &'static [&'static str] {
        match self {
            PlotKind::TrainingCurve => &["run", "iteration"],
            PlotKind::AblationTable => &["section", "method", "subset"],
            PlotKind::RobustnessTable => &["level", "policy"],
            PlotKind::DatasetComparison => &["dataset", "iteration"],
        }
    }
}

/// Metrics compared across dataset variants.
pub const DATASET_METRICS: [&str; 3] = ["mean_keypoint_error", "mean_action_rate", "mean_reward"];

#[derive(Debug, Clone, PartialEq)]
pub struct TidyRow {
    pub keys: Vec<String>,
    pub metric: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TidyTable {
    pub key_columns: Vec<String>,
    pub rows: Vec<TidyRow>,
}

impl TidyTable {
    pub fn new(kind: PlotKind) -> Self {
        TidyTable { key_columns: kind.key_columns().iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    pub fn header(&self) -> Vec<String> {
        let mut h = self.key_columns.clone();
        h.push("metric".into());
        h.push("value".into());
        h
    }

    fn push(&mut self, keys: Vec<String>, metric: &str, value: f64) {
        self.rows.push(TidyRow { keys, metric: metric.into(), value });
    }

    /// CSV; floats are written in shortest round-trip form.
    pub fn write_csv(&self, w: impl std::io::Write) -> CliResult<()> {
        let mut wr = csv::Writer::from_writer(w);
        let csv_err = |e: csv::Error| CliError::Core(std::io::Error::other(e).into());
        wr.write_record(self.header()).map_err(csv_err)?;
        for r in &self.rows {
            let mut rec = r.keys.clone();
            rec.push(r.metric.clone());
            rec.push(r.value.to_string());
            wr.write_record(rec).map_err(csv_err)?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> CliResult<()> {
        if let Some(d) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(d)?;
        }
        self.write_csv(std::fs::File::create(path)?)
    }

    /// Parse a tidy CSV whose last two columns are `metric` and `value`.
    pub fn read_csv(r: impl std::io::Read, file: &str) -> CliResult<Self> {
        let schema = |column: &str, detail: String| CliError::Schema { file: file.into(), column: column.into(), detail };
        let mut rd = csv::Reader::from_reader(r);
        let header: Vec<String> = rd.headers().map_err(|e| schema("header", e.to_string()))?.iter().map(String::from).collect();
        let n = header.len();
        if n < 2 || header[n - 2] != "metric" {
            return Err(schema("metric", "missing".into()));
        }
        if header[n - 1] != "value" {
            return Err(schema("value", "missing".into()));
        }
        let mut t = TidyTable { key_columns: header[..n - 2].to_vec(), rows: Vec::new() };
        for rec in rd.records() {
            let rec = rec.map_err(|e| schema("row", e.to_string()))?;
            let value = rec[n - 1].parse::<f64>().map_err(|e| schema("value", format!("`{}`: {e}", &rec[n - 1])))?;
            t.rows.push(TidyRow { keys: rec.iter().take(n - 2).map(String::from).collect(), metric: rec[n - 2].into(), value });
        }
        Ok(t)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        Self::read_csv(std::fs::File::open(path)?, &path.display().to_string())
    }
}

fn file_label(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn schema(path: &Path, column: &str, detail: &str) -> CliError {
    CliError::Schema { file: path.display().to_string(), column: column.into(), detail: detail.into() }
}

fn field<'a>(path: &Path, obj: &'a Value, column: &str) -> CliResult<&'a Value> {
    obj.get(column).ok_or_else(|| schema(path, column, "is missing"))
}

fn number(path: &Path, obj: &Value, column: &str) -> CliResult<Option<f64>> {
    match field(path, obj, column)? {
        Value::Null => Ok(None),
        v => v.as_f64().map(Some).ok_or_else(|| schema(path, column, "is not numeric")),
    }
}

fn text(path: &Path, obj: &Value, column: &str) -> CliResult<String> {
    match field(path, obj, column)? {
        Value::String(s) => Ok(s.clone()),
        Value::Number(n) => Ok(n.to_string()),
        _ => Err(schema(path, column, "is not a string")),
    }
}

fn read_json(path: &Path) -> CliResult<Value> {
    let s = std::fs::read_to_string(path)?;
    serde_json::from_str(&s).map_err(|e| schema(path, "document", &e.to_string()))
}

fn read_jsonl(path: &Path) -> CliResult<Vec<Value>> {
    let s = std::fs::read_to_string(path)?;
    s.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| schema(path, "record", &e.to_string())))
        .collect()
}

fn rows_array<'a>(path: &Path, doc: &'a Value) -> CliResult<&'a Vec<Value>> {
    field(path, doc, "rows")?.as_array().ok_or_else(|| schema(path, "rows", "is not an array"))
}

/// Reshape report files into one tidy table.
pub fn emit_plot_data(inputs: &[&Path], kind: PlotKind) -> CliResult<TidyTable> {
    let mut t = TidyTable::new(kind);
    for &path in inputs {
        if !path.exists() {
            return Err(CliError::dependency(format!("report {}", path.display()), "produce it first"));
        }
        match kind {
            PlotKind::TrainingCurve => {
                let run = file_label(path);
                for rec in read_jsonl(path)? {
                    let it = text(path, &rec, "iteration")?;
                    let obj = rec.as_object().ok_or_else(|| schema(path, "record", "is not an object"))?;
                    for (k, v) in obj.iter().filter(|(k, _)| *k != "iteration") {
                        match v {
                            Value::Null => {}
                            v => {
                                let x = v.as_f64().ok_or_else(|| schema(path, k, "is not numeric"))?;
                                t.push(vec![run.clone(), it.clone()], k, x);
                            }
                        }
                    }
                }
            }
            PlotKind::DatasetComparison => {
                let dataset = file_label(path);
                for rec in read_jsonl(path)? {
                    let it = text(path, &rec, "iteration")?;
                    for m in DATASET_METRICS {
                        if let Some(x) = number(path, &rec, m)? {
                            t.push(vec![dataset.clone(), it.clone()], m, x);
                        }
                    }
                }
            }
            PlotKind::AblationTable => {
                let doc = read_json(path)?;
                for row in rows_array(path, &doc)? {
                    let section = text(path, row, "section")?;
                    let method = text(path, row, "method")?;
                    let keys = |subset: &str| vec![section.clone(), method.clone(), subset.to_string()];
                    if let Some(sr) = number(path, row, "sr")? {
                        t.push(keys("all"), "sr", sr);
                    }
                    for subset in ["all", "successful"] {
                        let g = field(path, row, subset)?;
                        if g.is_null() {
                            continue;
                        }
                        for m in ["mpkpe", "vel_dist", "acc_dist"] {
                            if let Some(x) = number(path, g, m)? {
                                t.push(keys(subset), m, x);
                            }
                        }
                    }
                }
            }
            PlotKind::RobustnessTable => {
                let doc = read_json(path)?;
                for row in rows_array(path, &doc)? {
                    let keys = vec![text(path, row, "level")?, text(path, row, "policy")?];
                    for m in ["sr", "mpkpe"] {
                        if let Some(x) = number(path, row, m)? {
                            t.push(keys.clone(), m, x);
                        }
                    }
                }
            }
        }
    }
    Ok(t)
}
