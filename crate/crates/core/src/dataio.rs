//! Datasets, run manifests and statistics export.
//!
//! Datasets are CSV files: optional `#` comment lines, a header whose first
//! column is `t_<unit>`, then one row per time point, LF line endings.
//! Manifests are flat TOML with dotted keys.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::models::TrajectoryStats;
use crate::units::TimeUnit;

/// Expected time unit and value columns of a dataset file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Schema {
    pub time_unit: TimeUnit,
    pub columns: Vec<String>,
}

impl Schema {
    pub fn new(time_unit: TimeUnit, columns: &[&str]) -> Self {
        Schema { time_unit, columns: columns.iter().map(|s| s.to_string()).collect() }
    }

    /// One-qubit Ramsey contrast: `t_ms,C`.
    pub fn caf_contrast() -> Self {
        Self::new(TimeUnit::Millisecond, &["C"])
    }

    /// Two-qubit Bell probability: `t_ms,P_uu`.
    pub fn caf_bell() -> Self {
        Self::new(TimeUnit::Millisecond, &["P_uu"])
    }

    /// Spin-boson statistics: `t_fs,mean_sx,mean_sy,std_sx,std_sy`.
    pub fn rubrene() -> Self {
        Self::new(TimeUnit::Femtosecond, &["mean_sx", "mean_sy", "std_sx", "std_sy"])
    }

    pub fn header(&self) -> String {
        let mut h = format!("t_{}", self.time_unit.suffix());
        for c in &self.columns {
            h.push(',');
            h.push_str(c);
        }
        h
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub schema: Schema,
    /// Comment lines without the leading `#` (provenance notes).
    pub comments: Vec<String>,
    pub times: Vec<f64>,
    /// columns[c][i]: value of column c at times[i].
    pub columns: Vec<Vec<f64>>,
}

impl Dataset {
    pub fn new(schema: Schema, times: Vec<f64>, columns: Vec<Vec<f64>>) -> Result<Self> {
        let ds = Dataset { schema, comments: Vec::new(), times, columns };
        ds.validate()?;
        Ok(ds)
    }

    pub fn with_comment(mut self, comment: impl Into<String>) -> Self {
        self.comments.push(comment.into());
        self
    }

    pub fn column(&self, name: &str) -> Result<&[f64]> {
        self.schema
            .columns
            .iter()
            .position(|c| c == name)
            .map(|i| self.columns[i].as_slice())
            .ok_or_else(|| Error::MissingSeries(name.into()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.columns.len() != self.schema.columns.len() {
            return Err(Error::Dimension(format!(
                "{} value columns for {} declared names",
                self.columns.len(),
                self.schema.columns.len()
            )));
        }
        for (c, col) in self.columns.iter().enumerate() {
            if col.len() != self.times.len() {
                return Err(Error::Dimension(format!("column `{}` has {} rows, expected {}", self.schema.columns[c], col.len(), self.times.len())));
            }
        }
        for (i, w) in self.times.windows(2).enumerate() {
            if !(w[1] > w[0]) {
                return Err(Error::Dataset { line: i + 2, msg: format!("times must increase strictly ({} then {})", w[0], w[1]) });
            }
        }
        for (c, col) in self.columns.iter().enumerate() {
            let is_std = self.schema.columns[c].starts_with("std_");
            for (i, v) in col.iter().enumerate() {
                if !v.is_finite() || (is_std && *v < 0.0) {
                    return Err(Error::Dataset { line: i + 1, msg: format!("invalid value {v} in column `{}`", self.schema.columns[c]) });
                }
            }
        }
        if self.comments.iter().any(|c| c.contains('\n') || c.contains('\r')) {
            return Err(Error::InvalidArgument("comments must be single lines".into()));
        }
        Ok(())
    }

    /// CSV text; numbers use the shortest representation that reads back
    /// to the same value.
    pub fn to_csv(&self) -> Result<String> {
        self.validate()?;
        let mut out = String::new();
        for c in &self.comments {
            let _ = writeln!(out, "#{c}");
        }
        let _ = writeln!(out, "{}", self.schema.header());
        for (i, t) in self.times.iter().enumerate() {
            let _ = write!(out, "{t:?}");
            for col in &self.columns {
                let _ = write!(out, ",{:?}", col[i]);
            }
            out.push('\n');
        }
        Ok(out)
    }

    /// Parses CSV text against `schema`.
    pub fn parse(text: &str, schema: &Schema) -> Result<Self> {
        if text.is_empty() {
            return Err(Error::Dataset { line: 1, msg: format!("empty file, expected header `{}`", schema.header()) });
        }
        if let Some(pos) = text.find('\r') {
            let line = text[..pos].matches('\n').count() + 1;
            return Err(Error::Dataset { line, msg: "carriage return found; files use LF line endings".into() });
        }
        if !text.ends_with('\n') {
            return Err(Error::Dataset { line: text.lines().count(), msg: "missing final newline".into() });
        }
        let mut comments = Vec::new();
        let mut header: Option<Vec<&str>> = None;
        let mut times = Vec::new();
        let mut columns = vec![Vec::new(); schema.columns.len()];
        for (i, line) in text.lines().enumerate() {
            let ln = i + 1;
            if let Some(c) = line.strip_prefix('#') {
                if header.is_some() {
                    return Err(Error::Dataset { line: ln, msg: "comments must precede the header".into() });
                }
                comments.push(c.to_string());
                continue;
            }
            if line.is_empty() {
                return Err(Error::Dataset { line: ln, msg: "blank line".into() });
            }
            let fields: Vec<&str> = line.split(',').collect();
            let Some(h) = &header else {
                check_header(&fields, schema, ln)?;
                header = Some(fields);
                continue;
            };
            if fields.len() != h.len() {
                return Err(Error::Dataset { line: ln, msg: format!("{} fields, header has {}", fields.len(), h.len()) });
            }
            let parse = |s: &str| -> Result<f64> {
                let v: f64 = s.trim().parse().map_err(|_| Error::Dataset { line: ln, msg: format!("`{s}` is not a number") })?;
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(Error::Dataset { line: ln, msg: format!("non-finite value `{s}`") })
                }
            };
            times.push(parse(fields[0])?);
            for (c, f) in fields[1..].iter().enumerate() {
                columns[c].push(parse(f)?);
            }
        }
        if header.is_none() {
            return Err(Error::Dataset { line: 1, msg: format!("no header, expected `{}`", schema.header()) });
        }
        let first_row = comments.len() + 2;
        for (k, w) in times.windows(2).enumerate() {
            if !(w[1] > w[0]) {
                return Err(Error::Dataset { line: first_row + k + 1, msg: format!("times must increase strictly ({} then {})", w[0], w[1]) });
            }
        }
        for (c, name) in schema.columns.iter().enumerate() {
            if name.starts_with("std_") {
                if let Some(k) = columns[c].iter().position(|v| *v < 0.0) {
                    return Err(Error::Dataset { line: first_row + k, msg: format!("negative standard deviation in `{name}`") });
                }
            }
        }
        Ok(Dataset { schema: schema.clone(), comments, times, columns })
    }
}

fn check_header(fields: &[&str], schema: &Schema, line: usize) -> Result<()> {
    let unit = fields[0]
        .strip_prefix("t_")
        .ok_or_else(|| Error::Dataset { line, msg: format!("first column `{}` must be `t_<unit>`", fields[0]) })?;
    let unit = TimeUnit::from_suffix(unit).ok_or_else(|| Error::Dataset { line, msg: format!("unknown time unit `{unit}`") })?;
    if unit != schema.time_unit {
        return Err(Error::UnitMismatch { expected: schema.time_unit.suffix().into(), found: unit.suffix().into() });
    }
    for c in &schema.columns {
        if !fields[1..].contains(&c.as_str()) {
            return Err(Error::MissingSeries(c.clone()));
        }
    }
    if fields.len() != schema.columns.len() + 1 || fields[1..].iter().zip(&schema.columns).any(|(a, b)| a != b) {
        return Err(Error::Dataset { line, msg: format!("header `{}` does not match `{}`", fields.join(","), schema.header()) });
    }
    Ok(())
}

pub fn load_dataset(path: &Path, schema: &Schema) -> Result<Dataset> {
    let text = std::fs::read_to_string(path)?;
    Dataset::parse(&text, schema)
}

pub fn save_dataset(dataset: &Dataset, path: &Path) -> Result<()> {
    write_atomic(path, dataset.to_csv()?.as_bytes())
}

/// Writes through a temporary file in the target directory and renames it
/// into place, so readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Statistics as CSV: time column, then `mean_<name>,std_<name>` per
/// observable in registration order, then `lost_fraction` when tracked.
/// Values carry 12 significant digits.
pub fn stats_csv(stats: &TrajectoryStats, time_unit: TimeUnit, manifest_hash: &str) -> String {
    let mut out = format!("# manifest_hash={manifest_hash}\n");
    let mut header = vec![format!("t_{}", time_unit.suffix())];
    for n in &stats.names {
        header.push(format!("mean_{n}"));
        header.push(format!("std_{n}"));
    }
    if stats.lost_fraction.is_some() {
        header.push("lost_fraction".into());
    }
    out.push_str(&header.join(","));
    out.push('\n');
    for (s, t) in stats.sample_times.iter().enumerate() {
        let _ = write!(out, "{t:.11e}");
        for o in 0..stats.names.len() {
            let _ = write!(out, ",{:.11e},{:.11e}", stats.mean[o][s], stats.std[o][s]);
        }
        if let Some(l) = &stats.lost_fraction {
            let _ = write!(out, ",{:.11e}", l[s]);
        }
        out.push('\n');
    }
    out
}

/// Schema matching the columns [`stats_csv`] writes for `stats`.
pub fn stats_schema(stats: &TrajectoryStats, time_unit: TimeUnit) -> Schema {
    let mut cols = Vec::new();
    for n in &stats.names {
        cols.push(format!("mean_{n}"));
        cols.push(format!("std_{n}"));
    }
    if stats.lost_fraction.is_some() {
        cols.push("lost_fraction".into());
    }
    Schema { time_unit, columns: cols }
}

pub fn export_stats(stats: &TrajectoryStats, time_unit: TimeUnit, manifest_hash: &str, path: &Path) -> Result<()> {
    write_atomic(path, stats_csv(stats, time_unit, manifest_hash).as_bytes())
}

/// Flat key-value record of a run. Keys are dotted paths; values are TOML
/// scalars or arrays. `wall_clock_s` is informational and excluded from
/// [`RunManifest::content_hash`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunManifest {
    pub entries: BTreeMap<String, toml::Value>,
}

pub const WALL_CLOCK_KEY: &str = "run.wall_clock_s";

impl RunManifest {
    pub fn new() -> Self {
        let mut m = RunManifest::default();
        m.set("software.name", env!("CARGO_PKG_NAME"));
        m.set("software.version", env!("CARGO_PKG_VERSION"));
        m
    }

    pub fn set(&mut self, key: &str, value: impl Into<toml::Value>) {
        self.entries.insert(key.to_string(), value.into());
    }

    pub fn set_f64s(&mut self, key: &str, values: &[f64]) {
        self.set(key, toml::Value::Array(values.iter().map(|v| toml::Value::Float(*v)).collect()));
    }

    pub fn get(&self, key: &str) -> Result<&toml::Value> {
        self.entries.get(key).ok_or_else(|| Error::Config(format!("manifest lacks `{key}`")))
    }

    pub fn get_str(&self, key: &str) -> Result<&str> {
        self.get(key)?.as_str().ok_or_else(|| Error::Config(format!("manifest `{key}` is not a string")))
    }

    pub fn get_f64(&self, key: &str) -> Result<f64> {
        match self.get(key)? {
            toml::Value::Float(f) => Ok(*f),
            toml::Value::Integer(i) => Ok(*i as f64),
            _ => Err(Error::Config(format!("manifest `{key}` is not a number"))),
        }
    }

    pub fn get_u64(&self, key: &str) -> Result<u64> {
        match self.get(key)? {
            toml::Value::Integer(i) if *i >= 0 => Ok(*i as u64),
            toml::Value::String(s) => s.parse().map_err(|_| Error::Config(format!("manifest `{key}` is not an unsigned integer"))),
            _ => Err(Error::Config(format!("manifest `{key}` is not an unsigned integer"))),
        }
    }

    pub fn get_f64s(&self, key: &str) -> Result<Vec<f64>> {
        let arr = self.get(key)?.as_array().ok_or_else(|| Error::Config(format!("manifest `{key}` is not an array")))?;
        arr.iter()
            .map(|v| match v {
                toml::Value::Float(f) => Ok(*f),
                toml::Value::Integer(i) => Ok(*i as f64),
                _ => Err(Error::Config(format!("manifest `{key}` holds a non-number"))),
            })
            .collect()
    }

    /// Entries under `prefix.` with the prefix removed.
    pub fn section(&self, prefix: &str) -> BTreeMap<String, toml::Value> {
        let p = format!("{prefix}.");
        self.entries
            .iter()
            .filter_map(|(k, v)| k.strip_prefix(&p).map(|s| (s.to_string(), v.clone())))
            .collect()
    }

    fn render(&self, skip_wall_clock: bool) -> String {
        let mut out = String::new();
        for (k, v) in &self.entries {
            if skip_wall_clock && k == WALL_CLOCK_KEY {
                continue;
            }
            let _ = writeln!(out, "{} = {}", render_key(k), v);
        }
        out
    }

    pub fn to_toml(&self) -> String {
        self.render(false)
    }

    /// SHA-256 of every entry except the wall clock.
    pub fn content_hash(&self) -> String {
        sha256_hex(self.render(true).as_bytes())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let table: toml::Table = text.parse().map_err(|e| Error::Config(format!("manifest: {e}")))?;
        let mut entries = BTreeMap::new();
        flatten("", &toml::Value::Table(table), &mut entries);
        Ok(RunManifest { entries })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_toml().as_bytes())
    }
}

fn render_key(key: &str) -> String {
    key.split('.')
        .map(|seg| {
            if !seg.is_empty() && seg.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') {
                seg.to_string()
            } else {
                toml::Value::String(seg.to_string()).to_string()
            }
        })
        .collect::<Vec<_>>()
        .join(".")
}

fn flatten(prefix: &str, v: &toml::Value, out: &mut BTreeMap<String, toml::Value>) {
    match v {
        toml::Value::Table(t) => {
            for (k, v) in t {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, v, out);
            }
        }
        other => {
            out.insert(prefix.to_string(), other.clone());
        }
    }
}
