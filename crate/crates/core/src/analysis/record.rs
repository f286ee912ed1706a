//! Run records: `#`-prefixed `key=value` metadata followed by a CSV table
//! with a `t` column and `<obs>_mean`/`<obs>_stderr` column pairs.

use std::collections::BTreeMap;
use std::path::Path;

use crate::engine::EnsembleResult;
use crate::error::{Error, Result};
use crate::oracle::LindbladSeries;

pub const FORMAT_VERSION: &str = "1";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Source {
    Engine,
    Oracle,
    JumpMc,
    Synthetic,
}

impl Source {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Engine => "engine",
            Self::Oracle => "oracle",
            Self::JumpMc => "jump_mc",
            Self::Synthetic => "synthetic",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "engine" => Ok(Self::Engine),
            "oracle" => Ok(Self::Oracle),
            "jump_mc" => Ok(Self::JumpMc),
            "synthetic" => Ok(Self::Synthetic),
            other => Err(Error::Parse(format!("unknown source `{other}`"))),
        }
    }
}

/// A time series table with its run metadata.
#[derive(Clone, Debug, PartialEq)]
pub struct RunRecord {
    /// Metadata in insertion order; always starts with `format` and `source`.
    pub meta: Vec<(String, String)>,
    pub t: Vec<f64>,
    /// Data columns other than `t`, in file order.
    pub columns: Vec<(String, Vec<f64>)>,
}

impl RunRecord {
    pub fn new(source: Source, t: Vec<f64>) -> Self {
        Self {
            meta: vec![
                ("format".into(), FORMAT_VERSION.into()),
                ("source".into(), source.as_str().into()),
                ("version".into(), env!("CARGO_PKG_VERSION").into()),
            ],
            t,
            columns: Vec::new(),
        }
    }

    /// Record of an ensemble run. With outer repeats, `<obs>_stderr` is the
    /// spread of the repeat means and the trajectory error goes to
    /// `<obs>_trajerr`; the repeat means follow as `<obs>_rep<k>`.
    pub fn from_ensemble(source: Source, res: &EnsembleResult) -> Self {
        let mut rec = Self::new(source, res.times.clone());
        let repeat_se = res.repeat_stderr();
        for (o, name) in res.names.iter().enumerate() {
            rec.push_column(&format!("{name}_mean"), res.mean[o].clone());
            match &repeat_se {
                Some(se) => {
                    rec.push_column(&format!("{name}_stderr"), se[o].clone());
                    rec.push_column(&format!("{name}_trajerr"), res.stderr[o].clone());
                    for (r, means) in res.repeat_means.iter().enumerate() {
                        rec.push_column(&format!("{name}_rep{r}"), means[o].clone());
                    }
                }
                None => rec.push_column(&format!("{name}_stderr"), res.stderr[o].clone()),
            }
        }
        if !res.x.is_empty() {
            // x of the step that ends at each time; the first row has none
            let mut x = vec![f64::NAN];
            x.extend(&res.x);
            rec.push_column("x_mean", x);
            rec.push_column("x_stderr", vec![0.0; res.times.len()]);
        }
        rec.set_meta("n_traj", res.n_traj);
        rec
    }

    pub fn from_oracle(series: &LindbladSeries) -> Self {
        let mut rec = Self::new(Source::Oracle, series.times.clone());
        for (o, name) in series.names.iter().enumerate() {
            rec.push_column(&format!("{name}_mean"), series.values[o].clone());
            rec.push_column(&format!("{name}_stderr"), vec![0.0; series.times.len()]);
        }
        if let Some(e) = series.halving_error {
            rec.set_meta("halving_error", e);
        }
        rec
    }

    pub fn push_column(&mut self, name: &str, values: Vec<f64>) {
        self.columns.push((name.to_string(), values));
    }

    pub fn set_meta(&mut self, key: &str, value: impl ToString) {
        let value = value.to_string();
        match self.meta.iter_mut().find(|(k, _)| k == key) {
            Some(slot) => slot.1 = value,
            None => self.meta.push((key.to_string(), value)),
        }
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn source(&self) -> Result<Source> {
        Source::parse(self.meta("source").ok_or_else(|| Error::Parse("record has no source".into()))?)
    }

    pub fn column(&self, name: &str) -> Result<&[f64]> {
        if name == "t" {
            return Ok(&self.t);
        }
        self.columns
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| v.as_slice())
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    }

    pub fn mean(&self, obs: &str) -> Result<&[f64]> {
        self.column(&format!("{obs}_mean"))
    }

    pub fn stderr(&self, obs: &str) -> Result<&[f64]> {
        self.column(&format!("{obs}_stderr"))
    }

    /// Observable names, from the `_mean` columns.
    pub fn observables(&self) -> Vec<&str> {
        self.columns.iter().filter_map(|(n, _)| n.strip_suffix("_mean")).collect()
    }

    /// Equal column lengths, strictly increasing `t` and a `_stderr` for
    /// every `_mean`.
    pub fn validate(&self) -> Result<()> {
        for (name, col) in &self.columns {
            if col.len() != self.t.len() {
                return Err(Error::Parse(format!("column `{name}` has {} rows, `t` has {}", col.len(), self.t.len())));
            }
        }
        if self.t.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Parse("times are not strictly increasing".into()));
        }
        for obs in self.observables() {
            self.stderr(obs)?;
        }
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        self.validate()?;
        let mut out = String::new();
        for (k, v) in &self.meta {
            if k.contains(['=', '\n']) || v.contains('\n') {
                return Err(Error::InvalidConfig(format!("metadata `{k}` cannot be written")));
            }
            out.push_str(&format!("# {k}={v}\n"));
        }
        let mut w = csv::Writer::from_writer(Vec::new());
        let header: Vec<&str> = std::iter::once("t").chain(self.columns.iter().map(|(n, _)| n.as_str())).collect();
        w.write_record(&header).map_err(csv_err)?;
        for (row, t) in self.t.iter().enumerate() {
            let mut fields = vec![format_value(*t)];
            fields.extend(self.columns.iter().map(|(_, c)| format_value(c[row])));
            w.write_record(&fields).map_err(csv_err)?;
        }
        let body = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        out.push_str(std::str::from_utf8(&body).expect("csv output is utf-8"));
        Ok(out)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut meta = Vec::new();
        let mut body_start = 0;
        for line in text.split_inclusive('\n') {
            let trimmed = line.trim();
            if let Some(rest) = trimmed.strip_prefix('#') {
                let (k, v) = rest
                    .trim()
                    .split_once('=')
                    .ok_or_else(|| Error::Parse(format!("metadata line `{trimmed}` is not key=value")))?;
                meta.push((k.trim().to_string(), v.to_string()));
                body_start += line.len();
            } else if trimmed.is_empty() {
                body_start += line.len();
            } else {
                break;
            }
        }
        match meta.iter().find(|(k, _)| k == "format") {
            Some((_, v)) if v == FORMAT_VERSION => {}
            Some((_, v)) => return Err(Error::Parse(format!("unsupported record format `{v}`"))),
            None => return Err(Error::Parse("record has no format metadata".into())),
        }
        let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(&text.as_bytes()[body_start..]);
        let header: Vec<String> = reader.headers().map_err(csv_err)?.iter().map(|s| s.trim().to_string()).collect();
        let t_idx = header.iter().position(|h| h == "t").ok_or_else(|| Error::MissingColumn("t".into()))?;
        let mut cols: Vec<Vec<f64>> = vec![Vec::new(); header.len()];
        for (row, rec) in reader.records().enumerate() {
            let rec = rec.map_err(csv_err)?;
            if rec.len() != header.len() {
                return Err(Error::Parse(format!("row {} has {} fields, expected {}", row + 1, rec.len(), header.len())));
            }
            for (i, field) in rec.iter().enumerate() {
                let v: f64 = field
                    .trim()
                    .parse()
                    .map_err(|_| Error::Parse(format!("row {}, column `{}`: bad number `{field}`", row + 1, header[i])))?;
                cols[i].push(v);
            }
        }
        let t = std::mem::take(&mut cols[t_idx]);
        let columns = header.into_iter().zip(cols).enumerate().filter(|(i, _)| *i != t_idx).map(|(_, c)| c).collect();
        let rec = Self { meta, t, columns };
        rec.validate()?;
        Ok(rec)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv_string()?)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Parse(e.to_string())
}

/// Seventeen significant digits, enough to parse back the same `f64`.
fn format_value(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        v.to_string()
    }
}

/// Joins records on `t`; columns are prefixed with each record's label.
/// Rows are the times present in every record (compared exactly after
/// rounding to 1e-9).
pub fn merge_by_time(records: &[(&str, &RunRecord)]) -> Result<RunRecord> {
    let key = |t: f64| (t * 1e9).round() as i64;
    let Some((_, first)) = records.first() else {
        return Err(Error::InvalidConfig("nothing to merge".into()));
    };
    let mut common: Vec<i64> = first.t.iter().map(|&t| key(t)).collect();
    for (_, r) in &records[1..] {
        let keys: std::collections::BTreeSet<i64> = r.t.iter().map(|&t| key(t)).collect();
        common.retain(|k| keys.contains(k));
    }
    let first_index: BTreeMap<i64, usize> = first.t.iter().enumerate().map(|(i, &t)| (key(t), i)).collect();
    let t: Vec<f64> = common.iter().map(|k| first.t[first_index[k]]).collect();
    let mut out = RunRecord::new(Source::Synthetic, t);
    out.set_meta("merged", records.iter().map(|(l, _)| *l).collect::<Vec<_>>().join(";"));
    for (label, r) in records {
        let index: BTreeMap<i64, usize> = r.t.iter().enumerate().map(|(i, &t)| (key(t), i)).collect();
        for (name, col) in &r.columns {
            let vals = common.iter().map(|k| col[index[k]]).collect();
            out.push_column(&format!("{label}.{name}"), vals);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> RunRecord {
        let mut r = RunRecord::new(Source::Engine, vec![0.0, 0.05, 0.1]);
        r.set_meta("seed", 42);
        r.set_meta("model", "qcp");
        r.push_column("n_mean", vec![1.0, 0.1 + 0.2, std::f64::consts::PI]);
        r.push_column("n_stderr", vec![0.0, 1e-300, 2.5e-3]);
        r
    }

    #[test]
    fn round_trip_is_exact() {
        let r = sample();
        let text = r.to_csv_string().unwrap();
        assert!(text.starts_with("# format=1\n# source=engine\n"));
        assert!(text.contains("t,n_mean,n_stderr\n"));
        let back = RunRecord::parse(&text).unwrap();
        assert_eq!(back, r);
        assert_eq!(back.source().unwrap(), Source::Engine);
    }

    #[test]
    fn missing_columns_are_named() {
        let text = "# format=1\n# source=oracle\nt,n_mean\n0,1\n";
        match RunRecord::parse(text) {
            Err(Error::MissingColumn(c)) => assert_eq!(c, "n_stderr"),
            other => panic!("{other:?}"),
        }
        match RunRecord::parse("# format=1\nn_mean,n_stderr\n1,0\n") {
            Err(Error::MissingColumn(c)) => assert_eq!(c, "t"),
            other => panic!("{other:?}"),
        }
        assert!(RunRecord::parse("t,n_mean,n_stderr\n0,1,0\n").is_err());
    }

    #[test]
    fn times_must_increase() {
        let mut r = sample();
        r.t = vec![0.0, 0.0, 0.1];
        assert!(r.to_csv_string().is_err());
    }

    #[test]
    fn merge_aligns_on_time() {
        let a = sample();
        let mut b = RunRecord::new(Source::Oracle, vec![0.0, 0.025, 0.05, 0.075, 0.1]);
        b.push_column("n_mean", vec![1.0, 0.9, 0.8, 0.7, 0.6]);
        b.push_column("n_stderr", vec![0.0; 5]);
        let m = merge_by_time(&[("engine", &a), ("oracle", &b)]).unwrap();
        assert_eq!(m.t.len(), 3);
        assert_eq!(m.column("oracle.n_mean").unwrap(), &[1.0, 0.8, 0.6]);
        assert_eq!(m.column("engine.n_mean").unwrap()[2], std::f64::consts::PI);
    }
}
