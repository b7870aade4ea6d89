//! Result tables and plain-text serialisation.
//!
//! Three small formats, all hand-rolled so an experiment's outputs stay
//! greppable and diff-stable:
//! - results.csv: one row per (scenario, n, rep, method, metric),
//! - records: `key = value` lines for population summaries and fits,
//! - configs/manifests: the same `key = value` shape with dotted keys.
//!
//! Floats are written with the shortest representation that parses back to
//! the identical bits, so a rerun can be byte-compared against the original.

use crate::error::Error;
use crate::numeric::stats::{mean, median, quantile, sd};
use crate::population::PopulationSummary;
use crate::Result;
use nalgebra::DMatrix;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

pub const RESULTS_HEADER: &str = "scenario,n,rep,method,metric,value,se_or_na,failed";
pub const SUMMARY_HEADER: &str = "scenario,n,method,metric,count,failed,mean,sd,median,q10,q90";

/// One metric observation from one replication.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub scenario: String,
    pub n: usize,
    pub rep: usize,
    pub method: String,
    pub metric: String,
    pub value: f64,
    /// Monte Carlo standard error when the metric has one.
    pub se: Option<f64>,
    /// True when the replication failed and `value` is a placeholder.
    pub failed: bool,
}

/// Shortest float form that round-trips to the same bits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

fn parse_f64(s: &str, what: &str) -> Result<f64> {
    s.parse::<f64>()
        .map_err(|_| Error::Config(format!("{what}: expected a number, got {s:?}")))
}

fn check_token(s: &str, what: &str) -> Result<()> {
    if s.is_empty() || s.contains(',') || s.contains('\n') {
        return Err(Error::Config(format!(
            "{what}: {s:?} cannot be written as a csv field"
        )));
    }
    Ok(())
}

/// Serialises rows under the fixed results header.
pub fn results_to_csv(rows: &[ResultRow]) -> Result<String> {
    let mut out = String::from(RESULTS_HEADER);
    out.push('\n');
    for r in rows {
        check_token(&r.scenario, "scenario")?;
        check_token(&r.method, "method")?;
        check_token(&r.metric, "metric")?;
        let se = match r.se {
            Some(v) => fmt_f64(v),
            None => "na".to_string(),
        };
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.scenario,
            r.n,
            r.rep,
            r.method,
            r.metric,
            fmt_f64(r.value),
            se,
            if r.failed { "true" } else { "false" }
        )
        .expect("writing to a string cannot fail");
    }
    Ok(out)
}

/// Parses a results table, insisting on the exact header and column count.
pub fn results_from_csv(text: &str) -> Result<Vec<ResultRow>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == RESULTS_HEADER => {}
        Some((_, h)) => {
            return Err(Error::Config(format!(
                "results header mismatch: got {h:?}, want {RESULTS_HEADER:?}"
            )))
        }
        None => return Err(Error::Config("empty results table".into())),
    }
    let mut rows = Vec::new();
    for (i, line) in lines {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 8 {
            return Err(Error::Config(format!(
                "results line {}: expected 8 fields, got {}",
                i + 1,
                fields.len()
            )));
        }
        let n = fields[1]
            .parse::<usize>()
            .map_err(|_| Error::Config(format!("results line {}: bad n {:?}", i + 1, fields[1])))?;
        let rep = fields[2].parse::<usize>().map_err(|_| {
            Error::Config(format!("results line {}: bad rep {:?}", i + 1, fields[2]))
        })?;
        let value = parse_f64(fields[5], &format!("results line {} value", i + 1))?;
        let se = if fields[6] == "na" {
            None
        } else {
            Some(parse_f64(fields[6], &format!("results line {} se", i + 1))?)
        };
        let failed = match fields[7] {
            "true" => true,
            "false" => false,
            other => {
                return Err(Error::Config(format!(
                    "results line {}: bad failed flag {other:?}",
                    i + 1
                )))
            }
        };
        rows.push(ResultRow {
            scenario: fields[0].to_string(),
            n,
            rep,
            method: fields[3].to_string(),
            metric: fields[4].to_string(),
            value,
            se,
            failed,
        });
    }
    Ok(rows)
}

pub fn write_results_csv(path: &Path, rows: &[ResultRow]) -> Result<()> {
    let text = results_to_csv(rows)?;
    std::fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn read_results_csv(path: &Path) -> Result<Vec<ResultRow>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    results_from_csv(&text)
}

/// Per-(scenario, n, method, metric) aggregate over replications.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub scenario: String,
    pub n: usize,
    pub method: String,
    pub metric: String,
    pub count: usize,
    pub failed: usize,
    pub mean: f64,
    pub sd: f64,
    pub median: f64,
    pub q10: f64,
    pub q90: f64,
}

/// Aggregates result rows; failed replications are counted but excluded
/// from the statistics.
pub fn summarize(rows: &[ResultRow]) -> Vec<SummaryRow> {
    let mut groups: BTreeMap<(String, usize, String, String), (Vec<f64>, usize)> = BTreeMap::new();
    for r in rows {
        let key = (
            r.scenario.clone(),
            r.n,
            r.method.clone(),
            r.metric.clone(),
        );
        let entry = groups.entry(key).or_default();
        if r.failed {
            entry.1 += 1;
        } else {
            entry.0.push(r.value);
        }
    }
    groups
        .into_iter()
        .map(|((scenario, n, method, metric), (vals, failed))| {
            let empty = vals.is_empty();
            SummaryRow {
                scenario,
                n,
                method,
                metric,
                count: vals.len(),
                failed,
                mean: if empty { f64::NAN } else { mean(&vals) },
                sd: if vals.len() < 2 { f64::NAN } else { sd(&vals) },
                median: if empty { f64::NAN } else { median(&vals) },
                q10: if empty { f64::NAN } else { quantile(&vals, 0.10) },
                q90: if empty { f64::NAN } else { quantile(&vals, 0.90) },
            }
        })
        .collect()
}

pub fn summary_to_csv(rows: &[SummaryRow]) -> String {
    let mut out = String::from(SUMMARY_HEADER);
    out.push('\n');
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.scenario,
            r.n,
            r.method,
            r.metric,
            r.count,
            r.failed,
            fmt_f64(r.mean),
            fmt_f64(r.sd),
            fmt_f64(r.median),
            fmt_f64(r.q10),
            fmt_f64(r.q90)
        )
        .expect("writing to a string cannot fail");
    }
    out
}

/// Ordered `key = value` document. Lines starting with '#' and blank lines
/// are ignored on parse; duplicate keys are rejected.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KvDoc {
    pairs: Vec<(String, String)>,
}

impl KvDoc {
    pub fn new() -> Self {
        KvDoc::default()
    }

    pub fn push(&mut self, key: &str, value: impl Into<String>) {
        self.pairs.push((key.to_string(), value.into()));
    }

    pub fn push_f64(&mut self, key: &str, value: f64) {
        self.push(key, fmt_f64(value));
    }

    pub fn push_vec(&mut self, key: &str, values: &[f64]) {
        let joined = values.iter().map(|v| fmt_f64(*v)).collect::<Vec<_>>().join(" ");
        self.push(key, joined);
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.pairs
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.pairs.iter().map(|(k, _)| k.as_str())
    }

    pub fn require(&self, key: &str) -> Result<&str> {
        self.get(key)
            .ok_or_else(|| Error::Config(format!("missing field {key:?}")))
    }

    pub fn get_f64(&self, key: &str) -> Result<Option<f64>> {
        self.get(key).map(|v| parse_f64(v, key)).transpose()
    }

    pub fn require_f64(&self, key: &str) -> Result<f64> {
        parse_f64(self.require(key)?, key)
    }

    pub fn get_usize(&self, key: &str) -> Result<Option<usize>> {
        self.get(key)
            .map(|v| {
                v.parse::<usize>()
                    .map_err(|_| Error::Config(format!("{key}: expected a count, got {v:?}")))
            })
            .transpose()
    }

    pub fn get_u64(&self, key: &str) -> Result<Option<u64>> {
        self.get(key)
            .map(|v| {
                v.parse::<u64>()
                    .map_err(|_| Error::Config(format!("{key}: expected an integer, got {v:?}")))
            })
            .transpose()
    }

    pub fn get_bool(&self, key: &str) -> Result<Option<bool>> {
        self.get(key)
            .map(|v| match v {
                "true" => Ok(true),
                "false" => Ok(false),
                other => Err(Error::Config(format!(
                    "{key}: expected true or false, got {other:?}"
                ))),
            })
            .transpose()
    }

    pub fn require_vec(&self, key: &str) -> Result<Vec<f64>> {
        self.require(key)?
            .split_whitespace()
            .map(|v| parse_f64(v, key))
            .collect()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut doc = KvDoc::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected `key = value`, got {line:?}", i + 1))
            })?;
            let key = key.trim();
            let value = value.trim();
            if key.is_empty() {
                return Err(Error::Config(format!("line {}: empty key", i + 1)));
            }
            if doc.get(key).is_some() {
                return Err(Error::Config(format!(
                    "line {}: duplicate key {key:?}",
                    i + 1
                )));
            }
            doc.push(key, value);
        }
        Ok(doc)
    }

    /// Renders the document; `comments` go first as '#' lines (the only
    /// place run-specific text like timestamps may appear).
    pub fn to_text(&self, comments: &[&str]) -> String {
        let mut out = String::new();
        for c in comments {
            writeln!(out, "# {c}").expect("writing to a string cannot fail");
        }
        for (k, v) in &self.pairs {
            writeln!(out, "{k} = {v}").expect("writing to a string cannot fail");
        }
        out
    }

    pub fn read_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        Self::parse(&text)
    }

    pub fn write_file(&self, path: &Path, comments: &[&str]) -> Result<()> {
        std::fs::write(path, self.to_text(comments)).map_err(|e| Error::io(path.display().to_string(), e))
    }
}

/// Row-major flattening of a square matrix.
pub fn matrix_to_vec(m: &DMatrix<f64>) -> Vec<f64> {
    let mut out = Vec::with_capacity(m.nrows() * m.ncols());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out.push(m[(i, j)]);
        }
    }
    out
}

fn matrix_from_vec(d: usize, flat: &[f64], what: &str) -> Result<DMatrix<f64>> {
    if flat.len() != d * d {
        return Err(Error::Config(format!(
            "{what}: expected {} entries, got {}",
            d * d,
            flat.len()
        )));
    }
    Ok(DMatrix::from_row_slice(d, d, flat))
}

/// Serialises a population summary as a record document.
pub fn population_to_doc(kind: &str, p: &PopulationSummary) -> KvDoc {
    let mut doc = KvDoc::new();
    doc.push("format", "population-summary-v1");
    doc.push("kind", kind);
    doc.push("dim", p.theta_star.len().to_string());
    doc.push("seed", p.seed.to_string());
    doc.push("mc_draws", p.mc_draws.to_string());
    doc.push_vec("theta_star", &p.theta_star);
    doc.push_vec("theta_star_se", &p.theta_star_se);
    doc.push_vec("v", &matrix_to_vec(&p.v));
    doc.push_vec("s", &matrix_to_vec(&p.s));
    doc.push_vec("sandwich", &matrix_to_vec(&p.sandwich));
    doc.push_f64("kl_at_star", p.kl_at_star);
    doc.push("multimodal", if p.multimodal { "true" } else { "false" });
    doc
}

/// Reads a population summary back; the inverse of [`population_to_doc`].
pub fn population_from_doc(doc: &KvDoc) -> Result<(String, PopulationSummary)> {
    match doc.require("format")? {
        "population-summary-v1" => {}
        other => {
            return Err(Error::Config(format!(
                "unsupported record format {other:?}"
            )))
        }
    }
    let kind = doc.require("kind")?.to_string();
    let d = doc
        .get_usize("dim")?
        .ok_or_else(|| Error::Config("missing field \"dim\"".into()))?;
    let summary = PopulationSummary {
        theta_star: doc.require_vec("theta_star")?,
        theta_star_se: doc.require_vec("theta_star_se")?,
        v: matrix_from_vec(d, &doc.require_vec("v")?, "v")?,
        s: matrix_from_vec(d, &doc.require_vec("s")?, "s")?,
        sandwich: matrix_from_vec(d, &doc.require_vec("sandwich")?, "sandwich")?,
        mc_draws: doc
            .get_usize("mc_draws")?
            .ok_or_else(|| Error::Config("missing field \"mc_draws\"".into()))?,
        seed: doc
            .get_u64("seed")?
            .ok_or_else(|| Error::Config("missing field \"seed\"".into()))?,
        kl_at_star: doc.require_f64("kl_at_star")?,
        multimodal: doc.get_bool("multimodal")?.unwrap_or(false),
    };
    if summary.theta_star.len() != d {
        return Err(Error::Config("theta_star length disagrees with dim".into()));
    }
    Ok((kind, summary))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_rows() -> Vec<ResultRow> {
        vec![
            ResultRow {
                scenario: "count-regression".into(),
                n: 100,
                rep: 0,
                method: "vb".into(),
                metric: "tv_to_limit".into(),
                value: 0.25,
                se: Some(0.01),
                failed: false,
            },
            ResultRow {
                scenario: "count-regression".into(),
                n: 100,
                rep: 1,
                method: "mcmc".into(),
                metric: "tv_to_limit".into(),
                value: f64::NAN,
                se: None,
                failed: true,
            },
            ResultRow {
                scenario: "count-regression".into(),
                n: 100,
                rep: 2,
                method: "vb".into(),
                metric: "tv_to_limit".into(),
                value: 2.0f64.ln(),
                se: Some(0.02),
                failed: false,
            },
        ]
    }

    #[test]
    fn results_round_trip_bit_exact() {
        let rows = sample_rows();
        let text = results_to_csv(&rows).unwrap();
        let back = results_from_csv(&text).unwrap();
        assert_eq!(back.len(), rows.len());
        for (a, b) in rows.iter().zip(&back) {
            assert_eq!(a.scenario, b.scenario);
            assert_eq!((a.n, a.rep, a.failed), (b.n, b.rep, b.failed));
            assert_eq!(a.value.to_bits(), b.value.to_bits());
            assert_eq!(a.se.map(f64::to_bits), b.se.map(f64::to_bits));
        }
        // Serialising again is byte-identical: the rerun comparison relies
        // on this.
        assert_eq!(text, results_to_csv(&back).unwrap());
    }

    #[test]
    fn results_parser_is_strict() {
        assert!(matches!(
            results_from_csv("wrong,header\n"),
            Err(Error::Config(_))
        ));
        let bad = format!("{RESULTS_HEADER}\na,1,0,vb,m,0.5,na\n");
        let err = results_from_csv(&bad).unwrap_err();
        match err {
            Error::Config(msg) => assert!(msg.contains("line 2"), "{msg}"),
            other => panic!("{other:?}"),
        }
        let bad_flag = format!("{RESULTS_HEADER}\na,1,0,vb,m,0.5,na,yes\n");
        assert!(results_from_csv(&bad_flag).is_err());
    }

    #[test]
    fn comma_in_name_is_refused() {
        let mut rows = sample_rows();
        rows[0].scenario = "a,b".into();
        assert!(results_to_csv(&rows).is_err());
    }

    #[test]
    fn summary_groups_and_skips_failures() {
        let s = summarize(&sample_rows());
        assert_eq!(s.len(), 2);
        let vb = s
            .iter()
            .find(|r| r.method == "vb")
            .expect("vb group present");
        assert_eq!(vb.count, 2);
        assert_eq!(vb.failed, 0);
        assert!((vb.mean - (0.25 + 2.0f64.ln()) / 2.0).abs() < 1e-15);
        let mcmc = s.iter().find(|r| r.method == "mcmc").unwrap();
        assert_eq!((mcmc.count, mcmc.failed), (0, 1));
        assert!(mcmc.mean.is_nan());
        let text = summary_to_csv(&s);
        assert!(text.starts_with(SUMMARY_HEADER));
    }

    #[test]
    fn float_format_round_trips_exactly() {
        for v in [
            2.0f64.ln(),
            0.1,
            1.0 / 3.0,
            6.02e23,
            -0.0,
            f64::MIN_POSITIVE,
        ] {
            let s = fmt_f64(v);
            assert_eq!(s.parse::<f64>().unwrap().to_bits(), v.to_bits(), "{s}");
        }
    }

    #[test]
    fn kv_doc_parses_comments_types_and_errors() {
        let text = "# a manifest comment\n\nscenario.name = count-regression\nvb.step_base = 0.05\nmcmc.chains = 4\nflag = true\n";
        let doc = KvDoc::parse(text).unwrap();
        assert_eq!(doc.get("scenario.name"), Some("count-regression"));
        assert_eq!(doc.require_f64("vb.step_base").unwrap(), 0.05);
        assert_eq!(doc.get_usize("mcmc.chains").unwrap(), Some(4));
        assert_eq!(doc.get_bool("flag").unwrap(), Some(true));
        assert!(doc.get("absent").is_none());

        match KvDoc::parse("a = 1\na = 2\n").unwrap_err() {
            Error::Config(msg) => assert!(msg.contains("duplicate"), "{msg}"),
            other => panic!("{other:?}"),
        }
        match KvDoc::parse("just words\n").unwrap_err() {
            Error::Config(msg) => assert!(msg.contains("key = value"), "{msg}"),
            other => panic!("{other:?}"),
        }
        let bad_type = KvDoc::parse("mcmc.chains = four\n").unwrap();
        match bad_type.get_usize("mcmc.chains").unwrap_err() {
            Error::Config(msg) => assert!(msg.contains("mcmc.chains"), "{msg}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn kv_doc_text_round_trip() {
        let mut doc = KvDoc::new();
        doc.push("scenario.name", "mixture");
        doc.push_f64("vb.step_base", 0.05);
        doc.push_vec("theta", &[2.0f64.ln(), -0.5]);
        let text = doc.to_text(&["generated for a test"]);
        let back = KvDoc::parse(&text).unwrap();
        assert_eq!(doc, back);
        assert_eq!(back.require_vec("theta").unwrap()[0].to_bits(), 2.0f64.ln().to_bits());
    }

    #[test]
    fn population_record_round_trip() {
        let p = PopulationSummary {
            theta_star: vec![2.0f64.ln(), -0.5],
            v: DMatrix::from_row_slice(2, 2, &[2.0, 0.1, 0.1, 1.5]),
            s: DMatrix::from_row_slice(2, 2, &[2.8, 0.2, 0.2, 1.9]),
            sandwich: DMatrix::from_row_slice(2, 2, &[0.7, 0.0, 0.0, 0.9]),
            mc_draws: 200_000,
            seed: 11,
            kl_at_star: 0.0216,
            theta_star_se: vec![0.00187, 0.0021],
            multimodal: false,
        };
        let doc = population_to_doc("count-regression", &p);
        let text = doc.to_text(&[]);
        let (kind, back) = population_from_doc(&KvDoc::parse(&text).unwrap()).unwrap();
        assert_eq!(kind, "count-regression");
        assert_eq!(back.theta_star[0].to_bits(), p.theta_star[0].to_bits());
        assert_eq!(back.v, p.v);
        assert_eq!(back.sandwich, p.sandwich);
        assert_eq!(back.seed, 11);
        assert_eq!(back.mc_draws, 200_000);
    }
}
