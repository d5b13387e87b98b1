//! Delimited-text reader and writer for evidence networks.
//!
//! One row per (study, test, group, threshold) cell:
//!
//! ```text
//! # cstar:AFP=20
//! # name:AFP=alpha-fetoprotein
//! study_id,test_id,test_kind,group,threshold,positives,group_size
//! S01,AFP,continuous,diseased,20,61,100
//! S01,AFP,continuous,nondiseased,20,9,100
//! ```
//!
//! Lines starting with `#` are comments unless they carry a `cstar:` or
//! `name:` directive. Directives may also appear without the `#` prefix
//! before the column header. Comma and tab delimiters are both accepted.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Read;

use super::{
    select_reference_threshold, Dataset, DatasetError, DiseaseGroup, TestDescriptor, TestKind, Threshold,
    ThresholdSeries,
};

const COLUMNS: [&str; 7] = ["study_id", "test_id", "test_kind", "group", "threshold", "positives", "group_size"];

#[derive(Default)]
struct Directives {
    c_star: BTreeMap<String, (u64, f64)>,
    names: BTreeMap<String, String>,
}

fn parse_directive(body: &str, line: u64, out: &mut Directives) -> Result<bool, DatasetError> {
    let body = body.trim();
    let (kind, rest) = if let Some(rest) = body.strip_prefix("cstar:") {
        ("cstar", rest)
    } else if let Some(rest) = body.strip_prefix("name:") {
        ("name", rest)
    } else {
        return Ok(false);
    };
    let (test, value) = rest.split_once('=').ok_or_else(|| DatasetError::Malformed {
        line,
        message: format!("directive `{body}` should read {kind}:<test_id>=<value>"),
    })?;
    let test = test.trim().to_string();
    if kind == "cstar" {
        let v: f64 = value.trim().parse().map_err(|_| DatasetError::Malformed {
            line,
            message: format!("reference threshold `{}` is not a number", value.trim()),
        })?;
        out.c_star.insert(test, (line, v));
    } else {
        out.names.insert(test, value.trim().to_string());
    }
    Ok(true)
}

pub fn parse_dataset<R: Read>(mut source: R) -> Result<Dataset, DatasetError> {
    let mut text = String::new();
    source.read_to_string(&mut text)?;
    parse_dataset_str(&text)
}

pub fn parse_dataset_str(text: &str) -> Result<Dataset, DatasetError> {
    let mut directives = Directives::default();
    // Directive lines are blanked into comments so csv line numbers stay aligned.
    let mut body = String::with_capacity(text.len());
    let mut seen_header = false;
    for (i, raw) in text.lines().enumerate() {
        let line = i as u64 + 1;
        let trimmed = raw.trim();
        if let Some(comment) = trimmed.strip_prefix('#') {
            parse_directive(comment, line, &mut directives)?;
            body.push_str("#\n");
        } else if !seen_header && parse_directive(trimmed, line, &mut directives)? {
            body.push_str("#\n");
        } else {
            if !trimmed.is_empty() {
                seen_header = true;
            }
            body.push_str(raw);
            body.push('\n');
        }
    }
    if !seen_header {
        return Err(DatasetError::Malformed { line: 1, message: "input contains no header row".into() });
    }

    let delimiter = body
        .lines()
        .find(|l| !l.trim().is_empty() && !l.starts_with('#'))
        .map(|h| if h.contains('\t') && !h.contains(',') { b'\t' } else { b',' })
        .unwrap_or(b',');
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(body.as_bytes());

    let headers = reader
        .headers()
        .map_err(|e| DatasetError::Malformed { line: 1, message: e.to_string() })?
        .clone();
    let mut column = [0usize; 7];
    for (slot, name) in column.iter_mut().zip(COLUMNS) {
        *slot = headers.iter().position(|h| h.eq_ignore_ascii_case(name)).ok_or_else(|| {
            DatasetError::Malformed { line: 1, message: format!("missing column `{name}`") }
        })?;
    }

    type Cell = (u64, Threshold, u64, u64);
    let mut cells: BTreeMap<(String, String, DiseaseGroup), Vec<Cell>> = BTreeMap::new();
    let mut kinds: BTreeMap<String, (TestKind, u64)> = BTreeMap::new();

    for record in reader.records() {
        let record = record.map_err(|e| DatasetError::Malformed {
            line: e.position().map(|p| p.line()).unwrap_or(0),
            message: e.to_string(),
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if record.iter().all(|f| f.is_empty()) {
            continue;
        }
        if record.len() < headers.len() {
            return Err(DatasetError::Malformed {
                line,
                message: format!("expected {} fields, found {}", headers.len(), record.len()),
            });
        }
        let field = |c: usize| record.get(column[c]).unwrap_or("");
        let malformed = |message: String| DatasetError::Malformed { line, message };

        let study = field(0).to_string();
        let test = field(1).to_string();
        if study.is_empty() || test.is_empty() {
            return Err(malformed("study_id and test_id must be non-empty".into()));
        }
        let kind = TestKind::parse(field(2))
            .ok_or_else(|| DatasetError::UnknownTestKind { line, kind: field(2).to_string() })?;
        let group = DiseaseGroup::parse(field(3))
            .ok_or_else(|| malformed(format!("unknown group `{}` (expected diseased or nondiseased)", field(3))))?;
        let threshold = match field(4) {
            "NA" | "na" | "" => Threshold::NotApplicable,
            v => Threshold::Value(v.parse().map_err(|_| malformed(format!("threshold `{v}` is not a number")))?),
        };
        let positives: u64 = field(5)
            .parse()
            .map_err(|_| malformed(format!("positives `{}` is not a non-negative integer", field(5))))?;
        let group_size: u64 = field(6)
            .parse()
            .map_err(|_| malformed(format!("group_size `{}` is not a non-negative integer", field(6))))?;
        if group_size == 0 {
            return Err(malformed("group_size must be positive".into()));
        }

        match kinds.get(&test) {
            Some((k, first)) if *k != kind => {
                return Err(malformed(format!(
                    "test `{test}` declared {} here but {} on line {first}",
                    kind.label(),
                    k.label()
                )))
            }
            Some(_) => {}
            None => {
                kinds.insert(test.clone(), (kind, line));
            }
        }
        cells.entry((study, test, group)).or_default().push((line, threshold, positives, group_size));
    }

    let mut series = Vec::with_capacity(cells.len());
    for ((study, test, group), mut rows) in cells {
        let key = super::SeriesKey::new(study.clone(), test.clone(), group);
        rows.sort_by(|a, b| match (a.1, b.1) {
            (Threshold::Value(x), Threshold::Value(y)) => x.total_cmp(&y),
            _ => a.0.cmp(&b.0),
        });
        let n = rows[0].3;
        if let Some(r) = rows.iter().find(|r| r.3 != n) {
            return Err(DatasetError::Invariant {
                series: key.to_string(),
                message: format!("group_size {} on line {} differs from {} on line {}", r.3, r.0, n, rows[0].0),
            });
        }
        series.push(ThresholdSeries {
            study_id: study,
            test_id: test,
            group,
            group_size: n,
            thresholds: rows.iter().map(|r| r.1).collect(),
            positives: rows.iter().map(|r| r.2).collect(),
        });
    }

    for (test, (line, _)) in &directives.c_star {
        match kinds.get(test) {
            None => {
                return Err(DatasetError::Malformed {
                    line: *line,
                    message: format!("cstar directive names unknown test `{test}`"),
                })
            }
            Some((TestKind::Binary, _)) => {
                return Err(DatasetError::Malformed {
                    line: *line,
                    message: format!("cstar directive given for binary test `{test}`"),
                })
            }
            _ => {}
        }
    }

    let mut tests = Vec::with_capacity(kinds.len());
    for (id, (kind, _)) in &kinds {
        let c_star = match kind {
            TestKind::Binary => None,
            TestKind::Continuous => Some(match directives.c_star.get(id) {
                Some((_, v)) => *v,
                None => {
                    let own: Vec<&ThresholdSeries> = series.iter().filter(|s| &s.test_id == id).collect();
                    select_reference_threshold(&own)?
                }
            }),
        };
        let name = directives.names.get(id).cloned().unwrap_or_else(|| id.clone());
        tests.push(TestDescriptor { id: id.clone(), name, kind: *kind, c_star });
    }

    Dataset::new(tests, series)
}

/// Canonical text form; [`parse_dataset_str`] reads it back to an equal dataset.
pub fn write_dataset(d: &Dataset) -> String {
    let mut out = String::new();
    for t in d.tests() {
        if let Some(c) = t.c_star {
            let _ = writeln!(out, "# cstar:{}={}", t.id, c);
        }
        if t.name != t.id {
            let _ = writeln!(out, "# name:{}={}", t.id, t.name);
        }
    }
    out.push_str(&COLUMNS.join(","));
    out.push('\n');
    for s in d.series() {
        let kind = d.test(&s.test_id).map(|t| t.kind.label()).unwrap_or("binary");
        for (t, x) in s.thresholds.iter().zip(&s.positives) {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                s.study_id,
                s.test_id,
                kind,
                s.group.label(),
                t,
                x,
                s.group_size
            );
        }
    }
    out
}
