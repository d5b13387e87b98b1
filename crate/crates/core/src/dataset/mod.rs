//! The evidence network: studies × tests × disease groups × threshold series.
//!
//! A [`Dataset`] is immutable once built. All structural invariants (monotone
//! counts, paired disease groups, reference thresholds for continuous tests)
//! are checked in [`Dataset::new`], so downstream code can rely on them.

mod network;
mod parse;
mod validate;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use network::{build_network_graph, NetworkGraph};
pub use parse::{parse_dataset, parse_dataset_str, write_dataset};
pub use validate::{validate_for_model, Finding, RuleId, Severity, ValidationReport};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("line {line}: {message}")]
    Malformed { line: u64, message: String },
    #[error("line {line}: unknown test kind `{kind}` (expected `binary` or `continuous`)")]
    UnknownTestKind { line: u64, kind: String },
    #[error("series {series}: {message}")]
    Invariant { series: String, message: String },
    #[error("test `{test}`: {message}")]
    Test { test: String, message: String },
    #[error("no thresholds reported for test `{0}`")]
    NoThresholds(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Disease status of the patients a series was measured on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DiseaseGroup {
    NonDiseased,
    Diseased,
}

impl DiseaseGroup {
    pub const ALL: [DiseaseGroup; 2] = [DiseaseGroup::NonDiseased, DiseaseGroup::Diseased];

    /// 0 for non-diseased (false positives), 1 for diseased (true positives).
    pub fn index(self) -> usize {
        match self {
            DiseaseGroup::NonDiseased => 0,
            DiseaseGroup::Diseased => 1,
        }
    }

    pub fn from_index(j: usize) -> DiseaseGroup {
        if j == 0 {
            DiseaseGroup::NonDiseased
        } else {
            DiseaseGroup::Diseased
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            DiseaseGroup::NonDiseased => "nondiseased",
            DiseaseGroup::Diseased => "diseased",
        }
    }

    pub fn parse(s: &str) -> Option<DiseaseGroup> {
        match s.trim().to_ascii_lowercase().as_str() {
            "diseased" | "1" => Some(DiseaseGroup::Diseased),
            "nondiseased" | "non-diseased" | "healthy" | "0" => Some(DiseaseGroup::NonDiseased),
            _ => None,
        }
    }
}

impl fmt::Display for DiseaseGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TestKind {
    Binary,
    Continuous,
}

impl TestKind {
    pub fn label(self) -> &'static str {
        match self {
            TestKind::Binary => "binary",
            TestKind::Continuous => "continuous",
        }
    }

    pub fn parse(s: &str) -> Option<TestKind> {
        match s.trim().to_ascii_lowercase().as_str() {
            "binary" => Some(TestKind::Binary),
            "continuous" => Some(TestKind::Continuous),
            _ => None,
        }
    }
}

/// A threshold on the test's measurement scale, or the marker used by binary
/// tests, which report a single 2×2 table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Threshold {
    NotApplicable,
    Value(f64),
}

impl Threshold {
    pub fn value(self) -> Option<f64> {
        match self {
            Threshold::NotApplicable => None,
            Threshold::Value(v) => Some(v),
        }
    }
}

impl fmt::Display for Threshold {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Threshold::NotApplicable => f.write_str("NA"),
            Threshold::Value(v) => write!(f, "{v}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestDescriptor {
    pub id: String,
    pub name: String,
    pub kind: TestKind,
    /// Reference threshold C*; present iff the test is continuous.
    pub c_star: Option<f64>,
}

impl TestDescriptor {
    pub fn binary(id: impl Into<String>) -> Self {
        let id = id.into();
        TestDescriptor { name: id.clone(), id, kind: TestKind::Binary, c_star: None }
    }

    pub fn continuous(id: impl Into<String>, c_star: f64) -> Self {
        let id = id.into();
        TestDescriptor { name: id.clone(), id, kind: TestKind::Continuous, c_star: Some(c_star) }
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn is_continuous(&self) -> bool {
        self.kind == TestKind::Continuous
    }
}

/// Identifies one threshold series.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SeriesKey {
    pub study: String,
    pub test: String,
    pub group: DiseaseGroup,
}

impl SeriesKey {
    pub fn new(study: impl Into<String>, test: impl Into<String>, group: DiseaseGroup) -> Self {
        SeriesKey { study: study.into(), test: test.into(), group }
    }
}

impl fmt::Display for SeriesKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "study={} test={} group={}", self.study, self.test, self.group)
    }
}

/// Positive counts of one disease group of one study, at each reported threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSeries {
    pub study_id: String,
    pub test_id: String,
    pub group: DiseaseGroup,
    pub group_size: u64,
    pub thresholds: Vec<Threshold>,
    pub positives: Vec<u64>,
}

impl ThresholdSeries {
    pub fn key(&self) -> SeriesKey {
        SeriesKey::new(self.study_id.clone(), self.test_id.clone(), self.group)
    }

    pub fn len(&self) -> usize {
        self.positives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positives.is_empty()
    }

    /// Checks the per-series invariants for a test of the given kind.
    pub fn check(&self, kind: TestKind) -> Result<(), DatasetError> {
        let fail = |message: String| DatasetError::Invariant { series: self.key().to_string(), message };
        if self.group_size == 0 {
            return Err(fail("group size must be positive".into()));
        }
        if self.thresholds.is_empty() {
            return Err(fail("series has no thresholds".into()));
        }
        if self.thresholds.len() != self.positives.len() {
            return Err(fail(format!(
                "{} thresholds but {} positive counts",
                self.thresholds.len(),
                self.positives.len()
            )));
        }
        match kind {
            TestKind::Binary => {
                if self.thresholds != [Threshold::NotApplicable] {
                    return Err(fail("binary tests report exactly one count with threshold NA".into()));
                }
            }
            TestKind::Continuous => {
                let mut prev: Option<f64> = None;
                for t in &self.thresholds {
                    let v = match t {
                        Threshold::Value(v) if v.is_finite() && *v > 0.0 => *v,
                        Threshold::Value(v) => {
                            return Err(fail(format!("threshold {v} is not a positive finite number")))
                        }
                        Threshold::NotApplicable => {
                            return Err(fail("continuous tests need numeric thresholds".into()))
                        }
                    };
                    if let Some(p) = prev {
                        if v == p {
                            return Err(fail(format!("duplicate threshold {v}")));
                        }
                        if v < p {
                            return Err(fail("thresholds are not ascending".into()));
                        }
                    }
                    prev = Some(v);
                }
            }
        }
        if self.positives[0] > self.group_size {
            return Err(fail(format!(
                "{} positives exceed group size {}",
                self.positives[0], self.group_size
            )));
        }
        for (t, w) in self.positives.windows(2).enumerate() {
            if w[1] > w[0] {
                return Err(fail(format!(
                    "positives increase from {} to {} between thresholds {} and {}",
                    w[0],
                    w[1],
                    self.thresholds[t],
                    self.thresholds[t + 1]
                )));
            }
        }
        Ok(())
    }
}

/// A validated evidence network. Tests, studies and series are kept sorted by
/// identifier so that every derived structure is independent of input order.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    tests: Vec<TestDescriptor>,
    series: Vec<ThresholdSeries>,
    studies: Vec<String>,
}

impl Dataset {
    pub fn new(
        mut tests: Vec<TestDescriptor>,
        mut series: Vec<ThresholdSeries>,
    ) -> Result<Dataset, DatasetError> {
        tests.sort_by(|a, b| a.id.cmp(&b.id));
        for w in tests.windows(2) {
            if w[0].id == w[1].id {
                return Err(DatasetError::Test { test: w[0].id.clone(), message: "declared twice".into() });
            }
        }
        for t in &tests {
            match (t.kind, t.c_star) {
                (TestKind::Binary, Some(_)) => {
                    return Err(DatasetError::Test {
                        test: t.id.clone(),
                        message: "binary tests have no reference threshold".into(),
                    })
                }
                (TestKind::Continuous, None) => {
                    return Err(DatasetError::Test {
                        test: t.id.clone(),
                        message: "continuous test is missing its reference threshold".into(),
                    })
                }
                (TestKind::Continuous, Some(c)) if !(c.is_finite() && c > 0.0) => {
                    return Err(DatasetError::Test {
                        test: t.id.clone(),
                        message: format!("reference threshold {c} must be positive"),
                    })
                }
                _ => {}
            }
        }

        series.sort_by(|a, b| a.key().cmp(&b.key()));
        for w in series.windows(2) {
            if w[0].key() == w[1].key() {
                return Err(DatasetError::Invariant {
                    series: w[0].key().to_string(),
                    message: "series appears twice".into(),
                });
            }
        }

        let kinds: BTreeMap<&str, TestKind> = tests.iter().map(|t| (t.id.as_str(), t.kind)).collect();
        let mut groups: BTreeMap<(&str, &str), [bool; 2]> = BTreeMap::new();
        for s in &series {
            let kind = *kinds.get(s.test_id.as_str()).ok_or_else(|| DatasetError::Invariant {
                series: s.key().to_string(),
                message: format!("references undeclared test `{}`", s.test_id),
            })?;
            s.check(kind)?;
            groups.entry((&s.study_id, &s.test_id)).or_default()[s.group.index()] = true;
        }
        for ((study, test), present) in &groups {
            if let Some(j) = present.iter().position(|p| !p) {
                let missing = DiseaseGroup::from_index(j);
                return Err(DatasetError::Invariant {
                    series: SeriesKey::new(*study, *test, DiseaseGroup::from_index(1 - j)).to_string(),
                    message: format!("the {missing} group of the same study and test is missing"),
                });
            }
        }

        let studies: BTreeSet<&str> = series.iter().map(|s| s.study_id.as_str()).collect();
        let studies = studies.into_iter().map(str::to_owned).collect();
        Ok(Dataset { tests, series, studies })
    }

    pub fn empty() -> Dataset {
        Dataset { tests: Vec::new(), series: Vec::new(), studies: Vec::new() }
    }

    pub fn tests(&self) -> &[TestDescriptor] {
        &self.tests
    }

    pub fn series(&self) -> &[ThresholdSeries] {
        &self.series
    }

    pub fn studies(&self) -> &[String] {
        &self.studies
    }

    pub fn is_empty(&self) -> bool {
        self.series.is_empty()
    }

    pub fn test(&self, id: &str) -> Option<&TestDescriptor> {
        self.test_index(id).map(|k| &self.tests[k])
    }

    pub fn test_index(&self, id: &str) -> Option<usize> {
        self.tests.binary_search_by(|t| t.id.as_str().cmp(id)).ok()
    }

    pub fn study_index(&self, id: &str) -> Option<usize> {
        self.studies.binary_search_by(|s| s.as_str().cmp(id)).ok()
    }

    pub fn series_for_test<'a>(&'a self, test_id: &'a str) -> impl Iterator<Item = &'a ThresholdSeries> + 'a {
        self.series.iter().filter(move |s| s.test_id == test_id)
    }

    /// Distinct studies that evaluated the test.
    pub fn studies_for_test(&self, test_id: &str) -> BTreeSet<&str> {
        self.series.iter().filter(|s| s.test_id == test_id).map(|s| s.study_id.as_str()).collect()
    }

    /// (study, test) pairs in sorted order; each has both disease groups.
    pub fn study_test_pairs(&self) -> Vec<(&str, &str)> {
        let set: BTreeSet<(&str, &str)> =
            self.series.iter().map(|s| (s.study_id.as_str(), s.test_id.as_str())).collect();
        set.into_iter().collect()
    }

    /// The network a standard single-threshold analysis would see: continuous
    /// tests keep only the count at their reference threshold and become
    /// binary; (study, test) pairs lacking it in either group are dropped.
    pub fn at_reference_thresholds(&self) -> Dataset {
        let mut kept: Vec<ThresholdSeries> = Vec::new();
        for s in &self.series {
            let test = self.test(&s.test_id).expect("validated");
            match test.c_star {
                None => kept.push(s.clone()),
                Some(c) => {
                    if let Some(t) = s.thresholds.iter().position(|&t| t == Threshold::Value(c)) {
                        kept.push(ThresholdSeries {
                            thresholds: vec![Threshold::NotApplicable],
                            positives: vec![s.positives[t]],
                            ..s.clone()
                        });
                    }
                }
            }
        }
        let mut count: BTreeMap<(String, String), usize> = BTreeMap::new();
        for s in &kept {
            *count.entry((s.study_id.clone(), s.test_id.clone())).or_default() += 1;
        }
        kept.retain(|s| count[&(s.study_id.clone(), s.test_id.clone())] == 2);
        let used: BTreeSet<&str> = kept.iter().map(|s| s.test_id.as_str()).collect();
        let tests = self
            .tests
            .iter()
            .filter(|t| used.contains(t.id.as_str()))
            .map(|t| TestDescriptor { kind: TestKind::Binary, c_star: None, ..t.clone() })
            .collect();
        Dataset::new(tests, kept).expect("restriction of a valid dataset is valid")
    }

    /// SHA-256 of the canonical text serialization.
    pub fn fingerprint(&self) -> String {
        let text = write_dataset(self);
        hex::encode(Sha256::digest(text.as_bytes()))
    }
}

/// The threshold reported by the largest number of distinct studies; ties go
/// to the smaller threshold.
pub fn select_reference_threshold(series_for_test: &[&ThresholdSeries]) -> Result<f64, DatasetError> {
    let mut reported: Vec<(f64, &str)> = series_for_test
        .iter()
        .flat_map(|s| s.thresholds.iter().filter_map(move |t| t.value().map(|v| (v, s.study_id.as_str()))))
        .collect();
    if reported.is_empty() {
        let test = series_for_test.first().map(|s| s.test_id.clone()).unwrap_or_default();
        return Err(DatasetError::NoThresholds(test));
    }
    reported.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(b.1)));
    reported.dedup();

    let mut best = (reported[0].0, 0usize);
    let mut i = 0;
    while i < reported.len() {
        let value = reported[i].0;
        let run = reported[i..].iter().take_while(|r| r.0 == value).count();
        if run > best.1 {
            best = (value, run);
        }
        i += run;
    }
    Ok(best.0)
}
