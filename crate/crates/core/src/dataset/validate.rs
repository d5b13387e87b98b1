//! Per-variant data requirements.
//!
//! | variant        | test-specific variances | connected network | one-study tests |
//! |----------------|:-----------------------:|:-----------------:|:---------------:|
//! | Independent    | yes                     |                   |                 |
//! | MetaRegression |                         |                   | yes             |
//! | Anova          | yes                     | required          |                 |
//! | AnovaPlus      | yes                     | required          | yes             |
//!
//! Studies reporting a single test are fine under the ANOVA variants as long
//! as the test sits in the connected network.

use std::fmt;

use serde::{Deserialize, Serialize};

use super::{Dataset, NetworkGraph};
use crate::model::ModelVariant;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Info,
    Warning,
    Error,
}

impl Severity {
    fn label(self) -> &'static str {
        match self {
            Severity::Info => "info",
            Severity::Warning => "warning",
            Severity::Error => "error",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RuleId {
    EmptyNetwork,
    OneStudyTest,
    DisconnectedNetwork,
    SingleTestStudy,
    HierarchicalBorrowing,
}

impl RuleId {
    pub fn label(self) -> &'static str {
        match self {
            RuleId::EmptyNetwork => "empty-network",
            RuleId::OneStudyTest => "one-study-test",
            RuleId::DisconnectedNetwork => "disconnected-network",
            RuleId::SingleTestStudy => "single-test-study",
            RuleId::HierarchicalBorrowing => "hierarchical-borrowing",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Finding {
    pub severity: Severity,
    pub rule: RuleId,
    pub location: String,
    pub message: String,
}

impl fmt::Display for Finding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}\t{}\t{}\t{}", self.severity.label(), self.rule.label(), self.location, self.message)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub variant: ModelVariant,
    pub findings: Vec<Finding>,
}

impl ValidationReport {
    /// True when nothing of error severity was found.
    pub fn is_ok(&self) -> bool {
        self.errors().next().is_none()
    }

    pub fn errors(&self) -> impl Iterator<Item = &Finding> {
        self.findings.iter().filter(|f| f.severity == Severity::Error)
    }

    pub fn has(&self, rule: RuleId, severity: Severity) -> bool {
        self.findings.iter().any(|f| f.rule == rule && f.severity == severity)
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for finding in &self.findings {
            writeln!(f, "{finding}")?;
        }
        Ok(())
    }
}

pub fn validate_for_model(d: &Dataset, g: &NetworkGraph, variant: ModelVariant) -> ValidationReport {
    let mut findings = Vec::new();
    let mut push = |severity, rule, location: String, message: String| {
        findings.push(Finding { severity, rule, location, message })
    };

    if d.is_empty() {
        push(Severity::Error, RuleId::EmptyNetwork, "dataset".into(), "no series to analyse".into());
        return ValidationReport { variant, findings };
    }

    let one_study_allowed = matches!(variant, ModelVariant::MetaRegression | ModelVariant::AnovaPlus);
    for t in d.tests() {
        let n = d.studies_for_test(&t.id).len();
        if n >= 2 {
            continue;
        }
        if one_study_allowed {
            if variant == ModelVariant::AnovaPlus {
                push(
                    Severity::Info,
                    RuleId::HierarchicalBorrowing,
                    format!("test={}", t.id),
                    "one-study test; its interaction variance is informed by the shared hierarchical prior".into(),
                );
            }
        } else {
            push(
                Severity::Error,
                RuleId::OneStudyTest,
                format!("test={}", t.id),
                format!("evaluated in {n} study; {} needs at least 2 studies per test", variant.label()),
            );
        }
    }

    if variant.requires_connected_network() {
        if g.is_connected() {
            for study in d.studies() {
                let tests: Vec<&str> = d
                    .study_test_pairs()
                    .into_iter()
                    .filter(|(s, _)| s == study)
                    .map(|(_, t)| t)
                    .collect();
                if tests.len() == 1 {
                    push(
                        Severity::Info,
                        RuleId::SingleTestStudy,
                        format!("study={study}"),
                        format!("reports only test {}, which is part of the connected network", tests[0]),
                    );
                }
            }
        } else {
            let parts: Vec<String> = g.components.iter().map(|c| format!("{{{}}}", c.join(","))).collect();
            push(
                Severity::Error,
                RuleId::DisconnectedNetwork,
                format!("components={}", g.components.len()),
                format!("{} requires a connected network of tests; found {}", variant.label(), parts.join(" ")),
            );
        }
    }

    ValidationReport { variant, findings }
}
