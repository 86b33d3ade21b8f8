//! Suppression, masking, generalisation and aggregation, applied per attribute
//! under a declarative rule set in descending-risk order.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::identify::{risk_order, Classification};
use crate::table::{parse_number, parse_year, AttributeKind, Table, TableError, MISSING};

pub const DEFAULT_PLACEHOLDER: &str = "xxxx";

#[derive(Debug, Error)]
pub enum DeidentifyError {
    #[error(transparent)]
    Table(#[from] TableError),
    #[error("mask placeholder must be non-empty")]
    EmptyPlaceholder,
    #[error("attribute '{attribute}' has kind {found:?}, strategy needs {expected:?}")]
    KindMismatch {
        attribute: String,
        expected: AttributeKind,
        found: AttributeKind,
    },
    #[error("attribute '{attribute}' row {row}: value '{value}' is not covered by any bin")]
    Coverage {
        attribute: String,
        row: usize,
        value: String,
    },
    #[error("attribute '{attribute}' row {row}: value '{value}' cannot be parsed")]
    Unparseable {
        attribute: String,
        row: usize,
        value: String,
    },
    #[error("invalid bins for '{attribute}': {reason}")]
    InvalidBins { attribute: String, reason: String },
    #[error("invalid year generalisation for '{attribute}': {reason}")]
    InvalidYearRule { attribute: String, reason: String },
    #[error("more than one rule for attribute '{0}'")]
    DuplicateRule(String),
    #[error("rule for '{0}' was already applied in this run")]
    AlreadyTransformed(String),
}

/// One generalisation bin. Lower bound is inclusive; the upper bound is
/// inclusive unless `upper_inclusive` is false. A missing bound is unbounded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bin {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lower: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub upper: Option<f64>,
    #[serde(default = "yes", skip_serializing_if = "is_true")]
    pub upper_inclusive: bool,
    pub label: String,
}

fn yes() -> bool {
    true
}

fn is_true(b: &bool) -> bool {
    *b
}

impl Bin {
    pub fn closed(lower: f64, upper: f64, label: impl Into<String>) -> Self {
        Self {
            lower: Some(lower),
            upper: Some(upper),
            upper_inclusive: true,
            label: label.into(),
        }
    }

    pub fn half_open(lower: Option<f64>, upper: Option<f64>, label: impl Into<String>) -> Self {
        Self {
            lower,
            upper,
            upper_inclusive: false,
            label: label.into(),
        }
    }

    pub fn contains(&self, v: f64) -> bool {
        let above = self.lower.is_none_or(|l| v >= l);
        let below = match self.upper {
            None => true,
            Some(u) if self.upper_inclusive => v <= u,
            Some(u) => v < u,
        };
        above && below
    }
}

fn validate_bins(attribute: &str, bins: &[Bin]) -> Result<(), DeidentifyError> {
    let invalid = |reason: String| DeidentifyError::InvalidBins {
        attribute: attribute.to_string(),
        reason,
    };
    if bins.is_empty() {
        return Err(invalid("no bins".into()));
    }
    for (i, b) in bins.iter().enumerate() {
        if let (Some(l), Some(u)) = (b.lower, b.upper) {
            if l > u || (l == u && !b.upper_inclusive) {
                return Err(invalid(format!("bin {i} ('{}') is empty", b.label)));
            }
        }
        if i > 0 {
            let prev = &bins[i - 1];
            let ok = match (prev.upper, b.lower) {
                (Some(u), Some(l)) => u < l || (u == l && !prev.upper_inclusive),
                _ => false,
            };
            if !ok {
                return Err(invalid(format!(
                    "bins '{}' and '{}' overlap or are not ascending",
                    prev.label, b.label
                )));
            }
        }
    }
    Ok(())
}

/// Year generalisation: aligned `width`-year ranges starting from `base`,
/// with every year above `top_boundary` mapped to `top_label`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct YearBins {
    pub width: u32,
    pub base: i32,
    pub top_boundary: i32,
    pub top_label: String,
}

impl YearBins {
    pub fn label(&self, year: i32) -> String {
        if year > self.top_boundary {
            return self.top_label.clone();
        }
        let w = self.width as i32;
        let start = self.base + (year - self.base).div_euclid(w) * w;
        format!("{}-{}", start, start + w - 1)
    }

    fn validate(&self, attribute: &str) -> Result<(), DeidentifyError> {
        if self.width == 0 {
            return Err(DeidentifyError::InvalidYearRule {
                attribute: attribute.into(),
                reason: "width must be positive".into(),
            });
        }
        if self.top_label.is_empty() {
            return Err(DeidentifyError::InvalidYearRule {
                attribute: attribute.into(),
                reason: "top label must be non-empty".into(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "strategy", rename_all = "snake_case")]
pub enum Strategy {
    Suppress {
        /// Drop the whole column instead of blanking it.
        #[serde(default, skip_serializing_if = "std::ops::Not::not")]
        drop_column: bool,
    },
    Mask {
        #[serde(default = "default_placeholder")]
        placeholder: String,
    },
    GeneralizeNumeric {
        bins: Vec<Bin>,
    },
    GeneralizeYear(YearBins),
    AggregateMap {
        mapping: BTreeMap<String, String>,
        default_group: String,
    },
}

fn default_placeholder() -> String {
    DEFAULT_PLACEHOLDER.to_string()
}

impl Strategy {
    pub fn name(&self) -> &'static str {
        match self {
            Strategy::Suppress { .. } => "suppress",
            Strategy::Mask { .. } => "mask",
            Strategy::GeneralizeNumeric { .. } => "generalize_numeric",
            Strategy::GeneralizeYear(_) => "generalize_year",
            Strategy::AggregateMap { .. } => "aggregate_map",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rule {
    pub attribute: String,
    #[serde(flatten)]
    pub strategy: Strategy,
}

impl Rule {
    /// Rank order of the labels this rule can produce, for rules whose
    /// output is naturally ordered.
    pub fn label_order(&self) -> Option<Vec<String>> {
        match &self.strategy {
            Strategy::GeneralizeNumeric { bins } => Some(bins.iter().map(|b| b.label.clone()).collect()),
            _ => None,
        }
    }
}

/// Ordered rules keyed by attribute; at most one rule per attribute.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RuleSet {
    pub rules: Vec<Rule>,
}

impl RuleSet {
    pub fn new(rules: Vec<Rule>) -> Result<Self, DeidentifyError> {
        let set = Self { rules };
        set.validate()?;
        Ok(set)
    }

    pub fn validate(&self) -> Result<(), DeidentifyError> {
        let mut seen = HashSet::new();
        for rule in &self.rules {
            if !seen.insert(rule.attribute.as_str()) {
                return Err(DeidentifyError::DuplicateRule(rule.attribute.clone()));
            }
            match &rule.strategy {
                Strategy::Mask { placeholder } if placeholder.is_empty() => {
                    return Err(DeidentifyError::EmptyPlaceholder)
                }
                Strategy::GeneralizeNumeric { bins } => validate_bins(&rule.attribute, bins)?,
                Strategy::GeneralizeYear(y) => y.validate(&rule.attribute)?,
                _ => {}
            }
        }
        Ok(())
    }

    pub fn rule_for(&self, attribute: &str) -> Option<&Rule> {
        self.rules.iter().find(|r| r.attribute == attribute)
    }

    /// Ruled attributes by descending risk (ties by name); attributes without
    /// a classification come last, by name.
    pub fn application_order(&self, classifications: &[Classification]) -> Vec<String> {
        let mut ranked: Vec<(String, f64)> = self
            .rules
            .iter()
            .map(|r| {
                let risk = classifications
                    .iter()
                    .find(|c| c.attribute == r.attribute)
                    .map_or(f64::NEG_INFINITY, |c| c.risk_rate_percent);
                (r.attribute.clone(), risk)
            })
            .collect();
        risk_order(&mut ranked, |(n, r)| (n.as_str(), *r));
        ranked.into_iter().map(|(n, _)| n).collect()
    }
}

/// Blanks every cell of the attribute, or drops the column.
pub fn suppress(table: &Table, attribute: &str, drop_column: bool) -> Result<Table, DeidentifyError> {
    if drop_column {
        return Ok(table.without_attribute(attribute)?);
    }
    table.map_column(attribute, |_, _| Ok::<_, DeidentifyError>(String::new()))
}

pub fn mask(table: &Table, attribute: &str, placeholder: &str) -> Result<Table, DeidentifyError> {
    if placeholder.is_empty() {
        return Err(DeidentifyError::EmptyPlaceholder);
    }
    table.map_column(attribute, |_, cell| {
        Ok::<_, DeidentifyError>(if cell == MISSING {
            MISSING.to_string()
        } else {
            placeholder.to_string()
        })
    })
}

fn require_kind(table: &Table, attribute: &str, expected: AttributeKind) -> Result<(), DeidentifyError> {
    let found = table.meta(attribute)?.kind;
    if found != expected {
        return Err(DeidentifyError::KindMismatch {
            attribute: attribute.to_string(),
            expected,
            found,
        });
    }
    Ok(())
}

pub fn generalize_numeric(table: &Table, attribute: &str, bins: &[Bin]) -> Result<Table, DeidentifyError> {
    require_kind(table, attribute, AttributeKind::Numeric)?;
    validate_bins(attribute, bins)?;
    table.map_column(attribute, |row, cell| {
        if cell == MISSING {
            return Ok(MISSING.to_string());
        }
        let value = parse_number(cell).ok_or_else(|| DeidentifyError::Unparseable {
            attribute: attribute.to_string(),
            row,
            value: cell.to_string(),
        })?;
        bins.iter()
            .find(|b| b.contains(value))
            .map(|b| b.label.clone())
            .ok_or_else(|| DeidentifyError::Coverage {
                attribute: attribute.to_string(),
                row,
                value: cell.to_string(),
            })
    })
}

pub fn generalize_year(table: &Table, attribute: &str, bins: &YearBins) -> Result<Table, DeidentifyError> {
    require_kind(table, attribute, AttributeKind::Year)?;
    bins.validate(attribute)?;
    table.map_column(attribute, |row, cell| {
        if cell == MISSING {
            return Ok(MISSING.to_string());
        }
        let year = parse_year(cell).ok_or_else(|| DeidentifyError::Unparseable {
            attribute: attribute.to_string(),
            row,
            value: cell.to_string(),
        })?;
        Ok(bins.label(year))
    })
}

pub fn aggregate(
    table: &Table,
    attribute: &str,
    mapping: &BTreeMap<String, String>,
    default_group: &str,
) -> Result<Table, DeidentifyError> {
    table.map_column(attribute, |_, cell| {
        Ok::<_, DeidentifyError>(if cell == MISSING {
            MISSING.to_string()
        } else {
            mapping.get(cell).cloned().unwrap_or_else(|| default_group.to_string())
        })
    })
}

pub fn apply_rule(table: &Table, rule: &Rule) -> Result<Table, DeidentifyError> {
    let a = rule.attribute.as_str();
    match &rule.strategy {
        Strategy::Suppress { drop_column } => suppress(table, a, *drop_column),
        Strategy::Mask { placeholder } => mask(table, a, placeholder),
        Strategy::GeneralizeNumeric { bins } => generalize_numeric(table, a, bins),
        Strategy::GeneralizeYear(y) => generalize_year(table, a, y),
        Strategy::AggregateMap { mapping, default_group } => aggregate(table, a, mapping, default_group),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub step: usize,
    pub attribute: String,
    pub strategy: String,
    pub parameters: serde_json::Value,
    pub cells_changed: usize,
}

impl AuditEntry {
    pub fn for_rule(step: usize, rule: &Rule, before: &Table, after: &Table) -> Self {
        let mut parameters = serde_json::to_value(&rule.strategy).expect("strategy serialises");
        if let Some(obj) = parameters.as_object_mut() {
            obj.remove("strategy");
        }
        Self {
            step,
            attribute: rule.attribute.clone(),
            strategy: rule.strategy.name().to_string(),
            parameters,
            cells_changed: cells_changed(before, after, &rule.attribute),
        }
    }
}

fn cells_changed(before: &Table, after: &Table, attribute: &str) -> usize {
    let Ok(old) = before.column(attribute) else {
        return 0;
    };
    match after.column(attribute) {
        Ok(new) => old.zip(new).filter(|(a, b)| a != b).count(),
        // dropped column: every cell is gone
        Err(_) => before.row_count(),
    }
}

/// A rule failed; `log` holds the steps that completed before it.
#[derive(Debug, Error)]
#[error("rule {step} ('{attribute}') failed: {source}")]
pub struct ApplyFailure {
    pub step: usize,
    pub attribute: String,
    pub log: Vec<AuditEntry>,
    #[source]
    pub source: DeidentifyError,
}

/// Applies every rule once, in descending-risk order of its attribute.
pub fn apply_ruleset(
    table: &Table,
    ruleset: &RuleSet,
    classifications: &[Classification],
) -> Result<(Table, Vec<AuditEntry>), ApplyFailure> {
    let order = ruleset.application_order(classifications);
    let rules: Vec<&Rule> = order
        .iter()
        .map(|a| ruleset.rule_for(a).expect("order built from rules"))
        .collect();
    apply_in_order(table, &rules, 1)
}

/// Applies `rules` in the given order; steps are numbered from `first_step`.
/// An attribute may be transformed at most once.
pub fn apply_in_order(
    table: &Table,
    rules: &[&Rule],
    first_step: usize,
) -> Result<(Table, Vec<AuditEntry>), ApplyFailure> {
    let mut current = table.clone();
    let mut log: Vec<AuditEntry> = Vec::new();
    for (i, rule) in rules.iter().enumerate() {
        let step = first_step + i;
        let fail = |log: Vec<AuditEntry>, source| ApplyFailure {
            step,
            attribute: rule.attribute.clone(),
            log,
            source,
        };
        if log.iter().any(|e| e.attribute == rule.attribute) {
            let source = DeidentifyError::AlreadyTransformed(rule.attribute.clone());
            return Err(fail(log, source));
        }
        match apply_rule(&current, rule) {
            Ok(next) => {
                log.push(AuditEntry::for_rule(step, rule, &current, &next));
                current = next;
            }
            Err(source) => return Err(fail(log, source)),
        }
    }
    Ok((current, log))
}
