//! Per-attribute uniqueness (g-distinct), re-identification risk rate and
//! threshold-based DID/QID/SA/NSA classification.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::round_half_up_2;
use crate::table::{Role, Table, TableError};

#[derive(Debug, Error)]
pub enum IdentifyError {
    #[error(transparent)]
    Table(#[from] TableError),
    #[error("cannot compute g-distinct on an empty table")]
    EmptyTable,
    #[error("invalid thresholds: need 0 <= beta ({beta}) <= alpha ({alpha}) <= 100")]
    InvalidThresholds { alpha: f64, beta: f64 },
    #[error("override names unknown attribute '{0}'")]
    UnknownOverride(String),
}

/// Multiplicity of every distinct value of one attribute.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GDistinctHistogram {
    pub attribute: String,
    pub entries: BTreeMap<String, usize>,
}

impl GDistinctHistogram {
    pub fn row_count(&self) -> usize {
        self.entries.values().sum()
    }
}

pub fn g_distinct(table: &Table, attribute: &str) -> Result<GDistinctHistogram, IdentifyError> {
    let column = table.column(attribute)?;
    if table.row_count() == 0 {
        return Err(IdentifyError::EmptyTable);
    }
    let mut entries = BTreeMap::new();
    for cell in column {
        *entries.entry(cell.to_string()).or_insert(0) += 1;
    }
    Ok(GDistinctHistogram {
        attribute: attribute.to_string(),
        entries,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskProfile {
    pub attribute: String,
    /// Full precision; round only for display.
    pub risk_rate_percent: f64,
    pub distinct_count: usize,
    pub row_count: usize,
}

impl RiskProfile {
    /// True when every value is unique, which makes the attribute a DID candidate.
    pub fn all_unique(&self) -> bool {
        self.distinct_count == self.row_count
    }
}

/// Risk = 100 × mean over distinct values of 1/g.
pub fn risk_rate(hist: &GDistinctHistogram) -> RiskProfile {
    let distinct_count = hist.entries.len();
    let inverse_sum: f64 = hist.entries.values().map(|&g| 1.0 / g as f64).sum();
    RiskProfile {
        attribute: hist.attribute.clone(),
        risk_rate_percent: 100.0 * inverse_sum / distinct_count as f64,
        distinct_count,
        row_count: hist.row_count(),
    }
}

/// Risk profile of every attribute of `table`, in attribute order.
pub fn profile_table(table: &Table) -> Result<Vec<RiskProfile>, IdentifyError> {
    table
        .attributes()
        .iter()
        .map(|a| g_distinct(table, &a.name).map(|h| risk_rate(&h)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub alpha_percent: f64,
    pub beta_percent: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            alpha_percent: 25.0,
            beta_percent: 1.0,
        }
    }
}

impl Thresholds {
    pub fn new(alpha_percent: f64, beta_percent: f64) -> Result<Self, IdentifyError> {
        let t = Self {
            alpha_percent,
            beta_percent,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<(), IdentifyError> {
        let (a, b) = (self.alpha_percent, self.beta_percent);
        if (0.0..=100.0).contains(&b) && (0.0..=100.0).contains(&a) && b <= a {
            Ok(())
        } else {
            Err(IdentifyError::InvalidThresholds { alpha: a, beta: b })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LabelSource {
    Automatic,
    ManualOverride,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub attribute: String,
    pub label: Role,
    pub risk_rate_percent: f64,
    pub source: LabelSource,
}

/// Threshold rule: SA above alpha, QID in [beta, alpha], NSA below beta;
/// an all-unique attribute is a DID.
pub fn automatic_label(profile: &RiskProfile, thresholds: &Thresholds) -> Role {
    let r = profile.risk_rate_percent;
    if profile.all_unique() {
        Role::Did
    } else if r > thresholds.alpha_percent {
        Role::Sa
    } else if r >= thresholds.beta_percent {
        Role::Qid
    } else {
        Role::Nsa
    }
}

pub fn classify(
    profiles: &[RiskProfile],
    thresholds: &Thresholds,
    overrides: &BTreeMap<String, Role>,
) -> Result<Vec<Classification>, IdentifyError> {
    thresholds.validate()?;
    if let Some(unknown) = overrides.keys().find(|k| !profiles.iter().any(|p| &p.attribute == *k)) {
        return Err(IdentifyError::UnknownOverride(unknown.clone()));
    }
    Ok(profiles
        .iter()
        .map(|p| {
            let (label, source) = match overrides.get(&p.attribute) {
                Some(&role) => (role, LabelSource::ManualOverride),
                None => (automatic_label(p, thresholds), LabelSource::Automatic),
            };
            Classification {
                attribute: p.attribute.clone(),
                label,
                risk_rate_percent: p.risk_rate_percent,
                source,
            }
        })
        .collect())
}

/// Declared roles from the table schema, usable as classification overrides.
pub fn declared_overrides(table: &Table) -> BTreeMap<String, Role> {
    table
        .attributes()
        .iter()
        .filter_map(|a| a.declared_role.map(|r| (a.name.clone(), r)))
        .collect()
}

/// Descending risk, ties by attribute name ascending.
pub fn risk_order<T>(items: &mut [T], key: impl Fn(&T) -> (&str, f64)) {
    items.sort_by(|a, b| {
        let (na, ra) = key(a);
        let (nb, rb) = key(b);
        rb.total_cmp(&ra).then_with(|| na.cmp(nb))
    });
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentificationRow {
    pub attribute: String,
    pub risk_rate_percent: f64,
    pub distinct_count: usize,
    pub label: Role,
    pub source: LabelSource,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentificationReport {
    pub thresholds: Thresholds,
    pub row_count: usize,
    pub rows: Vec<IdentificationRow>,
}

impl IdentificationReport {
    pub fn label_of(&self, attribute: &str) -> Option<Role> {
        self.rows.iter().find(|r| r.attribute == attribute).map(|r| r.label)
    }

    /// Aligned plain-text table.
    pub fn render_text(&self) -> String {
        let header = ["Column name", "Re-identification risk (%)", "Classification"];
        let caption = format!(
            "Classification (alpha = {:.1}, beta = {:.1})",
            self.thresholds.alpha_percent, self.thresholds.beta_percent
        );
        let cells: Vec<[String; 3]> = self
            .rows
            .iter()
            .map(|r| {
                let mut label = r.label.description().to_string();
                if r.source == LabelSource::ManualOverride {
                    label.push_str(" (override)");
                }
                [r.attribute.clone(), format!("{:.2}", r.risk_rate_percent), label]
            })
            .collect();
        let mut widths = header.map(str::len);
        for row in &cells {
            for (w, c) in widths.iter_mut().zip(row) {
                *w = (*w).max(c.chars().count());
            }
        }
        let mut out = String::new();
        let _ = writeln!(out, "{caption}");
        let _ = writeln!(
            out,
            "{:<w0$}  {:>w1$}  {:<w2$}",
            header[0],
            header[1],
            header[2],
            w0 = widths[0],
            w1 = widths[1],
            w2 = widths[2]
        );
        let _ = writeln!(
            out,
            "{}  {}  {}",
            "-".repeat(widths[0]),
            "-".repeat(widths[1]),
            "-".repeat(widths[2])
        );
        for row in &cells {
            let _ = writeln!(
                out,
                "{:<w0$}  {:>w1$}  {:<w2$}",
                row[0],
                row[1],
                row[2],
                w0 = widths[0],
                w1 = widths[1],
                w2 = widths[2]
            );
        }
        out.lines().map(str::trim_end).collect::<Vec<_>>().join("\n") + "\n"
    }
}

/// Report rows sorted by risk descending with reported risks rounded to two
/// decimals. Sorting uses full precision.
pub fn identification_report(
    classifications: &[Classification],
    profiles: &[RiskProfile],
    thresholds: &Thresholds,
) -> IdentificationReport {
    let mut rows: Vec<(f64, IdentificationRow)> = classifications
        .iter()
        .map(|c| {
            let distinct_count = profiles
                .iter()
                .find(|p| p.attribute == c.attribute)
                .map_or(0, |p| p.distinct_count);
            (
                c.risk_rate_percent,
                IdentificationRow {
                    attribute: c.attribute.clone(),
                    risk_rate_percent: round_half_up_2(c.risk_rate_percent),
                    distinct_count,
                    label: c.label,
                    source: c.source,
                },
            )
        })
        .collect();
    risk_order(&mut rows, |(r, row)| (row.attribute.as_str(), *r));
    IdentificationReport {
        thresholds: *thresholds,
        row_count: profiles.first().map_or(0, |p| p.row_count),
        rows: rows.into_iter().map(|(_, r)| r).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::table::{AttributeKind, AttributeMeta};

    fn column_table(values: &[String]) -> Table {
        Table::new(
            "t",
            vec![AttributeMeta::new("a", AttributeKind::Categorical)],
            values.iter().map(|v| vec![v.clone()]).collect(),
        )
        .unwrap()
    }

    fn profile(name: &str, risk: f64) -> RiskProfile {
        RiskProfile {
            attribute: name.into(),
            risk_rate_percent: risk,
            distinct_count: 2,
            row_count: 500,
        }
    }

    #[test]
    fn ms_type_histogram() {
        let values: Vec<String> = ["CIS", "not_sure", "not_sure", "CIS", "PPMS", "PPMS", "RRMS", "RRMS"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let h = g_distinct(&column_table(&values), "a").unwrap();
        assert_eq!(h.entries.len(), 4);
        assert!(h.entries.values().all(|&g| g == 2));
        assert_eq!(h.row_count(), 8);
    }

    #[test]
    fn constant_and_unique_columns() {
        let constant = vec!["x".to_string(); 10];
        let h = g_distinct(&column_table(&constant), "a").unwrap();
        assert_eq!(h.entries.get("x"), Some(&10));
        let p = risk_rate(&h);
        assert!((p.risk_rate_percent - 10.0).abs() < 1e-12);

        let unique: Vec<String> = (0..7).map(|i| i.to_string()).collect();
        let p = risk_rate(&g_distinct(&column_table(&unique), "a").unwrap());
        assert_eq!(p.risk_rate_percent, 100.0);
        assert!(p.all_unique());
    }

    #[test]
    fn empty_table_and_unknown_attribute() {
        assert!(matches!(
            g_distinct(&column_table(&[]), "a"),
            Err(IdentifyError::EmptyTable)
        ));
        assert!(matches!(
            g_distinct(&column_table(&["x".into()]), "b"),
            Err(IdentifyError::Table(TableError::UnknownAttribute(_)))
        ));
    }

    #[test]
    fn threshold_boundaries() {
        let t = Thresholds::new(25.0, 1.0).unwrap();
        assert_eq!(automatic_label(&profile("bmi", 38.50), &t), Role::Sa);
        assert_eq!(automatic_label(&profile("edss", 22.58), &t), Role::Qid);
        assert_eq!(automatic_label(&profile("v", 0.96), &t), Role::Nsa);
        assert_eq!(automatic_label(&profile("b", 1.0), &t), Role::Qid);
        assert_eq!(automatic_label(&profile("a", 25.0), &t), Role::Qid);
        let t10 = Thresholds::new(10.0, 1.0).unwrap();
        assert_eq!(automatic_label(&profile("edss", 10.04), &t10), Role::Sa);
    }

    #[test]
    fn invalid_thresholds_rejected() {
        assert!(Thresholds::new(1.0, 25.0).is_err());
        assert!(Thresholds::new(101.0, 1.0).is_err());
        assert!(Thresholds::new(10.0, -1.0).is_err());
        assert!(Thresholds::new(f64::NAN, 1.0).is_err());
    }

    #[test]
    fn overrides_replace_labels() {
        let profiles = vec![profile("a", 50.0), profile("b", 0.1)];
        let overrides = BTreeMap::from([("b".to_string(), Role::Qid)]);
        let c = classify(&profiles, &Thresholds::default(), &overrides).unwrap();
        assert_eq!(c[0].label, Role::Sa);
        assert_eq!(c[0].source, LabelSource::Automatic);
        assert_eq!(c[1].label, Role::Qid);
        assert_eq!(c[1].source, LabelSource::ManualOverride);

        let bad = BTreeMap::from([("zzz".to_string(), Role::Qid)]);
        assert!(matches!(
            classify(&profiles, &Thresholds::default(), &bad),
            Err(IdentifyError::UnknownOverride(n)) if n == "zzz"
        ));
    }

    #[test]
    fn all_qid_when_thresholds_wide_open() {
        let profiles = vec![profile("a", 99.0), profile("b", 0.01), profile("c", 0.0)];
        let t = Thresholds::new(100.0, 0.0).unwrap();
        let c = classify(&profiles, &t, &BTreeMap::new()).unwrap();
        assert!(c.iter().all(|c| c.label == Role::Qid));
    }

    #[test]
    fn report_orders_by_risk_then_name() {
        let profiles = vec![profile("zeta", 5.0), profile("alpha", 5.0), profile("top", 40.0)];
        let t = Thresholds::default();
        let c = classify(&profiles, &t, &BTreeMap::new()).unwrap();
        let report = identification_report(&c, &profiles, &t);
        let names: Vec<&str> = report.rows.iter().map(|r| r.attribute.as_str()).collect();
        assert_eq!(names, ["top", "alpha", "zeta"]);
        let text = report.render_text();
        assert!(text.contains("Sensitive attribute"));
        assert!(text.lines().nth(4).unwrap().starts_with("alpha"));
    }

    #[test]
    fn single_attribute_report() {
        let profiles = vec![profile("only", 3.0)];
        let t = Thresholds::default();
        let c = classify(&profiles, &t, &BTreeMap::new()).unwrap();
        assert_eq!(identification_report(&c, &profiles, &t).rows.len(), 1);
    }
}
