//! QID-dimension search: de-identify the d riskiest QIDs for every d, score
//! each candidate, and pick the optimum under feasibility constraints.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::deidentify::{apply_in_order, ApplyFailure, AuditEntry, Rule, RuleSet, Strategy};
use crate::identify::{risk_order, Classification};
use crate::metrics::{self, EquivalenceClass, Evaluation, GroundDistance, MetricsError, MetricsReport};
use crate::table::{parse_number, parse_year, AttributeKind, Role, Table, TableError};

#[derive(Debug, Error)]
pub enum DimensionError {
    #[error("no attribute is classified as QID")]
    NoQids,
    #[error("no de-identification rule for {role} '{attribute}'")]
    MissingRule { attribute: String, role: Role },
    #[error("rule for {role} '{attribute}' drops the column; only DIDs may be dropped")]
    DropsColumn { attribute: String, role: Role },
    #[error("no candidates to select from")]
    NoCandidates,
    #[error("invalid constraints: {0}")]
    InvalidConstraints(String),
    #[error("dimension {0} is out of range")]
    OutOfRange(usize),
    #[error(transparent)]
    Apply(#[from] ApplyFailure),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Table(#[from] TableError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityConstraints {
    pub k_min: usize,
    pub l_min: usize,
    pub t_max: f64,
}

impl Default for FeasibilityConstraints {
    fn default() -> Self {
        Self {
            k_min: 2,
            l_min: 2,
            t_max: 0.8,
        }
    }
}

impl FeasibilityConstraints {
    pub fn validate(&self) -> Result<(), DimensionError> {
        if self.k_min < 1 || self.l_min < 1 || !(0.0..=1.0).contains(&self.t_max) {
            return Err(DimensionError::InvalidConstraints(format!(
                "need k_min >= 1, l_min >= 1, 0 <= t_max <= 1 (got {}, {}, {})",
                self.k_min, self.l_min, self.t_max
            )));
        }
        Ok(())
    }

    /// A report with no SAs trivially satisfies the ℓ bound.
    pub fn admits(&self, report: &MetricsReport) -> bool {
        report.k >= self.k_min && report.l_min().is_none_or(|l| l >= self.l_min) && report.t <= self.t_max
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionPolicy {
    #[default]
    MaxNue,
    SmallestD,
}

impl std::str::FromStr for SelectionPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().replace('-', "_").as_str() {
            "max_nue" => Ok(Self::MaxNue),
            "smallest_d" => Ok(Self::SmallestD),
            other => Err(format!("unknown policy '{other}' (expected max-nue or smallest-d)")),
        }
    }
}

impl std::fmt::Display for SelectionPolicy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::MaxNue => "max-nue",
            Self::SmallestD => "smallest-d",
        })
    }
}

/// Which QIDs define equivalence classes for a candidate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QidScope {
    /// Every QID, transformed or still raw.
    #[default]
    AllQids,
    /// Only the d de-identified QIDs; d = 0 puts all rows in one class.
    DeidentifiedPrefix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimensionCandidate {
    pub d: usize,
    pub deidentified_qids: Vec<String>,
    pub report: MetricsReport,
    pub feasible: bool,
}

impl DimensionCandidate {
    pub fn new(
        d: usize,
        deidentified_qids: Vec<String>,
        report: MetricsReport,
        constraints: &FeasibilityConstraints,
    ) -> Self {
        let feasible = constraints.admits(&report);
        Self {
            d,
            deidentified_qids,
            report,
            feasible,
        }
    }
}

/// The fixed parts of a dimension search: DIDs dropped, SAs de-identified,
/// QIDs ranked by risk.
#[derive(Debug, Clone)]
pub struct DimensionPlan {
    /// Input with DIDs removed; the NUE reference.
    pub base: Table,
    sa_table: Table,
    sa_log: Vec<AuditEntry>,
    pub qids: Vec<String>,
    qid_rules: Vec<Rule>,
    pub sas: Vec<(String, GroundDistance)>,
    pub dids: Vec<String>,
}

fn by_risk(classifications: &[Classification], role: Role) -> Vec<String> {
    let mut picked: Vec<&Classification> = classifications.iter().filter(|c| c.label == role).collect();
    risk_order(&mut picked, |c| (c.attribute.as_str(), c.risk_rate_percent));
    picked.into_iter().map(|c| c.attribute.clone()).collect()
}

fn rule_for(ruleset: &RuleSet, attribute: &str, role: Role) -> Result<Rule, DimensionError> {
    let rule = ruleset.rule_for(attribute).ok_or_else(|| DimensionError::MissingRule {
        attribute: attribute.to_string(),
        role,
    })?;
    if matches!(rule.strategy, Strategy::Suppress { drop_column: true }) {
        return Err(DimensionError::DropsColumn {
            attribute: attribute.to_string(),
            role,
        });
    }
    Ok(rule.clone())
}

impl DimensionPlan {
    pub fn new(table: &Table, classifications: &[Classification], ruleset: &RuleSet) -> Result<Self, DimensionError> {
        let dids = by_risk(classifications, Role::Did);
        let qids = by_risk(classifications, Role::Qid);
        let sa_names = by_risk(classifications, Role::Sa);
        if qids.is_empty() {
            return Err(DimensionError::NoQids);
        }
        let qid_rules = qids
            .iter()
            .map(|q| rule_for(ruleset, q, Role::Qid))
            .collect::<Result<Vec<_>, _>>()?;
        let sa_rules = sa_names
            .iter()
            .map(|s| rule_for(ruleset, s, Role::Sa))
            .collect::<Result<Vec<_>, _>>()?;

        let mut base = table.clone();
        for did in &dids {
            base = base.without_attribute(did)?;
        }
        let refs: Vec<&Rule> = sa_rules.iter().collect();
        let (sa_table, sa_log) = apply_in_order(&base, &refs, 1)?;

        let sas = sa_names
            .iter()
            .zip(&sa_rules)
            .map(|(name, rule)| {
                let ground = ground_distance(&sa_table, name, Some(rule))?;
                Ok((name.clone(), ground))
            })
            .collect::<Result<Vec<_>, TableError>>()?;

        Ok(Self {
            base,
            sa_table,
            sa_log,
            qids,
            qid_rules,
            sas,
            dids,
        })
    }

    /// Working table and audit trail for dimension `d`.
    pub fn candidate_table(&self, d: usize) -> Result<(Table, Vec<AuditEntry>), DimensionError> {
        if d > self.qids.len() {
            return Err(DimensionError::OutOfRange(d));
        }
        let rules: Vec<&Rule> = self.qid_rules[..d].iter().collect();
        let (table, qid_log) = apply_in_order(&self.sa_table, &rules, self.sa_log.len() + 1)?;
        let mut log = self.sa_log.clone();
        log.extend(qid_log);
        Ok((table, log))
    }

    fn utility_attributes(&self) -> Vec<String> {
        self.qids
            .iter()
            .cloned()
            .chain(self.sas.iter().map(|(s, _)| s.clone()))
            .collect()
    }

    fn report(&self, d: usize, scope: QidScope) -> Result<MetricsReport, DimensionError> {
        let (table, _) = self.candidate_table(d)?;
        let utility = self.utility_attributes();
        let qids: &[String] = match scope {
            QidScope::AllQids => &self.qids,
            QidScope::DeidentifiedPrefix => &self.qids[..d],
        };
        let eval = Evaluation {
            original: &self.base,
            transformed: &table,
            qids,
            sas: &self.sas,
            utility_attributes: &utility,
            k_before: None,
        };
        if table.row_count() == 0 {
            return Err(MetricsError::EmptyTable.into());
        }
        let classes = if qids.is_empty() {
            vec![EquivalenceClass {
                signature: Vec::new(),
                members: (0..table.row_count()).collect(),
            }]
        } else {
            metrics::partition(&table, qids)?
        };
        Ok(metrics::evaluate_classes(&eval, &classes)?)
    }
}

/// Ground distance for a sensitive attribute: declared order first, then the
/// order implied by its rule, then numeric order for raw numeric/year values;
/// equal distance otherwise.
pub fn ground_distance(table: &Table, attribute: &str, rule: Option<&Rule>) -> Result<GroundDistance, TableError> {
    let meta = table.meta(attribute)?;
    if let Some(order) = &meta.value_order {
        return Ok(GroundDistance::Ordered(order.clone()));
    }
    let mut observed: Vec<String> = table.column(attribute)?.map(str::to_string).collect();
    observed.sort();
    observed.dedup();
    match rule.map(|r| (&r.strategy, r.label_order())) {
        Some((_, Some(order))) => Ok(GroundDistance::Ordered(order)),
        Some((Strategy::GeneralizeYear(bins), None)) => {
            // range labels by start year, top label last
            let mut ranked: Vec<(i64, String)> = observed
                .into_iter()
                .filter_map(|label| {
                    if label == bins.top_label {
                        Some((i64::MAX, label))
                    } else {
                        let start = label.split('-').next().and_then(parse_year)?;
                        Some((start as i64, label))
                    }
                })
                .collect();
            ranked.sort();
            Ok(GroundDistance::Ordered(ranked.into_iter().map(|(_, l)| l).collect()))
        }
        Some(_) => Ok(GroundDistance::Equal),
        None => match meta.kind {
            AttributeKind::Numeric | AttributeKind::Year => {
                let mut numeric: Vec<(f64, String)> = observed
                    .into_iter()
                    .filter_map(|v| parse_number(&v).map(|x| (x, v)))
                    .collect();
                numeric.sort_by(|a, b| a.0.total_cmp(&b.0));
                Ok(GroundDistance::Ordered(numeric.into_iter().map(|(_, v)| v).collect()))
            }
            _ => Ok(GroundDistance::Equal),
        },
    }
}

/// Evaluates every dimension d = 0..=#QIDs.
pub fn enumerate_dimensions(
    table: &Table,
    classifications: &[Classification],
    ruleset: &RuleSet,
    constraints: &FeasibilityConstraints,
    scope: QidScope,
) -> Result<(DimensionPlan, Vec<DimensionCandidate>), DimensionError> {
    constraints.validate()?;
    let plan = DimensionPlan::new(table, classifications, ruleset)?;
    let candidates = candidates_for(&plan, constraints, scope)?;
    Ok((plan, candidates))
}

pub fn candidates_for(
    plan: &DimensionPlan,
    constraints: &FeasibilityConstraints,
    scope: QidScope,
) -> Result<Vec<DimensionCandidate>, DimensionError> {
    let mut reports: Vec<MetricsReport> = (0..=plan.qids.len())
        .into_par_iter()
        .map(|d| plan.report(d, scope))
        .collect::<Result<_, _>>()?;
    let k_before = reports[0].k;
    for r in &mut reports {
        r.privacy_gain = metrics::privacy_gain(k_before, r.k);
    }
    Ok(reports
        .into_iter()
        .enumerate()
        .map(|(d, report)| DimensionCandidate::new(d, plan.qids[..d].to_vec(), report, constraints))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub chosen: DimensionCandidate,
    pub policy: SelectionPolicy,
    /// False when no candidate is feasible.
    pub compliant: bool,
}

pub fn select_optimal(candidates: &[DimensionCandidate], policy: SelectionPolicy) -> Result<Selection, DimensionError> {
    if candidates.is_empty() {
        return Err(DimensionError::NoCandidates);
    }
    let feasible = candidates.iter().filter(|c| c.feasible);
    let best = match policy {
        SelectionPolicy::MaxNue => feasible.min_by(|a, b| {
            b.report
                .nue_percent
                .total_cmp(&a.report.nue_percent)
                .then(a.d.cmp(&b.d))
                .then(a.report.t.total_cmp(&b.report.t))
        }),
        SelectionPolicy::SmallestD => feasible.min_by_key(|c| c.d),
    };
    Ok(match best {
        Some(c) => Selection {
            chosen: c.clone(),
            policy,
            compliant: true,
        },
        None => {
            let fallback = candidates
                .iter()
                .min_by(|a, b| {
                    b.report
                        .k
                        .cmp(&a.report.k)
                        .then(a.report.t.total_cmp(&b.report.t))
                        .then(a.d.cmp(&b.d))
                })
                .expect("non-empty");
            Selection {
                chosen: fallback.clone(),
                policy,
                compliant: false,
            }
        }
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimensionReport {
    pub policy: SelectionPolicy,
    pub constraints: FeasibilityConstraints,
    pub candidates: Vec<DimensionCandidate>,
    pub chosen_d: usize,
    pub compliant: bool,
}

pub fn dimension_report(
    candidates: &[DimensionCandidate],
    selection: &Selection,
    constraints: &FeasibilityConstraints,
) -> DimensionReport {
    DimensionReport {
        policy: selection.policy,
        constraints: *constraints,
        candidates: candidates.to_vec(),
        chosen_d: selection.chosen.d,
        compliant: selection.compliant,
    }
}

impl DimensionReport {
    pub fn render_text(&self) -> String {
        let header = [
            "d",
            "k",
            "l per SA",
            "t",
            "NUE %",
            "inv NUE %",
            "gain",
            "feasible",
            "QIDs de-identified",
        ];
        let rows: Vec<Vec<String>> = self
            .candidates
            .iter()
            .map(|c| {
                let l = c
                    .report
                    .l_per_sa
                    .iter()
                    .map(|(s, l)| format!("{s}={l}"))
                    .collect::<Vec<_>>()
                    .join(" ");
                let marker = if c.d == self.chosen_d { "*" } else { "" };
                vec![
                    format!("{}{marker}", c.d),
                    c.report.k.to_string(),
                    if l.is_empty() { "-".into() } else { l },
                    format!("{:.2}", c.report.t),
                    format!("{:.2}", crate::round_half_up_2(c.report.nue_percent)),
                    format!("{:.2}", crate::round_half_up_2(c.report.inverse_nue_percent)),
                    c.report.privacy_gain.to_string(),
                    if c.feasible { "yes" } else { "no" }.into(),
                    c.deidentified_qids.join(", "),
                ]
            })
            .collect();
        let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
        for r in &rows {
            for (w, c) in widths.iter_mut().zip(r) {
                *w = (*w).max(c.chars().count());
            }
        }
        let line = |cells: &[String]| {
            cells
                .iter()
                .zip(&widths)
                .map(|(c, w)| format!("{c:<w$}"))
                .collect::<Vec<_>>()
                .join("  ")
                .trim_end()
                .to_string()
        };
        let mut out = String::new();
        let _ = writeln!(
            out,
            "QID dimensions (policy {}, k >= {}, l >= {}, t <= {})",
            self.policy, self.constraints.k_min, self.constraints.l_min, self.constraints.t_max
        );
        let _ = writeln!(out, "{}", line(&header.map(String::from)));
        let _ = writeln!(
            out,
            "{}",
            line(&widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>())
        );
        for r in &rows {
            let _ = writeln!(out, "{}", line(r));
        }
        let _ = writeln!(
            out,
            "chosen: {}{}",
            self.chosen_d,
            if self.compliant {
                ""
            } else {
                " (no feasible dimension; non-compliant)"
            }
        );
        out
    }
}
