//! Equivalence classes and the privacy (k, ℓ, t) and utility (NUE) metrics.

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::table::{Table, TableError};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error(transparent)]
    Table(#[from] TableError),
    #[error("QID set is empty")]
    EmptyQidSet,
    #[error("table has no rows")]
    EmptyTable,
    #[error("row count mismatch: original {original}, transformed {transformed}")]
    RowCountMismatch { original: usize, transformed: usize },
    #[error(
        "attribute '{attribute}' row {row}: transformed group ({transformed}) is smaller than original group ({original}); not a coarsening"
    )]
    NotCoarsening {
        attribute: String,
        row: usize,
        original: usize,
        transformed: usize,
    },
}

/// Records sharing one QID signature. "missing" matches "missing".
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EquivalenceClass {
    pub signature: Vec<String>,
    pub members: Vec<usize>,
}

impl EquivalenceClass {
    pub fn size(&self) -> usize {
        self.members.len()
    }
}

/// Group-by on the QID tuple. Classes appear in order of first member.
pub fn partition(table: &Table, qids: &[impl AsRef<str>]) -> Result<Vec<EquivalenceClass>, MetricsError> {
    if qids.is_empty() {
        return Err(MetricsError::EmptyQidSet);
    }
    let idx: Vec<usize> = qids
        .iter()
        .map(|q| table.index_of(q.as_ref()))
        .collect::<Result<_, _>>()?;
    let mut lookup: HashMap<Vec<&str>, usize> = HashMap::new();
    let mut classes: Vec<EquivalenceClass> = Vec::new();
    for (r, row) in table.rows().iter().enumerate() {
        let key: Vec<&str> = idx.iter().map(|&i| row[i].as_str()).collect();
        match lookup.get(&key) {
            Some(&c) => classes[c].members.push(r),
            None => {
                lookup.insert(key.clone(), classes.len());
                classes.push(EquivalenceClass {
                    signature: key.into_iter().map(str::to_string).collect(),
                    members: vec![r],
                });
            }
        }
    }
    Ok(classes)
}

/// Smallest class size; 0 only for an empty partition.
pub fn k_anonymity(classes: &[EquivalenceClass]) -> usize {
    classes.iter().map(EquivalenceClass::size).min().unwrap_or(0)
}

/// Distinct ℓ-diversity: fewest distinct SA values in any class.
pub fn l_diversity(classes: &[EquivalenceClass], table: &Table, sa: &str) -> Result<usize, MetricsError> {
    let j = table.index_of(sa)?;
    let rows = table.rows();
    Ok(classes
        .iter()
        .map(|c| {
            c.members
                .iter()
                .map(|&r| rows[r][j].as_str())
                .collect::<HashSet<_>>()
                .len()
        })
        .min()
        .unwrap_or(0))
}

/// Ground distance between sensitive values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "order", rename_all = "snake_case")]
pub enum GroundDistance {
    /// Every pair of distinct values is at distance 1.
    Equal,
    /// Values ranked in the given order, unit distance between adjacent ranks.
    /// Observed values absent from the order rank after it, by name.
    Ordered(Vec<String>),
}

impl GroundDistance {
    /// Rank order over the observed values.
    fn ranks(&self, observed: &[&str]) -> Vec<String> {
        let Self::Ordered(order) = self else {
            return Vec::new();
        };
        let present: HashSet<&str> = observed.iter().copied().collect();
        let mut ranks: Vec<String> = order.iter().filter(|v| present.contains(v.as_str())).cloned().collect();
        let declared: HashSet<&str> = order.iter().map(String::as_str).collect();
        let mut rest: Vec<&str> = present.iter().copied().filter(|v| !declared.contains(v)).collect();
        rest.sort_unstable();
        ranks.extend(rest.into_iter().map(str::to_string));
        ranks
    }
}

/// Earth-mover distance between two distributions over the same ranked
/// support. `ordered` selects the unit-rank ground distance normalised by
/// (ranks − 1); otherwise the equal distance (total variation).
pub fn emd(p: &[f64], q: &[f64], ordered: bool) -> f64 {
    debug_assert_eq!(p.len(), q.len());
    if ordered {
        if p.len() < 2 {
            return 0.0;
        }
        let mut carry = 0.0;
        let mut total = 0.0;
        for (a, b) in p.iter().zip(q).take(p.len() - 1) {
            carry += a - b;
            total += carry.abs();
        }
        total / (p.len() - 1) as f64
    } else {
        0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
    }
}

/// Largest EMD between any class's SA distribution and the whole table's.
pub fn t_closeness(
    classes: &[EquivalenceClass],
    table: &Table,
    sa: &str,
    ground: &GroundDistance,
) -> Result<f64, MetricsError> {
    let column: Vec<&str> = table.column(sa)?.collect();
    let n = column.len();
    if n == 0 {
        return Ok(0.0);
    }
    let (support, ordered): (Vec<String>, bool) = match ground {
        GroundDistance::Equal => {
            let mut s: Vec<String> = column
                .iter()
                .copied()
                .collect::<HashSet<_>>()
                .into_iter()
                .map(str::to_string)
                .collect();
            s.sort_unstable();
            (s, false)
        }
        GroundDistance::Ordered(_) => (ground.ranks(&column), true),
    };
    let position: HashMap<&str, usize> = support.iter().enumerate().map(|(i, v)| (v.as_str(), i)).collect();

    let mut global = vec![0.0; support.len()];
    for v in &column {
        global[position[v]] += 1.0;
    }
    global.iter_mut().for_each(|g| *g /= n as f64);

    let mut worst = 0.0_f64;
    for class in classes {
        let mut local = vec![0.0; support.len()];
        for &r in &class.members {
            local[position[column[r]]] += 1.0;
        }
        let size = class.size() as f64;
        local.iter_mut().for_each(|l| *l /= size);
        worst = worst.max(emd(&local, &global, ordered));
    }
    Ok(worst.clamp(0.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NueResult {
    pub nue_percent: f64,
    pub inverse_nue_percent: f64,
    pub total_loss_bits: f64,
    pub max_loss_bits: f64,
}

/// Non-uniform entropy information loss of `transformed` relative to
/// `original` over `attributes`. A blank transformed cell belongs to the
/// group of all rows.
pub fn nue(original: &Table, transformed: &Table, attributes: &[impl AsRef<str>]) -> Result<NueResult, MetricsError> {
    let n = original.row_count();
    if transformed.row_count() != n {
        return Err(MetricsError::RowCountMismatch {
            original: n,
            transformed: transformed.row_count(),
        });
    }
    let mut total = 0.0;
    let mut max = 0.0;
    for attribute in attributes {
        let attribute = attribute.as_ref();
        let orig: Vec<&str> = original.column(attribute)?.collect();
        let trans: Vec<&str> = transformed.column(attribute)?.collect();
        let orig_counts = counts(&orig);
        let trans_counts = counts(&trans);
        for (row, (o, t)) in orig.iter().zip(&trans).enumerate() {
            let c_orig = orig_counts[o];
            let c_trans = if t.is_empty() { n } else { trans_counts[t] };
            if c_orig > c_trans {
                return Err(MetricsError::NotCoarsening {
                    attribute: attribute.to_string(),
                    row,
                    original: c_orig,
                    transformed: c_trans,
                });
            }
            total += -(c_orig as f64 / c_trans as f64).log2();
            max += -(c_orig as f64 / n as f64).log2();
        }
    }
    let nue_percent = if max > 0.0 { 100.0 * total / max } else { 0.0 };
    Ok(NueResult {
        nue_percent,
        inverse_nue_percent: 100.0 - nue_percent,
        total_loss_bits: total,
        max_loss_bits: max,
    })
}

fn counts<'a>(column: &[&'a str]) -> HashMap<&'a str, usize> {
    let mut m = HashMap::new();
    for v in column {
        *m.entry(*v).or_insert(0) += 1;
    }
    m
}

pub fn privacy_gain(k_before: usize, k_after: usize) -> i64 {
    k_after as i64 - k_before as i64
}

/// Privacy and utility metrics of one transformed table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub k: usize,
    pub l_per_sa: BTreeMap<String, usize>,
    /// Maximum of `t_per_sa`.
    pub t: f64,
    pub t_per_sa: BTreeMap<String, f64>,
    pub nue_percent: f64,
    pub inverse_nue_percent: f64,
    pub privacy_gain: i64,
}

impl MetricsReport {
    pub fn l_min(&self) -> Option<usize> {
        self.l_per_sa.values().copied().min()
    }
}

/// Inputs for [`evaluate`].
pub struct Evaluation<'a> {
    pub original: &'a Table,
    pub transformed: &'a Table,
    pub qids: &'a [String],
    /// Sensitive attributes with their ground distances.
    pub sas: &'a [(String, GroundDistance)],
    /// Attributes over which NUE is measured.
    pub utility_attributes: &'a [String],
    pub k_before: Option<usize>,
}

/// Computes a full [`MetricsReport`]. With no `k_before`, privacy gain is 0.
pub fn evaluate(e: &Evaluation<'_>) -> Result<MetricsReport, MetricsError> {
    if e.transformed.row_count() == 0 {
        return Err(MetricsError::EmptyTable);
    }
    let classes = partition(e.transformed, e.qids)?;
    evaluate_classes(e, &classes)
}

/// As [`evaluate`], over a precomputed partition.
pub fn evaluate_classes(e: &Evaluation<'_>, classes: &[EquivalenceClass]) -> Result<MetricsReport, MetricsError> {
    let k = k_anonymity(classes);
    let mut l_per_sa = BTreeMap::new();
    let mut t_per_sa = BTreeMap::new();
    for (sa, ground) in e.sas {
        l_per_sa.insert(sa.clone(), l_diversity(classes, e.transformed, sa)?);
        t_per_sa.insert(sa.clone(), t_closeness(classes, e.transformed, sa, ground)?);
    }
    let t = t_per_sa.values().copied().fold(0.0, f64::max);
    let utility = nue(e.original, e.transformed, e.utility_attributes)?;
    Ok(MetricsReport {
        k,
        l_per_sa,
        t,
        t_per_sa,
        nue_percent: utility.nue_percent,
        inverse_nue_percent: utility.inverse_nue_percent,
        privacy_gain: privacy_gain(e.k_before.unwrap_or(k), k),
    })
}
