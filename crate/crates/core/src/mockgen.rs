//! Seeded mock real-world-data generator.
//!
//! Each attribute draws from its own ChaCha8 stream keyed by
//! SHA-256(seed ‖ attribute name), so an attribute's values depend only on the
//! seed, its own spec and the row count, never on the other attributes.
//! Missing cells use a second stream keyed by the name plus "/missing" and are
//! written as empty cells.

use std::collections::HashSet;

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::table::{AttributeKind, AttributeMeta, Role, Table, TableError};

const SHIPPED_SPEC: &str = include_str!("../../../specs/ms500.spec");

#[derive(Debug, Error)]
pub enum GeneratorError {
    #[error("invalid generator spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Table(#[from] TableError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedValue {
    pub value: String,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ValueDistribution {
    /// Weighted categories. With `exact`, counts follow the weights by
    /// largest remainder and the column is shuffled.
    Categorical {
        values: Vec<WeightedValue>,
        #[serde(default)]
        exact: bool,
    },
    Uniform {
        min: f64,
        max: f64,
        #[serde(default)]
        decimals: u8,
    },
    /// Normal draw clamped to [min, max].
    Normal {
        mean: f64,
        sd: f64,
        min: f64,
        max: f64,
        #[serde(default)]
        decimals: u8,
    },
    /// Distinct identifiers `<prefix><number>` with number in [min, max].
    UniqueId { prefixes: Vec<String>, min: u64, max: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeSpec {
    pub name: String,
    pub kind: AttributeKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub declared_role: Option<Role>,
    pub distribution: ValueDistribution,
    #[serde(default)]
    pub missing_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    #[serde(default = "default_name")]
    pub name: String,
    pub seed: u64,
    pub rows: usize,
    pub attributes: Vec<AttributeSpec>,
}

fn default_name() -> String {
    "mock".into()
}

impl GeneratorSpec {
    /// The shipped 17-attribute MS/COVID-19 spec at 500 rows.
    pub fn shipped() -> Self {
        serde_json::from_str(SHIPPED_SPEC).expect("shipped spec parses")
    }

    pub fn with_rows(mut self, rows: usize) -> Self {
        self.rows = rows;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn schema(&self) -> Vec<AttributeMeta> {
        self.attributes
            .iter()
            .map(|a| AttributeMeta {
                name: a.name.clone(),
                kind: a.kind,
                declared_role: a.declared_role,
                value_order: None,
            })
            .collect()
    }

    pub fn validate(&self) -> Result<(), GeneratorError> {
        let bad = |m: String| Err(GeneratorError::InvalidSpec(m));
        if self.rows == 0 {
            return bad("rows must be positive".into());
        }
        let mut names = HashSet::new();
        for a in &self.attributes {
            if !names.insert(a.name.as_str()) {
                return bad(format!("duplicate attribute '{}'", a.name));
            }
            if !(0.0..=1.0).contains(&a.missing_rate) {
                return bad(format!("'{}': missing_rate must lie in [0, 1]", a.name));
            }
            match &a.distribution {
                ValueDistribution::Categorical { values, .. } => {
                    if values.is_empty() || values.iter().any(|v| !(v.weight.is_finite() && v.weight > 0.0)) {
                        return bad(format!("'{}': categories need positive weights", a.name));
                    }
                }
                ValueDistribution::Uniform { min, max, decimals }
                | ValueDistribution::Normal { min, max, decimals, .. } => {
                    if !(min.is_finite() && max.is_finite() && min <= max) || *decimals > 6 {
                        return bad(format!("'{}': need min <= max and at most 6 decimals", a.name));
                    }
                    if let ValueDistribution::Normal { sd, .. } = &a.distribution {
                        if !(sd.is_finite() && *sd > 0.0) {
                            return bad(format!("'{}': sd must be positive", a.name));
                        }
                    }
                    if a.kind == AttributeKind::Year && (*decimals != 0 || *min < 1000.0 || *max > 9999.0) {
                        return bad(format!("'{}': years need 0 decimals within 1000..=9999", a.name));
                    }
                }
                ValueDistribution::UniqueId { prefixes, min, max } => {
                    let space = (max.saturating_sub(*min) + 1) as u128 * prefixes.len() as u128;
                    if prefixes.is_empty() || min > max || space < self.rows as u128 {
                        return bad(format!("'{}': identifier space smaller than row count", a.name));
                    }
                }
            }
        }
        Ok(())
    }
}

fn stream(seed: u64, key: &str) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(key.as_bytes());
    let digest = h.finalize();
    let mut bytes = [0u8; 32];
    bytes.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(bytes)
}

fn format_number(v: f64, decimals: u8) -> String {
    let s = format!("{:.*}", decimals as usize, v);
    // avoid "-0"
    if s.starts_with('-') && s[1..].chars().all(|c| c == '0' || c == '.') {
        s[1..].to_string()
    } else {
        s
    }
}

fn round_to(v: f64, decimals: u8) -> f64 {
    let f = 10f64.powi(decimals as i32);
    (v * f).round() / f
}

fn column(spec: &AttributeSpec, seed: u64, rows: usize) -> Vec<String> {
    let mut rng = stream(seed, &spec.name);
    let mut cells: Vec<String> = match &spec.distribution {
        ValueDistribution::Categorical { values, exact: false } => {
            let total: f64 = values.iter().map(|v| v.weight).sum();
            (0..rows)
                .map(|_| {
                    let mut x = rng.random::<f64>() * total;
                    for v in values {
                        if x < v.weight {
                            return v.value.clone();
                        }
                        x -= v.weight;
                    }
                    values.last().expect("validated").value.clone()
                })
                .collect()
        }
        ValueDistribution::Categorical { values, exact: true } => {
            let mut out: Vec<String> = exact_counts(values, rows)
                .into_iter()
                .zip(values)
                .flat_map(|(c, v)| std::iter::repeat_n(v.value.clone(), c))
                .collect();
            out.shuffle(&mut rng);
            out
        }
        ValueDistribution::Uniform { min, max, decimals } => (0..rows)
            .map(|_| {
                let v = if min == max {
                    *min
                } else {
                    rng.random_range(*min..=*max)
                };
                format_number(round_to(v, *decimals).clamp(*min, *max), *decimals)
            })
            .collect(),
        ValueDistribution::Normal {
            mean,
            sd,
            min,
            max,
            decimals,
        } => {
            let normal = Normal::new(*mean, *sd).expect("validated sd");
            (0..rows)
                .map(|_| {
                    let v = round_to(normal.sample(&mut rng).clamp(*min, *max), *decimals);
                    format_number(v.clamp(*min, *max), *decimals)
                })
                .collect()
        }
        ValueDistribution::UniqueId { prefixes, min, max } => {
            let span = max - min + 1;
            let space = span as usize * prefixes.len();
            index::sample(&mut rng, space, rows)
                .into_iter()
                .map(|k| {
                    let k = k as u64;
                    format!("{}{}", prefixes[(k / span) as usize], min + k % span)
                })
                .collect()
        }
    };

    let missing = (spec.missing_rate * rows as f64).round() as usize;
    if missing > 0 {
        let mut rng = stream(seed, &format!("{}/missing", spec.name));
        for i in index::sample(&mut rng, rows, missing.min(rows)) {
            cells[i].clear();
        }
    }
    cells
}

/// Largest-remainder apportionment of `rows` over the weights.
fn exact_counts(values: &[WeightedValue], rows: usize) -> Vec<usize> {
    let total: f64 = values.iter().map(|v| v.weight).sum();
    let quotas: Vec<f64> = values.iter().map(|v| v.weight / total * rows as f64).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    let assigned: usize = counts.iter().sum();
    for &i in order.iter().take(rows - assigned) {
        counts[i] += 1;
    }
    counts
}

pub fn generate(spec: &GeneratorSpec) -> Result<Table, GeneratorError> {
    spec.validate()?;
    let columns: Vec<Vec<String>> = spec
        .attributes
        .iter()
        .map(|a| column(a, spec.seed, spec.rows))
        .collect();
    let rows = (0..spec.rows)
        .map(|r| columns.iter().map(|c| c[r].clone()).collect())
        .collect();
    Ok(Table::new(spec.name.clone(), spec.schema(), rows)?)
}

/// 500- and 1000-row tables from the shipped spec.
pub fn generate_pair(seed: u64) -> (Table, Table) {
    let base = GeneratorSpec::shipped().with_seed(seed);
    let mut small = base.clone().with_rows(500);
    small.name = "ms500".into();
    let mut large = base.with_rows(1000);
    large.name = "ms1000".into();
    (
        generate(&small).expect("shipped spec is valid"),
        generate(&large).expect("shipped spec is valid"),
    )
}
