//! Brute-force reference implementations for the metric tests.
//!
//! These work on raw `Vec<Vec<String>>` rows with pairwise scans and never call
//! into the crate's metric code.

#![allow(dead_code)]

use std::collections::BTreeSet;

use anonpipe_core::table::{AttributeKind, AttributeMeta, Table};

pub type Rows = Vec<Vec<String>>;

fn same_qids(a: &[String], b: &[String], qids: &[usize]) -> bool {
    qids.iter().all(|&q| a[q] == b[q])
}

fn class_of(rows: &Rows, r: usize, qids: &[usize]) -> Vec<usize> {
    (0..rows.len())
        .filter(|&o| same_qids(&rows[r], &rows[o], qids))
        .collect()
}

pub fn k(rows: &Rows, qids: &[usize]) -> usize {
    (0..rows.len())
        .map(|r| class_of(rows, r, qids).len())
        .min()
        .unwrap_or(0)
}

pub fn l(rows: &Rows, qids: &[usize], sa: usize) -> usize {
    (0..rows.len())
        .map(|r| {
            class_of(rows, r, qids)
                .into_iter()
                .map(|o| rows[o][sa].clone())
                .collect::<BTreeSet<_>>()
                .len()
        })
        .min()
        .unwrap_or(0)
}

fn distribution(values: &[&String], support: &[String]) -> Vec<f64> {
    support
        .iter()
        .map(|s| values.iter().filter(|v| **v == s).count() as f64 / values.len() as f64)
        .collect()
}

/// Minimum-cost transport on a line by the north-west corner rule, which is
/// optimal for a 1-D ordered support.
fn transport_on_line(p: &[f64], q: &[f64]) -> f64 {
    let m = p.len();
    if m < 2 {
        return 0.0;
    }
    let (mut supply, mut demand) = (p.to_vec(), q.to_vec());
    let (mut i, mut j) = (0, 0);
    let mut cost = 0.0;
    while i < m && j < m {
        let moved = supply[i].min(demand[j]);
        cost += moved * (i as f64 - j as f64).abs();
        supply[i] -= moved;
        demand[j] -= moved;
        if supply[i] <= 1e-15 {
            i += 1;
        }
        if demand[j] <= 1e-15 {
            j += 1;
        }
    }
    cost / (m - 1) as f64
}

/// `order`: rank order of values for the ordered ground distance; `None`
/// means equal distance. Values missing from `order` rank after it by name.
pub fn t(rows: &Rows, qids: &[usize], sa: usize, order: Option<&[String]>) -> f64 {
    let all: Vec<&String> = rows.iter().map(|r| &r[sa]).collect();
    let present: BTreeSet<String> = all.iter().map(|v| (*v).clone()).collect();
    let support: Vec<String> = match order {
        Some(order) => {
            let mut s: Vec<String> = order.iter().filter(|v| present.contains(*v)).cloned().collect();
            s.extend(present.iter().filter(|v| !order.contains(v)).cloned());
            s
        }
        None => present.into_iter().collect(),
    };
    let global = distribution(&all, &support);
    (0..rows.len())
        .map(|r| {
            let members: Vec<&String> = class_of(rows, r, qids).into_iter().map(|o| &rows[o][sa]).collect();
            let local = distribution(&members, &support);
            match order {
                Some(_) => transport_on_line(&local, &global),
                // 1 - overlap equals total variation
                None => 1.0 - local.iter().zip(&global).map(|(a, b)| a.min(*b)).sum::<f64>(),
            }
        })
        .fold(0.0, f64::max)
}

/// NUE percentage by direct counting per cell.
pub fn nue(original: &Rows, transformed: &Rows, attrs: &[usize]) -> f64 {
    let n = original.len();
    let mut loss = 0.0;
    let mut max = 0.0;
    for &a in attrs {
        for r in 0..n {
            let c_orig = original.iter().filter(|o| o[a] == original[r][a]).count();
            let c_trans = if transformed[r][a].is_empty() {
                n
            } else {
                transformed.iter().filter(|o| o[a] == transformed[r][a]).count()
            };
            loss += (c_trans as f64 / c_orig as f64).log2();
            max += (n as f64 / c_orig as f64).log2();
        }
    }
    if max == 0.0 {
        0.0
    } else {
        100.0 * loss / max
    }
}

pub fn categorical_table(names: &[String], rows: Rows) -> Table {
    Table::new(
        "t",
        names
            .iter()
            .map(|n| AttributeMeta::new(n.clone(), AttributeKind::Categorical))
            .collect(),
        rows,
    )
    .expect("valid table")
}

pub fn read_rows(path: &std::path::Path) -> (Vec<String>, Rows) {
    let mut reader = csv::Reader::from_path(path).expect("fixture readable");
    let header = reader.headers().unwrap().iter().map(str::to_string).collect();
    let rows = reader
        .records()
        .map(|r| r.unwrap().iter().map(str::to_string).collect())
        .collect();
    (header, rows)
}

pub fn workspace_root() -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}
