//! Prints risk rates and labels for the shipped mock datasets (seed tuning aid).
use std::collections::BTreeMap;

use anonpipe_core::identify::{classify, profile_table, Thresholds};
use anonpipe_core::mockgen::generate_pair;
use anonpipe_core::table::{drop_sparse_attributes, normalize_missing, DEFAULT_DROP_THRESHOLD};

fn main() {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(2024);
    let (a, b) = generate_pair(seed);
    for (t, alpha) in [(a, 25.0), (b, 10.0)] {
        let (n, _) = normalize_missing(&t);
        let (n, dropped) = drop_sparse_attributes(&n, DEFAULT_DROP_THRESHOLD);
        let profiles = profile_table(&n).unwrap();
        let c = classify(&profiles, &Thresholds::new(alpha, 1.0).unwrap(), &BTreeMap::new()).unwrap();
        println!(
            "{} dropped {:?}",
            t.name,
            dropped.iter().map(|d| &d.attribute).collect::<Vec<_>>()
        );
        let mut rows: Vec<_> = c.iter().collect();
        rows.sort_by(|x, y| y.risk_rate_percent.total_cmp(&x.risk_rate_percent));
        for c in rows {
            println!("  {:28} {:7.2} {}", c.attribute, c.risk_rate_percent, c.label);
        }
    }
}
