//! End-to-end orchestration shared by the CLI and the HTTP service.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{ConfigError, EmitFormat, InputSource, RunConfig};
use crate::deidentify::{apply_ruleset, ApplyFailure, AuditEntry, RuleSet};
use crate::dimension::{
    candidates_for, dimension_report, select_optimal, DimensionCandidate, DimensionError, DimensionPlan,
    DimensionReport, FeasibilityConstraints, QidScope, Selection, SelectionPolicy,
};
use crate::identify::{
    classify, declared_overrides, identification_report, profile_table, Classification, IdentificationReport,
    IdentifyError, RiskProfile, Thresholds,
};
use crate::mockgen::{generate, GeneratorError};
use crate::table::{
    drop_sparse_attributes, load_csv, normalize_missing, to_csv_bytes, MissingStat, Role, Table, TableError,
};

pub const ANONYMISED_CSV: &str = "anonymised.csv";
pub const IDENTIFICATION_REPORT: &str = "identification.report";
pub const DIMENSION_REPORT: &str = "dimension.report";
pub const AUDIT_LOG: &str = "audit.log";
pub const IDENTIFICATION_TEXT: &str = "identification.txt";
pub const DIMENSION_TEXT: &str = "dimension.txt";

/// Error tagged with the stage that raised it.
#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("[config] {0}")]
    Config(#[from] ConfigError),
    #[error("[table] {0}")]
    Table(#[from] TableError),
    #[error("[generate] {0}")]
    Generate(#[from] GeneratorError),
    #[error("[identify] {0}")]
    Identify(#[from] IdentifyError),
    #[error("[deidentify] {0}")]
    Deidentify(#[from] ApplyFailure),
    #[error("[dimension] {0}")]
    Dimension(#[from] DimensionError),
    #[error("[identify] table has no attributes left after dropping sparse attributes")]
    NoAttributes,
    #[error("[identify] table has no rows")]
    NoRows,
    #[error("[output] {path}: {source}")]
    Output {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("[interactive] session aborted")]
    Aborted,
}

/// Loaded and normalised input.
#[derive(Debug, Clone)]
pub struct Prepared {
    /// Normalised, sparse attributes removed.
    pub table: Table,
    pub missing: Vec<MissingStat>,
    pub dropped: Vec<MissingStat>,
}

pub fn load_input(config: &RunConfig) -> Result<Table, PipelineError> {
    match &config.input {
        InputSource::Csv(path) => {
            let schema = config
                .schema
                .as_ref()
                .ok_or_else(|| ConfigError::Invalid("CSV input requires a schema".into()))?
                .resolve("schema")?;
            let file = fs::File::open(path).map_err(|source| ConfigError::Read {
                path: path.clone(),
                source,
            })?;
            let name = path
                .file_stem()
                .map_or_else(|| "input".to_string(), |s| s.to_string_lossy().into_owned());
            Ok(load_csv(name, file, &schema.attributes)?)
        }
        InputSource::Generator(spec) => {
            let mut spec = spec.resolve("generator spec")?;
            if let Some(seed) = config.seed {
                spec.seed = seed;
            }
            Ok(generate(&spec)?)
        }
    }
}

/// Missing-value normalisation followed by the sparse-attribute drop.
pub fn prepare(raw: &Table, drop_threshold: f64) -> Prepared {
    let (normalised, missing) = normalize_missing(raw);
    let (table, dropped) = drop_sparse_attributes(&normalised, drop_threshold);
    Prepared {
        table,
        missing,
        dropped,
    }
}

#[derive(Debug, Clone)]
pub struct Identification {
    pub profiles: Vec<RiskProfile>,
    pub classifications: Vec<Classification>,
    pub report: IdentificationReport,
}

/// Classifies every attribute. Schema-declared roles act as overrides;
/// explicit `overrides` win over declared roles.
pub fn identify_table(
    table: &Table,
    thresholds: &Thresholds,
    overrides: &BTreeMap<String, Role>,
) -> Result<Identification, PipelineError> {
    if table.attributes().is_empty() {
        return Err(PipelineError::NoAttributes);
    }
    if table.row_count() == 0 {
        return Err(PipelineError::NoRows);
    }
    let profiles = profile_table(table)?;
    let mut merged = declared_overrides(table);
    merged.extend(overrides.iter().map(|(k, v)| (k.clone(), *v)));
    let classifications = classify(&profiles, thresholds, &merged)?;
    let report = identification_report(&classifications, &profiles, thresholds);
    Ok(Identification {
        profiles,
        classifications,
        report,
    })
}

/// Every ruled attribute de-identified once, DIDs dropped first.
pub fn deidentify_table(
    table: &Table,
    classifications: &[Classification],
    ruleset: &RuleSet,
) -> Result<(Table, Vec<AuditRecord>), PipelineError> {
    let mut records = Vec::new();
    let mut working = table.clone();
    for c in classifications.iter().filter(|c| c.label == Role::Did) {
        working = working.without_attribute(&c.attribute)?;
        records.push(AuditRecord::DropDirectIdentifier {
            attribute: c.attribute.clone(),
        });
    }
    let applicable = RuleSet {
        rules: ruleset
            .rules
            .iter()
            .filter(|r| working.index_of(&r.attribute).is_ok())
            .cloned()
            .collect(),
    };
    let (out, log) = apply_ruleset(&working, &applicable, classifications)?;
    records.extend(log.into_iter().map(AuditRecord::Rule));
    Ok((out, records))
}

#[derive(Debug, Clone)]
pub struct DimensionOutcome {
    pub plan: DimensionPlan,
    pub candidates: Vec<DimensionCandidate>,
    pub selection: Selection,
    pub report: DimensionReport,
}

pub fn evaluate_dimensions(
    table: &Table,
    classifications: &[Classification],
    ruleset: &RuleSet,
    constraints: &FeasibilityConstraints,
    policy: SelectionPolicy,
    scope: QidScope,
) -> Result<DimensionOutcome, PipelineError> {
    constraints.validate()?;
    ruleset.validate().map_err(|source| ApplyFailure {
        step: 0,
        attribute: String::new(),
        log: Vec::new(),
        source,
    })?;
    let plan = DimensionPlan::new(table, classifications, ruleset)?;
    let candidates = candidates_for(&plan, constraints, scope)?;
    let selection = select_optimal(&candidates, policy)?;
    let report = dimension_report(&candidates, &selection, constraints);
    Ok(DimensionOutcome {
        plan,
        candidates,
        selection,
        report,
    })
}

impl DimensionOutcome {
    /// Anonymised table of the chosen dimension with its audit trail.
    pub fn export(&self) -> Result<(Table, Vec<AuditRecord>), PipelineError> {
        let (table, log) = self.plan.candidate_table(self.selection.chosen.d)?;
        let mut records: Vec<AuditRecord> = self
            .plan
            .dids
            .iter()
            .map(|a| AuditRecord::DropDirectIdentifier { attribute: a.clone() })
            .collect();
        records.extend(log.into_iter().map(AuditRecord::Rule));
        Ok((table, records))
    }
}

/// One line of `audit.log`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum AuditRecord {
    DropSparseAttribute {
        attribute: String,
        missing_count: usize,
        missing_fraction: f64,
    },
    DropDirectIdentifier {
        attribute: String,
    },
    Rule(AuditEntry),
    SelectDimension {
        d: usize,
        policy: SelectionPolicy,
        compliant: bool,
    },
}

pub fn audit_log_bytes(records: &[AuditRecord]) -> Vec<u8> {
    let mut out = Vec::new();
    for r in records {
        out.extend(serde_json::to_vec(r).expect("audit record serialises"));
        out.push(b'\n');
    }
    out
}

/// Canonical bytes of a structured report.
pub fn report_bytes<T: Serialize>(report: &T) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(report).expect("report serialises");
    out.push(b'\n');
    out
}

fn sparse_records(prepared: &Prepared) -> Vec<AuditRecord> {
    prepared
        .dropped
        .iter()
        .map(|d| AuditRecord::DropSparseAttribute {
            attribute: d.attribute.clone(),
            missing_count: d.missing_count,
            missing_fraction: d.missing_fraction,
        })
        .collect()
}

/// Everything a full run produces, in memory.
#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub prepared: Prepared,
    pub identification: Identification,
    pub dimensions: DimensionOutcome,
    pub anonymised: Table,
    pub audit: Vec<AuditRecord>,
}

impl RunArtifacts {
    pub fn compliant(&self) -> bool {
        self.dimensions.selection.compliant
    }

    pub fn chosen_d(&self) -> usize {
        self.dimensions.selection.chosen.d
    }
}

/// Runs every stage without touching the filesystem (besides reading inputs).
pub fn execute(config: &RunConfig) -> Result<RunArtifacts, PipelineError> {
    config.validate()?;
    let raw = load_input(config)?;
    let ruleset = config.rules.resolve("rules")?;
    execute_on(&raw, config, &ruleset)
}

pub fn execute_on(raw: &Table, config: &RunConfig, ruleset: &RuleSet) -> Result<RunArtifacts, PipelineError> {
    let prepared = prepare(raw, config.drop_threshold);
    let identification = identify_table(&prepared.table, &config.thresholds, &config.overrides)?;
    let dimensions = evaluate_dimensions(
        &prepared.table,
        &identification.classifications,
        ruleset,
        &config.constraints,
        config.policy,
        config.qid_scope,
    )?;
    let (anonymised, steps) = dimensions.export()?;
    let mut audit = sparse_records(&prepared);
    audit.extend(steps);
    audit.push(AuditRecord::SelectDimension {
        d: dimensions.selection.chosen.d,
        policy: dimensions.selection.policy,
        compliant: dimensions.selection.compliant,
    });
    Ok(RunArtifacts {
        prepared,
        identification,
        dimensions,
        anonymised,
        audit,
    })
}

/// Serialised artifacts selected by `config.emit`, as (file name, bytes).
pub fn artifact_files(artifacts: &RunArtifacts, config: &RunConfig) -> Vec<(&'static str, Vec<u8>)> {
    let mut files: Vec<(&'static str, Vec<u8>)> = Vec::new();
    if config.emits(EmitFormat::Csv) {
        files.push((ANONYMISED_CSV, to_csv_bytes(&artifacts.anonymised)));
    }
    if config.emits(EmitFormat::StructuredReport) {
        files.push((IDENTIFICATION_REPORT, report_bytes(&artifacts.identification.report)));
        files.push((DIMENSION_REPORT, report_bytes(&artifacts.dimensions.report)));
    }
    if config.emits(EmitFormat::TextReport) {
        files.push((
            IDENTIFICATION_TEXT,
            artifacts.identification.report.render_text().into_bytes(),
        ));
        files.push((DIMENSION_TEXT, artifacts.dimensions.report.render_text().into_bytes()));
    }
    files.push((AUDIT_LOG, audit_log_bytes(&artifacts.audit)));
    files
}

/// Writes the artifacts selected by `config.emit` and returns their paths.
pub fn write_artifacts(artifacts: &RunArtifacts, config: &RunConfig) -> Result<Vec<PathBuf>, PipelineError> {
    write_files(&config.output_dir, &artifact_files(artifacts, config))
}

pub fn write_files(dir: &Path, files: &[(&str, Vec<u8>)]) -> Result<Vec<PathBuf>, PipelineError> {
    fs::create_dir_all(dir).map_err(|source| PipelineError::Output {
        path: dir.to_path_buf(),
        source,
    })?;
    files
        .iter()
        .map(|(name, bytes)| {
            let path = dir.join(name);
            fs::write(&path, bytes).map_err(|source| PipelineError::Output {
                path: path.clone(),
                source,
            })?;
            Ok(path)
        })
        .collect()
}

/// Result of [`run_pipeline`].
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub compliant: bool,
    pub chosen_d: usize,
    pub files: Vec<PathBuf>,
}

impl RunOutcome {
    /// 0 for a feasible optimum, 3 when no dimension is feasible.
    pub fn exit_code(&self) -> i32 {
        if self.compliant {
            0
        } else {
            3
        }
    }
}

pub fn run_pipeline(config: &RunConfig) -> Result<RunOutcome, PipelineError> {
    let artifacts = execute(config)?;
    let files = write_artifacts(&artifacts, config)?;
    Ok(RunOutcome {
        compliant: artifacts.compliant(),
        chosen_d: artifacts.chosen_d(),
        files,
    })
}
