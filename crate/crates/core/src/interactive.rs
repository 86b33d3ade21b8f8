//! Prompt-driven session. Each answer re-renders the affected report; the
//! session ends with a [`RunConfig`] that a batch run replays exactly.

use std::io::{BufRead, Write};
use std::str::FromStr;

use crate::config::{RunConfig, Source};
use crate::deidentify::{Rule, RuleSet, Strategy, DEFAULT_PLACEHOLDER};
use crate::dimension::SelectionPolicy;
use crate::identify::{risk_order, Thresholds};
use crate::pipeline::{
    evaluate_dimensions, identify_table, load_input, prepare, run_pipeline, write_files, PipelineError, RunOutcome,
};
use crate::table::Role;

/// File name of the replayable config saved next to the artifacts.
pub const SESSION_CONFIG: &str = "session.json";

struct Prompter<R, W> {
    input: R,
    out: W,
}

impl<R: BufRead, W: Write> Prompter<R, W> {
    fn say(&mut self, text: &str) -> Result<(), PipelineError> {
        self.out
            .write_all(text.as_bytes())
            .and_then(|_| self.out.flush())
            .map_err(|source| PipelineError::Output {
                path: "<terminal>".into(),
                source,
            })
    }

    /// One trimmed answer. EOF or "q"/"quit" aborts the session.
    fn ask(&mut self, prompt: &str) -> Result<String, PipelineError> {
        self.say(&format!("{prompt}: "))?;
        let mut line = String::new();
        let read = self
            .input
            .read_line(&mut line)
            .map_err(|source| PipelineError::Output {
                path: "<terminal>".into(),
                source,
            })?;
        let answer = line.trim().to_string();
        if read == 0 || answer.eq_ignore_ascii_case("q") || answer.eq_ignore_ascii_case("quit") {
            return Err(PipelineError::Aborted);
        }
        Ok(answer)
    }

    /// Parsed answer; blank keeps `current`. Re-asks on parse errors.
    fn ask_value<T>(&mut self, prompt: &str, current: T) -> Result<T, PipelineError>
    where
        T: FromStr + std::fmt::Display + Copy,
    {
        loop {
            let answer = self.ask(&format!("{prompt} [{current}]"))?;
            if answer.is_empty() {
                return Ok(current);
            }
            match answer.parse() {
                Ok(v) => return Ok(v),
                Err(_) => self.say(&format!("  cannot parse '{answer}'\n"))?,
            }
        }
    }
}

fn parse_rule_choice(answer: &str, attribute: &str) -> Option<Option<Rule>> {
    let rule = |strategy| {
        Some(Some(Rule {
            attribute: attribute.to_string(),
            strategy,
        }))
    };
    match answer {
        "" | "keep" => Some(None),
        "suppress" => rule(Strategy::Suppress { drop_column: false }),
        "mask" => rule(Strategy::Mask {
            placeholder: DEFAULT_PLACEHOLDER.into(),
        }),
        a => match a.strip_prefix("mask:") {
            Some(p) if !p.is_empty() => rule(Strategy::Mask { placeholder: p.into() }),
            _ => None,
        },
    }
}

/// Runs the prompts and returns the transcribed config. Nothing is written.
pub fn interactive_session<R: BufRead, W: Write>(
    input: R,
    output: W,
    base: &RunConfig,
) -> Result<RunConfig, PipelineError> {
    base.validate()?;
    let mut p = Prompter { input, out: output };
    let mut config = base.clone();
    let raw = load_input(&config)?;
    let mut ruleset = config.rules.resolve("rules")?;
    let prepared = prepare(&raw, config.drop_threshold);
    for d in &prepared.dropped {
        p.say(&format!(
            "dropped '{}': {:.1}% missing\n",
            d.attribute,
            d.missing_fraction * 100.0
        ))?;
    }
    let table = &prepared.table;

    // thresholds and overrides
    let identification = loop {
        let alpha = p.ask_value("alpha (%)", config.thresholds.alpha_percent)?;
        let beta = p.ask_value("beta (%)", config.thresholds.beta_percent)?;
        let Ok(thresholds) = Thresholds::new(alpha, beta) else {
            p.say("  need 0 <= beta <= alpha <= 100\n")?;
            continue;
        };
        config.thresholds = thresholds;
        let mut identification = identify_table(table, &config.thresholds, &config.overrides)?;
        p.say(&identification.report.render_text())?;
        loop {
            let answer = p.ask("override (attribute=DID|QID|SA|NSA|auto, blank to continue)")?;
            if answer.is_empty() {
                break;
            }
            let Some((name, role)) = answer.split_once('=') else {
                p.say("  expected attribute=ROLE\n")?;
                continue;
            };
            let (name, role) = (name.trim(), role.trim());
            if table.index_of(name).is_err() {
                p.say(&format!("  unknown attribute '{name}'\n"))?;
                continue;
            }
            if role.eq_ignore_ascii_case("auto") {
                config.overrides.remove(name);
            } else {
                match Role::from_str(role) {
                    Ok(r) => {
                        config.overrides.insert(name.to_string(), r);
                    }
                    Err(e) => {
                        p.say(&format!("  {e}\n"))?;
                        continue;
                    }
                }
            }
            identification = identify_table(table, &config.thresholds, &config.overrides)?;
            p.say(&identification.report.render_text())?;
        }
        let accept = p.ask("accept classification? [Y/n]")?;
        if !accept.eq_ignore_ascii_case("n") && !accept.eq_ignore_ascii_case("no") {
            break identification;
        }
    };

    // rules for every QID and SA, riskiest first
    let mut targets: Vec<_> = identification
        .classifications
        .iter()
        .filter(|c| matches!(c.label, Role::Qid | Role::Sa))
        .collect();
    risk_order(&mut targets, |c| (c.attribute.as_str(), c.risk_rate_percent));
    loop {
        for c in &targets {
            let current = ruleset.rule_for(&c.attribute).map_or("none", |r| r.strategy.name());
            loop {
                let answer = p.ask(&format!(
                    "rule for {} ({}) [keep|suppress|mask|mask:TEXT] (current: {current})",
                    c.attribute, c.label
                ))?;
                match parse_rule_choice(&answer, &c.attribute) {
                    Some(None) if current == "none" => p.say("  a rule is required\n")?,
                    Some(None) => break,
                    Some(Some(rule)) => {
                        ruleset.rules.retain(|r| r.attribute != c.attribute);
                        ruleset.rules.push(rule);
                        break;
                    }
                    None => p.say("  expected keep, suppress, mask or mask:TEXT\n")?,
                }
            }
        }
        match evaluate(&mut p, table, &identification, &ruleset, &config) {
            Ok(()) => break,
            Err(e) => p.say(&format!("  {e}\n"))?,
        }
    }

    // constraints and policy
    loop {
        config.constraints.k_min = p.ask_value("k_min", config.constraints.k_min)?;
        config.constraints.l_min = p.ask_value("l_min", config.constraints.l_min)?;
        config.constraints.t_max = p.ask_value("t_max", config.constraints.t_max)?;
        config.policy = p.ask_value::<SelectionPolicy>("policy (max-nue|smallest-d)", config.policy)?;
        match evaluate(&mut p, table, &identification, &ruleset, &config) {
            Ok(()) => break,
            Err(e) => p.say(&format!("  {e}\n"))?,
        }
    }

    config.rules = Source::Inline(RuleSet { rules: ruleset.rules });
    Ok(config)
}

fn evaluate<R: BufRead, W: Write>(
    p: &mut Prompter<R, W>,
    table: &crate::table::Table,
    identification: &crate::pipeline::Identification,
    ruleset: &RuleSet,
    config: &RunConfig,
) -> Result<(), PipelineError> {
    let outcome = evaluate_dimensions(
        table,
        &identification.classifications,
        ruleset,
        &config.constraints,
        config.policy,
        config.qid_scope,
    )?;
    p.say(&outcome.report.render_text())
}

/// Interactive session followed by a batch run of the transcribed config,
/// which is saved as [`SESSION_CONFIG`] in the output directory.
pub fn run_interactive<R: BufRead, W: Write>(
    input: R,
    output: W,
    base: &RunConfig,
) -> Result<RunOutcome, PipelineError> {
    let config = interactive_session(input, output, base)?;
    let mut outcome = run_pipeline(&config)?;
    outcome.files.extend(write_files(
        &config.output_dir,
        &[(SESSION_CONFIG, config.to_json().into_bytes())],
    )?);
    Ok(outcome)
}
