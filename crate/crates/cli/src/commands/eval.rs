//! `eval`: join a score (or event) stream with ground-truth labels and
//! report the detection metrics. Label keys define the sample set; agents
//! the detector never scored count as zero, so an events-only stream
//! evaluates as "flagged frames vs everything else".

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;

use crowdwatch_core::evaluation::{accuracy_at, auc, equal_error_rate, roc_curve, LabeledScore};
use crowdwatch_core::AgentId;

use crate::commands::{create_file, CliError};
use crate::formats::{self, sig9};

pub struct EvalOptions {
    pub threshold: f64,
    pub emit_roc: Option<std::path::PathBuf>,
}

pub fn run(
    scores_input: impl BufRead,
    labels_input: impl BufRead,
    out: &mut impl Write,
    options: &EvalOptions,
) -> Result<(), CliError> {
    let score_rows = formats::parse_scores(scores_input)?;
    let label_rows = formats::parse_labels(labels_input)?;

    let mut labels: BTreeMap<(u64, String), bool> = BTreeMap::new();
    for (frame, agent, label) in label_rows {
        if labels.insert((frame, agent.clone()), label).is_some() {
            return Err(CliError::Input(format!(
                "duplicate label for frame {frame}, agent {agent}"
            )));
        }
    }

    let mut scores: BTreeMap<(u64, String), f64> = BTreeMap::new();
    let mut unmatched: Vec<(u64, String)> = Vec::new();
    for row in score_rows {
        let key = (row.frame, row.agent_id);
        if !labels.contains_key(&key) {
            unmatched.push(key);
            continue;
        }
        // A verbose detect stream restates a flagged agent's score in its
        // event record; an exact repeat is the same fact, not a conflict.
        if let Some(prev) = scores.insert(key.clone(), row.score) {
            if prev != row.score {
                return Err(CliError::Input(format!(
                    "conflicting scores for frame {}, agent {}: {} vs {}",
                    key.0,
                    key.1,
                    sig9(prev),
                    sig9(row.score)
                )));
            }
        }
    }
    if !unmatched.is_empty() {
        let shown: Vec<String> = unmatched
            .iter()
            .take(10)
            .map(|(f, a)| format!("({f}, {a})"))
            .collect();
        return Err(CliError::Input(format!(
            "{} scored keys have no label, first {}: {}",
            unmatched.len(),
            shown.len(),
            shown.join(", ")
        )));
    }

    let samples: Vec<LabeledScore> = labels
        .iter()
        .map(|((frame, agent), &label)| LabeledScore {
            frame: *frame,
            agent: AgentId::new(agent.as_str()),
            score: scores.get(&(*frame, agent.clone())).copied().unwrap_or(0.0),
            label,
        })
        .collect();

    let points = roc_curve(&samples).map_err(|e| CliError::Input(e.to_string()))?;
    let area = auc(&points);
    let eer = equal_error_rate(&points);
    let accuracy = accuracy_at(&samples, options.threshold);

    writeln!(out, "samples = {}", samples.len())?;
    writeln!(out, "positives = {}", samples.iter().filter(|s| s.label).count())?;
    writeln!(out, "auc = {}", sig9(area))?;
    writeln!(out, "eer = {}", sig9(eer))?;
    writeln!(out, "threshold = {}", sig9(options.threshold))?;
    writeln!(out, "accuracy = {}", sig9(accuracy))?;
    out.flush()?;

    if let Some(path) = &options.emit_roc {
        write_roc(path, &points)?;
    }
    Ok(())
}

fn write_roc(path: &Path, points: &[crowdwatch_core::evaluation::RocPoint]) -> Result<(), CliError> {
    let mut out = create_file(path)?;
    writeln!(out, "fpr,tpr,threshold")?;
    for p in points {
        writeln!(out, "{},{},{}", sig9(p.fpr), sig9(p.tpr), sig9(p.threshold))?;
    }
    out.flush()?;
    Ok(())
}
