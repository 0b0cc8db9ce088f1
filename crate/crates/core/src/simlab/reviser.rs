use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::narrative::{Claim, TemplatedNarrative};
use super::SimError;
use crate::evaluator::FAITHFUL_SENTENCE;
use crate::model::{Sign, TruthEntry};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ReviserPolicy {
    Compliant,
    Partial { p: f64 },
    Stubborn,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Instruction {
    Move { feature: String, rank: usize },
    Sign { feature: String, to: Sign },
    Value { feature: String, value: f64 },
    Add { feature: String, rank: usize, sign: Sign, value: f64 },
    Remove { feature: String },
}

impl Instruction {
    pub fn feature(&self) -> &str {
        match self {
            Instruction::Move { feature, .. }
            | Instruction::Sign { feature, .. }
            | Instruction::Value { feature, .. }
            | Instruction::Add { feature, .. }
            | Instruction::Remove { feature } => feature,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RevisionOutcome {
    pub narrative: String,
    pub applied: Vec<Instruction>,
    pub skipped: Vec<Instruction>,
    pub warnings: Vec<String>,
}

struct Patterns {
    mv: Regex,
    sign: Regex,
    value: Regex,
    add: Regex,
    remove: Regex,
    eval_errors: Regex,
    eval_gone: Regex,
}

fn patterns() -> &'static Patterns {
    static P: OnceLock<Patterns> = OnceLock::new();
    P.get_or_init(|| {
        let re = |s: &str| Regex::new(s).expect("valid regex");
        Patterns {
            mv: re(r"^Move the description of feature '(.+)' so it is presented as the \S+ most important feature \(rank (\d+) in the SHAP table\)\.$"),
            sign: re(r"^Change the stated influence of feature '(.+)' from (positive|negative) to (positive|negative)\.$"),
            value: re(r"^Change the stated value of feature '(.+)' to (\S+)\.$"),
            add: re(r"^Add a description of feature '(.+)' \(rank (\d+), (positive|negative) influence, value (\S+)\)\.$"),
            remove: re(r"^Remove the description of feature '(.+)'; .*$"),
            eval_errors: re(r"^Feature (.+) contains \(an\) errors in \[(.*)\] value\.$"),
            eval_gone: re(r"^Feature (.+) (?:does not exist in the SHAP table|is not among the \d+ most important features in the SHAP table)\.$"),
        }
    })
}

fn sign_of(word: &str) -> Sign {
    if word == "negative" {
        Sign::Negative
    } else {
        Sign::Positive
    }
}

/// Reads critic or evaluator feedback into instructions. Evaluator lines only name
/// the faulty fields, so they need the ground truth to become instructions.
pub fn parse_instructions(
    feedback: &str,
    present: &[&str],
    truth: Option<&[TruthEntry]>,
) -> (Vec<Instruction>, Vec<String>) {
    let p = patterns();
    let mut out = Vec::new();
    let mut warnings = Vec::new();
    for line in feedback.lines().map(str::trim).filter(|l| !l.is_empty()) {
        if line == FAITHFUL_SENTENCE {
            continue;
        }
        if let Some(c) = p.mv.captures(line) {
            out.push(Instruction::Move {
                feature: c[1].into(),
                rank: c[2].parse().expect("digits"),
            });
        } else if let Some(c) = p.sign.captures(line) {
            out.push(Instruction::Sign {
                feature: c[1].into(),
                to: sign_of(&c[3]),
            });
        } else if let Some(c) = p.value.captures(line).filter(|c| c[2].parse::<f64>().is_ok()) {
            out.push(Instruction::Value {
                feature: c[1].into(),
                value: c[2].parse().expect("checked"),
            });
        } else if let Some(c) = p.add.captures(line).filter(|c| c[4].parse::<f64>().is_ok()) {
            out.push(Instruction::Add {
                feature: c[1].into(),
                rank: c[2].parse().expect("digits"),
                sign: sign_of(&c[3]),
                value: c[4].parse().expect("checked"),
            });
        } else if let Some(c) = p.remove.captures(line) {
            out.push(Instruction::Remove { feature: c[1].into() });
        } else if let Some(c) = p.eval_gone.captures(line) {
            out.push(Instruction::Remove { feature: c[1].into() });
        } else if let Some(c) = p.eval_errors.captures(line) {
            let name = &c[1];
            let Some(t) = truth.and_then(|t| t.iter().find(|t| t.feature_name == name)) else {
                warnings.push(format!("no ground truth for `{line}`"));
                continue;
            };
            if !present.contains(&name) {
                out.push(Instruction::Add {
                    feature: name.into(),
                    rank: t.rank,
                    sign: t.sign,
                    value: t.value,
                });
                continue;
            }
            let fields = &c[2];
            if fields.contains("'rank'") {
                out.push(Instruction::Move {
                    feature: name.into(),
                    rank: t.rank,
                });
            }
            if fields.contains("'sign'") {
                out.push(Instruction::Sign {
                    feature: name.into(),
                    to: t.sign,
                });
            }
            if fields.contains("'value'") {
                out.push(Instruction::Value {
                    feature: name.into(),
                    value: t.value,
                });
            }
        } else {
            warnings.push(format!("unparseable instruction skipped: `{line}`"));
        }
    }
    (out, warnings)
}

pub fn rng_for(seed: u64, narrative: &str) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(narrative.as_bytes());
    let digest = h.finalize();
    ChaCha8Rng::seed_from_u64(u64::from_le_bytes(digest[..8].try_into().expect("8 bytes")))
}

/// Applies the feedback's instructions to a templated narrative under `policy`.
///
/// Moved and added features take their target positions; all other features keep
/// their relative order in the remaining positions.
pub fn mock_reviser(
    last_narrative: &str,
    feedback: &str,
    policy: ReviserPolicy,
    seed: u64,
    truth: Option<&[TruthEntry]>,
) -> Result<RevisionOutcome, SimError> {
    let mut doc = TemplatedNarrative::parse(last_narrative)?;
    let present: Vec<&str> = doc.claims.iter().map(|c| c.feature_name.as_str()).collect();
    let (instructions, mut warnings) = parse_instructions(feedback, &present, truth);
    for w in &warnings {
        tracing::warn!("{w}");
    }
    let mut rng = rng_for(seed, last_narrative);
    let (applied, skipped): (Vec<Instruction>, Vec<Instruction>) =
        instructions.into_iter().partition(|_| match policy {
            ReviserPolicy::Compliant => true,
            ReviserPolicy::Stubborn => false,
            ReviserPolicy::Partial { p } => rng.gen_bool(p.clamp(0.0, 1.0)),
        });
    if applied.is_empty() {
        return Ok(RevisionOutcome {
            narrative: last_narrative.to_string(),
            applied,
            skipped,
            warnings,
        });
    }

    let removed: Vec<&str> = applied
        .iter()
        .filter_map(|i| match i {
            Instruction::Remove { feature } => Some(feature.as_str()),
            _ => None,
        })
        .collect();
    doc.claims.retain(|c| !removed.contains(&c.feature_name.as_str()));

    let mut fixed: Vec<(usize, String)> = Vec::new();
    for ins in &applied {
        let find = |claims: &mut Vec<Claim>, name: &str| claims.iter().position(|c| c.feature_name == name);
        match ins {
            Instruction::Remove { .. } => {}
            Instruction::Move { feature, rank } => {
                if find(&mut doc.claims, feature).is_some() {
                    fixed.retain(|(_, f)| f != feature);
                    fixed.push((*rank, feature.clone()));
                } else {
                    warnings.push(format!("cannot move `{feature}`: not in the narrative"));
                }
            }
            Instruction::Sign { feature, to } => match find(&mut doc.claims, feature) {
                Some(i) => doc.claims[i].sign = *to,
                None => warnings.push(format!("cannot change the sign of `{feature}`: not in the narrative")),
            },
            Instruction::Value { feature, value } => match find(&mut doc.claims, feature) {
                Some(i) => doc.claims[i].value = Some(*value),
                None => warnings.push(format!("cannot change the value of `{feature}`: not in the narrative")),
            },
            Instruction::Add { feature, rank, sign, value } => {
                let claim = Claim {
                    feature_name: feature.clone(),
                    sign: *sign,
                    value: Some(*value),
                };
                match find(&mut doc.claims, feature) {
                    Some(i) => doc.claims[i] = claim,
                    None => doc.claims.push(claim),
                }
                fixed.retain(|(_, f)| f != feature);
                fixed.push((*rank, feature.clone()));
            }
        }
    }

    let total = doc.claims.len();
    let mut slots: Vec<Option<Claim>> = vec![None; total];
    fixed.sort();
    let mut taken = Vec::new();
    for (rank, name) in &fixed {
        let i = doc.claims.iter().position(|c| &c.feature_name == name).expect("present");
        let want = (*rank).min(total - 1);
        let slot = (want..total)
            .chain((0..want).rev())
            .find(|&s| slots[s].is_none())
            .expect("a free slot exists");
        slots[slot] = Some(doc.claims[i].clone());
        taken.push(name.clone());
    }
    let mut rest = doc.claims.iter().filter(|c| !taken.contains(&c.feature_name));
    for slot in slots.iter_mut().filter(|s| s.is_none()) {
        *slot = rest.next().cloned();
    }
    doc.claims = slots.into_iter().map(|s| s.expect("all slots filled")).collect();

    Ok(RevisionOutcome {
        narrative: doc.render(),
        applied,
        skipped,
        warnings,
    })
}
