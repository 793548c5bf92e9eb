//! Behavioral policies: per-state distributions over the legal actions of one
//! role, stored against the canonical action ordering from `legal_actions`.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;

use crate::error::{Error, Result};
use crate::game::{
    decode_state, legal_actions, FlipItSpec, GameState, ReachableStates,
};

pub const PROB_SUM_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Attacker,
    Defender,
}

impl Role {
    pub fn name(&self) -> &'static str {
        match self {
            Role::Attacker => "attacker",
            Role::Defender => "defender",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Numerically stable softmax: `p_i = exp(lambda * (v_i - max v)) / sum`.
/// `lambda = 0` yields the uniform distribution.
pub fn softmax(values: &[f64], lambda: f64) -> Result<Vec<f64>> {
    if values.is_empty() {
        return Err(Error::EmptyValues);
    }
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidParam(format!(
            "softmax lambda must be finite and >= 0, got {lambda}"
        )));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParam("softmax over non-finite values".into()));
    }
    let mut out = vec![0.0; values.len()];
    softmax_into(&mut out, values, lambda);
    Ok(out)
}

/// Allocation-free softmax for hot loops; caller guarantees finite inputs and
/// `lambda >= 0`.
pub(crate) fn softmax_into(out: &mut [f64], values: &[f64], lambda: f64) {
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, v) in out.iter_mut().zip(values) {
        let e = (lambda * (v - max)).exp();
        *o = e;
        sum += e;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

/// Per-state distribution over legal actions for one role. Probabilities are
/// aligned with the canonical ordering returned by `legal_actions`.
#[derive(Clone, Debug, PartialEq)]
pub struct BehavioralPolicy {
    role: Role,
    map: BTreeMap<usize, Vec<f64>>,
}

impl BehavioralPolicy {
    pub fn new(role: Role) -> BehavioralPolicy {
        BehavioralPolicy {
            role,
            map: BTreeMap::new(),
        }
    }

    /// Uniform play at every reachable non-terminal state.
    pub fn uniform(spec: &FlipItSpec, role: Role) -> Result<BehavioralPolicy> {
        let reach = ReachableStates::compute(spec)?;
        let mut policy = BehavioralPolicy::new(role);
        for (round, mask) in reach.non_terminal() {
            let state = GameState::from_mask(spec, mask, round);
            let (att, def) = legal_actions(spec, &state)?;
            let n = match role {
                Role::Attacker => att.len(),
                Role::Defender => def.len(),
            };
            policy.insert(
                crate::game::state_index(spec, &state),
                vec![1.0 / n as f64; n],
            );
        }
        Ok(policy)
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn insert(&mut self, state_index: usize, probs: Vec<f64>) {
        self.map.insert(state_index, probs);
    }

    pub fn probs(&self, state_index: usize) -> Result<&[f64]> {
        self.map
            .get(&state_index)
            .map(|v| v.as_slice())
            .ok_or(Error::PolicyGap {
                role: self.role.name(),
                state_index,
            })
    }

    pub fn states(&self) -> impl Iterator<Item = (usize, &[f64])> {
        self.map.iter().map(|(k, v)| (*k, v.as_slice()))
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Checks coverage of every reachable non-terminal state and that each
    /// entry is a distribution over exactly the legal actions.
    pub fn validate_for(&self, spec: &FlipItSpec) -> Result<()> {
        let reach = ReachableStates::compute(spec)?;
        for (round, mask) in reach.non_terminal() {
            let state = GameState::from_mask(spec, mask, round);
            let idx = crate::game::state_index(spec, &state);
            let probs = self.probs(idx)?;
            let (att, def) = legal_actions(spec, &state)?;
            let n = match self.role {
                Role::Attacker => att.len(),
                Role::Defender => def.len(),
            };
            if probs.len() != n {
                return Err(Error::BadDistribution {
                    state_index: idx,
                    reason: format!("expected {n} probabilities, got {}", probs.len()),
                });
            }
            check_distribution(probs, idx)?;
        }
        Ok(())
    }

    /// Sample an action position from this policy's distribution at a state.
    pub fn sample(&self, state_index: usize, rng: &mut impl rand::Rng) -> Result<usize> {
        let probs = self.probs(state_index)?;
        Ok(sample_position(probs, rng))
    }

    /// JSON table keyed by state index, then by action label.
    pub fn to_json(&self, spec: &FlipItSpec) -> Result<String> {
        let mut states: BTreeMap<usize, BTreeMap<String, f64>> = BTreeMap::new();
        for (idx, probs) in self.states() {
            let labels = action_labels(spec, idx, self.role)?;
            if labels.len() != probs.len() {
                return Err(Error::BadDistribution {
                    state_index: idx,
                    reason: format!(
                        "policy has {} probabilities but the state has {} legal actions",
                        probs.len(),
                        labels.len()
                    ),
                });
            }
            states.insert(idx, labels.into_iter().zip(probs.iter().cloned()).collect());
        }
        let doc = PolicyDoc {
            role: self.role,
            states,
        };
        let mut s = serde_json::to_string_pretty(&doc).expect("policy serializes");
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(spec: &FlipItSpec, text: &str) -> Result<BehavioralPolicy> {
        let doc: PolicyDoc = serde_json::from_str(text).map_err(|e| Error::Schema {
            location: "policy json".into(),
            message: e.to_string(),
        })?;
        let mut policy = BehavioralPolicy::new(doc.role);
        for (idx, by_label) in doc.states {
            let labels = action_labels(spec, idx, doc.role)?;
            let mut probs = vec![0.0; labels.len()];
            for (label, p) in by_label {
                match labels.iter().position(|l| *l == label) {
                    Some(pos) => probs[pos] = p,
                    None => {
                        return Err(Error::Schema {
                            location: format!("policy state {idx}"),
                            message: format!("`{label}` is not a legal action there"),
                        })
                    }
                }
            }
            check_distribution(&probs, idx)?;
            policy.insert(idx, probs);
        }
        Ok(policy)
    }
}

fn check_distribution(probs: &[f64], state_index: usize) -> Result<()> {
    if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(Error::BadDistribution {
            state_index,
            reason: "negative or non-finite probability".into(),
        });
    }
    let sum: f64 = probs.iter().sum();
    if (sum - 1.0).abs() > PROB_SUM_TOL {
        return Err(Error::BadDistribution {
            state_index,
            reason: format!("probabilities sum to {sum}"),
        });
    }
    Ok(())
}

/// Inverse-CDF sampling; the final position absorbs rounding slack.
pub(crate) fn sample_position(probs: &[f64], rng: &mut impl rand::Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// Labels of the legal actions of `role` at a state, canonical order.
pub fn action_labels(spec: &FlipItSpec, state_index: usize, role: Role) -> Result<Vec<String>> {
    let state = decode_state(spec, state_index)?;
    let (att, def) = legal_actions(spec, &state)?;
    Ok(match role {
        Role::Attacker => att.iter().map(|a| a.to_string()).collect(),
        Role::Defender => def.iter().map(|d| d.to_string()).collect(),
    })
}

#[derive(Serialize, Deserialize)]
struct PolicyDoc {
    role: Role,
    states: BTreeMap<usize, BTreeMap<String, f64>>,
}
