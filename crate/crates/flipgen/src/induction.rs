//! Backward induction over the reachable state space: per-state action values
//! for one role against a fixed opponent policy, with pluggable response
//! rules (exact argmax or quantal).

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::game::{pack_index, Engine, FlipItSpec, ReachableStates};
use crate::policy::{softmax_into, BehavioralPolicy, Role};

/// Relative tolerance used when grouping near-tied action values.
pub(crate) const TIE_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug)]
pub(crate) enum TieBreak {
    LowestIndex,
    Uniform,
}

#[derive(Clone, Copy, Debug)]
pub(crate) enum ResponseRule {
    BestResponse(TieBreak),
    Quantal(f64),
}

pub(crate) struct BackwardResult {
    pub q: BTreeMap<usize, Vec<f64>>,
    pub policy: BehavioralPolicy,
    pub initial_value: f64,
}

/// Exact action values and response for `role` against `opponent`, where the
/// continuation at later rounds follows the response rule itself.
pub(crate) fn respond(
    spec: &FlipItSpec,
    role: Role,
    opponent: &BehavioralPolicy,
    rule: ResponseRule,
) -> Result<BackwardResult> {
    backward(spec, role, opponent, |q, probs| apply_rule(rule, q, probs))
}

/// Exact action values for `role` against `opponent` when future own play
/// follows the supplied continuation policy instead of a response rule.
pub(crate) fn action_values_vs(
    spec: &FlipItSpec,
    role: Role,
    opponent: &BehavioralPolicy,
    continuation: &BehavioralPolicy,
) -> Result<BackwardResult> {
    let mut out = backward_with_policy(spec, role, opponent, |idx, q, probs| {
        let cont = continuation.probs(idx)?;
        if cont.len() != q.len() {
            return Err(Error::BadDistribution {
                state_index: idx,
                reason: format!(
                    "continuation has {} probabilities for {} actions",
                    cont.len(),
                    q.len()
                ),
            });
        }
        probs.copy_from_slice(cont);
        Ok(())
    })?;
    out.policy = continuation.clone();
    Ok(out)
}

fn backward(
    spec: &FlipItSpec,
    role: Role,
    opponent: &BehavioralPolicy,
    mut rule: impl FnMut(&[f64], &mut [f64]),
) -> Result<BackwardResult> {
    backward_with_policy(spec, role, opponent, |_, q, probs| {
        rule(q, probs);
        Ok(())
    })
}

fn backward_with_policy(
    spec: &FlipItSpec,
    role: Role,
    opponent: &BehavioralPolicy,
    mut choose: impl FnMut(usize, &[f64], &mut [f64]) -> Result<()>,
) -> Result<BackwardResult> {
    crate::game::check_valid_allowing_zero_rounds(spec)?;
    let eng = Engine::new(spec);
    let reach = ReachableStates::compute(spec)?;
    let rounds = spec.rounds;

    // values[t][i] is the responder's value of reach.masks(t)[i]
    let mut values: Vec<Vec<f64>> = (0..=rounds)
        .map(|t| vec![0.0; reach.masks(t).len()])
        .collect();
    let mut q_table: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    let mut policy = BehavioralPolicy::new(role);

    for t in (0..rounds).rev() {
        let masks = reach.masks(t);
        for (mi, &mask) in masks.iter().enumerate() {
            let idx = pack_index(spec, mask, t);
            let att = eng.attacker_actions(mask);
            let def = eng.defender_actions();
            let (own_n, opp_n) = match role {
                Role::Attacker => (att.len(), def.len()),
                Role::Defender => (def.len(), att.len()),
            };
            let opp_probs = opponent.probs(idx)?;
            if opp_probs.len() != opp_n {
                return Err(Error::BadDistribution {
                    state_index: idx,
                    reason: format!(
                        "opponent policy has {} probabilities for {} actions",
                        opp_probs.len(),
                        opp_n
                    ),
                });
            }
            let mut q = vec![0.0; own_n];
            for (own_i, qv) in q.iter_mut().enumerate() {
                let mut acc = 0.0;
                for (opp_i, &p) in opp_probs.iter().enumerate() {
                    if p == 0.0 {
                        continue;
                    }
                    let (ai, di) = match role {
                        Role::Attacker => (own_i, opp_i),
                        Role::Defender => (opp_i, own_i),
                    };
                    let raw = eng.step(mask, att[ai], def[di]);
                    let att_reward = raw.gain - raw.cost;
                    let reward = match role {
                        Role::Attacker => att_reward,
                        Role::Defender => -att_reward,
                    };
                    let next = reach.position(t + 1, raw.next_mask).ok_or(
                        Error::StateIndexOutOfRange {
                            index: pack_index(spec, raw.next_mask, t + 1),
                            size: crate::game::state_space_size(spec),
                        },
                    )?;
                    acc += p * (reward + values[t + 1][next]);
                }
                *qv = acc;
            }
            let mut probs = vec![0.0; own_n];
            choose(idx, &q, &mut probs)?;
            values[t][mi] = q.iter().zip(&probs).map(|(a, b)| a * b).sum();
            q_table.insert(idx, q);
            policy.insert(idx, probs);
        }
    }

    let initial_mask = crate::game::ownership_to_mask(&spec.default_ownership());
    let initial_value = match reach.position(0, initial_mask) {
        Some(i) => values[0][i],
        None => 0.0,
    };
    Ok(BackwardResult {
        q: q_table,
        policy,
        initial_value,
    })
}

pub(crate) fn apply_rule(rule: ResponseRule, q: &[f64], probs: &mut [f64]) {
    match rule {
        ResponseRule::BestResponse(TieBreak::LowestIndex) => {
            let best = argmax_lowest(q);
            probs.fill(0.0);
            probs[best] = 1.0;
        }
        ResponseRule::BestResponse(TieBreak::Uniform) => {
            let max = q.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let tol = TIE_TOL * max.abs().max(1.0);
            let tied: Vec<usize> = (0..q.len()).filter(|&i| q[i] >= max - tol).collect();
            probs.fill(0.0);
            for &i in &tied {
                probs[i] = 1.0 / tied.len() as f64;
            }
        }
        ResponseRule::Quantal(lambda) => softmax_into(probs, q, lambda),
    }
}

/// First index attaining the maximum (strict comparison).
pub(crate) fn argmax_lowest(q: &[f64]) -> usize {
    let mut best = 0;
    for i in 1..q.len() {
        if q[i] > q[best] {
            best = i;
        }
    }
    best
}
