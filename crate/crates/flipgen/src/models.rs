//! Behavioral attacker models over the exact game tree: quantal response,
//! level-k, and quantal level-k, all computed by backward induction against a
//! supplied defender, plus a serializable description of any model (the
//! learner included) that can be frozen into configs and reports.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::game::FlipItSpec;
use crate::induction::{action_values_vs, respond, ResponseRule, TieBreak};
use crate::policy::{BehavioralPolicy, Role};
use crate::srdq::{self, SRDQParams};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QRParams {
    pub lambda: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LKParams {
    pub k: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QLKParams {
    pub k: usize,
    /// Shared across all levels and both roles.
    pub lambda: f64,
}

fn check_lambda(lambda: f64) -> Result<()> {
    if lambda >= 0.0 && lambda.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParam(format!(
            "lambda must be finite and >= 0, got {lambda}"
        )))
    }
}

fn check_level(k: usize) -> Result<()> {
    if k >= 1 {
        Ok(())
    } else {
        Err(Error::InvalidParam("level k must be >= 1".into()))
    }
}

/// Exact attacker action values against a defender, with future own play
/// following `continuation`.
pub struct ActionValueTable {
    pub q: BTreeMap<usize, Vec<f64>>,
    /// Value of the initial state under the continuation policy.
    pub initial_value: f64,
}

pub fn action_values(
    spec: &FlipItSpec,
    defender_policy: &BehavioralPolicy,
    continuation: &BehavioralPolicy,
) -> Result<ActionValueTable> {
    check_roles(defender_policy, continuation)?;
    let res = action_values_vs(spec, Role::Attacker, defender_policy, continuation)?;
    Ok(ActionValueTable {
        q: res.q,
        initial_value: res.initial_value,
    })
}

fn check_roles(defender: &BehavioralPolicy, attacker: &BehavioralPolicy) -> Result<()> {
    if defender.role() != Role::Defender {
        return Err(Error::InvalidParam(
            "expected a defender policy for the opponent".into(),
        ));
    }
    if attacker.role() != Role::Attacker {
        return Err(Error::InvalidParam(
            "expected an attacker policy for the continuation".into(),
        ));
    }
    Ok(())
}

/// Quantal response: softmax(lambda) over exact action values at every state,
/// with the model's own later play as continuation.
pub fn qr_policy(
    spec: &FlipItSpec,
    defender_policy: &BehavioralPolicy,
    params: &QRParams,
) -> Result<BehavioralPolicy> {
    check_lambda(params.lambda)?;
    if defender_policy.role() != Role::Defender {
        return Err(Error::InvalidParam(
            "qr responds to a defender policy".into(),
        ));
    }
    Ok(respond(
        spec,
        Role::Attacker,
        defender_policy,
        ResponseRule::Quantal(params.lambda),
    )?
    .policy)
}

/// Level-k: alternating exact best responses anchored at uniform level-0 play,
/// ties split uniformly. Returns the level-k attacker.
pub fn lk_policy(
    spec: &FlipItSpec,
    params: &LKParams,
    anchor_defender: &BehavioralPolicy,
) -> Result<BehavioralPolicy> {
    check_level(params.k)?;
    hierarchy(
        spec,
        params.k,
        anchor_defender,
        ResponseRule::BestResponse(TieBreak::Uniform),
    )
}

/// Quantal level-k: the level-k hierarchy with softmax(lambda) responses for
/// both roles.
pub fn qlk_policy(
    spec: &FlipItSpec,
    params: &QLKParams,
    anchor_defender: &BehavioralPolicy,
) -> Result<BehavioralPolicy> {
    check_level(params.k)?;
    check_lambda(params.lambda)?;
    hierarchy(spec, params.k, anchor_defender, ResponseRule::Quantal(params.lambda))
}

/// Builds the alternating chain ending at the level-k attacker. Level j plays
/// the attacker iff j has k's parity; the level-0 anchor is the supplied
/// defender when k is odd, uniform attacker play when k is even.
fn hierarchy(
    spec: &FlipItSpec,
    k: usize,
    anchor_defender: &BehavioralPolicy,
    rule: ResponseRule,
) -> Result<BehavioralPolicy> {
    if anchor_defender.role() != Role::Defender {
        return Err(Error::InvalidParam(
            "hierarchy anchor must be a defender policy".into(),
        ));
    }
    let mut current = if k % 2 == 1 {
        anchor_defender.clone()
    } else {
        BehavioralPolicy::uniform(spec, Role::Attacker)?
    };
    for level in 1..=k {
        let role = if level % 2 == k % 2 {
            Role::Attacker
        } else {
            Role::Defender
        };
        current = respond(spec, role, &current, rule)?.policy;
    }
    Ok(current)
}

fn default_alpha() -> f64 {
    srdq::DEFAULT_ALPHA
}

fn default_episodes() -> usize {
    srdq::DEFAULT_EPISODES
}

fn default_seed() -> u64 {
    42
}

fn default_n_seeds() -> usize {
    10
}

/// A frozen model description: family plus parameters, as written in configs
/// and reports. The learner carries its training budget and a seed set size;
/// seeds `seed..seed + n_seeds` give one trained policy each.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum ModelSpec {
    Qr {
        lambda: f64,
    },
    Lk {
        k: usize,
    },
    Qlk {
        k: usize,
        lambda: f64,
    },
    Srdq {
        gamma: f64,
        #[serde(default = "default_alpha")]
        alpha: f64,
        rho: f64,
        lambda: f64,
        #[serde(default = "default_episodes")]
        episodes: usize,
        #[serde(default = "default_seed")]
        seed: u64,
        #[serde(default = "default_n_seeds")]
        n_seeds: usize,
    },
}

impl ModelSpec {
    pub fn family(&self) -> &'static str {
        match self {
            ModelSpec::Qr { .. } => "qr",
            ModelSpec::Lk { .. } => "lk",
            ModelSpec::Qlk { .. } => "qlk",
            ModelSpec::Srdq { .. } => "srdq",
        }
    }

    /// Short identifier used in reports, e.g. `qr(lambda=2)`.
    pub fn id(&self) -> String {
        match self {
            ModelSpec::Qr { lambda } => format!("qr(lambda={lambda})"),
            ModelSpec::Lk { k } => format!("lk(k={k})"),
            ModelSpec::Qlk { k, lambda } => format!("qlk(k={k},lambda={lambda})"),
            ModelSpec::Srdq {
                gamma, rho, lambda, ..
            } => format!("srdq(gamma={gamma},rho={rho},lambda={lambda})"),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            ModelSpec::Qr { lambda } => check_lambda(lambda),
            ModelSpec::Lk { k } => check_level(k),
            ModelSpec::Qlk { k, lambda } => {
                check_level(k)?;
                check_lambda(lambda)
            }
            ModelSpec::Srdq {
                gamma,
                alpha,
                rho,
                lambda,
                episodes,
                seed,
                n_seeds,
            } => {
                SRDQParams {
                    gamma,
                    alpha,
                    rho,
                    lambda,
                    episodes,
                    seed,
                }
                .validate()?;
                if n_seeds < 1 {
                    return Err(Error::InvalidParam("n_seeds must be >= 1".into()));
                }
                Ok(())
            }
        }
    }

    /// Derives the model's attacker policy (or one per seed for the learner)
    /// against `defender`, which serves as response target, hierarchy anchor,
    /// or training opponent depending on the family.
    pub fn attacker_policies(
        &self,
        spec: &FlipItSpec,
        defender: &BehavioralPolicy,
    ) -> Result<Vec<BehavioralPolicy>> {
        self.validate()?;
        match *self {
            ModelSpec::Qr { lambda } => {
                Ok(vec![qr_policy(spec, defender, &QRParams { lambda })?])
            }
            ModelSpec::Lk { k } => Ok(vec![lk_policy(spec, &LKParams { k }, defender)?]),
            ModelSpec::Qlk { k, lambda } => {
                Ok(vec![qlk_policy(spec, &QLKParams { k, lambda }, defender)?])
            }
            ModelSpec::Srdq {
                gamma,
                alpha,
                rho,
                lambda,
                episodes,
                seed,
                n_seeds,
            } => (0..n_seeds as u64)
                .into_par_iter()
                .map(|i| {
                    let params = SRDQParams {
                        gamma,
                        alpha,
                        rho,
                        lambda,
                        episodes,
                        seed: seed + i,
                    };
                    let qtable = srdq::train(spec, defender, &params)?;
                    srdq::policy_from_qtable(&qtable, lambda)
                })
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::{initial_state, state_index, Variant};

    fn one_node(rounds: usize) -> FlipItSpec {
        FlipItSpec {
            variant: Variant::Original,
            n_nodes: 1,
            rounds,
            node_rewards: vec![4.0],
            node_costs: vec![2.0],
            edge_costs: vec![],
            threshold: 0.0,
            initial_ownership: vec![],
        }
    }

    fn twin_nodes() -> FlipItSpec {
        FlipItSpec {
            variant: Variant::Original,
            n_nodes: 2,
            rounds: 1,
            node_rewards: vec![6.0, 6.0],
            node_costs: vec![1.0, 1.0],
            edge_costs: vec![],
            threshold: 0.0,
            initial_ownership: vec![],
        }
    }

    fn uniform_def(spec: &FlipItSpec) -> BehavioralPolicy {
        BehavioralPolicy::uniform(spec, Role::Defender).unwrap()
    }

    #[test]
    fn action_values_one_round_blocked() {
        // defender's only action is Defend(0): attack is blocked, worth -2
        let spec = one_node(1);
        let def = uniform_def(&spec);
        let att = BehavioralPolicy::uniform(&spec, Role::Attacker).unwrap();
        let table = action_values(&spec, &def, &att).unwrap();
        let s0 = state_index(&spec, &initial_state(&spec).unwrap());
        let q = &table.q[&s0];
        assert_eq!(q[0], 0.0); // pass
        assert_eq!(q[1], -2.0); // attack:0, blocked
        assert_eq!(table.initial_value, -1.0);
    }

    #[test]
    fn action_values_zero_horizon() {
        let mut spec = one_node(1);
        spec.rounds = 0;
        let def = uniform_def(&spec);
        let att = BehavioralPolicy::uniform(&spec, Role::Attacker).unwrap();
        let table = action_values(&spec, &def, &att).unwrap();
        assert!(table.q.is_empty());
        assert_eq!(table.initial_value, 0.0);
    }

    #[test]
    fn action_values_two_round_uniform() {
        // per round the uniform attacker loses 1 in expectation; two rounds
        let spec = one_node(2);
        let def = uniform_def(&spec);
        let att = BehavioralPolicy::uniform(&spec, Role::Attacker).unwrap();
        let table = action_values(&spec, &def, &att).unwrap();
        assert_eq!(table.initial_value, -2.0);
    }

    #[test]
    fn qr_lambda_zero_is_uniform() {
        let spec = FlipItSpec::original_five_node();
        let def = uniform_def(&spec);
        let policy = qr_policy(&spec, &def, &QRParams { lambda: 0.0 }).unwrap();
        policy.validate_for(&spec).unwrap();
        for (_, probs) in policy.states() {
            for p in probs {
                assert_eq!(*p, 1.0 / probs.len() as f64);
            }
        }
    }

    #[test]
    fn qr_high_lambda_prefers_pass() {
        let spec = one_node(1);
        let def = uniform_def(&spec);
        let policy = qr_policy(&spec, &def, &QRParams { lambda: 1e6 }).unwrap();
        let s0 = state_index(&spec, &initial_state(&spec).unwrap());
        assert!(policy.probs(s0).unwrap()[0] >= 1.0 - 1e-6);
    }

    #[test]
    fn qr_utility_monotone_in_lambda() {
        let spec = one_node(2);
        let def = uniform_def(&spec);
        let mut last = f64::NEG_INFINITY;
        for lambda in [0.0, 1.0, 10.0] {
            let res = respond(
                &spec,
                Role::Attacker,
                &def,
                ResponseRule::Quantal(lambda),
            )
            .unwrap();
            assert!(
                res.initial_value >= last - 1e-12,
                "utility dropped at lambda {lambda}"
            );
            last = res.initial_value;
        }
    }

    #[test]
    fn lk_level_one_passes() {
        let spec = one_node(1);
        let def = uniform_def(&spec);
        let policy = lk_policy(&spec, &LKParams { k: 1 }, &def).unwrap();
        let s0 = state_index(&spec, &initial_state(&spec).unwrap());
        assert_eq!(policy.probs(s0).unwrap(), &[1.0, 0.0]);
    }

    #[test]
    fn lk_splits_exact_ties() {
        // identical nodes: attacking either nets 5 against the defended-other
        // half of the time, so the argmax set is both attacks
        let spec = twin_nodes();
        let def = uniform_def(&spec);
        let policy = lk_policy(&spec, &LKParams { k: 1 }, &def).unwrap();
        let s0 = state_index(&spec, &initial_state(&spec).unwrap());
        let probs = policy.probs(s0).unwrap();
        assert_eq!(probs, &[0.0, 0.5, 0.5]);
    }

    #[test]
    fn lk_levels_validate_on_original_game() {
        let spec = FlipItSpec::original_five_node();
        let def = uniform_def(&spec);
        for k in 1..=3 {
            let policy = lk_policy(&spec, &LKParams { k }, &def).unwrap();
            policy.validate_for(&spec).unwrap();
        }
    }

    #[test]
    fn qlk_level_one_is_qr() {
        let spec = FlipItSpec::original_five_node();
        let def = uniform_def(&spec);
        let lambda = 0.7;
        let qr = qr_policy(&spec, &def, &QRParams { lambda }).unwrap();
        let qlk = qlk_policy(&spec, &QLKParams { k: 1, lambda }, &def).unwrap();
        for (idx, probs) in qr.states() {
            let other = qlk.probs(idx).unwrap();
            for (a, b) in probs.iter().zip(other) {
                assert!((a - b).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn qlk_high_lambda_approaches_lk() {
        // unique argmax everywhere on the 1-node game
        let spec = one_node(2);
        let def = uniform_def(&spec);
        for k in [1, 2] {
            let lk = lk_policy(&spec, &LKParams { k }, &def).unwrap();
            let qlk =
                qlk_policy(&spec, &QLKParams { k, lambda: 1e6 }, &def).unwrap();
            for (idx, probs) in lk.states() {
                let other = qlk.probs(idx).unwrap();
                let tv: f64 = probs
                    .iter()
                    .zip(other)
                    .map(|(a, b)| (a - b).abs())
                    .sum::<f64>()
                    / 2.0;
                assert!(tv <= 1e-6, "k {k} state {idx} tv {tv}");
            }
        }
    }

    #[test]
    fn qlk_lambda_zero_is_uniform() {
        let spec = twin_nodes();
        let def = uniform_def(&spec);
        for k in [1, 2, 3] {
            let policy = qlk_policy(&spec, &QLKParams { k, lambda: 0.0 }, &def).unwrap();
            for (_, probs) in policy.states() {
                for p in probs {
                    assert_eq!(*p, 1.0 / probs.len() as f64);
                }
            }
        }
    }

    #[test]
    fn model_spec_serde_fills_srdq_defaults() {
        let m: ModelSpec =
            serde_json::from_str(r#"{"family":"srdq","gamma":0.5,"rho":0.2,"lambda":3.0}"#)
                .unwrap();
        match m {
            ModelSpec::Srdq {
                alpha,
                episodes,
                seed,
                n_seeds,
                ..
            } => {
                assert_eq!(alpha, 1e-3);
                assert_eq!(episodes, 2000);
                assert_eq!(seed, 42);
                assert_eq!(n_seeds, 10);
            }
            _ => panic!("wrong family"),
        }
        let qr: ModelSpec = serde_json::from_str(r#"{"family":"qr","lambda":2.0}"#).unwrap();
        assert_eq!(qr, ModelSpec::Qr { lambda: 2.0 });
        assert_eq!(qr.id(), "qr(lambda=2)");
        let text = serde_json::to_string(&qr).unwrap();
        assert_eq!(serde_json::from_str::<ModelSpec>(&text).unwrap(), qr);
    }

    #[test]
    fn model_spec_validation() {
        assert!(ModelSpec::Qr { lambda: -1.0 }.validate().is_err());
        assert!(ModelSpec::Lk { k: 0 }.validate().is_err());
        assert!(ModelSpec::Qlk { k: 2, lambda: 1.0 }.validate().is_ok());
    }

    #[test]
    fn model_spec_policy_counts() {
        let spec = one_node(1);
        let def = uniform_def(&spec);
        let qr = ModelSpec::Qr { lambda: 1.0 };
        assert_eq!(qr.attacker_policies(&spec, &def).unwrap().len(), 1);
        let srdq = ModelSpec::Srdq {
            gamma: 0.5,
            alpha: 1e-2,
            rho: 0.5,
            lambda: 1.0,
            episodes: 50,
            seed: 1,
            n_seeds: 3,
        };
        let policies = srdq.attacker_policies(&spec, &def).unwrap();
        assert_eq!(policies.len(), 3);
        for p in &policies {
            p.validate_for(&spec).unwrap();
        }
    }
}
