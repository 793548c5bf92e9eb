//! Exact evaluation machinery: forward-DP expected utilities, a Monte Carlo
//! cross-check, best responses for both roles, the best-response utility
//! metric, and parameter sweeps over model traits.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::game::{
    check_valid_allowing_zero_rounds, ownership_to_mask, pack_index, Engine, FlipItSpec,
    ReachableStates,
};
use crate::induction::{respond, ResponseRule, TieBreak};
use crate::models::ModelSpec;
use crate::policy::{BehavioralPolicy, Role};

/// Exact expected attacker/defender utility of a policy pair, by forward
/// dynamic programming over per-round reach probabilities. A zero-round
/// horizon is worth exactly 0.
pub fn expected_utility_exact(
    spec: &FlipItSpec,
    att: &BehavioralPolicy,
    def: &BehavioralPolicy,
) -> Result<(f64, f64)> {
    check_pair(att, def)?;
    check_valid_allowing_zero_rounds(spec)?;
    let eng = Engine::new(spec);
    let reach = ReachableStates::compute(spec)?;
    let def_actions = eng.defender_actions();
    let mut u = 0.0;
    let mut probs = vec![1.0];
    for t in 0..spec.rounds {
        let masks = reach.masks(t);
        let next_masks = reach.masks(t + 1);
        let mut next_probs = vec![0.0; next_masks.len()];
        for (mi, &mask) in masks.iter().enumerate() {
            let p = probs[mi];
            if p == 0.0 {
                continue;
            }
            let idx = pack_index(spec, mask, t);
            let att_actions = eng.attacker_actions(mask);
            let pa = checked_probs(att, idx, att_actions.len())?;
            let pd = checked_probs(def, idx, def_actions.len())?;
            for (ai, &wa) in pa.iter().enumerate() {
                if wa == 0.0 {
                    continue;
                }
                for (di, &wd) in pd.iter().enumerate() {
                    if wd == 0.0 {
                        continue;
                    }
                    let raw = eng.step(mask, att_actions[ai], def_actions[di]);
                    let w = p * wa * wd;
                    u += w * (raw.gain - raw.cost);
                    let pos = next_masks
                        .binary_search(&raw.next_mask)
                        .expect("step stays within reachable set");
                    next_probs[pos] += w;
                }
            }
        }
        probs = next_probs;
    }
    Ok((u, -u))
}

fn check_pair(att: &BehavioralPolicy, def: &BehavioralPolicy) -> Result<()> {
    if att.role() != Role::Attacker || def.role() != Role::Defender {
        return Err(Error::InvalidParam(
            "expected an (attacker, defender) policy pair".into(),
        ));
    }
    Ok(())
}

fn checked_probs<'p>(
    policy: &'p BehavioralPolicy,
    state_index: usize,
    n: usize,
) -> Result<&'p [f64]> {
    let probs = policy.probs(state_index)?;
    if probs.len() != n {
        return Err(Error::BadDistribution {
            state_index,
            reason: format!("policy has {} probabilities for {n} actions", probs.len()),
        });
    }
    Ok(probs)
}

/// Sampled attacker return: (mean, standard error). The attacker draw precedes
/// the defender draw each step, matching the trainer's stream layout.
pub fn monte_carlo_utility(
    spec: &FlipItSpec,
    att: &BehavioralPolicy,
    def: &BehavioralPolicy,
    n_episodes: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    use rand::SeedableRng;
    if n_episodes < 1 {
        return Err(Error::InvalidParam("n_episodes must be >= 1".into()));
    }
    check_pair(att, def)?;
    check_valid_allowing_zero_rounds(spec)?;
    let eng = Engine::new(spec);
    let def_actions = eng.defender_actions();
    let initial_mask = ownership_to_mask(&spec.default_ownership());
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut sum = 0.0;
    let mut sumsq = 0.0;
    for _ in 0..n_episodes {
        let mut mask = initial_mask;
        let mut ret = 0.0;
        for t in 0..spec.rounds {
            let idx = pack_index(spec, mask, t);
            let att_actions = eng.attacker_actions(mask);
            let a = att.sample(idx, &mut rng)?;
            let d = def.sample(idx, &mut rng)?;
            let raw = eng.step(mask, att_actions[a], def_actions[d]);
            ret += raw.gain - raw.cost;
            mask = raw.next_mask;
        }
        sum += ret;
        sumsq += ret * ret;
    }
    let n = n_episodes as f64;
    let mean = sum / n;
    let var = if n_episodes > 1 {
        ((sumsq - n * mean * mean) / (n - 1.0)).max(0.0)
    } else {
        0.0
    };
    Ok((mean, (var / n).sqrt()))
}

/// Minimizing defender against a fixed attacker, by backward induction with
/// lowest-node-index tie-breaking. Returns the pure defender policy and the
/// attacker's utility under it (the best-response utility metric).
pub fn defender_best_response(
    spec: &FlipItSpec,
    att: &BehavioralPolicy,
) -> Result<(BehavioralPolicy, f64)> {
    if att.role() != Role::Attacker {
        return Err(Error::InvalidParam(
            "defender_best_response takes an attacker policy".into(),
        ));
    }
    let res = respond(
        spec,
        Role::Defender,
        att,
        ResponseRule::BestResponse(TieBreak::LowestIndex),
    )?;
    Ok((res.policy, -res.initial_value))
}

/// Maximizing attacker against a fixed defender; mirror image of
/// `defender_best_response`.
pub fn attacker_best_response(
    spec: &FlipItSpec,
    def: &BehavioralPolicy,
) -> Result<(BehavioralPolicy, f64)> {
    if def.role() != Role::Defender {
        return Err(Error::InvalidParam(
            "attacker_best_response takes a defender policy".into(),
        ));
    }
    let res = respond(
        spec,
        Role::Attacker,
        def,
        ResponseRule::BestResponse(TieBreak::LowestIndex),
    )?;
    Ok((res.policy, res.initial_value))
}

/// The two evaluation metrics for one attacker policy on one game.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub model_id: String,
    pub game_id: String,
    /// Exact expected utility against the uniform defender.
    pub utility_vs_uniform: f64,
    /// Expected utility when the defender best-responds; never exceeds
    /// `utility_vs_uniform` beyond rounding (the uniform defender is one
    /// feasible minimizer choice).
    pub br_utility: f64,
}

/// Evaluates one attacker policy: utility against the uniform defender and
/// against the best-responding defender. Identifiers are left empty.
pub fn evaluate_model(spec: &FlipItSpec, policy: &BehavioralPolicy) -> Result<MetricReport> {
    let uniform_def = BehavioralPolicy::uniform(spec, Role::Defender)?;
    let (u, _) = expected_utility_exact(spec, policy, &uniform_def)?;
    let (_, br) = defender_best_response(spec, policy)?;
    debug_assert!(br <= u + 1e-9);
    Ok(MetricReport {
        model_id: String::new(),
        game_id: String::new(),
        utility_vs_uniform: u,
        br_utility: br,
    })
}

/// Evaluates a model description against the uniform defender, averaging the
/// metrics over the learner's seed set when the family trains.
pub fn evaluate_model_spec(spec: &FlipItSpec, model: &ModelSpec) -> Result<MetricReport> {
    let uniform_def = BehavioralPolicy::uniform(spec, Role::Defender)?;
    let policies = model.attacker_policies(spec, &uniform_def)?;
    let mut u = 0.0;
    let mut br = 0.0;
    for policy in &policies {
        let report = evaluate_model(spec, policy)?;
        u += report.utility_vs_uniform;
        br += report.br_utility;
    }
    let n = policies.len() as f64;
    Ok(MetricReport {
        model_id: model.id(),
        game_id: String::new(),
        utility_vs_uniform: u / n,
        br_utility: br / n,
    })
}

/// A sweepable model trait.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepTrait {
    Gamma,
    Lambda,
    Rho,
}

impl SweepTrait {
    pub fn name(&self) -> &'static str {
        match self {
            SweepTrait::Gamma => "gamma",
            SweepTrait::Lambda => "lambda",
            SweepTrait::Rho => "rho",
        }
    }

    /// The standard grids: gamma 0 to 1 in steps of 0.1 (11 points), lambda
    /// 0.1 doubling to 12.8 (8 points), rho 0 to 1 in steps of 0.2 (6 points).
    pub fn default_schedule(&self) -> Vec<f64> {
        match self {
            SweepTrait::Gamma => (0..=10).map(|i| i as f64 / 10.0).collect(),
            SweepTrait::Lambda => {
                let mut v = Vec::with_capacity(8);
                let mut x = 0.1;
                for _ in 0..8 {
                    v.push(x);
                    x *= 2.0;
                }
                v
            }
            SweepTrait::Rho => (0..=5).map(|i| i as f64 / 5.0).collect(),
        }
    }
}

impl fmt::Display for SweepTrait {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SweepTrait {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "gamma" => Ok(SweepTrait::Gamma),
            "lambda" => Ok(SweepTrait::Lambda),
            "rho" => Ok(SweepTrait::Rho),
            other => Err(format!("unknown trait `{other}` (gamma, lambda, rho)")),
        }
    }
}

fn apply_trait(base: &ModelSpec, sweep_trait: SweepTrait, value: f64) -> Result<ModelSpec> {
    let mut m = base.clone();
    match (sweep_trait, &mut m) {
        (SweepTrait::Gamma, ModelSpec::Srdq { gamma, .. }) => *gamma = value,
        (SweepTrait::Rho, ModelSpec::Srdq { rho, .. }) => *rho = value,
        (SweepTrait::Lambda, ModelSpec::Qr { lambda }) => *lambda = value,
        (SweepTrait::Lambda, ModelSpec::Qlk { lambda, .. }) => *lambda = value,
        (SweepTrait::Lambda, ModelSpec::Srdq { lambda, .. }) => *lambda = value,
        _ => {
            return Err(Error::TraitFamilyMismatch {
                trait_name: sweep_trait.name().into(),
                family: base.family().into(),
            })
        }
    }
    Ok(m)
}

/// One trait sweep: per-value metric reports plus the max-minus-min spreads.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepResult {
    pub trait_name: SweepTrait,
    pub grid: Vec<f64>,
    pub reports: Vec<MetricReport>,
    pub spread_utility: f64,
    pub spread_br: f64,
}

impl SweepResult {
    /// CSV with the fixed header `trait,value,utility_vs_uniform,br_utility`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("trait,value,utility_vs_uniform,br_utility\n");
        for (value, report) in self.grid.iter().zip(&self.reports) {
            out.push_str(&format!(
                "{},{},{},{}\n",
                self.trait_name.name(),
                value,
                report.utility_vs_uniform,
                report.br_utility
            ));
        }
        out
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("sweep serializes");
        s.push('\n');
        s
    }
}

/// Re-derives and evaluates the model at every schedule point. Points run
/// concurrently; assembly follows the schedule order.
pub fn sweep_metrics(
    spec: &FlipItSpec,
    base: &ModelSpec,
    sweep_trait: SweepTrait,
    schedule: &[f64],
) -> Result<SweepResult> {
    if schedule.is_empty() {
        return Err(Error::InvalidParam("empty sweep schedule".into()));
    }
    // fail fast on family mismatch before spending any training time
    apply_trait(base, sweep_trait, schedule[0])?;
    let reports: Vec<MetricReport> = schedule
        .par_iter()
        .map(|&value| {
            let model = apply_trait(base, sweep_trait, value)?;
            evaluate_model_spec(spec, &model)
        })
        .collect::<Result<_>>()?;
    let spread = |f: fn(&MetricReport) -> f64| {
        let lo = reports.iter().map(f).fold(f64::INFINITY, f64::min);
        let hi = reports.iter().map(f).fold(f64::NEG_INFINITY, f64::max);
        hi - lo
    };
    Ok(SweepResult {
        trait_name: sweep_trait,
        grid: schedule.to_vec(),
        spread_utility: spread(|r| r.utility_vs_uniform),
        spread_br: spread(|r| r.br_utility),
        reports,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::Variant;
    use crate::models::{qr_policy, QRParams};

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

    fn two_node() -> FlipItSpec {
        FlipItSpec {
            variant: Variant::Original,
            n_nodes: 2,
            rounds: 2,
            node_rewards: vec![5.0, 3.0],
            node_costs: vec![1.0, 2.0],
            edge_costs: vec![],
            threshold: 0.0,
            initial_ownership: vec![],
        }
    }

    fn uniform_pair(spec: &FlipItSpec) -> (BehavioralPolicy, BehavioralPolicy) {
        (
            BehavioralPolicy::uniform(spec, Role::Attacker).unwrap(),
            BehavioralPolicy::uniform(spec, Role::Defender).unwrap(),
        )
    }

    /// Attacker that always plays the highest-index action (an attack whenever
    /// one is legal).
    fn always_attack(spec: &FlipItSpec) -> BehavioralPolicy {
        let uniform = BehavioralPolicy::uniform(spec, Role::Attacker).unwrap();
        let mut policy = BehavioralPolicy::new(Role::Attacker);
        for (idx, probs) in uniform.states() {
            let mut row = vec![0.0; probs.len()];
            *row.last_mut().unwrap() = 1.0;
            policy.insert(idx, row);
        }
        policy
    }

    #[test]
    fn uniform_value_on_one_node_game() {
        let spec = one_node(1);
        let (att, def) = uniform_pair(&spec);
        let (u, v) = expected_utility_exact(&spec, &att, &def).unwrap();
        assert_eq!(u, -1.0);
        assert_eq!(v, 1.0);
    }

    #[test]
    fn zero_rounds_is_worth_zero() {
        let spec = one_node(0);
        let (att, def) = uniform_pair(&spec);
        let (u, v) = expected_utility_exact(&spec, &att, &def).unwrap();
        assert_eq!((u, v), (0.0, 0.0));
    }

    #[test]
    fn zero_sum_is_exact() {
        let spec = FlipItSpec::original_five_node();
        let (att, def) = uniform_pair(&spec);
        let (u, v) = expected_utility_exact(&spec, &att, &def).unwrap();
        assert_eq!(v, -u);
        assert!(u.is_finite());
    }

    #[test]
    fn monte_carlo_matches_exact_within_four_sigma() {
        let spec = FlipItSpec::original_five_node();
        let (att, def) = uniform_pair(&spec);
        let (exact, _) = expected_utility_exact(&spec, &att, &def).unwrap();
        let (mc, se) = monte_carlo_utility(&spec, &att, &def, 200_000, 7).unwrap();
        assert!(se > 0.0);
        assert!(
            (mc - exact).abs() <= 4.0 * se,
            "mc {mc} exact {exact} se {se}"
        );
    }

    #[test]
    fn monte_carlo_on_deterministic_pair_has_zero_error() {
        let spec = one_node(2);
        let att = always_attack(&spec);
        let def = BehavioralPolicy::uniform(&spec, Role::Defender).unwrap();
        let (mean, se) = monte_carlo_utility(&spec, &att, &def, 500, 3).unwrap();
        assert_eq!(mean, -4.0);
        assert_eq!(se, 0.0);
    }

    #[test]
    fn monte_carlo_standard_error_halves_at_four_times_the_sample() {
        let spec = FlipItSpec::original_five_node();
        let (att, def) = uniform_pair(&spec);
        let mut ratio_sum = 0.0;
        for seed in 0..10 {
            let (_, se_small) = monte_carlo_utility(&spec, &att, &def, 2_000, seed).unwrap();
            let (_, se_large) = monte_carlo_utility(&spec, &att, &def, 8_000, seed + 100).unwrap();
            ratio_sum += se_small / se_large;
        }
        let mean_ratio = ratio_sum / 10.0;
        assert!((1.85..2.15).contains(&mean_ratio), "ratio {mean_ratio}");
    }

    #[test]
    fn monte_carlo_rejects_empty_run() {
        let spec = one_node(1);
        let (att, def) = uniform_pair(&spec);
        assert!(monte_carlo_utility(&spec, &att, &def, 0, 1).is_err());
    }

    #[test]
    fn defender_br_against_forced_attacks() {
        let spec = one_node(1);
        let att = always_attack(&spec);
        let (def, br) = defender_best_response(&spec, &att).unwrap();
        assert_eq!(br, -2.0);
        let (u, _) = expected_utility_exact(&spec, &att, &def).unwrap();
        assert_eq!(u, br);
    }

    #[test]
    fn defender_br_matches_pure_policy_enumeration() {
        let spec = two_node();
        let uniform_def = BehavioralPolicy::uniform(&spec, Role::Defender).unwrap();
        let att = qr_policy(&spec, &uniform_def, &QRParams { lambda: 1.0 }).unwrap();

        let template = BehavioralPolicy::uniform(&spec, Role::Defender).unwrap();
        let states: Vec<(usize, usize)> = template
            .states()
            .map(|(idx, probs)| (idx, probs.len()))
            .collect();
        let mut best = f64::INFINITY;
        let mut choice = vec![0usize; states.len()];
        loop {
            let mut def = BehavioralPolicy::new(Role::Defender);
            for (slot, &(idx, n)) in choice.iter().zip(&states) {
                let mut row = vec![0.0; n];
                row[*slot] = 1.0;
                def.insert(idx, row);
            }
            let (u, _) = expected_utility_exact(&spec, &att, &def).unwrap();
            best = best.min(u);
            let mut pos = 0;
            loop {
                if pos == states.len() {
                    break;
                }
                choice[pos] += 1;
                if choice[pos] < states[pos].1 {
                    break;
                }
                choice[pos] = 0;
                pos += 1;
            }
            if pos == states.len() {
                break;
            }
        }

        let (_, br) = defender_best_response(&spec, &att).unwrap();
        assert!((br - best).abs() <= 1e-9, "br {br} enumerated {best}");
    }

    #[test]
    fn attacker_br_passes_against_guaranteed_blocks() {
        let spec = one_node(2);
        let def = BehavioralPolicy::uniform(&spec, Role::Defender).unwrap();
        let (att, value) = attacker_best_response(&spec, &def).unwrap();
        assert_eq!(value, 0.0);
        let initial = pack_index(&spec, 0, 0);
        assert_eq!(att.probs(initial).unwrap(), &[1.0, 0.0]);
    }

    #[test]
    fn attacker_br_dominates_uniform_play() {
        let spec = FlipItSpec::original_five_node();
        let (att, def) = uniform_pair(&spec);
        let (u_uniform, _) = expected_utility_exact(&spec, &att, &def).unwrap();
        let (_, value) = attacker_best_response(&spec, &def).unwrap();
        assert!(value >= u_uniform);
    }

    #[test]
    fn evaluate_model_on_single_defender_action_game() {
        let spec = one_node(1);
        let att = BehavioralPolicy::uniform(&spec, Role::Attacker).unwrap();
        let report = evaluate_model(&spec, &att).unwrap();
        assert_eq!(report.utility_vs_uniform, -1.0);
        assert_eq!(report.br_utility, -1.0);
    }

    #[test]
    fn evaluate_model_of_flat_quantal_response_equals_uniform() {
        let spec = FlipItSpec::original_five_node();
        let uniform_def = BehavioralPolicy::uniform(&spec, Role::Defender).unwrap();
        let uniform_att = BehavioralPolicy::uniform(&spec, Role::Attacker).unwrap();
        let qr0 = qr_policy(&spec, &uniform_def, &QRParams { lambda: 0.0 }).unwrap();
        let a = evaluate_model(&spec, &qr0).unwrap();
        let b = evaluate_model(&spec, &uniform_att).unwrap();
        assert_eq!(a.utility_vs_uniform, b.utility_vs_uniform);
        assert_eq!(a.br_utility, b.br_utility);
        let (u, _) = expected_utility_exact(&spec, &uniform_att, &uniform_def).unwrap();
        assert_eq!(a.utility_vs_uniform, u);
    }

    #[test]
    fn br_utility_never_exceeds_utility_vs_uniform() {
        let spec = FlipItSpec::original_five_node();
        let uniform_def = BehavioralPolicy::uniform(&spec, Role::Defender).unwrap();
        for lambda in [0.5, 2.0, 8.0] {
            let att = qr_policy(&spec, &uniform_def, &QRParams { lambda }).unwrap();
            let report = evaluate_model(&spec, &att).unwrap();
            assert!(report.br_utility <= report.utility_vs_uniform + 1e-9);
        }
    }

    #[test]
    fn utility_is_linear_in_a_single_state_row() {
        let spec = FlipItSpec::original_five_node();
        let uniform_def = BehavioralPolicy::uniform(&spec, Role::Defender).unwrap();
        let p1 = qr_policy(&spec, &uniform_def, &QRParams { lambda: 1.0 }).unwrap();
        let p2 = qr_policy(&spec, &uniform_def, &QRParams { lambda: 2.0 }).unwrap();
        let s0 = pack_index(&spec, 0, 0);
        let theta = 0.3;

        let mut swapped = p1.clone();
        swapped.insert(s0, p2.probs(s0).unwrap().to_vec());
        let mut mixed = p1.clone();
        let row: Vec<f64> = p1
            .probs(s0)
            .unwrap()
            .iter()
            .zip(p2.probs(s0).unwrap())
            .map(|(a, b)| theta * a + (1.0 - theta) * b)
            .collect();
        mixed.insert(s0, row);

        let (u1, _) = expected_utility_exact(&spec, &p1, &uniform_def).unwrap();
        let (u2, _) = expected_utility_exact(&spec, &swapped, &uniform_def).unwrap();
        let (um, _) = expected_utility_exact(&spec, &mixed, &uniform_def).unwrap();
        assert!((um - (theta * u1 + (1.0 - theta) * u2)).abs() <= 1e-9);
    }

    #[test]
    fn default_schedules_have_standard_sizes() {
        assert_eq!(SweepTrait::Gamma.default_schedule().len(), 11);
        assert_eq!(
            SweepTrait::Lambda.default_schedule(),
            vec![0.1, 0.2, 0.4, 0.8, 1.6, 3.2, 6.4, 12.8]
        );
        assert_eq!(
            SweepTrait::Rho.default_schedule(),
            vec![0.0, 0.2, 0.4, 0.6, 0.8, 1.0]
        );
    }

    #[test]
    fn lambda_sweep_over_quantal_response() {
        let spec = one_node(2);
        let base = ModelSpec::Qr { lambda: 1.0 };
        let schedule = SweepTrait::Lambda.default_schedule();
        let sweep = sweep_metrics(&spec, &base, SweepTrait::Lambda, &schedule).unwrap();
        assert_eq!(sweep.reports.len(), 8);
        assert!(sweep.spread_utility >= 0.0);
        assert!(sweep.spread_br >= 0.0);
        for report in &sweep.reports {
            assert!(report.br_utility <= report.utility_vs_uniform + 1e-9);
        }
        let csv = sweep.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "trait,value,utility_vs_uniform,br_utility");
        assert_eq!(lines.len(), 9);
        assert!(lines[1].starts_with("lambda,0.1,"));
        assert!(lines[8].starts_with("lambda,12.8,"));
    }

    #[test]
    fn sweep_rejects_traits_the_family_lacks() {
        let spec = one_node(1);
        let schedule = [0.5];
        let err = sweep_metrics(
            &spec,
            &ModelSpec::Qr { lambda: 1.0 },
            SweepTrait::Gamma,
            &schedule,
        )
        .unwrap_err();
        assert!(matches!(err, Error::TraitFamilyMismatch { .. }));
        let err = sweep_metrics(&spec, &ModelSpec::Lk { k: 1 }, SweepTrait::Lambda, &schedule)
            .unwrap_err();
        assert!(matches!(err, Error::TraitFamilyMismatch { .. }));
    }

    #[test]
    fn sweep_runs_learner_points() {
        let spec = one_node(2);
        let base = ModelSpec::Srdq {
            gamma: 0.9,
            alpha: 0.05,
            rho: 1.0,
            lambda: 1.0,
            episodes: 50,
            seed: 1,
            n_seeds: 2,
        };
        let sweep = sweep_metrics(&spec, &base, SweepTrait::Rho, &[0.0, 1.0]).unwrap();
        assert_eq!(sweep.reports.len(), 2);
        assert!(sweep.reports[0].model_id.starts_with("srdq("));
    }

    #[test]
    fn learner_metrics_average_over_seeds() {
        let spec = one_node(2);
        let model = ModelSpec::Srdq {
            gamma: 0.5,
            alpha: 0.05,
            rho: 1.0,
            lambda: 2.0,
            episodes: 60,
            seed: 9,
            n_seeds: 2,
        };
        let report = evaluate_model_spec(&spec, &model).unwrap();
        let uniform_def = BehavioralPolicy::uniform(&spec, Role::Defender).unwrap();
        let policies = model.attacker_policies(&spec, &uniform_def).unwrap();
        assert_eq!(policies.len(), 2);
        let mut u = 0.0;
        let mut br = 0.0;
        for p in &policies {
            let r = evaluate_model(&spec, p).unwrap();
            u += r.utility_vs_uniform;
            br += r.br_utility;
        }
        assert!((report.utility_vs_uniform - u / 2.0).abs() < 1e-12);
        assert!((report.br_utility - br / 2.0).abs() < 1e-12);
        assert_eq!(report.model_id, model.id());
    }

    #[test]
    fn sweep_result_json_roundtrip() {
        let spec = one_node(1);
        let base = ModelSpec::Qr { lambda: 1.0 };
        let sweep = sweep_metrics(&spec, &base, SweepTrait::Lambda, &[0.1, 0.2]).unwrap();
        let back: SweepResult = serde_json::from_str(&sweep.to_json()).unwrap();
        assert_eq!(back.grid, sweep.grid);
        assert_eq!(back.reports, sweep.reports);
    }
}
