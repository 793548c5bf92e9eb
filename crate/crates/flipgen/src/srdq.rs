//! Sub-rational distributional Q-learning: categorical return distributions on
//! a fixed support, trained online against a fixed defender. Rewards enter the
//! learner subjectively as `rho * gain + (1 - rho) * penalty`; action choice is
//! softmax over PT values with bootstrap targets taken at the greedy action.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::game::{
    ownership_to_mask, pack_index, state_space_size, AttackerAction, Engine, FlipItSpec,
    ReachableStates, StepOutcome, Variant,
};
use crate::induction::argmax_lowest;
use crate::policy::{sample_position, softmax_into, BehavioralPolicy, Role};

pub const DEFAULT_ATOMS: usize = 51;
pub const DEFAULT_ALPHA: f64 = 1e-3;
pub const DEFAULT_EPISODES: usize = 2000;

/// Learner hyperparameters. `alpha` stays constant across episodes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SRDQParams {
    /// Planning horizon weight in [0, 1].
    pub gamma: f64,
    /// Learning rate in (0, 1].
    pub alpha: f64,
    /// Gain/penalty weighting in [0, 1]; 0 disregards gains, 1 penalties.
    pub rho: f64,
    /// Rationality of the softmax used both to explore and to act.
    pub lambda: f64,
    pub episodes: usize,
    pub seed: u64,
}

impl Default for SRDQParams {
    fn default() -> SRDQParams {
        SRDQParams {
            gamma: 0.9,
            alpha: DEFAULT_ALPHA,
            rho: 0.5,
            lambda: 1.0,
            episodes: DEFAULT_EPISODES,
            seed: 42,
        }
    }
}

impl SRDQParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParam(msg));
        if !(self.gamma >= 0.0 && self.gamma <= 1.0) {
            return bad(format!("gamma must be in [0, 1], got {}", self.gamma));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return bad(format!("alpha must be in (0, 1], got {}", self.alpha));
        }
        if !(self.rho >= 0.0 && self.rho <= 1.0) {
            return bad(format!("rho must be in [0, 1], got {}", self.rho));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad(format!(
                "lambda must be finite and >= 0, got {}",
                self.lambda
            ));
        }
        if self.episodes < 1 {
            return bad("episodes must be >= 1".into());
        }
        Ok(())
    }
}

/// The PT functional collapsing a return distribution to a scalar. Only the
/// plain expectation ships; the enum leaves room for distorted variants.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PTConfig {
    #[default]
    Expectation,
}

/// `rho * gain + (1 - rho) * penalty`.
pub fn subjective_reward(gain: f64, penalty: f64, rho: f64) -> Result<f64> {
    if !(rho >= 0.0 && rho <= 1.0) {
        return Err(Error::InvalidParam(format!(
            "rho must be in [0, 1], got {rho}"
        )));
    }
    debug_assert!(gain >= 0.0 && penalty <= 0.0);
    Ok(rho * gain + (1.0 - rho) * penalty)
}

/// Splits a step outcome into the learner's (gain, penalty) pair: control
/// rewards collected, and the attack cost as a non-positive penalty.
pub fn decompose_reward(outcome: &StepOutcome) -> (f64, f64) {
    (outcome.attacker_gain, -outcome.attacker_cost)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
struct SupportDesc {
    z_min: f64,
    z_max: f64,
    k: usize,
}

/// Shared evenly spaced atom grid `z_1 < ... < z_K`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SupportDesc", into = "SupportDesc")]
pub struct Support {
    z_min: f64,
    z_max: f64,
    k: usize,
    delta: f64,
    atoms: Vec<f64>,
    zero_atom: usize,
}

impl Support {
    pub fn new(z_min: f64, z_max: f64, k: usize) -> Result<Support> {
        if k < 2 {
            return Err(Error::EmptySupport);
        }
        if !(z_min.is_finite() && z_max.is_finite() && z_min <= z_max) {
            return Err(Error::InvalidParam(format!(
                "bad support bounds [{z_min}, {z_max}]"
            )));
        }
        let (z_min, z_max) = if z_min == z_max {
            (z_min - 0.5, z_max + 0.5)
        } else {
            (z_min, z_max)
        };
        let delta = (z_max - z_min) / (k - 1) as f64;
        let atoms: Vec<f64> = (0..k).map(|i| z_min + i as f64 * delta).collect();
        let zero_atom = atoms
            .iter()
            .enumerate()
            .min_by(|(_, a), (_, b)| a.abs().partial_cmp(&b.abs()).unwrap())
            .map(|(i, _)| i)
            .unwrap();
        Ok(Support {
            z_min,
            z_max,
            k,
            delta,
            atoms,
            zero_atom,
        })
    }

    /// Bounds the cumulative subjective return by interval arithmetic: per
    /// round `u` lies in `[-(1 - rho) * c_max, rho * sum(rewards)]`, summed
    /// with weights `gamma^t` over the horizon.
    pub fn default_for(spec: &FlipItSpec, params: &SRDQParams) -> Result<Support> {
        params.validate()?;
        let c_max = match spec.variant {
            Variant::Original => spec.node_costs.iter().cloned().fold(0.0, f64::max),
            Variant::Graph => {
                let mut m = 0.0f64;
                for i in 0..spec.n_nodes {
                    for j in 0..spec.n_nodes {
                        if spec.edge_present(i, j) {
                            m = m.max(spec.edge_costs[i][j]);
                        }
                    }
                }
                m
            }
        };
        let u_min = -(1.0 - params.rho) * c_max;
        let u_max = params.rho * spec.total_reward();
        let g = if params.gamma == 1.0 {
            spec.rounds as f64
        } else {
            (1.0 - params.gamma.powi(spec.rounds as i32)) / (1.0 - params.gamma)
        };
        Support::new(g * u_min, g * u_max, DEFAULT_ATOMS)
    }

    pub fn atoms(&self) -> &[f64] {
        &self.atoms
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn z_min(&self) -> f64 {
        self.z_min
    }

    pub fn z_max(&self) -> f64 {
        self.z_max
    }

    /// Index of the atom nearest 0, where fresh distributions put their mass.
    pub fn zero_atom(&self) -> usize {
        self.zero_atom
    }
}

impl From<Support> for SupportDesc {
    fn from(s: Support) -> SupportDesc {
        SupportDesc {
            z_min: s.z_min,
            z_max: s.z_max,
            k: s.k,
        }
    }
}

impl TryFrom<SupportDesc> for Support {
    type Error = Error;

    fn try_from(d: SupportDesc) -> Result<Support> {
        Support::new(d.z_min, d.z_max, d.k)
    }
}

/// Categorical distribution over a shared support.
#[derive(Clone, Debug, PartialEq)]
pub struct ReturnDistribution {
    support: Arc<Support>,
    probs: Vec<f64>,
}

impl ReturnDistribution {
    /// All mass on the atom nearest 0.
    pub fn zero(support: Arc<Support>) -> ReturnDistribution {
        let mut probs = vec![0.0; support.k];
        probs[support.zero_atom] = 1.0;
        ReturnDistribution { support, probs }
    }

    /// A delta at `value`, projected onto the support.
    pub fn point_mass(support: Arc<Support>, value: f64) -> ReturnDistribution {
        let mut probs = vec![0.0; support.k];
        project_point_into(&mut probs, &support, value, 1.0);
        ReturnDistribution { support, probs }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn support(&self) -> &Support {
        &self.support
    }

    pub fn validate(&self) -> Result<()> {
        check_probs(&self.probs, self.support.k)
    }

    pub fn pt_value(&self, pt: PTConfig) -> f64 {
        pt_value(self, pt)
    }
}

fn check_probs(probs: &[f64], k: usize) -> Result<()> {
    if probs.len() != k {
        return Err(Error::InvalidParam(format!(
            "distribution has {} probabilities for {k} atoms",
            probs.len()
        )));
    }
    if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(Error::InvalidParam(
            "negative or non-finite probability in return distribution".into(),
        ));
    }
    let sum: f64 = probs.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidParam(format!(
            "return distribution sums to {sum}"
        )));
    }
    Ok(())
}

/// Scalar value of a distribution under the PT functional.
pub fn pt_value(dist: &ReturnDistribution, pt: PTConfig) -> f64 {
    match pt {
        PTConfig::Expectation => expectation(&dist.probs, &dist.support.atoms),
    }
}

fn expectation(probs: &[f64], atoms: &[f64]) -> f64 {
    probs.iter().zip(atoms).map(|(p, z)| p * z).sum()
}

/// Projects an arbitrary finite-support distribution onto the shared grid,
/// splitting each atom's mass linearly between its two nearest grid atoms and
/// clamping mass outside `[z_min, z_max]` to the boundary.
pub fn categorical_project(
    target_atoms: &[f64],
    target_probs: &[f64],
    support: &Arc<Support>,
) -> Result<ReturnDistribution> {
    if target_atoms.len() != target_probs.len() {
        return Err(Error::InvalidParam(format!(
            "projection got {} atoms but {} probabilities",
            target_atoms.len(),
            target_probs.len()
        )));
    }
    let mut probs = vec![0.0; support.k];
    for (&z, &p) in target_atoms.iter().zip(target_probs) {
        project_point_into(&mut probs, support, z, p);
    }
    Ok(ReturnDistribution {
        support: Arc::clone(support),
        probs,
    })
}

fn project_point_into(out: &mut [f64], support: &Support, z: f64, p: f64) {
    let z = z.clamp(support.z_min, support.z_max);
    let b = ((z - support.z_min) / support.delta).clamp(0.0, (support.k - 1) as f64);
    let l = b.floor() as usize;
    let u = b.ceil() as usize;
    if l == u {
        out[l] += p;
    } else {
        out[l] += p * (u as f64 - b);
        out[u] += p * (b - l as f64);
    }
}

struct StateEntry {
    /// One probability vector per legal attacker action, canonical order.
    dists: Vec<Vec<f64>>,
    /// Cached PT value of each distribution.
    pt: Vec<f64>,
}

/// Return distributions for every reachable (state, legal attacker action).
pub struct QTable {
    support: Arc<Support>,
    pt_config: PTConfig,
    states: Vec<Option<StateEntry>>,
}

impl QTable {
    /// Zero distributions everywhere (mass at the atom nearest 0).
    pub fn zero_init(spec: &FlipItSpec, support: Support) -> Result<QTable> {
        let reach = ReachableStates::compute(spec)?;
        let eng = Engine::new(spec);
        let support = Arc::new(support);
        let mut states: Vec<Option<StateEntry>> = Vec::new();
        states.resize_with(state_space_size(spec), || None);
        for (t, mask) in reach.non_terminal() {
            let n = eng.attacker_actions(mask).len();
            let zero_probs = {
                let mut p = vec![0.0; support.k];
                p[support.zero_atom] = 1.0;
                p
            };
            let pt0 = support.atoms[support.zero_atom];
            states[pack_index(spec, mask, t)] = Some(StateEntry {
                dists: vec![zero_probs; n],
                pt: vec![pt0; n],
            });
        }
        Ok(QTable {
            support,
            pt_config: PTConfig::default(),
            states,
        })
    }

    pub fn support(&self) -> &Support {
        &self.support
    }

    /// Covered state indices, ascending.
    pub fn covered_states(&self) -> impl Iterator<Item = usize> + '_ {
        self.states
            .iter()
            .enumerate()
            .filter_map(|(i, e)| e.as_ref().map(|_| i))
    }

    fn entry(&self, state_index: usize) -> Result<&StateEntry> {
        self.states
            .get(state_index)
            .and_then(|e| e.as_ref())
            .ok_or(Error::PolicyGap {
                role: "attacker",
                state_index,
            })
    }

    pub fn n_actions(&self, state_index: usize) -> Result<usize> {
        Ok(self.entry(state_index)?.dists.len())
    }

    /// Cached PT value per legal action.
    pub fn pt_values(&self, state_index: usize) -> Result<&[f64]> {
        Ok(self.entry(state_index)?.pt.as_slice())
    }

    /// Argmax of the PT values, lowest action index on ties.
    pub fn greedy_action(&self, state_index: usize) -> Result<usize> {
        Ok(argmax_lowest(&self.entry(state_index)?.pt))
    }

    pub fn distribution(&self, state_index: usize, action: usize) -> Result<ReturnDistribution> {
        let e = self.entry(state_index)?;
        let probs = e
            .dists
            .get(action)
            .ok_or_else(|| Error::InvalidParam(format!(
                "action {action} out of range at state {state_index}"
            )))?
            .clone();
        Ok(ReturnDistribution {
            support: Arc::clone(&self.support),
            probs,
        })
    }

    fn update(&mut self, state_index: usize, action: usize, target: &[f64], alpha: f64) {
        let atoms = Arc::clone(&self.support);
        let e = self.states[state_index].as_mut().expect("covered state");
        let d = &mut e.dists[action];
        for (x, t) in d.iter_mut().zip(target) {
            *x = (1.0 - alpha) * *x + alpha * t;
        }
        e.pt[action] = match self.pt_config {
            PTConfig::Expectation => expectation(d, &atoms.atoms),
        };
    }

    /// Checks every stored distribution.
    pub fn validate(&self) -> Result<()> {
        for e in self.states.iter().flatten() {
            for d in &e.dists {
                check_probs(d, self.support.k)?;
            }
        }
        Ok(())
    }

    /// JSON document: support descriptor plus per-state probability vectors.
    /// Round-trips losslessly (shortest-roundtrip float formatting).
    pub fn to_json(&self) -> String {
        let doc = QTableDoc {
            support: SupportDesc {
                z_min: self.support.z_min,
                z_max: self.support.z_max,
                k: self.support.k,
            },
            states: self
                .states
                .iter()
                .enumerate()
                .filter_map(|(i, e)| e.as_ref().map(|e| (i, e.dists.clone())))
                .collect(),
        };
        let mut s = serde_json::to_string_pretty(&doc).expect("qtable serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<QTable> {
        let doc: QTableDoc = serde_json::from_str(text).map_err(|e| Error::Schema {
            location: "qtable json".into(),
            message: e.to_string(),
        })?;
        let support = Arc::new(Support::new(
            doc.support.z_min,
            doc.support.z_max,
            doc.support.k,
        )?);
        let size = doc.states.keys().next_back().map_or(0, |i| i + 1);
        let mut states: Vec<Option<StateEntry>> = Vec::new();
        states.resize_with(size, || None);
        for (idx, dists) in doc.states {
            for d in &dists {
                check_probs(d, support.k)?;
            }
            let pt = dists
                .iter()
                .map(|d| expectation(d, &support.atoms))
                .collect();
            states[idx] = Some(StateEntry { dists, pt });
        }
        Ok(QTable {
            support,
            pt_config: PTConfig::default(),
            states,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct QTableDoc {
    support: SupportDesc,
    states: BTreeMap<usize, Vec<Vec<f64>>>,
}

/// Runs the training loop: per step, sample the attacker action by
/// softmax(lambda) over PT values, sample the defender from its policy, apply
/// the subjective reward, and mix the projected bootstrap target into
/// `Z(S, A)` at rate alpha. The bootstrap reads `Z(S', a*)` at the greedy
/// `a*`. Deterministic for a fixed seed: the attacker draw precedes the
/// defender draw each step.
pub fn train(
    spec: &FlipItSpec,
    defender_policy: &BehavioralPolicy,
    params: &SRDQParams,
) -> Result<QTable> {
    crate::game::require_valid(spec)?;
    params.validate()?;
    if defender_policy.role() != Role::Defender {
        return Err(Error::InvalidParam(
            "training opponent must be a defender policy".into(),
        ));
    }
    defender_policy.validate_for(spec)?;

    let support = Support::default_for(spec, params)?;
    let mut q = QTable::zero_init(spec, support)?;
    let sup = Arc::clone(&q.support);
    let eng = Engine::new(spec);
    let reach = ReachableStates::compute(spec)?;

    let mut actions: Vec<Option<Vec<AttackerAction>>> = vec![None; state_space_size(spec)];
    let mut max_actions = 1;
    for (t, mask) in reach.non_terminal() {
        let acts = eng.attacker_actions(mask);
        max_actions = max_actions.max(acts.len());
        actions[pack_index(spec, mask, t)] = Some(acts);
    }
    let def_actions = eng.defender_actions();
    let initial_mask = ownership_to_mask(&spec.default_ownership());

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut probs_buf = vec![0.0; max_actions];
    let mut target_buf = vec![0.0; sup.k];

    for _ in 0..params.episodes {
        let mut mask = initial_mask;
        for t in 0..spec.rounds {
            let idx = pack_index(spec, mask, t);
            let att = actions[idx].as_ref().expect("reachable state");
            let n = att.len();
            softmax_into(&mut probs_buf[..n], q.pt_values(idx)?, params.lambda);
            let a_pos = sample_position(&probs_buf[..n], &mut rng);
            let d_pos = sample_position(defender_policy.probs(idx)?, &mut rng);
            let raw = eng.step(mask, att[a_pos], def_actions[d_pos]);
            let u = params.rho * raw.gain + (1.0 - params.rho) * (-raw.cost);

            target_buf.fill(0.0);
            if t + 1 >= spec.rounds {
                project_point_into(&mut target_buf, &sup, u, 1.0);
            } else {
                let next_idx = pack_index(spec, raw.next_mask, t + 1);
                let a_star = q.greedy_action(next_idx)?;
                let src = &q.entry(next_idx)?.dists[a_star];
                for (j, &pj) in src.iter().enumerate() {
                    if pj > 0.0 {
                        project_point_into(
                            &mut target_buf,
                            &sup,
                            u + params.gamma * sup.atoms[j],
                            pj,
                        );
                    }
                }
            }
            q.update(idx, a_pos, &target_buf, params.alpha);
            mask = raw.next_mask;
        }
    }
    Ok(q)
}

/// Softmax(lambda) over the PT values at every covered state. States never
/// visited during training keep their zero distributions, so their action
/// values tie and the policy is uniform there.
pub fn policy_from_qtable(qtable: &QTable, lambda: f64) -> Result<BehavioralPolicy> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidParam(format!(
            "lambda must be finite and >= 0, got {lambda}"
        )));
    }
    let mut policy = BehavioralPolicy::new(Role::Attacker);
    for idx in qtable.covered_states() {
        let pt = qtable.pt_values(idx)?;
        let mut probs = vec![0.0; pt.len()];
        softmax_into(&mut probs, pt, lambda);
        policy.insert(idx, probs);
    }
    Ok(policy)
}
