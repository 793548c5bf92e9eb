//! Rules engine for the two flip-it variants: the original all-pairs game and
//! the graph game where attacks travel along edges and pay the edge cost.
//!
//! Everything here is a pure function of its inputs. States are small enough
//! to index exhaustively: a state is an ownership bitmask plus a round counter,
//! and the whole space has `2^N * (rounds + 1)` slots.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Engine limit on node count; ownership lives in a `u32` bitmask and the
/// exact solvers enumerate all `2^N` ownership patterns.
pub const MAX_NODES: usize = 24;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Owner {
    #[serde(rename = "A")]
    Attacker,
    #[serde(rename = "D")]
    Defender,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Original,
    Graph,
}

/// Full description of one game instance. Serializes to a plain JSON document;
/// `node_costs` applies to the original variant, `edge_costs`/`threshold` to
/// the graph variant. An edge (i, j) is present iff `edge_costs[i][j] >= threshold`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlipItSpec {
    pub variant: Variant,
    pub n_nodes: usize,
    pub rounds: usize,
    pub node_rewards: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub node_costs: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub edge_costs: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub threshold: f64,
    /// Optional; when empty the variant default applies (original: all
    /// defender; graph: node 0 attacker, rest defender).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub initial_ownership: Vec<Owner>,
}

fn is_zero(x: &f64) -> bool {
    *x == 0.0
}

const ORIGINAL_GAME_JSON: &str = include_str!("../fixtures/original_game.json");

impl FlipItSpec {
    /// The bundled original 5-node game: rewards (10, 10, 4, 4, 10), costs
    /// (8, 2, 2, 8, 5), five rounds.
    pub fn original_five_node() -> FlipItSpec {
        serde_json::from_str(ORIGINAL_GAME_JSON).expect("bundled fixture parses")
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<FlipItSpec> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))
    }

    pub fn to_json_string(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("spec serializes");
        s.push('\n');
        s
    }

    /// Edge presence under the threshold rule. Meaningful for the graph
    /// variant only.
    pub fn edge_present(&self, i: usize, j: usize) -> bool {
        i != j && self.edge_costs[i][j] >= self.threshold
    }

    /// Ownership vector at the start of the game.
    pub fn default_ownership(&self) -> Vec<Owner> {
        if !self.initial_ownership.is_empty() {
            return self.initial_ownership.clone();
        }
        match self.variant {
            Variant::Original => vec![Owner::Defender; self.n_nodes],
            Variant::Graph => {
                let mut own = vec![Owner::Defender; self.n_nodes];
                if !own.is_empty() {
                    own[0] = Owner::Attacker;
                }
                own
            }
        }
    }

    pub fn total_reward(&self) -> f64 {
        self.node_rewards.iter().sum()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GameState {
    pub ownership: Vec<Owner>,
    pub round: usize,
}

impl GameState {
    pub fn is_terminal(&self, spec: &FlipItSpec) -> bool {
        self.round >= spec.rounds
    }

    /// Ownership as a bitmask, bit i set iff the attacker owns node i.
    pub fn mask(&self) -> u32 {
        ownership_to_mask(&self.ownership)
    }

    pub fn from_mask(spec: &FlipItSpec, mask: u32, round: usize) -> GameState {
        GameState {
            ownership: mask_to_ownership(spec.n_nodes, mask),
            round,
        }
    }
}

pub fn ownership_to_mask(ownership: &[Owner]) -> u32 {
    let mut mask = 0u32;
    for (i, o) in ownership.iter().enumerate() {
        if *o == Owner::Attacker {
            mask |= 1 << i;
        }
    }
    mask
}

pub fn mask_to_ownership(n_nodes: usize, mask: u32) -> Vec<Owner> {
    (0..n_nodes)
        .map(|i| {
            if mask & (1 << i) != 0 {
                Owner::Attacker
            } else {
                Owner::Defender
            }
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AttackerAction {
    Pass,
    Attack(usize),
}

impl fmt::Display for AttackerAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AttackerAction::Pass => write!(f, "pass"),
            AttackerAction::Attack(i) => write!(f, "attack:{i}"),
        }
    }
}

impl FromStr for AttackerAction {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if s == "pass" {
            return Ok(AttackerAction::Pass);
        }
        if let Some(rest) = s.strip_prefix("attack:") {
            let i = rest
                .parse::<usize>()
                .map_err(|_| format!("bad attack target in `{s}`"))?;
            return Ok(AttackerAction::Attack(i));
        }
        Err(format!("unknown attacker action `{s}`"))
    }
}

impl Serialize for AttackerAction {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for AttackerAction {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DefenderAction(pub usize);

impl DefenderAction {
    pub fn target(&self) -> usize {
        self.0
    }
}

impl fmt::Display for DefenderAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "defend:{}", self.0)
    }
}

impl FromStr for DefenderAction {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if let Some(rest) = s.strip_prefix("defend:") {
            let i = rest
                .parse::<usize>()
                .map_err(|_| format!("bad defend target in `{s}`"))?;
            return Ok(DefenderAction(i));
        }
        Err(format!("unknown defender action `{s}`"))
    }
}

impl Serialize for DefenderAction {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for DefenderAction {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Result of one simultaneous round. `attacker_reward = attacker_gain -
/// attacker_cost` and `defender_reward = -attacker_reward`, both exact.
#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome {
    pub next_state: GameState,
    pub attacker_gain: f64,
    pub attacker_cost: f64,
    pub attacker_reward: f64,
    pub defender_reward: f64,
}

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub id: String,
    pub message: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn ok(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn has(&self, id: &str) -> bool {
        self.violations.iter().any(|v| v.id == id)
    }

    fn push(&mut self, id: &str, message: String) {
        self.violations.push(Violation {
            id: id.to_string(),
            message,
        });
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.ok() {
            return write!(f, "ok");
        }
        let ids: Vec<&str> = self.violations.iter().map(|v| v.id.as_str()).collect();
        write!(f, "{}", ids.join(", "))
    }
}

fn all_finite_nonneg(xs: &[f64]) -> bool {
    xs.iter().all(|x| x.is_finite() && *x >= 0.0)
}

/// Checks every spec invariant and reports violations by stable identifier.
pub fn validate_spec(spec: &FlipItSpec) -> ValidationReport {
    let mut r = ValidationReport::default();
    let n = spec.n_nodes;

    if n < 1 {
        r.push("n-nodes-positive", "n_nodes must be >= 1".into());
        return r;
    }
    if n > MAX_NODES {
        r.push(
            "n-nodes-max",
            format!("n_nodes {n} exceeds the engine limit {MAX_NODES}"),
        );
        return r;
    }
    if spec.rounds < 1 {
        r.push("rounds-positive", "rounds must be >= 1".into());
    }
    if spec.node_rewards.len() != n {
        r.push(
            "node-rewards-length",
            format!("expected {n} node rewards, got {}", spec.node_rewards.len()),
        );
    } else if !all_finite_nonneg(&spec.node_rewards) {
        r.push(
            "node-rewards-finite-nonnegative",
            "node rewards must be finite and >= 0".into(),
        );
    }

    match spec.variant {
        Variant::Original => {
            if spec.node_costs.len() != n {
                r.push(
                    "node-costs-length",
                    format!("expected {n} node costs, got {}", spec.node_costs.len()),
                );
            } else if !all_finite_nonneg(&spec.node_costs) {
                r.push(
                    "node-costs-finite-nonnegative",
                    "node costs must be finite and >= 0".into(),
                );
            }
        }
        Variant::Graph => {
            if n < 2 {
                r.push(
                    "graph-min-nodes",
                    "graph variant needs at least 2 nodes (the defender may not defend node 0)"
                        .into(),
                );
            }
            if spec.edge_costs.len() != n || spec.edge_costs.iter().any(|row| row.len() != n) {
                r.push("edge-costs-shape", format!("edge_costs must be {n}x{n}"));
            } else {
                let mut symmetric = true;
                let mut zero_diag = true;
                let mut finite = true;
                for i in 0..n {
                    if spec.edge_costs[i][i] != 0.0 {
                        zero_diag = false;
                    }
                    for j in 0..n {
                        if spec.edge_costs[i][j] != spec.edge_costs[j][i] {
                            symmetric = false;
                        }
                        if !(spec.edge_costs[i][j].is_finite() && spec.edge_costs[i][j] >= 0.0) {
                            finite = false;
                        }
                    }
                }
                if !symmetric {
                    r.push("edge-costs-symmetric", "edge_costs must be symmetric".into());
                }
                if !zero_diag {
                    r.push(
                        "edge-costs-zero-diagonal",
                        "edge_costs diagonal must be zero".into(),
                    );
                }
                if !finite {
                    r.push(
                        "edge-costs-finite-nonnegative",
                        "edge costs must be finite and >= 0".into(),
                    );
                }
            }
            if !(spec.threshold.is_finite() && spec.threshold >= 0.0) {
                r.push(
                    "threshold-finite-nonnegative",
                    "threshold must be finite and >= 0".into(),
                );
            }
            if spec.node_rewards.len() == n && !spec.node_rewards.is_empty() {
                if spec.node_rewards[0] != 0.0 {
                    r.push(
                        "home-base-reward-zero",
                        format!(
                            "node 0 is the attacker home base and must have reward 0, got {}",
                            spec.node_rewards[0]
                        ),
                    );
                }
            }
        }
    }

    if !spec.initial_ownership.is_empty() {
        if spec.initial_ownership.len() != n {
            r.push(
                "initial-ownership-length",
                format!(
                    "expected {n} owners, got {}",
                    spec.initial_ownership.len()
                ),
            );
        } else {
            let expected = match spec.variant {
                Variant::Original => vec![Owner::Defender; n],
                Variant::Graph => {
                    let mut own = vec![Owner::Defender; n];
                    own[0] = Owner::Attacker;
                    own
                }
            };
            if spec.initial_ownership != expected {
                r.push(
                    "initial-ownership-variant",
                    "initial ownership does not match the variant rule".into(),
                );
            }
        }
    }

    r
}

pub fn require_valid(spec: &FlipItSpec) -> Result<()> {
    let report = validate_spec(spec);
    if report.ok() {
        Ok(())
    } else {
        Err(Error::InvalidSpec(report))
    }
}

/// Like `require_valid` but tolerates a zero-round horizon, which evaluators
/// treat as a degenerate game worth exactly 0.
pub(crate) fn check_valid_allowing_zero_rounds(spec: &FlipItSpec) -> Result<()> {
    let report = validate_spec(spec);
    if report.ok()
        || (spec.rounds == 0
            && report.violations.iter().all(|v| v.id == "rounds-positive"))
    {
        Ok(())
    } else {
        Err(Error::InvalidSpec(report))
    }
}

// ---------------------------------------------------------------------------
// Core rules
// ---------------------------------------------------------------------------

pub fn initial_state(spec: &FlipItSpec) -> Result<GameState> {
    require_valid(spec)?;
    Ok(GameState {
        ownership: spec.default_ownership(),
        round: 0,
    })
}

/// Legal actions in canonical order: attacker `pass` first then `attack:i` by
/// ascending target; defender `defend:i` by ascending target. Tie-breaking
/// rules elsewhere ("lowest action index") refer to these orderings.
pub fn legal_actions(
    spec: &FlipItSpec,
    state: &GameState,
) -> Result<(Vec<AttackerAction>, Vec<DefenderAction>)> {
    if state.is_terminal(spec) {
        return Err(Error::TerminalState {
            round: state.round,
            rounds: spec.rounds,
        });
    }
    let eng = Engine::new(spec);
    let mask = state.mask();
    Ok((eng.attacker_actions(mask), eng.defender_actions()))
}

/// One simultaneous round. Both actions commit against the pre-step
/// ownership; an attack on the defended node is blocked but still pays.
pub fn step(
    spec: &FlipItSpec,
    state: &GameState,
    attacker: AttackerAction,
    defender: DefenderAction,
) -> Result<StepOutcome> {
    if state.is_terminal(spec) {
        return Err(Error::TerminalState {
            round: state.round,
            rounds: spec.rounds,
        });
    }
    let eng = Engine::new(spec);
    let mask = state.mask();
    let idx = state_index(spec, state);
    if !eng.attacker_actions(mask).contains(&attacker) {
        return Err(Error::IllegalAction {
            role: "attacker",
            action: attacker.to_string(),
            state_index: idx,
        });
    }
    if !eng.defender_actions().contains(&defender) {
        return Err(Error::IllegalAction {
            role: "defender",
            action: defender.to_string(),
            state_index: idx,
        });
    }
    let raw = eng.step(mask, attacker, defender);
    let attacker_reward = raw.gain - raw.cost;
    Ok(StepOutcome {
        next_state: GameState::from_mask(spec, raw.next_mask, state.round + 1),
        attacker_gain: raw.gain,
        attacker_cost: raw.cost,
        attacker_reward,
        defender_reward: -attacker_reward,
    })
}

/// Rescales every reward, cost, and the threshold by `1 / sum(node_rewards)`,
/// so rewards sum to 1. Edge presence is unchanged (common positive factor).
pub fn normalize_rewards(spec: &FlipItSpec) -> Result<FlipItSpec> {
    let total = spec.total_reward();
    if total <= 0.0 {
        return Err(Error::ZeroRewards);
    }
    let scale = 1.0 / total;
    let mut out = spec.clone();
    for r in &mut out.node_rewards {
        *r *= scale;
    }
    for c in &mut out.node_costs {
        *c *= scale;
    }
    for row in &mut out.edge_costs {
        for c in row {
            *c *= scale;
        }
    }
    out.threshold *= scale;
    Ok(out)
}

// ---------------------------------------------------------------------------
// State indexing
// ---------------------------------------------------------------------------

/// Number of indexable states: `2^N * (rounds + 1)`.
pub fn state_space_size(spec: &FlipItSpec) -> usize {
    (1usize << spec.n_nodes) * (spec.rounds + 1)
}

/// Bijective index `round * 2^N + ownership_mask`; all-defender ownership at
/// round 0 maps to 0.
pub fn state_index(spec: &FlipItSpec, state: &GameState) -> usize {
    state.round * (1usize << spec.n_nodes) + state.mask() as usize
}

pub(crate) fn pack_index(spec: &FlipItSpec, mask: u32, round: usize) -> usize {
    round * (1usize << spec.n_nodes) + mask as usize
}

pub fn decode_state(spec: &FlipItSpec, index: usize) -> Result<GameState> {
    let size = state_space_size(spec);
    if index >= size {
        return Err(Error::StateIndexOutOfRange { index, size });
    }
    let per_round = 1usize << spec.n_nodes;
    let round = index / per_round;
    let mask = (index % per_round) as u32;
    Ok(GameState::from_mask(spec, mask, round))
}

// ---------------------------------------------------------------------------
// Internal engine: mask-level ops plus cached graph adjacency
// ---------------------------------------------------------------------------

pub(crate) struct RawOutcome {
    pub next_mask: u32,
    pub gain: f64,
    pub cost: f64,
}

pub(crate) struct Engine<'s> {
    pub spec: &'s FlipItSpec,
    /// Per node, bitmask of neighbors over present edges (graph variant).
    adj: Vec<u32>,
}

impl<'s> Engine<'s> {
    pub fn new(spec: &'s FlipItSpec) -> Engine<'s> {
        let adj = match spec.variant {
            Variant::Original => Vec::new(),
            Variant::Graph => (0..spec.n_nodes)
                .map(|j| {
                    let mut m = 0u32;
                    for i in 0..spec.n_nodes {
                        if spec.edge_present(i, j) {
                            m |= 1 << i;
                        }
                    }
                    m
                })
                .collect(),
        };
        Engine { spec, adj }
    }

    pub fn attacker_actions(&self, mask: u32) -> Vec<AttackerAction> {
        let mut acts = vec![AttackerAction::Pass];
        for j in 0..self.spec.n_nodes {
            if mask & (1 << j) != 0 {
                continue; // already owned
            }
            let reachable = match self.spec.variant {
                Variant::Original => true,
                Variant::Graph => self.adj[j] & mask != 0,
            };
            if reachable {
                acts.push(AttackerAction::Attack(j));
            }
        }
        acts
    }

    pub fn defender_actions(&self) -> Vec<DefenderAction> {
        let start = match self.spec.variant {
            Variant::Original => 0,
            Variant::Graph => 1, // home base may not be defended
        };
        (start..self.spec.n_nodes).map(DefenderAction).collect()
    }

    /// Mask-level step; assumes both actions are legal.
    pub fn step(&self, mask: u32, attacker: AttackerAction, defender: DefenderAction) -> RawOutcome {
        let d = defender.target();
        let mut next = mask;
        let mut cost = 0.0;
        match attacker {
            AttackerAction::Pass => {
                next &= !(1 << d);
            }
            AttackerAction::Attack(x) => {
                cost = match self.spec.variant {
                    Variant::Original => self.spec.node_costs[x],
                    Variant::Graph => {
                        // cheapest present edge from an attacker-owned node,
                        // judged on pre-step ownership
                        let mut best = f64::INFINITY;
                        let mut sources = self.adj[x] & mask;
                        while sources != 0 {
                            let i = sources.trailing_zeros() as usize;
                            sources &= sources - 1;
                            let c = self.spec.edge_costs[i][x];
                            if c < best {
                                best = c;
                            }
                        }
                        best
                    }
                };
                if x == d {
                    // blocked: ownership unchanged, cost still paid
                } else {
                    next |= 1 << x;
                    next &= !(1 << d);
                }
            }
        }
        let mut gain = 0.0;
        let mut owned = next;
        while owned != 0 {
            let i = owned.trailing_zeros() as usize;
            owned &= owned - 1;
            gain += self.spec.node_rewards[i];
        }
        RawOutcome {
            next_mask: next,
            gain,
            cost,
        }
    }
}

// ---------------------------------------------------------------------------
// Reachability
// ---------------------------------------------------------------------------

/// Ownership masks reachable at each round, layered by round and sorted
/// ascending, so iteration order is deterministic.
#[derive(Clone, Debug)]
pub struct ReachableStates {
    pub n_nodes: usize,
    pub rounds: usize,
    pub by_round: Vec<Vec<u32>>,
}

impl ReachableStates {
    pub fn compute(spec: &FlipItSpec) -> Result<ReachableStates> {
        check_valid_allowing_zero_rounds(spec)?;
        let eng = Engine::new(spec);
        let mut by_round: Vec<Vec<u32>> = Vec::with_capacity(spec.rounds + 1);
        let mut frontier = vec![ownership_to_mask(&spec.default_ownership())];
        by_round.push(frontier.clone());
        for _ in 0..spec.rounds {
            let mut next: Vec<u32> = Vec::new();
            for &mask in &frontier {
                for a in eng.attacker_actions(mask) {
                    for d in eng.defender_actions() {
                        let out = eng.step(mask, a, d);
                        if !next.contains(&out.next_mask) {
                            next.push(out.next_mask);
                        }
                    }
                }
            }
            next.sort_unstable();
            by_round.push(next.clone());
            frontier = next;
        }
        Ok(ReachableStates {
            n_nodes: spec.n_nodes,
            rounds: spec.rounds,
            by_round,
        })
    }

    pub fn contains(&self, round: usize, mask: u32) -> bool {
        self.position(round, mask).is_some()
    }

    /// Sorted masks reachable at `round`.
    pub fn masks(&self, round: usize) -> &[u32] {
        &self.by_round[round]
    }

    /// Position of `mask` within `masks(round)`, if reachable.
    pub fn position(&self, round: usize, mask: u32) -> Option<usize> {
        self.by_round
            .get(round)?
            .binary_search(&mask)
            .ok()
    }

    /// (round, mask) pairs for every reachable non-terminal state.
    pub fn non_terminal(&self) -> impl Iterator<Item = (usize, u32)> + '_ {
        self.by_round[..self.rounds]
            .iter()
            .enumerate()
            .flat_map(|(t, masks)| masks.iter().map(move |&m| (t, m)))
    }

    pub fn total(&self) -> usize {
        self.by_round.iter().map(|v| v.len()).sum()
    }
}

// ---------------------------------------------------------------------------
