//! Behavioral dataset ingestion, dark-triad clustering, likelihood
//! computation, maximum-likelihood model fitting, and synthetic data
//! generation.
//!
//! On disk a dataset is a directory: `profiles.csv` (header
//! `participant_id,mach,narc,psych`), `episodes.jsonl` (one episode object
//! per line: `{participant_id, game_id, steps: [{ownership, round,
//! action}]}`), and `games/<game_id>.json` with one game description per
//! referenced id. The id `original` resolves to the bundled five-node game
//! when no file shadows it.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::game::{
    initial_state, require_valid, state_index, AttackerAction, Engine, FlipItSpec, GameState,
    Owner,
};
use crate::models::ModelSpec;
use crate::optim::{derive_seed, ranked_indices, run_pbt, ParamDim, ParamSpace};
use crate::policy::{BehavioralPolicy, Role};
use crate::srdq;

pub const PROFILES_FILE: &str = "profiles.csv";
pub const EPISODES_FILE: &str = "episodes.jsonl";
pub const GAMES_DIR: &str = "games";
pub const BUILTIN_GAME_ID: &str = "original";
const PROFILES_HEADER: &str = "participant_id,mach,narc,psych";
const LIKELIHOOD_FLOOR: f64 = 1e-9;
const SPLIT_STREAM: u64 = u64::MAX;

/// Short dark triad trait.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sd3Trait {
    Mach,
    Narc,
    Psych,
}

impl Sd3Trait {
    pub const ALL: [Sd3Trait; 3] = [Sd3Trait::Mach, Sd3Trait::Narc, Sd3Trait::Psych];

    pub fn name(&self) -> &'static str {
        match self {
            Sd3Trait::Mach => "mach",
            Sd3Trait::Narc => "narc",
            Sd3Trait::Psych => "psych",
        }
    }
}

impl fmt::Display for Sd3Trait {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Sd3Trait {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "mach" | "machiavellianism" => Ok(Sd3Trait::Mach),
            "narc" | "narcissism" => Ok(Sd3Trait::Narc),
            "psych" | "psychopathy" => Ok(Sd3Trait::Psych),
            other => Err(format!("unknown trait `{other}` (mach, narc, psych)")),
        }
    }
}

/// One participant's SD3 scores, each on the instrument's 1 to 5 scale.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParticipantProfile {
    pub participant_id: String,
    pub mach: f64,
    pub narc: f64,
    pub psych: f64,
}

impl ParticipantProfile {
    pub fn score(&self, t: Sd3Trait) -> f64 {
        match t {
            Sd3Trait::Mach => self.mach,
            Sd3Trait::Narc => self.narc,
            Sd3Trait::Psych => self.psych,
        }
    }

    fn check(&self, location: &str) -> Result<()> {
        if self.participant_id.is_empty() {
            return Err(schema(location, "empty participant_id"));
        }
        for t in Sd3Trait::ALL {
            let s = self.score(t);
            if !(1.0..=5.0).contains(&s) {
                return Err(schema(
                    location,
                    format!("{} score {s} outside [1, 5]", t.name()),
                ));
            }
        }
        Ok(())
    }
}

/// One observed play-through: the attacker's states and actions, in order.
#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeRecord {
    pub participant_id: String,
    pub game_id: String,
    pub steps: Vec<(GameState, AttackerAction)>,
}

#[derive(Serialize, Deserialize)]
struct StepDoc {
    ownership: Vec<Owner>,
    round: usize,
    action: AttackerAction,
}

#[derive(Serialize, Deserialize)]
struct EpisodeDoc {
    participant_id: String,
    game_id: String,
    steps: Vec<StepDoc>,
}

impl EpisodeRecord {
    fn to_doc(&self) -> EpisodeDoc {
        EpisodeDoc {
            participant_id: self.participant_id.clone(),
            game_id: self.game_id.clone(),
            steps: self
                .steps
                .iter()
                .map(|(state, action)| StepDoc {
                    ownership: state.ownership.clone(),
                    round: state.round,
                    action: *action,
                })
                .collect(),
        }
    }

    fn from_doc(doc: EpisodeDoc) -> EpisodeRecord {
        EpisodeRecord {
            participant_id: doc.participant_id,
            game_id: doc.game_id,
            steps: doc
                .steps
                .into_iter()
                .map(|s| {
                    (
                        GameState {
                            ownership: s.ownership,
                            round: s.round,
                        },
                        s.action,
                    )
                })
                .collect(),
        }
    }
}

/// Profiles, episodes, and the games they reference.
#[derive(Clone, Debug, Default)]
pub struct Dataset {
    pub profiles: Vec<ParticipantProfile>,
    pub episodes: Vec<EpisodeRecord>,
    pub games: BTreeMap<String, FlipItSpec>,
}

fn schema(location: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Schema {
        location: location.into(),
        message: message.into(),
    }
}

fn replay_err(episode_id: &str, step: usize, message: impl Into<String>) -> Error {
    Error::Replay {
        episode_id: episode_id.to_string(),
        step,
        message: message.into(),
    }
}

/// Re-simulates one episode: the recorded states must follow from the initial
/// ownership, every action must be legal, and each transition must be
/// explained by some defender action.
fn replay_episode(spec: &FlipItSpec, episode: &EpisodeRecord, episode_id: &str) -> Result<()> {
    let eng = Engine::new(spec);
    let initial = initial_state(spec)?;
    let mut expected = initial.ownership.clone();
    for (i, (state, action)) in episode.steps.iter().enumerate() {
        if i >= spec.rounds {
            return Err(replay_err(
                episode_id,
                i,
                format!("more steps than the {}-round horizon", spec.rounds),
            ));
        }
        if state.round != i {
            return Err(replay_err(
                episode_id,
                i,
                format!("recorded round {} at step {i}", state.round),
            ));
        }
        if state.ownership.len() != spec.n_nodes {
            return Err(replay_err(episode_id, i, "ownership length mismatch"));
        }
        if state.ownership != expected {
            return Err(replay_err(episode_id, i, "ownership diverges from replay"));
        }
        let mask = state.mask();
        let legal = eng.attacker_actions(mask);
        if !legal.contains(action) {
            return Err(replay_err(
                episode_id,
                i,
                format!("illegal attacker action {action}"),
            ));
        }
        if let Some((next_state, _)) = episode.steps.get(i + 1) {
            let explained = eng
                .defender_actions()
                .iter()
                .any(|&d| eng.step(mask, *action, d).next_mask == next_state.mask());
            if !explained {
                return Err(replay_err(
                    episode_id,
                    i,
                    "no defender action explains the successor ownership",
                ));
            }
            expected = next_state.ownership.clone();
        }
    }
    Ok(())
}

impl Dataset {
    /// Checks profile uniqueness, referential integrity, and replays every
    /// episode.
    pub fn validate(&self) -> Result<()> {
        let mut ids = BTreeSet::new();
        for p in &self.profiles {
            p.check("profiles")?;
            if !ids.insert(p.participant_id.as_str()) {
                return Err(schema(
                    "profiles",
                    format!("duplicate participant {}", p.participant_id),
                ));
            }
        }
        for (n, e) in self.episodes.iter().enumerate() {
            let episode_id = format!("{}#{}", e.participant_id, n);
            if !ids.contains(e.participant_id.as_str()) {
                return Err(schema(
                    format!("episode {n}"),
                    format!("participant {} has no profile", e.participant_id),
                ));
            }
            let spec = self.games.get(&e.game_id).ok_or_else(|| {
                schema(
                    format!("episode {n}"),
                    format!("unknown game_id {}", e.game_id),
                )
            })?;
            replay_episode(spec, e, &episode_id)?;
        }
        Ok(())
    }

    /// Concatenates datasets; participant ids must not repeat and shared game
    /// ids must agree.
    pub fn merge(parts: Vec<Dataset>) -> Result<Dataset> {
        let mut out = Dataset::default();
        let mut seen = BTreeSet::new();
        for part in parts {
            for p in part.profiles {
                if !seen.insert(p.participant_id.clone()) {
                    return Err(schema(
                        "merge",
                        format!("duplicate participant {}", p.participant_id),
                    ));
                }
                out.profiles.push(p);
            }
            out.episodes.extend(part.episodes);
            for (id, spec) in part.games {
                if let Some(existing) = out.games.get(&id) {
                    if *existing != spec {
                        return Err(schema(
                            "merge",
                            format!("conflicting descriptions for game {id}"),
                        ));
                    }
                } else {
                    out.games.insert(id, spec);
                }
            }
        }
        Ok(out)
    }

    /// Writes the directory layout `parse_dataset` reads.
    pub fn write_to(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
        let mut profiles = String::from(PROFILES_HEADER);
        profiles.push('\n');
        for p in &self.profiles {
            profiles.push_str(&format!(
                "{},{},{},{}\n",
                p.participant_id, p.mach, p.narc, p.psych
            ));
        }
        let path = dir.join(PROFILES_FILE);
        fs::write(&path, profiles).map_err(|e| Error::io(path.display().to_string(), e))?;

        let mut lines = String::new();
        for e in &self.episodes {
            lines.push_str(&serde_json::to_string(&e.to_doc()).expect("episode serializes"));
            lines.push('\n');
        }
        let path = dir.join(EPISODES_FILE);
        fs::write(&path, lines).map_err(|e| Error::io(path.display().to_string(), e))?;

        let games_dir = dir.join(GAMES_DIR);
        fs::create_dir_all(&games_dir)
            .map_err(|e| Error::io(games_dir.display().to_string(), e))?;
        for (id, spec) in &self.games {
            check_game_id(id)?;
            let path = games_dir.join(format!("{id}.json"));
            fs::write(&path, spec.to_json_string())
                .map_err(|e| Error::io(path.display().to_string(), e))?;
        }
        Ok(())
    }

    fn participants_with_episodes(&self) -> Vec<String> {
        let ids: BTreeSet<&str> = self
            .episodes
            .iter()
            .map(|e| e.participant_id.as_str())
            .collect();
        ids.into_iter().map(String::from).collect()
    }
}

fn check_game_id(id: &str) -> Result<()> {
    let ok = !id.is_empty()
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-');
    if ok {
        Ok(())
    } else {
        Err(Error::InvalidParam(format!(
            "game id `{id}` must be nonempty and use only [A-Za-z0-9_-]"
        )))
    }
}

/// Reads and fully validates a dataset directory.
pub fn parse_dataset(dir: impl AsRef<Path>) -> Result<Dataset> {
    let dir = dir.as_ref();
    let profiles_path = dir.join(PROFILES_FILE);
    let text = fs::read_to_string(&profiles_path)
        .map_err(|e| Error::io(profiles_path.display().to_string(), e))?;
    let mut profiles = Vec::new();
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header.trim_end() == PROFILES_HEADER => {}
        _ => {
            return Err(schema(
                format!("{PROFILES_FILE} line 1"),
                format!("expected header `{PROFILES_HEADER}`"),
            ))
        }
    }
    for (n, line) in lines {
        let location = format!("{PROFILES_FILE} line {}", n + 1);
        let line = line.trim_end();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(schema(location, format!("{} fields, expected 4", fields.len())));
        }
        let parse = |s: &str| -> Result<f64> {
            s.trim()
                .parse::<f64>()
                .map_err(|_| schema(&location, format!("bad score `{s}`")))
        };
        let profile = ParticipantProfile {
            participant_id: fields[0].trim().to_string(),
            mach: parse(fields[1])?,
            narc: parse(fields[2])?,
            psych: parse(fields[3])?,
        };
        profile.check(&location)?;
        profiles.push(profile);
    }

    let mut games: BTreeMap<String, FlipItSpec> = BTreeMap::new();
    let games_dir = dir.join(GAMES_DIR);
    if games_dir.is_dir() {
        let mut paths: Vec<_> = fs::read_dir(&games_dir)
            .map_err(|e| Error::io(games_dir.display().to_string(), e))?
            .filter_map(|entry| entry.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|ext| ext == "json"))
            .collect();
        paths.sort();
        for path in paths {
            let id = path
                .file_stem()
                .and_then(|s| s.to_str())
                .ok_or_else(|| schema(path.display().to_string(), "unreadable game id"))?
                .to_string();
            let spec = FlipItSpec::from_json_file(&path)?;
            require_valid(&spec)?;
            games.insert(id, spec);
        }
    }

    let episodes_path = dir.join(EPISODES_FILE);
    let text = fs::read_to_string(&episodes_path)
        .map_err(|e| Error::io(episodes_path.display().to_string(), e))?;
    let mut episodes = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let location = format!("{EPISODES_FILE} line {}", n + 1);
        if line.trim().is_empty() {
            continue;
        }
        let doc: EpisodeDoc = serde_json::from_str(line)
            .map_err(|e| schema(&location, format!("bad episode object: {e}")))?;
        let episode = EpisodeRecord::from_doc(doc);
        if episode.game_id == BUILTIN_GAME_ID && !games.contains_key(BUILTIN_GAME_ID) {
            games.insert(BUILTIN_GAME_ID.to_string(), FlipItSpec::original_five_node());
        }
        episodes.push(episode);
    }

    let dataset = Dataset {
        profiles,
        episodes,
        games,
    };
    dataset.validate()?;
    Ok(dataset)
}

/// Linear-interpolation empirical quantile of a sorted sample.
fn interpolated_quantile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    let h = q * (n - 1) as f64;
    let lo = h.floor() as usize;
    let frac = h - lo as f64;
    if lo + 1 < n {
        sorted[lo] + frac * (sorted[lo + 1] - sorted[lo])
    } else {
        sorted[n - 1]
    }
}

/// Episodes of the participants whose `t` score reaches the empirical
/// `quantile` threshold (score >= threshold). Participants can land in
/// several trait clusters.
pub fn cluster_by_type(dataset: &Dataset, t: Sd3Trait, quantile: f64) -> Result<Dataset> {
    if dataset.profiles.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if !(0.0 < quantile && quantile < 1.0) {
        return Err(Error::InvalidParam(format!(
            "quantile {quantile} outside (0, 1)"
        )));
    }
    let mut scores: Vec<f64> = dataset.profiles.iter().map(|p| p.score(t)).collect();
    scores.sort_by(|a, b| a.partial_cmp(b).expect("scores are finite"));
    let threshold = interpolated_quantile(&scores, quantile);
    let selected: BTreeSet<&str> = dataset
        .profiles
        .iter()
        .filter(|p| p.score(t) >= threshold)
        .map(|p| p.participant_id.as_str())
        .collect();
    Ok(Dataset {
        profiles: dataset
            .profiles
            .iter()
            .filter(|p| selected.contains(p.participant_id.as_str()))
            .cloned()
            .collect(),
        episodes: dataset
            .episodes
            .iter()
            .filter(|e| selected.contains(e.participant_id.as_str()))
            .cloned()
            .collect(),
        games: dataset.games.clone(),
    })
}

/// Total and per-step log-likelihood of observed attacker actions.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogLikelihood {
    pub total: f64,
    pub per_step: f64,
    pub steps: usize,
}

/// Sums `ln max(pi(a|s), 1e-9)` over every step of every episode, all of
/// which must belong to `spec`. The floor keeps deterministic policies finite
/// on off-path actions.
pub fn log_likelihood(
    spec: &FlipItSpec,
    policy: &BehavioralPolicy,
    episodes: &[EpisodeRecord],
) -> Result<LogLikelihood> {
    if policy.role() != Role::Attacker {
        return Err(Error::InvalidParam(
            "log_likelihood scores an attacker policy".into(),
        ));
    }
    require_valid(spec)?;
    let eng = Engine::new(spec);
    let mut total = 0.0;
    let mut steps = 0usize;
    for episode in episodes {
        for (state, action) in &episode.steps {
            let idx = state_index(spec, state);
            let legal = eng.attacker_actions(state.mask());
            let pos = legal.iter().position(|a| a == action).ok_or_else(|| {
                Error::IllegalAction {
                    role: "attacker",
                    action: action.to_string(),
                    state_index: idx,
                }
            })?;
            let probs = policy.probs(idx)?;
            if probs.len() != legal.len() {
                return Err(Error::BadDistribution {
                    state_index: idx,
                    reason: format!(
                        "policy has {} probabilities for {} actions",
                        probs.len(),
                        legal.len()
                    ),
                });
            }
            total += probs[pos].max(LIKELIHOOD_FLOOR).ln();
            steps += 1;
        }
    }
    Ok(LogLikelihood {
        total,
        per_step: if steps == 0 { 0.0 } else { total / steps as f64 },
        steps,
    })
}

/// Model family selector for fitting.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelFamily {
    Qr,
    Lk,
    Qlk,
    Srdq,
}

impl ModelFamily {
    pub const ALL: [ModelFamily; 4] = [
        ModelFamily::Qr,
        ModelFamily::Lk,
        ModelFamily::Qlk,
        ModelFamily::Srdq,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            ModelFamily::Qr => "qr",
            ModelFamily::Lk => "lk",
            ModelFamily::Qlk => "qlk",
            ModelFamily::Srdq => "srdq",
        }
    }

    /// The searched parameter box. Learner step size and training budget stay
    /// fixed (1e-3, 2000 episodes), so its free traits are gamma, rho, and
    /// lambda.
    pub fn param_space(&self) -> ParamSpace {
        let lambda = ("lambda".to_string(), ParamDim::Log { lo: 0.01, hi: 20.0 });
        let k = ("k".to_string(), ParamDim::Integer { lo: 1, hi: 3 });
        let dims = match self {
            ModelFamily::Qr => vec![lambda],
            ModelFamily::Lk => vec![k],
            ModelFamily::Qlk => vec![k, lambda],
            ModelFamily::Srdq => vec![
                ("gamma".to_string(), ParamDim::Linear { lo: 0.0, hi: 1.0 }),
                ("rho".to_string(), ParamDim::Linear { lo: 0.0, hi: 1.0 }),
                lambda,
            ],
        };
        ParamSpace::new(dims).expect("family space is well formed")
    }

    fn model_from_genes(&self, genes: &[f64], trial_seed: u64) -> ModelSpec {
        match self {
            ModelFamily::Qr => ModelSpec::Qr { lambda: genes[0] },
            ModelFamily::Lk => ModelSpec::Lk {
                k: genes[0] as usize,
            },
            ModelFamily::Qlk => ModelSpec::Qlk {
                k: genes[0] as usize,
                lambda: genes[1],
            },
            ModelFamily::Srdq => ModelSpec::Srdq {
                gamma: genes[0],
                alpha: srdq::DEFAULT_ALPHA,
                rho: genes[1],
                lambda: genes[2],
                episodes: srdq::DEFAULT_EPISODES,
                seed: trial_seed,
                n_seeds: 1,
            },
        }
    }
}

impl fmt::Display for ModelFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelFamily {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "qr" => Ok(ModelFamily::Qr),
            "lk" => Ok(ModelFamily::Lk),
            "qlk" => Ok(ModelFamily::Qlk),
            "srdq" => Ok(ModelFamily::Srdq),
            other => Err(format!("unknown family `{other}` (qr, lk, qlk, srdq)")),
        }
    }
}

/// Outcome of a fitting run. `best_params` pins everything needed to re-derive
/// the winning policy, including the learner's trial seed.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FitResult {
    pub family: ModelFamily,
    pub best_params: ModelSpec,
    pub train_log_likelihood: f64,
    pub test_log_likelihood: f64,
    pub uniform_baseline_test_log_likelihood: f64,
    pub test_steps: usize,
    pub trials: usize,
}

impl FitResult {
    pub fn to_json_string(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("fit result serializes");
        s.push('\n');
        s
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<FitResult> {
        let path = path.as_ref();
        let text =
            fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))
    }
}

/// Seeded participant-level split; both sides are nonempty.
fn split_participants(
    ids: &[String],
    train_frac: f64,
    seed: u64,
) -> (Vec<String>, Vec<String>) {
    let mut order: Vec<usize> = (0..ids.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, SPLIT_STREAM)));
    let n = ids.len();
    let n_train = ((n as f64 * train_frac).round() as usize).clamp(1, n - 1);
    let mut train: Vec<String> = order[..n_train].iter().map(|&i| ids[i].clone()).collect();
    let mut test: Vec<String> = order[n_train..].iter().map(|&i| ids[i].clone()).collect();
    train.sort();
    test.sort();
    (train, test)
}

fn grouped_by_game<'d>(
    dataset: &'d Dataset,
    keep: &BTreeSet<&str>,
) -> BTreeMap<&'d str, Vec<EpisodeRecord>> {
    let mut groups: BTreeMap<&str, Vec<EpisodeRecord>> = BTreeMap::new();
    for e in &dataset.episodes {
        if keep.contains(e.participant_id.as_str()) {
            groups.entry(e.game_id.as_str()).or_default().push(e.clone());
        }
    }
    groups
}

fn model_policy(
    model: &ModelSpec,
    spec: &FlipItSpec,
    uniform_def: &BehavioralPolicy,
) -> Result<BehavioralPolicy> {
    let mut policies = model.attacker_policies(spec, uniform_def)?;
    Ok(policies.swap_remove(0))
}

/// Maximum-likelihood fit of one family on a cluster: seeded participant-level
/// train/test split, `budget` trials of the population-based search over the
/// family's parameter box, selection by train likelihood (ties to the lower
/// trial index), and a uniform-policy baseline on the same test set.
pub fn fit_model(
    family: ModelFamily,
    cluster: &Dataset,
    budget: usize,
    train_frac: f64,
    seed: u64,
) -> Result<FitResult> {
    if cluster.episodes.is_empty() {
        return Err(Error::EmptyCluster);
    }
    if budget < 1 {
        return Err(Error::InvalidParam("budget must be >= 1".into()));
    }
    if !(0.0 < train_frac && train_frac < 1.0) {
        return Err(Error::InvalidParam(format!(
            "train_frac {train_frac} outside (0, 1)"
        )));
    }
    let participants = cluster.participants_with_episodes();
    if participants.len() < 2 {
        return Err(Error::InvalidParam(
            "need at least two participants with episodes to split".into(),
        ));
    }
    for e in &cluster.episodes {
        if !cluster.games.contains_key(&e.game_id) {
            return Err(schema("fit_model", format!("unknown game_id {}", e.game_id)));
        }
    }
    let (train_ids, test_ids) = split_participants(&participants, train_frac, seed);
    assert!(
        train_ids.iter().all(|id| !test_ids.contains(id)),
        "participant split leaks"
    );
    let train_set: BTreeSet<&str> = train_ids.iter().map(String::as_str).collect();
    let test_set: BTreeSet<&str> = test_ids.iter().map(String::as_str).collect();
    let train_groups = grouped_by_game(cluster, &train_set);
    let test_groups = grouped_by_game(cluster, &test_set);

    let mut defenders: BTreeMap<&str, BehavioralPolicy> = BTreeMap::new();
    for id in cluster.games.keys() {
        defenders.insert(
            id.as_str(),
            BehavioralPolicy::uniform(&cluster.games[id], Role::Defender)?,
        );
    }

    let space = family.param_space();
    let train_ll_of = |model: &ModelSpec| -> Result<f64> {
        let mut total = 0.0;
        for (game_id, episodes) in &train_groups {
            let spec = &cluster.games[*game_id];
            let policy = model_policy(model, spec, &defenders[game_id])?;
            total += log_likelihood(spec, &policy, episodes)?.total;
        }
        Ok(total)
    };
    let population = budget.min(20);
    let generations = budget / population - 1;
    let trials = run_pbt(&space, population, generations, seed, |index, genes| {
        train_ll_of(&family.model_from_genes(genes, derive_seed(seed, index as u64)))
    })?;
    let best = ranked_indices(&trials)[0];
    let best_params =
        family.model_from_genes(&trials[best].genes, derive_seed(seed, best as u64));

    let mut test_ll = 0.0;
    let mut baseline = 0.0;
    let mut test_steps = 0usize;
    for (game_id, episodes) in &test_groups {
        let spec = &cluster.games[*game_id];
        let policy = model_policy(&best_params, spec, &defenders[game_id])?;
        let ll = log_likelihood(spec, &policy, episodes)?;
        test_ll += ll.total;
        test_steps += ll.steps;
        let uniform_att = BehavioralPolicy::uniform(spec, Role::Attacker)?;
        baseline += log_likelihood(spec, &uniform_att, episodes)?.total;
    }

    Ok(FitResult {
        family,
        best_params,
        train_log_likelihood: trials[best].objective,
        test_log_likelihood: test_ll,
        uniform_baseline_test_log_likelihood: baseline,
        test_steps,
        trials: trials.len(),
    })
}

/// Samples `n_episodes` of `policy` against `defender` and packages them as a
/// dataset for the given participant. The attacker draw precedes the defender
/// draw each step.
pub fn generate_synthetic(
    spec: &FlipItSpec,
    policy: &BehavioralPolicy,
    defender: &BehavioralPolicy,
    n_episodes: usize,
    seed: u64,
    profile: &ParticipantProfile,
    game_id: &str,
) -> Result<Dataset> {
    require_valid(spec)?;
    check_game_id(game_id)?;
    profile.check("profile")?;
    if policy.role() != Role::Attacker || defender.role() != Role::Defender {
        return Err(Error::InvalidParam(
            "expected an (attacker, defender) policy pair".into(),
        ));
    }
    let eng = Engine::new(spec);
    let def_actions = eng.defender_actions();
    let initial = initial_state(spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut episodes = Vec::with_capacity(n_episodes);
    for _ in 0..n_episodes {
        let mut state = initial.clone();
        let mut steps = Vec::with_capacity(spec.rounds);
        for t in 0..spec.rounds {
            let idx = state_index(spec, &state);
            let attacks = eng.attacker_actions(state.mask());
            let a = policy.sample(idx, &mut rng)?;
            let d = defender.sample(idx, &mut rng)?;
            let action = attacks[a];
            steps.push((state.clone(), action));
            let raw = eng.step(state.mask(), action, def_actions[d]);
            state = GameState::from_mask(spec, raw.next_mask, t + 1);
        }
        episodes.push(EpisodeRecord {
            participant_id: profile.participant_id.clone(),
            game_id: game_id.to_string(),
            steps,
        });
    }
    let mut games = BTreeMap::new();
    games.insert(game_id.to_string(), spec.clone());
    Ok(Dataset {
        profiles: vec![profile.clone()],
        episodes,
        games,
    })
}
