//! Search over graph flip-it games for instances that maximize behavioral
//! differences between fixed models, using the seeded population-based
//! optimizer.

use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use crate::error::{Error, Result};
use crate::game::{normalize_rewards, require_valid, FlipItSpec, Variant, MAX_NODES};
use crate::models::ModelSpec;
use crate::optim::{ranked_indices, run_pbt, OptimTrial, ParamDim, ParamSpace};
use crate::solvers::{evaluate_model_spec, sweep_metrics, MetricReport, SweepTrait};

/// Flat game parameterization: upper-triangle edge costs in (0,1), (0,2), ...
/// (N-2, N-1) order, rewards for nodes 1..N (node 0 stays at 0), and the
/// presence threshold.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GameGenome {
    pub edge_costs: Vec<f64>,
    pub node_rewards: Vec<f64>,
    pub threshold: f64,
}

impl GameGenome {
    pub fn n_genes(n_nodes: usize) -> usize {
        n_nodes * (n_nodes - 1) / 2 + (n_nodes - 1) + 1
    }

    pub fn from_genes(genes: &[f64], n_nodes: usize) -> Result<GameGenome> {
        if genes.len() != Self::n_genes(n_nodes) {
            return Err(Error::GenomeBounds(format!(
                "{} genes for {n_nodes} nodes, expected {}",
                genes.len(),
                Self::n_genes(n_nodes)
            )));
        }
        let n_edges = n_nodes * (n_nodes - 1) / 2;
        Ok(GameGenome {
            edge_costs: genes[..n_edges].to_vec(),
            node_rewards: genes[n_edges..n_edges + n_nodes - 1].to_vec(),
            threshold: genes[genes.len() - 1],
        })
    }

    pub fn to_genes(&self) -> Vec<f64> {
        let mut genes = self.edge_costs.clone();
        genes.extend_from_slice(&self.node_rewards);
        genes.push(self.threshold);
        genes
    }
}

/// What a sweep-spread objective maximizes when selected instead of the
/// default pairwise best-response difference.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ObjectiveKind {
    PairwiseBrDiff,
    TraitSweepSpread { sweep_trait: SweepTrait },
}

impl Default for ObjectiveKind {
    fn default() -> Self {
        ObjectiveKind::PairwiseBrDiff
    }
}

/// Generator configuration: the frozen model set the search discriminates
/// between, the objective, and the genome box.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveConfig {
    pub models: Vec<ModelSpec>,
    #[serde(default)]
    pub objective: ObjectiveKind,
    #[serde(default = "default_true")]
    pub normalize: bool,
    #[serde(default = "default_n_nodes")]
    pub n_nodes: usize,
    #[serde(default = "default_rounds")]
    pub rounds: usize,
    #[serde(default = "default_unit")]
    pub r_max: f64,
    #[serde(default = "default_unit")]
    pub c_max: f64,
}

fn default_true() -> bool {
    true
}

fn default_n_nodes() -> usize {
    5
}

fn default_rounds() -> usize {
    5
}

fn default_unit() -> f64 {
    1.0
}

impl ObjectiveConfig {
    pub fn new(models: Vec<ModelSpec>) -> ObjectiveConfig {
        ObjectiveConfig {
            models,
            objective: ObjectiveKind::default(),
            normalize: true,
            n_nodes: default_n_nodes(),
            rounds: default_rounds(),
            r_max: 1.0,
            c_max: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.models.len() < 2 {
            return Err(Error::ModelSetTooSmall);
        }
        for m in &self.models {
            m.validate()?;
        }
        if !(2..=MAX_NODES).contains(&self.n_nodes) {
            return Err(Error::InvalidParam(format!(
                "n_nodes {} outside 2..={MAX_NODES}",
                self.n_nodes
            )));
        }
        if self.rounds < 1 {
            return Err(Error::InvalidParam("rounds must be >= 1".into()));
        }
        for (name, v) in [("r_max", self.r_max), ("c_max", self.c_max)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidParam(format!("{name} must be positive")));
            }
        }
        Ok(())
    }

    fn space(&self) -> ParamSpace {
        let n = self.n_nodes;
        let mut dims = Vec::with_capacity(GameGenome::n_genes(n));
        for i in 0..n {
            for j in i + 1..n {
                dims.push((
                    format!("e{i}_{j}"),
                    ParamDim::Linear {
                        lo: 0.0,
                        hi: self.c_max,
                    },
                ));
            }
        }
        for i in 1..n {
            dims.push((
                format!("r{i}"),
                ParamDim::Linear {
                    lo: 0.0,
                    hi: self.r_max,
                },
            ));
        }
        dims.push((
            "threshold".to_string(),
            ParamDim::Linear {
                lo: 0.0,
                hi: self.c_max,
            },
        ));
        ParamSpace::new(dims).expect("genome space is well formed")
    }
}

/// A decoded genome: the playable game plus the degeneracy flag (node 0 left
/// without a present edge, or zero total reward).
#[derive(Clone, Debug)]
pub struct DecodedGame {
    pub spec: FlipItSpec,
    pub degenerate: bool,
}

/// Builds the graph game a genome describes: edge (i, j) exists iff its cost
/// reaches the threshold, node 0 is the reward-free home base, and rewards
/// are rescaled to sum to 1 when normalization is on.
pub fn decode_genome(genome: &GameGenome, config: &ObjectiveConfig) -> Result<DecodedGame> {
    config.validate()?;
    let n = config.n_nodes;
    if genome.edge_costs.len() != n * (n - 1) / 2 || genome.node_rewards.len() != n - 1 {
        return Err(Error::GenomeBounds(format!(
            "genome shaped for {} edge costs and {} rewards",
            genome.edge_costs.len(),
            genome.node_rewards.len()
        )));
    }
    for (name, value, hi) in genome
        .edge_costs
        .iter()
        .map(|&c| ("edge cost", c, config.c_max))
        .chain(
            genome
                .node_rewards
                .iter()
                .map(|&r| ("node reward", r, config.r_max)),
        )
        .chain([("threshold", genome.threshold, config.c_max)])
    {
        if !(value.is_finite() && (0.0..=hi).contains(&value)) {
            return Err(Error::GenomeBounds(format!(
                "{name} {value} outside [0, {hi}]"
            )));
        }
    }

    let mut edge_costs = vec![vec![0.0; n]; n];
    let mut k = 0;
    for i in 0..n {
        for j in i + 1..n {
            edge_costs[i][j] = genome.edge_costs[k];
            edge_costs[j][i] = genome.edge_costs[k];
            k += 1;
        }
    }
    let mut node_rewards = vec![0.0];
    node_rewards.extend_from_slice(&genome.node_rewards);
    let spec = FlipItSpec {
        variant: Variant::Graph,
        n_nodes: n,
        rounds: config.rounds,
        node_rewards,
        node_costs: vec![0.0; n],
        edge_costs,
        threshold: genome.threshold,
        initial_ownership: vec![],
    };
    let isolated = (1..n).all(|j| !spec.edge_present(0, j));
    let zero_reward = spec.total_reward() == 0.0;
    let spec = if config.normalize && !zero_reward {
        normalize_rewards(&spec)?
    } else {
        spec
    };
    require_valid(&spec)?;
    Ok(DecodedGame {
        spec,
        degenerate: isolated || zero_reward,
    })
}

/// One evaluated genome. Reports hold the evaluations behind the objective:
/// one per model for the pairwise objective, one per grid point for a sweep
/// objective; the objective is always their best-response utility spread.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Trial {
    pub index: usize,
    pub generation: usize,
    pub member: usize,
    pub genome: GameGenome,
    pub spec: FlipItSpec,
    pub degenerate: bool,
    pub reports: Vec<MetricReport>,
    pub objective: f64,
    pub parent: Option<usize>,
    pub perturbation: Option<String>,
}

/// Largest pairwise gap in best-response utility, which for any report set is
/// max minus min.
pub fn objective_from_reports(reports: &[MetricReport]) -> f64 {
    let lo = reports
        .iter()
        .map(|r| r.br_utility)
        .fold(f64::INFINITY, f64::min);
    let hi = reports
        .iter()
        .map(|r| r.br_utility)
        .fold(f64::NEG_INFINITY, f64::max);
    hi - lo
}

/// Evaluates the configured objective on an arbitrary game, e.g. to compare a
/// searched game against the original fixture.
pub fn evaluate_spec_objective(
    spec: &FlipItSpec,
    config: &ObjectiveConfig,
) -> Result<(Vec<MetricReport>, f64)> {
    config.validate()?;
    let reports = match config.objective {
        ObjectiveKind::PairwiseBrDiff => config
            .models
            .iter()
            .map(|m| evaluate_model_spec(spec, m))
            .collect::<Result<Vec<_>>>()?,
        ObjectiveKind::TraitSweepSpread { sweep_trait } => {
            let schedule = sweep_trait.default_schedule();
            sweep_metrics(spec, &config.models[0], sweep_trait, &schedule)?.reports
        }
    };
    let objective = objective_from_reports(&reports);
    Ok((reports, objective))
}

/// Decodes and scores one genome. Degenerate games score negative infinity
/// and are not evaluated.
pub fn evaluate_genome(genome: &GameGenome, config: &ObjectiveConfig) -> Result<Trial> {
    let decoded = decode_genome(genome, config)?;
    let (reports, objective) = if decoded.degenerate {
        (Vec::new(), f64::NEG_INFINITY)
    } else {
        evaluate_spec_objective(&decoded.spec, config)?
    };
    Ok(Trial {
        index: 0,
        generation: 0,
        member: 0,
        genome: genome.clone(),
        spec: decoded.spec,
        degenerate: decoded.degenerate,
        reports,
        objective,
        parent: None,
        perturbation: None,
    })
}

/// Search outcome: every trial ranked best-first, and the argmax game.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OptimizeResult {
    pub trials: Vec<Trial>,
    pub best: FlipItSpec,
}

/// Runs the population-based search over genomes. The trial list is a pure
/// function of the seed; evaluations inside a generation run concurrently.
pub fn optimize(
    config: &ObjectiveConfig,
    population_size: usize,
    generations: usize,
    seed: u64,
) -> Result<OptimizeResult> {
    config.validate()?;
    if population_size < 2 {
        return Err(Error::PopulationTooSmall(population_size));
    }
    let space = config.space();
    let side: Mutex<Vec<Option<Trial>>> =
        Mutex::new(vec![None; population_size * (generations + 1)]);
    let optim_trials = run_pbt(
        &space,
        population_size,
        generations,
        seed,
        |index, genes| {
            let genome = GameGenome::from_genes(genes, config.n_nodes)?;
            let trial = evaluate_genome(&genome, config)?;
            let objective = trial.objective;
            side.lock().expect("side channel lock")[index] = Some(trial);
            Ok(objective)
        },
    )?;
    let side = side.into_inner().expect("side channel lock");
    let by_index: Vec<Trial> = optim_trials
        .iter()
        .map(|ot: &OptimTrial| {
            let mut trial = side[ot.index].clone().expect("every trial evaluated");
            trial.index = ot.index;
            trial.generation = ot.generation;
            trial.member = ot.member;
            trial.parent = ot.parent;
            trial.perturbation = ot.perturbation.clone();
            trial
        })
        .collect();
    let order = ranked_indices(&optim_trials);
    if by_index[order[0]].degenerate {
        return Err(Error::InvalidParam(
            "every sampled genome was degenerate".into(),
        ));
    }
    let best = by_index[order[0]].spec.clone();
    let trials: Vec<Trial> = order.into_iter().map(|i| by_index[i].clone()).collect();
    Ok(OptimizeResult { trials, best })
}

fn gene_names(n_nodes: usize) -> Vec<String> {
    let mut names = Vec::with_capacity(GameGenome::n_genes(n_nodes));
    for i in 0..n_nodes {
        for j in i + 1..n_nodes {
            names.push(format!("e{i}_{j}"));
        }
    }
    for i in 1..n_nodes {
        names.push(format!("r{i}"));
    }
    names.push("threshold".to_string());
    names
}

/// Writes `best_game.json`, the execution-ordered `trials.csv`, and, when the
/// model set contains a learner to sweep, the `summary.csv` comparing trait
/// sweep spreads on the original five-node game against the best generated
/// game. Byte-identical for identical inputs.
pub fn report(
    result: &OptimizeResult,
    config: &ObjectiveConfig,
    out_dir: impl AsRef<Path>,
) -> Result<Vec<PathBuf>> {
    config.validate()?;
    if result.trials.is_empty() {
        return Err(Error::InvalidParam("no trials to report".into()));
    }
    let out_dir = out_dir.as_ref();
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir.display().to_string(), e))?;
    let mut written = Vec::new();

    let path = out_dir.join("best_game.json");
    std::fs::write(&path, result.best.to_json_string())
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    written.push(path);

    let mut by_index: Vec<&Trial> = result.trials.iter().collect();
    by_index.sort_by_key(|t| t.index);
    let mut csv = String::from("index,generation,member,objective,degenerate,parent,perturbation");
    for name in gene_names(config.n_nodes) {
        csv.push(',');
        csv.push_str(&name);
    }
    csv.push('\n');
    for t in by_index {
        csv.push_str(&format!(
            "{},{},{},{},{},{},{}",
            t.index,
            t.generation,
            t.member,
            t.objective,
            t.degenerate,
            t.parent.map(|p| p.to_string()).unwrap_or_default(),
            t.perturbation.clone().unwrap_or_default()
        ));
        for gene in t.genome.to_genes() {
            csv.push(',');
            csv.push_str(&gene.to_string());
        }
        csv.push('\n');
    }
    let path = out_dir.join("trials.csv");
    std::fs::write(&path, csv).map_err(|e| Error::io(path.display().to_string(), e))?;
    written.push(path);

    if let Some(base) = config
        .models
        .iter()
        .find(|m| matches!(m, ModelSpec::Srdq { .. }))
    {
        let original = if config.normalize {
            normalize_rewards(&FlipItSpec::original_five_node())?
        } else {
            FlipItSpec::original_five_node()
        };
        let mut summary = String::from(
            "trait,original_spread_utility,original_spread_br,best_spread_utility,best_spread_br\n",
        );
        for sweep_trait in [SweepTrait::Gamma, SweepTrait::Lambda, SweepTrait::Rho] {
            let schedule = sweep_trait.default_schedule();
            let on_original = sweep_metrics(&original, base, sweep_trait, &schedule)?;
            let on_best = sweep_metrics(&result.best, base, sweep_trait, &schedule)?;
            summary.push_str(&format!(
                "{},{},{},{},{}\n",
                sweep_trait.name(),
                on_original.spread_utility,
                on_original.spread_br,
                on_best.spread_utility,
                on_best.spread_br
            ));
        }
        let path = out_dir.join("summary.csv");
        std::fs::write(&path, summary).map_err(|e| Error::io(path.display().to_string(), e))?;
        written.push(path);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn qr(lambda: f64) -> ModelSpec {
        ModelSpec::Qr { lambda }
    }

    fn tiny_srdq() -> ModelSpec {
        ModelSpec::Srdq {
            gamma: 0.8,
            alpha: 0.05,
            rho: 0.5,
            lambda: 2.0,
            episodes: 40,
            seed: 9,
            n_seeds: 1,
        }
    }

    fn two_node_config(models: Vec<ModelSpec>) -> ObjectiveConfig {
        ObjectiveConfig {
            n_nodes: 2,
            rounds: 2,
            ..ObjectiveConfig::new(models)
        }
    }

    fn n2_genome(edge: f64, reward: f64, threshold: f64) -> GameGenome {
        GameGenome {
            edge_costs: vec![edge],
            node_rewards: vec![reward],
            threshold,
        }
    }

    fn one_node_spec() -> FlipItSpec {
        FlipItSpec {
            variant: Variant::Original,
            n_nodes: 1,
            rounds: 2,
            node_rewards: vec![4.0],
            node_costs: vec![2.0],
            edge_costs: vec![],
            threshold: 0.0,
            initial_ownership: vec![],
        }
    }

    #[test]
    fn decode_builds_symmetric_graph_with_home_base() {
        let config = ObjectiveConfig {
            n_nodes: 3,
            rounds: 2,
            normalize: false,
            ..ObjectiveConfig::new(vec![qr(0.0), qr(1.0)])
        };
        let genome = GameGenome {
            edge_costs: vec![0.5, 0.2, 0.9],
            node_rewards: vec![0.4, 0.7],
            threshold: 0.3,
        };
        let decoded = decode_genome(&genome, &config).unwrap();
        let spec = &decoded.spec;
        assert_eq!(spec.variant, Variant::Graph);
        assert_eq!(spec.n_nodes, 3);
        assert_eq!(spec.rounds, 2);
        assert_eq!(spec.node_rewards, vec![0.0, 0.4, 0.7]);
        assert_eq!(spec.edge_costs[0][1], 0.5);
        assert_eq!(spec.edge_costs[1][0], 0.5);
        assert_eq!(spec.edge_costs[0][2], 0.2);
        assert_eq!(spec.edge_costs[1][2], 0.9);
        assert!(spec.edge_present(0, 1));
        assert!(!spec.edge_present(0, 2));
        assert!(spec.edge_present(1, 2));
        assert!(!decoded.degenerate);
    }

    #[test]
    fn decode_normalizes_rewards_to_unit_sum() {
        let config = ObjectiveConfig {
            n_nodes: 3,
            rounds: 2,
            ..ObjectiveConfig::new(vec![qr(0.0), qr(1.0)])
        };
        let genome = GameGenome {
            edge_costs: vec![0.5, 0.2, 0.9],
            node_rewards: vec![0.4, 0.7],
            threshold: 0.3,
        };
        let decoded = decode_genome(&genome, &config).unwrap();
        let spec = &decoded.spec;
        assert!((spec.total_reward() - 1.0).abs() < 1e-12);
        assert!((spec.node_rewards[1] - 0.4 / 1.1).abs() < 1e-12);
        // presence is scale invariant: costs and threshold shrink together
        assert!(spec.edge_present(0, 1));
        assert!(!spec.edge_present(0, 2));
        assert!(spec.edge_present(1, 2));
    }

    #[test]
    fn isolated_home_base_flags_degenerate() {
        let config = ObjectiveConfig {
            n_nodes: 3,
            rounds: 2,
            ..ObjectiveConfig::new(vec![qr(0.0), qr(1.0)])
        };
        let genome = GameGenome {
            edge_costs: vec![0.1, 0.2, 0.9],
            node_rewards: vec![0.4, 0.7],
            threshold: 0.5,
        };
        let decoded = decode_genome(&genome, &config).unwrap();
        assert!(decoded.degenerate);
        assert!(!decoded.spec.edge_present(0, 1));
        assert!(!decoded.spec.edge_present(0, 2));
        assert!(decoded.spec.edge_present(1, 2));
    }

    #[test]
    fn zero_total_reward_flags_degenerate() {
        let config = two_node_config(vec![qr(0.0), qr(1.0)]);
        let decoded = decode_genome(&n2_genome(0.8, 0.0, 0.1), &config).unwrap();
        assert!(decoded.degenerate);
        assert_eq!(decoded.spec.total_reward(), 0.0);
    }

    #[test]
    fn decode_rejects_out_of_bounds_genes() {
        let config = two_node_config(vec![qr(0.0), qr(1.0)]);
        for genome in [
            n2_genome(1.5, 0.5, 0.1),
            n2_genome(0.5, -0.1, 0.1),
            n2_genome(0.5, 0.5, f64::NAN),
            GameGenome {
                edge_costs: vec![0.5, 0.5],
                node_rewards: vec![0.5],
                threshold: 0.1,
            },
        ] {
            assert!(matches!(
                decode_genome(&genome, &config),
                Err(Error::GenomeBounds(_))
            ));
        }
    }

    #[test]
    fn genes_roundtrip_through_flat_layout() {
        let genome = GameGenome {
            edge_costs: vec![0.5, 0.2, 0.9],
            node_rewards: vec![0.4, 0.7],
            threshold: 0.3,
        };
        let genes = genome.to_genes();
        assert_eq!(genes.len(), GameGenome::n_genes(3));
        assert_eq!(GameGenome::from_genes(&genes, 3).unwrap(), genome);
        assert!(GameGenome::from_genes(&genes, 4).is_err());
    }

    #[test]
    fn identical_models_score_zero() {
        let config = two_node_config(vec![qr(2.0), qr(2.0)]);
        let trial = evaluate_genome(&n2_genome(0.4, 0.8, 0.2), &config).unwrap();
        assert!(!trial.degenerate);
        assert_eq!(trial.objective, 0.0);
        assert_eq!(trial.reports.len(), 2);
    }

    #[test]
    fn objective_matches_hand_enumerated_gap_on_one_node() {
        // One node, reward 4, cost 2, two rounds, the lone defender action
        // guards it. A uniform attacker eats a blocked attack half the time
        // (-1 per round, -2 total); a near-argmax attacker always passes and
        // both its metrics are 0. Gap: 2.
        let config = ObjectiveConfig::new(vec![qr(0.0), qr(1e6)]);
        let (reports, objective) = evaluate_spec_objective(&one_node_spec(), &config).unwrap();
        assert_eq!(reports.len(), 2);
        assert!((reports[0].br_utility - -2.0).abs() < 1e-9);
        assert!(reports[1].br_utility.abs() < 1e-9);
        assert!((objective - 2.0).abs() < 1e-9);
    }

    #[test]
    fn degenerate_genome_scores_negative_infinity() {
        let config = two_node_config(vec![qr(0.0), qr(1.0)]);
        let trial = evaluate_genome(&n2_genome(0.1, 0.8, 0.9), &config).unwrap();
        assert!(trial.degenerate);
        assert_eq!(trial.objective, f64::NEG_INFINITY);
        assert!(trial.reports.is_empty());
    }

    #[test]
    fn objective_is_symmetric_in_model_order() {
        let genome = n2_genome(0.6, 0.9, 0.3);
        let forward = two_node_config(vec![qr(0.2), ModelSpec::Lk { k: 1 }]);
        let reversed = two_node_config(vec![ModelSpec::Lk { k: 1 }, qr(0.2)]);
        let a = evaluate_genome(&genome, &forward).unwrap();
        let b = evaluate_genome(&genome, &reversed).unwrap();
        assert_eq!(a.objective, b.objective);
    }

    #[test]
    fn objective_recomputable_from_stored_reports() {
        let config = two_node_config(vec![qr(0.0), qr(1.0), qr(4.0)]);
        let trial = evaluate_genome(&n2_genome(0.4, 0.8, 0.2), &config).unwrap();
        assert_eq!(trial.reports.len(), 3);
        assert!((objective_from_reports(&trial.reports) - trial.objective).abs() < 1e-9);
    }

    #[test]
    fn sweep_spread_objective_stores_grid_reports() {
        let config = ObjectiveConfig {
            objective: ObjectiveKind::TraitSweepSpread {
                sweep_trait: SweepTrait::Lambda,
            },
            ..ObjectiveConfig::new(vec![qr(0.5), qr(2.0)])
        };
        let (reports, objective) = evaluate_spec_objective(&one_node_spec(), &config).unwrap();
        assert_eq!(reports.len(), 8);
        assert!((objective_from_reports(&reports) - objective).abs() < 1e-12);
        assert!(objective >= 0.0);
    }

    #[test]
    fn optimize_logs_every_generation_and_ranks_best_first() {
        let config = two_node_config(vec![qr(0.0), qr(3.0)]);
        let result = optimize(&config, 4, 2, 1).unwrap();
        assert_eq!(result.trials.len(), 12);
        let mut indices: Vec<usize> = result.trials.iter().map(|t| t.index).collect();
        indices.sort_unstable();
        assert_eq!(indices, (0..12).collect::<Vec<_>>());
        for pair in result.trials.windows(2) {
            assert!(pair[0].objective >= pair[1].objective);
        }
        assert_eq!(result.best, result.trials[0].spec);
        assert!(!result.trials[0].degenerate);
    }

    #[test]
    fn optimize_provenance_chains_to_previous_generation() {
        let config = two_node_config(vec![qr(0.0), qr(3.0)]);
        let result = optimize(&config, 8, 3, 5).unwrap();
        let pop = 8;
        let mut exec: Vec<&Trial> = result.trials.iter().collect();
        exec.sort_by_key(|t| t.index);
        for t in &exec {
            assert_eq!(t.index / pop, t.generation);
            assert_eq!(t.index % pop, t.member);
            match t.parent {
                None => assert_eq!(t.generation, 0),
                Some(p) => {
                    assert_eq!(p / pop, t.generation - 1);
                    if t.perturbation.is_none() {
                        assert_eq!(p % pop, t.member);
                        assert_eq!(exec[p].genome, t.genome);
                    }
                }
            }
        }
        assert!(exec
            .iter()
            .any(|t| t.generation > 0 && t.perturbation.is_some()));
    }

    #[test]
    fn optimize_is_seed_reproducible() {
        let config = two_node_config(vec![qr(0.0), qr(3.0)]);
        let a = optimize(&config, 4, 2, 7).unwrap();
        let b = optimize(&config, 4, 2, 7).unwrap();
        assert_eq!(a.trials.len(), b.trials.len());
        for (x, y) in a.trials.iter().zip(&b.trials) {
            assert_eq!(x.index, y.index);
            assert_eq!(x.genome, y.genome);
            assert_eq!(x.objective.to_bits(), y.objective.to_bits());
        }
        let c = optimize(&config, 4, 2, 8).unwrap();
        assert_ne!(
            a.trials.last().unwrap().genome,
            c.trials.last().unwrap().genome
        );
    }

    #[test]
    fn optimize_rejects_tiny_population() {
        let config = two_node_config(vec![qr(0.0), qr(3.0)]);
        assert!(matches!(
            optimize(&config, 1, 2, 7),
            Err(Error::PopulationTooSmall(1))
        ));
    }

    #[test]
    fn config_requires_two_models() {
        let config = ObjectiveConfig::new(vec![qr(1.0)]);
        assert!(matches!(config.validate(), Err(Error::ModelSetTooSmall)));
        assert!(matches!(
            evaluate_genome(&n2_genome(0.4, 0.8, 0.2), &config),
            Err(Error::ModelSetTooSmall)
        ));
    }

    #[test]
    fn config_serde_fills_defaults() {
        let config: ObjectiveConfig =
            serde_json::from_str(r#"{"models":[{"family":"qr","lambda":1.0}]}"#).unwrap();
        assert_eq!(config.n_nodes, 5);
        assert_eq!(config.rounds, 5);
        assert_eq!(config.r_max, 1.0);
        assert_eq!(config.c_max, 1.0);
        assert!(config.normalize);
        assert_eq!(config.objective, ObjectiveKind::PairwiseBrDiff);

        let full = ObjectiveConfig {
            objective: ObjectiveKind::TraitSweepSpread {
                sweep_trait: SweepTrait::Rho,
            },
            ..ObjectiveConfig::new(vec![qr(1.0), tiny_srdq()])
        };
        let text = serde_json::to_string(&full).unwrap();
        let back: ObjectiveConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, full);
    }

    #[test]
    fn report_writes_best_game_trials_and_summary() {
        let dir = tempfile::tempdir().unwrap();
        let config = two_node_config(vec![qr(1.0), tiny_srdq()]);
        let result = optimize(&config, 4, 1, 3).unwrap();
        let files = report(&result, &config, dir.path()).unwrap();
        assert_eq!(files.len(), 3);

        let best: FlipItSpec =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("best_game.json")).unwrap())
                .unwrap();
        assert_eq!(best, result.best);

        let trials = std::fs::read_to_string(dir.path().join("trials.csv")).unwrap();
        let lines: Vec<&str> = trials.lines().collect();
        assert_eq!(lines.len(), 1 + 8);
        assert_eq!(
            lines[0],
            "index,generation,member,objective,degenerate,parent,perturbation,e0_1,r1,threshold"
        );
        assert!(lines[1].starts_with("0,0,0,"));

        let summary = std::fs::read_to_string(dir.path().join("summary.csv")).unwrap();
        let lines: Vec<&str> = summary.lines().collect();
        assert_eq!(lines.len(), 4);
        assert_eq!(
            lines[0],
            "trait,original_spread_utility,original_spread_br,best_spread_utility,best_spread_br"
        );
        assert!(lines[1].starts_with("gamma,"));
        assert!(lines[2].starts_with("lambda,"));
        assert!(lines[3].starts_with("rho,"));
    }

    #[test]
    fn report_skips_summary_without_a_learner() {
        let dir = tempfile::tempdir().unwrap();
        let config = two_node_config(vec![qr(0.0), qr(3.0)]);
        let result = optimize(&config, 4, 1, 3).unwrap();
        let files = report(&result, &config, dir.path()).unwrap();
        assert_eq!(files.len(), 2);
        assert!(!dir.path().join("summary.csv").exists());
    }

    #[test]
    fn report_is_byte_identical_across_reruns() {
        let config = two_node_config(vec![qr(1.0), tiny_srdq()]);
        let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
        let mut outputs = Vec::new();
        for dir in &dirs {
            let result = optimize(&config, 4, 1, 21).unwrap();
            let files = report(&result, &config, dir.path()).unwrap();
            let bytes: Vec<Vec<u8>> = files.iter().map(|f| std::fs::read(f).unwrap()).collect();
            outputs.push(bytes);
        }
        assert_eq!(outputs[0], outputs[1]);
    }
}
