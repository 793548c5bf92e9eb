//! Seeded population-based search shared by model fitting and game
//! generation. Each generation evaluates the whole population, then the
//! bottom quartile copies genomes from the top quartile and perturbs them.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One searchable dimension. `Log` samples uniformly in log space; `Integer`
/// keeps genes on whole numbers (inclusive range).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scale", rename_all = "lowercase")]
pub enum ParamDim {
    Linear { lo: f64, hi: f64 },
    Log { lo: f64, hi: f64 },
    Integer { lo: i64, hi: i64 },
}

impl ParamDim {
    fn validate(&self) -> Result<()> {
        let ok = match *self {
            ParamDim::Linear { lo, hi } => lo.is_finite() && hi.is_finite() && lo <= hi,
            ParamDim::Log { lo, hi } => lo.is_finite() && hi.is_finite() && 0.0 < lo && lo <= hi,
            ParamDim::Integer { lo, hi } => lo <= hi,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParam(format!("bad dimension {self:?}")))
        }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        match *self {
            ParamDim::Linear { lo, hi } => lo + (hi - lo) * rng.random::<f64>(),
            ParamDim::Log { lo, hi } => {
                (lo.ln() + (hi.ln() - lo.ln()) * rng.random::<f64>()).exp()
            }
            ParamDim::Integer { lo, hi } => rng.random_range(lo..=hi) as f64,
        }
    }

    /// Forces a gene back into bounds (and onto the grid for integers).
    pub fn clamp(&self, x: f64) -> f64 {
        match *self {
            ParamDim::Linear { lo, hi } | ParamDim::Log { lo, hi } => x.clamp(lo, hi),
            ParamDim::Integer { lo, hi } => x.round().clamp(lo as f64, hi as f64),
        }
    }

    pub fn contains(&self, x: f64) -> bool {
        match *self {
            ParamDim::Linear { lo, hi } | ParamDim::Log { lo, hi } => (lo..=hi).contains(&x),
            ParamDim::Integer { lo, hi } => {
                x.fract() == 0.0 && (lo as f64..=hi as f64).contains(&x)
            }
        }
    }
}

/// Named search box.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamSpace {
    pub dims: Vec<(String, ParamDim)>,
}

impl ParamSpace {
    pub fn new(dims: Vec<(String, ParamDim)>) -> Result<ParamSpace> {
        if dims.is_empty() {
            return Err(Error::InvalidParam("empty parameter space".into()));
        }
        for (_, dim) in &dims {
            dim.validate()?;
        }
        Ok(ParamSpace { dims })
    }

    pub fn len(&self) -> usize {
        self.dims.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dims.is_empty()
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        self.dims.iter().map(|(_, d)| d.sample(rng)).collect()
    }
}

/// One evaluated candidate. `parent` is the global index of the trial this
/// genome continues (the copied source for exploited members, the member's
/// own previous trial for survivors); `perturbation` records the per-gene
/// explore ops applied after a copy.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OptimTrial {
    pub index: usize,
    pub generation: usize,
    pub member: usize,
    pub genes: Vec<f64>,
    pub objective: f64,
    pub parent: Option<usize>,
    pub perturbation: Option<String>,
}

const RESAMPLE_PROB: f64 = 0.25;
const FACTORS: [f64; 2] = [0.8, 1.2];

/// Runs the search and returns every trial in execution order (generation
/// major, member minor). The objective is maximized; it receives the global
/// trial index and the genes, and must not be NaN. Evaluations within a
/// generation run concurrently; everything else is a seeded single-threaded
/// reduction, so the log is a pure function of the seed.
pub fn run_pbt<F>(
    space: &ParamSpace,
    population: usize,
    generations: usize,
    seed: u64,
    objective: F,
) -> Result<Vec<OptimTrial>>
where
    F: Fn(usize, &[f64]) -> Result<f64> + Sync,
{
    if population < 1 {
        return Err(Error::InvalidParam("population must be >= 1".into()));
    }
    for (_, dim) in &space.dims {
        dim.validate()?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut genomes: Vec<Vec<f64>> = (0..population).map(|_| space.sample(&mut rng)).collect();
    let mut parents: Vec<Option<usize>> = vec![None; population];
    let mut perturbations: Vec<Option<String>> = vec![None; population];
    let mut trials: Vec<OptimTrial> = Vec::with_capacity(population * (generations + 1));

    for generation in 0..=generations {
        let base = trials.len();
        let objectives: Vec<f64> = genomes
            .par_iter()
            .enumerate()
            .map(|(member, genes)| objective(base + member, genes))
            .collect::<Result<_>>()?;
        for (member, value) in objectives.iter().enumerate() {
            if value.is_nan() {
                return Err(Error::InvalidParam(format!(
                    "objective returned NaN at trial {}",
                    base + member
                )));
            }
            trials.push(OptimTrial {
                index: base + member,
                generation,
                member,
                genes: genomes[member].clone(),
                objective: *value,
                parent: parents[member].take(),
                perturbation: perturbations[member].take(),
            });
        }
        if generation == generations {
            break;
        }

        let mut ranking: Vec<usize> = (0..population).collect();
        ranking.sort_by(|&a, &b| {
            objectives[b]
                .partial_cmp(&objectives[a])
                .expect("objectives are not NaN")
                .then(a.cmp(&b))
        });
        let quartile = population / 4;
        let top = &ranking[..quartile];
        let bottom: Vec<usize> = {
            let mut b = ranking[population - quartile..].to_vec();
            b.sort_unstable();
            b
        };

        for member in 0..population {
            parents[member] = Some(base + member);
        }
        for &member in &bottom {
            let source = top[rng.random_range(0..top.len())];
            let mut genes = trials[base + source].genes.clone();
            let mut ops = Vec::with_capacity(genes.len());
            for (gene, (_, dim)) in genes.iter_mut().zip(&space.dims) {
                if rng.random::<f64>() < RESAMPLE_PROB {
                    *gene = dim.sample(&mut rng);
                    ops.push("resample".to_string());
                } else {
                    let factor = FACTORS[rng.random_range(0..FACTORS.len())];
                    *gene = dim.clamp(*gene * factor);
                    ops.push(format!("*{factor}"));
                }
                debug_assert!(dim.contains(*gene));
            }
            genomes[member] = genes;
            parents[member] = Some(base + source);
            perturbations[member] = Some(ops.join(";"));
        }
    }
    Ok(trials)
}

/// Stateless per-stream seed derivation (splitmix64 finalizer), so nested
/// seeded work never shares or perturbs a parent RNG stream.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ 0x9E37_79B9_7F4A_7C15u64.wrapping_mul(stream.wrapping_add(1));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Trial indices ordered best first (objective descending, ties by lower
/// index).
pub fn ranked_indices(trials: &[OptimTrial]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..trials.len()).collect();
    order.sort_by(|&a, &b| {
        trials[b]
            .objective
            .partial_cmp(&trials[a].objective)
            .expect("objectives are not NaN")
            .then(a.cmp(&b))
    });
    order
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_space(n: usize) -> ParamSpace {
        ParamSpace::new(
            (0..n)
                .map(|i| (format!("g{i}"), ParamDim::Linear { lo: 0.0, hi: 1.0 }))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn trial_log_has_population_times_generations_rows() {
        let space = unit_space(3);
        let trials = run_pbt(&space, 4, 0, 11, |_, _| Ok(0.0)).unwrap();
        assert_eq!(trials.len(), 4);
        let trials = run_pbt(&space, 8, 5, 11, |_, _| Ok(0.0)).unwrap();
        assert_eq!(trials.len(), 8 * 6);
        for (i, t) in trials.iter().enumerate() {
            assert_eq!(t.index, i);
            assert_eq!(t.generation, i / 8);
            assert_eq!(t.member, i % 8);
        }
    }

    #[test]
    fn genes_stay_in_bounds_through_evolution() {
        let space = ParamSpace::new(vec![
            ("a".into(), ParamDim::Linear { lo: 0.2, hi: 0.9 }),
            ("b".into(), ParamDim::Log { lo: 0.01, hi: 20.0 }),
            ("c".into(), ParamDim::Integer { lo: 1, hi: 3 }),
        ])
        .unwrap();
        let trials = run_pbt(&space, 8, 10, 5, |_, g| Ok(g[0] + g[1] + g[2])).unwrap();
        for t in &trials {
            for (gene, (_, dim)) in t.genes.iter().zip(&space.dims) {
                assert!(dim.contains(*gene), "gene {gene} violates {dim:?}");
            }
        }
    }

    #[test]
    fn constant_objective_keeps_survivor_genomes() {
        let space = unit_space(2);
        let trials = run_pbt(&space, 8, 3, 7, |_, _| Ok(1.0)).unwrap();
        // ties rank by member index, so members 0..5 survive every generation
        for generation in 1..=3 {
            for member in 0..6 {
                let now = &trials[generation * 8 + member];
                let before = &trials[(generation - 1) * 8 + member];
                assert_eq!(now.genes, before.genes);
                assert_eq!(now.parent, Some(before.index));
                assert!(now.perturbation.is_none());
            }
            for member in 6..8 {
                let now = &trials[generation * 8 + member];
                assert!(now.perturbation.is_some());
                let parent = now.parent.unwrap();
                assert!(parent / 8 == generation - 1 && parent % 8 < 2);
            }
        }
    }

    #[test]
    fn same_seed_reproduces_the_log() {
        let space = unit_space(3);
        let a = run_pbt(&space, 6, 4, 99, |_, g| Ok(-g[0])).unwrap();
        let b = run_pbt(&space, 6, 4, 99, |_, g| Ok(-g[0])).unwrap();
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.genes, y.genes);
            assert_eq!(x.objective, y.objective);
            assert_eq!(x.parent, y.parent);
        }
        let c = run_pbt(&space, 6, 4, 100, |_, g| Ok(-g[0])).unwrap();
        assert_ne!(a[0].genes, c[0].genes);
    }

    #[test]
    fn search_concentrates_near_the_optimum() {
        let space = unit_space(1);
        let trials = run_pbt(&space, 8, 12, 3, |_, g| {
            let d = g[0] - 0.7;
            Ok(-d * d)
        })
        .unwrap();
        let best = ranked_indices(&trials)[0];
        assert!(
            (trials[best].genes[0] - 0.7).abs() < 0.05,
            "best gene {}",
            trials[best].genes[0]
        );
    }

    #[test]
    fn log_dimension_samples_cover_the_range() {
        let space = ParamSpace::new(vec![(
            "lambda".into(),
            ParamDim::Log { lo: 0.01, hi: 10.0 },
        )])
        .unwrap();
        let trials = run_pbt(&space, 200, 0, 17, |_, g| Ok(g[0])).unwrap();
        let values: Vec<f64> = trials.iter().map(|t| t.genes[0]).collect();
        assert!(values.iter().all(|&v| (0.01..=10.0).contains(&v)));
        assert!(values.iter().any(|&v| v < 0.1));
        assert!(values.iter().any(|&v| v > 1.0));
    }

    #[test]
    fn integer_dimension_stays_integral() {
        let space = ParamSpace::new(vec![("k".into(), ParamDim::Integer { lo: 1, hi: 3 })])
            .unwrap();
        let trials = run_pbt(&space, 8, 6, 23, |_, g| Ok(g[0])).unwrap();
        for t in &trials {
            assert_eq!(t.genes[0].fract(), 0.0);
            assert!((1.0..=3.0).contains(&t.genes[0]));
        }
    }

    #[test]
    fn ranking_breaks_ties_by_lower_index() {
        let space = unit_space(1);
        let trials = run_pbt(&space, 3, 0, 1, |_, _| Ok(5.0)).unwrap();
        assert_eq!(ranked_indices(&trials), vec![0, 1, 2]);
    }

    #[test]
    fn rejects_bad_inputs() {
        let space = unit_space(1);
        assert!(run_pbt(&space, 0, 1, 1, |_, _| Ok(0.0)).is_err());
        assert!(run_pbt(&space, 2, 1, 1, |_, _| Ok(f64::NAN)).is_err());
        assert!(ParamSpace::new(vec![]).is_err());
        assert!(ParamSpace::new(vec![(
            "x".into(),
            ParamDim::Log { lo: 0.0, hi: 1.0 }
        )])
        .is_err());
        assert!(ParamSpace::new(vec![(
            "x".into(),
            ParamDim::Linear { lo: 2.0, hi: 1.0 }
        )])
        .is_err());
    }
}
