//! `flipgen`: one entry point wiring the library into reproducible
//! experiments. Every run writes its artifacts plus a manifest (resolved
//! config, seed, artifact hashes) into the output directory, and identical
//! configs with identical seeds produce byte-identical files.

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};

use flipgen::fitting::{
    self, Dataset, ModelFamily, ParticipantProfile, Sd3Trait, EPISODES_FILE, GAMES_DIR,
    PROFILES_FILE,
};
use flipgen::game::{
    initial_state, legal_actions, normalize_rewards, require_valid, state_index, step, FlipItSpec,
};
use flipgen::generator::{self, ObjectiveConfig};
use flipgen::models::ModelSpec;
use flipgen::optim::derive_seed;
use flipgen::policy::{BehavioralPolicy, Role};
use flipgen::solvers::{evaluate_model_spec, sweep_metrics, SweepTrait};
use flipgen::srdq::{self, SRDQParams};

#[derive(Parser)]
#[command(
    name = "flipgen",
    version,
    about = "Flip-it games, behavioral attacker models, solvers, fitting, and game generation",
    subcommand_required = true,
    arg_required_else_help = true
)]
struct Cli {
    /// Worker threads for parallel evaluation (default: all cores)
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Seed override; precedence: this flag, FLIPGEN_SEED, config file, 42
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory for artifacts and the run manifest
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Roll out an attacker model against the uniform defender, one JSON line
    /// per step
    Simulate {
        /// `original` or a path to a game JSON file
        #[arg(long, default_value = "original")]
        game: String,
        /// Inline model JSON or a path to a model JSON file
        #[arg(long)]
        model: String,
        #[arg(long, default_value_t = 1)]
        episodes: usize,
        /// Rescale rewards, costs, and threshold so rewards sum to 1
        #[arg(long)]
        normalize: bool,
    },
    /// Train the distributional learner against the uniform defender and
    /// write its Q-table
    Train {
        #[arg(long, default_value = "original")]
        game: String,
        #[arg(long)]
        gamma: f64,
        #[arg(long)]
        rho: f64,
        #[arg(long, default_value_t = 1.0)]
        lambda: f64,
        #[arg(long, default_value_t = srdq::DEFAULT_ALPHA)]
        alpha: f64,
        #[arg(long, default_value_t = srdq::DEFAULT_EPISODES)]
        episodes: usize,
        #[arg(long)]
        normalize: bool,
    },
    /// Fit a model family to a dataset directory by maximum likelihood
    Fit {
        /// Dataset directory (profiles.csv, episodes.jsonl, games/)
        #[arg(long)]
        data: PathBuf,
        /// qr, lk, qlk, or srdq
        #[arg(long)]
        family: String,
        /// Cluster on an SD3 trait (mach, narc, psych) before fitting
        #[arg(long)]
        cluster: Option<String>,
        /// Selection quantile for clustering, in (0, 1)
        #[arg(long, default_value_t = 0.75)]
        quantile: f64,
        /// Total search trials
        #[arg(long, default_value_t = 400)]
        budget: usize,
        #[arg(long, default_value_t = 0.8)]
        train_frac: f64,
    },
    /// Exactly evaluate an attacker model: utility vs the uniform defender
    /// and vs the best-responding defender
    Evaluate {
        #[arg(long, default_value = "original")]
        game: String,
        #[arg(long)]
        model: String,
        #[arg(long)]
        normalize: bool,
    },
    /// Sweep one model trait over its standard grid and emit per-point
    /// metrics as CSV and JSON
    Sweep {
        #[arg(long, default_value = "original")]
        game: String,
        /// gamma, lambda, or rho
        #[arg(long = "trait")]
        sweep_trait: String,
        /// Base model; defaults to the learner at gamma 0.9, rho 0.5,
        /// lambda 3, 10 seeds
        #[arg(long)]
        model: Option<String>,
        #[arg(long)]
        normalize: bool,
    },
    /// Search for a game that separates a model set, then write the best
    /// game, the trial log, and the trait-spread summary
    Generate {
        /// JSON config: models, objective, bounds, population, generations,
        /// seed
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        population: Option<usize>,
        #[arg(long)]
        generations: Option<usize>,
    },
    /// Sample a synthetic dataset from a model and write it in the dataset
    /// directory layout
    Synth {
        #[arg(long, default_value = "original")]
        game: String,
        #[arg(long)]
        model: String,
        #[arg(long, default_value_t = 10)]
        participants: usize,
        #[arg(long, default_value_t = 20)]
        episodes_per: usize,
        #[arg(long, default_value_t = 3.0)]
        mach: f64,
        #[arg(long, default_value_t = 3.0)]
        narc: f64,
        #[arg(long, default_value_t = 3.0)]
        psych: f64,
        /// Game id recorded in the dataset; defaults to the game's label
        #[arg(long)]
        game_id: Option<String>,
        #[arg(long)]
        normalize: bool,
    },
}

enum CliError {
    Config(String),
    Runtime(String),
}

impl CliError {
    fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 3,
            CliError::Runtime(_) => 1,
        }
    }

    fn line(&self) -> String {
        let (kind, message) = match self {
            CliError::Config(m) => ("config", m),
            CliError::Runtime(m) => ("runtime", m),
        };
        json!({"error": {"kind": kind, "exit": self.exit_code(), "message": message}}).to_string()
    }
}

type CliResult<T> = Result<T, CliError>;

trait Classify<T> {
    /// Marks an error as bad input (exit 3).
    fn config(self) -> CliResult<T>;
    /// Marks an error as an execution failure (exit 1).
    fn runtime(self) -> CliResult<T>;
}

impl<T, E: Display> Classify<T> for Result<T, E> {
    fn config(self) -> CliResult<T> {
        self.map_err(|e| CliError::Config(e.to_string()))
    }

    fn runtime(self) -> CliResult<T> {
        self.map_err(|e| CliError::Runtime(e.to_string()))
    }
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => match e.kind() {
            ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                let _ = e.print();
                std::process::exit(0);
            }
            _ => {
                eprintln!(
                    "{}",
                    json!({"error": {"kind": "usage", "exit": 2, "message": e.to_string()}})
                );
                std::process::exit(2);
            }
        },
    };
    match dispatch(cli) {
        Ok(()) => {}
        Err(e) => {
            eprintln!("{}", e.line());
            std::process::exit(e.exit_code());
        }
    }
}

fn dispatch(cli: Cli) -> CliResult<()> {
    if let Some(jobs) = cli.jobs {
        if jobs < 1 {
            return Err(CliError::Config("--jobs must be >= 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .runtime()?;
    }
    fs::create_dir_all(&cli.out).runtime()?;
    match &cli.command {
        Command::Simulate {
            game,
            model,
            episodes,
            normalize,
        } => simulate(&cli, game, model, *episodes, *normalize),
        Command::Train {
            game,
            gamma,
            rho,
            lambda,
            alpha,
            episodes,
            normalize,
        } => train(&cli, game, *gamma, *rho, *lambda, *alpha, *episodes, *normalize),
        Command::Fit {
            data,
            family,
            cluster,
            quantile,
            budget,
            train_frac,
        } => fit(&cli, data, family, cluster.as_deref(), *quantile, *budget, *train_frac),
        Command::Evaluate {
            game,
            model,
            normalize,
        } => evaluate(&cli, game, model, *normalize),
        Command::Sweep {
            game,
            sweep_trait,
            model,
            normalize,
        } => sweep(&cli, game, sweep_trait, model.as_deref(), *normalize),
        Command::Generate {
            config,
            population,
            generations,
        } => generate(&cli, config, *population, *generations),
        Command::Synth {
            game,
            model,
            participants,
            episodes_per,
            mach,
            narc,
            psych,
            game_id,
            normalize,
        } => synth(
            &cli,
            game,
            model,
            *participants,
            *episodes_per,
            [*mach, *narc, *psych],
            game_id.as_deref(),
            *normalize,
        ),
    }
}

/// Seed precedence: `--seed` flag, then `FLIPGEN_SEED`, then the config
/// file's seed, then 42.
fn resolve_seed(flag: Option<u64>, config: Option<u64>) -> CliResult<u64> {
    if let Some(s) = flag {
        return Ok(s);
    }
    if let Ok(text) = std::env::var("FLIPGEN_SEED") {
        return text
            .parse::<u64>()
            .map_err(|_| CliError::Config(format!("FLIPGEN_SEED `{text}` is not a u64")));
    }
    Ok(config.unwrap_or(42))
}

/// Loads `original` or a spec file, optionally normalized; returns the spec
/// and a short label for reports.
fn load_game(arg: &str, normalize: bool) -> CliResult<(FlipItSpec, String)> {
    let (spec, label) = if arg == "original" {
        (FlipItSpec::original_five_node(), "original".to_string())
    } else {
        let path = Path::new(arg);
        let spec = FlipItSpec::from_json_file(path).config()?;
        let label = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| arg.to_string());
        (spec, label)
    };
    let spec = if normalize {
        normalize_rewards(&spec).config()?
    } else {
        spec
    };
    require_valid(&spec).config()?;
    Ok((spec, label))
}

/// Accepts inline JSON (leading `{`) or a path to a model JSON file.
fn load_model(arg: &str) -> CliResult<ModelSpec> {
    let text = if arg.trim_start().starts_with('{') {
        arg.to_string()
    } else {
        fs::read_to_string(arg).config()?
    };
    let model: ModelSpec = serde_json::from_str(&text).config()?;
    model.validate().config()?;
    Ok(model)
}

/// The learner's own seed participates in seed resolution as the config-file
/// source; the resolved seed is written back so the manifest pins it.
fn resolve_model_seed(cli: &Cli, model: &mut ModelSpec) -> CliResult<u64> {
    let config_seed = match model {
        ModelSpec::Srdq { seed, .. } => Some(*seed),
        _ => None,
    };
    let resolved = resolve_seed(cli.seed, config_seed)?;
    if let ModelSpec::Srdq { seed, .. } = model {
        *seed = resolved;
    }
    Ok(resolved)
}

fn write_artifact(out: &Path, name: &str, content: &str) -> CliResult<PathBuf> {
    let path = out.join(name);
    fs::write(&path, content).runtime()?;
    Ok(path)
}

/// Writes `manifest.json`: the command, its fully resolved config, the seed,
/// and a sha256 per artifact (keyed by path relative to the output
/// directory, which itself stays out of the manifest so reruns into
/// different directories compare equal).
fn write_manifest(
    out: &Path,
    command: &str,
    config: serde_json::Value,
    seed: u64,
    artifacts: &[PathBuf],
) -> CliResult<()> {
    let mut hashes = BTreeMap::new();
    for path in artifacts {
        let bytes = fs::read(path).runtime()?;
        let digest = Sha256::digest(&bytes);
        let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
        let name = path
            .strip_prefix(out)
            .unwrap_or(path)
            .to_string_lossy()
            .replace('\\', "/");
        hashes.insert(name, hex);
    }
    let manifest = json!({
        "command": command,
        "config": config,
        "seed": seed,
        "artifacts": hashes,
    });
    let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    text.push('\n');
    write_artifact(out, "manifest.json", &text)?;
    Ok(())
}

fn simulate(
    cli: &Cli,
    game: &str,
    model_arg: &str,
    episodes: usize,
    normalize: bool,
) -> CliResult<()> {
    if episodes < 1 {
        return Err(CliError::Config("--episodes must be >= 1".into()));
    }
    let (spec, _) = load_game(game, normalize)?;
    let mut model = load_model(model_arg)?;
    let seed = resolve_model_seed(cli, &mut model)?;
    let uniform_def = BehavioralPolicy::uniform(&spec, Role::Defender).config()?;
    let attacker = model
        .attacker_policies(&spec, &uniform_def)
        .runtime()?
        .swap_remove(0);

    let initial = initial_state(&spec).runtime()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut lines = String::new();
    for episode in 0..episodes {
        let mut state = initial.clone();
        for round in 0..spec.rounds {
            let idx = state_index(&spec, &state);
            let (attacks, defends) = legal_actions(&spec, &state).runtime()?;
            let a = attacker.sample(idx, &mut rng).runtime()?;
            let d = uniform_def.sample(idx, &mut rng).runtime()?;
            let outcome = step(&spec, &state, attacks[a], defends[d]).runtime()?;
            lines.push_str(
                &json!({
                    "episode": episode,
                    "round": round,
                    "ownership": state.ownership,
                    "attacker": attacks[a],
                    "defender": defends[d],
                    "attacker_gain": outcome.attacker_gain,
                    "attacker_cost": outcome.attacker_cost,
                    "attacker_reward": outcome.attacker_reward,
                })
                .to_string(),
            );
            lines.push('\n');
            state = outcome.next_state;
        }
    }
    print!("{lines}");
    let artifact = write_artifact(&cli.out, "trajectories.jsonl", &lines)?;
    write_manifest(
        &cli.out,
        "simulate",
        json!({
            "game": game,
            "normalize": normalize,
            "model": model,
            "episodes": episodes,
        }),
        seed,
        &[artifact],
    )
}

#[allow(clippy::too_many_arguments)]
fn train(
    cli: &Cli,
    game: &str,
    gamma: f64,
    rho: f64,
    lambda: f64,
    alpha: f64,
    episodes: usize,
    normalize: bool,
) -> CliResult<()> {
    let (spec, _) = load_game(game, normalize)?;
    let seed = resolve_seed(cli.seed, None)?;
    let params = SRDQParams {
        gamma,
        alpha,
        rho,
        lambda,
        episodes,
        seed,
    };
    params.validate().config()?;
    let uniform_def = BehavioralPolicy::uniform(&spec, Role::Defender).config()?;
    let qtable = srdq::train(&spec, &uniform_def, &params).runtime()?;
    let artifact = write_artifact(&cli.out, "qtable.json", &qtable.to_json())?;
    println!(
        "{}",
        json!({"artifact": "qtable.json", "states": qtable.covered_states().count()})
    );
    write_manifest(
        &cli.out,
        "train",
        json!({"game": game, "normalize": normalize, "params": params}),
        seed,
        &[artifact],
    )
}

fn fit(
    cli: &Cli,
    data: &Path,
    family: &str,
    cluster: Option<&str>,
    quantile: f64,
    budget: usize,
    train_frac: f64,
) -> CliResult<()> {
    let family: ModelFamily = family.parse().config()?;
    let seed = resolve_seed(cli.seed, None)?;
    let dataset = fitting::parse_dataset(data).config()?;
    let dataset = match cluster {
        Some(name) => {
            let t: Sd3Trait = name.parse().config()?;
            fitting::cluster_by_type(&dataset, t, quantile).config()?
        }
        None => dataset,
    };
    let result = fitting::fit_model(family, &dataset, budget, train_frac, seed).runtime()?;
    let text = result.to_json_string();
    print!("{text}");
    let artifact = write_artifact(&cli.out, "fit_result.json", &text)?;
    write_manifest(
        &cli.out,
        "fit",
        json!({
            "data": data.to_string_lossy(),
            "family": family,
            "cluster": cluster,
            "quantile": quantile,
            "budget": budget,
            "train_frac": train_frac,
        }),
        seed,
        &[artifact],
    )
}

fn evaluate(cli: &Cli, game: &str, model_arg: &str, normalize: bool) -> CliResult<()> {
    let (spec, label) = load_game(game, normalize)?;
    let mut model = load_model(model_arg)?;
    let seed = resolve_model_seed(cli, &mut model)?;
    let mut report = evaluate_model_spec(&spec, &model).runtime()?;
    report.game_id = label;
    let mut text = serde_json::to_string_pretty(&report).expect("report serializes");
    text.push('\n');
    print!("{text}");
    let artifact = write_artifact(&cli.out, "report.json", &text)?;
    write_manifest(
        &cli.out,
        "evaluate",
        json!({"game": game, "normalize": normalize, "model": model}),
        seed,
        &[artifact],
    )
}

fn default_sweep_model(seed: u64) -> ModelSpec {
    ModelSpec::Srdq {
        gamma: 0.9,
        alpha: srdq::DEFAULT_ALPHA,
        rho: 0.5,
        lambda: 3.0,
        episodes: srdq::DEFAULT_EPISODES,
        seed,
        n_seeds: 10,
    }
}

fn sweep(
    cli: &Cli,
    game: &str,
    trait_name: &str,
    model_arg: Option<&str>,
    normalize: bool,
) -> CliResult<()> {
    let sweep_trait: SweepTrait = trait_name.parse().config()?;
    let (spec, label) = load_game(game, normalize)?;
    let (mut model, seed) = match model_arg {
        Some(arg) => {
            let mut m = load_model(arg)?;
            let seed = resolve_model_seed(cli, &mut m)?;
            (m, seed)
        }
        None => {
            let seed = resolve_seed(cli.seed, None)?;
            (default_sweep_model(seed), seed)
        }
    };
    if let ModelSpec::Srdq { seed: s, .. } = &mut model {
        *s = seed;
    }
    let schedule = sweep_trait.default_schedule();
    let mut result = sweep_metrics(&spec, &model, sweep_trait, &schedule).runtime()?;
    for r in &mut result.reports {
        r.game_id = label.clone();
    }
    let csv = result.to_csv();
    print!("{csv}");
    let csv_artifact = write_artifact(&cli.out, "sweep.csv", &csv)?;
    let json_artifact = write_artifact(&cli.out, "sweep.json", &result.to_json())?;
    write_manifest(
        &cli.out,
        "sweep",
        json!({
            "game": game,
            "normalize": normalize,
            "trait": sweep_trait,
            "model": model,
        }),
        seed,
        &[csv_artifact, json_artifact],
    )
}

fn default_population() -> usize {
    20
}

fn default_generations() -> usize {
    9
}

/// Search config file: the objective config plus run shape and seed.
#[derive(Serialize, Deserialize)]
struct GenerateConfig {
    #[serde(flatten)]
    objective: ObjectiveConfig,
    #[serde(default = "default_population")]
    population: usize,
    #[serde(default = "default_generations")]
    generations: usize,
    #[serde(default)]
    seed: Option<u64>,
}

fn generate(
    cli: &Cli,
    config_path: &Path,
    population: Option<usize>,
    generations: Option<usize>,
) -> CliResult<()> {
    let text = fs::read_to_string(config_path).config()?;
    let mut config: GenerateConfig = serde_json::from_str(&text).config()?;
    if let Some(p) = population {
        config.population = p;
    }
    if let Some(g) = generations {
        config.generations = g;
    }
    let seed = resolve_seed(cli.seed, config.seed)?;
    config.seed = Some(seed);
    config.objective.validate().config()?;
    let result =
        generator::optimize(&config.objective, config.population, config.generations, seed)
            .runtime()?;
    let files = generator::report(&result, &config.objective, &cli.out).runtime()?;
    println!(
        "{}",
        json!({
            "best_objective": result.trials[0].objective,
            "trials": result.trials.len(),
        })
    );
    write_manifest(
        &cli.out,
        "generate",
        serde_json::to_value(&config).expect("config serializes"),
        seed,
        &files,
    )
}

#[allow(clippy::too_many_arguments)]
fn synth(
    cli: &Cli,
    game: &str,
    model_arg: &str,
    participants: usize,
    episodes_per: usize,
    scores: [f64; 3],
    game_id: Option<&str>,
    normalize: bool,
) -> CliResult<()> {
    if participants < 1 {
        return Err(CliError::Config("--participants must be >= 1".into()));
    }
    if episodes_per < 1 {
        return Err(CliError::Config("--episodes-per must be >= 1".into()));
    }
    let (spec, label) = load_game(game, normalize)?;
    let game_id = game_id.unwrap_or(&label).to_string();
    if game_id.is_empty()
        || !game_id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
    {
        return Err(CliError::Config(format!(
            "game id `{game_id}` must be nonempty and use only [A-Za-z0-9_-]"
        )));
    }
    let model = load_model(model_arg)?;
    let seed = resolve_seed(cli.seed, None)?;
    let uniform_def = BehavioralPolicy::uniform(&spec, Role::Defender).config()?;
    let policy = model
        .attacker_policies(&spec, &uniform_def)
        .runtime()?
        .swap_remove(0);
    let mut parts = Vec::with_capacity(participants);
    for i in 0..participants {
        let profile = ParticipantProfile {
            participant_id: format!("p{i}"),
            mach: scores[0],
            narc: scores[1],
            psych: scores[2],
        };
        parts.push(
            fitting::generate_synthetic(
                &spec,
                &policy,
                &uniform_def,
                episodes_per,
                derive_seed(seed, i as u64),
                &profile,
                &game_id,
            )
            .runtime()?,
        );
    }
    let dataset = Dataset::merge(parts).runtime()?;
    dataset.write_to(&cli.out).runtime()?;
    let mut artifacts = vec![cli.out.join(PROFILES_FILE), cli.out.join(EPISODES_FILE)];
    for id in dataset.games.keys() {
        artifacts.push(cli.out.join(GAMES_DIR).join(format!("{id}.json")));
    }
    println!(
        "{}",
        json!({"participants": participants, "episodes": participants * episodes_per})
    );
    write_manifest(
        &cli.out,
        "synth",
        json!({
            "game": game,
            "normalize": normalize,
            "model": model,
            "participants": participants,
            "episodes_per": episodes_per,
            "scores": scores,
            "game_id": game_id,
        }),
        seed,
        &artifacts,
    )
}
