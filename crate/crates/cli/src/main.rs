//! Operator entry point: exploration runs, dataset post-processing,
//! preference-pair extraction, analytics, and tree validation.
//!
//! Logs go to stderr; data goes to files. Every command with equal inputs and
//! seeds produces byte-identical outputs.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};

use trajtree_core::agents::{AgentSuite, Persona, RemoteAgentConfig};
use trajtree_core::analytics;
use trajtree_core::dpo;
use trajtree_core::engine::{
    canonicalize, exploration_stats, run_exploration,EngineConfig, EnvFactory, RunManifest,
    RunStats,
};
use trajtree_core::env::{RemoteEnvironment, SimAppSpec, SimEnvironment};
use trajtree_core::model::ExplorationTree;
use trajtree_core::postproc::{self, ExportPolicies, FilterPolicy};

/// Operator error with a process exit code: 2 for configuration problems
/// (field-level manifest errors), 1 for everything else.
struct CliError {
    code: u8,
    message: String,
}

impl CliError {
    fn config(message: impl Into<String>) -> Self {
        CliError { code: 2, message: message.into() }
    }

    fn run(message: impl Into<String>) -> Self {
        CliError { code: 1, message: message.into() }
    }
}

impl<E: std::error::Error> From<E> for CliError {
    fn from(e: E) -> Self {
        CliError::run(e.to_string())
    }
}

type CliResult = Result<(), CliError>;

#[derive(Parser)]
#[command(
    name = "trajtree",
    version,
    about = "Tree-structured GUI trajectory synthesis and analysis"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run tree exploration from a manifest and write tree files + run stats.
    Explore(ExploreArgs),
    /// Convert explored trees into step / sub-trajectory / long-trajectory
    /// datasets with a filtering stats report.
    Postprocess(PostprocessArgs),
    /// Mine dual preference pairs from branching nodes.
    ExtractDpo(ExtractDpoArgs),
    /// Diversity and efficiency metrics over explored forests.
    #[command(subcommand)]
    Analyze(AnalyzeCommand),
    /// Check structural invariants of serialized trees.
    Validate(ValidateArgs),
}

#[derive(Args)]
struct ExploreArgs {
    /// Run manifest (JSON).
    #[arg(long)]
    manifest: PathBuf,
    /// Override the manifest's worker count.
    #[arg(long)]
    workers: Option<usize>,
    /// Override the manifest's tree count.
    #[arg(long)]
    trees: Option<usize>,
    /// Output directory for tree files and run stats.
    #[arg(long, default_value = "runs")]
    output: PathBuf,
}

#[derive(Args)]
struct PostprocessArgs {
    /// Directory of tree JSON files.
    #[arg(long)]
    forest: PathBuf,
    /// Minimum per-dimension quality score.
    #[arg(long, default_value_t = 2)]
    min_dim: u8,
    /// Minimum total quality score.
    #[arg(long, default_value_t = 9)]
    min_total: u8,
    /// Minimum sub-trajectory length in steps.
    #[arg(long, default_value_t = 2)]
    min_sublen: usize,
    #[arg(long, default_value = "dataset")]
    output: PathBuf,
    /// Scripted agent persona used for summarization and scoring.
    #[arg(long, default_value = "diverse")]
    persona: String,
}

#[derive(Args)]
struct ExtractDpoArgs {
    #[arg(long)]
    forest: PathBuf,
    /// Cap on pairs per branching node.
    #[arg(long, default_value_t = 4)]
    cap: usize,
    /// Total pairs to sample depth-uniformly.
    #[arg(long, default_value_t = 1000)]
    target: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "pairs.jsonl")]
    output: PathBuf,
    /// Long-trajectory quality floor applied before mining.
    #[arg(long, default_value_t = 2)]
    min_dim: u8,
    #[arg(long, default_value_t = 9)]
    min_total: u8,
    #[arg(long, default_value = "diverse")]
    persona: String,
}

#[derive(Subcommand)]
enum AnalyzeCommand {
    /// Pairwise Jaccard redundancy matrix over quantized action sets.
    Jaccard(JaccardArgs),
    /// Type-token ratio of step goals, with seeded resampling.
    Ttr(TtrArgs),
    /// Cumulative unique-task counts under a TF-IDF cosine threshold.
    UniqueTasks(UniqueTasksArgs),
    /// Mean branching factor per depth.
    DepthHist(ForestReportArgs),
    /// Node-reuse efficiency: expansions per trajectory.
    Efficiency(EfficiencyArgs),
}

#[derive(Args)]
struct JaccardArgs {
    #[arg(long)]
    forest: PathBuf,
    #[arg(long, default_value_t = 64)]
    screen_w: u32,
    #[arg(long, default_value_t = 64)]
    screen_h: u32,
    #[arg(long, default_value_t = 20)]
    grid: u32,
    #[arg(long, default_value = "jaccard.json")]
    output: PathBuf,
    /// Also write the matrix as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct TtrArgs {
    /// Forest directory; step goals are taken from executed edges.
    #[arg(long)]
    forest: Option<PathBuf>,
    /// Alternatively, a text file with one goal per line.
    #[arg(long)]
    goals: Option<PathBuf>,
    #[arg(long, default_value_t = 500)]
    sample_size: usize,
    #[arg(long, default_value_t = 20)]
    repeats: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "ttr.json")]
    output: PathBuf,
}

#[derive(Args)]
struct UniqueTasksArgs {
    /// Forest directory; descriptions are the summarized trajectory
    /// instructions.
    #[arg(long)]
    forest: Option<PathBuf>,
    /// Alternatively, a text file with one description per line.
    #[arg(long)]
    descriptions: Option<PathBuf>,
    #[arg(long, default_value_t = 0.65)]
    threshold: f64,
    #[arg(long, default_value = "unique_tasks.json")]
    output: PathBuf,
}

#[derive(Args)]
struct ForestReportArgs {
    #[arg(long)]
    forest: PathBuf,
    #[arg(long, default_value = "depth_hist.json")]
    output: PathBuf,
}

#[derive(Args)]
struct EfficiencyArgs {
    #[arg(long)]
    forest: PathBuf,
    /// run_stats.json from the exploration run, for env-step totals.
    #[arg(long)]
    run_stats: Option<PathBuf>,
    #[arg(long, default_value = "efficiency.json")]
    output: PathBuf,
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(long)]
    forest: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Explore(args) => cmd_explore(args),
        Command::Postprocess(args) => cmd_postprocess(args),
        Command::ExtractDpo(args) => cmd_extract_dpo(args),
        Command::Analyze(args) => cmd_analyze(args),
        Command::Validate(args) => cmd_validate(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}

fn load_sim_spec(path: &Path) -> Result<SimAppSpec, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::config(format!("sim_spec: cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::config(format!("sim_spec: parse error in {}: {e}", path.display())))
}

fn build_agents(manifest: &RunManifest, spec: Option<&Arc<SimAppSpec>>) -> Result<AgentSuite, CliError> {
    let endpoint =
        std::env::var("REMOTE_AGENT_URL").ok().or_else(|| manifest.agent_endpoint.clone());
    if let Some(url) = endpoint {
        eprintln!("using remote agents at {url}");
        return Ok(AgentSuite::remote(RemoteAgentConfig::new(url)));
    }
    let persona = Persona::parse(&manifest.persona)
        .ok_or_else(|| CliError::config(format!("persona: unknown persona '{}'", manifest.persona)))?;
    let spec = spec.ok_or_else(|| {
        CliError::config("persona: scripted agents require a sim_spec environment".to_string())
    })?;
    Ok(AgentSuite::scripted(spec.clone(), persona, manifest.seed.unwrap_or_default()))
}

fn cmd_explore(args: ExploreArgs) -> CliResult {
    let mut manifest = RunManifest::from_file(&args.manifest).map_err(CliError::config)?;
    if let Some(workers) = args.workers {
        manifest.n_workers = workers;
    }
    if let Some(trees) = args.trees {
        manifest.trees = trees;
    }
    let problems = manifest.validate();
    if !problems.is_empty() {
        for p in &problems {
            eprintln!("manifest: {p}");
        }
        return Err(CliError::config(format!(
            "{} manifest field error(s) in {}",
            problems.len(),
            args.manifest.display()
        )));
    }

    let manifest_dir = args.manifest.parent().unwrap_or(Path::new("."));
    let (env_factory, spec): (EnvFactory, Option<Arc<SimAppSpec>>) =
        if let Some(spec_path) = &manifest.sim_spec {
            let resolved = if spec_path.is_absolute() {
                spec_path.clone()
            } else {
                manifest_dir.join(spec_path)
            };
            let spec = Arc::new(load_sim_spec(&resolved)?);
            let category = manifest.category.clone();
            let factory_spec = spec.clone();
            (
                Arc::new(move || {
                    Box::new(SimEnvironment::new(category.clone(), (*factory_spec).clone()))
                        as Box<dyn trajtree_core::env::Environment>
                }),
                Some(spec),
            )
        } else {
            let addr = manifest.remote_env.clone().expect("validated");
            (
                Arc::new(move || {
                    Box::new(RemoteEnvironment::connect(addr.clone()))
                        as Box<dyn trajtree_core::env::Environment>
                }),
                None,
            )
        };

    let agents = build_agents(&manifest, spec.as_ref())?;
    std::fs::create_dir_all(&args.output)
        .map_err(|e| CliError::run(format!("cannot create {}: {e}", args.output.display())))?;
    let mut config = EngineConfig::from_manifest(&manifest)
        .map_err(|e| CliError::config(e.to_string()))?;
    config.checkpoint = Some((args.output.clone(), manifest.checkpoint_interval));

    let outcome = run_exploration(&config, env_factory, &agents)?;
    if outcome.stats.unique_expansions == 0 && outcome.stats.corrupted_nodes > 0 {
        let detail = outcome
            .stats
            .corruption_reports
            .first()
            .map(|r| r.detail.clone())
            .unwrap_or_default();
        return Err(CliError::run(format!(
            "exploration made no progress ({} corrupted claims): {detail}",
            outcome.stats.corrupted_nodes
        )));
    }

    for tree in &outcome.forest {
        let path = args.output.join(format!("{}.json", tree.tree_id));
        let canonical = canonicalize(tree);
        std::fs::write(&path, serde_json::to_vec_pretty(&canonical)?)
            .map_err(|e| CliError::run(format!("cannot write {}: {e}", path.display())))?;
        let violations = canonical.validate();
        if !violations.is_empty() {
            return Err(CliError::run(format!(
                "produced tree {} fails validation: {}",
                tree.tree_id, violations[0]
            )));
        }
    }
    let stats_path = args.output.join("run_stats.json");
    std::fs::write(&stats_path, serde_json::to_vec_pretty(&outcome.stats)?)
        .map_err(|e| CliError::run(format!("cannot write {}: {e}", stats_path.display())))?;

    eprintln!(
        "explored {} tree(s): {} trajectories, {} expansions, {} env steps (replay included)",
        outcome.forest.len(),
        outcome.stats.trajectories,
        outcome.stats.unique_expansions,
        outcome.stats.env_steps_including_replay
    );
    Ok(())
}

/// Loads every tree_*.json in the directory, skipping unparsable files with a
/// warning. Errors when the directory yields no trees at all.
fn load_forest(dir: &Path) -> Result<Vec<ExplorationTree>, CliError> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| CliError::run(format!("cannot read {}: {e}", dir.display())))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension().is_some_and(|ext| ext == "json")
                && p.file_name()
                    .and_then(|n| n.to_str())
                    .is_some_and(|n| n.starts_with("tree_"))
        })
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(CliError::run(format!("no tree_*.json files in {}", dir.display())));
    }
    let mut forest = Vec::new();
    for path in paths {
        let parse = std::fs::read_to_string(&path)
            .map_err(|e| e.to_string())
            .and_then(|text| serde_json::from_str::<ExplorationTree>(&text).map_err(|e| e.to_string()));
        match parse {
            Ok(tree) => forest.push(tree),
            Err(e) => eprintln!("warning: skipping {}: {e}", path.display()),
        }
    }
    if forest.is_empty() {
        return Err(CliError::run(format!(
            "all tree files in {} were unreadable",
            dir.display()
        )));
    }
    Ok(forest)
}

fn scripted_suite_for(forest: &[ExplorationTree], persona: &str) -> Result<AgentSuite, CliError> {
    let persona = Persona::parse(persona)
        .ok_or_else(|| CliError::config(format!("persona: unknown persona '{persona}'")))?;
    // Post-processing agents only summarize/evaluate/reason over recorded
    // trajectories; the app spec is irrelevant, so an empty spec serves.
    let empty = Arc::new(SimAppSpec {
        screens: vec!["void".into()],
        widgets: BTreeMap::new(),
        initial_screen: "void".into(),
    });
    let seed = forest.first().map_or(0, |t| t.seed);
    Ok(AgentSuite::scripted(empty, persona, seed))
}

fn cmd_postprocess(args: PostprocessArgs) -> CliResult {
    let forest = load_forest(&args.forest)?;
    let agents = scripted_suite_for(&forest, &args.persona)?;
    let policies = ExportPolicies {
        filter: FilterPolicy { min_dimension: args.min_dim, min_total: args.min_total },
        min_sublen: args.min_sublen,
        ..ExportPolicies::default()
    };
    let bundle = postproc::export(&forest, &agents, &policies)?;

    std::fs::create_dir_all(&args.output)
        .map_err(|e| CliError::run(format!("cannot create {}: {e}", args.output.display())))?;
    for (name, records) in [
        ("step.jsonl", &bundle.step),
        ("sub_traj.jsonl", &bundle.sub_traj),
        ("long_traj.jsonl", &bundle.long_traj),
    ] {
        let path = args.output.join(name);
        std::fs::write(&path, postproc::records_to_jsonl(records))
            .map_err(|e| CliError::run(format!("cannot write {}: {e}", path.display())))?;
    }
    let stats_path = args.output.join("stats.json");
    std::fs::write(&stats_path, serde_json::to_vec_pretty(&bundle.stats)?)
        .map_err(|e| CliError::run(format!("cannot write {}: {e}", stats_path.display())))?;

    eprintln!("{:<10} {:>9} {:>9} {:>10}", "tier", "original", "filtered", "avg steps");
    for row in &bundle.stats.rows {
        eprintln!(
            "{:<10} {:>9} {:>9} {:>10.1}",
            row.tier.to_string(),
            row.original,
            row.filtered,
            row.avg_steps
        );
    }
    Ok(())
}

fn cmd_extract_dpo(args: ExtractDpoArgs) -> CliResult {
    let forest = load_forest(&args.forest)?;
    let agents = scripted_suite_for(&forest, &args.persona)?;

    // Kept long trajectories carry the goals the pairs are conditioned on.
    let filter = FilterPolicy { min_dimension: args.min_dim, min_total: args.min_total };
    let mut kept = Vec::new();
    for tree in &forest {
        let mut scored = Vec::new();
        for mut trajectory in postproc::collect_trajectories(tree) {
            let Ok(summary) = agents.summary.summarize(&trajectory) else { continue };
            let score = agents.evaluation.evaluate(&trajectory, &summary.global_instruction)?;
            trajectory.instruction = Some(summary.global_instruction);
            scored.push((trajectory, score));
        }
        kept.extend(postproc::quality_filter(scored, &filter).into_iter().map(|(t, _)| t));
    }

    let policy = dpo::PairPolicy { cap_per_node: args.cap, ..dpo::PairPolicy::default() };
    let pairs = dpo::extract_pairs(&forest, &kept, &policy);
    let sampled =
        dpo::sample_pairs(&pairs, args.cap, args.target, args.seed, policy.depth_buckets)?;

    std::fs::write(&args.output, dpo::pairs_to_jsonl(&sampled))
        .map_err(|e| CliError::run(format!("cannot write {}: {e}", args.output.display())))?;
    if sampled.is_empty() {
        eprintln!("notice: no branching nodes with paired successful branches were found");
    } else {
        eprintln!("wrote {} preference pair(s) from a pool of {}", sampled.len(), pairs.len());
    }
    Ok(())
}

fn heatmap(matrix: &[Vec<f64>]) -> String {
    let shade = |v: f64| match (v * 5.0) as u32 {
        0 => ' ',
        1 => '.',
        2 => ':',
        3 => '*',
        4 => '#',
        _ => '@',
    };
    let mut out = String::new();
    for row in matrix {
        for &v in row {
            out.push(shade(v));
            out.push(' ');
        }
        out.push('\n');
    }
    out
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> CliResult {
    std::fs::write(path, serde_json::to_vec_pretty(value).map_err(CliError::from)?)
        .map_err(|e| CliError::run(format!("cannot write {}: {e}", path.display())))
}

fn cmd_analyze(command: AnalyzeCommand) -> CliResult {
    match command {
        AnalyzeCommand::Jaccard(args) => {
            let forest = load_forest(&args.forest)?;
            let report =
                analytics::redundancy_matrix(&forest, args.screen_w, args.screen_h, args.grid)?;
            write_json(&args.output, &report)?;
            if let Some(csv_path) = &args.csv {
                let mut csv = String::new();
                for row in &report.matrix {
                    let cells: Vec<String> = row.iter().map(|v| format!("{v:.6}")).collect();
                    csv.push_str(&cells.join(","));
                    csv.push('\n');
                }
                std::fs::write(csv_path, csv)
                    .map_err(|e| CliError::run(format!("cannot write {}: {e}", csv_path.display())))?;
            }
            eprintln!("mean off-diagonal redundancy: {:.4}", report.mean_off_diagonal);
            eprint!("{}", heatmap(&report.matrix));
            Ok(())
        }
        AnalyzeCommand::Ttr(args) => {
            let goals = match (&args.forest, &args.goals) {
                (Some(dir), None) => {
                    let forest = load_forest(dir)?;
                    forest
                        .iter()
                        .flat_map(|tree| {
                            tree.nodes.values().filter_map(|n| {
                                (n.verification.is_some())
                                    .then(|| n.incoming.as_ref().map(|t| t.step_goal.clone()))
                                    .flatten()
                            })
                        })
                        .collect::<Vec<_>>()
                }
                (None, Some(file)) => std::fs::read_to_string(file)
                    .map_err(|e| CliError::run(format!("cannot read {}: {e}", file.display())))?
                    .lines()
                    .map(str::to_string)
                    .collect(),
                _ => {
                    return Err(CliError::config(
                        "ttr: provide exactly one of --forest or --goals".to_string(),
                    ))
                }
            };
            let overall = analytics::ttr(&goals)?;
            let samples =
                analytics::ttr_samples(&goals, args.sample_size, args.repeats, args.seed)?;
            #[derive(serde::Serialize)]
            struct TtrReport {
                goals: usize,
                overall: f64,
                sample_size: usize,
                repeats: usize,
                seed: u64,
                samples: Vec<f64>,
            }
            write_json(
                &args.output,
                &TtrReport {
                    goals: goals.len(),
                    overall,
                    sample_size: args.sample_size,
                    repeats: args.repeats,
                    seed: args.seed,
                    samples,
                },
            )?;
            eprintln!("ttr over {} goals: {overall:.4}", goals.len());
            Ok(())
        }
        AnalyzeCommand::UniqueTasks(args) => {
            let descriptions = match (&args.forest, &args.descriptions) {
                (Some(dir), None) => {
                    let forest = load_forest(dir)?;
                    let agents = scripted_suite_for(&forest, "diverse")?;
                    let mut instructions = Vec::new();
                    for tree in &forest {
                        for trajectory in postproc::collect_trajectories(tree) {
                            if let Ok(summary) = agents.summary.summarize(&trajectory) {
                                instructions.push(summary.global_instruction);
                            }
                        }
                    }
                    instructions
                }
                (None, Some(file)) => std::fs::read_to_string(file)
                    .map_err(|e| CliError::run(format!("cannot read {}: {e}", file.display())))?
                    .lines()
                    .map(str::to_string)
                    .collect(),
                _ => {
                    return Err(CliError::config(
                        "unique-tasks: provide exactly one of --forest or --descriptions"
                            .to_string(),
                    ))
                }
            };
            let report = analytics::unique_task_count(&descriptions, args.threshold)?;
            for &skipped in &report.skipped {
                eprintln!("warning: description {skipped} tokenizes to nothing; skipped");
            }
            write_json(&args.output, &report)?;
            eprintln!(
                "{} unique of {} descriptions at threshold {}",
                report.cumulative.last().copied().unwrap_or(0),
                descriptions.len(),
                args.threshold
            );
            Ok(())
        }
        AnalyzeCommand::DepthHist(args) => {
            let forest = load_forest(&args.forest)?;
            let histogram = analytics::branching_histogram(&forest);
            write_json(&args.output, &histogram)?;
            for (depth, factor) in &histogram {
                eprintln!("depth {depth:>3}: mean branching factor {factor:.3}");
            }
            Ok(())
        }
        AnalyzeCommand::Efficiency(args) => {
            let forest = load_forest(&args.forest)?;
            let mut stats = exploration_stats(&forest)?;
            if let Some(stats_path) = &args.run_stats {
                let text = std::fs::read_to_string(stats_path).map_err(|e| {
                    CliError::run(format!("cannot read {}: {e}", stats_path.display()))
                })?;
                let run_stats: RunStats = serde_json::from_str(&text)?;
                stats.env_steps_including_replay = Some(run_stats.env_steps_including_replay);
            }
            write_json(&args.output, &stats)?;
            eprintln!(
                "{} trajectories, {} unique expansions, {:.3} expansions/trajectory",
                stats.trajectories, stats.unique_expansions, stats.avg_expansions_per_trajectory
            );
            Ok(())
        }
    }
}

fn cmd_validate(args: ValidateArgs) -> CliResult {
    let forest = load_forest(&args.forest)?;
    let mut total = 0usize;
    for tree in &forest {
        for violation in tree.validate() {
            eprintln!("{}: {violation}", tree.tree_id);
            total += 1;
        }
    }
    if total > 0 {
        return Err(CliError::run(format!("{total} invariant violation(s)")));
    }
    eprintln!("{} tree(s) valid", forest.len());
    Ok(())
}
