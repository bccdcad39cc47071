//! Configuration-driven command-line front end.
//!
//! Exit codes: 0 success, 1 I/O failure, 2 invalid configuration or failed
//! validation, 3 numerical failure during a run.

use std::fmt::Write as _;
use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use serde::Deserialize;

use crate::algo::{Algorithm, MetricsWriter, RunConfig, Schedule, Simulation, DEFAULT_LOG_EVERY};
use crate::env::{
    chain_is_ergodic, feature_diagnostics, generate_features, generate_garnet, induced_chain, FeatureMap,
    NetworkedMdp,
};
use crate::error::Error;
use crate::graph::{
    build_metropolis_weights, build_push_sum_weights, check_weight_assumptions, is_strongly_connected, Check,
    DirectedGraph, EntrywiseConsensusSampler, FixedSampler, WeightSampler,
};
use crate::oracle::{self, stationary_distribution};
use crate::policy::{PolicyParams, SoftmaxPolicy, DEFAULT_THETA_MAX};
use crate::textio::fmt_f64;
use crate::SimRng;

pub const EXIT_OK: i32 = 0;
pub const EXIT_IO: i32 = 1;
pub const EXIT_INVALID: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

const CONFIG_HELP: &str = "\
Configuration (TOML) sections and defaults:
  [mdp]       kind = \"garnet\" (n_states, action_sizes, branching = 2, reward_scale = 1.0,
              seed = 0, reward_noise = 0.0) | \"file\" (path)
  [graph]     kind = \"cycle\" | \"complete\" | \"random-digraph\" (edge_prob = 0.3, seed = 0)
              | \"random-undirected\" (edge_prob = 0.5, seed = 0) | \"file\" (path);
              the number of agents is taken from the MDP
  [features]  kind = \"random\" (k, seed = 0) | \"file\" (path)
  [policy]    kind = \"zeros\" | \"random\" (scale = 1.0, seed = 0) | \"file\" (path);
              theta_max = 10.0
  [run]       algorithm = \"push-entrywise\" | \"push-full\" | \"consensus-entrywise\";
              horizon = 10000, seed = 0, seeds = 1, log_every = 100, oracle = true,
              freeze_actor = false, freeze_critic_learning = false,
              selection_probs = uniform (one row of K probabilities per agent)
  [run.schedule] c_omega = 1.0, c_theta = 1.0, nu_omega = 0.65, nu_theta = 0.85
  [output]    dir = \"out\"
  [validate]  sampler = \"entrywise-consensus\" | \"metropolis\" | \"identity\";
              n_samples = 2000, eta = 1e-6, tol = 1e-9, seed = 0
Relative paths are resolved against the configuration file's directory.";

#[derive(Debug, Parser)]
#[command(name = "netac", version, about = "Networked actor-critic experiments", after_help = CONFIG_HELP)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train with the configured algorithm, one run per seed.
    Run(CommonArgs),
    /// Exact evaluation of the configured policy.
    Oracle(CommonArgs),
    /// Check graph, chain, feature and weight-matrix conditions.
    Validate(CommonArgs),
    /// Pure averaging from random initial values (learning frozen).
    ConsensusTest(CommonArgs),
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// Path to the TOML configuration.
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory (overrides [output] dir).
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Number of seeds (overrides [run] seeds).
    #[arg(long)]
    pub seeds: Option<u64>,
    /// Metrics cadence (overrides [run] log_every).
    #[arg(long)]
    pub log_every: Option<u64>,
    /// Suppress progress output on stdout.
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub mdp: MdpSpec,
    pub graph: GraphSpec,
    pub features: FeatureSpec,
    #[serde(default)]
    pub policy: PolicySpec,
    #[serde(default)]
    pub run: RunSpec,
    #[serde(default)]
    pub output: OutputSpec,
    #[serde(default)]
    pub validate: ValidateSpec,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum MdpSpec {
    Garnet {
        n_states: usize,
        action_sizes: Vec<usize>,
        #[serde(default = "default_branching")]
        branching: usize,
        #[serde(default = "default_one")]
        reward_scale: f64,
        #[serde(default)]
        seed: u64,
        #[serde(default)]
        reward_noise: f64,
    },
    File {
        path: PathBuf,
    },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum GraphSpec {
    Cycle,
    Complete,
    RandomDigraph {
        #[serde(default = "default_digraph_prob")]
        edge_prob: f64,
        #[serde(default)]
        seed: u64,
    },
    RandomUndirected {
        #[serde(default = "default_undirected_prob")]
        edge_prob: f64,
        #[serde(default)]
        seed: u64,
    },
    File {
        path: PathBuf,
    },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum FeatureSpec {
    Random {
        k: usize,
        #[serde(default)]
        seed: u64,
    },
    File {
        path: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyKind {
    Zeros,
    Random,
    File,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicySpec {
    pub kind: PolicyKind,
    /// Half-width of the uniform draw for `random`.
    pub scale: f64,
    pub seed: u64,
    pub path: Option<PathBuf>,
    pub theta_max: f64,
}

impl Default for PolicySpec {
    fn default() -> Self {
        Self {
            kind: PolicyKind::Zeros,
            scale: 1.0,
            seed: 0,
            path: None,
            theta_max: DEFAULT_THETA_MAX,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSpec {
    pub algorithm: String,
    pub horizon: u64,
    pub seed: u64,
    pub seeds: u64,
    pub log_every: u64,
    pub oracle: bool,
    pub freeze_actor: bool,
    pub freeze_critic_learning: bool,
    pub selection_probs: Option<Vec<Vec<f64>>>,
    pub schedule: Schedule,
}

impl Default for RunSpec {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::PushEntrywise.tag().to_string(),
            horizon: 10_000,
            seed: 0,
            seeds: 1,
            log_every: DEFAULT_LOG_EVERY,
            oracle: true,
            freeze_actor: false,
            freeze_critic_learning: false,
            selection_probs: None,
            schedule: Schedule::default(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSpec {
    pub dir: PathBuf,
}

impl Default for OutputSpec {
    fn default() -> Self {
        Self { dir: PathBuf::from("out") }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SamplerKind {
    EntrywiseConsensus,
    Metropolis,
    Identity,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ValidateSpec {
    pub sampler: SamplerKind,
    pub n_samples: usize,
    pub eta: f64,
    pub tol: f64,
    pub seed: u64,
}

impl Default for ValidateSpec {
    fn default() -> Self {
        Self {
            sampler: SamplerKind::EntrywiseConsensus,
            n_samples: 2000,
            eta: 1e-6,
            tol: 1e-9,
            seed: 0,
        }
    }
}

fn default_branching() -> usize {
    2
}

fn default_one() -> f64 {
    1.0
}

fn default_digraph_prob() -> f64 {
    0.3
}

fn default_undirected_prob() -> f64 {
    0.5
}

/// Failure with its exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = if e.is_numeric() {
            EXIT_NUMERIC
        } else if matches!(e, Error::Io(_)) {
            EXIT_IO
        } else {
            EXIT_INVALID
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

fn invalid(message: impl Into<String>) -> CliError {
    CliError {
        code: EXIT_INVALID,
        message: message.into(),
    }
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError {
        code: EXIT_IO,
        message: format!("{}: {e}", path.display()),
    }
}

/// Reads and parses a configuration file.
pub fn load_config(path: &Path) -> std::result::Result<ExperimentConfig, CliError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    parse_config(&text)
}

pub fn parse_config(text: &str) -> std::result::Result<ExperimentConfig, CliError> {
    toml::from_str(text).map_err(|e| invalid(format!("invalid configuration: {e}")))
}

/// Per-instance seed derived from the master seed (splitmix64 finaliser).
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut z = master.wrapping_add((index + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Fully resolved experiment inputs.
#[derive(Debug, Clone)]
pub struct Instance {
    pub mdp: NetworkedMdp,
    pub graph: DirectedGraph,
    pub features: FeatureMap,
    pub policy: SoftmaxPolicy,
    pub theta0: PolicyParams,
}

fn read_input(base: &Path, path: &Path) -> std::result::Result<String, CliError> {
    let full = base.join(path);
    fs::read_to_string(&full).map_err(|e| io_err(&full, e))
}

pub fn build_mdp(spec: &MdpSpec, base: &Path) -> std::result::Result<NetworkedMdp, CliError> {
    Ok(match spec {
        MdpSpec::Garnet {
            n_states,
            action_sizes,
            branching,
            reward_scale,
            seed,
            reward_noise,
        } => generate_garnet(*n_states, action_sizes, *branching, *reward_scale, *seed)?.with_reward_noise(*reward_noise),
        MdpSpec::File { path } => NetworkedMdp::from_text(&read_input(base, path)?)?,
    })
}

pub fn build_graph(spec: &GraphSpec, n_agents: usize, base: &Path) -> std::result::Result<DirectedGraph, CliError> {
    let g = match spec {
        GraphSpec::Cycle => DirectedGraph::cycle(n_agents)?,
        GraphSpec::Complete => DirectedGraph::complete(n_agents)?,
        GraphSpec::RandomDigraph { edge_prob, seed } => {
            DirectedGraph::random_strongly_connected(n_agents, *edge_prob, &mut SimRng::seed_from_u64(*seed))?
        }
        GraphSpec::RandomUndirected { edge_prob, seed } => {
            DirectedGraph::random_connected_undirected(n_agents, *edge_prob, &mut SimRng::seed_from_u64(*seed))?
        }
        GraphSpec::File { path } => DirectedGraph::from_edge_list(&read_input(base, path)?)?,
    };
    if g.n_agents() != n_agents {
        return Err(Error::DimensionMismatch {
            what: "graph agents",
            expected: n_agents,
            found: g.n_agents(),
        }
        .into());
    }
    Ok(g)
}

pub fn build_features(spec: &FeatureSpec, mdp: &NetworkedMdp, base: &Path) -> std::result::Result<FeatureMap, CliError> {
    let f = match spec {
        FeatureSpec::Random { k, seed } => generate_features(mdp, *k, *seed)?,
        FeatureSpec::File { path } => FeatureMap::from_text(&read_input(base, path)?)?,
    };
    if f.n_rows() != mdp.n_state_actions() {
        return Err(Error::DimensionMismatch {
            what: "feature rows",
            expected: mdp.n_state_actions(),
            found: f.n_rows(),
        }
        .into());
    }
    Ok(f)
}

pub fn build_theta(
    spec: &PolicySpec,
    policy: &SoftmaxPolicy,
    mdp: &NetworkedMdp,
    base: &Path,
) -> std::result::Result<PolicyParams, CliError> {
    let dims = policy.param_dims();
    let theta = match spec.kind {
        PolicyKind::Zeros => PolicyParams::zeros(&dims, spec.theta_max),
        PolicyKind::Random => PolicyParams::random(&dims, spec.scale, spec.theta_max, &mut SimRng::seed_from_u64(spec.seed)),
        PolicyKind::File => {
            let path = spec.path.as_ref().ok_or_else(|| invalid("[policy] kind = \"file\" needs a path"))?;
            PolicyParams::from_text(&read_input(base, path)?)?
        }
    };
    policy.check(mdp, &theta)?;
    Ok(theta)
}

/// Resolves every input; each goes through its validator on construction.
pub fn build_instance(cfg: &ExperimentConfig, base: &Path) -> std::result::Result<Instance, CliError> {
    let mdp = build_mdp(&cfg.mdp, base)?;
    let graph = build_graph(&cfg.graph, mdp.n_agents(), base)?;
    let features = build_features(&cfg.features, &mdp, base)?;
    let policy = SoftmaxPolicy::one_hot(&mdp);
    let theta0 = build_theta(&cfg.policy, &policy, &mdp, base)?;
    Ok(Instance {
        mdp,
        graph,
        features,
        policy,
        theta0,
    })
}

fn run_config(spec: &RunSpec, seed: u64) -> std::result::Result<RunConfig, CliError> {
    Ok(RunConfig {
        algorithm: spec.algorithm.parse()?,
        schedule: spec.schedule,
        horizon: spec.horizon,
        selection_probs: spec.selection_probs.clone(),
        freeze_actor: spec.freeze_actor,
        freeze_critic_learning: spec.freeze_critic_learning,
        seed,
        log_every: spec.log_every,
    })
}

struct Context {
    cfg: ExperimentConfig,
    base: PathBuf,
    out_dir: PathBuf,
    quiet: bool,
}

impl Context {
    fn new(args: &CommonArgs) -> std::result::Result<Self, CliError> {
        let mut cfg = load_config(&args.config)?;
        if let Some(n) = args.seeds {
            cfg.run.seeds = n;
        }
        if let Some(n) = args.log_every {
            cfg.run.log_every = n;
        }
        let base = args
            .config
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_default();
        let out_dir = args.out_dir.clone().unwrap_or_else(|| base.join(&cfg.output.dir));
        Ok(Self {
            cfg,
            base,
            out_dir,
            quiet: args.quiet,
        })
    }

    fn say(&self, msg: &str) {
        if !self.quiet {
            println!("{msg}");
        }
    }

    fn write(&self, name: &str, content: &str) -> std::result::Result<(), CliError> {
        let path = self.out_dir.join(name);
        fs::write(&path, content).map_err(|e| io_err(&path, e))
    }

    fn create_out_dir(&self) -> std::result::Result<(), CliError> {
        fs::create_dir_all(&self.out_dir).map_err(|e| io_err(&self.out_dir, e))
    }
}

/// Parses `args` (including the program name) and executes; returns the
/// process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INVALID } else { EXIT_OK };
        }
    };
    let result = match &cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Oracle(a) => cmd_oracle(a),
        Command::Validate(a) => cmd_validate(a),
        Command::ConsensusTest(a) => cmd_consensus_test(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code
        }
    }
}

struct SeedRun {
    index: u64,
    seed: u64,
    config: RunConfig,
}

fn seed_runs(spec: &RunSpec, mut adjust: impl FnMut(&mut RunConfig)) -> std::result::Result<Vec<SeedRun>, CliError> {
    if spec.seeds == 0 {
        return Err(invalid("seeds must be at least 1"));
    }
    (0..spec.seeds)
        .map(|index| {
            let seed = derive_seed(spec.seed, index);
            let mut config = run_config(spec, seed)?;
            adjust(&mut config);
            Ok(SeedRun { index, seed, config })
        })
        .collect()
}

/// Runs one seed, streaming metrics to `metrics_seed{index}.csv`.
fn execute_seed(
    ctx: &Context,
    inst: &Instance,
    run: &SeedRun,
    oracle: bool,
    initial_omega: Option<Vec<Vec<f64>>>,
) -> std::result::Result<String, CliError> {
    let mut sim = Simulation::new(
        &inst.mdp,
        &inst.graph,
        &inst.features,
        &inst.policy,
        inst.theta0.clone(),
        run.config.clone(),
    )?;
    if let Some(w) = initial_omega {
        sim = sim.with_initial_omega(w)?;
    }
    if oracle {
        sim = sim.with_oracle();
    }
    let path = ctx.out_dir.join(format!("metrics_seed{}.csv", run.index));
    let file = fs::File::create(&path).map_err(|e| io_err(&path, e))?;
    let mut writer = MetricsWriter::new(BufWriter::new(file))?;
    let mut last = None;
    sim.run_with(|row| {
        last = Some(row.clone());
        writer.write(row)
    })?;
    writer.finish()?;
    ctx.write(&format!("final_state_seed{}.txt", run.index), &sim.final_state_text())?;
    let mut summary = format!("seed {} (#{}): t = {}", run.seed, run.index, sim.t());
    if let Some(r) = last {
        let _ = write!(
            summary,
            ", mu_mean = {}, consensus_err = {}",
            fmt_f64(r.mu_mean),
            fmt_f64(r.consensus_err)
        );
        if let Some(j) = r.j_theta {
            let _ = write!(summary, ", J = {}", fmt_f64(j));
        }
    }
    let _ = write!(summary, ", observed alpha = {}", fmt_f64(sim.observed_alpha()));
    Ok(summary)
}

/// Fails early when a run could not start: every instance is constructed
/// (and therefore validated) before any iteration executes.
fn prevalidate(inst: &Instance, runs: &[SeedRun]) -> std::result::Result<(), CliError> {
    for r in runs {
        Simulation::new(
            &inst.mdp,
            &inst.graph,
            &inst.features,
            &inst.policy,
            inst.theta0.clone(),
            r.config.clone(),
        )?;
    }
    Ok(())
}

fn write_inputs(ctx: &Context, inst: &Instance) -> std::result::Result<(), CliError> {
    ctx.write("mdp.txt", &inst.mdp.to_text())?;
    ctx.write("graph.txt", &inst.graph.to_edge_list())?;
    ctx.write("features.txt", &inst.features.to_text())?;
    ctx.write("theta0.txt", &inst.theta0.to_text())
}

fn run_all(
    ctx: &Context,
    inst: &Instance,
    runs: &[SeedRun],
    oracle: bool,
    initial: impl Fn(&SeedRun) -> Option<Vec<Vec<f64>>> + Sync + Send,
) -> std::result::Result<i32, CliError> {
    prevalidate(inst, runs)?;
    ctx.create_out_dir()?;
    write_inputs(ctx, inst)?;
    let results = crate::par::map(runs, |r| execute_seed(ctx, inst, r, oracle, initial(r)));
    let mut failure: Option<CliError> = None;
    for res in results {
        match res {
            Ok(line) => ctx.say(&line),
            Err(e) => {
                eprintln!("error: {}", e.message);
                if failure.as_ref().is_none_or(|f| e.code > f.code) {
                    failure = Some(e);
                }
            }
        }
    }
    match failure {
        Some(e) => Ok(e.code),
        None => Ok(EXIT_OK),
    }
}

pub fn cmd_run(args: &CommonArgs) -> std::result::Result<i32, CliError> {
    let ctx = Context::new(args)?;
    let runs = seed_runs(&ctx.cfg.run, |_| {})?;
    let inst = build_instance(&ctx.cfg, &ctx.base)?;
    run_all(&ctx, &inst, &runs, ctx.cfg.run.oracle, |_| None)
}

/// Frozen-learning averaging: push or consensus mixing from random initial
/// numerators in `[-1, 1]`, actor and TD updates disabled.
pub fn cmd_consensus_test(args: &CommonArgs) -> std::result::Result<i32, CliError> {
    let ctx = Context::new(args)?;
    let runs = seed_runs(&ctx.cfg.run, |c| {
        c.freeze_actor = true;
        c.freeze_critic_learning = true;
    })?;
    let inst = build_instance(&ctx.cfg, &ctx.base)?;
    let (n, k) = (inst.mdp.n_agents(), inst.features.k());
    run_all(&ctx, &inst, &runs, false, |r| {
        let mut rng = SimRng::seed_from_u64(r.seed ^ 0x5EED_0F_1A17);
        Some((0..n).map(|_| (0..k).map(|_| rng.random_range(-1.0..=1.0)).collect()).collect())
    })
}

pub fn cmd_oracle(args: &CommonArgs) -> std::result::Result<i32, CliError> {
    let ctx = Context::new(args)?;
    let inst = build_instance(&ctx.cfg, &ctx.base)?;
    let table = inst.policy.joint_table(&inst.mdp, &inst.theta0);
    let chain = induced_chain(&inst.mdp, &table)?;
    if !chain_is_ergodic(&chain) {
        return Err(invalid(format!(
            "the chain induced by this policy is not ergodic; policy parameters:\n{}",
            inst.theta0.to_text()
        )));
    }
    let report = oracle::report(&inst.mdp, &inst.policy, &inst.theta0, &inst.features)?;
    ctx.create_out_dir()?;
    ctx.write("oracle_report.txt", &report)?;
    if !ctx.quiet {
        print!("{report}");
    }
    Ok(EXIT_OK)
}

fn status(pass: bool) -> &'static str {
    if pass {
        "PASS"
    } else {
        "FAIL"
    }
}

fn check_line(out: &mut String, name: &str, check: Check, detail: &str) {
    let _ = writeln!(out, "{} {name}: {} ({detail})", status(check.pass), fmt_f64(check.value));
}

/// Runs every validator and returns the report and overall verdict. Input
/// errors are reported as failed checks rather than aborting.
pub fn validation_report(cfg: &ExperimentConfig, base: &Path) -> std::result::Result<(String, bool), CliError> {
    let mut out = String::new();
    let mut all = true;
    let mut record = |out: &mut String, pass: bool, line: String| {
        all &= pass;
        let _ = writeln!(out, "{} {line}", status(pass));
    };

    let mdp = match build_mdp(&cfg.mdp, base) {
        Ok(m) => {
            record(&mut out, true, format!("mdp: {} states, action sizes {:?}", m.n_states(), m.action_sizes()));
            m
        }
        Err(e) => {
            record(&mut out, false, format!("mdp: {}", e.message));
            return Ok((out, false));
        }
    };
    let n = mdp.n_agents();

    match build_graph(&cfg.graph, n, base) {
        Ok(g) => {
            record(&mut out, is_strongly_connected(&g), format!("strong connectivity ({} agents, {} edges)", n, g.n_edges()));
            if let Ok(b) = build_push_sum_weights(&g) {
                let dev = b.max_column_sum_deviation();
                record(&mut out, dev <= cfg.validate.tol, format!("push-sum column sums: max deviation {}", fmt_f64(dev)));
            }
            let symmetric = g.is_symmetric();
            let _ = writeln!(out, "INFO symmetric edge set: {symmetric}");
            if symmetric {
                let report = weight_report(&g, &cfg.validate, &cfg.features, &mdp, base);
                match report {
                    Ok((text, pass)) => {
                        out.push_str(&text);
                        record(&mut out, pass, "weight-matrix conditions overall".to_string());
                    }
                    Err(e) => record(&mut out, false, format!("weight matrices: {}", e.message)),
                }
            } else {
                let _ = writeln!(out, "INFO weight-matrix conditions skipped: they apply to undirected graphs");
            }
        }
        Err(e) => record(&mut out, false, format!("graph: {}", e.message)),
    }

    let policy = SoftmaxPolicy::one_hot(&mdp);
    match build_theta(&cfg.policy, &policy, &mdp, base) {
        Ok(theta) => {
            let table = policy.joint_table(&mdp, &theta);
            let chain = induced_chain(&mdp, &table)?;
            let ergodic = chain_is_ergodic(&chain);
            let detail = if ergodic {
                let d = stationary_distribution(&chain)?;
                format!("min stationary probability {}", fmt_f64(d.min()))
            } else {
                "chain is reducible or periodic".to_string()
            };
            let min_prob = table.min();
            record(&mut out, ergodic, format!("ergodicity under the policy: {detail}"));
            let _ = writeln!(out, "INFO min joint action probability {}", fmt_f64(min_prob));
        }
        Err(e) => record(&mut out, false, format!("policy: {}", e.message)),
    }

    match build_features(&cfg.features, &mdp, base) {
        Ok(f) => {
            let d = feature_diagnostics(f.matrix())?;
            record(&mut out, true, format!(
                "features: rank {} of K = {}, singular value ratio {}, all-ones residual {}",
                d.rank,
                f.k(),
                fmt_f64(d.singular_ratio),
                fmt_f64(d.ones_residual)
            ));
        }
        Err(e) => record(&mut out, false, format!("features: {}", e.message)),
    }
    Ok((out, all))
}

fn weight_report(
    g: &DirectedGraph,
    spec: &ValidateSpec,
    features: &FeatureSpec,
    mdp: &NetworkedMdp,
    base: &Path,
) -> std::result::Result<(String, bool), CliError> {
    let n = g.n_agents();
    let mut sampler: Box<dyn WeightSampler> = match spec.sampler {
        SamplerKind::Metropolis => Box::new(FixedSampler::new(build_metropolis_weights(g)?.into_inner()).with_graph(g)),
        SamplerKind::Identity => Box::new(FixedSampler::new(nalgebra::DMatrix::identity(n, n))),
        SamplerKind::EntrywiseConsensus => {
            let k = build_features(features, mdp, base)?.k();
            Box::new(EntrywiseConsensusSampler::new(g.clone(), vec![vec![1.0 / k as f64; k]; n])?)
        }
    };
    let mut rng = SimRng::seed_from_u64(spec.seed);
    let r = check_weight_assumptions(sampler.as_mut(), spec.n_samples, spec.eta, spec.tol, &mut rng)?;
    let mut out = String::new();
    check_line(&mut out, "weights row stochastic", r.row_stochastic, "max row-sum deviation");
    check_line(&mut out, "weights positive entries bounded below", r.min_positive_entry, "smallest positive entry");
    check_line(
        &mut out,
        "weights column stochastic in expectation",
        r.mean_column_stochastic,
        if r.used_exact_mean { "exact mean" } else { "sample mean" },
    );
    check_line(&mut out, "weights contract disagreement", r.contraction_norm, "spectral norm");
    if let Some(ok) = r.respects_graph {
        let _ = writeln!(out, "{} weights respect the graph", status(ok));
    }
    Ok((out, r.all_pass()))
}

pub fn cmd_validate(args: &CommonArgs) -> std::result::Result<i32, CliError> {
    let ctx = Context::new(args)?;
    let (report, pass) = validation_report(&ctx.cfg, &ctx.base)?;
    if !ctx.quiet {
        print!("{report}");
    }
    Ok(if pass { EXIT_OK } else { EXIT_INVALID })
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
[mdp]
kind = "garnet"
n_states = 4
action_sizes = [2, 2]
seed = 3

[graph]
kind = "cycle"

[features]
kind = "random"
k = 3
"#;

    #[test]
    fn parses_defaults() {
        let cfg = parse_config(BASE).unwrap();
        assert_eq!(cfg.run.algorithm, "push-entrywise");
        assert_eq!(cfg.run.schedule, Schedule::default());
        assert_eq!(cfg.validate.sampler, SamplerKind::EntrywiseConsensus);
        assert_eq!(cfg.policy.kind, PolicyKind::Zeros);
    }

    #[test]
    fn rejects_unknown_fields() {
        let err = parse_config(&format!("{BASE}\n[run]\nhorizn = 3\n")).unwrap_err();
        assert_eq!(err.code, EXIT_INVALID);
        let err = parse_config(&BASE.replace("n_states = 4", "n_states = 4\nbogus = 1")).unwrap_err();
        assert_eq!(err.code, EXIT_INVALID);
    }

    #[test]
    fn unknown_algorithm_lists_tags() {
        let cfg = parse_config(&format!("{BASE}\n[run]\nalgorithm = \"gossip\"\n")).unwrap();
        let err = run_config(&cfg.run, 0).unwrap_err();
        assert_eq!(err.code, EXIT_INVALID);
        for a in Algorithm::ALL {
            assert!(err.message.contains(a.tag()));
        }
    }

    #[test]
    fn seeds_are_distinct_and_stable() {
        let seeds: Vec<u64> = (0..100).map(|i| derive_seed(7, i)).collect();
        let mut uniq = seeds.clone();
        uniq.sort_unstable();
        uniq.dedup();
        assert_eq!(uniq.len(), 100);
        assert_eq!(derive_seed(7, 3), seeds[3]);
    }

    #[test]
    fn error_codes() {
        assert_eq!(CliError::from(Error::NonFinite { t: 3 }).code, EXIT_NUMERIC);
        assert_eq!(CliError::from(Error::Reducible).code, EXIT_INVALID);
        assert_eq!(CliError::from(Error::Io(std::io::Error::other("x"))).code, EXIT_IO);
    }
}
