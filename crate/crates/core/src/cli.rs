//! The `heurlink` command line.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::warn;
use serde::Serialize;

use crate::bench::{self, BenchConfig};
use crate::data::{self, SynthKind};
use crate::error::{Error, Result};
use crate::eval::{split_edges, Metric};
use crate::graph::{parse_edge_list, SparseGraph};
use crate::heuristics::{self, HeuristicId};
use crate::model::{self, Checkpoint, LossKind};
use crate::oracle::{MAX_ORACLE_NODES, MAX_WALK_LENGTH};
use crate::pipeline::{self, RunConfig};
use crate::training;

/// Relative tolerance for `heuristic --verify` and absolute bound for
/// `gradcheck`.
pub const VERIFY_TOLERANCE: f64 = 1e-9;
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Parser)]
#[command(name = "heurlink", version, about = "Link prediction heuristics and a heuristic-learning linear GNN")]
pub struct Cli {
    /// Seed for every random choice; overrides config seeds when given.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; 1 is the reproducibility reference.
    #[arg(long, global = true, env = "HEURLINK_THREADS")]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Score node pairs with a classic heuristic.
    Heuristic(HeuristicArgs),
    /// Train a model from a JSON run config.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a split's test pairs.
    Eval(EvalArgs),
    /// Export the learned propagation weights of a checkpoint.
    Recover(RecoverArgs),
    /// Compare analytic gradients with finite differences.
    Gradcheck(GradcheckArgs),
    /// Generate a triangular or hexagonal dataset.
    Synth(SynthArgs),
    /// Time the forward pass against depth, edges and feature width.
    Bench(BenchArgs),
    /// Draw a random train/validation/test split of an edge list.
    Split(SplitArgs),
    /// Print basic statistics of a graph.
    Info(InfoArgs),
}

#[derive(Debug, Args)]
pub struct HeuristicArgs {
    #[arg(long)]
    pub graph: PathBuf,
    /// cn, llhn, ra, katz, glhn, rwr, lpi, lrw, ra_sq or ra_sym.
    #[arg(long)]
    pub method: String,
    /// File of `u v` lines to score.
    #[arg(long, conflicts_with = "all_nonedges")]
    pub pairs: Option<PathBuf>,
    /// A single pair, e.g. `--pair 0,1`; repeatable.
    #[arg(long, value_parser = parse_pair, conflicts_with = "all_nonedges")]
    pub pair: Vec<(usize, usize)>,
    /// Score every non-adjacent pair.
    #[arg(long)]
    pub all_nonedges: bool,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub phi: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub order: Option<usize>,
    /// Write `i,j,score` CSV here instead of standard output.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Cross-check walk oracle, matrix form and formulation.
    #[arg(long)]
    pub verify: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out_checkpoint: Option<PathBuf>,
    /// CSV history `epoch,loss,val_metric`.
    #[arg(long)]
    pub history: Option<PathBuf>,
    /// Write the split used for training.
    #[arg(long)]
    pub out_split: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub split: PathBuf,
    #[arg(long)]
    pub features: Option<PathBuf>,
    /// hits@K, mrr or auc.
    #[arg(long, default_value = "hits@100")]
    pub metric: Metric,
    /// Evaluate the validation pairs instead of the test pairs.
    #[arg(long)]
    pub valid: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RecoverArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Split whose training edges form the propagation graph.
    #[arg(long, conflicts_with = "graph")]
    pub split: Option<PathBuf>,
    /// Edge list forming the propagation graph.
    #[arg(long)]
    pub graph: Option<PathBuf>,
    /// Include the dense propagation matrix (small graphs only).
    #[arg(long)]
    pub dense: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum LossChoice {
    Auc,
    Bce,
    Both,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// JSON model config; a small default model otherwise.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "both")]
    pub loss: LossChoice,
    /// Random instances per loss.
    #[arg(long, default_value_t = 10)]
    pub instances: u64,
    #[arg(long, default_value_t = 24)]
    pub nodes: usize,
    #[arg(long, default_value_t = 1e-5)]
    pub step: f64,
    /// Sampled entries per dense parameter block.
    #[arg(long, default_value_t = 20)]
    pub samples: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub kind: SynthKind,
    /// Number of triangles or hexagons.
    #[arg(long)]
    pub size: Option<usize>,
    #[arg(long, default_value_t = 0.1)]
    pub valid: f64,
    #[arg(long, default_value_t = 0.1)]
    pub test: f64,
    /// Directory for `edges.txt`, `split.json`, `dataset.json` and `run.json`.
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, value_delimiter = ',', default_value = "4,8,16")]
    pub depths: Vec<usize>,
    /// Edge counts to sweep.
    #[arg(long, value_delimiter = ',', default_value = "80000,160000,320000")]
    pub sizes: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "16,32,64")]
    pub features: Vec<usize>,
    #[arg(long, default_value_t = 20_000)]
    pub nodes: usize,
    #[arg(long, default_value_t = 5)]
    pub repeats: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[arg(long)]
    pub graph: PathBuf,
    #[arg(long, default_value_t = 0.05)]
    pub valid: f64,
    #[arg(long, default_value_t = 0.1)]
    pub test: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct InfoArgs {
    #[arg(long)]
    pub graph: PathBuf,
    #[arg(long)]
    pub features: Option<PathBuf>,
}

fn parse_pair(s: &str) -> std::result::Result<(usize, usize), String> {
    let (a, b) = s
        .split_once([',', ' '])
        .ok_or_else(|| format!("expected `u,v`, got {s:?}"))?;
    let id = |t: &str| t.trim().parse::<usize>().map_err(|e| format!("bad node id {t:?}: {e}"));
    Ok((id(a)?, id(b)?))
}

/// Exit status for an error: 1 usage/config/input, 2 contract or
/// verification failure, 3 numeric failure.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::NonFinite(_) => 3,
        Error::InvalidParameter(_)
        | Error::Parse { .. }
        | Error::Io(_)
        | Error::Json(_)
        | Error::Version { .. }
        | Error::LimitExceeded(_)
        | Error::EmptyGraph => 1,
        Error::NodeOutOfRange { .. } | Error::DimensionMismatch(_) | Error::Invariant(_) | Error::Insufficient(_) => 2,
    }
}

/// Shortest text that reads back to the same value.
pub fn fmt_num(v: f64) -> String {
    let a = v.abs();
    if v == 0.0 || (1e-5..1e16).contains(&a) {
        format!("{v}")
    } else {
        format!("{v:e}")
    }
}

/// Runs the command line and returns the process exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    if let Some(t) = cli.threads {
        if t == 0 {
            eprintln!("error: --threads must be at least 1");
            return 1;
        }
        // A second call in the same process (tests) keeps the first pool.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(t).build_global();
    }
    match dispatch(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn dispatch(cli: &Cli) -> Result<i32> {
    let seed = cli.seed;
    match &cli.command {
        Command::Heuristic(a) => cmd_heuristic(a),
        Command::Train(a) => cmd_train(a, seed),
        Command::Eval(a) => cmd_eval(a, seed),
        Command::Recover(a) => cmd_recover(a),
        Command::Gradcheck(a) => cmd_gradcheck(a, seed.unwrap_or(0)),
        Command::Synth(a) => cmd_synth(a, seed.unwrap_or(0)),
        Command::Bench(a) => cmd_bench(a, seed.unwrap_or(0)),
        Command::Split(a) => cmd_split(a, seed.unwrap_or(0)),
        Command::Info(a) => cmd_info(a),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

fn read_pairs(path: &Path) -> Result<Vec<(usize, usize)>> {
    Ok(parse_edge_list(&fs::read_to_string(path)?)?.0)
}

fn cmd_heuristic(a: &HeuristicArgs) -> Result<i32> {
    let id = HeuristicId::from_parts(&a.method, a.gamma, a.phi, a.alpha, a.order)?;
    let g = SparseGraph::from_edge_list_file(&a.graph, None)?;
    let mut pairs = a.pair.clone();
    if let Some(p) = &a.pairs {
        pairs.extend(read_pairs(p)?);
    }
    if a.all_nonedges {
        pairs = heuristics::all_nonedges(&g);
    }
    if pairs.is_empty() {
        return Err(Error::InvalidParameter("no pairs: use --pair, --pairs or --all-nonedges".into()));
    }
    for &(i, j) in &pairs {
        g.check_node(i)?;
        g.check_node(j)?;
    }
    if a.verify && (g.num_nodes() > MAX_ORACLE_NODES || (!id.is_local() && id.order() > MAX_WALK_LENGTH)) {
        return Err(Error::LimitExceeded(format!(
            "--verify needs at most {MAX_ORACLE_NODES} nodes and order at most {MAX_WALK_LENGTH}"
        )));
    }
    let scores = heuristics::score_pairs(&g, &id, &pairs)?;
    let mut csv = String::new();
    for (&(i, j), s) in pairs.iter().zip(&scores) {
        writeln!(csv, "{i},{j},{}", fmt_num(*s)).expect("string write");
    }
    match &a.out {
        Some(p) => {
            fs::write(p, format!("i,j,score\n{csv}"))?;
            println!("{id}: scored {} pairs -> {}", pairs.len(), p.display());
        }
        None => print!("{csv}"),
    }
    if a.verify {
        let report = heuristics::verify_heuristic(&g, &id, &pairs)?;
        let scale = scores.iter().fold(1.0f64, |m, s| m.max(s.abs()));
        let ok = report.max_deviation() <= VERIFY_TOLERANCE * scale;
        eprintln!(
            "verify {id}: {} pairs, oracle-matrix {} matrix-formulation {} oracle-formulation {} -> {}",
            report.pairs,
            fmt_num(report.oracle_vs_matrix),
            fmt_num(report.matrix_vs_formulation),
            fmt_num(report.oracle_vs_formulation),
            if ok { "ok" } else { "FAILED" }
        );
        if !ok {
            return Ok(2);
        }
    }
    Ok(0)
}

fn cmd_train(a: &TrainArgs, seed: Option<u64>) -> Result<i32> {
    let mut cfg = RunConfig::load(&a.config)?;
    if let Some(s) = seed {
        cfg.train.seed = s;
    }
    if let Some(e) = a.epochs {
        cfg.train.epochs = e;
    }
    cfg.validate()?;
    let prepared = pipeline::prepare(&cfg.dataset, cfg.train.seed)?;
    pipeline::resolve_model(&cfg.model, prepared.features.as_ref())?;
    let outcome = pipeline::run_training(&cfg, &prepared)?;
    if let Some(p) = &a.out_split {
        data::save_split(&prepared.split, p)?;
    }
    if let Some(p) = &a.history {
        training::write_history(p, &outcome.fit.history)?;
    }
    if let Some(p) = &a.out_checkpoint {
        outcome.checkpoint.save(p)?;
    }
    let last = outcome.fit.history.last();
    println!("dataset      {}", prepared.name);
    println!("nodes        {}", prepared.num_nodes);
    println!("epochs       {}", outcome.fit.history.len());
    if let Some(r) = last {
        println!("final loss   {}", fmt_num(r.loss));
    }
    match (outcome.fit.best_epoch, outcome.fit.best_metric) {
        (Some(e), Some(m)) => println!("best valid   {} {} (epoch {e})", cfg.eval.metric, fmt_num(m)),
        _ => println!("best valid   n/a"),
    }
    if let Some(t) = &outcome.test {
        println!("test         {} {}", t.metric, fmt_num(t.value));
    }
    let betas: Vec<String> = outcome.checkpoint.params.betas.iter().map(|b| format!("{b:.4}")).collect();
    println!("betas        {}", betas.join(" "));
    if outcome.fit.skipped_negatives > 0 {
        warn!("{} positives had no negative partner", outcome.fit.skipped_negatives);
    }
    Ok(0)
}

fn cmd_eval(a: &EvalArgs, seed: Option<u64>) -> Result<i32> {
    let ck = Checkpoint::load(&a.checkpoint)?;
    let split = data::load_split(&a.split)?;
    let features = a.features.as_deref().map(data::read_features).transpose()?;
    let g = split.train_graph(ck.num_nodes)?;
    let (pos, neg) = if a.valid {
        (&split.valid_pos, &split.valid_neg)
    } else {
        (&split.test_pos, &split.test_neg)
    };
    let report = pipeline::evaluate(&ck, &g, features.as_ref(), pos, neg, a.metric, seed.unwrap_or(split.seed))?;
    let json = serde_json::to_string_pretty(&report)?;
    if let Some(p) = &a.out {
        fs::write(p, json.clone() + "\n")?;
    }
    println!("{json}");
    Ok(0)
}

fn cmd_recover(a: &RecoverArgs) -> Result<i32> {
    let ck = Checkpoint::load(&a.checkpoint)?;
    let g = match (&a.split, &a.graph) {
        (Some(s), _) => data::load_split(s)?.train_graph(ck.num_nodes)?,
        (None, Some(p)) => SparseGraph::from_edge_list_file(p, Some(ck.num_nodes))?,
        (None, None) => return Err(Error::InvalidParameter("recover needs --split or --graph".into())),
    };
    let m = model::materialize_formulation(&ck.params, &g, a.dense)?;
    println!("depth  {}", m.depth);
    for (l, b) in m.betas.iter().enumerate() {
        let alpha = match (&m.fixed_operators, l) {
            (_, 0) => String::new(),
            (Some(ops), _) => format!("{}", ops[l - 1]),
            (None, _) => {
                let a = m.alphas[l - 1];
                format!("rs {:.4} cs {:.4} sym {:.4}", a[0], a[1], a[2])
            }
        };
        println!("l={l:<3} beta {:>12.6}  {alpha}", b);
    }
    if let Some(l) = pipeline::beta_argmax(&m.betas) {
        println!("argmax |beta| at l={l}");
    }
    if let Some(p) = &a.out {
        write_json(p, &m)?;
    }
    Ok(0)
}

#[derive(Serialize)]
struct GradcheckRow {
    loss: LossKind,
    instance: u64,
    report: training::FdReport,
}

fn cmd_gradcheck(a: &GradcheckArgs, seed: u64) -> Result<i32> {
    let losses = match a.loss {
        LossChoice::Auc => vec![LossKind::Auc],
        LossChoice::Bce => vec![LossKind::Bce],
        LossChoice::Both => vec![LossKind::Auc, LossKind::Bce],
    };
    let base = match &a.config {
        Some(p) => {
            let cfg: model::ModelConfig = serde_json::from_str(&fs::read_to_string(p)?)?;
            cfg.validate()?;
            Some(cfg)
        }
        None => None,
    };
    if a.nodes < 4 || a.nodes > 60 {
        return Err(Error::InvalidParameter("gradcheck uses between 4 and 60 nodes".into()));
    }
    let mut rows = Vec::new();
    let mut worst = 0.0f64;
    for &loss in &losses {
        let mut cfg = base.clone().unwrap_or_else(|| training::gradcheck_model_config(loss));
        cfg.loss = loss;
        cfg.dropout = 0.0;
        for inst in 0..a.instances {
            let s = seed.wrapping_add(inst);
            let (g, x, params, batch) = training::random_check_instance(&cfg, a.nodes, 0.2, 8, 2, s)?;
            let report = training::finite_difference_check(&params, &g, x.as_ref(), &batch, loss, a.step, a.samples, s)?;
            worst = worst.max(report.max_rel_err());
            rows.push(GradcheckRow { loss, instance: inst, report });
        }
    }
    println!("{:<5} {:>8} {:<10} {:>12}", "loss", "instance", "group", "max rel err");
    for r in &rows {
        for (g, e) in &r.report.per_group {
            println!("{:<5} {:>8} {:<10} {:>12.3e}", format!("{:?}", r.loss).to_lowercase(), r.instance, format!("{g:?}").to_lowercase(), e);
        }
    }
    let skipped: usize = rows.iter().map(|r| r.report.kinks_skipped).sum();
    println!("worst {worst:.3e} (tolerance {GRADCHECK_TOLERANCE:e}), {skipped} entries skipped at rectifier kinks");
    if let Some(p) = &a.out {
        write_json(p, &rows)?;
    }
    Ok(if worst <= GRADCHECK_TOLERANCE { 0 } else { 2 })
}

fn cmd_synth(a: &SynthArgs, seed: u64) -> Result<i32> {
    let size = a.size.unwrap_or(a.kind.default_size());
    let ds = data::generate(a.kind, size, seed)?;
    let split = data::case_study_split(a.kind, size, a.valid, a.test, seed)?;
    let mut run = pipeline::case_study_config(a.kind, seed);
    run.dataset = pipeline::DatasetConfig {
        edges: Some("edges.txt".into()),
        split: Some("split.json".into()),
        ..Default::default()
    };
    fs::create_dir_all(&a.out_dir)?;
    crate::graph::write_edge_list(a.out_dir.join("edges.txt"), &ds.graph.edges())?;
    data::save_split(&split, a.out_dir.join("split.json"))?;
    write_json(&a.out_dir.join("dataset.json"), &ds.provenance)?;
    write_json(&a.out_dir.join("run.json"), &run)?;
    println!(
        "{}: {} nodes, {} edges, {} training targets -> {}",
        ds.name,
        ds.num_nodes(),
        ds.graph.num_edges(),
        split.supervision_positives().len(),
        a.out_dir.display()
    );
    Ok(0)
}

fn cmd_bench(a: &BenchArgs, seed: u64) -> Result<i32> {
    let mid = |v: &[usize]| v.get(v.len() / 2).copied();
    let cfg = BenchConfig {
        num_nodes: a.nodes,
        base_depth: mid(&a.depths).unwrap_or(8),
        base_edges: mid(&a.sizes).unwrap_or(160_000),
        base_features: mid(&a.features).unwrap_or(32),
        repeats: a.repeats,
        seed,
    };
    let rows = bench::run_scaling(&cfg, &a.depths, &a.sizes, &a.features)?;
    println!("{:<9} {:>6} {:>10} {:>9} {:>12}", "axis", "depth", "edges", "features", "seconds");
    for r in &rows {
        println!("{:<9} {:>6} {:>10} {:>9} {:>12.6}", r.axis.name(), r.depth, r.num_edges, r.feature_dim, r.seconds);
    }
    for d in bench::doublings(&rows) {
        println!("{} {} -> {}: x{:.3}", d.axis.name(), d.from, d.to, d.ratio);
    }
    if let Some(p) = &a.out {
        bench::write_csv(p, &rows)?;
    }
    Ok(0)
}

fn cmd_split(a: &SplitArgs, seed: u64) -> Result<i32> {
    let g = SparseGraph::from_edge_list_file(&a.graph, None)?;
    let split = split_edges(&g, a.valid, a.test, seed)?;
    data::save_split(&split, &a.out)?;
    println!(
        "train {} valid {}/{} test {}/{} -> {}",
        split.train.len(),
        split.valid_pos.len(),
        split.valid_neg.len(),
        split.test_pos.len(),
        split.test_neg.len(),
        a.out.display()
    );
    Ok(0)
}

fn cmd_info(a: &InfoArgs) -> Result<i32> {
    let ds = data::load_dataset(&a.graph, a.features.as_deref())?;
    let g = &ds.graph;
    // Degrees include the self-loop.
    let degs = g.degrees();
    let max = degs.iter().max().copied().unwrap_or(0);
    let mean = degs.iter().sum::<usize>() as f64 / degs.len() as f64;
    println!("nodes        {}", g.num_nodes());
    println!("edges        {}", g.num_edges());
    println!("degree       mean {:.3} max {} (with self-loop)", mean, max);
    println!("isolated     {}", degs.iter().filter(|&&d| d == 1).count());
    match ds.feature_dim() {
        Some(f) => println!("features     {f}"),
        None => println!("features     none"),
    }
    Ok(0)
}
