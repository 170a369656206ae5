//! Command-line driver for the tracking pipeline.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mcmot::affinity::{accuracy, AffinityContext, CombinerKind};
use mcmot::config::{parse_override, ConfigError, PipelineConfig};
use mcmot::evaluation::{evaluate_mot, evaluate_preclustering, ground_truth_frames, prediction_frames};
use mcmot::graph::{build_graph, TrackingGraph};
use mcmot::io::{
    load_scene_dir, read_ground_truth, read_tracklets, read_trajectories, write_scene_dir, write_tracklets,
    write_trajectories, SceneBundle,
};
use mcmot::multicut::solve;
use mcmot::pipeline::{load_weights, read_weights, run_pipeline, PipelineOutput, Stage};
use mcmot::precluster::{precluster_scene, write_clusters_csv};
use mcmot::simulator::{simulate, SimConfig};
use mcmot::tracklets::{split_tracklets, Tracklet};
use mcmot::training::{spatial_table, split_table, temporal_table, PairTable};
use serde_json::{json, Value};

#[derive(Parser)]
#[command(name = "mcmot", version, about = "Batch multi-camera multi-object tracking")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Flat `key = value` config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one config key, e.g. `--set t_base=3`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Print reports as JSON.
    #[arg(long, global = true)]
    json: bool,
    /// Worker threads (0 = all cores); overrides the `threads` key.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scene directory with ground truth.
    Simulate {
        #[arg(long)]
        out: PathBuf,
    },
    /// Pre-cluster detections and write `frame,anchor_det,member_det,visible` rows.
    Precluster {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Cut tracklets at detected identity switches.
    Split {
        #[arg(long)]
        scene: PathBuf,
        /// Tracklets to split instead of the scene's own.
        #[arg(long)]
        tracklets: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sample labeled training pairs; writes one CSV per combiner kind.
    SamplePairs {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit combiner weights from pair CSVs; writes `<kind>.json` per table.
    FitWeights {
        #[arg(long, required = true, num_args = 1..)]
        pairs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build the tracking graph and dump it as text.
    BuildGraph {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        tracklets: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Solve a dumped graph; writes `node component` lines and prints the report as JSON.
    Solve {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the whole pipeline, dumping every stage's artifact into a directory.
    Track {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_parser = parse_stage)]
        stop_after: Option<Stage>,
    },
    /// Score trajectories against ground truth.
    Eval {
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        pred: PathBuf,
    },
}

fn parse_stage(s: &str) -> Result<Stage, String> {
    s.parse()
}

/// Exit 1 for usage errors, 2 for data errors.
enum CliError {
    Usage(String),
    Data(String),
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Usage(e.to_string())
    }
}

fn data<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Data(e.to_string())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(CliError::Data(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}

fn config_text(global: &Global) -> Result<String, CliError> {
    match &global.config {
        Some(p) => fs::read_to_string(p).map_err(|e| CliError::Usage(format!("{}: {e}", p.display()))),
        None => Ok(String::new()),
    }
}

fn pipeline_config(global: &Global) -> Result<PipelineConfig, CliError> {
    let mut cfg = PipelineConfig::parse(&config_text(global)?)?;
    for o in &global.overrides {
        let (k, v) = parse_override(o)?;
        cfg.set(&k, &v)?;
    }
    if let Some(t) = global.threads {
        cfg.threads = t;
    }
    Ok(cfg)
}

fn sim_config(global: &Global) -> Result<SimConfig, CliError> {
    let mut cfg = SimConfig::parse(&config_text(global)?)?;
    for o in &global.overrides {
        let (k, v) = parse_override(o)?;
        cfg.set(&k, &v)?;
    }
    Ok(cfg)
}

fn set_threads(n: usize) -> Result<(), CliError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Usage(e.to_string()))
}

/// Prints `(key, value)` pairs as `key: value` lines, or one JSON object.
fn report(json: bool, fields: Value) {
    if json {
        println!("{}", serde_json::to_string_pretty(&fields).expect("serializable"));
        return;
    }
    if let Value::Object(map) = fields {
        for (k, v) in map {
            match v {
                Value::String(s) => println!("{k}: {s}"),
                other => println!("{k}: {other}"),
            }
        }
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn load_scene(dir: &Path, tracklets: Option<&Path>) -> Result<SceneBundle, CliError> {
    let mut scene = load_scene_dir(dir).map_err(data)?;
    if let Some(p) = tracklets {
        scene.set_tracklets(read_tracklets(p).map_err(data)?).map_err(data)?;
    }
    Ok(scene)
}

fn write_labels(path: &Path, ids: &[u64], labels: &[usize]) -> Result<(), CliError> {
    let mut w = create(path)?;
    for (id, l) in ids.iter().zip(labels) {
        writeln!(w, "{id} {l}").map_err(data)?;
    }
    w.flush().map_err(data)
}

fn run(cli: Cli) -> Result<(), CliError> {
    let g = &cli.global;
    if let Command::Simulate { out } = &cli.command {
        let cfg = sim_config(g)?;
        if let Some(t) = g.threads {
            set_threads(t)?;
        }
        let sim = simulate(&cfg).map_err(|e| match e {
            mcmot::simulator::SimError::InvalidConfig(m) => CliError::Usage(m),
            other => data(other),
        })?;
        write_scene_dir(&sim.scene, out).map_err(data)?;
        let mut w = create(&out.join("switches.csv"))?;
        writeln!(w, "tracklet_id,before_det,after_det").map_err(data)?;
        for s in &sim.switches {
            writeln!(w, "{},{},{}", s.tracklet_id, s.before_det, s.after_det).map_err(data)?;
        }
        w.flush().map_err(data)?;
        report(
            g.json,
            json!({
                "detections": sim.scene.detections.len(),
                "tracklets": sim.scene.tracklets.as_ref().map_or(0, Vec::len),
                "gt_records": sim.scene.ground_truth.as_ref().map_or(0, Vec::len),
                "switches": sim.switches.len(),
            }),
        );
        return Ok(());
    }

    let cfg = pipeline_config(g)?;
    set_threads(cfg.threads)?;
    match &cli.command {
        Command::Simulate { .. } => unreachable!("handled above"),
        Command::Precluster { scene, out } => {
            let scene = load_scene(scene, None)?;
            let clusters = precluster_scene(&scene, &cfg.precluster);
            write_clusters_csv(&scene, &clusters, create(out)?).map_err(data)?;
            let mut fields = json!({
                "detections": scene.detections.len(),
                "visible": scene.detections.iter().filter(|d| clusters.is_visible(d.det_id)).count(),
            });
            if let Some(ids) = &scene.identities {
                let m = evaluate_preclustering(&scene, &clusters, ids).map_err(data)?;
                fields["accuracy"] = json!(m.accuracy);
                fields["precision"] = json!(m.precision);
                fields["recall"] = json!(m.recall);
            }
            report(g.json, fields);
        }
        Command::Split { scene, tracklets, out } => {
            let scene = load_scene(scene, tracklets.as_deref())?;
            let input = scene
                .tracklets
                .as_deref()
                .ok_or_else(|| CliError::Data("scene has no tracklets".into()))?;
            let path = cfg
                .weights_split
                .as_deref()
                .ok_or_else(|| CliError::Usage("split needs weights_split".into()))?;
            let w = read_weights(path, CombinerKind::Split).map_err(CliError::Data)?;
            let clusters = precluster_scene(&scene, &cfg.precluster);
            let ctx = AffinityContext::new(&scene, &clusters, cfg.affinity);
            let split = split_tracklets(input, &ctx, &w, cfg.split_threshold).map_err(data)?;
            write_tracklets(&split, out).map_err(data)?;
            report(g.json, json!({ "input": input.len(), "output": split.len() }));
        }
        Command::SamplePairs { scene, out } => {
            let scene = load_scene(scene, None)?;
            let clusters = precluster_scene(&scene, &cfg.precluster);
            let ctx = AffinityContext::new(&scene, &clusters, cfg.affinity);
            let tables = [
                temporal_table(&ctx, &cfg.training).map_err(data)?,
                spatial_table(&ctx, &cfg.training).map_err(data)?,
                split_table(&ctx, &cfg.training).map_err(data)?,
            ];
            let mut fields = serde_json::Map::new();
            for t in &tables {
                t.write_csv(create(&out.join(format!("{}_pairs.csv", t.kind)))?).map_err(data)?;
                fields.insert(format!("{}_positives", t.kind), json!(t.positives.len()));
                fields.insert(format!("{}_negatives", t.kind), json!(t.negatives.len()));
            }
            report(g.json, Value::Object(fields));
        }
        Command::FitWeights { pairs, out } => {
            let mut fields = serde_json::Map::new();
            for p in pairs {
                let file = File::open(p).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))?;
                let table = PairTable::read_csv(file).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))?;
                let w = table.fit().map_err(data)?;
                let mut f = create(&out.join(format!("{}.json", table.kind)))?;
                writeln!(f, "{}", w.to_json()).map_err(data)?;
                f.flush().map_err(data)?;
                fields.insert(
                    format!("{}_accuracy", table.kind),
                    json!(accuracy(&w, &table.positives, &table.negatives)),
                );
            }
            report(g.json, Value::Object(fields));
        }
        Command::BuildGraph { scene, tracklets, out } => {
            let scene = load_scene(scene, tracklets.as_deref())?;
            let ts: &[Tracklet] = scene
                .tracklets
                .as_deref()
                .ok_or_else(|| CliError::Data("scene has no tracklets".into()))?;
            let weights = load_weights(&cfg).map_err(CliError::Data)?;
            let clusters = precluster_scene(&scene, &cfg.precluster);
            let ctx = AffinityContext::new(&scene, &clusters, cfg.affinity);
            let graph = build_graph(ts, &ctx, weights.edge_weights(), &cfg.graph).map_err(data)?;
            let mut w = create(out)?;
            graph.write_text(&mut w).map_err(data)?;
            w.flush().map_err(data)?;
            report(g.json, graph_summary(&graph));
        }
        Command::Solve { graph, out } => {
            let file = File::open(graph).map_err(|e| CliError::Data(format!("{}: {e}", graph.display())))?;
            let graph = TrackingGraph::read_text(std::io::BufReader::new(file)).map_err(data)?;
            let (y, rep) = solve(&graph.problem()).map_err(data)?;
            let ids: Vec<u64> = graph.nodes.iter().map(|n| n.id).collect();
            write_labels(out, &ids, &y.partition)?;
            // the solver report is always JSON
            report(true, serde_json::to_value(&rep).expect("serializable"));
        }
        Command::Track { scene, out, stop_after } => {
            let scene = load_scene(scene, None)?;
            let weights = load_weights(&cfg).map_err(CliError::Data)?;
            let stop = stop_after.unwrap_or(Stage::Eval);
            let result = run_pipeline(&cfg, &scene, &weights, stop).map_err(data)?;
            dump_stages(&scene, &result, out, g.json)?;
        }
        Command::Eval { gt, pred } => {
            let gt = read_ground_truth(gt).map_err(data)?;
            let pred = read_trajectories(pred).map_err(data)?;
            let r = evaluate_mot(&ground_truth_frames(&gt), &prediction_frames(&pred), cfg.match_threshold)
                .map_err(data)?;
            if g.json {
                report(true, serde_json::to_value(&r).expect("serializable"));
            } else {
                print!("{}", r.to_key_values());
            }
        }
    }
    Ok(())
}

fn graph_summary(graph: &TrackingGraph) -> Value {
    use mcmot::graph::EdgeClass::*;
    json!({
        "nodes": graph.nodes.len(),
        "temporal_base": graph.count(TemporalBase),
        "temporal_lifted": graph.count(TemporalLifted),
        "spatial": graph.count(Spatial),
        "constraint": graph.count(Constraint),
        "big_m": graph.big_m,
    })
}

/// Writes every artifact the pipeline produced.
fn dump_stages(scene: &SceneBundle, r: &PipelineOutput, out: &Path, json_out: bool) -> Result<(), CliError> {
    write_clusters_csv(scene, &r.clusters, create(&out.join("clusters.csv"))?).map_err(data)?;
    let mut fields = serde_json::Map::new();
    if let Some(ts) = &r.tracklets {
        write_tracklets(ts, &out.join("tracklets.csv")).map_err(data)?;
        fields.insert("tracklets".into(), json!(ts.len()));
    }
    if let Some(graph) = &r.graph {
        let mut w = create(&out.join("graph.txt"))?;
        graph.write_text(&mut w).map_err(data)?;
        w.flush().map_err(data)?;
        fields.insert("graph".into(), graph_summary(graph));
    }
    if let (Some(sol), Some(ts)) = (&r.solution, &r.tracklets) {
        let ids: Vec<u64> = ts.iter().map(|t| t.id).collect();
        write_labels(&out.join("labels.txt"), &ids, &sol.labels)?;
        fields.insert("rounds".into(), json!(sol.rounds));
        fields.insert("components".into(), json!(sol.components));
    }
    if let Some(trajs) = &r.trajectories {
        write_trajectories(trajs, &out.join("trajectories.csv")).map_err(data)?;
        fields.insert("trajectories".into(), json!(trajs.len()));
    }
    if let Some(rep) = &r.report {
        let mut w = create(&out.join("report.txt"))?;
        w.write_all(rep.to_key_values().as_bytes()).map_err(data)?;
        w.flush().map_err(data)?;
        fields.insert("report".into(), serde_json::to_value(rep).expect("serializable"));
    }
    report(json_out, Value::Object(fields));
    Ok(())
}
