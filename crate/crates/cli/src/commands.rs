//! The five verbs of the command-line tool as library functions.

use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use gcrnn::graph::{build_gso, knn_graph, sbm_generate, Graph};
use gcrnn::model::{load_model, save_model, Model, ModelSpec, ParamCount};
use gcrnn::process::{derive_seed, load_dataset, make_epicenter_dataset, make_prediction_dataset, save_dataset, Target};
use gcrnn::train::{evaluate, train_with_progress, write_history_csv, EpochRecord, Metric};
use gcrnn::{ProcessDataset, Split};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::arch::{model_spec, Architecture};
use crate::config::{ExperimentConfig, Generator, GraphKind};
use crate::CliError;

const GRAPH_STREAM: u64 = 0;
const COORD_STREAM: u64 = 1;
const DATA_STREAM: u64 = 2;
const INIT_STREAM: u64 = 16;
const TRAIN_STREAM: u64 = 32;

fn round_seed(config: &ExperimentConfig, round: usize) -> u64 {
    derive_seed(config.seed, round as u64)
}

fn round_dir(out: &Path, round: usize) -> PathBuf {
    out.join(format!("round_{round:02}"))
}

fn read_coordinates(path: &Path) -> Result<Vec<[f64; 2]>, CliError> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let bad = || CliError::Config(format!("{}:{line}: expected two numbers `x,y`", path.display()));
        if rec.len() != 2 {
            return Err(bad());
        }
        let x = rec[0].trim().parse().map_err(|_| bad())?;
        let y = rec[1].trim().parse().map_err(|_| bad())?;
        out.push([x, y]);
    }
    Ok(out)
}

/// Graph of one round.
pub fn build_graph(config: &ExperimentConfig, round: usize) -> Result<Graph<f64>, CliError> {
    let g = &config.graph;
    let seed = round_seed(config, round);
    match g.kind {
        GraphKind::Sbm => Ok(sbm_generate(
            g.nodes,
            g.communities.expect("validated"),
            g.p_intra.expect("validated"),
            g.p_inter.expect("validated"),
            derive_seed(seed, GRAPH_STREAM),
        )?),
        GraphKind::Knn => {
            let coords = match &g.coordinates {
                Some(path) => {
                    let c = read_coordinates(path)?;
                    if c.len() != g.nodes {
                        return Err(CliError::Config(format!(
                            "graph.coordinates: {} lists {} sensors, graph.nodes is {}",
                            path.display(),
                            c.len(),
                            g.nodes
                        )));
                    }
                    c
                }
                None => {
                    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, COORD_STREAM));
                    (0..g.nodes).map(|_| [rng.random::<f64>(), rng.random::<f64>()]).collect()
                }
            };
            Ok(knn_graph(&coords, g.k.expect("validated"))?)
        }
    }
}

/// Graph and samples of one round.
pub fn generate_dataset(config: &ExperimentConfig, round: usize) -> Result<ProcessDataset<f64>, CliError> {
    let graph = build_graph(config, round)?;
    let gso = build_gso(&graph, config.graph.gso)?;
    let seed = derive_seed(round_seed(config, round), DATA_STREAM);
    let d = &config.data;
    let ds = match d.generator {
        Generator::Diffusion => make_prediction_dataset(
            &graph,
            &gso,
            config.split_sizes(),
            d.t_in,
            d.t_out.expect("validated"),
            config.noise(),
            seed,
        )?,
        Generator::Epicenter => {
            make_epicenter_dataset(&graph, &gso, config.split_sizes(), d.t_in, &config.wave_spec(), seed)?
        }
    };
    Ok(ds)
}

/// Writes one dataset directory per round under `out`.
pub fn cmd_generate(config: &ExperimentConfig, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    let mut dirs = Vec::with_capacity(config.rounds);
    for round in 0..config.rounds {
        let dir = round_dir(out, round);
        let ds = generate_dataset(config, round).map_err(|e| e.context(format!("round {round}")))?;
        save_dataset(&ds, &dir)?;
        dirs.push(dir);
    }
    Ok(dirs)
}

fn describe_data(ds: &ProcessDataset<f64>) -> String {
    let (t, n, f) = ds.input_dims().unwrap_or((0, ds.n_nodes(), 0));
    let target = match ds.samples.first().map(|s| &s.target) {
        Some(Target::Sequence(y)) => format!("{:?} targets", y.shape()),
        Some(Target::Label(_)) => format!("labels over {n} nodes"),
        _ => "no targets".into(),
    };
    format!("data has {t} steps of {n} nodes x {f} features with {target}")
}

fn describe_model(spec: &ModelSpec) -> String {
    match spec {
        ModelSpec::Recurrent(r) => format!(
            "model expects {} nodes x {} features per step and emits {:?} estimates",
            r.n_nodes, r.in_features, r.mode
        ),
        ModelSpec::Gnn(g) => format!("model expects {} stacked input features per node", g.in_features()),
    }
}

/// Rejects a model whose input layout does not match the dataset.
pub fn check_shapes(model: &Model<f64>, ds: &ProcessDataset<f64>) -> Result<(), CliError> {
    let spec = model.spec();
    let Some((t, n, f)) = ds.input_dims() else {
        return Err(CliError::Config("dataset has no samples".into()));
    };
    let fits = match &spec {
        ModelSpec::Recurrent(r) => r.n_nodes == n && r.in_features == f,
        ModelSpec::Gnn(g) => g.in_features() == t * f,
    };
    let mismatch = || CliError::Config(format!("{}; {}", describe_model(&spec), describe_data(ds)));
    if !fits {
        return Err(mismatch());
    }
    let split = [Split::Test, Split::Train, Split::Val]
        .into_iter()
        .find(|&s| !ds.splits.get(s).is_empty())
        .expect("nonempty dataset");
    let &i = ds.splits.get(split).first().expect("nonempty split");
    let prediction = model.predict(&ds.gso, &ds.samples[i].input).map_err(|_| mismatch())?;
    let out_shape = match prediction {
        gcrnn::Prediction::Steps(v) => vec![v.len(), v[0].shape()[0], v[0].shape()[1]],
        gcrnn::Prediction::Final(y) => y.shape().to_vec(),
    };
    let ok = match &ds.samples[i].target {
        Target::Sequence(y) => {
            let d = y.shape();
            out_shape == d || out_shape == [d[1], d[0] * d[2]]
        }
        Target::Label(_) => out_shape.iter().product::<usize>() == n,
        Target::Unlabeled => true,
    };
    if !ok {
        return Err(CliError::Config(format!(
            "{}; it produces {:?} but {}",
            describe_model(&spec),
            out_shape,
            describe_data(ds)
        )));
    }
    Ok(())
}

/// Deterministic record of one training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub architecture: Architecture,
    pub parameters: usize,
    pub metric: Metric,
    pub test_metric: f64,
    pub best_epoch: Option<usize>,
    pub epochs: usize,
}

struct RunOutput {
    summary: TrainSummary,
    model: Model<f64>,
    history: Vec<EpochRecord>,
    seconds: f64,
}

fn run_architecture(
    config: &ExperimentConfig,
    ds: &ProcessDataset<f64>,
    arch: Architecture,
    seed: u64,
    on_epoch: &mut dyn FnMut(Architecture, &EpochRecord),
) -> Result<RunOutput, CliError> {
    let start = Instant::now();
    let model = Model::from_spec(&model_spec(config, arch))?.with_init(derive_seed(seed, INIT_STREAM + arch.stream()));
    check_shapes(&model, ds)?;
    let train_config = config.train_config(arch, derive_seed(seed, TRAIN_STREAM + arch.stream()));
    let outcome = train_with_progress(&model, ds, &train_config, |r| on_epoch(arch, r))
        .map_err(|e| CliError::from(e).context(arch))?;
    let metric = config.metric();
    let test_metric = evaluate(&outcome.model, ds, Split::Test, metric)?;
    Ok(RunOutput {
        summary: TrainSummary {
            architecture: arch,
            parameters: outcome.model.count_parameters().total(),
            metric,
            test_metric,
            best_epoch: outcome.best_epoch,
            epochs: config.training.epochs,
        },
        model: outcome.model,
        history: outcome.history,
        seconds: start.elapsed().as_secs_f64(),
    })
}

fn write_history(path: &Path, history: &[EpochRecord]) -> Result<(), CliError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_history_csv(history, &mut w)?;
    w.flush()?;
    Ok(())
}

/// Trains every configured architecture on the dataset in `data`.
///
/// Each architecture gets `out/<name>/` holding `model.json`,
/// `history.csv` and `summary.json`; wall times go to `out/timing.csv` so
/// the other files stay reproducible byte for byte.
pub fn cmd_train(
    config: &ExperimentConfig,
    data: &Path,
    out: &Path,
    mut on_epoch: impl FnMut(Architecture, &EpochRecord),
) -> Result<Vec<TrainSummary>, CliError> {
    let ds: ProcessDataset<f64> = load_dataset(data).map_err(|e| CliError::from(e).context(data.display()))?;
    let seed = round_seed(config, 0);
    fs::create_dir_all(out)?;
    let mut timing = csv::Writer::from_path(out.join("timing.csv"))?;
    timing.write_record(["architecture", "wall_time_s"])?;
    let mut summaries = Vec::new();
    for &arch in &config.model.architectures {
        let run = run_architecture(config, &ds, arch, seed, &mut on_epoch)?;
        let dir = out.join(arch.name());
        fs::create_dir_all(&dir)?;
        fs::write(dir.join("model.json"), save_model(&run.model)?)?;
        write_history(&dir.join("history.csv"), &run.history)?;
        let summary = serde_json::to_string_pretty(&run.summary).map_err(std::io::Error::other)?;
        fs::write(dir.join("summary.json"), summary + "\n")?;
        timing.write_record([arch.name().to_string(), format!("{:.3}", run.seconds)])?;
        summaries.push(run.summary);
    }
    timing.flush()?;
    Ok(summaries)
}

/// Test-split metric of a saved model; appended to `results` when given.
pub fn cmd_eval(model_path: &Path, data: &Path, metric: Metric, results: Option<&Path>) -> Result<f64, CliError> {
    let text = fs::read_to_string(model_path).map_err(|e| CliError::from(e).context(model_path.display()))?;
    let model: Model<f64> = load_model(&text).map_err(|e| CliError::from(e).context(model_path.display()))?;
    let ds: ProcessDataset<f64> = load_dataset(data).map_err(|e| CliError::from(e).context(data.display()))?;
    check_shapes(&model, &ds)?;
    let value = evaluate(&model, &ds, Split::Test, metric)?;
    if let Some(path) = results {
        let fresh = !path.exists() || fs::metadata(path)?.len() == 0;
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        let mut w = csv::Writer::from_writer(file);
        if fresh {
            w.write_record(["model", "data", "metric", "value"])?;
        }
        w.write_record([
            model_path.display().to_string(),
            data.display().to_string(),
            format!("{metric:?}").to_lowercase(),
            format!("{value:?}"),
        ])?;
        w.flush()?;
    }
    Ok(value)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ResultRow {
    pub round: usize,
    pub architecture: Architecture,
    pub parameters: usize,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Aggregate {
    pub architecture: Architecture,
    pub parameters: usize,
    pub mean: f64,
    /// Sample standard deviation over rounds; zero for a single round.
    pub std: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentReport {
    pub metric: Metric,
    pub rows: Vec<ResultRow>,
    pub aggregates: Vec<Aggregate>,
}

impl ExperimentReport {
    pub fn aggregate(&self, arch: Architecture) -> Option<&Aggregate> {
        self.aggregates.iter().find(|a| a.architecture == arch)
    }

    pub fn value(&self, round: usize, arch: Architecture) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.round == round && r.architecture == arch)
            .map(|r| r.value)
    }
}

/// Mean and sample standard deviation per architecture, in configured order.
pub fn aggregate_rows(rows: &[ResultRow], architectures: &[Architecture]) -> Vec<Aggregate> {
    architectures
        .iter()
        .filter_map(|&arch| {
            let own: Vec<&ResultRow> = rows.iter().filter(|r| r.architecture == arch).collect();
            let first = own.first()?;
            let n = own.len() as f64;
            let mean = own.iter().map(|r| r.value).sum::<f64>() / n;
            let std = if own.len() > 1 {
                (own.iter().map(|r| (r.value - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
            } else {
                0.0
            };
            Some(Aggregate {
                architecture: arch,
                parameters: first.parameters,
                mean,
                std,
            })
        })
        .collect()
}

/// Runs every round and architecture and writes `out/results.csv`.
///
/// The results file holds one row per round and architecture followed by
/// one `mean` row per architecture whose `std` column is filled. Training
/// histories go to `out/round_XX/<name>_history.csv`.
pub fn cmd_experiment(
    config: &ExperimentConfig,
    out: &Path,
    mut on_round: impl FnMut(&ResultRow),
) -> Result<ExperimentReport, CliError> {
    fs::create_dir_all(out)?;
    fs::write(out.join("config.toml"), config.to_toml())?;
    let mut rows = Vec::new();
    let mut timing = csv::Writer::from_path(out.join("timing.csv"))?;
    timing.write_record(["round", "architecture", "wall_time_s"])?;
    for round in 0..config.rounds {
        let fail = |e: CliError| e.context(format!("round {round}"));
        let ds = generate_dataset(config, round).map_err(fail)?;
        let dir = round_dir(out, round);
        fs::create_dir_all(&dir)?;
        for &arch in &config.model.architectures {
            let run = run_architecture(config, &ds, arch, round_seed(config, round), &mut |_, _| {}).map_err(fail)?;
            write_history(&dir.join(format!("{}_history.csv", arch.name())), &run.history)?;
            timing.write_record([round.to_string(), arch.name().to_string(), format!("{:.3}", run.seconds)])?;
            timing.flush()?;
            let row = ResultRow {
                round,
                architecture: arch,
                parameters: run.summary.parameters,
                value: run.summary.test_metric,
            };
            on_round(&row);
            rows.push(row);
        }
    }
    let report = ExperimentReport {
        metric: config.metric(),
        aggregates: aggregate_rows(&rows, &config.model.architectures),
        rows,
    };
    write_results(&report, &out.join("results.csv"))?;
    Ok(report)
}

fn write_results(report: &ExperimentReport, path: &Path) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path)?;
    let metric = format!("{:?}", report.metric).to_lowercase();
    w.write_record(["round", "architecture", "parameters", "metric", "value", "std"])?;
    for r in &report.rows {
        w.write_record([
            r.round.to_string(),
            r.architecture.name().into(),
            r.parameters.to_string(),
            metric.clone(),
            format!("{:?}", r.value),
            String::new(),
        ])?;
    }
    for a in &report.aggregates {
        w.write_record([
            "mean".into(),
            a.architecture.name().into(),
            a.parameters.to_string(),
            metric.clone(),
            format!("{:?}", a.mean),
            format!("{:?}", a.std),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Itemized parameter counts of every configured architecture.
pub fn cmd_count_params(config: &ExperimentConfig) -> Result<Vec<(Architecture, ParamCount)>, CliError> {
    config
        .model
        .architectures
        .iter()
        .map(|&arch| Ok((arch, Model::<f64>::from_spec(&model_spec(config, arch))?.count_parameters())))
        .collect()
}

pub fn format_param_table(counts: &[(Architecture, ParamCount)]) -> String {
    let mut s = String::new();
    for (arch, count) in counts {
        s += &format!("{arch}\n");
        for item in &count.items {
            s += &format!("  {:<28}{:>8}\n", item.name, item.count);
        }
        for (component, n) in count.by_component() {
            s += &format!("  {:<28}{:>8}\n", format!("[{component}]"), n);
        }
        s += &format!("  {:<28}{:>8}\n", "convolutional", count.convolutional());
        s += &format!("  {:<28}{:>8}\n", "total", count.total());
    }
    s
}
