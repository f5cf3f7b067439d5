//! The five subcommands. Each takes a resolved [`RunConfig`], echoes it into
//! the output directory and then reads or writes the artifacts below.
//!
//! ```text
//! <cmd>.resolved.conf   config as resolved for that command
//! train_graph.txt       training graph
//! id_maps.tsv           user and item keys
//! test_edges.tsv        held-out edges
//! stats.txt             counts and density of the ingested graph
//! model_<kind>.snap     trained model
//! loss_<kind>.csv       per-epoch training loss
//! report_<kind>.csv     evaluation metrics
//! comparison.csv        merged reports
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use gnnrec::bpr::BprModel;
use gnnrec::eval::{MetricsReport, ReportTable, Scorer};
use gnnrec::graph::{
    filter_min_interactions, parse_file, read_edges, read_graph, read_id_maps, split_train_test,
    to_implicit, write_edges, write_graph, write_id_maps, Edge, InteractionGraph, ParseOptions,
    Side,
};
use gnnrec::model::GnnModel;
use gnnrec::numeric::ops::sigmoid_scalar;
use gnnrec::snapshot::ModelSnapshot;
use gnnrec::trainer::{fit, write_loss_csv, LossRecord};

use crate::config::{ConfigEntries, ModelKind, RunConfig};
use crate::CliError;

pub const TRAIN_GRAPH: &str = "train_graph.txt";
pub const ID_MAPS: &str = "id_maps.tsv";
pub const TEST_EDGES: &str = "test_edges.tsv";
pub const STATS: &str = "stats.txt";
pub const COMPARISON: &str = "comparison.csv";

pub fn snapshot_name(kind: ModelKind) -> String {
    format!("model_{kind}.snap")
}

pub fn loss_name(kind: ModelKind) -> String {
    format!("loss_{kind}.csv")
}

pub fn report_name(kind: ModelKind) -> String {
    format!("report_{kind}.csv")
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::io(path, e))
}

fn open(path: &Path, hint: &'static str) -> Result<BufReader<File>, CliError> {
    match File::open(path) {
        Ok(f) => Ok(BufReader::new(f)),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Err(CliError::Missing {
            path: path.display().to_string(),
            hint,
        }),
        Err(e) => Err(CliError::io(path, e)),
    }
}

fn write_with<F>(path: &Path, body: F) -> Result<(), CliError>
where
    F: FnOnce(&mut BufWriter<File>) -> std::io::Result<()>,
{
    let mut out = create(path)?;
    body(&mut out)
        .and_then(|_| out.flush())
        .map_err(|e| CliError::io(path, e))
}

/// Creates the output directory and writes `<command>.resolved.conf`.
pub fn echo_config(
    entries: &ConfigEntries,
    cfg: &RunConfig,
    command: &str,
) -> Result<PathBuf, CliError> {
    std::fs::create_dir_all(&cfg.output_dir).map_err(|e| CliError::io(&cfg.output_dir, e))?;
    let path = cfg.output_dir.join(format!("{command}.resolved.conf"));
    write_with(&path, |out| write!(out, "{entries}"))?;
    Ok(path)
}

#[derive(Clone, Debug, PartialEq)]
pub struct IngestStats {
    pub dataset: String,
    pub ratings: usize,
    pub malformed: usize,
    pub users: usize,
    pub items: usize,
    pub edges: usize,
    pub density: f64,
    pub train_edges: usize,
    pub test_edges: usize,
}

impl std::fmt::Display for IngestStats {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "dataset\t{}", self.dataset)?;
        writeln!(f, "ratings\t{}", self.ratings)?;
        writeln!(f, "malformed\t{}", self.malformed)?;
        writeln!(f, "users\t{}", self.users)?;
        writeln!(f, "items\t{}", self.items)?;
        writeln!(f, "edges\t{}", self.edges)?;
        writeln!(f, "density\t{}", self.density)?;
        writeln!(f, "train_edges\t{}", self.train_edges)?;
        writeln!(f, "test_edges\t{}", self.test_edges)
    }
}

/// Parses, subsamples, filters, binarises and splits the dataset.
pub fn load_dataset(cfg: &RunConfig) -> Result<(InteractionGraph, IngestStats), CliError> {
    let d = &cfg.dataset;
    let opts = ParseOptions {
        strict: d.strict,
        max_rating: d.max_rating,
    };
    let mut table = parse_file(&d.path, d.format, &opts)?;
    let (ratings, malformed) = (table.len(), table.malformed);
    if d.subsample < 1.0 {
        table = table.subsample_users(d.subsample, cfg.subsample_seed());
    }
    let table = filter_min_interactions(&table, d.min_interactions);
    let graph = to_implicit(&table)?;
    let stats = IngestStats {
        dataset: d.name.clone(),
        ratings,
        malformed,
        users: graph.n_users(),
        items: graph.n_items(),
        edges: graph.n_edges(),
        density: graph.density()?,
        train_edges: 0,
        test_edges: 0,
    };
    Ok((graph, stats))
}

pub fn ingest(cfg: &RunConfig) -> Result<IngestStats, CliError> {
    let (graph, mut stats) = load_dataset(cfg)?;
    let (train, test) = split_train_test(&graph, &cfg.split())?;
    stats.train_edges = train.n_edges();
    stats.test_edges = test.len();
    let dir = &cfg.output_dir;
    write_with(&dir.join(TRAIN_GRAPH), |out| write_graph(out, &train))?;
    write_with(&dir.join(ID_MAPS), |out| write_id_maps(out, &train))?;
    write_with(&dir.join(TEST_EDGES), |out| write_edges(out, &test))?;
    write_with(&dir.join(STATS), |out| write!(out, "{stats}"))?;
    Ok(stats)
}

const INGEST_FIRST: &str = "run `gnnrec ingest` with this config first";

pub fn load_train_graph(cfg: &RunConfig) -> Result<InteractionGraph, CliError> {
    let keys = read_id_maps(open(&cfg.output_dir.join(ID_MAPS), INGEST_FIRST)?)?;
    Ok(read_graph(
        open(&cfg.output_dir.join(TRAIN_GRAPH), INGEST_FIRST)?,
        Some(keys),
    )?)
}

pub fn load_test_edges(cfg: &RunConfig) -> Result<Vec<Edge>, CliError> {
    Ok(read_edges(open(
        &cfg.output_dir.join(TEST_EDGES),
        INGEST_FIRST,
    )?)?)
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub snapshot: PathBuf,
    pub losses: Vec<LossRecord>,
}

/// Trains on an already loaded training graph and returns the snapshot.
pub fn train_on(
    cfg: &RunConfig,
    graph: &InteractionGraph,
) -> Result<(ModelSnapshot, Vec<LossRecord>), CliError> {
    match cfg.kind {
        ModelKind::Gnn => {
            let mut model =
                GnnModel::new(graph, cfg.model, cfg.sampler(), cfg.seed)?.with_exec_mode(cfg.exec);
            let losses = fit(graph, &mut model, &cfg.training)?;
            Ok((ModelSnapshot::from_gnn(&model, graph)?, losses))
        }
        ModelKind::Bpr => {
            let mut model = BprModel::new(graph, cfg.model.dim, cfg.seed)?.with_exec_mode(cfg.exec);
            let losses = fit(graph, &mut model, &cfg.training)?;
            Ok((ModelSnapshot::from_bpr(&model, graph)?, losses))
        }
    }
}

pub fn train(cfg: &RunConfig) -> Result<TrainOutcome, CliError> {
    let graph = load_train_graph(cfg)?;
    let (snap, losses) = train_on(cfg, &graph)?;
    let snapshot = cfg.output_dir.join(snapshot_name(cfg.kind));
    write_with(&snapshot, |out| snap.write(out))?;
    write_with(&cfg.output_dir.join(loss_name(cfg.kind)), |out| {
        write_loss_csv(out, &losses)
    })?;
    Ok(TrainOutcome { snapshot, losses })
}

fn read_snapshot(cfg: &RunConfig, path: Option<&Path>) -> Result<ModelSnapshot, CliError> {
    let path = path.map_or_else(
        || cfg.output_dir.join(snapshot_name(cfg.kind)),
        Path::to_path_buf,
    );
    let mut input = open(&path, "run `gnnrec train` first or pass --snapshot")?;
    Ok(ModelSnapshot::read(&mut input)?)
}

/// Checks that a snapshot was trained under this config's model block and
/// on this training graph.
pub fn check_compatible(
    cfg: &RunConfig,
    snap: &ModelSnapshot,
    graph: &InteractionGraph,
) -> Result<(), CliError> {
    let kind = snap.kind()?;
    if kind != cfg.kind.to_string() {
        return Err(CliError::Incompatible(format!(
            "snapshot holds `{kind}`, config has model.kind = {}",
            cfg.kind
        )));
    }
    let dim = snap.dim()?;
    if dim != cfg.model.dim {
        return Err(CliError::Incompatible(format!(
            "snapshot dimension {dim}, config has model.dim = {}",
            cfg.model.dim
        )));
    }
    if snap.user_keys != graph.user_keys() || snap.item_keys != graph.item_keys() {
        return Err(CliError::Incompatible(
            "snapshot was trained on a different graph".into(),
        ));
    }
    Ok(())
}

/// Scores a snapshot against a training graph and held-out edges.
pub fn evaluate_snapshot(
    cfg: &RunConfig,
    snap: &ModelSnapshot,
    train: &InteractionGraph,
    test: &[Edge],
) -> Result<MetricsReport, CliError> {
    check_compatible(cfg, snap, train)?;
    let scorer = snap.scorer()?;
    Ok(MetricsReport::compute(
        &snap.kind()?,
        &cfg.dataset.name,
        &scorer,
        train,
        test,
        &cfg.protocol(),
        cfg.exec,
    )?)
}

pub fn evaluate(cfg: &RunConfig, snapshot: Option<&Path>) -> Result<MetricsReport, CliError> {
    let snap = read_snapshot(cfg, snapshot)?;
    let train = load_train_graph(cfg)?;
    let test = load_test_edges(cfg)?;
    let report = evaluate_snapshot(cfg, &snap, &train, &test)?;
    let path = cfg.output_dir.join(report_name(cfg.kind));
    let mut out = create(&path)?;
    report.to_table().write_csv(&mut out)?;
    out.flush().map_err(|e| CliError::io(&path, e))?;
    Ok(report)
}

/// The `k` best unseen items for one user, as `(item key, probability)`,
/// best first; equal scores go to the lower item index.
pub fn top_k(
    scorer: &dyn Scorer,
    graph: &InteractionGraph,
    user: usize,
    k: usize,
) -> Vec<(String, f64)> {
    let seen = graph.neighbor_slices(Side::User, user).0;
    let mut scored: Vec<(usize, f64)> = (0..graph.n_items())
        .filter(|i| seen.binary_search(&(*i as u32)).is_err())
        .map(|i| (i, scorer.score(user, i)))
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    scored
        .into_iter()
        .take(k)
        .map(|(i, s)| (graph.item_keys()[i].clone(), sigmoid_scalar(s)))
        .collect()
}

pub fn recommend(
    cfg: &RunConfig,
    snapshot: Option<&Path>,
    user_key: &str,
    k: usize,
) -> Result<Vec<(String, f64)>, CliError> {
    let snap = read_snapshot(cfg, snapshot)?;
    let graph = load_train_graph(cfg)?;
    check_compatible(cfg, &snap, &graph)?;
    let user = graph.user_index(user_key)?;
    Ok(top_k(&snap.scorer()?, &graph, user, k))
}

/// Merges report files into one table, rows in argument order.
pub fn compare(reports: &[PathBuf]) -> Result<ReportTable, CliError> {
    let tables = reports
        .iter()
        .map(|p| {
            Ok(ReportTable::read_csv(open(
                p,
                "pass a report written by `gnnrec evaluate`",
            )?)?)
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    Ok(ReportTable::merge(&tables)?)
}

pub fn write_table(table: &ReportTable, path: &Path) -> Result<(), CliError> {
    let mut out = create(path)?;
    table.write_csv(&mut out)?;
    out.flush().map_err(|e| CliError::io(path, e))
}
