//! File-level commands behind the CLI.
//!
//! Every command starts from the same preparation: load the behavior files,
//! apply the interaction filter, hold out the test split and, when enabled,
//! a validation split from the remainder. The graph used for training is
//! built from what is left after both holdouts; evaluation masks every
//! non-test interaction.

use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};

use crate::config::{substream_seed, RunConfig};
use crate::data::{filter_min_interactions, Dataset};
use crate::error::Error;
use crate::eval::{evaluate, split, EvalReport, ReportMetadata};
use crate::graph::{CombinationGraph, PogGraph};
use crate::io::{self, EmbeddingSnapshot, LoadedData, Manifest, ManifestEntry};
use crate::model::EmbeddingModel;
use crate::order::{BehaviorOrder, CombinationRank, RankUniverse};
use crate::train::{train, TrainError, Validation};

/// Loaded, filtered and split data shared by all commands.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub order: BehaviorOrder,
    pub ranks: CombinationRank,
    pub data: LoadedData,
    /// Everything except the test split.
    pub train: Dataset,
    pub test: Dataset,
    /// `train` minus the validation split; equals `train` without validation.
    pub fit: Dataset,
    pub valid: Option<Dataset>,
}

impl Prepared {
    pub fn graph(&self, tau: f64) -> Result<PogGraph, Error> {
        build_graph(&self.order, &self.ranks, &self.fit, tau)
    }
}

fn build_graph(order: &BehaviorOrder, ranks: &CombinationRank, data: &Dataset, tau: f64) -> Result<PogGraph, Error> {
    let cg = CombinationGraph::from_dataset(order, data)?;
    Ok(PogGraph::build(&cg, ranks, tau)?)
}

fn load(cfg: &RunConfig) -> Result<(BehaviorOrder, CombinationRank, LoadedData), Error> {
    cfg.validate()?;
    let order = cfg.order()?;
    let raw = io::load_behavior_files(&cfg.datasets, cfg.header)?;
    let (filtered, remap) = filter_min_interactions(&raw.dataset, cfg.min_interactions)?;
    let data = raw.remapped(filtered, &remap);
    let ranks = match cfg.rank_universe {
        RankUniverse::AllSubsets => CombinationRank::over_all_subsets(&order)?,
        RankUniverse::Observed => {
            let cg = CombinationGraph::from_dataset(&order, &data.dataset)?;
            CombinationRank::build(&order, cg.combination_counts().into_keys())?
        }
    };
    Ok((order, ranks, data))
}

pub fn prepare(cfg: &RunConfig) -> Result<Prepared, Error> {
    let (order, ranks, data) = load(cfg)?;
    let (train, test) = split(&data.dataset, &cfg.split_spec())?;
    let (fit, valid) = match cfg.validation_split() {
        Some(spec) => {
            let (fit, valid) = split(&train, &spec)?;
            (fit, Some(valid))
        }
        None => (train.clone(), None),
    };
    Ok(Prepared { order, ranks, data, train, test, fit, valid })
}

/// Counts printed after building a graph.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphSummary {
    pub n_users: usize,
    pub n_items: usize,
    pub n_edges: usize,
    /// (combination, rank, edges) in ascending rank.
    pub combinations: Vec<(String, u32, usize)>,
}

impl GraphSummary {
    pub fn new(order: &BehaviorOrder, g: &PogGraph) -> Self {
        let mut counts = std::collections::BTreeMap::new();
        for e in g.edges() {
            *counts.entry((e.rank, e.combination)).or_insert(0usize) += 1;
        }
        GraphSummary {
            n_users: g.n_users(),
            n_items: g.n_items(),
            n_edges: g.n_edges(),
            combinations: counts.into_iter().map(|((r, c), n)| (order.display(c), r, n)).collect(),
        }
    }
}

impl fmt::Display for GraphSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "users\t{}", self.n_users)?;
        writeln!(f, "items\t{}", self.n_items)?;
        writeln!(f, "edges\t{}", self.n_edges)?;
        for (c, r, n) in &self.combinations {
            writeln!(f, "{c}\trank {r}\t{n}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct BuildGraphOutput {
    pub summary: GraphSummary,
    pub snapshot: PathBuf,
    pub edges: PathBuf,
    pub rank_table: PathBuf,
}

/// Builds the graph over all (filtered) interactions and writes the snapshot,
/// edge list and rank table under `<output_dir>/graph`.
pub fn cmd_build_graph(cfg: &RunConfig) -> Result<BuildGraphOutput, Error> {
    let (order, ranks, data) = load(cfg)?;
    let g = build_graph(&order, &ranks, &data.dataset, cfg.tau)?;
    let dir = Path::new(&cfg.output_dir).join("graph");
    let out = BuildGraphOutput {
        summary: GraphSummary::new(&order, &g),
        snapshot: dir.join("pog.bin"),
        edges: dir.join("edges.tsv"),
        rank_table: dir.join("ranks.tsv"),
    };
    io::write_graph(&out.snapshot, &g)?;
    io::write_text(&out.edges, &io::edge_list_tsv(&g))?;
    io::write_text(&out.rank_table, &io::rank_table_tsv(&ranks, cfg.tau))?;
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub run_dir: PathBuf,
    /// Checkpoint that `eval` picks by default: the best validation model
    /// when validation ran, else the final one.
    pub checkpoint: PathBuf,
    pub final_checkpoint: PathBuf,
    pub log: PathBuf,
    pub epochs_run: usize,
    pub best_epoch: Option<usize>,
    pub stopped_early: bool,
}

fn snapshot(cfg: &RunConfig, model: &EmbeddingModel, g: &PogGraph) -> Result<EmbeddingSnapshot, Error> {
    Ok(EmbeddingSnapshot { layers: cfg.layers as u32, tau: cfg.tau, embeddings: model.propagate(g)? })
}

fn train_prepared(cfg: &RunConfig, prep: &Prepared) -> Result<TrainOutput, Error> {
    let g = prep.graph(cfg.tau)?;
    let model = EmbeddingModel::init(
        g.n_users(),
        g.n_items(),
        cfg.dim,
        cfg.layers,
        cfg.init_sigma,
        substream_seed(cfg.seed, "init"),
    )?;
    let tc = cfg.train_config(&prep.order)?;
    let validation = prep.valid.as_ref().map(|valid| Validation { train: &prep.fit, valid });
    let run_dir = cfg.run_dir();
    io::write_text(&run_dir.join("config.toml"), &cfg.to_toml())?;

    let outcome = match train(&g, model, &tc, validation) {
        Ok(o) => o,
        Err(TrainError::Diverged { epoch, last_finite }) => {
            io::write_embeddings(&run_dir.join("last_finite.emb"), &snapshot(cfg, &last_finite, &g)?)?;
            return Err(TrainError::Diverged { epoch, last_finite }.into());
        }
        Err(e) => return Err(e.into()),
    };

    let log = run_dir.join("train_log.tsv");
    let mut text = String::from("epoch\tstep\tloss\tval_mean_ndcg\n");
    for r in &outcome.log {
        let _ = writeln!(text, "{}", r.to_tsv_line());
    }
    io::write_text(&log, &text)?;

    let final_checkpoint = run_dir.join("final.emb");
    let final_snap = snapshot(cfg, &outcome.model, &g)?;
    io::write_embeddings(&final_checkpoint, &final_snap)?;
    let mut checkpoint = final_checkpoint.clone();
    let mut selected = final_snap;
    if let Some((_, _, best)) = &outcome.best {
        checkpoint = run_dir.join("best.emb");
        selected = snapshot(cfg, best, &g)?;
        io::write_embeddings(&checkpoint, &selected)?;
    }
    io::write_text(&run_dir.join("users.tsv"), &io::embedding_tsv(&prep.data.user_ids, &selected.embeddings.users))?;
    io::write_text(&run_dir.join("items.tsv"), &io::embedding_tsv(&prep.data.item_ids, &selected.embeddings.items))?;

    Ok(TrainOutput {
        run_dir,
        checkpoint,
        final_checkpoint,
        log,
        epochs_run: outcome.log.len(),
        best_epoch: outcome.best.as_ref().map(|b| b.0),
        stopped_early: outcome.stopped_early,
    })
}

fn manifest(cfg: &RunConfig) -> Manifest {
    Manifest::new(Path::new(&cfg.output_dir).join("manifest.tsv"))
}

/// Trains into `<output_dir>/<config hash>/` and registers the checkpoint.
pub fn cmd_train(cfg: &RunConfig) -> Result<TrainOutput, Error> {
    let prep = prepare(cfg)?;
    let out = train_prepared(cfg, &prep)?;
    manifest(cfg).register(&ManifestEntry {
        hash: cfg.hash(),
        report: String::new(),
        checkpoint: out.checkpoint.to_string_lossy().into_owned(),
    })?;
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct EvalOutput {
    pub report: EvalReport,
    pub json: PathBuf,
    pub tsv: PathBuf,
}

/// Checkpoint of the run directory: `best.emb` when present, else `final.emb`.
pub fn default_checkpoint(cfg: &RunConfig) -> PathBuf {
    let best = cfg.run_dir().join("best.emb");
    if best.exists() {
        best
    } else {
        cfg.run_dir().join("final.emb")
    }
}

fn load_checkpoint(path: &Path, prep: &Prepared) -> Result<EmbeddingSnapshot, Error> {
    let snap = io::read_embeddings(path)?;
    let (m, n) = (snap.embeddings.n_users(), snap.embeddings.n_items());
    if m != prep.train.n_users || n != prep.train.n_items {
        return Err(Error::DimensionMismatch {
            checkpoint_users: m,
            checkpoint_items: n,
            dataset_users: prep.train.n_users,
            dataset_items: prep.train.n_items,
        });
    }
    Ok(snap)
}

fn eval_prepared(cfg: &RunConfig, prep: &Prepared, checkpoint: &Path) -> Result<EvalOutput, Error> {
    let snap = load_checkpoint(checkpoint, prep)?;
    let mut report = evaluate(&snap.embeddings, &prep.train, &prep.test, &cfg.ks)?;
    report.metadata = ReportMetadata {
        dataset: cfg.name.clone(),
        config_hash: cfg.hash(),
        seed: cfg.seed,
        timestamp: (!cfg.deterministic).then(unix_time),
    };
    let dir = checkpoint.parent().map_or_else(|| cfg.run_dir(), Path::to_path_buf);
    let out = EvalOutput { json: dir.join("report.json"), tsv: dir.join("report.tsv"), report };
    io::write_text(&out.json, &out.report.to_json())?;
    io::write_text(&out.tsv, &out.report.to_tsv())?;
    Ok(out)
}

fn unix_time() -> String {
    let secs = std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map_or(0, |d| d.as_secs());
    secs.to_string()
}

/// Evaluates a checkpoint (default: the run directory of `cfg`) on the test
/// split and writes `report.json` and `report.tsv` next to it.
pub fn cmd_eval(cfg: &RunConfig, checkpoint: Option<&Path>) -> Result<EvalOutput, Error> {
    let prep = prepare(cfg)?;
    let path = checkpoint.map_or_else(|| default_checkpoint(cfg), Path::to_path_buf);
    eval_prepared(cfg, &prep, &path)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepCell {
    pub tau: f64,
    pub gamma: f64,
    pub lr: f64,
    pub reg: f64,
    pub hash: String,
    pub mean_ndcg: f64,
}

#[derive(Debug, Clone)]
pub struct SweepOutput {
    pub cells: Vec<SweepCell>,
    pub table: PathBuf,
    pub manifest: PathBuf,
}

/// Cartesian product of the sweep grid; axes without values use the scalar
/// setting.
pub fn sweep_cells(cfg: &RunConfig) -> Result<Vec<RunConfig>, Error> {
    let g = &cfg.sweep;
    if g.tau.is_empty() && g.gamma.is_empty() && g.lr.is_empty() && g.reg.is_empty() {
        return Err(Error::EmptyGrid);
    }
    let axis = |v: &Vec<f64>, scalar: f64| if v.is_empty() { vec![scalar] } else { v.clone() };
    let (taus, gammas, lrs, regs) =
        (axis(&g.tau, cfg.tau), axis(&g.gamma, cfg.gamma), axis(&g.lr, cfg.lr), axis(&g.reg, cfg.reg));
    let cells = taus.len() * gammas.len() * lrs.len() * regs.len();
    if cells > g.max_cells {
        return Err(Error::GridTooLarge { cells, cap: g.max_cells });
    }
    let mut out = Vec::with_capacity(cells);
    for &tau in &taus {
        for &gamma in &gammas {
            for &lr in &lrs {
                for &reg in &regs {
                    let mut c = cfg.clone();
                    c.tau = tau;
                    c.gamma = gamma;
                    c.lr = lr;
                    c.reg = reg;
                    c.validate()?;
                    out.push(c);
                }
            }
        }
    }
    Ok(out)
}

/// Trains and evaluates every grid cell, registering each in the manifest and
/// writing `<output_dir>/sweep.tsv`.
pub fn cmd_sweep(cfg: &RunConfig) -> Result<SweepOutput, Error> {
    let cells = sweep_cells(cfg)?;
    let prep = prepare(cfg)?;
    let manifest = manifest(cfg);
    let k = cfg.primary_k();
    let wide = !cfg.sweep.lr.is_empty() || !cfg.sweep.reg.is_empty();
    let mut table = String::from(if wide { "tau\tgamma\tlr\treg\tmean_ndcg\n" } else { "tau\tgamma\tmean_ndcg\n" });
    let mut results = Vec::with_capacity(cells.len());
    for c in &cells {
        let trained = train_prepared(c, &prep)?;
        let evaluated = eval_prepared(c, &prep, &trained.checkpoint)?;
        let mean_ndcg = evaluated.report.mean_ndcg(k).unwrap_or(0.0);
        manifest.register(&ManifestEntry {
            hash: c.hash(),
            report: evaluated.json.to_string_lossy().into_owned(),
            checkpoint: trained.checkpoint.to_string_lossy().into_owned(),
        })?;
        if wide {
            let _ = writeln!(table, "{}\t{}\t{}\t{}\t{mean_ndcg}", c.tau, c.gamma, c.lr, c.reg);
        } else {
            let _ = writeln!(table, "{}\t{}\t{mean_ndcg}", c.tau, c.gamma);
        }
        log::info!("tau={} gamma={} lr={} reg={} mean_ndcg@{k}={mean_ndcg}", c.tau, c.gamma, c.lr, c.reg);
        results.push(SweepCell { tau: c.tau, gamma: c.gamma, lr: c.lr, reg: c.reg, hash: c.hash(), mean_ndcg });
    }
    let path = Path::new(&cfg.output_dir).join("sweep.tsv");
    io::write_text(&path, &table)?;
    Ok(SweepOutput { cells: results, table: path, manifest: manifest.path().to_path_buf() })
}

/// One `user<TAB>item1,item2,...` line per requested user, with external
/// ids. Training items are never recommended; lists are not padded.
pub fn cmd_recommend(cfg: &RunConfig, checkpoint: Option<&Path>, users: &[String], k: usize) -> Result<String, Error> {
    let prep = prepare(cfg)?;
    let path = checkpoint.map_or_else(|| default_checkpoint(cfg), Path::to_path_buf);
    let snap = load_checkpoint(&path, &prep)?;
    let ids: Vec<usize> = users
        .iter()
        .map(|u| prep.data.user_index(u).ok_or_else(|| Error::UnknownUser(u.clone())))
        .collect::<Result<_, _>>()?;
    let mask = prep.train.user_items();
    let mut out = String::new();
    for (name, u) in users.iter().zip(ids) {
        let items: Vec<&str> = snap
            .embeddings
            .top_k(u, k, &mask[u])
            .into_iter()
            .map(|i| prep.data.item_ids[i as usize].as_str())
            .collect();
        let _ = writeln!(out, "{name}\t{}", items.join(","));
    }
    Ok(out)
}
