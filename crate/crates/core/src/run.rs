//! End-to-end runs driven by a serialisable [`RunConfig`].
//!
//! These functions sit between the library modules and the command line:
//! they resolve seeds, read and write the on-disk artifacts and keep the
//! file layout of an output directory in one place.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use log::info;
use serde::{Deserialize, Serialize};

use crate::dataset::synthetic::{block_dataset, BlockConfig};
use crate::dataset::{filter_and_index, load_interactions, split, InputFormat, InteractionDataset, SplitRatios};
use crate::error::{Error, Result};
use crate::evaluation::{inference_embeddings, EvalConfig};
use crate::graphs::{GraphBundle, GraphConfig};
use crate::model::{Bprmf, Model, ModelConfig, ModelKind, MultiGccf};
use crate::numerics::{read_checkpoint, write_checkpoint};
use crate::trainer::{epoch_log_csv, train, warm_start_from_bprmf, TrainConfig, TrainOutcome, EPOCH_LOG_HEADER};

pub const CONFIG_FILE: &str = "config.json";
pub const EPOCH_LOG_FILE: &str = "epoch_log.csv";
pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const VALIDATION_REPORT_STEM: &str = "validation";

/// Where interactions come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    /// Raw interaction file; ignored when `synthetic` is set.
    pub input: Option<PathBuf>,
    pub format: InputFormat,
    pub synthetic: Option<BlockConfig>,
    pub min_interactions: usize,
    pub split: SplitRatios,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            input: None,
            format: InputFormat::Auto,
            synthetic: None,
            min_interactions: 10,
            split: SplitRatios::default(),
        }
    }
}

/// Everything needed to reproduce one run. `seed` overrides the seeds of
/// the nested sections.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    pub dataset: DatasetConfig,
    pub graphs: GraphConfig,
    pub model_kind: ModelKind,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    /// BPRMF checkpoint whose tables initialise and freeze the embeddings.
    pub warm_start: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            dataset: DatasetConfig::default(),
            graphs: GraphConfig::default(),
            model_kind: ModelKind::MultiGccf,
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
            warm_start: None,
        }
    }
}

impl RunConfig {
    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let text = fs::read_to_string(path.as_ref())?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.as_ref().display())))
    }

    /// Copies the master seed into every section and aligns the graph
    /// sampling with the model.
    pub fn resolved(&self) -> RunConfig {
        let mut c = self.clone();
        c.graphs.seed = c.seed;
        c.train.seed = c.seed;
        c.graphs.sample_sizes = c.model.sample_sizes.clone();
        c.graphs.num_presample_sets = c.train.num_presample_sets;
        c
    }

    pub fn validate(&self) -> Result<()> {
        self.dataset.split.validate()?;
        if self.dataset.min_interactions == 0 {
            return Err(Error::Config("min_interactions must be at least 1".into()));
        }
        self.model.validate()?;
        self.train.validate()?;
        self.eval.validate()?;
        if self.warm_start.is_some() && self.model_kind != ModelKind::MultiGccf {
            return Err(Error::Config("warm start applies to the multi-graph model only".into()));
        }
        Ok(())
    }
}

/// Counts reported after preparing a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub users: usize,
    pub items: usize,
    pub interactions: usize,
    /// Percentage of the user x item matrix that is observed.
    pub density_percent: f64,
    pub train: usize,
    pub validation: usize,
    pub test: usize,
}

impl DatasetSummary {
    pub fn of(ds: &InteractionDataset) -> Self {
        DatasetSummary {
            users: ds.num_users(),
            items: ds.num_items(),
            interactions: ds.num_interactions(),
            density_percent: 100.0 * ds.density(),
            train: ds.train().len(),
            validation: ds.validation().len(),
            test: ds.test().len(),
        }
    }
}

/// Loads or generates interactions, filters, indexes and splits them.
pub fn prepare_dataset(cfg: &DatasetConfig, seed: u64) -> Result<InteractionDataset> {
    cfg.split.validate()?;
    let raw = match (&cfg.synthetic, &cfg.input) {
        (Some(block), _) => block_dataset(block, seed).raw,
        (None, Some(path)) => load_interactions(path, cfg.format)?,
        (None, None) => return Err(Error::Config("no input file and no synthetic generator given".into())),
    };
    let indexed = filter_and_index(&raw, cfg.min_interactions)?;
    split(&indexed, cfg.split, seed)
}

/// A fresh model of the configured kind.
pub fn init_model(cfg: &RunConfig, ds: &InteractionDataset) -> Result<Model> {
    let cfg = cfg.resolved();
    Ok(match cfg.model_kind {
        ModelKind::MultiGccf => {
            let mut m = MultiGccf::new(cfg.model.clone(), ds.num_users(), ds.num_items(), cfg.seed)?;
            if let Some(path) = &cfg.warm_start {
                let (pre, _) = Model::from_checkpoint(read_checkpoint(path)?)?;
                match pre {
                    Model::Bprmf(b) => warm_start_from_bprmf(&mut m, &b)?,
                    Model::MultiGccf(_) => {
                        return Err(Error::Config(format!("{} is not a BPRMF checkpoint", path.display())))
                    }
                }
            }
            Model::MultiGccf(m)
        }
        ModelKind::Bprmf => Model::Bprmf(Bprmf::new(
            ds.num_users(),
            ds.num_items(),
            cfg.model.input_dim,
            cfg.model.lambda,
            cfg.seed,
        )?),
    })
}

/// Builds the graph bundle when the configured model needs one, or checks
/// a supplied bundle against the dataset.
pub fn graphs_for(cfg: &RunConfig, ds: &InteractionDataset, bundle: Option<GraphBundle>) -> Result<Option<GraphBundle>> {
    if cfg.model_kind == ModelKind::Bprmf {
        return Ok(None);
    }
    let cfg = cfg.resolved();
    let bundle = match bundle {
        Some(b) => b,
        None => GraphBundle::build(ds, &cfg.graphs)?,
    };
    bundle.check_matches(ds)?;
    if bundle.user_samples.num_hops() < cfg.model.num_gcn_layers {
        return Err(Error::Config(format!(
            "graph bundle samples {} hops but the model has {} layers",
            bundle.user_samples.num_hops(),
            cfg.model.num_gcn_layers
        )));
    }
    Ok(Some(bundle))
}

/// Trains one model and writes `config.json`, `epoch_log.csv`,
/// `model.ckpt` and `validation.{json,csv}` into `out_dir`.
pub fn train_run(
    cfg: &RunConfig,
    ds: &InteractionDataset,
    bundle: Option<&GraphBundle>,
    out_dir: &Path,
) -> Result<TrainOutcome> {
    let cfg = cfg.resolved();
    cfg.validate()?;
    fs::create_dir_all(out_dir)?;
    fs::write(out_dir.join(CONFIG_FILE), serde_json::to_string_pretty(&cfg)?)?;
    let model = init_model(&cfg, ds)?;
    let mut log = BufWriter::new(File::create(out_dir.join(EPOCH_LOG_FILE))?);
    writeln!(log, "{EPOCH_LOG_HEADER}")?;
    let mut log_err = None;
    let outcome = train(model, ds, bundle, &cfg.train, &cfg.eval, |rec| {
        info!("{}", rec.csv_row());
        if let Err(e) = writeln!(log, "{}", rec.csv_row()).and_then(|_| log.flush()) {
            log_err.get_or_insert(e);
        }
    })?;
    if let Some(e) = log_err {
        return Err(e.into());
    }
    let ckpt = outcome.model.to_checkpoint(Some(ds.fingerprint()))?;
    write_checkpoint(out_dir.join(CHECKPOINT_FILE), &ckpt)?;
    outcome.report.write(out_dir.join(VALIDATION_REPORT_STEM))?;
    Ok(outcome)
}

/// Re-renders an epoch log without the wall-clock column, for comparing
/// runs.
pub fn epoch_log_without_timing(csv: &str) -> String {
    csv.lines()
        .map(|l| l.rsplit_once(',').map_or(l, |(head, _)| head))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Loads a checkpoint and checks it was trained on `ds`.
pub fn load_model(path: impl AsRef<Path>, ds: &InteractionDataset) -> Result<Model> {
    let (model, fingerprint) = Model::from_checkpoint(read_checkpoint(path)?)?;
    if model.num_users() != ds.num_users() || model.num_items() != ds.num_items() {
        return Err(Error::Config("checkpoint does not match the dataset dimensions".into()));
    }
    if let Some(fp) = fingerprint {
        if fp != ds.fingerprint() {
            return Err(Error::Config("checkpoint was trained on a different dataset snapshot".into()));
        }
    }
    Ok(model)
}

/// Which embedding table to export.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExportSide {
    Users,
    Items,
}

/// Writes fused embeddings as `index<TAB>v1,...,vd` lines.
pub fn export_embeddings<W: Write>(
    model: &Model,
    bundle: Option<&GraphBundle>,
    eval: &EvalConfig,
    side: ExportSide,
    out: W,
) -> Result<()> {
    let emb = inference_embeddings(model, bundle, eval)?;
    let table = match side {
        ExportSide::Users => &emb.users,
        ExportSide::Items => &emb.items,
    };
    let mut out = BufWriter::new(out);
    for r in 0..table.rows() {
        let values: Vec<String> = table.row(r).iter().map(|v| v.to_string()).collect();
        writeln!(out, "{r}\t{}", values.join(","))?;
    }
    out.flush()?;
    Ok(())
}

/// Convenience used by tests and the sweep: the CSV log text of an outcome.
pub fn outcome_log(outcome: &TrainOutcome) -> String {
    epoch_log_csv(&outcome.state.history)
}
