use std::fs::{self, File};
use std::io::ErrorKind;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use log::info;
use sha2::{Digest, Sha256};

use mgccf::dataset::{read_snapshot, write_snapshot, InputFormat, InteractionDataset};
use mgccf::evaluation::{evaluate_model, EvalNeighborhood, Target};
use mgccf::graphs::{read_bundle, write_bundle, GraphBundle};
use mgccf::model::{FusionMode, ModelKind};
use mgccf::run::{
    export_embeddings, graphs_for, load_model, prepare_dataset, train_run, DatasetSummary, ExportSide, RunConfig,
    CONFIG_FILE,
};

use crate::args::*;

pub const SNAPSHOT_FILE: &str = "dataset.snapshot";
pub const SUMMARY_FILE: &str = "summary.json";
pub const SWEEP_FILE: &str = "sweep.csv";

/// Marks failures caused by bad input rather than by the computation.
#[derive(Debug)]
struct InputError(String);

impl std::fmt::Display for InputError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for InputError {}

/// 2 for unusable input or configuration, 1 for anything else.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<InputError>() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<mgccf::Error>() {
            return match e {
                mgccf::Error::NonFinite(_) | mgccf::Error::Sampling(_) => 1,
                mgccf::Error::Io(io) if io.kind() != ErrorKind::NotFound => 1,
                _ => 2,
            };
        }
        if let Some(io) = cause.downcast_ref::<std::io::Error>() {
            return if io.kind() == ErrorKind::NotFound { 2 } else { 1 };
        }
    }
    1
}

fn require_file(path: &Path, what: &str) -> Result<()> {
    if !path.is_file() {
        return Err(InputError(format!("{what} {} does not exist", path.display())).into());
    }
    Ok(())
}

pub fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Prepare(a) => prepare(a),
        Command::BuildGraphs(a) => build_graphs(a),
        Command::Train(a) => train(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Sweep(a) => sweep(a),
        Command::ExportEmbeddings(a) => export(a),
    }
}

/// Defaults, then the config file, then `--seed`.
fn base_config(common: &CommonArgs) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => {
            require_file(path, "config file")?;
            RunConfig::from_json_file(path)?
        }
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn apply_eval(cfg: &mut RunConfig, a: &EvalArgs) {
    if let Some(c) = &a.cutoffs {
        cfg.eval.cutoffs = c.clone();
    }
    if let Some(n) = a.eval_neighborhood {
        cfg.eval.neighborhood = match n {
            NeighborhoodArg::Full => EvalNeighborhood::Full,
            NeighborhoodArg::Union => EvalNeighborhood::PresampledUnion,
        };
    }
    if let Some(n) = a.max_eval_neighbors {
        cfg.eval.max_eval_neighbors = n;
    }
}

fn apply_model(cfg: &mut RunConfig, a: &ModelArgs) {
    if let Some(m) = a.model {
        cfg.model_kind = match m {
            ModelArg::MultiGccf => ModelKind::MultiGccf,
            ModelArg::Bprmf => ModelKind::Bprmf,
        };
    }
    if let Some(f) = a.fusion {
        cfg.model.fusion = match f {
            FusionArg::Sum => FusionMode::Sum,
            FusionArg::Concat => FusionMode::Concat,
            FusionArg::Attention => FusionMode::Attention,
        };
    }
    if a.no_mge {
        cfg.model.use_mge = false;
    }
    if a.no_skip {
        cfg.model.use_skip = false;
    }
    if a.regularize_embeddings {
        cfg.model.regularize_embeddings = true;
    }
    let m = &mut cfg.model;
    let t = &mut cfg.train;
    let pairs: [(&mut usize, Option<usize>); 8] = [
        (&mut m.num_gcn_layers, a.bipar_hops.map(usize::from)),
        (&mut m.input_dim, a.input_dim),
        (&mut m.layer1_dim, a.layer1_dim),
        (&mut m.output_dim, a.output_dim),
        (&mut t.batch_size, a.batch_size),
        (&mut t.max_epochs, a.epochs),
        (&mut t.early_stop_patience, a.patience),
        (&mut t.eval_every, a.eval_every),
    ];
    for (slot, value) in pairs {
        if let Some(v) = value {
            *slot = v;
        }
    }
    if let Some(v) = a.validation_users {
        t.validation_users = v;
    }
    for (slot, value) in [
        (&mut m.dropout_rate, a.dropout),
        (&mut m.lambda, a.lambda),
        (&mut m.beta, a.beta),
        (&mut t.learning_rate, a.lr),
    ] {
        if let Some(v) = value {
            *slot = v;
        }
    }
    apply_eval(cfg, &a.eval);
}

fn validated(cfg: RunConfig) -> Result<RunConfig> {
    let cfg = cfg.resolved();
    cfg.validate().map_err(|e| InputError(e.to_string()))?;
    Ok(cfg)
}

fn load_dataset(path: &Path) -> Result<InteractionDataset> {
    require_file(path, "dataset snapshot")?;
    read_snapshot(path).with_context(|| format!("reading {}", path.display()))
}

fn load_graphs(path: Option<&PathBuf>) -> Result<Option<GraphBundle>> {
    path.map(|p| {
        require_file(p, "graph bundle")?;
        read_bundle(p).with_context(|| format!("reading {}", p.display()))
    })
    .transpose()
}

fn sha256_hex(path: &Path) -> Result<String> {
    let bytes = fs::read(path)?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)?).with_context(|| format!("writing {}", path.display()))
}

fn prepare(a: PrepareArgs) -> Result<()> {
    let mut cfg = base_config(&a.common)?;
    if let Some(path) = &a.input {
        require_file(path, "input file")?;
        cfg.dataset.input = Some(path.clone());
        cfg.dataset.synthetic = None;
    }
    if a.synthetic {
        let mut b = cfg.dataset.synthetic.take().unwrap_or_default();
        b.users = a.users.unwrap_or(b.users);
        b.items = a.items.unwrap_or(b.items);
        b.blocks = a.blocks.unwrap_or(b.blocks);
        b.p_within = a.p_within.unwrap_or(b.p_within);
        b.p_across = a.p_across.unwrap_or(b.p_across);
        cfg.dataset.synthetic = Some(b);
    }
    if let Some(f) = a.format {
        cfg.dataset.format = match f {
            FormatArg::Auto => InputFormat::Auto,
            FormatArg::Whitespace => InputFormat::Whitespace,
            FormatArg::Csv => InputFormat::Csv,
        };
    }
    if let Some(n) = a.min_interactions {
        cfg.dataset.min_interactions = n;
    }
    if cfg.dataset.input.is_none() && cfg.dataset.synthetic.is_none() {
        bail!(InputError("give --input FILE or --synthetic".into()));
    }
    let cfg = validated(cfg)?;
    let ds = prepare_dataset(&cfg.dataset, cfg.seed)?;
    fs::create_dir_all(&a.out)?;
    let snap = a.out.join(SNAPSHOT_FILE);
    write_snapshot(&snap, &ds)?;
    let summary = DatasetSummary::of(&ds);
    write_json(&a.out.join(SUMMARY_FILE), &summary)?;
    write_json(&a.out.join(CONFIG_FILE), &cfg)?;
    println!(
        "users={} items={} interactions={} density={:.3}% train={} validation={} test={} sha256={}",
        summary.users,
        summary.items,
        summary.interactions,
        summary.density_percent,
        summary.train,
        summary.validation,
        summary.test,
        sha256_hex(&snap)?
    );
    Ok(())
}

fn build_graphs(a: BuildGraphsArgs) -> Result<()> {
    let mut cfg = base_config(&a.common)?;
    let ds = load_dataset(&a.dataset)?;
    let mut cfg_graphs = cfg.resolved().graphs;
    if let Some(t) = a.target_degree {
        cfg_graphs.target_avg_degree = t;
    }
    if let Some(m) = a.max_degree {
        cfg_graphs.max_mge_degree = m;
    }
    if let Some(s) = a.sets {
        cfg_graphs.num_presample_sets = s;
    }
    if let Some(s) = &a.sample_sizes {
        cfg_graphs.sample_sizes = s.clone();
    }
    cfg.graphs = cfg_graphs.clone();
    let bundle = GraphBundle::build(&ds, &cfg_graphs).map_err(|e| match e {
        mgccf::Error::Config(m) => anyhow::Error::new(InputError(m)),
        other => other.into(),
    })?;
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    write_bundle(&a.out, &bundle)?;
    for (name, g) in [("user", &bundle.user_graph), ("item", &bundle.item_graph)] {
        println!(
            "{name} graph: nodes={} edges={} avg_degree={:.2} threshold={:.6}{}",
            g.num_nodes(),
            g.num_edges(),
            g.avg_degree(),
            g.threshold,
            if g.unreachable { " (target unreachable)" } else { "" }
        );
    }
    println!(
        "bipartite edges={} presample sets={} sizes={:?}",
        bundle.bipartite.num_edges(),
        bundle.user_samples.num_sets(),
        bundle.user_samples.sizes()
    );
    Ok(())
}

fn train(a: TrainArgs) -> Result<()> {
    let mut cfg = base_config(&a.common)?;
    apply_model(&mut cfg, &a.model);
    if let Some(w) = &a.warm_start {
        require_file(w, "warm-start checkpoint")?;
        cfg.warm_start = Some(w.clone());
    }
    let cfg = validated(cfg)?;
    let ds = load_dataset(&a.dataset)?;
    let bundle = graphs_for(&cfg, &ds, load_graphs(a.graphs.as_ref())?)?;
    let outcome = train_run(&cfg, &ds, bundle.as_ref(), &a.out)?;
    let s = &outcome.state;
    println!(
        "model={} epochs={} best_epoch={} best_val_recall@20={:.6}{}",
        model_label(&cfg),
        s.epoch,
        s.best_epoch,
        s.best_validation_recall,
        if s.stopped_early { " (early stop)" } else { "" }
    );
    Ok(())
}

fn model_label(cfg: &RunConfig) -> String {
    match cfg.model_kind {
        ModelKind::Bprmf => "bprmf".into(),
        ModelKind::MultiGccf => cfg.model.label(),
    }
}

/// Config for commands that start from a checkpoint: `--config`, else the
/// `config.json` saved next to the checkpoint, else defaults.
fn checkpoint_config(common: &CommonArgs, checkpoint: &Path) -> Result<RunConfig> {
    if common.config.is_none() {
        let beside = checkpoint.with_file_name(CONFIG_FILE);
        if beside.is_file() {
            let mut cfg = RunConfig::from_json_file(&beside)?;
            if let Some(seed) = common.seed {
                cfg.seed = seed;
            }
            return Ok(cfg);
        }
    }
    base_config(common)
}

fn model_and_graphs(
    cfg: &RunConfig,
    dataset: &Path,
    checkpoint: &Path,
    graphs: Option<&PathBuf>,
) -> Result<(InteractionDataset, mgccf::model::Model, Option<GraphBundle>)> {
    let ds = load_dataset(dataset)?;
    require_file(checkpoint, "checkpoint")?;
    let model = load_model(checkpoint, &ds)?;
    let bundle = if model.needs_graphs() {
        let mut c = cfg.clone();
        c.model_kind = ModelKind::MultiGccf;
        graphs_for(&c, &ds, load_graphs(graphs)?)?
    } else {
        None
    };
    Ok((ds, model, bundle))
}

fn evaluate(a: EvaluateArgs) -> Result<()> {
    let mut cfg = checkpoint_config(&a.common, &a.checkpoint)?;
    apply_eval(&mut cfg, &a.eval);
    let cfg = validated(cfg)?;
    let (ds, model, bundle) = model_and_graphs(&cfg, &a.dataset, &a.checkpoint, a.graphs.as_ref())?;
    let target = match a.split {
        SplitArg::Validation => Target::Validation,
        SplitArg::Test => Target::Test,
    };
    let report = evaluate_model(&model, bundle.as_ref(), &ds, target, &cfg.eval)?;
    if let Some(stem) = &a.out {
        if let Some(dir) = stem.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
        report.write(stem)?;
    }
    print!("{}", report.to_csv());
    Ok(())
}

fn sweep(a: SweepArgs) -> Result<()> {
    let mut cfg = base_config(&a.common)?;
    apply_model(&mut cfg, &a.model);
    let cfg = validated(cfg)?;
    if a.lrs.is_empty() {
        bail!(InputError("--lrs must not be empty".into()));
    }
    let lambdas = a.lambdas.clone().unwrap_or_else(|| vec![cfg.model.lambda]);
    let betas = a.betas.clone().unwrap_or_else(|| vec![cfg.model.beta]);
    let ds = load_dataset(&a.dataset)?;
    let bundle = graphs_for(&cfg, &ds, load_graphs(a.graphs.as_ref())?)?;
    fs::create_dir_all(&a.out)?;
    let mut rows = Vec::new();
    for &lr in &a.lrs {
        for &lambda in &lambdas {
            for &beta in &betas {
                let mut c = cfg.clone();
                c.train.learning_rate = lr;
                c.model.lambda = lambda;
                c.model.beta = beta;
                let c = validated(c)?;
                let dir = a.out.join(format!("run-{:03}", rows.len()));
                info!("sweep run {} lr={lr} lambda={lambda} beta={beta}", rows.len());
                let out = train_run(&c, &ds, bundle.as_ref(), &dir)?;
                rows.push((dir, lr, lambda, beta, out.state.best_validation_recall, out.state.best_epoch));
            }
        }
    }
    let best = rows
        .iter()
        .enumerate()
        .fold(0, |b, (i, r)| if r.4 > rows[b].4 { i } else { b });
    let label = model_label(&cfg);
    let mut csv = String::from("run,model,learning_rate,lambda,beta,best_val_recall@20,best_epoch,best\n");
    for (i, (dir, lr, lambda, beta, recall, epoch)) in rows.iter().enumerate() {
        let name = dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        csv += &format!(
            "{name},{label},{lr},{lambda},{beta},{recall},{epoch},{}\n",
            u8::from(i == best)
        );
    }
    fs::write(a.out.join(SWEEP_FILE), &csv)?;
    write_json(&a.out.join(CONFIG_FILE), &cfg)?;
    print!("{csv}");
    Ok(())
}

fn export(a: ExportArgs) -> Result<()> {
    let mut cfg = checkpoint_config(&a.common, &a.checkpoint)?;
    apply_eval(&mut cfg, &a.eval);
    let cfg = validated(cfg)?;
    let (_, model, bundle) = model_and_graphs(&cfg, &a.dataset, &a.checkpoint, a.graphs.as_ref())?;
    let side = match a.side {
        SideArg::Users => ExportSide::Users,
        SideArg::Items => ExportSide::Items,
    };
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let file = File::create(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    export_embeddings(&model, bundle.as_ref(), &cfg.eval, side, file)?;
    Ok(())
}
