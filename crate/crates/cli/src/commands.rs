//! Subcommand implementations. Each reads its inputs, writes into an output
//! location distinct from them, and reports a one-line summary on stdout.

use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use framenet::analysis::{analyze, grouped_confusion, GroupedConfusion, DEFAULT_SAMPLE};
use framenet::data::{
    corrupt_labels_with, load_csv, load_dataset, normalize_global, save_dataset, Dataset,
    SyntheticSource,
};
use framenet::network::{load_network, save_network, FloatWidth, LayerSpec, Network};
use framenet::numerics::Rng;
use framenet::optim::{accuracy, cross_entropy, OptimizerConfig};
use framenet::training::{
    estimate_priors, predict, scaled_scores, train, Priors, TrainLog, TrainOutcome,
};
use framenet::{Error, InputLayout, Result};
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::sweep::solve_width;

/// Seed stream offsets for preprocessing draws.
const CORRUPT_STREAM: u64 = 100;
const PERMUTE_STREAM: u64 = 200;

pub const TRAIN_FILE: &str = "train.frn";
pub const DEV_FILE: &str = "dev.frn";
pub const MODEL_FILE: &str = "model.fnw";
pub const LOG_FILE: &str = "train_log.csv";
pub const SUMMARY_FILE: &str = "train_summary.json";

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(std::io::Error::other)?;
    fs::write(path, text + "\n")?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Format {
            field: "csv".into(),
            detail: format!("{other:?}"),
        },
    }
}

fn same_file(a: &Path, b: &Path) -> bool {
    match (a.canonicalize(), b.canonicalize()) {
        (Ok(x), Ok(y)) => x == y,
        _ => false,
    }
}

fn describe(name: &str, ds: &Dataset) -> String {
    format!(
        "{name}: N={} D={} K={} G={}",
        ds.len(),
        ds.dim(),
        ds.num_classes(),
        ds.num_groups()
    )
}

/// Paths written by [`gen_data`].
#[derive(Debug, Clone)]
pub struct GeneratedFiles {
    pub train: PathBuf,
    pub dev: PathBuf,
}

/// Builds train/dev splits (synthetic, or imported from CSV), applies label
/// corruption to the training split, splicing, normalization with training
/// statistics and the optional feature permutation, then writes both files.
pub fn gen_data(
    cfg: &ExperimentConfig,
    csv: Option<(&Path, &Path)>,
    out: &Path,
) -> Result<GeneratedFiles> {
    let dc = &cfg.data;
    let seed = dc.synthetic.seed;
    let (mut tr, mut dev) = match csv {
        Some((train_csv, dev_csv)) => (
            load_csv(train_csv, dc.group_of.clone())?,
            load_csv(dev_csv, dc.group_of.clone())?,
        ),
        None => {
            let src = SyntheticSource::new(&dc.synthetic)?;
            (
                src.sample(dc.synthetic.frames_per_class, 0)?,
                src.sample(dc.dev_frames_per_class, 1)?,
            )
        }
    };
    if tr.num_classes() != dev.num_classes() || tr.dim() != dev.dim() {
        return Err(Error::Config(format!(
            "train and dev splits disagree: D={}/{} K={}/{}",
            tr.dim(),
            dev.dim(),
            tr.num_classes(),
            dev.num_classes()
        )));
    }
    if dc.corruption_rate > 0.0 {
        let mut rng = Rng::derive(seed, CORRUPT_STREAM);
        tr = corrupt_labels_with(&tr, dc.corruption_rate, dc.corruption_mode, &mut rng)?;
    }
    tr = tr.spliced(dc.context)?;
    dev = dev.spliced(dc.context)?;
    if dc.normalize {
        let (normed, stats) = normalize_global(&tr)?;
        dev = stats.apply(&dev)?;
        tr = normed;
    }
    if dc.permute {
        tr = tr.permuted_features(&mut Rng::derive(seed, PERMUTE_STREAM))?;
        dev = dev.permuted_features(&mut Rng::derive(seed, PERMUTE_STREAM))?;
    }
    create_dir(out)?;
    let files = GeneratedFiles {
        train: out.join(TRAIN_FILE),
        dev: out.join(DEV_FILE),
    };
    save_dataset(&files.train, &tr)?;
    save_dataset(&files.dev, &dev)?;
    println!("{}", describe("train", &tr));
    println!("{}", describe("dev", &dev));
    Ok(files)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    Best,
    Final,
}

#[derive(Debug, Clone)]
pub struct TrainArgs {
    pub data: PathBuf,
    pub dev: PathBuf,
    pub resume: Option<PathBuf>,
    pub select: Selection,
    pub width: FloatWidth,
}

#[derive(Debug, Serialize)]
struct TrainSummary<'a> {
    num_params: usize,
    selected: Selection,
    selected_epoch: usize,
    epochs_run: usize,
    final_dev_ce: f64,
    final_dev_acc: f64,
    log: &'a TrainLog,
}

fn last_logged_epoch(path: &Path) -> Result<usize> {
    let mut reader = csv::Reader::from_path(path).map_err(csv_err)?;
    let mut last = 0;
    for record in reader.records() {
        let record = record.map_err(csv_err)?;
        last = record[0].parse().map_err(|_| Error::Format {
            field: "epoch".into(),
            detail: format!("{:?} in {}", &record[0], path.display()),
        })?;
    }
    Ok(last)
}

pub fn build_network(cfg: &ExperimentConfig, ds: &Dataset) -> Result<Network> {
    let (input, layers) = cfg.network.resolve(ds.dim(), ds.num_classes(), ds.grid())?;
    Network::new(input, layers, cfg.network.init, cfg.network.seed)
}

/// Trains from scratch (or from `--resume`) and writes the model, the epoch
/// log CSV and a JSON summary into `out`.
pub fn train_cmd(cfg: &ExperimentConfig, args: &TrainArgs, out: &Path) -> Result<TrainOutcome> {
    let tr = load_dataset(&args.data)?;
    let dev = load_dataset(&args.dev)?;
    let model_path = out.join(MODEL_FILE);
    let log_path = out.join(LOG_FILE);
    let mut tcfg = cfg.training.clone();
    let net = match &args.resume {
        Some(path) => {
            if same_file(path, &model_path) {
                return Err(Error::Config(format!(
                    "resuming from {} would overwrite it; choose another --out",
                    path.display()
                )));
            }
            let resume_log = path.with_file_name(LOG_FILE);
            tcfg.epoch_offset = if resume_log.exists() {
                last_logged_epoch(&resume_log)?
            } else {
                0
            };
            load_network(path)?.0
        }
        None => build_network(cfg, &tr)?,
    };
    for p in [&args.data, &args.dev] {
        if same_file(p, &model_path) || same_file(p, &log_path) {
            return Err(Error::Config(format!(
                "{} is both input and output",
                p.display()
            )));
        }
    }
    let outcome = train(&net, &tr, &dev, &cfg.optimizer, &tcfg)?;

    create_dir(out)?;
    let chosen = match args.select {
        Selection::Best => &outcome.best_network,
        Selection::Final => &outcome.network,
    };
    save_network(&model_path, chosen, args.width)?;
    let mut log_out = BufWriter::new(File::create(&log_path)?);
    if let Some(resume) = &args.resume {
        let prior = resume.with_file_name(LOG_FILE);
        if prior.exists() {
            log_out.write_all(&fs::read(prior)?)?;
            outcome.log.write_csv(&mut log_out, false)?;
        } else {
            outcome.log.write_csv(&mut log_out, true)?;
        }
    } else {
        outcome.log.write_csv(&mut log_out, true)?;
    }
    log_out.flush()?;
    let last = outcome.log.last();
    let summary = TrainSummary {
        num_params: chosen.num_params(),
        selected: args.select,
        selected_epoch: match args.select {
            Selection::Best => outcome.log.best_epoch,
            Selection::Final => last.epoch,
        },
        epochs_run: outcome.log.records.len(),
        final_dev_ce: last.dev_ce,
        final_dev_acc: last.dev_acc,
        log: &outcome.log,
    };
    write_json(&out.join(SUMMARY_FILE), &summary)?;
    println!(
        "trained {} epochs ({:?}); final dev CE {:.6}, dev accuracy {:.4}; best epoch {}",
        summary.epochs_run,
        outcome.log.stop_reason,
        last.dev_ce,
        last.dev_acc,
        outcome.log.best_epoch
    );
    Ok(outcome)
}

fn check_layout(net: &Network, ds: &Dataset) -> Result<()> {
    if net.input().len() != ds.dim() || net.num_classes() != ds.num_classes() {
        return Err(Error::Config(format!(
            "model expects D={} K={}, data has D={} K={}",
            net.input().len(),
            net.num_classes(),
            ds.dim(),
            ds.num_classes()
        )));
    }
    if let (InputLayout::Grid { time, freq }, Some(grid)) = (net.input(), ds.grid()) {
        if (time, freq) != grid {
            return Err(Error::Config(format!(
                "model expects a {time}×{freq} grid, data is {}×{}",
                grid.0, grid.1
            )));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub frames: usize,
    pub classes: usize,
    pub groups: usize,
    pub cross_entropy: f64,
    pub accuracy: f64,
    pub within_group_errors: u64,
    pub out_of_group_errors: u64,
    pub confusion: GroupedConfusion,
    /// `uniform` or the dataset the priors were estimated from.
    pub priors: Option<String>,
    pub scaled_accuracy: Option<f64>,
}

/// Prior source for scaled scoring: `uniform`, or a dataset whose labels are
/// counted.
pub fn load_priors(spec: &str, classes: usize, smoothing: f64) -> Result<Priors> {
    if spec == "uniform" {
        return Ok(Priors::uniform(classes));
    }
    let ds = load_dataset(spec)?;
    if ds.num_classes() != classes {
        return Err(Error::Config(format!(
            "prior dataset has {} classes, model has {classes}",
            ds.num_classes()
        )));
    }
    estimate_priors(ds.labels(), classes, smoothing)
}

pub fn eval_cmd(
    cfg: &ExperimentConfig,
    model: &Path,
    data: &Path,
    priors: Option<&str>,
) -> Result<EvalReport> {
    let (net, _) = load_network(model)?;
    let ds = load_dataset(data)?;
    check_layout(&net, &ds)?;
    let yhat = predict(&net, ds.frames())?;
    let confusion = grouped_confusion(&yhat, ds.labels(), ds.group_of(), ds.num_groups())?;
    let total = confusion.total();
    let scaled_accuracy = match priors {
        Some(spec) => {
            let p = load_priors(spec, net.num_classes(), cfg.training.prior_smoothing)?;
            Some(accuracy(&scaled_scores(&yhat, &p)?, ds.labels()))
        }
        None => None,
    };
    Ok(EvalReport {
        frames: ds.len(),
        classes: ds.num_classes(),
        groups: ds.num_groups(),
        cross_entropy: cross_entropy(&yhat, ds.labels())?,
        accuracy: accuracy(&yhat, ds.labels()),
        within_group_errors: total.within,
        out_of_group_errors: total.out,
        confusion,
        priors: priors.map(str::to_string),
        scaled_accuracy,
    })
}

/// Writes `scree.csv`, `code_length.csv`, `dispersion.csv`, `confusion.csv`
/// and `analysis.json` into `out`.
pub fn analyze_cmd(
    cfg: &ExperimentConfig,
    model: &Path,
    data: &Path,
    sample: Option<usize>,
    out: &Path,
) -> Result<()> {
    let (net, _) = load_network(model)?;
    let ds = load_dataset(data)?;
    check_layout(&net, &ds)?;
    let n = sample
        .or(cfg.analysis.sample_size)
        .unwrap_or_else(|| ds.len().min(DEFAULT_SAMPLE));
    let report = analyze(&net, ds.frames(), n, cfg.analysis.seed)?;
    let yhat = predict(&net, ds.frames())?;
    let confusion = grouped_confusion(&yhat, ds.labels(), ds.group_of(), ds.num_groups())?;

    create_dir(out)?;
    let mut scree = csv::Writer::from_path(out.join("scree.csv")).map_err(csv_err)?;
    scree
        .write_record(["layer", "rank", "probability"])
        .map_err(csv_err)?;
    let mut code = csv::Writer::from_path(out.join("code_length.csv")).map_err(csv_err)?;
    code.write_record(["layer", "mean_active", "width"])
        .map_err(csv_err)?;
    let mut disp = csv::Writer::from_path(out.join("dispersion.csv")).map_err(csv_err)?;
    disp.write_record(["layer", "mean_probability", "dispersion"])
        .map_err(csv_err)?;
    for layer in &report.layers {
        let l = layer.layer.to_string();
        for (rank, p) in layer.scree.iter().enumerate() {
            scree
                .write_record([l.clone(), rank.to_string(), p.to_string()])
                .map_err(csv_err)?;
        }
        code.write_record([
            l.clone(),
            layer.mean_code_length.to_string(),
            layer.width.to_string(),
        ])
        .map_err(csv_err)?;
        disp.write_record([
            l,
            layer.mean_probability.to_string(),
            layer.dispersion.to_string(),
        ])
        .map_err(csv_err)?;
    }
    let mut conf = csv::Writer::from_path(out.join("confusion.csv")).map_err(csv_err)?;
    conf.write_record(["group", "occurrences", "correct", "within", "out"])
        .map_err(csv_err)?;
    for (g, c) in confusion.groups.iter().enumerate() {
        conf.write_record(
            [
                g,
                c.occurrences as usize,
                c.correct as usize,
                c.within as usize,
                c.out as usize,
            ]
            .map(|v| v.to_string()),
        )
        .map_err(csv_err)?;
    }
    for w in [&mut scree, &mut code, &mut disp, &mut conf] {
        w.flush()?;
    }
    write_json(&out.join("analysis.json"), &report)?;
    println!(
        "analysed {} inputs over {} hidden layers; frame accuracy {:.4}",
        report.sample_size,
        report.layers.len(),
        confusion.accuracy()
    );
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub run: usize,
    pub optimizer: String,
    pub layers: usize,
    pub layer_size: Option<usize>,
    pub target_params: Option<u64>,
    pub params: Option<usize>,
    pub dev_ce: Option<f64>,
    pub dev_acc: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Copy)]
enum Size {
    Width(usize),
    Target(u64),
}

/// One dense training run per (depth, size, optimizer) combination; failures
/// are recorded in the summary and the sweep continues.
pub fn sweep_cmd(
    cfg: &ExperimentConfig,
    data: &Path,
    dev: &Path,
    out: &Path,
) -> Result<Vec<SweepRow>> {
    let sw = &cfg.sweep;
    if sw.depths.is_empty() || (sw.layer_sizes.is_empty() && sw.target_params.is_empty()) {
        return Err(Error::Config(
            "sweep needs sweep.depths and at least one of sweep.layer_sizes or sweep.target_params"
                .into(),
        ));
    }
    let tr = load_dataset(data)?;
    let dv = load_dataset(dev)?;
    let sizes: Vec<Size> = sw
        .layer_sizes
        .iter()
        .map(|&w| Size::Width(w))
        .chain(sw.target_params.iter().map(|&t| Size::Target(t)))
        .collect();
    let kinds = if sw.optimizers.is_empty() {
        vec![cfg.optimizer.kind]
    } else {
        sw.optimizers.clone()
    };
    create_dir(out)?;
    let mut rows = Vec::new();
    for &depth in &sw.depths {
        for &size in &sizes {
            for &kind in &kinds {
                let run = rows.len();
                let opt = OptimizerConfig {
                    kind,
                    ..cfg.optimizer
                };
                let mut row = SweepRow {
                    run,
                    optimizer: serde_json::to_value(kind)
                        .ok()
                        .and_then(|v| v.as_str().map(str::to_string))
                        .unwrap_or_default(),
                    layers: depth,
                    layer_size: None,
                    target_params: match size {
                        Size::Target(t) => Some(t),
                        Size::Width(_) => None,
                    },
                    params: None,
                    dev_ce: None,
                    dev_acc: None,
                    error: None,
                };
                let result = (|| -> Result<()> {
                    let width = match size {
                        Size::Width(w) => w,
                        Size::Target(t) => solve_width(t, depth, tr.dim(), tr.num_classes())?,
                    };
                    row.layer_size = Some(width);
                    let mut layers = vec![LayerSpec::Dense(width); depth];
                    layers.push(LayerSpec::SoftmaxOutput(tr.num_classes()));
                    let net = Network::new(
                        InputLayout::Flat(tr.dim()),
                        layers,
                        cfg.network.init,
                        cfg.network.seed,
                    )?;
                    row.params = Some(net.num_params());
                    let outcome = train(&net, &tr, &dv, &opt, &cfg.training)?;
                    let dir = out.join(format!("run_{run:03}"));
                    create_dir(&dir)?;
                    save_network(dir.join(MODEL_FILE), &outcome.network, FloatWidth::F32)?;
                    outcome
                        .log
                        .write_csv(BufWriter::new(File::create(dir.join(LOG_FILE))?), true)?;
                    let last = outcome.log.last();
                    row.dev_ce = Some(last.dev_ce);
                    row.dev_acc = Some(last.dev_acc);
                    Ok(())
                })();
                if let Err(e) = result {
                    row.error = Some(e.to_string());
                }
                println!(
                    "run {run}: depth {depth}, width {:?}, {:?} → {}",
                    row.layer_size,
                    kind,
                    match (&row.error, row.dev_acc) {
                        (Some(e), _) => format!("error: {e}"),
                        (None, Some(a)) => format!("dev accuracy {a:.4}"),
                        _ => String::new(),
                    }
                );
                rows.push(row);
            }
        }
    }
    let mut w = csv::Writer::from_writer(
        OpenOptions::new()
            .write(true)
            .create(true)
            .truncate(true)
            .open(out.join("summary.csv"))?,
    );
    for row in &rows {
        w.serialize(row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(rows)
}
