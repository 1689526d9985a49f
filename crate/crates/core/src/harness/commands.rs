//! The CLI verbs as library calls.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rayon::prelude::*;

use super::checkpoint::Checkpoint;
use super::config::{DataSource, RunConfig, KEYS};
use super::report::{write_text, AdamSettings, ConfigRecord, FinalRecord, GraphQuality, RunReport, TimingRecord};
use crate::datahub::{
    corrupt, load_features, load_interactions, read_prepared, synth_planted, write_prepared, CorruptionSpec,
    LoadOptions, LoadReport, Modality, PreparedData, SynthSpec,
};
use crate::error::{Error, Result};
use crate::eval::{evaluate, graph_edge_precision, MetricReport};
use crate::graphs::to_edge_list;
use crate::numerics::AdamConfig;
use crate::recmodel::{test_metrics, train, ModelState, StaticGraphs, Timings};
use crate::rng;

pub const REPORT_FILE: &str = "report.jsonl";
pub const TIMINGS_FILE: &str = "timings.jsonl";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const CONFIG_FILE: &str = "resolved.cfg";

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

pub fn prepare_synth(spec: &SynthSpec, out: &Path) -> Result<PreparedData> {
    let data = synth_data(spec)?;
    write_prepared(out, &data)?;
    Ok(data)
}

/// Loads raw interactions and features. Each feature file `x.f32` is read
/// with its manifest `x.manifest`.
pub fn prepare_raw(
    interactions: &Path,
    visual: &Path,
    textual: &Path,
    opts: &LoadOptions,
    out: &Path,
) -> Result<(PreparedData, LoadReport)> {
    let (dataset, report) = load_interactions(interactions, opts)?;
    let visual = load_features(visual, &visual.with_extension("manifest"), dataset.item_ids())?;
    let textual = load_features(textual, &textual.with_extension("manifest"), dataset.item_ids())?;
    if visual.modality != Modality::Visual || textual.modality != Modality::Textual {
        return Err(Error::Data("feature manifests name the wrong modalities".into()));
    }
    let data = PreparedData {
        dataset,
        visual,
        textual,
        labels: None,
    };
    write_prepared(out, &data)?;
    Ok((data, report))
}

fn synth_data(spec: &SynthSpec) -> Result<PreparedData> {
    let s = synth_planted(spec)?;
    Ok(PreparedData {
        dataset: s.dataset,
        visual: s.visual,
        textual: s.textual,
        labels: Some(s.labels),
    })
}

pub fn load_data(source: &DataSource) -> Result<PreparedData> {
    match source {
        DataSource::Prepared(dir) => read_prepared(dir),
        DataSource::Synth(spec) => synth_data(spec),
    }
}

/// A finished training run.
#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub report: RunReport,
    pub checkpoint: Checkpoint,
    pub timings: Timings,
}

fn graph_quality(graphs: &StaticGraphs, state: &ModelState, labels: &[usize]) -> Result<Option<GraphQuality>> {
    let (Some(s), Some(b)) = (&graphs.semantic, &graphs.behavioral) else {
        return Ok(None);
    };
    Ok(Some(GraphQuality {
        semantic: graph_edge_precision(&s.fused, labels)?,
        behavioral: graph_edge_precision(b, labels)?,
        diffusion: state
            .diffusion_graph
            .as_ref()
            .map(|g| graph_edge_precision(g, labels))
            .transpose()?,
    }))
}

/// Trains on already-loaded data. `cfg` must be resolved.
pub fn run_on(cfg: &RunConfig, data: &PreparedData) -> Result<RunOutcome> {
    cfg.validate()?;
    let ds = &data.dataset;
    let graphs = StaticGraphs::build(ds, &[&data.visual, &data.textual], &cfg.train)?;
    let out = train(ds, &graphs, &cfg.train)?;
    let test = test_metrics(ds, &graphs, &out.best, &cfg.train.model, &cfg.ks)?;
    let quality = match &data.labels {
        Some(l) => graph_quality(&graphs, &out.best, l)?,
        None => None,
    };
    let config_text = cfg.render();
    let config_hash = cfg.hash();
    let dataset_hash = ds.canonical_hash();
    let report = RunReport {
        result: FinalRecord {
            best_epoch: out.best_epoch,
            epochs_run: out.epochs.len(),
            stopped_early: out.stopped_early,
            test,
            graph_quality: quality,
        },
        config: ConfigRecord {
            config: cfg.pairs().into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
            config_hash: config_hash.clone(),
            dataset_hash: dataset_hash.clone(),
            adam: AdamSettings::from(&AdamConfig::default()),
            l2_scope: "embedding rows touched by the batch".into(),
        },
        epochs: out.epochs,
    };
    Ok(RunOutcome {
        report,
        checkpoint: Checkpoint {
            config_hash,
            dataset_hash,
            config: config_text,
            state: out.best,
        },
        timings: out.timings,
    })
}

/// Writes report, timings sidecar, checkpoint and resolved config to `out`.
pub fn write_run(outcome: &RunOutcome, out: &Path) -> Result<()> {
    ensure_dir(out)?;
    write_text(&out.join(REPORT_FILE), &outcome.report.to_jsonl())?;
    let timings = serde_json::to_string(&TimingRecord::capture(&outcome.timings)).expect("timings serialize");
    write_text(&out.join(TIMINGS_FILE), &(timings + "\n"))?;
    outcome.checkpoint.save(&out.join(CHECKPOINT_FILE))?;
    write_text(&out.join(CONFIG_FILE), &outcome.checkpoint.config)
}

pub fn cmd_train(cfg: &RunConfig, out: &Path) -> Result<RunOutcome> {
    let data = load_data(&cfg.data)?;
    let outcome = run_on(cfg, &data)?;
    write_run(&outcome, out)?;
    info!(
        "best epoch {}: test {}",
        outcome.report.result.best_epoch,
        format_metrics(&outcome.report.result.test)
    );
    Ok(outcome)
}

pub fn format_metrics(m: &MetricReport) -> String {
    let mut s = String::new();
    for (k, r) in &m.recall {
        let _ = write!(s, "R@{k} {r:.5} N@{k} {:.5} ", m.ndcg_at(*k));
    }
    s.trim_end().to_string()
}

/// Checkpoint plus the data it was trained on, after hash checks.
fn open_checkpoint(checkpoint: &Path, data: Option<&Path>) -> Result<(Checkpoint, RunConfig, PreparedData)> {
    let ck = Checkpoint::load(checkpoint)?;
    let mut cfg = RunConfig::default();
    cfg.apply_text(&ck.config, checkpoint)?;
    if let Some(dir) = data {
        cfg.data = DataSource::Prepared(dir.to_path_buf());
    }
    let cfg = cfg.resolve()?;
    let prepared = load_data(&cfg.data)?;
    let hash = prepared.dataset.canonical_hash();
    if hash != ck.dataset_hash {
        return Err(Error::ArtifactMismatch(format!(
            "checkpoint {} was trained on dataset {}, got {}",
            checkpoint.display(),
            ck.dataset_hash,
            hash
        )));
    }
    Ok((ck, cfg, prepared))
}

/// Test metrics of a checkpoint. `data` overrides the recorded data source.
pub fn cmd_eval(checkpoint: &Path, data: Option<&Path>, ks: &[usize]) -> Result<MetricReport> {
    let (ck, cfg, prepared) = open_checkpoint(checkpoint, data)?;
    let graphs = StaticGraphs::build(&prepared.dataset, &[&prepared.visual, &prepared.textual], &cfg.train)?;
    let scores = ck.state.scores(&graphs, &cfg.train.model)?;
    evaluate(&scores, &prepared.dataset, prepared.dataset.test(), ks)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GraphKind {
    Semantic,
    Behavioral,
    Diffusion,
}

impl std::str::FromStr for GraphKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "semantic" => Ok(GraphKind::Semantic),
            "behavioral" => Ok(GraphKind::Behavioral),
            "diffusion" => Ok(GraphKind::Diffusion),
            _ => Err(Error::Config(format!(
                "unknown graph {s:?}; expected semantic, behavioral or diffusion"
            ))),
        }
    }
}

/// Edge list of one item graph of a trained run.
pub fn cmd_export_graph(checkpoint: &Path, data: Option<&Path>, kind: GraphKind) -> Result<String> {
    let (ck, cfg, prepared) = open_checkpoint(checkpoint, data)?;
    let missing = || Error::Config("the run has no item graphs".into());
    let m = match kind {
        GraphKind::Diffusion => ck.state.diffusion_graph.ok_or_else(missing)?,
        GraphKind::Semantic | GraphKind::Behavioral => {
            let g = StaticGraphs::build(&prepared.dataset, &[&prepared.visual, &prepared.textual], &cfg.train)?;
            if kind == GraphKind::Semantic {
                g.semantic.ok_or_else(missing)?.fused
            } else {
                g.behavioral.ok_or_else(missing)?
            }
        }
    };
    Ok(to_edge_list(&m))
}

#[derive(Clone, Debug, PartialEq)]
pub enum Condition {
    Clean,
    Noise(f64),
    Mask(f64),
}

impl Condition {
    pub fn label(&self) -> String {
        match self {
            Condition::Clean => "clean".into(),
            Condition::Noise(v) => format!("noise-{v:?}"),
            Condition::Mask(r) => format!("mask-{r:?}"),
        }
    }
}

#[derive(Clone, Debug)]
pub struct RobustnessRow {
    pub condition: Condition,
    pub recall20: f64,
    pub ndcg20: f64,
    /// Mean relative drop of R@20 and N@20 against the clean run.
    pub delta: f64,
}

/// `(clean - corrupted) / clean`, averaged over R@20 and N@20.
pub fn avg_delta(clean: (f64, f64), corrupted: (f64, f64)) -> f64 {
    ((clean.0 - corrupted.0) / clean.0 + (clean.1 - corrupted.1) / clean.1) / 2.0
}

pub fn default_conditions() -> Vec<Condition> {
    vec![
        Condition::Clean,
        Condition::Noise(1e-4),
        Condition::Mask(0.5),
        Condition::Mask(0.6),
        Condition::Mask(0.7),
        Condition::Mask(0.8),
    ]
}

/// Runs every condition with the same seed; corruptions touch both
/// modalities. Writes one run directory per condition plus `robustness.tsv`.
pub fn cmd_robustness(cfg: &RunConfig, conditions: &[Condition], out: &Path) -> Result<Vec<RobustnessRow>> {
    let mut cfg = cfg.clone();
    if !cfg.ks.contains(&20) {
        cfg.ks.push(20);
    }
    let data = load_data(&cfg.data)?;
    let corrupt_seed = rng::derive_seed(cfg.train.seed, "corrupt");
    let mut results = Vec::new();
    for cond in conditions {
        let spec = match *cond {
            Condition::Clean => None,
            Condition::Noise(variance) => Some(CorruptionSpec::GaussianNoise {
                variance,
                seed: corrupt_seed,
            }),
            Condition::Mask(missing_rate) => {
                if missing_rate >= 1.0 {
                    warn!("mask rate {missing_rate} removes every feature row");
                }
                Some(CorruptionSpec::ModalityMask {
                    missing_rate,
                    seed: corrupt_seed,
                })
            }
        };
        let mut d = data.clone();
        if let Some(spec) = &spec {
            d.visual = corrupt(&d.visual, spec)?;
            d.textual = corrupt(&d.textual, spec)?;
        }
        let outcome = run_on(&cfg, &d)?;
        write_run(&outcome, &out.join(cond.label()))?;
        let t = &outcome.report.result.test;
        results.push((cond.clone(), t.recall_at(20), t.ndcg_at(20)));
    }
    let clean = results
        .iter()
        .find(|(c, ..)| *c == Condition::Clean)
        .map(|&(_, r, n)| (r, n));
    let rows: Vec<RobustnessRow> = results
        .into_iter()
        .map(|(condition, recall20, ndcg20)| RobustnessRow {
            delta: match (&condition, clean) {
                (Condition::Clean, _) => 0.0,
                (_, Some(c)) => avg_delta(c, (recall20, ndcg20)),
                (_, None) => f64::NAN,
            },
            condition,
            recall20,
            ndcg20,
        })
        .collect();
    let mut tsv = String::from("condition\tR@20\tN@20\tavg_delta\n");
    for r in &rows {
        let _ = writeln!(
            tsv,
            "{}\t{:?}\t{:?}\t{:?}",
            r.condition.label(),
            r.recall20,
            r.ndcg20,
            r.delta
        );
    }
    ensure_dir(out)?;
    write_text(&out.join("robustness.tsv"), &tsv)?;
    Ok(rows)
}

/// One sweep axis: a config key and the values it takes.
#[derive(Clone, Debug, PartialEq)]
pub struct Axis {
    pub key: String,
    pub values: Vec<String>,
}

impl std::str::FromStr for Axis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (key, values) = s
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("axis {s:?} is not key=v1,v2,...")))?;
        let key = key.trim().to_string();
        if !KEYS.contains(&key.as_str()) {
            return Err(Error::Config(format!("invalid axis name {key:?}")));
        }
        let values: Vec<String> = values
            .split(',')
            .map(|v| v.trim().to_string())
            .filter(|v| !v.is_empty())
            .collect();
        if values.is_empty() {
            return Err(Error::Config(format!("axis {key} has no values")));
        }
        Ok(Axis { key, values })
    }
}

/// Cartesian product of the axes, first axis slowest.
pub fn grid(axes: &[Axis]) -> Vec<Vec<(String, String)>> {
    let mut points = vec![Vec::new()];
    for axis in axes {
        points = points
            .into_iter()
            .flat_map(|p| {
                axis.values.iter().map(move |v| {
                    let mut q = p.clone();
                    q.push((axis.key.clone(), v.clone()));
                    q
                })
            })
            .collect();
    }
    points
}

#[derive(Clone, Debug)]
pub struct SweepPoint {
    pub settings: Vec<(String, String)>,
    pub dir: PathBuf,
    pub report: RunReport,
}

/// Summary table: one row per point with its axis values and test metrics.
pub fn sweep_summary(axes: &[Axis], ks: &[usize], points: &[(Vec<(String, String)>, RunReport)]) -> String {
    let mut s = String::from("point");
    for a in axes {
        let _ = write!(s, "\t{}", a.key);
    }
    for k in ks {
        let _ = write!(s, "\tR@{k}\tN@{k}");
    }
    s.push_str("\tbest_epoch\n");
    for (n, (settings, report)) in points.iter().enumerate() {
        let _ = write!(s, "{n}");
        for (_, v) in settings {
            let _ = write!(s, "\t{v}");
        }
        let t = &report.result.test;
        for &k in ks {
            let _ = write!(s, "\t{:?}\t{:?}", t.recall_at(k), t.ndcg_at(k));
        }
        let _ = writeln!(s, "\t{}", report.result.best_epoch);
    }
    s
}

/// Runs every grid point (at most `jobs` at a time) into `out/point-NNN`
/// and writes `summary.tsv`. Parallelism never changes report content.
pub fn cmd_sweep(base: &RunConfig, axes: &[Axis], jobs: usize, out: &Path) -> Result<Vec<SweepPoint>> {
    let points = grid(axes);
    let configs: Vec<RunConfig> = points
        .iter()
        .map(|settings| {
            let mut c = base.clone();
            for (k, v) in settings {
                c.set(k, v)?;
            }
            c.resolve()
        })
        .collect::<Result<_>>()?;
    let data = load_data(&base.data)?;
    let data = &data;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot start {jobs} sweep workers: {e}")))?;
    let reports: Vec<Result<RunReport>> = pool.install(|| {
        configs
            .par_iter()
            .enumerate()
            .map(|(n, cfg)| {
                let d = if cfg.data == base.data {
                    data.clone()
                } else {
                    load_data(&cfg.data)?
                };
                let outcome = run_on(cfg, &d)?;
                write_run(&outcome, &out.join(format!("point-{n:03}")))?;
                Ok(outcome.report)
            })
            .collect()
    });
    let mut result = Vec::new();
    for (n, (settings, report)) in points.into_iter().zip(reports).enumerate() {
        result.push(SweepPoint {
            settings,
            dir: out.join(format!("point-{n:03}")),
            report: report?,
        });
    }
    let rows: Vec<_> = result.iter().map(|p| (p.settings.clone(), p.report.clone())).collect();
    ensure_dir(out)?;
    write_text(&out.join("summary.tsv"), &sweep_summary(axes, &base.ks, &rows))?;
    Ok(result)
}

/// Rebuilds a run config from a report's embedded config.
pub fn config_from_report(report: &RunReport) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    let ordered: BTreeMap<&str, &String> = report.config.config.iter().map(|(k, v)| (k.as_str(), v)).collect();
    // `data` first: it resets the synthetic spec.
    if let Some(d) = ordered.get("data") {
        cfg.set("data", d)?;
    }
    for (k, v) in ordered {
        if k == "data" || (k.starts_with("synth.") && v == "-") {
            continue;
        }
        cfg.set(k, v)?;
    }
    cfg.resolve()
}
