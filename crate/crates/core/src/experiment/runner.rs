//! Trial orchestration: build graph and data from a config, train or fit the
//! requested model, score it on the held-out split.

use std::path::Path;
use std::time::Instant;

use log::{info, warn};
use nalgebra::DMatrix;

use crate::dag::{transitive_closure, Dag};
use crate::error::{Error, Result};
use crate::experiment::config::{
    apply_override, AnchorSpec, ExperimentConfig, GraphGenerator, ModelKind,
};
use crate::experiment::ingest::{ingest_graph_csv, ingest_mask, ingest_signals_csv, write_signals_csv};
use crate::experiment::results::{
    write_atomic, Aggregate, ResultsBundle, SweepRow, TrialRecord,
};
use crate::filter::{build_filter, ls_fit, CausalFilter};
use crate::gso::{gso_set, AnchorSelection, CausalGsoSet};
use crate::nn::{Dcn, FbGcnn, Gcn, Mlp, Model, ParamSet, ParamSnapshot, Pdcn};
use crate::par;
use crate::synth::{
    assign_weights, derive_seed, er_dag, gen_diffusion_dataset, gen_imputation_split,
    gen_source_id_dataset, random_filter, rng_from_seed, sample_masked_nodes, sf_dag, Target,
    TaskDataset, TaskKind,
};
use crate::train::{evaluate, score, split_dataset, train_model, History, Metrics};

/// Seed streams derived from a trial seed.
mod stream {
    pub const GRAPH: u64 = 1;
    pub const WEIGHTS: u64 = 2;
    pub const FILTER: u64 = 3;
    pub const DATA: u64 = 4;
    pub const SPLIT: u64 = 5;
    pub const ANCHORS: u64 = 6;
    pub const INIT: u64 = 7;
    pub const MASK: u64 = 8;
    pub const TRAIN: u64 = 9;
}

/// Seed of trial `t` under the run seed `base`.
pub fn trial_seed(base: u64, t: usize) -> u64 {
    derive_seed(base, 0x7400_0000 + t as u64)
}

/// Graph, generating filter (synthetic tasks) and full dataset of one trial.
#[derive(Debug, Clone)]
pub struct TrialData {
    pub seed: u64,
    pub dag: Dag,
    pub filter: Option<CausalFilter>,
    pub dataset: TaskDataset,
}

fn build_graph(cfg: &ExperimentConfig, seed: u64) -> Result<Dag> {
    let g = &cfg.graph;
    let structure = match g.generator {
        GraphGenerator::Er => er_dag(g.n, g.p, derive_seed(seed, stream::GRAPH))?,
        GraphGenerator::Sf => sf_dag(g.n, g.m, g.m0, derive_seed(seed, stream::GRAPH))?,
        GraphGenerator::File => {
            let path = g.path.as_deref().ok_or_else(|| Error::Parse("graph.path missing".into()))?;
            return ingest_graph_csv(path);
        }
    };
    assign_weights(&structure, g.edge_weights(), derive_seed(seed, stream::WEIGHTS))
}

fn check_size(what: &str, value: usize, n: usize) -> Result<()> {
    if value > n {
        return Err(Error::InvalidParams(format!("{what} = {value} exceeds {n} nodes")));
    }
    Ok(())
}

/// Generates (or ingests) everything a trial needs before model fitting.
pub fn prepare_trial(cfg: &ExperimentConfig, seed: u64) -> Result<TrialData> {
    let d = build_graph(cfg, seed)?;
    let n = d.n();
    let data = &cfg.data;
    let synthetic_filter = || -> Result<CausalFilter> {
        check_size("data.filter_anchors", data.filter_anchors, n)?;
        random_filter(&d, data.filter_anchors, derive_seed(seed, stream::FILTER))
    };
    let data_seed = derive_seed(seed, stream::DATA);
    let (filter, dataset) = match cfg.task {
        TaskKind::Diffusion => {
            check_size("data.sparse_support", data.sparse_support, n)?;
            let f = synthetic_filter()?;
            let ds = gen_diffusion_dataset(&d, &f, data.samples, data.sparse_support, data.noise, data_seed)?;
            (Some(f), ds)
        }
        TaskKind::SourceId => {
            check_size("data.candidates", data.candidates, n)?;
            let f = synthetic_filter()?;
            let ds = gen_source_id_dataset(&d, &f, data.samples, data.candidates, data_seed)?;
            (Some(f), ds)
        }
        TaskKind::Imputation => {
            let (filter, signals) = match &data.signals_file {
                Some(path) => (None, ingest_signals_csv(path, &d)?),
                None => {
                    let support = data.sparse_support.min(n);
                    let f = synthetic_filter()?;
                    let ds = gen_diffusion_dataset(&d, &f, data.samples, support, data.noise, data_seed)?;
                    let signals = ds
                        .samples
                        .into_iter()
                        .map(|s| match s.target {
                            Target::Signal { observed, .. } => observed,
                            Target::Label(_) => unreachable!("diffusion targets are signals"),
                        })
                        .collect();
                    (Some(f), signals)
                }
            };
            let masked = match &data.mask_file {
                Some(path) => ingest_mask(path, n)?,
                None => {
                    let from = data.sparse_support.min(n.saturating_sub(data.masked));
                    sample_masked_nodes(&d, data.masked, from, derive_seed(seed, stream::MASK))?
                }
            };
            (filter, gen_imputation_split(&d, &signals, &masked)?)
        }
    };
    Ok(TrialData {
        seed,
        dag: d,
        filter,
        dataset,
    })
}

/// Anchor set for GSO-based models.
fn model_gsos(cfg: &ExperimentConfig, data: &TrialData) -> Result<CausalGsoSet> {
    let d = &data.dag;
    let n = d.n();
    let selection = match (cfg.data.tie_anchors, &data.filter, cfg.model.anchors) {
        (true, Some(f), _) => AnchorSelection::Nodes(f.gsos().anchors()),
        (true, None, _) => {
            warn!("data.tie_anchors ignored: no generating filter for ingested signals");
            AnchorSelection::All
        }
        (false, _, AnchorSpec::All) => AnchorSelection::All,
        (false, _, AnchorSpec::Count(c)) => {
            check_size("model.anchors", c, n)?;
            AnchorSelection::sample(n, c, &mut rng_from_seed(derive_seed(data.seed, stream::ANCHORS)))?
        }
    };
    let closure = transitive_closure(d);
    gso_set(d, &closure, &selection, cfg.model.kind == ModelKind::DcnT)
}

/// Layer widths `[F_in, hidden × (layers − 1), 1]`.
fn widths(cfg: &ExperimentConfig, f_in: usize) -> Vec<usize> {
    let mut w = vec![f_in];
    w.extend(std::iter::repeat_n(cfg.model.hidden_width(), cfg.model.layers.saturating_sub(1)));
    w.push(1);
    w
}

/// Builds the network named by the config. `ls` has no network form.
pub fn build_model(cfg: &ExperimentConfig, data: &TrialData) -> Result<Model> {
    let w = widths(cfg, data.dataset.features());
    let d = &data.dag;
    Ok(match cfg.model.kind {
        ModelKind::Dcn | ModelKind::DcnT => Model::Dcn(Dcn::new(&model_gsos(cfg, data)?, w)?),
        ModelKind::Pdcn => Model::Pdcn(Pdcn::new(&model_gsos(cfg, data)?, w)?),
        ModelKind::FbGcnn => Model::FbGcnn(FbGcnn::from_dag(d, cfg.model.filter_order, w)?),
        ModelKind::Gcn => Model::Gcn(Gcn::new(d, w)?),
        ModelKind::Mlp => Model::Mlp(Mlp::new(w)?),
        ModelKind::Ls => {
            return Err(Error::IncompatibleTaskModel {
                task: format!("{:?}", cfg.task).to_lowercase(),
                model: "ls".into(),
            })
        }
    })
}

/// Total number of learnable scalars.
pub fn parameter_count(params: &ParamSet) -> usize {
    params.scalar_count()
}

/// Regression pairs for the least-squares baseline. For source
/// identification the target is the one-hot source indicator.
fn ls_pairs(ds: &TaskDataset) -> Vec<(Vec<f64>, Vec<f64>)> {
    let n = ds.n();
    ds.samples
        .iter()
        .map(|s| {
            let x: Vec<f64> = s.input.column(0).iter().copied().collect();
            let y = match &s.target {
                Target::Signal { observed, .. } => observed.clone(),
                Target::Label(l) => {
                    let mut e = vec![0.0; n];
                    e[ds.candidates[*l]] = 1.0;
                    e
                }
            };
            (x, y)
        })
        .collect()
}

fn fit_ls(
    cfg: &ExperimentConfig,
    data: &TrialData,
    train: &TaskDataset,
    test: &TaskDataset,
) -> Result<(Metrics, usize, ParamSnapshot)> {
    if train.features() != 1 {
        return Err(Error::IncompatibleTaskModel {
            task: format!("{:?}", cfg.task).to_lowercase(),
            model: "ls".into(),
        });
    }
    let start = Instant::now();
    let gsos = model_gsos(cfg, data)?;
    let theta = ls_fit(&gsos, &ls_pairs(train))?;
    let filter = build_filter(gsos, theta)?;
    let train_time_s = start.elapsed().as_secs_f64();
    let start = Instant::now();
    let preds = par::map(&test.samples, |s| -> Result<DMatrix<f64>> {
        let y = filter.convolve(s.input.column(0).as_slice())?;
        Ok(DMatrix::from_vec(y.len(), 1, y))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let mut metrics = score(&preds, test)?;
    metrics.train_time_s = train_time_s;
    metrics.inference_time_s = start.elapsed().as_secs_f64();
    let mut params = ParamSet::new();
    params.push(
        "theta",
        crate::nn::Tensor2::new(DMatrix::from_row_slice(1, filter.theta().len(), filter.theta())),
    );
    Ok((metrics, filter.theta().len(), params.snapshot()))
}

/// Everything recorded for one trial.
#[derive(Debug, Clone)]
pub struct TrialOutcome {
    pub record: TrialRecord,
    pub history: History,
    pub params: Option<ParamSnapshot>,
}

/// Runs trial `t` of `cfg` end to end.
pub fn run_trial(cfg: &ExperimentConfig, t: usize) -> Result<TrialOutcome> {
    let seed = trial_seed(cfg.seed, t);
    let data = prepare_trial(cfg, seed)?;
    if data.dataset.degenerate {
        warn!("trial {t}: degenerate task");
    }
    let (train, val, test) = split_dataset(&data.dataset, derive_seed(seed, stream::SPLIT))?;
    let (metrics, param_count, history, params) = if cfg.model.kind == ModelKind::Ls {
        let (m, c, p) = fit_ls(cfg, &data, &train, &test)?;
        (m, c, History::default(), p)
    } else {
        let model = build_model(cfg, &data)?;
        let init = model.init_params(&mut rng_from_seed(derive_seed(seed, stream::INIT)));
        let mut tcfg = cfg.train.clone();
        tcfg.seed = derive_seed(tcfg.seed ^ seed, stream::TRAIN);
        let start = Instant::now();
        let (params, history) = train_model(&model, init, &train, &val, &tcfg)?;
        let train_time_s = start.elapsed().as_secs_f64();
        let mut m = evaluate(&model, &params, &test)?;
        m.train_time_s = train_time_s;
        (m, parameter_count(&params), history, params.snapshot())
    };
    info!(
        "trial {t} ({}): nmse {:?} accuracy {:?} in {:.2}s",
        cfg.model.kind.as_str(),
        metrics.nmse,
        metrics.accuracy,
        metrics.wall_time_s()
    );
    Ok(TrialOutcome {
        record: TrialRecord {
            trial: t,
            seed,
            model: cfg.model.kind.as_str().to_string(),
            nmse: metrics.nmse,
            accuracy: metrics.accuracy,
            train_time_s: metrics.train_time_s,
            inference_time_s: metrics.inference_time_s,
            wall_time_s: metrics.wall_time_s(),
            param_count,
            best_epoch: history.best_epoch,
        },
        history,
        params: Some(params),
    })
}

/// Runs every trial (in parallel when enabled) and collects the bundle. A
/// failing trial aborts the run with its index attached.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ResultsBundle> {
    cfg.validate()?;
    let start = Instant::now();
    let outcomes = par::map_range(cfg.trials, |t| {
        run_trial(cfg, t).map_err(|e| match e {
            Error::Numerical(m) => Error::Numerical(format!("trial {t}: {m}")),
            Error::InvalidParams(m) => Error::InvalidParams(format!("trial {t}: {m}")),
            other => other,
        })
    });
    let mut bundle = ResultsBundle {
        config: cfg.clone(),
        trials: Vec::with_capacity(cfg.trials),
        histories: Vec::with_capacity(cfg.trials),
        params: Vec::with_capacity(cfg.trials),
        wall_time_s: 0.0,
    };
    for o in outcomes {
        let o = o?;
        bundle.trials.push(o.record);
        bundle.histories.push(o.history);
        bundle.params.push(o.params);
    }
    bundle.wall_time_s = start.elapsed().as_secs_f64();
    Ok(bundle)
}

/// Re-runs `base` for every value of the dotted config key `param` and each
/// model kind in `models` (the configured model when empty), reporting the
/// quartile band of the task metric at each point.
pub fn run_sweep(
    base: &ExperimentConfig,
    param: &str,
    values: &[String],
    models: &[ModelKind],
) -> Result<Vec<SweepRow>> {
    let kinds = if models.is_empty() {
        vec![base.model.kind]
    } else {
        models.to_vec()
    };
    let table = match toml::Value::try_from(base).map_err(|e| Error::Parse(e.to_string()))? {
        toml::Value::Table(t) => t,
        _ => unreachable!("config serializes to a table"),
    };
    let mut rows = Vec::new();
    for kind in kinds {
        for v in values {
            let mut t = table.clone();
            apply_override(&mut t, "model.kind", &format!("\"{}\"", kind.as_str()))?;
            apply_override(&mut t, param, v)?;
            let cfg = ExperimentConfig::from_table(t)?;
            let bundle = run_experiment(&cfg)?;
            let (metric, agg) = ["nmse", "accuracy"]
                .into_iter()
                .find_map(|m| bundle.aggregate(m).map(|a| (m, a)))
                .ok_or_else(|| Error::Numerical("sweep point produced no metric".into()))?;
            rows.push(sweep_row(kind, param, v, metric, agg));
        }
    }
    Ok(rows)
}

fn sweep_row(kind: ModelKind, param: &str, x: &str, metric: &str, a: Aggregate) -> SweepRow {
    SweepRow {
        model: kind.as_str().to_string(),
        param: param.to_string(),
        x: x.to_string(),
        metric: metric.to_string(),
        median: a.median,
        q25: a.q25,
        q75: a.q75,
        mean: a.mean,
        std: a.std,
    }
}

/// Writes each trial's graph and dataset under `out/trial_<t>/`:
/// `graph.csv`, `inputs.csv` (first input channel), `targets.csv`
/// (observed), `clean.csv`, `labels.csv` and `mask.txt` as applicable.
pub fn gen_data(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    for t in 0..cfg.trials {
        let data = prepare_trial(cfg, trial_seed(cfg.seed, t))?;
        let dir = out.join(format!("trial_{t}"));
        std::fs::create_dir_all(&dir)?;
        let n = data.dag.n();
        write_atomic(&dir.join("graph.csv"), data.dag.to_edge_list().as_bytes())?;
        let ds = &data.dataset;
        let inputs: Vec<Vec<f64>> = ds
            .samples
            .iter()
            .map(|s| s.input.column(0).iter().copied().collect())
            .collect();
        write_signals_csv(&dir.join("inputs.csv"), &inputs, n)?;
        let mut observed = Vec::new();
        let mut clean = Vec::new();
        let mut labels = String::from("label,node\n");
        for s in &ds.samples {
            match &s.target {
                Target::Signal { observed: o, clean: c } => {
                    observed.push(o.clone());
                    clean.push(c.clone());
                }
                Target::Label(l) => labels.push_str(&format!("{l},{}\n", ds.candidates[*l])),
            }
        }
        if ds.task == TaskKind::SourceId {
            write_atomic(&dir.join("labels.csv"), labels.as_bytes())?;
        } else {
            write_signals_csv(&dir.join("targets.csv"), &observed, n)?;
            write_signals_csv(&dir.join("clean.csv"), &clean, n)?;
        }
        if let Some(mask) = &ds.target_mask {
            let text: String = mask
                .iter()
                .enumerate()
                .filter(|(_, &m)| m)
                .map(|(i, _)| format!("{i}\n"))
                .collect();
            write_atomic(&dir.join("mask.txt"), text.as_bytes())?;
        }
    }
    Ok(())
}
