use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use serde::Serialize;
use serde_json::json;
use srnn_core::baselines::{cluster_rnn_select, cluster_rnn_train, local_kmeans_select, sample_uniform, ClusterRnn};
use srnn_core::data::{gen_synthetic, load_dataset, split_train_val, write_dataset, PlantedTruth};
use srnn_core::eval::{
    build_prediction_set, eval_prediction, format_reports, format_sweep, n_sweep, summarize_recovery, transition_graph,
    ClusterRnnPredictor, EvalReport, FiPredictor, Horizon, NnPredictor, Predictor, RandomPredictor, SrnnPredictor,
};
use srnn_core::rnn::init_params;
use srnn_core::srnn::{sample_dataset_storylines, sample_storylines, train};
use srnn_core::{Dataset, RngStream, SrnnModel, StorySample};

use crate::config::RunConfig;
use crate::error::CliError;

const SPLIT: u64 = 1;
const INIT: u64 = 2;
const TRAIN: u64 = 3;
const STORIES: u64 = 4;
const PREDICT_LONG: u64 = 5;
const PREDICT_SHORT: u64 = 6;
const EVAL: u64 = 7;
const SWEEP: u64 = 8;
const BASELINES: u64 = 9;

const CLUSTER_KMEANS_ITERS: usize = 100;

type Selection = Vec<(String, Vec<usize>)>;

fn root(cfg: &RunConfig) -> RngStream {
    RngStream::new(cfg.seed, 0)
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, text)?;
    Ok(())
}

fn table_path(out: &Path) -> PathBuf {
    out.with_extension("txt")
}

pub fn history_path(model: &Path) -> PathBuf {
    model.with_extension("history.json")
}

fn load_data(cfg: &RunConfig) -> Result<Dataset, CliError> {
    Ok(load_dataset(RunConfig::require(&cfg.data, "data")?)?)
}

fn load_truth(path: &Path) -> Result<PlantedTruth, CliError> {
    Ok(PlantedTruth::from_json(&fs::read_to_string(path)?)?)
}

fn load_model(cfg: &RunConfig, ds: &Dataset) -> Result<SrnnModel, CliError> {
    let path = RunConfig::require(&cfg.model, "model")?;
    let (model, _) = SrnnModel::from_bytes(&fs::read(path)?)?;
    if model.params.dim() != ds.dim {
        return Err(CliError::Runtime(format!(
            "model expects {}-dimensional features, dataset has {}",
            model.params.dim(),
            ds.dim
        )));
    }
    Ok(model)
}

pub fn gen(cfg: &RunConfig) -> Result<String, CliError> {
    let spec = cfg.synthetic_spec();
    spec.validate().map_err(|e| CliError::Validation(e.to_string()))?;
    let out = RunConfig::require(&cfg.out, "out")?;
    let (mut ds, truth) = gen_synthetic(&spec)?;
    ds.concept = cfg.concept.clone();
    write_dataset(&ds, out, "manifest.json")?;
    write_text(&out.join("truth.json"), &truth.to_json())?;
    write_json(&out.join("config.json"), &cfg.echo())?;
    Ok(format!(
        "wrote {} albums, {} images, D={} to {}",
        ds.albums.len(),
        ds.total_items(),
        ds.dim,
        out.display()
    ))
}

pub fn train_cmd(cfg: &RunConfig) -> Result<String, CliError> {
    let model_path = RunConfig::require(&cfg.model, "model")?;
    let ds = load_data(cfg)?;
    let rng = root(cfg);
    let (tr, val) = split_train_val(&ds, cfg.train_ratio, &mut rng.substream(SPLIT))?;
    let tc = cfg.train_config();
    let params = init_params(ds.dim, tc.hidden, &mut rng.substream(INIT));
    let mut model = SrnnModel::new(params, cfg.n, cfg.mode, ds.concept.clone())?.with_prior(cfg.prior);
    info!(
        "training {} model on {} albums ({} validation), N={}",
        cfg.mode,
        tr.albums.len(),
        val.albums.len(),
        cfg.n
    );
    let history = train(&mut model, &tr, &val, &tc, &rng.substream(TRAIN))?;
    write_text_bytes(model_path, &model.to_bytes(&tc, &history)?)?;
    let hist_path = history_path(model_path);
    write_json(
        &hist_path,
        &json!({
            "config": cfg.echo(),
            "train_albums": tr.albums.iter().map(|a| &a.id).collect::<Vec<_>>(),
            "validation_albums": val.albums.iter().map(|a| &a.id).collect::<Vec<_>>(),
            "history": history,
        }),
    )?;
    let last = history.epochs.last();
    Ok(format!(
        "trained {} epochs; final validation score {}; model {}, history {}",
        history.epochs.len(),
        last.map_or("-".to_string(), |e| format!("{:.4}", e.val_score)),
        model_path.display(),
        hist_path.display()
    ))
}

fn write_text_bytes(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, bytes)?;
    Ok(())
}

fn stories_json(cfg: &RunConfig, stories: &[StorySample]) -> serde_json::Value {
    json!({ "config": cfg.echo(), "stories": stories })
}

fn sample_all(cfg: &RunConfig, model: &SrnnModel, ds: &Dataset) -> Result<Vec<StorySample>, CliError> {
    let short = ds.albums.iter().filter(|a| a.len() < model.n).count();
    if short > 0 {
        warn!("{short} albums have fewer than N={} images and get no story", model.n);
    }
    Ok(sample_dataset_storylines(model, ds, cfg.samples, &root(cfg).substream(STORIES))?)
}

fn describe(story: &StorySample, ds: &Dataset) -> String {
    let album = ds.album(&story.album).expect("story album comes from the dataset");
    let ids: Vec<&str> = story
        .z
        .as_slice()
        .iter()
        .map(|&i| album.items[i].image_id.as_str())
        .collect();
    format!(
        "{} loglik {:.4}: {:?} [{}]",
        story.album,
        story.loglik,
        story.z.to_one_based(),
        ids.join(", ")
    )
}

pub fn storyline(cfg: &RunConfig) -> Result<String, CliError> {
    let out = RunConfig::require(&cfg.out, "out")?;
    let ds = load_data(cfg)?;
    let model = load_model(cfg, &ds)?;
    let stories = sample_all(cfg, &model, &ds)?;
    write_json(out, &stories_json(cfg, &stories))?;
    Ok(format!("wrote {} stories to {}", stories.len(), out.display()))
}

pub fn summarize(cfg: &RunConfig) -> Result<String, CliError> {
    let out = RunConfig::require(&cfg.out, "out")?;
    let album_id = cfg
        .album
        .as_deref()
        .ok_or_else(|| CliError::Validation("missing required `album` (flag --album or config key)".into()))?;
    let ds = load_data(cfg)?;
    let model = load_model(cfg, &ds)?;
    let pos = ds
        .albums
        .iter()
        .position(|a| a.id == album_id)
        .ok_or_else(|| CliError::Runtime(format!("album {album_id} not in dataset")))?;
    // same stream as this album's entry in `storyline`
    let mut rng = root(cfg).substream(STORIES).substream(pos as u64);
    let story = sample_storylines(&model, &ds.albums[pos], cfg.samples, &mut rng)?;
    write_json(out, &stories_json(cfg, std::slice::from_ref(&story)))?;
    Ok(describe(&story, &ds))
}

fn cluster_baseline(cfg: &RunConfig) -> Result<Option<ClusterRnn>, CliError> {
    let Some(path) = cfg.train_data.as_deref() else {
        return Ok(None);
    };
    let train_ds = load_dataset(path)?;
    let k = cfg.clusters.min(train_ds.total_items());
    info!("training cluster-id RNN baseline with K={k}");
    Ok(Some(cluster_rnn_train(
        &train_ds,
        k,
        &cfg.train_config(),
        &root(cfg).substream(BASELINES),
    )?))
}

fn prediction_reports(
    cfg: &RunConfig,
    ds: &Dataset,
    truth: Option<&PlantedTruth>,
    horizon: Horizon,
    methods: &[&dyn Predictor],
) -> Result<Vec<EvalReport>, CliError> {
    let tag = match horizon {
        Horizon::Long => PREDICT_LONG,
        Horizon::Short => PREDICT_SHORT,
    };
    let instances = build_prediction_set(ds, truth, horizon, &root(cfg).substream(tag))?;
    let eval_rng = root(cfg).substream(EVAL);
    methods
        .iter()
        .map(|m| {
            let mut r = eval_prediction(*m, &instances, ds, &eval_rng)?;
            r.config = cfg.echo();
            r.seed = cfg.seed;
            Ok(r)
        })
        .collect()
}

fn write_reports(out: &Path, reports: &[EvalReport]) -> Result<String, CliError> {
    write_json(out, &reports)?;
    let table = format_reports(reports);
    write_text(&table_path(out), &table)?;
    Ok(table)
}

pub fn predict(cfg: &RunConfig) -> Result<String, CliError> {
    let out = RunConfig::require(&cfg.out, "out")?;
    let ds = load_data(cfg)?;
    let truth = match (&cfg.truth, cfg.horizon) {
        (Some(p), _) => Some(load_truth(p)?),
        (None, Horizon::Long) => {
            return Err(CliError::Validation("long-term prediction needs `truth`".into()));
        }
        (None, Horizon::Short) => None,
    };
    let model;
    let cluster;
    let method: Box<dyn Predictor + '_> = match cfg.method.as_str() {
        "random" => Box::new(RandomPredictor),
        "nn" => Box::new(NnPredictor),
        "fi" => Box::new(FiPredictor),
        "s-rnn" | "s-rnn-" | "d-rnn" => {
            model = load_model(cfg, &ds)?;
            Box::new(SrnnPredictor::new(&model))
        }
        "rnn" => {
            cluster = cluster_baseline(cfg)?
                .ok_or_else(|| CliError::Validation("method rnn needs `train_data`".into()))?;
            Box::new(ClusterRnnPredictor { model: &cluster })
        }
        other => {
            return Err(CliError::Validation(format!(
                "unknown method `{other}` (expected random, nn, fi, s-rnn, s-rnn-, d-rnn or rnn)"
            )))
        }
    };
    let reports = prediction_reports(cfg, &ds, truth.as_ref(), cfg.horizon, &[method.as_ref()])?;
    write_reports(out, &reports)
}

pub fn eval(cfg: &RunConfig) -> Result<String, CliError> {
    let out = RunConfig::require(&cfg.out, "out")?;
    let ds = load_data(cfg)?;
    let truth = cfg.truth.as_deref().map(load_truth).transpose()?;
    let model = cfg.model.as_ref().map(|_| load_model(cfg, &ds)).transpose()?;
    let cluster = cluster_baseline(cfg)?;

    let srnn_pred = model.as_ref().map(SrnnPredictor::new);
    let cluster_pred = cluster.as_ref().map(|m| ClusterRnnPredictor { model: m });
    let mut methods: Vec<&dyn Predictor> = vec![&RandomPredictor, &NnPredictor, &FiPredictor];
    if let Some(p) = &srnn_pred {
        methods.push(p);
    }
    if let Some(p) = &cluster_pred {
        methods.push(p);
    }

    let mut reports = Vec::new();
    if truth.is_some() {
        reports.extend(prediction_reports(cfg, &ds, truth.as_ref(), Horizon::Long, &methods)?);
    }
    reports.extend(prediction_reports(cfg, &ds, None, Horizon::Short, &methods)?);

    if let Some(truth) = &truth {
        let n = model.as_ref().map_or(cfg.n, |m| m.n);
        let usable: Vec<usize> = (0..ds.albums.len()).filter(|&i| ds.albums[i].len() >= n).collect();
        let base = root(cfg).substream(BASELINES);
        let mut selections: Vec<(String, Selection)> = Vec::new();

        let sample: Vec<(String, Vec<usize>)> = usable
            .iter()
            .map(|&i| {
                let a = &ds.albums[i];
                let pool: Vec<usize> = (0..a.len()).collect();
                Ok((a.id.clone(), sample_uniform(&pool, n, &mut base.substream(2 * i as u64))?))
            })
            .collect::<Result<_, CliError>>()?;
        selections.push(("sample".into(), sample));

        let kmeans: Vec<(String, Vec<usize>)> = usable
            .iter()
            .map(|&i| {
                let a = &ds.albums[i];
                let mut rng = base.substream(2 * i as u64 + 1);
                Ok((a.id.clone(), local_kmeans_select(a, n, &mut rng, CLUSTER_KMEANS_ITERS)?))
            })
            .collect::<Result<_, CliError>>()?;
        selections.push(("k-means".into(), kmeans));

        if let Some(m) = &cluster {
            let sel: Vec<(String, Vec<usize>)> = usable
                .iter()
                .map(|&i| {
                    let a = &ds.albums[i];
                    let mut rng = base.substream(1_000_000 + i as u64);
                    Ok((a.id.clone(), cluster_rnn_select(m, a, n, &mut rng)?))
                })
                .collect::<Result<_, CliError>>()?;
            selections.push(("rnn".into(), sel));
        }
        if let (Some(m), Some(p)) = (&model, &srnn_pred) {
            let stories = sample_all(cfg, m, &ds)?;
            let sel = stories
                .into_iter()
                .map(|s| (s.album, s.z.into_inner()))
                .collect();
            selections.push((p.name(), sel));
        }
        for (name, sel) in selections {
            if sel.is_empty() {
                continue;
            }
            let mut r = summarize_recovery(&name, &sel, truth)?;
            r.config = cfg.echo();
            r.seed = cfg.seed;
            reports.push(r);
        }
    }
    write_reports(out, &reports)
}

pub fn export_graph(cfg: &RunConfig) -> Result<String, CliError> {
    let out = RunConfig::require(&cfg.out, "out")?;
    let ds = load_data(cfg)?;
    let model = load_model(cfg, &ds)?;
    let stories = sample_all(cfg, &model, &ds)?;
    let graph = transition_graph(&stories, &ds, cfg.graph_nodes)?;
    let comment = serde_json::to_string(&cfg.echo())?;
    write_text(out, &graph.to_dot_with_comment(&ds.concept, Some(&comment)))?;
    Ok(format!(
        "wrote graph with {} nodes and {} edges to {}",
        graph.nodes.len(),
        graph.edges.len(),
        out.display()
    ))
}

pub fn nsweep(cfg: &RunConfig) -> Result<String, CliError> {
    let out = RunConfig::require(&cfg.out, "out")?;
    let ds = load_data(cfg)?;
    let truth = cfg.truth.as_deref().map(load_truth).transpose()?;
    let rng = root(cfg);
    let (tr, val) = split_train_val(&ds, cfg.train_ratio, &mut rng.substream(SPLIT))?;
    let rows = n_sweep(
        &tr,
        &val,
        truth.as_ref(),
        &cfg.ns,
        cfg.prior,
        &cfg.train_config(),
        &rng.substream(SWEEP),
    )?;
    write_json(out, &json!({ "config": cfg.echo(), "rows": rows }))?;
    let table = format_sweep(&rows);
    write_text(&table_path(out), &table)?;
    Ok(table)
}
