//! Subcommand implementations. Every command works repetition by
//! repetition under `<out>/rep<r>/`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use fog_core::archive::{read_images, split_dir};
use fog_core::channel::{Channel, PerChannel};
use fog_core::dataset::{GafDataset, GafSample};
use fog_core::eval::{
    episode_metrics, merge_episodes, summarize, window_metrics, ChannelRanking, EvalError,
    EvalReport, FallbackInferer, Level, ReportSummary,
};
use fog_core::federated::{partition_clients, round_history_csv, run_rounds};
use fog_core::gaf::{difference_map, encode_png, export_png};
use fog_core::ingest::{LabeledRecording, SplitRatios};
use fog_core::model::{build_graph, history_csv, predict, timing_csv, ModelMetadata, TrainedModel};
use fog_core::pipeline::{
    grid_flags, read_recordings, segment_split, subject_registry, write_archives,
};
use fog_core::weights::{load_weights, save_weights};
use fog_core::windowing::{center_window, segment_majority, SplitTag};

use crate::config::{ConfigError, RunConfig};

/// Inference could not produce a prediction; maps to exit code 3.
#[derive(Debug, thiserror::Error)]
#[error("inference failed: {0}")]
pub struct InferenceError(#[from] pub EvalError);

pub const MODELS_DIR: &str = "models";
pub const FEDERATED_DIR: &str = "federated";
pub const EVAL_DIR: &str = "eval";
pub const PNG_DIR: &str = "png";
pub const RANKING_FILE: &str = "ranking.csv";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const SUBJECTS_FILE: &str = "subjects.csv";
pub const WEIGHTS_EXT: &str = "weights";

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn images(cfg: &RunConfig, rep: u32, tag: SplitTag) -> Result<GafDataset> {
    let dir = split_dir(&cfg.rep_dir(rep), tag);
    read_images(&dir, tag)
        .with_context(|| format!("reading {} archive (run preprocess first)", dir.display()))
}

fn file_tag(channels: &[Channel]) -> String {
    channels
        .iter()
        .map(|c| c.name())
        .collect::<Vec<_>>()
        .join("+")
}

pub fn preprocess(cfg: &RunConfig) -> Result<()> {
    let data = cfg.data_dir()?;
    let recordings = read_recordings(data)?;
    let registry = subject_registry(&recordings);
    let splits = fog_core::ingest::repeated_splits(
        &registry,
        SplitRatios::default(),
        cfg.seed,
        cfg.repetitions,
    )
    .map_err(|e| ConfigError(e.to_string()))?;
    for split in &splits {
        let rep = split.repetition_index;
        let out = cfg.rep_dir(rep);
        let windows = segment_split(&recordings, split, &cfg.dhwt())?;
        write_archives(&out, &windows, &cfg.gaf_config())?;
        let mut subjects = String::from("subject,split\n");
        for (tag, set) in [
            ("train", &split.train_subjects),
            ("val", &split.val_subjects),
            ("test", &split.test_subjects),
        ] {
            for s in set {
                let _ = writeln!(subjects, "{s},{tag}");
            }
        }
        write(&out.join(SUBJECTS_FILE), subjects)?;
        for s in &windows.skipped {
            eprintln!("rep{rep}: skipped {s}: shorter than one window");
        }
        let (tr, va, te) = (windows.train.len(), windows.val.len(), windows.test.len());
        println!(
            "rep{rep}: {tr} train, {va} val, {te} test windows -> {}",
            out.display()
        );
    }
    Ok(())
}

pub fn train(cfg: &RunConfig) -> Result<()> {
    for rep in 0..cfg.repetitions {
        let train = images(cfg, rep, SplitTag::Train)?;
        let val = images(cfg, rep, SplitTag::Val)?;
        for set in &cfg.train.channel_sets {
            let mcfg = cfg.model_config(set, rep)?;
            let tag = file_tag(&mcfg.channels);
            let run = fog_core::model::train(&mcfg, &train, Some(&val))?;
            let dir = cfg.rep_dir(rep).join(MODELS_DIR);
            write(
                &dir.join(format!("{tag}.{WEIGHTS_EXT}")),
                save_weights(&run.model),
            )?;
            write(
                &dir.join(format!("{tag}.history.csv")),
                history_csv(&run.history),
            )?;
            write(
                &dir.join(format!("{tag}.timing.csv")),
                timing_csv(&run.history),
            )?;
            let acc = fog_core::eval::fmt_metric(run.model.metadata.val_accuracy);
            println!("rep{rep} {tag}: {} epochs, val accuracy {acc}", mcfg.epochs);
        }
    }
    Ok(())
}

pub fn federate(cfg: &RunConfig) -> Result<()> {
    for rep in 0..cfg.repetitions {
        let train = images(cfg, rep, SplitTag::Train)?;
        let val = images(cfg, rep, SplitTag::Val)?;
        let mcfg = cfg.model_config(&cfg.federated.channels, rep)?;
        let rcfg = cfg.round_config(rep)?;
        let shards = partition_clients(&train, rcfg.num_clients, rcfg.seed)
            .map_err(|e| ConfigError(e.to_string()))?;
        let init = build_graph::<f32>(&mcfg)?.param_set();
        let run = run_rounds(&rcfg, &mcfg, &shards, init, Some(&val))?;
        let model = TrainedModel {
            config: mcfg.clone(),
            params: run.global,
            metadata: ModelMetadata {
                epochs_trained: rcfg.rounds * rcfg.local_epochs,
                val_accuracy: run.val_accuracy,
                val_f1: run.val_f1,
                test_f1: None,
            },
        };
        let tag = file_tag(&mcfg.channels);
        let dir = cfg.rep_dir(rep).join(FEDERATED_DIR);
        write(
            &dir.join(format!("{tag}.{WEIGHTS_EXT}")),
            save_weights(&model),
        )?;
        write(
            &dir.join(format!("{tag}.rounds.csv")),
            round_history_csv(&run.history),
        )?;
        let acc = fog_core::eval::fmt_metric(run.val_accuracy);
        println!(
            "rep{rep} federated {tag}: {} rounds, val accuracy {acc}",
            rcfg.rounds
        );
    }
    Ok(())
}

fn weight_files(dir: &Path) -> Result<Vec<PathBuf>> {
    if !dir.is_dir() {
        return Ok(Vec::new());
    }
    let mut out: Vec<PathBuf> = fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    out.retain(|p| p.extension().is_some_and(|e| e == WEIGHTS_EXT));
    out.sort();
    Ok(out)
}

fn load_model(path: &Path) -> Result<TrainedModel> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    load_weights(&bytes).with_context(|| format!("loading {}", path.display()))
}

/// Window and episode reports of one model on a test archive, plus the
/// predicted episodes file.
fn evaluate_model(
    model: &TrainedModel,
    test: &GafDataset,
    window_len: usize,
) -> Result<(EvalReport, EvalReport, String)> {
    let idx = test.usable_indices(model.channels());
    if idx.is_empty() {
        bail!("no test window has every channel of {}", model.config.tag());
    }
    let mut net = model.network()?;
    let preds = predict(&mut net, model.channels(), test, &idx)?;
    let usable = test.subset(&idx);
    let labels = usable.labels();
    let window = window_metrics(&preds, &labels)?;
    let pred_grid = grid_flags(&usable, &preds, window_len);
    let true_grid = grid_flags(&usable, &labels, window_len);
    let pred_eps = merge_episodes(&pred_grid)?;
    let true_eps = merge_episodes(&true_grid)?;
    let episode = episode_metrics(&pred_eps, &true_eps, &pred_grid, &true_grid)?;
    Ok((window, episode, fog_core::eval::episodes_csv(&pred_eps)))
}

pub fn evaluate(cfg: &RunConfig, models: &[PathBuf], only_rep: Option<u32>) -> Result<()> {
    let reps: Vec<u32> = match only_rep {
        Some(r) => vec![r],
        None => (0..cfg.repetitions).collect(),
    };
    let mut collected: BTreeMap<(String, &'static str), Vec<EvalReport>> = BTreeMap::new();
    for &rep in &reps {
        let test = images(cfg, rep, SplitTag::Test)?;
        let rep_dir = cfg.rep_dir(rep);
        let mut named: Vec<(String, PathBuf)> = Vec::new();
        if models.is_empty() {
            for p in weight_files(&rep_dir.join(MODELS_DIR))? {
                named.push((stem(&p), p));
            }
            for p in weight_files(&rep_dir.join(FEDERATED_DIR))? {
                named.push((format!("federated-{}", stem(&p)), p));
            }
        } else {
            named.extend(models.iter().map(|p| (stem(p), p.clone())));
        }
        if named.is_empty() {
            bail!(
                "no trained models under {} (run train first)",
                rep_dir.display()
            );
        }

        let mut table = format!("{}\n", EvalReport::CSV_HEADER);
        let mut ranked = Vec::new();
        for (name, path) in &named {
            let model = load_model(path)?;
            let (window, episode, episodes) =
                evaluate_model(&model, &test, cfg.windowing.window_len)?;
            let _ = writeln!(table, "{}", window.csv_row(name));
            let _ = writeln!(table, "{}", episode.csv_row(name));
            write(
                &rep_dir.join(EVAL_DIR).join(format!("{name}.episodes.csv")),
                episodes,
            )?;
            if let ([c], false) = (model.channels(), name.starts_with("federated-")) {
                ranked.push((*c, path.clone(), Some(window.f1.unwrap_or(0.0))));
            }
            println!("rep{rep} {}", window.to_text(name));
            collected
                .entry((name.clone(), Level::Window.name()))
                .or_default()
                .push(window);
            collected
                .entry((name.clone(), Level::Episode.name()))
                .or_default()
                .push(episode);
        }
        write(&rep_dir.join(EVAL_DIR).join("reports.csv"), table)?;
        if !ranked.is_empty() {
            let ranking = ChannelRanking::from_entries(ranked)?;
            let mut text = String::from("rank,channel,test_f1,weights\n");
            for (i, e) in ranking.entries().iter().enumerate() {
                let weights = match e.model.strip_prefix(&rep_dir) {
                    Ok(rel) => rel.to_path_buf(),
                    Err(_) => fs::canonicalize(&e.model)?,
                };
                let _ = writeln!(
                    text,
                    "{},{},{},{}",
                    i + 1,
                    e.channel,
                    e.test_f1,
                    weights.display()
                );
            }
            write(&rep_dir.join(RANKING_FILE), text)?;
        }
    }
    let mut summary = format!("{}\n", ReportSummary::CSV_HEADER);
    for ((name, level), reports) in &collected {
        let level = if *level == Level::Window.name() {
            Level::Window
        } else {
            Level::Episode
        };
        let _ = writeln!(summary, "{}", summarize(reports).csv_row(name, level));
    }
    write(&cfg.out_dir.join(SUMMARY_FILE), summary)?;
    Ok(())
}

fn stem(p: &Path) -> String {
    p.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// Reads a ranking file written by `evaluate`; relative weight paths are
/// resolved against the ranking file's directory.
pub fn read_ranking(path: &Path) -> Result<ChannelRanking<PathBuf>> {
    let mut reader =
        csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut entries = Vec::new();
    for row in reader.records() {
        let row = row?;
        let (Some(channel), Some(f1), Some(weights)) = (row.get(1), row.get(2), row.get(3)) else {
            bail!("{}: malformed ranking row", path.display());
        };
        let channel: Channel = channel
            .parse()
            .map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))?;
        let f1: f64 = f1
            .parse()
            .with_context(|| format!("{}: bad F1", path.display()))?;
        entries.push((channel, base.join(weights), Some(f1)));
    }
    Ok(ChannelRanking::from_entries(entries)?)
}

/// Reads a window file: header with the channel names, one row per sample,
/// empty cells for missing samples.
pub fn read_window(path: &Path, cfg: &RunConfig) -> Result<GafSample> {
    let mut reader =
        csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let headers = reader.headers()?.clone();
    let column = |c: Channel| headers.iter().position(|h| h.trim() == c.name());
    let cols = PerChannel::from_fn(column);
    let n = cfg.windowing.window_len;
    let mut channels: PerChannel<Vec<f64>> = PerChannel::default();
    let mut missing: PerChannel<Vec<bool>> = PerChannel::default();
    for (line, row) in reader.records().enumerate() {
        let row = row?;
        for c in Channel::ALL {
            let cell = cols[c]
                .and_then(|i| row.get(i))
                .map(str::trim)
                .unwrap_or("");
            if cell.is_empty() {
                channels[c].push(0.0);
                missing[c].push(true);
            } else {
                let v: f64 = cell.parse().with_context(|| {
                    format!("{}: line {}: bad {} value", path.display(), line + 2, c)
                })?;
                channels[c].push(v);
                missing[c].push(!v.is_finite());
            }
        }
    }
    if channels[Channel::AccV].len() != n {
        bail!(
            "{}: expected {n} samples, found {}",
            path.display(),
            channels[Channel::AccV].len()
        );
    }
    let rec = LabeledRecording {
        subject_id: stem(path),
        sample_rate_hz: 64,
        channels,
        missing,
        label: vec![0; n],
    };
    let set = segment_majority(&rec, n, cfg.windowing.missing_threshold, SplitTag::Test)?;
    let window = center_window(&set.windows()[0]);
    Ok(GafSample::from_window(&window, &cfg.gaf_config())?)
}

pub fn infer(cfg: &RunConfig, ranking: &Path, window: &Path) -> Result<()> {
    let ranking = read_ranking(ranking)?;
    let sample = read_window(window, cfg)?;
    let mut inferer = FallbackInferer::new(ranking);
    let p = inferer
        .infer(&sample, cfg.gaf.image_size)
        .map_err(InferenceError)?;
    println!(
        "prediction={} fog_probability={:.6} channel_used={} rank={}",
        p.prediction,
        p.fog_probability,
        p.channel_used,
        p.rank + 1
    );
    Ok(())
}

fn parse_key(key: &str) -> Result<(String, usize)> {
    let (subject, start) = key
        .rsplit_once(':')
        .ok_or_else(|| ConfigError(format!("window key {key:?} is not SUBJECT:START")))?;
    let start = start
        .parse()
        .map_err(|_| ConfigError(format!("window key {key:?} has a bad start index")))?;
    Ok((subject.to_string(), start))
}

pub fn gaf_export(
    cfg: &RunConfig,
    rep: u32,
    split: SplitTag,
    keys: &[String],
    diff: bool,
) -> Result<()> {
    let keys = keys
        .iter()
        .map(|k| parse_key(k))
        .collect::<Result<Vec<_>>>()?;
    if diff && keys.len() < 2 {
        return Err(ConfigError("a difference map needs two window keys".into()).into());
    }
    let data = images(cfg, rep, split)?;
    let size = data.image_size;
    let mut samples = Vec::new();
    for (subject, start) in &keys {
        let s = data
            .samples
            .iter()
            .find(|s| &s.subject_id == subject && s.start_index == *start)
            .with_context(|| format!("no {} window {subject}:{start} in rep{rep}", split.name()))?;
        samples.push(s);
    }
    let dir = cfg.rep_dir(rep).join(PNG_DIR);
    for s in &samples {
        for c in Channel::ALL {
            match s.image(c, size) {
                Some(img) => {
                    let path = dir.join(format!("{}_{}_{}.png", s.subject_id, s.start_index, c));
                    write(&path, export_png(&img)?)?;
                    println!("{}", path.display());
                }
                None => eprintln!(
                    "{}:{} {c} is not functional; skipped",
                    s.subject_id, s.start_index
                ),
            }
        }
    }
    if diff {
        let (a, b) = (samples[0], samples[1]);
        for c in Channel::ALL {
            if let (Some(x), Some(y)) = (a.image(c, size), b.image(c, size)) {
                let d: Vec<f64> = difference_map(&x, &y)?
                    .into_iter()
                    .map(|v| v - 1.0)
                    .collect();
                let path = dir.join(format!(
                    "diff_{}_{}_{}_{}_{}.png",
                    a.subject_id, a.start_index, b.subject_id, b.start_index, c
                ));
                write(&path, encode_png(size, &d)?)?;
                println!("{}", path.display());
            }
        }
    }
    Ok(())
}
