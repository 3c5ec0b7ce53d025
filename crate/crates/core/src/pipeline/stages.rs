use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::artifact::{
    check_hash, open_artifact, read_comment_fields, read_json, run_stage, write_atomic, write_json, StageOutcome,
};
use super::config::PipelineConfig;
use super::*;
use crate::detect::KnnScorer;
use crate::embed::{fit_embedder, EmbedderKind, ModelFile};
use crate::error::{Error, Result};
use crate::eval::{pr_curve, scatter_export, split_users, Split};
use crate::ingest::{
    build_user_weeks, event_day_vectors, flow_day_vectors, parse_events, parse_flows, ColumnStats, Dataset,
    DatasetMeta, FeatureGroup, Label, LabelTable, RecordKind, Standardizer, UserWeek,
};
use crate::segment::{select_k, ClusterData, ClusterModel, Method, SilhouetteOptions};
use crate::synth::{generate, PlantedAnomaly};

fn header(cfg: &PipelineConfig, what: &str) -> String {
    format!(
        "{what} by {} {}\nconfig_hash={} seed={}",
        env!("CARGO_PKG_NAME"),
        env!("CARGO_PKG_VERSION"),
        cfg.hash(),
        cfg.seed
    )
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthRecord {
    pub config_hash: String,
    pub seed: u64,
    pub synth_seed: u64,
    pub n_flows: usize,
    pub n_labels: usize,
    pub n_anomalous: usize,
    pub archetype_of: BTreeMap<String, String>,
    pub planted: Vec<PlantedAnomaly>,
}

pub fn cmd_synth(cfg: &PipelineConfig) -> Result<StageOutcome> {
    cfg.validate()?;
    run_stage(cfg, "synth", &[], || {
        let scfg = cfg.synth_config();
        let out = generate(&scfg)?;
        let flows = cfg.workdir.join(FLOWS);
        let labels = cfg.workdir.join(LABELS);
        let meta = cfg.workdir.join(SYNTH_META);
        let comment = header(cfg, "synthetic flows");
        write_atomic(&flows, |w| out.write_flows(w, &comment))?;
        write_atomic(&labels, |w| out.write_labels(w, &header(cfg, "ground truth")))?;
        let record = SynthRecord {
            config_hash: cfg.hash(),
            seed: cfg.seed,
            synth_seed: scfg.seed,
            n_flows: out.flows.len(),
            n_labels: out.labels.len(),
            n_anomalous: out.labels.anomalous_count(),
            archetype_of: out
                .archetype_of
                .iter()
                .enumerate()
                .map(|(i, &a)| (crate::synth::user_id(i), scfg.archetypes[a].name.clone()))
                .collect(),
            planted: out.planted.clone(),
        };
        write_json(&meta, &record)?;
        log::info!(
            "synth: {} flows, {} user-weeks, {} anomalous",
            record.n_flows,
            record.n_labels,
            record.n_anomalous
        );
        Ok(vec![flows, labels, meta])
    })
}

fn extract_inputs(cfg: &PipelineConfig) -> Vec<(PathBuf, &'static str)> {
    let mut inputs = vec![(cfg.flows_path(), "synth")];
    if let Some(l) = cfg.labels_path() {
        inputs.push((l, "synth"));
    }
    inputs
}

pub fn cmd_extract(cfg: &PipelineConfig) -> Result<StageOutcome> {
    cfg.validate()?;
    run_stage(cfg, "extract", &extract_inputs(cfg), || {
        let ds = extract(cfg)?;
        let path = cfg.workdir.join(DATASET);
        write_atomic(&path, |w| ds.write(w))?;
        Ok(vec![path])
    })
}

/// Parses the input and assembles standardizable user-week examples.
pub fn extract(cfg: &PipelineConfig) -> Result<Dataset> {
    if cfg.data.input.is_none() {
        let meta = cfg.workdir.join(SYNTH_META);
        let rec: SynthRecord = read_json(&meta, "synth")?;
        check_hash(&meta, &cfg.hash(), &rec.config_hash)?;
    }
    let schema = cfg.schema()?;
    let spec = cfg.feature_spec()?;
    let cal = cfg.features.calendar();
    let flows_path = cfg.flows_path();
    let input = BufReader::new(open_artifact(&flows_path, "synth")?);
    let (days, parsed, skipped) = match schema.kind {
        RecordKind::Flow => {
            let r = parse_flows(input, &schema, cfg.data.strict)?;
            (flow_day_vectors(&r.records, &spec, &cal), r.records.len(), r.skipped)
        }
        RecordKind::Event => {
            let r = parse_events(input, &schema, cfg.data.strict)?;
            (event_day_vectors(&r.records, &spec, &cal), r.records.len(), r.skipped)
        }
    };
    if skipped > 0 {
        log::warn!("extract: skipped {skipped} malformed lines in {}", flows_path.display());
    }
    let asm = build_user_weeks(&days);
    if asm.dropped_weeks > 0 {
        log::warn!("extract: dropped {} incomplete weeks", asm.dropped_weeks);
    }
    let mut labels = LabelTable::default();
    if let Some(lp) = cfg.labels_path() {
        let all = LabelTable::read_csv(open_artifact(&lp, "synth")?)?;
        for w in &asm.weeks {
            if let Some(l) = all.get(&w.user_id, w.week_index) {
                labels.insert(w.user_id.clone(), w.week_index, l);
            }
        }
    }
    let mut cluster_feature_indices = spec.group_indices(FeatureGroup::Count);
    cluster_feature_indices.extend(spec.group_indices(FeatureGroup::Bitmap));
    let names = spec.feature_names();
    let wpd = cal.windows_per_day();
    let per_window = names.len();
    // Sub-day windows are concatenated; every copy of a clustering feature counts.
    let cluster_feature_indices: Vec<usize> = (0..wpd)
        .flat_map(|w| cluster_feature_indices.iter().map(move |i| w * per_window + i))
        .collect();
    let feature_names: Vec<String> = (0..wpd)
        .flat_map(|w| {
            names.iter().map(move |n| if wpd == 1 { n.clone() } else { format!("w{w}.{n}") })
        })
        .collect();
    let n_users = asm.weeks.iter().map(|w| w.user_id.as_str()).collect::<BTreeSet<_>>().len();
    let meta = DatasetMeta {
        schema: schema.name.clone(),
        d: feature_names.len(),
        feature_names,
        cluster_feature_indices,
        window_hours: cal.window_hours,
        day_offset_seconds: cal.day_offset_seconds,
        n_examples: asm.weeks.len(),
        n_users,
        parsed_records: parsed,
        skipped_lines: skipped,
        dropped_weeks: asm.dropped_weeks,
        config_hash: cfg.hash(),
        seed: cfg.seed,
    };
    log::info!("extract: {} user-weeks of {} users, d = {}", meta.n_examples, meta.n_users, meta.d);
    Ok(Dataset {
        meta,
        weeks: asm.weeks,
        labels,
    })
}

fn load_dataset(cfg: &PipelineConfig) -> Result<Dataset> {
    let path = cfg.workdir.join(DATASET);
    let ds = Dataset::read(open_artifact(&path, "extract")?)?;
    check_hash(&path, &cfg.hash(), &ds.meta.config_hash)?;
    Ok(ds)
}

/// Per-user clustering result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterArtifact {
    pub config_hash: String,
    pub seed: u64,
    pub cluster_seed: u64,
    pub method: Method,
    pub k: usize,
    /// (k, mean silhouette) for every k tried.
    pub silhouette: Vec<(usize, f64)>,
    pub mean_silhouette: Option<f64>,
    pub feature_names: Vec<String>,
    /// Column statistics used to z-score the clustering features.
    pub scaling: Option<ColumnStats>,
    pub user_ids: Vec<String>,
    pub model: ClusterModel,
}

impl ClusterArtifact {
    pub fn users_by_cluster(&self) -> BTreeMap<usize, Vec<String>> {
        let mut out: BTreeMap<usize, Vec<String>> = BTreeMap::new();
        for (u, &c) in self.user_ids.iter().zip(&self.model.assignments) {
            out.entry(c).or_default().push(u.clone());
        }
        out
    }
}

/// Mean of each clustering feature over all of a user's weekday windows,
/// users in sorted order.
pub fn user_profiles(ds: &Dataset) -> (Vec<String>, Vec<Vec<f64>>) {
    let idx = &ds.meta.cluster_feature_indices;
    let mut acc: BTreeMap<&str, (Vec<f64>, usize)> = BTreeMap::new();
    for w in &ds.weeks {
        let e = acc.entry(w.user_id.as_str()).or_insert_with(|| (vec![0.0; idx.len()], 0));
        for x in w.x_seq() {
            for (s, &i) in e.0.iter_mut().zip(idx) {
                *s += x[i];
            }
            e.1 += 1;
        }
    }
    acc.into_iter()
        .map(|(u, (s, n))| (u.to_string(), s.into_iter().map(|v| v / n as f64).collect()))
        .unzip()
}

/// Categorical view of profiles for k-modes: bitmap features become
/// "seen in most windows", counts become log2 buckets.
fn categorical_profiles(ds: &Dataset, profiles: &[Vec<f64>]) -> Vec<Vec<u32>> {
    let bitmap: Vec<bool> = ds
        .meta
        .cluster_feature_indices
        .iter()
        .map(|&i| ds.meta.feature_names[i].contains("tcp_flags"))
        .collect();
    profiles
        .iter()
        .map(|p| {
            p.iter()
                .zip(&bitmap)
                .map(|(&v, &b)| if b { u32::from(v >= 0.5) } else { (1.0 + v.max(0.0)).log2().floor() as u32 })
                .collect()
        })
        .collect()
}

pub fn cmd_cluster(cfg: &PipelineConfig) -> Result<StageOutcome> {
    cfg.validate()?;
    let inputs = [(cfg.workdir.join(DATASET), "extract")];
    run_stage(cfg, "cluster", &inputs, || {
        let ds = load_dataset(cfg)?;
        let art = cluster(cfg, &ds)?;
        let csv_path = cfg.workdir.join(ASSIGNMENTS);
        write_atomic(&csv_path, |w| {
            for line in header(cfg, "cluster assignments").lines() {
                writeln!(w, "# {line}")?;
            }
            writeln!(w, "user_id,cluster_id")?;
            for (u, c) in art.user_ids.iter().zip(&art.model.assignments) {
                writeln!(w, "{u},{c}")?;
            }
            Ok(())
        })?;
        let model_path = cfg.workdir.join(CLUSTER_MODEL);
        write_json(&model_path, &art)?;
        Ok(vec![csv_path, model_path])
    })
}

pub fn cluster(cfg: &PipelineConfig, ds: &Dataset) -> Result<ClusterArtifact> {
    let c = &cfg.cluster;
    let seed = cfg.seeds().cluster;
    let (user_ids, profiles) = user_profiles(ds);
    let n = user_ids.len();
    let (data, scaling) = match c.method {
        Method::KMeans if c.standardize => {
            let stats = ColumnStats::fit(profiles.iter().map(Vec::as_slice))?;
            let z = profiles.iter().map(|p| stats.transform(p)).collect::<Result<Vec<_>>>()?;
            (ClusterData::Numeric(z), Some(stats))
        }
        Method::KMeans => (ClusterData::Numeric(profiles), None),
        Method::KModes => (ClusterData::Categorical(categorical_profiles(ds, &profiles)), None),
    };
    let sil = SilhouetteOptions {
        cap: c.silhouette_cap,
        sample: c.silhouette_sample,
        seed: derive_seed(seed, "silhouette"),
    };
    let (model, silhouette) = match c.k {
        Some(k) => {
            let model = data.fit(k, seed_for_k(seed, k), c.max_iter)?;
            let s = if k >= 2 {
                crate::segment::silhouette_with(&data.as_f64(), &model.assignments, data.method().metric(), sil)
                    .map(|r| vec![(k, r.mean)])
                    .unwrap_or_default()
            } else {
                Vec::new()
            };
            (model, s)
        }
        None => {
            let hi = c.k_max.min(n.saturating_sub(1));
            if hi < c.k_min {
                return Err(Error::config(
                    "cluster.k_max",
                    format!("{n} users leave no valid k in {}..={}", c.k_min, c.k_max),
                ));
            }
            let sel = select_k(&data, c.k_min..=hi, seed, c.max_iter, sil)?;
            (sel.model, sel.scores)
        }
    };
    let mean_silhouette = silhouette.iter().find(|(k, _)| *k == model.k).map(|s| s.1);
    log::info!(
        "cluster: k = {} ({}), silhouette {:?}",
        model.k,
        if c.k.is_some() { "fixed" } else { "selected" },
        silhouette
    );
    Ok(ClusterArtifact {
        config_hash: cfg.hash(),
        seed: cfg.seed,
        cluster_seed: seed,
        method: c.method,
        k: model.k,
        silhouette,
        mean_silhouette,
        feature_names: ds
            .meta
            .cluster_feature_indices
            .iter()
            .map(|&i| ds.meta.feature_names[i].clone())
            .collect(),
        scaling,
        user_ids,
        model,
    })
}

fn load_clusters(cfg: &PipelineConfig) -> Result<ClusterArtifact> {
    let path = cfg.workdir.join(CLUSTER_MODEL);
    let art: ClusterArtifact = read_json(&path, "cluster")?;
    check_hash(&path, &cfg.hash(), &art.config_hash)?;
    Ok(art)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitArtifact {
    pub config_hash: String,
    pub seed: u64,
    pub split: Split,
}

/// One cluster's trained embedder with the scaling fitted on its train
/// users.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedCluster {
    pub config_hash: String,
    pub seed: u64,
    pub cluster_id: usize,
    pub standardizer: Standardizer,
    pub n_train_weeks: usize,
    pub n_test_weeks: usize,
    pub model: ModelFile,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainIndex {
    pub config_hash: String,
    pub seed: u64,
    pub embedder: EmbedderKind,
    pub trained: Vec<usize>,
    /// Clusters without enough training weeks, with the reason.
    pub skipped: BTreeMap<usize, String>,
}

fn weeks_of<'a>(ds: &'a Dataset, users: &[String]) -> Vec<&'a UserWeek> {
    let set: BTreeSet<&str> = users.iter().map(String::as_str).collect();
    ds.weeks.iter().filter(|w| set.contains(w.user_id.as_str())).collect()
}

fn label_of(ds: &Dataset, w: &UserWeek) -> Option<Label> {
    ds.labels.get(&w.user_id, w.week_index)
}

fn threads(cfg: &PipelineConfig) -> usize {
    match cfg.threads {
        0 => std::thread::available_parallelism().map_or(1, |n| n.get()),
        n => n,
    }
}

/// Runs `f` over `items` on up to `n` threads; results keep item order.
fn parallel_map<T: Sync, R: Send>(items: &[T], n: usize, f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<R>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..n.clamp(1, items.len().max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let r = f(&items[i]);
                slots.lock().unwrap()[i] = Some(r);
            });
        }
    });
    slots.into_inner().unwrap().into_iter().map(|r| r.expect("every item processed")).collect()
}

pub fn cmd_train(cfg: &PipelineConfig) -> Result<StageOutcome> {
    cfg.validate()?;
    let kind = cfg.embed.embedder;
    let inputs = [
        (cfg.workdir.join(DATASET), "extract"),
        (cfg.workdir.join(CLUSTER_MODEL), "cluster"),
    ];
    run_stage(cfg, &format!("train:{kind}"), &inputs, || train(cfg))
}

struct Trained {
    cluster: TrainedCluster,
    scatter: Vec<(usize, String)>,
}

fn train(cfg: &PipelineConfig) -> Result<Vec<PathBuf>> {
    let kind = cfg.embed.embedder;
    let ds = load_dataset(cfg)?;
    let clusters = load_clusters(cfg)?;
    let split = split_users(&clusters.users_by_cluster(), cfg.eval.test_ratio, cfg.seeds().split)?;
    let split_path = cfg.workdir.join(SPLIT);
    write_json(
        &split_path,
        &SplitArtifact {
            config_hash: cfg.hash(),
            seed: cfg.seed,
            split: split.clone(),
        },
    )?;
    let mut outputs = vec![split_path];

    let mut skipped = BTreeMap::new();
    let mut jobs = Vec::new();
    for (&c, side) in &split.clusters {
        let n_train = weeks_of(&ds, &side.train).len();
        let need = cfg.detect.k_nn.max(2);
        if n_train < need {
            let why = format!("{n_train} training weeks, need at least {need}");
            log::warn!("train: skipping cluster {c}: {why}");
            skipped.insert(c, why);
        } else {
            jobs.push(c);
        }
    }
    let results = parallel_map(&jobs, threads(cfg), |&c| -> Result<Trained> {
        let side = &split.clusters[&c];
        let train_weeks: Vec<UserWeek> = weeks_of(&ds, &side.train).into_iter().cloned().collect();
        let test_raw = weeks_of(&ds, &side.test);
        let std = Standardizer::fit(&train_weeks)?;
        let train_z = std.apply_all(&train_weeks)?;
        let test_z: Vec<UserWeek> = test_raw.iter().map(|w| std.apply(w)).collect::<Result<_>>()?;
        let ecfg = cfg.embedder_config(c);
        let snap_set = (!test_z.is_empty()).then_some(test_z.as_slice());
        let (model, report) = fit_embedder(kind, &train_z, &ecfg, snap_set)?;
        log::info!(
            "train: {kind} cluster {c}: {} train / {} test weeks, final loss {:?}",
            train_z.len(),
            test_z.len(),
            report.loss_history.last()
        );
        let labels: Vec<Label> = test_raw.iter().map(|w| label_of(&ds, w).unwrap_or(Label::Normal)).collect();
        let mut scatter = Vec::new();
        for epoch in scatter_export(&report.snapshots, &labels)? {
            let mut buf = Vec::new();
            let comment = format!("{}\nembedder={kind} cluster={c} epoch={}", header(cfg, "embedding scatter"), epoch.epoch);
            epoch.write_csv(&mut buf, &comment)?;
            scatter.push((epoch.epoch, String::from_utf8(buf).expect("utf-8 csv")));
        }
        let d = ds.meta.d;
        Ok(Trained {
            cluster: TrainedCluster {
                config_hash: cfg.hash(),
                seed: cfg.seed,
                cluster_id: c,
                standardizer: std,
                n_train_weeks: train_z.len(),
                n_test_weeks: test_z.len(),
                model: ModelFile {
                    method: kind,
                    cluster_id: c,
                    d,
                    p: model.p(),
                    n_steps: crate::ingest::WEEK_LEN,
                    seed: ecfg.seed,
                    epochs: ecfg.epochs,
                    config: ecfg,
                    config_hash: cfg.hash(),
                    loss_history: report.loss_history,
                    model,
                },
            },
            scatter,
        })
    });
    let mut trained = Vec::new();
    for r in results {
        let t = r?;
        let c = t.cluster.cluster_id;
        let path = cfg.workdir.join(model_path(kind, c));
        write_json(&path, &t.cluster)?;
        outputs.push(path);
        for (epoch, body) in t.scatter {
            let path = cfg.workdir.join(scatter_path(kind, c, epoch));
            write_atomic(&path, |w| Ok(w.write_all(body.as_bytes())?))?;
            outputs.push(path);
        }
        trained.push(c);
    }
    let index_path = cfg.workdir.join(train_index_path(kind));
    write_json(
        &index_path,
        &TrainIndex {
            config_hash: cfg.hash(),
            seed: cfg.seed,
            embedder: kind,
            trained,
            skipped,
        },
    )?;
    outputs.push(index_path);
    Ok(outputs)
}

/// One scored test week.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub user_id: String,
    pub week_index: i64,
    pub cluster_id: usize,
    pub score: f64,
    pub kth: f64,
    pub label: Option<Label>,
}

pub fn cmd_score(cfg: &PipelineConfig) -> Result<StageOutcome> {
    cfg.validate()?;
    let kind = cfg.embed.embedder;
    let inputs = [
        (cfg.workdir.join(DATASET), "extract"),
        (cfg.workdir.join(SPLIT), "train"),
        (cfg.workdir.join(train_index_path(kind)), "train"),
    ];
    run_stage(cfg, &format!("score:{kind}"), &inputs, || {
        let rows = score(cfg)?;
        let path = cfg.workdir.join(scores_path(kind));
        write_atomic(&path, |w| {
            let comment = format!("{}\nembedder={kind} k_nn={}", header(cfg, "anomaly scores"), cfg.detect.k_nn);
            for line in comment.lines() {
                writeln!(w, "# {line}")?;
            }
            let mut csv = csv::Writer::from_writer(w);
            csv.write_record(["user_id", "week_index", "cluster_id", "score", "kth", "label"])?;
            for r in &rows {
                csv.write_record([
                    r.user_id.clone(),
                    r.week_index.to_string(),
                    r.cluster_id.to_string(),
                    r.score.to_string(),
                    r.kth.to_string(),
                    r.label.map_or("", Label::as_str).to_string(),
                ])?;
            }
            csv.flush()?;
            Ok(())
        })?;
        Ok(vec![path])
    })
}

/// kNN scores of every test week against its cluster's training weeks.
pub fn score(cfg: &PipelineConfig) -> Result<Vec<ScoreRow>> {
    let kind = cfg.embed.embedder;
    let hash = cfg.hash();
    let ds = load_dataset(cfg)?;
    let split_path = cfg.workdir.join(SPLIT);
    let split: SplitArtifact = read_json(&split_path, "train")?;
    check_hash(&split_path, &hash, &split.config_hash)?;
    let index_path = cfg.workdir.join(train_index_path(kind));
    let index: TrainIndex = read_json(&index_path, "train")?;
    check_hash(&index_path, &hash, &index.config_hash)?;
    let mut rows = Vec::new();
    for &c in &index.trained {
        let path = cfg.workdir.join(model_path(kind, c));
        let tc: TrainedCluster = read_json(&path, "train")?;
        check_hash(&path, &hash, &tc.config_hash)?;
        let side = &split.split.clusters[&c];
        let train_z: Vec<UserWeek> =
            weeks_of(&ds, &side.train).into_iter().map(|w| tc.standardizer.apply(w)).collect::<Result<_>>()?;
        let test = weeks_of(&ds, &side.test);
        let test_z: Vec<UserWeek> = test.iter().map(|w| tc.standardizer.apply(w)).collect::<Result<_>>()?;
        let refs = tc.model.model.encode_all(&train_z)?;
        let scorer = KnnScorer::new(refs, cfg.detect.k_nn)?;
        let scores = scorer.score_all(&tc.model.model.encode_all(&test_z)?)?;
        for (w, s) in test.iter().zip(scores) {
            rows.push(ScoreRow {
                user_id: w.user_id.clone(),
                week_index: w.week_index,
                cluster_id: c,
                score: s.mean,
                kth: s.kth,
                label: label_of(&ds, w),
            });
        }
    }
    log::info!("score: {kind}: {} test weeks", rows.len());
    Ok(rows)
}

pub fn read_scores(path: &Path) -> Result<(BTreeMap<String, String>, Vec<ScoreRow>)> {
    let fields = read_comment_fields(path, "score")?;
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(open_artifact(path, "score")?);
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let bad = |what: &str| Error::Malformed {
            line: rec.position().map_or(0, |p| p.line()),
            reason: format!("bad {what}"),
        };
        rows.push(ScoreRow {
            user_id: rec.get(0).ok_or_else(|| bad("user_id"))?.to_string(),
            week_index: rec.get(1).and_then(|v| v.parse().ok()).ok_or_else(|| bad("week_index"))?,
            cluster_id: rec.get(2).and_then(|v| v.parse().ok()).ok_or_else(|| bad("cluster_id"))?,
            score: rec.get(3).and_then(|v| v.parse().ok()).ok_or_else(|| bad("score"))?,
            kth: rec.get(4).and_then(|v| v.parse().ok()).ok_or_else(|| bad("kth"))?,
            label: match rec.get(5).unwrap_or("") {
                "" => None,
                s => Some(Label::parse(s).ok_or_else(|| bad("label"))?),
            },
        });
    }
    Ok((fields, rows))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AreaRow {
    /// `None` when the group has no anomalous week.
    pub pr_auc: Option<f64>,
    pub positives: usize,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub config_hash: String,
    pub seed: u64,
    pub embedder: EmbedderKind,
    pub k_nn: usize,
    pub pooled: AreaRow,
    pub clusters: BTreeMap<usize, AreaRow>,
}

pub fn cmd_eval(cfg: &PipelineConfig) -> Result<StageOutcome> {
    cfg.validate()?;
    let kind = cfg.embed.embedder;
    let inputs = [(cfg.workdir.join(scores_path(kind)), "score")];
    run_stage(cfg, &format!("eval:{kind}"), &inputs, || eval(cfg).map(|(_, files)| files))
}

fn area_row(rows: &[&ScoreRow]) -> Result<(AreaRow, Option<crate::eval::PrCurve>)> {
    let labelled: Vec<&&ScoreRow> = rows.iter().filter(|r| r.label.is_some()).collect();
    let scores: Vec<f64> = labelled.iter().map(|r| r.score).collect();
    let anomalous: Vec<bool> = labelled.iter().map(|r| r.label.is_some_and(Label::is_anomalous)).collect();
    let positives = anomalous.iter().filter(|&&a| a).count();
    if positives == 0 {
        return Ok((
            AreaRow {
                pr_auc: None,
                positives,
                total: labelled.len(),
            },
            None,
        ));
    }
    let curve = pr_curve(&scores, &anomalous)?;
    Ok((
        AreaRow {
            pr_auc: Some(curve.area),
            positives,
            total: labelled.len(),
        },
        Some(curve),
    ))
}

/// PR curves pooled over all clusters and per cluster.
pub fn eval(cfg: &PipelineConfig) -> Result<(EvalSummary, Vec<PathBuf>)> {
    let kind = cfg.embed.embedder;
    let path = cfg.workdir.join(scores_path(kind));
    let (fields, rows) = read_scores(&path)?;
    let found = fields.get("config_hash").map_or("<none>", String::as_str);
    check_hash(&path, &cfg.hash(), found)?;
    if fields.get("embedder").map(String::as_str) != Some(kind.as_str()) {
        return Err(Error::invalid(format!("{} does not hold {kind} scores", path.display())));
    }
    let dir = cfg.workdir.join(eval_dir(kind));
    let mut outputs = Vec::new();
    let all: Vec<&ScoreRow> = rows.iter().collect();
    let (pooled, curve) = area_row(&all)?;
    let head = format!("{}\nembedder={kind}", header(cfg, "precision-recall"));
    match curve {
        Some(c) => {
            let p = dir.join("pr-pooled.csv");
            write_atomic(&p, |w| c.write_csv(w, &format!("{head} scope=pooled")))?;
            outputs.push(p);
        }
        None => log::warn!("eval: {kind}: no anomalous test weeks; PR-AUC is undefined"),
    }
    let mut by_cluster: BTreeMap<usize, Vec<&ScoreRow>> = BTreeMap::new();
    for r in &rows {
        by_cluster.entry(r.cluster_id).or_default().push(r);
    }
    let mut clusters = BTreeMap::new();
    for (c, rs) in by_cluster {
        let (row, curve) = area_row(&rs)?;
        if let Some(curve) = curve {
            let p = dir.join(format!("pr-cluster-{c}.csv"));
            write_atomic(&p, |w| curve.write_csv(w, &format!("{head} scope=cluster-{c}")))?;
            outputs.push(p);
        }
        clusters.insert(c, row);
    }
    let summary = EvalSummary {
        config_hash: cfg.hash(),
        seed: cfg.seed,
        embedder: kind,
        k_nn: cfg.detect.k_nn,
        pooled,
        clusters,
    };
    let p = dir.join("summary.json");
    write_json(&p, &summary)?;
    outputs.push(p);
    log::info!("eval: {kind}: pooled PR-AUC {:?}", summary.pooled.pr_auc);
    Ok((summary, outputs))
}

/// Per-embedder PR-AUC table of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub config_hash: String,
    pub seed: u64,
    pub rows: Vec<EvalSummary>,
}

impl Summary {
    pub fn area(&self, kind: EmbedderKind) -> Option<f64> {
        self.rows.iter().find(|r| r.embedder == kind).and_then(|r| r.pooled.pr_auc)
    }

    pub fn write_csv<W: Write>(&self, mut w: W, comment: &str) -> Result<()> {
        for line in comment.lines() {
            writeln!(w, "# {line}")?;
        }
        writeln!(w, "embedder,scope,pr_auc,positives,total")?;
        for r in &self.rows {
            let mut line = |scope: String, a: &AreaRow| {
                let auc = a.pr_auc.map_or(String::new(), |v| v.to_string());
                writeln!(w, "{},{scope},{auc},{},{}", r.embedder, a.positives, a.total)
            };
            line("pooled".into(), &r.pooled)?;
            for (c, a) in &r.clusters {
                line(format!("cluster-{c}"), a)?;
            }
        }
        Ok(())
    }

    /// Fixed-width table for terminals.
    pub fn table(&self) -> String {
        let mut s = format!("{:<8} {:>8} {:>10} {:>7}\n", "embedder", "pr_auc", "anomalies", "weeks");
        for r in &self.rows {
            let auc = r.pooled.pr_auc.map_or("n/a".to_string(), |v| format!("{v:.4}"));
            s.push_str(&format!(
                "{:<8} {:>8} {:>10} {:>7}\n",
                r.embedder.as_str(),
                auc,
                r.pooled.positives,
                r.pooled.total
            ));
        }
        s
    }
}

/// Collects the eval summaries of all embedders, refusing mixed runs.
pub fn collect_summary(cfg: &PipelineConfig) -> Result<Summary> {
    let hash = cfg.hash();
    let mut rows = Vec::new();
    for kind in EmbedderKind::ALL {
        let path = cfg.workdir.join(eval_dir(kind)).join("summary.json");
        let s: EvalSummary = read_json(&path, "eval")?;
        check_hash(&path, &hash, &s.config_hash)?;
        rows.push(s);
    }
    Ok(Summary {
        config_hash: hash,
        seed: cfg.seed,
        rows,
    })
}

/// synth → extract → cluster → (train → score → eval) per embedder, then
/// the summary table. Stages whose inputs are unchanged are skipped.
pub fn cmd_repro(cfg: &PipelineConfig) -> Result<Summary> {
    cfg.validate()?;
    if cfg.data.input.is_none() {
        cmd_synth(cfg)?;
    }
    cmd_extract(cfg)?;
    cmd_cluster(cfg)?;
    for kind in EmbedderKind::ALL {
        let mut c = cfg.clone();
        c.embed.embedder = kind;
        cmd_train(&c)?;
        cmd_score(&c)?;
        cmd_eval(&c)?;
    }
    let summary = collect_summary(cfg)?;
    let inputs: Vec<(PathBuf, &'static str)> = EmbedderKind::ALL
        .iter()
        .map(|k| (cfg.workdir.join(eval_dir(*k)).join("summary.json"), "eval"))
        .collect();
    run_stage(cfg, "repro", &inputs, || {
        let csv = cfg.workdir.join(SUMMARY_CSV);
        write_atomic(&csv, |w| summary.write_csv(w, &header(cfg, "PR-AUC summary")))?;
        let json = cfg.workdir.join(SUMMARY_JSON);
        write_json(&json, &summary)?;
        Ok(vec![csv, json])
    })?;
    Ok(summary)
}
