use std::collections::HashMap;
use std::fs::{self, OpenOptions};
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use super::config::{DatasetSource, PipelineConfig};
use crate::embed::ClusterModel;
use crate::error::{Error, Result};
use crate::ingest::{augment, load_dataset, synth_generate, Dataset, DatasetManifest, Sample, Split};
use crate::model::{
    load_checkpoint, resume, save_checkpoint, BestModel, Checkpoint, EpochMetrics, MiniCnn, TrainConfig, TrainState,
};
use crate::reliability::{
    adjust, annotate, cluster_reliability, default_sweep_thresholds, prototypes, report, select_swap_clusters,
    threshold_sweep, write_prototypes, write_report, write_sweep_csv, ReliabilityReport, ReliabilityTable,
    SwapDecision, REFERENCE_TEST_OVERALL, REFERENCE_VAL_OVERALL,
};
use crate::saliency::{batch_explain, map_paths, read_map, write_map, ExplainConfig};
use crate::types::{PredictionRecord, SaliencyMap};

/// Fixed directory layout under the output root.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn data(&self) -> PathBuf {
        self.root.join("data")
    }
    pub fn synthetic_manifest(&self) -> PathBuf {
        self.data().join("manifest.csv")
    }
    pub fn checkpoints(&self) -> PathBuf {
        self.root.join("checkpoints")
    }
    pub fn best_checkpoint(&self) -> PathBuf {
        self.checkpoints().join("best.ckpt")
    }
    pub fn last_checkpoint(&self) -> PathBuf {
        self.checkpoints().join("last.ckpt")
    }
    pub fn maps(&self, method: &str, split: Split) -> PathBuf {
        self.root.join("maps").join(method).join(split.as_str())
    }
    pub fn cluster(&self) -> PathBuf {
        self.root.join("cluster")
    }
    pub fn cluster_model(&self) -> PathBuf {
        self.cluster().join("model.cmodel")
    }
    pub fn assignments(&self, split: Split) -> PathBuf {
        self.cluster().join(format!("assignments_{split}.csv"))
    }
    pub fn decision(&self) -> PathBuf {
        self.cluster().join("swap_decision.json")
    }
    pub fn reports(&self) -> PathBuf {
        self.root.join("reports")
    }
    pub fn train_metrics(&self) -> PathBuf {
        self.reports().join("train_metrics.json")
    }
    pub fn split_summary(&self, split: Split) -> PathBuf {
        self.reports().join(format!("{split}_summary.json"))
    }
    pub fn run_log(&self) -> PathBuf {
        self.root.join("run.log")
    }
    fn lock(&self) -> PathBuf {
        self.root.join(".lock")
    }
}

struct LockGuard(PathBuf);

impl Drop for LockGuard {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.0);
    }
}

/// Headline numbers for one evaluated split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSummary {
    pub split: Split,
    pub records: usize,
    pub swap_set: Vec<usize>,
    pub overall_accuracy_before: f64,
    pub overall_accuracy_after: f64,
    pub average_class_accuracy_before: Option<f64>,
    pub average_class_accuracy_after: Option<f64>,
    pub delta_overall_pp: f64,
    /// FP + FN before adjustment.
    pub false_before: u64,
    /// How many of those fall into swap clusters.
    pub false_in_swap_clusters: u64,
}

impl SplitSummary {
    pub fn false_in_swap_fraction(&self) -> Option<f64> {
        (self.false_before > 0).then(|| self.false_in_swap_clusters as f64 / self.false_before as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub val: SplitSummary,
    pub test: SplitSummary,
    pub reference_val_overall: (f64, f64),
    pub reference_test_overall: (f64, f64),
}

#[derive(Serialize, Deserialize)]
struct StoredDecision {
    decision: SwapDecision,
    table: ReliabilityTable,
}

/// One pipeline invocation holding the output-directory lock.
pub struct Run {
    pub cfg: PipelineConfig,
    pub layout: Layout,
    _lock: LockGuard,
}

impl Run {
    /// Create the layout, take the lock and archive the resolved config.
    pub fn open(cfg: PipelineConfig) -> Result<Self> {
        let layout = Layout {
            root: cfg.out_dir.clone(),
        };
        for d in [layout.root.clone(), layout.checkpoints(), layout.cluster(), layout.reports()] {
            fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
        }
        let lock = layout.lock();
        match OpenOptions::new().write(true).create_new(true).open(&lock) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                return Err(Error::invalid(format!(
                    "output directory {} is in use by another run (remove {} if stale)",
                    layout.root.display(),
                    lock.display()
                )))
            }
            Err(e) => return Err(Error::io(&lock, e)),
        }
        let run = Self {
            _lock: LockGuard(lock),
            cfg,
            layout,
        };
        let archived = run.layout.root.join("config.json");
        fs::write(&archived, run.cfg.to_json()).map_err(|e| Error::io(&archived, e))?;
        Ok(run)
    }

    /// Append a timestamped line to the run log.
    pub fn log(&self, msg: &str) {
        let ts = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
        if let Ok(mut f) = OpenOptions::new().create(true).append(true).open(self.layout.run_log()) {
            let _ = writeln!(f, "[{ts}] {msg}");
        }
    }

    fn manifest_path(&self) -> PathBuf {
        match &self.cfg.dataset.source {
            DatasetSource::Synthetic(_) => self.layout.synthetic_manifest(),
            DatasetSource::Manifest(p) => p.clone(),
        }
    }

    pub fn synth(&self) -> Result<DatasetManifest> {
        let DatasetSource::Synthetic(spec) = &self.cfg.dataset.source else {
            return Err(Error::invalid("dataset source is a manifest; nothing to synthesize"));
        };
        let data = synth_generate(spec)?;
        let manifest = data.write(&self.layout.data())?;
        self.log(&format!("synth: wrote {} images to {}", manifest.entries.len(), self.layout.data().display()));
        Ok(manifest)
    }

    /// Load the configured dataset, generating synthetic data on first use.
    pub fn dataset(&self) -> Result<Dataset> {
        let path = self.manifest_path();
        if matches!(self.cfg.dataset.source, DatasetSource::Synthetic(_)) && !path.exists() {
            self.synth()?;
        }
        let manifest = DatasetManifest::read(&path)?;
        load_dataset(&manifest, self.cfg.dataset.side())
    }

    /// Train from scratch, or continue from `last.ckpt` when `resume_run` is set.
    /// Checkpoints are written after every epoch.
    pub fn train(&self, resume_run: bool) -> Result<Vec<EpochMetrics>> {
        let ds = self.dataset()?;
        let cfg = self.cfg.model.train.clone();
        let aug: Vec<Sample> = augment(&ds.train, &self.cfg.dataset.augmentation, self.cfg.seed)?
            .into_iter()
            .map(|a| a.sample)
            .collect();
        self.log(&format!("train: {} training images after augmentation", aug.len()));
        let (mut state, mut metrics) = if resume_run {
            self.load_state()?
        } else {
            let model = MiniCnn::new(self.cfg.model.architecture.clone(), self.cfg.model.init_seed)?;
            (TrainState::new(model, &cfg), Vec::new())
        };
        for epoch in state.epochs_done..cfg.epochs {
            let step = TrainConfig {
                epochs: epoch + 1,
                ..cfg.clone()
            };
            let out = resume(state, &aug, &ds.val, &step)?;
            state = out.state;
            for m in out.metrics {
                self.log(&format!(
                    "epoch {} lr {:e} train_loss {:.5} train_acc {:.4} val_loss {:.5} val_oa {:.4}",
                    m.epoch, m.learning_rate, m.train_loss, m.train_accuracy, m.val_loss, m.val_overall_accuracy
                ));
                metrics.push(m);
            }
            self.save_state(&state)?;
            self.write_json(&self.layout.train_metrics(), &metrics)?;
        }
        if cfg.epochs == 0 || state.best.is_none() {
            self.save_state(&state)?;
            self.write_json(&self.layout.train_metrics(), &metrics)?;
        }
        Ok(metrics)
    }

    fn save_state(&self, state: &TrainState) -> Result<()> {
        let seed = self.cfg.model.init_seed;
        let mut last = Checkpoint::new(state.model.clone(), seed, state.epochs_done);
        last.optimizer = Some(state.optimizer.clone());
        last.best_val_overall_accuracy = state.best.as_ref().map(|b| b.val_overall_accuracy);
        save_checkpoint(&last, &self.layout.last_checkpoint())?;
        let best = match &state.best {
            Some(b) => {
                let mut c = Checkpoint::new(b.model.clone(), seed, b.epoch + 1);
                c.best_val_overall_accuracy = Some(b.val_overall_accuracy);
                c
            }
            None => Checkpoint::new(state.model.clone(), seed, state.epochs_done),
        };
        save_checkpoint(&best, &self.layout.best_checkpoint())
    }

    fn load_state(&self) -> Result<(TrainState, Vec<EpochMetrics>)> {
        let last = load_checkpoint(&self.layout.last_checkpoint())?;
        let optimizer = last
            .optimizer
            .ok_or_else(|| Error::invalid("last checkpoint carries no optimizer state"))?;
        let best = match last.best_val_overall_accuracy {
            Some(acc) => {
                let b = load_checkpoint(&self.layout.best_checkpoint())?;
                Some(BestModel {
                    model: b.model,
                    epoch: b.epoch.saturating_sub(1),
                    val_overall_accuracy: acc,
                })
            }
            None => None,
        };
        let mut metrics: Vec<EpochMetrics> = match fs::read_to_string(self.layout.train_metrics()) {
            Ok(text) => serde_json::from_str(&text).map_err(|e| Error::format(self.layout.train_metrics(), e.to_string()))?,
            Err(_) => Vec::new(),
        };
        metrics.truncate(last.epoch);
        Ok((
            TrainState {
                model: last.model,
                optimizer,
                epochs_done: last.epoch,
                best,
            },
            metrics,
        ))
    }

    pub fn load_model(&self) -> Result<MiniCnn> {
        let path = self.cfg.model.checkpoint.clone().unwrap_or_else(|| self.layout.best_checkpoint());
        Ok(load_checkpoint(&path)
            .map_err(|e| e.context("loading model (run `train` first?)"))?
            .model)
    }

    fn explain_config(&self, ds: &Dataset) -> ExplainConfig {
        let mut cfg = self.cfg.saliency.clone();
        if cfg.dataset_mean.is_none() {
            cfg.dataset_mean = ds.channel_means(Split::Train);
        }
        cfg
    }

    /// Saliency maps plus sidecars for every image of `split`.
    pub fn explain(&self, split: Split) -> Result<usize> {
        let ds = self.dataset()?;
        let model = self.load_model()?;
        let cfg = self.explain_config(&ds);
        let dir = self.layout.maps(cfg.method.as_str(), split);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let samples = ds.split(split);
        let explanations = batch_explain(&model, samples, &cfg)?;
        for e in &explanations {
            write_map(&dir, e, &cfg)?;
        }
        self.log(&format!("explain: {} {} maps for {split} ({})", explanations.len(), cfg.method, cfg.digest()));
        Ok(explanations.len())
    }

    /// Prediction records and maps of `split`, in manifest order.
    pub fn load_split(&self, ds: &Dataset, split: Split) -> Result<(Vec<PredictionRecord>, Vec<SaliencyMap>)> {
        let cfg = self.explain_config(ds);
        let dir = self.layout.maps(cfg.method.as_str(), split);
        let digest = cfg.digest();
        let mut records = Vec::new();
        let mut maps = Vec::new();
        for s in ds.split(split) {
            let (path, _) = map_paths(&dir, &s.id, cfg.method);
            let (map, side) = read_map(&path).map_err(|e| e.context(format!("maps for {split} (run `explain` first?)")))?;
            if side.config_digest != digest {
                return Err(Error::invalid(format!(
                    "{} was computed with a different saliency config; rerun `explain`",
                    path.display()
                )));
            }
            records.push(PredictionRecord::new(s.id.clone(), side.scores()?, Some(s.label)));
            maps.push(map);
        }
        Ok((records, maps))
    }

    /// Fit PCA + spectral clustering on validation maps.
    pub fn cluster(&self) -> Result<ClusterModel> {
        let ds = self.dataset()?;
        let (_, maps) = self.load_split(&ds, Split::Val)?;
        let model = ClusterModel::fit(&maps, &self.cfg.cluster)?;
        model.save(&self.layout.cluster_model())?;
        write_assignments(&self.layout.assignments(Split::Val), &model.image_ids, &model.labels)?;
        self.log(&format!(
            "cluster: {} maps, dim {}, q {}, scale {:.6}",
            maps.len(),
            model.basis.dim,
            model.q(),
            model.scale
        ));
        Ok(model)
    }

    fn load_cluster_model(&self) -> Result<ClusterModel> {
        ClusterModel::load(&self.layout.cluster_model()).map_err(|e| e.context("loading cluster model (run `cluster` first?)"))
    }

    /// Score validation clusters, store the swap decision and report on the
    /// validation set adjusted with its own decision.
    pub fn reliability(&self) -> Result<ReliabilityReport> {
        let ds = self.dataset()?;
        let cm = self.load_cluster_model()?;
        let (records, maps) = self.load_split(&ds, Split::Val)?;
        let ids: Vec<&str> = records.iter().map(|r| r.image_id.as_str()).collect();
        if ids != cm.image_ids.iter().map(String::as_str).collect::<Vec<_>>() {
            return Err(Error::invalid("cluster model was fit on different validation maps; rerun `cluster`"));
        }
        let assign = cm.labels.clone();
        let table = cluster_reliability(&records, &assign, cm.q())?;
        let decision = select_swap_clusters(&table, self.cfg.reliability.threshold)?;
        self.write_json(
            &self.layout.decision(),
            &StoredDecision {
                decision: decision.clone(),
                table: table.clone(),
            },
        )?;
        let (protos, omitted) = prototypes(&maps, &assign, cm.q())?;
        let proto_dir = self.layout.reports().join("prototypes");
        fs::create_dir_all(&proto_dir).map_err(|e| Error::io(&proto_dir, e))?;
        write_prototypes(&proto_dir, &protos)?;
        if !omitted.is_empty() {
            self.log(&format!("reliability: no prototype for empty clusters {omitted:?}"));
        }
        let sweep = threshold_sweep(&records, &assign, &table, &default_sweep_thresholds())?;
        write_sweep_csv(&self.layout.reports().join("threshold_sweep.csv"), &sweep)?;
        let rep = self.finish_split(Split::Val, &records, &assign, &table, &decision)?;
        self.log(&format!("reliability: swap set {:?} at t = {}", decision.swap_set, decision.threshold));
        Ok(rep)
    }

    fn finish_split(
        &self,
        split: Split,
        records: &[PredictionRecord],
        assign: &[usize],
        table: &ReliabilityTable,
        decision: &SwapDecision,
    ) -> Result<ReliabilityReport> {
        let before = annotate(records, assign, table)?;
        let after = adjust(&before, assign, decision)?;
        let rep = report(&before, &after, table, decision)?;
        write_report(&self.layout.reports(), &format!("{split}_report"), &rep)?;
        let false_before: Vec<usize> = (0..records.len())
            .filter(|&i| records[i].outcome.is_some_and(|o| o.is_false()))
            .collect();
        let summary = SplitSummary {
            split,
            records: records.len(),
            swap_set: decision.swap_set.iter().copied().collect(),
            overall_accuracy_before: rep.before.overall_accuracy,
            overall_accuracy_after: rep.after.overall_accuracy,
            average_class_accuracy_before: rep.before.average_class_accuracy,
            average_class_accuracy_after: rep.after.average_class_accuracy,
            delta_overall_pp: rep.delta_overall_pp,
            false_before: false_before.len() as u64,
            false_in_swap_clusters: false_before.iter().filter(|&&i| decision.swap_set.contains(&assign[i])).count()
                as u64,
        };
        self.write_json(&self.layout.split_summary(split), &summary)?;
        Ok(rep)
    }

    /// Assign `split` maps to clusters by kNN and apply the stored
    /// validation decision.
    pub fn adjust(&self, split: Split) -> Result<ReliabilityReport> {
        if split == Split::Val {
            return self.reliability();
        }
        let ds = self.dataset()?;
        let cm = self.load_cluster_model()?;
        let text = fs::read_to_string(self.layout.decision())
            .map_err(|e| Error::io(self.layout.decision(), e).context("run `reliability` first"))?;
        let stored: StoredDecision =
            serde_json::from_str(&text).map_err(|e| Error::format(self.layout.decision(), e.to_string()))?;
        let (records, maps) = self.load_split(&ds, split)?;
        let assign: Vec<usize> = maps.iter().map(|m| cm.assign(m)).collect::<Result<_>>()?;
        let ids: Vec<String> = records.iter().map(|r| r.image_id.clone()).collect();
        write_assignments(&self.layout.assignments(split), &ids, &assign)?;
        let rep = self.finish_split(split, &records, &assign, &stored.table, &stored.decision)?;
        self.log(&format!(
            "adjust: {split} overall accuracy {:.4} -> {:.4}",
            rep.before.overall_accuracy, rep.after.overall_accuracy
        ));
        Ok(rep)
    }

    /// Collect the split summaries into `reports/summary.json` and a text table.
    pub fn report(&self) -> Result<Summary> {
        let read = |split: Split| -> Result<SplitSummary> {
            let p = self.layout.split_summary(split);
            let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e).context(format!("no {split} results yet")))?;
            serde_json::from_str(&text).map_err(|e| Error::format(&p, e.to_string()))
        };
        let summary = Summary {
            val: read(Split::Val)?,
            test: read(Split::Test)?,
            reference_val_overall: REFERENCE_VAL_OVERALL,
            reference_test_overall: REFERENCE_TEST_OVERALL,
        };
        self.write_json(&self.layout.reports().join("summary.json"), &summary)?;
        let text = render_summary(&summary);
        let path = self.layout.reports().join("summary.txt");
        fs::write(&path, &text).map_err(|e| Error::io(&path, e))?;
        Ok(summary)
    }

    /// All stages in order.
    pub fn run_all(&self) -> Result<Summary> {
        if matches!(self.cfg.dataset.source, DatasetSource::Synthetic(_)) {
            self.synth()?;
        }
        if self.cfg.model.checkpoint.is_none() {
            self.train(false)?;
        }
        self.explain(Split::Val)?;
        self.explain(Split::Test)?;
        self.cluster()?;
        self.reliability()?;
        self.adjust(Split::Test)?;
        self.report()
    }

    fn write_json<T: Serialize>(&self, path: &Path, value: &T) -> Result<()> {
        let text = serde_json::to_string_pretty(value).expect("value serializes");
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

pub fn render_summary(s: &Summary) -> String {
    let pct = |v: f64| format!("{:.2}", 100.0 * v);
    let opt = |v: Option<f64>| v.map_or("n/a".to_string(), pct);
    let mut out = String::from("split  n     OA before  OA after  ACA before  ACA after  swap set  errors in swap\n");
    for sp in [&s.val, &s.test] {
        let frac = sp.false_in_swap_fraction().map_or("n/a".into(), pct);
        out.push_str(&format!(
            "{:<6} {:<5} {:<10} {:<9} {:<11} {:<10} {:<9} {}/{} ({frac}%)\n",
            sp.split.as_str(),
            sp.records,
            pct(sp.overall_accuracy_before),
            pct(sp.overall_accuracy_after),
            opt(sp.average_class_accuracy_before),
            opt(sp.average_class_accuracy_after),
            format!("{:?}", sp.swap_set),
            sp.false_in_swap_clusters,
            sp.false_before,
        ));
    }
    out.push_str(&format!(
        "reference OA (full scale): val {} -> {}, test {} -> {}\n",
        pct(s.reference_val_overall.0),
        pct(s.reference_val_overall.1),
        pct(s.reference_test_overall.0),
        pct(s.reference_test_overall.1)
    ));
    out
}

fn write_assignments(path: &Path, ids: &[String], labels: &[usize]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    w.write_record(["image_id", "cluster_id"]).map_err(|e| Error::format(path, e.to_string()))?;
    for (id, l) in ids.iter().zip(labels) {
        w.write_record([id.as_str(), &l.to_string()]).map_err(|e| Error::format(path, e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Read an assignment CSV back into `image_id → cluster_id`.
pub fn read_assignments(path: &Path) -> Result<HashMap<String, usize>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    r.records()
        .map(|rec| {
            let rec = rec.map_err(|e| Error::format(path, e.to_string()))?;
            let id = rec.get(0).unwrap_or_default().to_string();
            let c = rec
                .get(1)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::format(path, format!("bad cluster id for {id}")))?;
            Ok((id, c))
        })
        .collect()
}
