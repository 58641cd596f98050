//! Training loop with vote dropping, evaluation metrics, vote-count sweeps
//! and checkpoint persistence.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::Sample;
use crate::encoder::{Encoder, EncoderConfig, VoteDistribution};
use crate::geometry::{
    build_partition, chamfer_distance, simulate_plane_cut, LocalPointSet, PointCloud,
};
use crate::heads::{ClassifyHead, FoldHead, HeadConfig, SegmentHead, Task};
use crate::nn::checkpoint::{CheckpointFile, NamedArray};
use crate::nn::{Adam, Matrix, ParamStore, Tape};
use crate::voting::{self, LatentPosterior, PoolMode};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub task: Task,
    pub encoder: EncoderConfig,
    pub head: HeadConfig,
    pub max_votes_train: usize,
    /// Votes contributing at inference; `None` means all.
    pub votes_test: Option<usize>,
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    /// Halve the learning rate every this many epochs (0 disables).
    pub lr_decay_every: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            task: Task::Classify,
            encoder: EncoderConfig::default(),
            head: HeadConfig::default(),
            max_votes_train: 10,
            votes_test: None,
            batch_size: 16,
            epochs: 200,
            lr: 1e-3,
            lr_decay_every: 50,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Small widths that train in minutes on CPU; the scale used by the
    /// toy datasets and the test suite.
    pub fn toy(task: Task) -> Self {
        let encoder = EncoderConfig {
            latent_dim: 64,
            point_mlp: vec![32, 64],
            vote_mlp: vec![64],
            radius: 0.2,
            n_sets: 16,
            max_points_per_set: 64,
            // running batchnorm statistics calibrate poorly on the small,
            // highly correlated batches the toy scale uses
            use_batchnorm: false,
            use_dropout: false,
            dropout_p: 0.5,
        };
        let head = HeadConfig {
            task,
            n_classes: 5,
            n_parts: 3,
            output_points: 256,
            hidden: vec![64],
            fold_hidden: vec![64, 64],
            include_category: false,
            use_dropout: false,
            dropout_p: 0.5,
        };
        TrainConfig {
            task,
            encoder,
            head,
            max_votes_train: 4,
            votes_test: None,
            batch_size: 16,
            epochs: 50,
            lr: 1e-2,
            lr_decay_every: 50,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        if self.head.task != self.task {
            return Err(Error::Config("head task differs from training task".into()));
        }
        if self.max_votes_train == 0 || self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config("counts must be positive".into()));
        }
        if self.votes_test == Some(0) {
            return Err(Error::Config("votes_test must be positive or 'all'".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        Ok(())
    }

    /// Full key=value serialization; [`TrainConfig::from_text`] restores it
    /// exactly.
    pub fn to_text(&self) -> String {
        let list = |v: &[usize]| {
            v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
        };
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            s.push_str(k);
            s.push('=');
            s.push_str(&v);
            s.push('\n');
        };
        kv("task", self.task.as_str().to_string());
        kv("seed", self.seed.to_string());
        kv("epochs", self.epochs.to_string());
        kv("batch_size", self.batch_size.to_string());
        kv("lr", format!("{:e}", self.lr));
        kv("lr_decay_every", self.lr_decay_every.to_string());
        kv("max_votes_train", self.max_votes_train.to_string());
        kv(
            "votes_test",
            self.votes_test.map_or("all".into(), |v| v.to_string()),
        );
        kv("latent_dim", self.encoder.latent_dim.to_string());
        kv("point_mlp", list(&self.encoder.point_mlp));
        kv("vote_mlp", list(&self.encoder.vote_mlp));
        kv("radius", format!("{:e}", self.encoder.radius));
        kv("n_sets", self.encoder.n_sets.to_string());
        kv("max_points_per_set", self.encoder.max_points_per_set.to_string());
        kv("use_batchnorm", self.encoder.use_batchnorm.to_string());
        kv("use_dropout", self.encoder.use_dropout.to_string());
        kv("dropout_p", format!("{:e}", self.encoder.dropout_p));
        kv("n_classes", self.head.n_classes.to_string());
        kv("n_parts", self.head.n_parts.to_string());
        kv("output_points", self.head.output_points.to_string());
        kv("head_hidden", list(&self.head.hidden));
        kv("fold_hidden", list(&self.head.fold_hidden));
        kv("include_category", self.head.include_category.to_string());
        kv("head_use_dropout", self.head.use_dropout.to_string());
        kv("head_dropout_p", format!("{:e}", self.head.dropout_p));
        s
    }

    /// Apply key=value lines on top of `self`. Blank lines and `#` comments
    /// are skipped; unknown keys and malformed values are rejected with
    /// their line number.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let lineno = i + 1;
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {lineno}: expected key=value, got '{line}'"))
            })?;
            self.apply_key(key.trim(), value.trim())
                .map_err(|e| Error::Config(format!("line {lineno}: {e}")))?;
        }
        self.head.task = self.task;
        self.validate()
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    fn apply_key(&mut self, key: &str, value: &str) -> Result<()> {
        fn int(v: &str) -> Result<usize> {
            v.parse()
                .map_err(|_| Error::Config(format!("invalid integer '{v}'")))
        }
        fn float(v: &str) -> Result<f64> {
            v.parse()
                .map_err(|_| Error::Config(format!("invalid number '{v}'")))
        }
        fn boolean(v: &str) -> Result<bool> {
            v.parse()
                .map_err(|_| Error::Config(format!("invalid boolean '{v}'")))
        }
        fn ints(v: &str) -> Result<Vec<usize>> {
            v.split(',').map(|p| int(p.trim())).collect()
        }
        match key {
            "task" => self.task = Task::parse(value)?,
            "seed" => {
                self.seed = value
                    .parse()
                    .map_err(|_| Error::Config(format!("invalid integer '{value}'")))?
            }
            "epochs" => self.epochs = int(value)?,
            "batch_size" => self.batch_size = int(value)?,
            "lr" => self.lr = float(value)?,
            "lr_decay_every" => self.lr_decay_every = int(value)?,
            "max_votes_train" => self.max_votes_train = int(value)?,
            "votes_test" => {
                self.votes_test = if value == "all" { None } else { Some(int(value)?) }
            }
            "latent_dim" => self.encoder.latent_dim = int(value)?,
            "point_mlp" => self.encoder.point_mlp = ints(value)?,
            "vote_mlp" => self.encoder.vote_mlp = ints(value)?,
            "radius" => self.encoder.radius = float(value)?,
            "n_sets" => self.encoder.n_sets = int(value)?,
            "max_points_per_set" => self.encoder.max_points_per_set = int(value)?,
            "use_batchnorm" => self.encoder.use_batchnorm = boolean(value)?,
            "use_dropout" => self.encoder.use_dropout = boolean(value)?,
            "dropout_p" => self.encoder.dropout_p = float(value)?,
            "n_classes" => self.head.n_classes = int(value)?,
            "n_parts" => self.head.n_parts = int(value)?,
            "output_points" => self.head.output_points = int(value)?,
            "head_hidden" => self.head.hidden = ints(value)?,
            "fold_hidden" => self.head.fold_hidden = ints(value)?,
            "include_category" => self.head.include_category = boolean(value)?,
            "head_use_dropout" => self.head.use_dropout = boolean(value)?,
            "head_dropout_p" => self.head.dropout_p = float(value)?,
            other => return Err(Error::Config(format!("unknown key '{other}'"))),
        }
        Ok(())
    }
}

/// The assembled model: shared encoder plus the head for its task.
pub struct Model {
    pub cfg: TrainConfig,
    pub store: ParamStore,
    pub encoder: Encoder,
    pub classify: Option<ClassifyHead>,
    pub segment: Option<SegmentHead>,
    pub fold: Option<FoldHead>,
}

impl Model {
    pub fn new(cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let encoder = Encoder::new(&mut store, cfg.encoder.clone(), &mut rng)?;
        let d = cfg.encoder.latent_dim;
        let mut model = Model {
            classify: None,
            segment: None,
            fold: None,
            encoder,
            cfg,
            store: ParamStore::new(),
        };
        match model.cfg.task {
            Task::Classify => {
                model.classify = Some(ClassifyHead::new(&mut store, model.cfg.head.clone(), d, &mut rng))
            }
            Task::Segment => {
                model.segment = Some(SegmentHead::new(&mut store, model.cfg.head.clone(), d, &mut rng))
            }
            Task::Complete => {
                model.fold = Some(FoldHead::new(&mut store, model.cfg.head.clone(), d, &mut rng))
            }
        }
        model.store = store;
        Ok(model)
    }

    /// All inference votes for a cloud, truncated to `votes_test` (first k,
    /// FPS order) when configured.
    pub fn votes_for_cloud(
        &self,
        cloud: &PointCloud,
        votes_test: Option<usize>,
        seed: u64,
    ) -> Result<Vec<VoteDistribution>> {
        let mut votes = self.encoder.encode_cloud(&self.store, cloud, seed)?;
        if let Some(k) = votes_test {
            if k == 0 {
                return Err(Error::InvalidArgument("votes_test must be positive".into()));
            }
            votes.truncate(k);
        }
        Ok(votes)
    }

    pub fn latent_for_cloud(
        &self,
        cloud: &PointCloud,
        votes_test: Option<usize>,
        seed: u64,
    ) -> Result<Vec<f64>> {
        let votes = self.votes_for_cloud(cloud, votes_test, seed)?;
        Ok(voting::optimal_latent(&LatentPosterior::new(votes)?))
    }

    pub fn save(&self, path: &Path, epoch: u32, metrics_text: &str, optimizer: Option<&Adam>) -> Result<()> {
        let mut params = Vec::new();
        let mut stats = Vec::new();
        for (_, p) in self.store.iter() {
            let arr = NamedArray::from_matrix(&p.name, &p.value);
            if p.trainable {
                params.push(arr);
            } else {
                stats.push(arr);
            }
        }
        let optimizer = optimizer.map(|adam| {
            let arrays = adam
                .export_moments(&self.store)
                .into_iter()
                .map(|(name, m)| NamedArray::from_matrix(&name, &m))
                .collect();
            (adam.step_count(), arrays)
        });
        CheckpointFile {
            config_text: self.cfg.to_text(),
            epoch,
            metrics_text: metrics_text.to_string(),
            params,
            stats,
            optimizer,
        }
        .write(path)
    }

    pub fn load(path: &Path) -> Result<(Model, CheckpointFile)> {
        let file = CheckpointFile::read(path)?;
        let cfg = TrainConfig::from_text(&file.config_text)
            .map_err(|e| Error::Checkpoint(format!("embedded config: {e}")))?;
        let mut model = Model::new(cfg)?;
        let mut seen = 0usize;
        for arr in file.params.iter().chain(file.stats.iter()) {
            let id = model.store.id(&arr.name).ok_or_else(|| {
                Error::Checkpoint(format!("unknown parameter '{}' in checkpoint", arr.name))
            })?;
            let m = arr.to_matrix()?;
            if m.dim() != model.store.value(id).dim() {
                return Err(Error::Checkpoint(format!(
                    "parameter '{}' has shape {:?}, expected {:?}",
                    arr.name,
                    m.dim(),
                    model.store.value(id).dim()
                )));
            }
            *model.store.value_mut(id) = m;
            seen += 1;
        }
        if seen != model.store.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint holds {seen} of {} parameters",
                model.store.len()
            )));
        }
        Ok((model, file))
    }
}

/// Training outcome: the trained model plus the mean loss per epoch.
pub struct TrainOutcome {
    pub model: Model,
    pub loss_curve: Vec<f64>,
    pub optimizer: Adam,
}

pub fn train(cfg: &TrainConfig, samples: &[Sample]) -> Result<TrainOutcome> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::InvalidArgument("empty training set".into()));
    }
    check_dataset(cfg, samples)?;
    let mut model = Model::new(cfg.clone())?;

    // The overlapping partition of a complete cloud never changes, so build
    // it once per sample.
    let partitions: Vec<Vec<LocalPointSet>> = samples
        .iter()
        .enumerate()
        .map(|(i, s)| {
            build_partition(
                &s.cloud,
                cfg.encoder.n_sets.min(s.cloud.len()),
                cfg.encoder.radius,
                cfg.encoder.max_points_per_set,
                cfg.seed.wrapping_add(i as u64),
            )
        })
        .collect::<Result<_>>()?;

    let mut adam = Adam::new(cfg.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x7261_696e));
    let mut curve = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        if cfg.lr_decay_every > 0 && epoch > 0 && epoch % cfg.lr_decay_every == 0 {
            adam.lr *= 0.5;
        }
        let mut order: Vec<usize> = (0..samples.len()).collect();
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut steps = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            let loss = train_step(&mut model, &mut adam, batch, samples, &partitions, &mut rng)
                .map_err(|e| match e {
                    Error::Numerical(msg) => Error::Numerical(format!(
                        "epoch {epoch} step {steps}: {msg}"
                    )),
                    other => other,
                })?;
            epoch_loss += loss;
            steps += 1;
        }
        curve.push(epoch_loss / steps as f64);
    }
    // Round parameters to f32 so a saved checkpoint reproduces in-memory
    // evaluation bit for bit.
    model.store.quantize_f32();
    Ok(TrainOutcome {
        model,
        loss_curve: curve,
        optimizer: adam,
    })
}

fn check_dataset(cfg: &TrainConfig, samples: &[Sample]) -> Result<()> {
    for s in samples {
        s.cloud.validate()?;
        match cfg.task {
            Task::Classify => {
                if s.class_label as usize >= cfg.head.n_classes {
                    return Err(Error::InvalidArgument(format!(
                        "class label {} outside [0,{}) for '{}'",
                        s.class_label, cfg.head.n_classes, s.name
                    )));
                }
            }
            Task::Segment => {
                let labels = s.cloud.labels.as_ref().ok_or_else(|| {
                    Error::TaskMismatch(format!("sample '{}' has no part labels", s.name))
                })?;
                if labels.iter().any(|&l| l as usize >= cfg.head.n_parts) {
                    return Err(Error::InvalidArgument(format!(
                        "part label outside [0,{}) for '{}'",
                        cfg.head.n_parts, s.name
                    )));
                }
            }
            Task::Complete => {}
        }
    }
    Ok(())
}

fn train_step(
    model: &mut Model,
    adam: &mut Adam,
    batch: &[usize],
    samples: &[Sample],
    partitions: &[Vec<LocalPointSet>],
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    let cfg = model.cfg.clone();
    let mut tape = Tape::new();

    // Vote dropping: a random subset of local sets per example.
    let mut selected: Vec<Vec<LocalPointSet>> = Vec::with_capacity(batch.len());
    for &i in batch {
        let idx = voting::select_training_votes(partitions[i].len(), cfg.max_votes_train, rng)?;
        selected.push(idx.iter().map(|&j| partitions[i][j].clone()).collect());
    }
    let parts: Vec<&[LocalPointSet]> = selected.iter().map(|v| v.as_slice()).collect();
    let enc = model
        .encoder
        .forward(&mut tape, &mut model.store, &parts, true, rng)?;
    let z = tape.pog_combine(enc.mu, enc.var, &enc.vote_ranges);

    let loss = match cfg.task {
        Task::Classify => {
            let head = model.classify.as_ref().unwrap();
            let logits = head.forward(&mut tape, &model.store, z, true, rng)?;
            let targets: Vec<usize> = batch.iter().map(|&i| samples[i].class_label as usize).collect();
            tape.softmax_cross_entropy(logits, &targets)?
        }
        Task::Segment => {
            let head = model.segment.as_ref().unwrap();
            let mut losses = Vec::with_capacity(batch.len());
            for (row, &i) in batch.iter().enumerate() {
                let s = &samples[i];
                let category = cfg.head.include_category.then_some(s.class_label as usize);
                let logits =
                    head.forward_example(&mut tape, &model.store, z, row, &s.cloud, category, true, rng)?;
                let targets: Vec<usize> = s
                    .cloud
                    .labels
                    .as_ref()
                    .unwrap()
                    .iter()
                    .map(|&l| l as usize)
                    .collect();
                losses.push(tape.softmax_cross_entropy(logits, &targets)?);
            }
            let total = tape.add_n(&losses);
            tape.scale(total, 1.0 / batch.len() as f64)
        }
        Task::Complete => {
            let head = model.fold.as_ref().unwrap();
            let mut losses = Vec::with_capacity(batch.len());
            for (row, &i) in batch.iter().enumerate() {
                let pred = head.forward_example(&mut tape, &model.store, z, row)?;
                let target = cloud_matrix(&samples[i].cloud);
                losses.push(tape.chamfer_loss(pred, target));
            }
            let total = tape.add_n(&losses);
            tape.scale(total, 1.0 / batch.len() as f64)
        }
    };

    let loss_value = tape.value(loss)[[0, 0]];
    if !loss_value.is_finite() {
        return Err(Error::Numerical(format!(
            "non-finite loss {loss_value}; {} non-finite parameter values in store",
            model.store.non_finite_count()
        )));
    }
    tape.backward(loss)?;
    if tape.has_non_finite() {
        return Err(Error::Numerical(format!(
            "non-finite gradients; {} non-finite parameter values in store",
            model.store.non_finite_count()
        )));
    }
    tape.accumulate_param_grads(&mut model.store);
    adam.step(&mut model.store)?;
    Ok(loss_value)
}

fn cloud_matrix(cloud: &PointCloud) -> Matrix {
    let mut m = Matrix::zeros((cloud.len(), 3));
    for (r, p) in cloud.points.iter().enumerate() {
        for k in 0..3 {
            m[[r, k]] = p[k];
        }
    }
    m
}

/// Evaluation results. `overall` is the task's headline number (accuracy,
/// mIoU or Chamfer ×10⁴) and `per_class` its per-class breakdown.
#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    pub metric_name: String,
    pub overall: f64,
    pub per_class: Vec<(String, f64)>,
    /// Per-point accuracy (segmentation only).
    pub point_accuracy: Option<f64>,
    /// Identity-partial baseline Chamfer ×10⁴ (completion only).
    pub baseline: Option<f64>,
}

impl Metrics {
    /// One header row, one row per class, then "overall" (and any extras).
    pub fn to_csv(&self) -> String {
        let mut s = format!("class,{}\n", self.metric_name);
        for (name, v) in &self.per_class {
            s.push_str(&format!("{name},{v:.6}\n"));
        }
        s.push_str(&format!("overall,{:.6}\n", self.overall));
        if let Some(acc) = self.point_accuracy {
            s.push_str(&format!("point_accuracy,{acc:.6}\n"));
        }
        if let Some(b) = self.baseline {
            s.push_str(&format!("baseline_identity,{b:.6}\n"));
        }
        s
    }
}

pub fn loss_curve_csv(curve: &[f64]) -> String {
    let mut s = String::from("epoch,loss\n");
    for (i, l) in curve.iter().enumerate() {
        s.push_str(&format!("{i},{l:.6}\n"));
    }
    s
}

/// How per-cloud votes are fused into one latent at evaluation time.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Aggregation {
    Voting,
    Max,
    Mean,
}

impl Aggregation {
    pub fn as_str(&self) -> &'static str {
        match self {
            Aggregation::Voting => "voting",
            Aggregation::Max => "max",
            Aggregation::Mean => "mean",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "voting" => Ok(Aggregation::Voting),
            "max" => Ok(Aggregation::Max),
            "mean" => Ok(Aggregation::Mean),
            other => Err(Error::Config(format!(
                "unknown aggregation '{other}' (expected voting|max|mean)"
            ))),
        }
    }
}

fn fuse_votes(votes: Vec<VoteDistribution>, aggregation: Aggregation) -> Result<Vec<f64>> {
    match aggregation {
        Aggregation::Voting => Ok(voting::optimal_latent(&LatentPosterior::new(votes)?)),
        Aggregation::Max | Aggregation::Mean => {
            let feats: Vec<Vec<f64>> = votes.into_iter().map(|v| v.mean).collect();
            let mode = if aggregation == Aggregation::Max {
                PoolMode::Max
            } else {
                PoolMode::Mean
            };
            voting::aggregate_baseline(&feats, mode)
        }
    }
}

/// Worker-count cap from PSV_THREADS (defaults to the machine's available
/// parallelism). Results are re-assembled in index order, so thread count
/// never changes output.
fn thread_count(n_items: usize) -> usize {
    let n = std::env::var("PSV_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&v| v >= 1)
        .unwrap_or_else(|| {
            std::thread::available_parallelism().map_or(1, |p| p.get())
        });
    n.min(n_items).max(1)
}

fn parallel_map<T, F>(n: usize, f: F) -> Vec<Result<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync,
{
    let workers = thread_count(n);
    if workers <= 1 {
        return (0..n).map(&f).collect();
    }
    let mut out: Vec<Option<Result<T>>> = (0..n).map(|_| None).collect();
    let next = std::sync::atomic::AtomicUsize::new(0);
    let slots = std::sync::Mutex::new(&mut out);
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                if i >= n {
                    break;
                }
                let r = f(i);
                slots.lock().unwrap()[i] = Some(r);
            });
        }
    });
    out.into_iter().map(|r| r.unwrap()).collect()
}

#[allow(clippy::too_many_arguments)]
fn classification_predictions(
    model: &Model,
    samples: &[Sample],
    votes_test: Option<usize>,
    aggregation: Aggregation,
    partial: bool,
    seed: u64,
) -> Result<Vec<usize>> {
    let head = model
        .classify
        .as_ref()
        .ok_or_else(|| Error::TaskMismatch("checkpoint has no classification head".into()))?;
    parallel_map(samples.len(), |i| {
        let s = &samples[i];
        let cloud = if partial {
            simulate_plane_cut(&s.cloud, 32, seed.wrapping_add(i as u64))?.0
        } else {
            s.cloud.clone()
        };
        let votes = model.votes_for_cloud(&cloud, votes_test, seed.wrapping_add(i as u64))?;
        let z = fuse_votes(votes, aggregation)?;
        let logits = head.eval(&model.store, &z)?;
        Ok(argmax(&logits))
    })
    .into_iter()
    .collect()
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for i in 1..v.len() {
        if v[i] > v[best] {
            best = i;
        }
    }
    best
}

/// Overall plus per-class accuracy from predictions.
pub fn classification_metrics(
    preds: &[usize],
    labels: &[u32],
    class_names: &[String],
) -> Metrics {
    let mut correct = 0usize;
    let mut per_class = vec![(0usize, 0usize); class_names.len()];
    for (&p, &l) in preds.iter().zip(labels) {
        per_class[l as usize].1 += 1;
        if p == l as usize {
            correct += 1;
            per_class[l as usize].0 += 1;
        }
    }
    Metrics {
        metric_name: "accuracy".into(),
        overall: correct as f64 / preds.len().max(1) as f64,
        per_class: class_names
            .iter()
            .zip(&per_class)
            .map(|(n, &(c, t))| (n.clone(), if t == 0 { 0.0 } else { c as f64 / t as f64 }))
            .collect(),
        point_accuracy: None,
        baseline: None,
    }
}

pub fn evaluate_classification(
    model: &Model,
    samples: &[Sample],
    class_names: &[String],
    votes_test: Option<usize>,
    partial: bool,
    seed: u64,
) -> Result<Metrics> {
    if model.cfg.task != Task::Classify {
        return Err(Error::TaskMismatch(format!(
            "checkpoint task is '{}', expected 'classify'",
            model.cfg.task.as_str()
        )));
    }
    if samples.is_empty() {
        return Err(Error::InvalidArgument("empty evaluation set".into()));
    }
    let preds =
        classification_predictions(model, samples, votes_test, Aggregation::Voting, partial, seed)?;
    let labels: Vec<u32> = samples.iter().map(|s| s.class_label).collect();
    Ok(classification_metrics(&preds, &labels, class_names))
}

/// Per-shape IoU averaged over the given part set; parts absent from both
/// prediction and ground truth count as 1.
pub fn shape_iou(pred: &[usize], gt: &[usize], parts: &[usize]) -> f64 {
    let mut total = 0.0;
    for &part in parts {
        let mut inter = 0usize;
        let mut union = 0usize;
        for (&p, &g) in pred.iter().zip(gt) {
            let in_p = p == part;
            let in_g = g == part;
            if in_p && in_g {
                inter += 1;
            }
            if in_p || in_g {
                union += 1;
            }
        }
        total += if union == 0 { 1.0 } else { inter as f64 / union as f64 };
    }
    total / parts.len().max(1) as f64
}

pub fn evaluate_segmentation(
    model: &Model,
    samples: &[Sample],
    class_names: &[String],
    votes_test: Option<usize>,
    seed: u64,
) -> Result<Metrics> {
    if model.cfg.task != Task::Segment {
        return Err(Error::TaskMismatch(format!(
            "checkpoint task is '{}', expected 'segment'",
            model.cfg.task.as_str()
        )));
    }
    if samples.is_empty() {
        return Err(Error::InvalidArgument("empty evaluation set".into()));
    }
    let head = model.segment.as_ref().unwrap();

    // The part vocabulary of each class is whatever its ground truth uses.
    let mut class_parts: Vec<Vec<usize>> = vec![Vec::new(); class_names.len()];
    for s in samples {
        let labels = s.cloud.labels.as_ref().ok_or_else(|| {
            Error::TaskMismatch(format!("sample '{}' has no part labels", s.name))
        })?;
        let parts = &mut class_parts[s.class_label as usize];
        for &l in labels {
            if !parts.contains(&(l as usize)) {
                parts.push(l as usize);
            }
        }
    }
    for parts in class_parts.iter_mut() {
        parts.sort_unstable();
    }

    let results = parallel_map(samples.len(), |i| {
        let s = &samples[i];
        let category = model.cfg.head.include_category.then_some(s.class_label as usize);
        let z = model.latent_for_cloud(&s.cloud, votes_test, seed.wrapping_add(i as u64))?;
        let pred = head.eval(&model.store, &z, &s.cloud, category)?;
        let gt: Vec<usize> = s.cloud.labels.as_ref().unwrap().iter().map(|&l| l as usize).collect();
        let iou = shape_iou(&pred, &gt, &class_parts[s.class_label as usize]);
        let correct = pred.iter().zip(&gt).filter(|(p, g)| p == g).count();
        Ok((s.class_label as usize, iou, correct, gt.len()))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    let mut per_class_sum = vec![(0.0, 0usize); class_names.len()];
    let mut correct = 0usize;
    let mut total = 0usize;
    for (class, iou, c, n) in results {
        per_class_sum[class].0 += iou;
        per_class_sum[class].1 += 1;
        correct += c;
        total += n;
    }
    let per_class: Vec<(String, f64)> = class_names
        .iter()
        .zip(&per_class_sum)
        .filter(|(_, (_, n))| *n > 0)
        .map(|(name, &(sum, n))| (name.clone(), sum / n as f64))
        .collect();
    let miou = per_class.iter().map(|(_, v)| v).sum::<f64>() / per_class.len().max(1) as f64;
    Ok(Metrics {
        metric_name: "miou".into(),
        overall: miou,
        per_class,
        point_accuracy: Some(correct as f64 / total.max(1) as f64),
        baseline: None,
    })
}

pub fn evaluate_completion(
    model: &Model,
    samples: &[Sample],
    class_names: &[String],
    votes_test: Option<usize>,
    seed: u64,
) -> Result<Metrics> {
    if model.cfg.task != Task::Complete {
        return Err(Error::TaskMismatch(format!(
            "checkpoint task is '{}', expected 'complete'",
            model.cfg.task.as_str()
        )));
    }
    if samples.is_empty() {
        return Err(Error::InvalidArgument("empty evaluation set".into()));
    }
    let head = model.fold.as_ref().unwrap();
    let results = parallel_map(samples.len(), |i| {
        let s = &samples[i];
        let complete = s.complete.as_ref().ok_or_else(|| {
            Error::InvalidArgument(format!("sample '{}' has no paired complete cloud", s.name))
        })?;
        let z = model.latent_for_cloud(&s.cloud, votes_test, seed.wrapping_add(i as u64))?;
        let pred = head.eval(&model.store, &z)?;
        let cd = chamfer_distance(&pred, complete)? * 1e4;
        let baseline = chamfer_distance(&s.cloud, complete)? * 1e4;
        Ok((s.class_label as usize, cd, baseline))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    let mut per_class_sum = vec![(0.0, 0usize); class_names.len()];
    let mut cd_sum = 0.0;
    let mut baseline_sum = 0.0;
    for &(class, cd, b) in &results {
        per_class_sum[class].0 += cd;
        per_class_sum[class].1 += 1;
        cd_sum += cd;
        baseline_sum += b;
    }
    Ok(Metrics {
        metric_name: "cd_e4".into(),
        overall: cd_sum / results.len() as f64,
        per_class: class_names
            .iter()
            .zip(&per_class_sum)
            .filter(|(_, (_, n))| *n > 0)
            .map(|(name, &(sum, n))| (name.clone(), sum / n as f64))
            .collect(),
        point_accuracy: None,
        baseline: Some(baseline_sum / results.len() as f64),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub votes: usize,
    pub aggregation: Aggregation,
    pub value: f64,
}

/// Classification accuracy per (vote count, aggregation) cell.
#[allow(clippy::too_many_arguments)]
pub fn sweep_votes(
    model: &Model,
    samples: &[Sample],
    vote_counts: &[usize],
    aggregations: &[Aggregation],
    partial: bool,
    seed: u64,
) -> Result<Vec<SweepRow>> {
    if model.cfg.task != Task::Classify {
        return Err(Error::TaskMismatch("vote sweeps need a classification checkpoint".into()));
    }
    let labels: Vec<u32> = samples.iter().map(|s| s.class_label).collect();
    let mut rows = Vec::with_capacity(vote_counts.len() * aggregations.len());
    for &votes in vote_counts {
        for &agg in aggregations {
            let preds =
                classification_predictions(model, samples, Some(votes), agg, partial, seed)?;
            let correct = preds.iter().zip(&labels).filter(|(&p, &l)| p == l as usize).count();
            rows.push(SweepRow {
                votes,
                aggregation: agg,
                value: correct as f64 / preds.len().max(1) as f64,
            });
        }
    }
    Ok(rows)
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from("votes,aggregation,accuracy\n");
    for r in rows {
        s.push_str(&format!("{},{},{:.6}\n", r.votes, r.aggregation.as_str(), r.value));
    }
    s
}

/// Deterministic completion of one (already normalized) cloud.
pub fn complete_cloud(model: &Model, cloud: &PointCloud, seed: u64) -> Result<PointCloud> {
    let head = model
        .fold
        .as_ref()
        .ok_or_else(|| Error::TaskMismatch("checkpoint has no completion head".into()))?;
    let z = model.latent_for_cloud(cloud, model.cfg.votes_test, seed)?;
    head.eval(&model.store, &z)
}

/// `steps` completions interpolating from the all-vote optimum (t=0) to the
/// chosen single vote (t=1); element 0 equals [`complete_cloud`].
pub fn complete_diverse(
    model: &Model,
    cloud: &PointCloud,
    vote_index: usize,
    steps: usize,
    seed: u64,
) -> Result<Vec<PointCloud>> {
    let head = model
        .fold
        .as_ref()
        .ok_or_else(|| Error::TaskMismatch("checkpoint has no completion head".into()))?;
    let votes = model.votes_for_cloud(cloud, model.cfg.votes_test, seed)?;
    let posterior = LatentPosterior::new(votes)?;
    let latents = voting::interpolated_latents(&posterior, vote_index, steps)?;
    latents.iter().map(|z| head.eval(&model.store, z)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::generate_toy_dataset;
    use rand::Rng;

    fn tiny_cfg(task: Task) -> TrainConfig {
        let mut cfg = TrainConfig::toy(task);
        cfg.encoder.latent_dim = 16;
        cfg.encoder.point_mlp = vec![16, 16];
        cfg.encoder.vote_mlp = vec![16];
        cfg.encoder.n_sets = 8;
        cfg.head.hidden = vec![16];
        cfg.head.fold_hidden = vec![16];
        cfg.head.output_points = 64;
        cfg.head.n_parts = 2;
        cfg.epochs = 1;
        cfg.batch_size = 4;
        cfg
    }

    fn tiny_dataset(n_per_class: usize, seed: u64) -> Vec<Sample> {
        generate_toy_dataset(n_per_class, 96, 0.01, seed).unwrap()
    }

    #[test]
    fn config_text_round_trip() {
        let mut cfg = TrainConfig::toy(Task::Segment);
        cfg.votes_test = Some(7);
        cfg.lr = 5e-4;
        let back = TrainConfig::from_text(&cfg.to_text()).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn config_rejects_unknown_key_with_line() {
        let mut cfg = TrainConfig::toy(Task::Classify);
        let err = cfg.apply_text("epochs=3\nbogus_key=1\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 2"), "{msg}");
        assert!(msg.contains("bogus_key"), "{msg}");
    }

    #[test]
    fn config_rejects_bad_value_and_missing_equals() {
        let mut cfg = TrainConfig::toy(Task::Classify);
        assert!(cfg.apply_text("epochs=banana\n").is_err());
        assert!(cfg.apply_text("just a line\n").is_err());
    }

    #[test]
    fn train_smoke_and_checkpoint_round_trip() {
        let samples = tiny_dataset(2, 3);
        let cfg = tiny_cfg(Task::Classify);
        let out = train(&cfg, &samples).unwrap();
        let names = crate::data::toy_class_names();
        let m1 = evaluate_classification(&out.model, &samples, &names, None, false, 9).unwrap();

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        out.model.save(&path, cfg.epochs as u32, &m1.to_csv(), Some(&out.optimizer)).unwrap();
        let (loaded, file) = Model::load(&path).unwrap();
        assert_eq!(file.epoch, cfg.epochs as u32);
        assert_eq!(loaded.cfg, cfg);
        let m2 = evaluate_classification(&loaded, &samples, &names, None, false, 9).unwrap();
        assert_eq!(m1, m2, "checkpoint round trip must not change evaluation");
    }

    #[test]
    fn training_is_deterministic() {
        let samples = tiny_dataset(2, 5);
        let cfg = tiny_cfg(Task::Classify);
        let a = train(&cfg, &samples).unwrap();
        let b = train(&cfg, &samples).unwrap();
        assert_eq!(a.loss_curve, b.loss_curve);
    }

    #[test]
    fn classification_loss_decreases() {
        let samples = generate_toy_dataset(20, 256, 0.01, 7).unwrap();
        let mut cfg = TrainConfig::toy(Task::Classify);
        cfg.batch_size = 4;
        cfg.epochs = 30;
        let out = train(&cfg, &samples).unwrap();
        let first = out.loss_curve[0];
        // vote dropping keeps single steps noisy, so compare a small tail
        let tail = &out.loss_curve[out.loss_curve.len() - 3..];
        let last = tail.iter().sum::<f64>() / tail.len() as f64;
        assert!(
            last < 0.5 * first,
            "loss did not halve: {first} -> {last}"
        );
    }

    #[test]
    fn completion_smoke_runs() {
        let samples: Vec<Sample> = tiny_dataset(1, 11).into_iter().take(2).collect();
        let cfg = tiny_cfg(Task::Complete);
        let out = train(&cfg, &samples).unwrap();
        let pred = complete_cloud(&out.model, &samples[0].cloud, 3).unwrap();
        assert_eq!(pred.len(), cfg.head.output_points);
    }

    #[test]
    fn segmentation_smoke_and_task_mismatch() {
        let samples: Vec<Sample> = tiny_dataset(1, 13)
            .into_iter()
            .filter(|s| s.cloud.labels.as_ref().unwrap().iter().all(|&l| l < 2))
            .collect();
        let cfg = tiny_cfg(Task::Segment);
        let out = train(&cfg, &samples).unwrap();
        let names = crate::data::toy_class_names();
        let m = evaluate_segmentation(&out.model, &samples, &names, None, 1).unwrap();
        assert!(m.overall >= 0.0 && m.overall <= 1.0);
        assert!(m.point_accuracy.is_some());
        assert!(matches!(
            evaluate_classification(&out.model, &samples, &names, None, false, 1),
            Err(Error::TaskMismatch(_))
        ));
    }

    #[test]
    fn classification_metrics_perfect_predictor() {
        let labels = vec![0u32, 1, 1, 0];
        let preds = vec![0usize, 1, 1, 0];
        let names = vec!["a".to_string(), "b".to_string()];
        let m = classification_metrics(&preds, &labels, &names);
        assert_eq!(m.overall, 1.0);
        assert_eq!(m.per_class, vec![("a".into(), 1.0), ("b".into(), 1.0)]);
    }

    #[test]
    fn metrics_csv_has_overall_row() {
        let m = Metrics {
            metric_name: "accuracy".into(),
            overall: 0.5,
            per_class: vec![("box".into(), 0.25)],
            point_accuracy: None,
            baseline: None,
        };
        let csv = m.to_csv();
        assert_eq!(csv, "class,accuracy\nbox,0.250000\noverall,0.500000\n");
    }

    #[test]
    fn shape_iou_identity_and_complement() {
        let gt = vec![0usize, 0, 1, 1];
        assert_eq!(shape_iou(&gt, &gt, &[0, 1]), 1.0);
        let complement = vec![1usize, 1, 0, 0];
        assert_eq!(shape_iou(&complement, &gt, &[0, 1]), 0.0);
        // part absent from both counts as 1
        assert_eq!(shape_iou(&gt, &gt, &[0, 1, 2]), 1.0);
    }

    #[test]
    fn random_prediction_iou_matches_monte_carlo() {
        // Balanced 2-part shapes with uniform random predictions: the
        // expected per-shape IoU is near 1/3.
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n_points = 200;
        let gt: Vec<usize> = (0..n_points).map(|i| i % 2).collect();
        let mut total = 0.0;
        let trials = 2000;
        for _ in 0..trials {
            let pred: Vec<usize> = (0..n_points).map(|_| rng.gen_range(0..2)).collect();
            total += shape_iou(&pred, &gt, &[0, 1]);
        }
        let mean = total / trials as f64;
        assert!((mean - 1.0 / 3.0).abs() < 0.02, "mean random IoU {mean}");
    }

    #[test]
    fn sweep_grid_dimensions() {
        let samples: Vec<Sample> = tiny_dataset(1, 17).into_iter().take(4).collect();
        let cfg = tiny_cfg(Task::Classify);
        let out = train(&cfg, &samples).unwrap();
        let rows = sweep_votes(
            &out.model,
            &samples,
            &[1, 4],
            &[Aggregation::Voting, Aggregation::Mean, Aggregation::Max],
            false,
            5,
        )
        .unwrap();
        assert_eq!(rows.len(), 6);
        let csv = sweep_csv(&rows);
        assert_eq!(csv.lines().count(), 7);
        assert!(csv.starts_with("votes,aggregation,accuracy\n"));
    }

    #[test]
    fn diverse_completions_start_at_deterministic_output() {
        let samples: Vec<Sample> = tiny_dataset(1, 19).into_iter().take(2).collect();
        let cfg = tiny_cfg(Task::Complete);
        let out = train(&cfg, &samples).unwrap();
        let base = complete_cloud(&out.model, &samples[0].cloud, 7).unwrap();
        let diverse = complete_diverse(&out.model, &samples[0].cloud, 0, 4, 7).unwrap();
        assert_eq!(diverse.len(), 4);
        assert_eq!(diverse[0], base);
    }

    #[test]
    fn eval_is_independent_of_thread_count() {
        let samples: Vec<Sample> = tiny_dataset(2, 23).into_iter().take(6).collect();
        let cfg = tiny_cfg(Task::Classify);
        let out = train(&cfg, &samples).unwrap();
        let names = crate::data::toy_class_names();
        std::env::set_var("PSV_THREADS", "1");
        let a = evaluate_classification(&out.model, &samples, &names, None, true, 3).unwrap();
        std::env::set_var("PSV_THREADS", "4");
        let b = evaluate_classification(&out.model, &samples, &names, None, true, 3).unwrap();
        std::env::remove_var("PSV_THREADS");
        assert_eq!(a, b);
    }
}
