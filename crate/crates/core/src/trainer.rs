//! The end-to-end training loop, WTA hyperparameter tuning on labelled
//! data, unsupervised clustering and the k-means baseline.
//!
//! One step:
//!
//! ```text
//!   sample N records -> 2N augmented views
//!   forward: z, z_bar, projections, labelled logits, cluster probabilities
//!   ce   on labelled logits
//!   cl   on projections (instance + category, per selector pair)
//!   bce  on cluster probabilities of unlabelled views vs pseudo-labels of detached z_bar
//!   mse  between the two views' predictions
//!   loss = ce + bce + (1 - w) cl + w mse, SGD with momentum
//! ```

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{
    generate_synthetic, read_dataset, sample_batch, AugmentPolicy, BatchSpec, Dataset, EvalSet,
    SyntheticSpec, TrainBatch,
};
use crate::error::{NcdError, Result};
use crate::eval::{clustering_acc, kmeans, KMeansConfig};
use crate::losses::{
    bce_pairwise, contrastive_loss, cross_entropy, joint_weights, mse_consistency, ramp_weight,
    ContrastiveBatch, LossSwitches, LossTerms, ModalitySelectors, RampSchedule,
};
use crate::model::{HeadMode, ModelDims, ModelState};
use crate::numerics::{sgd_momentum_step, Rng, Tape, Tensor, Var};
use crate::pairing::{default_threshold, pairwise_labels, PairLabeler, PairStrategy};

const STREAM_INIT: u64 = 1;
const STREAM_PAIRING: u64 = 2;
const STREAM_BATCHES: u64 = 3;

pub const METRICS_HEADER: &str = "epoch,acc,ce,bce,cl,mse,omega";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Discovery,
    /// Labelled data dropped, cross-entropy off.
    Unsupervised,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    #[default]
    Cosine,
    Constant,
}

/// Everything a run depends on. Dataset-derived fields left unset are
/// filled from the data by [`RunConfig::resolve`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub mode: Mode,
    /// CSV dataset; when unset the synthetic generator is used.
    pub data: Option<PathBuf>,
    pub synthetic: SyntheticSpec,

    pub d_v: Option<usize>,
    pub d_a: Option<usize>,
    pub num_labelled_classes: Option<usize>,
    pub num_unlabelled_classes: Option<usize>,
    pub feature: usize,
    pub fused: usize,
    pub proj_hidden: usize,
    pub proj: usize,
    pub head_u_hidden: Option<usize>,

    pub tau: f64,
    pub lambda: f64,
    pub epochs: usize,
    pub lr: f64,
    pub lr_schedule: LrSchedule,
    pub momentum: f64,
    /// L2 penalty added to every gradient before the SGD step.
    pub weight_decay: f64,
    pub batch_size: usize,
    /// `None` samples records uniformly from both splits.
    pub labelled_fraction: Option<f64>,
    pub augment: AugmentPolicy,

    pub strategy: PairStrategy,
    /// Defaults to visual->audio on two-modality data, visual->visual otherwise.
    pub instance_selectors: Option<Vec<ModalitySelectors>>,
    pub category_selectors: Option<Vec<ModalitySelectors>>,
    pub ablation: LossSwitches,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            mode: Mode::Discovery,
            data: None,
            synthetic: SyntheticSpec::default(),
            d_v: None,
            d_a: None,
            num_labelled_classes: None,
            num_unlabelled_classes: None,
            feature: 64,
            fused: 64,
            proj_hidden: 64,
            proj: 32,
            head_u_hidden: None,
            tau: 0.5,
            lambda: 1.0,
            epochs: 60,
            lr: 0.01,
            lr_schedule: LrSchedule::Cosine,
            momentum: 0.9,
            weight_decay: 0.0,
            batch_size: 64,
            labelled_fraction: None,
            augment: AugmentPolicy::default(),
            strategy: PairStrategy::default(),
            instance_selectors: None,
            category_selectors: None,
            ablation: LossSwitches::default(),
        }
    }
}

fn bad(msg: String) -> NcdError {
    NcdError::Config(msg)
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| bad(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| bad(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| bad(format!("{}: {e}", path.display())))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Checks everything that does not depend on the dataset.
    pub fn validate(&self) -> Result<()> {
        let pos = |v: f64| v > 0.0 && v.is_finite();
        if !pos(self.tau) {
            return Err(bad(format!("tau must be positive, got {}", self.tau)));
        }
        if !pos(self.lambda) {
            return Err(bad(format!("lambda must be positive, got {}", self.lambda)));
        }
        if self.epochs == 0 {
            return Err(bad("epochs must be at least 1".into()));
        }
        if !pos(self.lr) {
            return Err(bad(format!("lr must be positive, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(bad(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            )));
        }
        if !(self.weight_decay >= 0.0) || !self.weight_decay.is_finite() {
            return Err(bad(format!(
                "weight_decay must be non-negative, got {}",
                self.weight_decay
            )));
        }
        if self.batch_size == 0 {
            return Err(bad("batch_size must be at least 1".into()));
        }
        if let Some(f) = self.labelled_fraction {
            if !(0.0..=1.0).contains(&f) {
                return Err(bad(format!(
                    "labelled_fraction must lie in [0, 1], got {f}"
                )));
            }
        }
        if [self.feature, self.fused, self.proj_hidden, self.proj].contains(&0)
            || self.head_u_hidden == Some(0)
        {
            return Err(bad("layer widths must be positive".into()));
        }
        for sels in [&self.instance_selectors, &self.category_selectors]
            .into_iter()
            .flatten()
        {
            if sels.is_empty() {
                return Err(bad(
                    "selector lists must not be empty; disable the loss term instead".into(),
                ));
            }
        }
        self.augment.validate()?;
        self.strategy.validate(self.fused)?;
        Ok(())
    }

    /// Fills dataset-derived fields and checks any that were set explicitly.
    pub fn resolve(&self, ds: &Dataset) -> Result<RunConfig> {
        self.validate()?;
        let mut cfg = self.clone();
        let check = |name: &str, set: Option<usize>, actual: usize| match set {
            Some(v) if v != actual => Err(bad(format!(
                "config {name} = {v} but the dataset has {actual}"
            ))),
            _ => Ok(actual),
        };
        cfg.d_v = Some(check("d_v", self.d_v, ds.d_v())?);
        cfg.d_a = match (self.d_a, ds.d_a()) {
            (Some(c), Some(d)) if c != d => {
                return Err(bad(format!("config d_a = {c} but the dataset has {d}")))
            }
            (Some(_), None) => {
                return Err(bad(
                    "config sets d_a but the dataset has no audio features".into()
                ))
            }
            (_, d) => d,
        };
        cfg.num_labelled_classes = Some(check(
            "num_labelled_classes",
            self.num_labelled_classes,
            ds.num_labelled_classes(),
        )?);
        cfg.num_unlabelled_classes = Some(check(
            "num_unlabelled_classes",
            self.num_unlabelled_classes,
            ds.num_unlabelled_classes(),
        )?);
        let multi = cfg.d_a.is_some();
        if !multi && cfg.fused != cfg.feature {
            log::info!(
                "single-modal data: fused width set to feature width {}",
                cfg.feature
            );
            cfg.fused = cfg.feature;
            cfg.strategy.validate(cfg.fused)?;
        }
        let default_sel = if multi {
            ModalitySelectors::CROSS
        } else {
            ModalitySelectors::VISUAL
        };
        for sels in [&mut cfg.instance_selectors, &mut cfg.category_selectors] {
            let list = sels.get_or_insert_with(|| vec![default_sel]);
            if !multi && list.iter().any(|s| *s != ModalitySelectors::VISUAL) {
                return Err(bad("audio selectors need two-modality data".into()));
            }
        }
        Ok(cfg)
    }

    /// Model shape of a resolved config.
    pub fn model_dims(&self) -> Result<ModelDims> {
        let need =
            |name: &str, v: Option<usize>| v.ok_or_else(|| bad(format!("{name} is unresolved")));
        let dims = ModelDims {
            d_v: need("d_v", self.d_v)?,
            d_a: self.d_a,
            feature: self.feature,
            fused: self.fused,
            proj_hidden: self.proj_hidden,
            proj: self.proj,
            num_labelled: need("num_labelled_classes", self.num_labelled_classes)?,
            num_unlabelled: need("num_unlabelled_classes", self.num_unlabelled_classes)?,
            head_u_hidden: self.head_u_hidden,
        };
        dims.validate()?;
        Ok(dims)
    }

    /// Reads `data`, or generates the synthetic set with this config's seed
    /// when no path is given.
    pub fn load_dataset(&self) -> Result<Dataset> {
        match &self.data {
            Some(p) => {
                if !p.exists() {
                    return Err(bad(format!("dataset {} does not exist", p.display())));
                }
                read_dataset(p)
            }
            None => generate_synthetic(&self.synthetic),
        }
    }
}

/// Per-epoch record: unlabelled-set ACC, mean loss terms and ramp value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub acc: f64,
    pub terms: LossTerms,
    pub omega: f64,
}

pub fn metrics_csv(history: &[EpochMetrics]) -> String {
    let mut s = String::from(METRICS_HEADER);
    s.push('\n');
    for m in history {
        let t = m.terms;
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            m.epoch, m.acc, t.ce, t.bce, t.cl, t.mse, m.omega
        );
    }
    s
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: ModelState,
    pub config: RunConfig,
    pub history: Vec<EpochMetrics>,
}

impl TrainOutcome {
    pub fn final_acc(&self) -> Option<f64> {
        self.history.last().map(|m| m.acc)
    }

    /// Writes `config.json`, `metrics.csv` and `final.ckpt` into `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| NcdError::io(dir, e))?;
        let write = |name: &str, bytes: &[u8]| {
            let p = dir.join(name);
            std::fs::write(&p, bytes).map_err(|e| NcdError::io(p, e))
        };
        write("config.json", self.config.to_json().as_bytes())?;
        write("metrics.csv", metrics_csv(&self.history).as_bytes())?;
        self.model.save(&dir.join("final.ckpt"))
    }
}

/// ACC of the model's cluster assignments on an evaluation set.
pub fn evaluate(model: &ModelState, set: &EvalSet) -> Result<f64> {
    let pred = model.predict(&set.visual, set.audio.as_ref())?;
    Ok(clustering_acc(&set.truth, &pred, set.num_classes)?.acc)
}

fn lr_at(cfg: &RunConfig, step: usize, total: usize) -> f64 {
    match cfg.lr_schedule {
        LrSchedule::Constant => cfg.lr,
        LrSchedule::Cosine => {
            0.5 * cfg.lr * (1.0 + (std::f64::consts::PI * step as f64 / total as f64).cos())
        }
    }
}

fn steps_per_epoch(ds: &Dataset, batch: usize) -> usize {
    (ds.len() / batch).max(1)
}

/// Adds every enabled loss for one batch to the tape and returns the root.
fn step_objective(
    cfg: &RunConfig,
    model: &ModelState,
    labeler: &PairLabeler,
    tape: &mut Tape,
    batch: &TrainBatch,
    omega: f64,
) -> Result<(Option<Var>, LossTerms)> {
    let sw = cfg.ablation;
    let labelled = batch.labelled_rows();
    let unlabelled = batch.unlabelled_rows();
    let need_l = (sw.ce && !labelled.is_empty()) || (sw.mse && !labelled.is_empty());
    let heads = if need_l && model.dims().num_labelled > 0 {
        HeadMode::Both
    } else {
        HeadMode::Unlabelled
    };
    let xv = tape.constant(batch.visual.clone());
    let xa = batch.audio.as_ref().map(|a| tape.constant(a.clone()));
    let f = model.forward_on(tape, xv, xa, heads, sw.cl())?;
    let probs = f.probs_u.expect("unlabelled head always runs");

    let mut terms = LossTerms::default();
    let mut parts: Vec<(Var, f64)> = Vec::new();
    let [w_ce, w_bce, w_cl, w_mse] = joint_weights(omega, &sw);

    if sw.ce && !labelled.is_empty() {
        if let Some(logits) = f.logits_l {
            let targets: Vec<usize> = labelled
                .iter()
                .map(|&i| batch.labels[i].expect("labelled row"))
                .collect();
            let sel = tape.select_rows(logits, labelled.clone())?;
            let (v, g) = cross_entropy(tape.value(sel), &targets)?;
            terms.ce = v;
            parts.push((tape.objective(v, vec![sel], vec![g])?, w_ce));
        }
    }

    if sw.cl() {
        let zv = f.zhat_v.expect("projections requested");
        let cb = ContrastiveBatch {
            visual: tape.value(zv),
            audio: f.zhat_a.map(|a| tape.value(a)),
            labels: &batch.labels,
            tau: cfg.tau,
        };
        let inst = cfg.instance_selectors.as_deref().unwrap_or(&[]);
        let cat = cfg.category_selectors.as_deref().unwrap_or(&[]);
        let cl = contrastive_loss(&cb, inst, cat, sw.nce_i, sw.nce_c)?;
        terms.cl = cl.value;
        let mut inputs = vec![zv];
        let mut grads = vec![cl.grad_visual];
        if let (Some(a), Some(g)) = (f.zhat_a, cl.grad_audio) {
            inputs.push(a);
            grads.push(g);
        }
        parts.push((tape.objective(cl.value, inputs, grads)?, w_cl));
    }

    if sw.bce && !unlabelled.is_empty() {
        let z_bar = tape.value(f.z_bar).select_rows(&unlabelled);
        let s = pairwise_labels(labeler, &z_bar)?;
        let sel = tape.select_rows(probs, unlabelled.clone())?;
        let (v, g) = bce_pairwise(tape.value(sel), &s)?;
        terms.bce = v;
        parts.push((tape.objective(v, vec![sel], vec![g])?, w_bce));
    }

    if sw.mse {
        let even = |rows: &[usize]| {
            rows.iter()
                .copied()
                .filter(|r| r % 2 == 0)
                .collect::<Vec<usize>>()
        };
        let groups: Vec<(Var, Vec<usize>)> = {
            let mut g = Vec::new();
            if !unlabelled.is_empty() {
                g.push((probs, even(&unlabelled)));
            }
            if let (Some(logits), false) = (f.logits_l, labelled.is_empty()) {
                let p = tape.softmax(logits)?;
                g.push((p, even(&labelled)));
            }
            g
        };
        let total: usize = groups.iter().map(|(_, r)| r.len()).sum();
        let mut value = 0.0;
        let mut inputs = Vec::new();
        let mut grads = Vec::new();
        for (p, rows) in groups {
            let share = rows.len() as f64 / total as f64;
            let odd: Vec<usize> = rows.iter().map(|r| r + 1).collect();
            let a = tape.select_rows(p, rows)?;
            let b = tape.select_rows(p, odd)?;
            let (v, mut ga, mut gb) = mse_consistency(tape.value(a), tape.value(b))?;
            value += share * v;
            ga.scale(share);
            gb.scale(share);
            inputs.extend([a, b]);
            grads.extend([ga, gb]);
        }
        if !inputs.is_empty() {
            terms.mse = value;
            parts.push((tape.objective(value, inputs, grads)?, w_mse));
        }
    }

    let parts: Vec<(Var, f64)> = parts.into_iter().filter(|(_, w)| *w != 0.0).collect();
    if parts.is_empty() {
        return Ok((None, terms));
    }
    Ok((Some(tape.weighted_sum(parts)?), terms))
}

/// Joint objective of one batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchLoss {
    /// `None` when every term is disabled or absent from the batch.
    pub value: Option<f64>,
    pub terms: LossTerms,
}

/// Evaluates the joint objective of `batch` for ramp value `omega` and adds
/// its gradient into the model's parameter gradients. `cfg` must be
/// resolved against the dataset.
pub fn batch_objective(
    cfg: &RunConfig,
    model: &mut ModelState,
    labeler: &PairLabeler,
    batch: &TrainBatch,
    omega: f64,
) -> Result<BatchLoss> {
    let mut tape = Tape::new();
    let (root, terms) = step_objective(cfg, model, labeler, &mut tape, batch, omega)?;
    let t = terms;
    if [t.ce, t.bce, t.cl, t.mse].iter().any(|v| !v.is_finite()) {
        return Err(NcdError::Numeric(format!(
            "loss diverged: ce={} bce={} cl={} mse={} omega={omega}",
            t.ce, t.bce, t.cl, t.mse
        )));
    }
    let Some(root) = root else {
        return Ok(BatchLoss { value: None, terms });
    };
    let grads = tape.backward(root)?;
    tape.accumulate(&grads, model.params_mut())?;
    Ok(BatchLoss {
        value: Some(tape.scalar(root)),
        terms,
    })
}

/// Shared loop. `eval` is scored after every epoch; without it ACC is NaN.
fn run(cfg: &RunConfig, train_ds: &Dataset, eval: Option<&EvalSet>) -> Result<TrainOutcome> {
    let dims = cfg.model_dims()?;
    let mut model = ModelState::init(dims, &mut Rng::with_stream(cfg.seed, STREAM_INIT))?;
    let labeler = PairLabeler::new(
        &cfg.strategy,
        dims.fused,
        &mut Rng::with_stream(cfg.seed, STREAM_PAIRING),
    )?;
    let mut rng = Rng::with_stream(cfg.seed, STREAM_BATCHES);

    let batch_size = cfg.batch_size.min(train_ds.len());
    if batch_size < cfg.batch_size {
        log::warn!(
            "batch_size {} exceeds the {} available records; using {batch_size}",
            cfg.batch_size,
            train_ds.len()
        );
    }
    let spec = BatchSpec {
        batch_size,
        labelled_fraction: cfg.labelled_fraction,
    };
    let per_epoch = steps_per_epoch(train_ds, batch_size);
    let total_steps = per_epoch * cfg.epochs;
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let omega = ramp_weight(RampSchedule {
            lambda: cfg.lambda,
            total_epochs: cfg.epochs as f64,
            epoch: (epoch + 1) as f64,
        })?;
        let mut sum = LossTerms::default();
        for step in 0..per_epoch {
            let batch = sample_batch(train_ds, &spec, &cfg.augment, &mut rng)?;
            let loss =
                batch_objective(cfg, &mut model, &labeler, &batch, omega).map_err(|e| match e {
                    NcdError::Numeric(m) => {
                        NcdError::Numeric(format!("epoch {epoch} step {step}: {m}"))
                    }
                    e => e,
                })?;
            let t = loss.terms;
            sum.ce += t.ce;
            sum.bce += t.bce;
            sum.cl += t.cl;
            sum.mse += t.mse;
            if loss.value.is_none() {
                continue;
            }
            if cfg.weight_decay > 0.0 {
                for p in model.params_mut() {
                    let wd = cfg.weight_decay;
                    let value = p.value.clone();
                    p.grad
                        .data_mut()
                        .iter_mut()
                        .zip(value.data())
                        .for_each(|(g, w)| *g += wd * w);
                }
            }
            let lr = lr_at(cfg, epoch * per_epoch + step, total_steps);
            sgd_momentum_step(model.params_mut(), lr, cfg.momentum)?;
        }
        let k = per_epoch as f64;
        let terms = LossTerms {
            ce: sum.ce / k,
            bce: sum.bce / k,
            cl: sum.cl / k,
            mse: sum.mse / k,
        };
        let acc = match eval {
            Some(set) => evaluate(&model, set)?,
            None => f64::NAN,
        };
        log::debug!(
            "epoch {epoch}: acc={acc:.4} ce={:.4} bce={:.4} cl={:.4} mse={:.4} omega={omega:.4}",
            terms.ce,
            terms.bce,
            terms.cl,
            terms.mse
        );
        history.push(EpochMetrics {
            epoch,
            acc,
            terms,
            omega,
        });
    }
    Ok(TrainOutcome {
        model,
        config: cfg.clone(),
        history,
    })
}

/// Trains on `ds` and scores every epoch on its unlabelled records.
/// Unsupervised mode defers to [`unsupervised_cluster`].
pub fn train(cfg: &RunConfig, ds: &Dataset) -> Result<TrainOutcome> {
    if cfg.mode == Mode::Unsupervised {
        return unsupervised_cluster(cfg, ds);
    }
    if ds.count(crate::data::Split::Unlabelled) == 0 {
        return Err(bad(
            "discovery needs unlabelled records but the dataset has none".into(),
        ));
    }
    let cfg = cfg.resolve(ds)?;
    let eval = ds.eval_set()?;
    run(&cfg, ds, Some(&eval))
}

/// Drops labelled records and trains with cross-entropy disabled. The
/// category term sees no labels and contributes nothing.
pub fn unsupervised_cluster(cfg: &RunConfig, ds: &Dataset) -> Result<TrainOutcome> {
    let unl = ds.unlabelled_only()?;
    let mut c = cfg.clone();
    c.mode = Mode::Discovery;
    c.ablation.ce = false;
    let mut out = train(&c, &unl)?;
    out.config.mode = Mode::Unsupervised;
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineReport {
    pub acc: f64,
    pub inertia: f64,
}

/// k-means on fused features of a network trained with cross-entropy on
/// labelled records only.
pub fn kmeans_baseline(cfg: &RunConfig, ds: &Dataset) -> Result<BaselineReport> {
    let cfg = cfg.resolve(ds)?;
    if cfg.num_labelled_classes == Some(0) {
        return Err(bad("the k-means baseline needs labelled classes".into()));
    }
    let eval = ds.eval_set()?;
    let labelled = ds.labelled_only()?;
    let mut c = cfg.clone();
    c.ablation = LossSwitches {
        mse: false,
        ce: true,
        bce: false,
        nce_i: false,
        nce_c: false,
    };
    c.labelled_fraction = None;
    let out = run(&c, &labelled, None)?;
    let feats = out.model.forward(
        &eval.visual,
        eval.audio.as_ref(),
        HeadMode::Unlabelled,
        false,
    )?;
    let km = kmeans(
        &feats.z_bar,
        eval.num_classes,
        &KMeansConfig::default(),
        cfg.seed,
    )?;
    let acc = clustering_acc(&eval.truth, &km.labels, eval.num_classes)?.acc;
    Ok(BaselineReport {
        acc,
        inertia: km.inertia,
    })
}

/// k-means directly on the raw (concatenated) input features.
pub fn kmeans_raw(ds: &Dataset, seed: u64) -> Result<f64> {
    let eval = ds.eval_set()?;
    let x = match &eval.audio {
        Some(a) => crate::numerics::ops::concat_cols(&eval.visual, a)?,
        None => eval.visual.clone(),
    };
    let km = kmeans(&x, eval.num_classes, &KMeansConfig::default(), seed)?;
    Ok(clustering_acc(&eval.truth, &km.labels, eval.num_classes)?.acc)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TuneRow {
    pub threshold: usize,
    pub window: usize,
    pub acc: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TuneReport {
    pub rows: Vec<TuneRow>,
    pub threshold: usize,
    pub window: usize,
}

impl TuneReport {
    pub fn best_acc(&self) -> f64 {
        self.rows
            .iter()
            .map(|r| r.acc)
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Default threshold grid: fractions of the code length around the
/// default ratio.
pub fn default_mu_grid(code_len: usize) -> Vec<usize> {
    let mut g: Vec<usize> = [0.25, 0.35, 0.469, 0.6, 0.75]
        .iter()
        .map(|r| (r * code_len as f64).round() as usize)
        .chain(std::iter::once(default_threshold(code_len)))
        .collect();
    g.sort_unstable();
    g.dedup();
    g
}

pub const DEFAULT_K_GRID: [usize; 3] = [2, 4, 8];

/// Grid search over WTA threshold and window on labelled data: the last
/// `cfg.num_unlabelled_classes` labelled classes are treated as unlabelled,
/// a short run is trained per cell and scored on them. Ties go to the
/// smaller threshold, then the smaller window.
pub fn tune_wta(
    cfg: &RunConfig,
    ds: &Dataset,
    mu_grid: &[usize],
    k_grid: &[usize],
) -> Result<TuneReport> {
    if mu_grid.is_empty() || k_grid.is_empty() {
        return Err(bad("tuning grids must not be empty".into()));
    }
    let pseudo = cfg.num_unlabelled_classes.ok_or_else(|| {
        bad("tune_wta needs num_unlabelled_classes to size the pseudo-unlabelled split".into())
    })?;
    let split = ds.pseudo_unlabelled_split(pseudo)?;
    let code_len = match cfg.strategy {
        PairStrategy::Wta { code_len, .. } => code_len,
        _ => None,
    };
    let mut base = cfg.clone();
    base.num_labelled_classes = None;
    base.num_unlabelled_classes = None;
    base.mode = Mode::Discovery;

    let mut rows = Vec::with_capacity(mu_grid.len() * k_grid.len());
    for &mu in mu_grid {
        for &k in k_grid {
            let mut c = base.clone();
            c.strategy = PairStrategy::Wta {
                code_len,
                window: k,
                threshold: Some(mu),
            };
            let out = train(&c, &split)?;
            let acc = out.final_acc().expect("at least one epoch");
            log::info!("tune_wta mu={mu} k={k}: acc={acc:.4}");
            rows.push(TuneRow {
                threshold: mu,
                window: k,
                acc,
            });
        }
    }
    let best = best_row(&rows).expect("grid is non-empty");
    Ok(TuneReport {
        threshold: best.threshold,
        window: best.window,
        rows,
    })
}

/// Highest ACC; ties to the smaller threshold, then the smaller window.
pub fn best_row(rows: &[TuneRow]) -> Option<&TuneRow> {
    rows.iter().min_by(|a, b| {
        b.acc
            .total_cmp(&a.acc)
            .then(a.threshold.cmp(&b.threshold))
            .then(a.window.cmp(&b.window))
    })
}

/// Cluster probabilities of every unlabelled record, for inspection.
pub fn cluster_probs(model: &ModelState, set: &EvalSet) -> Result<Tensor> {
    let out = model.forward(&set.visual, set.audio.as_ref(), HeadMode::Unlabelled, false)?;
    Ok(out.probs_u.expect("unlabelled head requested"))
}
