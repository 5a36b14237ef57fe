//! Synthetic two-modality datasets, augmentation, batch sampling and the
//! CSV dataset format.
//!
//! Unlabelled records keep their ground-truth class for evaluation, but the
//! only way to reach it is [`Dataset::eval_set`]; batches built for training
//! see labels of labelled records only.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{NcdError, Result};
use crate::numerics::{Rng, Tensor};

/// Stream ids for the data generator and augmentation draws.
pub const STREAM_SYNTH: u64 = 0x5ee0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Labelled,
    Unlabelled,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Labelled => "labelled",
            Split::Unlabelled => "unlabelled",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub id: u64,
    pub split: Split,
    /// Class id; `None` for unlabelled records with unknown ground truth.
    label: Option<usize>,
    pub visual: Vec<f64>,
    pub audio: Option<Vec<f64>>,
}

impl Record {
    pub fn new(
        id: u64,
        split: Split,
        label: Option<usize>,
        visual: Vec<f64>,
        audio: Option<Vec<f64>>,
    ) -> Self {
        Record {
            id,
            split,
            label,
            visual,
            audio,
        }
    }

    /// The label as training code may see it.
    pub fn train_label(&self) -> Option<usize> {
        match self.split {
            Split::Labelled => self.label,
            Split::Unlabelled => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    records: Vec<Record>,
    num_labelled_classes: usize,
    num_unlabelled_classes: usize,
    d_v: usize,
    d_a: Option<usize>,
}

/// Unlabelled inputs with ground truth remapped to `0..num_classes`.
#[derive(Debug, Clone)]
pub struct EvalSet {
    pub visual: Tensor,
    pub audio: Option<Tensor>,
    pub truth: Vec<usize>,
    pub num_classes: usize,
}

impl Dataset {
    /// Validates records and class counts. Labelled classes occupy
    /// `0..num_labelled`, unlabelled ground truth `num_labelled..num_labelled+num_unlabelled`.
    pub fn new(records: Vec<Record>, num_labelled: usize, num_unlabelled: usize) -> Result<Self> {
        let first = records
            .first()
            .ok_or_else(|| NcdError::Input("dataset has no records".into()))?;
        let d_v = first.visual.len();
        let d_a = first.audio.as_ref().map(Vec::len);
        if d_v == 0 || d_a == Some(0) {
            return Err(NcdError::Input(
                "records need at least one feature per modality".into(),
            ));
        }
        for r in &records {
            if r.visual.len() != d_v || r.audio.as_ref().map(Vec::len) != d_a {
                return Err(NcdError::Input(format!(
                    "record {} has inconsistent feature widths",
                    r.id
                )));
            }
            if r.visual
                .iter()
                .chain(r.audio.iter().flatten())
                .any(|v| !v.is_finite())
            {
                return Err(NcdError::Input(format!(
                    "record {} has non-finite features",
                    r.id
                )));
            }
            let ok = match (r.split, r.label) {
                (Split::Labelled, Some(y)) => y < num_labelled,
                (Split::Labelled, None) => false,
                (Split::Unlabelled, Some(y)) => {
                    (num_labelled..num_labelled + num_unlabelled).contains(&y)
                }
                (Split::Unlabelled, None) => true,
            };
            if !ok {
                return Err(NcdError::Input(format!(
                    "record {} ({}) has label {:?} outside its class range",
                    r.id,
                    r.split.as_str(),
                    r.label
                )));
            }
        }
        Ok(Dataset {
            records,
            num_labelled_classes: num_labelled,
            num_unlabelled_classes: num_unlabelled,
            d_v,
            d_a,
        })
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn num_labelled_classes(&self) -> usize {
        self.num_labelled_classes
    }

    pub fn num_unlabelled_classes(&self) -> usize {
        self.num_unlabelled_classes
    }

    pub fn d_v(&self) -> usize {
        self.d_v
    }

    pub fn d_a(&self) -> Option<usize> {
        self.d_a
    }

    pub fn count(&self, split: Split) -> usize {
        self.records.iter().filter(|r| r.split == split).count()
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.records.len())
            .filter(|&i| self.records[i].split == split)
            .collect()
    }

    fn filtered(&self, keep: Split, num_l: usize, num_u: usize) -> Option<Dataset> {
        let records: Vec<Record> = self
            .records
            .iter()
            .filter(|r| r.split == keep)
            .cloned()
            .collect();
        if records.is_empty() {
            return None;
        }
        Some(Dataset {
            records,
            num_labelled_classes: num_l,
            num_unlabelled_classes: num_u,
            d_v: self.d_v,
            d_a: self.d_a,
        })
    }

    /// Drops every unlabelled record.
    pub fn labelled_only(&self) -> Result<Dataset> {
        self.filtered(Split::Labelled, self.num_labelled_classes, 0)
            .ok_or_else(|| NcdError::Input("dataset has no labelled records".into()))
    }

    /// Drops every labelled record, keeping the class numbering.
    pub fn unlabelled_only(&self) -> Result<Dataset> {
        self.filtered(
            Split::Unlabelled,
            self.num_labelled_classes,
            self.num_unlabelled_classes,
        )
        .ok_or_else(|| NcdError::Input("dataset has no unlabelled records".into()))
    }

    /// Turns the last `num_pseudo` labelled classes into unlabelled ones so
    /// that discovery can be scored on known classes.
    pub fn pseudo_unlabelled_split(&self, num_pseudo: usize) -> Result<Dataset> {
        let labelled = self.labelled_only()?;
        let total = labelled.num_labelled_classes;
        if num_pseudo == 0 || num_pseudo >= total {
            return Err(NcdError::Config(format!(
                "cannot split {num_pseudo} pseudo-unlabelled classes off {total} labelled classes"
            )));
        }
        let keep = total - num_pseudo;
        let records = labelled
            .records
            .into_iter()
            .map(|mut r| {
                if r.label.is_some_and(|y| y >= keep) {
                    r.split = Split::Unlabelled;
                }
                r
            })
            .collect();
        Dataset::new(records, keep, num_pseudo)
    }

    /// Inputs and remapped ground truth of all unlabelled records.
    pub fn eval_set(&self) -> Result<EvalSet> {
        let idx = self.indices(Split::Unlabelled);
        if idx.is_empty() {
            return Err(NcdError::Input(
                "dataset has no unlabelled records to evaluate".into(),
            ));
        }
        let mut truth = Vec::with_capacity(idx.len());
        for &i in &idx {
            let r = &self.records[i];
            let y = r.label.ok_or_else(|| {
                NcdError::Input(format!("unlabelled record {} has no ground truth", r.id))
            })?;
            truth.push(y - self.num_labelled_classes);
        }
        let (visual, audio) = self.stack(&idx);
        Ok(EvalSet {
            visual,
            audio,
            truth,
            num_classes: self.num_unlabelled_classes,
        })
    }

    /// Features of the given records as `[n, d]` tensors.
    pub fn stack(&self, idx: &[usize]) -> (Tensor, Option<Tensor>) {
        let mut v = Vec::with_capacity(idx.len() * self.d_v);
        let mut a = Vec::new();
        for &i in idx {
            v.extend_from_slice(&self.records[i].visual);
            if let Some(x) = &self.records[i].audio {
                a.extend_from_slice(x);
            }
        }
        let visual = Tensor::from_parts(vec![idx.len(), self.d_v], v);
        let audio = self.d_a.map(|d| Tensor::from_parts(vec![idx.len(), d], a));
        (visual, audio)
    }
}

/// Parameters of the synthetic generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub labelled_classes: usize,
    pub unlabelled_classes: usize,
    pub per_class: usize,
    pub d_v: usize,
    /// `None` generates single-modal data.
    pub d_a: Option<usize>,
    pub class_sep: f64,
    pub intra_sigma: f64,
    pub modality_corr: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            labelled_classes: 6,
            unlabelled_classes: 4,
            per_class: 100,
            d_v: 192,
            d_a: Some(192),
            class_sep: 10.0,
            intra_sigma: 1.0,
            modality_corr: 0.5,
            seed: 0,
        }
    }
}

fn normalized(mut v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    v.iter_mut().for_each(|x| *x /= n);
    v
}

/// Gaussian class clusters whose means sit on a sphere of radius
/// `class_sep` in each modality. A class's audio mean direction mixes a
/// fixed random image of its visual latent (weight `modality_corr`) with an
/// independent direction.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    if spec.labelled_classes + spec.unlabelled_classes == 0 || spec.per_class == 0 || spec.d_v == 0
    {
        return Err(NcdError::Config(
            "synthetic counts and dimensions must be positive".into(),
        ));
    }
    if spec.d_a == Some(0) {
        return Err(NcdError::Config("d_a must be positive when set".into()));
    }
    if !(spec.class_sep > 0.0) {
        return Err(NcdError::Config(format!(
            "class_sep must be positive, got {}",
            spec.class_sep
        )));
    }
    if !(spec.intra_sigma >= 0.0) {
        return Err(NcdError::Config(format!(
            "intra_sigma must be non-negative, got {}",
            spec.intra_sigma
        )));
    }
    if !(0.0..=1.0).contains(&spec.modality_corr) {
        return Err(NcdError::Config(format!(
            "modality_corr must lie in [0, 1], got {}",
            spec.modality_corr
        )));
    }
    let mut rng = Rng::with_stream(spec.seed, STREAM_SYNTH);
    let classes = spec.labelled_classes + spec.unlabelled_classes;
    let mixing: Option<Vec<f64>> = spec
        .d_a
        .map(|d_a| (0..d_a * spec.d_v).map(|_| rng.normal()).collect());

    let mut means_v = Vec::with_capacity(classes);
    let mut means_a = Vec::with_capacity(classes);
    for _ in 0..classes {
        let latent = normalized((0..spec.d_v).map(|_| rng.normal()).collect());
        means_v.push(
            latent
                .iter()
                .map(|x| x * spec.class_sep)
                .collect::<Vec<f64>>(),
        );
        if let (Some(d_a), Some(mix)) = (spec.d_a, &mixing) {
            let shared = normalized(
                (0..d_a)
                    .map(|i| {
                        (0..spec.d_v)
                            .map(|j| mix[i * spec.d_v + j] * latent[j])
                            .sum()
                    })
                    .collect(),
            );
            let own = normalized((0..d_a).map(|_| rng.normal()).collect());
            let c = spec.modality_corr;
            let dir = normalized(
                shared
                    .iter()
                    .zip(&own)
                    .map(|(s, o)| c * s + (1.0 - c * c).sqrt() * o)
                    .collect(),
            );
            means_a.push(dir.iter().map(|x| x * spec.class_sep).collect::<Vec<f64>>());
        }
    }

    let mut records = Vec::with_capacity(classes * spec.per_class);
    for class in 0..classes {
        let split = if class < spec.labelled_classes {
            Split::Labelled
        } else {
            Split::Unlabelled
        };
        for _ in 0..spec.per_class {
            let visual = means_v[class]
                .iter()
                .map(|m| m + spec.intra_sigma * rng.normal())
                .collect();
            let audio = spec.d_a.map(|_| {
                means_a[class]
                    .iter()
                    .map(|m| m + spec.intra_sigma * rng.normal())
                    .collect()
            });
            let id = records.len() as u64;
            records.push(Record::new(id, split, Some(class), visual, audio));
        }
    }
    Dataset::new(records, spec.labelled_classes, spec.unlabelled_classes)
}

/// Feature-vector augmentation: `mask * (s * x + noise)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentPolicy {
    pub noise_sigma: f64,
    pub dropout_prob: f64,
    pub scale_range: (f64, f64),
}

impl Default for AugmentPolicy {
    fn default() -> Self {
        AugmentPolicy {
            noise_sigma: 0.5,
            dropout_prob: 0.1,
            scale_range: (0.8, 1.2),
        }
    }
}

impl AugmentPolicy {
    pub const IDENTITY: AugmentPolicy = AugmentPolicy {
        noise_sigma: 0.0,
        dropout_prob: 0.0,
        scale_range: (1.0, 1.0),
    };

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.scale_range;
        if !(self.noise_sigma >= 0.0)
            || !(0.0..1.0).contains(&self.dropout_prob)
            || !(lo > 0.0)
            || hi < lo
        {
            return Err(NcdError::Config(format!(
                "invalid augmentation policy {self:?}"
            )));
        }
        Ok(())
    }
}

/// One scale per call, then per-coordinate noise and dropout.
pub fn augment(x: &[f64], policy: &AugmentPolicy, rng: &mut Rng) -> Vec<f64> {
    let s = rng.uniform_range(policy.scale_range.0, policy.scale_range.1);
    x.iter()
        .map(|&v| {
            let noise = if policy.noise_sigma > 0.0 {
                policy.noise_sigma * rng.normal()
            } else {
                0.0
            };
            let keep = policy.dropout_prob <= 0.0 || !rng.bernoulli(policy.dropout_prob);
            if keep {
                s * v + noise
            } else {
                0.0
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatchSpec {
    pub batch_size: usize,
    /// `None` draws uniformly from all records.
    pub labelled_fraction: Option<f64>,
}

/// Two augmented views of each drawn record, interleaved so that rows
/// `2k` and `2k + 1` come from record `record_indices[k]`.
#[derive(Debug, Clone)]
pub struct TrainBatch {
    pub visual: Tensor,
    pub audio: Option<Tensor>,
    pub labels: Vec<Option<usize>>,
    pub record_indices: Vec<usize>,
}

impl TrainBatch {
    pub fn num_views(&self) -> usize {
        self.labels.len()
    }

    pub fn labelled_rows(&self) -> Vec<usize> {
        (0..self.labels.len())
            .filter(|&i| self.labels[i].is_some())
            .collect()
    }

    pub fn unlabelled_rows(&self) -> Vec<usize> {
        (0..self.labels.len())
            .filter(|&i| self.labels[i].is_none())
            .collect()
    }
}

pub fn make_batch(
    ds: &Dataset,
    record_indices: &[usize],
    policy: &AugmentPolicy,
    rng: &mut Rng,
) -> Result<TrainBatch> {
    if record_indices.is_empty() {
        return Err(NcdError::Sampling("batch has no records".into()));
    }
    let n2 = record_indices.len() * 2;
    let mut v = Vec::with_capacity(n2 * ds.d_v);
    let mut a = Vec::new();
    let mut labels = Vec::with_capacity(n2);
    for &i in record_indices {
        let r = ds
            .records
            .get(i)
            .ok_or_else(|| NcdError::Sampling(format!("record index {i} out of range")))?;
        for _ in 0..2 {
            v.extend(augment(&r.visual, policy, rng));
            if let Some(x) = &r.audio {
                a.extend(augment(x, policy, rng));
            }
            labels.push(r.train_label());
        }
    }
    Ok(TrainBatch {
        visual: Tensor::from_parts(vec![n2, ds.d_v], v),
        audio: ds.d_a.map(|d| Tensor::from_parts(vec![n2, d], a)),
        labels,
        record_indices: record_indices.to_vec(),
    })
}

fn draw_distinct(pool: &[usize], k: usize, rng: &mut Rng) -> Vec<usize> {
    let mut p = pool.to_vec();
    for i in 0..k {
        let j = i + rng.below(p.len() - i);
        p.swap(i, j);
    }
    p.truncate(k);
    p
}

/// Draws `batch_size` distinct records and builds their paired views.
pub fn sample_batch(
    ds: &Dataset,
    spec: &BatchSpec,
    policy: &AugmentPolicy,
    rng: &mut Rng,
) -> Result<TrainBatch> {
    let n = spec.batch_size;
    if n == 0 {
        return Err(NcdError::Sampling("batch size must be positive".into()));
    }
    let picked = match spec.labelled_fraction {
        None => {
            if n > ds.len() {
                return Err(NcdError::Sampling(format!(
                    "batch of {n} from {} records",
                    ds.len()
                )));
            }
            let all: Vec<usize> = (0..ds.len()).collect();
            draw_distinct(&all, n, rng)
        }
        Some(f) => {
            if !(0.0..=1.0).contains(&f) {
                return Err(NcdError::Config(format!(
                    "labelled_fraction {f} outside [0, 1]"
                )));
            }
            let n_l = (f * n as f64).round() as usize;
            let n_u = n - n_l;
            let lab = ds.indices(Split::Labelled);
            let unl = ds.indices(Split::Unlabelled);
            if n_l > lab.len() || n_u > unl.len() {
                return Err(NcdError::Sampling(format!(
                    "need {n_l} labelled and {n_u} unlabelled records, have {} and {}",
                    lab.len(),
                    unl.len()
                )));
            }
            let mut picked = draw_distinct(&lab, n_l, rng);
            picked.extend(draw_distinct(&unl, n_u, rng));
            rng.shuffle(&mut picked);
            picked
        }
    };
    make_batch(ds, &picked, policy, rng)
}

fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes the dataset as CSV: `id,split,label,v_0..,a_0..`, with
/// unknown labels as `-1` and floats at 17 significant digits.
pub fn write_dataset(ds: &Dataset, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_dataset_to(ds, &mut buf)?;
    std::fs::write(path, buf).map_err(|e| NcdError::io(path, e))
}

pub fn write_dataset_to<W: std::io::Write>(ds: &Dataset, w: W) -> Result<()> {
    let csv_err = |e: csv::Error| NcdError::Input(format!("csv write: {e}"));
    let mut wr = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    let mut header = vec!["id".to_string(), "split".into(), "label".into()];
    header.extend((0..ds.d_v).map(|i| format!("v_{i}")));
    if let Some(d) = ds.d_a {
        header.extend((0..d).map(|i| format!("a_{i}")));
    }
    wr.write_record(&header).map_err(csv_err)?;
    for r in &ds.records {
        let mut row = vec![
            r.id.to_string(),
            r.split.as_str().to_string(),
            r.label.map_or("-1".to_string(), |y| y.to_string()),
        ];
        row.extend(r.visual.iter().map(|&v| fmt_f64(v)));
        if let Some(a) = &r.audio {
            row.extend(a.iter().map(|&v| fmt_f64(v)));
        }
        wr.write_record(&row).map_err(csv_err)?;
    }
    wr.flush()
        .map_err(|e| NcdError::Input(format!("csv write: {e}")))?;
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let file = std::fs::File::open(path).map_err(|e| NcdError::io(path, e))?;
    read_dataset_from(file, &path.display().to_string())
}

/// Parses the CSV format. Class counts are inferred: labelled classes are
/// `0..=max labelled label`, unlabelled classes span the remaining ground
/// truth values.
pub fn read_dataset_from<R: std::io::Read>(r: R, source: &str) -> Result<Dataset> {
    let perr = |line: u64, msg: String| NcdError::Parse {
        path: source.to_string(),
        line,
        msg,
    };
    let mut rd = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(r);
    let mut rows = rd.records();

    let header = match rows.next() {
        Some(Ok(h)) => h,
        Some(Err(e)) => return Err(perr(1, e.to_string())),
        None => return Err(perr(1, "empty file".into())),
    };
    if header.len() < 4 || &header[0] != "id" || &header[1] != "split" || &header[2] != "label" {
        return Err(perr(
            1,
            "header must start with id,split,label followed by features".into(),
        ));
    }
    let mut d_v = 0;
    let mut d_a = 0;
    for (k, name) in header.iter().skip(3).enumerate() {
        if d_a == 0 && name == format!("v_{d_v}") {
            d_v += 1;
        } else if name == format!("a_{d_a}") {
            d_a += 1;
        } else {
            return Err(perr(
                1,
                format!("unexpected column {name:?} at position {}", k + 3),
            ));
        }
    }
    if d_v == 0 {
        return Err(perr(1, "no visual feature columns".into()));
    }
    let width = 3 + d_v + d_a;

    let mut parsed = Vec::new();
    for row in rows {
        let row = row.map_err(|e| perr(e.position().map_or(0, |p| p.line()), e.to_string()))?;
        let line = row.position().map_or(0, |p| p.line());
        if row.len() != width {
            return Err(perr(
                line,
                format!("row has {} columns, expected {width}", row.len()),
            ));
        }
        let id: u64 = row[0]
            .parse()
            .map_err(|_| perr(line, format!("bad id {:?}", &row[0])))?;
        let split = match &row[1] {
            "labelled" => Split::Labelled,
            "unlabelled" => Split::Unlabelled,
            other => return Err(perr(line, format!("bad split {other:?}"))),
        };
        let label: i64 = row[2]
            .parse()
            .map_err(|_| perr(line, format!("bad label {:?}", &row[2])))?;
        let label = match label {
            -1 => None,
            y if y >= 0 => Some(y as usize),
            y => return Err(perr(line, format!("bad label {y}"))),
        };
        if split == Split::Labelled && label.is_none() {
            return Err(perr(line, "labelled row without a label".into()));
        }
        let mut feats = Vec::with_capacity(d_v + d_a);
        for k in 3..width {
            let v: f64 = row[k]
                .parse()
                .map_err(|_| perr(line, format!("bad number {:?} in column {k}", &row[k])))?;
            if !v.is_finite() {
                return Err(perr(line, format!("non-finite value in column {k}")));
            }
            feats.push(v);
        }
        let audio = (d_a > 0).then(|| feats.split_off(d_v));
        parsed.push((line, Record::new(id, split, label, feats, audio)));
    }
    if parsed.is_empty() {
        return Err(perr(1, "no data rows".into()));
    }

    let max_l = parsed
        .iter()
        .filter(|(_, r)| r.split == Split::Labelled)
        .filter_map(|(_, r)| r.label)
        .max();
    let unl_truth: Vec<usize> = parsed
        .iter()
        .filter(|(_, r)| r.split == Split::Unlabelled)
        .filter_map(|(_, r)| r.label)
        .collect();
    let num_l = match max_l {
        Some(m) => m + 1,
        None => unl_truth.iter().copied().min().unwrap_or(0),
    };
    for (line, r) in &parsed {
        if r.split == Split::Unlabelled && r.label.is_some_and(|y| y < num_l) {
            return Err(perr(
                *line,
                format!(
                    "unlabelled ground truth {:?} collides with a labelled class",
                    r.label
                ),
            ));
        }
    }
    let num_u = unl_truth.iter().copied().max().map_or(0, |m| m + 1 - num_l);
    Dataset::new(parsed.into_iter().map(|(_, r)| r).collect(), num_l, num_u)
}
