//! Training objectives. Each loss returns its value together with the exact
//! gradient with respect to every tensor it reads.

use serde::{Deserialize, Serialize};

use crate::error::{NcdError, Result};
use crate::numerics::{dot, Tensor};
use crate::pairing::PairLabelMatrix;

/// Clamp applied to pair probabilities inside the BCE logs.
pub const BCE_EPS: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Visual,
    Audio,
}

/// Chooses the embedding used on each side of a contrastive pair: the
/// anchor `g0(z_i)` and the target `g1(z_n)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModalitySelectors {
    pub anchor: Modality,
    pub target: Modality,
}

impl ModalitySelectors {
    pub const VISUAL: ModalitySelectors = ModalitySelectors {
        anchor: Modality::Visual,
        target: Modality::Visual,
    };
    pub const AUDIO: ModalitySelectors = ModalitySelectors {
        anchor: Modality::Audio,
        target: Modality::Audio,
    };
    pub const CROSS: ModalitySelectors = ModalitySelectors {
        anchor: Modality::Visual,
        target: Modality::Audio,
    };
}

/// Projected, unit-norm embeddings of `2N` views.
///
/// Views are interleaved so that the augmented counterpart of row `i` is
/// row `i ^ 1`. `labels[i]` is `None` for unlabelled items.
#[derive(Debug, Clone, Copy)]
pub struct ContrastiveBatch<'a> {
    pub visual: &'a Tensor,
    pub audio: Option<&'a Tensor>,
    pub labels: &'a [Option<usize>],
    pub tau: f64,
}

/// Loss value with gradients for the visual and (if present) audio embeddings.
#[derive(Debug, Clone)]
pub struct ContrastiveLoss {
    pub value: f64,
    pub grad_visual: Tensor,
    pub grad_audio: Option<Tensor>,
}

impl ContrastiveLoss {
    fn zero(batch: &ContrastiveBatch<'_>) -> Self {
        ContrastiveLoss {
            value: 0.0,
            grad_visual: Tensor::zeros(batch.visual.shape()),
            grad_audio: batch.audio.map(|a| Tensor::zeros(a.shape())),
        }
    }

    fn add(&mut self, other: ContrastiveLoss) {
        self.value += other.value;
        self.grad_visual.add_assign(&other.grad_visual);
        if let (Some(a), Some(b)) = (&mut self.grad_audio, &other.grad_audio) {
            a.add_assign(b);
        }
    }
}

impl<'a> ContrastiveBatch<'a> {
    fn validate(&self) -> Result<usize> {
        let (n2, _) = self.visual.dims2()?;
        if n2 < 2 {
            return Err(NcdError::Batch(format!(
                "contrastive batch needs at least 2 views, got {n2}"
            )));
        }
        if n2 % 2 != 0 {
            return Err(NcdError::Batch(format!(
                "contrastive batch has an odd number of views ({n2})"
            )));
        }
        if !(self.tau > 0.0) || !self.tau.is_finite() {
            return Err(NcdError::Config(format!(
                "temperature must be positive, got {}",
                self.tau
            )));
        }
        if let Some(a) = self.audio {
            if a.rows() != n2 {
                return Err(NcdError::Dimension(
                    "visual and audio embeddings differ in row count".into(),
                ));
            }
        }
        if self.labels.len() != n2 {
            return Err(NcdError::Batch(format!(
                "{} labels for {n2} views",
                self.labels.len()
            )));
        }
        for i in (0..n2).step_by(2) {
            if self.labels[i] != self.labels[i + 1] {
                return Err(NcdError::Batch(format!(
                    "views {i} and {} carry different labels",
                    i + 1
                )));
            }
        }
        Ok(n2)
    }

    fn select(&self, m: Modality) -> Result<&'a Tensor> {
        match m {
            Modality::Visual => Ok(self.visual),
            Modality::Audio => self.audio.ok_or_else(|| {
                NcdError::Input("audio selector used on a single-modal batch".into())
            }),
        }
    }
}

/// Shared denominator form of instance and category discrimination.
///
/// For every anchor `i` the logits are `a_i . b_n / tau` for `n != i`. The
/// instance term has the single positive `i ^ 1`; the category term averages
/// over `Q(i)`, the other views with the same label. Both are averaged over
/// all `2N` anchors and scaled by their weights.
fn nce_terms(
    batch: &ContrastiveBatch<'_>,
    sel: ModalitySelectors,
    instance_weight: f64,
    category_weight: f64,
) -> Result<ContrastiveLoss> {
    let n2 = batch.validate()?;
    let a = batch.select(sel.anchor)?;
    let b = batch.select(sel.target)?;
    a.same_shape(b, "contrastive selectors")?;
    let tau = batch.tau;
    let d = a.cols();
    let norm = 1.0 / n2 as f64;

    let mut ga = vec![0.0; n2 * d];
    let mut gb = vec![0.0; n2 * d];
    let mut total = 0.0;
    let mut logits = vec![0.0; n2];
    let mut coef = vec![0.0; n2];

    for i in 0..n2 {
        let ai = a.row(i);
        let mut max = f64::NEG_INFINITY;
        for n in 0..n2 {
            if n != i {
                logits[n] = dot(ai, b.row(n)) / tau;
                max = max.max(logits[n]);
            }
        }
        let sum: f64 = (0..n2)
            .filter(|&n| n != i)
            .map(|n| (logits[n] - max).exp())
            .sum();
        let lse = max + sum.ln();

        let positive = i ^ 1;
        let same_class: Vec<usize> = match batch.labels[i] {
            Some(y) => (0..n2)
                .filter(|&q| q != i && batch.labels[q] == Some(y))
                .collect(),
            None => Vec::new(),
        };
        let wc = if same_class.is_empty() {
            0.0
        } else {
            category_weight
        };

        let mut loss_i = 0.0;
        if instance_weight != 0.0 {
            loss_i += instance_weight * (lse - logits[positive]);
        }
        if wc != 0.0 {
            let mean_pos =
                same_class.iter().map(|&q| logits[q]).sum::<f64>() / same_class.len() as f64;
            loss_i += wc * (lse - mean_pos);
        }
        total += loss_i;

        let soft = instance_weight + wc;
        for n in 0..n2 {
            coef[n] = if n == i {
                0.0
            } else {
                soft * (logits[n] - lse).exp()
            };
        }
        coef[positive] -= instance_weight;
        if wc != 0.0 {
            let share = wc / same_class.len() as f64;
            for &q in &same_class {
                coef[q] -= share;
            }
        }

        let scale = norm / tau;
        for n in 0..n2 {
            let c = coef[n] * scale;
            if c == 0.0 {
                continue;
            }
            let bn = b.row(n);
            for (g, &bv) in ga[i * d..(i + 1) * d].iter_mut().zip(bn) {
                *g += c * bv;
            }
            for (g, &av) in gb[n * d..(n + 1) * d].iter_mut().zip(ai) {
                *g += c * av;
            }
        }
    }

    let mut out = ContrastiveLoss::zero(batch);
    out.value = total * norm;
    let ga = Tensor::from_parts(vec![n2, d], ga);
    let gb = Tensor::from_parts(vec![n2, d], gb);
    for (m, g) in [(sel.anchor, ga), (sel.target, gb)] {
        match m {
            Modality::Visual => out.grad_visual.add_assign(&g),
            Modality::Audio => out
                .grad_audio
                .as_mut()
                .expect("audio checked by select")
                .add_assign(&g),
        }
    }
    Ok(out)
}

/// Instance discrimination: each view's only positive is its counterpart.
pub fn nce_instance(
    batch: &ContrastiveBatch<'_>,
    sel: ModalitySelectors,
) -> Result<ContrastiveLoss> {
    nce_terms(batch, sel, 1.0, 0.0)
}

/// Category discrimination: every other same-label view is a positive.
/// Unlabelled anchors contribute zero but still count in the `1/2N` mean.
pub fn nce_category(
    batch: &ContrastiveBatch<'_>,
    sel: ModalitySelectors,
) -> Result<ContrastiveLoss> {
    nce_terms(batch, sel, 0.0, 1.0)
}

/// Sum of instance and category discrimination over one denominator.
pub fn unified_cl(batch: &ContrastiveBatch<'_>, sel: ModalitySelectors) -> Result<ContrastiveLoss> {
    nce_terms(batch, sel, 1.0, 1.0)
}

/// Contrastive loss summed over several selector pairs, with the instance
/// and category parts switchable.
pub fn contrastive_loss(
    batch: &ContrastiveBatch<'_>,
    instance: &[ModalitySelectors],
    category: &[ModalitySelectors],
    use_instance: bool,
    use_category: bool,
) -> Result<ContrastiveLoss> {
    batch.validate()?;
    let mut out = ContrastiveLoss::zero(batch);
    let wi = if use_instance { 1.0 } else { 0.0 };
    let wc = if use_category { 1.0 } else { 0.0 };
    let mut pairs: Vec<(ModalitySelectors, f64, f64)> = Vec::new();
    for &s in instance {
        pairs.push((s, wi, 0.0));
    }
    for &s in category {
        match pairs.iter_mut().find(|(p, _, c)| *p == s && *c == 0.0) {
            Some(entry) => entry.2 = wc,
            None => pairs.push((s, 0.0, wc)),
        }
    }
    for (s, i, c) in pairs {
        if i != 0.0 || c != 0.0 {
            out.add(nce_terms(batch, s, i, c)?);
        }
    }
    Ok(out)
}

fn check_distribution(p: &Tensor, what: &str) -> Result<()> {
    let (rows, _) = p.dims2()?;
    for r in 0..rows {
        let row = p.row(r);
        let sum: f64 = row.iter().sum();
        if row.iter().any(|&v| !(v >= -1e-12)) || (sum - 1.0).abs() > 1e-6 {
            return Err(NcdError::Precondition(format!(
                "{what}: row {r} is not a probability distribution"
            )));
        }
    }
    Ok(())
}

/// Pairwise binary cross-entropy between inner products of cluster
/// distributions and pseudo-labels, averaged over all `M^2` ordered pairs
/// including the diagonal.
pub fn bce_pairwise(probs: &Tensor, s: &PairLabelMatrix) -> Result<(f64, Tensor)> {
    let (m, c) = probs.dims2()?;
    if s.size() != m {
        return Err(NcdError::Dimension(format!(
            "{m} rows but a {0}x{0} label matrix",
            s.size()
        )));
    }
    check_distribution(probs, "bce_pairwise")?;
    let norm = 1.0 / (m * m) as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; m * c];
    for i in 0..m {
        for j in 0..m {
            let raw = dot(probs.row(i), probs.row(j));
            let p = raw.clamp(BCE_EPS, 1.0 - BCE_EPS);
            let target = s.get(i, j);
            loss -= if target { p.ln() } else { (1.0 - p).ln() };
            if raw <= BCE_EPS || raw >= 1.0 - BCE_EPS {
                continue;
            }
            let dp = if target { -1.0 / p } else { 1.0 / (1.0 - p) } * norm;
            for k in 0..c {
                grad[i * c + k] += dp * probs.get2(j, k);
                grad[j * c + k] += dp * probs.get2(i, k);
            }
        }
    }
    Ok((loss * norm, Tensor::from_parts(vec![m, c], grad)))
}

/// Mean over batch and class axes of the squared difference.
pub fn mse_consistency(a: &Tensor, b: &Tensor) -> Result<(f64, Tensor, Tensor)> {
    a.same_shape(b, "mse_consistency")?;
    let n = a.len() as f64;
    let mut loss = 0.0;
    let mut ga = Vec::with_capacity(a.len());
    for (&x, &y) in a.data().iter().zip(b.data()) {
        let d = x - y;
        loss += d * d;
        ga.push(2.0 * d / n);
    }
    let ga = Tensor::from_parts(a.shape().to_vec(), ga);
    let gb = ga.map(|v| -v);
    Ok((loss / n, ga, gb))
}

/// Mean softmax cross-entropy of `logits` against class indices.
pub fn cross_entropy(logits: &Tensor, targets: &[usize]) -> Result<(f64, Tensor)> {
    let (rows, c) = logits.dims2()?;
    if targets.len() != rows {
        return Err(NcdError::Dimension(format!(
            "{} targets for {rows} rows",
            targets.len()
        )));
    }
    if let Some(&bad) = targets.iter().find(|&&t| t >= c) {
        return Err(NcdError::Input(format!(
            "target class {bad} out of range for {c} classes"
        )));
    }
    let mut grad = logits.clone();
    let mut loss = 0.0;
    for (r, &t) in targets.iter().enumerate() {
        let row = logits.row(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        loss += lse - row[t];
        let g = grad.row_mut(r);
        for (k, gv) in g.iter_mut().enumerate() {
            *gv = ((row[k] - lse).exp() - if k == t { 1.0 } else { 0.0 }) / rows as f64;
        }
    }
    Ok((loss / rows as f64, grad))
}

/// Ramp-up schedule `lambda * exp(-5 (1 - r/T)^2)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RampSchedule {
    pub lambda: f64,
    pub total_epochs: f64,
    pub epoch: f64,
}

pub fn ramp_weight(sched: RampSchedule) -> Result<f64> {
    let RampSchedule {
        lambda,
        total_epochs,
        epoch,
    } = sched;
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(NcdError::Config(format!(
            "ramp lambda must be positive, got {lambda}"
        )));
    }
    if !(total_epochs > 0.0) || !total_epochs.is_finite() {
        return Err(NcdError::Config(format!(
            "ramp total epochs must be positive, got {total_epochs}"
        )));
    }
    let r = if epoch.is_nan() {
        log::warn!("ramp epoch is NaN; using 0");
        0.0
    } else if !(0.0..=total_epochs).contains(&epoch) {
        let c = epoch.clamp(0.0, total_epochs);
        log::warn!("ramp epoch {epoch} outside [0, {total_epochs}]; clamped to {c}");
        c
    } else {
        epoch
    };
    let t = 1.0 - r / total_epochs;
    Ok(lambda * (-5.0 * t * t).exp())
}

/// Component switches for ablations. Disabled terms are dropped from the
/// objective entirely.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossSwitches {
    pub mse: bool,
    pub ce: bool,
    pub bce: bool,
    pub nce_i: bool,
    pub nce_c: bool,
}

impl Default for LossSwitches {
    fn default() -> Self {
        LossSwitches {
            mse: true,
            ce: true,
            bce: true,
            nce_i: true,
            nce_c: true,
        }
    }
}

impl LossSwitches {
    pub fn cl(&self) -> bool {
        self.nce_i || self.nce_c
    }

    pub fn any(&self) -> bool {
        self.mse || self.ce || self.bce || self.cl()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossTerms {
    pub ce: f64,
    pub bce: f64,
    pub cl: f64,
    pub mse: f64,
}

/// Weights `[ce, bce, cl, mse]` of the joint objective for ramp value `omega`.
pub fn joint_weights(omega: f64, switches: &LossSwitches) -> [f64; 4] {
    let on = |b: bool| if b { 1.0 } else { 0.0 };
    [
        on(switches.ce),
        on(switches.bce),
        on(switches.cl()) * (1.0 - omega),
        on(switches.mse) * omega,
    ]
}

/// `ce + bce + (1 - omega) cl + omega mse`, with disabled terms removed.
pub fn joint_loss(terms: &LossTerms, omega: f64, switches: &LossSwitches) -> Result<f64> {
    let parts = [terms.ce, terms.bce, terms.cl, terms.mse];
    if let Some(bad) = parts
        .iter()
        .chain(std::iter::once(&omega))
        .find(|v| !v.is_finite())
    {
        return Err(NcdError::Numeric(format!("joint loss component is {bad}")));
    }
    let w = joint_weights(omega, switches);
    Ok(parts.iter().zip(w).map(|(v, w)| v * w).sum())
}
