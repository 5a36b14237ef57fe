//! Checks shared by the integration tests and the acceptance runner. Each
//! returns a one-line summary, or an error describing the first failure.

#![allow(
    dead_code,
    clippy::needless_range_loop,
    clippy::neg_cmp_op_on_partial_ord
)]

use ncd_core::data::{generate_synthetic, sample_batch, BatchSpec, SyntheticSpec};
use ncd_core::eval::{clustering_acc, hungarian, AssignmentProblem};
use ncd_core::losses::{
    bce_pairwise, cross_entropy, mse_consistency, nce_category, nce_instance, ramp_weight,
    unified_cl, ContrastiveBatch, Modality, ModalitySelectors, RampSchedule,
};
use ncd_core::model::ModelState;
use ncd_core::numerics::ops::{softmax, softmax_backward};
use ncd_core::numerics::{check_gradients, Param, Rng, Tensor};
use ncd_core::pairing::{pairwise_labels, PairLabelMatrix, PairLabeler, WtaHasher};
use ncd_core::trainer::{batch_objective, RunConfig};

use crate::common::*;

pub type Check = std::result::Result<String, String>;

pub const GRAD_TOL: f64 = 1e-4;
const STEP: f64 = 1e-5;

const SELECTORS: [ModalitySelectors; 4] = [
    ModalitySelectors::VISUAL,
    ModalitySelectors::AUDIO,
    ModalitySelectors::CROSS,
    ModalitySelectors {
        anchor: Modality::Audio,
        target: Modality::Visual,
    },
];

fn fail<T>(msg: String) -> std::result::Result<T, String> {
    Err(msg)
}

/// Interleaved view labels: both views of an item share its label.
fn view_labels(rng: &mut Rng, n2: usize, classes: usize) -> Vec<Option<usize>> {
    let mut out = Vec::with_capacity(n2);
    for _ in 0..n2 / 2 {
        let y = if rng.bernoulli(0.3) {
            None
        } else {
            Some(rng.below(classes))
        };
        out.push(y);
        out.push(y);
    }
    out
}

fn contrastive_instance(rng: &mut Rng) -> (Tensor, Tensor, Vec<Option<usize>>, f64) {
    let n2 = 2 * (1 + rng.below(5));
    let d = 2 + rng.below(5);
    let v = tensor(&unit_rows(&random_matrix(rng, n2, d)));
    let a = tensor(&unit_rows(&random_matrix(rng, n2, d)));
    let labels = view_labels(rng, n2, 3);
    let tau = rng.uniform_range(0.2, 1.0);
    (v, a, labels, tau)
}

type NceFn = fn(
    &ContrastiveBatch<'_>,
    ModalitySelectors,
) -> ncd_core::Result<ncd_core::losses::ContrastiveLoss>;

fn grad_contrastive(f: NceFn, instances: usize, seed: u64) -> std::result::Result<f64, String> {
    let mut rng = Rng::new(seed);
    let mut worst = 0.0f64;
    for case in 0..instances {
        let (v, a, labels, tau) = contrastive_instance(&mut rng);
        let sel = SELECTORS[case % SELECTORS.len()];
        let mut params = vec![Param::new(v), Param::new(a)];
        let err = check_gradients(
            |ps: &mut [Param]| {
                let (v, a) = (ps[0].value.clone(), ps[1].value.clone());
                let batch = ContrastiveBatch {
                    visual: &v,
                    audio: Some(&a),
                    labels: &labels,
                    tau,
                };
                let l = f(&batch, sel)?;
                ps[0].accumulate(&l.grad_visual)?;
                ps[1].accumulate(l.grad_audio.as_ref().expect("audio present"))?;
                Ok(l.value)
            },
            &mut params,
            STEP,
        )
        .map_err(|e| format!("case {case}: {e}"))?;
        worst = worst.max(err);
    }
    Ok(worst)
}

fn grad_bce(instances: usize, seed: u64) -> std::result::Result<f64, String> {
    let mut rng = Rng::new(seed);
    let mut worst = 0.0f64;
    for case in 0..instances {
        let m = 2 + rng.below(7);
        let c = 2 + rng.below(4);
        let bits: Vec<bool> = (0..m * m).map(|_| rng.bernoulli(0.4)).collect();
        let s = PairLabelMatrix::from_fn(m, |i, j| bits[i * m + j]);
        let mut params = vec![Param::new(tensor(&random_matrix(&mut rng, m, c)))];
        let err = check_gradients(
            |ps: &mut [Param]| {
                let p = softmax(&ps[0].value)?;
                let (l, g) = bce_pairwise(&p, &s)?;
                ps[0].accumulate(&softmax_backward(&p, &g))?;
                Ok(l)
            },
            &mut params,
            STEP,
        )
        .map_err(|e| format!("case {case}: {e}"))?;
        worst = worst.max(err);
    }
    Ok(worst)
}

fn grad_mse(instances: usize, seed: u64) -> std::result::Result<f64, String> {
    let mut rng = Rng::new(seed);
    let mut worst = 0.0f64;
    for case in 0..instances {
        let (n, c) = (1 + rng.below(8), 1 + rng.below(6));
        let mut params = vec![
            Param::new(tensor(&random_matrix(&mut rng, n, c))),
            Param::new(tensor(&random_matrix(&mut rng, n, c))),
        ];
        let err = check_gradients(
            |ps: &mut [Param]| {
                let (l, ga, gb) = mse_consistency(&ps[0].value, &ps[1].value)?;
                ps[0].accumulate(&ga)?;
                ps[1].accumulate(&gb)?;
                Ok(l)
            },
            &mut params,
            STEP,
        )
        .map_err(|e| format!("case {case}: {e}"))?;
        worst = worst.max(err);
    }
    Ok(worst)
}

fn grad_ce(instances: usize, seed: u64) -> std::result::Result<f64, String> {
    let mut rng = Rng::new(seed);
    let mut worst = 0.0f64;
    for case in 0..instances {
        let (n, c) = (1 + rng.below(8), 2 + rng.below(6));
        let targets: Vec<usize> = (0..n).map(|_| rng.below(c)).collect();
        let mut logits = random_matrix(&mut rng, n, c);
        logits.iter_mut().flatten().for_each(|v| *v *= 3.0);
        let mut params = vec![Param::new(tensor(&logits))];
        let err = check_gradients(
            |ps: &mut [Param]| {
                let (l, g) = cross_entropy(&ps[0].value, &targets)?;
                ps[0].accumulate(&g)?;
                Ok(l)
            },
            &mut params,
            STEP,
        )
        .map_err(|e| format!("case {case}: {e}"))?;
        worst = worst.max(err);
    }
    Ok(worst)
}

/// Small multi-modal problem for checking the full objective through the
/// network.
pub fn tiny_setup(
    seed: u64,
) -> (
    RunConfig,
    ModelState,
    PairLabeler,
    ncd_core::data::TrainBatch,
) {
    let spec = SyntheticSpec {
        labelled_classes: 3,
        unlabelled_classes: 2,
        per_class: 6,
        d_v: 6,
        d_a: Some(5),
        seed,
        ..SyntheticSpec::default()
    };
    let ds = generate_synthetic(&spec).unwrap();
    let cfg = RunConfig {
        seed,
        feature: 12,
        fused: 10,
        proj_hidden: 12,
        proj: 6,
        batch_size: 8,
        synthetic: spec,
        ..RunConfig::default()
    };
    let cfg = cfg.resolve(&ds).unwrap();
    let mut rng = Rng::new(seed);
    let model = ModelState::init(cfg.model_dims().unwrap(), &mut rng).unwrap();
    let labeler = PairLabeler::new(&cfg.strategy, cfg.fused, &mut rng).unwrap();
    let batch = sample_batch(
        &ds,
        &BatchSpec {
            batch_size: 8,
            labelled_fraction: Some(0.5),
        },
        &cfg.augment,
        &mut rng,
    )
    .unwrap();
    (cfg, model, labeler, batch)
}

fn joint_at(
    cfg: &RunConfig,
    model: &ModelState,
    labeler: &PairLabeler,
    batch: &ncd_core::data::TrainBatch,
    omega: f64,
) -> ncd_core::Result<(f64, ModelState)> {
    let mut m = model.clone();
    m.params_mut().iter_mut().for_each(Param::zero_grad);
    let l = batch_objective(cfg, &mut m, labeler, batch, omega)?;
    Ok((l.value.expect("all terms enabled"), m))
}

/// Central differences through the whole network. ReLU units can sit
/// within a step of their kink, where no finite difference is valid; a
/// coordinate whose analytic gradient jumps across the probe is skipped and
/// counted.
fn grad_joint(
    instances: usize,
    coords: usize,
    seed: u64,
) -> std::result::Result<(f64, usize, usize), String> {
    let h = STEP;
    let mut worst = 0.0f64;
    let (mut probed, mut skipped) = (0, 0);
    for case in 0..instances {
        let (cfg, model, labeler, batch) = tiny_setup(seed + case as u64);
        let omega = (case as f64 + 0.5) / instances as f64;
        let eval = |m: &ModelState| {
            joint_at(&cfg, m, &labeler, &batch, omega)
                .map_err(|e| format!("joint case {case}: {e}"))
        };
        let (_, base) = eval(&model)?;
        let mut rng = Rng::new(seed ^ case as u64);
        let mut all: Vec<(usize, usize)> = (0..model.params().len())
            .flat_map(|p| (0..model.params()[p].len()).map(move |i| (p, i)))
            .collect();
        rng.shuffle(&mut all);
        for &(p, i) in all.iter().take(coords) {
            let shifted = |d: f64| {
                let mut m = model.clone();
                m.params_mut()[p].value.data_mut()[i] += d;
                eval(&m)
            };
            let ((lp, mp), (lm, mm)) = (shifted(h)?, shifted(-h)?);
            let analytic = base.params()[p].grad.data()[i];
            let scale = analytic.abs().max(1.0);
            let jump = (mp.params()[p].grad.data()[i] - mm.params()[p].grad.data()[i]).abs();
            if jump > 1e-3 * scale {
                skipped += 1;
                continue;
            }
            probed += 1;
            let numeric = (lp - lm) / (2.0 * h);
            worst = worst.max((analytic - numeric).abs() / scale);
        }
    }
    Ok((worst, probed, skipped))
}

/// Finite-difference agreement of every loss gradient over `instances`
/// random problems per loss (`joint_instances` for the full objective).
pub fn gradients(instances: usize, joint_instances: usize) -> Check {
    let (joint, probed, skipped) = grad_joint(joint_instances, 300, 17)?;
    let results = [
        (
            "nce_instance",
            grad_contrastive(nce_instance, instances, 11)?,
        ),
        (
            "nce_category",
            grad_contrastive(nce_category, instances, 12)?,
        ),
        ("unified_cl", grad_contrastive(unified_cl, instances, 13)?),
        ("bce", grad_bce(instances, 14)?),
        ("mse", grad_mse(instances, 15)?),
        ("ce", grad_ce(instances, 16)?),
        ("joint", joint),
    ];
    let summary = results
        .iter()
        .map(|(n, e)| format!("{n}={e:.1e}"))
        .collect::<Vec<_>>()
        .join(" ");
    match results.iter().find(|(_, e)| !(*e <= GRAD_TOL)) {
        Some((n, e)) => fail(format!("{n} max rel err {e:.3e} > {GRAD_TOL:e}; {summary}")),
        None => Ok(format!(
            "{summary} ({probed} joint coordinates, {skipped} skipped at ReLU kinks)"
        )),
    }
}

fn random_points(rng: &mut Rng, m: usize, d: usize, quantize: bool) -> Vec<Vec<f64>> {
    let mut rows = Vec::with_capacity(m);
    while rows.len() < m {
        let mut r: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
        if quantize {
            r.iter_mut().for_each(|v| *v = (*v * 2.0).round() / 2.0);
        }
        if r.iter().any(|&v| v != 0.0) {
            rows.push(r);
        }
    }
    // occasional exact duplicates exercise tie rules
    if quantize && m > 2 {
        let src = rng.below(m);
        let dst = rng.below(m);
        rows[dst] = rows[src].clone();
    }
    rows
}

fn compare_labels(
    what: &str,
    case: usize,
    got: &PairLabelMatrix,
    want: &[Vec<bool>],
) -> std::result::Result<(), String> {
    for (i, row) in want.iter().enumerate() {
        for (j, &w) in row.iter().enumerate() {
            if got.get(i, j) != w {
                return fail(format!(
                    "{what} case {case}: entry ({i},{j}) is {} not {w}",
                    got.get(i, j)
                ));
            }
        }
    }
    Ok(())
}

/// Pair labels of every strategy against direct evaluation, `cases` each.
pub fn pairing_oracles(cases: usize, seed: u64) -> Check {
    let mut rng = Rng::new(seed);
    for case in 0..cases {
        let m = 2 + rng.below(15);
        let d = 2 + rng.below(9);
        let quantize = case % 3 == 0;
        let z = random_points(&mut rng, m, d, quantize);
        let zt = tensor(&z);

        let h = 1 + rng.below(12);
        let k = 2 + rng.below(d - 1);
        let mu = rng.below(h + 1);
        let hasher = WtaHasher::build(d, h, k, mu, &mut rng).map_err(|e| e.to_string())?;
        let want = wta_labels_oracle(&z, hasher.permutations(), k, mu);
        for (r, row) in z.iter().enumerate() {
            let code = hasher.hash(row).map_err(|e| e.to_string())?;
            let oracle = wta_code_oracle(row, hasher.permutations(), k);
            if code
                .0
                .iter()
                .map(|&c| c as usize)
                .ne(oracle.iter().copied())
            {
                return fail(format!(
                    "wta code case {case} row {r}: {:?} vs {oracle:?}",
                    code.0
                ));
            }
        }
        let got = pairwise_labels(&PairLabeler::Wta(hasher), &zt).map_err(|e| e.to_string())?;
        compare_labels("wta", case, &got, &want)?;

        let t = rng.uniform_range(-0.5, 0.95);
        let got = pairwise_labels(&PairLabeler::Cosine { threshold: t }, &zt)
            .map_err(|e| e.to_string())?;
        compare_labels("cosine", case, &got, &cosine_labels_oracle(&z, t))?;

        let top_k = 1 + rng.below(d);
        let got = pairwise_labels(&PairLabeler::RankingStats { top_k }, &zt)
            .map_err(|e| e.to_string())?;
        compare_labels(
            "ranking_stats",
            case,
            &got,
            &ranking_labels_oracle(&z, top_k),
        )?;

        let neighbours = 1 + rng.below(m);
        let got = pairwise_labels(&PairLabeler::NearestNeighbour { neighbours }, &zt)
            .map_err(|e| e.to_string())?;
        compare_labels(
            "nearest_neighbour",
            case,
            &got,
            &nn_labels_oracle(&z, neighbours),
        )?;
    }
    Ok(format!("{cases} cases x 4 strategies, M<=16"))
}

/// Assignment cost against enumeration of all permutations, `n <= 7`.
pub fn hungarian_oracle(cases: usize, seed: u64) -> Check {
    let mut rng = Rng::new(seed);
    for case in 0..cases {
        let n = 1 + rng.below(7);
        let integer = case % 2 == 0;
        let cost: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                (0..n)
                    .map(|_| {
                        if integer {
                            rng.below(5) as f64
                        } else {
                            rng.uniform_range(-10.0, 10.0)
                        }
                    })
                    .collect()
            })
            .collect();
        let problem = AssignmentProblem::new(&cost).map_err(|e| e.to_string())?;
        let (perm, total) = hungarian(&problem);
        let mut seen = vec![false; n];
        for &j in &perm {
            if j >= n || std::mem::replace(&mut seen[j], true) {
                return fail(format!("case {case}: {perm:?} is not a permutation"));
            }
        }
        let direct: f64 = perm.iter().enumerate().map(|(i, &j)| cost[i][j]).sum();
        let best = assignment_oracle(&cost);
        if (total - best).abs() > 1e-10 || (direct - best).abs() > 1e-10 {
            return fail(format!(
                "case {case} n={n}: returned {total}, assignment sums to {direct}, optimum {best}"
            ));
        }
    }
    Ok(format!("{cases} cases, n<=7"))
}

/// Clustering accuracy against the best of all label permutations.
pub fn acc_oracle_check(cases: usize, seed: u64) -> Check {
    let mut rng = Rng::new(seed);
    for case in 0..cases {
        let c = 1 + rng.below(5);
        let n = 1 + rng.below(40);
        let y_true: Vec<usize> = (0..n).map(|_| rng.below(c)).collect();
        let y_pred: Vec<usize> = y_true
            .iter()
            .map(|&t| {
                if rng.bernoulli(0.6) {
                    (t + 1) % c
                } else {
                    rng.below(c)
                }
            })
            .collect();
        let got = clustering_acc(&y_true, &y_pred, c).map_err(|e| e.to_string())?;
        let want = acc_oracle(&y_true, &y_pred, c);
        if got.acc != want {
            return fail(format!("case {case}: acc {} vs oracle {want}", got.acc));
        }
    }
    Ok(format!("{cases} cases, C<=5"))
}

/// Both discrimination losses against the naive double loop.
pub fn nce_oracle_check(cases: usize, seed: u64) -> Check {
    let mut rng = Rng::new(seed);
    let mut worst = 0.0f64;
    for case in 0..cases {
        let n2 = 2 * (1 + rng.below(8));
        let d = 2 + rng.below(6);
        let v = unit_rows(&random_matrix(&mut rng, n2, d));
        let a = unit_rows(&random_matrix(&mut rng, n2, d));
        let labels = view_labels(&mut rng, n2, 3);
        let tau = rng.uniform_range(0.1, 1.0);
        let (vt, at) = (tensor(&v), tensor(&a));
        let batch = ContrastiveBatch {
            visual: &vt,
            audio: Some(&at),
            labels: &labels,
            tau,
        };
        for sel in SELECTORS {
            let pick = |m: Modality| if m == Modality::Visual { &v } else { &a };
            let (x, y) = (pick(sel.anchor), pick(sel.target));
            let pairs = [
                (
                    nce_instance(&batch, sel),
                    nce_oracle(x, y, &labels, tau, true, false),
                ),
                (
                    nce_category(&batch, sel),
                    nce_oracle(x, y, &labels, tau, false, true),
                ),
                (
                    unified_cl(&batch, sel),
                    nce_oracle(x, y, &labels, tau, true, true),
                ),
            ];
            for (got, want) in pairs {
                let got = got.map_err(|e| e.to_string())?.value;
                let err = (got - want).abs();
                worst = worst.max(err);
                if !(err <= 1e-10) {
                    return fail(format!("case {case} {sel:?}: {got} vs oracle {want}"));
                }
            }
        }
    }
    Ok(format!("{cases} cases, max abs err {worst:.1e}"))
}

fn monotone_transform(kind: usize, a: f64, b: f64) -> impl Fn(f64) -> f64 {
    move |x: f64| match kind {
        0 => a * x + b,
        1 => x.exp(),
        2 => x * x * x + b,
        3 => x.atan(),
        4 => (a * x).sinh(),
        _ => 1.0 / (1.0 + (-x).exp()),
    }
}

/// Codes unchanged under strictly increasing maps; labels shrink as the
/// threshold grows.
pub fn wta_invariances(cases: usize, seed: u64) -> Check {
    let mut rng = Rng::new(seed);
    for case in 0..cases {
        let d = 2 + rng.below(31);
        let h = 1 + rng.below(32);
        let k = 2 + rng.below(d.min(8) - 1);
        let hasher = WtaHasher::build(d, h, k, 0, &mut rng).map_err(|e| e.to_string())?;
        let z: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
        let f = monotone_transform(rng.below(6), rng.uniform_range(0.1, 3.0), rng.normal());
        let fz: Vec<f64> = z.iter().map(|&x| f(x)).collect();
        let (c1, c2) = (
            hasher.hash(&z).map_err(|e| e.to_string())?,
            hasher.hash(&fz).map_err(|e| e.to_string())?,
        );
        if c1 != c2 {
            return fail(format!("case {case}: code changed under a monotone map"));
        }
    }
    let mono_cases = cases / 10;
    for case in 0..mono_cases {
        let d = 4 + rng.below(12);
        let h = 4 + rng.below(28);
        let m = 2 + rng.below(15);
        let perms: Vec<Vec<usize>> = (0..h).map(|_| rng.permutation(d)).collect();
        let z = tensor(&random_matrix(&mut rng, m, d));
        let mut prev: Option<PairLabelMatrix> = None;
        for mu in 0..=h {
            let hasher = WtaHasher::from_permutations(perms.clone(), 4.min(d), mu)
                .map_err(|e| e.to_string())?;
            let s = pairwise_labels(&PairLabeler::Wta(hasher), &z).map_err(|e| e.to_string())?;
            if let Some(p) = &prev {
                for i in 0..m {
                    for j in 0..m {
                        if s.get(i, j) && !p.get(i, j) {
                            return fail(format!("case {case}: s({i},{j}) rose at mu={mu}"));
                        }
                    }
                }
            }
            prev = Some(s);
        }
    }
    Ok(format!(
        "{cases} transform cases, {mono_cases} threshold sweeps"
    ))
}

/// Ramp endpoints and the degenerate contrastive batches.
pub fn closed_forms() -> Check {
    for (lambda, t) in [(1.0, 60.0), (0.3, 7.0), (2.5, 1.0), (10.0, 200.0)] {
        let end = ramp_weight(RampSchedule {
            lambda,
            total_epochs: t,
            epoch: t,
        })
        .map_err(|e| e.to_string())?;
        if end != lambda {
            return fail(format!("omega(T) = {end} for lambda {lambda}"));
        }
        let start = ramp_weight(RampSchedule {
            lambda,
            total_epochs: t,
            epoch: 0.0,
        })
        .map_err(|e| e.to_string())?;
        if !((start / lambda - (-5.0f64).exp()).abs() <= 1e-12) {
            return fail(format!("omega(0)/lambda = {}", start / lambda));
        }
    }

    let mut rng = Rng::new(5);
    for _ in 0..20 {
        let z = tensor(&unit_rows(&random_matrix(&mut rng, 2, 3)));
        let labels = [None, None];
        let batch = ContrastiveBatch {
            visual: &z,
            audio: None,
            labels: &labels,
            tau: rng.uniform_range(0.1, 2.0),
        };
        let v = nce_instance(&batch, ModalitySelectors::VISUAL)
            .map_err(|e| e.to_string())?
            .value;
        if v.abs() > 1e-15 {
            return fail(format!("single-pair instance loss is {v}"));
        }
    }

    let ln3 = 3f64.ln();
    let same = tensor(&vec![vec![0.6, 0.0, 0.8]; 4]);
    let cases: [(&str, [Option<usize>; 4], NceFn); 4] = [
        ("instance", [None; 4], nce_instance),
        ("category, one class", [Some(0); 4], nce_category),
        (
            "category, two classes",
            [Some(0), Some(0), Some(1), Some(1)],
            nce_category,
        ),
        (
            "instance, labelled",
            [Some(0), Some(0), Some(1), Some(1)],
            nce_instance,
        ),
    ];
    for (name, labels, f) in cases {
        let batch = ContrastiveBatch {
            visual: &same,
            audio: None,
            labels: &labels,
            tau: 0.5,
        };
        let v = f(&batch, ModalitySelectors::VISUAL)
            .map_err(|e| e.to_string())?
            .value;
        if !((v - ln3).abs() <= 1e-9) {
            return fail(format!("identical embeddings, {name}: {v} vs ln 3"));
        }
    }
    Ok("omega(T)=lambda, omega(0)/lambda=e^-5, single pair 0, identical views ln 3".into())
}
