//! Acceptance suite. Prints one PASS or FAIL line per criterion and exits
//! nonzero when any criterion fails.

mod checks;
mod common;

use std::time::{Duration, Instant};

use checks::Check;
use ncd_core::data::{Dataset, SyntheticSpec};
use ncd_core::losses::ModalitySelectors;
use ncd_core::model::ModelState;
use ncd_core::pairing::PairStrategy;
use ncd_core::trainer::{
    evaluate, kmeans_baseline, metrics_csv, train, tune_wta, RunConfig, TrainOutcome,
};

struct Suite {
    failed: Vec<&'static str>,
}

impl Suite {
    fn run(&mut self, name: &'static str, limit: Option<Duration>, f: impl FnOnce() -> Check) {
        let start = Instant::now();
        let result = f();
        let took = start.elapsed();
        let result = match (result, limit) {
            (Ok(d), Some(l)) if took > l => Err(format!("{d}; took {took:.1?}, limit {l:?}")),
            (r, _) => r,
        };
        match result {
            Ok(detail) => println!("PASS {name}: {detail} [{took:.1?}]"),
            Err(detail) => {
                println!("FAIL {name}: {detail} [{took:.1?}]");
                self.failed.push(name);
            }
        }
    }
}

fn benchmark() -> RunConfig {
    let cfg = RunConfig::default();
    let spec = &cfg.synthetic;
    assert_eq!(
        (
            spec.labelled_classes,
            spec.unlabelled_classes,
            spec.per_class,
            spec.seed
        ),
        (6, 4, 100, 0)
    );
    assert_eq!(
        (spec.class_sep, spec.intra_sigma, cfg.epochs),
        (10.0, 1.0, 60)
    );
    cfg
}

fn acc_of(cfg: &RunConfig, ds: &Dataset) -> Result<f64, String> {
    let run = train(cfg, ds).map_err(|e| e.to_string())?;
    Ok(run.final_acc().expect("at least one epoch"))
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn fmt(v: &[f64]) -> String {
    v.iter()
        .map(|a| format!("{a:.4}"))
        .collect::<Vec<_>>()
        .join("/")
}

fn main() {
    let mut suite = Suite { failed: Vec::new() };

    suite.run(
        "gradient correctness",
        Some(Duration::from_secs(60)),
        || checks::gradients(50, 50),
    );

    suite.run(
        "brute-force oracle equivalence",
        Some(Duration::from_secs(120)),
        || {
            Ok([
                checks::pairing_oracles(300, 1)?,
                checks::hungarian_oracle(300, 2)?,
                checks::acc_oracle_check(500, 3)?,
                checks::nce_oracle_check(200, 4)?,
            ]
            .join("; "))
        },
    );

    suite.run("wta invariances", None, || checks::wta_invariances(1000, 8));

    suite.run("closed forms", None, checks::closed_forms);

    let cfg = benchmark();
    let ds = cfg.load_dataset().expect("benchmark data");
    let mut full_run: Option<TrainOutcome> = None;

    suite.run(
        "end-to-end synthetic benchmark",
        Some(Duration::from_secs(600)),
        || {
            let run = train(&cfg, &ds).map_err(|e| e.to_string())?;
            let acc = run.final_acc().expect("at least one epoch");
            full_run = Some(run);
            let base = kmeans_baseline(&cfg, &ds).map_err(|e| e.to_string())?;
            let detail = format!(
                "acc {acc:.4}, k-means baseline {:.4}, gap {:.4}",
                base.acc,
                acc - base.acc
            );
            if acc >= 0.90 && acc - base.acc >= 0.05 {
                Ok(detail)
            } else {
                Err(detail)
            }
        },
    );

    suite.run("ablation directionality", None, || {
        let seeds = [0u64, 1, 2];
        let (mut full, mut no_bce, mut no_cl) = (Vec::new(), Vec::new(), Vec::new());
        for &seed in &seeds {
            let base = RunConfig { seed, ..cfg.clone() };
            full.push(match (&full_run, seed) {
                (Some(r), 0) => r.final_acc().expect("at least one epoch"),
                _ => acc_of(&base, &ds)?,
            });
            let mut c = base.clone();
            c.ablation.bce = false;
            no_bce.push(acc_of(&c, &ds)?);
            let mut c = base.clone();
            c.ablation.nce_i = false;
            c.ablation.nce_c = false;
            no_cl.push(acc_of(&c, &ds)?);
        }
        let (bce_drop, cl_drop) = (mean(&full) - mean(&no_bce), mean(&full) - mean(&no_cl));
        let detail = format!(
            "full {} no-bce {} no-cl {}; bce drop {bce_drop:.4} (>=0.3), cl drop {cl_drop:.4} (>=0.03)",
            fmt(&full),
            fmt(&no_bce),
            fmt(&no_cl)
        );
        if bce_drop >= 0.3 && cl_drop >= 0.03 {
            Ok(detail)
        } else {
            Err(detail)
        }
    });

    let selectors = [
        ("within visual", ModalitySelectors::VISUAL),
        ("within audio", ModalitySelectors::AUDIO),
        ("cross visual-audio", ModalitySelectors::CROSS),
    ];
    let mut report = Vec::new();
    for (name, sel) in selectors {
        let c = RunConfig {
            instance_selectors: Some(vec![sel]),
            category_selectors: Some(vec![sel]),
            ..cfg.clone()
        };
        match acc_of(&c, &ds) {
            Ok(a) => report.push(format!("{name} {a:.4}")),
            Err(e) => report.push(format!("{name} error: {e}")),
        }
    }
    println!("INFO selector report: {}", report.join(", "));

    suite.run("determinism and persistence", None, || {
        let first = full_run.as_ref().ok_or("benchmark run failed")?;
        let second = train(&cfg, &ds).map_err(|e| e.to_string())?;
        if metrics_csv(&first.history) != metrics_csv(&second.history) {
            return Err("metrics.csv differs between two runs with the same seed".into());
        }
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        first.write_to(dir.path()).map_err(|e| e.to_string())?;
        let a = std::fs::read(dir.path().join("metrics.csv")).map_err(|e| e.to_string())?;
        second.write_to(dir.path()).map_err(|e| e.to_string())?;
        let b = std::fs::read(dir.path().join("metrics.csv")).map_err(|e| e.to_string())?;
        if a != b {
            return Err("metrics.csv files differ byte-wise".into());
        }
        let saved = RunConfig::load(&dir.path().join("config.json")).map_err(|e| e.to_string())?;
        let dims = saved.model_dims().map_err(|e| e.to_string())?;
        let model =
            ModelState::load(dims, &dir.path().join("final.ckpt")).map_err(|e| e.to_string())?;
        let acc = evaluate(&model, &ds.eval_set().map_err(|e| e.to_string())?)
            .map_err(|e| e.to_string())?;
        let logged = second.final_acc().expect("at least one epoch");
        if acc.to_bits() != logged.to_bits() {
            return Err(format!("reloaded acc {acc} vs logged {logged}"));
        }
        Ok(format!(
            "metrics identical over {} epochs; reloaded acc {acc:.4} matches bitwise",
            first.history.len()
        ))
    });

    suite.run("wta tuning on labelled data", None, || {
        let mu_grid = [24, 30, 36];
        let k_grid = [2, 4];
        let tune_cfg = RunConfig {
            num_unlabelled_classes: Some(SyntheticSpec::default().unlabelled_classes),
            ..cfg.clone()
        };
        let labelled = ds.labelled_only().map_err(|e| e.to_string())?;
        let tuned = tune_wta(&tune_cfg, &labelled, &mu_grid, &k_grid).map_err(|e| e.to_string())?;
        let mut cells = Vec::new();
        for &mu in &mu_grid {
            for &k in &k_grid {
                let c = RunConfig {
                    strategy: PairStrategy::Wta {
                        code_len: None,
                        window: k,
                        threshold: Some(mu),
                    },
                    ..cfg.clone()
                };
                cells.push((mu, k, acc_of(&c, &ds)?));
            }
        }
        let best = cells.iter().map(|c| c.2).fold(f64::NEG_INFINITY, f64::max);
        let chosen = cells
            .iter()
            .find(|c| (c.0, c.1) == (tuned.threshold, tuned.window))
            .expect("chosen cell is in the grid")
            .2;
        let table = cells
            .iter()
            .map(|(m, k, a)| format!("({m},{k})={a:.4}"))
            .collect::<Vec<_>>()
            .join(" ");
        let detail = format!(
            "chose mu={} k={} with downstream acc {chosen:.4}, grid best {best:.4}; {table}",
            tuned.threshold, tuned.window
        );
        if chosen >= best - 0.02 {
            Ok(detail)
        } else {
            Err(detail)
        }
    });

    if suite.failed.is_empty() {
        println!("acceptance: all criteria passed");
    } else {
        println!(
            "acceptance: {} failed: {}",
            suite.failed.len(),
            suite.failed.join(", ")
        );
        std::process::exit(1);
    }
}
