//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! Criteria 1 to 6 are the numerical suites, 7 and 8 train desk-scale models
//! from `configs/desk.toml` (about an hour on one core), 9 repeats a small
//! pipeline twice through the CLI entry points.

use std::path::{Path, PathBuf};
use std::time::Instant;

use lithohod::cli;
use lithohod::config::RunConfig;
use lithohod::metrics::EvalReport;
use lithohod::verify;

/// Wall-clock budget for training the desk model.
const TRAIN_BUDGET_S: f64 = 30.0 * 60.0;
const MIN_RECALL: f64 = 0.8;
const MIN_AUC: f64 = 0.6;
const ABLATION_SEEDS: [u64; 3] = [0, 1, 2];
/// Epochs per ablation run; the ordering is compared, not the absolute level.
const ABLATION_EPOCHS: usize = 15;
/// Recall at which false alarms are compared.
const MATCHED_RECALL: f64 = 0.8;

fn desk() -> RunConfig {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/desk.toml");
    RunConfig::load(Some(&path), &[]).expect("desk config")
}

fn line(n: usize, passed: bool, detail: String) -> bool {
    println!("criterion {n}: {} {detail}", if passed { "PASS" } else { "FAIL" });
    passed
}

fn suite(n: usize, checks: &[verify::Check]) -> bool {
    let passed = checks.iter().all(|c| c.passed);
    let detail = checks.iter().map(|c| format!("[{}] {}", c.name, c.detail)).collect::<Vec<_>>().join("; ");
    line(n, passed, detail)
}

/// Generates, trains and evaluates into `root`; returns the report and the
/// training wall-clock seconds.
fn pipeline(cfg: &RunConfig, root: &Path) -> (EvalReport, f64) {
    let (data, run) = (root.join("data"), root.join("run"));
    cli::gen_data(cfg, &data).expect("gen-data");
    let t0 = Instant::now();
    cli::train(cfg, &data, &run).expect("train");
    let secs = t0.elapsed().as_secs_f64();
    let report = cli::eval(cfg, &run.join(cli::CHECKPOINT), &data, &run, false).expect("eval");
    (report, secs)
}

/// False alarms at the loosest threshold whose recall first reaches `r`.
fn fa_at_recall(report: &EvalReport, r: f64) -> Option<usize> {
    report.curve.iter().find(|p| p.tpr >= r).map(|p| p.fa)
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("lithohod-acceptance-{}-{name}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    dir
}

fn main() {
    let t0 = Instant::now();
    let mut ok = true;
    ok &= suite(1, &[verify::gradient_suite(20, 1)]);
    ok &= suite(2, &[verify::attention_normalization(10, 2)]);
    ok &= suite(3, &[verify::shape_conformance()]);
    ok &= suite(4, &[verify::loss_oracles()]);
    ok &= suite(5, &[verify::iou_monte_carlo(100, 3), verify::nms_bruteforce(100, 4)]);
    ok &= suite(6, &[verify::matching_bruteforce(50, 1000, 5)]);

    let cfg = desk();
    let dir = scratch("desk");
    let (report, secs) = pipeline(&cfg, &dir);
    ok &= line(
        7,
        secs <= TRAIN_BUDGET_S && report.recall >= MIN_RECALL && report.auc >= MIN_AUC,
        format!(
            "train {secs:.0}s (budget {TRAIN_BUDGET_S:.0}s), recall@0.5 {:.3} (min {MIN_RECALL}), auc {:.3} (min {MIN_AUC}), fa {}",
            report.recall, report.auc, report.fa
        ),
    );
    let _ = std::fs::remove_dir_all(&dir);

    // one dataset, three variants per seed
    let data = scratch("ablation");
    cli::gen_data(&cfg, &data).expect("gen-data");
    let mut auc = [0.0f64; 3];
    let mut fa: [Vec<Option<usize>>; 3] = Default::default();
    for seed in ABLATION_SEEDS {
        for (v, (detector_only, no_ca)) in [(false, false), (true, false), (false, true)].into_iter().enumerate() {
            let mut c = cfg.clone();
            c.seed = seed;
            c.train.epochs = ABLATION_EPOCHS;
            c.model.detector_only = detector_only;
            c.model.no_channel_attention = no_ca;
            let run = data.join(format!("run-{seed}-{v}"));
            cli::train(&c, &data, &run).expect("train");
            let r = cli::eval(&c, &run.join(cli::CHECKPOINT), &data, &run, false).expect("eval");
            auc[v] += r.auc / ABLATION_SEEDS.len() as f64;
            fa[v].push(fa_at_recall(&r, MATCHED_RECALL));
        }
    }
    let mean_fa = |v: &[Option<usize>]| -> Option<f64> {
        v.iter().map(|x| x.map(|f| f as f64)).sum::<Option<f64>>().map(|s| s / v.len() as f64)
    };
    let (fa_full, fa_no_ca) = (mean_fa(&fa[0]), mean_fa(&fa[2]));
    let fa_ok = matches!((fa_full, fa_no_ca), (Some(a), Some(b)) if b > a);
    ok &= line(
        8,
        auc[0] >= auc[1] && fa_ok,
        format!(
            "mean auc full {:.4} / detector_only {:.4} / no_channel_attention {:.4}; mean fa at recall {MATCHED_RECALL}: full {fa_full:?}, no_channel_attention {fa_no_ca:?}",
            auc[0], auc[1], auc[2]
        ),
    );
    let _ = std::fs::remove_dir_all(&data);

    let small: Vec<String> = [
        "model.depth=18", "model.base_width=8", "model.fpn_channels=16", "model.input_size=64", "model.norm_groups=4",
        "data.train_layouts=1", "data.train_layout_size=512", "data.train_clips=16", "data.test_layout_size=512",
        "train.epochs=2",
    ]
    .map(String::from)
    .to_vec();
    let small = RunConfig::load(None, &small).expect("small config");
    let (a, b) = (scratch("repro-a"), scratch("repro-b"));
    pipeline(&small, &a);
    // the second run starts from the first run's snapshot
    let snap = RunConfig::load(Some(&a.join("run/config.toml")), &[]).expect("snapshot");
    pipeline(&snap, &b);
    let read = |d: &Path| std::fs::read(d.join("run/report.json")).expect("report");
    let same = read(&a) == read(&b);
    ok &= line(9, same, format!("report.json identical: {same}"));
    let _ = std::fs::remove_dir_all(&a);
    let _ = std::fs::remove_dir_all(&b);

    println!("acceptance finished in {:.0}s", t0.elapsed().as_secs_f64());
    if !ok {
        std::process::exit(1);
    }
}
