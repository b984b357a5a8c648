// SPDX-License-Identifier: Apache-2.0

//! Command-line surface. Every subcommand resolves the run configuration
//! first and writes a `config.toml` snapshot next to its outputs.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::checkpoint;
use crate::config::RunConfig;
use crate::dataset::{self, Prepared, Sample};
use crate::error::{Error, Result};
use crate::io;
use crate::layout::{LayoutClip, HotspotBox};
use crate::litho::Simulator;
use crate::metrics::{evaluate, CurvePoint, EvalReport};
use crate::pipeline::{self, EpochLog, Model};
use crate::verify;

#[derive(Debug, Parser)]
#[command(name = "lithohod", version, about = "Simulator-guided layout hotspot detection")]
pub struct Cli {
    /// TOML run configuration; defaults apply to missing keys.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// `section.key=value` override, applied after the file. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate layouts, clip them and label hotspots into a dataset directory.
    GenData {
        /// Dataset root; defaults to `paths.dataset`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Simulate one clip: writes `resist.png`, `aerial.png` and `deformation.bin`.
    LithoSim {
        /// Binary clip PNG (0/255).
        #[arg(long)]
        clip: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train on `<dataset>/train`; writes `model.ckpt` and `loss_log.jsonl`.
    Train {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate on `<dataset>/test`; writes `report.json`, `curve.csv` and
    /// `detections.jsonl`.
    Eval(EvalArgs),
    /// Run a checkpoint on clip PNGs and write detections as JSON lines.
    Detect {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Output `.jsonl` file.
        #[arg(long)]
        out: PathBuf,
        #[arg(required = true)]
        clips: Vec<PathBuf>,
    },
    /// Run the built-in property suites.
    Selftest,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Defaults to `<paths.output>/model.ckpt`.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also render the curve as `curve.png`.
    #[arg(long)]
    pub plot: bool,
}

/// Process exit status for an error: 2 invalid configuration, 3 missing
/// input file, 1 anything else.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config { .. } => 2,
        Error::MissingFile(_) => 3,
        _ => 1,
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let cfg = RunConfig::load(cli.config.as_deref(), &cli.overrides)?;
    match cli.command {
        Command::GenData { out } => gen_data(&cfg, &out.unwrap_or_else(|| cfg.paths.dataset.clone())),
        Command::LithoSim { clip, out } => litho_sim(&cfg, &clip, &out),
        Command::Train { data, out } => {
            let data = data.unwrap_or_else(|| cfg.paths.dataset.clone());
            let out = out.unwrap_or_else(|| cfg.paths.output.clone());
            train(&cfg, &data, &out).map(|_| ())
        }
        Command::Eval(a) => {
            let out = a.out.unwrap_or_else(|| cfg.paths.output.clone());
            let ckpt = a.checkpoint.unwrap_or_else(|| cfg.paths.output.join(CHECKPOINT));
            let data = a.data.unwrap_or_else(|| cfg.paths.dataset.clone());
            let report = eval(&cfg, &ckpt, &data, &out, a.plot)?;
            println!(
                "recall {:.4}  fa {}  fn {}  ap {:.4}  auc {:.4}  ({:.2}s)",
                report.recall, report.fa, report.fn_, report.ap, report.auc, report.runtime_s
            );
            Ok(())
        }
        Command::Detect { checkpoint, out, clips } => detect(&cfg, &checkpoint, &clips, &out),
        Command::Selftest => {
            let checks = verify::run_all();
            for c in &checks {
                println!("{} {:<28} {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
            }
            match checks.iter().filter(|c| !c.passed).count() {
                0 => Ok(()),
                n => Err(Error::invalid("selftest", format!("{n} suite(s) failed"))),
            }
        }
    }
}

pub const CHECKPOINT: &str = "model.ckpt";

fn snapshot(cfg: &RunConfig, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("config.toml"), cfg.to_toml())?;
    Ok(())
}

pub fn gen_data(cfg: &RunConfig, out: &Path) -> Result<()> {
    let sim = Simulator::new(cfg.litho.clone())?;
    let (train, test) = dataset::generate(&cfg.data, &sim, &cfg.oracle)?;
    dataset::write_dataset(out, &train, &test)?;
    snapshot(cfg, out)?;
    let count = |s: &[Sample]| s.iter().map(|s| s.boxes.len()).sum::<usize>();
    println!(
        "train: {} clips, {} hotspots; test: {} clips, {} hotspots -> {}",
        train.len(),
        count(&train),
        test.len(),
        count(&test),
        out.display()
    );
    Ok(())
}

fn read_clip(path: &Path, pitch_nm: f64) -> Result<LayoutClip> {
    let raster = io::read_bitmap_png(path)?;
    let id = path.file_stem().map_or_else(|| "clip".into(), |s| s.to_string_lossy().into_owned());
    let polygons = dataset::polygons_from_raster(&raster);
    let clip = LayoutClip { id, raster, pitch_nm, polygons };
    clip.validate()?;
    Ok(clip)
}

pub fn litho_sim(cfg: &RunConfig, clip: &Path, out: &Path) -> Result<()> {
    let clip = read_clip(clip, cfg.data.pitch_nm)?;
    let r = Simulator::new(cfg.litho.clone())?.simulate(&clip)?;
    snapshot(cfg, out)?;
    io::write_bitmap_png(&out.join("resist.png"), &r.resist)?;
    let aerial: Vec<u8> = r.aerial.data().iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
    io::write_gray_png(&out.join("aerial.png"), clip.width(), clip.height(), &aerial)?;
    io::write_deformation(&out.join("deformation.bin"), &r.deformation)?;
    println!(
        "{}: resist fill {:.3}, mean deformation {:.3} px, {} capped",
        clip.id,
        r.resist.fill_fraction(),
        r.deformation.mean_magnitude(),
        r.deformation.capped
    );
    Ok(())
}

fn load_split(cfg: &RunConfig, dir: &Path) -> Result<Vec<Prepared>> {
    let sim = Simulator::new(cfg.litho.clone())?;
    dataset::prepare(dataset::read_split(dir)?, &sim)
}

/// Trains from scratch, checkpointing after every epoch so a divergence
/// leaves the last finite model on disk.
pub fn train(cfg: &RunConfig, data: &Path, out: &Path) -> Result<Vec<EpochLog>> {
    let samples = load_split(cfg, &data.join("train"))?;
    snapshot(cfg, out)?;
    let mut model = Model::new(cfg)?;
    let log_path = out.join("loss_log.jsonl");
    let mut log = std::fs::File::create(&log_path)?;
    let ckpt = out.join(CHECKPOINT);
    let logs = pipeline::train(&mut model, &samples, |m, e| {
        writeln!(log, "{}", serde_json::to_string(e).expect("log serialises"))?;
        println!(
            "epoch {:>3}  loss {:.5}  (focal {:.5}  box {:.5}  diou {:.5})  {:.1}s",
            e.epoch, e.total, e.focal, e.box_reg, e.diou, e.seconds
        );
        checkpoint::save(&ckpt, m)
    })?;
    Ok(logs)
}

fn ground_truth(data: &[Prepared]) -> BTreeMap<String, Vec<HotspotBox>> {
    data.iter().map(|p| (p.sample.clip.id.clone(), p.sample.boxes.clone())).collect()
}

/// Scores a checkpoint on the test split. The checkpoint carries its own
/// model config; evaluation settings come from `cfg`.
pub fn eval(cfg: &RunConfig, ckpt: &Path, data: &Path, out: &Path, plot: bool) -> Result<EvalReport> {
    let mut model = checkpoint::load(ckpt)?;
    model.cfg.eval = cfg.eval.clone();
    let test = load_split(&model.cfg, &data.join("test"))?;
    snapshot(cfg, out)?;
    let t0 = std::time::Instant::now();
    let dets = pipeline::detect(&model, &test)?;
    let runtime = t0.elapsed().as_secs_f64();
    let mut report = evaluate(&dets, &ground_truth(&test), test.len(), cfg.eval.match_iou)?;
    report.runtime_s = runtime;
    io::write_json(&out.join("report.json"), &report)?;
    io::write_jsonl(&out.join("detections.jsonl"), &dets)?;
    write_curve_csv(&out.join("curve.csv"), &report.curve)?;
    if plot {
        plot_curve(&out.join("curve.png"), &report.curve)?;
    }
    Ok(report)
}

pub fn write_curve_csv(path: &Path, curve: &[CurvePoint]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "threshold,tpr,fa")?;
    for p in curve {
        writeln!(f, "{},{},{}", p.threshold, p.tpr, p.fa)?;
    }
    f.flush()?;
    Ok(())
}

/// Step plot of TPR against false alarms on a white 320x240 canvas.
pub fn plot_curve(path: &Path, curve: &[CurvePoint]) -> Result<()> {
    const W: usize = 320;
    const H: usize = 240;
    const M: usize = 20;
    let mut px = vec![255u8; W * H];
    let (pw, ph) = ((W - 2 * M) as f64, (H - 2 * M) as f64);
    for x in M..W - M {
        px[(H - M) * W + x] = 0;
    }
    for y in M..=H - M {
        px[y * W + M] = 0;
    }
    let fa_max = curve.iter().map(|p| p.fa).max().unwrap_or(0).max(1) as f64;
    let to_px = |fa: f64, tpr: f64| (M + (fa / fa_max * pw).round() as usize, H - M - (tpr * ph).round() as usize);
    let mut prev = to_px(0.0, 0.0);
    for p in curve {
        let next = to_px(p.fa as f64, p.tpr);
        // horizontal then vertical segment
        let (x0, x1) = (prev.0.min(next.0), prev.0.max(next.0));
        (x0..=x1).for_each(|x| px[prev.1 * W + x] = 0);
        let (y0, y1) = (prev.1.min(next.1), prev.1.max(next.1));
        (y0..=y1).for_each(|y| px[y * W + next.0] = 0);
        prev = next;
    }
    io::write_gray_png(path, W, H, &px)
}

pub fn detect(cfg: &RunConfig, ckpt: &Path, clips: &[PathBuf], out: &Path) -> Result<()> {
    let mut model = checkpoint::load(ckpt)?;
    model.cfg.eval = cfg.eval.clone();
    let sim = Simulator::new(model.cfg.litho.clone())?;
    let samples = clips
        .iter()
        .map(|p| Ok(Sample { clip: read_clip(p, model.cfg.data.pitch_nm)?, boxes: Vec::new() }))
        .collect::<Result<Vec<_>>>()?;
    let dets = pipeline::detect(&model, &dataset::prepare(samples, &sim)?)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        snapshot(cfg, dir)?;
    }
    io::write_jsonl(out, &dets)?;
    println!("{} detections -> {}", dets.len(), out.display());
    Ok(())
}
