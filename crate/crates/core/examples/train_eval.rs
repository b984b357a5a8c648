//! End to end on a tiny configuration: generate, train a few epochs,
//! evaluate on the tiled test layout.

use std::collections::BTreeMap;

use lithohod::config::RunConfig;
use lithohod::dataset::{generate, prepare};
use lithohod::litho::Simulator;
use lithohod::metrics::evaluate;
use lithohod::pipeline::{detect, train, Model};

fn main() -> lithohod::Result<()> {
    let mut cfg = RunConfig::default();
    cfg.model.depth = 18;
    cfg.model.base_width = 8;
    cfg.model.fpn_channels = 16;
    cfg.model.input_size = 128;
    cfg.model.input_fold = 2;
    cfg.model.norm_groups = 4;
    cfg.data.train_layouts = 4;
    cfg.data.train_clips = 64;
    cfg.data.test_layout_size = 768;
    cfg.train.epochs = 5;
    cfg.train.lr = 1e-3;

    let sim = Simulator::new(cfg.litho.clone())?;
    let (train_set, test_set) = generate(&cfg.data, &sim, &cfg.oracle)?;
    let (train_set, test_set) = (prepare(train_set, &sim)?, prepare(test_set, &sim)?);
    println!("{} train clips, {} test clips", train_set.len(), test_set.len());

    let mut model = Model::new(&cfg)?;
    train(&mut model, &train_set, |_, log| {
        println!("epoch {} loss {:.4} (focal {:.4}, reg {:.4}, diou {:.4})", log.epoch, log.total, log.focal, log.box_reg, log.diou);
        Ok(())
    })?;

    let gts: BTreeMap<_, _> = test_set.iter().map(|p| (p.sample.clip.id.clone(), p.sample.boxes.clone())).collect();
    let report = evaluate(&detect(&model, &test_set)?, &gts, test_set.len(), cfg.eval.match_iou)?;
    println!("recall {:.3}  fa {}  fn {}  ap {:.3}  auc {:.3}", report.recall, report.fa, report.fn_, report.ap, report.auc);
    Ok(())
}
