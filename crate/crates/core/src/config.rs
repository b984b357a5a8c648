// SPDX-License-Identifier: Apache-2.0

//! Run configuration: TOML sections with strict keys, `section.key=value`
//! overrides, and the `LITHOHOD_SEED` environment override.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::boxes::AnchorConfig;
use crate::error::{Error, Result};
use crate::layout::{GenSpec, OracleRules};
use crate::litho::LithoParams;
use crate::loss::LossConfig;
use crate::model::ModelConfig;

pub const SEED_ENV: &str = "LITHOHOD_SEED";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    pub dataset: PathBuf,
    pub output: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self { dataset: "data".into(), output: "run".into() }
    }
}

/// Synthetic dataset recipe: training clips are cut at random offsets from
/// their own layouts, test clips tile separate layouts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub seed: u64,
    pub clip_size: usize,
    pub train_layouts: usize,
    pub train_layout_size: usize,
    pub train_clips: usize,
    pub test_layouts: usize,
    pub test_layout_size: usize,
    pub density: f64,
    pub wire_width: (usize, usize),
    pub spacing: (usize, usize),
    pub via_fraction: f64,
    pub bend_fraction: f64,
    pub bump_fraction: f64,
    pub bump_gap: usize,
    pub bump_length: (usize, usize),
    pub pitch_nm: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        let g = GenSpec::default();
        Self {
            seed: 0,
            clip_size: 256,
            train_layouts: 16,
            train_layout_size: 1024,
            train_clips: 500,
            test_layouts: 1,
            test_layout_size: 2560,
            density: g.density,
            wire_width: g.wire_width,
            spacing: g.spacing,
            via_fraction: g.via_fraction,
            bend_fraction: g.bend_fraction,
            bump_fraction: g.bump_fraction,
            bump_gap: g.bump_gap,
            bump_length: g.bump_length,
            pitch_nm: g.pitch_nm,
        }
    }
}

impl DataConfig {
    /// Generator settings for one `size` x `size` layout.
    pub fn gen_spec(&self, size: usize, seed: u64) -> GenSpec {
        GenSpec {
            height: size,
            width: size,
            wire_width: self.wire_width,
            spacing: self.spacing,
            density: self.density,
            seed,
            via_fraction: self.via_fraction,
            bend_fraction: self.bend_fraction,
            bump_fraction: self.bump_fraction,
            bump_gap: self.bump_gap,
            bump_length: self.bump_length,
            pitch_nm: self.pitch_nm,
            ..GenSpec::default()
        }
    }
}

/// Learning-rate schedule over the whole run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Schedule {
    Constant,
    /// Half-cosine decay from `lr` to zero at the last step.
    Cosine,
}

impl Schedule {
    /// Multiplier on the base rate at `step` of `total`.
    pub fn factor(self, step: usize, total: usize) -> f64 {
        match self {
            Schedule::Constant => 1.0,
            Schedule::Cosine => 0.5 * (1.0 + (std::f64::consts::PI * step as f64 / total.max(1) as f64).cos()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub schedule: Schedule,
    pub batch_size: usize,
    pub epochs: usize,
    pub weight_decay: f64,
    /// Global gradient-norm ceiling; 0 disables clipping.
    pub clip_grad_norm: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { lr: 1e-4, schedule: Schedule::Constant, batch_size: 4, epochs: 50, weight_decay: 0.0, clip_grad_norm: 0.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub match_iou: f64,
    pub nms_iou: f64,
    pub score_floor: f64,
    pub max_detections: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { match_iou: 0.5, nms_iou: 0.5, score_floor: 0.05, max_detections: 100 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Model initialisation and shuffling seed.
    pub seed: u64,
    pub paths: Paths,
    pub data: DataConfig,
    pub oracle: OracleRules,
    pub litho: LithoParams,
    pub model: ModelConfig,
    pub anchors: AnchorConfig,
    pub loss: LossConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

fn config_err(e: toml::de::Error) -> Error {
    let msg = e.message().to_string();
    // serde names the offending key in backticks: "unknown field `foo`, ..."
    let key = msg
        .split('`')
        .nth(1)
        .map(str::to_string)
        .unwrap_or_else(|| "<config>".into());
    Error::Config { key, reason: msg.trim().to_string() }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        Self::from_table(toml::from_str::<toml::Table>(text).map_err(config_err)?)
    }

    fn from_table(t: toml::Table) -> Result<Self> {
        let cfg: RunConfig = toml::Value::Table(t).try_into().map_err(config_err)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads `path` (defaults when `None`), applies `overrides` of the form
    /// `section.key=value` in order, then the seed environment variable.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| match e.kind() {
                    std::io::ErrorKind::NotFound => Error::MissingFile(p.to_path_buf()),
                    _ => Error::Io(e),
                })?;
                toml::from_str::<toml::Table>(&text).map_err(config_err)?
            }
            None => toml::Table::new(),
        };
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        if let Ok(s) = std::env::var(SEED_ENV) {
            let seed: i64 = s
                .trim()
                .parse()
                .map_err(|_| Error::Config { key: SEED_ENV.into(), reason: format!("`{s}` is not an integer") })?;
            table.insert("seed".into(), toml::Value::Integer(seed));
        }
        Self::from_table(table)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, reason: &str| Err(Error::Config { key: key.into(), reason: reason.into() });
        self.model.validate()?;
        if self.data.clip_size == 0 || self.data.clip_size % 32 != 0 {
            return bad("data.clip_size", "must be a positive multiple of 32");
        }
        if self.data.train_layout_size < self.data.clip_size || self.data.test_layout_size < self.data.clip_size {
            return bad("data.train_layout_size", "layouts must be at least one clip wide");
        }
        if !(self.litho.blur_sigma_px > 0.0) {
            return bad("litho.blur_sigma_px", "must be positive");
        }
        if !(self.litho.threshold > 0.0 && self.litho.threshold < 1.0) {
            return bad("litho.threshold", "must lie in (0, 1)");
        }
        if self.anchors.scales.is_empty() || self.anchors.ratios.is_empty() {
            return bad("anchors.scales", "scales and ratios must be non-empty");
        }
        if self.train.batch_size == 0 {
            return bad("train.batch_size", "must be positive");
        }
        if !(self.train.lr > 0.0) {
            return bad("train.lr", "must be positive");
        }
        if !(0.0..=1.0).contains(&self.eval.match_iou) {
            return bad("eval.match_iou", "must lie in [0, 1]");
        }
        Ok(())
    }
}

/// Applies one `a.b.c=value` override; the value is parsed as TOML and falls
/// back to a bare string.
pub fn apply_override(table: &mut toml::Table, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::Config { key: spec.into(), reason: "override must look like section.key=value".into() })?;
    let key = key.trim();
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.trim().to_string()));
    let parts: Vec<&str> = key.split('.').collect();
    let mut cur = table;
    for p in &parts[..parts.len() - 1] {
        let entry = cur.entry(p.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config { key: key.into(), reason: format!("`{p}` is not a section") })?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_carry_reference_constants() {
        let c = RunConfig::default();
        assert_eq!((c.loss.alpha, c.loss.gamma, c.loss.lambda), (0.25, 2.0, 0.02));
        assert_eq!(c.anchors.scales, vec![0.25, 0.5, 1.0, 2.0]);
        assert_eq!(c.anchors.ratios, vec![0.5, 1.0, 2.0]);
        assert_eq!(c.model.input_size, 512);
    }

    #[test]
    fn roundtrip_and_overrides() {
        let c = RunConfig::default();
        assert_eq!(RunConfig::from_toml(&c.to_toml()).unwrap(), c);
        let mut t = toml::from_str::<toml::Table>(&c.to_toml()).unwrap();
        apply_override(&mut t, "model.depth=18").unwrap();
        apply_override(&mut t, "paths.output=out/x").unwrap();
        let c2 = RunConfig::from_table(t).unwrap();
        assert_eq!(c2.model.depth, 18);
        assert_eq!(c2.paths.output, PathBuf::from("out/x"));
    }

    #[test]
    fn unknown_keys_name_the_key() {
        match RunConfig::from_toml("[model]\ndepht = 18\n") {
            Err(Error::Config { key, .. }) => assert_eq!(key, "depht"),
            other => panic!("{other:?}"),
        }
        match RunConfig::from_toml("[model]\ndepth = 19\n") {
            Err(Error::Config { key, .. }) => assert_eq!(key, "model.depth"),
            other => panic!("{other:?}"),
        }
    }
}
