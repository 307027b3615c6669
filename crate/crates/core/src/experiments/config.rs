use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::graft::GraftConfig;
use crate::saliency::SaliencyKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    SaliencyGrafting,
    Mixup,
    Cutmix,
    TopkDeterministic,
    Vanilla,
}

impl Strategy {
    pub const ALL: [Strategy; 5] = [
        Strategy::SaliencyGrafting,
        Strategy::Mixup,
        Strategy::Cutmix,
        Strategy::TopkDeterministic,
        Strategy::Vanilla,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::SaliencyGrafting => "saliency_grafting",
            Strategy::Mixup => "mixup",
            Strategy::Cutmix => "cutmix",
            Strategy::TopkDeterministic => "topk_deterministic",
            Strategy::Vanilla => "vanilla",
        }
    }

    /// Whether masks are chosen from saliency maps.
    pub fn uses_saliency_masks(self) -> bool {
        matches!(self, Strategy::SaliencyGrafting | Strategy::TopkDeterministic)
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().replace('-', "_");
        Strategy::ALL
            .into_iter()
            .find(|v| v.name() == norm)
            .ok_or_else(|| Error::invalid(format!("unknown strategy `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelMode {
    /// Coefficient from saliency importance ratios.
    Saliency,
    /// Coefficient from the pasted area fraction.
    Area,
}

impl LabelMode {
    pub fn name(self) -> &'static str {
        match self {
            LabelMode::Saliency => "saliency",
            LabelMode::Area => "area",
        }
    }
}

impl fmt::Display for LabelMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LabelMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "saliency" => Ok(LabelMode::Saliency),
            "area" => Ok(LabelMode::Area),
            _ => Err(Error::invalid(format!("unknown label mode `{s}`"))),
        }
    }
}

/// Where the images come from. Without `path`, a shapes dataset is generated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// A bundle directory or a CIFAR binary file.
    pub path: Option<PathBuf>,
    pub classes: usize,
    pub per_class: usize,
    /// Held out per class before any scarcity subsampling.
    pub test_per_class: usize,
    pub image_size: usize,
    /// Seed of the generated images, independent of the training seed.
    pub seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            path: None,
            classes: 10,
            per_class: 200,
            test_per_class: 50,
            image_size: 32,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub strategy: Strategy,
    pub label_mode: LabelMode,
    pub saliency_kind: SaliencyKind,
    pub graft: GraftConfig,
    /// Augmented batches per step.
    pub k_augments: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f32,
    pub momentum: f32,
    pub weight_decay: f32,
    pub seed: u64,
    /// Fraction of each training class kept.
    pub scarcity_fraction: f64,
    /// Regions selected by deterministic top-k, as a fraction of the grid.
    pub topk_fraction: f64,
    /// Re-fit the temperature at the start of every augmented epoch so that
    /// the expected number of grafted regions matches the top-k count at the
    /// finest scale.
    pub calibrate: bool,
    /// Saliency maps used for that fit.
    pub calibration_maps: usize,
    /// Fixed `p_B` instead of a Beta draw.
    pub p_b: Option<f64>,
    /// Test evaluation period in epochs; the last epoch is always evaluated.
    pub eval_every: usize,
    pub data: DataConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            strategy: Strategy::SaliencyGrafting,
            label_mode: LabelMode::Saliency,
            saliency_kind: SaliencyKind::Forward,
            graft: GraftConfig::default(),
            k_augments: 1,
            epochs: 30,
            batch_size: 64,
            lr: 0.05,
            momentum: 0.9,
            weight_decay: 5e-4,
            seed: 0,
            scarcity_fraction: 1.0,
            topk_fraction: 0.125,
            calibrate: false,
            calibration_maps: 100,
            p_b: None,
            eval_every: 1,
            data: DataConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.graft.validate()?;
        let bad = |m: String| Err(Error::Config(m));
        if self.strategy == Strategy::Mixup && self.label_mode == LabelMode::Saliency {
            return bad("mixup blends whole images and has no region mask; use label_mode = \"area\"".into());
        }
        if self.saliency_kind == SaliencyKind::External {
            return bad("external saliency maps can only be supplied through the library API".into());
        }
        if self.k_augments == 0 {
            return bad("k_augments must be at least 1".into());
        }
        if self.batch_size < 2 {
            return bad(format!("batch_size must be at least 2, got {}", self.batch_size));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be a non-negative number, got {}", self.lr));
        }
        if !(0.0..1.0).contains(&self.momentum) || !(self.weight_decay >= 0.0) {
            return bad("momentum must lie in [0,1) and weight_decay must be non-negative".into());
        }
        if !(self.scarcity_fraction > 0.0 && self.scarcity_fraction <= 1.0) {
            return bad(format!("scarcity_fraction must lie in (0,1], got {}", self.scarcity_fraction));
        }
        if !(self.topk_fraction > 0.0 && self.topk_fraction <= 1.0) {
            return bad(format!("topk_fraction must lie in (0,1], got {}", self.topk_fraction));
        }
        if let Some(p) = self.p_b {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("p_b must lie in [0,1], got {p}"));
            }
        }
        if self.calibrate && self.calibration_maps == 0 {
            return bad("calibration needs at least one map".into());
        }
        let size = self.data.image_size;
        if self.data.path.is_none() {
            if size < 8 || size % 4 != 0 {
                return bad(format!("image_size must be a multiple of 4 and at least 8, got {size}"));
            }
            if self.data.classes == 0 || self.data.classes > 10 {
                return bad(format!("classes must be 1..=10, got {}", self.data.classes));
            }
        }
        Ok(())
    }

    /// Whether the given epoch trains on augmented batches.
    pub fn augments_at(&self, epoch: usize) -> bool {
        self.strategy != Strategy::Vanilla && epoch >= self.graft.warmup_epochs
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// First 16 hex digits of the SHA-256 of the TOML form.
    pub fn hash(&self) -> Result<String> {
        let digest = Sha256::digest(self.to_toml()?.as_bytes());
        Ok(digest.iter().take(8).map(|b| format!("{b:02x}")).collect())
    }
}
