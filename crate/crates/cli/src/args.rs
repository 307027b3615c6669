use std::fs;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::Args;

use saliency_graft::experiments::{ExperimentConfig, LabelMode, Strategy};
use saliency_graft::graft::SigmaMode;
use saliency_graft::saliency::SaliencyKind;

/// Experiment settings. Every field can also be given in the `--config` file;
/// flags win over the file.
#[derive(Debug, Clone, Default, Args)]
pub struct ExperimentArgs {
    /// TOML file with experiment settings; unknown keys are rejected
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// vanilla | mixup | cutmix | topk_deterministic | saliency_grafting
    #[arg(long)]
    pub strategy: Option<Strategy>,

    /// saliency | area
    #[arg(long, value_name = "MODE")]
    pub label_mode: Option<LabelMode>,

    /// forward | cam | oracle | oracle-blurred
    #[arg(long, value_name = "KIND")]
    pub saliency: Option<SaliencyKind>,

    /// Beta(alpha, alpha) for p_B and the mixing baselines
    #[arg(long)]
    pub alpha: Option<f64>,

    /// Softmax temperature
    #[arg(long)]
    pub temperature: Option<f64>,

    /// Threshold: `mean`, a probability such as `0.01`, or a multiple of the mean such as `0.5x`
    #[arg(long)]
    pub sigma: Option<SigmaMode>,

    /// Saliency grids, e.g. `4x4,8x8`
    #[arg(long, value_parser = parse_scales)]
    pub scales: Option<Scales>,

    /// Epochs of plain training before augmentation starts
    #[arg(long, value_name = "EPOCHS")]
    pub warmup: Option<usize>,

    /// Augmented batches per step
    #[arg(long, value_name = "K")]
    pub k_augments: Option<usize>,

    #[arg(long)]
    pub epochs: Option<usize>,

    #[arg(long)]
    pub batch_size: Option<usize>,

    #[arg(long)]
    pub lr: Option<f32>,

    #[arg(long)]
    pub momentum: Option<f32>,

    #[arg(long)]
    pub weight_decay: Option<f32>,

    /// Training seed
    #[arg(long)]
    pub seed: Option<u64>,

    /// Fraction of each training class kept
    #[arg(long, value_name = "FRACTION")]
    pub scarcity: Option<f64>,

    /// Deterministic top-k region fraction, also the calibration target
    #[arg(long, value_name = "FRACTION")]
    pub topk_fraction: Option<f64>,

    /// Fit the temperature to the top-k count at every augmented epoch
    #[arg(long, num_args = 0..=1, default_missing_value = "true", value_name = "BOOL")]
    pub calibrate: Option<bool>,

    /// Maps used by calibration
    #[arg(long, value_name = "N")]
    pub calibration_maps: Option<usize>,

    /// Fixed p_B instead of a Beta draw
    #[arg(long, value_name = "P")]
    pub p_b: Option<f64>,

    /// Test evaluation period in epochs (0: last epoch only)
    #[arg(long, value_name = "EPOCHS")]
    pub eval_every: Option<usize>,

    #[command(flatten)]
    pub data: DataArgs,
}

#[derive(Debug, Clone, Default, Args)]
pub struct DataArgs {
    /// Bundle directory or CIFAR binary file; shapes are generated when absent
    #[arg(long, value_name = "PATH")]
    pub data: Option<PathBuf>,

    #[arg(long)]
    pub classes: Option<usize>,

    #[arg(long)]
    pub per_class: Option<usize>,

    /// Test items held out per class
    #[arg(long)]
    pub test_per_class: Option<usize>,

    #[arg(long, value_name = "PIXELS")]
    pub image_size: Option<usize>,

    /// Seed of generated images
    #[arg(long)]
    pub data_seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scales(pub Vec<(usize, usize)>);

fn parse_scales(s: &str) -> std::result::Result<Scales, String> {
    s.split(',')
        .map(|part| {
            let (h, w) = part.trim().split_once('x').ok_or(format!("bad scale `{part}`, expected HxW"))?;
            let h = h.parse::<usize>().map_err(|e| format!("bad scale `{part}`: {e}"))?;
            let w = w.parse::<usize>().map_err(|e| format!("bad scale `{part}`: {e}"))?;
            Ok((h, w))
        })
        .collect::<std::result::Result<Vec<_>, _>>()
        .map(Scales)
}

impl ExperimentArgs {
    /// File values, then flags, then validation.
    pub fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => {
                let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                ExperimentConfig::from_toml(&text).with_context(|| format!("in {}", p.display()))?
            }
            None => ExperimentConfig::default(),
        };
        macro_rules! set {
            ($flag:expr => $field:expr) => {
                if let Some(v) = $flag.clone() {
                    $field = v;
                }
            };
        }
        set!(self.strategy => cfg.strategy);
        set!(self.label_mode => cfg.label_mode);
        set!(self.saliency => cfg.saliency_kind);
        set!(self.alpha => cfg.graft.alpha);
        set!(self.temperature => cfg.graft.temperature);
        set!(self.sigma => cfg.graft.sigma_mode);
        if let Some(Scales(s)) = &self.scales {
            cfg.graft.scales = s.clone();
        }
        set!(self.warmup => cfg.graft.warmup_epochs);
        set!(self.k_augments => cfg.k_augments);
        set!(self.epochs => cfg.epochs);
        set!(self.batch_size => cfg.batch_size);
        set!(self.lr => cfg.lr);
        set!(self.momentum => cfg.momentum);
        set!(self.weight_decay => cfg.weight_decay);
        set!(self.seed => cfg.seed);
        set!(self.scarcity => cfg.scarcity_fraction);
        set!(self.topk_fraction => cfg.topk_fraction);
        set!(self.calibrate => cfg.calibrate);
        set!(self.calibration_maps => cfg.calibration_maps);
        if self.p_b.is_some() {
            cfg.p_b = self.p_b;
        }
        set!(self.eval_every => cfg.eval_every);
        let d = &self.data;
        if d.data.is_some() {
            cfg.data.path = d.data.clone();
        }
        set!(d.classes => cfg.data.classes);
        set!(d.per_class => cfg.data.per_class);
        set!(d.test_per_class => cfg.data.test_per_class);
        set!(d.image_size => cfg.data.image_size);
        set!(d.data_seed => cfg.data.seed);
        cfg.validate()?;
        if let Some(p) = &cfg.data.path {
            if !p.exists() {
                bail!("dataset {} does not exist", p.display());
            }
        }
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scales_parse() {
        assert_eq!(parse_scales("4x4,8x8").unwrap(), Scales(vec![(4, 4), (8, 8)]));
        assert!(parse_scales("4").is_err());
        assert!(parse_scales("4xa").is_err());
    }

    #[test]
    fn flags_override_defaults() {
        let args = ExperimentArgs {
            epochs: Some(3),
            calibrate: Some(true),
            p_b: Some(0.5),
            ..Default::default()
        };
        let cfg = args.resolve().unwrap();
        assert_eq!(cfg.epochs, 3);
        assert!(cfg.calibrate);
        assert_eq!(cfg.p_b, Some(0.5));
        assert_eq!(cfg.batch_size, ExperimentConfig::default().batch_size);
    }
}
