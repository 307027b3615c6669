use std::fmt::Write as _;

use crate::data::{oracle_lambda, Dataset};
use crate::error::{Error, Result};
use crate::experiments::train::{evaluate, evaluate_transformed};
use crate::graft::{occlude_topk, sample_mask, GraftConfig};
use crate::labelmix::{area_lambda, calibrated_lambda};
use crate::model::TinyCnn;
use crate::numerics::{sample_beta, RandomStream, Tensor};
use crate::saliency::{forward_saliency, normalize, oracle_saliency, resample, threshold_with_sigma, SaliencyKind, SaliencyMap};

/// Top-1 error (%) with the most salient regions zeroed, per fraction.
#[derive(Debug, Clone, PartialEq)]
pub struct OcclusionTable {
    pub fractions: Vec<f64>,
    pub top1: Vec<f64>,
}

impl OcclusionTable {
    /// `k=0%,k=12.5%,...` header and one row of errors.
    pub fn to_csv(&self) -> String {
        let head: Vec<String> = self.fractions.iter().map(|f| format!("k={}%", f * 100.0)).collect();
        let row: Vec<String> = self.top1.iter().map(|e| format!("{e:.4}")).collect();
        format!("{}\n{}\n", head.join(","), row.join(","))
    }

    /// Error increase at `fraction` over the unoccluded error.
    pub fn increase(&self, fraction: f64) -> Option<f64> {
        let base = self.fractions.iter().position(|&f| f == 0.0)?;
        let at = self.fractions.iter().position(|&f| f == fraction)?;
        Some(self.top1[at] - self.top1[base])
    }
}

pub const OCCLUSION_FRACTIONS: [f64; 3] = [0.0, 0.125, 0.25];

/// Each image is occluded using the model's own forward saliency on its
/// last conv grid.
pub fn occlusion_eval(model: &TinyCnn, ds: &Dataset, fractions: &[f64]) -> Result<OcclusionTable> {
    let mut top1 = Vec::with_capacity(fractions.len());
    for &f in fractions {
        let ev = if f == 0.0 {
            evaluate(model, ds)?
        } else {
            evaluate_transformed(model, ds, |_, x| {
                let feats = model.forward(&x)?.features;
                let mut out = Vec::with_capacity(x.shape()[0]);
                for i in 0..x.shape()[0] {
                    let s = forward_saliency(&feats.slab(i)?)?;
                    out.push(occlude_topk(&x.slab(i)?, &s, f)?);
                }
                Tensor::stack(&out)
            })?
        };
        top1.push(ev.top1);
    }
    Ok(OcclusionTable {
        fractions: fractions.to_vec(),
        top1,
    })
}

/// Mean absolute deviation from the oracle coefficient for one saliency
/// provider.
#[derive(Debug, Clone, PartialEq)]
pub struct FidelityRow {
    pub provider: SaliencyKind,
    pub pairs: usize,
    pub saliency_error: f64,
    pub area_error: f64,
    /// Pairs where a coefficient was undefined.
    pub skipped: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FidelityReport {
    pub rows: Vec<FidelityRow>,
}

impl FidelityReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("provider,pairs,skipped,saliency_lambda_error,area_lambda_error\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{:.6},{:.6}",
                r.provider.name(),
                r.pairs,
                r.skipped,
                r.saliency_error,
                r.area_error
            );
        }
        out
    }

    pub fn row(&self, provider: SaliencyKind) -> Option<&FidelityRow> {
        self.rows.iter().find(|r| r.provider == provider)
    }
}

fn provider_map(kind: SaliencyKind, ds: &Dataset, i: usize, model: Option<&TinyCnn>) -> Result<SaliencyMap> {
    let item = &ds.items[i];
    match kind {
        SaliencyKind::Oracle | SaliencyKind::OracleBlurred => {
            let m = item.mask.as_ref().ok_or_else(|| Error::invalid("fidelity needs masks"))?;
            oracle_saliency(m, kind == SaliencyKind::OracleBlurred, (m.shape()[0], m.shape()[1]))
        }
        SaliencyKind::Forward => {
            let model = model.ok_or_else(|| Error::invalid("forward saliency needs a model"))?;
            let (c, h, w) = item.pixels.dims3()?;
            let x = item.pixels.clone().reshape(vec![1, c, h, w])?;
            forward_saliency(&model.forward(&x)?.features.slab(0)?)
        }
        other => Err(Error::invalid(format!("fidelity does not support {} saliency", other.name()))),
    }
}

/// Over `n_pairs` random grafts per provider, compares the saliency and the
/// area coefficients with the mask-based oracle. The forward provider is
/// included when a model is given.
pub fn label_fidelity_eval(
    ds: &Dataset,
    n_pairs: usize,
    graft_cfg: &GraftConfig,
    model: Option<&TinyCnn>,
    rng: &mut RandomStream,
) -> Result<FidelityReport> {
    if !ds.has_masks() || ds.len() < 2 {
        return Err(Error::invalid("label fidelity needs at least two images with masks"));
    }
    graft_cfg.validate()?;
    let (h, w) = ds.image_dims().expect("non-empty");
    let mut providers = vec![SaliencyKind::Oracle, SaliencyKind::OracleBlurred];
    if model.is_some() {
        providers.push(SaliencyKind::Forward);
    }
    let mut rows = Vec::new();
    for kind in providers {
        let mut r = rng.split(kind.name());
        let (mut sal, mut area, mut used, mut skipped) = (0.0, 0.0, 0usize, 0usize);
        for _ in 0..n_pairs {
            let i = r.below(ds.len());
            let j = (i + 1 + r.below(ds.len() - 1)) % ds.len();
            let scale = graft_cfg.scales[r.below(graft_cfg.scales.len())];
            let p_b = sample_beta(graft_cfg.alpha, &mut r)?;
            let s_i = resample(&provider_map(kind, ds, i, model)?, scale)?;
            let s_j = resample(&provider_map(kind, ds, j, model)?, scale)?;
            let sp = normalize(&s_i, graft_cfg.temperature)?;
            let bin = threshold_with_sigma(&sp, graft_cfg.sigma_mode.sigma_for(s_i.cells()))?;
            let mask = sample_mask(&bin, p_b, &mut r, h, w)?;
            let (mi, mj) = (ds.items[i].mask.as_ref().expect("checked"), ds.items[j].mask.as_ref().expect("checked"));
            let (oracle, lam) = match (oracle_lambda(mi, mj, &mask), calibrated_lambda(&s_i, &s_j, &mask)) {
                (Ok(o), Ok(l)) => (o, l),
                (Err(Error::DegenerateSaliency(_)), _) | (_, Err(Error::DegenerateSaliency(_))) => {
                    skipped += 1;
                    continue;
                }
                (Err(e), _) | (_, Err(e)) => return Err(e),
            };
            sal += (lam - oracle).abs();
            area += (area_lambda(&mask) - oracle).abs();
            used += 1;
        }
        let d = used.max(1) as f64;
        rows.push(FidelityRow {
            provider: kind,
            pairs: used,
            saliency_error: sal / d,
            area_error: area / d,
            skipped,
        });
    }
    Ok(FidelityReport { rows })
}
