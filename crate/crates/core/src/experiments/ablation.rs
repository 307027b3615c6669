use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::experiments::config::{ExperimentConfig, LabelMode, Strategy};
use crate::experiments::eval::{occlusion_eval, OcclusionTable, OCCLUSION_FRACTIONS};
use crate::experiments::render::{render_bars, save_png};
use crate::experiments::train::{metrics_csv, prepare_data, train_on, CalibrationInfo, MetricsRecord};
use crate::graft::SigmaMode;
use crate::saliency::SaliencyKind;

pub const TABLE_ROWS: [&str; 3] = [
    "Deterministic + area labels",
    "Stochastic + area labels",
    "Stochastic + saliency labels",
];

/// Which parts of the ablation to run.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationPlan {
    /// Shared by every cell, so cells are paired seed by seed.
    pub seeds: Vec<u64>,
    pub table: bool,
    /// Thresholds as multiples of `σ_mean`.
    pub sigma_fractions: Vec<f64>,
    pub temperatures: Vec<f64>,
    pub saliency_kinds: bool,
    pub cutmix: bool,
    /// Also run the occlusion evaluation for every model.
    pub occlusion: bool,
    /// Worker threads.
    pub jobs: usize,
}

impl AblationPlan {
    pub fn full(seeds: Vec<u64>) -> Self {
        Self {
            seeds,
            table: true,
            sigma_fractions: vec![1.0, 0.5, 0.0],
            temperatures: vec![0.01, 0.05, 0.1, 0.2, 0.3],
            saliency_kinds: true,
            cutmix: true,
            occlusion: true,
            jobs: 1,
        }
    }

    /// Only the three strategy rows.
    pub fn table_only(seeds: Vec<u64>) -> Self {
        Self {
            sigma_fractions: vec![],
            temperatures: vec![],
            saliency_kinds: false,
            cutmix: false,
            ..Self::full(seeds)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub section: &'static str,
    pub name: String,
    /// Seed is overwritten per run.
    pub config: ExperimentConfig,
    /// Marks the two saliency-agnostic cells that differ only in mask shape.
    pub flag: Option<&'static str>,
}

const AGNOSTIC_FLAG: &str = "saliency-agnostic-pair";

pub fn ablation_cells(base: &ExperimentConfig, plan: &AblationPlan) -> Vec<Cell> {
    let mut cells = Vec::new();
    let sg = ExperimentConfig {
        strategy: Strategy::SaliencyGrafting,
        label_mode: LabelMode::Saliency,
        ..base.clone()
    };
    if plan.table {
        let rows = [
            (Strategy::TopkDeterministic, LabelMode::Area, false),
            (Strategy::SaliencyGrafting, LabelMode::Area, true),
            (Strategy::SaliencyGrafting, LabelMode::Saliency, true),
        ];
        for (name, (strategy, label_mode, calibrate)) in TABLE_ROWS.iter().zip(rows) {
            cells.push(Cell {
                section: "table",
                name: name.to_string(),
                config: ExperimentConfig {
                    strategy,
                    label_mode,
                    calibrate,
                    ..base.clone()
                },
                flag: None,
            });
        }
    }
    for &f in &plan.sigma_fractions {
        let mut c = sg.clone();
        c.graft.sigma_mode = if f == 1.0 { SigmaMode::Mean } else { SigmaMode::MeanFraction(f) };
        cells.push(Cell {
            section: "sigma",
            name: format!("sigma={f}x"),
            config: c,
            flag: (f == 0.0).then_some(AGNOSTIC_FLAG),
        });
    }
    for &t in &plan.temperatures {
        let mut c = sg.clone();
        c.graft.temperature = t;
        c.calibrate = false;
        cells.push(Cell {
            section: "temperature",
            name: format!("T={t}"),
            config: c,
            flag: None,
        });
    }
    if plan.saliency_kinds {
        for kind in [SaliencyKind::Forward, SaliencyKind::Cam] {
            cells.push(Cell {
                section: "saliency",
                name: kind.name().to_string(),
                config: ExperimentConfig {
                    saliency_kind: kind,
                    ..sg.clone()
                },
                flag: None,
            });
        }
    }
    if plan.cutmix {
        cells.push(Cell {
            section: "cutmix",
            name: "cutmix".into(),
            config: ExperimentConfig {
                strategy: Strategy::Cutmix,
                ..sg.clone()
            },
            flag: Some(AGNOSTIC_FLAG),
        });
    }
    cells
}

#[derive(Debug, Clone)]
pub struct SeedRun {
    pub seed: u64,
    pub test_top1: f64,
    pub history: Vec<MetricsRecord>,
    pub calibration: Vec<CalibrationInfo>,
    pub occlusion: Option<OcclusionTable>,
}

#[derive(Debug, Clone)]
pub struct CellResult {
    pub cell: Cell,
    pub runs: Vec<SeedRun>,
}

/// Mean and standard error (`s/√n`, zero for one value).
pub fn mean_stderr(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

impl CellResult {
    pub fn errors(&self) -> Vec<f64> {
        self.runs.iter().map(|r| r.test_top1).collect()
    }

    pub fn mean_stderr(&self) -> (f64, f64) {
        mean_stderr(&self.errors())
    }

    /// Seed-mean error increase at the given occlusion fraction.
    pub fn mean_occlusion_increase(&self, fraction: f64) -> Option<f64> {
        let inc: Option<Vec<f64>> = self
            .runs
            .iter()
            .map(|r| r.occlusion.as_ref().and_then(|o| o.increase(fraction)))
            .collect();
        inc.filter(|v| !v.is_empty()).map(|v| mean_stderr(&v).0)
    }
}

#[derive(Debug, Clone)]
pub struct AblationReport {
    pub cells: Vec<CellResult>,
}

impl AblationReport {
    pub fn cell(&self, name: &str) -> Option<&CellResult> {
        self.cells.iter().find(|c| c.cell.name == name)
    }

    pub fn table_csv(&self) -> String {
        let mut out = String::from("row,strategy,label_mode,seeds,mean_top1,stderr_top1\n");
        for c in self.cells.iter().filter(|c| c.cell.section == "table") {
            let (m, s) = c.mean_stderr();
            let _ = writeln!(
                out,
                "{},{},{},{},{m:.4},{s:.4}",
                c.cell.name,
                c.cell.config.strategy,
                c.cell.config.label_mode,
                c.runs.len()
            );
        }
        out
    }

    pub fn cells_csv(&self) -> String {
        let mut out = String::from(
            "section,cell,strategy,label_mode,saliency,temperature,sigma,calibrated,seeds,mean_top1,stderr_top1,occlusion_increase_25,flag\n",
        );
        for c in &self.cells {
            let cfg = &c.cell.config;
            let (m, s) = c.mean_stderr();
            let occ = c.mean_occlusion_increase(0.25).map(|v| format!("{v:.4}")).unwrap_or_default();
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{m:.4},{s:.4},{occ},{}",
                c.cell.section,
                c.cell.name,
                cfg.strategy,
                cfg.label_mode,
                cfg.saliency_kind.name(),
                cfg.graft.temperature,
                cfg.graft.sigma_mode,
                cfg.calibrate,
                c.runs.len(),
                c.cell.flag.unwrap_or("")
            );
        }
        out
    }

    pub fn calibration_csv(&self) -> String {
        let mut out = String::from("cell,seed,epoch,scale,target,temperature,achieved,unreachable\n");
        for c in &self.cells {
            for r in &c.runs {
                for cal in &r.calibration {
                    let _ = writeln!(
                        out,
                        "{},{},{},{}x{},{},{:.6},{:.4},{}",
                        c.cell.name,
                        r.seed,
                        cal.epoch,
                        cal.scale.0,
                        cal.scale.1,
                        cal.target,
                        cal.temperature,
                        cal.achieved,
                        cal.unreachable
                    );
                }
            }
        }
        out
    }

    /// Writes the CSVs, one bar plot per section, and each run's metrics.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let put = |name: &str, text: String| {
            let p = dir.join(name);
            fs::write(&p, text).map_err(|e| Error::io(&p, e))
        };
        put("ablation_table.csv", self.table_csv())?;
        put("cells.csv", self.cells_csv())?;
        put("calibration.csv", self.calibration_csv())?;
        let mut sections: BTreeMap<&str, Vec<(f64, f64)>> = BTreeMap::new();
        for c in &self.cells {
            sections.entry(c.cell.section).or_default().push(c.mean_stderr());
        }
        for (section, bars) in sections {
            save_png(&render_bars(&bars), dir.join(format!("{section}.png")))?;
        }
        for c in &self.cells {
            for r in &c.runs {
                let mut cfg = c.cell.config.clone();
                cfg.seed = r.seed;
                let run_dir = dir.join("runs").join(cfg.hash()?);
                fs::create_dir_all(&run_dir).map_err(|e| Error::io(&run_dir, e))?;
                let p = run_dir.join("config.toml");
                fs::write(&p, cfg.to_toml()?).map_err(|e| Error::io(&p, e))?;
                let p = run_dir.join("metrics.csv");
                fs::write(&p, metrics_csv(&r.history)).map_err(|e| Error::io(&p, e))?;
            }
        }
        Ok(())
    }
}

fn run_one(cfg: &ExperimentConfig, train: &Dataset, test: &Dataset, occlusion: bool) -> Result<SeedRun> {
    let out = train_on(cfg, train, test)?;
    let occlusion = if occlusion && !test.is_empty() {
        Some(occlusion_eval(&out.model, test, &OCCLUSION_FRACTIONS)?)
    } else {
        None
    };
    Ok(SeedRun {
        seed: cfg.seed,
        test_top1: out.test.top1,
        history: out.history,
        calibration: out.calibration,
        occlusion,
    })
}

/// Runs every cell on every seed. Identical configurations are trained once.
pub fn ablation_suite(base: &ExperimentConfig, plan: &AblationPlan) -> Result<AblationReport> {
    base.validate()?;
    if plan.seeds.is_empty() {
        return Err(Error::Config("ablation needs at least one seed".into()));
    }
    let (train, test) = prepare_data(base)?;
    ablation_suite_on(base, plan, &train, &test)
}

pub fn ablation_suite_on(
    base: &ExperimentConfig,
    plan: &AblationPlan,
    train: &Dataset,
    test: &Dataset,
) -> Result<AblationReport> {
    let cells = ablation_cells(base, plan);
    let mut unique: Vec<ExperimentConfig> = Vec::new();
    let mut slots: Vec<Vec<usize>> = Vec::new();
    let mut by_hash: BTreeMap<String, usize> = BTreeMap::new();
    for cell in &cells {
        let mut ids = Vec::new();
        for &seed in &plan.seeds {
            let mut cfg = cell.config.clone();
            cfg.seed = seed;
            cfg.validate()?;
            let id = *by_hash.entry(cfg.hash()?).or_insert_with(|| {
                unique.push(cfg);
                unique.len() - 1
            });
            ids.push(id);
        }
        slots.push(ids);
    }

    let results: Mutex<Vec<Option<Result<SeedRun>>>> = Mutex::new((0..unique.len()).map(|_| None).collect());
    let next = AtomicUsize::new(0);
    let workers = plan.jobs.clamp(1, unique.len().max(1));
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= unique.len() {
                    break;
                }
                let r = run_one(&unique[i], train, test, plan.occlusion);
                results.lock().expect("no panics while holding the lock")[i] = Some(r);
            });
        }
    });
    let mut done = Vec::with_capacity(unique.len());
    for r in results.into_inner().expect("workers joined") {
        done.push(r.expect("every run executed")?);
    }
    let cells = cells
        .into_iter()
        .zip(slots)
        .map(|(cell, ids)| CellResult {
            cell,
            runs: ids.iter().map(|&i| done[i].clone()).collect(),
        })
        .collect();
    Ok(AblationReport { cells })
}
