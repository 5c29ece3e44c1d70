//! Toggle grid over motion, camera normalization and selection.
//!
//! Every setting of a given seed trains on the same generated dataset and
//! is evaluated on the same held-out images.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::synth::{BenchmarkConfig, SynthError};
use crate::trainer::{train, TrainConfig, TrainError};

#[derive(Debug, thiserror::Error)]
pub enum AblationError {
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error("no seeds given")]
    NoSeeds,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Rgb,
    Motion,
    NormalizedMotion,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Rgb, Variant::Motion, Variant::NormalizedMotion];

    pub fn label(self) -> &'static str {
        match self {
            Variant::Rgb => "RGB",
            Variant::Motion => "+Motion",
            Variant::NormalizedMotion => "+Normalized Motion",
        }
    }

    pub fn apply(self, cfg: &TrainConfig) -> TrainConfig {
        TrainConfig {
            use_motion: self != Variant::Rgb,
            use_normalization: self == Variant::NormalizedMotion,
            ..cfg.clone()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Setting {
    pub variant: Variant,
    pub degraded: bool,
    pub selection: bool,
}

impl Setting {
    pub fn label(&self) -> String {
        let mut s = self.variant.label().to_string();
        if self.selection {
            s.push_str(" +Selection");
        }
        s
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationConfig {
    pub seeds: Vec<u64>,
    pub benchmark: BenchmarkConfig,
    pub train: TrainConfig,
    pub settings: Vec<Setting>,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self {
            seeds: (0..5).collect(),
            benchmark: BenchmarkConfig::default(),
            train: TrainConfig::default(),
            settings: default_settings(),
        }
    }
}

/// All three variants, each with and without selection, on both flow
/// qualities. Selection is meaningless without motion and is skipped for RGB.
pub fn default_settings() -> Vec<Setting> {
    let mut v = Vec::new();
    for degraded in [false, true] {
        for variant in Variant::ALL {
            for selection in [false, true] {
                if selection && variant == Variant::Rgb {
                    continue;
                }
                v.push(Setting {
                    variant,
                    degraded,
                    selection,
                });
            }
        }
    }
    v
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationRow {
    pub setting: Setting,
    pub corloc: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationReport {
    pub seeds: Vec<u64>,
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    pub fn row(&self, variant: Variant, degraded: bool, selection: bool) -> Option<&AblationRow> {
        self.rows.iter().find(|r| {
            r.setting
                == Setting {
                    variant,
                    degraded,
                    selection,
                }
        })
    }

    pub fn to_markdown(&self) -> String {
        let mut s = String::from("| flow | setting | CorLoc mean | CorLoc std | seeds |\n|---|---|---|---|---|\n");
        for r in &self.rows {
            s.push_str(&format!(
                "| {} | {} | {:.3} | {:.3} | {} |\n",
                if r.setting.degraded { "degraded" } else { "standard" },
                r.setting.label(),
                r.mean,
                r.std,
                r.corloc.len()
            ));
        }
        s
    }
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
    (m, var.sqrt())
}

pub fn run_ablation(cfg: &AblationConfig) -> Result<AblationReport, AblationError> {
    if cfg.seeds.is_empty() {
        return Err(AblationError::NoSeeds);
    }
    let jobs: Vec<(usize, u64)> = (0..cfg.settings.len())
        .flat_map(|i| cfg.seeds.iter().map(move |&s| (i, s)))
        .collect();
    let needs = |degraded: bool| cfg.settings.iter().any(|s| s.degraded == degraded);
    let data: Vec<(u64, Option<_>, Option<_>)> = cfg
        .seeds
        .par_iter()
        .map(|&seed| {
            let std = needs(false)
                .then(|| cfg.benchmark.clone().standard().generate(seed))
                .transpose()?;
            let deg = needs(true)
                .then(|| cfg.benchmark.clone().degraded().generate(seed))
                .transpose()?;
            Ok((seed, std, deg))
        })
        .collect::<Result<_, SynthError>>()?;
    let results: Vec<f64> = jobs
        .par_iter()
        .map(|&(i, seed)| {
            let setting = cfg.settings[i];
            let (_, std, deg) = data.iter().find(|d| d.0 == seed).expect("seed generated");
            let bench = if setting.degraded { deg } else { std }
                .as_ref()
                .expect("flow quality generated");
            let tc = TrainConfig {
                seed,
                use_selection: setting.selection,
                ..setting.variant.apply(&cfg.train)
            };
            Ok(train(&bench.train, &bench.eval, &tc)?.report.corloc)
        })
        .collect::<Result<_, TrainError>>()?;
    let k = cfg.seeds.len();
    let rows = cfg
        .settings
        .iter()
        .enumerate()
        .map(|(i, &setting)| {
            let corloc = results[i * k..(i + 1) * k].to_vec();
            let (mean, std) = mean_std(&corloc);
            AblationRow {
                setting,
                corloc,
                mean,
                std,
            }
        })
        .collect();
    Ok(AblationReport {
        seeds: cfg.seeds.clone(),
        rows,
    })
}
