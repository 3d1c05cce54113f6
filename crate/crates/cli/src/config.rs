//! Run configuration: an optional TOML file overlaid by command-line flags.
//! The effective configuration is written next to every run's outputs and
//! can be fed back through `--config`.

use std::path::Path;

use anyhow::{Context, Result};
use clap::Args;
use recist_core::model::Layout;
use recist_core::synthgen::{Convexity, SynthSpec};
use recist_core::trainer::{RegionMode, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::UsageError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub ratio: f64,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            ratio: recist_core::dataio::DEFAULT_SPLIT_RATIO,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub command: Option<String>,
    pub synth: SynthSpec,
    pub split: SplitConfig,
    pub train: TrainConfig,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        toml::from_str(&text).map_err(|e| UsageError(format!("{}: {e}", path.display())).into())
    }

    /// Writes `config.toml` into `dir`.
    pub fn snapshot(&self, command: &str, dir: &Path) -> Result<()> {
        let snap = RunConfig {
            command: Some(command.to_string()),
            ..self.clone()
        };
        let text = toml::to_string_pretty(&snap).context("serializing config")?;
        let path = dir.join("config.toml");
        std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
    }
}

#[derive(Args, Clone, Debug, Default)]
pub struct SynthFlags {
    /// Canvas side in pixels.
    #[arg(long)]
    pub image_size: Option<usize>,
    #[arg(long)]
    pub lesions_min: Option<usize>,
    #[arg(long)]
    pub lesions_max: Option<usize>,
    /// Smallest semi-major axis of a generating ellipse, in pixels.
    #[arg(long)]
    pub radius_min: Option<f64>,
    #[arg(long)]
    pub radius_max: Option<f64>,
    #[arg(long)]
    pub aspect_min: Option<f64>,
    #[arg(long)]
    pub aspect_max: Option<f64>,
    /// ellipse, convex-polygon or mixed.
    #[arg(long)]
    pub convexity: Option<Convexity>,
    #[arg(long)]
    pub contrast: Option<f64>,
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long = "synth-seed")]
    pub seed: Option<u64>,
}

impl SynthFlags {
    pub fn apply(&self, s: &mut SynthSpec) {
        set(&mut s.image_size, self.image_size);
        set(&mut s.lesions_per_slice.0, self.lesions_min);
        set(&mut s.lesions_per_slice.1, self.lesions_max);
        set(&mut s.radius_range.0, self.radius_min);
        set(&mut s.radius_range.1, self.radius_max);
        set(&mut s.aspect_range.0, self.aspect_min);
        set(&mut s.aspect_range.1, self.aspect_max);
        set(&mut s.convexity, self.convexity);
        set(&mut s.intensity_contrast, self.contrast);
        set(&mut s.noise_sigma, self.noise);
        set(&mut s.seed, self.seed);
    }
}

#[derive(Args, Clone, Debug, Default)]
pub struct SplitFlags {
    /// Fraction of sources assigned to training.
    #[arg(long)]
    pub split_ratio: Option<f64>,
    #[arg(long)]
    pub split_seed: Option<u64>,
}

impl SplitFlags {
    pub fn apply(&self, s: &mut SplitConfig) {
        set(&mut s.ratio, self.split_ratio);
        set(&mut s.seed, self.split_seed);
    }
}

#[derive(Args, Clone, Debug, Default)]
pub struct TrainFlags {
    /// Weight of the consistency term.
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub prepare_epochs: Option<usize>,
    #[arg(long)]
    pub total_epochs: Option<usize>,
    #[arg(long = "lr")]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Training seed (the first seed for multi-seed commands).
    #[arg(long)]
    pub seed: Option<u64>,
    /// whole (P) or ambiguous (A).
    #[arg(long)]
    pub region: Option<RegionMode>,
    #[arg(long)]
    pub no_flip: bool,
    #[arg(long)]
    pub early_switch: bool,
    /// Channel widths, e.g. 1-8-8-8-1.
    #[arg(long)]
    pub layout: Option<Layout>,
}

impl TrainFlags {
    pub fn apply(&self, t: &mut TrainConfig) {
        set(&mut t.lambda, self.lambda);
        set(&mut t.prepare_epochs, self.prepare_epochs);
        set(&mut t.total_epochs, self.total_epochs);
        set(&mut t.learning_rate, self.learning_rate);
        set(&mut t.batch_size, self.batch_size);
        set(&mut t.seed, self.seed);
        set(&mut t.region_mode, self.region);
        set(&mut t.layout, self.layout.clone());
        if self.no_flip {
            t.flip_augment = false;
        }
        if self.early_switch {
            t.early_switch = true;
        }
    }
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}
