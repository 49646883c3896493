//! Config files and the flags that override them.

use std::fs;
use std::path::Path;

use clap::Args;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use styletrf::render::RenderConfig;
use styletrf::scene::{SyntheticSceneSpec, ViewSpec};
use styletrf::style::{AdaptConfig, SpiralParams, Strategy};

use crate::error::CliError;

/// Reads a `.toml` or `.json` config. A run manifest is accepted too, in
/// which case its resolved `config` is used.
pub fn load_config<T: DeserializeOwned>(path: &Path, subcommand: &str) -> Result<T, CliError> {
    let bad = |detail: String| CliError::Config {
        path: path.to_path_buf(),
        detail,
    };
    let text = fs::read_to_string(path).map_err(|e| bad(e.to_string()))?;
    let is_toml = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("toml"));
    let value: Value = if is_toml {
        toml::from_str(&text).map_err(|e| bad(e.to_string()))?
    } else {
        serde_json::from_str(&text).map_err(|e| bad(e.to_string()))?
    };
    let value = match value.get("subcommand") {
        Some(sub) if value.get("config").is_some() => {
            if sub != subcommand {
                return Err(bad(format!("manifest of a `{sub}` run used for `{subcommand}`")));
            }
            value["config"].clone()
        }
        _ => value,
    };
    serde_json::from_value(value).map_err(|e| bad(e.to_string()))
}

pub fn set<T: Clone>(slot: &mut T, flag: &Option<T>) {
    if let Some(v) = flag {
        *slot = v.clone();
    }
}

fn rgb(values: &Option<Vec<f64>>) -> Result<Option<[f64; 3]>, CliError> {
    match values {
        None => Ok(None),
        Some(v) => <[f64; 3]>::try_from(v.as_slice())
            .map(Some)
            .map_err(|_| CliError::Usage(format!("expected three comma-separated values, got {v:?}"))),
    }
}

/// Volume-rendering settings.
#[derive(Args, Debug, Default, Clone)]
pub struct RenderFlags {
    /// Samples per ray [render.samples_per_ray]
    #[arg(long)]
    pub samples: Option<usize>,
    /// Near clipping distance [render.near]
    #[arg(long)]
    pub near: Option<f64>,
    /// Far clipping distance [render.far]
    #[arg(long)]
    pub far: Option<f64>,
    /// Background color as r,g,b in [0,1] [render.background]
    #[arg(long, value_delimiter = ',', num_args = 1)]
    pub background: Option<Vec<f64>>,
    /// Jitter sample positions within their segments [render.stratified_jitter]
    #[arg(long)]
    pub jitter: Option<bool>,
    /// Seed of the jitter streams [render.seed]
    #[arg(long)]
    pub render_seed: Option<u64>,
}

impl RenderFlags {
    pub fn apply(&self, cfg: &mut RenderConfig) -> Result<(), CliError> {
        set(&mut cfg.samples_per_ray, &self.samples);
        set(&mut cfg.near, &self.near);
        set(&mut cfg.far, &self.far);
        set(&mut cfg.background, &rgb(&self.background)?);
        set(&mut cfg.stratified_jitter, &self.jitter);
        set(&mut cfg.seed, &self.render_seed);
        Ok(())
    }
}

/// Spiral around a reference view. `focus_distance` defaults to the depth
/// of the scene center along the reference view axis.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpiralSettings {
    pub n_views: usize,
    pub radius: f64,
    pub n_turns: f64,
    pub focus_distance: Option<f64>,
    pub advance: f64,
}

impl SpiralSettings {
    pub fn priors() -> Self {
        let d = SpiralParams::default();
        SpiralSettings {
            n_views: d.n_views,
            radius: d.radius,
            n_turns: d.n_turns,
            focus_distance: None,
            advance: d.advance,
        }
    }

    pub fn evaluation() -> Self {
        SpiralSettings {
            n_views: 12,
            radius: 0.01,
            ..Self::priors()
        }
    }

    pub fn resolve(&self, focus_distance: f64) -> SpiralParams {
        SpiralParams {
            n_views: self.n_views,
            radius: self.radius,
            n_turns: self.n_turns,
            focus_distance: self.focus_distance.unwrap_or(focus_distance),
            advance: self.advance,
        }
    }
}

impl Default for SpiralSettings {
    fn default() -> Self {
        Self::priors()
    }
}

/// Spiral trajectory settings.
#[derive(Args, Debug, Default, Clone)]
pub struct SpiralFlags {
    /// Number of poses on the spiral [trajectory.n_views]
    #[arg(long)]
    pub n_views: Option<usize>,
    /// Spiral radius in world units [trajectory.radius]
    #[arg(long)]
    pub radius: Option<f64>,
    /// Number of turns over the whole path [trajectory.n_turns]
    #[arg(long)]
    pub turns: Option<f64>,
    /// Distance to the point all poses look at [trajectory.focus_distance]
    #[arg(long)]
    pub focus_distance: Option<f64>,
    /// Travel along the view axis over the whole path [trajectory.advance]
    #[arg(long)]
    pub advance: Option<f64>,
}

impl SpiralFlags {
    pub fn apply(&self, s: &mut SpiralSettings) {
        set(&mut s.n_views, &self.n_views);
        set(&mut s.radius, &self.radius);
        set(&mut s.n_turns, &self.turns);
        if self.focus_distance.is_some() {
            s.focus_distance = self.focus_distance;
        }
        set(&mut s.advance, &self.advance);
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub scene: SyntheticSceneSpec,
    pub views: ViewSpec,
}

/// Synthetic scene settings.
#[derive(Args, Debug, Default, Clone)]
pub struct SynthFlags {
    /// Seed for the test-view placement [scene.seed]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Background color as r,g,b [scene.background]
    #[arg(long, value_delimiter = ',', num_args = 1)]
    pub background: Option<Vec<f64>>,
    /// Training views [views.n_train]
    #[arg(long)]
    pub n_train: Option<usize>,
    /// Held-out views [views.n_test]
    #[arg(long)]
    pub n_test: Option<usize>,
    /// Image width [views.width]
    #[arg(long)]
    pub width: Option<usize>,
    /// Image height [views.height]
    #[arg(long)]
    pub height: Option<usize>,
    /// Camera distance from the scene center [views.camera_distance]
    #[arg(long)]
    pub camera_distance: Option<f64>,
    /// Horizontal field of view in radians [views.fov_x]
    #[arg(long)]
    pub fov_x: Option<f64>,
    /// Near distance of the analytic renderer [views.near]
    #[arg(long)]
    pub near: Option<f64>,
    /// Far distance of the analytic renderer [views.far]
    #[arg(long)]
    pub far: Option<f64>,
}

impl SynthFlags {
    pub fn apply(&self, cfg: &mut SynthConfig) -> Result<(), CliError> {
        set(&mut cfg.scene.seed, &self.seed);
        set(&mut cfg.scene.background, &rgb(&self.background)?);
        let v = &mut cfg.views;
        set(&mut v.n_train, &self.n_train);
        set(&mut v.n_test, &self.n_test);
        set(&mut v.width, &self.width);
        set(&mut v.height, &self.height);
        set(&mut v.camera_distance, &self.camera_distance);
        set(&mut v.fov_x, &self.fov_x);
        set(&mut v.near, &self.near);
        set(&mut v.far, &self.far);
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Stylizer {
    /// No styled copy
    #[default]
    None,
    /// Swap the red and green channels
    Swap,
    /// Channel swap plus a per-image color wave
    Toy,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RenderJob {
    pub split: String,
    pub reference_view: usize,
    pub spiral: bool,
    pub trajectory: SpiralSettings,
    pub render: RenderConfig,
    pub stylizer: Stylizer,
    pub stylizer_seed: u64,
}

impl Default for RenderJob {
    fn default() -> Self {
        RenderJob {
            split: "test".into(),
            reference_view: 0,
            spiral: false,
            trajectory: SpiralSettings::priors(),
            render: RenderConfig::default(),
            stylizer: Stylizer::None,
            stylizer_seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdaptJob {
    pub strategy: Strategy,
    pub adapt: AdaptConfig,
}

impl Default for AdaptJob {
    fn default() -> Self {
        AdaptJob {
            strategy: Strategy::S3,
            adapt: AdaptConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalJob {
    pub split: String,
    pub reference_view: usize,
    pub trajectory: SpiralSettings,
    pub deltas: Vec<usize>,
    pub render: RenderConfig,
}

impl Default for EvalJob {
    fn default() -> Self {
        EvalJob {
            split: "test".into(),
            reference_view: 0,
            trajectory: SpiralSettings::evaluation(),
            deltas: styletrf::consistency::DEFAULT_DELTAS.to_vec(),
            render: RenderConfig::default(),
        }
    }
}
