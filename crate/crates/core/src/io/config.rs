//! Experiment configuration files.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::dataset::DatasetSource;
use crate::error::{MasoError, Result};
use crate::linalg::Shape3;
use crate::maso::ActivationKind;
use crate::network::init::InitOptions;
use crate::network::Network;
use crate::partition::Grid2DSpec;
use crate::train::TrainConfig;
use crate::vq::LevelChoice;

/// Environment variable naming the default output directory.
pub const OUTPUT_DIR_ENV: &str = "MASOLAB_OUT";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NetSpec {
    Mlp {
        dims: Vec<usize>,
        #[serde(default = "default_activation")]
        activation: ActivationKind,
        #[serde(default)]
        batchnorm: bool,
        #[serde(default = "default_bias_scale")]
        bias_scale: f64,
    },
    Cnn {
        input: Shape3,
        /// `(out_channels, kernel)` per conv-activation-pool stage.
        stages: Vec<(usize, usize)>,
        classes: usize,
        #[serde(default = "default_activation")]
        activation: ActivationKind,
    },
    Resnet {
        dim: usize,
        blocks: usize,
        classes: usize,
        #[serde(default = "default_activation")]
        activation: ActivationKind,
    },
}

fn default_activation() -> ActivationKind {
    ActivationKind::Relu
}

fn default_bias_scale() -> f64 {
    0.1
}

impl NetSpec {
    pub fn build(&self, seed: u64) -> Result<Network> {
        match self {
            NetSpec::Mlp {
                dims,
                activation,
                batchnorm,
                bias_scale,
            } => Network::mlp(
                dims,
                *activation,
                InitOptions {
                    batchnorm: *batchnorm,
                    bias_scale: *bias_scale,
                },
                seed,
            ),
            NetSpec::Cnn {
                input,
                stages,
                classes,
                activation,
            } => Network::cnn(Shape3::new(input.channels, input.height, input.width)?, stages, *classes, *activation, seed),
            NetSpec::Resnet {
                dim,
                blocks,
                classes,
                activation,
            } => Network::resnet(*dim, *blocks, *classes, *activation, seed),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KmeansOptions {
    pub clusters: usize,
    pub iterations: usize,
}

impl Default for KmeansOptions {
    fn default() -> Self {
        KmeansOptions {
            clusters: 4,
            iterations: 100,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UniversalTarget {
    /// `x₁² + x₂² + …`
    Quadratic,
    /// `Σ_i (−1)^i x_i / 2 + 0.1`
    Linear,
    /// `sin(πx₁) cos(πx₂) …`
    Sine,
}

impl UniversalTarget {
    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        let v = match self {
            UniversalTarget::Quadratic => x.iter().map(|v| v * v).sum(),
            UniversalTarget::Linear => {
                x.iter().enumerate().map(|(i, v)| if i % 2 == 0 { 0.5 * v } else { -0.5 * v }).sum::<f64>() + 0.1
            }
            UniversalTarget::Sine => x
                .iter()
                .enumerate()
                .map(|(i, v)| {
                    let a = std::f64::consts::PI * v;
                    if i % 2 == 0 {
                        a.sin()
                    } else {
                        a.cos()
                    }
                })
                .product(),
        };
        vec![v]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UniversalOptions {
    pub target: UniversalTarget,
    pub input_dim: usize,
    pub widths: Vec<usize>,
    pub config: crate::analysis::UniversalityConfig,
}

impl Default for UniversalOptions {
    fn default() -> Self {
        UniversalOptions {
            target: UniversalTarget::Quadratic,
            input_dim: 2,
            widths: vec![8, 16, 32, 64],
            config: crate::analysis::UniversalityConfig::default(),
        }
    }
}

/// Knobs of the analysis subcommands.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisOptions {
    pub grid: Grid2DSpec,
    /// Uniform samples per axis range for partition estimates on inputs that
    /// are not 2-D.
    pub samples: usize,
    pub vq_level: LevelChoice,
    pub neighbors: usize,
    pub kmeans: KmeansOptions,
    pub universal: UniversalOptions,
    pub collinear_alpha: f64,
    pub soft_betas: Vec<f64>,
    pub convexity_pairs: usize,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        AnalysisOptions {
            grid: Grid2DSpec {
                resolution: (256, 256),
                ..Grid2DSpec::default()
            },
            samples: 100_000,
            vq_level: LevelChoice::Mean,
            neighbors: 8,
            kmeans: KmeansOptions::default(),
            universal: UniversalOptions::default(),
            collinear_alpha: 1.0,
            soft_betas: vec![0.01, 0.5, 0.9, 0.999],
            convexity_pairs: 1000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    pub net: NetSpec,
    #[serde(default)]
    pub train: TrainConfig,
    pub data: DatasetSource,
    #[serde(default)]
    pub analysis: AnalysisOptions,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    /// Directory relative data paths are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn from_json(s: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let mut cfg = Self::from_json(&std::fs::read_to_string(path)?)?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.analysis.grid.validate()?;
        if self.analysis.neighbors == 0 {
            return Err(MasoError::Schema("analysis.neighbors must be positive".into()));
        }
        if self.analysis.kmeans.clusters == 0 {
            return Err(MasoError::Schema("analysis.kmeans.clusters must be positive".into()));
        }
        if !(self.analysis.collinear_alpha > 0.0) {
            return Err(MasoError::Schema("analysis.collinear_alpha must be positive".into()));
        }
        if self.analysis.soft_betas.iter().any(|b| !(*b > 0.0 && *b < 1.0)) {
            return Err(MasoError::Schema("analysis.soft_betas must lie in (0, 1)".into()));
        }
        Ok(())
    }

    /// `--seed` overrides the experiment, training and dataset seeds at once.
    pub fn override_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.train.seed = seed;
        self.data = self.data.with_seed(seed);
    }

    /// `cli_out`, else the config's `output_dir`, else `$MASOLAB_OUT`, else `out`.
    pub fn output_dir(&self, cli_out: Option<&Path>) -> PathBuf {
        if let Some(p) = cli_out {
            return p.to_path_buf();
        }
        if let Some(p) = &self.output_dir {
            return self.base_dir.join(p);
        }
        std::env::var_os(OUTPUT_DIR_ENV).map_or_else(|| PathBuf::from("out"), PathBuf::from)
    }

    pub fn build_network(&self) -> Result<Network> {
        self.net.build(self.seed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const TOY: &str = include_str!("../../../../configs/toy-2-45-3-4.json");

    #[test]
    fn shipped_toy_config_builds() {
        let cfg = ExperimentConfig::from_json(TOY).unwrap();
        let net = cfg.build_network().unwrap();
        assert_eq!(net.input_dim(), 2);
        assert_eq!(net.output_dim(), 4);
        assert_eq!(net.layer_masos().unwrap().level_shapes(), vec![(45, 2), (3, 2)]);
    }

    #[test]
    fn unknown_fields_rejected() {
        let bad = TOY.replacen("\"seed\"", "\"sede\": 1, \"seed\"", 1);
        assert!(ExperimentConfig::from_json(&bad).is_err());
        let bad_net = r#"{"net":{"kind":"mlp","dims":[2,3],"width":4},"data":{"kind":"csv","path":"x.csv"}}"#;
        assert!(ExperimentConfig::from_json(bad_net).is_err());
        let bad_train = r#"{"net":{"kind":"mlp","dims":[2,3]},"train":{"lr":-1},"data":{"kind":"csv","path":"x.csv"}}"#;
        assert!(ExperimentConfig::from_json(bad_train).is_err());
    }

    #[test]
    fn seed_override_reaches_every_seed() {
        let mut cfg = ExperimentConfig::from_json(TOY).unwrap();
        cfg.override_seed(42);
        assert_eq!(cfg.train.seed, 42);
        assert!(matches!(cfg.data, DatasetSource::Synthetic2d { seed: 42, .. }));
    }

    #[test]
    fn output_dir_precedence() {
        let mut cfg = ExperimentConfig::from_json(TOY).unwrap();
        cfg.output_dir = Some("results".into());
        cfg.base_dir = "/tmp/x".into();
        assert_eq!(cfg.output_dir(Some(Path::new("cli"))), PathBuf::from("cli"));
        assert_eq!(cfg.output_dir(None), PathBuf::from("/tmp/x/results"));
    }

    #[test]
    fn universal_targets() {
        assert_eq!(UniversalTarget::Quadratic.eval(&[1.0, 2.0]), vec![5.0]);
        assert_eq!(UniversalTarget::Linear.eval(&[1.0, 2.0]), vec![0.5 - 1.0 + 0.1]);
        assert!((UniversalTarget::Sine.eval(&[0.5, 0.0])[0] - 1.0).abs() < 1e-15);
    }
}
