//! Run configuration files: TOML, one section per module. Every section is
//! optional and every command-line flag overrides the file.

use std::path::Path;

use anyhow::Context;
use epimatch::estimation::RansacConfig;
use epimatch::matcher::MatcherConfig;
use epimatch::metrics::eval_ransac;
use epimatch::pairgen::PseudoDepthModel;
use epimatch::pipeline::{BootstrapConfig, PoseNoiseConfig, TrainConfig};
use serde::{Deserialize, Serialize};

/// Epipolar colouring threshold of the indoor preset.
pub const INDOOR_THRESHOLD: f64 = 5e-4;
/// Epipolar colouring threshold of the outdoor preset.
pub const OUTDOOR_THRESHOLD: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub matcher: MatcherConfig,
    pub train: TrainConfig,
    pub noise: PoseNoiseConfig,
    pub bootstrap: BootstrapConfig,
    /// Pose estimation for `eval` and `pose`.
    pub ransac: RansacConfig,
    pub synth: SynthSection,
    pub pairs: PairsSection,
    pub eval: EvalSection,
}

impl Default for FileConfig {
    fn default() -> Self {
        Self {
            seed: None,
            matcher: MatcherConfig::default(),
            train: TrainConfig::default(),
            noise: PoseNoiseConfig::default(),
            bootstrap: BootstrapConfig::default(),
            ransac: eval_ransac(),
            synth: SynthSection::default(),
            pairs: PairsSection::default(),
            eval: EvalSection::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    pub domain: Option<String>,
    pub pairs: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PairsSection {
    pub preset: Option<String>,
    /// Explicit model; takes precedence over `preset`.
    pub model: Option<PseudoDepthModel>,
    pub min_overlap: Option<f64>,
    pub max_overlap: Option<f64>,
    pub stride: Option<usize>,
    pub samples: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub threshold: Option<f64>,
    pub overlays: Option<usize>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_sections_keep_defaults() {
        let cfg: FileConfig = toml::from_str(
            "seed = 3\n[train]\nepochs = 4\n[train.loss]\nmask = \"naive\"\n[matcher]\nmatch_threshold = 0.3\n",
        )
        .unwrap();
        assert_eq!(cfg.seed, Some(3));
        assert_eq!(cfg.train.epochs, 4);
        assert_eq!(cfg.train.lr, TrainConfig::default().lr);
        assert_eq!(cfg.matcher.match_threshold, 0.3);
        assert_eq!(cfg.matcher.patch_width, 8);
        assert_eq!(cfg.ransac, eval_ransac());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<FileConfig>("[train]\nepoch = 4\n").is_err());
        assert!(toml::from_str::<FileConfig>("[nonsense]\n").is_err());
    }

    #[test]
    fn pair_model_table_parses() {
        let cfg: FileConfig =
            toml::from_str("[pairs.model]\nkind = \"hemisphere\"\nz_plane = -1.0\nr_sphere = 5.0\n").unwrap();
        assert_eq!(cfg.pairs.model, Some(PseudoDepthModel::Hemisphere { z_plane: -1.0, r_sphere: 5.0 }));
    }
}
