//! Optional TOML configuration file.
//!
//! Every key is optional; a missing key falls back to the library default
//! and a command-line flag overrides whatever the file says. The file path
//! comes from `--config`, else from `GREYBOX_CONFIG`.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::classifier::TrainConfig;
use crate::dataset::{SynthConfig, VectorizeConfig};
use crate::error::{read_to_string, Error, Result};
use crate::lsp::NoiseConfig;

pub const CONFIG_ENV: &str = "GREYBOX_CONFIG";

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub learning_rate: Option<f64>,
    pub max_epochs: Option<usize>,
    pub loss_tolerance: Option<f64>,
    pub l2_penalty: Option<f64>,
    pub bias: Option<bool>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VectorizeSection {
    pub tau: Option<f64>,
    pub min_pixels: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSection {
    pub p_omit: Option<f64>,
    pub height: Option<usize>,
    pub width: Option<usize>,
    pub max_instances: Option<usize>,
    pub n_per_class: Option<usize>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSection {
    pub p_drop_instance: Option<f64>,
    pub p_drop_attribute: Option<f64>,
    pub p_spurious: Option<f64>,
    pub keep_one_instance: Option<bool>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KgSection {
    pub epsilon: Option<f64>,
    pub min_support: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CounterfactualSection {
    pub max_flips: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub vectorize: VectorizeSection,
    #[serde(default)]
    pub synth: SynthSection,
    #[serde(default)]
    pub noise: NoiseSection,
    #[serde(default)]
    pub kg: KgSection,
    #[serde(default)]
    pub counterfactual: CounterfactualSection,
}

impl FileConfig {
    pub fn parse(text: &str, source_name: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| {
            let line = e
                .span()
                .map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1)
                .unwrap_or(0);
            Error::parse(source_name, line, e.message())
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&read_to_string(path)?, &path.display().to_string())
    }

    /// Loads the file named by `explicit`, else by the environment variable,
    /// else returns the empty configuration.
    pub fn resolve(explicit: Option<&Path>) -> Result<Self> {
        let from_env = std::env::var_os(CONFIG_ENV)
            .filter(|v| !v.is_empty())
            .map(PathBuf::from);
        match explicit.map(Path::to_path_buf).or(from_env) {
            Some(path) => Self::load(&path),
            None => Ok(Self::default()),
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        let d = TrainConfig::default();
        let t = &self.train;
        TrainConfig {
            learning_rate: t.learning_rate.unwrap_or(d.learning_rate),
            max_epochs: t.max_epochs.unwrap_or(d.max_epochs),
            loss_tolerance: t.loss_tolerance.unwrap_or(d.loss_tolerance),
            l2_penalty: t.l2_penalty.unwrap_or(d.l2_penalty),
            bias: t.bias.unwrap_or(d.bias),
            seed: t.seed.unwrap_or(d.seed),
        }
    }

    pub fn vectorize_config(&self) -> VectorizeConfig {
        let d = VectorizeConfig::default();
        VectorizeConfig {
            tau: self.vectorize.tau.unwrap_or(d.tau),
            min_pixels: self.vectorize.min_pixels.unwrap_or(d.min_pixels),
        }
    }

    pub fn synth_config(&self) -> SynthConfig {
        let d = SynthConfig::default();
        let s = &self.synth;
        SynthConfig {
            p_omit: s.p_omit.unwrap_or(d.p_omit),
            height: s.height.unwrap_or(d.height),
            width: s.width.unwrap_or(d.width),
            max_instances: s.max_instances.unwrap_or(d.max_instances),
        }
    }

    pub fn noise_config(&self) -> NoiseConfig {
        let d = NoiseConfig::default();
        let n = &self.noise;
        NoiseConfig {
            p_drop_instance: n.p_drop_instance.unwrap_or(d.p_drop_instance),
            p_drop_attribute: n.p_drop_attribute.unwrap_or(d.p_drop_attribute),
            p_spurious: n.p_spurious.unwrap_or(d.p_spurious),
            keep_one_instance: n.keep_one_instance.unwrap_or(d.keep_one_instance),
            seed: n.seed.unwrap_or(d.seed),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_yields_library_defaults() {
        let cfg = FileConfig::parse("", "empty.toml").unwrap();
        assert_eq!(cfg.train_config(), TrainConfig::default());
        assert_eq!(cfg.vectorize_config(), VectorizeConfig::default());
        assert_eq!(cfg.synth_config(), SynthConfig::default());
        assert_eq!(cfg.noise_config(), NoiseConfig::default());
    }

    #[test]
    fn sections_override_defaults() {
        let text = "[train]\nlearning_rate = 0.25\nbias = true\n\n[vectorize]\ntau = 0.7\n\n[kg]\nepsilon = 0.05\n";
        let cfg = FileConfig::parse(text, "c.toml").unwrap();
        let t = cfg.train_config();
        assert_eq!(t.learning_rate, 0.25);
        assert!(t.bias);
        assert_eq!(t.max_epochs, TrainConfig::default().max_epochs);
        assert_eq!(cfg.vectorize_config().tau, 0.7);
        assert_eq!(cfg.kg.epsilon, Some(0.05));
    }

    #[test]
    fn unknown_keys_are_rejected_with_a_line() {
        let err = FileConfig::parse("[train]\nlearning_rate = 0.1\nlr = 3\n", "c.toml").unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(err_code("[nope]\n"), 1);
    }

    fn err_code(text: &str) -> i32 {
        FileConfig::parse(text, "c.toml").unwrap_err().exit_code()
    }
}
