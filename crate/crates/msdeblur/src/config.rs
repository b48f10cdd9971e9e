//! Plain-text `key = value` training configuration.
//!
//! Every key is optional; missing keys come from the preset. The
//! effective configuration written next to a run lists every key, so
//! feeding it back reproduces the run.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use msdeblur_core::augment::AugmentConfig;
use msdeblur_core::losses::GeneratorObjective;
use msdeblur_core::model::{DiscriminatorSpec, GeneratorSpec, Init};
use msdeblur_core::trainer::TrainConfig;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    #[default]
    Desk,
    #[value(alias = "full")]
    #[serde(alias = "full")]
    Paper,
}

impl Preset {
    pub fn train_config(self) -> TrainConfig {
        match self {
            Preset::Desk => TrainConfig::desk(),
            Preset::Paper => TrainConfig::full(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub preset: Option<Preset>,
    pub seed: Option<u64>,
    pub iterations: Option<u64>,
    pub batch_size: Option<usize>,
    pub patch_size: Option<usize>,
    pub learning_rate: Option<f64>,
    pub lr_decay_step: Option<u64>,
    pub lr_decay_factor: Option<f64>,
    pub lambda: Option<f64>,
    pub objective: Option<GeneratorObjective>,
    pub init: Option<Init>,
    pub zero_tail: Option<bool>,
    pub adam_beta1: Option<f64>,
    pub adam_beta2: Option<f64>,
    pub adam_eps: Option<f64>,
    pub scales: Option<usize>,
    pub resblocks_per_scale: Option<usize>,
    pub feature_channels: Option<usize>,
    pub filter_size: Option<usize>,
    pub input_skip: Option<bool>,
    pub leaky_slope: Option<f64>,
    pub flip_horizontal: Option<bool>,
    pub flip_vertical: Option<bool>,
    pub rotate: Option<bool>,
    pub permute_channels: Option<bool>,
    /// `[lo, hi]`; an empty list disables saturation changes.
    pub saturation: Option<Vec<f64>>,
    pub noise_sigma_std: Option<f64>,
    /// Write a checkpoint every this many iterations; 0 writes only the
    /// final one.
    pub checkpoint_every: Option<u64>,
}

/// What a training run needs beyond [`TrainConfig`].
#[derive(Debug, Clone, PartialEq)]
pub struct RunSettings {
    pub preset: Preset,
    pub train: TrainConfig,
    pub checkpoint_every: u64,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    /// Applies the overrides on top of the preset (`preset_override`
    /// wins over the file's own `preset` key).
    pub fn resolve(&self, preset_override: Option<Preset>) -> Result<RunSettings> {
        let preset = preset_override.or(self.preset).unwrap_or_default();
        let mut t = preset.train_config();
        macro_rules! set {
            ($field:ident => $($target:tt)+) => {
                if let Some(v) = self.$field.clone() {
                    $($target)+ = v;
                }
            };
        }
        set!(seed => t.seed);
        set!(iterations => t.iterations);
        set!(batch_size => t.batch_size);
        set!(patch_size => t.patch_size);
        set!(learning_rate => t.learning_rate);
        set!(lr_decay_step => t.lr_decay_step);
        set!(lr_decay_factor => t.lr_decay_factor);
        set!(lambda => t.lambda);
        set!(objective => t.objective);
        set!(init => t.init);
        set!(zero_tail => t.zero_tail);
        set!(adam_beta1 => t.adam.beta1);
        set!(adam_beta2 => t.adam.beta2);
        set!(adam_eps => t.adam.eps);
        set!(scales => t.generator.scales);
        set!(resblocks_per_scale => t.generator.resblocks_per_scale);
        set!(feature_channels => t.generator.feature_channels);
        set!(filter_size => t.generator.filter_size);
        set!(input_skip => t.generator.input_skip);
        set!(flip_horizontal => t.augment.flip_horizontal);
        set!(flip_vertical => t.augment.flip_vertical);
        set!(rotate => t.augment.rotate);
        set!(permute_channels => t.augment.permute_channels);
        set!(noise_sigma_std => t.augment.noise_sigma_std);
        if let Some(s) = &self.saturation {
            t.augment.saturation = match s.as_slice() {
                [] => None,
                [lo, hi] if lo <= hi => Some((*lo, *hi)),
                _ => bail!("saturation must be [] or [lo, hi] with lo <= hi"),
            };
        }
        let slope = self.leaky_slope.unwrap_or(t.discriminator.leaky_slope);
        t.discriminator = match preset {
            Preset::Desk => DiscriminatorSpec::desk(t.patch_size),
            Preset::Paper => DiscriminatorSpec {
                input_size: t.patch_size,
                ..DiscriminatorSpec::full()
            },
        };
        t.discriminator.leaky_slope = slope;
        t.validate()?;
        Ok(RunSettings {
            preset,
            train: t,
            checkpoint_every: self.checkpoint_every.unwrap_or(0),
        })
    }
}

impl RunSettings {
    /// Every key, fully populated.
    pub fn to_file_config(&self) -> FileConfig {
        let t = &self.train;
        let g: &GeneratorSpec = &t.generator;
        let a: &AugmentConfig = &t.augment;
        FileConfig {
            preset: Some(self.preset),
            seed: Some(t.seed),
            iterations: Some(t.iterations),
            batch_size: Some(t.batch_size),
            patch_size: Some(t.patch_size),
            learning_rate: Some(t.learning_rate),
            lr_decay_step: Some(t.lr_decay_step),
            lr_decay_factor: Some(t.lr_decay_factor),
            lambda: Some(t.lambda),
            objective: Some(t.objective),
            init: Some(t.init),
            zero_tail: Some(t.zero_tail),
            adam_beta1: Some(t.adam.beta1),
            adam_beta2: Some(t.adam.beta2),
            adam_eps: Some(t.adam.eps),
            scales: Some(g.scales),
            resblocks_per_scale: Some(g.resblocks_per_scale),
            feature_channels: Some(g.feature_channels),
            filter_size: Some(g.filter_size),
            input_skip: Some(g.input_skip),
            leaky_slope: Some(t.discriminator.leaky_slope),
            flip_horizontal: Some(a.flip_horizontal),
            flip_vertical: Some(a.flip_vertical),
            rotate: Some(a.rotate),
            permute_channels: Some(a.permute_channels),
            saturation: Some(a.saturation.map(|(lo, hi)| vec![lo, hi]).unwrap_or_default()),
            noise_sigma_std: Some(a.noise_sigma_std),
            checkpoint_every: Some(self.checkpoint_every),
        }
    }

    pub fn echo(&self) -> Result<String> {
        Ok(toml::to_string(&self.to_file_config())?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_desk_preset() {
        let s = FileConfig::default().resolve(None).unwrap();
        assert_eq!(s.train, TrainConfig::desk());
        assert_eq!(s.preset, Preset::Desk);
    }

    #[test]
    fn preset_value_selects_full_config() {
        let f: FileConfig = toml::from_str("preset = \"paper\"").unwrap();
        assert_eq!(f.resolve(None).unwrap().train, TrainConfig::full());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<FileConfig>("learning_rat = 1e-4").is_err());
    }

    #[test]
    fn echo_reproduces_settings() {
        let f: FileConfig = toml::from_str(
            "seed = 7\nlearning_rate = 3.3e-5\nsaturation = []\nobjective = \"non_saturating\"\npatch_size = 32\ninit = \"he_uniform\"",
        )
        .unwrap();
        let s = f.resolve(None).unwrap();
        assert_eq!(s.train.augment.saturation, None);
        assert_eq!(s.train.discriminator.input_size, 32);
        let back: FileConfig = toml::from_str(&s.echo().unwrap()).unwrap();
        assert_eq!(back.resolve(None).unwrap(), s);
    }

    #[test]
    fn invalid_values_fail_validation() {
        let f: FileConfig = toml::from_str("lr_decay_factor = 1.5").unwrap();
        assert!(f.resolve(None).is_err());
        let f: FileConfig = toml::from_str("saturation = [2.0, 1.0]").unwrap();
        assert!(f.resolve(None).is_err());
    }
}
