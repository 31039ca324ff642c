//! Run configuration shared by every stage of the pipeline.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How the domain label is turned into the generator's conditioning vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LabelMode {
    OneHot,
    Embedding,
}

/// Every knob of a run. Flat by construction so it maps onto a key-value
/// config file one field per key.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Length of the shared latent code z.
    pub z_dim: usize,
    /// Number of domains K.
    pub num_domains: usize,
    pub image_size: usize,
    pub channels: usize,
    /// Width of the first discriminator/encoder block; deeper blocks double it.
    pub base_channels: usize,
    pub label_mode: LabelMode,
    pub embed_dim: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub step1_epochs: usize,
    pub step2_steps: usize,
    pub d_steps_per_g_step: usize,
    /// Adds the fake-image class term to the discriminator loss (original
    /// AC-GAN). Off by default.
    pub ac_on_fake_for_d: bool,
    /// Zero the final dense layers of D and E at initialization.
    pub zero_init_heads: bool,
    pub aug_flip: bool,
    pub aug_flip_prob: f64,
    pub aug_rotate: bool,
    pub aug_max_rotation_deg: f64,
    pub aug_zoom: bool,
    pub aug_max_zoom: f64,
    /// Iterations between sample grids (0 disables them).
    pub grid_interval: usize,
    /// Step-2 iterations between periodic checkpoints (0 disables them).
    pub step2_checkpoint_interval: usize,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            z_dim: 100,
            num_domains: 2,
            image_size: 32,
            channels: 3,
            base_channels: 64,
            label_mode: LabelMode::Embedding,
            embed_dim: 5,
            batch_size: 64,
            lr: 0.0002,
            adam_beta1: 0.5,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            step1_epochs: 100,
            step2_steps: 20_000,
            d_steps_per_g_step: 1,
            ac_on_fake_for_d: false,
            zero_init_heads: false,
            aug_flip: true,
            aug_flip_prob: 0.5,
            aug_rotate: true,
            aug_max_rotation_deg: 10.0,
            aug_zoom: true,
            aug_max_zoom: 1.15,
            grid_interval: 500,
            step2_checkpoint_interval: 2_000,
            seed: 42,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        fn positive(name: &str, v: usize) -> Result<()> {
            if v == 0 {
                return Err(Error::Config(format!("`{name}` must be positive")));
            }
            Ok(())
        }
        positive("z_dim", self.z_dim)?;
        positive("batch_size", self.batch_size)?;
        positive("embed_dim", self.embed_dim)?;
        positive("base_channels", self.base_channels)?;
        positive("d_steps_per_g_step", self.d_steps_per_g_step)?;
        if self.num_domains < 2 {
            return Err(Error::Config(format!(
                "`num_domains` must be at least 2, got {}",
                self.num_domains
            )));
        }
        if !self.image_size.is_power_of_two() || !(4..=64).contains(&self.image_size) {
            return Err(Error::Config(format!(
                "`image_size` must be a power of two between 4 and 64, got {}",
                self.image_size
            )));
        }
        if self.channels != 1 && self.channels != 3 {
            return Err(Error::Config(format!(
                "`channels` must be 1 or 3, got {}",
                self.channels
            )));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config("`lr` must be positive".into()));
        }
        for (name, b) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("`{name}` must lie in [0, 1)")));
            }
        }
        if !(self.adam_eps > 0.0) {
            return Err(Error::Config("`adam_eps` must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.aug_flip_prob) {
            return Err(Error::Config("`aug_flip_prob` must lie in [0, 1]".into()));
        }
        if !(self.aug_max_rotation_deg >= 0.0 && self.aug_max_rotation_deg <= 180.0) {
            return Err(Error::Config("`aug_max_rotation_deg` must lie in [0, 180]".into()));
        }
        if !(self.aug_max_zoom >= 1.0 && self.aug_max_zoom.is_finite()) {
            return Err(Error::Config("`aug_max_zoom` must be at least 1".into()));
        }
        Ok(())
    }

    /// Width of the conditioning vector fed to the generator.
    pub fn label_width(&self) -> usize {
        match self.label_mode {
            LabelMode::OneHot => self.num_domains,
            LabelMode::Embedding => self.embed_dim,
        }
    }

    /// Fields that determine parameter shapes; two configs whose architecture
    /// keys agree can exchange checkpoints.
    pub fn architecture_mismatch(&self, other: &RunConfig) -> Option<String> {
        let pairs: [(&str, String, String); 7] = [
            ("z_dim", self.z_dim.to_string(), other.z_dim.to_string()),
            ("num_domains", self.num_domains.to_string(), other.num_domains.to_string()),
            ("image_size", self.image_size.to_string(), other.image_size.to_string()),
            ("channels", self.channels.to_string(), other.channels.to_string()),
            ("base_channels", self.base_channels.to_string(), other.base_channels.to_string()),
            ("label_mode", format!("{:?}", self.label_mode), format!("{:?}", other.label_mode)),
            ("embed_dim", self.embed_dim.to_string(), other.embed_dim.to_string()),
        ];
        pairs.into_iter().find(|(_, a, b)| a != b).map(|(name, a, b)| {
            format!("`{name}` differs: checkpoint has {a}, config has {b}")
        })
    }
}
