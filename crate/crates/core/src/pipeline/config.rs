use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::losses::LossWeights;
use crate::phantom::PhantomConfig;
use crate::raster::PhysicalScale;
use crate::recon3d::ReconConfig;
use crate::scnet::Topology;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    /// Number of phantom samples written by the `phantom` command.
    pub n: usize,
    /// Fraction of samples used for training; the rest are held out.
    pub train_fraction: f64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            n: 60,
            train_fraction: 0.7,
        }
    }
}

/// Optimiser and schedule. None of these values come from a published
/// recipe; they are desk-scale defaults.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub bn_momentum: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 200,
            batch_size: 4,
            lr: 3e-3,
            bn_momentum: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub threads: Option<usize>,
    pub phantom: PhantomConfig,
    pub dataset: DatasetConfig,
    pub topology: Topology,
    pub loss: LossWeights,
    pub train: TrainConfig,
    pub recon: ReconConfig,
    /// Vessel threshold applied to probability maps before reconstruction.
    pub seg_threshold: f32,
}

impl Default for PipelineConfig {
    /// The toy configuration: 64x64 phantoms, 4 levels of width 8, 200 steps.
    fn default() -> Self {
        let phantom = PhantomConfig {
            width: 64,
            height: 64,
            radius_root: 3.0,
            radius_decay: 0.75,
            depth_levels: 3,
            ..PhantomConfig::default()
        };
        Self {
            seed: 1,
            threads: None,
            phantom,
            dataset: DatasetConfig::default(),
            topology: Topology::default(),
            loss: LossWeights::default(),
            train: TrainConfig::default(),
            recon: ReconConfig {
                scale: PhysicalScale::for_width(phantom.width),
                ..ReconConfig::default()
            },
            seg_threshold: 0.5,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.phantom.validate()?;
        self.topology.validate()?;
        self.loss.validate()?;
        self.recon.validate()?;
        let div = 1usize << self.topology.levels;
        if !self.phantom.width.is_multiple_of(div) || !self.phantom.height.is_multiple_of(div) {
            return Err(Error::Config(format!(
                "phantom canvas {}x{} must be divisible by 2^levels = {div}",
                self.phantom.width, self.phantom.height
            )));
        }
        if self.dataset.n == 0 {
            return Err(Error::Config("dataset.n must be >= 1".into()));
        }
        if !(self.dataset.train_fraction > 0.0 && self.dataset.train_fraction < 1.0) {
            return Err(Error::Config(format!(
                "train_fraction must lie in (0, 1), got {}",
                self.dataset.train_fraction
            )));
        }
        let t = &self.train;
        if t.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if !(t.lr > 0.0 && t.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be > 0, got {}", t.lr)));
        }
        if !(0.0..=1.0).contains(&t.bn_momentum) {
            return Err(Error::Config(format!("bn_momentum must lie in [0, 1], got {}", t.bn_momentum)));
        }
        if self.threads == Some(0) {
            return Err(Error::Config("threads must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.seg_threshold) {
            return Err(Error::Config(format!("seg_threshold must lie in [0, 1], got {}", self.seg_threshold)));
        }
        Ok(())
    }

    /// Parses a config file; returns it with the SHA-256 of its bytes.
    pub fn from_json_bytes(bytes: &[u8]) -> Result<(Self, String)> {
        let cfg: PipelineConfig =
            serde_json::from_slice(bytes).map_err(|e| Error::Config(format!("config: {e}")))?;
        cfg.validate()?;
        Ok((cfg, hex_sha256(bytes)))
    }

    pub fn load(path: &Path) -> Result<(Self, String)> {
        let bytes = std::fs::read(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingInput(format!("config file {}", path.display())),
            _ => Error::io(path, e),
        })?;
        Self::from_json_bytes(&bytes)
    }

    /// Hash used when no config file is given: the canonical JSON of the defaults.
    pub fn default_hash() -> String {
        hex_sha256(serde_json::to_string(&Self::default()).expect("serialisable").as_bytes())
    }
}

pub fn hex_sha256(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        let c = PipelineConfig::default();
        c.validate().unwrap();
        let text = serde_json::to_string_pretty(&c).unwrap();
        let (back, hash) = PipelineConfig::from_json_bytes(text.as_bytes()).unwrap();
        assert_eq!(back, c);
        assert_eq!(hash.len(), 64);
        assert_eq!(hash, hex_sha256(text.as_bytes()));
    }

    #[test]
    fn unknown_keys_and_bad_values_are_config_errors() {
        let e = PipelineConfig::from_json_bytes(br#"{"sed": 3}"#).unwrap_err();
        assert!(matches!(e, Error::Config(_)));
        let e = PipelineConfig::from_json_bytes(br#"{"train": {"lr": -1.0}}"#).unwrap_err();
        assert!(matches!(e, Error::Config(_)));
        let e = PipelineConfig::from_json_bytes(br#"{"phantom": {"width": 60}}"#).unwrap_err();
        assert!(matches!(e, Error::Config(_)));
        let (c, _) = PipelineConfig::from_json_bytes(br#"{"seed": 9}"#).unwrap();
        assert_eq!(c.seed, 9);
    }

    #[test]
    fn hash_tracks_bytes() {
        assert_ne!(hex_sha256(b"{}"), hex_sha256(b"{ }"));
        assert_eq!(
            hex_sha256(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
