//! Run configuration: one JSON document drives every workflow, with
//! dotted-path command-line overrides. Unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{LactError, Result};
use crate::ista::IstaConfig;
use crate::phantom::{DatasetConfig, PhantomConfig};
use crate::psidonet::{TrainConfig, Variant};
use crate::tomo::Geometry;
use crate::wavelet::{Family, WaveletSpec};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct GeometrySection {
    pub image_side: usize,
    /// Half-width of the visible arc in degrees; 60 means angles in
    /// [-60, +60] and a missing wedge of 60 degrees.
    pub visible_half_angle_deg: f64,
    pub n_angles: usize,
    /// Detector count; derived from the side when absent.
    pub n_detectors: Option<usize>,
    pub norm_iterations: usize,
}

impl Default for GeometrySection {
    fn default() -> Self {
        GeometrySection {
            image_side: 64,
            visible_half_angle_deg: 60.0,
            n_angles: 121,
            n_detectors: None,
            norm_iterations: 50,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct WaveletSection {
    pub family: String,
    pub j0: u8,
}

impl Default for WaveletSection {
    fn default() -> Self {
        WaveletSection {
            family: "haar".into(),
            j0: 3,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct IstaSection {
    pub lambda: f64,
    pub l: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for IstaSection {
    fn default() -> Self {
        IstaSection {
            lambda: 2e-6,
            l: 5.0,
            tol: 2e-4,
            max_iter: 2000,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub variant: String,
    pub n_blocks: usize,
    pub n_groups: usize,
    pub tau: usize,
    pub positivity: bool,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            variant: "O".into(),
            n_blocks: 30,
            n_groups: 10,
            tau: 16,
            positivity: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainSection {
            learning_rate: t.learning_rate,
            epochs: t.epochs,
            batch_size: t.batch_size,
            beta1: t.beta1,
            beta2: t.beta2,
            epsilon: t.epsilon,
            seed: t.seed,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub master_seed: u64,
    pub sigma_rel: f64,
    pub max_ellipses: usize,
    pub axis_range: (f64, f64),
    pub intensity_range: (f64, f64),
}

impl Default for DataSection {
    fn default() -> Self {
        let d = DatasetConfig::default();
        DataSection {
            train: d.train,
            val: d.val,
            test: d.test,
            master_seed: d.master_seed,
            sigma_rel: d.sigma_rel,
            max_ellipses: d.phantom.max_ellipses,
            axis_range: d.phantom.axis_range,
            intensity_range: d.phantom.intensity_range,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Default)]
#[serde(deny_unknown_fields, default)]
pub struct PathsSection {
    pub data_dir: Option<PathBuf>,
    pub filter_bank: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Default)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub geometry: GeometrySection,
    pub wavelet: WaveletSection,
    pub ista: IstaSection,
    pub model: ModelSection,
    pub train: TrainSection,
    pub data: DataSection,
    pub paths: PathsSection,
    pub threads: Option<usize>,
}

impl RunConfig {
    /// Loads a config file (or the defaults when `path` is `None`) and
    /// applies `key.path=value` overrides. The merged document is
    /// re-validated against the schema, so unknown keys fail loudly.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<RunConfig> {
        let mut value = match path {
            Some(p) => {
                let text =
                    std::fs::read_to_string(p).map_err(|e| LactError::storage(p, e))?;
                serde_json::from_str::<serde_json::Value>(&text)
                    .map_err(|e| LactError::Config(format!("{}: {e}", p.display())))?
            }
            None => serde_json::to_value(RunConfig::default())
                .map_err(|e| LactError::Config(e.to_string()))?,
        };
        for ov in overrides {
            apply_override(&mut value, ov)?;
        }
        serde_json::from_value(value).map_err(|e| LactError::Config(e.to_string()))
    }

    pub fn wavelet_j(&self) -> Result<u8> {
        let side = self.geometry.image_side;
        if side < 4 || !side.is_power_of_two() {
            return Err(LactError::Config(format!(
                "geometry.image_side must be a power of two >= 4, got {side}"
            )));
        }
        Ok(side.trailing_zeros() as u8)
    }

    pub fn wavelet_spec(&self) -> Result<WaveletSpec> {
        WaveletSpec::new(
            Family::from_name(&self.wavelet.family)?,
            self.wavelet_j()?,
            self.wavelet.j0,
        )
    }

    /// Normalized acquisition geometry.
    pub fn build_geometry(&self) -> Result<Geometry> {
        let half = self.geometry.visible_half_angle_deg.to_radians();
        Geometry::limited_angle(
            self.geometry.image_side,
            half,
            self.geometry.n_angles,
            self.geometry.n_detectors,
        )?
        .normalized(self.geometry.norm_iterations)
    }

    pub fn ista_config(&self) -> IstaConfig {
        IstaConfig {
            lambda: self.ista.lambda,
            l: self.ista.l,
            tol: self.ista.tol,
            max_iter: self.ista.max_iter,
            record_trace: false,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.train.learning_rate,
            epochs: self.train.epochs,
            batch_size: self.train.batch_size,
            beta1: self.train.beta1,
            beta2: self.train.beta2,
            epsilon: self.train.epsilon,
            seed: self.train.seed,
        }
    }

    pub fn dataset_config(&self) -> DatasetConfig {
        DatasetConfig {
            train: self.data.train,
            val: self.data.val,
            test: self.data.test,
            master_seed: self.data.master_seed,
            sigma_rel: self.data.sigma_rel,
            phantom: PhantomConfig {
                max_ellipses: self.data.max_ellipses,
                axis_range: self.data.axis_range,
                intensity_range: self.data.intensity_range,
            },
        }
    }

    pub fn variant(&self) -> Result<Variant> {
        Variant::from_str(&self.model.variant)
    }
}

fn apply_override(value: &mut serde_json::Value, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| LactError::Config(format!("override '{spec}' is not key=value")))?;
    let parsed: serde_json::Value = serde_json::from_str(raw)
        .unwrap_or_else(|_| serde_json::Value::String(raw.to_string()));
    let mut cur = value;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = cur
            .as_object_mut()
            .ok_or_else(|| LactError::Config(format!("override path '{key}' is not an object")))?;
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), parsed);
            return Ok(());
        }
        cur = obj
            .entry(part.to_string())
            .or_insert_with(|| serde_json::Value::Object(Default::default()));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_build() {
        let cfg = RunConfig::load(None, &[]).unwrap();
        assert_eq!(cfg.geometry.image_side, 64);
        assert_eq!(cfg.wavelet_j().unwrap(), 6);
        let spec = cfg.wavelet_spec().unwrap();
        assert_eq!(spec.n_subbands(), 10);
        assert_eq!(cfg.ista_config().lambda, 2e-6);
    }

    #[test]
    fn overrides_apply_and_unknown_keys_fail() {
        let cfg = RunConfig::load(
            None,
            &[
                "geometry.image_side=32".into(),
                "wavelet.j0=2".into(),
                "model.variant=F".into(),
                "ista.lambda=0.001".into(),
            ],
        )
        .unwrap();
        assert_eq!(cfg.geometry.image_side, 32);
        assert_eq!(cfg.wavelet.j0, 2);
        assert_eq!(cfg.variant().unwrap(), Variant::FilterBased);
        assert_eq!(cfg.ista.lambda, 1e-3);

        let err = RunConfig::load(None, &["geometry.typo=1".into()]);
        assert!(err.is_err());
        let err = RunConfig::load(None, &["nonsense=1".into()]);
        assert!(err.is_err());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.json");
        let cfg = RunConfig::default();
        crate::store::write_json(&path, &cfg).unwrap();
        let loaded = RunConfig::load(Some(&path), &[]).unwrap();
        assert_eq!(cfg, loaded);
    }
}
