//! Flat-buffer entry point for dataloader bindings.
//!
//! A binding hands over a packed `height × width × 3` RGB buffer, the
//! image's annotation records, a flat key-value config with dotted keys
//! (`"jitter.scale_range"`) and a seed. Inputs are never modified.

use std::collections::BTreeMap;

use image::RgbImage;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{Map, Value};
use thiserror::Error;

use crate::annotations::InstanceAnnotation;
use crate::pipeline::{augment_image, AugmentConfig, AugmentedSample, PipelineError};

#[derive(Debug, Error)]
pub enum RawError {
    #[error("buffer has {got} bytes, expected {expected} for {height}x{width}x3")]
    BufferSize {
        got: usize,
        expected: usize,
        height: usize,
        width: usize,
    },
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("invalid value for config key `{key}`: {message}")]
    InvalidValue { key: String, message: String },
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
}

/// Result of [`augment_buffer`].
#[derive(Debug, Clone)]
pub struct RawOutput {
    /// Packed `height × width × 3` RGB bytes.
    pub pixels: Vec<u8>,
    pub annotations: Vec<InstanceAnnotation>,
    pub sample: AugmentedSample,
}

/// Library version string (semver).
pub fn version() -> &'static str {
    crate::VERSION
}

fn flatten(prefix: &str, value: &Value, out: &mut BTreeMap<String, Value>) {
    match value {
        Value::Object(map) => {
            for (k, v) in map {
                let key = if prefix.is_empty() {
                    k.clone()
                } else {
                    format!("{prefix}.{k}")
                };
                flatten(&key, v, out);
            }
        }
        _ => {
            out.insert(prefix.to_string(), value.clone());
        }
    }
}

/// Every leaf key accepted by [`config_from_flat`], with its default value.
pub fn default_flat_config() -> BTreeMap<String, Value> {
    let value = serde_json::to_value(AugmentConfig::default()).expect("config serializes");
    let mut out = BTreeMap::new();
    flatten("", &value, &mut out);
    out
}

fn set_path(root: &mut Value, key: &str, value: Value) {
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    for part in &parts[..parts.len() - 1] {
        node = node
            .as_object_mut()
            .expect("known keys address objects")
            .entry(part.to_string())
            .or_insert_with(|| Value::Object(Map::new()));
    }
    node.as_object_mut()
        .expect("known keys address objects")
        .insert(parts[parts.len() - 1].to_string(), value);
}

/// Build a config from dotted keys over the defaults. Errors name the key.
pub fn config_from_flat<'a, I>(entries: I) -> Result<AugmentConfig, RawError>
where
    I: IntoIterator<Item = (&'a str, &'a Value)>,
{
    let known = default_flat_config();
    let defaults = serde_json::to_value(AugmentConfig::default()).expect("config serializes");
    let mut merged = defaults.clone();
    for (key, value) in entries {
        if !known.contains_key(key) {
            return Err(RawError::UnknownKey(key.to_string()));
        }
        // Check each key alone so a type error can be attributed to it.
        let mut single = defaults.clone();
        set_path(&mut single, key, value.clone());
        let cfg: AugmentConfig =
            serde_json::from_value(single).map_err(|e| RawError::InvalidValue {
                key: key.to_string(),
                message: e.to_string(),
            })?;
        cfg.validate().map_err(|e| RawError::InvalidValue {
            key: key.to_string(),
            message: e.to_string(),
        })?;
        set_path(&mut merged, key, value.clone());
    }
    let cfg: AugmentConfig = serde_json::from_value(merged).map_err(|e| RawError::InvalidValue {
        key: "<combined>".into(),
        message: e.to_string(),
    })?;
    cfg.validate()?;
    Ok(cfg)
}

/// Augment one packed RGB buffer.
///
/// The random stream is seeded from `seed` alone, so identical calls give
/// identical results.
pub fn augment_buffer(
    pixels: &[u8],
    height: usize,
    width: usize,
    annotations: &[InstanceAnnotation],
    config: &BTreeMap<String, Value>,
    seed: u64,
) -> Result<RawOutput, RawError> {
    let expected = height * width * 3;
    if pixels.len() != expected || height == 0 || width == 0 {
        return Err(RawError::BufferSize {
            got: pixels.len(),
            expected,
            height,
            width,
        });
    }
    let cfg = config_from_flat(config.iter().map(|(k, v)| (k.as_str(), v)))?;
    let image = RgbImage::from_raw(width as u32, height as u32, pixels.to_vec())
        .expect("length checked above");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sample = augment_image(&image, annotations, &cfg, &mut rng)?;
    Ok(RawOutput {
        pixels: sample.image.as_raw().clone(),
        annotations: sample.annotations.clone(),
        sample,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn flat_keys_cover_nested_config() {
        let keys = default_flat_config();
        assert!(keys.contains_key("jitter.scale_range"));
        assert!(keys.contains_key("heatmap.working_size"));
        assert!(keys.contains_key("apply_probability"));
        assert!(keys.contains_key("max_instances_per_image"));
    }

    #[test]
    fn dotted_keys_override_defaults() {
        let scale = json!([0.9, 1.1]);
        let p = json!(1.0);
        let mode = json!("random_jitter");
        let cfg = config_from_flat([
            ("jitter.scale_range", &scale),
            ("apply_probability", &p),
            ("mode", &mode),
        ])
        .unwrap();
        assert_eq!(cfg.jitter.scale_range, [0.9, 1.1]);
        assert_eq!(cfg.apply_probability, 1.0);
        assert_eq!(cfg.mode, crate::pipeline::AugmentMode::RandomJitter);
        assert_eq!(cfg.heatmap, crate::heatmap::HeatmapConfig::default());
    }

    #[test]
    fn unknown_key_is_named() {
        let v = json!(1);
        let err = config_from_flat([("jitter.scael_range", &v)]).unwrap_err();
        assert!(matches!(&err, RawError::UnknownKey(k) if k == "jitter.scael_range"));
        assert!(err.to_string().contains("jitter.scael_range"));
    }

    #[test]
    fn bad_value_is_named() {
        let v = json!("lots");
        let err = config_from_flat([("apply_probability", &v)]).unwrap_err();
        assert!(err.to_string().contains("apply_probability"), "{err}");
        let v = json!(2.0);
        let err = config_from_flat([("apply_probability", &v)]).unwrap_err();
        assert!(err.to_string().contains("apply_probability"), "{err}");
    }

    #[test]
    fn wrong_buffer_length() {
        let err = augment_buffer(&[0; 10], 2, 2, &[], &BTreeMap::new(), 0).unwrap_err();
        assert!(matches!(err, RawError::BufferSize { expected: 12, .. }));
    }
}
