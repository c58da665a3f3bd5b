//! Model files: one line of JSON header, then every parameter as a
//! little-endian f64 in tensor order (conv1 w, conv1 b, conv2 w, conv2 b,
//! fc w, fc b).

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ModelParams, TrainConfig, CONV1_OUT, CONV2_OUT, FEATURES, KERNEL};
use crate::dataset::{ChannelStats, CHANNELS};
use crate::error::{Error, IoContext, Result};

const FORMAT: &str = "miscause-model/1";
const TENSOR_NAMES: [&str; 6] = ["conv1_w", "conv1_b", "conv2_w", "conv2_b", "fc_w", "fc_b"];

/// Parameters together with the normalization they were trained under.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub model_id: String,
    pub params: ModelParams,
    pub stats: ChannelStats,
    pub seed: u64,
    pub train_config: Option<TrainConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelHeader {
    pub format: String,
    pub model_id: String,
    pub num_classes: usize,
    pub shapes: BTreeMap<String, Vec<usize>>,
    pub seed: u64,
    pub train_config: Option<TrainConfig>,
    pub channel_stats: ChannelStats,
}

fn shapes(num_classes: usize) -> BTreeMap<String, Vec<usize>> {
    let dims = [
        vec![CONV1_OUT, CHANNELS, KERNEL, KERNEL],
        vec![CONV1_OUT],
        vec![CONV2_OUT, CONV1_OUT, KERNEL, KERNEL],
        vec![CONV2_OUT],
        vec![num_classes, FEATURES],
        vec![num_classes],
    ];
    TENSOR_NAMES
        .iter()
        .map(|s| s.to_string())
        .zip(dims)
        .collect()
}

pub fn save_model(path: impl AsRef<Path>, model: &TrainedModel) -> Result<()> {
    let path = path.as_ref();
    model.params.validate()?;
    let header = ModelHeader {
        format: FORMAT.into(),
        model_id: model.model_id.clone(),
        num_classes: model.params.num_classes,
        shapes: shapes(model.params.num_classes),
        seed: model.seed,
        train_config: model.train_config.clone(),
        channel_stats: model.stats,
    };
    let mut bytes = serde_json::to_vec(&header)?;
    bytes.push(b'\n');
    bytes.reserve(model.params.parameter_count() * 8);
    for t in model.params.tensors() {
        for v in t {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, bytes).at(path)
}

pub fn load_model(path: impl AsRef<Path>) -> Result<TrainedModel> {
    let path = path.as_ref();
    let bytes = fs::read(path).at(path)?;
    let split = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::Config(format!("{} has no model header", path.display())))?;
    let header: ModelHeader = serde_json::from_slice(&bytes[..split])?;
    if header.format != FORMAT {
        return Err(Error::Config(format!(
            "unknown model format {}",
            header.format
        )));
    }
    if header.shapes != shapes(header.num_classes) {
        return Err(Error::Config(
            "model header shapes do not match the architecture".into(),
        ));
    }
    header.channel_stats.validate()?;
    let data = &bytes[split + 1..];
    let mut params = ModelParams::zeros(header.num_classes);
    let expected = params.parameter_count() * 8;
    if data.len() != expected {
        return Err(Error::Shape {
            expected,
            actual: data.len(),
        });
    }
    let mut values = data
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")));
    for t in params.tensors_mut() {
        for v in t.iter_mut() {
            *v = values.next().expect("length checked above");
        }
    }
    params.validate()?;
    Ok(TrainedModel {
        model_id: header.model_id,
        params,
        stats: header.channel_stats,
        seed: header.seed,
        train_config: header.train_config,
    })
}
