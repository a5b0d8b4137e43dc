//! Model checkpoints: a JSON manifest plus one little-endian `f64` file per
//! parameter tensor.

use std::path::Path;

use serde::{Deserialize, Serialize};
use udgen_core::features::FeatureBank;
use udgen_core::genmodule::{GenerationModel, LossWeights, ModelConfig};
use udgen_core::mlp::{Activation, Layer, MlpParams};
use udgen_core::tensor::Tensor;

use crate::error::{io_err, malformed, read_json, write_file, write_json, FormatError, Result};

pub const MANIFEST: &str = "checkpoint.json";
pub const FORMAT: &str = "udgen-checkpoint-1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigRecord {
    pub patch_size: usize,
    pub content_dim: usize,
    pub style_dim: usize,
    pub content_hidden: usize,
    pub style_hidden: usize,
    pub generator_hidden: usize,
    pub generator_depth: usize,
    pub discriminator_hidden: usize,
}

impl From<&ModelConfig> for ConfigRecord {
    fn from(c: &ModelConfig) -> Self {
        ConfigRecord {
            patch_size: c.patch_size,
            content_dim: c.content_dim,
            style_dim: c.style_dim,
            content_hidden: c.content_hidden,
            style_hidden: c.style_hidden,
            generator_hidden: c.generator_hidden,
            generator_depth: c.generator_depth,
            discriminator_hidden: c.discriminator_hidden,
        }
    }
}

impl From<&ConfigRecord> for ModelConfig {
    fn from(c: &ConfigRecord) -> Self {
        ModelConfig {
            patch_size: c.patch_size,
            content_dim: c.content_dim,
            style_dim: c.style_dim,
            content_hidden: c.content_hidden,
            style_hidden: c.style_hidden,
            generator_hidden: c.generator_hidden,
            generator_depth: c.generator_depth,
            discriminator_hidden: c.discriminator_hidden,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureBankRecord {
    pub seed: u64,
    pub filters: Vec<usize>,
    pub input_gain: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorRecord {
    pub name: String,
    pub file: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkRecord {
    pub name: String,
    pub activations: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format: String,
    pub config: ConfigRecord,
    pub model_seed: u64,
    pub feature_bank: FeatureBankRecord,
    pub loss_weights: [f64; 3],
    pub networks: Vec<NetworkRecord>,
    pub tensors: Vec<TensorRecord>,
}

/// Everything needed to resume from a trained model.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: GenerationModel,
    pub model_seed: u64,
    pub bank: FeatureBank,
    pub weights: LossWeights,
}

fn tensor_name(network: &str, layer: usize, part: &str) -> String {
    format!("{network}.{layer}.{part}")
}

fn encode_f64(data: &[f64]) -> Vec<u8> {
    data.iter().flat_map(|v| v.to_le_bytes()).collect()
}

pub fn save_checkpoint(dir: &Path, ckpt: &Checkpoint) -> Result<CheckpointManifest> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut networks = Vec::new();
    let mut tensors = Vec::new();
    for (name, net) in ckpt.model.networks() {
        networks.push(NetworkRecord {
            name: name.to_string(),
            activations: net.layers().iter().map(|l| l.activation.name().to_string()).collect(),
        });
        for (li, layer) in net.layers().iter().enumerate() {
            for (part, t) in [("weight", &layer.weight), ("bias", &layer.bias)] {
                let tname = tensor_name(name, li, part);
                let file = format!("{tname}.bin");
                write_file(&dir.join(&file), &encode_f64(t.data()))?;
                tensors.push(TensorRecord {
                    name: tname,
                    file,
                    shape: t.shape().to_vec(),
                });
            }
        }
    }
    let manifest = CheckpointManifest {
        format: FORMAT.to_string(),
        config: (&ckpt.model.config).into(),
        model_seed: ckpt.model_seed,
        feature_bank: FeatureBankRecord {
            seed: ckpt.bank.seed,
            filters: ckpt.bank.layers.iter().map(|l| l.filters).collect(),
            input_gain: ckpt.bank.input_gain,
        },
        loss_weights: [ckpt.weights.w1, ckpt.weights.w2, ckpt.weights.w3],
        networks,
        tensors,
    };
    write_json(&dir.join(MANIFEST), &manifest)?;
    Ok(manifest)
}

fn corrupt(tensor: &str, msg: impl std::fmt::Display) -> FormatError {
    FormatError::CorruptTensor {
        tensor: tensor.to_string(),
        msg: msg.to_string(),
    }
}

fn load_tensor(dir: &Path, rec: &TensorRecord) -> Result<Tensor> {
    let path = dir.join(&rec.file);
    let bytes = std::fs::read(&path).map_err(|e| corrupt(&rec.name, format!("{}: {e}", path.display())))?;
    let expected: usize = rec.shape.iter().product();
    if bytes.len() != expected * 8 {
        return Err(corrupt(
            &rec.name,
            format!("{} holds {} bytes, shape {:?} needs {}", rec.file, bytes.len(), rec.shape, expected * 8),
        ));
    }
    let data: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    if let Some(k) = data.iter().position(|v| !v.is_finite()) {
        return Err(corrupt(&rec.name, format!("non-finite value at index {k}")));
    }
    Tensor::new(rec.shape.clone(), data).map_err(|e| corrupt(&rec.name, e))
}

pub fn load_checkpoint(dir: &Path) -> Result<Checkpoint> {
    let manifest_path = dir.join(MANIFEST);
    let manifest: CheckpointManifest = read_json(&manifest_path)?;
    if manifest.format != FORMAT {
        return Err(malformed(&manifest_path, format!("unknown format `{}`", manifest.format)));
    }
    let config: ModelConfig = (&manifest.config).into();
    let mut nets = Vec::with_capacity(4);
    for expected in ["content_encoder", "style_encoder", "generator", "discriminator"] {
        let net = manifest
            .networks
            .iter()
            .find(|n| n.name == expected)
            .ok_or_else(|| malformed(&manifest_path, format!("network `{expected}` missing")))?;
        let mut layers = Vec::with_capacity(net.activations.len());
        for (li, act_name) in net.activations.iter().enumerate() {
            let activation = Activation::from_name(act_name)
                .ok_or_else(|| malformed(&manifest_path, format!("unknown activation `{act_name}`")))?;
            let part = |p: &str| {
                let name = tensor_name(expected, li, p);
                let rec = manifest
                    .tensors
                    .iter()
                    .find(|t| t.name == name)
                    .ok_or_else(|| corrupt(&name, "not listed in manifest"))?;
                load_tensor(dir, rec)
            };
            let (weight, bias) = (part("weight")?, part("bias")?);
            let name = tensor_name(expected, li, "weight");
            layers.push(Layer::new(weight, bias, activation).map_err(|e| corrupt(&name, e))?);
        }
        nets.push(MlpParams::new(layers).map_err(|e| corrupt(expected, e))?);
    }
    let discriminator = nets.pop().expect("four networks");
    let generator = nets.pop().expect("four networks");
    let style_encoder = nets.pop().expect("four networks");
    let content_encoder = nets.pop().expect("four networks");
    let model = GenerationModel::from_parts(config, content_encoder, style_encoder, generator, discriminator)
        .map_err(|e| malformed(&manifest_path, e))?;
    let fb = &manifest.feature_bank;
    let mut bank = FeatureBank::with_filters(&fb.filters, fb.seed);
    bank.input_gain = fb.input_gain;
    let [w1, w2, w3] = manifest.loss_weights;
    let weights = LossWeights { w1, w2, w3 };
    weights.validate()?;
    Ok(Checkpoint {
        model,
        model_seed: manifest.model_seed,
        bank,
        weights,
    })
}
