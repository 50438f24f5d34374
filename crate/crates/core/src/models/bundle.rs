use sha2::{Digest, Sha256};

use super::{Classifier, Encoder, Generator, GeneratorConfig};
use crate::nn::{Activation, DenseLayer, Mlp, NnError, Tensor, WeightFile};

/// Classifier, generator and encoder persisted together.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle {
    pub classifier: Classifier,
    pub generator: Generator,
    pub encoder: Encoder,
}

fn push_mlp(file: &mut WeightFile, prefix: &str, mlp: &Mlp) {
    for (i, layer) in mlp.layers.iter().enumerate() {
        push_layer(file, &format!("{prefix}.{i}"), layer);
    }
}

fn push_layer(file: &mut WeightFile, prefix: &str, layer: &DenseLayer) {
    file.push(format!("{prefix}.weight"), layer.weights.clone());
    file.push(format!("{prefix}.bias"), layer.bias.clone());
}

fn tensor(file: &WeightFile, name: &str) -> Result<Tensor, NnError> {
    file.get(name)
        .cloned()
        .ok_or_else(|| NnError::MissingTensor(name.to_owned()))
}

fn read_layer(file: &WeightFile, prefix: &str, activation: Activation) -> Result<DenseLayer, NnError> {
    DenseLayer::from_parts(
        tensor(file, &format!("{prefix}.weight"))?,
        tensor(file, &format!("{prefix}.bias"))?,
        activation,
    )
}

fn read_mlp(file: &WeightFile, prefix: &str, last: Activation) -> Result<Mlp, NnError> {
    let mut count = 0;
    while file.get(&format!("{prefix}.{count}.weight")).is_some() {
        count += 1;
    }
    if count == 0 {
        return Err(NnError::MissingTensor(format!("{prefix}.0.weight")));
    }
    let layers = (0..count)
        .map(|i| {
            let act = if i + 1 == count { last } else { Activation::LeakyRelu };
            read_layer(file, &format!("{prefix}.{i}"), act)
        })
        .collect::<Result<Vec<_>, _>>()?;
    for pair in layers.windows(2) {
        if pair[0].out_dim() != pair[1].in_dim() {
            return Err(NnError::Shape(format!("{prefix}: layer sizes do not chain")));
        }
    }
    Ok(Mlp { layers })
}

impl Classifier {
    pub fn to_weight_file(&self) -> WeightFile {
        let mut f = WeightFile::new();
        push_mlp(&mut f, "classifier", &self.net);
        f
    }

    pub fn from_weight_file(file: &WeightFile) -> Result<Self, NnError> {
        Ok(Self {
            net: read_mlp(file, "classifier", Activation::Identity)?,
        })
    }

    pub fn checksum(&self) -> String {
        sha256_hex(&self.to_weight_file().to_bytes())
    }
}

impl Encoder {
    pub fn from_weight_file(file: &WeightFile) -> Result<Self, NnError> {
        Ok(Self {
            net: read_mlp(file, "encoder", Activation::Identity)?,
        })
    }
}

impl Generator {
    pub fn write_into(&self, f: &mut WeightFile) {
        push_mlp(f, "mapping", &self.mapping);
        for (l, a) in self.affines.iter().enumerate() {
            push_layer(f, &format!("affine.{l}"), a);
        }
        for (l, s) in self.stages.iter().enumerate() {
            push_layer(f, &format!("synth.{l}"), s);
        }
        f.push("synth.const", self.constant.clone());
        push_layer(f, "synth.out", &self.output);
        f.push("embed", self.embedding.clone());
    }

    pub fn from_weight_file(file: &WeightFile) -> Result<Self, NnError> {
        let mapping = read_mlp(file, "mapping", Activation::Identity)?;
        let embedding = tensor(file, "embed")?;
        let (labels, embed_dim) = embedding.dims2()?;
        if labels != 2 {
            return Err(NnError::Shape(format!("embedding has {labels} rows, expected 2")));
        }
        let constant = tensor(file, "synth.const")?;
        let channels = constant.len();
        let mut affines = Vec::new();
        while file.get(&format!("affine.{}.weight", affines.len())).is_some() {
            affines.push(read_layer(file, &format!("affine.{}", affines.len()), Activation::Identity)?);
        }
        let stages = (0..affines.len())
            .map(|l| read_layer(file, &format!("synth.{l}"), Activation::LeakyRelu))
            .collect::<Result<Vec<_>, _>>()?;
        let output = read_layer(file, "synth.out", Activation::Sigmoid)?;
        let config = GeneratorConfig {
            z_dim: mapping.in_dim() - embed_dim,
            w_dim: mapping.out_dim(),
            embed_dim,
            mapping_hidden: mapping.layers[0].out_dim(),
            channels,
            stages: affines.len(),
        };
        let consistent = !affines.is_empty()
            && affines
                .iter()
                .all(|a| a.in_dim() == config.w_dim + embed_dim && a.out_dim() == channels)
            && stages.iter().all(|s| s.in_dim() == channels && s.out_dim() == channels)
            && output.in_dim() == channels;
        if !consistent {
            return Err(NnError::Shape("generator tensors have inconsistent sizes".into()));
        }
        Ok(Self {
            config,
            embedding,
            mapping,
            affines,
            stages,
            constant,
            output,
        })
    }
}

impl ModelBundle {
    pub fn to_weight_file(&self) -> WeightFile {
        let mut f = self.classifier.to_weight_file();
        self.generator.write_into(&mut f);
        push_mlp(&mut f, "encoder", &self.encoder.net);
        f
    }

    pub fn from_weight_file(file: &WeightFile) -> Result<Self, NnError> {
        Ok(Self {
            classifier: Classifier::from_weight_file(file)?,
            generator: Generator::from_weight_file(file)?,
            encoder: Encoder::from_weight_file(file)?,
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.to_weight_file().to_bytes()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, NnError> {
        Self::from_weight_file(&WeightFile::from_bytes(bytes)?)
    }

    pub fn checksum(&self) -> String {
        sha256_hex(&self.to_bytes())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
