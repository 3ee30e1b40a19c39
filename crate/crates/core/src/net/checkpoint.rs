use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::{AdamConfig, AdamState, Layer, NetConfig, NetParams};
use crate::error::{Error, Result};
use crate::io::write_once;

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerRecord {
    rows: usize,
    cols: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct OptimizerRecord {
    config: AdamConfig,
    step_count: u64,
    first_moment: Vec<LayerRecord>,
    second_moment: Vec<LayerRecord>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMetadata {
    /// `velocity`, `surrogate`, or `ddpm`.
    pub role: String,
    /// Which field the model drives, `f` or `g`.
    pub field: String,
    pub seed: u64,
    pub step: u64,
    pub loss: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
}

/// JSON document holding a network, optionally its optimizer state, and training metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    format_version: u32,
    net_config: NetConfig,
    layers: Vec<LayerRecord>,
    optimizer: Option<OptimizerRecord>,
    pub metadata: CheckpointMetadata,
}

fn records(p: &NetParams) -> Vec<LayerRecord> {
    p.layers()
        .iter()
        .map(|l| LayerRecord {
            rows: l.weight.nrows(),
            cols: l.weight.ncols(),
            weights: l.weight.iter().copied().collect(),
            bias: l.bias.to_vec(),
        })
        .collect()
}

fn params_from(config: NetConfig, records: &[LayerRecord]) -> Result<NetParams> {
    let layers = records
        .iter()
        .map(|r| {
            Ok(Layer {
                weight: Array2::from_shape_vec((r.rows, r.cols), r.weights.clone())
                    .map_err(|e| Error::ShapeMismatch(format!("checkpoint layer: {e}")))?,
                bias: Array1::from(r.bias.clone()),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    NetParams::from_layers(config, layers)
}

impl Checkpoint {
    pub fn new(params: &NetParams, optimizer: Option<&AdamState>, metadata: CheckpointMetadata) -> Self {
        Self {
            format_version: CHECKPOINT_FORMAT_VERSION,
            net_config: *params.config(),
            layers: records(params),
            optimizer: optimizer.map(|s| OptimizerRecord {
                config: s.config,
                step_count: s.step_count,
                first_moment: records(&s.first_moment),
                second_moment: records(&s.second_moment),
            }),
            metadata,
        }
    }

    pub fn params(&self) -> Result<NetParams> {
        params_from(self.net_config, &self.layers)
    }

    pub fn optimizer(&self) -> Result<Option<AdamState>> {
        self.optimizer
            .as_ref()
            .map(|o| {
                Ok(AdamState {
                    config: o.config,
                    step_count: o.step_count,
                    first_moment: params_from(self.net_config, &o.first_moment)?,
                    second_moment: params_from(self.net_config, &o.second_moment)?,
                })
            })
            .transpose()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ck: Self = serde_json::from_str(text)?;
        if ck.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(Error::InvalidArgument(format!(
                "unsupported checkpoint format_version {}",
                ck.format_version
            )));
        }
        ck.params()?;
        Ok(ck)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_once(path, self.to_json()?.as_bytes())
    }

    pub fn read(path: &Path) -> Result<Self> {
        match std::fs::read_to_string(path) {
            Ok(text) => Self::from_json(&text),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Err(Error::MissingArtifact(path.to_owned())),
            Err(e) => Err(e.into()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngState;
    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn json_roundtrip_is_bit_exact(seed in any::<u64>(), width in 1usize..6, with_opt in any::<bool>()) {
            let cfg = NetConfig { input_dim: 2, output_dim: 1, hidden_width: width, hidden_layers: 2, time_feature_dim: 4 };
            let mut rng = RngState::new(seed);
            let mut p = NetParams::init(cfg, &mut rng).unwrap();
            for s in p.slices_mut() {
                for x in s {
                    *x = rng.standard_normal() * 10f64.powi(rng.index(20) as i32 - 10);
                }
            }
            let opt = with_opt.then(|| AdamState::new(AdamConfig::default(), &p));
            let meta = CheckpointMetadata { role: "velocity".into(), field: "f".into(), seed, step: 3, loss: Some(0.125), config_hash: None };
            let ck = Checkpoint::new(&p, opt.as_ref(), meta);
            let back = Checkpoint::from_json(&ck.to_json().unwrap()).unwrap();
            prop_assert_eq!(back.params().unwrap(), p);
            prop_assert_eq!(back.optimizer().unwrap(), opt);
            prop_assert_eq!(back, ck);
        }
    }

    #[test]
    fn rejects_unknown_version_and_bad_shapes() {
        let p = NetParams::zeros(NetConfig::default()).unwrap();
        let json = Checkpoint::new(&p, None, CheckpointMetadata::default())
            .to_json()
            .unwrap();
        assert!(Checkpoint::from_json(&json.replace("\"format_version\": 1", "\"format_version\": 9")).is_err());
        assert!(Checkpoint::from_json(&json.replace("\"hidden_width\": 128", "\"hidden_width\": 64")).is_err());
    }
}
