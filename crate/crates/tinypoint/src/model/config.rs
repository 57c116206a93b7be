//! Architecture configuration: TOML (de)serialization and the two built-in
//! configurations (`canonical` for cost accounting at reference scale,
//! `mini` for CPU-budget training runs).

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Scale, ScaleSpec, StageSpec, SupernetSpec};
use crate::error::{Error, Result};

#[derive(Serialize, Deserialize)]
struct RawScale {
    radius: f32,
    nsample: usize,
    mlp: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct RawStage {
    npoint: usize,
    #[serde(rename = "scale")]
    scales: Vec<RawScale>,
}

#[derive(Serialize, Deserialize)]
struct RawModel {
    name: String,
    num_classes: usize,
    dropout: f64,
    tiny_scale: String,
    width_options: usize,
    global_mlp: Vec<usize>,
    head_hidden: Vec<usize>,
    #[serde(rename = "stage")]
    stages: Vec<RawStage>,
}

impl From<&SupernetSpec> for RawModel {
    fn from(spec: &SupernetSpec) -> Self {
        RawModel {
            name: spec.name.clone(),
            num_classes: spec.num_classes,
            dropout: spec.dropout,
            tiny_scale: spec.tiny_scale.to_string(),
            width_options: spec.width_options,
            global_mlp: spec.global_mlp.clone(),
            head_hidden: spec.head_hidden.clone(),
            stages: spec
                .stages
                .iter()
                .map(|st| RawStage {
                    npoint: st.npoint,
                    scales: st
                        .scales
                        .iter()
                        .map(|sc| RawScale {
                            radius: sc.radius,
                            nsample: sc.nsample,
                            mlp: sc.mlp.clone(),
                        })
                        .collect(),
                })
                .collect(),
        }
    }
}

impl RawModel {
    fn into_spec(self) -> Result<SupernetSpec> {
        let spec = SupernetSpec {
            name: self.name,
            num_classes: self.num_classes,
            stages: self
                .stages
                .into_iter()
                .map(|st| StageSpec {
                    npoint: st.npoint,
                    scales: st
                        .scales
                        .into_iter()
                        .map(|sc| ScaleSpec {
                            radius: sc.radius,
                            nsample: sc.nsample,
                            mlp: sc.mlp,
                        })
                        .collect(),
                })
                .collect(),
            global_mlp: self.global_mlp,
            head_hidden: self.head_hidden,
            dropout: self.dropout,
            tiny_scale: self.tiny_scale.parse()?,
            width_options: self.width_options,
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// Parse a model configuration from TOML text.
pub fn parse_model_config(text: &str) -> Result<SupernetSpec> {
    let raw: RawModel =
        toml::from_str(text).map_err(|e| Error::Config(format!("model config: {e}")))?;
    raw.into_spec()
}

/// Render a model configuration as TOML text.
pub fn render_model_config(spec: &SupernetSpec) -> Result<String> {
    toml::to_string_pretty(&RawModel::from(spec))
        .map_err(|e| Error::Config(format!("model config: {e}")))
}

/// Load and validate a model configuration file.
pub fn load_model_config(path: &Path) -> Result<SupernetSpec> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_model_config(&text)
}

/// Write a model configuration file.
pub fn save_model_config(spec: &SupernetSpec, path: &Path) -> Result<()> {
    std::fs::write(path, render_model_config(spec)?).map_err(|e| Error::io(path, e))
}

/// Reference-scale multi-scale-grouping classifier (40 classes, 1024-point
/// clouds): two grouping stages of three radii each, 1024-wide global
/// feature, two hidden head layers. This is the configuration the cost
/// tables are quoted for.
pub fn canonical() -> SupernetSpec {
    SupernetSpec {
        name: "msg-canonical".to_string(),
        num_classes: 40,
        stages: vec![
            StageSpec {
                npoint: 512,
                scales: vec![
                    ScaleSpec { radius: 0.1, nsample: 16, mlp: vec![32, 32, 64] },
                    ScaleSpec { radius: 0.2, nsample: 32, mlp: vec![64, 64, 128] },
                    ScaleSpec { radius: 0.4, nsample: 128, mlp: vec![64, 96, 128] },
                ],
            },
            StageSpec {
                npoint: 128,
                scales: vec![
                    ScaleSpec { radius: 0.2, nsample: 32, mlp: vec![64, 64, 128] },
                    ScaleSpec { radius: 0.4, nsample: 64, mlp: vec![128, 128, 256] },
                    ScaleSpec { radius: 0.8, nsample: 128, mlp: vec![128, 128, 256] },
                ],
            },
        ],
        global_mlp: vec![256, 512, 1024],
        head_hidden: vec![512, 256],
        dropout: 0.4,
        tiny_scale: Scale { num: 1, den: 8 },
        width_options: 3,
    }
}

/// Down-scaled configuration for CPU training on the 8-class synthetic set
/// (256-point clouds): same topology as the reference (two multi-scale
/// grouping stages, global stage, hidden head), every count shrunk.
pub fn mini() -> SupernetSpec {
    SupernetSpec {
        name: "msg-mini".to_string(),
        num_classes: 8,
        stages: vec![
            StageSpec {
                npoint: 64,
                scales: vec![
                    ScaleSpec { radius: 0.3, nsample: 8, mlp: vec![16, 16] },
                    ScaleSpec { radius: 0.5, nsample: 16, mlp: vec![16, 32] },
                ],
            },
            StageSpec {
                npoint: 16,
                scales: vec![
                    ScaleSpec { radius: 0.5, nsample: 8, mlp: vec![32, 32] },
                    ScaleSpec { radius: 0.9, nsample: 16, mlp: vec![32, 64] },
                ],
            },
        ],
        global_mlp: vec![64, 128],
        head_hidden: vec![64],
        dropout: 0.3,
        tiny_scale: Scale { num: 1, den: 4 },
        width_options: 3,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_configs_validate() {
        canonical().validate().unwrap();
        mini().validate().unwrap();
    }

    #[test]
    fn toml_round_trip_preserves_spec() {
        for spec in [canonical(), mini()] {
            let text = render_model_config(&spec).unwrap();
            let back = parse_model_config(&text).unwrap();
            assert_eq!(back, spec);
        }
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.toml");
        save_model_config(&canonical(), &path).unwrap();
        let back = load_model_config(&path).unwrap();
        assert_eq!(back, canonical());
    }

    #[test]
    fn rejects_malformed_and_invalid_configs() {
        assert!(parse_model_config("num_classes = 40").is_err());
        let mut spec = mini();
        spec.tiny_scale = Scale { num: 3, den: 2 };
        assert!(render_model_config(&spec)
            .and_then(|t| parse_model_config(&t))
            .is_err());
        let text = render_model_config(&mini()).unwrap();
        let broken = text.replace("width_options = 3", "width_options = 0");
        assert!(parse_model_config(&broken).is_err());
    }

    #[test]
    fn scale_string_forms() {
        assert_eq!("1/8".parse::<Scale>().unwrap(), Scale { num: 1, den: 8 });
        assert_eq!("1".parse::<Scale>().unwrap(), Scale::ONE);
        assert!("0/8".parse::<Scale>().is_err());
        assert!("8/4".parse::<Scale>().is_err());
        assert!("x/4".parse::<Scale>().is_err());
        assert_eq!(Scale { num: 1, den: 8 }.to_string(), "1/8");
        assert_eq!(Scale::ONE.to_string(), "1");
    }
}
