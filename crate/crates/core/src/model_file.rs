//! JSON model files.
//!
//! Three shapes are accepted, each with no extra keys:
//!
//! ```json
//! {"delta": [[0.9, 0.1], [0.2, 0.8]], "phi": [0, 1], "labels": ["a", "b"]}
//! {"bsc": {"pi": [[0.7, 0.3], [0.4, 0.6]], "eps": 0.1}}
//! {"example": "7.2", "params": {"a": 0.5, "b": 0.3, "c": 0.4, "d": 0.3,
//!                               "e": 0.2, "f": 0.6, "g": 0.7, "eps": 0.05}}
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::hmm::{
    build_bsc, build_example_7_1, build_example_7_2, validate, Example71Params, Example72Params,
    HiddenMarkovModel,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawModel {
    delta: Vec<Vec<f64>>,
    phi: Vec<i64>,
    #[serde(default)]
    labels: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BscSpec {
    pub pi: [[f64; 2]; 2],
    pub eps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BscFile {
    bsc: BscSpec,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
struct ExampleFile {
    example: String,
    params: Value,
}

/// Where a loaded model came from.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelSource {
    Matrix { labels: Option<Vec<String>> },
    Bsc(BscSpec),
    Example71(Example71Params),
    Example72(Example72Params),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadedModel {
    pub model: HiddenMarkovModel,
    pub source: ModelSource,
}

fn strict<T: serde::de::DeserializeOwned>(value: Value) -> Result<T> {
    serde_json::from_value(value).map_err(|e| Error::ModelFile(e.to_string()))
}

pub fn parse_model(text: &str) -> Result<LoadedModel> {
    let value: Value = serde_json::from_str(text).map_err(|e| Error::ModelFile(e.to_string()))?;
    let obj = value
        .as_object()
        .ok_or_else(|| Error::ModelFile("top level must be a JSON object".into()))?;

    if obj.contains_key("delta") {
        let raw: RawModel = strict(value)?;
        if let Some(labels) = &raw.labels {
            let alphabet = raw.phi.iter().collect::<std::collections::BTreeSet<_>>().len();
            if labels.len() != alphabet {
                return Err(Error::ModelFile(format!(
                    "{} labels given for {alphabet} symbols",
                    labels.len()
                )));
            }
        }
        let model = validate(&raw.delta, &raw.phi)?;
        return Ok(LoadedModel { model, source: ModelSource::Matrix { labels: raw.labels } });
    }
    if obj.contains_key("bsc") {
        let file: BscFile = strict(value)?;
        let model = build_bsc(&file.bsc.pi, file.bsc.eps)?;
        return Ok(LoadedModel { model, source: ModelSource::Bsc(file.bsc) });
    }
    if obj.contains_key("example") {
        let file: ExampleFile = strict(value)?;
        return match file.example.as_str() {
            "7.1" => {
                let p: Example71Params = strict(file.params)?;
                Ok(LoadedModel { model: build_example_7_1(&p)?, source: ModelSource::Example71(p) })
            }
            "7.2" => {
                let p: Example72Params = strict(file.params)?;
                Ok(LoadedModel { model: build_example_7_2(&p)?, source: ModelSource::Example72(p) })
            }
            other => Err(Error::ModelFile(format!("unknown example {other:?}"))),
        };
    }
    Err(Error::ModelFile("expected one of the keys \"delta\", \"bsc\" or \"example\"".into()))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<LoadedModel> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::ModelFile(format!("{}: {e}", path.display())))?;
    parse_model(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_all_shapes() {
        let m = parse_model(r#"{"delta": [[0.5,0.5],[0.25,0.75]], "phi": [1,2]}"#).unwrap();
        assert_eq!(m.model.alphabet_size(), 2);
        let m = parse_model(r#"{"bsc": {"pi": [[0.7,0.3],[0.4,0.6]], "eps": 0.1}}"#).unwrap();
        assert_eq!(m.model.num_states(), 4);
        let m = parse_model(
            r#"{"example": "7.2", "params": {"a":0.5,"b":0.3,"c":0.4,"d":0.3,"e":0.2,"f":0.6,"g":0.7,"eps":0.05}}"#,
        )
        .unwrap();
        assert_eq!(m.model.num_states(), 3);
        let m = parse_model(
            r#"{"example": "7.1", "params": {"a":0.4,"b":0.6,"c":0.3,"d":0.5,"e":0.2,"f":0.3,"g":0.2,"h":0.5}}"#,
        )
        .unwrap();
        assert_eq!(m.model.delta().get(0, 0), 0.0);
    }

    #[test]
    fn rejects_unknown_keys() {
        assert!(parse_model(r#"{"delta": [[1.0]], "phi": [0], "extra": 1}"#).is_err());
        assert!(parse_model(r#"{"bsc": {"pi": [[0.7,0.3],[0.4,0.6]], "eps": 0.1, "x": 0}}"#).is_err());
        assert!(parse_model(r#"{"example": "7.2", "params": {"a":0.5}}"#).is_err());
        assert!(parse_model(r#"{"example": "9.9", "params": {}}"#).is_err());
        assert!(parse_model(r#"[1, 2]"#).is_err());
        assert!(parse_model(r#"{"delta": [[1.0]], "phi": [0], "labels": ["a", "b"]}"#).is_err());
    }
}
