use std::fmt;

use crate::encoder::EncoderConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Base {
    /// The parser state (stack, buffer, optionally deleted words) is the encoder input.
    State,
    /// The whole sentence is the encoder input; the state only selects rows.
    Sentence,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum GraphOutput {
    /// Classify from the output vectors of s2, s1 and b1.
    TokenPair,
    /// Classify from the CLS output vector.
    Cls,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ModelVariant {
    pub base: Base,
    pub graph_input: bool,
    pub graph_output: GraphOutput,
    pub composition: bool,
    pub history: bool,
}

pub const PRESETS: [&str; 7] = [
    "state-tr",
    "state-tr-g2g",
    "state-tr-g2g-c",
    "state-cls-tr",
    "state-tr-g2cls",
    "sent-tr",
    "sent-tr-g2g",
];

impl ModelVariant {
    pub fn preset(name: &str) -> Option<ModelVariant> {
        let state = |graph_input, graph_output, composition| ModelVariant {
            base: Base::State,
            graph_input,
            graph_output,
            composition,
            history: true,
        };
        let sent = |graph_input| ModelVariant {
            base: Base::Sentence,
            graph_input,
            graph_output: GraphOutput::TokenPair,
            composition: false,
            history: false,
        };
        Some(match name {
            "state-tr" => state(false, GraphOutput::TokenPair, true),
            "state-tr-g2g" => state(true, GraphOutput::TokenPair, false),
            "state-tr-g2g-c" => state(true, GraphOutput::TokenPair, true),
            "state-cls-tr" => state(false, GraphOutput::Cls, true),
            "state-tr-g2cls" => state(true, GraphOutput::Cls, false),
            "sent-tr" => sent(false),
            "sent-tr-g2g" => sent(true),
            _ => return None,
        })
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.base == Base::Sentence && (self.composition || self.history) {
            return Err("the sentence encoder has neither composition nor history".into());
        }
        Ok(())
    }

    /// Segment rows used by the state encoder: CLS+stack, buffer, and deleted when graph input is on.
    pub fn segment_count(&self) -> usize {
        match (self.base, self.graph_input) {
            (Base::Sentence, _) => 0,
            (Base::State, false) => 2,
            (Base::State, true) => 3,
        }
    }

    /// `key=value` lines describing the flags.
    pub fn to_lines(&self) -> Vec<(String, String)> {
        vec![
            ("variant.base".into(), match self.base {
                Base::State => "state",
                Base::Sentence => "sentence",
            }
            .into()),
            ("variant.graph_input".into(), self.graph_input.to_string()),
            ("variant.graph_output".into(), match self.graph_output {
                GraphOutput::TokenPair => "token_pair",
                GraphOutput::Cls => "cls",
            }
            .into()),
            ("variant.composition".into(), self.composition.to_string()),
            ("variant.history".into(), self.history.to_string()),
        ]
    }

    /// Applies one `variant.*` key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        let flag = |v: &str| match v {
            "true" => Ok(true),
            "false" => Ok(false),
            other => Err(format!("expected true/false, got {other:?}")),
        };
        match key {
            "variant.base" => {
                self.base = match value {
                    "state" => Base::State,
                    "sentence" => Base::Sentence,
                    other => return Err(format!("unknown base {other:?}")),
                }
            }
            "variant.graph_input" => self.graph_input = flag(value)?,
            "variant.graph_output" => {
                self.graph_output = match value {
                    "token_pair" => GraphOutput::TokenPair,
                    "cls" => GraphOutput::Cls,
                    other => return Err(format!("unknown graph_output {other:?}")),
                }
            }
            "variant.composition" => self.composition = flag(value)?,
            "variant.history" => self.history = flag(value)?,
            other => return Err(format!("unknown key {other:?}")),
        }
        Ok(())
    }
}

impl Default for ModelVariant {
    fn default() -> Self {
        ModelVariant::preset("sent-tr-g2g").expect("preset")
    }
}

impl fmt::Display for ModelVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match PRESETS.iter().find(|p| ModelVariant::preset(p).as_ref() == Some(self)) {
            Some(name) => f.write_str(name),
            None => {
                let parts: Vec<String> = self.to_lines().into_iter().map(|(k, v)| format!("{k}={v}")).collect();
                f.write_str(&parts.join(","))
            }
        }
    }
}

/// Architecture hyperparameters of a parser model.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub variant: ModelVariant,
    pub layers: usize,
    pub heads: usize,
    pub model_dim: usize,
    pub ff_dim: usize,
    pub max_positions: usize,
    pub dropout: f64,
    pub exist_hidden: usize,
    pub relation_hidden: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            variant: ModelVariant::default(),
            layers: 2,
            heads: 4,
            model_dim: 64,
            ff_dim: 128,
            max_positions: 256,
            dropout: 0.05,
            exist_hidden: 64,
            relation_hidden: 32,
        }
    }
}

impl ModelConfig {
    pub fn encoder_config(&self) -> EncoderConfig {
        EncoderConfig {
            layers: self.layers,
            heads: self.heads,
            model_dim: self.model_dim,
            ff_dim: self.ff_dim,
            max_positions: self.max_positions,
            segment_count: self.variant.segment_count(),
            dropout: self.dropout,
            graph_input: self.variant.graph_input,
        }
    }

    /// Canonical `key=value` lines; stable across runs and used for the config hash.
    pub fn to_lines(&self) -> Vec<(String, String)> {
        let mut lines = self.variant.to_lines();
        lines.extend([
            ("model.layers".to_string(), self.layers.to_string()),
            ("model.heads".into(), self.heads.to_string()),
            ("model.dim".into(), self.model_dim.to_string()),
            ("model.ff_dim".into(), self.ff_dim.to_string()),
            ("model.max_positions".into(), self.max_positions.to_string()),
            ("model.dropout".into(), self.dropout.to_string()),
            ("model.exist_hidden".into(), self.exist_hidden.to_string()),
            ("model.relation_hidden".into(), self.relation_hidden.to_string()),
        ]);
        lines
    }

    /// Applies one `model.*` or `variant.*` key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        let num = |v: &str| v.parse::<usize>().map_err(|_| format!("{key}: expected an integer, got {v:?}"));
        match key {
            "model.variant" => {
                self.variant = ModelVariant::preset(value)
                    .ok_or_else(|| format!("unknown variant {value:?} (known: {})", PRESETS.join(", ")))?
            }
            "model.layers" => self.layers = num(value)?,
            "model.heads" => self.heads = num(value)?,
            "model.dim" => self.model_dim = num(value)?,
            "model.ff_dim" => self.ff_dim = num(value)?,
            "model.max_positions" => self.max_positions = num(value)?,
            "model.exist_hidden" => self.exist_hidden = num(value)?,
            "model.relation_hidden" => self.relation_hidden = num(value)?,
            "model.dropout" => {
                self.dropout = value
                    .parse()
                    .map_err(|_| format!("{key}: expected a number, got {value:?}"))?
            }
            k if k.starts_with("variant.") => self.variant.set(k, value)?,
            other => return Err(format!("unknown key {other:?}")),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), String> {
        self.variant.validate()?;
        self.encoder_config().validate().map_err(|e| e.to_string())?;
        if self.exist_hidden == 0 || self.relation_hidden == 0 {
            return Err("classifier hidden sizes must be positive".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_are_valid_and_named() {
        for p in PRESETS {
            let v = ModelVariant::preset(p).unwrap();
            v.validate().unwrap();
            assert_eq!(v.to_string(), p);
        }
        assert!(ModelVariant::preset("bert").is_none());
    }

    #[test]
    fn sentence_base_rejects_composition() {
        let mut v = ModelVariant::preset("sent-tr").unwrap();
        v.composition = true;
        assert!(v.validate().is_err());
    }

    #[test]
    fn config_lines_round_trip() {
        let mut cfg = ModelConfig::default();
        cfg.variant = ModelVariant::preset("state-tr-g2cls").unwrap();
        cfg.layers = 3;
        let mut back = ModelConfig::default();
        for (k, v) in cfg.to_lines() {
            back.set(&k, &v).unwrap();
        }
        assert_eq!(back, cfg);
    }
}
