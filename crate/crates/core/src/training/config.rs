use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::adversarial::{FeaturePerturbation, PerturbationBudget};
use crate::contrastive::{AuxAnchor, ObjectiveWeights};
use crate::error::{Error, Result};
use crate::model::EncoderMode;

/// Node count above which the automatic subgraph size kicks in.
pub const AUTO_SUBGRAPH_SIZE: usize = 3000;

/// Nodes sampled per epoch.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SubgraphSize {
    /// 3000 nodes when the graph is larger, else the whole graph.
    Auto,
    /// Fixed size; 0 means the whole graph.
    Nodes(usize),
}

impl SubgraphSize {
    /// Nodes per epoch on an `n`-node graph.
    pub fn resolve(self, n: usize) -> usize {
        match self {
            SubgraphSize::Auto if n > AUTO_SUBGRAPH_SIZE => AUTO_SUBGRAPH_SIZE,
            SubgraphSize::Auto | SubgraphSize::Nodes(0) => n,
            SubgraphSize::Nodes(m) => m.min(n),
        }
    }
}

/// Every knob of the training loop. Each field is settable from a config
/// file under its own name.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub tau: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub p_e1: f64,
    pub p_f1: f64,
    pub p_e2: f64,
    pub p_f2: f64,
    pub k: usize,
    pub delta_a_ratio: f64,
    pub delta_x_ratio: f64,
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub subgraph_size: SubgraphSize,
    pub seed: u64,
    pub hidden_dim: usize,
    pub output_dim: usize,
    pub projection_dim: usize,
    pub encoder: EncoderMode,
    pub feature_perturb: FeaturePerturbation,
    pub aux_anchor: AuxAnchor,
    /// Rebuild the kNN view on each sampled subgraph instead of restricting
    /// the full-graph one.
    pub knn_recompute: bool,
    /// Largest view the dense gradient path accepts.
    pub dense_attack_limit: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            tau: 0.5,
            lambda1: 1.0,
            lambda2: 2.0,
            p_e1: 0.3,
            p_f1: 0.3,
            p_e2: 0.3,
            p_f2: 0.3,
            k: 10,
            delta_a_ratio: 0.3,
            delta_x_ratio: 0.1,
            lr: 5e-4,
            weight_decay: 1e-5,
            epochs: 400,
            subgraph_size: SubgraphSize::Auto,
            seed: 0,
            hidden_dim: 256,
            output_dim: 128,
            projection_dim: 128,
            encoder: EncoderMode::Gcn,
            feature_perturb: FeaturePerturbation::Mask,
            aux_anchor: AuxAnchor::View1,
            knn_recompute: false,
            dense_attack_limit: 4000,
        }
    }
}

fn config_err(key: &str, msg: impl Into<String>) -> Error {
    Error::Config {
        key: key.to_string(),
        msg: msg.into(),
    }
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| config_err(key, format!("cannot parse {value:?}")))
}

impl TrainConfig {
    /// The contrastive-only special case: no adversarial or
    /// similarity-preserving term and no perturbation budget.
    pub fn grace() -> Self {
        Self {
            lambda1: 0.0,
            lambda2: 0.0,
            delta_a_ratio: 0.0,
            delta_x_ratio: 0.0,
            ..Self::default()
        }
    }

    pub fn weights(&self) -> ObjectiveWeights {
        ObjectiveWeights {
            tau: self.tau,
            lambda1: self.lambda1,
            lambda2: self.lambda2,
            anchor: self.aux_anchor,
        }
    }

    pub fn budget(&self) -> PerturbationBudget {
        PerturbationBudget {
            delta_a_ratio: self.delta_a_ratio,
            delta_x_ratio: self.delta_x_ratio,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(config_err("tau", "must be positive"));
        }
        for (key, v) in [("lambda1", self.lambda1), ("lambda2", self.lambda2)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(config_err(key, "must be >= 0"));
            }
        }
        for (key, v) in [
            ("p_e1", self.p_e1),
            ("p_f1", self.p_f1),
            ("p_e2", self.p_e2),
            ("p_f2", self.p_f2),
            ("delta_a_ratio", self.delta_a_ratio),
            ("delta_x_ratio", self.delta_x_ratio),
        ] {
            if !(0.0..1.0).contains(&v) {
                return Err(config_err(key, "must lie in [0, 1)"));
            }
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(config_err("lr", "must be positive"));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(config_err("weight_decay", "must be >= 0"));
        }
        for (key, v) in [
            ("epochs", self.epochs),
            ("k", self.k),
            ("hidden_dim", self.hidden_dim),
            ("output_dim", self.output_dim),
            ("projection_dim", self.projection_dim),
        ] {
            if v == 0 {
                return Err(config_err(key, "must be at least 1"));
            }
        }
        Ok(())
    }

    /// Applies one `key = value` assignment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "tau" => self.tau = parse_value(key, value)?,
            "lambda1" => self.lambda1 = parse_value(key, value)?,
            "lambda2" => self.lambda2 = parse_value(key, value)?,
            "p_e1" => self.p_e1 = parse_value(key, value)?,
            "p_f1" => self.p_f1 = parse_value(key, value)?,
            "p_e2" => self.p_e2 = parse_value(key, value)?,
            "p_f2" => self.p_f2 = parse_value(key, value)?,
            "k" => self.k = parse_value(key, value)?,
            "delta_a_ratio" => self.delta_a_ratio = parse_value(key, value)?,
            "delta_x_ratio" => self.delta_x_ratio = parse_value(key, value)?,
            "lr" => self.lr = parse_value(key, value)?,
            "weight_decay" => self.weight_decay = parse_value(key, value)?,
            "epochs" => self.epochs = parse_value(key, value)?,
            "subgraph_size" => {
                self.subgraph_size = if value == "auto" {
                    SubgraphSize::Auto
                } else {
                    SubgraphSize::Nodes(parse_value(key, value)?)
                }
            }
            "seed" => self.seed = parse_value(key, value)?,
            "hidden_dim" => self.hidden_dim = parse_value(key, value)?,
            "output_dim" => self.output_dim = parse_value(key, value)?,
            "projection_dim" => self.projection_dim = parse_value(key, value)?,
            "encoder" => {
                self.encoder = EncoderMode::parse(value)
                    .ok_or_else(|| config_err(key, format!("unknown encoder {value:?}")))?
            }
            "feature_perturb" => {
                self.feature_perturb = FeaturePerturbation::parse(value)
                    .ok_or_else(|| config_err(key, format!("unknown mode {value:?}")))?
            }
            "aux_anchor" => {
                self.aux_anchor = match value {
                    "view1" => AuxAnchor::View1,
                    "view2" => AuxAnchor::View2,
                    _ => return Err(config_err(key, format!("unknown anchor {value:?}"))),
                }
            }
            "knn_recompute" => self.knn_recompute = parse_value(key, value)?,
            "dense_attack_limit" => self.dense_attack_limit = parse_value(key, value)?,
            _ => return Err(config_err(key, "unknown key")),
        }
        Ok(())
    }

    /// Parses `key = value` lines over the defaults. `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut config = Self::default();
        for line in text.lines() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| config_err(line, "expected `key = value`"))?;
            config.set(key.trim(), value.trim())?;
        }
        config.validate()?;
        Ok(config)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Renders every field as a parseable config file.
    pub fn to_config_string(&self) -> String {
        let mut s = String::new();
        let subgraph = match self.subgraph_size {
            SubgraphSize::Auto => "auto".to_string(),
            SubgraphSize::Nodes(m) => m.to_string(),
        };
        let anchor = match self.aux_anchor {
            AuxAnchor::View1 => "view1",
            AuxAnchor::View2 => "view2",
        };
        let fields: [(&str, String); 23] = [
            ("tau", self.tau.to_string()),
            ("lambda1", self.lambda1.to_string()),
            ("lambda2", self.lambda2.to_string()),
            ("p_e1", self.p_e1.to_string()),
            ("p_f1", self.p_f1.to_string()),
            ("p_e2", self.p_e2.to_string()),
            ("p_f2", self.p_f2.to_string()),
            ("k", self.k.to_string()),
            ("delta_a_ratio", self.delta_a_ratio.to_string()),
            ("delta_x_ratio", self.delta_x_ratio.to_string()),
            ("lr", self.lr.to_string()),
            ("weight_decay", self.weight_decay.to_string()),
            ("epochs", self.epochs.to_string()),
            ("subgraph_size", subgraph),
            ("seed", self.seed.to_string()),
            ("hidden_dim", self.hidden_dim.to_string()),
            ("output_dim", self.output_dim.to_string()),
            ("projection_dim", self.projection_dim.to_string()),
            ("encoder", self.encoder.as_str().to_string()),
            ("feature_perturb", self.feature_perturb.as_str().to_string()),
            ("aux_anchor", anchor.to_string()),
            ("knn_recompute", self.knn_recompute.to_string()),
            ("dense_attack_limit", self.dense_attack_limit.to_string()),
        ];
        for (k, v) in fields {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_through_text() {
        let mut c = TrainConfig::default();
        c.lambda2 = 0.5;
        c.subgraph_size = SubgraphSize::Nodes(200);
        c.encoder = EncoderMode::Mlp;
        c.aux_anchor = AuxAnchor::View2;
        c.feature_perturb = FeaturePerturbation::Flip;
        assert_eq!(TrainConfig::parse(&c.to_config_string()).unwrap(), c);
    }

    #[test]
    fn comments_blank_lines_and_defaults() {
        let c = TrainConfig::parse("# comment\n\nepochs = 5  # trailing\n").unwrap();
        assert_eq!(c.epochs, 5);
        assert_eq!(c.tau, 0.5);
    }

    #[test]
    fn errors_name_the_key() {
        match TrainConfig::parse("bogus = 1").unwrap_err() {
            Error::Config { key, .. } => assert_eq!(key, "bogus"),
            e => panic!("{e}"),
        }
        match TrainConfig::parse("tau = abc").unwrap_err() {
            Error::Config { key, .. } => assert_eq!(key, "tau"),
            e => panic!("{e}"),
        }
        match TrainConfig::parse("p_e1 = 1.0").unwrap_err() {
            Error::Config { key, .. } => assert_eq!(key, "p_e1"),
            e => panic!("{e}"),
        }
        assert!(TrainConfig::parse("epochs").is_err());
    }

    #[test]
    fn subgraph_size_resolution() {
        assert_eq!(SubgraphSize::Auto.resolve(2485), 2485);
        assert_eq!(SubgraphSize::Auto.resolve(7650), 3000);
        assert_eq!(SubgraphSize::Nodes(0).resolve(50), 50);
        assert_eq!(SubgraphSize::Nodes(80).resolve(50), 50);
        assert_eq!(SubgraphSize::Nodes(20).resolve(50), 20);
    }
}
