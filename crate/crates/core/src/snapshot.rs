//! Trained-model snapshots.
//!
//! ```text
//! magic   b"GNRS"
//! version u32 = 1
//! config  u32 count, count × (key, value)
//! users   u32 count, count × key
//! items   u32 count, count × key
//! tensors named-tensor block (see numeric::io)
//! ```
//! Strings are a u32 byte length followed by utf-8. Besides every trained
//! parameter, the tensor block holds `final.user` and `final.item`, the
//! representations that scoring uses.

use std::io::{Read, Write};

use crate::bpr::BprModel;
use crate::eval::{EmbeddingScorer, Link};
use crate::graph::InteractionGraph;
use crate::model::{GnnModel, ModelConfig, ModelError};
use crate::numeric::io::{read_string, read_tensors, read_u32, write_tensors};
use crate::numeric::{Matrix, NumericError};
use crate::sampler::ImportanceConfig;

const MAGIC: &[u8; 4] = b"GNRS";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct ModelSnapshot {
    pub config: Vec<(String, String)>,
    pub user_keys: Vec<String>,
    pub item_keys: Vec<String>,
    pub tensors: Vec<(String, Matrix)>,
}

fn write_string<W: Write>(out: &mut W, s: &str) -> std::io::Result<()> {
    out.write_all(&(s.len() as u32).to_le_bytes())?;
    out.write_all(s.as_bytes())
}

fn read_strings<R: Read>(input: &mut R) -> Result<Vec<String>, NumericError> {
    let n = read_u32(input)?;
    (0..n).map(|_| read_string(input)).collect()
}

fn bad(msg: impl Into<String>) -> ModelError {
    ModelError::Snapshot(msg.into())
}

impl ModelSnapshot {
    pub fn write<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        out.write_all(MAGIC)?;
        out.write_all(&VERSION.to_le_bytes())?;
        out.write_all(&(self.config.len() as u32).to_le_bytes())?;
        for (k, v) in &self.config {
            write_string(out, k)?;
            write_string(out, v)?;
        }
        for keys in [&self.user_keys, &self.item_keys] {
            out.write_all(&(keys.len() as u32).to_le_bytes())?;
            for k in keys {
                write_string(out, k)?;
            }
        }
        let named: Vec<(&str, &Matrix)> =
            self.tensors.iter().map(|(n, m)| (n.as_str(), m)).collect();
        write_tensors(out, &named)
    }

    pub fn read<R: Read>(input: &mut R) -> Result<Self, ModelError> {
        let mut magic = [0u8; 4];
        input.read_exact(&mut magic).map_err(NumericError::from)?;
        if &magic != MAGIC {
            return Err(bad("not a model snapshot"));
        }
        let version = read_u32(input)?;
        if version != VERSION {
            return Err(bad(format!("unsupported snapshot version {version}")));
        }
        let n = read_u32(input)?;
        let config = (0..n)
            .map(|_| Ok((read_string(input)?, read_string(input)?)))
            .collect::<Result<Vec<_>, NumericError>>()?;
        let user_keys = read_strings(input)?;
        let item_keys = read_strings(input)?;
        let tensors = read_tensors(input)?;
        Ok(ModelSnapshot {
            config,
            user_keys,
            item_keys,
            tensors,
        })
    }

    pub fn config_value(&self, key: &str) -> Option<&str> {
        self.config
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    fn require<T: std::str::FromStr>(&self, key: &str) -> Result<T, ModelError> {
        let raw = self
            .config_value(key)
            .ok_or_else(|| bad(format!("config block lacks `{key}`")))?;
        raw.parse()
            .map_err(|_| bad(format!("config `{key}` has unreadable value `{raw}`")))
    }

    pub fn tensor(&self, name: &str) -> Option<&Matrix> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, m)| m)
    }

    fn require_tensor(&self, name: &str) -> Result<&Matrix, ModelError> {
        self.tensor(name)
            .ok_or_else(|| bad(format!("missing tensor `{name}`")))
    }

    /// `gnn` or `bpr`.
    pub fn kind(&self) -> Result<String, ModelError> {
        self.require("model.kind")
    }

    pub fn dim(&self) -> Result<usize, ModelError> {
        self.require("model.dim")
    }

    fn base(graph: &InteractionGraph, config: Vec<(String, String)>) -> Self {
        ModelSnapshot {
            config,
            user_keys: graph.user_keys().to_vec(),
            item_keys: graph.item_keys().to_vec(),
            tensors: Vec::new(),
        }
    }

    pub fn from_gnn(model: &GnnModel, graph: &InteractionGraph) -> Result<Self, ModelError> {
        let c = model.config();
        let s = model.sampler();
        let (nu, ni, nl) = model.counts();
        let config = [
            ("model.kind", "gnn".to_string()),
            ("model.dim", c.dim.to_string()),
            ("model.layers", c.layers.to_string()),
            ("model.aggregator", c.aggregator.to_string()),
            ("model.head", c.head.to_string()),
            ("model.leaky_slope", c.leaky_slope.to_string()),
            ("sampler.size", s.sample_size.to_string()),
            ("sampler.mode", s.mode.to_string()),
            ("sampler.seed", s.seed.to_string()),
            ("graph.users", nu.to_string()),
            ("graph.items", ni.to_string()),
            ("graph.levels", nl.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
        let mut snap = Self::base(graph, config);
        snap.tensors = model
            .params()
            .iter()
            .map(|p| (p.name.clone(), p.value.clone()))
            .collect();
        let (users, items) = model.final_representations(graph)?;
        snap.tensors.push(("final.user".into(), users));
        snap.tensors.push(("final.item".into(), items));
        Ok(snap)
    }

    pub fn from_bpr(model: &BprModel, graph: &InteractionGraph) -> Result<Self, ModelError> {
        let config = vec![
            ("model.kind".to_string(), "bpr".to_string()),
            ("model.dim".into(), model.dim().to_string()),
            (
                "graph.users".into(),
                model.user_factors().rows().to_string(),
            ),
            (
                "graph.items".into(),
                model.item_factors().rows().to_string(),
            ),
        ];
        let mut snap = Self::base(graph, config);
        snap.tensors = model
            .params()
            .iter()
            .map(|p| (p.name.clone(), p.value.clone()))
            .collect();
        snap.tensors
            .push(("final.user".into(), model.user_factors().clone()));
        snap.tensors
            .push(("final.item".into(), model.item_factors().clone()));
        Ok(snap)
    }

    /// Scorer over the stored final representations.
    pub fn scorer(&self) -> Result<EmbeddingScorer, ModelError> {
        let users = self.require_tensor("final.user")?.clone();
        let items = self.require_tensor("final.item")?.clone();
        let link = if self.config_value("model.head") == Some("mlp") {
            Link::Mlp {
                w1: self.require_tensor("head.w1")?.clone(),
                b1: self.require_tensor("head.b1")?.row(0).to_vec(),
                w2: self.require_tensor("head.w2")?.row(0).to_vec(),
                b2: self.require_tensor("head.b2")?.get(0, 0),
            }
        } else {
            Link::Dot
        };
        Ok(EmbeddingScorer::new(users, items, link)?)
    }

    pub fn restore_gnn(&self) -> Result<GnnModel, ModelError> {
        if self.kind()? != "gnn" {
            return Err(bad("snapshot does not hold a gnn model"));
        }
        let config = ModelConfig {
            dim: self.dim()?,
            layers: self.require("model.layers")?,
            aggregator: self.require("model.aggregator")?,
            head: self.require("model.head")?,
            leaky_slope: self.require("model.leaky_slope")?,
        };
        let sampler = ImportanceConfig {
            sample_size: self.require("sampler.size")?,
            mode: self.require("sampler.mode")?,
            seed: self.require("sampler.seed")?,
        };
        let mut model = GnnModel::with_counts(
            self.require("graph.users")?,
            self.require("graph.items")?,
            self.require("graph.levels")?,
            config,
            sampler,
            0,
        )?;
        model.load_params(&self.tensors)?;
        Ok(model)
    }

    pub fn restore_bpr(&self) -> Result<BprModel, ModelError> {
        if self.kind()? != "bpr" {
            return Err(bad("snapshot does not hold a bpr model"));
        }
        BprModel::from_factors(
            self.require_tensor("bpr.user")?.clone(),
            self.require_tensor("bpr.item")?.clone(),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::Scorer;
    use crate::model::{Aggregator, Head};

    fn graph() -> InteractionGraph {
        InteractionGraph::from_indexed_edges(2, 3, 5, &[(0, 0, 5), (0, 2, 1), (1, 1, 3)]).unwrap()
    }

    #[test]
    fn gnn_roundtrip() {
        let g = graph();
        let cfg = ModelConfig {
            dim: 3,
            layers: 2,
            aggregator: Aggregator::Pooling,
            head: Head::Mlp,
            leaky_slope: 0.02,
        };
        let m = GnnModel::new(&g, cfg, ImportanceConfig::default(), 4).unwrap();
        let snap = ModelSnapshot::from_gnn(&m, &g).unwrap();
        let mut buf = Vec::new();
        snap.write(&mut buf).unwrap();
        let back = ModelSnapshot::read(&mut &buf[..]).unwrap();
        assert_eq!(back, snap);
        assert_eq!(back.kind().unwrap(), "gnn");

        let restored = back.restore_gnn().unwrap();
        assert_eq!(restored.config(), m.config());
        for (a, b) in restored.params().iter().zip(m.params().iter()) {
            assert_eq!(a.value, b.value);
        }
        let (s1, s2) = (back.scorer().unwrap(), m.scorer(&g).unwrap());
        assert_eq!(s1.score(1, 2), s2.score(1, 2));
        assert!(back.restore_bpr().is_err());
    }

    #[test]
    fn bpr_roundtrip_and_bad_magic() {
        let g = graph();
        let m = BprModel::new(&g, 4, 1).unwrap();
        let snap = ModelSnapshot::from_bpr(&m, &g).unwrap();
        let mut buf = Vec::new();
        snap.write(&mut buf).unwrap();
        let back = ModelSnapshot::read(&mut &buf[..]).unwrap();
        assert_eq!(back.restore_bpr().unwrap().user_factors(), m.user_factors());
        assert_eq!(
            back.scorer().unwrap().score(0, 1),
            m.bpr_score(0, 1).unwrap()
        );
        buf[0] = b'X';
        assert!(ModelSnapshot::read(&mut &buf[..]).is_err());
    }
}
