use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::network::Network;

/// Names one parameter matrix. Text form: `input:<node>`, `recurrent:<node>`,
/// `edge:<from>-><to>`, `bias:<node>`, `readout`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ParamGroupId {
    Input(String),
    Recurrent(String),
    Edge { from: String, to: String },
    Bias(String),
    Readout,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamKind {
    InputWeights,
    RecurrentWeights,
    CrossLayerWeights,
    ReadoutWeights,
    Bias,
}

impl ParamGroupId {
    pub fn kind(&self) -> ParamKind {
        match self {
            ParamGroupId::Input(_) => ParamKind::InputWeights,
            ParamGroupId::Recurrent(_) => ParamKind::RecurrentWeights,
            ParamGroupId::Edge { .. } => ParamKind::CrossLayerWeights,
            ParamGroupId::Bias(_) => ParamKind::Bias,
            ParamGroupId::Readout => ParamKind::ReadoutWeights,
        }
    }

    /// The node whose pre-activation this group enters; `None` for the readout.
    pub fn home(&self) -> Option<&str> {
        match self {
            ParamGroupId::Input(n) | ParamGroupId::Recurrent(n) | ParamGroupId::Bias(n) => Some(n),
            ParamGroupId::Edge { to, .. } => Some(to),
            ParamGroupId::Readout => None,
        }
    }

    pub fn edge(from: impl Into<String>, to: impl Into<String>) -> Self {
        ParamGroupId::Edge {
            from: from.into(),
            to: to.into(),
        }
    }
}

impl fmt::Display for ParamGroupId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParamGroupId::Input(n) => write!(f, "input:{n}"),
            ParamGroupId::Recurrent(n) => write!(f, "recurrent:{n}"),
            ParamGroupId::Edge { from, to } => write!(f, "edge:{from}->{to}"),
            ParamGroupId::Bias(n) => write!(f, "bias:{n}"),
            ParamGroupId::Readout => f.write_str("readout"),
        }
    }
}

impl FromStr for ParamGroupId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "readout" {
            return Ok(ParamGroupId::Readout);
        }
        let bad = || Error::Validation(format!("malformed parameter group id `{s}`"));
        let (kind, rest) = s.split_once(':').ok_or_else(bad)?;
        if rest.is_empty() {
            return Err(bad());
        }
        match kind {
            "input" => Ok(ParamGroupId::Input(rest.to_string())),
            "recurrent" => Ok(ParamGroupId::Recurrent(rest.to_string())),
            "bias" => Ok(ParamGroupId::Bias(rest.to_string())),
            "edge" => {
                let (from, to) = rest.split_once("->").ok_or_else(bad)?;
                if from.is_empty() || to.is_empty() {
                    return Err(bad());
                }
                Ok(ParamGroupId::edge(from, to))
            }
            _ => Err(bad()),
        }
    }
}

impl Serialize for ParamGroupId {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ParamGroupId {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamGroup {
    pub id: ParamGroupId,
    pub matrix: Matrix,
}

impl ParamGroup {
    pub fn kind(&self) -> ParamKind {
        self.id.kind()
    }
}

/// Every parameter matrix of a network, in the network's canonical group order.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    groups: Vec<ParamGroup>,
}

impl Params {
    /// Builds from groups that must be in `net`'s canonical order with matching shapes.
    pub fn from_groups(net: &Network, groups: Vec<ParamGroup>) -> Result<Self> {
        if groups.len() != net.group_count() {
            return Err(Error::Argument(format!(
                "expected {} parameter groups, got {}",
                net.group_count(),
                groups.len()
            )));
        }
        for (i, g) in groups.iter().enumerate() {
            let info = net.group(i);
            if info.id != g.id {
                return Err(Error::Argument(format!(
                    "parameter group {i} is `{}`, expected `{}`",
                    g.id, info.id
                )));
            }
            if g.matrix.shape() != (info.rows, info.cols) {
                return Err(Error::shape(
                    "Params::from_groups",
                    format!("{} {}", g.id, g.matrix.shape_str()),
                    format!("expected {}x{}", info.rows, info.cols),
                ));
            }
        }
        Ok(Params { groups })
    }

    /// Reorders named matrices into `net`'s canonical order.
    pub fn from_named(net: &Network, mut named: Vec<(ParamGroupId, Matrix)>) -> Result<Self> {
        let mut groups = Vec::with_capacity(net.group_count());
        for info in net.groups() {
            let pos = named
                .iter()
                .position(|(id, _)| *id == info.id)
                .ok_or_else(|| Error::Argument(format!("missing parameter group `{}`", info.id)))?;
            let (id, matrix) = named.swap_remove(pos);
            groups.push(ParamGroup { id, matrix });
        }
        if let Some((id, _)) = named.first() {
            return Err(Error::Argument(format!("unknown parameter group `{id}`")));
        }
        Params::from_groups(net, groups)
    }

    pub fn zeros(net: &Network) -> Self {
        Params {
            groups: net
                .groups()
                .iter()
                .map(|g| ParamGroup {
                    id: g.id.clone(),
                    matrix: Matrix::zeros(g.rows, g.cols),
                })
                .collect(),
        }
    }

    pub fn groups(&self) -> &[ParamGroup] {
        &self.groups
    }

    #[inline]
    pub fn at(&self, index: usize) -> &Matrix {
        &self.groups[index].matrix
    }

    #[inline]
    pub fn at_mut(&mut self, index: usize) -> &mut Matrix {
        &mut self.groups[index].matrix
    }

    pub fn get(&self, id: &ParamGroupId) -> Option<&Matrix> {
        self.groups.iter().find(|g| g.id == *id).map(|g| &g.matrix)
    }

    pub fn get_mut(&mut self, id: &ParamGroupId) -> Option<&mut Matrix> {
        self.groups
            .iter_mut()
            .find(|g| g.id == *id)
            .map(|g| &mut g.matrix)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&ParamGroupId, &Matrix)> {
        self.groups.iter().map(|g| (&g.id, &g.matrix))
    }

    pub fn scalar_count(&self) -> usize {
        self.groups.iter().map(|g| g.matrix.len()).sum()
    }
}

/// Uniform `[−1/√fan_in, 1/√fan_in]` weights, zero biases. Deterministic in `seed`.
pub fn init_params(net: &Network, seed: u64) -> Params {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let groups = net
        .groups()
        .iter()
        .map(|info| {
            let matrix = if info.id.kind() == ParamKind::Bias {
                Matrix::zeros(info.rows, info.cols)
            } else {
                let bound = 1.0 / (info.cols as f64).sqrt();
                Matrix::from_fn(info.rows, info.cols, |_, _| rng.gen_range(-bound..=bound))
            };
            ParamGroup {
                id: info.id.clone(),
                matrix,
            }
        })
        .collect();
    Params { groups }
}
