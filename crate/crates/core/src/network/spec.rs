//! Declarative network descriptions and the JSON spec-file parser.
//!
//! Schema (all keys other than those listed are rejected):
//!
//! ```text
//! topology        "chain" | "dag"                      required
//! input_dim       integer ≥ 1                          required
//! readout_dim     integer ≥ 1                          required
//! layers          [layer]            chain only        required for chain
//! nodes           [layer]            dag only          required for dag
//! edges           [{"from", "to"}]   dag only          default []
//! input_nodes     [node id]          dag only          required for dag
//! output_node     node id            dag only          required for dag
//! loss_kind       "mse"                                default "mse"
//! loss_timesteps  "final_only" | "every_step"          default "final_only"
//! tracked_groups  [group id] or ["all"]                default input weights of the first layer
//! trace_mode      "diag_home_dense_above" | "diag_everywhere"
//! seed            integer                              default 0
//!
//! layer = {"id": string, "hidden_dim": integer ≥ 1,
//!          "activation": "tanh"|"relu"|"linear"|"sigmoid",
//!          "recurrent": bool (default true)}
//! ```
//!
//! Chain layers may omit `id`; they are then named `l1`, `l2`, ….

use serde::{Deserialize, Serialize};

use crate::eprop::TraceMode;
use crate::error::{Error, Result};
use crate::linalg::ActivationKind;
use crate::network::params::ParamGroupId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    #[default]
    Mse,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossTimesteps {
    #[default]
    FinalOnly,
    EveryStep,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub layer_id: String,
    pub hidden_dim: usize,
    pub activation: ActivationKind,
    pub has_recurrence: bool,
}

impl LayerSpec {
    pub fn new(id: impl Into<String>, hidden_dim: usize, activation: ActivationKind) -> Self {
        LayerSpec {
            layer_id: id.into(),
            hidden_dim,
            activation,
            has_recurrence: true,
        }
    }

    pub fn without_recurrence(mut self) -> Self {
        self.has_recurrence = false;
        self
    }
}

/// A stacked chain: layer 1 reads the input, layer l reads layer l−1, the
/// readout reads the last layer.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSpec {
    pub input_dim: usize,
    pub layers: Vec<LayerSpec>,
    pub readout_dim: usize,
    pub loss_kind: LossKind,
    pub loss_timesteps: LossTimesteps,
    pub tracked_groups: TrackedGroups,
    pub trace_mode: TraceMode,
    pub seed: u64,
}

impl NetworkSpec {
    /// Chain with layers named `l1..lL`, final-only loss and default tracking.
    pub fn chain(input_dim: usize, layers: &[(usize, ActivationKind)], readout_dim: usize) -> Self {
        NetworkSpec {
            input_dim,
            layers: layers
                .iter()
                .enumerate()
                .map(|(i, &(dim, act))| LayerSpec::new(format!("l{}", i + 1), dim, act))
                .collect(),
            readout_dim,
            loss_kind: LossKind::Mse,
            loss_timesteps: LossTimesteps::FinalOnly,
            tracked_groups: TrackedGroups::Default,
            trace_mode: TraceMode::default(),
            seed: 0,
        }
    }

    /// The equivalent path-graph [`GraphSpec`].
    pub fn to_graph(&self) -> GraphSpec {
        let edges = self
            .layers
            .windows(2)
            .map(|w| EdgeSpec {
                from: w[0].layer_id.clone(),
                to: w[1].layer_id.clone(),
            })
            .collect();
        GraphSpec {
            input_dim: self.input_dim,
            nodes: self.layers.clone(),
            edges,
            input_nodes: self
                .layers
                .first()
                .map(|l| l.layer_id.clone())
                .into_iter()
                .collect(),
            output_node: self.layers.last().map(|l| l.layer_id.clone()).unwrap_or_default(),
            readout_dim: self.readout_dim,
            loss_kind: self.loss_kind,
            loss_timesteps: self.loss_timesteps,
            tracked_groups: self.tracked_groups.clone(),
            trace_mode: self.trace_mode,
            seed: self.seed,
        }
    }
}

/// Which parameter groups get gradient pipelines.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum TrackedGroups {
    /// Input weights of the first layer (first input node for a DAG).
    #[default]
    Default,
    All,
    Explicit(Vec<ParamGroupId>),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgeSpec {
    pub from: String,
    pub to: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphSpec {
    pub input_dim: usize,
    pub nodes: Vec<LayerSpec>,
    pub edges: Vec<EdgeSpec>,
    pub input_nodes: Vec<String>,
    pub output_node: String,
    pub readout_dim: usize,
    pub loss_kind: LossKind,
    pub loss_timesteps: LossTimesteps,
    pub tracked_groups: TrackedGroups,
    pub trace_mode: TraceMode,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ModelSpec {
    Chain(NetworkSpec),
    Dag(GraphSpec),
}

impl ModelSpec {
    pub fn to_graph(&self) -> GraphSpec {
        match self {
            ModelSpec::Chain(c) => c.to_graph(),
            ModelSpec::Dag(g) => g.clone(),
        }
    }

    pub fn seed(&self) -> u64 {
        match self {
            ModelSpec::Chain(c) => c.seed,
            ModelSpec::Dag(g) => g.seed,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerDoc {
    #[serde(default)]
    id: Option<String>,
    hidden_dim: usize,
    activation: ActivationKind,
    #[serde(default = "default_true")]
    recurrent: bool,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Deserialize)]
#[serde(rename_all = "snake_case")]
enum Topology {
    Chain,
    Dag,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SpecDoc {
    topology: Topology,
    input_dim: usize,
    readout_dim: usize,
    #[serde(default)]
    layers: Option<Vec<LayerDoc>>,
    #[serde(default)]
    nodes: Option<Vec<LayerDoc>>,
    #[serde(default)]
    edges: Option<Vec<EdgeSpec>>,
    #[serde(default)]
    input_nodes: Option<Vec<String>>,
    #[serde(default)]
    output_node: Option<String>,
    #[serde(default)]
    loss_kind: LossKind,
    #[serde(default)]
    loss_timesteps: LossTimesteps,
    #[serde(default)]
    tracked_groups: Vec<String>,
    #[serde(default)]
    trace_mode: TraceMode,
    #[serde(default)]
    seed: u64,
}

/// Parses and validates a spec document. Validation covers everything
/// [`crate::network::Network::build`] checks (cycles, dangling ids, tracked
/// groups, trace-mode width constraints).
pub fn parse_spec(text: &str) -> Result<ModelSpec> {
    let doc: SpecDoc = serde_json::from_str(text).map_err(|e| Error::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    let tracked = parse_tracked(&doc.tracked_groups)?;
    let spec = match doc.topology {
        Topology::Chain => {
            for (key, present) in [
                ("nodes", doc.nodes.is_some()),
                ("edges", doc.edges.is_some()),
                ("input_nodes", doc.input_nodes.is_some()),
                ("output_node", doc.output_node.is_some()),
            ] {
                if present {
                    return Err(Error::Validation(format!(
                        "`{key}` is not allowed for topology \"chain\""
                    )));
                }
            }
            let layers = doc
                .layers
                .ok_or_else(|| Error::Validation("chain topology requires `layers`".into()))?;
            ModelSpec::Chain(NetworkSpec {
                input_dim: doc.input_dim,
                layers: layers
                    .into_iter()
                    .enumerate()
                    .map(|(i, l)| to_layer(l, Some(i)))
                    .collect::<Result<_>>()?,
                readout_dim: doc.readout_dim,
                loss_kind: doc.loss_kind,
                loss_timesteps: doc.loss_timesteps,
                tracked_groups: tracked,
                trace_mode: doc.trace_mode,
                seed: doc.seed,
            })
        }
        Topology::Dag => {
            if doc.layers.is_some() {
                return Err(Error::Validation(
                    "`layers` is not allowed for topology \"dag\"; use `nodes`".into(),
                ));
            }
            let nodes = doc
                .nodes
                .ok_or_else(|| Error::Validation("dag topology requires `nodes`".into()))?;
            ModelSpec::Dag(GraphSpec {
                input_dim: doc.input_dim,
                nodes: nodes
                    .into_iter()
                    .map(|l| to_layer(l, None))
                    .collect::<Result<_>>()?,
                edges: doc.edges.unwrap_or_default(),
                input_nodes: doc
                    .input_nodes
                    .ok_or_else(|| Error::Validation("dag topology requires `input_nodes`".into()))?,
                output_node: doc
                    .output_node
                    .ok_or_else(|| Error::Validation("dag topology requires `output_node`".into()))?,
                readout_dim: doc.readout_dim,
                loss_kind: doc.loss_kind,
                loss_timesteps: doc.loss_timesteps,
                tracked_groups: tracked,
                trace_mode: doc.trace_mode,
                seed: doc.seed,
            })
        }
    };
    // Full structural validation.
    crate::network::Network::build(&spec)?;
    Ok(spec)
}

fn to_layer(doc: LayerDoc, chain_index: Option<usize>) -> Result<LayerSpec> {
    let layer_id = match (doc.id, chain_index) {
        (Some(id), _) => id,
        (None, Some(i)) => format!("l{}", i + 1),
        (None, None) => return Err(Error::Validation("every dag node needs an `id`".into())),
    };
    Ok(LayerSpec {
        layer_id,
        hidden_dim: doc.hidden_dim,
        activation: doc.activation,
        has_recurrence: doc.recurrent,
    })
}

fn parse_tracked(raw: &[String]) -> Result<TrackedGroups> {
    match raw {
        [] => Ok(TrackedGroups::Default),
        [one] if one == "all" => Ok(TrackedGroups::All),
        _ => Ok(TrackedGroups::Explicit(
            raw.iter().map(|s| s.parse()).collect::<Result<_>>()?,
        )),
    }
}
