//! DNN graph representation: DAG of layers, shape inference, per-layer
//! weight/workload statistics and builtin benchmark builders.
//!
//! Only Conv and Linear layers carry weights and map onto crossbars; all
//! other kinds (pooling, batch norm, activations, elementwise add, concat,
//! flatten) execute on the vector units. Weights carry no numeric values:
//! this is a compiler and estimator, so only shapes and bit widths matter.

mod builders;

pub use builders::{build_benchmark, builtin_model_names};

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const NETWORK_FORMAT_VERSION: u32 = 1;

pub type NodeId = usize;

pub fn default_weight_bits() -> u32 {
    4
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolMode {
    Max,
    Avg,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerKind {
    Conv {
        cin: usize,
        cout: usize,
        kh: usize,
        kw: usize,
        stride: usize,
        padding: usize,
    },
    Linear {
        cin: usize,
        cout: usize,
    },
    Pool {
        window: usize,
        stride: usize,
        mode: PoolMode,
        #[serde(default)]
        padding: usize,
    },
    BatchNorm,
    Activation,
    ElementwiseAdd,
    Concat,
    Flatten,
}

impl LayerKind {
    pub fn is_mappable(&self) -> bool {
        matches!(self, LayerKind::Conv { .. } | LayerKind::Linear { .. })
    }

    pub fn label(&self) -> &'static str {
        match self {
            LayerKind::Conv { .. } => "conv",
            LayerKind::Linear { .. } => "linear",
            LayerKind::Pool { .. } => "pool",
            LayerKind::BatchNorm => "batch_norm",
            LayerKind::Activation => "activation",
            LayerKind::ElementwiseAdd => "elementwise_add",
            LayerKind::Concat => "concat",
            LayerKind::Flatten => "flatten",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerNode {
    pub id: NodeId,
    #[serde(flatten)]
    pub kind: LayerKind,
    #[serde(default = "default_weight_bits")]
    pub weight_bits_per_element: u32,
    #[serde(default)]
    pub inputs: Vec<NodeId>,
}

/// Channel-height-width shape of a tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorShape {
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl TensorShape {
    pub fn new(c: usize, h: usize, w: usize) -> Self {
        TensorShape { c, h, w }
    }

    pub fn elems(&self) -> u64 {
        self.c as u64 * self.h as u64 * self.w as u64
    }
}

/// A validated DAG in topological order with inferred shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkGraph {
    pub name: String,
    pub input_shape: TensorShape,
    nodes: Vec<LayerNode>,
    shapes: Vec<TensorShape>,
    position: BTreeMap<NodeId, usize>,
    consumers: BTreeMap<NodeId, Vec<NodeId>>,
}

impl NetworkGraph {
    /// Validate a node list and build the graph. Nodes may arrive in any
    /// order; they are topologically sorted (ties by id).
    pub fn new(
        name: impl Into<String>,
        input_shape: TensorShape,
        nodes: Vec<LayerNode>,
    ) -> Result<NetworkGraph> {
        let mut by_id: BTreeMap<NodeId, LayerNode> = BTreeMap::new();
        for node in nodes {
            if by_id.insert(node.id, node.clone()).is_some() {
                return Err(Error::Parse(format!("duplicate node id {}", node.id)));
            }
        }
        for node in by_id.values() {
            for &input in &node.inputs {
                if !by_id.contains_key(&input) {
                    return Err(Error::Parse(format!(
                        "node {} references missing node {}",
                        node.id, input
                    )));
                }
            }
        }
        let sources: Vec<NodeId> = by_id
            .values()
            .filter(|n| n.inputs.is_empty())
            .map(|n| n.id)
            .collect();
        if sources.len() != 1 {
            return Err(Error::Parse(format!(
                "expected exactly one source node consuming the external input, found {:?}",
                sources
            )));
        }

        // Kahn topological sort, smallest ready id first.
        let mut indegree: BTreeMap<NodeId, usize> =
            by_id.values().map(|n| (n.id, n.inputs.len())).collect();
        let mut consumers: BTreeMap<NodeId, Vec<NodeId>> = BTreeMap::new();
        for node in by_id.values() {
            for &input in &node.inputs {
                consumers.entry(input).or_default().push(node.id);
            }
        }
        let mut ready: std::collections::BTreeSet<NodeId> = indegree
            .iter()
            .filter(|(_, &d)| d == 0)
            .map(|(&id, _)| id)
            .collect();
        let mut order = Vec::with_capacity(by_id.len());
        while let Some(&id) = ready.iter().next() {
            ready.remove(&id);
            order.push(id);
            for &c in consumers.get(&id).map(|v| v.as_slice()).unwrap_or(&[]) {
                let d = indegree.get_mut(&c).unwrap();
                *d -= 1;
                if *d == 0 {
                    ready.insert(c);
                }
            }
        }
        if order.len() != by_id.len() {
            let stuck: Vec<NodeId> = indegree
                .iter()
                .filter(|(_, &d)| d > 0)
                .map(|(&id, _)| id)
                .collect();
            return Err(Error::Cycle(format!("nodes {stuck:?} form a cycle")));
        }

        let nodes: Vec<LayerNode> = order.iter().map(|id| by_id[id].clone()).collect();
        let position: BTreeMap<NodeId, usize> =
            order.iter().enumerate().map(|(i, &id)| (id, i)).collect();
        for v in consumers.values_mut() {
            v.sort_by_key(|id| position[id]);
        }

        let mut graph = NetworkGraph {
            name: name.into(),
            input_shape,
            nodes,
            shapes: Vec::new(),
            position,
            consumers,
        };
        graph.infer_shapes()?;
        Ok(graph)
    }

    fn infer_shapes(&mut self) -> Result<()> {
        let mut shapes: Vec<TensorShape> = Vec::with_capacity(self.nodes.len());
        for (pos, node) in self.nodes.iter().enumerate() {
            let ins: Vec<TensorShape> = if node.inputs.is_empty() {
                vec![self.input_shape]
            } else {
                node.inputs
                    .iter()
                    .map(|id| shapes[self.position[id]])
                    .collect()
            };
            let shape_err = |reason: String| Error::Shape {
                node: node.id,
                reason,
            };
            let out = match &node.kind {
                LayerKind::Conv {
                    cin,
                    cout,
                    kh,
                    kw,
                    stride,
                    padding,
                } => {
                    let s = one_input(node, &ins)?;
                    if s.c != *cin {
                        return Err(shape_err(format!(
                            "conv expects {cin} input channels, got {}",
                            s.c
                        )));
                    }
                    if *cin == 0 || *cout == 0 {
                        return Err(shape_err("conv cin/cout must be >= 1".into()));
                    }
                    let h = conv_out(s.h, *kh, *stride, *padding)
                        .ok_or_else(|| shape_err(format!("kernel {kh} too large for h={}", s.h)))?;
                    let w = conv_out(s.w, *kw, *stride, *padding)
                        .ok_or_else(|| shape_err(format!("kernel {kw} too large for w={}", s.w)))?;
                    TensorShape::new(*cout, h, w)
                }
                LayerKind::Linear { cin, cout } => {
                    let s = one_input(node, &ins)?;
                    if *cin == 0 || *cout == 0 {
                        return Err(shape_err("linear cin/cout must be >= 1".into()));
                    }
                    if s.h != 1 || s.w != 1 {
                        return Err(shape_err(format!(
                            "linear expects a flattened (c,1,1) input, got ({},{},{})",
                            s.c, s.h, s.w
                        )));
                    }
                    if s.c != *cin {
                        return Err(shape_err(format!(
                            "linear expects {cin} input features, got {}",
                            s.c
                        )));
                    }
                    TensorShape::new(*cout, 1, 1)
                }
                LayerKind::Pool {
                    window,
                    stride,
                    padding,
                    ..
                } => {
                    let s = one_input(node, &ins)?;
                    let h = conv_out(s.h, *window, *stride, *padding)
                        .ok_or_else(|| shape_err(format!("window {window} too large for h={}", s.h)))?;
                    let w = conv_out(s.w, *window, *stride, *padding)
                        .ok_or_else(|| shape_err(format!("window {window} too large for w={}", s.w)))?;
                    TensorShape::new(s.c, h, w)
                }
                LayerKind::BatchNorm | LayerKind::Activation => one_input(node, &ins)?,
                LayerKind::Flatten => {
                    let s = one_input(node, &ins)?;
                    TensorShape::new(s.elems() as usize, 1, 1)
                }
                LayerKind::ElementwiseAdd => {
                    if ins.len() < 2 {
                        return Err(shape_err("elementwise add needs >= 2 inputs".into()));
                    }
                    if ins.iter().any(|s| *s != ins[0]) {
                        return Err(shape_err(format!("mismatched add inputs {ins:?}")));
                    }
                    ins[0]
                }
                LayerKind::Concat => {
                    if ins.len() < 2 {
                        return Err(shape_err("concat needs >= 2 inputs".into()));
                    }
                    if ins.iter().any(|s| s.h != ins[0].h || s.w != ins[0].w) {
                        return Err(shape_err(format!("mismatched concat inputs {ins:?}")));
                    }
                    TensorShape::new(ins.iter().map(|s| s.c).sum(), ins[0].h, ins[0].w)
                }
            };
            debug_assert_eq!(pos, shapes.len());
            shapes.push(out);
        }
        self.shapes = shapes;
        Ok(())
    }

    pub fn nodes(&self) -> &[LayerNode] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> &LayerNode {
        &self.nodes[self.position[&id]]
    }

    pub fn contains(&self, id: NodeId) -> bool {
        self.position.contains_key(&id)
    }

    /// Topological position of a node.
    pub fn position(&self, id: NodeId) -> usize {
        self.position[&id]
    }

    /// Inferred output shape of a node.
    pub fn shape(&self, id: NodeId) -> TensorShape {
        self.shapes[self.position[&id]]
    }

    pub fn consumers(&self, id: NodeId) -> &[NodeId] {
        self.consumers.get(&id).map(|v| v.as_slice()).unwrap_or(&[])
    }

    /// Ids of Conv/Linear nodes in topological order.
    pub fn mappable_nodes(&self) -> Vec<NodeId> {
        self.nodes
            .iter()
            .filter(|n| n.kind.is_mappable())
            .map(|n| n.id)
            .collect()
    }

    /// Nodes with no consumers (graph outputs), in topological order.
    pub fn output_nodes(&self) -> Vec<NodeId> {
        self.nodes
            .iter()
            .filter(|n| self.consumers(n.id).is_empty())
            .map(|n| n.id)
            .collect()
    }

    /// The single node consuming the external input.
    pub fn source_node(&self) -> NodeId {
        self.nodes
            .iter()
            .find(|n| n.inputs.is_empty())
            .map(|n| n.id)
            .expect("validated graph has one source")
    }

    /// Total weight bits split into (linear, conv).
    pub fn weight_footprint_bits(&self) -> (u64, u64) {
        let mut linear = 0u64;
        let mut conv = 0u64;
        for node in &self.nodes {
            match node.kind {
                LayerKind::Conv { cin, cout, kh, kw, .. } => {
                    conv += (cin * cout * kh * kw) as u64 * node.weight_bits_per_element as u64;
                }
                LayerKind::Linear { cin, cout } => {
                    linear += (cin * cout) as u64 * node.weight_bits_per_element as u64;
                }
                _ => {}
            }
        }
        (linear, conv)
    }

    pub fn to_file_string(&self) -> String {
        let file = NetworkFile {
            format_version: NETWORK_FORMAT_VERSION,
            name: self.name.clone(),
            input_shape: [self.input_shape.c, self.input_shape.h, self.input_shape.w],
            nodes: self.nodes.clone(),
        };
        let mut s = serde_json::to_string_pretty(&file).expect("graph serializes");
        s.push('\n');
        s
    }
}

fn one_input(node: &LayerNode, ins: &[TensorShape]) -> Result<TensorShape> {
    if ins.len() != 1 {
        return Err(Error::Shape {
            node: node.id,
            reason: format!("{} expects 1 input, got {}", node.kind.label(), ins.len()),
        });
    }
    Ok(ins[0])
}

fn conv_out(dim: usize, k: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = dim + 2 * padding;
    if k == 0 || stride == 0 || padded < k {
        return None;
    }
    Some((padded - k) / stride + 1)
}

#[derive(Serialize, Deserialize)]
struct NetworkFile {
    format_version: u32,
    name: String,
    input_shape: [usize; 3],
    nodes: Vec<LayerNode>,
}

/// Load a network description file (see `docs/formats.md`).
pub fn load_network(path: impl AsRef<Path>) -> Result<NetworkGraph> {
    let text = std::fs::read_to_string(path)?;
    network_from_str(&text)
}

pub fn network_from_str(text: &str) -> Result<NetworkGraph> {
    let file: NetworkFile =
        serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
    if file.format_version != NETWORK_FORMAT_VERSION {
        return Err(Error::Parse(format!(
            "unsupported network format_version {} (expected {NETWORK_FORMAT_VERSION})",
            file.format_version
        )));
    }
    let [c, h, w] = file.input_shape;
    NetworkGraph::new(file.name, TensorShape::new(c, h, w), file.nodes)
}

/// Crossbar-oriented statistics of one Conv/Linear layer.
///
/// `rows` is the flattened input dimension (`cin*kh*kw` for Conv, `cin`
/// for Linear); `cols_cells` the cell columns one full copy of the layer
/// occupies; `invocations_per_sample` how many times each mapped crossbar
/// fires per input sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerStats {
    pub rows: u64,
    pub cout: u64,
    pub cols_cells: u64,
    pub weight_bits: u64,
    pub invocations_per_sample: u64,
    pub out_elems: u64,
}

pub fn layer_stats(graph: &NetworkGraph, id: NodeId, cell_bits: u32) -> Result<LayerStats> {
    let node = graph.node(id);
    let wbits = node.weight_bits_per_element as u64;
    let cells_per_weight = wbits.div_ceil(cell_bits as u64);
    let shape = graph.shape(id);
    match node.kind {
        LayerKind::Conv { cin, cout, kh, kw, .. } => {
            let rows = (cin * kh * kw) as u64;
            Ok(LayerStats {
                rows,
                cout: cout as u64,
                cols_cells: cout as u64 * cells_per_weight,
                weight_bits: rows * cout as u64 * wbits,
                invocations_per_sample: (shape.h * shape.w) as u64,
                out_elems: shape.elems(),
            })
        }
        LayerKind::Linear { cin, cout } => Ok(LayerStats {
            rows: cin as u64,
            cout: cout as u64,
            cols_cells: cout as u64 * cells_per_weight,
            weight_bits: (cin * cout) as u64 * wbits,
            invocations_per_sample: 1,
            out_elems: shape.elems(),
        }),
        _ => Err(Error::NotMappable(id)),
    }
}
