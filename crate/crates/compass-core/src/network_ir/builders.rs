//! Builtin benchmark graphs: VGG16, ResNet18 and SqueezeNet 1.1.
//!
//! Counting convention: 4-bit weights, no bias terms, MiB units. Under it
//! the builders land within 1% of the reference footprints (verified by
//! the fixture tests in `mod.rs`).

use super::{LayerKind, LayerNode, NetworkGraph, NodeId, PoolMode, TensorShape};
use crate::error::{Error, Result};

pub fn builtin_model_names() -> &'static [&'static str] {
    &["vgg16", "resnet18", "squeezenet"]
}

pub fn build_benchmark(name: &str) -> Result<NetworkGraph> {
    match name {
        "vgg16" => vgg16(),
        "resnet18" => resnet18(),
        "squeezenet" => squeezenet(),
        other => Err(Error::UnknownModel(other.to_string())),
    }
}

struct GraphBuilder {
    nodes: Vec<LayerNode>,
}

impl GraphBuilder {
    fn new() -> Self {
        GraphBuilder { nodes: Vec::new() }
    }

    fn push(&mut self, kind: LayerKind, inputs: Vec<NodeId>) -> NodeId {
        let id = self.nodes.len();
        self.nodes.push(LayerNode {
            id,
            kind,
            weight_bits_per_element: 4,
            inputs,
        });
        id
    }

    fn conv(
        &mut self,
        input: Option<NodeId>,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        padding: usize,
    ) -> NodeId {
        self.push(
            LayerKind::Conv {
                cin,
                cout,
                kh: k,
                kw: k,
                stride,
                padding,
            },
            input.into_iter().collect(),
        )
    }

    fn linear(&mut self, input: NodeId, cin: usize, cout: usize) -> NodeId {
        self.push(LayerKind::Linear { cin, cout }, vec![input])
    }

    fn relu(&mut self, input: NodeId) -> NodeId {
        self.push(LayerKind::Activation, vec![input])
    }

    fn bn(&mut self, input: NodeId) -> NodeId {
        self.push(LayerKind::BatchNorm, vec![input])
    }

    fn pool(
        &mut self,
        input: NodeId,
        window: usize,
        stride: usize,
        padding: usize,
        mode: PoolMode,
    ) -> NodeId {
        self.push(
            LayerKind::Pool {
                window,
                stride,
                mode,
                padding,
            },
            vec![input],
        )
    }

    fn max_pool(&mut self, input: NodeId, window: usize, stride: usize) -> NodeId {
        self.pool(input, window, stride, 0, PoolMode::Max)
    }

    fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(LayerKind::ElementwiseAdd, vec![a, b])
    }

    fn concat(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(LayerKind::Concat, vec![a, b])
    }

    fn flatten(&mut self, input: NodeId) -> NodeId {
        self.push(LayerKind::Flatten, vec![input])
    }

    fn finish(self, name: &str, input_shape: TensorShape) -> Result<NetworkGraph> {
        NetworkGraph::new(name, input_shape, self.nodes)
    }
}

fn vgg16() -> Result<NetworkGraph> {
    let mut b = GraphBuilder::new();
    let plan: &[&[usize]] = &[
        &[3, 64, 64],
        &[64, 128, 128],
        &[128, 256, 256, 256],
        &[256, 512, 512, 512],
        &[512, 512, 512, 512],
    ];
    let mut prev: Option<NodeId> = None;
    for block in plan {
        for pair in block.windows(2) {
            let conv = b.conv(prev, pair[0], pair[1], 3, 1, 1);
            prev = Some(b.relu(conv));
        }
        prev = Some(b.max_pool(prev.unwrap(), 2, 2));
    }
    let flat = b.flatten(prev.unwrap());
    let fc1 = b.linear(flat, 512 * 7 * 7, 4096);
    let r1 = b.relu(fc1);
    let fc2 = b.linear(r1, 4096, 4096);
    let r2 = b.relu(fc2);
    b.linear(r2, 4096, 1000);
    b.finish("vgg16", TensorShape::new(3, 224, 224))
}

fn resnet18() -> Result<NetworkGraph> {
    let mut b = GraphBuilder::new();
    let conv1 = b.conv(None, 3, 64, 7, 2, 3);
    let bn1 = b.bn(conv1);
    let relu1 = b.relu(bn1);
    let mut prev = b.pool(relu1, 3, 2, 1, PoolMode::Max);

    // (cin, cout, stride of the first block)
    let stages = [(64, 64, 1), (64, 128, 2), (128, 256, 2), (256, 512, 2)];
    for (cin, cout, first_stride) in stages {
        for block in 0..2 {
            let (block_cin, stride) = if block == 0 { (cin, first_stride) } else { (cout, 1) };
            let skip = if block_cin != cout || stride != 1 {
                let ds = b.conv(Some(prev), block_cin, cout, 1, stride, 0);
                b.bn(ds)
            } else {
                prev
            };
            let c1 = b.conv(Some(prev), block_cin, cout, 3, stride, 1);
            let n1 = b.bn(c1);
            let a1 = b.relu(n1);
            let c2 = b.conv(Some(a1), cout, cout, 3, 1, 1);
            let n2 = b.bn(c2);
            let sum = b.add(n2, skip);
            prev = b.relu(sum);
        }
    }
    let pooled = b.pool(prev, 7, 7, 0, PoolMode::Avg);
    let flat = b.flatten(pooled);
    b.linear(flat, 512, 1000);
    b.finish("resnet18", TensorShape::new(3, 224, 224))
}

fn squeezenet() -> Result<NetworkGraph> {
    let mut b = GraphBuilder::new();

    let fire = |b: &mut GraphBuilder, input: NodeId, cin: usize, squeeze: usize, expand: usize| {
        let sq = b.conv(Some(input), cin, squeeze, 1, 1, 0);
        let sq_r = b.relu(sq);
        let e1 = b.conv(Some(sq_r), squeeze, expand, 1, 1, 0);
        let e1_r = b.relu(e1);
        let e3 = b.conv(Some(sq_r), squeeze, expand, 3, 1, 1);
        let e3_r = b.relu(e3);
        b.concat(e1_r, e3_r)
    };

    let conv1 = b.conv(None, 3, 64, 3, 2, 0);
    let relu1 = b.relu(conv1);
    let p1 = b.max_pool(relu1, 3, 2);
    let f2 = fire(&mut b, p1, 64, 16, 64);
    let f3 = fire(&mut b, f2, 128, 16, 64);
    let p2 = b.max_pool(f3, 3, 2);
    let f4 = fire(&mut b, p2, 128, 32, 128);
    let f5 = fire(&mut b, f4, 256, 32, 128);
    let p3 = b.max_pool(f5, 3, 2);
    let f6 = fire(&mut b, p3, 256, 48, 192);
    let f7 = fire(&mut b, f6, 384, 48, 192);
    let f8 = fire(&mut b, f7, 384, 64, 256);
    let f9 = fire(&mut b, f8, 512, 64, 256);
    let conv10 = b.conv(Some(f9), 512, 1000, 1, 1, 0);
    let relu10 = b.relu(conv10);
    let pooled = b.pool(relu10, 13, 13, 0, PoolMode::Avg);
    b.flatten(pooled);
    b.finish("squeezenet", TensorShape::new(3, 224, 224))
}
