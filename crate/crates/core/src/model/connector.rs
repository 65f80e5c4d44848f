use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::encoder::VisualFeatureGrid;
use super::params::ParamSet;
use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConnectorConfig {
    pub d_v: usize,
    pub d_h: usize,
    pub d_l: usize,
}

impl ConnectorConfig {
    /// Number of affine layers; the connector is always three deep.
    pub const DEPTH: usize = 3;

    pub fn layer_dims(&self) -> [(usize, usize); 3] {
        [(self.d_v, self.d_h), (self.d_h, self.d_h), (self.d_h, self.d_l)]
    }
}

/// Weights of the three-layer per-patch MLP. `weights[i]` is `in x out`,
/// `biases[i]` is `1 x out`.
#[derive(Clone, Debug, PartialEq)]
pub struct Connector {
    pub config: ConnectorConfig,
    pub weights: [Array2<f64>; 3],
    pub biases: [Array2<f64>; 3],
}

impl Connector {
    /// Fan-in scaled normal init, zero biases.
    pub fn init(config: ConnectorConfig, rng: &mut impl Rng) -> Self {
        let make = |(i, o): (usize, usize), rng: &mut dyn rand::RngCore| {
            let dist = Normal::new(0.0, (2.0 / i as f64).sqrt()).expect("valid normal");
            Array2::from_shape_fn((i, o), |_| dist.sample(rng))
        };
        let dims = config.layer_dims();
        let weights = [make(dims[0], rng), make(dims[1], rng), make(dims[2], rng)];
        let biases = dims.map(|(_, o)| Array2::zeros((1, o)));
        Self {
            config,
            weights,
            biases,
        }
    }

    pub fn zeros(config: ConnectorConfig) -> Self {
        let dims = config.layer_dims();
        Self {
            config,
            weights: dims.map(Array2::zeros),
            biases: dims.map(|(_, o)| Array2::zeros((1, o))),
        }
    }

    pub(crate) fn register(&self, params: &mut ParamSet) -> ConnectorSlots {
        let mut slots = [0; 6];
        for i in 0..3 {
            slots[2 * i] = params.push(format!("connector.fc{}.w", i + 1), self.weights[i].clone());
            slots[2 * i + 1] = params.push(format!("connector.fc{}.b", i + 1), self.biases[i].clone());
        }
        ConnectorSlots(slots)
    }
}

/// Positions of the connector tensors inside a [`ParamSet`].
#[derive(Clone, Copy, Debug)]
pub(crate) struct ConnectorSlots(pub [usize; 6]);

/// Per-row affine-ReLU-affine-ReLU-affine over `x[n x d_v]`.
pub(crate) fn connector_graph(g: &mut Graph, x: Var, w: [Var; 6]) -> Var {
    let h = g.matmul(x, w[0]);
    let h = g.add_row(h, w[1]);
    let h = g.relu(h);
    let h = g.matmul(h, w[2]);
    let h = g.add_row(h, w[3]);
    let h = g.relu(h);
    let h = g.matmul(h, w[4]);
    g.add_row(h, w[5])
}

/// Applies the connector independently to every patch of `z`.
pub fn connect(z: &VisualFeatureGrid, connector: &Connector) -> Result<VisualFeatureGrid> {
    if z.dim() != connector.config.d_v {
        return Err(Error::config(format!(
            "connector expects d_v={}, grid has {}",
            connector.config.d_v,
            z.dim()
        )));
    }
    if !z.is_finite() {
        return Err(Error::input("non-finite feature grid"));
    }
    let mut g = Graph::new();
    let x = g.constant(z.to_rows());
    let mut w = [x; 6];
    for i in 0..3 {
        w[2 * i] = g.constant(connector.weights[i].clone());
        w[2 * i + 1] = g.constant(connector.biases[i].clone());
    }
    let y = connector_graph(&mut g, x, w);
    VisualFeatureGrid::from_rows(g.value(y).clone(), z.grid())
}
