//! Multilayer perceptrons over compute graphs.
//!
//! The same machinery serves the three network roles: a Hamiltonian net
//! mapping state to energy, a solution net mapping time to state, and a
//! dynamics net mapping state to state derivative. Networks are plain
//! affine/activation stacks whose parameters live in leaf slots, so losses
//! can differentiate through both inputs and parameters.

use serde::{Deserialize, Serialize};

use crate::graph::{
    Bindings, ComputeGraph, EvalError, GradientRequest, GraphBuilder, GraphError, LeafId, NodeId,
    Shape, Tensor, Workspace,
};
use crate::rng;

/// Activations are at least twice continuously differentiable; the losses
/// contain second-order cross derivatives. `Square` and `Sin` exist mainly
/// because quadratic Hamiltonians and harmonic orbits can then be
/// represented exactly, which the tests exploit.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Square,
    Sin,
}

#[derive(Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct MlpConfig {
    pub input_dim: usize,
    pub output_dim: usize,
    pub hidden: Vec<usize>,
    pub activation: Activation,
}

impl MlpConfig {
    pub fn tanh(input_dim: usize, hidden: Vec<usize>, output_dim: usize) -> Self {
        MlpConfig { input_dim, output_dim, hidden, activation: Activation::Tanh }
    }

    /// Widths per layer as (fan_in, fan_out) pairs.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden.len() + 1);
        let mut prev = self.input_dim;
        for &h in &self.hidden {
            dims.push((prev, h));
            prev = h;
        }
        dims.push((prev, self.output_dim));
        dims
    }

    pub fn validate(&self) -> Result<(), NetError> {
        let zero = self.input_dim == 0
            || self.output_dim == 0
            || self.hidden.iter().any(|&h| h == 0);
        if zero {
            return Err(NetError::ZeroWidthLayer);
        }
        Ok(())
    }
}

/// One affine layer: `weight` is (fan_out x fan_in) row-major.
#[derive(Clone, PartialEq, Debug)]
pub struct Layer {
    pub weight: Tensor,
    pub bias: Tensor,
}

/// Trainable parameters of one network.
#[derive(Clone, PartialEq, Debug)]
pub struct NetworkParams {
    pub layers: Vec<Layer>,
}

impl NetworkParams {
    pub fn zeros(config: &MlpConfig) -> Self {
        let layers = config
            .layer_dims()
            .iter()
            .map(|&(fan_in, fan_out)| Layer {
                weight: Tensor::zeros(Shape::Matrix(fan_out, fan_in)),
                bias: Tensor::zeros(Shape::Vector(fan_out)),
            })
            .collect();
        NetworkParams { layers }
    }

    pub fn matches(&self, config: &MlpConfig) -> bool {
        let dims = config.layer_dims();
        self.layers.len() == dims.len()
            && self.layers.iter().zip(&dims).all(|(l, &(fi, fo))| {
                l.weight.shape() == Shape::Matrix(fo, fi) && l.bias.shape() == Shape::Vector(fo)
            })
    }

    /// Flat view of all parameter tensors, weights and biases interleaved
    /// per layer. The order matches [`MlpGraph::param_leaves`].
    pub fn tensors(&self) -> Vec<&Tensor> {
        self.layers
            .iter()
            .flat_map(|l| [&l.weight, &l.bias])
            .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| l.weight.is_finite() && l.bias.is_finite())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum NetError {
    #[error("network has a zero-width layer")]
    ZeroWidthLayer,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// Glorot-uniform weights, zero biases, deterministic per seed.
pub fn init_params(config: &MlpConfig, seed: u64) -> Result<NetworkParams, NetError> {
    use rand::Rng;
    config.validate()?;
    let mut rng = rng::role_rng(seed, "mlp-init");
    let layers = config
        .layer_dims()
        .iter()
        .map(|&(fan_in, fan_out)| {
            let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let weight = Tensor::new(
                Shape::Matrix(fan_out, fan_in),
                (0..fan_in * fan_out).map(|_| rng.gen_range(-a..=a)).collect(),
            );
            Layer { weight, bias: Tensor::zeros(Shape::Vector(fan_out)) }
        })
        .collect();
    Ok(NetworkParams { layers })
}

/// Compiled graphs for one configuration: the forward map and one derivative
/// graph per output component (rows of the input Jacobian). All graphs share
/// a single leaf table, so one `Bindings` serves them all.
pub struct MlpGraph {
    config: MlpConfig,
    graph: ComputeGraph,
    jacobian_rows: Vec<ComputeGraph>,
    weight_leaves: Vec<LeafId>,
    bias_leaves: Vec<LeafId>,
    input_leaf: LeafId,
}

impl MlpGraph {
    pub fn new(config: MlpConfig) -> Result<Self, NetError> {
        config.validate()?;
        let mut b = GraphBuilder::new();
        let input_leaf = b.leaf("input", Shape::Vector(config.input_dim));
        let leaves = declare_mlp_leaves(&mut b, "net", &config);
        let weight_leaves: Vec<LeafId> = leaves.iter().step_by(2).copied().collect();
        let bias_leaves: Vec<LeafId> = leaves.iter().skip(1).step_by(2).copied().collect();
        let input_node = b.use_leaf(input_leaf);
        let out = apply_mlp(&mut b, &config, &leaves, input_node);

        let mut outputs = vec![out];
        for i in 0..config.output_dim {
            outputs.push(b.component(out, i));
        }
        let graph = b.finish(outputs);

        let jacobian_rows = (0..config.output_dim)
            .map(|i| {
                graph.derive(&GradientRequest {
                    target: graph.outputs()[1 + i],
                    with_respect_to: vec![input_leaf],
                })
            })
            .collect::<Result<Vec<_>, _>>()?;

        Ok(MlpGraph { config, graph, jacobian_rows, weight_leaves, bias_leaves, input_leaf })
    }

    pub fn config(&self) -> &MlpConfig {
        &self.config
    }

    /// The underlying forward graph; output 0 is the full output vector.
    pub fn graph(&self) -> &ComputeGraph {
        &self.graph
    }

    /// Derivative graph of output component `i` with respect to the input.
    pub fn jacobian_row(&self, i: usize) -> &ComputeGraph {
        &self.jacobian_rows[i]
    }

    pub fn input_leaf(&self) -> LeafId {
        self.input_leaf
    }

    /// Parameter leaves in `NetworkParams::tensors` order.
    pub fn param_leaves(&self) -> Vec<LeafId> {
        self.weight_leaves
            .iter()
            .zip(&self.bias_leaves)
            .flat_map(|(&w, &b)| [w, b])
            .collect()
    }

    pub fn leaf_count(&self) -> usize {
        self.graph.leaves().len()
    }

    /// Bindings with all parameters bound; the input remains to be bound.
    pub fn bind_params<'a>(&self, params: &'a NetworkParams) -> Result<Bindings<'a>, NetError> {
        if !params.matches(&self.config) {
            return Err(NetError::ShapeMismatch(
                "parameters do not match the network configuration".into(),
            ));
        }
        let mut b = Bindings::new(self.leaf_count());
        for (leaf, tensor) in self.param_leaves().into_iter().zip(params.tensors()) {
            b.bind(leaf, tensor);
        }
        Ok(b)
    }

    pub fn forward_into(
        &self,
        params: &NetworkParams,
        input: &Tensor,
        ws: &mut Workspace,
    ) -> Result<Vec<f64>, NetError> {
        let mut b = self.bind_params(params)?;
        b.bind(self.input_leaf, input);
        self.graph.evaluate_into(&b, ws)?;
        Ok(ws.output(&self.graph, 0).to_vec())
    }

    pub fn jacobian_into(
        &self,
        params: &NetworkParams,
        input: &Tensor,
        ws: &mut Workspace,
    ) -> Result<Vec<Vec<f64>>, NetError> {
        let mut b = self.bind_params(params)?;
        b.bind(self.input_leaf, input);
        self.jacobian_rows
            .iter()
            .map(|row| {
                row.evaluate_into(&b, ws)?;
                Ok(ws.output(row, 0).to_vec())
            })
            .collect()
    }
}

/// Declare the parameter leaf slots of one network, interleaved per layer as
/// `[w0, b0, w1, b1, ...]` to match [`NetworkParams::tensors`].
pub fn declare_mlp_leaves(b: &mut GraphBuilder, prefix: &str, config: &MlpConfig) -> Vec<LeafId> {
    let mut leaves = Vec::new();
    for (i, &(fan_in, fan_out)) in config.layer_dims().iter().enumerate() {
        leaves.push(b.leaf(format!("{prefix}/w{i}"), Shape::Matrix(fan_out, fan_in)));
        leaves.push(b.leaf(format!("{prefix}/b{i}"), Shape::Vector(fan_out)));
    }
    leaves
}

/// Append the forward pass of a network to `b`, reading parameters from
/// `param_leaves` (in [`declare_mlp_leaves`] order) and taking `input` as an
/// arbitrary vector node. Returns the output node.
pub fn apply_mlp(
    b: &mut GraphBuilder,
    config: &MlpConfig,
    param_leaves: &[LeafId],
    input: NodeId,
) -> NodeId {
    let dims = config.layer_dims();
    assert_eq!(param_leaves.len(), 2 * dims.len(), "leaf count mismatch");
    let mut x = input;
    for i in 0..dims.len() {
        let w = b.use_leaf(param_leaves[2 * i]);
        let bias = b.use_leaf(param_leaves[2 * i + 1]);
        let a = b.matvec(w, x);
        x = b.add(a, bias);
        if i + 1 < dims.len() {
            x = match config.activation {
                Activation::Tanh => b.tanh(x),
                Activation::Square => b.square(x),
                Activation::Sin => b.sin(x),
            };
        }
    }
    x
}

/// Evaluate the network at one input.
pub fn forward(config: &MlpConfig, params: &NetworkParams, input: &[f64]) -> Result<Vec<f64>, NetError> {
    if input.len() != config.input_dim {
        return Err(NetError::ShapeMismatch(format!(
            "input length {} does not match input_dim {}",
            input.len(),
            config.input_dim
        )));
    }
    let mlp = MlpGraph::new(config.clone())?;
    let mut ws = Workspace::new();
    mlp.forward_into(params, &Tensor::vector(input.to_vec()), &mut ws)
}

/// Jacobian of the network output with respect to its input, one row per
/// output component. Rows come from derived graphs, so any scalar function
/// of them remains differentiable with respect to the parameters.
pub fn input_jacobian(
    config: &MlpConfig,
    params: &NetworkParams,
    input: &[f64],
) -> Result<Vec<Vec<f64>>, NetError> {
    if input.len() != config.input_dim {
        return Err(NetError::ShapeMismatch(format!(
            "input length {} does not match input_dim {}",
            input.len(),
            config.input_dim
        )));
    }
    let mlp = MlpGraph::new(config.clone())?;
    let mut ws = Workspace::new();
    mlp.jacobian_into(params, &Tensor::vector(input.to_vec()), &mut ws)
}

/// A configuration/parameters pair for one network role.
#[derive(Clone, PartialEq, Debug)]
pub struct Network {
    pub config: MlpConfig,
    pub params: NetworkParams,
}

impl Network {
    pub fn new(config: MlpConfig, params: NetworkParams) -> Result<Self, NetError> {
        config.validate()?;
        if !params.matches(&config) {
            return Err(NetError::ShapeMismatch(
                "parameters do not match the network configuration".into(),
            ));
        }
        Ok(Network { config, params })
    }

    pub fn init(config: MlpConfig, seed: u64) -> Result<Self, NetError> {
        let params = init_params(&config, seed)?;
        Ok(Network { config, params })
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>, NetError> {
        forward(&self.config, &self.params, input)
    }

    pub fn input_jacobian(&self, input: &[f64]) -> Result<Vec<Vec<f64>>, NetError> {
        input_jacobian(&self.config, &self.params, input)
    }
}

/// A Hamiltonian network viewed through the [`Hamiltonian`] trait, so the
/// integrators can roll out a learned energy exactly like an analytic one.
/// Gradients come from the network's input-derivative graph.
pub struct LearnedHamiltonian {
    net: Network,
    mlp: MlpGraph,
    ws_energy: std::cell::RefCell<Workspace>,
    ws_grad: std::cell::RefCell<Workspace>,
}

use crate::systems::{Hamiltonian, PhaseState, SystemError};

impl LearnedHamiltonian {
    pub fn new(net: Network) -> Result<Self, NetError> {
        if net.config.input_dim % 2 != 0 || net.config.output_dim != 1 {
            return Err(NetError::ShapeMismatch(
                "a Hamiltonian network maps 2d state coordinates to one energy".into(),
            ));
        }
        let mlp = MlpGraph::new(net.config.clone())?;
        Ok(LearnedHamiltonian {
            net,
            mlp,
            ws_energy: std::cell::RefCell::new(Workspace::new()),
            ws_grad: std::cell::RefCell::new(Workspace::new()),
        })
    }

    pub fn network(&self) -> &Network {
        &self.net
    }
}

impl Hamiltonian for LearnedHamiltonian {
    fn dof(&self) -> usize {
        self.net.config.input_dim / 2
    }

    fn energy(&self, state: &PhaseState) -> Result<f64, SystemError> {
        if state.dof() != self.dof() {
            return Err(SystemError::DimensionMismatch { expected: self.dof(), got: state.dof() });
        }
        let input = Tensor::vector(state.flat());
        let out = self
            .mlp
            .forward_into(&self.net.params, &input, &mut self.ws_energy.borrow_mut())
            .map_err(|e| SystemError::Model(e.to_string()))?;
        Ok(out[0])
    }

    fn gradient(&self, state: &PhaseState) -> Result<(Vec<f64>, Vec<f64>), SystemError> {
        if state.dof() != self.dof() {
            return Err(SystemError::DimensionMismatch { expected: self.dof(), got: state.dof() });
        }
        let input = Tensor::vector(state.flat());
        let mut ws = self.ws_grad.borrow_mut();
        let mut bindings = self
            .mlp
            .bind_params(&self.net.params)
            .map_err(|e| SystemError::Model(e.to_string()))?;
        bindings.bind(self.mlp.input_leaf(), &input);
        self.mlp
            .jacobian_row(0)
            .evaluate_into(&bindings, &mut ws)
            .map_err(|e| SystemError::Model(e.to_string()))?;
        let grad = ws.output(self.mlp.jacobian_row(0), 0);
        let d = self.dof();
        Ok((grad[..d].to_vec(), grad[d..].to_vec()))
    }
}

/// Serialized form of one network: config plus row-major layer arrays,
/// floats written with 17 significant digits so values round-trip bit-exactly.
#[derive(Serialize, Deserialize)]
pub struct NetworkFile {
    pub config: MlpConfig,
    pub layers: Vec<LayerFile>,
}

#[derive(Serialize, Deserialize)]
pub struct LayerFile {
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Decimal with 17 significant digits; parses back to the identical f64.
pub fn fmt_f64(x: f64) -> String {
    format!("{:.16e}", x)
}

fn json_array(values: &[f64]) -> String {
    let parts: Vec<String> = values.iter().map(|&v| fmt_f64(v)).collect();
    format!("[{}]", parts.join(","))
}

/// JSON text for one network, `{"config":...,"layers":[...]}`.
pub fn network_to_json(config: &MlpConfig, params: &NetworkParams) -> String {
    let config_json = serde_json::to_string(config).expect("config serializes");
    let layers: Vec<String> = params
        .layers
        .iter()
        .map(|l| {
            format!(
                "{{\"weight\":{},\"bias\":{}}}",
                json_array(l.weight.data()),
                json_array(l.bias.data())
            )
        })
        .collect();
    format!("{{\"config\":{},\"layers\":[{}]}}", config_json, layers.join(","))
}

pub fn network_from_value(v: &serde_json::Value) -> Result<(MlpConfig, NetworkParams), NetError> {
    let file: NetworkFile = serde_json::from_value(v.clone())
        .map_err(|e| NetError::ShapeMismatch(format!("malformed network JSON: {e}")))?;
    let dims = file.config.layer_dims();
    if file.layers.len() != dims.len() {
        return Err(NetError::ShapeMismatch(format!(
            "expected {} layers, found {}",
            dims.len(),
            file.layers.len()
        )));
    }
    let mut layers = Vec::with_capacity(dims.len());
    for (i, (layer, &(fan_in, fan_out))) in file.layers.iter().zip(&dims).enumerate() {
        if layer.weight.len() != fan_in * fan_out || layer.bias.len() != fan_out {
            return Err(NetError::ShapeMismatch(format!(
                "layer {i}: expected {}x{} weight and {} bias, found {} and {}",
                fan_out,
                fan_in,
                fan_out,
                layer.weight.len(),
                layer.bias.len()
            )));
        }
        layers.push(Layer {
            weight: Tensor::matrix(fan_out, fan_in, layer.weight.clone()),
            bias: Tensor::vector(layer.bias.clone()),
        });
    }
    Ok((file.config, NetworkParams { layers }))
}

/// Hand-built networks representing benchmark quantities exactly; used by
/// tests that need zero model error.
#[cfg(test)]
pub(crate) mod test_support {
    use super::*;

    /// H(q, p) = q^2 + p^2 (the default mass-spring energy) represented
    /// exactly: identity first layer, square activation, summing second layer.
    pub fn exact_spring_hamiltonian() -> Network {
        let config = MlpConfig {
            input_dim: 2,
            output_dim: 1,
            hidden: vec![2],
            activation: Activation::Square,
        };
        let mut params = NetworkParams::zeros(&config);
        params.layers[0].weight = Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]);
        params.layers[1].weight = Tensor::matrix(1, 2, vec![1.0, 1.0]);
        Network::new(config, params).expect("consistent")
    }

    /// s(t) = (cos 2t, -sin 2t), the mass-spring orbit from (1, 0), built
    /// exactly from a sine layer: sin(2t + pi/2) = cos 2t.
    pub fn exact_spring_orbit() -> Network {
        let config = MlpConfig {
            input_dim: 1,
            output_dim: 2,
            hidden: vec![2],
            activation: Activation::Sin,
        };
        let mut params = NetworkParams::zeros(&config);
        params.layers[0].weight = Tensor::matrix(2, 1, vec![2.0, 2.0]);
        params.layers[0].bias = Tensor::vector(vec![std::f64::consts::FRAC_PI_2, 0.0]);
        params.layers[1].weight = Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, -1.0]);
        Network::new(config, params).expect("consistent")
    }

    /// s(t) = (t, 0) as a bare affine layer.
    pub fn linear_ramp_solution() -> Network {
        let config = MlpConfig::tanh(1, vec![], 2);
        let mut params = NetworkParams::zeros(&config);
        params.layers[0].weight = Tensor::matrix(2, 1, vec![1.0, 0.0]);
        Network::new(config, params).expect("consistent")
    }

    /// A constant-output network of the given dimensions.
    pub fn constant_network(input_dim: usize, output: Vec<f64>) -> Network {
        let config = MlpConfig::tanh(input_dim, vec![], output.len());
        let mut params = NetworkParams::zeros(&config);
        params.layers[0].bias = Tensor::vector(output);
        Network::new(config, params).expect("consistent")
    }
}
