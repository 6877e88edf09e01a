//! A small static layer graph: named activation slots, nodes in topological
//! order, and a parameter table with tie groups.

use std::collections::{BTreeMap, HashMap};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::layers::{self, ArgmaxMap, LayerSpec};
use crate::optim::ParamTensor;
use crate::tensor::{Real, Tensor};

pub type SlotId = usize;
pub type ParamId = usize;

/// A named activation with its per-sample shape (batch axis excluded).
#[derive(Debug, Clone, PartialEq)]
pub struct Slot {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub name: String,
    pub layer: LayerSpec,
    pub inputs: Vec<SlotId>,
    pub output: SlotId,
    /// `[weight, bias]` for conv and fc, empty otherwise.
    pub params: Vec<ParamId>,
}

/// One row of a per-layer shape trace.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub node: String,
    pub layer: LayerSpec,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone)]
struct Cache<T: Real> {
    values: Vec<Option<Tensor<T>>>,
    argmax: Vec<Option<ArgmaxMap>>,
}

#[derive(Debug, Clone)]
pub struct Graph<T: Real = f32> {
    slots: Vec<Slot>,
    inputs: Vec<SlotId>,
    nodes: Vec<Node>,
    params: Vec<ParamTensor<T>>,
    output: SlotId,
    cache: Option<Cache<T>>,
    input_grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Graph<T> {
    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn slots(&self) -> &[Slot] {
        &self.slots
    }

    pub fn input_slots(&self) -> &[SlotId] {
        &self.inputs
    }

    pub fn output_shape(&self) -> &[usize] {
        &self.slots[self.output].shape
    }

    pub fn params(&self) -> &[ParamTensor<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [ParamTensor<T>] {
        &mut self.params
    }

    pub fn param(&self, name: &str) -> Option<&ParamTensor<T>> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut ParamTensor<T>> {
        self.params.iter_mut().find(|p| p.name == name)
    }

    /// Trainable scalars, counting each tie group once.
    pub fn param_count(&self) -> usize {
        let mut seen = std::collections::HashSet::new();
        self.params
            .iter()
            .filter(|p| match &p.tie_group {
                Some(g) => seen.insert(g.clone()),
                None => true,
            })
            .map(|p| p.value.len())
            .sum()
    }

    /// Tie groups with their member parameter ids, in id order.
    pub fn tie_groups(&self) -> BTreeMap<String, Vec<ParamId>> {
        let mut groups: BTreeMap<String, Vec<ParamId>> = BTreeMap::new();
        for (id, p) in self.params.iter().enumerate() {
            if let Some(g) = &p.tie_group {
                groups.entry(g.clone()).or_default().push(id);
            }
        }
        groups
    }

    /// Output shape of every node, in execution order.
    pub fn trace(&self) -> Vec<TraceRow> {
        self.nodes
            .iter()
            .map(|n| TraceRow {
                node: n.name.clone(),
                layer: n.layer,
                shape: self.slots[n.output].shape.clone(),
            })
            .collect()
    }

    /// Cached activation of the named slot from the last forward pass.
    pub fn value(&self, slot_name: &str) -> Option<&Tensor<T>> {
        let id = self.slots.iter().position(|s| s.name == slot_name)?;
        self.cache.as_ref()?.values[id].as_ref()
    }

    /// Gradient with respect to graph input `index` from the last backward
    /// pass that requested input gradients.
    pub fn input_grad(&self, index: usize) -> Option<&Tensor<T>> {
        self.input_grads.get(index)?.as_ref()
    }

    pub fn zero_grads(&mut self) {
        self.params.iter_mut().for_each(ParamTensor::zero_grad);
    }

    pub fn forward(&mut self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
        if inputs.len() != self.inputs.len() {
            return Err(Error::invalid(format!(
                "graph expects {} input(s), got {}",
                self.inputs.len(),
                inputs.len()
            )));
        }
        let batch = inputs.first().map(|t| t.batch()).unwrap_or(0);
        let mut values: Vec<Option<Tensor<T>>> = vec![None; self.slots.len()];
        for (&slot, &x) in self.inputs.iter().zip(inputs) {
            let mut want = vec![batch];
            want.extend_from_slice(&self.slots[slot].shape);
            if x.shape() != want {
                return Err(Error::shape(
                    "forward",
                    format!("input `{}`", self.slots[slot].name),
                    format!("{want:?}"),
                    format!("{:?}", x.shape()),
                ));
            }
            values[slot] = Some(x.clone());
        }
        let mut argmax = vec![None; self.nodes.len()];
        for (i, node) in self.nodes.iter().enumerate() {
            let args: Vec<&Tensor<T>> = node
                .inputs
                .iter()
                .map(|&s| values[s].as_ref().expect("topological order"))
                .collect();
            let p = |k: usize| &self.params[node.params[k]].value;
            let y = match node.layer {
                LayerSpec::Conv { stride, pad, .. } => {
                    layers::conv2d_forward(args[0], p(0), p(1), stride, pad)?
                }
                LayerSpec::MaxPool => {
                    let (y, map) = layers::maxpool_forward(args[0])?;
                    argmax[i] = Some(map);
                    y
                }
                LayerSpec::Relu => layers::relu_forward(args[0]),
                LayerSpec::Fc { .. } => layers::fc_forward(args[0], p(0), p(1))?,
                LayerSpec::Flatten => layers::flatten(args[0])?,
                LayerSpec::ConcatChannels => layers::concat_channels(args[0], args[1])?,
                LayerSpec::Blend { alpha, beta } => {
                    layers::blend(args[0], args[1], T::lit(alpha), T::lit(beta))?
                }
            };
            values[node.output] = Some(y);
        }
        let out = values[self.output].clone().expect("output computed");
        self.cache = Some(Cache { values, argmax });
        Ok(out)
    }

    /// Backpropagates `grad_output`, accumulating every parameter's own
    /// gradient, then sums gradients within each tie group.
    pub fn backward(&mut self, grad_output: &Tensor<T>) -> Result<()> {
        self.backward_per_use(grad_output, false)?;
        self.sync_tied_grads();
        Ok(())
    }

    /// Backpropagation without tie-group reduction: each tied parameter holds
    /// only the contribution of its own position in the graph.
    pub fn backward_per_use(&mut self, grad_output: &Tensor<T>, input_grads: bool) -> Result<()> {
        let cache = self.cache.as_ref().ok_or(Error::BackwardBeforeForward)?;
        let out_val = cache.values[self.output].as_ref().expect("output cached");
        if grad_output.shape() != out_val.shape() {
            return Err(Error::shape(
                "backward",
                "grad_output",
                format!("{:?}", out_val.shape()),
                format!("{:?}", grad_output.shape()),
            ));
        }
        let is_input: Vec<bool> = (0..self.slots.len())
            .map(|s| self.inputs.contains(&s))
            .collect();
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; self.slots.len()];
        grads[self.output] = Some(grad_output.clone());

        let accumulate =
            |grads: &mut Vec<Option<Tensor<T>>>, slot: SlotId, g: Tensor<T>| match &mut grads[slot]
            {
                Some(acc) => acc.add_assign(&g).expect("same slot shape"),
                None => grads[slot] = Some(g),
            };

        for (i, node) in self.nodes.iter().enumerate().rev() {
            let Some(gy) = grads[node.output].take() else {
                continue;
            };
            let x = |k: usize| cache.values[node.inputs[k]].as_ref().expect("cached input");
            let need = |k: usize| input_grads || !is_input[node.inputs[k]];
            match node.layer {
                LayerSpec::Conv { stride, pad, .. } => {
                    let (wid, bid) = (node.params[0], node.params[1]);
                    let g = layers::conv2d_backward_opt(
                        &gy,
                        x(0),
                        &self.params[wid].value,
                        stride,
                        pad,
                        need(0),
                    )?;
                    self.params[wid].grad.add_assign(&g.weights)?;
                    self.params[bid].grad.add_assign(&g.bias)?;
                    if let Some(gx) = g.input {
                        accumulate(&mut grads, node.inputs[0], gx);
                    }
                }
                LayerSpec::MaxPool => {
                    let map = cache.argmax[i].as_ref().expect("argmax cached");
                    let gx = layers::maxpool_backward(&gy, map, x(0).shape())?;
                    accumulate(&mut grads, node.inputs[0], gx);
                }
                LayerSpec::Relu => {
                    // relu(x) > 0 exactly where x > 0, so the output gates as well
                    let gx =
                        layers::relu_backward(&gy, cache.values[node.output].as_ref().unwrap())?;
                    accumulate(&mut grads, node.inputs[0], gx);
                }
                LayerSpec::Fc { .. } => {
                    let (wid, bid) = (node.params[0], node.params[1]);
                    let g = layers::fc_backward(&gy, x(0), &self.params[wid].value)?;
                    self.params[wid].grad.add_assign(&g.weights)?;
                    self.params[bid].grad.add_assign(&g.bias)?;
                    if need(0) {
                        accumulate(&mut grads, node.inputs[0], g.input);
                    }
                }
                LayerSpec::Flatten => {
                    let gx = gy.reshape(x(0).shape())?;
                    accumulate(&mut grads, node.inputs[0], gx);
                }
                LayerSpec::ConcatChannels => {
                    let split = x(0).shape()[1];
                    let (ga, gb) = layers::split_channels(&gy, split)?;
                    if need(0) {
                        accumulate(&mut grads, node.inputs[0], ga);
                    }
                    if need(1) {
                        accumulate(&mut grads, node.inputs[1], gb);
                    }
                }
                LayerSpec::Blend { alpha, beta } => {
                    let (ga, gb) = layers::blend_backward(&gy, T::lit(alpha), T::lit(beta));
                    if need(0) {
                        accumulate(&mut grads, node.inputs[0], ga);
                    }
                    if need(1) {
                        accumulate(&mut grads, node.inputs[1], gb);
                    }
                }
            }
        }
        self.input_grads = if input_grads {
            self.inputs.iter().map(|&s| grads[s].take()).collect()
        } else {
            Vec::new()
        };
        Ok(())
    }

    /// Replaces each tied parameter's gradient by the sum over its group
    /// (accumulated in parameter-id order).
    pub fn sync_tied_grads(&mut self) {
        for members in self.tie_groups().values() {
            let mut total = self.params[members[0]].grad.clone();
            for &id in &members[1..] {
                total
                    .add_assign(&self.params[id].grad)
                    .expect("tied params share a shape");
            }
            for &id in members {
                self.params[id].grad = total.clone();
            }
        }
    }
}

/// Incremental graph construction. Weights start as `N(0, 1/fan_in)` from a
/// seeded generator, biases at zero.
pub struct GraphBuilder<T: Real> {
    slots: Vec<Slot>,
    inputs: Vec<SlotId>,
    nodes: Vec<Node>,
    params: Vec<ParamTensor<T>>,
    by_name: HashMap<String, usize>,
    rng: ChaCha8Rng,
}

impl<T: Real> GraphBuilder<T> {
    pub fn new(seed: u64) -> Self {
        Self {
            slots: Vec::new(),
            inputs: Vec::new(),
            nodes: Vec::new(),
            params: Vec::new(),
            by_name: HashMap::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn input(&mut self, name: &str, shape: &[usize]) -> SlotId {
        let id = self.slots.len();
        self.slots.push(Slot {
            name: name.to_owned(),
            shape: shape.to_vec(),
        });
        self.inputs.push(id);
        id
    }

    pub fn shape(&self, slot: SlotId) -> &[usize] {
        &self.slots[slot].shape
    }

    /// Adds a node with freshly initialized parameters.
    pub fn layer(&mut self, name: &str, layer: LayerSpec, inputs: &[SlotId]) -> Result<SlotId> {
        self.add(name, layer, inputs, None)
    }

    /// Adds a node whose parameters are tied to those of node `tie_to`.
    pub fn layer_tied(
        &mut self,
        name: &str,
        layer: LayerSpec,
        inputs: &[SlotId],
        tie_to: &str,
    ) -> Result<SlotId> {
        self.add(name, layer, inputs, Some(tie_to))
    }

    fn add(
        &mut self,
        name: &str,
        layer: LayerSpec,
        inputs: &[SlotId],
        tie_to: Option<&str>,
    ) -> Result<SlotId> {
        layer.validate()?;
        if self.by_name.contains_key(name) {
            return Err(Error::invalid(format!("duplicate node name `{name}`")));
        }
        let in_shapes: Vec<&[usize]> = inputs
            .iter()
            .map(|&s| self.slots[s].shape.as_slice())
            .collect();
        let out_shape = layer.output_shape(&in_shapes)?;
        let param_shapes: Vec<Vec<usize>> = match layer {
            LayerSpec::Conv {
                out_channels,
                kernel,
                ..
            } => vec![
                vec![out_channels, in_shapes[0][0], kernel, kernel],
                vec![out_channels],
            ],
            LayerSpec::Fc { out_units } => vec![vec![out_units, in_shapes[0][0]], vec![out_units]],
            _ => Vec::new(),
        };

        let mut param_ids = Vec::new();
        match tie_to {
            Some(src) => {
                let &src_idx = self
                    .by_name
                    .get(src)
                    .ok_or_else(|| Error::invalid(format!("tie target `{src}` not found")))?;
                let src_params = self.nodes[src_idx].params.clone();
                if src_params.len() != param_shapes.len() {
                    return Err(Error::invalid(format!("cannot tie `{name}` to `{src}`")));
                }
                for (k, (&sid, want)) in src_params.iter().zip(&param_shapes).enumerate() {
                    if self.params[sid].value.shape() != want.as_slice() {
                        return Err(Error::shape(
                            "tie",
                            format!("`{name}` param {k}"),
                            format!("{:?}", self.params[sid].value.shape()),
                            format!("{want:?}"),
                        ));
                    }
                    let src_param = &mut self.params[sid];
                    let group = match &src_param.tie_group {
                        Some(g) => g.clone(),
                        None => {
                            src_param.tie_group = Some(src_param.name.clone());
                            src_param.name.clone()
                        }
                    };
                    let suffix = if k == 0 { "weight" } else { "bias" };
                    let p = ParamTensor::new(
                        format!("{name}.{suffix}"),
                        self.params[sid].value.clone(),
                    )
                    .tied(group);
                    param_ids.push(self.params.len());
                    self.params.push(p);
                }
            }
            None => {
                for (k, shape) in param_shapes.iter().enumerate() {
                    let value = if k == 0 {
                        let fan_in: usize = shape[1..].iter().product();
                        Tensor::randn(shape, (1.0 / fan_in as f64).sqrt(), &mut self.rng)
                    } else {
                        Tensor::zeros(shape)
                    };
                    let suffix = if k == 0 { "weight" } else { "bias" };
                    param_ids.push(self.params.len());
                    self.params
                        .push(ParamTensor::new(format!("{name}.{suffix}"), value));
                }
            }
        }

        let out = self.slots.len();
        self.slots.push(Slot {
            name: name.to_owned(),
            shape: out_shape,
        });
        self.by_name.insert(name.to_owned(), self.nodes.len());
        self.nodes.push(Node {
            name: name.to_owned(),
            layer,
            inputs: inputs.to_vec(),
            output: out,
            params: param_ids,
        });
        Ok(out)
    }

    pub fn finish(self, output: SlotId) -> Graph<T> {
        Graph {
            slots: self.slots,
            inputs: self.inputs,
            nodes: self.nodes,
            params: self.params,
            output,
            cache: None,
            input_grads: Vec::new(),
        }
    }
}
