use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::layer::{Layer, ParamGrad, Shape};
use crate::tensor::{argmax, Tensor};

/// A feed-forward network: an ordered layer stack over a fixed input shape.
#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    input_dims: Vec<usize>,
    layers: Vec<Layer>,
    class_count: usize,
    /// `shapes[i]` is the input shape of layer `i`; the last entry is the
    /// network output shape.
    shapes: Vec<Shape>,
}

/// Activations recorded during a forward pass, consumed by backprop.
pub(crate) struct Trace {
    /// `acts[i]` is the input of layer `i`; `acts[len]` is the output.
    pub acts: Vec<Vec<f32>>,
    pub pool_index: Vec<Vec<usize>>,
    pub batch: usize,
}

/// Parameter gradients, one entry per layer (`None` for layers without
/// parameters).
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Option<ParamGrad>>,
}

impl Gradients {
    pub fn zeros_like(net: &Network) -> Gradients {
        Gradients {
            layers: net
                .layers
                .iter()
                .map(|l| {
                    l.params().map(|(w, b)| ParamGrad {
                        weight: vec![0.0; w.len()],
                        bias: vec![0.0; b.len()],
                    })
                })
                .collect(),
        }
    }

    pub fn is_all_zero(&self) -> bool {
        self.layers
            .iter()
            .flatten()
            .all(|g| g.weight.iter().chain(&g.bias).all(|&v| v == 0.0))
    }
}

impl Network {
    pub fn new(input_dims: Vec<usize>, layers: Vec<Layer>, class_count: usize) -> Result<Network> {
        if class_count == 0 {
            return Err(Error::input("class_count must be positive"));
        }
        let mut shape = Shape::from_dims(&input_dims)?;
        let mut shapes = vec![shape];
        for (i, layer) in layers.iter().enumerate() {
            shape = layer
                .output_shape(shape)
                .map_err(|e| Error::shape(format!("layer {i} ({}): {e}", layer.name())))?;
            shapes.push(shape);
        }
        if shape != Shape::Flat(class_count) {
            return Err(Error::shape(format!(
                "network output {shape:?} does not match class_count {class_count}"
            )));
        }
        Ok(Network {
            input_dims,
            layers,
            class_count,
            shapes,
        })
    }

    pub fn input_dims(&self) -> &[usize] {
        &self.input_dims
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    /// Input shape of each layer followed by the output shape.
    pub fn shapes(&self) -> &[Shape] {
        &self.shapes
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    /// Multiply-accumulate count for one sample, used by the simulated
    /// compute model.
    pub fn flops_per_sample(&self) -> u64 {
        let mut total = 0u64;
        for (i, layer) in self.layers.iter().enumerate() {
            total += match (layer, self.shapes[i + 1]) {
                (Layer::Dense(d), _) => (d.inputs * d.outputs) as u64,
                (Layer::Conv2d(c), Shape::Spatial { h, w, .. }) => {
                    (c.out_channels * h * w * c.in_channels * c.kernel * c.kernel) as u64
                }
                _ => self.shapes[i + 1].size() as u64,
            };
        }
        total
    }

    fn check_batch(&self, batch: &Tensor) -> Result<()> {
        if batch.dims().len() < 2 || batch.dims()[1..] != self.input_dims[..] {
            return Err(Error::shape(format!(
                "batch dims {:?} do not match [batch] ++ {:?}",
                batch.dims(),
                self.input_dims
            )));
        }
        Ok(())
    }

    pub(crate) fn trace(&self, batch: &Tensor) -> Result<Trace> {
        self.check_batch(batch)?;
        let n = batch.rows();
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        let mut pool_index = vec![Vec::new(); self.layers.len()];
        acts.push(batch.data().to_vec());
        for (i, layer) in self.layers.iter().enumerate() {
            let out = layer.forward(&acts[i], n, self.shapes[i], self.shapes[i + 1], &mut pool_index[i]);
            acts.push(out);
        }
        Ok(Trace {
            acts,
            pool_index,
            batch: n,
        })
    }

    /// Logits `[batch, class_count]` and the penultimate activations (the
    /// input of the final layer), flattened to `[batch, width]`.
    pub fn forward(&self, batch: &Tensor) -> Result<(Tensor, Tensor)> {
        let mut trace = self.trace(batch)?;
        let n = trace.batch;
        let last = self.layers.len();
        let logits = trace.acts.pop().expect("output activation");
        let feats = if last == 0 { logits.clone() } else { trace.acts.swap_remove(last - 1) };
        let width = feats.len() / n;
        Ok((
            Tensor::from_parts_unchecked(vec![n, self.class_count], logits),
            Tensor::from_parts_unchecked(vec![n, width], feats),
        ))
    }

    /// Backprop from gradients w.r.t. the logits. `feature_grad`, when given,
    /// is added to the gradient flowing into the final layer's input.
    pub(crate) fn backward(
        &self,
        trace: &Trace,
        logit_grad: Vec<f32>,
        feature_grad: Option<&[f32]>,
    ) -> Gradients {
        let mut grads = Gradients::zeros_like(self);
        let mut g = logit_grad;
        let last = self.layers.len();
        for i in (0..last).rev() {
            let layer = &self.layers[i];
            g = layer.backward(
                &trace.acts[i],
                &g,
                trace.batch,
                self.shapes[i],
                self.shapes[i + 1],
                &trace.pool_index[i],
                grads.layers[i].as_mut(),
            );
            if i + 1 == last {
                if let Some(fg) = feature_grad {
                    for (a, b) in g.iter_mut().zip(fg) {
                        *a += *b;
                    }
                }
            }
        }
        grads
    }

    /// Predicted class per row, ties resolved to the lowest class index.
    pub fn predict(&self, batch: &Tensor) -> Result<Vec<usize>> {
        let (logits, _) = self.forward(batch)?;
        Ok((0..logits.rows()).map(|i| argmax(logits.row(i))).collect())
    }

    /// Logits for every sample of a dataset, computed in chunks.
    pub fn logits_for(&self, data: &Dataset) -> Result<Tensor> {
        let mut parts = Vec::new();
        for chunk in chunk_indices(data.len(), EVAL_CHUNK) {
            let (logits, _) = self.forward(&data.samples().gather_rows(&chunk))?;
            parts.push(logits);
        }
        let refs: Vec<&Tensor> = parts.iter().collect();
        Tensor::concat_rows(&refs)
    }

    pub fn predict_dataset(&self, data: &Dataset) -> Result<Vec<usize>> {
        let logits = self.logits_for(data)?;
        Ok((0..logits.rows()).map(|i| argmax(logits.row(i))).collect())
    }

    /// Apply `params -= lr * grads` in place.
    pub(crate) fn sgd_step(&mut self, grads: &Gradients, lr: f32) {
        for (layer, g) in self.layers.iter_mut().zip(&grads.layers) {
            if let (Some((w, b)), Some(g)) = (layer.params_mut(), g) {
                for (p, d) in w.iter_mut().zip(&g.weight) {
                    *p -= lr * d;
                }
                for (p, d) in b.iter_mut().zip(&g.bias) {
                    *p -= lr * d;
                }
            }
        }
    }
}

const EVAL_CHUNK: usize = 256;

pub(crate) fn chunk_indices(n: usize, chunk: usize) -> impl Iterator<Item = Vec<usize>> {
    (0..n.div_ceil(chunk)).map(move |c| (c * chunk..((c + 1) * chunk).min(n)).collect())
}

/// Fraction of samples whose argmax prediction equals the label.
pub fn evaluate(net: &Network, data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::input("cannot evaluate on an empty dataset"));
    }
    let preds = net.predict_dataset(data)?;
    let correct = preds
        .iter()
        .zip(data.labels())
        .filter(|(p, y)| p == y)
        .count();
    Ok(correct as f64 / data.len() as f64)
}
