//! Architecture descriptors: the per-layer `(type, kernel, stride, padding,
//! outputs)` state, shrink/remove actions over it, and realization back
//! into a trainable [`Network`].

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::{conv_output_hw, serialize, Conv2d, Dense, Layer, Network, Shape};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LayerKind {
    Conv,
    Dense,
    Pool,
    Relu,
    Flatten,
}

impl LayerKind {
    pub const ALL: [LayerKind; 5] = [
        LayerKind::Conv,
        LayerKind::Dense,
        LayerKind::Pool,
        LayerKind::Relu,
        LayerKind::Flatten,
    ];

    pub fn is_parametric(self) -> bool {
        matches!(self, LayerKind::Conv | LayerKind::Dense)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            LayerKind::Conv => "conv",
            LayerKind::Dense => "dense",
            LayerKind::Pool => "pool",
            LayerKind::Relu => "relu",
            LayerKind::Flatten => "flatten",
        }
    }
}

impl FromStr for LayerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LayerKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::input(format!("unknown layer type {s:?}")))
    }
}

/// One layer's descriptor. Pool layers are always the fixed 2x2/stride-2
/// window and describe as `pool 2 2 0 0`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub outputs: usize,
}

impl LayerSpec {
    pub fn conv(kernel: usize, stride: usize, padding: usize, outputs: usize) -> LayerSpec {
        LayerSpec {
            kind: LayerKind::Conv,
            kernel,
            stride,
            padding,
            outputs,
        }
    }

    pub fn dense(outputs: usize) -> LayerSpec {
        LayerSpec {
            kind: LayerKind::Dense,
            kernel: 0,
            stride: 0,
            padding: 0,
            outputs,
        }
    }

    pub fn pool() -> LayerSpec {
        LayerSpec {
            kind: LayerKind::Pool,
            kernel: 2,
            stride: 2,
            padding: 0,
            outputs: 0,
        }
    }

    pub fn relu() -> LayerSpec {
        LayerSpec::bare(LayerKind::Relu)
    }

    pub fn flatten() -> LayerSpec {
        LayerSpec::bare(LayerKind::Flatten)
    }

    fn bare(kind: LayerKind) -> LayerSpec {
        LayerSpec {
            kind,
            kernel: 0,
            stride: 0,
            padding: 0,
            outputs: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match self.kind {
            LayerKind::Conv => self.kernel >= 1 && self.stride >= 1 && self.outputs >= 1,
            LayerKind::Dense => self.outputs >= 1 && self.kernel == 0 && self.stride == 0 && self.padding == 0,
            LayerKind::Pool => *self == LayerSpec::pool(),
            LayerKind::Relu | LayerKind::Flatten => *self == LayerSpec::bare(self.kind),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::input(format!("invalid layer descriptor {self}")))
        }
    }

    /// Scale by a pool coefficient in `(0, 1)`. Parametric fields are
    /// rounded to nearest with a floor of 1 on kernel, stride and outputs;
    /// non-parametric layers are returned unchanged.
    fn shrink(&self, phi: f64) -> LayerSpec {
        if !self.kind.is_parametric() {
            return *self;
        }
        let scale = |v: usize| (v as f64 * phi).round() as usize;
        let at_least_one = |v: usize| scale(v).max(1);
        match self.kind {
            LayerKind::Conv => LayerSpec::conv(
                at_least_one(self.kernel),
                at_least_one(self.stride),
                scale(self.padding),
                at_least_one(self.outputs),
            ),
            _ => LayerSpec::dense(at_least_one(self.outputs)),
        }
    }
}

impl fmt::Display for LayerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {} {} {} {}",
            self.kind.as_str(),
            self.kernel,
            self.stride,
            self.padding,
            self.outputs
        )
    }
}

impl FromStr for LayerSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split_whitespace().collect();
        let kind: LayerKind = parts
            .first()
            .ok_or_else(|| Error::input("empty layer line"))?
            .parse()?;
        let spec = match parts.len() {
            1 => match kind {
                LayerKind::Pool => LayerSpec::pool(),
                LayerKind::Relu | LayerKind::Flatten => LayerSpec::bare(kind),
                _ => return Err(Error::input(format!("{s:?}: {} needs `k d p o`", kind.as_str()))),
            },
            2 if kind == LayerKind::Dense => LayerSpec::dense(
                parts[1]
                    .parse()
                    .map_err(|_| Error::input(format!("{s:?}: bad number {:?}", parts[1])))?,
            ),
            5 => {
                let n = |i: usize| -> Result<usize> {
                    parts[i]
                        .parse()
                        .map_err(|_| Error::input(format!("{s:?}: bad number {:?}", parts[i])))
                };
                LayerSpec {
                    kind,
                    kernel: n(1)?,
                    stride: n(2)?,
                    padding: n(3)?,
                    outputs: n(4)?,
                }
            }
            _ => return Err(Error::input(format!("{s:?}: expected `type k d p o`"))),
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// Width of [`encode_state`] output.
pub const STATE_WIDTH: usize = 9;
pub const KERNEL_CAP: f64 = 11.0;
pub const STRIDE_CAP: f64 = 4.0;
pub const PADDING_CAP: f64 = 5.0;
pub const OUTPUTS_CAP: f64 = 512.0;

/// One-hot layer type (conv, dense, pool, relu, flatten) followed by
/// kernel/11, stride/4, padding/5 and outputs/512, each clamped to 1.
pub fn encode_state(layer: &LayerSpec) -> Vec<f64> {
    let mut v = vec![0.0; STATE_WIDTH];
    let slot = LayerKind::ALL.iter().position(|&k| k == layer.kind).expect("known kind");
    v[slot] = 1.0;
    let caps = [KERNEL_CAP, STRIDE_CAP, PADDING_CAP, OUTPUTS_CAP];
    let vals = [layer.kernel, layer.stride, layer.padding, layer.outputs];
    for (i, (val, cap)) in vals.iter().zip(caps).enumerate() {
        v[5 + i] = (*val as f64 / cap).min(1.0);
    }
    v
}

/// The shrink coefficients available to the policy.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ActionPool;

impl ActionPool {
    pub const COEFFICIENTS: [f64; 6] = [0.0, 0.2, 0.4, 0.6, 0.8, 1.0];
    pub const SIZE: usize = 6;
    pub const KEEP: usize = 5;
    pub const REMOVE: usize = 0;

    pub fn coefficient(index: usize) -> Result<f64> {
        Self::COEFFICIENTS
            .get(index)
            .copied()
            .ok_or_else(|| Error::input(format!("action index {index} outside the pool")))
    }

    pub fn index_of(phi: f64) -> Result<usize> {
        Self::COEFFICIENTS
            .iter()
            .position(|&c| c == phi)
            .ok_or_else(|| Error::input(format!("coefficient {phi} is not in the pool")))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ModelSpec {
    pub layers: Vec<LayerSpec>,
    pub input_dims: Vec<usize>,
    pub class_count: usize,
}

/// Result of applying one action.
#[derive(Clone, Debug, PartialEq)]
pub struct ActionOutcome {
    pub spec: ModelSpec,
    /// The action would have removed or resized the classifier head and was
    /// replaced by "keep".
    pub coerced: bool,
}

impl ModelSpec {
    pub fn new(layers: Vec<LayerSpec>, input_dims: Vec<usize>, class_count: usize) -> Result<ModelSpec> {
        let spec = ModelSpec {
            layers,
            input_dims,
            class_count,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::input("model spec has no layers"));
        }
        Shape::from_dims(&self.input_dims)?;
        for l in &self.layers {
            l.validate()?;
        }
        let head = self
            .head_index()
            .ok_or_else(|| Error::input("model spec has no dense classifier head"))?;
        if self.layers[head].outputs != self.class_count {
            return Err(Error::input(format!(
                "head outputs {} != class_count {}",
                self.layers[head].outputs, self.class_count
            )));
        }
        Ok(())
    }

    /// Index of the protected classifier head: the last parametric layer,
    /// when it is dense.
    pub fn head_index(&self) -> Option<usize> {
        let i = self.layers.iter().rposition(|l| l.kind.is_parametric())?;
        (self.layers[i].kind == LayerKind::Dense).then_some(i)
    }

    /// Apply coefficient `phi` to layer `t`: 0 removes it, 1 keeps it, other
    /// values shrink parametric layers. The head is never removed or resized.
    pub fn apply_action(&self, t: usize, phi: f64) -> Result<ActionOutcome> {
        ActionPool::index_of(phi)?;
        if t >= self.layers.len() {
            return Err(Error::input(format!("layer index {t} out of range ({} layers)", self.layers.len())));
        }
        let mut spec = self.clone();
        if phi == 1.0 {
            return Ok(ActionOutcome { spec, coerced: false });
        }
        if Some(t) == self.head_index() {
            return Ok(ActionOutcome { spec, coerced: true });
        }
        if phi == 0.0 {
            spec.layers.remove(t);
        } else {
            spec.layers[t] = spec.layers[t].shrink(phi);
        }
        Ok(ActionOutcome { spec, coerced: false })
    }

    /// Apply one pool index per layer. Returns the resulting spec and a
    /// per-layer flag marking coerced actions.
    pub fn apply_actions(&self, actions: &[usize]) -> Result<(ModelSpec, Vec<bool>)> {
        if actions.len() != self.layers.len() {
            return Err(Error::input(format!(
                "{} actions for {} layers",
                actions.len(),
                self.layers.len()
            )));
        }
        let mut spec = self.clone();
        let mut flags = vec![false; actions.len()];
        // Back to front so removals never shift a pending index.
        for t in (0..actions.len()).rev() {
            let out = spec.apply_action(t, ActionPool::coefficient(actions[t])?)?;
            flags[t] = out.coerced;
            spec = out.spec;
        }
        Ok((spec, flags))
    }

    pub fn to_text(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let dims: Vec<String> = self.input_dims.iter().map(|d| d.to_string()).collect();
        writeln!(f, "input {} classes {}", dims.join("x"), self.class_count)?;
        for l in &self.layers {
            writeln!(f, "{l}")?;
        }
        Ok(())
    }
}

impl FromStr for ModelSpec {
    type Err = Error;

    /// Header `input <d1>x<d2>... classes <n>` then one `type k d p o` per
    /// line. Blank lines and `#` comments are ignored; `;` also separates
    /// layers.
    fn from_str(s: &str) -> Result<Self> {
        let mut lines = s
            .split(['\n', ';'])
            .map(|l| l.split('#').next().unwrap_or("").trim())
            .filter(|l| !l.is_empty());
        let header = lines.next().ok_or_else(|| Error::input("empty model spec"))?;
        let h: Vec<&str> = header.split_whitespace().collect();
        if h.len() != 4 || h[0] != "input" || h[2] != "classes" {
            return Err(Error::input(format!("bad header {header:?}, expected `input <dims> classes <n>`")));
        }
        let input_dims = h[1]
            .split('x')
            .map(|d| d.parse::<usize>().map_err(|_| Error::input(format!("bad dims {:?}", h[1]))))
            .collect::<Result<Vec<_>>>()?;
        let class_count = h[3]
            .parse()
            .map_err(|_| Error::input(format!("bad class count {:?}", h[3])))?;
        let layers = lines.map(str::parse).collect::<Result<Vec<LayerSpec>>>()?;
        ModelSpec::new(layers, input_dims, class_count)
    }
}

/// One spec per realized layer.
pub fn describe(net: &Network) -> ModelSpec {
    let layers = net
        .layers()
        .iter()
        .map(|l| match l {
            Layer::Dense(d) => LayerSpec::dense(d.outputs),
            Layer::Conv2d(c) => LayerSpec::conv(c.kernel, c.stride, c.padding, c.out_channels),
            Layer::Relu => LayerSpec::relu(),
            Layer::MaxPool => LayerSpec::pool(),
            Layer::Flatten => LayerSpec::flatten(),
        })
        .collect();
    ModelSpec {
        layers,
        input_dims: net.input_dims().to_vec(),
        class_count: net.class_count(),
    }
}

/// A realized network plus the spec layers that could not be built.
#[derive(Clone, Debug)]
pub struct Realization {
    pub network: Network,
    /// Spec indices dropped because they did not fit the running shape
    /// (spatial collapse, conv/pool after flattening, layers past the head).
    pub skipped: Vec<usize>,
}

/// Build a shape-consistent network from a spec. Shapes are recomputed in
/// order; a flatten is inserted before the first dense layer when needed
/// and a dense head with `class_count` outputs always ends the network.
pub fn realize(spec: &ModelSpec, seed: u64) -> Result<Realization> {
    if spec.class_count == 0 {
        return Err(Error::input("class_count must be positive"));
    }
    let mut shape = Shape::from_dims(&spec.input_dims)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let head = spec.head_index();
    let body_end = head.unwrap_or(spec.layers.len());
    let mut layers = Vec::new();
    let mut skipped = Vec::new();

    for (i, ls) in spec.layers.iter().enumerate() {
        if i >= body_end {
            if Some(i) != head {
                skipped.push(i);
            }
            continue;
        }
        let layer = match (ls.kind, shape) {
            (LayerKind::Conv, Shape::Spatial { c, h, w }) => {
                conv_output_hw(h, w, ls.kernel, ls.stride, ls.padding).map(|_| {
                    Layer::Conv2d(Conv2d::new(c, ls.outputs, ls.kernel, ls.stride, ls.padding, &mut rng))
                })
            }
            (LayerKind::Conv, Shape::Flat(_)) => None,
            (LayerKind::Pool, Shape::Spatial { h, w, .. }) if h >= 2 && w >= 2 => Some(Layer::MaxPool),
            (LayerKind::Pool, _) => None,
            (LayerKind::Relu, _) => Some(Layer::Relu),
            (LayerKind::Flatten, _) => Some(Layer::Flatten),
            (LayerKind::Dense, s) => {
                if let Shape::Spatial { .. } = s {
                    layers.push(Layer::Flatten);
                    shape = Shape::Flat(s.size());
                }
                Some(Layer::Dense(Dense::new(shape.size(), ls.outputs, &mut rng)))
            }
        };
        match layer {
            Some(l) => {
                shape = l.output_shape(shape)?;
                layers.push(l);
            }
            None => skipped.push(i),
        }
    }
    if let Shape::Spatial { .. } = shape {
        layers.push(Layer::Flatten);
        shape = Shape::Flat(shape.size());
    }
    layers.push(Layer::Dense(Dense::new(shape.size(), spec.class_count, &mut rng)));
    let network = Network::new(spec.input_dims.clone(), layers, spec.class_count)?;
    Ok(Realization { network, skipped })
}

/// Total number of weights and biases.
pub fn param_count(net: &Network) -> usize {
    net.param_count()
}

/// Length in bytes of the network's binary serialization.
pub fn serialized_size_bytes(net: &Network) -> usize {
    serialize::to_bytes(net).len()
}

/// `1 - student_size / teacher_size`.
pub fn compression_ratio_from_sizes(student_size: f64, teacher_size: f64) -> Result<f64> {
    if teacher_size <= 0.0 {
        return Err(Error::input("teacher size must be positive"));
    }
    Ok(1.0 - student_size / teacher_size)
}

/// Compression ratio by parameter count.
pub fn compression_ratio(teacher: &Network, student: &Network) -> Result<f64> {
    compression_ratio_from_sizes(param_count(student) as f64, param_count(teacher) as f64)
}
