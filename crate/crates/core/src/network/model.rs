use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{neg_log_sigmoid, sigmoid, Scalar};

/// One fully connected layer; `weights` is row-major `outputs × inputs`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer<T> {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> DenseLayer<T> {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        DenseLayer {
            inputs,
            outputs,
            weights: vec![T::zero(); inputs * outputs],
            bias: vec![T::zero(); outputs],
        }
    }

    pub fn from_rows(rows: Vec<Vec<T>>, bias: Vec<T>) -> Result<Self> {
        let outputs = rows.len();
        if outputs == 0 || bias.len() != outputs {
            return Err(Error::Dimension {
                expected: outputs,
                got: bias.len(),
            });
        }
        let inputs = rows[0].len();
        if let Some(bad) = rows.iter().find(|r| r.len() != inputs) {
            return Err(Error::Dimension {
                expected: inputs,
                got: bad.len(),
            });
        }
        Ok(DenseLayer {
            inputs,
            outputs,
            weights: rows.into_iter().flatten().collect(),
            bias,
        })
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.weights[i * self.inputs..(i + 1) * self.inputs]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.weights[i * self.inputs..(i + 1) * self.inputs]
    }

    #[inline]
    fn apply_relu(&self, input: &[T], pre: &mut [T], post: &mut [T]) {
        for (k, (z, a)) in pre.iter_mut().zip(post.iter_mut()).enumerate() {
            let row = &self.weights[k * self.inputs..(k + 1) * self.inputs];
            let acc = self.bias[k] + dot(row, input);
            *z = acc;
            *a = acc.max(T::zero());
        }
    }
}

/// Dot product with four running sums; a single serial sum stalls on add latency.
#[inline]
pub(crate) fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let mut tail = T::zero();
    for (x, y) in ca.remainder().iter().zip(cb.remainder()) {
        tail = tail + *x * *y;
    }
    let mut acc = [T::zero(); 4];
    for (x, y) in ca.zip(cb) {
        for i in 0..4 {
            acc[i] = acc[i] + x[i] * y[i];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Feed-forward ReLU network with a scalar identity output:
/// `h(x) = aᵀ σ(W_L ⋯ σ(W_1 x + b_1) ⋯ + b_L) + output_bias`.
///
/// `depth` counts weight layers, so a single hidden layer is depth 2. An
/// optional input mask pins first-layer weights on masked coordinates to zero.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel<T> {
    pub hidden: Vec<DenseLayer<T>>,
    pub output: Vec<T>,
    pub output_bias: T,
    pub input_mask: Option<Vec<bool>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InitScheme {
    /// `U(±1/sqrt(fan_in))` for weights and hidden biases; output bias 0.
    #[default]
    StandardUniform,
    /// Paired ±1 neurons with opposite output signs, so `h ≡ 0` at init.
    /// Hidden biases come from `{-1 + k/grid : k = 1..2·grid-1}`.
    BooleanSymmetric,
}

impl<T: Scalar> MlpModel<T> {
    pub fn from_parts(hidden: Vec<DenseLayer<T>>, output: Vec<T>, output_bias: T) -> Result<Self> {
        if hidden.is_empty() {
            return Err(Error::param("a model needs at least one hidden layer"));
        }
        for pair in hidden.windows(2) {
            if pair[1].inputs != pair[0].outputs {
                return Err(Error::Dimension {
                    expected: pair[0].outputs,
                    got: pair[1].inputs,
                });
            }
        }
        for layer in &hidden {
            if layer.weights.len() != layer.inputs * layer.outputs || layer.bias.len() != layer.outputs {
                return Err(Error::Dimension {
                    expected: layer.inputs * layer.outputs,
                    got: layer.weights.len(),
                });
            }
        }
        let width = hidden.last().map(|l| l.outputs).unwrap_or(0);
        if output.len() != width {
            return Err(Error::Dimension {
                expected: width,
                got: output.len(),
            });
        }
        Ok(MlpModel {
            hidden,
            output,
            output_bias,
            input_mask: None,
        })
    }

    /// Two-layer model `Σ a_i σ(w_iᵀx + b_i)` from explicit neuron rows.
    pub fn two_layer(rows: Vec<Vec<T>>, bias: Vec<T>, output: Vec<T>) -> Result<Self> {
        Self::from_parts(vec![DenseLayer::from_rows(rows, bias)?], output, T::zero())
    }

    /// Random initialization. `widths` lists hidden layer sizes; `bias_grid`
    /// is the `c` of the symmetric bias grid and is ignored otherwise.
    pub fn init<R: Rng + ?Sized>(
        n: usize,
        widths: &[usize],
        scheme: InitScheme,
        bias_grid: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if n == 0 || widths.is_empty() || widths.contains(&0) {
            return Err(Error::param("input dimension and widths must be positive"));
        }
        match scheme {
            InitScheme::StandardUniform => {
                let mut hidden = Vec::with_capacity(widths.len());
                let mut fan_in = n;
                for &w in widths {
                    let bound = 1.0 / (fan_in as f64).sqrt();
                    let mut layer = DenseLayer::zeros(fan_in, w);
                    for v in layer.weights.iter_mut().chain(layer.bias.iter_mut()) {
                        *v = T::of(rng.gen_range(-bound..bound));
                    }
                    hidden.push(layer);
                    fan_in = w;
                }
                let bound = 1.0 / (fan_in as f64).sqrt();
                let output = (0..fan_in).map(|_| T::of(rng.gen_range(-bound..bound))).collect();
                Self::from_parts(hidden, output, T::zero())
            }
            InitScheme::BooleanSymmetric => {
                if widths.len() != 1 {
                    return Err(Error::Unsupported(
                        "symmetric Boolean initialization is defined for depth 2 only".into(),
                    ));
                }
                let width = widths[0];
                if width % 2 != 0 {
                    return Err(Error::param(format!(
                        "symmetric Boolean initialization needs an even width, got {width}"
                    )));
                }
                if bias_grid == 0 {
                    return Err(Error::param("bias grid must be positive"));
                }
                let half = width / 2;
                let mut layer = DenseLayer::zeros(n, width);
                let mut output = vec![T::zero(); width];
                for i in 0..half {
                    for j in 0..n {
                        let v = if rng.gen::<bool>() { T::one() } else { -T::one() };
                        layer.weights[i * n + j] = v;
                        layer.weights[(i + half) * n + j] = v;
                    }
                    let a = if rng.gen::<bool>() { T::one() } else { -T::one() };
                    output[i] = a;
                    output[i + half] = -a;
                    let k = rng.gen_range(1..2 * bias_grid);
                    let b = T::of(-1.0 + k as f64 / bias_grid as f64);
                    layer.bias[i] = b;
                    layer.bias[i + half] = b;
                }
                Self::from_parts(vec![layer], output, T::zero())
            }
        }
    }

    pub fn input_dim(&self) -> usize {
        self.hidden[0].inputs
    }

    /// Size of the last hidden layer.
    pub fn width(&self) -> usize {
        self.output.len()
    }

    pub fn depth(&self) -> usize {
        self.hidden.len() + 1
    }

    pub fn first_layer(&self) -> &DenseLayer<T> {
        &self.hidden[0]
    }

    pub fn same_architecture(&self, other: &Self) -> bool {
        self.hidden.len() == other.hidden.len()
            && self
                .hidden
                .iter()
                .zip(&other.hidden)
                .all(|(a, b)| a.inputs == b.inputs && a.outputs == b.outputs)
    }

    /// Restrict the first layer to coordinates where `mask` is true.
    pub fn set_input_mask(&mut self, mask: Vec<bool>) -> Result<()> {
        if mask.len() != self.input_dim() {
            return Err(Error::Dimension {
                expected: self.input_dim(),
                got: mask.len(),
            });
        }
        self.input_mask = Some(mask);
        self.apply_input_mask();
        Ok(())
    }

    pub(crate) fn apply_input_mask(&mut self) {
        let Some(mask) = &self.input_mask else { return };
        let layer = &mut self.hidden[0];
        for i in 0..layer.outputs {
            for (w, &keep) in layer.weights[i * layer.inputs..(i + 1) * layer.inputs]
                .iter_mut()
                .zip(mask)
            {
                if !keep {
                    *w = T::zero();
                }
            }
        }
    }

    fn check_input(&self, x: &[i8]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::Dimension {
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        Ok(())
    }

    pub fn workspace(&self) -> Workspace<T> {
        Workspace::new(self)
    }

    /// Runs the network, leaving activations in `ws`; returns the logit.
    pub fn forward_with(&self, x: &[i8], ws: &mut Workspace<T>) -> T {
        for (dst, &b) in ws.input.iter_mut().zip(x) {
            *dst = T::of_sign(b);
        }
        for (l, layer) in self.hidden.iter().enumerate() {
            let (before, after) = ws.post.split_at_mut(l);
            let input: &[T] = if l == 0 { &ws.input } else { &before[l - 1] };
            layer.apply_relu(input, &mut ws.pre[l], &mut after[0]);
        }
        let last = ws.post.last().expect("non-empty");
        self.output_bias + dot(&self.output, last)
    }

    pub fn forward(&self, x: &[i8]) -> Result<T> {
        self.check_input(x)?;
        Ok(self.forward_with(x, &mut self.workspace()))
    }

    /// Last hidden layer activations (post-ReLU).
    pub fn embed(&self, x: &[i8]) -> Result<Vec<T>> {
        self.check_input(x)?;
        let mut ws = self.workspace();
        self.forward_with(x, &mut ws);
        Ok(ws.post.pop().expect("non-empty"))
    }

    /// Loss on one example; accumulates `scale ×` its gradient into `grad`.
    pub(crate) fn backprop(
        &self,
        x: &[i8],
        y: i8,
        ws: &mut Workspace<T>,
        grad: &mut ModelGrad<T>,
        scale: T,
    ) -> T {
        let h = self.forward_with(x, ws);
        let yt = T::of_sign(y);
        let margin = yt * h;
        let loss = loss(h, y);
        // dℓ/dh = -2 y φ(-y h)
        let dh = -T::of(2.0) * yt * sigmoid(-margin) * scale;
        let depth = self.hidden.len();
        let last = &ws.post[depth - 1];
        for (g, v) in grad.output.iter_mut().zip(last) {
            *g = *g + dh * *v;
        }
        grad.output_bias = grad.output_bias + dh;
        let delta = &mut ws.delta[depth - 1];
        for ((d, a), z) in delta.iter_mut().zip(&self.output).zip(&ws.pre[depth - 1]) {
            *d = if *z > T::zero() { dh * *a } else { T::zero() };
        }
        for l in (0..depth).rev() {
            let layer = &self.hidden[l];
            let input: &[T] = if l == 0 { &ws.input } else { &ws.post[l - 1] };
            let (gw, gb) = &mut grad.hidden[l];
            let delta = &ws.delta[l];
            for (k, &d) in delta.iter().enumerate() {
                if d == T::zero() {
                    continue;
                }
                gb[k] = gb[k] + d;
                let row = &mut gw[k * layer.inputs..(k + 1) * layer.inputs];
                for (g, v) in row.iter_mut().zip(input) {
                    *g = *g + d * *v;
                }
            }
            if l > 0 {
                let (lower, upper) = ws.delta.split_at_mut(l);
                let prev = &mut lower[l - 1];
                let delta = &upper[0];
                for v in prev.iter_mut() {
                    *v = T::zero();
                }
                for (k, &d) in delta.iter().enumerate() {
                    if d == T::zero() {
                        continue;
                    }
                    for (p, w) in prev.iter_mut().zip(layer.row(k)) {
                        *p = *p + d * *w;
                    }
                }
                for (p, z) in prev.iter_mut().zip(&ws.pre[l - 1]) {
                    if *z <= T::zero() {
                        *p = T::zero();
                    }
                }
            }
        }
        loss
    }

    /// Mean loss and mean gradient over a batch given as flat row-major inputs.
    pub fn grad_batch(&self, inputs: &[i8], labels: &[i8]) -> Result<(T, ModelGrad<T>)> {
        let n = self.input_dim();
        if labels.is_empty() {
            return Err(Error::param("empty batch"));
        }
        if inputs.len() != labels.len() * n {
            return Err(Error::Dimension {
                expected: labels.len() * n,
                got: inputs.len(),
            });
        }
        let mut ws = self.workspace();
        let mut grad = ModelGrad::zeros_like(self);
        let scale = T::one() / T::of(labels.len() as f64);
        let mut total = T::zero();
        for (x, &y) in inputs.chunks_exact(n).zip(labels) {
            total = total + self.backprop(x, y, &mut ws, &mut grad, scale);
        }
        grad.apply_input_mask(self);
        Ok((total * scale, grad))
    }

    /// Flat parameter vector: hidden layers (weights then bias), output weights, output bias.
    pub fn params(&self) -> Vec<T> {
        let mut out = Vec::new();
        for l in &self.hidden {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.bias);
        }
        out.extend_from_slice(&self.output);
        out.push(self.output_bias);
        out
    }

    pub fn set_params(&mut self, params: &[T]) -> Result<()> {
        let expected = self.params().len();
        if params.len() != expected {
            return Err(Error::Dimension {
                expected,
                got: params.len(),
            });
        }
        let mut it = params.iter().copied();
        for l in &mut self.hidden {
            for v in l.weights.iter_mut().chain(l.bias.iter_mut()) {
                *v = it.next().expect("length checked");
            }
        }
        for v in &mut self.output {
            *v = it.next().expect("length checked");
        }
        self.output_bias = it.next().expect("length checked");
        Ok(())
    }

    /// Swap the output layer, keeping every hidden layer.
    pub fn last_layer_replace(&self, output: Vec<T>, output_bias: T) -> Result<Self> {
        if output.len() != self.width() {
            return Err(Error::Dimension {
                expected: self.width(),
                got: output.len(),
            });
        }
        Ok(MlpModel {
            output,
            output_bias,
            ..self.clone()
        })
    }

    /// Converts the model to another precision.
    pub fn cast<U: Scalar>(&self) -> MlpModel<U> {
        let conv = |v: &[T]| v.iter().map(|x| U::of(x.to_f64_lossy())).collect::<Vec<U>>();
        MlpModel {
            hidden: self
                .hidden
                .iter()
                .map(|l| DenseLayer {
                    inputs: l.inputs,
                    outputs: l.outputs,
                    weights: conv(&l.weights),
                    bias: conv(&l.bias),
                })
                .collect(),
            output: conv(&self.output),
            output_bias: U::of(self.output_bias.to_f64_lossy()),
            input_mask: self.input_mask.clone(),
        }
    }
}

/// `ℓ(h, y) = -2 log φ(y h)`.
#[inline]
pub fn loss<T: Scalar>(logit: T, y: i8) -> T {
    T::of(2.0) * neg_log_sigmoid(T::of_sign(y) * logit)
}

/// Scratch buffers for forward and backward passes.
#[derive(Debug, Clone)]
pub struct Workspace<T> {
    input: Vec<T>,
    pre: Vec<Vec<T>>,
    post: Vec<Vec<T>>,
    delta: Vec<Vec<T>>,
}

impl<T: Scalar> Workspace<T> {
    pub fn new(model: &MlpModel<T>) -> Self {
        let sizes: Vec<usize> = model.hidden.iter().map(|l| l.outputs).collect();
        let mk = || sizes.iter().map(|&s| vec![T::zero(); s]).collect::<Vec<_>>();
        Workspace {
            input: vec![T::zero(); model.input_dim()],
            pre: mk(),
            post: mk(),
            delta: mk(),
        }
    }

    /// Last hidden activations from the latest forward pass.
    pub fn embedding(&self) -> &[T] {
        self.post.last().expect("non-empty")
    }

    /// Pre-activations of hidden layer `l` from the latest forward pass.
    pub fn pre_activation(&self, l: usize) -> &[T] {
        &self.pre[l]
    }
}

/// Gradient with the same shape as [`MlpModel`].
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGrad<T> {
    /// `(weights, bias)` per hidden layer.
    pub hidden: Vec<(Vec<T>, Vec<T>)>,
    pub output: Vec<T>,
    pub output_bias: T,
}

impl<T: Scalar> ModelGrad<T> {
    pub fn zeros_like(model: &MlpModel<T>) -> Self {
        ModelGrad {
            hidden: model
                .hidden
                .iter()
                .map(|l| (vec![T::zero(); l.weights.len()], vec![T::zero(); l.bias.len()]))
                .collect(),
            output: vec![T::zero(); model.output.len()],
            output_bias: T::zero(),
        }
    }

    fn apply_input_mask(&mut self, model: &MlpModel<T>) {
        let Some(mask) = &model.input_mask else { return };
        let n = mask.len();
        for row in self.hidden[0].0.chunks_exact_mut(n) {
            for (g, &keep) in row.iter_mut().zip(mask) {
                if !keep {
                    *g = T::zero();
                }
            }
        }
    }

    /// Same ordering as [`MlpModel::params`].
    pub fn flatten(&self) -> Vec<T> {
        let mut out = Vec::new();
        for (w, b) in &self.hidden {
            out.extend_from_slice(w);
            out.extend_from_slice(b);
        }
        out.extend_from_slice(&self.output);
        out.push(self.output_bias);
        out
    }

    /// Gradient on first-layer weight `(neuron, coord)`.
    pub fn first_layer_weight(&self, neuron: usize, coord: usize, n: usize) -> T {
        self.hidden[0].0[neuron * n + coord]
    }

    pub(crate) fn for_each_mut(&mut self, mut f: impl FnMut(&mut T)) {
        for (w, b) in &mut self.hidden {
            w.iter_mut().chain(b.iter_mut()).for_each(&mut f);
        }
        self.output.iter_mut().for_each(&mut f);
        f(&mut self.output_bias);
    }
}
