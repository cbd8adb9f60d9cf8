//! Batched forward and backward passes. Activations are stored feature-major
//! (`[unit][sample]`), so the inner loops run over the batch and vectorize.

use super::model::{dot, loss, MlpModel, ModelGrad};
use crate::error::{Error, Result};
use crate::scalar::{sigmoid, Scalar};

/// Scratch buffers for batches of up to `capacity` inputs.
#[derive(Debug, Clone)]
pub struct BatchWorkspace<T> {
    capacity: usize,
    input: Vec<T>,
    pre: Vec<Vec<T>>,
    post: Vec<Vec<T>>,
    delta: Vec<Vec<T>>,
    logits: Vec<T>,
    dh: Vec<T>,
}

impl<T: Scalar> BatchWorkspace<T> {
    pub fn new(model: &MlpModel<T>, capacity: usize) -> Self {
        let capacity = capacity.max(1);
        let sized = |w: usize| vec![T::zero(); w * capacity];
        BatchWorkspace {
            capacity,
            input: sized(model.input_dim()),
            pre: model.hidden.iter().map(|l| sized(l.outputs)).collect(),
            post: model.hidden.iter().map(|l| sized(l.outputs)).collect(),
            delta: model.hidden.iter().map(|l| sized(l.outputs)).collect(),
            logits: vec![T::zero(); capacity],
            dh: vec![T::zero(); capacity],
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Logits of the last [`MlpModel::forward_chunk`] call.
    pub fn logits(&self, len: usize) -> &[T] {
        &self.logits[..len]
    }
}

/// Index bits covered by the precomputed table in [`MlpModel::enumerate_logits`].
const ENUM_LOW_BITS: usize = 8;

#[inline]
fn relu<T: Scalar>(pre: &[T], post: &mut [T], units: usize, cap: usize, len: usize) {
    for k in 0..units {
        for (a, &v) in post[k * cap..k * cap + len].iter_mut().zip(&pre[k * cap..k * cap + len]) {
            *a = v.max(T::zero());
        }
    }
}

#[inline]
fn axpy<T: Scalar>(y: &mut [T], a: T, x: &[T]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi = *yi + a * *xi;
    }
}

impl<T: Scalar> MlpModel<T> {
    /// Forward pass on `len = xs.len() / n` row-major inputs, at most the
    /// workspace capacity; logits land in the workspace.
    pub(crate) fn forward_chunk(&self, xs: &[i8], ws: &mut BatchWorkspace<T>) -> usize {
        let n = self.input_dim();
        let len = xs.len() / n;
        debug_assert!(len <= ws.capacity);
        let cap = ws.capacity;
        for (b, x) in xs.chunks_exact(n).enumerate() {
            for (j, &v) in x.iter().enumerate() {
                ws.input[j * cap + b] = T::of_sign(v);
            }
        }
        for l in 0..self.hidden.len() {
            self.layer_forward(l, len, ws);
        }
        self.output_forward(len, ws);
        len
    }

    fn layer_forward(&self, l: usize, len: usize, ws: &mut BatchWorkspace<T>) {
        let cap = ws.capacity;
        let layer = &self.hidden[l];
        let (before, after) = ws.post.split_at_mut(l);
        let input: &[T] = if l == 0 { &ws.input } else { &before[l - 1] };
        let pre = &mut ws.pre[l];
        for k in 0..layer.outputs {
            let z = &mut pre[k * cap..k * cap + len];
            z.fill(layer.bias[k]);
            for (j, &w) in layer.row(k).iter().enumerate() {
                axpy(z, w, &input[j * cap..j * cap + len]);
            }
        }
        relu(&ws.pre[l], &mut after[0], layer.outputs, cap, len);
    }

    fn output_forward(&self, len: usize, ws: &mut BatchWorkspace<T>) {
        let cap = ws.capacity;
        let last = ws.post.last().expect("non-empty");
        let h = &mut ws.logits[..len];
        h.fill(self.output_bias);
        for (k, &a) in self.output.iter().enumerate() {
            axpy(h, a, &last[k * cap..k * cap + len]);
        }
    }

    /// Logits of all `2^n` inputs in index order (bit `j` of the index set
    /// means `x_j = -1`). The first layer is assembled from two half tables,
    /// so its cost no longer scales with `n`.
    pub fn enumerate_logits(&self) -> Result<Vec<T>> {
        let n = self.input_dim();
        if n > crate::boolfn::ENUMERATION_LIMIT {
            return Err(Error::Resource(format!("cannot enumerate 2^{n} inputs")));
        }
        let low = n.min(ENUM_LOW_BITS);
        let chunk = 1usize << low;
        let mut ws = BatchWorkspace::new(self, chunk);
        let first = &self.hidden[0];
        let width = first.outputs;
        let mut x = vec![1i8; n];
        // low[k][b] = bias_k + Σ_{j<low} w_kj x_j(b)
        let mut low_table = vec![T::zero(); width * chunk];
        for b in 0..chunk {
            crate::boolfn::fill_from_index(b as u64, &mut x[..low]);
            for k in 0..width {
                let row = first.row(k);
                let mut acc = first.bias[k];
                for j in 0..low {
                    acc = acc + row[j] * T::of_sign(x[j]);
                }
                low_table[k * chunk + b] = acc;
            }
        }
        let high_count = 1usize << (n - low);
        let mut out = Vec::with_capacity(chunk * high_count);
        for hi in 0..high_count {
            crate::boolfn::fill_from_index(hi as u64, &mut x[low..]);
            for k in 0..width {
                let row = first.row(k);
                let mut shift = T::zero();
                for j in low..n {
                    shift = shift + row[j] * T::of_sign(x[j]);
                }
                let z = &mut ws.pre[0][k * chunk..(k + 1) * chunk];
                for (zv, &lv) in z.iter_mut().zip(&low_table[k * chunk..(k + 1) * chunk]) {
                    *zv = lv + shift;
                }
            }
            relu(&ws.pre[0], &mut ws.post[0], width, chunk, chunk);
            for l in 1..self.hidden.len() {
                self.layer_forward(l, chunk, &mut ws);
            }
            self.output_forward(chunk, &mut ws);
            out.extend_from_slice(ws.logits(chunk));
        }
        Ok(out)
    }

    /// Logits for row-major `inputs`, evaluated in workspace-sized chunks.
    pub fn forward_batch(&self, inputs: &[i8], ws: &mut BatchWorkspace<T>, out: &mut Vec<T>) -> Result<()> {
        let n = self.input_dim();
        if inputs.len() % n != 0 {
            return Err(Error::Dimension {
                expected: n,
                got: inputs.len() % n,
            });
        }
        out.clear();
        for chunk in inputs.chunks(ws.capacity * n) {
            let len = self.forward_chunk(chunk, ws);
            out.extend_from_slice(ws.logits(len));
        }
        Ok(())
    }

    /// Summed loss over one chunk; accumulates `scale ×` the summed gradient.
    pub(crate) fn backprop_batch(
        &self,
        xs: &[i8],
        ys: &[i8],
        ws: &mut BatchWorkspace<T>,
        grad: &mut ModelGrad<T>,
        scale: T,
    ) -> T {
        let len = self.forward_chunk(xs, ws);
        debug_assert_eq!(len, ys.len());
        let cap = ws.capacity;
        let two = T::of(2.0);
        let mut total = T::zero();
        for b in 0..len {
            let h = ws.logits[b];
            let yt = T::of_sign(ys[b]);
            total = total + loss(h, ys[b]);
            // dℓ/dh = -2 y φ(-y h)
            ws.dh[b] = -two * yt * sigmoid(-(yt * h)) * scale;
        }
        let dh = &ws.dh[..len];
        let depth = self.hidden.len();
        {
            let last = &ws.post[depth - 1];
            for (k, g) in grad.output.iter_mut().enumerate() {
                *g = *g + dot(dh, &last[k * cap..k * cap + len]);
            }
            grad.output_bias = grad.output_bias + dh.iter().fold(T::zero(), |s, &v| s + v);
            let delta = &mut ws.delta[depth - 1];
            let pre = &ws.pre[depth - 1];
            for (k, &a) in self.output.iter().enumerate() {
                let d = &mut delta[k * cap..k * cap + len];
                for ((dv, &z), &g) in d.iter_mut().zip(&pre[k * cap..k * cap + len]).zip(dh) {
                    *dv = if z > T::zero() { g * a } else { T::zero() };
                }
            }
        }
        for l in (0..depth).rev() {
            let layer = &self.hidden[l];
            let input: &[T] = if l == 0 { &ws.input } else { &ws.post[l - 1] };
            let (gw, gb) = &mut grad.hidden[l];
            let delta = &ws.delta[l];
            for k in 0..layer.outputs {
                let d = &delta[k * cap..k * cap + len];
                gb[k] = gb[k] + d.iter().fold(T::zero(), |s, &v| s + v);
                let row = &mut gw[k * layer.inputs..(k + 1) * layer.inputs];
                for (j, g) in row.iter_mut().enumerate() {
                    *g = *g + dot(d, &input[j * cap..j * cap + len]);
                }
            }
            if l > 0 {
                let (lower, upper) = ws.delta.split_at_mut(l);
                let prev = &mut lower[l - 1];
                let delta = &upper[0];
                prev.fill(T::zero());
                for k in 0..layer.outputs {
                    let d = &delta[k * cap..k * cap + len];
                    for (j, &w) in layer.row(k).iter().enumerate() {
                        axpy(&mut prev[j * cap..j * cap + len], w, d);
                    }
                }
                let pre = &ws.pre[l - 1];
                for (p, &z) in prev.iter_mut().zip(pre.iter()) {
                    if z <= T::zero() {
                        *p = T::zero();
                    }
                }
            }
        }
        total
    }
}
