//! Stochastic policies over a finite arm set.
//!
//! [`SoftmaxMlpPolicy`] is a ReLU multilayer perceptron with a softmax head.
//! Parameters live in one flat vector laid out layer by layer as
//! `[W_0 (in x out, row-major), b_0, W_1, b_1, ...]`; the same layout is used
//! by [`GradientBuffer`] and by the JSON checkpoint.

use std::path::Path;

use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::rng::sample_categorical;

/// Anything that maps a context to a distribution over `num_arms` arms.
pub trait StochasticPolicy {
    fn num_arms(&self) -> usize;

    fn action_probs(&self, context: &[f64]) -> Result<Vec<f64>>;

    /// Row `i` holds the action distribution for context row `i`.
    fn action_probs_batch(&self, contexts: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        let mut out = Array2::zeros((contexts.nrows(), self.num_arms()));
        for (i, row) in contexts.rows().into_iter().enumerate() {
            let probs = self.action_probs(&row.to_vec())?;
            check_dim(self.num_arms(), probs.len())?;
            out.row_mut(i).assign(&ArrayView1::from(&probs[..]));
        }
        Ok(out)
    }
}

/// Draw an arm from `policy` and return it with its probability.
pub fn sample_action<P, R>(policy: &P, context: &[f64], rng: &mut R) -> Result<(usize, f64)>
where
    P: StochasticPolicy + ?Sized,
    R: Rng + ?Sized,
{
    let probs = policy.action_probs(context)?;
    let arm = sample_categorical(&probs, rng);
    Ok((arm, probs[arm]))
}

/// Accumulated score-function gradient, averaged on update.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBuffer {
    values: Vec<f64>,
    count: usize,
}

impl GradientBuffer {
    pub fn zeros(len: usize) -> Self {
        Self {
            values: vec![0.0; len],
            count: 0,
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Merge another buffer accumulated against the same policy.
    pub fn merge(&mut self, other: &GradientBuffer) -> Result<()> {
        check_dim(self.values.len(), other.values.len())?;
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += b;
        }
        self.count += other.count;
        Ok(())
    }

    /// L2 norm of the averaged gradient (`values / count`); zero when empty.
    pub fn mean_norm(&self) -> f64 {
        if self.count == 0 {
            return 0.0;
        }
        let n = self.count as f64;
        self.values.iter().map(|v| (v / n) * (v / n)).sum::<f64>().sqrt()
    }

    pub fn clear(&mut self) {
        self.values.iter_mut().for_each(|v| *v = 0.0);
        self.count = 0;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftmaxMlpPolicy {
    layer_sizes: Vec<usize>,
    params: Vec<f64>,
}

/// Hidden layer widths used when none are configured.
pub const DEFAULT_HIDDEN: [usize; 2] = [256, 256];

struct Activations {
    /// `inputs[l]` is the input to layer `l` (post-ReLU for l > 0).
    inputs: Vec<Array2<f64>>,
    logits: Array2<f64>,
}

impl SoftmaxMlpPolicy {
    /// He-uniform hidden layers and a zero output layer, so the initial
    /// policy is exactly uniform.
    pub fn new<R: Rng + ?Sized>(
        context_dim: usize,
        hidden: &[usize],
        num_arms: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let mut policy = Self::zeros(context_dim, hidden, num_arms)?;
        let last = policy.num_layers() - 1;
        for layer in 0..last {
            policy.he_uniform_layer(layer, rng);
        }
        Ok(policy)
    }

    /// Every layer He-uniform, output biases included. Used to probe
    /// arbitrary points of parameter space.
    pub fn random<R: Rng + ?Sized>(
        context_dim: usize,
        hidden: &[usize],
        num_arms: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let mut policy = Self::zeros(context_dim, hidden, num_arms)?;
        for layer in 0..policy.num_layers() {
            policy.he_uniform_layer(layer, rng);
            let (start, end) = policy.bias_range(layer);
            for b in &mut policy.params[start..end] {
                *b = rng.random_range(-0.5..0.5);
            }
        }
        Ok(policy)
    }

    pub fn zeros(context_dim: usize, hidden: &[usize], num_arms: usize) -> Result<Self> {
        if context_dim == 0 {
            return Err(Error::Config("context_dim must be positive".into()));
        }
        if num_arms < 2 {
            return Err(Error::Config("policy needs at least 2 arms".into()));
        }
        if hidden.contains(&0) {
            return Err(Error::Config("hidden layer widths must be positive".into()));
        }
        let mut layer_sizes = Vec::with_capacity(hidden.len() + 2);
        layer_sizes.push(context_dim);
        layer_sizes.extend_from_slice(hidden);
        layer_sizes.push(num_arms);
        let count = param_count(&layer_sizes);
        Ok(Self {
            layer_sizes,
            params: vec![0.0; count],
        })
    }

    pub fn from_parts(layer_sizes: Vec<usize>, params: Vec<f64>) -> Result<Self> {
        if layer_sizes.len() < 2 || layer_sizes.contains(&0) {
            return Err(Error::Config(format!(
                "invalid layer sizes {layer_sizes:?}"
            )));
        }
        if *layer_sizes.last().unwrap() < 2 {
            return Err(Error::Config("policy needs at least 2 arms".into()));
        }
        check_dim(param_count(&layer_sizes), params.len())?;
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Data("non-finite policy parameter".into()));
        }
        Ok(Self {
            layer_sizes,
            params,
        })
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn context_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn gradient_buffer(&self) -> GradientBuffer {
        GradientBuffer::zeros(self.params.len())
    }

    fn num_layers(&self) -> usize {
        self.layer_sizes.len() - 1
    }

    fn layer_offset(&self, layer: usize) -> usize {
        self.layer_sizes
            .windows(2)
            .take(layer)
            .map(|w| w[0] * w[1] + w[1])
            .sum()
    }

    fn bias_range(&self, layer: usize) -> (usize, usize) {
        let (fan_in, fan_out) = (self.layer_sizes[layer], self.layer_sizes[layer + 1]);
        let start = self.layer_offset(layer) + fan_in * fan_out;
        (start, start + fan_out)
    }

    fn he_uniform_layer<R: Rng + ?Sized>(&mut self, layer: usize, rng: &mut R) {
        let (fan_in, fan_out) = (self.layer_sizes[layer], self.layer_sizes[layer + 1]);
        let bound = (6.0 / fan_in as f64).sqrt();
        let start = self.layer_offset(layer);
        for w in &mut self.params[start..start + fan_in * fan_out] {
            *w = rng.random_range(-bound..bound);
        }
    }

    fn layer_views(&self, layer: usize) -> (ArrayView2<'_, f64>, ArrayView1<'_, f64>) {
        layer_views(&self.layer_sizes, &self.params, layer)
    }

    fn check_contexts(&self, contexts: &ArrayView2<'_, f64>) -> Result<()> {
        check_dim(self.context_dim(), contexts.ncols())
    }

    fn forward(&self, contexts: ArrayView2<'_, f64>) -> Activations {
        let mut inputs = Vec::with_capacity(self.num_layers());
        let mut current = contexts.to_owned();
        for layer in 0..self.num_layers() {
            let (w, b) = self.layer_views(layer);
            let mut z = current.dot(&w);
            z += &b;
            if layer + 1 < self.num_layers() {
                z.mapv_inplace(|v| v.max(0.0));
                inputs.push(current);
                current = z;
            } else {
                inputs.push(current);
                return Activations { inputs, logits: z };
            }
        }
        unreachable!("policy has at least one layer")
    }

    /// Raw output-layer scores for a batch of contexts.
    pub fn logits_batch(&self, contexts: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.check_contexts(&contexts)?;
        Ok(self.forward(contexts).logits)
    }

    pub fn log_prob(&self, context: &[f64], action: usize) -> Result<f64> {
        check_dim(self.context_dim(), context.len())?;
        self.check_action(action)?;
        let x = ArrayView2::from_shape((1, context.len()), context).expect("row shape");
        let logits = self.forward(x).logits;
        Ok(log_softmax_row(logits.row(0))[action])
    }

    fn check_action(&self, action: usize) -> Result<()> {
        if action < self.num_arms() {
            Ok(())
        } else {
            Err(Error::Data(format!(
                "action {action} out of range for {} arms",
                self.num_arms()
            )))
        }
    }

    /// `buffer += weight * grad_theta log pi(action | context)`.
    pub fn accumulate_score_gradient(
        &self,
        buffer: &mut GradientBuffer,
        context: &[f64],
        action: usize,
        weight: f64,
    ) -> Result<()> {
        check_dim(self.context_dim(), context.len())?;
        let x = ArrayView2::from_shape((1, context.len()), context).expect("row shape");
        self.accumulate_score_gradient_batch(buffer, x, &[action], &[weight])
    }

    /// Batched form of [`Self::accumulate_score_gradient`]; the counter grows
    /// by the number of rows.
    pub fn accumulate_score_gradient_batch(
        &self,
        buffer: &mut GradientBuffer,
        contexts: ArrayView2<'_, f64>,
        actions: &[usize],
        weights: &[f64],
    ) -> Result<()> {
        self.check_contexts(&contexts)?;
        check_dim(self.params.len(), buffer.values.len())?;
        check_dim(contexts.nrows(), actions.len())?;
        check_dim(contexts.nrows(), weights.len())?;
        for &a in actions {
            self.check_action(a)?;
        }

        let acts = self.forward(contexts);
        // d/dz log softmax(z)_a = onehot(a) - softmax(z)
        let mut delta = acts.logits;
        for (i, mut row) in delta.rows_mut().into_iter().enumerate() {
            let probs = softmax_row(row.view());
            row.assign(&probs);
            row.mapv_inplace(|p| -p);
            row[actions[i]] += 1.0;
            row.mapv_inplace(|v| v * weights[i]);
        }

        for layer in (0..self.num_layers()).rev() {
            let input = &acts.inputs[layer];
            let (gw, mut gb) = layer_views_mut(&self.layer_sizes, &mut buffer.values, layer);
            let mut gw = gw;
            general_mat_mul(1.0, &input.t(), &delta, 1.0, &mut gw);
            gb += &delta.sum_axis(Axis(0));
            if layer > 0 {
                let (w, _) = self.layer_views(layer);
                let mut upstream = delta.dot(&w.t());
                // inputs[layer] is the ReLU output of layer - 1
                ndarray::Zip::from(&mut upstream)
                    .and(input)
                    .for_each(|g, &h| {
                        if h <= 0.0 {
                            *g = 0.0;
                        }
                    });
                delta = upstream;
            }
        }
        buffer.count += contexts.nrows();
        Ok(())
    }

    /// `theta += alpha * buffer / count`, then clear the buffer.
    pub fn apply_update(&mut self, buffer: &mut GradientBuffer, alpha: f64) -> Result<()> {
        check_dim(self.params.len(), buffer.values.len())?;
        if buffer.count == 0 {
            return Err(Error::State(
                "apply_update called with an empty gradient buffer".into(),
            ));
        }
        let n = buffer.count as f64;
        for (p, g) in self.params.iter_mut().zip(&buffer.values) {
            *p += alpha * (g / n);
        }
        buffer.clear();
        Ok(())
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let raw: SoftmaxMlpPolicy = serde_json::from_str(&text)?;
        Self::from_parts(raw.layer_sizes, raw.params)
    }
}

impl StochasticPolicy for SoftmaxMlpPolicy {
    fn num_arms(&self) -> usize {
        *self.layer_sizes.last().expect("nonempty layer sizes")
    }

    fn action_probs(&self, context: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.context_dim(), context.len())?;
        let x = ArrayView2::from_shape((1, context.len()), context).expect("row shape");
        let logits = self.forward(x).logits;
        Ok(softmax_row(logits.row(0)).to_vec())
    }

    fn action_probs_batch(&self, contexts: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        let mut logits = self.logits_batch(contexts)?;
        for mut row in logits.rows_mut() {
            let probs = softmax_row(row.view());
            row.assign(&probs);
        }
        Ok(logits)
    }
}

fn param_count(layer_sizes: &[usize]) -> usize {
    layer_sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

fn layer_views<'a>(
    sizes: &[usize],
    params: &'a [f64],
    layer: usize,
) -> (ArrayView2<'a, f64>, ArrayView1<'a, f64>) {
    let offset: usize = sizes.windows(2).take(layer).map(|w| w[0] * w[1] + w[1]).sum();
    let (fan_in, fan_out) = (sizes[layer], sizes[layer + 1]);
    let w_end = offset + fan_in * fan_out;
    let w = ArrayView2::from_shape((fan_in, fan_out), &params[offset..w_end]).expect("layout");
    let b = ArrayView1::from(&params[w_end..w_end + fan_out]);
    (w, b)
}

fn layer_views_mut<'a>(
    sizes: &[usize],
    params: &'a mut [f64],
    layer: usize,
) -> (ArrayViewMut2<'a, f64>, ArrayViewMut1<'a, f64>) {
    let offset: usize = sizes.windows(2).take(layer).map(|w| w[0] * w[1] + w[1]).sum();
    let (fan_in, fan_out) = (sizes[layer], sizes[layer + 1]);
    let (w_slice, rest) = params[offset..].split_at_mut(fan_in * fan_out);
    let w = ArrayViewMut2::from_shape((fan_in, fan_out), w_slice).expect("layout");
    let b = ArrayViewMut1::from(&mut rest[..fan_out]);
    (w, b)
}

/// Max-subtracted softmax.
pub fn softmax_row(logits: ArrayView1<'_, f64>) -> Array1<f64> {
    let max = logits.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let mut exp = logits.mapv(|v| (v - max).exp());
    let sum = exp.sum();
    exp /= sum;
    exp
}

pub fn log_softmax_row(logits: ArrayView1<'_, f64>) -> Array1<f64> {
    let max = logits.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let lse = logits.iter().map(|&v| (v - max).exp()).sum::<f64>().ln() + max;
    logits.mapv(|v| v - lse)
}
