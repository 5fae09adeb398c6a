//! Dense feed-forward networks with hand-written backpropagation.
//!
//! Parameters live in one flat `f64` vector. For each layer in order the
//! weight matrix is stored row-major (`out x in`), followed by the bias
//! vector. Keeping the layout flat makes model fusion a plain vector blend.

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_len, Error, Result};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputHead {
    Linear,
    Softmax,
    Sigmoid,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NetSpec {
    pub layer_sizes: Vec<usize>,
    pub hidden_activation: Activation,
    pub output_head: OutputHead,
}

impl NetSpec {
    pub fn new(layer_sizes: Vec<usize>, output_head: OutputHead) -> Result<Self> {
        let spec = Self {
            layer_sizes,
            hidden_activation: Activation::Relu,
            output_head,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Builds `[input, hidden..., output]`.
    pub fn mlp(input: usize, hidden: &[usize], output: usize, head: OutputHead) -> Result<Self> {
        let mut sizes = Vec::with_capacity(hidden.len() + 2);
        sizes.push(input);
        sizes.extend_from_slice(hidden);
        sizes.push(output);
        Self::new(sizes, head)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_sizes.len() < 2 {
            return Err(Error::InvalidSpec(format!(
                "need at least 2 layer sizes, got {}",
                self.layer_sizes.len()
            )));
        }
        if let Some(pos) = self.layer_sizes.iter().position(|&s| s == 0) {
            return Err(Error::InvalidSpec(format!("layer {pos} has size 0")));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().expect("validated spec")
    }

    pub fn num_layers(&self) -> usize {
        self.layer_sizes.len() - 1
    }

    pub fn param_count(&self) -> usize {
        self.layer_sizes
            .windows(2)
            .map(|w| w[0] * w[1] + w[1])
            .sum()
    }

    /// Offset of layer `l`'s weight block; its bias block follows at
    /// `offset + out * in`.
    fn layer_offset(&self, layer: usize) -> usize {
        self.layer_sizes[..=layer]
            .windows(2)
            .map(|w| w[0] * w[1] + w[1])
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub values: Vec<f64>,
    pub spec: NetSpec,
}

impl ModelParams {
    pub fn from_values(spec: NetSpec, values: Vec<f64>) -> Result<Self> {
        spec.validate()?;
        ensure_len("model parameters", spec.param_count(), values.len())?;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("model parameters".into()));
        }
        Ok(Self { values, spec })
    }

    pub fn zeros(spec: NetSpec) -> Result<Self> {
        spec.validate()?;
        let n = spec.param_count();
        Ok(Self {
            values: vec![0.0; n],
            spec,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn same_layout(&self, other: &ModelParams) -> bool {
        self.spec == other.spec && self.values.len() == other.values.len()
    }

    /// Euclidean distance between two parameter vectors with the same layout.
    pub fn distance(&self, other: &ModelParams) -> Result<f64> {
        if !self.same_layout(other) {
            return Err(Error::LayoutMismatch);
        }
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt())
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub values: Vec<f64>,
}

impl Gradients {
    pub fn zeros(len: usize) -> Self {
        Self {
            values: vec![0.0; len],
        }
    }

    pub fn zeros_like(params: &ModelParams) -> Self {
        Self::zeros(params.len())
    }

    pub fn scale(&mut self, factor: f64) {
        self.values.iter_mut().for_each(|g| *g *= factor);
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|g| g * g).sum::<f64>().sqrt()
    }

    /// Rescales so the L2 norm does not exceed `max_norm`.
    pub fn clip_norm(&mut self, max_norm: f64) {
        let norm = self.norm();
        if norm > max_norm && norm > 0.0 {
            self.scale(max_norm / norm);
        }
    }
}

/// He-scaled Gaussian weights, zero biases.
pub fn init_net(spec: &NetSpec, seed: u64) -> Result<ModelParams> {
    spec.validate()?;
    let mut rng = seed::rng(seed);
    let mut values = Vec::with_capacity(spec.param_count());
    for w in spec.layer_sizes.windows(2) {
        let (fan_in, fan_out) = (w[0], w[1]);
        let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt())
            .map_err(|e| Error::InvalidSpec(e.to_string()))?;
        values.extend((0..fan_in * fan_out).map(|_| normal.sample(&mut rng)));
        values.extend(std::iter::repeat_n(0.0, fan_out));
    }
    Ok(ModelParams {
        values,
        spec: spec.clone(),
    })
}

/// Intermediate values kept from a forward pass for backpropagation.
#[derive(Debug, Clone)]
pub struct Trace {
    /// `inputs[l]` is the input to layer `l` (post-activation of layer `l-1`).
    inputs: Vec<Vec<f64>>,
    /// Pre-activations of each layer; the last one is the raw output.
    pre: Vec<Vec<f64>>,
}

impl Trace {
    /// Raw (pre-head) output of the network.
    pub fn raw_output(&self) -> &[f64] {
        self.pre.last().expect("trace of a network with at least one layer")
    }
}

pub fn forward_trace(params: &ModelParams, input: &[f64]) -> Result<Trace> {
    let spec = &params.spec;
    ensure_len("network input", spec.input_dim(), input.len())?;
    let n_layers = spec.num_layers();
    let mut inputs = Vec::with_capacity(n_layers);
    let mut pre = Vec::with_capacity(n_layers);
    let mut current = input.to_vec();
    let mut offset = 0;
    for l in 0..n_layers {
        let (n_in, n_out) = (spec.layer_sizes[l], spec.layer_sizes[l + 1]);
        let weights = &params.values[offset..offset + n_in * n_out];
        let bias = &params.values[offset + n_in * n_out..offset + n_in * n_out + n_out];
        offset += n_in * n_out + n_out;

        let z: Vec<f64> = weights
            .chunks_exact(n_in)
            .zip(bias)
            .map(|(row, b)| row.iter().zip(&current).map(|(w, x)| w * x).sum::<f64>() + b)
            .collect();
        let next = if l + 1 < n_layers {
            z.iter().map(|&v| v.max(0.0)).collect()
        } else {
            Vec::new()
        };
        inputs.push(std::mem::replace(&mut current, next));
        pre.push(z);
    }
    Ok(Trace { inputs, pre })
}

/// Raw network output before the head is applied.
pub fn logits(params: &ModelParams, input: &[f64]) -> Result<Vec<f64>> {
    let mut trace = forward_trace(params, input)?;
    Ok(trace.pre.pop().expect("at least one layer"))
}

/// Network output with the configured head applied.
pub fn forward(params: &ModelParams, input: &[f64]) -> Result<Vec<f64>> {
    let raw = logits(params, input)?;
    match params.spec.output_head {
        OutputHead::Linear => Ok(raw),
        OutputHead::Softmax => softmax(&raw),
        OutputHead::Sigmoid => Ok(raw.iter().map(|&v| sigmoid(v)).collect()),
    }
}

/// Backpropagates `grad_raw` (the loss gradient with respect to the raw,
/// pre-head output) through the network. Parameter gradients are
/// accumulated into `grads`; the gradient with respect to the input is
/// returned.
pub fn backward(
    params: &ModelParams,
    trace: &Trace,
    grad_raw: &[f64],
    grads: &mut Gradients,
) -> Result<Vec<f64>> {
    let spec = &params.spec;
    ensure_len("output gradient", spec.output_dim(), grad_raw.len())?;
    ensure_len("gradient buffer", params.len(), grads.values.len())?;
    let mut delta = grad_raw.to_vec();
    for l in (0..spec.num_layers()).rev() {
        let (n_in, n_out) = (spec.layer_sizes[l], spec.layer_sizes[l + 1]);
        let offset = spec.layer_offset(l);
        let a_prev = &trace.inputs[l];
        let weights = &params.values[offset..offset + n_in * n_out];
        {
            let (gw, gb) = grads.values[offset..offset + n_in * n_out + n_out].split_at_mut(n_in * n_out);
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                gw[o * n_in..(o + 1) * n_in]
                    .iter_mut()
                    .zip(a_prev)
                    .for_each(|(g, a)| *g += d * a);
                gb[o] += d;
            }
        }
        let mut prev = vec![0.0; n_in];
        for (row, &d) in weights.chunks_exact(n_in).zip(&delta) {
            if d != 0.0 {
                prev.iter_mut().zip(row).for_each(|(p, w)| *p += w * d);
            }
        }
        if l > 0 {
            // ReLU derivative of the previous layer's pre-activation.
            prev.iter_mut()
                .zip(&trace.pre[l - 1])
                .for_each(|(p, &z)| {
                    if z <= 0.0 {
                        *p = 0.0
                    }
                });
        }
        delta = prev;
    }
    Ok(delta)
}

/// Mean cross-entropy of softmax(logits) against integer labels, with the
/// gradient from backpropagation. The head setting is ignored: the loss
/// always reads the raw logits.
pub fn loss_and_grad(
    params: &ModelParams,
    inputs: &[&[f64]],
    labels: &[usize],
) -> Result<(f64, Gradients)> {
    if inputs.is_empty() {
        return Err(Error::Empty("batch"));
    }
    ensure_len("batch labels", inputs.len(), labels.len())?;
    let classes = params.spec.output_dim();
    let mut grads = Gradients::zeros_like(params);
    let mut loss = 0.0;
    let scale = 1.0 / inputs.len() as f64;
    for (x, &y) in inputs.iter().zip(labels) {
        if y >= classes {
            return Err(Error::LabelOutOfRange { label: y, classes });
        }
        let trace = forward_trace(params, x)?;
        let z = trace.raw_output();
        let lse = log_sum_exp(z);
        loss += lse - z[y];
        let mut dz: Vec<f64> = z.iter().map(|&v| (v - lse).exp() * scale).collect();
        dz[y] -= scale;
        backward(params, &trace, &dz, &mut grads)?;
    }
    let loss = loss * scale;
    if !loss.is_finite() {
        return Err(Error::NonFinite("cross-entropy loss".into()));
    }
    Ok((loss, grads))
}

pub fn sgd_step(params: &ModelParams, grads: &Gradients, lr: f64) -> Result<ModelParams> {
    let mut next = params.clone();
    sgd_step_in_place(&mut next, grads, lr)?;
    Ok(next)
}

/// `values[i] -= lr * grads[i]`. Leaves `params` untouched on error.
pub fn sgd_step_in_place(params: &mut ModelParams, grads: &Gradients, lr: f64) -> Result<()> {
    if params.len() != grads.values.len() {
        return Err(Error::LayoutMismatch);
    }
    if !lr.is_finite() || lr < 0.0 {
        return Err(Error::InvalidArgument(format!("learning rate {lr}")));
    }
    if grads.values.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("gradients".into()));
    }
    if lr == 0.0 {
        return Ok(());
    }
    let updated: Vec<f64> = params
        .values
        .iter()
        .zip(&grads.values)
        .map(|(p, g)| p - lr * g)
        .collect();
    if updated.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("parameters after SGD step".into()));
    }
    params.values = updated;
    Ok(())
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + v.iter().map(|&x| (x - max).exp()).sum::<f64>().ln()
}

/// Max-subtracted softmax.
pub fn softmax(v: &[f64]) -> Result<Vec<f64>> {
    if v.is_empty() {
        return Err(Error::Empty("softmax input"));
    }
    if v.iter().any(|x| x.is_nan()) {
        return Err(Error::NonFinite("softmax input".into()));
    }
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::NonFinite("softmax input".into()));
    }
    let exps: Vec<f64> = v.iter().map(|&x| (x - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / sum).collect())
}

/// Vector-Jacobian product of softmax: given `probs = softmax(z)` and
/// `grad_probs = dL/dprobs`, returns `dL/dz`.
pub fn softmax_backward(probs: &[f64], grad_probs: &[f64]) -> Vec<f64> {
    let dot: f64 = probs.iter().zip(grad_probs).map(|(p, g)| p * g).sum();
    probs
        .iter()
        .zip(grad_probs)
        .map(|(p, g)| p * (g - dot))
        .collect()
}

pub fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &x)| {
            if x > bv {
                (i, x)
            } else {
                (bi, bv)
            }
        })
        .0
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn spec(sizes: &[usize], head: OutputHead) -> NetSpec {
        NetSpec::new(sizes.to_vec(), head).unwrap()
    }

    /// Straight-line forward pass used as an oracle: explicit matrices,
    /// no shared code with `forward_trace`.
    fn oracle_forward(params: &ModelParams, input: &[f64]) -> Vec<f64> {
        let sizes = &params.spec.layer_sizes;
        let mut a = input.to_vec();
        let mut off = 0;
        for l in 0..sizes.len() - 1 {
            let (n_in, n_out) = (sizes[l], sizes[l + 1]);
            let mut w = vec![vec![0.0; n_in]; n_out];
            for (o, row) in w.iter_mut().enumerate() {
                for (i, cell) in row.iter_mut().enumerate() {
                    *cell = params.values[off + o * n_in + i];
                }
            }
            off += n_in * n_out;
            let b = params.values[off..off + n_out].to_vec();
            off += n_out;
            let mut z = b;
            for o in 0..n_out {
                for i in 0..n_in {
                    z[o] += w[o][i] * a[i];
                }
            }
            if l + 2 < sizes.len() {
                for v in &mut z {
                    if *v < 0.0 {
                        *v = 0.0;
                    }
                }
            }
            a = z;
        }
        a
    }

    #[test]
    fn param_count_formula() {
        let p = init_net(&spec(&[2, 4, 3], OutputHead::Softmax), 42).unwrap();
        assert_eq!(p.len(), 27);
        let q = init_net(&spec(&[5, 5], OutputHead::Linear), 7).unwrap();
        assert_eq!(q.len(), 30);
        assert!(q.is_finite());
    }

    #[test]
    fn init_is_deterministic() {
        let s = spec(&[2, 4, 3], OutputHead::Softmax);
        let a = init_net(&s, 42).unwrap();
        let b = init_net(&s, 42).unwrap();
        assert_eq!(a.values, b.values);
        assert_ne!(a.values, init_net(&s, 43).unwrap().values);
        // biases are zero
        assert!(a.values[8..12].iter().all(|&v| v == 0.0));
        assert!(a.values[24..27].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn invalid_specs_rejected() {
        assert!(NetSpec::new(vec![3], OutputHead::Linear).is_err());
        assert!(NetSpec::new(vec![3, 0, 2], OutputHead::Linear).is_err());
        let bad = NetSpec {
            layer_sizes: vec![],
            hidden_activation: Activation::Relu,
            output_head: OutputHead::Linear,
        };
        assert!(init_net(&bad, 1).is_err());
    }

    #[test]
    fn zero_params_give_zero_output() {
        let p = ModelParams::zeros(spec(&[3, 5, 2], OutputHead::Linear)).unwrap();
        assert_eq!(forward(&p, &[1.0, -2.0, 3.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let s = spec(&[3, 3], OutputHead::Linear);
        let mut values = vec![0.0; 12];
        for i in 0..3 {
            values[i * 3 + i] = 1.0;
        }
        let p = ModelParams::from_values(s, values).unwrap();
        assert_eq!(forward(&p, &[0.5, -1.5, 2.0]).unwrap(), vec![0.5, -1.5, 2.0]);
    }

    #[test]
    fn forward_matches_matrix_oracle() {
        let mut rng = seed::rng(5);
        for case in 0..20 {
            let sizes = [3, 7, 5, 4];
            let p = init_net(&spec(&sizes, OutputHead::Linear), case).unwrap();
            let mut p = p;
            p.values.iter_mut().for_each(|v| *v += rng.random_range(-0.1..0.1));
            let x: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
            let got = forward(&p, &x).unwrap();
            let want = oracle_forward(&p, &x);
            for (g, w) in got.iter().zip(&want) {
                assert!((g - w).abs() < 1e-12, "{g} vs {w}");
            }
        }
    }

    #[test]
    fn softmax_head_sums_to_one() {
        let p = init_net(&spec(&[2, 8, 5], OutputHead::Softmax), 3).unwrap();
        let out = forward(&p, &[0.3, -0.7]).unwrap();
        assert!((out.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn forward_rejects_wrong_input_len() {
        let p = init_net(&spec(&[2, 3], OutputHead::Linear), 1).unwrap();
        assert!(matches!(
            forward(&p, &[1.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn uniform_logits_give_ln_classes() {
        let p = ModelParams::zeros(spec(&[4, 10], OutputHead::Softmax)).unwrap();
        let x = [1.0, 2.0, 3.0, 4.0];
        let (loss, _) = loss_and_grad(&p, &[&x], &[7]).unwrap();
        assert!((loss - 10f64.ln()).abs() < 1e-12);
        assert!((loss - 2.302585).abs() < 1e-6);
    }

    #[test]
    fn confident_correct_prediction_has_zero_loss() {
        // single linear layer, bias pushes class 1 to +1000
        let s = spec(&[2, 3], OutputHead::Softmax);
        let mut values = vec![0.0; 9];
        values[7] = 1000.0;
        let p = ModelParams::from_values(s, values).unwrap();
        let (loss, grads) = loss_and_grad(&p, &[&[0.1, 0.2]], &[1]).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grads.values.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn loss_errors() {
        let p = init_net(&spec(&[2, 3], OutputHead::Softmax), 1).unwrap();
        assert_eq!(loss_and_grad(&p, &[], &[]).unwrap_err(), Error::Empty("batch"));
        assert!(matches!(
            loss_and_grad(&p, &[&[0.0, 0.0]], &[3]),
            Err(Error::LabelOutOfRange { label: 3, classes: 3 })
        ));
    }

    #[test]
    fn cross_entropy_grad_matches_finite_differences() {
        let mut rng = seed::rng(99);
        let p = init_net(&spec(&[3, 4, 2], OutputHead::Softmax), 17).unwrap();
        let xs: Vec<Vec<f64>> = (0..6)
            .map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let refs: Vec<&[f64]> = xs.iter().map(|x| x.as_slice()).collect();
        let ys: Vec<usize> = (0..6).map(|i| i % 2).collect();
        let (_, grads) = loss_and_grad(&p, &refs, &ys).unwrap();
        let eps = 1e-5;
        let mut max_rel: f64 = 0.0;
        for i in 0..p.len() {
            let mut plus = p.clone();
            plus.values[i] += eps;
            let mut minus = p.clone();
            minus.values[i] -= eps;
            let lp = loss_and_grad(&plus, &refs, &ys).unwrap().0;
            let lm = loss_and_grad(&minus, &refs, &ys).unwrap().0;
            let fd = (lp - lm) / (2.0 * eps);
            let a = grads.values[i];
            max_rel = max_rel.max((a - fd).abs() / a.abs().max(fd.abs()).max(1e-6));
        }
        assert!(max_rel < 1e-5, "max relative error {max_rel}");
    }

    #[test]
    fn sgd_step_arithmetic() {
        let s = spec(&[1, 1], OutputHead::Linear);
        let p = ModelParams::from_values(s, vec![1.0, 2.0]).unwrap();
        let g = Gradients {
            values: vec![0.5, 0.5],
        };
        let next = sgd_step(&p, &g, 0.1).unwrap();
        assert!((next.values[0] - 0.95).abs() < 1e-15);
        assert!((next.values[1] - 1.95).abs() < 1e-15);
        assert_eq!(sgd_step(&p, &g, 0.0).unwrap(), p);

        let twice = sgd_step(&sgd_step(&p, &g, 0.1).unwrap(), &g, 0.1).unwrap();
        let doubled = sgd_step(&p, &g, 0.2).unwrap();
        for (a, b) in twice.values.iter().zip(&doubled.values) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn sgd_step_errors() {
        let s = spec(&[1, 1], OutputHead::Linear);
        let p = ModelParams::from_values(s, vec![1.0, 2.0]).unwrap();
        let short = Gradients { values: vec![1.0] };
        assert_eq!(sgd_step(&p, &short, 0.1).unwrap_err(), Error::LayoutMismatch);
        let nan = Gradients {
            values: vec![f64::NAN, 0.0],
        };
        assert!(matches!(sgd_step(&p, &nan, 0.1), Err(Error::NonFinite(_))));
    }

    #[test]
    fn softmax_examples() {
        let u = softmax(&[0.0, 0.0, 0.0]).unwrap();
        assert!(u.iter().all(|&p| (p - 1.0 / 3.0).abs() < 1e-15));
        let r = softmax(&[1f64.ln(), 2f64.ln(), 3f64.ln()]).unwrap();
        for (got, want) in r.iter().zip([1.0 / 6.0, 2.0 / 6.0, 3.0 / 6.0]) {
            assert!((got - want).abs() < 1e-12);
        }
        assert!(softmax(&[]).is_err());
        assert!(softmax(&[0.0, f64::NAN]).is_err());
    }

    #[test]
    fn softmax_backward_matches_finite_differences() {
        let z = [0.3, -1.2, 0.8, 0.1];
        let g = [1.0, -0.5, 2.0, 0.25];
        let p = softmax(&z).unwrap();
        let analytic = softmax_backward(&p, &g);
        let eps = 1e-6;
        for i in 0..z.len() {
            let mut zp = z;
            zp[i] += eps;
            let mut zm = z;
            zm[i] -= eps;
            let f = |v: &[f64]| -> f64 {
                softmax(v).unwrap().iter().zip(&g).map(|(a, b)| a * b).sum()
            };
            let fd = (f(&zp) - f(&zm)) / (2.0 * eps);
            assert!((fd - analytic[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn argmax_first_max() {
        assert_eq!(argmax(&[0.1, 0.7, 0.7, 0.2]), 1);
        assert_eq!(argmax(&[-1.0]), 0);
    }
}
