//! Small dense networks with hand-written reverse-mode differentiation.
//!
//! Parameters live in one flat buffer (per layer: row-major weights followed
//! by the bias), so a gradient is itself a [`NetParams`] of the same shape and
//! optimizers work on plain slices.

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::rng::Rng;
use crate::scalar::Scalar;

/// Hidden-layer nonlinearity. The output layer is always linear.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Swish,
    Tanh,
    Identity,
}

impl Activation {
    #[inline]
    fn apply<S: Scalar>(self, z: S) -> S {
        match self {
            Activation::Swish => z * z.sigmoid(),
            Activation::Tanh => z.tanh(),
            Activation::Identity => z,
        }
    }

    /// Value, first and second derivative at `z`.
    #[inline]
    fn eval2<S: Scalar>(self, z: S) -> (S, S, S) {
        match self {
            Activation::Swish => {
                let s = z.sigmoid();
                let ds = s * (S::one() - s);
                let d1 = s + z * ds;
                let d2 = ds * (S::two() + z * (S::one() - S::two() * s));
                (z * s, d1, d2)
            }
            Activation::Tanh => {
                let t = z.tanh();
                let d1 = S::one() - t * t;
                (t, d1, -S::two() * t * d1)
            }
            Activation::Identity => (z, S::one(), S::zero()),
        }
    }

    /// Value and first derivative at `z`.
    #[inline]
    fn eval1<S: Scalar>(self, z: S) -> (S, S) {
        match self {
            Activation::Swish => {
                let s = z.sigmoid();
                (z * s, s + z * s * (S::one() - s))
            }
            Activation::Tanh => {
                let t = z.tanh();
                (t, S::one() - t * t)
            }
            Activation::Identity => (z, S::one()),
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "swish" => Ok(Activation::Swish),
            "tanh" => Ok(Activation::Tanh),
            "identity" => Ok(Activation::Identity),
            other => Err(invalid(format!("unknown activation `{other}`"))),
        }
    }
}

/// Weights and biases of a dense feed-forward network.
#[derive(Debug, Clone, PartialEq)]
pub struct NetParams<S> {
    sizes: Vec<usize>,
    activation: Activation,
    params: Vec<S>,
}

/// Pre- and post-activation values of one forward pass.
struct Trace<S> {
    /// `post[0]` is the input, `post[k]` the output of layer `k`.
    post: Vec<Vec<S>>,
    /// Activation derivative at each hidden pre-activation.
    deriv: Vec<Vec<S>>,
}

fn check_sizes(sizes: &[usize]) -> Result<()> {
    if sizes.len() < 2 {
        return Err(invalid("a network needs at least an input and an output size"));
    }
    if sizes.iter().any(|&s| s == 0) {
        return Err(invalid("layer sizes must be positive"));
    }
    Ok(())
}

/// Dot product with four independent accumulators.
#[inline]
fn dot<S: Scalar>(a: &[S], b: &[S]) -> S {
    let mut acc = [S::zero(); 4];
    let (ca, ra) = (a.chunks_exact(4), a.len() - a.len() % 4);
    for (x, y) in ca.zip(b.chunks_exact(4)) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut tail = S::zero();
    for i in ra..a.len().min(b.len()) {
        tail += a[i] * b[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

fn param_count(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| w[1] * w[0] + w[1]).sum()
}

impl<S: Scalar> NetParams<S> {
    /// All-zero network with the given layer sizes.
    pub fn zeros(layer_sizes: &[usize], activation: Activation) -> Result<Self> {
        check_sizes(layer_sizes)?;
        Ok(NetParams {
            sizes: layer_sizes.to_vec(),
            activation,
            params: vec![S::zero(); param_count(layer_sizes)],
        })
    }

    /// He-style initialization: weights ~ Normal(0, 2 / fan_in), zero biases.
    pub fn init(layer_sizes: &[usize], activation: Activation, rng: &mut Rng) -> Result<Self> {
        let mut net = Self::zeros(layer_sizes, activation)?;
        for k in 0..net.n_layers() {
            let std = (2.0 / net.sizes[k] as f64).sqrt();
            for w in net.weight_mut(k) {
                let z: f64 = rng.sample(StandardNormal);
                *w = S::of(std * z);
            }
        }
        Ok(net)
    }

    /// Builds a network from explicit `(weights, bias)` pairs, weights row-major `out x in`.
    pub fn from_layers(layers: Vec<(Vec<S>, Vec<S>)>, activation: Activation) -> Result<Self> {
        let first = layers.first().ok_or_else(|| invalid("no layers"))?;
        if first.1.is_empty() || first.0.len() % first.1.len() != 0 {
            return Err(invalid("layer 0 weight shape does not match its bias"));
        }
        let mut sizes = vec![first.0.len() / first.1.len()];
        let mut params = Vec::new();
        for (k, (w, b)) in layers.into_iter().enumerate() {
            let fan_in = *sizes.last().unwrap();
            if b.is_empty() || w.len() != b.len() * fan_in {
                return Err(invalid(format!(
                    "layer {k}: weight length {} is not {} x {fan_in}",
                    w.len(),
                    b.len()
                )));
            }
            sizes.push(b.len());
            params.extend(w);
            params.extend(b);
        }
        let net = NetParams { sizes, activation, params };
        net.check_finite()?;
        Ok(net)
    }

    /// Same shape, every entry zero. Used as a gradient accumulator.
    pub fn zeros_like(&self) -> Self {
        NetParams {
            sizes: self.sizes.clone(),
            activation: self.activation,
            params: vec![S::zero(); self.params.len()],
        }
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn n_layers(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[S] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [S] {
        &mut self.params
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.sizes == other.sizes
    }

    fn offset(&self, k: usize) -> usize {
        param_count(&self.sizes[..=k])
    }

    /// Weight matrix of layer `k`, row-major `out x in`.
    pub fn weight(&self, k: usize) -> &[S] {
        let o = self.offset(k);
        &self.params[o..o + self.sizes[k + 1] * self.sizes[k]]
    }

    pub fn weight_mut(&mut self, k: usize) -> &mut [S] {
        let o = self.offset(k);
        let n = self.sizes[k + 1] * self.sizes[k];
        &mut self.params[o..o + n]
    }

    pub fn bias(&self, k: usize) -> &[S] {
        let o = self.offset(k) + self.sizes[k + 1] * self.sizes[k];
        &self.params[o..o + self.sizes[k + 1]]
    }

    pub fn bias_mut(&mut self, k: usize) -> &mut [S] {
        let o = self.offset(k) + self.sizes[k + 1] * self.sizes[k];
        let n = self.sizes[k + 1];
        &mut self.params[o..o + n]
    }

    pub fn check_finite(&self) -> Result<()> {
        if self.params.iter().all(|p| p.is_finite()) {
            Ok(())
        } else {
            Err(invalid("network parameters contain non-finite values"))
        }
    }

    /// Euclidean norm of the flat parameter vector.
    pub fn norm(&self) -> S {
        self.params.iter().map(|&p| p * p).sum::<S>().sqrt()
    }

    fn check_input(&self, input: &[S]) -> Result<()> {
        if input.len() != self.input_dim() {
            return Err(invalid(format!(
                "input has length {}, network expects {}",
                input.len(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    fn check_scalar(&self) -> Result<()> {
        if self.output_dim() != 1 {
            return Err(invalid(format!(
                "gradient requires a scalar-output network, output dim is {}",
                self.output_dim()
            )));
        }
        Ok(())
    }

    /// `out = W_k * a + b_k`
    #[inline]
    fn affine(&self, k: usize, a: &[S], out: &mut Vec<S>) {
        self.matvec(k, a, out);
        for (o, &b) in out.iter_mut().zip(self.bias(k)) {
            *o += b;
        }
    }

    /// `out = W_k * a`
    #[inline]
    fn matvec(&self, k: usize, a: &[S], out: &mut Vec<S>) {
        let n_in = self.sizes[k];
        out.clear();
        out.extend(self.weight(k).chunks_exact(n_in).map(|row| dot(row, a)));
    }

    /// `out += W_k^T * delta`
    #[inline]
    fn affine_transpose(&self, k: usize, delta: &[S], out: &mut [S]) {
        let n_in = self.sizes[k];
        let o = self.offset(k);
        let w = &self.params[o..o + self.sizes[k + 1] * n_in];
        for (row, &d) in w.chunks_exact(n_in).zip(delta) {
            if d != S::zero() {
                for (oi, &wji) in out.iter_mut().zip(row) {
                    *oi += wji * d;
                }
            }
        }
    }

    fn trace(&self, input: &[S]) -> Trace<S> {
        let n = self.n_layers();
        let mut post = Vec::with_capacity(n + 1);
        let mut deriv = Vec::with_capacity(n);
        post.push(input.to_vec());
        for k in 0..n {
            let mut z = Vec::with_capacity(self.sizes[k + 1]);
            self.affine(k, &post[k], &mut z);
            if k + 1 < n {
                let mut d = Vec::with_capacity(z.len());
                for v in z.iter_mut() {
                    let (a, da) = self.activation.eval1(*v);
                    *v = a;
                    d.push(da);
                }
                deriv.push(d);
            }
            post.push(z);
        }
        Trace { post, deriv }
    }

    /// Evaluates the network.
    pub fn forward(&self, input: &[S]) -> Result<Vec<S>> {
        self.check_input(input)?;
        Ok(self.forward_unchecked(input))
    }

    fn forward_unchecked(&self, input: &[S]) -> Vec<S> {
        let n = self.n_layers();
        let mut a = input.to_vec();
        let mut z = Vec::new();
        for k in 0..n {
            self.affine(k, &a, &mut z);
            if k + 1 < n {
                for v in z.iter_mut() {
                    *v = self.activation.apply(*v);
                }
            }
            std::mem::swap(&mut a, &mut z);
        }
        a
    }

    /// Output of a scalar network. Panics on a dimension mismatch.
    pub fn eval_scalar(&self, input: &[S]) -> S {
        assert_eq!(input.len(), self.input_dim(), "network input dimension");
        self.forward_unchecked(input)[0]
    }

    /// Reverse sweep for a scalar output with upstream derivative `seed`.
    /// Adds `seed * d out / d params` into `param_grad` when given and writes
    /// `seed * d out / d input` into `input_grad` when given.
    fn backward(
        &self,
        trace: &Trace<S>,
        seed: S,
        mut param_grad: Option<&mut [S]>,
        input_grad: Option<&mut [S]>,
    ) {
        let n = self.n_layers();
        let mut delta = vec![seed];
        for k in (0..n).rev() {
            let n_in = self.sizes[k];
            let a_prev = &trace.post[k];
            if let Some(g) = param_grad.as_deref_mut() {
                let o = self.offset(k);
                let n_w = self.sizes[k + 1] * n_in;
                let (gw, rest) = g[o..].split_at_mut(n_w);
                for (row, &d) in gw.chunks_exact_mut(n_in).zip(&delta) {
                    if d != S::zero() {
                        for (gi, &ai) in row.iter_mut().zip(a_prev) {
                            *gi += d * ai;
                        }
                    }
                }
                for (gb, &d) in rest.iter_mut().zip(&delta) {
                    *gb += d;
                }
            }
            if k == 0 && input_grad.is_none() {
                break;
            }
            let mut prev = vec![S::zero(); n_in];
            self.affine_transpose(k, &delta, &mut prev);
            if k > 0 {
                for (p, &d) in prev.iter_mut().zip(&trace.deriv[k - 1]) {
                    *p *= d;
                }
            }
            delta = prev;
        }
        if let Some(gi) = input_grad {
            gi.copy_from_slice(&delta);
        }
    }

    /// Gradient of the scalar output with respect to every weight and bias.
    pub fn grad_params(&self, input: &[S]) -> Result<NetParams<S>> {
        self.check_input(input)?;
        self.check_scalar()?;
        let mut g = self.zeros_like();
        let trace = self.trace(input);
        self.backward(&trace, S::one(), Some(&mut g.params), None);
        Ok(g)
    }

    /// Gradient of the scalar output with respect to the input vector.
    pub fn grad_input(&self, input: &[S]) -> Result<Vec<S>> {
        self.check_input(input)?;
        self.check_scalar()?;
        let mut g = vec![S::zero(); input.len()];
        let trace = self.trace(input);
        self.backward(&trace, S::one(), None, Some(&mut g));
        Ok(g)
    }

    /// Scalar output and its input gradient in one pass. Panics on shape errors.
    pub fn value_and_grad_input(&self, input: &[S], grad: &mut [S]) -> S {
        assert_eq!(input.len(), self.input_dim(), "network input dimension");
        let trace = self.trace(input);
        self.backward(&trace, S::one(), None, Some(grad));
        trace.post[self.n_layers()][0]
    }

    /// Adds `scale * d out / d params` into `acc` and returns the output.
    /// Panics on shape errors.
    pub fn accumulate_grad_params(&self, input: &[S], scale: S, acc: &mut [S]) -> S {
        assert_eq!(input.len(), self.input_dim(), "network input dimension");
        assert_eq!(acc.len(), self.params.len(), "gradient buffer length");
        let trace = self.trace(input);
        self.backward(&trace, scale, Some(acc), None);
        trace.post[self.n_layers()][0]
    }

    /// Directional input derivative `D(t) = <grad_input f(t), direction>` and
    /// `scale * dD / d params` added into `acc` (forward-over-reverse).
    ///
    /// This is the parameter gradient of a gradient-matching loss: for
    /// `||grad_input f + g||^2` use `direction = grad_input f + g`, `scale = 2`.
    pub fn directional_derivative_param_grad(
        &self,
        input: &[S],
        direction: &[S],
        scale: S,
        acc: &mut [S],
    ) -> Result<S> {
        self.check_input(input)?;
        self.check_scalar()?;
        if direction.len() != input.len() || acc.len() != self.params.len() {
            return Err(invalid("direction or accumulator has the wrong length"));
        }
        let n = self.n_layers();
        // forward pass carrying tangents
        let mut post = vec![input.to_vec()];
        let mut tan = vec![direction.to_vec()];
        let mut pre = Vec::with_capacity(n);
        let mut pre_tan = Vec::with_capacity(n);
        let mut d1s = Vec::with_capacity(n);
        let mut d2s = Vec::with_capacity(n);
        for k in 0..n {
            let mut z = Vec::new();
            self.affine(k, &post[k], &mut z);
            let mut zt = Vec::new();
            self.matvec(k, &tan[k], &mut zt);
            if k + 1 < n {
                let mut a = Vec::with_capacity(z.len());
                let mut at = Vec::with_capacity(z.len());
                let mut d1 = Vec::with_capacity(z.len());
                let mut d2 = Vec::with_capacity(z.len());
                for (&zi, &zti) in z.iter().zip(&zt) {
                    let (v, g1, g2) = self.activation.eval2(zi);
                    a.push(v);
                    at.push(g1 * zti);
                    d1.push(g1);
                    d2.push(g2);
                }
                post.push(a);
                tan.push(at);
                d1s.push(d1);
                d2s.push(d2);
            } else {
                post.push(z.clone());
                tan.push(zt.clone());
            }
            pre.push(z);
            pre_tan.push(zt);
        }
        let value = tan[n][0];

        // reverse pass over the tangent output
        let mut adj_zt = vec![scale];
        let mut adj_z = vec![S::zero()];
        for k in (0..n).rev() {
            let n_in = self.sizes[k];
            let o = self.offset(k);
            let n_w = self.sizes[k + 1] * n_in;
            {
                let (gw, gb) = acc[o..o + n_w + self.sizes[k + 1]].split_at_mut(n_w);
                for (j, row) in gw.chunks_exact_mut(n_in).enumerate() {
                    let (dt, dz) = (adj_zt[j], adj_z[j]);
                    for ((gi, &ti), &ai) in row.iter_mut().zip(&tan[k]).zip(&post[k]) {
                        *gi += dt * ti + dz * ai;
                    }
                    gb[j] += dz;
                }
            }
            if k == 0 {
                break;
            }
            let mut adj_tan = vec![S::zero(); n_in];
            let mut adj_post = vec![S::zero(); n_in];
            self.affine_transpose(k, &adj_zt, &mut adj_tan);
            self.affine_transpose(k, &adj_z, &mut adj_post);
            let (d1, d2, zt) = (&d1s[k - 1], &d2s[k - 1], &pre_tan[k - 1]);
            let mut next_zt = Vec::with_capacity(n_in);
            let mut next_z = Vec::with_capacity(n_in);
            for i in 0..n_in {
                next_zt.push(d1[i] * adj_tan[i]);
                next_z.push(d2[i] * zt[i] * adj_tan[i] + d1[i] * adj_post[i]);
            }
            adj_zt = next_zt;
            adj_z = next_z;
        }
        Ok(value)
    }

    pub fn to_document(&self) -> NetDocument {
        NetDocument {
            format: NET_FORMAT.to_string(),
            layer_sizes: self.sizes.clone(),
            activation: self.activation,
            weights: (0..self.n_layers())
                .map(|k| self.weight(k).iter().map(|w| w.as_f64()).collect())
                .collect(),
            biases: (0..self.n_layers())
                .map(|k| self.bias(k).iter().map(|b| b.as_f64()).collect())
                .collect(),
        }
    }

    pub fn from_document(doc: &NetDocument) -> Result<Self> {
        if doc.format != NET_FORMAT {
            return Err(invalid(format!("unsupported network format `{}`", doc.format)));
        }
        check_sizes(&doc.layer_sizes)?;
        if doc.weights.len() != doc.layer_sizes.len() - 1 || doc.biases.len() != doc.weights.len() {
            return Err(invalid("layer count does not match layer_sizes"));
        }
        let layers = doc
            .weights
            .iter()
            .zip(&doc.biases)
            .map(|(w, b)| {
                (
                    w.iter().map(|&v| S::of(v)).collect(),
                    b.iter().map(|&v| S::of(v)).collect(),
                )
            })
            .collect();
        let net = Self::from_layers(layers, doc.activation)?;
        if net.sizes != doc.layer_sizes {
            return Err(invalid("weight shapes do not match layer_sizes"));
        }
        Ok(net)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&self.to_document())?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Self::from_document(&serde_json::from_str(s)?)
    }
}

pub const NET_FORMAT: &str = "unle-net/1";

/// Self-describing checkpoint layout of a [`NetParams`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NetDocument {
    pub format: String,
    pub layer_sizes: Vec<usize>,
    pub activation: Activation,
    /// Row-major `out x in` weights, one array per layer.
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

/// Adam hyper-parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { learning_rate: 0.01, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

impl AdamConfig {
    pub fn with_learning_rate(learning_rate: f64) -> Self {
        AdamConfig { learning_rate, ..Default::default() }
    }
}

/// Moment accumulators of Adam, minimizing the objective whose gradient is supplied.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<S> {
    pub config: AdamConfig,
    m: Vec<S>,
    v: Vec<S>,
    step: u64,
}

impl<S: Scalar> AdamState<S> {
    pub fn new(n_params: usize, config: AdamConfig) -> Self {
        AdamState { config, m: vec![S::zero(); n_params], v: vec![S::zero(); n_params], step: 0 }
    }

    pub fn for_net(net: &NetParams<S>, config: AdamConfig) -> Self {
        Self::new(net.n_params(), config)
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self) -> &[S] {
        &self.m
    }

    pub fn second_moment(&self) -> &[S] {
        &self.v
    }

    /// One bias-corrected Adam update of `params` in place.
    pub fn step(&mut self, params: &mut [S], grad: &[S]) -> Result<()> {
        if params.len() != self.m.len() || grad.len() != self.m.len() {
            return Err(invalid(format!(
                "Adam state has {} entries, got params {} and gradient {}",
                self.m.len(),
                params.len(),
                grad.len()
            )));
        }
        self.step += 1;
        let c = &self.config;
        let (b1, b2) = (S::of(c.beta1), S::of(c.beta2));
        let t = self.step as i32;
        let bc1 = S::one() - S::of(c.beta1.powi(t));
        let bc2 = S::one() - S::of(c.beta2.powi(t));
        let (lr, eps) = (S::of(c.learning_rate), S::of(c.eps));
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = b1 * self.m[i] + (S::one() - b1) * g;
            self.v[i] = b2 * self.v[i] + (S::one() - b2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        Ok(())
    }
}

/// Functional form of [`AdamState::step`] on networks.
pub fn adam_step<S: Scalar>(
    state: &AdamState<S>,
    params: &NetParams<S>,
    grad: &NetParams<S>,
) -> Result<(AdamState<S>, NetParams<S>)> {
    if !params.same_shape(grad) {
        return Err(invalid("gradient shape does not match the network"));
    }
    let mut state = state.clone();
    let mut params = params.clone();
    state.step(&mut params.params, &grad.params)?;
    Ok((state, params))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeedTree;

    fn central_diff<F: Fn(&[f64]) -> f64>(f: F, x: &[f64], h: f64) -> Vec<f64> {
        (0..x.len())
            .map(|i| {
                let mut xp = x.to_vec();
                let mut xm = x.to_vec();
                xp[i] += h;
                xm[i] -= h;
                (f(&xp) - f(&xm)) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn init_shapes_match_default_architecture() {
        let mut rng = SeedTree::new(0).rng();
        let net = NetParams::<f64>::init(&[3, 50, 50, 50, 50, 1], Activation::Swish, &mut rng).unwrap();
        let shapes: Vec<(usize, usize)> =
            (0..net.n_layers()).map(|k| (net.bias(k).len(), net.weight(k).len() / net.bias(k).len())).collect();
        assert_eq!(shapes, vec![(50, 3), (50, 50), (50, 50), (50, 50), (1, 50)]);
        assert!((0..5).all(|k| net.bias(k).iter().all(|&b| b == 0.0)));
    }

    #[test]
    fn init_rejects_bad_sizes() {
        let mut rng = SeedTree::new(0).rng();
        assert!(NetParams::<f64>::init(&[3], Activation::Swish, &mut rng).is_err());
        assert!(NetParams::<f64>::init(&[], Activation::Swish, &mut rng).is_err());
        assert!(NetParams::<f64>::init(&[3, 0, 1], Activation::Swish, &mut rng).is_err());
    }

    #[test]
    fn init_is_deterministic() {
        let a = NetParams::<f64>::init(&[4, 8, 1], Activation::Tanh, &mut SeedTree::new(3).rng()).unwrap();
        let b = NetParams::<f64>::init(&[4, 8, 1], Activation::Tanh, &mut SeedTree::new(3).rng()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_weight_net_returns_bias() {
        let mut net = NetParams::<f64>::zeros(&[2, 1], Activation::Identity).unwrap();
        net.bias_mut(0)[0] = 1.5;
        assert_eq!(net.forward(&[3.0, -7.0]).unwrap(), vec![1.5]);
    }

    #[test]
    fn swish_of_zero_is_zero() {
        let net =
            NetParams::<f64>::from_layers(vec![(vec![1.0], vec![0.0]), (vec![1.0], vec![0.0])], Activation::Swish)
                .unwrap();
        assert_eq!(net.forward(&[0.0]).unwrap(), vec![0.0]);
    }

    #[test]
    fn linear_net_is_affine_and_gradients_are_trivial() {
        let w = vec![0.5, -2.0, 3.0];
        let net = NetParams::<f64>::from_layers(vec![(w.clone(), vec![0.25])], Activation::Identity).unwrap();
        let x = [1.0, 2.0, -1.0];
        assert_eq!(net.forward(&x).unwrap()[0], 0.5 - 4.0 - 3.0 + 0.25);
        let gp = net.grad_params(&x).unwrap();
        assert_eq!(gp.weight(0), &x);
        assert_eq!(gp.bias(0), &[1.0]);
        assert_eq!(net.grad_input(&x).unwrap(), w);
    }

    #[test]
    fn zero_input_gives_zero_first_layer_gradient() {
        let mut rng = SeedTree::new(1).rng();
        let net = NetParams::<f64>::init(&[3, 6, 6, 1], Activation::Swish, &mut rng).unwrap();
        let g = net.grad_params(&[0.0; 3]).unwrap();
        assert!(g.weight(0).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn quadratic_energy_is_stationary_at_its_minimum() {
        // swish(u) + swish(-u) = u * tanh(u / 2) with u = x - 1: strict minimum at x = 1
        let net = NetParams::<f64>::from_layers(
            vec![(vec![1.0, -1.0], vec![-1.0, 1.0]), (vec![1.0, 1.0], vec![0.0])],
            Activation::Swish,
        )
        .unwrap();
        let g = net.grad_input(&[1.0]).unwrap();
        assert!(g[0].abs() < 1e-10);
    }

    #[test]
    fn dimension_and_output_checks() {
        let net = NetParams::<f64>::zeros(&[2, 3], Activation::Identity).unwrap();
        assert!(net.forward(&[1.0]).is_err());
        assert!(net.grad_params(&[1.0, 2.0]).is_err());
        assert!(net.grad_input(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = SeedTree::new(11).rng();
        let net = NetParams::<f64>::init(&[4, 50, 50, 50, 50, 1], Activation::Swish, &mut rng).unwrap();
        let x: Vec<f64> = (0..4).map(|i| 0.3 * i as f64 - 0.4).collect();
        let gi = net.grad_input(&x).unwrap();
        let fd = central_diff(|v| net.eval_scalar(v), &x, 1e-5);
        for (a, b) in gi.iter().zip(&fd) {
            assert!((a - b).abs() <= 1e-5 * b.abs().max(1e-3), "{a} vs {b}");
        }
        let gp = net.grad_params(&x).unwrap();
        for idx in (0..net.n_params()).step_by(97) {
            let f = |p: f64| {
                let mut n2 = net.clone();
                n2.params_mut()[idx] = p;
                n2.eval_scalar(&x)
            };
            let p0 = net.params()[idx];
            let fd = (f(p0 + 1e-5) - f(p0 - 1e-5)) / 2e-5;
            let a = gp.params()[idx];
            assert!((a - fd).abs() <= 1e-5 * fd.abs().max(1e-3), "param {idx}: {a} vs {fd}");
        }
    }

    #[test]
    fn directional_param_grad_matches_finite_differences() {
        for act in [Activation::Swish, Activation::Tanh, Activation::Identity] {
            let mut rng = SeedTree::new(5).rng();
            let net = NetParams::<f64>::init(&[3, 7, 5, 1], act, &mut rng).unwrap();
            let x = [0.2, -0.7, 1.1];
            let u = [0.5, 1.0, -0.3];
            let dd = |n: &NetParams<f64>| {
                n.grad_input(&x).unwrap().iter().zip(&u).map(|(g, d)| g * d).sum::<f64>()
            };
            let mut acc = vec![0.0; net.n_params()];
            let value = net.directional_derivative_param_grad(&x, &u, 1.0, &mut acc).unwrap();
            assert!((value - dd(&net)).abs() < 1e-12);
            for idx in 0..net.n_params() {
                let mut np = net.clone();
                let mut nm = net.clone();
                np.params_mut()[idx] += 1e-6;
                nm.params_mut()[idx] -= 1e-6;
                let fd = (dd(&np) - dd(&nm)) / 2e-6;
                assert!((acc[idx] - fd).abs() < 1e-6 * fd.abs().max(1.0), "{act:?} {idx}: {} vs {fd}", acc[idx]);
            }
        }
    }

    #[test]
    fn adam_zero_gradient_keeps_params_and_decays_moments() {
        let mut st = AdamState::<f64>::new(2, AdamConfig::default());
        let mut p = vec![1.0, -2.0];
        st.step(&mut p, &[1.0, 1.0]).unwrap();
        let p1 = p.clone();
        let m1 = st.first_moment().to_vec();
        st.step(&mut p, &[0.0, 0.0]).unwrap();
        assert!(st.first_moment().iter().zip(&m1).all(|(a, b)| (a - 0.9 * b).abs() < 1e-15));
        // bias-corrected first moment is nonzero, so params still move; with a
        // fresh state a zero gradient leaves them untouched
        let mut fresh = AdamState::<f64>::new(2, AdamConfig::default());
        let mut q = p1.clone();
        fresh.step(&mut q, &[0.0, 0.0]).unwrap();
        assert_eq!(q, p1);
        assert_eq!(fresh.step_count(), 1);
    }

    #[test]
    fn adam_constant_gradient_step_approaches_learning_rate() {
        let cfg = AdamConfig::with_learning_rate(0.01);
        let mut st = AdamState::<f64>::new(2, cfg);
        let mut p = vec![0.0, 0.0];
        let g = [3.0, -0.2];
        let mut last = p.clone();
        for _ in 0..2000 {
            last.clone_from(&p);
            st.step(&mut p, &g).unwrap();
        }
        // m_hat = g, v_hat = g^2 exactly for a constant gradient
        assert!((p[0] - last[0] + 0.01).abs() < 1e-9);
        assert!((p[1] - last[1] - 0.01).abs() < 1e-9);
    }

    #[test]
    fn adam_rejects_shape_mismatch() {
        let mut st = AdamState::<f64>::new(2, AdamConfig::default());
        assert!(st.step(&mut [0.0; 3], &[0.0; 3]).is_err());
        let a = NetParams::<f64>::zeros(&[2, 1], Activation::Identity).unwrap();
        let b = NetParams::<f64>::zeros(&[3, 1], Activation::Identity).unwrap();
        assert!(adam_step(&AdamState::for_net(&a, AdamConfig::default()), &a, &b).is_err());
    }

    #[test]
    fn json_round_trip_and_validation() {
        let mut rng = SeedTree::new(2).rng();
        let net = NetParams::<f64>::init(&[2, 4, 1], Activation::Swish, &mut rng).unwrap();
        let back = NetParams::<f64>::from_json(&net.to_json().unwrap()).unwrap();
        assert_eq!(net, back);
        let mut doc = net.to_document();
        doc.layer_sizes = vec![2, 5, 1];
        assert!(NetParams::<f64>::from_document(&doc).is_err());
    }

    #[test]
    fn works_in_single_precision() {
        let mut rng = SeedTree::new(2).rng();
        let net = NetParams::<f32>::init(&[2, 8, 1], Activation::Tanh, &mut rng).unwrap();
        let g = net.grad_input(&[0.1, 0.2]).unwrap();
        let h = 1e-2f32;
        let fd = (net.eval_scalar(&[0.1 + h, 0.2]) - net.eval_scalar(&[0.1 - h, 0.2])) / (2.0 * h);
        assert!((g[0] - fd).abs() < 1e-2);
    }
}
