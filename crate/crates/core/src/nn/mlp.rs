use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::matrix::{axpy, dot, Matrix};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
    Linear,
    Softmax,
}

impl Activation {
    pub fn code(self) -> u32 {
        match self {
            Activation::Tanh => 0,
            Activation::Relu => 1,
            Activation::Linear => 2,
            Activation::Softmax => 3,
        }
    }

    pub fn from_code(code: u32) -> Option<Self> {
        Some(match code {
            0 => Activation::Tanh,
            1 => Activation::Relu,
            2 => Activation::Linear,
            3 => Activation::Softmax,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
            Activation::Linear => "linear",
            Activation::Softmax => "softmax",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InitScheme {
    #[default]
    XavierUniform,
    Orthogonal,
}

/// One dense layer; `weights` is `out x in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer<T> {
    pub weights: Matrix<T>,
    pub biases: Vec<T>,
    pub activation: Activation,
}

impl<T: Scalar> Layer<T> {
    pub fn in_dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.rows()
    }
}

/// Dense feed-forward network.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp<T> {
    layers: Vec<Layer<T>>,
}

/// Per-layer activations recorded by [`Mlp::forward`]: `acts[0]` is the input,
/// `acts[k + 1]` the output of layer `k`.
#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    acts: Vec<Matrix<T>>,
}

impl<T: Scalar> ForwardCache<T> {
    pub fn output(&self) -> &Matrix<T> {
        self.acts.last().expect("cache holds at least the input")
    }

    pub fn input(&self) -> &Matrix<T> {
        &self.acts[0]
    }
}

/// Weight and bias gradients, shaped like the owning network.
#[derive(Debug, Clone, PartialEq)]
pub struct Grads<T> {
    pub layers: Vec<(Matrix<T>, Vec<T>)>,
}

impl<T: Scalar> Grads<T> {
    pub fn zeros_like(net: &Mlp<T>) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| {
                    (
                        Matrix::zeros(l.out_dim(), l.in_dim()),
                        vec![T::zero(); l.out_dim()],
                    )
                })
                .collect(),
        }
    }

    pub fn slices(&self) -> Vec<&[T]> {
        self.layers
            .iter()
            .flat_map(|(w, b)| [w.as_slice(), b.as_slice()])
            .collect()
    }

    fn slices_mut(&mut self) -> impl Iterator<Item = &mut [T]> {
        self.layers
            .iter_mut()
            .flat_map(|(w, b)| [w.as_mut_slice(), b.as_mut_slice()])
    }

    pub fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.slices_mut().zip(other.slices()) {
            axpy(T::one(), b, a);
        }
    }

    pub fn scale(&mut self, factor: T) {
        for s in self.slices_mut() {
            s.iter_mut().for_each(|v| *v *= factor);
        }
    }

    pub fn sq_norm(&self) -> T {
        self.slices().iter().map(|s| dot(s, s)).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.slices()
            .iter()
            .all(|s| s.iter().all(|v| v.is_finite()))
    }

    pub fn max_abs(&self) -> T {
        self.slices()
            .iter()
            .flat_map(|s| s.iter())
            .fold(T::zero(), |m, v| m.max(v.abs()))
    }
}

/// Rescales every gradient set jointly so the global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm<T: Scalar>(grads: &mut [&mut Grads<T>], max_norm: T) -> T {
    let norm = grads.iter().map(|g| g.sq_norm()).sum::<T>().sqrt();
    if norm > max_norm && norm.is_finite() {
        let f = max_norm / norm;
        for g in grads.iter_mut() {
            g.scale(f);
        }
    }
    norm
}

impl<T: Scalar> Mlp<T> {
    /// Builds a network with layer widths `sizes` and one activation per layer.
    pub fn new<R: Rng + ?Sized>(
        sizes: &[usize],
        activations: &[Activation],
        scheme: InitScheme,
        rng: &mut R,
    ) -> Result<Self> {
        if sizes.len() < 2 {
            return Err(Error::shape(
                "a network needs at least an input and an output size",
            ));
        }
        if activations.len() != sizes.len() - 1 {
            return Err(Error::shape(format!(
                "{} activations for {} layers",
                activations.len(),
                sizes.len() - 1
            )));
        }
        if sizes.contains(&0) {
            return Err(Error::shape("layer sizes must be positive"));
        }
        if let Some(pos) = activations.iter().position(|&a| a == Activation::Softmax) {
            if pos + 1 != activations.len() {
                return Err(Error::shape("softmax is only allowed on the output layer"));
            }
        }
        let layers = sizes
            .windows(2)
            .zip(activations)
            .map(|(w, &activation)| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let weights = match scheme {
                    InitScheme::XavierUniform => xavier_uniform(fan_out, fan_in, rng),
                    InitScheme::Orthogonal => orthogonal(fan_out, fan_in, rng),
                };
                Layer {
                    weights,
                    biases: vec![T::zero(); fan_out],
                    activation,
                }
            })
            .collect();
        Ok(Self { layers })
    }

    /// Assembles a network from explicit layers, checking that shapes chain.
    pub fn from_layers(layers: Vec<Layer<T>>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::shape("empty layer list"));
        }
        for (k, pair) in layers.windows(2).enumerate() {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(Error::shape(format!(
                    "layer {k} outputs {} but layer {} expects {}",
                    pair[0].out_dim(),
                    k + 1,
                    pair[1].in_dim()
                )));
            }
        }
        for (k, l) in layers.iter().enumerate() {
            if l.biases.len() != l.out_dim() {
                return Err(Error::shape(format!("layer {k} bias length mismatch")));
            }
            if l.activation == Activation::Softmax && k + 1 != layers.len() {
                return Err(Error::shape("softmax is only allowed on the output layer"));
            }
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer<T>] {
        &mut self.layers
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.layers[0].in_dim()];
        s.extend(self.layers.iter().map(|l| l.out_dim()));
        s
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.out_dim())
    }

    pub fn n_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.as_slice().len() + l.biases.len())
            .sum()
    }

    pub fn same_architecture(&self, other: &Self) -> bool {
        self.layers.len() == other.layers.len()
            && self.layers.iter().zip(&other.layers).all(|(a, b)| {
                a.weights.shape() == b.weights.shape() && a.activation == b.activation
            })
    }

    pub fn param_slices(&self) -> Vec<&[T]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weights.as_slice(), l.biases.as_slice()])
            .collect()
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [T]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weights.as_mut_slice(), l.biases.as_mut_slice()])
            .collect()
    }

    pub fn is_finite(&self) -> bool {
        self.param_slices()
            .iter()
            .all(|s| s.iter().all(|v| v.is_finite()))
    }

    fn check_input(&self, x: &Matrix<T>) -> Result<()> {
        if x.cols() != self.in_dim() {
            return Err(Error::shape(format!(
                "network expects {} inputs, got {}",
                self.in_dim(),
                x.cols()
            )));
        }
        Ok(())
    }

    /// Forward pass without keeping intermediate activations.
    pub fn predict(&self, x: &Matrix<T>) -> Result<Matrix<T>> {
        self.check_input(x)?;
        let mut cur = layer_forward(&self.layers[0], x);
        for layer in &self.layers[1..] {
            cur = layer_forward(layer, &cur);
        }
        Ok(cur)
    }

    /// Forward pass keeping what [`Mlp::backward`] needs.
    pub fn forward(&self, x: &Matrix<T>) -> Result<(Matrix<T>, ForwardCache<T>)> {
        self.check_input(x)?;
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.clone());
        for layer in &self.layers {
            let next = layer_forward(layer, acts.last().expect("non-empty"));
            acts.push(next);
        }
        let y = acts.last().expect("non-empty").clone();
        Ok((y, ForwardCache { acts }))
    }

    /// Reverse-mode gradients of `sum_rows <dL/dy, y>` with respect to every parameter.
    pub fn backward(&self, cache: &ForwardCache<T>, d_out: &Matrix<T>) -> Result<Grads<T>> {
        self.backward_impl(cache, d_out, false).map(|(g, _)| g)
    }

    /// Like [`Mlp::backward`] but also returns the gradient with respect to the input rows.
    pub fn backward_with_input(
        &self,
        cache: &ForwardCache<T>,
        d_out: &Matrix<T>,
    ) -> Result<(Grads<T>, Matrix<T>)> {
        self.backward_impl(cache, d_out, true)
            .map(|(g, dx)| (g, dx.expect("input gradient requested")))
    }

    fn backward_impl(
        &self,
        cache: &ForwardCache<T>,
        d_out: &Matrix<T>,
        want_input: bool,
    ) -> Result<(Grads<T>, Option<Matrix<T>>)> {
        if cache.acts.len() != self.layers.len() + 1
            || cache
                .acts
                .iter()
                .zip(self.sizes())
                .any(|(a, s)| a.cols() != s || a.rows() != cache.acts[0].rows())
        {
            return Err(Error::shape(
                "forward cache does not belong to this network",
            ));
        }
        let n = cache.acts[0].rows();
        if d_out.shape() != (n, self.out_dim()) {
            return Err(Error::shape(format!(
                "output gradient is {}x{}, expected {}x{}",
                d_out.rows(),
                d_out.cols(),
                n,
                self.out_dim()
            )));
        }
        let mut grads = Grads::zeros_like(self);
        let mut upstream = d_out.clone();
        for (k, layer) in self.layers.iter().enumerate().rev() {
            let input = &cache.acts[k];
            let output = &cache.acts[k + 1];
            let dz = activation_backward(layer.activation, output, &upstream);
            let (dw, db) = &mut grads.layers[k];
            let out_dim = layer.out_dim();
            let in_dim = layer.in_dim();
            for r in 0..n {
                let dz_row = dz.row(r);
                let a_row = input.row(r);
                for o in 0..out_dim {
                    let g = dz_row[o];
                    if g != T::zero() {
                        axpy(
                            g,
                            a_row,
                            &mut dw.as_mut_slice()[o * in_dim..(o + 1) * in_dim],
                        );
                    }
                    db[o] += g;
                }
            }
            if k > 0 || want_input {
                let mut da = Matrix::zeros(n, in_dim);
                for r in 0..n {
                    let dz_row = dz.row(r);
                    let da_row = da.row_mut(r);
                    for (o, &g) in dz_row.iter().enumerate() {
                        if g != T::zero() {
                            axpy(g, layer.weights.row(o), da_row);
                        }
                    }
                }
                upstream = da;
            }
        }
        Ok((grads, if want_input { Some(upstream) } else { None }))
    }
}

fn layer_forward<T: Scalar>(layer: &Layer<T>, x: &Matrix<T>) -> Matrix<T> {
    let out_dim = layer.out_dim();
    let mut y = Matrix::zeros(x.rows(), out_dim);
    for r in 0..x.rows() {
        let x_row = x.row(r);
        let y_row = y.row_mut(r);
        for o in 0..out_dim {
            y_row[o] = dot(x_row, layer.weights.row(o)) + layer.biases[o];
        }
        apply_activation(layer.activation, y_row);
    }
    y
}

fn apply_activation<T: Scalar>(act: Activation, row: &mut [T]) {
    match act {
        Activation::Tanh => row.iter_mut().for_each(|v| *v = v.tanh()),
        Activation::Relu => row.iter_mut().for_each(|v| *v = v.max(T::zero())),
        Activation::Linear => {}
        Activation::Softmax => {
            let m = row.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
            let mut s = T::zero();
            for v in row.iter_mut() {
                *v = (*v - m).exp();
                s += *v;
            }
            row.iter_mut().for_each(|v| *v /= s);
        }
    }
}

/// Maps dL/d(post-activation) to dL/d(pre-activation) using the stored outputs.
fn activation_backward<T: Scalar>(
    act: Activation,
    output: &Matrix<T>,
    upstream: &Matrix<T>,
) -> Matrix<T> {
    match act {
        Activation::Linear => upstream.clone(),
        Activation::Tanh => {
            let mut dz = upstream.clone();
            for (g, &y) in dz.as_mut_slice().iter_mut().zip(output.as_slice()) {
                *g *= T::one() - y * y;
            }
            dz
        }
        Activation::Relu => {
            // subgradient at 0 is 0
            let mut dz = upstream.clone();
            for (g, &y) in dz.as_mut_slice().iter_mut().zip(output.as_slice()) {
                if y <= T::zero() {
                    *g = T::zero();
                }
            }
            dz
        }
        Activation::Softmax => {
            let mut dz = upstream.clone();
            for r in 0..output.rows() {
                let p = output.row(r);
                let s = dot(upstream.row(r), p);
                for (g, &pi) in dz.row_mut(r).iter_mut().zip(p) {
                    *g = pi * (*g - s);
                }
            }
            dz
        }
    }
}

fn xavier_uniform<T: Scalar, R: Rng + ?Sized>(
    fan_out: usize,
    fan_in: usize,
    rng: &mut R,
) -> Matrix<T> {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_out * fan_in)
        .map(|_| T::lit(rng.random_range(-bound..bound)))
        .collect();
    Matrix::from_vec(fan_out, fan_in, data).expect("sized above")
}

/// Gaussian matrix orthonormalised by modified Gram-Schmidt along the shorter side.
fn orthogonal<T: Scalar, R: Rng + ?Sized>(fan_out: usize, fan_in: usize, rng: &mut R) -> Matrix<T> {
    let (n_vec, len) = if fan_out <= fan_in {
        (fan_out, fan_in)
    } else {
        (fan_in, fan_out)
    };
    let mut vecs: Vec<Vec<f64>> = Vec::with_capacity(n_vec);
    while vecs.len() < n_vec {
        let mut v: Vec<f64> = (0..len).map(|_| StandardNormal.sample(rng)).collect();
        for u in &vecs {
            let p: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(u).for_each(|(a, b)| *a -= p * b);
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm > 1e-8 {
            v.iter_mut().for_each(|a| *a /= norm);
            vecs.push(v);
        }
    }
    let mut w = Matrix::zeros(fan_out, fan_in);
    for (i, v) in vecs.iter().enumerate() {
        for (j, &a) in v.iter().enumerate() {
            if fan_out <= fan_in {
                w[(i, j)] = T::lit(a);
            } else {
                w[(j, i)] = T::lit(a);
            }
        }
    }
    w
}

/// Soft target update: `target <- (1 - tau) * target + tau * source`.
pub fn polyak_update<T: Scalar>(target: &mut Mlp<T>, source: &Mlp<T>, tau: T) -> Result<()> {
    if !target.same_architecture(source) {
        return Err(Error::shape(
            "polyak update between different architectures",
        ));
    }
    if !(tau >= T::zero() && tau <= T::one()) {
        return Err(Error::Invalid(format!("polyak tau {tau} outside [0, 1]")));
    }
    let keep = T::one() - tau;
    for (t, s) in target
        .param_slices_mut()
        .into_iter()
        .zip(source.param_slices())
    {
        for (a, &b) in t.iter_mut().zip(s) {
            *a = keep * *a + tau * b;
        }
    }
    Ok(())
}
