use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{nested, Matrix};

/// Hidden-layer nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Elu,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Elu => {
                if z > 0.0 {
                    z
                } else {
                    z.exp_m1()
                }
            }
        }
    }

    /// Derivative at pre-activation `z`, given the output `a = apply(z)`.
    #[inline]
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Elu => {
                if z > 0.0 {
                    1.0
                } else {
                    a + 1.0
                }
            }
        }
    }
}

/// Affine layer `x ↦ x·W + b` acting on row vectors; `weight` is `in × out`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    #[serde(with = "nested::matrix")]
    pub weight: Matrix,
    #[serde(with = "nested::vector")]
    pub bias: Array1<f64>,
}

impl Layer {
    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self { weight: Array2::zeros((fan_in, fan_out)), bias: Array1::zeros(fan_out) }
    }

    /// Weights uniform in `±sqrt(6 / (fan_in + fan_out))`, zero bias.
    pub fn glorot<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let weight = Array2::from_shape_simple_fn((fan_in, fan_out), || rng.gen_range(-limit..=limit));
        Self { weight, bias: Array1::zeros(fan_out) }
    }

    pub fn fan_in(&self) -> usize {
        self.weight.nrows()
    }

    pub fn fan_out(&self) -> usize {
        self.weight.ncols()
    }
}

/// Fully connected network. Every layer but the last is followed by its
/// activation; the optional `skip` adds a bias-free linear map from input to
/// output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub layers: Vec<Layer>,
    pub activations: Vec<Activation>,
    #[serde(default, skip_serializing_if = "Option::is_none", with = "nested::option_matrix")]
    pub skip: Option<Matrix>,
}

/// Intermediate values kept by [`MlpParams::forward_cached`].
#[derive(Debug, Clone)]
pub struct MlpCache {
    /// Input of each layer (the network input first).
    inputs: Vec<Matrix>,
    /// Pre-activations of each hidden layer.
    pre: Vec<Matrix>,
}

/// Gradients with the same shapes as the parameters.
#[derive(Debug, Clone)]
pub struct MlpGrads {
    pub layers: Vec<Layer>,
    pub skip: Option<Matrix>,
}

impl MlpGrads {
    /// Flattened in the order of [`MlpParams::params_mut`].
    pub fn into_flat(self) -> Vec<Vec<f64>> {
        let mut out = Vec::with_capacity(2 * self.layers.len() + 1);
        for layer in self.layers {
            out.push(layer.weight.iter().copied().collect());
            out.push(layer.bias.to_vec());
        }
        if let Some(skip) = self.skip {
            out.push(skip.iter().copied().collect());
        }
        out
    }
}

impl MlpParams {
    /// Network with layer widths `dims` (input first). Glorot-initialized;
    /// when `zero_output` is set the final layer starts at zero.
    pub fn new<R: Rng + ?Sized>(dims: &[usize], activation: Activation, zero_output: bool, rng: &mut R) -> Self {
        assert!(dims.len() >= 2, "an MLP needs at least input and output widths");
        let depth = dims.len() - 1;
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                if zero_output && i == depth - 1 {
                    Layer::zeros(w[0], w[1])
                } else {
                    Layer::glorot(w[0], w[1], rng)
                }
            })
            .collect();
        Self { layers, activations: vec![activation; depth - 1], skip: None }
    }

    /// Adds a zero-initialized linear skip connection.
    pub fn with_skip(mut self) -> Self {
        self.skip = Some(Array2::zeros((self.input_dim(), self.output_dim())));
        self
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].fan_in()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].fan_out()
    }

    pub fn hidden_layers(&self) -> usize {
        self.layers.len() - 1
    }

    /// Checks that layer shapes chain and every parameter is finite.
    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::WrongArchitecture("MLP has no layers".into()));
        }
        if self.activations.len() != self.layers.len() - 1 {
            return Err(Error::WrongArchitecture(format!(
                "{} layers need {} activations, got {}",
                self.layers.len(),
                self.layers.len() - 1,
                self.activations.len()
            )));
        }
        for (i, pair) in self.layers.windows(2).enumerate() {
            if pair[0].fan_out() != pair[1].fan_in() {
                return Err(Error::WrongArchitecture(format!(
                    "layer {i} outputs {} values but layer {} takes {}",
                    pair[0].fan_out(),
                    i + 1,
                    pair[1].fan_in()
                )));
            }
        }
        for layer in &self.layers {
            if layer.bias.len() != layer.fan_out() {
                return Err(Error::WrongArchitecture("bias length differs from layer width".into()));
            }
        }
        if let Some(skip) = &self.skip {
            if skip.dim() != (self.input_dim(), self.output_dim()) {
                return Err(Error::WrongArchitecture("skip connection has the wrong shape".into()));
            }
        }
        let finite = self.layers.iter().all(|l| l.weight.iter().chain(&l.bias).all(|v| v.is_finite()))
            && self.skip.iter().all(|s| s.iter().all(|v| v.is_finite()));
        if !finite {
            return Err(Error::NonFinite("MLP parameters".into()));
        }
        Ok(())
    }

    /// Applies the network to every row of `x`.
    pub fn forward(&self, x: &Matrix) -> Matrix {
        let mut cur = self.affine(0, x);
        for (i, act) in self.activations.iter().enumerate() {
            cur.mapv_inplace(|z| act.apply(z));
            cur = self.affine(i + 1, &cur);
        }
        if let Some(skip) = &self.skip {
            cur += &x.dot(skip);
        }
        cur
    }

    pub fn forward_cached(&self, x: &Matrix) -> (Matrix, MlpCache) {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.activations.len());
        inputs.push(x.clone());
        for (i, act) in self.activations.iter().enumerate() {
            let z = self.affine(i, &inputs[i]);
            let a = z.mapv(|v| act.apply(v));
            pre.push(z);
            inputs.push(a);
        }
        let last = self.layers.len() - 1;
        let mut out = self.affine(last, &inputs[last]);
        if let Some(skip) = &self.skip {
            out += &x.dot(skip);
        }
        (out, MlpCache { inputs, pre })
    }

    /// Backpropagates `grad_out` (same shape as the output). Returns the
    /// parameter gradients and, if requested, the gradient with respect to
    /// the input.
    pub fn backward(&self, cache: &MlpCache, grad_out: &Matrix, want_input: bool) -> (MlpGrads, Option<Matrix>) {
        let n_layers = self.layers.len();
        let mut grads: Vec<Option<Layer>> = vec![None; n_layers];
        let mut g = grad_out.clone();
        for l in (0..n_layers).rev() {
            let input = &cache.inputs[l];
            grads[l] = Some(Layer { weight: input.t().dot(&g), bias: g.sum_axis(Axis(0)) });
            if l == 0 && !want_input {
                break;
            }
            let mut g_in = g.dot(&self.layers[l].weight.t());
            if l > 0 {
                let act = self.activations[l - 1];
                ndarray::Zip::from(&mut g_in)
                    .and(&cache.pre[l - 1])
                    .and(&cache.inputs[l])
                    .for_each(|gv, &z, &a| *gv *= act.derivative(z, a));
            }
            g = g_in;
        }
        let skip = self.skip.as_ref().map(|_| cache.inputs[0].t().dot(grad_out));
        let input_grad = want_input.then(|| {
            let mut gi = g;
            if let Some(s) = &self.skip {
                gi += &grad_out.dot(&s.t());
            }
            gi
        });
        let layers = grads.into_iter().map(|l| l.expect("every layer visited")).collect();
        (MlpGrads { layers, skip }, input_grad)
    }

    /// Mutable views of every parameter tensor: weight then bias per layer,
    /// then the skip weights.
    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::with_capacity(2 * self.layers.len() + 1);
        for layer in &mut self.layers {
            out.push(layer.weight.as_slice_mut().expect("standard layout"));
            out.push(layer.bias.as_slice_mut().expect("standard layout"));
        }
        if let Some(skip) = &mut self.skip {
            out.push(skip.as_slice_mut().expect("standard layout"));
        }
        out
    }

    fn affine(&self, l: usize, x: &Matrix) -> Matrix {
        let layer = &self.layers[l];
        let mut z = x.dot(&layer.weight);
        z += &layer.bias;
        z
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn random_input(n: usize, d: usize, seed: u64) -> Matrix {
        let mut r = rng(seed);
        Array2::from_shape_simple_fn((n, d), || r.gen_range(-2.0..2.0))
    }

    /// Scalar loop implementation used as an independent oracle.
    fn naive_forward(p: &MlpParams, x: &[f64]) -> Vec<f64> {
        let mut cur = x.to_vec();
        for (l, layer) in p.layers.iter().enumerate() {
            let mut next = vec![0.0; layer.fan_out()];
            for (j, out) in next.iter_mut().enumerate() {
                let mut acc = layer.bias[j];
                for (i, xi) in cur.iter().enumerate() {
                    acc += xi * layer.weight[[i, j]];
                }
                *out = match p.activations.get(l) {
                    Some(Activation::Relu) => acc.max(0.0),
                    Some(Activation::Elu) => {
                        if acc > 0.0 {
                            acc
                        } else {
                            acc.exp() - 1.0
                        }
                    }
                    None => acc,
                };
            }
            cur = next;
        }
        if let Some(skip) = &p.skip {
            for (j, c) in cur.iter_mut().enumerate() {
                *c += x.iter().enumerate().map(|(i, xi)| xi * skip[[i, j]]).sum::<f64>();
            }
        }
        cur
    }

    fn randomize(p: &mut MlpParams, seed: u64) {
        let mut r = rng(seed);
        for t in p.params_mut() {
            for v in t.iter_mut() {
                *v = r.gen_range(-1.0..1.0);
            }
        }
    }

    #[test]
    fn forward_matches_naive_oracle() {
        for (act, skip) in [(Activation::Elu, false), (Activation::Relu, true)] {
            let mut p = MlpParams::new(&[3, 7, 5, 2], act, false, &mut rng(1));
            if skip {
                p = p.with_skip();
            }
            randomize(&mut p, 2);
            let x = random_input(9, 3, 3);
            let out = p.forward(&x);
            let (cached, _) = p.forward_cached(&x);
            assert_eq!(out, cached);
            for i in 0..9 {
                let oracle = naive_forward(&p, x.row(i).as_slice().unwrap());
                for j in 0..2 {
                    assert!((out[[i, j]] - oracle[j]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn zero_output_layer_gives_zero() {
        let p = MlpParams::new(&[4, 8, 1], Activation::Elu, true, &mut rng(4));
        assert!(p.forward(&random_input(5, 4, 5)).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn glorot_bounds() {
        let l = Layer::glorot(10, 22, &mut rng(6));
        let limit = (6.0f64 / 32.0).sqrt();
        assert!(l.weight.iter().all(|w| w.abs() <= limit));
        assert!(l.bias.iter().all(|&b| b == 0.0));
    }

    #[test]
    fn backward_matches_finite_differences() {
        for act in [Activation::Elu, Activation::Relu] {
            let mut p = MlpParams::new(&[3, 6, 4, 2], act, false, &mut rng(7)).with_skip();
            randomize(&mut p, 8);
            let x = random_input(5, 3, 9);
            let gout = random_input(5, 2, 10);
            let loss = |p: &MlpParams, x: &Matrix| (p.forward(x) * &gout).sum();
            let (_, cache) = p.forward_cached(&x);
            let (grads, gx) = p.backward(&cache, &gout, true);
            let flat = grads.into_flat();
            let h = 1e-6;
            let base = p.clone();
            for t in 0..flat.len() {
                for e in 0..flat[t].len() {
                    let mut plus = base.clone();
                    plus.params_mut()[t][e] += h;
                    let mut minus = base.clone();
                    minus.params_mut()[t][e] -= h;
                    let fd = (loss(&plus, &x) - loss(&minus, &x)) / (2.0 * h);
                    assert!((fd - flat[t][e]).abs() < 1e-6, "tensor {t} entry {e}: {fd} vs {}", flat[t][e]);
                }
            }
            let gx = gx.unwrap();
            for i in 0..5 {
                for j in 0..3 {
                    let mut xp = x.clone();
                    xp[[i, j]] += h;
                    let mut xm = x.clone();
                    xm[[i, j]] -= h;
                    let fd = (loss(&base, &xp) - loss(&base, &xm)) / (2.0 * h);
                    assert!((fd - gx[[i, j]]).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn validate_catches_bad_shapes() {
        let mut p = MlpParams::new(&[2, 3, 1], Activation::Elu, false, &mut rng(11));
        assert!(p.validate().is_ok());
        p.layers[1] = Layer::zeros(4, 1);
        assert!(matches!(p.validate(), Err(Error::WrongArchitecture(_))));
    }

    #[test]
    fn json_round_trip_is_exact() {
        let p = MlpParams::new(&[3, 5, 2], Activation::Relu, false, &mut rng(12)).with_skip();
        let back: MlpParams = serde_json::from_str(&serde_json::to_string(&p).unwrap()).unwrap();
        assert_eq!(p, back);
    }
}
