//! The network player at desk scale: a linear or one-hidden-layer classifier
//! with elementwise sigmoid outputs, manual forward/backward passes, and
//! momentum SGD updates.
//!
//! Gradient convention: `backward` takes the upstream gradient at the
//! post-sigmoid probabilities, `∂loss/∂ŷ`, so loss modules stay agnostic of
//! the model internals.

use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::matrix::Matrix;
use crate::numerics::sigmoid;
use crate::{real, rng, Error, Real, Result};

/// Model architecture; the hidden layer uses a tanh nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Arch {
    Linear,
    Mlp { hidden_dim: usize },
}

/// One dense layer, weights stored `[out × in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer<T> {
    pub weights: Matrix<T>,
    pub bias: Vec<T>,
}

impl<T: Real> DenseLayer<T> {
    fn zeros(out_dim: usize, in_dim: usize) -> Self {
        Self {
            weights: Matrix::zeros(out_dim, in_dim),
            bias: vec![T::zero(); out_dim],
        }
    }
}

/// Classifier parameters; immutable during forward/backward, updated only
/// through [`SgdOptimizer::step`].
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierModel<T> {
    arch: Arch,
    input_dim: usize,
    num_classes: usize,
    layers: Vec<DenseLayer<T>>,
}

/// Per-layer parameter gradients plus the gradient at the input features.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub layers: Vec<DenseLayer<T>>,
    pub inputs: Matrix<T>,
}

impl<T: Real> ClassifierModel<T> {
    /// Deterministic scaled-uniform initialization: weights drawn from
    /// `U(−a, a)` with `a = sqrt(6 / (fan_in + fan_out))`, biases zero.
    pub fn init(arch: Arch, input_dim: usize, num_classes: usize, seed: u64) -> Result<Self> {
        if input_dim == 0 || num_classes == 0 {
            return Err(Error::Argument(format!(
                "dimensions must be >= 1, got input_dim={input_dim}, num_classes={num_classes}"
            )));
        }
        if let Arch::Mlp { hidden_dim } = arch {
            if hidden_dim == 0 {
                return Err(Error::Argument("hidden_dim must be >= 1".into()));
            }
        }
        let mut rng = rng::stream(seed, rng::SALT_MODEL_INIT);
        let shapes: Vec<(usize, usize)> = match arch {
            Arch::Linear => vec![(num_classes, input_dim)],
            Arch::Mlp { hidden_dim } => {
                vec![(hidden_dim, input_dim), (num_classes, hidden_dim)]
            }
        };
        let mut layers = Vec::with_capacity(shapes.len());
        for (out_dim, in_dim) in shapes {
            let bound = (6.0 / (in_dim + out_dim) as f64).sqrt();
            let mut layer = DenseLayer::zeros(out_dim, in_dim);
            for r in 0..out_dim {
                for c in 0..in_dim {
                    let u: f64 = rng.gen();
                    layer.weights.set(r, c, real((2.0 * u - 1.0) * bound));
                }
            }
            layers.push(layer);
        }
        Ok(Self {
            arch,
            input_dim,
            num_classes,
            layers,
        })
    }

    /// Model with all parameters zero; the forward pass yields 0.5 everywhere.
    pub fn zeros(arch: Arch, input_dim: usize, num_classes: usize) -> Result<Self> {
        let mut model = Self::init(arch, input_dim, num_classes, 0)?;
        for layer in &mut model.layers {
            let (r, c) = (layer.weights.rows(), layer.weights.cols());
            layer.weights = Matrix::zeros(r, c);
        }
        Ok(model)
    }

    pub fn arch(&self) -> Arch {
        self.arch
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn layers(&self) -> &[DenseLayer<T>] {
        &self.layers
    }

    /// Mutable access to one layer's parameters (finite-difference probes,
    /// hand-built models).
    pub fn layer_mut(&mut self, i: usize) -> &mut DenseLayer<T> {
        &mut self.layers[i]
    }

    fn check_features(&self, features: &Matrix<T>) -> Result<()> {
        if features.cols() != self.input_dim {
            return Err(Error::Dimension(format!(
                "features have width {}, model expects {}",
                features.cols(),
                self.input_dim
            )));
        }
        Ok(())
    }

    /// Per-class probabilities for a feature batch, `[batch × L]`, every
    /// entry strictly inside `(0, 1)`.
    pub fn forward(&self, features: &Matrix<T>) -> Result<Matrix<T>> {
        self.check_features(features)?;
        let batch = features.rows();
        let mut out = Matrix::zeros(batch, self.num_classes);
        let mut hidden_buf = vec![T::zero(); self.hidden_dim()];
        for b in 0..batch {
            let x = features.row(b);
            let logits_in: &[T] = match self.arch {
                Arch::Linear => x,
                Arch::Mlp { .. } => {
                    self.hidden_activations(x, &mut hidden_buf);
                    &hidden_buf
                }
            };
            let out_layer = self.layers.last().expect("at least one layer");
            for j in 0..self.num_classes {
                let z = dot(out_layer.weights.row(j), logits_in) + out_layer.bias[j];
                out.set(b, j, sigmoid(z));
            }
        }
        Ok(out)
    }

    fn hidden_dim(&self) -> usize {
        match self.arch {
            Arch::Linear => 0,
            Arch::Mlp { hidden_dim } => hidden_dim,
        }
    }

    fn hidden_activations(&self, x: &[T], out: &mut [T]) {
        let hidden = &self.layers[0];
        for (h, value) in out.iter_mut().enumerate() {
            *value = (dot(hidden.weights.row(h), x) + hidden.bias[h]).tanh();
        }
    }

    /// Exact chain-rule gradients for every parameter and for the inputs,
    /// given `upstream = ∂loss/∂ŷ` at the post-sigmoid outputs.
    ///
    /// Each sample's contribution is computed independently and the
    /// contributions are summed in sample order, so the result is identical
    /// whether samples are processed serially or in parallel.
    pub fn backward(&self, features: &Matrix<T>, upstream: &Matrix<T>) -> Result<Gradients<T>> {
        self.backward_with(features, upstream, None)
    }

    /// [`backward`](Self::backward) with an optional rayon pool for the
    /// per-sample passes.
    pub fn backward_with(
        &self,
        features: &Matrix<T>,
        upstream: &Matrix<T>,
        pool: Option<&rayon::ThreadPool>,
    ) -> Result<Gradients<T>> {
        self.check_features(features)?;
        if upstream.rows() != features.rows() || upstream.cols() != self.num_classes {
            return Err(Error::Dimension(format!(
                "upstream gradient is {}x{}, expected {}x{}",
                upstream.rows(),
                upstream.cols(),
                features.rows(),
                self.num_classes
            )));
        }
        let batch = features.rows();
        let per_sample: Vec<Gradients<T>> = match pool {
            Some(pool) => pool.install(|| {
                use rayon::prelude::*;
                (0..batch)
                    .into_par_iter()
                    .map(|b| self.sample_gradients(features.row(b), upstream.row(b)))
                    .collect()
            }),
            None => (0..batch)
                .map(|b| self.sample_gradients(features.row(b), upstream.row(b)))
                .collect(),
        };

        let mut total = Gradients {
            layers: self
                .layers
                .iter()
                .map(|l| DenseLayer::zeros(l.weights.rows(), l.weights.cols()))
                .collect(),
            inputs: Matrix::zeros(batch, self.input_dim),
        };
        for (b, g) in per_sample.iter().enumerate() {
            for (acc, part) in total.layers.iter_mut().zip(&g.layers) {
                acc.weights.add_assign(&part.weights);
                for (a, p) in acc.bias.iter_mut().zip(&part.bias) {
                    *a += *p;
                }
            }
            total.inputs.row_mut(b).copy_from_slice(g.inputs.row(0));
        }
        Ok(total)
    }

    // Gradients contributed by a single sample; `inputs` is a 1-row matrix.
    fn sample_gradients(&self, x: &[T], upstream: &[T]) -> Gradients<T> {
        let one = T::one();
        let mut layers: Vec<DenseLayer<T>> = self
            .layers
            .iter()
            .map(|l| DenseLayer::zeros(l.weights.rows(), l.weights.cols()))
            .collect();
        let mut input_grad = Matrix::zeros(1, self.input_dim);

        match self.arch {
            Arch::Linear => {
                let out_layer = &self.layers[0];
                for (j, &up) in upstream.iter().enumerate() {
                    let z = dot(out_layer.weights.row(j), x) + out_layer.bias[j];
                    let s = sigmoid(z);
                    let dz = up * s * (one - s);
                    layers[0].bias[j] = dz;
                    let wrow = layers[0].weights.row_mut(j);
                    for (k, &xv) in x.iter().enumerate() {
                        wrow[k] = dz * xv;
                    }
                    for (k, g) in input_grad.row_mut(0).iter_mut().enumerate() {
                        *g += dz * out_layer.weights.get(j, k);
                    }
                }
            }
            Arch::Mlp { hidden_dim } => {
                let mut h = vec![T::zero(); hidden_dim];
                self.hidden_activations(x, &mut h);
                let out_layer = &self.layers[1];
                let mut dh = vec![T::zero(); hidden_dim];
                for (j, &up) in upstream.iter().enumerate() {
                    let z = dot(out_layer.weights.row(j), &h) + out_layer.bias[j];
                    let s = sigmoid(z);
                    let dz = up * s * (one - s);
                    layers[1].bias[j] = dz;
                    let wrow = layers[1].weights.row_mut(j);
                    for (k, &hv) in h.iter().enumerate() {
                        wrow[k] = dz * hv;
                        dh[k] += dz * out_layer.weights.get(j, k);
                    }
                }
                let hidden_layer = &self.layers[0];
                for (k, &hv) in h.iter().enumerate() {
                    let dz1 = dh[k] * (one - hv * hv); // tanh'
                    layers[0].bias[k] = dz1;
                    let wrow = layers[0].weights.row_mut(k);
                    for (d, &xv) in x.iter().enumerate() {
                        wrow[d] = dz1 * xv;
                    }
                    for (d, g) in input_grad.row_mut(0).iter_mut().enumerate() {
                        *g += dz1 * hidden_layer.weights.get(k, d);
                    }
                }
            }
        }
        Gradients {
            layers,
            inputs: input_grad,
        }
    }

    /// Euclidean norm of the parameter difference between two models.
    pub fn l2_distance(&self, other: &Self) -> T {
        let mut acc = T::zero();
        for (a, b) in self.layers.iter().zip(&other.layers) {
            for (x, y) in a.weights.data().iter().zip(b.weights.data()) {
                let d = *x - *y;
                acc += d * d;
            }
            for (x, y) in a.bias.iter().zip(&b.bias) {
                let d = *x - *y;
                acc += d * d;
            }
        }
        acc.sqrt()
    }
}

#[inline]
fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = T::zero();
    for (x, y) in a.iter().zip(b) {
        acc += *x * *y;
    }
    acc
}

/// Momentum SGD: `v ← momentum·v + g`, `θ ← θ − lr·v`. With zero momentum
/// this is plain gradient descent.
#[derive(Debug, Clone)]
pub struct SgdOptimizer<T> {
    momentum: T,
    velocity: Option<Vec<DenseLayer<T>>>,
}

impl<T: Real> SgdOptimizer<T> {
    pub fn new(momentum: T) -> Self {
        Self {
            momentum,
            velocity: None,
        }
    }

    /// Applies one update. `frozen_layers` marks layers to leave untouched
    /// (their velocity is also kept at zero).
    pub fn step(
        &mut self,
        model: &mut ClassifierModel<T>,
        grads: &Gradients<T>,
        lr: T,
        frozen_layers: &[bool],
    ) {
        let velocity = self.velocity.get_or_insert_with(|| {
            model
                .layers
                .iter()
                .map(|l| DenseLayer::zeros(l.weights.rows(), l.weights.cols()))
                .collect()
        });
        for (i, ((layer, v), g)) in model
            .layers
            .iter_mut()
            .zip(velocity.iter_mut())
            .zip(&grads.layers)
            .enumerate()
        {
            if frozen_layers.get(i).copied().unwrap_or(false) {
                continue;
            }
            for r in 0..layer.weights.rows() {
                for c in 0..layer.weights.cols() {
                    let nv = self.momentum * v.weights.get(r, c) + g.weights.get(r, c);
                    v.weights.set(r, c, nv);
                    layer.weights.set(r, c, layer.weights.get(r, c) - lr * nv);
                }
            }
            for (b, (vb, gb)) in v.bias.iter_mut().zip(&g.bias).enumerate() {
                *vb = self.momentum * *vb + *gb;
                layer.bias[b] -= lr * *vb;
            }
        }
    }
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format: String,
    arch: Arch,
    input_dim: usize,
    num_classes: usize,
    layers: Vec<CheckpointLayer>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointLayer {
    out_dim: usize,
    in_dim: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

const MODEL_FORMAT: &str = "gamepl-model-v1";

/// Writes a versioned JSON checkpoint; the round trip is lossless for `f64`
/// parameters.
pub fn save_model<T: Real>(model: &ClassifierModel<T>, path: &Path) -> Result<()> {
    let file = CheckpointFile {
        format: MODEL_FORMAT.to_string(),
        arch: model.arch,
        input_dim: model.input_dim,
        num_classes: model.num_classes,
        layers: model
            .layers
            .iter()
            .map(|l| CheckpointLayer {
                out_dim: l.weights.rows(),
                in_dim: l.weights.cols(),
                weights: l.weights.data().iter().map(|v| v.to_f64().unwrap()).collect(),
                bias: l.bias.iter().map(|v| v.to_f64().unwrap()).collect(),
            })
            .collect(),
    };
    fs::write(path, serde_json::to_string_pretty(&file)?)?;
    Ok(())
}

/// Reads a checkpoint written by [`save_model`], validating format and
/// shapes.
pub fn load_model<T: Real>(path: &Path) -> Result<ClassifierModel<T>> {
    let file: CheckpointFile = serde_json::from_str(&fs::read_to_string(path)?)?;
    if file.format != MODEL_FORMAT {
        return Err(Error::Argument(format!(
            "unsupported checkpoint format '{}'",
            file.format
        )));
    }
    let expected: Vec<(usize, usize)> = match file.arch {
        Arch::Linear => vec![(file.num_classes, file.input_dim)],
        Arch::Mlp { hidden_dim } => vec![
            (hidden_dim, file.input_dim),
            (file.num_classes, hidden_dim),
        ],
    };
    if file.layers.len() != expected.len() {
        return Err(Error::Argument(format!(
            "checkpoint has {} layers, architecture needs {}",
            file.layers.len(),
            expected.len()
        )));
    }
    let mut layers = Vec::with_capacity(file.layers.len());
    for (layer, (out_dim, in_dim)) in file.layers.iter().zip(expected) {
        if layer.out_dim != out_dim || layer.in_dim != in_dim {
            return Err(Error::Argument(format!(
                "checkpoint layer is {}x{}, architecture needs {}x{}",
                layer.out_dim, layer.in_dim, out_dim, in_dim
            )));
        }
        let weights = Matrix::from_vec(
            out_dim,
            in_dim,
            layer.weights.iter().map(|&v| real(v)).collect(),
        )?;
        if layer.bias.len() != out_dim {
            return Err(Error::Argument("checkpoint bias length mismatch".into()));
        }
        layers.push(DenseLayer {
            weights,
            bias: layer.bias.iter().map(|&v| real(v)).collect(),
        });
    }
    Ok(ClassifierModel {
        arch: file.arch,
        input_dim: file.input_dim,
        num_classes: file.num_classes,
        layers,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_features(rows: usize, cols: usize, seed: u64) -> Matrix<f64> {
        let mut rng = crate::rng::stream(seed, 77);
        let mut m = Matrix::zeros(rows, cols);
        for r in 0..rows {
            for c in 0..cols {
                m.set(r, c, rng.gen_range(-2.0..2.0));
            }
        }
        m
    }

    #[test]
    fn init_is_deterministic_and_shaped() {
        let a = ClassifierModel::<f64>::init(Arch::Linear, 4, 3, 9).unwrap();
        let b = ClassifierModel::<f64>::init(Arch::Linear, 4, 3, 9).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.layers()[0].weights.rows(), 3);
        assert_eq!(a.layers()[0].weights.cols(), 4);
        assert_eq!(a.layers()[0].bias, vec![0.0; 3]);
        let c = ClassifierModel::<f64>::init(Arch::Linear, 4, 3, 10).unwrap();
        assert_ne!(a, c);
        assert!(ClassifierModel::<f64>::init(Arch::Linear, 0, 3, 0).is_err());
        assert!(ClassifierModel::<f64>::init(Arch::Mlp { hidden_dim: 0 }, 4, 3, 0).is_err());
    }

    #[test]
    fn zero_model_outputs_one_half() {
        for arch in [Arch::Linear, Arch::Mlp { hidden_dim: 5 }] {
            let model = ClassifierModel::<f64>::zeros(arch, 3, 4).unwrap();
            let out = model.forward(&random_features(6, 3, 1)).unwrap();
            for b in 0..6 {
                for j in 0..4 {
                    assert_eq!(out.get(b, j), 0.5);
                }
            }
        }
    }

    #[test]
    fn linear_forward_matches_direct_arithmetic() {
        let model = ClassifierModel::<f64>::init(Arch::Linear, 5, 3, 21).unwrap();
        let x = random_features(4, 5, 2);
        let out = model.forward(&x).unwrap();
        for b in 0..4 {
            for j in 0..3 {
                let mut z = model.layers()[0].bias[j];
                for k in 0..5 {
                    z += model.layers()[0].weights.get(j, k) * x.get(b, k);
                }
                let want = 1.0 / (1.0 + (-z).exp());
                assert!((out.get(b, j) - want).abs() < 1e-12);
                assert!(out.get(b, j) > 0.0 && out.get(b, j) < 1.0);
            }
        }
    }

    #[test]
    fn forward_rejects_wrong_width() {
        let model = ClassifierModel::<f64>::init(Arch::Linear, 5, 3, 21).unwrap();
        assert!(matches!(
            model.forward(&random_features(2, 4, 0)),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let model = ClassifierModel::<f64>::init(Arch::Mlp { hidden_dim: 4 }, 3, 2, 5).unwrap();
        let x = random_features(3, 3, 3);
        let grads = model.backward(&x, &Matrix::zeros(3, 2)).unwrap();
        for layer in &grads.layers {
            assert!(layer.weights.data().iter().all(|&v| v == 0.0));
            assert!(layer.bias.iter().all(|&v| v == 0.0));
        }
        assert!(grads.inputs.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn linear_single_sample_gradient_matches_hand_chain_rule() {
        let model = ClassifierModel::<f64>::init(Arch::Linear, 3, 2, 13).unwrap();
        let x = random_features(1, 3, 4);
        let preds = model.forward(&x).unwrap();
        let mut upstream = Matrix::zeros(1, 2);
        upstream.set(0, 0, 0.7);
        upstream.set(0, 1, -0.4);
        let grads = model.backward(&x, &upstream).unwrap();
        for j in 0..2 {
            let s = preds.get(0, j);
            let dz = upstream.get(0, j) * s * (1.0 - s);
            for k in 0..3 {
                let want = dz * x.get(0, k);
                assert!((grads.layers[0].weights.get(j, k) - want).abs() < 1e-14);
            }
            assert!((grads.layers[0].bias[j] - dz).abs() < 1e-14);
        }
    }

    // scalar loss used for the finite-difference check below
    fn quadratic_loss(preds: &Matrix<f64>) -> f64 {
        preds
            .data()
            .iter()
            .enumerate()
            .map(|(i, &p)| {
                let target = if i.is_multiple_of(3) { 0.9 } else { 0.2 };
                (p - target) * (p - target)
            })
            .sum()
    }

    fn quadratic_upstream(preds: &Matrix<f64>) -> Matrix<f64> {
        let mut up = Matrix::zeros(preds.rows(), preds.cols());
        for r in 0..preds.rows() {
            for c in 0..preds.cols() {
                let i = r * preds.cols() + c;
                let target = if i.is_multiple_of(3) { 0.9 } else { 0.2 };
                up.set(r, c, 2.0 * (preds.get(r, c) - target));
            }
        }
        up
    }

    #[test]
    fn backward_matches_finite_differences() {
        let configs = [
            (Arch::Linear, 3, 2, 1),
            (Arch::Linear, 5, 4, 3),
            (Arch::Mlp { hidden_dim: 4 }, 3, 2, 2),
            (Arch::Mlp { hidden_dim: 6 }, 4, 3, 5),
        ];
        for (ci, &(arch, dim, classes, batch)) in configs.iter().enumerate() {
            let model = ClassifierModel::<f64>::init(arch, dim, classes, ci as u64).unwrap();
            let x = random_features(batch, dim, 50 + ci as u64);
            let preds = model.forward(&x).unwrap();
            let grads = model.backward(&x, &quadratic_upstream(&preds)).unwrap();

            let h = 1e-5;
            for li in 0..model.layers().len() {
                for r in 0..model.layers()[li].weights.rows() {
                    for c in 0..model.layers()[li].weights.cols() {
                        let mut plus = model.clone();
                        let v = plus.layers[li].weights.get(r, c);
                        plus.layers[li].weights.set(r, c, v + h);
                        let mut minus = model.clone();
                        minus.layers[li].weights.set(r, c, v - h);
                        let fd = (quadratic_loss(&plus.forward(&x).unwrap())
                            - quadratic_loss(&minus.forward(&x).unwrap()))
                            / (2.0 * h);
                        let an = grads.layers[li].weights.get(r, c);
                        let rel = (fd - an).abs() / an.abs().max(fd.abs()).max(1e-8);
                        assert!(rel < 1e-4, "cfg {ci} layer {li} w[{r}][{c}] rel={rel}");
                    }
                }
            }
        }
    }

    #[test]
    fn input_gradients_match_finite_differences() {
        let model = ClassifierModel::<f64>::init(Arch::Mlp { hidden_dim: 5 }, 4, 3, 7).unwrap();
        let x = random_features(2, 4, 8);
        let preds = model.forward(&x).unwrap();
        let grads = model.backward(&x, &quadratic_upstream(&preds)).unwrap();
        let h = 1e-5;
        for b in 0..2 {
            for d in 0..4 {
                let mut plus = x.clone();
                plus.set(b, d, x.get(b, d) + h);
                let mut minus = x.clone();
                minus.set(b, d, x.get(b, d) - h);
                let fd = (quadratic_loss(&model.forward(&plus).unwrap())
                    - quadratic_loss(&model.forward(&minus).unwrap()))
                    / (2.0 * h);
                let an = grads.inputs.get(b, d);
                assert!((fd - an).abs() / an.abs().max(1e-8) < 1e-4);
            }
        }
    }

    #[test]
    fn parallel_backward_is_bitwise_identical() {
        let model = ClassifierModel::<f64>::init(Arch::Mlp { hidden_dim: 8 }, 6, 4, 3).unwrap();
        let x = random_features(32, 6, 9);
        let preds = model.forward(&x).unwrap();
        let up = quadratic_upstream(&preds);
        let serial = model.backward(&x, &up).unwrap();
        for threads in [1, 2, 4] {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap();
            let parallel = model.backward_with(&x, &up, Some(&pool)).unwrap();
            assert_eq!(serial, parallel, "threads={threads}");
        }
    }

    #[test]
    fn sgd_step_definitions() {
        let model = ClassifierModel::<f64>::init(Arch::Linear, 3, 2, 1).unwrap();
        let x = random_features(2, 3, 10);
        let preds = model.forward(&x).unwrap();
        let grads = model.backward(&x, &quadratic_upstream(&preds)).unwrap();

        // lr = 0 leaves the model unchanged
        let mut frozen = model.clone();
        SgdOptimizer::new(0.9).step(&mut frozen, &grads, 0.0, &[false]);
        assert_eq!(frozen, model);

        // momentum = 0, one step: exactly theta - lr*grad
        let mut plain = model.clone();
        SgdOptimizer::new(0.0).step(&mut plain, &grads, 0.1, &[false]);
        for j in 0..2 {
            for k in 0..3 {
                let want = model.layers()[0].weights.get(j, k) - 0.1 * grads.layers[0].weights.get(j, k);
                assert_eq!(plain.layers()[0].weights.get(j, k), want);
            }
        }

        // frozen layer never moves
        let mut held = model.clone();
        SgdOptimizer::new(0.0).step(&mut held, &grads, 0.1, &[true]);
        assert_eq!(held, model);
    }

    #[test]
    fn sgd_descends_a_convex_quadratic() {
        // loss = 0.5 * ||theta - target||^2 over the weight entries, driven
        // through synthetic gradients theta - target
        let mut model = ClassifierModel::<f64>::init(Arch::Linear, 4, 3, 3).unwrap();
        let target = ClassifierModel::<f64>::init(Arch::Linear, 4, 3, 4).unwrap();
        let loss = |m: &ClassifierModel<f64>| {
            let d = m.l2_distance(&target);
            0.5 * d * d
        };
        let mut opt = SgdOptimizer::new(0.5);
        let mut prev = loss(&model);
        for _ in 0..100 {
            let mut g = Gradients {
                layers: vec![DenseLayer::zeros(3, 4)],
                inputs: Matrix::zeros(1, 4),
            };
            for r in 0..3 {
                for c in 0..4 {
                    g.layers[0].weights.set(
                        r,
                        c,
                        model.layers()[0].weights.get(r, c) - target.layers()[0].weights.get(r, c),
                    );
                }
                g.layers[0].bias[r] = model.layers()[0].bias[r] - target.layers()[0].bias[r];
            }
            opt.step(&mut model, &g, 0.05, &[false]);
            let now = loss(&model);
            assert!(now <= prev + 1e-12);
            prev = now;
        }
        assert!(prev < 1e-2);
    }

    #[test]
    fn checkpoint_round_trips_losslessly() {
        let dir = tempfile::tempdir().unwrap();
        for arch in [Arch::Linear, Arch::Mlp { hidden_dim: 7 }] {
            let model = ClassifierModel::<f64>::init(arch, 5, 3, 11).unwrap();
            let path = dir.path().join("model.json");
            save_model(&model, &path).unwrap();
            let loaded = load_model::<f64>(&path).unwrap();
            assert_eq!(model, loaded);
        }
    }

    #[test]
    fn checkpoint_rejects_bad_format() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        fs::write(
            &path,
            r#"{"format":"other","arch":"Linear","input_dim":2,"num_classes":2,"layers":[]}"#,
        )
        .unwrap();
        assert!(load_model::<f64>(&path).is_err());
    }
}
