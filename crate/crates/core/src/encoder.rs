//! Feed-forward embedding network, trainable class proxies and the
//! proxy-contrastive loss with hand-derived gradients.
//!
//! For an input `x` with label `y` and a class set `S`:
//!
//! ```text
//! h      = normalize(MLP(x))
//! s_c    = γ · ⟨h, normalize(w_c)⟩            for c ∈ S
//! l(x,y) = logsumexp_{c∈S}(s_c) − s_y
//! ```
//!
//! Gradients flow through both normalizations, into every hidden layer and
//! into every proxy row that appears in `S`.

use crate::error::{LabError, Result};
use crate::linalg::{dot, l2_normalize, log_sum_exp, norm, stable_softmax, Matrix, SeededRng};
use crate::streams::Labeled;
use crate::ClassId;

pub const DEFAULT_GAMMA: f64 = 2.0;

/// One affine layer, `weight` is `[out × in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl Layer {
    fn zeros_like(&self) -> Self {
        Layer {
            weight: Matrix::zeros(self.weight.rows(), self.weight.cols()),
            bias: vec![0.0; self.bias.len()],
        }
    }

    fn same_shape(&self, other: &Layer) -> bool {
        self.weight.same_shape(&other.weight) && self.bias.len() == other.bias.len()
    }
}

/// Hidden layers use ReLU; the last layer is linear and produces the raw
/// embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub layers: Vec<Layer>,
}

impl EncoderParams {
    /// Xavier-uniform weights in `±√(6/(fan_in+fan_out))`, zero biases.
    /// `dims` lists every width from input to embedding.
    pub fn xavier(dims: &[usize], rng: &mut SeededRng) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(LabError::Config(
                "encoder needs at least an input and an embedding width, all positive".into(),
            ));
        }
        let layers = dims
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let data = (0..fan_in * fan_out)
                    .map(|_| rng.uniform_range(-limit, limit))
                    .collect();
                Layer {
                    weight: Matrix::from_vec(fan_out, fan_in, data).expect("sized above"),
                    bias: vec![0.0; fan_out],
                }
            })
            .collect();
        Ok(Self { layers })
    }

    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(LabError::Config("encoder has no layers".into()));
        }
        for pair in layers.windows(2) {
            if pair[1].weight.cols() != pair[0].weight.rows() {
                return Err(LabError::Dimension {
                    expected: pair[0].weight.rows(),
                    got: pair[1].weight.cols(),
                });
            }
        }
        for layer in &layers {
            if layer.bias.len() != layer.weight.rows() {
                return Err(LabError::Dimension {
                    expected: layer.weight.rows(),
                    got: layer.bias.len(),
                });
            }
        }
        Ok(Self { layers })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.cols()
    }

    pub fn embedding_dim(&self) -> usize {
        self.layers.last().expect("non-empty").weight.rows()
    }
}

/// One proxy row per class id plus a seen flag.
#[derive(Debug, Clone, PartialEq)]
pub struct ProxyBank {
    pub proxies: Matrix,
    pub seen: Vec<bool>,
}

impl ProxyBank {
    pub fn random_unit(num_classes: usize, dim: usize, rng: &mut SeededRng) -> Self {
        let mut proxies = Matrix::zeros(num_classes, dim);
        for c in 0..num_classes {
            let row = loop {
                let raw: Vec<f64> = (0..dim).map(|_| rng.standard_normal()).collect();
                if let Ok(u) = l2_normalize(&raw) {
                    break u;
                }
            };
            proxies.row_mut(c).copy_from_slice(&row);
        }
        Self {
            proxies,
            seen: vec![false; num_classes],
        }
    }

    pub fn num_classes(&self) -> usize {
        self.proxies.rows()
    }

    pub fn proxy(&self, class: ClassId) -> Result<&[f64]> {
        if class >= self.num_classes() {
            return Err(LabError::MissingProxy(class));
        }
        Ok(self.proxies.row(class))
    }

    pub fn unit_proxy(&self, class: ClassId) -> Result<Vec<f64>> {
        l2_normalize(self.proxy(class)?)
    }

    pub fn mark_seen(&mut self, classes: &[ClassId]) -> Result<()> {
        for &c in classes {
            if c >= self.num_classes() {
                return Err(LabError::MissingProxy(c));
            }
            self.seen[c] = true;
        }
        Ok(())
    }

    pub fn seen_classes(&self) -> Vec<ClassId> {
        (0..self.num_classes()).filter(|&c| self.seen[c]).collect()
    }
}

/// Full parameter set: encoder, proxies and the logit scale γ.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub encoder: EncoderParams,
    pub proxy_bank: ProxyBank,
    gamma: f64,
}

/// Gradient with the exact shape of a [`ModelState`]'s trainable parameters.
/// Rows of proxies outside the loss's class set are zero.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub layers: Vec<Layer>,
    pub proxies: Matrix,
}

struct ForwardCache {
    /// Inputs to each layer: `a_0 = x, a_1, …, a_{L-1}`.
    inputs: Vec<Vec<f64>>,
    /// Pre-activations `z_1 … z_L`; `z_L` is the raw embedding.
    pre: Vec<Vec<f64>>,
    raw_norm: f64,
    embedding: Vec<f64>,
}

impl ModelState {
    pub fn new(encoder: EncoderParams, proxy_bank: ProxyBank, gamma: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(LabError::Config(format!(
                "gamma must be positive, got {gamma}"
            )));
        }
        if proxy_bank.proxies.cols() != encoder.embedding_dim() {
            return Err(LabError::Dimension {
                expected: encoder.embedding_dim(),
                got: proxy_bank.proxies.cols(),
            });
        }
        Ok(Self {
            encoder,
            proxy_bank,
            gamma,
        })
    }

    /// Xavier encoder over `input → hidden… → embedding_dim` and random unit
    /// proxies, both drawn from `rng`.
    pub fn initialize(
        input_dim: usize,
        hidden: &[usize],
        embedding_dim: usize,
        num_classes: usize,
        gamma: f64,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        let mut dims = Vec::with_capacity(hidden.len() + 2);
        dims.push(input_dim);
        dims.extend_from_slice(hidden);
        dims.push(embedding_dim);
        let encoder = EncoderParams::xavier(&dims, rng)?;
        let proxy_bank = ProxyBank::random_unit(num_classes, embedding_dim, rng);
        Self::new(encoder, proxy_bank, gamma)
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    fn forward_cached(&self, x: &[f64]) -> Result<ForwardCache> {
        if x.len() != self.encoder.input_dim() {
            return Err(LabError::Dimension {
                expected: self.encoder.input_dim(),
                got: x.len(),
            });
        }
        let n_layers = self.encoder.layers.len();
        let mut inputs = Vec::with_capacity(n_layers);
        let mut pre = Vec::with_capacity(n_layers);
        let mut a = x.to_vec();
        for (i, layer) in self.encoder.layers.iter().enumerate() {
            let mut z = layer.weight.mul_vec(&a)?;
            for (zi, b) in z.iter_mut().zip(&layer.bias) {
                *zi += b;
            }
            let next = if i + 1 < n_layers {
                z.iter().map(|v| v.max(0.0)).collect()
            } else {
                z.clone()
            };
            inputs.push(std::mem::replace(&mut a, next));
            pre.push(z);
        }
        // every unit of the last hidden layer can be dead; the embedding is
        // then the zero vector and passes no gradient back
        let raw_norm = norm(&a);
        let embedding = if raw_norm == 0.0 {
            a
        } else {
            l2_normalize(&a)?
        };
        Ok(ForwardCache {
            inputs,
            pre,
            raw_norm,
            embedding,
        })
    }

    /// Unit-norm embedding of `x`.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_cached(x)?.embedding)
    }

    /// `γ·⟨embedding, normalize(w_c)⟩` for each class, in `class_set` order.
    pub fn logits(&self, embedding: &[f64], class_set: &[ClassId]) -> Result<Vec<f64>> {
        class_set
            .iter()
            .map(|&c| {
                let u = self.proxy_bank.unit_proxy(c).map_err(|e| match e {
                    LabError::Degenerate(_) => {
                        LabError::Degenerate(format!("proxy of class {c} has zero norm"))
                    }
                    other => other,
                })?;
                Ok(self.gamma * dot(embedding, &u)?)
            })
            .collect()
    }

    /// `−log softmax(logits)[y]` over `class_set`.
    pub fn sample_loss(&self, x: &[f64], y: ClassId, class_set: &[ClassId]) -> Result<f64> {
        let pos = label_position(y, class_set)?;
        let h = self.forward(x)?;
        let s = self.logits(&h, class_set)?;
        Ok(log_sum_exp(&s)? - s[pos])
    }

    /// Mean of [`ModelState::sample_loss`] over the batch.
    pub fn batch_loss<S: Labeled>(&self, batch: &[S], class_set: &[ClassId]) -> Result<f64> {
        if batch.is_empty() {
            return Err(LabError::EmptyInput("batch"));
        }
        check_class_set(class_set)?;
        let mut total = 0.0;
        for s in batch {
            total += self.sample_loss(s.features(), s.label(), class_set)?;
        }
        Ok(total / batch.len() as f64)
    }

    /// Exact gradient of [`ModelState::batch_loss`] with respect to every
    /// encoder parameter and every proxy row.
    pub fn backward<S: Labeled>(&self, batch: &[S], class_set: &[ClassId]) -> Result<GradientSet> {
        if batch.is_empty() {
            return Err(LabError::EmptyInput("batch"));
        }
        check_class_set(class_set)?;
        let mut grads = self.zero_gradient();
        let units: Vec<Vec<f64>> = class_set
            .iter()
            .map(|&c| self.proxy_bank.unit_proxy(c))
            .collect::<Result<_>>()?;
        // Σ over samples of ∂l/∂u_c, mapped through the proxy normalization at the end
        let dim = self.encoder.embedding_dim();
        let mut unit_grads = vec![vec![0.0; dim]; class_set.len()];
        let scale = 1.0 / batch.len() as f64;

        for sample in batch {
            let pos = label_position(sample.label(), class_set)?;
            let cache = self.forward_cached(sample.features())?;
            let h = &cache.embedding;
            let logits: Vec<f64> = units
                .iter()
                .map(|u| self.gamma * dot(h, u).expect("same dim"))
                .collect();
            let mut d_logits = stable_softmax(&logits)?;
            d_logits[pos] -= 1.0;

            let mut d_h = vec![0.0; dim];
            for ((u, &g), ug) in units.iter().zip(&d_logits).zip(unit_grads.iter_mut()) {
                let f = self.gamma * g;
                for k in 0..dim {
                    d_h[k] += f * u[k];
                    ug[k] += f * h[k];
                }
            }
            if cache.raw_norm > 0.0 {
                let d_raw = through_normalization(h, cache.raw_norm, &d_h);
                self.backprop_encoder(&cache, d_raw, scale, &mut grads)?;
            }
        }

        for ((&c, u), ug) in class_set.iter().zip(&units).zip(&unit_grads) {
            let w_norm = norm(self.proxy_bank.proxies.row(c));
            let d_w = through_normalization(u, w_norm, ug);
            for (g, d) in grads.proxies.row_mut(c).iter_mut().zip(d_w) {
                *g += scale * d;
            }
        }
        Ok(grads)
    }

    fn backprop_encoder(
        &self,
        cache: &ForwardCache,
        d_out: Vec<f64>,
        scale: f64,
        grads: &mut GradientSet,
    ) -> Result<()> {
        let mut d_z = d_out;
        for l in (0..self.encoder.layers.len()).rev() {
            let layer = &self.encoder.layers[l];
            let g = &mut grads.layers[l];
            g.weight.add_outer(&d_z, &cache.inputs[l], scale);
            for (gb, d) in g.bias.iter_mut().zip(&d_z) {
                *gb += scale * d;
            }
            if l == 0 {
                break;
            }
            let d_a = layer.weight.mul_vec_transposed(&d_z)?;
            d_z = d_a
                .into_iter()
                .zip(&cache.pre[l - 1])
                .map(|(d, &z)| if z > 0.0 { d } else { 0.0 })
                .collect();
        }
        Ok(())
    }

    pub fn sample_gradient(
        &self,
        x: &[f64],
        y: ClassId,
        class_set: &[ClassId],
    ) -> Result<GradientSet> {
        struct One<'a>(&'a [f64], ClassId);
        impl Labeled for One<'_> {
            fn features(&self) -> &[f64] {
                self.0
            }
            fn label(&self) -> ClassId {
                self.1
            }
        }
        self.backward(&[One(x, y)], class_set)
    }

    pub fn zero_gradient(&self) -> GradientSet {
        GradientSet {
            layers: self.encoder.layers.iter().map(Layer::zeros_like).collect(),
            proxies: Matrix::zeros(
                self.proxy_bank.proxies.rows(),
                self.proxy_bank.proxies.cols(),
            ),
        }
    }

    fn check_gradient_shape(&self, grads: &GradientSet) -> Result<()> {
        let layers_ok = grads.layers.len() == self.encoder.layers.len()
            && grads
                .layers
                .iter()
                .zip(&self.encoder.layers)
                .all(|(g, p)| g.same_shape(p));
        if !layers_ok || !grads.proxies.same_shape(&self.proxy_bank.proxies) {
            return Err(LabError::Dimension {
                expected: self.num_parameters(),
                got: grads.len(),
            });
        }
        Ok(())
    }

    pub fn num_parameters(&self) -> usize {
        self.encoder
            .layers
            .iter()
            .map(|l| l.weight.as_slice().len() + l.bias.len())
            .sum::<usize>()
            + self.proxy_bank.proxies.as_slice().len()
    }

    /// All trainable parameters flattened in [`GradientSet::flatten`] order.
    pub fn parameters(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_parameters());
        for l in &self.encoder.layers {
            out.extend_from_slice(l.weight.as_slice());
            out.extend_from_slice(&l.bias);
        }
        out.extend_from_slice(self.proxy_bank.proxies.as_slice());
        out
    }

    pub fn set_parameters(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.num_parameters() {
            return Err(LabError::Dimension {
                expected: self.num_parameters(),
                got: values.len(),
            });
        }
        let mut rest = values;
        let mut take = |dst: &mut [f64]| {
            let (head, tail) = rest.split_at(dst.len());
            dst.copy_from_slice(head);
            rest = tail;
        };
        for l in &mut self.encoder.layers {
            take(l.weight.as_mut_slice());
            take(&mut l.bias);
        }
        take(self.proxy_bank.proxies.as_mut_slice());
        Ok(())
    }

    /// In-place `p ← p − α·g`.
    pub fn apply_sgd(&mut self, grads: &GradientSet, alpha: f64) -> Result<()> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(LabError::Config(format!(
                "learning rate must be positive, got {alpha}"
            )));
        }
        self.check_gradient_shape(grads)?;
        for (p, g) in self.encoder.layers.iter_mut().zip(&grads.layers) {
            axpy(p.weight.as_mut_slice(), g.weight.as_slice(), -alpha);
            axpy(&mut p.bias, &g.bias, -alpha);
        }
        axpy(
            self.proxy_bank.proxies.as_mut_slice(),
            grads.proxies.as_slice(),
            -alpha,
        );
        Ok(())
    }

    /// Returns the updated state; `self` is untouched.
    pub fn sgd_step(&self, grads: &GradientSet, alpha: f64) -> Result<ModelState> {
        let mut next = self.clone();
        next.apply_sgd(grads, alpha)?;
        Ok(next)
    }

    /// Would-be parameters after one SGD step on `batch`. `alpha == 0`
    /// returns an identical clone.
    pub fn virtual_step<S: Labeled>(
        &self,
        batch: &[S],
        class_set: &[ClassId],
        alpha: f64,
    ) -> Result<ModelState> {
        if alpha == 0.0 {
            return Ok(self.clone());
        }
        let grads = self.backward(batch, class_set)?;
        self.sgd_step(&grads, alpha)
    }

    /// Class with the largest logit; ties go to the smallest class id.
    pub fn predict(&self, x: &[f64], class_set: &[ClassId]) -> Result<ClassId> {
        if class_set.is_empty() {
            return Err(LabError::EmptyInput("class set"));
        }
        let h = self.forward(x)?;
        let logits = self.logits(&h, class_set)?;
        let mut best = (class_set[0], logits[0]);
        for (&c, &s) in class_set.iter().zip(&logits).skip(1) {
            if s > best.1 || (s == best.1 && c < best.0) {
                best = (c, s);
            }
        }
        Ok(best.0)
    }
}

/// Maps `∂L/∂v` for `v = a/‖a‖` back to `∂L/∂a = (g − v⟨v,g⟩)/‖a‖`.
fn through_normalization(unit: &[f64], raw_norm: f64, grad: &[f64]) -> Vec<f64> {
    let proj: f64 = unit.iter().zip(grad).map(|(u, g)| u * g).sum();
    unit.iter()
        .zip(grad)
        .map(|(u, g)| (g - u * proj) / raw_norm)
        .collect()
}

fn axpy(y: &mut [f64], x: &[f64], a: f64) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

fn label_position(y: ClassId, class_set: &[ClassId]) -> Result<usize> {
    class_set
        .iter()
        .position(|&c| c == y)
        .ok_or(LabError::LabelOutOfScope(y))
}

fn check_class_set(class_set: &[ClassId]) -> Result<()> {
    if class_set.is_empty() {
        return Err(LabError::EmptyInput("class set"));
    }
    for (i, c) in class_set.iter().enumerate() {
        if class_set[..i].contains(c) {
            return Err(LabError::Config(format!("class {c} repeated in class set")));
        }
    }
    Ok(())
}

impl GradientSet {
    /// Layers in order (weights row-major, then bias), followed by proxies.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len());
        for l in &self.layers {
            out.extend_from_slice(l.weight.as_slice());
            out.extend_from_slice(&l.bias);
        }
        out.extend_from_slice(self.proxies.as_slice());
        out
    }

    pub fn len(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.as_slice().len() + l.bias.len())
            .sum::<usize>()
            + self.proxies.as_slice().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn same_shape(&self, other: &GradientSet) -> bool {
        self.layers.len() == other.layers.len()
            && self
                .layers
                .iter()
                .zip(&other.layers)
                .all(|(a, b)| a.same_shape(b))
            && self.proxies.same_shape(&other.proxies)
    }

    pub fn scale(&mut self, factor: f64) {
        for l in &mut self.layers {
            l.weight
                .as_mut_slice()
                .iter_mut()
                .for_each(|x| *x *= factor);
            l.bias.iter_mut().for_each(|x| *x *= factor);
        }
        self.proxies
            .as_mut_slice()
            .iter_mut()
            .for_each(|x| *x *= factor);
    }

    pub fn add(&mut self, other: &GradientSet) -> Result<()> {
        if !self.same_shape(other) {
            return Err(LabError::Dimension {
                expected: self.len(),
                got: other.len(),
            });
        }
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            axpy(a.weight.as_mut_slice(), b.weight.as_slice(), 1.0);
            axpy(&mut a.bias, &b.bias, 1.0);
        }
        axpy(self.proxies.as_mut_slice(), other.proxies.as_slice(), 1.0);
        Ok(())
    }

    pub fn dot(&self, other: &GradientSet) -> Result<f64> {
        if !self.same_shape(other) {
            return Err(LabError::Dimension {
                expected: self.len(),
                got: other.len(),
            });
        }
        dot(&self.flatten(), &other.flatten())
    }

    pub fn norm(&self) -> f64 {
        norm(&self.flatten())
    }
}
