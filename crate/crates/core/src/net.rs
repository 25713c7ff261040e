//! Residual MLP classifier with explicit forward and backward passes.
//!
//! ```text
//! h0      = x W_in + b_in
//! h_{i+1} = h_i + keep_i * ((relu(h_i W1 + b1) * drop) W2 + b2)
//! logits  = h_B W_out + b_out
//! ```
//!
//! `drop` is an inverted-dropout mask on the hidden activations and `keep_i`
//! a per-sample inverted drop-path factor on the whole residual branch. Both
//! are identity in eval mode.

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng as _;

use crate::error::{Error, Result};
use crate::seed::{self, stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConfig {
    pub input_dim: usize,
    pub hidden: usize,
    pub blocks: usize,
    pub classes: usize,
    pub dropout: f64,
    pub drop_path: f64,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden == 0 || self.classes == 0 {
            return Err(Error::config(format!(
                "model dims must be >= 1 (input {}, hidden {}, classes {})",
                self.input_dim, self.hidden, self.classes
            )));
        }
        for (name, rate) in [("dropout", self.dropout), ("drop_path", self.drop_path)] {
            if !(0.0..1.0).contains(&rate) {
                return Err(Error::config(format!("{name} rate must lie in [0, 1), got {rate}")));
            }
        }
        Ok(())
    }
}

/// Dense layer; `weight` is `in × out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Linear {
    fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            weight: Array2::zeros((fan_in, fan_out)),
            bias: Array1::zeros(fan_out),
        }
    }

    fn uniform(fan_in: usize, fan_out: usize, rng: &mut seed::Rng) -> Self {
        let bound = (3.0 / fan_in as f64).sqrt();
        Self {
            weight: Array2::from_shape_fn((fan_in, fan_out), |_| rng.random_range(-bound..=bound)),
            bias: Array1::zeros(fan_out),
        }
    }

    fn apply(&self, x: &ArrayView2<f64>) -> Array2<f64> {
        x.dot(&self.weight) + &self.bias
    }

    /// Accumulates parameter gradients and returns the input gradient.
    fn backprop(&self, x: &ArrayView2<f64>, grad_out: &Array2<f64>, grad: &mut Linear) -> Array2<f64> {
        grad.weight += &x.t().dot(grad_out);
        grad.bias += &grad_out.sum_axis(Axis(0));
        grad_out.dot(&self.weight.t())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResidualBlock {
    pub fc1: Linear,
    pub fc2: Linear,
}

/// Parameter (or gradient) tensors in declaration order.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub input: Linear,
    pub blocks: Vec<ResidualBlock>,
    pub head: Linear,
}

impl MlpParams {
    pub fn zeros(cfg: &ModelConfig) -> Self {
        Self {
            input: Linear::zeros(cfg.input_dim, cfg.hidden),
            blocks: (0..cfg.blocks)
                .map(|_| ResidualBlock {
                    fc1: Linear::zeros(cfg.hidden, cfg.hidden),
                    fc2: Linear::zeros(cfg.hidden, cfg.hidden),
                })
                .collect(),
            head: Linear::zeros(cfg.hidden, cfg.classes),
        }
    }

    fn layers(&self) -> Vec<&Linear> {
        let mut out = vec![&self.input];
        for b in &self.blocks {
            out.push(&b.fc1);
            out.push(&b.fc2);
        }
        out.push(&self.head);
        out
    }

    fn layers_mut(&mut self) -> Vec<&mut Linear> {
        let mut out = vec![&mut self.input];
        for b in &mut self.blocks {
            out.push(&mut b.fc1);
            out.push(&mut b.fc2);
        }
        out.push(&mut self.head);
        out
    }

    /// Flat views of every tensor, weight before bias, layer by layer.
    /// The flag marks weight matrices (subject to weight decay).
    pub fn tensors(&self) -> Vec<(&[f64], bool)> {
        self.layers()
            .into_iter()
            .flat_map(|l| {
                [
                    (l.weight.as_slice().expect("standard layout"), true),
                    (l.bias.as_slice().expect("standard layout"), false),
                ]
            })
            .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<(&mut [f64], bool)> {
        self.layers_mut()
            .into_iter()
            .flat_map(|l| {
                [
                    (l.weight.as_slice_mut().expect("standard layout"), true),
                    (l.bias.as_slice_mut().expect("standard layout"), false),
                ]
            })
            .collect()
    }

    pub fn num_values(&self) -> usize {
        self.tensors().iter().map(|(t, _)| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(t, _)| t.iter().all(|v| v.is_finite()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    pub config: ModelConfig,
    pub params: MlpParams,
}

/// Uniform `±sqrt(3 / fan_in)` weights, zero biases.
pub fn init_model(config: ModelConfig, seed: u64) -> Result<MlpModel> {
    config.validate()?;
    let mut rng = seed::rng(seed, stream::INIT, 0);
    let h = config.hidden;
    let params = MlpParams {
        input: Linear::uniform(config.input_dim, h, &mut rng),
        blocks: (0..config.blocks)
            .map(|_| ResidualBlock {
                fc1: Linear::uniform(h, h, &mut rng),
                fc2: Linear::uniform(h, h, &mut rng),
            })
            .collect(),
        head: Linear::uniform(h, config.classes, &mut rng),
    };
    Ok(MlpModel { config, params })
}

/// Stochastic masks of one train-mode forward pass, already carrying the
/// inverted scaling (entries are `0` or `1/(1-rate)`).
#[derive(Debug, Clone, PartialEq)]
pub struct Masks {
    /// Per block, `N × hidden`; `None` means identity.
    pub dropout: Vec<Option<Array2<f64>>>,
    /// Per block, one factor per sample; `None` means identity.
    pub drop_path: Vec<Option<Array1<f64>>>,
}

impl Masks {
    pub fn identity(blocks: usize) -> Self {
        Self {
            dropout: vec![None; blocks],
            drop_path: vec![None; blocks],
        }
    }

    pub fn sample(config: &ModelConfig, batch: usize, rng: &mut impl rand::Rng) -> Self {
        let mut masks = Self::identity(config.blocks);
        for b in 0..config.blocks {
            if config.dropout > 0.0 {
                let keep = 1.0 / (1.0 - config.dropout);
                masks.dropout[b] = Some(Array2::from_shape_fn((batch, config.hidden), |_| {
                    if rng.random::<f64>() < config.dropout {
                        0.0
                    } else {
                        keep
                    }
                }));
            }
            if config.drop_path > 0.0 {
                let keep = 1.0 / (1.0 - config.drop_path);
                masks.drop_path[b] = Some(Array1::from_shape_fn(batch, |_| {
                    if rng.random::<f64>() < config.drop_path {
                        0.0
                    } else {
                        keep
                    }
                }));
            }
        }
        masks
    }
}

/// Activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    config: ModelConfig,
    input: Array2<f64>,
    /// Residual stream `h_0 .. h_B`.
    stream: Vec<Array2<f64>>,
    /// Pre-ReLU `h_i W1 + b1` per block.
    pre: Vec<Array2<f64>>,
    /// Post-ReLU, post-dropout activations per block.
    hidden: Vec<Array2<f64>>,
    masks: Masks,
}

impl ForwardCache {
    pub fn masks(&self) -> &Masks {
        &self.masks
    }

    pub fn batch_size(&self) -> usize {
        self.input.nrows()
    }
}

fn check_input(model: &MlpModel, x: &ArrayView2<f64>) -> Result<()> {
    if x.ncols() != model.config.input_dim {
        return Err(Error::shape(format!(
            "batch width {} does not match model input dim {}",
            x.ncols(),
            model.config.input_dim
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("forward input contains non-finite values".into()));
    }
    Ok(())
}

/// Forward pass. Train mode draws dropout and drop-path masks from `rng`;
/// eval mode never touches it.
pub fn forward(
    model: &MlpModel,
    x: ArrayView2<f64>,
    mode: Mode,
    rng: &mut impl rand::Rng,
) -> Result<(Array2<f64>, ForwardCache)> {
    let masks = match mode {
        Mode::Train => Masks::sample(&model.config, x.nrows(), rng),
        Mode::Eval => Masks::identity(model.config.blocks),
    };
    forward_with_masks(model, x, masks)
}

/// Eval-mode logits only.
pub fn infer(model: &MlpModel, x: ArrayView2<f64>) -> Result<Array2<f64>> {
    Ok(forward_with_masks(model, x, Masks::identity(model.config.blocks))?.0)
}

/// Forward pass with explicit masks (used directly by gradient checks).
pub fn forward_with_masks(model: &MlpModel, x: ArrayView2<f64>, masks: Masks) -> Result<(Array2<f64>, ForwardCache)> {
    check_input(model, &x)?;
    let n = x.nrows();
    let cfg = model.config;
    if masks.dropout.len() != cfg.blocks || masks.drop_path.len() != cfg.blocks {
        return Err(Error::shape("mask count does not match block count"));
    }
    let p = &model.params;
    let mut h = p.input.apply(&x);
    let mut stream = Vec::with_capacity(cfg.blocks + 1);
    let mut pre = Vec::with_capacity(cfg.blocks);
    let mut hidden = Vec::with_capacity(cfg.blocks);
    for (b, block) in p.blocks.iter().enumerate() {
        let z = block.fc1.apply(&h.view());
        let mut a = z.mapv(|v| v.max(0.0));
        if let Some(m) = &masks.dropout[b] {
            if m.dim() != (n, cfg.hidden) {
                return Err(Error::shape("dropout mask shape mismatch"));
            }
            a *= m;
        }
        let mut r = block.fc2.apply(&a.view());
        if let Some(keep) = &masks.drop_path[b] {
            if keep.len() != n {
                return Err(Error::shape("drop-path mask length mismatch"));
            }
            Zip::from(r.rows_mut()).and(keep).for_each(|mut row, &k| row *= k);
        }
        let next = &h + &r;
        stream.push(h);
        pre.push(z);
        hidden.push(a);
        h = next;
    }
    let logits = p.head.apply(&h.view());
    stream.push(h);
    Ok((
        logits,
        ForwardCache {
            config: cfg,
            input: x.to_owned(),
            stream,
            pre,
            hidden,
            masks,
        },
    ))
}

/// Gradients of `sum(logits * grad_logits)` with respect to every parameter.
pub fn backward(model: &MlpModel, cache: &ForwardCache, grad_logits: ArrayView2<f64>) -> Result<MlpParams> {
    let cfg = model.config;
    if cache.config != cfg || cache.stream.len() != cfg.blocks + 1 {
        return Err(Error::shape("forward cache was produced by a different model"));
    }
    let n = cache.batch_size();
    if grad_logits.dim() != (n, cfg.classes) {
        return Err(Error::shape(format!(
            "grad_logits is {:?}, expected ({n}, {})",
            grad_logits.dim(),
            cfg.classes
        )));
    }
    let p = &model.params;
    let mut grads = MlpParams::zeros(&cfg);
    let g = grad_logits.to_owned();
    let mut g_h = p.head.backprop(&cache.stream[cfg.blocks].view(), &g, &mut grads.head);

    for b in (0..cfg.blocks).rev() {
        let block = &p.blocks[b];
        let gb = &mut grads.blocks[b];
        let mut g_r = g_h.clone();
        if let Some(keep) = &cache.masks.drop_path[b] {
            Zip::from(g_r.rows_mut()).and(keep).for_each(|mut row, &k| row *= k);
        }
        let mut g_a = block.fc2.backprop(&cache.hidden[b].view(), &g_r, &mut gb.fc2);
        if let Some(m) = &cache.masks.dropout[b] {
            g_a *= m;
        }
        Zip::from(&mut g_a).and(&cache.pre[b]).for_each(|g, &z| {
            if z <= 0.0 {
                *g = 0.0;
            }
        });
        let g_in = block.fc1.backprop(&cache.stream[b].view(), &g_a, &mut gb.fc1);
        g_h += &g_in;
    }
    p.input.backprop(&cache.input.view(), &g_h, &mut grads.input);
    Ok(grads)
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Elementwise sigmoid of a logit matrix.
pub fn predict_probs(logits: &Array2<f64>) -> Array2<f64> {
    logits.mapv(sigmoid)
}

#[cfg(test)]
mod tests {
    use ndarray::Array2;
    use rand::SeedableRng;

    use super::*;

    fn cfg(d: usize, h: usize, b: usize, c: usize, dropout: f64, drop_path: f64) -> ModelConfig {
        ModelConfig {
            input_dim: d,
            hidden: h,
            blocks: b,
            classes: c,
            dropout,
            drop_path,
        }
    }

    fn batch(n: usize, d: usize, seed: u64) -> Array2<f64> {
        let mut rng = seed::Rng::seed_from_u64(seed);
        Array2::from_shape_fn((n, d), |_| rng.random_range(-1.0..1.0))
    }

    fn scalar_loss(model: &MlpModel, x: &Array2<f64>, masks: &Masks, g: &Array2<f64>) -> f64 {
        let (logits, _) = forward_with_masks(model, x.view(), masks.clone()).unwrap();
        (&logits * g).sum()
    }

    #[test]
    fn init_is_deterministic_with_zero_biases_and_bounded_weights() {
        let c = cfg(7, 5, 2, 3, 0.5, 0.4);
        let a = init_model(c, 42).unwrap();
        assert_eq!(a, init_model(c, 42).unwrap());
        assert_ne!(a, init_model(c, 43).unwrap());
        for l in a.params.layers() {
            assert!(l.bias.iter().all(|&b| b == 0.0));
            let bound = 3f64.sqrt() / (l.weight.nrows() as f64).sqrt();
            assert!(l.weight.iter().all(|w| w.abs() <= bound));
        }
    }

    #[test]
    fn init_rejects_bad_config() {
        assert!(init_model(cfg(0, 4, 1, 2, 0.0, 0.0), 0).is_err());
        assert!(init_model(cfg(3, 4, 1, 0, 0.0, 0.0), 0).is_err());
        assert!(init_model(cfg(3, 4, 1, 2, 1.0, 0.0), 0).is_err());
        assert!(init_model(cfg(3, 4, 1, 2, 0.0, -0.1), 0).is_err());
    }

    #[test]
    fn zero_model_gives_zero_logits() {
        let c = cfg(4, 3, 2, 2, 0.0, 0.0);
        let model = MlpModel {
            config: c,
            params: MlpParams::zeros(&c),
        };
        assert!(infer(&model, batch(5, 4, 1).view()).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn no_stochasticity_train_matches_eval() {
        let model = init_model(cfg(6, 5, 2, 3, 0.0, 0.0), 3).unwrap();
        let x = batch(4, 6, 2);
        let mut rng = seed::Rng::seed_from_u64(0);
        let (train, _) = forward(&model, x.view(), Mode::Train, &mut rng).unwrap();
        assert_eq!(train, infer(&model, x.view()).unwrap());
    }

    #[test]
    fn eval_forward_is_deterministic() {
        let model = init_model(cfg(6, 5, 2, 3, 0.5, 0.4), 3).unwrap();
        let x = batch(4, 6, 2);
        let mut r1 = seed::Rng::seed_from_u64(1);
        let mut r2 = seed::Rng::seed_from_u64(2);
        let a = forward(&model, x.view(), Mode::Eval, &mut r1).unwrap().0;
        let b = forward(&model, x.view(), Mode::Eval, &mut r2).unwrap().0;
        assert_eq!(a, b);
    }

    #[test]
    fn forward_rejects_bad_input() {
        let model = init_model(cfg(3, 4, 1, 2, 0.0, 0.0), 0).unwrap();
        assert!(infer(&model, batch(2, 4, 0).view()).is_err());
        let mut x = batch(2, 3, 0);
        x[[1, 1]] = f64::INFINITY;
        assert!(infer(&model, x.view()).is_err());
    }

    #[test]
    fn sigmoid_examples() {
        assert_eq!(sigmoid(0.0), 0.5);
        for x in [-30.0, -2.5, 0.3, 7.0] {
            assert!((sigmoid(x) + sigmoid(-x) - 1.0).abs() < 1e-15);
        }
        assert!((sigmoid(100.0) - 1.0).abs() < 1e-12);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) <= 1.0);
        let p = predict_probs(&ndarray::array![[0.0, 100.0]]);
        assert_eq!(p[[0, 0]], 0.5);
    }

    #[test]
    fn zero_upstream_gradient_gives_zero_gradients() {
        let model = init_model(cfg(5, 4, 2, 3, 0.3, 0.2), 1).unwrap();
        let mut rng = seed::Rng::seed_from_u64(4);
        let (_, cache) = forward(&model, batch(3, 5, 0).view(), Mode::Train, &mut rng).unwrap();
        let grads = backward(&model, &cache, Array2::zeros((3, 3)).view()).unwrap();
        assert!(grads.tensors().iter().all(|(t, _)| t.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn backward_is_repeatable_and_rejects_mismatch() {
        let model = init_model(cfg(5, 4, 2, 3, 0.3, 0.2), 1).unwrap();
        let mut rng = seed::Rng::seed_from_u64(4);
        let (_, cache) = forward(&model, batch(3, 5, 0).view(), Mode::Train, &mut rng).unwrap();
        let g = batch(3, 3, 9);
        assert_eq!(
            backward(&model, &cache, g.view()).unwrap(),
            backward(&model, &cache, g.view()).unwrap()
        );
        let other = init_model(cfg(5, 6, 2, 3, 0.3, 0.2), 1).unwrap();
        assert!(backward(&other, &cache, g.view()).is_err());
        assert!(backward(&model, &cache, batch(2, 3, 9).view()).is_err());
    }

    /// Central differences of `sum(logits * g)` against the analytic pass.
    #[test]
    fn gradients_match_finite_differences() {
        let configs = [
            cfg(3, 4, 1, 2, 0.0, 0.0),
            cfg(8, 8, 2, 8, 0.5, 0.4),
            cfg(5, 6, 2, 3, 0.3, 0.0),
            cfg(4, 7, 0, 5, 0.0, 0.0),
            cfg(6, 3, 2, 4, 0.0, 0.5),
            cfg(2, 8, 1, 1, 0.2, 0.2),
        ];
        for (k, c) in configs.iter().enumerate() {
            let mut model = init_model(*c, 100 + k as u64).unwrap();
            // Non-zero biases exercise every path.
            let mut rng = seed::Rng::seed_from_u64(k as u64);
            for (t, _) in model.params.tensors_mut() {
                for v in t.iter_mut() {
                    *v += rng.random_range(-0.1..0.1);
                }
            }
            let x = batch(4, c.input_dim, 7 + k as u64);
            let g = batch(4, c.classes, 17 + k as u64);
            let masks = Masks::sample(c, 4, &mut rng);
            let (_, cache) = forward_with_masks(&model, x.view(), masks.clone()).unwrap();
            let analytic = backward(&model, &cache, g.view()).unwrap();
            let analytic: Vec<f64> = analytic.tensors().iter().flat_map(|(t, _)| t.to_vec()).collect();

            let step = 1e-5;
            let mut idx = 0;
            let count = model.params.num_values();
            let mut max_rel: f64 = 0.0;
            for i in 0..count {
                let bump = |m: &mut MlpModel, delta: f64| {
                    let mut seen = 0;
                    for (t, _) in m.params.tensors_mut() {
                        if i < seen + t.len() {
                            t[i - seen] += delta;
                            return;
                        }
                        seen += t.len();
                    }
                };
                let mut plus = model.clone();
                bump(&mut plus, step);
                let mut minus = model.clone();
                bump(&mut minus, -step);
                let numeric = (scalar_loss(&plus, &x, &masks, &g) - scalar_loss(&minus, &x, &masks, &g)) / (2.0 * step);
                let a = analytic[idx];
                let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
                max_rel = max_rel.max(rel);
                idx += 1;
            }
            assert!(max_rel < 1e-4, "config {k}: max relative error {max_rel}");
        }
    }

    #[test]
    fn train_mode_expectation_matches_eval() {
        // One block: every mask enters the logits linearly, so the
        // expectation identity is exact. Deeper stacks pass masked
        // activations through later ReLUs and only match approximately.
        let c = cfg(4, 6, 1, 3, 0.5, 0.4);
        let model = init_model(c, 8).unwrap();
        let x = batch(1, 4, 5);
        let eval = infer(&model, x.view()).unwrap();
        let draws = 20_000;
        let mut rng = seed::Rng::seed_from_u64(77);
        let mut sum = Array2::<f64>::zeros((1, 3));
        let mut sq = Array2::<f64>::zeros((1, 3));
        for _ in 0..draws {
            let (l, _) = forward(&model, x.view(), Mode::Train, &mut rng).unwrap();
            sum += &l;
            sq += &l.mapv(|v| v * v);
        }
        let n = draws as f64;
        for j in 0..3 {
            let mean = sum[[0, j]] / n;
            let var = sq[[0, j]] / n - mean * mean;
            let se = (var / n).sqrt();
            assert!((mean - eval[[0, j]]).abs() < 3.0 * se + 1e-12, "class {j}: {mean} vs {} (se {se})", eval[[0, j]]);
        }
    }
}
