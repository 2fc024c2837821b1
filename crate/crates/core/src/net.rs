//! Feed-forward preference network with hand-written backpropagation.
//!
//! Parameters live in one flat vector. Layer `l` with fan-in `m` and fan-out
//! `n` occupies `n * m` row-major weights followed by `n` biases, so the total
//! length is `sum((fan_in + 1) * fan_out)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{c, clamp01, Scalar};
use crate::world::{PreferenceVector, SituationContext, SituationThresholds};

pub const FEATURE_DIM: usize = 10;
pub const OUTPUT_DIM: usize = 4;
pub const DEFAULT_LAYERS: [usize; 4] = [FEATURE_DIM, 64, 64, OUTPUT_DIM];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Logistic,
}

impl Activation {
    #[inline]
    fn apply<T: Scalar>(self, z: T) -> T {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Logistic => T::one() / (T::one() + (-z).exp()),
        }
    }

    /// Derivative expressed through the activation's output.
    #[inline]
    fn slope_from_output<T: Scalar>(self, a: T) -> T {
        match self {
            Activation::Tanh => T::one() - a * a,
            Activation::Logistic => a * (T::one() - a),
        }
    }
}

/// Network input: normalized status (4), situation one-hot FF/TF/FT/TT (4),
/// obstacle and target distances divided by twice their thresholds (2).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct FeatureVector<T>(pub [T; FEATURE_DIM]);

impl<T: Scalar> FeatureVector<T> {
    pub fn new(status: &PreferenceVector<T>, ctx: &SituationContext<T>, thresholds: &SituationThresholds) -> Self {
        let mut f = [T::zero(); FEATURE_DIM];
        f[..4].copy_from_slice(&status.to_array());
        f[4 + ctx.situation().index()] = T::one();
        f[8] = scaled_distance(ctx.dist_obstacle, thresholds.obstacle);
        f[9] = scaled_distance(ctx.dist_target, thresholds.target);
        Self(f)
    }

    pub fn as_slice(&self) -> &[T] {
        &self.0
    }
}

fn scaled_distance<T: Scalar>(d: T, threshold: f64) -> T {
    if d.is_finite() {
        clamp01(d / c(2.0 * threshold))
    } else {
        T::one()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct LabeledSample<T> {
    pub input: FeatureVector<T>,
    pub label: PreferenceVector<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct ModelParams<T> {
    pub layer_dims: Vec<usize>,
    pub activations: Vec<Activation>,
    pub theta: Vec<T>,
}

pub fn param_count(layer_dims: &[usize]) -> usize {
    layer_dims.windows(2).map(|w| (w[0] + 1) * w[1]).sum()
}

impl<T: Scalar> ModelParams<T> {
    /// Tanh hidden layers, logistic output, all parameters zero.
    pub fn zeros(layer_dims: &[usize]) -> Self {
        let n_layers = layer_dims.len().saturating_sub(1);
        let activations = (0..n_layers)
            .map(|l| if l + 1 == n_layers { Activation::Logistic } else { Activation::Tanh })
            .collect();
        Self { layer_dims: layer_dims.to_vec(), activations, theta: vec![T::zero(); param_count(layer_dims)] }
    }

    /// Weights uniform in `±sqrt(6 / (fan_in + fan_out))`, biases zero.
    pub fn init(layer_dims: &[usize], seed: u64) -> Self {
        let mut params = Self::zeros(layer_dims);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut off = 0;
        for w in layer_dims.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for v in &mut params.theta[off..off + fan_in * fan_out] {
                *v = c(rng.gen_range(-limit..=limit));
            }
            off += (fan_in + 1) * fan_out;
        }
        params
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_dims.len() < 2 || self.activations.len() != self.layer_dims.len() - 1 {
            return Err(Error::InvalidConfig("layer_dims and activations disagree".into()));
        }
        let expected = param_count(&self.layer_dims);
        if self.theta.len() != expected {
            return Err(Error::Shape { expected, got: self.theta.len() });
        }
        if self.theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("non-finite parameter".into()));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_dims.last().unwrap_or(&0)
    }

    /// Post-activation outputs of every layer, input first.
    fn activations_for(&self, input: &[T]) -> Result<Vec<Vec<T>>> {
        if input.len() != self.input_dim() {
            return Err(Error::Shape { expected: self.input_dim(), got: input.len() });
        }
        let mut acts = Vec::with_capacity(self.layer_dims.len());
        acts.push(input.to_vec());
        let mut off = 0;
        for (l, w) in self.layer_dims.windows(2).enumerate() {
            let (fan_in, fan_out) = (w[0], w[1]);
            let weights = &self.theta[off..off + fan_in * fan_out];
            let bias = &self.theta[off + fan_in * fan_out..off + (fan_in + 1) * fan_out];
            let prev = &acts[l];
            let act = self.activations[l];
            let out: Vec<T> = (0..fan_out)
                .map(|o| {
                    let row = &weights[o * fan_in..(o + 1) * fan_in];
                    let z = row.iter().zip(prev).fold(bias[o], |s, (w, x)| s + *w * *x);
                    act.apply(z)
                })
                .collect();
            acts.push(out);
            off += (fan_in + 1) * fan_out;
        }
        Ok(acts)
    }

    pub fn forward_raw(&self, input: &[T]) -> Result<Vec<T>> {
        Ok(self.activations_for(input)?.pop().unwrap_or_default())
    }

    pub fn forward(&self, input: &FeatureVector<T>) -> Result<PreferenceVector<T>> {
        let out = self.forward_raw(input.as_slice())?;
        if out.len() != OUTPUT_DIM {
            return Err(Error::Shape { expected: OUTPUT_DIM, got: out.len() });
        }
        Ok(PreferenceVector::from_array([out[0], out[1], out[2], out[3]]))
    }

    /// Accumulate the gradient of one sample's loss into `grad`.
    fn backprop_into(&self, input: &[T], label: &[T], grad: &mut [T]) -> Result<()> {
        let acts = self.activations_for(input)?;
        let n_layers = self.layer_dims.len() - 1;
        let out = &acts[n_layers];
        if label.len() != out.len() {
            return Err(Error::Shape { expected: out.len(), got: label.len() });
        }
        let mut delta: Vec<T> = out
            .iter()
            .zip(label)
            .map(|(y, t)| (*y - *t) * self.activations[n_layers - 1].slope_from_output(*y))
            .collect();

        let mut offsets = Vec::with_capacity(n_layers);
        let mut off = 0;
        for w in self.layer_dims.windows(2) {
            offsets.push(off);
            off += (w[0] + 1) * w[1];
        }

        for l in (0..n_layers).rev() {
            let (fan_in, fan_out) = (self.layer_dims[l], self.layer_dims[l + 1]);
            let off = offsets[l];
            let prev = &acts[l];
            for o in 0..fan_out {
                let d = delta[o];
                let row = &mut grad[off + o * fan_in..off + (o + 1) * fan_in];
                for (g, x) in row.iter_mut().zip(prev) {
                    *g = *g + d * *x;
                }
                grad[off + fan_in * fan_out + o] = grad[off + fan_in * fan_out + o] + d;
            }
            if l > 0 {
                let weights = &self.theta[off..off + fan_in * fan_out];
                let act = self.activations[l - 1];
                delta = (0..fan_in)
                    .map(|k| {
                        let back = (0..fan_out).fold(T::zero(), |s, o| s + weights[o * fan_in + k] * delta[o]);
                        back * act.slope_from_output(prev[k])
                    })
                    .collect();
            }
        }
        Ok(())
    }
}

/// Half squared Euclidean distance between prediction and label.
pub fn loss<T: Scalar>(prediction: &PreferenceVector<T>, label: &PreferenceVector<T>) -> T {
    let (p, l) = (prediction.to_array(), label.to_array());
    c::<T>(0.5) * p.iter().zip(&l).map(|(a, b)| (*a - *b) * (*a - *b)).sum::<T>()
}

pub fn batch_loss<T: Scalar>(params: &ModelParams<T>, batch: &[LabeledSample<T>]) -> Result<T> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut total = T::zero();
    for s in batch {
        total = total + loss(&params.forward(&s.input)?, &s.label);
    }
    Ok(total / c(batch.len() as f64))
}

/// Exact gradient of the mean batch loss with respect to the flat parameters.
pub fn gradient<T: Scalar>(params: &ModelParams<T>, batch: &[LabeledSample<T>]) -> Result<Vec<T>> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut grad = vec![T::zero(); params.theta.len()];
    for s in batch {
        params.backprop_into(s.input.as_slice(), &s.label.to_array(), &mut grad)?;
    }
    let n: T = c(batch.len() as f64);
    grad.iter_mut().for_each(|g| *g = *g / n);
    Ok(grad)
}

pub fn sgd_step<T: Scalar>(params: &ModelParams<T>, batch: &[LabeledSample<T>], lr: T) -> Result<ModelParams<T>> {
    let grad = gradient(params, batch)?;
    let mut next = params.clone();
    axpy(&mut next.theta, -lr, &grad);
    Ok(next)
}

pub fn sgd_steps<T: Scalar>(
    params: &ModelParams<T>,
    batch: &[LabeledSample<T>],
    lr: T,
    steps: usize,
) -> Result<ModelParams<T>> {
    let mut cur = params.clone();
    for _ in 0..steps {
        cur = sgd_step(&cur, batch, lr)?;
    }
    Ok(cur)
}

/// `y += a * x`
pub(crate) fn axpy<T: Scalar>(y: &mut [T], a: T, x: &[T]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi = *yi + a * *xi;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::Situation;

    fn sample(seed: u64) -> LabeledSample<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut f = [0.0; FEATURE_DIM];
        for v in f.iter_mut() {
            *v = rng.gen::<f64>();
        }
        LabeledSample {
            input: FeatureVector(f),
            label: PreferenceVector::from_array(std::array::from_fn(|_| rng.gen::<f64>())),
        }
    }

    #[test]
    fn param_count_matches_default_architecture() {
        assert_eq!(param_count(&DEFAULT_LAYERS), 11 * 64 + 65 * 64 + 65 * 4);
        assert_eq!(ModelParams::<f64>::init(&DEFAULT_LAYERS, 1).theta.len(), param_count(&DEFAULT_LAYERS));
    }

    #[test]
    fn zero_params_predict_one_half() {
        let p = ModelParams::<f64>::zeros(&DEFAULT_LAYERS);
        assert_eq!(p.forward(&sample(0).input).unwrap(), PreferenceVector::splat(0.5));
    }

    #[test]
    fn seeded_init_is_deterministic() {
        let a = ModelParams::<f64>::init(&DEFAULT_LAYERS, 42);
        let b = ModelParams::<f64>::init(&DEFAULT_LAYERS, 42);
        let x = sample(3).input;
        assert_eq!(a.forward(&x).unwrap(), b.forward(&x).unwrap());
        assert_ne!(a.theta, ModelParams::<f64>::init(&DEFAULT_LAYERS, 43).theta);
    }

    #[test]
    fn init_respects_glorot_limits() {
        let p = ModelParams::<f64>::init(&DEFAULT_LAYERS, 5);
        let limit = (6.0_f64 / 74.0).sqrt();
        assert!(p.theta[..640].iter().all(|w| w.abs() <= limit));
        assert!(p.theta[640..704].iter().all(|b| *b == 0.0));
    }

    #[test]
    fn shape_error_on_wrong_input() {
        let p = ModelParams::<f64>::zeros(&DEFAULT_LAYERS);
        assert!(matches!(p.forward_raw(&[0.0; 3]), Err(Error::Shape { expected: 10, got: 3 })));
    }

    #[test]
    fn loss_examples() {
        let z = PreferenceVector::splat(0.0_f64);
        assert_eq!(loss(&z, &z), 0.0);
        assert_eq!(loss(&z, &PreferenceVector::splat(1.0)), 2.0);
        let l: f64 = loss(&PreferenceVector::splat(0.5), &PreferenceVector::new(0.6, 0.4, 0.5, 0.5));
        assert!((l - 0.01).abs() < 1e-15);
    }

    #[test]
    fn gradient_vanishes_at_exact_fit() {
        let p = ModelParams::<f64>::init(&DEFAULT_LAYERS, 9);
        let batch: Vec<_> = (0..4)
            .map(|k| {
                let input = sample(k).input;
                LabeledSample { input, label: p.forward(&input).unwrap() }
            })
            .collect();
        let g = gradient(&p, &batch).unwrap();
        assert!(g.iter().all(|v| v.abs() <= 1e-12));
    }

    #[test]
    fn duplicated_batch_same_gradient() {
        let p = ModelParams::<f64>::init(&DEFAULT_LAYERS, 2);
        let s = sample(11);
        assert_eq!(gradient(&p, &[s]).unwrap(), gradient(&p, &[s, s]).unwrap());
    }

    #[test]
    fn empty_batch_errors() {
        let p = ModelParams::<f64>::zeros(&DEFAULT_LAYERS);
        assert!(matches!(gradient(&p, &[]), Err(Error::EmptyBatch)));
        assert!(matches!(sgd_step(&p, &[], 0.1), Err(Error::EmptyBatch)));
    }

    #[test]
    fn zero_lr_is_identity_and_input_untouched() {
        let p = ModelParams::<f64>::init(&DEFAULT_LAYERS, 3);
        let before = p.clone();
        let s = sample(1);
        assert_eq!(sgd_step(&p, &[s], 0.0).unwrap(), p);
        let _ = sgd_step(&p, &[s], 0.5).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn small_step_descends() {
        let p = ModelParams::<f64>::init(&DEFAULT_LAYERS, 4);
        let s = sample(8);
        let before = batch_loss(&p, &[s]).unwrap();
        let after = batch_loss(&sgd_step(&p, &[s], 1e-3).unwrap(), &[s]).unwrap();
        assert!(after < before);
    }

    #[test]
    fn two_steps_compose() {
        let p = ModelParams::<f64>::init(&DEFAULT_LAYERS, 6);
        let batch = [sample(1), sample(2)];
        let manual = sgd_step(&sgd_step(&p, &batch, 0.1).unwrap(), &batch, 0.1).unwrap();
        assert_eq!(sgd_steps(&p, &batch, 0.1, 2).unwrap(), manual);
    }

    #[test]
    fn feature_vector_layout() {
        let ctx = SituationContext { near_obstacle: true, near_target: false, dist_obstacle: 10.0, dist_target: f64::INFINITY };
        let f = FeatureVector::new(&PreferenceVector::new(0.1, 0.2, 0.3, 0.4), &ctx, &SituationThresholds::default());
        assert_eq!(&f.0[..4], &[0.1, 0.2, 0.3, 0.4]);
        assert_eq!(&f.0[4..8], &[0.0, 1.0, 0.0, 0.0]);
        assert_eq!(ctx.situation(), Situation::TF);
        assert!((f.0[8] - 0.2).abs() < 1e-15);
        assert_eq!(f.0[9], 1.0);
    }

    #[test]
    fn works_in_single_precision() {
        let p = ModelParams::<f32>::init(&DEFAULT_LAYERS, 1);
        let out = p.forward(&FeatureVector([0.5_f32; FEATURE_DIM])).unwrap();
        assert!(out.is_normalized());
    }
}
