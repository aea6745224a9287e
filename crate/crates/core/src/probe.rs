//! Desk-scale model training and metrics: a softmax linear probe on
//! extractor features, accuracy and attack-success metrics, and the
//! random-noise baseline purifier.

use std::path::Path;

use crate::data::{DataError, Dataset};
use crate::extractor::{ExtractorError, FeatureExtractor};
use crate::io_util::{ByteReader, ByteWriter, FormatError};
use crate::manip::{patch_trigger, ManipError, TriggerSpec};
use crate::real::{fl, Real};
use crate::rng::SeedStream;

pub const PROBE_MAGIC: &[u8; 4] = b"MPRB";
pub const PROBE_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum ProbeError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error("empty {0}")]
    Empty(&'static str),
    #[error("non-finite training loss at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
    #[error("probe expects feature dimension {expected}, got {got}")]
    FeatureDim { expected: usize, got: usize },
    #[error("sigma {0} must be >= 0")]
    BadSigma(f64),
    #[error(transparent)]
    Extractor(#[from] ExtractorError),
    #[error(transparent)]
    Manip(#[from] ManipError),
    #[error(transparent)]
    Data(#[from] DataError),
}

/// Multinomial logistic probe: prediction is the argmax class of
/// `W v + b`, ties to the lowest class index.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearProbe<T> {
    pub y_count: usize,
    pub dv: usize,
    /// Y x dv, row-major; row i holds the weights for class i+1.
    pub weights: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Real> LinearProbe<T> {
    pub fn zeros(y_count: usize, dv: usize) -> Self {
        Self { y_count, dv, weights: vec![T::zero(); y_count * dv], bias: vec![T::zero(); y_count] }
    }

    pub fn class_weights(&self, class: u32) -> &[T] {
        let i = (class - 1) as usize;
        &self.weights[i * self.dv..(i + 1) * self.dv]
    }

    /// Per-class weight rows, in class order (the detection statistic's
    /// probe vectors).
    pub fn weight_rows(&self) -> Vec<Vec<T>> {
        (1..=self.y_count as u32).map(|c| self.class_weights(c).to_vec()).collect()
    }

    pub fn logits(&self, v: &[T]) -> Result<Vec<T>, ProbeError> {
        if v.len() != self.dv {
            return Err(ProbeError::FeatureDim { expected: self.dv, got: v.len() });
        }
        let mut out = self.bias.clone();
        for (c, o) in out.iter_mut().enumerate() {
            let row = &self.weights[c * self.dv..(c + 1) * self.dv];
            for (k, &vk) in v.iter().enumerate() {
                *o += row[k] * vk;
            }
        }
        Ok(out)
    }

    /// Predicted label in 1..=Y.
    pub fn predict(&self, v: &[T]) -> Result<u32, ProbeError> {
        let logits = self.logits(v)?;
        let mut best = 0usize;
        for (c, &l) in logits.iter().enumerate() {
            if l > logits[best] {
                best = c;
            }
        }
        Ok(best as u32 + 1)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = ByteWriter::new();
        w.magic(PROBE_MAGIC)
            .u32(PROBE_VERSION)
            .u32(self.y_count as u32)
            .u64(self.dv as u64);
        w.f32_block(&self.weights.iter().map(|x| x.as_f64() as f32).collect::<Vec<_>>());
        w.f32_block(&self.bias.iter().map(|x| x.as_f64() as f32).collect::<Vec<_>>());
        w.into_bytes()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ProbeError> {
        let mut r = ByteReader::new(bytes);
        r.magic(PROBE_MAGIC)?;
        r.version(PROBE_VERSION)?;
        let y_count = r.u32()? as usize;
        let dv = r.u64()? as usize;
        let weights = r.f32_block(y_count * dv)?.into_iter().map(|x| fl::<T>(f64::from(x))).collect();
        let bias = r.f32_block(y_count)?.into_iter().map(|x| fl::<T>(f64::from(x))).collect();
        r.finish()?;
        Ok(Self { y_count, dv, weights, bias })
    }
}

pub fn save_probe<T: Real>(p: &LinearProbe<T>, path: &Path) -> Result<(), ProbeError> {
    std::fs::write(path, p.to_bytes()).map_err(|source| ProbeError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_probe<T: Real>(path: &Path) -> Result<LinearProbe<T>, ProbeError> {
    let bytes = std::fs::read(path).map_err(|source| ProbeError::Io {
        path: path.display().to_string(),
        source,
    })?;
    LinearProbe::from_bytes(&bytes)
}

#[derive(Debug, Clone)]
pub struct ProbeConfig<T> {
    pub epochs: usize,
    pub lr: T,
    pub batch_size: usize,
}

impl<T: Real> Default for ProbeConfig<T> {
    fn default() -> Self {
        Self { epochs: 50, lr: fl(0.1), batch_size: 64 }
    }
}

/// Mean cross-entropy of the probe over a feature/label set.
pub fn cross_entropy<T: Real>(
    probe: &LinearProbe<T>,
    features: &[Vec<T>],
    labels: &[u32],
) -> Result<T, ProbeError> {
    if features.is_empty() {
        return Err(ProbeError::Empty("feature set"));
    }
    let mut acc = T::zero();
    for (f, &y) in features.iter().zip(labels) {
        let logits = probe.logits(f)?;
        let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
        let lse = max + logits.iter().map(|&l| (l - max).exp()).sum::<T>().ln();
        acc += lse - logits[(y - 1) as usize];
    }
    Ok(acc / fl::<T>(features.len() as f64))
}

/// Trains the probe by minibatch gradient descent on cross-entropy over
/// extractor features. Zero-initialized; deterministic per seed stream.
pub fn train_probe<T: Real>(
    d: &Dataset,
    g: &FeatureExtractor<T>,
    cfg: &ProbeConfig<T>,
    rng: &mut SeedStream,
) -> Result<LinearProbe<T>, ProbeError> {
    if d.n() == 0 {
        return Err(ProbeError::Empty("training set"));
    }
    let features: Vec<Vec<T>> = (0..d.n())
        .map(|i| {
            let row: Vec<T> = d.input(i).iter().map(|&v| fl::<T>(f64::from(v))).collect();
            g.extract(&row)
        })
        .collect::<Result<_, _>>()?;
    let dv = g.feature_dim();
    let y_count = d.y_count() as usize;
    let mut probe = LinearProbe::zeros(y_count, dv);
    let batch = cfg.batch_size.max(1).min(d.n());

    let mut order: Vec<usize> = (0..d.n()).collect();
    let mut grad_w = vec![T::zero(); y_count * dv];
    let mut grad_b = vec![T::zero(); y_count];
    for epoch in 0..cfg.epochs {
        rng.shuffle(&mut order);
        for chunk in order.chunks(batch) {
            for v in grad_w.iter_mut() {
                *v = T::zero();
            }
            for v in grad_b.iter_mut() {
                *v = T::zero();
            }
            let inv = T::one() / fl::<T>(chunk.len() as f64);
            for &i in chunk {
                let f = &features[i];
                let logits = probe.logits(f)?;
                let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
                if !max.is_finite() {
                    return Err(ProbeError::NonFiniteLoss { epoch });
                }
                let exps: Vec<T> = logits.iter().map(|&l| (l - max).exp()).collect();
                let z: T = exps.iter().copied().sum();
                let target = (d.label(i) - 1) as usize;
                for c in 0..y_count {
                    let p = exps[c] / z;
                    let err = if c == target { p - T::one() } else { p };
                    let coef = err * inv;
                    let row = &mut grad_w[c * dv..(c + 1) * dv];
                    for (k, &fk) in f.iter().enumerate() {
                        row[k] += coef * fk;
                    }
                    grad_b[c] += coef;
                }
            }
            for (w, gw) in probe.weights.iter_mut().zip(&grad_w) {
                *w -= cfg.lr * *gw;
            }
            for (b, gb) in probe.bias.iter_mut().zip(&grad_b) {
                *b -= cfg.lr * *gb;
            }
        }
    }
    let final_loss = cross_entropy(&probe, &features, d.labels())?;
    if !final_loss.is_finite() {
        return Err(ProbeError::NonFiniteLoss { epoch: cfg.epochs });
    }
    Ok(probe)
}

fn features_of<T: Real>(
    g: &FeatureExtractor<T>,
    x: &[f32],
) -> Result<Vec<T>, ProbeError> {
    let row: Vec<T> = x.iter().map(|&v| fl::<T>(f64::from(v))).collect();
    Ok(g.extract(&row)?)
}

/// Exact fraction of test inputs classified correctly.
pub fn accuracy<T: Real>(
    probe: &LinearProbe<T>,
    g: &FeatureExtractor<T>,
    d_test: &Dataset,
) -> Result<f64, ProbeError> {
    if d_test.n() == 0 {
        return Err(ProbeError::Empty("test set"));
    }
    let mut correct = 0usize;
    for i in 0..d_test.n() {
        if probe.predict(&features_of(g, d_test.input(i))?)? == d_test.label(i) {
            correct += 1;
        }
    }
    Ok(correct as f64 / d_test.n() as f64)
}

/// Fraction of (target input, target label) pairs hit by the probe.
pub fn asr_targeted<T: Real>(
    probe: &LinearProbe<T>,
    g: &FeatureExtractor<T>,
    targets: &[(Vec<f32>, u32)],
) -> Result<f64, ProbeError> {
    if targets.is_empty() {
        return Err(ProbeError::Empty("target list"));
    }
    let mut hits = 0usize;
    for (x, y) in targets {
        if probe.predict(&features_of(g, x)?)? == *y {
            hits += 1;
        }
    }
    Ok(hits as f64 / targets.len() as f64)
}

/// Patches every test input whose true label differs from the target and
/// reports the fraction classified as the target label.
pub fn asr_backdoor<T: Real>(
    probe: &LinearProbe<T>,
    g: &FeatureExtractor<T>,
    d_test: &Dataset,
    layout: (usize, usize),
    trigger: &TriggerSpec,
    target_label: u32,
) -> Result<f64, ProbeError> {
    let mut hits = 0usize;
    let mut total = 0usize;
    for i in 0..d_test.n() {
        if d_test.label(i) == target_label {
            continue;
        }
        total += 1;
        let patched = patch_trigger(d_test.input(i), layout, trigger)?;
        if probe.predict(&features_of(g, &patched)?)? == target_label {
            hits += 1;
        }
    }
    if total == 0 {
        return Err(ProbeError::Empty("effective test set"));
    }
    Ok(hits as f64 / total as f64)
}

/// The random-noise baseline: adds iid `N(0, (sigma/255)^2)` to every
/// coordinate (sigma quoted in 0-255 pixel units), then projects back
/// into the domain.
pub fn random_noise_purify(
    d: &Dataset,
    sigma: f64,
    rng: &mut SeedStream,
) -> Result<Dataset, ProbeError> {
    if sigma < 0.0 {
        return Err(ProbeError::BadSigma(sigma));
    }
    if sigma == 0.0 {
        return Ok(d.clone());
    }
    let std = sigma / 255.0;
    let mut out = d.clone();
    let mut buf = vec![0.0f32; d.w()];
    for i in 0..d.n() {
        for (k, &v) in d.input(i).iter().enumerate() {
            let noisy = f64::from(v) + std * rng.normal::<f64>();
            buf[k] = (noisy as f32).clamp(0.0, 1.0);
        }
        out.set_input(i, &buf)?;
    }
    Ok(out)
}
