//! The scalar critic on feature space: a two-layer softplus network trained
//! with Adam to approximate the Wasserstein distance through its dual form,
//! kept close to 1-Lipschitz by a gradient penalty at interpolated points.
//!
//! The inner problem maximizes the gap `Avg(h, pe) - Avg(h, rf)` while
//! minimizing the penalty, so the training loss that Adam descends is
//! `nu * penalty - gap`. Softplus is used because the penalty gradient
//! differentiates through `grad_v h`, which needs a second derivative of
//! the activation.

use std::path::Path;

use crate::io_util::{ByteReader, ByteWriter, FormatError};
use crate::real::{dot, fl, l2_norm, sigmoid, softplus, Real};
use crate::rng::SeedStream;

pub const CRITIC_MAGIC: &[u8; 4] = b"MCRT";
pub const CRITIC_VERSION: u32 = 1;

/// Checkpoint convergence: relative tolerance on the full-data gap.
const CHECKPOINT_REL_TOL: f64 = 0.01;
/// Fallback absolute tolerance when the checkpoint average is ~0.
const CHECKPOINT_ABS_TOL: f64 = 1e-6;
/// Threshold below which the checkpoint average counts as zero.
const CHECKPOINT_ZERO_DENOM: f64 = 1e-12;
/// Norm threshold under which the penalty gradient direction is left zero.
const GRAD_NORM_TINY: f64 = 1e-30;

#[derive(Debug, thiserror::Error)]
pub enum CriticError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error("feature length {got} does not match critic input dimension {expected}")]
    FeatureDim { expected: usize, got: usize },
    #[error("batch sizes must be equal and nonzero; got {pe} purified, {rf} reference")]
    BatchSize { pe: usize, rf: usize },
    #[error("non-finite gradient in parameter block {block}")]
    NonFiniteGradient { block: &'static str },
    #[error("gradient length {got} does not match parameter count {expected}")]
    GradLen { expected: usize, got: usize },
    #[error("non-finite full-data loss {value} at checkpoint {checkpoint}")]
    NonFiniteLoss { checkpoint: usize, value: f64 },
    #[error("training set must be non-empty")]
    EmptyData,
}

/// Two-layer softplus network `h(v) = w2 . softplus(W1 v + b1) + b2`,
/// parameters stored as one flat vector `[W1 | b1 | w2 | b2]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Critic<T> {
    hidden: usize,
    dv: usize,
    params: Vec<T>,
}

impl<T: Real> Critic<T> {
    pub fn new(hidden: usize, dv: usize, params: Vec<T>) -> Self {
        assert_eq!(params.len(), Self::param_count(hidden, dv));
        Self { hidden, dv, params }
    }

    /// Random critic with all parameters from N(0, 0.02^2).
    pub fn init(hidden: usize, dv: usize, rng: &mut SeedStream) -> Self {
        let scale = fl::<T>(0.02);
        let params = (0..Self::param_count(hidden, dv))
            .map(|_| rng.normal::<T>() * scale)
            .collect();
        Self { hidden, dv, params }
    }

    pub fn param_count(hidden: usize, dv: usize) -> usize {
        hidden * dv + hidden + hidden + 1
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn feature_dim(&self) -> usize {
        self.dv
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    fn w1(&self) -> &[T] {
        &self.params[..self.hidden * self.dv]
    }

    fn b1(&self) -> &[T] {
        let o = self.hidden * self.dv;
        &self.params[o..o + self.hidden]
    }

    fn w2(&self) -> &[T] {
        let o = self.hidden * self.dv + self.hidden;
        &self.params[o..o + self.hidden]
    }

    fn b2(&self) -> T {
        self.params[self.params.len() - 1]
    }

    /// Replaces `h` with `-h` (negates the output layer). The family is
    /// closed under negation and the penalty only sees `grad h`'s norm,
    /// so this maps a critic with gap `-g` onto one with gap `+g`.
    pub fn negate(&mut self) {
        let start = self.hidden * self.dv + self.hidden;
        for p in &mut self.params[start..] {
            *p = -*p;
        }
    }

    /// Parameter range of the output layer (w2 and b2), the part that
    /// flips under negation.
    pub fn output_layer_range(&self) -> std::ops::Range<usize> {
        self.hidden * self.dv + self.hidden..self.params.len()
    }

    /// Which named block a flat parameter index belongs to.
    pub fn block_name(&self, index: usize) -> &'static str {
        let hd = self.hidden * self.dv;
        if index < hd {
            "W1"
        } else if index < hd + self.hidden {
            "b1"
        } else if index < hd + 2 * self.hidden {
            "w2"
        } else {
            "b2"
        }
    }

    fn pre_activations(&self, v: &[T]) -> Vec<T> {
        let (h, dv) = (self.hidden, self.dv);
        let w1 = self.w1();
        let mut z = self.b1().to_vec();
        for (j, zj) in z.iter_mut().enumerate().take(h) {
            let row = &w1[j * dv..(j + 1) * dv];
            for (k, &vk) in v.iter().enumerate() {
                *zj += row[k] * vk;
            }
        }
        z
    }

    /// `h(v)`.
    pub fn forward(&self, v: &[T]) -> Result<T, CriticError> {
        if v.len() != self.dv {
            return Err(CriticError::FeatureDim { expected: self.dv, got: v.len() });
        }
        let z = self.pre_activations(v);
        let mut out = self.b2();
        for (j, &w2j) in self.w2().iter().enumerate() {
            out += w2j * softplus(z[j]);
        }
        Ok(out)
    }

    /// `grad_v h(v) = W1^T (w2 ⊙ sigmoid(W1 v + b1))`.
    pub fn input_gradient(&self, v: &[T]) -> Result<Vec<T>, CriticError> {
        if v.len() != self.dv {
            return Err(CriticError::FeatureDim { expected: self.dv, got: v.len() });
        }
        let (h, dv) = (self.hidden, self.dv);
        let z = self.pre_activations(v);
        let w1 = self.w1();
        let w2 = self.w2();
        let mut g = vec![T::zero(); dv];
        for j in 0..h {
            let coef = w2[j] * sigmoid(z[j]);
            let row = &w1[j * dv..(j + 1) * dv];
            for (k, gk) in g.iter_mut().enumerate() {
                *gk += row[k] * coef;
            }
        }
        Ok(g)
    }

    /// Mean critic value over a feature set.
    pub fn mean_value(&self, features: &[Vec<T>]) -> Result<T, CriticError> {
        if features.is_empty() {
            return Err(CriticError::EmptyData);
        }
        let mut acc = T::zero();
        for f in features {
            acc += self.forward(f)?;
        }
        Ok(acc / fl::<T>(features.len() as f64))
    }

    /// Full-data gap `Avg(h, pe) - Avg(h, rf)`, the checkpointed loss.
    pub fn full_gap(&self, pe: &[Vec<T>], rf: &[Vec<T>]) -> Result<T, CriticError> {
        Ok(self.mean_value(pe)? - self.mean_value(rf)?)
    }

    /// Accumulates `coef * dh/dtheta (v)` into `grads`.
    fn accumulate_value_grad(&self, v: &[T], coef: T, grads: &mut [T]) {
        let (h, dv) = (self.hidden, self.dv);
        let z = self.pre_activations(v);
        let w2 = self.w2();
        let hd = h * dv;
        for j in 0..h {
            let sp = softplus(z[j]);
            let sg = sigmoid(z[j]);
            let dz = coef * w2[j] * sg;
            let row = &mut grads[j * dv..(j + 1) * dv];
            for (k, &vk) in v.iter().enumerate() {
                row[k] += dz * vk;
            }
            grads[hd + j] += dz;
            grads[hd + h + j] += coef * sp;
        }
        grads[hd + 2 * h] += coef;
    }

    /// Penalty at `v`: `(||grad_v h(v)|| - 1)^2`, and its parameter
    /// gradient scaled by `coef` (differentiates through `grad_v h`,
    /// hence the second-order terms).
    fn penalty_and_grad(&self, v: &[T], coef: T, grads: &mut [T]) -> T {
        let (h, dv) = (self.hidden, self.dv);
        let w1 = self.w1();
        let w2 = self.w2();
        let hd = h * dv;

        let z = self.pre_activations(v);
        let s: Vec<T> = z.iter().map(|&zj| sigmoid(zj)).collect();
        // G = grad_v h
        let mut g = vec![T::zero(); dv];
        for j in 0..h {
            let c = w2[j] * s[j];
            let row = &w1[j * dv..(j + 1) * dv];
            for (k, gk) in g.iter_mut().enumerate() {
                *gk += row[k] * c;
            }
        }
        let nrm = l2_norm(&g);
        let dev = nrm - T::one();
        let penalty = dev * dev;

        // u = d penalty / dG; when ||G|| ~ 0 the direction is undefined,
        // leave it zero.
        let mut u = vec![T::zero(); dv];
        if nrm > fl::<T>(GRAD_NORM_TINY) {
            let scale = fl::<T>(2.0) * dev / nrm;
            for (uk, &gk) in u.iter_mut().zip(&g) {
                *uk = scale * gk;
            }
        }

        // a_j = (W1 u)_j
        for j in 0..h {
            let row = &w1[j * dv..(j + 1) * dv];
            let a = dot(row, &u);
            let sprime = s[j] * (T::one() - s[j]);
            let dz = coef * w2[j] * a * sprime;
            let grow = &mut grads[j * dv..(j + 1) * dv];
            for k in 0..dv {
                // direct dependence of G_k on W1[j,k] plus the path
                // through z_j
                grow[k] += coef * u[k] * w2[j] * s[j] + dz * v[k];
            }
            grads[hd + j] += dz;
            grads[hd + h + j] += coef * s[j] * a;
        }
        penalty
    }

    /// One minibatch of the inner objective. Returns the loss pieces and
    /// the exact analytic gradient of the descended training loss
    /// `nu * penalty - gap` with respect to every critic parameter.
    /// The two batches must have the same length; one uniform
    /// interpolation coefficient is drawn per paired element.
    pub fn batch_loss_and_grads(
        &self,
        batch_pe: &[&[T]],
        batch_rf: &[&[T]],
        nu: T,
        rng: &mut SeedStream,
    ) -> Result<(InnerLossBreakdown<T>, Vec<T>), CriticError> {
        let m = batch_pe.len();
        if m == 0 || batch_rf.len() != m {
            return Err(CriticError::BatchSize { pe: m, rf: batch_rf.len() });
        }
        for b in batch_pe.iter().chain(batch_rf.iter()) {
            if b.len() != self.dv {
                return Err(CriticError::FeatureDim { expected: self.dv, got: b.len() });
            }
        }
        let mut grads = vec![T::zero(); self.params.len()];
        let inv_m = T::one() / fl::<T>(m as f64);

        // gap = mean_pe h - mean_rf h; the descended loss carries -gap.
        let mut mean_pe = T::zero();
        for v in batch_pe {
            mean_pe += self.forward(v)?;
            self.accumulate_value_grad(v, -inv_m, &mut grads);
        }
        let mut mean_rf = T::zero();
        for v in batch_rf {
            mean_rf += self.forward(v)?;
            self.accumulate_value_grad(v, inv_m, &mut grads);
        }
        let gap = (mean_pe - mean_rf) * inv_m;

        let mut penalty = T::zero();
        let coef = nu * inv_m;
        let mut interp = vec![T::zero(); self.dv];
        for (vp, vr) in batch_pe.iter().zip(batch_rf) {
            let eta: T = rng.uniform();
            for k in 0..self.dv {
                interp[k] = eta * vp[k] + (T::one() - eta) * vr[k];
            }
            penalty += self.penalty_and_grad(&interp, coef, &mut grads) * inv_m;
        }

        let breakdown = InnerLossBreakdown { gap, penalty, total: nu * penalty - gap };
        Ok((breakdown, grads))
    }

    /// Adam update with per-block gradient sanity check.
    pub fn adam_update(
        &mut self,
        grads: &[T],
        state: &mut AdamState<T>,
        lr: T,
    ) -> Result<(), CriticError> {
        for (i, g) in grads.iter().enumerate() {
            if !g.is_finite() {
                return Err(CriticError::NonFiniteGradient { block: self.block_name(i) });
            }
        }
        adam_step(&mut self.params, grads, state, lr)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = ByteWriter::new();
        w.magic(CRITIC_MAGIC)
            .u32(CRITIC_VERSION)
            .u64(self.hidden as u64)
            .u64(self.dv as u64);
        w.f32_block(&self.params.iter().map(|p| p.as_f64() as f32).collect::<Vec<_>>());
        w.into_bytes()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CriticError> {
        let mut r = ByteReader::new(bytes);
        r.magic(CRITIC_MAGIC)?;
        r.version(CRITIC_VERSION)?;
        let hidden = r.u64()? as usize;
        let dv = r.u64()? as usize;
        let params = r
            .f32_block(Self::param_count(hidden, dv))?
            .into_iter()
            .map(|x| fl::<T>(f64::from(x)))
            .collect();
        r.finish()?;
        Ok(Self { hidden, dv, params })
    }
}

pub fn save_critic<T: Real>(c: &Critic<T>, path: &Path) -> Result<(), CriticError> {
    std::fs::write(path, c.to_bytes()).map_err(|source| CriticError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_critic<T: Real>(path: &Path) -> Result<Critic<T>, CriticError> {
    let bytes = std::fs::read(path).map_err(|source| CriticError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Critic::from_bytes(&bytes)
}

/// Loss pieces of one inner step. `gap` is the dual-form estimate
/// `Avg(h, pe) - Avg(h, rf)`; `total` is the descended training loss
/// `nu * penalty - gap` (the inner max ascends the gap).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InnerLossBreakdown<T> {
    pub gap: T,
    pub penalty: T,
    pub total: T,
}

/// Adam accumulators over the flattened parameter vector.
#[derive(Debug, Clone)]
pub struct AdamState<T> {
    pub m: Vec<T>,
    pub v: Vec<T>,
    pub step: u64,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
}

impl<T: Real> AdamState<T> {
    pub fn new(n_params: usize) -> Self {
        Self {
            m: vec![T::zero(); n_params],
            v: vec![T::zero(); n_params],
            step: 0,
            beta1: fl(0.9),
            beta2: fl(0.999),
            eps: fl(1e-8),
        }
    }
}

/// Standard Adam with bias correction. Descends along `grads`; callers
/// working on a maximization pass the gradient of the negated objective.
pub fn adam_step<T: Real>(
    params: &mut [T],
    grads: &[T],
    state: &mut AdamState<T>,
    lr: T,
) -> Result<(), CriticError> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(CriticError::GradLen { expected: params.len(), got: grads.len() });
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = T::one() - state.beta1.powi(t);
    let bc2 = T::one() - state.beta2.powi(t);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = state.beta1 * state.m[i] + (T::one() - state.beta1) * g;
        state.v[i] = state.beta2 * state.v[i] + (T::one() - state.beta2) * g * g;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + state.eps);
    }
    Ok(())
}

/// Hyperparameters for one Step I run.
#[derive(Debug, Clone)]
pub struct InnerConfig<T> {
    /// Adam learning rate for the critic.
    pub eta_h: T,
    /// Gradient penalty coefficient.
    pub nu: T,
    /// Minibatch size m for both sides.
    pub batch_size: usize,
    /// Checkpoint interval t, in optimizer steps.
    pub checkpoint_interval: usize,
    /// Hard cap on optimizer steps per Step I run.
    pub max_steps: usize,
}

impl<T: Real> Default for InnerConfig<T> {
    fn default() -> Self {
        Self {
            eta_h: fl(1e-3),
            nu: fl(10.0),
            batch_size: 64,
            checkpoint_interval: 10,
            max_steps: 5000,
        }
    }
}

/// Step I: train the critic on fixed purified/reference feature sets until
/// the checkpoint rule fires. Every `t` steps the gap (no penalty) is
/// evaluated on the full data; once five prior checkpoints exist, training
/// stops when the current checkpoint is within 1% relative difference of
/// their average (absolute fallback 1e-6 when the average is ~0).
/// Returns the checkpoint history.
///
/// A checkpoint with a negative gap replaces the critic with its negation
/// (same family, same penalty, positive gap): the soft penalty creates a
/// barrier that can otherwise pin the critic to the wrong sign when the
/// transport signal is small.
pub fn train_inner<T: Real>(
    critic: &mut Critic<T>,
    pe: &[Vec<T>],
    rf: &[Vec<T>],
    cfg: &InnerConfig<T>,
    rng: &mut SeedStream,
) -> Result<Vec<T>, CriticError> {
    if pe.is_empty() || rf.is_empty() {
        return Err(CriticError::EmptyData);
    }
    let mut state = AdamState::new(critic.params.len());
    let mut history: Vec<T> = Vec::new();
    let m = cfg.batch_size.max(1);
    let t = cfg.checkpoint_interval.max(1);

    let mut batch_pe: Vec<&[T]> = Vec::with_capacity(m);
    let mut batch_rf: Vec<&[T]> = Vec::with_capacity(m);
    for step in 1..=cfg.max_steps {
        batch_pe.clear();
        batch_rf.clear();
        // sampled with replacement from the index ranges
        for _ in 0..m {
            batch_pe.push(pe[rng.index(pe.len())].as_slice());
        }
        for _ in 0..m {
            batch_rf.push(rf[rng.index(rf.len())].as_slice());
        }
        let (_, grads) = critic.batch_loss_and_grads(&batch_pe, &batch_rf, cfg.nu, rng)?;
        critic.adam_update(&grads, &mut state, cfg.eta_h)?;

        if step % t == 0 {
            let mut l = critic.full_gap(pe, rf)?;
            if !l.is_finite() {
                return Err(CriticError::NonFiniteLoss {
                    checkpoint: history.len() + 1,
                    value: l.as_f64(),
                });
            }
            if l < T::zero() {
                critic.negate();
                // keep the first-moment estimates aligned with the
                // flipped output layer
                for i in critic.output_layer_range() {
                    state.m[i] = -state.m[i];
                }
                l = -l;
            }
            history.push(l);
            if checkpoint_rule_fires(&history) {
                break;
            }
        }
    }
    Ok(history)
}

/// True when the newest checkpoint is within tolerance of the average of
/// the five checkpoints before it.
fn checkpoint_rule_fires<T: Real>(history: &[T]) -> bool {
    if history.len() < 6 {
        return false;
    }
    let current = history[history.len() - 1];
    let prior = &history[history.len() - 6..history.len() - 1];
    let avg = prior.iter().copied().sum::<T>() / fl::<T>(prior.len() as f64);
    let diff = (current - avg).abs();
    if avg.abs() < fl::<T>(CHECKPOINT_ZERO_DENOM) {
        diff < fl::<T>(CHECKPOINT_ABS_TOL)
    } else {
        diff / avg.abs() < fl::<T>(CHECKPOINT_REL_TOL)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::streams;

    fn zero_critic(hidden: usize, dv: usize) -> Critic<f64> {
        Critic::new(hidden, dv, vec![0.0; Critic::<f64>::param_count(hidden, dv)])
    }

    /// Saturated-softplus construction: with b1 large positive, softplus is
    /// effectively the identity, so h is affine with slope W1^T w2.
    fn near_linear_critic(w1: Vec<f64>, w2: Vec<f64>, dv: usize) -> Critic<f64> {
        let hidden = w2.len();
        let mut params = Vec::new();
        params.extend_from_slice(&w1);
        params.extend(std::iter::repeat(20.0).take(hidden));
        params.extend_from_slice(&w2);
        params.push(0.0);
        Critic::new(hidden, dv, params)
    }

    #[test]
    fn zero_critic_outputs_zero() {
        let c = zero_critic(4, 3);
        assert_eq!(c.forward(&[0.3, 0.5, 0.9]).unwrap(), 0.0);
        assert_eq!(c.input_gradient(&[0.3, 0.5, 0.9]).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn single_unit_forward_is_softplus() {
        // H=1, W1=[1,0], b1=0, w2=[1], b2=0, v=[0,5] -> softplus(0) = ln 2
        let c = Critic::new(1, 2, vec![1.0, 0.0, 0.0, 1.0, 0.0]);
        let got = c.forward(&[0.0, 5.0]).unwrap();
        assert!((got - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn bias_passes_through() {
        let mut c = zero_critic(4, 2);
        let n = c.params.len();
        c.params_mut()[n - 1] = 2.5;
        assert_eq!(c.forward(&[0.1, 0.9]).unwrap(), 2.5);
    }

    #[test]
    fn saturated_critic_gradient_is_effective_slope() {
        let w1 = vec![0.6, -0.3, 0.2, 0.8];
        let w2 = vec![1.1, -0.4];
        let c = near_linear_critic(w1.clone(), w2.clone(), 2);
        let g = c.input_gradient(&[0.4, 0.7]).unwrap();
        // W1^T w2
        let want = [w1[0] * w2[0] + w1[2] * w2[1], w1[1] * w2[0] + w1[3] * w2[1]];
        for (a, b) in g.iter().zip(&want) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        let mut rng = SeedStream::new(55, streams::CRITIC_INIT);
        for _ in 0..20 {
            let dv = 3;
            let mut c = Critic::<f64>::init(8, dv, &mut rng);
            // scale up so gradients are O(1)
            for p in c.params_mut() {
                *p *= 30.0;
            }
            let v: Vec<f64> = (0..dv).map(|_| rng.uniform::<f64>()).collect();
            let ana = c.input_gradient(&v).unwrap();
            let h = 1e-5;
            for k in 0..dv {
                let mut vp = v.clone();
                let mut vm = v.clone();
                vp[k] += h;
                vm[k] -= h;
                let fd = (c.forward(&vp).unwrap() - c.forward(&vm).unwrap()) / (2.0 * h);
                let denom = fd.abs().max(1e-4);
                assert!((ana[k] - fd).abs() / denom < 1e-4, "{} vs {fd}", ana[k]);
            }
        }
    }

    #[test]
    fn identical_batches_give_zero_gap() {
        let mut rng = SeedStream::new(5, streams::CRITIC_INIT);
        let c = Critic::<f64>::init(8, 2, &mut rng);
        let feats: Vec<Vec<f64>> = (0..6).map(|_| vec![rng.uniform(), rng.uniform()]).collect();
        let refs: Vec<&[f64]> = feats.iter().map(|f| f.as_slice()).collect();
        let mut brng = SeedStream::new(6, streams::BATCH);
        let (breakdown, _) = c.batch_loss_and_grads(&refs, &refs, 10.0, &mut brng).unwrap();
        assert_eq!(breakdown.gap, 0.0);
    }

    #[test]
    fn unit_slope_critic_has_near_zero_penalty() {
        // saturated construction with ||W1^T w2|| = 1
        let c = near_linear_critic(vec![1.0, 0.0], vec![1.0], 2);
        let a: Vec<Vec<f64>> = vec![vec![0.2, 0.3], vec![0.4, 0.1]];
        let b: Vec<Vec<f64>> = vec![vec![0.7, 0.8], vec![0.9, 0.5]];
        let ra: Vec<&[f64]> = a.iter().map(|f| f.as_slice()).collect();
        let rb: Vec<&[f64]> = b.iter().map(|f| f.as_slice()).collect();
        let mut rng = SeedStream::new(1, streams::BATCH);
        let (breakdown, _) = c.batch_loss_and_grads(&ra, &rb, 10.0, &mut rng).unwrap();
        assert!(breakdown.penalty.abs() < 1e-3, "penalty {}", breakdown.penalty);
    }

    #[test]
    fn gap_is_antisymmetric_under_batch_swap() {
        let mut rng = SeedStream::new(77, streams::CRITIC_INIT);
        let c = Critic::<f64>::init(6, 3, &mut rng);
        let a: Vec<Vec<f64>> =
            (0..5).map(|_| (0..3).map(|_| rng.uniform::<f64>()).collect()).collect();
        let b: Vec<Vec<f64>> =
            (0..5).map(|_| (0..3).map(|_| rng.uniform::<f64>()).collect()).collect();
        let ra: Vec<&[f64]> = a.iter().map(|f| f.as_slice()).collect();
        let rb: Vec<&[f64]> = b.iter().map(|f| f.as_slice()).collect();
        let mut r1 = SeedStream::new(9, streams::BATCH);
        let mut r2 = SeedStream::new(9, streams::BATCH);
        let (fwd, _) = c.batch_loss_and_grads(&ra, &rb, 10.0, &mut r1).unwrap();
        let (rev, _) = c.batch_loss_and_grads(&rb, &ra, 10.0, &mut r2).unwrap();
        assert_eq!(fwd.gap, -rev.gap);
    }

    #[test]
    fn penalty_and_gap_invariant_under_output_bias_shift() {
        let mut rng = SeedStream::new(78, streams::CRITIC_INIT);
        let mut c = Critic::<f64>::init(6, 2, &mut rng);
        let a: Vec<Vec<f64>> = (0..4).map(|_| vec![rng.uniform(), rng.uniform()]).collect();
        let b: Vec<Vec<f64>> = (0..4).map(|_| vec![rng.uniform(), rng.uniform()]).collect();
        let ra: Vec<&[f64]> = a.iter().map(|f| f.as_slice()).collect();
        let rb: Vec<&[f64]> = b.iter().map(|f| f.as_slice()).collect();
        let mut r1 = SeedStream::new(4, streams::BATCH);
        let (before, _) = c.batch_loss_and_grads(&ra, &rb, 10.0, &mut r1).unwrap();
        let n = c.params.len();
        c.params_mut()[n - 1] += 12.3;
        let mut r2 = SeedStream::new(4, streams::BATCH);
        let (after, _) = c.batch_loss_and_grads(&ra, &rb, 10.0, &mut r2).unwrap();
        assert!((before.gap - after.gap).abs() < 1e-12);
        assert_eq!(before.penalty, after.penalty);
    }

    #[test]
    fn parameter_gradients_match_finite_differences() {
        // Includes the second-order path through the gradient penalty.
        for seed in 0..10u64 {
            let mut rng = SeedStream::new(100 + seed, streams::CRITIC_INIT);
            let dv = 2;
            let mut c = Critic::<f64>::init(5, dv, &mut rng);
            for p in c.params_mut() {
                *p *= 25.0; // move away from the tiny-init regime
            }
            let a: Vec<Vec<f64>> =
                (0..4).map(|_| (0..dv).map(|_| rng.uniform::<f64>()).collect()).collect();
            let b: Vec<Vec<f64>> =
                (0..4).map(|_| (0..dv).map(|_| rng.uniform::<f64>()).collect()).collect();
            let ra: Vec<&[f64]> = a.iter().map(|f| f.as_slice()).collect();
            let rb: Vec<&[f64]> = b.iter().map(|f| f.as_slice()).collect();
            let nu = 10.0;

            let mut r0 = SeedStream::new(500 + seed, streams::BATCH);
            let (_, ana) = c.batch_loss_and_grads(&ra, &rb, nu, &mut r0).unwrap();

            let h = 1e-6;
            for i in 0..c.params.len() {
                let orig = c.params[i];
                c.params_mut()[i] = orig + h;
                let mut rp = SeedStream::new(500 + seed, streams::BATCH);
                let (lp, _) = c.batch_loss_and_grads(&ra, &rb, nu, &mut rp).unwrap();
                c.params_mut()[i] = orig - h;
                let mut rm = SeedStream::new(500 + seed, streams::BATCH);
                let (lm, _) = c.batch_loss_and_grads(&ra, &rb, nu, &mut rm).unwrap();
                c.params_mut()[i] = orig;
                let fd = (lp.total - lm.total) / (2.0 * h);
                let denom = fd.abs().max(1e-3);
                assert!(
                    (ana[i] - fd).abs() / denom < 1e-3,
                    "seed {seed} param {i} ({}): {} vs {fd}",
                    c.block_name(i),
                    ana[i]
                );
            }
        }
    }

    #[test]
    fn adam_zero_gradient_leaves_params_unchanged() {
        let mut params = vec![0.3f64, -0.7, 1.1];
        let mut state = AdamState::new(3);
        adam_step(&mut params, &[0.0, 0.0, 0.0], &mut state, 0.1).unwrap();
        assert_eq!(params, vec![0.3, -0.7, 1.1]);
    }

    #[test]
    fn adam_first_step_matches_hand_computation() {
        // theta=0, g=2, lr=0.1: m_hat=2, v_hat=4, step = 0.1*2/(2+1e-8)
        let mut params = vec![0.0f64];
        let mut state = AdamState::new(1);
        adam_step(&mut params, &[2.0], &mut state, 0.1).unwrap();
        let expected = -0.1 * 2.0 / (4.0f64.sqrt() + 1e-8);
        assert!((params[0] - expected).abs() < 1e-15);
        assert!((params[0] + 0.1).abs() < 1e-8);
        assert_eq!(state.step, 1);
    }

    #[test]
    fn adam_constant_gradient_keeps_unit_ratio() {
        // with all gradients equal, m_hat/sqrt(v_hat) = 1 exactly
        let mut params = vec![5.0f64];
        let mut state = AdamState::new(1);
        adam_step(&mut params, &[1.0], &mut state, 0.01).unwrap();
        let after_first = params[0];
        assert!((5.0 - after_first - 0.01).abs() < 1e-9);
        adam_step(&mut params, &[1.0], &mut state, 0.01).unwrap();
        let second_step = after_first - params[0];
        assert!((second_step - 0.01).abs() < 1e-9, "second step {second_step}");
    }

    #[test]
    fn adam_rejects_non_finite_gradient_with_block_name() {
        let mut rng = SeedStream::new(8, streams::CRITIC_INIT);
        let mut c = Critic::<f64>::init(2, 2, &mut rng);
        let mut state = AdamState::new(c.params().len());
        let mut grads = vec![0.0; c.params().len()];
        grads[2 * 2 + 1] = f64::NAN; // inside b1
        match c.adam_update(&grads, &mut state, 0.1) {
            Err(CriticError::NonFiniteGradient { block: "b1" }) => {}
            other => panic!("unexpected: {other:?}"),
        }
    }

    #[test]
    fn checkpoint_rule_stops_constant_stream_at_sixth() {
        // eta_h = 0 means the critic never moves: the full-data gap is the
        // same nonzero constant at every checkpoint.
        let mut rng = SeedStream::new(21, streams::CRITIC_INIT);
        let mut c = Critic::<f64>::init(8, 1, &mut rng);
        for p in c.params_mut() {
            *p *= 50.0;
        }
        let pe: Vec<Vec<f64>> = (0..10).map(|i| vec![0.9 - 0.01 * i as f64]).collect();
        let rf: Vec<Vec<f64>> = (0..10).map(|i| vec![0.1 + 0.01 * i as f64]).collect();
        assert!(c.full_gap(&pe, &rf).unwrap().abs() > 1e-6);
        let cfg = InnerConfig { eta_h: 0.0, nu: 10.0, batch_size: 4, checkpoint_interval: 3, max_steps: 500 };
        let mut brng = SeedStream::new(2, streams::BATCH);
        let history = train_inner(&mut c, &pe, &rf, &cfg, &mut brng).unwrap();
        assert_eq!(history.len(), 6);
        assert!(history.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn identical_datasets_terminate_via_absolute_fallback() {
        let mut rng = SeedStream::new(22, streams::CRITIC_INIT);
        let mut c = Critic::<f64>::init(8, 2, &mut rng);
        let feats: Vec<Vec<f64>> =
            (0..12).map(|_| vec![rng.uniform(), rng.uniform()]).collect();
        let cfg = InnerConfig { eta_h: 1e-3, nu: 10.0, batch_size: 6, checkpoint_interval: 2, max_steps: 2000 };
        let mut brng = SeedStream::new(3, streams::BATCH);
        let history = train_inner(&mut c, &feats, &feats, &cfg, &mut brng).unwrap();
        // gap on identical data is exactly zero at every checkpoint
        assert!(history.iter().all(|l| l.abs() < 1e-9));
        assert_eq!(history.len(), 6);
    }

    #[test]
    fn critic_file_round_trip_preserves_shape_and_f32_params() {
        let mut rng = SeedStream::new(30, streams::CRITIC_INIT);
        let c = Critic::<f32>::init(6, 3, &mut rng);
        let back = Critic::<f32>::from_bytes(&c.to_bytes()).unwrap();
        assert_eq!(c, back);
    }
}
