//! Purification orchestration: alternate critic training (Step I) with
//! top-rho perturbation descent (Step II), stop on the outer rule, then
//! amplify the perturbations and project back into the domain.

use crate::critic::{train_inner, Critic, CriticError, InnerConfig};
use crate::data::{clip_to_domain, DataError, Dataset};
use crate::extractor::{ExtractorError, FeatureExtractor};
use crate::real::{fl, l2_norm, linf_norm, Real};
use crate::rng::{streams, SeedStream};

#[derive(Debug, thiserror::Error)]
pub enum PurifyError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("untrusted and reference datasets must share w; got {ut} and {rf}")]
    DimMismatch { ut: usize, rf: usize },
    #[error("extractor expects input dimension {expected}, datasets have w={got}")]
    ExtractorDim { expected: usize, got: usize },
    #[error("non-finite perturbation gradient for input {index}")]
    NonFiniteGradient { index: usize },
    #[error(transparent)]
    Critic(#[from] CriticError),
    #[error(transparent)]
    Extractor(#[from] ExtractorError),
    #[error(transparent)]
    Data(#[from] DataError),
}

/// All Algorithm hyperparameters for one purification run.
#[derive(Debug, Clone)]
pub struct PurifyConfig<T> {
    /// Critic (inner max) learning rate.
    pub eta_h: T,
    /// Perturbation (outer min) learning rate.
    pub eta_delta: T,
    /// Fraction of untrusted inputs updated per round.
    pub rho: T,
    /// Final perturbation amplification scale.
    pub beta: T,
    /// Gradient penalty coefficient.
    pub nu: T,
    /// Minibatch size for critic training.
    pub batch_size: usize,
    /// Perturbation regularization weight (unsquared norm in the descent,
    /// squared norm in the recorded outer objective).
    pub lambda: T,
    /// Critic checkpoint interval, in optimizer steps.
    pub checkpoint_interval: usize,
    /// Maximum outer rounds.
    pub max_rounds: usize,
    /// Outer stopping patience.
    pub patience: usize,
    /// Critic hidden width.
    pub hidden: usize,
    /// Hard cap on critic optimizer steps per round.
    pub max_inner_steps: usize,
}

impl<T: Real> Default for PurifyConfig<T> {
    fn default() -> Self {
        Self {
            eta_h: fl(1e-3),
            eta_delta: fl(0.05),
            rho: fl(0.05),
            beta: fl(2.0),
            nu: fl(10.0),
            batch_size: 64,
            lambda: T::zero(),
            checkpoint_interval: 10,
            max_rounds: 30,
            patience: 5,
            hidden: 128,
            max_inner_steps: 5000,
        }
    }
}

impl<T: Real> PurifyConfig<T> {
    pub fn validate(&self) -> Result<(), PurifyError> {
        if self.rho < T::zero() || self.rho > T::one() {
            return Err(PurifyError::Config(format!("rho {} outside [0,1]", self.rho)));
        }
        if self.beta < T::zero() {
            return Err(PurifyError::Config(format!("beta {} must be >= 0", self.beta)));
        }
        if self.lambda < T::zero() {
            return Err(PurifyError::Config(format!("lambda {} must be >= 0", self.lambda)));
        }
        if self.batch_size == 0 {
            return Err(PurifyError::Config("batch_size must be >= 1".into()));
        }
        if self.checkpoint_interval == 0 {
            return Err(PurifyError::Config("checkpoint_interval must be >= 1".into()));
        }
        if self.hidden == 0 {
            return Err(PurifyError::Config("hidden must be >= 1".into()));
        }
        Ok(())
    }

    fn inner(&self) -> InnerConfig<T> {
        InnerConfig {
            eta_h: self.eta_h,
            nu: self.nu,
            batch_size: self.batch_size,
            checkpoint_interval: self.checkpoint_interval,
            max_steps: self.max_inner_steps,
        }
    }
}

/// Evolving perturbations and outer-objective history.
#[derive(Debug, Clone)]
pub struct PurifyState<T> {
    /// n x w perturbation matrix, row-major.
    pub delta: Vec<T>,
    pub round: usize,
    pub objective_history: Vec<T>,
    pub best_objective: T,
}

/// One row of the per-round diagnostics CSV.
#[derive(Debug, Clone)]
pub struct RoundDiagnostics {
    pub round: usize,
    pub outer_objective: f64,
    pub mean_delta_l2: f64,
    pub max_delta_linf: f64,
    pub critic_checkpoint_count: usize,
}

pub fn diagnostics_csv(rows: &[RoundDiagnostics]) -> String {
    let mut out =
        String::from("round,outer_objective,mean_delta_l2,max_delta_linf,critic_checkpoint_count\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.round, r.outer_objective, r.mean_delta_l2, r.max_delta_linf, r.critic_checkpoint_count
        ));
    }
    out
}

/// Result of a purification run.
pub struct PurifyOutcome<T> {
    /// The purified dataset: inputs moved, labels and flags untouched.
    pub dataset: Dataset,
    pub state: PurifyState<T>,
    pub diagnostics: Vec<RoundDiagnostics>,
    pub critic: Critic<T>,
}

/// Indices of the `floor(rho * n)` largest values; ties broken by lower
/// index. Returned in rank order (largest first).
pub fn select_top_rho<T: Real>(values: &[T], rho: T) -> Vec<usize> {
    let n = values.len();
    let k = (rho.as_f64() * n as f64).floor() as usize;
    let k = k.min(n);
    if k == 0 {
        return Vec::new();
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| {
        values[b].partial_cmp(&values[a]).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b))
    });
    idx.truncate(k);
    idx
}

/// One gradient-descent update of a single perturbation:
/// `delta <- delta - eta * grad_delta [ h(g(x + delta)) + lambda * ||delta|| ]`.
/// The caller is responsible for the domain projection.
pub fn perturbation_step<T: Real>(
    x: &[T],
    delta: &mut [T],
    critic: &Critic<T>,
    g: &FeatureExtractor<T>,
    lambda: T,
    eta_delta: T,
) -> Result<(), PurifyError> {
    let xp: Vec<T> = x.iter().zip(delta.iter()).map(|(&a, &d)| a + d).collect();
    let feat = g.extract(&xp)?;
    let dfeat = critic.input_gradient(&feat)?;
    let mut grad = g.vjp(&xp, &dfeat)?;
    if lambda > T::zero() {
        let nrm = l2_norm(delta);
        if nrm >= fl::<T>(1e-12) {
            for (gk, &dk) in grad.iter_mut().zip(delta.iter()) {
                *gk += lambda * dk / nrm;
            }
        }
    }
    if grad.iter().any(|v| !v.is_finite()) {
        return Err(PurifyError::NonFiniteGradient { index: usize::MAX });
    }
    for (dk, gk) in delta.iter_mut().zip(&grad) {
        *dk -= eta_delta * *gk;
    }
    Ok(())
}

/// Outer stopping rule: stop at the round cap, or once the last
/// `patience` objectives are all strictly above the best seen so far.
pub fn outer_should_stop<T: Real>(
    history: &[T],
    round: usize,
    max_rounds: usize,
    patience: usize,
) -> bool {
    if round >= max_rounds {
        return true;
    }
    if history.len() > patience {
        let min = history.iter().copied().fold(T::infinity(), T::min);
        return history[history.len() - patience..].iter().all(|&v| v > min);
    }
    false
}

/// Final amplification and domain projection:
/// `delta <- beta * delta`, then `delta <- clip(x + delta) - x`.
pub fn amplify_and_project<T: Real>(x: &[T], delta: &mut [T], beta: T) {
    for d in delta.iter_mut() {
        *d = *d * beta;
    }
    let mut xp: Vec<T> = x.iter().zip(delta.iter()).map(|(&a, &d)| a + d).collect();
    clip_to_domain(&mut xp);
    for (d, (&xi, &pi)) in delta.iter_mut().zip(x.iter().zip(&xp)) {
        *d = pi - xi;
    }
}

/// Runs the full two-step purification of `d_ut` against `d_rf`.
/// Deterministic for a given seed; labels, flags, n, and w of the
/// untrusted dataset are preserved, and every output coordinate lands in
/// `[0,1]`.
pub fn purify<T: Real>(
    d_ut: &Dataset,
    d_rf: &Dataset,
    g: &FeatureExtractor<T>,
    cfg: &PurifyConfig<T>,
    seed: u64,
) -> Result<PurifyOutcome<T>, PurifyError> {
    cfg.validate()?;
    if d_ut.w() != d_rf.w() {
        return Err(PurifyError::DimMismatch { ut: d_ut.w(), rf: d_rf.w() });
    }
    if g.input_dim() != d_ut.w() {
        return Err(PurifyError::ExtractorDim { expected: g.input_dim(), got: d_ut.w() });
    }

    let n = d_ut.n();
    let w = d_ut.w();
    let dv = g.feature_dim();
    let xs: Vec<T> = (0..n)
        .flat_map(|i| d_ut.input(i).iter().map(|&v| fl::<T>(f64::from(v))))
        .collect::<Vec<_>>();
    let rf_features: Vec<Vec<T>> = (0..d_rf.n())
        .map(|i| {
            let row: Vec<T> = d_rf.input(i).iter().map(|&v| fl::<T>(f64::from(v))).collect();
            g.extract(&row)
        })
        .collect::<Result<_, _>>()?;

    let mut init_rng = SeedStream::new(seed, streams::CRITIC_INIT);
    let mut batch_rng = SeedStream::new(seed, streams::BATCH);
    let mut critic = Critic::<T>::init(cfg.hidden, dv, &mut init_rng);

    let mut delta = vec![T::zero(); n * w];
    let mut history: Vec<T> = Vec::new();
    let mut diagnostics: Vec<RoundDiagnostics> = Vec::new();
    let inner_cfg = cfg.inner();
    let mut round = 0usize;

    while !outer_should_stop(&history, round, cfg.max_rounds, cfg.patience) {
        round += 1;

        // Step I: retrain the critic (warm start) on the current
        // purified features.
        let pe_features = extract_all(g, &xs, &delta, n, w)?;
        let checkpoints = train_inner(&mut critic, &pe_features, &rf_features, &inner_cfg, &mut batch_rng)?;

        // Step II: move the top-rho inputs by one gradient step each,
        // projecting back into the domain immediately.
        let mut values = Vec::with_capacity(n);
        for f in &pe_features {
            values.push(critic.forward(f)?);
        }
        let selected = select_top_rho(&values, cfg.rho);
        for &i in &selected {
            let x = &xs[i * w..(i + 1) * w];
            let d = &mut delta[i * w..(i + 1) * w];
            perturbation_step(x, d, &critic, g, cfg.lambda, cfg.eta_delta)
                .map_err(|e| match e {
                    PurifyError::NonFiniteGradient { .. } => {
                        PurifyError::NonFiniteGradient { index: i }
                    }
                    other => other,
                })?;
            let mut xp: Vec<T> = x.iter().zip(d.iter()).map(|(&a, &b)| a + b).collect();
            clip_to_domain(&mut xp);
            for (dk, (&xk, &pk)) in d.iter_mut().zip(x.iter().zip(&xp)) {
                *dk = pk - xk;
            }
        }

        // Outer objective after Step II with the current critic on full
        // data: gap + lambda * sum ||delta_i||^2.
        let pe_features = extract_all(g, &xs, &delta, n, w)?;
        let gap = critic.full_gap(&pe_features, &rf_features)?;
        let mut reg = T::zero();
        for i in 0..n {
            let d = &delta[i * w..(i + 1) * w];
            let nrm = l2_norm(d);
            reg += nrm * nrm;
        }
        let objective = gap + cfg.lambda * reg;
        history.push(objective);

        diagnostics.push(RoundDiagnostics {
            round,
            outer_objective: objective.as_f64(),
            mean_delta_l2: mean_delta_l2(&delta, n, w),
            max_delta_linf: max_delta_linf(&delta, n, w),
            critic_checkpoint_count: checkpoints.len(),
        });
    }

    // Amplify and project once rounds are done.
    for i in 0..n {
        let x = &xs[i * w..(i + 1) * w];
        let d = &mut delta[i * w..(i + 1) * w];
        amplify_and_project(x, d, cfg.beta);
    }

    // Assemble D_pe; clamp again in f32 space so the stored dataset
    // satisfies the domain invariant bit-exactly after rounding.
    let mut inputs = Vec::with_capacity(n * w);
    for i in 0..n {
        for k in 0..w {
            let v = (xs[i * w + k] + delta[i * w + k]).as_f64() as f32;
            inputs.push(v.clamp(0.0, 1.0));
        }
    }
    let labels = (0..n).map(|i| d_ut.label(i)).collect();
    let flags = (0..n).map(|i| d_ut.is_manipulated(i)).collect();
    let dataset = Dataset::new(inputs, labels, flags, w, d_ut.y_count())?;

    let best = history.iter().copied().fold(T::infinity(), T::min);
    Ok(PurifyOutcome {
        dataset,
        state: PurifyState { delta, round, objective_history: history, best_objective: best },
        diagnostics,
        critic,
    })
}

fn extract_all<T: Real>(
    g: &FeatureExtractor<T>,
    xs: &[T],
    delta: &[T],
    n: usize,
    w: usize,
) -> Result<Vec<Vec<T>>, ExtractorError> {
    let mut out = Vec::with_capacity(n);
    let mut buf = vec![T::zero(); w];
    for i in 0..n {
        for k in 0..w {
            buf[k] = xs[i * w + k] + delta[i * w + k];
        }
        out.push(g.extract(&buf)?);
    }
    Ok(out)
}

fn mean_delta_l2<T: Real>(delta: &[T], n: usize, w: usize) -> f64 {
    (0..n).map(|i| l2_norm(&delta[i * w..(i + 1) * w]).as_f64()).sum::<f64>() / n as f64
}

fn max_delta_linf<T: Real>(delta: &[T], n: usize, w: usize) -> f64 {
    (0..n)
        .map(|i| linf_norm(&delta[i * w..(i + 1) * w]).as_f64())
        .fold(0.0, f64::max)
}
