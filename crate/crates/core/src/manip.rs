//! Training-data manipulations and the mark-detection hypothesis test:
//! per-class random unit marks with bounded projected-gradient embedding,
//! feature-collision poisoning, trigger patching, and the cosine/incomplete-
//! beta detection statistic with Fisher (or Bonferroni) combination.

use std::path::Path;

use crate::data::{clip_to_domain, DataError, Dataset};
use crate::extractor::{ExtractorError, FeatureExtractor};
use crate::io_util::{ByteReader, ByteWriter, FormatError};
use crate::real::{dot, fl, l2_norm, Real};
use crate::rng::SeedStream;
use crate::special::{cosine_pvalue, fisher_combine, min_p_bonferroni, SpecialFnError};

pub const MARKS_MAGIC: &[u8; 4] = b"MMRK";
pub const MARKS_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum ManipError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error("mark dimension must be >= 2, got {0}")]
    MarkDim(usize),
    #[error("mark count {marks} does not match class count {classes}")]
    MarkCount { marks: usize, classes: usize },
    #[error("class {0} has no members")]
    EmptyClass(u32),
    #[error("fraction {0} outside [0,1]")]
    BadFraction(f64),
    #[error("epsilon {0} must be >= 0")]
    BadEpsilon(f64),
    #[error("trigger exceeds the {rows}x{cols} layout: offset ({or},{oc}), size ({sr},{sc})")]
    TriggerOutOfBounds { rows: usize, cols: usize, or: usize, oc: usize, sr: usize, sc: usize },
    #[error("layout {rows}x{cols} does not match input length {len}")]
    LayoutMismatch { rows: usize, cols: usize, len: usize },
    #[error("trigger values length {got}, expected {expected}")]
    TriggerValues { expected: usize, got: usize },
    #[error("probe weight vector for class {0} has zero norm")]
    ZeroWeight(usize),
    #[error(transparent)]
    Extractor(#[from] ExtractorError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Special(#[from] SpecialFnError),
}

/// Per-class random unit marks plus the marking budget.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkSet<T> {
    pub dv: usize,
    /// One unit vector per class, index 0 = class 1.
    pub marks: Vec<Vec<T>>,
    /// Fraction of each class that gets marked.
    pub marked_fraction: f64,
    /// Per-coordinate (infinity-norm) bound on the input-space change.
    pub epsilon: T,
}

/// Draws `y_count` independent directions uniform on the unit sphere.
pub fn gen_marks<T: Real>(
    y_count: usize,
    dv: usize,
    marked_fraction: f64,
    epsilon: T,
    rng: &mut SeedStream,
) -> Result<MarkSet<T>, ManipError> {
    if dv < 2 {
        return Err(ManipError::MarkDim(dv));
    }
    if !(0.0..=1.0).contains(&marked_fraction) {
        return Err(ManipError::BadFraction(marked_fraction));
    }
    if epsilon < T::zero() {
        return Err(ManipError::BadEpsilon(epsilon.as_f64()));
    }
    let marks = (0..y_count)
        .map(|_| {
            let mut v: Vec<T> = (0..dv).map(|_| rng.normal::<T>()).collect();
            let nrm = l2_norm(&v);
            for x in &mut v {
                *x /= nrm;
            }
            v
        })
        .collect();
    Ok(MarkSet { dv, marks, marked_fraction, epsilon })
}

impl<T: Real> MarkSet<T> {
    pub fn y_count(&self) -> usize {
        self.marks.len()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = ByteWriter::new();
        w.magic(MARKS_MAGIC)
            .u32(MARKS_VERSION)
            .u32(self.marks.len() as u32)
            .u64(self.dv as u64);
        for m in &self.marks {
            w.f32_block(&m.iter().map(|x| x.as_f64() as f32).collect::<Vec<_>>());
        }
        w.into_bytes()
    }

    /// Marks are stored alone in the file; the marking budget is config.
    pub fn from_bytes(bytes: &[u8], marked_fraction: f64, epsilon: T) -> Result<Self, ManipError> {
        let mut r = ByteReader::new(bytes);
        r.magic(MARKS_MAGIC)?;
        r.version(MARKS_VERSION)?;
        let y = r.u32()? as usize;
        let dv = r.u64()? as usize;
        let mut marks = Vec::with_capacity(y);
        for _ in 0..y {
            marks.push(r.f32_block(dv)?.into_iter().map(|x| fl::<T>(f64::from(x))).collect());
        }
        r.finish()?;
        Ok(Self { dv, marks, marked_fraction, epsilon })
    }
}

pub fn save_marks<T: Real>(ms: &MarkSet<T>, path: &Path) -> Result<(), ManipError> {
    std::fs::write(path, ms.to_bytes()).map_err(|source| ManipError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_marks<T: Real>(
    path: &Path,
    marked_fraction: f64,
    epsilon: T,
) -> Result<MarkSet<T>, ManipError> {
    let bytes = std::fs::read(path).map_err(|source| ManipError::Io {
        path: path.display().to_string(),
        source,
    })?;
    MarkSet::from_bytes(&bytes, marked_fraction, epsilon)
}

/// Shared projected-gradient loop for the bounded manipulations:
/// ascends `objective_grad` in feature space pulled back through the
/// extractor, projecting onto the epsilon infinity-ball and the domain
/// after every step.
fn projected_gradient<T: Real>(
    x: &[T],
    g: &FeatureExtractor<T>,
    epsilon: T,
    steps: usize,
    step_size: T,
    mut feature_cotangent: impl FnMut(&[T]) -> Vec<T>,
) -> Result<Vec<T>, ManipError> {
    let w = x.len();
    let mut delta = vec![T::zero(); w];
    if epsilon == T::zero() || steps == 0 {
        return Ok(delta);
    }
    let mut xp = vec![T::zero(); w];
    for _ in 0..steps {
        for k in 0..w {
            xp[k] = x[k] + delta[k];
        }
        let feat = g.extract(&xp)?;
        let cot = feature_cotangent(&feat);
        let grad = g.vjp(&xp, &cot)?;
        for k in 0..w {
            delta[k] += step_size * grad[k];
            delta[k] = delta[k].max(-epsilon).min(epsilon);
        }
        for k in 0..w {
            xp[k] = x[k] + delta[k];
        }
        clip_to_domain(&mut xp);
        for k in 0..w {
            delta[k] = xp[k] - x[k];
        }
    }
    Ok(delta)
}

/// Marks `marked_fraction` of every class: projected gradient ascent on
/// `cos(g(x+d), u_class) - gamma * ||g(x+d) - g(x)||^2` inside the
/// epsilon ball. Flags are set on the marked inputs; labels never change.
pub fn mark_inputs<T: Real>(
    d: &Dataset,
    ms: &MarkSet<T>,
    g: &FeatureExtractor<T>,
    steps: usize,
    step_size: T,
    gamma: T,
    rng: &mut SeedStream,
) -> Result<Dataset, ManipError> {
    if ms.y_count() != d.y_count() as usize {
        return Err(ManipError::MarkCount { marks: ms.y_count(), classes: d.y_count() as usize });
    }
    let mut out = d.clone();
    for y in 1..=d.y_count() {
        let members = d.class_indices(y);
        let take = (ms.marked_fraction * members.len() as f64).floor() as usize;
        if take == 0 {
            continue;
        }
        let mark = &ms.marks[(y - 1) as usize];
        for &i in &rng.sample_without_replacement(&members, take) {
            let x: Vec<T> = d.input(i).iter().map(|&v| fl::<T>(f64::from(v))).collect();
            let f0 = g.extract(&x)?;
            let delta = projected_gradient(&x, g, ms.epsilon, steps, step_size, |feat| {
                // d/df [ cos(f, u) - gamma * ||f - f0||^2 ]
                let nf = l2_norm(feat).max(fl::<T>(1e-12));
                let fu = dot(feat, mark);
                let mut cot = vec![T::zero(); feat.len()];
                for k in 0..feat.len() {
                    cot[k] = mark[k] / nf - fu * feat[k] / (nf * nf * nf)
                        - fl::<T>(2.0) * gamma * (feat[k] - f0[k]);
                }
                cot
            })?;
            let moved: Vec<f32> = x
                .iter()
                .zip(&delta)
                .map(|(&a, &b)| ((a + b).as_f64() as f32).clamp(0.0, 1.0))
                .collect();
            out.set_input(i, &moved)?;
            out.set_manipulated(i, true);
        }
    }
    Ok(out)
}

/// Clean-label feature-collision poisoning: moves a fraction of the target
/// class toward `g(target_x)` in feature space (projected gradient descent
/// on the squared feature distance, epsilon-ball and domain projected).
#[allow(clippy::too_many_arguments)]
pub fn poison_feature_collision<T: Real>(
    d: &Dataset,
    target_x: &[f32],
    target_y: u32,
    fraction: f64,
    epsilon: T,
    g: &FeatureExtractor<T>,
    steps: usize,
    step_size: T,
    rng: &mut SeedStream,
) -> Result<Dataset, ManipError> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(ManipError::BadFraction(fraction));
    }
    if epsilon < T::zero() {
        return Err(ManipError::BadEpsilon(epsilon.as_f64()));
    }
    let members = d.class_indices(target_y);
    if members.is_empty() {
        return Err(ManipError::EmptyClass(target_y));
    }
    let tx: Vec<T> = target_x.iter().map(|&v| fl::<T>(f64::from(v))).collect();
    let target_feat = g.extract(&tx)?;
    let take = (fraction * members.len() as f64).floor() as usize;
    let mut out = d.clone();
    for &i in &rng.sample_without_replacement(&members, take) {
        let x: Vec<T> = d.input(i).iter().map(|&v| fl::<T>(f64::from(v))).collect();
        // descend ||f - f_target||^2, i.e. ascend its negation
        let delta = projected_gradient(&x, g, epsilon, steps, step_size, |feat| {
            feat.iter()
                .zip(&target_feat)
                .map(|(&f, &t)| -fl::<T>(2.0) * (f - t))
                .collect()
        })?;
        let moved: Vec<f32> = x
            .iter()
            .zip(&delta)
            .map(|(&a, &b)| ((a + b).as_f64() as f32).clamp(0.0, 1.0))
            .collect();
        out.set_input(i, &moved)?;
        out.set_manipulated(i, true);
    }
    Ok(out)
}

/// A rectangular patch over a row-major 2-D layout of the input vector.
#[derive(Debug, Clone, PartialEq)]
pub struct TriggerSpec {
    /// (row, col) of the patch's top-left corner.
    pub offset: (usize, usize),
    /// (rows, cols) of the patch.
    pub size: (usize, usize),
    /// Patch values, row-major, length rows*cols, each in [0,1].
    pub values: Vec<f32>,
}

/// Overwrites the patch region of `x` (interpreted as a `rows x cols`
/// image) with the trigger values.
pub fn patch_trigger(
    x: &[f32],
    layout: (usize, usize),
    trigger: &TriggerSpec,
) -> Result<Vec<f32>, ManipError> {
    let (rows, cols) = layout;
    if rows * cols != x.len() {
        return Err(ManipError::LayoutMismatch { rows, cols, len: x.len() });
    }
    let (or, oc) = trigger.offset;
    let (sr, sc) = trigger.size;
    if trigger.values.len() != sr * sc {
        return Err(ManipError::TriggerValues { expected: sr * sc, got: trigger.values.len() });
    }
    if or + sr > rows || oc + sc > cols {
        return Err(ManipError::TriggerOutOfBounds { rows, cols, or, oc, sr, sc });
    }
    let mut out = x.to_vec();
    for r in 0..sr {
        for c in 0..sc {
            out[(or + r) * cols + (oc + c)] = trigger.values[r * sc + c].clamp(0.0, 1.0);
        }
    }
    Ok(out)
}

/// How per-class p-values are combined into one verdict.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CombineMethod {
    #[default]
    Fisher,
    MinBonferroni,
}

/// Outcome of the mark-detection test.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionReport {
    pub cosines: Vec<f64>,
    pub pvalues: Vec<f64>,
    pub combined_p: f64,
    pub flagged: bool,
}

pub const DETECTION_SIGNIFICANCE: f64 = 0.05;

/// Tests per-class probe weights against the marks: cosine similarity per
/// class, one-sided p-value from the sphere prior, combined verdict at
/// p < 0.05.
pub fn detect_marks<T: Real>(
    probe_weights: &[Vec<T>],
    ms: &MarkSet<T>,
    method: CombineMethod,
) -> Result<DetectionReport, ManipError> {
    if probe_weights.len() != ms.y_count() {
        return Err(ManipError::MarkCount { marks: ms.y_count(), classes: probe_weights.len() });
    }
    let mut cosines = Vec::with_capacity(probe_weights.len());
    let mut pvalues = Vec::with_capacity(probe_weights.len());
    for (cls, (w, u)) in probe_weights.iter().zip(&ms.marks).enumerate() {
        let wn = l2_norm(w).as_f64();
        if wn == 0.0 {
            return Err(ManipError::ZeroWeight(cls + 1));
        }
        let un = l2_norm(u).as_f64();
        let c = (dot(w, u).as_f64() / (wn * un)).clamp(-1.0, 1.0);
        cosines.push(c);
        pvalues.push(cosine_pvalue(c, ms.dv)?);
    }
    let combined_p = match method {
        CombineMethod::Fisher => fisher_combine(&pvalues),
        CombineMethod::MinBonferroni => min_p_bonferroni(&pvalues),
    };
    Ok(DetectionReport { cosines, pvalues, combined_p, flagged: combined_p < DETECTION_SIGNIFICANCE })
}
