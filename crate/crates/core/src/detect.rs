//! Reference-data detectors: the precision/recall-controlled simulated
//! detector and the adapted per-class k-NN selector.

use crate::data::Dataset;
use crate::extractor::{ExtractorError, FeatureExtractor};
use crate::real::{l2_dist, Real};
use crate::rng::SeedStream;

#[derive(Debug, thiserror::Error)]
pub enum DetectError {
    #[error("precision q={0} must be in (0,1]")]
    BadPrecision(f64),
    #[error("recall r={0} must be in [0,1]")]
    BadRecall(f64),
    #[error("infeasible detector sample: needs {needed_manip} of {available_manip} manipulated and {needed_clean} of {available_clean} clean inputs")]
    Infeasible {
        needed_manip: usize,
        available_manip: usize,
        needed_clean: usize,
        available_clean: usize,
    },
    #[error("k={0} must satisfy 1 <= k <= n={1}")]
    BadK(usize, usize),
    #[error("kappa={0} must be >= 1")]
    BadKappa(usize),
    #[error(transparent)]
    Extractor(#[from] ExtractorError),
}

/// Floor with a tiny guard so formula values that are mathematically
/// integral do not round down from float error.
fn guarded_floor(x: f64) -> usize {
    (x + 1e-9).floor().max(0.0) as usize
}

/// Simulated detector with precision `q` and recall `r`: samples
/// `floor(n*c*r*(1-q)/q)` manipulated and `floor(n*c*r)` clean indices,
/// where `c` is the dataset's clean fraction. Returns the merged index
/// set, ascending.
pub fn simulated_detect(
    d: &Dataset,
    q: f64,
    r: f64,
    rng: &mut SeedStream,
) -> Result<Vec<usize>, DetectError> {
    if !(q > 0.0 && q <= 1.0) {
        return Err(DetectError::BadPrecision(q));
    }
    if !(0.0..=1.0).contains(&r) {
        return Err(DetectError::BadRecall(r));
    }
    let n = d.n();
    let manip_pool: Vec<usize> = (0..n).filter(|&i| d.is_manipulated(i)).collect();
    let clean_pool: Vec<usize> = (0..n).filter(|&i| !d.is_manipulated(i)).collect();
    let clean_fraction = clean_pool.len() as f64 / n as f64;

    let base = n as f64 * clean_fraction * r;
    let needed_manip = guarded_floor(base * (1.0 - q) / q);
    let needed_clean = guarded_floor(base);
    if needed_manip > manip_pool.len() || needed_clean > clean_pool.len() {
        return Err(DetectError::Infeasible {
            needed_manip,
            available_manip: manip_pool.len(),
            needed_clean,
            available_clean: clean_pool.len(),
        });
    }

    let mut out = rng.sample_without_replacement(&manip_pool, needed_manip);
    out.extend(rng.sample_without_replacement(&clean_pool, needed_clean));
    out.sort_unstable();
    Ok(out)
}

/// Result of a k-NN(kappa) detection pass.
#[derive(Debug, Clone)]
pub struct KnnDetection {
    /// Selected reference indices, ascending.
    pub indices: Vec<usize>,
    /// Classes that had fewer than kappa members (all were returned).
    pub warnings: Vec<String>,
}

/// Adapted k-NN detector: per-input confidence is the fraction of its k
/// nearest feature-space neighbors (Euclidean, excluding itself) sharing
/// its label; per class the top-kappa most confident inputs are selected.
/// Ties in confidence break toward the lower index.
pub fn knn_kappa_detect<T: Real>(
    d: &Dataset,
    g: &FeatureExtractor<T>,
    k: usize,
    kappa: usize,
) -> Result<KnnDetection, DetectError> {
    let n = d.n();
    if k == 0 || k > n {
        return Err(DetectError::BadK(k, n));
    }
    if kappa == 0 {
        return Err(DetectError::BadKappa(kappa));
    }
    let features: Vec<Vec<T>> = (0..n)
        .map(|i| {
            let row: Vec<T> = d.input(i).iter().map(|&v| T::from_f64_lossy(f64::from(v))).collect();
            g.extract(&row)
        })
        .collect::<Result<_, _>>()?;

    let eff_k = k.min(n - 1).max(1);
    let mut confidence = vec![0.0f64; n];
    let mut order: Vec<usize> = Vec::with_capacity(n - 1);
    for i in 0..n {
        order.clear();
        order.extend((0..n).filter(|&j| j != i));
        // distance ties resolve by index so the ranking is deterministic
        order.sort_by(|&a, &b| {
            l2_dist(&features[i], &features[a])
                .partial_cmp(&l2_dist(&features[i], &features[b]))
                .unwrap()
                .then(a.cmp(&b))
        });
        let same = order[..eff_k].iter().filter(|&&j| d.label(j) == d.label(i)).count();
        confidence[i] = same as f64 / eff_k as f64;
    }

    let mut indices = Vec::new();
    let mut warnings = Vec::new();
    for y in 1..=d.y_count() {
        let mut members = d.class_indices(y);
        if members.is_empty() {
            continue;
        }
        if members.len() < kappa {
            warnings.push(format!(
                "class {y} has only {} members, fewer than kappa={kappa}; returning all",
                members.len()
            ));
        }
        members.sort_by(|&a, &b| {
            confidence[b].partial_cmp(&confidence[a]).unwrap().then(a.cmp(&b))
        });
        members.truncate(kappa.min(members.len()));
        indices.extend(members);
    }
    indices.sort_unstable();
    Ok(KnnDetection { indices, warnings })
}
