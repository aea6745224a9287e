//! Pluggable differentiable feature maps `g: [0,1]^w -> R^dv` with value and
//! vector-Jacobian product. Three kinds: identity, affine, and a
//! one-hidden-layer tanh MLP. Extractors are frozen after construction.

use std::path::Path;

use crate::io_util::{ByteReader, ByteWriter, FormatError};
use crate::real::{fl, Real};
use crate::rng::SeedStream;

pub const EXTRACTOR_MAGIC: &[u8; 4] = b"MEXT";
pub const EXTRACTOR_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum ExtractorError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error("input length {got} does not match extractor input dimension {expected}")]
    InputDim { expected: usize, got: usize },
    #[error("cotangent length {got} does not match feature dimension {expected}")]
    FeatureDim { expected: usize, got: usize },
    #[error("identity extractor requires dv == w; file declares w={w}, dv={dv}")]
    IdentityShape { w: usize, dv: usize },
    #[error("non-finite parameter in {block}")]
    NonFiniteParam { block: &'static str },
}

#[derive(Debug, Clone, PartialEq)]
pub enum FeatureExtractor<T> {
    Identity {
        w: usize,
    },
    Linear {
        w: usize,
        dv: usize,
        /// dv x w, row-major
        weight: Vec<T>,
        bias: Vec<T>,
    },
    Mlp {
        w: usize,
        hidden: usize,
        dv: usize,
        /// hidden x w, row-major
        w1: Vec<T>,
        b1: Vec<T>,
        /// dv x hidden, row-major
        w2: Vec<T>,
        b2: Vec<T>,
    },
}

impl<T: Real> FeatureExtractor<T> {
    pub fn identity(w: usize) -> Self {
        Self::Identity { w }
    }

    pub fn linear(w: usize, dv: usize, weight: Vec<T>, bias: Vec<T>) -> Result<Self, ExtractorError> {
        assert_eq!(weight.len(), dv * w);
        assert_eq!(bias.len(), dv);
        let e = Self::Linear { w, dv, weight, bias };
        e.check_finite()?;
        Ok(e)
    }

    pub fn mlp(
        w: usize,
        hidden: usize,
        dv: usize,
        w1: Vec<T>,
        b1: Vec<T>,
        w2: Vec<T>,
        b2: Vec<T>,
    ) -> Result<Self, ExtractorError> {
        assert_eq!(w1.len(), hidden * w);
        assert_eq!(b1.len(), hidden);
        assert_eq!(w2.len(), dv * hidden);
        assert_eq!(b2.len(), dv);
        let e = Self::Mlp { w, hidden, dv, w1, b1, w2, b2 };
        e.check_finite()?;
        Ok(e)
    }

    /// Random affine map with N(0, 1/w) entries.
    pub fn random_linear(w: usize, dv: usize, rng: &mut SeedStream) -> Self {
        let scale = fl::<T>(1.0 / (w as f64).sqrt());
        let weight = (0..dv * w).map(|_| rng.normal::<T>() * scale).collect();
        let bias = (0..dv).map(|_| rng.normal::<T>() * fl::<T>(0.1)).collect();
        Self::Linear { w, dv, weight, bias }
    }

    /// Random tanh MLP with N(0, 1/fan_in) entries per layer.
    pub fn random_mlp(w: usize, hidden: usize, dv: usize, rng: &mut SeedStream) -> Self {
        let s1 = fl::<T>(1.0 / (w as f64).sqrt());
        let s2 = fl::<T>(1.0 / (hidden as f64).sqrt());
        Self::Mlp {
            w,
            hidden,
            dv,
            w1: (0..hidden * w).map(|_| rng.normal::<T>() * s1).collect(),
            b1: (0..hidden).map(|_| rng.normal::<T>() * fl::<T>(0.1)).collect(),
            w2: (0..dv * hidden).map(|_| rng.normal::<T>() * s2).collect(),
            b2: (0..dv).map(|_| rng.normal::<T>() * fl::<T>(0.1)).collect(),
        }
    }

    fn check_finite(&self) -> Result<(), ExtractorError> {
        let blocks: Vec<(&'static str, &[T])> = match self {
            Self::Identity { .. } => vec![],
            Self::Linear { weight, bias, .. } => vec![("weight", weight), ("bias", bias)],
            Self::Mlp { w1, b1, w2, b2, .. } => {
                vec![("w1", w1), ("b1", b1), ("w2", w2), ("b2", b2)]
            }
        };
        for (name, b) in blocks {
            if b.iter().any(|x| !x.is_finite()) {
                return Err(ExtractorError::NonFiniteParam { block: name });
            }
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        match self {
            Self::Identity { w } => *w,
            Self::Linear { w, .. } => *w,
            Self::Mlp { w, .. } => *w,
        }
    }

    pub fn feature_dim(&self) -> usize {
        match self {
            Self::Identity { w } => *w,
            Self::Linear { dv, .. } => *dv,
            Self::Mlp { dv, .. } => *dv,
        }
    }

    /// `g(x)`.
    pub fn extract(&self, x: &[T]) -> Result<Vec<T>, ExtractorError> {
        if x.len() != self.input_dim() {
            return Err(ExtractorError::InputDim { expected: self.input_dim(), got: x.len() });
        }
        Ok(match self {
            Self::Identity { .. } => x.to_vec(),
            Self::Linear { w, dv, weight, bias } => {
                let mut out = bias.clone();
                for (r, o) in out.iter_mut().enumerate().take(*dv) {
                    let row = &weight[r * w..(r + 1) * w];
                    for (k, &xk) in x.iter().enumerate() {
                        *o += row[k] * xk;
                    }
                }
                out
            }
            Self::Mlp { w, hidden, dv, w1, b1, w2, b2 } => {
                let mut a = b1.clone();
                for (j, aj) in a.iter_mut().enumerate().take(*hidden) {
                    let row = &w1[j * w..(j + 1) * w];
                    for (k, &xk) in x.iter().enumerate() {
                        *aj += row[k] * xk;
                    }
                    *aj = aj.tanh();
                }
                let mut out = b2.clone();
                for (r, o) in out.iter_mut().enumerate().take(*dv) {
                    let row = &w2[r * hidden..(r + 1) * hidden];
                    for (j, &aj) in a.iter().enumerate() {
                        *o += row[j] * aj;
                    }
                }
                out
            }
        })
    }

    /// `J_g(x)^T * cotangent` — pulls a feature-space gradient back to
    /// input space.
    pub fn vjp(&self, x: &[T], cotangent: &[T]) -> Result<Vec<T>, ExtractorError> {
        if x.len() != self.input_dim() {
            return Err(ExtractorError::InputDim { expected: self.input_dim(), got: x.len() });
        }
        if cotangent.len() != self.feature_dim() {
            return Err(ExtractorError::FeatureDim {
                expected: self.feature_dim(),
                got: cotangent.len(),
            });
        }
        Ok(match self {
            Self::Identity { .. } => cotangent.to_vec(),
            Self::Linear { w, dv, weight, .. } => {
                let mut out = vec![T::zero(); *w];
                for r in 0..*dv {
                    let row = &weight[r * w..(r + 1) * w];
                    let c = cotangent[r];
                    for (k, o) in out.iter_mut().enumerate() {
                        *o += row[k] * c;
                    }
                }
                out
            }
            Self::Mlp { w, hidden, dv, w1, b1, w2, .. } => {
                // forward to the hidden activations
                let mut a = b1.clone();
                for (j, aj) in a.iter_mut().enumerate().take(*hidden) {
                    let row = &w1[j * w..(j + 1) * w];
                    for (k, &xk) in x.iter().enumerate() {
                        *aj += row[k] * xk;
                    }
                    *aj = aj.tanh();
                }
                // back through the output layer: t = W2^T u
                let mut t = vec![T::zero(); *hidden];
                for r in 0..*dv {
                    let row = &w2[r * hidden..(r + 1) * hidden];
                    let c = cotangent[r];
                    for (j, tj) in t.iter_mut().enumerate() {
                        *tj += row[j] * c;
                    }
                }
                // through tanh: t *= 1 - a^2, then W1^T t
                let mut out = vec![T::zero(); *w];
                for j in 0..*hidden {
                    let tj = t[j] * (T::one() - a[j] * a[j]);
                    let row = &w1[j * w..(j + 1) * w];
                    for (k, o) in out.iter_mut().enumerate() {
                        *o += row[k] * tj;
                    }
                }
                out
            }
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut wtr = ByteWriter::new();
        wtr.magic(EXTRACTOR_MAGIC).u32(EXTRACTOR_VERSION);
        match self {
            Self::Identity { w } => {
                wtr.u8(0).u64(*w as u64).u64(*w as u64);
            }
            Self::Linear { w, dv, weight, bias } => {
                wtr.u8(1).u64(*w as u64).u64(*dv as u64);
                wtr.f32_block(&to_f32(weight)).f32_block(&to_f32(bias));
            }
            Self::Mlp { w, hidden, dv, w1, b1, w2, b2 } => {
                wtr.u8(2).u64(*w as u64).u64(*dv as u64).u64(*hidden as u64);
                wtr.f32_block(&to_f32(w1))
                    .f32_block(&to_f32(b1))
                    .f32_block(&to_f32(w2))
                    .f32_block(&to_f32(b2));
            }
        }
        wtr.into_bytes()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ExtractorError> {
        let mut r = ByteReader::new(bytes);
        r.magic(EXTRACTOR_MAGIC)?;
        r.version(EXTRACTOR_VERSION)?;
        let kind_offset = r.offset();
        let kind = r.u8()?;
        let w = r.u64()? as usize;
        let dv = r.u64()? as usize;
        let e = match kind {
            0 => {
                if dv != w {
                    return Err(ExtractorError::IdentityShape { w, dv });
                }
                Self::Identity { w }
            }
            1 => {
                let weight = from_f32(&r.f32_block(dv * w)?);
                let bias = from_f32(&r.f32_block(dv)?);
                Self::Linear { w, dv, weight, bias }
            }
            2 => {
                let hidden = r.u64()? as usize;
                let w1 = from_f32(&r.f32_block(hidden * w)?);
                let b1 = from_f32(&r.f32_block(hidden)?);
                let w2 = from_f32(&r.f32_block(dv * hidden)?);
                let b2 = from_f32(&r.f32_block(dv)?);
                Self::Mlp { w, hidden, dv, w1, b1, w2, b2 }
            }
            other => {
                return Err(FormatError::Invalid {
                    offset: kind_offset,
                    what: "extractor kind",
                    detail: format!("unknown kind byte {other}"),
                }
                .into())
            }
        };
        r.finish()?;
        e.check_finite()?;
        Ok(e)
    }
}

fn to_f32<T: Real>(xs: &[T]) -> Vec<f32> {
    xs.iter().map(|x| x.as_f64() as f32).collect()
}

fn from_f32<T: Real>(xs: &[f32]) -> Vec<T> {
    xs.iter().map(|&x| fl::<T>(f64::from(x))).collect()
}

pub fn save_extractor<T: Real>(e: &FeatureExtractor<T>, path: &Path) -> Result<(), ExtractorError> {
    std::fs::write(path, e.to_bytes()).map_err(|source| ExtractorError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_extractor<T: Real>(path: &Path) -> Result<FeatureExtractor<T>, ExtractorError> {
    let bytes = std::fs::read(path).map_err(|source| ExtractorError::Io {
        path: path.display().to_string(),
        source,
    })?;
    FeatureExtractor::from_bytes(&bytes)
}
