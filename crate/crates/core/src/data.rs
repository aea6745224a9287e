//! Labeled datasets on the `[0,1]^w` input domain, the binary MDAT file
//! format, and domain clipping.

use std::path::Path;

use crate::io_util::{ByteReader, ByteWriter, FormatError};
use crate::real::Real;

pub const DATASET_MAGIC: &[u8; 4] = b"MDAT";
pub const DATASET_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error("label {label} out of range 1..={y_count} for input {index} at byte {offset}")]
    LabelOutOfRange { index: usize, offset: usize, label: u32, y_count: u32 },
    #[error("manipulation flag {value} for input {index} at byte {offset} is not 0/1")]
    BadFlag { index: usize, offset: usize, value: u8 },
    #[error("coordinate {value} of input {index} at byte {offset} outside [0,1]")]
    CoordOutOfDomain { index: usize, offset: usize, value: f32 },
    #[error("dataset invariant violated: {0}")]
    Invariant(String),
}

/// `n` inputs in `[0,1]^w` with labels in `{1..Y}` and per-input
/// ground-truth manipulation flags. Immutable once built except through
/// the validating mutators.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    w: usize,
    y_count: u32,
    inputs: Vec<f32>,
    labels: Vec<u32>,
    manipulated: Vec<bool>,
}

impl Dataset {
    pub fn new(
        inputs: Vec<f32>,
        labels: Vec<u32>,
        manipulated: Vec<bool>,
        w: usize,
        y_count: u32,
    ) -> Result<Self, DataError> {
        if w == 0 {
            return Err(DataError::Invariant("w must be >= 1".into()));
        }
        if labels.is_empty() {
            return Err(DataError::Invariant("n must be >= 1".into()));
        }
        if y_count == 0 {
            return Err(DataError::Invariant("Y must be >= 1".into()));
        }
        let n = labels.len();
        if inputs.len() != n * w {
            return Err(DataError::Invariant(format!(
                "inputs length {} != n*w = {}",
                inputs.len(),
                n * w
            )));
        }
        if manipulated.len() != n {
            return Err(DataError::Invariant(format!(
                "flags length {} != n = {n}",
                manipulated.len()
            )));
        }
        for (i, &l) in labels.iter().enumerate() {
            if l == 0 || l > y_count {
                return Err(DataError::Invariant(format!(
                    "label {l} of input {i} outside 1..={y_count}"
                )));
            }
        }
        for (j, &v) in inputs.iter().enumerate() {
            if !v.is_finite() || !(0.0..=1.0).contains(&v) {
                return Err(DataError::Invariant(format!(
                    "coordinate {v} of input {} outside [0,1]",
                    j / w
                )));
            }
        }
        Ok(Self { w, y_count, inputs, labels, manipulated })
    }

    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn w(&self) -> usize {
        self.w
    }

    pub fn y_count(&self) -> u32 {
        self.y_count
    }

    pub fn input(&self, i: usize) -> &[f32] {
        &self.inputs[i * self.w..(i + 1) * self.w]
    }

    pub fn label(&self, i: usize) -> u32 {
        self.labels[i]
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn is_manipulated(&self, i: usize) -> bool {
        self.manipulated[i]
    }

    pub fn manipulated_count(&self) -> usize {
        self.manipulated.iter().filter(|&&m| m).count()
    }

    /// Replaces input `i`; coordinates must already be in `[0,1]`.
    pub fn set_input(&mut self, i: usize, x: &[f32]) -> Result<(), DataError> {
        if x.len() != self.w {
            return Err(DataError::Invariant(format!(
                "input length {} != w = {}",
                x.len(),
                self.w
            )));
        }
        for &v in x {
            if !v.is_finite() || !(0.0..=1.0).contains(&v) {
                return Err(DataError::Invariant(format!(
                    "coordinate {v} of replacement input {i} outside [0,1]"
                )));
            }
        }
        self.inputs[i * self.w..(i + 1) * self.w].copy_from_slice(x);
        Ok(())
    }

    pub fn set_manipulated(&mut self, i: usize, flag: bool) {
        self.manipulated[i] = flag;
    }

    /// Indices of inputs with label `y` (1-based), ascending.
    pub fn class_indices(&self, y: u32) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.labels[i] == y).collect()
    }

    /// New dataset keeping only the given row indices, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self, DataError> {
        let mut inputs = Vec::with_capacity(indices.len() * self.w);
        let mut labels = Vec::with_capacity(indices.len());
        let mut flags = Vec::with_capacity(indices.len());
        for &i in indices {
            inputs.extend_from_slice(self.input(i));
            labels.push(self.labels[i]);
            flags.push(self.manipulated[i]);
        }
        Dataset::new(inputs, labels, flags, self.w, self.y_count)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = ByteWriter::new();
        w.magic(DATASET_MAGIC)
            .u32(DATASET_VERSION)
            .u64(self.n() as u64)
            .u64(self.w as u64)
            .u32(self.y_count);
        for &l in &self.labels {
            w.u32(l);
        }
        for &m in &self.manipulated {
            w.u8(u8::from(m));
        }
        w.f32_block(&self.inputs);
        w.into_bytes()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, DataError> {
        let mut r = ByteReader::new(bytes);
        r.magic(DATASET_MAGIC)?;
        r.version(DATASET_VERSION)?;
        let n = r.u64()? as usize;
        let w = r.u64()? as usize;
        let y_count = r.u32()?;
        if n == 0 || w == 0 || y_count == 0 {
            return Err(DataError::Invariant(format!(
                "header declares n={n}, w={w}, Y={y_count}; all must be >= 1"
            )));
        }
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let offset = r.offset();
            let l = r.u32()?;
            if l == 0 || l > y_count {
                return Err(DataError::LabelOutOfRange { index: i, offset, label: l, y_count });
            }
            labels.push(l);
        }
        let mut manipulated = Vec::with_capacity(n);
        for i in 0..n {
            let offset = r.offset();
            let v = r.u8()?;
            if v > 1 {
                return Err(DataError::BadFlag { index: i, offset, value: v });
            }
            manipulated.push(v == 1);
        }
        let mut inputs = Vec::with_capacity(n * w);
        for j in 0..n * w {
            let offset = r.offset();
            let v = r.f32()?;
            if !v.is_finite() || !(0.0..=1.0).contains(&v) {
                return Err(DataError::CoordOutOfDomain { index: j / w, offset, value: v });
            }
            inputs.push(v);
        }
        r.finish()?;
        Ok(Self { w, y_count, inputs, labels, manipulated })
    }
}

pub fn save_dataset(d: &Dataset, path: &Path) -> Result<(), DataError> {
    std::fs::write(path, d.to_bytes()).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_dataset(path: &Path) -> Result<Dataset, DataError> {
    let bytes = std::fs::read(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Dataset::from_bytes(&bytes)
}

/// Componentwise projection onto `[0,1]^w`; idempotent.
pub fn clip_to_domain<T: Real>(x: &mut [T]) {
    for v in x {
        *v = v.max(T::zero()).min(T::one());
    }
}
