use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::layout::Layout;
use crate::error::{Error, Result};
use crate::scalar::{width, Scalar};

const MAGIC: &[u8; 8] = b"SASFTPRM";
const VERSION: u32 = 1;

/// Flat view of every model parameter (or of a gradient with the same shape).
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector<F: Scalar = f64> {
    pub values: Vec<F>,
    pub layout: Arc<Layout>,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    dtype: String,
    layout: Layout,
}

impl<F: Scalar> ParamVector<F> {
    pub fn zeros(layout: Arc<Layout>) -> Self {
        ParamVector {
            values: vec![F::zero(); layout.total],
            layout,
        }
    }

    pub fn from_values(values: Vec<F>, layout: Arc<Layout>) -> Result<Self> {
        if values.len() != layout.total {
            return Err(Error::LengthMismatch {
                left: values.len(),
                right: layout.total,
            });
        }
        Ok(ParamVector { values, layout })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.layout.clone())
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn segment(&self, name: &str) -> Option<&[F]> {
        self.layout.segment(name).map(|s| &self.values[s.range()])
    }

    fn same_len(&self, other: &Self) -> Result<()> {
        if self.len() != other.len() {
            return Err(Error::LengthMismatch {
                left: self.len(),
                right: other.len(),
            });
        }
        Ok(())
    }

    pub fn dot(&self, other: &Self) -> Result<F> {
        self.same_len(other)?;
        Ok(dot(&self.values, &other.values))
    }

    pub fn norm_sq(&self) -> F {
        dot(&self.values, &self.values)
    }

    pub fn norm(&self) -> F {
        self.norm_sq().sqrt()
    }

    /// `alpha * self + other`.
    pub fn axpy(&self, alpha: F, other: &Self) -> Result<Self> {
        self.same_len(other)?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(&a, &b)| alpha * a + b)
            .collect();
        Ok(ParamVector {
            values,
            layout: self.layout.clone(),
        })
    }

    /// In-place `self += alpha * other`.
    pub fn add_scaled(&mut self, alpha: F, other: &Self) -> Result<()> {
        self.same_len(other)?;
        for (a, &b) in self.values.iter_mut().zip(&other.values) {
            *a += alpha * b;
        }
        Ok(())
    }

    pub fn scale(&self, alpha: F) -> Self {
        ParamVector {
            values: self.values.iter().map(|&a| alpha * a).collect(),
            layout: self.layout.clone(),
        }
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.same_len(other)?;
        Ok(ParamVector {
            values: self.values.iter().zip(&other.values).map(|(&a, &b)| a - b).collect(),
            layout: self.layout.clone(),
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.same_len(other)?;
        Ok(ParamVector {
            values: self.values.iter().zip(&other.values).map(|(&a, &b)| a + b).collect(),
            layout: self.layout.clone(),
        })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let manifest = serde_json::to_vec(&Manifest {
            dtype: F::DTYPE.to_string(),
            layout: (*self.layout).clone(),
        })?;
        let mut out = Vec::with_capacity(16 + manifest.len() + self.len() * width::<F>());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(manifest.len() as u32).to_le_bytes());
        out.extend_from_slice(&manifest);
        for &v in &self.values {
            v.to_le_bytes_vec(&mut out);
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(Error::ParamFormat("bad magic".into()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != VERSION {
            return Err(Error::ParamFormat(format!("unsupported version {version}")));
        }
        let mlen = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
        let body = bytes
            .get(16..16 + mlen)
            .ok_or_else(|| Error::ParamFormat("truncated manifest".into()))?;
        let manifest: Manifest = serde_json::from_slice(body)?;
        if manifest.dtype != F::DTYPE {
            return Err(Error::ParamFormat(format!(
                "file holds {} values, expected {}",
                manifest.dtype,
                F::DTYPE
            )));
        }
        manifest.layout.check()?;
        let w = width::<F>();
        let data = &bytes[16 + mlen..];
        if data.len() != manifest.layout.total * w {
            return Err(Error::ParamFormat(format!(
                "expected {} value bytes, found {}",
                manifest.layout.total * w,
                data.len()
            )));
        }
        let values: Vec<F> = data.chunks_exact(w).map(F::from_le_slice).collect();
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::ParamFormat("non-finite parameter".into()));
        }
        Ok(ParamVector {
            values,
            layout: Arc::new(manifest.layout),
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut buf = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut buf)?;
        Self::from_bytes(&buf)
    }
}

/// Sequential dot product; accumulation order is the index order.
pub fn dot<F: Scalar>(a: &[F], b: &[F]) -> F {
    let mut acc = F::zero();
    for (&x, &y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}
