use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::ContrastPair;
use crate::error::{Error, Result};
use crate::model::{dot, ParamVector, Transformer};
use crate::scalar::Scalar;

/// Orthonormal basis `U` (columns stored as parameter vectors) of the
/// estimated style subspace.
#[derive(Debug, Clone, PartialEq)]
pub struct StyleBasis<F: Scalar = f64> {
    pub columns: Vec<ParamVector<F>>,
    /// Fraction of the squared singular-value mass captured by the columns.
    pub energy: f64,
    pub threshold: f64,
    pub intensity: Option<usize>,
    pub singular_values: Vec<f64>,
}

impl<F: Scalar> StyleBasis<F> {
    pub fn k(&self) -> usize {
        self.columns.len()
    }

    pub fn dim(&self) -> usize {
        self.columns[0].len()
    }

    /// Largest `|U^T U - I|` entry.
    pub fn orthonormality_error(&self) -> f64 {
        let mut worst = 0.0f64;
        for (i, a) in self.columns.iter().enumerate() {
            for (j, b) in self.columns.iter().enumerate() {
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((dot(&a.values, &b.values).f64() - target).abs());
            }
        }
        worst
    }
}

/// Estimates the style subspace from contrast pairs at `omega_0`: each pair
/// contributes `grad(styled) - grad(plain)`.
pub fn style_basis_estimate<F: Scalar>(
    model: &Transformer,
    omega_0: &ParamVector<F>,
    pairs: &[ContrastPair],
    energy_threshold: f64,
) -> Result<StyleBasis<F>> {
    if pairs.is_empty() {
        return Err(Error::Empty("contrast pairs"));
    }
    let diffs = pairs
        .par_iter()
        .map(|p| {
            let (_, gs) = model.example_loss_grad(omega_0, &p.styled)?;
            let (_, gp) = model.example_loss_grad(omega_0, &p.plain)?;
            let values = gs.into_iter().zip(gp).map(|(a, b)| a - b).collect();
            ParamVector::from_values(values, omega_0.layout.clone())
        })
        .collect::<Result<Vec<_>>>()?;
    let mut basis = style_basis_from_differences(&diffs, energy_threshold)?;
    basis.intensity = pairs[0].styled.meta.intensity;
    Ok(basis)
}

/// Thin SVD of the column stack `[d_1 .. d_n]` via modified Gram-Schmidt QR
/// followed by an SVD of the small `R` factor; keeps the fewest left singular
/// vectors whose squared singular values reach `energy_threshold` of the
/// total.
pub fn style_basis_from_differences<F: Scalar>(
    diffs: &[ParamVector<F>],
    energy_threshold: f64,
) -> Result<StyleBasis<F>> {
    if diffs.is_empty() {
        return Err(Error::Empty("gradient differences"));
    }
    if !(energy_threshold > 0.0 && energy_threshold <= 1.0) {
        return Err(Error::Config(format!(
            "energy threshold must lie in (0, 1], got {energy_threshold}"
        )));
    }
    let p = diffs[0].len();
    for d in diffs {
        if d.len() != p {
            return Err(Error::LengthMismatch { left: p, right: d.len() });
        }
    }
    let cols: Vec<Vec<f64>> = diffs.iter().map(|d| d.values.iter().map(|x| x.f64()).collect()).collect();
    let scale = cols.iter().map(|c| dot(c, c).sqrt()).fold(0.0, f64::max);
    if scale == 0.0 || !scale.is_finite() {
        return Err(Error::Degenerate("all style gradient differences vanish".into()));
    }

    // MGS with one re-orthogonalization pass; dependent columns are dropped.
    let n = cols.len();
    let mut q: Vec<Vec<f64>> = Vec::new();
    let mut r_rows: Vec<Vec<f64>> = Vec::new();
    for (j, c) in cols.iter().enumerate() {
        let mut v = c.clone();
        let mut coef = vec![0.0; q.len()];
        for _ in 0..2 {
            for (i, qi) in q.iter().enumerate() {
                let h = dot(qi, &v);
                coef[i] += h;
                v.iter_mut().zip(qi).for_each(|(a, b)| *a -= h * b);
            }
        }
        for (i, h) in coef.into_iter().enumerate() {
            r_rows[i][j] = h;
        }
        let norm = dot(&v, &v).sqrt();
        if norm > 1e-12 * scale {
            v.iter_mut().for_each(|a| *a /= norm);
            q.push(v);
            let mut row = vec![0.0; n];
            row[j] = norm;
            r_rows.push(row);
        }
    }
    let r = DMatrix::from_fn(q.len(), n, |i, j| r_rows[i][j]);
    let svd = r.svd(true, false);
    let u_small = svd.u.expect("requested U");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]).then(a.cmp(&b)));
    let sigma: Vec<f64> = order.iter().map(|&i| svd.singular_values[i]).collect();
    let total: f64 = sigma.iter().map(|s| s * s).sum();
    let mut k = 0;
    let mut acc = 0.0;
    while k < sigma.len() {
        acc += sigma[k] * sigma[k];
        k += 1;
        if acc >= energy_threshold * total * (1.0 - 1e-12) {
            break;
        }
    }

    let mut columns: Vec<Vec<f64>> = Vec::with_capacity(k);
    for &col in order.iter().take(k) {
        let mut w: Vec<f64> = u_small.column(col).iter().copied().collect();
        // Sign convention: first nonzero coefficient positive.
        if w.iter().find(|x| x.abs() > 1e-14).is_some_and(|x| *x < 0.0) {
            w.iter_mut().for_each(|x| *x = -*x);
        }
        let mut u = vec![0.0; p];
        for (qi, &wi) in q.iter().zip(&w) {
            u.iter_mut().zip(qi).for_each(|(a, b)| *a += wi * b);
        }
        // Final clean-up against earlier columns keeps U^T U = I tight.
        for prev in &columns {
            let h = dot(prev, &u);
            u.iter_mut().zip(prev).for_each(|(a, b)| *a -= h * b);
        }
        let norm = dot(&u, &u).sqrt();
        u.iter_mut().for_each(|a| *a /= norm);
        columns.push(u);
    }
    let layout = diffs[0].layout.clone();
    let columns = columns
        .into_iter()
        .map(|c| ParamVector::from_values(c.into_iter().map(F::of).collect(), layout.clone()))
        .collect::<Result<Vec<_>>>()?;
    Ok(StyleBasis {
        columns,
        energy: acc / total,
        threshold: energy_threshold,
        intensity: None,
        singular_values: sigma,
    })
}

/// Split of a vector into its style-subspace and complementary components.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection<F: Scalar = f64> {
    pub style: ParamVector<F>,
    pub semantic: ParamVector<F>,
    /// `|v_style|^2 / |v|^2`.
    pub style_fraction: F,
}

/// `v_style = U U^T v`, `v_semantic = v - v_style`.
pub fn project<F: Scalar>(basis: &StyleBasis<F>, v: &ParamVector<F>) -> Result<Projection<F>> {
    if v.len() != basis.dim() {
        return Err(Error::LengthMismatch {
            left: basis.dim(),
            right: v.len(),
        });
    }
    let vv = v.norm_sq();
    if vv == F::zero() {
        return Err(Error::Degenerate("style fraction of a zero vector is undefined".into()));
    }
    let mut style = v.zeros_like();
    for u in &basis.columns {
        let c = dot(&u.values, &v.values);
        style.add_scaled(c, u)?;
    }
    let semantic = v.sub(&style)?;
    let style_fraction = (style.norm_sq() / vv).min(F::one());
    Ok(Projection {
        style,
        semantic,
        style_fraction,
    })
}

/// Serializable summary of a basis (without the columns).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisSummary {
    pub k: usize,
    pub energy: f64,
    pub threshold: f64,
    pub intensity: Option<usize>,
    pub singular_values: Vec<f64>,
}

impl<F: Scalar> From<&StyleBasis<F>> for BasisSummary {
    fn from(b: &StyleBasis<F>) -> Self {
        BasisSummary {
            k: b.k(),
            energy: b.energy,
            threshold: b.threshold,
            intensity: b.intensity,
            singular_values: b.singular_values.clone(),
        }
    }
}
