//! Simulation basis `K` (SVD directions plus the all-ones vector), its
//! orthonormal complement `H`, and projection of observations onto both.
//!
//! Each run is centred on its own mean before the SVD, so every SVD column
//! of `K` is orthogonal to the ones vector and the last weight row carries
//! the per-run means.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};
use crate::linalg::canonical_sign;

/// Default cumulative fraction of centred variance retained by `K`.
pub const DEFAULT_VARIANCE_FRACTION: f64 = 0.99;

/// Name given to the fictitious noise input stored in boundary column 0.
pub const FICTITIOUS_INPUT: &str = "x0";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamBounds {
    pub name: String,
    pub unit: String,
    pub lo: f64,
    pub hi: f64,
}

impl ParamBounds {
    pub fn new(name: impl Into<String>, unit: impl Into<String>, lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && hi > lo) {
            return Err(Error::InvalidInput(format!("parameter bounds [{lo}, {hi}] are not an interval")));
        }
        Ok(Self { name: name.into(), unit: unit.into(), lo, hi })
    }

    pub fn to_unit(&self, v: f64) -> f64 {
        (v - self.lo) / (self.hi - self.lo)
    }

    pub fn from_unit(&self, u: f64) -> f64 {
        self.lo + u * (self.hi - self.lo)
    }
}

/// Design matrix normalized to `[0, 1]`, with the map back to original units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterDesign {
    unit: DMatrix<f64>,
    bounds: Vec<ParamBounds>,
}

impl ParameterDesign {
    pub fn from_original(original: &DMatrix<f64>, bounds: Vec<ParamBounds>) -> Result<Self> {
        if original.ncols() != bounds.len() {
            return Err(Error::InvalidInput(format!(
                "design has {} columns but {} parameter bounds",
                original.ncols(),
                bounds.len()
            )));
        }
        let unit = DMatrix::from_fn(original.nrows(), original.ncols(), |m, p| bounds[p].to_unit(original[(m, p)]));
        Self::from_unit(unit, bounds)
    }

    pub fn from_unit(unit: DMatrix<f64>, bounds: Vec<ParamBounds>) -> Result<Self> {
        ensure_finite(unit.as_slice(), "design")?;
        if unit.ncols() != bounds.len() {
            return Err(Error::InvalidInput("design/bounds column mismatch".into()));
        }
        // Round-off from the affine map is tolerated at the edges.
        const EDGE: f64 = 1e-12;
        if unit.iter().any(|u| *u < -EDGE || *u > 1.0 + EDGE) {
            return Err(Error::InvalidInput("design entries fall outside the parameter bounds".into()));
        }
        let unit = unit.map(|u| u.clamp(0.0, 1.0));
        Ok(Self { unit, bounds })
    }

    pub fn unit(&self) -> &DMatrix<f64> {
        &self.unit
    }

    pub fn bounds(&self) -> &[ParamBounds] {
        &self.bounds
    }

    pub fn runs(&self) -> usize {
        self.unit.nrows()
    }

    pub fn dims(&self) -> usize {
        self.unit.ncols()
    }

    pub fn original(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.unit.nrows(), self.unit.ncols(), |m, p| self.bounds[p].from_unit(self.unit[(m, p)]))
    }

    pub fn denormalize(&self, unit_point: &[f64]) -> Vec<f64> {
        unit_point.iter().zip(&self.bounds).map(|(u, b)| b.from_unit(*u)).collect()
    }
}

/// Time-varying boundary conditions, standardized per column, with the
/// fictitious standard-normal input prepended as column 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryConditions {
    matrix: DMatrix<f64>,
    names: Vec<String>,
    /// (mean, standard deviation) of each raw column before standardization.
    stats: Vec<(f64, f64)>,
    x0_seed: u64,
}

impl BoundaryConditions {
    /// Standardizes `raw` (N × S) and appends the fictitious input drawn from
    /// `x0_seed`. Constant columns become all-zero columns.
    pub fn standardize(raw: &DMatrix<f64>, names: Vec<String>, x0_seed: u64) -> Result<Self> {
        ensure_finite(raw.as_slice(), "boundary conditions")?;
        if raw.ncols() != names.len() {
            return Err(Error::InvalidInput("boundary names do not match columns".into()));
        }
        let n = raw.nrows();
        let mut matrix = DMatrix::zeros(n, raw.ncols() + 1);
        let mut rng = ChaCha8Rng::seed_from_u64(x0_seed);
        for i in 0..n {
            matrix[(i, 0)] = StandardNormal.sample(&mut rng);
        }
        let mut stats = Vec::with_capacity(raw.ncols());
        for s in 0..raw.ncols() {
            let col: Vec<f64> = raw.column(s).iter().copied().collect();
            let mean = col.iter().sum::<f64>() / n as f64;
            let sd = crate::linalg::population_variance(&col).sqrt();
            for i in 0..n {
                matrix[(i, s + 1)] = if sd > 0.0 { (col[i] - mean) / sd } else { 0.0 };
            }
            stats.push((mean, sd));
        }
        let mut all = Vec::with_capacity(names.len() + 1);
        all.push(FICTITIOUS_INPUT.to_string());
        all.extend(names);
        Ok(Self { matrix, names: all, stats, x0_seed })
    }

    /// N × (S+1) standardized matrix, column 0 the fictitious input.
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn stats(&self) -> &[(f64, f64)] {
        &self.stats
    }

    pub fn x0_seed(&self) -> u64 {
        self.x0_seed
    }

    pub fn len(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.matrix.nrows() == 0
    }
}

/// M model runs of an N-point output series with their design.
#[derive(Debug, Clone)]
pub struct SimulationEnsemble {
    outputs: DMatrix<f64>,
    design: ParameterDesign,
    boundary: BoundaryConditions,
}

impl SimulationEnsemble {
    pub fn new(outputs: DMatrix<f64>, design: ParameterDesign, boundary: BoundaryConditions) -> Result<Self> {
        ensure_finite(outputs.as_slice(), "simulation outputs")?;
        if outputs.ncols() < 2 {
            return Err(Error::InvalidInput("an ensemble needs at least two runs".into()));
        }
        if outputs.nrows() < 2 {
            return Err(Error::InvalidInput("output series need at least two points".into()));
        }
        if design.runs() != outputs.ncols() {
            return Err(Error::InvalidInput(format!(
                "{} runs in outputs but {} design rows",
                outputs.ncols(),
                design.runs()
            )));
        }
        if boundary.len() != outputs.nrows() {
            return Err(Error::InvalidInput(format!(
                "{} output points but {} boundary rows",
                outputs.nrows(),
                boundary.len()
            )));
        }
        Ok(Self { outputs, design, boundary })
    }

    /// N × M outputs, one column per run.
    pub fn outputs(&self) -> &DMatrix<f64> {
        &self.outputs
    }

    pub fn design(&self) -> &ParameterDesign {
        &self.design
    }

    pub fn boundary(&self) -> &BoundaryConditions {
        &self.boundary
    }

    pub fn points(&self) -> usize {
        self.outputs.nrows()
    }

    pub fn runs(&self) -> usize {
        self.outputs.ncols()
    }
}

/// Simulation basis `K`, optional complement `H`, and simulation weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisPair {
    k: DMatrix<f64>,
    h: Option<DMatrix<f64>>,
    weights: DMatrix<f64>,
    column_means: DVector<f64>,
    variance_explained: f64,
    singular_values: DVector<f64>,
}

impl BasisPair {
    /// N × Q basis; the last column is the ones vector.
    pub fn k(&self) -> &DMatrix<f64> {
        &self.k
    }

    pub fn h(&self) -> Option<&DMatrix<f64>> {
        self.h.as_ref()
    }

    /// Q × M simulation weights.
    pub fn weights(&self) -> &DMatrix<f64> {
        &self.weights
    }

    pub fn column_means(&self) -> &DVector<f64> {
        &self.column_means
    }

    pub fn variance_explained(&self) -> f64 {
        self.variance_explained
    }

    /// All singular values of the centred ensemble, descending.
    pub fn singular_values(&self) -> &DVector<f64> {
        &self.singular_values
    }

    pub fn q(&self) -> usize {
        self.k.ncols()
    }

    pub fn n(&self) -> usize {
        self.k.nrows()
    }

    /// `k_qᵀ k_q` for each column.
    pub fn k_norms2(&self) -> Vec<f64> {
        self.k.column_iter().map(|c| c.norm_squared()).collect()
    }

    /// Reassembles a basis from stored `K`, recomputing weights from `outputs`
    /// when given.
    pub fn from_k(k: DMatrix<f64>, outputs: Option<&DMatrix<f64>>) -> Result<Self> {
        ensure_finite(k.as_slice(), "basis")?;
        let weights = match outputs {
            Some(y) => project_weights(&k, y),
            None => DMatrix::zeros(k.ncols(), 0),
        };
        let q = k.ncols();
        let column_means = if weights.ncols() > 0 { weights.row(q - 1).transpose() } else { DVector::zeros(0) };
        Ok(Self {
            k,
            h: None,
            weights,
            column_means,
            variance_explained: f64::NAN,
            singular_values: DVector::zeros(0),
        })
    }

    /// Populates `H` (see [`build_complement_basis`]).
    pub fn with_complement(self) -> Result<Self> {
        build_complement_basis(self)
    }
}

fn project_weights(k: &DMatrix<f64>, y: &DMatrix<f64>) -> DMatrix<f64> {
    let mut w = k.transpose() * y;
    for (q, col) in k.column_iter().enumerate() {
        let nn = col.norm_squared();
        w.row_mut(q).scale_mut(1.0 / nn);
    }
    w
}

/// SVD basis of an N × M output matrix retaining `variance_fraction` of the
/// centred variance, followed by the all-ones column.
pub fn build_simulation_basis(outputs: &DMatrix<f64>, variance_fraction: f64) -> Result<BasisPair> {
    if !(variance_fraction > 0.0 && variance_fraction <= 1.0) {
        return Err(Error::InvalidInput(format!("variance fraction {variance_fraction} outside (0, 1]")));
    }
    ensure_finite(outputs.as_slice(), "simulation outputs")?;
    let (n, m) = outputs.shape();
    if m < 2 {
        return Err(Error::InvalidInput("an ensemble needs at least two runs".into()));
    }

    let column_means = DVector::from_iterator(m, outputs.column_iter().map(|c| c.mean()));
    let mut centred = outputs.clone();
    for (j, mut col) in centred.column_iter_mut().enumerate() {
        col.add_scalar_mut(-column_means[j]);
    }

    let svd = centred.svd(true, false);
    let u = svd.u.as_ref().expect("left singular vectors requested");
    // nalgebra does not guarantee ordering.
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|a, b| svd.singular_values[*b].total_cmp(&svd.singular_values[*a]));
    let s: Vec<f64> = order.iter().map(|&i| svd.singular_values[i]).collect();

    let total: f64 = s.iter().map(|v| v * v).sum();
    let s_max = s.first().copied().unwrap_or(0.0);
    let zero_tol = s_max * (n.max(m) as f64) * f64::EPSILON;

    let mut selected = 0usize;
    let mut captured = 0.0;
    if total > 0.0 {
        let target = variance_fraction * total * (1.0 - 1e-12);
        while selected < s.len() && captured < target {
            captured += s[selected] * s[selected];
            selected += 1;
        }
        // Equal singular values are taken together.
        let tie = 1e-12 * s_max;
        while selected > 0 && selected < s.len() && (s[selected] - s[selected - 1]).abs() <= tie {
            captured += s[selected] * s[selected];
            selected += 1;
        }
        if s[..selected].iter().any(|v| *v <= zero_tol) {
            return Err(Error::RankDeficient(format!(
                "reaching {variance_fraction} of the variance would select zero singular values"
            )));
        }
    }

    let q = selected + 1;
    let scale = 1.0 / (m as f64).sqrt();
    let mut k = DMatrix::zeros(n, q);
    for (c, &idx) in order.iter().take(selected).enumerate() {
        let mut col: Vec<f64> = u.column(idx).iter().map(|v| v * svd.singular_values[idx] * scale).collect();
        canonical_sign(&mut col);
        k.set_column(c, &DVector::from_vec(col));
    }
    k.set_column(q - 1, &DVector::from_element(n, 1.0));

    let weights = project_weights(&k, outputs);
    let variance_explained = if total > 0.0 { (captured / total).min(1.0) } else { 1.0 };

    Ok(BasisPair {
        k,
        h: None,
        weights,
        column_means,
        variance_explained,
        singular_values: DVector::from_vec(s),
    })
}

/// Orthogonal projector onto the complement of `span(K)`.
pub fn complement_projector(k: &DMatrix<f64>) -> DMatrix<f64> {
    let n = k.nrows();
    let mut p = DMatrix::identity(n, n);
    // Columns of K are mutually orthogonal, so (KᵀK)⁻¹ is diagonal.
    for col in k.column_iter() {
        let nn = col.norm_squared();
        p.ger(-1.0 / nn, &col, &col, 1.0);
    }
    p
}

/// `H`: orthonormal eigenvectors of the projector with eigenvalue one.
pub fn build_complement_basis(mut basis: BasisPair) -> Result<BasisPair> {
    let (n, q) = basis.k.shape();
    if q >= n {
        return Err(Error::NoComplement(n));
    }
    let p = complement_projector(&basis.k);
    let eig = SymmetricEigen::new(p);
    let keep: Vec<usize> = (0..n).filter(|&i| eig.eigenvalues[i] > 0.5).collect();
    if keep.len() != n - q {
        return Err(Error::Numerical(format!(
            "projector has {} unit eigenvalues, expected {}",
            keep.len(),
            n - q
        )));
    }
    let mut h = DMatrix::zeros(n, n - q);
    for (c, &i) in keep.iter().enumerate() {
        let mut col: Vec<f64> = eig.eigenvectors.column(i).iter().copied().collect();
        canonical_sign(&mut col);
        h.set_column(c, &DVector::from_vec(col));
    }
    basis.h = Some(h);
    Ok(basis)
}

/// Weights of `y` on `K` and coordinates of `y` on `H`.
pub fn project_observation(y: &DVector<f64>, basis: &BasisPair) -> Result<(DVector<f64>, DVector<f64>)> {
    ensure_finite(y.as_slice(), "observation")?;
    let h = basis
        .h
        .as_ref()
        .ok_or_else(|| Error::InvalidInput("complement basis not built".into()))?;
    if y.len() != basis.n() {
        return Err(Error::InvalidInput(format!("observation has {} points, basis {}", y.len(), basis.n())));
    }
    let mut w = basis.k.transpose() * y;
    for (q, col) in basis.k.column_iter().enumerate() {
        w[q] /= col.norm_squared();
    }
    let v = h.transpose() * y;
    Ok((w, v))
}
