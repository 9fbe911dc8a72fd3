//! Dense complex linear algebra on composite Hilbert spaces.
//!
//! Index convention: row-major over factors, first factor most significant.
//! For a layout with dims `[d0, d1, d2]` the basis index of `(i0, i1, i2)` is
//! `(i0 * d1 + i1) * d2 + i2`.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type C64 = Complex64;
pub type CMatrix = DMatrix<C64>;
pub type CVector = DVector<C64>;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);
pub const I: C64 = C64::new(0.0, 1.0);

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QcoreError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("total dimension {dim} exceeds configured maximum {max}")]
    DimensionOverflow { dim: usize, max: usize },
    #[error("invalid factor index {index} for layout with {factors} factors")]
    InvalidFactor { index: usize, factors: usize },
    #[error("unknown label {label:?} for factor {factor:?}")]
    UnknownLabel { factor: String, label: String },
    #[error("expected {expected} labels, got {got}")]
    LabelCount { expected: usize, got: usize },
    #[error("empty factor selection")]
    EmptySelection,
    #[error("invalid layout: {0}")]
    InvalidLayout(String),
    #[error("invalid state: {0}")]
    InvalidState(String),
}

/// Default tolerances for state and operator invariants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    pub hermiticity: f64,
    pub trace: f64,
    pub positivity: f64,
    pub norm: f64,
    pub max_dim: usize,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            hermiticity: 1e-12,
            trace: 1e-10,
            positivity: 1e-10,
            norm: 1e-10,
            max_dim: 4096,
        }
    }
}

/// One tensor factor with its level labels.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Factor {
    pub name: String,
    pub labels: Vec<String>,
}

impl Factor {
    pub fn new(name: &str, labels: &[&str]) -> Self {
        Self {
            name: name.to_string(),
            labels: labels.iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.labels.len()
    }

    pub fn qutrit() -> Self {
        Self::new("qutrit", &["g", "e", "f"])
    }

    pub fn qubit() -> Self {
        Self::new("qubit", &["g", "e"])
    }

    /// Fock space truncated to `n` levels labelled `0..n`.
    pub fn cavity(n: usize) -> Self {
        Self {
            name: "cavity".to_string(),
            labels: (0..n).map(|k| k.to_string()).collect(),
        }
    }

    pub fn position(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }
}

/// Ordered tensor factorization of a Hilbert space.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SpaceLayout {
    factors: Vec<Factor>,
}

impl SpaceLayout {
    pub fn new(factors: Vec<Factor>) -> Result<Self, QcoreError> {
        if factors.is_empty() {
            return Err(QcoreError::InvalidLayout("no factors".into()));
        }
        if let Some(f) = factors.iter().find(|f| f.dim() == 0) {
            return Err(QcoreError::InvalidLayout(format!(
                "factor {:?} has no levels",
                f.name
            )));
        }
        Ok(Self { factors })
    }

    /// Single unnamed factor of dimension `d` with labels `0..d`.
    pub fn flat(d: usize) -> Self {
        Self {
            factors: vec![Factor {
                name: "space".into(),
                labels: (0..d).map(|k| k.to_string()).collect(),
            }],
        }
    }

    /// qutrit ⊗ qubit ⊗ cavity(n).
    pub fn device(n_fock: usize) -> Self {
        Self {
            factors: vec![Factor::qutrit(), Factor::qubit(), Factor::cavity(n_fock)],
        }
    }

    /// qutrit ⊗ qubit, the 6-dimensional tomography space.
    pub fn qutrit_qubit() -> Self {
        Self {
            factors: vec![Factor::qutrit(), Factor::qubit()],
        }
    }

    pub fn factors(&self) -> &[Factor] {
        &self.factors
    }

    pub fn factor(&self, k: usize) -> &Factor {
        &self.factors[k]
    }

    pub fn n_factors(&self) -> usize {
        self.factors.len()
    }

    pub fn dims(&self) -> Vec<usize> {
        self.factors.iter().map(Factor::dim).collect()
    }

    pub fn total_dim(&self) -> usize {
        self.factors.iter().map(Factor::dim).product()
    }

    pub fn factor_index(&self, name: &str) -> Option<usize> {
        self.factors.iter().position(|f| f.name == name)
    }

    /// Basis index of per-factor level positions.
    pub fn index_of_levels(&self, levels: &[usize]) -> Result<usize, QcoreError> {
        if levels.len() != self.factors.len() {
            return Err(QcoreError::LabelCount {
                expected: self.factors.len(),
                got: levels.len(),
            });
        }
        let mut idx = 0;
        for (f, &l) in self.factors.iter().zip(levels) {
            if l >= f.dim() {
                return Err(QcoreError::UnknownLabel {
                    factor: f.name.clone(),
                    label: l.to_string(),
                });
            }
            idx = idx * f.dim() + l;
        }
        Ok(idx)
    }

    /// Basis index of per-factor labels, e.g. `["f", "e", "0"]`.
    pub fn index_of(&self, labels: &[&str]) -> Result<usize, QcoreError> {
        if labels.len() != self.factors.len() {
            return Err(QcoreError::LabelCount {
                expected: self.factors.len(),
                got: labels.len(),
            });
        }
        let levels = self
            .factors
            .iter()
            .zip(labels)
            .map(|(f, l)| {
                f.position(l).ok_or_else(|| QcoreError::UnknownLabel {
                    factor: f.name.clone(),
                    label: l.to_string(),
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        self.index_of_levels(&levels)
    }

    /// Per-factor level positions of a basis index.
    pub fn levels_of(&self, mut index: usize) -> Vec<usize> {
        let mut out = vec![0; self.factors.len()];
        for (k, f) in self.factors.iter().enumerate().rev() {
            out[k] = index % f.dim();
            index /= f.dim();
        }
        out
    }

    pub fn labels_of(&self, index: usize) -> Vec<&str> {
        self.levels_of(index)
            .into_iter()
            .zip(&self.factors)
            .map(|(l, f)| f.labels[l].as_str())
            .collect()
    }

    /// Concatenated label like `"eg"` or `"fe|3"` for reports.
    pub fn basis_label(&self, index: usize) -> String {
        let labels = self.labels_of(index);
        let mut s = String::new();
        for (k, l) in labels.iter().enumerate() {
            if k > 0 && (l.len() > 1 || self.factors[k].name == "cavity") {
                s.push('|');
            }
            s.push_str(l);
        }
        s
    }

    pub fn concat(&self, other: &SpaceLayout) -> SpaceLayout {
        let mut factors = self.factors.clone();
        factors.extend(other.factors.iter().cloned());
        SpaceLayout { factors }
    }

    pub fn subset(&self, keep: &[usize]) -> Result<SpaceLayout, QcoreError> {
        if keep.is_empty() {
            return Err(QcoreError::EmptySelection);
        }
        let mut keep = keep.to_vec();
        keep.sort_unstable();
        keep.dedup();
        let factors = keep
            .iter()
            .map(|&k| {
                self.factors.get(k).cloned().ok_or(QcoreError::InvalidFactor {
                    index: k,
                    factors: self.factors.len(),
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(SpaceLayout { factors })
    }
}

/// Dense operator on a layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Operator {
    layout: SpaceLayout,
    matrix: CMatrix,
}

impl Operator {
    pub fn new(layout: SpaceLayout, matrix: CMatrix) -> Result<Self, QcoreError> {
        let d = layout.total_dim();
        if matrix.nrows() != d || matrix.ncols() != d {
            return Err(QcoreError::DimensionMismatch {
                expected: d,
                got: matrix.nrows().max(matrix.ncols()),
            });
        }
        Ok(Self { layout, matrix })
    }

    pub fn zeros(layout: &SpaceLayout) -> Self {
        let d = layout.total_dim();
        Self {
            layout: layout.clone(),
            matrix: CMatrix::zeros(d, d),
        }
    }

    pub fn identity(layout: &SpaceLayout) -> Self {
        let d = layout.total_dim();
        Self {
            layout: layout.clone(),
            matrix: CMatrix::identity(d, d),
        }
    }

    /// `|ket><bra|` between two basis indices.
    pub fn transition(layout: &SpaceLayout, ket: usize, bra: usize) -> Self {
        let mut op = Self::zeros(layout);
        op.matrix[(ket, bra)] = ONE;
        op
    }

    pub fn diagonal(layout: &SpaceLayout, diag: &[f64]) -> Result<Self, QcoreError> {
        let d = layout.total_dim();
        if diag.len() != d {
            return Err(QcoreError::DimensionMismatch {
                expected: d,
                got: diag.len(),
            });
        }
        let mut op = Self::zeros(layout);
        for (k, &v) in diag.iter().enumerate() {
            op.matrix[(k, k)] = C64::new(v, 0.0);
        }
        Ok(op)
    }

    /// Embed a single-factor matrix at factor `k`, identity elsewhere.
    pub fn embed(layout: &SpaceLayout, k: usize, local: &CMatrix) -> Result<Self, QcoreError> {
        let fac = layout.factors.get(k).ok_or(QcoreError::InvalidFactor {
            index: k,
            factors: layout.n_factors(),
        })?;
        if local.nrows() != fac.dim() || local.ncols() != fac.dim() {
            return Err(QcoreError::DimensionMismatch {
                expected: fac.dim(),
                got: local.nrows(),
            });
        }
        let dims = layout.dims();
        let left: usize = dims[..k].iter().product();
        let right: usize = dims[k + 1..].iter().product();
        let m = kron(
            &kron(&CMatrix::identity(left, left), local),
            &CMatrix::identity(right, right),
        );
        Ok(Self {
            layout: layout.clone(),
            matrix: m,
        })
    }

    pub fn layout(&self) -> &SpaceLayout {
        &self.layout
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    pub fn into_matrix(self) -> CMatrix {
        self.matrix
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn dagger(&self) -> Self {
        Self {
            layout: self.layout.clone(),
            matrix: self.matrix.adjoint(),
        }
    }

    pub fn scale(&self, c: C64) -> Self {
        Self {
            layout: self.layout.clone(),
            matrix: &self.matrix * c,
        }
    }

    pub fn add(&self, other: &Operator) -> Result<Self, QcoreError> {
        self.check_same(other)?;
        Ok(Self {
            layout: self.layout.clone(),
            matrix: &self.matrix + &other.matrix,
        })
    }

    pub fn sub(&self, other: &Operator) -> Result<Self, QcoreError> {
        self.check_same(other)?;
        Ok(Self {
            layout: self.layout.clone(),
            matrix: &self.matrix - &other.matrix,
        })
    }

    pub fn mul(&self, other: &Operator) -> Result<Self, QcoreError> {
        self.check_same(other)?;
        Ok(Self {
            layout: self.layout.clone(),
            matrix: &self.matrix * &other.matrix,
        })
    }

    pub fn commutator(&self, other: &Operator) -> Result<Self, QcoreError> {
        self.check_same(other)?;
        Ok(Self {
            layout: self.layout.clone(),
            matrix: &self.matrix * &other.matrix - &other.matrix * &self.matrix,
        })
    }

    fn check_same(&self, other: &Operator) -> Result<(), QcoreError> {
        if self.layout != other.layout {
            return Err(QcoreError::DimensionMismatch {
                expected: self.dim(),
                got: other.dim(),
            });
        }
        Ok(())
    }

    /// ‖A − A†‖_F / max(‖A‖_F, 1e-300).
    pub fn hermiticity_defect(&self) -> f64 {
        hermiticity_defect(&self.matrix)
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        self.hermiticity_defect() <= tol
    }

    /// Maximum absolute column sum; bounds the spectral norm of Hermitian operators.
    pub fn norm_one(&self) -> f64 {
        norm_one(&self.matrix)
    }

    pub fn frobenius(&self) -> f64 {
        self.matrix.norm()
    }

    pub fn trace(&self) -> C64 {
        self.matrix.trace()
    }
}

/// Kronecker product, first argument most significant.
pub fn kron(a: &CMatrix, b: &CMatrix) -> CMatrix {
    let (ar, ac) = a.shape();
    let (br, bc) = b.shape();
    let mut out = CMatrix::zeros(ar * br, ac * bc);
    for j in 0..ac {
        for i in 0..ar {
            let aij = a[(i, j)];
            if aij == ZERO {
                continue;
            }
            for q in 0..bc {
                for p in 0..br {
                    out[(i * br + p, j * bc + q)] = aij * b[(p, q)];
                }
            }
        }
    }
    out
}

pub fn kron_vec(a: &CVector, b: &CVector) -> CVector {
    let mut out = CVector::zeros(a.len() * b.len());
    for (i, ai) in a.iter().enumerate() {
        for (p, bp) in b.iter().enumerate() {
            out[i * b.len() + p] = ai * bp;
        }
    }
    out
}

pub fn hermiticity_defect(m: &CMatrix) -> f64 {
    let n = m.norm();
    if n == 0.0 {
        return 0.0;
    }
    (m - m.adjoint()).norm() / n
}

pub fn norm_one(m: &CMatrix) -> f64 {
    m.column_iter()
        .map(|c| c.iter().map(|z| z.norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Eigen-decomposition of a Hermitian matrix; eigenvalues ascending.
pub fn hermitian_eigen(m: &CMatrix) -> (Vec<f64>, CMatrix) {
    let sym = (m + m.adjoint()) * C64::new(0.5, 0.0);
    let eig = nalgebra::SymmetricEigen::new(sym);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let vals = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let mut vecs = CMatrix::zeros(m.nrows(), m.ncols());
    for (dst, &src) in order.iter().enumerate() {
        vecs.set_column(dst, &eig.eigenvectors.column(src));
    }
    (vals, vecs)
}

/// f(A) for Hermitian A through its eigen-decomposition.
pub fn hermitian_function(m: &CMatrix, f: impl Fn(f64) -> C64) -> CMatrix {
    let (vals, vecs) = hermitian_eigen(m);
    let mut scaled = vecs.clone();
    for (k, &v) in vals.iter().enumerate() {
        let c = f(v);
        for z in scaled.column_mut(k).iter_mut() {
            *z *= c;
        }
    }
    scaled * vecs.adjoint()
}

/// Trace norm ‖A‖₁ of a Hermitian matrix.
pub fn trace_norm_hermitian(m: &CMatrix) -> f64 {
    hermitian_eigen(m).0.iter().map(|v| v.abs()).sum()
}

pub fn trace_distance(a: &CMatrix, b: &CMatrix) -> f64 {
    0.5 * trace_norm_hermitian(&(a - b))
}

/// Pure or mixed state payload.
#[derive(Debug, Clone, PartialEq)]
pub enum StateData {
    Pure(CVector),
    Mixed(CMatrix),
}

/// State on a layout. Constructors enforce the validity invariants.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantumState {
    layout: SpaceLayout,
    data: StateData,
}

impl QuantumState {
    pub fn pure(layout: SpaceLayout, psi: CVector) -> Result<Self, QcoreError> {
        Self::pure_with(layout, psi, &Tolerances::default())
    }

    pub fn pure_with(
        layout: SpaceLayout,
        psi: CVector,
        tol: &Tolerances,
    ) -> Result<Self, QcoreError> {
        check_dim(&layout, psi.len())?;
        let s = Self {
            layout,
            data: StateData::Pure(psi),
        };
        let d = s.validate_with(tol);
        if d.is_valid() {
            Ok(s)
        } else {
            Err(QcoreError::InvalidState(d.summary()))
        }
    }

    /// Pure state after normalizing `psi`.
    pub fn pure_normalized(layout: SpaceLayout, psi: CVector) -> Result<Self, QcoreError> {
        let n = psi.norm();
        if n == 0.0 {
            return Err(QcoreError::InvalidState("zero vector".into()));
        }
        Self::pure(layout, psi / C64::new(n, 0.0))
    }

    pub fn mixed(layout: SpaceLayout, rho: CMatrix) -> Result<Self, QcoreError> {
        Self::mixed_with(layout, rho, &Tolerances::default())
    }

    pub fn mixed_with(
        layout: SpaceLayout,
        rho: CMatrix,
        tol: &Tolerances,
    ) -> Result<Self, QcoreError> {
        check_dim(&layout, rho.nrows())?;
        let s = Self {
            layout,
            data: StateData::Mixed(rho),
        };
        let d = s.validate_with(tol);
        if d.is_valid() {
            Ok(s)
        } else {
            Err(QcoreError::InvalidState(d.summary()))
        }
    }

    /// Skip invariant checks; used for intermediate integrator output and
    /// deliberately invalid inputs to `validate`.
    pub fn mixed_unchecked(layout: SpaceLayout, rho: CMatrix) -> Self {
        Self {
            layout,
            data: StateData::Mixed(rho),
        }
    }

    pub fn pure_unchecked(layout: SpaceLayout, psi: CVector) -> Self {
        Self {
            layout,
            data: StateData::Pure(psi),
        }
    }

    pub fn maximally_mixed(layout: &SpaceLayout) -> Self {
        let d = layout.total_dim();
        Self {
            layout: layout.clone(),
            data: StateData::Mixed(CMatrix::identity(d, d) / C64::new(d as f64, 0.0)),
        }
    }

    pub fn layout(&self) -> &SpaceLayout {
        &self.layout
    }

    pub fn data(&self) -> &StateData {
        &self.data
    }

    pub fn is_pure(&self) -> bool {
        matches!(self.data, StateData::Pure(_))
    }

    pub fn dim(&self) -> usize {
        self.layout.total_dim()
    }

    pub fn ket(&self) -> Option<&CVector> {
        match &self.data {
            StateData::Pure(v) => Some(v),
            StateData::Mixed(_) => None,
        }
    }

    pub fn density_matrix(&self) -> CMatrix {
        match &self.data {
            StateData::Pure(v) => v * v.adjoint(),
            StateData::Mixed(m) => m.clone(),
        }
    }

    pub fn to_mixed(&self) -> QuantumState {
        QuantumState {
            layout: self.layout.clone(),
            data: StateData::Mixed(self.density_matrix()),
        }
    }

    pub fn purity(&self) -> f64 {
        match &self.data {
            StateData::Pure(v) => v.norm_squared().powi(2),
            StateData::Mixed(m) => (m * m).trace().re,
        }
    }

    /// ⟨O⟩ = tr(ρ O).
    pub fn expectation(&self, op: &Operator) -> Result<C64, QcoreError> {
        if op.layout() != &self.layout {
            return Err(QcoreError::DimensionMismatch {
                expected: self.dim(),
                got: op.dim(),
            });
        }
        Ok(match &self.data {
            StateData::Pure(v) => (v.adjoint() * op.matrix() * v)[(0, 0)],
            StateData::Mixed(m) => (m * op.matrix()).trace(),
        })
    }

    pub fn validate(&self) -> Diagnostics {
        self.validate_with(&Tolerances::default())
    }

    pub fn validate_with(&self, tol: &Tolerances) -> Diagnostics {
        validate_with(self, tol)
    }
}

fn check_dim(layout: &SpaceLayout, got: usize) -> Result<(), QcoreError> {
    let expected = layout.total_dim();
    if expected != got {
        return Err(QcoreError::DimensionMismatch { expected, got });
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Violation {
    Norm,
    Hermiticity,
    Trace,
    Positivity,
}

/// Validity report for a state; never fails.
#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostics {
    pub norm_defect: f64,
    pub hermiticity_defect: f64,
    pub trace_defect: f64,
    pub min_eigenvalue: f64,
    pub violations: Vec<Violation>,
}

impl Diagnostics {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn summary(&self) -> String {
        format!(
            "violations {:?} (norm defect {:.3e}, hermiticity {:.3e}, trace {:.3e}, min eigenvalue {:.3e})",
            self.violations,
            self.norm_defect,
            self.hermiticity_defect,
            self.trace_defect,
            self.min_eigenvalue
        )
    }
}

pub fn validate(state: &QuantumState) -> Diagnostics {
    validate_with(state, &Tolerances::default())
}

pub fn validate_with(state: &QuantumState, tol: &Tolerances) -> Diagnostics {
    let mut violations = Vec::new();
    match &state.data {
        StateData::Pure(v) => {
            let norm_defect = (v.norm() - 1.0).abs();
            if !(norm_defect <= tol.norm) {
                violations.push(Violation::Norm);
            }
            Diagnostics {
                norm_defect,
                hermiticity_defect: 0.0,
                trace_defect: (v.norm_squared() - 1.0).abs(),
                min_eigenvalue: 0.0,
                violations,
            }
        }
        StateData::Mixed(m) => {
            let herm = hermiticity_defect(m);
            let tr = m.trace();
            let trace_defect = (tr - ONE).norm();
            let min_eig = hermitian_eigen(m).0.first().copied().unwrap_or(0.0);
            if !(herm <= tol.hermiticity) {
                violations.push(Violation::Hermiticity);
            }
            if !(trace_defect <= tol.trace) {
                violations.push(Violation::Trace);
            }
            if !(min_eig >= -tol.positivity) {
                violations.push(Violation::Positivity);
            }
            Diagnostics {
                norm_defect: 0.0,
                hermiticity_defect: herm,
                trace_defect,
                min_eigenvalue: min_eig,
                violations,
            }
        }
    }
}

/// Values that can be combined with ⊗.
pub trait Tensor: Sized {
    fn layout(&self) -> &SpaceLayout;
    fn tensor_unchecked(&self, other: &Self) -> Self;
}

impl Tensor for Operator {
    fn layout(&self) -> &SpaceLayout {
        &self.layout
    }

    fn tensor_unchecked(&self, other: &Self) -> Self {
        Operator {
            layout: self.layout.concat(&other.layout),
            matrix: kron(&self.matrix, &other.matrix),
        }
    }
}

impl Tensor for QuantumState {
    fn layout(&self) -> &SpaceLayout {
        &self.layout
    }

    fn tensor_unchecked(&self, other: &Self) -> Self {
        let layout = self.layout.concat(&other.layout);
        let data = match (&self.data, &other.data) {
            (StateData::Pure(a), StateData::Pure(b)) => StateData::Pure(kron_vec(a, b)),
            _ => StateData::Mixed(kron(&self.density_matrix(), &other.density_matrix())),
        };
        QuantumState { layout, data }
    }
}

/// Kronecker product with factor order `a` then `b`.
pub fn tensor_product<T: Tensor>(a: &T, b: &T) -> Result<T, QcoreError> {
    tensor_product_with(a, b, &Tolerances::default())
}

pub fn tensor_product_with<T: Tensor>(a: &T, b: &T, tol: &Tolerances) -> Result<T, QcoreError> {
    let dim = a.layout().total_dim().saturating_mul(b.layout().total_dim());
    if dim > tol.max_dim {
        return Err(QcoreError::DimensionOverflow {
            dim,
            max: tol.max_dim,
        });
    }
    Ok(a.tensor_unchecked(b))
}

/// Reduced density matrix over the kept factors (kept in layout order).
pub fn partial_trace(state: &QuantumState, keep: &[usize]) -> Result<QuantumState, QcoreError> {
    let layout = state.layout();
    let kept_layout = layout.subset(keep)?;
    let mut keep_mask = vec![false; layout.n_factors()];
    for &k in keep {
        keep_mask[k] = true;
    }
    let dims = layout.dims();
    let dk = kept_layout.total_dim();
    let dt: usize = dims
        .iter()
        .zip(&keep_mask)
        .filter(|(_, &m)| !m)
        .map(|(d, _)| *d)
        .product();
    // groups[t] = [(full index, kept index)] sharing traced index t
    let mut groups: Vec<Vec<(usize, usize)>> = vec![Vec::with_capacity(dk); dt];
    for full in 0..layout.total_dim() {
        let levels = layout.levels_of(full);
        let (mut ki, mut ti) = (0usize, 0usize);
        for (f, &l) in levels.iter().enumerate() {
            if keep_mask[f] {
                ki = ki * dims[f] + l;
            } else {
                ti = ti * dims[f] + l;
            }
        }
        groups[ti].push((full, ki));
    }
    let mut out = CMatrix::zeros(dk, dk);
    match state.data() {
        StateData::Pure(v) => {
            for g in &groups {
                for &(c, kc) in g {
                    let vc = v[c].conj();
                    if vc == ZERO {
                        continue;
                    }
                    for &(r, kr) in g {
                        out[(kr, kc)] += v[r] * vc;
                    }
                }
            }
        }
        StateData::Mixed(m) => {
            for g in &groups {
                for &(c, kc) in g {
                    for &(r, kr) in g {
                        out[(kr, kc)] += m[(r, c)];
                    }
                }
            }
        }
    }
    Ok(QuantumState::mixed_unchecked(kept_layout, out))
}

/// Unit computational basis vector for per-factor labels.
pub fn basis_state(layout: &SpaceLayout, labels: &[&str]) -> Result<QuantumState, QcoreError> {
    let idx = layout.index_of(labels)?;
    let mut v = CVector::zeros(layout.total_dim());
    v[idx] = ONE;
    Ok(QuantumState::pure_unchecked(layout.clone(), v))
}

/// Product of per-factor amplitude vectors (each normalized independently).
pub fn product_state(layout: &SpaceLayout, amplitudes: &[Vec<C64>]) -> Result<QuantumState, QcoreError> {
    if amplitudes.len() != layout.n_factors() {
        return Err(QcoreError::LabelCount {
            expected: layout.n_factors(),
            got: amplitudes.len(),
        });
    }
    let mut psi = CVector::from_element(1, ONE);
    for (f, amp) in layout.factors().iter().zip(amplitudes) {
        if amp.len() != f.dim() {
            return Err(QcoreError::DimensionMismatch {
                expected: f.dim(),
                got: amp.len(),
            });
        }
        let local = CVector::from_column_slice(amp);
        let n = local.norm();
        if n == 0.0 {
            return Err(QcoreError::InvalidState(format!("zero amplitude on {}", f.name)));
        }
        psi = kron_vec(&psi, &(local / C64::new(n, 0.0)));
    }
    QuantumState::pure(layout.clone(), psi)
}

/// (|g⟩ + |e⟩)/√2 on a factor whose first two labels are g, e; zero elsewhere.
pub fn plus_amplitudes(factor: &Factor) -> Vec<C64> {
    factor
        .labels
        .iter()
        .map(|l| if l == "g" || l == "e" { ONE } else { ZERO })
        .collect()
}
