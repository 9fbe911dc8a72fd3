//! Fidelity, Wootters concurrence, populations and the computational subspace.

use thiserror::Error;

use crate::qcore::{
    hermitian_function, CMatrix, QuantumState, SpaceLayout, Tolerances, C64, ONE, ZERO,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("target state must be pure")]
    MixedTarget,
    #[error("layouts differ: {0}")]
    LayoutMismatch(String),
    #[error("no weight in the computational subspace")]
    ZeroWeight,
    #[error("invalid density matrix: {0}")]
    Invalid(String),
}

/// ⟨t|ρ|t⟩ for a pure target.
pub fn state_fidelity(rho: &QuantumState, target: &QuantumState) -> Result<f64, MetricsError> {
    let t = target.ket().ok_or(MetricsError::MixedTarget)?;
    if rho.layout().dims() != target.layout().dims() {
        return Err(MetricsError::LayoutMismatch(format!(
            "{:?} vs {:?}",
            rho.layout().dims(),
            target.layout().dims()
        )));
    }
    let v = match rho.ket() {
        Some(psi) => (t.adjoint() * psi)[(0, 0)].norm_sqr(),
        None => (t.adjoint() * rho.density_matrix() * t)[(0, 0)].re,
    };
    Ok(v.clamp(0.0, 1.0))
}

/// Renormalized two-qubit state over (gg, ge, eg, ee).
#[derive(Debug, Clone, PartialEq)]
pub struct ComputationalState {
    pub matrix: CMatrix,
    pub subspace_weight: f64,
}

impl ComputationalState {
    pub fn new(matrix: CMatrix) -> Result<Self, MetricsError> {
        if matrix.shape() != (4, 4) {
            return Err(MetricsError::Invalid(format!("expected 4×4, got {:?}", matrix.shape())));
        }
        let w = matrix.trace().re;
        if !(w > 0.0) {
            return Err(MetricsError::ZeroWeight);
        }
        Ok(Self {
            matrix: matrix / C64::new(w, 0.0),
            subspace_weight: w,
        })
    }

    pub fn to_state(&self) -> QuantumState {
        QuantumState::mixed_unchecked(two_qubit_layout(), self.matrix.clone())
    }
}

pub fn two_qubit_layout() -> SpaceLayout {
    SpaceLayout::new(vec![
        crate::qcore::Factor::new("qutrit", &["g", "e"]),
        crate::qcore::Factor::qubit(),
    ])
    .expect("static layout")
}

/// Drop qutrit |f⟩ rows and columns of a qutrit ⊗ qubit state and renormalize.
pub fn computational_projection(rho: &QuantumState) -> Result<ComputationalState, MetricsError> {
    let layout = rho.layout();
    if layout.n_factors() != 2 || layout.factor(1).dim() != 2 {
        return Err(MetricsError::LayoutMismatch(format!(
            "expected qutrit ⊗ qubit, got {:?}",
            layout.dims()
        )));
    }
    let idx: Vec<usize> = ["g", "e"]
        .iter()
        .flat_map(|q| ["g", "e"].map(|b| layout.index_of(&[q, b])))
        .collect::<Result<_, _>>()
        .map_err(|e| MetricsError::LayoutMismatch(e.to_string()))?;
    let m = rho.density_matrix();
    let sub = CMatrix::from_fn(4, 4, |r, c| m[(idx[r], idx[c])]);
    ComputationalState::new(sub)
}

fn sigma_yy() -> CMatrix {
    let y = CMatrix::from_row_slice(2, 2, &[ZERO, -C64::i(), C64::i(), ZERO]);
    crate::qcore::kron(&y, &y)
}

/// Wootters concurrence of a 4×4 density matrix.
pub fn concurrence_matrix(rho: &CMatrix) -> Result<f64, MetricsError> {
    let tol = Tolerances {
        hermiticity: 1e-9,
        trace: 1e-9,
        positivity: 1e-9,
        ..Default::default()
    };
    QuantumState::mixed_with(two_qubit_layout(), rho.clone(), &tol)
        .map_err(|e| MetricsError::Invalid(e.to_string()))?;
    // λ² are the eigenvalues of √ρ ρ̃ √ρ = A A† with A = √ρ (σy⊗σy) √ρ*
    let sqrt_rho = hermitian_function(rho, |x| C64::new(x.max(0.0).sqrt(), 0.0));
    let a = &sqrt_rho * sigma_yy() * sqrt_rho.conjugate();
    let mut lam: Vec<f64> = a.singular_values().iter().copied().collect();
    lam.sort_by(|a, b| b.total_cmp(a));
    Ok((lam[0] - lam[1] - lam[2] - lam[3]).max(0.0))
}

pub fn concurrence(comp: &ComputationalState) -> Result<f64, MetricsError> {
    concurrence_matrix(&comp.matrix)
}

/// Diagonal of ρ labelled by concatenated basis labels, in basis order.
pub fn populations(rho: &QuantumState) -> Vec<(String, f64)> {
    let layout = rho.layout();
    let m = rho.density_matrix();
    (0..layout.total_dim())
        .map(|k| (layout.basis_label(k), m[(k, k)].re))
        .collect()
}

pub fn population(rho: &QuantumState, labels: &[&str]) -> Option<f64> {
    let k = rho.layout().index_of(labels).ok()?;
    Some(match rho.ket() {
        Some(v) => v[k].norm_sqr(),
        None => rho.density_matrix()[(k, k)].re,
    })
}

pub fn purity(rho: &QuantumState) -> f64 {
    rho.purity()
}

/// (|gg⟩ + |ge⟩ − |eg⟩ + |ee⟩)/2 on the qutrit ⊗ qubit space.
pub fn gate_target(layout: &SpaceLayout) -> Result<QuantumState, MetricsError> {
    let mut v = crate::qcore::CVector::zeros(layout.total_dim());
    for (q, b, s) in [("g", "g", 1.0), ("g", "e", 1.0), ("e", "g", -1.0), ("e", "e", 1.0)] {
        let k = layout
            .index_of(&[q, b])
            .map_err(|e| MetricsError::LayoutMismatch(e.to_string()))?;
        v[k] = ONE * (0.5 * s);
    }
    QuantumState::pure(layout.clone(), v).map_err(|e| MetricsError::Invalid(e.to_string()))
}
