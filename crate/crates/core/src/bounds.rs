//! Diamond-norm error bounds for Zeno dynamics under a finite measurement
//! rate, and a sampled numerical lower estimate.
//!
//! Convention: ‖Φ‖◊ is the unnormalized diamond norm, so two CPTP maps are at
//! most 2 apart. A sampled input ρ on system ⊗ ancilla gives the lower bound
//! ‖((A−B)⊗1)(ρ)‖₁ = 2·TD ≤ ‖A−B‖◊.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::device::RabiTransition;
use crate::lindblad::rabi_hamiltonian;
use crate::qcore::{hermitian_eigen, kron, trace_norm_hermitian, CMatrix, CVector, SpaceLayout, C64, ONE, ZERO};
use crate::sweep::SweepResult;
use crate::zeno::{ideal_gate_unitary, zeno_projector, ZenoError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BoundsError {
    #[error("map is not CPTP: {0}")]
    NotCptp(String),
    #[error("channel dimensions differ: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("dimension {0} exceeds the supported maximum of 6")]
    TooLarge(usize),
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Zeno(#[from] ZenoError),
}

/// ‖H‖∞ in rad/µs, Γ in 1/µs, t in µs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundInput {
    pub h_norm: f64,
    pub gamma: f64,
    pub t: f64,
}

impl BoundInput {
    /// ‖H‖∞ = Ω_R/2 and t = 2π/Ω_R, with Ω_R angular.
    pub fn gate(rabi: f64, gamma: f64) -> Self {
        Self {
            h_norm: rabi / 2.0,
            gamma,
            t: std::f64::consts::TAU / rabi,
        }
    }
}

/// (16‖H‖/Γ)(1 + t‖H‖ + (1 − e^{−tΓ/2})/2) + e^{−tΓ/2}
pub fn analytic_bound(input: &BoundInput) -> f64 {
    let BoundInput { h_norm, gamma, t } = *input;
    let decay = (-t * gamma / 2.0).exp();
    16.0 * h_norm / gamma * (1.0 + t * h_norm + (1.0 - decay) / 2.0) + decay
}

/// Gate form in terms of r = Ω_R/Γ: 8r(1 + π + (1 − e^{−π/r})/2) + e^{−π/r}.
pub fn gate_bound(ratio: f64) -> f64 {
    let pi = std::f64::consts::PI;
    let decay = (-pi / ratio).exp();
    8.0 * ratio * (1.0 + pi + (1.0 - decay) / 2.0) + decay
}

pub fn loosened_bound(ratio: f64) -> f64 {
    38.0 * ratio
}

/// Linear map on d×d matrices stored as its d²×d² matrix on column-stacked
/// vectors: vec(AXB) = (Bᵀ ⊗ A) vec(X).
#[derive(Debug, Clone, PartialEq)]
pub struct Channel {
    dim: usize,
    liouville: CMatrix,
}

fn vec_index(d: usize, r: usize, c: usize) -> usize {
    r + c * d
}

impl Channel {
    pub fn from_liouville(liouville: CMatrix) -> Result<Self, BoundsError> {
        let n = liouville.nrows();
        let d = (n as f64).sqrt().round() as usize;
        if d * d != n || liouville.ncols() != n {
            return Err(BoundsError::Invalid(format!("{n}×{} is not a superoperator", liouville.ncols())));
        }
        Ok(Self { dim: d, liouville })
    }

    pub fn identity(d: usize) -> Self {
        Self {
            dim: d,
            liouville: CMatrix::identity(d * d, d * d),
        }
    }

    /// ρ ↦ UρU†
    pub fn unitary(u: &CMatrix) -> Self {
        Self {
            dim: u.nrows(),
            liouville: kron(&u.conjugate(), u),
        }
    }

    /// ρ ↦ PρP + (1−P)ρ(1−P) for an orthogonal projector P.
    pub fn block_dephasing(p: &CMatrix) -> Self {
        let d = p.nrows();
        let q = CMatrix::identity(d, d) - p;
        Self {
            dim: d,
            liouville: kron(&p.conjugate(), p) + kron(&q.conjugate(), &q),
        }
    }

    /// Apply `self`, then `next`.
    pub fn then(&self, next: &Channel) -> Result<Self, BoundsError> {
        if self.dim != next.dim {
            return Err(BoundsError::DimensionMismatch(self.dim, next.dim));
        }
        Ok(Self {
            dim: self.dim,
            liouville: &next.liouville * &self.liouville,
        })
    }

    /// ρ ↦ (1−p)ρ + p·tr(ρ)·1/d
    pub fn depolarizing(d: usize, p: f64) -> Self {
        let mut l = CMatrix::identity(d * d, d * d) * C64::new(1.0 - p, 0.0);
        for i in 0..d {
            for j in 0..d {
                l[(vec_index(d, i, i), vec_index(d, j, j))] += C64::new(p / d as f64, 0.0);
            }
        }
        Self { dim: d, liouville: l }
    }

    /// exp(𝓛t) for dρ/dt = −i[H,ρ] + Σ 𝒟[L]ρ.
    pub fn lindblad(h: &CMatrix, ops: &[CMatrix], t: f64) -> Self {
        let d = h.nrows();
        let id = CMatrix::identity(d, d);
        let mut gen = (kron(&id, h) - kron(&h.transpose(), &id)) * C64::new(0.0, -1.0);
        for l in ops {
            let ll = l.adjoint() * l;
            gen += kron(&l.conjugate(), l) - (kron(&id, &ll) + kron(&ll.transpose(), &id)) * C64::new(0.5, 0.0);
        }
        Self {
            dim: d,
            liouville: (gen * C64::new(t, 0.0)).exp(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn liouville(&self) -> &CMatrix {
        &self.liouville
    }

    pub fn apply(&self, rho: &CMatrix) -> CMatrix {
        let d = self.dim;
        let v = CVector::from_iterator(d * d, rho.iter().copied());
        let out = &self.liouville * v;
        CMatrix::from_iterator(d, d, out.iter().copied())
    }

    /// Σ_ij |i⟩⟨j| ⊗ Φ(|i⟩⟨j|)
    pub fn choi(&self) -> CMatrix {
        let d = self.dim;
        let mut c = CMatrix::zeros(d * d, d * d);
        for i in 0..d {
            for j in 0..d {
                let col = vec_index(d, i, j);
                for k in 0..d {
                    for l in 0..d {
                        c[(i * d + k, j * d + l)] = self.liouville[(vec_index(d, k, l), col)];
                    }
                }
            }
        }
        c
    }

    pub fn check_cptp(&self, tol: f64) -> Result<(), BoundsError> {
        let d = self.dim;
        let c = self.choi();
        let herm = crate::qcore::hermiticity_defect(&c);
        if herm > tol {
            return Err(BoundsError::NotCptp(format!("Choi matrix not Hermitian ({herm:.3e})")));
        }
        let min = hermitian_eigen(&c).0[0];
        if min < -tol {
            return Err(BoundsError::NotCptp(format!("Choi eigenvalue {min:.3e} < 0")));
        }
        // tr_out Choi = 1
        for i in 0..d {
            for j in 0..d {
                let s: C64 = (0..d).map(|k| c[(i * d + k, j * d + k)]).sum();
                let want = if i == j { ONE } else { ZERO };
                if (s - want).norm() > tol {
                    return Err(BoundsError::NotCptp(format!("not trace preserving at ({i},{j})")));
                }
            }
        }
        Ok(())
    }

    pub fn sub(&self, other: &Channel) -> Result<CMatrix, BoundsError> {
        if self.dim != other.dim {
            return Err(BoundsError::DimensionMismatch(self.dim, other.dim));
        }
        Ok(&self.liouville - &other.liouville)
    }
}

/// (Φ ⊗ 1)(|ψ⟩⟨ψ|) for ψ on system ⊗ ancilla (system index major), Φ given
/// by its Liouville matrix.
fn apply_extended(liouville: &CMatrix, d: usize, psi: &CVector) -> CMatrix {
    // X[(i,a),(j,b)] = ψ_ia ψ*_jb; out[(k,a),(l,b)] = Σ_ij S[(k,l),(i,j)] X[(i,a),(j,b)]
    let mut out = CMatrix::zeros(d * d, d * d);
    for i in 0..d {
        for j in 0..d {
            let col = vec_index(d, i, j);
            for k in 0..d {
                for l in 0..d {
                    let s = liouville[(vec_index(d, k, l), col)];
                    if s == ZERO {
                        continue;
                    }
                    for a in 0..d {
                        let x = s * psi[i * d + a];
                        for b in 0..d {
                            out[(k * d + a, l * d + b)] += x * psi[j * d + b].conj();
                        }
                    }
                }
            }
        }
    }
    out
}

fn random_state(n: usize, rng: &mut ChaCha8Rng) -> CVector {
    let v = CVector::from_fn(n, |_, _| C64::new(rng.sample(StandardNormal), rng.sample(StandardNormal)));
    let norm = v.norm();
    v / C64::new(norm, 0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimateConfig {
    pub samples: usize,
    pub refine_steps: usize,
    pub seed: u64,
}

impl Default for EstimateConfig {
    fn default() -> Self {
        Self {
            samples: 512,
            refine_steps: 64,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LowerEstimate {
    /// max trace distance ½‖(A−B)⊗1(ρ)‖₁ over the sampled inputs
    pub trace_distance: f64,
    /// 2·trace_distance, a lower bound on ‖A−B‖◊
    pub diamond_lower: f64,
}

/// Max over Haar-random ancilla-extended pure inputs, then a seeded local
/// search around the best sample.
pub fn numeric_lower_estimate(a: &Channel, b: &Channel, cfg: &EstimateConfig) -> Result<LowerEstimate, BoundsError> {
    if a.dim() > 6 {
        return Err(BoundsError::TooLarge(a.dim()));
    }
    a.check_cptp(1e-9)?;
    b.check_cptp(1e-9)?;
    let diff = a.sub(b)?;
    let d = a.dim();
    let score = |psi: &CVector| 0.5 * trace_norm_hermitian(&apply_extended(&diff, d, psi));
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let inputs: Vec<CVector> = (0..cfg.samples.max(1)).map(|_| random_state(d * d, &mut rng)).collect();
    let scores: Vec<f64> = inputs.par_iter().map(score).collect();
    let (mut best_k, mut best) = (0, scores[0]);
    for (k, &s) in scores.iter().enumerate() {
        if s > best {
            best_k = k;
            best = s;
        }
    }
    let mut psi = inputs[best_k].clone();
    let mut step = 0.3;
    for _ in 0..cfg.refine_steps {
        let kick = random_state(d * d, &mut rng) * C64::new(step, 0.0);
        let cand = &psi + kick;
        let cand = &cand / C64::new(cand.norm(), 0.0);
        let s = score(&cand);
        if s > best {
            best = s;
            psi = cand;
        } else {
            step *= 0.9;
        }
    }
    Ok(LowerEstimate {
        trace_distance: best,
        diamond_lower: 2.0 * best,
    })
}

/// Eq.-2-type channel on qutrit ⊗ qubit over one gate period 2π/Ω_R: Rabi on
/// e↔f, measurement Γ𝒟[P] with P = 1 − |fe⟩⟨fe|. `rabi_mhz` cyclic, Γ in 1/µs.
pub fn measured_gate_channel(rabi_mhz: f64, gamma: f64) -> Result<Channel, BoundsError> {
    let layout = SpaceLayout::qutrit_qubit();
    let h = rabi_hamiltonian(&layout, rabi_mhz, RabiTransition::Ef).map_err(ZenoError::from)?;
    let p = zeno_projector(&layout)?;
    let op = p.matrix() * C64::new(gamma.sqrt(), 0.0);
    Ok(Channel::lindblad(h.matrix(), &[op], 1.0 / rabi_mhz))
}

/// Zeno limit e^{−itH_Z}∘𝒫₀, where 𝒫₀ removes coherences between the
/// subspace and its complement (the kernel of the measurement dissipator).
pub fn ideal_gate_channel(rabi_mhz: f64) -> Result<Channel, BoundsError> {
    let p = zeno_projector(&SpaceLayout::qutrit_qubit())?;
    Channel::block_dephasing(p.matrix()).then(&Channel::unitary(ideal_gate_unitary(rabi_mhz, 1)?.matrix()))
}

/// Rows (ratio, analytic, loosened, lower_estimate) with r = Ω_R/Γ in angular
/// units at Ω_R/2π = `rabi_mhz`; the estimate column is NaN when skipped.
pub fn bound_table(
    ratios: &[f64],
    rabi_mhz: f64,
    estimate: Option<&EstimateConfig>,
) -> Result<SweepResult, BoundsError> {
    let mut out = SweepResult::new(&["ratio", "analytic", "loosened", "lower_estimate"]);
    let ideal = ideal_gate_channel(rabi_mhz)?;
    for &r in ratios {
        if !(r > 0.0) {
            return Err(BoundsError::Invalid(format!("ratio must be > 0, got {r}")));
        }
        let lower = match estimate {
            Some(cfg) => {
                let gamma = crate::ang(rabi_mhz) / r;
                numeric_lower_estimate(&measured_gate_channel(rabi_mhz, gamma)?, &ideal, cfg)?.diamond_lower
            }
            None => f64::NAN,
        };
        out.push(vec![r.into(), gate_bound(r).into(), loosened_bound(r).into(), lower.into()]);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_form_values() {
        assert!((gate_bound(0.05) - 1.857).abs() < 1e-3);
        assert!((gate_bound(0.06) - 2.228).abs() < 1e-3);
        assert!((gate_bound(0.01) - 0.3713).abs() < 1e-3);
        let rabi = 2.0;
        for r in [0.01, 0.05, 0.3] {
            let g = analytic_bound(&BoundInput::gate(rabi, rabi / r));
            assert!((g - gate_bound(r)).abs() < 1e-12);
        }
    }

    #[test]
    fn bound_vanishes_for_strong_measurement() {
        let b = analytic_bound(&BoundInput::gate(1.0, 1e9));
        assert!(b < 1e-7);
        let mut prev = f64::INFINITY;
        for g in [1.0, 10.0, 100.0, 1000.0] {
            let v = analytic_bound(&BoundInput { h_norm: 0.5, gamma: g, t: 3.0 });
            assert!(v < prev);
            prev = v;
        }
    }

    #[test]
    fn loosened_dominates() {
        for k in 1..=100 {
            let r = 0.06 * k as f64 / 100.0;
            assert!(loosened_bound(r) >= gate_bound(r), "r = {r}");
        }
    }

    #[test]
    fn channel_constructions_are_cptp() {
        Channel::identity(3).check_cptp(1e-12).unwrap();
        Channel::depolarizing(2, 1.0).check_cptp(1e-12).unwrap();
        measured_gate_channel(1.0, 50.0).unwrap().check_cptp(1e-9).unwrap();
        ideal_gate_channel(1.0).unwrap().check_cptp(1e-9).unwrap();
        let bad = Channel::from_liouville(CMatrix::identity(4, 4) * C64::new(2.0, 0.0)).unwrap();
        assert!(matches!(bad.check_cptp(1e-9), Err(BoundsError::NotCptp(_))));
    }

    #[test]
    fn apply_matches_unitary_conjugation() {
        let u = ideal_gate_unitary(1.0, 1).unwrap().into_matrix();
        let ch = Channel::unitary(&u);
        let rho = CMatrix::from_fn(6, 6, |r, c| C64::new((r + c) as f64, r as f64 - c as f64));
        assert!((ch.apply(&rho) - &u * &rho * u.adjoint()).norm() < 1e-10);
    }

    #[test]
    fn zeno_limit_channel_matches_strong_measurement() {
        let ideal = ideal_gate_channel(1.0).unwrap();
        ideal.check_cptp(1e-9).unwrap();
        let strong = measured_gate_channel(1.0, crate::ang(1.0) / 1e-4).unwrap();
        let cfg = EstimateConfig { samples: 64, refine_steps: 8, seed: 3 };
        let e = numeric_lower_estimate(&strong, &ideal, &cfg).unwrap();
        assert!(e.diamond_lower < 0.01, "{}", e.diamond_lower);
    }

    #[test]
    fn block_dephasing_kills_cross_terms() {
        let mut p = CMatrix::zeros(2, 2);
        p[(0, 0)] = C64::new(1.0, 0.0);
        let rho = CMatrix::from_element(2, 2, C64::new(0.5, 0.0));
        let out = Channel::block_dephasing(&p).apply(&rho);
        assert!(out[(0, 1)].norm() < 1e-15 && (out[(1, 1)].re - 0.5).abs() < 1e-15);
    }

    #[test]
    fn identical_channels_estimate_zero() {
        let c = ideal_gate_channel(1.0).unwrap();
        let cfg = EstimateConfig { samples: 8, refine_steps: 4, seed: 1 };
        assert_eq!(numeric_lower_estimate(&c, &c, &cfg).unwrap().diamond_lower, 0.0);
    }

    #[test]
    fn depolarizing_estimate() {
        let cfg = EstimateConfig { samples: 256, refine_steps: 200, seed: 3 };
        let e = numeric_lower_estimate(&Channel::identity(2), &Channel::depolarizing(2, 1.0), &cfg).unwrap();
        // the exact value 0.75 is reached by a maximally entangled input
        assert!(e.trace_distance <= 0.75 + 1e-12);
        assert!(e.trace_distance > 0.70, "{}", e.trace_distance);
    }

    #[test]
    fn estimate_is_seed_deterministic() {
        let a = measured_gate_channel(1.0, 100.0).unwrap();
        let b = ideal_gate_channel(1.0).unwrap();
        let cfg = EstimateConfig { samples: 16, refine_steps: 8, seed: 9 };
        let x = numeric_lower_estimate(&a, &b, &cfg).unwrap();
        let y = numeric_lower_estimate(&a, &b, &cfg).unwrap();
        assert_eq!(x, y);
    }
}
