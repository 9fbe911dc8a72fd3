//! Time-dependent GKLS master equations and the ideal Zeno generator.
//!
//! dρ/dt = −i[H(t), ρ] + Σ_k (L_k ρ L_k† − ½{L_k†L_k, ρ})
//!
//! Integration is fixed-step RK4 in the interaction picture of the static
//! diagonal of H. The step bound ‖V‖·dt ≤ `step_limit` applies to the
//! remaining (modulated) part V, measured as Σ|amp|·‖op‖₁ which bounds
//! max_t ‖V(t)‖.

use thiserror::Error;

use crate::device::RabiTransition;
use crate::kernel::{hermitize, Compiled, Rk4};
use crate::qcore::{
    hermitian_eigen, CMatrix, Operator, QuantumState, SpaceLayout, C64, I, ONE,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("step size {dt} µs gives ‖V‖·dt = {value:.4} above the limit {limit}")]
    StepSize { dt: f64, value: f64, limit: f64 },
    #[error("step size {dt} µs is unstable for the dissipator (rate·dt = {value:.3})")]
    Stiff { dt: f64, value: f64 },
    #[error("positivity lost at t = {time} µs: minimum eigenvalue {min_eigenvalue:.3e}")]
    Positivity { time: f64, min_eigenvalue: f64 },
    #[error("invalid problem: {0}")]
    Invalid(String),
}

/// One modulated Hamiltonian term `amp · e^{i freq t} · op`.
#[derive(Debug, Clone, PartialEq)]
pub struct Modulated {
    pub op: CMatrix,
    pub amp: C64,
    pub freq: f64,
}

impl Modulated {
    pub fn new(op: CMatrix, amp: C64, freq: f64) -> Self {
        Self { op, amp, freq }
    }
}

/// H(t) = diag(d) + Σ_k amp_k e^{i w_k t} op_k, rad/µs. The caller keeps the
/// sum Hermitian by supplying conjugate term pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct Hamiltonian {
    layout: SpaceLayout,
    diag: Vec<f64>,
    terms: Vec<Modulated>,
}

impl Hamiltonian {
    pub fn new(layout: SpaceLayout, diag: Vec<f64>, terms: Vec<Modulated>) -> Self {
        assert_eq!(diag.len(), layout.total_dim(), "diagonal length");
        Self {
            layout,
            diag,
            terms,
        }
    }

    /// Static Hamiltonian: real diagonal kept exact, the rest as one term.
    pub fn from_operator(op: &Operator) -> Self {
        let m = op.matrix();
        let d = m.nrows();
        let diag: Vec<f64> = (0..d).map(|k| m[(k, k)].re).collect();
        let mut off = m.clone();
        for k in 0..d {
            off[(k, k)] -= C64::new(diag[k], 0.0);
        }
        let terms = if off.iter().any(|z| z.norm() > 0.0) {
            vec![Modulated::new(off, ONE, 0.0)]
        } else {
            Vec::new()
        };
        Self::new(op.layout().clone(), diag, terms)
    }

    pub fn zero(layout: &SpaceLayout) -> Self {
        Self::new(layout.clone(), vec![0.0; layout.total_dim()], Vec::new())
    }

    pub fn layout(&self) -> &SpaceLayout {
        &self.layout
    }

    pub fn diag(&self) -> &[f64] {
        &self.diag
    }

    pub fn terms(&self) -> &[Modulated] {
        &self.terms
    }

    pub fn at(&self, t: f64) -> Operator {
        let d = self.diag.len();
        let mut m = CMatrix::from_fn(d, d, |r, c| {
            if r == c {
                C64::new(self.diag[r], 0.0)
            } else {
                C64::new(0.0, 0.0)
            }
        });
        for term in &self.terms {
            let c = term.amp * (I * term.freq * t).exp();
            m += &term.op * c;
        }
        Operator::new(self.layout.clone(), m).expect("layout dim")
    }

    /// Σ|amp|·‖op‖₁, an upper bound of ‖H(t) − diag‖ for every t.
    pub fn modulated_norm(&self) -> f64 {
        self.terms
            .iter()
            .map(|t| t.amp.norm() * crate::qcore::norm_one(&t.op))
            .sum()
    }
}

#[derive(Debug, Clone)]
pub struct EvolutionProblem {
    pub hamiltonian: Hamiltonian,
    pub collapse_ops: Vec<Operator>,
    pub initial: QuantumState,
    pub t_span: (f64, f64),
    pub dt: f64,
    pub sample_times: Vec<f64>,
    /// bound on ‖V‖·dt (rad)
    pub step_limit: f64,
    /// abort when the minimum eigenvalue at a sample falls below −threshold
    pub positivity_threshold: f64,
}

pub const DEFAULT_DT: f64 = 1e-3;
pub const DEFAULT_STEP_LIMIT: f64 = 0.05;
/// bound on (dissipative rate)·dt for RK4 stability
const STIFF_LIMIT: f64 = 1.0;

impl EvolutionProblem {
    /// Problem with the largest admissible step not above 1 ns.
    pub fn new(
        hamiltonian: Hamiltonian,
        collapse_ops: Vec<Operator>,
        initial: QuantumState,
        t_span: (f64, f64),
        sample_times: Vec<f64>,
    ) -> Self {
        let dt = auto_dt(&hamiltonian, &collapse_ops, DEFAULT_DT, DEFAULT_STEP_LIMIT);
        Self {
            hamiltonian,
            collapse_ops,
            initial,
            t_span,
            dt,
            sample_times,
            step_limit: DEFAULT_STEP_LIMIT,
            positivity_threshold: 1e-6,
        }
    }

    /// `n` equally spaced samples over the span including both ends.
    pub fn uniform_samples(t_span: (f64, f64), n: usize) -> Vec<f64> {
        if n <= 1 {
            return vec![t_span.1];
        }
        (0..n)
            .map(|k| t_span.0 + (t_span.1 - t_span.0) * k as f64 / (n - 1) as f64)
            .collect()
    }

    pub fn validate(&self) -> Result<(), SolverError> {
        let d = self.hamiltonian.layout().total_dim();
        if self.initial.layout() != self.hamiltonian.layout() {
            return Err(SolverError::Invalid("initial state layout differs from H".into()));
        }
        if let Some(l) = self.collapse_ops.iter().find(|l| l.layout() != self.hamiltonian.layout()) {
            return Err(SolverError::Invalid(format!(
                "collapse operator of dimension {} on a {d}-dimensional problem",
                l.dim()
            )));
        }
        if !(self.dt > 0.0) {
            return Err(SolverError::Invalid(format!("dt must be > 0, got {}", self.dt)));
        }
        let (t0, t1) = self.t_span;
        if !(t1 >= t0) {
            return Err(SolverError::Invalid(format!("empty time span ({t0}, {t1})")));
        }
        let mut prev = t0;
        for &s in &self.sample_times {
            if s < prev - 1e-12 || s > t1 + 1e-12 {
                return Err(SolverError::Invalid(format!(
                    "sample time {s} outside span or not ascending"
                )));
            }
            prev = s;
        }
        let value = self.hamiltonian.modulated_norm() * self.dt;
        if value > self.step_limit * (1.0 + 1e-12) {
            return Err(SolverError::StepSize {
                dt: self.dt,
                value,
                limit: self.step_limit,
            });
        }
        Ok(())
    }

    pub(crate) fn compile(&self) -> Compiled {
        let ops: Vec<CMatrix> = self.collapse_ops.iter().map(|l| l.matrix().clone()).collect();
        Compiled::new(&self.hamiltonian, &ops)
    }
}

/// Largest step ≤ `max_dt` meeting `step_limit` and RK4 stability.
pub fn auto_dt(h: &Hamiltonian, collapse_ops: &[Operator], max_dt: f64, step_limit: f64) -> f64 {
    let ops: Vec<CMatrix> = collapse_ops.iter().map(|l| l.matrix().clone()).collect();
    let c = Compiled::new(h, &ops);
    let mut dt = max_dt;
    if c.h_norm > 0.0 {
        dt = dt.min(step_limit / c.h_norm);
    }
    if c.diss_norm > 0.0 {
        dt = dt.min(0.5 * STIFF_LIMIT / c.diss_norm);
    }
    dt
}

/// Number of uniform steps covering `span` with steps no larger than `dt`.
pub(crate) fn n_steps(span: f64, dt: f64) -> usize {
    if span <= 0.0 {
        return 0;
    }
    ((span / dt) * (1.0 - 1e-12)).ceil().max(1.0) as usize
}

/// ρ(t) at every sample time.
pub fn evolve_master(problem: &EvolutionProblem) -> Result<Vec<QuantumState>, SolverError> {
    problem.validate()?;
    let comp = problem.compile();
    if comp.diss_norm * problem.dt > STIFF_LIMIT {
        return Err(SolverError::Stiff {
            dt: problem.dt,
            value: comp.diss_norm * problem.dt,
        });
    }
    let d = comp.d;
    let layout = problem.hamiltonian.layout().clone();
    let mut t = problem.t_span.0;
    let mut rho = comp.to_interaction(&problem.initial.density_matrix(), t);
    let mut rk = Rk4::new(d * d);
    let mut scratch = comp.scratch();
    let mut out = Vec::with_capacity(problem.sample_times.len());
    for &s in &problem.sample_times {
        let n = n_steps(s - t, problem.dt);
        let h = if n > 0 { (s - t) / n as f64 } else { 0.0 };
        let start = t;
        for k in 0..n {
            let tk = start + h * k as f64;
            rk.step(tk, h, &mut rho, |tt, y, dy| comp.master_rhs(tt, y, dy, &mut scratch));
            hermitize(&mut rho, d);
        }
        t = s;
        let m = comp.to_lab(&rho, t);
        let min_eig = hermitian_eigen(&m).0[0];
        if min_eig < -problem.positivity_threshold {
            return Err(SolverError::Positivity {
                time: t,
                min_eigenvalue: min_eig,
            });
        }
        out.push(QuantumState::mixed_unchecked(layout.clone(), m));
    }
    Ok(out)
}

/// 1 − Σ|x⟩⟨x| over the listed basis states.
pub fn exclusion_projector(layout: &SpaceLayout, excluded: &[&[&str]]) -> Result<Operator, SolverError> {
    let mut p = Operator::identity(layout).into_matrix();
    for labels in excluded {
        let k = layout
            .index_of(labels)
            .map_err(|e| SolverError::Invalid(e.to_string()))?;
        p[(k, k)] = C64::new(0.0, 0.0);
    }
    Ok(Operator::new(layout.clone(), p).expect("layout dim"))
}

/// i(Ω/2)(|lo⟩⟨hi| − |hi⟩⟨lo|) on the qutrit factor (first factor), rad/µs.
pub fn rabi_hamiltonian(layout: &SpaceLayout, rabi_mhz: f64, transition: RabiTransition) -> Result<Operator, SolverError> {
    let q = layout
        .factor_index("qutrit")
        .ok_or_else(|| SolverError::Invalid("layout has no qutrit factor".into()))?;
    let fac = layout.factor(q);
    let (lo, hi) = match transition {
        RabiTransition::Ef => ("e", "f"),
        RabiTransition::Ge => ("g", "e"),
    };
    let (Some(l), Some(h)) = (fac.position(lo), fac.position(hi)) else {
        return Err(SolverError::Invalid(format!("qutrit lacks levels {lo},{hi}")));
    };
    let om = crate::ang(rabi_mhz);
    let mut local = CMatrix::zeros(fac.dim(), fac.dim());
    local[(l, h)] = I * (0.5 * om);
    local[(h, l)] = -I * (0.5 * om);
    Operator::embed(layout, q, &local).map_err(|e| SolverError::Invalid(e.to_string()))
}

/// Ideal continuous-measurement problem dρ/dt = −i[H_R, ρ] + Γ𝒟[P]ρ on the
/// layout of `projector` (qutrit ⊗ qubit…, no cavity). `gamma` in 1/µs.
pub fn build_ideal_zeno_problem(
    rabi_mhz: f64,
    gamma: f64,
    projector: &Operator,
    transition: RabiTransition,
    initial: QuantumState,
    duration: f64,
    sample_times: Vec<f64>,
) -> Result<EvolutionProblem, SolverError> {
    let p = projector.matrix();
    let defect = (p * p - p).norm();
    if defect > 1e-12 || !projector.is_hermitian(1e-12) {
        return Err(SolverError::Invalid(format!(
            "P is not a Hermitian projector (‖P²−P‖ = {defect:.3e})"
        )));
    }
    if !(gamma >= 0.0) {
        return Err(SolverError::Invalid(format!("Γ must be >= 0, got {gamma}")));
    }
    let layout = projector.layout().clone();
    let h = Hamiltonian::from_operator(&rabi_hamiltonian(&layout, rabi_mhz, transition)?);
    let ops = if gamma > 0.0 {
        vec![projector.scale(C64::new(gamma.sqrt(), 0.0))]
    } else {
        Vec::new()
    };
    Ok(EvolutionProblem::new(h, ops, initial, (0.0, duration), sample_times))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qcore::{basis_state, Factor, SpaceLayout};

    fn cavity_layout(n: usize) -> SpaceLayout {
        SpaceLayout::new(vec![Factor::cavity(n)]).unwrap()
    }

    fn annihilation(n: usize) -> CMatrix {
        CMatrix::from_fn(n, n, |r, c| {
            if c == r + 1 {
                C64::new((c as f64).sqrt(), 0.0)
            } else {
                C64::new(0.0, 0.0)
            }
        })
    }

    #[test]
    fn fock_decay() {
        let n = 4;
        let l = cavity_layout(n);
        let kappa: f64 = 0.9;
        let a = Operator::new(l.clone(), annihilation(n) * C64::new(kappa.sqrt(), 0.0)).unwrap();
        let times = EvolutionProblem::uniform_samples((0.0, 2.0), 5);
        let p = EvolutionProblem::new(
            Hamiltonian::zero(&l),
            vec![a],
            basis_state(&l, &["1"]).unwrap(),
            (0.0, 2.0),
            times.clone(),
        );
        let out = evolve_master(&p).unwrap();
        for (s, t) in out.iter().zip(&times) {
            let p1 = s.density_matrix()[(1, 1)].re;
            assert!((p1 - (-kappa * t).exp()).abs() < 1e-6);
        }
    }

    #[test]
    fn purity_decreases_under_pure_dissipation() {
        let l = cavity_layout(3);
        let a = Operator::new(l.clone(), annihilation(3)).unwrap();
        let mut v = crate::qcore::CVector::zeros(3);
        v[0] = C64::new(0.6, 0.0);
        v[2] = C64::new(0.0, 0.8);
        let init = QuantumState::pure(l.clone(), v).unwrap();
        let p0 = init.purity();
        let p = EvolutionProblem::new(Hamiltonian::zero(&l), vec![a], init, (0.0, 1.0), vec![0.5, 1.0]);
        for s in evolve_master(&p).unwrap() {
            assert!(s.purity() <= p0 + 1e-9);
        }
    }

    #[test]
    fn step_limit_enforced() {
        let l = cavity_layout(3);
        let a = annihilation(3);
        let h = Hamiltonian::new(
            l.clone(),
            vec![0.0; 3],
            vec![Modulated::new(a.clone(), ONE * 100.0, 1.0), Modulated::new(a.adjoint(), ONE * 100.0, -1.0)],
        );
        let mut p = EvolutionProblem::new(h, vec![], QuantumState::maximally_mixed(&l), (0.0, 0.01), vec![0.01]);
        assert!(p.validate().is_ok());
        p.dt = 1e-3;
        assert!(matches!(evolve_master(&p), Err(SolverError::StepSize { .. })));
        p.step_limit = 1.0;
        assert!(evolve_master(&p).is_ok());
    }

    #[test]
    fn hamiltonian_from_operator_round_trip() {
        let l = cavity_layout(3);
        let a = annihilation(3);
        let m = &a + a.adjoint() + CMatrix::from_diagonal(&crate::qcore::CVector::from_vec(vec![
            C64::new(1.0, 0.0),
            C64::new(-2.0, 0.0),
            C64::new(0.5, 0.0),
        ]));
        let op = Operator::new(l, m.clone()).unwrap();
        let h = Hamiltonian::from_operator(&op);
        assert_eq!(h.at(0.7).matrix(), &m);
    }

    #[test]
    fn rejects_non_projector() {
        let l = SpaceLayout::qutrit_qubit();
        let p = Operator::identity(&l).scale(C64::new(0.5, 0.0));
        let init = basis_state(&l, &["e", "g"]).unwrap();
        assert!(build_ideal_zeno_problem(1.0, 1.0, &p, RabiTransition::Ef, init, 1.0, vec![1.0]).is_err());
    }

    #[test]
    fn bare_rabi_half_period() {
        let l = SpaceLayout::qutrit_qubit();
        let p = exclusion_projector(&l, &[&["f", "e"]]).unwrap();
        let init = basis_state(&l, &["e", "g"]).unwrap();
        let rabi = 1.0;
        let t = 0.5 / rabi;
        let prob = build_ideal_zeno_problem(rabi, 0.0, &p, RabiTransition::Ef, init, t, vec![t]).unwrap();
        let out = evolve_master(&prob).unwrap();
        let fg = l.index_of(&["f", "g"]).unwrap();
        assert!((out[0].density_matrix()[(fg, fg)].re - 1.0).abs() < 1e-9);
    }
}
