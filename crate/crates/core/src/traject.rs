//! Quantum-jump unraveling of master-equation problems.
//!
//! Norm-threshold algorithm in the same interaction picture as the master
//! solver: ψ evolves under the non-Hermitian K, a jump fires once ‖ψ‖² falls
//! below a uniform threshold, the channel is drawn ∝ ‖L_kψ‖². A mixed initial
//! state is unraveled by drawing one of its eigenvectors with its weight.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::kernel::{CoeffStepper, Compiled, Rk4};
use crate::lindblad::{n_steps, EvolutionProblem, SolverError};
use crate::qcore::{hermitian_eigen, CMatrix, CVector, QuantumState, SpaceLayout, C64, ZERO};
use crate::tomo::ShotRecord;
use crate::zeno::{gate_problem, reduce, to_rabi_frame, GateProtocol, ZenoError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrajectoryError {
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Zeno(#[from] ZenoError),
    #[error("empty ensemble")]
    Empty,
    #[error("layout mismatch: {0}")]
    Layout(String),
    #[error("detection fidelity must be in (0.5, 1], got {0}")]
    DetectionFidelity(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    pub seed: u64,
    /// normalized state at each sample time
    pub samples: Vec<QuantumState>,
    pub final_state: QuantumState,
    /// (time, channel index)
    pub jump_log: Vec<(f64, usize)>,
    pub escaped: bool,
}

/// Basis indices with the qutrit in f and the qubit in e, if the layout has
/// such factors.
pub fn escape_manifold(layout: &SpaceLayout) -> Vec<usize> {
    let (Some(q), Some(b)) = (layout.factor_index("qutrit"), layout.factor_index("qubit")) else {
        return Vec::new();
    };
    (0..layout.total_dim())
        .filter(|&k| {
            let l = layout.labels_of(k);
            l[q] == "f" && l[b] == "e"
        })
        .collect()
}

fn norm_sqr(v: &[C64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum()
}

fn draw_initial(initial: &QuantumState, rng: &mut ChaCha8Rng) -> Vec<C64> {
    if let Some(psi) = initial.ket() {
        return psi.iter().copied().collect();
    }
    let (vals, vecs) = hermitian_eigen(&initial.density_matrix());
    let total: f64 = vals.iter().map(|v| v.max(0.0)).sum();
    let mut r = rng.random::<f64>() * total;
    let mut pick = vals.len() - 1;
    // largest weights first so the common branch is stable under round-off
    for k in (0..vals.len()).rev() {
        r -= vals[k].max(0.0);
        if r <= 0.0 {
            pick = k;
            break;
        }
    }
    vecs.column(pick).iter().copied().collect()
}

/// One trajectory of `problem` with a 64-bit seed.
pub fn run_trajectory(problem: &EvolutionProblem, seed: u64) -> Result<TrajectoryRecord, TrajectoryError> {
    problem.validate()?;
    let comp = problem.compile();
    run_compiled(problem, &comp, seed)
}

fn run_compiled(problem: &EvolutionProblem, comp: &Compiled, seed: u64) -> Result<TrajectoryRecord, TrajectoryError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layout = problem.hamiltonian.layout().clone();
    let manifold = escape_manifold(&layout);
    let d = comp.d;
    let mut t = problem.t_span.0;
    let psi0 = draw_initial(&problem.initial, &mut rng);
    let mut psi = comp.vec_to_interaction(&psi0, t);
    let mut rk = Rk4::new(d);
    let mut cs = CoeffStepper::new();
    let mut s = comp.scratch();
    let mut jump = vec![ZERO; d];
    let mut threshold: f64 = rng.random();
    let mut jump_log = Vec::new();
    let mut escaped = false;
    let mut samples = Vec::with_capacity(problem.sample_times.len());
    let n_ch = comp.n_channels();
    let mut rates = vec![0.0; n_ch];
    for &target in &problem.sample_times {
        let n = n_steps(target - t, problem.dt);
        let h = if n > 0 { (target - t) / n as f64 } else { 0.0 };
        let start = t;
        if n > 0 {
            cs.start(&comp.k, start, h);
        }
        for k in 0..n {
            let tk = start + h * k as f64;
            if k > 0 {
                cs.advance(&comp.k, tk);
            }
            let prev = psi.clone();
            rk.step_staged(h, &mut psi, |stage, y, dy| comp.pure_rhs_with(&cs.at[stage], y, dy));
            let tn = tk + h;
            if n_ch > 0 && norm_sqr(&psi) < threshold {
                // jump from the pre-step state, at the end of the step
                let norm = norm_sqr(&prev).sqrt();
                let prev: Vec<C64> = prev.iter().map(|z| z / norm).collect();
                for (ch, r) in rates.iter_mut().enumerate() {
                    comp.apply_jump(ch, tk, &prev, &mut jump, &mut s);
                    *r = norm_sqr(&jump);
                }
                let total: f64 = rates.iter().sum();
                if total > 0.0 {
                    let mut u = rng.random::<f64>() * total;
                    let mut ch = n_ch - 1;
                    for (k, r) in rates.iter().enumerate() {
                        u -= r;
                        if u <= 0.0 {
                            ch = k;
                            break;
                        }
                    }
                    comp.apply_jump(ch, tk, &prev, &mut jump, &mut s);
                    if !manifold.is_empty() {
                        let from_manifold: f64 = {
                            let mut masked = prev.clone();
                            for (j, z) in masked.iter_mut().enumerate() {
                                if manifold.binary_search(&j).is_err() {
                                    *z = ZERO;
                                }
                            }
                            let mut out = vec![ZERO; d];
                            comp.apply_jump(ch, tk, &masked, &mut out, &mut s);
                            norm_sqr(&out)
                        };
                        if from_manifold > 0.5 * rates[ch] {
                            escaped = true;
                        }
                    }
                    let n = norm_sqr(&jump).sqrt();
                    psi = jump.iter().map(|z| z / n).collect();
                    jump_log.push((tn, ch));
                }
                threshold = rng.random();
            }
            if !escaped && !manifold.is_empty() {
                let total = norm_sqr(&psi);
                let p: f64 = manifold.iter().map(|&j| psi[j].norm_sqr()).sum();
                if p > 0.5 * total {
                    escaped = true;
                }
            }
        }
        t = target;
        let lab = comp.vec_to_lab(&psi, t);
        let n = norm_sqr(&lab).sqrt();
        let v = CVector::from_iterator(d, lab.iter().map(|z| z / n));
        samples.push(QuantumState::pure_unchecked(layout.clone(), v));
    }
    let final_state = match samples.last() {
        Some(s) => s.clone(),
        None => {
            let lab = comp.vec_to_lab(&psi, t);
            let n = norm_sqr(&lab).sqrt();
            QuantumState::pure_unchecked(layout.clone(), CVector::from_iterator(d, lab.iter().map(|z| z / n)))
        }
    };
    Ok(TrajectoryRecord {
        seed,
        samples,
        final_state,
        jump_log,
        escaped,
    })
}

/// `n` trajectories with seeds base_seed, base_seed+1, …, in seed order.
pub fn run_ensemble(problem: &EvolutionProblem, n: usize, base_seed: u64) -> Result<Vec<TrajectoryRecord>, TrajectoryError> {
    problem.validate()?;
    let comp = problem.compile();
    (0..n as u64)
        .into_par_iter()
        .map(|k| run_compiled(problem, &comp, base_seed.wrapping_add(k)))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleAverage {
    pub state: QuantumState,
    /// standard error of the mean of each entry (modulus of the complex spread)
    pub std_error: DMatrix<f64>,
}

/// Mean of |ψ⟩⟨ψ| over the given pure states, summed in index order.
pub fn average_states(states: &[&QuantumState], layout: &SpaceLayout) -> Result<EnsembleAverage, TrajectoryError> {
    if states.is_empty() {
        return Err(TrajectoryError::Empty);
    }
    let d = layout.total_dim();
    let mut sum = CMatrix::zeros(d, d);
    let mut sq = DMatrix::<f64>::zeros(d, d);
    for s in states {
        if s.layout() != layout {
            return Err(TrajectoryError::Layout(format!(
                "{:?} vs {:?}",
                s.layout().dims(),
                layout.dims()
            )));
        }
        let m = s.density_matrix();
        for c in 0..d {
            for r in 0..d {
                sq[(r, c)] += m[(r, c)].norm_sqr();
            }
        }
        sum += m;
    }
    let n = states.len() as f64;
    let mean = sum / C64::new(n, 0.0);
    let std_error = DMatrix::from_fn(d, d, |r, c| {
        if states.len() < 2 {
            return 0.0;
        }
        let var = (sq[(r, c)] / n - mean[(r, c)].norm_sqr()).max(0.0) * n / (n - 1.0);
        (var / n).sqrt()
    });
    Ok(EnsembleAverage {
        state: QuantumState::mixed_unchecked(layout.clone(), mean),
        std_error,
    })
}

/// Ensemble average of the final states.
pub fn ensemble_average(records: &[TrajectoryRecord], layout: &SpaceLayout) -> Result<EnsembleAverage, TrajectoryError> {
    let states: Vec<&QuantumState> = records.iter().map(|r| &r.final_state).collect();
    average_states(&states, layout)
}

/// Ensemble average at sample index `k`.
pub fn ensemble_average_at(records: &[TrajectoryRecord], k: usize, layout: &SpaceLayout) -> Result<EnsembleAverage, TrajectoryError> {
    let states: Vec<&QuantumState> = records
        .iter()
        .map(|r| r.samples.get(k).ok_or(TrajectoryError::Empty))
        .collect::<Result<_, _>>()?;
    average_states(&states, layout)
}

/// Escape flag seen through a symmetric binary channel with the given
/// fidelity; the flip draw depends only on (record seed, detector seed).
pub fn escape_detector(record: &TrajectoryRecord, detection_fidelity: f64, detector_seed: u64) -> Result<bool, TrajectoryError> {
    if !(detection_fidelity > 0.5 && detection_fidelity <= 1.0) {
        return Err(TrajectoryError::DetectionFidelity(detection_fidelity));
    }
    if detection_fidelity == 1.0 {
        return Ok(record.escaped);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(record.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ detector_seed);
    let flip = rng.random::<f64>() >= detection_fidelity;
    Ok(record.escaped != flip)
}

/// Trajectories of a full-cavity gate protocol.
pub fn gate_trajectories(protocol: &GateProtocol, n: usize, base_seed: u64) -> Result<Vec<TrajectoryRecord>, TrajectoryError> {
    let problem = gate_problem(protocol)?;
    run_ensemble(&problem, n, base_seed)
}

/// Reduced, Rabi-frame final states with detector flags, ready for post-selection.
pub fn gate_shots(
    protocol: &GateProtocol,
    records: &[TrajectoryRecord],
    detection_fidelity: f64,
    detector_seed: u64,
) -> Result<Vec<ShotRecord>, TrajectoryError> {
    let t = protocol.gate_time();
    records
        .iter()
        .map(|r| {
            let red = reduce(&r.final_state)?;
            Ok(ShotRecord {
                seed: r.seed,
                state: to_rabi_frame(&red, &protocol.params, &protocol.drives, t),
                flagged: escape_detector(r, detection_fidelity, detector_seed)?,
                escaped: r.escaped,
            })
        })
        .collect()
}
