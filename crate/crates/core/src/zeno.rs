//! Zeno gate protocols: the ideal projected algebra, the blocking sweep, gate
//! evolution and the drive-amplitude sweep.
//!
//! Full-cavity runs start with the drives on: the cavity is relaxed in the
//! ground branch over [−T_init, 0] (T_init = 5/κ by default), then the qubit
//! state is prepared instantaneously at t = 0.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::device::{
    build_collapse_ops, device_layout, full_hamiltonian, DeviceError, DeviceParams, DriveConfig,
    RabiTransition, StarkShifts, ZenoTarget,
};
use crate::lindblad::{
    auto_dt, build_ideal_zeno_problem, evolve_master, exclusion_projector, EvolutionProblem, SolverError,
    DEFAULT_STEP_LIMIT,
};
use crate::metrics::{computational_projection, concurrence, gate_target, state_fidelity, MetricsError};
use crate::qcore::{
    hermitian_function, kron, partial_trace, product_state, plus_amplitudes, trace_distance, CMatrix, Factor,
    Operator, QcoreError, QuantumState, SpaceLayout, C64, ONE,
};
use crate::sweep::SweepResult;
use crate::{ang, calib};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ZenoError {
    #[error(transparent)]
    Device(#[from] DeviceError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Qcore(#[from] QcoreError),
    #[error("Fock truncation not converged: N → N+5 moves the final state by {distance:.3e} (limit 1e-3)")]
    Truncation { distance: f64 },
    #[error("ideal model supports 1 to {max} qubits, got {got}")]
    QubitCount { got: usize, max: usize },
    #[error("{0}")]
    Invalid(String),
}

pub const MAX_IDEAL_QUBITS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Model {
    FullCavity,
    IdealMarkovian,
    IdealUnitary,
}

impl Model {
    pub fn as_str(&self) -> &'static str {
        match self {
            Model::FullCavity => "full-cavity",
            Model::IdealMarkovian => "ideal-markovian",
            Model::IdealUnitary => "ideal-unitary",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Coherence {
    Finite,
    Infinite,
}

/// Numerical settings shared by the cavity protocols.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub n_fock: usize,
    /// fixed step in ns; automatic (≤ 1 ns, step-limited) when absent
    pub dt_ns: Option<f64>,
    pub step_limit: f64,
    /// cavity relaxation before t = 0; 5/κ when absent
    pub init_time_us: Option<f64>,
    pub sample_stride_ns: f64,
    pub truncation_check: bool,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            n_fock: 20,
            dt_ns: None,
            step_limit: DEFAULT_STEP_LIMIT,
            init_time_us: None,
            sample_stride_ns: 100.0,
            truncation_check: false,
            seed: 0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), ZenoError> {
        if self.n_fock < 2 {
            return Err(ZenoError::Invalid(format!("n_fock must be >= 2, got {}", self.n_fock)));
        }
        if let Some(dt) = self.dt_ns {
            if !(dt > 0.0) {
                return Err(ZenoError::Invalid(format!("dt_ns must be > 0, got {dt}")));
            }
        }
        if !(self.step_limit > 0.0) {
            return Err(ZenoError::Invalid("step_limit must be > 0".into()));
        }
        if !(self.sample_stride_ns > 0.0) {
            return Err(ZenoError::Invalid("sample_stride_ns must be > 0".into()));
        }
        Ok(())
    }

    fn configure(&self, problem: &mut EvolutionProblem) {
        problem.step_limit = self.step_limit;
        problem.dt = match self.dt_ns {
            Some(ns) => ns * 1e-3,
            None => auto_dt(&problem.hamiltonian, &problem.collapse_ops, 1e-3, self.step_limit),
        };
    }

    fn init_time(&self, params: &DeviceParams) -> f64 {
        self.init_time_us.unwrap_or(5.0 / params.kappa())
    }
}

// ---------------------------------------------------------------- ideal algebra

fn ideal_layout(n_qubits: usize) -> Result<SpaceLayout, ZenoError> {
    if n_qubits == 0 || n_qubits > MAX_IDEAL_QUBITS {
        return Err(ZenoError::QubitCount {
            got: n_qubits,
            max: MAX_IDEAL_QUBITS,
        });
    }
    let mut factors = vec![Factor::qutrit()];
    for k in 0..n_qubits {
        let name = if k == 0 { "qubit".to_string() } else { format!("qubit{}", k + 1) };
        factors.push(Factor {
            name,
            labels: vec!["g".into(), "e".into()],
        });
    }
    Ok(SpaceLayout::new(factors)?)
}

/// P = 1 − |f e…e⟩⟨f e…e|.
pub fn zeno_projector(layout: &SpaceLayout) -> Result<Operator, ZenoError> {
    let mut labels = vec!["f"];
    labels.extend(std::iter::repeat_n("e", layout.n_factors() - 1));
    Ok(exclusion_projector(layout, &[&labels])?)
}

/// H_Zeno = P H_R P with H_R = i(Ω/2)(|e⟩⟨f| − |f⟩⟨e|) on the qutrit, rad/µs.
pub fn ideal_zeno_hamiltonian(rabi_mhz: f64, n_qubits: usize) -> Result<Operator, ZenoError> {
    let layout = ideal_layout(n_qubits)?;
    let p = zeno_projector(&layout)?;
    let hr = crate::lindblad::rabi_hamiltonian(&layout, rabi_mhz, RabiTransition::Ef)?;
    Ok(p.mul(&hr)?.mul(&p)?)
}

/// exp(−i H_Zeno t) at time `t` µs.
pub fn zeno_propagator(rabi_mhz: f64, n_qubits: usize, t: f64) -> Result<Operator, ZenoError> {
    let h = ideal_zeno_hamiltonian(rabi_mhz, n_qubits)?;
    let u = hermitian_function(h.matrix(), |x| C64::new(0.0, -x * t).exp());
    Ok(Operator::new(h.layout().clone(), u)?)
}

/// Gate unitary: evolution under H_Zeno for a full Rabi period 1/Ω_R.
pub fn ideal_gate_unitary(rabi_mhz: f64, n_qubits: usize) -> Result<Operator, ZenoError> {
    zeno_propagator(rabi_mhz, n_qubits, 1.0 / rabi_mhz)
}

/// Basis indices with the qutrit in g or e (the computational subspace).
pub fn computational_indices(layout: &SpaceLayout) -> Vec<usize> {
    (0..layout.total_dim())
        .filter(|&k| layout.labels_of(k)[0] != "f")
        .collect()
}

pub fn computational_block(op: &Operator) -> CMatrix {
    let idx = computational_indices(op.layout());
    CMatrix::from_fn(idx.len(), idx.len(), |r, c| op.matrix()[(idx[r], idx[c])])
}

/// |+⟩ ⊗ |+⟩ on qutrit ⊗ qubit.
pub fn plus_plus() -> QuantumState {
    let layout = SpaceLayout::qutrit_qubit();
    product_state(
        &layout,
        &[plus_amplitudes(layout.factor(0)), plus_amplitudes(layout.factor(1))],
    )
    .expect("static state")
}

// ---------------------------------------------------------------- cavity helpers

/// Cavity state after relaxing with the drives on while the qubits sit in `branch`.
pub fn relaxed_cavity(
    params: &DeviceParams,
    drives: &DriveConfig,
    sim: &SimConfig,
    branch: (&str, &str),
) -> Result<CMatrix, ZenoError> {
    let n = sim.n_fock;
    let mut vac = CMatrix::zeros(n, n);
    vac[(0, 0)] = ONE;
    let t_init = sim.init_time(params);
    if drives.zeno_eps_mhz == 0.0 || t_init == 0.0 {
        return Ok(vac);
    }
    let layout = device_layout(&[branch.0], &[branch.1], n)?;
    let d = DriveConfig {
        rabi_mhz: 0.0,
        stark: Some(drives.stark_or_zero()),
        ..drives.clone()
    };
    let h = full_hamiltonian(params, &d, &layout)?;
    let ops = build_collapse_ops(params, &layout)?;
    let init = QuantumState::mixed_unchecked(layout.clone(), vac);
    let mut p = EvolutionProblem::new(h, ops, init, (-t_init, 0.0), vec![0.0]);
    sim.configure(&mut p);
    let out = evolve_master(&p)?;
    Ok(out[0].density_matrix())
}

/// Full-cavity problem on a pinned layout: qutrit/qubit initial state `qq`
/// (on the pinned qutrit ⊗ qubit basis) times the relaxed cavity.
#[allow(clippy::too_many_arguments)]
pub fn full_cavity_problem(
    params: &DeviceParams,
    drives: &DriveConfig,
    sim: &SimConfig,
    qutrit: &[&str],
    qubit: &[&str],
    qq: &CMatrix,
    relax_branch: (&str, &str),
    t_end: f64,
    sample_times: Vec<f64>,
) -> Result<EvolutionProblem, ZenoError> {
    sim.validate()?;
    let layout = device_layout(qutrit, qubit, sim.n_fock)?;
    if qq.nrows() != qutrit.len() * qubit.len() {
        return Err(ZenoError::Invalid(format!(
            "qutrit-qubit state has dimension {}, layout needs {}",
            qq.nrows(),
            qutrit.len() * qubit.len()
        )));
    }
    let cav = relaxed_cavity(params, drives, sim, relax_branch)?;
    let h = full_hamiltonian(params, drives, &layout)?;
    let ops = build_collapse_ops(params, &layout)?;
    let init = QuantumState::mixed_unchecked(layout, kron(qq, &cav));
    let mut p = EvolutionProblem::new(h, ops, init, (0.0, t_end), sample_times);
    sim.configure(&mut p);
    Ok(p)
}

/// Reduced qutrit ⊗ qubit state of a device-layout state.
pub fn reduce(state: &QuantumState) -> Result<QuantumState, ZenoError> {
    Ok(partial_trace(state, &[0, 1])?)
}

// ---------------------------------------------------------------- blocking

/// P(gg) after a Rabi π pulse on qutrit g↔e under a Zeno drive on the |eg⟩ line.
pub fn blocking_point(
    params: &DeviceParams,
    rabi_mhz: f64,
    eps_mhz: f64,
    model: Model,
    sim: &SimConfig,
) -> Result<f64, ZenoError> {
    if !(rabi_mhz > 0.0) {
        return Err(ZenoError::Invalid(format!("Rabi frequency must be > 0, got {rabi_mhz}")));
    }
    let t = 0.5 / rabi_mhz;
    match model {
        Model::FullCavity => {
            let drives = DriveConfig {
                rabi_mhz,
                zeno_eps_mhz: eps_mhz,
                symmetric_on: false,
                stark: Some(StarkShifts::default()),
                gate_time_us: Some(t),
                rabi_transition: RabiTransition::Ge,
                zeno_target: ZenoTarget::Eg,
            };
            let mut qq = CMatrix::zeros(2, 2);
            qq[(0, 0)] = ONE;
            let p = full_cavity_problem(params, &drives, sim, &["g", "e"], &["g"], &qq, ("g", "g"), t, vec![t])?;
            let out = evolve_master(&p)?;
            let r = reduce(&out[0])?;
            Ok(r.density_matrix()[(0, 0)].re)
        }
        Model::IdealMarkovian => {
            let layout = SpaceLayout::new(vec![Factor::new("qutrit", &["g", "e"]), Factor::new("qubit", &["g"])])?;
            let p = exclusion_projector(&layout, &[&["e", "g"]])?;
            let gamma = measurement_rate(params, eps_mhz);
            let init = crate::qcore::basis_state(&layout, &["g", "g"])?;
            let prob = build_ideal_zeno_problem(rabi_mhz, gamma, &p, RabiTransition::Ge, init, t, vec![t])?;
            let out = evolve_master(&prob)?;
            Ok(out[0].density_matrix()[(0, 0)].re)
        }
        Model::IdealUnitary => Err(ZenoError::Invalid("blocking needs a measurement model".into())),
    }
}

/// Γ = 4ε²/κ in 1/µs (angular units).
pub fn measurement_rate(params: &DeviceParams, eps_mhz: f64) -> f64 {
    4.0 * ang(eps_mhz).powi(2) / params.kappa()
}

/// Columns (rabi_mhz, eps_mhz, model, p_gg).
pub fn blocking_experiment(
    params: &DeviceParams,
    rabi_mhz: f64,
    eps_list: &[f64],
    model: Model,
    sim: &SimConfig,
) -> Result<SweepResult, ZenoError> {
    let vals: Vec<f64> = eps_list
        .par_iter()
        .map(|&e| blocking_point(params, rabi_mhz, e, model, sim))
        .collect::<Result<_, _>>()?;
    let mut out = SweepResult::new(&["rabi_mhz", "eps_mhz", "model", "p_gg"]);
    for (&e, p) in eps_list.iter().zip(vals) {
        out.push(vec![rabi_mhz.into(), e.into(), model.as_str().into(), p.into()]);
    }
    Ok(out)
}

// ---------------------------------------------------------------- gate

#[derive(Debug, Clone)]
pub struct GateProtocol {
    /// qutrit ⊗ qubit state prepared at t = 0
    pub initial: QuantumState,
    pub drives: DriveConfig,
    pub params: DeviceParams,
    pub sample_times: Vec<f64>,
    pub model: Model,
    pub sim: SimConfig,
}

impl GateProtocol {
    /// |++⟩ input, samples every `sim.sample_stride_ns` over the gate.
    pub fn new(params: DeviceParams, drives: DriveConfig, model: Model, sim: SimConfig) -> Self {
        let t = drives.gate_time();
        let sample_times = stride_samples(t, sim.sample_stride_ns * 1e-3);
        Self {
            initial: plus_plus(),
            drives,
            params,
            sample_times,
            model,
            sim,
        }
    }

    pub fn gate_time(&self) -> f64 {
        self.drives.gate_time()
    }
}

/// 0, stride, 2·stride, … up to and including `t_end`.
pub fn stride_samples(t_end: f64, stride: f64) -> Vec<f64> {
    let n = (t_end / stride * (1.0 + 1e-12)).floor() as usize;
    let mut v: Vec<f64> = (0..=n).map(|k| k as f64 * stride).collect();
    if (t_end - v[n]).abs() > 1e-9 * t_end.max(1.0) {
        v.push(t_end);
    } else {
        v[n] = t_end;
    }
    v
}

fn check_qq(state: &QuantumState) -> Result<(), ZenoError> {
    if state.layout().dims() != [3, 2] {
        return Err(ZenoError::Invalid(format!(
            "gate input must live on qutrit ⊗ qubit, got dims {:?}",
            state.layout().dims()
        )));
    }
    Ok(())
}

/// Full-cavity master-equation problem of a gate protocol (all 3×2×N levels).
pub fn gate_problem(protocol: &GateProtocol) -> Result<EvolutionProblem, ZenoError> {
    check_qq(&protocol.initial)?;
    full_cavity_problem(
        &protocol.params,
        &protocol.drives,
        &protocol.sim,
        &["g", "e", "f"],
        &["g", "e"],
        &protocol.initial.density_matrix(),
        ("g", "g"),
        protocol.gate_time(),
        protocol.sample_times.clone(),
    )
}

/// Rotate the f level into the frame of the e↔f Rabi drive.
pub fn to_rabi_frame(rho: &QuantumState, params: &DeviceParams, drives: &DriveConfig, t: f64) -> QuantumState {
    let w = ang(params.alpha1_mhz + drives.stark_or_zero().ef_mhz);
    let layout = rho.layout();
    let phase: Vec<C64> = (0..layout.total_dim())
        .map(|k| {
            if layout.labels_of(k)[0] == "f" {
                C64::new(0.0, w * t).exp()
            } else {
                ONE
            }
        })
        .collect();
    let m = rho.density_matrix();
    let out = CMatrix::from_fn(m.nrows(), m.ncols(), |r, c| phase[r] * m[(r, c)] * phase[c].conj());
    QuantumState::mixed_unchecked(layout.clone(), out)
}

/// Reduced qutrit ⊗ qubit states at the sample times.
pub fn run_gate(protocol: &GateProtocol) -> Result<Vec<QuantumState>, ZenoError> {
    check_qq(&protocol.initial)?;
    match protocol.model {
        Model::FullCavity => {
            let states = run_full_gate(protocol)?;
            if protocol.sim.truncation_check {
                let bigger = GateProtocol {
                    sim: SimConfig {
                        n_fock: protocol.sim.n_fock + 5,
                        ..protocol.sim.clone()
                    },
                    sample_times: vec![protocol.gate_time()],
                    ..protocol.clone()
                };
                let reference = run_full_gate(&bigger)?;
                let last = states.last().ok_or_else(|| ZenoError::Invalid("no samples".into()))?;
                let distance = trace_distance(&last.density_matrix(), &reference[0].density_matrix());
                if distance >= 1e-3 {
                    return Err(ZenoError::Truncation { distance });
                }
            }
            Ok(states)
        }
        Model::IdealUnitary => {
            let rho0 = protocol.initial.density_matrix();
            protocol
                .sample_times
                .iter()
                .map(|&t| {
                    let u = zeno_propagator(protocol.drives.rabi_mhz, 1, t)?;
                    let m = u.matrix() * &rho0 * u.matrix().adjoint();
                    Ok(QuantumState::mixed_unchecked(u.layout().clone(), m))
                })
                .collect()
        }
        Model::IdealMarkovian => {
            let layout = SpaceLayout::qutrit_qubit();
            let p = zeno_projector(&layout)?;
            let gamma = measurement_rate(&protocol.params, protocol.drives.zeno_eps_mhz);
            let prob = build_ideal_zeno_problem(
                protocol.drives.rabi_mhz,
                gamma,
                &p,
                RabiTransition::Ef,
                protocol.initial.clone(),
                protocol.gate_time(),
                protocol.sample_times.clone(),
            )?;
            Ok(evolve_master(&prob)?)
        }
    }
}

fn run_full_gate(protocol: &GateProtocol) -> Result<Vec<QuantumState>, ZenoError> {
    let p = gate_problem(protocol)?;
    let out = evolve_master(&p)?;
    out.iter()
        .zip(&protocol.sample_times)
        .map(|(s, &t)| Ok(to_rabi_frame(&reduce(s)?, &protocol.params, &protocol.drives, t)))
        .collect()
}

/// Fidelity to (1 − 2|eg⟩⟨eg|)|++⟩ and concurrence of the computational part.
pub fn gate_scores(rho: &QuantumState) -> Result<(f64, f64), ZenoError> {
    let target = gate_target(rho.layout())?;
    let f = state_fidelity(rho, &target)?;
    let c = concurrence(&computational_projection(rho)?)?;
    Ok((f, c))
}

/// Conditional phase φ_ee + φ_gg − φ_eg − φ_ge read from the coherences with |gg⟩.
pub fn conditional_phase(rho: &QuantumState) -> Result<f64, ZenoError> {
    let l = rho.layout();
    let m = rho.density_matrix();
    let k = |q: &str, b: &str| l.index_of(&[q, b]);
    let gg = k("g", "g")?;
    let z = m[(k("e", "e")?, gg)] * m[(gg, gg)] / (m[(k("e", "g")?, gg)] * m[(k("g", "e")?, gg)]);
    Ok(z.arg())
}

/// Conditional phase accumulated from |++⟩ with the Rabi drive off, after
/// `duration` µs of cavity driving (RIP mechanism; Stark terms left at zero).
pub fn rip_phase(
    params: &DeviceParams,
    eps_mhz: f64,
    symmetric_on: bool,
    duration: f64,
    sim: &SimConfig,
) -> Result<f64, ZenoError> {
    let drives = DriveConfig {
        rabi_mhz: 0.0,
        zeno_eps_mhz: eps_mhz,
        symmetric_on,
        stark: Some(StarkShifts::default()),
        gate_time_us: Some(duration),
        ..Default::default()
    };
    let layout = SpaceLayout::new(vec![Factor::new("qutrit", &["g", "e"]), Factor::qubit()])?;
    let plus = product_state(&layout, &[plus_amplitudes(layout.factor(0)), plus_amplitudes(layout.factor(1))])?;
    let p = full_cavity_problem(
        params,
        &drives,
        sim,
        &["g", "e"],
        &["g", "e"],
        &plus.density_matrix(),
        ("g", "g"),
        duration,
        vec![duration],
    )?;
    let out = evolve_master(&p)?;
    conditional_phase(&reduce(&out[0])?)
}

/// Stark shifts for the sweep: calibrated per point, zero, or fixed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StarkMode {
    Calibrated,
    Zero,
    Fixed(StarkShifts),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpsPoint {
    pub eps_mhz: f64,
    pub fidelity: f64,
    pub concurrence: f64,
    pub p_fe: f64,
    pub subspace_weight: f64,
    pub stark: StarkShifts,
}

pub fn epsilon_point(
    params: &DeviceParams,
    rabi_mhz: f64,
    eps_mhz: f64,
    symmetric_on: bool,
    stark: StarkMode,
    sim: &SimConfig,
) -> Result<EpsPoint, ZenoError> {
    let stark = match stark {
        StarkMode::Zero => StarkShifts::default(),
        StarkMode::Fixed(s) => s,
        StarkMode::Calibrated => calib::calibrate_stark(params, eps_mhz, symmetric_on, sim)?,
    };
    let drives = DriveConfig {
        rabi_mhz,
        zeno_eps_mhz: eps_mhz,
        symmetric_on,
        stark: Some(stark),
        ..Default::default()
    };
    let mut protocol = GateProtocol::new(params.clone(), drives, Model::FullCavity, sim.clone());
    protocol.sample_times = vec![protocol.gate_time()];
    let states = run_gate(&protocol)?;
    let rho = &states[0];
    let (fidelity, conc) = gate_scores(rho)?;
    let comp = computational_projection(rho)?;
    Ok(EpsPoint {
        eps_mhz,
        fidelity,
        concurrence: conc,
        p_fe: crate::metrics::population(rho, &["f", "e"]).unwrap_or(0.0),
        subspace_weight: comp.subspace_weight,
        stark,
    })
}

/// Columns (rabi_mhz, eps_mhz, coherence, fidelity, concurrence, p_fe).
pub fn epsilon_sweep(
    params: &DeviceParams,
    rabi_mhz: f64,
    eps_list: &[f64],
    coherence: Coherence,
    stark: StarkMode,
    sim: &SimConfig,
) -> Result<SweepResult, ZenoError> {
    let p = match coherence {
        Coherence::Finite => params.clone(),
        Coherence::Infinite => params.without_decoherence(),
    };
    let points: Vec<EpsPoint> = eps_list
        .par_iter()
        .map(|&e| epsilon_point(&p, rabi_mhz, e, true, stark, sim))
        .collect::<Result<_, _>>()?;
    let label = match coherence {
        Coherence::Finite => "finite",
        Coherence::Infinite => "infinite",
    };
    let mut out = SweepResult::new(&["rabi_mhz", "eps_mhz", "coherence", "fidelity", "concurrence", "p_fe"]);
    for pt in points {
        out.push(vec![
            rabi_mhz.into(),
            pt.eps_mhz.into(),
            label.into(),
            pt.fidelity.into(),
            pt.concurrence.into(),
            pt.p_fe.into(),
        ]);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qcore::basis_state;

    #[test]
    fn zeno_hamiltonian_structure() {
        let h = ideal_zeno_hamiltonian(1.0, 1).unwrap();
        let l = h.layout();
        let m = h.matrix();
        let nz: Vec<(usize, usize)> = (0..6)
            .flat_map(|r| (0..6).map(move |c| (r, c)))
            .filter(|&(r, c)| m[(r, c)].norm() > 0.0)
            .collect();
        let eg = l.index_of(&["e", "g"]).unwrap();
        let fg = l.index_of(&["f", "g"]).unwrap();
        assert_eq!(nz, vec![(eg, fg), (fg, eg)]);
        assert!((m[(eg, fg)] - C64::new(0.0, ang(0.5))).norm() < 1e-12);
        let ee = l.index_of(&["e", "e"]).unwrap();
        let fe = l.index_of(&["f", "e"]).unwrap();
        assert_eq!(m[(ee, fe)].norm(), 0.0);
        let p = zeno_projector(l).unwrap();
        assert!(h.commutator(&p).unwrap().frobenius() < 1e-12);
    }

    #[test]
    fn two_qubit_extension_couplings() {
        let h = ideal_zeno_hamiltonian(1.0, 2).unwrap();
        let l = h.layout().clone();
        for a in ["g", "e"] {
            for b in ["g", "e"] {
                let e = l.index_of(&["e", a, b]).unwrap();
                let f = l.index_of(&["f", a, b]).unwrap();
                let coupled = h.matrix()[(e, f)].norm() > 0.0;
                assert_eq!(coupled, !(a == "e" && b == "e"));
            }
        }
        assert!(matches!(ideal_zeno_hamiltonian(1.0, 4), Err(ZenoError::QubitCount { .. })));
    }

    #[test]
    fn gate_unitary_is_controlled_phase() {
        for n in 1..=3 {
            let u = ideal_gate_unitary(1.0, n).unwrap();
            let c = computational_block(&u);
            let idx = computational_indices(u.layout());
            for (r, &k) in idx.iter().enumerate() {
                let labels = u.layout().labels_of(k);
                let flip = labels[0] == "e" && labels[1..].contains(&"g");
                let want = if flip { -1.0 } else { 1.0 };
                assert!((c[(r, r)] - C64::new(want, 0.0)).norm() < 1e-10, "n={n} {labels:?}");
            }
            let sq = &c * &c;
            assert!((sq - CMatrix::identity(c.nrows(), c.ncols())).norm() < 1e-10);
        }
    }

    #[test]
    fn half_gate_moves_eg_to_fg() {
        let u = zeno_propagator(1.0, 1, 0.5).unwrap();
        let l = u.layout();
        let eg = l.index_of(&["e", "g"]).unwrap();
        let fg = l.index_of(&["f", "g"]).unwrap();
        assert!((u.matrix()[(fg, eg)].norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ideal_unitary_gate_on_plus_plus() {
        let sim = SimConfig::default();
        let p = GateProtocol::new(
            DeviceParams::default(),
            DriveConfig::default(),
            Model::IdealUnitary,
            sim,
        );
        let states = run_gate(&p).unwrap();
        assert_eq!(states.len(), 11);
        let (f, c) = gate_scores(states.last().unwrap()).unwrap();
        assert!((f - 1.0).abs() < 1e-10);
        assert!((c - 1.0).abs() < 1e-9);
        assert!((conditional_phase(states.last().unwrap()).unwrap().abs() - std::f64::consts::PI).abs() < 1e-9);
    }

    #[test]
    fn symmetric_drive_suppresses_rip_phase() {
        let p = DeviceParams::default();
        let sim = SimConfig::default();
        let on = rip_phase(&p, 1.0, true, 1.0, &sim).unwrap();
        let off = rip_phase(&p, 1.0, false, 1.0, &sim).unwrap();
        assert!(on.abs() < 0.05, "{on}");
        assert!(off.abs() > 5.0 * on.abs(), "{off} vs {on}");
    }

    #[test]
    fn stride_sampling() {
        assert_eq!(stride_samples(1.0, 0.1).len(), 11);
        assert_eq!(*stride_samples(1.0, 0.1).last().unwrap(), 1.0);
        assert_eq!(stride_samples(0.25, 0.1), vec![0.0, 0.1, 0.2, 0.25]);
    }

    #[test]
    fn blocking_without_measurement_transfers() {
        let p = DeviceParams::default().without_decoherence();
        let sim = SimConfig {
            n_fock: 3,
            ..Default::default()
        };
        let full = blocking_point(&p, 1.0, 0.0, Model::FullCavity, &sim).unwrap();
        let ideal = blocking_point(&p, 1.0, 0.0, Model::IdealMarkovian, &sim).unwrap();
        assert!(full < 1e-8 && ideal < 1e-8);
    }

    #[test]
    fn gate_input_layout_checked() {
        let mut p = GateProtocol::new(
            DeviceParams::default(),
            DriveConfig::default(),
            Model::IdealUnitary,
            SimConfig::default(),
        );
        p.initial = basis_state(&SpaceLayout::flat(4), &["0"]).unwrap();
        assert!(run_gate(&p).is_err());
    }
}
