//! Subcommand dispatch: one spec in, one deterministic table out.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::bounds::{bound_table, EstimateConfig};
use crate::calib::{build_stark_table, calibrate_stark};
use crate::device::{DriveConfig, StarkShifts};
use crate::experiment::{ExperimentSpec, SpecError, StarkChoice};
use crate::lindblad::evolve_master;
use crate::metrics::gate_target;
use crate::qcore::{trace_distance, QuantumState, SpaceLayout};
use crate::sweep::SweepResult;
use crate::tomo::{build_observable_set, mle_reconstruct, postselect_analysis, random_full_rank_state, simulate_tomography};
use crate::traject::{ensemble_average, gate_shots, gate_trajectories, TrajectoryRecord};
use crate::zeno::{blocking_experiment, epsilon_sweep, gate_problem, gate_scores, reduce, run_gate, GateProtocol, Model, StarkMode};
use crate::{C64, CMatrix};

pub const SUBCOMMANDS: [&str; 8] = [
    "block-sweep",
    "gate-evolve",
    "eps-sweep",
    "bound-table",
    "tomo-roundtrip",
    "postselect",
    "calibrate",
    "trajectories",
];

#[derive(Debug, Error)]
pub enum RunError {
    #[error("spec error: {0}")]
    Spec(#[from] SpecError),
    #[error("unknown subcommand `{0}`")]
    UnknownSubcommand(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl RunError {
    /// 2 for spec problems, 3 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Spec(_) | RunError::UnknownSubcommand(_) => 2,
            RunError::Numerical(_) => 3,
        }
    }
}

fn num<E: std::fmt::Display>(e: E) -> RunError {
    RunError::Numerical(e.to_string())
}

pub fn run_subcommand(name: &str, spec: &ExperimentSpec) -> Result<SweepResult, RunError> {
    spec.validate().map_err(|(key, message)| SpecError {
        message,
        line: None,
        key: Some(key),
        suggestion: None,
    })?;
    let mut extra = BTreeMap::new();
    let mut out = match name {
        "block-sweep" => block_sweep(spec)?,
        "gate-evolve" => gate_evolve(spec, &mut extra)?,
        "eps-sweep" => eps_sweep(spec)?,
        "bound-table" => bounds(spec)?,
        "tomo-roundtrip" => tomo_roundtrip(spec)?,
        "postselect" => postselect(spec, &mut extra)?,
        "calibrate" => calibrate(spec)?,
        "trajectories" => trajectories(spec, &mut extra)?,
        other => return Err(RunError::UnknownSubcommand(other.to_string())),
    };
    out.metadata.subcommand = name.to_string();
    out.metadata.spec_hash = spec.hash();
    out.metadata.seed = spec.sim.seed;
    out.metadata.version = env!("CARGO_PKG_VERSION").to_string();
    out.metadata.extra = extra;
    Ok(out)
}

fn append(into: &mut Option<SweepResult>, part: SweepResult) {
    match into {
        Some(acc) => acc.rows.extend(part.rows),
        None => *into = Some(part),
    }
}

fn block_sweep(spec: &ExperimentSpec) -> Result<SweepResult, RunError> {
    let b = &spec.protocol.block;
    let mut acc = None;
    for &rabi in &b.rabi_mhz {
        for &model in &b.models {
            append(&mut acc, blocking_experiment(&spec.device, rabi, &b.eps_mhz, model, &spec.sim).map_err(num)?);
        }
    }
    Ok(acc.expect("non-empty lists"))
}

/// Stark shifts for the spec's drives: explicit table, calibration or zeros.
fn stark_for(spec: &ExperimentSpec, choice: StarkChoice) -> Result<StarkShifts, RunError> {
    if let Some(s) = spec.drives.stark {
        return Ok(s);
    }
    match choice {
        StarkChoice::Zero => Ok(StarkShifts::default()),
        StarkChoice::Calibrated => {
            calibrate_stark(&spec.device, spec.drives.zeno_eps_mhz, spec.drives.symmetric_on, &spec.sim).map_err(num)
        }
    }
}

fn gate_protocol(spec: &ExperimentSpec, model: Model, choice: StarkChoice) -> Result<GateProtocol, RunError> {
    let stark = if model == Model::FullCavity {
        stark_for(spec, choice)?
    } else {
        StarkShifts::default()
    };
    let drives = DriveConfig {
        stark: Some(stark),
        ..spec.drives.clone()
    };
    Ok(GateProtocol::new(spec.device.clone(), drives, model, spec.sim.clone()))
}

fn stark_json(s: &StarkShifts) -> serde_json::Value {
    serde_json::to_value(s).expect("stark shifts serialize")
}

fn gate_evolve(spec: &ExperimentSpec, extra: &mut BTreeMap<String, serde_json::Value>) -> Result<SweepResult, RunError> {
    let g = &spec.protocol.gate;
    let protocol = gate_protocol(spec, g.model, g.stark)?;
    let states = run_gate(&protocol).map_err(num)?;
    let layout = SpaceLayout::qutrit_qubit();
    let labels: Vec<String> = (0..layout.total_dim()).map(|k| layout.basis_label(k)).collect();
    let mut out = SweepResult::new(&["t_us", "row", "col", "re", "im"]);
    for (&t, s) in protocol.sample_times.iter().zip(&states) {
        let m = s.density_matrix();
        for r in 0..m.nrows() {
            for c in 0..m.ncols() {
                out.push(vec![
                    t.into(),
                    labels[r].as_str().into(),
                    labels[c].as_str().into(),
                    m[(r, c)].re.into(),
                    m[(r, c)].im.into(),
                ]);
            }
        }
    }
    if let Some(last) = states.last() {
        let (f, c) = gate_scores(last).map_err(num)?;
        extra.insert("final_fidelity".into(), f.into());
        extra.insert("final_concurrence".into(), c.into());
    }
    extra.insert("model".into(), g.model.as_str().into());
    extra.insert("stark".into(), stark_json(&protocol.drives.stark_or_zero()));
    Ok(out)
}

fn eps_sweep(spec: &ExperimentSpec) -> Result<SweepResult, RunError> {
    let e = &spec.protocol.eps_sweep;
    let mode = match (spec.drives.stark, e.stark) {
        (Some(s), _) => StarkMode::Fixed(s),
        (None, StarkChoice::Calibrated) => StarkMode::Calibrated,
        (None, StarkChoice::Zero) => StarkMode::Zero,
    };
    let mut acc = None;
    for &rabi in &e.rabi_mhz {
        for &coh in &e.coherence {
            append(&mut acc, epsilon_sweep(&spec.device, rabi, &e.eps_mhz, coh, mode, &spec.sim).map_err(num)?);
        }
    }
    Ok(acc.expect("non-empty lists"))
}

fn bounds(spec: &ExperimentSpec) -> Result<SweepResult, RunError> {
    let b = &spec.protocol.bounds;
    let cfg = EstimateConfig {
        seed: b.estimate.seed.wrapping_add(spec.sim.seed),
        ..b.estimate
    };
    bound_table(&b.ratios, b.rabi_mhz, b.lower_estimate.then_some(&cfg)).map_err(num)
}

fn tomo_roundtrip(spec: &ExperimentSpec) -> Result<SweepResult, RunError> {
    let t = &spec.protocol.tomo;
    let set = build_observable_set();
    let mut out = SweepResult::new(&["state", "case", "shots", "trace_distance", "trace_estimate"]);
    let d = set.observables[0].matrix.nrows();
    for k in 0..t.n_states {
        let seed = spec.sim.seed.wrapping_add(k as u64);
        let rho = random_full_rank_state(seed);
        let exact = simulate_tomography(&rho, &set, 0, 0).map_err(num)?;
        let rec = mle_reconstruct(&exact, &set).map_err(num)?;
        let td = trace_distance(&rec.state.density_matrix(), &rho.density_matrix());
        out.push(vec![k.into(), "exact".into(), 0usize.into(), td.into(), rec.trace_estimate.into()]);

        let s = t.deficit_scale;
        let rec = mle_reconstruct(&exact.scaled(s), &set).map_err(num)?;
        let expect = rho.density_matrix() * C64::new(s, 0.0) + CMatrix::identity(d, d) * C64::new((1.0 - s) / d as f64, 0.0);
        let td = trace_distance(&rec.state.density_matrix(), &expect);
        out.push(vec![k.into(), "deficit".into(), 0usize.into(), td.into(), rec.trace_estimate.into()]);

        if t.shots > 0 {
            let data = simulate_tomography(&rho, &set, t.shots, seed).map_err(num)?;
            let rec = mle_reconstruct(&data, &set).map_err(num)?;
            let td = trace_distance(&rec.state.density_matrix(), &rho.density_matrix());
            out.push(vec![k.into(), "sampled".into(), (t.shots as usize).into(), td.into(), rec.trace_estimate.into()]);
        }
    }
    Ok(out)
}

fn postselect(spec: &ExperimentSpec, extra: &mut BTreeMap<String, serde_json::Value>) -> Result<SweepResult, RunError> {
    let ps = &spec.protocol.postselect;
    let protocol = gate_protocol(spec, Model::FullCavity, ps.stark)?;
    let records = gate_trajectories(&protocol, ps.n_traj, spec.sim.seed).map_err(num)?;
    let target = gate_target(&SpaceLayout::qutrit_qubit()).map_err(num)?;
    let mut out = SweepResult::new(&["detection_fidelity", "fraction", "kept", "fidelity", "concurrence"]);
    for &fid in &ps.detection_fidelity {
        let shots = gate_shots(&protocol, &records, fid, spec.sim.seed).map_err(num)?;
        let table = postselect_analysis(&shots, &target, &ps.fractions).map_err(num)?;
        for row in table.rows {
            let mut r = vec![fid.into()];
            r.extend(row);
            out.push(r);
        }
    }
    extra.insert("escape_fraction".into(), escape_fraction(&records).into());
    extra.insert("stark".into(), stark_json(&protocol.drives.stark_or_zero()));
    Ok(out)
}

fn calibrate(spec: &ExperimentSpec) -> Result<SweepResult, RunError> {
    let c = &spec.protocol.calibrate;
    let mut out = SweepResult::new(&["eps_mhz", "symmetric_on", "ge1_mhz", "ge2_mhz", "ef_mhz"]);
    for &sym in &c.symmetric {
        let table = build_stark_table(&spec.device, &c.eps_mhz, sym, &c.ramsey, &spec.sim).map_err(num)?;
        for (e, s) in table.eps_mhz.iter().zip(&table.shifts) {
            out.push(vec![(*e).into(), sym.into(), s.ge1_mhz.into(), s.ge2_mhz.into(), s.ef_mhz.into()]);
        }
    }
    Ok(out)
}

fn escape_fraction(records: &[TrajectoryRecord]) -> f64 {
    records.iter().filter(|r| r.escaped).count() as f64 / records.len().max(1) as f64
}

fn trajectories(spec: &ExperimentSpec, extra: &mut BTreeMap<String, serde_json::Value>) -> Result<SweepResult, RunError> {
    let tr = &spec.protocol.trajectories;
    let mut protocol = gate_protocol(spec, Model::FullCavity, tr.stark)?;
    protocol.sample_times = vec![protocol.gate_time()];
    let problem = gate_problem(&protocol).map_err(num)?;
    let master = evolve_master(&problem).map_err(num)?;
    let full = master.last().ok_or_else(|| RunError::Numerical("no samples".into()))?;
    let reference = reduce(full).map_err(num)?;
    let n_max = *tr.n_traj.iter().max().expect("non-empty list");
    let records = gate_trajectories(&protocol, n_max, spec.sim.seed).map_err(num)?;
    let mut out = SweepResult::new(&["n_traj", "trace_distance", "escape_fraction"]);
    for &n in &tr.n_traj {
        let avg = ensemble_average(&records[..n], full.layout()).map_err(num)?;
        let red: QuantumState = reduce(&avg.state).map_err(num)?;
        let td = trace_distance(&red.density_matrix(), &reference.density_matrix());
        out.push(vec![n.into(), td.into(), escape_fraction(&records[..n]).into()]);
    }
    extra.insert("stark".into(), stark_json(&protocol.drives.stark_or_zero()));
    Ok(out)
}
