//! Physical model of the qutrit ⊗ qubit ⊗ cavity device.
//!
//! Frame: every level rotates at its bare frequency and the cavity at ω_gg,
//! so drive phases appear explicitly. Layouts may omit qutrit or qubit levels
//! ("pinned" layouts); builders then drop every term that touches a missing level.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lindblad::{Hamiltonian, Modulated};
use crate::qcore::{CMatrix, Factor, Operator, QcoreError, SpaceLayout, C64, I, ONE};
use crate::{ang, cyc};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DeviceError {
    #[error("layout must be qutrit ⊗ qubit ⊗ cavity: {0}")]
    Layout(String),
    #[error("invalid device parameter {name}: {reason}")]
    Param { name: &'static str, reason: String },
    #[error("negative pure-dephasing rate {rate:.4e} /µs on {transition}: T2* exceeds 2·T1")]
    Dephasing { transition: &'static str, rate: f64 },
    #[error("drives are on but no Stark-shift table was supplied")]
    MissingStark,
    #[error(transparent)]
    Qcore(#[from] QcoreError),
}

/// Device constants. Frequencies in MHz (cyclic), times in µs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DeviceParams {
    pub chi1_mhz: f64,
    pub chi2_mhz: f64,
    pub chif_mhz: f64,
    pub kappa_mhz: f64,
    pub alpha1_mhz: f64,
    pub alpha2_mhz: f64,
    pub self_kerr_mhz: f64,
    pub t1_eg_us: f64,
    pub t1_fe_us: f64,
    pub t2s_eg_us: f64,
    pub t2s_fe_us: f64,
    pub t1_q2_us: f64,
    pub t2s_q2_us: f64,
    pub residual_zz_khz: f64,
    pub residual_zz_on: bool,
}

impl Default for DeviceParams {
    fn default() -> Self {
        Self {
            chi1_mhz: -4.25,
            chi2_mhz: -4.35,
            chif_mhz: -10.0,
            kappa_mhz: 0.15,
            alpha1_mhz: -175.0,
            alpha2_mhz: -225.0,
            self_kerr_mhz: 0.04,
            t1_eg_us: 52.0,
            t1_fe_us: 12.9,
            t2s_eg_us: 22.2,
            t2s_fe_us: 5.8,
            t1_q2_us: 18.9,
            t2s_q2_us: 15.7,
            residual_zz_khz: 30.0,
            residual_zz_on: false,
        }
    }
}

impl DeviceParams {
    /// Same device with every coherence time set to infinity.
    pub fn without_decoherence(&self) -> Self {
        Self {
            t1_eg_us: f64::INFINITY,
            t1_fe_us: f64::INFINITY,
            t2s_eg_us: f64::INFINITY,
            t2s_fe_us: f64::INFINITY,
            t1_q2_us: f64::INFINITY,
            t2s_q2_us: f64::INFINITY,
            ..self.clone()
        }
    }

    pub fn kappa(&self) -> f64 {
        ang(self.kappa_mhz)
    }

    pub fn validate(&self) -> Result<(), DeviceError> {
        let finite = [
            ("chi1_mhz", self.chi1_mhz),
            ("chi2_mhz", self.chi2_mhz),
            ("chif_mhz", self.chif_mhz),
            ("alpha1_mhz", self.alpha1_mhz),
            ("alpha2_mhz", self.alpha2_mhz),
            ("self_kerr_mhz", self.self_kerr_mhz),
            ("residual_zz_khz", self.residual_zz_khz),
        ];
        for (name, v) in finite {
            if !v.is_finite() {
                return Err(DeviceError::Param {
                    name,
                    reason: format!("must be finite, got {v}"),
                });
            }
        }
        if !(self.kappa_mhz > 0.0 && self.kappa_mhz.is_finite()) {
            return Err(DeviceError::Param {
                name: "kappa_mhz",
                reason: format!("kappa > 0 required, got {}", self.kappa_mhz),
            });
        }
        let times = [
            ("t1_eg_us", self.t1_eg_us),
            ("t1_fe_us", self.t1_fe_us),
            ("t2s_eg_us", self.t2s_eg_us),
            ("t2s_fe_us", self.t2s_fe_us),
            ("t1_q2_us", self.t1_q2_us),
            ("t2s_q2_us", self.t2s_q2_us),
        ];
        for (name, v) in times {
            if !(v > 0.0) {
                return Err(DeviceError::Param {
                    name,
                    reason: format!("coherence time must be > 0 or inf, got {v}"),
                });
            }
        }
        Ok(())
    }

    /// Non-fatal remarks, e.g. dispersive shifts not well above the linewidth.
    pub fn warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (name, chi) in [
            ("chi1", self.chi1_mhz),
            ("chi2", self.chi2_mhz),
            ("chif", self.chif_mhz),
        ] {
            if chi.abs() < 10.0 * self.kappa_mhz {
                out.push(format!(
                    "|{name}| = {} MHz is not much larger than kappa = {} MHz",
                    chi.abs(),
                    self.kappa_mhz
                ));
            }
        }
        out
    }
}

/// Stark shifts of the driven transitions, MHz.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StarkShifts {
    pub ge1_mhz: f64,
    pub ge2_mhz: f64,
    pub ef_mhz: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum RabiTransition {
    /// qutrit e ↔ f, the gate drive
    #[default]
    Ef,
    /// qutrit g ↔ e, used by the blocking experiment
    Ge,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ZenoTarget {
    /// cavity line of |fe⟩, offset χ_f + χ₂
    #[default]
    Fe,
    /// cavity line of |eg⟩, offset χ₁
    Eg,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DriveConfig {
    pub rabi_mhz: f64,
    pub zeno_eps_mhz: f64,
    pub symmetric_on: bool,
    pub stark: Option<StarkShifts>,
    pub gate_time_us: Option<f64>,
    pub rabi_transition: RabiTransition,
    pub zeno_target: ZenoTarget,
}

impl Default for DriveConfig {
    fn default() -> Self {
        Self {
            rabi_mhz: 1.0,
            zeno_eps_mhz: 2.0,
            symmetric_on: true,
            stark: None,
            gate_time_us: None,
            rabi_transition: RabiTransition::Ef,
            zeno_target: ZenoTarget::Fe,
        }
    }
}

impl DriveConfig {
    /// 1/Ω_R in µs unless overridden; a full 2π Rabi period.
    pub fn gate_time(&self) -> f64 {
        self.gate_time_us.unwrap_or(1.0 / self.rabi_mhz)
    }

    pub fn stark_or_zero(&self) -> StarkShifts {
        self.stark.unwrap_or_default()
    }

    pub fn validate(&self) -> Result<(), DeviceError> {
        if !(self.zeno_eps_mhz >= 0.0) || !self.zeno_eps_mhz.is_finite() {
            return Err(DeviceError::Param {
                name: "zeno_eps_mhz",
                reason: format!("must be finite and >= 0, got {}", self.zeno_eps_mhz),
            });
        }
        if !(self.rabi_mhz >= 0.0) || !self.rabi_mhz.is_finite() {
            return Err(DeviceError::Param {
                name: "rabi_mhz",
                reason: format!("must be finite and >= 0, got {}", self.rabi_mhz),
            });
        }
        if let Some(t) = self.gate_time_us {
            if !(t > 0.0) || !t.is_finite() {
                return Err(DeviceError::Param {
                    name: "gate_time_us",
                    reason: format!("must be > 0, got {t}"),
                });
            }
        }
        Ok(())
    }
}

/// Cavity drive detunings from ω_gg, MHz.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DriveFrequencies {
    pub omega_fe_offset: f64,
    pub omega_sym_offset: f64,
}

pub fn drive_frequencies(params: &DeviceParams) -> DriveFrequencies {
    DriveFrequencies {
        omega_fe_offset: params.chif_mhz + params.chi2_mhz,
        omega_sym_offset: params.chi2_mhz - params.chif_mhz,
    }
}

fn zeno_offset(params: &DeviceParams, target: ZenoTarget) -> f64 {
    match target {
        ZenoTarget::Fe => drive_frequencies(params).omega_fe_offset,
        ZenoTarget::Eg => params.chi1_mhz,
    }
}

/// qutrit{levels} ⊗ qubit{levels} ⊗ cavity(n_fock). Level lists must be
/// ordered subsets of g,e,f and g,e.
pub fn device_layout(
    qutrit: &[&str],
    qubit: &[&str],
    n_fock: usize,
) -> Result<SpaceLayout, DeviceError> {
    let layout = SpaceLayout::new(vec![
        Factor::new("qutrit", qutrit),
        Factor::new("qubit", qubit),
        Factor::cavity(n_fock),
    ])?;
    DeviceBasis::new(&layout)?;
    Ok(layout)
}

/// Physical levels of every basis index of a device layout.
pub(crate) struct DeviceBasis {
    layout: SpaceLayout,
    /// (qutrit level 0..3, qubit level 0..2, photon number)
    levels: Vec<[usize; 3]>,
    index: HashMap<[usize; 3], usize>,
}

impl DeviceBasis {
    pub(crate) fn new(layout: &SpaceLayout) -> Result<Self, DeviceError> {
        let names: Vec<&str> = layout.factors().iter().map(|f| f.name.as_str()).collect();
        if names != ["qutrit", "qubit", "cavity"] {
            return Err(DeviceError::Layout(format!("factors {names:?}")));
        }
        let map_levels = |f: &Factor, allowed: &[&str]| -> Result<Vec<usize>, DeviceError> {
            let mut out = Vec::new();
            for l in &f.labels {
                let p = allowed.iter().position(|a| a == l).ok_or_else(|| {
                    DeviceError::Layout(format!("unknown {} level {l:?}", f.name))
                })?;
                if out.last().is_some_and(|&q| q >= p) {
                    return Err(DeviceError::Layout(format!(
                        "{} levels must be ordered and distinct",
                        f.name
                    )));
                }
                out.push(p);
            }
            Ok(out)
        };
        let qt = map_levels(layout.factor(0), &["g", "e", "f"])?;
        let qb = map_levels(layout.factor(1), &["g", "e"])?;
        let cav = layout.factor(2);
        for (n, l) in cav.labels.iter().enumerate() {
            if *l != n.to_string() {
                return Err(DeviceError::Layout(format!("cavity label {l:?} at position {n}")));
            }
        }
        let mut levels = Vec::with_capacity(layout.total_dim());
        let mut index = HashMap::new();
        for k in 0..layout.total_dim() {
            let l = layout.levels_of(k);
            let phys = [qt[l[0]], qb[l[1]], l[2]];
            index.insert(phys, k);
            levels.push(phys);
        }
        Ok(Self {
            layout: layout.clone(),
            levels,
            index,
        })
    }

    pub(crate) fn dim(&self) -> usize {
        self.levels.len()
    }

    pub(crate) fn n_fock(&self) -> usize {
        self.layout.factor(2).dim()
    }

    pub(crate) fn levels(&self, k: usize) -> [usize; 3] {
        self.levels[k]
    }

    pub(crate) fn find(&self, phys: [usize; 3]) -> Option<usize> {
        self.index.get(&phys).copied()
    }

    /// Matrix with entries `(find(map(level)), k) = value` for every basis index k.
    fn build(&self, map: impl Fn([usize; 3]) -> Option<([usize; 3], C64)>) -> CMatrix {
        let d = self.dim();
        let mut m = CMatrix::zeros(d, d);
        for k in 0..d {
            if let Some((target, v)) = map(self.levels[k]) {
                if let Some(r) = self.find(target) {
                    m[(r, k)] += v;
                }
            }
        }
        m
    }

    pub(crate) fn annihilation(&self) -> CMatrix {
        self.build(|[q, b, n]| (n > 0).then(|| ([q, b, n - 1], C64::new((n as f64).sqrt(), 0.0))))
    }

    /// |to⟩⟨from| on the qutrit factor.
    pub(crate) fn qutrit_transition(&self, to: usize, from: usize) -> CMatrix {
        self.build(|[q, b, n]| (q == from).then_some(([to, b, n], ONE)))
    }

    /// |to⟩⟨from| on the qubit factor.
    pub(crate) fn qubit_transition(&self, to: usize, from: usize) -> CMatrix {
        self.build(|[q, b, n]| (b == from).then_some(([q, to, n], ONE)))
    }

    pub(crate) fn has_qutrit(&self, level: usize) -> bool {
        self.levels.iter().any(|l| l[0] == level)
    }

    pub(crate) fn has_qubit(&self, level: usize) -> bool {
        self.levels.iter().any(|l| l[1] == level)
    }
}

const G: usize = 0;
const E: usize = 1;
const F: usize = 2;

/// Static diagonal of the rotating-frame Hamiltonian, rad/µs.
fn static_diagonal(params: &DeviceParams, stark: &StarkShifts, basis: &DeviceBasis) -> Vec<f64> {
    let chi = [0.0, ang(params.chi1_mhz), ang(params.chif_mhz)];
    let chi2 = ang(params.chi2_mhz);
    let kerr = ang(params.self_kerr_mhz);
    let alpha1 = ang(params.alpha1_mhz);
    let d1 = ang(stark.ge1_mhz);
    let d2 = ang(stark.ge2_mhz);
    let zz = if params.residual_zz_on {
        ang(params.residual_zz_khz * 1e-3)
    } else {
        0.0
    };
    (0..basis.dim())
        .map(|k| {
            let [q, b, n] = basis.levels(k);
            let n = n as f64;
            let mut v = (chi[q] + if b == E { chi2 } else { 0.0 }) * n + 0.5 * kerr * n * n;
            if q == F {
                v += alpha1;
            }
            v += match q {
                G => 0.5 * d1,
                E => -0.5 * d1,
                _ => 0.0,
            };
            v += if b == G { 0.5 * d2 } else { -0.5 * d2 };
            if q == E && b == E {
                v += zz;
            }
            v
        })
        .collect()
}

fn diag_operator(layout: &SpaceLayout, diag: &[f64]) -> Operator {
    Operator::diagonal(layout, diag).expect("diagonal length matches layout")
}

/// H_disp = (χ₁|e⟩⟨e| + χ₂|e₂⟩⟨e₂| + χ_f|f⟩⟨f|)a†a + (α_c/2)(a†a)² + α₁|f⟩⟨f|, rad/µs.
pub fn build_dispersive_h(params: &DeviceParams, layout: &SpaceLayout) -> Result<Operator, DeviceError> {
    let basis = DeviceBasis::new(layout)?;
    Ok(diag_operator(
        layout,
        &static_diagonal(params, &StarkShifts::default(), &basis),
    ))
}

fn drive_terms(params: &DeviceParams, drives: &DriveConfig, basis: &DeviceBasis) -> Vec<Modulated> {
    let eps = ang(drives.zeno_eps_mhz);
    if eps == 0.0 {
        return Vec::new();
    }
    let a = basis.annihilation();
    let adag = a.adjoint();
    let mut offsets = vec![zeno_offset(params, drives.zeno_target)];
    if drives.symmetric_on {
        offsets.push(drive_frequencies(params).omega_sym_offset);
    }
    let mut out = Vec::new();
    for off in offsets {
        let w = ang(off);
        // iε(a e^{iwt} − a† e^{−iwt})
        out.push(Modulated::new(a.clone(), I * eps, w));
        out.push(Modulated::new(adag.clone(), -I * eps, -w));
    }
    out
}

fn rabi_terms(params: &DeviceParams, drives: &DriveConfig, basis: &DeviceBasis) -> Vec<Modulated> {
    let om = ang(drives.rabi_mhz);
    if om == 0.0 {
        return Vec::new();
    }
    let (lo, hi, w) = match drives.rabi_transition {
        RabiTransition::Ef => (
            E,
            F,
            ang(params.alpha1_mhz + drives.stark_or_zero().ef_mhz),
        ),
        RabiTransition::Ge => (G, E, 0.0),
    };
    if !basis.has_qutrit(lo) || !basis.has_qutrit(hi) {
        return Vec::new();
    }
    // i(Ω/2)(e^{iwt}|lo⟩⟨hi| − e^{−iwt}|hi⟩⟨lo|)
    vec![
        Modulated::new(basis.qutrit_transition(lo, hi), I * (0.5 * om), w),
        Modulated::new(basis.qutrit_transition(hi, lo), -I * (0.5 * om), -w),
    ]
}

/// Cavity drives: Zeno tone plus optional symmetric tone, evaluated at `t` (µs).
pub fn build_drive_terms(
    params: &DeviceParams,
    drives: &DriveConfig,
    layout: &SpaceLayout,
    t: f64,
) -> Result<Operator, DeviceError> {
    let basis = DeviceBasis::new(layout)?;
    let h = Hamiltonian::new(layout.clone(), vec![0.0; basis.dim()], drive_terms(params, drives, &basis));
    Ok(h.at(t))
}

/// Structured time-dependent Hamiltonian of the full simulation.
pub fn full_hamiltonian(
    params: &DeviceParams,
    drives: &DriveConfig,
    layout: &SpaceLayout,
) -> Result<Hamiltonian, DeviceError> {
    params.validate()?;
    drives.validate()?;
    if drives.zeno_eps_mhz > 0.0 && drives.stark.is_none() {
        return Err(DeviceError::MissingStark);
    }
    let basis = DeviceBasis::new(layout)?;
    let diag = static_diagonal(params, &drives.stark_or_zero(), &basis);
    let mut terms = drive_terms(params, drives, &basis);
    terms.extend(rabi_terms(params, drives, &basis));
    Ok(Hamiltonian::new(layout.clone(), diag, terms))
}

/// Dense full Hamiltonian at time `t` (µs).
pub fn build_full_sim_h(
    params: &DeviceParams,
    drives: &DriveConfig,
    layout: &SpaceLayout,
    t: f64,
) -> Result<Operator, DeviceError> {
    Ok(full_hamiltonian(params, drives, layout)?.at(t))
}

fn pure_dephasing(t1: f64, t2s: f64, transition: &'static str) -> Result<f64, DeviceError> {
    let rate = 1.0 / t2s - 0.5 / t1;
    if rate < -1e-12 {
        return Err(DeviceError::Dephasing { transition, rate });
    }
    Ok(rate.max(0.0))
}

/// Lindblad operators: √κ a, √(1/T₁)σ₋ per transition, √(γ_φ/2)σ_z per transition.
/// Transitions whose levels are absent from the layout, and zero rates, are skipped.
pub fn build_collapse_ops(params: &DeviceParams, layout: &SpaceLayout) -> Result<Vec<Operator>, DeviceError> {
    params.validate()?;
    let basis = DeviceBasis::new(layout)?;
    let mut ops = Vec::new();
    let push = |ops: &mut Vec<Operator>, rate: f64, m: CMatrix| {
        if rate > 0.0 && m.iter().any(|z| z.norm() > 0.0) {
            ops.push(Operator::new(layout.clone(), m * C64::new(rate.sqrt(), 0.0)).expect("layout dim"));
        }
    };
    if basis.n_fock() > 1 {
        push(&mut ops, params.kappa(), basis.annihilation());
    }
    type Transition = (usize, usize, f64, f64, &'static str, bool);
    let transitions: [Transition; 3] = [
        (E, F, params.t1_fe_us, params.t2s_fe_us, "qutrit f-e", true),
        (G, E, params.t1_eg_us, params.t2s_eg_us, "qutrit e-g", true),
        (G, E, params.t1_q2_us, params.t2s_q2_us, "qubit e-g", false),
    ];
    for (lo, hi, t1, t2s, name, on_qutrit) in transitions {
        let present = if on_qutrit {
            basis.has_qutrit(lo) && basis.has_qutrit(hi)
        } else {
            basis.has_qubit(lo) && basis.has_qubit(hi)
        };
        if !present {
            continue;
        }
        let gphi = pure_dephasing(t1, t2s, name)?;
        let (lower, p_hi, p_lo) = if on_qutrit {
            (
                basis.qutrit_transition(lo, hi),
                basis.qutrit_transition(hi, hi),
                basis.qutrit_transition(lo, lo),
            )
        } else {
            (
                basis.qubit_transition(lo, hi),
                basis.qubit_transition(hi, hi),
                basis.qubit_transition(lo, lo),
            )
        };
        push(&mut ops, 1.0 / t1, lower);
        push(&mut ops, 0.5 * gphi, p_hi - p_lo);
    }
    Ok(ops)
}

/// MHz → rad/µs → MHz, exposed for the unit round-trip check.
pub fn unit_round_trip(mhz: f64) -> f64 {
    cyc(ang(mhz))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qcore::hermiticity_defect;

    fn full(n: usize) -> SpaceLayout {
        SpaceLayout::device(n)
    }

    #[test]
    fn dispersive_diagonal_values() {
        let p = DeviceParams::default();
        let l = full(4);
        let h = build_dispersive_h(&p, &l).unwrap();
        let m = h.matrix();
        let kerr = ang(p.self_kerr_mhz);
        let gg1 = l.index_of(&["g", "g", "1"]).unwrap();
        assert!((m[(gg1, gg1)].re - 0.5 * kerr).abs() < 1e-12);
        let eg1 = l.index_of(&["e", "g", "1"]).unwrap();
        assert!((m[(eg1, eg1)].re - (ang(-4.25) + 0.5 * kerr)).abs() < 1e-12);
        let fe2 = l.index_of(&["f", "e", "2"]).unwrap();
        let want = ang(2.0 * (p.chif_mhz + p.chi2_mhz) + p.alpha1_mhz + 0.5 * p.self_kerr_mhz * 4.0);
        assert!((m[(fe2, fe2)].re - want).abs() < 1e-10);
        assert_eq!(hermiticity_defect(m), 0.0);
    }

    #[test]
    fn zeno_and_symmetric_offsets() {
        let f = drive_frequencies(&DeviceParams::default());
        assert!((f.omega_fe_offset + 14.35).abs() < 1e-12);
        assert!((f.omega_sym_offset - 5.65).abs() < 1e-12);
        let degenerate = DeviceParams {
            chi1_mhz: -6.0,
            chi2_mhz: -6.0,
            chif_mhz: -6.0,
            ..Default::default()
        };
        // symmetric tone lands on the bare cavity line of the rotating frame
        assert_eq!(drive_frequencies(&degenerate).omega_sym_offset, 0.0);
    }

    #[test]
    fn drive_terms_basic() {
        let p = DeviceParams::default();
        let l = full(5);
        let zero = DriveConfig {
            zeno_eps_mhz: 0.0,
            ..Default::default()
        };
        assert!(build_drive_terms(&p, &zero, &l, 0.3).unwrap().matrix().iter().all(|z| z.norm() == 0.0));

        let d = DriveConfig {
            zeno_eps_mhz: 1.5,
            symmetric_on: false,
            ..Default::default()
        };
        let h0 = build_drive_terms(&p, &d, &l, 0.0).unwrap();
        let basis = DeviceBasis::new(&l).unwrap();
        let a = basis.annihilation();
        let want = (&a - a.adjoint()) * (I * ang(1.5));
        assert!((h0.matrix() - want).norm() < 1e-12);

        let sym = DriveConfig {
            symmetric_on: true,
            ..d
        };
        for t in [0.013, 0.77, 3.1] {
            let h = build_drive_terms(&p, &sym, &l, t).unwrap();
            assert!(h.hermiticity_defect() < 1e-12);
        }
    }

    #[test]
    fn full_h_reductions() {
        let p = DeviceParams::default();
        let l = full(4);
        let off = DriveConfig {
            rabi_mhz: 0.0,
            zeno_eps_mhz: 0.0,
            stark: Some(StarkShifts::default()),
            ..Default::default()
        };
        let h = build_full_sim_h(&p, &off, &l, 0.4).unwrap();
        assert_eq!(h.matrix(), build_dispersive_h(&p, &l).unwrap().matrix());

        let rabi = DriveConfig {
            rabi_mhz: 1.0,
            ..off.clone()
        };
        let h = build_full_sim_h(&p, &rabi, &l, 0.0).unwrap();
        for n in 0..4 {
            let n = n.to_string();
            let fg = l.index_of(&["f", "g", &n]).unwrap();
            let eg = l.index_of(&["e", "g", &n]).unwrap();
            assert!((h.matrix()[(fg, eg)].norm() - ang(0.5)).abs() < 1e-12);
        }

        let missing = DriveConfig {
            zeno_eps_mhz: 1.0,
            stark: None,
            ..Default::default()
        };
        assert_eq!(
            build_full_sim_h(&p, &missing, &l, 0.0).unwrap_err(),
            DeviceError::MissingStark
        );
    }

    #[test]
    fn frozen_state_energy_is_real() {
        let p = DeviceParams::default();
        let l = full(3);
        let d = DriveConfig {
            stark: Some(StarkShifts {
                ge1_mhz: 0.1,
                ge2_mhz: -0.05,
                ef_mhz: 0.3,
            }),
            ..Default::default()
        };
        let v = crate::qcore::CVector::from_fn(l.total_dim(), |k, _| C64::new((k as f64).sin(), (k as f64 * 0.3).cos()));
        let v = &v / C64::new(v.norm(), 0.0);
        for t in [0.0, 0.11, 0.5, 0.93] {
            let h = build_full_sim_h(&p, &d, &l, t).unwrap();
            let e = (v.adjoint() * h.matrix() * &v)[(0, 0)];
            assert!(e.im.abs() < 1e-10 * e.norm().max(1.0));
        }
    }

    #[test]
    fn collapse_operators() {
        let l = full(3);
        let inf = DeviceParams::default().without_decoherence();
        let ops = build_collapse_ops(&inf, &l).unwrap();
        assert_eq!(ops.len(), 1);
        let basis = DeviceBasis::new(&l).unwrap();
        let want = basis.annihilation() * C64::new(ang(0.15).sqrt(), 0.0);
        assert!((ops[0].matrix() - want).norm() < 1e-12);

        let p = DeviceParams::default();
        let gphi = pure_dephasing(p.t1_q2_us, p.t2s_q2_us, "q").unwrap();
        assert!((gphi - (1.0 / 15.7 - 1.0 / 37.8)).abs() < 1e-15);
        assert!((gphi - 0.0372).abs() < 1e-4);
        // cavity + 3 relaxation + 3 dephasing
        assert_eq!(build_collapse_ops(&p, &l).unwrap().len(), 7);

        let bad = DeviceParams {
            t2s_q2_us: 40.0,
            ..Default::default()
        };
        assert!(matches!(build_collapse_ops(&bad, &l), Err(DeviceError::Dephasing { .. })));
    }

    #[test]
    fn pinned_layout_drops_missing_levels() {
        let p = DeviceParams::default();
        let l = device_layout(&["g", "e"], &["g"], 3).unwrap();
        // cavity, qutrit e-g relaxation and dephasing only
        assert_eq!(build_collapse_ops(&p, &l).unwrap().len(), 3);
        assert!(device_layout(&["e", "g"], &["g"], 3).is_err());
        assert!(device_layout(&["g", "x"], &["g"], 3).is_err());
    }

    #[test]
    fn invalid_params() {
        let p = DeviceParams {
            kappa_mhz: -1.0,
            ..Default::default()
        };
        assert!(matches!(p.validate(), Err(DeviceError::Param { name: "kappa_mhz", .. })));
        let close = DeviceParams {
            chi1_mhz: -0.5,
            ..Default::default()
        };
        assert_eq!(close.warnings().len(), 1);
    }

    #[test]
    fn unit_round_trip_exact() {
        for v in [-175.0, -4.25, 0.15, 0.04, 14.35] {
            assert!((unit_round_trip(v) - v).abs() <= 1e-12 * v.abs());
        }
    }
}
