//! Drive side effects: steady-state cavity response, cross-Kerr phase and
//! dephasing rates, and Stark shifts from simulated Ramsey experiments.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::device::{drive_frequencies, DeviceParams, DriveConfig, StarkShifts, ZenoTarget};
use crate::lindblad::evolve_master;
use crate::qcore::{CMatrix, C64};
use crate::zeno::{full_cavity_problem, reduce, stride_samples, SimConfig, ZenoError};
use crate::{ang, cyc};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CalibError {
    #[error(transparent)]
    Zeno(#[from] ZenoError),
    #[error("Ramsey fit residual {residual:.3e} rad exceeds {limit:.3e} rad for pair {pair}")]
    Fit { pair: String, residual: f64, limit: f64 },
    #[error("bad state label {0:?}: expected qutrit g/e/f followed by qubit g/e")]
    Label(String),
    #[error("{0}")]
    Invalid(String),
}

impl From<crate::device::DeviceError> for CalibError {
    fn from(e: crate::device::DeviceError) -> Self {
        CalibError::Zeno(e.into())
    }
}

impl From<crate::lindblad::SolverError> for CalibError {
    fn from(e: crate::lindblad::SolverError) -> Self {
        CalibError::Zeno(e.into())
    }
}

/// α = ε/(iΔ + κ/2); any consistent units.
pub fn steady_state_alpha(eps: f64, delta: f64, kappa: f64) -> C64 {
    C64::new(eps, 0.0) / C64::new(kappa / 2.0, delta)
}

/// Two-letter computational label, e.g. "fe" → (qutrit f, qubit e).
fn parse_state(label: &str) -> Result<(char, char), CalibError> {
    let mut it = label.chars();
    match (it.next(), it.next(), it.next()) {
        (Some(q @ ('g' | 'e' | 'f')), Some(b @ ('g' | 'e')), None) => Ok((q, b)),
        _ => Err(CalibError::Label(label.to_string())),
    }
}

/// Dispersive cavity pull of a qutrit ⊗ qubit state, MHz.
pub fn cavity_pull(params: &DeviceParams, label: &str) -> Result<f64, CalibError> {
    let (q, b) = parse_state(label)?;
    let chi = match q {
        'g' => 0.0,
        'e' => params.chi1_mhz,
        _ => params.chif_mhz,
    };
    Ok(chi + if b == 'e' { params.chi2_mhz } else { 0.0 })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RateDrive {
    Zeno,
    Symmetric,
    Total,
}

/// μ for one ordered pair (a, b). `None` rates mark a resonant pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateEntry {
    pub a: String,
    pub b: String,
    pub drive: RateDrive,
    /// rad/µs
    pub re_mu: Option<f64>,
    /// 1/µs
    pub im_mu: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossRates {
    pub entries: Vec<RateEntry>,
}

impl CrossRates {
    pub fn get(&self, a: &str, b: &str, drive: RateDrive) -> Option<&RateEntry> {
        self.entries.iter().find(|e| e.a == a && e.b == b && e.drive == drive)
    }

    pub fn re_mu(&self, a: &str, b: &str, drive: RateDrive) -> Option<f64> {
        self.get(a, b, drive)?.re_mu
    }

    pub fn im_mu(&self, a: &str, b: &str, drive: RateDrive) -> Option<f64> {
        self.get(a, b, drive)?.im_mu
    }
}

pub const STATES: [&str; 6] = ["gg", "ge", "eg", "ee", "fg", "fe"];

/// Re μ_ab = (ω_a−ω_b)ε²/(Δ_aΔ_b), Im μ_ab = (ω_a−ω_b)²ε²κ/(2Δ_a²Δ_b²) with
/// Δ_x = ω_x − ω_drive, in angular units. Re μ_{b,a} is the drive-induced
/// shift of the a→b transition.
pub fn cross_kerr_rates(params: &DeviceParams, drives: &DriveConfig) -> Result<CrossRates, CalibError> {
    let eps = ang(drives.zeno_eps_mhz);
    let kappa = params.kappa();
    let f = drive_frequencies(params);
    let zeno = match drives.zeno_target {
        ZenoTarget::Fe => f.omega_fe_offset,
        ZenoTarget::Eg => params.chi1_mhz,
    };
    let mut tones = vec![(RateDrive::Zeno, ang(zeno))];
    if drives.symmetric_on {
        tones.push((RateDrive::Symmetric, ang(f.omega_sym_offset)));
    }
    let pulls: Vec<f64> = STATES
        .iter()
        .map(|s| cavity_pull(params, s).map(ang))
        .collect::<Result<_, _>>()?;
    let mut entries = Vec::new();
    for (i, a) in STATES.iter().enumerate() {
        for (j, b) in STATES.iter().enumerate() {
            if i == j {
                continue;
            }
            let mut total = Some((0.0, 0.0));
            for &(drive, wd) in &tones {
                let (da, db) = (pulls[i] - wd, pulls[j] - wd);
                let dw = pulls[i] - pulls[j];
                let rate = if da == 0.0 || db == 0.0 {
                    None
                } else {
                    Some((
                        dw * eps * eps / (da * db),
                        dw * dw * eps * eps * kappa / (2.0 * da * da * db * db),
                    ))
                };
                total = total.zip(rate).map(|(t, r)| (t.0 + r.0, t.1 + r.1));
                entries.push(RateEntry {
                    a: a.to_string(),
                    b: b.to_string(),
                    drive,
                    re_mu: rate.map(|r| r.0),
                    im_mu: rate.map(|r| r.1),
                });
            }
            entries.push(RateEntry {
                a: a.to_string(),
                b: b.to_string(),
                drive: RateDrive::Total,
                re_mu: total.map(|r| r.0),
                im_mu: total.map(|r| r.1),
            });
        }
    }
    Ok(CrossRates { entries })
}

/// Analytic steady-state shift of the a→b transition, MHz.
pub fn analytic_shift(params: &DeviceParams, drives: &DriveConfig, a: &str, b: &str) -> Result<Option<f64>, CalibError> {
    Ok(cross_kerr_rates(params, drives)?.re_mu(b, a, RateDrive::Total).map(cyc))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RamseyConfig {
    pub artificial_mhz: f64,
    pub duration_us: f64,
    pub sample_ns: f64,
    /// fraction of the record, counted from the end, used in the phase fit
    pub fit_fraction: f64,
    pub residual_limit: f64,
}

impl Default for RamseyConfig {
    fn default() -> Self {
        Self {
            artificial_mhz: 5.0,
            duration_us: 4.0,
            sample_ns: 5.0,
            fit_fraction: 0.8,
            residual_limit: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RamseyFit {
    /// transition shift from its undriven value, MHz
    pub shift_mhz: f64,
    /// RMS residual of the linear phase fit, rad
    pub residual: f64,
    pub times: Vec<f64>,
    /// unwrapped phase after removing the reference frequency, rad
    pub phase: Vec<f64>,
}

fn ordered_levels(all: &[char], used: &[char]) -> Vec<&'static str> {
    all.iter()
        .filter(|c| used.contains(c))
        .map(|c| match c {
            'g' => "g",
            'e' => "e",
            _ => "f",
        })
        .collect()
}

/// Continuous branch of a wrapped phase sequence.
pub fn unwrap(phases: &[f64]) -> Vec<f64> {
    let tau = std::f64::consts::TAU;
    let mut out = Vec::with_capacity(phases.len());
    let mut offset = 0.0;
    for (k, &p) in phases.iter().enumerate() {
        if k > 0 {
            let d = p - phases[k - 1];
            offset -= tau * (d / tau).round();
        }
        out.push(p + offset);
    }
    out
}

/// Least-squares line y = m x + c; returns (m, c, rms residual).
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let m = sxy / sxx;
    let c = my - m * mx;
    let rss: f64 = x.iter().zip(y).map(|(a, b)| (b - m * a - c).powi(2)).sum();
    (m, c, (rss / n).sqrt())
}

/// Ramsey on the a→b transition with the cavity drives of `drives` on
/// (Rabi drive off). The cavity starts relaxed in the branch of `a`.
pub fn simulated_ramsey(
    params: &DeviceParams,
    drives: &DriveConfig,
    pair: (&str, &str),
    ramsey: &RamseyConfig,
    sim: &SimConfig,
) -> Result<RamseyFit, CalibError> {
    let (a, b) = pair;
    let (qa, ba) = parse_state(a)?;
    let (qb, bb) = parse_state(b)?;
    if a == b {
        return Err(CalibError::Invalid("Ramsey pair must be two distinct states".into()));
    }
    if !(ramsey.duration_us > 0.0 && ramsey.sample_ns > 0.0) || !(ramsey.fit_fraction > 0.0 && ramsey.fit_fraction <= 1.0) {
        return Err(CalibError::Invalid(format!("bad Ramsey settings {ramsey:?}")));
    }
    let qutrit = ordered_levels(&['g', 'e', 'f'], &[qa, qb]);
    let qubit = ordered_levels(&['g', 'e'], &[ba, bb]);
    let pos = |q: char, bq: char| {
        let iq = qutrit.iter().position(|l| l.starts_with(q)).unwrap();
        let ib = qubit.iter().position(|l| l.starts_with(bq)).unwrap();
        iq * qubit.len() + ib
    };
    let (ia, ib) = (pos(qa, ba), pos(qb, bb));
    let dq = qutrit.len() * qubit.len();
    let mut qq = CMatrix::zeros(dq, dq);
    for &r in &[ia, ib] {
        for &c in &[ia, ib] {
            qq[(r, c)] = C64::new(0.5, 0.0);
        }
    }
    let d = DriveConfig {
        rabi_mhz: 0.0,
        stark: Some(drives.stark_or_zero()),
        ..drives.clone()
    };
    let times = stride_samples(ramsey.duration_us, ramsey.sample_ns * 1e-3);
    let (sa, sb) = (&a[..1], &a[1..]);
    let problem = full_cavity_problem(
        params,
        &d,
        sim,
        &qutrit,
        &qubit,
        &qq,
        (sa, sb),
        ramsey.duration_us,
        times.clone(),
    )?;
    let states = evolve_master(&problem)?;
    let reference = if qa != qb { transition_reference(params, qa, qb) } else { 0.0 };
    // ρ_ba ∝ e^{−i(E_b−E_a)t}; demodulate at (reference − artificial)
    let w = ang(reference - ramsey.artificial_mhz);
    let wrapped: Vec<f64> = states
        .iter()
        .zip(&times)
        .map(|(s, &t)| {
            let r = reduce(s).map(|r| r.density_matrix()[(ib, ia)])?;
            Ok((r * C64::new(0.0, w * t).exp()).arg())
        })
        .collect::<Result<_, ZenoError>>()?;
    let phase = unwrap(&wrapped);
    let start = ((1.0 - ramsey.fit_fraction) * (times.len() - 1) as f64).floor() as usize;
    let (slope, _, residual) = linear_fit(&times[start..], &phase[start..]);
    if residual > ramsey.residual_limit {
        return Err(CalibError::Fit {
            pair: format!("{a}→{b}"),
            residual,
            limit: ramsey.residual_limit,
        });
    }
    let observed = -cyc(slope);
    Ok(RamseyFit {
        shift_mhz: observed - ramsey.artificial_mhz,
        residual,
        times,
        phase,
    })
}

/// Undriven transition frequency in the simulation frame, MHz.
fn transition_reference(params: &DeviceParams, from: char, to: char) -> f64 {
    let level = |c: char| match c {
        'f' => params.alpha1_mhz,
        _ => 0.0,
    };
    level(to) - level(from)
}

/// δ_ge1, δ_ge2 from uncompensated Ramseys on gg→eg and gg→ge, then δ_ef
/// from eg→fg with the ge compensation applied.
pub fn calibrate_stark(
    params: &DeviceParams,
    eps_mhz: f64,
    symmetric_on: bool,
    sim: &SimConfig,
) -> Result<StarkShifts, ZenoError> {
    calibrate_stark_with(params, eps_mhz, symmetric_on, &RamseyConfig::default(), sim).map_err(|e| match e {
        CalibError::Zeno(z) => z,
        other => ZenoError::Invalid(other.to_string()),
    })
}

pub fn calibrate_stark_with(
    params: &DeviceParams,
    eps_mhz: f64,
    symmetric_on: bool,
    ramsey: &RamseyConfig,
    sim: &SimConfig,
) -> Result<StarkShifts, CalibError> {
    if eps_mhz == 0.0 {
        return Ok(StarkShifts::default());
    }
    let mut drives = DriveConfig {
        rabi_mhz: 0.0,
        zeno_eps_mhz: eps_mhz,
        symmetric_on,
        stark: Some(StarkShifts::default()),
        ..Default::default()
    };
    let ge1 = simulated_ramsey(params, &drives, ("gg", "eg"), ramsey, sim)?.shift_mhz;
    let ge2 = simulated_ramsey(params, &drives, ("gg", "ge"), ramsey, sim)?.shift_mhz;
    drives.stark = Some(StarkShifts {
        ge1_mhz: ge1,
        ge2_mhz: ge2,
        ef_mhz: 0.0,
    });
    let ef = simulated_ramsey(params, &drives, ("eg", "fg"), ramsey, sim)?.shift_mhz;
    Ok(StarkShifts {
        ge1_mhz: ge1,
        ge2_mhz: ge2,
        ef_mhz: ef,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StarkTable {
    pub symmetric_on: bool,
    pub eps_mhz: Vec<f64>,
    pub shifts: Vec<StarkShifts>,
}

pub const DEFAULT_EPS_GRID: [f64; 7] = [0.0, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0];

impl StarkTable {
    /// Linear interpolation in ε² (shifts are quadratic at leading order).
    pub fn lookup(&self, eps_mhz: f64) -> Option<StarkShifts> {
        if eps_mhz < 0.0 {
            return None;
        }
        let k = self.eps_mhz.iter().position(|&e| e >= eps_mhz - 1e-12)?;
        if (self.eps_mhz[k] - eps_mhz).abs() <= 1e-12 || k == 0 {
            return Some(self.shifts[k]);
        }
        let x = eps_mhz * eps_mhz;
        let (x0, x1) = (self.eps_mhz[k - 1].powi(2), self.eps_mhz[k].powi(2));
        let t = (x - x0) / (x1 - x0);
        let (s0, s1) = (self.shifts[k - 1], self.shifts[k]);
        let mix = |a: f64, b: f64| a + t * (b - a);
        Some(StarkShifts {
            ge1_mhz: mix(s0.ge1_mhz, s1.ge1_mhz),
            ge2_mhz: mix(s0.ge2_mhz, s1.ge2_mhz),
            ef_mhz: mix(s0.ef_mhz, s1.ef_mhz),
        })
    }
}

/// Stark shifts on a sorted ε grid that includes 0; points run in parallel.
pub fn build_stark_table(
    params: &DeviceParams,
    eps_grid: &[f64],
    symmetric_on: bool,
    ramsey: &RamseyConfig,
    sim: &SimConfig,
) -> Result<StarkTable, CalibError> {
    if !eps_grid.contains(&0.0) {
        return Err(CalibError::Invalid("ε grid must include 0".into()));
    }
    if eps_grid.windows(2).any(|w| w[1] <= w[0]) || eps_grid.iter().any(|&e| e < 0.0) {
        return Err(CalibError::Invalid("ε grid must be non-negative and strictly increasing".into()));
    }
    let shifts = eps_grid
        .par_iter()
        .map(|&e| calibrate_stark_with(params, e, symmetric_on, ramsey, sim))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(StarkTable {
        symmetric_on,
        eps_mhz: eps_grid.to_vec(),
        shifts,
    })
}

/// |a − b| / max(|a|, |b|).
pub fn relative_gap(a: f64, b: f64) -> f64 {
    let m = a.abs().max(b.abs());
    if m == 0.0 {
        0.0
    } else {
        (a - b).abs() / m
    }
}
