//! Experiment specs: TOML ingestion with line-level diagnostics, defaults and hashing.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bounds::EstimateConfig;
use crate::calib::{RamseyConfig, DEFAULT_EPS_GRID};
use crate::device::{DeviceError, DeviceParams, DriveConfig};
use crate::zeno::{Coherence, Model, SimConfig, ZenoError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum StarkChoice {
    #[default]
    Calibrated,
    Zero,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BlockSection {
    pub rabi_mhz: Vec<f64>,
    pub eps_mhz: Vec<f64>,
    pub models: Vec<Model>,
}

impl Default for BlockSection {
    fn default() -> Self {
        Self {
            rabi_mhz: vec![0.1, 1.0, 2.0],
            eps_mhz: vec![0.5, 1.0, 1.5, 2.0, 2.5, 3.0],
            models: vec![Model::FullCavity, Model::IdealMarkovian],
        }
    }
}

/// Gate evolution; amplitudes come from the `drives` section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GateSection {
    pub model: Model,
    pub stark: StarkChoice,
}

impl Default for GateSection {
    fn default() -> Self {
        Self {
            model: Model::FullCavity,
            stark: StarkChoice::Calibrated,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EpsSweepSection {
    pub rabi_mhz: Vec<f64>,
    pub eps_mhz: Vec<f64>,
    pub coherence: Vec<Coherence>,
    pub stark: StarkChoice,
}

impl Default for EpsSweepSection {
    fn default() -> Self {
        Self {
            rabi_mhz: vec![1.0],
            eps_mhz: vec![0.0, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0],
            coherence: vec![Coherence::Finite],
            stark: StarkChoice::Calibrated,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BoundsSection {
    /// Ω_R/Γ values
    pub ratios: Vec<f64>,
    pub rabi_mhz: f64,
    pub lower_estimate: bool,
    pub estimate: EstimateConfig,
}

impl Default for BoundsSection {
    fn default() -> Self {
        Self {
            ratios: vec![0.01, 0.02, 0.03, 0.04, 0.05, 0.06],
            rabi_mhz: 1.0,
            lower_estimate: true,
            estimate: EstimateConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TomoSection {
    pub n_states: usize,
    /// shots per setting for the sampled rows; 0 skips them
    pub shots: u64,
    pub deficit_scale: f64,
}

impl Default for TomoSection {
    fn default() -> Self {
        Self {
            n_states: 5,
            shots: 1000,
            deficit_scale: 0.8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PostselectSection {
    pub n_traj: usize,
    pub detection_fidelity: Vec<f64>,
    /// fractions of shots discarded
    pub fractions: Vec<f64>,
    pub stark: StarkChoice,
}

impl Default for PostselectSection {
    fn default() -> Self {
        Self {
            n_traj: 2000,
            detection_fidelity: vec![1.0, 0.75],
            fractions: vec![0.0, 0.05, 0.1, 0.15, 0.2, 0.25, 0.3],
            stark: StarkChoice::Calibrated,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CalibrateSection {
    pub eps_mhz: Vec<f64>,
    pub symmetric: Vec<bool>,
    pub ramsey: RamseyConfig,
}

impl Default for CalibrateSection {
    fn default() -> Self {
        Self {
            eps_mhz: DEFAULT_EPS_GRID.to_vec(),
            symmetric: vec![true, false],
            ramsey: RamseyConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrajectoriesSection {
    /// ensemble sizes, evaluated as prefixes of one run
    pub n_traj: Vec<usize>,
    pub stark: StarkChoice,
}

impl Default for TrajectoriesSection {
    fn default() -> Self {
        Self {
            n_traj: vec![100, 500, 2000],
            stark: StarkChoice::Calibrated,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProtocolSection {
    pub block: BlockSection,
    pub gate: GateSection,
    pub eps_sweep: EpsSweepSection,
    pub bounds: BoundsSection,
    pub tomo: TomoSection,
    pub postselect: PostselectSection,
    pub calibrate: CalibrateSection,
    pub trajectories: TrajectoriesSection,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentSpec {
    pub device: DeviceParams,
    pub drives: DriveConfig,
    pub sim: SimConfig,
    pub protocol: ProtocolSection,
}

/// Command-line overrides applied after parsing.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub n_fock: Option<usize>,
    pub dt_ns: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpecError {
    pub message: String,
    /// 1-based
    pub line: Option<usize>,
    pub key: Option<String>,
    pub suggestion: Option<String>,
}

impl fmt::Display for SpecError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(l) = self.line {
            write!(f, "line {l}: ")?;
        }
        if let Some(k) = &self.key {
            write!(f, "`{k}`: ")?;
        }
        f.write_str(&self.message)?;
        if let Some(s) = &self.suggestion {
            write!(f, " (did you mean `{s}`?)")?;
        }
        Ok(())
    }
}

impl std::error::Error for SpecError {}

impl SpecError {
    fn plain(message: impl Into<String>) -> Self {
        Self {
            message: message.into(),
            line: None,
            key: None,
            suggestion: None,
        }
    }
}

impl ExperimentSpec {
    pub fn parse_str(src: &str) -> Result<Self, SpecError> {
        Self::parse_with(src, &Overrides::default())
    }

    pub fn parse_with(src: &str, ov: &Overrides) -> Result<Self, SpecError> {
        let mut spec: ExperimentSpec = toml::from_str(src).map_err(|e| toml_error(src, &e))?;
        spec.apply(ov);
        spec.validate().map_err(|(key, message)| {
            let line = locate_key(src, &key);
            SpecError {
                message,
                line,
                key: Some(key),
                suggestion: None,
            }
        })?;
        Ok(spec)
    }

    pub fn apply(&mut self, ov: &Overrides) {
        if let Some(s) = ov.seed {
            self.sim.seed = s;
        }
        if let Some(n) = ov.n_fock {
            self.sim.n_fock = n;
        }
        if let Some(dt) = ov.dt_ns {
            self.sim.dt_ns = Some(dt);
        }
    }

    /// Physical and structural invariants; the error names the offending key.
    pub fn validate(&self) -> Result<(), (String, String)> {
        self.device.validate().map_err(|e| device_key("device", e))?;
        let d = &self.device;
        for (key, t1, t2s) in [
            ("device.t2s_eg_us", d.t1_eg_us, d.t2s_eg_us),
            ("device.t2s_fe_us", d.t1_fe_us, d.t2s_fe_us),
            ("device.t2s_q2_us", d.t1_q2_us, d.t2s_q2_us),
        ] {
            if t2s > 2.0 * t1 {
                return Err((key.into(), format!("T2* = {t2s} µs exceeds 2·T1 = {} µs", 2.0 * t1)));
            }
        }
        self.drives.validate().map_err(|e| device_key("drives", e))?;
        self.sim.validate().map_err(|e| match e {
            ZenoError::Invalid(m) => (format!("sim.{}", m.split_whitespace().next().unwrap_or("")), m),
            other => ("sim".to_string(), other.to_string()),
        })?;
        let p = &self.protocol;
        let nonneg = |key: &str, v: &[f64]| -> Result<(), (String, String)> {
            if v.is_empty() {
                return Err((key.into(), "list must not be empty".into()));
            }
            match v.iter().find(|x| !(x.is_finite() && **x >= 0.0)) {
                Some(x) => Err((key.into(), format!("values must be finite and >= 0, got {x}"))),
                None => Ok(()),
            }
        };
        let positive = |key: &str, v: &[f64]| -> Result<(), (String, String)> {
            nonneg(key, v)?;
            match v.iter().find(|x| **x == 0.0) {
                Some(_) => Err((key.into(), "values must be > 0".into())),
                None => Ok(()),
            }
        };
        positive("protocol.block.rabi_mhz", &p.block.rabi_mhz)?;
        nonneg("protocol.block.eps_mhz", &p.block.eps_mhz)?;
        if p.block.models.contains(&Model::IdealUnitary) {
            return Err(("protocol.block.models".into(), "ideal-unitary has no blocking model".into()));
        }
        if p.gate.model != Model::FullCavity && self.drives.rabi_mhz == 0.0 {
            return Err(("drives.rabi_mhz".into(), "ideal gate models need a Rabi drive".into()));
        }
        positive("protocol.eps_sweep.rabi_mhz", &p.eps_sweep.rabi_mhz)?;
        nonneg("protocol.eps_sweep.eps_mhz", &p.eps_sweep.eps_mhz)?;
        if p.eps_sweep.coherence.is_empty() {
            return Err(("protocol.eps_sweep.coherence".into(), "list must not be empty".into()));
        }
        positive("protocol.bounds.ratios", &p.bounds.ratios)?;
        positive("protocol.bounds.rabi_mhz", &[p.bounds.rabi_mhz])?;
        if p.tomo.n_states == 0 {
            return Err(("protocol.tomo.n_states".into(), "must be >= 1".into()));
        }
        if !(p.tomo.deficit_scale > 0.0 && p.tomo.deficit_scale <= 1.0) {
            return Err(("protocol.tomo.deficit_scale".into(), "must lie in (0, 1]".into()));
        }
        if p.postselect.n_traj == 0 {
            return Err(("protocol.postselect.n_traj".into(), "must be >= 1".into()));
        }
        if let Some(f) = p.postselect.detection_fidelity.iter().find(|f| !(**f > 0.5 && **f <= 1.0)) {
            return Err(("protocol.postselect.detection_fidelity".into(), format!("must lie in (0.5, 1], got {f}")));
        }
        if let Some(f) = p.postselect.fractions.iter().find(|f| !(**f >= 0.0 && **f < 1.0)) {
            return Err(("protocol.postselect.fractions".into(), format!("must lie in [0, 1), got {f}")));
        }
        nonneg("protocol.calibrate.eps_mhz", &p.calibrate.eps_mhz)?;
        if p.calibrate.symmetric.is_empty() {
            return Err(("protocol.calibrate.symmetric".into(), "list must not be empty".into()));
        }
        if p.trajectories.n_traj.is_empty() || p.trajectories.n_traj.contains(&0) {
            return Err(("protocol.trajectories.n_traj".into(), "sizes must be >= 1".into()));
        }
        Ok(())
    }

    /// Canonical TOML; parsing it back gives the same spec and hash.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("spec serializes to TOML")
    }

    /// SHA-256 (hex) of the canonical JSON of the resolved spec.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("spec serializes to JSON");
        hex::encode(Sha256::digest(&json))
    }
}

pub fn parse_spec(path: &Path, ov: &Overrides) -> Result<ExperimentSpec, SpecError> {
    let src = std::fs::read_to_string(path)
        .map_err(|e| SpecError::plain(format!("cannot read {}: {e}", path.display())))?;
    ExperimentSpec::parse_with(&src, ov)
}

fn device_key(section: &str, e: DeviceError) -> (String, String) {
    match &e {
        DeviceError::Param { name, .. } => (format!("{section}.{name}"), e.to_string()),
        _ => (section.to_string(), e.to_string()),
    }
}

fn toml_error(src: &str, e: &toml::de::Error) -> SpecError {
    let line = e.span().map(|s| line_of(src, s.start));
    let msg = e.message().trim().to_string();
    let ticks: Vec<&str> = msg.split('`').skip(1).step_by(2).collect();
    let mut out = SpecError {
        message: msg.clone(),
        line,
        key: None,
        suggestion: None,
    };
    if msg.starts_with("unknown field") && !ticks.is_empty() {
        out.key = Some(ticks[0].to_string());
        out.suggestion = ticks[1..]
            .iter()
            .map(|c| (strsim::levenshtein(ticks[0], c), *c))
            .filter(|(d, _)| *d <= 3)
            .min()
            .map(|(_, c)| c.to_string());
    }
    out
}

fn line_of(src: &str, offset: usize) -> usize {
    src[..offset.min(src.len())].matches('\n').count() + 1
}

/// 1-based line where dotted `key` is assigned, if it appears literally.
pub fn locate_key(src: &str, key: &str) -> Option<usize> {
    let (section, leaf) = key.rsplit_once('.').unwrap_or(("", key));
    let mut current = String::new();
    for (i, raw) in src.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if let Some(h) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            current = h.trim().to_string();
            continue;
        }
        let Some((lhs, _)) = line.split_once('=') else {
            continue;
        };
        let lhs = lhs.trim();
        let full = if current.is_empty() {
            lhs.to_string()
        } else {
            format!("{current}.{lhs}")
        };
        if full == key || (current == section && lhs == leaf) {
            return Some(i + 1);
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_is_default() {
        let s = ExperimentSpec::parse_str("").unwrap();
        assert_eq!(s, ExperimentSpec::default());
        assert_eq!(s.device.chi1_mhz, -4.25);
    }

    #[test]
    fn unknown_key_suggests() {
        let e = ExperimentSpec::parse_str("[device]\nchi1_mhz = -4.0\nkapa_mhz = 0.2\n").unwrap_err();
        assert_eq!(e.line, Some(3));
        assert_eq!(e.key.as_deref(), Some("kapa_mhz"));
        assert_eq!(e.suggestion.as_deref(), Some("kappa_mhz"));
    }

    #[test]
    fn invariant_names_key_and_line() {
        let e = ExperimentSpec::parse_str("# c\n[device]\n\nkappa_mhz = -1\n").unwrap_err();
        assert_eq!(e.key.as_deref(), Some("device.kappa_mhz"));
        assert_eq!(e.line, Some(4));
        let e = ExperimentSpec::parse_str("[device]\nt1_fe_us = 2.0\n").unwrap_err();
        assert_eq!(e.key.as_deref(), Some("device.t2s_fe_us"));
        let e = ExperimentSpec::parse_str("[protocol.tomo]\ndeficit_scale = 2.0\n").unwrap_err();
        assert_eq!(e.line, Some(2));
    }

    #[test]
    fn type_mismatch_has_line() {
        let e = ExperimentSpec::parse_str("[sim]\nn_fock = \"twenty\"\n").unwrap_err();
        assert_eq!(e.line, Some(2));
    }

    #[test]
    fn overrides_and_hash() {
        let a = ExperimentSpec::parse_str("").unwrap();
        let b = ExperimentSpec::parse_with(
            "",
            &Overrides {
                seed: Some(9),
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(b.sim.seed, 9);
        assert_ne!(a.hash(), b.hash());
        let back = ExperimentSpec::parse_str(&b.to_toml()).unwrap();
        assert_eq!(back, b);
        assert_eq!(back.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn locate_dotted_keys() {
        let src = "device.kappa_mhz = 1\n[protocol.block]\nrabi_mhz = [1]\n";
        assert_eq!(locate_key(src, "device.kappa_mhz"), Some(1));
        assert_eq!(locate_key(src, "protocol.block.rabi_mhz"), Some(3));
        assert_eq!(locate_key(src, "sim.n_fock"), None);
    }
}
