//! Simulated qutrit ⊗ qubit state tomography, maximum-likelihood
//! reconstruction, the Fock-cutoff readout model and post-selection.
//!
//! Every observable O = λ_a ⊗ σ_b is read out through its eigenbasis: for
//! each eigenvector v a pre-rotation U with U v = |gg⟩ maps the weight ⟨v|ρ|v⟩
//! onto the |gg⟩⟨gg| projector that the readout measures.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::{computational_projection, concurrence, state_fidelity, MetricsError};
use crate::qcore::{
    hermitian_eigen, kron, partial_trace, CMatrix, CVector, QcoreError, QuantumState, SpaceLayout, C64, ONE, ZERO,
};
use crate::sweep::SweepResult;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TomoError {
    #[error("observables do not span the operator space (rank {rank} < {needed})")]
    NotSpanning { rank: usize, needed: usize },
    #[error("data has {got} observables, the set has {expected}")]
    DataShape { expected: usize, got: usize },
    #[error("reconstruction diverged: {0}")]
    Diverged(String),
    #[error("every record was discarded")]
    AllDiscarded,
    #[error("expected a qutrit ⊗ qubit state, got dims {0:?}")]
    Layout(Vec<usize>),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Qcore(#[from] QcoreError),
}

const D: usize = 6;

/// Identity and the eight generalized Gell-Mann matrices: symmetric and
/// antisymmetric pairs for (0,1), (0,2), (1,2), then the two diagonals.
pub fn gell_mann() -> Vec<(String, CMatrix)> {
    let mut out = vec![("I".to_string(), CMatrix::identity(3, 3))];
    let mut k = 1;
    for j in 0..3 {
        for l in j + 1..3 {
            let mut s = CMatrix::zeros(3, 3);
            s[(j, l)] = ONE;
            s[(l, j)] = ONE;
            let mut a = CMatrix::zeros(3, 3);
            a[(j, l)] = -C64::i();
            a[(l, j)] = C64::i();
            out.push((format!("GM{k}"), s));
            out.push((format!("GM{}", k + 1), a));
            k += 2;
        }
    }
    let d3 = CMatrix::from_diagonal(&CVector::from_vec(vec![ONE, -ONE, ZERO]));
    let r = 1.0 / 3f64.sqrt();
    let d8 = CMatrix::from_diagonal(&CVector::from_vec(vec![ONE * r, ONE * r, ONE * (-2.0 * r)]));
    out.push(("GM7".to_string(), d3));
    out.push(("GM8".to_string(), d8));
    out
}

pub fn paulis() -> Vec<(String, CMatrix)> {
    let i = C64::i();
    vec![
        ("I".into(), CMatrix::identity(2, 2)),
        ("X".into(), CMatrix::from_row_slice(2, 2, &[ZERO, ONE, ONE, ZERO])),
        ("Y".into(), CMatrix::from_row_slice(2, 2, &[ZERO, -i, i, ZERO])),
        ("Z".into(), CMatrix::from_row_slice(2, 2, &[ONE, ZERO, ZERO, -ONE])),
    ]
}

/// One readout setting: pre-rotation `rotation` sends `vector` to |gg⟩.
#[derive(Debug, Clone, PartialEq)]
pub struct Setting {
    pub eigenvalue: f64,
    pub vector: CVector,
    pub rotation: CMatrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Observable {
    pub label: String,
    pub matrix: CMatrix,
    pub settings: Vec<Setting>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObservableSet {
    pub observables: Vec<Observable>,
    /// 2-norm condition number of the Hilbert–Schmidt Gram matrix
    pub gram_condition: f64,
}

impl ObservableSet {
    pub fn len(&self) -> usize {
        self.observables.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observables.is_empty()
    }
}

fn local_eigen(m: &CMatrix) -> Vec<(f64, CVector)> {
    let (vals, vecs) = hermitian_eigen(m);
    vals.iter().enumerate().map(|(k, &v)| (v, vecs.column(k).into_owned())).collect()
}

/// Gell-Mann ⊗ Pauli, 36 observables on qutrit ⊗ qubit.
pub fn build_observable_set() -> ObservableSet {
    let mut observables = Vec::with_capacity(36);
    for (ln, lm) in gell_mann() {
        for (pn, pm) in paulis() {
            let matrix = kron(&lm, &pm);
            let mut basis = Vec::with_capacity(D);
            for (a, va) in local_eigen(&lm) {
                for (b, vb) in local_eigen(&pm) {
                    basis.push((a * b, crate::qcore::kron_vec(&va, &vb)));
                }
            }
            let settings = (0..D)
                .map(|k| {
                    // rows of U: v_k first, then the other eigenvectors
                    let mut order: Vec<usize> = vec![k];
                    order.extend((0..D).filter(|&j| j != k));
                    let rotation = CMatrix::from_fn(D, D, |r, c| basis[order[r]].1[c].conj());
                    Setting {
                        eigenvalue: basis[k].0,
                        vector: basis[k].1.clone(),
                        rotation,
                    }
                })
                .collect();
            observables.push(Observable {
                label: format!("{ln}.{pn}"),
                matrix,
                settings,
            });
        }
    }
    let gram = gram_matrix(&observables);
    let sv = gram.singular_values();
    let max = sv.iter().cloned().fold(0.0, f64::max);
    let min = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    ObservableSet {
        observables,
        gram_condition: max / min,
    }
}

fn gram_matrix(obs: &[Observable]) -> nalgebra::DMatrix<f64> {
    let n = obs.len();
    nalgebra::DMatrix::from_fn(n, n, |i, j| (obs[i].matrix.adjoint() * &obs[j].matrix).trace().re)
}

/// Per observable: expectation and the |gg⟩ probability of each setting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TomogramData {
    pub labels: Vec<String>,
    pub expectations: Vec<f64>,
    pub probabilities: Vec<Vec<f64>>,
    /// 0 = exact expectations
    pub shots: u64,
    /// fraction of records kept by post-selection (1 when none applied)
    pub kept_fraction: f64,
}

impl TomogramData {
    /// Data of a state that lost a fraction 1 − `factor` of its population.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            expectations: self.expectations.iter().map(|e| e * factor).collect(),
            probabilities: self
                .probabilities
                .iter()
                .map(|p| p.iter().map(|x| x * factor).collect())
                .collect(),
            ..self.clone()
        }
    }
}

fn check_layout(rho: &QuantumState) -> Result<(), TomoError> {
    if rho.layout().total_dim() != D {
        return Err(TomoError::Layout(rho.layout().dims()));
    }
    Ok(())
}

/// ⟨gg|U ρ U†|gg⟩ for every setting; binomially sampled when shots > 0.
pub fn simulate_tomography(rho: &QuantumState, set: &ObservableSet, shots: u64, seed: u64) -> Result<TomogramData, TomoError> {
    check_layout(rho)?;
    let m = rho.density_matrix();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut probabilities = Vec::with_capacity(set.len());
    let mut expectations = Vec::with_capacity(set.len());
    for o in &set.observables {
        let mut ps = Vec::with_capacity(D);
        for s in &o.settings {
            let rotated = &s.rotation * &m * s.rotation.adjoint();
            let mut p = rotated[(0, 0)].re;
            if shots > 0 {
                let dist = Binomial::new(shots, p.clamp(0.0, 1.0)).expect("valid binomial");
                p = dist.sample(&mut rng) as f64 / shots as f64;
            }
            ps.push(p);
        }
        expectations.push(o.settings.iter().zip(&ps).map(|(s, p)| s.eigenvalue * p).sum());
        probabilities.push(ps);
    }
    Ok(TomogramData {
        labels: set.observables.iter().map(|o| o.label.clone()).collect(),
        expectations,
        probabilities,
        shots,
        kept_fraction: 1.0,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Reconstruction {
    pub state: QuantumState,
    /// mean summed probability per observable; below 1 the deficit is filled
    /// with the maximally mixed state
    pub trace_estimate: f64,
    pub iterations: usize,
    pub log_likelihood: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MleConfig {
    pub dilution: f64,
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for MleConfig {
    fn default() -> Self {
        Self {
            dilution: 0.1,
            tolerance: 1e-10,
            max_iterations: 10_000,
        }
    }
}

/// Projection of a Hermitian matrix onto unit-trace PSD matrices (Frobenius).
pub fn project_to_states(m: &CMatrix) -> CMatrix {
    let (vals, vecs) = hermitian_eigen(m);
    // Euclidean projection of the spectrum onto the probability simplex
    let mut sorted = vals.clone();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut acc = 0.0;
    let mut theta = 0.0;
    for (k, v) in sorted.iter().enumerate() {
        acc += v;
        let t = (acc - 1.0) / (k + 1) as f64;
        if v - t > 0.0 {
            theta = t;
        }
    }
    let p: Vec<C64> = vals.iter().map(|v| C64::new((v - theta).max(0.0), 0.0)).collect();
    &vecs * CMatrix::from_diagonal(&CVector::from_vec(p)) * vecs.adjoint()
}

fn linear_inversion(set: &ObservableSet, expectations: &[f64]) -> Result<CMatrix, TomoError> {
    let gram = gram_matrix(&set.observables);
    let n = set.len();
    let svd = gram.clone().svd(true, true);
    let rank = svd.rank(1e-10);
    if rank < D * D {
        return Err(TomoError::NotSpanning { rank, needed: D * D });
    }
    let b = nalgebra::DVector::from_column_slice(expectations);
    let c = svd.solve(&b, 1e-12).map_err(|e| TomoError::Diverged(e.to_string()))?;
    let mut m = CMatrix::zeros(D, D);
    for k in 0..n {
        m += &set.observables[k].matrix * C64::new(c[k], 0.0);
    }
    Ok((&m + m.adjoint()) * C64::new(0.5, 0.0))
}

fn outcome_probs(set: &ObservableSet, rho: &CMatrix) -> Vec<f64> {
    set.observables
        .iter()
        .flat_map(|o| o.settings.iter())
        .map(|s| (s.vector.adjoint() * rho * &s.vector)[(0, 0)].re)
        .collect()
}

fn log_likelihood(f: &[f64], p: &[f64]) -> f64 {
    f.iter()
        .zip(p)
        .filter(|(f, _)| **f > 0.0)
        .map(|(f, p)| f * p.max(1e-300).ln())
        .sum()
}

/// Maximum-likelihood state from (possibly noisy or trace-deficient) data.
pub fn mle_reconstruct(data: &TomogramData, set: &ObservableSet) -> Result<Reconstruction, TomoError> {
    mle_reconstruct_with(data, set, &MleConfig::default())
}

pub fn mle_reconstruct_with(data: &TomogramData, set: &ObservableSet, cfg: &MleConfig) -> Result<Reconstruction, TomoError> {
    if data.probabilities.len() != set.len() {
        return Err(TomoError::DataShape {
            expected: set.len(),
            got: data.probabilities.len(),
        });
    }
    let sums: Vec<f64> = data.probabilities.iter().map(|p| p.iter().sum()).collect();
    let trace = sums.iter().sum::<f64>() / sums.len() as f64;
    if !(trace > 0.0) {
        return Err(TomoError::Diverged(format!("data carries no population (trace {trace})")));
    }
    // per-observable normalized frequencies
    let f: Vec<f64> = data
        .probabilities
        .iter()
        .zip(&sums)
        .flat_map(|(p, s)| p.iter().map(move |x| (x / s).max(0.0)))
        .collect();
    let norm_exp: Vec<f64> = set
        .observables
        .iter()
        .enumerate()
        .map(|(k, o)| o.settings.iter().enumerate().map(|(j, s)| s.eigenvalue * f[k * D + j]).sum())
        .collect();
    let mut rho = project_to_states(&linear_inversion(set, &norm_exp)?);
    let settings: Vec<&Setting> = set.observables.iter().flat_map(|o| o.settings.iter()).collect();
    let mut p = outcome_probs(set, &rho);
    if f.iter().zip(&p).any(|(f, p)| *f > 0.0 && *p < 1e-12) {
        rho = rho * C64::new(1.0 - 1e-6, 0.0) + CMatrix::identity(D, D) * C64::new(1e-6 / D as f64, 0.0);
        p = outcome_probs(set, &rho);
    }
    let mut ll = log_likelihood(&f, &p);
    let mut iterations = 0;
    while iterations < cfg.max_iterations {
        iterations += 1;
        let mut r = CMatrix::zeros(D, D);
        for ((s, fi), pi) in settings.iter().zip(&f).zip(&p) {
            if *fi > 0.0 {
                r += &s.vector * s.vector.adjoint() * C64::new(fi / pi.max(1e-300), 0.0);
            }
        }
        r /= C64::new(set.len() as f64, 0.0);
        let mut eps = cfg.dilution;
        let mut accepted = None;
        for _ in 0..30 {
            let g = (CMatrix::identity(D, D) + &r * C64::new(eps, 0.0)) / C64::new(1.0 + eps, 0.0);
            let mut cand = &g * &rho * g.adjoint();
            let tr = cand.trace().re;
            cand /= C64::new(tr, 0.0);
            cand = (&cand + cand.adjoint()) * C64::new(0.5, 0.0);
            let pc = outcome_probs(set, &cand);
            let lc = log_likelihood(&f, &pc);
            if lc >= ll {
                accepted = Some((cand, pc, lc));
                break;
            }
            eps *= 0.5;
        }
        let Some((cand, pc, lc)) = accepted else {
            break;
        };
        let gain = lc - ll;
        assert!(gain >= 0.0, "log-likelihood decreased");
        rho = cand;
        p = pc;
        ll = lc;
        if gain < cfg.tolerance {
            break;
        }
    }
    if !ll.is_finite() {
        return Err(TomoError::Diverged(format!("log-likelihood {ll}")));
    }
    let t = trace.min(1.0);
    let out = rho * C64::new(t, 0.0) + CMatrix::identity(D, D) * C64::new((1.0 - t) / D as f64, 0.0);
    Ok(Reconstruction {
        state: QuantumState::mixed_unchecked(SpaceLayout::qutrit_qubit(), out),
        trace_estimate: trace,
        iterations,
        log_likelihood: ll,
    })
}

/// Readout model that loses every cavity component above `n_cut`: the
/// projected, trace-deficient qutrit ⊗ qubit state goes through tomography.
pub fn truncation_model(rho_full: &QuantumState, n_cut: usize, set: &ObservableSet) -> Result<Reconstruction, TomoError> {
    let layout = rho_full.layout();
    let cav = layout
        .factor_index("cavity")
        .ok_or_else(|| TomoError::Layout(layout.dims()))?;
    let m = rho_full.density_matrix();
    let keep: Vec<bool> = (0..layout.total_dim()).map(|k| layout.levels_of(k)[cav] <= n_cut).collect();
    let cut = CMatrix::from_fn(m.nrows(), m.ncols(), |r, c| if keep[r] && keep[c] { m[(r, c)] } else { ZERO });
    let reduced = partial_trace(&QuantumState::mixed_unchecked(layout.clone(), cut), &[0, 1])?;
    let reduced = QuantumState::mixed_unchecked(SpaceLayout::qutrit_qubit(), reduced.density_matrix());
    let data = simulate_tomography(&reduced, set, 0, 0)?;
    mle_reconstruct(&data, set)
}

/// Random full-rank qutrit ⊗ qubit state: AA† + 0.05·I, normalized.
pub fn random_full_rank_state(seed: u64) -> QuantumState {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = CMatrix::from_fn(D, D, |_, _| C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5));
    let m = &a * a.adjoint() + CMatrix::identity(D, D) * C64::new(0.05, 0.0);
    let tr = m.trace();
    QuantumState::mixed_unchecked(SpaceLayout::qutrit_qubit(), m / tr)
}

/// One experimental shot: final reduced state, detector flag, true escape.
#[derive(Debug, Clone, PartialEq)]
pub struct ShotRecord {
    pub seed: u64,
    pub state: QuantumState,
    pub flagged: bool,
    pub escaped: bool,
}

/// Discard order: flagged shots first, then unflagged, each by ascending seed.
pub fn discard_order(records: &[ShotRecord]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..records.len()).collect();
    idx.sort_by_key(|&k| (!records[k].flagged, records[k].seed));
    idx
}

/// Rows (fraction, kept, fidelity, concurrence) after discarding
/// round(fraction·n) shots in discard order and reconstructing the rest.
pub fn postselect_analysis(records: &[ShotRecord], target: &QuantumState, fractions: &[f64]) -> Result<SweepResult, TomoError> {
    let set = build_observable_set();
    let order = discard_order(records);
    let n = records.len();
    let rows = fractions
        .par_iter()
        .map(|&frac| {
            let drop = ((frac.clamp(0.0, 1.0)) * n as f64).round() as usize;
            if drop >= n {
                return Err(TomoError::AllDiscarded);
            }
            let mut kept = vec![true; n];
            for &k in &order[..drop] {
                kept[k] = false;
            }
            let mut sum = CMatrix::zeros(D, D);
            for (r, _) in records.iter().zip(&kept).filter(|(_, k)| **k) {
                check_layout(&r.state)?;
                sum += r.state.density_matrix();
            }
            let m = n - drop;
            let avg = QuantumState::mixed_unchecked(SpaceLayout::qutrit_qubit(), sum / C64::new(m as f64, 0.0));
            let mut data = simulate_tomography(&avg, &set, 0, 0)?;
            data.kept_fraction = m as f64 / n as f64;
            let rec = mle_reconstruct(&data, &set)?;
            let fid = state_fidelity(&rec.state, target)?;
            let conc = concurrence(&computational_projection(&rec.state)?)?;
            Ok((frac, m, fid, conc))
        })
        .collect::<Result<Vec<_>, TomoError>>()?;
    let mut out = SweepResult::new(&["fraction", "kept", "fidelity", "concurrence"]);
    for (f, m, fid, c) in rows {
        out.push(vec![f.into(), m.into(), fid.into(), c.into()]);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qcore::{basis_state, trace_distance};

    fn random_full_rank(seed: u64) -> QuantumState {
        random_full_rank_state(seed)
    }

    #[test]
    fn observable_set_shape() {
        let set = build_observable_set();
        assert_eq!(set.len(), 36);
        assert!(set.gram_condition.is_finite() && set.gram_condition < 10.0);
        for o in &set.observables {
            for s in &o.settings {
                let u = &s.rotation;
                assert!((u * u.adjoint() - CMatrix::identity(D, D)).norm() < 1e-12);
                let mapped = u * &s.vector;
                assert!((mapped[0] - ONE).norm() < 1e-12);
                let ov = &o.matrix * &s.vector - &s.vector * C64::new(s.eigenvalue, 0.0);
                assert!(ov.norm() < 1e-12);
            }
        }
    }

    #[test]
    fn identity_expectation_is_one() {
        let set = build_observable_set();
        let rho = random_full_rank(2);
        let data = simulate_tomography(&rho, &set, 0, 0).unwrap();
        let k = data.labels.iter().position(|l| l == "I.I").unwrap();
        assert!((data.expectations[k] - 1.0).abs() < 1e-12);
        for (o, e) in set.observables.iter().zip(&data.expectations) {
            let exact = (&o.matrix * rho.density_matrix()).trace().re;
            assert!((e - exact).abs() < 1e-12);
        }
    }

    #[test]
    fn ground_state_population_probability() {
        let set = build_observable_set();
        let gg = basis_state(&SpaceLayout::qutrit_qubit(), &["g", "g"]).unwrap();
        let data = simulate_tomography(&gg, &set, 0, 0).unwrap();
        let k = data.labels.iter().position(|l| l == "I.I").unwrap();
        let gg_setting = set.observables[k]
            .settings
            .iter()
            .position(|s| (s.vector[0].norm() - 1.0).abs() < 1e-12)
            .unwrap();
        assert!((data.probabilities[k][gg_setting] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn exact_round_trip() {
        let set = build_observable_set();
        for seed in 0..5 {
            let rho = random_full_rank(seed);
            let data = simulate_tomography(&rho, &set, 0, 0).unwrap();
            let rec = mle_reconstruct(&data, &set).unwrap();
            let td = trace_distance(&rec.state.density_matrix(), &rho.density_matrix());
            assert!(td < 1e-8, "seed {seed}: {td:e}");
        }
    }

    #[test]
    fn simplex_projection_is_valid_state() {
        let m = CMatrix::from_diagonal(&CVector::from_vec(vec![ONE * 1.2, ONE * -0.3, ONE * 0.1, ZERO, ZERO, ZERO]));
        let p = project_to_states(&m);
        assert!((p.trace().re - 1.0).abs() < 1e-12);
        assert!(hermitian_eigen(&p).0[0] >= -1e-15);
    }

    #[test]
    fn deficient_data_gets_mixed_admixture() {
        let set = build_observable_set();
        let rho = random_full_rank(7);
        let data = simulate_tomography(&rho, &set, 0, 0).unwrap().scaled(0.8);
        let rec = mle_reconstruct(&data, &set).unwrap();
        let want = rho.density_matrix() * C64::new(0.8, 0.0) + CMatrix::identity(D, D) * C64::new(0.2 / 6.0, 0.0);
        assert!(trace_distance(&rec.state.density_matrix(), &want) < 1e-8);
        assert!((rec.trace_estimate - 0.8).abs() < 1e-12);
    }

    #[test]
    fn noisy_pure_state() {
        let set = build_observable_set();
        let t = crate::metrics::gate_target(&SpaceLayout::qutrit_qubit()).unwrap();
        let data = simulate_tomography(&t, &set, 10_000, 3).unwrap();
        let rec = mle_reconstruct(&data, &set).unwrap();
        assert!(state_fidelity(&rec.state, &t).unwrap() >= 0.98);
        assert!(rec.state.validate().is_valid());
    }

    #[test]
    fn discard_order_rules() {
        let l = SpaceLayout::qutrit_qubit();
        let s = QuantumState::maximally_mixed(&l);
        let rec = |seed, flagged| ShotRecord {
            seed,
            state: s.clone(),
            flagged,
            escaped: flagged,
        };
        let recs = vec![rec(5, false), rec(3, true), rec(1, false), rec(2, true)];
        assert_eq!(discard_order(&recs), vec![3, 1, 2, 0]);
        let target = crate::metrics::gate_target(&l).unwrap();
        assert!(matches!(postselect_analysis(&recs, &target, &[1.0]), Err(TomoError::AllDiscarded)));
    }
}
