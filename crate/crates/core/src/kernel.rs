//! Sparse interaction-picture kernels shared by the master-equation and
//! trajectory integrators.
//!
//! The static diagonal D of the Hamiltonian is removed exactly:
//! ρ_I = e^{iDt} ρ e^{−iDt}. Every remaining nonzero entry carries its own
//! rotation frequency, so an entry contributes `v·e^{i w t}` at time t.
//! Matrices are column-major slices of length d².

use crate::lindblad::Hamiltonian;
use crate::qcore::{CMatrix, C64, ZERO};

#[derive(Debug, Clone, Copy)]
pub(crate) struct Entry {
    pub r: usize,
    pub c: usize,
    pub v: C64,
    pub w: f64,
}

fn entries_of(m: &CMatrix, scale: C64, w0: f64, diag: &[f64], out: &mut Vec<Entry>) {
    for c in 0..m.ncols() {
        for r in 0..m.nrows() {
            let z = m[(r, c)];
            if z != ZERO {
                out.push(Entry {
                    r,
                    c,
                    v: z * scale,
                    w: w0 + diag[r] - diag[c],
                });
            }
        }
    }
}

fn is_diagonal(m: &CMatrix) -> bool {
    for c in 0..m.ncols() {
        for r in 0..m.nrows() {
            if r != c && m[(r, c)] != ZERO {
                return false;
            }
        }
    }
    true
}

#[inline]
fn coeffs(entries: &[Entry], t: f64, buf: &mut Vec<C64>) {
    buf.clear();
    buf.extend(entries.iter().map(|e| {
        let (s, c) = (e.w * t).sin_cos();
        e.v * C64::new(c, s)
    }));
}

pub(crate) struct Compiled {
    pub d: usize,
    pub diag: Vec<f64>,
    /// −iV_I − ½Σ(L†L)_I over non-diagonal collapse operators
    pub k: Vec<Entry>,
    /// −½Σ|l|² for diagonal collapse operators (trajectories only)
    pub k_diag_extra: Vec<f64>,
    /// non-diagonal collapse operators in the interaction picture
    pub jumps: Vec<Vec<Entry>>,
    /// diagonal collapse operators; constant in the interaction picture
    pub diag_ops: Vec<Vec<C64>>,
    /// elementwise generator of the diagonal collapse operators
    pub w: Vec<C64>,
    /// Σ|amp|·‖op‖₁ over modulated Hamiltonian terms
    pub h_norm: f64,
    /// ‖½Σ L†L‖₁ + max|W|
    pub diss_norm: f64,
}

pub(crate) struct Scratch {
    pub m: Vec<C64>,
    pub ck: Vec<C64>,
    pub cj: Vec<C64>,
}

impl Compiled {
    pub fn new(h: &Hamiltonian, collapse: &[CMatrix]) -> Self {
        let d = h.diag().len();
        let diag = h.diag().to_vec();
        let mut k = Vec::new();
        let mut h_norm = 0.0;
        for term in h.terms() {
            entries_of(&term.op, -C64::i() * term.amp, term.freq, &diag, &mut k);
            h_norm += term.amp.norm() * crate::qcore::norm_one(&term.op);
        }
        let mut jumps = Vec::new();
        let mut diag_ops = Vec::new();
        let mut w = vec![ZERO; d * d];
        let mut k_diag_extra = vec![0.0; d];
        let mut ldl_sum = CMatrix::zeros(d, d);
        for l in collapse {
            if is_diagonal(l) {
                let lv: Vec<C64> = (0..d).map(|j| l[(j, j)]).collect();
                for c in 0..d {
                    for r in 0..d {
                        w[r + c * d] += lv[r] * lv[c].conj()
                            - 0.5 * (lv[r].norm_sqr() + lv[c].norm_sqr());
                    }
                }
                for j in 0..d {
                    k_diag_extra[j] -= 0.5 * lv[j].norm_sqr();
                }
                diag_ops.push(lv);
            } else {
                let ldl = l.adjoint() * l;
                entries_of(&ldl, C64::new(-0.5, 0.0), 0.0, &diag, &mut k);
                ldl_sum += &ldl;
                let mut e = Vec::new();
                entries_of(l, C64::new(1.0, 0.0), 0.0, &diag, &mut e);
                jumps.push(e);
            }
        }
        let w_max = w.iter().map(|z| z.norm()).fold(0.0, f64::max);
        let diss_norm = 0.5 * crate::qcore::norm_one(&ldl_sum) + w_max;
        Self {
            d,
            diag,
            k,
            k_diag_extra,
            jumps,
            diag_ops,
            w,
            h_norm,
            diss_norm,
        }
    }

    pub fn scratch(&self) -> Scratch {
        Scratch {
            m: vec![ZERO; self.d * self.d],
            ck: Vec::with_capacity(self.k.len()),
            cj: Vec::new(),
        }
    }

    /// e^{i d_j t}
    pub fn phases(&self, t: f64) -> Vec<C64> {
        self.diag
            .iter()
            .map(|&x| {
                let (s, c) = (x * t).sin_cos();
                C64::new(c, s)
            })
            .collect()
    }

    pub fn to_interaction(&self, rho: &CMatrix, t: f64) -> Vec<C64> {
        let p = self.phases(t);
        let d = self.d;
        let mut out = vec![ZERO; d * d];
        for c in 0..d {
            for r in 0..d {
                out[r + c * d] = p[r] * p[c].conj() * rho[(r, c)];
            }
        }
        out
    }

    pub fn to_lab(&self, rho: &[C64], t: f64) -> CMatrix {
        let p = self.phases(t);
        let d = self.d;
        CMatrix::from_fn(d, d, |r, c| p[r].conj() * p[c] * rho[r + c * d])
    }

    pub fn vec_to_interaction(&self, psi: &[C64], t: f64) -> Vec<C64> {
        self.phases(t).iter().zip(psi).map(|(p, z)| p * z).collect()
    }

    pub fn vec_to_lab(&self, psi: &[C64], t: f64) -> Vec<C64> {
        self.phases(t).iter().zip(psi).map(|(p, z)| p.conj() * z).collect()
    }

    /// out = dρ_I/dt
    pub fn master_rhs(&self, t: f64, rho: &[C64], out: &mut [C64], s: &mut Scratch) {
        let d = self.d;
        coeffs(&self.k, t, &mut s.ck);
        s.m.fill(ZERO);
        sparse_mul(&self.k, &s.ck, rho, &mut s.m, d);
        for c in 0..d {
            for r in 0..d {
                out[r + c * d] = s.m[r + c * d] + s.m[c + r * d].conj() + self.w[r + c * d] * rho[r + c * d];
            }
        }
        for jump in &self.jumps {
            coeffs(jump, t, &mut s.cj);
            s.m.fill(ZERO);
            sparse_mul(jump, &s.cj, rho, &mut s.m, d);
            // out += X L†, column l of out gains conj(L_lm)·column m of X
            for (e, cv) in jump.iter().zip(&s.cj) {
                let f = cv.conj();
                let (src, dst) = (e.c * d, e.r * d);
                for j in 0..d {
                    out[dst + j] += f * s.m[src + j];
                }
            }
        }
    }

    /// out = K_eff ψ with every collapse operator in the anti-Hermitian part,
    /// given the coefficients of `k` at the evaluation time.
    pub fn pure_rhs_with(&self, coef: &[C64], psi: &[C64], out: &mut [C64]) {
        for (j, o) in out.iter_mut().enumerate() {
            *o = psi[j] * self.k_diag_extra[j];
        }
        for (e, cv) in self.k.iter().zip(coef) {
            out[e.r] += cv * psi[e.c];
        }
    }

    /// L_I ψ for jump channel `ch` (non-diagonal first, then diagonal).
    pub fn apply_jump(&self, ch: usize, t: f64, psi: &[C64], out: &mut [C64], s: &mut Scratch) {
        out.fill(ZERO);
        if ch < self.jumps.len() {
            coeffs(&self.jumps[ch], t, &mut s.cj);
            for (e, cv) in self.jumps[ch].iter().zip(&s.cj) {
                out[e.r] += cv * psi[e.c];
            }
        } else {
            let l = &self.diag_ops[ch - self.jumps.len()];
            for j in 0..psi.len() {
                out[j] = l[j] * psi[j];
            }
        }
    }

    pub fn n_channels(&self) -> usize {
        self.jumps.len() + self.diag_ops.len()
    }
}

/// y += A x for column-major dense x (d columns), A given by entries with coefficients.
#[inline]
fn sparse_mul(entries: &[Entry], coef: &[C64], x: &[C64], y: &mut [C64], d: usize) {
    for col in 0..d {
        let xc = &x[col * d..(col + 1) * d];
        let yc = &mut y[col * d..(col + 1) * d];
        for (e, cv) in entries.iter().zip(coef) {
            yc[e.r] += cv * xc[e.c];
        }
    }
}

pub(crate) fn hermitize(rho: &mut [C64], d: usize) {
    for c in 0..d {
        for r in 0..c {
            let a = rho[r + c * d];
            let b = rho[c + r * d];
            let m = (a + b.conj()) * 0.5;
            rho[r + c * d] = m;
            rho[c + r * d] = m.conj();
        }
        let z = &mut rho[c + c * d];
        *z = C64::new(z.re, 0.0);
    }
}

/// Coefficients of `entries` at t, t+h/2 and t+h for consecutive fixed steps,
/// advanced by phasor multiplication and resynchronised periodically.
pub(crate) struct CoeffStepper {
    rot: Vec<C64>,
    pub at: [Vec<C64>; 3],
    since_sync: usize,
}

const RESYNC_STEPS: usize = 128;

impl CoeffStepper {
    pub fn new() -> Self {
        Self {
            rot: Vec::new(),
            at: [Vec::new(), Vec::new(), Vec::new()],
            since_sync: 0,
        }
    }

    /// Exact coefficients at `t` and rotations for step `h`.
    pub fn start(&mut self, entries: &[Entry], t: f64, h: f64) {
        coeffs(entries, t, &mut self.at[0]);
        self.rot.clear();
        self.rot.extend(entries.iter().map(|e| {
            let (s, c) = (0.5 * e.w * h).sin_cos();
            C64::new(c, s)
        }));
        self.since_sync = 0;
        self.fill();
    }

    fn fill(&mut self) {
        let [a, b, c] = &mut self.at;
        b.clear();
        b.extend(a.iter().zip(&self.rot).map(|(x, r)| x * r));
        c.clear();
        c.extend(b.iter().zip(&self.rot).map(|(x, r)| x * r));
    }

    /// Move to the next step starting at `t_next`.
    pub fn advance(&mut self, entries: &[Entry], t_next: f64) {
        self.since_sync += 1;
        if self.since_sync >= RESYNC_STEPS {
            coeffs(entries, t_next, &mut self.at[0]);
            self.since_sync = 0;
        } else {
            self.at.swap(0, 2);
        }
        self.fill();
    }
}

/// Classical RK4 step of a linear ODE y' = f(t, y), in place.
pub(crate) struct Rk4 {
    k: [Vec<C64>; 4],
    y: Vec<C64>,
}

impl Rk4 {
    pub fn new(n: usize) -> Self {
        Self {
            k: [vec![ZERO; n], vec![ZERO; n], vec![ZERO; n], vec![ZERO; n]],
            y: vec![ZERO; n],
        }
    }

    pub fn step(&mut self, t: f64, h: f64, x: &mut [C64], mut f: impl FnMut(f64, &[C64], &mut [C64])) {
        let times = [t, t + 0.5 * h, t + h];
        self.step_staged(h, x, |stage, y, dy| f(times[stage], y, dy))
    }

    /// One step with f called by stage: 0 at t, 1 at t+h/2, 2 at t+h.
    pub fn step_staged(&mut self, h: f64, x: &mut [C64], mut f: impl FnMut(usize, &[C64], &mut [C64])) {
        let [k1, k2, k3, k4] = &mut self.k;
        let y = &mut self.y;
        f(0, x, k1);
        for i in 0..x.len() {
            y[i] = x[i] + k1[i] * (0.5 * h);
        }
        f(1, y, k2);
        for i in 0..x.len() {
            y[i] = x[i] + k2[i] * (0.5 * h);
        }
        f(1, y, k3);
        for i in 0..x.len() {
            y[i] = x[i] + k3[i] * h;
        }
        f(2, y, k4);
        let h6 = h / 6.0;
        for i in 0..x.len() {
            x[i] += (k1[i] + (k2[i] + k3[i]) * 2.0 + k4[i]) * h6;
        }
    }
}
