//! Entanglement verification on a finite truncation: is a joint outcome
//! distribution reproducible by a separable (intercept-resend) state?
//!
//! Alice holds a 4-dimensional source-replacement register, one level per
//! BB84 state. Bob's space is the vacuum plus a polarization qubit in each of
//! a few spatial modes; mode 0 is normal incidence, further modes stand for
//! attack angles with their own detector efficiencies. All operators are
//! real, so the search runs over real symmetric matrices.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::receiver::Channel;
use crate::scan::AttackAngleSet;

pub const DEFAULT_TOLERANCE: f64 = 1e-7;
pub const MAX_ITERATIONS: usize = 100_000;
pub const STALL_WINDOW: usize = 500;
pub const STALL_RELATIVE_CHANGE: f64 = 1e-10;
const JACOBI_TOLERANCE: f64 = 1e-12;
const ALICE_DIM: usize = 4;

/// Dense real square matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub n: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![0.0; n * n],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    /// `|u><v|`.
    pub fn outer(u: &[f64], v: &[f64]) -> Self {
        let n = u.len();
        let mut m = Self::zeros(n);
        for i in 0..n {
            for j in 0..n {
                m.data[i * n + j] = u[i] * v[j];
            }
        }
        m
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn at_mut(&mut self, i: usize, j: usize) -> &mut f64 {
        &mut self.data[i * self.n + j]
    }

    pub fn kron(&self, other: &Matrix) -> Matrix {
        let (a, b) = (self.n, other.n);
        let mut m = Matrix::zeros(a * b);
        for i in 0..a {
            for j in 0..a {
                let x = self.at(i, j);
                if x == 0.0 {
                    continue;
                }
                for k in 0..b {
                    for l in 0..b {
                        *m.at_mut(i * b + k, j * b + l) = x * other.at(k, l);
                    }
                }
            }
        }
        m
    }

    pub fn matmul(&self, other: &Matrix) -> Matrix {
        let n = self.n;
        let mut m = Matrix::zeros(n);
        for i in 0..n {
            for k in 0..n {
                let x = self.at(i, k);
                if x == 0.0 {
                    continue;
                }
                for j in 0..n {
                    m.data[i * n + j] += x * other.data[k * n + j];
                }
            }
        }
        m
    }

    pub fn transpose(&self) -> Matrix {
        let mut m = Matrix::zeros(self.n);
        for i in 0..self.n {
            for j in 0..self.n {
                *m.at_mut(j, i) = self.at(i, j);
            }
        }
        m
    }

    pub fn trace(&self) -> f64 {
        (0..self.n).map(|i| self.at(i, i)).sum()
    }

    /// Frobenius inner product `Tr(A^T B)`.
    pub fn dot(&self, other: &Matrix) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn add_scaled(&mut self, other: &Matrix, s: f64) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += s * b;
        }
    }

    pub fn scaled(&self, s: f64) -> Matrix {
        Matrix {
            n: self.n,
            data: self.data.iter().map(|x| x * s).collect(),
        }
    }

    pub fn sub(&self, other: &Matrix) -> Matrix {
        let mut m = self.clone();
        m.add_scaled(other, -1.0);
        m
    }

    pub fn symmetrized(&self) -> Matrix {
        let mut m = self.clone();
        for i in 0..self.n {
            for j in 0..self.n {
                *m.at_mut(i, j) = 0.5 * (self.at(i, j) + self.at(j, i));
            }
        }
        m
    }

    pub fn max_asymmetry(&self) -> f64 {
        let mut w: f64 = 0.0;
        for i in 0..self.n {
            for j in 0..i {
                w = w.max((self.at(i, j) - self.at(j, i)).abs());
            }
        }
        w
    }
}

/// Transpose on the first factor of a `da x db` bipartite operator.
pub fn partial_transpose(m: &Matrix, da: usize, db: usize) -> Matrix {
    assert_eq!(m.n, da * db, "dimension mismatch");
    let mut out = Matrix::zeros(m.n);
    for i in 0..da {
        for j in 0..da {
            for k in 0..db {
                for l in 0..db {
                    *out.at_mut(j * db + k, i * db + l) = m.at(i * db + k, j * db + l);
                }
            }
        }
    }
    out
}

/// Partial trace over the second factor.
pub fn trace_b(m: &Matrix, da: usize, db: usize) -> Matrix {
    let mut out = Matrix::zeros(da);
    for i in 0..da {
        for j in 0..da {
            *out.at_mut(i, j) = (0..db).map(|k| m.at(i * db + k, j * db + k)).sum();
        }
    }
    out
}

/// Cyclic Jacobi eigendecomposition of a real symmetric matrix. Returns the
/// eigenvalues and the matrix whose columns are the eigenvectors.
pub fn jacobi_eigen(a: &Matrix) -> (Vec<f64>, Matrix) {
    let n = a.n;
    let mut m = a.symmetrized().data;
    let mut v = Matrix::identity(n);
    let scale = a.norm().max(f64::MIN_POSITIVE);
    for _ in 0..100 {
        let mut off = 0.0;
        for p in 0..n {
            for q in p + 1..n {
                off += m[p * n + q] * m[p * n + q];
            }
        }
        if off.sqrt() <= JACOBI_TOLERANCE * scale {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[p * n + q];
                if apq.abs() <= 1e-300 {
                    continue;
                }
                let theta = (m[q * n + q] - m[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (x, y) = (m[k * n + p], m[k * n + q]);
                    m[k * n + p] = c * x - s * y;
                    m[k * n + q] = s * x + c * y;
                }
                for k in 0..n {
                    let (x, y) = (m[p * n + k], m[q * n + k]);
                    m[p * n + k] = c * x - s * y;
                    m[q * n + k] = s * x + c * y;
                }
                for k in 0..n {
                    let (x, y) = (v.data[k * n + p], v.data[k * n + q]);
                    v.data[k * n + p] = c * x - s * y;
                    v.data[k * n + q] = s * x + c * y;
                }
            }
        }
    }
    ((0..n).map(|i| m[i * n + i]).collect(), v)
}

pub fn min_eigenvalue(a: &Matrix) -> f64 {
    jacobi_eigen(a).0.into_iter().fold(f64::INFINITY, f64::min)
}

/// Nearest positive semidefinite matrix in Frobenius norm.
pub fn project_psd(a: &Matrix) -> Matrix {
    let (vals, vecs) = jacobi_eigen(a);
    let n = a.n;
    let mut out = Matrix::zeros(n);
    for (k, &lam) in vals.iter().enumerate() {
        if lam <= 0.0 {
            continue;
        }
        for i in 0..n {
            let vi = vecs.data[i * n + k] * lam;
            if vi == 0.0 {
                continue;
            }
            for j in 0..n {
                out.data[i * n + j] += vi * vecs.data[j * n + k];
            }
        }
    }
    out
}

/// Bob outcome labels.
pub const OUTCOMES: [&str; 4] = ["0", "1", "nc", "dc"];
pub const NO_CLICK: usize = 2;
pub const DOUBLE_CLICK: usize = 3;
pub const BASES: [&str; 2] = ["Z", "X"];

fn basis_index(s: &str) -> Option<usize> {
    BASES.iter().position(|b| *b == s)
}

/// `p(a, b | x, y)` indexed `[x][y][a][b]`.
#[derive(Debug, Clone, PartialEq)]
pub struct JointDistribution {
    pub p: [[[[f64; 4]; 2]; 2]; 2],
}

pub const DISTRIBUTION_HEADER: &str = "x,y,a,b,p";

impl JointDistribution {
    pub fn zeros() -> Self {
        Self {
            p: [[[[0.0; 4]; 2]; 2]; 2],
        }
    }

    pub fn get(&self, x: usize, y: usize, a: usize, b: usize) -> f64 {
        self.p[x][y][a][b]
    }

    pub fn validate(&self) -> Result<()> {
        for x in 0..2 {
            for y in 0..2 {
                let mut s = 0.0;
                for a in 0..2 {
                    for b in 0..4 {
                        let v = self.p[x][y][a][b];
                        if !(v >= 0.0) {
                            return Err(Error::Domain(format!("negative probability at x={x} y={y} a={a} b={b}")));
                        }
                        s += v;
                    }
                }
                if (s - 1.0).abs() > 1e-9 {
                    return Err(Error::Domain(format!(
                        "distribution for x={} y={} sums to {s}",
                        BASES[x], BASES[y]
                    )));
                }
            }
        }
        Ok(())
    }

    /// `(1 - w) self + w other`.
    pub fn mix(&self, other: &JointDistribution, w: f64) -> JointDistribution {
        let mut out = self.clone();
        for x in 0..2 {
            for y in 0..2 {
                for a in 0..2 {
                    for b in 0..4 {
                        out.p[x][y][a][b] = (1.0 - w) * self.p[x][y][a][b] + w * other.p[x][y][a][b];
                    }
                }
            }
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(DISTRIBUTION_HEADER);
        s.push('\n');
        for x in 0..2 {
            for y in 0..2 {
                for a in 0..2 {
                    for b in 0..4 {
                        let _ = writeln!(s, "{},{},{a},{},{}", BASES[x], BASES[y], OUTCOMES[b], self.p[x][y][a][b]);
                    }
                }
            }
        }
        s
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut out = Self::zeros();
        let mut seen = [[[[false; 4]; 2]; 2]; 2];
        let mut header = false;
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if !header {
                if line != DISTRIBUTION_HEADER {
                    return Err(Error::parse(path, i + 1, format!("expected header `{DISTRIBUTION_HEADER}`")));
                }
                header = true;
                continue;
            }
            let f: Vec<&str> = line.split(',').map(str::trim).collect();
            if f.len() != 5 {
                return Err(Error::parse(path, i + 1, "expected 5 fields"));
            }
            let bad = |what: &str| Error::parse(path, i + 1, format!("bad {what}"));
            let x = basis_index(f[0]).ok_or_else(|| bad("basis x"))?;
            let y = basis_index(f[1]).ok_or_else(|| bad("basis y"))?;
            let a: usize = f[2].parse().ok().filter(|a| *a < 2).ok_or_else(|| bad("bit a"))?;
            let b = OUTCOMES.iter().position(|o| *o == f[3]).ok_or_else(|| bad("outcome b"))?;
            let p: f64 = f[4].parse().map_err(|_| bad("probability"))?;
            if seen[x][y][a][b] {
                return Err(Error::parse(path, i + 1, "duplicate entry"));
            }
            seen[x][y][a][b] = true;
            out.p[x][y][a][b] = p;
        }
        if seen.iter().flatten().flatten().flatten().any(|s| !s) {
            return Err(Error::parse(path, text.lines().count().max(1), "missing entries"));
        }
        out.validate().map_err(|e| Error::parse(path, 1, e.to_string()))?;
        Ok(out)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?, path)
    }
}

/// Measurement operators of both parties.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementModel {
    /// Detector efficiencies `[H, V, D, A]` per Bob spatial mode.
    pub bob_modes: Vec<[f64; 4]>,
}

impl MeasurementModel {
    /// A single spatial mode, Bob space `span{vacuum, H, V}`.
    pub fn single_mode(eta: [f64; 4]) -> Self {
        Self { bob_modes: vec![eta] }
    }

    /// Normal-incidence mode with unit efficiencies plus one mode per attack
    /// angle carrying the efficiencies recorded at that angle.
    pub fn with_attack_modes(angles: &AttackAngleSet) -> Self {
        let mut modes = vec![[1.0; 4]];
        for k in Channel::ALL {
            if let Some(a) = angles.best(k) {
                modes.push(a.efficiencies.map(|e| e.min(1.0)));
            }
        }
        Self { bob_modes: modes }
    }

    pub fn alice_dim(&self) -> usize {
        ALICE_DIM
    }

    pub fn bob_dim(&self) -> usize {
        1 + 2 * self.bob_modes.len()
    }

    pub fn dim(&self) -> usize {
        ALICE_DIM * self.bob_dim()
    }

    /// Alice's operator for basis `x` and bit `a`.
    pub fn alice_op(&self, x: usize, a: usize) -> Matrix {
        let s = 2 * x + a;
        let mut e = [0.0; ALICE_DIM];
        e[s] = 1.0;
        Matrix::outer(&e, &e).scaled(2.0)
    }

    /// Reduced state Alice's register must have: a quarter of the Gram
    /// matrix of the four polarization states.
    pub fn alice_reduced_state(&self) -> Matrix {
        let mut m = Matrix::zeros(ALICE_DIM);
        for s in Channel::ALL {
            for t in Channel::ALL {
                let (u, v) = (s.jones(), t.jones());
                *m.at_mut(s.index(), t.index()) = 0.25 * (u[0] * v[0] + u[1] * v[1]);
            }
        }
        m
    }

    pub fn bob_povm(&self, y: usize) -> Result<[Matrix; 4]> {
        build_bob_povm(&self.bob_modes, y)
    }
}

/// Index of polarization component `pol` of spatial mode `mode`.
fn bob_index(mode: usize, pol: usize) -> usize {
    1 + 2 * mode + pol
}

/// Embed a real polarization vector into spatial mode `mode`.
fn embed(v: [f64; 2], mode: usize, db: usize) -> Vec<f64> {
    let mut out = vec![0.0; db];
    out[bob_index(mode, 0)] = v[0];
    out[bob_index(mode, 1)] = v[1];
    out
}

/// Bob's POVM for basis `y`: `[click 0, click 1, no click, double click]`.
pub fn build_bob_povm(modes: &[[f64; 4]], y: usize) -> Result<[Matrix; 4]> {
    if y > 1 {
        return Err(Error::Domain(format!("basis index {y} out of range")));
    }
    for eta in modes {
        if eta.iter().any(|e| !(0.0..=1.0).contains(e)) {
            return Err(Error::Domain(format!("detector efficiency outside [0, 1]: {eta:?}")));
        }
    }
    let db = 1 + 2 * modes.len();
    let mut clicks = [Matrix::zeros(db), Matrix::zeros(db)];
    for (bit, click) in clicks.iter_mut().enumerate() {
        let ch = Channel::ALL[2 * y + bit];
        for (m, eta) in modes.iter().enumerate() {
            let v = embed(ch.jones(), m, db);
            click.add_scaled(&Matrix::outer(&v, &v), eta[ch.index()]);
        }
    }
    let mut none = Matrix::identity(db);
    none.add_scaled(&clicks[0], -1.0);
    none.add_scaled(&clicks[1], -1.0);
    let [c0, c1] = clicks;
    Ok([c0, c1, none, Matrix::zeros(db)])
}

/// Joint distribution of a bipartite state under `model`.
pub fn distribution_from_state(rho: &Matrix, model: &MeasurementModel) -> Result<JointDistribution> {
    if rho.n != model.dim() {
        return Err(Error::Domain("state dimension does not match the measurement model".into()));
    }
    let mut out = JointDistribution::zeros();
    for y in 0..2 {
        let povm = model.bob_povm(y)?;
        for x in 0..2 {
            for a in 0..2 {
                let ma = model.alice_op(x, a);
                for (b, mb) in povm.iter().enumerate() {
                    out.p[x][y][a][b] = rho.dot(&ma.kron(mb)).max(0.0);
                }
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub enum ChannelSpec {
    /// Depolarizing qubit channel with bit-error rate `qber`, transmission
    /// `transmission`, delivering into spatial mode 0.
    Lossy { transmission: f64, qber: f64 },
    /// Eve measures in `basis` (or a random basis when `None`) and resends
    /// the outcome into spatial mode `mode`.
    InterceptResend { basis: Option<usize>, mode: usize },
}

/// Source-replacement state after sending Bob's half through `spec`.
pub fn channel_state(spec: &ChannelSpec, model: &MeasurementModel) -> Result<Matrix> {
    let db = model.bob_dim();
    let mut rho = Matrix::zeros(model.dim());
    let mut add_block = |s: Channel, t: Channel, bob: &Matrix| {
        for i in 0..db {
            for j in 0..db {
                let v = bob.at(i, j);
                if v != 0.0 {
                    *rho.at_mut(s.index() * db + i, t.index() * db + j) += 0.25 * v;
                }
            }
        }
    };
    match *spec {
        ChannelSpec::Lossy { transmission, qber } => {
            if !(0.0..=1.0).contains(&transmission) || !(0.0..=0.5).contains(&qber) {
                return Err(Error::Domain("transmission must lie in [0, 1] and qber in [0, 0.5]".into()));
            }
            let keep = 1.0 - 2.0 * qber;
            for s in Channel::ALL {
                for t in Channel::ALL {
                    let (u, v) = (s.jones(), t.jones());
                    let overlap = u[0] * v[0] + u[1] * v[1];
                    let mut bob = Matrix::outer(&embed(u, 0, db), &embed(v, 0, db)).scaled(transmission * keep);
                    for pol in 0..2 {
                        *bob.at_mut(bob_index(0, pol), bob_index(0, pol)) += transmission * (1.0 - keep) * overlap * 0.5;
                    }
                    *bob.at_mut(0, 0) += (1.0 - transmission) * overlap;
                    add_block(s, t, &bob);
                }
            }
        }
        ChannelSpec::InterceptResend { basis, mode } => {
            if mode >= model.bob_modes.len() {
                return Err(Error::Domain(format!("no spatial mode {mode}")));
            }
            let bases: Vec<(usize, f64)> = match basis {
                Some(b) if b < 2 => vec![(b, 1.0)],
                Some(b) => return Err(Error::Domain(format!("basis index {b} out of range"))),
                None => vec![(0, 0.5), (1, 0.5)],
            };
            for (b, w) in bases {
                for bit in 0..2 {
                    let e = Channel::ALL[2 * b + bit];
                    let ev = e.jones();
                    let resend = embed(ev, mode, db);
                    let bob = Matrix::outer(&resend, &resend);
                    for s in Channel::ALL {
                        for t in Channel::ALL {
                            let (u, v) = (s.jones(), t.jones());
                            let amp = (ev[0] * u[0] + ev[1] * u[1]) * (ev[0] * v[0] + ev[1] * v[1]);
                            if amp != 0.0 {
                                add_block(s, t, &bob.scaled(w * amp));
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(rho)
}

pub fn distribution_from_channel(spec: &ChannelSpec, model: &MeasurementModel) -> Result<JointDistribution> {
    distribution_from_state(&channel_state(spec, model)?, model)
}

#[derive(Debug, Clone, PartialEq)]
pub enum Verdict {
    /// A PPT state reproducing the data exists.
    CompatibleWithIr(Matrix),
    /// No PPT state reproduces the data (numerical stall certificate).
    EntanglementVerified,
    Indeterminate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WitnessVerdict {
    pub verdict: Verdict,
    pub residual: f64,
    pub iterations: usize,
    pub tolerance: f64,
}

impl WitnessVerdict {
    pub fn label(&self) -> &'static str {
        match self.verdict {
            Verdict::CompatibleWithIr(_) => "compatible-with-IR",
            Verdict::EntanglementVerified => "entanglement-verified",
            Verdict::Indeterminate => "indeterminate",
        }
    }

    /// `verdict,residual,iterations,tolerance`.
    pub fn record(&self) -> String {
        format!("{},{:e},{},{:e}", self.label(), self.residual, self.iterations, self.tolerance)
    }
}

/// Orthonormalized linear constraints `<Q_i, rho> = d_i`.
struct AffineSet {
    q: Vec<Matrix>,
    d: Vec<f64>,
    /// Largest violation of a dependent constraint by the data.
    inconsistency: f64,
}

impl AffineSet {
    fn new(ops: Vec<(Matrix, f64)>) -> Self {
        let mut q: Vec<Matrix> = Vec::new();
        let mut d: Vec<f64> = Vec::new();
        let mut inconsistency: f64 = 0.0;
        for (m, c) in ops {
            let mut v = m.symmetrized();
            let mut c = c;
            for _ in 0..2 {
                for (qi, di) in q.iter().zip(&d) {
                    let r = v.dot(qi);
                    v.add_scaled(qi, -r);
                    c -= r * di;
                }
            }
            let nv = v.norm();
            if nv < 1e-10 {
                inconsistency = inconsistency.max(c.abs());
                continue;
            }
            q.push(v.scaled(1.0 / nv));
            d.push(c / nv);
        }
        Self { q, d, inconsistency }
    }

    fn project(&self, x: &Matrix) -> Matrix {
        let mut out = x.clone();
        for (qi, di) in self.q.iter().zip(&self.d) {
            let r = out.dot(qi) - di;
            out.add_scaled(qi, -r);
        }
        out
    }

    fn residual(&self, x: &Matrix) -> f64 {
        self.q
            .iter()
            .zip(&self.d)
            .map(|(qi, di)| (x.dot(qi) - di).abs())
            .fold(0.0, f64::max)
    }
}

fn constraint_operators(p: &JointDistribution, model: &MeasurementModel) -> Result<Vec<(Matrix, f64)>> {
    let da = model.alice_dim();
    let db = model.bob_dim();
    let mut ops = Vec::new();
    for y in 0..2 {
        let povm = model.bob_povm(y)?;
        for x in 0..2 {
            for a in 0..2 {
                let ma = model.alice_op(x, a);
                for (b, mb) in povm.iter().enumerate() {
                    if b == DOUBLE_CLICK {
                        continue;
                    }
                    ops.push((ma.kron(mb), p.p[x][y][a][b]));
                }
            }
        }
    }
    let ra = model.alice_reduced_state();
    let idb = Matrix::identity(db);
    for i in 0..da {
        for j in i..da {
            let mut e = Matrix::zeros(da);
            *e.at_mut(i, j) += 0.5;
            *e.at_mut(j, i) += 0.5;
            ops.push((e.kron(&idb), ra.at(i, j)));
        }
    }
    Ok(ops)
}

/// Independent check of a candidate state against all three constraint
/// families: `(min eigenvalue, min eigenvalue of the partial transpose,
/// largest constraint violation)`.
pub fn check_constraints(rho: &Matrix, p: &JointDistribution, model: &MeasurementModel) -> Result<(f64, f64, f64)> {
    let mut worst: f64 = 0.0;
    let q = distribution_from_state(rho, model)?;
    for x in 0..2 {
        for y in 0..2 {
            for a in 0..2 {
                for b in 0..4 {
                    worst = worst.max((q.p[x][y][a][b] - p.p[x][y][a][b]).abs());
                }
            }
        }
    }
    let ra = trace_b(rho, model.alice_dim(), model.bob_dim());
    worst = worst.max(ra.sub(&model.alice_reduced_state()).data.iter().fold(0.0, |m, v| m.max(v.abs())));
    let pt = partial_transpose(rho, model.alice_dim(), model.bob_dim());
    Ok((min_eigenvalue(rho), min_eigenvalue(&pt), worst))
}

const MARGIN_CHECK_START: usize = 200;

/// Orthonormal basis of the support of Alice's reduced state. Any state
/// meeting the constraints lives on this support tensored with Bob's space.
fn alice_support(model: &MeasurementModel) -> Vec<Vec<f64>> {
    let ra = model.alice_reduced_state();
    let (vals, vecs) = jacobi_eigen(&ra);
    let n = ra.n;
    vals.iter()
        .enumerate()
        .filter(|(_, &l)| l > 1e-12)
        .map(|(k, _)| (0..n).map(|i| vecs.data[i * n + k]).collect())
        .collect()
}

/// `W^T m W` with `W = wa ⊗ I`, `wa` given as columns.
fn compress(m: &Matrix, wa: &[Vec<f64>], db: usize) -> Matrix {
    let da = wa[0].len();
    let r = wa.len();
    let mut out = Matrix::zeros(r * db);
    for i in 0..r {
        for j in 0..r {
            for a in 0..da {
                for b in 0..da {
                    let w = wa[i][a] * wa[j][b];
                    if w == 0.0 {
                        continue;
                    }
                    for k in 0..db {
                        for l in 0..db {
                            *out.at_mut(i * db + k, j * db + l) += w * m.at(a * db + k, b * db + l);
                        }
                    }
                }
            }
        }
    }
    out
}

/// `W s W^T`, the inverse of [`compress`] on the support.
fn lift(s: &Matrix, wa: &[Vec<f64>], db: usize) -> Matrix {
    let da = wa[0].len();
    let r = wa.len();
    let mut out = Matrix::zeros(da * db);
    for a in 0..da {
        for b in 0..da {
            for i in 0..r {
                for j in 0..r {
                    let w = wa[i][a] * wa[j][b];
                    if w == 0.0 {
                        continue;
                    }
                    for k in 0..db {
                        for l in 0..db {
                            *out.at_mut(a * db + k, b * db + l) += w * s.at(i * db + k, j * db + l);
                        }
                    }
                }
            }
        }
    }
    out
}

fn cholesky(a: &Matrix) -> Option<Matrix> {
    let n = a.n;
    let mut l = Matrix::zeros(n);
    for j in 0..n {
        let mut d = a.at(j, j);
        for k in 0..j {
            d -= l.at(j, k) * l.at(j, k);
        }
        if !(d > 0.0) {
            return None;
        }
        let d = d.sqrt();
        *l.at_mut(j, j) = d;
        for i in j + 1..n {
            let mut v = a.at(i, j);
            for k in 0..j {
                v -= l.at(i, k) * l.at(j, k);
            }
            *l.at_mut(i, j) = v / d;
        }
    }
    Some(l)
}

/// `L^{-1} b L^{-T}` for symmetric `b`.
fn whiten(l: &Matrix, b: &Matrix) -> Matrix {
    let n = l.n;
    let solve_cols = |m: &Matrix| {
        let mut x = m.clone();
        for c in 0..n {
            for i in 0..n {
                let mut v = x.at(i, c);
                for k in 0..i {
                    v -= l.at(i, k) * x.at(k, c);
                }
                *x.at_mut(i, c) = v / l.at(i, i);
            }
        }
        x
    };
    solve_cols(&solve_cols(b).transpose())
}

fn solve_spd(h: &Matrix, g: &[f64]) -> Option<Vec<f64>> {
    let l = cholesky(h)?;
    let n = h.n;
    let mut y = g.to_vec();
    for i in 0..n {
        for k in 0..i {
            y[i] -= l.at(i, k) * y[k];
        }
        y[i] /= l.at(i, i);
    }
    for i in (0..n).rev() {
        for k in i + 1..n {
            y[i] -= l.at(k, i) * y[k];
        }
        y[i] /= l.at(i, i);
    }
    Some(y)
}

fn log_det(l: &Matrix) -> f64 {
    (0..l.n).map(|i| 2.0 * l.at(i, i).ln()).sum()
}

enum Margin {
    /// State with both `sigma` and its partial transpose above `-tol`.
    Feasible(Matrix, f64),
    /// Upper bound on the achievable margin, below `-tol`.
    Infeasible(f64),
    Unknown,
}

/// Log-barrier solve of `max t` subject to the constraints, `sigma >= t I`
/// and `sigma^Γ >= t I`. Handles data whose feasible set has no interior,
/// where projections converge slowly.
fn max_margin(affine: &AffineSet, ra: usize, db: usize, tol: f64) -> Margin {
    let m = ra * db;
    let pt = |x: &Matrix| partial_transpose(x, ra, db);
    let mut sigma0 = Matrix::zeros(m);
    for (qi, di) in affine.q.iter().zip(&affine.d) {
        sigma0.add_scaled(qi, *di);
    }
    let mut basis: Vec<Matrix> = Vec::new();
    for i in 0..m {
        for j in i..m {
            let mut e = Matrix::zeros(m);
            if i == j {
                *e.at_mut(i, i) = 1.0;
            } else {
                *e.at_mut(i, j) = std::f64::consts::FRAC_1_SQRT_2;
                *e.at_mut(j, i) = std::f64::consts::FRAC_1_SQRT_2;
            }
            for _ in 0..2 {
                for v in affine.q.iter().chain(basis.iter()) {
                    let r = e.dot(v);
                    e.add_scaled(v, -r);
                }
            }
            let ne = e.norm();
            if ne > 1e-8 {
                basis.push(e.scaled(1.0 / ne));
            }
        }
    }
    let basis_pt: Vec<Matrix> = basis.iter().map(pt).collect();
    let k = basis.len();
    let ident = Matrix::identity(m);
    let sigma_of = |z: &[f64]| {
        let mut s = sigma0.clone();
        for (b, zi) in basis.iter().zip(z) {
            s.add_scaled(b, *zi);
        }
        s
    };
    let slacks = |z: &[f64], t: f64| {
        let s = sigma_of(z);
        let mut s1 = s.clone();
        s1.add_scaled(&ident, -t);
        let mut s2 = pt(&s);
        s2.add_scaled(&ident, -t);
        (s, s1, s2)
    };

    let mut z = vec![0.0; k];
    let mut t = min_eigenvalue(&sigma0).min(min_eigenvalue(&pt(&sigma0))) - 1.0;
    let barrier_weight = 2.0 * m as f64;
    let mut w = 1.0;
    while w < 1e14 {
        for _ in 0..200 {
            let (s, s1, s2) = slacks(&z, t);
            if t >= -0.1 * tol {
                return Margin::Feasible(s, t);
            }
            let (Some(l1), Some(l2)) = (cholesky(&s1), cholesky(&s2)) else {
                return Margin::Unknown;
            };
            let phi = |tt: f64, l1: &Matrix, l2: &Matrix| -w * tt - log_det(l1) - log_det(l2);
            let phi0 = phi(t, &l1, &l2);
            let mut g1: Vec<Matrix> = basis.iter().map(|b| whiten(&l1, b)).collect();
            let mut g2: Vec<Matrix> = basis_pt.iter().map(|b| whiten(&l2, b)).collect();
            g1.push(whiten(&l1, &ident).scaled(-1.0));
            g2.push(whiten(&l2, &ident).scaled(-1.0));
            let dim = k + 1;
            let mut grad = vec![0.0; dim];
            let mut hess = Matrix::zeros(dim);
            for a in 0..dim {
                grad[a] = -g1[a].trace() - g2[a].trace();
                for b in a..dim {
                    let v = g1[a].dot(&g1[b]) + g2[a].dot(&g2[b]);
                    *hess.at_mut(a, b) = v;
                    *hess.at_mut(b, a) = v;
                }
            }
            grad[k] -= w;
            let Some(step) = solve_spd(&hess, &grad) else {
                return Margin::Unknown;
            };
            let decrement: f64 = step.iter().zip(&grad).map(|(a, b)| a * b).sum();
            if decrement < 1e-12 {
                break;
            }
            let mut alpha = 1.0;
            let mut moved = false;
            while alpha > 1e-12 {
                let zn: Vec<f64> = z.iter().zip(&step).map(|(zi, di)| zi - alpha * di).collect();
                let tn = t - alpha * step[k];
                let (_, n1, n2) = slacks(&zn, tn);
                if let (Some(a1), Some(a2)) = (cholesky(&n1), cholesky(&n2)) {
                    if phi(tn, &a1, &a2) <= phi0 - 0.25 * alpha * decrement {
                        z = zn;
                        t = tn;
                        moved = true;
                        break;
                    }
                }
                alpha *= 0.5;
            }
            if !moved {
                break;
            }
        }
        if t + barrier_weight / w < -tol {
            return Margin::Infeasible(t + barrier_weight / w);
        }
        w *= 10.0;
    }
    Margin::Unknown
}

/// Search for a PPT state reproducing `p` by Dykstra alternating projections
/// between the constraint set, the PSD cone and the PPT cone.
///
/// Projections run on the support of Alice's reduced state. Once the
/// projection residual is small, a barrier solve is tried to certify a
/// boundary solution that the projections approach too slowly.
pub fn check_feasibility(p: &JointDistribution, model: &MeasurementModel, tol: f64) -> Result<WitnessVerdict> {
    check_feasibility_with_cap(p, model, tol, MAX_ITERATIONS)
}

pub fn check_feasibility_with_cap(
    p: &JointDistribution,
    model: &MeasurementModel,
    tol: f64,
    max_iterations: usize,
) -> Result<WitnessVerdict> {
    p.validate()?;
    let db = model.bob_dim();
    let wa = alice_support(model);
    let ra = wa.len();
    let n = ra * db;
    let ops = constraint_operators(p, model)?
        .into_iter()
        .map(|(m, c)| (compress(&m, &wa, db), c))
        .collect();
    let affine = AffineSet::new(ops);
    let verdict = |verdict, residual, iterations| WitnessVerdict {
        verdict,
        residual,
        iterations,
        tolerance: tol,
    };
    if affine.inconsistency > tol {
        return Ok(verdict(Verdict::EntanglementVerified, affine.inconsistency, 0));
    }
    let pt = |m: &Matrix| partial_transpose(m, ra, db);

    let mut x = affine.project(&Matrix::identity(n).scaled(1.0 / n as f64));
    let mut corr_psd = Matrix::zeros(n);
    let mut corr_ppt = Matrix::zeros(n);
    let mut history: Vec<f64> = Vec::new();
    let mut residual = f64::INFINITY;
    let mut next_margin_check = MARGIN_CHECK_START;
    for it in 1..=max_iterations {
        let mut a = x.clone();
        a.add_scaled(&corr_psd, 1.0);
        let y = project_psd(&a);
        corr_psd = a.sub(&y);

        let mut b = y.clone();
        b.add_scaled(&corr_ppt, 1.0);
        let z = pt(&project_psd(&pt(&b)));
        corr_ppt = b.sub(&z);

        x = affine.project(&z);

        if it % 10 != 0 && it != 1 {
            continue;
        }
        let lam = min_eigenvalue(&x).min(min_eigenvalue(&pt(&x)));
        residual = (-lam).max(0.0).max(affine.residual(&x));
        if residual <= tol {
            return Ok(verdict(Verdict::CompatibleWithIr(lift(&x, &wa, db)), residual, it));
        }
        if it >= next_margin_check {
            next_margin_check *= 2;
            match max_margin(&affine, ra, db, tol) {
                Margin::Feasible(s, t) => {
                    return Ok(verdict(Verdict::CompatibleWithIr(lift(&s, &wa, db)), (-t).max(0.0), it));
                }
                Margin::Infeasible(bound) => {
                    return Ok(verdict(Verdict::EntanglementVerified, residual.max(-bound), it));
                }
                Margin::Unknown => {}
            }
        }
        history.push(residual);
        let w = STALL_WINDOW / 10;
        if history.len() > w {
            let old = history[history.len() - 1 - w];
            if (old - residual).abs() <= STALL_RELATIVE_CHANGE * old {
                return Ok(verdict(Verdict::EntanglementVerified, residual, it));
            }
        }
    }
    Ok(verdict(Verdict::Indeterminate, residual, max_iterations))
}
