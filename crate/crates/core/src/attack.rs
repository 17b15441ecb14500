//! Faked-state intercept-resend attack: detection model, constrained QBER
//! optimizer, loss curves and the unsafe link length.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::receiver::Channel;
use crate::scan::AttackAngleSet;
use crate::turbmath;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossGrid {
    pub min_db: f64,
    pub max_db: f64,
    pub step_db: f64,
}

impl Default for LossGrid {
    fn default() -> Self {
        Self {
            min_db: 0.0,
            max_db: 30.0,
            step_db: 0.25,
        }
    }
}

impl LossGrid {
    pub fn points(&self) -> Result<Vec<f64>> {
        if !(self.step_db > 0.0) || self.min_db < 0.0 || self.max_db < self.min_db {
            return Err(Error::Domain("loss grid needs 0 <= min <= max and a positive step".into()));
        }
        let n = ((self.max_db - self.min_db) / self.step_db + 1e-9).floor() as usize + 1;
        Ok((0..n).map(|i| self.min_db + i as f64 * self.step_db).collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackParams {
    pub angles: AttackAngleSet,
    pub eta_eve: f64,
    pub eta_bob: f64,
    pub mu_alice: f64,
    pub qber_max: f64,
    pub loss: LossGrid,
    pub mu_cap: f64,
    pub rate_tolerance: f64,
    pub starts: usize,
    pub seed: u64,
}

impl AttackParams {
    pub fn new(angles: AttackAngleSet) -> Self {
        Self {
            angles,
            eta_eve: 0.85,
            eta_bob: 0.4,
            mu_alice: 0.5,
            qber_max: 0.08,
            loss: LossGrid::default(),
            mu_cap: 100.0,
            rate_tolerance: 1e-4,
            starts: 64,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("eta_eve", self.eta_eve), ("eta_bob", self.eta_bob)] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(Error::Config(format!("{name} must lie in (0, 1], got {v}")));
            }
        }
        if !(self.qber_max > 0.0 && self.qber_max < 0.11) {
            return Err(Error::Config(format!("qber_threshold must lie in (0, 0.11), got {}", self.qber_max)));
        }
        if !(self.mu_alice > 0.0 && self.mu_cap > 0.0) {
            return Err(Error::Config("mean photon numbers must be positive".into()));
        }
        if self.angles.angles.is_empty() {
            return Err(Error::NoAttackAngles);
        }
        Ok(())
    }

    /// Normalized efficiencies of Bob's four channels at each resend state's
    /// attack angle; `None` where the state has no angle.
    pub fn efficiency_table(&self) -> [Option<[f64; 4]>; 4] {
        Channel::ALL.map(|j| self.angles.best(j).map(|a| a.efficiencies))
    }
}

/// Bob's honest click probability after `loss_db` of channel loss.
pub fn expected_rate(mu_alice: f64, loss_db: f64, eta_bob: f64) -> f64 {
    -(-mu_alice * 10f64.powf(-loss_db / 10.0) * eta_bob).exp_m1()
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackOutcome {
    /// Bob's total click probability per pulse.
    pub rate: f64,
    /// Sifted click probability per pulse.
    pub sifted: f64,
    /// Error fraction among sifted clicks; `None` if nothing is sifted.
    pub qber: Option<f64>,
    /// Probability that Bob's recorded outcome is channel k.
    pub outcome: [f64; 4],
}

/// Click probability of every detector for one resend.
fn clicks(mu: f64, j: Channel, eff: &[f64; 4], eta_bob: f64) -> [f64; 4] {
    Channel::ALL.map(|k| -(-mu * 0.5 * j.overlap(k) * eff[k.index()] * eta_bob).exp_m1())
}

/// Distribution of Bob's recorded outcome when each detector clicks
/// independently; multiple clicks resolve to one clicked detector at random.
fn outcome_distribution(p: &[f64; 4]) -> [f64; 4] {
    let mut out = [0.0; 4];
    for set in 1u32..16 {
        let mut prob = 1.0;
        for k in 0..4 {
            prob *= if set & (1 << k) != 0 { p[k] } else { 1.0 - p[k] };
        }
        let share = prob / set.count_ones() as f64;
        for (k, o) in out.iter_mut().enumerate() {
            if set & (1 << k) != 0 {
                *o += share;
            }
        }
    }
    out
}

/// Probability that Eve forwards state `j` given Alice sent `s`, conditioned
/// on Eve detecting.
fn eve_resend_weight(s: Channel, j: Channel) -> f64 {
    if s == j {
        0.5
    } else if s.basis() != j.basis() {
        0.25
    } else {
        0.0
    }
}

/// Evaluate the attack for resend mean photon numbers `mu`.
pub fn simulate_attack(params: &AttackParams, mu: &[f64; 4]) -> AttackOutcome {
    let table = params.efficiency_table();
    simulate_with(&table, params.mu_alice, params.eta_eve, params.eta_bob, mu)
}

fn simulate_with(table: &[Option<[f64; 4]>; 4], mu_alice: f64, eta_eve: f64, eta_bob: f64, mu: &[f64; 4]) -> AttackOutcome {
    let p_eve = -(-mu_alice * eta_eve).exp_m1();
    let mut dist = [[0.0; 4]; 4];
    for j in Channel::ALL {
        if let Some(eff) = &table[j.index()] {
            let m = mu[j.index()];
            if m > 0.0 {
                dist[j.index()] = outcome_distribution(&clicks(m, j, eff, eta_bob));
            }
        }
    }
    let mut outcome = [0.0; 4];
    let mut sifted = 0.0;
    let mut errors = 0.0;
    for s in Channel::ALL {
        for j in Channel::ALL {
            let w = 0.25 * p_eve * eve_resend_weight(s, j);
            if w == 0.0 {
                continue;
            }
            for k in Channel::ALL {
                let p = w * dist[j.index()][k.index()];
                outcome[k.index()] += p;
                if k.basis() == s.basis() {
                    sifted += p;
                    if k != s {
                        errors += p;
                    }
                }
            }
        }
    }
    AttackOutcome {
        rate: outcome.iter().sum(),
        sifted,
        qber: (sifted > 0.0).then(|| errors / sifted),
        outcome,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackSolution {
    pub loss_db: f64,
    pub mu: [f64; 4],
    pub rate: f64,
    pub expected_rate: f64,
    pub qber: f64,
    pub feasible: bool,
    pub diagnostic: Option<String>,
}

struct Problem<'a> {
    params: &'a AttackParams,
    table: [Option<[f64; 4]>; 4],
    target: f64,
}

impl Problem<'_> {
    fn eval(&self, mu: &[f64; 4]) -> AttackOutcome {
        let p = self.params;
        simulate_with(&self.table, p.mu_alice, p.eta_eve, p.eta_bob, mu)
    }

    /// Scale direction `w` so the rate matches the target; `None` if even
    /// the photon-number cap falls short.
    fn repair(&self, w: &[f64; 4]) -> Option<([f64; 4], AttackOutcome)> {
        let wmax = w.iter().cloned().fold(0.0, f64::max);
        if wmax <= 0.0 {
            return None;
        }
        let scaled = |s: f64| w.map(|x| x * s);
        let mut hi = self.params.mu_cap / wmax;
        let top = self.eval(&scaled(hi));
        if top.rate < self.target - self.params.rate_tolerance {
            return None;
        }
        let mut lo = 0.0;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if self.eval(&scaled(mid)).rate < self.target {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= 1e-12 * hi {
                break;
            }
        }
        let mu = scaled(hi);
        let out = self.eval(&mu);
        ((out.rate - self.target).abs() <= self.params.rate_tolerance).then_some((mu, out))
    }

    fn cost(&self, w: &[f64; 4]) -> Option<(f64, [f64; 4], AttackOutcome)> {
        let (mu, out) = self.repair(w)?;
        Some((out.qber?, mu, out))
    }
}

fn normalize(w: &mut [f64; 4]) -> bool {
    let s: f64 = w.iter().sum();
    if s <= 0.0 {
        return false;
    }
    for x in w.iter_mut() {
        *x /= s;
    }
    true
}

/// Scale the resend direction `w` until Bob's click rate matches the
/// expected rate at `loss_db`; `None` when `mu_cap` cannot reach it.
pub fn match_rate(params: &AttackParams, loss_db: f64, w: &[f64; 4]) -> Option<([f64; 4], AttackOutcome)> {
    let prob = Problem {
        params,
        table: params.efficiency_table(),
        target: expected_rate(params.mu_alice, loss_db, params.eta_bob),
    };
    prob.repair(w)
}

/// Minimize the QBER subject to matching Bob's expected click rate.
pub fn optimize(params: &AttackParams, loss_db: f64) -> Result<AttackSolution> {
    params.validate()?;
    let target = expected_rate(params.mu_alice, loss_db, params.eta_bob);
    let prob = Problem {
        params,
        table: params.efficiency_table(),
        target,
    };
    let active: Vec<usize> = (0..4).filter(|&j| prob.table[j].is_some()).collect();

    let mut starts: Vec<[f64; 4]> = Vec::with_capacity(params.starts.max(16));
    for subset in 1u32..16 {
        if (0..4).any(|j| subset & (1 << j) != 0 && prob.table[j].is_none()) {
            continue;
        }
        let mut w = [0.0; 4];
        for (j, x) in w.iter_mut().enumerate() {
            if subset & (1 << j) != 0 {
                *x = 1.0;
            }
        }
        normalize(&mut w);
        starts.push(w);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    while starts.len() < params.starts {
        let mut w = [0.0; 4];
        for &j in &active {
            w[j] = -rng.gen::<f64>().max(1e-300).ln();
        }
        if normalize(&mut w) {
            starts.push(w);
        }
    }

    let mut best: Option<(f64, [f64; 4], AttackOutcome)> = None;
    for start in starts {
        let Some(mut cur) = prob.cost(&start) else {
            // unreachable rate along this direction
            continue;
        };
        let mut w = start;
        let mut h = 0.25;
        while h > 1e-7 {
            let mut improved = false;
            for &j in &active {
                for sign in [1.0, -1.0] {
                    let mut t = w;
                    t[j] = (t[j] + sign * h).max(0.0);
                    if !normalize(&mut t) {
                        continue;
                    }
                    if let Some(c) = prob.cost(&t) {
                        if c.0 < cur.0 - 1e-15 {
                            cur = c;
                            w = t;
                            improved = true;
                        }
                    }
                }
            }
            if !improved {
                h *= 0.5;
            }
        }
        if best.as_ref().is_none_or(|b| cur.0 < b.0) {
            best = Some(cur);
        }
    }

    Ok(match best {
        None => AttackSolution {
            loss_db,
            mu: [0.0; 4],
            rate: prob.eval(&[params.mu_cap; 4]).rate,
            expected_rate: target,
            qber: f64::NAN,
            feasible: false,
            diagnostic: Some(format!(
                "expected rate {target:.6} unreachable within mu_cap {}",
                params.mu_cap
            )),
        },
        Some((qber, mu, out)) => {
            let feasible = qber <= params.qber_max;
            AttackSolution {
                loss_db,
                mu,
                rate: out.rate,
                expected_rate: target,
                qber,
                feasible,
                diagnostic: (!feasible).then(|| format!("minimum QBER {qber:.4} above threshold {}", params.qber_max)),
            }
        }
    })
}

/// Optimize at every point of the loss grid.
pub fn qber_curve(params: &AttackParams) -> Result<Vec<AttackSolution>> {
    params.validate()?;
    let losses = params.loss.points()?;
    losses.par_iter().map(|&l| optimize(params, l)).collect()
}

pub const CURVE_HEADER: &str = "loss_db,qber,feasible,mu_H,mu_V,mu_D,mu_A";

pub fn curve_to_csv(curve: &[AttackSolution]) -> String {
    let mut s = String::from(CURVE_HEADER);
    s.push('\n');
    for p in curve {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            p.loss_db,
            p.qber,
            u8::from(p.feasible),
            p.mu[0],
            p.mu[1],
            p.mu[2],
            p.mu[3]
        );
    }
    s
}

/// Contiguous loss intervals `[first, last]` where the attack is feasible.
pub fn feasible_windows(curve: &[AttackSolution]) -> Vec<(f64, f64)> {
    let mut out: Vec<(f64, f64)> = Vec::new();
    let mut open: Option<(f64, f64)> = None;
    for p in curve {
        if p.feasible {
            open = Some(match open {
                Some((a, _)) => (a, p.loss_db),
                None => (p.loss_db, p.loss_db),
            });
        } else if let Some(w) = open.take() {
            out.push(w);
        }
    }
    out.extend(open);
    out
}

/// Link length at which the Fried parameter falls to `r0_threshold`.
pub fn unsafe_radius(r0_threshold: f64, cn2: f64, wavelength: f64) -> Result<f64> {
    turbmath::path_for_r0(cn2, r0_threshold, wavelength)
}
