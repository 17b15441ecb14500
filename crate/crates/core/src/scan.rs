//! Angle scans under a hologram ensemble, turbulence-weighted maps and
//! attack-angle search.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::receiver::{map_from_support, AngleGrid, Channel, EfficiencyMap, Polarization, ReceiverModel};
use crate::screens::{correct_tip_tilt, Bin, HologramEnsemble, PhaseScreen, ZernikeBasis, ZernikeCoeffs};

/// Denominator floor used when forming efficiency ratios.
pub const RATIO_FLOOR: f64 = 1e-6;
/// Smallest normalized efficiency an attack angle may have.
pub const DEFAULT_MIN_TAU: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct ScanSpec {
    /// Half-width of the scan in both axes (rad).
    pub half_range: f64,
    pub step: f64,
    pub polarization: Polarization,
    /// Remove tip and tilt from every screen before scanning.
    pub tip_tilt_correction: bool,
}

impl Default for ScanSpec {
    fn default() -> Self {
        Self {
            half_range: 2.7e-3,
            step: 135e-6,
            polarization: Polarization::Circular,
            tip_tilt_correction: true,
        }
    }
}

impl ScanSpec {
    pub fn points_per_axis(&self) -> Result<usize> {
        if !(self.step > 0.0 && self.half_range >= 0.0) {
            return Err(Error::Domain("scan step must be positive and range non-negative".into()));
        }
        let half = self.half_range / self.step;
        let r = half.round();
        if (half - r).abs() > 1e-6 {
            return Err(Error::Domain(format!(
                "scan range {} is not a whole number of {} steps",
                self.half_range, self.step
            )));
        }
        Ok(2 * r as usize + 1)
    }

    pub fn grid(&self) -> Result<AngleGrid> {
        let n = self.points_per_axis()?;
        let h = (n / 2) as i64;
        let axis: Vec<f64> = (0..n as i64).map(|i| (i - h) as f64 * self.step).collect();
        Ok(AngleGrid {
            thetas: axis.clone(),
            phis: axis,
        })
    }
}

/// Per-hologram maps of one scan, in ensemble order.
#[derive(Debug, Clone)]
pub struct ScanResult {
    pub maps: Vec<EfficiencyMap>,
    pub bins: Vec<Bin>,
    pub weights: [f64; 5],
    /// Per-channel efficiency of the flat screen at (0, 0) used as the normalization.
    pub reference: [f64; 4],
}

impl ScanResult {
    pub fn weighted(&self) -> Result<EfficiencyMap> {
        weighted_map(&self.maps, &self.bins, &self.weights)
    }
}

fn support_of(model: &ReceiverModel, screen: &PhaseScreen) -> Vec<(f64, f64, f64)> {
    let prop = model.propagator();
    model.far_field(screen, &prop).support(model.support_fraction)
}

/// Per-channel efficiency of the unaberrated beam at normal incidence.
pub fn reference_efficiencies(model: &ReceiverModel, pol: Polarization) -> Result<[f64; 4]> {
    let flat = PhaseScreen::flat(model.screen_resolution, model.beam_diameter);
    let support = support_of(model, &flat);
    let mut r = [0.0; 4];
    for k in Channel::ALL {
        r[k.index()] = model.efficiency_from_support(k, (0.0, 0.0), &support, pol);
        if r[k.index()] <= 0.0 {
            return Err(Error::Domain(format!("channel {} is dark at normal incidence", k.name())));
        }
    }
    Ok(r)
}

/// Scan one screen over `grid`, normalized by `reference`.
pub fn scan_screen(
    model: &ReceiverModel,
    grid: &AngleGrid,
    screen: &PhaseScreen,
    pol: Polarization,
    reference: &[f64; 4],
) -> EfficiencyMap {
    let support = support_of(model, screen);
    map_from_support(model, grid, &support, pol, reference)
}

/// Scan every member of `ensemble`.
pub fn run_scan(model: &ReceiverModel, spec: &ScanSpec, ensemble: &HologramEnsemble) -> Result<ScanResult> {
    model.validate()?;
    let grid = spec.grid()?;
    for &t in &grid.thetas {
        if t.abs() > model.field_of_view {
            return Err(Error::Domain("scan range exceeds the receiver field of view".into()));
        }
    }
    let reference = reference_efficiencies(model, spec.polarization)?;
    let basis = ZernikeBasis::new(model.screen_resolution);
    let maps: Vec<EfficiencyMap> = ensemble
        .members
        .par_iter()
        .map(|m| {
            let coeffs: ZernikeCoeffs = if spec.tip_tilt_correction {
                correct_tip_tilt(&m.coeffs)
            } else {
                m.coeffs.clone()
            };
            let screen = basis.render(&coeffs);
            scan_screen(model, &grid, &screen, spec.polarization, &reference)
        })
        .collect();
    Ok(ScanResult {
        maps,
        bins: ensemble.members.iter().map(|m| m.bin).collect(),
        weights: ensemble.weights,
        reference,
    })
}

/// Average the maps within each bin, then combine the bin means with `weights`.
pub fn weighted_map(maps: &[EfficiencyMap], bins: &[Bin], weights: &[f64]) -> Result<EfficiencyMap> {
    if weights.len() != Bin::ALL.len() {
        return Err(Error::WeightCount {
            expected: Bin::ALL.len(),
            got: weights.len(),
        });
    }
    if maps.len() != bins.len() || maps.is_empty() {
        return Err(Error::Domain("need one bin label per map".into()));
    }
    let grid = maps[0].grid.clone();
    if maps.iter().any(|m| m.grid != grid) {
        return Err(Error::Domain("maps are on different grids".into()));
    }
    let n = grid.len();
    let mut out = EfficiencyMap::filled(grid, 0.0);
    for bin in Bin::ALL {
        let w = weights[bin.index()];
        let members: Vec<&EfficiencyMap> = maps.iter().zip(bins).filter(|(_, b)| **b == bin).map(|(m, _)| m).collect();
        if members.is_empty() {
            if w == 0.0 {
                continue;
            }
            return Err(Error::Domain(format!("bin {} has weight but no members", bin.label())));
        }
        let scale = w / members.len() as f64;
        for k in 0..4 {
            for i in 0..n {
                let mean: f64 = members.iter().map(|m| m.tau[k][i]).sum();
                out.tau[k][i] += scale * mean;
            }
        }
    }
    Ok(out)
}

/// `min(tau_k / tau_c)` over the two conjugate-basis channels at grid index `i`.
pub fn delta_at(map: &EfficiencyMap, k: Channel, i: usize) -> f64 {
    let tk = map.get(k, i);
    let [c1, c2] = k.conjugates();
    let denom = map.get(c1, i).max(map.get(c2, i));
    if denom < RATIO_FLOOR {
        if tk > RATIO_FLOOR {
            f64::INFINITY
        } else {
            0.0
        }
    } else {
        tk / denom
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SelectionMode {
    /// Single angle with the largest ratio per channel.
    MaxDelta,
    /// Every angle whose ratio exceeds the threshold.
    Threshold(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackAngle {
    pub channel: Channel,
    pub theta: f64,
    pub phi: f64,
    pub delta: f64,
    pub tau: f64,
    /// Normalized efficiencies of all four channels at this angle.
    pub efficiencies: [f64; 4],
}

impl AttackAngle {
    /// Angle with the target channel at `tau` and both conjugate channels
    /// at `tau / delta`; the orthogonal channel is set the same way.
    pub fn from_ratio(channel: Channel, delta: f64, tau: f64) -> Self {
        let other = if delta.is_infinite() { 0.0 } else { tau / delta };
        let mut e = [other; 4];
        e[channel.index()] = tau;
        Self {
            channel,
            theta: 0.0,
            phi: 0.0,
            delta,
            tau,
            efficiencies: e,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AttackAngleSet {
    pub angles: Vec<AttackAngle>,
}

pub const ATTACK_HEADER: &str = "channel,theta_rad,phi_rad,delta,tau";

impl AttackAngleSet {
    /// Best angle for `k` (largest delta, first on ties).
    pub fn best(&self, k: Channel) -> Option<&AttackAngle> {
        self.angles
            .iter()
            .filter(|a| a.channel == k)
            .fold(None, |acc: Option<&AttackAngle>, a| match acc {
                Some(b) if b.delta >= a.delta => Some(b),
                _ => Some(a),
            })
    }

    /// The deltas of the best angle per channel (0 where none).
    pub fn deltas(&self) -> [f64; 4] {
        Channel::ALL.map(|k| self.best(k).map_or(0.0, |a| a.delta))
    }

    pub fn taus(&self) -> [f64; 4] {
        Channel::ALL.map(|k| self.best(k).map_or(0.0, |a| a.tau))
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(ATTACK_HEADER);
        s.push('\n');
        for a in &self.angles {
            let _ = writeln!(s, "{},{},{},{},{}", a.channel.name(), a.theta, a.phi, a.delta, a.tau);
        }
        s
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv())?;
        Ok(())
    }

    /// Parse the attack-angle CSV. Efficiencies of the non-target channels
    /// are reconstructed as `tau / delta`.
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'));
        match lines.next() {
            Some((_, h)) if h.trim() == ATTACK_HEADER => {}
            Some((i, _)) => return Err(Error::parse(path, i + 1, format!("expected header `{ATTACK_HEADER}`"))),
            None => return Err(Error::parse(path, 1, "empty file")),
        }
        let mut angles = Vec::new();
        for (i, line) in lines {
            let f: Vec<&str> = line.split(',').map(str::trim).collect();
            if f.len() != 5 {
                return Err(Error::parse(path, i + 1, format!("expected 5 fields, found {}", f.len())));
            }
            let channel =
                Channel::from_name(f[0]).ok_or_else(|| Error::parse(path, i + 1, format!("unknown channel `{}`", f[0])))?;
            let mut v = [0.0f64; 4];
            for (slot, s) in v.iter_mut().zip(&f[1..]) {
                *slot = s.parse().map_err(|_| Error::parse(path, i + 1, format!("bad number `{s}`")))?;
            }
            if !(v[2] >= 1.0) || !(v[3] > 0.0) || !v[3].is_finite() {
                return Err(Error::parse(path, i + 1, "delta must be >= 1 and tau positive"));
            }
            let mut a = AttackAngle::from_ratio(channel, v[2], v[3]);
            a.theta = v[0];
            a.phi = v[1];
            angles.push(a);
        }
        Ok(Self { angles })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?, path)
    }
}

/// Locate attack angles on `map`. Angles where the target channel is below
/// `min_tau` are never reported.
pub fn find_attack_angles(map: &EfficiencyMap, mode: SelectionMode, min_tau: f64) -> Result<AttackAngleSet> {
    let mut angles = Vec::new();
    for k in Channel::ALL {
        let candidates = (0..map.grid.len()).filter_map(|i| {
            let tau = map.get(k, i);
            if tau < min_tau || tau <= 0.0 {
                return None;
            }
            let d = delta_at(map, k, i);
            (d >= 1.0).then_some((i, d, tau))
        });
        let make = |(i, delta, tau): (usize, f64, f64)| {
            let (theta, phi) = map.grid.angle(i);
            AttackAngle {
                channel: k,
                theta,
                phi,
                delta,
                tau,
                efficiencies: Channel::ALL.map(|c| map.get(c, i)),
            }
        };
        match mode {
            SelectionMode::MaxDelta => {
                let best = candidates.fold(None, |acc: Option<(usize, f64, f64)>, c| match acc {
                    Some(b) if b.1 >= c.1 => Some(b),
                    _ => Some(c),
                });
                if let Some(b) = best {
                    angles.push(make(b));
                }
            }
            SelectionMode::Threshold(t) => {
                angles.extend(candidates.filter(|c| c.1 > t).map(make));
            }
        }
    }
    if angles.is_empty() {
        return Err(Error::NoAttackAngles);
    }
    Ok(AttackAngleSet { angles })
}
