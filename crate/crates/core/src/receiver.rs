//! Four-channel passive-basis polarization receiver.
//!
//! Each channel is a basis split, a polarization projection with finite
//! extinction, a multimode fiber core offset in the focal plane and a
//! detector efficiency. The telescope is collapsed into one effective focal
//! length that maps entrance angle to focal-plane position.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::optics::{IntensityGrid, Propagator};
use crate::screens::PhaseScreen;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Channel {
    H,
    V,
    D,
    A,
}

impl Channel {
    pub const ALL: [Channel; 4] = [Channel::H, Channel::V, Channel::D, Channel::A];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        ["H", "V", "D", "A"][self.index()]
    }

    pub fn from_name(s: &str) -> Option<Channel> {
        Channel::ALL.into_iter().find(|c| c.name() == s)
    }

    /// 0 for the rectilinear (H/V) basis, 1 for the diagonal (D/A) basis.
    pub fn basis(self) -> usize {
        self.index() / 2
    }

    /// Bit value within the basis.
    pub fn bit(self) -> usize {
        self.index() % 2
    }

    pub fn orthogonal(self) -> Channel {
        Channel::ALL[self.index() ^ 1]
    }

    /// The two channels of the other basis.
    pub fn conjugates(self) -> [Channel; 2] {
        if self.basis() == 0 {
            [Channel::D, Channel::A]
        } else {
            [Channel::H, Channel::V]
        }
    }

    /// Real Jones vector of the polarization this channel detects.
    pub fn jones(self) -> [f64; 2] {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        match self {
            Channel::H => [1.0, 0.0],
            Channel::V => [0.0, 1.0],
            Channel::D => [s, s],
            Channel::A => [s, -s],
        }
    }

    pub fn projector(self) -> [[f64; 2]; 2] {
        let v = self.jones();
        [[v[0] * v[0], v[0] * v[1]], [v[1] * v[0], v[1] * v[1]]]
    }

    /// `|<self|other>|^2`.
    pub fn overlap(self, other: Channel) -> f64 {
        let a = self.jones();
        let b = other.jones();
        (a[0] * b[0] + a[1] * b[1]).powi(2)
    }
}

/// Input polarization state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Polarization {
    Linear(Channel),
    Circular,
}

impl Polarization {
    pub fn jones(self) -> [Complex64; 2] {
        match self {
            Polarization::Linear(c) => {
                let v = c.jones();
                [Complex64::new(v[0], 0.0), Complex64::new(v[1], 0.0)]
            }
            Polarization::Circular => {
                let s = std::f64::consts::FRAC_1_SQRT_2;
                [Complex64::new(s, 0.0), Complex64::new(0.0, s)]
            }
        }
    }

    /// `<psi| P |psi>` for a real symmetric 2x2 projector.
    pub fn projected_power(self, p: &[[f64; 2]; 2]) -> f64 {
        let j = self.jones();
        let mut acc = Complex64::new(0.0, 0.0);
        for a in 0..2 {
            for b in 0..2 {
                acc += j[a].conj() * p[a][b] * j[b];
            }
        }
        acc.re
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelParams {
    pub basis_fraction: f64,
    /// Power extinction ratio of the polarization analyser (e.g. 1000 for 1000:1).
    pub extinction_ratio: f64,
    /// Fiber core offset in the focal plane (m).
    pub offset: (f64, f64),
    pub detector_efficiency: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReceiverModel {
    pub channels: [ChannelParams; 4],
    /// Effective focal length from entrance angle to fiber plane (m).
    pub focal_length: f64,
    pub core_radius: f64,
    /// Diameter of the beam that carries the emulated screen at the receiver (m).
    pub beam_diameter: f64,
    pub wavelength: f64,
    /// Largest |theta| or |phi| the model covers (rad).
    pub field_of_view: f64,
    pub screen_resolution: usize,
    pub padding: usize,
    /// Fraction of far-field power kept when evaluating coupling.
    pub support_fraction: f64,
}

impl Default for ReceiverModel {
    fn default() -> Self {
        let ch = |offset: (f64, f64), er: f64| ChannelParams {
            basis_fraction: 0.5,
            extinction_ratio: er,
            offset,
            detector_efficiency: 1.0,
        };
        Self {
            channels: [
                ch((14e-6, 0.0), 1000.0),
                ch((0.0, 14e-6), 100.0),
                ch((-14e-6, 0.0), 1000.0),
                ch((0.0, -14e-6), 100.0),
            ],
            focal_length: 0.0525,
            core_radius: 52.5e-6,
            beam_diameter: 2.0e-3,
            wavelength: crate::WAVELENGTH,
            field_of_view: 5e-3,
            screen_resolution: 128,
            padding: 4,
            support_fraction: 1.0 - 1e-5,
        }
    }
}

impl ReceiverModel {
    /// All couplers on axis, identical channels.
    pub fn aligned() -> Self {
        let mut m = Self::default();
        for c in &mut m.channels {
            c.offset = (0.0, 0.0);
        }
        m.channels[Channel::V.index()].extinction_ratio = 1000.0;
        m.channels[Channel::A.index()].extinction_ratio = 1000.0;
        m
    }

    pub fn validate(&self) -> Result<()> {
        let sum_z = self.channels[0].basis_fraction;
        let sum_x = self.channels[2].basis_fraction;
        if (self.channels[1].basis_fraction - sum_z).abs() > 1e-12
            || (self.channels[3].basis_fraction - sum_x).abs() > 1e-12
            || (sum_z + sum_x - 1.0).abs() > 1e-9
        {
            return Err(Error::Domain("basis fractions must sum to 1 across the two bases".into()));
        }
        for c in &self.channels {
            if !(0.0..=1.0).contains(&c.detector_efficiency) || c.extinction_ratio <= 0.0 {
                return Err(Error::Domain("invalid channel parameters".into()));
            }
        }
        if !(self.focal_length > 0.0 && self.core_radius > 0.0 && self.beam_diameter > 0.0) {
            return Err(Error::Domain("receiver geometry must be positive".into()));
        }
        Ok(())
    }

    /// Angular position (rad) at which channel `k`'s core sits.
    pub fn core_angle(&self, k: Channel) -> (f64, f64) {
        let o = self.channels[k.index()].offset;
        (o.0 / self.focal_length, o.1 / self.focal_length)
    }

    pub fn core_angular_radius(&self) -> f64 {
        self.core_radius / self.focal_length
    }

    /// Polarization-dependent factor of channel `k` including finite extinction.
    pub fn polarization_factor(&self, k: Channel, pol: Polarization) -> f64 {
        let er = self.channels[k.index()].extinction_ratio;
        let leak = 1.0 / (1.0 + er);
        let pass = pol.projected_power(&k.projector());
        let block = pol.projected_power(&k.orthogonal().projector());
        (1.0 - leak) * pass + leak * block
    }

    /// Far-field intensity of `screen` carried by the receiver-side beam.
    pub fn far_field(&self, screen: &PhaseScreen, propagator: &Propagator) -> IntensityGrid {
        let s = screen.clone().with_aperture(self.beam_diameter);
        propagator.intensity(&s, self.wavelength)
    }

    pub fn propagator(&self) -> Propagator {
        Propagator::for_screen(self.screen_resolution, self.padding)
    }

    /// Coupled fraction for channel `k` when the beam arrives at `angle`,
    /// given the far-field support of the screen.
    pub fn coupling(&self, k: Channel, angle: (f64, f64), support: &[(f64, f64, f64)]) -> f64 {
        let (cx, cy) = self.core_angle(k);
        let r = self.core_angular_radius();
        let r2 = r * r;
        let mut acc = 0.0;
        for &(ax, ay, w) in support {
            let dx = ax + angle.0 - cx;
            let dy = ay + angle.1 - cy;
            if dx * dx + dy * dy <= r2 {
                acc += w;
            }
        }
        acc
    }

    fn check_angle(&self, angle: (f64, f64)) -> Result<()> {
        if angle.0.abs() > self.field_of_view || angle.1.abs() > self.field_of_view {
            return Err(Error::Domain(format!(
                "angle ({:.3e}, {:.3e}) rad outside the {:.3e} rad field of view",
                angle.0, angle.1, self.field_of_view
            )));
        }
        Ok(())
    }

    /// Absolute detection efficiency of channel `k` for a beam at `angle`
    /// through `screen` with input polarization `pol`.
    pub fn channel_efficiency(
        &self,
        k: Channel,
        angle: (f64, f64),
        screen: &PhaseScreen,
        pol: Polarization,
    ) -> Result<f64> {
        self.check_angle(angle)?;
        let prop = Propagator::for_screen(screen.resolution, self.padding);
        let support = self.far_field(screen, &prop).support(self.support_fraction);
        Ok(self.efficiency_from_support(k, angle, &support, pol))
    }

    pub fn efficiency_from_support(
        &self,
        k: Channel,
        angle: (f64, f64),
        support: &[(f64, f64, f64)],
        pol: Polarization,
    ) -> f64 {
        let c = &self.channels[k.index()];
        c.basis_fraction * self.polarization_factor(k, pol) * self.coupling(k, angle, support) * c.detector_efficiency
    }
}

/// Rectangular angle grid, theta-major.
#[derive(Debug, Clone, PartialEq)]
pub struct AngleGrid {
    pub thetas: Vec<f64>,
    pub phis: Vec<f64>,
}

impl AngleGrid {
    pub fn len(&self) -> usize {
        self.thetas.len() * self.phis.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn angle(&self, i: usize) -> (f64, f64) {
        let n = self.phis.len();
        (self.thetas[i / n], self.phis[i % n])
    }

    pub fn index_of(&self, theta: f64, phi: f64) -> Option<usize> {
        let it = self.thetas.iter().position(|&t| t == theta)?;
        let ip = self.phis.iter().position(|&p| p == phi)?;
        Some(it * self.phis.len() + ip)
    }
}

/// Normalized per-channel efficiencies over an angle grid.
#[derive(Debug, Clone, PartialEq)]
pub struct EfficiencyMap {
    pub grid: AngleGrid,
    /// `tau[k][i]` for channel index `k` and flattened grid index `i`.
    pub tau: [Vec<f64>; 4],
}

pub const MAP_HEADER: &str = "theta_rad,phi_rad,tau_H,tau_V,tau_D,tau_A";
const NORMALIZED_MARK: &str = "# normalized";

impl EfficiencyMap {
    pub fn filled(grid: AngleGrid, value: f64) -> Self {
        let n = grid.len();
        Self {
            grid,
            tau: std::array::from_fn(|_| vec![value; n]),
        }
    }

    pub fn get(&self, k: Channel, i: usize) -> f64 {
        self.tau[k.index()][i]
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::with_capacity(self.grid.len() * 80);
        s.push_str(NORMALIZED_MARK);
        s.push('\n');
        s.push_str(MAP_HEADER);
        s.push('\n');
        for i in 0..self.grid.len() {
            let (t, p) = self.grid.angle(i);
            let _ = writeln!(
                s,
                "{t},{p},{},{},{},{}",
                self.tau[0][i], self.tau[1][i], self.tau[2][i], self.tau[3][i]
            );
        }
        s
    }

    /// Parse the map CSV. Files without the `# normalized` marker hold raw
    /// rates and are rescaled so that each channel reads 1 at (0, 0).
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut normalized = false;
        let mut header_seen = false;
        let mut rows: Vec<(usize, f64, f64, [f64; 4])> = Vec::new();
        for (ln, line) in text.lines().enumerate() {
            let lineno = ln + 1;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if line.starts_with('#') {
                if line == NORMALIZED_MARK {
                    normalized = true;
                }
                continue;
            }
            if !header_seen {
                if line != MAP_HEADER {
                    return Err(Error::parse(path, lineno, format!("expected header `{MAP_HEADER}`")));
                }
                header_seen = true;
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 6 {
                return Err(Error::parse(path, lineno, format!("expected 6 fields, found {}", f.len())));
            }
            let mut v = [0.0f64; 6];
            for (slot, s) in v.iter_mut().zip(&f) {
                *slot = s
                    .trim()
                    .parse()
                    .map_err(|_| Error::parse(path, lineno, format!("bad number `{s}`")))?;
                if !slot.is_finite() {
                    return Err(Error::parse(path, lineno, "non-finite value"));
                }
            }
            let tau = [v[2], v[3], v[4], v[5]];
            if tau.iter().any(|&t| t < 0.0) {
                return Err(Error::parse(path, lineno, "negative efficiency"));
            }
            rows.push((lineno, v[0], v[1], tau));
        }
        if !header_seen {
            return Err(Error::parse(path, 1, "missing header"));
        }
        let mut thetas: Vec<f64> = rows.iter().map(|r| r.1).collect();
        let mut phis: Vec<f64> = rows.iter().map(|r| r.2).collect();
        for v in [&mut thetas, &mut phis] {
            v.sort_by(f64::total_cmp);
            v.dedup();
        }
        let grid = AngleGrid { thetas, phis };
        let mut map = EfficiencyMap::filled(grid, f64::NAN);
        let mut seen = vec![false; map.grid.len()];
        for (lineno, t, p, tau) in rows {
            let i = map.grid.index_of(t, p).expect("value collected above");
            if seen[i] {
                return Err(Error::parse(path, lineno, format!("duplicate angle ({t}, {p})")));
            }
            seen[i] = true;
            for k in 0..4 {
                map.tau[k][i] = tau[k];
            }
        }
        if let Some(i) = seen.iter().position(|s| !s) {
            let (t, p) = map.grid.angle(i);
            return Err(Error::parse(
                path,
                text.lines().count(),
                format!("incomplete grid: missing ({t}, {p})"),
            ));
        }
        if !normalized {
            map.normalize_at_origin()
                .map_err(|e| Error::parse(path, 1, e.to_string()))?;
        }
        Ok(map)
    }

    /// Divide each channel by its value at (0, 0).
    pub fn normalize_at_origin(&mut self) -> Result<()> {
        let i0 = self
            .grid
            .index_of(0.0, 0.0)
            .ok_or_else(|| Error::Domain("map has no (0, 0) sample to normalize against".into()))?;
        for k in 0..4 {
            let r = self.tau[k][i0];
            if r <= 0.0 {
                return Err(Error::Domain(format!("channel {} is dark at (0, 0)", Channel::ALL[k].name())));
            }
            for v in &mut self.tau[k] {
                *v /= r;
            }
        }
        Ok(())
    }

    /// Largest relative difference between neighbouring cells, per channel,
    /// as a fraction of that channel's maximum.
    pub fn max_neighbour_jump(&self) -> f64 {
        let nt = self.grid.thetas.len();
        let np = self.grid.phis.len();
        let mut worst: f64 = 0.0;
        for k in 0..4 {
            let t = &self.tau[k];
            let max = t.iter().cloned().fold(0.0, f64::max);
            if max == 0.0 {
                continue;
            }
            for a in 0..nt {
                for b in 0..np {
                    let i = a * np + b;
                    if a + 1 < nt {
                        worst = worst.max((t[i] - t[i + np]).abs() / max);
                    }
                    if b + 1 < np {
                        worst = worst.max((t[i] - t[i + 1]).abs() / max);
                    }
                }
            }
        }
        worst
    }
}

pub fn save_map(map: &EfficiencyMap, path: &Path) -> Result<()> {
    fs::write(path, map.to_csv())?;
    Ok(())
}

pub fn load_measured_map(path: &Path) -> Result<EfficiencyMap> {
    let text = fs::read_to_string(path)?;
    EfficiencyMap::parse(&text, path)
}

/// Efficiencies of every channel over `grid` for one far-field support,
/// divided by `reference`.
pub(crate) fn map_from_support(
    model: &ReceiverModel,
    grid: &AngleGrid,
    support: &[(f64, f64, f64)],
    pol: Polarization,
    reference: &[f64; 4],
) -> EfficiencyMap {
    let mut map = EfficiencyMap::filled(grid.clone(), 0.0);
    for i in 0..grid.len() {
        let a = grid.angle(i);
        for k in Channel::ALL {
            map.tau[k.index()][i] = model.efficiency_from_support(k, a, support, pol) / reference[k.index()];
        }
    }
    map
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::screens::{ZernikeBasis, ZernikeCoeffs};
    use crate::turbmath::TurbulenceParams;

    fn flat(model: &ReceiverModel) -> PhaseScreen {
        let p = TurbulenceParams::no_turbulence(0.2, 532e-9).unwrap();
        ZernikeBasis::new(model.screen_resolution).render(&ZernikeCoeffs::zeros(p))
    }

    #[test]
    fn projectors_are_hermitian_idempotent() {
        for k in Channel::ALL {
            let p = k.projector();
            assert_eq!(p[0][1], p[1][0]);
            for a in 0..2 {
                for b in 0..2 {
                    let sq: f64 = (0..2).map(|c| p[a][c] * p[c][b]).sum();
                    assert!((sq - p[a][b]).abs() < 1e-15);
                }
            }
        }
        assert!((Channel::H.overlap(Channel::D) - 0.5).abs() < 1e-15);
        assert!(Channel::H.overlap(Channel::V) < 1e-30);
    }

    #[test]
    fn aligned_model_balances_circular_input() {
        let m = ReceiverModel::aligned();
        m.validate().unwrap();
        let s = flat(&m);
        let e: Vec<f64> = Channel::ALL
            .iter()
            .map(|&k| m.channel_efficiency(k, (0.0, 0.0), &s, Polarization::Circular).unwrap())
            .collect();
        for v in &e {
            assert!((v - e[0]).abs() < 1e-6);
        }
        assert!(e[0] > 0.2);
    }

    #[test]
    fn horizontal_input_is_blocked_by_vertical_channel() {
        let m = ReceiverModel::aligned();
        let s = flat(&m);
        let h = m.channel_efficiency(Channel::H, (0.0, 0.0), &s, Polarization::Linear(Channel::H)).unwrap();
        let v = m.channel_efficiency(Channel::V, (0.0, 0.0), &s, Polarization::Linear(Channel::H)).unwrap();
        let er = m.channels[1].extinction_ratio;
        assert!(v <= h / er * 1.01, "{v} vs {h}");
        assert!(v > 0.0);
    }

    #[test]
    fn efficiency_peaks_at_coupler_offset_angle() {
        let mut m = ReceiverModel::aligned();
        m.channels[0].offset = (30e-6, 0.0);
        let s = flat(&m);
        let prop = m.propagator();
        let support = m.far_field(&s, &prop).support(m.support_fraction);
        let target = 30e-6 / m.focal_length;
        let step = 50e-6;
        let mut best = (f64::MIN, 0.0);
        for i in -40..=40 {
            let th = i as f64 * step;
            let v = m.efficiency_from_support(Channel::H, (th, 0.0), &support, Polarization::Circular);
            if v > best.0 + 1e-12 {
                best = (v, th);
            }
        }
        // plateau edges are symmetric around the peak; compare centre of plateau
        let peak_vals: Vec<f64> = (-40..=40)
            .map(|i| i as f64 * step)
            .filter(|&th| {
                m.efficiency_from_support(Channel::H, (th, 0.0), &support, Polarization::Circular)
                    >= best.0 - 1e-9
            })
            .collect();
        let centre = (peak_vals[0] + peak_vals[peak_vals.len() - 1]) / 2.0;
        assert!((centre - target).abs() <= step, "{centre} vs {target}");
    }

    #[test]
    fn out_of_view_angle_rejected() {
        let m = ReceiverModel::default();
        let s = flat(&m);
        assert!(m.channel_efficiency(Channel::H, (1.0, 0.0), &s, Polarization::Circular).is_err());
    }

    fn small_map() -> EfficiencyMap {
        let grid = AngleGrid {
            thetas: vec![-1e-3, 0.0, 1e-3],
            phis: vec![-1e-3, 0.0, 1e-3],
        };
        let mut m = EfficiencyMap::filled(grid, 1.0);
        m.tau[0][0] = 0.25;
        m.tau[3][8] = 0.125;
        m
    }

    #[test]
    fn map_roundtrip() {
        let m = small_map();
        let back = EfficiencyMap::parse(&m.to_csv(), Path::new("m.csv")).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn map_parse_errors() {
        let p = Path::new("m.csv");
        let good = small_map().to_csv();
        let dup = format!("{good}0,0,1,1,1,1\n");
        match EfficiencyMap::parse(&dup, p) {
            Err(Error::Parse { line, msg, .. }) => {
                assert_eq!(line, 12);
                assert!(msg.contains("duplicate"));
            }
            other => panic!("{other:?}"),
        }
        let incomplete: String = good.lines().take(10).map(|l| format!("{l}\n")).collect();
        assert!(matches!(EfficiencyMap::parse(&incomplete, p), Err(Error::Parse { .. })));
        let neg = good.replacen(",0.25,", ",-0.25,", 1);
        assert!(matches!(EfficiencyMap::parse(&neg, p), Err(Error::Parse { .. })));
        let short = format!("{MAP_HEADER}\n0,0,1,1\n");
        assert!(matches!(EfficiencyMap::parse(&short, p), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn raw_map_normalized_on_load() {
        let text = format!("{MAP_HEADER}\n0,0,2,4,8,16\n0,1,1,1,1,1\n");
        let m = EfficiencyMap::parse(&text, Path::new("raw.csv")).unwrap();
        assert_eq!(m.tau[0], vec![1.0, 0.5]);
        assert_eq!(m.tau[3], vec![1.0, 1.0 / 16.0]);
    }
}
