//! Scalar Fraunhofer propagation of phase-screened apertures.

use std::fmt::Write as _;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::screens::PhaseScreen;
use crate::turbmath::{self, TurbulenceParams};

/// Zero-padding factor used unless a caller asks otherwise.
pub const DEFAULT_PADDING: usize = 4;

/// Complex amplitude samples on a square grid.
#[derive(Debug, Clone)]
pub struct FieldGrid {
    pub data: Vec<Complex64>,
    pub n: usize,
    /// Sample pitch (m).
    pub pitch: f64,
    pub wavelength: f64,
}

impl FieldGrid {
    pub fn power(&self) -> f64 {
        self.data.iter().map(|a| a.norm_sqr()).sum::<f64>() * self.pitch * self.pitch
    }

    /// Physical coordinates (m) of sample `(row, col)`; the grid centre is
    /// sample `(n/2, n/2)` and `y` points up.
    pub fn coords(&self, row: usize, col: usize) -> (f64, f64) {
        let h = (self.n / 2) as f64;
        ((col as f64 - h) * self.pitch, (h - row as f64) * self.pitch)
    }
}

/// Far-field intensity sampled in angle.
#[derive(Debug, Clone)]
pub struct IntensityGrid {
    pub data: Vec<f64>,
    pub n: usize,
    /// Angular sample pitch (rad/pixel).
    pub angular_pitch: f64,
    /// Sum of all samples; equals the aperture power.
    pub power: f64,
}

/// Intensity-weighted mean direction (rad).
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Centroid {
    pub x: f64,
    pub y: f64,
}

impl Centroid {
    pub fn radius(&self) -> f64 {
        self.x.hypot(self.y)
    }
}

impl IntensityGrid {
    /// Angles (rad) of pixel `(row, col)`; `y` points up.
    pub fn angles(&self, row: usize, col: usize) -> (f64, f64) {
        let h = (self.n / 2) as f64;
        (
            (col as f64 - h) * self.angular_pitch,
            (h - row as f64) * self.angular_pitch,
        )
    }

    /// Plain-text export: `width height angular_pitch power` header line,
    /// then one whitespace-separated row per line.
    pub fn to_text(&self) -> String {
        let mut s = String::with_capacity(self.n * self.n * 12);
        let _ = writeln!(s, "{} {} {:e} {:e}", self.n, self.n, self.angular_pitch, self.power);
        for row in self.data.chunks(self.n) {
            let line: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
            s.push_str(&line.join(" "));
            s.push('\n');
        }
        s
    }

    /// 8-bit binary PGM of the central `crop`-pixel window, linearly scaled
    /// to the window maximum.
    pub fn to_pgm(&self, crop: usize) -> Vec<u8> {
        let crop = crop.min(self.n);
        let start = self.n / 2 - crop / 2;
        let max = (start..start + crop)
            .flat_map(|r| (start..start + crop).map(move |c| (r, c)))
            .map(|(r, c)| self.data[r * self.n + c])
            .fold(0.0, f64::max);
        let mut out = format!("P5\n{crop} {crop}\n255\n").into_bytes();
        for r in start..start + crop {
            for c in start..start + crop {
                let v = if max > 0.0 { self.data[r * self.n + c] / max } else { 0.0 };
                out.push((v * 255.0).round().clamp(0.0, 255.0) as u8);
            }
        }
        out
    }

    /// Pixels holding the brightest `fraction` of the power, as
    /// `(theta_x, theta_y, weight)` with weights relative to total power.
    pub fn support(&self, fraction: f64) -> Vec<(f64, f64, f64)> {
        let mut idx: Vec<usize> = (0..self.data.len()).filter(|&k| self.data[k] > 0.0).collect();
        idx.sort_by(|&a, &b| self.data[b].total_cmp(&self.data[a]).then(a.cmp(&b)));
        let mut acc = 0.0;
        let mut out = Vec::new();
        for k in idx {
            if acc >= fraction * self.power {
                break;
            }
            acc += self.data[k];
            let (tx, ty) = self.angles(k / self.n, k % self.n);
            out.push((tx, ty, self.data[k] / self.power));
        }
        out
    }
}

/// FFT engine for one padded grid size; cheap to share across threads.
#[derive(Clone)]
pub struct Propagator {
    n: usize,
    fft: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Propagator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Propagator").field("n", &self.n).finish()
    }
}

impl Propagator {
    pub fn new(n: usize) -> Self {
        let fft = FftPlanner::new().plan_fft_forward(n);
        Self { n, fft }
    }

    pub fn for_screen(resolution: usize, padding: usize) -> Self {
        Self::new(resolution * padding)
    }

    pub fn size(&self) -> usize {
        self.n
    }

    /// Centred (fft-shifted) spectrum of `aperture * exp(i phase)`; the
    /// returned buffer is row-major, row index = y frequency.
    fn spectrum(&self, screen: &PhaseScreen) -> Vec<Complex64> {
        let n = self.n;
        let res = screen.resolution;
        assert!(res <= n, "padded grid smaller than screen");
        let mut buf = vec![Complex64::new(0.0, 0.0); n * n];
        for r in 0..res {
            for c in 0..res {
                if screen.inside(r, c) {
                    buf[r * n + c] = Complex64::from_polar(1.0, screen.grid[r * res + c]);
                }
            }
        }
        // Rows past `res` are zero; transform only the populated ones.
        self.fft.process(&mut buf[..res * n]);
        let mut t = transpose(&buf, n);
        drop(buf);
        self.fft.process(&mut t);
        // Transpose back and fftshift in one pass.
        let h = n / 2;
        let mut out = vec![Complex64::new(0.0, 0.0); n * n];
        for c in 0..n {
            let oc = (c + h) % n;
            let col = &t[c * n..(c + 1) * n];
            for (r, v) in col.iter().enumerate() {
                out[((r + h) % n) * n + oc] = *v;
            }
        }
        out
    }

    /// Far-field intensity without any resolution check.
    pub fn intensity(&self, screen: &PhaseScreen, wavelength: f64) -> IntensityGrid {
        let n = self.n;
        let dx = screen.pitch();
        let scale = dx * dx / (n as f64 * n as f64);
        let spec = self.spectrum(screen);
        let data: Vec<f64> = spec.iter().map(|a| a.norm_sqr() * scale).collect();
        let power = data.iter().sum();
        IntensityGrid {
            data,
            n,
            angular_pitch: wavelength / (n as f64 * dx),
            power,
        }
    }

    /// Complex field in the back focal plane of a lens of focal length `f`.
    pub fn focal_field(&self, screen: &PhaseScreen, wavelength: f64, f: f64) -> FieldGrid {
        let n = self.n;
        let dx = screen.pitch();
        let pitch = wavelength * f / (n as f64 * dx);
        // Parseval: sum|U|^2 = n^2 sum|u|^2, so this keeps total power.
        let scale = dx / (n as f64 * pitch);
        let data = self.spectrum(screen).into_iter().map(|a| a * scale).collect();
        FieldGrid {
            data,
            n,
            pitch,
            wavelength,
        }
    }
}

fn transpose(a: &[Complex64], n: usize) -> Vec<Complex64> {
    let mut t = vec![Complex64::new(0.0, 0.0); n * n];
    const B: usize = 32;
    for rb in (0..n).step_by(B) {
        for cb in (0..n).step_by(B) {
            for r in rb..(rb + B).min(n) {
                for c in cb..(cb + B).min(n) {
                    t[c * n + r] = a[r * n + c];
                }
            }
        }
    }
    t
}

/// Aperture power `sum |u|^2 dx^2` of a unit-amplitude screened aperture.
pub fn aperture_power(screen: &PhaseScreen) -> f64 {
    let dx = screen.pitch();
    screen.mask().iter().filter(|&&m| m).count() as f64 * dx * dx
}

/// Far-field intensity of `screen` with `padding`-times zero padding.
///
/// Fails when the angular pitch is coarser than a quarter of the per-axis
/// tilt deviation expected for `p` at this aperture.
pub fn far_field(screen: &PhaseScreen, p: &TurbulenceParams, padding: usize) -> Result<IntensityGrid> {
    far_field_with(&Propagator::for_screen(screen.resolution, padding), screen, p)
}

/// [`far_field`] reusing the FFT plan of `prop`.
pub fn far_field_with(prop: &Propagator, screen: &PhaseScreen, p: &TurbulenceParams) -> Result<IntensityGrid> {
    let n = prop.size();
    let pitch = p.wavelength / (n as f64 * screen.pitch());
    if p.is_turbulent() {
        let sigma = turbmath::diffraction_tilt_std_per_axis(&p.with_aperture(screen.aperture_d));
        if pitch > sigma / 4.0 {
            return Err(Error::Resolution {
                pitch,
                limit: sigma / 4.0,
            });
        }
    }
    Ok(prop.intensity(screen, p.wavelength))
}

/// First moment of the intensity in angle.
pub fn centroid(img: &IntensityGrid) -> Result<Centroid> {
    let n = img.n;
    let mut sx = 0.0;
    let mut sy = 0.0;
    let mut total = 0.0;
    for r in 0..n {
        let row = &img.data[r * n..(r + 1) * n];
        let mut row_sum = 0.0;
        for (c, &v) in row.iter().enumerate() {
            sx += v * c as f64;
            row_sum += v;
        }
        sy += row_sum * r as f64;
        total += row_sum;
    }
    if total <= 0.0 || !total.is_finite() {
        return Err(Error::ZeroPower);
    }
    let h = (n / 2) as f64;
    Ok(Centroid {
        x: (sx / total - h) * img.angular_pitch,
        y: (h - sy / total) * img.angular_pitch,
    })
}

/// Fraction of the field's power inside a fiber core of radius
/// `core_radius` centred at `core_offset` (m) in the focal plane.
pub fn fiber_coupling(field: &FieldGrid, core_radius: f64, core_offset: (f64, f64)) -> f64 {
    let total: f64 = field.data.iter().map(|a| a.norm_sqr()).sum();
    if total <= 0.0 {
        return 0.0;
    }
    let r2 = core_radius * core_radius;
    let mut inside = 0.0;
    for r in 0..field.n {
        for c in 0..field.n {
            let (x, y) = field.coords(r, c);
            let dx = x - core_offset.0;
            let dy = y - core_offset.1;
            if dx * dx + dy * dy <= r2 {
                inside += field.data[r * field.n + c].norm_sqr();
            }
        }
    }
    (inside / total).clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::screens::{ZernikeBasis, ZernikeCoeffs};

    fn params() -> TurbulenceParams {
        TurbulenceParams::no_turbulence(0.2, 532e-9).unwrap()
    }

    #[test]
    fn airy_first_null() {
        let basis = ZernikeBasis::new(128);
        let screen = basis.render(&ZernikeCoeffs::zeros(params()));
        let img = Propagator::for_screen(128, 8).intensity(&screen, 532e-9);
        let h = img.n / 2;
        // walk along +x until the first local minimum
        let row = &img.data[h * img.n..(h + 1) * img.n];
        let mut k = h + 1;
        while row[k + 1] < row[k] {
            k += 1;
        }
        let null = (k - h) as f64 * img.angular_pitch;
        let expect = 1.22 * 532e-9 / 0.2;
        assert!((expect - 3.25e-6_f64).abs() < 0.01e-6);
        assert!((null - expect).abs() <= img.angular_pitch, "{null} vs {expect}");
    }

    #[test]
    fn parseval_and_symmetric_centroid() {
        let basis = ZernikeBasis::new(128);
        let mut c = ZernikeCoeffs::zeros(params());
        c.set(4, 1.3);
        c.set(11, -0.6);
        let screen = basis.render(&c);
        let img = Propagator::for_screen(128, 4).intensity(&screen, 532e-9);
        assert!((img.power / aperture_power(&screen) - 1.0).abs() < 1e-6);
        let cen = centroid(&img).unwrap();
        assert!(cen.radius() < 1e-3 * img.angular_pitch, "{cen:?}");
    }

    #[test]
    fn tip_shift_matches_fourier_shift_theorem() {
        let p = params();
        let basis = ZernikeBasis::new(128);
        let prop = Propagator::for_screen(128, 4);
        for &(j, c2) in &[(2usize, 3.0), (3, -5.0)] {
            let mut c = ZernikeCoeffs::zeros(p);
            c.set(j, c2);
            let cen = centroid(&prop.intensity(&basis.render(&c), p.wavelength)).unwrap();
            let shift = 2.0 * c2 * p.wavelength / (std::f64::consts::PI * p.d);
            let got = if j == 2 { cen.x } else { cen.y };
            assert!((got - shift).abs() < 0.01 * shift.abs(), "{got} vs {shift}");
        }
    }

    #[test]
    fn far_field_resolution_error() {
        let p = TurbulenceParams::new(0.2, 0.15, 532e-9).unwrap();
        let screen = PhaseScreen::flat(64, 0.2);
        assert!(matches!(far_field(&screen, &p, 2), Err(Error::Resolution { .. })));
        let strong = TurbulenceParams::new(0.2, 0.01, 532e-9).unwrap();
        assert!(far_field(&screen, &strong, 4).is_ok());
    }

    #[test]
    fn centroid_of_empty_image_fails() {
        let img = IntensityGrid {
            data: vec![0.0; 16],
            n: 4,
            angular_pitch: 1.0,
            power: 0.0,
        };
        assert!(matches!(centroid(&img), Err(Error::ZeroPower)));
    }

    #[test]
    fn fiber_coupling_limits_and_monotonicity() {
        // 0.5 mm beam focused by f = 20 mm: Airy radius ~26 um vs 52.5 um core
        let screen = PhaseScreen::flat(64, 0.5e-3);
        let field = Propagator::for_screen(64, 8).focal_field(&screen, 532e-9, 0.02);
        assert!((field.power() / aperture_power(&screen) - 1.0).abs() < 1e-9);
        let core = 52.5e-6;
        let centred = fiber_coupling(&field, core, (0.0, 0.0));
        assert!(centred > 0.9, "{centred}");
        let far = fiber_coupling(&field, core, (10.0 * core, 0.0));
        assert!(far < 1e-3, "{far}");
        // ring structure makes small offsets non-monotone; check the outer slope
        let mut prev = fiber_coupling(&field, core, (20e-6, 0.0));
        for k in 3..=10 {
            let v = fiber_coupling(&field, core, (k as f64 * 10e-6, 0.0));
            assert!(v < prev, "{v} >= {prev}");
            prev = v;
        }
        let edge = fiber_coupling(&field, core, (core, 0.0));
        assert!(edge > 0.2 && edge < 0.8, "{edge}");
    }

    #[test]
    fn exports() {
        let screen = PhaseScreen::flat(64, 0.2);
        let img = Propagator::for_screen(64, 4).intensity(&screen, 532e-9);
        let text = img.to_text();
        let first = text.lines().next().unwrap();
        assert!(first.starts_with("256 256 "));
        assert_eq!(text.lines().count(), 257);
        let pgm = img.to_pgm(64);
        assert!(pgm.starts_with(b"P5\n64 64\n255\n"));
        assert_eq!(pgm.len(), b"P5\n64 64\n255\n".len() + 64 * 64);
        assert!(pgm.contains(&255));
    }
}
