//! Closed-form Kolmogorov statistics for Zernike-decomposed wavefronts.
//!
//! Polynomials follow Noll's ordering and normalization: `Z_1` is piston,
//! `Z_2`/`Z_3` are tip/tilt, every polynomial has unit mean square over the
//! unit disk.

use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Noll single index together with its radial and azimuthal orders.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NollIndex {
    pub j: u32,
    pub n: u32,
    pub m: i32,
}

impl NollIndex {
    pub fn new(j: u32) -> Result<Self> {
        noll_to_nm(j as i64)
    }

    /// Inverse of [`noll_to_nm`]: the Noll index for a valid `(n, m)` pair.
    pub fn from_nm(n: u32, m: i32) -> Result<Self> {
        let am = m.unsigned_abs();
        if am > n || (n - am) % 2 != 0 {
            return Err(Error::Domain(format!("invalid Zernike orders (n={n}, m={m})")));
        }
        // Indices of order n occupy n(n+1)/2 + 1 ..= (n+1)(n+2)/2; within the
        // order they are sorted by |m| and the sign picks the parity.
        let first = n * (n + 1) / 2 + 1;
        let last = (n + 1) * (n + 2) / 2;
        for j in first..=last {
            let idx = noll_to_nm(j as i64)?;
            if idx.m == m {
                return Ok(idx);
            }
        }
        unreachable!("every valid (n, m) has a Noll index")
    }

    pub fn is_piston(&self) -> bool {
        self.n == 0
    }
}

/// Map a Noll index to `(n, m)`.
///
/// Within a radial order indices increase with `|m|`; for `m != 0` even `j`
/// carries the cosine term (`m > 0`) and odd `j` the sine term (`m < 0`).
pub fn noll_to_nm(j: i64) -> Result<NollIndex> {
    if j < 1 {
        return Err(Error::InvalidIndex(j));
    }
    let ju = j as u32;
    let mut n = 0u32;
    while (n + 1) * (n + 2) / 2 < ju {
        n += 1;
    }
    let offset = ju - n * (n + 1) / 2 - 1; // 0-based position inside order n
    let am = if n % 2 == 0 {
        2 * ((offset + 1) / 2)
    } else {
        2 * (offset / 2) + 1
    };
    let m = if am == 0 {
        0
    } else if ju % 2 == 0 {
        am as i32
    } else {
        -(am as i32)
    };
    Ok(NollIndex { j: ju, n, m })
}

fn factorial(k: u32) -> f64 {
    (1..=k).fold(1.0, |acc, v| acc * v as f64)
}

/// Radial polynomial `R_n^{|m|}(rho)`.
pub fn radial(n: u32, m: u32, rho: f64) -> f64 {
    let mut acc = 0.0;
    for s in 0..=((n - m) / 2) {
        let num = if s % 2 == 0 { 1.0 } else { -1.0 } * factorial(n - s);
        let den = factorial(s) * factorial((n + m) / 2 - s) * factorial((n - m) / 2 - s);
        acc += num / den * rho.powi((n - 2 * s) as i32);
    }
    acc
}

/// Noll-normalized `Z_j(rho, theta)`.
pub fn zernike_eval(idx: NollIndex, rho: f64, theta: f64) -> Result<f64> {
    if !(0.0..=1.0 + 1e-12).contains(&rho) {
        return Err(Error::OutOfAperture(rho));
    }
    Ok(zernike_unchecked(idx, rho.min(1.0), theta))
}

pub(crate) fn zernike_unchecked(idx: NollIndex, rho: f64, theta: f64) -> f64 {
    let am = idx.m.unsigned_abs();
    let r = radial(idx.n, am, rho);
    if am == 0 {
        (idx.n as f64 + 1.0).sqrt() * r
    } else {
        let norm = (2.0 * (idx.n as f64 + 1.0)).sqrt();
        let ang = am as f64 * theta;
        if idx.m > 0 {
            norm * r * ang.cos()
        } else {
            norm * r * ang.sin()
        }
    }
}

const LANCZOS_G: f64 = 7.0;
const LANCZOS_COEF: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

/// Gamma function via the Lanczos approximation (g = 7, nine terms) with
/// reflection for `x < 1/2`.
pub fn gamma(x: f64) -> f64 {
    if x < 0.5 {
        PI / ((PI * x).sin() * gamma(1.0 - x))
    } else {
        let x = x - 1.0;
        let mut a = LANCZOS_COEF[0];
        let t = x + LANCZOS_G + 0.5;
        for (i, c) in LANCZOS_COEF.iter().enumerate().skip(1) {
            a += c / (x + i as f64);
        }
        (2.0 * PI).sqrt() * t.powf(x + 0.5) * (-t).exp() * a
    }
}

/// Kolmogorov weight `I_nm` of a Zernike mode.
pub fn inm(idx: NollIndex) -> Result<f64> {
    if idx.is_piston() {
        return Err(Error::PistonExcluded);
    }
    let n = idx.n as f64;
    let parity = if (idx.n as i64 - idx.m as i64).rem_euclid(2) == 0 {
        1.0
    } else {
        -1.0
    };
    let g17_6 = gamma(17.0 / 6.0);
    Ok(0.15337 * parity * (n + 1.0) * gamma(14.0 / 3.0) * gamma(n - 5.0 / 6.0)
        / (g17_6 * g17_6 * gamma(n + 23.0 / 6.0)))
}

/// Optical path and turbulence strength description.
///
/// `r0 = f64::INFINITY` means no turbulence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TurbulenceParams {
    pub d: f64,
    pub r0: f64,
    pub wavelength: f64,
    pub path: Option<PathTurbulence>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathTurbulence {
    pub cn2: f64,
    pub length: f64,
}

impl TurbulenceParams {
    pub fn new(d: f64, r0: f64, wavelength: f64) -> Result<Self> {
        if !(d > 0.0 && r0 > 0.0 && wavelength > 0.0) || d.is_infinite() || wavelength.is_infinite() {
            return Err(Error::Domain(format!(
                "turbulence parameters must be positive (D={d}, r0={r0}, lambda={wavelength})"
            )));
        }
        Ok(Self {
            d,
            r0,
            wavelength,
            path: None,
        })
    }

    pub fn no_turbulence(d: f64, wavelength: f64) -> Result<Self> {
        Self::new(d, f64::INFINITY, wavelength)
    }

    /// Derive `r0` from a homogeneous path.
    pub fn from_path(d: f64, cn2: f64, length: f64, wavelength: f64) -> Result<Self> {
        let r0 = fried_from_path(cn2, length, wavelength)?;
        let mut p = Self::new(d, r0, wavelength)?;
        p.path = Some(PathTurbulence { cn2, length });
        Ok(p)
    }

    pub fn wavenumber(&self) -> f64 {
        2.0 * PI / self.wavelength
    }

    pub fn is_turbulent(&self) -> bool {
        self.r0.is_finite()
    }

    pub fn d_over_r0(&self) -> f64 {
        if self.is_turbulent() {
            self.d / self.r0
        } else {
            0.0
        }
    }

    /// Same statistics with a different aperture diameter.
    pub fn with_aperture(&self, d: f64) -> Self {
        Self { d, ..*self }
    }
}

/// Variance (rad²) of the coefficient of mode `idx`: `I_nm (D/r0)^{5/3}`.
pub fn coeff_variance(idx: NollIndex, p: &TurbulenceParams) -> Result<f64> {
    if !p.is_turbulent() || idx.is_piston() {
        return Ok(0.0);
    }
    Ok(inm(idx)? * p.d_over_r0().powf(5.0 / 3.0))
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("{name} must be positive and finite, got {v}")))
    }
}

/// `r0 = 1.68 (Cn2 L k^2)^{-3/5}`.
pub fn fried_from_path(cn2: f64, length: f64, wavelength: f64) -> Result<f64> {
    check_positive("Cn2", cn2)?;
    check_positive("path length", length)?;
    check_positive("wavelength", wavelength)?;
    let k = 2.0 * PI / wavelength;
    Ok(1.68 * (cn2 * length * k * k).powf(-0.6))
}

/// Path length that produces a given `r0` under a constant `Cn2`.
pub fn path_for_r0(cn2: f64, r0: f64, wavelength: f64) -> Result<f64> {
    check_positive("Cn2", cn2)?;
    check_positive("r0", r0)?;
    check_positive("wavelength", wavelength)?;
    let k = 2.0 * PI / wavelength;
    Ok((r0 / 1.68).powf(-5.0 / 3.0) / (cn2 * k * k))
}

/// Two-axis tilt variance in the form `0.364 (D/r0)^{5/3} (lambda/r0)^{5/3}`.
pub fn tilt_variance(p: &TurbulenceParams) -> f64 {
    if !p.is_turbulent() {
        return 0.0;
    }
    0.364 * p.d_over_r0().powf(5.0 / 3.0) * (p.wavelength / p.r0).powf(5.0 / 3.0)
}

/// Two-axis variance of the far-field centroid of an aperture of diameter
/// `p.d`: `0.364 (D/r0)^{5/3} (lambda/D)^2`.
///
/// This is the scale Fourier propagation of the sampled screens reproduces;
/// it is what ensemble binning uses.
pub fn diffraction_tilt_variance(p: &TurbulenceParams) -> f64 {
    if !p.is_turbulent() {
        return 0.0;
    }
    0.364 * p.d_over_r0().powf(5.0 / 3.0) * (p.wavelength / p.d).powi(2)
}

/// Per-axis standard deviation matching [`diffraction_tilt_variance`].
pub fn diffraction_tilt_std_per_axis(p: &TurbulenceParams) -> f64 {
    (diffraction_tilt_variance(p) / 2.0).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Brute-force Noll ordering: sort (n, m) pairs by n, then |m|, then
    /// assign even j to m >= 0 cosine terms.
    fn brute_force_noll(max_j: u32) -> Vec<(u32, i32)> {
        let mut out = vec![(0u32, 0i32); max_j as usize + 1];
        let mut j = 1u32;
        let mut n = 0u32;
        while j <= max_j {
            let mut ms: Vec<u32> = (0..=n).filter(|m| (n - m) % 2 == 0).collect();
            ms.sort();
            for am in ms {
                if am == 0 {
                    if j <= max_j {
                        out[j as usize] = (n, 0);
                    }
                    j += 1;
                } else {
                    for _ in 0..2 {
                        if j <= max_j {
                            let m = if j % 2 == 0 { am as i32 } else { -(am as i32) };
                            out[j as usize] = (n, m);
                        }
                        j += 1;
                    }
                }
            }
            n += 1;
        }
        out
    }

    #[test]
    fn noll_first_terms() {
        assert_eq!(noll_to_nm(1).unwrap(), NollIndex { j: 1, n: 0, m: 0 });
        assert_eq!(noll_to_nm(2).unwrap(), NollIndex { j: 2, n: 1, m: 1 });
        assert_eq!(noll_to_nm(3).unwrap(), NollIndex { j: 3, n: 1, m: -1 });
        assert_eq!(noll_to_nm(4).unwrap(), NollIndex { j: 4, n: 2, m: 0 });
        assert!(matches!(noll_to_nm(0), Err(Error::InvalidIndex(0))));
        assert!(matches!(noll_to_nm(-3), Err(Error::InvalidIndex(-3))));
    }

    #[test]
    fn noll_matches_brute_force_and_is_bijective() {
        let oracle = brute_force_noll(200);
        for j in 1..=200u32 {
            let idx = noll_to_nm(j as i64).unwrap();
            assert_eq!((idx.n, idx.m), oracle[j as usize], "j={j}");
            assert!(idx.n >= idx.m.unsigned_abs());
            assert_eq!((idx.n - idx.m.unsigned_abs()) % 2, 0);
            assert_eq!(NollIndex::from_nm(idx.n, idx.m).unwrap().j, j);
        }
    }

    #[test]
    fn zernike_values() {
        let piston = NollIndex::new(1).unwrap();
        assert_eq!(zernike_eval(piston, 0.3, 1.2).unwrap(), 1.0);
        let tip = NollIndex::new(2).unwrap();
        assert!((zernike_eval(tip, 1.0, 0.0).unwrap() - 2.0).abs() < 1e-14);
        assert!(matches!(zernike_eval(tip, 1.01, 0.0), Err(Error::OutOfAperture(_))));
    }

    #[test]
    fn gamma_known_values() {
        assert!((gamma(5.0) - 24.0).abs() / 24.0 < 1e-13);
        assert!((gamma(0.5) - PI.sqrt()).abs() / PI.sqrt() < 1e-13);
        // Gamma(1/6) = 5.566316001780235...
        assert!((gamma(1.0 / 6.0) - 5.566_316_001_780_235).abs() / 5.57 < 1e-12);
        // Gamma(14/3) = 14.711404774015...
        assert!((gamma(14.0 / 3.0) - 14.711_404_774_015).abs() / 14.7 < 1e-10);
    }

    #[test]
    fn inm_anchors() {
        let i11 = inm(NollIndex::from_nm(1, 1).unwrap()).unwrap();
        let i20 = inm(NollIndex::from_nm(2, 0).unwrap()).unwrap();
        let i22 = inm(NollIndex::from_nm(2, 2).unwrap()).unwrap();
        assert!((i11 - 0.45).abs() <= 0.01, "{i11}");
        assert!((i20 - 0.02).abs() <= 0.005, "{i20}");
        assert!((i22 - 0.02).abs() <= 0.005, "{i22}");
        assert!(matches!(inm(NollIndex::new(1).unwrap()), Err(Error::PistonExcluded)));
        for j in 2..=200 {
            assert!(inm(NollIndex::new(j).unwrap()).unwrap() > 0.0);
        }
    }

    #[test]
    fn inm_decreases_with_radial_order() {
        for m in 0..6i32 {
            let mut prev = f64::INFINITY;
            let mut n = m.max(1) as u32;
            if (n as i32 - m) % 2 != 0 {
                n += 1;
            }
            while n < 20 {
                let v = inm(NollIndex::from_nm(n, m).unwrap()).unwrap();
                assert!(v < prev);
                prev = v;
                n += 2;
            }
        }
    }

    #[test]
    fn coefficient_variance_scaling() {
        let tip = NollIndex::new(2).unwrap();
        let p = TurbulenceParams::new(0.2, 0.01, 532e-9).unwrap();
        let v = coeff_variance(tip, &p).unwrap();
        let expected = inm(tip).unwrap() * 20f64.powf(5.0 / 3.0);
        assert!((v - expected).abs() < 1e-12);
        assert!((v - 66.4).abs() < 0.6, "{v}");

        let none = TurbulenceParams::no_turbulence(0.2, 532e-9).unwrap();
        assert_eq!(coeff_variance(tip, &none).unwrap(), 0.0);

        for j in 2..=44 {
            let idx = NollIndex::new(j).unwrap();
            let a = coeff_variance(idx, &TurbulenceParams::new(2.0, 1.0, 5e-7).unwrap()).unwrap();
            let b = coeff_variance(idx, &TurbulenceParams::new(1.0, 1.0, 5e-7).unwrap()).unwrap();
            assert!((a / b - 2f64.powf(5.0 / 3.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn fried_parameter_and_path() {
        let r0 = fried_from_path(1.8e-14, 1000.0, 532e-9).unwrap();
        assert!((r0 - 0.0153).abs() < 0.0002, "{r0}");
        let l = path_for_r0(1.8e-14, 0.022, 532e-9).unwrap();
        assert!((l - 500.0).abs() / 500.0 < 0.1, "{l}");
        let r0b = fried_from_path(1.8e-14, 1000.0 * 2f64.powf(5.0 / 3.0), 532e-9).unwrap();
        assert!((r0b / r0 - 0.5).abs() < 1e-12);
        assert!(fried_from_path(0.0, 1.0, 1.0).is_err());
        assert!(path_for_r0(1.0, -1.0, 1.0).is_err());
    }

    #[test]
    fn path_roundtrip_is_exact() {
        for &(cn2, l) in &[(1e-15, 10.0), (1.8e-14, 543.0), (5e-13, 12_000.0)] {
            let r0 = fried_from_path(cn2, l, 532e-9).unwrap();
            let back = path_for_r0(cn2, r0, 532e-9).unwrap();
            assert!((back - l).abs() / l < 1e-9);
        }
        let p = TurbulenceParams::from_path(0.2, 1.8e-14, 1000.0, 532e-9).unwrap();
        assert!((p.r0 - fried_from_path(1.8e-14, 1000.0, 532e-9).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn tilt_variance_values() {
        let p = TurbulenceParams::new(0.2, 0.01, 532e-9).unwrap();
        let v = tilt_variance(&p);
        assert!((v - 4.0e-6).abs() < 0.1e-6, "{v}");
        assert_eq!(tilt_variance(&TurbulenceParams::no_turbulence(0.2, 532e-9).unwrap()), 0.0);
        let half = TurbulenceParams::new(0.2, 0.005, 532e-9).unwrap();
        assert!((tilt_variance(&half) / v - 2f64.powf(10.0 / 3.0)).abs() < 1e-9);
    }
}
