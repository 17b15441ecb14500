//! Random Kolmogorov phase screens and the weighted hologram ensemble.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::optics::{self, Centroid};
use crate::turbmath::{self, coeff_variance, NollIndex, TurbulenceParams};

/// Number of Noll terms in every screen (piston included, always zero).
pub const NUM_MODES: usize = 44;
/// Smallest pool the ensemble selection accepts.
pub const MIN_POOL: usize = 500;
pub const DEFAULT_RESOLUTION: usize = 512;

/// Noll coefficients `c_1 ..= c_44` (stored 0-based) of one screen.
#[derive(Debug, Clone, PartialEq)]
pub struct ZernikeCoeffs {
    pub c: [f64; NUM_MODES],
    pub seed: u64,
    pub params: TurbulenceParams,
}

impl ZernikeCoeffs {
    pub fn zeros(params: TurbulenceParams) -> Self {
        Self {
            c: [0.0; NUM_MODES],
            seed: 0,
            params,
        }
    }

    /// Coefficient of Noll index `j` (1-based).
    pub fn get(&self, j: usize) -> f64 {
        self.c[j - 1]
    }

    pub fn set(&mut self, j: usize, v: f64) {
        self.c[j - 1] = v;
    }

    pub fn is_flat(&self) -> bool {
        self.c.iter().all(|&v| v == 0.0)
    }
}

/// SplitMix64 finalizer; derives the per-screen seed from the pool seed.
pub fn screen_seed(pool_seed: u64, index: u64) -> u64 {
    let mut z = pool_seed
        .wrapping_add(0x9E37_79B9_7F4A_7C15u64.wrapping_mul(index.wrapping_add(1)));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Draw independent Gaussian coefficients with Kolmogorov variances.
///
/// The generator is ChaCha8 seeded with `seed`; the same seed always gives
/// the same vector.
pub fn sample_coeffs(p: &TurbulenceParams, seed: u64) -> ZernikeCoeffs {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = ZernikeCoeffs::zeros(*p);
    out.seed = seed;
    for j in 2..=NUM_MODES {
        let idx = NollIndex::new(j as u32).expect("j >= 1");
        let var = coeff_variance(idx, p).expect("non-piston");
        let z: f64 = StandardNormal.sample(&mut rng);
        out.c[j - 1] = z * var.sqrt();
    }
    out
}

/// Zero the tip and tilt coefficients (Noll 2 and 3).
pub fn correct_tip_tilt(coeffs: &ZernikeCoeffs) -> ZernikeCoeffs {
    let mut out = coeffs.clone();
    out.c[1] = 0.0;
    out.c[2] = 0.0;
    out
}

/// Phase (rad) sampled over a square grid; pixels outside the inscribed disk
/// hold zero and are flagged by [`PhaseScreen::inside`].
#[derive(Debug, Clone)]
pub struct PhaseScreen {
    pub grid: Vec<f64>,
    pub resolution: usize,
    pub aperture_d: f64,
    mask: Vec<bool>,
}

impl PhaseScreen {
    pub fn flat(resolution: usize, aperture_d: f64) -> Self {
        let (mask, _) = disk_coordinates(resolution);
        Self {
            grid: vec![0.0; resolution * resolution],
            resolution,
            aperture_d,
            mask,
        }
    }

    pub fn inside(&self, row: usize, col: usize) -> bool {
        self.mask[row * self.resolution + col]
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    /// Pixel pitch in metres.
    pub fn pitch(&self) -> f64 {
        self.aperture_d / self.resolution as f64
    }

    /// The same phase imprinted on a beam of a different diameter.
    pub fn with_aperture(mut self, d: f64) -> Self {
        self.aperture_d = d;
        self
    }

    pub fn add_constant(&mut self, v: f64) {
        for (g, &m) in self.grid.iter_mut().zip(&self.mask) {
            if m {
                *g += v;
            }
        }
    }
}

/// Disk mask and polar coordinates of pixel centres for a `res`-wide grid.
fn disk_coordinates(res: usize) -> (Vec<bool>, Vec<(f64, f64)>) {
    let half = res as f64 / 2.0;
    let mut mask = Vec::with_capacity(res * res);
    let mut polar = Vec::with_capacity(res * res);
    for row in 0..res {
        for col in 0..res {
            let x = (col as f64 + 0.5 - half) / half;
            let y = (half - row as f64 - 0.5) / half;
            let rho = (x * x + y * y).sqrt();
            mask.push(rho <= 1.0);
            polar.push((rho, y.atan2(x)));
        }
    }
    (mask, polar)
}

/// Gram matrix `<Z_i, Z_j>` for Noll `1..=modes` over a `res`-pixel disk,
/// using pixel-centre samples weighted by each pixel's area inside the disk
/// (estimated on a `supersample`-squared subgrid).
pub fn disk_gram(res: usize, modes: usize, supersample: usize) -> Result<Vec<Vec<f64>>> {
    let half = res as f64 / 2.0;
    let ss = supersample.max(1);
    let mut pts = Vec::new();
    for row in 0..res {
        for col in 0..res {
            let x = (col as f64 + 0.5 - half) / half;
            let y = (half - row as f64 - 0.5) / half;
            let mut cov = 0usize;
            for a in 0..ss {
                for b in 0..ss {
                    let xs = x + ((a as f64 + 0.5) / ss as f64 - 0.5) / half;
                    let ys = y + ((b as f64 + 0.5) / ss as f64 - 0.5) / half;
                    if xs * xs + ys * ys <= 1.0 {
                        cov += 1;
                    }
                }
            }
            if cov > 0 {
                pts.push((cov as f64 / (ss * ss) as f64, x.hypot(y).min(1.0), y.atan2(x)));
            }
        }
    }
    let total: f64 = pts.iter().map(|p| p.0).sum();
    let vals: Vec<Vec<f64>> = (1..=modes as u32)
        .map(|j| {
            let idx = NollIndex::new(j)?;
            pts.iter().map(|&(_, r, t)| turbmath::zernike_eval(idx, r, t)).collect()
        })
        .collect::<Result<_>>()?;
    let mut g = vec![vec![0.0; modes]; modes];
    for i in 0..modes {
        for j in i..modes {
            let s: f64 = pts.iter().zip(vals[i].iter().zip(&vals[j])).map(|(p, (a, b))| p.0 * a * b).sum();
            g[i][j] = s / total;
            g[j][i] = s / total;
        }
    }
    Ok(g)
}

/// Zernike rasters precomputed for one resolution.
pub struct ZernikeBasis {
    resolution: usize,
    mask: Vec<bool>,
    inside: Vec<usize>,
    // modes[j-1][k] is Z_j at the k-th inside pixel
    modes: Vec<Vec<f64>>,
}

impl ZernikeBasis {
    pub fn new(resolution: usize) -> Self {
        let (mask, polar) = disk_coordinates(resolution);
        let inside: Vec<usize> = (0..mask.len()).filter(|&k| mask[k]).collect();
        let modes = (1..=NUM_MODES)
            .into_par_iter()
            .map(|j| {
                let idx = NollIndex::new(j as u32).expect("j >= 1");
                inside
                    .iter()
                    .map(|&k| {
                        let (rho, th) = polar[k];
                        turbmath::zernike_unchecked(idx, rho, th)
                    })
                    .collect()
            })
            .collect();
        Self {
            resolution,
            mask,
            inside,
            modes,
        }
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn inside_pixels(&self) -> &[usize] {
        &self.inside
    }

    pub fn mode(&self, j: usize) -> &[f64] {
        &self.modes[j - 1]
    }

    pub fn render(&self, coeffs: &ZernikeCoeffs) -> PhaseScreen {
        let mut acc = vec![0.0; self.inside.len()];
        for (c, mode) in coeffs.c.iter().zip(&self.modes) {
            if *c != 0.0 {
                for (a, z) in acc.iter_mut().zip(mode) {
                    *a += c * z;
                }
            }
        }
        let mut grid = vec![0.0; self.resolution * self.resolution];
        for (&k, v) in self.inside.iter().zip(acc) {
            grid[k] = v;
        }
        PhaseScreen {
            grid,
            resolution: self.resolution,
            aperture_d: coeffs.params.d,
            mask: self.mask.clone(),
        }
    }
}

/// Rasterize a screen over the aperture disk.
pub fn render(coeffs: &ZernikeCoeffs, resolution: usize) -> Result<PhaseScreen> {
    if resolution < 64 {
        return Err(Error::Domain(format!(
            "screen resolution must be at least 64, got {resolution}"
        )));
    }
    Ok(ZernikeBasis::new(resolution).render(coeffs))
}

/// Default annulus boundaries in units of the per-axis tilt deviation.
pub const DEFAULT_BOUNDARIES: [f64; 4] = [0.5, 1.0, 2.0, 3.0];
/// Bin targets (units of sigma) and member counts.
pub const BIN_TARGETS: [f64; 5] = [0.0, 0.5, 1.0, 2.0, 3.0];
pub const BIN_COUNTS: [usize; 5] = [1, 8, 8, 8, 4];
/// Relative radius tolerance of a binned member around its target.
pub const BIN_TOLERANCE: f64 = 0.10;

/// Probability mass of a 2-D isotropic Gaussian (unit per-axis deviation)
/// in each annulus delimited by `boundaries`; the last annulus is unbounded.
pub fn annulus_weights(boundaries: &[f64]) -> Result<Vec<f64>> {
    if boundaries.is_empty()
        || boundaries[0] <= 0.0
        || boundaries.windows(2).any(|w| w[1] <= w[0])
    {
        return Err(Error::Domain(
            "annulus boundaries must be positive and ascending".into(),
        ));
    }
    let cdf = |r: f64| 1.0 - (-0.5 * r * r).exp();
    let mut out = Vec::with_capacity(boundaries.len() + 1);
    let mut prev = 0.0;
    for &b in boundaries {
        let c = cdf(b);
        out.push(c - prev);
        prev = c;
    }
    out.push(1.0 - prev);
    Ok(out)
}

/// A pool of screens sharing parameters and a pool seed.
#[derive(Debug, Clone, PartialEq)]
pub struct Pool {
    pub params: TurbulenceParams,
    pub pool_seed: u64,
    pub screens: Vec<ZernikeCoeffs>,
}

impl Pool {
    pub fn generate(params: TurbulenceParams, pool_seed: u64, count: usize) -> Self {
        let screens = (0..count as u64)
            .into_par_iter()
            .map(|i| sample_coeffs(&params, screen_seed(pool_seed, i)))
            .collect();
        Self {
            params,
            pool_seed,
            screens,
        }
    }

    pub const HEADER: &'static str = "# turbqkd-pool v1";

    pub fn to_csv(&self) -> String {
        let p = &self.params;
        let mut s = String::new();
        let _ = write!(
            s,
            "{} d_m={} r0_m={} wavelength_m={} pool_seed={} count={}",
            Self::HEADER,
            p.d,
            p.r0,
            p.wavelength,
            self.pool_seed,
            self.screens.len()
        );
        if let Some(path) = p.path {
            let _ = write!(s, " cn2={} path_m={}", path.cn2, path.length);
        }
        s.push('\n');
        s.push_str("index,seed");
        for j in 1..=NUM_MODES {
            let _ = write!(s, ",c{j}");
        }
        s.push('\n');
        for (i, sc) in self.screens.iter().enumerate() {
            let _ = write!(s, "{i},{}", sc.seed);
            for v in &sc.c {
                let _ = write!(s, ",{v:e}");
            }
            s.push('\n');
        }
        s
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::parse(&text, path)
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines
            .next()
            .ok_or_else(|| Error::parse(path, 1, "empty pool file"))?;
        let rest = header
            .strip_prefix(Self::HEADER)
            .ok_or_else(|| Error::parse(path, 1, "missing `# turbqkd-pool v1` header"))?;
        let mut d = None;
        let mut r0 = None;
        let mut lambda = None;
        let mut seed = None;
        let mut count = None;
        let mut cn2 = None;
        let mut plen = None;
        for kv in rest.split_whitespace() {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::parse(path, 1, format!("bad header field `{kv}`")))?;
            let num = |v: &str| -> Result<f64> {
                v.parse::<f64>()
                    .map_err(|_| Error::parse(path, 1, format!("bad number `{v}` for {k}")))
            };
            match k {
                "d_m" => d = Some(num(v)?),
                "r0_m" => r0 = Some(num(v)?),
                "wavelength_m" => lambda = Some(num(v)?),
                "cn2" => cn2 = Some(num(v)?),
                "path_m" => plen = Some(num(v)?),
                "pool_seed" => {
                    seed = Some(v.parse::<u64>().map_err(|_| {
                        Error::parse(path, 1, format!("bad pool_seed `{v}`"))
                    })?)
                }
                "count" => {
                    count = Some(v.parse::<usize>().map_err(|_| {
                        Error::parse(path, 1, format!("bad count `{v}`"))
                    })?)
                }
                _ => return Err(Error::parse(path, 1, format!("unknown header key `{k}`"))),
            }
        }
        let missing = |what: &str| Error::parse(path, 1, format!("header lacks {what}"));
        let mut params = TurbulenceParams::new(
            d.ok_or_else(|| missing("d_m"))?,
            r0.ok_or_else(|| missing("r0_m"))?,
            lambda.ok_or_else(|| missing("wavelength_m"))?,
        )
        .map_err(|e| Error::parse(path, 1, e.to_string()))?;
        if let (Some(cn2), Some(length)) = (cn2, plen) {
            params.path = Some(turbmath::PathTurbulence { cn2, length });
        }
        let pool_seed = seed.ok_or_else(|| missing("pool_seed"))?;
        let count = count.ok_or_else(|| missing("count"))?;

        let (_, cols) = lines
            .next()
            .ok_or_else(|| Error::parse(path, 2, "missing column header"))?;
        if !cols.starts_with("index,seed,c1,") {
            return Err(Error::parse(path, 2, "unexpected column header"));
        }
        let mut screens = Vec::with_capacity(count);
        for (ln, line) in lines {
            let lineno = ln + 1;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 2 + NUM_MODES {
                return Err(Error::parse(
                    path,
                    lineno,
                    format!("expected {} fields, found {}", 2 + NUM_MODES, fields.len()),
                ));
            }
            let index: usize = fields[0]
                .parse()
                .map_err(|_| Error::parse(path, lineno, "bad index"))?;
            if index != screens.len() {
                return Err(Error::parse(path, lineno, format!("index {index} out of order")));
            }
            let seed: u64 = fields[1]
                .parse()
                .map_err(|_| Error::parse(path, lineno, "bad seed"))?;
            let mut sc = ZernikeCoeffs::zeros(params);
            sc.seed = seed;
            for (slot, f) in sc.c.iter_mut().zip(&fields[2..]) {
                *slot = f
                    .parse()
                    .map_err(|_| Error::parse(path, lineno, format!("bad coefficient `{f}`")))?;
            }
            if sc.c[0] != 0.0 {
                return Err(Error::parse(path, lineno, "piston coefficient must be zero"));
            }
            screens.push(sc);
        }
        if screens.len() != count {
            return Err(Error::parse(
                path,
                text.lines().count(),
                format!("header declares {count} screens, found {}", screens.len()),
            ));
        }
        Ok(Self {
            params,
            pool_seed,
            screens,
        })
    }
}

/// Partition label of an ensemble member.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Bin {
    Zero,
    Half,
    One,
    Two,
    Three,
}

impl Bin {
    pub const ALL: [Bin; 5] = [Bin::Zero, Bin::Half, Bin::One, Bin::Two, Bin::Three];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn target_sigma(self) -> f64 {
        BIN_TARGETS[self.index()]
    }

    pub fn label(self) -> &'static str {
        ["0s", "0.5s", "1s", "2s", "3s"][self.index()]
    }

    pub fn from_label(s: &str) -> Option<Bin> {
        Bin::ALL.into_iter().find(|b| b.label() == s)
    }
}

#[derive(Debug, Clone)]
pub struct EnsembleMember {
    pub coeffs: ZernikeCoeffs,
    /// Index into the source pool; `None` for the flat 0-sigma member.
    pub pool_index: Option<usize>,
    pub bin: Bin,
    pub centroid: Centroid,
}

/// The 29 representative screens with their partition weights.
#[derive(Debug, Clone)]
pub struct HologramEnsemble {
    pub members: Vec<EnsembleMember>,
    pub weights: [f64; 5],
    /// Per-axis tilt deviation (rad) the bins are expressed in.
    pub sigma_ref: f64,
    pub params: TurbulenceParams,
}

impl HologramEnsemble {
    pub fn counts(&self) -> [usize; 5] {
        let mut c = [0; 5];
        for m in &self.members {
            c[m.bin.index()] += 1;
        }
        c
    }

    pub fn to_csv(&self) -> String {
        let mut s = format!(
            "# turbqkd-ensemble v1 sigma_ref_rad={} weights={}\n",
            self.sigma_ref,
            self.weights
                .iter()
                .map(|w| w.to_string())
                .collect::<Vec<_>>()
                .join(";")
        );
        s.push_str("member,pool_index,bin,centroid_x_rad,centroid_y_rad\n");
        for (i, m) in self.members.iter().enumerate() {
            let pi = m.pool_index.map(|v| v.to_string()).unwrap_or_default();
            let _ = writeln!(
                s,
                "{i},{pi},{},{:e},{:e}",
                m.bin.label(),
                m.centroid.x,
                m.centroid.y
            );
        }
        s
    }
}

fn flat_ensemble(params: TurbulenceParams, weights: [f64; 5]) -> HologramEnsemble {
    let mut members = Vec::new();
    for bin in Bin::ALL {
        for _ in 0..BIN_COUNTS[bin.index()] {
            members.push(EnsembleMember {
                coeffs: ZernikeCoeffs::zeros(params),
                pool_index: None,
                bin,
                centroid: Centroid::default(),
            });
        }
    }
    HologramEnsemble {
        members,
        weights,
        sigma_ref: 0.0,
        params,
    }
}

/// Far-field centroid (rad) of every pool screen rendered on `basis`.
pub fn pool_centroids(pool: &Pool, basis: &ZernikeBasis, padding: usize) -> Result<Vec<Centroid>> {
    if !pool.params.is_turbulent() {
        return Ok(vec![Centroid::default(); pool.screens.len()]);
    }
    let prop = optics::Propagator::for_screen(basis.resolution(), padding);
    pool.screens
        .par_iter()
        .map(|c| optics::centroid(&optics::far_field_with(&prop, &basis.render(c), &pool.params)?))
        .collect()
}

/// Sample moments of centroid displacements along each axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CentroidStats {
    pub count: usize,
    pub mean: [f64; 2],
    pub std: [f64; 2],
    pub skew: [f64; 2],
    pub excess_kurtosis: [f64; 2],
}

impl CentroidStats {
    pub fn from_centroids(cs: &[Centroid]) -> Self {
        let n = cs.len() as f64;
        let mut st = CentroidStats {
            count: cs.len(),
            mean: [0.0; 2],
            std: [0.0; 2],
            skew: [0.0; 2],
            excess_kurtosis: [0.0; 2],
        };
        for axis in 0..2 {
            let v: Vec<f64> = cs.iter().map(|c| if axis == 0 { c.x } else { c.y }).collect();
            let m = v.iter().sum::<f64>() / n;
            let m2 = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
            let m3 = v.iter().map(|x| (x - m).powi(3)).sum::<f64>() / n;
            let m4 = v.iter().map(|x| (x - m).powi(4)).sum::<f64>() / n;
            st.mean[axis] = m;
            st.std[axis] = m2.sqrt();
            if m2 > 0.0 {
                st.skew[axis] = m3 / m2.powf(1.5);
                st.excess_kurtosis[axis] = m4 / (m2 * m2) - 3.0;
            }
        }
        st
    }

    /// Two-axis variance `std_x^2 + std_y^2`.
    pub fn total_variance(&self) -> f64 {
        self.std[0].powi(2) + self.std[1].powi(2)
    }
}

/// Pick the 29 representative screens of `pool` by far-field centroid radius.
///
/// `centroid` propagates one screen and returns its centroid in radians for
/// an aperture of `params.d`. The 0-sigma member is the flat screen; the
/// other bins take the unused screens nearest to their target radius that lie
/// within +-10% of it.
pub fn build_ensemble<F>(pool: &Pool, centroid: F) -> Result<HologramEnsemble>
where
    F: Fn(&ZernikeCoeffs) -> Result<Centroid> + Sync,
{
    if pool.screens.len() < MIN_POOL || turbmath::diffraction_tilt_std_per_axis(&pool.params) == 0.0 {
        return select_ensemble(pool, &vec![Centroid::default(); pool.screens.len()]);
    }
    let centroids: Vec<Centroid> = pool
        .screens
        .par_iter()
        .map(&centroid)
        .collect::<Result<_>>()?;
    select_ensemble(pool, &centroids)
}

/// [`build_ensemble`] with the pool centroids already computed.
pub fn select_ensemble(pool: &Pool, centroids: &[Centroid]) -> Result<HologramEnsemble> {
    if centroids.len() != pool.screens.len() {
        return Err(Error::Selection(format!(
            "{} centroids for {} screens",
            centroids.len(),
            pool.screens.len()
        )));
    }
    if pool.screens.len() < MIN_POOL {
        return Err(Error::Selection(format!(
            "pool holds {} screens, need at least {MIN_POOL}",
            pool.screens.len()
        )));
    }
    let params = pool.params;
    let weights: [f64; 5] = annulus_weights(&DEFAULT_BOUNDARIES)?
        .try_into()
        .expect("five annuli");
    let sigma = turbmath::diffraction_tilt_std_per_axis(&params);
    if sigma == 0.0 {
        return Ok(flat_ensemble(params, weights));
    }
    let mut members = vec![EnsembleMember {
        coeffs: ZernikeCoeffs::zeros(params),
        pool_index: None,
        bin: Bin::Zero,
        centroid: Centroid::default(),
    }];
    let radii: Vec<f64> = centroids.iter().map(|c| c.radius() / sigma).collect();
    if radii.iter().all(|&r| r < 1e-9) {
        return Err(Error::Selection("all centroids are at the origin".into()));
    }

    let mut used = vec![false; pool.screens.len()];
    for bin in &Bin::ALL[1..] {
        let target = bin.target_sigma();
        let mut cand: Vec<usize> = (0..radii.len())
            .filter(|&i| !used[i] && ((radii[i] - target) / target).abs() <= BIN_TOLERANCE)
            .collect();
        cand.sort_by(|&a, &b| {
            (radii[a] - target)
                .abs()
                .total_cmp(&(radii[b] - target).abs())
                .then(a.cmp(&b))
        });
        let need = BIN_COUNTS[bin.index()];
        if cand.len() < need {
            return Err(Error::Selection(format!(
                "only {} screens within 10% of {target} sigma, need {need}",
                cand.len()
            )));
        }
        for &i in &cand[..need] {
            used[i] = true;
            members.push(EnsembleMember {
                coeffs: pool.screens[i].clone(),
                pool_index: Some(i),
                bin: *bin,
                centroid: centroids[i],
            });
        }
    }
    Ok(HologramEnsemble {
        members,
        weights,
        sigma_ref: sigma,
        params,
    })
}
