//! Flat `section.key=value` run configuration.
//!
//! Every key has a default; unknown or repeated keys are rejected. Angles and
//! lengths carry their unit in the key name.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::attack::{AttackParams, LossGrid};
use crate::error::{Error, Result};
use crate::receiver::{Channel, Polarization, ReceiverModel};
use crate::scan::{AttackAngleSet, ScanSpec, SelectionMode};
use crate::turbmath::TurbulenceParams;

/// `(key, default, description)`.
pub const KEYS: &[(&str, &str, &str)] = &[
    ("run.seed", "0", "pool seed; overridden by --seed"),
    ("turbulence.aperture_m", "0.20", "emulated beam diameter"),
    ("turbulence.r0_cm", "1.00", "Fried parameter; `inf` for no turbulence"),
    ("turbulence.cn2", "", "structure constant (m^-2/3); with path_m overrides r0_cm"),
    ("turbulence.path_m", "", "link length used with cn2"),
    ("turbulence.wavelength_nm", "532", "wavelength"),
    ("screens.pool_size", "500", "screens per pool"),
    ("screens.resolution", "512", "phase-screen grid used for centroids"),
    ("screens.padding", "4", "zero-padding factor of the far-field FFT"),
    ("receiver.focal_length_mm", "52.5", "effective focal length, angle to fiber plane"),
    ("receiver.core_radius_um", "52.5", "multimode fiber core radius"),
    ("receiver.beam_diameter_mm", "2.0", "beam diameter at the receiver"),
    ("receiver.field_of_view_mrad", "5", "largest modeled |theta| or |phi|"),
    ("receiver.resolution", "128", "phase-screen grid used for scans"),
    ("receiver.padding", "4", "zero-padding factor for scans"),
    ("receiver.offset_x_H_um", "14", "H coupler offset, x"),
    ("receiver.offset_y_H_um", "0", "H coupler offset, y"),
    ("receiver.offset_x_V_um", "0", "V coupler offset, x"),
    ("receiver.offset_y_V_um", "14", "V coupler offset, y"),
    ("receiver.offset_x_D_um", "-14", "D coupler offset, x"),
    ("receiver.offset_y_D_um", "0", "D coupler offset, y"),
    ("receiver.offset_x_A_um", "0", "A coupler offset, x"),
    ("receiver.offset_y_A_um", "-14", "A coupler offset, y"),
    ("receiver.extinction_H", "1000", "polarizer extinction ratio, H arm"),
    ("receiver.extinction_V", "100", "polarizer extinction ratio, V arm"),
    ("receiver.extinction_D", "1000", "polarizer extinction ratio, D arm"),
    ("receiver.extinction_A", "100", "polarizer extinction ratio, A arm"),
    ("receiver.eta_det", "1", "detector efficiency, all channels"),
    ("scan.half_range_mrad", "2.7", "half-width of the angle scan"),
    ("scan.step_urad", "135", "scan step"),
    ("scan.polarization", "circular", "input polarization: circular, H, V, D or A"),
    ("scan.tip_tilt_correction", "true", "remove tip and tilt before scanning"),
    ("scan.mode", "max-delta", "`max-delta` or `threshold:<delta>`"),
    ("scan.min_tau", "0.001", "smallest usable normalized efficiency"),
    ("attack.angles", "", "attack-angle CSV; empty uses the scan output"),
    ("attack.mu_alice", "0.5", "Alice mean photon number"),
    ("attack.eta_bob", "0.4", "Bob system efficiency at normal incidence"),
    ("attack.eta_eve", "0.85", "Eve detection efficiency"),
    ("attack.qber_threshold", "0.08", "abort threshold"),
    ("attack.loss_min_db", "0", "first loss point"),
    ("attack.loss_max_db", "30", "last loss point"),
    ("attack.loss_step_db", "0.25", "loss step"),
    ("attack.mu_cap", "100", "largest resend mean photon number"),
    ("attack.starts", "64", "optimizer starts"),
    ("attack.cn2", "1.8e-14", "structure constant for the unsafe-radius report"),
    ("attack.r0_threshold_cm", "", "r0 for the unsafe radius; empty uses turbulence.r0_cm"),
    ("witness.fixture", "lossy", "ideal, intercept-resend or lossy"),
    ("witness.angles", "", "attack-angle CSV adding attack modes to Bob's space"),
    ("witness.transmission", "0.05", "honest channel transmission"),
    ("witness.qber", "0.02", "honest channel error rate"),
    ("witness.tolerance", "1e-7", "feasibility tolerance"),
    ("witness.max_iterations", "100000", "projection iteration cap"),
];

/// Parsed configuration: resolved values for every key plus the source text.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
    pub source: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            values: KEYS.iter().map(|(k, v, _)| (k.to_string(), v.to_string())).collect(),
            source: String::new(),
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(Error::parse(path, i + 1, "expected key=value"));
            };
            let (k, v) = (k.trim(), v.trim());
            if !cfg.values.contains_key(k) {
                return Err(Error::parse(path, i + 1, format!("unknown key `{k}`")));
            }
            if let Some(prev) = seen.insert(k.to_string(), i + 1) {
                return Err(Error::parse(path, i + 1, format!("`{k}` already set on line {prev}")));
            }
            cfg.values.insert(k.to_string(), v.to_string());
        }
        cfg.source = text.to_string();
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?, path)
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) -> Result<()> {
        match self.values.get_mut(key) {
            Some(v) => {
                *v = value.into();
                Ok(())
            }
            None => Err(Error::Config(format!("unknown key `{key}`"))),
        }
    }

    pub fn raw(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).unwrap_or_else(|| panic!("undeclared key {key}"))
    }

    fn num(&self, key: &str) -> Result<f64> {
        let s = self.raw(key);
        s.parse::<f64>()
            .ok()
            .filter(|v| !v.is_nan())
            .ok_or_else(|| Error::Config(format!("`{key}`: expected a number, got `{s}`")))
    }

    fn opt_num(&self, key: &str) -> Result<Option<f64>> {
        if self.raw(key).is_empty() {
            Ok(None)
        } else {
            self.num(key).map(Some)
        }
    }

    fn count(&self, key: &str) -> Result<usize> {
        let s = self.raw(key);
        s.parse()
            .map_err(|_| Error::Config(format!("`{key}`: expected a non-negative integer, got `{s}`")))
    }

    fn flag(&self, key: &str) -> Result<bool> {
        match self.raw(key) {
            "true" | "1" | "yes" => Ok(true),
            "false" | "0" | "no" => Ok(false),
            s => Err(Error::Config(format!("`{key}`: expected true or false, got `{s}`"))),
        }
    }

    fn path(&self, key: &str) -> Option<PathBuf> {
        let s = self.raw(key);
        (!s.is_empty()).then(|| PathBuf::from(s))
    }

    pub fn seed(&self) -> Result<u64> {
        let s = self.raw("run.seed");
        s.parse().map_err(|_| Error::Config(format!("`run.seed`: expected an integer, got `{s}`")))
    }

    pub fn wavelength(&self) -> Result<f64> {
        Ok(self.num("turbulence.wavelength_nm")? * 1e-9)
    }

    pub fn turbulence(&self) -> Result<TurbulenceParams> {
        let d = self.num("turbulence.aperture_m")?;
        let lambda = self.wavelength()?;
        match (self.opt_num("turbulence.cn2")?, self.opt_num("turbulence.path_m")?) {
            (Some(cn2), Some(l)) => return TurbulenceParams::from_path(d, cn2, l, lambda),
            (None, None) => {}
            _ => return Err(Error::Config("turbulence.cn2 and turbulence.path_m must be given together".into())),
        }
        let r0 = self.raw("turbulence.r0_cm");
        if r0 == "inf" {
            TurbulenceParams::no_turbulence(d, lambda)
        } else {
            TurbulenceParams::new(d, self.num("turbulence.r0_cm")? * 1e-2, lambda)
        }
    }

    pub fn pool_size(&self) -> Result<usize> {
        self.count("screens.pool_size")
    }

    pub fn screen_resolution(&self) -> Result<usize> {
        self.count("screens.resolution")
    }

    pub fn screen_padding(&self) -> Result<usize> {
        self.count("screens.padding")
    }

    pub fn receiver(&self) -> Result<ReceiverModel> {
        let mut m = ReceiverModel {
            focal_length: self.num("receiver.focal_length_mm")? * 1e-3,
            core_radius: self.num("receiver.core_radius_um")? * 1e-6,
            beam_diameter: self.num("receiver.beam_diameter_mm")? * 1e-3,
            wavelength: self.wavelength()?,
            field_of_view: self.num("receiver.field_of_view_mrad")? * 1e-3,
            screen_resolution: self.count("receiver.resolution")?,
            padding: self.count("receiver.padding")?,
            ..ReceiverModel::default()
        };
        let eta = self.num("receiver.eta_det")?;
        for k in Channel::ALL {
            let c = &mut m.channels[k.index()];
            c.offset = (
                self.num(&format!("receiver.offset_x_{}_um", k.name()))? * 1e-6,
                self.num(&format!("receiver.offset_y_{}_um", k.name()))? * 1e-6,
            );
            c.extinction_ratio = self.num(&format!("receiver.extinction_{}", k.name()))?;
            c.detector_efficiency = eta;
        }
        m.validate()?;
        Ok(m)
    }

    pub fn scan_spec(&self) -> Result<ScanSpec> {
        let polarization = match self.raw("scan.polarization") {
            "circular" => Polarization::Circular,
            s => Polarization::Linear(
                Channel::from_name(s)
                    .ok_or_else(|| Error::Config(format!("`scan.polarization`: unknown value `{s}`")))?,
            ),
        };
        let spec = ScanSpec {
            half_range: self.num("scan.half_range_mrad")? * 1e-3,
            step: self.num("scan.step_urad")? * 1e-6,
            polarization,
            tip_tilt_correction: self.flag("scan.tip_tilt_correction")?,
        };
        spec.points_per_axis()?;
        Ok(spec)
    }

    pub fn selection_mode(&self) -> Result<SelectionMode> {
        let s = self.raw("scan.mode");
        if s == "max-delta" {
            return Ok(SelectionMode::MaxDelta);
        }
        s.strip_prefix("threshold:")
            .and_then(|v| v.parse().ok())
            .map(SelectionMode::Threshold)
            .ok_or_else(|| Error::Config(format!("`scan.mode`: expected max-delta or threshold:<delta>, got `{s}`")))
    }

    pub fn min_tau(&self) -> Result<f64> {
        self.num("scan.min_tau")
    }

    pub fn attack_angles_path(&self) -> Option<PathBuf> {
        self.path("attack.angles")
    }

    pub fn attack_params(&self, angles: AttackAngleSet) -> Result<AttackParams> {
        let mut p = AttackParams::new(angles);
        p.mu_alice = self.num("attack.mu_alice")?;
        p.eta_bob = self.num("attack.eta_bob")?;
        p.eta_eve = self.num("attack.eta_eve")?;
        p.qber_max = self.num("attack.qber_threshold")?;
        p.loss = LossGrid {
            min_db: self.num("attack.loss_min_db")?,
            max_db: self.num("attack.loss_max_db")?,
            step_db: self.num("attack.loss_step_db")?,
        };
        p.mu_cap = self.num("attack.mu_cap")?;
        p.starts = self.count("attack.starts")?;
        p.seed = self.seed()?;
        p.validate()?;
        p.loss.points()?;
        Ok(p)
    }

    pub fn attack_cn2(&self) -> Result<f64> {
        self.num("attack.cn2")
    }

    /// Fried parameter used for the unsafe-radius report, if finite.
    pub fn radius_r0(&self) -> Result<Option<f64>> {
        if let Some(v) = self.opt_num("attack.r0_threshold_cm")? {
            return Ok(Some(v * 1e-2));
        }
        let t = self.turbulence()?;
        Ok(t.is_turbulent().then_some(t.r0))
    }

    pub fn witness_fixture(&self) -> &str {
        self.raw("witness.fixture")
    }

    pub fn witness_angles_path(&self) -> Option<PathBuf> {
        self.path("witness.angles")
    }

    pub fn witness_channel(&self) -> Result<(f64, f64)> {
        Ok((self.num("witness.transmission")?, self.num("witness.qber")?))
    }

    pub fn witness_tolerance(&self) -> Result<f64> {
        self.num("witness.tolerance")
    }

    pub fn witness_max_iterations(&self) -> Result<usize> {
        self.count("witness.max_iterations")
    }

    /// Every key with its resolved value, one per line.
    pub fn resolved(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.values {
            let _ = writeln!(s, "{k}={v}");
        }
        s
    }

    /// Documentation of every key and its default.
    pub fn documentation() -> String {
        let mut s = String::new();
        for (k, v, d) in KEYS {
            let _ = writeln!(s, "# {d}\n{k}={v}");
        }
        s
    }
}
