//! The `qkdturb` command line.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::attack::{self, curve_to_csv, feasible_windows, qber_curve};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::receiver::{save_map, Channel, EfficiencyMap};
use crate::scan::{find_attack_angles, run_scan, AttackAngleSet};
use crate::screens::{pool_centroids, select_ensemble, CentroidStats, Pool, ZernikeBasis};
use crate::turbmath;
use crate::witness::{
    check_feasibility_with_cap, distribution_from_channel, ChannelSpec, JointDistribution, MeasurementModel, Verdict,
};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Relative band for `screens verify`.
pub const VERIFY_BAND: f64 = 0.10;

#[derive(Debug, Parser)]
#[command(name = "qkdturb", version, about = "Turbulence-assisted spatial-mismatch attacks on free-space BB84")]
pub struct Cli {
    /// Flat `section.key=value` configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides `run.seed`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate or verify phase-screen pools.
    #[command(subcommand)]
    Screens(ScreensCommand),
    /// Scan the receiver over the hologram ensemble and select attack angles.
    Scan(ScanArgs),
    /// Optimize the faked-state attack over the loss grid.
    Attack(AttackArgs),
    /// Check whether a joint distribution verifies entanglement.
    Witness(WitnessArgs),
    /// Print every configuration key with its default.
    Config,
}

#[derive(Debug, Subcommand)]
pub enum ScreensCommand {
    /// Write a pool, its centroids, the ensemble and a statistics report.
    Generate,
    /// Compare the centroid spread of a pool against the tilt formula.
    Verify {
        #[arg(long)]
        pool: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct ScanArgs {
    /// Existing pool file; generated from the config when absent.
    #[arg(long)]
    pub pool: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AttackArgs {
    /// Attack-angle CSV; defaults to `attack.angles`, then `<out>/attack_angles.csv`.
    #[arg(long)]
    pub angles: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct WitnessArgs {
    /// `ideal`, `intercept-resend` or `lossy`; overrides `witness.fixture`.
    #[arg(long)]
    pub fixture: Option<String>,
    /// Attack-angle CSV adding attack modes to Bob's space.
    #[arg(long)]
    pub angles: Option<PathBuf>,
    /// Check this distribution instead of building a fixture.
    #[arg(long)]
    pub distribution: Option<PathBuf>,
}

/// Result of a command that ran to completion.
#[derive(Debug, Clone, PartialEq)]
pub enum Status {
    Success,
    /// Infeasible or indeterminate domain verdict.
    Verdict(String),
}

impl Status {
    pub fn exit_code(&self) -> i32 {
        match self {
            Status::Success => 0,
            Status::Verdict(_) => 2,
        }
    }
}

/// Parse `args`, run, print diagnostics, and return the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match run(&cli) {
        Ok(s) => {
            if let Status::Verdict(msg) = &s {
                eprintln!("{msg}");
            }
            s.exit_code()
        }
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

pub fn run(cli: &Cli) -> Result<Status> {
    if let Command::Config = cli.command {
        print!("{}", RunConfig::documentation());
        return Ok(Status::Success);
    }
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.set("run.seed", s.to_string())?;
    }
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::Config("--threads must be positive".into()));
        }
        // A second call in the same process keeps the first pool.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    fs::create_dir_all(&cli.out)?;
    let name = match &cli.command {
        Command::Screens(ScreensCommand::Generate) => "screens generate",
        Command::Screens(ScreensCommand::Verify { .. }) => "screens verify",
        Command::Scan(_) => "scan",
        Command::Attack(_) => "attack",
        Command::Witness(_) => "witness",
        Command::Config => unreachable!(),
    };
    write_provenance(&cli.out, name, &cfg)?;
    match &cli.command {
        Command::Screens(ScreensCommand::Generate) => screens_generate(&cfg, &cli.out),
        Command::Screens(ScreensCommand::Verify { pool }) => screens_verify(&cfg, pool, &cli.out),
        Command::Scan(a) => scan(&cfg, a, &cli.out),
        Command::Attack(a) => attack(&cfg, a, &cli.out),
        Command::Witness(a) => witness(&cfg, a, &cli.out),
        Command::Config => unreachable!(),
    }
}

fn write_provenance(out: &Path, command: &str, cfg: &RunConfig) -> Result<()> {
    fs::write(out.join("config.txt"), &cfg.source)?;
    let mut s = format!("tool=qkdturb {VERSION}\ncommand={command}\n");
    s.push_str(&cfg.resolved());
    fs::write(out.join("run_info.txt"), s)?;
    Ok(())
}

/// Centroid spread of a pool against the tilt-variance formula.
#[derive(Debug, Clone, PartialEq)]
pub struct VerifyReport {
    pub stats: CentroidStats,
    /// Per-axis deviation from the tilt-variance formula.
    pub predicted: f64,
    /// Per-axis deviation from the diffraction-scaled tilt variance.
    pub predicted_diffraction: f64,
}

impl VerifyReport {
    pub fn new(pool: &Pool, stats: CentroidStats) -> Self {
        let p = &pool.params;
        Self {
            stats,
            predicted: (turbmath::tilt_variance(p) / 2.0).sqrt(),
            predicted_diffraction: turbmath::diffraction_tilt_std_per_axis(p),
        }
    }

    pub fn measured(&self) -> f64 {
        (self.stats.total_variance() / 2.0).sqrt()
    }

    fn within(measured: f64, predicted: f64) -> bool {
        if predicted == 0.0 {
            measured <= 1e-12
        } else {
            ((measured - predicted) / predicted).abs() <= VERIFY_BAND
        }
    }

    pub fn pass(&self) -> bool {
        Self::within(self.measured(), self.predicted)
    }

    pub fn pass_diffraction(&self) -> bool {
        Self::within(self.measured(), self.predicted_diffraction)
    }

    pub fn to_text(&self) -> String {
        let s = &self.stats;
        let mut t = String::new();
        let _ = writeln!(t, "screens={}", s.count);
        let _ = writeln!(t, "mean_x_rad={:e}\nmean_y_rad={:e}", s.mean[0], s.mean[1]);
        let _ = writeln!(t, "std_x_rad={:e}\nstd_y_rad={:e}", s.std[0], s.std[1]);
        let _ = writeln!(t, "skew_x={:.4}\nskew_y={:.4}", s.skew[0], s.skew[1]);
        let _ = writeln!(t, "excess_kurtosis_x={:.4}\nexcess_kurtosis_y={:.4}", s.excess_kurtosis[0], s.excess_kurtosis[1]);
        let _ = writeln!(t, "measured_sigma_rad={:e}", self.measured());
        let _ = writeln!(t, "predicted_sigma_rad={:e}", self.predicted);
        let _ = writeln!(t, "predicted_diffraction_sigma_rad={:e}", self.predicted_diffraction);
        let _ = writeln!(t, "pass={}", self.pass());
        let _ = writeln!(t, "pass_diffraction={}", self.pass_diffraction());
        t
    }
}

fn centroid_report(cfg: &RunConfig, pool: &Pool) -> Result<(Vec<crate::optics::Centroid>, VerifyReport)> {
    let basis = ZernikeBasis::new(cfg.screen_resolution()?);
    let cs = pool_centroids(pool, &basis, cfg.screen_padding()?)?;
    let report = VerifyReport::new(pool, CentroidStats::from_centroids(&cs));
    Ok((cs, report))
}

fn generate_pool(cfg: &RunConfig) -> Result<Pool> {
    Ok(Pool::generate(cfg.turbulence()?, cfg.seed()?, cfg.pool_size()?))
}

fn screens_generate(cfg: &RunConfig, out: &Path) -> Result<Status> {
    let pool = generate_pool(cfg)?;
    pool.save(&out.join("pool.csv"))?;
    let (cs, report) = centroid_report(cfg, &pool)?;
    let mut c = String::from("index,centroid_x_rad,centroid_y_rad\n");
    for (i, m) in cs.iter().enumerate() {
        let _ = writeln!(c, "{i},{:e},{:e}", m.x, m.y);
    }
    fs::write(out.join("centroids.csv"), c)?;
    let ensemble = select_ensemble(&pool, &cs)?;
    fs::write(out.join("ensemble.csv"), ensemble.to_csv())?;
    let text = report.to_text();
    fs::write(out.join("centroid_report.txt"), &text)?;
    print!("{text}");
    Ok(Status::Success)
}

fn screens_verify(cfg: &RunConfig, pool: &Path, out: &Path) -> Result<Status> {
    let pool = Pool::load(pool)?;
    let (_, report) = centroid_report(cfg, &pool)?;
    let text = report.to_text();
    fs::write(out.join("verify_report.txt"), &text)?;
    print!("{text}");
    if report.pass() {
        Ok(Status::Success)
    } else {
        Ok(Status::Verdict(format!(
            "measured sigma {:e} rad outside 10% of predicted {:e} rad",
            report.measured(),
            report.predicted
        )))
    }
}

/// 8-bit PGM of one channel of `map`; top row is the largest `phi`.
pub fn map_to_pgm(map: &EfficiencyMap, k: Channel) -> Vec<u8> {
    let (nt, np) = (map.grid.thetas.len(), map.grid.phis.len());
    let max = map.tau[k.index()].iter().copied().fold(0.0, f64::max);
    let mut out = format!("P5\n{nt} {np}\n255\n").into_bytes();
    for j in (0..np).rev() {
        for i in 0..nt {
            let idx = map
                .grid
                .index_of(map.grid.thetas[i], map.grid.phis[j])
                .expect("grid point");
            let v = if max > 0.0 { map.tau[k.index()][idx] / max } else { 0.0 };
            out.push((v * 255.0).round().clamp(0.0, 255.0) as u8);
        }
    }
    out
}

fn scan(cfg: &RunConfig, args: &ScanArgs, out: &Path) -> Result<Status> {
    let pool = match &args.pool {
        Some(p) => Pool::load(p)?,
        None => {
            let p = generate_pool(cfg)?;
            p.save(&out.join("pool.csv"))?;
            p
        }
    };
    let basis = ZernikeBasis::new(cfg.screen_resolution()?);
    let cs = pool_centroids(&pool, &basis, cfg.screen_padding()?)?;
    let ensemble = select_ensemble(&pool, &cs)?;
    fs::write(out.join("ensemble.csv"), ensemble.to_csv())?;

    let model = cfg.receiver()?;
    let result = run_scan(&model, &cfg.scan_spec()?, &ensemble)?;
    let maps_dir = out.join("maps");
    fs::create_dir_all(&maps_dir)?;
    for (i, m) in result.maps.iter().enumerate() {
        save_map(m, &maps_dir.join(format!("hologram_{i:02}.csv")))?;
    }
    let weighted = result.weighted()?;
    save_map(&weighted, &maps_dir.join("weighted.csv"))?;
    let previews = out.join("previews");
    fs::create_dir_all(&previews)?;
    for k in Channel::ALL {
        fs::write(previews.join(format!("weighted_{}.pgm", k.name())), map_to_pgm(&weighted, k))?;
    }
    let angles = find_attack_angles(&weighted, cfg.selection_mode()?, cfg.min_tau()?)?;
    angles.save(&out.join("attack_angles.csv"))?;
    print!("{}", angles.to_csv());
    Ok(Status::Success)
}

/// Key-value summary of a QBER curve.
pub fn attack_summary(curve: &[attack::AttackSolution], radius: Option<f64>) -> String {
    let max = curve.iter().filter(|s| s.feasible).map(|s| s.loss_db).fold(None, |m: Option<f64>, l| {
        Some(m.map_or(l, |m| m.max(l)))
    });
    let windows: Vec<String> = feasible_windows(curve)
        .iter()
        .map(|(a, b)| format!("{a:.2}-{b:.2}"))
        .collect();
    let mut s = String::new();
    match max {
        Some(m) => {
            let _ = writeln!(s, "max_feasible_loss_db={m:.2}");
        }
        None => s.push_str("max_feasible_loss_db=none\n"),
    }
    match radius {
        Some(r) => {
            let _ = writeln!(s, "unsafe_radius_m={r:.1}");
        }
        None => s.push_str("unsafe_radius_m=none\n"),
    }
    let _ = writeln!(s, "feasible_windows={}", if windows.is_empty() { "none".into() } else { windows.join(";") });
    s
}

fn attack(cfg: &RunConfig, args: &AttackArgs, out: &Path) -> Result<Status> {
    let path = args
        .angles
        .clone()
        .or_else(|| cfg.attack_angles_path())
        .unwrap_or_else(|| out.join("attack_angles.csv"));
    let angles = AttackAngleSet::load(&path)?;
    if angles.angles.is_empty() {
        return Err(Error::NoAttackAngles);
    }
    let params = cfg.attack_params(angles)?;
    let curve = qber_curve(&params)?;
    fs::write(out.join("curve.csv"), curve_to_csv(&curve))?;
    let radius = match cfg.radius_r0()? {
        Some(r0) => Some(attack::unsafe_radius(r0, cfg.attack_cn2()?, cfg.wavelength()?)?),
        None => None,
    };
    let summary = attack_summary(&curve, radius);
    fs::write(out.join("summary.txt"), &summary)?;
    print!("{summary}");
    if curve.iter().any(|s| s.feasible) {
        Ok(Status::Success)
    } else {
        Ok(Status::Verdict("no feasible attack".into()))
    }
}

/// Measurement model and distribution for a named fixture.
pub fn witness_fixture(
    fixture: &str,
    angles: Option<&AttackAngleSet>,
    transmission: f64,
    qber: f64,
) -> Result<(MeasurementModel, JointDistribution)> {
    let model = match angles {
        Some(a) => MeasurementModel::with_attack_modes(a),
        None => MeasurementModel::single_mode([1.0; 4]),
    };
    let spec = match fixture {
        "ideal" => ChannelSpec::Lossy {
            transmission: 1.0,
            qber: 0.0,
        },
        "intercept-resend" => ChannelSpec::InterceptResend { basis: None, mode: 0 },
        "lossy" => ChannelSpec::Lossy { transmission, qber },
        s => return Err(Error::Config(format!("unknown witness fixture `{s}`"))),
    };
    let p = distribution_from_channel(&spec, &model)?;
    Ok((model, p))
}

fn witness(cfg: &RunConfig, args: &WitnessArgs, out: &Path) -> Result<Status> {
    let angles = match args.angles.clone().or_else(|| cfg.witness_angles_path()) {
        Some(p) => Some(AttackAngleSet::load(&p)?),
        None => None,
    };
    let fixture = args.fixture.as_deref().unwrap_or(cfg.witness_fixture());
    let (t, e) = cfg.witness_channel()?;
    let (model, mut p) = witness_fixture(fixture, angles.as_ref(), t, e)?;
    if let Some(path) = &args.distribution {
        p = JointDistribution::load(path)?;
    }
    fs::write(out.join("distribution.csv"), p.to_csv())?;
    let v = check_feasibility_with_cap(&p, &model, cfg.witness_tolerance()?, cfg.witness_max_iterations()?)?;
    let record = v.record();
    fs::write(out.join("verdict.csv"), format!("verdict,residual,iterations,tolerance\n{record}\n"))?;
    println!("{record}");
    println!("# numerical verdict; Bob truncated to vacuum plus single photons in {} spatial mode(s)", model.bob_modes.len());
    match v.verdict {
        Verdict::Indeterminate => Ok(Status::Verdict("indeterminate witness verdict".into())),
        _ => Ok(Status::Success),
    }
}
