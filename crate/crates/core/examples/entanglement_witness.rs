//! PPT feasibility verdicts for a few channels.
//!
//! `cargo run --release --example entanglement_witness`

use std::path::PathBuf;

use turbqkd::scan::AttackAngleSet;
use turbqkd::witness::{check_feasibility, distribution_from_channel, ChannelSpec, MeasurementModel, DEFAULT_TOLERANCE};

fn main() -> turbqkd::error::Result<()> {
    let single = MeasurementModel::single_mode([1.0; 4]);
    let cases = [
        ("identity", ChannelSpec::Lossy { transmission: 1.0, qber: 0.0 }),
        ("lossy 13 dB, 3% errors", ChannelSpec::Lossy { transmission: 0.05, qber: 0.03 }),
        ("intercept-resend", ChannelSpec::InterceptResend { basis: None, mode: 0 }),
        ("depolarized 30%", ChannelSpec::Lossy { transmission: 1.0, qber: 0.30 }),
    ];
    for (name, spec) in &cases {
        let p = distribution_from_channel(spec, &single)?;
        println!("{name:<24} {}", check_feasibility(&p, &single, DEFAULT_TOLERANCE)?.record());
    }

    let fixtures = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures/mismatch");
    for row in ["r0_inf", "r0_3p50"] {
        let set = AttackAngleSet::load(&fixtures.join(format!("{row}.csv")))?;
        let model = MeasurementModel::with_attack_modes(&set);
        let p = distribution_from_channel(&ChannelSpec::Lossy { transmission: 0.05, qber: 0.02 }, &model)?;
        println!("{row:<24} {}", check_feasibility(&p, &model, DEFAULT_TOLERANCE)?.record());
    }
    Ok(())
}
