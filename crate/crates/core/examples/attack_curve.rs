//! QBER of the optimized faked-state attack against channel loss.
//!
//! `cargo run --release --example attack_curve [angles.csv]`

use std::path::PathBuf;

use turbqkd::attack::{feasible_windows, qber_curve, AttackParams, LossGrid};
use turbqkd::scan::AttackAngleSet;

fn main() -> turbqkd::error::Result<()> {
    let path = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures/mismatch/r0_inf.csv"));
    let mut p = AttackParams::new(AttackAngleSet::load(&path)?);
    p.mu_alice = 4.6;
    p.loss = LossGrid {
        min_db: 0.0,
        max_db: 30.0,
        step_db: 1.0,
    };
    let curve = qber_curve(&p)?;
    println!("loss_db  qber    feasible  mu_H,mu_V,mu_D,mu_A");
    for s in &curve {
        println!(
            "{:>6.1}  {:.4}  {:<8}  {:.2},{:.2},{:.2},{:.2}",
            s.loss_db, s.qber, s.feasible, s.mu[0], s.mu[1], s.mu[2], s.mu[3]
        );
    }
    println!("feasible windows: {:?}", feasible_windows(&curve));
    Ok(())
}
