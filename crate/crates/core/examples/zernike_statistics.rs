//! Zernike coefficient variances for Kolmogorov turbulence.
//!
//! `cargo run --example zernike_statistics`

use turbqkd::turbmath::{coeff_variance, inm, noll_to_nm, tilt_variance, TurbulenceParams};

fn main() -> turbqkd::error::Result<()> {
    let p = TurbulenceParams::new(0.20, 0.01, 532e-9)?;
    println!("D/r0 = {:.1}", p.d_over_r0());
    println!("{:>3} {:>3} {:>3} {:>10} {:>12}", "j", "n", "m", "I_nm", "var (rad^2)");
    for j in 2..=11 {
        let idx = noll_to_nm(j)?;
        println!(
            "{j:>3} {:>3} {:>3} {:>10.5} {:>12.4}",
            idx.n,
            idx.m,
            inm(idx)?,
            coeff_variance(idx, &p)?
        );
    }
    println!("two-axis tilt variance: {:.3e} rad^2", tilt_variance(&p));
    Ok(())
}
