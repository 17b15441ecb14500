//! Propagate one turbulent screen to the far field, export a PGM, and check
//! the Fourier shift of the centroid when tip is added.
//!
//! `cargo run --release --example far_field_centroid [out.pgm]`

use turbqkd::optics::{centroid, far_field};
use turbqkd::screens::{render, sample_coeffs};
use turbqkd::turbmath::TurbulenceParams;

fn main() -> turbqkd::error::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "far_field.pgm".into());
    let p = TurbulenceParams::new(0.20, 0.01, 532e-9)?;
    let mut coeffs = sample_coeffs(&p, 3);
    let img = far_field(&render(&coeffs, 256)?, &p, 4)?;
    let c0 = centroid(&img)?;
    println!("power {:.6e}, centroid ({:.3}, {:.3}) urad", img.power, c0.x * 1e6, c0.y * 1e6);
    std::fs::write(&out, img.to_pgm(256))?;
    println!("wrote {out}");

    let tip = 5.0;
    coeffs.set(2, coeffs.get(2) + tip);
    let c1 = centroid(&far_field(&render(&coeffs, 256)?, &p, 4)?)?;
    let expected = 2.0 * tip * p.wavelength / (std::f64::consts::PI * p.d);
    println!(
        "shift {:.3} urad, predicted {:.3} urad",
        (c1.x - c0.x) * 1e6,
        expected * 1e6
    );
    Ok(())
}
