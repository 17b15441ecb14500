//! Link length beyond which turbulence defeats the attack.
//!
//! `cargo run --example unsafe_radius`

use turbqkd::attack::unsafe_radius;

fn main() -> turbqkd::error::Result<()> {
    let cn2 = 1.8e-14;
    for r0_cm in [3.50, 2.33, 2.21, 1.53, 1.00] {
        let l = unsafe_radius(r0_cm * 1e-2, cn2, 532e-9)?;
        println!("r0 = {r0_cm:.2} cm -> {l:.0} m");
    }
    Ok(())
}
