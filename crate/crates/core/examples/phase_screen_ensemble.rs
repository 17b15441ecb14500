//! Sample a pool of screens, measure far-field centroids, and pick the
//! weighted 29-member ensemble.
//!
//! `cargo run --release --example phase_screen_ensemble`

use turbqkd::screens::{pool_centroids, select_ensemble, CentroidStats, Pool, ZernikeBasis};
use turbqkd::turbmath::{diffraction_tilt_std_per_axis, TurbulenceParams};

fn main() -> turbqkd::error::Result<()> {
    let p = TurbulenceParams::new(0.20, 0.01, 532e-9)?;
    let pool = Pool::generate(p, 7, 500);
    // 256^2 keeps this quick; the CLI default is 512^2.
    let basis = ZernikeBasis::new(256);
    let cs = pool_centroids(&pool, &basis, 4)?;
    let st = CentroidStats::from_centroids(&cs);
    println!(
        "per-axis centroid std: {:.2} / {:.2} urad (predicted {:.2})",
        st.std[0] * 1e6,
        st.std[1] * 1e6,
        diffraction_tilt_std_per_axis(&p) * 1e6
    );
    let e = select_ensemble(&pool, &cs)?;
    println!("bin counts {:?}", e.counts());
    println!("weights {:?}", e.weights.map(|w| (w * 1e4).round() / 1e4));
    for m in e.members.iter().step_by(4) {
        println!(
            "  {:>4} pool #{:<4} |c| = {:.2} sigma",
            m.bin.label(),
            m.pool_index.map(|i| i.to_string()).unwrap_or_else(|| "-".into()),
            m.centroid.radius() / e.sigma_ref
        );
    }
    Ok(())
}
