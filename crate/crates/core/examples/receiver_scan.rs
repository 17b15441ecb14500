//! Angular efficiency scan of the four-detector receiver without turbulence.
//!
//! `cargo run --release --example receiver_scan`

use turbqkd::receiver::{Channel, ReceiverModel};
use turbqkd::scan::{find_attack_angles, reference_efficiencies, scan_screen, ScanSpec, SelectionMode, DEFAULT_MIN_TAU};
use turbqkd::screens::PhaseScreen;

fn main() -> turbqkd::error::Result<()> {
    let model = ReceiverModel::default();
    let spec = ScanSpec::default();
    let grid = spec.grid()?;
    let reference = reference_efficiencies(&model, spec.polarization)?;
    let flat = PhaseScreen::flat(model.screen_resolution, model.beam_diameter);
    let map = scan_screen(&model, &grid, &flat, spec.polarization, &reference);
    println!("{} positions, max neighbour jump {:.3}", grid.len(), map.max_neighbour_jump());
    let set = find_attack_angles(&map, SelectionMode::MaxDelta, DEFAULT_MIN_TAU)?;
    for k in Channel::ALL {
        let a = set.best(k).expect("one angle per channel");
        println!(
            "{}: theta {:+.3} mrad phi {:+.3} mrad  delta {:.1}  tau {:.3}",
            k.name(),
            a.theta * 1e3,
            a.phi * 1e3,
            a.delta,
            a.tau
        );
    }
    Ok(())
}
