//! Load a raw measured efficiency map and select attack angles from it.
//!
//! `cargo run --example measured_map [map.csv]`

use std::path::PathBuf;

use turbqkd::receiver::load_measured_map;
use turbqkd::scan::{find_attack_angles, SelectionMode, DEFAULT_MIN_TAU};

fn main() -> turbqkd::error::Result<()> {
    let path = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures/measured_map_41x41.csv"));
    let map = load_measured_map(&path)?;
    let set = find_attack_angles(&map, SelectionMode::MaxDelta, DEFAULT_MIN_TAU)?;
    print!("{}", set.to_csv());
    let strong = find_attack_angles(&map, SelectionMode::Threshold(5.0), DEFAULT_MIN_TAU)?;
    println!("{} angles with delta >= 5", strong.angles.len());
    Ok(())
}
