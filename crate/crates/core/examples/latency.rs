//! Pilot overhead in time: `G` OFDM symbols of `N_c` samples plus cyclic
//! prefix at the sampling rate.
//!
//! Run with `cargo run --example latency`.

use mpaccess::array::OfdmConfig;
use mpaccess::harness::{symbol_latency, CYCLIC_PREFIX_SAMPLES};

fn main() -> mpaccess::Result<()> {
    let ofdm = OfdmConfig::new(1e9, 256, 16, 30e9)?;
    println!(
        "one symbol: {} + {CYCLIC_PREFIX_SAMPLES} samples at {} GS/s = {:.3} us",
        ofdm.subcarriers,
        ofdm.bandwidth_hz / 1e9,
        symbol_latency(1, &ofdm) * 1e6
    );
    for g in [100, 150, 200, 250, 275, 300] {
        println!("G = {g:3}: {:6.1} us", symbol_latency(g, &ofdm) * 1e6);
    }
    Ok(())
}
