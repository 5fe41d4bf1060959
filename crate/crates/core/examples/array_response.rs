//! Multi-panel steering vectors and one user's frequency-selective channel.
//!
//! Run with `cargo run --example array_response`.

use mpaccess::array::{multi_panel_response, synth_user_channel, ArrayGeometry, ChannelModel, OfdmConfig, Path};
use mpaccess::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> mpaccess::Result<()> {
    // 4x4 panels of 2x2 elements, panels 6 half-wavelengths apart
    let geom = ArrayGeometry::reference();
    println!(
        "array: {}x{} antennas, {} panels of {} elements",
        geom.n_h(),
        geom.n_v(),
        geom.n_p(),
        geom.m_bs()
    );

    let a = multi_panel_response(0.4, -0.2, &geom);
    let norm: f64 = a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    println!("|a(0.4, -0.2)| = {norm:.3} (sqrt N_BS = {:.3})", (geom.n_bs() as f64).sqrt());

    // the gap between panels shows up as a phase jump larger than the
    // element-to-element step
    let step = (a[1] / a[0]).arg();
    let jump = (a[2] / a[1]).arg();
    println!("element step {step:+.3} rad, panel-boundary step {jump:+.3} rad");

    // nearby directions decorrelate quickly on an aperture this wide
    for dmu in [0.0, 0.05, 0.1, 0.2] {
        let b = multi_panel_response(0.4 + dmu, -0.2, &geom);
        let overlap: Complex64 = a.iter().zip(&b).map(|(x, y)| x.conj() * y).sum();
        println!("  |a(0.4)^H a(0.4 + {dmu:.2})| / N_BS = {:.3}", overlap.norm() / geom.n_bs() as f64);
    }

    let ofdm = OfdmConfig::new(1e9, 256, 8, 30e9)?;
    let model = ChannelModel::reference(4, ofdm.bandwidth_hz);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let paths: Vec<Path> = model.draw_paths(&mut rng);
    let h = synth_user_channel(&paths, &geom, &ofdm);
    println!("\nuser channel: {} antennas x {} pilot subcarriers", h.rows(), h.cols());
    for p in 0..h.cols() {
        let power: f64 = h.col(p).iter().map(|z| z.norm_sqr()).sum();
        println!("  pilot {p} at {:+8.2} MHz  ||h_p||^2 = {power:8.3}", ofdm.pilot_frequency(p + 1) / 1e6);
    }
    Ok(())
}
