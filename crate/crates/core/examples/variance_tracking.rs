//! Step the solver by hand and compare the predicted LE error variance `τ²`
//! with the actual error of `r` against the true channel.
//!
//! Run with `cargo run --release --example variance_tracking`.

use mpaccess::harness::{build_instance, ExperimentConfig, GridPoint};
use mpaccess::solver::Solver;

fn main() -> mpaccess::Result<()> {
    let cfg = ExperimentConfig::default();
    let point = GridPoint { k: 100, k_a: 10, g: 60, p: 8, snr_db: 30.0 };
    let inst = build_instance(&cfg, point, 99)?;
    let h = inst.channel.matrix();
    let mut solver = Solver::new(&inst.operator, &inst.measurements.y, cfg.solver)?;

    println!(" iter   mean |r - h|^2   mean tau^2   ratio");
    for _ in 0..15 {
        solver.step()?;
        let state = solver.state();
        let empirical = state.r.sub(h)?.norm_sqr() / (h.rows() * h.cols()) as f64;
        let predicted = state.tau2.mean();
        println!(
            "{:5} {empirical:16.4} {predicted:12.4} {:7.3}",
            solver.iteration(),
            empirical / predicted
        );
    }

    // τ² is kept per (panel, subcarrier); the panels do not converge in step
    let tau2 = &solver.state().tau2;
    let col: Vec<f64> = tau2.col(0).to_vec();
    let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = col.iter().copied().fold(0.0, f64::max);
    println!("\nsubcarrier 0: tau^2 ranges over [{lo:.4}, {hi:.4}] across {} panels", col.len());
    Ok(())
}
