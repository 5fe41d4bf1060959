//! Block-aware simultaneous OMP next to OAMP-EM-MMV on the same frames.
//!
//! SOMP is told how many users are active; OAMP-EM-MMV learns the sparsity.
//! Below about `G = 50` there are fewer measurements per subcarrier than
//! nonzero channel coefficients and both break down.
//!
//! Run with `cargo run --release --example somp_baseline`.

use mpaccess::baseline::{somp, GreedyConfig};
use mpaccess::detect::{nmse, NmseMode};
use mpaccess::harness::{build_instance, ExperimentConfig, GridPoint};
use mpaccess::solver;

fn main() -> mpaccess::Result<()> {
    let cfg = ExperimentConfig::default();
    let n_bs = cfg.geometry.n_bs();
    println!("   G   OAMP NMSE dB   SOMP NMSE dB   SOMP blocks");
    for g in [30, 40, 60, 80] {
        let point = GridPoint { k: 100, k_a: 10, g, p: 8, snr_db: 30.0 };
        let inst = build_instance(&cfg, point, 7)?;
        let (y, h) = (&inst.measurements.y, inst.channel.matrix());

        let oamp = solver::run(y, &inst.operator, &cfg.solver)?;
        // the selected support cannot outgrow the Q measurements
        let blocks = point.k_a.min(inst.operator.q() / n_bs);
        let greedy = somp(y, &inst.operator, &GreedyConfig::blocks(blocks, n_bs))?;

        let a = nmse(&oamp.h_hat, h, &inst.activity, n_bs, NmseMode::ActiveRows)?;
        let b = nmse(&greedy.h_hat, h, &inst.activity, n_bs, NmseMode::ActiveRows)?;
        println!("{g:4} {a:14.2} {b:14.2} {:13}", greedy.support.len() / n_bs);
    }
    Ok(())
}
