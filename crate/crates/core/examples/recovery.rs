//! Joint activity detection and channel estimation on one desk-scale frame.
//!
//! 100 potential users, 10 active, 8 pilot subcarriers, 60 pilot symbols at
//! 30 dB. Prints how the learned noise variance and sparsity settle, then
//! scores the estimate with both activity detectors.
//!
//! Run with `cargo run --release --example recovery`.

use mpaccess::detect::{aud_error_prob, bi_ad, cg_ad, nmse, NmseMode};
use mpaccess::harness::{build_instance, ExperimentConfig, GridPoint};
use mpaccess::solver::{Solver, SolverConfig};

fn main() -> mpaccess::Result<()> {
    let cfg = ExperimentConfig::default();
    let point = GridPoint { k: 100, k_a: 10, g: 60, p: 8, snr_db: 30.0 };
    let inst = build_instance(&cfg, point, 2024)?;
    let h = inst.channel.matrix();
    let n_bs = cfg.geometry.n_bs();
    println!(
        "F is {} x {}, active users {:?}",
        inst.operator.q(),
        inst.operator.j(),
        inst.activity.active_users()
    );

    let solver_cfg = SolverConfig { iterations: 60, ..SolverConfig::default() };
    let mut solver = Solver::new(&inst.operator, &inst.measurements.y, solver_cfg)?;
    println!("\n iter   NMSE dB   sigma2/true   mean lambda");
    for _ in 0..solver_cfg.iterations {
        solver.step()?;
        let t = solver.iteration();
        if t <= 5 || t % 10 == 0 {
            let state = solver.state();
            let db = nmse(&state.xi, h, &inst.activity, n_bs, NmseMode::ActiveRows)?;
            println!(
                "{t:5} {db:9.2} {:13.3} {:13.4}",
                state.sigma2 / inst.measurements.noise_var,
                solver.prior().lambda.mean()
            );
        }
    }
    let out = solver.finish();
    println!("true sparsity {:.4}", point.k_a as f64 / point.k as f64);

    let cg = cg_ad(&out.h_hat, n_bs, &cfg.detector)?;
    let bi = bi_ad(&out.eta, n_bs, &cfg.detector)?;
    println!("\nCG-AD found {:?}", cg.activity.active_users());
    println!("BI-AD found {:?}", bi.activity.active_users());
    println!(
        "AUD error: CG-AD {:.3}, BI-AD {:.3}",
        aud_error_prob(&cg.activity, &inst.activity)?,
        aud_error_prob(&bi.activity, &inst.activity)?
    );
    Ok(())
}
