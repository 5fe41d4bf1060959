//! Pilots, hybrid combiners and the row-orthonormal sensing operator `F`.
//!
//! Builds `F` for a small system, checks `F F^H = I` and that the
//! matrix-free products agree with the dense matrix, then times both at a
//! size where the dense matrix would no longer fit comfortably.
//!
//! Run with `cargo run --release --example sensing_operator`.

use std::time::Instant;

use mpaccess::array::{complex_gaussian, ArrayGeometry};
use mpaccess::frontend::{assemble_sensing, build_combiner, gen_pilots, ProductKernel, SensingOperator};
use mpaccess::{CMat, Complex64};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn operator(rng: &mut ChaCha8Rng, geom: &ArrayGeometry, k: usize, g: usize) -> mpaccess::Result<SensingOperator> {
    let pilots = gen_pilots(k, g, rng)?;
    let combiners = (0..g).map(|_| build_combiner(geom, rng)).collect::<mpaccess::Result<Vec<_>>>()?;
    assemble_sensing(pilots, combiners)
}

fn main() -> mpaccess::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let geom = ArrayGeometry::reference();

    let f = operator(&mut rng, &geom, 40, 12)?;
    println!("K = {}, G = {}: F is {} x {}", f.users(), f.symbols(), f.q(), f.j());

    let dense = f.to_dense();
    let gram = dense.matmul(&dense.adjoint())?;
    let identity = CMat::from_fn(f.q(), f.q(), |r, c| Complex64::from(f64::from(u8::from(r == c))));
    println!("max |F F^H - I| = {:.2e}", gram.sub(&identity)?.max_abs());

    let x: Vec<Complex64> = (0..f.j()).map(|_| complex_gaussian(&mut rng, 1.0)).collect();
    let fast = f.apply(&x);
    let slow = dense.matmul(&CMat::from_col_major(f.j(), 1, x.clone())?)?;
    let gap = fast.iter().zip(slow.col(0)).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
    println!("max |apply(x) - F x| = {gap:.2e}");

    // a column is one (user, antenna) pair; only the combiner of its own panel
    // sees it, once per pilot symbol
    let col = f.column(0);
    println!("column 0 has {} nonzeros out of {}", col.rows.len(), f.q());

    let big = operator(&mut rng, &geom, 500, 250)?;
    let x: Vec<Complex64> = (0..big.j()).map(|_| complex_gaussian(&mut rng, 1.0)).collect();
    for kernel in [ProductKernel::Direct, ProductKernel::Fft] {
        let op = big.clone().with_kernel(kernel);
        let start = Instant::now();
        let y = op.apply(&x);
        let back = op.apply_adjoint(&y);
        println!(
            "K = 500, G = 250 ({} x {}), {kernel:?} kernel: F and F^H in {:.1} ms, |F^H F x| = {:.2}",
            op.q(),
            op.j(),
            start.elapsed().as_secs_f64() * 1e3,
            back.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
        );
    }
    Ok(())
}
