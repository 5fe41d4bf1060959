//! A small seeded Monte Carlo sweep written to CSV.
//!
//! The same runs are available from the command line as
//! `mpaccess sweep <config.toml>`; this shows the library route and the
//! config format.
//!
//! Run with `cargo run --release --example sweep`.

use mpaccess::harness::{run_sweep_to_path, ExperimentConfig};

const CONFIG: &str = r#"
seed = 42
trials = 3
algorithms = ["oamp", "somp"]
detectors = ["cg", "bi"]

[sweep]
users = 100
active = [10]
symbols = [40, 60, 80]
pilots = [8]
snr_db = [30.0]

[solver]
iterations = 60
trace = false
"#;

fn main() -> mpaccess::Result<()> {
    let cfg = ExperimentConfig::from_toml(CONFIG)?;
    let path = std::env::temp_dir().join("mpaccess-sweep-example.csv");
    let result = run_sweep_to_path(&cfg, &path)?;
    println!("{} rows written to {}", result.rows.len(), path.display());

    let text = std::fs::read_to_string(&path).expect("csv was just written");
    let mut lines = text.lines();
    println!("{}", lines.next().unwrap_or_default());
    for line in lines.filter(|l| l.starts_with("mean,")) {
        println!("{line}");
    }
    Ok(())
}
