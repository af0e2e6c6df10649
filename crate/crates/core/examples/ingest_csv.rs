//! Loads a CSV, normalizes its columns onto [-1, 1] and estimates each
//! column's mean privately, reporting errors in original units.
//!
//! Usage: `cargo run --example ingest_csv -- data.csv [column ...]`

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use noutput::analytical::design_analytical;
use noutput::estimation::{mean_estimate, ReportBatch};
use noutput::harness::ingest_csv;
use noutput::PrivacyBudget;

fn main() -> noutput::Result<()> {
    let mut args = std::env::args().skip(1);
    let path = match args.next() {
        Some(p) => std::path::PathBuf::from(p),
        None => {
            let path = std::env::temp_dir().join("noutput_ingest_example.csv");
            let mut body = String::from("age,income\n");
            for k in 0..5000u32 {
                body.push_str(&format!("{},{}\n", 18 + k % 60, 20_000 + (k * 7919) % 90_000));
            }
            std::fs::write(&path, body).map_err(|e| noutput::Error::Io { path: path.clone(), source: e })?;
            path
        }
    };
    let columns: Vec<String> = args.collect();
    let ds = ingest_csv(&path, &columns)?;
    println!("{}: {} rows, {} dropped", ds.name, ds.rows(), ds.dropped_rows);
    let design = design_analytical(PrivacyBudget::new(2.0)?)?.design().clone();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for (c, name) in ds.column_names.iter().enumerate() {
        let xs = &ds.columns[c];
        let truth = xs.iter().sum::<f64>() / xs.len() as f64;
        let est = mean_estimate(&ReportBatch::from_design("analytical", &design, xs, &mut rng)?)?;
        println!(
            "{name}: normalized mean {truth:+.4}, estimate {est:+.4}, error {:.2} original units",
            (est - truth).abs() * ds.scale(c)
        );
    }
    Ok(())
}
