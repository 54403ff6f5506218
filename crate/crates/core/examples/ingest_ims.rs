//! Builds a tiny IMS-style snapshot directory and reduces it to one RMS value
//! per snapshot for bearing 1.

use std::fs;

use prognost::ingest::{ingest_ims, Aggregation};

fn main() -> prognost::Result<()> {
    let dir = std::env::temp_dir().join(format!("prognost-ims-{}", std::process::id()));
    fs::create_dir_all(&dir).map_err(|e| prognost::Error::Validation(e.to_string()))?;
    for minute in 0..6 {
        let name = format!("2004.02.12.10.{:02}.39", minute * 10);
        let amp = 0.05 * (1.0 + minute as f64 * 0.2);
        let body: String = (0..256)
            .map(|i| {
                let x = amp * (i as f64 * 0.7).sin();
                format!("{x:.3}\t{:.3}\t0.010\t-0.020\n", x * 0.5)
            })
            .collect();
        fs::write(dir.join(name), body).map_err(|e| prognost::Error::Validation(e.to_string()))?;
    }

    let (series, scan) = ingest_ims(&dir, 4, 0, Aggregation::Rms)?;
    println!("{} snapshots, {} skipped", scan.refs.len(), scan.skipped.len());
    print!("{}", series.to_csv_string());
    let _ = fs::remove_dir_all(&dir);
    Ok(())
}
