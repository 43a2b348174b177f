//! Runs a simulated crowd, then computes per-demonstration skill metrics and
//! the experience curve from the session logs it wrote.

use telefleet::analytics::{assign_experience, dataset_hours, experience_quartiles, load_demonstrations, write_metrics_csv, Metric};
use telefleet::fleet::LogSink;
use telefleet::scenario::{run_simulated, Scenario};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let tmp = tempfile::tempdir()?;
    let dir = tmp.path();
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/examples/configs/crowd.toml");
    let scenario = Scenario::load(path)?;
    let run = run_simulated(&scenario, LogSink::Directory(dir.join("logs")))?;
    let mut paths: Vec<_> = std::fs::read_dir(dir.join("logs"))?.map(|e| e.map(|e| e.path())).collect::<Result<_, _>>()?;
    paths.sort();
    println!("{} sessions logged", run.logs.len());

    let mut demos = load_demonstrations(&paths)?;
    // treat the crowd as twelve volunteers coming back again and again
    for (i, d) in demos.iter_mut().enumerate() {
        d.user_id = format!("v{:02}", i % 12);
    }
    assign_experience(&mut demos);
    write_metrics_csv(&demos[..5.min(demos.len())], std::io::stdout().lock())?;

    for metric in [Metric::CompletionTime, Metric::Effort] {
        let series = experience_quartiles(&demos, metric);
        println!("{metric:?}:");
        for p in series.points.iter().take(8) {
            println!("  k={} n={:>3} median {:.4} (IQR {:.4}..{:.4})", p.k, p.n, p.median, p.q1, p.q3);
        }
    }
    let mean = demos.iter().map(|d| d.duration_s()).sum::<f64>() / demos.len().max(1) as f64;
    println!("{} demos x {mean:.1} s = {:.2} h", demos.len(), dataset_hours(demos.len() as u64, mean));
    Ok(())
}

