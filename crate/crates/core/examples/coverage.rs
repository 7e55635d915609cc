//! Bootstrap coverage study.
//!
//! `cargo run --release --example coverage -- ex2 "cens=40" 200 400`

use std::time::Instant;

use cqr_core::simulation::design_options;
use cqr_core::{run_coverage, Example, ScenarioSpec};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let example: Example = args.get(1).map(String::as_str).unwrap_or("ex2").parse().expect("scenario");
    let spec = ScenarioSpec::parse(example, args.get(2).map(String::as_str).unwrap_or("")).expect("params");
    let reps: usize = args.get(3).map_or(200, |r| r.parse().expect("reps"));
    let boot: usize = args.get(4).map_or(400, |b| b.parse().expect("boot reps"));
    let start = Instant::now();
    let report = run_coverage(&spec, boot, 0.95, reps, &design_options()).expect("run");
    println!("{} reps={} B={} excluded={} ({:.1}s)", example, reps, boot, report.excluded, start.elapsed().as_secs_f64());
    for c in &report.coefficients {
        println!("  b{}: ecp={:.3} eml={:.3} rmse={:.3}", c.index, c.ecp.unwrap(), c.eml.unwrap(), c.rmse);
    }
}
