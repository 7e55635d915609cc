//! Runs one Monte Carlo study and prints the summary table.
//!
//! `cargo run --release --example mc -- ex2 "cens=40" 200 cqr [bandwidth] [raw|standardized]`

use std::time::Instant;

use cqr_core::simulation::design_options;
use cqr_core::{run_mc, Example, FitOptions, KernelScale, Method, ScenarioSpec};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let example: Example = args.get(1).map(String::as_str).unwrap_or("ex1").parse().expect("scenario");
    let spec = ScenarioSpec::parse(example, args.get(2).map(String::as_str).unwrap_or("")).expect("params");
    let reps: usize = args.get(3).map_or(100, |r| r.parse().expect("reps"));
    let method: Method = args.get(4).map_or(Method::Cqr, |m| m.parse().expect("method"));
    let bandwidth: f64 = args.get(5).map_or(0.05, |h| h.parse().expect("bandwidth"));
    let kernel_scale: KernelScale = args.get(6).map_or(design_options().kernel_scale, |k| k.parse().expect("scale"));
    let opts = FitOptions { method, bandwidth, kernel_scale, ..design_options() };
    let start = Instant::now();
    let report = run_mc(&spec, reps, &opts).expect("run");
    println!(
        "{} {} reps={} excluded={} nonconverged={} cens={:.3} ({:.1}s)",
        example,
        method,
        reps,
        report.excluded,
        report.nonconverged,
        report.censoring_rate,
        start.elapsed().as_secs_f64()
    );
    for c in &report.coefficients {
        println!("  b{}: mb={:+.3} mae={:.3} rmse={:.3}", c.index, c.mean_bias, c.mae, c.rmse);
    }
}
