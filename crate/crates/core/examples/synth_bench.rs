//! Scratch timing harness for the entangler search (not shipped).

use std::time::Instant;

use eoq_core::synth::{
    cnot_target, entangler_spec, grape_refine, remc_search, ril_spec, xcnot_target, GrapeControl,
};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let iters: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(100_000);
    let replicas: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(8);
    let seeds: Vec<u64> = args
        .get(3)
        .map(|s| s.split(',').filter_map(|t| t.parse().ok()).collect())
        .unwrap_or_else(|| vec![1, 2, 3]);
    let hot: f64 = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(0.0);
    let cold: f64 = args.get(5).and_then(|s| s.parse().ok()).unwrap_or(0.0);
    let target = args.get(6).map(String::as_str).unwrap_or("cnot");
    let ladder: Option<Vec<f64>> = if hot > 0.0 && cold > 0.0 {
        let ratio = (cold / hot).powf(1.0 / (replicas - 1) as f64);
        Some((0..replicas).map(|r| hot * ratio.powi(r as i32)).collect())
    } else {
        None
    };
    let spec = match target {
        "xcnot" => entangler_spec(xcnot_target(), 45),
        "ril" => ril_spec(30),
        _ => entangler_spec(cnot_target(), 45),
    };
    for &seed in &seeds {
        let t0 = Instant::now();
        let r = remc_search(&spec, replicas, ladder.as_deref(), iters, seed).unwrap();
        let pulses: usize = r
            .rows
            .iter()
            .map(|row| row.iter().filter(|&&x| x != 0.0).count())
            .sum();
        let n = r.trace.len();
        let milestones: Vec<String> = [n / 10, n / 4, n / 2, 3 * n / 4, n - 1]
            .iter()
            .map(|&i| format!("{:.2e}", r.trace[i]))
            .collect();
        let remc_obj = r.objective;
        let remc_secs = t0.elapsed().as_secs_f64();
        let t1 = Instant::now();
        let g = grape_refine(&r.rows, &spec, &GrapeControl::default()).unwrap();
        println!(
            "seed {seed}: remc {:.3e} ({:.1}s, {pulses} pulses)  grape {:.3e} fid {:.8} \
             ({:.1}s, {} steps, stalled {})  trace [{}]",
            remc_obj,
            remc_secs,
            g.objective,
            g.fidelity,
            t1.elapsed().as_secs_f64(),
            g.trace.len() - 1,
            g.stalled,
            milestones.join(", ")
        );
    }
}
