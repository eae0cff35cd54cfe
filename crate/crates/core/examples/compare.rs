//! Runs every strategy on one preset across a few seeds and prints a table.
//!
//! `cargo run --release --example compare -- desk-synth-heterogeneous 3 [--key value]...`

use std::time::Instant;

use fedckd::config::parse_config;
use fedckd::engine::run_experiment;

fn main() -> fedckd::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let preset = args.first().map(String::as_str).unwrap_or("desk-synth-heterogeneous");
    let seeds: u64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(3);
    let extra: Vec<(String, String)> = args[2.min(args.len())..]
        .chunks(2)
        .filter(|c| c.len() == 2)
        .map(|c| (c[0].clone(), c[1].clone()))
        .collect();
    println!("{:<10} {:>5} {:>10} {:>10} {:>10} {:>8}", "strategy", "seed", "personal", "global", "forget5+", "secs");
    for strategy in ["fedavg", "fedprox", "pfedsd", "fedckd"] {
        for seed in 0..seeds {
            let mut ov = extra.clone();
            ov.push(("strategy".into(), strategy.into()));
            ov.push(("master_seed".into(), seed.to_string()));
            let cfg = parse_config(None, Some(preset), &ov)?;
            let start = Instant::now();
            let out = run_experiment(&cfg)?;
            println!(
                "{:<10} {:>5} {:>10.4} {:>10.4} {:>10.4} {:>8.2}",
                strategy,
                seed,
                out.mean_personalized_acc(),
                out.mean_global_acc(),
                out.mean_forgetting(5, cfg.rounds).unwrap_or(f64::NAN),
                start.elapsed().as_secs_f64()
            );
        }
    }
    Ok(())
}
