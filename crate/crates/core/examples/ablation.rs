//! Trains the full model and both ablations on the standard synthetic
//! benchmark and prints R@K / mR@K for each.
//!
//! Usage: `cargo run --release --example ablation -- [seed] [steps] [run toml] [data toml]`

use std::time::Instant;

use sgg_core::dataio::{generate_dataset, RunConfig, SyntheticSpec};
use sgg_core::train::{evaluate, train};

fn main() -> sgg_core::Result<()> {
    let mut args = std::env::args().skip(1);
    let seed: u64 = args.next().map_or(1, |s| s.parse().expect("seed"));
    let steps: usize = args.next().map_or(2000, |s| s.parse().expect("steps"));
    let run_toml = args.next().unwrap_or_default();
    let data_toml = args.next().unwrap_or_default();
    let spec: SyntheticSpec = toml::from_str(&data_toml).expect("data toml");
    let data = generate_dataset(&spec)?;
    println!(
        "train {} test {} counts {:?}",
        data.train.len(),
        data.test.len(),
        data.vocab().counts()
    );
    let run = if run_toml.is_empty() {
        RunConfig::benchmark()
    } else {
        RunConfig::from_toml_str(&run_toml)?
    };
    let base = RunConfig { seed, steps, ..run };
    for (name, cfg) in [
        ("full", base.clone()),
        ("no-ckd", RunConfig { ckd: false, ..base.clone() }),
        ("no-gcl", RunConfig { gcl: false, ..base.clone() }),
    ] {
        let t = Instant::now();
        let out = train(&cfg, &data)?;
        let m = evaluate(&out.model, &data, &cfg, &[20, 50, 100])?;
        println!(
            "{name:>7}: groups {:?} R@20 {:.4} mR@20 {:.4} mR@50 {:.4} ({:.1}s)",
            out.setup.partition.group_sizes(),
            m.recall[0],
            m.mean_recall[0].mean,
            m.mean_recall[1].mean,
            t.elapsed().as_secs_f64()
        );
        let per: Vec<String> = m.mean_recall[0].per_class.iter().map(|c| format!("{:.2}", c.recall)).collect();
        println!("         per-class {}", per.join(" "));
    }
    Ok(())
}
