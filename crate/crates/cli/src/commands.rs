use std::collections::BTreeMap;

use diffbeam::env::{brute_force_power, sample_channel, wmmse, ScenarioConfig};
use diffbeam::harness::{
    evaluate_cell, load_checkpoint, run_cell, run_selftest, run_sweep, save_checkpoint, Architecture, CellData,
    EvalRecord, CSV_HEADER,
};
use diffbeam::{Error, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::args::{EvalArgs, OracleArgs, SweepArgs, TrainArgs};

fn print_records(records: &[EvalRecord]) {
    println!("{CSV_HEADER}");
    for r in records {
        println!(
            "{},{},{},{},{},{},{}",
            r.architecture, r.rho, r.seed, r.mean_se, r.wmmse_se, r.se_ratio, r.n_candidates
        );
    }
}

pub fn train(args: &TrainArgs) -> Result<()> {
    let cfg = args.config.resolve()?;
    let arch: Architecture = args.arch.parse()?;
    let data = CellData::generate(&cfg, args.rho, args.seed)?;
    let outcome = run_cell(&cfg, arch, &data)?;
    let path = args.out.clone().unwrap_or_else(|| {
        let name = format!("{}_rho{}_seed{}.ckpt", arch.name().to_ascii_lowercase(), args.rho, args.seed);
        cfg.output_dir.join("checkpoints").join(name)
    });
    save_checkpoint(&outcome.model.network, &outcome.model.metadata, &path)?;
    eprintln!("trained {arch} ({} environment gradients), saved {}", outcome.gradient_calls, path.display());
    print_records(&outcome.records);
    Ok(())
}

pub fn eval(args: &EvalArgs) -> Result<()> {
    let mut cfg = args.config.resolve()?;
    let (network, meta) = load_checkpoint(&args.checkpoint)?;
    let arch: Architecture = meta.label.parse()?;
    if args.config.antennas.is_none() && args.config.users.is_none() {
        cfg.scenario.n_antennas = meta.scenario.n_antennas;
        cfg.scenario.n_users = meta.scenario.n_users;
    }
    if (cfg.scenario.n_antennas, cfg.scenario.n_users) != (meta.scenario.n_antennas, meta.scenario.n_users) {
        return Err(Error::InvalidConfig(format!(
            "checkpoint was trained with N={} K={}, config asks for N={} K={}",
            meta.scenario.n_antennas, meta.scenario.n_users, cfg.scenario.n_antennas, cfg.scenario.n_users
        )));
    }
    let sched = meta.schedule.build()?;
    let data = CellData::generate(&cfg, args.rho, args.seed)?;
    print_records(&evaluate_cell(&cfg, arch, &network, &sched, &data)?);
    Ok(())
}

pub fn sweep(args: &SweepArgs) -> Result<()> {
    let cfg = args.config.resolve()?;
    let out = run_sweep(&cfg)?;
    let mut by_key: BTreeMap<(String, usize), BTreeMap<u64, Vec<f64>>> = BTreeMap::new();
    for r in &out.records {
        by_key
            .entry((r.architecture.clone(), r.n_candidates))
            .or_default()
            .entry(r.rho.to_bits())
            .or_default()
            .push(r.se_ratio);
    }
    let mut rhos = cfg.rhos.clone();
    rhos.sort_by(f64::total_cmp);
    let header: Vec<String> = rhos.iter().map(|r| format!("{r:>8}")).collect();
    println!("mean SE ratio to WMMSE over {} seeds", cfg.seeds.len());
    println!("{:<12}{}", "rho", header.join(""));
    for ((arch, n), cols) in &by_key {
        let label = if arch.starts_with("DM-") { format!("{arch} n={n}") } else { arch.clone() };
        let cells: Vec<String> = rhos
            .iter()
            .map(|r| {
                let v = &cols[&r.to_bits()];
                format!("{:>8.4}", v.iter().sum::<f64>() / v.len() as f64)
            })
            .collect();
        println!("{label:<12}{}", cells.join(""));
    }
    println!("wrote {} records to {}", out.records.len(), out.results_path.display());
    if cfg.save_checkpoints {
        println!("checkpoints in {}", cfg.output_dir.join("checkpoints").display());
    }
    Ok(())
}

pub fn oracle(args: &OracleArgs) -> Result<()> {
    if args.instances == 0 || args.levels == 0 {
        return Err(Error::InvalidConfig("instances and levels must be positive".into()));
    }
    let sc = ScenarioConfig::from_snr_db(args.antennas, args.users, args.snr_db, args.rho, args.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let step = sc.power_budget / args.levels as f64;
    let mut ratios = Vec::with_capacity(args.instances);
    if args.verbose {
        println!("instance,wmmse_se,grid_se,ratio");
    }
    for i in 0..args.instances {
        let h = sample_channel(&sc, &mut rng);
        let w = wmmse(&h, sc.noise_power, sc.power_budget, 500, 1e-8)?.se();
        let (_, grid) = brute_force_power(&h, sc.noise_power, sc.power_budget, step)?;
        let ratio = w / grid;
        if args.verbose {
            println!("{i},{w:.6},{grid:.6},{ratio:.6}");
        }
        ratios.push(ratio);
    }
    let worst = ratios.iter().copied().fold(f64::INFINITY, f64::min);
    let below = ratios.iter().filter(|&&r| r < 0.99).count();
    let mean = ratios.iter().sum::<f64>() / ratios.len() as f64;
    println!(
        "{} instances, N={} K={}, grid step P/{}: mean WMMSE/grid {mean:.4}, worst {worst:.4}, {below} below 0.99",
        args.instances, args.antennas, args.users, args.levels
    );
    Ok(())
}

/// Returns whether every check passed.
pub fn selftest() -> bool {
    let checks = run_selftest();
    for c in &checks {
        println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    checks.iter().all(|c| c.passed)
}
