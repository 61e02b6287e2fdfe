use std::path::PathBuf;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::checkpoint::{load_checkpoint, save_checkpoint, CheckpointMetadata, FORMAT_VERSION};
use super::results::{emit_results, read_results, EvalRecord};
use crate::diffusion::{forward_diffuse, reverse_mean, DiffusionSchedule, ScheduleConfig};
use crate::env::{normalize_power, sample_channel, se_gradient, se_of_action, wmmse, Environment, ScenarioConfig};
use crate::nn::{ArchDescriptor, NetInput, Network, OptimizerKind, StateFeatures};
use crate::training::{improve_actions, ActionBuffer, Dataset};

/// Outcome of one self-test check.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

type CheckFn = fn(&mut ChaCha8Rng) -> Result<String, String>;

/// Runs the quick invariant checks with a fixed seed.
pub fn run_selftest() -> Vec<Check> {
    let checks: [(&'static str, CheckFn); 9] = [
        ("schedule", schedule),
        ("diffusion identities", diffusion_identities),
        ("power normalization", normalization),
        ("SE gradient", se_gradient_check),
        ("single-user WMMSE", single_user_wmmse),
        ("GNN symmetries", gnn_symmetries),
        ("buffer monotonicity", buffer_monotonicity),
        ("checkpoint round trip", checkpoint_round_trip),
        ("CSV round trip", csv_round_trip),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(0x5e1f);
    checks
        .iter()
        .map(|(name, f)| {
            let (passed, detail) = match f(&mut rng) {
                Ok(d) => (true, d),
                Err(d) => (false, d),
            };
            Check { name, passed, detail }
        })
        .collect()
}

fn ensure(ok: bool, detail: String) -> Result<String, String> {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn schedule(_: &mut ChaCha8Rng) -> Result<String, String> {
    let s = DiffusionSchedule::default();
    let monotone = s.alpha_bars().windows(2).all(|w| w[1] < w[0]);
    let last = s.alpha_bar(s.steps());
    ensure(monotone && s.reaches_pure_noise(), format!("T={} alpha_bar_T={last:.4}", s.steps()))
}

fn diffusion_identities(rng: &mut ChaCha8Rng) -> Result<String, String> {
    let s = DiffusionSchedule::default();
    let mut worst: f64 = 0.0;
    for t in 1..=s.steps() {
        let x0: Vec<f64> = (0..4).map(|_| rng.sample(StandardNormal)).collect();
        let eps: Vec<f64> = (0..4).map(|_| rng.sample(StandardNormal)).collect();
        let xt = forward_diffuse(&x0, t, &eps, &s).x;
        let mean = reverse_mean(&xt, t, &eps, &s);
        let ab = s.alpha_bar(t);
        let ab_prev = if t > 1 { s.alpha_bar(t - 1) } else { 1.0 };
        for k in 0..4 {
            let posterior = ab_prev.sqrt() * s.beta(t) / (1.0 - ab) * x0[k]
                + s.alpha(t).sqrt() * (1.0 - ab_prev) / (1.0 - ab) * xt[k];
            worst = worst.max((mean[k] - posterior).abs());
        }
    }
    ensure(worst <= 1e-9, format!("max posterior-mean gap {worst:.1e}"))
}

fn normalization(rng: &mut ChaCha8Rng) -> Result<String, String> {
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let raw: Vec<f64> = (0..4).map(|_| rng.random_range(-20.0..20.0)).collect();
        let p = normalize_power(&raw, 10.0);
        if p.powers().iter().any(|&v| v < 0.0) {
            return Err("negative power".into());
        }
        worst = worst.max((p.total() - 10.0).abs());
    }
    ensure(worst <= 1e-9, format!("max budget gap {worst:.1e}"))
}

fn se_gradient_check(rng: &mut ChaCha8Rng) -> Result<String, String> {
    let cfg = ScenarioConfig::from_snr_db(4, 2, 10.0, 0.5, 0).expect("valid scenario");
    let mut worst: f64 = 0.0;
    for _ in 0..10 {
        let h = sample_channel(&cfg, rng);
        let p = [rng.random_range(1.0..9.0), rng.random_range(1.0..9.0)];
        let g = se_gradient(&h, &p, 1.0).map_err(|e| e.to_string())?;
        for k in 0..2 {
            let (mut up, mut down) = (p, p);
            up[k] += 1e-5;
            down[k] -= 1e-5;
            let f = |q: &[f64]| se_of_action(&h, q, 1.0).map_err(|e| e.to_string());
            let fd = (f(&up)? - f(&down)?) / 2e-5;
            worst = worst.max((g[k] - fd).abs() / fd.abs());
        }
    }
    ensure(worst < 1e-4, format!("max relative error {worst:.1e}"))
}

fn single_user_wmmse(rng: &mut ChaCha8Rng) -> Result<String, String> {
    let cfg = ScenarioConfig::from_snr_db(8, 1, 10.0, 0.0, 0).expect("valid scenario");
    let h = sample_channel(&cfg, rng);
    let out = wmmse(&h, 1.0, cfg.power_budget, 500, 1e-8).map_err(|e| e.to_string())?;
    let exact = (1.0 + cfg.power_budget * h.column_norm_sqr(0)).log2();
    let gap = (out.se() - exact).abs();
    ensure(gap <= 1e-6, format!("gap to closed form {gap:.1e}"))
}

fn gnn_symmetries(rng: &mut ChaCha8Rng) -> Result<String, String> {
    let cfg = ScenarioConfig::default().with_correlation(0.5).expect("valid scenario");
    let net = Network::new(ArchDescriptor::gnn_noise_predictor(16, 3), rng).map_err(|e| e.to_string())?;
    let mut worst: f64 = 0.0;
    let mut antenna_exact = true;
    for _ in 0..10 {
        let h = sample_channel(&cfg, rng);
        let mut users: Vec<usize> = (0..4).collect();
        users.shuffle(rng);
        let mut antennas: Vec<usize> = (0..8).collect();
        antennas.shuffle(rng);
        let x = Array2::from_shape_fn((1, 4), |_| rng.random_range(-2.0..2.0));
        let xu = Array2::from_shape_fn((1, 4), |(_, k)| x[(0, users[k])]);
        let run = |f: &StateFeatures, x: &Array2<f64>| {
            net.forward(&NetInput { states: vec![f], extra: Some(x.view()), steps: Some(&[9]) })
                .map(|o| o.row(0).to_vec())
                .map_err(|e| e.to_string())
        };
        let out = run(&StateFeatures::from_channel(&h), &x)?;
        let out_u = run(&StateFeatures::from_channel(&h.permute_users(&users)), &xu)?;
        let out_a = run(&StateFeatures::from_channel(&h.permute_antennas(&antennas)), &x)?;
        for (k, &j) in users.iter().enumerate() {
            worst = worst.max((out_u[k] - out[j]).abs());
        }
        antenna_exact &= out_a == out;
    }
    ensure(
        worst <= 1e-9 && antenna_exact,
        format!("equivariance gap {worst:.1e}, antenna order exact: {antenna_exact}"),
    )
}

fn buffer_monotonicity(rng: &mut ChaCha8Rng) -> Result<String, String> {
    let sc = ScenarioConfig::default().with_correlation(0.8).expect("valid scenario");
    let env = Environment::new(&sc);
    let data = Dataset::generate(&sc, 16, rng);
    let mut buffer = ActionBuffer::equal_power(&env, &data).map_err(|e| e.to_string())?;
    let start = buffer.mean_se();
    for _ in 0..5 {
        let before: Vec<f64> = buffer.entries().iter().map(|e| e.se).collect();
        improve_actions(&env, &data, &mut buffer, 1, 1.0).map_err(|e| e.to_string())?;
        if buffer.entries().iter().zip(&before).any(|(e, b)| e.se < *b) {
            return Err("an entry lost SE".into());
        }
    }
    Ok(format!("mean SE {start:.4} -> {:.4}", buffer.mean_se()))
}

fn scratch_path(name: &str) -> PathBuf {
    std::env::temp_dir().join(format!("diffbeam-selftest-{}-{name}", std::process::id()))
}

fn checkpoint_round_trip(rng: &mut ChaCha8Rng) -> Result<String, String> {
    let arch = ArchDescriptor::gnn_noise_predictor(8, 2);
    let net = Network::new(arch.clone(), rng).map_err(|e| e.to_string())?;
    let meta = CheckpointMetadata {
        format_version: FORMAT_VERSION,
        label: "DM-GNN".into(),
        arch,
        seed: rng.random(),
        schedule: ScheduleConfig::default(),
        optimizer: OptimizerKind::default(),
        scenario: ScenarioConfig::default(),
    };
    let path = scratch_path("model.ckpt");
    let result = save_checkpoint(&net, &meta, &path).and_then(|_| load_checkpoint(&path));
    let _ = std::fs::remove_file(&path);
    let (back, back_meta) = result.map_err(|e| e.to_string())?;
    let exact = back_meta == meta && back.params().iter().zip(net.params()).all(|(a, b)| a.to_bits() == b.to_bits());
    ensure(exact, format!("{} parameters", net.param_count()))
}

fn csv_round_trip(rng: &mut ChaCha8Rng) -> Result<String, String> {
    let records: Vec<EvalRecord> = (0..4)
        .map(|i| {
            let (mean_se, wmmse_se) = (rng.random_range(5.0..15.0), rng.random_range(5.0..15.0));
            EvalRecord {
                architecture: if i % 2 == 0 { "GNN" } else { "DM-GNN" }.into(),
                rho: 0.1 * i as f64,
                seed: rng.random(),
                mean_se,
                wmmse_se,
                se_ratio: mean_se / wmmse_se,
                n_candidates: 8,
            }
        })
        .collect();
    let (a, b) = (scratch_path("a.csv"), scratch_path("b.csv"));
    let result = (|| -> crate::Result<bool> {
        emit_results(&records, &a)?;
        let back = read_results(&a)?;
        emit_results(&back, &b)?;
        let same_bytes = std::fs::read(&a).ok() == std::fs::read(&b).ok();
        Ok(same_bytes && back.len() == records.len() && back.iter().all(|r| records.contains(r)))
    })();
    let _ = std::fs::remove_file(&a);
    let _ = std::fs::remove_file(&b);
    ensure(result.map_err(|e| e.to_string())?, format!("{} records", records.len()))
}
