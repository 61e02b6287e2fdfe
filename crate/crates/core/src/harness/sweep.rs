use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::checkpoint::{save_checkpoint, CheckpointMetadata, FORMAT_VERSION};
use super::config::{Architecture, ExperimentConfig, WmmseConfig};
use super::results::{emit_results, emit_traces, write_plot, EvalRecord, TraceRecord};
use crate::diffusion::{best_of_n, DiffusionSchedule};
use crate::env::{wmmse, Environment, ScenarioConfig};
use crate::error::{Error, Result};
use crate::nn::Network;
use crate::training::{
    policy_powers, train_direct_baseline, train_model_based_unsup, Dataset, EpochTrace, TrainConfig,
};

/// How actions are chosen on the test set.
#[derive(Debug, Clone, Copy)]
pub enum Policy<'a> {
    /// Reverse diffusion; the best of `n_candidates` draws by SE is kept.
    Diffusion {
        predictor: &'a Network,
        sched: &'a DiffusionSchedule,
        n_candidates: usize,
        seed: u64,
    },
    Direct(&'a Network),
    EqualPower,
    Wmmse(WmmseConfig),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub mean_se: f64,
    pub wmmse_se: f64,
    pub se_ratio: f64,
    pub per_sample: Vec<f64>,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn wmmse_per_sample(test: &Dataset, env: &Environment, cfg: WmmseConfig) -> Result<Vec<f64>> {
    test.samples
        .iter()
        .map(|s| Ok(wmmse(&s.channel, env.noise_power, env.budget, cfg.max_iter, cfg.tol)?.se()))
        .collect()
}

fn policy_per_sample(policy: &Policy, test: &Dataset, env: &Environment) -> Result<Vec<f64>> {
    let se_of = |powers: Vec<Vec<f64>>| -> Result<Vec<f64>> {
        powers.iter().zip(&test.samples).map(|(p, s)| env.se(&s.channel, p)).collect()
    };
    match *policy {
        Policy::Diffusion { predictor, sched, n_candidates, seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let best = best_of_n(predictor, env, &test.features(), sched, &mut rng, n_candidates, |i, p| {
                env.se(&test.samples[i].channel, p)
            })?;
            Ok(best.into_iter().map(|c| c.score).collect())
        }
        Policy::Direct(net) => se_of(policy_powers(net, env, &test.features())?),
        Policy::EqualPower => {
            let raw = env.equal_power_raw(test.n_users());
            se_of(test.samples.iter().map(|_| env.powers(&raw)).collect())
        }
        Policy::Wmmse(cfg) => wmmse_per_sample(test, env, cfg),
    }
}

/// Mean SE of `policy` on `test` against the mean WMMSE SE on the same
/// channels.
pub fn evaluate(policy: &Policy, test: &Dataset, env: &Environment, wmmse_cfg: WmmseConfig) -> Result<Evaluation> {
    let reference = wmmse_per_sample(test, env, wmmse_cfg)?;
    evaluate_against(policy, test, env, &reference)
}

pub(crate) fn evaluate_against(
    policy: &Policy,
    test: &Dataset,
    env: &Environment,
    wmmse_se: &[f64],
) -> Result<Evaluation> {
    test.require_nonempty()?;
    let per_sample = policy_per_sample(policy, test, env)?;
    let mean_se = mean(&per_sample);
    let wmmse_se = mean(wmmse_se);
    Ok(Evaluation { mean_se, wmmse_se, se_ratio: mean_se / wmmse_se, per_sample })
}

/// Mixes identifiers into one seed.
fn derive_seed(parts: &[u64]) -> u64 {
    let mut h: u64 = 0x243f_6a88_85a3_08d3;
    for &p in parts {
        h ^= p;
        h = h.wrapping_add(0x9e37_79b9_7f4a_7c15);
        h = (h ^ (h >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        h = (h ^ (h >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        h ^= h >> 31;
    }
    h
}

const TAG_TRAIN_DATA: u64 = 1;
const TAG_TEST_DATA: u64 = 2;
const TAG_INIT: u64 = 3;
const TAG_TRAIN: u64 = 4;
const TAG_EVAL: u64 = 5;

fn arch_id(a: Architecture) -> u64 {
    match a {
        Architecture::DmFnn => 11,
        Architecture::DmGnn => 12,
        Architecture::Fnn => 13,
        Architecture::Gnn => 14,
    }
}

/// Channels and reference SEs shared by every architecture at one
/// `(rho, seed)` point.
#[derive(Debug, Clone)]
pub struct CellData {
    pub rho: f64,
    pub seed: u64,
    pub scenario: ScenarioConfig,
    pub train: Dataset,
    pub test: Dataset,
    pub wmmse_se: Vec<f64>,
}

impl CellData {
    pub fn generate(cfg: &ExperimentConfig, rho: f64, seed: u64) -> Result<Self> {
        let scenario = cfg.scenario.at(rho, seed)?;
        let base = [seed, rho.to_bits()];
        let mut train_rng = ChaCha8Rng::seed_from_u64(derive_seed(&[base[0], base[1], TAG_TRAIN_DATA]));
        let mut test_rng = ChaCha8Rng::seed_from_u64(derive_seed(&[base[0], base[1], TAG_TEST_DATA]));
        let train = Dataset::generate(&scenario, cfg.n_train, &mut train_rng);
        let test = Dataset::generate(&scenario, cfg.n_test, &mut test_rng);
        let wmmse_se = wmmse_per_sample(&test, &Environment::new(&scenario), cfg.wmmse)?;
        Ok(Self { rho, seed, scenario, train, test, wmmse_se })
    }
}

#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub network: Network,
    pub metadata: CheckpointMetadata,
}

#[derive(Debug, Clone)]
pub struct CellOutcome {
    pub architecture: Architecture,
    pub records: Vec<EvalRecord>,
    pub traces: Vec<TraceRecord>,
    pub model: TrainedModel,
    /// Environment gradients spent in training.
    pub gradient_calls: u64,
}

/// Test-set records of a trained `arch` model on `data`: one per candidate
/// count for diffusion policies, a single one otherwise. Sampling seeds
/// depend only on the point and architecture.
pub fn evaluate_cell(
    cfg: &ExperimentConfig,
    arch: Architecture,
    network: &Network,
    sched: &DiffusionSchedule,
    data: &CellData,
) -> Result<Vec<EvalRecord>> {
    let ids = [data.seed, data.rho.to_bits(), arch_id(arch)];
    let env = Environment::new(&data.scenario);
    let record = |ev: Evaluation, n_candidates: usize| EvalRecord {
        architecture: arch.name().to_string(),
        rho: data.rho,
        seed: data.seed,
        mean_se: ev.mean_se,
        wmmse_se: ev.wmmse_se,
        se_ratio: ev.se_ratio,
        n_candidates,
    };
    if !arch.is_diffusion() {
        let ev = evaluate_against(&Policy::Direct(network), &data.test, &env, &data.wmmse_se)?;
        return Ok(vec![record(ev, 1)]);
    }
    cfg.n_candidates
        .iter()
        .map(|&n| {
            let policy = Policy::Diffusion {
                predictor: network,
                sched,
                n_candidates: n,
                seed: derive_seed(&[ids[0], ids[1], ids[2], TAG_EVAL, n as u64]),
            };
            Ok(record(evaluate_against(&policy, &data.test, &env, &data.wmmse_se)?, n))
        })
        .collect()
}

/// Trains and evaluates one architecture on one `(rho, seed)` point.
pub fn run_cell(cfg: &ExperimentConfig, arch: Architecture, data: &CellData) -> Result<CellOutcome> {
    let ids = [data.seed, data.rho.to_bits(), arch_id(arch)];
    let env = Environment::new(&data.scenario);
    let descriptor = arch.descriptor(&cfg.scenario, &cfg.model);
    let mut init_rng = ChaCha8Rng::seed_from_u64(derive_seed(&[ids[0], ids[1], ids[2], TAG_INIT]));
    let mut network = Network::new(descriptor.clone(), &mut init_rng)?;
    let train_cfg = TrainConfig { seed: derive_seed(&[ids[0], ids[1], ids[2], TAG_TRAIN]), ..cfg.train.clone() };
    let sched = train_cfg.schedule.build()?;
    let mut traces = Vec::new();
    let gradient_calls;
    if arch.is_diffusion() {
        let report = train_model_based_unsup(&mut network, &data.train, &env, &sched, &train_cfg)?;
        gradient_calls = report.gradient_calls;
        traces.extend(report.trace.iter().map(|t: &EpochTrace| TraceRecord {
            architecture: arch.name().to_string(),
            rho: data.rho,
            seed: data.seed,
            epoch: t.epoch,
            loss: t.loss,
            buffer_mean_se: t.buffer_mean_se,
        }));
    } else {
        let budget = train_cfg.gradient_budget(data.train.len());
        let report = train_direct_baseline(&mut network, &data.train, &env, &train_cfg, budget)?;
        gradient_calls = report.gradient_calls;
    }
    let records = evaluate_cell(cfg, arch, &network, &sched, data)?;
    let metadata = CheckpointMetadata {
        format_version: FORMAT_VERSION,
        label: arch.name().to_string(),
        arch: descriptor,
        seed: train_cfg.seed,
        schedule: train_cfg.schedule,
        optimizer: train_cfg.optimizer,
        scenario: data.scenario.clone(),
    };
    Ok(CellOutcome { architecture: arch, records, traces, model: TrainedModel { network, metadata }, gradient_calls })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepOutput {
    pub records: Vec<EvalRecord>,
    pub traces: Vec<TraceRecord>,
    pub results_path: PathBuf,
}

fn checkpoint_path(dir: &Path, arch: Architecture, rho: f64, seed: u64) -> PathBuf {
    dir.join("checkpoints").join(format!("{}_rho{rho}_seed{seed}.ckpt", arch.name().to_ascii_lowercase()))
}

/// Runs every `(architecture, rho, seed)` cell and writes `results.csv`,
/// `traces.csv`, optionally `se_ratio.svg` and checkpoints into the output
/// directory. Output does not depend on the worker count.
pub fn run_sweep(cfg: &ExperimentConfig) -> Result<SweepOutput> {
    cfg.validate()?;
    let archs = cfg.parsed_architectures()?;
    std::fs::create_dir_all(&cfg.output_dir).map_err(|e| Error::io(&cfg.output_dir, e))?;
    let points: Vec<(f64, u64)> =
        cfg.rhos.iter().flat_map(|&rho| cfg.seeds.iter().map(move |&seed| (rho, seed))).collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
    let outcomes: Vec<Vec<CellOutcome>> = pool.install(|| {
        points
            .par_iter()
            .map(|&(rho, seed)| {
                let data = CellData::generate(cfg, rho, seed)?;
                archs.iter().map(|&a| run_cell(cfg, a, &data)).collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()
    })?;

    let mut records = Vec::new();
    let mut traces = Vec::new();
    for (&(rho, seed), cell) in points.iter().zip(&outcomes) {
        for o in cell {
            records.extend(o.records.iter().cloned());
            traces.extend(o.traces.iter().cloned());
            if cfg.save_checkpoints {
                let path = checkpoint_path(&cfg.output_dir, o.architecture, rho, seed);
                save_checkpoint(&o.model.network, &o.model.metadata, &path)?;
            }
        }
    }
    let results_path = cfg.output_dir.join("results.csv");
    emit_results(&records, &results_path)?;
    emit_traces(&traces, &cfg.output_dir.join("traces.csv"))?;
    if cfg.plot {
        write_plot(&records, &cfg.output_dir.join("se_ratio.svg"))?;
    }
    Ok(SweepOutput { records, traces, results_path })
}
