use diffbeam::diffusion::{best_of_n, sample_raw, DiffusionSchedule};
use diffbeam::env::{sample_channel, wmmse, ActionMap, Environment, ScenarioConfig};
use diffbeam::nn::{ArchDescriptor, Network, OptimizerKind};
use diffbeam::training::{
    feasible_best_of_n, improve_actions, policy_powers, raw_from_powers, train_direct_baseline, train_lagrangian,
    train_model_based_unsup, train_model_free_unsup, train_supervised, ActionBuffer, Constraint, ConstraintSet, Critic,
    Dataset, PerfectCritic, Sample, TrainConfig, ValueNetwork,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn scenario(rho: f64) -> ScenarioConfig {
    ScenarioConfig::default().with_correlation(rho).unwrap()
}

fn small_config(epochs: usize, seed: u64) -> TrainConfig {
    TrainConfig { epochs, seed, ..TrainConfig::default() }
}

fn wmmse_mean(data: &Dataset, env: &Environment) -> f64 {
    data.samples.iter().map(|s| wmmse(&s.channel, env.noise_power, env.budget, 500, 1e-8).unwrap().se()).sum::<f64>()
        / data.len() as f64
}

fn l2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

fn repeated(h: &Sample, n: usize) -> Dataset {
    Dataset::from_channels(vec![h.channel.clone(); n])
}

#[test]
fn supervised_fit_on_one_pair_reproduces_its_label() {
    let sc = scenario(0.3);
    let env = Environment::new(&sc);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let h = Sample::new(sample_channel(&sc, &mut rng));
    let data = repeated(&h, 256);
    let label = [4.0, 3.0, 2.0, 1.0];
    let raw = raw_from_powers(&env, &label, 5.0);
    let labels = vec![raw; data.len()];
    let cfg = small_config(40, 3);
    let sched = cfg.schedule.build().unwrap();
    let mut net = Network::new(ArchDescriptor::gnn_noise_predictor(32, 3), &mut rng).unwrap();
    let report = train_supervised(&mut net, &data, &labels, &sched, &cfg).unwrap();
    let lead: f64 = report.losses[..100].iter().sum::<f64>() / 100.0;
    let n = report.losses.len();
    let trail: f64 = report.losses[n - 100..].iter().sum::<f64>() / 100.0;
    assert!(trail < lead, "loss {lead} -> {trail}");

    let states = vec![&h.features; 200];
    let draws = sample_raw(&net, &states, &sched, &mut rng).unwrap();
    let close = draws.rows().into_iter().filter(|r| l2(&env.powers(&r.to_vec()), &label) <= 0.1 * env.budget).count();
    assert!(close >= 180, "{close} of 200 draws near the label");
}

#[test]
fn ascent_raises_the_mean_buffer_se() {
    let sc = scenario(0.5);
    let env = Environment::new(&sc);
    let data = Dataset::generate(&sc, 64, &mut ChaCha8Rng::seed_from_u64(2));
    let mut buffer = ActionBuffer::equal_power(&env, &data).unwrap();
    let before: Vec<f64> = buffer.entries().iter().map(|e| e.se).collect();
    improve_actions(&env, &data, &mut buffer, 10, 1.0).unwrap();
    let after: Vec<f64> = buffer.entries().iter().map(|e| e.se).collect();
    assert!(after.iter().zip(&before).all(|(a, b)| a >= b));
    assert!(after.iter().zip(&before).any(|(a, b)| a > b));
    assert!(buffer.mean_se() > before.iter().sum::<f64>() / 64.0);
    for (e, s) in buffer.entries().iter().zip(&data.samples) {
        assert_eq!(e.se, env.se(&s.channel, &e.powers).unwrap());
    }
}

#[test]
fn model_based_training_tracks_wmmse_on_independent_channels() {
    let sc = scenario(0.0);
    let env = Environment::new(&sc);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let train = Dataset::generate(&sc, 512, &mut rng);
    let test = Dataset::generate(&sc, 256, &mut rng);
    let cfg = small_config(15, 5);
    let sched = cfg.schedule.build().unwrap();
    let mut net = Network::new(ArchDescriptor::gnn_noise_predictor(32, 3), &mut rng).unwrap();
    let report = train_model_based_unsup(&mut net, &train, &env, &sched, &cfg).unwrap();
    assert!(report.trace.windows(2).all(|w| w[1].buffer_mean_se >= w[0].buffer_mean_se));
    assert_eq!(report.gradient_calls, cfg.gradient_budget(train.len()));

    let best = best_of_n(&net, &env, &test.features(), &sched, &mut rng, 8, |i, p| env.se(&test.samples[i].channel, p))
        .unwrap();
    let ratio = best.iter().map(|c| c.score).sum::<f64>() / test.len() as f64 / wmmse_mean(&test, &env);
    assert!(ratio >= 0.9, "SE ratio {ratio}");
}

#[test]
fn one_channel_training_concentrates_on_the_buffer_action() {
    let sc = scenario(0.4);
    let env = Environment::new(&sc);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let h = Sample::new(sample_channel(&sc, &mut rng));
    let data = repeated(&h, 128);
    let cfg = small_config(30, 7);
    let sched = cfg.schedule.build().unwrap();
    let mut net = Network::new(ArchDescriptor::gnn_noise_predictor(32, 3), &mut rng).unwrap();
    let report = train_model_based_unsup(&mut net, &data, &env, &sched, &cfg).unwrap();
    let best = report.buffer.entries().iter().max_by(|a, b| a.se.total_cmp(&b.se)).unwrap().powers.clone();

    let draws = sample_raw(&net, &vec![&h.features; 200], &sched, &mut rng).unwrap();
    let close = draws.rows().into_iter().filter(|r| l2(&env.powers(&r.to_vec()), &best) <= 0.15 * env.budget).count();
    assert!(close >= 160, "{close} of 200 draws near the buffer action");
}

#[test]
fn perfect_critic_reproduces_model_based_training() {
    let sc = scenario(0.6);
    let env_a = Environment::new(&sc);
    let env_b = Environment::new(&sc);
    let data = Dataset::generate(&sc, 96, &mut ChaCha8Rng::seed_from_u64(8));
    let cfg = small_config(4, 9);
    let sched = cfg.schedule.build().unwrap();
    let init = Network::new(ArchDescriptor::gnn_noise_predictor(16, 2), &mut ChaCha8Rng::seed_from_u64(10)).unwrap();

    let mut a = init.clone();
    let ra = train_model_based_unsup(&mut a, &data, &env_a, &sched, &cfg).unwrap();
    let mut b = init.clone();
    let mut critic = PerfectCritic { env: &env_b };
    let rb = train_model_free_unsup(&mut b, &mut critic, &data, &env_b, &sched, &cfg).unwrap();

    let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(a.params()), bits(b.params()));
    assert_eq!(bits(&ra.losses), bits(&rb.base.losses));
    assert_eq!(ra.gradient_calls, rb.base.gradient_calls);
    assert_eq!(ra.buffer, rb.base.buffer);
}

#[test]
fn learned_critic_training_stays_close_to_model_based() {
    let sc = scenario(0.0);
    let env = Environment::new(&sc);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let train = Dataset::generate(&sc, 256, &mut rng);
    let held_out = Dataset::generate(&sc, 256, &mut rng);
    let test = Dataset::generate(&sc, 256, &mut rng);
    let cfg = small_config(15, 12);
    let sched = cfg.schedule.build().unwrap();
    let init = Network::new(ArchDescriptor::gnn_noise_predictor(32, 3), &mut rng).unwrap();

    let mut based = init.clone();
    train_model_based_unsup(&mut based, &train, &env, &sched, &cfg).unwrap();
    let value_net = Network::new(ArchDescriptor::gnn_value(32, 3), &mut rng).unwrap();
    let mut critic = ValueNetwork::new(value_net, env.budget, OptimizerKind::Adam { learning_rate: 3e-3 }).unwrap();
    let mut free = init.clone();
    let report = train_model_free_unsup(&mut free, &mut critic, &train, &env, &sched, &cfg).unwrap();
    assert!(!report.value_losses.is_empty());

    let mut abs_err = 0.0;
    let mut total = 0.0;
    for s in &held_out.samples {
        let w: Vec<f64> = (0..4).map(|_| rng.random_range(0.0..1.0)).collect();
        let sum: f64 = w.iter().sum();
        let p: Vec<f64> = w.iter().map(|v| env.budget * v / sum).collect();
        let truth = env.se(&s.channel, &p).unwrap();
        abs_err += (critic.predict(s, &p).unwrap() - truth).abs();
        total += truth;
    }
    assert!(abs_err < 0.1 * total, "MAE {} vs mean SE {}", abs_err / 256.0, total / 256.0);

    let reference = wmmse_mean(&test, &env);
    let ratio = |net: &Network, rng: &mut ChaCha8Rng| {
        let best =
            best_of_n(net, &env, &test.features(), &sched, rng, 8, |i, p| env.se(&test.samples[i].channel, p)).unwrap();
        best.iter().map(|c| c.score).sum::<f64>() / test.len() as f64 / reference
    };
    let (rb, rf) = (ratio(&based, &mut rng), ratio(&free, &mut rng));
    assert!((rb - rf).abs() <= 0.05, "model-based {rb} model-free {rf}");
}

#[test]
fn slack_constraints_keep_zero_multipliers() {
    let sc = scenario(0.5);
    let env = Environment::new(&sc);
    let data = Dataset::generate(&sc, 32, &mut ChaCha8Rng::seed_from_u64(13));
    let mut set = ConstraintSet::new();
    set.register(Constraint::total_power(2.0 * env.budget)).unwrap();
    let cfg = small_config(3, 14);
    let sched = cfg.schedule.build().unwrap();
    let mut net = Network::new(ArchDescriptor::gnn_noise_predictor(8, 2), &mut ChaCha8Rng::seed_from_u64(15)).unwrap();
    let report = train_lagrangian(&mut net, &data, &env, &set, &sched, &cfg, 0.1).unwrap();
    assert!(report.multiplier_trace.iter().flatten().all(|&l| l == 0.0));
    assert_eq!(report.multipliers, vec![0.0]);
}

#[test]
fn minimum_power_constraints_hold_after_training() {
    let sc = scenario(0.5);
    let env = Environment::new(&sc);
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let data = Dataset::generate(&sc, 256, &mut rng);
    let floor = 0.05 * env.budget;
    let mut set = ConstraintSet::new();
    for k in 0..4 {
        set.register(Constraint::min_power(k, floor)).unwrap();
    }
    let cfg = TrainConfig { final_lr_fraction: 0.03, ..small_config(20, 17) };
    let sched = cfg.schedule.build().unwrap();
    let mut net = Network::new(ArchDescriptor::gnn_noise_predictor(32, 3), &mut rng).unwrap();
    train_lagrangian(&mut net, &data, &env, &set, &sched, &cfg, 0.5).unwrap();
    let chosen =
        feasible_best_of_n(&net, &env, &set, &data.features(), &sched, &mut rng, 8, 1e-3 * env.budget, |i, p| {
            env.se(&data.samples[i].channel, p)
        })
        .unwrap();
    let worst = chosen.iter().map(|c| set.max_violation(&c.powers)).fold(0.0, f64::max);
    assert!(worst <= 1e-3 * env.budget, "worst violation {worst}");
}

#[test]
fn single_user_baseline_spends_the_whole_budget() {
    let sc = ScenarioConfig::from_snr_db(8, 1, 10.0, 0.0, 0).unwrap();
    let env = Environment::new(&sc).with_action_map(ActionMap::Softplus);
    let mut rng = ChaCha8Rng::seed_from_u64(18);
    let data = Dataset::generate(&sc, 64, &mut rng);
    let cfg = TrainConfig { optimizer: OptimizerKind::Adam { learning_rate: 3e-2 }, ..small_config(5, 19) };
    let mut net = Network::new(ArchDescriptor::gnn_policy(8, 2), &mut rng).unwrap();
    train_direct_baseline(&mut net, &data, &env, &cfg, 4000).unwrap();
    let powers = policy_powers(&net, &env, &data.features()).unwrap();
    assert!(powers.iter().all(|p| p[0] >= 0.99 * env.budget), "{:?}", powers[0]);
}

#[test]
fn gnn_baseline_splits_evenly_between_identical_users() {
    let sc = scenario(1.0);
    let env = Environment::new(&sc);
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let data = Dataset::generate(&sc, 128, &mut rng);
    let cfg = small_config(5, 21);
    let mut net = Network::new(ArchDescriptor::gnn_policy(32, 3), &mut rng).unwrap();
    train_direct_baseline(&mut net, &data, &env, &cfg, cfg.gradient_budget(data.len())).unwrap();
    let test = Dataset::generate(&sc, 64, &mut rng);
    let powers = policy_powers(&net, &env, &test.features()).unwrap();
    let mean_max = powers.iter().map(|p| p.iter().cloned().fold(0.0, f64::max)).sum::<f64>() / 64.0;
    assert!(mean_max <= 0.3 * env.budget, "mean max component {mean_max}");
}

#[test]
fn gnn_baseline_is_competitive_on_independent_channels() {
    let sc = scenario(0.0);
    let env = Environment::new(&sc);
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let train = Dataset::generate(&sc, 512, &mut rng);
    let test = Dataset::generate(&sc, 256, &mut rng);
    let cfg = small_config(15, 23);
    let mut net = Network::new(ArchDescriptor::gnn_policy(32, 3), &mut rng).unwrap();
    let budget = cfg.gradient_budget(train.len());
    let report = train_direct_baseline(&mut net, &train, &env, &cfg, budget).unwrap();
    assert_eq!(report.gradient_calls, budget);
    let powers = policy_powers(&net, &env, &test.features()).unwrap();
    let se =
        powers.iter().zip(&test.samples).map(|(p, s)| env.se(&s.channel, p).unwrap()).sum::<f64>() / test.len() as f64;
    let ratio = se / wmmse_mean(&test, &env);
    assert!(ratio >= 0.85, "SE ratio {ratio}");
}

#[test]
fn diffusion_and_baseline_get_equal_gradient_counts() {
    let sc = scenario(0.8);
    let data = Dataset::generate(&sc, 48, &mut ChaCha8Rng::seed_from_u64(24));
    let cfg = small_config(3, 25);
    let sched = cfg.schedule.build().unwrap();
    let env_dm = Environment::new(&sc);
    let mut dm =
        Network::new(ArchDescriptor::fnn_noise_predictor(8, 4, &[32]), &mut ChaCha8Rng::seed_from_u64(26)).unwrap();
    let dm_report = train_model_based_unsup(&mut dm, &data, &env_dm, &sched, &cfg).unwrap();
    assert_eq!(env_dm.gradient_calls(), dm_report.gradient_calls);

    let env_base = Environment::new(&sc);
    let mut base = Network::new(ArchDescriptor::fnn_policy(8, 4, &[32]), &mut ChaCha8Rng::seed_from_u64(27)).unwrap();
    let base_report = train_direct_baseline(&mut base, &data, &env_base, &cfg, dm_report.gradient_calls).unwrap();
    assert_eq!(env_base.gradient_calls(), base_report.gradient_calls);
    assert_eq!(base_report.gradient_calls, dm_report.gradient_calls);
}

#[test]
fn identical_seeds_give_identical_parameters() {
    let sc = scenario(0.9);
    let env = Environment::new(&sc);
    let data = Dataset::generate(&sc, 40, &mut ChaCha8Rng::seed_from_u64(28));
    let cfg = small_config(3, 29);
    let sched: DiffusionSchedule = cfg.schedule.build().unwrap();
    let train = |seed: u64| {
        let mut net =
            Network::new(ArchDescriptor::gnn_noise_predictor(8, 2), &mut ChaCha8Rng::seed_from_u64(30)).unwrap();
        let c = TrainConfig { seed, ..cfg.clone() };
        train_model_based_unsup(&mut net, &data, &env, &sched, &c).unwrap();
        net
    };
    let a = train(1);
    let b = train(1);
    let c = train(2);
    assert!(a.params().iter().zip(b.params()).all(|(x, y)| x.to_bits() == y.to_bits()));
    assert_ne!(a.params(), c.params());
}
