//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion.
//!
//! The process exits 0 even when a criterion fails so that the workspace test
//! run completes; set `ACCEPTANCE_STRICT=1` to turn failures into a non-zero
//! exit code.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use quadbench::catch::{self, BallCatchConfig};
use quadbench::env::{Episode, EpisodeDraw, Morphology, SeedStream, TaskConfig, TaskKind};
use quadbench::gc::{attitude_error, FeedforwardMode, GcGains};
use quadbench::harness::{self, Controller, EpisodeResult, GcAgent, PolicyAgent, RandomAgent, ReferenceSource, TeleportOracle};
use quadbench::ppo::{self, gae, gaussian_log_prob, surrogate, TrainConfig};
use quadbench::reward::MAX_REWARD;
use quadbench::sim::{self, DynamicsFidelity, MotorState, Plant, RigidBodyState, VehicleParams, Wrench};
use quadbench::so3::{self, Mat3, Vec3};
use quadbench::trajectory::{self, InitRanges, TaskRanges, TrajectoryKind};
use quadbench::tuner::{self, TuneSettings};

struct Outcome {
    pass: bool,
    detail: String,
}

fn check(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn mean(xs: impl IntoIterator<Item = f64>) -> f64 {
    let v: Vec<f64> = xs.into_iter().collect();
    v.iter().sum::<f64>() / v.len() as f64
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn avg_reward(results: &[EpisodeResult]) -> f64 {
    mean(results.iter().map(|r| r.summary.avg_reward))
}

fn gap(avg: f64) -> f64 {
    (MAX_REWARD - avg) / MAX_REWARD
}

fn run<C: Controller + Clone + Send + Sync>(task: &TaskConfig, c: &C, n: usize) -> Vec<EpisodeResult> {
    harness::run_many(task, c, &harness::seeds(task, SeedStream::Eval, n)).expect("evaluation")
}

/// Gains tuned once and shared by the GC criteria.
struct Tuned {
    hover: GcGains,
    lissajous: GcGains,
}

fn tune(kind: TaskKind) -> GcGains {
    let task = TaskConfig::new(kind, Morphology::Quadrotor);
    tuner::tune(&task, FeedforwardMode::Ff, ReferenceSource::default(), &TuneSettings::default(), None).expect("tuning").0
}

fn trajectory_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let ranges = TaskRanges::for_kind(TrajectoryKind::Lissajous);
    let h = 1e-3;
    // fourth-order central difference of the next-lower analytic derivative
    let fd = |f: &dyn Fn(f64) -> f64, t: f64| (f(t - 2.0 * h) - 8.0 * f(t - h) + 8.0 * f(t + h) - f(t + 2.0 * h)) / (12.0 * h);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let p = trajectory::sample_task(&ranges, &mut rng);
        let t = rng.random_range(0.0..10.0);
        for c in &p.channels {
            for n in 1..=4 {
                let analytic = c.derivative(t, n);
                let numeric = fd(&|s| c.derivative(s, n - 1), t);
                worst = worst.max((analytic - numeric).abs() / analytic.abs().max(1.0));
            }
        }
        // the flat reference exposes the same derivatives
        let r = trajectory::sample(&p, t);
        let pos = |s: f64| trajectory::sample(&p, s).position;
        let num_v = (pos(t - 2.0 * h) - 8.0 * pos(t - h) + 8.0 * pos(t + h) - pos(t + 2.0 * h)) / (12.0 * h);
        worst = worst.max((r.velocity - num_v).amax() / r.velocity.amax().max(1.0));
    }
    let secs = start.elapsed().as_secs_f64();
    check(worst < 1e-6 && secs < 5.0, format!("max rel. error {worst:.2e} over 1000 draws in {secs:.2} s"))
}

fn rotation_algebra() -> Outcome {
    let mut worst = 0.0f64;
    for k in 0..100 {
        let theta = -std::f64::consts::PI + 2.0 * std::f64::consts::PI * k as f64 / 99.0;
        let e = attitude_error(&so3::rot_z(theta), &Mat3::identity());
        worst = worst.max((e - Vec3::new(0.0, 0.0, theta.sin())).amax());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut exact = true;
    for _ in 0..100 {
        let r = so3::exp(&Vec3::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)));
        exact &= attitude_error(&r, &r) == Vec3::zeros();
    }
    check(worst < 1e-12 && exact, format!("max |e_R - (0,0,sin)| {worst:.1e}, e_R(R,R) exactly zero: {exact}"))
}

fn allocation_round_trip() -> Outcome {
    let p = VehicleParams::nominal_quadrotor();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    for _ in 0..10_000 {
        // wrenches generated from in-range rotor speeds are unsaturated
        let speeds = MotorState::new(std::array::from_fn(|_| rng.random_range(0.1..0.95) * p.omega_max));
        let w = sim::wrench_from_motors(&speeds, &p);
        let back = sim::wrench_from_motors(&sim::allocate(&w, &p).expect("allocation"), &p);
        worst = worst.max((back.thrust - w.thrust).abs()).max((back.moment - w.moment).amax());
    }
    check(worst < 1e-9, format!("max wrench error {worst:.1e} over 10^4 wrenches"))
}

fn motor_lag() -> Outcome {
    let p = VehicleParams::nominal_quadrotor();
    let tau = p.tau_m;
    let target = MotorState::uniform(0.8 * p.omega_max);
    let mut m = MotorState::uniform(0.0);
    for _ in 0..100 {
        m = sim::motor_step(&m, &target, tau, tau / 100.0, p.omega_max).expect("motor step");
    }
    let frac = m.speeds[0] / target.speeds[0];
    check((frac - 0.632).abs() < 0.01, format!("response at t = tau_m: {:.2}%", 100.0 * frac))
}

fn hover_convergence(tuned: &Tuned) -> Outcome {
    let start = Instant::now();
    let task = TaskConfig::new(TaskKind::Hover, Morphology::Quadrotor);
    let results = run(&task, &GcAgent::new(tuned.hover, FeedforwardMode::Ff, ReferenceSource::default(), &task), 200);
    let last = |r: &EpisodeResult| *r.trace.last().expect("non-empty trace");
    let ep = median(results.iter().map(|r| last(r).pos_error.norm()).collect());
    let ey = median(results.iter().map(|r| last(r).yaw_error.abs()).collect());
    let secs = start.elapsed().as_secs_f64();
    check(
        ep < 0.05 && ey < 0.05 && secs < 120.0,
        format!("median |e_p(10 s)| {ep:.2e} m, median |e_yaw(10 s)| {ey:.2e} rad, 200 seeds in {secs:.1} s"),
    )
}

fn tuning_ordering(tuned: &Tuned) -> Outcome {
    let task = TaskConfig::new(TaskKind::Lissajous, Morphology::Quadrotor);
    let src = ReferenceSource::default();
    let t = avg_reward(&run(&task, &GcAgent::new(tuned.lissajous, FeedforwardMode::Ff, src, &task), 200));
    let m = avg_reward(&run(&task, &GcAgent::new(GcGains::manual(), FeedforwardMode::Ff, src, &task), 200));
    check(t >= m, format!("Lissajous avg_reward tuned {t:.3} vs manual {m:.3}"))
}

fn feedforward_ordering(tuned: &Tuned) -> Outcome {
    let src = ReferenceSource::default();
    let liss = TaskConfig::new(TaskKind::Lissajous, Morphology::Quadrotor);
    let ff = avg_reward(&run(&liss, &GcAgent::new(tuned.lissajous, FeedforwardMode::Ff, src, &liss), 200));
    let none = avg_reward(&run(&liss, &GcAgent::new(tuned.lissajous, FeedforwardMode::None, src, &liss), 200));
    let hover = TaskConfig::new(TaskKind::Hover, Morphology::Quadrotor);
    let a = run(&hover, &GcAgent::new(tuned.hover, FeedforwardMode::Ff, src, &hover), 50);
    let b = run(&hover, &GcAgent::new(tuned.hover, FeedforwardMode::None, src, &hover), 50);
    let identical = a.iter().zip(&b).all(|(x, y)| x.trace == y.trace);
    check(ff > none && identical, format!("Lissajous FF {ff:.3} vs None {none:.3}; Hover traces identical: {identical}"))
}

fn common_random_numbers(tuned: &Tuned) -> Outcome {
    let mut equal = true;
    let mut compared = 0;
    for kind in [TaskKind::Hover, TaskKind::Lissajous] {
        for morph in [Morphology::Quadrotor, Morphology::AerialManipulator] {
            let mut task = TaskConfig::new(kind, morph);
            task.dr_pct = 0.2;
            let a = run(&task, &GcAgent::new(tuned.hover, FeedforwardMode::Ff, ReferenceSource::default(), &task), 30);
            let b = run(&task, &RandomAgent::new(&task), 30);
            equal &= a.iter().map(|r| &r.draw_hash).eq(b.iter().map(|r| &r.draw_hash));
            compared += a.len();
        }
    }
    let task = TaskConfig::new(TaskKind::BallCatch, Morphology::AerialManipulator);
    let cfg = BallCatchConfig { trials: 20, ..Default::default() };
    let manual = GcAgent::new(GcGains::manual(), FeedforwardMode::Ff, ReferenceSource::default(), &task);
    let other = GcAgent::new(tuned.hover, FeedforwardMode::None, ReferenceSource::default(), &task);
    let (_, ta) = catch::run_ball_catch(&task, &cfg, &manual).expect("catch");
    let (_, tb) = catch::run_ball_catch(&task, &cfg, &other).expect("catch");
    equal &= ta.iter().map(|t| (&t.draw_hash, t.seed)).eq(tb.iter().map(|t| (&t.draw_hash, t.seed)));
    compared += ta.len();
    check(equal, format!("{compared} paired episodes/trials with identical draw hashes: {equal}"))
}

fn brute_force_gae(r: &[f64], v: &[f64], d: &[bool], gamma: f64, lambda: f64) -> Vec<f64> {
    (0..r.len())
        .map(|t| {
            let mut total = 0.0;
            for k in t..r.len() {
                if (t..k).any(|j| d[j]) {
                    break;
                }
                let cont = if d[k] { 0.0 } else { 1.0 };
                total += (gamma * lambda).powi((k - t) as i32) * (r[k] + gamma * v[k + 1] * cont - v[k]);
            }
            total
        })
        .collect()
}

fn ppo_machinery() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut gae_err = 0.0f64;
    for _ in 0..500 {
        let n = rng.random_range(1..100);
        let r: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
        let v: Vec<f64> = (0..=n).map(|_| rng.random_range(-5.0..5.0)).collect();
        let d: Vec<bool> = (0..n).map(|_| rng.random_bool(0.1)).collect();
        let (gamma, lambda) = (rng.random_range(0.5..=1.0), rng.random_range(0.0..=1.0));
        let (adv, _) = gae(&r, &v, &d, gamma, lambda).expect("gae");
        let oracle = brute_force_gae(&r, &v, &d, gamma, lambda);
        gae_err = adv.iter().zip(&oracle).fold(gae_err, |m, (a, b)| m.max((a - b).abs()));
    }

    // scalar action with mean theta0 * x and log std theta1
    let n = 128;
    let x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let a: Vec<f64> = (0..n).map(|_| rng.random_range(-1.5..1.5)).collect();
    let adv: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
    let old: Vec<f64> = x.iter().zip(&a).map(|(xi, ai)| gaussian_log_prob(&[*ai], &[0.5 * xi], &[-0.2])).collect();
    let eval = |th: [f64; 2]| {
        let mean: Vec<f64> = x.iter().map(|xi| th[0] * xi).collect();
        let s = surrogate(&mean, &[th[1]], &a, &old, &adv, 0.2, 0.01);
        (s.loss, [s.d_mean.iter().zip(&x).map(|(g, xi)| g * xi).sum::<f64>(), s.d_log_std[0]], s.clip_fraction)
    };
    let theta = [0.8, -0.35];
    let (_, grad, clip) = eval(theta);
    let h = 1e-6;
    let mut fd_err = 0.0f64;
    for i in 0..2 {
        let (mut up, mut dn) = (theta, theta);
        up[i] += h;
        dn[i] -= h;
        let numeric = (eval(up).0 - eval(dn).0) / (2.0 * h);
        fd_err = fd_err.max((grad[i] - numeric).abs() / numeric.abs().max(1e-12));
    }
    check(
        gae_err < 1e-10 && fd_err < 1e-5,
        format!("GAE max error {gae_err:.1e} over 500 rollouts; surrogate gradient rel. error {fd_err:.1e} ({:.0}% clipped)", 100.0 * clip),
    )
}

fn rl_training() -> Outcome {
    let start = Instant::now();
    let task = TaskConfig::new(TaskKind::Hover, Morphology::Quadrotor);
    let tc = TrainConfig::default();
    let out = ppo::train(&task, &tc, None, &mut |row, _| {
        if let Some(v) = row.eval_avg_reward {
            eprintln!("    update {:3}  validation avg_reward {v:.3}", row.update + 1);
        }
    })
    .expect("training");
    let train_secs = start.elapsed().as_secs_f64();
    let trained = avg_reward(&run(&task, &PolicyAgent::new(out.best, &task, tc.use_horizon), 100));
    let random = avg_reward(&run(&task, &RandomAgent::new(&task), 100));
    let (g, gr) = (gap(trained), gap(random));
    check(
        g < 0.15 && gr > 0.8 && train_secs <= 3600.0,
        format!(
            "{}x{} updates in {:.1} min: trained gap {g:.3} (avg {trained:.3}), random gap {gr:.3} (avg {random:.3}), margin {:.2}",
            tc.n_envs,
            tc.n_updates,
            train_secs / 60.0,
            trained - random
        ),
    )
}

fn reward_ceiling() -> Outcome {
    let mut worst = 0.0f64;
    let mut gaps = 0.0f64;
    for kind in [TaskKind::Hover, TaskKind::Lissajous] {
        for morph in [Morphology::Quadrotor, Morphology::AerialManipulator] {
            let task = TaskConfig::new(kind, morph);
            for r in run(&task, &TeleportOracle, 25) {
                worst = worst.max((r.summary.avg_reward - MAX_REWARD).abs());
                gaps = gaps.max(gap(r.summary.avg_reward).abs());
            }
        }
    }
    check(worst < 1e-9 && gaps < 1e-9, format!("max |avg_reward - 15| {worst:.1e}, max |gap| {gaps:.1e} over 100 episodes"))
}

fn ball_catch() -> Outcome {
    let task = TaskConfig::new(TaskKind::BallCatch, Morphology::AerialManipulator);
    let cfg = BallCatchConfig::default();
    let gc = GcAgent::new(GcGains::manual(), FeedforwardMode::Ff, ReferenceSource::default(), &task);
    let (levels, _) = catch::run_ball_catch(&task, &cfg, &gc).expect("ball catch");
    let monotone = levels.windows(2).all(|w| w[1].success_rate >= w[0].success_rate);
    let rates: Vec<String> = levels.iter().map(|l| format!("{:.2}s {:.2}", l.time_to_catch, l.success_rate)).collect();
    check(monotone && levels.len() == 4, format!("{} trials per level: {}", cfg.trials, rates.join(", ")))
}

fn fidelity_equivalence() -> Outcome {
    let mut p = VehicleParams::nominal_quadrotor();
    p.tau_m = 1e-4;
    let mut worst = 0.0f64;
    let mut unsaturated = true;

    // open loop on the plant
    let start = RigidBodyState::at_rest(Vec3::new(0.1, -0.2, 1.0), 0.3);
    let mut simple = Plant::new(p.clone(), DynamicsFidelity::Simple, start.clone());
    let mut real = Plant::new(p.clone(), DynamicsFidelity::Realistic, start);
    for k in 0..100 {
        let t = k as f64 * 0.01;
        let cmd = Wrench::new(p.weight() * (1.0 + 0.1 * (3.0 * t).sin()), Vec3::new(0.01 * t.cos(), -0.008, 0.002 * t));
        simple.step(&cmd, 0.01).expect("simple step");
        real.step(&cmd, 0.01).expect("realistic step");
        worst = worst.max((simple.state.position - real.state.position).amax());
        worst = worst.max((simple.state.rotation - real.state.rotation).amax());
    }

    // closed loop under the GC from a small offset (no saturation)
    for kind in [TaskKind::Hover, TaskKind::Lissajous] {
        let mut traces = Vec::new();
        for fidelity in [DynamicsFidelity::Simple, DynamicsFidelity::Realistic] {
            let mut task = TaskConfig::new(kind, Morphology::Quadrotor);
            task.fidelity = fidelity;
            task.episode_seconds = 1.0;
            task.vehicle.tau_m = 1e-4;
            let mut draw = EpisodeDraw::sample(&task, 7).expect("draw");
            for c in &mut draw.lissajous.channels {
                c.amplitude *= 0.05;
            }
            let goal = trajectory::sample(&draw.lissajous, 0.0);
            // small offsets keep every rotor inside its range
            let near = InitRanges { position: 0.05, velocity: 0.05, yaw: 0.05, angular_velocity: 0.05 };
            draw.initial = trajectory::sample_initial_state(&near, &goal, &mut ChaCha8Rng::seed_from_u64(8));
            draw.params.tau_m = 1e-4;
            let params = draw.params.clone();
            let mut gc = GcAgent::new(GcGains::manual(), FeedforwardMode::Ff, ReferenceSource::default(), &task);
            let trace = harness::run_prepared(Episode::from_draw(&task, draw), &mut gc).expect("episode").trace;
            let w2 = params.omega_max * params.omega_max;
            for r in &trace {
                let sq = sim::allocate_squared(&r.wrench, &params).expect("allocation");
                unsaturated &= sq.iter().all(|&s| s > 0.0 && s < w2);
            }
            traces.push(trace);
        }
        for (a, b) in traces[0].iter().zip(&traces[1]) {
            worst = worst.max((a.pos_error - b.pos_error).amax()).max((a.yaw_error - b.yaw_error).abs());
        }
    }
    check(worst < 1e-6 && unsaturated, format!("max trace difference {worst:.1e} over 1 s (open and closed loop), rotors unsaturated: {unsaturated}"))
}

fn main() {
    let total = Instant::now();
    let mut results: Vec<(&str, Outcome, Duration)> = Vec::new();
    let mut record = |name: &'static str, f: &mut dyn FnMut() -> Outcome| {
        let t = Instant::now();
        let o = f();
        let d = t.elapsed();
        println!("{} {name}: {} [{:.1} s]", if o.pass { "PASS" } else { "FAIL" }, o.detail, d.as_secs_f64());
        results.push((name, o, d));
    };

    record("trajectory derivatives vs finite differences", &mut trajectory_oracle);
    record("rotation error algebra", &mut rotation_algebra);
    record("allocation round trip", &mut allocation_round_trip);
    record("motor lag time constant", &mut motor_lag);

    let t = Instant::now();
    let tuned = Tuned { hover: tune(TaskKind::Hover), lissajous: tune(TaskKind::Lissajous) };
    println!("     (GC gains tuned on Hover and Lissajous in {:.1} s)", t.elapsed().as_secs_f64());

    record("GC hover convergence", &mut || hover_convergence(&tuned));
    record("tuned GC beats manual GC on Lissajous", &mut || tuning_ordering(&tuned));
    record("feedforward ordering", &mut || feedforward_ordering(&tuned));
    record("common random numbers", &mut || common_random_numbers(&tuned));
    record("PPO machinery", &mut ppo_machinery);
    record("reward ceiling", &mut reward_ceiling);
    record("ball-catch monotonicity", &mut ball_catch);
    record("fidelity equivalence", &mut fidelity_equivalence);
    record("desk-scale RL training on Hover", &mut rl_training);

    let passed = results.iter().filter(|r| r.1.pass).count();
    println!("acceptance: {passed}/{} passed in {:.1} min", results.len(), total.elapsed().as_secs_f64() / 60.0);
    if passed < results.len() && std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1") {
        std::process::exit(1);
    }
}
