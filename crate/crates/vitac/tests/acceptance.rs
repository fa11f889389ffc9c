//! Acceptance suite. Each criterion prints one `criterion N: PASS|FAIL`
//! line to stderr (uncaptured) and then asserts. Criteria run one at a time
//! so the wall-clock budgets are meaningful.

use std::io::Write;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use vitac::config::{sha256_hex, Config, TouchMode};
use vitac::dataset::encode_sequence;
use vitac::pipeline::{self, AblationAxis};
use vitac::report;
use vitac_core::collect::{episode_seed, rollout};
use vitac_core::expert::scripted_expert;
use vitac_core::metrics::{psnr, ssim, SsimParams};
use vitac_core::nn::gradcheck::{operator_suite, random_tensor, GradCheck};
use vitac_core::nn::{AdamConfig, Graph, ParamStore, Tensor};
use vitac_core::rng;
use vitac_core::tactile::{ray_entry, render_contact, render_depth, SensorGeometry, SensorPose, SensorScene};
use vitac_core::vtcon::{
    bidirectional, observation_gradchecks, Agent, AgentConfig, Batch, ContrastiveMode, Modality, ObsTensors, PROPRIO_DIM,
};
use vitac_core::vtgen::{composed_gradcheck, perceptual_loss, PerceptualExtractor};
use vitac_core::world::physics::kinetic_energy;
use vitac_core::world::{physics_step, Body, EpisodeConfig, ObjectShape, PhysicsParams, Pose2, PushEnv, ShapeKind, Twist, Workspace};

static SERIAL: Mutex<()> = Mutex::new(());

fn serial() -> std::sync::MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

fn verdict(n: u32, ok: bool, detail: &str) {
    let _ = writeln!(std::io::stderr(), "criterion {n}: {} {detail}", if ok { "PASS" } else { "FAIL" });
}

// ---------------------------------------------------------------- 1

const RENDER_SCENES: usize = 1_000;
const RENDER_SUBSAMPLES: usize = 10;
const RENDER_BUDGET: Duration = Duration::from_secs(60);

/// Ray marching with a point-in-shape test, refined by bisection. Shares no
/// code with the analytic intersections.
fn march(shape: &ShapeKind, o: (f64, f64), d: (f64, f64), max_t: f64) -> f64 {
    let inside = |t: f64| shape.contains(o.0 + t * d.0, o.1 + t * d.1);
    if inside(0.0) {
        return 0.0;
    }
    let steps = 1_000;
    let h = max_t / steps as f64;
    for i in 1..=steps {
        let t = i as f64 * h;
        if inside(t) {
            let (mut lo, mut hi) = (t - h, t);
            for _ in 0..60 {
                let mid = 0.5 * (lo + hi);
                if inside(mid) {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            return hi;
        }
    }
    max_t
}

fn random_scene(r: &mut rng::SimRng) -> SensorScene {
    let shape = match (rng::uniform(r, 0.0, 3.0)) as usize {
        0 => ShapeKind::Disc { radius: rng::uniform(r, 0.01, 0.05) },
        1 => ShapeKind::Box { half_x: rng::uniform(r, 0.01, 0.06), half_y: rng::uniform(r, 0.01, 0.06) },
        _ => {
            let inner = rng::uniform(r, 0.005, 0.03);
            ShapeKind::Annulus { inner, outer: inner + rng::uniform(r, 0.005, 0.03) }
        }
    };
    let sensor = SensorPose { x: rng::uniform(r, -0.2, 0.2), y: rng::uniform(r, -0.2, 0.2), heading: rng::uniform(r, -3.0, 3.0) };
    let theta = rng::uniform(r, -3.0, 3.0);
    let lateral = rng::uniform(r, -0.02, 0.02);
    let pen = rng::uniform(r, -0.004, 0.008);
    // Back the object off so its boundary reaches `pen` past the face.
    let (nx, ny) = sensor.normal();
    let (tx, ty) = sensor.lateral();
    let dir = Pose2::new(0.0, 0.0, theta).rotate_to_local(nx, ny);
    let entry = ray_entry(&shape, (-dir.0, -dir.1), dir).unwrap_or(0.0);
    let back = 1.0 - entry - pen;
    let object = Pose2::new(sensor.x + back * nx + lateral * tx, sensor.y + back * ny + lateral * ty, theta);
    SensorScene { sensor, shape, object }
}

#[test]
fn criterion_1_tactile_render_matches_ray_casting_oracle() {
    let _g = serial();
    let t0 = Instant::now();
    let g = SensorGeometry::default();
    let tol = g.standoff / 4_000.0;
    let mut r = rng::seeded(0xacc1);
    let (mut worst, mut bad_pixels, mut out_of_range) = (0.0f64, 0usize, 0usize);
    for _ in 0..RENDER_SCENES {
        let scene = random_scene(&mut r);
        let depth = render_depth(&scene, &g).unwrap();
        let image = render_contact(&scene, &g).unwrap();
        out_of_range += image.values.iter().filter(|v| !(0.0..=1.0).contains(*v)).count();
        let s = scene.sensor;
        let (nx, ny) = s.normal();
        let (tx, ty) = s.lateral();
        let cam = (s.x - g.standoff * nx, s.y - g.standoff * ny);
        let dir = scene.object.rotate_to_local(nx, ny);
        // Band rows all see the same cross-section, so the oracle runs once
        // per column; rows outside the band must read the reference.
        let footprint: Vec<(f64, f64)> = (0..g.cols)
            .map(|c| {
                let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
                for k in 0..=RENDER_SUBSAMPLES {
                    let u = g.u(c) + (k as f64 / RENDER_SUBSAMPLES as f64 - 0.5) * g.pixel_width();
                    let o = scene.object.to_local(cam.0 + u * tx, cam.1 + u * ty);
                    let t = march(&scene.shape, o, dir, g.standoff);
                    lo = lo.min(t);
                    hi = hi.max(t);
                }
                (lo, hi)
            })
            .collect();
        for row in 0..g.rows {
            for (c, &(lo, hi)) in footprint.iter().enumerate() {
                let (lo, hi) = if g.row_in_band(row) { (lo, hi) } else { (g.standoff, g.standoff) };
                let d = depth.get(row, c);
                let err = (lo - d).max(d - hi).max(0.0);
                worst = worst.max(err);
                bad_pixels += (err > tol) as usize;
            }
        }
    }
    let elapsed = t0.elapsed();
    let ok = bad_pixels == 0 && out_of_range == 0 && elapsed < RENDER_BUDGET;
    verdict(
        1,
        ok,
        &format!(
            "{RENDER_SCENES} scenes, worst excess over footprint {worst:.2e} m (tol {tol:.1e}), {bad_pixels} bad pixels, {out_of_range} values outside [0,1], {:.1}s",
            elapsed.as_secs_f64()
        ),
    );
    assert!(ok);
}

// ---------------------------------------------------------------- 2

const GRAD_TOL: f64 = 1e-4;
const GRAD_BUDGET: Duration = Duration::from_secs(120);

#[test]
fn criterion_2_gradient_suite() {
    let _g = serial();
    let t0 = Instant::now();
    let mut all: Vec<GradCheck> = operator_suite(2);
    all.push(composed_gradcheck(2));
    all.extend(observation_gradchecks(2));
    let elapsed = t0.elapsed();
    let worst = all.iter().map(|r| r.max_rel_error).fold(0.0, f64::max);
    let failed: Vec<&str> = all.iter().filter(|r| !(r.max_rel_error < GRAD_TOL && r.checked > 0)).map(|r| r.name.as_str()).collect();
    let ok = failed.is_empty() && elapsed < GRAD_BUDGET;
    verdict(
        2,
        ok,
        &format!("{} checks in f64, worst relative error {worst:.2e} (tol {GRAD_TOL:.0e}), failed {failed:?}, {:.1}s", all.len(), elapsed.as_secs_f64()),
    );
    assert!(ok);
}

// ---------------------------------------------------------------- 3

const CLOSED_FORM_TOL: f64 = 1e-6;

#[test]
fn criterion_3_loss_closed_forms() {
    let _g = serial();
    let mut notes = Vec::new();
    let mut ok = true;
    for b in [2usize, 4, 64] {
        let row: Vec<f64> = (0..8).map(|i| (i as f64 * 0.7 + 0.2).cos()).collect();
        let n = row.iter().map(|x| x * x).sum::<f64>().sqrt();
        let flat: Vec<f64> = (0..b).flat_map(|_| row.iter().map(|x| x / n)).collect();
        let t = Tensor::<f64>::from_f64(&[b, 8], &flat);
        let mut g = Graph::<f64>::new();
        let (fv, fc, mv, mc) = (g.input(t.clone()), g.input(t.clone()), g.input(t.clone()), g.input(t));
        let (_, _, con) = bidirectional(&mut g, fv, fc, mv, mc, 0.1, ContrastiveMode::Verbatim).unwrap();
        let got = g.data(con)[0];
        let want = 2.0 * ((b - 1) as f64).ln();
        let err = (got - want).abs();
        ok &= err < CLOSED_FORM_TOL;
        notes.push(format!("InfoNCE B={b} err {err:.1e}"));
    }

    let ext = PerceptualExtractor::<f64>::new(0);
    let x = random_tensor(&mut rng::seeded(3), &[2, 1, 32, 32], 0.0, 1.0);
    let mut g = Graph::<f64>::new();
    let (a, b) = (g.input(x.clone()), g.input(x));
    let l = perceptual_loss(&mut g, &ext, a, b, 1.0);
    let perceptual = g.data(l)[0];
    ok &= perceptual == 0.0;
    notes.push(format!("perceptual(x,x) {perceptual}"));

    let mut r = rng::seeded(4);
    let img: Vec<f32> = (0..64 * 64).map(|_| rng::uniform(&mut r, 0.0, 0.9) as f32).collect();
    let shifted: Vec<f32> = img.iter().map(|v| v + 0.1).collect();
    let p = psnr(&img, &shifted, 1.0).unwrap();
    ok &= (p - 20.0).abs() < CLOSED_FORM_TOL;
    notes.push(format!("PSNR(+0.1) {p:.9} dB"));

    let s = ssim(&img, &img, 64, 64, &SsimParams::default()).unwrap();
    ok &= (s - 1.0).abs() < CLOSED_FORM_TOL;
    notes.push(format!("SSIM(x,x) {s}"));

    verdict(3, ok, &notes.join(", "));
    assert!(ok);
}

// ---------------------------------------------------------------- 4

const MOMENTUM_RATIO_TOL: f64 = 1e-6;
const MOMENTUM_UPDATES: usize = 100;

fn small_agent() -> AgentConfig {
    AgentConfig {
        image_size: 32,
        tactile_size: 16,
        hidden: 32,
        proprio_hidden: 8,
        proprio_out: 8,
        batch_size: 8,
        buffer_capacity: 64,
        ..AgentConfig::default()
    }
}

fn random_batch(cfg: &AgentConfig, seed: u64) -> Batch {
    let mut r = rng::seeded(seed);
    let b = cfg.batch_size;
    let (c, h) = (cfg.input_channels(), cfg.image_size);
    let obs = |r: &mut rng::SimRng| {
        let mut img = || Tensor::new(&[b, c, h, h], (0..b * c * h * h).map(|_| rng::uniform(r, 0.0, 1.0) as f32).collect());
        let visual = img();
        let tactile = Some(img());
        let proprio = Tensor::new(&[b, PROPRIO_DIM], (0..b * PROPRIO_DIM).map(|_| rng::uniform(r, -1.0, 1.0) as f32).collect());
        ObsTensors { visual, tactile, proprio }
    };
    let (o, next) = (obs(&mut r), obs(&mut r));
    Batch {
        obs: o,
        next,
        action: Tensor::new(&[b, 2], (0..2 * b).map(|_| rng::uniform(&mut r, -1.0, 1.0) as f32).collect()),
        reward: (0..b).map(|_| rng::uniform(&mut r, -1.0, 0.0) as f32).collect(),
        done: (0..b).map(|i| (i % 4 == 0) as u8 as f32).collect(),
    }
}

fn dist(a: &ParamStore<f32>, b: &ParamStore<f32>) -> f64 {
    a.flat_values().iter().zip(b.flat_values()).map(|(x, y)| ((x - y) as f64).powi(2)).sum::<f64>().sqrt()
}

#[test]
fn criterion_4_momentum_contract() {
    let _g = serial();
    // Momentum parameters never receive gradients during updates.
    let cfg = small_agent();
    let mut agent = Agent::new(cfg.clone(), 1).unwrap();
    let batch = random_batch(&cfg, 2);
    let mut clean = true;
    for _ in 0..MOMENTUM_UPDATES {
        agent.update_on(&batch).unwrap();
        clean &= agent.params.mom_v.grads_all_zero() && agent.params.mom_c.grads_all_zero() && agent.params.mom_v.adam_steps() == 0;
    }

    // Contraction with a frozen online encoder: ratio per step.
    let cfg = AgentConfig { adam: AdamConfig::with_lr(1e-2), ..small_agent() };
    let mut agent = Agent::new(cfg.clone(), 3).unwrap();
    for k in 0..5 {
        agent.update_on(&random_batch(&cfg, 10 + k)).unwrap();
    }
    let mut ratios = Vec::new();
    for _ in 0..3 {
        let before = dist(&agent.params.mom_v, &agent.params.enc_v);
        agent.momentum_update().unwrap();
        ratios.push(dist(&agent.params.mom_v, &agent.params.enc_v) / before);
    }
    let worst = ratios.iter().map(|r| (r - 0.99).abs()).fold(0.0, f64::max);

    agent.cfg.momentum = 0.0;
    agent.momentum_update().unwrap();
    let copies = agent.params.mom_v.values_equal(&agent.params.enc_v) && agent.params.mom_c.values_equal(&agent.params.enc_c);

    let ok = clean && worst < MOMENTUM_RATIO_TOL && copies;
    verdict(
        4,
        ok,
        &format!("no momentum gradients over {MOMENTUM_UPDATES} updates: {clean}, ratios {ratios:.7?} (tol {MOMENTUM_RATIO_TOL:.0e}), eta=0 copies: {copies}"),
    );
    assert!(ok);
}

// ---------------------------------------------------------------- 5

const ROTATION_TOL: f64 = 1e-9;

#[test]
fn criterion_5_physics_signatures() {
    let _g = serial();
    let cfg = EpisodeConfig::default();
    let p = PhysicsParams::default();
    let ws = Workspace::default();
    let step = (cfg.action_max / cfg.substeps as f64, 0.0);

    // Head-on push through the center of a box, 350 control steps.
    let square = ObjectShape::new(ShapeKind::Box { half_x: 0.04, half_y: 0.04 }, 0.3, 20.0).unwrap();
    let mut b = Body { pose: Pose2::new(-0.1, 0.0, 0.0), twist: Twist::default(), tcp: (-0.16, 0.0) };
    let (mut max_theta, mut touched) = (0.0f64, false);
    for _ in 0..cfg.max_episode_steps * cfg.substeps {
        touched |= physics_step(&mut b, &square, step, cfg.dt, &p, &ws).is_some();
        max_theta = max_theta.max(b.pose.theta.abs());
    }
    let centered = touched && max_theta < ROTATION_TOL;

    // Push along +y, 2 cm right of the center of the same box.
    let mut b = Body { pose: Pose2::default(), twist: Twist::default(), tcp: (0.02, -0.04 - p.pusher_radius + 1e-4) };
    let contact = physics_step(&mut b, &square, (0.0, step.0), cfg.dt, &p, &ws);
    let omega = b.twist.omega;
    let offset = contact.is_some() && omega > 0.0;

    // Free motion loses kinetic energy monotonically.
    let mut r = rng::seeded(5);
    let mut monotone = true;
    for k in 0..30 {
        let kind = [ShapeKind::Disc { radius: 0.04 }, ShapeKind::Box { half_x: 0.05, half_y: 0.02 }, ShapeKind::Annulus { inner: 0.02, outer: 0.04 }][k % 3];
        let shape = ObjectShape::new(kind, 0.3, rng::uniform(&mut r, 0.0, 40.0)).unwrap();
        let twist = Twist { vx: rng::uniform(&mut r, -0.5, 0.5), vy: rng::uniform(&mut r, -0.5, 0.5), omega: rng::uniform(&mut r, -5.0, 5.0) };
        let mut body = Body { pose: Pose2::default(), twist, tcp: (0.4, -0.3) };
        let mut e = kinetic_energy(&shape, &body.twist);
        for _ in 0..500 {
            physics_step(&mut body, &shape, (0.0, 0.0), cfg.dt, &p, &ws);
            let next = kinetic_energy(&shape, &body.twist);
            monotone &= next <= e;
            e = next;
        }
    }

    // Whole episodes replay bit for bit.
    let mut env = PushEnv::new(cfg.clone()).unwrap();
    let mut identical = true;
    for i in 0..3 {
        let seed = episode_seed(55, i);
        let a = rollout(&mut env, seed, |s, _| scripted_expert(s, &cfg)).unwrap();
        let b = rollout(&mut env, seed, |s, _| scripted_expert(s, &cfg)).unwrap();
        identical &= encode_sequence(&a) == encode_sequence(&b) && a == b;
    }

    let ok = centered && offset && monotone && identical;
    verdict(
        5,
        ok,
        &format!(
            "centered push max |theta| {max_theta:.1e} rad (tol {ROTATION_TOL:.0e}), offset push omega {omega:.3e} rad/s, energy non-increasing: {monotone}, replay identical: {identical}"
        ),
    );
    assert!(ok);
}

// ---------------------------------------------------------------- 6

const EXPERT_EPISODES: u64 = 50;
const EXPERT_MIN_SUCCESS: f64 = 0.90;

#[test]
fn criterion_6_scripted_expert_gate() {
    let _g = serial();
    let cfg = EpisodeConfig::default();
    assert_eq!(cfg.trajectory.gain, 0.0, "straight trajectories");
    assert_eq!(cfg.success_threshold, 0.025);
    let mut env = PushEnv::new(cfg.clone()).unwrap();
    let (mut wins, mut early) = (0, true);
    for i in 0..EXPERT_EPISODES {
        let s = rollout(&mut env, episode_seed(6, i), |st, _| scripted_expert(st, &cfg)).unwrap();
        if s.success {
            wins += 1;
            early &= s.steps() < cfg.max_episode_steps;
        }
    }
    let rate = wins as f64 / EXPERT_EPISODES as f64;
    let ok = rate >= EXPERT_MIN_SUCCESS && early;
    verdict(6, ok, &format!("{wins}/{EXPERT_EPISODES} successes ({:.0}%, need {:.0}%), successes end before the step cap: {early}", rate * 100.0, EXPERT_MIN_SUCCESS * 100.0));
    assert!(ok);
}

// ---------------------------------------------------------------- 7

const GEN_MIN_SSIM: f64 = 0.80;
const GEN_MAX_NO_CONTACT: f64 = 0.05;
/// Held-out data comes from the box object.
const GEN_OBJECT: ShapeKind = ShapeKind::Box { half_x: 0.04, half_y: 0.03 };
const GEN_BUDGET: Duration = Duration::from_secs(20 * 60);

#[test]
fn criterion_7_vt_gen_learning() {
    let _g = serial();
    let mut cfg = Config::default();
    cfg.world.object = GEN_OBJECT;
    assert_eq!((cfg.collect.sequences, cfg.world.render.height, cfg.gen_train.epochs), (100, 64, 30));
    let t0 = Instant::now();
    let data = pipeline::collect(&cfg).unwrap();
    let (_, rep) = pipeline::train_gen(&cfg, &data, |_| {}).unwrap();
    let elapsed = t0.elapsed();
    let q = rep.test;
    let no_contact = q.no_contact_mean.unwrap_or(f64::NAN);
    let ok = q.ssim >= GEN_MIN_SSIM && no_contact < GEN_MAX_NO_CONTACT && elapsed < GEN_BUDGET;
    verdict(
        7,
        ok,
        &format!(
            "held-out SSIM {:.4} (need >= {GEN_MIN_SSIM}), PSNR {:.2} dB, no-contact mean {no_contact:.4} over {} samples (need < {GEN_MAX_NO_CONTACT}), {:.0}s (budget {}s)",
            q.ssim,
            q.psnr,
            q.no_contact_samples,
            elapsed.as_secs_f64(),
            GEN_BUDGET.as_secs()
        ),
    );
    assert!(ok);
}

// ---------------------------------------------------------------- 8

const E2E_MIN_SUCCESS: f64 = 0.70;
const E2E_MIN_MARGIN: f64 = 0.15;
const E2E_EPISODES: usize = 50;

#[test]
#[ignore = "long run: two 150k-step policy trainings"]
fn criterion_8_end_to_end_generated_touch() {
    let _g = serial();
    let cfg = Config { policy: vitac::config::PolicyConfig { touch: TouchMode::Generated }, ..Config::default() };
    assert_eq!(cfg.train.steps, 150_000);
    let data = pipeline::collect(&cfg).unwrap();
    let (trainer, _) = pipeline::train_gen(&cfg, &data, |_| {}).unwrap();
    let hash = sha256_hex(&pipeline::generator_checkpoint(&trainer.store).encode());
    let gen = Some((&trainer.net, &trainer.store));

    let (mut ours, _) = pipeline::train_policy(&cfg, &cfg.agent, cfg.seed, gen, |_| {}).unwrap();
    let frozen = sha256_hex(&pipeline::generator_checkpoint(&trainer.store).encode()) == hash;
    let ours = pipeline::evaluate_agent(&cfg, &mut ours, gen, E2E_EPISODES, cfg.eval.threshold).unwrap();

    let base_cfg = AgentConfig { modality: Modality::VisualOnly, ..cfg.agent.clone() };
    let (mut base, _) = pipeline::train_policy(&cfg, &base_cfg, cfg.seed, None, |_| {}).unwrap();
    let base = pipeline::evaluate_agent(&cfg, &mut base, None, E2E_EPISODES, cfg.eval.threshold).unwrap();

    let (a, b) = (ours.success_rate().unwrap_or(0.0), base.success_rate().unwrap_or(0.0));
    let ok = frozen && a >= E2E_MIN_SUCCESS && a - b >= E2E_MIN_MARGIN;
    verdict(
        8,
        ok,
        &format!(
            "generated touch {:.0}% (need >= {:.0}%), visual-only {:.0}%, margin {:.0} pp (need >= {:.0}), generator unchanged: {frozen}",
            a * 100.0,
            E2E_MIN_SUCCESS * 100.0,
            b * 100.0,
            (a - b) * 100.0,
            E2E_MIN_MARGIN * 100.0
        ),
    );
    let _ = writeln!(
        std::io::stderr(),
        "{}",
        report::table("End-to-end", cfg.eval.threshold, &[("ViTacGen".into(), ours.summary), ("Visual only".into(), base.summary)])
    );
    assert!(ok);
}

// ---------------------------------------------------------------- 9

/// Short protocol run: the full 150k-step budget is the CLI's job.
const ABLATION_STEPS: usize = 1_100;
const ABLATION_EPISODES: usize = 3;
const ABLATION_SEEDS: [u64; 2] = [0, 1];

#[test]
fn criterion_9_fusion_ablation_protocol() {
    let _g = serial();
    let mut cfg = Config::default();
    cfg.policy.touch = TouchMode::GroundTruth;
    cfg.ablation.steps = ABLATION_STEPS;
    cfg.ablation.episodes = ABLATION_EPISODES;
    cfg.ablation.seeds = ABLATION_SEEDS.to_vec();
    assert_eq!(cfg.ablation.threshold, 0.04);
    let rows = pipeline::ablate(&cfg, AblationAxis::Fusion, None, |_, _, _| {}).unwrap();
    let table = report::ablation_table("Fusion ablation", cfg.ablation.threshold, &rows);

    let labels: Vec<&str> = rows.iter().step_by(ABLATION_SEEDS.len()).map(|r| r.variant.as_str()).collect();
    let seeds_of = |v: &str| -> Vec<u64> { rows.iter().filter(|r| r.variant == v).flat_map(|r| r.report.rows.iter().map(|e| e.seed)).collect() };
    let same_seeds = labels.iter().all(|v| seeds_of(v) == seeds_of(labels[0]));
    let train_seeds = labels.iter().all(|v| rows.iter().filter(|r| r.variant == *v).map(|r| r.seed).eq(ABLATION_SEEDS));
    let pooled = table.split("Per seed:").next().unwrap_or("");
    let lines = ["| Addition |", "| Concatenation |", "| Attention |"].iter().all(|l| pooled.lines().filter(|x| x.starts_with(l)).count() == 1);
    let ok = labels == ["Addition", "Concatenation", "Attention"]
        && rows.len() == 3 * ABLATION_SEEDS.len()
        && same_seeds
        && train_seeds
        && lines
        && table.contains("4.0 cm");
    verdict(
        9,
        ok,
        &format!("{} rows for {labels:?}, identical eval seeds: {same_seeds}, identical training seeds: {train_seeds} ({ABLATION_STEPS} steps per run)", rows.len()),
    );
    let _ = writeln!(std::io::stderr(), "{table}");
    assert!(ok);
}
