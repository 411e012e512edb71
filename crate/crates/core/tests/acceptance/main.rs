//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails. Pass substrings as arguments to run a subset,
//! e.g. `cargo test -p herd-core --test acceptance -- spfa desk`.
//!
//! Trained models are cached under `target/herd-acceptance`; the first run
//! trains them (about four hours on one core).

mod artifacts;
mod oracles;

use artifacts::DiffusionRecipe;
use herd_core::demo::{augment, synthesize_demos};
use herd_core::diffusion::{sample_ddim, Denoiser, DiffusionPolicy, UnetConfig, DDIM_STEPS};
use herd_core::envs::{EnvName, EnvSpec};
use herd_core::eval::{desk_env, evaluate, EvalMode, PolicyBank, QVariant};
use herd_core::grid::{spfa_distance, Cell, OccupancyGrid};
use herd_core::nn::layers::{film, film_backward, relu, relu_backward, silu, silu_backward};
use herd_core::nn::{Conv, ConvTranspose, GroupNorm, Linear, ParameterSet, Tensor};
use herd_core::observation::LowDimObservation;
use herd_core::postprocess::{postprocess, PostprocessConfig};
use herd_core::rl::reward::{compute_reward, ProgressMode, RewardConfig};
use herd_core::rl::{epsilon_at, QNetwork};
use herd_core::rollout::{EpisodeReport, RolloutConfig};
use herd_core::world::{reset, StepOutcome, WorldMaps};
use herd_core::Vec2;
use oracles::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::time::{Duration, Instant};

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { pass, detail: detail.into() }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn spfa_matches_dijkstra() -> Verdict {
    let t = Instant::now();
    let mut r = rng(101);
    let (mut compared, mut mismatches) = (0usize, 0usize);
    for _ in 0..50 {
        let mut g = OccupancyGrid::new(64, 64, 10.0);
        for i in 0..g.len() {
            g.set_blocked(g.cell_at(i), r.gen_bool(0.2));
        }
        let free: Vec<Cell> = (0..g.len()).map(|i| g.cell_at(i)).filter(|&c| !g.is_blocked(c)).collect();
        for _ in 0..5 {
            let src = free[r.gen_range(0..free.len())];
            let got = spfa_distance(&g, src).expect("free source");
            let want = dijkstra(&g, src);
            for (a, b) in got.values().iter().zip(&want) {
                compared += 1;
                if a != b {
                    mismatches += 1;
                }
            }
        }
    }
    let secs = t.elapsed().as_secs_f64();
    verdict(mismatches == 0 && secs < 30.0, format!("250 sources, {compared} cells, {mismatches} mismatches"))
}

fn gradient_checks() -> Verdict {
    let t = Instant::now();
    let mut r = rng(202);
    let mut worst: Vec<(&str, f64, usize)> = Vec::new();
    let mut run = |name: &'static str, f: &mut dyn FnMut(&mut ChaCha8Rng) -> f64| {
        let mut w = 0.0f64;
        for _ in 0..20 {
            w = w.max(f(&mut r));
        }
        worst.push((name, w, 20));
    };
    run("conv1d", &mut |r| {
        let (ci, co, k, s) = (r.gen_range(1..5), r.gen_range(1..5), [1, 3, 5][r.gen_range(0..3)], r.gen_range(1..3));
        let mut ps = ParameterSet::new();
        let m = Conv::new_1d(&mut ps, "m", ci, co, k, s, r.gen_range(0..=k / 2), r);
        let x = rand_tensor(&[r.gen_range(1..3), ci, r.gen_range(k..k + 8)], r);
        gradient_error(&mut ps, &x, |p, x| m.forward(p, x).unwrap(), |p, g, x, d| m.backward(p, g, x, d).unwrap(), r)
    });
    run("conv2d", &mut |r| {
        let (ci, co, k, s) = (r.gen_range(1..4), r.gen_range(1..4), [1, 3, 5][r.gen_range(0..3)], r.gen_range(1..3));
        let mut ps = ParameterSet::new();
        let m = Conv::new_2d(&mut ps, "m", ci, co, k, s, r.gen_range(0..=k / 2), r);
        let x = rand_tensor(&[r.gen_range(1..3), ci, r.gen_range(k..k + 4), r.gen_range(k..k + 4)], r);
        gradient_error(&mut ps, &x, |p, x| m.forward(p, x).unwrap(), |p, g, x, d| m.backward(p, g, x, d).unwrap(), r)
    });
    run("conv_transpose1d", &mut |r| {
        let (k, s, pad) = [(4, 2, 1), (3, 1, 1), (2, 2, 0), (5, 1, 2)][r.gen_range(0..4)];
        let (ci, co) = (r.gen_range(1..5), r.gen_range(1..5));
        let mut ps = ParameterSet::new();
        let m = ConvTranspose::new_1d(&mut ps, "m", ci, co, k, s, pad, r);
        let x = rand_tensor(&[r.gen_range(1..3), ci, r.gen_range(2..9)], r);
        gradient_error(&mut ps, &x, |p, x| m.forward(p, x).unwrap(), |p, g, x, d| m.backward(p, g, x, d).unwrap(), r)
    });
    run("conv_transpose2d", &mut |r| {
        let (k, s, pad) = [(4, 2, 1), (3, 1, 1), (2, 2, 0), (3, 2, 1)][r.gen_range(0..4)];
        let (ci, co) = (r.gen_range(1..4), r.gen_range(1..4));
        let mut ps = ParameterSet::new();
        let m = ConvTranspose::new_2d(&mut ps, "m", ci, co, k, s, pad, r);
        let x = rand_tensor(&[r.gen_range(1..3), ci, r.gen_range(2..5), r.gen_range(2..5)], r);
        gradient_error(&mut ps, &x, |p, x| m.forward(p, x).unwrap(), |p, g, x, d| m.backward(p, g, x, d).unwrap(), r)
    });
    run("linear", &mut |r| {
        let (fi, fo) = (r.gen_range(1..20), r.gen_range(1..20));
        let mut ps = ParameterSet::new();
        let m = Linear::new(&mut ps, "m", fi, fo, r);
        let x = rand_tensor(&[r.gen_range(1..5), fi], r);
        gradient_error(&mut ps, &x, |p, x| m.forward(p, x).unwrap(), |p, g, x, d| m.backward(p, g, x, d).unwrap(), r)
    });
    run("group_norm", &mut |r| {
        let groups = [1, 2, 4][r.gen_range(0..3)];
        let c = groups * r.gen_range(1..3);
        let mut ps = ParameterSet::new();
        let m = GroupNorm::new(&mut ps, "m", groups, c);
        for v in ps.values_mut() {
            v.data.iter_mut().for_each(|w| *w += r.gen_range(-0.5..0.5));
        }
        let x = rand_tensor(&[r.gen_range(1..3), c, r.gen_range(2..8)], r);
        gradient_error(&mut ps, &x, |p, x| m.forward(p, x).unwrap(), |p, g, x, d| m.backward(p, g, x, d).unwrap(), r)
    });
    run("silu", &mut |r| {
        let x = rand_tensor(&[r.gen_range(1..3), r.gen_range(1..5), r.gen_range(1..9)], r);
        gradient_error(&mut ParameterSet::new(), &x, |_, x| silu(x), |_, _, x, d| silu_backward(x, d), r)
    });
    run("relu", &mut |r| {
        let mut x = rand_tensor(&[r.gen_range(1..3), r.gen_range(1..5), r.gen_range(1..9)], r);
        // finite differences are meaningless at the kink
        x.data.iter_mut().for_each(|v| *v += 0.05f32.copysign(*v));
        gradient_error(&mut ParameterSet::new(), &x, |_, x| relu(x), |_, _, x, d| relu_backward(x, d), r)
    });
    run("film", &mut |r| {
        let (n, c, l) = (r.gen_range(1..3), r.gen_range(1..5), r.gen_range(1..7));
        let sizes = [n * c * l, n * c, n * c];
        let packed = rand_tensor(&[sizes.iter().sum()], r);
        let split = move |t: &Tensor| {
            let (a, rest) = t.data.split_at(sizes[0]);
            let (b, d) = rest.split_at(sizes[1]);
            (Tensor { shape: vec![n, c, l], data: a.to_vec() }, Tensor { shape: vec![n, c], data: b.to_vec() }, Tensor { shape: vec![n, c], data: d.to_vec() })
        };
        gradient_error(
            &mut ParameterSet::new(),
            &packed,
            |_, t| {
                let (x, s, b) = split(t);
                film(&x, &s, &b).unwrap()
            },
            |_, _, t, dy| {
                let (x, s, b) = split(t);
                let (dx, ds, db) = film_backward(&x, &s, &b, dy).unwrap();
                Tensor { shape: t.shape.clone(), data: [dx.data, ds.data, db.data].concat() }
            },
            r,
        )
    });
    let secs = t.elapsed().as_secs_f64();
    let max = worst.iter().map(|w| w.1).fold(0.0, f64::max);
    let lines: Vec<String> = worst.iter().map(|(n, e, k)| format!("{n} {e:.1e} x{k}")).collect();
    verdict(max < 1e-3 && secs < 120.0, lines.join(", "))
}

fn reward_suite() -> Verdict {
    let world = desk_env().config(0);
    let state = reset(&world, 0).unwrap();
    let outcome = |delivered: usize, deltas: &[f64], collision: bool, moved: bool, displacement: f64| StepOutcome {
        next_state: state.clone(),
        delivered_this_step: delivered,
        collision,
        robot_displacement: displacement,
        per_box_progress: deltas.to_vec(),
        moved,
    };
    let full = RewardConfig::default();
    let (alpha, beta) = (0.2, 8.0);
    let cases = [
        ("idle drive", compute_reward(&outcome(0, &[0.0, 0.0], false, true, 1.0), &full), -(alpha / beta) * 1.0),
        ("max box", compute_reward(&outcome(0, &[0.5, -0.2], false, true, 0.5), &full), alpha * 0.5 - (alpha / beta) * 0.5),
        ("delivery", compute_reward(&outcome(1, &[0.4], false, true, 0.0), &full), 1.0 + alpha * 0.4),
    ];
    let mut fails: Vec<String> = cases.iter().filter(|c| (c.1 - c.2).abs() > 1e-9).map(|c| format!("{} {} != {}", c.0, c.1, c.2)).collect();
    let stuck = compute_reward(&outcome(0, &[0.0], false, false, 0.0), &full);
    if (stuck - -0.25).abs() > 1e-9 {
        fails.push(format!("no motion {stuck}"));
    }

    // the two progress modes agree unless at least two boxes moved
    let mut r = rng(303);
    let cumulative = RewardConfig { progress_mode: ProgressMode::Cumulative, ..full };
    for _ in 0..1000 {
        let n = r.gen_range(1..6);
        let movers = r.gen_range(0..=n);
        let mut deltas = vec![0.0; n];
        for d in deltas.iter_mut().take(movers) {
            *d = r.gen_range(0.05..0.5) * if r.gen_bool(0.5) { 1.0 } else { -1.0 };
        }
        let o = outcome(0, &deltas, false, true, r.gen_range(0.0..2.0));
        let differ = compute_reward(&o, &full) != compute_reward(&o, &cumulative);
        if differ != (movers >= 2) {
            fails.push(format!("modes {deltas:?}"));
            break;
        }
    }
    if epsilon_at(0) != 1.0 || epsilon_at(6000) != 0.01 {
        fails.push(format!("epsilon {} / {}", epsilon_at(0), epsilon_at(6000)));
    }
    verdict(fails.is_empty(), if fails.is_empty() { "4 examples to 1e-9, 1000 mode pairs, epsilon endpoints exact".into() } else { fails.join("; ") })
}

/// Max endpoint error of `n` samples in model space (must be exactly zero)
/// and in meters after denormalization.
fn endpoint_errors(policy: &DiffusionPolicy, n: usize, r: &mut ChaCha8Rng) -> (usize, f64) {
    let (mut inexact, mut meters) = (0usize, 0.0f64);
    let batch = 100;
    for _ in 0..n / batch {
        // endpoints exactly representable in the f32 model space
        let pick = |r: &mut ChaCha8Rng| Vec2::new(r.gen_range(-1.0f32..1.0) as f64, r.gen_range(-1.0f32..1.0) as f64);
        let robots: Vec<Vec2> = (0..batch).map(|_| pick(r)).collect();
        let goals: Vec<Vec2> = (0..batch).map(|_| pick(r)).collect();
        let obs = Tensor { shape: vec![batch, policy.model.cfg.obs_dim], data: (0..batch * policy.model.cfg.obs_dim).map(|_| r.gen_range(-1.0..1.0)).collect() };
        let x = sample_ddim(&policy.model, &policy.schedule, &obs, &robots, &goals, DDIM_STEPS, r).unwrap();
        let l = x.shape[2];
        for i in 0..batch {
            let b = i * 2 * l;
            let got = [x.data[b], x.data[b + l], x.data[b + l - 1], x.data[b + 2 * l - 1]];
            let want = [robots[i].x, robots[i].y, goals[i].x, goals[i].y];
            if got.iter().zip(&want).any(|(g, w)| *g as f64 != *w) {
                inexact += 1;
            }
        }
        // and through the metric interface
        let lowdim: Vec<LowDimObservation> = (0..batch)
            .map(|i| {
                let mut v = [0.0; 26];
                v.iter_mut().for_each(|x| *x = r.gen_range(0.0..5.0));
                let rm = policy.traj_stats.denormalize_point(robots[i]);
                let gm = policy.traj_stats.denormalize_point(goals[i]);
                for k in 0..4 {
                    (v[2 * k], v[2 * k + 1]) = (rm.x, rm.y);
                }
                (v[24], v[25]) = (gm.x, gm.y);
                LowDimObservation(v)
            })
            .collect();
        for (o, t) in lowdim.iter().zip(policy.sample_batch(&lowdim, r).unwrap()) {
            meters = meters.max(t[0].dist(o.robot_center())).max(t[t.len() - 1].dist(o.goal()));
        }
    }
    (inexact, meters)
}

fn inpainting(trained: &DiffusionPolicy) -> Verdict {
    let mut r = rng(404);
    let unet = UnetConfig::default();
    let untrained = DiffusionPolicy::new(
        Denoiser::new(unet, &mut r).unwrap(),
        trained.obs_stats.clone(),
        trained.traj_stats.clone(),
    )
    .unwrap();
    let (bad_u, m_u) = endpoint_errors(&untrained, 500, &mut r);
    let (bad_t, m_t) = endpoint_errors(trained, 500, &mut r);
    verdict(
        bad_u + bad_t == 0,
        format!("1000 samples, {} inexact in model space; max metric endpoint error {:.1e} m", bad_u + bad_t, m_u.max(m_t)),
    )
}

fn feasibility_closure() -> Verdict {
    let mut r = rng(505);
    let layouts = [EnvName::SmallEmpty, EnvName::SmallColumns, EnvName::LargeColumns, EnvName::LargeDivider];
    let cfg = PostprocessConfig::default();
    let (mut ok, mut total) = (0usize, 0usize);
    let mut first_failure = String::new();
    while total < 500 {
        let env = EnvSpec::new(layouts[total % layouts.len()], [0.5, 1.0][r.gen_range(0..2)]).unwrap();
        let seed: u64 = r.gen();
        let world = env.config(seed);
        let state = reset(&world, seed).unwrap();
        let maps = WorldMaps::build(&state, world.grid_resolution).unwrap();
        let grid = &maps.inflated;
        let robot = state.robot_position();
        let goal = Vec2::new(r.gen_range(0.0..state.width), r.gen_range(0.0..state.height));
        if point_occupied(grid, goal) {
            continue;
        }
        // uniform scatter, or a noisy straight line that cuts through clutter
        let raw: Vec<Vec2> = if r.gen_bool(0.5) {
            (0..32).map(|_| Vec2::new(r.gen_range(-0.5..state.width + 0.5), r.gen_range(-0.5..state.height + 0.5))).collect()
        } else {
            (0..32)
                .map(|k| {
                    let t = k as f64 / 31.0;
                    Vec2::new(robot.x + (goal.x - robot.x) * t + r.gen_range(-0.3..0.3), robot.y + (goal.y - robot.y) * t + r.gen_range(-0.3..0.3))
                })
                .collect()
        };
        total += 1;
        let Ok(path) = postprocess(&raw, robot, goal, grid, &cfg) else {
            if first_failure.is_empty() {
                first_failure = format!("seed {seed}: postprocess error");
            }
            continue;
        };
        let p = &path.points;
        // a robot touching an obstacle may leave along an occupied first segment
        let exempt = point_occupied(grid, robot);
        let vertices = p.iter().enumerate().all(|(i, &q)| (i == 0 && exempt) || !point_occupied(grid, q));
        let segments = p.windows(2).enumerate().all(|(i, w)| (i == 0 && exempt) || !segment_occupied(grid, w[0], w[1]));
        let ends = p[0] == robot && *p.last().unwrap() == goal;
        if vertices && segments && ends {
            ok += 1;
        } else if first_failure.is_empty() {
            first_failure = format!("seed {seed}: vertices {vertices} segments {segments} ends {ends}");
        }
    }
    verdict(ok == total, format!("{ok}/{total} feasible {first_failure}"))
}

fn diffusion_recovery(policy: &DiffusionPolicy, rec: &artifacts::Record<DiffusionRecipe>) -> Verdict {
    // held-out conditions from a different demo seed
    let mut r = rng(606);
    let test = herd_core::demo::straight_line_demos(100, &desk_env(), &mut r).unwrap();
    let obs: Vec<LowDimObservation> = test.iter().map(|e| LowDimObservation(e.obs.clone().try_into().unwrap())).collect();
    let samples = policy.sample_batch(&obs, &mut r).unwrap();
    let (mut sum, mut n) = (0.0, 0usize);
    for (o, t) in obs.iter().zip(&samples) {
        for p in &t[1..t.len() - 1] {
            sum += point_segment_distance(*p, o.robot_center(), o.goal());
            n += 1;
        }
    }
    let dev = sum / n as f64;
    let minutes = rec.cpu_seconds / 60.0;
    verdict(
        dev <= 0.2 && minutes <= 10.0,
        format!("mean interior deviation {dev:.3} m over {n} points; trained {} epochs in {minutes:.1} CPU min", rec.iterations),
    )
}

fn mean(reports: &[EpisodeReport], f: impl Fn(&EpisodeReport) -> f64) -> f64 {
    reports.iter().map(f).sum::<f64>() / reports.len() as f64
}

fn desk_end_to_end(desk_diffusion: &DiffusionPolicy) -> Verdict {
    let (full, full_rec) = artifacts::desk_qnet(QVariant::Full);
    let (cumulative, cum_rec) = artifacts::desk_qnet(QVariant::CumulativeReward);
    let mut bank = PolicyBank { diffusion: Some(desk_diffusion.clone()), ..Default::default() };
    bank.qnets.insert(QVariant::Full, full);
    bank.qnets.insert(QVariant::CumulativeReward, cumulative);
    let seeds: Vec<u64> = (1000..1020).collect();
    let env = desk_env();
    let cfg = RolloutConfig::default();
    let run = |mode| evaluate(&env, mode, &bank, &seeds, &cfg, None).unwrap().1;
    let herd = run(EvalMode::Herd);
    let no_diff = run(EvalMode::NoDiffusion);
    let cum = run(EvalMode::CumulativeReward);
    let boxes = mean(&herd, |r| r.boxes_delivered as f64);
    let (d_herd, d_nodiff, d_cum) = (mean(&herd, |r| r.distance_m), mean(&no_diff, |r| r.distance_m), mean(&cum, |r| r.distance_m));
    let hours = full_rec.cpu_seconds.max(cum_rec.cpu_seconds) / 3600.0;
    let (a, b, c) = (boxes >= 2.4, d_herd < d_cum, d_herd <= d_nodiff);
    verdict(
        a && b && c && hours <= 2.0 && full_rec.iterations >= 15_000,
        format!(
            "herd {boxes:.2}/3 boxes [{}], distance herd {d_herd:.1} m vs cumulative {d_cum:.1} m [{}], vs no_diffusion {d_nodiff:.1} m [{}]; training {} steps in {hours:.2} CPU h",
            ok(a),
            ok(b),
            ok(c),
            full_rec.iterations
        ),
    )
}

fn ok(b: bool) -> &'static str {
    if b {
        "ok"
    } else {
        "miss"
    }
}

fn augmentation() -> Verdict {
    let mut r = rng(707);
    let episodes = synthesize_demos(50, &EnvSpec::new(EnvName::SmallColumns, 0.7).unwrap(), &mut r).unwrap();
    let mut bad = Vec::new();
    let mut demos = 0;
    for (i, ep) in episodes.iter().enumerate() {
        let aug = augment(ep);
        demos += aug.len();
        let n = ep.waypoints.len();
        if aug.len() != n - 1 || aug.iter().any(|a| a.trajectory.len() != 32 || *a.trajectory.last().unwrap() != ep.goal) {
            bad.push(i);
        }
    }
    let sparse: Vec<usize> = episodes.iter().map(|e| e.waypoints.len()).collect();
    verdict(
        bad.is_empty(),
        format!("50 episodes with {}..={} sparse waypoints, {demos} augmented demos, bad episodes {bad:?}", sparse.iter().min().unwrap(), sparse.iter().max().unwrap()),
    )
}

fn determinism(diffusion: &DiffusionPolicy) -> Verdict {
    let mut bank = PolicyBank { diffusion: Some(diffusion.clone()), ..Default::default() };
    bank.qnets.insert(QVariant::Full, QNetwork::new(&mut rng(808)));
    let env = EnvSpec::new(EnvName::SmallColumns, 0.5).unwrap();
    let seeds = [3u64, 4];
    let cfg = RolloutConfig::default();
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let mut outputs = Vec::new();
    for d in &dirs {
        let mut reports = String::new();
        for mode in [EvalMode::Herd, EvalMode::OnlyDiffusion] {
            let (_, r) = evaluate(&env, mode, &bank, &seeds, &cfg, Some(d.path())).unwrap();
            reports.push_str(&serde_json::to_string(&r).unwrap());
        }
        let mut files: Vec<_> = std::fs::read_dir(d.path()).unwrap().map(|e| e.unwrap().path()).collect();
        files.sort();
        let bytes: Vec<(String, Vec<u8>)> =
            files.iter().map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(p).unwrap())).collect();
        outputs.push((reports, bytes));
    }
    let same = outputs[0] == outputs[1];
    let size: usize = outputs[0].1.iter().map(|f| f.1.len()).sum();
    verdict(same && !outputs[0].1.is_empty(), format!("2 modes x {} seeds, {} replay files ({size} bytes), identical {same}", seeds.len(), outputs[0].1.len()))
}

fn main() {
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let wanted = |name: &str| filters.is_empty() || filters.iter().any(|f| name.contains(f.as_str()));

    let mut results: Vec<(&str, Verdict, Duration)> = Vec::new();
    let mut check = |name: &'static str, f: &mut dyn FnMut() -> Verdict| {
        if wanted(name) {
            let t = Instant::now();
            let v = f();
            println!("{} {name}: {} ({:.1}s)", if v.pass { "PASS" } else { "FAIL" }, v.detail, t.elapsed().as_secs_f64());
            results.push((name, v, t.elapsed()));
        }
    };
    let needs_straight = ["inpainting_hard_constraint", "diffusion_recovery"].iter().any(|n| wanted(n));
    let needs_desk = ["desk_end_to_end", "determinism"].iter().any(|n| wanted(n));
    let straight = needs_straight.then(|| artifacts::diffusion(&DiffusionRecipe::straight()));
    let desk = needs_desk.then(|| artifacts::diffusion(&DiffusionRecipe::desk()).0);

    check("spfa_oracle_equivalence", &mut spfa_matches_dijkstra);
    check("gradient_checks", &mut gradient_checks);
    check("reward_suite", &mut reward_suite);
    check("inpainting_hard_constraint", &mut || inpainting(&straight.as_ref().unwrap().0));
    check("feasibility_closure", &mut feasibility_closure);
    check("diffusion_recovery", &mut || diffusion_recovery(&straight.as_ref().unwrap().0, &straight.as_ref().unwrap().1));
    check("desk_end_to_end", &mut || desk_end_to_end(desk.as_ref().unwrap()));
    check("augmentation_arithmetic", &mut augmentation);
    check("determinism", &mut || determinism(desk.as_ref().unwrap()));

    let failed: Vec<&str> = results.iter().filter(|r| !r.1.pass).map(|r| r.0).collect();
    println!("{} passed, {} failed", results.len() - failed.len(), failed.len());
    if !failed.is_empty() {
        std::process::exit(1);
    }
}
