use criterion::{black_box, criterion_group, criterion_main, BatchSize, Criterion};
use herd_bench::{cluttered_grid, rng, world};
use herd_core::diffusion::{sample_ddim, Denoiser, NoiseSchedule, UnetConfig, DDIM_STEPS, TRAIN_TIMESTEPS};
use herd_core::envs::EnvName;
use herd_core::grid::spfa_distance;
use herd_core::nn::{Grads, Tensor};
use herd_core::observation::{ObservationBuilder, ObservationConfig};
use herd_core::postprocess::{postprocess, PostprocessConfig};
use herd_core::rl::QNetwork;
use herd_core::world::step_motion;
use herd_core::Vec2;
use rand::Rng;

fn planning(c: &mut Criterion) {
    let grid = cluttered_grid(96, 0.2, 1);
    let src = (0..grid.len()).map(|i| grid.cell_at(i)).find(|&c| !grid.is_blocked(c)).unwrap();
    c.bench_function("spfa_96x96", |b| b.iter(|| spfa_distance(black_box(&grid), black_box(src)).unwrap()));

    let (state, maps) = world(EnvName::LargeColumns, 1.0, 3);
    let robot = state.robot_position();
    let mut r = rng(2);
    let raw: Vec<Vec2> = (0..32).map(|_| Vec2::new(r.gen_range(0.0..10.0), r.gen_range(0.0..10.0))).collect();
    let goal = Vec2::new(8.0, 8.0);
    c.bench_function("postprocess_random_32", |b| {
        b.iter(|| postprocess(black_box(&raw), robot, goal, &maps.inflated, &PostprocessConfig::default()))
    });
}

fn simulation(c: &mut Criterion) {
    let (state, maps) = world(EnvName::SmallEmpty, 1.0, 4);
    let start = state.robot_position();
    let end = Vec2::new(5.0, 2.5);
    c.bench_function("step_motion_to_center", |b| b.iter(|| step_motion(black_box(&state), &maps, start, end)));

    let obs = ObservationBuilder::new(ObservationConfig::default());
    c.bench_function("render_state_96", |b| b.iter(|| obs.render(black_box(&state), &maps)));
}

fn qnet(c: &mut Criterion) {
    let net = QNetwork::new(&mut rng(5));
    let x1 = Tensor::zeros(&[1, 4, 96, 96]);
    let x32 = Tensor::zeros(&[32, 4, 96, 96]);
    c.bench_function("qnet_forward_b1", |b| b.iter(|| net.forward(black_box(&x1)).unwrap()));
    let mut g = c.benchmark_group("qnet_b32");
    g.sample_size(10);
    g.bench_function("forward", |b| b.iter(|| net.forward(black_box(&x32)).unwrap()));
    g.bench_function("forward_backward", |b| {
        b.iter_batched(
            || Grads::zeros_like(&net.params),
            |mut grads| {
                let (q, cache) = net.forward_cached(&x32).unwrap();
                net.backward(&mut grads, &cache, &q).unwrap();
                grads
            },
            BatchSize::LargeInput,
        )
    });
    g.finish();
}

fn diffusion(c: &mut Criterion) {
    let model = Denoiser::new(UnetConfig::default(), &mut rng(6)).unwrap();
    let sched = NoiseSchedule::squared_cosine(TRAIN_TIMESTEPS);
    let obs = Tensor::zeros(&[1, 26]);
    let x = Tensor::zeros(&[8, 2, 32]);
    let obs8 = Tensor::zeros(&[8, 26]);
    c.bench_function("unet_forward_b8", |b| b.iter(|| model.forward(black_box(&x), &[50; 8], &obs8).unwrap()));
    let mut g = c.benchmark_group("ddim");
    g.sample_size(10);
    g.bench_function("sample_one_15_steps", |b| {
        b.iter_batched(
            || rng(7),
            |mut r| sample_ddim(&model, &sched, &obs, &[Vec2::new(-0.5, 0.0)], &[Vec2::new(0.5, 0.2)], DDIM_STEPS, &mut r).unwrap(),
            BatchSize::SmallInput,
        )
    });
    g.finish();
}

criterion_group!(benches, planning, simulation, qnet, diffusion);
criterion_main!(benches);
