use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use occ_core::data::generate;
use occ_core::detectors::{default_gamma, fit_kde, fit_ocsvm};
use occ_core::evaluate::{mmd_to_uniform, MmdConfig};
use occ_core::optim::train;
use occ_core::{AugmentPlan, DatasetSpec, DistSet, KernelSpec, ModelBundle, NetworkConfig, Objective, Tensor, TrainRun};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(n: usize, d: usize, seed: u64) -> Tensor {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    Tensor::matrix(n, d, (0..n * d).map(|_| r.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn ocsvm(c: &mut Criterion) {
    let mut g = c.benchmark_group("ocsvm_fit");
    g.sample_size(10);
    for n in [200, 1000] {
        let x = random(n, 16, 1);
        let gamma = default_gamma(&x).unwrap();
        g.bench_with_input(BenchmarkId::from_parameter(n), &x, |b, x| {
            b.iter(|| fit_ocsvm(black_box(x), 0.1, KernelSpec::Rbf { gamma }).unwrap())
        });
    }
    g.finish();
}

fn kde(c: &mut Criterion) {
    let refs = random(1000, 32, 2);
    let queries = random(256, 32, 3);
    let model = fit_kde(&refs, None).unwrap();
    c.bench_function("kde_score_256x1000x32", |b| b.iter(|| model.score(black_box(&queries)).unwrap()));
}

fn mmd(c: &mut Criterion) {
    let reps = random(512, 32, 4);
    let cfg = MmdConfig::default();
    c.bench_function("mmd_to_uniform_512x32", |b| b.iter(|| mmd_to_uniform(black_box(&reps), &cfg).unwrap()));
}

fn train_steps(c: &mut Criterion) {
    let ds = generate(&DatasetSpec { n_train: 256, ..DatasetSpec::default() }).unwrap();
    let mut g = c.benchmark_group("train_20_steps");
    g.sample_size(10);
    for objective in [Objective::Contrastive, Objective::ContrastiveDistAug, Objective::Rotation] {
        let model = ModelBundle::init(NetworkConfig {
            input_dim: 144,
            encoder_widths: vec![64, 64, 32],
            head_depth: 1,
            head_hidden_width: 64,
            head_output_dim: 32,
            ..NetworkConfig::default()
        })
        .unwrap();
        let mut plan = AugmentPlan::image_default();
        if objective == Objective::ContrastiveDistAug {
            plan.dist_set = DistSet::rotations();
        }
        let run = TrainRun { objective, steps: Some(20), batch_size: 32, plan, ..TrainRun::default() };
        g.bench_function(objective.to_string(), |b| b.iter(|| train(&run, model.clone(), &ds.train).unwrap()));
    }
    g.finish();
}

criterion_group!(benches, ocsvm, kde, mmd, train_steps);
criterion_main!(benches);
