//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

mod common;

use std::collections::BTreeMap;
use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use common::*;
use occ_core::augment::{hflip, rot90};
use occ_core::detectors::{default_gamma, fit_gde, fit_kde, fit_ocsvm_with, SolverSettings};
use occ_core::evaluate::{auc, ensemble_scores, mmd2, mmd_to_uniform, uniform_sphere, Estimator, MmdConfig, Normalization, ScoredSet};
use occ_core::explain::{integrated_gradients, DifferentiableScore, KdeScore, ScoreMode};
use occ_core::objectives::{contrastive_loss, contrastive_loss_on, contrastive_model_loss, rotation_loss, ContrastiveBatch};
use occ_core::pipeline::{Pipeline, Stage};
use occ_core::{
    AugmentPlan, Batch, ContrastiveVariant, Detector, ImageBatch, Mode, ModelBundle, NetworkConfig, Objective,
    PipelineConfig, Precision, Tape, Tensor,
};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn small_model(seed: u64, input_dim: usize) -> ModelBundle {
    ModelBundle::init(NetworkConfig {
        input_dim,
        encoder_widths: vec![6, 5],
        head_depth: 1,
        head_hidden_width: 6,
        head_output_dim: 4,
        q_outputs: 4,
        use_batch_norm_in_head: true,
        seed,
    })
    .unwrap()
}

fn flat(grads: Vec<Tensor>) -> Vec<f64> {
    grads.into_iter().flat_map(|t| t.into_data()).collect()
}

fn gradients() -> Outcome {
    const H: f64 = 1e-6;
    let mut worst: BTreeMap<&str, f64> = BTreeMap::new();
    let mut note = |k: &'static str, e: f64| {
        let w = worst.entry(k).or_insert(0.0);
        *w = w.max(e);
    };
    for inst in 0..20u64 {
        let mut r = rng(100 + inst);

        let pixels: Vec<f64> = (0..3 * 16).map(|_| r.gen_range(0.0..1.0)).collect();
        let base = ImageBatch::new(3, 1, 4, 4, pixels).unwrap();
        let model = jitter(&small_model(inst, 16), &mut r, 0.1);
        let plan = AugmentPlan::identity();
        let rot = |m: &ModelBundle| {
            rotation_loss(m, &base, &plan, &mut occ_core::rng::seeded(0), Precision::F64).unwrap().value()
        };
        let analytic = flat(
            rotation_loss(&model, &base, &plan, &mut occ_core::rng::seeded(0), Precision::F64)
                .unwrap()
                .param_grads()
                .unwrap(),
        );
        note("rotation", rel_err(&analytic, &model_fd(&model, rot, H)));

        let m = 5;
        let va = Batch::Vectors(tensor(&random_rows(&mut r, m, 7, 1.0)));
        let vb = Batch::Vectors(tensor(&random_rows(&mut r, m, 7, 1.0)));
        let model = jitter(&small_model(1000 + inst, 7), &mut r, 0.1);
        for (name, variant) in [("contrastive", ContrastiveVariant::AnchorView), ("nt_xent", ContrastiveVariant::NtXent)] {
            let loss = |mm: &ModelBundle| {
                contrastive_model_loss(mm, &va, &vb, 0.2, variant, Precision::F64).unwrap().value()
            };
            let analytic = flat(
                contrastive_model_loss(&model, &va, &vb, 0.2, variant, Precision::F64).unwrap().param_grads().unwrap(),
            );
            note(name, rel_err(&analytic, &model_fd(&model, loss, H)));

            let a = tensor(&random_rows(&mut r, m, 3, 2.0));
            let p = tensor(&random_rows(&mut r, m, 3, 2.0));
            let mut tape = Tape::new();
            let (av, pv) = (tape.input(a.clone()).unwrap(), tape.input(p.clone()).unwrap());
            let l = contrastive_loss_on(&mut tape, av, pv, 0.5, variant).unwrap();
            let mut g = tape.backward(l, true).unwrap();
            let mut analytic = g.take(av).unwrap().into_data();
            analytic.extend(g.take(pv).unwrap().into_data());
            let mut x = a.data().to_vec();
            x.extend_from_slice(p.data());
            let fd = central_diff(
                |v| {
                    let batch = ContrastiveBatch {
                        anchors: Tensor::matrix(m, 3, v[..3 * m].to_vec()).unwrap(),
                        positives: Tensor::matrix(m, 3, v[3 * m..].to_vec()).unwrap(),
                        temperature: 0.5,
                    };
                    contrastive_loss(&batch, variant).unwrap()
                },
                &x,
                H,
            );
            note(if name == "contrastive" { "contrastive_embeddings" } else { "nt_xent_embeddings" }, rel_err(&analytic, &fd));
        }

        let model = jitter(&small_model(2000 + inst, 8), &mut r, 0.1);
        let refs = model.forward_f(&tensor(&random_rows(&mut r, 30, 8, 1.0))).unwrap();
        let kde = fit_kde(&refs, None).unwrap();
        let x: Vec<f64> = (0..8).map(|_| r.gen_range(-1.0..1.0)).collect();
        for (name, mode) in [("kde_f_log", ScoreMode::Log), ("kde_f_raw", ScoreMode::Raw)] {
            let score = KdeScore { model: Some(&model), kde: &kde, mode };
            let (_, analytic) = score.value_and_grad(&x).unwrap();
            let fd = central_diff(|v| score.value_and_grad(v).unwrap().0, &x, H);
            note(name, rel_err(&analytic, &fd));
        }
    }
    let max = worst.values().cloned().fold(0.0, f64::max);
    let detail = worst.iter().map(|(k, v)| format!("{k} {v:.1e}")).collect::<Vec<_>>().join(", ");
    check(max < 1e-4, format!("20 instances each, max relative error: {detail}"))
}

fn ocsvm_solver() -> Outcome {
    let mut r = rng(7);
    let mut worst_obj: f64 = 0.0;
    for _ in 0..50 {
        let n = r.gen_range(2..=8);
        let x = random_rows(&mut r, n, 2, 2.0);
        let gamma = r.gen_range(0.1..2.0);
        let nu = r.gen_range(1.0 / n as f64..=1.0);
        let c = 1.0 / (nu * n as f64);
        let fit = fit_ocsvm_with(&tensor(&x), nu, occ_core::KernelSpec::Rbf { gamma }, SolverSettings::default())
            .map_err(|e| e.to_string())?;
        let k = rbf_gram(&x, gamma);
        let a = nalgebra::DVector::from_column_slice(&fit.alpha);
        let obj = 0.5 * (a.transpose() * &k * &a)[(0, 0)];
        worst_obj = worst_obj.max((obj - ocsvm_dual_bruteforce(&k, c)).abs());
    }
    let mut worst_kkt: f64 = 0.0;
    for (t, &n) in [10usize, 50, 100, 200, 350, 500].iter().enumerate() {
        for nu in [0.1, 0.2, 0.5] {
            let mut r = rng(50 + t as u64);
            let x = random_rows(&mut r, n, 3, 1.0);
            let reps = tensor(&x);
            let gamma = default_gamma(&reps).unwrap();
            let fit = fit_ocsvm_with(&reps, nu, occ_core::KernelSpec::Rbf { gamma }, SolverSettings::default())
                .map_err(|e| e.to_string())?;
            let c = 1.0 / (nu * n as f64);
            worst_kkt = worst_kkt.max(kkt_violation(&rbf_gram(&x, gamma), &fit.alpha, c));
        }
    }
    check(
        worst_obj < 1e-5 && worst_kkt < 1e-6,
        format!("max |dual - brute force| {worst_obj:.1e} over 50 instances, max KKT residual {worst_kkt:.1e} up to n = 500"),
    )
}

fn nu_property() -> Outcome {
    let n = 200;
    let slack = 2.0 / (n as f64).sqrt();
    let mut runs = 0;
    let mut failures = Vec::new();
    for seed in 0..7u64 {
        let mut r = rng(300 + seed);
        let x: Vec<Vec<f64>> =
            (0..n).map(|_| (0..2).map(|_| Distribution::<f64>::sample(&StandardNormal, &mut r)).collect()).collect();
        let reps = tensor(&x);
        let gamma = default_gamma(&reps).unwrap();
        for nu in [0.05, 0.1, 0.3] {
            runs += 1;
            let fit = fit_ocsvm_with(&reps, nu, occ_core::KernelSpec::Rbf { gamma }, SolverSettings::default())
                .map_err(|e| e.to_string())?;
            let scores = fit.model.score(&reps).unwrap();
            // free support vectors sit on the boundary up to the solver tolerance
            let outliers = scores.iter().filter(|&&s| s < -SolverSettings::default().tol).count() as f64 / n as f64;
            let svs = fit.support.len() as f64 / n as f64;
            if outliers > nu + slack || svs < nu - slack {
                failures.push(format!("seed {seed} nu {nu}: outliers {outliers}, SVs {svs}"));
            }
        }
    }
    check(failures.is_empty(), format!("{runs} fits, violations: {failures:?}"))
}

fn detector_oracles() -> Outcome {
    let mut r = rng(11);
    let mut kde_err: f64 = 0.0;
    let mut gde_err: f64 = 0.0;
    for _ in 0..10 {
        let refs = random_rows(&mut r, 50, 3, 1.0);
        let gamma = r.gen_range(0.2..3.0);
        let kde = fit_kde(&tensor(&refs), Some(gamma)).unwrap();
        let q = random_rows(&mut r, 20, 3, 1.5);
        for (s, x) in kde.score(&tensor(&q)).unwrap().iter().zip(&q) {
            kde_err = kde_err.max((s - kde_direct(&refs, gamma, x)).abs());
        }

        let mix = random_rows(&mut r, 3, 3, 1.0);
        let data: Vec<Vec<f64>> = random_rows(&mut r, 100, 3, 1.0)
            .into_iter()
            .map(|z| (0..3).map(|j| (0..3).map(|i| z[i] * mix[i][j]).sum::<f64>() + 0.5 * j as f64).collect())
            .collect();
        let gde = fit_gde(&tensor(&data)).unwrap();
        for (s, x) in gde.score(&tensor(&q)).unwrap().iter().zip(&q) {
            gde_err = gde_err.max((s - gaussian_logpdf_direct(&data, 1e-6, x)).abs());
        }
    }
    let one_d: Vec<Vec<f64>> = (0..100).map(|_| vec![Distribution::<f64>::sample(&StandardNormal, &mut r) * 0.7 + 2.0]).collect();
    let gde = fit_gde(&tensor(&one_d)).unwrap();
    let (lo, hi, steps) = (2.0 - 12.0, 2.0 + 12.0, 24_000);
    let h = (hi - lo) / steps as f64;
    let grid: Vec<Vec<f64>> = (0..=steps).map(|i| vec![lo + i as f64 * h]).collect();
    let dens: Vec<f64> = gde.score(&tensor(&grid)).unwrap().iter().map(|l| l.exp()).collect();
    let integral = h * (dens.iter().sum::<f64>() - 0.5 * (dens[0] + dens[steps]));
    check(
        kde_err < 1e-10 && gde_err < 1e-9 && (integral - 1.0).abs() < 1e-3,
        format!("KDE max error {kde_err:.1e}, GDE max error {gde_err:.1e}, 1-D integral {integral:.6}"),
    )
}

fn auc_exact() -> Outcome {
    let mut r = rng(21);
    let mut mismatches = 0;
    for t in 0..100 {
        let n = r.gen_range(2..60);
        let mut labels: Vec<bool> = (0..n).map(|_| r.gen_bool(0.5)).collect();
        labels[0] = true;
        labels[1] = false;
        let levels = if t % 2 == 0 { 5 } else { 1000 };
        let scores: Vec<f64> = (0..n).map(|_| r.gen_range(0..levels) as f64 / 4.0).collect();
        let a = auc(&ScoredSet::new(scores.clone(), labels.clone()).unwrap()).unwrap();
        if a != auc_pairwise(&scores, &labels) {
            mismatches += 1;
        }
    }
    check(mismatches == 0, format!("{mismatches} mismatches over 100 sets with ties"))
}

fn normal_rows(r: &mut rand_chacha::ChaCha8Rng, n: usize, d: usize) -> Tensor {
    tensor(&(0..n).map(|_| (0..d).map(|_| Distribution::<f64>::sample(&StandardNormal, r)).collect()).collect::<Vec<_>>())
}

fn mmd_sanity() -> Outcome {
    let mut r = rng(31);
    let x = normal_rows(&mut r, 40, 4);
    let self_mmd = mmd2(&x, &x, 1.3, Estimator::Biased).unwrap();

    let trials: Vec<f64> = (0..50)
        .map(|_| mmd2(&normal_rows(&mut r, 50, 3), &normal_rows(&mut r, 50, 3), 1.5, Estimator::Unbiased).unwrap())
        .collect();
    let mean = trials.iter().sum::<f64>() / 50.0;
    let sd = (trials.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 49.0).sqrt();
    let se = sd / 50f64.sqrt();

    let mut wins = 0;
    for seed in 0..20u64 {
        let cfg = MmdConfig { seed, ..MmdConfig::default() };
        let point = tensor(&vec![vec![0.3, -0.2, 0.9]; 64]);
        let spread = uniform_sphere(64, 3, 10_000 + seed).unwrap();
        if mmd_to_uniform(&point, &cfg).unwrap() > mmd_to_uniform(&spread, &cfg).unwrap() {
            wins += 1;
        }
    }
    check(
        self_mmd == 0.0 && mean.abs() < 3.0 * se && wins >= 19,
        format!("self MMD² {self_mmd}, unbiased mean {mean:.2e} (3 SE {:.2e}), point mass larger in {wins}/20", 3.0 * se),
    )
}

fn shipped(name: &str) -> PipelineConfig {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name);
    PipelineConfig::load(&path).unwrap()
}

fn uniformity_trend() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let mut monotone = 0;
    let mut gap = 0;
    let mut rows = Vec::new();
    for seed in 1..=5u64 {
        let mut cfg = shipped("shapes_contrastive.ini");
        cfg.seeds = vec![seed];
        cfg.evaluation.mmd_batch_sizes = vec![8, 32, 128];
        cfg.output_dir = dir.path().join(format!("s{seed}"));
        let p = Pipeline::new(cfg);
        p.run(Stage::Gen).map_err(|e| e.to_string())?;
        let m: BTreeMap<String, f64> = p.mmd().map_err(|e| e.to_string())?.into_iter().collect();
        let gf = [m["gf@8"], m["gf@32"], m["gf@128"]];
        let f = [m["f@8"], m["f@32"], m["f@128"]];
        if gf[0] >= gf[1] && gf[1] >= gf[2] {
            monotone += 1;
        }
        if f.iter().zip(&gf).all(|(a, b)| a > b) {
            gap += 1;
        }
        rows.push(format!("seed {seed} gf {:.3}/{:.3}/{:.3} f {:.3}/{:.3}/{:.3}", gf[0], gf[1], gf[2], f[0], f[1], f[2]));
    }
    check(
        monotone >= 4 && gap >= 4,
        format!("g∘f non-increasing in {monotone}/5 seeds, f above g∘f in {gap}/5; {}", rows.join("; ")),
    )
}

struct Benchmark {
    _dir: tempfile::TempDir,
    da: Pipeline,
    vanilla: Pipeline,
}

fn benchmark() -> &'static Benchmark {
    static B: OnceLock<Benchmark> = OnceLock::new();
    B.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let run = |name: &str, sub: &str| {
            let mut cfg = shipped(name);
            cfg.output_dir = dir.path().join(sub);
            let p = Pipeline::new(cfg);
            p.run(Stage::Gen).unwrap();
            for s in p.config.seeds.clone() {
                p.train(s).unwrap();
                p.embed(s).unwrap();
                p.fit(s).unwrap();
                p.score(s).unwrap();
            }
            p
        };
        let da = run("shapes_contrastive_da.ini", "da");
        let vanilla = run("shapes_contrastive.ini", "vanilla");
        Benchmark { _dir: dir, da, vanilla }
    })
}

fn mean_test_auc(p: &Pipeline) -> (f64, Vec<f64>) {
    let rows = p.seed_rows().unwrap().rows;
    let aucs: Vec<f64> = rows.iter().map(|r| r.test_auc).collect();
    (aucs.iter().sum::<f64>() / aucs.len() as f64, aucs)
}

fn distaug_benefit() -> Outcome {
    let b = benchmark();
    let (da, da_all) = mean_test_auc(&b.da);
    let (va, va_all) = mean_test_auc(&b.vanilla);
    check(
        da >= va && da >= 0.6 && va >= 0.6,
        format!("mean test AUC contrastive-DA {da:.4} {da_all:.3?}, vanilla {va:.4} {va_all:.3?}"),
    )
}

fn head_identity() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let mut details = Vec::new();
    for (name, objective) in [("shapes_contrastive.ini", Objective::Contrastive), ("shapes_rotation.ini", Objective::Rotation)] {
        let mut cfg = shipped(name);
        cfg.network.head_depth = 0;
        cfg.seeds = vec![1];
        cfg.optimizer.steps = Some(60);
        cfg.evaluation.mmd_batch_sizes = vec![16];
        cfg.evaluation.mmd_steps = 20;
        cfg.output_dir = dir.path().join(objective.to_string());
        let p = Pipeline::new(cfg);
        p.run(Stage::All).map_err(|e| e.to_string())?;
        let model = ModelBundle::load(&p.model_path(1)).unwrap();
        let x = occ_core::Dataset::read(&p.data_dir()).unwrap().test.to_tensor();
        let f = model.forward_f(&x).unwrap();
        let same = model.head.is_empty()
            && model.head_out.is_none()
            && model.forward_gf(&x, Mode::Eval).unwrap() == f
            && model.forward_gf(&x, Mode::Train).unwrap() == f
            && model.classifier.weight.rows() == f.cols();
        if !same {
            return Err(format!("{objective}: g∘f differs from f"));
        }
        details.push(format!("{objective} ok"));
    }
    Ok(details.join(", "))
}

fn ensemble_invariance() -> Outcome {
    let mut r = rng(41);
    for m in [1usize, 2, 3, 5] {
        let labels: Vec<bool> = (0..80).map(|i| i % 3 != 0).collect();
        let s: Vec<f64> = (0..80).map(|_| r.gen_range(-2.0..2.0)).collect();
        let single = auc(&ScoredSet::new(s.clone(), labels.clone()).unwrap()).unwrap();
        let combined = ensemble_scores(&vec![s; m], Normalization::ZScore).unwrap();
        let joint = auc(&ScoredSet::new(combined, labels).unwrap()).unwrap();
        if joint != single {
            return Err(format!("{m} identical vectors: AUC {joint} vs {single}"));
        }
    }
    let mut details = vec!["identical vectors keep AUC".to_string()];
    let mut ok = true;
    for (name, p) in [("DA", &benchmark().da), ("vanilla", &benchmark().vanilla)] {
        let sweep = p.seed_rows().unwrap();
        let best = sweep.rows.iter().map(|r| r.test_auc).fold(f64::MIN, f64::max);
        let ens = auc(&ScoredSet::new(ensemble_scores(&sweep.test_scores, Normalization::ZScore).unwrap(), sweep.test_labels).unwrap()).unwrap();
        ok &= ens >= best - 0.02;
        details.push(format!("{name} ensemble {ens:.4} vs best seed {best:.4}"));
    }
    check(ok, details.join(", "))
}

fn integrated_gradients_check() -> Outcome {
    let w = [0.5, -2.0, 3.0, 0.25];
    let linear = |x: &[f64]| -> occ_core::Result<(f64, Vec<f64>)> {
        Ok((x.iter().zip(&w).map(|(a, b)| a * b).sum(), w.to_vec()))
    };
    let x = Tensor::vector(vec![1.5, -0.5, 2.0, 4.0]).unwrap();
    let a = integrated_gradients(&linear, &x, &Tensor::zeros(&[4]), 128).unwrap();
    let exact = a.values.data().iter().zip(x.data().iter().zip(&w)).all(|(v, (xi, wi))| (v - xi * wi).abs() <= 1e-12 * (xi * wi).abs());

    let p = &benchmark().da;
    let model = ModelBundle::load(&p.model_path(1)).unwrap();
    let Detector::Kde(kde) = Detector::load(&p.detector_path(1)).unwrap() else {
        return Err("benchmark detector is not a KDE".into());
    };
    let test = occ_core::Dataset::read(&p.data_dir()).unwrap().test.to_tensor();
    let score = KdeScore { model: Some(&model), kde: &kde, mode: ScoreMode::Log };
    let (mut gap_sum, mut delta_sum, mut worst, mut over) = (0.0, 0.0, 0.0f64, 0);
    for id in 0..test.rows() {
        let x = Tensor::matrix(1, test.cols(), test.row(id).to_vec()).unwrap();
        let a = integrated_gradients(&score, &x, &Tensor::zeros(x.shape()), 128).unwrap();
        let gap = a.completeness_gap().unwrap();
        let delta = (a.score_at_input - a.score_at_baseline.unwrap()).abs();
        gap_sum += gap;
        delta_sum += delta;
        worst = worst.max(gap / delta);
        over += usize::from(gap > 0.01 * delta);
    }
    let pooled = gap_sum / delta_sum;
    check(
        exact && pooled < 0.01,
        format!(
            "linear exact: {exact}; over {} test samples Σgap/Σ|Δscore| = {:.3}%, largest single-sample ratio {:.2}% ({over} samples above 1%)",
            test.rows(),
            pooled * 100.0,
            worst * 100.0
        ),
    )
}

fn snapshot(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let path = e.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(root).unwrap().display().to_string();
                out.insert(rel, std::fs::read(&path).unwrap());
            }
        }
    }
    out
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let mut files = 0;
    for name in ["shapes_rotation.ini", "blobs_ocsvm.ini", "shapes_contrastive_da.ini"] {
        let mut cfg = shipped(name);
        cfg.seeds.truncate(2);
        cfg.optimizer.steps = Some(60);
        cfg.optimizer.checkpoint_every = Some(25);
        cfg.evaluation.mmd_batch_sizes = vec![8, 16];
        cfg.evaluation.mmd_steps = 30;
        cfg.evaluation.ig_steps = 16;
        cfg.output_dir = dir.path().join(name).join("staged");
        let staged = Pipeline::new(cfg.clone());
        for stage in [Stage::Gen, Stage::Train, Stage::Embed, Stage::Fit, Stage::Score, Stage::Mmd, Stage::Eval, Stage::Explain] {
            staged.run(stage).map_err(|e| e.to_string())?;
            let first = snapshot(staged.root());
            staged.run(stage).map_err(|e| e.to_string())?;
            if snapshot(staged.root()) != first {
                return Err(format!("{name}: re-running {stage} changed artifacts"));
            }
        }
        cfg.output_dir = dir.path().join(name).join("all");
        let whole = Pipeline::new(cfg);
        whole.run(Stage::All).map_err(|e| e.to_string())?;
        let (a, b) = (snapshot(staged.root()), snapshot(whole.root()));
        if a != b {
            let differing: Vec<_> = a.keys().filter(|k| a.get(*k) != b.get(*k)).collect();
            return Err(format!("{name}: staged and all runs differ in {differing:?}"));
        }
        files += a.len();
    }
    Ok(format!("{files} artifacts byte-identical across reruns and across staged vs all"))
}

fn group_properties() -> Outcome {
    let mut r = rng(51);
    for (n, c, s) in [(4, 1, 5), (3, 3, 6), (2, 2, 7), (5, 1, 12)] {
        let pixels: Vec<f64> = (0..n * c * s * s).map(|_| r.gen_range(-1.0..1.0)).collect();
        let x = ImageBatch::new(n, c, s, s, pixels).unwrap();
        let mut y = x.clone();
        for _ in 0..4 {
            y = rot90(&y, 1).unwrap();
        }
        if y != x {
            return Err(format!("rot90⁴ ≠ id for {n}x{c}x{s}x{s}"));
        }
        if hflip(&hflip(&x)) != x {
            return Err("hflip is not an involution".into());
        }
        for k in 0..4 {
            if hflip(&rot90(&x, k).unwrap()) != rot90(&hflip(&x), (4 - k) % 4).unwrap() {
                return Err(format!("flip∘rot{k} ≠ rot{}∘flip", (4 - k) % 4));
            }
        }
    }
    Ok("rot90 order 4, hflip involution, flip∘rot = rot⁻¹∘flip on 4 random batches".into())
}

type Criterion = (u32, &'static str, Option<Duration>, fn() -> Outcome);

fn main() {
    let criteria: Vec<Criterion> = vec![
        (1, "gradient correctness", Some(Duration::from_secs(30)), gradients),
        (2, "OC-SVM solver", Some(Duration::from_secs(60)), ocsvm_solver),
        (3, "nu-property", None, nu_property),
        (4, "detector oracles", None, detector_oracles),
        (5, "AUC exactness", None, auc_exact),
        (6, "MMD sanity", None, mmd_sanity),
        (7, "uniformity trend", Some(Duration::from_secs(600)), uniformity_trend),
        (8, "distribution-augmentation benefit", Some(Duration::from_secs(900)), distaug_benefit),
        (9, "head-identity reduction", None, head_identity),
        (10, "ensemble invariance", None, ensemble_invariance),
        (11, "integrated gradients", None, integrated_gradients_check),
        (12, "determinism", None, determinism),
        (13, "group properties", None, group_properties),
    ];
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (id, name, limit, run) in criteria {
        let start = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let elapsed = start.elapsed();
        let outcome = match (outcome, limit) {
            (Ok(d), Some(l)) if elapsed > l => Err(format!("{d}; exceeded time limit {l:?}")),
            (o, _) => o,
        };
        let (tag, detail) = match &outcome {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("{tag} criterion {id:>2} {name} ({:.1}s): {detail}", elapsed.as_secs_f64());
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
    println!("all 13 criteria passed");
}
