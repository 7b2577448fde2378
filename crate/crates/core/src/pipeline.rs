//! Stage-by-stage orchestration of data generation, training, embedding,
//! detection, evaluation and explanation over one output directory.

use std::fmt::{self, Write as _};
use std::fs::{self, OpenOptions};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::augment::{Batch, DistSet};
use crate::config::{DetectorSection, KernelKind, PipelineConfig};
use crate::data::{self, clean_subset, Dataset};
use crate::detectors::{
    fit_gde, fit_kde, fit_ocsvm, gamma_heuristic, rotation_surrogate_score, Detector, DetectorKind, KdeModel, KernelSpec,
};
use crate::error::{Error, Result};
use crate::evaluate::{auc, ensemble_scores, mean_std, mmd_sweep_csv, mmd_to_uniform, EvalReport, ScoredSet};
use crate::explain::{ascii_heatmap, grid_csv, integrated_gradients, kde_input_gradient, KdeScore};
use crate::io;
use crate::network::ModelBundle;
use crate::optim::{self, trace_csv, Objective};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Gen,
    Train,
    Embed,
    Fit,
    Score,
    Eval,
    Mmd,
    Explain,
    All,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Gen => "gen",
            Stage::Train => "train",
            Stage::Embed => "embed",
            Stage::Fit => "fit",
            Stage::Score => "score",
            Stage::Eval => "eval",
            Stage::Mmd => "mmd",
            Stage::Explain => "explain",
            Stage::All => "all",
        })
    }
}

impl FromStr for Stage {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "gen" => Stage::Gen,
            "train" => Stage::Train,
            "embed" => Stage::Embed,
            "fit" => Stage::Fit,
            "score" => Stage::Score,
            "eval" => Stage::Eval,
            "mmd" => Stage::Mmd,
            "explain" => Stage::Explain,
            "all" => Stage::All,
            _ => return Err(Error::invalid(format!("unknown stage '{s}'"))),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            _ => Err(Error::invalid(format!("unknown split '{s}'"))),
        }
    }
}

/// Exclusive ownership of an output directory for the lifetime of the guard.
pub struct DirLock {
    path: PathBuf,
}

impl DirLock {
    pub fn acquire(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        let path = dir.join(".lock");
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(DirLock { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::Locked(path)),
            Err(e) => Err(e.into()),
        }
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

/// Fits the configured detector on `reps`.
pub fn fit_detector(section: &DetectorSection, reps: &Tensor) -> Result<Detector> {
    let gamma = || match section.gamma {
        Some(g) => Ok(g),
        None => gamma_heuristic(reps, section.gamma_variance, section.gamma_scale),
    };
    Ok(match section.kind {
        DetectorKind::Ocsvm => {
            let kernel = match section.kernel {
                KernelKind::Linear => KernelSpec::Linear,
                KernelKind::Rbf => KernelSpec::Rbf { gamma: gamma()? },
            };
            Detector::Ocsvm(fit_ocsvm(reps, section.nu, kernel)?)
        }
        DetectorKind::Kde => Detector::Kde(fit_kde(reps, Some(gamma()?))?),
        DetectorKind::Gde => Detector::Gde(fit_gde(reps)?),
    })
}

/// Writes `f(x)` of one data split with the model at `model_path`.
pub fn embed_split(model_path: &Path, data_dir: &Path, split: Split, out: &Path) -> Result<Tensor> {
    let model = ModelBundle::load(model_path)?;
    let ds = Dataset::read(data_dir)?;
    let x = match split {
        Split::Train => &ds.train,
        Split::Test => &ds.test,
    };
    let reps = model.forward_f(&x.to_tensor())?;
    io::write_tensor(out, &reps)?;
    Ok(reps)
}

/// AUC rows of a seed sweep.
#[derive(Clone, Debug, PartialEq)]
pub struct SeedRow {
    pub seed: u64,
    pub train_auc: f64,
    pub test_auc: f64,
}

/// Per-seed AUCs plus the test scores needed for ensembling.
#[derive(Clone, Debug, PartialEq)]
pub struct SeedSweep {
    pub rows: Vec<SeedRow>,
    /// Test-split scores, one vector per seed.
    pub test_scores: Vec<Vec<f64>>,
    pub test_labels: Vec<bool>,
}

pub struct Pipeline {
    pub config: PipelineConfig,
}

impl Pipeline {
    pub fn new(config: PipelineConfig) -> Self {
        Pipeline { config }
    }

    pub fn root(&self) -> &Path {
        &self.config.output_dir
    }

    pub fn data_dir(&self) -> PathBuf {
        self.root().join("data")
    }

    pub fn seed_dir(&self, seed: u64) -> PathBuf {
        self.root().join(format!("seed_{seed}"))
    }

    pub fn model_path(&self, seed: u64) -> PathBuf {
        self.seed_dir(seed).join("model.occ")
    }

    pub fn reps_path(&self, seed: u64, split: Split) -> PathBuf {
        self.seed_dir(seed).join(format!("reps_{split}.oct"))
    }

    pub fn detector_path(&self, seed: u64) -> PathBuf {
        self.seed_dir(seed).join("detector.ocd")
    }

    pub fn scores_path(&self, seed: u64, split: Split) -> PathBuf {
        self.seed_dir(seed).join(format!("scores_{split}.csv"))
    }

    pub fn surrogate_path(&self, seed: u64) -> PathBuf {
        self.seed_dir(seed).join("scores_surrogate_test.csv")
    }

    pub fn summary_path(&self) -> PathBuf {
        self.root().join("summary.txt")
    }

    pub fn mmd_path(&self) -> PathBuf {
        self.root().join("mmd.csv")
    }

    pub fn explain_dir(&self) -> PathBuf {
        self.root().join("explain")
    }

    /// Runs one stage over every configured seed while holding the directory lock.
    pub fn run(&self, stage: Stage) -> Result<()> {
        let _lock = DirLock::acquire(self.root())?;
        let seeds = self.config.seeds.clone();
        match stage {
            Stage::Gen => self.gen(),
            Stage::Train => seeds.iter().try_for_each(|&s| self.train(s)),
            Stage::Embed => seeds.iter().try_for_each(|&s| self.embed(s)),
            Stage::Fit => seeds.iter().try_for_each(|&s| self.fit(s)),
            Stage::Score => seeds.iter().try_for_each(|&s| self.score(s)),
            Stage::Eval => self.eval().map(|_| ()),
            Stage::Mmd => self.mmd().map(|_| ()),
            Stage::Explain => self.explain(),
            Stage::All => {
                self.gen()?;
                for &s in &seeds {
                    self.train(s)?;
                    self.embed(s)?;
                    self.fit(s)?;
                    self.score(s)?;
                }
                self.mmd()?;
                self.eval()?;
                self.explain()
            }
        }
    }

    pub fn gen(&self) -> Result<()> {
        data::gen_data(&self.config.dataset, &self.data_dir()).map(|_| ())
    }

    fn dataset(&self) -> Result<Dataset> {
        Dataset::read(&self.data_dir())
    }

    pub fn train(&self, seed: u64) -> Result<()> {
        let ds = self.dataset()?;
        let model = ModelBundle::init(self.config.network_config(seed))?;
        let mut run = self.config.train_run(seed);
        if run.checkpoint_every.is_some() {
            run.checkpoint_dir = Some(self.seed_dir(seed).join("checkpoints"));
        }
        let out = optim::train(&run, model, &ds.train)?;
        out.model.save(&self.model_path(seed))?;
        io::write_atomic(&self.seed_dir(seed).join("trace.csv"), trace_csv(&out.trace).as_bytes())
    }

    pub fn embed(&self, seed: u64) -> Result<()> {
        for split in [Split::Train, Split::Test] {
            embed_split(&self.model_path(seed), &self.data_dir(), split, &self.reps_path(seed, split))?;
        }
        Ok(())
    }

    pub fn fit(&self, seed: u64) -> Result<()> {
        let mut reps = io::read_tensor(&self.reps_path(seed, Split::Train))?;
        if let Some(k) = self.config.detector.train_subset {
            let ds = self.dataset()?;
            reps = reps.select_rows(&clean_subset(&ds.train_inlier, k, seed)?)?;
        }
        fit_detector(&self.config.detector, &reps)?.save(&self.detector_path(seed))
    }

    pub fn score(&self, seed: u64) -> Result<()> {
        let detector = Detector::load(&self.detector_path(seed))?;
        let ds = self.dataset()?;
        for (split, labels) in [(Split::Train, &ds.train_inlier), (Split::Test, &ds.test_inlier)] {
            let reps = io::read_tensor(&self.reps_path(seed, split))?;
            let set = ScoredSet::new(detector.score(&reps)?, labels.clone())?;
            io::write_atomic(&self.scores_path(seed, split), EvalReport::new(set).to_csv().as_bytes())?;
        }
        if let (Some(variant), Batch::Images(test)) = (self.config.evaluation.surrogate, &ds.test) {
            let model = ModelBundle::load(&self.model_path(seed))?;
            let set = ScoredSet::new(rotation_surrogate_score(&model, test, variant)?, ds.test_inlier.clone())?;
            io::write_atomic(&self.surrogate_path(seed), EvalReport::new(set).to_csv().as_bytes())?;
        }
        Ok(())
    }

    fn report(&self, path: &Path) -> Result<EvalReport> {
        let bytes = io::read_artifact(path)?;
        EvalReport::from_csv(&String::from_utf8_lossy(&bytes))
    }

    /// Train AUC ranks training inliers against the test outliers; test AUC is
    /// the labelled test split.
    pub fn seed_rows(&self) -> Result<SeedSweep> {
        let mut rows = Vec::new();
        let mut test_scores = Vec::new();
        let mut labels = Vec::new();
        for &seed in &self.config.seeds {
            let train = self.report(&self.scores_path(seed, Split::Train))?;
            let test = self.report(&self.scores_path(seed, Split::Test))?;
            let mut scores = Vec::new();
            let mut lab = Vec::new();
            for (s, &l) in train.set.scores.iter().zip(&train.set.labels) {
                if l {
                    scores.push(*s);
                    lab.push(true);
                }
            }
            for (s, &l) in test.set.scores.iter().zip(&test.set.labels) {
                if !l {
                    scores.push(*s);
                    lab.push(false);
                }
            }
            rows.push(SeedRow {
                seed,
                train_auc: auc(&ScoredSet::new(scores, lab)?)?,
                test_auc: test.auc()?,
            });
            labels = test.set.labels.clone();
            test_scores.push(test.set.scores);
        }
        Ok(SeedSweep { rows, test_scores, test_labels: labels })
    }

    /// Writes `summary.txt` and returns its text.
    pub fn eval(&self) -> Result<String> {
        let SeedSweep { rows, test_scores, test_labels: labels } = self.seed_rows()?;
        let mut out = String::from("seed,train_auc,test_auc\n");
        for r in &rows {
            let _ = writeln!(out, "{},{},{}", r.seed, r.train_auc, r.test_auc);
        }
        let (tm, ts) = mean_std(&rows.iter().map(|r| r.train_auc).collect::<Vec<_>>());
        let (m, s) = mean_std(&rows.iter().map(|r| r.test_auc).collect::<Vec<_>>());
        let _ = writeln!(out, "train_auc mean ± std: {tm} ± {ts}");
        let _ = writeln!(out, "test_auc mean ± std: {m} ± {s}");
        if rows.len() > 1 {
            let combined = ensemble_scores(&test_scores, self.config.evaluation.ensemble)?;
            let a = auc(&ScoredSet::new(combined, labels)?)?;
            let _ = writeln!(out, "ensemble_test_auc ({}): {a}", self.config.evaluation.ensemble);
        }
        if self.config.evaluation.surrogate.is_some() {
            let mut aucs = Vec::new();
            for &seed in &self.config.seeds {
                if let Ok(r) = self.report(&self.surrogate_path(seed)) {
                    aucs.push(r.auc()?);
                }
            }
            if !aucs.is_empty() {
                let (sm, ss) = mean_std(&aucs);
                let _ = writeln!(out, "surrogate_test_auc mean ± std: {sm} ± {ss}");
            }
        }
        if let Ok(bytes) = io::read_artifact(&self.mmd_path()) {
            for line in String::from_utf8_lossy(&bytes).lines().skip(1) {
                if let Some((tag, v)) = line.split_once(',') {
                    let _ = writeln!(out, "mmd {tag}: {v}");
                }
            }
        }
        io::write_atomic(&self.summary_path(), out.as_bytes())?;
        Ok(out)
    }

    /// Batch-size sweep of vanilla contrastive training; MMD to the uniform
    /// sphere of `f` and `g∘f` on the training split.
    pub fn mmd(&self) -> Result<Vec<(String, f64)>> {
        let ds = self.dataset()?;
        let seed = self.config.seeds[0];
        let x = ds.train.to_tensor();
        let mmd_cfg = self.config.mmd_config();
        let mut rows = Vec::new();
        for &b in &self.config.evaluation.mmd_batch_sizes {
            let mut run = self.config.train_run(seed);
            run.objective = Objective::Contrastive;
            run.plan.dist_set = DistSet::identity();
            run.batch_size = b;
            run.steps = Some(self.config.evaluation.mmd_steps);
            run.checkpoint_every = None;
            let model = ModelBundle::init(self.config.network_config(seed))?;
            let trained = optim::train(&run, model, &ds.train)?.model;
            let f = trained.forward_f(&x)?;
            let gf = trained.forward_gf(&x, crate::autodiff::Mode::Eval)?;
            rows.push((format!("f@{b}"), mmd_to_uniform(&f, &mmd_cfg)?));
            rows.push((format!("gf@{b}"), mmd_to_uniform(&gf, &mmd_cfg)?));
        }
        io::write_atomic(&self.mmd_path(), mmd_sweep_csv(&rows).as_bytes())?;
        Ok(rows)
    }

    /// Gradient and integrated-gradients maps of the KDE score for the listed test samples.
    pub fn explain(&self) -> Result<()> {
        let seed = self.config.seeds[0];
        let model = ModelBundle::load(&self.model_path(seed))?;
        let reps = io::read_tensor(&self.reps_path(seed, Split::Train))?;
        let kde = match Detector::load(&self.detector_path(seed)) {
            Ok(Detector::Kde(k)) => k,
            _ => {
                let d = &self.config.detector;
                let g = d.gamma.map_or_else(|| gamma_heuristic(&reps, d.gamma_variance, d.gamma_scale), Ok)?;
                fit_kde(&reps, Some(g))?
            }
        };
        let ds = self.dataset()?;
        let test = ds.test.to_tensor();
        let width = match &ds.test {
            Batch::Images(img) => img.size(),
            Batch::Vectors(t) => t.cols(),
        };
        let dir = self.explain_dir();
        for &id in &self.config.evaluation.explain_samples {
            if id >= test.rows() {
                return Err(Error::config(format!("explain sample {id} outside the test split of {}", test.rows())));
            }
            let x = Tensor::matrix(1, test.cols(), test.row(id).to_vec())?;
            let (grad, ig) = self.attributions(&model, &kde, &x)?;
            io::write_atomic(&dir.join(format!("sample_{id}_gradient.csv")), grid_csv(&grad.values, width)?.as_bytes())?;
            io::write_atomic(&dir.join(format!("sample_{id}_ig.csv")), grid_csv(&ig.values, width)?.as_bytes())?;
            let mut text = format!("sample {id} (inlier: {})\nscore {}\n\ngradient\n", ds.test_inlier[id], grad.score_at_input);
            text += &ascii_heatmap(&grad.values, width)?;
            let _ = writeln!(text, "\nintegrated gradients (completeness gap {})", ig.completeness_gap().unwrap_or(0.0));
            text += &ascii_heatmap(&ig.values, width)?;
            io::write_atomic(&dir.join(format!("sample_{id}_heatmap.txt")), text.as_bytes())?;
        }
        Ok(())
    }

    fn attributions(
        &self,
        model: &ModelBundle,
        kde: &KdeModel,
        x: &Tensor,
    ) -> Result<(crate::explain::Attribution, crate::explain::Attribution)> {
        let mode = self.config.evaluation.explain_mode;
        let grad = kde_input_gradient(model, kde, x, mode)?;
        let score = KdeScore { model: Some(model), kde, mode };
        let ig = integrated_gradients(&score, x, &Tensor::zeros(x.shape()), self.config.evaluation.ig_steps)?;
        Ok((grad, ig))
    }
}

/// Runs `stage` for `config`.
pub fn run_pipeline(config: &PipelineConfig, stage: Stage) -> Result<()> {
    config.validate()?;
    Pipeline::new(config.clone()).run(stage)
}
