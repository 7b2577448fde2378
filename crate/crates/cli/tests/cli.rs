use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn occ(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_occ")).args(args).output().unwrap()
}

fn write_config(dir: &Path, seeds: &str) -> String {
    let text = format!(
        "[pipeline]\noutput_dir = {}\nseeds = {seeds}\n\n\
         [dataset]\nkind = gaussian_blobs\ndim = 6\nn_train = 80\nn_test_in = 30\nn_test_out = 30\n\n\
         [network]\nencoder_widths = 16,8\nhead_depth = 1\nhead_hidden_width = 16\nhead_output_dim = 8\n\n\
         [objective]\nkind = contrastive\nbatch_size = 16\n\n[optimizer]\nsteps = 40\n\n\
         [detector]\nkind = ocsvm\nnu = 0.2\n\n\
         [evaluation]\nmmd_batch_sizes = 8,16\nmmd_steps = 10\nig_steps = 8\nexplain_samples = 0,1\n",
        dir.join("run").display()
    );
    let path = dir.join("cfg.ini");
    fs::write(&path, text).unwrap();
    path.display().to_string()
}

#[test]
fn staged_run_matches_all() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "1,2");
    for cmd in ["gen-data", "train", "embed", "fit", "score", "mmd", "eval", "explain"] {
        let out = occ(&[cmd, "--config", &cfg]);
        assert!(out.status.success(), "{cmd}: {}", String::from_utf8_lossy(&out.stderr));
    }
    let staged = fs::read(dir.path().join("run/summary.txt")).unwrap();
    let other = dir.path().join("other");
    let out = occ(&["all", "--config", &cfg, "--output-dir", other.to_str().unwrap()]);
    assert!(out.status.success());
    assert_eq!(fs::read(other.join("summary.txt")).unwrap(), staged);
    assert_eq!(out.stdout, staged);
    for f in ["seed_1/model.occ", "seed_2/detector.ocd", "mmd.csv", "explain/sample_1_ig.csv"] {
        assert_eq!(fs::read(other.join(f)).unwrap(), fs::read(dir.path().join("run").join(f)).unwrap(), "{f}");
    }
}

#[test]
fn seed_sweep_summary_reports_mean() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "1,2,3,4,5");
    let out = occ(&["all", "--config", &cfg]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = summary.lines().collect();
    let aucs: Vec<f64> = lines[1..6].iter().map(|l| l.rsplit(',').next().unwrap().parse().unwrap()).collect();
    let seeds: Vec<&str> = lines[1..6].iter().map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(seeds, ["1", "2", "3", "4", "5"]);
    let mean_line = lines.iter().find(|l| l.starts_with("test_auc mean ± std: ")).unwrap();
    let reported: f64 = mean_line.trim_start_matches("test_auc mean ± std: ").split(" ± ").next().unwrap().parse().unwrap();
    let mean = aucs.iter().sum::<f64>() / aucs.len() as f64;
    assert!((reported - mean).abs() < 1e-12);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "1");

    let out = occ(&["fit", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("reps_train.oct"));

    let bad = dir.path().join("bad.ini");
    fs::write(&bad, "[optimizer]\nlr = 0.1\nlearnig_rate = 2\n").unwrap();
    let out = occ(&["train", "--config", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 3"));

    let out = occ(&["gen-data", "--config", dir.path().join("none.ini").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(occ(&["embed", "--config", &cfg, "--split", "sideways"]).status.code(), Some(2));

    assert!(occ(&["gen-data", "--config", &cfg]).status.success());
    fs::write(dir.path().join("run/.lock"), b"").unwrap();
    assert_eq!(occ(&["gen-data", "--config", &cfg]).status.code(), Some(1));
}

#[test]
fn external_representations() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "1");
    let mut csv = String::from("a,b,c\n");
    for i in 0..40 {
        let t = i as f64 / 40.0;
        csv += &format!("{},{},{}\n", t.cos(), t.sin(), 0.1 * t);
    }
    let reps = dir.path().join("reps.csv");
    fs::write(&reps, csv).unwrap();
    let oct = dir.path().join("reps.oct");
    assert!(occ(&["ingest", "--input", reps.to_str().unwrap(), "--out", oct.to_str().unwrap()]).status.success());

    let det = dir.path().join("ext.ocd");
    let out = occ(&["fit", "--config", &cfg, "--detector", "gde", "--reps", oct.to_str().unwrap(), "--out", det.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let scores = dir.path().join("scores.csv");
    let out = occ(&[
        "score", "--config", &cfg, "--detector", det.to_str().unwrap(), "--reps", reps.to_str().unwrap(), "--out",
        scores.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(&scores).unwrap();
    assert_eq!(text.lines().count(), 41);
    assert!(text.starts_with("sample_id,score\n0,"));

    let embedded = dir.path().join("emb.oct");
    assert!(occ(&["all", "--config", &cfg]).status.success());
    let out = occ(&[
        "embed", "--config", &cfg, "--model", dir.path().join("run/seed_1/model.occ").to_str().unwrap(), "--split",
        "test", "--out", embedded.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    assert_eq!(fs::read(&embedded).unwrap(), fs::read(dir.path().join("run/seed_1/reps_test.oct")).unwrap());
}

#[test]
fn explain_prints_heatmaps() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "1");
    assert!(occ(&["all", "--config", &cfg]).status.success());
    let out = occ(&["explain", "--config", &cfg, "--samples", "2", "--heatmap"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("sample 2 "));
    assert!(text.contains("integrated gradients"));
}
