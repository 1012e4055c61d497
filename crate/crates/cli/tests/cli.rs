use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use thermhand::image::load_mask;

fn thermhand(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_thermhand"))
        .args(args)
        .current_dir(cwd)
        .output()
        .unwrap()
}

fn ok(args: &[&str], cwd: &Path) -> String {
    let out = thermhand(args, cwd);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn generate(dir: &Path, config: &str) {
    fs::write(dir.join("gen.toml"), config).unwrap();
    ok(&["generate", "--config", "gen.toml", "--out", "ds"], dir);
}

#[test]
fn segment_with_calibration_recovers_cold_fingers() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    generate(
        d,
        "num_users = 2\nrng_seed = 5\ncold_finger_prob = 1.0\nimage_size = 192\n",
    );
    let base = "ds/u001_s1_1";
    ok(
        &[
            "segment",
            "--vis",
            &format!("{base}_vis.pgm"),
            "--th",
            &format!("{base}_th.pgm"),
            "--calib",
            &format!("{base}_transform.txt"),
            "--out",
            "seg",
        ],
        d,
    );
    let got = load_mask(d.join("seg/th_mask.pgm")).unwrap();
    let truth = load_mask(d.join(format!("{base}_mask.pgm"))).unwrap();
    let dice = got.dice(&truth).unwrap();
    assert!(dice >= 0.95, "dice {dice}");
    assert!(d.join("seg/masked_th.pgm").exists() && d.join("seg/vis_mask.pgm").exists());
}

#[test]
fn pipeline_runs_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    generate(d, "num_users = 4\nrng_seed = 6\n");
    ok(
        &[
            "extract",
            "--in",
            "ds",
            "--region",
            "hand",
            "--length",
            "60",
            "--spectrum",
            "vis",
            "--out",
            "f.csv",
        ],
        d,
    );
    ok(&["train", "--features", "f.csv", "--out", "m.json"], d);
    let ranking = ok(
        &[
            "identify",
            "--model",
            "m.json",
            "--gallery",
            "f.csv",
            "--probe",
            "3:5:2",
        ],
        d,
    );
    let lines: Vec<&str> = ranking.lines().collect();
    assert_eq!(lines.len(), 5);
    assert!(lines[1].starts_with("1,3,"), "{ranking}");
}

#[test]
fn evaluation_is_reproducible_and_weighted_zero_is_thermal() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    generate(d, "num_users = 4\nrng_seed = 7\nsession_drift = 0.03\n");
    fs::write(
        d.join("eval.toml"),
        "regions = [\"hand\"]\nfeature_lengths = [50]\n",
    )
    .unwrap();
    let eval = |out: &str, scores: &str| {
        ok(
            &[
                "evaluate",
                "--manifest",
                "ds/manifest.csv",
                "--config",
                "eval.toml",
                "--out",
                out,
                "--scores-dir",
                scores,
            ],
            d,
        )
    };
    eval("a.csv", "sa");
    eval("b.csv", "sb");
    assert_eq!(
        fs::read(d.join("a.csv")).unwrap(),
        fs::read(d.join("b.csv")).unwrap()
    );

    let (vis, th) = ("sa/scores_hand_vis_50.csv", "sa/scores_hand_th_50.csv");
    ok(
        &[
            "fuse",
            "--vis-scores",
            vis,
            "--th-scores",
            th,
            "--rule",
            "weighted",
            "--alpha",
            "0",
            "--out",
            "w0.csv",
        ],
        d,
    );
    assert_eq!(
        fs::read_to_string(d.join("w0.csv")).unwrap(),
        fs::read_to_string(d.join(th)).unwrap()
    );

    ok(
        &[
            "fuse",
            "--vis-scores",
            vis,
            "--th-scores",
            th,
            "--rule",
            "weighted",
            "--sweep",
            "0:0.5:1",
            "--truth",
            "sa/truth.csv",
            "--out",
            "sweep.csv",
        ],
        d,
    );
    let sweep = fs::read_to_string(d.join("sweep.csv")).unwrap();
    assert_eq!(sweep.lines().count(), 4);

    ok(
        &[
            "fuse",
            "--vis-scores",
            vis,
            "--th-scores",
            th,
            "--rule",
            "vote",
            "--out",
            "vote.csv",
        ],
        d,
    );
    let vote = fs::read_to_string(d.join("vote.csv")).unwrap();
    assert!(vote.starts_with("probe_id,class_id\n"));
    assert_eq!(vote.lines().count(), 1 + 4 * 5);
}

#[test]
fn failures_exit_nonzero_with_one_line() {
    let dir = tempfile::tempdir().unwrap();
    let out = thermhand(
        &[
            "fuse",
            "--vis-scores",
            "none.csv",
            "--th-scores",
            "none.csv",
            "--rule",
            "mean",
            "--out",
            "x.csv",
        ],
        dir.path(),
    );
    assert!(!out.status.success());
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(
        err.starts_with("error: ") && err.trim_end().lines().count() == 1,
        "{err}"
    );

    let out = thermhand(
        &["segment", "--vis", "a.pgm", "--th", "b.pgm", "--out", "o"],
        dir.path(),
    );
    assert!(
        !out.status.success(),
        "segment without --calib or --register must fail"
    );
}
