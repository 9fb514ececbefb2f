//! End-to-end exercise of every subcommand at tiny scale through the real
//! binary, including the documented error paths.

use std::path::Path;
use std::process::Command;

fn dfshield() -> Command {
    Command::new(env!("CARGO_BIN_EXE_dfshield"))
}

fn run_ok(cmd: &mut Command) -> String {
    let out = cmd.output().expect("spawn dfshield");
    let stdout = String::from_utf8_lossy(&out.stdout).into_owned();
    let stderr = String::from_utf8_lossy(&out.stderr).into_owned();
    assert!(
        out.status.success(),
        "command failed\nstdout:\n{stdout}\nstderr:\n{stderr}"
    );
    stdout
}

fn run_err(cmd: &mut Command) -> String {
    let out = cmd.output().expect("spawn dfshield");
    assert!(
        !out.status.success(),
        "command unexpectedly succeeded: {}",
        String::from_utf8_lossy(&out.stdout)
    );
    String::from_utf8_lossy(&out.stderr).into_owned()
}

struct Workspace {
    _dir: tempfile::TempDir,
    root: std::path::PathBuf,
}

impl Workspace {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        Self { _dir: dir, root }
    }

    fn path(&self, name: &str) -> std::path::PathBuf {
        self.root.join(name)
    }

    fn s(&self, name: &str) -> String {
        self.path(name).to_string_lossy().into_owned()
    }
}

/// Build the tiny shared fixture: corpus + manifest + all three models.
fn prepare_trained(ws: &Workspace) {
    run_ok(dfshield().args([
        "prepare",
        "--data-dir",
        &ws.s("corpus"),
        "--out-manifest",
        &ws.s("manifest.tsv"),
        "--synthetic",
        "--identities",
        "2",
        "--images-per-identity",
        "36",
        "--size",
        "32",
        "--seed",
        "5",
    ]));
    run_ok(dfshield().args([
        "train-substitute",
        "--data-dir",
        &ws.s("corpus"),
        "--manifest",
        &ws.s("manifest.tsv"),
        "--out",
        &ws.s("sub.ckpt"),
        "--size",
        "32",
        "--epochs",
        "2",
        "--batch-size",
        "8",
        "--channels",
        "4,8",
        "--seed",
        "7",
    ]));
    run_ok(dfshield().args([
        "train-target",
        "--data-dir",
        &ws.s("corpus"),
        "--manifest",
        &ws.s("manifest.tsv"),
        "--out",
        &ws.s("target.ckpt"),
        "--size",
        "32",
        "--epochs",
        "2",
        "--batch-size",
        "8",
        "--channels",
        "4,8",
        "--dense-dim",
        "64",
        "--seed",
        "9",
    ]));
    run_ok(dfshield().args([
        "train-tcagan",
        "--substitute",
        &ws.s("sub.ckpt"),
        "--data-dir",
        &ws.s("corpus"),
        "--manifest",
        &ws.s("manifest.tsv"),
        "--out",
        &ws.s("gan.ckpt"),
        "--size",
        "32",
        "--epochs",
        "1",
        "--batch-size",
        "8",
        "--seed",
        "11",
    ]));
}

#[test]
fn full_pipeline_runs_and_artifacts_exist() {
    let ws = Workspace::new();
    prepare_trained(&ws);

    // attack with the full method
    let out = run_ok(dfshield().args([
        "attack",
        "--substitute",
        &ws.s("sub.ckpt"),
        "--tcagan",
        &ws.s("gan.ckpt"),
        "--data-dir",
        &ws.s("corpus"),
        "--manifest",
        &ws.s("manifest.tsv"),
        "--out-dir",
        &ws.s("adv"),
        "--size",
        "32",
        "--seed",
        "13",
    ]));
    assert!(out.contains("tcagan+postreg"));
    assert!(ws.path("adv/perturbation_stats.csv").exists());
    assert!(ws.path("adv/audit.txt").exists());
    assert!(ws.path("adv/attack_config.json").exists());

    // evaluate the attack
    let out = run_ok(dfshield().args([
        "evaluate",
        "--target",
        &ws.s("target.ckpt"),
        "--clean-dir",
        &ws.s("corpus"),
        "--adv-dir",
        &ws.s("adv"),
        "--manifest",
        &ws.s("manifest.tsv"),
        "--out-dir",
        &ws.s("eval"),
        "--size",
        "32",
        "--method-label",
        "ours",
        "--seed",
        "17",
    ]));
    assert!(out.contains("black-box audit: 0 queries before evaluation"));
    assert!(ws.path("eval/per_image.csv").exists());
    assert!(ws.path("eval/summary.txt").exists());
    assert!(ws.path("eval/swap_ssim_delta_hist.png").exists());
    let summary = std::fs::read_to_string(ws.path("eval/summary.txt")).unwrap();
    assert!(summary.contains("Referenced image quality"));
    assert!(summary.contains("Non-referenced image quality"));

    // the stats sidecar respects the quantized budget
    let stats = std::fs::read_to_string(ws.path("adv/perturbation_stats.csv")).unwrap();
    for line in stats.lines().skip(1) {
        let quantized: f64 = line.rsplit(',').next().unwrap().parse().unwrap();
        assert!(quantized <= 0.03 + 1e-9, "{line}");
    }
}

#[test]
fn prepare_is_deterministic_and_rejects_single_identity() {
    let ws = Workspace::new();
    let args = |manifest: &str| {
        vec![
            "prepare".to_string(),
            "--data-dir".into(),
            ws.s("corpus"),
            "--out-manifest".into(),
            ws.s(manifest),
            "--synthetic".into(),
            "--identities".into(),
            "2".into(),
            "--images-per-identity".into(),
            "6".into(),
            "--size".into(),
            "32".into(),
            "--seed".into(),
            "21".into(),
        ]
    };
    run_ok(dfshield().args(args("m1.tsv")));
    run_ok(dfshield().args(args("m2.tsv")));
    let m1 = std::fs::read_to_string(ws.path("m1.tsv")).unwrap();
    let m2 = std::fs::read_to_string(ws.path("m2.tsv")).unwrap();
    assert_eq!(m1, m2, "same seed must give identical manifests");

    // single-identity corpus cannot support swap training
    let ws2 = Workspace::new();
    let err = run_err(dfshield().args([
        "prepare",
        "--data-dir",
        &ws2.s("corpus"),
        "--out-manifest",
        &ws2.s("m.tsv"),
        "--synthetic",
        "--identities",
        "1",
        "--images-per-identity",
        "6",
        "--size",
        "32",
    ]));
    assert!(err.contains("at least 2 identities"), "{err}");
}

#[test]
fn attack_routes_baselines_and_flags() {
    let ws = Workspace::new();
    prepare_trained(&ws);

    // baseline routing does not need the tcagan checkpoint
    let out = run_ok(dfshield().args([
        "attack",
        "--substitute",
        &ws.s("sub.ckpt"),
        "--data-dir",
        &ws.s("corpus"),
        "--manifest",
        &ws.s("manifest.tsv"),
        "--out-dir",
        &ws.s("adv_pgd"),
        "--size",
        "32",
        "--baseline",
        "pgd",
    ]));
    assert!(out.contains("pgd"));

    // raw generator output
    let out = run_ok(dfshield().args([
        "attack",
        "--substitute",
        &ws.s("sub.ckpt"),
        "--tcagan",
        &ws.s("gan.ckpt"),
        "--data-dir",
        &ws.s("corpus"),
        "--manifest",
        &ws.s("manifest.tsv"),
        "--out-dir",
        &ws.s("adv_raw"),
        "--size",
        "32",
        "--no-postreg",
    ]));
    assert!(out.contains("with tcagan ("));

    // missing tcagan checkpoint for the main method is an error
    let err = run_err(dfshield().args([
        "attack",
        "--substitute",
        &ws.s("sub.ckpt"),
        "--data-dir",
        &ws.s("corpus"),
        "--manifest",
        &ws.s("manifest.tsv"),
        "--out-dir",
        &ws.s("adv_x"),
        "--size",
        "32",
    ]));
    assert!(err.contains("--tcagan checkpoint is required"), "{err}");

    // an empty attack list (manifest with no eval split) is a no-op warning
    run_ok(dfshield().args([
        "prepare",
        "--data-dir",
        &ws.s("corpus"),
        "--out-manifest",
        &ws.s("manifest_noeval.tsv"),
        "--frac-substitute",
        "0.5",
        "--frac-tcagan",
        "0.5",
        "--frac-eval",
        "0.0",
        "--size",
        "32",
        "--seed",
        "5",
    ]));
    let out = run_ok(dfshield().args([
        "attack",
        "--substitute",
        &ws.s("sub.ckpt"),
        "--data-dir",
        &ws.s("corpus"),
        "--manifest",
        &ws.s("manifest_noeval.tsv"),
        "--out-dir",
        &ws.s("adv_empty"),
        "--size",
        "32",
        "--noise",
    ]));
    assert!(out.contains("no images to attack"), "{out}");
}

#[test]
fn eps_mismatch_with_generator_is_rejected() {
    let ws = Workspace::new();
    prepare_trained(&ws);
    let err = run_err(dfshield().args([
        "attack",
        "--substitute",
        &ws.s("sub.ckpt"),
        "--tcagan",
        &ws.s("gan.ckpt"),
        "--data-dir",
        &ws.s("corpus"),
        "--manifest",
        &ws.s("manifest.tsv"),
        "--out-dir",
        &ws.s("adv"),
        "--size",
        "32",
        "--eps",
        "0.05",
    ]));
    assert!(err.contains("config mismatch"), "{err}");
}

#[test]
fn evaluate_identity_pairs_score_one_and_unmatched_errors() {
    let ws = Workspace::new();
    prepare_trained(&ws);

    // adv dir = clean dir: referenced metrics must be exactly 1.0
    run_ok(dfshield().args([
        "evaluate",
        "--target",
        &ws.s("target.ckpt"),
        "--clean-dir",
        &ws.s("corpus"),
        "--adv-dir",
        &ws.s("corpus"),
        "--manifest",
        &ws.s("manifest.tsv"),
        "--out-dir",
        &ws.s("eval_id"),
        "--size",
        "32",
        "--method-label",
        "identity",
    ]));
    let csv = std::fs::read_to_string(ws.path("eval_id/per_image.csv")).unwrap();
    for line in csv.lines().skip(1) {
        let cols: Vec<&str> = line.split(',').collect();
        let swap_ssim: f64 = cols[3].parse().unwrap();
        let swap_fsim: f64 = cols[4].parse().unwrap();
        assert_eq!(swap_ssim, 1.0, "{line}");
        assert_eq!(swap_fsim, 1.0, "{line}");
    }

    // a stray adversarial file must be listed as unmatched
    std::fs::create_dir_all(ws.path("advbad/id00")).unwrap();
    std::fs::copy(
        first_png(&ws.path("corpus/id00")),
        ws.path("advbad/id00/zz_stray.png"),
    )
    .unwrap();
    let err = run_err(dfshield().args([
        "evaluate",
        "--target",
        &ws.s("target.ckpt"),
        "--clean-dir",
        &ws.s("corpus"),
        "--adv-dir",
        &ws.s("advbad"),
        "--manifest",
        &ws.s("manifest.tsv"),
        "--out-dir",
        &ws.s("eval_bad"),
        "--size",
        "32",
    ]));
    assert!(err.contains("unmatched filenames"), "{err}");
    assert!(err.contains("zz_stray.png"), "{err}");

    // missing target checkpoint is an error
    let err = run_err(dfshield().args([
        "evaluate",
        "--target",
        &ws.s("nope.ckpt"),
        "--clean-dir",
        &ws.s("corpus"),
        "--adv-dir",
        &ws.s("corpus"),
        "--manifest",
        &ws.s("manifest.tsv"),
        "--out-dir",
        &ws.s("eval_none"),
        "--size",
        "32",
    ]));
    assert!(err.contains("does not exist"), "{err}");
}

fn first_png(dir: &Path) -> std::path::PathBuf {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|e| e == "png"))
        .collect();
    files.sort();
    files.into_iter().next().expect("a png exists")
}

#[test]
fn ablate_runs_matrix_and_rejects_duplicates() {
    let ws = Workspace::new();
    prepare_trained(&ws);

    let matrix = serde_json::json!({
        "variants": [
            {"name": "full", "cycle": "uni", "lvd": true, "prm": true},
            {"name": "no-cycle", "cycle": "none", "lvd": true, "prm": true},
        ]
    });
    std::fs::write(ws.path("matrix.json"), matrix.to_string()).unwrap();
    run_ok(dfshield().args([
        "ablate",
        "--config",
        &ws.s("matrix.json"),
        "--substitute",
        &ws.s("sub.ckpt"),
        "--target",
        &ws.s("target.ckpt"),
        "--data-dir",
        &ws.s("corpus"),
        "--manifest",
        &ws.s("manifest.tsv"),
        "--out-dir",
        &ws.s("ablation"),
        "--size",
        "32",
        "--epochs",
        "1",
    ]));
    let table = std::fs::read_to_string(ws.path("ablation/ablation_table.txt")).unwrap();
    assert!(table.contains("full"));
    assert!(table.contains("no-cycle"));

    let dup = serde_json::json!({
        "variants": [
            {"name": "same"},
            {"name": "same"},
        ]
    });
    std::fs::write(ws.path("dup.json"), dup.to_string()).unwrap();
    let err = run_err(dfshield().args([
        "ablate",
        "--config",
        &ws.s("dup.json"),
        "--substitute",
        &ws.s("sub.ckpt"),
        "--target",
        &ws.s("target.ckpt"),
        "--data-dir",
        &ws.s("corpus"),
        "--manifest",
        &ws.s("manifest.tsv"),
        "--out-dir",
        &ws.s("ablation2"),
        "--size",
        "32",
    ]));
    assert!(err.contains("duplicate variant name"), "{err}");
}
