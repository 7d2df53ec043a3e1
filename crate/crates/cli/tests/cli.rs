use std::path::Path;
use std::process::{Command, Output};
use std::time::Instant;

fn pdfnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pdfnet"))
        .args(args)
        .env_remove("PDFNET_NUM_THREADS")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn summarize_prints_settings_then_costs() {
    let o = pdfnet(&["summarize", "--variant", "pdfnet3"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.starts_with("# resolved configuration\n"));
    assert!(out.contains("variant = pdfnet3"));
    assert!(out.contains("[64, 160, 256, 352, 448]"));
    assert!(out.contains("164652"));
    assert!(out.contains("fusion width            100"));
}

#[test]
fn summarize_all_is_fast() {
    let t = Instant::now();
    let o = pdfnet(&["summarize", "--all"]);
    assert!(t.elapsed().as_secs_f64() < 1.0);
    assert_eq!(code(&o), 0);
    let lines: Vec<String> = stdout(&o).lines().filter(|l| l.contains("@512x1024")).map(String::from).collect();
    assert_eq!(lines.len(), 12);
    assert!(lines[0].starts_with("pdfnet3,164652,"));
}

#[test]
fn unknown_variant_lists_the_valid_ones() {
    let o = pdfnet(&["summarize", "--variant", "pdfnet4"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("pdfnet12-2s"), "{}", stderr(&o));
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(code(&pdfnet(&["summarize", "--no-such-flag"])), 2);
    assert_eq!(code(&pdfnet(&["gradcheck", "--precision", "32"])), 2);
    assert_eq!(code(&pdfnet(&["summarize", "--input", "12x12"])), 1);
    assert_eq!(code(&pdfnet(&["--threads", "0", "summarize"])), 2);
    let o = Command::new(env!("CARGO_BIN_EXE_pdfnet"))
        .args(["summarize"])
        .env("PDFNET_NUM_THREADS", "many")
        .output()
        .unwrap();
    assert_eq!(code(&o), 2);
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.conf");
    std::fs::write(&cfg, "# comment\nvariant = pdfnet6\ninput = 256x512\n").unwrap();
    let c = cfg.to_str().unwrap();

    let o = pdfnet(&["--config", c, "summarize"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).contains("variant = pdfnet6"));
    assert!(stdout(&o).contains("input = 256x512"));

    let o = pdfnet(&["--config", c, "summarize", "--variant", "dfnet3"]);
    assert!(stdout(&o).contains("variant = dfnet3"));

    std::fs::write(&cfg, "variant = pdfnet6\nwidth = 3\n").unwrap();
    let o = pdfnet(&["--config", c, "summarize"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("width"), "{}", stderr(&o));
}

#[test]
fn gradcheck_passes_and_names_a_detached_branch() {
    let base = ["gradcheck", "--variant", "pdfnet3-2s", "--classes", "3", "--size", "16x16", "--samples", "30"];
    let o = pdfnet(&base);
    assert_eq!(code(&o), 0, "{}{}", stdout(&o), stderr(&o));
    assert!(stdout(&o).contains("result: pass"));

    let mut args = base.to_vec();
    args.extend(["--detach-branch", "1"]);
    let o = pdfnet(&args);
    assert_eq!(code(&o), 1);
    assert!(stdout(&o).contains("no gradient: decoder.proj1"), "{}", stdout(&o));
}

fn train_toy(dir: &Path, tag: &str) -> (String, Vec<u8>) {
    let manifest = dir.join("data/manifest.tsv");
    let log = dir.join(format!("{tag}.csv"));
    let ckpt = dir.join(format!("{tag}.ckpt"));
    let o = pdfnet(&[
        "train",
        "--variant",
        "pdfnet3-2s",
        "--classes",
        "4",
        "--manifest",
        manifest.to_str().unwrap(),
        "--val-manifest",
        manifest.to_str().unwrap(),
        "--epochs",
        "3",
        "--batch-size",
        "2",
        "--log",
        log.to_str().unwrap(),
        "--checkpoint",
        ckpt.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}{}", stdout(&o), stderr(&o));
    assert!(stdout(&o).contains("train pixel accuracy:"));
    (std::fs::read_to_string(log).unwrap(), std::fs::read(ckpt).unwrap())
}

#[test]
fn synth_train_eval_predict() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let o = pdfnet(&["synth", "--count", "3", "--size", "16x32", "--classes", "4", "--out", data.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(data.join("manifest.tsv").exists());

    let (log_a, ckpt_a) = train_toy(dir.path(), "a");
    let (log_b, ckpt_b) = train_toy(dir.path(), "b");
    assert_eq!(log_a, log_b);
    assert!(ckpt_a == ckpt_b, "checkpoints differ");
    let lines: Vec<&str> = log_a.lines().collect();
    assert_eq!(lines[0], "epoch,train_loss,val_loss,val_miou,lr");
    assert_eq!(lines.len(), 4);

    let ckpt = dir.path().join("a.ckpt");
    let manifest = data.join("manifest.tsv");
    let csv = dir.path().join("iou.csv");
    let o = pdfnet(&[
        "eval",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--manifest",
        manifest.to_str().unwrap(),
        "--csv",
        csv.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).contains("pixel accuracy:"));
    assert!(std::fs::read_to_string(&csv).unwrap().starts_with("network,class0,class1,class2,class3,average"));

    let o = pdfnet(&["eval", "--checkpoint", ckpt.to_str().unwrap(), "--manifest", manifest.to_str().unwrap(), "--classes", "20"]);
    assert_eq!(code(&o), 2);

    let out = dir.path().join("pred");
    let o = pdfnet(&["predict", "--checkpoint", ckpt.to_str().unwrap(), "--manifest", manifest.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let pred = std::fs::read(out.join("0000.pgm")).unwrap();
    assert!(pred.starts_with(b"P5\n32 16\n255\n"));
    assert!(pred[pred.len() - 16 * 32..].iter().all(|&v| v < 4));
}

#[test]
fn missing_checkpoint_is_a_runtime_error() {
    let o = pdfnet(&["eval", "--checkpoint", "/nonexistent/x.ckpt", "--manifest", "m.tsv"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("/nonexistent/x.ckpt"));
}
