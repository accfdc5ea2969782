use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use echodyn::cpda::{decode_ftc, encode_ftc, CpdaShape, CpdaWeights, FeatureClip};

fn echodyn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_echodyn")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn small_phantom(dir: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["phantom", "--t", "8", "--size", "64", "--base-radius", "12", "-o", dir.to_str().unwrap()];
    args.extend_from_slice(extra);
    let out = echodyn(&args);
    assert!(out.status.success(), "{}", stderr(&out));
    out
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    v.sort();
    v
}

#[test]
fn phantom_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let out = small_phantom(&a, &["--seed", "7"]);
    small_phantom(&b, &["--seed", "7"]);
    assert_eq!(stdout(&out).trim(), "ed=0 es=4");
    assert_eq!(dir_bytes(&a), dir_bytes(&b));
    let c = tmp.path().join("c");
    small_phantom(&c, &["--seed", "8"]);
    assert_ne!(dir_bytes(&a), dir_bytes(&c));
}

#[test]
fn three_frame_phantom_reports_extremes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = echodyn(&["phantom", "--t", "3", "-o", tmp.path().to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(stdout(&out).trim(), "ed=0 es=1");
}

#[test]
fn static_phantom_has_identical_masks() {
    let tmp = tempfile::tempdir().unwrap();
    small_phantom(tmp.path(), &["--contraction", "0"]);
    let masks: Vec<Vec<u8>> = (0..8).map(|t| fs::read(tmp.path().join(format!("mask_{t:04}.pgm"))).unwrap()).collect();
    assert!(masks.windows(2).all(|w| w[0] == w[1]));
}

#[test]
fn exit_codes() {
    assert_eq!(echodyn(&["phantom", "--bogus"]).status.code(), Some(2));
    assert_eq!(echodyn(&[]).status.code(), Some(2));
    assert_eq!(echodyn(&["phantom", "--t", "many"]).status.code(), Some(2));
    let missing = echodyn(&["edg", "/nonexistent/sequence", "-o", "/tmp/unused-edg-out"]);
    assert_eq!(missing.status.code(), Some(1));
    assert!(stderr(&missing).starts_with("error:"));
    assert_eq!(echodyn(&["--help"]).status.code(), Some(0));
}

#[test]
fn help_lists_defaults() {
    let phantom = stdout(&echodyn(&["phantom", "--help"]));
    for d in ["[default: 32]", "[default: 128]", "[default: 0.3]", "[default: 7]"] {
        assert!(phantom.contains(d), "phantom help lacks {d}:\n{phantom}");
    }
    let edg = stdout(&echodyn(&["edg", "--help"]));
    for d in ["[default: 4]", "[default: 12]", "[default: 10]", "[default: 16]", "[default: 0.05]", "[default: 200]"] {
        assert!(edg.contains(d), "edg help lacks {d}:\n{edg}");
    }
    let flow = stdout(&echodyn(&["flow", "--help"]));
    assert!(flow.contains("[default: 15]") && flow.contains("[default: 100]"));
}

#[test]
fn edg_outputs_are_shaped_and_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let seq = tmp.path().join("seq");
    small_phantom(&seq, &[]);
    let run = |name: &str| {
        let out_dir = tmp.path().join(name);
        let out = echodyn(&["edg", seq.to_str().unwrap(), "--pca-k", "4", "--centers", "4", "--k2", "3", "-o", out_dir.to_str().unwrap()]);
        assert!(out.status.success(), "{}", stderr(&out));
        assert!(stdout(&out).starts_with("final training residual: "));
        out_dir
    };
    let (a, b) = (run("a"), run("b"));
    for f in ["edg.csv", "pedg.csv", "model.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f} differs");
    }
    let pedg = fs::read_to_string(a.join("pedg.csv")).unwrap();
    let lines: Vec<&str> = pedg.lines().collect();
    assert_eq!(lines.len(), 1 + 7, "header plus T−1 rows");
    assert!(lines[1..].iter().all(|l| l.split(',').count() == 1 + 3));
    assert!(a.join("edg_0000.pgm").exists());
}

#[test]
fn static_sequence_gives_blank_heatmaps() {
    let tmp = tempfile::tempdir().unwrap();
    let seq = tmp.path().join("seq");
    small_phantom(&seq, &["--contraction", "0", "--speckle", "0"]);
    let out_dir = tmp.path().join("out");
    let out = echodyn(&["edg", seq.to_str().unwrap(), "--pca-k", "2", "--centers", "2", "--k2", "2", "-o", out_dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stderr(&out).contains("warning: no motion detected"));
    for t in 0..6 {
        let (_, _, _, px) = echodyn::seqio::decode_pgm(&fs::read(out_dir.join(format!("edg_{t:04}.pgm"))).unwrap()).unwrap();
        assert!(px.iter().all(|&v| v == 0));
    }
}

fn write_clip(path: &Path, clip: &FeatureClip) {
    fs::write(path, encode_ftc(clip)).unwrap();
}

fn ramp_clip(t: usize, c: usize) -> FeatureClip {
    let n = t * 3 * 4 * c;
    FeatureClip::from_vec(t, 3, 4, c, (0..n).map(|i| ((i * 37 % 101) as f64 / 50.0) - 1.0).collect()).unwrap()
}

#[test]
fn cpda_demo_identity_and_seeded_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let clip_path = tmp.path().join("x.ftc");
    let clip = ramp_clip(4, 8);
    write_clip(&clip_path, &clip);
    let weights_path = tmp.path().join("identity.json");
    fs::write(&weights_path, serde_json::to_vec(&CpdaWeights::identity(CpdaShape::default())).unwrap()).unwrap();

    let out_path = tmp.path().join("y.ftc");
    let args = |w: &[&str]| {
        let mut v = vec!["cpda-demo", "--clip", clip_path.to_str().unwrap(), "--ed", "0", "--es", "2", "-o", out_path.to_str().unwrap()];
        v.extend_from_slice(w);
        v.into_iter().map(String::from).collect::<Vec<_>>()
    };
    let out = Command::new(env!("CARGO_BIN_EXE_echodyn")).args(args(&["--weights", weights_path.to_str().unwrap()])).output().unwrap();
    assert!(out.status.success(), "{}", stderr(&out));
    let lines: Vec<String> = stdout(&out).lines().map(String::from).collect();
    assert_eq!(lines.len(), 4);
    assert!(lines.iter().all(|l| l.ends_with("= 0.000000")), "{lines:?}");
    let back = decode_ftc(&fs::read(&out_path).unwrap()).unwrap();
    let stored = decode_ftc(&encode_ftc(&clip)).unwrap();
    assert_eq!(back.data, stored.data);

    let seeded = Command::new(env!("CARGO_BIN_EXE_echodyn")).args(args(&["--seed-weights", "--seed", "3"])).output().unwrap();
    assert!(seeded.status.success(), "{}", stderr(&seeded));
    let again = Command::new(env!("CARGO_BIN_EXE_echodyn")).args(args(&["--seed-weights", "--seed", "3"])).output().unwrap();
    assert_eq!(seeded.stdout, again.stdout);
    assert!(!stdout(&seeded).contains("= 0.000000"));

    let no_mod = Command::new(env!("CARGO_BIN_EXE_echodyn")).args(args(&["--seed-weights", "--alpha", "0"])).output().unwrap();
    assert!(no_mod.status.success(), "{}", stderr(&no_mod));
}

#[test]
fn cpda_demo_names_the_bad_dimension() {
    let tmp = tempfile::tempdir().unwrap();
    let clip_path = tmp.path().join("x.ftc");
    write_clip(&clip_path, &ramp_clip(3, 5));
    let weights_path = tmp.path().join("w.json");
    fs::write(&weights_path, serde_json::to_vec(&CpdaWeights::seeded(CpdaShape::default(), 1)).unwrap()).unwrap();
    let out = echodyn(&[
        "cpda-demo", "--clip", clip_path.to_str().unwrap(), "--weights", weights_path.to_str().unwrap(),
        "--ed", "0", "--es", "1", "-o", tmp.path().join("y.ftc").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("channel"), "{}", stderr(&out));
}

#[test]
fn seed_weights_file_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a.json"), tmp.path().join("b.json"));
    for p in [&a, &b] {
        let out = echodyn(&["seed-weights", "--channels", "4", "--seed", "11", "-o", p.to_str().unwrap()]);
        assert!(out.status.success(), "{}", stderr(&out));
    }
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let w: CpdaWeights = serde_json::from_slice(&fs::read(&a).unwrap()).unwrap();
    assert_eq!(w.shape.channels, 4);
    assert_eq!(echodyn(&["seed-weights", "--heads", "5", "-o", a.to_str().unwrap()]).status.code(), Some(1));
}

#[test]
fn eval_reports() {
    let tmp = tempfile::tempdir().unwrap();
    let gt = tmp.path().join("gt");
    small_phantom(&gt, &[]);
    let report = tmp.path().join("report.json");
    let out = echodyn(&["eval", gt.to_str().unwrap(), gt.to_str().unwrap(), "-r", report.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(stdout(&out).trim(), "dice=1.0000 hd95=0.00 tcd=0.0000");
    assert!(report.exists() && report.with_extension("csv").exists());

    // prediction without any LV
    let pred = tmp.path().join("pred");
    fs::create_dir(&pred).unwrap();
    for t in 0..8 {
        let name = format!("mask_{t:04}.pgm");
        let (w, h, _, mut px) = echodyn::seqio::decode_pgm(&fs::read(gt.join(&name)).unwrap()).unwrap();
        px.iter_mut().filter(|v| **v == 1).for_each(|v| *v = 0);
        fs::write(pred.join(&name), echodyn::seqio::encode_pgm(w, h, &px)).unwrap();
    }
    let out = echodyn(&["eval", pred.to_str().unwrap(), gt.to_str().unwrap(), "-r", report.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stderr(&out).contains("LV: hd95 missing for 8 frame(s)"));
    let json: serde_json::Value = serde_json::from_slice(&fs::read(&report).unwrap()).unwrap();
    let lv = &json["per_label"][0];
    assert_eq!(lv["label"], "LV");
    assert_eq!(lv["mean_dice"], 0.0);
    assert!(lv["mean_hd95"].is_null());

    let short = tmp.path().join("short");
    fs::create_dir(&short).unwrap();
    fs::copy(gt.join("mask_0000.pgm"), short.join("mask_0000.pgm")).unwrap();
    assert_eq!(echodyn(&["eval", short.to_str().unwrap(), gt.to_str().unwrap(), "-r", report.to_str().unwrap()]).status.code(), Some(1));
}

#[test]
fn config_file_overrides_defaults() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("cfg.json");
    fs::write(&cfg, r#"{"seed": 5, "phantom": {"t_count": 6, "width": 64, "height": 64, "base_radius": 12}}"#).unwrap();
    let out = echodyn(&["phantom", "--config", cfg.to_str().unwrap(), "-o", tmp.path().join("p").to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(stdout(&out).trim(), "ed=0 es=3");
    assert!(tmp.path().join("p/frame_0005.pgm").exists());
    assert!(!tmp.path().join("p/frame_0006.pgm").exists());
}

#[test]
fn thread_count_does_not_change_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let seq = tmp.path().join("seq");
    small_phantom(&seq, &[]);
    let outs: Vec<_> = ["1", "4"]
        .iter()
        .map(|n| {
            let dir = tmp.path().join(format!("t{n}"));
            let out = echodyn(&["edg", seq.to_str().unwrap(), "--threads", n, "--pca-k", "4", "--centers", "4", "--k2", "3", "-o", dir.to_str().unwrap()]);
            assert!(out.status.success(), "{}", stderr(&out));
            dir
        })
        .collect();
    assert_eq!(dir_bytes(&outs[0]), dir_bytes(&outs[1]));
}
