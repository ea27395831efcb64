use std::path::Path;
use std::process::{Command, Output};

fn epishear(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_epishear"))
        .args(args)
        .env("EPISHEAR_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = epishear(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn fails(args: &[&str]) -> String {
    let out = epishear(args);
    assert!(!out.status.success(), "{args:?} should fail");
    let err = String::from_utf8(out.stderr).unwrap();
    assert_eq!(err.trim_end().lines().count(), 1, "diagnostic spans lines: {err}");
    assert!(err.starts_with("error: "), "{err}");
    err
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn synth(dir: &Path, views: usize, width: usize, height: usize) {
    ok(&[
        "synth",
        "--views",
        &views.to_string(),
        "--width",
        &width.to_string(),
        "--height",
        &height.to_string(),
        "--out",
        s(dir),
    ]);
}

fn png_count(dir: &Path) -> usize {
    std::fs::read_dir(dir)
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "png"))
        .count()
}

#[test]
fn synth_counts_and_rerun_is_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    synth(a.path(), 4, 24, 3);
    synth(b.path(), 4, 24, 3);
    assert_eq!(png_count(&a.path().join("sparse")), 4);
    assert_eq!(png_count(&a.path().join("dense")), 97);
    for sub in ["sparse/view_000.png", "dense/view_050.png"] {
        assert_eq!(
            std::fs::read(a.path().join(sub)).unwrap(),
            std::fs::read(b.path().join(sub)).unwrap()
        );
    }
}

#[test]
fn st_reconstruction_writes_views_and_timings() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), 4, 24, 2);
    let out = dir.path().join("st");
    ok(&[
        "reconstruct",
        "--in",
        s(&dir.path().join("sparse")),
        "--out",
        s(&out),
        "--method",
        "st",
        "--iters",
        "5",
    ]);
    assert_eq!(png_count(&out), 97);
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["method"], "st");
    assert_eq!(report["iterations"], 5);
    assert_eq!(report["threads"], 1);
    assert_eq!(report["epi_ms"].as_array().unwrap().len(), 2);

    let csv = out.join("views.csv");
    let line = ok(&[
        "evaluate",
        "--recon",
        s(&out),
        "--gt",
        s(&dir.path().join("dense")),
        "--exclude-inputs",
        "--csv",
        s(&csv),
    ]);
    assert!(line.starts_with("st "), "{line}");
    assert_eq!(std::fs::read_to_string(&csv).unwrap().lines().count(), 1 + 93);
}

#[test]
fn cyclest_needs_weights() {
    let dir = tempfile::tempdir().unwrap();
    let err = fails(&["reconstruct", "--in", s(dir.path()), "--out", s(dir.path()), "--method", "cyclest"]);
    assert!(err.contains("--weights"), "{err}");
}

#[test]
fn cyclest_seven_views_give_193() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), 7, 16, 1);
    let w = dir.path().join("zero.lfw");
    ok(&["init-weights", "--out", s(&w)]);
    let out = dir.path().join("cyc");
    ok(&[
        "reconstruct",
        "--in",
        s(&dir.path().join("sparse/manifest.json")),
        "--out",
        s(&out),
        "--method",
        "cyclest",
        "--weights",
        s(&w),
    ]);
    assert_eq!(png_count(&out), 193);
    // input views come back untouched
    let sparse = epishear::lightfield::read_image(&dir.path().join("sparse/view_001.png")).unwrap();
    let kept = epishear::lightfield::read_image(&out.join("view_032.png")).unwrap();
    assert_eq!(sparse, kept);
}

#[test]
fn evaluating_identical_fields_hits_the_cap() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), 4, 8, 2);
    let json = dir.path().join("r.json");
    let dense = dir.path().join("dense");
    let line = ok(&["evaluate", "--recon", s(&dense), "--gt", s(&dense), "--method", "gt", "--json", s(&json)]);
    assert_eq!(line.trim(), "gt 99.000 / 99.000 (97 views)");
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(json).unwrap()).unwrap();
    assert_eq!(report["min_db"], 99.0);
}

#[test]
fn info_and_system() {
    let info: serde_json::Value = serde_json::from_str(&ok(&["info", "--tau", "32"])).unwrap();
    assert_eq!((info["xi"].as_u64(), info["eta"].as_u64()), (Some(5), Some(68)));

    let dir = tempfile::tempdir().unwrap();
    let cache = dir.path().join("s.shs");
    let sys: serde_json::Value =
        serde_json::from_str(&ok(&["system", "--tau", "8", "--width", "64", "--height", "32", "--out", s(&cache)])).unwrap();
    assert_eq!(sys["eta"], 18);
    assert!(sys["frame_energy_deviation"].as_f64().unwrap() <= 1e-10);
    assert!(cache.exists());

    let w = dir.path().join("w.lfw");
    ok(&["init-weights", "--out", s(&w), "--seed", "3"]);
    let desc: serde_json::Value = serde_json::from_str(&ok(&["info", "--weights", s(&w)])).unwrap();
    assert_eq!(desc["param_count"], 1_368_260);
}

#[test]
fn epi_extract_insert_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), 4, 20, 3);
    let epi = dir.path().join("epi.png");
    let sparse = dir.path().join("sparse");
    ok(&["epi", "extract", "--in", s(&sparse), "--row", "1", "--out", s(&epi)]);
    let pixels = epishear::lightfield::read_image(&epi).unwrap();
    assert_eq!(pixels.dim(), (4, 20, 3));
    let back = dir.path().join("back");
    ok(&["epi", "insert", "--in", s(&sparse), "--row", "1", "--epi", s(&epi), "--out", s(&back)]);
    for v in 0..4 {
        let name = format!("view_{v:03}.png");
        assert_eq!(
            epishear::lightfield::read_image(&sparse.join(&name)).unwrap(),
            epishear::lightfield::read_image(&back.join(&name)).unwrap()
        );
    }
}

#[test]
fn errors_are_single_line() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("manifest.json");
    std::fs::write(&bad, "{\"name\": 1}").unwrap();
    fails(&["reconstruct", "--in", s(&bad), "--out", s(dir.path()), "--method", "st"]);
    fails(&["reconstruct", "--in", s(dir.path()), "--out", s(dir.path()), "--method", "nope"]);
    fails(&["info", "--tau", "1"]);
    fails(&["evaluate", "--recon", s(&dir.path().join("missing")), "--gt", s(dir.path())]);
    let w = dir.path().join("junk.lfw");
    std::fs::write(&w, b"LFW0junk").unwrap();
    let err = fails(&["info", "--weights", s(&w)]);
    assert!(err.contains("magic"), "{err}");
    fails(&["--threads", "0", "info"]);
}
