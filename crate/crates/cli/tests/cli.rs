use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn sketchseg(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sketchseg"))
        .args(args)
        .current_dir(cwd)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn ok(args: &[&str], cwd: &Path) -> Output {
    let out = sketchseg(args, cwd);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

#[test]
fn usage_and_runtime_errors_have_distinct_status() {
    let dir = tempfile::tempdir().unwrap();
    let out = sketchseg(&["infer", "--bogus"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    assert_eq!(sketchseg(&["frobnicate"], dir.path()).status.code(), Some(2));
    assert_eq!(sketchseg(&["--profile", "huge", "synth", "-n", "1", "--out", "x"], dir.path()).status.code(), Some(2));

    let out = sketchseg(&["infer", "--model", "missing.sksg", "--in", "missing.json"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));
    assert_eq!(sketchseg(&["--cs=-3", "synth", "-n", "1", "--out", "x"], dir.path()).status.code(), Some(2));
    assert_eq!(sketchseg(&["--batch", "0", "synth", "-n", "1", "--out", "x"], dir.path()).status.code(), Some(2));
    let out = sketchseg(&["eval", "--model", "m", "--data", "nowhere"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(sketchseg(&["--help"], dir.path()).status.code(), Some(0));
}

#[test]
fn synth_train_infer_eval() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let common = ["--profile", "reduced", "--seed", "7"];
    let run = |extra: &[&str]| ok(&[&common[..], extra].concat(), d);

    run(&["synth", "--category", "lamp", "-n", "6", "--out", "data"]);
    assert!(d.join("data/manifest.txt").exists());

    run(&["--batch", "2", "train", "--data", "data", "--steps", "3", "--out", "a.sksg"]);
    run(&["--batch", "2", "train", "--data", "data/manifest.txt", "--steps", "3", "--out", "b.sksg"]);
    let a = std::fs::read(d.join("a.sksg")).unwrap();
    assert_eq!(a, std::fs::read(d.join("b.sksg")).unwrap());
    ok(&["--profile", "reduced", "--seed", "8", "--batch", "2", "train", "--data", "data", "--steps", "3", "--out", "c.sksg"], d);
    assert_ne!(a, std::fs::read(d.join("c.sksg")).unwrap());

    let sketch_file = std::fs::read_dir(d.join("data"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|p| p.extension().is_some_and(|x| x == "json"))
        .unwrap();
    let mut doc: Value = serde_json::from_slice(&std::fs::read(&sketch_file).unwrap()).unwrap();
    for s in doc["strokes"].as_array_mut().unwrap() {
        s.as_object_mut().unwrap().remove("labels");
    }
    std::fs::write(d.join("bare.json"), doc.to_string()).unwrap();
    let out = run(&["infer", "--model", "a.sksg", "--in", "bare.json"]);
    let labeled: Value = serde_json::from_slice(&out.stdout).unwrap();
    for (s, orig) in labeled["strokes"].as_array().unwrap().iter().zip(doc["strokes"].as_array().unwrap()) {
        assert_eq!(s["labels"].as_array().unwrap().len(), orig["points"].as_array().unwrap().len());
    }
    run(&["--cs", "0", "infer", "--model", "a.sksg", "--in", "bare.json", "--solver", "alpha", "--out", "o.json"]);
    assert!(d.join("o.json").exists());

    let out = run(&["--batch", "1,4", "eval", "--model", "a.sksg", "--data", "data"]);
    let csv = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 3, "{csv}");
    assert!(lines[0].starts_with("variant,"));
    assert!(lines[1].starts_with("ours-1,lamp,"));
    assert!(lines[2].starts_with("ours-4,lamp,"));
    let out = run(&["--batch", "2", "eval", "--model", "a.sksg", "--data", "data", "--no-refine"]);
    assert!(String::from_utf8(out.stdout).unwrap().contains("ours-nogc-2,lamp,"));
}

#[test]
fn datagen_features_retrieve_assemble() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let common = ["--profile", "reduced"];
    let run = |extra: &[&str]| ok(&[&common[..], extra].concat(), d);

    run(&["datagen", "--toy", "2", "--azimuths", "2", "--depth-tested", "--out", "edges"]);
    let manifest = std::fs::read_to_string(d.join("edges/manifest.txt")).unwrap();
    // 2 meshes × 2 azimuths × 3 elevations × 2 distances.
    assert_eq!(manifest.lines().filter(|l| l.starts_with("sample ")).count(), 24);

    let obj = Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/assets/cube_chair.obj");
    run(&[
        "datagen", "--meshes", obj.to_str().unwrap(), "--category", "chair", "--labels", "background,back,seat,leg",
        "--azimuths", "1", "--out", "obj_edges",
    ]);

    run(&["--batch", "2", "train", "--data", "edges", "--steps", "1", "--out", "m.sksg"]);
    run(&["features", "--toy", "3", "--azimuths", "2", "--model", "m.sksg", "--out", "db.skfd"]);
    run(&["synth", "--category", "chair", "-n", "1", "--out", "sk"]);
    let sketch = std::fs::read_dir(d.join("sk"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|p| p.extension().is_some_and(|x| x == "json"))
        .unwrap();

    let out = run(&["retrieve", "--model", "m.sksg", "--db", "db.skfd", "--in", sketch.to_str().unwrap(), "--top", "2", "--given-labels"]);
    let ranked: Value = serde_json::from_slice(&out.stdout).unwrap();
    let parts = ranked["parts"].as_array().unwrap();
    assert_eq!(parts.len(), 3);
    assert!(parts.iter().all(|p| p["candidates"].as_array().unwrap().len() == 2));
    std::fs::write(d.join("ranked.json"), out.stdout).unwrap();

    let out = run(&["assemble", "--db", "db.skfd", "--in", "ranked.json"]);
    let placed: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(placed["placed"].as_array().unwrap().len(), 3);
    assert!(placed["residual"].as_f64().unwrap() >= 0.0);
}
