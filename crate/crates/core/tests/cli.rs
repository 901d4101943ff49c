use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lungsound")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Small images keep these runs fast.
const SMALL: [&str; 4] = ["--image_size", "64", "--epochs", "10"];

fn synth(dir: &Path, per_class: usize) {
    let o = run(&["synth", "--out_dir", p(dir), "--per_class", &per_class.to_string(), "--seed", "3"]);
    assert_eq!(code(&o), 0, "{o:?}");
}

#[test]
fn usage_errors_exit_1() {
    assert_eq!(code(&run(&[])), 1);
    assert_eq!(code(&run(&["frobnicate"])), 1);
    assert_eq!(code(&run(&["cv", "--no_such_key", "1"])), 1);
    assert_eq!(code(&run(&["cv", "--k"])), 1);
    assert_eq!(code(&run(&["cv", "--k", "many"])), 1);
    assert_eq!(code(&run(&["synth", "--n_mels", "3"])), 1);
    assert_eq!(code(&run(&["predict"])), 1);
    assert_eq!(code(&run(&["--help"])), 0);
    let keys = run(&["cv", "--keys"]);
    assert_eq!(code(&keys), 0);
    assert!(stdout(&keys).lines().any(|l| l == "learning_rate"));
}

#[test]
fn data_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing");
    assert_eq!(code(&run(&["summarize", "--data_dir", p(&missing)])), 2);
    // A recording without its annotation file.
    synth(dir.path(), 1);
    let txt = fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|p| p.extension().is_some_and(|e| e == "txt"))
        .unwrap();
    fs::remove_file(&txt).unwrap();
    let o = run(&["summarize", "--data_dir", p(dir.path())]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("error"));
}

#[test]
fn synth_then_summarize() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), 4);
    let o = run(&["summarize", "--data_dir", p(dir.path())]);
    assert_eq!(code(&o), 0);
    let out = stdout(&o);
    for label in ["Normal", "Crackles", "Wheezes", "Both"] {
        let line = out.lines().find(|l| l.starts_with(label)).unwrap();
        assert_eq!(line.split_whitespace().last(), Some("4"), "{out}");
    }
    assert!(out.lines().any(|l| l.starts_with("Total") && l.ends_with("16")));
}

#[test]
fn featurize_is_incremental() {
    let dir = tempfile::tempdir().unwrap();
    let (data, cache) = (dir.path().join("data"), dir.path().join("cache"));
    synth(&data, 2);
    let args = |extra: &[&'static str]| {
        let mut v = vec!["featurize", "--data_dir", p(&data), "--cache_dir", p(&cache)];
        v.extend_from_slice(extra);
        run(&v)
    };
    let first = args(&SMALL);
    assert_eq!(code(&first), 0);
    assert_eq!(stdout(&first).trim(), "8 entries, 8 written");
    assert_eq!(stdout(&args(&SMALL)).trim(), "8 entries, 0 written");

    // Dropping a recording removes its entries.
    let stem = fs::read_dir(&data)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "wav"))
        .min()
        .unwrap();
    fs::remove_file(&stem).unwrap();
    fs::remove_file(stem.with_extension("txt")).unwrap();
    assert_eq!(stdout(&args(&SMALL)).trim(), "4 entries, 0 written");
    let lsft = fs::read_dir(&cache).unwrap().filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "lsft")).count();
    assert_eq!(lsft, 4);

    // A featurization setting change rewrites everything.
    assert_eq!(stdout(&args(&["--image_size", "32"])).trim(), "4 entries, 4 written");
}

#[test]
fn corrupt_cache_entry_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let (data, cache) = (dir.path().join("data"), dir.path().join("cache"));
    synth(&data, 1);
    let mut args = vec!["train", "--data_dir", p(&data), "--cache_dir", p(&cache), "--out_dir", p(dir.path())];
    args.extend_from_slice(&SMALL);
    assert_eq!(code(&run(&args)), 0);
    let entry = fs::read_dir(&cache)
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|p| p.extension().is_some_and(|e| e == "lsft"))
        .unwrap();
    let bytes = fs::read(&entry).unwrap();
    fs::write(&entry, &bytes[..bytes.len() / 2]).unwrap();
    let o = run(&args);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("lsft"));
}

#[test]
fn train_then_predict() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    synth(&data, 6);
    let model = dir.path().join("model.lswt");
    let cache = dir.path().join("cache");
    let common = ["--data_dir", p(&data), "--cache_dir", p(&cache), "--model_path", p(&model)];
    let mut train: Vec<&str> = vec!["train"];
    train.extend_from_slice(&common);
    train.extend_from_slice(&SMALL);
    let o = run(&train);
    assert_eq!(code(&o), 0, "{o:?}");
    assert_eq!(stdout(&o).lines().filter(|l| l.starts_with("epoch")).count(), 10);
    assert_eq!(&fs::read(&model).unwrap()[..4], b"LSWT");

    // Annotated recording: one line per cycle.
    let wav = fs::read_dir(&data)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "wav"))
        .min()
        .unwrap();
    let mut predict: Vec<&str> = vec!["predict", "--input", p(&wav)];
    predict.extend_from_slice(&common);
    predict.extend_from_slice(&SMALL);
    let o = run(&predict);
    assert_eq!(code(&o), 0, "{o:?}");
    let out = stdout(&o);
    let rows: Vec<&str> = out.lines().skip(1).collect();
    assert_eq!(rows.len(), 4);
    for row in &rows {
        let f: Vec<&str> = row.split('\t').collect();
        assert_eq!(f.len(), 6);
        let total: f64 = f[2..].iter().map(|v| v.parse::<f64>().unwrap()).sum();
        assert!((total - 1.0).abs() < 1e-5);
    }
    // Synthetic cycles run Normal, Crackles, Wheezes, Both within a recording.
    let labels: Vec<&str> = rows.iter().map(|r| r.split('\t').nth(1).unwrap()).collect();
    assert_eq!(labels, ["Normal", "Crackles", "Wheezes", "Both"]);

    // Without an annotation the whole file is one cycle.
    let bare = dir.path().join("bare.wav");
    fs::copy(&wav, &bare).unwrap();
    let mut predict: Vec<&str> = vec!["predict", "--input", p(&bare)];
    predict.extend_from_slice(&common);
    predict.extend_from_slice(&SMALL);
    let o = run(&predict);
    assert_eq!(code(&o), 0);
    assert_eq!(stdout(&o).lines().count(), 2);

    // Extractor that disagrees with the saved head.
    let mut predict: Vec<&str> = vec!["predict", "--input", p(&bare), "--image_size", "32"];
    predict.extend_from_slice(&common);
    assert_eq!(code(&run(&predict)), 3);
}

#[test]
fn cv_with_config_file_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let out = dir.path().join("out");
    synth(&data, 3);
    let conf = dir.path().join("run.conf");
    fs::write(
        &conf,
        format!(
            "# small run\ndata_dir = {}\ncache_dir = {}\nout_dir = {}\nimage_size = 64\nk = 3\nepochs = 50\n",
            data.display(),
            dir.path().join("cache").display(),
            out.display()
        ),
    )
    .unwrap();
    let o = run(&["cv", "--config", p(&conf), "--epochs", "5"]);
    assert_eq!(code(&o), 0, "{o:?}");
    let json: serde_json::Value = serde_json::from_slice(&fs::read(out.join("report.json")).unwrap()).unwrap();
    for key in ["confusion_matrix", "per_class", "overall_accuracy", "macro", "folds", "warnings"] {
        assert!(json.get(key).is_some(), "missing {key}");
    }
    assert_eq!(json["folds"].as_array().unwrap().len(), 3);
    assert_eq!(json["config"]["epochs"], "5");
    assert_eq!(json["config"]["k"], "3");

    let text = fs::read_to_string(out.join("report.txt")).unwrap();
    assert_eq!(stdout(&o), text);
    let r = run(&["report", "--out_dir", p(&out)]);
    assert_eq!(code(&r), 0);
    assert_eq!(stdout(&r), text);
    assert_eq!(code(&run(&["report", "--input", p(&dir.path().join("nope.json"))])), 2);

    fs::write(&conf, "colour = blue\n").unwrap();
    assert_eq!(code(&run(&["cv", "--config", p(&conf)])), 1);
}
