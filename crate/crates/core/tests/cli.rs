use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn platerec(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_platerec")).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn synth(out: &Path, seed: &str, count: &str) {
    let o = platerec(&["synth", "--seed", seed, "--out", p(out), "--set", &format!("synth.count={count}")]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
}

fn train_config(dir: &Path, data: &Path, optimizer: &str) -> std::path::PathBuf {
    let cfg = dir.join(format!("run-{}.cfg", optimizer.replace(' ', "_")));
    fs::write(
        &cfg,
        format!("[stage.1]\ndata = {}\nepochs = 1\noptimizer = {optimizer}\n", data.display()),
    )
    .unwrap();
    cfg
}

#[test]
fn synth_train_eval_decode_flow() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let run = tmp.path().join("run");
    synth(&data, "1", "24");
    let ppm = fs::read_dir(&data)
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "ppm"))
        .count();
    assert_eq!(ppm, 24);

    let cfg = train_config(tmp.path(), &data, "adadelta");
    let o = platerec(&["train", "--config", p(&cfg), "--out", p(&run), "--seed", "2"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("trained 1 stages"));

    let eval_data = format!("eval.data={}", data.display());
    let o = platerec(&["eval", "--out", p(&run), "--set", &eval_data]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let line = stdout(&o);
    assert!(line.starts_with("plates 24 ra "), "{line}");
    assert!(run.join("eval.txt").is_file());

    let o = platerec(&["decode", "--out", p(&run), "--set", &eval_data]);
    assert_eq!(code(&o), 0);
    let decoded = fs::read_to_string(run.join("decode.txt")).unwrap();
    assert_eq!(decoded.lines().count(), 25);
}

#[test]
fn cost_runs_without_data() {
    let tmp = tempfile::tempdir().unwrap();
    let o = platerec(&["cost", "--out", p(tmp.path())]);
    assert_eq!(code(&o), 0);
    assert!(!stdout(&o).is_empty());
}

#[test]
fn bad_configuration_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    for set in ["gan.lambda=-1", "no.such.key=1", "model.alpha=0", "synth.count=many"] {
        let o = platerec(&["synth", "--out", p(tmp.path()), "--set", set]);
        assert_eq!(code(&o), 2, "{set}");
        assert!(String::from_utf8_lossy(&o.stderr).starts_with("error: "));
    }
    let missing = tmp.path().join("missing.cfg");
    assert_ne!(code(&platerec(&["synth", "--config", p(&missing)])), 0);
}

#[test]
fn missing_data_exits_3() {
    let tmp = tempfile::tempdir().unwrap();
    let nowhere = tmp.path().join("nowhere");
    let o = platerec(&["eval", "--out", p(tmp.path()), "--set", &format!("eval.data={}", nowhere.display())]);
    assert_eq!(code(&o), 3);
    let cfg = train_config(tmp.path(), &nowhere, "adadelta");
    assert_eq!(code(&platerec(&["train", "--config", p(&cfg), "--out", p(tmp.path())])), 3);
}

#[test]
fn divergent_training_exits_4() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data, "3", "16");
    let cfg = train_config(tmp.path(), &data, "sgd 1e12");
    fs::write(&cfg, fs::read_to_string(&cfg).unwrap().replace("epochs = 1", "epochs = 4")).unwrap();
    let o = platerec(&["train", "--config", p(&cfg), "--out", p(&tmp.path().join("run"))]);
    assert_eq!(code(&o), 4, "{}", String::from_utf8_lossy(&o.stderr));
}
