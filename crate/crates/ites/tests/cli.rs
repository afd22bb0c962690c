use std::path::Path;
use std::process::{Command, Output};

fn ites(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ites")).args(args).env_remove("ITES_DATA").output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn usage_errors_exit_2() {
    for args in [&["frobnicate"][..], &["segment"], &["segment", "x", "--bogus"], &[]] {
        let o = ites(args);
        assert_eq!(o.status.code(), Some(2), "{args:?}");
        assert!(stderr(&o).contains("Usage"), "{args:?}: {}", stderr(&o));
    }
    assert_eq!(ites(&["--help"]).status.code(), Some(0));
}

#[test]
fn segment_missing_bundle() {
    let o = ites(&["segment", "missing-dir"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("bundle not found"), "{}", stderr(&o));
}

#[test]
fn train_and_recognize() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = Path::new(env!("CARGO_MANIFEST_DIR")).join("data/seed_corpus.csv");
    let model = tmp.path().join("model.txt");
    let o = ites(&["train", p(&corpus), p(&model), "--cv", "10"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("240 sentences, 12 classes"));
    assert!(stdout(&o).contains("10-fold accuracy"));

    let o = ites(&["recognize", p(&model), "Wipe the plate with the sponge."]);
    assert_eq!(o.status.code(), Some(0));
    let first = stdout(&o).lines().next().unwrap().to_string();
    assert!(first.starts_with("STG2\t"), "{first}");
    assert_eq!(stdout(&o).lines().count(), 12);

    let o = ites(&["recognize", p(&model), "   "]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn synth_segment_new_compile() {
    let tmp = tempfile::tempdir().unwrap();
    let bundle = tmp.path().join("pbp");
    let o = ites(&["synth", "pick_bring_place", p(&bundle)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));

    let diag = tmp.path().join("diag.csv");
    let o = ites(&["segment", p(&bundle), "--diagnostics", p(&diag)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("675 frames at 30 fps, 7 stops"), "{}", stdout(&o));
    let diag = std::fs::read_to_string(diag).unwrap();
    assert!(diag.starts_with("frame_index,raw,deoutliered,filtered,is_stop\n"));
    assert_eq!(diag.lines().filter(|l| l.ends_with(",1")).count(), 7);

    let data = tmp.path().join("data");
    let o = ites(&["new", p(&bundle), "--data", p(&data)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let session = stdout(&o).trim().to_string();
    assert!(session.ends_with("s0001"));

    let o = ites(&["compile", &session]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("wrong phase"), "{}", stderr(&o));

    assert_eq!(ites(&["synth", "juggling", p(&tmp.path().join("j"))]).status.code(), Some(1));
}
