use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = r#"
seed = 2
[avatar]
grid = 9
texture_size = 16
render_size = 32
image_size = 16
[data]
dome_frames = 48
sessions = 2
train_session_frames = 32
test_session_frames = 24
compositional_frames = 24
[codec]
epochs = 1
latent = 4
encoder_hidden = [8]
decoder_hidden = [8]
[mca]
epochs = 1
encoder_hidden = [8, 8]
synth_hidden = 8
[eval]
capacities = [2]
png_frames = 1
"#;

fn mca(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mca"))
        .current_dir(dir)
        .env("MCA_THREADS", "2")
        .args(args)
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stdout_dir(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).lines().last().unwrap_or_default().to_string()
}

fn setup() -> tempfile::TempDir {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(tmp.path().join("tiny.toml"), TINY).unwrap();
    tmp
}

#[test]
fn gen_data_is_reproducible() {
    let tmp = setup();
    let a = mca(tmp.path(), &["--config", "tiny.toml", "--out", "a", "gen-data"]);
    let b = mca(tmp.path(), &["--config", "tiny.toml", "--out", "b", "--sequential", "gen-data"]);
    assert_eq!((code(&a), code(&b)), (0, 0), "{}", String::from_utf8_lossy(&a.stderr));
    let (da, db) = (stdout_dir(&a), stdout_dir(&b));
    assert!(da.starts_with("a/data-"), "{da}");
    let ma = std::fs::read(tmp.path().join(&da).join("manifest.json")).unwrap();
    let mb = std::fs::read(tmp.path().join(&db).join("manifest.json")).unwrap();
    assert_eq!(ma, mb);
}

#[test]
fn usage_and_config_errors() {
    let tmp = setup();
    assert_eq!(code(&mca(tmp.path(), &["--bogus", "gen-data"])), 2);
    assert_eq!(code(&mca(tmp.path(), &["frobnicate"])), 2);
    assert_eq!(code(&mca(tmp.path(), &["--profile", "huge", "gen-data"])), 2);
    assert_eq!(code(&mca(tmp.path(), &["--help"])), 0);
    std::fs::write(tmp.path().join("bad.toml"), "[mca]\nlamda1 = 1.0\n").unwrap();
    assert_eq!(code(&mca(tmp.path(), &["--config", "bad.toml", "gen-data"])), 3);
    assert_eq!(code(&mca(tmp.path(), &["--config", "missing.toml", "gen-data"])), 3);
    assert_eq!(code(&mca(tmp.path(), &["--config", "tiny.toml", "app-amplify", "--module", "2"])), 3);
}

#[test]
fn stages_need_their_inputs_and_eval_reports_thresholds() {
    let tmp = setup();
    let run = |args: &[&str]| {
        let mut full = vec!["--config", "tiny.toml", "--out", "runs"];
        full.extend_from_slice(args);
        mca(tmp.path(), &full)
    };
    assert_eq!(code(&run(&["train-codec"])), 4);
    assert_eq!(code(&run(&["gen-data"])), 0);
    assert_eq!(code(&run(&["train-mca"])), 4);
    assert_eq!(code(&run(&["train-codec"])), 0);
    assert_eq!(code(&run(&["eval"])), 4);
    assert_eq!(code(&run(&["train-mca"])), 0);
    assert_eq!(code(&run(&["train-ca"])), 0);
    // a zero RMSE ceiling cannot be met
    std::fs::write(tmp.path().join("strict.toml"), "include = [\"tiny.toml\"]\n[eval.thresholds]\nmax_mca_rmse = 0.0\n").unwrap();
    let strict = mca(tmp.path(), &["--config", "strict.toml", "--out", "runs", "eval"]);
    assert_eq!(code(&strict), 5, "{}", String::from_utf8_lossy(&strict.stderr));
    assert!(String::from_utf8_lossy(&strict.stderr).contains("threshold violated"));
    let render = run(&["render", "--frames", "1", "--view", "0.2,0,1"]);
    assert_eq!(code(&render), 0, "{}", String::from_utf8_lossy(&render.stderr));
    assert_eq!(code(&run(&["render", "--view", "0,0,0"])), 1);
    let flex = run(&["app-flex"]);
    assert_eq!(code(&flex), 0);
    assert!(String::from_utf8_lossy(&flex.stdout).contains("max diff vs standard inference 0e0"));
}
