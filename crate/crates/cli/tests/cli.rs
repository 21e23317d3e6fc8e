use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = r#"
master_seed = 5

[model]
F = [[0.9]]
H = [[1.0]]
Q = [[1.0]]
R = [[1.0]]
init_mean = [0.0]
init_cov = [[4.0]]

[rnn]
variant = "recursive"
widths = [1, 4, 4, 1]

[train]
horizon = 10
count = 32
epochs = 2
minibatch_size = 8

[particle]
count = 10

[eval]
n_test = 8
horizon = 40
early_window = [5, 10]
late_window = [30, 40]
onset_reference = 5

[eval.contraction]
n_pairs = 4
horizon = 20

[output]
directory = "should-not-be-used"
"#;

fn neurofilter(args: &[&str], env_dir: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_neurofilter"));
    cmd.args(args).env_remove("NEUROFILTER_OUTPUT_DIR");
    if let Some(dir) = env_dir {
        cmd.env("NEUROFILTER_OUTPUT_DIR", dir);
    }
    cmd.output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn verify_passes_and_repeats() {
    let a = neurofilter(&["verify"], None);
    assert_eq!(a.status.code(), Some(0), "{}", stdout(&a));
    let text = stdout(&a);
    assert_eq!(text.lines().filter(|l| l.starts_with("PASS")).count(), 4, "{text}");
    let b = neurofilter(&["verify"], None);
    assert_eq!(stdout(&b), text);
}

#[test]
fn corrupted_gradient_fails_verification() {
    let out = neurofilter(&["verify", "--corrupt-gradient"], None);
    assert_eq!(out.status.code(), Some(1));
    assert!(stdout(&out).contains("FAIL gradient"));
}

#[test]
fn run_honours_output_env_override() {
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("small.toml");
    fs::write(&config, SMALL).unwrap();
    let out_dir = tmp.path().join("out");
    let out = neurofilter(&["run", config.to_str().unwrap()], Some(&out_dir));
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    for name in ["report.csv", "loss_history.csv", "checkpoint.bin", "manifest.json", "contraction_rnn.csv"] {
        assert!(out_dir.join(name).exists(), "{name}");
    }
    let report = fs::read_to_string(out_dir.join("report.csv")).unwrap();
    assert!(report.starts_with("method,t,rmse_vs_oracle,rmse_vs_truth,n_effective\nkalman,1,0,"));
    assert!(!Path::new("should-not-be-used").exists());
}

#[test]
fn missing_field_exits_with_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("bad.toml");
    fs::write(&config, SMALL.replace("R = [[1.0]]\n", "")).unwrap();
    let out = neurofilter(&["run", config.to_str().unwrap()], Some(tmp.path()));
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("`R`"), "{}", stderr(&out));

    fs::write(&config, SMALL.replace("widths = [1, 4, 4, 1]", "widths = [1, 4, 4, 2]")).unwrap();
    let out = neurofilter(&["run", config.to_str().unwrap()], Some(tmp.path()));
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("rnn.widths"), "{}", stderr(&out));

    let out = neurofilter(&["run", tmp.path().join("absent.toml").to_str().unwrap()], None);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn export_fixtures_writes_files() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("fixtures");
    let out = neurofilter(&["export-fixtures", dir.to_str().unwrap()], None);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert_eq!(stdout(&out).lines().count(), 7);
    let trace = fs::read_to_string(dir.join("kalman_trace.csv")).unwrap();
    assert!(trace.starts_with("t,mean_1,cov_1_1,gain_1_1\n0,0,25,0\n"));
}

#[test]
fn bundled_configs_validate() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut n = 0;
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        let cfg = neurofilter::experiment::ExperimentConfig::load(&path).unwrap();
        cfg.validate().unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        n += 1;
    }
    assert!(n >= 4);
}
