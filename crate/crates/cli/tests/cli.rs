use std::fs;
use std::path::Path;
use std::process::Command;

const TOY: &str = r#"
name = "toy"
seed = 3

[domain]
lower = [-2.0]
upper = [2.0]

[basis]
kind = "monomial"
degree = 4

[dynamics]
field = "-x"
interaction = "2*exp(-0.6*(x-y)^2)*(x-y)"

[initial]
lower = [-1.5]
upper = [1.5]
agents = 50

[simulation]
t_end = 0.4
h = 0.05

[fit]
grid = 81
pair_grid = 31

[[models]]
name = "plain"

[[models]]
name = "held"
kappa0 = "auto"
kappa = 5.0

[flow]
t_end = 0.4
h = 0.05

[bound]

[reconstruction]
lambda = 100.0
cells = [40]
times = [0.4]
sources = ["true", "plain"]

[massbounds]
cells = [40]
times = [0.4]
sources = ["true"]
regions = [{ lower = [-0.5], upper = [0.5] }]
"#;

fn moments() -> Command {
    Command::new(env!("CARGO_BIN_EXE_moments"))
}

fn write_config(dir: &Path, text: &str) -> std::path::PathBuf {
    let p = dir.join("config.toml");
    fs::write(&p, text).unwrap();
    p
}

fn status(args: &[&str], config: Option<&Path>, out: &Path) -> i32 {
    let mut cmd = moments();
    if let Some(c) = config {
        cmd.arg("--config").arg(c);
    }
    cmd.arg("--out").arg(out).args(args).env("RUST_LOG", "warn");
    cmd.output().unwrap().status.code().unwrap()
}

fn payload(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.file_name().unwrap() != "manifest.json")
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

#[test]
fn seeded_runs_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), TOY);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert_eq!(status(&["run"], Some(&cfg), &a), 0);
    assert_eq!(status(&["run"], Some(&cfg), &b), 0);
    let (pa, pb) = (payload(&a), payload(&b));
    assert!(pa.len() > 10, "{:?}", pa.iter().map(|f| &f.0).collect::<Vec<_>>());
    for (x, y) in pa.iter().zip(&pb) {
        assert_eq!(x.0, y.0);
        assert!(x.1 == y.1, "{} differs between runs", x.0);
    }
    assert_eq!(pa.len(), pb.len());

    // a different seed changes the agents
    let c = tmp.path().join("c");
    assert_eq!(status(&["--seed", "4", "simulate"], Some(&cfg), &c), 0);
    assert_ne!(fs::read(a.join("trajectory.csv")).unwrap(), fs::read(c.join("trajectory.csv")).unwrap());
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");

    let bad = write_config(tmp.path(), &TOY.replace("agents = 50", "agents = \"many\""));
    assert_eq!(status(&["check"], Some(&bad), &out), 2);

    let no_conv = write_config(tmp.path(), TOY);
    assert_eq!(status(&["convergence"], Some(&no_conv), &out), 2);
    assert_eq!(status(&["check"], Some(&no_conv), &out), 0);
    assert_eq!(status(&["reproduce", "fig10"], None, &out), 2);
    assert_eq!(status(&["run"], None, &out), 2);

    // agents pushed out of the domain
    let blowup = TOY
        .replace("field = \"-x\"", "field = \"5*x\"")
        .replace("t_end = 0.4\nh = 0.05\n\n[fit]", "t_end = 3.0\nh = 0.05\n\n[fit]");
    let blowup = write_config(tmp.path(), &blowup);
    assert_eq!(status(&["simulate"], Some(&blowup), &out), 3);
}

#[test]
fn config_errors_name_the_field() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = write_config(tmp.path(), &TOY.replace("field = \"-x\"", "field = \"-x + foo\""));
    let o = moments().arg("--config").arg(&bad).arg("check").output().unwrap();
    let err = String::from_utf8_lossy(&o.stderr);
    assert_eq!(o.status.code(), Some(2));
    assert!(err.contains("dynamics.field"), "{err}");
}

#[test]
fn check_prints_a_config_that_reparses() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), TOY);
    let o = moments().arg("--config").arg(&cfg).arg("check").output().unwrap();
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    let again = moment_cli::parse_config(&text).unwrap();
    assert_eq!(again, moment_cli::parse_config(TOY).unwrap());
}

#[test]
fn presets_are_listed() {
    let o = moments().arg("presets").output().unwrap();
    let text = String::from_utf8(o.stdout).unwrap();
    assert_eq!(text.lines().count(), 9);
    let o = moments().args(["presets", "fig8"]).output().unwrap();
    assert!(String::from_utf8(o.stdout).unwrap().contains("name = \"fig8\""));
}
