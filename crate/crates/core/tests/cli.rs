use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use hetmile::evaluate::EvalReport;
use hetmile::synth::{write_dataset, SynthConfig, SynthFiles};

fn hetmile(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hetmile")).args(args).output().unwrap()
}

fn ok(out: Output) -> String {
    assert!(
        out.status.success(),
        "status {:?}\nstdout {}\nstderr {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn small_dataset(dir: &Path) -> SynthFiles {
    let cfg = SynthConfig {
        n_per_type: 150,
        communities: 3,
        p_in: 0.06,
        p_out: 0.002,
        seed: 4,
        ..SynthConfig::default()
    };
    write_dataset(&cfg, &dir.join("data")).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Common flags for a fast run writing into `out`.
fn run_args<'a>(files: &'a SynthFiles, out: &'a Path, levels: &'a str) -> Vec<&'a str> {
    vec![
        "--threads",
        "1",
        "--schema",
        s(&files.schema),
        "--edges",
        s(&files.edges),
        "--nodes",
        s(&files.nodes),
        "--labels",
        s(&files.labels),
        "--output-dir",
        s(out),
        "--d",
        "8",
        "--levels",
        levels,
        "--walks-per-node",
        "3",
        "--walk-length",
        "20",
        "--refine-epochs",
        "20",
        "--folds",
        "3",
    ]
}

fn with(cmd: &str, rest: Vec<&str>) -> Vec<String> {
    std::iter::once(cmd).chain(rest).map(String::from).collect()
}

fn run(cmd: &str, rest: Vec<&str>) -> String {
    let args = with(cmd, rest);
    ok(hetmile(&args.iter().map(String::as_str).collect::<Vec<_>>()))
}

fn report_line(stdout: &str) -> EvalReport {
    let line = stdout
        .lines()
        .find(|l| l.starts_with('{'))
        .expect("report json on stdout");
    serde_json::from_str(line).unwrap()
}

fn files_in(dir: &Path) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = std::fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
    v.sort();
    v
}

#[test]
fn staged_commands_reproduce_the_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let files = small_dataset(tmp.path());
    let whole = tmp.path().join("whole");
    let staged = tmp.path().join("staged");
    run("pipeline", run_args(&files, &whole, "2"));
    run("coarsen", run_args(&files, &staged, "2"));
    run("embed", run_args(&files, &staged, "2"));
    run("refine", run_args(&files, &staged, "2"));
    assert_eq!(
        std::fs::read(whole.join("embeddings.bin")).unwrap(),
        std::fs::read(staged.join("embeddings.bin")).unwrap()
    );
    assert_eq!(
        std::fs::read(whole.join("params.hmrp")).unwrap(),
        std::fs::read(staged.join("params.hmrp")).unwrap()
    );
    assert!(staged.join("chain").join("match_1.hmmm").exists());
}

#[test]
fn pipeline_writes_one_embedding_params_and_report() {
    let tmp = tempfile::tempdir().unwrap();
    let files = small_dataset(tmp.path());
    let out = tmp.path().join("out");
    let stdout = run("pipeline", run_args(&files, &out, "1"));
    let report = report_line(&stdout);
    assert_eq!(report.level, 1);
    assert!(report.micro_f1.is_some());
    let names: Vec<String> = files_in(&out)
        .iter()
        .map(|p| p.file_name().unwrap().to_string_lossy().into_owned())
        .collect();
    for want in [
        "embeddings.bin",
        "params.hmrp",
        "report.json",
        "loss.csv",
        "pipeline.manifest.json",
    ] {
        assert_eq!(names.iter().filter(|n| *n == want).count(), 1, "{want} in {names:?}");
    }
    assert_eq!(names.iter().filter(|n| n.starts_with("embeddings")).count(), 1);
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("pipeline.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "pipeline");
}

#[test]
fn eval_reproduces_pipeline_metrics() {
    let tmp = tempfile::tempdir().unwrap();
    let files = small_dataset(tmp.path());
    let out = tmp.path().join("out");
    let from_pipeline = report_line(&run("pipeline", run_args(&files, &out, "1")));
    let from_eval = report_line(&run("eval", run_args(&files, &out, "1")));
    assert_eq!(from_pipeline.micro_f1, from_eval.micro_f1);
    assert!(out.join("eval_report.json").exists());
}

#[test]
fn bench_emits_one_row_per_grid_cell() {
    let tmp = tempfile::tempdir().unwrap();
    let files = small_dataset(tmp.path());
    let out = tmp.path().join("bench");
    let mut args = run_args(&files, &out, "0");
    args.extend(["--strategies", "jacc_max,lsh", "--grid-levels", "0,1,2"]);
    run("bench", args);
    let csv = std::fs::read_to_string(out.join("bench.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 2 * 3);
    let json: Vec<EvalReport> =
        serde_json::from_str(&std::fs::read_to_string(out.join("bench.json")).unwrap()).unwrap();
    assert_eq!(json.len(), 6);
}

#[test]
fn synth_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let mut dirs = Vec::new();
    for name in ["a", "b"] {
        let dir = tmp.path().join(name);
        run(
            "synth",
            vec!["--n-per-type", "200", "--seed", "3", "--output-dir", s(&dir)],
        );
        dirs.push(dir);
    }
    let a: Vec<PathBuf> = files_in(&dirs[0])
        .into_iter()
        .filter(|p| !p.to_string_lossy().ends_with("manifest.json"))
        .collect();
    assert_eq!(a.len(), 4);
    for p in &a {
        let q = dirs[1].join(p.file_name().unwrap());
        assert_eq!(std::fs::read(p).unwrap(), std::fs::read(q).unwrap(), "{}", p.display());
    }
}

#[test]
fn bad_config_exits_with_code_2() {
    let tmp = tempfile::tempdir().unwrap();
    let files = small_dataset(tmp.path());
    let out = tmp.path().join("out");
    let mut args = with("pipeline", run_args(&files, &out, "1"));
    args.extend(["--d".into(), "0".into()]);
    let res = hetmile(&args.iter().map(String::as_str).collect::<Vec<_>>());
    assert_eq!(res.status.code(), Some(2));

    let cfg = tmp.path().join("bad.toml");
    std::fs::write(&cfg, "[model]\nno_such_key = 1\n").unwrap();
    let res = hetmile(&["pipeline", "--config", s(&cfg)]);
    assert_eq!(res.status.code(), Some(2));
}

#[test]
fn bad_data_exits_with_code_3() {
    let tmp = tempfile::tempdir().unwrap();
    let files = small_dataset(tmp.path());
    let edges = tmp.path().join("broken.tsv");
    std::fs::write(&edges, "nonexistent_node\tother\tsome_relation\n").unwrap();
    let out = tmp.path().join("out");
    let res = hetmile(&[
        "pipeline",
        "--schema",
        s(&files.schema),
        "--edges",
        s(&edges),
        "--output-dir",
        s(&out),
    ]);
    assert_eq!(res.status.code(), Some(3), "{}", String::from_utf8_lossy(&res.stderr));
}
