use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn mvicad() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mvicad"))
}

fn run(cmd: &mut Command) -> Output {
    cmd.output().expect("spawn mvicad")
}

fn assert_code(out: &Output, want: i32) {
    let got = out.status.code().expect("exit code");
    assert_eq!(
        got,
        want,
        "stdout:\n{}\nstderr:\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn simulate_small(dir: &Path) {
    let out = run(mvicad()
        .args(["simulate", "--m", "3", "--p", "2", "--n", "128"])
        .args(["--tau-max-true", "4", "--snr-target", "10", "--seed", "5"])
        .arg("--out")
        .arg(dir));
    assert_code(&out, 0);
}

#[test]
fn simulate_fit_plot_pipeline_succeeds() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("data");
    simulate_small(&data);
    assert!(data.join("manifest.json").is_file());
    assert!(data.join("config.json").is_file(), "simulate echoes its config");

    let fit_dir = tmp.path().join("fit");
    let out = run(mvicad()
        .args(["fit", "--tau-max", "4", "--max-sweeps", "300", "--gtol", "1e-5"])
        .arg("--data")
        .arg(&data)
        .arg("--out")
        .arg(&fit_dir));
    assert_code(&out, 0);
    for name in [
        "config.json",
        "result.json",
        "delays.csv",
        "nll_history.csv",
        "shared_sources.f64",
        "unmixing_000.f64",
        "unmixing_002.f64",
        "eval.json",
    ] {
        assert!(fit_dir.join(name).is_file(), "missing fit output {}", name);
    }

    let bench_dir = tmp.path().join("bench");
    let out = run(mvicad()
        .args(["bench-amari", "--levels", "0,4", "--seeds", "2"])
        .args(["--m", "2", "--p", "2", "--n", "128", "--snr-target", "10"])
        .args(["--max-sweeps", "200", "--gtol", "1e-5"])
        .arg("--out")
        .arg(&bench_dir));
    assert_code(&out, 0);
    let rows_csv = bench_dir.join("amari_rows.csv");
    assert!(rows_csv.is_file());
    assert!(bench_dir.join("amari_summary.csv").is_file());
    assert!(bench_dir.join("config.json").is_file());

    let svg = tmp.path().join("fig.svg");
    let out = run(mvicad()
        .args(["plot", "--kind", "line"])
        .arg("--input")
        .arg(&rows_csv)
        .arg("--out")
        .arg(&svg));
    assert_code(&out, 0);
    let body = std::fs::read_to_string(&svg).unwrap();
    assert!(body.starts_with("<svg"));
    assert!(tmp.path().join("fig.config.json").is_file(), "plot echoes its config");
}

#[test]
fn usage_errors_exit_one() {
    let out = run(mvicad().arg("frobnicate"));
    assert_code(&out, 1);

    let out = run(mvicad().args(["plot", "--kind", "nope", "--input", "x", "--out", "y"]));
    assert_code(&out, 1);

    // Config validation failures count as usage: the window must fit in n.
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("data");
    simulate_small(&data);
    let out = run(mvicad()
        .args(["fit", "--tau-max", "200"])
        .arg("--data")
        .arg(&data)
        .arg("--out")
        .arg(tmp.path().join("fit")));
    assert_code(&out, 1);
}

#[test]
fn help_and_version_exit_zero() {
    assert_code(&run(mvicad().arg("--help")), 0);
    assert_code(&run(mvicad().arg("--version")), 0);
    assert_code(&run(mvicad().args(["fit", "--help"])), 0);
}

#[test]
fn data_errors_exit_two() {
    let tmp = TempDir::new().unwrap();
    let out = run(mvicad()
        .args(["fit"])
        .arg("--data")
        .arg(tmp.path().join("nowhere"))
        .arg("--out")
        .arg(tmp.path().join("fit")));
    assert_code(&out, 2);

    let data = tmp.path().join("data");
    simulate_small(&data);
    let victim = data.join("view_001.f64");
    let bytes = std::fs::read(&victim).unwrap();
    std::fs::write(&victim, &bytes[..bytes.len() - 8]).unwrap();
    let out = run(mvicad()
        .args(["fit"])
        .arg("--data")
        .arg(&data)
        .arg("--out")
        .arg(tmp.path().join("fit2")));
    assert_code(&out, 2);
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("view_001.f64"), "stderr names the file: {}", err);

    let out = run(mvicad()
        .args(["plot", "--kind", "scatter"])
        .arg("--input")
        .arg(tmp.path().join("absent.csv"))
        .arg("--out")
        .arg(tmp.path().join("fig.svg")));
    assert_code(&out, 2);
}

#[test]
fn bad_thread_env_exits_one() {
    let tmp = TempDir::new().unwrap();
    let out = run(mvicad()
        .env("MVICAD_THREADS", "zero")
        .args(["bench-amari", "--levels", "0", "--seeds", "1"])
        .args(["--m", "2", "--p", "2", "--n", "64"])
        .arg("--out")
        .arg(tmp.path().join("bench")));
    assert_code(&out, 1);

    let out = run(mvicad()
        .env("MVICAD_THREADS", "1")
        .args(["bench-amari", "--levels", "0", "--seeds", "1"])
        .args(["--m", "2", "--p", "2", "--n", "64", "--max-sweeps", "150"])
        .args(["--gtol", "1e-4"])
        .arg("--out")
        .arg(tmp.path().join("bench2")));
    assert_code(&out, 0);
}

#[test]
fn bench_outputs_reparse_and_replot_identically() {
    let tmp = TempDir::new().unwrap();
    let bench_dir = tmp.path().join("bench");
    let run_bench = |dir: &Path| {
        let out = run(mvicad()
            .args(["bench-amari", "--levels", "0,4", "--seeds", "2"])
            .args(["--m", "2", "--p", "2", "--n", "128", "--snr-target", "10"])
            .args(["--max-sweeps", "200", "--gtol", "1e-5"])
            .arg("--out")
            .arg(dir));
        assert_code(&out, 0);
    };
    run_bench(&bench_dir);
    let text = std::fs::read_to_string(bench_dir.join("amari_rows.csv")).unwrap();
    let rows = mvicad_cli::csv::amari_rows_from_csv(&text).unwrap();
    assert_eq!(mvicad_cli::csv::amari_rows_to_csv(&rows), text);

    // Same grid again: everything except wall time is reproduced exactly.
    let bench_dir2 = tmp.path().join("bench2");
    run_bench(&bench_dir2);
    let text2 = std::fs::read_to_string(bench_dir2.join("amari_rows.csv")).unwrap();
    let rows2 = mvicad_cli::csv::amari_rows_from_csv(&text2).unwrap();
    assert_eq!(rows.len(), rows2.len());
    for (a, b) in rows.iter().zip(&rows2) {
        assert_eq!(a.delay_level, b.delay_level);
        assert_eq!(a.seed, b.seed);
        assert_eq!(a.algorithm, b.algorithm);
        assert_eq!(a.amari_mean.to_bits(), b.amari_mean.to_bits());
        assert_eq!(a.sweeps, b.sweeps);
        assert_eq!(a.error, b.error);
    }
    let summary1 = std::fs::read_to_string(bench_dir.join("amari_summary.csv")).unwrap();
    let summary2 = std::fs::read_to_string(bench_dir2.join("amari_summary.csv")).unwrap();
    assert_eq!(summary1, summary2);

    // Plotting either rows file twice gives byte-identical SVGs.
    let fig1 = tmp.path().join("a.svg");
    let fig2 = tmp.path().join("b.svg");
    for fig in [&fig1, &fig2] {
        let out = run(mvicad()
            .args(["plot", "--kind", "line"])
            .arg("--input")
            .arg(bench_dir.join("amari_rows.csv"))
            .arg("--out")
            .arg(fig));
        assert_code(&out, 0);
    }
    assert_eq!(
        std::fs::read(&fig1).unwrap(),
        std::fs::read(&fig2).unwrap()
    );
}
