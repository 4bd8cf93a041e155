//! End-to-end checks of the command-line interface and its exit codes.

use std::path::{Path, PathBuf};
use std::process::Command;

fn exe() -> &'static str {
    env!("CARGO_BIN_EXE_tensalg")
}

fn workdir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("tensalg-cli-{}-{tag}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn write_poisson_rhs(path: &Path, n: usize) {
    let mut text = format!("tensorfile 1\nspace X {n}\nspace Y {n}\nindices x^1,y^1\ndata\n");
    for k in 0..n * n {
        text.push_str(&format!("{:.16e}\n", ((k as f64) * 0.7).sin()));
    }
    std::fs::write(path, text).unwrap();
}

#[test]
fn solve_poisson_with_cg_converges_and_writes_solution() {
    let dir = workdir("solve-ok");
    write_poisson_rhs(&dir.join("rhs.tensor"), 9);
    std::fs::write(
        dir.join("problem.cfg"),
        "space X 9\nspace Y 9\noperator laplacian x^1,x_,y^1,y_\nrhs rhs.tensor\nsolver cg\n\
         threshold 1e-10\nmode relative\nmax_iters 500\nnegate true\noutput solution.tensor\n",
    )
    .unwrap();
    let output = Command::new(exe())
        .arg("solve")
        .arg(dir.join("problem.cfg"))
        .arg("--history")
        .arg(dir.join("history.txt"))
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(0), "{output:?}");
    assert!(dir.join("solution.tensor").exists());
    let history = std::fs::read_to_string(dir.join("history.txt")).unwrap();
    let rhos: Vec<f64> = history
        .lines()
        .map(|l| l.split_whitespace().nth(1).unwrap().parse().unwrap())
        .collect();
    assert!(rhos.len() >= 2);
    // Overall decrease: final residual far below the initial one.
    assert!(rhos.last().unwrap() < &(rhos[0] * 1e-9));

    let solution = tensalg::io::read_tensor(&dir.join("solution.tensor")).unwrap();
    assert_eq!(solution.spec().to_string(), "x^,y^");
}

#[test]
fn solve_poisson_3d_with_relative_threshold() {
    let dir = workdir("solve-3d");
    let n = 16usize;
    let mut text = format!(
        "tensorfile 1\nspace X {n}\nspace Y {n}\nspace Z {n}\nindices x^1,y^1,z^1\ndata\n"
    );
    for k in 0..n * n * n {
        text.push_str(&format!("{:.16e}\n", ((k as f64) * 0.13).sin()));
    }
    std::fs::write(dir.join("rhs.tensor"), text).unwrap();
    std::fs::write(
        dir.join("problem.cfg"),
        "space X 16\nspace Y 16\nspace Z 16\noperator laplacian\nrhs rhs.tensor\nsolver cg\n\
         threshold 1e-10\nmode relative\nmax_iters 2000\nnegate true\noutput solution.tensor\n",
    )
    .unwrap();
    let output = Command::new(exe())
        .arg("solve")
        .arg(dir.join("problem.cfg"))
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(0), "{output:?}");
    let stdout = String::from_utf8_lossy(&output.stdout);
    let rhos: Vec<f64> = stdout
        .lines()
        .filter(|l| l.trim_start().chars().next().is_some_and(|c| c.is_ascii_digit()))
        .map(|l| l.split_whitespace().nth(1).unwrap().parse().unwrap())
        .collect();
    // Overall strict decrease to the relative target.
    assert!(rhos.last().unwrap() <= &(rhos[0] * 1e-10));
    assert!(rhos.windows(2).filter(|w| w[1] < w[0]).count() >= rhos.len() * 3 / 4);
}

#[test]
fn solve_missing_rhs_exits_one_with_the_path() {
    let dir = workdir("solve-missing");
    std::fs::write(
        dir.join("problem.cfg"),
        "space X 5\nspace Y 5\noperator laplacian\nrhs nowhere.tensor\nsolver cg\noutput o.tensor\n",
    )
    .unwrap();
    let output = Command::new(exe())
        .arg("solve")
        .arg(dir.join("problem.cfg"))
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("nowhere.tensor"), "{stderr}");
    assert!(!dir.join("o.tensor").exists(), "no partial outputs on error");
}

#[test]
fn solve_non_convergence_exits_two() {
    let dir = workdir("solve-nonconv");
    write_poisson_rhs(&dir.join("rhs.tensor"), 9);
    std::fs::write(
        dir.join("problem.cfg"),
        "space X 9\nspace Y 9\noperator laplacian\nrhs rhs.tensor\nsolver jacobi\n\
         threshold 1e-12\nmode relative\nmax_iters 3\nnegate true\noutput solution.tensor\n",
    )
    .unwrap();
    let output = Command::new(exe())
        .arg("solve")
        .arg(dir.join("problem.cfg"))
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2), "{output:?}");
}

#[test]
fn bench_single_factor_has_nothing_to_plan() {
    let dir = workdir("bench-single");
    std::fs::write(dir.join("expr.txt"), "extent X 4\nA : x^1,x_\n").unwrap();
    let output = Command::new(exe())
        .arg("bench-contraction")
        .arg(dir.join("expr.txt"))
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(0));
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(stdout.contains("nothing to plan"), "{stdout}");
}

#[test]
fn bench_parse_error_carries_line_number() {
    let dir = workdir("bench-bad");
    std::fs::write(dir.join("expr.txt"), "extent X 4\nA = x^1\n").unwrap();
    let output = Command::new(exe())
        .arg("bench-contraction")
        .arg(dir.join("expr.txt"))
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains(":2:"), "{stderr}");
}

#[test]
fn demo_rejects_oversampling() {
    let output = Command::new(exe())
        .args([
            "demo-recon",
            "--grid",
            "5",
            "--samples",
            "25",
            "--seed",
            "1",
            "--solver",
            "cg",
        ])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(1));
}

#[test]
fn default_threshold_matches_documented_value() {
    // When the config omits the threshold line, 1.0e-4 absolute applies; on
    // this small diagonally dominant system Jacobi reaches it quickly.
    let dir = workdir("default-threshold");
    write_poisson_rhs(&dir.join("rhs.tensor"), 9);
    std::fs::write(
        dir.join("problem.cfg"),
        "space X 9\nspace Y 9\noperator laplacian\nrhs rhs.tensor\nsolver jacobi\n\
         max_iters 100000\nnegate true\noutput solution.tensor\n",
    )
    .unwrap();
    let output = Command::new(exe())
        .arg("solve")
        .arg(dir.join("problem.cfg"))
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(0), "{output:?}");
    let stdout = String::from_utf8_lossy(&output.stdout);
    let last_rho: f64 = stdout
        .lines()
        .filter(|l| l.trim_start().chars().next().is_some_and(|c| c.is_ascii_digit()))
        .last()
        .and_then(|l| l.split_whitespace().nth(1))
        .unwrap()
        .parse()
        .unwrap();
    assert!(last_rho <= 1.0e-4, "stopped at rho = {last_rho}");
}
