use conebeam::io::{load_matrix, load_tensor};
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use tempfile::TempDir;

fn conebeam(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_conebeam"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

const SMALL_2D: &str = "s=250\nd=250\ndy=0.75\nndy=40\nnp=24\na=0.5\nb=0.5\nnx=16\nny=16\nlambda=0.0001\nsigma=0.0001\n";

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn pipeline_2d() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "g.cfg", SMALL_2D);
    let [sm, img, sino, rec, trace] =
        ["w.csm", "u.ctt", "p.ctt", "r.ctt", "trace.csv"].map(|f| dir.path().join(f));

    let o = conebeam(&[
        "build-sm",
        "--config",
        path_str(&cfg),
        "--mode",
        "consistent",
        "--out",
        path_str(&sm),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(
        stdout(&o).starts_with("rows 960 cols 256 nnz "),
        "{}",
        stdout(&o)
    );
    let w = load_matrix(&sm).unwrap();
    assert!(w.normalization > 0.0 && w.normalization != 1.0);

    let o = conebeam(&[
        "phantom",
        "--spec",
        "checkerboard2d:16",
        "--out",
        path_str(&img),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(load_tensor(&img).unwrap().dims, vec![16, 16]);

    let o = conebeam(&[
        "project",
        "--sm",
        path_str(&sm),
        "--image",
        path_str(&img),
        "--sigma",
        "1e-4",
        "--seed",
        "7",
        "--out",
        path_str(&sino),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(load_tensor(&sino).unwrap().dims, vec![40, 24]);

    let o = conebeam(&[
        "reconstruct",
        "--sm",
        path_str(&sm),
        "--sino",
        path_str(&sino),
        "--max-iter",
        "300",
        "--out",
        path_str(&rec),
        "--trace",
        path_str(&trace),
    ]);
    assert!(matches!(o.status.code(), Some(0 | 2)), "{}", stderr(&o));
    let r = load_tensor(&rec).unwrap();
    let truth = load_tensor(&img).unwrap();
    assert_eq!(r.dims, vec![16, 16]);
    let mse = r
        .data
        .iter()
        .zip(&truth.data)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        / 256.0;
    assert!(mse < 0.05, "{mse}");
    let text = std::fs::read_to_string(&trace).unwrap();
    assert!(text.starts_with("iteration,objective,grad_norm_sq\n0,"));
}

#[test]
fn single_voxel_noiseless_reconstruction_is_exact() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        dir.path(),
        "one.cfg",
        "s=50\nd=50\ndy=0.5\nndy=8\nnp=4\na=1\nb=1\nnx=1\nny=1\n",
    );
    let [sm, img, sino, rec] = ["w.csm", "u.ctt", "p.ctt", "r.ctt"].map(|f| dir.path().join(f));
    assert!(conebeam(&[
        "build-sm",
        "--config",
        path_str(&cfg),
        "--out",
        path_str(&sm)
    ])
    .status
    .success());
    assert!(conebeam(&[
        "phantom",
        "--spec",
        "checkerboard2d:1:1",
        "--out",
        path_str(&img)
    ])
    .status
    .success());
    assert!(conebeam(&[
        "project",
        "--sm",
        path_str(&sm),
        "--image",
        path_str(&img),
        "--seed",
        "1",
        "--out",
        path_str(&sino)
    ])
    .status
    .success());
    let o = conebeam(&[
        "reconstruct",
        "--sm",
        path_str(&sm),
        "--sino",
        path_str(&sino),
        "--lambda",
        "0",
        "--tol",
        "1e-24",
        "--out",
        path_str(&rec),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let u = load_tensor(&rec).unwrap();
    assert_eq!(u.dims, vec![1, 1]);
    assert!((u.data[0] - 1.0).abs() < 1e-12, "{}", u.data[0]);
}

#[test]
fn reconstruct_signals_iteration_limit() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "g.cfg", SMALL_2D);
    let [sm, img, sino, rec] = ["w.csm", "u.ctt", "p.ctt", "r.ctt"].map(|f| dir.path().join(f));
    assert!(conebeam(&[
        "build-sm",
        "--config",
        path_str(&cfg),
        "--mode",
        "multiline:2",
        "--out",
        path_str(&sm)
    ])
    .status
    .success());
    assert!(conebeam(&[
        "phantom",
        "--spec",
        "shepp-logan:16",
        "--out",
        path_str(&img)
    ])
    .status
    .success());
    assert!(conebeam(&[
        "project",
        "--sm",
        path_str(&sm),
        "--image",
        path_str(&img),
        "--seed",
        "1",
        "--out",
        path_str(&sino)
    ])
    .status
    .success());
    let o = conebeam(&[
        "reconstruct",
        "--sm",
        path_str(&sm),
        "--sino",
        path_str(&sino),
        "--max-iter",
        "3",
        "--out",
        path_str(&rec),
    ]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stdout(&o).contains("stopped at max_iter"));
}

#[test]
fn projection_is_reproducible_per_seed() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "g.cfg", SMALL_2D);
    let (sm, img) = (dir.path().join("w.csm"), dir.path().join("u.ctt"));
    assert!(conebeam(&[
        "build-sm",
        "--config",
        path_str(&cfg),
        "--out",
        path_str(&sm)
    ])
    .status
    .success());
    assert!(conebeam(&[
        "phantom",
        "--spec",
        "checkerboard2d:16",
        "--out",
        path_str(&img)
    ])
    .status
    .success());
    let run = |seed: &str, name: &str| {
        let out = dir.path().join(name);
        assert!(conebeam(&[
            "--threads",
            "2",
            "project",
            "--sm",
            path_str(&sm),
            "--image",
            path_str(&img),
            "--sigma",
            "0.01",
            "--seed",
            seed,
            "--out",
            path_str(&out)
        ])
        .status
        .success());
        std::fs::read(out).unwrap()
    };
    assert_eq!(run("5", "a.ctt"), run("5", "b.ctt"));
    assert_ne!(run("5", "a.ctt"), run("6", "c.ctt"));
}

#[test]
fn validate_suites() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "g.cfg", SMALL_2D);
    let report = dir.path().join("adjoint.csv");
    let o = conebeam(&[
        "validate",
        "--config",
        path_str(&cfg),
        "--suite",
        "adjoint",
        "--samples",
        "20",
        "--seed",
        "3",
        "--report",
        path_str(&report),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(&report).unwrap();
    assert_eq!(text.lines().count(), 21);
    assert!(text
        .lines()
        .skip(1)
        .all(|l| l.starts_with("adjoint,") && l.ends_with(",true")));

    for suite in ["weights2d", "identities"] {
        let o = conebeam(&[
            "validate",
            "--config",
            path_str(&cfg),
            "--suite",
            suite,
            "--samples",
            "30",
            "--seed",
            "3",
        ]);
        assert!(o.status.success(), "{suite}: {}", stderr(&o));
        assert!(stdout(&o).starts_with("suite,case,quantity,value,tolerance,pass\n"));
    }
    let cfg3 = write_config(
        dir.path(),
        "g3.cfg",
        &format!("{SMALL_2D}dz=1.75\nndz=20\nc=0.5\nnz=8\n"),
    );
    let o = conebeam(&[
        "validate",
        "--config",
        path_str(&cfg3),
        "--suite",
        "weights3d",
        "--samples",
        "5",
        "--seed",
        "3",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));

    let o = conebeam(&[
        "validate",
        "--config",
        path_str(&cfg),
        "--suite",
        "weights3d",
        "--samples",
        "5",
        "--seed",
        "3",
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(
        stderr(&o).starts_with("error[E_INVALID_CONFIG]"),
        "{}",
        stderr(&o)
    );
}

#[test]
fn bench_writes_one_row_per_pair() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "g.cfg", &format!("{SMALL_2D}max_iter=50\n"));
    let out = dir.path().join("bench.csv");
    let o = conebeam(&[
        "bench",
        "--config",
        path_str(&cfg),
        "--modes",
        "consistent,line,multiline:2",
        "--lambdas",
        "1e-5,1e-4",
        "--seed",
        "1",
        "--out",
        path_str(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(&out).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(
        lines[0],
        "mode,lambda,mse,build_secs,solve_secs,total_secs,iterations,converged"
    );
    assert_eq!(lines.len(), 7);
    assert!(lines[3].starts_with("multiline:2,1e-5,"));

    let o = conebeam(&[
        "bench",
        "--config",
        path_str(&cfg),
        "--phantom",
        "shepp-logan:8",
        "--seed",
        "1",
        "--out",
        path_str(&out),
    ]);
    assert!(
        stderr(&o).starts_with("error[E_DIMENSION_MISMATCH]"),
        "{}",
        stderr(&o)
    );
}

#[test]
fn export_png_maps_range() {
    let dir = TempDir::new().unwrap();
    let (img, png) = (dir.path().join("u.ctt"), dir.path().join("u.png"));
    assert!(conebeam(&[
        "phantom",
        "--spec",
        "checkerboard3d:8:2",
        "--out",
        path_str(&img)
    ])
    .status
    .success());
    let o = conebeam(&[
        "export-png",
        "--tensor",
        path_str(&img),
        "--slice",
        "5",
        "--out",
        path_str(&png),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o).trim(), "mapping [0e0, 1e0] -> [0, 255]");
    let g = image::open(&png).unwrap().into_luma8();
    assert_eq!(g.dimensions(), (8, 8));
    // Slice 5 is in the second block along z, so voxel (0, 0) is 0; it lands in the bottom row.
    assert_eq!(g.get_pixel(0, 7)[0], 0);
    assert_eq!(g.get_pixel(4, 7)[0], 255);
    assert_eq!(g.get_pixel(0, 0)[0], 255);

    let o = conebeam(&[
        "export-png",
        "--tensor",
        path_str(&img),
        "--slice",
        "8",
        "--out",
        path_str(&png),
    ]);
    assert!(stderr(&o).starts_with("error[E_INVALID_SPEC]"));
}

#[test]
fn errors_carry_stable_codes() {
    let dir = TempDir::new().unwrap();
    let bad = write_config(dir.path(), "bad.cfg", "s=250\nwobble=1\n");
    let o = conebeam(&[
        "build-sm",
        "--config",
        path_str(&bad),
        "--out",
        path_str(&dir.path().join("w.csm")),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(
        stderr(&o).starts_with("error[E_INVALID_CONFIG]"),
        "{}",
        stderr(&o)
    );

    let o = conebeam(&[
        "phantom",
        "--spec",
        "checkerboard2d:4",
        "--out",
        path_str(&dir.path().join("missing/u.ctt")),
    ]);
    assert!(stderr(&o).starts_with("error[E_IO]"), "{}", stderr(&o));

    let cfg = write_config(dir.path(), "g.cfg", SMALL_2D);
    let (sm, img) = (dir.path().join("w.csm"), dir.path().join("u.ctt"));
    assert!(conebeam(&[
        "build-sm",
        "--config",
        path_str(&cfg),
        "--out",
        path_str(&sm)
    ])
    .status
    .success());
    assert!(conebeam(&[
        "phantom",
        "--spec",
        "checkerboard2d:8",
        "--out",
        path_str(&img)
    ])
    .status
    .success());
    let o = conebeam(&[
        "project",
        "--sm",
        path_str(&sm),
        "--image",
        path_str(&img),
        "--seed",
        "1",
        "--out",
        path_str(&dir.path().join("p.ctt")),
    ]);
    assert!(
        stderr(&o).starts_with("error[E_DIMENSION_MISMATCH]"),
        "{}",
        stderr(&o)
    );

    // Randomized commands need an explicit seed.
    let o = conebeam(&[
        "project",
        "--sm",
        path_str(&sm),
        "--image",
        path_str(&img),
        "--out",
        "x",
    ]);
    assert_eq!(o.status.code(), Some(64));
    let o = conebeam(&[
        "build-sm",
        "--config",
        path_str(&cfg),
        "--mode",
        "cone",
        "--out",
        "x",
    ]);
    assert_eq!(o.status.code(), Some(64));
}
