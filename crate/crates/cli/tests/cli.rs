//! End-to-end runs of the `mbgl` binary.

mod common;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mbgl::archive::ModelArchive;
use mbgl::dataio::{write_dataset, write_matrix};
use mbgl::MatrixFile;
use mbgl_core::likelihood::linearization_blocks;
use mbgl_core::suffstats::compute_suffstats;
use mbgl_core::{DMatrix, Dataset, NoiseModel};

const EPOCH: &str = "1700000000";

fn mbgl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mbgl"))
        .args(args)
        .env("SOURCE_DATE_EPOCH", EPOCH)
        .env_remove("MBGL_THREADS")
        .output()
        .expect("spawn mbgl")
}

fn ok(args: &[&str]) -> Output {
    let out = mbgl(args);
    assert!(
        out.status.success(),
        "mbgl {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (
                e.file_name().into_string().unwrap(),
                fs::read(e.path()).unwrap(),
            )
        })
        .collect();
    files.sort();
    files
}

/// The 6-location, 2-variable, 4-realization golden fixture, built from a
/// closed form so it does not depend on any random number generator.
fn golden_fixture() -> Dataset {
    let (p, n, m) = (2, 6, 4);
    let values = (0..p * n * m)
        .map(|k| {
            let (v, s, r) = (k % p, (k / p) % n, k / (p * n));
            ((1 + v) as f64 * 0.7 * s as f64 + 1.3 * r as f64).sin() + 0.1 * (k as f64).cos()
        })
        .collect();
    Dataset::from_values(p, n, m, values).unwrap()
}

/// Data, a basis directory built by the CLI, and a noise file.
struct Fixture {
    _tmp: tempfile::TempDir,
    root: PathBuf,
    data: PathBuf,
    basis: PathBuf,
    noise: PathBuf,
}

fn fixture(p: usize, n: usize, l: usize, m: usize, seed: u64) -> Fixture {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path().to_path_buf();
    let truth = common::sparse_blocks(p, l, 0.4, seed, |lev| 1.0 + lev as f64);
    let basis = common::orthonormal_basis(n, l, seed + 1);
    let tau = vec![0.05; p];
    let data = common::synth(&truth, &basis, m, &tau, seed + 2);
    let data_path = root.join("data.mbgl");
    write_dataset(&data_path, &data).unwrap();
    let noise = root.join("noise.mbgl");
    write_matrix(&noise, &DMatrix::from_column_slice(p, 1, &tau)).unwrap();
    let basis_dir = root.join("basis");
    fs::create_dir(&basis_dir).unwrap();
    MatrixFile::from_matrix(basis.phi())
        .write(&basis_dir.join("basis.mbgl"))
        .unwrap();
    Fixture {
        _tmp: tmp,
        root,
        data: data_path,
        basis: basis_dir,
        noise,
    }
}

#[test]
fn basis_golden_file() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("d.mbgl");
    write_dataset(&data, &golden_fixture()).unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for dir in [&a, &b] {
        ok(&[
            "basis",
            "--data",
            s(&data),
            "--levels",
            "2",
            "--standardize",
            "--out",
            s(dir),
        ]);
    }
    assert_eq!(snapshot(&a), snapshot(&b));
    let produced = fs::read(a.join("basis.mbgl")).unwrap();
    let phi = MatrixFile::decode(&produced).unwrap().to_matrix().unwrap();
    assert!((phi.tr_mul(&phi) - DMatrix::identity(2, 2)).amax() < 1e-12);

    let golden = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden/basis_6x2x4.mbgl");
    if std::env::var_os("MBGL_BLESS").is_some() {
        fs::create_dir_all(golden.parent().unwrap()).unwrap();
        fs::write(&golden, &produced).unwrap();
    }
    assert_eq!(
        produced,
        fs::read(&golden).expect("golden file (regenerate with MBGL_BLESS=1)")
    );
}

#[test]
fn basis_rank_one_fixture() {
    let tmp = tempfile::tempdir().unwrap();
    let (p, n, m) = (2, 5, 3);
    let pattern = [1.0, -2.0, 0.5, 3.0, 1.5];
    let values = (0..p * n * m)
        .map(|k| pattern[(k / p) % n] * (1.0 + (k % p) as f64 + 2.0 * (k / (p * n)) as f64))
        .collect();
    let data = tmp.path().join("r1.mbgl");
    write_dataset(&data, &Dataset::from_values(p, n, m, values).unwrap()).unwrap();
    let out = tmp.path().join("b");
    ok(&[
        "basis",
        "--data",
        s(&data),
        "--levels",
        "1",
        "--out",
        s(&out),
    ]);
    let table = fs::read_to_string(out.join("variance_fraction.tsv")).unwrap();
    assert_eq!(table.lines().nth(1), Some("1\t1"));

    let fail = mbgl(&[
        "basis",
        "--data",
        s(&data),
        "--levels",
        "2",
        "--out",
        s(&out),
    ]);
    assert_eq!(code(&fail), 2);
    assert!(String::from_utf8_lossy(&fail.stderr).contains("rank 1"));
}

#[test]
fn fit_mle_reaches_the_fixed_point() {
    let fx = fixture(3, 30, 4, 40, 11);
    let model = fx.root.join("model");
    ok(&[
        "fit",
        "--data",
        s(&fx.data),
        "--basis",
        s(&fx.basis),
        "--mle",
        "--tol",
        "1e-9",
        "--noise",
        s(&fx.noise),
        "--out",
        s(&model),
    ]);
    let archive = ModelArchive::load(&model).unwrap();
    let q = archive.model.q();
    let data = mbgl::dataio::read_dataset(&fx.data, None, None).unwrap();
    let noise = NoiseModel::uniform(3, 0.05).unwrap();
    let stats = compute_suffstats(&data, archive.model.basis(), &noise).unwrap();
    let psi = linearization_blocks(q, &stats, &noise).unwrap();
    for (b, ps) in q.blocks().iter().zip(&psi.psi) {
        let fixed = ps.clone().try_inverse().unwrap();
        assert!((b - fixed).amax() < 1e-6 * b.amax(), "not a fixed point");
    }
    let manifest = fs::read_to_string(model.join("manifest.txt")).unwrap();
    assert!(manifest.contains("mode = mle"));
    assert!(manifest.contains("created = 1700000000"));
}

#[test]
fn fit_with_huge_lambda_is_diagonal_and_reports_agree() {
    let fx = fixture(3, 30, 4, 40, 12);
    let model = fx.root.join("model");
    ok(&[
        "fit",
        "--data",
        s(&fx.data),
        "--basis",
        s(&fx.basis),
        "--lambda",
        "1e6",
        "--noise",
        s(&fx.noise),
        "--out",
        s(&model),
    ]);
    let archive = ModelArchive::load(&model).unwrap();
    for b in archive.model.q().blocks() {
        for j in 0..3 {
            for i in 0..3 {
                if i != j {
                    assert_eq!(b[(i, j)], 0.0);
                }
            }
        }
    }
    let edges = ok(&["diagnose", "--model", s(&model), "--report", "edges"]);
    let text = String::from_utf8(edges.stdout).unwrap();
    assert!(text.lines().skip(1).all(|l| l.ends_with("\t0")), "{text}");
    let indep = ok(&["diagnose", "--model", s(&model), "--report", "independence"]);
    let text = String::from_utf8(indep.stdout).unwrap();
    assert_eq!(text.lines().count(), 4);
    assert!(text.lines().skip(1).all(|l| l.ends_with("\t1")), "{text}");
}

#[test]
fn fit_is_reproducible_across_runs_and_thread_counts() {
    let fx = fixture(3, 30, 4, 40, 13);
    let runs: Vec<_> = ["1", "4", "4"]
        .iter()
        .enumerate()
        .map(|(k, t)| {
            let out = fx.root.join(format!("m{k}"));
            ok(&[
                "--threads",
                t,
                "fit",
                "--data",
                s(&fx.data),
                "--basis",
                s(&fx.basis),
                "--lambda",
                "0.05",
                "--rho",
                "0.1",
                "--estimate-noise",
                "--out",
                s(&out),
            ]);
            snapshot(&out)
        })
        .collect();
    assert_eq!(runs[0], runs[1]);
    assert_eq!(runs[1], runs[2]);
    let names: Vec<_> = runs[0].iter().map(|(n, _)| n.as_str()).collect();
    assert_eq!(
        names,
        [
            "basis.mbgl",
            "blocks.mbgl",
            "manifest.txt",
            "noise.mbgl",
            "report.tsv",
            "variables.txt"
        ]
    );
}

#[test]
fn cv_selection_is_stable_and_single_candidate_wins() {
    let fx = fixture(3, 30, 4, 40, 14);
    let mut tables = Vec::new();
    for k in 0..2 {
        let out = fx.root.join(format!("cv{k}.tsv"));
        let run = ok(&[
            "cv",
            "--data",
            s(&fx.data),
            "--basis",
            s(&fx.basis),
            "--lambda-grid",
            "0.01,0.1,1",
            "--rho-grid",
            "0,0.5",
            "--folds",
            "4",
            "--seed",
            "7",
            "--noise",
            s(&fx.noise),
            "--out",
            s(&out),
        ]);
        tables.push((fs::read(&out).unwrap(), run.stdout));
    }
    assert_eq!(tables[0], tables[1]);
    let text = String::from_utf8(tables[0].0.clone()).unwrap();
    assert_eq!(text.lines().count(), 1 + 3 + 2 + 1);
    assert!(text.lines().last().unwrap().starts_with("selected\t"));

    let out = fx.root.join("single.tsv");
    let run = ok(&[
        "cv",
        "--data",
        s(&fx.data),
        "--basis",
        s(&fx.basis),
        "--lambda-grid",
        "0.2",
        "--folds",
        "3",
        "--noise",
        s(&fx.noise),
        "--out",
        s(&out),
    ]);
    assert!(String::from_utf8(run.stdout)
        .unwrap()
        .starts_with("selected lambda=0.2 rho=0 "));
}

#[test]
fn simulate_and_diagnose_fields() {
    let fx = fixture(2, 20, 3, 30, 15);
    let model = fx.root.join("model");
    ok(&[
        "fit",
        "--data",
        s(&fx.data),
        "--basis",
        s(&fx.basis),
        "--lambda",
        "0.01",
        "--noise",
        s(&fx.noise),
        "--out",
        s(&model),
    ]);
    let (a, b) = (fx.root.join("a.mbgl"), fx.root.join("b.mbgl"));
    for f in [&a, &b] {
        ok(&[
            "simulate",
            "--model",
            s(&model),
            "--realizations",
            "5",
            "--seed",
            "3",
            "--out",
            s(f),
        ]);
    }
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    assert_eq!(MatrixFile::read(&a).unwrap().dims(), &[2, 20, 5]);

    let zero = mbgl(&[
        "simulate",
        "--model",
        s(&model),
        "--realizations",
        "0",
        "--out",
        s(&a),
    ]);
    assert_eq!(code(&zero), 2);
    let destd = mbgl(&[
        "simulate",
        "--model",
        s(&model),
        "--realizations",
        "2",
        "--destandardize",
        "--out",
        s(&a),
    ]);
    assert_eq!(code(&destd), 2);

    let map = fx.root.join("corr.mbgl");
    ok(&[
        "diagnose",
        "--model",
        s(&model),
        "--report",
        "corr-map:V1,2,7",
        "--out",
        s(&map),
    ]);
    let field = MatrixFile::read(&map).unwrap();
    assert_eq!(field.dims(), &[20, 1]);
    let map11 = fx.root.join("self.tsv");
    ok(&[
        "diagnose",
        "--model",
        s(&model),
        "--report",
        "corr-map:1,1,7",
        "--out",
        s(&map11),
    ]);
    let text = fs::read_to_string(&map11).unwrap();
    assert_eq!(text.lines().nth(7), Some("7\t1"));

    let sd = ok(&["diagnose", "--model", s(&model), "--report", "local-sd:V2"]);
    let lines = String::from_utf8(sd.stdout).unwrap();
    assert_eq!(lines.lines().count(), 21);

    let bad = mbgl(&["diagnose", "--model", s(&model), "--report", "local-sd:V9"]);
    assert_eq!(code(&bad), 2);
    let bad = mbgl(&["diagnose", "--model", s(&model), "--report", "nonsense"]);
    assert_eq!(code(&bad), 2);
}

#[test]
fn corrupted_files_are_refused() {
    let fx = fixture(2, 10, 2, 10, 16);
    let mut bytes = fs::read(&fx.data).unwrap();
    let k = bytes.len() - 10;
    bytes[k] ^= 0x01;
    fs::write(&fx.data, bytes).unwrap();
    let out = mbgl(&[
        "basis",
        "--data",
        s(&fx.data),
        "--levels",
        "1",
        "--out",
        s(&fx.root.join("x")),
    ]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("checksum mismatch"));
    let missing = mbgl(&[
        "simulate",
        "--model",
        "/nonexistent",
        "--realizations",
        "1",
        "--out",
        "x.mbgl",
    ]);
    assert_eq!(code(&missing), 1);
}

#[test]
fn convert_round_trips() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    write_dataset(&d.join("a.mbgl"), &golden_fixture()).unwrap();
    ok(&["convert", s(&d.join("a.mbgl")), s(&d.join("a.csv"))]);
    ok(&["convert", s(&d.join("a.csv")), s(&d.join("b.mbgl"))]);
    assert_eq!(
        fs::read(d.join("a.mbgl")).unwrap(),
        fs::read(d.join("b.mbgl")).unwrap()
    );

    fs::write(d.join("m.csv"), "1,2\n3,4.5\n").unwrap();
    ok(&["convert", s(&d.join("m.csv")), s(&d.join("m.mbgl"))]);
    let m = MatrixFile::read(&d.join("m.mbgl")).unwrap();
    assert_eq!(m.dims(), &[2, 2]);
    assert_eq!(m.data(), &[1.0, 3.0, 2.0, 4.5]);
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(code(&mbgl(&["fit"])), 2);
    assert_eq!(
        code(&mbgl(&[
            "fit", "--mle", "--lambda", "1", "--data", "x", "--basis", "y", "--out", "z"
        ])),
        2
    );
}
