use std::path::Path;
use std::process::{Command, Output};

use tripcc::io;

const EXE: &str = env!("CARGO_BIN_EXE_tripcc");

fn tripcc(args: &[&str]) -> Output {
    Command::new(EXE)
        .args(args)
        .env_remove("TRIPCC_THREADS")
        .env_remove("TRIPCC_BUFFER_BUDGET")
        .output()
        .unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn gen_run_verify_query() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.lpcc");
    let out = dir.path().join("r.lpcr");
    assert!(tripcc(&[
        "gen",
        "--n",
        "40",
        "--l",
        "12",
        "--seed",
        "3",
        "--out",
        s(&data)
    ])
    .status
    .success());
    let o = tripcc(&[
        "run",
        "--input",
        s(&data),
        "--out",
        s(&out),
        "--tile-size",
        "3",
        "--capacity",
        "5",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));

    let o = tripcc(&["verify", "--input", s(&data), "--result", s(&out)]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("PASS"));

    let d = io::load_dataset(&data, io::DataFormat::Binary).unwrap();
    let want = tripcc::transform::pcc_naive(d.row(7), d.row(31)).unwrap();
    for (i, j) in [("7", "31"), ("31", "7")] {
        let o = tripcc(&["query", "--result", s(&out), "--i", i, "--j", j]);
        let got: f64 = stdout(&o).trim().parse().unwrap();
        assert!((got - want).abs() <= 1e-10);
    }
}

#[test]
fn worker_backends_write_identical_files() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.tsv");
    assert!(tripcc(&["gen", "--n", "33", "--l", "9", "--out", s(&data)])
        .status
        .success());
    assert!(std::fs::read_to_string(&data).unwrap().contains('\t'));

    let base = dir.path().join("base.lpcr");
    assert!(tripcc(&["run", "--input", s(&data), "--out", s(&base)])
        .status
        .success());
    let expected = std::fs::read(&base).unwrap();
    for (i, extra) in [
        &["--workers", "3"][..],
        &["--workers", "4", "--merge", "disk"],
        &["--workers", "2", "--backend", "subprocess"],
        &[
            "--workers",
            "3",
            "--backend",
            "subprocess",
            "--merge",
            "disk",
            "--no-overlap",
        ],
    ]
    .iter()
    .enumerate()
    {
        let out = dir.path().join(format!("{i}.lpcr"));
        let mut args = vec![
            "run",
            "--input",
            s(&data),
            "--out",
            s(&out),
            "--capacity",
            "2",
        ];
        args.extend_from_slice(extra);
        let o = tripcc(&args);
        assert!(
            o.status.success(),
            "{extra:?}: {}",
            String::from_utf8_lossy(&o.stderr)
        );
        assert_eq!(std::fs::read(&out).unwrap(), expected, "{extra:?}");
    }
}

#[test]
fn tsv_and_binary_inputs_agree() {
    let dir = tempfile::tempdir().unwrap();
    let tsv = dir.path().join("d.tsv");
    std::fs::write(&tsv, "a\t1\t2\t3\nb\t2\t4\t7\nc\t5\t5\t5\n").unwrap();
    let d = io::load_dataset(&tsv, io::DataFormat::Tsv).unwrap();
    let bin = dir.path().join("d.lpcc");
    io::save_dataset(&bin, &d, io::DataFormat::Binary).unwrap();

    let r1 = dir.path().join("1.lpcr");
    let r2 = dir.path().join("2.lpcr");
    assert!(tripcc(&["run", "--input", s(&tsv), "--out", s(&r1)])
        .status
        .success());
    assert!(tripcc(&["run", "--input", s(&bin), "--out", s(&r2)])
        .status
        .success());
    assert_eq!(std::fs::read(&r1).unwrap(), std::fs::read(&r2).unwrap());

    let r = io::load_packed(&r1).unwrap();
    assert_eq!(r.zero_variance(), &[2]);
    assert_eq!(r.get(2, 2).unwrap(), 0.0);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(tripcc(&["run"]).status.code(), Some(1));
    assert_eq!(tripcc(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(tripcc(&["--help"]).status.code(), Some(0));

    let bad = dir.path().join("bad.tsv");
    std::fs::write(&bad, "1\t2\t3\n4\tx\t6\n").unwrap();
    let out = dir.path().join("r.lpcr");
    let o = tripcc(&["run", "--input", s(&bad), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("line 2") && err.contains("column 2"), "{err}");

    let missing = dir.path().join("nope.lpcc");
    assert_eq!(
        tripcc(&["run", "--input", s(&missing), "--out", s(&out)])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        tripcc(&["cost", "--n", "0", "--l", "4"]).status.code(),
        Some(2)
    );

    // a tampered result fails verification
    let data = dir.path().join("d.lpcc");
    assert!(tripcc(&["gen", "--n", "10", "--l", "5", "--out", s(&data)])
        .status
        .success());
    assert!(tripcc(&["run", "--input", s(&data), "--out", s(&out)])
        .status
        .success());
    let mut r = io::load_packed(&out).unwrap();
    let d = io::load_dataset(&data, io::DataFormat::Binary).unwrap();
    let mut packed = r.packed().to_vec();
    packed[4] += 1e-6;
    r = tripcc::CorrelationResult::from_parts(10, packed, r.zero_variance().to_vec()).unwrap();
    io::save_packed(&out, &r).unwrap();
    let o = tripcc(&["verify", "--input", s(&data), "--result", s(&out)]);
    assert_eq!(o.status.code(), Some(3));
    assert!(
        stdout(&o).contains("FAIL first offending pair (0, 4)"),
        "{}",
        stdout(&o)
    );
    assert_eq!(d.n(), 10);
}

#[test]
fn cost_prints_exact_count() {
    let o = tripcc(&["cost", "--n", "4294967295", "--l", "4294967295"]);
    let n = 4294967295u128;
    assert_eq!(
        stdout(&o).trim(),
        (5 * n * n + n * n * (n + 1) / 2).to_string()
    );
}

#[test]
fn environment_sets_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.lpcc");
    let out = dir.path().join("r.lpcr");
    assert!(tripcc(&["gen", "--n", "20", "--l", "4", "--out", s(&data)])
        .status
        .success());
    let o = Command::new(EXE)
        .args(["run", "--input", s(&data), "--out", s(&out)])
        .env("TRIPCC_THREADS", "2")
        .env("TRIPCC_BUFFER_BUDGET", "256")
        .output()
        .unwrap();
    assert!(o.status.success());
    let o = Command::new(EXE)
        .args(["run", "--input", s(&data), "--out", s(&out)])
        .env("TRIPCC_THREADS", "many")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn crashed_subprocess_worker_reports_unfinished_range() {
    use tripcc::distributed::{run_workers, Backend, DistributedConfig};
    use tripcc::Error;

    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.lpcc");
    assert!(tripcc(&["gen", "--n", "24", "--l", "6", "--out", s(&data)])
        .status
        .success());
    let d = io::load_dataset(&data, io::DataFormat::Binary).unwrap();

    // the worker's output is cut after the first BLOCKS frame of one tile
    // (5 header bytes + 12 + 4 * 8), so it dies partway through its range
    let cfg = DistributedConfig {
        backend: Backend::Subprocess {
            program: "sh".into(),
            args: vec!["-c".into(), format!("'{EXE}' worker | head -c 49")],
        },
        ..DistributedConfig::new(2, 2, 1)
    };
    match run_workers(&d, Some(&data), &cfg) {
        Err(Error::Worker { unfinished, .. }) => {
            assert!(
                unfinished.start >= 1 && unfinished.start < unfinished.end,
                "{unfinished:?}"
            );
        }
        other => panic!("expected a worker failure, got {other:?}"),
    }
}
