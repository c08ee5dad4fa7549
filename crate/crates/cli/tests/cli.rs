use std::fs;
use std::path::Path;
use std::process::{Command, Output};

/// Flags small enough for training to finish in well under a second.
const TINY: [&str; 12] = [
    "--set",
    "train.epochs=12",
    "--set",
    "train.hidden=8",
    "--set",
    "train.val_interval=6",
    "--set",
    "traces.train_count=3",
    "--set",
    "traces.val_count=2",
    "--set",
    "traces.test_count=3",
];

fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_abr-vtrace"))
        .args(args)
        .env("ABR_VTRACE_LOG", "warn")
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = cli(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn with_tiny<'a>(args: &[&'a str]) -> Vec<&'a str> {
    args.iter().copied().chain(TINY).collect()
}

fn read(path: &Path) -> String {
    fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

fn single_error_line(out: &Output) -> String {
    let stderr = String::from_utf8_lossy(&out.stderr).into_owned();
    let lines: Vec<&str> = stderr.lines().collect();
    assert_eq!(lines.len(), 1, "stderr: {stderr}");
    assert!(lines[0].starts_with("error kind="), "stderr: {stderr}");
    lines[0].to_string()
}

#[test]
fn help_documents_every_flag() {
    let verbs: [(&str, &[&str]); 5] = [
        (
            "gen-traces",
            &["--n", "--out", "--seed", "--config", "--set"],
        ),
        (
            "train",
            &[
                "--algo",
                "--qoe",
                "--loss",
                "--actors",
                "--threads",
                "--out",
                "--seed",
                "--config",
                "--set",
            ],
        ),
        (
            "eval",
            &[
                "--algo",
                "--checkpoint",
                "--traces",
                "--qoe",
                "--loss",
                "--threads",
                "--out",
                "--seed",
            ],
        ),
        (
            "compare",
            &[
                "--algos",
                "--loss",
                "--qoe",
                "--traces",
                "--checkpoint-dir",
                "--actors",
                "--threads",
                "--out",
                "--seed",
            ],
        ),
        ("report", &["--input", "--format", "--out"]),
    ];
    let top = String::from_utf8(ok(&["--help"]).stdout).unwrap();
    for (verb, flags) in verbs {
        assert!(top.contains(verb), "top-level help lacks {verb}");
        let help = String::from_utf8(ok(&[verb, "--help"]).stdout).unwrap();
        for flag in flags {
            assert!(help.contains(flag), "{verb} --help lacks {flag}:\n{help}");
        }
    }
}

#[test]
fn gen_traces_is_deterministic_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b, c) = (
        dir.path().join("a"),
        dir.path().join("b"),
        dir.path().join("c"),
    );
    for (out, seed) in [(&a, "7"), (&b, "7"), (&c, "8")] {
        ok(&[
            "gen-traces",
            "--seed",
            seed,
            "--n",
            "20",
            "--out",
            out.to_str().unwrap(),
        ]);
    }
    let contents = |dir: &Path| {
        let mut paths: Vec<_> = fs::read_dir(dir)
            .unwrap()
            .map(|e| e.unwrap().path())
            .collect();
        paths.sort();
        paths
            .iter()
            .map(|p| (p.file_name().unwrap().to_owned(), read(p)))
            .collect::<Vec<_>>()
    };
    let (a, b, c) = (contents(&a), contents(&b), contents(&c));
    assert_eq!(a.len(), 20);
    assert_eq!(a, b);
    let differs = a.iter().zip(&c).all(|(x, y)| x.1 != y.1);
    assert!(differs);
}

#[test]
fn eval_writes_one_row_per_trace() {
    let dir = tempfile::tempdir().unwrap();
    let traces = dir.path().join("traces");
    ok(&[
        "gen-traces",
        "--n",
        "6",
        "--seed",
        "3",
        "--out",
        traces.to_str().unwrap(),
    ]);
    let out = dir.path().join("eval");
    ok(&[
        "eval",
        "--algo",
        "bb",
        "--traces",
        traces.to_str().unwrap(),
        "--loss",
        "0.01",
        "--out",
        out.to_str().unwrap(),
    ]);
    let csv = read(&out.join("bb.csv"));
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(
        lines[0],
        "trace_id,total,quality_sum,rebuffer_penalty_sum,smoothness_penalty_sum,chunks"
    );
    assert_eq!(lines.len(), 7);
    assert!(lines[1..].iter().all(|l| l.ends_with(",48")));

    // configured test set when no directory is given
    ok(&[
        "eval",
        "--algo",
        "mpc",
        "--qoe",
        "hd",
        "--set",
        "traces.test_count=4",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(read(&out.join("mpc.csv")).lines().count(), 5);
}

#[test]
fn train_eval_report_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    ok(&with_tiny(&[
        "train",
        "--algo",
        "alisa",
        "--actors",
        "2",
        "--out",
        run.to_str().unwrap(),
    ]));
    for file in [
        "best.ckpt",
        "final.ckpt",
        "epochs.csv",
        "validation.csv",
        "timings.csv",
        "settings.cfg",
    ] {
        assert!(run.join(file).exists(), "missing {file}");
    }
    assert_eq!(read(&run.join("epochs.csv")).lines().count(), 13);
    assert_eq!(read(&run.join("validation.csv")).lines().count(), 3);
    assert!(read(&run.join("settings.cfg")).contains("epochs = 12"));

    let results = dir.path().join("results");
    let ckpt = run.join("best.ckpt");
    ok(&with_tiny(&[
        "eval",
        "--algo",
        "alisa",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--out",
        results.to_str().unwrap(),
    ]));
    ok(&with_tiny(&[
        "eval",
        "--algo",
        "rb",
        "--out",
        results.to_str().unwrap(),
    ]));

    for format in ["csv", "cdf", "components"] {
        let out = dir.path().join(format!("report-{format}"));
        ok(&[
            "report",
            "--input",
            results.to_str().unwrap(),
            "--format",
            format,
            "--out",
            out.to_str().unwrap(),
        ]);
        let written: Vec<_> = fs::read_dir(&out).unwrap().collect();
        assert!(!written.is_empty(), "{format} wrote nothing");
    }
}

#[test]
fn train_is_reproducible_from_the_command_line() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        ok(&with_tiny(&[
            "train",
            "--algo",
            "a3c",
            "--seed",
            "5",
            "--out",
            out.to_str().unwrap(),
        ]));
    }
    for file in ["best.ckpt", "final.ckpt", "epochs.csv", "validation.csv"] {
        assert_eq!(read(&a.join(file)), read(&b.join(file)), "{file} differs");
    }
}

#[test]
fn compare_emits_algorithm_by_loss_grid() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("cmp");
    ok(&with_tiny(&[
        "compare",
        "--algos",
        "alisa,a3c,bb,rb,bola,mpc",
        "--loss",
        "0,0.01",
        "--qoe",
        "lin",
        "--out",
        out.to_str().unwrap(),
    ]));
    let grid = read(&out.join("lin.csv"));
    let rows: Vec<Vec<&str>> = grid.lines().map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 7);
    assert!(rows.iter().all(|r| r.len() == 3), "{grid}");
    let algos: Vec<&str> = rows[1..].iter().map(|r| r[0]).collect();
    assert_eq!(algos, ["alisa", "a3c", "bb", "rb", "bola", "mpc"]);
    for r in &rows[1..] {
        assert!(
            r[1..].iter().all(|v| v.parse::<f64>().unwrap().is_finite()),
            "{r:?}"
        );
    }
    assert!(out.join("summary.csv").exists());
    assert!(out.join("checkpoints/alisa-lin.ckpt").exists());
    assert!(out.join("checkpoints/a3c-lin.ckpt").exists());

    // a second run reuses the saved checkpoints, so a new training seed
    // leaves the learned row unchanged
    let again = dir.path().join("cmp2");
    let ckpts = out.join("checkpoints");
    let mut args = with_tiny(&[
        "compare",
        "--algos",
        "alisa,bb",
        "--loss",
        "0",
        "--qoe",
        "lin",
        "--checkpoint-dir",
        ckpts.to_str().unwrap(),
        "--out",
        again.to_str().unwrap(),
    ]);
    args.extend(["--set", "train.seed=99"]);
    ok(&args);
    let first: Vec<&str> = grid.lines().nth(1).unwrap().split(',').collect();
    let second = read(&again.join("lin.csv"));
    let reused: Vec<&str> = second.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(first[..2], reused[..2]);
}

#[test]
fn failures_print_one_machine_readable_line() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x");
    let o = out.to_str().unwrap();

    let missing_flag = cli(&["gen-traces"]);
    assert_eq!(missing_flag.status.code(), Some(2));
    assert!(single_error_line(&missing_flag).starts_with("error kind=usage"));

    let cases: [(&[&str], &str); 5] = [
        (
            &["eval", "--algo", "alisa", "--out", o],
            "kind=invalid-argument",
        ),
        (
            &[
                "eval",
                "--algo",
                "alisa",
                "--checkpoint",
                "/nonexistent/best.ckpt",
                "--out",
                o,
            ],
            "kind=io",
        ),
        (
            &["eval", "--algo", "bb", "--set", "video.nope=1", "--out", o],
            "kind=config",
        ),
        (
            &["eval", "--algo", "bb", "--loss", "1.5", "--out", o],
            "kind=invalid-argument",
        ),
        (
            &[
                "eval",
                "--algo",
                "bb",
                "--traces",
                "/nonexistent",
                "--out",
                o,
            ],
            "kind=io",
        ),
    ];
    for (args, kind) in cases {
        let result = cli(args);
        assert_eq!(result.status.code(), Some(1), "{args:?}");
        let line = single_error_line(&result);
        assert!(line.contains(kind), "{args:?}: {line}");
        assert!(line.contains("message=\""), "{line}");
    }

    let bad_algo = cli(&["eval", "--algo", "festive", "--out", o]);
    assert_eq!(bad_algo.status.code(), Some(2));
    single_error_line(&bad_algo);
}
