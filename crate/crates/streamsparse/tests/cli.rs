use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use streamsparse::output::{read_rows, ParsedRow, CSV_HEADER};

const BIN: &str = env!("CARGO_BIN_EXE_streamsparse");

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).env("STREAMSPARSE_THREADS", "2").output().unwrap()
}

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, body).unwrap();
    path
}

fn config(family: &str, method: &str, out: &Path, extra: &str) -> String {
    format!(
        r#"{{ "family": "{family}", "method": "{method}", "seeds": [3, 4],
  "stream": {{ "p": 30, "s": 3, "batch_size": 60, "num_batches": 10, "signal": 0.5 }},
  "output_dir": "{}"{extra} }}"#,
        out.display()
    )
}

fn rows(path: &Path) -> Vec<ParsedRow> {
    read_rows(fs::File::open(path).unwrap()).unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn simulate_writes_header_and_one_row_per_batch() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg = write_config(
        dir.path(),
        "c.json",
        &format!(
            r#"{{ "family": "gaussian", "stream": {{ "p": 20, "s": 2, "batch_size": 30, "num_batches": 2 }}, "output_dir": "{}" }}"#,
            out.display()
        ),
    );
    let o = run(&["simulate", cfg.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = fs::read_to_string(out.join("adiht_0.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), CSV_HEADER.join(","));
    assert_eq!(lines.count(), 2);
    let r = rows(&out.join("adiht_0.csv"));
    assert_eq!(r[1].get("N_b"), Some("60"));
    assert_eq!(r[0].get("wall_ms"), None);
}

#[test]
fn repeated_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let mut outputs = Vec::new();
    for k in 0..2 {
        let out = dir.path().join(format!("out{k}"));
        let cfg = write_config(
            dir.path(),
            &format!("c{k}.json"),
            &config("logistic", "both", &out, r#", "emit_svg": true, "compute_oracle": true"#),
        );
        let o = run(&["simulate", cfg.to_str().unwrap()]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        outputs.push(out);
    }
    let mut names: Vec<_> = fs::read_dir(&outputs[0]).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert!(names.iter().any(|n| n == "error_curve.svg"));
    assert_eq!(names.len(), 5);
    for n in names {
        let a = fs::read(outputs[0].join(&n)).unwrap();
        let b = fs::read(outputs[1].join(&n)).unwrap();
        assert_eq!(a, b, "{n:?} differs between runs");
    }
}

#[test]
fn invalid_config_exits_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg = write_config(dir.path(), "c.json", &config("gaussian", "adiht", &out, r#", "adiht": { "kappa": 1.5 }"#));
    let o = run(&["simulate", cfg.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("adiht.kappa"), "{}", stderr(&o));

    let cfg = write_config(dir.path(), "d.json", &config("gaussian", "adiht", &out, r#", "bogus": 1"#));
    assert_eq!(code(&run(&["simulate", cfg.to_str().unwrap()])), 2);
}

const COMPARED: [&str; 10] = [
    "b", "N_b", "l2_error", "linf_error", "support_size", "fp", "fn", "scaled_error", "iters", "lambda_final",
];

fn assert_rows_match(full: &[ParsedRow], resumed: &[ParsedRow]) {
    assert_eq!(full.len(), resumed.len());
    for (a, b) in full.iter().zip(resumed) {
        for col in COMPARED {
            let (x, y) = (a.get_f64(col).unwrap(), b.get_f64(col).unwrap());
            assert!((x - y).abs() <= 1e-12 * x.abs().max(y.abs()), "{col}: {x} vs {y}");
        }
    }
}

#[test]
fn resume_reproduces_the_uninterrupted_run() {
    for family in ["gaussian", "logistic", "poisson"] {
        for method in ["adiht", "renewable"] {
            let dir = tempfile::tempdir().unwrap();
            let out = dir.path().join("out");
            let cfg = write_config(dir.path(), "c.json", &config(family, method, &out, r#", "checkpoint_after": 5"#));
            let o = run(&["simulate", cfg.to_str().unwrap()]);
            assert_eq!(code(&o), 0, "{}", stderr(&o));
            let ckpt = out.join(format!("{method}_4.ckpt"));
            let o = run(&["resume", ckpt.to_str().unwrap(), cfg.to_str().unwrap(), "--seed", "4"]);
            assert_eq!(code(&o), 0, "{}", stderr(&o));
            let full = rows(&out.join(format!("{method}_4.csv")));
            let resumed = rows(&out.join(format!("{method}_4_resumed.csv")));
            assert_rows_match(&full[5..], &resumed);
        }
    }
}

#[test]
fn checkpoint_at_zero_resumes_to_the_full_run() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg = write_config(dir.path(), "c.json", &config("poisson", "adiht", &out, r#", "checkpoint_after": 0"#));
    assert_eq!(code(&run(&["simulate", cfg.to_str().unwrap()])), 0);
    let ckpt = out.join("adiht_3.ckpt");
    let o = run(&["resume", ckpt.to_str().unwrap(), cfg.to_str().unwrap(), "--seed", "3"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_rows_match(&rows(&out.join("adiht_3.csv")), &rows(&out.join("adiht_3_resumed.csv")));
}

#[test]
fn bad_checkpoints_exit_with_code_four() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg = write_config(dir.path(), "c.json", &config("gaussian", "adiht", &out, r#", "checkpoint_after": 2"#));
    assert_eq!(code(&run(&["simulate", cfg.to_str().unwrap()])), 0);

    let other = write_config(
        dir.path(),
        "p.json",
        &config("gaussian", "adiht", &out, "").replace(r#""p": 30"#, r#""p": 31"#),
    );
    let ckpt = out.join("adiht_3.ckpt");
    let o = run(&["resume", ckpt.to_str().unwrap(), other.to_str().unwrap(), "--seed", "3"]);
    assert_eq!(code(&o), 4);
    assert!(stderr(&o).contains("dimension"), "{}", stderr(&o));

    let garbage = dir.path().join("g.ckpt");
    fs::write(&garbage, b"not a checkpoint").unwrap();
    let o = run(&["resume", garbage.to_str().unwrap(), cfg.to_str().unwrap(), "--seed", "3"]);
    assert_eq!(code(&o), 4);
}

fn write_csv(path: &Path, rows: usize, poison: Option<(usize, &str)>) {
    let mut s = String::from("x1,y,x2,x3\n");
    for i in 0..rows {
        let a = (i as f64 * 0.37).sin();
        let b = (i as f64 * 0.11).cos();
        let c = ((i * 7) % 5) as f64 - 2.0;
        let y = 2.0 * a - c + 0.1 * (i as f64 * 1.3).sin();
        match poison {
            Some((row, cell)) if row == i => s.push_str(&format!("{a},{y},{cell},{c}\n")),
            _ => s.push_str(&format!("{a},{y},{b},{c}\n")),
        }
    }
    fs::write(path, s).unwrap();
}

#[test]
fn ingest_streams_a_csv_in_batches() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let data = dir.path().join("d.csv");
    write_csv(&data, 250, None);
    let cfg = write_config(
        dir.path(),
        "c.json",
        &format!(r#"{{ "family": "gaussian", "output_dir": "{}" }}"#, out.display()),
    );
    let o = run(&["ingest", data.to_str().unwrap(), "--response", "y", "--batch-size", "100", cfg.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let r = rows(&out.join("adiht_ingest.csv"));
    assert_eq!(r.len(), 3);
    assert_eq!(r[2].get("N_b"), Some("250"));
    for blank in ["seed", "fp", "fn", "l2_error"] {
        assert_eq!(r[2].get(blank), None, "{blank}");
    }
    assert!(r[2].get_f64("support_size").unwrap() >= 1.0);

    let o = run(&["ingest", data.to_str().unwrap(), "--response", "nope", "--batch-size", "100", cfg.to_str().unwrap()]);
    assert_eq!(code(&o), 2);

    write_csv(&data, 250, Some((140, "abc")));
    let o = run(&["ingest", data.to_str().unwrap(), "--response", "y", "--batch-size", "100", cfg.to_str().unwrap()]);
    assert_eq!(code(&o), 5);
    assert!(stderr(&o).contains("row 141"), "{}", stderr(&o));
}

#[test]
fn compare_joins_both_methods_and_the_oracle() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg = write_config(dir.path(), "c.json", &config("gaussian", "adiht", &out, ""));
    let o = run(&["compare", cfg.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let mut rdr = csv::Reader::from_path(out.join("compare_3.csv")).unwrap();
    let header: Vec<String> = rdr.headers().unwrap().iter().map(str::to_string).collect();
    assert_eq!(header, streamsparse::cli::COMPARE_HEADER);
    let oracle = header.iter().position(|h| h == "oracle_l2").unwrap();
    let records: Vec<csv::StringRecord> = rdr.records().map(Result::unwrap).collect();
    assert_eq!(records.len(), 10);
    for rec in &records {
        assert!(rec.iter().all(|c| !c.is_empty()));
        assert!(rec[oracle].parse::<f64>().unwrap() > 0.0);
    }
}
