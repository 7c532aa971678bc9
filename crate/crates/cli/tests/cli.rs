use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn dsmis(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dsmis")).args(args).env_remove("DSMIS_WORKERS").output().expect("binary runs")
}

fn stdout(out: &Output) -> String {
    assert!(out.status.success(), "exit {:?}: {}", out.status.code(), String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn header(csv: &str) -> (&str, &str) {
    let mut lines = csv.lines();
    (lines.next().unwrap(), lines.next().unwrap())
}

fn run(args: &[&str]) -> Output {
    dsmis(args)
}

#[test]
fn estimate_reports_json() {
    let out = run(&["estimate", "--x", "TTCATT", "--y", "TTTGTT", "--lambda", "0.5", "--T", "0.2", "--N", "2000", "--seed", "7"]);
    let v: Value = serde_json::from_str(&stdout(&out)).unwrap();
    for key in ["log_p_hat", "log_p_ism", "cv2", "ess", "se_rel", "l2_hat", "N", "seed", "workers"] {
        assert!(v.get(key).is_some(), "missing {key}");
    }
    assert_eq!(v["N"], 2000);
    assert!(v["wall_time"].is_null());
}

#[test]
fn unit_lambda_has_no_variance() {
    let out = run(&["estimate", "--x", "TTCATT", "--y", "TTTGTT", "--model", "jc69+cpg", "--lambda", "1", "--T", "0.2", "--N", "300"]);
    let v: Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(v["log_p_hat"], v["log_p_ism"]);
    assert_eq!(v["cv2"].as_f64(), Some(0.0));
    assert_eq!(v["ess"].as_f64(), Some(300.0));
}

#[test]
fn exit_codes() {
    let usage = [
        vec!["estimate", "--x", "TTCATT", "--y", "TTTGTT", "--lambda", "0.5"],
        vec!["estimate", "--x", "TTCATT", "--y", "TTTG", "--lambda", "0.5", "--T", "1"],
        vec!["estimate", "--x", "TTCATT", "--y", "TTTGTN", "--lambda", "0.5", "--T", "1"],
        vec!["estimate", "--x", "TTCATT", "--y", "TTTGTT", "--lambda", "-1", "--T", "1"],
        vec!["estimate", "--x", "TTCATT", "--y", "TTTGTT", "--model", "gtr", "--lambda", "1", "--T", "1"],
        vec!["estimate", "--x", "TTCATT", "--y", "TTTGTT", "--T", "1"],
        vec!["estimate", "--fasta", "/nonexistent/pair.fa", "--lambda", "1", "--T", "1"],
        vec!["bound", "--n", "100", "--r", "3", "--t-mult", "1", "--lambda", "0.5"],
        vec!["oracle", "--x", "ACGTACGTA", "--y", "ACGTACGTT", "--lambda", "0.5", "--T", "1"],
        vec!["figure", "--n", "0"],
        vec!["frobnicate"],
    ];
    for args in usage {
        let out = run(&args);
        assert_eq!(out.status.code(), Some(2), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
        assert!(!out.stderr.is_empty());
        assert!(out.stdout.is_empty());
    }
    let numeric = [
        vec!["estimate", "--x", "TTCATT", "--y", "TTTGTT", "--lambda", "0.5", "--T", "0"],
        vec!["oracle", "--x", "TTCATT", "--y", "TTTGTT", "--lambda", "0.5", "--T", "0"],
    ];
    for args in numeric {
        let out = run(&args);
        assert_eq!(out.status.code(), Some(3), "{args:?}");
        assert!(String::from_utf8_lossy(&out.stderr).contains("unreachable"));
    }
}

#[test]
fn csv_headers_are_stable() {
    let est = stdout(&run(&["estimate", "--x", "TTCATT", "--y", "TTTGTT", "--lambda", "0.5", "--T", "0.2", "--N", "100", "--format", "csv"]));
    assert_eq!(header(&est), ("#schema=estimate/1", "n,r,T,lambda,N,seed,log_p_hat,se_rel,cv2,ess,wall_time"));
    assert_eq!(est.lines().count(), 3);

    let bound = stdout(&run(&["bound", "--n", "1600", "--r", "10,20", "--t-mult", "0.25,1", "--lambda", "0.5"]));
    assert_eq!(header(&bound), ("#schema=bound/1", "r,n,T,lambda,bound_kind,log_l2_bound,value,overflow,n_star_figure"));
    assert_eq!(bound.lines().count(), 2 + 2 * 2 * 4);
    assert!(bound.contains("\n10,1600,0.0015625,0.5,prop4,"));

    let island = stdout(&run(&["island", "--islands", "1", "--lambda", "0.5", "--T", "0.2", "--N", "500"]));
    assert_eq!(
        header(&island),
        (
            "#schema=island/1",
            "r_islands,n,r,T,lambda,N,seed,log_p_hat,se_rel,l2_hat,l2_se,log_p_oracle,oracle_skipped,rel_error,prop4_l2,prop3_l2,theorem1_chi2,island_kl"
        )
    );

    let orders = stdout(&run(&["oracle", "--x", "TTCATT", "--y", "TTTGTT", "--lambda", "0.5", "--orderings", "--format", "csv"]));
    assert_eq!(orders, "#schema=orderings/1\norder,phi,phi_tilde\n3-4,1,0.6666666666666666\n4-3,0.5,0.3333333333333333\n");
}

#[test]
fn island_flags_oracle_skip() {
    let small = stdout(&run(&["island", "--islands", "1", "--lambda", "0.5", "--T", "0.2", "--N", "4000", "--format", "json"]));
    let v: Value = serde_json::from_str(&small).unwrap();
    assert_eq!(v["oracle_skipped"], false);
    assert!(v["rel_error"].as_f64().unwrap() < 0.05);
    let big = stdout(&run(&["island", "--islands", "4", "--lambda", "0.5", "--T", "0.2", "--N", "200", "--format", "json"]));
    let v: Value = serde_json::from_str(&big).unwrap();
    assert_eq!(v["oracle_skipped"], true);
    assert!(v["log_p_oracle"].is_null());
}

#[test]
fn bound_json_carries_constants_and_flags() {
    let text = stdout(&run(&["bound", "--x", "TTCATT", "--y", "TTTGTT", "--T", "0.0001", "--lambda", "0.5", "--kind", "theorem3", "--format", "json"]));
    let v: Value = serde_json::from_str(&text).unwrap();
    let row = &v[0];
    assert_eq!(row["report"]["kind"], "theorem3");
    assert!(row["report"]["c"].as_f64().unwrap() > 0.0);
    assert!(row["report"]["log_theta"].is_number());
    assert_eq!(row["assumption"]["r"], 2);
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn config_file_and_flag_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "run.json",
        r#"{"model":{"model":"jc69+cpg","lambda":0.5},"x":"TTCATT","y":"TTTGTT","T":0.2,"N":800,"seed":3}"#,
    );
    let from_file: Value = serde_json::from_str(&stdout(&run(&["estimate", "--config", &cfg]))).unwrap();
    assert_eq!(from_file["N"], 800);
    assert_eq!(from_file["seed"], 3);
    let flags: Value = serde_json::from_str(&stdout(&run(&["estimate", "--config", &cfg, "--N", "900", "--lambda", "1"]))).unwrap();
    assert_eq!(flags["N"], 900);
    assert_eq!(flags["cv2"].as_f64(), Some(0.0));

    let fasta = write(dir.path(), "pair.fa", ">x\nTTCA\nTT\n>y\nTTTG\nTT\n");
    let via_fasta = stdout(&run(&["estimate", "--config", &cfg, "--fasta", &fasta]));
    assert_eq!(via_fasta, stdout(&run(&["estimate", "--config", &cfg])));

    let bad = write(dir.path(), "bad.json", r#"{"model":{"model":"jc69+cpg","lambda":0.5},"horizon":1}"#);
    assert_eq!(run(&["estimate", "--config", &bad]).status.code(), Some(2));
}

#[test]
fn table_model_from_config() {
    let dir = tempfile::tempdir().unwrap();
    let mut keys = Vec::new();
    for l in "01".chars() {
        for c in "01".chars() {
            for r in "01".chars() {
                let b = if c == '0' { '1' } else { '0' };
                keys.push(format!("\"{l}{c}{r}:{b}\":{}", if l == r { 1.5 } else { 0.8 }));
            }
        }
    }
    let cfg = write(
        dir.path(),
        "table.json",
        &format!(r#"{{"model":{{"model":"table","k":2,"alphabet":"01","phi":{{{}}}}},"x":"01101","y":"00111","T":0.7}}"#, keys.join(",")),
    );
    let exact: Value = serde_json::from_str(&stdout(&run(&["oracle", "--config", &cfg]))).unwrap();
    let est: Value = serde_json::from_str(&stdout(&run(&["estimate", "--config", &cfg, "--N", "20000"]))).unwrap();
    let (p, lp) = (exact["log_p"].as_f64().unwrap(), est["log_p_hat"].as_f64().unwrap());
    let se = est["se_rel"].as_f64().unwrap();
    assert!(((lp - p).exp() - 1.0).abs() < 4.0 * se, "{lp} vs {p}");
}

#[test]
fn estimate_output_is_reproducible() {
    let args = ["estimate", "--x", "TTCATT", "--y", "TTTGTT", "--lambda", "0.5", "--T", "0.2", "--N", "3000", "--seed", "9", "--workers", "3"];
    assert_eq!(stdout(&run(&args)), stdout(&run(&args)));
    let env = Command::new(env!("CARGO_BIN_EXE_dsmis")).args(&args[..args.len() - 2]).env("DSMIS_WORKERS", "3").output().unwrap();
    assert_eq!(stdout(&env), stdout(&run(&args)));
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("est.json");
    let mut with_out = args.to_vec();
    with_out.extend(["--out", file.to_str().unwrap()]);
    assert_eq!(stdout(&run(&with_out)), "");
    assert_eq!(fs::read_to_string(&file).unwrap(), stdout(&run(&args)));
}

#[test]
fn figure_resume_matches_uninterrupted_run() {
    let grid = ["figure", "--n", "200", "--lambda", "0.5", "--r", "2,4,8", "--t-mult", "0.5", "--replicates", "3", "--N", "300", "--seed", "4"];
    let full = tempfile::tempdir().unwrap();
    let mut args = grid.to_vec();
    args.extend(["--out-dir", full.path().to_str().unwrap()]);
    assert_eq!(stdout(&run(&args)), "complete: 3 points\n");
    let expected = fs::read_to_string(full.path().join("figure.csv")).unwrap();
    assert_eq!(header(&expected).0, "#schema=figure/1");
    assert_eq!(expected.lines().count(), 5);
    assert!(fs::read_to_string(full.path().join("figure.svg")).unwrap().starts_with("<svg"));

    let part = tempfile::tempdir().unwrap();
    let mut args = grid.to_vec();
    args.extend(["--out-dir", part.path().to_str().unwrap(), "--budget-secs", "0"]);
    let msg = stdout(&run(&args));
    assert!(msg.starts_with("partial: 1 of 3 points; resume="), "{msg}");
    let token = fs::read_to_string(part.path().join("figure.resume")).unwrap();
    assert_eq!(msg.trim_end().rsplit('=').next().unwrap(), token.trim());
    let mut again = grid.to_vec();
    again.extend(["--out-dir", part.path().to_str().unwrap(), "--resume", token.trim()]);
    assert_eq!(stdout(&run(&again)), "complete: 3 points\n");
    assert_eq!(fs::read_to_string(part.path().join("figure.csv")).unwrap(), expected);
    assert!(!part.path().join("figure.resume").exists());

    let mut wrong = grid.to_vec();
    wrong[2] = "300";
    wrong.extend(["--out-dir", part.path().to_str().unwrap(), "--resume", token.trim()]);
    assert_eq!(run(&wrong).status.code(), Some(2));
}

#[test]
fn unit_lambda_figure_is_flat() {
    let dir = tempfile::tempdir().unwrap();
    let args = [
        "figure", "--n", "100", "--lambda", "1", "--r", "2,6", "--T", "0.01,0.05", "--replicates", "2", "--N", "200", "--out-dir",
        dir.path().to_str().unwrap(),
    ];
    stdout(&run(&args));
    let text = fs::read_to_string(dir.path().join("figure.csv")).unwrap();
    let rows: Vec<&str> = text.lines().skip(2).collect();
    assert_eq!(rows.len(), 4);
    for row in rows {
        let f: Vec<&str> = row.split(',').collect();
        // l2_hat_mean, its CI and n_star_hat are exact; the bound is 1 / p_r^2.
        assert_eq!((f[12], f[13], f[14], f[15]), ("1", "1", "1", "10000"), "{row}");
        assert!(f[10].parse::<f64>().unwrap() >= 1.0);
    }
}
