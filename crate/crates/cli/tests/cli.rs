use std::process::Command;

fn solver() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_solver"));
    c.env("RUST_LOG", "warn");
    c
}

#[test]
fn diffusion_limit_writes_tables() {
    let dir = std::env::temp_dir().join(format!("dgsmm-cli-{}", std::process::id()));
    let out = solver()
        .args(["diffusion-limit", "--lo", "p1", "--epsilon", "0.1,0.01", "--out-dir"])
        .arg(&dir)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let table = std::fs::read_to_string(dir.join("diffusion_limit_iterations.csv")).unwrap();
    let mut lines = table.lines();
    assert_eq!(lines.next(), Some("method,epsilon,iterations,converged,status"));
    assert_eq!(lines.count(), 2);
    assert!(dir.join("diffusion_limit_lineout.csv").exists());
    std::fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn tables_go_to_stdout_without_out_dir() {
    let out = solver().args(["mms", "--lo", "p1", "--refine", "1"]).output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("# mms_errors.csv"));
    assert!(text.contains("# mms_orders.csv"));
    assert_eq!(text.matches("p1-consistent-half,").count(), 3);
}

#[test]
fn invalid_method_combination_is_an_error() {
    let out = solver().args(["mms", "--lo", "ldg", "--variant", "independent", "--bc", "half"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("full-range"));
}

#[test]
fn unknown_case_is_rejected() {
    let out = solver().arg("sphere").output().unwrap();
    assert!(!out.status.success());
}
