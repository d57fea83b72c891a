//! Compiles a small C program against the generated header and shared
//! library, then runs it. Skipped when no C compiler is on PATH.

use std::path::PathBuf;
use std::process::Command;

const PROGRAM: &str = r#"
#include <stdio.h>
#include "quadbench.h"

int main(void) {
    QbEnv *env = NULL;
    QbGcController *gc = NULL;
    if (qb_env_new(QB_TASK_HOVER, QB_MORPHOLOGY_AERIAL_MANIPULATOR, QB_FIDELITY_REALISTIC, 0.0, 5, &env) != QB_STATUS_OK) {
        fprintf(stderr, "env: %s\n", qb_last_error());
        return 1;
    }
    QbGains gains = qb_gains_manual();
    if (qb_gc_new(env, &gains, QB_FEEDFORWARD_FF, &gc) != QB_STATUS_OK) {
        fprintf(stderr, "gc: %s\n", qb_last_error());
        return 1;
    }
    QbStep step = {0};
    int n = 0;
    while (!step.done) {
        QbWrench w;
        if (qb_gc_compute(gc, env, &w) != QB_STATUS_OK || qb_env_step(env, w, &step) != QB_STATUS_OK) {
            fprintf(stderr, "step: %s\n", qb_last_error());
            return 1;
        }
        n++;
    }
    if (qb_env_new(QB_TASK_HOVER, QB_MORPHOLOGY_QUADROTOR, QB_FIDELITY_SIMPLE, 0.0, 0, NULL) != QB_STATUS_NULL_POINTER) {
        return 2;
    }
    printf("%s %d %.6f\n", qb_version(), n, step.position_error[2]);
    qb_gc_free(gc);
    qb_env_free(env);
    return 0;
}
"#;

#[test]
fn c_program_links_and_runs() {
    if Command::new("cc").arg("--version").output().is_err() {
        eprintln!("no C compiler; skipping");
        return;
    }
    let manifest = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    // target/<profile>/deps/<test binary>
    let lib_dir = std::env::current_exe().unwrap().parent().unwrap().parent().unwrap().to_path_buf();
    if !lib_dir.join("libquadbench_ffi.so").exists() {
        eprintln!("shared library not built in {}; skipping", lib_dir.display());
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("main.c");
    let exe = dir.path().join("main");
    std::fs::write(&src, PROGRAM).unwrap();
    let status = Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-o"])
        .arg(&exe)
        .arg(&src)
        .arg("-I")
        .arg(manifest.join("include"))
        .arg("-L")
        .arg(&lib_dir)
        .arg("-lquadbench_ffi")
        .status()
        .unwrap();
    assert!(status.success(), "C compilation failed");
    let out = Command::new(&exe).env("LD_LIBRARY_PATH", &lib_dir).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8(out.stdout).unwrap();
    let fields: Vec<&str> = stdout.split_whitespace().collect();
    assert_eq!(fields[0], env!("CARGO_PKG_VERSION"));
    assert_eq!(fields[1], "500");
    assert!(fields[2].parse::<f64>().unwrap().abs() < 0.05, "{stdout}");
}
