//! Compiles the generated header, and a small program linked against the
//! static library, with the system C compiler when one is available.

use std::path::{Path, PathBuf};
use std::process::Command;

fn cc() -> Option<String> {
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    Command::new(&cc).arg("--version").output().ok().filter(|o| o.status.success()).map(|_| cc)
}

fn include_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("include")
}

const PROGRAM: &str = r#"
#include <stdio.h>
#include <string.h>
#include "hetlmf.h"

int main(void) {
    HetlmfLaw law = { HETLMF_LAW_KIND_EXPONENTIAL, 4.0 };
    double lam = 1.0;
    HetlmfPopulation *pop = NULL;
    if (hetlmf_population_new(&lam, &law, 1, &pop) != HETLMF_STATUS_OK) return 1;
    uint64_t lags[2] = { 1, 10 };
    double acf[2];
    if (hetlmf_exact_acf(pop, lags, 2, acf) != HETLMF_STATUS_OK) return 2;
    HetlmfSimulator *sim = NULL;
    if (hetlmf_simulator_new(pop, 7, HETLMF_INIT_MODE_STATIONARY, &sim) != HETLMF_STATUS_OK) return 3;
    int8_t signs[1000];
    if (hetlmf_simulator_run(sim, 1000, signs) != HETLMF_STATUS_OK) return 4;
    hetlmf_simulator_free(sim);
    hetlmf_population_free(pop);
    if (hetlmf_exact_acf(NULL, lags, 2, acf) != HETLMF_STATUS_NULL_POINTER) return 5;
    if (strlen(hetlmf_last_error_message()) == 0) return 6;
    printf("%.12f %.12f\n", acf[0], acf[1]);
    return 0;
}
"#;

#[test]
fn header_compiles_as_c() {
    let Some(cc) = cc() else {
        eprintln!("skipping: no C compiler");
        return;
    };
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("check.c");
    std::fs::write(&src, PROGRAM).unwrap();
    let o = Command::new(&cc)
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(include_dir())
        .arg(&src)
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn program_links_against_static_library() {
    let Some(cc) = cc() else {
        eprintln!("skipping: no C compiler");
        return;
    };
    // Test binaries live in target/<profile>/deps; the static library one level up.
    let exe = std::env::current_exe().unwrap();
    let lib = exe.parent().and_then(Path::parent).unwrap().join("libhetlmf_ffi.a");
    if !lib.exists() {
        eprintln!("skipping: {} not built", lib.display());
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("main.c");
    let bin = dir.path().join("main");
    std::fs::write(&src, PROGRAM).unwrap();
    let o = Command::new(&cc)
        .arg("-I")
        .arg(include_dir())
        .arg(&src)
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&bin)
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let run = Command::new(&bin).output().unwrap();
    assert!(run.status.success(), "exit {:?}", run.status.code());
    let text = String::from_utf8(run.stdout).unwrap();
    let values: Vec<f64> = text.split_whitespace().map(|v| v.parse().unwrap()).collect();
    // A lone exponential trader keeps its sign while its metaorder survives: rho(tau) = exp(-tau / 4).
    assert!((values[0] - (-0.25f64).exp()).abs() < 1e-9, "{text}");
    assert!((values[1] - (-2.5f64).exp()).abs() < 1e-9, "{text}");
}
