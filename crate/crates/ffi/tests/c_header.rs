//! Compiles and runs a C program against the generated header and the static
//! library. Skipped when no C compiler is available.

use std::path::{Path, PathBuf};
use std::process::Command;

const PROGRAM: &str = r#"
#include <stdio.h>
#include "raydepth.h"

int main(void) {
    RdDataset *ds = NULL;
    if (rd_dataset_generate("sphere", 2, 1, 12, 0.0, 3, &ds) != RD_STATUS_OK) {
        fprintf(stderr, "generate: %s\n", rd_last_error());
        return 1;
    }
    RdTrainer *tr = NULL;
    if (rd_trainer_new(ds, "{\"grid\": [6, 6, 6], \"samples_per_ray\": 8, \"rays_per_batch\": 16}", &tr) != RD_STATUS_OK) {
        fprintf(stderr, "trainer: %s\n", rd_last_error());
        return 1;
    }
    double loss = 0.0;
    if (rd_trainer_step(tr, 3, &loss) != RD_STATUS_OK || !(loss > 0.0)) return 1;
    RdMetrics m;
    if (rd_trainer_evaluate(tr, &m) != RD_STATUS_OK || m.iteration != 3) return 1;
    if (rd_dataset_generate("nope", 2, 1, 12, 0.0, 3, &ds) != RD_STATUS_INVALID_ARGUMENT) return 1;
    rd_trainer_free(tr);
    printf("ok %s\n", rd_version());
    return 0;
}
"#;

fn static_lib() -> Option<PathBuf> {
    // target/<profile>/deps/<test binary>
    let exe = std::env::current_exe().ok()?;
    let deps = exe.parent()?;
    for dir in [deps.parent()?, deps] {
        let lib = dir.join("libraydepth_ffi.a");
        if lib.is_file() {
            return Some(lib);
        }
    }
    None
}

fn have_cc() -> bool {
    Command::new("cc")
        .arg("--version")
        .output()
        .is_ok_and(|o| o.status.success())
}

#[test]
fn c_program_links_and_runs() {
    if !have_cc() {
        eprintln!("skipping: no C compiler");
        return;
    }
    let Some(lib) = static_lib() else {
        eprintln!("skipping: static library not found");
        return;
    };
    let include = Path::new(env!("CARGO_MANIFEST_DIR")).join("include");
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("main.c");
    let exe = dir.path().join("main");
    std::fs::write(&src, PROGRAM).unwrap();
    let out = Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-I"])
        .arg(&include)
        .arg(&src)
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "cc failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let run = Command::new(&exe).output().unwrap();
    assert!(
        run.status.success(),
        "{}",
        String::from_utf8_lossy(&run.stderr)
    );
    assert!(String::from_utf8_lossy(&run.stdout).starts_with("ok "));
}
