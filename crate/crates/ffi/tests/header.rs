use std::path::Path;
use std::process::Command;

const PROGRAM: &str = r#"
#include "blowup_lab.h"
int probe(void) {
    BlData *d = 0;
    BlStatus s = bl_data_new("cos(2*pi*x)", "0", 16, &d);
    double te = 0.0;
    if (s == BL_STATUS_OK) s = bl_euler_blowup_time(d, &te, 0);
    bl_data_free(d);
    return s == BL_STATUS_OK ? 0 : (int)s;
}
"#;

#[test]
fn header_compiles_as_c() {
    let inc = Path::new(env!("CARGO_MANIFEST_DIR")).join("include");
    let h = inc.join("blowup_lab.h");
    assert!(h.exists(), "{} missing", h.display());
    let text = std::fs::read_to_string(&h).unwrap();
    for sym in ["bl_data_new", "bl_detect_blowup", "bl_spectral_step", "bl_last_error_message", "BL_STATUS_PANIC"] {
        assert!(text.contains(sym), "{sym} not in header");
    }
    let Ok(cc) = which_cc() else {
        eprintln!("no C compiler; skipping compile check");
        return;
    };
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("probe.c");
    std::fs::write(&src, PROGRAM).unwrap();
    let out = Command::new(cc)
        .args(["-std=c99", "-Wall", "-Werror", "-c", "-o"])
        .arg(dir.path().join("probe.o"))
        .arg("-I")
        .arg(&inc)
        .arg(&src)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

fn which_cc() -> Result<&'static str, ()> {
    ["cc", "gcc", "clang"]
        .into_iter()
        .find(|c| Command::new(c).arg("--version").output().is_ok())
        .ok_or(())
}
