use std::ffi::{CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use fedsel_ffi::*;

fn last_error() -> String {
    let p = fedsel_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

const SMALL: &str = r#"
method = "sbro"
rounds = 3
[partition]
num_clients = 10
samples_total = 500
flip_groups = [{ count = 2, ratio = 0.9 }, { count = 2, ratio = 0.6 }, { count = 6, ratio = 0.0 }]
[data]
validation_size = 200
test_size = 200
"#;

fn new_sim(toml: &str) -> *mut FedselSimulation {
    let text = CString::new(toml).unwrap();
    let mut sim = ptr::null_mut();
    let status = unsafe { fedsel_simulation_new(text.as_ptr(), &mut sim) };
    assert_eq!(status, FedselStatus::Ok, "{}", last_error());
    assert!(!sim.is_null());
    sim
}

#[test]
fn simulation_lifecycle() {
    let sim = new_sim(SMALL);
    unsafe {
        let mut n = 0;
        assert_eq!(fedsel_simulation_num_clients(sim, &mut n), FedselStatus::Ok);
        assert_eq!(n, 10);

        let mut acc = -1.0;
        assert_eq!(fedsel_simulation_step(sim, &mut acc), FedselStatus::Ok);
        assert!((0.0..=1.0).contains(&acc));

        let mut ids = [0usize; 10];
        let mut len = 0;
        assert_eq!(
            fedsel_simulation_last_selected(sim, ids.as_mut_ptr(), ids.len(), &mut len),
            FedselStatus::Ok
        );
        assert!((1..=10).contains(&len));

        assert_eq!(fedsel_simulation_run(sim), FedselStatus::Ok);
        let mut rounds = 0;
        fedsel_simulation_rounds_completed(sim, &mut rounds);
        assert_eq!(rounds, 3);
        assert_eq!(fedsel_simulation_step(sim, ptr::null_mut()), FedselStatus::Finished);

        let mut rep = [f64::NAN; 10];
        assert_eq!(
            fedsel_simulation_reputation(sim, rep.as_mut_ptr(), rep.len(), &mut len),
            FedselStatus::Ok
        );
        assert_eq!(len, 10);
        assert!(rep.iter().all(|r| r.is_finite()));

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.csv");
        let cpath = CString::new(path.to_str().unwrap()).unwrap();
        assert_eq!(fedsel_simulation_write_csv(sim, cpath.as_ptr()), FedselStatus::Ok);
        assert_eq!(std::fs::read_to_string(&path).unwrap().lines().count(), 4);

        fedsel_simulation_free(sim);
        fedsel_simulation_free(ptr::null_mut());
    }
}

#[test]
fn small_buffer_reports_length() {
    let sim = new_sim(SMALL);
    unsafe {
        let mut buf = [0.0; 3];
        let mut len = 0;
        let status = fedsel_simulation_reputation(sim, buf.as_mut_ptr(), buf.len(), &mut len);
        assert_eq!(status, FedselStatus::BufferTooSmall);
        assert_eq!(len, 10);
        fedsel_simulation_free(sim);
    }
}

#[test]
fn bad_config_sets_error() {
    let text = CString::new("rounds = 0").unwrap();
    let mut sim = ptr::null_mut();
    let status = unsafe { fedsel_simulation_new(text.as_ptr(), &mut sim) };
    assert_eq!(status, FedselStatus::InvalidConfig);
    assert!(sim.is_null());
    assert!(last_error().contains("rounds"));

    let status = unsafe { fedsel_simulation_new(ptr::null(), &mut sim) };
    assert_eq!(status, FedselStatus::NullPointer);
}

#[test]
fn selection_kernel() {
    let w = [0.5, 0.3, 0.2];
    let b = [10.0, 10.0, 10.0];
    let mut sel = [9u8; 3];
    let (mut obj, mut cost) = (0.0, 0.0);
    let status = unsafe {
        fedsel_solve_selection(w.as_ptr(), b.as_ptr(), 3, 20.0, sel.as_mut_ptr(), &mut obj, &mut cost)
    };
    assert_eq!(status, FedselStatus::Ok);
    assert_eq!(sel, [1, 1, 0]);
    assert!((obj - 0.8).abs() < 1e-12);
    assert_eq!(cost, 20.0);

    let status = unsafe {
        fedsel_solve_selection(w.as_ptr(), b.as_ptr(), 3, -1.0, sel.as_mut_ptr(), ptr::null_mut(), ptr::null_mut())
    };
    assert_eq!(status, FedselStatus::InvalidArgument);
}

#[test]
fn shapley_kernel() {
    let table = [0.5, 0.6, 0.55, 0.7];
    let mut out = [0.0; 2];
    let status = unsafe { fedsel_exact_shapley(table.as_ptr(), 2, out.as_mut_ptr()) };
    assert_eq!(status, FedselStatus::Ok);
    assert!((out[0] - 0.125).abs() < 1e-12);
    assert!((out[1] - 0.075).abs() < 1e-12);
    let status = unsafe { fedsel_exact_shapley(table.as_ptr(), 0, out.as_mut_ptr()) };
    assert_eq!(status, FedselStatus::TooLarge);
}

#[test]
fn score_kernel() {
    let mut z = f64::NAN;
    unsafe {
        assert_eq!(fedsel_reputation_score(2.0, 1.0, 0.15, 0.3, 1.0, 0, &mut z), FedselStatus::Ok);
        assert_eq!(z, 1.0);
        fedsel_reputation_score(0.0, 1.0, 0.15, 0.3, 1.0, 0, &mut z);
        assert_eq!(z, -1.0);
        fedsel_reputation_score(0.0, 1.0, 0.15, 0.3, 1.0, 1, &mut z);
        assert_eq!(z, 1.0);
        assert_eq!(
            fedsel_reputation_score(0.0, 1.0, 0.15, 0.3, 1.0, 0, ptr::null_mut()),
            FedselStatus::NullPointer
        );
    }
}

#[test]
fn header_declares_api_and_compiles_as_c() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/fedsel.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for name in [
        "fedsel_last_error",
        "fedsel_simulation_new",
        "fedsel_simulation_step",
        "fedsel_simulation_free",
        "fedsel_solve_selection",
        "fedsel_exact_shapley",
        "fedsel_reputation_score",
        "typedef struct FedselSimulation FedselSimulation",
    ] {
        assert!(text.contains(name), "header lacks {name}");
    }

    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("use.c");
    std::fs::write(
        &src,
        format!(
            "#include \"{}\"\nint main(void) {{ FedselSimulation *s = 0; \
             FedselStatus st = fedsel_simulation_new(\"\", &s); fedsel_simulation_free(s); \
             return st == FEDSEL_STATUS_OK ? 0 : 1; }}\n",
            header.display()
        ),
    )
    .unwrap();
    let out = Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only"])
        .arg(&src)
        .output()
        .expect("a C compiler (cc) is required for this test");
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}
