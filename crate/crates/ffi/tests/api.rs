use std::ffi::CString;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use mcmcnet::fem::{solve_cem, CurrentPatterns, FieldKind, ParamField};
use mcmcnet::mesh::{assign_electrodes, build_disk_mesh};
use mcmcnet::surrogate::{save_model, Architecture, SurrogateNet};
use mcmcnet_ffi::*;

fn last_error() -> String {
    let mut buf = vec![0u8; 256];
    let n = unsafe { mcn_last_error(buf.as_mut_ptr().cast(), buf.len()) };
    buf.truncate(n.min(255));
    String::from_utf8(buf).unwrap()
}

#[test]
fn solver_matches_the_library() {
    unsafe {
        let mut mesh = ptr::null_mut();
        assert_eq!(mcn_mesh_new(2, &mut mesh), McnStatus::Ok);
        let tris = mcn_mesh_triangle_count(mesh);
        assert!(tris > 0 && mcn_mesh_node_count(mesh) > 0);

        let mut solver = ptr::null_mut();
        assert_eq!(mcn_solver_new(mesh, 16, 0.5, 0.01, &mut solver), McnStatus::Ok);
        mcn_mesh_free(mesh);

        let sigma: Vec<f64> = (0..tris).map(|i| 1.0 + (i % 7) as f64 * 0.1).collect();
        let (mut tiny, mut len) = ([0.0; 1], 1);
        let status = mcn_solver_solve(solver, sigma.as_ptr(), tris, tiny.as_mut_ptr(), &mut len);
        assert_eq!(status, McnStatus::BufferTooSmall);
        assert_eq!(len, 15 * 16);
        let mut out = vec![0.0; len];
        assert_eq!(mcn_solver_solve(solver, sigma.as_ptr(), tris, out.as_mut_ptr(), &mut len), McnStatus::Ok);

        let m = build_disk_mesh(2).unwrap();
        let layout = assign_electrodes(&m, 16, 0.5).unwrap().with_contact_impedance(0.01);
        let field = ParamField::per_triangle(FieldKind::Conductivity, sigma.clone());
        let expected = solve_cem(&m, &layout, &field, &CurrentPatterns::trigonometric(&layout)).unwrap();
        assert_eq!(out, expected.data);

        let bad = vec![1.0; tris - 1];
        assert_eq!(
            mcn_solver_solve(solver, bad.as_ptr(), bad.len(), out.as_mut_ptr(), &mut len),
            McnStatus::InvalidArgument
        );
        assert!(last_error().contains("triangles"));
        mcn_solver_free(solver);
    }
}

#[test]
fn errors_are_reported() {
    unsafe {
        assert_eq!(mcn_mesh_new(0, ptr::null_mut()), McnStatus::NullPointer);
        let mut net = ptr::null_mut();
        let path = CString::new("/nonexistent/model.bin").unwrap();
        assert_eq!(mcn_net_load(path.as_ptr(), &mut net), McnStatus::Model);
        assert!(net.is_null());
        assert!(!last_error().is_empty());
        assert_eq!(mcn_mesh_node_count(ptr::null()), 0);
        mcn_net_free(ptr::null_mut());
    }
}

#[test]
fn net_predicts_like_the_library() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.bin");
    let net = SurrogateNet::he_init(Architecture::new(10, 4), &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
    save_model(&net, &path).unwrap();
    let input: Vec<f64> = (0..10).map(|i| i as f64 / 10.0).collect();
    unsafe {
        let mut handle = ptr::null_mut();
        let c_path = CString::new(path.to_str().unwrap()).unwrap();
        assert_eq!(mcn_net_load(c_path.as_ptr(), &mut handle), McnStatus::Ok);
        assert_eq!(mcn_net_input_dim(handle), 10);
        let mut out = vec![0.0; mcn_net_output_len()];
        let mut len = out.len();
        assert_eq!(mcn_net_predict(handle, input.as_ptr(), 10, out.as_mut_ptr(), &mut len), McnStatus::Ok);
        assert_eq!(out, net.forward(&input).unwrap());
        assert_eq!(
            mcn_net_predict(handle, input.as_ptr(), 9, out.as_mut_ptr(), &mut len),
            McnStatus::InvalidArgument
        );
        mcn_net_free(handle);
    }
}

/// Directory holding the built cdylib, two levels above this test binary.
fn lib_dir() -> PathBuf {
    let exe = std::env::current_exe().unwrap();
    exe.parent().and_then(Path::parent).unwrap().to_path_buf()
}

#[test]
fn header_compiles_and_links_from_c() {
    let Ok(cc) = which_cc() else {
        eprintln!("no C compiler found; skipping");
        return;
    };
    let lib = lib_dir();
    if !lib.join("libmcmcnet_ffi.so").exists() {
        eprintln!("cdylib not built at {}; skipping", lib.display());
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("smoke.c");
    std::fs::write(
        &src,
        r#"#include "mcmcnet.h"
#include <stdio.h>
int main(void) {
    McnMesh *mesh = NULL;
    if (mcn_mesh_new(2, &mesh) != MCN_STATUS_OK) return 1;
    McnSolver *solver = NULL;
    if (mcn_solver_new(mesh, 16, 0.5, 0.01, &solver) != MCN_STATUS_OK) return 2;
    size_t tris = mcn_mesh_triangle_count(mesh);
    mcn_mesh_free(mesh);
    double sigma[4096], out[240];
    for (size_t i = 0; i < tris; i++) sigma[i] = 1.0;
    size_t len = 240;
    if (mcn_solver_solve(solver, sigma, tris, out, &len) != MCN_STATUS_OK || len != 240) return 3;
    if (mcn_solver_solve(solver, sigma, tris - 1, out, &len) != MCN_STATUS_INVALID_ARGUMENT) return 4;
    char msg[128];
    mcn_last_error(msg, sizeof msg);
    printf("%s\n", msg);
    mcn_solver_free(solver);
    return 0;
}
"#,
    )
    .unwrap();
    let bin = dir.path().join("smoke");
    let include = Path::new(env!("CARGO_MANIFEST_DIR")).join("include");
    let status = Command::new(cc)
        .arg(&src)
        .arg("-I")
        .arg(&include)
        .arg("-L")
        .arg(&lib)
        .args(["-lmcmcnet_ffi", "-o"])
        .arg(&bin)
        .status()
        .unwrap();
    assert!(status.success(), "C smoke program failed to build");
    let out = Command::new(&bin).env("LD_LIBRARY_PATH", &lib).output().unwrap();
    assert!(out.status.success(), "C smoke program exited with {:?}", out.status.code());
    assert!(String::from_utf8_lossy(&out.stdout).contains("triangles"));
}

fn which_cc() -> Result<String, ()> {
    ["cc", "gcc", "clang"]
        .into_iter()
        .find(|c| Command::new(c).arg("--version").output().is_ok_and(|o| o.status.success()))
        .map(str::to_string)
        .ok_or(())
}
