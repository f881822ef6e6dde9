use std::ffi::{CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use hcmfl_ffi::*;

const TREE: &str = "A\tROOT\t1\nB\tROOT\t1\na1\tA\t2\na2\tA\t2\nb1\tB\t2\n";

fn last_error() -> String {
    let p = hcmfl_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn parse(text: &str) -> (HcmflStatus, *mut HcmflHierarchy) {
    let text = CString::new(text).unwrap();
    let mut h = ptr::null_mut();
    let status = unsafe { hcmfl_hierarchy_parse(text.as_ptr(), &mut h) };
    (status, h)
}

#[test]
fn hierarchy_round_trip() {
    let (status, h) = parse(TREE);
    assert_eq!(status, HcmflStatus::Ok);
    let mut n = 0;
    unsafe {
        assert_eq!(hcmfl_hierarchy_num_leaves(h, &mut n), HcmflStatus::Ok);
        assert_eq!(n, 3);
        assert_eq!(hcmfl_hierarchy_num_nodes(h, &mut n), HcmflStatus::Ok);
        assert_eq!(n, 6);

        let name = CString::new("b1").unwrap();
        assert_eq!(hcmfl_hierarchy_leaf_index(h, name.as_ptr(), &mut n), HcmflStatus::Ok);
        assert_eq!(n, 2);

        let mut needed = 0;
        assert_eq!(hcmfl_hierarchy_leaf_name(h, 1, ptr::null_mut(), 0, &mut needed), HcmflStatus::BufferTooSmall);
        assert_eq!(needed, 3);
        let mut buf = vec![0 as std::ffi::c_char; needed];
        assert_eq!(hcmfl_hierarchy_leaf_name(h, 1, buf.as_mut_ptr(), buf.len(), &mut needed), HcmflStatus::Ok);
        assert_eq!(CStr::from_ptr(buf.as_ptr()).to_str().unwrap(), "a2");

        let unknown = CString::new("zz").unwrap();
        assert_eq!(hcmfl_hierarchy_leaf_index(h, unknown.as_ptr(), &mut n), HcmflStatus::InvalidArgument);
        hcmfl_hierarchy_free(h);
    }
}

#[test]
fn cycle_is_a_parse_error_with_message() {
    let (status, h) = parse("x\ty\ny\tx\n");
    assert_eq!(status, HcmflStatus::Parse);
    assert!(h.is_null());
    assert!(!last_error().is_empty());
}

#[test]
fn null_arguments_rejected() {
    let mut h = ptr::null_mut();
    assert_eq!(unsafe { hcmfl_hierarchy_parse(ptr::null(), &mut h) }, HcmflStatus::NullPointer);
    assert!(last_error().contains("text"));
    let mut n = 0;
    assert_eq!(unsafe { hcmfl_hierarchy_num_leaves(ptr::null(), &mut n) }, HcmflStatus::NullPointer);
    unsafe {
        hcmfl_hierarchy_free(ptr::null_mut());
        hcmfl_network_free(ptr::null_mut());
    }
}

#[test]
fn zero_head_predicts_uniform_and_label_zero() {
    let mut net = ptr::null_mut();
    unsafe {
        assert_eq!(hcmfl_network_init(4, 1, 8, 3, 9, &mut net), HcmflStatus::Ok);
        let (mut d, mut t) = (0, 0);
        assert_eq!(hcmfl_network_shape(net, &mut d, &mut t), HcmflStatus::Ok);
        assert_eq!((d, t), (4, 3));

        let x = [0.5, -1.0, 2.0, 0.0, 1.0, 1.0, 1.0, 1.0];
        let mut probs = [0.0; 6];
        assert_eq!(hcmfl_network_predict_proba(net, x.as_ptr(), 2, 4, probs.as_mut_ptr(), 6), HcmflStatus::Ok);
        for p in probs {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }
        let mut labels = [7usize; 2];
        assert_eq!(hcmfl_network_predict(net, x.as_ptr(), 2, 4, labels.as_mut_ptr()), HcmflStatus::Ok);
        assert_eq!(labels, [0, 0]);

        assert_eq!(hcmfl_network_predict_proba(net, x.as_ptr(), 2, 4, probs.as_mut_ptr(), 5), HcmflStatus::BufferTooSmall);
        assert_eq!(hcmfl_network_predict(net, x.as_ptr(), 4, 2, labels.as_mut_ptr()), HcmflStatus::DimensionMismatch);
        hcmfl_network_free(net);
    }
}

#[test]
fn checkpoint_save_and_load() {
    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("net.bin").to_str().unwrap()).unwrap();
    let mut net = ptr::null_mut();
    let mut back = ptr::null_mut();
    unsafe {
        assert_eq!(hcmfl_network_init(3, 2, 5, 4, 1, &mut net), HcmflStatus::Ok);
        assert_eq!(hcmfl_network_save(net, path.as_ptr()), HcmflStatus::Ok);
        assert_eq!(hcmfl_network_load(path.as_ptr(), &mut back), HcmflStatus::Ok);
        let mut t = 0;
        assert_eq!(hcmfl_network_shape(back, ptr::null_mut(), &mut t), HcmflStatus::Ok);
        assert_eq!(t, 4);
        hcmfl_network_free(net);
        hcmfl_network_free(back);

        let missing = CString::new(dir.path().join("nope.bin").to_str().unwrap()).unwrap();
        assert_eq!(hcmfl_network_load(missing.as_ptr(), &mut back), HcmflStatus::Io);
    }
}

#[test]
fn evaluate_matches_accuracy() {
    let preds = [0usize, 1, 1, 1];
    let truths = [0usize, 0, 1, 2];
    let (mut macro_f1, mut micro_f1) = (0.0, 0.0);
    let status = unsafe { hcmfl_evaluate(preds.as_ptr(), truths.as_ptr(), 4, 3, &mut macro_f1, &mut micro_f1) };
    assert_eq!(status, HcmflStatus::Ok);
    assert!((micro_f1 - 0.5).abs() < 1e-15);
    assert!((macro_f1 - 7.0 / 18.0).abs() < 1e-15);
    let bad = [5usize, 0, 0, 0];
    let status = unsafe { hcmfl_evaluate(bad.as_ptr(), truths.as_ptr(), 4, 3, &mut macro_f1, &mut micro_f1) };
    assert_eq!(status, HcmflStatus::InvalidArgument);
}

#[test]
fn keyframes_from_distances_and_pixels() {
    let mut d = vec![0.1; 30];
    d[9] = 5.0;
    let mut out = [0usize; 20];
    let mut written = 0;
    unsafe {
        let s = hcmfl_select_keyframes_from_distances(d.as_ptr(), d.len(), out.as_mut_ptr(), out.len(), &mut written);
        assert_eq!(s, HcmflStatus::Ok);
        assert_eq!(&out[..written], &[10]);
        let s = hcmfl_select_keyframes_from_distances(d.as_ptr(), d.len(), out.as_mut_ptr(), 0, &mut written);
        assert_eq!((s, written), (HcmflStatus::BufferTooSmall, 1));
    }

    let (w, h) = (4, 3);
    let mut pixels = Vec::new();
    for f in 0..12 {
        let v = if f < 6 { 0u8 } else { 250u8 };
        pixels.extend(std::iter::repeat(v).take(w * h * 3));
    }
    let s = unsafe { hcmfl_select_keyframes_rgb(pixels.as_ptr(), 12, w, h, out.as_mut_ptr(), out.len(), &mut written) };
    assert_eq!(s, HcmflStatus::Ok);
    assert_eq!(&out[..written], &[6]);
}

#[test]
fn version_is_a_c_string() {
    let v = unsafe { CStr::from_ptr(hcmfl_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_compiles_as_c() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/hcmfl.h");
    assert!(header.exists(), "build script writes the header");
    let text = std::fs::read_to_string(&header).unwrap();
    for f in ["hcmfl_hierarchy_parse", "hcmfl_network_predict", "hcmfl_evaluate", "hcmfl_last_error"] {
        assert!(text.contains(f), "{f} missing from header");
    }
    let Ok(cc) = Command::new("cc").arg("--version").output() else {
        eprintln!("no C compiler; skipping compile check");
        return;
    };
    assert!(cc.status.success());
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("use.c");
    std::fs::write(
        &src,
        "#include \"hcmfl.h\"\nint main(void) { HcmflHierarchy *h = 0; return hcmfl_hierarchy_parse(\"a\\tROOT\\n\", &h) == HCMFL_STATUS_OK ? 0 : 1; }\n",
    )
    .unwrap();
    let status = Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(header.parent().unwrap())
        .arg(&src)
        .status()
        .unwrap();
    assert!(status.success());
}
