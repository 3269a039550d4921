//! End-to-end checks of the command-line contract: exit code 0 on success,
//! one distinct nonzero code per error class, a one-line diagnostic naming
//! the offending input, and no output file left behind by a failed run.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use stereoflow::formats::{
    read_mask_png, write_flow_png, write_intrinsics, write_mask_png, write_pfm, write_pose_file,
};
use stereoflow::geometry::{Intrinsics, PoseSE3, StereoRig};
use stereoflow::raster::{Grid, Mask};
use stereoflow::synth::{RectConfig, SceneConfig};
use stereoflow::warp::FlowField;
use tempfile::TempDir;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stereoflow"))
        .args(args)
        .output()
        .expect("binary should spawn")
}

fn exit_code(out: &Output) -> i32 {
    out.status.code().expect("process should exit, not die on a signal")
}

fn diagnostic(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).trim_end().to_string()
}

fn s(path: &Path) -> String {
    path.display().to_string()
}

/// Constant flow with every pixel valid.
fn write_flow(path: &Path, w: usize, h: usize, u: f64, v: f64) {
    write_flow_png(path, &FlowField::constant(w, h, u, v), &Mask::all_true(w, h)).unwrap();
}

fn write_const_pfm(path: &Path, w: usize, h: usize, value: f64) {
    write_pfm(path, &Grid::from_vec(w, h, vec![value; w * h]).unwrap()).unwrap();
}

/// Valid inputs for `segment` on a 6x5 frame; returns (flow, rigid, occlusion).
fn segment_inputs(dir: &TempDir) -> (PathBuf, PathBuf, PathBuf) {
    let flow = dir.path().join("flow.png");
    let rigid = dir.path().join("rigid.png");
    let occ = dir.path().join("occ.png");
    write_flow(&flow, 6, 5, 1.5, -0.25);
    write_flow(&rigid, 6, 5, 1.5, -0.25);
    write_mask_png(&occ, &Mask::all_true(6, 5)).unwrap();
    (flow, rigid, occ)
}

#[test]
fn identical_flows_segment_to_an_all_zero_mask() {
    let dir = TempDir::new().unwrap();
    let (flow, rigid, occ) = segment_inputs(&dir);
    let out = dir.path().join("mask.png");
    let res = run(&[
        "segment",
        "--flow",
        &s(&flow),
        "--rigid-flow",
        &s(&rigid),
        "--occlusion",
        &s(&occ),
        "--out",
        &s(&out),
    ]);
    assert_eq!(exit_code(&res), 0, "stderr: {}", diagnostic(&res));
    assert_eq!(read_mask_png(&out).unwrap().count(), 0);
    // Atomic writes leave nothing behind: the directory holds exactly the
    // three inputs and the output, no temp files.
    let mut names: Vec<_> = fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert_eq!(names, ["flow.png", "mask.png", "occ.png", "rigid.png"]);
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    assert_eq!(exit_code(&run(&["frobnicate"])), 2);
}

#[test]
fn rejected_parameter_exits_ten() {
    let dir = TempDir::new().unwrap();
    let (flow, rigid, occ) = segment_inputs(&dir);
    let out = dir.path().join("mask.png");
    let res = run(&[
        "segment",
        "--flow",
        &s(&flow),
        "--rigid-flow",
        &s(&rigid),
        "--occlusion",
        &s(&occ),
        "--delta=-1",
        "--out",
        &s(&out),
    ]);
    assert_eq!(exit_code(&res), 10, "stderr: {}", diagnostic(&res));
    let msg = diagnostic(&res);
    assert!(msg.starts_with("stereoflow:"), "diagnostic: {msg}");
    assert_eq!(msg.lines().count(), 1, "diagnostic: {msg}");
    assert!(!out.exists());
}

#[test]
fn corrupt_input_exits_eleven_and_names_it() {
    let dir = TempDir::new().unwrap();
    let pred = dir.path().join("pred.pfm");
    let gt = dir.path().join("gt.pfm");
    let out = dir.path().join("report.json");
    fs::write(&pred, b"not a pfm at all").unwrap();
    write_const_pfm(&gt, 4, 3, 2.0);
    let res = run(&[
        "eval", "depth", "--pred", &s(&pred), "--gt", &s(&gt), "--out", &s(&out),
    ]);
    assert_eq!(exit_code(&res), 11, "stderr: {}", diagnostic(&res));
    let msg = diagnostic(&res);
    assert!(msg.contains("pred.pfm"), "diagnostic should name the file: {msg}");
    assert_eq!(msg.lines().count(), 1, "diagnostic: {msg}");
    assert!(!out.exists(), "failed run must not leave an output file");
}

#[test]
fn missing_input_file_exits_eleven() {
    let dir = TempDir::new().unwrap();
    let (_, rigid, occ) = segment_inputs(&dir);
    let res = run(&[
        "segment",
        "--flow",
        &s(&dir.path().join("absent.png")),
        "--rigid-flow",
        &s(&rigid),
        "--occlusion",
        &s(&occ),
        "--out",
        &s(&dir.path().join("mask.png")),
    ]);
    assert_eq!(exit_code(&res), 11, "stderr: {}", diagnostic(&res));
    assert!(diagnostic(&res).contains("absent.png"));
}

#[test]
fn unwritable_output_exits_twelve() {
    let dir = TempDir::new().unwrap();
    let (flow, rigid, occ) = segment_inputs(&dir);
    let res = run(&[
        "segment",
        "--flow",
        &s(&flow),
        "--rigid-flow",
        &s(&rigid),
        "--occlusion",
        &s(&occ),
        "--out",
        &s(&dir.path().join("no_such_dir").join("mask.png")),
    ]);
    assert_eq!(exit_code(&res), 12, "stderr: {}", diagnostic(&res));
}

#[test]
fn mismatched_rasters_exit_thirteen() {
    let dir = TempDir::new().unwrap();
    let (flow, _, occ) = segment_inputs(&dir);
    let narrow = dir.path().join("narrow.png");
    write_flow(&narrow, 5, 5, 1.5, -0.25);
    let res = run(&[
        "segment",
        "--flow",
        &s(&flow),
        "--rigid-flow",
        &s(&narrow),
        "--occlusion",
        &s(&occ),
        "--out",
        &s(&dir.path().join("mask.png")),
    ]);
    assert_eq!(exit_code(&res), 13, "stderr: {}", diagnostic(&res));
}

#[test]
fn no_jointly_valid_depth_exits_fourteen() {
    let dir = TempDir::new().unwrap();
    let pred = dir.path().join("pred.pfm");
    let gt = dir.path().join("gt.pfm");
    // Zeros are invalid depths, so no pixel survives the joint validity mask.
    write_const_pfm(&pred, 4, 3, 0.0);
    write_const_pfm(&gt, 4, 3, 2.0);
    let res = run(&[
        "eval",
        "depth",
        "--pred",
        &s(&pred),
        "--gt",
        &s(&gt),
        "--out",
        &s(&dir.path().join("report.json")),
    ]);
    assert_eq!(exit_code(&res), 14, "stderr: {}", diagnostic(&res));
}

#[test]
fn fully_occluded_alignment_exits_fourteen() {
    let dir = TempDir::new().unwrap();
    let depth1 = dir.path().join("depth1.pfm");
    let depth2 = dir.path().join("depth2.pfm");
    let flow = dir.path().join("flow.png");
    let pose = dir.path().join("pose.txt");
    let k_file = dir.path().join("intrinsics.txt");
    let occ = dir.path().join("occ.png");
    write_const_pfm(&depth1, 6, 5, 2.0);
    write_const_pfm(&depth2, 6, 5, 2.0);
    write_flow(&flow, 6, 5, 0.0, 0.0);
    write_pose_file(&pose, &[PoseSE3::identity()]).unwrap();
    let k = Intrinsics::new(50.0, 50.0, 2.5, 2.0, 6, 5).unwrap();
    write_intrinsics(&k_file, &k, None).unwrap();
    write_mask_png(&occ, &Mask::all_false(6, 5)).unwrap();
    let res = run(&[
        "align",
        "--depth1",
        &s(&depth1),
        "--depth2",
        &s(&depth2),
        "--flow",
        &s(&flow),
        "--intrinsics",
        &s(&k_file),
        "--pose-init",
        &s(&pose),
        "--occlusion",
        &s(&occ),
        "--out-pose",
        &s(&dir.path().join("refined.txt")),
    ]);
    assert_eq!(exit_code(&res), 14, "stderr: {}", diagnostic(&res));
}

#[test]
fn uncovered_scene_exits_fifteen() {
    let dir = TempDir::new().unwrap();
    let cfg_path = dir.path().join("scene.toml");
    let k = Intrinsics::new(80.0, 80.0, 63.5, 31.5, 128, 64).unwrap();
    // A single small rectangle and no background planes: corner rays hit
    // nothing, so the render has pixels with no surface behind them.
    let config = SceneConfig {
        rig: StereoRig::new(k, 0.5).unwrap(),
        camera_motion: PoseSE3::identity(),
        planes: vec![],
        objects: vec![RectConfig {
            z: 3.0,
            x_min: -0.2,
            x_max: 0.2,
            y_min: -0.2,
            y_max: 0.2,
            motion: PoseSE3::identity(),
            texture_seed: 7,
        }],
    };
    config.save(&cfg_path).unwrap();
    let out_dir = dir.path().join("sample");
    fs::create_dir(&out_dir).unwrap();
    let res = run(&[
        "synth", "--config", &s(&cfg_path), "--out", &s(&out_dir),
    ]);
    assert_eq!(exit_code(&res), 15, "stderr: {}", diagnostic(&res));
}
