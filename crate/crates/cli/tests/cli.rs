use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = "\
train_scenes = 2
eval_scenes = 1
views = 3
width = 24
height = 24
focal = 24.0
grid_dims = 16,16,8
voxel_size = 1.0
c_v = 6
hidden = 8
k = 2
channels = 4
steps = 6
warmup = 2
metrics_every = 2
";

fn ocrf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ocrf")).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn small_config(dir: &Path) -> String {
    let p = dir.join("small.cfg");
    fs::write(&p, SMALL).unwrap();
    p.to_str().unwrap().to_owned()
}

fn tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<(String, Vec<u8>)> = Vec::new();
    for e in fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        let name = p.file_name().unwrap().to_string_lossy().into_owned();
        if p.is_dir() {
            out.extend(tree(&p).into_iter().map(|(n, b)| (format!("{name}/{n}"), b)));
        } else {
            out.push((name, fs::read(&p).unwrap()));
        }
    }
    out.sort();
    out
}

#[test]
fn gradcheck_passes() {
    let o = ocrf(&["gradcheck"]);
    let text = String::from_utf8_lossy(&o.stdout);
    assert_eq!(code(&o), 0, "{text}");
    assert!(text.contains(" 0 failed"), "{text}");
    assert!(!text.contains("FAIL"));
}

#[test]
fn usage_errors_exit_one() {
    let o = ocrf(&["train", "--config", "missing.cfg"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("missing.cfg"));
    let o = ocrf(&["train", "--bogus"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("Usage"));
    assert_eq!(code(&ocrf(&["frobnicate"])), 1);
    assert_eq!(code(&ocrf(&["synth", "--goal", "everything"])), 1);
    assert_eq!(code(&ocrf(&["synth", "--steps", "10", "--warmup", "20"])), 1);
    assert_eq!(code(&ocrf(&["--help"])), 0);
}

#[test]
fn bad_thread_count_is_rejected() {
    let o = Command::new(env!("CARGO_BIN_EXE_ocrf"))
        .arg("gradcheck")
        .env("OCRF_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(code(&o), 1);
}

#[test]
fn synth_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = ocrf(&["synth", "--config", &cfg, "--seed", "7", "--out", out.to_str().unwrap()]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    let (ta, tb) = (tree(&a), tree(&b));
    assert_eq!(ta, tb);
    let names: Vec<&str> = ta.iter().map(|(n, _)| n.as_str()).collect();
    assert!(names.contains(&"scene_7/manifest.txt"));
    assert!(names.contains(&"scene_1000007/rgb_2.ppm"));
    let ppm = &ta.iter().find(|(n, _)| n == "scene_7/rgb_0.ppm").unwrap().1;
    assert!(ppm.starts_with(b"P6\n24 24\n255\n"));
}

#[test]
fn train_resume_render_eval() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out = dir.path().join("run");
    let out_s = out.to_str().unwrap();
    let o = ocrf(&["train", "--config", &cfg, "--out", out_s, "--steps", "4"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let ck = out.join("checkpoint");
    let ck_s = ck.to_str().unwrap();
    let o = ocrf(&["train", "--config", &cfg, "--out", out_s, "--resume", ck_s]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let resumed = fs::read_to_string(out.join("metrics.csv")).unwrap();

    let whole = dir.path().join("whole");
    let o = ocrf(&["train", "--config", &cfg, "--out", whole.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    assert_eq!(resumed, fs::read_to_string(whole.join("metrics.csv")).unwrap());
    assert!(resumed.starts_with("step,L_render,L_mse,L_ssim,L_l1,L_mask,alpha,fg_ssim,full_ssim,bev_iou\n"));
    assert_eq!(
        fs::read(ck.join("tensors.bin")).unwrap(),
        fs::read(whole.join("checkpoint/tensors.bin")).unwrap()
    );

    let r = dir.path().join("render");
    let o = ocrf(&["render", "--checkpoint", ck_s, "--view", "1", "--out", r.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(fs::read(r.join("render.ppm")).unwrap().starts_with(b"P6\n24 24\n255\n"));
    let depth = fs::read(r.join("gt_depth.pgm")).unwrap();
    let header = b"P5\n24 24\n65535\n";
    assert!(depth.starts_with(header));
    assert_eq!(depth.len(), header.len() + 2 * 24 * 24);

    let e = dir.path().join("eval");
    let o = ocrf(&["eval", "--checkpoint", ck_s, "--out", e.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let csv = fs::read_to_string(e.join("eval.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);
    assert!(e.join("bev_1000001.pgm").exists());
    assert!(e.join("attention_1000001_1.pgm").exists());

    // A checkpoint from a different architecture is refused.
    let o = ocrf(&["train", "--config", &cfg, "--out", out_s, "--resume", ck_s, "--k", "4"]);
    assert_eq!(code(&o), 1);
}
