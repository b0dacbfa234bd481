use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use stereocal::kittiio::{load_image, read_boards, read_solution, save_png, write_trajectory};
use stereocal_core::cameramodel::Pose;
use stereocal_core::imagegrad::FloatImage;
use stereocal_core::refine::Trajectory;

fn stereocal(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stereocal")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = stereocal(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Rendered KITTI-like scene shared by the tests.
fn scene() -> &'static Path {
    static DIR: OnceLock<PathBuf> = OnceLock::new();
    DIR.get_or_init(|| {
        let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join("cli-scene");
        ok(&["synth", "--layout", "kitti", "--out", s(&dir)]);
        dir
    })
}

#[test]
fn synth_detect_calibrate_round_trip() {
    let dir = scene();
    let work = tempfile::tempdir().unwrap();
    let (l, r) = (work.path().join("left.txt"), work.path().join("right.txt"));
    ok(&["detect", s(&dir.join("left.png")), "--out", s(&l), "--seed", "5"]);
    ok(&["detect", s(&dir.join("right.png")), "--out", s(&r), "--seed", "5"]);
    let dump = read_boards(&std::fs::read_to_string(&l).unwrap()).unwrap();
    assert_eq!(dump.boards.len(), 12);
    assert_eq!(dump.image_size, Some((1392, 512)));

    let again = work.path().join("again.txt");
    ok(&["detect", s(&dir.join("left.png")), "--out", s(&again), "--seed", "5"]);
    assert_eq!(std::fs::read(&l).unwrap(), std::fs::read(&again).unwrap());

    let sol = work.path().join("solution.txt");
    let report = work.path().join("report.txt");
    let kitti = work.path().join("calib.txt");
    ok(&[
        "calibrate", "--left", s(&l), "--right", s(&r), "--square-size", "0.1", "--seed-focal", "950", "--out", s(&sol),
        "--report", s(&report), "--kitti", s(&kitti),
    ]);
    let sol = read_solution(&std::fs::read_to_string(&sol).unwrap()).unwrap();
    assert!((sol.rig.left.fx / 975.0 - 1.0).abs() < 1e-3, "fx {}", sol.rig.left.fx);
    assert!((sol.baseline / 0.539 - 1.0).abs() < 1e-3, "baseline {}", sol.baseline);
    assert!(sol.rms < 0.01);
    assert_eq!(std::fs::read_to_string(&report).unwrap().lines().count(), 14);
    let k = stereocal::kittiio::KittiCalibFile::read(&std::fs::read_to_string(&kitti).unwrap()).unwrap();
    assert!((k.rectified_baseline(1).unwrap() - sol.baseline).abs() < 1e-9);
}

#[test]
fn detect_overlay_and_multi_image_output() {
    let dir = scene();
    let work = tempfile::tempdir().unwrap();
    let out = work.path().join("dumps");
    let overlay = work.path().join("overlay");
    ok(&[
        "detect", s(&dir.join("left.png")), s(&dir.join("right.png")), "--out", s(&out), "--overlay", s(&overlay),
    ]);
    assert!(out.join("left.txt").is_file() && out.join("right.txt").is_file());
    assert!(overlay.join("left_edges.png").is_file());
    let listing = std::fs::read_to_string(overlay.join("right_segments.txt")).unwrap();
    assert!(listing.lines().count() > 12 * 4 * 7);
}

#[test]
fn blank_image_fails_with_data_error() {
    let work = tempfile::tempdir().unwrap();
    let img = work.path().join("blank.png");
    save_png(&img, &FloatImage::filled(200, 100, 0.5)).unwrap();
    let out = stereocal(&["detect", s(&img), "--out", s(&work.path().join("b.txt"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!work.path().join("b.txt").exists());
    let missing = stereocal(&["detect", s(&work.path().join("none.png")), "--out", s(&work.path().join("b.txt"))]);
    assert_eq!(missing.status.code(), Some(2));
}

fn observed_dumps(work: &Path) -> (PathBuf, PathBuf) {
    let out = work.join("synth");
    ok(&["synth", "--out", s(&out), "--no-images", "--corner-noise", "0.03", "--seed", "2"]);
    (out.join("observed_left.txt"), out.join("observed_right.txt"))
}

#[test]
fn fixed_focal_is_exact_and_square_size_is_required() {
    let work = tempfile::tempdir().unwrap();
    let (l, r) = observed_dumps(work.path());
    let sol = work.path().join("fixed.txt");
    ok(&[
        "calibrate", "--left", s(&l), "--right", s(&r), "--square-size", "0.1", "--seed-focal", "950", "--fix", "fx=980",
        "--out", s(&sol),
    ]);
    let text = std::fs::read_to_string(&sol).unwrap();
    let parsed = read_solution(&text).unwrap();
    assert_eq!(parsed.rig.left.fx, 980.0);
    assert!(parsed.fixed.fx && !parsed.fixed.baseline);

    let missing = stereocal(&["calibrate", "--left", s(&l), "--right", s(&r), "--seed-focal", "950", "--out", s(&sol)]);
    assert_eq!(missing.status.code(), Some(1));
    let bad_flag = stereocal(&["calibrate", "--bogus"]);
    assert_eq!(bad_flag.status.code(), Some(1));

    let cfg = work.path().join("stereocal.conf");
    std::fs::write(&cfg, "square-size = 0.1\nseed-focal = 950\n").unwrap();
    let (via_config, via_flags) = (work.path().join("cfg.txt"), work.path().join("flags.txt"));
    ok(&["calibrate", "--config", s(&cfg), "--left", s(&l), "--right", s(&r), "--out", s(&via_config)]);
    ok(&[
        "calibrate", "--left", s(&l), "--right", s(&r), "--square-size", "0.1", "--seed-focal", "950", "--out", s(&via_flags),
    ]);
    assert_eq!(std::fs::read(&via_config).unwrap(), std::fs::read(&via_flags).unwrap());
    let overridden = work.path().join("override.txt");
    ok(&["calibrate", "--config", s(&cfg), "--seed-focal", "900", "--left", s(&l), "--right", s(&r), "--out", s(&overridden)]);
    let a = read_solution(&std::fs::read_to_string(&via_config).unwrap()).unwrap();
    let b = read_solution(&std::fs::read_to_string(&overridden).unwrap()).unwrap();
    assert!((a.rig.left.fx - b.rig.left.fx).abs() < 1e-3);
}

#[test]
fn sensitivity_csv_shapes() {
    let work = tempfile::tempdir().unwrap();
    let (l, r) = observed_dumps(work.path());
    let base = ["--left", s(&l), "--right", s(&r), "--square-size", "0.1", "--seed-focal", "950"];
    let single = work.path().join("single.csv");
    let mut args = vec!["sensitivity", "--param", "fx", "--range", "0.5", "--step", "1", "--out", s(&single)];
    args.extend(base);
    ok(&args);
    let text = std::fs::read_to_string(&single).unwrap();
    assert_eq!(text.lines().count(), 2, "{text}");
    assert!(text.starts_with("probe,rms\n"));

    let pitch = work.path().join("baseline.csv");
    let mut args = vec!["sensitivity", "--param", "baseline", "--range", "0.002", "--step", "0.001", "--out", s(&pitch)];
    args.extend(base);
    ok(&args);
    let text = std::fs::read_to_string(&pitch).unwrap();
    assert!(text.starts_with("probe,rms,pitch_deg\n"));
    assert_eq!(text.lines().count(), 6);
}

fn straight(n: usize, step: f64, scale: f64) -> Trajectory {
    Trajectory::new(
        (0..n)
            .map(|i| Pose::new(Default::default(), nalgebra::Vector3::new(0.0, 0.0, i as f64 * step * scale)))
            .collect(),
    )
}

#[test]
fn eval_reports_scale_error() {
    let work = tempfile::tempdir().unwrap();
    let (gt, est) = (work.path().join("gt.txt"), work.path().join("est.txt"));
    std::fs::write(&gt, write_trajectory(&straight(120, 2.0, 1.0))).unwrap();
    std::fs::write(&est, write_trajectory(&straight(120, 2.0, 1.02))).unwrap();
    let out = ok(&["eval", "--est", s(&est), "--gt", s(&gt)]);
    assert!(out.contains("t_rel 2.000000 %"), "{out}");
    assert!(out.contains("deg/100m"));
    let short = work.path().join("short.txt");
    std::fs::write(&short, write_trajectory(&straight(10, 2.0, 1.0))).unwrap();
    assert_ne!(stereocal(&["eval", "--est", s(&short), "--gt", s(&short)]).status.code(), Some(0));
}

fn refine_inputs(work: &Path) -> (Vec<String>, PathBuf) {
    let dir = scene();
    let seq = work.join("seq");
    for (cam, name) in [(0, "left.png"), (1, "right.png")] {
        let d = seq.join(format!("image_{cam:02}")).join("data");
        std::fs::create_dir_all(&d).unwrap();
        std::fs::copy(dir.join(name), d.join("0000000000.png")).unwrap();
    }
    let gt = work.join("gt.txt");
    std::fs::write(&gt, write_trajectory(&straight(80, 2.0, 1.0))).unwrap();
    let list = work.join("sequences.txt");
    std::fs::write(&list, "# name source ground_truth\nsynthetic seq gt.txt\n").unwrap();
    let (l, r) = observed_dumps(work);
    let args = ["--left", s(&l), "--right", s(&r), "--square-size", "0.1", "--seed-focal", "950", "--sequences", s(&list)]
        .map(String::from)
        .to_vec();
    (args, gt)
}

#[test]
fn refine_with_echo_runner_is_a_passthrough() {
    let work = tempfile::tempdir().unwrap();
    let (mut args, gt) = refine_inputs(work.path());
    let table = work.path().join("table.csv");
    let sol = work.path().join("best.txt");
    let runner = format!("test -f {{images}}/image_1/0000000000.png && test -s {{calib}} && cp '{}' {{output}}", gt.display());
    args.extend(
        [
            "--grid", "fx=975:0,cu=700:0,cv=247:0,baseline=0.539:0", "--runner", &runner, "--out", s(&table), "--solution",
            s(&sol), "--workspace", s(&work.path().join("ws")), "--jobs", "2",
        ]
        .map(String::from),
    );
    let mut full = vec!["refine".to_string()];
    full.extend(args);
    let refs: Vec<&str> = full.iter().map(String::as_str).collect();
    ok(&refs);
    let text = std::fs::read_to_string(&table).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "f_x,c_u,c_v,baseline,t_rel,r_rel,status");
    assert_eq!(lines.len(), 3, "{text}");
    assert!(lines[1].starts_with("975,700,247,") && lines[1].ends_with(",0,0,ok"), "{}", lines[1]);
    assert!(lines[2].starts_with("975,700,247,0.539,0,0,ok"), "{}", lines[2]);
    let best = read_solution(&std::fs::read_to_string(&sol).unwrap()).unwrap();
    assert_eq!((best.rig.left.fx, best.rig.left.cu, best.rig.left.cv, best.baseline), (975.0, 700.0, 247.0, 0.539));
    assert!(!work.path().join("ws").join("fx975.000_cu700.000_cv247.000_b0.539000/synthetic/images").exists());
}

#[test]
fn refine_fails_when_every_runner_fails() {
    let work = tempfile::tempdir().unwrap();
    let (mut args, _) = refine_inputs(work.path());
    let table = work.path().join("table.csv");
    args.extend(
        [
            "--grid", "fx=975:1,cu=700:0,cv=247:0", "--runner", "echo broken >&2; exit 4 # {output}", "--out", s(&table),
            "--workspace", s(&work.path().join("ws")),
        ]
        .map(String::from),
    );
    let mut full = vec!["refine".to_string()];
    full.extend(args);
    let refs: Vec<&str> = full.iter().map(String::as_str).collect();
    let out = stereocal(&refs);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(!table.exists());
}

fn identity_calib(w: usize, h: usize) -> String {
    let (f, cu, cv) = (300.0, (w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
    format!(
        "K_00: {f} 0 {cu} 0 {f} {cv} 0 0 1\nD_00: 0 0 0 0 0\nR_rect_00: 1 0 0 0 1 0 0 0 1\nP_rect_00: {f} 0 {cu} 0 0 {f} {cv} 0 0 0 1 0\n"
    )
}

#[test]
fn identity_rectification_keeps_images() {
    let work = tempfile::tempdir().unwrap();
    let input = work.path().join("in");
    let img = FloatImage::from_fn(64, 40, |x, y| ((x * 7 + y * 13) % 17) as f64 / 16.0);
    save_png(&input.join("a.png"), &img).unwrap();
    let calib = work.path().join("calib.txt");
    std::fs::write(&calib, identity_calib(64, 40)).unwrap();
    let out = work.path().join("out");
    ok(&["rectify", "--calib", s(&calib), "--in", s(&input), "--out", s(&out)]);
    let a = load_image(&input.join("a.png")).unwrap();
    let b = load_image(&out.join("a.png")).unwrap();
    let worst = a.data().iter().zip(b.data()).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
    assert!(worst <= 1.0 / 255.0 + 1e-12, "largest difference {worst}");
}

#[test]
fn feature_conversion_with_same_calibration_is_identity() {
    let work = tempfile::tempdir().unwrap();
    let dir = scene();
    let calib = dir.join("calib_cam_to_cam.txt");
    let feats = work.path().join("f.txt");
    std::fs::write(&feats, "100 50\n600.25 240.5\n1200 400\n").unwrap();
    let out = work.path().join("g.txt");
    for cam in ["0", "1"] {
        ok(&["convert-features", "--default", s(&calib), "--custom", s(&calib), "--in", s(&feats), "--out", s(&out), "--camera", cam]);
        assert_eq!(std::fs::read_to_string(&out).unwrap(), "100.000000 50.000000\n600.250000 240.500000\n1200.000000 400.000000\n");
    }
}

#[test]
fn synth_is_deterministic_per_seed() {
    let work = tempfile::tempdir().unwrap();
    let (a, b, c) = (work.path().join("a"), work.path().join("b"), work.path().join("c"));
    for (d, seed) in [(&a, "1"), (&b, "1"), (&c, "2")] {
        ok(&["synth", "--layout", "diverse", "--no-images", "--corner-noise", "0.03", "--seed", seed, "--out", s(d)]);
    }
    let read = |d: &Path| std::fs::read(d.join("observed_left.txt")).unwrap();
    assert_eq!(read(&a), read(&b));
    assert_ne!(read(&a), read(&c));
}
