//! Adapter that runs an external stereo odometry binary on a sequence
//! rectified with a candidate calibration.

use std::path::{Path, PathBuf};
use std::process::Command;

use stereocal_core::calibrate::CalibrationSolution;
use stereocal_core::cameramodel::{rectification_map, remap, stereo_rectify};
use stereocal_core::refine::{OdometryRunner, Sequence, Trajectory};

use crate::error::{Error, Result};
use crate::kittiio::{load_image, read_poses, read_text, save_png, write_text, KittiCalibFile};

pub const IMAGES_PLACEHOLDER: &str = "{images}";
pub const CALIB_PLACEHOLDER: &str = "{calib}";
pub const OUTPUT_PLACEHOLDER: &str = "{output}";

const STDERR_TAIL_LINES: usize = 20;

/// Rectified inputs prepared for one run.
#[derive(Clone, Debug, PartialEq)]
pub struct RunFiles {
    pub dir: PathBuf,
    /// Holds `image_0/` and `image_1/`.
    pub images: PathBuf,
    /// Odometry `calib.txt` with `P0` and `P1`.
    pub calib: PathBuf,
    pub output: PathBuf,
}

/// Shell command template with `{images}`, `{calib}` and `{output}`
/// placeholders, run through `sh -c` in a workspace directory of its own for
/// every (candidate, sequence) pair.
#[derive(Clone, Debug)]
pub struct ExternalRunner {
    pub template: String,
    pub workspace: PathBuf,
    /// Keep the rectified images after the run.
    pub keep_images: bool,
}

fn shell_quote(p: &Path) -> String {
    format!("'{}'", p.display().to_string().replace('\'', r"'\''"))
}

/// Left (`cam` 0) or right (`cam` 1) image directory of a raw sequence,
/// accepting the raw (`image_00/data`) and odometry (`image_0`) layouts.
pub fn camera_dir(source: &Path, cam: usize) -> Result<PathBuf> {
    let candidates = [
        source.join(format!("image_{cam:02}")).join("data"),
        source.join(format!("image_{cam:02}")),
        source.join(format!("image_{cam}")),
    ];
    candidates
        .into_iter()
        .find(|p| p.is_dir())
        .ok_or_else(|| Error::Data(format!("{}: no image directory for camera {cam}", source.display())))
}

/// PNG and PGM files of a directory, sorted by name.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let p = entry.map_err(|e| Error::io(dir, e))?.path();
        let ext = p.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
        if matches!(ext.as_deref(), Some("png" | "pgm")) {
            out.push(p);
        }
    }
    out.sort();
    Ok(out)
}

impl ExternalRunner {
    pub fn new(template: impl Into<String>, workspace: impl Into<PathBuf>) -> Result<Self> {
        let template = template.into();
        if !template.contains(OUTPUT_PLACEHOLDER) {
            return Err(Error::Usage(format!("runner command needs an {OUTPUT_PLACEHOLDER} placeholder")));
        }
        Ok(Self {
            template,
            workspace: workspace.into(),
            keep_images: false,
        })
    }

    fn run_dir(&self, sequence: &Sequence, candidate: &CalibrationSolution) -> PathBuf {
        let s = &candidate.state;
        let tag = format!("fx{:.3}_cu{:.3}_cv{:.3}_b{:.6}", s.left.fx, s.left.cu, s.left.cv, s.baseline);
        self.workspace.join(tag).join(&sequence.name)
    }

    /// Rectifies both cameras of the sequence with the candidate and writes
    /// its calibration.
    pub fn prepare(&self, sequence: &Sequence, candidate: &CalibrationSolution) -> Result<RunFiles> {
        let dir = self.run_dir(sequence, candidate);
        let files = RunFiles {
            images: dir.join("images"),
            calib: dir.join("calib.txt"),
            output: dir.join("trajectory.txt"),
            dir,
        };
        let source = Path::new(&sequence.source);
        let lists = [list_images(&camera_dir(source, 0)?)?, list_images(&camera_dir(source, 1)?)?];
        if lists[0].is_empty() || lists[0].len() != lists[1].len() {
            return Err(Error::Data(format!(
                "{}: {} left and {} right images",
                source.display(),
                lists[0].len(),
                lists[1].len()
            )));
        }
        let first = load_image(&lists[0][0])?;
        let (w, h) = (first.width(), first.height());
        let rect = stereo_rectify(&candidate.state.rig(), w, h)?;
        for (cam, (list, calib)) in lists.iter().zip([&rect.left, &rect.right]).enumerate() {
            let map = rectification_map(calib, w, h);
            let out_dir = files.images.join(format!("image_{cam}"));
            for p in list {
                let img = load_image(p)?;
                if (img.width(), img.height()) != (w, h) {
                    return Err(Error::Data(format!("{}: image size differs from the first image", p.display())));
                }
                let name = Path::new(p.file_stem().expect("listed files have names")).with_extension("png");
                save_png(&out_dir.join(name), &remap(&img, &map))?;
            }
        }
        write_text(&files.calib, &KittiCalibFile::odometry(&rect).write())?;
        write_text(&files.dir.join("calib_cam_to_cam.txt"), &KittiCalibFile::from_rig(&candidate.state.rig(), &rect, w, h).write())?;
        Ok(files)
    }

    pub fn command_line(&self, files: &RunFiles) -> String {
        self.template
            .replace(IMAGES_PLACEHOLDER, &shell_quote(&files.images))
            .replace(CALIB_PLACEHOLDER, &shell_quote(&files.calib))
            .replace(OUTPUT_PLACEHOLDER, &shell_quote(&files.output))
    }

    /// Runs the command on prepared files and parses its trajectory.
    pub fn execute(&self, files: &RunFiles) -> Result<Trajectory> {
        let cmd = self.command_line(files);
        let _ = std::fs::remove_file(&files.output);
        let out = Command::new("sh")
            .arg("-c")
            .arg(&cmd)
            .current_dir(&files.dir)
            .output()
            .map_err(|e| Error::io(&files.dir, e))?;
        if !out.status.success() {
            let stderr = String::from_utf8_lossy(&out.stderr);
            let lines: Vec<&str> = stderr.lines().collect();
            let tail = lines[lines.len().saturating_sub(STDERR_TAIL_LINES)..].join("\n");
            return Err(Error::Data(format!("`{cmd}` failed ({}): {tail}", out.status)));
        }
        let text = read_text(&files.output).map_err(|e| Error::Data(format!("`{cmd}` wrote no trajectory: {e}")))?;
        read_poses(&text).map_err(|e| Error::Data(format!("{}: {e}", files.output.display())))
    }

    pub fn run_sequence(&self, sequence: &Sequence, candidate: &CalibrationSolution) -> Result<Trajectory> {
        let files = self.prepare(sequence, candidate)?;
        let result = self.execute(&files);
        if !self.keep_images {
            let _ = std::fs::remove_dir_all(&files.images);
        }
        result
    }
}

impl OdometryRunner for ExternalRunner {
    fn run(&self, sequence: &Sequence, candidate: &CalibrationSolution) -> stereocal_core::Result<Trajectory> {
        self.run_sequence(sequence, candidate)
            .map_err(|e| stereocal_core::Error::Runner(e.to_string()))
    }
}

/// Sequence list: one `name source_dir ground_truth_poses` line per sequence,
/// relative paths resolved against `base`.
pub fn read_sequences(text: &str, base: &Path) -> Result<Vec<Sequence>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        let parts: Vec<&str> = t.split_whitespace().collect();
        let [name, source, gt] = parts.as_slice() else {
            return Err(Error::parse(i + 1, "expected `name source_dir ground_truth`"));
        };
        let gt_path = base.join(gt);
        let ground_truth = read_poses(&read_text(&gt_path)?).map_err(|e| e.in_file(&gt_path))?;
        out.push(Sequence {
            name: name.to_string(),
            source: base.join(source).display().to_string(),
            ground_truth,
        });
    }
    if out.is_empty() {
        return Err(Error::Data("sequence list is empty".into()));
    }
    Ok(out)
}
