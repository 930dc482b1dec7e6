//! Datasets on disk: a `transforms.json` with per-frame camera-to-world matrices, PNG images,
//! optional `<stem>.mask.png` transient masks and an optional SfM point file.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Aabb, Camera, Intrinsics, Vec3};
use crate::imaging::{read_gray_png, read_png, write_gray_png, write_png, GrayImage, RgbImage};
use crate::train::TrainingView;

use super::synthetic::{depth_targets, SfmPoint, SyntheticScene, SyntheticSpec};

pub const METADATA_FILE: &str = "transforms.json";

/// Camera entry shared by dataset frames and camera paths. Intrinsics come from the frame,
/// falling back to the file-level values; `camera_angle_x` gives a horizontal field of view.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CameraRecord {
    pub transform_matrix: [[f64; 4]; 4],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub camera_angle_x: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fl_x: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fl_y: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cx: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cy: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub w: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h: Option<u32>,
}

impl CameraRecord {
    pub fn from_camera(camera: &Camera) -> Self {
        let i = &camera.intrinsics;
        Self {
            transform_matrix: camera.to_matrix(),
            fl_x: Some(i.fx),
            fl_y: Some(i.fy),
            cx: Some(i.cx),
            cy: Some(i.cy),
            w: Some(i.width),
            h: Some(i.height),
            ..Default::default()
        }
    }

    fn merged(&self, base: &CameraRecord) -> CameraRecord {
        CameraRecord {
            transform_matrix: self.transform_matrix,
            camera_angle_x: self.camera_angle_x.or(base.camera_angle_x),
            fl_x: self.fl_x.or(base.fl_x),
            fl_y: self.fl_y.or(base.fl_y),
            cx: self.cx.or(base.cx),
            cy: self.cy.or(base.cy),
            w: self.w.or(base.w),
            h: self.h.or(base.h),
        }
    }

    /// Builds the camera. `size` supplies the resolution when the record has none.
    pub fn camera(&self, size: Option<(u32, u32)>) -> Result<Camera> {
        let (w, h) = match (self.w, self.h, size) {
            (Some(w), Some(h), _) => (w, h),
            (_, _, Some(s)) => s,
            _ => return Err(Error::Validation("camera has no resolution".into())),
        };
        let fx = match (self.fl_x, self.camera_angle_x) {
            (Some(f), _) => f,
            (None, Some(a)) => 0.5 * w as f64 / (0.5 * a).tan(),
            (None, None) => {
                return Err(Error::Validation(
                    "camera needs fl_x or camera_angle_x".into(),
                ))
            }
        };
        let intrinsics = Intrinsics {
            fx,
            fy: self.fl_y.unwrap_or(fx),
            cx: self.cx.unwrap_or(w as f64 * 0.5),
            cy: self.cy.unwrap_or(h as f64 * 0.5),
            width: w,
            height: h,
        };
        Camera::from_matrix(intrinsics, &self.transform_matrix)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub file_path: String,
    #[serde(flatten)]
    pub camera: CameraRecord,
    /// Held-out frames are used for evaluation only.
    #[serde(default)]
    pub holdout: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMetadata {
    #[serde(flatten)]
    pub camera: CameraRecord,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bounds: Option<Aabb>,
    /// Path of the SfM point file, relative to the metadata file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sfm_points: Option<String>,
    pub frames: Vec<FrameRecord>,
}

#[derive(Debug, Clone)]
pub struct Frame {
    pub name: String,
    pub path: PathBuf,
    pub camera: Camera,
    pub image: RgbImage,
    /// `true` marks a transient pixel that must not be trained on.
    pub transient: Option<Vec<bool>>,
    pub holdout: bool,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub root: PathBuf,
    pub frames: Vec<Frame>,
    /// Sparse points; `views` index into `frames`.
    pub points: Option<Vec<SfmPoint>>,
    pub bounds: Aabb,
}

impl Dataset {
    pub fn has_masks(&self) -> bool {
        self.frames.iter().any(|f| f.transient.is_some())
    }

    pub fn train_indices(&self) -> Vec<usize> {
        (0..self.frames.len())
            .filter(|&i| !self.frames[i].holdout)
            .collect()
    }

    pub fn holdout_indices(&self) -> Vec<usize> {
        (0..self.frames.len())
            .filter(|&i| self.frames[i].holdout)
            .collect()
    }

    pub fn cameras(&self) -> Vec<Camera> {
        self.frames.iter().map(|f| f.camera).collect()
    }

    /// Training view for frame `index` with an optional pixel mask and the frame's SfM depth
    /// targets restricted to masked-in pixels.
    pub fn training_view(&self, index: usize, mask: Option<Vec<bool>>) -> TrainingView {
        let f = &self.frames[index];
        let mask = match (mask, &f.transient) {
            (Some(m), _) => Some(m),
            (None, Some(t)) => Some(t.iter().map(|&x| !x).collect()),
            (None, None) => None,
        };
        let mut depth = self
            .points
            .as_deref()
            .map(|p| depth_targets(p, index as u32, &f.camera))
            .unwrap_or_default();
        if let Some(m) = &mask {
            depth.retain(|&(p, _)| m[p as usize]);
        }
        TrainingView {
            camera: f.camera,
            image: f.image.clone(),
            mask,
            depth_targets: depth,
        }
    }
}

/// Parses JSON, reporting failures with the file's line and column.
pub fn parse_json<T: serde::de::DeserializeOwned>(path: &Path, text: &str) -> Result<T> {
    serde_json::from_str(text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn resolve_image(dir: &Path, file_path: &str) -> PathBuf {
    let p = dir.join(file_path);
    if p.extension().is_none() && !p.exists() {
        return p.with_extension("png");
    }
    p
}

/// `images/a.png` → `images/a.mask.png`.
pub fn mask_path(image: &Path) -> PathBuf {
    let stem = image
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    image.with_file_name(format!("{stem}.mask.png"))
}

/// Loads a dataset from a directory holding `transforms.json`, or from the metadata file itself.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::Validation(format!(
            "dataset {} does not exist",
            path.display()
        )));
    }
    let meta_path = if path.is_dir() {
        path.join(METADATA_FILE)
    } else {
        path.to_path_buf()
    };
    let dir = meta_path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_default();
    if !meta_path.is_file() {
        return Err(Error::Validation(format!(
            "{} not found",
            meta_path.display()
        )));
    }
    let meta: DatasetMetadata = parse_json(&meta_path, &read_text(&meta_path)?)?;
    if meta.frames.is_empty() {
        return Err(Error::Validation(format!(
            "{} lists no frames",
            meta_path.display()
        )));
    }
    let mut frames = Vec::with_capacity(meta.frames.len());
    for (i, fr) in meta.frames.iter().enumerate() {
        let image_path = resolve_image(&dir, &fr.file_path);
        if !image_path.is_file() {
            return Err(Error::Validation(format!(
                "frame {i}: image {} not found",
                image_path.display()
            )));
        }
        let image = read_png(&image_path)?;
        let rec = fr.camera.merged(&meta.camera);
        let camera = rec
            .camera(Some((image.width, image.height)))
            .map_err(|e| Error::Validation(format!("frame {i} ({}): {e}", fr.file_path)))?;
        if camera.width() != image.width || camera.height() != image.height {
            return Err(Error::Validation(format!(
                "frame {i}: camera is {}x{} but {} is {}x{}",
                camera.width(),
                camera.height(),
                image_path.display(),
                image.width,
                image.height
            )));
        }
        let mp = mask_path(&image_path);
        let transient = if mp.is_file() {
            let m = read_gray_png(&mp)?;
            if m.width != image.width || m.height != image.height {
                return Err(Error::Validation(format!(
                    "mask {} does not match its image size",
                    mp.display()
                )));
            }
            Some(m.data.iter().map(|&v| v != 0).collect())
        } else {
            None
        };
        frames.push(Frame {
            name: fr.file_path.clone(),
            path: image_path,
            camera,
            image,
            transient,
            holdout: fr.holdout,
        });
    }
    let points = match &meta.sfm_points {
        Some(rel) => {
            let p = dir.join(rel);
            let pts: Vec<SfmPoint> = parse_json(&p, &read_text(&p)?)?;
            if let Some(bad) = pts
                .iter()
                .flat_map(|p| &p.views)
                .find(|&&v| v as usize >= frames.len())
            {
                return Err(Error::Validation(format!(
                    "SfM point references frame {bad}, but only {} exist",
                    frames.len()
                )));
            }
            Some(pts)
        }
        None => None,
    };
    let bounds = match (meta.bounds, &points) {
        (Some(b), _) => b,
        (None, Some(pts)) if !pts.is_empty() => {
            let v: Vec<Vec3> = pts.iter().map(|p| Vec3::from(p.position)).collect();
            let b = Aabb::from_points(&v).expect("non-empty");
            b.dilate(0.05 * b.diagonal().max(1e-6))
        }
        _ => {
            return Err(Error::Validation(
                "dataset has neither scene bounds nor SfM points".into(),
            ))
        }
    };
    if !bounds.is_valid() {
        return Err(Error::Validation(format!(
            "scene bounds {bounds:?} are empty"
        )));
    }
    Ok(Dataset {
        root: dir,
        frames,
        points,
        bounds,
    })
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes the synthetic scene as a dataset: training frames first, then held-out frames, all-clear
/// transient masks, SfM points and the exact per-pixel depth as little-endian f32 (`<stem>.depth`).
pub fn generate_synthetic(spec: &SyntheticSpec, out: impl AsRef<Path>) -> Result<Dataset> {
    let out = out.as_ref();
    let scene = SyntheticScene::new(spec.clone())?;
    let images = out.join("images");
    fs::create_dir_all(&images).map_err(|e| Error::io(&images, e))?;
    let train = scene.train_cameras();
    let holdout = scene.holdout_cameras();
    let mut frames = Vec::new();
    let all = train
        .iter()
        .map(|c| (c, false))
        .chain(holdout.iter().map(|c| (c, true)));
    for (i, (cam, is_holdout)) in all.enumerate() {
        let stem = if is_holdout {
            format!("holdout_{:03}", i - train.len())
        } else {
            format!("train_{i:03}")
        };
        let (image, depth) = scene.render(cam);
        write_png(images.join(format!("{stem}.png")), &image)?;
        let clear = GrayImage {
            width: image.width,
            height: image.height,
            data: vec![0; image.pixel_count()],
        };
        write_gray_png(images.join(format!("{stem}.mask.png")), &clear)?;
        let bytes: Vec<u8> = depth
            .iter()
            .flat_map(|&d| (d as f32).to_le_bytes())
            .collect();
        let dp = images.join(format!("{stem}.depth"));
        fs::write(&dp, bytes).map_err(|e| Error::io(&dp, e))?;
        frames.push(FrameRecord {
            file_path: format!("images/{stem}.png"),
            camera: CameraRecord {
                transform_matrix: cam.to_matrix(),
                ..Default::default()
            },
            holdout: is_holdout,
        });
    }
    write_json(&out.join("points.json"), &scene.sfm_points(&train))?;
    let meta = DatasetMetadata {
        camera: CameraRecord {
            camera_angle_x: Some(spec.fov_deg.to_radians()),
            w: Some(spec.width),
            h: Some(spec.height),
            ..Default::default()
        },
        bounds: Some(scene.bounds()),
        sfm_points: Some("points.json".into()),
        frames,
    };
    write_json(&out.join(METADATA_FILE), &meta)?;
    load_dataset(out)
}

/// Reads a `<stem>.depth` file written next to a synthetic image.
pub fn read_depth(image: &Path) -> Result<Vec<f64>> {
    let p = image.with_extension("depth");
    let bytes = fs::read(&p).map_err(|e| Error::io(&p, e))?;
    if bytes.len() % 4 != 0 {
        return Err(Error::Validation(format!(
            "{} is not a whole number of f32 values",
            p.display()
        )));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect())
}

/// Reads a camera path: a JSON list of camera records.
pub fn load_camera_path(path: impl AsRef<Path>) -> Result<Vec<Camera>> {
    let path = path.as_ref();
    let records: Vec<CameraRecord> = parse_json(path, &read_text(path)?)?;
    records
        .iter()
        .enumerate()
        .map(|(i, r)| {
            r.camera(None)
                .map_err(|e| Error::Validation(format!("camera {i}: {e}")))
        })
        .collect()
}

pub fn save_camera_path(path: impl AsRef<Path>, cameras: &[Camera]) -> Result<()> {
    let records: Vec<CameraRecord> = cameras.iter().map(CameraRecord::from_camera).collect();
    write_json(path.as_ref(), &records)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SyntheticSpec {
        SyntheticSpec {
            train_views: 3,
            holdout_views: 1,
            width: 16,
            height: 12,
            sfm_points: 50,
            ..Default::default()
        }
    }

    #[test]
    fn synthetic_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let ds = generate_synthetic(&small(), dir.path()).unwrap();
        assert_eq!(ds.frames.len(), 4);
        assert!(ds.has_masks());
        assert_eq!(ds.points.as_ref().unwrap().len(), 50);
        assert_eq!(ds.holdout_indices(), vec![3]);
        let scene = SyntheticScene::new(small()).unwrap();
        let cams = scene.train_cameras();
        let again = load_dataset(dir.path().join(METADATA_FILE)).unwrap();
        for (f, c) in again.frames.iter().zip(&cams) {
            assert!((f.camera.position - c.position).norm() < 1e-12);
            assert_eq!(f.image, scene.render(c).0);
        }
        let depth = read_depth(&again.frames[0].path).unwrap();
        assert_eq!(depth.len(), 16 * 12);
    }

    #[test]
    fn missing_image_named() {
        let dir = tempfile::tempdir().unwrap();
        generate_synthetic(&small(), dir.path()).unwrap();
        fs::remove_file(dir.path().join("images/train_001.png")).unwrap();
        let err = load_dataset(dir.path()).unwrap_err();
        assert!(err.is_validation());
        assert!(err.to_string().contains("train_001.png"), "{err}");
    }

    #[test]
    fn masks_optional() {
        let dir = tempfile::tempdir().unwrap();
        generate_synthetic(&small(), dir.path()).unwrap();
        for e in fs::read_dir(dir.path().join("images")).unwrap() {
            let p = e.unwrap().path();
            if p.to_string_lossy().ends_with(".mask.png") {
                fs::remove_file(p).unwrap();
            }
        }
        let ds = load_dataset(dir.path()).unwrap();
        assert!(!ds.has_masks());
        assert!(ds.training_view(0, None).mask.is_none());
    }

    #[test]
    fn malformed_metadata_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join(METADATA_FILE);
        fs::write(&p, "{\n  \"frames\": [\n    {\"file_path\": 3,}\n  ]\n}").unwrap();
        match load_dataset(&p).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn camera_path_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let scene = SyntheticScene::new(small()).unwrap();
        let cams = scene.holdout_cameras();
        let p = dir.path().join("path.json");
        save_camera_path(&p, &cams).unwrap();
        assert_eq!(load_camera_path(&p).unwrap(), cams);
    }
}
