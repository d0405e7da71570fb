//! On-disk formats: dataset directories, PLY meshes and the synthetic scene writer.
//!
//! Dataset layout:
//!
//! ```text
//! meta.json            intrinsics, depth_scale, frame_times
//! rgb/000000.png       8-bit color
//! depth/000000.png     16-bit gray, depth = value * depth_scale, 0 = invalid
//! mask/000000.png      8-bit gray, 0 = tissue, 255 = tool
//! gt/rgb/000000.png    optional unoccluded color
//! gt/depth/000000.png  optional unoccluded depth
//! ```

mod ply;
mod synth;

pub use ply::{load_mesh, mesh_from_bytes, mesh_to_bytes, save_mesh, save_points};
pub use synth::{generate_synthetic, render_synthetic, Occluder, SynthConfig, Surface};

use std::path::{Path, PathBuf};

use image::{GrayImage, ImageBuffer, Luma, RgbImage};

use crate::camera::Camera;
use crate::dataset::{DatasetMeta, Frame, FrameDataset};
use crate::error::{Error, Result};
use crate::par::Exec;

pub const META_FILE: &str = "meta.json";

fn frame_file(dir: &Path, kind: &str, i: usize) -> PathBuf {
    dir.join(kind).join(format!("{i:06}.png"))
}

fn image_err(path: &Path, source: image::ImageError) -> Error {
    Error::Image {
        path: path.to_path_buf(),
        source,
    }
}

/// Parses a TOML file into any config type.
pub fn read_toml<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(toml::from_str(&text)?)
}

pub fn read_meta(dir: &Path) -> Result<DatasetMeta> {
    let path = dir.join(META_FILE);
    let text = std::fs::read_to_string(&path).map_err(|_| Error::MissingMeta(path.clone()))?;
    Ok(serde_json::from_str(&text)?)
}

fn open_dynamic(path: &Path) -> Result<image::DynamicImage> {
    image::open(path).map_err(|e| image_err(path, e))
}

pub fn read_rgb(path: &Path) -> Result<(usize, usize, Vec<[f64; 3]>)> {
    let img = open_dynamic(path)?.to_rgb8();
    let (w, h) = img.dimensions();
    let px = img.pixels().map(|p| p.0.map(|c| c as f64 / 255.0)).collect();
    Ok((w as usize, h as usize, px))
}

/// Depth PNG decoded as `value * scale`.
pub fn read_depth(path: &Path, scale: f64) -> Result<(usize, usize, Vec<f64>)> {
    let img = open_dynamic(path)?.to_luma16();
    let (w, h) = img.dimensions();
    let d = img.pixels().map(|p| p.0[0] as f64 * scale).collect();
    Ok((w as usize, h as usize, d))
}

pub fn write_rgb(path: &Path, width: usize, height: usize, rgb: &[[f64; 3]]) -> Result<()> {
    let buf: Vec<u8> = rgb
        .iter()
        .flat_map(|c| c.map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8))
        .collect();
    let img = RgbImage::from_raw(width as u32, height as u32, buf).ok_or_else(|| Error::DimensionMismatch {
        expected: format!("{width}x{height} pixels"),
        got: format!("{}", rgb.len()),
    })?;
    img.save(path).map_err(|e| image_err(path, e))
}

/// Quantizes `depth / scale` to 16 bits; fails if any depth is out of range.
pub fn write_depth(path: &Path, width: usize, height: usize, depth: &[f64], scale: f64) -> Result<()> {
    let mut buf = Vec::with_capacity(depth.len());
    for &d in depth {
        let q = if d > 0.0 && d.is_finite() { (d / scale).round() } else { 0.0 };
        if q > u16::MAX as f64 {
            return Err(Error::InvalidConfig(format!(
                "depth {d} exceeds the 16-bit range at scale {scale}"
            )));
        }
        buf.push(q as u16);
    }
    let img: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_raw(width as u32, height as u32, buf).ok_or_else(|| Error::DimensionMismatch {
            expected: format!("{width}x{height} pixels"),
            got: format!("{}", depth.len()),
        })?;
    img.save(path).map_err(|e| image_err(path, e))
}

fn write_mask(path: &Path, width: usize, height: usize, mask: &[u8]) -> Result<()> {
    let buf = mask.iter().map(|&m| if m > 0 { 255 } else { 0 }).collect();
    let img = GrayImage::from_raw(width as u32, height as u32, buf).ok_or_else(|| Error::DimensionMismatch {
        expected: format!("{width}x{height} pixels"),
        got: format!("{}", mask.len()),
    })?;
    img.save(path).map_err(|e| image_err(path, e))
}

fn load_frame(dir: &Path, meta: &DatasetMeta, i: usize) -> Result<Frame> {
    let (rp, dp, mp) = (frame_file(dir, "rgb", i), frame_file(dir, "depth", i), frame_file(dir, "mask", i));
    if !rp.is_file() {
        return Err(Error::MissingRgb(i));
    }
    if !dp.is_file() {
        return Err(Error::MissingDepth(i));
    }
    if !mp.is_file() {
        return Err(Error::MissingMask(i));
    }
    let want = (meta.width, meta.height);
    let shape = |w: usize, h: usize| {
        if (w, h) != want {
            Err(Error::InconsistentShape {
                frame: i,
                expected: want,
                got: (w, h),
            })
        } else {
            Ok(())
        }
    };
    let (w, h, rgb) = read_rgb(&rp)?;
    shape(w, h)?;
    let (w, h, depth) = read_depth(&dp, meta.depth_scale)?;
    shape(w, h)?;
    let m = open_dynamic(&mp)?.to_luma8();
    shape(m.width() as usize, m.height() as usize)?;
    let mut mask = Vec::with_capacity(m.len());
    for p in m.pixels() {
        mask.push(match p.0[0] {
            0 => 0,
            255 => 1,
            _ => return Err(Error::NonBinaryMask(i)),
        });
    }
    let gr = frame_file(&dir.join("gt"), "rgb", i);
    let gt_rgb = if gr.is_file() {
        let (w, h, c) = read_rgb(&gr)?;
        shape(w, h)?;
        Some(c)
    } else {
        None
    };
    let gd = frame_file(&dir.join("gt"), "depth", i);
    let gt_depth = if gd.is_file() {
        let (w, h, d) = read_depth(&gd, meta.depth_scale)?;
        shape(w, h)?;
        Some(d)
    } else {
        None
    };
    Ok(Frame {
        rgb,
        depth,
        mask,
        gt_rgb,
        gt_depth,
    })
}

/// Reads and validates a dataset directory. Frames are decoded in parallel; the
/// error reported is that of the lowest failing frame.
pub fn load_dataset(dir: &Path) -> Result<FrameDataset> {
    let meta = read_meta(dir)?;
    if !(meta.depth_scale > 0.0) {
        return Err(Error::InvalidConfig("depth scale must be positive".into()));
    }
    let camera = Camera::new(meta.fx, meta.fy, meta.cx, meta.cy, meta.width, meta.height)?;
    let frames = Exec::default()
        .map_range(meta.frame_times.len(), |i| load_frame(dir, &meta, i))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let ds = FrameDataset {
        camera,
        depth_scale: meta.depth_scale,
        times: meta.frame_times,
        frames,
    };
    ds.validate()?;
    Ok(ds)
}

/// Writes `ds` in the layout above. The dataset is validated and every depth checked
/// against the 16-bit range before anything is written.
pub fn save_dataset(ds: &FrameDataset, dir: &Path) -> Result<()> {
    ds.validate()?;
    let limit = u16::MAX as f64 * ds.depth_scale;
    for f in &ds.frames {
        for d in f.depth.iter().chain(f.gt_depth.iter().flatten()) {
            if *d > limit + 0.5 * ds.depth_scale {
                return Err(Error::InvalidConfig(format!(
                    "depth {d} exceeds the 16-bit range at scale {}",
                    ds.depth_scale
                )));
            }
        }
    }
    let mut kinds = vec!["rgb", "depth", "mask"];
    if ds.frames.iter().any(|f| f.gt_rgb.is_some()) {
        kinds.push("gt/rgb");
    }
    if ds.frames.iter().any(|f| f.gt_depth.is_some()) {
        kinds.push("gt/depth");
    }
    for k in &kinds {
        let d = dir.join(k);
        std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    let (w, h) = (ds.width(), ds.height());
    let s = ds.depth_scale;
    let written = Exec::default().map_range(ds.len(), |i| -> Result<()> {
        let f = &ds.frames[i];
        write_rgb(&frame_file(dir, "rgb", i), w, h, &f.rgb)?;
        write_depth(&frame_file(dir, "depth", i), w, h, &f.depth, s)?;
        write_mask(&frame_file(dir, "mask", i), w, h, &f.mask)?;
        if let Some(c) = &f.gt_rgb {
            write_rgb(&frame_file(&dir.join("gt"), "rgb", i), w, h, c)?;
        }
        if let Some(d) = &f.gt_depth {
            write_depth(&frame_file(&dir.join("gt"), "depth", i), w, h, d, s)?;
        }
        Ok(())
    });
    written.into_iter().collect::<Result<Vec<()>>>()?;
    let path = dir.join(META_FILE);
    let text = serde_json::to_string_pretty(&ds.meta())?;
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
}
