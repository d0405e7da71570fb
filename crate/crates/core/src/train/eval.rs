//! Scores of a trained scene against a dataset's (ground-truth) frames.

use serde::{Deserialize, Serialize};

use super::{psnr_from_mse, ssim, PixelRays};
use crate::dataset::FrameDataset;
use crate::error::{Error, Result};
use crate::par::Exec;
use crate::render::{render_image, RenderedImage, SampleOptions};
use crate::scene::DynamicScene;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameScore {
    pub frame: usize,
    pub time: f64,
    pub psnr: f64,
    pub ssim: f64,
    /// Median |rendered - reference| z-depth over tissue pixels.
    pub depth_median_abs: f64,
    pub mean_opacity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub frames: Vec<FrameScore>,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
    /// Median over the tissue pixels of all scored frames.
    pub depth_median_abs: f64,
    /// Mean distance between ray samples.
    pub mean_step: f64,
    /// Pixels hidden by the tool in at least `occlusion_fraction` of all frames.
    pub occluded_pixels: usize,
    /// PSNR over those pixels in the frames where they are hidden.
    pub occluded_psnr: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOptions {
    pub sampling: SampleOptions,
    pub exec: Exec,
    /// Frames to score; empty scores all.
    pub frames: Vec<usize>,
    pub occlusion_fraction: f64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            sampling: SampleOptions::default(),
            exec: Exec::default(),
            frames: Vec::new(),
            occlusion_fraction: 0.3,
        }
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Renders frames and compares them with `gt_rgb`/`gt_depth` where present and the
/// observed color and depth otherwise.
pub fn evaluate(scene: &DynamicScene, ds: &FrameDataset, opts: &EvalOptions) -> Result<EvalReport> {
    ds.validate()?;
    let scored: Vec<usize> = if opts.frames.is_empty() {
        (0..ds.len()).collect()
    } else {
        opts.frames.clone()
    };
    if let Some(&bad) = scored.iter().find(|&&f| f >= ds.len()) {
        return Err(Error::InvalidConfig(format!("frame {bad} out of range ({} frames)", ds.len())));
    }
    let (w, h) = (ds.width(), ds.height());
    let npx = w * h;
    let hidden: Vec<usize> = (0..npx)
        .map(|p| ds.frames.iter().filter(|f| f.mask[p] != 0).count())
        .collect();
    let occluded: Vec<bool> = hidden
        .iter()
        .map(|&c| c > 0 && c as f64 >= opts.occlusion_fraction * ds.len() as f64)
        .collect();
    let occluded_pixels = occluded.iter().filter(|&&o| o).count();
    let needed: Vec<usize> = (0..ds.len())
        .filter(|f| scored.contains(f) || (occluded_pixels > 0 && ds.frames[*f].mask.iter().any(|&m| m != 0)))
        .collect();
    let mut images: Vec<Option<RenderedImage>> = vec![None; ds.len()];
    for &f in &needed {
        images[f] = Some(render_image(scene, &ds.camera, ds.times[f], &opts.sampling, opts.exec, 4)?);
    }

    let mut frames = Vec::new();
    let mut all_dz = Vec::new();
    for &f in &scored {
        let img = images[f].as_ref().unwrap();
        let fr = &ds.frames[f];
        let reference = fr.gt_rgb.as_ref().unwrap_or(&fr.rgb);
        let se: f64 = img
            .rgb
            .iter()
            .zip(reference)
            .map(|(a, b)| (0..3).map(|c| (a[c] - b[c]).powi(2)).sum::<f64>())
            .sum();
        let mut dz = Vec::new();
        for p in 0..npx {
            let d = match &fr.gt_depth {
                Some(g) => g[p],
                None if fr.mask[p] == 0 => fr.depth[p],
                None => 0.0,
            };
            if d > 0.0 && d.is_finite() {
                dz.push((img.depth[p] - d).abs());
            }
        }
        all_dz.extend_from_slice(&dz);
        frames.push(FrameScore {
            frame: f,
            time: ds.times[f],
            psnr: psnr_from_mse(se / (3 * npx) as f64),
            ssim: ssim(&img.rgb, reference, w, h)?,
            depth_median_abs: median(dz),
            mean_opacity: img.opacity.iter().sum::<f64>() / npx as f64,
        });
    }

    let occluded_psnr = if occluded_pixels > 0 {
        let (mut se, mut n) = (0.0, 0usize);
        for (f, fr) in ds.frames.iter().enumerate() {
            let Some(img) = images[f].as_ref() else { continue };
            let reference = fr.gt_rgb.as_ref().unwrap_or(&fr.rgb);
            for p in (0..npx).filter(|&p| occluded[p] && fr.mask[p] != 0) {
                se += (0..3).map(|c| (img.rgb[p][c] - reference[p][c]).powi(2)).sum::<f64>();
                n += 1;
            }
        }
        (n > 0).then(|| psnr_from_mse(se / (3 * n) as f64))
    } else {
        None
    };

    let k = frames.len().max(1) as f64;
    Ok(EvalReport {
        mean_psnr: frames.iter().map(|s| s.psnr).sum::<f64>() / k,
        mean_ssim: frames.iter().map(|s| s.ssim).sum::<f64>() / k,
        frames,
        depth_median_abs: median(all_dz),
        mean_step: PixelRays::new(&ds.camera, &scene.field.bounds())?.mean_step(opts.sampling.samples),
        occluded_pixels,
        occluded_psnr,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_of_even_and_odd() {
        assert_eq!(median(vec![3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(vec![4.0, 1.0, 2.0, 3.0]), 2.5);
        assert!(median(Vec::new()).is_nan());
    }
}
