//! Rule-based brain extraction: Otsu foreground, contrast normalization,
//! edge-preserving smoothing, Sobel gradients, graph-based segmentation,
//! morphology, and MRF regularization, applied to the ADC baseline contrast.

mod felz;
mod morph;
mod mrf;

pub use felz::{felzenszwalb_segment, SegmentLabels};
pub use morph::{dilate, erode, fill_holes, morphology, MorphOp};
pub use mrf::{mrf_regularize, mrf_regularize_traced};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prequal::{denoise_nlm_adaptive, estimate_noise_map, otsu_threshold};
use crate::volgrid::{connected_components, Connectivity, Mask, Volume};

/// How the gradient threshold in the segmentation step is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientThreshold {
    /// Otsu over the gradient magnitudes inside the foreground.
    Otsu,
    /// Fixed threshold on the (scaled) gradient magnitude.
    Fixed(f64),
}

/// Tunables for the seven pipeline steps.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RuleParams {
    /// Contrast normalization percentiles.
    pub percentile_lo: f64,
    pub percentile_hi: f64,
    /// Non-local means patch and search radii (step 3).
    pub patch_radius: usize,
    pub search_radius: usize,
    /// Multiplier on gradient magnitudes before thresholding.
    pub sobel_scale: f64,
    pub gradient_threshold: GradientThreshold,
    /// Graph merge constant as a fraction of the voxel count: k = scale * N.
    pub merge_k_scale: f64,
    /// Minimum segment size in voxels.
    pub min_segment_size: usize,
    /// Ball radius for opening/closing, in voxels.
    pub morphology_radius: usize,
    /// MRF pairwise weight.
    pub mrf_beta: f64,
    pub mrf_max_iters: usize,
    /// Acceptable brain volume range in mm^3.
    pub brain_volume_mm3: (f64, f64),
}

impl Default for RuleParams {
    fn default() -> Self {
        RuleParams {
            percentile_lo: 1.0,
            percentile_hi: 99.0,
            patch_radius: 1,
            search_radius: 2,
            sobel_scale: 1.0,
            gradient_threshold: GradientThreshold::Otsu,
            merge_k_scale: 0.02,
            min_segment_size: 100,
            morphology_radius: 2,
            mrf_beta: 1.0,
            mrf_max_iters: 100,
            brain_volume_mm3: (300.0, 700.0),
        }
    }
}

impl RuleParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.percentile_lo && self.percentile_lo < self.percentile_hi && self.percentile_hi < 100.0)
        {
            return Err(Error::Config(format!(
                "percentiles must satisfy 0 < lo < hi < 100, got ({}, {})",
                self.percentile_lo, self.percentile_hi
            )));
        }
        if self.merge_k_scale <= 0.0 {
            return Err(Error::Config("merge_k_scale must be > 0".into()));
        }
        if self.morphology_radius < 1 {
            return Err(Error::Config("morphology_radius must be >= 1".into()));
        }
        if self.mrf_beta < 0.0 {
            return Err(Error::Config("mrf_beta must be >= 0".into()));
        }
        if self.brain_volume_mm3.0 >= self.brain_volume_mm3.1 {
            return Err(Error::Config("brain volume range must be low < high".into()));
        }
        Ok(())
    }
}

/// Percentile by linear interpolation over sorted values (rank p/100*(n-1)).
pub fn percentile(sorted: &[f32], p: f64) -> f64 {
    assert!(!sorted.is_empty());
    let rank = p / 100.0 * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    let frac = rank - lo as f64;
    f64::from(sorted[lo]) * (1.0 - frac) + f64::from(sorted[hi]) * frac
}

/// Affine map sending percentile `lo` to 0 and `hi` to 1, clamped to [0, 1].
pub fn normalize_contrast(v: &Volume, lo: f64, hi: f64) -> Result<Volume> {
    if !(0.0..=100.0).contains(&lo) || !(0.0..=100.0).contains(&hi) || lo >= hi {
        return Err(Error::Config(format!(
            "percentiles must satisfy 0 <= lo < hi <= 100, got ({lo}, {hi})"
        )));
    }
    let mut sorted: Vec<f32> = v.data().to_vec();
    sorted.sort_unstable_by(f32::total_cmp);
    let p_lo = percentile(&sorted, lo);
    let p_hi = percentile(&sorted, hi);
    if !(p_hi > p_lo) {
        return Err(Error::DegenerateInput(format!(
            "percentile range is empty: p{lo} = p{hi} = {p_lo}"
        )));
    }
    let scale = 1.0 / (p_hi - p_lo);
    let data = v
        .data()
        .iter()
        .map(|&x| (((f64::from(x) - p_lo) * scale).clamp(0.0, 1.0)) as f32)
        .collect();
    v.with_data(data)
}

/// 3D Sobel gradient magnitude: per axis, the [1,2,1] x [1,2,1] smoothed
/// central difference scaled by the voxel spacing; boundary voxels clamp to
/// the edge. Output units are intensity per mm.
pub fn sobel_gradient_magnitude(v: &Volume) -> Result<Volume> {
    let dims = v.dims();
    if dims.iter().any(|&d| d < 3) {
        return Err(Error::Dimension(format!(
            "sobel needs dims >= 3 per axis, got {dims:?}"
        )));
    }
    let (nx, ny, nz) = (dims[0] as isize, dims[1] as isize, dims[2] as isize);
    let data = v.data();
    let spacing = v.spacing();
    let sample = |x: isize, y: isize, z: isize| -> f64 {
        let xc = x.clamp(0, nx - 1) as usize;
        let yc = y.clamp(0, ny - 1) as usize;
        let zc = z.clamp(0, nz - 1) as usize;
        f64::from(data[xc + (nx as usize) * (yc + (ny as usize) * zc)])
    };
    let smooth = |d: isize| -> f64 {
        match d {
            0 => 2.0,
            _ => 1.0,
        }
    };
    let mut out = vec![0f32; data.len()];
    let mut i = 0usize;
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let mut g = [0f64; 3];
                for db in -1isize..=1 {
                    for dc in -1isize..=1 {
                        let w = smooth(db) * smooth(dc);
                        g[0] += w * (sample(x + 1, y + db, z + dc) - sample(x - 1, y + db, z + dc));
                        g[1] += w * (sample(x + db, y + 1, z + dc) - sample(x + db, y - 1, z + dc));
                        g[2] += w * (sample(x + db, y + dc, z + 1) - sample(x + db, y + dc, z - 1));
                    }
                }
                for (a, ga) in g.iter_mut().enumerate() {
                    *ga /= 16.0 * 2.0 * spacing[a];
                }
                out[i] = (g[0] * g[0] + g[1] * g[1] + g[2] * g[2]).sqrt() as f32;
                i += 1;
            }
        }
    }
    v.with_data(out)
}

/// 3^3 box-mean blur; boundary voxels average over their in-bounds neighbors.
fn box_mean_3(v: &Volume) -> Volume {
    let dims = v.dims();
    let (nx, ny, nz) = (dims[0] as isize, dims[1] as isize, dims[2] as isize);
    let data = v.data();
    let mut out = vec![0f32; data.len()];
    let mut i = 0usize;
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let mut acc = 0f64;
                let mut n = 0u32;
                for dz in -1isize..=1 {
                    for dy in -1isize..=1 {
                        for dx in -1isize..=1 {
                            let (xx, yy, zz) = (x + dx, y + dy, z + dz);
                            if xx < 0 || yy < 0 || zz < 0 || xx >= nx || yy >= ny || zz >= nz {
                                continue;
                            }
                            acc += f64::from(
                                data[(xx + nx * (yy + ny * zz)) as usize],
                            );
                            n += 1;
                        }
                    }
                }
                out[i] = (acc / f64::from(n)) as f32;
                i += 1;
            }
        }
    }
    v.with_data(out).expect("same length")
}

/// Result of the rule-based extraction.
#[derive(Debug, Clone)]
pub struct RuleExtraction {
    pub mask: Mask,
    /// Set when no component fell in the expected brain volume range and the
    /// largest one was taken instead.
    pub leak_warning: bool,
    /// MRF energy after initialization and each ICM sweep.
    pub mrf_energies: Vec<f64>,
}

/// Fraction of volume boundary-face voxels covered by the mask.
fn boundary_face_fraction(m: &Mask) -> f64 {
    let dims = m.dims();
    let mut total = 0usize;
    let mut on = 0usize;
    for z in 0..dims[2] {
        for y in 0..dims[1] {
            for x in 0..dims[0] {
                if x == 0
                    || y == 0
                    || z == 0
                    || x == dims[0] - 1
                    || y == dims[1] - 1
                    || z == dims[2] - 1
                {
                    total += 1;
                    if m.at(x, y, z) == 1 {
                        on += 1;
                    }
                }
            }
        }
    }
    on as f64 / total as f64
}

/// The seven-step rule-based pipeline on an isotropic ADC baseline volume.
pub fn extract_brain_rule(adc_base: &Volume, params: &RuleParams) -> Result<RuleExtraction> {
    params.validate()?;
    let map_degenerate = |e: Error| match e {
        Error::DegenerateInput(msg) => {
            Error::ExtractionFailed(format!("volume has no foreground structure: {msg}"))
        }
        other => other,
    };

    // (1) foreground via Otsu
    let fg_thr = otsu_threshold(adc_base.data(), 256).map_err(map_degenerate)?;
    let fg = Mask::from_threshold(adc_base, fg_thr);
    if fg.count() == 0 {
        return Err(Error::ExtractionFailed("empty Otsu foreground".into()));
    }

    // (2) contrast normalization
    let vn = normalize_contrast(adc_base, params.percentile_lo, params.percentile_hi)
        .map_err(map_degenerate)?;

    // (3) edge-preserving smoothing
    let noise = estimate_noise_map(&vn, 2);
    let vd = denoise_nlm_adaptive(&vn, &noise, params.patch_radius, params.search_radius)?;

    // (4) gradient magnitude
    let grad = sobel_gradient_magnitude(&vd)?;

    // (5) gradient threshold + graph segmentation on the masked image
    let grad_fg: Vec<f32> = grad
        .data()
        .iter()
        .zip(fg.data())
        .filter(|(_, &m)| m == 1)
        .map(|(&g, _)| g * params.sobel_scale as f32)
        .collect();
    let grad_thr = match params.gradient_threshold {
        GradientThreshold::Fixed(t) => t,
        GradientThreshold::Otsu => otsu_threshold(&grad_fg, 256).map_err(map_degenerate)?,
    };
    let masked: Vec<f32> = vd
        .data()
        .iter()
        .zip(fg.data())
        .map(|(&x, &m)| if m == 1 { x } else { 0.0 })
        .collect();
    let masked = vd.with_data(masked)?;
    let k = params.merge_k_scale * adc_base.len() as f64;
    let seg = felzenszwalb_segment(&masked, k, params.min_segment_size);

    let fg_values: Vec<f32> = vd
        .data()
        .iter()
        .zip(fg.data())
        .filter(|(_, &m)| m == 1)
        .map(|(&x, _)| x)
        .collect();
    let intensity_thr = otsu_threshold(&fg_values, 256).map_err(map_degenerate)?;
    let selected: Vec<bool> = seg
        .mean_intensity
        .iter()
        .map(|&m| m > intensity_thr)
        .collect();

    let mut cand = Mask::zeros_like(adc_base);
    let scaled_grad_thr = grad_thr;
    for i in 0..adc_base.len() {
        let in_candidate = selected[(seg.labels[i] - 1) as usize];
        let in_fg = fg.data()[i] == 1;
        let on_edge = f64::from(grad.data()[i]) * params.sobel_scale > scaled_grad_thr;
        cand.data_mut()[i] = u8::from(in_candidate && in_fg && !on_edge);
    }
    if cand.count() == 0 {
        return Err(Error::ExtractionFailed(
            "no candidate segments above the foreground intensity level".into(),
        ));
    }

    // (6) morphology: open, close, fill
    let m = morphology(&cand, MorphOp::Open, params.morphology_radius);
    let m = morphology(&m, MorphOp::Close, params.morphology_radius);
    let m = morphology(&m, MorphOp::Fill, params.morphology_radius);
    if m.count() == 0 {
        return Err(Error::ExtractionFailed(
            "candidate region vanished under morphology".into(),
        ));
    }

    // (7) MRF regularization on the blurred candidate indicator
    let prob = box_mean_3(&m.to_volume());
    let (mrf_mask, energies) = mrf_regularize_traced(&prob, params.mrf_beta, params.mrf_max_iters)?;

    // final: largest component within the expected physical volume range
    let (labels, sizes) = connected_components(&mrf_mask, Connectivity::Six);
    if sizes.is_empty() {
        return Err(Error::ExtractionFailed(
            "MRF regularization produced an empty mask".into(),
        ));
    }
    let voxel_mm3 = adc_base.voxel_volume();
    let (lo, hi) = params.brain_volume_mm3;
    let chosen = (1..=sizes.len())
        .find(|&l| {
            let vol = sizes[l - 1] as f64 * voxel_mm3;
            (lo..=hi).contains(&vol)
        });
    let (label, leak_warning) = match chosen {
        Some(l) => (l as u32, false),
        None => (1, true),
    };
    let mut mask = Mask::zeros_like(adc_base);
    for (o, &l) in mask.data_mut().iter_mut().zip(labels.labels.iter()) {
        *o = u8::from(l == label);
    }

    if boundary_face_fraction(&mask) > 0.05 {
        return Err(Error::ExtractionFailed(
            "mask leaked to the volume boundary".into(),
        ));
    }
    Ok(RuleExtraction {
        mask,
        leak_warning,
        mrf_energies: energies,
    })
}
