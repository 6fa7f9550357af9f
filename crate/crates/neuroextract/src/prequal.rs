//! Pre-processing and scan quality assessment: Otsu foreground separation,
//! SNR/CNR/SVNR metrics, voxelwise noise estimation, and adaptive non-local
//! means denoising.

use serde::{Deserialize, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::volgrid::{Mask, Volume};

/// Scan quality report. Ratios are +infinity when the background is exactly
/// constant; JSON serializes that sentinel as the string "inf".
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QAReport {
    #[serde(serialize_with = "ser_ratio")]
    pub snr: f64,
    #[serde(serialize_with = "ser_ratio")]
    pub cnr: f64,
    #[serde(serialize_with = "ser_ratio")]
    pub svnr: f64,
    pub foreground_voxels: usize,
    pub otsu_threshold: f64,
}

fn ser_ratio<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_f64(*v)
    } else {
        s.serialize_str("inf")
    }
}

/// Per-voxel noise standard deviation estimates.
#[derive(Debug, Clone)]
pub struct NoiseMap(pub Volume);

/// Otsu's method over a `bins`-bin histogram spanning [min, max]. Returns the
/// bin-edge threshold maximizing between-class variance; ties break toward the
/// lower threshold. Needs at least two distinct values.
pub fn otsu_threshold(values: &[f32], bins: usize) -> Result<f64> {
    if bins < 2 {
        return Err(Error::Config(format!("bins must be >= 2, got {bins}")));
    }
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    for &v in values {
        let v = f64::from(v);
        if v < min {
            min = v;
        }
        if v > max {
            max = v;
        }
    }
    if values.is_empty() || !(max > min) {
        return Err(Error::DegenerateInput(
            "otsu requires at least two distinct values".into(),
        ));
    }
    let width = (max - min) / bins as f64;
    let mut hist = vec![0u64; bins];
    for &v in values {
        let b = (((f64::from(v) - min) / width) as usize).min(bins - 1);
        hist[b] += 1;
    }

    let total: f64 = values.len() as f64;
    let sum_total: f64 = hist
        .iter()
        .enumerate()
        .map(|(i, &h)| i as f64 * h as f64)
        .sum();

    let mut w0 = 0f64;
    let mut sum0 = 0f64;
    let mut best = f64::NEG_INFINITY;
    let mut best_t = 0usize;
    for t in 0..bins - 1 {
        w0 += hist[t] as f64;
        sum0 += t as f64 * hist[t] as f64;
        let w1 = total - w0;
        if w0 == 0.0 || w1 == 0.0 {
            continue;
        }
        let mu0 = sum0 / w0;
        let mu1 = (sum_total - sum0) / w1;
        let var_between = w0 * w1 * (mu0 - mu1) * (mu0 - mu1);
        if var_between > best {
            best = var_between;
            best_t = t;
        }
    }
    Ok(min + (best_t as f64 + 1.0) * width)
}

/// Foreground mask: voxels strictly above the Otsu threshold.
pub fn foreground_mask(v: &Volume) -> Result<Mask> {
    let thr = otsu_threshold(v.data(), 256)?;
    Ok(Mask::from_threshold(v, thr))
}

/// Population mean and variance over sorted values, so the result depends
/// only on the value multiset and not on voxel ordering.
fn mean_var(mut values: Vec<f64>) -> (f64, f64, usize) {
    values.sort_unstable_by(f64::total_cmp);
    let n = values.len();
    if n == 0 {
        return (0.0, 0.0, 0);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
    (mean, var, n)
}

/// SNR, CNR, and SVNR from the Otsu foreground/background split.
pub fn qa_metrics(v: &Volume) -> Result<QAReport> {
    let thr = otsu_threshold(v.data(), 256)?;
    let fg: Vec<f64> = v.data().iter().map(|&x| f64::from(x)).filter(|&x| x > thr).collect();
    let bg: Vec<f64> = v.data().iter().map(|&x| f64::from(x)).filter(|&x| x <= thr).collect();
    let (fg_mean, fg_var, fg_n) = mean_var(fg);
    let (bg_mean, bg_var, _) = mean_var(bg);
    let bg_sd = bg_var.sqrt();
    let ratio = |num: f64, den: f64| if den > 0.0 { num / den } else { f64::INFINITY };
    Ok(QAReport {
        snr: ratio(fg_mean, bg_sd),
        cnr: ratio(fg_mean - bg_mean, bg_sd),
        svnr: ratio(fg_var, bg_var),
        foreground_voxels: fg_n,
        otsu_threshold: thr,
    })
}

/// Voxelwise noise sigma from pseudo-residuals: the residual of each voxel
/// against its face-neighbor mean, variance-normalized, then a MAD estimate
/// over the (2r+1)^3 neighborhood.
pub fn estimate_noise_map(v: &Volume, radius: usize) -> NoiseMap {
    let radius = radius.max(1);
    let dims = v.dims();
    let (nx, ny, nz) = (dims[0], dims[1], dims[2]);
    let data = v.data();
    let idx = |x: usize, y: usize, z: usize| x + nx * (y + ny * z);

    // Pseudo-residuals: r = sqrt(m/(m+1)) * (v - mean of m face neighbors).
    let mut resid = vec![0f64; data.len()];
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let mut sum = 0f64;
                let mut m = 0usize;
                if x > 0 {
                    sum += f64::from(data[idx(x - 1, y, z)]);
                    m += 1;
                }
                if x + 1 < nx {
                    sum += f64::from(data[idx(x + 1, y, z)]);
                    m += 1;
                }
                if y > 0 {
                    sum += f64::from(data[idx(x, y - 1, z)]);
                    m += 1;
                }
                if y + 1 < ny {
                    sum += f64::from(data[idx(x, y + 1, z)]);
                    m += 1;
                }
                if z > 0 {
                    sum += f64::from(data[idx(x, y, z - 1)]);
                    m += 1;
                }
                if z + 1 < nz {
                    sum += f64::from(data[idx(x, y, z + 1)]);
                    m += 1;
                }
                let factor = (m as f64 / (m as f64 + 1.0)).sqrt();
                resid[idx(x, y, z)] = factor * (f64::from(data[idx(x, y, z)]) - sum / m as f64);
            }
        }
    }

    let mut sigma = vec![0f32; data.len()];
    let mut window: Vec<f64> = Vec::with_capacity((2 * radius + 1).pow(3));
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                window.clear();
                for zz in z.saturating_sub(radius)..(z + radius + 1).min(nz) {
                    for yy in y.saturating_sub(radius)..(y + radius + 1).min(ny) {
                        for xx in x.saturating_sub(radius)..(x + radius + 1).min(nx) {
                            window.push(resid[idx(xx, yy, zz)].abs());
                        }
                    }
                }
                let n = window.len();
                let median = if n % 2 == 1 {
                    *window
                        .select_nth_unstable_by(n / 2, |a, b| a.partial_cmp(b).unwrap())
                        .1
                } else {
                    let (_, hi, _) =
                        window.select_nth_unstable_by(n / 2, |a, b| a.partial_cmp(b).unwrap());
                    let hi = *hi;
                    let lo = window[..n / 2]
                        .iter()
                        .copied()
                        .fold(f64::NEG_INFINITY, f64::max);
                    0.5 * (lo + hi)
                };
                sigma[idx(x, y, z)] = (1.4826 * median) as f32;
            }
        }
    }
    NoiseMap(v.with_data(sigma).expect("same length"))
}

/// Adaptive non-local means: each voxel becomes the weighted average of
/// search-window centers, weighted by noise-offset patch similarity
/// w = exp(-max(0, d2 - 2*sigma^2) / h^2) with d2 the mean squared patch
/// difference and h = 0.4*sigma. sigma = 0 degenerates to exact patch match.
pub fn denoise_nlm_adaptive(
    v: &Volume,
    noise: &NoiseMap,
    patch_radius: usize,
    search_radius: usize,
) -> Result<Volume> {
    if !noise.0.same_geometry(v) {
        return Err(Error::Shape(
            "noise map geometry does not match volume".into(),
        ));
    }
    let patch_radius = patch_radius.max(1) as isize;
    let search_radius = search_radius.max(1) as isize;
    let dims = v.dims();
    let (nx, ny, nz) = (dims[0] as isize, dims[1] as isize, dims[2] as isize);
    let data = v.data();
    let idx = |x: isize, y: isize, z: isize| -> usize {
        let xc = x.clamp(0, nx - 1);
        let yc = y.clamp(0, ny - 1);
        let zc = z.clamp(0, nz - 1);
        (xc + nx * (yc + ny * zc)) as usize
    };
    let patch_count = ((2 * patch_radius + 1).pow(3)) as f64;

    let mut out = vec![0f32; data.len()];
    let run_slab = |z0: isize, z1: isize, out_slab: &mut [f32]| {
        for z in z0..z1 {
            for y in 0..ny {
                for x in 0..nx {
                    let sigma = f64::from(noise.0.data()[idx(x, y, z)]);
                    let sigma2 = sigma * sigma;
                    let h2 = 0.16 * sigma2;
                    let mut wsum = 0f64;
                    let mut acc = 0f64;
                    for sz in -search_radius..=search_radius {
                        for sy in -search_radius..=search_radius {
                            for sx in -search_radius..=search_radius {
                                let (cx, cy, cz) = (x + sx, y + sy, z + sz);
                                // mean squared patch difference
                                let mut d2 = 0f64;
                                for pz in -patch_radius..=patch_radius {
                                    for py in -patch_radius..=patch_radius {
                                        for px in -patch_radius..=patch_radius {
                                            let a = f64::from(data[idx(x + px, y + py, z + pz)]);
                                            let b = f64::from(
                                                data[idx(cx + px, cy + py, cz + pz)],
                                            );
                                            d2 += (a - b) * (a - b);
                                        }
                                    }
                                }
                                d2 /= patch_count;
                                let w = if h2 > 0.0 {
                                    (-((d2 - 2.0 * sigma2).max(0.0)) / h2).exp()
                                } else if d2 == 0.0 {
                                    1.0
                                } else {
                                    0.0
                                };
                                wsum += w;
                                acc += w * f64::from(data[idx(cx, cy, cz)]);
                            }
                        }
                    }
                    out_slab[(x + nx * (y + ny * (z - z0))) as usize] = if wsum > 0.0 {
                        (acc / wsum) as f32
                    } else {
                        data[idx(x, y, z)]
                    };
                }
            }
        }
    };

    // Parallel over z-slabs; each slab writes a disjoint output range.
    use rayon::prelude::*;
    let slab_len = (nx * ny) as usize;
    out.par_chunks_mut(slab_len)
        .enumerate()
        .for_each(|(z, slab)| run_slab(z as isize, z as isize + 1, slab));

    v.with_data(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    /// Exhaustive between-class-variance maximization over every bin edge.
    pub fn otsu_oracle(values: &[f32], bins: usize) -> f64 {
        let min = values.iter().fold(f64::INFINITY, |a, &b| a.min(f64::from(b)));
        let max = values
            .iter()
            .fold(f64::NEG_INFINITY, |a, &b| a.max(f64::from(b)));
        let width = (max - min) / bins as f64;
        let mut hist = vec![0u64; bins];
        for &v in values {
            let b = (((f64::from(v) - min) / width) as usize).min(bins - 1);
            hist[b] += 1;
        }
        let total: f64 = values.len() as f64;
        let sum_total: f64 = hist.iter().enumerate().map(|(i, &h)| i as f64 * h as f64).sum();
        let mut best = f64::NEG_INFINITY;
        let mut best_t = 0usize;
        for t in 0..bins - 1 {
            let mut w0 = 0f64;
            let mut sum0 = 0f64;
            for (i, &h) in hist.iter().enumerate().take(t + 1) {
                w0 += h as f64;
                sum0 += i as f64 * h as f64;
            }
            let w1 = total - w0;
            if w0 == 0.0 || w1 == 0.0 {
                continue;
            }
            let mu0 = sum0 / w0;
            let mu1 = (sum_total - sum0) / w1;
            let vb = w0 * w1 * (mu0 - mu1) * (mu0 - mu1);
            if vb > best {
                best = vb;
                best_t = t;
            }
        }
        min + (best_t as f64 + 1.0) * width
    }

    #[test]
    fn bimodal_split_is_clean() {
        let mut values = vec![0f32; 100];
        values.extend(vec![10f32; 100]);
        let thr = otsu_threshold(&values, 256).unwrap();
        assert!(values.iter().all(|&v| (v == 0.0) == (f64::from(v) <= thr)));
    }

    #[test]
    fn constant_input_is_degenerate() {
        assert!(matches!(
            otsu_threshold(&[5.0; 32], 256),
            Err(Error::DegenerateInput(_))
        ));
    }

    #[test]
    fn matches_exhaustive_oracle_on_mixtures() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for trial in 0..200 {
            let n0 = Normal::new(20.0, 4.0).unwrap();
            let n1 = Normal::new(60.0, 9.0).unwrap();
            let mut values: Vec<f32> = (0..400).map(|_| n0.sample(&mut rng) as f32).collect();
            values.extend((0..300).map(|_| n1.sample(&mut rng) as f32));
            let got = otsu_threshold(&values, 256).unwrap();
            let want = otsu_oracle(&values, 256);
            assert_eq!(got, want, "trial {trial}");
        }
    }

    #[test]
    fn foreground_mask_matches_threshold() {
        let mut values = vec![0f32; 60];
        values.extend(vec![10f32; 4]);
        let v = Volume::from_spacing([4, 4, 4], [1.0; 3], values).unwrap();
        let m = foreground_mask(&v).unwrap();
        assert_eq!(m.count(), 4);
        assert!(matches!(
            foreground_mask(&Volume::filled([2, 2, 2], [1.0; 3], 1.0).unwrap()),
            Err(Error::DegenerateInput(_))
        ));
    }

    #[test]
    fn qa_metrics_on_known_populations() {
        // foreground 100s, background N(0, 5): snr ~ 20, cnr ~ snr, svnr ~ 0
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let noise = Normal::new(0.0, 5.0).unwrap();
        let n_bg = 100_000usize;
        let mut values: Vec<f32> = (0..n_bg).map(|_| noise.sample(&mut rng) as f32).collect();
        values.extend(vec![100f32; 10_000]);
        let extra = 110_592 - values.len(); // 48^3
        values.extend(vec![100f32; extra]);
        let v = Volume::from_spacing([48, 48, 48], [1.0; 3], values).unwrap();
        let qa = qa_metrics(&v).unwrap();
        assert!((qa.snr - 20.0).abs() / 20.0 < 0.05, "snr {}", qa.snr);
        assert!((qa.cnr - qa.snr).abs() / qa.snr < 0.05, "cnr {}", qa.cnr);
    }

    #[test]
    fn svnr_of_equal_variances_is_one() {
        // foreground N(100, 5) and background N(0, 5): svnr ~ 1
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let noise = Normal::new(0.0, 5.0).unwrap();
        let n = 110_592usize / 2;
        let mut values: Vec<f32> = (0..n).map(|_| noise.sample(&mut rng) as f32).collect();
        values.extend((0..n).map(|_| (100.0 + noise.sample(&mut rng)) as f32));
        let v = Volume::from_spacing([48, 48, 48], [1.0; 3], values).unwrap();
        let qa = qa_metrics(&v).unwrap();
        assert!((qa.svnr - 1.0).abs() < 0.05, "svnr {}", qa.svnr);
    }

    #[test]
    fn qa_invariant_to_voxel_ordering() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut values: Vec<f32> = (0..500).map(|_| rng.random_range(0f32..1.0)).collect();
        values.extend((0..12).map(|_| rng.random_range(50f32..60.0)));
        let v = Volume::from_spacing([8, 8, 8], [1.0; 3], values.clone()).unwrap();
        let a = qa_metrics(&v).unwrap();
        // reverse ordering
        values.reverse();
        let v2 = Volume::from_spacing([8, 8, 8], [1.0; 3], values).unwrap();
        let b = qa_metrics(&v2).unwrap();
        assert_eq!(a.snr, b.snr);
        assert_eq!(a.cnr, b.cnr);
        assert_eq!(a.svnr, b.svnr);
        assert_eq!(a.foreground_voxels, b.foreground_voxels);
    }

    #[test]
    fn noise_map_zero_on_constant() {
        let v = Volume::filled([8, 8, 8], [1.0; 3], 42.0).unwrap();
        let nm = estimate_noise_map(&v, 2);
        assert!(nm.0.data().iter().all(|&s| s == 0.0));
    }

    #[test]
    fn noise_map_annihilates_linear_ramp_interior() {
        let dims = [12usize, 12, 12];
        let mut data = vec![0f32; 12 * 12 * 12];
        let mut i = 0;
        for z in 0..12 {
            for y in 0..12 {
                for x in 0..12 {
                    data[i] = (2.0 * x as f64 - 0.5 * y as f64 + 3.0 * z as f64) as f32;
                    i += 1;
                }
            }
        }
        let v = Volume::from_spacing(dims, [1.0; 3], data).unwrap();
        let nm = estimate_noise_map(&v, 2);
        for z in 3..9 {
            for y in 3..9 {
                for x in 3..9 {
                    assert!(nm.0.at(x, y, z) < 1e-5);
                }
            }
        }
    }

    #[test]
    fn noise_map_recovers_gaussian_sigma() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let noise = Normal::new(0.0, 10.0).unwrap();
        let n = 64usize;
        let data: Vec<f32> = (0..n * n * n).map(|_| noise.sample(&mut rng) as f32).collect();
        let v = Volume::from_spacing([n, n, n], [1.0; 3], data).unwrap();
        let nm = estimate_noise_map(&v, 2);
        let mut interior: Vec<f32> = Vec::new();
        for z in 8..56 {
            for y in 8..56 {
                for x in 8..56 {
                    interior.push(nm.0.at(x, y, z));
                }
            }
        }
        interior.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let median = f64::from(interior[interior.len() / 2]);
        assert!((median - 10.0).abs() / 10.0 < 0.10, "median sigma {median}");
    }

    #[test]
    fn noise_map_scales_linearly() {
        let mut rng = ChaCha8Rng::seed_from_u64(27);
        let data: Vec<f32> = (0..1000).map(|_| rng.random_range(0f32..5.0)).collect();
        let v = Volume::from_spacing([10, 10, 10], [1.0; 3], data.clone()).unwrap();
        let scaled =
            Volume::from_spacing([10, 10, 10], [1.0; 3], data.iter().map(|&x| 3.0 * x).collect())
                .unwrap();
        let a = estimate_noise_map(&v, 2);
        let b = estimate_noise_map(&scaled, 2);
        for (x, y) in a.0.data().iter().zip(b.0.data()) {
            if *x > 0.0 {
                assert!((f64::from(*y) / f64::from(*x) - 3.0).abs() < 1e-4);
            } else {
                assert!(*y < 1e-6);
            }
        }
    }

    #[test]
    fn nlm_identity_when_noise_free() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let data: Vec<f32> = (0..512).map(|_| rng.random_range(0f32..10.0)).collect();
        let v = Volume::from_spacing([8, 8, 8], [1.0; 3], data).unwrap();
        let zero_noise = NoiseMap(Volume::filled([8, 8, 8], [1.0; 3], 0.0).unwrap());
        let d = denoise_nlm_adaptive(&v, &zero_noise, 1, 2).unwrap();
        for (a, b) in d.data().iter().zip(v.data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn nlm_reduces_mse_on_noisy_constant() {
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        let noise = Normal::new(0.0, 10.0).unwrap();
        let n = 16usize;
        let clean = 100f32;
        let data: Vec<f32> = (0..n * n * n)
            .map(|_| clean + noise.sample(&mut rng) as f32)
            .collect();
        let v = Volume::from_spacing([n, n, n], [1.0; 3], data).unwrap();
        let nm = estimate_noise_map(&v, 2);
        let d = denoise_nlm_adaptive(&v, &nm, 1, 2).unwrap();
        let mse = |vol: &Volume| -> f64 {
            vol.data()
                .iter()
                .map(|&x| (f64::from(x) - f64::from(clean)).powi(2))
                .sum::<f64>()
                / vol.len() as f64
        };
        assert!(mse(&d) < mse(&v), "denoised {} input {}", mse(&d), mse(&v));
    }

    #[test]
    fn nlm_preserves_noiseless_step_edge() {
        let n = 10usize;
        let mut data = vec![0f32; n * n * n];
        for z in 0..n {
            for y in 0..n {
                for x in 0..n {
                    data[x + n * (y + n * z)] = if x < n / 2 { 10.0 } else { 90.0 };
                }
            }
        }
        let v = Volume::from_spacing([n, n, n], [1.0; 3], data).unwrap();
        let zero_noise = NoiseMap(Volume::filled([n, n, n], [1.0; 3], 0.0).unwrap());
        let d = denoise_nlm_adaptive(&v, &zero_noise, 1, 2).unwrap();
        let mid = 50.0;
        for (out, orig) in d.data().iter().zip(v.data()) {
            assert_eq!(
                f64::from(*out) > mid,
                f64::from(*orig) > mid,
                "edge moved"
            );
        }
    }

    #[test]
    fn nlm_output_within_input_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let data: Vec<f32> = (0..729).map(|_| rng.random_range(-5f32..25.0)).collect();
        let v = Volume::from_spacing([9, 9, 9], [1.0; 3], data).unwrap();
        let nm = estimate_noise_map(&v, 1);
        let d = denoise_nlm_adaptive(&v, &nm, 1, 2).unwrap();
        let lo = v.data().iter().cloned().fold(f32::INFINITY, f32::min);
        let hi = v.data().iter().cloned().fold(f32::NEG_INFINITY, f32::max);
        for &x in d.data() {
            assert!(x >= lo - 1e-4 && x <= hi + 1e-4);
        }
    }

    #[test]
    fn nlm_geometry_mismatch() {
        let v = Volume::filled([4, 4, 4], [1.0; 3], 0.0).unwrap();
        let nm = NoiseMap(Volume::filled([4, 4, 5], [1.0; 3], 0.0).unwrap());
        assert!(matches!(
            denoise_nlm_adaptive(&v, &nm, 1, 2),
            Err(Error::Shape(_))
        ));
    }
}
