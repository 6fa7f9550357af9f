//! Monoexponential relaxometry: voxelwise log-linear fits of signal decay
//! over echo times (T2 -> R2 in 1/ms) or b-values (DWI -> ADC in mm^2/s).

use crate::error::{Error, Result};
use crate::volgrid::{Mask, Volume};

/// A co-registered series of volumes acquired at strictly increasing
/// parameter values (TE in ms or b in s/mm^2).
#[derive(Debug, Clone)]
pub struct DecaySeries {
    x: Vec<f64>,
    volumes: Vec<Volume>,
}

impl DecaySeries {
    pub fn new(x: Vec<f64>, volumes: Vec<Volume>) -> Result<Self> {
        if x.len() < 2 {
            return Err(Error::Data(format!(
                "decay series needs >= 2 samples, got {}",
                x.len()
            )));
        }
        if x.len() != volumes.len() {
            return Err(Error::Shape(format!(
                "{} parameter values vs {} volumes",
                x.len(),
                volumes.len()
            )));
        }
        if !x.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::Data(format!("x must be strictly increasing: {x:?}")));
        }
        for v in &volumes[1..] {
            if !v.same_geometry(&volumes[0]) {
                return Err(Error::Shape("series volumes differ in geometry".into()));
            }
        }
        Ok(DecaySeries { x, volumes })
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn volumes(&self) -> &[Volume] {
        &self.volumes
    }
}

/// Relaxometry output: baseline signal, decay rate, and the valid-fit mask.
#[derive(Debug, Clone)]
pub struct FitMaps {
    pub base: Volume,
    pub rate: Volume,
    pub valid: Mask,
}

/// Log-linear least squares of a monoexponential decay. Samples at or below
/// 1e-6 of the series maximum are excluded; at least two must remain.
/// Negative decay slopes clamp the rate to 0.
pub fn fit_monoexp(x: &[f64], s: &[f64]) -> Result<(f64, f64)> {
    assert_eq!(x.len(), s.len());
    let s_max = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let eps = 1e-6 * s_max;
    let mut n = 0f64;
    let mut sx = 0f64;
    let mut sy = 0f64;
    let mut sxx = 0f64;
    let mut sxy = 0f64;
    for (&xi, &si) in x.iter().zip(s) {
        if si > eps && si > 0.0 {
            let yi = si.ln();
            n += 1.0;
            sx += xi;
            sy += yi;
            sxx += xi * xi;
            sxy += xi * yi;
        }
    }
    if n < 2.0 {
        return Err(Error::InvalidFit);
    }
    let denom = n * sxx - sx * sx;
    if denom.abs() < 1e-300 {
        return Err(Error::InvalidFit);
    }
    let slope = (n * sxy - sx * sy) / denom;
    let intercept = (sy - slope * sx) / n;
    Ok((intercept.exp(), (-slope).max(0.0)))
}

/// Voxelwise [`fit_monoexp`] over a series. Invalid voxels get base = 0,
/// rate = 0, and valid = 0.
pub fn fit_series(series: &DecaySeries) -> FitMaps {
    let n = series.volumes[0].len();
    let x = series.x();
    let mut base = vec![0f32; n];
    let mut rate = vec![0f32; n];
    let mut valid = vec![0u8; n];
    let mut s = vec![0f64; x.len()];
    for i in 0..n {
        for (j, v) in series.volumes.iter().enumerate() {
            s[j] = f64::from(v.data()[i]);
        }
        if let Ok((b, r)) = fit_monoexp(x, &s) {
            base[i] = b as f32;
            rate[i] = r as f32;
            valid[i] = 1;
        }
    }
    let geom = &series.volumes[0];
    FitMaps {
        base: geom.with_data(base).expect("same length"),
        rate: geom.with_data(rate).expect("same length"),
        valid: Mask::new(geom.dims(), geom.spacing(), *geom.affine(), valid)
            .expect("binary by construction"),
    }
}
