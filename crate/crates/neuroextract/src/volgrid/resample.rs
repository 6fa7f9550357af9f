//! Tricubic (Catmull-Rom) resampling onto a new isotropic or anisotropic grid.

use super::Volume;
use crate::error::{Error, Result};

/// Resample onto a grid with `target_spacing`, covering the same physical
/// extent. Grid alignment is center-of-first-voxel: the new first voxel center
/// coincides with the old one. Out-of-support samples clamp to the edge.
pub fn resample_tricubic(v: &Volume, target_spacing: [f64; 3]) -> Result<Volume> {
    if target_spacing.iter().any(|&s| !(s > 0.0)) {
        return Err(Error::Geometry(format!(
            "target spacing must be positive, got {target_spacing:?}"
        )));
    }
    let dims = v.dims();
    let spacing = v.spacing();

    let mut new_dims = [0usize; 3];
    for a in 0..3 {
        if spacing[a] == target_spacing[a] {
            new_dims[a] = dims[a];
        } else {
            let extent = dims[a] as f64 * spacing[a];
            new_dims[a] = ((extent / target_spacing[a]).round() as usize).max(1);
        }
    }

    // Direction cosines from the old affine; new affine scales them to the
    // target spacing and keeps the same origin.
    let old = v.affine();
    let inv = invert_affine(old)?;
    let mut new_affine = [[0f64; 4]; 4];
    for r in 0..3 {
        for c in 0..3 {
            new_affine[r][c] = old[r][c] / spacing[c] * target_spacing[c];
        }
        new_affine[r][3] = old[r][3];
    }
    new_affine[3] = [0.0, 0.0, 0.0, 1.0];

    let n = new_dims[0] * new_dims[1] * new_dims[2];
    let mut data = vec![0f32; n];
    let mut idx = 0;
    for k in 0..new_dims[2] {
        for j in 0..new_dims[1] {
            for i in 0..new_dims[0] {
                let world = [
                    new_affine[0][0] * i as f64
                        + new_affine[0][1] * j as f64
                        + new_affine[0][2] * k as f64
                        + new_affine[0][3],
                    new_affine[1][0] * i as f64
                        + new_affine[1][1] * j as f64
                        + new_affine[1][2] * k as f64
                        + new_affine[1][3],
                    new_affine[2][0] * i as f64
                        + new_affine[2][1] * j as f64
                        + new_affine[2][2] * k as f64
                        + new_affine[2][3],
                ];
                let vx = [
                    inv[0][0] * world[0] + inv[0][1] * world[1] + inv[0][2] * world[2] + inv[0][3],
                    inv[1][0] * world[0] + inv[1][1] * world[1] + inv[1][2] * world[2] + inv[1][3],
                    inv[2][0] * world[0] + inv[2][1] * world[1] + inv[2][2] * world[2] + inv[2][3],
                ];
                data[idx] = sample_tricubic(v, vx) as f32;
                idx += 1;
            }
        }
    }
    Volume::new(new_dims, target_spacing, new_affine, data)
}

/// Catmull-Rom weights for the four taps around a sample at fractional t.
#[inline]
fn catmull_rom(t: f64) -> [f64; 4] {
    let t2 = t * t;
    let t3 = t2 * t;
    [
        -0.5 * t3 + t2 - 0.5 * t,
        1.5 * t3 - 2.5 * t2 + 1.0,
        -1.5 * t3 + 2.0 * t2 + 0.5 * t,
        0.5 * t3 - 0.5 * t2,
    ]
}

/// Sample at a continuous voxel coordinate with edge clamping.
pub fn sample_tricubic(v: &Volume, pos: [f64; 3]) -> f64 {
    let dims = v.dims();
    let mut base = [0isize; 3];
    let mut w = [[0f64; 4]; 3];
    for a in 0..3 {
        let p = pos[a];
        let fl = p.floor();
        base[a] = fl as isize;
        w[a] = catmull_rom(p - fl);
    }
    let clamp = |x: isize, n: usize| -> usize { x.clamp(0, n as isize - 1) as usize };
    let mut acc = 0f64;
    for dz in 0..4usize {
        let z = clamp(base[2] + dz as isize - 1, dims[2]);
        let wz = w[2][dz];
        if wz == 0.0 {
            continue;
        }
        for dy in 0..4usize {
            let y = clamp(base[1] + dy as isize - 1, dims[1]);
            let wyz = w[1][dy] * wz;
            if wyz == 0.0 {
                continue;
            }
            let row = v.index(0, y, z);
            let mut line = 0f64;
            for dx in 0..4usize {
                let x = clamp(base[0] + dx as isize - 1, dims[0]);
                line += w[0][dx] * f64::from(v.data()[row + x]);
            }
            acc += wyz * line;
        }
    }
    acc
}

/// Invert a 4x4 affine whose last row is [0,0,0,1].
pub fn invert_affine(a: &[[f64; 4]; 4]) -> Result<[[f64; 4]; 4]> {
    let m = [
        [a[0][0], a[0][1], a[0][2]],
        [a[1][0], a[1][1], a[1][2]],
        [a[2][0], a[2][1], a[2][2]],
    ];
    let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
    if det.abs() < 1e-12 {
        return Err(Error::Geometry("affine is singular".into()));
    }
    let inv3 = [
        [
            (m[1][1] * m[2][2] - m[1][2] * m[2][1]) / det,
            (m[0][2] * m[2][1] - m[0][1] * m[2][2]) / det,
            (m[0][1] * m[1][2] - m[0][2] * m[1][1]) / det,
        ],
        [
            (m[1][2] * m[2][0] - m[1][0] * m[2][2]) / det,
            (m[0][0] * m[2][2] - m[0][2] * m[2][0]) / det,
            (m[0][2] * m[1][0] - m[0][0] * m[1][2]) / det,
        ],
        [
            (m[1][0] * m[2][1] - m[1][1] * m[2][0]) / det,
            (m[0][1] * m[2][0] - m[0][0] * m[2][1]) / det,
            (m[0][0] * m[1][1] - m[0][1] * m[1][0]) / det,
        ],
    ];
    let t = [a[0][3], a[1][3], a[2][3]];
    let mut out = [[0f64; 4]; 4];
    for r in 0..3 {
        for c in 0..3 {
            out[r][c] = inv3[r][c];
        }
        out[r][3] = -(inv3[r][0] * t[0] + inv3[r][1] * t[1] + inv3[r][2] * t[2]);
    }
    out[3] = [0.0, 0.0, 0.0, 1.0];
    Ok(out)
}
