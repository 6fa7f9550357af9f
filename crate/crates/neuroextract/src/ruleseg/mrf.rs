//! Binary Potts-model regularization solved with iterated conditional modes.

use crate::error::{Error, Result};
use crate::volgrid::{Mask, Volume};

const PROB_EPS: f64 = 1e-6;

/// ICM over the 6-neighbor graph. Unary cost -ln(p_l + 1e-6), pairwise
/// beta per disagreeing neighbor pair. Starts from the 0.5 threshold of the
/// probabilities and sweeps in lexicographic order until no voxel flips or
/// `max_iters` sweeps. Ties keep the current label.
pub fn mrf_regularize(foreground_prob: &Volume, beta: f64, max_iters: usize) -> Result<Mask> {
    mrf_regularize_traced(foreground_prob, beta, max_iters).map(|(m, _)| m)
}

/// As [`mrf_regularize`], also returning the total energy after the
/// initialization and after each sweep. Energy is non-increasing; this is
/// asserted internally.
pub fn mrf_regularize_traced(
    foreground_prob: &Volume,
    beta: f64,
    max_iters: usize,
) -> Result<(Mask, Vec<f64>)> {
    if beta < 0.0 {
        return Err(Error::Domain(format!("beta must be >= 0, got {beta}")));
    }
    let data = foreground_prob.data();
    if data.iter().any(|&p| !(0.0..=1.0).contains(&f64::from(p))) {
        return Err(Error::Domain(
            "probabilities must lie in [0, 1]".into(),
        ));
    }
    let dims = foreground_prob.dims();
    let (nx, ny, nz) = (dims[0], dims[1], dims[2]);
    let n = data.len();

    // unary costs for background/foreground
    let mut u0 = vec![0f32; n];
    let mut u1 = vec![0f32; n];
    for i in 0..n {
        let p = f64::from(data[i]);
        u1[i] = (-(p + PROB_EPS).ln()) as f32;
        u0[i] = (-((1.0 - p) + PROB_EPS).ln()) as f32;
    }

    let mut labels: Vec<u8> = data.iter().map(|&p| u8::from(f64::from(p) > 0.5)).collect();

    let energy = |labels: &[u8]| -> f64 {
        let mut e = 0f64;
        for i in 0..n {
            e += f64::from(if labels[i] == 1 { u1[i] } else { u0[i] });
        }
        let idx = |x: usize, y: usize, z: usize| x + nx * (y + ny * z);
        for z in 0..nz {
            for y in 0..ny {
                for x in 0..nx {
                    let l = labels[idx(x, y, z)];
                    if x + 1 < nx && l != labels[idx(x + 1, y, z)] {
                        e += beta;
                    }
                    if y + 1 < ny && l != labels[idx(x, y + 1, z)] {
                        e += beta;
                    }
                    if z + 1 < nz && l != labels[idx(x, y, z + 1)] {
                        e += beta;
                    }
                }
            }
        }
        e
    };

    let mut energies = vec![energy(&labels)];
    for _sweep in 0..max_iters {
        let mut flips = 0usize;
        let idx = |x: usize, y: usize, z: usize| x + nx * (y + ny * z);
        for z in 0..nz {
            for y in 0..ny {
                for x in 0..nx {
                    let i = idx(x, y, z);
                    let mut disagree1 = 0u32; // neighbors labeled 0 (disagree with fg)
                    let mut neighbors = 0u32;
                    let mut count = |l: u8| {
                        neighbors += 1;
                        if l == 0 {
                            disagree1 += 1;
                        }
                    };
                    if x > 0 {
                        count(labels[i - 1]);
                    }
                    if x + 1 < nx {
                        count(labels[i + 1]);
                    }
                    if y > 0 {
                        count(labels[i - nx]);
                    }
                    if y + 1 < ny {
                        count(labels[i + nx]);
                    }
                    if z > 0 {
                        count(labels[i - nx * ny]);
                    }
                    if z + 1 < nz {
                        count(labels[i + nx * ny]);
                    }
                    let e1 = f64::from(u1[i]) + beta * f64::from(disagree1);
                    let e0 = f64::from(u0[i]) + beta * f64::from(neighbors - disagree1);
                    let new = if e1 < e0 {
                        1
                    } else if e0 < e1 {
                        0
                    } else {
                        labels[i]
                    };
                    if new != labels[i] {
                        labels[i] = new;
                        flips += 1;
                    }
                }
            }
        }
        let e = energy(&labels);
        let prev = *energies.last().unwrap();
        assert!(
            e <= prev + 1e-9 * prev.abs().max(1.0),
            "ICM energy increased: {prev} -> {e}"
        );
        energies.push(e);
        if flips == 0 {
            break;
        }
    }

    let mask = Mask::new(
        dims,
        foreground_prob.spacing(),
        *foreground_prob.affine(),
        labels,
    )?;
    Ok((mask, energies))
}
