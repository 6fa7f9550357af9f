//! Binary mathematical morphology with a discrete ball structuring element.

use crate::volgrid::{connected_components, Connectivity, Mask};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MorphOp {
    Open,
    Close,
    Fill,
}

fn ball_offsets(radius: usize) -> Vec<(isize, isize, isize)> {
    let r = radius as isize;
    let r2 = (radius * radius) as isize;
    let mut offsets = Vec::new();
    for dz in -r..=r {
        for dy in -r..=r {
            for dx in -r..=r {
                if dx * dx + dy * dy + dz * dz <= r2 {
                    offsets.push((dx, dy, dz));
                }
            }
        }
    }
    offsets
}

fn transform(m: &Mask, offsets: &[(isize, isize, isize)], dilate: bool) -> Mask {
    let dims = m.dims();
    let (nx, ny, nz) = (dims[0] as isize, dims[1] as isize, dims[2] as isize);
    // Outside the volume counts as background for dilation and foreground for
    // erosion, so opening stays anti-extensive and closing extensive at the
    // volume edge.
    let outside = u8::from(!dilate);
    let mut out = m.clone();
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let mut hit = !dilate;
                for &(dx, dy, dz) in offsets {
                    let (xx, yy, zz) = (x + dx, y + dy, z + dz);
                    let v = if xx < 0 || yy < 0 || zz < 0 || xx >= nx || yy >= ny || zz >= nz {
                        outside
                    } else {
                        m.at(xx as usize, yy as usize, zz as usize)
                    };
                    if dilate && v == 1 {
                        hit = true;
                        break;
                    }
                    if !dilate && v == 0 {
                        hit = false;
                        break;
                    }
                }
                out.set(x as usize, y as usize, z as usize, u8::from(hit));
            }
        }
    }
    out
}

pub fn dilate(m: &Mask, radius: usize) -> Mask {
    transform(m, &ball_offsets(radius), true)
}

pub fn erode(m: &Mask, radius: usize) -> Mask {
    transform(m, &ball_offsets(radius), false)
}

/// Fill interior holes: foreground plus every background component not
/// 6-connected to the volume boundary.
pub fn fill_holes(m: &Mask) -> Mask {
    let mut inv = m.clone();
    for v in inv.data_mut() {
        *v = 1 - *v;
    }
    let (labels, sizes) = connected_components(&inv, Connectivity::Six);
    if sizes.is_empty() {
        return m.clone();
    }
    let dims = m.dims();
    let mut touches_boundary = vec![false; sizes.len() + 1];
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
                    let l = labels.labels[x + dims[0] * (y + dims[1] * z)];
                    if l > 0 {
                        touches_boundary[l as usize] = true;
                    }
                }
            }
        }
    }
    let mut out = m.clone();
    for (o, &l) in out.data_mut().iter_mut().zip(labels.labels.iter()) {
        if l > 0 && !touches_boundary[l as usize] {
            *o = 1;
        }
    }
    out
}

pub fn morphology(m: &Mask, op: MorphOp, radius: usize) -> Mask {
    match op {
        MorphOp::Open => dilate(&erode(m, radius), radius),
        MorphOp::Close => erode(&dilate(m, radius), radius),
        MorphOp::Fill => fill_holes(m),
    }
}
