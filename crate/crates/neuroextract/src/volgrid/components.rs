//! Connected-component labeling of binary masks.

use super::Mask;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Connectivity {
    Six,
    TwentySix,
}

/// Label volume with the source mask's dims; 0 is background, foreground
/// components are 1..=K.
#[derive(Debug, Clone)]
pub struct LabelVolume {
    pub dims: [usize; 3],
    pub labels: Vec<u32>,
}

/// Component sizes in voxels, indexed by `label - 1`.
pub type ComponentSizes = Vec<usize>;

/// Label foreground components. Labels are assigned in order of decreasing
/// size, ties broken by the smallest linear index of any member voxel.
pub fn connected_components(m: &Mask, connectivity: Connectivity) -> (LabelVolume, ComponentSizes) {
    let dims = m.dims();
    let (nx, ny, nz) = (dims[0], dims[1], dims[2]);
    let data = m.data();
    let n = data.len();
    let mut raw = vec![0u32; n];
    let mut comps: Vec<(usize, usize)> = Vec::new(); // (size, min linear index)
    let mut stack: Vec<usize> = Vec::new();

    let offsets_26: Vec<(isize, isize, isize)> = {
        let mut v = Vec::new();
        for dz in -1isize..=1 {
            for dy in -1isize..=1 {
                for dx in -1isize..=1 {
                    if (dx, dy, dz) != (0, 0, 0) {
                        v.push((dx, dy, dz));
                    }
                }
            }
        }
        v
    };
    let offsets_6: Vec<(isize, isize, isize)> = vec![
        (1, 0, 0),
        (-1, 0, 0),
        (0, 1, 0),
        (0, -1, 0),
        (0, 0, 1),
        (0, 0, -1),
    ];
    let offsets = match connectivity {
        Connectivity::Six => &offsets_6,
        Connectivity::TwentySix => &offsets_26,
    };

    for start in 0..n {
        if data[start] == 0 || raw[start] != 0 {
            continue;
        }
        let comp_id = comps.len() as u32 + 1;
        let mut size = 0usize;
        raw[start] = comp_id;
        stack.push(start);
        while let Some(idx) = stack.pop() {
            size += 1;
            let x = idx % nx;
            let y = (idx / nx) % ny;
            let z = idx / (nx * ny);
            for &(dx, dy, dz) in offsets {
                let (xx, yy, zz) = (x as isize + dx, y as isize + dy, z as isize + dz);
                if xx < 0
                    || yy < 0
                    || zz < 0
                    || xx >= nx as isize
                    || yy >= ny as isize
                    || zz >= nz as isize
                {
                    continue;
                }
                let j = xx as usize + nx * (yy as usize + ny * zz as usize);
                if data[j] == 1 && raw[j] == 0 {
                    raw[j] = comp_id;
                    stack.push(j);
                }
            }
        }
        comps.push((size, start));
    }

    // Relabel: size descending, then smallest member index ascending.
    let mut order: Vec<usize> = (0..comps.len()).collect();
    order.sort_by(|&a, &b| comps[b].0.cmp(&comps[a].0).then(comps[a].1.cmp(&comps[b].1)));
    let mut remap = vec![0u32; comps.len() + 1];
    let mut sizes = Vec::with_capacity(comps.len());
    for (new_label, &old) in order.iter().enumerate() {
        remap[old + 1] = new_label as u32 + 1;
        sizes.push(comps[old].0);
    }
    for l in raw.iter_mut() {
        if *l != 0 {
            *l = remap[*l as usize];
        }
    }
    (LabelVolume { dims, labels: raw }, sizes)
}

/// Mask of the single largest component (empty mask if there is none).
pub fn largest_component(m: &Mask, connectivity: Connectivity) -> Mask {
    let (labels, sizes) = connected_components(m, connectivity);
    let mut out = m.clone();
    if sizes.is_empty() {
        out.data_mut().iter_mut().for_each(|v| *v = 0);
        return out;
    }
    for (o, &l) in out.data_mut().iter_mut().zip(labels.labels.iter()) {
        *o = u8::from(l == 1);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volgrid::diag_affine;

    fn mask(dims: [usize; 3], ones: &[[usize; 3]]) -> Mask {
        let mut data = vec![0u8; dims[0] * dims[1] * dims[2]];
        for &[x, y, z] in ones {
            data[x + dims[0] * (y + dims[1] * z)] = 1;
        }
        Mask::new(dims, [1.0; 3], diag_affine([1.0; 3]), data).unwrap()
    }

    #[test]
    fn two_isolated_voxels() {
        let m = mask([3, 3, 3], &[[0, 0, 0], [2, 2, 2]]);
        let (_, sizes) = connected_components(&m, Connectivity::Six);
        assert_eq!(sizes, vec![1, 1]);
    }

    #[test]
    fn diagonal_voxels_depend_on_connectivity() {
        let m = mask([3, 3, 3], &[[0, 0, 0], [1, 1, 1]]);
        let (_, s6) = connected_components(&m, Connectivity::Six);
        assert_eq!(s6.len(), 2);
        let (_, s26) = connected_components(&m, Connectivity::TwentySix);
        assert_eq!(s26.len(), 1);
    }

    #[test]
    fn empty_mask_has_no_components() {
        let m = mask([3, 3, 3], &[]);
        let (labels, sizes) = connected_components(&m, Connectivity::Six);
        assert!(sizes.is_empty());
        assert!(labels.labels.iter().all(|&l| l == 0));
    }

    #[test]
    fn labels_ordered_by_size_then_index() {
        // component A: 2 voxels starting at index 0; component B: 1 voxel later;
        // component C: 3 voxels in a row
        let m = mask(
            [7, 1, 1],
            &[[0, 0, 0], [1, 0, 0], [3, 0, 0], [5, 0, 0], [6, 0, 0]],
        );
        // sizes: {0,1}=2, {3}=1, {5,6}=2 -> order: size2@0 -> 1, size2@5 -> 2, size1@3 -> 3
        let (labels, sizes) = connected_components(&m, Connectivity::Six);
        assert_eq!(sizes, vec![2, 2, 1]);
        assert_eq!(labels.labels[0], 1);
        assert_eq!(labels.labels[5], 2);
        assert_eq!(labels.labels[3], 3);
    }

    /// Independent flood-fill oracle used by the equivalence tests.
    pub fn bfs_oracle(m: &Mask, conn: Connectivity) -> (Vec<u32>, Vec<usize>) {
        let dims = m.dims();
        let n = m.len();
        let mut visited = vec![false; n];
        let mut groups: Vec<Vec<usize>> = Vec::new();
        for s in 0..n {
            if m.data()[s] == 0 || visited[s] {
                continue;
            }
            let mut q = std::collections::VecDeque::new();
            let mut members = Vec::new();
            visited[s] = true;
            q.push_back(s);
            while let Some(i) = q.pop_front() {
                members.push(i);
                let x = (i % dims[0]) as isize;
                let y = ((i / dims[0]) % dims[1]) as isize;
                let z = (i / (dims[0] * dims[1])) as isize;
                for dz in -1isize..=1 {
                    for dy in -1isize..=1 {
                        for dx in -1isize..=1 {
                            if (dx, dy, dz) == (0, 0, 0) {
                                continue;
                            }
                            let manhattan = dx.abs() + dy.abs() + dz.abs();
                            if matches!(conn, Connectivity::Six) && manhattan != 1 {
                                continue;
                            }
                            let (xx, yy, zz) = (x + dx, y + dy, z + dz);
                            if xx < 0
                                || yy < 0
                                || zz < 0
                                || xx >= dims[0] as isize
                                || yy >= dims[1] as isize
                                || zz >= dims[2] as isize
                            {
                                continue;
                            }
                            let j = xx as usize + dims[0] * (yy as usize + dims[1] * zz as usize);
                            if m.data()[j] == 1 && !visited[j] {
                                visited[j] = true;
                                q.push_back(j);
                            }
                        }
                    }
                }
            }
            members.sort_unstable();
            groups.push(members);
        }
        groups.sort_by(|a, b| b.len().cmp(&a.len()).then(a[0].cmp(&b[0])));
        let mut labels = vec![0u32; n];
        let mut sizes = Vec::new();
        for (li, g) in groups.iter().enumerate() {
            for &i in g {
                labels[i] = li as u32 + 1;
            }
            sizes.push(g.len());
        }
        (labels, sizes)
    }

    #[test]
    fn matches_bfs_oracle_on_random_masks() {
        use rand::{RngExt, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        for trial in 0..10_000 {
            let data: Vec<u8> = (0..27).map(|_| u8::from(rng.random::<f32>() < 0.5)).collect();
            let m = Mask::new([3, 3, 3], [1.0; 3], diag_affine([1.0; 3]), data).unwrap();
            for conn in [Connectivity::Six, Connectivity::TwentySix] {
                let (lv, sizes) = connected_components(&m, conn);
                let (olabels, osizes) = bfs_oracle(&m, conn);
                assert_eq!(sizes, osizes, "trial {trial}");
                assert_eq!(lv.labels, olabels, "trial {trial}");
            }
        }
    }

    #[test]
    fn matches_bfs_oracle_exhaustive_3x3x1() {
        for pattern in 0u16..512 {
            let data: Vec<u8> = (0..9).map(|i| ((pattern >> i) & 1) as u8).collect();
            let m = Mask::new([3, 3, 1], [1.0; 3], diag_affine([1.0; 3]), data).unwrap();
            for conn in [Connectivity::Six, Connectivity::TwentySix] {
                let (lv, sizes) = connected_components(&m, conn);
                let (olabels, osizes) = bfs_oracle(&m, conn);
                assert_eq!(sizes, osizes, "pattern {pattern}");
                assert_eq!(lv.labels, olabels, "pattern {pattern}");
            }
        }
    }
}
