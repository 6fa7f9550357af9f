//! Graph-based segmentation over the 6-neighbor voxel graph with
//! Kruskal-order merging and threshold function tau(C) = k / |C|.

use crate::volgrid::Volume;

/// Full partition of a volume into segments labeled 1..=K, ordered by the
/// smallest member linear index of each segment.
#[derive(Debug, Clone)]
pub struct SegmentLabels {
    pub dims: [usize; 3],
    pub labels: Vec<u32>,
    pub count: usize,
    /// Indexed by label - 1.
    pub sizes: Vec<usize>,
    /// Mean input intensity per segment, indexed by label - 1.
    pub mean_intensity: Vec<f64>,
}

struct DisjointSet {
    parent: Vec<u32>,
    rank: Vec<u8>,
    size: Vec<u32>,
    /// max internal edge weight of the component's MST so far
    int_diff: Vec<f32>,
}

impl DisjointSet {
    fn new(n: usize) -> Self {
        DisjointSet {
            parent: (0..n as u32).collect(),
            rank: vec![0; n],
            size: vec![1; n],
            int_diff: vec![0.0; n],
        }
    }

    fn find(&mut self, mut x: u32) -> u32 {
        while self.parent[x as usize] != x {
            let gp = self.parent[self.parent[x as usize] as usize];
            self.parent[x as usize] = gp;
            x = gp;
        }
        x
    }

    fn union(&mut self, a: u32, b: u32, w: f32) -> u32 {
        let (mut a, mut b) = (a, b);
        if self.rank[a as usize] < self.rank[b as usize] {
            std::mem::swap(&mut a, &mut b);
        }
        self.parent[b as usize] = a;
        if self.rank[a as usize] == self.rank[b as usize] {
            self.rank[a as usize] += 1;
        }
        self.size[a as usize] += self.size[b as usize];
        self.int_diff[a as usize] = self.int_diff[a as usize]
            .max(self.int_diff[b as usize])
            .max(w);
        a
    }
}

/// 6-neighbor edges in lexicographic voxel order (+x, +y, +z per voxel),
/// weighted by absolute intensity difference.
fn build_edges(v: &Volume) -> Vec<(f32, u32, u32)> {
    let [nx, ny, nz] = v.dims();
    let data = v.data();
    let mut edges = Vec::with_capacity(3 * data.len());
    let idx = |x: usize, y: usize, z: usize| (x + nx * (y + ny * z)) as u32;
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let i = idx(x, y, z);
                let vi = data[i as usize];
                if x + 1 < nx {
                    let j = idx(x + 1, y, z);
                    edges.push(((vi - data[j as usize]).abs(), i, j));
                }
                if y + 1 < ny {
                    let j = idx(x, y + 1, z);
                    edges.push(((vi - data[j as usize]).abs(), i, j));
                }
                if z + 1 < nz {
                    let j = idx(x, y, z + 1);
                    edges.push(((vi - data[j as usize]).abs(), i, j));
                }
            }
        }
    }
    edges
}

/// Segment `v`. Edge ties break by lexicographic voxel index (stable sort over
/// the generation order), making the result deterministic. Segments smaller
/// than `min_size` are merged into the neighbor connected by their
/// smallest-weight edge.
pub fn felzenszwalb_segment(v: &Volume, k: f64, min_size: usize) -> SegmentLabels {
    let n = v.len();
    let mut edges = build_edges(v);
    edges.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());

    let mut ds = DisjointSet::new(n);
    let k = k as f32;
    for &(w, a, b) in &edges {
        let ra = ds.find(a);
        let rb = ds.find(b);
        if ra == rb {
            continue;
        }
        let ta = ds.int_diff[ra as usize] + k / ds.size[ra as usize] as f32;
        let tb = ds.int_diff[rb as usize] + k / ds.size[rb as usize] as f32;
        if w <= ta.min(tb) {
            ds.union(ra, rb, w);
        }
    }

    if min_size > 1 {
        for &(w, a, b) in &edges {
            let ra = ds.find(a);
            let rb = ds.find(b);
            if ra != rb
                && ((ds.size[ra as usize] as usize) < min_size
                    || (ds.size[rb as usize] as usize) < min_size)
            {
                ds.union(ra, rb, w);
            }
        }
    }

    relabel(v, &mut ds)
}

fn relabel(v: &Volume, ds: &mut DisjointSet) -> SegmentLabels {
    let n = v.len();
    let mut label_of_root: Vec<u32> = vec![0; n];
    let mut labels = vec![0u32; n];
    let mut sizes = Vec::new();
    let mut sums = Vec::new();
    let mut count = 0u32;
    for i in 0..n {
        let r = ds.find(i as u32) as usize;
        if label_of_root[r] == 0 {
            count += 1;
            label_of_root[r] = count;
            sizes.push(0usize);
            sums.push(0f64);
        }
        let l = label_of_root[r];
        labels[i] = l;
        sizes[(l - 1) as usize] += 1;
        sums[(l - 1) as usize] += f64::from(v.data()[i]);
    }
    let mean_intensity = sums
        .iter()
        .zip(&sizes)
        .map(|(s, &n)| s / n as f64)
        .collect();
    SegmentLabels {
        dims: v.dims(),
        labels,
        count: count as usize,
        sizes,
        mean_intensity,
    }
}
