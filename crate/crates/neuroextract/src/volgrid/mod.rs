//! Volume data model shared by every pipeline stage.
//!
//! A [`Volume`] is a 3D scalar grid with physical spacing and a 4x4
//! voxel-to-world affine. Data is stored x-fastest: `index = x + nx*(y + ny*z)`.

mod components;
mod nifti;
mod resample;

pub use components::{connected_components, ComponentSizes, Connectivity, LabelVolume};
pub use nifti::{read_nifti, write_nifti, write_nifti_with_descrip};
pub use resample::resample_tricubic;

use crate::error::{Error, Result};

/// 3D scalar grid with geometry. Immutable after construction by convention;
/// all operations return new volumes.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    dims: [usize; 3],
    spacing: [f64; 3],
    affine: [[f64; 4]; 4],
    data: Vec<f32>,
}

/// Binary volume with the same geometry currency as [`Volume`].
#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    dims: [usize; 3],
    spacing: [f64; 3],
    affine: [[f64; 4]; 4],
    data: Vec<u8>,
}

/// A single orthogonal slice extracted from a volume.
#[derive(Debug, Clone, PartialEq)]
pub struct Image2D {
    pub dims: [usize; 2],
    pub data: Vec<f32>,
    /// (axis, slice index) within the source volume.
    pub provenance: (usize, usize),
}

fn det3(m: &[[f64; 4]; 4]) -> f64 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

/// Diagonal affine from spacing with the origin at world zero.
pub fn diag_affine(spacing: [f64; 3]) -> [[f64; 4]; 4] {
    [
        [spacing[0], 0.0, 0.0, 0.0],
        [0.0, spacing[1], 0.0, 0.0],
        [0.0, 0.0, spacing[2], 0.0],
        [0.0, 0.0, 0.0, 1.0],
    ]
}

impl Volume {
    pub fn new(
        dims: [usize; 3],
        spacing: [f64; 3],
        affine: [[f64; 4]; 4],
        data: Vec<f32>,
    ) -> Result<Self> {
        if dims.iter().any(|&d| d < 1) {
            return Err(Error::Dimension(format!("dims must be >= 1, got {dims:?}")));
        }
        if spacing.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::Geometry(format!(
                "spacing must be positive, got {spacing:?}"
            )));
        }
        if data.len() != dims[0] * dims[1] * dims[2] {
            return Err(Error::Shape(format!(
                "data length {} != {}*{}*{}",
                data.len(),
                dims[0],
                dims[1],
                dims[2]
            )));
        }
        if det3(&affine).abs() < 1e-12 {
            return Err(Error::Geometry("affine upper 3x3 is singular".into()));
        }
        Ok(Volume {
            dims,
            spacing,
            affine,
            data,
        })
    }

    /// Volume with a diagonal affine derived from spacing.
    pub fn from_spacing(dims: [usize; 3], spacing: [f64; 3], data: Vec<f32>) -> Result<Self> {
        Volume::new(dims, spacing, diag_affine(spacing), data)
    }

    /// Constant-valued volume.
    pub fn filled(dims: [usize; 3], spacing: [f64; 3], value: f32) -> Result<Self> {
        let n = dims[0] * dims[1] * dims[2];
        Volume::from_spacing(dims, spacing, vec![value; n])
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn affine(&self) -> &[[f64; 4]; 4] {
        &self.affine
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Volume of one voxel in mm^3.
    pub fn voxel_volume(&self) -> f64 {
        self.spacing[0] * self.spacing[1] * self.spacing[2]
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize, z: usize) -> f32 {
        self.data[self.index(x, y, z)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, z: usize, v: f32) {
        let i = self.index(x, y, z);
        self.data[i] = v;
    }

    /// Voxel index to world coordinates.
    pub fn voxel_to_world(&self, v: [f64; 3]) -> [f64; 3] {
        let a = &self.affine;
        [
            a[0][0] * v[0] + a[0][1] * v[1] + a[0][2] * v[2] + a[0][3],
            a[1][0] * v[0] + a[1][1] * v[1] + a[1][2] * v[2] + a[1][3],
            a[2][0] * v[0] + a[2][1] * v[1] + a[2][2] * v[2] + a[2][3],
        ]
    }

    /// Same dims, spacing, and affine (exact comparison).
    pub fn same_geometry(&self, other: &Volume) -> bool {
        self.dims == other.dims && self.spacing == other.spacing && self.affine == other.affine
    }

    /// Replace voxel data, keeping geometry.
    pub fn with_data(&self, data: Vec<f32>) -> Result<Volume> {
        Volume::new(self.dims, self.spacing, self.affine, data)
    }

    pub fn extract_slice(&self, axis: usize, index: usize) -> Result<Image2D> {
        let (w_ax, h_ax) = slice_axes(axis)?;
        if index >= self.dims[axis] {
            return Err(Error::Bounds {
                axis,
                index,
                len: self.dims[axis],
            });
        }
        let (w, h) = (self.dims[w_ax], self.dims[h_ax]);
        let mut data = Vec::with_capacity(w * h);
        let mut coord = [0usize; 3];
        coord[axis] = index;
        for j in 0..h {
            coord[h_ax] = j;
            for i in 0..w {
                coord[w_ax] = i;
                data.push(self.at(coord[0], coord[1], coord[2]));
            }
        }
        Ok(Image2D {
            dims: [w, h],
            data,
            provenance: (axis, index),
        })
    }

    pub fn insert_slice(&self, axis: usize, index: usize, img: &Image2D) -> Result<Volume> {
        let (w_ax, h_ax) = slice_axes(axis)?;
        if index >= self.dims[axis] {
            return Err(Error::Bounds {
                axis,
                index,
                len: self.dims[axis],
            });
        }
        if img.dims != [self.dims[w_ax], self.dims[h_ax]] {
            return Err(Error::Shape(format!(
                "slice dims {:?} do not match volume slice shape [{}, {}]",
                img.dims, self.dims[w_ax], self.dims[h_ax]
            )));
        }
        let mut out = self.clone();
        let mut coord = [0usize; 3];
        coord[axis] = index;
        let (w, h) = (img.dims[0], img.dims[1]);
        for j in 0..h {
            coord[h_ax] = j;
            for i in 0..w {
                coord[w_ax] = i;
                out.set(coord[0], coord[1], coord[2], img.data[i + w * j]);
            }
        }
        Ok(out)
    }
}

/// Remaining axes (in order) once `axis` is sliced away.
fn slice_axes(axis: usize) -> Result<(usize, usize)> {
    match axis {
        0 => Ok((1, 2)),
        1 => Ok((0, 2)),
        2 => Ok((0, 1)),
        _ => Err(Error::Dimension(format!("axis must be 0..3, got {axis}"))),
    }
}

impl Mask {
    pub fn new(
        dims: [usize; 3],
        spacing: [f64; 3],
        affine: [[f64; 4]; 4],
        data: Vec<u8>,
    ) -> Result<Self> {
        if data.iter().any(|&v| v > 1) {
            return Err(Error::Domain("mask voxels must be 0 or 1".into()));
        }
        // reuse Volume validation for geometry
        let v = Volume::new(dims, spacing, affine, vec![0.0; data.len()])?;
        Ok(Mask {
            dims: v.dims,
            spacing: v.spacing,
            affine: v.affine,
            data,
        })
    }

    /// Empty mask with the geometry of `like`.
    pub fn zeros_like(like: &Volume) -> Mask {
        Mask {
            dims: like.dims,
            spacing: like.spacing,
            affine: like.affine,
            data: vec![0; like.len()],
        }
    }

    /// Threshold a volume: voxels strictly above `thr` become 1.
    pub fn from_threshold(v: &Volume, thr: f64) -> Mask {
        Mask {
            dims: v.dims,
            spacing: v.spacing,
            affine: v.affine,
            data: v
                .data
                .iter()
                .map(|&x| u8::from(f64::from(x) > thr))
                .collect(),
        }
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn affine(&self) -> &[[f64; 4]; 4] {
        &self.affine
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize, z: usize) -> u8 {
        self.data[self.index(x, y, z)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, z: usize, v: u8) {
        let i = self.index(x, y, z);
        self.data[i] = v;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v == 1).count()
    }

    /// Physical volume of the foreground in mm^3.
    pub fn physical_volume(&self) -> f64 {
        self.count() as f64 * self.spacing[0] * self.spacing[1] * self.spacing[2]
    }

    pub fn same_geometry(&self, other: &Mask) -> bool {
        self.dims == other.dims && self.spacing == other.spacing && self.affine == other.affine
    }

    pub fn same_geometry_as_volume(&self, other: &Volume) -> bool {
        self.dims == other.dims() && self.spacing == other.spacing() && self.affine == *other.affine()
    }

    /// View as a 0.0/1.0 float volume.
    pub fn to_volume(&self) -> Volume {
        Volume {
            dims: self.dims,
            spacing: self.spacing,
            affine: self.affine,
            data: self.data.iter().map(|&v| f32::from(v)).collect(),
        }
    }
}

impl Image2D {
    pub fn new(dims: [usize; 2], data: Vec<f32>, provenance: (usize, usize)) -> Result<Self> {
        if data.len() != dims[0] * dims[1] {
            return Err(Error::Shape(format!(
                "image data length {} != {}*{}",
                data.len(),
                dims[0],
                dims[1]
            )));
        }
        Ok(Image2D {
            dims,
            data,
            provenance,
        })
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> f32 {
        self.data[x + self.dims[0] * y]
    }
}
