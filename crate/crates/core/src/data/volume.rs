use voxcore::Tensor;

use crate::error::{Error, Result};

/// A 3D scalar (1 channel) or colour (3 channel) voxel grid.
///
/// Voxels are channel-major, then `D`, `H`, `W` with `W` fastest. The affine
/// maps voxel indices `(d, h, w, 1)` to world coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct Volume {
    extents: [usize; 3],
    channels: usize,
    voxels: Vec<f32>,
    spacing: [f32; 3],
    affine: [[f32; 4]; 4],
    intensity_range: Option<[f32; 2]>,
}

fn diag_affine(spacing: [f32; 3]) -> [[f32; 4]; 4] {
    let mut a = [[0.0; 4]; 4];
    for i in 0..3 {
        a[i][i] = spacing[i];
    }
    a[3][3] = 1.0;
    a
}

impl Volume {
    pub fn new(extents: [usize; 3], channels: usize, voxels: Vec<f32>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::Data(format!(
                "unsupported channel count {channels} (expected 1 or 3)"
            )));
        }
        if extents.contains(&0) {
            return Err(Error::Data(format!("empty extents {extents:?}")));
        }
        let n = channels * extents.iter().product::<usize>();
        if voxels.len() != n {
            return Err(Error::Data(format!(
                "{} voxels supplied for {channels}x{extents:?} ({n} expected)",
                voxels.len()
            )));
        }
        Ok(Volume {
            extents,
            channels,
            voxels,
            spacing: [1.0; 3],
            affine: diag_affine([1.0; 3]),
            intensity_range: None,
        })
    }

    pub fn filled(extents: [usize; 3], channels: usize, value: f32) -> Result<Self> {
        let n = channels * extents.iter().product::<usize>();
        Volume::new(extents, channels, vec![value; n])
    }

    pub fn from_fn(extents: [usize; 3], mut f: impl FnMut(usize, usize, usize) -> f32) -> Self {
        let mut voxels = Vec::with_capacity(extents.iter().product());
        for d in 0..extents[0] {
            for h in 0..extents[1] {
                for w in 0..extents[2] {
                    voxels.push(f(d, h, w));
                }
            }
        }
        Volume::new(extents, 1, voxels).expect("from_fn volume")
    }

    /// Spacing also resets the affine to the matching scaled identity.
    pub fn with_spacing(mut self, spacing: [f32; 3]) -> Result<Self> {
        if spacing.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(Error::Data(format!("spacing must be positive, got {spacing:?}")));
        }
        self.spacing = spacing;
        self.affine = diag_affine(spacing);
        Ok(self)
    }

    pub fn with_affine(mut self, affine: [[f32; 4]; 4]) -> Self {
        self.affine = affine;
        self
    }

    pub fn with_intensity_range(mut self, range: Option<[f32; 2]>) -> Self {
        self.intensity_range = range;
        self
    }

    pub(crate) fn set_geometry(&mut self, spacing: [f32; 3], affine: [[f32; 4]; 4]) {
        self.spacing = spacing;
        self.affine = affine;
    }

    pub fn extents(&self) -> [usize; 3] {
        self.extents
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn voxels(&self) -> &[f32] {
        &self.voxels
    }

    pub fn voxels_mut(&mut self) -> &mut [f32] {
        &mut self.voxels
    }

    pub fn spacing(&self) -> [f32; 3] {
        self.spacing
    }

    pub fn affine(&self) -> [[f32; 4]; 4] {
        self.affine
    }

    pub fn intensity_range(&self) -> Option<[f32; 2]> {
        self.intensity_range
    }

    pub fn spatial_len(&self) -> usize {
        self.extents.iter().product()
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let n = self.spatial_len();
        &self.voxels[c * n..(c + 1) * n]
    }

    pub fn index(&self, d: usize, h: usize, w: usize) -> usize {
        (d * self.extents[1] + h) * self.extents[2] + w
    }

    pub fn mean(&self) -> f64 {
        self.voxels.iter().map(|&v| v as f64).sum::<f64>() / self.voxels.len() as f64
    }

    pub fn min_max(&self) -> (f32, f32) {
        self.voxels
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    pub fn same_grid(&self, other: &Volume) -> bool {
        self.extents == other.extents && self.channels == other.channels
    }

    /// Copy with the voxel values replaced; geometry is kept.
    pub fn with_voxels(&self, voxels: Vec<f32>) -> Result<Self> {
        let mut v = Volume::new(self.extents, self.channels, voxels)?;
        v.spacing = self.spacing;
        v.affine = self.affine;
        v.intensity_range = self.intensity_range;
        Ok(v)
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Self {
        let mut v = self.clone();
        v.voxels.iter_mut().for_each(|x| *x = f(*x));
        v
    }

    /// `[C, D, H, W]` tensor view of the voxels.
    pub fn to_tensor(&self) -> Tensor<f32> {
        let [d, h, w] = self.extents;
        Tensor::new(vec![self.channels, d, h, w], self.voxels.clone()).expect("volume tensor")
    }

    /// Inverse of [`Volume::to_tensor`]; accepts `[C, D, H, W]` or `[1, C, D, H, W]`
    /// and copies geometry from `like`.
    pub fn from_tensor(t: &Tensor<f32>, like: &Volume) -> Result<Self> {
        let s = t.shape();
        let s = match s.len() {
            5 if s[0] == 1 => &s[1..],
            4 => s,
            _ => return Err(Error::Data(format!("cannot view tensor {s:?} as a volume"))),
        };
        let mut v = Volume::new([s[1], s[2], s[3]], s[0], t.data().to_vec())?;
        v.spacing = like.spacing;
        v.affine = like.affine;
        Ok(v)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    /// `[0, 1] -> [-1, 1]`
    ToModel,
    /// `[-1, 1] -> [0, 1]`
    ToPhysical,
}

const RANGE_TOL: f32 = 1e-6;

/// Affine bridge between the physical `[0, 1]` range and the generators'
/// tanh range. Values within 1e-6 outside the source range are clamped;
/// anything further is a range error.
pub fn normalize(v: &Volume, direction: Direction) -> Result<Volume> {
    let (lo, hi) = match direction {
        Direction::ToModel => (0.0, 1.0),
        Direction::ToPhysical => (-1.0, 1.0),
    };
    if let Some(bad) = v
        .voxels()
        .iter()
        .find(|&&x| !(x >= lo - RANGE_TOL && x <= hi + RANGE_TOL))
    {
        return Err(Error::Range(format!("{bad} outside [{lo}, {hi}] for {direction:?}")));
    }
    Ok(match direction {
        Direction::ToModel => v.map(|x| 2.0 * x.clamp(0.0, 1.0) - 1.0),
        Direction::ToPhysical => v.map(|x| (x.clamp(-1.0, 1.0) + 1.0) * 0.5),
    })
}

/// Per-volume min-max rescale to `[0, 1]`; a constant volume maps to zeros.
pub fn minmax_unit(v: &Volume) -> Volume {
    let (lo, hi) = v.min_max();
    let span = hi - lo;
    if !(span > 0.0) {
        return v.map(|_| 0.0);
    }
    v.map(|x| ((x - lo) / span).clamp(0.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalize_endpoints() {
        let v = Volume::new([1, 1, 3], 1, vec![0.0, 0.5, 1.0]).unwrap();
        let m = normalize(&v, Direction::ToModel).unwrap();
        assert_eq!(m.voxels(), &[-1.0, 0.0, 1.0]);
        let back = normalize(&m, Direction::ToPhysical).unwrap();
        assert_eq!(back.voxels(), v.voxels());
    }

    #[test]
    fn normalize_rejects_out_of_range() {
        let v = Volume::new([1, 1, 2], 1, vec![0.0, 1.1]).unwrap();
        assert!(matches!(normalize(&v, Direction::ToModel), Err(Error::Range(_))));
        let tiny = Volume::new([1, 1, 2], 1, vec![-5e-7, 1.0]).unwrap();
        assert_eq!(normalize(&tiny, Direction::ToModel).unwrap().voxels()[0], -1.0);
    }

    #[test]
    fn normalize_round_trip_three_channel() {
        let n = 3 * 2 * 2 * 2;
        let vox: Vec<f32> = (0..n).map(|i| i as f32 / (n - 1) as f32).collect();
        let v = Volume::new([2, 2, 2], 3, vox).unwrap();
        let m = normalize(&v, Direction::ToModel).unwrap();
        for c in 0..3 {
            for (a, b) in m.channel(c).iter().zip(v.channel(c)) {
                assert_eq!(*a, 2.0 * b - 1.0);
            }
        }
        let back = normalize(&m, Direction::ToPhysical).unwrap();
        for (a, b) in back.voxels().iter().zip(v.voxels()) {
            assert!((a - b).abs() <= 1e-7);
        }
    }

    #[test]
    fn rejects_bad_channel_counts() {
        assert!(Volume::new([2, 2, 2], 2, vec![0.0; 16]).is_err());
        assert!(Volume::new([2, 2, 2], 1, vec![0.0; 7]).is_err());
    }

    #[test]
    fn minmax_handles_constant() {
        let v = Volume::filled([2, 2, 2], 1, 3.0).unwrap();
        assert!(minmax_unit(&v).voxels().iter().all(|&x| x == 0.0));
        let r = Volume::new([1, 1, 3], 1, vec![2.0, 4.0, 6.0]).unwrap();
        assert_eq!(minmax_unit(&r).voxels(), &[0.0, 0.5, 1.0]);
    }
}
