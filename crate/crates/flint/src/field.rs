//! Grid field types: scalar fields, flow fields, fusion masks, and
//! normalization.
//!
//! Spatial shapes are listed slowest-varying first: `(H, W)` in 2D and
//! `(D, H, W)` in 3D. Flow data is channels-first with one channel per
//! spatial axis, in axis order (channel 0 displaces along the slowest axis).

use crate::error::{FlintError, Result};
use crate::tensor::{Real, Tensor};

/// Dense real-valued grid array for one member at one timestep.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarField {
    pub data: Vec<f32>,
    /// Spatial shape, slowest-varying first.
    pub shape: Vec<usize>,
    pub member_id: String,
    pub time_index: usize,
    /// `(lo, hi)` recorded by [`normalize_field`] so denormalization is exact.
    pub norm_range: Option<(f32, f32)>,
}

impl ScalarField {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), data.len());
        ScalarField {
            data,
            shape,
            member_id: String::new(),
            time_index: 0,
            norm_range: None,
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        ScalarField::new(shape.to_vec(), vec![0.0; shape.iter().product()])
    }

    pub fn dims(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Lift to a `[1, D, H, W]` activation tensor.
    pub fn to_tensor<F: Real>(&self) -> Tensor<F> {
        let sp = spatial4(&self.shape);
        Tensor::from_vec(
            &[1, sp[0], sp[1], sp[2]],
            self.data.iter().map(|&v| F::of(v as f64)).collect(),
        )
    }

    pub fn from_tensor<F: Real>(t: &Tensor<F>, shape: &[usize]) -> Self {
        assert_eq!(t.len(), shape.iter().product::<usize>());
        ScalarField::new(shape.to_vec(), t.iter().map(|&v| v.as_f64() as f32).collect())
    }
}

/// Dense flow field; `channels == dims` with a leading channel axis.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowField {
    /// Channels-first data of shape `(dims, ...spatial)`.
    pub data: Vec<f32>,
    /// Spatial shape, slowest-varying first.
    pub shape: Vec<usize>,
    pub member_id: String,
    pub time_index: usize,
}

impl FlowField {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Self {
        let dims = shape.len();
        assert_eq!(dims * shape.iter().product::<usize>(), data.len());
        FlowField {
            data,
            shape,
            member_id: String::new(),
            time_index: 0,
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let dims = shape.len();
        FlowField::new(
            shape.to_vec(),
            vec![0.0; dims * shape.iter().product::<usize>()],
        )
    }

    pub fn dims(&self) -> usize {
        self.shape.len()
    }

    /// Number of grid cells (not data values).
    pub fn cells(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Channel `c` as a slice.
    pub fn channel(&self, c: usize) -> &[f32] {
        let n = self.cells();
        &self.data[c * n..(c + 1) * n]
    }

    /// Lift to a `[dims, D, H, W]` activation tensor.
    pub fn to_tensor<F: Real>(&self) -> Tensor<F> {
        let sp = spatial4(&self.shape);
        Tensor::from_vec(
            &[self.dims(), sp[0], sp[1], sp[2]],
            self.data.iter().map(|&v| F::of(v as f64)).collect(),
        )
    }

    pub fn from_tensor<F: Real>(t: &Tensor<F>, shape: &[usize]) -> Self {
        let dims = shape.len();
        assert_eq!(t.len(), dims * shape.iter().product::<usize>());
        FlowField::new(shape.to_vec(), t.iter().map(|&v| v.as_f64() as f32).collect())
    }
}

/// Per-cell blend weight in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct FusionMask {
    pub data: Vec<f32>,
    pub shape: Vec<usize>,
}

impl FusionMask {
    /// Validates the `[0, 1]` range invariant.
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        assert_eq!(shape.iter().product::<usize>(), data.len());
        if data.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(FlintError::Contract(
                "fusion mask values must lie in [0, 1]".into(),
            ));
        }
        Ok(FusionMask { data, shape })
    }
}

/// Pad a 2D spatial shape to the internal `[D, H, W]` convention.
pub fn spatial4(shape: &[usize]) -> [usize; 3] {
    match shape.len() {
        2 => [1, shape[0], shape[1]],
        3 => [shape[0], shape[1], shape[2]],
        n => panic!("fields must be 2D or 3D, got {}D", n),
    }
}

/// Affine map to `[0, 1]`: `(x - lo) / (hi - lo)`, clamped. The range is
/// recorded on the output so denormalization is exact for in-range values.
pub fn normalize_field(field: &ScalarField, lo: f32, hi: f32) -> Result<ScalarField> {
    if hi <= lo {
        return Err(FlintError::InvalidRange(format!(
            "normalization requires hi > lo, got lo={lo} hi={hi}"
        )));
    }
    if !field.all_finite() {
        return Err(FlintError::Data(format!(
            "non-finite values in field (member {}, t {})",
            field.member_id, field.time_index
        )));
    }
    let span = hi - lo;
    let mut out = field.clone();
    for v in &mut out.data {
        *v = ((*v - lo) / span).clamp(0.0, 1.0);
    }
    out.norm_range = Some((lo, hi));
    Ok(out)
}

/// Inverse of [`normalize_field`] for in-range values.
pub fn denormalize_field(field: &ScalarField) -> Result<ScalarField> {
    let (lo, hi) = field.norm_range.ok_or_else(|| {
        FlintError::Contract("field carries no normalization range".into())
    })?;
    let mut out = field.clone();
    for v in &mut out.data {
        *v = lo + *v * (hi - lo);
    }
    out.norm_range = None;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(vals: &[f32]) -> ScalarField {
        ScalarField::new(vec![1, vals.len()], vals.to_vec())
    }

    #[test]
    fn normalize_bounds_map_to_unit_interval() {
        let f = sample(&[2.0, 2.0, 2.0]);
        let n = normalize_field(&f, 2.0, 5.0).unwrap();
        assert!(n.data.iter().all(|&v| v == 0.0), "constant at lo -> zeros");
        let f = sample(&[5.0, 5.0]);
        let n = normalize_field(&f, 2.0, 5.0).unwrap();
        assert!(n.data.iter().all(|&v| v == 1.0), "constant at hi -> ones");
    }

    #[test]
    fn normalize_affine_map() {
        let f = sample(&[0.5]);
        let n = normalize_field(&f, 0.0, 2.0).unwrap();
        assert_eq!(n.data[0], 0.25);
    }

    #[test]
    fn normalize_rejects_bad_range_and_nan() {
        let f = sample(&[1.0]);
        assert!(matches!(
            normalize_field(&f, 3.0, 3.0),
            Err(FlintError::InvalidRange(_))
        ));
        let g = sample(&[f32::NAN]);
        assert!(matches!(
            normalize_field(&g, 0.0, 1.0),
            Err(FlintError::Data(_))
        ));
    }

    #[test]
    fn round_trip_within_tolerance() {
        let vals: Vec<f32> = (0..100).map(|i| 0.3 + 0.004 * i as f32).collect();
        let f = sample(&vals);
        let n = normalize_field(&f, 0.1, 0.9).unwrap();
        let d = denormalize_field(&n).unwrap();
        for (a, b) in d.data.iter().zip(&vals) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn mask_range_enforced() {
        assert!(FusionMask::new(vec![1, 2], vec![0.0, 1.0]).is_ok());
        assert!(FusionMask::new(vec![1, 2], vec![-0.1, 0.5]).is_err());
    }

    #[test]
    fn tensor_round_trip_2d_and_3d() {
        let f = ScalarField::new(vec![2, 3], (0..6).map(|i| i as f32).collect());
        let t: Tensor<f64> = f.to_tensor();
        assert_eq!(t.shape(), &[1, 1, 2, 3]);
        let back = ScalarField::from_tensor(&t, &[2, 3]);
        assert_eq!(back.data, f.data);

        let fl = FlowField::zeros(&[2, 3, 4]);
        let t: Tensor<f32> = fl.to_tensor();
        assert_eq!(t.shape(), &[3, 2, 3, 4]);
    }
}
