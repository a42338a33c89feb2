//! Aligning instance and segment activations into one standardized space.
//!
//! Statistics come from instance rows only; segments are pushed through the
//! same affine map so both live in the normalized instance space.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const STD_FLOOR: f64 = 1e-8;
pub const CENTROID_MIN_NORM: f64 = 1e-12;

/// Per-dimension mean and population standard deviation of instance vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: Array1<f64>,
    pub std: Array1<f64>,
}

impl Normalizer {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    fn check(&self, matrix: &ArrayView2<f64>) -> Result<()> {
        if matrix.ncols() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), actual: matrix.ncols() });
        }
        Ok(())
    }

    pub fn apply(&self, matrix: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check(&matrix)?;
        Ok((&matrix - &self.mean) / &self.std)
    }

    /// Map aligned rows back to the raw activation space.
    pub fn invert(&self, matrix: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check(&matrix)?;
        Ok(&matrix * &self.std + &self.mean)
    }
}

pub fn fit_normalizer(instance_matrix: ArrayView2<f64>) -> Result<Normalizer> {
    let n = instance_matrix.nrows();
    if n < 2 {
        return Err(Error::param("instance_matrix", format!("need at least 2 rows, got {n}")));
    }
    let mean = instance_matrix.mean_axis(Axis(0)).expect("non-empty");
    let std = instance_matrix.std_axis(Axis(0), 0.0).mapv(|s| s.max(STD_FLOOR));
    Ok(Normalizer { mean, std })
}

pub fn normalize_instances(matrix: ArrayView2<f64>, norm: &Normalizer) -> Result<Array2<f64>> {
    norm.apply(matrix)
}

/// Segments use the instance statistics, never their own.
pub fn project_segments(segment_matrix: ArrayView2<f64>, norm: &Normalizer) -> Result<Array2<f64>> {
    norm.apply(segment_matrix)
}

/// Centroid of the selected aligned segment rows.
pub fn concept_vector(rows: &[usize], aligned_segments: ArrayView2<f64>) -> Result<Array1<f64>> {
    if rows.is_empty() {
        return Err(Error::Empty { what: "segment_ids" });
    }
    let mut sum = Array1::<f64>::zeros(aligned_segments.ncols());
    for &r in rows {
        if r >= aligned_segments.nrows() {
            return Err(Error::NotFound { kind: "segment row", id: r.to_string() });
        }
        sum += &aligned_segments.row(r);
    }
    let centroid = sum / rows.len() as f64;
    if centroid.dot(&centroid).sqrt() <= CENTROID_MIN_NORM {
        return Err(Error::ZeroNorm { what: "concept centroid".into() });
    }
    Ok(centroid)
}
