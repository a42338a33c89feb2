//! Confusion accounting, pairwise case labels, 2D projection and nearest neighbors.

use std::cmp::Ordering;

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::bundle::{ClassPair, ConfusionCase};
use crate::error::{Error, Result};
use crate::head::{brier_score, Prediction};

pub const BRIER_BINS: usize = 20;
pub const DEFAULT_TOOLTIP_K: usize = 5;
pub const DEFAULT_SEGMENT_K: usize = 10;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionSummary {
    /// `matrix[true][predicted]`.
    pub matrix: Vec<Vec<usize>>,
    /// Misclassified instances per true class.
    pub misclassified: Vec<usize>,
    /// Unknown-unknowns per true class.
    pub unknown_unknowns: Vec<usize>,
    /// `uu_cells[true][predicted]`.
    pub uu_cells: Vec<Vec<usize>>,
    /// Brier counts in equal-width bins over [0, 1]; 1.0 lands in the last bin.
    pub brier_histogram: Vec<usize>,
    pub total: usize,
    pub correct: usize,
}

impl ConfusionSummary {
    pub fn accuracy(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.correct as f64 / self.total as f64
        }
    }
}

pub fn brier_bin(brier: f64) -> usize {
    ((brier * BRIER_BINS as f64).floor().max(0.0) as usize).min(BRIER_BINS - 1)
}

fn brier_of(p: &Prediction, label: usize) -> f64 {
    p.brier.unwrap_or_else(|| brier_score(p.probs.view(), label))
}

/// An unknown-unknown is a misclassification with brier at or above `uu_threshold`.
pub fn confusion_summary(
    predictions: &[Prediction],
    labels: &[usize],
    num_classes: usize,
    uu_threshold: f64,
) -> Result<ConfusionSummary> {
    if predictions.len() != labels.len() {
        return Err(Error::DimensionMismatch { expected: labels.len(), actual: predictions.len() });
    }
    let k = num_classes;
    let mut s = ConfusionSummary {
        matrix: vec![vec![0; k]; k],
        misclassified: vec![0; k],
        unknown_unknowns: vec![0; k],
        uu_cells: vec![vec![0; k]; k],
        brier_histogram: vec![0; BRIER_BINS],
        total: labels.len(),
        correct: 0,
    };
    for (p, &t) in predictions.iter().zip(labels) {
        if t >= k || p.predicted >= k {
            return Err(Error::param("labels", format!("class index out of range for {k} classes")));
        }
        let b = brier_of(p, t);
        s.matrix[t][p.predicted] += 1;
        s.brier_histogram[brier_bin(b)] += 1;
        if p.predicted == t {
            s.correct += 1;
        } else {
            s.misclassified[t] += 1;
            if b >= uu_threshold {
                s.unknown_unknowns[t] += 1;
                s.uu_cells[t][p.predicted] += 1;
            }
        }
    }
    Ok(s)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairMember {
    /// Index into the caller's prediction list.
    pub index: usize,
    pub label: usize,
    pub predicted: usize,
    pub case: ConfusionCase,
    pub brier: f64,
}

/// Members whose true label is in `pair`, with their confusion case.
///
/// A prediction outside the pair counts toward whichever pair class has the
/// higher probability; an exact tie counts as negative.
pub fn pair_subset(predictions: &[Prediction], labels: &[usize], pair: ClassPair) -> Result<Vec<PairMember>> {
    if predictions.len() != labels.len() {
        return Err(Error::DimensionMismatch { expected: labels.len(), actual: predictions.len() });
    }
    Ok(predictions
        .iter()
        .zip(labels)
        .enumerate()
        .filter(|(_, (_, &t))| pair.contains(t))
        .map(|(index, (p, &label))| {
            let predicted_positive = if p.predicted == pair.positive {
                true
            } else if p.predicted == pair.negative {
                false
            } else {
                p.probs[pair.positive] > p.probs[pair.negative]
            };
            PairMember {
                index,
                label,
                predicted: p.predicted,
                case: ConfusionCase::from_outcome(label == pair.positive, predicted_positive),
                brier: brier_of(p, label),
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProjectionMethod {
    #[default]
    Pca,
    Precomputed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pca2d {
    pub coords: Array2<f64>,
    /// 2×D principal directions.
    pub components: Array2<f64>,
    /// Variance along each direction, descending.
    pub variances: [f64; 2],
    pub total_variance: f64,
}

/// Top-2 principal coordinates from an eigensolve of the D×D covariance.
///
/// Each direction is signed so its first nonzero entry is positive.
pub fn pca_2d(matrix: ArrayView2<f64>) -> Result<Pca2d> {
    let (r, d) = matrix.dim();
    if r < 2 {
        return Err(Error::param("matrix", format!("pca needs at least 2 rows, got {r}")));
    }
    let mean = matrix.mean_axis(Axis(0)).expect("non-empty");
    let centered = &matrix - &mean;
    let cov = centered.t().dot(&centered) / r as f64;
    let eig = SymmetricEigen::new(DMatrix::from_fn(d, d, |i, j| cov[[i, j]]));
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap_or(Ordering::Equal).then(a.cmp(&b))
    });
    let mut components = Array2::zeros((2, d));
    let mut variances = [0.0; 2];
    for (slot, &idx) in order.iter().take(2).enumerate() {
        let col = eig.eigenvectors.column(idx);
        let sign = col.iter().find(|v| v.abs() > 1e-12).map_or(1.0, |v| v.signum());
        for j in 0..d {
            components[[slot, j]] = sign * col[j];
        }
        variances[slot] = eig.eigenvalues[idx].max(0.0);
    }
    let total_variance = (0..d).map(|i| cov[[i, i]]).sum();
    let coords = centered.dot(&components.t());
    Ok(Pca2d { coords, components, variances, total_variance })
}

/// 2D coordinates for each row, by PCA or from per-row precomputed coordinates.
pub fn project_2d(
    matrix: ArrayView2<f64>,
    method: ProjectionMethod,
    precomputed: Option<&[Option<[f64; 2]>]>,
) -> Result<Array2<f64>> {
    match method {
        ProjectionMethod::Pca => Ok(pca_2d(matrix)?.coords),
        ProjectionMethod::Precomputed => {
            let coords = precomputed.ok_or_else(|| Error::param("method", "precomputed coordinates absent"))?;
            if coords.len() != matrix.nrows() {
                return Err(Error::DimensionMismatch { expected: matrix.nrows(), actual: coords.len() });
            }
            let mut out = Array2::zeros((coords.len(), 2));
            for (i, c) in coords.iter().enumerate() {
                let [x, y] = c.ok_or_else(|| Error::entity(format!("row {i}"), "coords2d absent"))?;
                out[[i, 0]] = x;
                out[[i, 1]] = y;
            }
            Ok(out)
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub enum KnnQuery<'a> {
    /// A row of the searched matrix; it is excluded from its own result.
    Member(usize),
    Vector(ArrayView1<'a, f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub index: usize,
    pub id: String,
    pub distance: f64,
}

/// The `k` nearest rows by Euclidean distance, ties by id.
pub fn knn<S: AsRef<str>>(query: KnnQuery<'_>, matrix: ArrayView2<f64>, ids: &[S], k: usize) -> Result<Vec<Neighbor>> {
    if ids.len() != matrix.nrows() {
        return Err(Error::DimensionMismatch { expected: matrix.nrows(), actual: ids.len() });
    }
    if k == 0 {
        return Err(Error::param("k", "must be at least 1"));
    }
    let (q, skip) = match query {
        KnnQuery::Member(r) => {
            if r >= matrix.nrows() {
                return Err(Error::NotFound { kind: "row", id: r.to_string() });
            }
            (matrix.row(r), Some(r))
        }
        KnnQuery::Vector(v) => {
            if v.len() != matrix.ncols() {
                return Err(Error::DimensionMismatch { expected: matrix.ncols(), actual: v.len() });
            }
            (v, None)
        }
    };
    let population = matrix.nrows() - usize::from(skip.is_some());
    if k > population {
        return Err(Error::param("k", format!("{k} exceeds population of {population}")));
    }
    let mut all: Vec<(usize, f64)> = matrix
        .rows()
        .into_iter()
        .enumerate()
        .filter(|(i, _)| Some(*i) != skip)
        .map(|(i, row)| (i, row.iter().zip(q.iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()))
        .collect();
    all.sort_by(|a, b| {
        a.1.partial_cmp(&b.1).unwrap_or(Ordering::Equal).then_with(|| ids[a.0].as_ref().cmp(ids[b.0].as_ref()))
    });
    Ok(all
        .into_iter()
        .take(k)
        .map(|(index, distance)| Neighbor { index, id: ids[index].as_ref().to_string(), distance })
        .collect())
}
