//! Orthogonal-projection debiasing, remaining-bias curves and before/after evaluation.
//!
//! Debiasing always works on a copy of the aligned instance matrix. Concept
//! vectors stay fixed; only the selected train rows lose their component
//! along the concept direction.

use std::io::Write;

use ndarray::{Array1, Array2, ArrayView1};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::analysis::{missing_concept, Analysis};
use crate::association::AssociationTable;
use crate::bundle::{ClassPair, Concept, Split};
use crate::error::{Error, Result};
use crate::head::{accuracy, HeadModel};

pub const DEFAULT_GRID: [usize; 6] = [0, 25, 50, 100, 200, 400];
const MIN_CONCEPT_NORM: f64 = 1e-12;
const MIN_DISPARITY: f64 = 1e-9;
/// Mixed into the session seed for random-control draws.
const CONTROL_STREAM: u64 = 0x9E37_79B9_7F4A_7C15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RbrMode {
    /// `after / before`: 1 before any debiasing, 0 at full mitigation.
    #[default]
    Ratio,
    /// `1 − (after − before) / before`, kept for compatibility.
    Printed,
}

/// Which instances receive the projection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum Control {
    /// Top-n candidates in combined-ranking order.
    Concept,
    /// n train instances of the pair drawn uniformly without replacement.
    Random { seed: u64 },
}

pub fn debias_vector(v: ArrayView1<f64>, c: ArrayView1<f64>) -> Result<Array1<f64>> {
    if v.len() != c.len() {
        return Err(Error::DimensionMismatch { expected: c.len(), actual: v.len() });
    }
    let cc = c.dot(&c);
    if cc.sqrt() <= MIN_CONCEPT_NORM {
        return Err(Error::ZeroNorm { what: "concept vector".into() });
    }
    let scale = v.dot(&c) / cc;
    Ok(&v - &(&c * scale))
}

/// Project `rows` of `matrix` onto the orthogonal complement of `c`, in place.
pub fn debias_rows(matrix: &mut Array2<f64>, rows: &[usize], c: ArrayView1<f64>) -> Result<()> {
    for &r in rows {
        let out = debias_vector(matrix.row(r), c)?;
        matrix.row_mut(r).assign(&out);
    }
    Ok(())
}

/// Table rows in combined-ranking order for concept column `c`.
///
/// With `top_only`, rows whose top concept is not `c` are dropped.
pub fn select_candidates(table: &AssociationTable, c: usize, top_only: bool) -> Vec<usize> {
    if table.is_empty() {
        return Vec::new();
    }
    table.comb_order(c).into_iter().filter(|&r| !top_only || table.top_concept[r] == c).collect()
}

pub fn remaining_bias_ratio(before: f64, after: f64, mode: RbrMode) -> Result<f64> {
    if before.abs() <= MIN_DISPARITY {
        return Err(Error::param("disparity_before", format!("{before} is too close to zero")));
    }
    Ok(match mode {
        RbrMode::Ratio => after / before,
        RbrMode::Printed => 1.0 - (after - before) / before,
    })
}

/// `{0, 25, 50, 100, 200, 400} ∩ [0, n_candidates]`, plus `n_candidates` itself.
pub fn default_grid(n_candidates: usize) -> Vec<usize> {
    let mut g: Vec<usize> = DEFAULT_GRID.iter().copied().filter(|&n| n <= n_candidates).collect();
    if g.last() != Some(&n_candidates) {
        g.push(n_candidates);
    }
    g
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub n: usize,
    pub rbr: f64,
    pub disparity_after: f64,
    pub acc_after: Option<f64>,
    pub subgroup_after: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DebiasCurve {
    pub concept_id: String,
    pub pair: ClassPair,
    pub n_candidates: usize,
    pub disparity_before: f64,
    pub acc_before: Option<f64>,
    pub subgroup_before: Option<f64>,
    pub points: Vec<CurvePoint>,
}

impl DebiasCurve {
    pub fn grid(&self) -> Vec<usize> {
        self.points.iter().map(|p| p.n).collect()
    }

    pub fn rbr(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.rbr).collect()
    }

    pub fn point(&self, n: usize) -> Option<&CurvePoint> {
        self.points.iter().find(|p| p.n == n)
    }

    /// CSV with columns `n, rbr, disparity_after, acc_after, subgroup_after`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["n", "rbr", "disparity_after", "acc_after", "subgroup_after"])?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for p in &self.points {
            w.write_record([
                p.n.to_string(),
                p.rbr.to_string(),
                p.disparity_after.to_string(),
                opt(p.acc_after),
                opt(p.subgroup_after),
            ])?;
        }
        w.flush().map_err(|e| Error::io("csv output", e))?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        Ok(String::from_utf8(buf).expect("csv output is utf-8"))
    }
}

/// Grid point minimizing `(1 − t)·n/N_max + t·|rbr|`; ties go to the smaller n.
pub fn recommend_n(curve: &DebiasCurve, t: f64) -> Result<usize> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::param("t", format!("{t} outside [0, 1]")));
    }
    let first = curve.points.first().ok_or(Error::Empty { what: "curve" })?;
    let n_max = curve.points.iter().map(|p| p.n).max().unwrap_or(0);
    let cost = |p: &CurvePoint| {
        let frac = if n_max == 0 { 0.0 } else { p.n as f64 / n_max as f64 };
        (1.0 - t) * frac + t * p.rbr.abs()
    };
    let mut best = first;
    let mut best_cost = cost(first);
    for p in &curve.points[1..] {
        let c = cost(p);
        if c < best_cost || (c == best_cost && p.n < best.n) {
            best = p;
            best_cost = c;
        }
    }
    Ok(best.n)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DebiasEvaluation {
    pub concept_id: String,
    pub n: usize,
    pub control: Control,
    pub acc_before: f64,
    pub acc_after: f64,
    pub subgroup_before: f64,
    pub subgroup_after: f64,
    pub disparity_before: f64,
    pub disparity_after: f64,
    pub rbr: f64,
    pub pct_bias_mitigated: f64,
}

/// Shared state for one concept and pair: the train population, its
/// association table, candidates and the evaluation subgroup.
struct Context<'a> {
    analysis: &'a Analysis,
    concepts: &'a [Concept],
    concept: usize,
    pair: ClassPair,
    train_rows: Vec<usize>,
    disparity_before: f64,
    candidates: Vec<usize>,
}

impl<'a> Context<'a> {
    fn new(analysis: &'a Analysis, concepts: &'a [Concept], concept_id: &str, pair: ClassPair) -> Result<Self> {
        let concept = concepts.iter().position(|c| c.id == concept_id).ok_or_else(|| missing_concept(concept_id))?;
        let train_rows = analysis.pair_rows(Split::Train, pair);
        if train_rows.is_empty() {
            return Err(Error::Empty { what: "train split of the pair" });
        }
        let table = analysis.association(&train_rows, concepts)?;
        let disparity_before = analysis.disparity(&table, concept, &train_rows, pair)?;
        let candidates = select_candidates(&table, concept, analysis.config.top_only_candidates)
            .into_iter()
            .map(|r| train_rows[r])
            .collect();
        Ok(Self { analysis, concepts, concept, pair, train_rows, disparity_before, candidates })
    }

    fn vector(&self) -> ArrayView1<'_, f64> {
        self.concepts[self.concept].vector.view()
    }

    fn debiased(&self, rows: &[usize]) -> Result<Array2<f64>> {
        let mut m = self.analysis.aligned_instances.clone();
        debias_rows(&mut m, rows, self.vector())?;
        Ok(m)
    }

    fn disparity_on(&self, matrix: &Array2<f64>) -> Result<f64> {
        let table = self.analysis.association_on(matrix.view(), &self.train_rows, self.concepts)?;
        self.analysis.disparity(&table, self.concept, &self.train_rows, self.pair)
    }

    fn rbr(&self, after: f64) -> Result<f64> {
        remaining_bias_ratio(self.disparity_before, after, self.analysis.config.rbr_mode)
    }

    fn random_rows(&self, n: usize, seed: u64) -> Result<Vec<usize>> {
        if n > self.train_rows.len() {
            return Err(Error::param("n", format!("{n} exceeds the {} train instances of the pair", self.train_rows.len())));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ CONTROL_STREAM);
        let mut picked: Vec<usize> =
            rand::seq::index::sample(&mut rng, self.train_rows.len(), n).into_iter().map(|i| self.train_rows[i]).collect();
        picked.sort_unstable();
        Ok(picked)
    }

    fn rows_for(&self, n: usize, control: Control) -> Result<Vec<usize>> {
        match control {
            Control::Concept => {
                if n > self.candidates.len() {
                    return Err(Error::param("n", format!("{n} exceeds {} candidates", self.candidates.len())));
                }
                Ok(self.candidates[..n].to_vec())
            }
            Control::Random { seed } => self.random_rows(n, seed),
        }
    }
}

/// Overall test accuracy and accuracy on the concept-associated test subgroup.
struct Evaluator {
    test_rows: Vec<usize>,
    subgroup: Vec<usize>,
}

impl Evaluator {
    fn new(ctx: &Context<'_>) -> Result<Self> {
        let a = ctx.analysis;
        let test_pair = a.pair_rows(Split::Test, ctx.pair);
        let subgroup = if test_pair.is_empty() {
            Vec::new()
        } else {
            let table = a.association(&test_pair, ctx.concepts)?;
            table.comb_order(ctx.concept).into_iter().take(a.config.subgroup_size).map(|r| test_pair[r]).collect()
        };
        Ok(Self { test_rows: a.test_rows.clone(), subgroup })
    }

    fn score(&self, a: &Analysis, head: &HeadModel) -> Result<(f64, f64)> {
        let overall = accuracy(&a.predictions(head, &self.test_rows)?, &a.labels_of(&self.test_rows));
        let sub = accuracy(&a.predictions(head, &self.subgroup)?, &a.labels_of(&self.subgroup));
        Ok((overall, sub))
    }
}

/// Remaining bias, and optionally retrained accuracy, for each n in `grid`.
pub fn debias_curve(
    analysis: &Analysis,
    concepts: &[Concept],
    concept_id: &str,
    pair: ClassPair,
    grid: Option<&[usize]>,
    evaluate: bool,
) -> Result<DebiasCurve> {
    let ctx = Context::new(analysis, concepts, concept_id, pair)?;
    let n_cand = ctx.candidates.len();
    if n_cand == 0 {
        return Err(Error::Empty { what: "debias candidates" });
    }
    let grid = match grid {
        Some(g) => {
            if g.first() != Some(&0) || g.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::param("grid", "must be strictly ascending and start at 0"));
            }
            if let Some(&last) = g.last().filter(|&&l| l > n_cand) {
                return Err(Error::param("grid", format!("{last} exceeds {n_cand} candidates")));
            }
            g.to_vec()
        }
        None => default_grid(n_cand),
    };
    // Validate the before-disparity up front so every point can form a ratio.
    ctx.rbr(ctx.disparity_before)?;

    let evaluator = if evaluate { Some(Evaluator::new(&ctx)?) } else { None };
    let before = match &evaluator {
        Some(e) => Some(e.score(analysis, &analysis.head)?),
        None => None,
    };

    let mut points = Vec::with_capacity(grid.len());
    for &n in &grid {
        if n == 0 {
            let (acc_after, subgroup_after) = before.map_or((None, None), |(a, s)| (Some(a), Some(s)));
            points.push(CurvePoint { n, rbr: 1.0, disparity_after: ctx.disparity_before, acc_after, subgroup_after });
            continue;
        }
        let m = ctx.debiased(&ctx.candidates[..n])?;
        let disparity_after = ctx.disparity_on(&m)?;
        let rbr = ctx.rbr(disparity_after)?;
        let (acc_after, subgroup_after) = match &evaluator {
            Some(e) => {
                let (a, s) = e.score(analysis, &analysis.retrain(&m)?)?;
                (Some(a), Some(s))
            }
            None => (None, None),
        };
        points.push(CurvePoint { n, rbr, disparity_after, acc_after, subgroup_after });
    }

    Ok(DebiasCurve {
        concept_id: concept_id.to_string(),
        pair,
        n_candidates: n_cand,
        disparity_before: ctx.disparity_before,
        acc_before: before.map(|b| b.0),
        subgroup_before: before.map(|b| b.1),
        points,
    })
}

/// Retrain after debiasing `n` instances chosen by `control` and compare to the current head.
pub fn evaluate_debias(
    analysis: &Analysis,
    concepts: &[Concept],
    concept_id: &str,
    pair: ClassPair,
    n: usize,
    control: Control,
) -> Result<DebiasEvaluation> {
    let ctx = Context::new(analysis, concepts, concept_id, pair)?;
    let rows = ctx.rows_for(n, control)?;
    let evaluator = Evaluator::new(&ctx)?;
    let (acc_before, subgroup_before) = evaluator.score(analysis, &analysis.head)?;
    let (acc_after, subgroup_after, disparity_after) = if n == 0 {
        (acc_before, subgroup_before, ctx.disparity_before)
    } else {
        let m = ctx.debiased(&rows)?;
        let d = ctx.disparity_on(&m)?;
        let (a, s) = evaluator.score(analysis, &analysis.retrain(&m)?)?;
        (a, s, d)
    };
    let rbr = if n == 0 { 1.0 } else { ctx.rbr(disparity_after)? };
    Ok(DebiasEvaluation {
        concept_id: concept_id.to_string(),
        n,
        control,
        acc_before,
        acc_after,
        subgroup_before,
        subgroup_after,
        disparity_before: ctx.disparity_before,
        disparity_after,
        rbr,
        pct_bias_mitigated: 1.0 - rbr,
    })
}

/// The aligned instance matrix after debiasing the top `n` candidates.
pub fn debiased_matrix(
    analysis: &Analysis,
    concepts: &[Concept],
    concept_id: &str,
    pair: ClassPair,
    n: usize,
) -> Result<(Array2<f64>, Vec<usize>)> {
    let ctx = Context::new(analysis, concepts, concept_id, pair)?;
    let rows = ctx.rows_for(n, Control::Concept)?;
    Ok((ctx.debiased(&rows)?, rows))
}

/// Number of debias candidates for a concept and pair.
pub fn candidate_count(analysis: &Analysis, concepts: &[Concept], concept_id: &str, pair: ClassPair) -> Result<usize> {
    Ok(Context::new(analysis, concepts, concept_id, pair)?.candidates.len())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn curve(points: &[(usize, f64)]) -> DebiasCurve {
        DebiasCurve {
            concept_id: "c".into(),
            pair: ClassPair { negative: 1, positive: 0 },
            n_candidates: points.last().unwrap().0,
            disparity_before: 1.0,
            acc_before: None,
            subgroup_before: None,
            points: points
                .iter()
                .map(|&(n, rbr)| CurvePoint { n, rbr, disparity_after: rbr, acc_after: None, subgroup_after: None })
                .collect(),
        }
    }

    #[test]
    fn projection_cases() {
        let c = array![1.0, 0.0];
        assert_eq!(debias_vector(array![1.0, 1.0].view(), c.view()).unwrap(), array![0.0, 1.0]);
        assert_eq!(debias_vector(array![0.0, 5.0].view(), c.view()).unwrap(), array![0.0, 5.0]);
        let c = array![0.5, -2.0, 1.0];
        let v = &c * 3.0;
        assert!(debias_vector(v.view(), c.view()).unwrap().iter().all(|x| x.abs() < 1e-15));
        assert!(debias_vector(v.view(), array![0.0, 0.0, 0.0].view()).is_err());
    }

    #[test]
    fn rbr_cases() {
        assert_eq!(remaining_bias_ratio(2.0, 2.0, RbrMode::Ratio).unwrap(), 1.0);
        assert_eq!(remaining_bias_ratio(2.0, 0.0, RbrMode::Ratio).unwrap(), 0.0);
        assert_eq!(remaining_bias_ratio(2.0, 1.0, RbrMode::Ratio).unwrap(), 0.5);
        assert_eq!(remaining_bias_ratio(2.0, 0.0, RbrMode::Printed).unwrap(), 2.0);
        assert_eq!(remaining_bias_ratio(2.0, 2.0, RbrMode::Printed).unwrap(), 1.0);
        assert!(remaining_bias_ratio(1e-12, 1.0, RbrMode::Ratio).is_err());
    }

    #[test]
    fn grid_clipping() {
        assert_eq!(default_grid(800), vec![0, 25, 50, 100, 200, 400, 800]);
        assert_eq!(default_grid(400), vec![0, 25, 50, 100, 200, 400]);
        assert_eq!(default_grid(60), vec![0, 25, 50, 60]);
        assert_eq!(default_grid(0), vec![0]);
    }

    #[test]
    fn recommendation_rules() {
        let c = curve(&[(0, 1.0), (100, 0.5), (200, 0.45)]);
        assert_eq!(recommend_n(&c, 0.0).unwrap(), 0);
        assert_eq!(recommend_n(&c, 1.0).unwrap(), 200);
        // Costs 0.5, 0.5, 0.725: the tie between 0 and 100 goes to 0.
        assert_eq!(recommend_n(&c, 0.5).unwrap(), 0);
        let flat = curve(&[(0, 1.0), (10, 0.2), (20, 0.2)]);
        assert_eq!(recommend_n(&flat, 1.0).unwrap(), 10);
        assert!(recommend_n(&c, 1.5).is_err());
    }

    #[test]
    fn recommendation_monotone_in_t() {
        let c = curve(&[(0, 1.0), (25, 0.7), (50, 0.5), (100, 0.3), (200, 0.2), (400, 0.1)]);
        let mut last = 0;
        for i in 0..=20 {
            let n = recommend_n(&c, i as f64 / 20.0).unwrap();
            assert!(n >= last);
            last = n;
        }
    }

    #[test]
    fn csv_layout() {
        let c = curve(&[(0, 1.0), (5, 0.25)]);
        assert_eq!(c.to_csv_string().unwrap(), "n,rbr,disparity_after,acc_after,subgroup_after\n0,1,1,,\n5,0.25,0.25,,\n");
    }
}
