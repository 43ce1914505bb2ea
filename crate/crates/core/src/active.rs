//! Batch-mode subset selection for active learning.
//!
//! All samplers pick `budget` indices from the unlabeled part of a pool in one
//! shot, using only the seed model's embeddings and class scores.

use crate::error::{Error, Result};
use crate::matrix::{dot, norm, Matrix};
use crate::rng::{seeded, shuffle};

#[derive(Clone, Debug, PartialEq)]
pub struct PoolState {
    /// One embedding per pool point.
    pub embeddings: Matrix,
    /// One row of class scores per pool point.
    pub prediction_scores: Matrix,
    /// Indices already labeled (the seed set).
    pub labeled_indices: Vec<usize>,
    pub budget: usize,
}

impl PoolState {
    pub fn len(&self) -> usize {
        self.embeddings.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.embeddings.rows() == 0
    }

    /// Labeled mask, after checking every invariant of the pool.
    fn labeled_mask(&self) -> Result<Vec<bool>> {
        let n = self.len();
        if self.prediction_scores.rows() != n {
            return Err(crate::error::shape_err(
                format!("{n} score rows"),
                self.prediction_scores.rows(),
            ));
        }
        let mut mask = vec![false; n];
        for &i in &self.labeled_indices {
            if i >= n || mask[i] {
                return Err(Error::InvalidConfig(format!(
                    "labeled index {i} is out of range or repeated"
                )));
            }
            mask[i] = true;
        }
        let available = n - self.labeled_indices.len();
        if self.budget > available {
            return Err(Error::BudgetExceeded {
                budget: self.budget,
                available,
            });
        }
        Ok(mask)
    }

    fn unlabeled(&self) -> Result<Vec<usize>> {
        let mask = self.labeled_mask()?;
        Ok((0..self.len()).filter(|&i| !mask[i]).collect())
    }
}

/// Uniform sample without replacement from the unlabeled points.
pub fn select_random(state: &PoolState, seed: u64) -> Result<Vec<usize>> {
    let mut pool = state.unlabeled()?;
    shuffle(&mut seeded(seed), &mut pool);
    pool.truncate(state.budget);
    Ok(pool)
}

/// Gap between the two largest entries of a score row.
pub fn margin(scores: &[f64]) -> f64 {
    let mut top = f64::NEG_INFINITY;
    let mut second = f64::NEG_INFINITY;
    for &s in scores {
        if s > top {
            second = top;
            top = s;
        } else if s > second {
            second = s;
        }
    }
    top - second
}

/// The `budget` unlabeled points with the smallest top-two score margin,
/// ties by index.
pub fn select_margin(state: &PoolState) -> Result<Vec<usize>> {
    if state.prediction_scores.cols() < 2 {
        return Err(Error::InvalidConfig(
            "margin sampling needs at least two classes".into(),
        ));
    }
    let mut pool: Vec<(f64, usize)> = state
        .unlabeled()?
        .into_iter()
        .map(|i| (margin(state.prediction_scores.row(i)), i))
        .collect();
    pool.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    Ok(pool.into_iter().take(state.budget).map(|(_, i)| i).collect())
}

/// `1 - cos` between two embeddings.
pub fn cosine_distance(a: &[f64], b: &[f64]) -> f64 {
    1.0 - dot(a, b) / (norm(a) * norm(b))
}

/// Greedy farthest-first selection under cosine distance, starting from the
/// labeled set. Returns indices in the order they were picked.
pub fn select_kcenter(state: &PoolState) -> Result<Vec<usize>> {
    let mask = state.labeled_mask()?;
    if state.labeled_indices.is_empty() {
        return Err(Error::EmptySeedSet);
    }
    let unit = unit_rows(&state.embeddings)?;
    let n = state.len();
    let mut nearest = vec![f64::INFINITY; n];
    for &c in &state.labeled_indices {
        relax(&unit, c, &mut nearest);
    }
    let mut taken = mask;
    let mut picked = Vec::with_capacity(state.budget);
    for _ in 0..state.budget {
        let mut best: Option<usize> = None;
        for i in 0..n {
            if !taken[i] && best.is_none_or(|b| nearest[i] > nearest[b]) {
                best = Some(i);
            }
        }
        let b = best.expect("budget checked against the unlabeled count");
        taken[b] = true;
        picked.push(b);
        relax(&unit, b, &mut nearest);
    }
    Ok(picked)
}

fn unit_rows(m: &Matrix) -> Result<Matrix> {
    let mut out = m.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let n = norm(row);
        if !(n > 0.0) {
            return Err(Error::DegenerateVector { norm: n });
        }
        row.iter_mut().for_each(|v| *v /= n);
    }
    Ok(out)
}

fn relax(unit: &Matrix, center: usize, nearest: &mut [f64]) {
    let c = unit.row(center);
    for (i, d) in nearest.iter_mut().enumerate() {
        let dist = 1.0 - dot(unit.row(i), c);
        if dist < *d {
            *d = dist;
        }
    }
}

/// Largest distance from any point to its nearest center under `distance`.
pub fn covering_radius(
    embeddings: &Matrix,
    centers: &[usize],
    distance: impl Fn(&[f64], &[f64]) -> f64,
) -> f64 {
    embeddings
        .iter_rows()
        .map(|p| {
            centers
                .iter()
                .map(|&c| distance(p, embeddings.row(c)))
                .fold(f64::INFINITY, f64::min)
        })
        .fold(0.0, f64::max)
}
