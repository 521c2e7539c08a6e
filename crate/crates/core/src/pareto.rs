//! Pareto dominance, frontier extraction and hypervolume (maximization convention).

use std::cmp::Ordering;

use crate::soup::CandidateModel;
use crate::{Error, Result, Scalar};

/// `a` dominates `b`: no worse on every value and strictly better on one.
pub fn dominates<T: Scalar>(a: &[T], b: &[T]) -> Result<bool> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch {
            expected: vec![a.len()],
            got: vec![b.len()],
        });
    }
    let mut strict = false;
    for (&ai, &bi) in a.iter().zip(b) {
        if ai < bi {
            return Ok(false);
        }
        strict |= ai > bi;
    }
    Ok(strict)
}

/// `true` at each index whose score vector no other vector dominates.
pub fn non_dominated_mask<T: Scalar>(scores: &[Vec<T>]) -> Result<Vec<bool>> {
    let mut mask = vec![true; scores.len()];
    for i in 0..scores.len() {
        for j in 0..scores.len() {
            if i != j && dominates(&scores[j], &scores[i])? {
                mask[i] = false;
                break;
            }
        }
    }
    Ok(mask)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParetoFrontier<T = f64> {
    pub members: Vec<CandidateModel<T>>,
    /// Positions of `members` in the filtered input.
    pub member_indices: Vec<usize>,
    pub dominated_count: usize,
}

impl<T: Scalar> ParetoFrontier<T> {
    pub fn member_scores(&self) -> Vec<Vec<T>> {
        self.members.iter().map(|m| m.scores.clone()).collect()
    }

    /// Membership flag for each input position.
    pub fn mask(&self, input_len: usize) -> Vec<bool> {
        let mut m = vec![false; input_len];
        for &i in &self.member_indices {
            m[i] = true;
        }
        m
    }

    /// Keeps the first member of every group with exactly equal scores.
    pub fn deduplicated(&self) -> Self {
        let mut members = Vec::new();
        let mut member_indices = Vec::new();
        for (m, &i) in self.members.iter().zip(&self.member_indices) {
            if !members.iter().any(|k: &CandidateModel<T>| k.scores == m.scores) {
                members.push(m.clone());
                member_indices.push(i);
            }
        }
        Self {
            members,
            member_indices,
            dominated_count: self.dominated_count,
        }
    }
}

/// The non-dominated candidates in input order. Equal-score duplicates are all kept.
pub fn pareto_filter<T: Scalar>(candidates: &[CandidateModel<T>]) -> Result<ParetoFrontier<T>> {
    if candidates.is_empty() {
        return Err(Error::invalid("pareto_filter needs at least one candidate"));
    }
    let scores: Vec<Vec<T>> = candidates.iter().map(|c| c.scores.clone()).collect();
    let mask = non_dominated_mask(&scores)?;
    let member_indices: Vec<usize> = (0..mask.len()).filter(|&i| mask[i]).collect();
    Ok(ParetoFrontier {
        members: member_indices.iter().map(|&i| candidates[i].clone()).collect(),
        dominated_count: candidates.len() - member_indices.len(),
        member_indices,
    })
}

/// Componentwise minimum over all score vectors, minus `1e-6`.
pub fn default_reference_point<T: Scalar>(scores: &[Vec<T>]) -> Result<Vec<T>> {
    let first = scores.first().ok_or_else(|| Error::invalid("no scores"))?;
    let mut r = first.clone();
    for s in scores {
        if s.len() != r.len() {
            return Err(Error::ShapeMismatch {
                expected: vec![r.len()],
                got: vec![s.len()],
            });
        }
        for (ri, &si) in r.iter_mut().zip(s) {
            *ri = ri.min(si);
        }
    }
    Ok(r.into_iter().map(|v| v - T::lit(1e-6)).collect())
}

/// Volume of the region dominated by `points` and bounded below by `reference`.
///
/// Points that do not strictly exceed the reference in every coordinate
/// enclose no volume and are dropped. Two values use a sorted sweep; three
/// values integrate 2-d sweeps over slabs between consecutive third coordinates.
pub fn hypervolume<T: Scalar>(points: &[Vec<T>], reference: &[T]) -> Result<T> {
    let n = reference.len();
    if n == 0 || n > 3 {
        return Err(Error::UnsupportedDimension(n));
    }
    for p in points {
        if p.len() != n {
            return Err(Error::ShapeMismatch {
                expected: vec![n],
                got: vec![p.len()],
            });
        }
        if p.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("hypervolume point".into()));
        }
    }
    let inside: Vec<&[T]> = points
        .iter()
        .map(Vec::as_slice)
        .filter(|p| p.iter().zip(reference).all(|(&a, &r)| a > r))
        .collect();
    Ok(match n {
        1 => inside.iter().map(|p| p[0] - reference[0]).fold(T::zero(), T::max),
        2 => sweep_2d(
            inside.iter().map(|p| (p[0], p[1])).collect(),
            reference[0],
            reference[1],
        ),
        _ => {
            let mut pts = inside;
            pts.sort_by(|a, b| desc(a[2], b[2]));
            let mut total = T::zero();
            for k in 0..pts.len() {
                let lower = if k + 1 < pts.len() { pts[k + 1][2] } else { reference[2] };
                let depth = pts[k][2] - lower;
                if depth > T::zero() {
                    let slab = pts[..=k].iter().map(|p| (p[0], p[1])).collect();
                    total = total + depth * sweep_2d(slab, reference[0], reference[1]);
                }
            }
            total
        }
    })
}

pub fn frontier_hypervolume<T: Scalar>(frontier: &ParetoFrontier<T>, reference: &[T]) -> Result<T> {
    hypervolume(&frontier.member_scores(), reference)
}

fn desc<T: Scalar>(a: T, b: T) -> Ordering {
    b.partial_cmp(&a).unwrap_or(Ordering::Equal)
}

fn sweep_2d<T: Scalar>(mut pts: Vec<(T, T)>, rx: T, ry: T) -> T {
    pts.sort_by(|a, b| desc(a.0, b.0).then(desc(a.1, b.1)));
    let mut area = T::zero();
    let mut ymax = ry;
    for (x, y) in pts {
        if y > ymax {
            area = area + (x - rx) * (y - ymax);
            ymax = y;
        }
    }
    area
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::soup::WeightVector;

    fn cands(scores: &[[f64; 2]]) -> Vec<CandidateModel<f64>> {
        scores
            .iter()
            .map(|s| CandidateModel {
                weights: WeightVector::new(vec![0.5, 0.5]).unwrap(),
                scores: s.to_vec(),
            })
            .collect()
    }

    #[test]
    fn dominance_examples() {
        assert!(dominates(&[2.0, 2.0], &[1.0, 1.0]).unwrap());
        assert!(!dominates(&[1.0, 1.0], &[1.0, 1.0]).unwrap());
        assert!(!dominates(&[2.0, 0.0], &[0.0, 2.0]).unwrap());
        assert!(!dominates(&[0.0, 2.0], &[2.0, 0.0]).unwrap());
        assert!(dominates(&[1.0, 2.0], &[1.0, 1.0]).unwrap());
        assert!(dominates(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn frontier_examples() {
        let c = cands(&[[1.0, 1.0], [2.0, 0.0], [0.0, 2.0], [0.5, 0.5]]);
        let f = pareto_filter(&c).unwrap();
        assert_eq!(f.member_indices, vec![0, 1, 2]);
        assert_eq!(f.dominated_count, 1);

        let f = pareto_filter(&cands(&[[3.0, 1.0]])).unwrap();
        assert_eq!(f.members.len(), 1);

        let same = cands(&[[1.0, 1.0]; 4]);
        let f = pareto_filter(&same).unwrap();
        assert_eq!(f.members.len(), 4);
        assert_eq!(f.deduplicated().members.len(), 1);

        assert!(pareto_filter::<f64>(&[]).is_err());
    }

    #[test]
    fn hypervolume_examples() {
        assert_eq!(hypervolume(&[vec![1.0, 1.0]], &[0.0, 0.0]).unwrap(), 1.0);
        assert_eq!(
            hypervolume(&[vec![2.0, 0.0], vec![0.0, 2.0]], &[0.0, 0.0]).unwrap(),
            0.0
        );
        assert_eq!(
            hypervolume(&[vec![2.0, 1.0], vec![1.0, 2.0]], &[0.0, 0.0]).unwrap(),
            3.0
        );
        assert_eq!(hypervolume(&[vec![1.0, 1.0, 1.0]], &[0.0, 0.0, 0.0]).unwrap(), 1.0);
        // two unit cubes overlapping in a 1x1x0.5 slab
        let v: f64 = hypervolume(&[vec![1.0, 1.0, 1.0], vec![2.0, 1.0, 0.5]], &[0.0, 0.0, 0.0]).unwrap();
        assert!((v - 1.5).abs() < 1e-15);
        let err = hypervolume(&[vec![1.0; 4]], &[0.0; 4]).unwrap_err();
        assert_eq!(err.to_string(), "unsupported dimension 4");
    }

    #[test]
    fn reference_point_default() {
        let r = default_reference_point(&[vec![1.0, 5.0], vec![3.0, -2.0]]).unwrap();
        assert_eq!(r, vec![1.0 - 1e-6, -2.0 - 1e-6]);
    }
}
