//! Diagnostics for why consistency-filtered value vectors merge well:
//! cross-value gradient conflict, the merging gap along the interpolation
//! path with its second-order upper bound, and value-vector geometry.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::data::PreferenceDataset;
use crate::policy::{dpo_gradient, dpo_loss, pair_gradient, TabularPolicy, ValueVector};
use crate::rng::substream;
use crate::scalar::{dot, norm2};
use crate::{Error, Result, Scalar};

/// A loss over a flat parameter delta `w`, i.e. `f(w) = L(π₀ + w)`.
pub trait Objective<T: Scalar> {
    fn dim(&self) -> usize;

    fn value(&self, w: &[T]) -> Result<T>;

    /// Central differences with step `1e-6` unless overridden.
    fn gradient(&self, w: &[T]) -> Result<Vec<T>> {
        let h = T::lit(1e-6);
        let two_h = h + h;
        let mut x = w.to_vec();
        let mut g = Vec::with_capacity(w.len());
        for k in 0..w.len() {
            let orig = x[k];
            x[k] = orig + h;
            let up = self.value(&x)?;
            x[k] = orig - h;
            let down = self.value(&x)?;
            x[k] = orig;
            g.push((up - down) / two_h);
        }
        Ok(g)
    }
}

/// `f(w) = c + bᵀw + ½ wᵀHw` with symmetric `H`.
#[derive(Clone, Debug)]
pub struct Quadratic<T = f64> {
    pub hessian: Vec<Vec<T>>,
    pub linear: Vec<T>,
    pub constant: T,
}

impl<T: Scalar> Quadratic<T> {
    pub fn new(hessian: Vec<Vec<T>>, linear: Vec<T>, constant: T) -> Result<Self> {
        check_symmetric(&hessian)?;
        if linear.len() != hessian.len() {
            return Err(Error::ShapeMismatch {
                expected: vec![hessian.len()],
                got: vec![linear.len()],
            });
        }
        Ok(Self {
            hessian,
            linear,
            constant,
        })
    }

    pub fn pure(hessian: Vec<Vec<T>>) -> Result<Self> {
        let n = hessian.len();
        Self::new(hessian, vec![T::zero(); n], T::zero())
    }

    fn hv(&self, v: &[T]) -> Vec<T> {
        self.hessian.iter().map(|row| dot(row, v)).collect()
    }
}

impl<T: Scalar> Objective<T> for Quadratic<T> {
    fn dim(&self) -> usize {
        self.hessian.len()
    }

    fn value(&self, w: &[T]) -> Result<T> {
        check_dim(self.dim(), w.len())?;
        Ok(self.constant + dot(&self.linear, w) + T::lit(0.5) * dot(w, &self.hv(w)))
    }

    fn gradient(&self, w: &[T]) -> Result<Vec<T>> {
        check_dim(self.dim(), w.len())?;
        Ok(self.hv(w).into_iter().zip(&self.linear).map(|(a, &b)| a + b).collect())
    }
}

/// Mean of several DPO losses, each on its own dataset, evaluated at
/// `reference + w` against `reference`.
pub struct DpoObjective<'a, T = f64> {
    pub reference: &'a TabularPolicy<T>,
    pub datasets: Vec<&'a PreferenceDataset>,
    pub beta: T,
}

impl<'a, T: Scalar> DpoObjective<'a, T> {
    pub fn new(reference: &'a TabularPolicy<T>, datasets: Vec<&'a PreferenceDataset>, beta: T) -> Result<Self> {
        if datasets.is_empty() {
            return Err(Error::invalid("DPO objective needs at least one dataset"));
        }
        Ok(Self {
            reference,
            datasets,
            beta,
        })
    }

    fn policy_at(&self, w: &[T]) -> Result<TabularPolicy<T>> {
        check_dim(self.dim(), w.len())?;
        let theta = ValueVector::new(self.reference.shape(), w.to_vec())?;
        self.reference.shifted(&theta, T::one())
    }
}

impl<T: Scalar> Objective<T> for DpoObjective<'_, T> {
    fn dim(&self) -> usize {
        self.reference.logits().len()
    }

    fn value(&self, w: &[T]) -> Result<T> {
        let pi = self.policy_at(w)?;
        let mut total = T::zero();
        for d in &self.datasets {
            total = total + dpo_loss(&pi, self.reference, d, self.beta)?;
        }
        Ok(total / T::from_count(self.datasets.len()))
    }

    fn gradient(&self, w: &[T]) -> Result<Vec<T>> {
        let pi = self.policy_at(w)?;
        let k = T::from_count(self.datasets.len());
        let mut g = vec![T::zero(); w.len()];
        for d in &self.datasets {
            for (gi, di) in g.iter_mut().zip(dpo_gradient(&pi, self.reference, d, self.beta)?) {
                *gi = *gi + di / k;
            }
        }
        Ok(g)
    }
}

fn check_dim(want: usize, got: usize) -> Result<()> {
    if want != got {
        return Err(Error::ShapeMismatch {
            expected: vec![want],
            got: vec![got],
        });
    }
    Ok(())
}

fn check_symmetric<T: Scalar>(h: &[Vec<T>]) -> Result<()> {
    let n = h.len();
    for (i, row) in h.iter().enumerate() {
        if row.len() != n {
            return Err(Error::invalid("Hessian must be square"));
        }
        for j in 0..i {
            if (row[j] - h[j][i]).abs() > T::lit(1e-9) {
                return Err(Error::invalid(format!("Hessian not symmetric at ({i}, {j})")));
            }
        }
    }
    Ok(())
}

/// Cosine similarity, or `None` when either vector is zero.
pub fn cosine<T: Scalar>(a: &[T], b: &[T]) -> Option<T> {
    let (na, nb) = (norm2(a), norm2(b));
    if na == T::zero() || nb == T::zero() {
        return None;
    }
    Some((dot(a, b) / (na * nb)).max(-T::one()).min(T::one()))
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConflictReport<T = f64> {
    /// Prompts present in both datasets, ascending.
    pub matched_prompts: Vec<usize>,
    /// One cosine per matched prompt whose two gradient rows are both nonzero.
    pub per_pair_cosines: Vec<T>,
    pub mean_cosine: T,
    pub negative_fraction: f64,
    /// Cosine of the two full-batch gradients (0 if either is zero).
    pub full_batch_cosine: T,
}

/// Cross-value gradient alignment at `π = reference`.
///
/// For every prompt occurring in both datasets, the per-sample DPO gradients
/// of that prompt's pairs are summed within each dataset and the two
/// resulting logit-row gradients are compared by cosine.
pub fn gradient_conflict<T: Scalar>(
    reference: &TabularPolicy<T>,
    dataset_i: &PreferenceDataset,
    dataset_j: &PreferenceDataset,
    beta: T,
) -> Result<ConflictReport<T>> {
    let r = reference.shape()[1];
    let rows = |d: &PreferenceDataset| -> Result<BTreeMap<usize, Vec<T>>> {
        let mut out: BTreeMap<usize, Vec<T>> = BTreeMap::new();
        for (k, p) in d.pairs.iter().enumerate() {
            let g = pair_gradient(reference, reference, p, beta).map_err(|e| e.at_pair(k))?;
            let row = out.entry(p.prompt_id).or_insert_with(|| vec![T::zero(); r]);
            for (idx, v) in g {
                let c = idx % r;
                row[c] = row[c] + v;
            }
        }
        Ok(out)
    };
    let ri = rows(dataset_i)?;
    let rj = rows(dataset_j)?;
    let matched: Vec<usize> = ri.keys().filter(|x| rj.contains_key(x)).copied().collect();
    if matched.is_empty() {
        return Err(Error::DisjointSupports);
    }
    let cosines: Vec<T> = matched.iter().filter_map(|x| cosine(&ri[x], &rj[x])).collect();
    let mean_cosine = if cosines.is_empty() {
        T::zero()
    } else {
        cosines.iter().copied().sum::<T>() / T::from_count(cosines.len())
    };
    let negative_fraction = if cosines.is_empty() {
        0.0
    } else {
        cosines.iter().filter(|&&c| c < T::zero()).count() as f64 / cosines.len() as f64
    };
    let gi = dpo_gradient(reference, reference, dataset_i, beta)?;
    let gj = dpo_gradient(reference, reference, dataset_j, beta)?;
    Ok(ConflictReport {
        matched_prompts: matched,
        per_pair_cosines: cosines,
        mean_cosine,
        negative_fraction,
        full_batch_cosine: cosine(&gi, &gj).unwrap_or(T::zero()),
    })
}

/// Loss along `w_λ = λ θ_i + (1 − λ) θ_j` against the chord of the endpoint losses.
#[derive(Clone, Debug, PartialEq)]
pub struct MergeGapReport<T = f64> {
    pub lambdas: Vec<T>,
    pub path_losses: Vec<T>,
    pub chord_losses: Vec<T>,
    /// `(f(θ_i), f(θ_j))`.
    pub endpoint_losses: (T, T),
    pub gaps: Vec<T>,
    /// `½ λ (1 − λ) L_H ‖θ_i − θ_j‖²`, present when `lh` is.
    pub bound_values: Option<Vec<T>>,
    pub lh: Option<T>,
    pub theta_distance_sq: T,
}

impl<T: Scalar> MergeGapReport<T> {
    /// Grid points where `gap > bound + tol`. Empty when no bound was computed.
    pub fn bound_violations(&self, tol: T) -> Vec<usize> {
        match &self.bound_values {
            None => Vec::new(),
            Some(b) => (0..self.gaps.len()).filter(|&k| self.gaps[k] > b[k] + tol).collect(),
        }
    }

    pub fn bound_holds(&self, tol: T) -> Option<bool> {
        self.bound_values
            .as_ref()
            .map(|_| self.bound_violations(tol).is_empty())
    }

    pub fn max_gap(&self) -> T {
        self.gaps.iter().copied().fold(T::neg_infinity(), T::max)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["lambda", "path_loss", "chord_loss", "gap", "bound"])?;
        for k in 0..self.lambdas.len() {
            let bound = self.bound_values.as_ref().map(|b| b[k].to_string()).unwrap_or_default();
            w.write_record([
                self.lambdas[k].to_string(),
                self.path_losses[k].to_string(),
                self.chord_losses[k].to_string(),
                self.gaps[k].to_string(),
                bound,
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn lerp<T: Scalar>(a: &[T], b: &[T], t: T) -> Vec<T> {
    // t·a + (1 − t)·b, so t = 0 and t = 1 reproduce the endpoints exactly
    a.iter().zip(b).map(|(&x, &y)| t * x + (T::one() - t) * y).collect()
}

/// Evaluates the merging gap on a uniform grid of `num_lambdas` points in `[0, 1]`.
pub fn merging_gap_scan<T: Scalar>(
    loss: &dyn Objective<T>,
    theta_i: &[T],
    theta_j: &[T],
    num_lambdas: usize,
    lh: Option<T>,
) -> Result<MergeGapReport<T>> {
    if num_lambdas < 3 {
        return Err(Error::invalid("merging_gap_scan needs at least 3 grid points"));
    }
    check_dim(loss.dim(), theta_i.len())?;
    check_dim(loss.dim(), theta_j.len())?;
    let f_i = loss.value(theta_i)?;
    let f_j = loss.value(theta_j)?;
    if !f_i.is_finite() || !f_j.is_finite() {
        return Err(Error::NonFinite("loss at an endpoint".into()));
    }
    let diff: Vec<T> = theta_i.iter().zip(theta_j).map(|(&a, &b)| a - b).collect();
    let dist_sq = dot(&diff, &diff);
    let denom = T::from_count(num_lambdas - 1);
    let mut report = MergeGapReport {
        lambdas: Vec::with_capacity(num_lambdas),
        path_losses: Vec::with_capacity(num_lambdas),
        chord_losses: Vec::with_capacity(num_lambdas),
        endpoint_losses: (f_i, f_j),
        gaps: Vec::with_capacity(num_lambdas),
        bound_values: lh.map(|_| Vec::with_capacity(num_lambdas)),
        lh,
        theta_distance_sq: dist_sq,
    };
    for k in 0..num_lambdas {
        let lambda = T::from_count(k) / denom;
        let f = loss.value(&lerp(theta_i, theta_j, lambda))?;
        if !f.is_finite() {
            return Err(Error::NonFinite(format!("loss at lambda = {lambda}")));
        }
        let chord = lambda * f_i + (T::one() - lambda) * f_j;
        report.lambdas.push(lambda);
        report.path_losses.push(f);
        report.chord_losses.push(chord);
        report.gaps.push(f - chord);
        if let (Some(b), Some(l)) = (report.bound_values.as_mut(), lh) {
            b.push(T::lit(0.5) * lambda * (T::one() - lambda) * l * dist_sq);
        }
    }
    Ok(report)
}

/// `−½ λ (1 − λ) (θ_i − θ_j)ᵀ H (θ_i − θ_j)`: the exact merging gap of a quadratic.
pub fn quadratic_gap_closed_form<T: Scalar>(hessian: &[Vec<T>], theta_i: &[T], theta_j: &[T], lambda: T) -> Result<T> {
    check_symmetric(hessian)?;
    check_dim(hessian.len(), theta_i.len())?;
    check_dim(hessian.len(), theta_j.len())?;
    let d: Vec<T> = theta_i.iter().zip(theta_j).map(|(&a, &b)| a - b).collect();
    let hd: Vec<T> = hessian.iter().map(|row| dot(row, &d)).collect();
    Ok(-T::lit(0.5) * lambda * (T::one() - lambda) * dot(&d, &hd))
}

/// Settings for the Hessian spectral-norm estimator.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LhConfig {
    pub fd_step: f64,
    pub power_iterations: usize,
    pub seed: u64,
}

impl Default for LhConfig {
    fn default() -> Self {
        Self {
            fd_step: 1e-4,
            power_iterations: 8,
            seed: 0,
        }
    }
}

fn hvp<T: Scalar>(loss: &dyn Objective<T>, at: &[T], v: &[T], step: T) -> Result<Vec<T>> {
    let plus: Vec<T> = at.iter().zip(v).map(|(&a, &b)| a + step * b).collect();
    let minus: Vec<T> = at.iter().zip(v).map(|(&a, &b)| a - step * b).collect();
    let gp = loss.gradient(&plus)?;
    let gm = loss.gradient(&minus)?;
    let two_h = step + step;
    let out: Vec<T> = gp.iter().zip(&gm).map(|(&a, &b)| (a - b) / two_h).collect();
    if out.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("Hessian-vector probe".into()));
    }
    Ok(out)
}

/// Largest Hessian spectral norm found at `num_probe_points` points of the
/// segment `[θ_j, θ_i]`, by power iteration on finite-difference
/// Hessian-vector products.
///
/// Probe 0 sits at `θ_j`, probe 1 at `θ_i`, later probes at seeded positions.
/// Each probe's position and start direction depend only on its index, so a
/// larger probe count never lowers the estimate.
pub fn estimate_lh<T: Scalar>(
    loss: &dyn Objective<T>,
    theta_i: &[T],
    theta_j: &[T],
    num_probe_points: usize,
    config: &LhConfig,
) -> Result<T> {
    if num_probe_points < 2 {
        return Err(Error::invalid("estimate_lh needs at least 2 probe points"));
    }
    check_dim(loss.dim(), theta_i.len())?;
    check_dim(loss.dim(), theta_j.len())?;
    let step = T::lit(config.fd_step);
    let mut best = T::zero();
    for k in 0..num_probe_points {
        let mut rng = substream(config.seed, &format!("lh-probe-{k}"));
        let t: f64 = match k {
            0 => 0.0,
            1 => 1.0,
            _ => rng.random(),
        };
        let at = lerp(theta_i, theta_j, T::lit(t));
        let mut v: Vec<T> = (0..at.len())
            .map(|_| T::lit(rng.sample::<f64, _>(StandardNormal)))
            .collect();
        let n0 = norm2(&v);
        v.iter_mut().for_each(|x| *x = *x / n0);
        let mut est = T::zero();
        for _ in 0..config.power_iterations.max(1) {
            let hv = hvp(loss, &at, &v, step)?;
            est = norm2(&hv);
            if est == T::zero() {
                break;
            }
            v = hv.into_iter().map(|x| x / est).collect();
        }
        best = best.max(est);
    }
    Ok(best)
}

#[derive(Clone, Debug, PartialEq)]
pub struct BlockGeometry<T = f64> {
    pub block_id: usize,
    pub l2_distance: T,
    pub cosine: T,
    pub degenerate: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GeometryReport<T = f64> {
    pub l2_distance: T,
    /// 0 with `degenerate` set when either vector is zero.
    pub cosine: T,
    pub degenerate: bool,
    /// One entry per prompt row of the logit table.
    pub per_block: Vec<BlockGeometry<T>>,
}

impl<T: Scalar> GeometryReport<T> {
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["block_id", "l2_distance", "cosine"])?;
        w.write_record(["-1".to_string(), self.l2_distance.to_string(), self.cosine.to_string()])?;
        for b in &self.per_block {
            w.write_record([b.block_id.to_string(), b.l2_distance.to_string(), b.cosine.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn distance<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| (x - y) * (x - y)).sum::<T>().sqrt()
}

/// L2 distance and cosine between two value vectors, globally and per prompt row.
pub fn vector_geometry<T: Scalar>(theta_i: &ValueVector<T>, theta_j: &ValueVector<T>) -> Result<GeometryReport<T>> {
    theta_j.check_shape(theta_i.shape)?;
    let global = cosine(&theta_i.delta, &theta_j.delta);
    let per_block = (0..theta_i.shape[0])
        .map(|x| {
            let (a, b) = (theta_i.row(x), theta_j.row(x));
            let c = cosine(a, b);
            BlockGeometry {
                block_id: x,
                l2_distance: distance(a, b),
                cosine: c.unwrap_or(T::zero()),
                degenerate: c.is_none(),
            }
        })
        .collect();
    Ok(GeometryReport {
        l2_distance: distance(&theta_i.delta, &theta_j.delta),
        cosine: global.unwrap_or(T::zero()),
        degenerate: global.is_none(),
        per_block,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::PreferencePair;

    fn identity(n: usize) -> Vec<Vec<f64>> {
        (0..n)
            .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
            .collect()
    }

    #[test]
    fn quadratic_gap_example() {
        let q = Quadratic::pure(identity(2)).unwrap();
        let rep = merging_gap_scan(&q, &[1.0, 0.0], &[0.0, 1.0], 3, Some(1.0)).unwrap();
        assert_eq!(rep.lambdas, vec![0.0, 0.5, 1.0]);
        assert!((rep.gaps[1] + 0.25).abs() < 1e-15);
        assert!((rep.bound_values.as_ref().unwrap()[1] - 0.25).abs() < 1e-15);
        assert_eq!(rep.gaps[0], 0.0);
        assert_eq!(rep.gaps[2], 0.0);
        assert_eq!(rep.bound_holds(1e-8), Some(true));

        let cf = quadratic_gap_closed_form(&identity(2), &[1.0, 0.0], &[0.0, 1.0], 0.5).unwrap();
        assert!((cf + 0.25).abs() < 1e-15);
        for l in [0.0, 1.0] {
            assert_eq!(
                quadratic_gap_closed_form(&identity(2), &[3.0, 1.0], &[0.0, -1.0], l).unwrap(),
                0.0
            );
        }
    }

    #[test]
    fn equal_endpoints_have_no_gap() {
        let q: Quadratic = Quadratic::new(vec![vec![2.0, 0.5], vec![0.5, 1.0]], vec![0.3, -0.1], 1.0).unwrap();
        let rep = merging_gap_scan(&q, &[0.4, -0.2], &[0.4, -0.2], 11, None).unwrap();
        assert!(rep.gaps.iter().all(|&g| g.abs() < 1e-15));
        assert_eq!(rep.bound_holds(0.0), None);
    }

    #[test]
    fn scan_rejects_coarse_grid() {
        let q = Quadratic::pure(identity(1)).unwrap();
        assert!(merging_gap_scan(&q, &[1.0], &[0.0], 2, None).is_err());
    }

    #[test]
    fn asymmetric_hessian_rejected() {
        assert!(quadratic_gap_closed_form(&[vec![1.0, 2.0], vec![0.0, 1.0]], &[1.0, 0.0], &[0.0, 0.0], 0.5).is_err());
        assert!(Quadratic::pure(vec![vec![1.0, 2.0], vec![0.0, 1.0]]).is_err());
    }

    #[test]
    fn lh_on_diagonal_quadratic() {
        let q: Quadratic = Quadratic::pure(vec![vec![1.0, 0.0], vec![0.0, 4.0]]).unwrap();
        let lh = estimate_lh(&q, &[1.0, 1.0], &[-1.0, 0.5], 4, &LhConfig::default()).unwrap();
        assert!((lh - 4.0).abs() < 1e-3, "{lh}");
    }

    struct Linear(Vec<f64>);
    impl Objective<f64> for Linear {
        fn dim(&self) -> usize {
            self.0.len()
        }
        fn value(&self, w: &[f64]) -> Result<f64> {
            Ok(dot(&self.0, w))
        }
        fn gradient(&self, _w: &[f64]) -> Result<Vec<f64>> {
            Ok(self.0.clone())
        }
    }

    #[test]
    fn lh_on_linear_is_zero() {
        let f = Linear(vec![1.0, -2.0, 0.5]);
        let lh = estimate_lh(&f, &[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0], 5, &LhConfig::default()).unwrap();
        assert!(lh.abs() < 1e-6);
    }

    #[test]
    fn lh_needs_two_probes() {
        let f = Linear(vec![1.0]);
        assert!(estimate_lh(&f, &[1.0], &[0.0], 1, &LhConfig::default()).is_err());
    }

    #[test]
    fn geometry_examples() {
        let a: ValueVector = ValueVector::new([2, 2], vec![1.0, 2.0, -1.0, 0.5]).unwrap();
        let g = vector_geometry(&a, &a).unwrap();
        assert_eq!(g.l2_distance, 0.0);
        assert!((g.cosine - 1.0).abs() < 1e-15);

        let neg = ValueVector::new([2, 2], a.delta.iter().map(|v| -v).collect()).unwrap();
        assert!((vector_geometry(&a, &neg).unwrap().cosine + 1.0).abs() < 1e-15);

        let e1 = ValueVector::new([1, 3], vec![1.0, 0.0, 0.0]).unwrap();
        let e2 = ValueVector::new([1, 3], vec![0.0, 1.0, 0.0]).unwrap();
        let g = vector_geometry(&e1, &e2).unwrap();
        assert!((g.l2_distance - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(g.cosine, 0.0);
        assert!(!g.degenerate);

        let z: ValueVector = ValueVector::zeros([1, 3]);
        let g = vector_geometry(&z, &z).unwrap();
        assert!(g.degenerate);
        assert_eq!(g.cosine, 0.0);
        assert!(vector_geometry(&e1, &ValueVector::zeros([3, 1])).is_err());
    }

    #[test]
    fn conflict_examples() {
        let r: TabularPolicy = TabularPolicy::uniform(3, 4);
        let d = PreferenceDataset::new(
            "a",
            vec![
                PreferencePair::new(0, 1, 2),
                PreferencePair::new(1, 0, 3),
                PreferencePair::new(1, 2, 3),
            ],
        );
        let same = gradient_conflict(&r, &d, &d, 0.1).unwrap();
        assert_eq!(same.matched_prompts, vec![0, 1]);
        assert!(same.per_pair_cosines.iter().all(|&c| (c - 1.0).abs() < 1e-15));
        assert_eq!(same.negative_fraction, 0.0);

        let sw = PreferenceDataset::new("b", d.pairs.iter().map(|p| p.swapped()).collect());
        let opp = gradient_conflict(&r, &d, &sw, 0.1).unwrap();
        assert!(opp.per_pair_cosines.iter().all(|&c| (c + 1.0).abs() < 1e-15));
        assert_eq!(opp.negative_fraction, 1.0);
        assert!((opp.full_batch_cosine + 1.0).abs() < 1e-15);

        let other = PreferenceDataset::new("c", vec![PreferencePair::new(2, 0, 1)]);
        let err = gradient_conflict(&r, &d, &other, 0.1).unwrap_err();
        assert_eq!(err.to_string(), "disjoint prompt supports");
    }
}
