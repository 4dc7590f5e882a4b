//! Weighted squared-error losses over ensemble statistics.

use crate::error::{Error, Result};
use crate::models::TrajectoryStats;

/// Model quantity compared against data.
#[derive(Debug, Clone, PartialEq)]
pub enum Quantity {
    /// Batch mean of an observable.
    Mean(String),
    /// Batch standard deviation of an observable.
    Std(String),
    /// |mean(a) − mean(b)|, e.g. a Ramsey contrast.
    AbsDiff(String, String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossPoint {
    pub circuit: usize,
    pub time: f64,
    pub target: f64,
}

/// weight · Σ_points (model − data_scale·target)².
#[derive(Debug, Clone, PartialEq)]
pub struct LossTerm {
    pub experiment: usize,
    pub quantity: Quantity,
    pub points: Vec<LossPoint>,
    pub weight: f64,
    pub data_scale: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LossSpec {
    pub terms: Vec<LossTerm>,
}

/// ∂L/∂mean and ∂L/∂std, indexed [experiment][circuit][observable][sample].
pub(crate) type StatAdjoint = Vec<Vec<Vec<Vec<f64>>>>;

fn sample_index(stats: &TrajectoryStats, t: f64) -> Result<usize> {
    stats
        .sample_times
        .iter()
        .position(|&s| (s - t).abs() <= 1e-9 * s.abs().max(1.0))
        .ok_or_else(|| Error::InvalidArgument(format!("data time {t} is not a sample time of the model")))
}

fn lookup<'a>(stats: &'a [Vec<TrajectoryStats>], term: &LossTerm, circuit: usize) -> Result<&'a TrajectoryStats> {
    stats
        .get(term.experiment)
        .and_then(|e| e.get(circuit))
        .ok_or_else(|| Error::InvalidArgument(format!("loss refers to missing experiment {} circuit {circuit}", term.experiment)))
}

pub(crate) fn loss_with_adjoint(
    stats: &[Vec<TrajectoryStats>],
    spec: &LossSpec,
) -> Result<(f64, StatAdjoint, StatAdjoint)> {
    let zeros: StatAdjoint = stats
        .iter()
        .map(|e| e.iter().map(|c| vec![vec![0.0; c.sample_times.len()]; c.names.len()]).collect())
        .collect();
    let mut mean_bar = zeros.clone();
    let mut std_bar = zeros;
    let mut total = 0.0;
    for term in &spec.terms {
        if !(term.weight >= 0.0) {
            return Err(Error::InvalidArgument(format!("loss weight {} must be non-negative", term.weight)));
        }
        for pt in &term.points {
            let st = lookup(stats, term, pt.circuit)?;
            let s = sample_index(st, pt.time)?;
            let (value, grads): (f64, Vec<(bool, usize, f64)>) = match &term.quantity {
                Quantity::Mean(o) => {
                    let i = st.index(o)?;
                    (st.mean[i][s], vec![(true, i, 1.0)])
                }
                Quantity::Std(o) => {
                    let i = st.index(o)?;
                    (st.std[i][s], vec![(false, i, 1.0)])
                }
                Quantity::AbsDiff(a, b) => {
                    let (ia, ib) = (st.index(a)?, st.index(b)?);
                    let d = st.mean[ia][s] - st.mean[ib][s];
                    let sg = if d > 0.0 {
                        1.0
                    } else if d < 0.0 {
                        -1.0
                    } else {
                        0.0
                    };
                    (d.abs(), vec![(true, ia, sg), (true, ib, -sg)])
                }
            };
            let r = value - term.data_scale * pt.target;
            if !r.is_finite() {
                return Err(Error::NonFinite(format!("loss residual at t = {}", pt.time)));
            }
            total += term.weight * r * r;
            for (is_mean, i, d) in grads {
                let slot = if is_mean { &mut mean_bar } else { &mut std_bar };
                slot[term.experiment][pt.circuit][i][s] += 2.0 * term.weight * r * d;
            }
        }
    }
    Ok((total, mean_bar, std_bar))
}

/// Evaluates the loss on statistics indexed [experiment][circuit].
pub fn loss(stats: &[Vec<TrajectoryStats>], spec: &LossSpec) -> Result<f64> {
    Ok(loss_with_adjoint(stats, spec)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stats(mean: f64) -> TrajectoryStats {
        TrajectoryStats {
            sample_times: vec![0.0, 1.0],
            names: vec!["a".into(), "b".into()],
            mean: vec![vec![mean, mean], vec![0.1, 0.2]],
            std: vec![vec![0.0, 0.3], vec![0.0, 0.0]],
            counts: vec![4, 4],
            lost_fraction: None,
        }
    }

    fn term(q: Quantity, t: f64, target: f64, w: f64) -> LossTerm {
        LossTerm { experiment: 0, quantity: q, points: vec![LossPoint { circuit: 0, time: t, target }], weight: w, data_scale: 1.0 }
    }

    #[test]
    fn squared_error_examples() {
        let st = vec![vec![stats(1.0)]];
        let spec = LossSpec { terms: vec![term(Quantity::Mean("a".into()), 1.0, 1.0, 1.0)] };
        assert_eq!(loss(&st, &spec).unwrap(), 0.0);
        let spec = LossSpec { terms: vec![term(Quantity::Mean("a".into()), 1.0, 0.5, 1.0)] };
        assert_eq!(loss(&st, &spec).unwrap(), 0.25);
        let spec = LossSpec {
            terms: vec![
                term(Quantity::Mean("a".into()), 0.0, 0.5, 1.0 / 7.0),
                term(Quantity::Std("a".into()), 1.0, 0.1, 1.0 / 10.0),
            ],
        };
        let expected = 0.25 / 7.0 + 0.04 / 10.0;
        assert!((loss(&st, &spec).unwrap() - expected).abs() < 1e-15);
        let spec = LossSpec { terms: vec![term(Quantity::AbsDiff("b".into(), "a".into()), 1.0, 0.5, 1.0)] };
        assert!((loss(&st, &spec).unwrap() - 0.09).abs() < 1e-15);
    }

    #[test]
    fn misaligned_or_missing_is_error() {
        let st = vec![vec![stats(1.0)]];
        let spec = LossSpec { terms: vec![term(Quantity::Mean("a".into()), 0.5, 1.0, 1.0)] };
        assert!(loss(&st, &spec).is_err());
        let spec = LossSpec { terms: vec![term(Quantity::Mean("zz".into()), 1.0, 1.0, 1.0)] };
        assert!(matches!(loss(&st, &spec), Err(Error::MissingSeries(_))));
    }
}
