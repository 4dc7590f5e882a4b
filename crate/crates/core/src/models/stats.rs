use crate::error::{Error, Result};

/// Batch mean and sample standard deviation (ddof = 1) of every observable
/// at every sample time, over the members that are still retained.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryStats {
    pub sample_times: Vec<f64>,
    pub names: Vec<String>,
    /// mean[o][s]
    pub mean: Vec<Vec<f64>>,
    /// std[o][s]
    pub std: Vec<Vec<f64>>,
    /// Number of retained members per sample time.
    pub counts: Vec<usize>,
    /// Fraction of members lost by each sample time; present when the
    /// model tracks particle loss.
    pub lost_fraction: Option<Vec<f64>>,
}

/// Mean and ddof-1 standard deviation; the deviation is 0 below two samples.
pub fn mean_std(xs: impl Iterator<Item = f64> + Clone) -> (f64, f64, usize) {
    let mut n = 0usize;
    let mut sum = 0.0;
    for x in xs.clone() {
        n += 1;
        sum += x;
    }
    if n == 0 {
        return (f64::NAN, 0.0, 0);
    }
    let mean = sum / n as f64;
    if n < 2 {
        return (mean, 0.0, n);
    }
    let ss: f64 = xs.map(|x| (x - mean) * (x - mean)).sum();
    (mean, (ss / (n - 1) as f64).sqrt(), n)
}

impl TrajectoryStats {
    /// `values[b]` is member b's record laid out as `o * n_samples + s`;
    /// `retained[b][s]` masks members lost before sample s.
    pub fn from_members(
        names: Vec<String>,
        sample_times: Vec<f64>,
        values: &[&[f64]],
        retained: &[Vec<bool>],
        track_loss: bool,
    ) -> Result<Self> {
        let ns = sample_times.len();
        let no = names.len();
        if values.is_empty() {
            return Err(Error::InvalidArgument("no ensemble members".into()));
        }
        let mut mean = vec![vec![0.0; ns]; no];
        let mut std = vec![vec![0.0; ns]; no];
        let mut counts = vec![0; ns];
        for s in 0..ns {
            for o in 0..no {
                let it = values.iter().zip(retained).filter(|(_, r)| r[s]).map(|(v, _)| v[o * ns + s]);
                let (m, sd, c) = mean_std(it);
                mean[o][s] = m;
                std[o][s] = sd;
                counts[s] = c;
            }
            if no == 0 {
                counts[s] = retained.iter().filter(|r| r[s]).count();
            }
        }
        let b = values.len() as f64;
        let lost_fraction = track_loss.then(|| counts.iter().map(|&c| 1.0 - c as f64 / b).collect());
        Ok(TrajectoryStats { sample_times, names, mean, std, counts, lost_fraction })
    }

    pub fn index(&self, name: &str) -> Result<usize> {
        self.names.iter().position(|n| n == name).ok_or_else(|| Error::MissingSeries(name.to_string()))
    }

    pub fn mean_of(&self, name: &str) -> Result<&[f64]> {
        Ok(&self.mean[self.index(name)?])
    }

    pub fn std_of(&self, name: &str) -> Result<&[f64]> {
        Ok(&self.std[self.index(name)?])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sample_std_uses_ddof_one() {
        let (m, s, n) = mean_std([1.0, 2.0, 3.0, 4.0].into_iter());
        assert_eq!((m, n), (2.5, 4));
        assert!((s - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(mean_std([7.0].into_iter()).1, 0.0);
    }
}
