//! Frozen-noise reverse-mode gradient of a loss over ensemble statistics.
//!
//! Pass 1 runs every member forward and forms the batch statistics, the
//! loss and its adjoint with respect to each member's recorded values.
//! Pass 2 sweeps each member backwards through its trajectory, recomputing
//! states from checkpoints, and sums the per-member parameter gradients in
//! member order so the result does not depend on the thread count.

use rayon::prelude::*;

use super::loss::{loss_with_adjoint, LossSpec};
use crate::error::{Error, Result};
use crate::models::engine::{stats_from_records, tracks_loss, CompiledModel, MemberInputs};
use crate::models::{Circuit, MemberRecord, ModelSpec, TrajectoryStats};
use crate::processes::mix_seed;

/// Circuits integrated with one time step and batch size.
#[derive(Debug, Clone, PartialEq)]
pub struct Experiment {
    pub name: String,
    pub circuits: Vec<Circuit>,
    pub dt: f64,
    pub batch: usize,
}

/// How the reverse pass obtains past states.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradMemory {
    /// Keep every state of the trajectory.
    StoreAll,
    /// Keep every k-th state and recompute the segments in between.
    Checkpoint(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientResult {
    pub loss: f64,
    /// stats[experiment][circuit]
    pub stats: Vec<Vec<TrajectoryStats>>,
    /// ∂L/∂(external value), indexed by parameter id.
    pub external: Vec<f64>,
    /// ∂L/∂(internal value), indexed by parameter id.
    pub internal: Vec<f64>,
}

/// Seed of experiment `e` derived from the run seed.
pub(crate) fn experiment_seed(seed: u64, e: usize) -> u64 {
    mix_seed(seed, 0xE0 + e as u64)
}

/// Per-member adjoints of the recorded values given adjoints of the batch
/// mean and (ddof-1) standard deviation. Lost samples get no adjoint.
fn value_adjoints(
    records: &[MemberRecord],
    stats: &[TrajectoryStats],
    mean_bar: &[Vec<Vec<f64>>],
    std_bar: &[Vec<Vec<f64>>],
) -> Vec<Vec<Vec<f64>>> {
    records
        .iter()
        .map(|r| {
            stats
                .iter()
                .enumerate()
                .map(|(ci, st)| {
                    let ns = st.sample_times.len();
                    let mut xb = vec![0.0; r.values[ci].len()];
                    for o in 0..st.names.len() {
                        for s in 0..ns {
                            if !r.retained[ci][s] {
                                continue;
                            }
                            let n = st.counts[s] as f64;
                            let mut g = mean_bar[ci][o][s] / n;
                            let sd = st.std[o][s];
                            if st.counts[s] >= 2 && sd > 0.0 {
                                g += std_bar[ci][o][s] * (r.values[ci][o * ns + s] - st.mean[o][s]) / ((n - 1.0) * sd);
                            }
                            xb[o * ns + s] = g;
                        }
                    }
                    xb
                })
                .collect()
        })
        .collect()
}

/// Loss and exact pathwise gradient for noise tapes drawn from `seed`.
pub fn gradient(
    model: &ModelSpec,
    experiments: &[Experiment],
    spec: &LossSpec,
    seed: u64,
    memory: GradMemory,
) -> Result<GradientResult> {
    let mut compiled = Vec::with_capacity(experiments.len());
    let mut inputs: Vec<Vec<MemberInputs>> = Vec::with_capacity(experiments.len());
    let mut records: Vec<Vec<MemberRecord>> = Vec::with_capacity(experiments.len());
    let mut stats = Vec::with_capacity(experiments.len());
    let track = tracks_loss(model);
    for (e, ex) in experiments.iter().enumerate() {
        if ex.batch == 0 {
            return Err(Error::InvalidArgument(format!("experiment `{}` has batch size 0", ex.name)));
        }
        let cm = CompiledModel::new(model, &ex.circuits, ex.dt)?;
        let eseed = experiment_seed(seed, e);
        let out: Vec<(MemberInputs, MemberRecord)> = (0..ex.batch)
            .into_par_iter()
            .map(|b| {
                let inp = cm.prepare_member(b, eseed)?;
                let mut values = Vec::with_capacity(ex.circuits.len());
                let mut retained = Vec::with_capacity(ex.circuits.len());
                for ci in 0..ex.circuits.len() {
                    values.push(cm.forward(ci, &inp)?);
                    retained.push(cm.retained(ci, &inp));
                }
                Ok((inp, MemberRecord { values, retained }))
            })
            .collect::<Result<Vec<_>>>()?;
        let (inp, rec): (Vec<_>, Vec<_>) = out.into_iter().unzip();
        stats.push(stats_from_records(model, &ex.circuits, &rec, track)?);
        compiled.push(cm);
        inputs.push(inp);
        records.push(rec);
    }

    let (loss, mean_bar, std_bar) = loss_with_adjoint(&stats, spec)?;
    let np = model.params.len();
    let mut external = vec![0.0; np];
    for (e, cm) in compiled.iter().enumerate() {
        let xbar = value_adjoints(&records[e], &stats[e], &mean_bar[e], &std_bar[e]);
        let per_member: Vec<Vec<f64>> = (0..experiments[e].batch)
            .into_par_iter()
            .map(|b| {
                let mut g = vec![0.0; np];
                for ci in 0..experiments[e].circuits.len() {
                    if xbar[b][ci].iter().all(|x| *x == 0.0) {
                        continue;
                    }
                    let every = match memory {
                        GradMemory::StoreAll => cm.circuits[ci].n_steps + 1,
                        GradMemory::Checkpoint(k) => k,
                    };
                    cm.backward(ci, &inputs[e][b], &xbar[b][ci], every, &mut g)?;
                }
                Ok(g)
            })
            .collect::<Result<Vec<_>>>()?;
        for g in per_member {
            for (acc, v) in external.iter_mut().zip(g) {
                *acc += v;
            }
        }
    }
    let internal = model.params.chain_to_internal(&external);
    Ok(GradientResult { loss, stats, external, internal })
}
