//! Classical processes ε(t) that drive Hamiltonian coefficients.
//!
//! Every stochastic draw a process needs over a trajectory is collected on a
//! [`NoiseTape`] before the forward pass. Process values are then smooth
//! functions of the tape and the flexible parameters, which makes the
//! pathwise (frozen-noise) gradient well defined.
//!
//! Step `n` of a trajectory covers [t_n, t_n + δt]; [`realize`] returns the
//! value each process takes at the step midpoint, which is what the
//! Hamiltonian sees.

pub mod params;
pub mod trap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub use params::{Constraint, ParamId, ParamStore, ProcessParam};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ProcessKind {
    /// A sin(ωt + φ) with φ uniform in [0, 2π) per member.
    Periodic { amplitude: ParamId, omega: f64 },
    /// Stationary Ornstein-Uhlenbeck process with correlation time τ and
    /// standard deviation A, integrated with its exact transition.
    OrnsteinUhlenbeck { tau: ParamId, amplitude: ParamId },
    /// W·u with u uniform in (−1, 1), drawn once per member.
    StaticUniform { half_width: ParamId },
    /// Fresh N(0, A²) value every step.
    WhiteNoise { amplitude: ParamId },
    /// Deterministic value shared by all members.
    Constant { value: ParamId },
}

impl ProcessKind {
    pub fn params(&self) -> Vec<ParamId> {
        match *self {
            ProcessKind::Periodic { amplitude, .. } => vec![amplitude],
            ProcessKind::OrnsteinUhlenbeck { tau, amplitude } => vec![tau, amplitude],
            ProcessKind::StaticUniform { half_width } => vec![half_width],
            ProcessKind::WhiteNoise { amplitude } => vec![amplitude],
            ProcessKind::Constant { value } => vec![value],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProcessSpec {
    pub name: String,
    pub kind: ProcessKind,
}

impl ProcessSpec {
    pub fn new(name: impl Into<String>, kind: ProcessKind) -> Self {
        ProcessSpec { name: name.into(), kind }
    }
}

/// Pre-drawn randomness of one process for one ensemble member.
#[derive(Debug, Clone, PartialEq)]
pub enum NoiseTape {
    Phase(f64),
    Gaussian { init: f64, steps: Vec<f64> },
    Uniform(f64),
    None,
}

/// SplitMix64 finalizer, used to derive independent seeds.
pub fn mix_seed(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Random stream for (seed, member, stream). Streams of one member are
/// independent of each other and of the thread that consumes them.
pub fn member_rng(seed: u64, member: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, member));
    rng.set_stream(stream);
    rng
}

/// Draws the tape for `n_steps` steps. Tapes for a longer horizon extend
/// shorter ones: the first `n` draws never depend on the horizon.
pub fn draw_tape(kind: &ProcessKind, n_steps: usize, rng: &mut impl Rng) -> NoiseTape {
    match kind {
        ProcessKind::Periodic { .. } => NoiseTape::Phase(rng.random_range(0.0..std::f64::consts::TAU)),
        ProcessKind::OrnsteinUhlenbeck { .. } | ProcessKind::WhiteNoise { .. } => {
            let init = rng.sample(StandardNormal);
            let steps = (0..n_steps).map(|_| rng.sample(StandardNormal)).collect();
            NoiseTape::Gaussian { init, steps }
        }
        ProcessKind::StaticUniform { .. } => NoiseTape::Uniform(rng.random_range(-1.0..1.0)),
        ProcessKind::Constant { .. } => NoiseTape::None,
    }
}

/// OU decay factor a = e^(−δt/τ).
pub fn ou_decay(dt: f64, tau: f64) -> f64 {
    (-dt / tau).exp()
}

/// Exact OU transition ε' = aε + A√(1 − a²)ξ.
pub fn ou_transition(eps: f64, a: f64, amplitude: f64, xi: f64) -> f64 {
    a * eps + amplitude * (1.0 - a * a).sqrt() * xi
}

fn tape_mismatch(kind: &ProcessKind) -> Error {
    Error::InvalidArgument(format!("noise tape does not match process {kind:?}"))
}

fn gaussian<'a>(tape: &'a NoiseTape, kind: &ProcessKind, n_steps: usize) -> Result<(f64, &'a [f64])> {
    match tape {
        NoiseTape::Gaussian { init, steps } if steps.len() >= n_steps => Ok((*init, &steps[..n_steps])),
        _ => Err(tape_mismatch(kind)),
    }
}

/// Midpoint values v_0..v_{n_steps−1} of one process realization.
pub fn realize(
    kind: &ProcessKind,
    tape: &NoiseTape,
    params: &ParamStore,
    dt: f64,
    n_steps: usize,
) -> Result<Vec<f64>> {
    match *kind {
        ProcessKind::Periodic { amplitude, omega } => {
            let NoiseTape::Phase(phi) = *tape else { return Err(tape_mismatch(kind)) };
            let a = params.value(amplitude);
            Ok((0..n_steps).map(|n| a * (omega * (n as f64 + 0.5) * dt + phi).sin()).collect())
        }
        ProcessKind::OrnsteinUhlenbeck { tau, amplitude } => {
            let (init, xi) = gaussian(tape, kind, n_steps)?;
            let tau = params.value(tau);
            if tau <= 0.0 {
                return Err(Error::InvalidArgument("OU correlation time must be positive".into()));
            }
            let amp = params.value(amplitude);
            let a = ou_decay(dt, tau);
            let mut eps = amp * init;
            Ok(xi
                .iter()
                .map(|&x| {
                    let next = ou_transition(eps, a, amp, x);
                    let v = 0.5 * (eps + next);
                    eps = next;
                    v
                })
                .collect())
        }
        ProcessKind::StaticUniform { half_width } => {
            let NoiseTape::Uniform(u) = *tape else { return Err(tape_mismatch(kind)) };
            Ok(vec![params.value(half_width) * u; n_steps])
        }
        ProcessKind::WhiteNoise { amplitude } => {
            let (_, xi) = gaussian(tape, kind, n_steps)?;
            let amp = params.value(amplitude);
            Ok(xi.iter().map(|x| amp * x).collect())
        }
        ProcessKind::Constant { value } => Ok(vec![params.value(value); n_steps]),
    }
}

/// Reverse-mode companion of [`realize`]: given ∂L/∂v_n, accumulates
/// ∂L/∂(external parameter) into `grads` (indexed by [`ParamId`]).
pub fn realize_vjp(
    kind: &ProcessKind,
    tape: &NoiseTape,
    params: &ParamStore,
    dt: f64,
    vbar: &[f64],
    grads: &mut [f64],
) -> Result<()> {
    let n_steps = vbar.len();
    match *kind {
        ProcessKind::Periodic { amplitude, omega } => {
            let NoiseTape::Phase(phi) = *tape else { return Err(tape_mismatch(kind)) };
            let mut g = 0.0;
            for (n, vb) in vbar.iter().enumerate() {
                g += vb * (omega * (n as f64 + 0.5) * dt + phi).sin();
            }
            grads[amplitude.0] += g;
        }
        ProcessKind::OrnsteinUhlenbeck { tau, amplitude } => {
            let (init, xi) = gaussian(tape, kind, n_steps)?;
            let tau_v = params.value(tau);
            let amp = params.value(amplitude);
            let a = ou_decay(dt, tau_v);
            let c = (1.0 - a * a).sqrt();
            let mut eps = Vec::with_capacity(n_steps + 1);
            eps.push(amp * init);
            for &x in xi {
                let e = *eps.last().unwrap();
                eps.push(ou_transition(e, a, amp, x));
            }
            let mut abar = 0.0;
            let mut cbar = 0.0;
            let mut ampbar = 0.0;
            // ε̄ of the state after step n, carried backwards.
            let mut ebar_next = 0.0;
            for n in (0..n_steps).rev() {
                ebar_next += 0.5 * vbar[n];
                abar += ebar_next * eps[n];
                ampbar += ebar_next * c * xi[n];
                cbar += ebar_next * amp * xi[n];
                ebar_next = a * ebar_next + 0.5 * vbar[n];
            }
            ampbar += ebar_next * init;
            if c > 0.0 {
                abar += cbar * (-a / c);
            }
            grads[tau.0] += abar * a * dt / (tau_v * tau_v);
            grads[amplitude.0] += ampbar;
        }
        ProcessKind::StaticUniform { half_width } => {
            let NoiseTape::Uniform(u) = *tape else { return Err(tape_mismatch(kind)) };
            grads[half_width.0] += u * vbar.iter().sum::<f64>();
        }
        ProcessKind::WhiteNoise { amplitude } => {
            let (_, xi) = gaussian(tape, kind, n_steps)?;
            grads[amplitude.0] += vbar.iter().zip(xi).map(|(v, x)| v * x).sum::<f64>();
        }
        ProcessKind::Constant { value } => {
            grads[value.0] += vbar.iter().sum::<f64>();
        }
    }
    Ok(())
}

/// Values ε and auxiliaries ξ of one process across an ensemble, advanced
/// one step at a time by the `step_*` functions below.
#[derive(Debug, Clone, PartialEq)]
pub struct ProcessState {
    pub values: Vec<f64>,
    pub aux: Vec<f64>,
    pub time: f64,
}

impl ProcessState {
    pub fn zeros(batch: usize) -> Self {
        ProcessState { values: vec![0.0; batch], aux: vec![0.0; batch], time: 0.0 }
    }

    /// Periodic state with phases φ_b held in `aux`, evaluated at t = 0.
    pub fn periodic(amplitude: f64, phases: Vec<f64>) -> Self {
        let values = phases.iter().map(|p| amplitude * p.sin()).collect();
        ProcessState { values, aux: phases, time: 0.0 }
    }

    pub fn batch(&self) -> usize {
        self.values.len()
    }
}

/// ε(t+δt) = A sin(ω(t+δt) + φ).
pub fn step_periodic(state: &mut ProcessState, amplitude: f64, omega: f64, dt: f64) {
    let t = state.time + dt;
    for (v, phi) in state.values.iter_mut().zip(&state.aux) {
        *v = amplitude * (omega * t + phi).sin();
    }
    state.time = t;
}

/// ε(t+δt) = e^(−δt/τ)ε(t) + A√(1 − e^(−2δt/τ))ξ with ξ pre-drawn.
pub fn step_ou(state: &mut ProcessState, tau: f64, amplitude: f64, dt: f64, xi: &[f64]) -> Result<()> {
    if xi.len() != state.batch() {
        return Err(Error::Dimension(format!("{} noise draws for {} members", xi.len(), state.batch())));
    }
    let a = ou_decay(dt, tau);
    for (v, x) in state.values.iter_mut().zip(xi) {
        *v = ou_transition(*v, a, amplitude, *x);
    }
    state.time += dt;
    Ok(())
}

/// ε = W·u with u pre-drawn uniform in (−1, 1); stepping leaves it unchanged.
pub fn init_static_uniform(state: &mut ProcessState, half_width: f64, u: &[f64]) -> Result<()> {
    if u.len() != state.batch() {
        return Err(Error::Dimension(format!("{} draws for {} members", u.len(), state.batch())));
    }
    for ((v, a), x) in state.values.iter_mut().zip(state.aux.iter_mut()).zip(u) {
        *a = *x;
        *v = half_width * x;
    }
    Ok(())
}

pub fn step_static(state: &mut ProcessState, dt: f64) {
    state.time += dt;
}

/// ε = Aξ with fresh ξ every step.
pub fn step_white_noise(state: &mut ProcessState, amplitude: f64, dt: f64, xi: &[f64]) -> Result<()> {
    if xi.len() != state.batch() {
        return Err(Error::Dimension(format!("{} noise draws for {} members", xi.len(), state.batch())));
    }
    for (v, x) in state.values.iter_mut().zip(xi) {
        *v = amplitude * x;
    }
    state.time += dt;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store_with(values: &[(&str, f64, Constraint)]) -> (ParamStore, Vec<ParamId>) {
        let mut s = ParamStore::new();
        let ids = values.iter().map(|(n, v, c)| s.flexible(n, *v, *c).unwrap()).collect();
        (s, ids)
    }

    #[test]
    fn periodic_peak() {
        let mut st = ProcessState::periodic(1.0, vec![0.0]);
        step_periodic(&mut st, 1.0, std::f64::consts::TAU, 0.25);
        assert!((st.values[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn ou_zero_amplitude_decays() {
        let mut st = ProcessState { values: vec![2.0], aux: vec![0.0], time: 0.0 };
        step_ou(&mut st, 3.0, 0.0, 0.5, &[1.7]).unwrap();
        assert!((st.values[0] - 2.0 * (-0.5f64 / 3.0).exp()).abs() < 1e-15);
        step_ou(&mut st, 1e-3, 1.5, 1e3, &[0.4]).unwrap();
        assert!((st.values[0] - 0.6).abs() < 1e-12);
    }

    #[test]
    fn tapes_extend_prefix() {
        let kind = ProcessKind::WhiteNoise { amplitude: ParamId(0) };
        let a = draw_tape(&kind, 10, &mut member_rng(7, 3, 1));
        let b = draw_tape(&kind, 25, &mut member_rng(7, 3, 1));
        let (NoiseTape::Gaussian { steps: sa, .. }, NoiseTape::Gaussian { steps: sb, .. }) = (a, b) else {
            panic!()
        };
        assert_eq!(sa[..], sb[..10]);
    }

    #[test]
    fn realize_vjp_matches_finite_difference() {
        let (mut s, ids) = store_with(&[
            ("tau", 0.7, Constraint::Positive),
            ("amp", 0.4, Constraint::Positive),
            ("w", 0.9, Constraint::Positive),
            ("c", -0.2, Constraint::Free),
        ]);
        let kinds = [
            ProcessKind::OrnsteinUhlenbeck { tau: ids[0], amplitude: ids[1] },
            ProcessKind::Periodic { amplitude: ids[1], omega: 3.1 },
            ProcessKind::StaticUniform { half_width: ids[2] },
            ProcessKind::WhiteNoise { amplitude: ids[1] },
            ProcessKind::Constant { value: ids[3] },
        ];
        let dt = 0.05;
        let n = 40;
        let weights: Vec<f64> = (0..n).map(|k| ((k * 7 % 11) as f64 - 5.0) / 5.0).collect();
        for (i, kind) in kinds.iter().enumerate() {
            let tape = draw_tape(kind, n, &mut member_rng(11, 0, i as u64));
            let f = |s: &ParamStore| -> f64 {
                realize(kind, &tape, s, dt, n).unwrap().iter().zip(&weights).map(|(v, w)| v * w).sum()
            };
            let mut grads = vec![0.0; s.len()];
            realize_vjp(kind, &tape, &s, dt, &weights, &mut grads).unwrap();
            for id in kind.params() {
                let x = s.value(id);
                let h = 1e-6 * x.abs().max(1e-3);
                s.set_value(id, x + h).unwrap();
                let fp = f(&s);
                s.set_value(id, x - h).unwrap();
                let fm = f(&s);
                s.set_value(id, x).unwrap();
                let fd = (fp - fm) / (2.0 * h);
                assert!((fd - grads[id.0]).abs() <= 1e-6 * fd.abs().max(1.0), "{kind:?}: fd {fd} vs {}", grads[id.0]);
            }
        }
    }
}
