//! The `diqcd` command line: data generation, training, simulation,
//! mobility estimation and manifest replay.
//!
//! A run is configured by a preset, optionally overridden by a TOML file
//! (`--config`); unknown keys are rejected. Every command writes a
//! `<command>.manifest.toml` recording the effective configuration, seed,
//! inputs and SHA-256 of every output, which `diqcd replay` uses to
//! regenerate and verify the outputs.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::caf::{self, CaFParams, ContrastData, Scheme};
use crate::dataio::{self, write_atomic, Dataset, RunManifest, Schema, WALL_CLOCK_KEY};
use crate::error::{Error, Result};
use crate::grad::{train, AdamState, EpochReport, GradMemory, SeedPolicy, TrainConfig};
use crate::models::{simulate_circuits, EnsembleConfig, ModelSpec};
use crate::rubrene::{self, DiqcdParams, HolsteinParams, RegimeCriteria, RubreneTrainConfig, SpinBosonConfig, SpinBosonData};
use crate::units::TimeUnit;

const CONFIG_KEYS: &str = "\
Config keys (TOML; every key is optional and overrides the preset):
  seed                                  base seed (overridden by --seed)
  case                                  \"caf\" or \"rubrene\"
  [caf]     two_molecule, separation_um, pinned, shared_noise, fidelity, j0,
            gate_depth_mk, max_depth_mk, waist_um, wavelength_um,
            t_radial_uk, t_axial_uk, damping_ms, md_substep_ms,
            data_batch, simulate_batch, bell_blocks, bell_dt_ms
  [caf.truth], [caf.init]
            line_amplitudes, ou_tau_ms, ou_amplitude, static_half_width,
            gamma_x, gamma_z, pulse_error
  [rubrene] temperature_k, modes, n_max, phi, trajectories, generator_dt_fs,
            horizon_fs, hopping_cm, spacing_angstrom, simulate_batch
  [lattice] sites, batch, dt_fs, horizon_fs, sample_every_fs
  [training] epochs, lr, rate_lr, batch, dt, std_weight, fit_window,
            seed_policy (\"fresh\" | \"frozen\"), checkpoint_every
  [data]    plain, echo, xy8, bell, spin_boson  (dataset paths)";

#[derive(Debug, Parser)]
#[command(name = "diqcd", version, about = "Differentiable ensemble Lindblad dynamics: CaF qubits and Rubrene transport", after_help = CONFIG_KEYS)]
pub struct Cli {
    /// TOML file overriding the preset.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Base seed; overrides `seed` in the configuration.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    pub out: PathBuf,
    /// Worker threads (falls back to DIQCD_THREADS).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Shipped configuration to start from.
    #[arg(long, global = true)]
    pub preset: Option<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic datasets (CaF contrast or Bell data, Rubrene spin-boson data).
    #[command(after_help = CONFIG_KEYS)]
    GenData,
    /// Fit the one-molecule model to datasets; writes the parameter manifest and loss history.
    #[command(after_help = CONFIG_KEYS)]
    Train {
        /// Continue from a previous train manifest.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Total epochs to reach (overrides `training.epochs`).
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Simulate ensemble statistics, optionally with trained parameters.
    #[command(after_help = CONFIG_KEYS)]
    Simulate {
        /// Train manifest providing parameter values.
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Propagate the lattice model and estimate the carrier mobility.
    #[command(after_help = CONFIG_KEYS)]
    Mobility {
        /// Train manifest providing the fitted one-molecule parameters.
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Re-run the command recorded in a manifest and verify its outputs.
    Replay {
        manifest: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Case {
    Caf,
    Rubrene,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseSection {
    pub line_amplitudes: [f64; 4],
    pub ou_tau_ms: f64,
    pub ou_amplitude: f64,
    pub static_half_width: f64,
    pub gamma_x: f64,
    pub gamma_z: f64,
    pub pulse_error: f64,
}

impl Default for NoiseSection {
    fn default() -> Self {
        Self::from_params(&caf_ground_truth())
    }
}

impl NoiseSection {
    fn from_params(p: &CaFParams) -> Self {
        NoiseSection {
            line_amplitudes: p.line_amplitudes,
            ou_tau_ms: p.ou_tau,
            ou_amplitude: p.ou_amplitude,
            static_half_width: p.static_half_width,
            gamma_x: p.gamma_x,
            gamma_z: p.gamma_z,
            pulse_error: p.pulse_error,
        }
    }

    fn apply(&self, p: &mut CaFParams) {
        p.line_amplitudes = self.line_amplitudes;
        p.ou_tau = self.ou_tau_ms;
        p.ou_amplitude = self.ou_amplitude;
        p.static_half_width = self.static_half_width;
        p.gamma_x = self.gamma_x;
        p.gamma_z = self.gamma_z;
        p.pulse_error = self.pulse_error;
    }
}

/// Ground truth of the shipped synthetic CaF data.
pub fn caf_ground_truth() -> CaFParams {
    CaFParams::default()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CafSection {
    pub two_molecule: bool,
    pub separation_um: f64,
    pub pinned: bool,
    pub shared_noise: bool,
    pub fidelity: f64,
    pub j0: f64,
    pub gate_depth_mk: f64,
    pub max_depth_mk: f64,
    pub waist_um: f64,
    pub wavelength_um: f64,
    pub t_radial_uk: f64,
    pub t_axial_uk: f64,
    pub damping_ms: f64,
    pub md_substep_ms: f64,
    /// Ensemble size of synthetic data generation.
    pub data_batch: usize,
    pub simulate_batch: usize,
    /// XY8 blocks of the Bell protocol (samples at every block boundary).
    pub bell_blocks: usize,
    pub bell_dt_ms: f64,
    pub truth: NoiseSection,
    pub init: NoiseSection,
}

impl Default for CafSection {
    fn default() -> Self {
        let p = CaFParams::default();
        CafSection {
            two_molecule: false,
            separation_um: 2.0,
            pinned: false,
            shared_noise: p.shared_noise,
            fidelity: p.fidelity,
            j0: p.j0,
            gate_depth_mk: p.trap.gate_depth_mk,
            max_depth_mk: p.trap.max_depth_mk,
            waist_um: p.trap.waist_um,
            wavelength_um: p.trap.wavelength_um,
            t_radial_uk: p.trap.t_radial_uk,
            t_axial_uk: p.trap.t_axial_uk,
            damping_ms: p.trap.damping_ms,
            md_substep_ms: p.trap.md_substep_ms,
            data_batch: 1024,
            simulate_batch: 512,
            bell_blocks: 16,
            bell_dt_ms: 0.005,
            truth: NoiseSection::default(),
            init: NoiseSection::default(),
        }
    }
}

impl CafSection {
    fn params(&self, noise: &NoiseSection, rate_lr: f64) -> CaFParams {
        let mut p = CaFParams {
            fidelity: self.fidelity,
            j0: self.j0,
            shared_noise: self.shared_noise,
            rate_lr,
            ..CaFParams::default()
        };
        p.trap.gate_depth_mk = self.gate_depth_mk;
        p.trap.max_depth_mk = self.max_depth_mk;
        p.trap.waist_um = self.waist_um;
        p.trap.wavelength_um = self.wavelength_um;
        p.trap.t_radial_uk = self.t_radial_uk;
        p.trap.t_axial_uk = self.t_axial_uk;
        p.trap.damping_ms = self.damping_ms;
        p.trap.md_substep_ms = self.md_substep_ms;
        noise.apply(&mut p);
        p
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RubreneSection {
    pub temperature_k: f64,
    /// Indices into the nine-mode table.
    pub modes: Vec<usize>,
    pub n_max: Option<Vec<usize>>,
    pub phi: f64,
    pub trajectories: usize,
    pub generator_dt_fs: f64,
    pub horizon_fs: f64,
    pub hopping_cm: f64,
    pub spacing_angstrom: f64,
    pub simulate_batch: usize,
}

impl Default for RubreneSection {
    fn default() -> Self {
        let h = HolsteinParams::default();
        let g = SpinBosonConfig::desk();
        RubreneSection {
            temperature_k: h.temperature_k,
            modes: vec![0, 1, 2],
            n_max: None,
            phi: g.phi,
            trajectories: g.batch,
            generator_dt_fs: g.dt_fs,
            horizon_fs: g.horizon_fs,
            hopping_cm: h.hopping,
            spacing_angstrom: h.spacing_angstrom,
            simulate_batch: 512,
        }
    }
}

impl RubreneSection {
    fn holstein(&self) -> Result<HolsteinParams> {
        let h = HolsteinParams {
            hopping: self.hopping_cm,
            spacing_angstrom: self.spacing_angstrom,
            temperature_k: self.temperature_k,
            ..HolsteinParams::default()
        }
        .with_modes(&self.modes)?;
        h.validate()?;
        Ok(h)
    }

    fn generator(&self) -> Result<SpinBosonConfig> {
        Ok(SpinBosonConfig {
            modes: self.holstein()?.modes,
            n_max: self.n_max.clone(),
            phi: self.phi,
            batch: self.trajectories,
            dt_fs: self.generator_dt_fs,
            horizon_fs: self.horizon_fs,
            ..SpinBosonConfig::default()
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LatticeSection {
    pub sites: usize,
    pub batch: usize,
    pub dt_fs: f64,
    pub horizon_fs: f64,
    pub sample_every_fs: f64,
}

impl Default for LatticeSection {
    fn default() -> Self {
        LatticeSection { sites: 51, batch: 64, dt_fs: 0.01, horizon_fs: 60.0, sample_every_fs: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingSection {
    pub epochs: usize,
    pub lr: f64,
    /// Learning rate of the damping rates (CaF).
    pub rate_lr: f64,
    pub batch: usize,
    /// Integration step; CaF uses the per-scheme steps when unset.
    pub dt: Option<f64>,
    pub std_weight: f64,
    pub fit_window: [f64; 2],
    pub seed_policy: String,
    /// Checkpoint spacing of the backward pass (steps); stores every step when unset.
    pub checkpoint_every: Option<usize>,
}

impl Default for TrainingSection {
    fn default() -> Self {
        TrainingSection {
            epochs: 200,
            lr: 0.1,
            rate_lr: 0.001,
            batch: 256,
            dt: None,
            std_weight: 0.1,
            fit_window: [0.0, 70.0],
            seed_policy: "fresh".into(),
            checkpoint_every: None,
        }
    }
}

impl TrainingSection {
    fn config(&self, seed: u64) -> Result<TrainConfig> {
        let mut cfg = TrainConfig::new(self.epochs, self.lr, seed);
        cfg.seed_policy = match self.seed_policy.as_str() {
            "fresh" => SeedPolicy::Fresh,
            "frozen" => SeedPolicy::Frozen,
            other => return Err(Error::Config(format!("training.seed_policy `{other}` is not \"fresh\" or \"frozen\""))),
        };
        cfg.memory = match self.checkpoint_every {
            None => GradMemory::StoreAll,
            Some(0) => return Err(Error::Config("training.checkpoint_every must be positive".into())),
            Some(k) => GradMemory::Checkpoint(k),
        };
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    pub plain: Option<PathBuf>,
    pub echo: Option<PathBuf>,
    pub xy8: Option<PathBuf>,
    pub bell: Option<PathBuf>,
    pub spin_boson: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub case: Case,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub caf: CafSection,
    #[serde(default)]
    pub rubrene: RubreneSection,
    #[serde(default)]
    pub lattice: LatticeSection,
    #[serde(default)]
    pub training: TrainingSection,
    #[serde(default)]
    pub data: DataSection,
}

pub const PRESETS: [&str; 6] = ["rubrene-300K-small", "rubrene-300K-full", "caf-synthetic", "caf-full-recipe", "caf-bell-pinned", "caf-bell"];

/// Shipped configurations.
pub fn preset(name: &str) -> Result<Config> {
    let caf = |caf: CafSection, training: TrainingSection| Config {
        case: Case::Caf,
        seed: 0,
        caf,
        rubrene: RubreneSection::default(),
        lattice: LatticeSection::default(),
        training,
        data: DataSection::default(),
    };
    let rub = |rubrene: RubreneSection, lattice: LatticeSection, training: TrainingSection| Config {
        case: Case::Rubrene,
        seed: 0,
        caf: CafSection::default(),
        rubrene,
        lattice,
        training,
        data: DataSection::default(),
    };
    let rubrene_training =
        TrainingSection { epochs: 200, lr: 0.3, batch: 512, dt: Some(0.05), std_weight: 0.1, fit_window: [0.0, 70.0], ..TrainingSection::default() };
    let perturbed = NoiseSection {
        line_amplitudes: [0.7, 0.13, 0.14, 0.03],
        ou_tau_ms: 2.8,
        ou_amplitude: 0.03,
        static_half_width: 1.4,
        gamma_x: 0.003,
        gamma_z: 0.026,
        pulse_error: 0.003,
    };
    let zero = NoiseSection::from_params(&CaFParams::noiseless());
    Ok(match name {
        "rubrene-300K-small" => rub(RubreneSection::default(), LatticeSection::default(), rubrene_training),
        "rubrene-300K-full" => rub(
            RubreneSection { modes: (0..9).collect(), ..RubreneSection::default() },
            LatticeSection { sites: 151, batch: 512, horizon_fs: 100.0, ..LatticeSection::default() },
            rubrene_training,
        ),
        "caf-synthetic" => caf(CafSection { init: perturbed, ..CafSection::default() }, TrainingSection::default()),
        "caf-full-recipe" => caf(CafSection { init: perturbed, ..CafSection::default() }, TrainingSection { batch: 512, ..TrainingSection::default() }),
        "caf-bell-pinned" => caf(
            CafSection { two_molecule: true, pinned: true, truth: zero.clone(), init: zero, simulate_batch: 1, data_batch: 1, ..CafSection::default() },
            TrainingSection::default(),
        ),
        "caf-bell" => caf(
            CafSection { two_molecule: true, pinned: false, bell_dt_ms: 0.01, simulate_batch: 256, data_batch: 256, ..CafSection::default() },
            TrainingSection::default(),
        ),
        other => return Err(Error::Config(format!("unknown preset `{other}`; available: {}", PRESETS.join(", ")))),
    })
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Preset (default `caf-synthetic`) overlaid with the TOML text `overrides`.
pub fn resolve_config(preset_name: Option<&str>, overrides: Option<&str>, seed: Option<u64>) -> Result<Config> {
    let base = preset(preset_name.unwrap_or("caf-synthetic"))?;
    let mut table = toml::Table::try_from(&base).map_err(|e| Error::Config(e.to_string()))?;
    if let Some(text) = overrides {
        let over: toml::Table = text.parse().map_err(|e| Error::Config(format!("config: {e}")))?;
        merge(&mut table, over);
    }
    let mut cfg: Config = toml::Value::Table(table).try_into().map_err(|e| Error::Config(format!("config: {e}")))?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    validate(&cfg)?;
    Ok(cfg)
}

fn validate(cfg: &Config) -> Result<()> {
    let bad = |m: String| Err(Error::Config(m));
    match cfg.case {
        Case::Caf => {
            let c = &cfg.caf;
            c.params(&c.truth, cfg.training.rate_lr).validate()?;
            c.params(&c.init, cfg.training.rate_lr).validate()?;
            if c.two_molecule && !(c.separation_um >= caf::MIN_SEPARATION_UM) {
                return Err(Error::Regime(format!(
                    "tweezer separation {} µm is below {} µm",
                    c.separation_um,
                    caf::MIN_SEPARATION_UM
                )));
            }
            if c.data_batch == 0 || c.simulate_batch == 0 {
                return bad("caf batch sizes must be positive".into());
            }
            if !(c.bell_dt_ms > 0.0) || !(c.md_substep_ms > 0.0) {
                return bad("caf time steps must be positive".into());
            }
        }
        Case::Rubrene => {
            let r = &cfg.rubrene;
            if !(r.temperature_k > 0.0 && r.temperature_k.is_finite()) {
                return bad(format!("rubrene.temperature_k = {} must be positive", r.temperature_k));
            }
            r.holstein()?;
            if r.trajectories == 0 || r.simulate_batch == 0 {
                return bad("rubrene batch sizes must be positive".into());
            }
            if !(r.horizon_fs > 0.0) || !(r.generator_dt_fs > 0.0) {
                return bad("rubrene horizon and time step must be positive".into());
            }
            let l = &cfg.lattice;
            if l.sites % 2 == 0 || l.sites < 2 * rubrene::EDGE_SITES + 1 {
                return bad(format!("lattice.sites = {} must be odd and at least {}", l.sites, 2 * rubrene::EDGE_SITES + 1));
            }
            if l.batch == 0 || !(l.dt_fs > 0.0) || !(l.horizon_fs > 0.0) || !(l.sample_every_fs > 0.0) {
                return bad("lattice batch, time step, horizon and sample spacing must be positive".into());
            }
            let [a, b] = cfg.training.fit_window;
            if !(a >= 0.0 && b > a) {
                return bad(format!("training.fit_window [{a}, {b}] is not an interval"));
            }
        }
    }
    let t = &cfg.training;
    if t.epochs == 0 || t.batch == 0 || !(t.lr > 0.0) || !(t.rate_lr > 0.0) {
        return bad("training epochs, batch and learning rates must be positive".into());
    }
    if t.dt.is_some_and(|d| !(d > 0.0)) || !(t.std_weight >= 0.0) {
        return bad("training.dt must be positive and training.std_weight non-negative".into());
    }
    t.config(cfg.seed)?;
    Ok(())
}

/// Exit status for an error: 2 configuration or validation, 3 numerical
/// failure, 4 regime rejection.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::NonFinite(_) | Error::NonFiniteAdjoint { .. } | Error::NotHermitian(_) => 3,
        Error::Regime(_) | Error::NoLinearRegime(_) => 4,
        _ => 2,
    }
}

/// Parses `args` and runs the command; returns the process exit status.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn init_threads(requested: Option<usize>) -> Result<()> {
    let n = match requested {
        Some(n) => Some(n),
        None => match std::env::var("DIQCD_THREADS") {
            Ok(s) => Some(s.trim().parse().map_err(|_| Error::Config(format!("DIQCD_THREADS=`{s}` is not a thread count")))?),
            Err(_) => None,
        },
    };
    if let Some(n) = n {
        if n == 0 {
            return Err(Error::Config("thread count must be positive".into()));
        }
        // A second initialization in the same process keeps the first pool.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

pub fn run(cli: &Cli) -> Result<()> {
    init_threads(cli.threads)?;
    std::fs::create_dir_all(&cli.out)?;
    if let Command::Replay { manifest } = &cli.command {
        return replay(manifest, &cli.out);
    }
    let overrides = match &cli.config {
        Some(p) => Some(std::fs::read_to_string(p)?),
        None => None,
    };
    let (cfg, preset_name) = match &cli.command {
        Command::Train { resume: Some(m), .. } => {
            let man = RunManifest::load(m)?;
            let text = man.get_str("config.toml")?.to_string();
            (parse_effective(&text)?, man.get_str("run.preset").unwrap_or("").to_string())
        }
        _ => (resolve_config(cli.preset.as_deref(), overrides.as_deref(), cli.seed)?, cli.preset.clone().unwrap_or_default()),
    };
    let inv = Invocation::from_command(&cli.command)?;
    execute(&cfg, &preset_name, &inv, &cli.out)
}

fn parse_effective(text: &str) -> Result<Config> {
    let cfg: Config = toml::from_str(text).map_err(|e| Error::Config(format!("embedded config: {e}")))?;
    validate(&cfg)?;
    Ok(cfg)
}

/// A command with its file inputs resolved.
#[derive(Debug, Clone)]
struct Invocation {
    name: &'static str,
    params_manifest: Option<PathBuf>,
    resume: Option<PathBuf>,
    epochs: Option<usize>,
}

impl Invocation {
    fn from_command(c: &Command) -> Result<Self> {
        let inv = |name, params_manifest: &Option<PathBuf>| Invocation { name, params_manifest: params_manifest.clone(), resume: None, epochs: None };
        Ok(match c {
            Command::GenData => inv("gen-data", &None),
            Command::Train { resume, epochs } => Invocation { name: "train", params_manifest: None, resume: resume.clone(), epochs: *epochs },
            Command::Simulate { manifest } => inv("simulate", manifest),
            Command::Mobility { manifest } => inv("mobility", manifest),
            Command::Replay { .. } => return Err(Error::Config("replay cannot be nested".into())),
        })
    }
}

/// Output files of one run, written atomically and hashed.
struct Outputs<'a> {
    dir: &'a Path,
    manifest: RunManifest,
}

impl Outputs<'_> {
    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        write_atomic(&self.dir.join(name), bytes)?;
        self.manifest.set(&format!("outputs.{}", name.replace('.', "_")), dataio::sha256_hex(bytes));
        Ok(())
    }

    fn input(&mut self, key: &str, path: &Path) -> Result<Vec<u8>> {
        let bytes = std::fs::read(path)?;
        self.manifest.set(&format!("inputs.{key}.path"), path.to_string_lossy().to_string());
        self.manifest.set(&format!("inputs.{key}.sha256"), dataio::sha256_hex(&bytes));
        Ok(bytes)
    }
}

fn execute(cfg: &Config, preset_name: &str, inv: &Invocation, out: &Path) -> Result<()> {
    let start = Instant::now();
    let text = toml::to_string(cfg).map_err(|e| Error::Config(e.to_string()))?;
    let mut manifest = RunManifest::new();
    manifest.set("run.command", inv.name);
    manifest.set("run.preset", preset_name);
    manifest.set("run.seed", cfg.seed.to_string());
    manifest.set("config.toml", text.clone());
    manifest.set("config.sha256", dataio::sha256_hex(text.as_bytes()));
    let mut outputs = Outputs { dir: out, manifest };
    match (inv.name, cfg.case) {
        ("gen-data", Case::Caf) => gen_caf(cfg, &mut outputs)?,
        ("gen-data", Case::Rubrene) => gen_rubrene(cfg, &mut outputs)?,
        ("train", Case::Caf) => train_caf_cmd(cfg, inv, &mut outputs)?,
        ("train", Case::Rubrene) => train_rubrene_cmd(cfg, inv, &mut outputs)?,
        ("simulate", Case::Caf) => simulate_caf(cfg, inv, &mut outputs)?,
        ("simulate", Case::Rubrene) => simulate_rubrene(cfg, inv, &mut outputs)?,
        ("mobility", Case::Rubrene) => mobility_cmd(cfg, inv, &mut outputs)?,
        ("mobility", Case::Caf) => return Err(Error::Config("mobility needs case = \"rubrene\"".into())),
        (other, _) => return Err(Error::Config(format!("unknown command `{other}`"))),
    }
    outputs.manifest.set(WALL_CLOCK_KEY, start.elapsed().as_secs_f64());
    let path = out.join(format!("{}.manifest.toml", inv.name));
    outputs.manifest.save(&path)
}

fn data_path(explicit: &Option<PathBuf>, out: &Path, default: &str) -> PathBuf {
    explicit.clone().unwrap_or_else(|| out.join(default))
}

fn gen_caf(cfg: &Config, o: &mut Outputs) -> Result<()> {
    let c = &cfg.caf;
    let truth = c.params(&c.truth, cfg.training.rate_lr);
    if c.two_molecule {
        let (t, p) = bell_probability(&truth, c, cfg.seed)?;
        let f2 = truth.fidelity * truth.fidelity;
        let ds = Dataset::new(Schema::caf_bell(), t, vec![p.iter().map(|x| f2 * x).collect()])?
            .with_comment(format!(" synthetic Bell data, seed {}, scaled by fidelity^2", cfg.seed));
        return o.write("bell.csv", ds.to_csv()?.as_bytes());
    }
    let data = caf::synthetic_datasets(&truth, c.data_batch, cfg.seed)?;
    for d in data {
        let ds = Dataset::new(Schema::caf_contrast(), d.times, vec![d.values])?
            .with_comment(format!(" synthetic {} contrast, seed {}, scaled by fidelity", d.scheme.name(), cfg.seed));
        o.write(&format!("{}.csv", d.scheme.name()), ds.to_csv()?.as_bytes())?;
    }
    Ok(())
}

fn bell_stats(params: &CaFParams, c: &CafSection, seed: u64, batch: usize) -> Result<crate::models::TrajectoryStats> {
    let model = caf::build_two_molecule_model(params, c.separation_um, c.pinned)?;
    let circuit = caf::bell_circuit(&model, &(0..=c.bell_blocks).collect::<Vec<_>>())?;
    Ok(simulate_circuits(&model, &[circuit], &EnsembleConfig { batch, dt: c.bell_dt_ms, seed })?.remove(0))
}

fn bell_probability(params: &CaFParams, c: &CafSection, seed: u64) -> Result<(Vec<f64>, Vec<f64>)> {
    let st = bell_stats(params, c, seed, c.data_batch)?;
    Ok((st.sample_times.clone(), st.mean_of(caf::P_UU)?.to_vec()))
}

fn gen_rubrene(cfg: &Config, o: &mut Outputs) -> Result<()> {
    let r = &cfg.rubrene;
    let data = rubrene::gen_one_molecule_data(&r.generator()?, r.temperature_k, cfg.seed)?;
    let ds = rubrene_dataset(&data)?.with_comment(format!(
        " spin-boson generator, T = {} K, modes {:?}, seed {}",
        r.temperature_k, r.modes, cfg.seed
    ));
    o.write("spin_boson.csv", ds.to_csv()?.as_bytes())
}

fn rubrene_dataset(d: &SpinBosonData) -> Result<Dataset> {
    Dataset::new(Schema::rubrene(), d.t_fs.clone(), vec![d.mean_sx.clone(), d.mean_sy.clone(), d.std_sx.clone(), d.std_sy.clone()])
}

fn load_contrast(o: &mut Outputs, cfg: &Config, scheme: Scheme) -> Result<ContrastData> {
    let explicit = match scheme {
        Scheme::Plain => &cfg.data.plain,
        Scheme::Echo => &cfg.data.echo,
        Scheme::Xy8 => &cfg.data.xy8,
    };
    let path = data_path(explicit, o.dir, &format!("{}.csv", scheme.name()));
    let bytes = o.input(scheme.name(), &path)?;
    let text = String::from_utf8(bytes).map_err(|_| Error::Dataset { line: 1, msg: "file is not UTF-8".into() })?;
    let ds = Dataset::parse(&text, &Schema::caf_contrast())?;
    Ok(ContrastData { scheme, times: ds.times.clone(), values: ds.column("C")?.to_vec() })
}

fn load_spin_boson(o: &mut Outputs, cfg: &Config) -> Result<SpinBosonData> {
    let path = data_path(&cfg.data.spin_boson, o.dir, "spin_boson.csv");
    let bytes = o.input("spin_boson", &path)?;
    let text = String::from_utf8(bytes).map_err(|_| Error::Dataset { line: 1, msg: "file is not UTF-8".into() })?;
    let ds = Dataset::parse(&text, &Schema::rubrene())?;
    Ok(SpinBosonData {
        t_fs: ds.times.clone(),
        mean_sx: ds.column("mean_sx")?.to_vec(),
        mean_sy: ds.column("mean_sy")?.to_vec(),
        std_sx: ds.column("std_sx")?.to_vec(),
        std_sy: ds.column("std_sy")?.to_vec(),
    })
}

fn record_params(m: &mut RunManifest, model: &ModelSpec) {
    for (_, p) in model.params.iter() {
        m.set(&format!("params.{}", p.name), p.internal);
        m.set(&format!("values.{}", p.name), p.external());
    }
}

/// Restores internal parameter values recorded by [`record_params`].
fn restore_params(m: &RunManifest, model: &mut ModelSpec) -> Result<()> {
    let section = m.section("params");
    let ids: Vec<_> = model.params.iter().map(|(id, p)| (id, p.name.clone())).collect();
    for (id, name) in ids {
        let v = section.get(&name).ok_or_else(|| Error::Config(format!("manifest lacks parameter `{name}`")))?;
        let x = v.as_float().ok_or_else(|| Error::Config(format!("parameter `{name}` is not a number")))?;
        model.params.get_mut(id).internal = x;
    }
    Ok(())
}

fn history_csv(history: &[f64]) -> String {
    let mut s = String::from("epoch,loss\n");
    for (e, l) in history.iter().enumerate() {
        s.push_str(&format!("{e},{l:.11e}\n"));
    }
    s
}

/// Shared training driver: restores a resumed state, trains up to the
/// requested epoch, records parameters and optimizer state.
fn run_training(
    model: &mut ModelSpec,
    experiments: &[crate::grad::Experiment],
    spec: &crate::grad::LossSpec,
    tcfg: &TrainConfig,
    inv: &Invocation,
    o: &mut Outputs,
) -> Result<()> {
    let mut history = Vec::new();
    let mut start = 0;
    let mut state = None;
    if let Some(path) = &inv.resume {
        let bytes = o.input("resume", path)?;
        let prev = RunManifest::parse(std::str::from_utf8(&bytes).map_err(|_| Error::Config("manifest is not UTF-8".into()))?)?;
        restore_params(&prev, model)?;
        history = prev.get_f64s("training.history")?;
        start = prev.get_u64("training.next_epoch")? as usize;
        state = Some(AdamState {
            m: prev.get_f64s("adam.m")?,
            v: prev.get_f64s("adam.v")?,
            t: prev.get_u64("adam.t")?,
        });
    }
    let mut tcfg = tcfg.clone();
    if let Some(e) = inv.epochs {
        tcfg.epochs = e;
    }
    if start >= tcfg.epochs {
        return Err(Error::Config(format!("manifest already reached epoch {start}; ask for more epochs")));
    }
    let res = train(model, experiments, spec, &tcfg, start, state, |r: &EpochReport| {
        eprintln!("epoch {:>4}  loss {:.6e}", r.epoch, r.loss);
    })?;
    history.extend(&res.history);
    o.write("loss_history.csv", history_csv(&history).as_bytes())?;
    let m = &mut o.manifest;
    record_params(m, model);
    m.set_f64s("training.history", &history);
    m.set("training.next_epoch", res.next_epoch as i64);
    m.set_f64s("adam.m", &res.adam.m);
    m.set_f64s("adam.v", &res.adam.v);
    m.set("adam.t", res.adam.t as i64);
    Ok(())
}

fn train_caf_cmd(cfg: &Config, inv: &Invocation, o: &mut Outputs) -> Result<()> {
    let c = &cfg.caf;
    if c.two_molecule {
        return Err(Error::Config("training fits the one-molecule contrast data; set caf.two_molecule = false".into()));
    }
    let data = [Scheme::Plain, Scheme::Echo, Scheme::Xy8]
        .iter()
        .map(|&s| load_contrast(o, cfg, s))
        .collect::<Result<Vec<_>>>()?;
    let init = c.params(&c.init, cfg.training.rate_lr);
    let (mut model, _, p) = caf::one_molecule_model(&init)?;
    let (mut experiments, spec) = caf::training_problem(p, &data, init.fidelity, cfg.training.batch)?;
    if let Some(dt) = cfg.training.dt {
        experiments.iter_mut().for_each(|e| e.dt = dt);
    }
    run_training(&mut model, &experiments, &spec, &cfg.training.config(cfg.seed)?, inv, o)
}

fn train_rubrene_cmd(cfg: &Config, inv: &Invocation, o: &mut Outputs) -> Result<()> {
    let data = load_spin_boson(o, cfg)?;
    let init = DiqcdParams { phi: cfg.rubrene.phi, ..DiqcdParams::initial(&cfg.rubrene.holstein()?)? };
    let mut model = rubrene::build_one_molecule_diqcd(&init)?;
    let t = &cfg.training;
    let rcfg = RubreneTrainConfig {
        fit_window: (t.fit_window[0], t.fit_window[1]),
        std_weight: t.std_weight,
        batch: t.batch,
        dt_fs: t.dt.unwrap_or(0.05),
        train: t.config(cfg.seed)?,
    };
    let (exp, spec) = rubrene::training_problem(&data, &rcfg)?;
    run_training(&mut model, &[exp], &spec, &rcfg.train, inv, o)
}

fn load_params_manifest(o: &mut Outputs, inv: &Invocation) -> Result<Option<RunManifest>> {
    match &inv.params_manifest {
        None => Ok(None),
        Some(p) => {
            let bytes = o.input("params", p)?;
            let m = RunManifest::parse(std::str::from_utf8(&bytes).map_err(|_| Error::Config("manifest is not UTF-8".into()))?)?;
            if m.get_str("run.command")? != "train" {
                return Err(Error::Config(format!("{} is not a train manifest", p.display())));
            }
            Ok(Some(m))
        }
    }
}

fn trained_caf(o: &mut Outputs, cfg: &Config, inv: &Invocation) -> Result<CaFParams> {
    let c = &cfg.caf;
    let base = c.params(&c.truth, cfg.training.rate_lr);
    match load_params_manifest(o, inv)? {
        None => Ok(base),
        Some(m) => {
            let (mut model, _, _) = caf::one_molecule_model(&base)?;
            restore_params(&m, &mut model)?;
            Ok(caf::params_from_model(&model, &base))
        }
    }
}

fn simulate_caf(cfg: &Config, inv: &Invocation, o: &mut Outputs) -> Result<()> {
    let c = &cfg.caf;
    let params = trained_caf(o, cfg, inv)?;
    let hash = o.manifest.content_hash();
    if c.two_molecule {
        let st = bell_stats(&params, c, cfg.seed, c.simulate_batch)?;
        return o.write("bell_stats.csv", dataio::stats_csv(&st, TimeUnit::Millisecond, &hash).as_bytes());
    }
    let (model, _, p) = caf::one_molecule_model(&params)?;
    for scheme in [Scheme::Plain, Scheme::Echo, Scheme::Xy8] {
        let times = scheme.default_times();
        let circuits = caf::scheme_circuits(scheme, &times, Some(p))?;
        let stats = simulate_circuits(&model, &circuits, &EnsembleConfig { batch: c.simulate_batch, dt: scheme.dt(), seed: cfg.seed })?;
        let mut contrast = Vec::new();
        for st in &stats {
            contrast.extend(caf::contrast(st)?);
        }
        let scaled: Vec<f64> = contrast.iter().map(|x| params.fidelity * x).collect();
        let ds = Dataset::new(Schema::new(TimeUnit::Millisecond, &["C", "fidelity_C"]), times, vec![contrast, scaled])?
            .with_comment(format!(" manifest_hash={hash}"));
        o.write(&format!("{}_contrast.csv", scheme.name()), ds.to_csv()?.as_bytes())?;
    }
    Ok(())
}

fn trained_diqcd(o: &mut Outputs, cfg: &Config, inv: &Invocation) -> Result<ModelSpec> {
    let init = DiqcdParams { phi: cfg.rubrene.phi, ..DiqcdParams::initial(&cfg.rubrene.holstein()?)? };
    let mut model = rubrene::build_one_molecule_diqcd(&init)?;
    if let Some(m) = load_params_manifest(o, inv)? {
        restore_params(&m, &mut model)?;
    }
    Ok(model)
}

fn simulate_rubrene(cfg: &Config, inv: &Invocation, o: &mut Outputs) -> Result<()> {
    let model = trained_diqcd(o, cfg, inv)?;
    let r = &cfg.rubrene;
    let times = r.generator()?.sample_times();
    let dt = cfg.training.dt.unwrap_or(0.05);
    let st = rubrene::simulate_diqcd(&model, &times, r.simulate_batch, dt, cfg.seed)?;
    let hash = o.manifest.content_hash();
    o.write("diqcd_stats.csv", dataio::stats_csv(&st, TimeUnit::Femtosecond, &hash).as_bytes())
}

fn mobility_cmd(cfg: &Config, inv: &Invocation, o: &mut Outputs) -> Result<()> {
    let model = trained_diqcd(o, cfg, inv)?;
    let trained = DiqcdParams::from_model(&model)?;
    let r = &cfg.rubrene;
    let l = &cfg.lattice;
    let lattice = rubrene::build_lattice_model(&trained, r.hopping_cm, l.sites)?;
    let n = (l.horizon_fs / l.sample_every_fs + 1e-9).floor() as usize;
    let times: Vec<f64> = (0..=n).map(|k| k as f64 * l.sample_every_fs).collect();
    let series = rubrene::lattice_msd(&lattice, &times, l.batch, l.dt_fs, cfg.seed)?;
    let hash = o.manifest.content_hash();
    let mut csv = format!("# manifest_hash={hash}\nt_fs,msd,mean_position,edge_population\n");
    for i in 0..series.t_fs.len() {
        csv.push_str(&format!(
            "{:.11e},{:.11e},{:.11e},{:.11e}\n",
            series.t_fs[i], series.msd[i], series.mean_position[i], series.edge_population[i]
        ));
    }
    o.write("msd.csv", csv.as_bytes())?;
    let report = rubrene::mobility_from_series(&series, r.temperature_k, r.spacing_angstrom, &RegimeCriteria::default())?;
    let mut rep = RunManifest::default();
    rep.set("mobility.cm2_per_volt_second", report.mobility);
    rep.set("fit.slope_site2_per_fs", report.slope);
    rep.set("fit.intercept_site2", report.intercept);
    rep.set("fit.r_squared", report.r_squared);
    rep.set("fit.window_start_fs", report.window_fs.0);
    rep.set("fit.window_end_fs", report.window_fs.1);
    rep.set("physics.temperature_k", report.temperature_k);
    rep.set("physics.spacing_angstrom", report.spacing_angstrom);
    rep.set("provenance.seed", cfg.seed.to_string());
    rep.set("provenance.dt_fs", l.dt_fs);
    rep.set("provenance.sites", l.sites as i64);
    rep.set("provenance.batch", l.batch as i64);
    rep.set("provenance.manifest_hash", hash);
    o.write("mobility.toml", rep.to_toml().as_bytes())
}

/// Re-runs the command recorded in `manifest` into `out` and checks that
/// every output hashes to the recorded value.
pub fn replay(manifest: &Path, out: &Path) -> Result<()> {
    let m = RunManifest::load(manifest)?;
    let cfg = parse_effective(m.get_str("config.toml")?)?;
    let command = m.get_str("run.command")?;
    let path_of = |key: &str| -> Result<Option<PathBuf>> {
        match m.entries.get(&format!("inputs.{key}.path")) {
            Some(v) => Ok(Some(PathBuf::from(v.as_str().ok_or_else(|| Error::Config(format!("inputs.{key}.path is not a string")))?))),
            None => Ok(None),
        }
    };
    let name: &'static str = match command {
        "gen-data" => "gen-data",
        "train" => "train",
        "simulate" => "simulate",
        "mobility" => "mobility",
        other => return Err(Error::Config(format!("manifest records unknown command `{other}`"))),
    };
    let epochs = match name {
        "train" => Some(m.get_u64("training.next_epoch")? as usize),
        _ => None,
    };
    let inv = Invocation { name, params_manifest: path_of("params")?, resume: path_of("resume")?, epochs };
    let mut cfg = cfg;
    // Dataset inputs are re-read from their recorded locations.
    for (key, slot) in [
        ("plain", &mut cfg.data.plain),
        ("echo", &mut cfg.data.echo),
        ("xy8", &mut cfg.data.xy8),
        ("spin_boson", &mut cfg.data.spin_boson),
    ] {
        if let Some(p) = path_of(key)? {
            *slot = Some(p);
        }
    }
    for (k, v) in m.section("inputs") {
        if let Some(key) = k.strip_suffix(".sha256") {
            let p = path_of(key)?.ok_or_else(|| Error::Config(format!("input `{key}` has no path")))?;
            let now = dataio::sha256_hex(&std::fs::read(&p)?);
            if Some(now.as_str()) != v.as_str() {
                return Err(Error::Config(format!("input {} changed since the run", p.display())));
            }
        }
    }
    execute(&cfg, m.get_str("run.preset").unwrap_or(""), &inv, out)?;
    let fresh = RunManifest::load(&out.join(format!("{name}.manifest.toml")))?;
    let expected: BTreeMap<_, _> = m.section("outputs");
    let got: BTreeMap<_, _> = fresh.section("outputs");
    if expected != got {
        return Err(Error::Config(format!("replayed outputs differ from {}", manifest.display())));
    }
    eprintln!("replay of `{name}`: {} outputs identical", got.len());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_resolve_and_validate() {
        for p in PRESETS {
            resolve_config(Some(p), None, None).unwrap();
        }
        assert!(matches!(preset("nope"), Err(Error::Config(_))));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = resolve_config(Some("caf-synthetic"), Some("[training]\nepoch = 3\n"), None).unwrap_err();
        assert_eq!(exit_code(&err), 2);
    }

    #[test]
    fn overrides_merge_into_preset() {
        let cfg = resolve_config(Some("rubrene-300K-small"), Some("[rubrene]\ntemperature_k = 250.0\n"), Some(9)).unwrap();
        assert_eq!(cfg.rubrene.temperature_k, 250.0);
        assert_eq!(cfg.training.lr, 0.3);
        assert_eq!(cfg.seed, 9);
        let bad = resolve_config(Some("rubrene-300K-small"), Some("[rubrene]\ntemperature_k = -1.0\n"), None).unwrap_err();
        assert_eq!(exit_code(&bad), 2);
        let close = resolve_config(Some("caf-bell-pinned"), Some("[caf]\nseparation_um = 1.5\n"), None).unwrap_err();
        assert_eq!(exit_code(&close), 4);
    }

    #[test]
    fn effective_config_round_trips() {
        let cfg = resolve_config(Some("caf-bell"), None, Some(5)).unwrap();
        let text = toml::to_string(&cfg).unwrap();
        assert_eq!(parse_effective(&text).unwrap(), cfg);
    }
}
