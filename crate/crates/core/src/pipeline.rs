//! End-to-end workflow: generate data, train both surrogates, build
//! libraries, discover, evaluate and report.
//!
//! Every stage takes a [`RunConfig`]; stage seeds are derived from the master
//! seed and every written file carries the SHA-256 of the configuration.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::adam::{self, AdamConfig, TrainedDnn};
use crate::candidates::CandidateSet;
use crate::data::MeasurementDataset;
use crate::error::{Error, Result};
use crate::hmc::{self, HmcConfig, HmcSampler, NetworkPosterior, PosteriorSamples};
use crate::io;
use crate::library::{self, DerivativeLibrary};
use crate::net::{Architecture, Scaling, WeightVector};
use crate::pde::{self, GridSolution, GridSpec, NoiseSpec, PdeProblem, SensorData};
use crate::regression::{self, DiscoveredPde, Method};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    /// Full-scale settings: 6000 transitions, `d = 10000`, every sample used.
    Paper,
    /// Reduced settings: 2000 transitions, `d = 2000`, every fourth sample used.
    Desk,
}

impl std::str::FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "paper" => Ok(Profile::Paper),
            "desk" => Ok(Profile::Desk),
            other => Err(Error::Config(format!("unknown profile '{other}'"))),
        }
    }
}

/// Which weights a library is built from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Surrogate {
    Bnn,
    Dnn,
    /// Finite differences of the ground-truth solution.
    Exact,
}

impl std::str::FromStr for Surrogate {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "bnn" => Ok(Surrogate::Bnn),
            "dnn" => Ok(Surrogate::Dnn),
            "exact" => Ok(Surrogate::Exact),
            other => Err(Error::Config(format!("unknown surrogate '{other}'"))),
        }
    }
}

impl Surrogate {
    /// The surrogate each method is paired with.
    pub fn for_method(method: Method) -> Self {
        match method {
            Method::Stblr => Surrogate::Bnn,
            Method::Stols => Surrogate::Dnn,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Preset name (`burgers`, `kdv`, `heat`), ignored when `problem_file` is set.
    pub problem: String,
    /// JSON file holding a full [`PdeProblem`].
    #[serde(default)]
    pub problem_file: Option<PathBuf>,
    pub profile: Profile,
    /// Noise of the single-case commands (`generate`, `train`, `discover`, `evaluate`).
    #[serde(default = "default_noise")]
    pub noise: NoiseSpec,
    /// Cases run by `pipeline` and tabulated by `report`.
    #[serde(default = "default_noise_cases")]
    pub noise_cases: Vec<NoiseSpec>,
    #[serde(default)]
    pub architecture: Architecture,
    pub hmc: HmcConfig,
    pub adam: AdamConfig,
    /// Likelihood noise standard deviation, in standardized target units.
    #[serde(default = "default_sigma")]
    pub sigma: f64,
    #[serde(default = "default_sensors")]
    pub n_sensors: usize,
    /// Collocation points per library.
    pub d: usize,
    /// Stride over posterior samples when building libraries.
    pub thinning: usize,
    #[serde(default)]
    pub candidates: CandidateSet,
    /// Initial threshold; the problem's preset when absent.
    #[serde(default)]
    pub delta: Option<f64>,
    /// Ground-truth / `e_L` grid; the problem's preset when absent.
    #[serde(default)]
    pub grid: Option<GridSpec>,
    #[serde(default = "default_n_test")]
    pub n_test: usize,
    /// Whether `discover` also solves the discovered PDE for `e_L`.
    #[serde(default = "default_true")]
    pub dynamics_error: bool,
    pub out_dir: PathBuf,
    pub seed: u64,
    #[serde(default)]
    pub threads: Option<usize>,
}

fn default_noise() -> NoiseSpec {
    NoiseSpec::None
}
fn default_noise_cases() -> Vec<NoiseSpec> {
    vec![
        NoiseSpec::None,
        NoiseSpec::Gaussian { sigma: 0.01 },
        NoiseSpec::Gaussian { sigma: 0.05 },
    ]
}
fn default_sigma() -> f64 {
    0.01
}
fn default_sensors() -> usize {
    16
}
fn default_n_test() -> usize {
    1000
}
fn default_true() -> bool {
    true
}

/// Leapfrog step used in the surrogate's standardized frame, for every preset.
pub const DEFAULT_STEP_SIZE: f64 = 1e-4;
/// Trajectory length of 0.015 at [`DEFAULT_STEP_SIZE`].
pub const DEFAULT_LEAPFROG_STEPS: usize = 150;

impl RunConfig {
    /// Built-in profile for a preset problem.
    pub fn profile(profile: Profile, problem: &str) -> Self {
        let (n_samples, d, thinning) = match profile {
            Profile::Paper => (6000, 10_000, 1),
            Profile::Desk => (2000, 2000, 4),
        };
        RunConfig {
            problem: problem.to_string(),
            problem_file: None,
            profile,
            noise: default_noise(),
            noise_cases: default_noise_cases(),
            architecture: Architecture::default(),
            hmc: HmcConfig {
                step_size: DEFAULT_STEP_SIZE,
                leapfrog_steps: DEFAULT_LEAPFROG_STEPS,
                n_samples,
                ..HmcConfig::default()
            },
            adam: AdamConfig::default(),
            sigma: default_sigma(),
            n_sensors: default_sensors(),
            d,
            thinning,
            candidates: CandidateSet::default(),
            delta: None,
            grid: None,
            n_test: default_n_test(),
            dynamics_error: true,
            out_dir: PathBuf::from("out"),
            seed: 0,
            threads: None,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.architecture.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.hmc.validate()?;
        self.adam.validate()?;
        if !(self.sigma > 0.0) {
            return Err(Error::Config("sigma must be positive".into()));
        }
        if self.n_sensors == 0 || self.d == 0 || self.thinning == 0 || self.n_test == 0 {
            return Err(Error::Config(
                "n_sensors, d, thinning and n_test must all be at least 1".into(),
            ));
        }
        if let Some(delta) = self.delta {
            if !(delta > 0.0) {
                return Err(Error::Config("delta must be positive".into()));
            }
        }
        self.noise.validate()?;
        for n in &self.noise_cases {
            n.validate()?;
        }
        if self.noise_cases.is_empty() {
            return Err(Error::Config("noise_cases is empty".into()));
        }
        if let Some(p) = &self.problem_file {
            if !p.exists() {
                return Err(Error::Config(format!("problem file {} does not exist", p.display())));
            }
        } else {
            pde::preset_by_name(&self.problem).map_err(|e| Error::Config(e.to_string()))?;
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON encoding, ignoring `out_dir` and `threads`.
    pub fn hash(&self) -> String {
        let mut key = self.clone();
        key.out_dir = PathBuf::new();
        key.threads = None;
        let bytes = serde_json::to_vec(&key).expect("config serializes");
        hex(&Sha256::digest(&bytes))
    }

    pub fn seeds(&self) -> SeedPlan {
        SeedPlan::derive(self.seed)
    }

    pub fn problem(&self) -> Result<PdeProblem> {
        let mut p = match &self.problem_file {
            Some(path) => {
                let p: PdeProblem = io::read_json(path)?;
                p.validate().map_err(|e| Error::Config(e.to_string()))?;
                p
            }
            None => pde::preset_by_name(&self.problem).map_err(|e| Error::Config(e.to_string()))?,
        };
        if p.candidates != self.candidates {
            // Re-express the true coefficients over the configured candidates.
            let mut coeffs = vec![0.0; self.candidates.len()];
            for (c, v) in p.candidates.iter().zip(&p.true_coefficients) {
                if *v == 0.0 {
                    continue;
                }
                let i = self.candidates.index_of(&c.name()).ok_or_else(|| {
                    Error::Config(format!("true term {c} is missing from the candidate set"))
                })?;
                coeffs[i] = *v;
            }
            p.true_coefficients = coeffs;
            p.candidates = self.candidates.clone();
        }
        if let Some(g) = self.grid {
            p.grid = g;
        }
        Ok(p)
    }

    pub fn threshold(&self, problem: &PdeProblem) -> f64 {
        self.delta.unwrap_or(problem.threshold)
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Per-stage seeds derived from the master seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedPlan {
    pub master: u64,
    pub sensors: u64,
    pub hmc: u64,
    pub adam: u64,
    pub collocation: u64,
    pub test_points: u64,
}

impl SeedPlan {
    pub fn derive(master: u64) -> Self {
        let stage = |name: &str| {
            let digest = Sha256::digest(format!("{master}:{name}").as_bytes());
            u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
        };
        SeedPlan {
            master,
            sensors: stage("sensors"),
            hmc: stage("hmc"),
            adam: stage("adam"),
            collocation: stage("collocation"),
            test_points: stage("test-points"),
        }
    }
}

/// Ground truth, sensor data and the surrogate reference frame for one noise case.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub problem: PdeProblem,
    pub truth: GridSolution,
    pub sensors: SensorData,
    pub noise: NoiseSpec,
    pub scaling: Scaling,
    pub scaled: MeasurementDataset,
}

pub fn solve_truth(problem: &PdeProblem) -> Result<GridSolution> {
    let sol = pde::solve(&problem.true_coefficients, &problem.candidates, &problem.shape, &problem.grid)?;
    if sol.unstable {
        return Err(Error::Numerical(format!(
            "ground truth for '{}' is unstable on the configured grid",
            problem.name
        )));
    }
    Ok(sol)
}

pub fn prepare_with(cfg: &RunConfig, problem: PdeProblem, truth: GridSolution, noise: NoiseSpec) -> Result<Prepared> {
    let seeds = cfg.seeds();
    let sensors = pde::sense(&truth, &problem.shape.domain, cfg.n_sensors, problem.sensor_dt, noise, seeds.sensors)?;
    let scaling = Scaling::fit(&sensors.dataset);
    let scaled = scaling.dataset(&sensors.dataset)?;
    Ok(Prepared {
        problem,
        truth,
        sensors,
        noise,
        scaling,
        scaled,
    })
}

pub fn prepare(cfg: &RunConfig, noise: NoiseSpec) -> Result<Prepared> {
    let problem = cfg.problem()?;
    let truth = solve_truth(&problem)?;
    prepare_with(cfg, problem, truth, noise)
}

pub fn hmc_config(cfg: &RunConfig) -> HmcConfig {
    HmcConfig {
        seed: cfg.seeds().hmc,
        ..cfg.hmc.clone()
    }
}

pub fn adam_config(cfg: &RunConfig) -> AdamConfig {
    AdamConfig {
        seed: cfg.seeds().adam,
        ..cfg.adam.clone()
    }
}

pub fn train_bnn(cfg: &RunConfig, prep: &Prepared) -> Result<PosteriorSamples> {
    let samples = hmc::sample_network_posterior(cfg.architecture, &prep.scaled, cfg.sigma, prep.scaling, &hmc_config(cfg))?;
    if samples.low_acceptance {
        log::warn!(
            "HMC acceptance {:.3} is below {}",
            samples.acceptance_rate,
            hmc::LOW_ACCEPTANCE
        );
    }
    Ok(samples)
}

pub fn train_dnn(cfg: &RunConfig, prep: &Prepared) -> Result<TrainedDnn> {
    adam::train_dnn(&prep.scaled, cfg.architecture, &adam_config(cfg))
}

pub fn collocation(cfg: &RunConfig, problem: &PdeProblem) -> Result<ndarray::Array2<f64>> {
    library::sample_collocation(&problem.shape.domain, cfg.d, cfg.seeds().collocation)
}

/// Library from weight samples, or from the truth when `samples` is `None`.
pub fn build_library(
    cfg: &RunConfig,
    prep: &Prepared,
    samples: Option<(&[WeightVector], &Scaling)>,
) -> Result<DerivativeLibrary> {
    let pts = collocation(cfg, &prep.problem)?;
    let mut lib = match samples {
        Some((ws, scaling)) => {
            let thinning = if ws.len() == 1 { 1 } else { cfg.thinning };
            library::build_library(ws, scaling, pts.view(), &cfg.candidates, thinning)?
        }
        None => library::library_from_solution(&prep.truth, pts.view(), &cfg.candidates)?,
    };
    lib.meta.seed = Some(cfg.seeds().collocation);
    Ok(lib)
}

/// Run `method` on `lib` and attach `e_C` (and `e_L` when configured).
pub fn discover_on(cfg: &RunConfig, prep: &Prepared, lib: &DerivativeLibrary, method: Method) -> Result<DiscoveredPde> {
    let mut found = regression::discover(lib, method, cfg.threshold(&prep.problem))?;
    let means = found.means();
    found.e_c = Some(pde::coeff_error(&means, &prep.problem.true_coefficients)?);
    if cfg.dynamics_error {
        found.e_l = Some(pde::dynamics_error_against(&prep.truth, &means, &prep.problem, &prep.problem.grid)?);
    }
    Ok(found)
}

pub fn rmse(cfg: &RunConfig, prep: &Prepared, samples: &[WeightVector], scaling: &Scaling) -> Result<f64> {
    pde::rmse_test(
        samples,
        scaling,
        &prep.truth,
        &prep.problem.shape.domain,
        cfg.n_test,
        cfg.seeds().test_points,
    )
}

/// Outcome of one noise case with both method pairings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaseResult {
    pub noise: NoiseSpec,
    pub rmse_bnn: f64,
    pub rmse_dnn: f64,
    pub acceptance_rate: f64,
    pub low_acceptance: bool,
    pub dnn_final_mse: f64,
    pub stblr: DiscoveredPde,
    pub stols: DiscoveredPde,
}

/// Everything for one noise case, in memory; artifacts go to `dir` when given.
pub fn run_case(cfg: &RunConfig, prep: &Prepared, dir: Option<&Path>) -> Result<CaseResult> {
    let hash = cfg.hash();
    let stage = |name: &'static str| move |e: Error| stage_error(name, e);

    let t0 = Instant::now();
    let bnn = train_bnn(cfg, prep).map_err(stage("train-bnn"))?;
    log::info!("bnn trained in {:.1?}", t0.elapsed());
    let t0 = Instant::now();
    let dnn = train_dnn(cfg, prep).map_err(stage("train-dnn"))?;
    log::info!("dnn trained in {:.1?}", t0.elapsed());

    if let Some(d) = dir {
        write_dataset(d, cfg, prep)?;
        write_bnn(d, cfg, prep, &bnn)?;
        write_dnn(d, cfg, prep, &dnn)?;
    }

    let rmse_bnn = rmse(cfg, prep, &bnn.samples, &bnn.scaling).map_err(stage("evaluate"))?;
    let rmse_dnn = rmse(cfg, prep, std::slice::from_ref(&dnn.weights), &prep.scaling).map_err(stage("evaluate"))?;

    let lib_bnn = build_library(cfg, prep, Some((&bnn.samples, &bnn.scaling))).map_err(stage("library"))?;
    let stblr = discover_on(cfg, prep, &lib_bnn, Method::Stblr).map_err(stage("discover"))?;
    let lib_dnn = build_library(cfg, prep, Some((std::slice::from_ref(&dnn.weights), &prep.scaling))).map_err(stage("library"))?;
    let stols = discover_on(cfg, prep, &lib_dnn, Method::Stols).map_err(stage("discover"))?;

    if let Some(d) = dir {
        write_discovery(d, &hash, &lib_bnn, &stblr, Surrogate::Bnn)?;
        write_discovery(d, &hash, &lib_dnn, &stols, Surrogate::Dnn)?;
    }
    Ok(CaseResult {
        noise: prep.noise,
        rmse_bnn,
        rmse_dnn,
        acceptance_rate: bnn.acceptance_rate,
        low_acceptance: bnn.low_acceptance,
        dnn_final_mse: dnn.final_loss(),
        stblr,
        stols,
    })
}

fn stage_error(stage: &str, e: Error) -> Error {
    match e {
        Error::Numerical(m) => Error::Numerical(format!("stage '{stage}': {m}")),
        Error::Config(m) => Error::Config(format!("stage '{stage}': {m}")),
        Error::Domain(m) => Error::Domain(format!("stage '{stage}': {m}")),
        Error::Dimension(m) => Error::Dimension(format!("stage '{stage}': {m}")),
        other => other,
    }
}

// ---------------------------------------------------------------------------
// Artifacts

/// Directory for one noise case under the output root.
pub fn case_dir(cfg: &RunConfig, noise: &NoiseSpec) -> PathBuf {
    let label = match noise {
        NoiseSpec::None => "noiseless".to_string(),
        NoiseSpec::Gaussian { sigma } => format!("noise-{sigma}"),
    };
    cfg.out_dir.join(&cfg.problem).join(label)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSidecar {
    pub problem: String,
    pub domain: crate::data::Domain,
    pub noise: NoiseSpec,
    pub sigma_noise: f64,
    pub n_records: usize,
    pub n_sensors: usize,
    pub sensor_dt: f64,
    pub sensor_x: Vec<f64>,
    pub seeds: SeedPlan,
    pub config_hash: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub mode: Surrogate,
    pub config_hash: String,
    pub scaling: Scaling,
    pub architecture: Architecture,
    #[serde(default)]
    pub acceptance_rate: Option<f64>,
    #[serde(default)]
    pub low_acceptance: Option<bool>,
    #[serde(default)]
    pub divergences: Option<usize>,
    #[serde(default)]
    pub n_samples: Option<usize>,
    #[serde(default)]
    pub final_mse: Option<f64>,
    pub seed: u64,
}

pub fn write_dataset(dir: &Path, cfg: &RunConfig, prep: &Prepared) -> Result<()> {
    io::write_dataset_csv(&dir.join("dataset.csv"), &prep.sensors.dataset)?;
    let side = DatasetSidecar {
        problem: prep.problem.name.clone(),
        domain: prep.problem.shape.domain,
        noise: prep.noise,
        sigma_noise: prep.noise.sigma(),
        n_records: prep.sensors.dataset.len(),
        n_sensors: cfg.n_sensors,
        sensor_dt: prep.problem.sensor_dt,
        sensor_x: prep.sensors.sensor_x.clone(),
        seeds: cfg.seeds(),
        config_hash: cfg.hash(),
    };
    io::write_json(&dir.join("dataset.json"), &side)
}

fn write_bnn(dir: &Path, cfg: &RunConfig, prep: &Prepared, post: &PosteriorSamples) -> Result<()> {
    let hash = cfg.hash();
    let ckpt = io::Checkpoint {
        header: io::CheckpointHeader {
            arch: cfg.architecture,
            config: post.config.clone(),
            state: post.state.clone(),
            position: post.state.position.clone(),
            scaling: prep.scaling,
            sigma: cfg.sigma,
            acceptance_rate: post.acceptance_rate,
            low_acceptance: post.low_acceptance,
            config_hash: Some(hash.clone()),
        },
        samples: post.samples.clone(),
    };
    io::write_checkpoint(&dir.join("bnn.ckpt"), &ckpt)?;
    io::write_json(
        &dir.join("train_bnn.json"),
        &TrainReport {
            mode: Surrogate::Bnn,
            config_hash: hash,
            scaling: prep.scaling,
            architecture: cfg.architecture,
            acceptance_rate: Some(post.acceptance_rate),
            low_acceptance: Some(post.low_acceptance),
            divergences: Some(post.divergences),
            n_samples: Some(post.samples.len()),
            final_mse: None,
            seed: post.config.seed,
        },
    )
}

fn write_dnn(dir: &Path, cfg: &RunConfig, prep: &Prepared, dnn: &TrainedDnn) -> Result<()> {
    io::write_weights(&dir.join("dnn.bin"), std::slice::from_ref(&dnn.weights))?;
    io::write_loss_trace(&dir.join("dnn_loss.csv"), &dnn.loss_trace)?;
    io::write_json(
        &dir.join("train_dnn.json"),
        &TrainReport {
            mode: Surrogate::Dnn,
            config_hash: cfg.hash(),
            scaling: prep.scaling,
            architecture: cfg.architecture,
            acceptance_rate: None,
            low_acceptance: None,
            divergences: None,
            n_samples: None,
            final_mse: Some(dnn.final_loss()),
            seed: adam_config(cfg).seed,
        },
    )
}

fn write_discovery(dir: &Path, hash: &str, lib: &DerivativeLibrary, found: &DiscoveredPde, surrogate: Surrogate) -> Result<()> {
    let tag = format!("{:?}", found.method).to_lowercase();
    let source = format!("{surrogate:?}").to_lowercase();
    lib.write_csv(&dir.join(format!("library_{source}.csv")))?;
    lib.write_meta(
        &dir.join(format!("library_{source}.json")),
        json!({ "config_hash": hash, "surrogate": source }),
    )?;
    let mut v = serde_json::to_value(found).expect("plain struct");
    v["config_hash"] = json!(hash);
    v["surrogate"] = json!(source);
    io::write_json(&dir.join(format!("discovered_{tag}.json")), &v)?;
    io::write_text(&dir.join(format!("discovered_{tag}.txt")), &found.table())
}

// ---------------------------------------------------------------------------
// Commands

/// Solve the problem, sample sensors and write `dataset.csv` + `dataset.json`.
pub fn cmd_generate(cfg: &RunConfig) -> Result<PathBuf> {
    cfg.validate()?;
    let prep = prepare(cfg, cfg.noise)?;
    let dir = case_dir(cfg, &cfg.noise);
    write_dataset(&dir, cfg, &prep)?;
    io::write_solution_csv(&dir.join("solution.csv"), &prep.truth)?;
    log::info!("wrote {} records to {}", prep.sensors.dataset.len(), dir.display());
    Ok(dir.join("dataset.csv"))
}

fn load_dataset(cfg: &RunConfig) -> Result<(Prepared, PathBuf)> {
    let dir = case_dir(cfg, &cfg.noise);
    let side: DatasetSidecar = io::read_json(&dir.join("dataset.json"))?;
    let data = io::read_dataset_csv(&dir.join("dataset.csv"), side.domain)?;
    let problem = cfg.problem()?;
    if side.problem != problem.name {
        return Err(Error::Config(format!(
            "dataset in {} is for '{}', config asks for '{}'",
            dir.display(),
            side.problem,
            problem.name
        )));
    }
    let truth = solve_truth(&problem)?;
    let scaling = Scaling::fit(&data);
    let scaled = scaling.dataset(&data)?;
    Ok((
        Prepared {
            problem,
            truth,
            sensors: SensorData {
                dataset: data,
                sensor_x: side.sensor_x,
                times: Vec::new(),
            },
            noise: side.noise,
            scaling,
            scaled,
        },
        dir,
    ))
}

/// Train one surrogate on the generated dataset.
pub fn cmd_train(cfg: &RunConfig, mode: Surrogate) -> Result<PathBuf> {
    cfg.validate()?;
    let (prep, dir) = load_dataset(cfg)?;
    match mode {
        Surrogate::Bnn => {
            let post = train_bnn(cfg, &prep)?;
            write_bnn(&dir, cfg, &prep, &post)?;
            Ok(dir.join("bnn.ckpt"))
        }
        Surrogate::Dnn => {
            let dnn = train_dnn(cfg, &prep)?;
            write_dnn(&dir, cfg, &prep, &dnn)?;
            Ok(dir.join("dnn.bin"))
        }
        Surrogate::Exact => Err(Error::Config("the exact surrogate needs no training".into())),
    }
}

/// Weights and frame of a trained surrogate from its artifacts.
pub fn load_surrogate(dir: &Path, mode: Surrogate) -> Result<(Vec<WeightVector>, Scaling)> {
    match mode {
        Surrogate::Bnn => {
            let ck = io::read_checkpoint(&dir.join("bnn.ckpt"))?;
            Ok((ck.samples, ck.header.scaling))
        }
        Surrogate::Dnn => {
            let report: TrainReport = io::read_json(&dir.join("train_dnn.json"))?;
            Ok((io::read_weights(&dir.join("dnn.bin"))?, report.scaling))
        }
        Surrogate::Exact => Err(Error::Config("the exact surrogate has no weights".into())),
    }
}

/// Build the library from a trained surrogate and run `method`.
pub fn cmd_discover(cfg: &RunConfig, method: Method, surrogate: Option<Surrogate>) -> Result<DiscoveredPde> {
    cfg.validate()?;
    let (prep, dir) = load_dataset(cfg)?;
    let surrogate = surrogate.unwrap_or_else(|| Surrogate::for_method(method));
    let lib = match surrogate {
        Surrogate::Exact => build_library(cfg, &prep, None)?,
        s => {
            let (ws, scaling) = load_surrogate(&dir, s)?;
            build_library(cfg, &prep, Some((&ws, &scaling)))?
        }
    };
    let found = discover_on(cfg, &prep, &lib, method)?;
    write_discovery(&dir, &cfg.hash(), &lib, &found, surrogate)?;
    print!("{}", found.table());
    if found.trivial {
        log::warn!("discovery produced the trivial PDE");
    }
    Ok(found)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub config_hash: String,
    pub problem: String,
    pub noise: NoiseSpec,
    pub rmse_bnn: Option<f64>,
    pub rmse_dnn: Option<f64>,
    pub stblr: Option<DiscoveredPde>,
    pub stols: Option<DiscoveredPde>,
}

/// RMSE of available surrogates and errors of available discoveries.
pub fn cmd_evaluate(cfg: &RunConfig) -> Result<Evaluation> {
    cfg.validate()?;
    let (prep, dir) = load_dataset(cfg)?;
    let mut ev = Evaluation {
        config_hash: cfg.hash(),
        problem: prep.problem.name.clone(),
        noise: prep.noise,
        rmse_bnn: None,
        rmse_dnn: None,
        stblr: None,
        stols: None,
    };
    for mode in [Surrogate::Bnn, Surrogate::Dnn] {
        let present = match mode {
            Surrogate::Bnn => dir.join("bnn.ckpt").exists(),
            _ => dir.join("dnn.bin").exists(),
        };
        if present {
            let (ws, scaling) = load_surrogate(&dir, mode)?;
            let r = rmse(cfg, &prep, &ws, &scaling)?;
            match mode {
                Surrogate::Bnn => ev.rmse_bnn = Some(r),
                _ => ev.rmse_dnn = Some(r),
            }
        }
    }
    for method in [Method::Stblr, Method::Stols] {
        let path = dir.join(format!("discovered_{}.json", format!("{method:?}").to_lowercase()));
        if path.exists() {
            let mut found: DiscoveredPde = io::read_json(&path)?;
            let means = found.means();
            found.e_c = Some(pde::coeff_error(&means, &prep.problem.true_coefficients)?);
            found.e_l = Some(pde::dynamics_error_against(&prep.truth, &means, &prep.problem, &prep.problem.grid)?);
            match method {
                Method::Stblr => ev.stblr = Some(found),
                Method::Stols => ev.stols = Some(found),
            }
        }
    }
    io::write_json(&dir.join("evaluation.json"), &ev)?;
    Ok(ev)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub config_hash: String,
    pub problem: String,
    pub profile: Profile,
    pub seeds: SeedPlan,
    pub true_coefficients: Vec<f64>,
    pub candidates: Vec<String>,
    pub cases: Vec<CaseResult>,
}

impl Report {
    /// Markdown tables: RMSE per case, then one coefficient table per method.
    pub fn render(&self) -> String {
        let mut s = format!("# {} ({:?} profile)\n\n", self.problem, self.profile);
        s.push_str(&format!("config hash: `{}`\n\n", self.config_hash));
        s.push_str(&format!(
            "seeds: master {}, sensors {}, hmc {}, adam {}, collocation {}, test points {}\n\n",
            self.seeds.master, self.seeds.sensors, self.seeds.hmc, self.seeds.adam, self.seeds.collocation, self.seeds.test_points
        ));
        s.push_str("## Prediction RMSE\n\n| noise | BNN | DNN | HMC acceptance |\n|---|---|---|---|\n");
        for c in &self.cases {
            s.push_str(&format!(
                "| {} | {:.4} | {:.4} | {:.3}{} |\n",
                c.noise.label(),
                c.rmse_bnn,
                c.rmse_dnn,
                c.acceptance_rate,
                if c.low_acceptance { " (low)" } else { "" }
            ));
        }
        for (title, pick) in [
            ("BNN / STBLR", (|c: &CaseResult| &c.stblr) as fn(&CaseResult) -> &DiscoveredPde),
            ("DNN / STOLS", |c: &CaseResult| &c.stols),
        ] {
            s.push_str(&format!("\n## {title}\n\n| candidate | truth |"));
            for c in &self.cases {
                s.push_str(&format!(" {} |", c.noise.label()));
            }
            s.push_str("\n|---|---|");
            s.push_str(&"---|".repeat(self.cases.len()));
            s.push('\n');
            for (i, name) in self.candidates.iter().enumerate() {
                s.push_str(&format!("| {name} | {} |", self.true_coefficients[i]));
                for c in &self.cases {
                    let v = pick(c).coefficients[i].mean;
                    if v == 0.0 {
                        s.push_str(" 0 |");
                    } else {
                        s.push_str(&format!(" {v:.4} |"));
                    }
                }
                s.push('\n');
            }
            s.push_str("| e_C | |");
            for c in &self.cases {
                s.push_str(&format!(" {:.4} |", pick(c).e_c.unwrap_or(f64::NAN)));
            }
            s.push_str("\n| e_L | |");
            for c in &self.cases {
                match pick(c).e_l {
                    Some(e) if e.unstable => s.push_str(" unstable |"),
                    Some(e) => s.push_str(&format!(" {:.4} |", e.value)),
                    None => s.push_str(" - |"),
                }
            }
            s.push('\n');
            for c in &self.cases {
                if pick(c).trivial {
                    s.push_str(&format!("\n**{}: trivial PDE (every candidate pruned)**\n", c.noise.label()));
                }
            }
        }
        s
    }
}

/// Every stage for every configured noise case, plus the consolidated report.
pub fn cmd_pipeline(cfg: &RunConfig) -> Result<Report> {
    cfg.validate()?;
    let problem = cfg.problem()?;
    let truth = solve_truth(&problem).map_err(|e| stage_error("generate", e))?;
    let mut cases = Vec::with_capacity(cfg.noise_cases.len());
    for noise in &cfg.noise_cases {
        log::info!("case {}", noise.label());
        let prep = prepare_with(cfg, problem.clone(), truth.clone(), *noise).map_err(|e| stage_error("generate", e))?;
        let dir = case_dir(cfg, noise);
        let case = run_case(cfg, &prep, Some(&dir))?;
        io::write_json(&dir.join("case.json"), &json!({ "config_hash": cfg.hash(), "result": &case }))?;
        cases.push(case);
    }
    let report = Report {
        config_hash: cfg.hash(),
        problem: problem.name.clone(),
        profile: cfg.profile,
        seeds: cfg.seeds(),
        true_coefficients: problem.true_coefficients.clone(),
        candidates: cfg.candidates.names(),
        cases,
    };
    write_report(cfg, &report)?;
    Ok(report)
}

fn write_report(cfg: &RunConfig, report: &Report) -> Result<()> {
    let root = cfg.out_dir.join(&cfg.problem);
    io::write_json(&root.join("report.json"), report)?;
    io::write_text(&root.join("report.md"), &report.render())
}

/// Rebuild the report from per-case artifacts written by `pipeline`.
pub fn cmd_report(cfg: &RunConfig) -> Result<Report> {
    cfg.validate()?;
    let problem = cfg.problem()?;
    let mut cases = Vec::new();
    for noise in &cfg.noise_cases {
        let path = case_dir(cfg, noise).join("case.json");
        let v: serde_json::Value = io::read_json(&path)?;
        let case: CaseResult = serde_json::from_value(v["result"].clone())
            .map_err(|e| Error::format(&path, e.to_string()))?;
        cases.push(case);
    }
    let report = Report {
        config_hash: cfg.hash(),
        problem: problem.name.clone(),
        profile: cfg.profile,
        seeds: cfg.seeds(),
        true_coefficients: problem.true_coefficients.clone(),
        candidates: cfg.candidates.names(),
        cases,
    };
    write_report(cfg, &report)?;
    Ok(report)
}

/// Resume or extend a BNN chain from its checkpoint.
pub fn resume_bnn(cfg: &RunConfig, prep: &Prepared, ckpt: io::Checkpoint) -> Result<PosteriorSamples> {
    let target = NetworkPosterior {
        arch: ckpt.header.arch,
        data: &prep.scaled,
        sigma: ckpt.header.sigma,
    };
    let samples = ckpt.samples.into_iter().map(|w| w.into_values()).collect();
    let sampler = HmcSampler::resume(&target, hmc_config(cfg), ckpt.header.state, samples)?;
    PosteriorSamples::from_chain(ckpt.header.arch, sampler.run(), ckpt.header.scaling)
}
