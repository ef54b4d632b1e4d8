//! Hamiltonian Monte-Carlo with an identity mass matrix.
//!
//! Each transition draws a fresh momentum `v ~ N(0, I)`, integrates
//! Hamilton's equations for `H(w, v) = V(w) + ½‖v‖²` (with `V = -log p`)
//! using leapfrog, and accepts the end point with probability
//! `min(1, exp(-ΔH))`. Trajectories that produce non-finite energies are
//! rejected and the chain stays put.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::MeasurementDataset;
use crate::error::{Error, Result};
use crate::net::{self, Architecture, Objective, Scaling, WeightVector};

/// Below this acceptance rate the run is flagged (the step size is likely too large).
pub const LOW_ACCEPTANCE: f64 = 0.05;

/// Unnormalized log-density with gradient.
pub trait LogDensity {
    fn dim(&self) -> usize;

    /// Returns `log p(position)` and writes `∇ log p` into `grad`.
    fn log_density_and_gradient(&self, position: &[f64], grad: &mut [f64]) -> f64;
}

/// A [`LogDensity`] assembled from separate value and gradient closures.
pub struct FnDensity<F, G> {
    dim: usize,
    log_p: F,
    grad_log_p: G,
}

impl<F, G> FnDensity<F, G>
where
    F: Fn(&[f64]) -> f64,
    G: Fn(&[f64], &mut [f64]),
{
    pub fn new(dim: usize, log_p: F, grad_log_p: G) -> Self {
        FnDensity {
            dim,
            log_p,
            grad_log_p,
        }
    }
}

impl<F, G> LogDensity for FnDensity<F, G>
where
    F: Fn(&[f64]) -> f64,
    G: Fn(&[f64], &mut [f64]),
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn log_density_and_gradient(&self, position: &[f64], grad: &mut [f64]) -> f64 {
        (self.grad_log_p)(position, grad);
        (self.log_p)(position)
    }
}

/// Network weight posterior `N(y | f(X|w), σ²I) N(w | 0, I)`.
pub struct NetworkPosterior<'a> {
    pub arch: Architecture,
    pub data: &'a MeasurementDataset,
    pub sigma: f64,
}

impl LogDensity for NetworkPosterior<'_> {
    fn dim(&self) -> usize {
        self.arch.n_params()
    }

    fn log_density_and_gradient(&self, position: &[f64], grad: &mut [f64]) -> f64 {
        net::objective_and_gradient_raw(
            &self.arch,
            position,
            self.data,
            Objective::LogPosterior { sigma: self.sigma },
            grad,
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MassMatrix {
    Identity,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HmcConfig {
    /// Leapfrog step `Δτ`.
    pub step_size: f64,
    pub leapfrog_steps: usize,
    /// Total transitions, burn-in included.
    pub n_samples: usize,
    pub burn_in: usize,
    pub seed: u64,
    /// Standard deviation of the Gaussian draw that initializes the chain.
    #[serde(default = "default_init_std")]
    pub init_std: f64,
    #[serde(default = "default_mass")]
    pub mass: MassMatrix,
}

fn default_init_std() -> f64 {
    0.1
}

fn default_mass() -> MassMatrix {
    MassMatrix::Identity
}

impl Default for HmcConfig {
    fn default() -> Self {
        HmcConfig {
            step_size: 5e-4,
            leapfrog_steps: 30,
            n_samples: 6000,
            burn_in: 200,
            seed: 0,
            init_std: default_init_std(),
            mass: MassMatrix::Identity,
        }
    }
}

impl HmcConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::Config(format!(
                "HMC step size must be positive, got {}",
                self.step_size
            )));
        }
        if self.leapfrog_steps == 0 {
            return Err(Error::Config("need at least one leapfrog step".into()));
        }
        if self.burn_in >= self.n_samples {
            return Err(Error::Config(format!(
                "burn-in ({}) must be smaller than the sample count ({})",
                self.burn_in, self.n_samples
            )));
        }
        if !(self.init_std >= 0.0 && self.init_std.is_finite()) {
            return Err(Error::Config("init_std must be non-negative".into()));
        }
        Ok(())
    }
}

/// Raw chain output for an arbitrary target.
#[derive(Clone, Debug)]
pub struct Chain {
    /// Post-burn-in positions, in chain order.
    pub samples: Vec<Vec<f64>>,
    pub acceptance_rate: f64,
    pub divergences: usize,
    pub low_acceptance: bool,
    pub config: HmcConfig,
    /// Where the chain stopped; resuming from it continues the same stream.
    pub state: ChainState,
}

/// Posterior draws of network weights plus the frame they were trained in.
#[derive(Clone, Debug)]
pub struct PosteriorSamples {
    pub samples: Vec<WeightVector>,
    pub acceptance_rate: f64,
    pub low_acceptance: bool,
    pub divergences: usize,
    pub config: HmcConfig,
    pub state: ChainState,
    pub scaling: Scaling,
}

impl PosteriorSamples {
    pub fn from_chain(arch: Architecture, chain: Chain, scaling: Scaling) -> Result<Self> {
        let samples = chain
            .samples
            .into_iter()
            .map(|v| WeightVector::new(arch, v))
            .collect::<Result<Vec<_>>>()?;
        Ok(PosteriorSamples {
            samples,
            acceptance_rate: chain.acceptance_rate,
            low_acceptance: chain.low_acceptance,
            divergences: chain.divergences,
            config: chain.config,
            state: chain.state,
            scaling,
        })
    }
}

/// Leapfrog integration of `dw/dτ = v`, `dv/dτ = -∇V(w)`.
///
/// Half momentum step, `steps` alternating full position/momentum steps
/// (the last momentum step being a half step).
pub fn leapfrog<G>(
    position: &[f64],
    momentum: &[f64],
    mut grad_potential: G,
    steps: usize,
    step_size: f64,
) -> Result<(Vec<f64>, Vec<f64>)>
where
    G: FnMut(&[f64]) -> Vec<f64>,
{
    if position.len() != momentum.len() {
        return Err(Error::Dimension(format!(
            "position has {} entries, momentum {}",
            position.len(),
            momentum.len()
        )));
    }
    let mut q = position.to_vec();
    let mut p = momentum.to_vec();
    let mut g = grad_potential(&q);
    for step in 0..steps {
        let half = if step == 0 { 0.5 } else { 1.0 };
        for (pi, gi) in p.iter_mut().zip(&g) {
            *pi -= half * step_size * gi;
        }
        for (qi, pi) in q.iter_mut().zip(&p) {
            *qi += step_size * pi;
        }
        g = grad_potential(&q);
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!(
                "trajectory diverged at leapfrog step {step}"
            )));
        }
    }
    if steps > 0 {
        for (pi, gi) in p.iter_mut().zip(&g) {
            *pi -= 0.5 * step_size * gi;
        }
    }
    Ok((q, p))
}

/// Resumable chain state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainState {
    pub iteration: usize,
    pub accepted: usize,
    pub divergences: usize,
    /// ChaCha word position of the chain's generator.
    pub rng_word_pos: u128,
    #[serde(skip)]
    pub position: Vec<f64>,
}

/// Step-by-step HMC driver; [`sample_posterior`] runs it to completion.
pub struct HmcSampler<'a, D: LogDensity> {
    target: &'a D,
    config: HmcConfig,
    rng: ChaCha8Rng,
    position: Vec<f64>,
    log_p: f64,
    grad: Vec<f64>,
    iteration: usize,
    accepted: usize,
    divergences: usize,
    samples: Vec<Vec<f64>>,
    // scratch
    q: Vec<f64>,
    p: Vec<f64>,
    g: Vec<f64>,
}

impl<'a, D: LogDensity> HmcSampler<'a, D> {
    /// Fresh chain started from `N(0, init_std² I)`.
    pub fn new(target: &'a D, config: HmcConfig) -> Result<Self> {
        config.validate()?;
        let dim = target.dim();
        if dim == 0 {
            return Err(Error::Domain("HMC needs at least one dimension".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let position: Vec<f64> = (0..dim)
            .map(|_| config.init_std * rng.sample::<f64, _>(StandardNormal))
            .collect();
        Self::start(target, config, rng, position, 0, 0, 0, Vec::new())
    }

    /// Continue a chain from a checkpointed state and its recorded samples.
    pub fn resume(
        target: &'a D,
        config: HmcConfig,
        state: ChainState,
        samples: Vec<Vec<f64>>,
    ) -> Result<Self> {
        config.validate()?;
        if state.position.len() != target.dim() {
            return Err(Error::Dimension("checkpoint position vs. target".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_word_pos(state.rng_word_pos);
        Self::start(
            target,
            config,
            rng,
            state.position,
            state.iteration,
            state.accepted,
            state.divergences,
            samples,
        )
    }

    #[allow(clippy::too_many_arguments)]
    fn start(
        target: &'a D,
        config: HmcConfig,
        rng: ChaCha8Rng,
        position: Vec<f64>,
        iteration: usize,
        accepted: usize,
        divergences: usize,
        samples: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let dim = target.dim();
        let mut grad = vec![0.0; dim];
        let log_p = target.log_density_and_gradient(&position, &mut grad);
        if !log_p.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Numerical(
                "log-density is not finite at the initial position".into(),
            ));
        }
        Ok(HmcSampler {
            target,
            config,
            rng,
            position,
            log_p,
            grad,
            iteration,
            accepted,
            divergences,
            samples,
            q: vec![0.0; dim],
            p: vec![0.0; dim],
            g: vec![0.0; dim],
        })
    }

    pub fn is_done(&self) -> bool {
        self.iteration >= self.config.n_samples
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn state(&self) -> ChainState {
        ChainState {
            iteration: self.iteration,
            accepted: self.accepted,
            divergences: self.divergences,
            rng_word_pos: self.rng.get_word_pos(),
            position: self.position.clone(),
        }
    }

    pub fn samples(&self) -> &[Vec<f64>] {
        &self.samples
    }

    /// One HMC transition. Returns whether the proposal was accepted.
    pub fn step(&mut self) -> bool {
        let dt = self.config.step_size;
        let steps = self.config.leapfrog_steps;
        for p in self.p.iter_mut() {
            *p = self.rng.sample(StandardNormal);
        }
        let u: f64 = self.rng.random();
        let kinetic0: f64 = 0.5 * self.p.iter().map(|v| v * v).sum::<f64>();
        let h0 = -self.log_p + kinetic0;

        self.q.copy_from_slice(&self.position);
        self.g.copy_from_slice(&self.grad);
        let mut log_p = self.log_p;
        let mut finite = true;
        // ∇V = -∇log p, so the momentum update adds the log-density gradient.
        for step in 0..steps {
            let half = if step == 0 { 0.5 } else { 1.0 };
            for (pi, gi) in self.p.iter_mut().zip(&self.g) {
                *pi += half * dt * gi;
            }
            for (qi, pi) in self.q.iter_mut().zip(&self.p) {
                *qi += dt * pi;
            }
            log_p = self.target.log_density_and_gradient(&self.q, &mut self.g);
            if !log_p.is_finite() || self.g.iter().any(|v| !v.is_finite()) {
                finite = false;
                break;
            }
        }
        let mut accept = false;
        if finite {
            for (pi, gi) in self.p.iter_mut().zip(&self.g) {
                *pi += 0.5 * dt * gi;
            }
            let kinetic1: f64 = 0.5 * self.p.iter().map(|v| v * v).sum::<f64>();
            let h1 = -log_p + kinetic1;
            if h1.is_finite() {
                accept = u.ln() < h0 - h1;
            } else {
                finite = false;
            }
        }
        if !finite {
            self.divergences += 1;
        }
        if accept {
            std::mem::swap(&mut self.position, &mut self.q);
            std::mem::swap(&mut self.grad, &mut self.g);
            self.log_p = log_p;
            self.accepted += 1;
        }
        if self.iteration >= self.config.burn_in {
            self.samples.push(self.position.clone());
        }
        self.iteration += 1;
        accept
    }

    pub fn acceptance_rate(&self) -> f64 {
        if self.iteration == 0 {
            0.0
        } else {
            self.accepted as f64 / self.iteration as f64
        }
    }

    /// Run to `n_samples` transitions.
    pub fn run(mut self) -> Chain {
        let total = self.config.n_samples;
        let report_every = (total / 10).max(1);
        while !self.is_done() {
            self.step();
            if self.iteration % report_every == 0 {
                log::info!(
                    "hmc: {}/{} transitions, acceptance {:.3}, log p {:.4e}",
                    self.iteration,
                    total,
                    self.acceptance_rate(),
                    self.log_p
                );
            }
        }
        self.finish()
    }

    pub fn finish(self) -> Chain {
        let state = self.state();
        let acceptance_rate = self.acceptance_rate();
        let low_acceptance = acceptance_rate < LOW_ACCEPTANCE;
        if low_acceptance {
            log::warn!(
                "hmc acceptance rate {acceptance_rate:.3} is below {LOW_ACCEPTANCE}; the step size is likely too large"
            );
        }
        Chain {
            samples: self.samples,
            acceptance_rate,
            divergences: self.divergences,
            low_acceptance,
            config: self.config,
            state,
        }
    }
}

/// Draw `n_samples - burn_in` post-burn-in samples from `target`.
pub fn sample_posterior<D: LogDensity>(target: &D, config: &HmcConfig) -> Result<Chain> {
    Ok(HmcSampler::new(target, config.clone())?.run())
}

/// HMC over network weights for a dataset already expressed in the reference frame.
pub fn sample_network_posterior(
    arch: Architecture,
    scaled_data: &MeasurementDataset,
    sigma: f64,
    scaling: Scaling,
    config: &HmcConfig,
) -> Result<PosteriorSamples> {
    if !(sigma > 0.0) {
        return Err(Error::Domain(format!("sigma must be positive, got {sigma}")));
    }
    arch.validate()?;
    let target = NetworkPosterior {
        arch,
        data: scaled_data,
        sigma,
    };
    let chain = sample_posterior(&target, config)?;
    PosteriorSamples::from_chain(arch, chain, scaling)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn std_normal(dim: usize) -> FnDensity<impl Fn(&[f64]) -> f64, impl Fn(&[f64], &mut [f64])> {
        FnDensity::new(
            dim,
            |q: &[f64]| -0.5 * q.iter().map(|v| v * v).sum::<f64>(),
            |q: &[f64], g: &mut [f64]| {
                for (gi, qi) in g.iter_mut().zip(q) {
                    *gi = -qi;
                }
            },
        )
    }

    #[test]
    fn free_particle() {
        let q0 = [1.0, -2.0, 0.5];
        let p0 = [0.3, 0.1, -1.0];
        let (q, p) = leapfrog(&q0, &p0, |q| vec![0.0; q.len()], 7, 0.1).unwrap();
        for i in 0..3 {
            assert_relative_eq!(q[i], q0[i] + 0.7 * p0[i], epsilon = 1e-12);
            assert_eq!(p[i], p0[i]);
        }
    }

    #[test]
    fn leapfrog_reports_divergence() {
        let r = leapfrog(&[1.0], &[0.0], |_| vec![f64::NAN], 3, 0.1);
        assert!(matches!(r, Err(Error::Numerical(_))));
        assert!(leapfrog(&[1.0], &[0.0, 1.0], |q| q.to_vec(), 3, 0.1).is_err());
    }

    #[test]
    fn config_validation() {
        let mut c = HmcConfig::default();
        assert!(c.validate().is_ok());
        c.burn_in = c.n_samples;
        assert!(c.validate().is_err());
        let c = HmcConfig {
            step_size: 0.0,
            ..HmcConfig::default()
        };
        assert!(c.validate().is_err());
        let c = HmcConfig {
            leapfrog_steps: 0,
            ..HmcConfig::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn sample_count_excludes_burn_in() {
        let target = std_normal(2);
        let cfg = HmcConfig {
            step_size: 0.2,
            leapfrog_steps: 5,
            n_samples: 120,
            burn_in: 20,
            seed: 3,
            ..HmcConfig::default()
        };
        let chain = sample_posterior(&target, &cfg).unwrap();
        assert_eq!(chain.samples.len(), 100);
        assert!((0.0..=1.0).contains(&chain.acceptance_rate));
    }

    #[test]
    fn resume_matches_uninterrupted_chain() {
        let target = std_normal(3);
        let cfg = HmcConfig {
            step_size: 0.3,
            leapfrog_steps: 4,
            n_samples: 60,
            burn_in: 10,
            seed: 11,
            ..HmcConfig::default()
        };
        let full = sample_posterior(&target, &cfg).unwrap();

        let mut first = HmcSampler::new(&target, cfg.clone()).unwrap();
        for _ in 0..25 {
            first.step();
        }
        let state = first.state();
        let kept = first.samples().to_vec();
        let resumed = HmcSampler::resume(&target, cfg, state, kept).unwrap().run();
        assert_eq!(full.samples, resumed.samples);
        assert_eq!(full.acceptance_rate, resumed.acceptance_rate);
    }

    #[test]
    fn divergent_trajectories_are_rejected() {
        // log p finite at the origin only; any move produces NaN.
        let target = FnDensity::new(
            1,
            |q: &[f64]| if q[0] == 0.0 { 0.0 } else { f64::NAN },
            |_q: &[f64], g: &mut [f64]| g[0] = 0.0,
        );
        let cfg = HmcConfig {
            step_size: 0.1,
            leapfrog_steps: 2,
            n_samples: 10,
            burn_in: 0,
            seed: 0,
            init_std: 0.0,
            ..HmcConfig::default()
        };
        let chain = sample_posterior(&target, &cfg).unwrap();
        assert_eq!(chain.divergences, 10);
        assert_eq!(chain.acceptance_rate, 0.0);
        assert!(chain.low_acceptance);
        assert!(chain.samples.iter().all(|s| s[0] == 0.0));
    }
}
