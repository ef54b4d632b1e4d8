//! Deterministic point-estimate baseline: full-batch Adam on the mean squared error.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::MeasurementDataset;
use crate::error::{Error, Result};
use crate::net::{self, Architecture, Objective, WeightVector};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub iterations: usize,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    pub seed: u64,
    /// Loss is recorded every `trace_every` iterations (and at the end).
    #[serde(default = "default_trace_every")]
    pub trace_every: usize,
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_epsilon() -> f64 {
    1e-8
}
fn default_trace_every() -> usize {
    100
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 2e-4,
            iterations: 30_000,
            beta1: default_beta1(),
            beta2: default_beta2(),
            epsilon: default_epsilon(),
            seed: 0,
            trace_every: default_trace_every(),
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("Adam betas must lie in [0, 1)".into()));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::Config("Adam epsilon must be positive".into()));
        }
        if self.trace_every == 0 {
            return Err(Error::Config("trace_every must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct TrainedDnn {
    pub weights: WeightVector,
    /// `(iteration, mse)` pairs; iteration 0 is the initialization.
    pub loss_trace: Vec<(usize, f64)>,
}

impl TrainedDnn {
    pub fn final_loss(&self) -> f64 {
        self.loss_trace.last().map_or(f64::NAN, |p| p.1)
    }
}

/// Weights drawn from `U(-1/√fan_in, 1/√fan_in)`, biases included.
pub fn init_uniform(arch: Architecture, seed: u64) -> Result<WeightVector> {
    arch.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = Vec::with_capacity(arch.n_params());
    for (out, inp) in arch.layer_dims() {
        let bound = 1.0 / (inp as f64).sqrt();
        let count = out * inp + if arch.bias { out } else { 0 };
        values.extend((0..count).map(|_| rng.random_range(-bound..=bound)));
    }
    WeightVector::new(arch, values)
}

/// Full-batch Adam on the MSE of `data` from a seeded uniform initialization.
pub fn train_dnn(data: &MeasurementDataset, arch: Architecture, cfg: &AdamConfig) -> Result<TrainedDnn> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Domain("cannot train on an empty dataset".into()));
    }
    let init = init_uniform(arch, cfg.seed)?;
    let mut params = init.into_values();
    let n = params.len();
    let mut grad = vec![0.0; n];
    let mut m = vec![0.0; n];
    let mut v = vec![0.0; n];
    let mut trace = Vec::with_capacity(cfg.iterations / cfg.trace_every + 2);
    let (mut b1t, mut b2t) = (1.0, 1.0);
    for it in 0..cfg.iterations {
        let loss = net::objective_and_gradient_raw(&arch, &params, data, Objective::Mse, &mut grad);
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Numerical(format!(
                "non-finite training loss at iteration {it} (last recorded {:?}); lower the learning rate",
                trace.last()
            )));
        }
        if it % cfg.trace_every == 0 {
            trace.push((it, loss));
            log::debug!("adam: iteration {it}, mse {loss:.6e}");
        }
        b1t *= cfg.beta1;
        b2t *= cfg.beta2;
        let step = cfg.learning_rate * (1.0 - b2t).sqrt() / (1.0 - b1t);
        for i in 0..n {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * grad[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
            params[i] -= step * m[i] / (v[i].sqrt() + cfg.epsilon * (1.0 - b2t).sqrt());
        }
    }
    let final_loss = net::objective_and_gradient_raw(&arch, &params, data, Objective::Mse, &mut grad);
    if !final_loss.is_finite() {
        return Err(Error::Numerical("non-finite final training loss".into()));
    }
    trace.push((cfg.iterations, final_loss));
    log::info!("adam: {} iterations, final mse {final_loss:.6e}", cfg.iterations);
    Ok(TrainedDnn {
        weights: WeightVector::new(arch, params)?,
        loss_trace: trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Domain;

    fn dataset(n: usize, f: impl Fn(f64, f64) -> f64) -> MeasurementDataset {
        let pts: Vec<(f64, f64)> = (0..n)
            .map(|i| {
                let s = i as f64 / n as f64;
                (2.0 * s - 1.0, (7.3 * s).sin())
            })
            .collect();
        let ys = pts.iter().map(|&(t, x)| f(t, x)).collect();
        MeasurementDataset::from_points(&pts, ys, Domain::new(-1.0, 1.0, -1.0, 1.0).unwrap()).unwrap()
    }

    #[test]
    fn zero_iterations_returns_initialization() {
        let arch = Architecture::new(2, 8, true).unwrap();
        let cfg = AdamConfig {
            iterations: 0,
            seed: 9,
            ..AdamConfig::default()
        };
        let out = train_dnn(&dataset(10, |_, _| 1.0), arch, &cfg).unwrap();
        assert_eq!(out.weights, init_uniform(arch, 9).unwrap());
        assert_eq!(out.loss_trace.len(), 1);
    }

    #[test]
    fn init_respects_fan_in_bounds() {
        let arch = Architecture::default();
        let w = init_uniform(arch, 1).unwrap();
        let first = &w.values()[..100];
        assert!(first.iter().all(|v| v.abs() <= 1.0 / 2f64.sqrt()));
        assert!(w.values()[150..].iter().all(|v| v.abs() <= 1.0 / 50f64.sqrt()));
    }

    #[test]
    fn fits_a_constant() {
        let arch = Architecture::new(2, 10, true).unwrap();
        let cfg = AdamConfig {
            learning_rate: 1e-2,
            iterations: 2000,
            seed: 3,
            ..AdamConfig::default()
        };
        let out = train_dnn(&dataset(50, |_, _| 0.7), arch, &cfg).unwrap();
        assert!(out.final_loss() <= 1e-4, "{}", out.final_loss());
        assert!(out.final_loss() <= out.loss_trace[0].1);
    }

    #[test]
    fn blow_up_is_reported() {
        let arch = Architecture::new(1, 4, true).unwrap();
        let cfg = AdamConfig {
            learning_rate: 1e300,
            iterations: 50,
            ..AdamConfig::default()
        };
        let r = train_dnn(&dataset(20, |t, x| 1e200 * (t + x)), arch, &cfg);
        assert!(matches!(r, Err(Error::Numerical(_))));
    }

    #[test]
    fn empty_data_rejected() {
        let data = MeasurementDataset::empty(Domain::unit());
        assert!(train_dnn(&data, Architecture::default(), &AdamConfig::default()).is_err());
    }
}
