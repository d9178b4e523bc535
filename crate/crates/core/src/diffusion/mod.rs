//! Diffusion-based scrubbing of triple embeddings.
//!
//! A forget-set triple `(h, r, t)` is flattened to `[h ‖ r ‖ t]`. A noise
//! predictor is fitted to those vectors, and each one is then pushed
//! forward to step `T`, passed through the reparameterization heads, and
//! denoised back through the full reverse chain. The result replaces the
//! original rows.

mod net;
mod process;
mod schedule;

use std::fs;
use std::path::Path;

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::rng::Rng;

pub use net::{noise_net_forward, Dense, ForwardCache, NetGrads, NoiseNet, NoisePredictor};
pub use process::{
    diffusion_train_step, forward_step, forward_to, generate_replacement, heads_train_step,
    noise_mse, reparameterize, reverse_step, standard_normal, ReparamHeads, StartFrom,
};
pub use schedule::{make_schedule, DiffusionSchedule};

/// `[h ‖ r ‖ t]`.
pub fn concat_triple(h: &[f64], r: &[f64], t: &[f64]) -> Vec<f64> {
    let mut v = Vec::with_capacity(h.len() * 3);
    v.extend_from_slice(h);
    v.extend_from_slice(r);
    v.extend_from_slice(t);
    v
}

/// Splits a `3d` vector back into its head, relation, and tail thirds.
pub fn split_triple(v: &[f64]) -> Result<(&[f64], &[f64], &[f64])> {
    if v.is_empty() || !v.len().is_multiple_of(3) {
        return Err(Error::invalid(format!(
            "triple embedding length {} is not a positive multiple of 3",
            v.len()
        )));
    }
    let d = v.len() / 3;
    Ok((&v[..d], &v[d..2 * d], &v[2 * d..]))
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionConfig {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub width: usize,
    pub train_steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub start_from: StartFrom,
    pub train_heads: bool,
    pub heads_steps: usize,
    pub heads_learning_rate: f64,
}

impl Default for DiffusionConfig {
    fn default() -> Self {
        Self {
            steps: 50,
            beta_start: 1e-4,
            beta_end: 0.02,
            width: 64,
            train_steps: 500,
            batch_size: 64,
            learning_rate: 0.2,
            start_from: StartFrom::Reparameterized,
            train_heads: false,
            heads_steps: 50,
            heads_learning_rate: 1e-3,
        }
    }
}

impl DiffusionConfig {
    pub fn schedule(&self) -> Result<DiffusionSchedule> {
        make_schedule(self.steps, self.beta_start, self.beta_end)
    }

    pub fn validate(&self) -> Result<()> {
        self.schedule()?;
        if self.width == 0 || self.batch_size == 0 {
            return Err(Error::Config(
                "diffusion width and batch size must be positive".into(),
            ));
        }
        if !(self.learning_rate >= 0.0 && self.heads_learning_rate >= 0.0) {
            return Err(Error::Config(
                "diffusion learning rates must be >= 0".into(),
            ));
        }
        Ok(())
    }
}

/// A fitted diffusion model over one client's forget-set embeddings.
#[derive(Debug, Clone)]
pub struct Scrubber {
    pub schedule: DiffusionSchedule,
    pub net: NoiseNet,
    pub heads: ReparamHeads,
    pub config: DiffusionConfig,
    /// Loss of every training step, in order.
    pub losses: Vec<f64>,
}

fn sample_batch<'a>(data: &'a [Vec<f64>], size: usize, rng: &mut Rng) -> Vec<&'a [f64]> {
    (0..size.min(data.len()).max(1))
        .map(|_| data[rng.random_range(0..data.len())].as_slice())
        .collect()
}

impl Scrubber {
    /// Fits the noise predictor (and optionally the heads) to `data`.
    pub fn fit(
        data: &[Vec<f64>],
        config: &DiffusionConfig,
        init_rng: &mut Rng,
        train_rng: &mut Rng,
    ) -> Result<Self> {
        config.validate()?;
        let dim = data
            .first()
            .map(Vec::len)
            .ok_or_else(|| Error::invalid("no vectors to fit"))?;
        if let Some(v) = data.iter().find(|v| v.len() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: v.len(),
            });
        }
        let schedule = config.schedule()?;
        let mut net = NoiseNet::new(dim, config.width, config.steps, init_rng)?;
        let mut losses = Vec::with_capacity(config.train_steps);
        for _ in 0..config.train_steps {
            let batch = sample_batch(data, config.batch_size, train_rng);
            losses.push(diffusion_train_step(
                &batch,
                &mut net,
                &schedule,
                config.learning_rate,
                train_rng,
            )?);
        }
        let mut heads = ReparamHeads::new(dim);
        if config.train_heads {
            for _ in 0..config.heads_steps {
                let batch = sample_batch(data, config.batch_size, train_rng);
                heads_train_step(
                    &batch,
                    &net,
                    &mut heads,
                    &schedule,
                    config.heads_learning_rate,
                    train_rng,
                )?;
            }
        }
        if !net.is_finite() {
            return Err(Error::invalid("diffusion training diverged"));
        }
        Ok(Self {
            schedule,
            net,
            heads,
            config: config.clone(),
            losses,
        })
    }

    pub fn generate(&self, x0: &[f64], rng: &mut Rng) -> Result<Vec<f64>> {
        generate_replacement(
            x0,
            &self.net,
            &self.heads,
            &self.schedule,
            self.config.start_from,
            rng,
        )
    }

    /// Net checkpoint plus `w_mu.txt` / `w_sigma.txt`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        self.net
            .write(dir, (self.config.beta_start, self.config.beta_end))?;
        self.heads.w_mu.write_text(&dir.join("w_mu.txt"))?;
        self.heads.w_sigma.write_text(&dir.join("w_sigma.txt"))?;
        let path = dir.join("losses.txt");
        let text: String = self.losses.iter().map(|l| format!("{l:.8e}\n")).collect();
        fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }
}
