use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use super::net::{NetGrads, NoiseNet, NoisePredictor};
use super::schedule::DiffusionSchedule;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng::Rng;

pub fn standard_normal(n: usize, rng: &mut Rng) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

fn check_len(expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::DimensionMismatch { expected, actual });
    }
    Ok(())
}

/// One noising step: `x_t = √α_t · x_{t−1} + √(1−α_t) · z`.
pub fn forward_step(
    x_prev: &[f64],
    t: usize,
    schedule: &DiffusionSchedule,
    z: &[f64],
) -> Result<Vec<f64>> {
    schedule.check_step(t)?;
    check_len(x_prev.len(), z.len())?;
    let a = schedule.alpha(t);
    let (sa, sn) = (a.sqrt(), (1.0 - a).sqrt());
    Ok(x_prev.iter().zip(z).map(|(x, z)| sa * x + sn * z).collect())
}

/// Closed form of `t` chained steps: `x_t = √ᾱ_t · x_0 + √(1−ᾱ_t) · z`.
///
/// The signal coefficient is applied as the running product `Π √α_s`, step
/// by step, so with `z = 0` the result equals chained [`forward_step`]
/// calls bit for bit.
pub fn forward_to(
    x0: &[f64],
    t: usize,
    schedule: &DiffusionSchedule,
    z: &[f64],
) -> Result<Vec<f64>> {
    schedule.check_step(t)?;
    check_len(x0.len(), z.len())?;
    let sn = (1.0 - schedule.alpha_bar(t)).sqrt();
    let mut x = x0.to_vec();
    for s in 1..=t {
        let sa = schedule.alpha(s).sqrt();
        x.iter_mut().for_each(|v| *v *= sa);
    }
    for (v, z) in x.iter_mut().zip(z) {
        *v += sn * z;
    }
    Ok(x)
}

/// The two square matrices of the reparameterized latent
/// `w = x_T·W_μ + (x_T·W_σ) ∘ z_0`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReparamHeads {
    pub w_mu: Matrix,
    pub w_sigma: Matrix,
}

impl ReparamHeads {
    /// `W_μ = I`, `W_σ = 0.01·I`.
    pub fn new(dim: usize) -> Self {
        let mut w_sigma = Matrix::identity(dim);
        w_sigma.scale(0.01);
        Self {
            w_mu: Matrix::identity(dim),
            w_sigma,
        }
    }

    pub fn dim(&self) -> usize {
        self.w_mu.rows()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.w_mu.rows();
        for m in [&self.w_mu, &self.w_sigma] {
            if m.rows() != n || m.cols() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    actual: if m.rows() != n { m.rows() } else { m.cols() },
                });
            }
        }
        if !(self.w_mu.is_finite() && self.w_sigma.is_finite()) {
            return Err(Error::invalid("reparameterization heads are not finite"));
        }
        Ok(())
    }
}

pub fn reparameterize(x_t: &[f64], heads: &ReparamHeads, z0: &[f64]) -> Result<Vec<f64>> {
    heads.validate()?;
    check_len(heads.dim(), z0.len())?;
    let mu = heads.w_mu.left_mul(x_t)?;
    let sigma = heads.w_sigma.left_mul(x_t)?;
    Ok(mu
        .iter()
        .zip(&sigma)
        .zip(z0)
        .map(|((m, s), z)| m + s * z)
        .collect())
}

/// Per-element mean squared error between true and predicted noise.
pub fn noise_mse(noise: &[f64], predicted: &[f64]) -> Result<f64> {
    check_len(noise.len(), predicted.len())?;
    if noise.is_empty() {
        return Ok(0.0);
    }
    Ok(noise
        .iter()
        .zip(predicted)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        / noise.len() as f64)
}

/// One SGD step on the noise-prediction objective. For each sample a step
/// `t ~ U{1..T}` and noise `f ~ N(0, I)` are drawn, `x_t` is formed in
/// closed form, and the loss is the mean over batch and elements of
/// `(f − f_τ(x_t, t))²`. Returns the pre-update loss.
pub fn diffusion_train_step(
    batch: &[&[f64]],
    net: &mut NoiseNet,
    schedule: &DiffusionSchedule,
    lr: f64,
    rng: &mut Rng,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::invalid("diffusion training batch is empty"));
    }
    let dim = net.embed_dim();
    let scale = 2.0 / (batch.len() * dim) as f64;
    let mut grads = net.zero_grads();
    let mut total = 0.0;
    for x0 in batch {
        check_len(dim, x0.len())?;
        let t = rng.random_range(1..=schedule.steps());
        let f = standard_normal(dim, rng);
        let x_t = forward_to(x0, t, schedule, &f)?;
        let (pred, cache) = net.forward(&x_t, t)?;
        total += noise_mse(&f, &pred)?;
        let d_out: Vec<f64> = pred.iter().zip(&f).map(|(p, f)| scale * (p - f)).collect();
        net.backward(&cache, &d_out, &mut grads);
    }
    if lr != 0.0 {
        net.apply(&grads, lr);
    }
    Ok(total / batch.len() as f64)
}

/// One denoising step:
/// `x_{t−1} = (x_t − (1−α_t)/√(1−ᾱ_t) · f̂) / √α_t + √β_t · z`,
/// with the injected noise dropped at `t = 1`.
pub fn reverse_step<P: NoisePredictor + ?Sized>(
    x_t: &[f64],
    t: usize,
    predictor: &P,
    schedule: &DiffusionSchedule,
    z2: &[f64],
) -> Result<Vec<f64>> {
    schedule.check_step(t)?;
    check_len(x_t.len(), z2.len())?;
    let f_hat = predictor.predict_noise(x_t, t)?;
    check_len(x_t.len(), f_hat.len())?;
    let (inv_sa, coef, sigma) = reverse_coefficients(schedule, t);
    Ok(x_t
        .iter()
        .zip(&f_hat)
        .zip(z2)
        .map(|((x, f), z)| inv_sa * (x - coef * f) + sigma * z)
        .collect())
}

/// `(1/√α_t, (1−α_t)/√(1−ᾱ_t), σ_t)` with `σ_1 = 0`.
fn reverse_coefficients(schedule: &DiffusionSchedule, t: usize) -> (f64, f64, f64) {
    let a = schedule.alpha(t);
    let ab = schedule.alpha_bar(t);
    let sigma = if t == 1 { 0.0 } else { schedule.beta(t).sqrt() };
    (1.0 / a.sqrt(), (1.0 - a) / (1.0 - ab).sqrt(), sigma)
}

/// Where the reverse chain starts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum StartFrom {
    /// Forward-noise `x_0` to step `T`, then pass it through the
    /// reparameterization heads.
    #[default]
    Reparameterized,
    /// Start from a fresh standard-normal draw.
    PureNoise,
}

impl std::str::FromStr for StartFrom {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "reparameterized" | "reparam" => Ok(StartFrom::Reparameterized),
            "pure_noise" => Ok(StartFrom::PureNoise),
            _ => Err(Error::invalid(format!("unknown start_from {s:?}"))),
        }
    }
}

impl std::fmt::Display for StartFrom {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            StartFrom::Reparameterized => "reparameterized",
            StartFrom::PureNoise => "pure_noise",
        })
    }
}

/// Noise `x0` to step `T`, reparameterize, and run the full reverse chain.
pub fn generate_replacement<P: NoisePredictor + ?Sized>(
    x0: &[f64],
    predictor: &P,
    heads: &ReparamHeads,
    schedule: &DiffusionSchedule,
    start: StartFrom,
    rng: &mut Rng,
) -> Result<Vec<f64>> {
    let n = x0.len();
    check_len(heads.dim(), n)?;
    let big_t = schedule.steps();
    let mut x = match start {
        StartFrom::Reparameterized => {
            let z = standard_normal(n, rng);
            let x_big_t = forward_to(x0, big_t, schedule, &z)?;
            let z0 = standard_normal(n, rng);
            reparameterize(&x_big_t, heads, &z0)?
        }
        StartFrom::PureNoise => standard_normal(n, rng),
    };
    for t in (1..=big_t).rev() {
        let z2 = standard_normal(n, rng);
        x = reverse_step(&x, t, predictor, schedule, &z2)?;
    }
    Ok(x)
}

/// One SGD step on `W_μ`, `W_σ` through the auxiliary reconstruction loss
/// `mean ‖generate_replacement(x_0) − x_0‖²`. The noise net is held fixed.
pub fn heads_train_step(
    batch: &[&[f64]],
    net: &NoiseNet,
    heads: &mut ReparamHeads,
    schedule: &DiffusionSchedule,
    lr: f64,
    rng: &mut Rng,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::invalid("heads training batch is empty"));
    }
    let n = heads.dim();
    let big_t = schedule.steps();
    let scale = 2.0 / (batch.len() * n) as f64;
    let mut g_mu = Matrix::zeros(n, n);
    let mut g_sigma = Matrix::zeros(n, n);
    let mut scratch: NetGrads = net.zero_grads();
    let mut total = 0.0;
    for x0 in batch {
        check_len(n, x0.len())?;
        let z = standard_normal(n, rng);
        let x_big_t = forward_to(x0, big_t, schedule, &z)?;
        let z0 = standard_normal(n, rng);
        let mut x = reparameterize(&x_big_t, heads, &z0)?;
        let mut caches = Vec::with_capacity(big_t);
        for t in (1..=big_t).rev() {
            let (f_hat, cache) = net.forward(&x, t)?;
            let z2 = standard_normal(n, rng);
            let (inv_sa, coef, sigma) = reverse_coefficients(schedule, t);
            x = x
                .iter()
                .zip(&f_hat)
                .zip(&z2)
                .map(|((x, f), z)| inv_sa * (x - coef * f) + sigma * z)
                .collect();
            caches.push((t, cache));
        }
        total += x.iter().zip(*x0).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / n as f64;
        let mut g: Vec<f64> = x.iter().zip(*x0).map(|(a, b)| scale * (a - b)).collect();
        for (t, cache) in caches.iter().rev() {
            let (inv_sa, coef, _) = reverse_coefficients(schedule, *t);
            let upstream: Vec<f64> = g.iter().map(|v| inv_sa * coef * v).collect();
            let through_net = net.backward(cache, &upstream, &mut scratch);
            g = g
                .iter()
                .zip(&through_net)
                .map(|(v, j)| inv_sa * v - j)
                .collect();
        }
        for (i, &xi) in x_big_t.iter().enumerate() {
            let (row_mu, row_sigma) = (g_mu.row_mut(i), g_sigma.row_mut(i));
            for j in 0..n {
                row_mu[j] += xi * g[j];
                row_sigma[j] += xi * g[j] * z0[j];
            }
        }
    }
    for (w, g) in heads.w_mu.as_mut_slice().iter_mut().zip(g_mu.as_slice()) {
        *w -= lr * g;
    }
    for (w, g) in heads
        .w_sigma
        .as_mut_slice()
        .iter_mut()
        .zip(g_sigma.as_slice())
    {
        *w -= lr * g;
    }
    Ok(total / batch.len() as f64)
}
