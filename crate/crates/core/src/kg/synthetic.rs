//! Small latent-geometry knowledge graphs for tests and desk-scale runs.
//!
//! Every entity gets a hidden Gaussian position and every relation a hidden
//! translation. A triple `(h, r, ?)` draws its tail from a softmax over
//! negative squared distance to `pos[h] + shift[r]`, so the graph has
//! structure a translational model can partly recover, while the sampling
//! temperature leaves enough randomness that individual facts must be
//! memorized.

use std::collections::HashSet;

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use super::{KnowledgeGraph, Triple, Vocab};
use crate::error::{Error, Result};
use crate::rng::{self, stream};

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub entities: usize,
    pub relations: usize,
    pub triples: usize,
    pub latent_dim: usize,
    pub temperature: f64,
    /// Standard deviation of the hidden relation translations.
    pub shift_scale: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            entities: 200,
            relations: 10,
            triples: 2000,
            latent_dim: 4,
            temperature: 1.5,
            shift_scale: 2.0,
        }
    }
}

impl SyntheticSpec {
    /// Parses `key=value` tokens such as `entities=200 relations=10`.
    /// Tokens may also be comma separated.
    pub fn parse<'a>(tokens: impl IntoIterator<Item = &'a str>) -> Result<Self> {
        let mut spec = Self::default();
        for tok in tokens.into_iter().flat_map(|t| t.split(',')) {
            let tok = tok.trim();
            if tok.is_empty() {
                continue;
            }
            let (k, v) = tok.split_once('=').ok_or_else(|| {
                Error::Config(format!("synthetic: expected key=value, got {tok:?}"))
            })?;
            let bad = || Error::Config(format!("synthetic: bad value for {k}: {v:?}"));
            match k {
                "entities" => spec.entities = v.parse().map_err(|_| bad())?,
                "relations" => spec.relations = v.parse().map_err(|_| bad())?,
                "triples" => spec.triples = v.parse().map_err(|_| bad())?,
                "latent_dim" => spec.latent_dim = v.parse().map_err(|_| bad())?,
                "temperature" => spec.temperature = v.parse().map_err(|_| bad())?,
                "shift_scale" => spec.shift_scale = v.parse().map_err(|_| bad())?,
                _ => return Err(Error::Config(format!("synthetic: unknown key {k:?}"))),
            }
        }
        Ok(spec)
    }

    /// Canonical `key=value,...` form accepted by [`SyntheticSpec::parse`].
    pub fn to_token(&self) -> String {
        format!(
            "entities={},relations={},triples={},latent_dim={},temperature={},shift_scale={}",
            self.entities,
            self.relations,
            self.triples,
            self.latent_dim,
            self.temperature,
            self.shift_scale
        )
    }

    fn capacity(&self) -> usize {
        self.entities * self.relations * self.entities.saturating_sub(1)
    }
}

pub fn generate(spec: &SyntheticSpec, seed: u64) -> Result<KnowledgeGraph> {
    if spec.entities < 2 || spec.relations == 0 || spec.latent_dim == 0 {
        return Err(Error::invalid(
            "synthetic graph needs >= 2 entities, >= 1 relation, latent_dim >= 1",
        ));
    }
    if spec.shift_scale.is_nan() || spec.shift_scale < 0.0 {
        return Err(Error::invalid("synthetic shift_scale must be >= 0"));
    }
    if spec.temperature.is_nan() || spec.temperature <= 0.0 {
        return Err(Error::invalid("synthetic temperature must be positive"));
    }
    if spec.triples > spec.capacity() / 2 {
        return Err(Error::invalid(format!(
            "{} triples is too dense for {} entities x {} relations",
            spec.triples, spec.entities, spec.relations
        )));
    }
    let mut rng = rng::derive(seed, &[stream::SYNTHETIC]);
    let k = spec.latent_dim;
    let mut gauss = |n: usize, scale: f64| -> Vec<f64> {
        (0..n)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                scale * z
            })
            .collect::<Vec<f64>>()
    };
    let pos = gauss(spec.entities * k, 1.0);
    let shift = gauss(spec.relations * k, spec.shift_scale);

    let mut seen = HashSet::with_capacity(spec.triples);
    let mut triples = Vec::with_capacity(spec.triples);
    let mut weights = vec![0.0; spec.entities];
    while triples.len() < spec.triples {
        let r = rng.random_range(0..spec.relations);
        let h = rng.random_range(0..spec.entities);
        let target: Vec<f64> = (0..k).map(|j| pos[h * k + j] + shift[r * k + j]).collect();
        let mut best = f64::NEG_INFINITY;
        for (e, w) in weights.iter_mut().enumerate() {
            *w = if e == h {
                f64::NEG_INFINITY
            } else {
                let d2: f64 = (0..k).map(|j| (pos[e * k + j] - target[j]).powi(2)).sum();
                -d2 / spec.temperature
            };
            best = best.max(*w);
        }
        let mut total = 0.0;
        for w in weights.iter_mut() {
            *w = (*w - best).exp();
            total += *w;
        }
        let mut u = rng.random::<f64>() * total;
        let mut t = spec.entities - 1;
        for (e, &w) in weights.iter().enumerate() {
            if u < w {
                t = e;
                break;
            }
            u -= w;
        }
        if t == h {
            continue;
        }
        let triple = Triple::new(h, r, t);
        if seen.insert(triple) {
            triples.push(triple);
        }
    }
    Ok(KnowledgeGraph {
        triples,
        entities: Vocab::from_names((0..spec.entities).map(|i| format!("e{i}")))?,
        relations: Vocab::from_names((0..spec.relations).map(|i| format!("r{i}")))?,
    })
}
