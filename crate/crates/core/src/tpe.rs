//! Tree-structured Parzen Estimator over the conditional categorical genome space.
//!
//! The space has one depth dimension plus a `(type, kernels)` pair per block
//! position; position `i` is active only when `depth > i`. Each dimension gets
//! an independent categorical Parzen estimator fitted on the good trials (`l`)
//! and on the rest (`g`), using only trials where the dimension is active.
//! Candidates are drawn from `l` and the one maximizing
//! `sum(log l(x) - log g(x))` over its active dimensions is returned.
//! Draws that repeat an observed genome are redrawn, as spatially invalid ones
//! are, so model trials are not spent on cache hits. Fitness is maximized.

use std::collections::HashSet;

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::space::{check_spatial, ArchGenome, BlockSpec, BlockType, InputShape, SearchSpace};

/// Attempts per candidate before it is abandoned as spatially invalid.
pub const MAX_CANDIDATE_ATTEMPTS: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TpeParams {
    /// Fraction of observations treated as good.
    pub gamma: f64,
    /// Observations required before the model replaces prior sampling.
    pub n_startup: usize,
    pub n_candidates: usize,
    /// Weight of the uniform prior mixed into every estimator.
    pub prior_weight: f64,
    /// Upper bound on the size of the good set.
    pub good_cap: usize,
}

impl Default for TpeParams {
    fn default() -> Self {
        Self {
            gamma: 0.25,
            n_startup: 20,
            n_candidates: 24,
            prior_weight: 1.0,
            good_cap: 25,
        }
    }
}

impl TpeParams {
    pub fn check(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::Config("tpe: gamma must lie in (0, 1)".into()));
        }
        if self.n_startup < 1 || self.n_candidates < 1 || self.good_cap < 1 {
            return Err(Error::Config(
                "tpe: n_startup, n_candidates and good_cap must be >= 1".into(),
            ));
        }
        if !(self.prior_weight.is_finite() && self.prior_weight > 0.0) {
            return Err(Error::Config("tpe: prior_weight must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub genome: ArchGenome,
    pub score: f64,
}

impl Observation {
    pub fn new(genome: ArchGenome, score: f64) -> Self {
        Self { genome, score }
    }
}

/// Which sampler produced a suggestion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SuggestionPath {
    Prior,
    Model,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Suggestion {
    pub genome: ArchGenome,
    pub path: SuggestionPath,
}

/// Size of the good set for `n` observations.
pub fn good_count(n: usize, gamma: f64, good_cap: usize) -> usize {
    let by_fraction = (gamma * n as f64).ceil() as usize;
    by_fraction.min(good_cap).max(1).min(n)
}

/// Splits observations into good (top fitness, earlier index wins ties) and bad.
pub fn split_good_bad(
    history: &[Observation],
    gamma: f64,
    good_cap: usize,
) -> (Vec<&Observation>, Vec<&Observation>) {
    let mut order: Vec<usize> = (0..history.len()).collect();
    // stable sort keeps earlier trials first among equal scores
    order.sort_by(|&a, &b| history[b].score.total_cmp(&history[a].score));
    let n_good = good_count(history.len(), gamma, good_cap);
    let good = order[..n_good].iter().map(|&i| &history[i]).collect();
    let bad = order[n_good..].iter().map(|&i| &history[i]).collect();
    (good, bad)
}

/// Categorical Parzen estimate: `prior_weight/|domain| + count(v)`, normalized.
pub fn categorical_posterior<T: PartialEq>(values: &[T], domain: &[T], prior_weight: f64) -> Vec<f64> {
    let prior = prior_weight / domain.len() as f64;
    let weights: Vec<f64> = domain
        .iter()
        .map(|d| prior + values.iter().filter(|v| *v == d).count() as f64)
        .collect();
    let total: f64 = weights.iter().sum();
    weights.into_iter().map(|w| w / total).collect()
}

struct Categorical {
    probs: Vec<f64>,
    sampler: WeightedIndex<f64>,
}

impl Categorical {
    fn fit<T: PartialEq>(values: &[T], domain: &[T], prior_weight: f64) -> Self {
        let probs = categorical_posterior(values, domain, prior_weight);
        let sampler = WeightedIndex::new(&probs).expect("posterior weights are positive");
        Self { probs, sampler }
    }

    fn log_prob(&self, index: usize) -> f64 {
        self.probs[index].ln()
    }
}

/// Per-dimension estimators for one side (good or bad) of the split.
struct SideModel {
    depth: Categorical,
    types: Vec<Categorical>,
    kernels: Vec<Categorical>,
}

impl SideModel {
    fn fit(obs: &[&Observation], space: &SearchSpace, prior_weight: f64) -> Self {
        let depth_domain: Vec<usize> = space.depths().collect();
        let depths: Vec<usize> = obs.iter().map(|o| o.genome.depth()).collect();
        let depth = Categorical::fit(&depths, &depth_domain, prior_weight);

        let mut types = Vec::with_capacity(space.depth_max);
        let mut kernels = Vec::with_capacity(space.depth_max);
        for i in 0..space.depth_max {
            let active: Vec<&BlockSpec> = obs.iter().filter_map(|o| o.genome.blocks.get(i)).collect();
            let ts: Vec<BlockType> = active.iter().map(|b| b.block_type).collect();
            let ks: Vec<u32> = active.iter().map(|b| b.kernels).collect();
            types.push(Categorical::fit(&ts, &space.allowed_types, prior_weight));
            kernels.push(Categorical::fit(&ks, &space.allowed_kernels, prior_weight));
        }
        Self {
            depth,
            types,
            kernels,
        }
    }

    fn sample<R: Rng + ?Sized>(&self, space: &SearchSpace, rng: &mut R) -> Encoded {
        let depth_idx = self.depth.sampler.sample(rng);
        let depth = space.depth_min + depth_idx;
        let blocks = (0..depth)
            .map(|i| {
                let t = self.types[i].sampler.sample(rng);
                let k = self.kernels[i].sampler.sample(rng);
                (t, k)
            })
            .collect();
        Encoded { depth_idx, blocks }
    }

    fn log_density(&self, x: &Encoded) -> f64 {
        self.depth.log_prob(x.depth_idx)
            + x.blocks
                .iter()
                .enumerate()
                .map(|(i, &(t, k))| self.types[i].log_prob(t) + self.kernels[i].log_prob(k))
                .sum::<f64>()
    }
}

/// A genome as indices into the space's domains.
struct Encoded {
    depth_idx: usize,
    blocks: Vec<(usize, usize)>,
}

impl Encoded {
    fn decode(&self, space: &SearchSpace) -> ArchGenome {
        ArchGenome::new(
            self.blocks
                .iter()
                .map(|&(t, k)| BlockSpec::new(space.allowed_types[t], space.allowed_kernels[k]))
                .collect(),
        )
    }
}

/// Uniform baseline suggestion (the prior path).
pub fn random_suggest<R: Rng + ?Sized>(
    space: &SearchSpace,
    input: InputShape,
    rng: &mut R,
) -> Result<ArchGenome> {
    space.sample_valid(input, rng)
}

/// Proposes the next genome to evaluate given completed observations.
pub fn tpe_suggest<R: Rng + ?Sized>(
    history: &[Observation],
    space: &SearchSpace,
    input: InputShape,
    params: &TpeParams,
    rng: &mut R,
) -> Result<Suggestion> {
    if history.len() < params.n_startup {
        return Ok(Suggestion {
            genome: random_suggest(space, input, rng)?,
            path: SuggestionPath::Prior,
        });
    }

    let (good, bad) = split_good_bad(history, params.gamma, params.good_cap);
    let l = SideModel::fit(&good, space, params.prior_weight);
    let g = SideModel::fit(&bad, space, params.prior_weight);

    let seen: HashSet<&ArchGenome> = history.iter().map(|o| &o.genome).collect();
    let mut best: Option<(f64, ArchGenome)> = None;
    for _ in 0..params.n_candidates {
        // Already-observed genomes are redrawn like invalid ones, but kept as a
        // last resort when nothing new turns up.
        let mut repeat = None;
        let mut fresh = None;
        for _ in 0..MAX_CANDIDATE_ATTEMPTS {
            let x = l.sample(space, rng);
            let genome = x.decode(space);
            if check_spatial(&genome, input).is_err() {
                continue;
            }
            if !seen.contains(&genome) {
                fresh = Some((x, genome));
                break;
            }
            repeat.get_or_insert((x, genome));
        }
        let Some((x, genome)) = fresh.or(repeat) else {
            continue;
        };
        let score = l.log_density(&x) - g.log_density(&x);
        if best.as_ref().is_none_or(|(s, _)| score > *s) {
            best = Some((score, genome));
        }
    }

    match best {
        Some((_, genome)) => Ok(Suggestion {
            genome,
            path: SuggestionPath::Model,
        }),
        None => Ok(Suggestion {
            genome: random_suggest(space, input, rng)?,
            path: SuggestionPath::Prior,
        }),
    }
}
