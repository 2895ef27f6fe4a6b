//! The search loop: suggest, expand, estimate cost, evaluate accuracy, score,
//! append to the log, repeat.
//!
//! Every trial is appended to `<out_dir>/trials.jsonl` before the next
//! suggestion is made, and each trial's randomness is derived from
//! `(seed, trial index)` alone. A log prefix is therefore a complete search
//! state: rerunning with the same configuration replays it and continues.

pub mod log;
pub mod report;

use std::fs;
use std::path::{Path, PathBuf};
use std::thread;
use std::time::{Duration, Instant};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{
    AccuracyEvaluator, AccuracyResult, CacheKey, EvalCache, EvalError, EvalJob, EvaluatorSpec,
    Source, SurrogateParams,
};
use crate::fitness::{fitness_of, FitnessSpec};
use crate::imc::{estimate_network, HardwareConfig};
use crate::ir::{expand_in, ExpandOptions, HeadSpec};
use crate::space::{ArchGenome, InputShape, SearchSpace};
use crate::tpe::{random_suggest, tpe_suggest, Suggestion, SuggestionPath, TpeParams};

pub use log::{LogWriter, Trial, TrialLog, TrialStatus};
pub use report::{export_scatter, parse_scatter, render_best_table, report_best, ScatterRow};

pub const LOG_FILE: &str = "trials.jsonl";
pub const CONFIG_FILE: &str = "config.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    #[default]
    Tpe,
    /// Uniform sampling for every trial; the baseline for comparisons.
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub space: SearchSpace,
    pub input_shape: InputShape,
    pub head: HeadSpec,
    pub expand: ExpandOptions,
    pub hardware: HardwareConfig,
    pub tpe: TpeParams,
    pub fitness: FitnessSpec,
    pub strategy: Strategy,
    pub evaluator: EvaluatorSpec,
    pub surrogate: SurrogateParams,
    pub eval_timeout_s: f64,
    pub trials: usize,
    pub seed: u64,
    pub dataset_tag: String,
    pub budget_epochs: u32,
    pub out_dir: PathBuf,
    /// Evaluate up to this many prior-path trials concurrently.
    pub parallel: usize,
    /// Record a fixed timestamp and zero wall time so logs are byte-reproducible.
    pub deterministic_clock: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            space: SearchSpace::default(),
            input_shape: InputShape::new(3, 32, 32),
            head: HeadSpec::default(),
            expand: ExpandOptions::default(),
            hardware: HardwareConfig::default(),
            tpe: TpeParams::default(),
            fitness: FitnessSpec::default(),
            strategy: Strategy::Tpe,
            evaluator: EvaluatorSpec::Surrogate,
            surrogate: SurrogateParams::default(),
            eval_timeout_s: 3600.0,
            trials: 100,
            seed: 0,
            dataset_tag: "cifar10".into(),
            budget_epochs: 10,
            out_dir: PathBuf::from("runs/default"),
            parallel: 1,
            deterministic_clock: false,
        }
    }
}

impl RunConfig {
    /// Dataset presets: input shape, class count and trial budget.
    pub fn preset(dataset: &str) -> Option<Self> {
        let (shape, classes, trials) = match dataset {
            "cifar10" => (InputShape::new(3, 32, 32), 10, 50),
            "asl" => (InputShape::new(1, 28, 28), 24, 100),
            "ckplus" => (InputShape::new(1, 48, 48), 7, 100),
            _ => return None,
        };
        Some(Self {
            input_shape: shape,
            head: HeadSpec::new(classes),
            trials,
            dataset_tag: dataset.into(),
            out_dir: PathBuf::from(format!("runs/{dataset}")),
            ..Self::default()
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn check(&self) -> Result<()> {
        self.space.check()?;
        self.head.check()?;
        self.hardware.check()?;
        self.tpe.check()?;
        self.fitness.check()?;
        self.surrogate.check()?;
        if self.trials < 1 {
            return Err(Error::Config("trials must be >= 1".into()));
        }
        if self.parallel < 1 {
            return Err(Error::Config("parallel must be >= 1".into()));
        }
        if !(self.eval_timeout_s.is_finite() && self.eval_timeout_s > 0.0) {
            return Err(Error::Config("eval_timeout_s must be positive".into()));
        }
        let s = self.input_shape;
        if s.channels < 1 || s.height < 1 || s.width < 1 {
            return Err(Error::Config("input_shape dims must be >= 1".into()));
        }
        Ok(())
    }

    pub fn log_path(&self) -> PathBuf {
        self.out_dir.join(LOG_FILE)
    }

    fn timeout(&self) -> Duration {
        Duration::from_secs_f64(self.eval_timeout_s)
    }

    fn build_evaluator(&self) -> Box<dyn AccuracyEvaluator> {
        self.evaluator.build(self.surrogate, self.timeout())
    }
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Random stream used to make trial `index`'s suggestion.
pub fn suggestion_rng(seed: u64, index: usize) -> ChaCha8Rng {
    stream_rng(seed, 2 * index as u64)
}

/// Seed passed to the evaluator for trial `index`.
pub fn trial_seed(seed: u64, index: usize) -> u64 {
    stream_rng(seed, 2 * index as u64 + 1).next_u64()
}

fn timestamp(deterministic: bool) -> String {
    if deterministic {
        "1970-01-01T00:00:00Z".to_string()
    } else {
        chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
    }
}

struct Pending {
    index: usize,
    suggestion: Suggestion,
    started_at: String,
    clock: Instant,
}

struct Evaluated {
    pending: Pending,
    latency_ms: f64,
    energy_mj: f64,
    outcome: std::result::Result<AccuracyResult, String>,
}

struct Search<'a> {
    config: &'a RunConfig,
    cache: EvalCache,
}

impl Search<'_> {
    fn suggest(&self, log: &TrialLog, index: usize) -> Result<Suggestion> {
        let c = self.config;
        let mut rng = suggestion_rng(c.seed, index);
        match c.strategy {
            Strategy::Tpe => tpe_suggest(
                &log.observations(),
                &c.space,
                c.input_shape,
                &c.tpe,
                &mut rng,
            ),
            Strategy::Random => Ok(Suggestion {
                genome: random_suggest(&c.space, c.input_shape, &mut rng)?,
                path: SuggestionPath::Prior,
            }),
        }
    }

    fn cache_key(&self, genome: &ArchGenome) -> CacheKey {
        CacheKey::new(genome, &self.config.dataset_tag, self.config.budget_epochs)
    }

    fn pending(&self, index: usize, suggestion: Suggestion) -> Pending {
        Pending {
            index,
            suggestion,
            started_at: timestamp(self.config.deterministic_clock),
            clock: Instant::now(),
        }
    }

    /// Cost model plus accuracy for one trial. `evaluator` is `None` when the
    /// result must come from the cache.
    fn evaluate(
        &self,
        pending: Pending,
        evaluator: Option<&mut dyn AccuracyEvaluator>,
    ) -> Result<Evaluated> {
        let c = self.config;
        let genome = &pending.suggestion.genome;
        let ir = expand_in(&c.space, genome, c.input_shape, &c.head, &c.expand)?;
        let cost = estimate_network(&ir, &c.hardware)?;
        let key = self.cache_key(genome);
        let outcome = match (self.cache.lookup(&key), evaluator) {
            (Some(hit), _) => Ok(hit),
            (None, Some(evaluator)) => {
                let job = EvalJob {
                    id: pending.index as u64,
                    genome,
                    ir: &ir,
                    dataset: &c.dataset_tag,
                    seed: trial_seed(c.seed, pending.index),
                    epochs: c.budget_epochs,
                };
                evaluator.evaluate(&job).map_err(|e: EvalError| e.to_string())
            }
            (None, None) => unreachable!("uncached trial scheduled without an evaluator"),
        };
        Ok(Evaluated {
            pending,
            latency_ms: cost.latency_ms,
            energy_mj: cost.energy_mj,
            outcome,
        })
    }

    fn finish(&self, done: Evaluated) -> Trial {
        let c = self.config;
        let Evaluated {
            pending,
            latency_ms,
            energy_mj,
            outcome,
        } = done;
        let genome = pending.suggestion.genome;
        if let Ok(result) = &outcome {
            if result.source != Source::Cache {
                self.cache.record(self.cache_key(&genome), result.clone());
            }
        }
        let scored = outcome.and_then(|r| {
            crate::fitness::fitness_eval(r.accuracy, latency_ms, energy_mj, &c.fitness)
                .map(|f| (r, f))
                .map_err(|e| e.to_string())
        });
        let wall_time_s = if c.deterministic_clock {
            0.0
        } else {
            pending.clock.elapsed().as_secs_f64()
        };
        let (status, accuracy, fitness, source, error) = match scored {
            Ok((r, f)) => (TrialStatus::Ok, Some(r.accuracy), f, Some(r.source), None),
            Err(e) => (TrialStatus::Failed, None, f64::NEG_INFINITY, None, Some(e)),
        };
        Trial {
            index: pending.index,
            genome,
            status,
            accuracy,
            latency_ms,
            energy_mj,
            fitness,
            suggestion_path: pending.suggestion.path,
            source,
            error,
            started_at: pending.started_at,
            wall_time_s,
            seed: trial_seed(c.seed, pending.index),
        }
    }

    /// Evaluates prior-path trials on several evaluators at once. Duplicate
    /// genomes within the batch are evaluated once; later copies read the cache,
    /// exactly as they would when run one at a time.
    fn run_batch(
        &self,
        batch: Vec<Pending>,
        evaluators: &mut [Box<dyn AccuracyEvaluator>],
    ) -> Result<Vec<Evaluated>> {
        let mut seen = std::collections::HashSet::new();
        let mut fresh = Vec::new();
        let mut repeats = Vec::new();
        for p in batch {
            let key = self.cache_key(&p.suggestion.genome);
            if self.cache.lookup(&key).is_none() && seen.insert(key) {
                fresh.push(p);
            } else {
                repeats.push(p);
            }
        }

        let workers = evaluators.len();
        let mut lanes: Vec<Vec<Pending>> = (0..workers).map(|_| Vec::new()).collect();
        for (i, p) in fresh.into_iter().enumerate() {
            lanes[i % workers].push(p);
        }
        let mut results: Vec<Evaluated> = thread::scope(|scope| {
            let handles: Vec<_> = lanes
                .into_iter()
                .zip(evaluators.iter_mut())
                .map(|(lane, evaluator)| {
                    scope.spawn(move || {
                        lane.into_iter()
                            .map(|p| self.evaluate(p, Some(evaluator.as_mut())))
                            .collect::<Result<Vec<_>>>()
                    })
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("evaluation worker panicked"))
                .collect::<Result<Vec<Vec<_>>>>()
        })?
        .into_iter()
        .flatten()
        .collect();

        // Successful first copies must be cached before the repeats are resolved.
        for r in &results {
            if let Ok(acc) = &r.outcome {
                self.cache
                    .record(self.cache_key(&r.pending.suggestion.genome), acc.clone());
            }
        }
        for p in repeats {
            let key = self.cache_key(&p.suggestion.genome);
            if self.cache.lookup(&key).is_some() {
                results.push(self.evaluate(p, None)?);
            } else {
                // The first copy failed, so a sequential run would retry it.
                results.push(self.evaluate(p, Some(evaluators[0].as_mut()))?);
            }
        }
        results.sort_by_key(|r| r.pending.index);
        Ok(results)
    }
}

/// Runs (or resumes) a search and returns the complete trial log.
pub fn run_search(config: &RunConfig) -> Result<TrialLog> {
    config.check()?;
    fs::create_dir_all(&config.out_dir)
        .map_err(|e| Error::io(format!("creating {}", config.out_dir.display()), e))?;
    let log_path = config.log_path();
    let (mut writer, mut log) = LogWriter::open_resume(&log_path)?;
    for t in &log.trials {
        if t.seed != trial_seed(config.seed, t.index) {
            return Err(Error::Log {
                path: log_path,
                reason: format!("trial {} was recorded under a different seed", t.index),
            });
        }
    }
    if log.len() > config.trials {
        return Err(Error::Log {
            path: log_path,
            reason: format!(
                "log already holds {} trials, more than the requested {}",
                log.len(),
                config.trials
            ),
        });
    }
    let config_json = serde_json::to_string_pretty(config)?;
    fs::write(config.out_dir.join(CONFIG_FILE), config_json + "\n")
        .map_err(|e| Error::io("writing run config", e))?;

    let search = Search {
        config,
        cache: EvalCache::new(),
    };
    // The log is the persisted form of the cache.
    for t in log.successful() {
        if let (Some(accuracy), Some(source)) = (t.accuracy, t.source) {
            search.cache.record(
                search.cache_key(&t.genome),
                AccuracyResult {
                    accuracy,
                    source,
                    meta: String::new(),
                },
            );
        }
    }

    let mut evaluators: Vec<Box<dyn AccuracyEvaluator>> = vec![config.build_evaluator()];

    // Trials that are certain to take the prior path do not depend on each
    // other and may be evaluated together.
    let prior_end = match config.strategy {
        Strategy::Tpe => config.tpe.n_startup.min(config.trials),
        Strategy::Random => config.trials,
    };
    if config.parallel > 1 && log.len() < prior_end {
        evaluators.extend((1..config.parallel).map(|_| config.build_evaluator()));
        while log.len() < prior_end {
            let start = log.len();
            let end = (start + 4 * config.parallel).min(prior_end);
            let batch = (start..end)
                .map(|i| Ok(search.pending(i, search.suggest(&log, i)?)))
                .collect::<Result<Vec<_>>>()?;
            for done in search.run_batch(batch, &mut evaluators)? {
                let trial = search.finish(done);
                writer.append(&trial)?;
                log.trials.push(trial);
            }
        }
        evaluators.truncate(1);
    }

    while log.len() < config.trials {
        let index = log.len();
        let pending = search.pending(index, search.suggest(&log, index)?);
        let done = search.evaluate(pending, Some(evaluators[0].as_mut()))?;
        let trial = search.finish(done);
        writer.append(&trial)?;
        log.trials.push(trial);
    }
    Ok(log)
}

/// Cost and fitness of one genome under a run configuration, without logging.
pub fn score_genome(config: &RunConfig, genome: &ArchGenome, accuracy: f64) -> Result<f64> {
    let ir = expand_in(&config.space, genome, config.input_shape, &config.head, &config.expand)?;
    let cost = estimate_network(&ir, &config.hardware)?;
    Ok(fitness_of(accuracy, &cost, &config.fitness)?)
}
