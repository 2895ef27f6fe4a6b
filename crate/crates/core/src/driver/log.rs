//! Append-only JSONL trial log.

use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::Source;
use crate::fitness::{fitness_eval, FitnessSpec};
use crate::space::{genome_text, ArchGenome};
use crate::tpe::{Observation, SuggestionPath};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrialStatus {
    Ok,
    Failed,
}

/// One suggest/evaluate/observe iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Trial {
    pub index: usize,
    #[serde(with = "genome_text")]
    pub genome: ArchGenome,
    pub status: TrialStatus,
    pub accuracy: Option<f64>,
    pub latency_ms: f64,
    pub energy_mj: f64,
    /// `-inf` for failed trials, written as `null`.
    #[serde(with = "neg_inf_as_null")]
    pub fitness: f64,
    pub suggestion_path: SuggestionPath,
    pub source: Option<Source>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub started_at: String,
    pub wall_time_s: f64,
    /// Seed handed to the evaluator for this trial.
    pub seed: u64,
}

impl Trial {
    pub fn is_ok(&self) -> bool {
        self.status == TrialStatus::Ok
    }

    pub fn depth(&self) -> usize {
        self.genome.depth()
    }

    /// Fitness recomputed from the stored accuracy and costs.
    pub fn recompute_fitness(&self, spec: &FitnessSpec) -> Option<f64> {
        let accuracy = self.accuracy?;
        fitness_eval(accuracy, self.latency_ms, self.energy_mj, spec).ok()
    }

    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("trial serializes")
    }
}

mod neg_inf_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NEG_INFINITY))
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrialLog {
    pub trials: Vec<Trial>,
}

impl TrialLog {
    pub fn new(trials: Vec<Trial>) -> Self {
        Self { trials }
    }

    pub fn len(&self) -> usize {
        self.trials.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trials.is_empty()
    }

    pub fn successful(&self) -> impl Iterator<Item = &Trial> {
        self.trials.iter().filter(|t| t.is_ok())
    }

    pub fn observations(&self) -> Vec<Observation> {
        self.successful()
            .map(|t| Observation::new(t.genome.clone(), t.fitness))
            .collect()
    }

    /// Parses complete lines; a trailing line without a newline is an
    /// interrupted append and is ignored.
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let complete = match text.rfind('\n') {
            Some(end) => &text[..=end],
            None => "",
        };
        let mut trials = Vec::new();
        for (n, line) in complete.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let trial: Trial = serde_json::from_str(line).map_err(|e| Error::Log {
                path: path.to_path_buf(),
                reason: format!("line {}: {e}", n + 1),
            })?;
            if trial.index != trials.len() {
                return Err(Error::Log {
                    path: path.to_path_buf(),
                    reason: format!(
                        "line {}: trial index {} breaks the dense sequence (expected {})",
                        n + 1,
                        trial.index,
                        trials.len()
                    ),
                });
            }
            trials.push(trial);
        }
        Ok(Self { trials })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Self::parse(&text, path)
    }

    pub fn to_jsonl(&self) -> String {
        self.trials
            .iter()
            .map(|t| t.to_line() + "\n")
            .collect()
    }
}

/// Open handle that appends one trial per line.
pub struct LogWriter {
    path: PathBuf,
    file: File,
}

impl LogWriter {
    /// Opens `path` for appending, first cutting off any partial final line.
    /// Returns the writer and the trials already present.
    pub fn open_resume(path: &Path) -> Result<(Self, TrialLog)> {
        let existing = match fs::read_to_string(path) {
            Ok(text) => Some(text),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => None,
            Err(e) => return Err(Error::io(format!("reading {}", path.display()), e)),
        };
        let log = match &existing {
            Some(text) => {
                let log = TrialLog::parse(text, path)?;
                let keep = text.rfind('\n').map_or(0, |i| i + 1);
                if keep != text.len() {
                    let f = OpenOptions::new()
                        .write(true)
                        .open(path)
                        .map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
                    f.set_len(keep as u64)
                        .map_err(|e| Error::io(format!("truncating {}", path.display()), e))?;
                }
                log
            }
            None => TrialLog::default(),
        };
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(format!("opening {} for append", path.display()), e))?;
        Ok((
            Self {
                path: path.to_path_buf(),
                file,
            },
            log,
        ))
    }

    pub fn append(&mut self, trial: &Trial) -> Result<()> {
        let mut line = trial.to_line();
        line.push('\n');
        self.file
            .write_all(line.as_bytes())
            .and_then(|_| self.file.flush())
            .map_err(|e| Error::io(format!("appending to {}", self.path.display()), e))
    }
}
