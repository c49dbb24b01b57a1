use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Ranges the random search draws from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchSpace {
    /// Log-uniform learning rate range.
    pub lr: [f64; 2],
    /// Inclusive hidden width range.
    pub hidden: [usize; 2],
    pub heads: Vec<usize>,
    pub hops: Vec<usize>,
    pub budget: usize,
}

impl Default for SearchSpace {
    fn default() -> Self {
        Self {
            lr: [1e-4, 1e-2],
            hidden: [16, 128],
            heads: vec![1, 2, 4, 8, 16],
            hops: vec![1, 2, 3],
            budget: 20,
        }
    }
}

/// One draw from a [`SearchSpace`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialParams {
    pub lr: f64,
    pub hidden: usize,
    pub heads: usize,
    pub hops: usize,
}

impl SearchSpace {
    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.lr;
        if self.budget == 0 {
            return Err(Error::Config("search budget must be at least 1".into()));
        }
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return Err(Error::Config(format!("bad learning rate range {:?}", self.lr)));
        }
        if self.hidden[0] == 0 || self.hidden[0] > self.hidden[1] {
            return Err(Error::Config(format!("bad hidden range {:?}", self.hidden)));
        }
        if self.heads.is_empty() || self.hops.is_empty() || self.heads.contains(&0) || self.hops.contains(&0) {
            return Err(Error::Config("head and hop choices must be non-empty and positive".into()));
        }
        Ok(())
    }

    pub fn sample<R: Rng>(&self, r: &mut R) -> TrialParams {
        let [lo, hi] = self.lr;
        let lr = if lo == hi { lo } else { r.gen_range(lo.ln()..hi.ln()).exp().clamp(lo, hi) };
        TrialParams {
            lr,
            hidden: r.gen_range(self.hidden[0]..=self.hidden[1]),
            heads: self.heads[r.gen_range(0..self.heads.len())],
            hops: self.hops[r.gen_range(0..self.hops.len())],
        }
    }

    pub fn contains(&self, p: &TrialParams) -> bool {
        p.lr >= self.lr[0]
            && p.lr <= self.lr[1]
            && (self.hidden[0]..=self.hidden[1]).contains(&p.hidden)
            && self.heads.contains(&p.heads)
            && self.hops.contains(&p.hops)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub index: usize,
    /// Seed handed to the objective.
    pub seed: u64,
    pub params: TrialParams,
    pub score: Option<f64>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub best: Trial,
    /// Every trial, in draw order.
    pub trials: Vec<Trial>,
}

fn trial_log(trials: &[Trial]) -> String {
    trials
        .iter()
        .map(|t| format!("trial {}: {:?} -> {}", t.index, t.params, t.error.as_deref().unwrap_or("no score")))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Runs exactly `space.budget` trials of `objective` (lower is better) on up
/// to `workers` threads. Draws are made up front from `seed`, so the trial
/// list does not depend on the worker count. `on_trial` sees each finished
/// trial under a lock.
pub fn random_search<F>(space: &SearchSpace, seed: u64, workers: usize, objective: F, on_trial: impl FnMut(&Trial) + Send) -> Result<SearchResult>
where
    F: Fn(&TrialParams, u64) -> Result<f64> + Sync,
{
    space.validate()?;
    let mut r = rng::stream(rng::derive(seed, 0x7475_6e65), 0);
    let draws: Vec<(TrialParams, u64)> = (0..space.budget)
        .map(|i| (space.sample(&mut r), rng::derive(seed, i as u64)))
        .collect();
    let next = AtomicUsize::new(0);
    let done: Mutex<(Vec<Option<Trial>>, _)> = Mutex::new((vec![None; draws.len()], on_trial));
    let run = || loop {
        let i = next.fetch_add(1, Ordering::SeqCst);
        let Some((params, s)) = draws.get(i) else { break };
        let (score, error) = match objective(params, *s) {
            Ok(v) if v.is_finite() => (Some(v), None),
            Ok(v) => (None, Some(format!("non-finite score {v}"))),
            Err(e) => (None, Some(e.to_string())),
        };
        let trial = Trial {
            index: i,
            seed: *s,
            params: params.clone(),
            score,
            error,
        };
        let mut guard = done.lock().expect("trial log lock");
        (guard.1)(&trial);
        guard.0[i] = Some(trial);
    };
    let workers = workers.clamp(1, draws.len());
    if workers == 1 {
        run();
    } else {
        std::thread::scope(|s| {
            for _ in 0..workers {
                s.spawn(run);
            }
        });
    }
    let trials: Vec<Trial> = done
        .into_inner()
        .expect("trial log lock")
        .0
        .into_iter()
        .map(|t| t.expect("every trial ran"))
        .collect();
    let best = trials
        .iter()
        .filter(|t| t.score.is_some())
        .min_by(|a, b| a.score.unwrap().total_cmp(&b.score.unwrap()))
        .cloned();
    match best {
        Some(best) => Ok(SearchResult { best, trials }),
        None => Err(Error::AllTrialsFailed {
            trials: trials.len(),
            log: trial_log(&trials),
        }),
    }
}
