use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::task::{parse_answer, plan_trials, IndexingTaskSpec, IndexingTrial, PlannedTrial};
use crate::{mix_seed, HarnessError, Responder, Result, TrialContext};

#[derive(Debug, Clone, PartialEq)]
pub struct RunOptions {
    /// Maximum concurrent requests.
    pub max_in_flight: usize,
    /// Retries after the first attempt.
    pub retries: u32,
    /// Backoff before retry `k` is `base * 2^k * U[0.5, 1.5)`.
    pub backoff_base: Duration,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions { max_in_flight: 4, retries: 3, backoff_base: Duration::from_millis(500) }
    }
}

fn backoff(plan: &PlannedTrial, attempt: u32, base: Duration) -> Duration {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(plan.seed, u64::from(attempt) + 1_000_000));
    base.mul_f64(2f64.powi(attempt as i32) * rng.random_range(0.5..1.5))
}

fn run_one(plan: &PlannedTrial, responder: &dyn Responder, opts: &RunOptions) -> IndexingTrial {
    let mut attempt = 0;
    let outcome = loop {
        let ctx = TrialContext {
            length: plan.length,
            list_id: plan.list_id,
            query_id: plan.query_id,
            prompt: &plan.prompt,
            seed: plan.seed,
            attempt,
        };
        match responder.respond(&ctx) {
            Ok(text) => break Ok(text),
            Err(e) if e.is_retryable() && attempt < opts.retries => {
                std::thread::sleep(backoff(plan, attempt, opts.backoff_base));
                attempt += 1;
            }
            Err(e) => break Err(e),
        }
    };
    let (raw_response, error) = match outcome {
        Ok(text) => (Some(text), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let parsed_answer = raw_response.as_deref().and_then(parse_answer);
    IndexingTrial {
        list_id: plan.list_id,
        query_id: plan.query_id,
        length: plan.length,
        index: plan.index,
        truth: plan.truth,
        prompt: plan.prompt.clone(),
        correct: parsed_answer == Some(u64::from(plan.truth)),
        raw_response,
        parsed_answer,
        token_estimate: plan.token_estimate,
        attempts: attempt + 1,
        error,
    }
}

/// Asks `responder` every planned trial. Failed trials are recorded with no
/// answer; results come back in `(length, list_id, query_id)` order whatever
/// the completion order.
pub fn run_trials(spec: &IndexingTaskSpec, responder: &dyn Responder, opts: &RunOptions) -> Result<Vec<IndexingTrial>> {
    if opts.max_in_flight == 0 {
        return Err(HarnessError::Input("max_in_flight must be >= 1".into()));
    }
    let plans = plan_trials(spec)?;
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<IndexingTrial>>> = Mutex::new(vec![None; plans.len()]);
    std::thread::scope(|scope| {
        for _ in 0..opts.max_in_flight.min(plans.len()) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(plan) = plans.get(i) else { break };
                let trial = run_one(plan, responder, opts);
                slots.lock().expect("no worker panics while holding the lock")[i] = Some(trial);
            });
        }
    });
    Ok(slots.into_inner().expect("workers finished").into_iter().map(|t| t.expect("every slot filled")).collect())
}
