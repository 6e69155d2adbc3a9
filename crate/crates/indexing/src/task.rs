use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{mix_seed, HarnessError, Result};

const PROMPT_SUFFIX: &str = "Given the above array, don't think and directly answer the corresponding value concisely";

/// Rough tokens per rendered array element (digit, comma, space).
pub const TOKENS_PER_ELEMENT: usize = 3;
/// Rough token count of the fixed instruction text.
pub const TEMPLATE_TOKENS: usize = 24;

fn default_lengths() -> Vec<usize> {
    (2..=12).map(|e| 1usize << e).collect()
}

fn default_alphabet() -> Vec<u32> {
    vec![0, 1, 2, 3]
}

fn default_ten() -> usize {
    10
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexingTaskSpec {
    #[serde(default = "default_lengths")]
    pub lengths: Vec<usize>,
    #[serde(default = "default_alphabet")]
    pub values_alphabet: Vec<u32>,
    #[serde(default = "default_ten")]
    pub lists_per_length: usize,
    #[serde(default = "default_ten")]
    pub queries_per_list: usize,
    #[serde(default)]
    pub seed: u64,
}

impl Default for IndexingTaskSpec {
    /// Lengths 4, 8, ..., 4096; alphabet {0, 1, 2, 3}; 10 lists of 10 queries.
    fn default() -> Self {
        IndexingTaskSpec {
            lengths: default_lengths(),
            values_alphabet: default_alphabet(),
            lists_per_length: 10,
            queries_per_list: 10,
            seed: 0,
        }
    }
}

impl IndexingTaskSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(HarnessError::Input(m.to_string()));
        if self.lengths.is_empty() || self.lengths.contains(&0) {
            return bad("lengths must be a non-empty list of positive integers");
        }
        let mut alphabet = self.values_alphabet.clone();
        alphabet.sort_unstable();
        alphabet.dedup();
        if alphabet.is_empty() || alphabet.len() != self.values_alphabet.len() {
            return bad("alphabet must be non-empty with distinct values");
        }
        if self.lists_per_length == 0 || self.queries_per_list == 0 {
            return bad("lists_per_length and queries_per_list must be >= 1");
        }
        Ok(())
    }
}

/// A trial before the model is asked.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlannedTrial {
    pub length: usize,
    pub list_id: usize,
    pub query_id: usize,
    pub index: usize,
    pub truth: u32,
    pub prompt: String,
    pub token_estimate: usize,
    /// Seed for anything random about this trial (mock answers, retry jitter).
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexingTrial {
    pub list_id: usize,
    pub query_id: usize,
    pub length: usize,
    pub index: usize,
    pub truth: u32,
    pub prompt: String,
    /// Absent when every attempt failed.
    pub raw_response: Option<String>,
    pub parsed_answer: Option<u64>,
    pub correct: bool,
    pub token_estimate: usize,
    pub attempts: u32,
    pub error: Option<String>,
}

/// `arr = [a, b, ...]` followed by the instruction and `arr[index] = `.
pub fn build_prompt(arr: &[u32], index: usize) -> Result<String> {
    if index >= arr.len() {
        return Err(HarnessError::Input(format!("index {index} out of range for array of length {}", arr.len())));
    }
    let items: Vec<String> = arr.iter().map(u32::to_string).collect();
    Ok(format!("arr = [{}]\n{PROMPT_SUFFIX}: arr[{index}] = ", items.join(", ")))
}

/// Last maximal run of ASCII digits; `None` if there is none or it does
/// not fit in 64 bits.
pub fn parse_answer(response: &str) -> Option<u64> {
    let bytes = response.as_bytes();
    let end = bytes.iter().rposition(u8::is_ascii_digit)? + 1;
    let start = bytes[..end].iter().rposition(|b| !b.is_ascii_digit()).map_or(0, |p| p + 1);
    response[start..end].parse().ok()
}

/// All trials in `(length, list_id, query_id)` order. Array `j` of length
/// position `i` is drawn from its own stream, so changing one axis of the
/// spec does not reshuffle the others.
pub fn plan_trials(spec: &IndexingTaskSpec) -> Result<Vec<PlannedTrial>> {
    spec.validate()?;
    let mut out = Vec::new();
    for (li, &length) in spec.lengths.iter().enumerate() {
        for list_id in 0..spec.lists_per_length {
            let list_seed = mix_seed(spec.seed, ((li as u64) << 32) | list_id as u64);
            let mut rng = ChaCha8Rng::seed_from_u64(list_seed);
            let arr: Vec<u32> =
                (0..length).map(|_| spec.values_alphabet[rng.random_range(0..spec.values_alphabet.len())]).collect();
            for query_id in 0..spec.queries_per_list {
                let index = rng.random_range(0..length);
                out.push(PlannedTrial {
                    length,
                    list_id,
                    query_id,
                    index,
                    truth: arr[index],
                    prompt: build_prompt(&arr, index)?,
                    token_estimate: TOKENS_PER_ELEMENT * length + TEMPLATE_TOKENS,
                    seed: mix_seed(list_seed, query_id as u64),
                });
            }
        }
    }
    Ok(out)
}
