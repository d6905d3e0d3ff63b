//! Seeded synthetic token data with learnable next-token structure.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::params::ToyConfig;

/// A prompt and its ground-truth completion.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Example {
    pub prompt: Vec<usize>,
    pub completion: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    /// A random pattern of 2 to 4 tokens, repeated.
    Periodic,
    /// `start + stride * t (mod vocab)` with stride 1 to 3.
    Progression,
}

pub const DEFAULT_COMPLETION_LEN: usize = 4;

fn sequence(task: Task, len: usize, vocab: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    match task {
        Task::Periodic => {
            let period = rng.random_range(2..=4usize);
            let pattern: Vec<usize> = (0..period).map(|_| rng.random_range(0..vocab)).collect();
            (0..len).map(|t| pattern[t % period]).collect()
        }
        Task::Progression => {
            let start = rng.random_range(0..vocab);
            let stride = rng.random_range(1..=3usize);
            (0..len).map(|t| (start + stride * t) % vocab).collect()
        }
    }
}

/// `n` examples whose prompt plus completion fill exactly `seq_len` input
/// positions under teacher forcing.
pub fn synthetic_dataset(config: &ToyConfig, task: Task, n: usize, completion_len: usize, seed: u64) -> Vec<Example> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let total = config.seq_len + 1;
    let completion_len = completion_len.clamp(1, total - 1);
    (0..n)
        .map(|_| {
            let mut s = sequence(task, total, config.vocab_size, &mut rng);
            let completion = s.split_off(total - completion_len);
            Example { prompt: s, completion }
        })
        .collect()
}

/// `n` full-length sequences alternating between the two tasks, used to
/// collect layer representations.
pub fn probe_batch(config: &ToyConfig, n: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let task = if i % 2 == 0 { Task::Periodic } else { Task::Progression };
            sequence(task, config.seq_len, config.vocab_size, &mut rng)
        })
        .collect()
}
