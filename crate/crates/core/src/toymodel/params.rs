use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Feed-forward width as a multiple of the hidden size.
pub const FF_MULT: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToyConfig {
    pub num_layers: usize,
    pub hidden_size: usize,
    pub num_heads: usize,
    pub vocab_size: usize,
    pub seq_len: usize,
    pub seed: u64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        ToyConfig {
            num_layers: 8,
            hidden_size: 32,
            num_heads: 2,
            vocab_size: 64,
            seq_len: 16,
            seed: 42,
        }
    }
}

impl ToyConfig {
    pub fn with_seed(seed: u64) -> Self {
        ToyConfig {
            seed,
            ..ToyConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("num_layers", self.num_layers),
            ("hidden_size", self.hidden_size),
            ("num_heads", self.num_heads),
            ("vocab_size", self.vocab_size),
            ("seq_len", self.seq_len),
        ] {
            if v < 1 {
                return Err(Error::InvalidConfig(format!("{name} must be >= 1")));
            }
        }
        if !self.hidden_size.is_multiple_of(self.num_heads) {
            return Err(Error::InvalidConfig(format!(
                "hidden_size {} is not divisible by num_heads {}",
                self.hidden_size, self.num_heads
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.hidden_size / self.num_heads
    }

    pub fn ff_size(&self) -> usize {
        self.hidden_size * FF_MULT
    }
}

/// Parameters of one transformer block.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockParams {
    pub w_q: DMatrix<f64>,
    pub w_k: DMatrix<f64>,
    pub w_v: DMatrix<f64>,
    pub w_o: DMatrix<f64>,
    pub ln1_gain: DMatrix<f64>,
    pub ln1_bias: DMatrix<f64>,
    pub w_ff1: DMatrix<f64>,
    pub b_ff1: DMatrix<f64>,
    pub w_ff2: DMatrix<f64>,
    pub b_ff2: DMatrix<f64>,
    pub ln2_gain: DMatrix<f64>,
    pub ln2_bias: DMatrix<f64>,
}

pub const BLOCK_TENSOR_NAMES: [&str; 12] = [
    "attn.w_q", "attn.w_k", "attn.w_v", "attn.w_o", "ln1.gain", "ln1.bias", "ff.w1", "ff.b1", "ff.w2", "ff.b2",
    "ln2.gain", "ln2.bias",
];

impl BlockParams {
    fn zeros(config: &ToyConfig) -> Self {
        let d = config.hidden_size;
        let f = config.ff_size();
        BlockParams {
            w_q: DMatrix::zeros(d, d),
            w_k: DMatrix::zeros(d, d),
            w_v: DMatrix::zeros(d, d),
            w_o: DMatrix::zeros(d, d),
            ln1_gain: DMatrix::zeros(1, d),
            ln1_bias: DMatrix::zeros(1, d),
            w_ff1: DMatrix::zeros(d, f),
            b_ff1: DMatrix::zeros(1, f),
            w_ff2: DMatrix::zeros(f, d),
            b_ff2: DMatrix::zeros(1, d),
            ln2_gain: DMatrix::zeros(1, d),
            ln2_bias: DMatrix::zeros(1, d),
        }
    }

    pub fn tensors(&self) -> [&DMatrix<f64>; 12] {
        [
            &self.w_q,
            &self.w_k,
            &self.w_v,
            &self.w_o,
            &self.ln1_gain,
            &self.ln1_bias,
            &self.w_ff1,
            &self.b_ff1,
            &self.w_ff2,
            &self.b_ff2,
            &self.ln2_gain,
            &self.ln2_bias,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut DMatrix<f64>; 12] {
        [
            &mut self.w_q,
            &mut self.w_k,
            &mut self.w_v,
            &mut self.w_o,
            &mut self.ln1_gain,
            &mut self.ln1_bias,
            &mut self.w_ff1,
            &mut self.b_ff1,
            &mut self.w_ff2,
            &mut self.b_ff2,
            &mut self.ln2_gain,
            &mut self.ln2_bias,
        ]
    }
}

/// Which part of the model a tensor belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Group {
    Embedding,
    Block(usize),
    Head,
}

/// Model parameters, also used as the gradient container.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub token_embedding: DMatrix<f64>,
    pub position_embedding: DMatrix<f64>,
    pub blocks: Vec<BlockParams>,
    pub head_weight: DMatrix<f64>,
    pub head_bias: DMatrix<f64>,
}

impl Params {
    pub fn zeros(config: &ToyConfig) -> Self {
        Params {
            token_embedding: DMatrix::zeros(config.vocab_size, config.hidden_size),
            position_embedding: DMatrix::zeros(config.seq_len, config.hidden_size),
            blocks: (0..config.num_layers).map(|_| BlockParams::zeros(config)).collect(),
            head_weight: DMatrix::zeros(config.hidden_size, config.vocab_size),
            head_bias: DMatrix::zeros(1, config.vocab_size),
        }
    }

    /// Every tensor with its name and group, in a fixed order.
    pub fn named_tensors(&self) -> Vec<(String, Group, &DMatrix<f64>)> {
        let mut out = vec![
            ("token_embedding".to_string(), Group::Embedding, &self.token_embedding),
            ("position_embedding".to_string(), Group::Embedding, &self.position_embedding),
        ];
        for (l, b) in self.blocks.iter().enumerate() {
            for (name, t) in BLOCK_TENSOR_NAMES.iter().zip(b.tensors()) {
                out.push((format!("block_{l:03}.{name}"), Group::Block(l), t));
            }
        }
        out.push(("head.weight".to_string(), Group::Head, &self.head_weight));
        out.push(("head.bias".to_string(), Group::Head, &self.head_bias));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(Group, &mut DMatrix<f64>)> {
        let mut out = vec![
            (Group::Embedding, &mut self.token_embedding),
            (Group::Embedding, &mut self.position_embedding),
        ];
        for (l, b) in self.blocks.iter_mut().enumerate() {
            for t in b.tensors_mut() {
                out.push((Group::Block(l), t));
            }
        }
        out.push((Group::Head, &mut self.head_weight));
        out.push((Group::Head, &mut self.head_bias));
        out
    }

    pub fn num_scalars(&self) -> usize {
        self.named_tensors().iter().map(|(_, _, t)| t.len()).sum()
    }

    /// `self += other`, tensor by tensor.
    pub fn add_assign(&mut self, other: &Params) {
        let others: Vec<&DMatrix<f64>> = other.named_tensors().into_iter().map(|(_, _, t)| t).collect();
        for ((_, t), o) in self.tensors_mut().into_iter().zip(others) {
            *t += o;
        }
    }
}

/// A model: its configuration and parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ToyConfig,
    pub params: Params,
}

fn fill_uniform(m: &mut DMatrix<f64>, std: f64, rng: &mut ChaCha8Rng) {
    // uniform on [-a, a] has standard deviation a / sqrt(3)
    let a = std * 3f64.sqrt();
    // row-major fill keeps the draw order independent of storage layout
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            m[(i, j)] = rng.random_range(-a..a);
        }
    }
}

/// Seeded initialization; identical configs give bit-identical checkpoints.
pub fn init_checkpoint(config: &ToyConfig) -> Result<Checkpoint> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut p = Params::zeros(config);
    let d = config.hidden_size as f64;
    let f = config.ff_size() as f64;

    fill_uniform(&mut p.token_embedding, 1.0, &mut rng);
    fill_uniform(&mut p.position_embedding, 0.5, &mut rng);
    for b in &mut p.blocks {
        for w in [&mut b.w_q, &mut b.w_k, &mut b.w_v, &mut b.w_o, &mut b.w_ff1] {
            fill_uniform(w, 1.0 / d.sqrt(), &mut rng);
        }
        fill_uniform(&mut b.w_ff2, 1.0 / f.sqrt(), &mut rng);
        b.ln1_gain.fill(1.0);
        b.ln2_gain.fill(1.0);
    }
    fill_uniform(&mut p.head_weight, 0.02, &mut rng);

    Ok(Checkpoint {
        config: *config,
        params: p,
    })
}
