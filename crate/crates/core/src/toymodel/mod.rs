//! A deterministic small transformer for running the pipeline end to end
//! without an external model: forward pass with per-layer last-token
//! capture, cross-entropy over completions, SGD with analytic gradients,
//! and layer-window substitution between checkpoints.

mod data;
mod io;
mod model;
mod params;

use nalgebra::DMatrix;
use rayon::prelude::*;

pub use data::{probe_batch, synthetic_dataset, Example, Task, DEFAULT_COMPLETION_LEN};
pub use io::{load_checkpoint, save_checkpoint, CONFIG_FILE};
pub use params::{init_checkpoint, BlockParams, Checkpoint, Group, Params, ToyConfig, BLOCK_TENSOR_NAMES, FF_MULT};

use crate::error::{Error, Result};
use crate::planner::{LayerPlan, LossEntry, LossTable, PlanMode};
use crate::repr_store::{ReprBundle, ReprMatrix};
use crate::similarity::window_range;

fn check_tokens(config: &ToyConfig, tokens: &[usize]) -> Result<()> {
    if tokens.is_empty() {
        return Err(Error::InvalidDataset("empty token sequence".into()));
    }
    if tokens.len() > config.seq_len {
        return Err(Error::InvalidDataset(format!(
            "sequence of {} tokens exceeds seq_len {}",
            tokens.len(),
            config.seq_len
        )));
    }
    if let Some(&token) = tokens.iter().find(|&&t| t >= config.vocab_size) {
        return Err(Error::TokenOutOfRange {
            token,
            vocab: config.vocab_size,
        });
    }
    Ok(())
}

/// Runs `batch` through the model and collects the last-token output of
/// every block. Also returns the last-token logits, `N x vocab`.
pub fn forward_collect(ckpt: &Checkpoint, batch: &[Vec<usize>]) -> Result<(ReprBundle, DMatrix<f64>)> {
    for seq in batch {
        check_tokens(&ckpt.config, seq)?;
    }
    let traces: Vec<(Vec<Vec<f32>>, Vec<f64>)> = batch
        .par_iter()
        .map(|seq| {
            let trace = model::forward(ckpt, seq);
            let last = seq.len() - 1;
            let hidden = trace
                .hidden
                .iter()
                .map(|h| h.row(last).iter().map(|&v| v as f32).collect())
                .collect();
            let logits = trace.logits.row(last).iter().copied().collect();
            (hidden, logits)
        })
        .collect();

    let n = batch.len();
    let layers = (0..ckpt.config.num_layers)
        .map(|l| {
            let rows: Vec<Vec<f32>> = traces.iter().map(|(h, _)| h[l].clone()).collect();
            ReprMatrix::from_rows(&rows)
        })
        .collect::<Result<Vec<_>>>()?;
    let logits = DMatrix::from_fn(n, ckpt.config.vocab_size, |i, j| traces[i].1[j]);
    let c = &ckpt.config;
    let model_id = format!(
        "toy:L{}-d{}-h{}-v{}-t{}-seed{}",
        c.num_layers, c.hidden_size, c.num_heads, c.vocab_size, c.seq_len, c.seed
    );
    let bundle = ReprBundle::from_layers(model_id, "batch", layers)?;
    Ok((bundle, logits))
}

fn check_example(config: &ToyConfig, e: &Example) -> Result<()> {
    if e.prompt.is_empty() {
        return Err(Error::InvalidDataset("empty prompt".into()));
    }
    if e.completion.is_empty() {
        return Err(Error::InvalidDataset("empty completion".into()));
    }
    for &token in e.prompt.iter().chain(&e.completion) {
        if token >= config.vocab_size {
            return Err(Error::TokenOutOfRange {
                token,
                vocab: config.vocab_size,
            });
        }
    }
    let inputs = e.prompt.len() + e.completion.len() - 1;
    if inputs > config.seq_len {
        return Err(Error::InvalidDataset(format!(
            "example needs {inputs} input positions, seq_len is {}",
            config.seq_len
        )));
    }
    Ok(())
}

fn check_dataset(config: &ToyConfig, dataset: &[Example]) -> Result<()> {
    if dataset.is_empty() {
        return Err(Error::InvalidDataset("empty dataset".into()));
    }
    dataset.iter().try_for_each(|e| check_example(config, e))
}

/// Teacher-forced input tokens for an example.
fn inputs(e: &Example) -> Vec<usize> {
    let mut tokens = e.prompt.clone();
    tokens.extend_from_slice(&e.completion[..e.completion.len() - 1]);
    tokens
}

/// Summed completion NLL of one example, with gradient of `scale * NLL`
/// when `scale` is given.
fn example_nll(ckpt: &Checkpoint, e: &Example, scale: Option<f64>) -> (f64, Option<Params>) {
    let tokens = inputs(e);
    let trace = model::forward(ckpt, &tokens);
    let mut nll = 0.0;
    let mut dlogits = scale.map(|_| DMatrix::zeros(trace.logits.nrows(), trace.logits.ncols()));
    for (l, &target) in e.completion.iter().enumerate() {
        let pos = e.prompt.len() - 1 + l;
        let logp = model::log_softmax_row(&trace.logits, pos);
        nll -= logp[target];
        if let (Some(d), Some(s)) = (dlogits.as_mut(), scale) {
            for (j, lp) in logp.iter().enumerate() {
                d[(pos, j)] = s * lp.exp();
            }
            d[(pos, target)] -= s;
        }
    }
    let grads = dlogits.map(|d| {
        let mut g = Params::zeros(&ckpt.config);
        model::backward(ckpt, &trace, &d, &mut g);
        g
    });
    (nll, grads)
}

fn token_count(dataset: &[Example]) -> usize {
    dataset.iter().map(|e| e.completion.len()).sum()
}

/// Mean completion-token negative log-likelihood under teacher forcing.
pub fn eval_loss(ckpt: &Checkpoint, dataset: &[Example]) -> Result<f64> {
    check_dataset(&ckpt.config, dataset)?;
    let per_example: Vec<f64> = dataset.par_iter().map(|e| example_nll(ckpt, e, None).0).collect();
    Ok(per_example.iter().sum::<f64>() / token_count(dataset) as f64)
}

/// Mean loss and its gradient with respect to every parameter. Per-example
/// gradients are reduced in dataset order.
pub fn loss_and_grad(ckpt: &Checkpoint, dataset: &[Example]) -> Result<(f64, Params)> {
    check_dataset(&ckpt.config, dataset)?;
    let scale = 1.0 / token_count(dataset) as f64;
    let parts: Vec<(f64, Option<Params>)> = dataset.par_iter().map(|e| example_nll(ckpt, e, Some(scale))).collect();
    let mut total = 0.0;
    let mut grads = Params::zeros(&ckpt.config);
    for (nll, g) in parts {
        total += nll;
        grads.add_assign(&g.expect("gradient requested"));
    }
    Ok((total * scale, grads))
}

/// Which parameter groups stay fixed during training.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FreezeMask {
    pub blocks: Vec<bool>,
    pub embedding: bool,
    pub head: bool,
}

impl FreezeMask {
    pub fn none(num_layers: usize) -> Self {
        FreezeMask {
            blocks: vec![false; num_layers],
            embedding: false,
            head: false,
        }
    }

    /// A `freeze_subset` plan freezes its layers; a `finetune_subset` plan
    /// trains only its layers and freezes everything else, embedding and
    /// head included.
    pub fn from_plan(plan: &LayerPlan, num_layers: usize) -> Result<Self> {
        if let Some(&l) = plan.layers.iter().find(|&&l| l >= num_layers) {
            return Err(Error::out_of_range("plan layer", l, format!("0..{num_layers}")));
        }
        let listed = |l: usize| plan.layers.contains(&l);
        Ok(match plan.mode {
            PlanMode::FreezeSubset => FreezeMask {
                blocks: (0..num_layers).map(listed).collect(),
                embedding: false,
                head: false,
            },
            PlanMode::FinetuneSubset => FreezeMask {
                blocks: (0..num_layers).map(|l| !listed(l)).collect(),
                embedding: true,
                head: true,
            },
        })
    }

    fn is_frozen(&self, group: Group) -> bool {
        match group {
            Group::Embedding => self.embedding,
            Group::Head => self.head,
            Group::Block(l) => self.blocks[l],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainOptions {
    pub steps: usize,
    pub lr: f64,
    /// Examples per step, taken cyclically in dataset order.
    pub batch_size: usize,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            steps: 200,
            lr: 1e-2,
            batch_size: 8,
        }
    }
}

/// Plain SGD on the completion loss.
pub fn train(ckpt: &Checkpoint, dataset: &[Example], opts: &TrainOptions, freeze: Option<&LayerPlan>) -> Result<Checkpoint> {
    let mask = match freeze {
        Some(plan) => FreezeMask::from_plan(plan, ckpt.config.num_layers)?,
        None => FreezeMask::none(ckpt.config.num_layers),
    };
    train_masked(ckpt, dataset, opts, &mask)
}

pub fn train_masked(ckpt: &Checkpoint, dataset: &[Example], opts: &TrainOptions, mask: &FreezeMask) -> Result<Checkpoint> {
    if !(opts.lr > 0.0 && opts.lr.is_finite()) {
        return Err(Error::out_of_range("lr", 0, "a positive finite learning rate"));
    }
    if opts.batch_size < 1 {
        return Err(Error::out_of_range("batch_size", 0, ">= 1"));
    }
    if mask.blocks.len() != ckpt.config.num_layers {
        return Err(Error::ConfigMismatch);
    }
    check_dataset(&ckpt.config, dataset)?;

    let mut current = ckpt.clone();
    let batch_size = opts.batch_size.min(dataset.len());
    for step in 0..opts.steps {
        let start = (step * batch_size) % dataset.len();
        let batch: Vec<Example> = (0..batch_size).map(|i| dataset[(start + i) % dataset.len()].clone()).collect();
        let (loss, grads) = loss_and_grad(&current, &batch)?;
        if !loss.is_finite() {
            return Err(Error::Diverged { step, loss });
        }
        let grad_tensors: Vec<&DMatrix<f64>> = grads.named_tensors().into_iter().map(|(_, _, t)| t).collect();
        for ((group, t), g) in current.params.tensors_mut().into_iter().zip(grad_tensors) {
            if !mask.is_frozen(group) {
                *t -= g * opts.lr;
            }
        }
    }
    Ok(current)
}

/// Replaces blocks `center-k ..= center+k` of `tuned` with those of `base`.
pub fn substitute_layers(tuned: &Checkpoint, base: &Checkpoint, center: usize, k: usize) -> Result<Checkpoint> {
    if tuned.config != base.config {
        return Err(Error::ConfigMismatch);
    }
    let l = tuned.config.num_layers;
    if center < k || center + k >= l {
        return Err(Error::out_of_range(
            "center",
            center,
            format!("{k}..={} for k = {k} and {l} layers", l as i64 - 1 - k as i64),
        ));
    }
    let mut out = tuned.clone();
    for i in center - k..=center + k {
        out.params.blocks[i] = base.params.blocks[i].clone();
    }
    Ok(out)
}

/// Substituted-window loss for every valid center layer, with the tuned
/// model's own loss as the base.
pub fn build_loss_table(
    tuned: &Checkpoint,
    base: &Checkpoint,
    dataset: &[Example],
    k: usize,
    dataset_id: &str,
) -> Result<LossTable> {
    if tuned.config != base.config {
        return Err(Error::ConfigMismatch);
    }
    let (lo, hi) = window_range(tuned.config.num_layers, k)?;
    let base_loss = eval_loss(tuned, dataset)?;
    let entries = (lo..=hi)
        .map(|center| {
            let swapped = substitute_layers(tuned, base, center, k)?;
            Ok(LossEntry {
                layer: center,
                loss: eval_loss(&swapped, dataset)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LossTable {
        dataset_id: dataset_id.to_string(),
        base_loss,
        k,
        entries,
    })
}
