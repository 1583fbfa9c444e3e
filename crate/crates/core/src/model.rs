//! State encoding and the statement-prediction network.
//!
//! The network is a densely connected block (every layer sees all earlier
//! features) with two heads on a shared trunk: a softmax over the statement
//! vocabulary and per-slot drop scores marking variables that are safe to
//! discard. Everything is plain `f64` with hand-written gradients, trained
//! by minibatch SGD with momentum.

use std::collections::HashMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsl::{
    parse_program, FunctionRegistry, Operand, ParamType, Statement, Value, MAX_LIST_LEN,
};
use crate::generator::DatasetCache;

/// Variable slots available to the encoder and the search memory.
pub const MAX_VARS: usize = 11;
/// Examples per encoded state.
pub const NUM_EXAMPLES: usize = crate::generator::EXAMPLES_PER_PROGRAM;
/// Features per slot: type flags, presence, scalar, length, list values.
pub const SLOT_DIM: usize = 5 + MAX_LIST_LEN;
/// Slots per example: variables plus the target output.
pub const SLOTS_PER_EXAMPLE: usize = MAX_VARS + 1;
/// Flattened encoding size.
pub const STATE_DIM: usize = NUM_EXAMPLES * SLOTS_PER_EXAMPLE * SLOT_DIM;

const SCALE: f64 = 256.0;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("state has {0} variables but only {MAX_VARS} slots exist")]
    VariableOverflow(usize),
    #[error("encoding dimension {got} does not match the model ({want})")]
    DimensionMismatch { got: usize, want: usize },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad model file: {0}")]
    BadModel(String),
    #[error("model was trained for registry {model}, active registry is {active}")]
    FingerprintMismatch { model: String, active: String },
}

/// The statement vocabulary: every function x operand combination over the
/// maximal slot environment, indices unconstrained by type (legality is
/// checked against a concrete environment at ranking time).
pub struct Vocabulary {
    pub statements: Vec<Statement>,
    index: HashMap<Statement, usize>,
}

impl Vocabulary {
    pub fn build(registry: &FunctionRegistry) -> Self {
        let mut statements = Vec::new();
        for (fid, func) in registry.functions.iter().enumerate() {
            let slots: Vec<Vec<Operand>> = func
                .params
                .iter()
                .map(|p| match p {
                    ParamType::Value(_) => (0..MAX_VARS).map(Operand::Var).collect(),
                    ParamType::Lambda(lt) => {
                        registry.lambdas_of(*lt).map(Operand::Lambda).collect()
                    }
                })
                .collect();
            let mut idx = vec![0usize; slots.len()];
            'outer: loop {
                statements.push(Statement {
                    function: fid,
                    operands: idx.iter().zip(&slots).map(|(&i, s)| s[i]).collect(),
                });
                let mut k = slots.len();
                loop {
                    if k == 0 {
                        break 'outer;
                    }
                    k -= 1;
                    idx[k] += 1;
                    if idx[k] < slots[k].len() {
                        break;
                    }
                    idx[k] = 0;
                    if k == 0 {
                        break 'outer;
                    }
                }
            }
        }
        let index = statements
            .iter()
            .enumerate()
            .map(|(i, s)| (s.clone(), i))
            .collect();
        Vocabulary { statements, index }
    }

    pub fn len(&self) -> usize {
        self.statements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.statements.is_empty()
    }

    pub fn lookup(&self, stmt: &Statement) -> Option<usize> {
        self.index.get(stmt).copied()
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
pub struct ModelConfig {
    pub num_layers: usize,
    pub output_size: usize,
    pub growth_size: usize,
    pub embedding_dim: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub num_epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            num_layers: 5,
            output_size: 128,
            growth_size: 28,
            embedding_dim: 16,
            learning_rate: 0.05,
            momentum: 0.9,
            num_epochs: 40,
            batch_size: 32,
            seed: 0,
        }
    }
}

/// Row-major dense matrix plus bias.
#[derive(Clone, Serialize, Deserialize)]
pub struct Linear {
    pub rows: usize,
    pub cols: usize,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl Linear {
    fn new<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Self {
        let a = (6.0 / (rows + cols) as f64).sqrt();
        Linear {
            rows,
            cols,
            w: (0..rows * cols).map(|_| rng.gen_range(-a..a)).collect(),
            b: vec![0.0; rows],
        }
    }

    fn zeros(rows: usize, cols: usize) -> Self {
        Linear {
            rows,
            cols,
            w: vec![0.0; rows * cols],
            b: vec![0.0; rows],
        }
    }

    /// y = W x + b
    fn forward(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.cols);
        debug_assert_eq!(y.len(), self.rows);
        for r in 0..self.rows {
            let row = &self.w[r * self.cols..(r + 1) * self.cols];
            let mut acc = self.b[r];
            for (wi, xi) in row.iter().zip(x) {
                acc += wi * xi;
            }
            y[r] = acc;
        }
    }

    /// Accumulates dL/dW and dL/db from dL/dy, and dL/dx into `dx`.
    fn backward(&self, x: &[f64], dy: &[f64], grad: &mut Linear, dx: &mut [f64]) {
        for r in 0..self.rows {
            let g = dy[r];
            if g == 0.0 {
                continue;
            }
            grad.b[r] += g;
            let row = &self.w[r * self.cols..(r + 1) * self.cols];
            let grow = &mut grad.w[r * self.cols..(r + 1) * self.cols];
            for c in 0..self.cols {
                grow[c] += g * x[c];
                dx[c] += g * row[c];
            }
        }
    }
}

/// All weights of the two-headed network.
#[derive(Clone, Serialize, Deserialize)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub registry_fingerprint: String,
    /// "baseline" or "extended"; with extern names this reconstructs the
    /// registry the model was trained for.
    pub dsl: String,
    pub externs: Vec<String>,
    pub vocab_size: usize,
    pub slot: Linear,
    pub layers: Vec<Linear>,
    pub trunk: Linear,
    pub stmt_head: Linear,
    pub drop_head: Linear,
}

fn layer_dims(config: &ModelConfig) -> (usize, Vec<usize>) {
    let d0 = SLOTS_PER_EXAMPLE * NUM_EXAMPLES * config.embedding_dim;
    let mut dims = Vec::with_capacity(config.num_layers);
    let mut d = d0;
    for _ in 0..config.num_layers {
        dims.push(d);
        d += config.growth_size;
    }
    (d0, dims)
}

impl ModelParams {
    pub fn init(config: ModelConfig, registry: &FunctionRegistry, vocab: &Vocabulary) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(config.seed);
        let (_, dims) = layer_dims(&config);
        let final_dim = dims.last().copied().unwrap_or(0) + config.growth_size;
        ModelParams {
            config,
            registry_fingerprint: registry.fingerprint().to_string(),
            dsl: if registry.extended { "extended".into() } else { "baseline".into() },
            externs: registry
                .functions
                .iter()
                .filter_map(|f| f.extern_name.clone())
                .collect(),
            vocab_size: vocab.len(),
            slot: Linear::new(config.embedding_dim, SLOT_DIM, &mut rng),
            layers: dims
                .iter()
                .map(|&d| Linear::new(config.growth_size, d, &mut rng))
                .collect(),
            trunk: Linear::new(config.output_size, final_dim, &mut rng),
            stmt_head: Linear::new(vocab.len(), config.output_size, &mut rng),
            drop_head: Linear::new(MAX_VARS, config.output_size, &mut rng),
        }
    }

    /// All-zero weights: the statement distribution is uniform and every
    /// drop score is zero. Used as the untrained reference model.
    pub fn uniform(config: ModelConfig, registry: &FunctionRegistry, vocab: &Vocabulary) -> Self {
        let mut p = Self::init(config, registry, vocab);
        let zero = |l: &mut Linear| {
            l.w.iter_mut().for_each(|w| *w = 0.0);
            l.b.iter_mut().for_each(|b| *b = 0.0);
        };
        zero(&mut p.slot);
        p.layers.iter_mut().for_each(zero);
        zero(&mut p.trunk);
        zero(&mut p.stmt_head);
        zero(&mut p.drop_head);
        p
    }

    fn grad_shape(&self) -> ModelParams {
        ModelParams {
            config: self.config,
            registry_fingerprint: self.registry_fingerprint.clone(),
            dsl: self.dsl.clone(),
            externs: self.externs.clone(),
            vocab_size: self.vocab_size,
            slot: Linear::zeros(self.slot.rows, self.slot.cols),
            layers: self
                .layers
                .iter()
                .map(|l| Linear::zeros(l.rows, l.cols))
                .collect(),
            trunk: Linear::zeros(self.trunk.rows, self.trunk.cols),
            stmt_head: Linear::zeros(self.stmt_head.rows, self.stmt_head.cols),
            drop_head: Linear::zeros(self.drop_head.rows, self.drop_head.cols),
        }
    }

    fn for_each_tensor(&mut self, mut f: impl FnMut(&mut Linear)) {
        f(&mut self.slot);
        for l in &mut self.layers {
            f(l);
        }
        f(&mut self.trunk);
        f(&mut self.stmt_head);
        f(&mut self.drop_head);
    }
}

fn encode_slot(out: &mut [f64], value: Option<&Value>) {
    out.fill(0.0);
    let Some(v) = value else { return };
    out[2] = 1.0; // presence
    match v {
        Value::Int(x) => {
            out[0] = 1.0;
            out[3] = *x as f64 / SCALE;
        }
        Value::List(xs) => {
            out[1] = 1.0;
            out[4] = xs.len() as f64 / MAX_LIST_LEN as f64;
            for (i, x) in xs.iter().enumerate() {
                out[5 + i] = *x as f64 / SCALE;
            }
        }
        // Null and Bool carry presence only
        _ => {}
    }
}

/// Flattens per-example variable memories plus target outputs into the
/// fixed-size feature block. Variables beyond the slot budget are an error.
pub fn encode_state(envs: &[Vec<Value>], outputs: &[Value]) -> Result<Vec<f64>, ModelError> {
    assert_eq!(envs.len(), outputs.len(), "one env per example");
    assert!(envs.len() <= NUM_EXAMPLES, "too many examples");
    let mut enc = vec![0.0; STATE_DIM];
    for (e, (env, output)) in envs.iter().zip(outputs).enumerate() {
        if env.len() > MAX_VARS {
            return Err(ModelError::VariableOverflow(env.len()));
        }
        let base = e * SLOTS_PER_EXAMPLE * SLOT_DIM;
        for (s, v) in env.iter().enumerate() {
            encode_slot(&mut enc[base + s * SLOT_DIM..base + (s + 1) * SLOT_DIM], Some(v));
        }
        let off = base + MAX_VARS * SLOT_DIM;
        encode_slot(&mut enc[off..off + SLOT_DIM], Some(output));
    }
    Ok(enc)
}

struct Activations {
    embedded: Vec<f64>,
    feats: Vec<f64>,
    layer_outs: Vec<Vec<f64>>,
    trunk_out: Vec<f64>,
    stmt_logits: Vec<f64>,
    drop_logits: Vec<f64>,
}

fn forward(params: &ModelParams, enc: &[f64]) -> Activations {
    let cfg = &params.config;
    let num_slots = SLOTS_PER_EXAMPLE * NUM_EXAMPLES;
    let mut embedded = vec![0.0; num_slots * cfg.embedding_dim];
    for s in 0..num_slots {
        let x = &enc[s * SLOT_DIM..(s + 1) * SLOT_DIM];
        let y = &mut embedded[s * cfg.embedding_dim..(s + 1) * cfg.embedding_dim];
        params.slot.forward(x, y);
        y.iter_mut().for_each(|v| *v = v.tanh());
    }

    let mut feats = embedded.clone();
    let mut layer_outs = Vec::with_capacity(params.layers.len());
    for layer in &params.layers {
        let mut z = vec![0.0; layer.rows];
        layer.forward(&feats, &mut z);
        z.iter_mut().for_each(|v| *v = v.tanh());
        feats.extend_from_slice(&z);
        layer_outs.push(z);
    }

    let mut trunk_out = vec![0.0; params.trunk.rows];
    params.trunk.forward(&feats, &mut trunk_out);
    trunk_out.iter_mut().for_each(|v| *v = v.tanh());

    let mut stmt_logits = vec![0.0; params.stmt_head.rows];
    params.stmt_head.forward(&trunk_out, &mut stmt_logits);
    let mut drop_logits = vec![0.0; params.drop_head.rows];
    params.drop_head.forward(&trunk_out, &mut drop_logits);

    Activations {
        embedded,
        feats,
        layer_outs,
        trunk_out,
        stmt_logits,
        drop_logits,
    }
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Statement distribution (sums to one) and raw per-slot drop scores.
pub fn predict(params: &ModelParams, enc: &[f64]) -> Result<(Vec<f64>, Vec<f64>), ModelError> {
    if enc.len() != STATE_DIM {
        return Err(ModelError::DimensionMismatch {
            got: enc.len(),
            want: STATE_DIM,
        });
    }
    let acts = forward(params, enc);
    Ok((softmax(&acts.stmt_logits), acts.drop_logits))
}

/// One supervised step: encoded state, target statement index, drop labels
/// and a mask of slots that participate in the drop loss.
pub struct TrainSample {
    pub enc: Vec<f64>,
    pub target_stmt: usize,
    pub drop_targets: Vec<f64>,
    pub drop_mask: Vec<f64>,
}

/// Loss of one sample and the parameter gradients, via backprop.
fn sample_loss_grad(params: &ModelParams, sample: &TrainSample, grad: &mut ModelParams) -> f64 {
    let cfg = &params.config;
    let acts = forward(params, &sample.enc);
    let probs = softmax(&acts.stmt_logits);
    let stmt_loss = -probs[sample.target_stmt].max(1e-300).ln();

    // dL/dlogits for cross-entropy
    let mut dstmt: Vec<f64> = probs;
    dstmt[sample.target_stmt] -= 1.0;

    let mut drop_loss = 0.0;
    let mut ddrop = vec![0.0; MAX_VARS];
    let mask_total: f64 = sample.drop_mask.iter().sum();
    if mask_total > 0.0 {
        for j in 0..MAX_VARS {
            if sample.drop_mask[j] == 0.0 {
                continue;
            }
            let p = sigmoid(acts.drop_logits[j]);
            let t = sample.drop_targets[j];
            drop_loss -= (t * p.max(1e-12).ln() + (1.0 - t) * (1.0 - p).max(1e-12).ln())
                / mask_total;
            ddrop[j] = (p - t) / mask_total;
        }
    }

    // heads -> trunk
    let mut dtrunk = vec![0.0; params.trunk.rows];
    params
        .stmt_head
        .backward(&acts.trunk_out, &dstmt, &mut grad.stmt_head, &mut dtrunk);
    params
        .drop_head
        .backward(&acts.trunk_out, &ddrop, &mut grad.drop_head, &mut dtrunk);
    for (d, t) in dtrunk.iter_mut().zip(&acts.trunk_out) {
        *d *= 1.0 - t * t;
    }

    // trunk -> dense block features
    let mut dfeats = vec![0.0; acts.feats.len()];
    params
        .trunk
        .backward(&acts.feats, &dtrunk, &mut grad.trunk, &mut dfeats);

    // walk the block backwards, peeling each layer's slice off the feature
    // vector and pushing gradients into everything before it
    let mut boundary = acts.feats.len();
    for (li, layer) in params.layers.iter().enumerate().rev() {
        let out = &acts.layer_outs[li];
        let start = boundary - cfg.growth_size;
        let mut dz: Vec<f64> = dfeats[start..boundary].to_vec();
        for (d, z) in dz.iter_mut().zip(out) {
            *d *= 1.0 - z * z;
        }
        let x = &acts.feats[..start];
        let gl = &mut grad.layers[li];
        let mut dx = vec![0.0; start];
        layer.backward(x, &dz, gl, &mut dx);
        for (a, b) in dfeats[..start].iter_mut().zip(&dx) {
            *a += b;
        }
        boundary = start;
    }

    // embeddings -> shared slot projection
    let num_slots = SLOTS_PER_EXAMPLE * NUM_EXAMPLES;
    for s in 0..num_slots {
        let e = &acts.embedded[s * cfg.embedding_dim..(s + 1) * cfg.embedding_dim];
        let mut de: Vec<f64> = dfeats[s * cfg.embedding_dim..(s + 1) * cfg.embedding_dim].to_vec();
        for (d, v) in de.iter_mut().zip(e) {
            *d *= 1.0 - v * v;
        }
        let x = &sample.enc[s * SLOT_DIM..(s + 1) * SLOT_DIM];
        let mut dx = vec![0.0; SLOT_DIM];
        params.slot.backward(x, &de, &mut grad.slot, &mut dx);
    }

    stmt_loss + drop_loss
}

/// Replays a program, emitting one training sample per statement. Slots
/// mirror the search memory: variables in creation order, with dead slots
/// evicted when the budget is exceeded.
pub fn replay_entry(
    entry: &crate::generator::DatasetEntry,
    registry: &FunctionRegistry,
    vocab: &Vocabulary,
) -> Option<Vec<TrainSample>> {
    let p = parse_program(&entry.program, registry).ok()?;
    let n_inputs = p.input_types.len();
    let examples = &entry.examples;
    if examples.len() != NUM_EXAMPLES {
        return None;
    }
    let outputs: Vec<Value> = examples.iter().map(|e| e.output.clone()).collect();

    // slot -> program variable, shared across examples
    let mut slot_vars: Vec<usize> = (0..n_inputs).collect();
    let mut envs: Vec<Vec<Value>> = examples.iter().map(|e| e.inputs.clone()).collect();
    let mut values: Vec<Vec<Value>> = envs.clone(); // per example, by program var

    let used_later = |var: usize, from: usize| {
        p.statements[from..]
            .iter()
            .any(|s| s.used_vars().any(|v| v == var))
    };

    let mut samples = Vec::with_capacity(p.statements.len());
    for (t, stmt) in p.statements.iter().enumerate() {
        if slot_vars.len() >= MAX_VARS {
            // evict one dead slot; a program needing >MAX_VARS live
            // variables cannot be represented
            let dead = slot_vars
                .iter()
                .position(|&v| !used_later(v, t))?;
            slot_vars.remove(dead);
            for env in &mut envs {
                env.remove(dead);
            }
        }
        let enc = encode_state(&envs, &outputs).ok()?;
        // remap operand variables to slot indices
        let mut slot_stmt = stmt.clone();
        for op in &mut slot_stmt.operands {
            if let Operand::Var(v) = op {
                *v = slot_vars.iter().position(|&sv| sv == *v)?;
            }
        }
        let target_stmt = vocab.lookup(&slot_stmt)?;

        let mut drop_targets = vec![0.0; MAX_VARS];
        let mut drop_mask = vec![0.0; MAX_VARS];
        for (j, &var) in slot_vars.iter().enumerate() {
            drop_mask[j] = 1.0;
            if !used_later(var, t) {
                drop_targets[j] = 1.0;
            }
        }
        samples.push(TrainSample {
            enc,
            target_stmt,
            drop_targets,
            drop_mask,
        });

        // apply the statement to every example
        let new_var = n_inputs + t;
        for (ei, env) in envs.iter_mut().enumerate() {
            let out = crate::interpreter::eval_statement(stmt, &values[ei], registry);
            values[ei].push(out.clone());
            env.push(out);
        }
        slot_vars.push(new_var);
    }
    Some(samples)
}

/// Adds `scale * grad` into velocity and applies the SGD-with-momentum
/// update.
fn apply_update(params: &mut ModelParams, grad: &ModelParams, vel: &mut ModelParams, lr: f64, mu: f64) {
    let step = |p: &mut Linear, g: &Linear, v: &mut Linear| {
        for i in 0..p.w.len() {
            v.w[i] = mu * v.w[i] - lr * g.w[i];
            p.w[i] += v.w[i];
        }
        for i in 0..p.b.len() {
            v.b[i] = mu * v.b[i] - lr * g.b[i];
            p.b[i] += v.b[i];
        }
    };
    step(&mut params.slot, &grad.slot, &mut vel.slot);
    for i in 0..params.layers.len() {
        step(&mut params.layers[i], &grad.layers[i], &mut vel.layers[i]);
    }
    step(&mut params.trunk, &grad.trunk, &mut vel.trunk);
    step(&mut params.stmt_head, &grad.stmt_head, &mut vel.stmt_head);
    step(&mut params.drop_head, &grad.drop_head, &mut vel.drop_head);
}

fn batch_loss_grad(params: &ModelParams, batch: &[&TrainSample]) -> (f64, ModelParams) {
    // fixed-size chunks reduced in order keep training deterministic under
    // any thread count
    const CHUNK: usize = 8;
    let pieces: Vec<(f64, ModelParams)> = batch
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut grad = params.grad_shape();
            let mut loss = 0.0;
            for s in chunk {
                loss += sample_loss_grad(params, s, &mut grad);
            }
            (loss, grad)
        })
        .collect();
    let mut total = params.grad_shape();
    let mut loss = 0.0;
    for (l, g) in pieces {
        loss += l;
        let sum_into = |t: &mut Linear, src: &Linear| {
            for i in 0..t.w.len() {
                t.w[i] += src.w[i];
            }
            for i in 0..t.b.len() {
                t.b[i] += src.b[i];
            }
        };
        sum_into(&mut total.slot, &g.slot);
        for i in 0..total.layers.len() {
            sum_into(&mut total.layers[i], &g.layers[i]);
        }
        sum_into(&mut total.trunk, &g.trunk);
        sum_into(&mut total.stmt_head, &g.stmt_head);
        sum_into(&mut total.drop_head, &g.drop_head);
    }
    (loss, total)
}

fn mean_loss(params: &ModelParams, samples: &[&TrainSample]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    let total: f64 = samples
        .par_iter()
        .map(|s| {
            let acts = forward(params, &s.enc);
            let probs = softmax(&acts.stmt_logits);
            let mut loss = -probs[s.target_stmt].max(1e-300).ln();
            let mask_total: f64 = s.drop_mask.iter().sum();
            if mask_total > 0.0 {
                for j in 0..MAX_VARS {
                    if s.drop_mask[j] == 0.0 {
                        continue;
                    }
                    let p = sigmoid(acts.drop_logits[j]);
                    let t = s.drop_targets[j];
                    loss -= (t * p.max(1e-12).ln() + (1.0 - t) * (1.0 - p).max(1e-12).ln())
                        / mask_total;
                }
            }
            loss
        })
        .sum();
    total / samples.len() as f64
}

/// Trains both heads jointly from replayed dataset entries. The callback
/// receives (epoch, train loss, held-out loss) once per epoch; checkpoints
/// are the caller's concern.
pub fn train(
    dataset: &DatasetCache,
    config: ModelConfig,
    registry: &FunctionRegistry,
    mut on_epoch: impl FnMut(usize, f64, f64, &ModelParams),
) -> ModelParams {
    let vocab = Vocabulary::build(registry);
    let samples: Vec<TrainSample> = dataset
        .entries
        .par_iter()
        .filter_map(|e| replay_entry(e, registry, &vocab))
        .flatten()
        .collect();
    assert!(!samples.is_empty(), "dataset produced no training samples");

    let mut rng = ChaCha20Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    // held-out split for the reported validation loss
    let n_val = (samples.len() / 10).max(1).min(samples.len() - 1);
    shuffle(&mut order, &mut rng);
    let (val_idx, train_idx) = order.split_at(n_val);
    let val_set: Vec<&TrainSample> = val_idx.iter().map(|&i| &samples[i]).collect();
    let mut train_order: Vec<usize> = train_idx.to_vec();

    let mut params = ModelParams::init(config, registry, &vocab);
    let mut vel = params.grad_shape();

    for epoch in 0..config.num_epochs {
        shuffle(&mut train_order, &mut rng);
        let mut epoch_loss = 0.0;
        let mut seen = 0usize;
        for batch_idx in train_order.chunks(config.batch_size.max(1)) {
            let batch: Vec<&TrainSample> = batch_idx.iter().map(|&i| &samples[i]).collect();
            let (loss, grad) = batch_loss_grad(&params, &batch);
            let scale = 1.0 / batch.len() as f64;
            let mut scaled = grad;
            scaled.for_each_tensor(|t| {
                t.w.iter_mut().for_each(|w| *w *= scale);
                t.b.iter_mut().for_each(|b| *b *= scale);
            });
            apply_update(&mut params, &scaled, &mut vel, config.learning_rate, config.momentum);
            epoch_loss += loss;
            seen += batch.len();
        }
        let train_loss = epoch_loss / seen.max(1) as f64;
        let val_loss = mean_loss(&params, &val_set);
        on_epoch(epoch, train_loss, val_loss, &params);
    }
    params
}

fn shuffle<R: Rng>(xs: &mut [usize], rng: &mut R) {
    for i in (1..xs.len()).rev() {
        let j = rng.gen_range(0..=i);
        xs.swap(i, j);
    }
}

pub fn save_model(params: &ModelParams, path: &Path) -> Result<(), ModelError> {
    let f = std::io::BufWriter::new(std::fs::File::create(path)?);
    serde_json::to_writer(f, params).map_err(|e| ModelError::BadModel(e.to_string()))
}

pub fn load_model(path: &Path, registry: &FunctionRegistry) -> Result<ModelParams, ModelError> {
    let f = std::io::BufReader::new(std::fs::File::open(path)?);
    let params: ModelParams =
        serde_json::from_reader(f).map_err(|e| ModelError::BadModel(e.to_string()))?;
    if params.registry_fingerprint != registry.fingerprint() {
        return Err(ModelError::FingerprintMismatch {
            model: params.registry_fingerprint,
            active: registry.fingerprint().to_string(),
        });
    }
    let vocab = Vocabulary::build(registry);
    if params.vocab_size != vocab.len() {
        return Err(ModelError::BadModel(format!(
            "vocabulary size {} does not match registry ({})",
            params.vocab_size,
            vocab.len()
        )));
    }
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::TypeTag;
    use crate::generator::{build_dataset, BuildParams};

    #[test]
    fn baseline_vocabulary_has_expected_size() {
        let reg = FunctionRegistry::baseline();
        let vocab = Vocabulary::build(&reg);
        // 7 unary first-order (11 each) + 3 binary (121 each) + MAP 110
        // + FILTER 44 + COUNT 44 + ZIPWITH 605 + SCANL1 55
        assert_eq!(vocab.len(), 1298);
        for (i, s) in vocab.statements.iter().enumerate() {
            assert_eq!(vocab.lookup(s), Some(i));
        }
    }

    #[test]
    fn encoding_is_deterministic_and_local() {
        let env = vec![vec![Value::Int(5), Value::List(vec![1, 2])]; NUM_EXAMPLES];
        let outs = vec![Value::Int(7); NUM_EXAMPLES];
        let a = encode_state(&env, &outs).unwrap();
        let b = encode_state(&env, &outs).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), STATE_DIM);

        // changing one variable changes exactly that slot's features
        let mut env2 = env.clone();
        env2[2][1] = Value::List(vec![1, 3]);
        let c = encode_state(&env2, &outs).unwrap();
        let slot_start = (2 * SLOTS_PER_EXAMPLE + 1) * SLOT_DIM;
        for (i, (x, y)) in a.iter().zip(&c).enumerate() {
            if (slot_start..slot_start + SLOT_DIM).contains(&i) {
                continue;
            }
            assert_eq!(x, y, "feature {i} changed unexpectedly");
        }
        assert_ne!(a[slot_start..slot_start + SLOT_DIM], c[slot_start..slot_start + SLOT_DIM]);
    }

    #[test]
    fn empty_environment_encodes_presence_flags_only() {
        let envs = vec![Vec::new(); NUM_EXAMPLES];
        let outs = vec![Value::Int(1); NUM_EXAMPLES];
        let enc = encode_state(&envs, &outs).unwrap();
        for e in 0..NUM_EXAMPLES {
            let base = e * SLOTS_PER_EXAMPLE * SLOT_DIM;
            for s in 0..MAX_VARS {
                let slot = &enc[base + s * SLOT_DIM..base + (s + 1) * SLOT_DIM];
                assert!(slot.iter().all(|&x| x == 0.0));
            }
            let out_slot = &enc[base + MAX_VARS * SLOT_DIM..base + (MAX_VARS + 1) * SLOT_DIM];
            assert_eq!(out_slot[2], 1.0);
        }
    }

    #[test]
    fn variable_overflow_is_an_error() {
        let envs = vec![vec![Value::Int(0); MAX_VARS + 1]; NUM_EXAMPLES];
        let outs = vec![Value::Int(0); NUM_EXAMPLES];
        assert!(matches!(
            encode_state(&envs, &outs),
            Err(ModelError::VariableOverflow(_))
        ));
    }

    #[test]
    fn prediction_normalizes() {
        let reg = FunctionRegistry::baseline();
        let vocab = Vocabulary::build(&reg);
        let cfg = ModelConfig {
            num_layers: 2,
            output_size: 16,
            growth_size: 8,
            embedding_dim: 4,
            ..ModelConfig::default()
        };
        let params = ModelParams::init(cfg, &reg, &vocab);
        let envs = vec![vec![Value::List(vec![3, 1])]; NUM_EXAMPLES];
        let outs = vec![Value::Int(4); NUM_EXAMPLES];
        let enc = encode_state(&envs, &outs).unwrap();
        let (dist, drops) = predict(&params, &enc).unwrap();
        assert_eq!(dist.len(), vocab.len());
        assert!((dist.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        assert!(dist.iter().all(|&p| p >= 0.0));
        assert!(drops.iter().all(|d| d.is_finite()));

        // the uniform model really is uniform
        let u = ModelParams::uniform(cfg, &reg, &vocab);
        let (dist, _) = predict(&u, &enc).unwrap();
        let expect = 1.0 / vocab.len() as f64;
        assert!(dist.iter().all(|&p| (p - expect).abs() < 1e-12));
    }

    /// Analytic gradients of both heads match central finite differences
    /// within 1e-4 relative error on a small random configuration.
    #[test]
    fn gradient_check_against_finite_differences() {
        let reg = FunctionRegistry::baseline();
        let vocab = Vocabulary::build(&reg);
        let cfg = ModelConfig {
            num_layers: 2,
            output_size: 6,
            growth_size: 4,
            embedding_dim: 3,
            seed: 12,
            ..ModelConfig::default()
        };
        let mut params = ModelParams::init(cfg, &reg, &vocab);

        let envs = vec![vec![Value::List(vec![2, -3, 5]), Value::Int(7)]; NUM_EXAMPLES];
        let outs = vec![Value::List(vec![4, -6, 10]); NUM_EXAMPLES];
        let mut drop_targets = vec![0.0; MAX_VARS];
        drop_targets[1] = 1.0;
        let mut drop_mask = vec![0.0; MAX_VARS];
        drop_mask[0] = 1.0;
        drop_mask[1] = 1.0;
        let sample = TrainSample {
            enc: encode_state(&envs, &outs).unwrap(),
            target_stmt: 17,
            drop_targets,
            drop_mask,
        };

        let mut grad = params.grad_shape();
        sample_loss_grad(&params, &sample, &mut grad);

        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let eps = 1e-5;
        // probe a handful of weights in every tensor, both heads included
        for t in 0..4 + cfg.num_layers {
            for _ in 0..4 {
                let (len, analytic, idx);
                {
                    let (pt, gt) = match t {
                        0 => (&mut params.slot, &grad.slot),
                        1 => (&mut params.trunk, &grad.trunk),
                        2 => (&mut params.stmt_head, &grad.stmt_head),
                        3 => (&mut params.drop_head, &grad.drop_head),
                        k => (&mut params.layers[k - 4], &grad.layers[k - 4]),
                    };
                    len = pt.w.len();
                    idx = rng.gen_range(0..len);
                    analytic = gt.w[idx];
                    pt.w[idx] += eps;
                }
                let mut g1 = params.grad_shape();
                let up = sample_loss_grad(&params, &sample, &mut g1);
                {
                    let pt = match t {
                        0 => &mut params.slot,
                        1 => &mut params.trunk,
                        2 => &mut params.stmt_head,
                        3 => &mut params.drop_head,
                        k => &mut params.layers[k - 4],
                    };
                    pt.w[idx] -= 2.0 * eps;
                }
                let mut g2 = params.grad_shape();
                let down = sample_loss_grad(&params, &sample, &mut g2);
                {
                    let pt = match t {
                        0 => &mut params.slot,
                        1 => &mut params.trunk,
                        2 => &mut params.stmt_head,
                        3 => &mut params.drop_head,
                        k => &mut params.layers[k - 4],
                    };
                    pt.w[idx] += eps;
                }
                let numeric = (up - down) / (2.0 * eps);
                let denom = analytic.abs().max(numeric.abs()).max(1e-8);
                let rel = (analytic - numeric).abs() / denom;
                assert!(
                    rel < 1e-4,
                    "tensor {t} index {idx}: analytic {analytic:.10} vs numeric {numeric:.10} (rel {rel:.2e})"
                );
            }
        }
    }

    /// Training on a single-entry dataset drives the loss toward zero and
    /// the model reproduces that program greedily.
    #[test]
    fn overfits_one_entry() {
        let reg = FunctionRegistry::baseline();
        let vocab = Vocabulary::build(&reg);
        let params_build = BuildParams::new(40, 1, 9);
        let cache = build_dataset(&reg, &params_build, None, |_| {}).unwrap();
        let entry = cache
            .entries
            .iter()
            .find(|e| e.program.starts_with("LIST|"))
            .unwrap()
            .clone();
        let single = DatasetCache {
            entries: vec![entry.clone()],
            max_len_generated: 1,
            probe_seed: cache.probe_seed,
            fingerprint: cache.fingerprint.clone(),
        };
        let cfg = ModelConfig {
            num_layers: 2,
            output_size: 24,
            growth_size: 12,
            embedding_dim: 8,
            num_epochs: 60,
            batch_size: 4,
            learning_rate: 0.2,
            seed: 3,
            ..ModelConfig::default()
        };
        let mut last = f64::INFINITY;
        let params = train(&single, cfg, &reg, |_, loss, _, _| last = loss);
        assert!(last < 0.05, "final loss {last}");

        let samples = replay_entry(&entry, &reg, &vocab).unwrap();
        let (dist, _) = predict(&params, &samples[0].enc).unwrap();
        let argmax = dist
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        assert_eq!(argmax, samples[0].target_stmt);
    }

    #[test]
    fn default_epochs_is_forty() {
        assert_eq!(ModelConfig::default().num_epochs, 40);
    }

    #[test]
    fn save_load_roundtrip_is_bit_identical() {
        let reg = FunctionRegistry::baseline();
        let vocab = Vocabulary::build(&reg);
        let cfg = ModelConfig {
            num_layers: 1,
            output_size: 8,
            growth_size: 4,
            embedding_dim: 3,
            ..ModelConfig::default()
        };
        let params = ModelParams::init(cfg, &reg, &vocab);
        let dir = std::env::temp_dir().join("listsynth-model-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("m.0");
        save_model(&params, &path).unwrap();
        let loaded = load_model(&path, &reg).unwrap();

        let envs = vec![vec![Value::List(vec![1])]; NUM_EXAMPLES];
        let outs = vec![Value::Int(1); NUM_EXAMPLES];
        let enc = encode_state(&envs, &outs).unwrap();
        let (a, da) = predict(&params, &enc).unwrap();
        let (b, db) = predict(&loaded, &enc).unwrap();
        assert_eq!(a, b);
        assert_eq!(da, db);

        // wrong registry fingerprint is refused
        let ext = FunctionRegistry::extended();
        assert!(matches!(
            load_model(&path, &ext),
            Err(ModelError::FingerprintMismatch { .. })
        ));
    }

    #[test]
    fn replay_targets_are_live_variable_flags() {
        let reg = FunctionRegistry::baseline();
        let vocab = Vocabulary::build(&reg);
        let p = "LIST|SORT,0|SUM,1";
        let prog = parse_program(p, &reg).unwrap();
        let examples = crate::generator::gen_examples(&prog, NUM_EXAMPLES, &reg, 77).unwrap();
        let entry = crate::generator::DatasetEntry {
            program: p.to_string(),
            examples,
        };
        let samples = replay_entry(&entry, &reg, &vocab).unwrap();
        assert_eq!(samples.len(), 2);
        // at step 0 the input is still needed by SORT
        assert_eq!(samples[0].drop_targets[0], 0.0);
        assert_eq!(samples[0].drop_mask[0], 1.0);
        // at step 1 the raw input is dead, the sorted list is live
        assert_eq!(samples[1].drop_targets[0], 1.0);
        assert_eq!(samples[1].drop_targets[1], 0.0);
        let _ = TypeTag::Int;
    }
}
