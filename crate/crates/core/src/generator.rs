//! Corpus construction: random program generation by target length,
//! example generation under propagated constraints, redundant-variable
//! pruning, observational-equivalence deduplication and an incremental
//! length cache.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::constraints::{plan_of, propagate, sample_inputs, sample_inputs_with, Constraint, SamplePlan};
use crate::dsl::{
    enumerate_statements, parse_program, print_program, FuncOp, FunctionRegistry, Program,
    TypeTag, Value,
};
use crate::interpreter::{check_solution, run_program, IOPair};

/// Examples attached to every stored program.
pub const EXAMPLES_PER_PROGRAM: usize = 5;
/// Shared probe tuples per input signature used for equivalence checks.
pub const PROBES_PER_SIGNATURE: usize = 5;
/// Sampling attempts per example before a program is declared infeasible.
pub const EXAMPLE_RETRY_BUDGET: usize = 100;

/// How input signatures are drawn during generation.
#[derive(Clone, Copy, Debug)]
pub struct GenPolicy {
    /// Upper bound on the number of program inputs.
    pub max_inputs: usize,
    /// Force the first input to be a list.
    pub first_input_list: bool,
}

impl Default for GenPolicy {
    fn default() -> Self {
        GenPolicy {
            max_inputs: 3,
            first_input_list: true,
        }
    }
}

impl GenPolicy {
    fn signatures(&self) -> Vec<Vec<TypeTag>> {
        let mut out = Vec::new();
        for n in 1..=self.max_inputs {
            let mut sig = vec![TypeTag::Int; n];
            loop {
                if !self.first_input_list || sig[0] == TypeTag::List {
                    out.push(sig.clone());
                }
                let mut k = n;
                loop {
                    if k == 0 {
                        break;
                    }
                    k -= 1;
                    if sig[k] == TypeTag::Int {
                        sig[k] = TypeTag::List;
                        break;
                    }
                    sig[k] = TypeTag::Int;
                    if k == 0 {
                        k = usize::MAX;
                        break;
                    }
                }
                if k == usize::MAX {
                    break;
                }
            }
        }
        out
    }
}

/// A deduplicated program with its probe examples.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DatasetEntry {
    pub program: String,
    pub examples: Vec<IOPair>,
}

/// The accumulated corpus plus resume metadata.
pub struct DatasetCache {
    pub entries: Vec<DatasetEntry>,
    pub max_len_generated: usize,
    pub probe_seed: u64,
    pub fingerprint: String,
}

#[derive(Debug, Error)]
pub enum GeneratorError {
    #[error("could not generate a program of length {0} after {1} attempts")]
    GenerationExhausted(usize, usize),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad cache file: {0}")]
    BadCache(String),
    #[error(
        "cache registry fingerprint {cache} does not match the active registry {active}"
    )]
    FingerprintMismatch { cache: String, active: String },
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

fn text_seed(base: u64, tag: &str, text: &str) -> u64 {
    let mut h = base ^ 0x51_7c_c1_b7_27_22_0a_95;
    for b in tag.bytes().chain(text.bytes()) {
        h = splitmix(h ^ b as u64);
    }
    h
}

/// True iff every non-final statement result is consumed later; inputs are
/// not considered here.
pub fn prune_redundant(p: &Program) -> bool {
    let n_inputs = p.input_types.len();
    let n = p.statements.len();
    for k in 0..n.saturating_sub(1) {
        let var = n_inputs + k;
        let used = p.statements[k + 1..]
            .iter()
            .any(|s| s.used_vars().any(|v| v == var));
        if !used {
            return false;
        }
    }
    true
}

fn all_inputs_used(p: &Program) -> bool {
    (0..p.input_types.len()).all(|v| p.statements.iter().any(|s| s.used_vars().any(|u| u == v)))
}

/// A program the generator keeps: no dangling statement results and every
/// declared input consumed somewhere.
pub fn is_canonical(p: &Program) -> bool {
    prune_redundant(p) && all_inputs_used(p)
}

/// Draws one well-typed program with exactly `target_len` statements,
/// retrying until the used-variable discipline holds.
pub fn gen_random_program<R: Rng>(
    target_len: usize,
    registry: &FunctionRegistry,
    rng: &mut R,
    policy: GenPolicy,
) -> Result<Program, GeneratorError> {
    assert!(target_len >= 1);
    const MAX_ATTEMPTS: usize = 10_000;
    for _ in 0..MAX_ATTEMPTS {
        let num_inputs = rng.gen_range(1..=policy.max_inputs);
        let mut input_types = Vec::with_capacity(num_inputs);
        for i in 0..num_inputs {
            if i == 0 && policy.first_input_list {
                input_types.push(TypeTag::List);
            } else if rng.gen_bool(0.5) {
                input_types.push(TypeTag::List);
            } else {
                input_types.push(TypeTag::Int);
            }
        }
        let mut env = input_types.clone();
        let mut statements = Vec::with_capacity(target_len);
        for _ in 0..target_len {
            let options = enumerate_statements(&env, registry);
            if options.is_empty() {
                break;
            }
            let stmt = options[rng.gen_range(0..options.len())].clone();
            env.push(registry.functions[stmt.function].return_type);
            statements.push(stmt);
        }
        if statements.len() != target_len {
            continue;
        }
        let p = Program {
            input_types,
            statements,
        };
        if is_canonical(&p) {
            return Ok(p);
        }
    }
    Err(GeneratorError::GenerationExhausted(target_len, MAX_ATTEMPTS))
}

/// Exhaustively enumerates every canonical program of exactly `target_len`
/// statements under the policy. Feasible for small lengths; the raw spaces
/// at lengths one and two are what the generation caps are measured
/// against.
pub fn enumerate_programs(
    target_len: usize,
    registry: &FunctionRegistry,
    policy: GenPolicy,
) -> Vec<Program> {
    let mut out = Vec::new();
    for sig in policy.signatures() {
        let mut stack: Vec<(Vec<TypeTag>, Vec<crate::dsl::Statement>)> =
            vec![(sig.clone(), Vec::new())];
        while let Some((env, stmts)) = stack.pop() {
            if stmts.len() == target_len {
                let p = Program {
                    input_types: sig.clone(),
                    statements: stmts,
                };
                if is_canonical(&p) {
                    out.push(p);
                }
                continue;
            }
            for stmt in enumerate_statements(&env, registry) {
                let mut env2 = env.clone();
                env2.push(registry.functions[stmt.function].return_type);
                let mut stmts2 = stmts.clone();
                stmts2.push(stmt);
                stack.push((env2, stmts2));
            }
        }
    }
    out
}

/// Extern error outputs (for example the digit classifier's 10) that make
/// an example unusable for the program at hand.
fn is_extern_error(p: &Program, out: &Value, registry: &FunctionRegistry) -> bool {
    p.statements.iter().any(|s| {
        if let FuncOp::Extern(ext) = &registry.functions[s.function].op {
            ext.error_value.as_ref() == Some(out)
        } else {
            false
        }
    })
}

/// Generates `n` examples for a program via constraint propagation plus
/// rejection sampling. `None` means the program is example-infeasible and
/// is dropped from the corpus. After the first accepted draw, the sampling
/// regime and list length that worked are locked in for the remaining
/// examples, so programs alive only in a narrow input window still get a
/// full example set.
pub fn gen_examples(
    p: &Program,
    n: usize,
    registry: &FunctionRegistry,
    seed: u64,
) -> Option<Vec<IOPair>> {
    let cons: Vec<Constraint> = propagate(p, registry).ok()?;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    let mut plan = SamplePlan::default();
    let sweep: Vec<SamplePlan> = sweep_plans(&cons);
    for _ in 0..n {
        let mut found = false;
        for attempt in 0..EXAMPLE_RETRY_BUDGET {
            // first half: random draws under the current plan; second half:
            // a systematic regime x length sweep for programs alive only in
            // a narrow input window
            let attempt_plan = if attempt < EXAMPLE_RETRY_BUDGET / 2 || plan.regime.is_some() {
                plan
            } else {
                sweep[(attempt - EXAMPLE_RETRY_BUDGET / 2) % sweep.len().max(1)]
            };
            let inputs = sample_inputs_with(&cons, &mut rng, attempt_plan);
            let output = run_program(p, &inputs, registry);
            if output.is_null() || is_extern_error(p, &output, registry) {
                continue;
            }
            plan = plan_of(&inputs);
            out.push(IOPair { inputs, output });
            found = true;
            break;
        }
        if !found {
            return None;
        }
    }
    Some(out)
}

/// Regime x length grid covering the constraint space, used as the
/// deterministic fallback phase of example sampling.
fn sweep_plans(cons: &[Constraint]) -> Vec<SamplePlan> {
    use crate::constraints::SampleRegime;
    let len_range = cons.iter().find_map(|c| match c {
        Constraint::List(l) => Some((l.min_len, l.max_len)),
        _ => None,
    });
    let mut out = Vec::new();
    for regime in [SampleRegime::Bytes, SampleRegime::Small, SampleRegime::Full] {
        match len_range {
            Some((lo, hi)) => {
                for len in lo..=hi {
                    out.push(SamplePlan {
                        regime: Some(regime),
                        list_len: Some(len),
                    });
                }
            }
            None => out.push(SamplePlan {
                regime: Some(regime),
                list_len: None,
            }),
        }
    }
    out
}

fn signature_key(sig: &[TypeTag]) -> String {
    sig.iter()
        .map(|t| t.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

/// Shared probe input tuples for one input signature, derived from the
/// probe seed so every generation stage agrees on them.
pub fn probe_inputs(sig: &[TypeTag], probe_seed: u64) -> Vec<Vec<Value>> {
    let key = signature_key(sig);
    let mut rng = ChaCha20Rng::seed_from_u64(text_seed(probe_seed, "probes", &key));
    let cons: Vec<Constraint> = sig.iter().map(|t| Constraint::full(*t)).collect();
    (0..PROBES_PER_SIGNATURE)
        .map(|_| sample_inputs(&cons, &mut rng))
        .collect()
}

/// Behavioral signature: the program's outputs over its signature class's
/// shared probes. Null outputs participate, so always-failing programs
/// collapse together too.
fn behavior_key(p: &Program, registry: &FunctionRegistry, probe_seed: u64) -> String {
    let probes = probe_inputs(&p.input_types, probe_seed);
    let outs: Vec<Value> = probes
        .iter()
        .map(|inputs| run_program(p, inputs, registry))
        .collect();
    format!(
        "{}#{}",
        signature_key(&p.input_types),
        serde_json::to_string(&outs).expect("values serialize")
    )
}

/// Keeps one representative per behavioral signature: the shorter program
/// wins, ties break on lexicographic program text. Idempotent.
pub fn dedup(
    entries: Vec<DatasetEntry>,
    registry: &FunctionRegistry,
    probe_seed: u64,
) -> Vec<DatasetEntry> {
    let keys: Vec<String> = entries
        .par_iter()
        .map(|e| {
            let p = parse_program(&e.program, registry).expect("stored programs parse");
            behavior_key(&p, registry, probe_seed)
        })
        .collect();
    let mut best: HashMap<&str, usize> = HashMap::new();
    for (i, key) in keys.iter().enumerate() {
        let better = match best.get(key.as_str()) {
            None => true,
            Some(&j) => {
                let (a, b) = (&entries[i].program, &entries[j].program);
                let (la, lb) = (a.matches('|').count(), b.matches('|').count());
                la < lb || (la == lb && a < b)
            }
        };
        if better {
            best.insert(key.as_str(), i);
        }
    }
    let mut chosen: Vec<usize> = best.into_values().collect();
    chosen.sort_unstable();
    chosen.into_iter().map(|i| entries[i].clone()).collect()
}

/// Progress notifications in the reference pipeline's staged style.
pub enum BuildEvent {
    StartLength { length: usize, current_size: usize },
    RawGenerated { made: usize, target: usize },
    ExamplesDone { kept: usize, total: usize, remaining: usize },
    Deduped { kept: usize, total: usize },
    Finished { total: usize },
    RemovedShorterEquivalents { removed: usize },
}

pub struct BuildParams {
    pub num_train: usize,
    pub max_train_len: usize,
    pub workers: usize,
    pub seed: u64,
    pub policy: GenPolicy,
    /// Consecutive duplicate draws after which a length is considered
    /// exhausted.
    pub plateau: usize,
}

impl BuildParams {
    pub fn new(num_train: usize, max_train_len: usize, seed: u64) -> Self {
        BuildParams {
            num_train,
            max_train_len,
            workers: 1,
            seed,
            policy: GenPolicy::default(),
            plateau: 10_000,
        }
    }
}

/// Draws up to `num_train` distinct raw programs of exactly `length`,
/// stopping at the plateau threshold once the space looks exhausted.
fn raw_generation(
    length: usize,
    registry: &FunctionRegistry,
    params: &BuildParams,
) -> Vec<Program> {
    let mut rng = ChaCha20Rng::seed_from_u64(splitmix(params.seed ^ (length as u64)));
    let mut seen: HashMap<String, ()> = HashMap::new();
    let mut out = Vec::new();
    let mut dry_spell = 0usize;
    while out.len() < params.num_train && dry_spell < params.plateau {
        match gen_random_program(length, registry, &mut rng, params.policy) {
            Ok(p) => {
                let text = print_program(&p, registry);
                if seen.insert(text, ()).is_none() {
                    out.push(p);
                    dry_spell = 0;
                } else {
                    dry_spell += 1;
                }
            }
            Err(_) => break,
        }
    }
    out
}

/// Attaches examples to raw programs in parallel. Per-program seeds derive
/// from the build seed and the program text, so results do not depend on
/// the worker count.
fn attach_examples(
    programs: Vec<Program>,
    registry: &FunctionRegistry,
    seed: u64,
) -> Vec<DatasetEntry> {
    programs
        .into_par_iter()
        .filter_map(|p| {
            let text = print_program(&p, registry);
            let examples = gen_examples(
                &p,
                EXAMPLES_PER_PROGRAM,
                registry,
                text_seed(seed, "examples", &text),
            )?;
            Some(DatasetEntry {
                program: text,
                examples,
            })
        })
        .collect()
}

/// Builds (or extends) a corpus: for each length beyond the cache, generate
/// raw programs, attach examples, and deduplicate against everything so
/// far. Deterministic for a fixed seed regardless of the worker count.
pub fn build_dataset(
    registry: &FunctionRegistry,
    params: &BuildParams,
    cache: Option<DatasetCache>,
    mut events: impl FnMut(BuildEvent),
) -> Result<DatasetCache, GeneratorError> {
    let (mut entries, start_len, probe_seed) = match cache {
        Some(c) => {
            if c.fingerprint != registry.fingerprint() {
                return Err(GeneratorError::FingerprintMismatch {
                    cache: c.fingerprint,
                    active: registry.fingerprint().to_string(),
                });
            }
            (c.entries, c.max_len_generated, c.probe_seed)
        }
        None => (Vec::new(), 0, splitmix(params.seed ^ 0x70726f6265)),
    };

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(params.workers.max(1))
        .build()
        .expect("thread pool");

    for length in (start_len + 1)..=params.max_train_len {
        events(BuildEvent::StartLength {
            length,
            current_size: entries.len(),
        });
        let raw = raw_generation(length, registry, params);
        events(BuildEvent::RawGenerated {
            made: raw.len(),
            target: params.num_train,
        });
        let total = raw.len();
        let with_examples = pool.install(|| attach_examples(raw, registry, params.seed));
        events(BuildEvent::ExamplesDone {
            kept: with_examples.len(),
            total,
            remaining: entries.len() + with_examples.len(),
        });
        let before = entries.len() + with_examples.len();
        entries.extend(with_examples);
        entries = pool.install(|| dedup(entries, registry, probe_seed));
        events(BuildEvent::Deduped {
            kept: entries.len(),
            total: before,
        });
    }

    events(BuildEvent::Finished {
        total: entries.len(),
    });
    // a final sweep over the full corpus removes anything superseded by a
    // shorter equivalent that arrived later
    let before = entries.len();
    entries = pool.install(|| dedup(entries, registry, probe_seed));
    events(BuildEvent::RemovedShorterEquivalents {
        removed: before - entries.len(),
    });

    Ok(DatasetCache {
        entries,
        max_len_generated: params.max_train_len.max(start_len),
        probe_seed,
        fingerprint: registry.fingerprint().to_string(),
    })
}

#[derive(Serialize, Deserialize)]
struct CacheHeader {
    version: u32,
    registry_fingerprint: String,
    dsl: String,
    externs: Vec<String>,
    max_len: usize,
    probe_seed: u64,
}

/// Writes the cache file: a header record followed by one dataset entry
/// per line.
pub fn save_cache(
    cache: &DatasetCache,
    registry: &FunctionRegistry,
    path: &Path,
) -> Result<(), GeneratorError> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    let header = CacheHeader {
        version: 1,
        registry_fingerprint: cache.fingerprint.clone(),
        dsl: if registry.extended {
            "extended".into()
        } else {
            "baseline".into()
        },
        externs: registry
            .functions
            .iter()
            .filter_map(|fd| fd.extern_name.clone())
            .collect(),
        max_len: cache.max_len_generated,
        probe_seed: cache.probe_seed,
    };
    writeln!(f, "{}", serde_json::to_string(&header).expect("header"))?;
    for e in &cache.entries {
        writeln!(f, "{}", serde_json::to_string(e).expect("entry"))?;
    }
    Ok(())
}

/// Reads a cache (or headerless dataset) file. Headerless files get a zero
/// probe seed and a max length inferred from their programs.
pub fn load_cache(path: &Path, registry: &FunctionRegistry) -> Result<DatasetCache, GeneratorError> {
    let f = BufReader::new(std::fs::File::open(path)?);
    let mut lines = f.lines();
    let first = lines
        .next()
        .ok_or_else(|| GeneratorError::BadCache("empty file".into()))??;

    let (header, mut entries) = match serde_json::from_str::<CacheHeader>(&first) {
        Ok(h) => {
            if h.version != 1 {
                return Err(GeneratorError::BadCache(format!(
                    "unsupported cache version {}",
                    h.version
                )));
            }
            (Some(h), Vec::new())
        }
        Err(_) => {
            let e: DatasetEntry = serde_json::from_str(&first)
                .map_err(|e| GeneratorError::BadCache(e.to_string()))?;
            (None, vec![e])
        }
    };
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        entries.push(
            serde_json::from_str(&line).map_err(|e| GeneratorError::BadCache(e.to_string()))?,
        );
    }

    let (fingerprint, max_len, probe_seed) = match &header {
        Some(h) => (h.registry_fingerprint.clone(), h.max_len, h.probe_seed),
        None => {
            let max_len = entries
                .iter()
                .map(|e| e.program.matches('|').count())
                .max()
                .unwrap_or(0);
            (registry.fingerprint().to_string(), max_len, 0)
        }
    };
    if fingerprint != registry.fingerprint() {
        return Err(GeneratorError::FingerprintMismatch {
            cache: fingerprint,
            active: registry.fingerprint().to_string(),
        });
    }
    for e in &entries {
        parse_program(&e.program, registry)
            .map_err(|err| GeneratorError::BadCache(format!("{}: {err}", e.program)))?;
    }
    Ok(DatasetCache {
        entries,
        max_len_generated: max_len,
        probe_seed,
        fingerprint,
    })
}

/// Sanity check used by tests and the training loader: every entry must
/// reproduce its own examples.
pub fn verify_entries(cache: &DatasetCache, registry: &FunctionRegistry) -> bool {
    cache.entries.par_iter().all(|e| {
        let p = parse_program(&e.program, registry).expect("stored programs parse");
        check_solution(&p, &e.examples, registry)
    })
}
