//! Model-guided program search: anytime beam search (default) and
//! depth-first search, with learned variable dropping once the slot memory
//! fills up.

use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dsl::{
    enumerate_statements, print_program, FunctionRegistry, Operand, Program, Statement, TypeTag,
    Value,
};
use crate::interpreter::{check_solution, eval_statement, IOPair};
use crate::model::{encode_state, predict, ModelParams, Vocabulary, MAX_VARS, NUM_EXAMPLES};

/// Outcome of one synthesis attempt, serialized one-per-line into result
/// files.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SearchResult {
    pub result: Option<String>,
    pub num_steps: u64,
    pub time: f64,
    pub beam_size: usize,
    pub num_invalid: u64,
    pub width: usize,
}

/// One live node of the search: per-example slot memories plus the
/// statement history that produced them.
#[derive(Clone)]
pub struct SearchState {
    /// Value of each slot, per example.
    pub envs: Vec<Vec<Value>>,
    /// Program variable held by each slot.
    pub slot_vars: Vec<usize>,
    /// Type of each slot.
    pub slot_types: Vec<TypeTag>,
    /// Statements so far, in program variable indexing.
    pub history: Vec<Statement>,
    /// Slots evicted so far (program variable indices), newest last.
    pub drop_history: Vec<usize>,
    /// Cumulative log-probability of the chosen statements.
    pub score: f64,
}

impl SearchState {
    pub fn initial(examples: &[IOPair], input_types: &[TypeTag]) -> Self {
        SearchState {
            envs: examples.iter().map(|e| e.inputs.clone()).collect(),
            slot_vars: (0..input_types.len()).collect(),
            slot_types: input_types.to_vec(),
            history: Vec::new(),
            drop_history: Vec::new(),
            score: 0.0,
        }
    }

    fn num_vars_created(&self, num_inputs: usize) -> usize {
        num_inputs + self.history.len()
    }
}

/// Search-facing bundle: problem examples, registry, vocabulary and model.
pub struct SearchContext<'a> {
    pub registry: &'a FunctionRegistry,
    pub vocab: &'a Vocabulary,
    pub model: &'a ModelParams,
    pub examples: &'a [IOPair],
    pub input_types: Vec<TypeTag>,
}

#[derive(Debug, thiserror::Error)]
pub enum SearchError {
    #[error("problem has no examples")]
    NoExamples,
    #[error("examples disagree on the input signature")]
    MixedSignature,
}

impl<'a> SearchContext<'a> {
    pub fn new(
        registry: &'a FunctionRegistry,
        vocab: &'a Vocabulary,
        model: &'a ModelParams,
        examples: &'a [IOPair],
    ) -> Result<Self, SearchError> {
        let first = examples.first().ok_or(SearchError::NoExamples)?;
        let input_types: Vec<TypeTag> = first
            .inputs
            .iter()
            .map(|v| v.type_tag().ok_or(SearchError::MixedSignature))
            .collect::<Result<_, _>>()?;
        for e in examples {
            let tys: Option<Vec<TypeTag>> = e.inputs.iter().map(|v| v.type_tag()).collect();
            if tys.as_deref() != Some(&input_types[..]) {
                return Err(SearchError::MixedSignature);
            }
        }
        Ok(SearchContext {
            registry,
            vocab,
            model,
            examples,
            input_types,
        })
    }

    /// Encodes the first `NUM_EXAMPLES` example memories for the model.
    fn encode(&self, state: &SearchState) -> Vec<f64> {
        let k = state.envs.len().min(NUM_EXAMPLES);
        let envs: Vec<Vec<Value>> = state.envs[..k].to_vec();
        let outputs: Vec<Value> = self.examples[..k].iter().map(|e| e.output.clone()).collect();
        encode_state(&envs, &outputs).expect("slot budget enforced by expand")
    }

    /// The program a state's history denotes, truncated after the
    /// statement producing `var`.
    fn program_up_to(&self, state: &SearchState, var: usize) -> Option<Program> {
        let n_inputs = self.input_types.len();
        if var < n_inputs {
            return None; // an input alone is not a program
        }
        let upto = var - n_inputs + 1;
        Some(Program {
            input_types: self.input_types.clone(),
            statements: state.history[..upto].to_vec(),
        })
    }

    /// Any slot whose values equal every example output yields a solution.
    fn find_solution(&self, state: &SearchState) -> Option<Program> {
        let slots = state.slot_vars.len();
        'slot: for s in 0..slots {
            for (env, ex) in state.envs.iter().zip(self.examples) {
                if env[s].is_null() || env[s] != ex.output {
                    continue 'slot;
                }
            }
            if let Some(p) = self.program_up_to(state, state.slot_vars[s]) {
                if check_solution(&p, self.examples, self.registry) {
                    return Some(p);
                }
            }
        }
        None
    }
}

/// Scored child candidates of one expansion step.
pub struct Expansion {
    pub children: Vec<SearchState>,
    pub num_invalid: u64,
    /// Whether ranking cut any legal candidate (false means the expansion
    /// was exhaustive).
    pub truncated: bool,
}

/// Expands a state: scores all legal statements, keeps the best `width`,
/// applies each to every example memory and discards children that go Null
/// anywhere. A full memory evicts the slot with the highest drop score
/// before the statement applies.
pub fn expand(ctx: &SearchContext, state: &SearchState, width: usize) -> Expansion {
    let mut state = state.clone();
    let enc = ctx.encode(&state);
    let (dist, drop_scores) = predict(ctx.model, &enc).expect("encoding matches model");

    if state.slot_vars.len() >= MAX_VARS {
        // highest drop score, ties toward the oldest slot
        let evict = drop_scores
            .iter()
            .take(state.slot_vars.len())
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap().then(b.0.cmp(&a.0)))
            .map(|(i, _)| i)
            .unwrap_or(0);
        state.drop_history.push(state.slot_vars[evict]);
        state.slot_vars.remove(evict);
        state.slot_types.remove(evict);
        for env in &mut state.envs {
            env.remove(evict);
        }
    }

    let legal = enumerate_statements(&state.slot_types, ctx.registry);
    let mut scored: Vec<(f64, Statement)> = legal
        .into_iter()
        .filter_map(|s| ctx.vocab.lookup(&s).map(|i| (dist[i], s)))
        .collect();
    // statement enumeration order breaks probability ties
    let truncated = scored.len() > width;
    scored.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
    scored.truncate(width);

    let n_inputs = ctx.input_types.len();
    let new_var = state.num_vars_created(n_inputs);
    let mut children = Vec::with_capacity(scored.len());
    let mut num_invalid = 0;
    for (p, slot_stmt) in scored {
        let mut outs = Vec::with_capacity(state.envs.len());
        let mut valid = true;
        for env in &state.envs {
            let v = eval_statement(&slot_stmt, env, ctx.registry);
            if v.is_null() {
                valid = false;
                break;
            }
            outs.push(v);
        }
        if !valid {
            num_invalid += 1;
            continue;
        }
        // rewrite slot operands into program variable indexing for history
        let mut prog_stmt = slot_stmt.clone();
        for op in &mut prog_stmt.operands {
            if let Operand::Var(s) = op {
                *op = Operand::Var(state.slot_vars[*s]);
            }
        }
        let mut child = state.clone();
        for (env, v) in child.envs.iter_mut().zip(outs) {
            env.push(v);
        }
        child.slot_vars.push(new_var);
        child
            .slot_types
            .push(ctx.registry.functions[slot_stmt.function].return_type);
        child.history.push(prog_stmt);
        child.score += p.max(1e-300).ln();
        children.push(child);
    }
    Expansion {
        children,
        num_invalid,
        truncated,
    }
}

fn failure(start: Instant, beam_size: usize, width: usize, steps: u64, invalid: u64) -> SearchResult {
    SearchResult {
        result: None,
        num_steps: steps,
        time: start.elapsed().as_secs_f64(),
        beam_size,
        num_invalid: invalid,
        width,
    }
}

/// Anytime beam search: iteratively deepened to `max_len`, restarting with
/// a doubled beam once a pass exhausts without truncation having mattered.
/// `num_steps` counts network invocations (one per expanded state).
pub fn beam_search(
    ctx: &SearchContext,
    max_len: usize,
    beam_size: usize,
    width: usize,
    timeout: Duration,
) -> SearchResult {
    let start = Instant::now();
    let mut steps = 0u64;
    let mut invalid = 0u64;
    let initial = SearchState::initial(ctx.examples, &ctx.input_types);

    let mut cur_beam = beam_size;
    loop {
        let mut beam = vec![initial.clone()];
        let mut any_truncation = false;
        for _depth in 0..max_len {
            let mut next: Vec<SearchState> = Vec::new();
            for state in &beam {
                if start.elapsed() > timeout {
                    return failure(start, beam_size, width, steps, invalid);
                }
                let exp = expand(ctx, state, width);
                steps += 1;
                invalid += exp.num_invalid;
                any_truncation |= exp.truncated;
                for child in exp.children {
                    if let Some(p) = ctx.find_solution(&child) {
                        return SearchResult {
                            result: Some(print_program(&p, ctx.registry)),
                            num_steps: steps,
                            time: start.elapsed().as_secs_f64(),
                            beam_size,
                            num_invalid: invalid,
                            width,
                        };
                    }
                    next.push(child);
                }
            }
            if next.len() > cur_beam {
                any_truncation = true;
                next.sort_by(|a, b| b.score.partial_cmp(&a.score).unwrap());
                next.truncate(cur_beam);
            }
            if next.is_empty() {
                break;
            }
            beam = next;
        }
        if !any_truncation {
            // the whole space up to max_len was covered: no solution exists
            return failure(start, beam_size, width, steps, invalid);
        }
        if start.elapsed() > timeout {
            return failure(start, beam_size, width, steps, invalid);
        }
        cur_beam *= 2;
    }
}

/// Depth-first search over statements ordered by model score. With a
/// uniform model this is exhaustive enumeration in statement order.
pub fn dfs_search(
    ctx: &SearchContext,
    max_len: usize,
    timeout: Duration,
) -> SearchResult {
    let start = Instant::now();
    let mut steps = 0u64;
    let mut invalid = 0u64;
    let width = usize::MAX;
    let mut stack = vec![SearchState::initial(ctx.examples, &ctx.input_types)];

    while let Some(state) = stack.pop() {
        if start.elapsed() > timeout {
            return failure(start, 0, 0, steps, invalid);
        }
        if state.history.len() >= max_len {
            continue;
        }
        let exp = expand(ctx, &state, width);
        steps += 1;
        invalid += exp.num_invalid;
        for child in &exp.children {
            if let Some(p) = ctx.find_solution(child) {
                return SearchResult {
                    result: Some(print_program(&p, ctx.registry)),
                    num_steps: steps,
                    time: start.elapsed().as_secs_f64(),
                    beam_size: 0,
                    num_invalid: invalid,
                    width: 0,
                };
            }
        }
        // children arrive best-first; push reversed so the best pops first
        for child in exp.children.into_iter().rev() {
            stack.push(child);
        }
    }
    failure(start, 0, 0, steps, invalid)
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum SearchMethod {
    Beam,
    Dfs,
}

pub struct SolveOptions {
    pub method: SearchMethod,
    pub max_len: usize,
    pub timeout: Duration,
    pub beam_size: usize,
    pub width: usize,
    pub workers: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            method: SearchMethod::Beam,
            max_len: 5,
            timeout: Duration::from_secs(60),
            beam_size: 200,
            width: 20,
            workers: 1,
        }
    }
}

/// Summary of a batch run, printed as `Solved: k\n: p` by the CLI.
pub struct SolveSummary {
    pub solved: usize,
    pub failed: usize,
    pub total: usize,
}

/// Solves every problem in parallel, preserving input order.
pub fn solve_batch(
    problems: &[Vec<IOPair>],
    registry: &FunctionRegistry,
    model: &ModelParams,
    opts: &SolveOptions,
) -> (Vec<SearchResult>, SolveSummary) {
    let vocab = Vocabulary::build(registry);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.workers.max(1))
        .build()
        .expect("thread pool");
    let results: Vec<SearchResult> = pool.install(|| {
        problems
            .par_iter()
            .map(|examples| {
                let ctx = match SearchContext::new(registry, &vocab, model, examples) {
                    Ok(c) => c,
                    Err(_) => {
                        return SearchResult {
                            result: None,
                            num_steps: 0,
                            time: 0.0,
                            beam_size: opts.beam_size,
                            num_invalid: 0,
                            width: opts.width,
                        }
                    }
                };
                match opts.method {
                    SearchMethod::Beam => {
                        beam_search(&ctx, opts.max_len, opts.beam_size, opts.width, opts.timeout)
                    }
                    SearchMethod::Dfs => dfs_search(&ctx, opts.max_len, opts.timeout),
                }
            })
            .collect()
    });
    let solved = results.iter().filter(|r| r.result.is_some()).count();
    let summary = SolveSummary {
        solved,
        failed: results.len() - solved,
        total: results.len(),
    };
    (results, summary)
}
