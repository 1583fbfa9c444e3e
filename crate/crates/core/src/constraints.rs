//! Backward propagation of output-value constraints through a program,
//! used to sample inputs that keep evaluation inside the value range.
//!
//! Rules are sound in the weak sense the generator needs: inputs drawn from
//! the derived constraints overwhelmingly evaluate to non-Null, in-range
//! outputs, and the rare escapes are handled by rejection sampling upstream.

use rand::Rng;
use thiserror::Error;

use crate::dsl::{
    FuncOp, FunctionRegistry, LambdaOp, Operand, ParamType, Program, TypeTag, Value, INT_MAX,
    INT_MIN, MAX_LIST_LEN,
};

/// Inclusive integer range.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct IntConstraint {
    pub min: i64,
    pub max: i64,
}

impl IntConstraint {
    pub fn full() -> Self {
        IntConstraint {
            min: INT_MIN,
            max: INT_MAX,
        }
    }

    pub fn new(min: i64, max: i64) -> Self {
        IntConstraint { min, max }
    }

    pub fn is_empty(self) -> bool {
        self.min > self.max
    }

    pub fn intersect(self, other: Self) -> Self {
        IntConstraint {
            min: self.min.max(other.min),
            max: self.max.min(other.max),
        }
    }

    fn clamp_to_range(self) -> Self {
        IntConstraint {
            min: self.min.max(INT_MIN),
            max: self.max.min(INT_MAX),
        }
    }

    pub fn contains(self, x: i64) -> bool {
        (self.min..=self.max).contains(&x)
    }
}

/// Length window plus one [`IntConstraint`] per position, always
/// materialized at the maximum list length.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct ListConstraint {
    pub min_len: usize,
    pub max_len: usize,
    pub int_constraints: Vec<IntConstraint>,
}

impl ListConstraint {
    pub fn full() -> Self {
        Self::replicate(IntConstraint::full())
    }

    /// A list constraint replicating one element constraint across every
    /// position, the shape used by the extractor rules.
    pub fn replicate(c: IntConstraint) -> Self {
        ListConstraint {
            min_len: 0,
            max_len: MAX_LIST_LEN,
            int_constraints: vec![c; MAX_LIST_LEN],
        }
    }

    pub fn is_empty(&self) -> bool {
        self.min_len > self.max_len
            || self.int_constraints[..self.min_len]
                .iter()
                .any(|c| c.is_empty())
    }

    pub fn intersect(&self, other: &Self) -> Self {
        ListConstraint {
            min_len: self.min_len.max(other.min_len),
            max_len: self.max_len.min(other.max_len),
            int_constraints: self
                .int_constraints
                .iter()
                .zip(&other.int_constraints)
                .map(|(a, b)| a.intersect(*b))
                .collect(),
        }
    }

    /// Hull of the position constraints, for rules that scramble positions.
    fn element_hull(&self) -> IntConstraint {
        let mut hull = IntConstraint::new(INT_MAX, INT_MIN);
        for c in &self.int_constraints {
            hull.min = hull.min.min(c.min);
            hull.max = hull.max.max(c.max);
        }
        hull
    }

    pub fn satisfied_by(&self, xs: &[i64]) -> bool {
        xs.len() >= self.min_len
            && xs.len() <= self.max_len
            && xs
                .iter()
                .zip(&self.int_constraints)
                .all(|(x, c)| c.contains(*x))
    }
}

/// A constraint on one variable.
#[derive(Clone, PartialEq, Eq, Debug)]
pub enum Constraint {
    Int(IntConstraint),
    List(ListConstraint),
}

impl Constraint {
    pub fn full(ty: TypeTag) -> Self {
        match ty {
            TypeTag::Int => Constraint::Int(IntConstraint::full()),
            TypeTag::List => Constraint::List(ListConstraint::full()),
        }
    }

    pub fn is_empty(&self) -> bool {
        match self {
            Constraint::Int(c) => c.is_empty(),
            Constraint::List(c) => c.is_empty(),
        }
    }

    pub fn intersect(&self, other: &Self) -> Self {
        match (self, other) {
            (Constraint::Int(a), Constraint::Int(b)) => Constraint::Int(a.intersect(*b)),
            (Constraint::List(a), Constraint::List(b)) => Constraint::List(a.intersect(b)),
            _ => panic!("intersecting constraints of different types"),
        }
    }

    pub fn satisfied_by(&self, v: &Value) -> bool {
        match (self, v) {
            (Constraint::Int(c), Value::Int(x)) => c.contains(*x),
            (Constraint::List(c), Value::List(xs)) => c.satisfied_by(xs),
            _ => false,
        }
    }

    fn as_int(&self) -> IntConstraint {
        match self {
            Constraint::Int(c) => *c,
            Constraint::List(_) => panic!("expected int constraint"),
        }
    }

    fn as_list(&self) -> &ListConstraint {
        match self {
            Constraint::List(c) => c,
            Constraint::Int(_) => panic!("expected list constraint"),
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ConstraintError {
    #[error("constraints on variable {0} are unsatisfiable")]
    Unsatisfiable(usize),
}

fn isqrt(x: i64) -> i64 {
    if x <= 0 {
        return 0;
    }
    let mut r = (x as f64).sqrt() as i64;
    while (r + 1) * (r + 1) <= x {
        r += 1;
    }
    while r * r > x {
        r -= 1;
    }
    r
}

/// Preimage hull of an INT->INT lambda over an output range. Sound for the
/// invertible affine maps; squaring falls back to the symmetric root
/// window.
fn invert_unary(l: LambdaOp, out: IntConstraint) -> IntConstraint {
    use LambdaOp::*;
    let c = match l {
        Plus1 => IntConstraint::new(out.min - 1, out.max - 1),
        Minus1 => IntConstraint::new(out.min + 1, out.max + 1),
        Neg => IntConstraint::new(-out.max, -out.min),
        Mul2 | Mul3 | Mul4 => {
            let k = match l {
                Mul2 => 2,
                Mul3 => 3,
                _ => 4,
            };
            IntConstraint::new(
                out.min.div_euclid(k) + i64::from(out.min.rem_euclid(k) != 0),
                out.max.div_euclid(k),
            )
        }
        Div2 | Div3 | Div4 => {
            let k = match l {
                Div2 => 2,
                Div3 => 3,
                _ => 4,
            };
            // truncation toward zero: [min*k, max*k] maps inside [min, max]
            IntConstraint::new(out.min * k, out.max * k)
        }
        Square => {
            if out.max < 0 {
                IntConstraint::new(1, 0) // empty
            } else {
                let s = isqrt(out.max);
                IntConstraint::new(-s, s)
            }
        }
        _ => unreachable!("unary inversion of non-unary lambda"),
    };
    c.clamp_to_range()
}

/// Element ranges for the two operands of an (INT,INT)->INT lambda such
/// that applications stay inside `out` when `out` spans zero.
fn invert_binary(l: LambdaOp, out: IntConstraint) -> IntConstraint {
    use LambdaOp::*;
    let c = match l {
        Add | Sub => IntConstraint::new(out.min / 2, out.max / 2),
        Mul => {
            let s = isqrt(out.max.max(-out.min));
            IntConstraint::new(-s, s)
        }
        Min | Max => out,
        _ => unreachable!("binary inversion of non-binary lambda"),
    };
    c.clamp_to_range()
}

/// Per-position shrink of an int range for fold-style accumulation over up
/// to `MAX_LIST_LEN` elements.
fn scale_for_fold(out: IntConstraint) -> IntConstraint {
    IntConstraint::new(out.min / MAX_LIST_LEN as i64, out.max / MAX_LIST_LEN as i64)
}

/// Derives constraints on a function's value parameters from a constraint
/// on its output. Returns one constraint per value parameter (lambda
/// operands do not appear).
pub fn backward_rule(
    func_id: usize,
    registry: &FunctionRegistry,
    operands: &[Operand],
    out: &Constraint,
) -> Vec<Constraint> {
    let func = &registry.functions[func_id];
    let lambda0 = operands.iter().find_map(|o| match o {
        Operand::Lambda(l) => Some(*l),
        Operand::Var(_) => None,
    });

    match &func.op {
        // list constrained to int constraint, replicated elementwise
        FuncOp::Head | FuncOp::Last | FuncOp::Minimum | FuncOp::Maximum => {
            vec![Constraint::List(ListConstraint::replicate(out.as_int()))]
        }
        FuncOp::Sum => {
            vec![Constraint::List(ListConstraint::replicate(scale_for_fold(
                out.as_int(),
            )))]
        }
        FuncOp::Access => vec![
            Constraint::Int(IntConstraint::full()),
            Constraint::List(ListConstraint::replicate(out.as_int())),
        ],
        FuncOp::Take => {
            // prefix: positions survive, any length is legal after clamping
            let o = out.as_list();
            vec![
                Constraint::Int(IntConstraint::full()),
                Constraint::List(ListConstraint {
                    min_len: o.min_len,
                    max_len: MAX_LIST_LEN,
                    int_constraints: o.int_constraints.clone(),
                }),
            ]
        }
        FuncOp::Drop => {
            let hull = out.as_list().element_hull();
            vec![
                Constraint::Int(IntConstraint::full()),
                Constraint::List(ListConstraint {
                    min_len: out.as_list().min_len,
                    max_len: MAX_LIST_LEN,
                    int_constraints: vec![hull; MAX_LIST_LEN],
                }),
            ]
        }
        FuncOp::Reverse | FuncOp::Sort => {
            let o = out.as_list();
            vec![Constraint::List(ListConstraint {
                min_len: o.min_len,
                max_len: o.max_len,
                int_constraints: vec![o.element_hull(); MAX_LIST_LEN],
            })]
        }
        FuncOp::Map => {
            let elem = invert_unary(lambda0.expect("MAP lambda"), out.as_list().element_hull());
            let o = out.as_list();
            vec![Constraint::List(ListConstraint {
                min_len: o.min_len,
                max_len: o.max_len,
                int_constraints: vec![elem; MAX_LIST_LEN],
            })]
        }
        FuncOp::Filter => {
            // kept elements satisfy the output constraints, dropped ones are
            // free; only the length floor survives backward
            vec![Constraint::List(ListConstraint {
                min_len: out.as_list().min_len,
                max_len: MAX_LIST_LEN,
                int_constraints: vec![IntConstraint::full(); MAX_LIST_LEN],
            })]
        }
        FuncOp::Count => {
            let o = out.as_int();
            vec![Constraint::List(ListConstraint {
                min_len: o.min.max(0) as usize,
                max_len: MAX_LIST_LEN,
                int_constraints: vec![IntConstraint::full(); MAX_LIST_LEN],
            })]
        }
        FuncOp::ZipWith => {
            let elem =
                invert_binary(lambda0.expect("ZIPWITH lambda"), out.as_list().element_hull());
            let o = out.as_list();
            let side = ListConstraint {
                min_len: o.min_len,
                max_len: MAX_LIST_LEN,
                int_constraints: vec![elem; MAX_LIST_LEN],
            };
            vec![Constraint::List(side.clone()), Constraint::List(side)]
        }
        FuncOp::Scanl1 => {
            let l = lambda0.expect("SCANL1 lambda");
            let o = out.as_list();
            let elem = match l {
                LambdaOp::Add | LambdaOp::Sub => scale_for_fold(o.element_hull()),
                LambdaOp::Mul => IntConstraint::new(-2, 2),
                _ => o.element_hull(),
            };
            vec![Constraint::List(ListConstraint {
                min_len: o.min_len,
                max_len: o.max_len,
                int_constraints: vec![elem; MAX_LIST_LEN],
            })]
        }
        // the output is exactly x or y; the scrutinee is unconstrained
        FuncOp::Ifi | FuncOp::Ifl => vec![
            Constraint::Int(IntConstraint::full()),
            out.clone(),
            out.clone(),
        ],
        FuncOp::Extern(_) => func
            .params
            .iter()
            .map(|p| match p {
                ParamType::Value(TypeTag::List) => match out {
                    // list constrained to int constraint
                    Constraint::Int(c) => Constraint::List(ListConstraint::replicate(*c)),
                    Constraint::List(_) => Constraint::full(TypeTag::List),
                },
                ParamType::Value(TypeTag::Int) => Constraint::full(TypeTag::Int),
                ParamType::Lambda(_) => unreachable!("extern with lambda slot"),
            })
            .collect(),
    }
}

/// Walks the program last-to-first, starting from a full-range constraint
/// on the output and intersecting derived constraints on shared variables.
/// Returns one constraint per program input.
pub fn propagate(
    p: &Program,
    registry: &FunctionRegistry,
) -> Result<Vec<Constraint>, ConstraintError> {
    let var_types = p.var_types(registry);
    let mut cons: Vec<Constraint> = var_types.iter().map(|t| Constraint::full(*t)).collect();
    let n_inputs = p.input_types.len();

    for (k, stmt) in p.statements.iter().enumerate().rev() {
        let result_var = n_inputs + k;
        let out = cons[result_var].clone();
        let derived = backward_rule(stmt.function, registry, &stmt.operands, &out);
        let value_vars: Vec<usize> = stmt
            .operands
            .iter()
            .filter_map(|o| match o {
                Operand::Var(i) => Some(*i),
                Operand::Lambda(_) => None,
            })
            .collect();
        debug_assert_eq!(derived.len(), value_vars.len());
        for (var, c) in value_vars.into_iter().zip(derived) {
            let merged = cons[var].intersect(&c);
            if merged.is_empty() {
                return Err(ConstraintError::Unsatisfiable(var));
            }
            cons[var] = merged;
        }
    }
    Ok(cons.into_iter().take(n_inputs).collect())
}

/// Value regimes the sampler mixes over. Drawing a whole list under one
/// regime keeps its elements correlated, which matters for externs whose
/// domain is a narrow corner of the full range.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum SampleRegime {
    /// The constraint's own range.
    Full,
    /// Nonnegative byte window intersected with the constraint.
    Bytes,
    /// Small values around zero intersected with the constraint.
    Small,
}

/// Sampler state: the regime mixture plus an optional length lock, which
/// rejection loops set after a success so later draws repeat what worked.
#[derive(Clone, Copy, Debug, Default)]
pub struct SamplePlan {
    pub regime: Option<SampleRegime>,
    pub list_len: Option<usize>,
}

fn windowed(c: IntConstraint, regime: SampleRegime) -> IntConstraint {
    let w = match regime {
        SampleRegime::Full => return c,
        SampleRegime::Bytes => IntConstraint::new(0, 255),
        SampleRegime::Small => IntConstraint::new(-8, 8),
    };
    let out = c.intersect(w);
    if out.is_empty() {
        c
    } else {
        out
    }
}

fn pick_regime<R: Rng>(rng: &mut R) -> SampleRegime {
    match rng.gen_range(0..10) {
        0..=4 => SampleRegime::Full,
        5..=7 => SampleRegime::Bytes,
        _ => SampleRegime::Small,
    }
}

/// Draws one value per constraint. Deterministic for a fixed RNG state.
pub fn sample_inputs<R: Rng>(constraints: &[Constraint], rng: &mut R) -> Vec<Value> {
    sample_inputs_with(constraints, rng, SamplePlan::default())
}

/// Like [`sample_inputs`], honoring a plan's regime and length lock.
pub fn sample_inputs_with<R: Rng>(
    constraints: &[Constraint],
    rng: &mut R,
    plan: SamplePlan,
) -> Vec<Value> {
    let regime = plan.regime.unwrap_or_else(|| pick_regime(rng));
    constraints
        .iter()
        .map(|c| match c {
            Constraint::Int(c) => {
                let w = windowed(*c, regime);
                Value::Int(rng.gen_range(w.min..=w.max))
            }
            Constraint::List(c) => {
                let len = match plan.list_len {
                    Some(n) if n >= c.min_len && n <= c.max_len => n,
                    _ => rng.gen_range(c.min_len..=c.max_len),
                };
                Value::List(
                    (0..len)
                        .map(|i| {
                            let w = windowed(c.int_constraints[i], regime);
                            rng.gen_range(w.min..=w.max)
                        })
                        .collect(),
                )
            }
        })
        .collect()
}

/// The regime and list length a drawn input tuple corresponds to, for
/// locking after a success.
pub fn plan_of(values: &[Value]) -> SamplePlan {
    let list_len = values.iter().find_map(|v| match v {
        Value::List(xs) => Some(xs.len()),
        _ => None,
    });
    let all_ints: Vec<i64> = values
        .iter()
        .flat_map(|v| match v {
            Value::Int(x) => vec![*x],
            Value::List(xs) => xs.clone(),
            _ => vec![],
        })
        .collect();
    let regime = if all_ints.iter().all(|x| (-8..=8).contains(x)) {
        Some(SampleRegime::Small)
    } else if all_ints.iter().all(|x| (0..=255).contains(x)) {
        Some(SampleRegime::Bytes)
    } else {
        Some(SampleRegime::Full)
    };
    SamplePlan { regime, list_len }
}
