//! Statement and program evaluation with Null-propagation error semantics.
//!
//! Every failure is a value, never a panic: consuming a Null operand,
//! partial functions on bad inputs (head of an empty list, out-of-range
//! access) and results outside the integer range or length cap all yield
//! [`Value::Null`].

use serde::{Deserialize, Serialize};

use crate::dsl::{
    FuncOp, FunctionRegistry, Operand, Program, Statement, Value, INT_MAX, INT_MIN, MAX_LIST_LEN,
};

/// One input-output example of a synthesis problem.
#[derive(Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct IOPair {
    pub inputs: Vec<Value>,
    pub output: Value,
}

fn check_int(x: i64) -> Value {
    if (INT_MIN..=INT_MAX).contains(&x) {
        Value::Int(x)
    } else {
        Value::Null
    }
}

fn check_list(xs: Vec<i64>) -> Value {
    if xs.len() <= MAX_LIST_LEN && xs.iter().all(|x| (INT_MIN..=INT_MAX).contains(x)) {
        Value::List(xs)
    } else {
        Value::Null
    }
}

/// Clamp a take/drop count into `[0, len]`.
fn clamp_count(n: i64, len: usize) -> usize {
    n.clamp(0, len as i64) as usize
}

/// Evaluates one statement over an environment of variable values. All
/// failures map to Null; a malformed statement is a precondition violation.
pub fn eval_statement(stmt: &Statement, env: &[Value], registry: &FunctionRegistry) -> Value {
    let func = &registry.functions[stmt.function];

    // Null propagation: any consumed operand value being Null nulls the result.
    for op in &stmt.operands {
        if let Operand::Var(i) = op {
            if env[*i].is_null() {
                return Value::Null;
            }
        }
    }

    let var = |k: usize| match stmt.operands[k] {
        Operand::Var(i) => &env[i],
        Operand::Lambda(_) => unreachable!("value slot holds lambda"),
    };
    let int = |k: usize| match var(k) {
        Value::Int(x) => *x,
        _ => unreachable!("INT slot holds non-int"),
    };
    let list = |k: usize| match var(k) {
        Value::List(xs) => xs,
        _ => unreachable!("LIST slot holds non-list"),
    };
    let lambda = |k: usize| match stmt.operands[k] {
        Operand::Lambda(l) => l,
        Operand::Var(_) => unreachable!("lambda slot holds variable"),
    };

    match &func.op {
        FuncOp::Head => list(0).first().map_or(Value::Null, |x| Value::Int(*x)),
        FuncOp::Last => list(0).last().map_or(Value::Null, |x| Value::Int(*x)),
        FuncOp::Take => {
            let xs = list(1);
            check_list(xs[..clamp_count(int(0), xs.len())].to_vec())
        }
        FuncOp::Drop => {
            let xs = list(1);
            check_list(xs[clamp_count(int(0), xs.len())..].to_vec())
        }
        FuncOp::Access => {
            let (n, xs) = (int(0), list(1));
            if n >= 0 && (n as usize) < xs.len() {
                Value::Int(xs[n as usize])
            } else {
                Value::Null
            }
        }
        FuncOp::Minimum => list(0).iter().min().map_or(Value::Null, |x| Value::Int(*x)),
        FuncOp::Maximum => list(0).iter().max().map_or(Value::Null, |x| Value::Int(*x)),
        FuncOp::Reverse => check_list(list(0).iter().rev().copied().collect()),
        FuncOp::Sort => {
            let mut xs = list(0).clone();
            xs.sort_unstable();
            check_list(xs)
        }
        FuncOp::Sum => check_int(list(0).iter().sum()),
        FuncOp::Map => {
            let f = lambda(0);
            check_list(list(1).iter().map(|&x| f.apply1(x)).collect())
        }
        FuncOp::Filter => {
            let f = lambda(0);
            check_list(list(1).iter().copied().filter(|&x| f.test(x)).collect())
        }
        FuncOp::Count => {
            let f = lambda(0);
            check_int(list(1).iter().filter(|&&x| f.test(x)).count() as i64)
        }
        FuncOp::ZipWith => {
            let f = lambda(0);
            check_list(
                list(1)
                    .iter()
                    .zip(list(2).iter())
                    .map(|(&x, &y)| f.apply2(x, y))
                    .collect(),
            )
        }
        FuncOp::Scanl1 => {
            let f = lambda(0);
            let xs = list(1);
            let mut out = Vec::with_capacity(xs.len());
            let mut acc = 0i64;
            for (i, &x) in xs.iter().enumerate() {
                acc = if i == 0 { x } else { f.apply2(acc, x) };
                // bail before the accumulator can leave i64 territory
                if !(INT_MIN..=INT_MAX).contains(&acc) {
                    return Value::Null;
                }
                out.push(acc);
            }
            check_list(out)
        }
        FuncOp::Ifi => {
            let f = lambda(0);
            Value::Int(if f.test(int(1)) { int(2) } else { int(3) })
        }
        FuncOp::Ifl => {
            let f = lambda(0);
            check_list(if f.test(int(1)) {
                list(2).clone()
            } else {
                list(3).clone()
            })
        }
        FuncOp::Extern(ext) => {
            let args: Vec<Value> = stmt
                .operands
                .iter()
                .map(|o| match o {
                    Operand::Var(i) => env[*i].clone(),
                    Operand::Lambda(_) => unreachable!("extern with lambda operand"),
                })
                .collect();
            let out = (ext.eval)(&args);
            match out {
                Value::Int(x) => check_int(x),
                Value::List(xs) => check_list(xs),
                other => other,
            }
        }
    }
}

/// Runs a program over concrete inputs, returning the last statement's
/// value (possibly Null). Panics on input arity/type mismatch, which is a
/// caller error.
pub fn run_program(p: &Program, inputs: &[Value], registry: &FunctionRegistry) -> Value {
    assert_eq!(
        inputs.len(),
        p.input_types.len(),
        "input arity mismatch: program takes {}, got {}",
        p.input_types.len(),
        inputs.len()
    );
    for (v, t) in inputs.iter().zip(&p.input_types) {
        assert!(
            v.is_null() || v.type_tag() == Some(*t),
            "input type mismatch"
        );
    }
    let mut env: Vec<Value> = inputs.to_vec();
    let mut result = Value::Null;
    for stmt in &p.statements {
        result = eval_statement(stmt, &env, registry);
        env.push(result.clone());
    }
    result
}

/// True iff the program reproduces every example's output exactly. A Null
/// program output never matches.
pub fn check_solution(p: &Program, examples: &[IOPair], registry: &FunctionRegistry) -> bool {
    assert!(!examples.is_empty(), "empty example set");
    examples.iter().all(|ex| {
        let out = run_program(p, &ex.inputs, registry);
        !out.is_null() && out == ex.output
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::{parse_program, LambdaOp, TypeTag};

    fn list(xs: &[i64]) -> Value {
        Value::List(xs.to_vec())
    }

    /// Expected values built by hand from the function definitions before
    /// the evaluator existed; the evaluator must match this table.
    #[test]
    fn small_input_oracle_table() {
        let reg = FunctionRegistry::extended();
        let table: Vec<(&str, Vec<Value>, Value)> = vec![
            ("LIST|HEAD,0", vec![list(&[])], Value::Null),
            ("LIST|HEAD,0", vec![list(&[7, 2])], Value::Int(7)),
            ("LIST|LAST,0", vec![list(&[])], Value::Null),
            ("LIST|LAST,0", vec![list(&[7, 2])], Value::Int(2)),
            ("LIST|MINIMUM,0", vec![list(&[])], Value::Null),
            ("LIST|MAXIMUM,0", vec![list(&[3, -1, 9])], Value::Int(9)),
            ("LIST|SUM,0", vec![list(&[])], Value::Int(0)),
            ("LIST|SUM,0", vec![list(&[200, 100])], Value::Null), // 300 > INT_MAX
            ("INT,LIST|TAKE,0,1", vec![Value::Int(-3), list(&[1, 2])], list(&[])),
            ("INT,LIST|TAKE,0,1", vec![Value::Int(5), list(&[1, 2])], list(&[1, 2])),
            ("INT,LIST|DROP,0,1", vec![Value::Int(1), list(&[1, 2, 3])], list(&[2, 3])),
            ("INT,LIST|DROP,0,1", vec![Value::Int(-2), list(&[1])], list(&[1])),
            ("INT,LIST|ACCESS,0,1", vec![Value::Int(2), list(&[5, 6])], Value::Null),
            ("INT,LIST|ACCESS,0,1", vec![Value::Int(0), list(&[5, 6])], Value::Int(5)),
            ("LIST|REVERSE,0", vec![list(&[1, 2, 3])], list(&[3, 2, 1])),
            ("LIST|SORT,0", vec![list(&[3, 1, 2])], list(&[1, 2, 3])),
            ("LIST|MAP,+1,0", vec![list(&[1, 2, 3])], list(&[2, 3, 4])),
            ("LIST|MAP,**2,0", vec![list(&[16])], Value::Null), // 256 > INT_MAX
            ("LIST|MAP,/2,0", vec![list(&[-3, 3])], list(&[-1, 1])), // toward zero
            ("LIST|FILTER,>0,0", vec![list(&[-1, 2, 0, 3])], list(&[2, 3])),
            ("LIST|COUNT,EVEN,0", vec![list(&[1, 2, 4])], Value::Int(2)),
            ("LIST|COUNT,ODD,0", vec![list(&[-3])], Value::Int(1)),
            ("LIST|SCANL1,+,0", vec![list(&[1, 2, 3])], list(&[1, 3, 6])),
            ("LIST|SCANL1,-,0", vec![list(&[5, 1, 2])], list(&[5, 4, 2])),
            ("LIST|SCANL1,+,0", vec![list(&[])], list(&[])),
            ("LIST,LIST|ZIPWITH,+,0,1", vec![list(&[1, 2, 3]), list(&[10, 20])], list(&[11, 22])),
            ("LIST|ZIPWITH,*,0,0", vec![list(&[4, 5])], list(&[16, 25])),
        ];
        for (text, inputs, expected) in table {
            let p = parse_program(text, &reg).unwrap();
            assert_eq!(run_program(&p, &inputs, &reg), expected, "program {text}");
        }
    }

    #[test]
    fn ifi_ifl_follow_their_predicate() {
        let reg = FunctionRegistry::extended();
        // IFI(>0, n=5, x=1, y=2) over vars [5, 1, 2] -> 1
        let p = parse_program("INT,INT,INT|IFI,>0,0,1,2", &reg).unwrap();
        assert_eq!(
            run_program(&p, &[Value::Int(5), Value::Int(1), Value::Int(2)], &reg),
            Value::Int(1)
        );
        // IFL(EVEN, n=3, x=[1], y=[2]) -> [2] since 3 is odd
        let p = parse_program("INT,LIST,LIST|IFL,EVEN,0,1,2", &reg).unwrap();
        assert_eq!(
            run_program(&p, &[Value::Int(3), list(&[1]), list(&[2])], &reg),
            list(&[2])
        );
    }

    /// IFI/IFL agree with the direct conditional for every predicate and
    /// scrutinee in [-8, 8]; exhaustive.
    #[test]
    fn branching_matches_direct_conditional() {
        let reg = FunctionRegistry::extended();
        let preds = [
            LambdaOp::Eq0,
            LambdaOp::Gt0,
            LambdaOp::Lt0,
            LambdaOp::Even,
            LambdaOp::Odd,
        ];
        let ifi = parse_program("INT,INT,INT|IFI,>0,0,1,2", &reg).unwrap();
        let ifl = parse_program("INT,LIST,LIST|IFL,>0,0,1,2", &reg).unwrap();
        for pred in preds {
            let mut pi = ifi.clone();
            pi.statements[0].operands[0] = crate::dsl::Operand::Lambda(pred);
            let mut pl = ifl.clone();
            pl.statements[0].operands[0] = crate::dsl::Operand::Lambda(pred);
            for n in -8..=8i64 {
                let (x, y) = (Value::Int(11), Value::Int(-7));
                let want = if pred.test(n) { x.clone() } else { y.clone() };
                assert_eq!(
                    run_program(&pi, &[Value::Int(n), x, y], &reg),
                    want,
                    "IFI {} n={n}",
                    pred.name()
                );
                let (xs, ys) = (list(&[1, 2]), list(&[9]));
                let want = if pred.test(n) { xs.clone() } else { ys.clone() };
                assert_eq!(
                    run_program(&pl, &[Value::Int(n), xs, ys], &reg),
                    want,
                    "IFL {} n={n}",
                    pred.name()
                );
            }
        }
    }

    #[test]
    fn null_propagates_through_chains() {
        let reg = FunctionRegistry::baseline();
        // HEAD of [] is Null, and the MAP over the Null is Null too
        let p = parse_program("LIST|HEAD,0|ACCESS,1,0", &reg).unwrap();
        assert_eq!(run_program(&p, &[list(&[])], &reg), Value::Null);
        let p = parse_program("LIST|SORT,0|HEAD,1", &reg).unwrap();
        assert_eq!(run_program(&p, &[list(&[])], &reg), Value::Null);
    }

    #[test]
    fn check_solution_on_paper_mnist_rows() {
        let reg = crate::extern_digits::registry_with_mnist();
        let p = parse_program("LIST|MNIST,0", &reg).unwrap();
        let examples = crate::extern_digits::paper_test_examples();
        assert_eq!(examples.len(), 10);
        assert!(check_solution(&p, &examples, &reg));
        // a mismatched output fails
        let mut bad = examples.clone();
        bad[0].output = Value::Int(5);
        assert!(!check_solution(&p, &bad, &reg));
        // Null expected output never matches
        let mut nulled = examples;
        nulled[3].output = Value::Null;
        assert!(!check_solution(&p, &nulled, &reg));
    }

    /// Closure: over random statements, every non-Null output satisfies the
    /// range and length invariants.
    #[test]
    fn closure_over_random_statements() {
        use rand::{Rng, SeedableRng};
        let reg = FunctionRegistry::extended();
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(7);
        let mut checked = 0usize;
        for _ in 0..10_000 {
            let env_types: Vec<TypeTag> = (0..rng.gen_range(1..=3))
                .map(|_| {
                    if rng.gen_bool(0.5) {
                        TypeTag::Int
                    } else {
                        TypeTag::List
                    }
                })
                .collect();
            let stmts = crate::dsl::enumerate_statements(&env_types, &reg);
            if stmts.is_empty() {
                continue;
            }
            let stmt = &stmts[rng.gen_range(0..stmts.len())];
            let env: Vec<Value> = env_types
                .iter()
                .map(|t| match t {
                    TypeTag::Int => Value::Int(rng.gen_range(INT_MIN..=INT_MAX)),
                    TypeTag::List => {
                        let n = rng.gen_range(0..=MAX_LIST_LEN);
                        Value::List((0..n).map(|_| rng.gen_range(INT_MIN..=INT_MAX)).collect())
                    }
                })
                .collect();
            match eval_statement(stmt, &env, &reg) {
                Value::Int(x) => assert!((INT_MIN..=INT_MAX).contains(&x)),
                Value::List(xs) => {
                    assert!(xs.len() <= MAX_LIST_LEN);
                    assert!(xs.iter().all(|x| (INT_MIN..=INT_MAX).contains(x)));
                }
                Value::Null => {}
                Value::Bool(_) => panic!("bool escaped a statement"),
            }
            checked += 1;
        }
        assert!(checked > 9_000);
    }

    #[test]
    fn determinism() {
        let reg = FunctionRegistry::extended();
        let p = parse_program("LIST|SCANL1,MAX,0|REVERSE,1", &reg).unwrap();
        let inputs = [list(&[3, -2, 7, 0])];
        let a = run_program(&p, &inputs, &reg);
        let b = run_program(&p, &inputs, &reg);
        assert_eq!(a, b);
    }
}
