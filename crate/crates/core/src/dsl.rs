//! DSL core: value types, the function/lambda library, program
//! representation, textual encoding and statement enumeration.
//!
//! Programs are constant-free: every operand is either a reference to an
//! earlier variable (an input or the result of an earlier statement) or one
//! of a fixed set of named lambdas that are only legal inside higher-order
//! applications.

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Smallest representable integer. Values outside the range evaluate to Null.
pub const INT_MIN: i64 = -256;
/// Largest representable integer.
pub const INT_MAX: i64 = 255;
/// Lists never hold more than this many integers.
pub const MAX_LIST_LEN: usize = 20;

/// Storable variable types. Bool and function types exist only transiently
/// (predicate results and lambda operands) and never name a variable.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug, Serialize, Deserialize)]
pub enum TypeTag {
    Int,
    List,
}

impl fmt::Display for TypeTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TypeTag::Int => write!(f, "INT"),
            TypeTag::List => write!(f, "LIST"),
        }
    }
}

/// Function-typed operand slots.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
pub enum LambdaType {
    IntToInt,
    IntToBool,
    IntIntToInt,
}

/// One parameter slot of a function: either a storable value or a lambda.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum ParamType {
    Value(TypeTag),
    Lambda(LambdaType),
}

/// A runtime datum. `Null` is the error value: it propagates through every
/// function and absorbs range and length violations.
#[derive(Clone, PartialEq, Eq, Hash, Debug)]
pub enum Value {
    Int(i64),
    List(Vec<i64>),
    Bool(bool),
    Null,
}

impl Serialize for Value {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Value::Int(x) => s.serialize_i64(*x),
            Value::List(xs) => xs.serialize(s),
            Value::Bool(b) => s.serialize_bool(*b),
            Value::Null => s.serialize_none(),
        }
    }
}

impl<'de> Deserialize<'de> for Value {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = serde_json::Value::deserialize(d)?;
        match raw {
            serde_json::Value::Null => Ok(Value::Null),
            serde_json::Value::Bool(b) => Ok(Value::Bool(b)),
            serde_json::Value::Number(n) => n
                .as_i64()
                .map(Value::Int)
                .ok_or_else(|| serde::de::Error::custom("non-integer number")),
            serde_json::Value::Array(items) => items
                .into_iter()
                .map(|v| v.as_i64().ok_or("non-integer list element"))
                .collect::<Result<Vec<i64>, _>>()
                .map(Value::List)
                .map_err(serde::de::Error::custom),
            other => Err(serde::de::Error::custom(format!(
                "cannot decode value from {other}"
            ))),
        }
    }
}

impl Value {
    pub fn type_tag(&self) -> Option<TypeTag> {
        match self {
            Value::Int(_) => Some(TypeTag::Int),
            Value::List(_) => Some(TypeTag::List),
            _ => None,
        }
    }

    pub fn is_null(&self) -> bool {
        matches!(self, Value::Null)
    }
}

/// The fixed lambda library. Division truncates toward zero.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
pub enum LambdaOp {
    Plus1,
    Minus1,
    Mul2,
    Div2,
    Neg,
    Square,
    Mul3,
    Div3,
    Mul4,
    Div4,
    Gt0,
    Lt0,
    Even,
    Odd,
    Eq0,
    Add,
    Sub,
    Mul,
    Min,
    Max,
}

impl LambdaOp {
    pub fn name(self) -> &'static str {
        use LambdaOp::*;
        match self {
            Plus1 => "+1",
            Minus1 => "-1",
            Mul2 => "*2",
            Div2 => "/2",
            Neg => "*(-1)",
            Square => "**2",
            Mul3 => "*3",
            Div3 => "/3",
            Mul4 => "*4",
            Div4 => "/4",
            Gt0 => ">0",
            Lt0 => "<0",
            Even => "EVEN",
            Odd => "ODD",
            Eq0 => "=0",
            Add => "+",
            Sub => "-",
            Mul => "*",
            Min => "MIN",
            Max => "MAX",
        }
    }

    pub fn lambda_type(self) -> LambdaType {
        use LambdaOp::*;
        match self {
            Plus1 | Minus1 | Mul2 | Div2 | Neg | Square | Mul3 | Div3 | Mul4 | Div4 => {
                LambdaType::IntToInt
            }
            Gt0 | Lt0 | Even | Odd | Eq0 => LambdaType::IntToBool,
            Add | Sub | Mul | Min | Max => LambdaType::IntIntToInt,
        }
    }

    pub fn apply1(self, x: i64) -> i64 {
        use LambdaOp::*;
        match self {
            Plus1 => x + 1,
            Minus1 => x - 1,
            Mul2 => x * 2,
            Div2 => x / 2,
            Neg => -x,
            Square => x * x,
            Mul3 => x * 3,
            Div3 => x / 3,
            Mul4 => x * 4,
            Div4 => x / 4,
            _ => unreachable!("unary application of non-unary lambda"),
        }
    }

    pub fn test(self, x: i64) -> bool {
        use LambdaOp::*;
        match self {
            Gt0 => x > 0,
            Lt0 => x < 0,
            Even => x % 2 == 0,
            Odd => x % 2 != 0,
            Eq0 => x == 0,
            _ => unreachable!("predicate application of non-predicate lambda"),
        }
    }

    pub fn apply2(self, x: i64, y: i64) -> i64 {
        use LambdaOp::*;
        match self {
            Add => x + y,
            Sub => x - y,
            Mul => x * y,
            Min => x.min(y),
            Max => x.max(y),
            _ => unreachable!("binary application of non-binary lambda"),
        }
    }
}

/// Evaluation rule of a registry function.
#[derive(Clone)]
pub enum FuncOp {
    Head,
    Last,
    Take,
    Drop,
    Access,
    Minimum,
    Maximum,
    Reverse,
    Sort,
    Sum,
    Map,
    Filter,
    Count,
    ZipWith,
    Scanl1,
    Ifi,
    Ifl,
    Extern(Arc<ExternFn>),
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Category {
    FirstOrder,
    HigherOrder,
    Extern,
}

/// A host-implemented first-order function registered into the DSL.
pub struct ExternFn {
    pub name: String,
    pub param_types: Vec<TypeTag>,
    pub return_type: TypeTag,
    pub eval: Box<dyn Fn(&[Value]) -> Value + Send + Sync>,
    /// Output treated as a failure by the example generator (e.g. the digit
    /// classifier's error code 10).
    pub error_value: Option<Value>,
}

impl fmt::Debug for ExternFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ExternFn({})", self.name)
    }
}

/// One function of the registry: name, typed parameter slots, return type
/// and evaluation rule.
#[derive(Clone)]
pub struct FunctionDef {
    pub name: &'static str,
    pub extern_name: Option<String>,
    pub params: Vec<ParamType>,
    pub return_type: TypeTag,
    pub op: FuncOp,
    pub category: Category,
}

impl FunctionDef {
    pub fn display_name(&self) -> &str {
        self.extern_name.as_deref().unwrap_or(self.name)
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DslError {
    #[error("duplicate function name {0:?} in registry")]
    DuplicateName(String),
    #[error("empty program text")]
    EmptyProgram,
    #[error("unknown type {0:?}")]
    UnknownType(String),
    #[error("unknown function {0:?}")]
    UnknownFunction(String),
    #[error("unknown operand {0:?} for {1}")]
    UnknownOperand(String, String),
    #[error("arity mismatch for {0}: expected {1} operands, got {2}")]
    ArityMismatch(String, usize, usize),
    #[error("type mismatch for operand {1} of {0}")]
    TypeMismatch(String, usize),
    #[error("variable index {0} out of range (environment has {1} variables)")]
    VarOutOfRange(usize, usize),
    #[error("program has no statements")]
    NoStatements,
    #[error("program input type {0:?} is not a storable type")]
    BadInputType(String),
}

/// An operand of a statement: an earlier variable or a named lambda.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
pub enum Operand {
    Var(usize),
    Lambda(LambdaOp),
}

/// One program line: a registry function applied to operands. The function
/// is referenced by registry index so statements stay small and hashable.
#[derive(Clone, PartialEq, Eq, Hash, Debug)]
pub struct Statement {
    pub function: usize,
    pub operands: Vec<Operand>,
}

impl Statement {
    /// Variable indices referenced by this statement.
    pub fn used_vars(&self) -> impl Iterator<Item = usize> + '_ {
        self.operands.iter().filter_map(|o| match o {
            Operand::Var(i) => Some(*i),
            Operand::Lambda(_) => None,
        })
    }
}

/// A complete program: input signature plus ordered statements. Variable
/// `i` is input `i` for `i < input_types.len()`, then statement results in
/// order. The program output is the last statement's result.
#[derive(Clone, PartialEq, Eq, Hash, Debug)]
pub struct Program {
    pub input_types: Vec<TypeTag>,
    pub statements: Vec<Statement>,
}

impl Program {
    pub fn num_vars(&self) -> usize {
        self.input_types.len() + self.statements.len()
    }

    /// Type of every variable in order: inputs, then statement results.
    pub fn var_types(&self, registry: &FunctionRegistry) -> Vec<TypeTag> {
        let mut types = self.input_types.clone();
        for stmt in &self.statements {
            types.push(registry.functions[stmt.function].return_type);
        }
        types
    }

    pub fn output_type(&self, registry: &FunctionRegistry) -> TypeTag {
        registry.functions[self.statements.last().expect("non-empty").function].return_type
    }
}

/// The function and lambda library. Immutable after construction.
pub struct FunctionRegistry {
    pub functions: Vec<FunctionDef>,
    pub lambdas: Vec<LambdaOp>,
    pub extended: bool,
    name_index: HashMap<String, usize>,
    lambda_index: HashMap<&'static str, LambdaOp>,
    fingerprint: String,
}

const BASE_LAMBDAS: [LambdaOp; 19] = [
    LambdaOp::Plus1,
    LambdaOp::Minus1,
    LambdaOp::Mul2,
    LambdaOp::Div2,
    LambdaOp::Neg,
    LambdaOp::Square,
    LambdaOp::Mul3,
    LambdaOp::Div3,
    LambdaOp::Mul4,
    LambdaOp::Div4,
    LambdaOp::Gt0,
    LambdaOp::Lt0,
    LambdaOp::Even,
    LambdaOp::Odd,
    LambdaOp::Add,
    LambdaOp::Sub,
    LambdaOp::Mul,
    LambdaOp::Min,
    LambdaOp::Max,
];

fn first_order(name: &'static str, params: &[TypeTag], ret: TypeTag, op: FuncOp) -> FunctionDef {
    FunctionDef {
        name,
        extern_name: None,
        params: params.iter().map(|t| ParamType::Value(*t)).collect(),
        return_type: ret,
        op,
        category: Category::FirstOrder,
    }
}

fn higher_order(name: &'static str, params: Vec<ParamType>, ret: TypeTag, op: FuncOp) -> FunctionDef {
    FunctionDef {
        name,
        extern_name: None,
        params,
        return_type: ret,
        op,
        category: Category::HigherOrder,
    }
}

impl FunctionRegistry {
    /// Builds the function library. The baseline library is the
    /// DeepCoder/PCCoder standard set; `extended` additionally registers the
    /// functional conditionals IFI/IFL and the `=0` predicate. Extern
    /// functions are appended as first-order functions.
    pub fn new(extended: bool, externs: Vec<ExternFn>) -> Result<Self, DslError> {
        use ParamType::{Lambda, Value as Val};
        use TypeTag::{Int, List};

        let mut functions = vec![
            first_order("HEAD", &[List], Int, FuncOp::Head),
            first_order("LAST", &[List], Int, FuncOp::Last),
            first_order("TAKE", &[Int, List], List, FuncOp::Take),
            first_order("DROP", &[Int, List], List, FuncOp::Drop),
            first_order("ACCESS", &[Int, List], Int, FuncOp::Access),
            first_order("MINIMUM", &[List], Int, FuncOp::Minimum),
            first_order("MAXIMUM", &[List], Int, FuncOp::Maximum),
            first_order("REVERSE", &[List], List, FuncOp::Reverse),
            first_order("SORT", &[List], List, FuncOp::Sort),
            first_order("SUM", &[List], Int, FuncOp::Sum),
            higher_order(
                "MAP",
                vec![Lambda(LambdaType::IntToInt), Val(List)],
                List,
                FuncOp::Map,
            ),
            higher_order(
                "FILTER",
                vec![Lambda(LambdaType::IntToBool), Val(List)],
                List,
                FuncOp::Filter,
            ),
            higher_order(
                "COUNT",
                vec![Lambda(LambdaType::IntToBool), Val(List)],
                Int,
                FuncOp::Count,
            ),
            higher_order(
                "ZIPWITH",
                vec![Lambda(LambdaType::IntIntToInt), Val(List), Val(List)],
                List,
                FuncOp::ZipWith,
            ),
            higher_order(
                "SCANL1",
                vec![Lambda(LambdaType::IntIntToInt), Val(List)],
                List,
                FuncOp::Scanl1,
            ),
        ];

        let mut lambdas: Vec<LambdaOp> = BASE_LAMBDAS.to_vec();
        if extended {
            lambdas.push(LambdaOp::Eq0);
            functions.push(higher_order(
                "IFI",
                vec![Lambda(LambdaType::IntToBool), Val(Int), Val(Int), Val(Int)],
                Int,
                FuncOp::Ifi,
            ));
            functions.push(higher_order(
                "IFL",
                vec![Lambda(LambdaType::IntToBool), Val(Int), Val(List), Val(List)],
                List,
                FuncOp::Ifl,
            ));
        }

        for ext in externs {
            let def = FunctionDef {
                name: "<extern>",
                extern_name: Some(ext.name.clone()),
                params: ext.param_types.iter().map(|t| ParamType::Value(*t)).collect(),
                return_type: ext.return_type,
                op: FuncOp::Extern(Arc::new(ext)),
                category: Category::Extern,
            };
            functions.push(def);
        }

        let mut name_index = HashMap::new();
        for (i, f) in functions.iter().enumerate() {
            if name_index.insert(f.display_name().to_string(), i).is_some() {
                return Err(DslError::DuplicateName(f.display_name().to_string()));
            }
        }
        let lambda_index = lambdas.iter().map(|l| (l.name(), *l)).collect();

        let mut fp = String::new();
        fp.push_str(if extended { "extended" } else { "baseline" });
        for f in &functions {
            fp.push(';');
            fp.push_str(f.display_name());
        }
        for l in &lambdas {
            fp.push(';');
            fp.push_str(l.name());
        }
        let fingerprint = format!("{:016x}", fnv1a(fp.as_bytes()));

        Ok(FunctionRegistry {
            functions,
            lambdas,
            extended,
            name_index,
            lambda_index,
            fingerprint,
        })
    }

    pub fn baseline() -> Self {
        Self::new(false, Vec::new()).expect("builtin registry")
    }

    pub fn extended() -> Self {
        Self::new(true, Vec::new()).expect("builtin registry")
    }

    pub fn function_id(&self, name: &str) -> Option<usize> {
        self.name_index.get(name).copied()
    }

    pub fn function(&self, id: usize) -> &FunctionDef {
        &self.functions[id]
    }

    pub fn lambda_by_name(&self, name: &str) -> Option<LambdaOp> {
        self.lambda_index.get(name).copied()
    }

    /// Lambdas of the given type, in registry order.
    pub fn lambdas_of(&self, ty: LambdaType) -> impl Iterator<Item = LambdaOp> + '_ {
        self.lambdas.iter().copied().filter(move |l| l.lambda_type() == ty)
    }

    /// Stable identifier of the library composition. Datasets and models
    /// record it; mixing artifacts from different registries is an error.
    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Validates a statement against an environment of variable types.
pub fn validate_statement(
    stmt: &Statement,
    env_types: &[TypeTag],
    registry: &FunctionRegistry,
) -> Result<(), DslError> {
    let func = registry
        .functions
        .get(stmt.function)
        .ok_or_else(|| DslError::UnknownFunction(format!("#{}", stmt.function)))?;
    if func.params.len() != stmt.operands.len() {
        return Err(DslError::ArityMismatch(
            func.display_name().to_string(),
            func.params.len(),
            stmt.operands.len(),
        ));
    }
    for (i, (param, operand)) in func.params.iter().zip(&stmt.operands).enumerate() {
        match (param, operand) {
            (ParamType::Value(want), Operand::Var(idx)) => {
                if *idx >= env_types.len() {
                    return Err(DslError::VarOutOfRange(*idx, env_types.len()));
                }
                if env_types[*idx] != *want {
                    return Err(DslError::TypeMismatch(func.display_name().to_string(), i));
                }
            }
            (ParamType::Lambda(want), Operand::Lambda(op)) => {
                if op.lambda_type() != *want || !registry.lambdas.contains(op) {
                    return Err(DslError::TypeMismatch(func.display_name().to_string(), i));
                }
            }
            _ => return Err(DslError::TypeMismatch(func.display_name().to_string(), i)),
        }
    }
    Ok(())
}

/// Validates a whole program under the sequential variable environment.
pub fn validate_program(p: &Program, registry: &FunctionRegistry) -> Result<(), DslError> {
    if p.statements.is_empty() {
        return Err(DslError::NoStatements);
    }
    let mut env = p.input_types.clone();
    for stmt in &p.statements {
        validate_statement(stmt, &env, registry)?;
        env.push(registry.functions[stmt.function].return_type);
    }
    Ok(())
}

/// Parses the textual program format: segments split on `|`, the first
/// being comma-separated input types, each later one a function name
/// followed by its operands (decimal variable indices or lambda names).
pub fn parse_program(text: &str, registry: &FunctionRegistry) -> Result<Program, DslError> {
    if text.is_empty() {
        return Err(DslError::EmptyProgram);
    }
    let mut segments = text.split('|');
    let header = segments.next().ok_or(DslError::EmptyProgram)?;
    let mut input_types = Vec::new();
    for part in header.split(',') {
        match part {
            "LIST" => input_types.push(TypeTag::List),
            "INT" => input_types.push(TypeTag::Int),
            other => {
                return Err(if matches!(other, "BOOL" | "FUNC") {
                    DslError::BadInputType(other.to_string())
                } else {
                    DslError::UnknownType(other.to_string())
                })
            }
        }
    }

    let mut statements = Vec::new();
    let mut env = input_types.clone();
    for seg in segments {
        let mut parts = seg.split(',');
        let fname = parts.next().unwrap_or("");
        let function = registry
            .function_id(fname)
            .ok_or_else(|| DslError::UnknownFunction(fname.to_string()))?;
        let func = &registry.functions[function];
        let mut operands = Vec::new();
        for tok in parts {
            // lambda names first: "+1" is a lambda, not the index 1
            let operand = if let Some(l) = registry.lambda_by_name(tok) {
                Operand::Lambda(l)
            } else if !tok.is_empty() && tok.bytes().all(|b| b.is_ascii_digit()) {
                Operand::Var(tok.parse().expect("digits"))
            } else {
                return Err(DslError::UnknownOperand(
                    tok.to_string(),
                    func.display_name().to_string(),
                ));
            };
            operands.push(operand);
        }
        let stmt = Statement { function, operands };
        validate_statement(&stmt, &env, registry)?;
        env.push(func.return_type);
        statements.push(stmt);
    }
    if statements.is_empty() {
        return Err(DslError::NoStatements);
    }
    Ok(Program {
        input_types,
        statements,
    })
}

/// Canonical text of a program; inverse of [`parse_program`].
pub fn print_program(p: &Program, registry: &FunctionRegistry) -> String {
    let mut out = String::new();
    for (i, t) in p.input_types.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        out.push_str(&t.to_string());
    }
    for stmt in &p.statements {
        out.push('|');
        out.push_str(registry.functions[stmt.function].display_name());
        for op in &stmt.operands {
            out.push(',');
            match op {
                Operand::Var(i) => out.push_str(&i.to_string()),
                Operand::Lambda(l) => out.push_str(l.name()),
            }
        }
    }
    out
}

/// Enumerates every well-typed statement over the environment: each legal
/// function x operand/lambda combination, in deterministic order (registry
/// order, then operand slots lexicographic).
pub fn enumerate_statements(env_types: &[TypeTag], registry: &FunctionRegistry) -> Vec<Statement> {
    let mut out = Vec::new();
    for (fid, func) in registry.functions.iter().enumerate() {
        let slot_choices: Vec<Vec<Operand>> = func
            .params
            .iter()
            .map(|p| match p {
                ParamType::Value(t) => env_types
                    .iter()
                    .enumerate()
                    .filter(|(_, et)| *et == t)
                    .map(|(i, _)| Operand::Var(i))
                    .collect(),
                ParamType::Lambda(lt) => {
                    registry.lambdas_of(*lt).map(Operand::Lambda).collect()
                }
            })
            .collect();
        if slot_choices.iter().any(|c| c.is_empty()) {
            continue;
        }
        let mut indices = vec![0usize; slot_choices.len()];
        loop {
            out.push(Statement {
                function: fid,
                operands: indices
                    .iter()
                    .zip(&slot_choices)
                    .map(|(&i, c)| c[i])
                    .collect(),
            });
            let mut k = slot_choices.len();
            loop {
                if k == 0 {
                    break;
                }
                k -= 1;
                indices[k] += 1;
                if indices[k] < slot_choices[k].len() {
                    break;
                }
                indices[k] = 0;
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

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn baseline_excludes_extensions() {
        let reg = FunctionRegistry::baseline();
        assert!(reg.function_id("IFI").is_none());
        assert!(reg.function_id("IFL").is_none());
        assert!(reg.lambda_by_name("=0").is_none());
        assert_eq!(reg.functions.len(), 15);
    }

    #[test]
    fn extended_is_strict_superset() {
        let base = FunctionRegistry::baseline();
        let ext = FunctionRegistry::extended();
        for f in &base.functions {
            assert!(ext.function_id(f.display_name()).is_some());
        }
        for l in &base.lambdas {
            assert!(ext.lambda_by_name(l.name()).is_some());
        }
        assert!(ext.function_id("IFI").is_some());
        assert!(ext.function_id("IFL").is_some());
        assert!(ext.lambda_by_name("=0").is_some());
        let ifi = &ext.functions[ext.function_id("IFI").unwrap()];
        assert_eq!(
            ifi.params,
            vec![
                ParamType::Lambda(LambdaType::IntToBool),
                ParamType::Value(TypeTag::Int),
                ParamType::Value(TypeTag::Int),
                ParamType::Value(TypeTag::Int)
            ]
        );
        assert_eq!(ifi.return_type, TypeTag::Int);
    }

    #[test]
    fn duplicate_extern_name_rejected() {
        let ext = ExternFn {
            name: "HEAD".into(),
            param_types: vec![TypeTag::List],
            return_type: TypeTag::Int,
            eval: Box::new(|_| Value::Null),
            error_value: None,
        };
        assert_eq!(
            FunctionRegistry::new(false, vec![ext]).err(),
            Some(DslError::DuplicateName("HEAD".into()))
        );
    }

    #[test]
    fn parse_mnist_result_string() {
        let reg = crate::extern_digits::registry_with_mnist();
        let p = parse_program("LIST|MNIST,0", &reg).unwrap();
        assert_eq!(p.input_types, vec![TypeTag::List]);
        assert_eq!(p.statements.len(), 1);
        assert_eq!(
            reg.functions[p.statements[0].function].display_name(),
            "MNIST"
        );
        assert_eq!(p.statements[0].operands, vec![Operand::Var(0)]);
        assert_eq!(print_program(&p, &reg), "LIST|MNIST,0");
    }

    #[test]
    fn parse_rejects_type_errors() {
        let reg = FunctionRegistry::extended();
        // operand 0 is LIST where IFL requires INT
        assert!(matches!(
            parse_program("LIST|IFL,>0,0,0,0", &reg),
            Err(DslError::TypeMismatch(_, _))
        ));
        assert!(matches!(
            parse_program("LIST|MAP,+1,1", &reg),
            Err(DslError::VarOutOfRange(1, 1))
        ));
        assert!(matches!(
            parse_program("LIST|FROB,0", &reg),
            Err(DslError::UnknownFunction(_))
        ));
        assert!(matches!(
            parse_program("LIST|MAP,+1", &reg),
            Err(DslError::ArityMismatch(_, 2, 1))
        ));
        assert!(matches!(
            parse_program("", &reg),
            Err(DslError::EmptyProgram)
        ));
    }

    #[test]
    fn enumerate_respects_environment() {
        let reg = FunctionRegistry::baseline();
        // single INT variable: nothing consumes a bare INT in the baseline
        assert!(enumerate_statements(&[TypeTag::Int], &reg).is_empty());

        let stmts = enumerate_statements(&[TypeTag::List], &reg);
        // 7 unary first-order + 10 MAP + 4 FILTER + 4 COUNT + 5 ZIPWITH + 5 SCANL1
        assert_eq!(stmts.len(), 35);
        for s in &stmts {
            validate_statement(s, &[TypeTag::List], &reg).unwrap();
        }
    }

    #[test]
    fn enumerate_with_only_mnist_needs_a_list() {
        let reg = FunctionRegistry::new(
            false,
            vec![crate::extern_digits::mnist_extern()],
        )
        .unwrap();
        let only_mnist: Vec<_> = enumerate_statements(&[TypeTag::Int], &reg)
            .into_iter()
            .filter(|s| reg.functions[s.function].category == Category::Extern)
            .collect();
        assert!(only_mnist.is_empty());
        let with_list = enumerate_statements(&[TypeTag::List], &reg);
        assert_eq!(
            with_list
                .iter()
                .filter(|s| reg.functions[s.function].category == Category::Extern)
                .count(),
            1
        );
    }

    #[test]
    fn fingerprints_distinguish_registries() {
        let a = FunctionRegistry::baseline();
        let b = FunctionRegistry::extended();
        let c = crate::extern_digits::registry_with_mnist();
        assert_ne!(a.fingerprint(), b.fingerprint());
        assert_ne!(b.fingerprint(), c.fingerprint());
        assert_eq!(
            FunctionRegistry::baseline().fingerprint(),
            a.fingerprint()
        );
    }
}
