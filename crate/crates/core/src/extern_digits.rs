//! The extern-function demonstration: an 8x8 binary-image digit classifier
//! exposed to the DSL as `MNIST: LIST -> INT`.
//!
//! Images are lists of 8 integers in [0, 255]; integer i encodes row i's
//! eight binary pixels with bit k = column k. The classifier returns the
//! digit 0..9, or 10 as the error value for malformed inputs. The training
//! records (the standard 1797-image 8x8 digits set, binarized) ship with
//! the crate so no runtime fetch is needed.

use std::sync::Arc;

use crate::dsl::{ExternFn, FunctionRegistry, TypeTag, Value};
use crate::interpreter::IOPair;

/// Classifier output reserved for malformed inputs.
pub const ERROR_DIGIT: i64 = 10;

const DATA: &str = include_str!("../data/digits8x8.txt");

/// Threshold a 0..16 grayscale level to a binary pixel.
pub fn binarize(v: i64) -> i64 {
    if v < 8 {
        0
    } else {
        1
    }
}

/// Packs 8 binary pixels into the row byte: sum of bits[i] * 2^i.
pub fn row_to_byte(bits: &[i64; 8]) -> i64 {
    bits.iter().enumerate().map(|(i, &b)| b << i).sum()
}

/// One byte-encoded training record.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DigitRecord {
    pub rows: [i64; 8],
    pub label: u8,
}

/// The bundled training set, parsed from the in-crate data file.
pub fn load_dataset() -> Vec<DigitRecord> {
    DATA.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|line| {
            let nums: Vec<i64> = line
                .split_whitespace()
                .map(|t| t.parse().expect("digit data file is well-formed"))
                .collect();
            assert_eq!(nums.len(), 9, "digit data file is well-formed");
            let mut rows = [0i64; 8];
            rows.copy_from_slice(&nums[..8]);
            DigitRecord {
                rows,
                label: nums[8] as u8,
            }
        })
        .collect()
}

/// Nearest-neighbor digit classifier over byte-encoded rows, with Hamming
/// distance on the 64 underlying pixels. Ties break toward the lowest
/// record index, so classification is fully deterministic.
pub struct Classifier {
    records: Vec<DigitRecord>,
}

fn hamming(a: &[i64; 8], b: &[i64; 8]) -> u32 {
    a.iter()
        .zip(b)
        .map(|(x, y)| ((x ^ y) as u64).count_ones())
        .sum()
}

impl Classifier {
    pub fn classify(&self, rows: &[i64; 8]) -> u8 {
        let mut best = (u32::MAX, 0u8);
        for rec in &self.records {
            let d = hamming(rows, &rec.rows);
            if d < best.0 {
                best = (d, rec.label);
            }
        }
        best.1
    }
}

/// Fits the classifier. The seed is part of the contract for classifiers
/// with randomized training; the nearest-neighbor rule ignores it.
pub fn train_classifier(data: Vec<DigitRecord>, _seed: u64) -> Classifier {
    assert!(!data.is_empty(), "empty digit dataset");
    Classifier { records: data }
}

/// The MNIST extern evaluation rule: total over LIST, returning the error
/// digit 10 for wrong length or out-of-range bytes.
pub fn mnist_value(classifier: &Classifier, x: &Value) -> Value {
    let xs = match x {
        Value::List(xs) => xs,
        _ => return Value::Null,
    };
    if xs.len() != 8 {
        return Value::Int(ERROR_DIGIT);
    }
    if xs.iter().any(|&b| !(0..=255).contains(&b)) {
        return Value::Int(ERROR_DIGIT);
    }
    let mut rows = [0i64; 8];
    rows.copy_from_slice(xs);
    Value::Int(classifier.classify(&rows) as i64)
}

/// Builds the `MNIST` extern over the bundled dataset.
pub fn mnist_extern() -> ExternFn {
    let classifier = Arc::new(train_classifier(load_dataset(), 0));
    ExternFn {
        name: "MNIST".to_string(),
        param_types: vec![TypeTag::List],
        return_type: TypeTag::Int,
        eval: Box::new(move |args| mnist_value(&classifier, &args[0])),
        error_value: Some(Value::Int(ERROR_DIGIT)),
    }
}

/// Extended registry with the MNIST extern registered.
pub fn registry_with_mnist() -> FunctionRegistry {
    FunctionRegistry::new(true, vec![mnist_extern()]).expect("MNIST registry")
}

/// Known extern functions by name, for rebuilding registries from dataset
/// and model headers.
pub fn extern_by_name(name: &str) -> Option<ExternFn> {
    match name {
        "MNIST" => Some(mnist_extern()),
        _ => None,
    }
}

/// Rebuilds a registry from the (dsl flavor, extern names) pair recorded in
/// dataset and model files.
pub fn registry_from_spec(dsl: &str, externs: &[String]) -> Result<FunctionRegistry, String> {
    let extended = match dsl {
        "extended" => true,
        "baseline" => false,
        other => return Err(format!("unknown dsl flavor {other:?}")),
    };
    let fns = externs
        .iter()
        .map(|n| extern_by_name(n).ok_or_else(|| format!("unknown extern {n:?}")))
        .collect::<Result<Vec<_>, _>>()?;
    FunctionRegistry::new(extended, fns).map_err(|e| e.to_string())
}

/// The ten label-to-image correspondences used as the end-to-end synthesis
/// problem for the extern demonstration.
pub fn paper_test_examples() -> Vec<IOPair> {
    let rows: [([i64; 8], i64); 10] = [
        ([24, 60, 100, 100, 100, 36, 52, 24], 0),
        ([24, 56, 24, 28, 24, 24, 24, 56], 1),
        ([48, 56, 60, 48, 28, 14, 60, 112], 2),
        ([24, 22, 24, 24, 48, 96, 100, 56], 3),
        ([16, 16, 8, 104, 44, 60, 48, 16], 4),
        ([12, 60, 60, 28, 32, 96, 48, 60], 5),
        ([24, 24, 12, 12, 12, 60, 120, 56], 6),
        ([120, 96, 48, 60, 28, 8, 12, 4], 7),
        ([28, 60, 44, 56, 24, 60, 100, 60], 8),
        ([12, 60, 60, 52, 60, 96, 48, 28], 9),
    ];
    rows.iter()
        .map(|(img, label)| IOPair {
            inputs: vec![Value::List(img.to_vec())],
            output: Value::Int(*label),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binarize_threshold() {
        assert_eq!(binarize(7), 0);
        assert_eq!(binarize(8), 1);
        assert_eq!(binarize(0), 0);
        assert_eq!(binarize(16), 1);
    }

    /// Oracle: evaluate the row encoding directly as a bit sum, then pin a
    /// few results.
    #[test]
    fn row_byte_encoding() {
        fn oracle(bits: &[i64; 8]) -> i64 {
            let mut r = 0;
            for i in 0..8 {
                r += bits[i] * (1 << i);
            }
            r
        }
        let cases = [
            ([0, 0, 0, 1, 1, 0, 0, 0], 24),
            ([0, 0, 0, 0, 0, 0, 0, 0], 0),
            ([1, 1, 1, 1, 1, 1, 1, 1], 255),
            ([1, 0, 0, 0, 0, 0, 0, 0], 1),
        ];
        for (bits, want) in cases {
            assert_eq!(oracle(&bits), want);
            assert_eq!(row_to_byte(&bits), want);
        }
    }

    #[test]
    fn dataset_is_well_formed() {
        let data = load_dataset();
        assert_eq!(data.len(), 1797);
        for rec in &data {
            assert!(rec.rows.iter().all(|&b| (0..=255).contains(&b)));
            assert!(rec.label <= 9);
        }
    }

    #[test]
    fn paper_rows_classify_to_their_labels() {
        let clf = train_classifier(load_dataset(), 0);
        for (i, ex) in paper_test_examples().iter().enumerate() {
            let got = mnist_value(&clf, &ex.inputs[0]);
            assert_eq!(got, ex.output, "paper row {i}");
        }
    }

    #[test]
    fn self_accuracy_at_least_95_percent() {
        let data = load_dataset();
        let clf = train_classifier(data.clone(), 0);
        let correct = data
            .iter()
            .filter(|rec| clf.classify(&rec.rows) == rec.label)
            .count();
        assert!(correct as f64 >= 0.95 * data.len() as f64);
    }

    #[test]
    fn trainings_agree_across_seeds() {
        let data = load_dataset();
        let a = train_classifier(data.clone(), 1);
        let b = train_classifier(data.clone(), 2);
        for rec in data.iter().step_by(7) {
            assert_eq!(a.classify(&rec.rows), b.classify(&rec.rows));
        }
    }

    #[test]
    fn error_digit_cases() {
        let clf = train_classifier(load_dataset(), 0);
        assert_eq!(
            mnist_value(&clf, &Value::List(vec![0; 7])),
            Value::Int(ERROR_DIGIT)
        );
        assert_eq!(
            mnist_value(&clf, &Value::List(vec![300, 0, 0, 0, 0, 0, 0, 0])),
            Value::Int(ERROR_DIGIT)
        );
        assert_eq!(
            mnist_value(&clf, &Value::List(vec![-1, 0, 0, 0, 0, 0, 0, 0])),
            Value::Int(ERROR_DIGIT)
        );
        // valid 8-byte rows always land in [0, 10]
        let out = mnist_value(&clf, &Value::List(vec![24, 56, 24, 28, 24, 24, 24, 56]));
        match out {
            Value::Int(d) => assert!((0..=10).contains(&d)),
            other => panic!("unexpected {other:?}"),
        }
    }
}
