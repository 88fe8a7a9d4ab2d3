#![allow(dead_code)]

use std::sync::Arc;

use nalgebra::DMatrix;
use proptest::prelude::*;
use pwvec::coocmat::SparseMatrix;
use pwvec::corpus::{Corpus, NormalizationRules, Vocabulary};
use pwvec::features::FeatureSpace;

pub fn raw_corpus(text: &str) -> Corpus {
    let rules = NormalizationRules::default();
    let vocab = Vocabulary::build(text.split_ascii_whitespace(), &rules).unwrap();
    Corpus::from_raw_str(text, Arc::new(vocab), &rules).unwrap()
}

/// Random text over a six-word alphabet, one sentence per line.
pub fn corpus_text() -> impl Strategy<Value = String> {
    let word = prop::sample::select(vec!["a", "b", "c", "d", "e", "f"]);
    let sentence = prop::collection::vec(word, 1..9).prop_map(|w| w.join(" "));
    prop::collection::vec(sentence, 1..7).prop_map(|s| s.join("\n"))
}

/// Re-indexes the rows of a word-form count matrix by vocabulary id, giving
/// a square word-by-word matrix.
pub fn word_by_word(corpus: &Corpus, space: &FeatureSpace, m: &SparseMatrix) -> DMatrix<f64> {
    let vocab = corpus.vocabulary();
    let n = vocab.len();
    let mut out = DMatrix::zeros(n, n);
    for (i, j, v) in m.iter() {
        let row = vocab.id(space.symbol(i as u32)).unwrap() as usize;
        out[(row, j)] = v;
    }
    out
}

pub fn dense_strategy(rows: usize, cols: usize) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(-3.0f64..3.0, rows * cols).prop_map(move |v| DMatrix::from_vec(rows, cols, v))
}

/// Absolute values of the corresponding columns agree after fixing each
/// column's sign.
pub fn max_diff_up_to_sign(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    assert_eq!(a.shape(), b.shape());
    let mut worst: f64 = 0.0;
    for c in 0..a.ncols() {
        let plus = (a.column(c) - b.column(c)).amax();
        let minus = (a.column(c) + b.column(c)).amax();
        worst = worst.max(plus.min(minus));
    }
    worst
}
