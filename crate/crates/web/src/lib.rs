//! Browser bindings for the principal word vector demo page.
//!
//! Each exported function takes the corpus as plain text (one sentence per
//! line) and returns a JSON string for the page to plot. The `*_json`
//! functions hold the logic and are usable natively.

use std::sync::Arc;

use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

use pwvec::corpus::{Corpus, NormalizationRules, Vocabulary};
use pwvec::eval;
use pwvec::gpca::{self, contextual_matrix, FeatureSpec, GpcaParams, TransformChoice};
use pwvec::transform::{estimate_entropy, sample_columns, AnnealParams, EntropySample, TransformSpec};

fn corpus_from(text: &str) -> pwvec::Result<Corpus> {
    let rules = NormalizationRules {
        lowercase: true,
        ..Default::default()
    };
    let vocab = Vocabulary::build(text.split_ascii_whitespace(), &rules)?;
    Corpus::from_raw_str(text, Arc::new(vocab), &rules)
}

fn window_spec(window: u32) -> pwvec::Result<FeatureSpec> {
    format!("word_form:window={window}:symmetric").parse()
}

fn params(k: usize, transform: &str, seed: u64) -> pwvec::Result<GpcaParams> {
    let mut p = GpcaParams::new(k);
    p.transform = match transform {
        "tune" => TransformChoice::TuneSingle,
        "pmi" => TransformChoice::Pmi,
        other => TransformChoice::Fixed(other.parse()?),
    };
    p.sketch.seed = seed;
    p.anneal.seed = seed;
    p.anneal.iterations = 60;
    Ok(p)
}

/// Word vectors of the `top` most frequent non-special words, as
/// `{tokens, counts, x, y, k, transform}` with `x`, `y` the first two
/// dimensions.
pub fn embed_json(text: &str, k: usize, window: u32, transform: &str, top: usize) -> pwvec::Result<Value> {
    let corpus = corpus_from(text)?;
    let emb = gpca::principal_word_vectors(&corpus, &[window_spec(window)?], &params(k.max(2), transform, 7)?)?;
    let vocab = corpus.vocabulary();
    let ids: Vec<usize> = (0..vocab.len())
        .filter(|&j| !Vocabulary::is_special(j as u32) && vocab.count(j as u32) > 0)
        .take(top)
        .collect();
    let col = |c: usize| -> Vec<f64> {
        ids.iter()
            .map(|&j| if c < emb.k() { emb.vectors[(j, c)] } else { 0.0 })
            .collect()
    };
    Ok(json!({
        "tokens": ids.iter().map(|&j| vocab.token(j as u32)).collect::<Vec<_>>(),
        "counts": ids.iter().map(|&j| vocab.count(j as u32)).collect::<Vec<_>>(),
        "x": col(0),
        "y": col(1),
        "k": emb.k(),
        "transform": emb.transform.map_or_else(|| "pmi".to_string(), |t| t.to_string()),
    }))
}

/// Covariance spectrum of the vectors with cumulative TV and LGV series.
pub fn spectrum_json(text: &str, k: usize, window: u32, transform: &str) -> pwvec::Result<Value> {
    let corpus = corpus_from(text)?;
    let emb = gpca::principal_word_vectors(&corpus, &[window_spec(window)?], &params(k.max(1), transform, 7)?)?;
    let ev: Vec<f64> = eval::covariance_eigenvalues(&emb.vectors)?
        .into_iter()
        .map(|l| l.max(0.0))
        .collect();
    let report = eval::eigen_report(&ev)?;
    Ok(json!({
        "eigenvalues": report.eigenvalues,
        "tv": report.tv,
        "lev": report.lev,
        "lgv": report.lgv,
        "log_generalized_variance": eval::log_generalized_variance(&emb.vectors)?,
    }))
}

/// Entropy of the power-transformed contextual vectors on a grid of powers
/// `steps` apart, for both raw counts and frequency-weighted counts.
pub fn entropy_curve_json(text: &str, window: u32, steps: usize) -> pwvec::Result<Value> {
    let corpus = corpus_from(text)?;
    let (m, _) = contextual_matrix(&corpus, &[window_spec(window)?])?;
    let anneal = AnnealParams {
        seed: 7,
        ..Default::default()
    };
    let cols = sample_columns(m.ncols(), anneal.sample_words, anneal.seed);
    let weighted = m.scale(
        &gpca::build_metric(&m, gpca::MetricKind::Iff),
        &gpca::build_weight(&m, gpca::WeightKind::Iwf),
    )?;
    let steps = steps.max(2);
    let powers: Vec<f64> = (1..=steps).map(|i| i as f64 / steps as f64).collect();
    let curve = |mat: &pwvec::coocmat::SparseMatrix| -> pwvec::Result<Vec<f64>> {
        let sample = EntropySample::from_columns(mat, &cols);
        powers
            .iter()
            .map(|&p| estimate_entropy(&sample.transformed(&TransformSpec::Power(p))?, &anneal))
            .collect()
    };
    let raw = curve(&m)?;
    let weighted = curve(&weighted)?;
    Ok(json!({ "powers": powers, "raw": raw, "weighted": weighted }))
}

fn to_js(r: pwvec::Result<Value>) -> Result<String, JsValue> {
    r.map(|v| v.to_string()).map_err(|e| JsValue::from_str(&e.to_string()))
}

/// Scatter data for the first two dimensions of the word vectors.
#[wasm_bindgen]
pub fn embed(text: &str, k: usize, window: u32, transform: &str, top: usize) -> Result<String, JsValue> {
    to_js(embed_json(text, k, window, transform, top))
}

#[wasm_bindgen]
pub fn spectrum(text: &str, k: usize, window: u32, transform: &str) -> Result<String, JsValue> {
    to_js(spectrum_json(text, k, window, transform))
}

#[wasm_bindgen]
pub fn entropy_curve(text: &str, window: u32, steps: usize) -> Result<String, JsValue> {
    to_js(entropy_curve_json(text, window, steps))
}
