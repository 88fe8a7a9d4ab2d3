//! Intrinsic metrics for comparing embeddings.

use std::collections::HashMap;
use std::io::Write;
use std::sync::Arc;

use log::warn;
use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::coocmat::SparseMatrix;
use crate::corpus::{read_utf8, Corpus, NormalizationRules, Vocabulary, UNKNOWN};
use crate::gpca::Embeddings;
use crate::{par, Error, Result};

/// Eigenvalues below this are treated as this value before taking logs.
pub const EIGEN_FLOOR: f64 = 1e-12;

/// Generalized eigenvalues at or below this do not count towards the FDR.
pub const FDR_THRESHOLD: f64 = 1e-10;

/// Sample covariance (divisor `n − 1`) of the rows of `x`.
pub fn covariance(x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = x.nrows();
    if n <= 1 {
        return Err(Error::NotEnoughData(format!("covariance needs at least 2 rows, got {n}")));
    }
    let mean = x.row_mean();
    let mut c = x.clone();
    for mut row in c.row_iter_mut() {
        row -= &mean;
    }
    Ok(c.tr_mul(&c) / (n as f64 - 1.0))
}

/// Eigenvalues of a symmetric matrix, descending.
pub fn symmetric_eigenvalues(a: DMatrix<f64>) -> Vec<f64> {
    let mut ev: Vec<f64> = SymmetricEigen::new(a).eigenvalues.iter().copied().collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    ev
}

/// Eigenvalues of the sample covariance of the rows of `x`, descending.
pub fn covariance_eigenvalues(x: &DMatrix<f64>) -> Result<Vec<f64>> {
    Ok(symmetric_eigenvalues(covariance(x)?))
}

/// `Σ log λ_i` over the covariance eigenvalues of the row vectors.
pub fn log_generalized_variance(vectors: &DMatrix<f64>) -> Result<f64> {
    let ev = covariance_eigenvalues(vectors)?;
    let floored = ev.iter().filter(|&&l| l < EIGEN_FLOOR).count();
    if floored > 0 {
        warn!("{floored} covariance eigenvalues floored at {EIGEN_FLOOR:e}");
    }
    Ok(ev.iter().map(|&l| l.max(EIGEN_FLOOR).ln()).sum())
}

/// Feature vectors with class labels.
#[derive(Clone, Debug)]
pub struct LabeledWindowSet {
    /// One row per labelled token.
    pub rows: DMatrix<f64>,
    /// Class index per row.
    pub labels: Vec<u32>,
    /// Class names indexed by label.
    pub classes: Vec<String>,
}

impl LabeledWindowSet {
    pub fn new(rows: DMatrix<f64>, labels: Vec<u32>, classes: Vec<String>) -> Result<Self> {
        if rows.nrows() != labels.len() {
            return Err(Error::Shape(format!(
                "{} rows with {} labels",
                rows.nrows(),
                labels.len()
            )));
        }
        if let Some(&l) = labels.iter().find(|&&l| l as usize >= classes.len()) {
            return Err(Error::Shape(format!("label {l} without a class name")));
        }
        Ok(LabeledWindowSet { rows, labels, classes })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.rows.ncols()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes.len()];
        for &l in &self.labels {
            counts[l as usize] += 1;
        }
        counts
    }

    /// Relative class frequencies.
    pub fn priors(&self) -> Vec<f64> {
        let n = self.len() as f64;
        self.class_counts().iter().map(|&c| c as f64 / n).collect()
    }
}

/// Fisher discriminant ratio: the sum of the generalized eigenvalues of
/// between-class against within-class scatter.
///
/// Classes with fewer than two rows are left out with a warning.
pub fn fdr(set: &LabeledWindowSet) -> Result<f64> {
    let counts = set.class_counts();
    let kept: Vec<usize> = (0..counts.len()).filter(|&c| counts[c] >= 2).collect();
    let dropped = counts.iter().filter(|&&c| c == 1).count();
    if dropped > 0 {
        warn!("{dropped} classes with a single row left out of the FDR");
    }
    if kept.len() < 2 {
        return Err(Error::TooFewClasses);
    }
    let d = set.dim();
    let total: usize = kept.iter().map(|&c| counts[c]).sum();

    let mut members = vec![Vec::new(); counts.len()];
    for (r, &l) in set.labels.iter().enumerate() {
        members[l as usize].push(r);
    }
    // per kept class: (prior, mean, ML covariance)
    let stats = par::map_indexed(kept.len(), |c| {
        let rows = &members[kept[c]];
        let ni = rows.len() as f64;
        let mut mean = DVector::zeros(d);
        for &r in rows {
            mean += set.rows.row(r).transpose();
        }
        mean /= ni;
        let centred = DMatrix::from_fn(rows.len(), d, |a, j| set.rows[(rows[a], j)] - mean[j]);
        let cov = centred.tr_mul(&centred) / ni;
        (ni / total as f64, mean, cov)
    });

    let mut sw = DMatrix::zeros(d, d);
    let mut mu = DVector::zeros(d);
    for (p, mean, cov) in &stats {
        sw += cov * *p;
        mu += mean * *p;
    }
    let mut sb = DMatrix::zeros(d, d);
    for (p, mean, _) in &stats {
        let diff = mean - &mu;
        sb += &diff * diff.transpose() * *p;
    }

    let eig = SymmetricEigen::new(sw.clone());
    let max = eig.eigenvalues.max();
    if !(max > 0.0) {
        return Err(Error::SingularScatter);
    }
    let mut lambdas = eig.eigenvalues.clone();
    if eig.eigenvalues.min() <= FDR_THRESHOLD * max {
        let ridge = 1e-8 * sw.trace() / d as f64;
        lambdas.add_scalar_mut(ridge);
        if lambdas.min() <= 0.0 {
            return Err(Error::SingularScatter);
        }
    }
    // W = V Λ^{-1/2}, so WᵀΣ_W W = I and the problem becomes WᵀΣ_B W
    let mut w = eig.eigenvectors.clone();
    for (j, mut col) in w.column_iter_mut().enumerate() {
        col /= lambdas[j].sqrt();
    }
    let whitened = w.transpose() * sb * &w;
    let sym = (&whitened + whitened.transpose()) * 0.5;
    Ok(symmetric_eigenvalues(sym)
        .into_iter()
        .filter(|&l| l > FDR_THRESHOLD)
        .sum())
}

/// Row indices into `emb` for each vocabulary id, by token string. Words
/// missing from the embeddings use the unknown-word row when present.
fn embedding_rows(vocab: &Vocabulary, emb: &Embeddings) -> Vec<Option<usize>> {
    let index: HashMap<&str, usize> = emb.tokens.iter().enumerate().map(|(i, t)| (t.as_str(), i)).collect();
    let unknown = index.get(UNKNOWN).copied();
    vocab
        .tokens()
        .iter()
        .map(|t| index.get(t.as_str()).copied().or(unknown))
        .collect()
}

/// Concatenates the vectors of the `2·half_window + 1` words centred on each
/// token; positions outside the sentence are zero. Rows are labelled by the
/// token's tag.
pub fn windowed_representation(corpus: &Corpus, emb: &Embeddings, half_window: usize) -> Result<LabeledWindowSet> {
    if !corpus.has_pos() {
        return Err(Error::MissingPos("windowed representation needs tagged tokens"));
    }
    let k = emb.k();
    let width = 2 * half_window + 1;
    let lookup = embedding_rows(corpus.vocabulary(), emb);
    let n = corpus.len();
    let mut rows = DMatrix::zeros(n, width * k);
    let mut labels = Vec::with_capacity(n);
    for t in 0..n {
        let span = corpus.sentence_span(t);
        for slot in 0..width {
            let pos = t as isize + slot as isize - half_window as isize;
            if pos < span.start as isize || pos >= span.end as isize {
                continue;
            }
            if let Some(r) = lookup[corpus.token(pos as usize).word as usize] {
                for c in 0..k {
                    rows[(t, slot * k + c)] = emb.vectors[(r, c)];
                }
            }
        }
        labels.push(corpus.token(t).pos.expect("tagged corpus"));
    }
    LabeledWindowSet::new(rows, labels, corpus.tags().to_vec())
}

/// Strips a `B-`/`I-`/`E-`/`S-` chunk prefix: `B-PER` → `PER`, `O` → `O`.
pub fn entity_class(tag: &str) -> &str {
    match tag.split_once('-') {
        Some((p, rest)) if matches!(p, "B" | "I" | "E" | "S") && !rest.is_empty() => rest,
        _ => tag,
    }
}

/// Reads CoNLL-2003 style columns (token first, entity tag last, blank line
/// between sentences) into a corpus whose tags are entity classes.
pub fn read_conll2003(text: &str, name: &str, vocab: Arc<Vocabulary>, rules: &NormalizationRules) -> Result<Corpus> {
    let mut builder = Corpus::builder(vocab, rules.clone());
    let mut words: Vec<&str> = Vec::new();
    let mut tags: Vec<&str> = Vec::new();
    let mut flush = |words: &mut Vec<&str>, tags: &mut Vec<&str>| {
        builder.push_sentence(words, Some(tags), None);
        words.clear();
        tags.clear();
    };
    for (i, line) in text.lines().enumerate() {
        let cols: Vec<&str> = line.split_whitespace().collect();
        if cols.is_empty() {
            flush(&mut words, &mut tags);
            continue;
        }
        if cols[0] == "-DOCSTART-" {
            continue;
        }
        if cols.len() < 2 {
            return Err(Error::format(name, i + 1, "expected a token and a tag"));
        }
        words.push(cols[0]);
        tags.push(entity_class(cols[cols.len() - 1]));
    }
    flush(&mut words, &mut tags);
    builder.finish()
}

pub fn load_conll2003(path: &std::path::Path, vocab: Arc<Vocabulary>, rules: &NormalizationRules) -> Result<Corpus> {
    let text = read_utf8(path)?;
    read_conll2003(&text, &path.display().to_string(), vocab, rules)
}

/// Dimensionality diagnostics over a descending spectrum.
#[derive(Clone, Debug, PartialEq)]
pub struct EigenReport {
    pub eigenvalues: Vec<f64>,
    /// Cumulative percentage of total variance.
    pub tv: Vec<f64>,
    /// Log eigenvalues, floored at [`EIGEN_FLOOR`].
    pub lev: Vec<f64>,
    /// Cumulative percentage of the log generalized variance; `None` when
    /// the logs sum to zero.
    pub lgv: Option<Vec<f64>>,
}

fn cumulative_percent(values: &[f64]) -> Vec<f64> {
    let total: f64 = values.iter().sum();
    let mut acc = 0.0;
    let mut out: Vec<f64> = values
        .iter()
        .map(|v| {
            acc += v;
            100.0 * acc / total
        })
        .collect();
    if let Some(last) = out.last_mut() {
        *last = 100.0;
    }
    out
}

pub fn eigen_report(eigenvalues: &[f64]) -> Result<EigenReport> {
    if let Some(l) = eigenvalues.iter().find(|l| !(**l >= 0.0)) {
        return Err(Error::InvalidParam(format!("eigenvalue {l} is negative")));
    }
    if eigenvalues.iter().all(|&l| l == 0.0) {
        return Err(Error::DegenerateSpectrum);
    }
    let mut ev = eigenvalues.to_vec();
    ev.sort_by(|a, b| b.total_cmp(a));
    let lev: Vec<f64> = ev.iter().map(|l| l.max(EIGEN_FLOOR).ln()).collect();
    let lgv = (lev.iter().sum::<f64>() != 0.0).then(|| cumulative_percent(&lev));
    Ok(EigenReport {
        tv: cumulative_percent(&ev),
        lev,
        lgv,
        eigenvalues: ev,
    })
}

/// Two-column plottable series: `index value`, indices from 1.
pub fn write_series<W: Write>(mut w: W, values: &[f64]) -> std::io::Result<()> {
    for (i, v) in values.iter().enumerate() {
        writeln!(w, "{} {v:?}", i + 1)?;
    }
    Ok(())
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// 1-based ranks with ties sharing their average rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &o in &order[i..=j] {
            ranks[o] = rank;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    (saa > 0.0 && sbb > 0.0).then(|| sab / (saa * sbb).sqrt())
}

/// Spearman rank correlation, ties by average rank.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!("{} against {} scores", a.len(), b.len())));
    }
    if a.len() < 2 {
        return Err(Error::NotEnoughData("fewer than 2 scored pairs".into()));
    }
    pearson(&average_ranks(a), &average_ranks(b))
        .ok_or_else(|| Error::NotEnoughData("constant scores have no rank correlation".into()))
}

/// Word pairs with gold similarity scores.
#[derive(Clone, Debug, PartialEq)]
pub struct Benchmark {
    pub name: String,
    pub pairs: Vec<(String, String, f64)>,
}

impl Benchmark {
    /// Whitespace-separated `w1 w2 score` lines; blank and `#` lines skipped.
    pub fn parse(text: &str, name: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let cols: Vec<&str> = line.split_whitespace().collect();
            let [a, b, s] = cols[..] else {
                return Err(Error::format(name, i + 1, "expected `word1 word2 score`"));
            };
            let s: f64 = s
                .parse()
                .map_err(|_| Error::format(name, i + 1, format!("score {s:?} is not a number")))?;
            pairs.push((a.to_string(), b.to_string(), s));
        }
        Ok(Benchmark {
            name: name.to_string(),
            pairs,
        })
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::parse(&read_utf8(path)?, &path.display().to_string())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimilarityReport {
    pub name: String,
    pub spearman: f64,
    pub scored: usize,
    /// Pairs skipped because a word has no vector.
    pub oov: usize,
}

/// Spearman correlation between gold scores and embedding cosines.
pub fn word_similarity(emb: &Embeddings, bench: &Benchmark) -> Result<SimilarityReport> {
    let index: HashMap<&str, usize> = emb.tokens.iter().enumerate().map(|(i, t)| (t.as_str(), i)).collect();
    let (mut gold, mut cos) = (Vec::new(), Vec::new());
    let mut oov = 0;
    for (a, b, s) in &bench.pairs {
        match (index.get(a.as_str()), index.get(b.as_str())) {
            (Some(&i), Some(&j)) => {
                gold.push(*s);
                cos.push(cosine(&emb.vector(i), &emb.vector(j)));
            }
            _ => oov += 1,
        }
    }
    let spearman = spearman(&gold, &cos)?;
    Ok(SimilarityReport {
        name: bench.name.clone(),
        spearman,
        scored: gold.len(),
        oov,
    })
}

pub fn average_spearman(reports: &[SimilarityReport]) -> Option<f64> {
    (!reports.is_empty()).then(|| reports.iter().map(|r| r.spearman).sum::<f64>() / reports.len() as f64)
}

/// Empirical mean and covariance of the contextual word vectors (columns).
#[derive(Clone, Debug, PartialEq)]
pub struct DistributionReport {
    pub mean: Vec<f64>,
    /// Diagonal of the sample covariance (divisor `n − 1`).
    pub covariance_diag: Vec<f64>,
    /// Fraction of zero cells.
    pub sparsity: f64,
    /// Features (by descending total) used for the off-diagonal comparison.
    pub top_features: Vec<usize>,
    pub mean_abs_diagonal: f64,
    pub mean_abs_off_diagonal: f64,
}

pub fn distribution_diagnostics(m: &SparseMatrix, top: usize) -> DistributionReport {
    let (rows, n) = (m.nrows(), m.ncols());
    let nf = n as f64;
    let mean: Vec<f64> = m.row_marginals().iter().map(|s| if n > 0 { s / nf } else { 0.0 }).collect();
    let mut sq = vec![0.0; rows];
    for (i, _, v) in m.iter() {
        sq[i] += v * v;
    }
    let covariance_diag: Vec<f64> = (0..rows)
        .map(|i| {
            if n < 2 {
                0.0
            } else {
                ((sq[i] - nf * mean[i] * mean[i]) / (nf - 1.0)).max(0.0)
            }
        })
        .collect();
    let cells = (rows * n) as f64;
    let sparsity = if cells > 0.0 { (cells - m.nnz() as f64) / cells } else { 0.0 };

    let mut order: Vec<usize> = (0..rows).collect();
    order.sort_by(|&a, &b| m.row_marginals()[b].total_cmp(&m.row_marginals()[a]).then(a.cmp(&b)));
    order.truncate(top.min(rows));
    let (mut diag, mut off) = (0.0, 0.0);
    let r = order.len();
    if n >= 2 && r > 0 {
        let slot: HashMap<usize, usize> = order.iter().enumerate().map(|(s, &i)| (i, s)).collect();
        let mut block = DMatrix::zeros(r, n);
        for (i, j, v) in m.iter() {
            if let Some(&s) = slot.get(&i) {
                block[(s, j)] = v;
            }
        }
        let cov = covariance(&block.transpose()).expect("n ≥ 2");
        for a in 0..r {
            for b in 0..r {
                if a == b {
                    diag += cov[(a, b)].abs();
                } else {
                    off += cov[(a, b)].abs();
                }
            }
        }
        diag /= r as f64;
        if r > 1 {
            off /= (r * (r - 1)) as f64;
        }
    }
    DistributionReport {
        mean,
        covariance_diag,
        sparsity,
        top_features: order,
        mean_abs_diagonal: diag,
        mean_abs_off_diagonal: off,
    }
}
