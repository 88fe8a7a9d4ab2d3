//! Generalized PCA over a contextual matrix, and the corpus-to-vectors
//! pipeline.

use std::fmt;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;
use std::str::FromStr;

use log::{info, warn};
use nalgebra::DMatrix;

use crate::config::sha256_hex;
use crate::coocmat::{combine_union, combine_window, count_matrix, SparseMatrix};
use crate::corpus::Corpus;
use crate::features::{ContextFn, FeatureKind, FeatureSpace};
use crate::linalg::{centered_svd, SketchParams};
use crate::transform::{apply_transform, tune_power, AnnealParams, PowerMode, TransformSpec};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MetricKind {
    Identity,
    /// Inverse feature frequency.
    Iff,
    /// Inverse feature standard deviation.
    Isf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WeightKind {
    Identity,
    /// Inverse word frequency.
    Iwf,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LambdaKind {
    Classic { k: usize },
    Normalized { k: usize, alpha: f64 },
}

impl LambdaKind {
    pub fn k(&self) -> usize {
        match *self {
            LambdaKind::Classic { k } | LambdaKind::Normalized { k, .. } => k,
        }
    }

    fn with_k(self, k: usize) -> Self {
        match self {
            LambdaKind::Classic { .. } => LambdaKind::Classic { k },
            LambdaKind::Normalized { alpha, .. } => LambdaKind::Normalized { k, alpha },
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum TransformChoice {
    Fixed(TransformSpec),
    TuneSingle,
    TuneVector,
    /// Positive pointwise mutual information on the raw counts. Requires
    /// identity metric and weight.
    Pmi,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GpcaParams {
    pub metric: MetricKind,
    pub weight: WeightKind,
    pub transform: TransformChoice,
    pub lambda: LambdaKind,
    /// `sketch.k` is overridden by `lambda.k`.
    pub sketch: SketchParams,
    pub anneal: AnnealParams,
}

impl GpcaParams {
    /// Plain PCA with `k` components.
    pub fn new(k: usize) -> Self {
        GpcaParams {
            metric: MetricKind::Identity,
            weight: WeightKind::Identity,
            transform: TransformChoice::Fixed(TransformSpec::Identity),
            lambda: LambdaKind::Classic { k },
            sketch: SketchParams::new(k),
            anneal: AnnealParams::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.lambda.k();
        if k == 0 {
            return Err(Error::InvalidParam("k must be at least 1".into()));
        }
        if let LambdaKind::Normalized { alpha, .. } = self.lambda {
            if !(alpha > 0.0 && alpha.is_finite()) {
                return Err(Error::InvalidParam(format!("alpha {alpha} must be positive")));
            }
        }
        if k > self.sketch.width {
            return Err(Error::InvalidParam(format!(
                "k = {k} exceeds sketch width {}",
                self.sketch.width
            )));
        }
        if self.transform == TransformChoice::Pmi
            && (self.metric != MetricKind::Identity || self.weight != WeightKind::Identity)
        {
            return Err(Error::InvalidParam(
                "pmi already includes the frequency weighting; use identity metric and weight".into(),
            ));
        }
        if matches!(self.transform, TransformChoice::TuneSingle | TransformChoice::TuneVector) {
            self.anneal.validate()?;
        }
        Ok(())
    }
}

/// Principal word vectors: one row per word.
#[derive(Clone, Debug, PartialEq)]
pub struct Embeddings {
    pub tokens: Vec<String>,
    /// `n × k`
    pub vectors: DMatrix<f64>,
    /// The leading singular values of the centred matrix, before weighting.
    pub singular_values: Vec<f64>,
    pub requested_k: usize,
    /// The transform actually applied, with tuned powers resolved.
    pub transform: Option<TransformSpec>,
    pub manifest: Vec<(String, String)>,
}

impl Embeddings {
    pub fn len(&self) -> usize {
        self.vectors.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.nrows() == 0
    }

    pub fn k(&self) -> usize {
        self.vectors.ncols()
    }

    pub fn vector(&self, j: usize) -> Vec<f64> {
        self.vectors.row(j).iter().copied().collect()
    }

    pub fn index_of(&self, token: &str) -> Option<usize> {
        self.tokens.iter().position(|t| t == token)
    }

    /// `n k` header, then `token v1 … vk` per word.
    pub fn write_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        use std::fmt::Write as _;
        writeln!(w, "{} {}", self.len(), self.k())?;
        let mut line = String::new();
        for (j, token) in self.tokens.iter().enumerate() {
            line.clear();
            line.push_str(token);
            for x in self.vectors.row(j).iter() {
                let _ = write!(line, " {x:?}");
            }
            line.push('\n');
            w.write_all(line.as_bytes())?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        self.write_to(&mut w)
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(path, e))
    }

    /// Reads the text format; only tokens and vectors are restored.
    pub fn read_from<R: Read>(r: R, name: &str) -> Result<Self> {
        let mut lines = BufReader::new(r).lines();
        let header = lines
            .next()
            .transpose()
            .map_err(|e| Error::io(name, e))?
            .ok_or_else(|| Error::format(name, 1, "missing `n k` header"))?;
        let dims: Vec<usize> = header
            .split_whitespace()
            .map(|t| t.parse())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::format(name, 1, "header must be `n k`"))?;
        let [n, k] = dims[..] else {
            return Err(Error::format(name, 1, "header must be `n k`"));
        };
        let mut tokens = Vec::with_capacity(n);
        let mut data = Vec::with_capacity(n * k);
        for (idx, line) in lines.enumerate() {
            let lineno = idx + 2;
            let line = line.map_err(|e| Error::io(name, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            let token = parts.next().unwrap_or_default().to_string();
            let before = data.len();
            for p in parts {
                let x: f64 = p
                    .parse()
                    .map_err(|_| Error::format(name, lineno, format!("non-numeric value {p:?}")))?;
                data.push(x);
            }
            if data.len() - before != k {
                return Err(Error::format(
                    name,
                    lineno,
                    format!("expected {k} values, found {}", data.len() - before),
                ));
            }
            tokens.push(token);
        }
        if tokens.len() != n {
            return Err(Error::format(name, 1, format!("header promises {n} words, found {}", tokens.len())));
        }
        Ok(Embeddings {
            tokens,
            vectors: DMatrix::from_row_slice(n, k, &data),
            singular_values: Vec::new(),
            requested_k: k,
            transform: None,
            manifest: Vec::new(),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(file, &path.display().to_string())
    }

    fn note(&mut self, key: &str, value: impl ToString) {
        self.manifest.push((key.to_string(), value.to_string()));
    }
}

fn reciprocal(x: f64) -> f64 {
    if x > 0.0 {
        1.0 / x
    } else {
        0.0
    }
}

/// Diagonal of the metric matrix Φ (one entry per feature).
pub fn build_metric(m: &SparseMatrix, kind: MetricKind) -> Vec<f64> {
    match kind {
        MetricKind::Identity => vec![1.0; m.nrows()],
        MetricKind::Iff => m.row_marginals().iter().map(|&c| reciprocal(c)).collect(),
        MetricKind::Isf => {
            let n = m.ncols() as f64;
            if m.ncols() < 2 {
                return vec![0.0; m.nrows()];
            }
            let means: Vec<f64> = m.row_marginals().iter().map(|s| s / n).collect();
            // Σ (x − μ)² = Σ_nz x² − 2μ Σ x + n μ²
            let mut sq = vec![0.0; m.nrows()];
            for (i, _, v) in m.iter() {
                sq[i] += v * v;
            }
            sq.iter()
                .zip(&means)
                .zip(m.row_marginals())
                .map(|((&q, &mu), &s)| {
                    let ss = (q - 2.0 * mu * s + n * mu * mu).max(0.0);
                    reciprocal((ss / (n - 1.0)).sqrt())
                })
                .collect()
        }
    }
}

/// Diagonal of the weight matrix Ω (one entry per word).
pub fn build_weight(m: &SparseMatrix, kind: WeightKind) -> Vec<f64> {
    match kind {
        WeightKind::Identity => vec![1.0; m.ncols()],
        WeightKind::Iwf => m.col_marginals().iter().map(|&c| reciprocal(c)).collect(),
    }
}

/// `max(0, log(T·M(i,j) / (n(c_i) n(v_j))))` on the support of `M`.
pub fn pmi_matrix(m: &SparseMatrix) -> SparseMatrix {
    let total = m.total();
    let (rows, cols) = (m.row_marginals(), m.col_marginals());
    let out = SparseMatrix::from_triplets(
        m.nrows(),
        m.ncols(),
        m.iter()
            .map(|(i, j, v)| (i, j, (total * v / (rows[i] * cols[j])).ln().max(0.0))),
    )
    .expect("indices come from the matrix itself");
    out.with_provenance(format!("pmi({})", m.provenance()))
}

/// Diagonal of `Σ₁ = Λ Σ` for `n` words.
pub fn eigen_weights(lambda: LambdaKind, singular_values: &[f64], n: usize) -> Vec<f64> {
    let scale = (n.saturating_sub(1) as f64).sqrt();
    singular_values
        .iter()
        .take(lambda.k())
        .map(|&s| match lambda {
            LambdaKind::Classic { .. } => scale * s,
            LambdaKind::Normalized { alpha, .. } => alpha * scale,
        })
        .collect()
}

/// Runs generalized PCA on the feature-by-word matrix `m`.
pub fn gpca(m: &SparseMatrix, params: &GpcaParams) -> Result<Embeddings> {
    params.validate()?;
    let (rows, n) = (m.nrows(), m.ncols());
    if rows == 0 {
        return Err(Error::EmptyFeatureSpace);
    }
    if n < 2 {
        return Err(Error::NotEnoughData(format!("gpca needs at least 2 words, got {n}")));
    }

    let mut tuned = None;
    let (x, spec) = match &params.transform {
        TransformChoice::Pmi => (pmi_matrix(m), None),
        choice => {
            let phi = build_metric(m, params.metric);
            let omega = build_weight(m, params.weight);
            let weighted = m.scale(&phi, &omega)?;
            let spec = match choice {
                TransformChoice::Fixed(spec) => spec.clone(),
                TransformChoice::TuneSingle | TransformChoice::TuneVector => {
                    let mode = if *choice == TransformChoice::TuneSingle {
                        PowerMode::Single
                    } else {
                        PowerMode::Vector
                    };
                    let t = tune_power(&weighted, mode, &params.anneal)?;
                    info!("tuned transform {} (entropy {:?})", t.spec, t.objective);
                    tuned = t.objective;
                    t.spec
                }
                TransformChoice::Pmi => unreachable!(),
            };
            (apply_transform(&weighted, &spec)?, Some(spec))
        }
    };
    let e: Vec<f64> = x.row_marginals().iter().map(|s| s / n as f64).collect();

    let mut sketch = params.sketch;
    let limit = rows.min(n);
    if sketch.width > limit {
        info!("sketch width {} reduced to min(m, n) = {limit}", sketch.width);
        sketch.width = limit;
    }
    sketch.k = params.lambda.k().min(sketch.width);
    let factors = centered_svd(&x, &e, &sketch)?;

    let s0 = factors.s.first().copied().unwrap_or(0.0);
    if !(s0 > 0.0) {
        return Err(Error::DegenerateSpectrum);
    }
    let tol = s0 * rows.max(n) as f64 * f64::EPSILON;
    let k = factors.s.iter().take_while(|&&s| s > tol).count();
    if k < params.lambda.k() {
        warn!(
            "requested {} dimensions but only {k} positive singular values are available",
            params.lambda.k()
        );
    }
    let lambda = params.lambda.with_k(k);
    let weights = eigen_weights(lambda, &factors.s, n);
    let vectors = DMatrix::from_fn(n, k, |j, c| weights[c] * factors.v[(j, c)]);

    let mut out = Embeddings {
        tokens: (0..n).map(|j| j.to_string()).collect(),
        vectors,
        singular_values: factors.s[..k].to_vec(),
        requested_k: params.lambda.k(),
        transform: spec.clone(),
        manifest: Vec::new(),
    };
    out.note("matrix", format!("{rows}x{n} nnz={} {}", m.nnz(), m.provenance()));
    out.note("metric", format!("{:?}", params.metric).to_lowercase());
    out.note("weight", format!("{:?}", params.weight).to_lowercase());
    out.note(
        "transform",
        spec.map_or_else(|| "pmi".to_string(), |s| s.to_string()),
    );
    if let Some(h) = tuned {
        out.note("transform_entropy", format!("{h:?}"));
    }
    match lambda {
        LambdaKind::Classic { .. } => out.note("lambda", "classic"),
        LambdaKind::Normalized { alpha, .. } => out.note("lambda", format!("normalized alpha={alpha:?}")),
    }
    out.note("k", k);
    out.note("k_requested", params.lambda.k());
    out.note("sketch_width", sketch.width);
    out.note("power_iters", sketch.power_iters);
    out.note("power_mode", format!("{:?}", sketch.mode).to_lowercase());
    out.note("sketch_seed", sketch.seed);
    out.note("orientation", "rows are words");
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Left,
    Right,
    Symmetric,
}

/// The context side of a feature specification.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ContextSpec {
    Single(ContextFn),
    /// Neighbours at offsets `1..=size` on the chosen side(s), weighted
    /// `1/|τ|`.
    Window {
        size: u32,
        direction: Direction,
        across_sentences: bool,
    },
    /// Ancestors at depths `1..=depth`, weighted `1/depth`.
    Ancestors { depth: u32 },
}

/// A feature kind seen through a context, e.g. `word_form:window=2:symmetric`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FeatureSpec {
    pub kind: FeatureKind,
    pub context: ContextSpec,
}

impl FeatureSpec {
    /// The singleton contexts and their combination weights.
    pub fn contexts(&self) -> Vec<(ContextFn, f64)> {
        match self.context {
            ContextSpec::Single(c) => vec![(c, 1.0)],
            ContextSpec::Window {
                size,
                direction,
                across_sentences,
            } => {
                let mut out = Vec::new();
                for d in 1..=size as i32 {
                    if direction != Direction::Right {
                        out.push((-d, 1.0 / d as f64));
                    }
                    if direction != Direction::Left {
                        out.push((d, 1.0 / d as f64));
                    }
                }
                out.into_iter()
                    .map(|(offset, a)| {
                        (
                            ContextFn::Neighbourhood {
                                offset,
                                across_sentences,
                            },
                            a,
                        )
                    })
                    .collect()
            }
            ContextSpec::Ancestors { depth } => (1..=depth)
                .map(|d| (ContextFn::ancestor(d), 1.0 / d as f64))
                .collect(),
        }
    }
}

impl fmt::Display for FeatureSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:", self.kind.name())?;
        let across = |f: &mut fmt::Formatter<'_>, yes: bool| if yes { write!(f, ":across") } else { Ok(()) };
        match self.context {
            ContextSpec::Single(ContextFn::Neighbourhood {
                offset,
                across_sentences,
            }) => {
                write!(f, "offset={offset}")?;
                across(f, across_sentences)
            }
            ContextSpec::Single(ContextFn::Dependency { depth }) => write!(f, "ancestor={depth}"),
            ContextSpec::Window {
                size,
                direction,
                across_sentences,
            } => {
                let dir = match direction {
                    Direction::Left => "left",
                    Direction::Right => "right",
                    Direction::Symmetric => "symmetric",
                };
                write!(f, "window={size}:{dir}")?;
                across(f, across_sentences)
            }
            ContextSpec::Ancestors { depth } => write!(f, "ancestors={depth}"),
        }
    }
}

impl FromStr for FeatureSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = |why: &str| Error::InvalidParam(format!("feature spec {s:?}: {why}"));
        let mut parts = s.trim().split(':');
        let kind = match parts.next() {
            Some("word_form") => FeatureKind::WordForm,
            Some("pos") => FeatureKind::Pos,
            Some("joint") => FeatureKind::Joint,
            _ => return Err(bad("kind must be word_form, pos or joint")),
        };
        let (key, value) = parts
            .next()
            .and_then(|c| c.split_once('='))
            .ok_or_else(|| bad("missing context"))?;
        let value: i64 = value.parse().map_err(|_| bad("context value must be an integer"))?;
        let rest: Vec<&str> = parts.collect();
        let across = rest.contains(&"across");
        let direction = match rest.iter().find(|r| **r != "across") {
            None | Some(&"symmetric") => Direction::Symmetric,
            Some(&"left") => Direction::Left,
            Some(&"right") => Direction::Right,
            Some(other) => return Err(bad(&format!("unknown option {other:?}"))),
        };
        let positive = |v: i64| {
            u32::try_from(v)
                .ok()
                .filter(|&v| v > 0)
                .ok_or_else(|| bad("size must be a positive integer"))
        };
        let context = match key {
            "offset" => {
                let offset = i32::try_from(value).map_err(|_| bad("offset out of range"))?;
                let c = ContextFn::Neighbourhood {
                    offset,
                    across_sentences: across,
                };
                c.validate()?;
                ContextSpec::Single(c)
            }
            "ancestor" => ContextSpec::Single(ContextFn::ancestor(positive(value)?)),
            "window" => ContextSpec::Window {
                size: positive(value)?,
                direction,
                across_sentences: across,
            },
            "ancestors" => ContextSpec::Ancestors {
                depth: positive(value)?,
            },
            _ => return Err(bad("context must be offset, ancestor, window or ancestors")),
        };
        Ok(FeatureSpec { kind, context })
    }
}

/// Counts and combines the contextual matrix for `specs`: each spec's
/// contexts are window-combined over a shared feature space, and the specs
/// are stacked in order. Returns one feature space per spec.
pub fn contextual_matrix(corpus: &Corpus, specs: &[FeatureSpec]) -> Result<(SparseMatrix, Vec<FeatureSpace>)> {
    if specs.is_empty() {
        return Err(Error::EmptyFeatureSpace);
    }
    let mut blocks = Vec::with_capacity(specs.len());
    let mut spaces = Vec::with_capacity(specs.len());
    for spec in specs {
        let (contexts, alphas): (Vec<ContextFn>, Vec<f64>) = spec.contexts().into_iter().unzip();
        let shared = FeatureSpace::build_shared(corpus, spec.kind, &contexts)?;
        if shared.first().is_none_or(|s| s.is_empty()) {
            return Err(Error::EmptyFeatureSpace);
        }
        let mats = shared
            .iter()
            .map(|space| count_matrix(corpus, space))
            .collect::<Result<Vec<_>>>()?;
        let block = if mats.len() == 1 {
            mats.into_iter().next().expect("one matrix")
        } else {
            combine_window(&mats, &alphas)?
        };
        blocks.push(block);
        spaces.push(shared.into_iter().next().expect("non-empty"));
    }
    let m = if blocks.len() == 1 {
        blocks.pop().expect("one block")
    } else {
        combine_union(&blocks)?
    };
    Ok((m, spaces))
}

/// Corpus to word vectors: count, combine, then [`gpca`].
pub fn principal_word_vectors(corpus: &Corpus, specs: &[FeatureSpec], params: &GpcaParams) -> Result<Embeddings> {
    params.validate()?;
    let (m, spaces) = contextual_matrix(corpus, specs)?;
    let mut emb = gpca(&m, params)?;
    emb.tokens = corpus.vocabulary().tokens().to_vec();
    let specs: Vec<String> = specs.iter().map(|s| s.to_string()).collect();
    let mut symbols = Vec::new();
    for space in &spaces {
        for s in space.symbols() {
            symbols.extend_from_slice(s.as_bytes());
            symbols.push(b'\n');
        }
    }
    let mut stream = Vec::with_capacity(corpus.len() * 4);
    for s in corpus.sentences() {
        for t in &corpus.tokens()[s.clone()] {
            stream.extend_from_slice(&t.word.to_le_bytes());
        }
        stream.extend_from_slice(&u32::MAX.to_le_bytes());
    }
    emb.manifest.insert(0, ("features".into(), specs.join(",")));
    emb.manifest.insert(1, ("feature_digest".into(), sha256_hex(&symbols)));
    emb.manifest.insert(2, ("token_stream_digest".into(), sha256_hex(&stream)));
    Ok(emb)
}
