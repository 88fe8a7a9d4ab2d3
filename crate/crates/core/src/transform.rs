//! Element-wise transformations and the entropy-maximizing power tuner.
//!
//! The tuner scores a power `p` by the differential entropy of the
//! transformed contextual vectors. Entropy is estimated blockwise: feature
//! indices are permuted and cut into blocks of `block_len`, a Gaussian KDE is
//! fitted per block and its resubstitution entropy taken, and the block
//! entropies are averaged.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::coocmat::SparseMatrix;
use crate::{par, Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub enum TransformSpec {
    Identity,
    /// `log(1 + x)`
    Log,
    /// `√x`
    Hellinger,
    /// `x^p` with one `p` for all rows.
    Power(f64),
    /// `x^p[i]` for row `i`.
    PowerVector(Vec<f64>),
}

impl TransformSpec {
    pub fn name(&self) -> &'static str {
        match self {
            TransformSpec::Identity => "identity",
            TransformSpec::Log => "log",
            TransformSpec::Hellinger => "hellinger",
            TransformSpec::Power(_) => "power",
            TransformSpec::PowerVector(_) => "power_vector",
        }
    }

    pub fn validate(&self, nrows: usize) -> Result<()> {
        let check = |p: f64| {
            if p > 0.0 && p <= 1.0 {
                Ok(())
            } else {
                Err(Error::InvalidParam(format!("power {p} outside (0, 1]")))
            }
        };
        match self {
            TransformSpec::Power(p) => check(*p),
            TransformSpec::PowerVector(ps) => {
                if ps.len() != nrows {
                    return Err(Error::Shape(format!(
                        "power vector of length {} for {nrows} rows",
                        ps.len()
                    )));
                }
                ps.iter().try_for_each(|&p| check(p))
            }
            _ => Ok(()),
        }
    }

    fn needs_non_negative(&self) -> bool {
        !matches!(self, TransformSpec::Identity)
    }

    #[inline]
    pub fn apply_value(&self, row: usize, x: f64) -> f64 {
        match self {
            TransformSpec::Identity => x,
            TransformSpec::Log => x.ln_1p(),
            TransformSpec::Hellinger => x.sqrt(),
            TransformSpec::Power(p) => x.powf(*p),
            TransformSpec::PowerVector(ps) => x.powf(ps[row]),
        }
    }
}

impl fmt::Display for TransformSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TransformSpec::Power(p) => write!(f, "power:{p:?}"),
            TransformSpec::PowerVector(ps) => {
                write!(f, "power_vector:")?;
                for (i, p) in ps.iter().enumerate() {
                    if i > 0 {
                        write!(f, ",")?;
                    }
                    write!(f, "{p:?}")?;
                }
                Ok(())
            }
            other => f.write_str(other.name()),
        }
    }
}

impl FromStr for TransformSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidParam(format!("unknown transform {s:?}"));
        let spec = match s.split_once(':') {
            None => match s {
                "identity" => TransformSpec::Identity,
                "log" => TransformSpec::Log,
                "hellinger" => TransformSpec::Hellinger,
                _ => return Err(bad()),
            },
            Some(("power", p)) => TransformSpec::Power(p.parse().map_err(|_| bad())?),
            Some(("power_vector", ps)) => TransformSpec::PowerVector(
                ps.split(',')
                    .map(|p| p.trim().parse())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| bad())?,
            ),
            _ => return Err(bad()),
        };
        if let TransformSpec::Power(_) = spec {
            spec.validate(0)?;
        }
        if let TransformSpec::PowerVector(ref ps) = spec {
            spec.validate(ps.len())?;
        }
        Ok(spec)
    }
}

/// Applies `spec` to every stored entry. Zeros stay zero.
pub fn apply_transform(m: &SparseMatrix, spec: &TransformSpec) -> Result<SparseMatrix> {
    spec.validate(m.nrows())?;
    if spec.needs_non_negative() {
        if let Some((row, col, value)) = m.iter().find(|&(_, _, v)| v < 0.0) {
            return Err(Error::NegativeEntry {
                row,
                col,
                value,
                transform: spec.name(),
            });
        }
    }
    Ok(m.map_values(|i, x| spec.apply_value(i, x)))
}

pub fn apply_transform_dense(m: &DMatrix<f64>, spec: &TransformSpec) -> Result<DMatrix<f64>> {
    spec.validate(m.nrows())?;
    if spec.needs_non_negative() {
        for j in 0..m.ncols() {
            for i in 0..m.nrows() {
                if m[(i, j)] < 0.0 {
                    return Err(Error::NegativeEntry {
                        row: i,
                        col: j,
                        value: m[(i, j)],
                        transform: spec.name(),
                    });
                }
            }
        }
    }
    Ok(DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| spec.apply_value(i, m[(i, j)])))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Bandwidth {
    /// Silverman's rule of thumb per block dimension.
    Silverman,
    Fixed(f64),
}

/// Dimensions with zero spread fall back to this bandwidth under
/// [`Bandwidth::Silverman`].
const MIN_BANDWIDTH: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq)]
pub struct AnnealParams {
    pub iterations: usize,
    pub initial_temperature: f64,
    /// Geometric cooling factor per step.
    pub cooling: f64,
    /// Standard deviation of the Gaussian proposal on `p`.
    pub step: f64,
    /// Lower clip for proposed powers.
    pub min_power: f64,
    /// Words subsampled for the entropy estimate.
    pub sample_words: usize,
    pub block_len: usize,
    /// Number of blocks evaluated per estimate.
    pub block_count: usize,
    pub bandwidth: Bandwidth,
    pub seed: u64,
}

impl Default for AnnealParams {
    fn default() -> Self {
        AnnealParams {
            iterations: 200,
            initial_temperature: 1.0,
            cooling: 0.98,
            step: 0.05,
            min_power: 0.01,
            sample_words: 5000,
            block_len: 2,
            block_count: 50,
            bandwidth: Bandwidth::Silverman,
            seed: 0,
        }
    }
}

impl AnnealParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidParam(what.to_string()));
        if !(self.cooling > 0.0 && self.cooling < 1.0) {
            return bad("cooling factor must lie in (0, 1)");
        }
        if self.block_len == 0 || self.block_count == 0 {
            return bad("entropy blocks must be non-empty");
        }
        if !(self.initial_temperature > 0.0) || !(self.step > 0.0) {
            return bad("temperature and step must be positive");
        }
        if !(self.min_power > 0.0 && self.min_power <= 1.0) {
            return bad("min_power must lie in (0, 1]");
        }
        if let Bandwidth::Fixed(h) = self.bandwidth {
            if !(h > 0.0) {
                return bad("bandwidth must be positive");
            }
        }
        Ok(())
    }
}

/// A set of contextual vectors stored feature-major: for every dimension the
/// `(point, value)` pairs with non-zero value.
#[derive(Clone, Debug)]
pub struct EntropySample {
    points: usize,
    rows: Vec<Vec<(u32, f64)>>,
}

impl EntropySample {
    /// One point per element of `points`, each of the same dimension.
    pub fn from_points(points: &[Vec<f64>]) -> Result<Self> {
        let dim = points.first().map_or(0, |p| p.len());
        if points.iter().any(|p| p.len() != dim) {
            return Err(Error::Shape("sample points differ in dimension".into()));
        }
        let mut rows = vec![Vec::new(); dim];
        for (a, p) in points.iter().enumerate() {
            for (d, &x) in p.iter().enumerate() {
                if x != 0.0 {
                    rows[d].push((a as u32, x));
                }
            }
        }
        Ok(EntropySample {
            points: points.len(),
            rows,
        })
    }

    /// The selected columns of `m` as points.
    pub fn from_columns(m: &SparseMatrix, cols: &[usize]) -> Self {
        let mut rows = vec![Vec::new(); m.nrows()];
        for (a, &j) in cols.iter().enumerate() {
            let (idx, vals) = m.col(j);
            for (&i, &x) in idx.iter().zip(vals) {
                rows[i as usize].push((a as u32, x));
            }
        }
        EntropySample {
            points: cols.len(),
            rows,
        }
    }

    pub fn len(&self) -> usize {
        self.points
    }

    pub fn is_empty(&self) -> bool {
        self.points == 0
    }

    pub fn dim(&self) -> usize {
        self.rows.len()
    }

    pub fn transformed(&self, spec: &TransformSpec) -> Result<Self> {
        spec.validate(self.dim())?;
        let rows = self
            .rows
            .iter()
            .enumerate()
            .map(|(d, r)| {
                r.iter()
                    .map(|&(a, x)| (a, spec.apply_value(d, x)))
                    .filter(|&(_, y)| y != 0.0)
                    .collect()
            })
            .collect();
        Ok(EntropySample {
            points: self.points,
            rows,
        })
    }

    /// Distinct points of the sub-vector over `dims`, lexicographically
    /// sorted, with multiplicities.
    fn block_points(&self, dims: &[usize]) -> Vec<(Vec<f64>, f64)> {
        let l = dims.len();
        let mut by_point: std::collections::HashMap<u32, Vec<f64>> = std::collections::HashMap::new();
        for (slot, &d) in dims.iter().enumerate() {
            for &(a, x) in &self.rows[d] {
                by_point.entry(a).or_insert_with(|| vec![0.0; l])[slot] = x;
            }
        }
        let zeros = self.points - by_point.len();
        let mut pts: Vec<Vec<f64>> = by_point.into_values().collect();
        if zeros > 0 {
            pts.extend(std::iter::repeat_n(vec![0.0; l], zeros.min(1)));
        }
        pts.sort_by(|x, y| cmp_points(x, y));
        let mut out: Vec<(Vec<f64>, f64)> = Vec::with_capacity(pts.len());
        for p in pts {
            let w = if p.iter().all(|&x| x == 0.0) { zeros as f64 } else { 1.0 };
            match out.last_mut() {
                Some((q, c)) if cmp_points(q, &p).is_eq() => *c += w,
                _ => out.push((p, w)),
            }
        }
        out
    }
}

fn cmp_points(x: &[f64], y: &[f64]) -> std::cmp::Ordering {
    x.iter()
        .zip(y)
        .map(|(a, b)| a.total_cmp(b))
        .find(|o| o.is_ne())
        .unwrap_or(std::cmp::Ordering::Equal)
}

/// Seeded partition of `0..dim` into blocks of `block_len`, truncated to the
/// first `block_count` blocks.
fn partition(dim: usize, params: &AnnealParams) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..dim).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed ^ 0x9e37_79b9_7f4a_7c15);
    idx.shuffle(&mut rng);
    idx.chunks(params.block_len)
        .take(params.block_count)
        .map(|c| c.to_vec())
        .collect()
}

/// Resubstitution entropy (nats) of a Gaussian product-kernel density fitted
/// to weighted points.
fn kde_entropy(points: &[(Vec<f64>, f64)], total: f64, bandwidth: Bandwidth) -> f64 {
    let l = points[0].0.len();
    let h: Vec<f64> = (0..l)
        .map(|d| match bandwidth {
            Bandwidth::Fixed(h) => h,
            Bandwidth::Silverman => {
                let mean = points.iter().map(|(p, w)| w * p[d]).sum::<f64>() / total;
                let var = points.iter().map(|(p, w)| w * (p[d] - mean).powi(2)).sum::<f64>() / (total - 1.0);
                let factor = (4.0 / ((l as f64 + 2.0) * total)).powf(1.0 / (l as f64 + 4.0));
                let h = var.sqrt() * factor;
                if h > 0.0 {
                    h
                } else {
                    MIN_BANDWIDTH
                }
            }
        })
        .collect();
    let inv_h: Vec<f64> = h.iter().map(|x| 1.0 / x).collect();
    let log_norm: f64 = h
        .iter()
        .map(|x| (x * (2.0 * std::f64::consts::PI).sqrt()).ln())
        .sum::<f64>()
        + total.ln();

    let u = points.len();
    // density sums accumulated over the upper triangle of the kernel matrix
    let mut dens: Vec<f64> = points.iter().map(|(_, w)| *w).collect();
    for a in 0..u {
        let pa = &points[a].0;
        for b in a + 1..u {
            let pb = &points[b].0;
            let mut q = 0.0;
            for d in 0..l {
                let z = (pa[d] - pb[d]) * inv_h[d];
                q += z * z;
            }
            let k = (-0.5 * q).exp();
            dens[a] += points[b].1 * k;
            dens[b] += points[a].1 * k;
        }
    }
    -points
        .iter()
        .zip(&dens)
        .map(|((_, w), f)| w * (f.ln() - log_norm))
        .sum::<f64>()
        / total
}

/// Mean of per-block KDE entropies over a seeded partition of the
/// dimensions.
pub fn estimate_entropy(sample: &EntropySample, params: &AnnealParams) -> Result<f64> {
    params.validate()?;
    if sample.len() < 2 {
        return Err(Error::NotEnoughData(format!(
            "entropy needs at least 2 sample points, got {}",
            sample.len()
        )));
    }
    if sample.dim() == 0 {
        return Err(Error::NotEnoughData("entropy sample has no dimensions".into()));
    }
    let blocks = partition(sample.dim(), params);
    let total = sample.len() as f64;
    let per_block = par::map_indexed(blocks.len(), |b| {
        let pts = sample.block_points(&blocks[b]);
        kde_entropy(&pts, total, params.bandwidth)
    });
    Ok(per_block.iter().sum::<f64>() / per_block.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PowerMode {
    Single,
    Vector,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TunedPower {
    pub spec: TransformSpec,
    /// Entropy at the returned spec; `None` when the matrix was too
    /// degenerate to estimate and `p = 1` was returned.
    pub objective: Option<f64>,
    /// Entropy at the identity start `p = 1`.
    pub initial_objective: Option<f64>,
    pub accepted: usize,
}

/// Deterministic uniform subsample of column indices, sorted.
pub fn sample_columns(ncols: usize, size: usize, seed: u64) -> Vec<usize> {
    if ncols <= size {
        return (0..ncols).collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cols = rand::seq::index::sample(&mut rng, ncols, size).into_vec();
    cols.sort_unstable();
    cols
}

/// Simulated annealing over the power of `x^p`, started at `p = 1`.
pub fn tune_power(m: &SparseMatrix, mode: PowerMode, params: &AnnealParams) -> Result<TunedPower> {
    params.validate()?;
    let cols = sample_columns(m.ncols(), params.sample_words, params.seed);
    let sample = EntropySample::from_columns(m, &cols);
    tune_power_on(&sample, mode, params)
}

pub fn tune_power_on(sample: &EntropySample, mode: PowerMode, params: &AnnealParams) -> Result<TunedPower> {
    params.validate()?;
    let dim = sample.dim();
    let spec_of = |p: &[f64]| match mode {
        PowerMode::Single => TransformSpec::Power(p[0]),
        PowerMode::Vector => TransformSpec::PowerVector(p.to_vec()),
    };
    let objective = |p: &[f64]| -> Result<f64> {
        estimate_entropy(&sample.transformed(&spec_of(p))?, params)
    };

    let mut current = vec![1.0; if mode == PowerMode::Single { 1 } else { dim }];
    let degenerate = sample.len() < 2 || dim == 0 || sample.rows.iter().all(|r| r.is_empty());
    if degenerate {
        return Ok(TunedPower {
            spec: spec_of(&current),
            objective: None,
            initial_objective: None,
            accepted: 0,
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed.wrapping_add(0x5851_f42d_4c95_7f2d));
    let noise = Normal::new(0.0, params.step).map_err(|e| Error::InvalidParam(e.to_string()))?;
    let mut current_score = objective(&current)?;
    let initial = current_score;
    let (mut best, mut best_score) = (current.clone(), current_score);
    let mut temperature = params.initial_temperature;
    let mut accepted = 0;
    for _ in 0..params.iterations {
        let proposal: Vec<f64> = current
            .iter()
            .map(|p| (p + noise.sample(&mut rng)).clamp(params.min_power, 1.0))
            .collect();
        let score = objective(&proposal)?;
        let delta = score - current_score;
        let u: f64 = rng.random();
        if delta >= 0.0 || u < (delta / temperature).exp() {
            current = proposal;
            current_score = score;
            accepted += 1;
            if current_score > best_score {
                best = current.clone();
                best_score = current_score;
            }
        }
        temperature *= params.cooling;
    }
    Ok(TunedPower {
        spec: spec_of(&best),
        objective: Some(best_score),
        initial_objective: Some(initial),
        accepted,
    })
}
