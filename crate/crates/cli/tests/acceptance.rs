//! Acceptance criteria, one line per criterion. Exits non-zero if any fails.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::sync::Arc;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use pwvec::coocmat::{combine_union, combine_window, count_matrix, SparseMatrix};
use pwvec::corpus::{Corpus, NormalizationRules, Vocabulary};
use pwvec::eval::{fdr, log_generalized_variance, LabeledWindowSet};
use pwvec::features::{ContextFn, FeatureKind, FeatureSpace};
use pwvec::gpca::{gpca, pmi_matrix, GpcaParams, LambdaKind, MetricKind};
use pwvec::linalg::{centered_svd, orthonormality_error, qr_rank_one_update, thin_qr, SketchParams};
use pwvec::transform::{estimate_entropy, sample_columns, tune_power, AnnealParams, EntropySample, PowerMode, TransformSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.random_range(lo..hi))
}

fn row_means(x: &DMatrix<f64>) -> Vec<f64> {
    x.row_iter().map(|r| r.sum() / x.ncols() as f64).collect()
}

fn centre_rows(x: &DMatrix<f64>) -> DMatrix<f64> {
    let e = row_means(x);
    DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| x[(i, j)] - e[i])
}

fn max_diff_up_to_sign(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (0..a.ncols())
        .map(|c| (a.column(c) - b.column(c)).amax().min((a.column(c) + b.column(c)).amax()))
        .fold(0.0, f64::max)
}

fn raw_corpus(text: &str) -> Corpus {
    let rules = NormalizationRules::default();
    let vocab = Vocabulary::build(text.split_ascii_whitespace(), &rules).unwrap();
    Corpus::from_raw_str(text, Arc::new(vocab), &rules).unwrap()
}

fn random_text(rng: &mut ChaCha8Rng) -> String {
    let words = ["a", "b", "c", "d", "e", "f", "g"];
    let lines: Vec<String> = (0..rng.random_range(1..8))
        .map(|_| {
            let len = rng.random_range(1..10);
            (0..len).map(|_| words[rng.random_range(0..words.len())]).collect::<Vec<_>>().join(" ")
        })
        .collect();
    lines.join("\n")
}

fn centred_svd_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut worst_rec, mut worst_sv) = (0.0f64, 0.0f64);
    for trial in 0..100 {
        let m = rng.random_range(2..=100);
        let n = rng.random_range(2..=100);
        let x = DMatrix::from_fn(m, n, |_, _| {
            if rng.random::<f64>() < 0.1 {
                rng.random_range(1.0..10.0f64).floor()
            } else {
                0.0
            }
        });
        let e = row_means(&x);
        let k = m.min(n);
        let params = SketchParams {
            width: k,
            seed: trial,
            ..SketchParams::new(k)
        };
        let f = centered_svd(&SparseMatrix::from_dense(&x), &e, &params).map_err(|e| e.to_string())?;
        let target = centre_rows(&x);
        let norm = target.norm();
        if norm == 0.0 {
            continue;
        }
        worst_rec = worst_rec.max((f.reconstruct() - &target).norm() / norm);
        let mut oracle: Vec<f64> = target.svd(false, false).singular_values.iter().copied().collect();
        oracle.sort_by(|a, b| b.total_cmp(a));
        for (a, b) in f.s.iter().zip(&oracle) {
            worst_sv = worst_sv.max((a - b).abs() / oracle[0]);
        }
    }
    let elapsed = start.elapsed();
    ensure(worst_rec <= 1e-8, || format!("reconstruction error {worst_rec:e}"))?;
    ensure(worst_sv <= 1e-8, || format!("singular value error {worst_sv:e}"))?;
    ensure(elapsed < Duration::from_secs(30), || format!("took {elapsed:?}"))?;
    Ok(format!("max rel. error {worst_rec:.1e}, singular values {worst_sv:.1e}, {elapsed:.2?}"))
}

fn qr_update() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut worst_prod, mut worst_orth) = (0.0f64, 0.0f64);
    for _ in 0..100 {
        let m = rng.random_range(1..=50);
        let k = rng.random_range(1..=10usize.min(m));
        let (q, r) = thin_qr(&uniform(&mut rng, m, k, -1.0, 1.0));
        let u = DVector::from_fn(m, |_, _| rng.random_range(-1.0..1.0));
        let v = DVector::from_fn(k, |_, _| rng.random_range(-1.0..1.0));
        let (q2, r2) = qr_rank_one_update(&q, &r, &u, &v).map_err(|e| e.to_string())?;
        worst_prod = worst_prod.max((&q2 * &r2 - (&q * &r + &u * v.transpose())).norm());
        worst_orth = worst_orth.max(orthonormality_error(&q2));
    }
    ensure(worst_prod <= 1e-10, || format!("product error {worst_prod:e}"))?;
    ensure(worst_orth <= 1e-10, || format!("orthonormality error {worst_orth:e}"))?;
    Ok(format!("product {worst_prod:.1e}, orthonormality {worst_orth:.1e}"))
}

/// `√(n−1)`-scaled scores on the top-`k` eigenvectors of the covariance of
/// the centred columns `z`.
fn pca_scores(z: &DMatrix<f64>, k: usize) -> DMatrix<f64> {
    let n = z.ncols();
    let eig = SymmetricEigen::new(z * z.transpose() / (n - 1) as f64);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let w = DMatrix::from_fn(z.nrows(), k, |i, c| eig.eigenvectors[(i, order[c])]);
    (w.transpose() * z).transpose() * ((n - 1) as f64).sqrt()
}

fn pca_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut classic, mut correlation) = (0.0f64, 0.0f64);
    for _ in 0..50 {
        let x = uniform(&mut rng, 20, 40, 0.0, 10.0);
        let sx = SparseMatrix::from_dense(&x);
        let mut params = GpcaParams::new(5);
        params.sketch.width = 20;
        let y = gpca(&sx, &params).map_err(|e| e.to_string())?.vectors;
        let z = centre_rows(&x);
        classic = classic.max(max_diff_up_to_sign(&y, &pca_scores(&z, 5)));

        params.metric = MetricKind::Isf;
        let y = gpca(&sx, &params).map_err(|e| e.to_string())?.vectors;
        let mut std = z.clone();
        for mut row in std.row_iter_mut() {
            let sd = (row.norm_squared() / 39.0).sqrt();
            row /= sd;
        }
        correlation = correlation.max(max_diff_up_to_sign(&y, &pca_scores(&std, 5)));
    }
    ensure(classic <= 1e-8, || format!("classic PCA score error {classic:e}"))?;
    ensure(correlation <= 1e-8, || format!("correlation PCA score error {correlation:e}"))?;
    Ok(format!("classic {classic:.1e}, correlation {correlation:.1e}"))
}

fn whitening() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = SparseMatrix::from_dense(&uniform(&mut rng, 30, 60, 0.0, 5.0));
    let mut worst = 0.0f64;
    for alpha in [0.1, 1.0] {
        let mut params = GpcaParams::new(8);
        params.lambda = LambdaKind::Normalized { k: 8, alpha };
        let y = gpca(&x, &params).map_err(|e| e.to_string())?.vectors;
        let gram = y.transpose() * &y / 59.0;
        worst = worst.max((gram - DMatrix::identity(8, 8) * (alpha * alpha)).amax());
    }
    ensure(worst <= 1e-8, || format!("deviation {worst:e}"))?;
    Ok(format!("max deviation {worst:.1e}"))
}

fn word_by_word(corpus: &Corpus, space: &FeatureSpace, m: &SparseMatrix) -> DMatrix<f64> {
    let vocab = corpus.vocabulary();
    let mut out = DMatrix::zeros(vocab.len(), vocab.len());
    for (i, j, v) in m.iter() {
        out[(vocab.id(space.symbol(i as u32)).unwrap() as usize, j)] = v;
    }
    out
}

fn transpose_duality() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut checked = 0;
    for c in 0..20 {
        let corpus = raw_corpus(&random_text(&mut rng));
        for d in 1..=3 {
            let mut dense = Vec::new();
            for off in [-d, d] {
                let space = FeatureSpace::build(&corpus, FeatureKind::WordForm, ContextFn::neighbour(off));
                let dm = match space {
                    Ok(sp) => word_by_word(&corpus, &sp, &count_matrix(&corpus, &sp).map_err(|e| e.to_string())?),
                    Err(e) => return Err(e.to_string()),
                };
                dense.push(dm);
            }
            ensure(dense[0] == dense[1].transpose(), || format!("corpus {c}, tau {d}"))?;
            checked += 1;
        }
    }
    Ok(format!("{checked} corpus/offset pairs"))
}

fn combination_algebra() -> Outcome {
    let corpus = raw_corpus("a b a\nb c");
    let spaces = FeatureSpace::build_shared(
        &corpus,
        FeatureKind::WordForm,
        &[ContextFn::neighbour(-1), ContextFn::neighbour(1)],
    )
    .map_err(|e| e.to_string())?;
    let left = count_matrix(&corpus, &spaces[0]).map_err(|e| e.to_string())?;
    let right = count_matrix(&corpus, &spaces[1]).map_err(|e| e.to_string())?;
    // rows a b c, columns <unk> <num> <root> a b c
    #[rustfmt::skip]
    let left_hand = DMatrix::from_row_slice(3, 6, &[
        0., 0., 0., 0., 1., 0.,
        0., 0., 0., 1., 0., 1.,
        0., 0., 0., 0., 0., 0.,
    ]);
    #[rustfmt::skip]
    let right_hand = DMatrix::from_row_slice(3, 6, &[
        0., 0., 0., 0., 1., 0.,
        0., 0., 0., 1., 0., 0.,
        0., 0., 0., 0., 1., 0.,
    ]);
    ensure(left.to_dense() == left_hand && right.to_dense() == right_hand, || {
        "counts differ from the hand-counted matrices".into()
    })?;
    let w = combine_window(&[left.clone(), right.clone()], &[0.25, 2.0]).map_err(|e| e.to_string())?;
    ensure(w.to_dense() == &left_hand * 0.25 + &right_hand * 2.0, || "window sum differs".into())?;
    let u = combine_union(&[left, right]).map_err(|e| e.to_string())?;
    let mut stacked = DMatrix::zeros(6, 6);
    stacked.rows_mut(0, 3).copy_from(&left_hand);
    stacked.rows_mut(3, 3).copy_from(&right_hand);
    ensure(u.to_dense() == stacked, || "union stacking differs".into())?;
    Ok("window sum and row stacking exact".into())
}

fn pmi_reduction() -> Outcome {
    let text = "a b a b a b c a d\nb a e c a a\nd d a b e";
    let corpus = raw_corpus(text);
    let space = FeatureSpace::build(&corpus, FeatureKind::WordForm, ContextFn::neighbour(1)).map_err(|e| e.to_string())?;
    let pmi = pmi_matrix(&count_matrix(&corpus, &space).map_err(|e| e.to_string())?);
    let vocab = corpus.vocabulary();
    let n = vocab.len();
    let mut counts = vec![vec![0.0f64; n]; space.len()];
    for line in text.lines() {
        let w: Vec<&str> = line.split(' ').collect();
        for t in 0..w.len() - 1 {
            counts[space.id_of(w[t + 1]).unwrap() as usize][vocab.id(w[t]).unwrap() as usize] += 1.0;
        }
    }
    let total: f64 = counts.iter().flatten().sum();
    let rows: Vec<f64> = counts.iter().map(|r| r.iter().sum()).collect();
    let cols: Vec<f64> = (0..n).map(|j| counts.iter().map(|r| r[j]).sum()).collect();
    let mut clamped = 0;
    for (i, row) in counts.iter().enumerate() {
        for (j, &c) in row.iter().enumerate() {
            let want = if c > 0.0 { (total * c / (rows[i] * cols[j])).ln().max(0.0) } else { 0.0 };
            clamped += usize::from(c > 0.0 && want == 0.0);
            ensure(pmi.get(i, j) == want, || format!("entry ({i}, {j}): {} vs {want}", pmi.get(i, j)))?;
        }
    }
    Ok(format!("5-word corpus, {clamped} clamped entries"))
}

fn fdr_values() -> Outcome {
    let names = vec!["x".to_string(), "y".to_string(), "z".to_string()];
    let err = |e: pwvec::Error| e.to_string();
    let same = DMatrix::from_row_slice(4, 2, &[-1.0, 0.0, 1.0, 0.0, 0.0, 2.0, 0.0, -2.0]);
    let zero = fdr(&LabeledWindowSet::new(same, vec![0, 0, 1, 1], names.clone()).map_err(err)?).map_err(err)?;
    ensure(zero == 0.0, || format!("identical means gave {zero}"))?;
    let pm = DMatrix::from_column_slice(4, 1, &[-2.0, 0.0, 0.0, 2.0]);
    let one = fdr(&LabeledWindowSet::new(pm, vec![0, 0, 1, 1], names.clone()).map_err(err)?).map_err(err)?;
    ensure((one - 1.0).abs() <= 1e-8, || format!("±1 means gave {one}"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let labels: Vec<u32> = (0..90).map(|r| (r % 3) as u32).collect();
    let rows = DMatrix::from_fn(90, 4, |r, j| rng.random_range(-1.0..1.0) + (r % 3) as f64 * (j as f64 - 1.5));
    let base = fdr(&LabeledWindowSet::new(rows.clone(), labels.clone(), names.clone()).map_err(err)?).map_err(err)?;
    let mut worst = 0.0f64;
    let mut maps = 0;
    while maps < 20 {
        let a = uniform(&mut rng, 4, 4, -1.0, 1.0);
        if a.determinant().abs() < 1e-2 {
            continue;
        }
        maps += 1;
        let b = uniform(&mut rng, 1, 4, -5.0, 5.0);
        let mut moved = &rows * a.transpose();
        for mut row in moved.row_iter_mut() {
            row += &b;
        }
        let got = fdr(&LabeledWindowSet::new(moved, labels.clone(), names.clone()).map_err(err)?).map_err(err)?;
        worst = worst.max((got - base).abs());
    }
    ensure(worst <= 1e-6, || format!("affine deviation {worst:e}"))?;
    Ok(format!("0, {one:.10}, affine deviation {worst:.1e}"))
}

fn log_det_covariance(x: &DMatrix<f64>) -> f64 {
    let (n, k) = x.shape();
    let mean: Vec<f64> = (0..k).map(|j| x.column(j).sum() / n as f64).collect();
    let cov = DMatrix::from_fn(k, k, |a, b| {
        (0..n).map(|i| (x[(i, a)] - mean[a]) * (x[(i, b)] - mean[b])).sum::<f64>() / (n - 1) as f64
    });
    let l = cov.cholesky().expect("positive definite").l();
    2.0 * l.diagonal().iter().map(|d: &f64| d.ln()).sum::<f64>()
}

fn log_gv() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (mut oracle, mut scaling) = (0.0f64, 0.0f64);
    for trial in 0..30 {
        let k = 1 + trial % 6;
        let x = uniform(&mut rng, 200, k, -3.0, 3.0);
        let got = log_generalized_variance(&x).map_err(|e| e.to_string())?;
        oracle = oracle.max((got - log_det_covariance(&x)).abs());
        let c = rng.random_range(0.1..10.0);
        let scaled = log_generalized_variance(&(&x * c)).map_err(|e| e.to_string())?;
        scaling = scaling.max((scaled - got - k as f64 * (c * c).ln()).abs());
    }
    ensure(oracle <= 1e-10, || format!("oracle deviation {oracle:e}"))?;
    ensure(scaling <= 1e-8, || format!("scaling deviation {scaling:e}"))?;
    Ok(format!("oracle {oracle:.1e}, scaling {scaling:.1e}"))
}

fn entropy_tuner() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let m = SparseMatrix::from_dense(&DMatrix::from_fn(10, 400, |_, _| rng.random::<f64>().powi(4)));
    let params = AnnealParams {
        seed: 21,
        ..Default::default()
    };
    let sample = EntropySample::from_columns(&m, &sample_columns(m.ncols(), params.sample_words, params.seed));
    let h = |p: f64| estimate_entropy(&sample.transformed(&TransformSpec::Power(p)).unwrap(), &params).unwrap();
    let tuned = tune_power(&m, PowerMode::Single, &params).map_err(|e| e.to_string())?;
    let TransformSpec::Power(p) = tuned.spec else {
        return Err(format!("single mode returned {}", tuned.spec));
    };
    let identity = h(1.0);
    let objective = tuned.objective.ok_or("no objective")?;
    ensure(objective >= identity, || format!("objective {objective} below identity {identity}"))?;
    ensure(h(p) == objective, || "reported objective is not the entropy at the returned power".into())?;
    let (grid, _) = (1..=20)
        .map(|i| i as f64 * 0.05)
        .map(|q| (q, h(q)))
        .fold((0.0, f64::NEG_INFINITY), |b, c| if c.1 > b.1 { c } else { b });
    ensure((p - grid).abs() <= 0.15, || format!("tuned {p:.3}, grid optimum {grid:.2}"))?;
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(60), || format!("took {elapsed:?}"))?;
    Ok(format!("p = {p:.3}, grid optimum {grid:.2}, {elapsed:.2?}"))
}

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(name)
}

/// vocab → cooc → embed → eval gv + spectrum in `dir`; returns every file
/// written, sorted by name.
fn pipeline(dir: &Path) -> Result<Vec<(String, Vec<u8>)>, String> {
    let p = |n: &str| dir.join(n).display().to_string();
    let config = format!(
        "corpus = {}\nvocab = {}\nfeatures = word_form:window=2:symmetric\nmatrix = {}\ntransform = tune_single\nk = 25\nseed = 42\n",
        data("corpus.txt").display(),
        p("corpus.vocab"),
        p("corpus.spill"),
    );
    fs::write(dir.join("run.cfg"), config).map_err(|e| e.to_string())?;
    let cfg = p("run.cfg");
    let steps: [Vec<String>; 5] = [
        vec!["vocab".into()],
        vec!["cooc".into()],
        vec!["embed".into(), "--output".into(), p("vectors.txt")],
        vec!["eval".into(), "gv".into(), p("vectors.txt"), "--output".into(), p("gv.report")],
        vec!["eval".into(), "spectrum".into(), p("vectors.txt"), "--output".into(), p("spectrum.report")],
    ];
    for args in steps {
        let out = Command::new(env!("CARGO_BIN_EXE_pwvec"))
            .args(&args)
            .args(["--config", &cfg])
            .output()
            .map_err(|e| e.to_string())?;
        if !out.status.success() {
            return Err(format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr)));
        }
    }
    let mut files = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| e.to_string())? {
        let path = entry.map_err(|e| e.to_string())?.path();
        let name = path.file_name().unwrap().to_string_lossy().into_owned();
        if name != "run.cfg" {
            let mut bytes = fs::read(&path).map_err(|e| e.to_string())?;
            if name.ends_with(".manifest") {
                // the manifest names the run directory
                bytes = String::from_utf8_lossy(&bytes).replace(&dir.display().to_string(), "").into_bytes();
            }
            files.push((name, bytes));
        }
    }
    files.sort();
    Ok(files)
}

fn end_to_end() -> Outcome {
    let a = tempfile::TempDir::new().map_err(|e| e.to_string())?;
    let b = tempfile::TempDir::new().map_err(|e| e.to_string())?;
    let start = Instant::now();
    let first = pipeline(a.path())?;
    let elapsed = start.elapsed();
    let second = pipeline(b.path())?;
    ensure(elapsed < Duration::from_secs(60), || format!("took {elapsed:?}"))?;
    let names: Vec<&str> = first.iter().map(|f| f.0.as_str()).collect();
    for needed in ["vectors.txt", "gv.report", "spectrum.report.tv", "spectrum.report.lgv"] {
        ensure(names.contains(&needed), || format!("{needed} missing"))?;
    }
    ensure(first == second, || {
        let differing: Vec<&str> = first
            .iter()
            .zip(&second)
            .filter(|(x, y)| x != y)
            .map(|(x, _)| x.0.as_str())
            .collect();
        format!("runs differ in {differing:?}")
    })?;
    let header = String::from_utf8_lossy(&first.iter().find(|f| f.0 == "vectors.txt").unwrap().1)
        .lines()
        .next()
        .unwrap_or_default()
        .to_string();
    Ok(format!("{} files identical across runs, vectors {header}, {elapsed:.2?}", first.len()))
}

fn sentence_count() -> Outcome {
    let text = "the cat sat\non the mat\nit was\nflat\nand the cat slept on it";
    let corpus = raw_corpus(text);
    let lengths: Vec<usize> = text.lines().map(|l| l.split(' ').count()).collect();
    for off in [-3, -2, -1, 1, 2, 3] {
        let space = FeatureSpace::build(&corpus, FeatureKind::WordForm, ContextFn::neighbour(off)).map_err(|e| e.to_string())?;
        let total = count_matrix(&corpus, &space).map_err(|e| e.to_string())?.total();
        let hand: usize = lengths.iter().map(|&l| l.saturating_sub(off.unsigned_abs() as usize)).sum();
        ensure(total == hand as f64, || format!("offset {off}: {total} vs {hand}"))?;
    }
    Ok("offsets ±1..±3 match the hand count".into())
}

fn main() -> ExitCode {
    let criteria: [Criterion; 12] = [
        ("centred SVD oracle", centred_svd_oracle),
        ("QR rank-one update", qr_update),
        ("classic and correlation PCA equivalence", pca_equivalence),
        ("normalized eigenvalue weighting whitens", whitening),
        ("transpose duality", transpose_duality),
        ("window and union combination algebra", combination_algebra),
        ("PMI reduction", pmi_reduction),
        ("FDR unit values and affine invariance", fdr_values),
        ("log generalized variance oracle and scaling", log_gv),
        ("entropy power tuner", entropy_tuner),
        ("end-to-end smoke run", end_to_end),
        ("singleton context counts", sentence_count),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        match std::panic::catch_unwind(check) {
            Ok(Ok(detail)) => println!("PASS {:>2} {name}: {detail}", i + 1),
            Ok(Err(why)) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {why}", i + 1);
            }
            Err(_) => {
                failed += 1;
                println!("FAIL {:>2} {name}: panicked", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
