use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::Arc;

use nalgebra::DMatrix;
use pwvec::config::{stage_seed, RunConfig, Stage};
use pwvec::coocmat::{combine_union, combine_window, count_matrix, SparseMatrix};
use pwvec::corpus::{Corpus, NormalizationRules, Vocabulary};
use pwvec::features::{ContextFn, FeatureKind, FeatureSpace};
use pwvec::gpca::{principal_word_vectors, Embeddings};
use tempfile::TempDir;

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(name)
}

fn pwvec(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pwvec"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = pwvec(args);
    assert!(
        out.status.success(),
        "pwvec {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8(out.stderr.clone()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_config(dir: &Path, name: &str, lines: &[String]) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, lines.join("\n") + "\n").unwrap();
    path
}

/// The bundled corpus as the CLI sees it under default rules.
fn library_corpus() -> Corpus {
    let rules = NormalizationRules::default();
    let vocab = Vocabulary::build_from_raw_file(&data("corpus.txt"), &rules).unwrap();
    Corpus::ingest_raw(&data("corpus.txt"), Arc::new(vocab), &rules).unwrap()
}

/// A value from a `key = value` report.
fn report_value(report: &str, key: &str) -> String {
    report
        .lines()
        .find_map(|l| l.strip_prefix(&format!("{key} = ")))
        .unwrap_or_else(|| panic!("no {key} in\n{report}"))
        .to_string()
}

#[test]
fn vocab_lists_specials_first_and_is_deterministic() {
    let dir = TempDir::new().unwrap();
    let a = dir.path().join("a.vocab");
    let b = dir.path().join("b.vocab");
    ok(&["vocab", s(&data("corpus.txt")), "--output", s(&a)]);
    ok(&["vocab", s(&data("corpus.txt")), "--output", s(&b)]);
    let text = fs::read_to_string(&a).unwrap();
    let tokens: Vec<&str> = text.lines().map(|l| l.split('\t').next().unwrap()).collect();
    assert_eq!(&tokens[..3], ["<unk>", "<num>", "<root>"]);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    assert_eq!(stdout(&ok(&["vocab", s(&data("corpus.txt"))])), text);
}

#[test]
fn vocab_honours_min_count() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("v");
    ok(&["vocab", s(&data("corpus.txt")), "--min-count", "50", "--output", s(&out)]);
    let vocab = Vocabulary::load(&out).unwrap();
    let all = Vocabulary::read_from(stdout(&ok(&["vocab", s(&data("corpus.txt"))])).as_bytes(), "stdout").unwrap();
    assert!(vocab.len() < all.len());
    assert!((3..vocab.len() as u32).all(|j| vocab.count(j) >= 50));
    assert_eq!(vocab.total(), all.total());
}

#[test]
fn cooc_window_is_the_weighted_sum_of_offsets() {
    let dir = TempDir::new().unwrap();
    let spill = dir.path().join("m.spill");
    let cfg = write_config(
        dir.path(),
        "run.cfg",
        &[
            format!("corpus = {}", s(&data("corpus.txt"))),
            "features = word_form:window=2:symmetric".into(),
            format!("matrix = {}", s(&spill)),
        ],
    );
    ok(&["cooc", "--config", s(&cfg)]);
    let got = SparseMatrix::load_spill(&spill).unwrap();

    let corpus = library_corpus();
    let offsets = [-2, -1, 1, 2];
    let ctx: Vec<ContextFn> = offsets.iter().map(|&o| ContextFn::neighbour(o)).collect();
    let spaces = FeatureSpace::build_shared(&corpus, FeatureKind::WordForm, &ctx).unwrap();
    let mats: Vec<SparseMatrix> = spaces.iter().map(|sp| count_matrix(&corpus, sp).unwrap()).collect();
    let expected = combine_window(&mats, &[0.5, 1.0, 1.0, 0.5]).unwrap();
    assert_eq!(got.to_dense(), expected.to_dense());

    let manifest = fs::read_to_string(dir.path().join("m.spill.features")).unwrap();
    assert!(manifest.starts_with("# word_form:window=2:symmetric\n"));
    assert_eq!(manifest.lines().count(), spaces[0].len() + 1);
}

#[test]
fn cooc_union_keeps_declared_order() {
    let dir = TempDir::new().unwrap();
    let spill = dir.path().join("u.spill");
    let cfg = write_config(
        dir.path(),
        "run.cfg",
        &[
            format!("corpus = {}", s(&data("corpus.txt"))),
            "features = word_form:offset=1,word_form:offset=-1".into(),
        ],
    );
    ok(&["cooc", "--config", s(&cfg), "--output", s(&spill)]);
    let got = SparseMatrix::load_spill(&spill).unwrap();
    let corpus = library_corpus();
    let block = |o| {
        let sp = FeatureSpace::build(&corpus, FeatureKind::WordForm, ContextFn::neighbour(o)).unwrap();
        count_matrix(&corpus, &sp).unwrap()
    };
    let (right, left) = (block(1), block(-1));
    assert_eq!(got.to_dense(), combine_union(&[right.clone(), left]).unwrap().to_dense());
    let manifest = fs::read_to_string(dir.path().join("u.spill.features")).unwrap();
    let headers: Vec<(usize, &str)> = manifest
        .lines()
        .enumerate()
        .filter(|(_, l)| l.starts_with('#'))
        .collect();
    assert_eq!(headers, vec![(0, "# word_form:offset=1"), (right.nrows() + 1, "# word_form:offset=-1")]);
}

#[test]
fn dependency_context_on_raw_corpus_fails() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        dir.path(),
        "dep.cfg",
        &[
            format!("corpus = {}", s(&data("corpus.txt"))),
            "features = word_form:ancestor=1".into(),
            format!("matrix = {}", s(&dir.path().join("m"))),
        ],
    );
    let out = pwvec(&["cooc", "--config", s(&cfg)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("dependency context requires annotated corpus"));
}

#[test]
fn dependency_context_on_conllu() {
    let dir = TempDir::new().unwrap();
    let spill = dir.path().join("d.spill");
    let cfg = write_config(
        dir.path(),
        "dep.cfg",
        &[
            format!("corpus = {}", s(&data("tagged.conllu"))),
            "format = conllu".into(),
            "features = pos:ancestors=2,word_form:offset=-1".into(),
        ],
    );
    ok(&["cooc", "--config", s(&cfg), "--output", s(&spill)]);
    let manifest = fs::read_to_string(dir.path().join("d.spill.features")).unwrap();
    assert!(manifest.lines().any(|l| l.ends_with("\t<root>")));
}

#[test]
fn embed_matches_library_output() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("emb.txt");
    let lines = vec![
        format!("corpus = {}", s(&data("corpus.txt"))),
        "features = word_form:window=1:symmetric".into(),
        "k = 8".into(),
        "seed = 3".into(),
    ];
    let cfg = write_config(dir.path(), "run.cfg", &lines);
    ok(&["embed", "--config", s(&cfg), "--output", s(&out)]);

    let parsed = RunConfig::parse(&lines.join("\n"), "run.cfg").unwrap();
    let emb = principal_word_vectors(&library_corpus(), &parsed.features, &parsed.gpca_params()).unwrap();
    let mut expected = Vec::new();
    emb.write_to(&mut expected).unwrap();
    assert_eq!(fs::read(&out).unwrap(), expected);
    let header = fs::read_to_string(&out).unwrap().lines().next().unwrap().to_string();
    assert_eq!(header, format!("{} 8", library_corpus().vocabulary().len()));
}

#[test]
fn seeds_change_vectors_and_are_recorded() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        dir.path(),
        "run.cfg",
        &[
            format!("corpus = {}", s(&data("corpus.txt"))),
            "k = 5".into(),
            "power_iters = 0".into(),
            "transform = tune_single".into(),
            "anneal_iterations = 20".into(),
            "seed = 100".into(),
        ],
    );
    let a = dir.path().join("a.txt");
    let b = dir.path().join("b.txt");
    ok(&["embed", "--config", s(&cfg), "--output", s(&a)]);
    ok(&["embed", "--config", s(&cfg), "--seed", "101", "--output", s(&b)]);
    assert_ne!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    for (path, seed) in [(&a, 100u64), (&b, 101)] {
        let manifest = fs::read_to_string(format!("{}.manifest", s(path))).unwrap();
        assert!(manifest.contains(&format!("sketch seed {}", stage_seed(seed, Stage::Sketch))));
        assert!(manifest.contains(&format!("anneal seed {}", stage_seed(seed, Stage::Anneal))));
        assert!(manifest.lines().any(|l| l == format!("seed = {seed}")));
    }
}

#[test]
fn oversized_k_is_reduced_with_a_warning() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("emb.txt");
    let cfg = write_config(
        dir.path(),
        "run.cfg",
        &[
            format!("corpus = {}", s(&data("tagged.conllu"))),
            "format = conllu".into(),
            "features = pos:offset=1".into(),
            "k = 40".into(),
        ],
    );
    let res = ok(&["embed", "--config", s(&cfg), "--output", s(&out)]);
    let emb = Embeddings::load(&out).unwrap();
    assert!(emb.k() < 40);
    assert!(stderr(&res).contains("requested 40 dimensions"), "{}", stderr(&res));
}

#[test]
fn manifest_replays_to_identical_vectors() {
    let dir = TempDir::new().unwrap();
    let first = dir.path().join("first.txt");
    let cfg = write_config(
        dir.path(),
        "run.cfg",
        &[
            format!("corpus = {}", s(&data("corpus.txt"))),
            "features = word_form:window=2:symmetric".into(),
            "metric = iff".into(),
            "weight = iwf".into(),
            "transform = tune_single".into(),
            "anneal_iterations = 30".into(),
            "k = 6".into(),
            "seed = 9".into(),
        ],
    );
    ok(&["embed", "--config", s(&cfg), "--output", s(&first)]);
    let manifest = format!("{}.manifest", s(&first));
    assert!(fs::read_to_string(&manifest).unwrap().contains("transform = power:"));
    let second = dir.path().join("second.txt");
    ok(&["embed", "--config", &manifest, "--output", s(&second)]);
    assert_eq!(fs::read(&first).unwrap(), fs::read(&second).unwrap());
}

#[test]
fn embed_from_spilled_matrix() {
    let dir = TempDir::new().unwrap();
    let vocab = dir.path().join("v");
    let spill = dir.path().join("m");
    let lines = [
        format!("corpus = {}", s(&data("corpus.txt"))),
        format!("vocab = {}", s(&vocab)),
        format!("matrix = {}", s(&spill)),
        "k = 4".into(),
    ];
    let cfg = write_config(dir.path(), "a.cfg", &lines);
    ok(&["vocab", "--config", s(&cfg)]);
    ok(&["cooc", "--config", s(&cfg)]);
    let direct = dir.path().join("direct.txt");
    ok(&["embed", "--config", s(&cfg), "--output", s(&direct)]);
    let cfg2 = write_config(dir.path(), "b.cfg", &lines[1..]);
    let from_spill = dir.path().join("spill.txt");
    ok(&["embed", "--config", s(&cfg2), "--output", s(&from_spill)]);
    assert_eq!(fs::read(&direct).unwrap(), fs::read(&from_spill).unwrap());
}

fn write_embeddings(path: &Path, tokens: &[&str], rows: &[&[f64]]) {
    let k = rows[0].len();
    let emb = Embeddings {
        tokens: tokens.iter().map(|t| t.to_string()).collect(),
        vectors: DMatrix::from_fn(rows.len(), k, |i, j| rows[i][j]),
        singular_values: vec![1.0; k],
        requested_k: k,
        transform: None,
        manifest: Vec::new(),
    };
    emb.save(path).unwrap();
}

#[test]
fn eval_gv_matches_hand_covariance() {
    let dir = TempDir::new().unwrap();
    let emb = dir.path().join("e.txt");
    write_embeddings(&emb, &["a", "b", "c", "d"], &[&[1.0, 0.0], &[-1.0, 0.0], &[0.0, 2.0], &[0.0, -2.0]]);
    let report = stdout(&ok(&["eval", "gv", s(&emb)]));
    // covariance diag(2/3, 8/3)
    let got: f64 = report_value(&report, "log_generalized_variance").parse().unwrap();
    assert!((got - (16.0f64 / 9.0).ln()).abs() < 1e-12, "{got}");
    assert_eq!(report_value(&report, "k"), "2");
}

#[test]
fn eval_sim_reports_each_file_and_the_average() {
    let dir = TempDir::new().unwrap();
    let emb = dir.path().join("e.txt");
    write_embeddings(&emb, &["cat", "dog", "car", "bus"], &[&[1.0, 0.1], &[0.9, 0.3], &[0.0, 1.0], &[0.2, 1.0]]);
    let b1 = dir.path().join("one.txt");
    let b2 = dir.path().join("two.txt");
    fs::write(&b1, "cat dog 9\ncat car 1\ndog bus 2\n").unwrap();
    fs::write(&b2, "cat dog 1\ncar bus 2\ncat bus 3\ncat zebra 4\n").unwrap();
    let report = stdout(&ok(&["eval", "sim", s(&emb), s(&b1), s(&b2)]));
    assert_eq!(report_value(&report, "one.txt.pairs"), "3");
    assert_eq!(report_value(&report, "two.txt.oov"), "1");
    let one: f64 = report_value(&report, "one.txt.spearman").parse().unwrap();
    let two: f64 = report_value(&report, "two.txt.spearman").parse().unwrap();
    let avg: f64 = report_value(&report, "average_spearman").parse().unwrap();
    assert_eq!(one, 1.0);
    assert_eq!(avg, (one + two) / 2.0);
}

#[test]
fn eval_fdr_needs_two_classes() {
    let dir = TempDir::new().unwrap();
    let emb = dir.path().join("e.txt");
    write_embeddings(&emb, &["<unk>", "a", "b"], &[&[0.0], &[1.0], &[2.0]]);
    let labels = dir.path().join("one.conllu");
    fs::write(&labels, "1\ta\ta\tX\t_\t_\t0\troot\t_\t_\n2\tb\tb\tX\t_\t_\t1\tdep\t_\t_\n\n").unwrap();
    let out = pwvec(&["eval", "fdr", s(&emb), s(&labels)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("at least two classes"), "{}", stderr(&out));
}

#[test]
fn eval_fdr_on_tagged_corpus() {
    let dir = TempDir::new().unwrap();
    let emb = dir.path().join("e.txt");
    let cfg = write_config(
        dir.path(),
        "run.cfg",
        &[
            format!("corpus = {}", s(&data("tagged.conllu"))),
            "format = conllu".into(),
            "features = word_form:window=1:symmetric".into(),
            "k = 4".into(),
        ],
    );
    ok(&["embed", "--config", s(&cfg), "--output", s(&emb)]);
    let report = stdout(&ok(&["eval", "fdr", s(&emb), s(&data("tagged.conllu")), "--half-window", "1"]));
    assert_eq!(report_value(&report, "dimension"), "12");
    let fdr: f64 = report_value(&report, "fdr").parse().unwrap();
    assert!(fdr > 0.0);
}

#[test]
fn eval_spectrum_writes_series() {
    let dir = TempDir::new().unwrap();
    let emb = dir.path().join("e.txt");
    write_embeddings(&emb, &["a", "b", "c", "d"], &[&[1.0, 0.0], &[-1.0, 0.0], &[0.0, 2.0], &[0.0, -2.0]]);
    let base = dir.path().join("spec");
    ok(&["eval", "spectrum", s(&emb), "--output", s(&base)]);
    let tv = fs::read_to_string(dir.path().join("spec.tv")).unwrap();
    assert_eq!(tv, "1 80.0\n2 100.0\n");
    for suffix in ["eigenvalues", "lev", "lgv"] {
        assert!(dir.path().join(format!("spec.{suffix}")).exists(), "{suffix}");
    }
    assert!(fs::read_to_string(&base).unwrap().contains("total_variance = "));
}

#[test]
fn exit_codes() {
    let dir = TempDir::new().unwrap();
    assert_eq!(pwvec(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(pwvec(&["embed"]).status.code(), Some(1));
    let missing = dir.path().join("nope.cfg");
    assert_eq!(pwvec(&["embed", "--config", s(&missing)]).status.code(), Some(1));
    let bad = write_config(dir.path(), "bad.cfg", &["k = 3".into(), "flavour = mild".into()]);
    let out = pwvec(&["embed", "--config", s(&bad)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains(":2: unknown key \"flavour\""), "{}", stderr(&out));
    let out = pwvec(&["vocab", s(&dir.path().join("absent.txt"))]);
    assert_eq!(out.status.code(), Some(2));
    let broken = dir.path().join("broken.txt");
    fs::write(&broken, "1 2\nx 1.0\n").unwrap();
    assert_eq!(pwvec(&["eval", "gv", s(&broken)]).status.code(), Some(2));
}
