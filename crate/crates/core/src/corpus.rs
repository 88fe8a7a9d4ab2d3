//! Vocabulary construction and corpus ingestion.
//!
//! Ingestion is two-pass: [`Vocabulary::build`] needs global frequencies to
//! apply the `min_count` threshold, then [`Corpus`] maps every token through
//! the finished vocabulary (unseen tokens become [`UNKNOWN`]).

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::ops::Range;
use std::path::Path;
use std::sync::Arc;

use crate::{Error, Result};

pub const UNKNOWN: &str = "<unk>";
pub const NUMBER: &str = "<num>";
pub const ROOT: &str = "<root>";

pub const UNKNOWN_ID: u32 = 0;
pub const NUMBER_ID: u32 = 1;
pub const ROOT_ID: u32 = 2;

const SPECIALS: [&str; 3] = [UNKNOWN, NUMBER, ROOT];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NormalizationRules {
    pub lowercase: bool,
    /// Digit-only tokens become [`NUMBER`].
    pub collapse_digits: bool,
    /// Types seen fewer times than this are replaced with [`UNKNOWN`].
    pub min_count: u64,
}

impl Default for NormalizationRules {
    fn default() -> Self {
        NormalizationRules {
            lowercase: false,
            collapse_digits: true,
            min_count: 1,
        }
    }
}

impl NormalizationRules {
    pub fn validate(&self) -> Result<()> {
        if self.min_count == 0 {
            return Err(Error::InvalidParam("min_count must be at least 1".into()));
        }
        Ok(())
    }
}

pub fn normalize_token(raw: &str, rules: &NormalizationRules) -> String {
    if rules.collapse_digits && !raw.is_empty() && raw.bytes().all(|b| b.is_ascii_digit()) {
        return NUMBER.to_string();
    }
    if rules.lowercase {
        raw.to_lowercase()
    } else {
        raw.to_string()
    }
}

/// Word types with their frequencies. Ids 0, 1, 2 are always the special
/// tokens [`UNKNOWN`], [`NUMBER`] and [`ROOT`]; ordinary types follow in
/// descending frequency, ties broken lexicographically.
#[derive(Clone, Debug, PartialEq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    counts: Vec<u64>,
    index: HashMap<String, u32>,
}

impl Vocabulary {
    /// Builds a vocabulary from a stream of raw tokens.
    pub fn build<'a, I>(stream: I, rules: &NormalizationRules) -> Result<Self>
    where
        I: IntoIterator<Item = &'a str>,
    {
        rules.validate()?;
        let mut freq: HashMap<String, u64> = HashMap::new();
        let mut total = 0u64;
        for raw in stream {
            if raw.is_empty() {
                continue;
            }
            total += 1;
            *freq.entry(normalize_token(raw, rules)).or_insert(0) += 1;
        }
        if total == 0 {
            return Err(Error::EmptyCorpus);
        }
        Ok(Self::from_frequencies(freq, rules.min_count))
    }

    fn from_frequencies(mut freq: HashMap<String, u64>, min_count: u64) -> Self {
        let mut special_counts = [0u64; 3];
        special_counts[NUMBER_ID as usize] = freq.remove(NUMBER).unwrap_or(0);
        // literal special strings in the input count as unknown words
        special_counts[UNKNOWN_ID as usize] =
            freq.remove(UNKNOWN).unwrap_or(0) + freq.remove(ROOT).unwrap_or(0);

        let mut kept: Vec<(String, u64)> = Vec::with_capacity(freq.len());
        for (tok, c) in freq {
            if c >= min_count {
                kept.push((tok, c));
            } else {
                special_counts[UNKNOWN_ID as usize] += c;
            }
        }
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));

        let entries = SPECIALS
            .iter()
            .map(|s| s.to_string())
            .zip(special_counts)
            .chain(kept);
        Self::from_entries_unchecked(entries)
    }

    fn from_entries_unchecked(entries: impl IntoIterator<Item = (String, u64)>) -> Self {
        let mut tokens = Vec::new();
        let mut counts = Vec::new();
        let mut index = HashMap::new();
        for (tok, c) in entries {
            index.insert(tok.clone(), tokens.len() as u32);
            tokens.push(tok);
            counts.push(c);
        }
        Vocabulary {
            tokens,
            counts,
            index,
        }
    }

    /// Builds a vocabulary from an explicit token list, e.g. the rows of an
    /// embedding file. Specials are inserted first when missing.
    pub fn from_tokens<S: AsRef<str>>(tokens: &[S]) -> Result<Self> {
        let mut entries: Vec<(String, u64)> = SPECIALS.iter().map(|s| (s.to_string(), 0)).collect();
        let mut seen: std::collections::HashSet<&str> = SPECIALS.iter().copied().collect();
        for t in tokens {
            let t = t.as_ref();
            if seen.insert(t) {
                entries.push((t.to_string(), 0));
            }
        }
        Ok(Self::from_entries_unchecked(entries))
    }

    pub fn build_from_raw_file(path: &Path, rules: &NormalizationRules) -> Result<Self> {
        let text = read_utf8(path)?;
        Self::build(text.split_ascii_whitespace(), rules)
    }

    pub fn build_from_conllu_file(path: &Path, rules: &NormalizationRules) -> Result<Self> {
        let text = read_utf8(path)?;
        Self::build_from_conllu_str(&text, &path.display().to_string(), rules)
    }

    pub fn build_from_conllu_str(text: &str, name: &str, rules: &NormalizationRules) -> Result<Self> {
        let sentences = parse_conllu(text, name)?;
        Self::build(
            sentences.iter().flat_map(|s| s.iter().map(|r| r.form.as_str())),
            rules,
        )
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    /// Id of an already-normalized token, falling back to [`UNKNOWN_ID`].
    pub fn lookup(&self, token: &str) -> u32 {
        self.id(token).unwrap_or(UNKNOWN_ID)
    }

    pub fn token(&self, id: u32) -> &str {
        &self.tokens[id as usize]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn count(&self, id: u32) -> u64 {
        self.counts[id as usize]
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn is_special(id: u32) -> bool {
        id <= ROOT_ID
    }

    /// Writes `token<TAB>count` lines in id order.
    pub fn write_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for (t, c) in self.tokens.iter().zip(&self.counts) {
            writeln!(w, "{t}\t{c}")?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_to(&mut buf).map_err(|e| Error::io(path, e))?;
        fs::write(path, buf).map_err(|e| Error::io(path, e))
    }

    pub fn read_from<R: Read>(r: R, name: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (no, line) in BufReader::new(r).lines().enumerate() {
            let line = line.map_err(|e| Error::io(name, e))?;
            if line.is_empty() {
                continue;
            }
            let (tok, count) = line
                .split_once('\t')
                .ok_or_else(|| Error::format(name, no + 1, "expected token<TAB>count"))?;
            let count: u64 = count
                .trim()
                .parse()
                .map_err(|_| Error::format(name, no + 1, format!("bad count {count:?}")))?;
            entries.push((tok.to_string(), count));
        }
        if entries.len() < 3 || entries.iter().zip(SPECIALS).any(|((t, _), s)| t != s) {
            return Err(Error::format(name, 1, "vocabulary must start with the special tokens"));
        }
        let vocab = Self::from_entries_unchecked(entries);
        if vocab.index.len() != vocab.tokens.len() {
            return Err(Error::format(name, 0, "duplicate token in vocabulary"));
        }
        Ok(vocab)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(f, &path.display().to_string())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Token {
    pub word: u32,
    /// Form annotation; equals `word` since word variables are forms here.
    pub form: u32,
    pub pos: Option<u32>,
    /// Offset from this token to its syntactic parent within the sentence;
    /// `Some(0)` marks the sentence root.
    pub head: Option<i32>,
    pub sentence: u32,
}

/// Indexed token stream over a fixed vocabulary.
#[derive(Clone, Debug)]
pub struct Corpus {
    tokens: Vec<Token>,
    sentences: Vec<Range<usize>>,
    vocab: Arc<Vocabulary>,
    tags: Vec<String>,
    has_pos: bool,
    has_heads: bool,
    rejected_heads: usize,
}

impl Corpus {
    pub fn builder(vocab: Arc<Vocabulary>, rules: NormalizationRules) -> CorpusBuilder {
        CorpusBuilder {
            corpus: Corpus {
                tokens: Vec::new(),
                sentences: Vec::new(),
                vocab,
                tags: Vec::new(),
                has_pos: false,
                has_heads: false,
                rejected_heads: 0,
            },
            tag_index: HashMap::new(),
            rules,
        }
    }

    /// Parses whitespace-tokenized text, one sentence per line.
    pub fn from_raw_str(text: &str, vocab: Arc<Vocabulary>, rules: &NormalizationRules) -> Result<Self> {
        let mut b = Corpus::builder(vocab, rules.clone());
        for line in text.lines() {
            let words: Vec<&str> = line.split_ascii_whitespace().collect();
            b.push_sentence(&words, None, None);
        }
        b.finish()
    }

    pub fn ingest_raw(path: &Path, vocab: Arc<Vocabulary>, rules: &NormalizationRules) -> Result<Self> {
        let text = read_utf8(path)?;
        Self::from_raw_str(&text, vocab, rules)
    }

    pub fn from_conllu_str(
        text: &str,
        name: &str,
        vocab: Arc<Vocabulary>,
        rules: &NormalizationRules,
    ) -> Result<Self> {
        let sentences = parse_conllu(text, name)?;
        let mut b = Corpus::builder(vocab, rules.clone());
        for rows in &sentences {
            let forms: Vec<&str> = rows.iter().map(|r| r.form.as_str()).collect();
            let tags: Vec<&str> = rows.iter().map(|r| r.upos.as_str()).collect();
            let heads: Option<Vec<i64>> = rows.iter().map(|r| r.head).collect();
            b.push_sentence(&forms, Some(&tags), heads.as_deref());
        }
        b.finish()
    }

    pub fn ingest_conllu(path: &Path, vocab: Arc<Vocabulary>, rules: &NormalizationRules) -> Result<Self> {
        let text = read_utf8(path)?;
        Self::from_conllu_str(&text, &path.display().to_string(), vocab, rules)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[Token] {
        &self.tokens
    }

    pub fn token(&self, t: usize) -> &Token {
        &self.tokens[t]
    }

    pub fn sentences(&self) -> &[Range<usize>] {
        &self.sentences
    }

    pub fn sentence_span(&self, t: usize) -> Range<usize> {
        self.sentences[self.tokens[t].sentence as usize].clone()
    }

    pub fn vocabulary(&self) -> &Arc<Vocabulary> {
        &self.vocab
    }

    /// Tag names indexed by `Token::pos`.
    pub fn tags(&self) -> &[String] {
        &self.tags
    }

    pub fn has_pos(&self) -> bool {
        self.has_pos
    }

    pub fn has_heads(&self) -> bool {
        self.has_heads
    }

    /// Sentences whose head annotation was dropped because it did not form a
    /// tree.
    pub fn rejected_head_sentences(&self) -> usize {
        self.rejected_heads
    }

    /// Copy of the corpus restricted to a range of sentences.
    pub fn slice_sentences(&self, range: Range<usize>) -> Corpus {
        let mut out = Corpus {
            tokens: Vec::new(),
            sentences: Vec::new(),
            vocab: self.vocab.clone(),
            tags: self.tags.clone(),
            has_pos: self.has_pos,
            has_heads: self.has_heads,
            rejected_heads: 0,
        };
        for s in &self.sentences[range] {
            let start = out.tokens.len();
            let sid = out.sentences.len() as u32;
            out.tokens
                .extend(self.tokens[s.clone()].iter().map(|t| Token { sentence: sid, ..*t }));
            out.sentences.push(start..out.tokens.len());
        }
        out
    }
}

pub struct CorpusBuilder {
    corpus: Corpus,
    tag_index: HashMap<String, u32>,
    rules: NormalizationRules,
}

impl CorpusBuilder {
    /// Appends a sentence. `heads` holds 1-based parent positions with 0 for
    /// the root, as in CoNLL-U.
    pub fn push_sentence(&mut self, words: &[&str], tags: Option<&[&str]>, heads: Option<&[i64]>) {
        if words.is_empty() {
            return;
        }
        let c = &mut self.corpus;
        let sid = c.sentences.len() as u32;
        let start = c.tokens.len();
        let offsets = heads.and_then(|h| {
            let offsets = head_offsets(h);
            if offsets.is_none() {
                c.rejected_heads += 1;
            }
            offsets
        });
        for (i, w) in words.iter().enumerate() {
            let id = c.vocab.lookup(&normalize_token(w, &self.rules));
            let pos = tags.map(|t| {
                let tag = t[i];
                match self.tag_index.get(tag) {
                    Some(&p) => p,
                    None => {
                        let p = c.tags.len() as u32;
                        c.tags.push(tag.to_string());
                        self.tag_index.insert(tag.to_string(), p);
                        p
                    }
                }
            });
            c.tokens.push(Token {
                word: id,
                form: id,
                pos,
                head: offsets.as_ref().map(|o| o[i]),
                sentence: sid,
            });
        }
        c.has_pos |= tags.is_some();
        c.has_heads |= offsets.is_some();
        c.sentences.push(start..c.tokens.len());
    }

    pub fn finish(self) -> Result<Corpus> {
        let c = self.corpus;
        if c.tokens.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        if c.has_pos && c.tokens.iter().any(|t| t.pos.is_none()) {
            return Err(Error::InvalidParam(
                "POS annotation must cover every token or none".into(),
            ));
        }
        Ok(c)
    }
}

/// Converts 1-based head positions into relative offsets, or `None` when the
/// heads do not form a tree rooted inside the sentence.
fn head_offsets(heads: &[i64]) -> Option<Vec<i32>> {
    let n = heads.len() as i64;
    if heads.iter().any(|&h| h < 0 || h > n) {
        return None;
    }
    for start in 0..heads.len() {
        let mut cur = start;
        let mut steps = 0;
        loop {
            let h = heads[cur];
            if h == 0 {
                break;
            }
            steps += 1;
            if steps > heads.len() {
                return None;
            }
            cur = (h - 1) as usize;
        }
    }
    Some(
        heads
            .iter()
            .enumerate()
            .map(|(i, &h)| if h == 0 { 0 } else { (h - 1 - i as i64) as i32 })
            .collect(),
    )
}

#[derive(Debug)]
struct ConlluRow {
    form: String,
    upos: String,
    /// `None` when the column holds `_`.
    head: Option<i64>,
}

fn parse_conllu(text: &str, name: &str) -> Result<Vec<Vec<ConlluRow>>> {
    let mut sentences = Vec::new();
    let mut current = Vec::new();
    for (no, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            if !current.is_empty() {
                sentences.push(std::mem::take(&mut current));
            }
            continue;
        }
        if line.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 10 {
            return Err(Error::format(
                name,
                no + 1,
                format!("expected 10 tab-separated columns, found {}", cols.len()),
            ));
        }
        let id = cols[0];
        if id.contains('-') || id.contains('.') {
            continue;
        }
        if id.parse::<u32>().is_err() {
            return Err(Error::format(name, no + 1, format!("bad token id {id:?}")));
        }
        let head = match cols[6] {
            "_" => None,
            h => Some(
                h.parse::<i64>()
                    .map_err(|_| Error::format(name, no + 1, format!("non-integer HEAD {h:?}")))?,
            ),
        };
        current.push(ConlluRow {
            form: cols[1].to_string(),
            upos: cols[3].to_string(),
            head,
        });
    }
    if !current.is_empty() {
        sentences.push(current);
    }
    Ok(sentences)
}

pub(crate) fn read_utf8(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    String::from_utf8(bytes).map_err(|e| {
        Error::io(
            path,
            std::io::Error::new(std::io::ErrorKind::InvalidData, e.utf8_error()),
        )
    })
}
