//! Feature variables: a contextual feature kind observed through a context
//! function.
//!
//! A token fires at most one feature of a singleton space: the feature of the
//! position its context function resolves to.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use crate::corpus::{Corpus, ROOT};
use crate::{Error, Result};

/// Maps a token occurrence to the occurrence forming its context.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ContextFn {
    /// The token `offset` positions away. Sentence boundaries block the
    /// context unless `across_sentences` is set.
    Neighbourhood { offset: i32, across_sentences: bool },
    /// The `depth`-th ancestor in the dependency tree; depth 0 is the token
    /// itself.
    Dependency { depth: u32 },
}

impl ContextFn {
    pub fn neighbour(offset: i32) -> Self {
        ContextFn::Neighbourhood {
            offset,
            across_sentences: false,
        }
    }

    pub fn ancestor(depth: u32) -> Self {
        ContextFn::Dependency { depth }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            ContextFn::Neighbourhood { offset: 0, .. } => Err(Error::InvalidParam(
                "neighbourhood offset must be non-zero".into(),
            )),
            _ => Ok(()),
        }
    }
}

impl fmt::Display for ContextFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            ContextFn::Neighbourhood {
                offset,
                across_sentences,
            } => {
                write!(f, "neighbour({offset:+})")?;
                if across_sentences {
                    write!(f, "[corpus]")?;
                }
                Ok(())
            }
            ContextFn::Dependency { depth } => write!(f, "ancestor({depth})"),
        }
    }
}

/// Where a context function lands.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Position {
    Token(usize),
    Root,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum FeatureKind {
    WordForm,
    Pos,
    /// Cartesian product of form and POS, pruned to observed pairs.
    Joint,
}

impl FeatureKind {
    pub fn name(&self) -> &'static str {
        match self {
            FeatureKind::WordForm => "word_form",
            FeatureKind::Pos => "pos",
            FeatureKind::Joint => "joint",
        }
    }

    fn needs_pos(&self) -> bool {
        !matches!(self, FeatureKind::WordForm)
    }
}

/// Resolves the context of token `t` (0-based). `Ok(None)` means the token
/// has no context under `ctx`.
pub fn resolve_context(corpus: &Corpus, t: usize, ctx: ContextFn) -> Result<Option<Position>> {
    if matches!(ctx, ContextFn::Dependency { .. }) && !corpus.has_heads() {
        return Err(Error::MissingHeads);
    }
    Ok(resolve_unchecked(corpus, t, ctx))
}

fn resolve_unchecked(corpus: &Corpus, t: usize, ctx: ContextFn) -> Option<Position> {
    match ctx {
        ContextFn::Neighbourhood {
            offset,
            across_sentences,
        } => {
            let target = t as i64 + offset as i64;
            let span = if across_sentences {
                0..corpus.len()
            } else {
                corpus.sentence_span(t)
            };
            (target >= span.start as i64 && target < span.end as i64)
                .then_some(Position::Token(target as usize))
        }
        ContextFn::Dependency { depth } => {
            let mut cur = t;
            for _ in 0..depth {
                match corpus.token(cur).head? {
                    0 => return Some(Position::Root),
                    off => cur = (cur as i64 + off as i64) as usize,
                }
            }
            Some(Position::Token(cur))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
enum FeatureKey {
    Root,
    Form(u32),
    Pos(u32),
    Joint(u32, u32),
}

/// Enumerated feature variables of one kind, seen through one context
/// function. Spaces built together with [`FeatureSpace::build_shared`] share
/// their symbol table.
#[derive(Clone, Debug)]
pub struct FeatureSpace {
    kind: FeatureKind,
    context: ContextFn,
    symbols: Arc<Vec<String>>,
    index: Arc<HashMap<FeatureKey, u32>>,
}

impl FeatureSpace {
    /// Enumerates every feature symbol realizable as a context of some token
    /// in `corpus`. Ids follow lexicographic symbol order.
    pub fn build(corpus: &Corpus, kind: FeatureKind, ctx: ContextFn) -> Result<Self> {
        Ok(Self::build_shared(corpus, kind, &[ctx])?.remove(0))
    }

    /// One space per context, all over the union of their realizable
    /// symbols, so that the resulting count matrices are conformable.
    pub fn build_shared(corpus: &Corpus, kind: FeatureKind, contexts: &[ContextFn]) -> Result<Vec<Self>> {
        if contexts.is_empty() {
            return Err(Error::InvalidParam("no context functions given".into()));
        }
        check_kind(corpus, kind)?;
        let mut keys = BTreeMap::new();
        for &ctx in contexts {
            ctx.validate()?;
            if matches!(ctx, ContextFn::Dependency { .. }) && !corpus.has_heads() {
                return Err(Error::MissingHeads);
            }
            for t in 0..corpus.len() {
                if let Some(pos) = resolve_unchecked(corpus, t, ctx) {
                    let key = key_at(corpus, pos, kind);
                    keys.entry(key).or_insert_with(|| symbol_of(corpus, key));
                }
            }
        }
        let base = Self::from_keys(kind, contexts[0], keys.into_iter().map(|(k, s)| (s, k)));
        Ok(contexts.iter().map(|&c| base.with_context(c)).collect())
    }

    /// A space over an explicit symbol list, e.g. one read back from a
    /// manifest. Unknown symbols are an error.
    pub fn with_symbols<S: AsRef<str>>(
        corpus: &Corpus,
        kind: FeatureKind,
        ctx: ContextFn,
        symbols: &[S],
    ) -> Result<Self> {
        ctx.validate()?;
        check_kind(corpus, kind)?;
        let vocab = corpus.vocabulary();
        let tag_id = |t: &str| corpus.tags().iter().position(|x| x == t).map(|p| p as u32);
        let mut entries = Vec::with_capacity(symbols.len());
        for s in symbols {
            let s = s.as_ref();
            let key = if s == ROOT {
                Some(FeatureKey::Root)
            } else {
                match kind {
                    FeatureKind::WordForm => vocab.id(s).map(FeatureKey::Form),
                    FeatureKind::Pos => tag_id(s).map(FeatureKey::Pos),
                    FeatureKind::Joint => s.split_once('\t').and_then(|(f, p)| {
                        Some(FeatureKey::Joint(vocab.id(f)?, tag_id(p)?))
                    }),
                }
            };
            let key = key.ok_or_else(|| Error::InvalidParam(format!("unknown feature symbol {s:?}")))?;
            entries.push((s.to_string(), key));
        }
        Ok(Self::from_keys(kind, ctx, entries))
    }

    fn from_keys(kind: FeatureKind, ctx: ContextFn, entries: impl IntoIterator<Item = (String, FeatureKey)>) -> Self {
        let mut entries: Vec<(String, FeatureKey)> = entries.into_iter().collect();
        entries.sort();
        entries.dedup_by(|a, b| a.1 == b.1);
        let index = entries
            .iter()
            .enumerate()
            .map(|(i, (_, k))| (*k, i as u32))
            .collect();
        FeatureSpace {
            kind,
            context: ctx,
            symbols: Arc::new(entries.into_iter().map(|(s, _)| s).collect()),
            index: Arc::new(index),
        }
    }

    /// Same symbol table, different context function.
    pub fn with_context(&self, ctx: ContextFn) -> Self {
        FeatureSpace {
            context: ctx,
            ..self.clone()
        }
    }

    pub fn kind(&self) -> FeatureKind {
        self.kind
    }

    pub fn context(&self) -> ContextFn {
        self.context
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }

    pub fn symbol(&self, id: u32) -> &str {
        &self.symbols[id as usize]
    }

    pub fn id_of(&self, symbol: &str) -> Option<u32> {
        self.symbols
            .binary_search_by(|s| s.as_str().cmp(symbol))
            .ok()
            .map(|i| i as u32)
    }

    pub fn shares_symbols_with(&self, other: &FeatureSpace) -> bool {
        Arc::ptr_eq(&self.symbols, &other.symbols) || self.symbols == other.symbols
    }

    /// Writes `feature-id<TAB>symbol` lines.
    pub fn write_manifest<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for (i, s) in self.symbols.iter().enumerate() {
            writeln!(w, "{i}\t{s}")?;
        }
        Ok(())
    }

    /// Reads the symbol column of a manifest written by
    /// [`FeatureSpace::write_manifest`].
    pub fn read_manifest(path: &Path) -> Result<Vec<String>> {
        let text = crate::corpus::read_utf8(path)?;
        let name = path.display().to_string();
        text.lines()
            .enumerate()
            .map(|(no, line)| {
                let (id, sym) = line
                    .split_once('\t')
                    .ok_or_else(|| Error::format(&name, no + 1, "expected id<TAB>symbol"))?;
                if id.parse::<usize>().ok() != Some(no) {
                    return Err(Error::format(&name, no + 1, "feature ids must be dense and ordered"));
                }
                Ok(sym.to_string())
            })
            .collect()
    }
}

fn check_kind(corpus: &Corpus, kind: FeatureKind) -> Result<()> {
    if kind.needs_pos() && !corpus.has_pos() {
        return Err(Error::MissingPos(kind.name()));
    }
    Ok(())
}

fn key_at(corpus: &Corpus, pos: Position, kind: FeatureKind) -> FeatureKey {
    match pos {
        Position::Root => FeatureKey::Root,
        Position::Token(t) => {
            let tok = corpus.token(t);
            match kind {
                FeatureKind::WordForm => FeatureKey::Form(tok.form),
                FeatureKind::Pos => FeatureKey::Pos(tok.pos.expect("annotated corpus")),
                FeatureKind::Joint => FeatureKey::Joint(tok.form, tok.pos.expect("annotated corpus")),
            }
        }
    }
}

fn symbol_of(corpus: &Corpus, key: FeatureKey) -> String {
    let vocab = corpus.vocabulary();
    match key {
        FeatureKey::Root => ROOT.to_string(),
        FeatureKey::Form(f) => vocab.token(f).to_string(),
        FeatureKey::Pos(p) => corpus.tags()[p as usize].clone(),
        FeatureKey::Joint(f, p) => format!("{}\t{}", vocab.token(f), corpus.tags()[p as usize]),
    }
}

/// Feature id fired at `pos`, or `None` when the symbol there is not part of
/// the space.
pub fn feature_at(corpus: &Corpus, pos: Position, space: &FeatureSpace) -> Option<u32> {
    if let Position::Token(_) = pos {
        if space.kind.needs_pos() && !corpus.has_pos() {
            return None;
        }
    }
    space.index.get(&key_at(corpus, pos, space.kind)).copied()
}

/// Feature fired by token `t` under the space's own context function.
/// Callers must have checked dependency preconditions.
pub(crate) fn fired_feature(corpus: &Corpus, t: usize, space: &FeatureSpace) -> Option<u32> {
    resolve_unchecked(corpus, t, space.context).and_then(|pos| feature_at(corpus, pos, space))
}

pub(crate) fn check_space(corpus: &Corpus, space: &FeatureSpace) -> Result<()> {
    check_kind(corpus, space.kind)?;
    if matches!(space.context, ContextFn::Dependency { .. }) && !corpus.has_heads() {
        return Err(Error::MissingHeads);
    }
    Ok(())
}
