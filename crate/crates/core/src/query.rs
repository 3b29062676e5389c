//! Queries over the length-K path space as disjoint unions of per-step
//! restricted-domain products.
//!
//! A [`ProductQuery`] is a cross product `V_1 × … × V_K` of allowed token
//! sets. A [`Query`] is a list of pairwise-disjoint products. Parts normally
//! share one horizon; the "A before B" constructor is the exception and keeps
//! every part at its own natural length `i`. Membership of a length-`K`
//! sequence is then decided on its prefix: part `i` admits `seq` when it admits
//! `seq[..i]`.

use std::fmt;

use num_bigint::BigUint;
use num_traits::{One, ToPrimitive};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Dense zero-based token id.
pub type Token = u32;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum QueryError {
    #[error("vocabulary size must be at least 2, got {0}")]
    VocabTooSmall(usize),
    #[error("token {token} out of range for vocabulary of size {vocab}")]
    TokenOutOfRange { token: Token, vocab: usize },
    #[error("restricted domain must be nonempty")]
    EmptyDomain,
    #[error("horizon must be at least 1")]
    ZeroHorizon,
    #[error("complement of the target set is empty but horizon {0} > 1")]
    EmptyComplement(usize),
    #[error("token sets overlap")]
    Overlap,
    #[error("count {count} exceeds horizon {horizon}")]
    CountExceedsHorizon { count: usize, horizon: usize },
    #[error("sequence length {got} does not match horizon {expected}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("query must have at least one part")]
    NoParts,
    #[error("declared horizon {declared} does not match longest part {actual}")]
    HorizonMismatch { declared: usize, actual: usize },
    #[error("parts {first} and {second} share at least one sequence")]
    NotDisjoint { first: usize, second: usize },
    #[error("domain tokens must be strictly ascending")]
    Unsorted,
    #[error("malformed query document: {0}")]
    Json(String),
}

/// Vocabulary `{0, …, V-1}` with `V ≥ 2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "usize", into = "usize")]
pub struct Vocab(u32);

impl Vocab {
    pub fn new(size: usize) -> Result<Self, QueryError> {
        if size < 2 || size > u32::MAX as usize {
            return Err(QueryError::VocabTooSmall(size));
        }
        Ok(Vocab(size as u32))
    }

    pub fn size(self) -> usize {
        self.0 as usize
    }

    pub fn contains(self, token: Token) -> bool {
        token < self.0
    }

    pub fn tokens(self) -> impl Iterator<Item = Token> {
        0..self.0
    }

    pub fn check(self, token: Token) -> Result<Token, QueryError> {
        if self.contains(token) {
            Ok(token)
        } else {
            Err(QueryError::TokenOutOfRange { token, vocab: self.size() })
        }
    }
}

impl TryFrom<usize> for Vocab {
    type Error = QueryError;
    fn try_from(v: usize) -> Result<Self, QueryError> {
        Vocab::new(v)
    }
}

impl From<Vocab> for usize {
    fn from(v: Vocab) -> usize {
        v.size()
    }
}

/// Conditioning sequence preceding the queried horizon.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct History(Vec<Token>);

impl History {
    pub fn new(tokens: Vec<Token>) -> Self {
        History(tokens)
    }

    pub fn empty() -> Self {
        History(Vec::new())
    }

    pub fn tokens(&self) -> &[Token] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn check(&self, vocab: Vocab) -> Result<(), QueryError> {
        self.0.iter().try_for_each(|&t| vocab.check(t).map(|_| ()))
    }
}

impl From<Vec<Token>> for History {
    fn from(v: Vec<Token>) -> Self {
        History(v)
    }
}

/// Nonempty, strictly ascending set of allowed tokens for one step.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct RestrictedDomain {
    tokens: Vec<Token>,
}

impl RestrictedDomain {
    pub fn new(tokens: impl IntoIterator<Item = Token>, vocab: Vocab) -> Result<Self, QueryError> {
        let mut tokens: Vec<Token> = tokens.into_iter().collect();
        for &t in &tokens {
            vocab.check(t)?;
        }
        tokens.sort_unstable();
        tokens.dedup();
        Self::from_sorted(tokens)
    }

    /// Builds a domain from tokens that must already be strictly ascending.
    pub fn from_sorted(tokens: Vec<Token>) -> Result<Self, QueryError> {
        if tokens.is_empty() {
            return Err(QueryError::EmptyDomain);
        }
        if tokens.windows(2).any(|w| w[0] >= w[1]) {
            return Err(QueryError::Unsorted);
        }
        Ok(RestrictedDomain { tokens })
    }

    pub fn full(vocab: Vocab) -> Self {
        RestrictedDomain { tokens: vocab.tokens().collect() }
    }

    pub fn singleton(token: Token) -> Self {
        RestrictedDomain { tokens: vec![token] }
    }

    /// `vocab ∖ excluded`; fails when nothing is left.
    pub fn complement(excluded: &[Token], vocab: Vocab) -> Result<Self, QueryError> {
        let tokens: Vec<Token> = vocab.tokens().filter(|t| !excluded.contains(t)).collect();
        Self::from_sorted(tokens)
    }

    pub fn tokens(&self) -> &[Token] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, token: Token) -> bool {
        self.tokens.binary_search(&token).is_ok()
    }

    pub fn intersects(&self, other: &RestrictedDomain) -> bool {
        let (mut i, mut j) = (0, 0);
        while i < self.tokens.len() && j < other.tokens.len() {
            match self.tokens[i].cmp(&other.tokens[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => return true,
            }
        }
        false
    }

    pub fn max_token(&self) -> Token {
        *self.tokens.last().expect("nonempty")
    }
}

/// `V_1 × … × V_K`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ProductQuery {
    domains: Vec<RestrictedDomain>,
}

impl ProductQuery {
    pub fn new(domains: Vec<RestrictedDomain>) -> Result<Self, QueryError> {
        if domains.is_empty() {
            return Err(QueryError::ZeroHorizon);
        }
        Ok(ProductQuery { domains })
    }

    pub fn full(vocab: Vocab, horizon: usize) -> Result<Self, QueryError> {
        Self::new(vec![RestrictedDomain::full(vocab); horizon])
    }

    pub fn horizon(&self) -> usize {
        self.domains.len()
    }

    pub fn domains(&self) -> &[RestrictedDomain] {
        &self.domains
    }

    pub fn domain(&self, step: usize) -> &RestrictedDomain {
        &self.domains[step]
    }

    pub fn size(&self) -> BigUint {
        self.domains
            .iter()
            .fold(BigUint::one(), |acc, d| acc * BigUint::from(d.len()))
    }

    /// `seq` must have exactly this part's horizon.
    pub fn admits(&self, seq: &[Token]) -> bool {
        seq.len() == self.domains.len()
            && seq.iter().zip(&self.domains).all(|(&t, d)| d.contains(t))
    }

    /// True when some sequence belongs to both products on their common
    /// prefix length.
    pub fn overlaps(&self, other: &ProductQuery) -> bool {
        self.domains
            .iter()
            .zip(&other.domains)
            .all(|(a, b)| a.intersects(b))
    }

    /// Shares its first `len` domains with `other`.
    pub fn shares_prefix(&self, other: &ProductQuery, len: usize) -> bool {
        len <= self.horizon()
            && len <= other.horizon()
            && self.domains[..len] == other.domains[..len]
    }

    pub fn check_vocab(&self, vocab: Vocab) -> Result<(), QueryError> {
        for d in &self.domains {
            vocab.check(d.max_token())?;
        }
        Ok(())
    }
}

/// Query size with saturating display beyond `2^63`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuerySize(pub BigUint);

impl QuerySize {
    /// Returns the size as `u64` and whether it saturated at `2^63`.
    pub fn saturating(&self) -> (u64, bool) {
        let limit = 1u64 << 63;
        match self.0.to_u64() {
            Some(v) if v <= limit => (v, false),
            _ => (limit, true),
        }
    }

    pub fn to_f64(&self) -> f64 {
        self.0.to_f64().unwrap_or(f64::INFINITY)
    }

    pub fn at_most(&self, cap: u64) -> bool {
        self.0 <= BigUint::from(cap)
    }
}

impl fmt::Display for QuerySize {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.saturating() {
            (v, false) => write!(f, "{v}"),
            (v, true) => write!(f, ">={v} (saturated)"),
        }
    }
}

/// Disjoint union of [`ProductQuery`] parts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Query {
    horizon: usize,
    parts: Vec<ProductQuery>,
    label: String,
    truncated: bool,
}

impl Query {
    /// Builds a query and checks that its parts are pairwise disjoint.
    pub fn new(parts: Vec<ProductQuery>, label: impl Into<String>) -> Result<Self, QueryError> {
        let q = Self::unchecked(parts, label.into(), false)?;
        q.validate_partition()?;
        Ok(q)
    }

    fn unchecked(parts: Vec<ProductQuery>, label: String, truncated: bool) -> Result<Self, QueryError> {
        let horizon = parts.iter().map(ProductQuery::horizon).max().ok_or(QueryError::NoParts)?;
        Ok(Query { horizon, parts, label, truncated })
    }

    pub fn single(part: ProductQuery, label: impl Into<String>) -> Self {
        Query { horizon: part.horizon(), parts: vec![part], label: label.into(), truncated: false }
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn parts(&self) -> &[ProductQuery] {
        &self.parts
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    /// Whether this query is a finite truncation of an infinite union, so
    /// that its probability is a lower bound on the event of interest.
    pub fn is_truncated(&self) -> bool {
        self.truncated
    }

    /// Number of member sequences, each part counted at its own horizon.
    pub fn size(&self) -> QuerySize {
        QuerySize(self.parts.iter().map(ProductQuery::size).sum())
    }

    /// Number of length-`K` sequences (K = [`Query::horizon`]) that belong to
    /// the event. Equals [`Query::size`] when all parts share the horizon.
    pub fn event_count(&self, vocab: Vocab) -> BigUint {
        self.parts
            .iter()
            .map(|p| p.size() * BigUint::from(vocab.size()).pow((self.horizon - p.horizon()) as u32))
            .sum()
    }

    /// Membership of a length-`K` sequence.
    pub fn contains(&self, seq: &[Token]) -> Result<bool, QueryError> {
        if seq.len() != self.horizon {
            return Err(QueryError::LengthMismatch { expected: self.horizon, got: seq.len() });
        }
        Ok(self.parts.iter().any(|p| p.admits(&seq[..p.horizon()])))
    }

    /// Exact disjointness check: two products overlap iff every per-step
    /// intersection over their common prefix is nonempty.
    pub fn validate_partition(&self) -> Result<(), QueryError> {
        for i in 0..self.parts.len() {
            for j in i + 1..self.parts.len() {
                if self.parts[i].overlaps(&self.parts[j]) {
                    return Err(QueryError::NotDisjoint { first: i, second: j });
                }
            }
        }
        Ok(())
    }

    pub fn check_vocab(&self, vocab: Vocab) -> Result<(), QueryError> {
        self.parts.iter().try_for_each(|p| p.check_vocab(vocab))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&QueryDoc::from(self)).expect("query serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, QueryError> {
        let doc: QueryDoc = serde_json::from_str(s).map_err(|e| QueryError::Json(e.to_string()))?;
        Query::try_from(doc)
    }
}

// ---------------------------------------------------------------------------
// Constructors for the standard query families
// ---------------------------------------------------------------------------

fn token_set(tokens: &[Token], vocab: Vocab) -> Result<RestrictedDomain, QueryError> {
    RestrictedDomain::new(tokens.iter().copied(), vocab)
}

/// `X_K = a`: `V^{K-1} × {a}`.
pub fn kth_marginal(a: Token, horizon: usize, vocab: Vocab) -> Result<Query, QueryError> {
    vocab.check(a)?;
    if horizon == 0 {
        return Err(QueryError::ZeroHorizon);
    }
    let mut domains = vec![RestrictedDomain::full(vocab); horizon - 1];
    domains.push(RestrictedDomain::singleton(a));
    Ok(Query::single(ProductQuery::new(domains)?, format!("X_{horizon}={a}")))
}

/// `τ(A) = K`: `(V ∖ A)^{K-1} × A`.
pub fn hitting_time(targets: &[Token], horizon: usize, vocab: Vocab) -> Result<Query, QueryError> {
    if horizon == 0 {
        return Err(QueryError::ZeroHorizon);
    }
    let hit = token_set(targets, vocab)?;
    let mut domains = Vec::with_capacity(horizon);
    if horizon > 1 {
        let miss = RestrictedDomain::complement(hit.tokens(), vocab)
            .map_err(|_| QueryError::EmptyComplement(horizon))?;
        domains.extend(std::iter::repeat_n(miss, horizon - 1));
    }
    let label = format!("tau({})={horizon}", join(hit.tokens()));
    domains.push(hit);
    Ok(Query::single(ProductQuery::new(domains)?, label))
}

/// `τ(A) < τ(B)` truncated to first hits at steps `1..=K_max`. Part `i` is
/// `(V ∖ (A ∪ B))^{i-1} × A` at its own horizon `i`.
pub fn a_before_b(a: &[Token], b: &[Token], max_horizon: usize, vocab: Vocab) -> Result<Query, QueryError> {
    if max_horizon == 0 {
        return Err(QueryError::ZeroHorizon);
    }
    let a = token_set(a, vocab)?;
    let b = token_set(b, vocab)?;
    if a.intersects(&b) {
        return Err(QueryError::Overlap);
    }
    let mut excluded = a.tokens().to_vec();
    excluded.extend_from_slice(b.tokens());
    let neither = RestrictedDomain::complement(&excluded, vocab);
    let mut parts = Vec::with_capacity(max_horizon);
    for i in 1..=max_horizon {
        let mut domains = Vec::with_capacity(i);
        if i > 1 {
            let n = neither.clone().map_err(|_| QueryError::EmptyComplement(max_horizon))?;
            domains.extend(std::iter::repeat_n(n, i - 1));
        }
        domains.push(a.clone());
        parts.push(ProductQuery::new(domains)?);
    }
    let label = format!("tau({})<tau({}),K<={max_horizon}", join(a.tokens()), join(b.tokens()));
    Query::unchecked(parts, label, true)
}

/// `N_a(K) = n`: one part per choice of the `n` positions holding `a`.
pub fn count(a: Token, n: usize, horizon: usize, vocab: Vocab) -> Result<Query, QueryError> {
    vocab.check(a)?;
    if horizon == 0 {
        return Err(QueryError::ZeroHorizon);
    }
    if n > horizon {
        return Err(QueryError::CountExceedsHorizon { count: n, horizon });
    }
    let hit = RestrictedDomain::singleton(a);
    let miss = if n < horizon { Some(RestrictedDomain::complement(&[a], vocab)?) } else { None };
    let mut parts = Vec::new();
    for positions in combinations(horizon, n) {
        let mut domains = Vec::with_capacity(horizon);
        let mut next = positions.iter().peekable();
        for step in 0..horizon {
            if next.peek() == Some(&&step) {
                next.next();
                domains.push(hit.clone());
            } else {
                domains.push(miss.clone().expect("n < horizon"));
            }
        }
        parts.push(ProductQuery::new(domains)?);
    }
    Query::unchecked(parts, format!("N_{a}({horizon})={n}"), false)
}

/// All `k`-subsets of `0..n` in lexicographic order.
fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            if n - i < k - cur.len() {
                break;
            }
            cur.push(i);
            rec(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(0, n, k, &mut Vec::with_capacity(k), &mut out);
    out
}

fn join(tokens: &[Token]) -> String {
    tokens.iter().map(|t| t.to_string()).collect::<Vec<_>>().join(",")
}

// ---------------------------------------------------------------------------
// JSON document
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct QueryDoc {
    #[serde(rename = "K")]
    horizon: usize,
    parts: Vec<Vec<Vec<Token>>>,
    label: String,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    truncated: bool,
}

impl From<&Query> for QueryDoc {
    fn from(q: &Query) -> Self {
        QueryDoc {
            horizon: q.horizon,
            parts: q
                .parts
                .iter()
                .map(|p| p.domains.iter().map(|d| d.tokens.clone()).collect())
                .collect(),
            label: q.label.clone(),
            truncated: q.truncated,
        }
    }
}

impl TryFrom<QueryDoc> for Query {
    type Error = QueryError;

    fn try_from(doc: QueryDoc) -> Result<Self, QueryError> {
        let parts = doc
            .parts
            .into_iter()
            .map(|p| {
                p.into_iter()
                    .map(RestrictedDomain::from_sorted)
                    .collect::<Result<Vec<_>, _>>()
                    .and_then(ProductQuery::new)
            })
            .collect::<Result<Vec<_>, _>>()?;
        let q = Query::unchecked(parts, doc.label, doc.truncated)?;
        if q.horizon != doc.horizon {
            return Err(QueryError::HorizonMismatch { declared: doc.horizon, actual: q.horizon });
        }
        q.validate_partition()?;
        Ok(q)
    }
}
