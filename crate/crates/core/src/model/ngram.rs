use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::markov::MarkovModel;
use crate::query::{Token, Vocab};

use super::{CallCounter, Distribution, ModelError, SequenceModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tokenization {
    Byte,
    Char,
    Whitespace,
}

impl std::str::FromStr for Tokenization {
    type Err = ModelError;
    fn from_str(s: &str) -> Result<Self, ModelError> {
        match s {
            "byte" => Ok(Tokenization::Byte),
            "char" => Ok(Tokenization::Char),
            "whitespace" => Ok(Tokenization::Whitespace),
            other => Err(ModelError::Invalid(format!("unknown tokenization {other:?}"))),
        }
    }
}

impl Tokenization {
    fn split(self, text: &str) -> Vec<String> {
        match self {
            Tokenization::Byte => text.bytes().map(|b| b.to_string()).collect(),
            Tokenization::Char => text.chars().map(|c| c.to_string()).collect(),
            Tokenization::Whitespace => text.split_whitespace().map(str::to_string).collect(),
        }
    }

    fn sort_key(self, symbol: &str) -> (u32, String) {
        match self {
            Tokenization::Byte => (symbol.parse().unwrap_or(u32::MAX), String::new()),
            _ => (0, symbol.to_string()),
        }
    }
}

/// Add-δ smoothed n-gram model conditioned on the last `order` tokens.
///
/// `order = 1` is a bigram model, i.e. a first-order Markov chain. Contexts
/// shorter than `order` use the longest available suffix. With `δ = 0` a
/// context never seen in training backs off to the next shorter one.
#[derive(Debug)]
pub struct NGramModel {
    order: usize,
    delta: f64,
    tokenization: Tokenization,
    symbols: Vec<String>,
    /// `counts[j]` maps a length-`j` context to next-token counts.
    counts: Vec<BTreeMap<Vec<Token>, Vec<u64>>>,
    counter: CallCounter,
}

#[derive(Serialize, Deserialize)]
struct CountRow {
    context: Vec<Token>,
    next: Vec<u64>,
}

#[derive(Serialize, Deserialize)]
struct NGramDoc {
    order: usize,
    delta: f64,
    tokenization: Tokenization,
    symbols: Vec<String>,
    counts: Vec<Vec<CountRow>>,
}

impl NGramModel {
    pub fn fit_text(text: &str, order: usize, delta: f64, tokenization: Tokenization) -> Result<Self, ModelError> {
        if order < 1 {
            return Err(ModelError::InvalidOrder);
        }
        if !(delta >= 0.0) || !delta.is_finite() {
            return Err(ModelError::InvalidSmoothing(delta));
        }
        let raw = tokenization.split(text);
        if raw.is_empty() {
            return Err(ModelError::EmptyCorpus);
        }
        let mut symbols: Vec<String> = raw.iter().cloned().collect::<BTreeSet<_>>().into_iter().collect();
        symbols.sort_by_key(|s| tokenization.sort_key(s));
        let vocab = Vocab::new(symbols.len())
            .map_err(|_| ModelError::Invalid(format!("corpus has {} distinct symbols, need at least 2", symbols.len())))?;
        let index: BTreeMap<&str, Token> =
            symbols.iter().enumerate().map(|(i, s)| (s.as_str(), i as Token)).collect();
        let stream: Vec<Token> = raw.iter().map(|s| index[s.as_str()]).collect();

        let mut counts = vec![BTreeMap::new(); order + 1];
        for t in 0..stream.len() {
            for (j, table) in counts.iter_mut().enumerate() {
                if j > t {
                    break;
                }
                let row = table
                    .entry(stream[t - j..t].to_vec())
                    .or_insert_with(|| vec![0u64; vocab.size()]);
                row[stream[t] as usize] += 1;
            }
        }
        Ok(NGramModel { order, delta, tokenization, symbols, counts, counter: CallCounter::new() })
    }

    pub fn fit_file(path: &Path, order: usize, delta: f64, tokenization: Tokenization) -> Result<Self, ModelError> {
        let text = std::fs::read_to_string(path)?;
        Self::fit_text(&text, order, delta, tokenization)
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }

    /// Maps text to token ids with this model's tokenization.
    pub fn encode(&self, text: &str) -> Result<Vec<Token>, ModelError> {
        self.tokenization
            .split(text)
            .iter()
            .map(|s| {
                self.symbols
                    .iter()
                    .position(|x| x == s)
                    .map(|i| i as Token)
                    .ok_or_else(|| ModelError::Invalid(format!("symbol {s:?} not in vocabulary")))
            })
            .collect()
    }

    fn conditional(&self, context: &[Token]) -> Vec<f64> {
        let v = self.symbols.len();
        let mut j = self.order.min(context.len());
        loop {
            let ctx = &context[context.len() - j..];
            let row = self.counts[j].get(ctx);
            let total: u64 = row.map(|r| r.iter().sum()).unwrap_or(0);
            if self.delta > 0.0 || total > 0 {
                let denom = total as f64 + self.delta * v as f64;
                return (0..v)
                    .map(|i| (row.map(|r| r[i]).unwrap_or(0) as f64 + self.delta) / denom)
                    .collect();
            }
            // δ = 0 and unseen context; the unigram table is never empty
            j -= 1;
        }
    }

    /// The first-order chain with the same conditionals. Only valid for
    /// `order = 1`.
    pub fn to_markov(&self) -> Result<MarkovModel, ModelError> {
        if self.order != 1 {
            return Err(ModelError::Invalid("only order-1 n-gram models are Markov chains".into()));
        }
        let rows: Vec<Vec<f64>> = (0..self.symbols.len() as Token).map(|s| self.conditional(&[s])).collect();
        MarkovModel::first_order(rows)
    }

    pub fn to_json(&self) -> String {
        let doc = NGramDoc {
            order: self.order,
            delta: self.delta,
            tokenization: self.tokenization,
            symbols: self.symbols.clone(),
            counts: self
                .counts
                .iter()
                .map(|t| t.iter().map(|(c, n)| CountRow { context: c.clone(), next: n.clone() }).collect())
                .collect(),
        };
        serde_json::to_string(&doc).expect("n-gram serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, ModelError> {
        let doc: NGramDoc = serde_json::from_str(s)?;
        if doc.order < 1 {
            return Err(ModelError::InvalidOrder);
        }
        if !(doc.delta >= 0.0) || !doc.delta.is_finite() {
            return Err(ModelError::InvalidSmoothing(doc.delta));
        }
        let vocab = Vocab::new(doc.symbols.len()).map_err(ModelError::Query)?;
        if doc.counts.len() != doc.order + 1 {
            return Err(ModelError::Invalid("expected one count table per context length".into()));
        }
        let mut counts = Vec::with_capacity(doc.counts.len());
        for (j, rows) in doc.counts.into_iter().enumerate() {
            let mut table = BTreeMap::new();
            for row in rows {
                if row.context.len() != j || row.next.len() != vocab.size() {
                    return Err(ModelError::Invalid("count row has wrong shape".into()));
                }
                for &t in &row.context {
                    vocab.check(t)?;
                }
                table.insert(row.context, row.next);
            }
            counts.push(table);
        }
        if counts[0].get(&Vec::new()).map(|r| r.iter().sum::<u64>()).unwrap_or(0) == 0 {
            return Err(ModelError::EmptyCorpus);
        }
        Ok(NGramModel {
            order: doc.order,
            delta: doc.delta,
            tokenization: doc.tokenization,
            symbols: doc.symbols,
            counts,
            counter: CallCounter::new(),
        })
    }
}

impl SequenceModel for NGramModel {
    fn vocab(&self) -> Vocab {
        Vocab::new(self.symbols.len()).expect("validated at construction")
    }

    fn evaluate(&self, history: &[Token], prefix: &[Token]) -> Result<Distribution, ModelError> {
        let need = self.order;
        let mut context: Vec<Token> = Vec::with_capacity(need);
        let take_prefix = prefix.len().min(need);
        let take_history = (need - take_prefix).min(history.len());
        context.extend_from_slice(&history[history.len() - take_history..]);
        context.extend_from_slice(&prefix[prefix.len() - take_prefix..]);
        let probs = self.conditional(&context);
        Ok(Distribution::from_log_probs(probs.iter().map(|p| p.ln()).collect())
            .expect("smoothed counts normalize"))
    }

    fn counter(&self) -> &CallCounter {
        &self.counter
    }

    fn name(&self) -> String {
        format!("ngram(order={},delta={})", self.order, self.delta)
    }
}
