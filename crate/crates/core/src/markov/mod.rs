//! Explicit Markov chains and their exact query answers.
//!
//! [`MarkovModel`] is both a [`SequenceModel`] and the input to the closed
//! forms in [`oracle`], which serve as an independent check on the estimators.

mod ergodic;
pub mod oracle;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::model::{CallCounter, Distribution, ModelError, SequenceModel};
use crate::query::{Token, Vocab};

pub use ergodic::{check_ergodic, Ergodicity};
pub use oracle::{
    general_query_markov, hitting_distribution, q2_marginal, q3_hitting, q4_a_before_b, query_probability,
    steady_state, GeneralQueryResult, HittingProbability, Marginal, OracleError, SteadyState,
};

const ROW_TOLERANCE: f64 = 1e-9;

/// Order-`m` chain: `p(x_{t+1} | x_{t-m+1..t})` stored as `V^m` rows of length
/// `V`. Context rows are indexed base-`V` with the oldest token most
/// significant.
#[derive(Debug)]
pub struct MarkovModel {
    order: usize,
    vocab: Vocab,
    rows: Vec<Vec<f64>>,
    counter: CallCounter,
}

#[derive(Serialize, Deserialize)]
struct MarkovDoc {
    #[serde(rename = "V")]
    vocab: usize,
    #[serde(default = "one", skip_serializing_if = "is_one")]
    order: usize,
    #[serde(rename = "P")]
    rows: Vec<Vec<f64>>,
}

fn one() -> usize {
    1
}

fn is_one(x: &usize) -> bool {
    *x == 1
}

impl MarkovModel {
    /// Rows must be stochastic within `1e-9`; they are renormalized exactly.
    pub fn new(order: usize, rows: Vec<Vec<f64>>) -> Result<Self, ModelError> {
        if order < 1 {
            return Err(ModelError::InvalidOrder);
        }
        let v = rows.first().map(Vec::len).unwrap_or(0);
        let vocab = Vocab::new(v).map_err(ModelError::Query)?;
        let expected = v.checked_pow(order as u32).ok_or_else(|| ModelError::Invalid("table too large".into()))?;
        if rows.len() != expected {
            return Err(ModelError::Invalid(format!("expected {expected} rows, got {}", rows.len())));
        }
        let mut normalized = Vec::with_capacity(rows.len());
        for (i, row) in rows.into_iter().enumerate() {
            if row.len() != v {
                return Err(ModelError::Invalid(format!("row {i} has {} entries, expected {v}", row.len())));
            }
            if row.iter().any(|p| !(*p >= 0.0) || !p.is_finite()) {
                return Err(ModelError::Invalid(format!("row {i} has a negative or non-finite entry")));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > ROW_TOLERANCE {
                return Err(ModelError::Invalid(format!("row {i} sums to {s}")));
            }
            normalized.push(row.into_iter().map(|p| p / s).collect());
        }
        Ok(MarkovModel { order, vocab, rows: normalized, counter: CallCounter::new() })
    }

    pub fn first_order(rows: Vec<Vec<f64>>) -> Result<Self, ModelError> {
        Self::new(1, rows)
    }

    /// Every row of the chain is uniform.
    pub fn uniform(vocab: Vocab, order: usize) -> Self {
        let v = vocab.size();
        Self::new(order, vec![vec![1.0 / v as f64; v]; v.pow(order as u32)]).expect("uniform rows are stochastic")
    }

    /// Random chain with all entries positive. Each row is
    /// `w_i = (-ln u_i)^sharpness` normalized, so `sharpness = 1` is a flat
    /// Dirichlet draw and larger values concentrate mass.
    pub fn random(vocab: Vocab, order: usize, sharpness: f64, rng: &mut impl Rng) -> Self {
        let v = vocab.size();
        let rows = (0..v.pow(order as u32))
            .map(|_| {
                let w: Vec<f64> = (0..v)
                    .map(|_| {
                        let u: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
                        (-u.ln()).powf(sharpness).max(1e-300)
                    })
                    .collect();
                let s: f64 = w.iter().sum();
                w.into_iter().map(|x| x / s).collect()
            })
            .collect();
        Self::new(order, rows).expect("random rows are stochastic")
    }

    /// Chain that stays put with probability `stay` and otherwise moves
    /// uniformly to another state.
    pub fn sticky(vocab: Vocab, stay: f64) -> Result<Self, ModelError> {
        let v = vocab.size();
        let off = (1.0 - stay) / (v - 1) as f64;
        Self::first_order((0..v).map(|i| (0..v).map(|j| if i == j { stay } else { off }).collect()).collect())
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    /// Transition matrix of a first-order chain.
    pub fn matrix(&self) -> Result<&[Vec<f64>], OracleError> {
        if self.order != 1 {
            return Err(OracleError::NotFirstOrder(self.order));
        }
        Ok(&self.rows)
    }

    pub fn context_index(&self, context: &[Token]) -> usize {
        debug_assert_eq!(context.len(), self.order);
        context.iter().fold(0usize, |acc, &t| acc * self.vocab.size() + t as usize)
    }

    pub fn row(&self, context: &[Token]) -> &[f64] {
        &self.rows[self.context_index(context)]
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&MarkovDoc { vocab: self.vocab.size(), order: self.order, rows: self.rows.clone() })
            .expect("markov model serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, ModelError> {
        let doc: MarkovDoc = serde_json::from_str(s)?;
        let m = Self::new(doc.order, doc.rows)?;
        if m.vocab.size() != doc.vocab {
            return Err(ModelError::Invalid(format!("declared V={} but rows have {}", doc.vocab, m.vocab.size())));
        }
        Ok(m)
    }
}

impl SequenceModel for MarkovModel {
    fn vocab(&self) -> Vocab {
        self.vocab
    }

    fn evaluate(&self, history: &[Token], prefix: &[Token]) -> Result<Distribution, ModelError> {
        let have = history.len() + prefix.len();
        if have < self.order {
            return Err(ModelError::InsufficientContext { needed: self.order, got: have });
        }
        let from_prefix = prefix.len().min(self.order);
        let mut ctx = Vec::with_capacity(self.order);
        ctx.extend_from_slice(&history[history.len() - (self.order - from_prefix)..]);
        ctx.extend_from_slice(&prefix[prefix.len() - from_prefix..]);
        Distribution::from_log_probs(self.row(&ctx).iter().map(|p| p.ln()).collect())
    }

    fn counter(&self) -> &CallCounter {
        &self.counter
    }

    fn name(&self) -> String {
        format!("markov(order={})", self.order)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::query::History;
    use rand::SeedableRng;

    #[test]
    fn json_format() {
        let m = MarkovModel::first_order(vec![vec![0.9, 0.1], vec![0.5, 0.5]]).unwrap();
        assert_eq!(m.to_json(), r#"{"V":2,"P":[[0.9,0.1],[0.5,0.5]]}"#);
        let back = MarkovModel::from_json(&m.to_json()).unwrap();
        assert_eq!(back.rows(), m.rows());
        assert!(MarkovModel::from_json(r#"{"V":2,"P":[[0.9,0.2],[0.5,0.5]]}"#).is_err());
        assert!(MarkovModel::from_json(r#"{"V":3,"P":[[0.9,0.1],[0.5,0.5]]}"#).is_err());
        let m2 = MarkovModel::uniform(Vocab::new(2).unwrap(), 2);
        assert!(m2.to_json().contains(r#""order":2"#));
        assert_eq!(MarkovModel::from_json(&m2.to_json()).unwrap().order(), 2);
    }

    #[test]
    fn context_selection() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let m = MarkovModel::random(Vocab::new(3).unwrap(), 2, 1.0, &mut rng);
        let d = m.next(&History::new(vec![2, 0]), &[1]).unwrap();
        let row = m.row(&[0, 1]);
        for (x, y) in d.probs().iter().zip(row) {
            assert!((x - y).abs() < 1e-15);
        }
        assert_eq!(m.next(&History::new(vec![0, 1]), &[]).unwrap(), m.next(&History::empty(), &[0, 1]).unwrap());
        assert!(matches!(
            m.next(&History::new(vec![1]), &[]),
            Err(ModelError::InsufficientContext { needed: 2, got: 1 })
        ));
    }
}
