//! Query instances: a history, a query and its identifier.
//!
//! Histories and rollout targets come from the model itself. Each query id
//! has its own substream, so instance `i` is the same whatever the number of
//! queries or threads.

use anyhow::{bail, Result};
use rand::Rng;

use seqquery::model::ModelError;
use seqquery::proposal::sample_inverse_cdf;
use seqquery::query::{a_before_b, count, hitting_time, kth_marginal};
use seqquery::rng::Substreams;
use seqquery::{History, Query, SequenceModel, Token, Vocab};

use crate::config::{QueryFamily, QuerySpec};

#[derive(Debug, Clone)]
pub struct Instance {
    pub id: usize,
    pub history: History,
    pub query: Query,
}

/// Samples `len` tokens after `context`. Contexts too short for the model are
/// extended uniformly.
pub fn rollout(model: &dyn SequenceModel, context: &[Token], len: usize, rng: &mut impl Rng) -> Result<Vec<Token>> {
    let tokens: Vec<Token> = model.vocab().tokens().collect();
    let mut seq = Vec::with_capacity(len);
    for _ in 0..len {
        let t = match model.evaluate(context, &seq) {
            Ok(d) => sample_inverse_cdf(&tokens, |t| d.prob(t), rng),
            Err(ModelError::InsufficientContext { .. }) => tokens[rng.gen_range(0..tokens.len())],
            Err(e) => return Err(e.into()),
        };
        seq.push(t);
    }
    Ok(seq)
}

/// Histories and rollouts for query ids `0..n`, independent of the horizon.
#[derive(Debug, Clone)]
pub struct Draws {
    pub histories: Vec<History>,
    pub rollouts: Vec<Vec<Token>>,
}

impl Draws {
    pub fn sample(
        model: &dyn SequenceModel,
        n: usize,
        history_length: usize,
        fixed_history: Option<&[Token]>,
        max_horizon: usize,
        streams: &Substreams,
    ) -> Result<Self> {
        let mut histories = Vec::with_capacity(n);
        let mut rollouts = Vec::with_capacity(n);
        for i in 0..n {
            let mut rng = streams.rng(i as u64);
            let history = match fixed_history {
                Some(h) => h.to_vec(),
                None => rollout(model, &[], history_length, &mut rng)?,
            };
            rollouts.push(rollout(model, &history, max_horizon, &mut rng)?);
            histories.push(History::new(history));
        }
        Ok(Draws { histories, rollouts })
    }

    pub fn instance(&self, id: usize, spec: &QuerySpec, horizon: usize, model: &dyn SequenceModel) -> Result<Instance> {
        let query = build_query(spec, horizon, model.vocab(), Some(&self.rollouts[id]))?;
        Ok(Instance { id, history: self.histories[id].clone(), query })
    }
}

/// The query `spec` names at `horizon`. Missing targets and counts come from
/// `rollout`: the target is its `K`-th token, the count its occurrences in
/// the first `K`.
pub fn build_query(spec: &QuerySpec, horizon: usize, vocab: Vocab, rollout: Option<&[Token]>) -> Result<Query> {
    let targets = match (&spec.targets, rollout) {
        (Some(t), _) => t.clone(),
        (None, Some(r)) => vec![r[horizon - 1]],
        (None, None) => bail!("query needs explicit targets"),
    };
    Ok(match spec.family {
        QueryFamily::Hitting => hitting_time(&targets, horizon, vocab)?,
        QueryFamily::Marginal => {
            let mut parts = Vec::new();
            for &t in &targets {
                parts.extend(kth_marginal(t, horizon, vocab)?.parts().iter().cloned());
            }
            Query::new(parts, format!("X_{horizon} in {targets:?}"))?
        }
        QueryFamily::ABeforeB => {
            let others = spec.others.clone().unwrap_or_else(|| vec![(targets[0] + 1) % vocab.size() as Token]);
            a_before_b(&targets, &others, horizon, vocab)?
        }
        QueryFamily::Count => {
            let n = match (spec.count, rollout) {
                (Some(n), _) => n,
                (None, Some(r)) => r[..horizon].iter().filter(|&&t| t == targets[0]).count(),
                (None, None) => bail!("count query needs an explicit count"),
            };
            count(targets[0], n, horizon, vocab)?
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use seqquery::markov::MarkovModel;

    fn spec(family: QueryFamily) -> QuerySpec {
        QuerySpec { family, targets: None, others: None, count: None }
    }

    #[test]
    fn draws_are_keyed_by_query_id() {
        let m = MarkovModel::random(Vocab::new(4).unwrap(), 2, 1.0, &mut Substreams::new(3).rng(0));
        let a = Draws::sample(&m, 5, 4, None, 6, &Substreams::new(9)).unwrap();
        let b = Draws::sample(&m, 2, 4, None, 6, &Substreams::new(9)).unwrap();
        assert_eq!(a.histories[..2], b.histories[..]);
        assert_eq!(a.rollouts[1], b.rollouts[1]);
        assert!(a.histories.iter().all(|h| h.len() == 4));
    }

    #[test]
    fn targets_come_from_the_rollout() {
        let m = MarkovModel::uniform(Vocab::new(3).unwrap(), 1);
        let d = Draws::sample(&m, 3, 2, Some(&[0]), 5, &Substreams::new(1)).unwrap();
        for id in 0..3 {
            let inst = d.instance(id, &spec(QueryFamily::Hitting), 4, &m).unwrap();
            assert!(inst.query.parts()[0].domain(3).contains(d.rollouts[id][3]));
            assert_eq!(inst.history.tokens(), &[0]);
            let c = d.instance(id, &spec(QueryFamily::Count), 5, &m).unwrap();
            assert!(c.query.contains(&d.rollouts[id]).unwrap());
            let q4 = d.instance(id, &spec(QueryFamily::ABeforeB), 3, &m).unwrap();
            assert_eq!(q4.query.parts().len(), 3);
        }
    }
}
