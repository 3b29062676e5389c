//! Exact query answers for Markov chains.
//!
//! Conditioning is on the current state `X_0 = v` (first order) or on the last
//! `m` history tokens (order `m`). The hitting-time and "A before B" closed
//! forms aggregate "not in state a" conditionals with the stationary
//! distribution restricted to the complement states.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::model::ModelError;
use crate::query::{ProductQuery, Query, Token};

use super::{check_ergodic, Ergodicity, MarkovModel};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OracleError {
    #[error("chain is not ergodic: {0:?}")]
    NotErgodic(Ergodicity),
    #[error("steady-state system is singular")]
    Singular,
    #[error("targets must differ")]
    SameTarget,
    #[error("state {0} out of range")]
    StateOutOfRange(Token),
    #[error("closed forms need a first-order chain, got order {0}")]
    NotFirstOrder(usize),
    #[error("history has {got} tokens, chain needs {needed}")]
    InsufficientHistory { needed: usize, got: usize },
    #[error("query token {0} out of range")]
    QueryOutOfRange(Token),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SteadyState {
    pub pi: Vec<f64>,
}

/// Solves `(Pᵀ − I)π = 0` with the last equation replaced by `Σπ = 1`.
pub fn steady_state(p: &[Vec<f64>]) -> Result<SteadyState, OracleError> {
    match check_ergodic(p) {
        Ergodicity::Ergodic => {}
        other => return Err(OracleError::NotErgodic(other)),
    }
    let n = p.len();
    let mut a = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            a[(i, j)] = p[j][i] - if i == j { 1.0 } else { 0.0 };
        }
    }
    for j in 0..n {
        a[(n - 1, j)] = 1.0;
    }
    let mut b = DVector::<f64>::zeros(n);
    b[n - 1] = 1.0;
    let pi = a.lu().solve(&b).ok_or(OracleError::Singular)?;
    Ok(SteadyState { pi: pi.iter().copied().collect() })
}

/// Row `v` of `P^K` together with the number of vector-matrix products used.
#[derive(Debug, Clone, PartialEq)]
pub struct Marginal {
    pub probs: Vec<f64>,
    pub multiplications: usize,
}

fn vec_mat(x: &[f64], p: &[Vec<f64>]) -> Vec<f64> {
    let n = p.len();
    let mut out = vec![0.0; n];
    for (i, &xi) in x.iter().enumerate() {
        if xi != 0.0 {
            for j in 0..n {
                out[j] += xi * p[i][j];
            }
        }
    }
    out
}

fn check_state(p: &[Vec<f64>], s: Token) -> Result<(), OracleError> {
    if (s as usize) < p.len() {
        Ok(())
    } else {
        Err(OracleError::StateOutOfRange(s))
    }
}

/// `p(X_K | X_0 = v)` by `K` vector-matrix products.
pub fn q2_marginal(p: &[Vec<f64>], v: Token, horizon: usize) -> Result<Marginal, OracleError> {
    check_state(p, v)?;
    let mut x = vec![0.0; p.len()];
    x[v as usize] = 1.0;
    let mut multiplications = 0;
    for _ in 0..horizon {
        x = vec_mat(&x, p);
        multiplications += 1;
    }
    Ok(Marginal { probs: x, multiplications })
}

/// `p(τ(a) = k | v)` for `k = 1..=horizon` by marginalizing over the non-`a`
/// states at each step. Exact for any chain.
pub fn hitting_distribution(p: &[Vec<f64>], v: Token, a: Token, horizon: usize) -> Result<Vec<f64>, OracleError> {
    check_state(p, v)?;
    check_state(p, a)?;
    let mut alive = vec![0.0; p.len()];
    alive[v as usize] = 1.0;
    let mut out = Vec::with_capacity(horizon);
    for _ in 0..horizon {
        let next = vec_mat(&alive, p);
        out.push(next[a as usize]);
        alive = next;
        alive[a as usize] = 0.0;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct HittingProbability {
    /// Restricted matrix-power recursion; the authoritative value.
    pub recursive: f64,
    /// `p(a|ā) p(ā|v) p(ā|ā)^{k−2}` with stationary aggregation. Exact for
    /// i.i.d. chains; an approximation in general.
    pub closed_form: Result<f64, OracleError>,
}

pub fn q3_hitting(p: &[Vec<f64>], v: Token, a: Token, horizon: usize) -> Result<HittingProbability, OracleError> {
    let recursive = *hitting_distribution(p, v, a, horizon)?.last().unwrap_or(&0.0);
    let closed_form = hitting_closed_form(p, v, a, horizon);
    Ok(HittingProbability { recursive, closed_form })
}

fn hitting_closed_form(p: &[Vec<f64>], v: Token, a: Token, horizon: usize) -> Result<f64, OracleError> {
    let a_i = a as usize;
    if horizon == 0 {
        return Ok(0.0);
    }
    if horizon == 1 {
        return Ok(p[v as usize][a_i]);
    }
    let pi = steady_state(p)?.pi;
    let others: Vec<usize> = (0..p.len()).filter(|&s| s != a_i).collect();
    let a_given_not_a = stationary_transition(p, &pi, &others, &[a_i]);
    let not_a_given_v = 1.0 - p[v as usize][a_i];
    Ok(a_given_not_a * not_a_given_v * (1.0 - a_given_not_a).powi(horizon as i32 - 2))
}

/// `Σ_{s∈from} π_s Σ_{t∈to} P[s][t] / Σ_{s∈from} π_s`.
fn stationary_transition(p: &[Vec<f64>], pi: &[f64], from: &[usize], to: &[usize]) -> f64 {
    let weight: f64 = from.iter().map(|&s| pi[s]).sum();
    if weight <= 0.0 {
        return 0.0;
    }
    from.iter()
        .map(|&s| pi[s] * to.iter().map(|&t| p[s][t]).sum::<f64>())
        .sum::<f64>()
        / weight
}

/// `p(τ(a) < τ(b) | v) = p(a|v) + p(c|v) p(a|c) / (p(a|c) + p(b|c))` where `c`
/// is every state other than `a` and `b`.
pub fn q4_a_before_b(p: &[Vec<f64>], v: Token, a: Token, b: Token) -> Result<f64, OracleError> {
    check_state(p, v)?;
    check_state(p, a)?;
    check_state(p, b)?;
    if a == b {
        return Err(OracleError::SameTarget);
    }
    let (a_i, b_i) = (a as usize, b as usize);
    let c: Vec<usize> = (0..p.len()).filter(|&s| s != a_i && s != b_i).collect();
    let row = &p[v as usize];
    let c_given_v: f64 = c.iter().map(|&s| row[s]).sum();
    if c.is_empty() || c_given_v == 0.0 {
        return Ok(row[a_i]);
    }
    let pi = steady_state(p)?.pi;
    let a_given_c = stationary_transition(p, &pi, &c, &[a_i]);
    let b_given_c = stationary_transition(p, &pi, &c, &[b_i]);
    Ok(row[a_i] + c_given_v * a_given_c / (a_given_c + b_given_c))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeneralQueryResult {
    pub probability: f64,
    pub log_probability: f64,
    /// Number of restricted tensor contractions performed (`K − 1`).
    pub contractions: usize,
}

/// `p(X_{1:K} ∈ V_1 × … × V_K | H)` for an order-`m` chain by iterated
/// restricted tensor marginalization: `∏_k p(X_k ∈ V_k | X_{<k} ∈ V_1 × … ×
/// V_{k-1})`, each factor read off the running normalized state
/// distribution over length-`m` contexts.
pub fn general_query_markov(
    model: &MarkovModel,
    part: &ProductQuery,
    history: &[Token],
) -> Result<GeneralQueryResult, OracleError> {
    let m = model.order();
    if history.len() < m {
        return Err(OracleError::InsufficientHistory { needed: m, got: history.len() });
    }
    let v = model.rows()[0].len();
    for d in part.domains() {
        if d.max_token() as usize >= v {
            return Err(OracleError::QueryOutOfRange(d.max_token()));
        }
    }
    let tail = &history[history.len() - m..];
    let n_ctx = model.rows().len();
    let shift = n_ctx / v; // V^{m-1}

    // step 1 reads a single row
    let start = model.context_index(tail);
    let mut state = vec![0.0; n_ctx];
    let mut log_p = 0.0;
    let mut contractions = 0;
    for (k, domain) in part.domains().iter().enumerate() {
        let mut next = vec![0.0; n_ctx];
        if k == 0 {
            let row = &model.rows()[start];
            for &t in domain.tokens() {
                next[(start % shift) * v + t as usize] += row[t as usize];
            }
        } else {
            contractions += 1;
            for (ctx, &mass) in state.iter().enumerate() {
                if mass == 0.0 {
                    continue;
                }
                let row = &model.rows()[ctx];
                for &t in domain.tokens() {
                    next[(ctx % shift) * v + t as usize] += mass * row[t as usize];
                }
            }
        }
        let c: f64 = next.iter().sum();
        if c <= 0.0 {
            return Ok(GeneralQueryResult { probability: 0.0, log_probability: f64::NEG_INFINITY, contractions });
        }
        log_p += c.ln();
        next.iter_mut().for_each(|x| *x /= c);
        state = next;
    }
    Ok(GeneralQueryResult { probability: log_p.exp(), log_probability: log_p, contractions })
}

/// Sum of [`general_query_markov`] over the parts of a query.
pub fn query_probability(model: &MarkovModel, query: &Query, history: &[Token]) -> Result<f64, OracleError> {
    let mut total = 0.0;
    for part in query.parts() {
        total += general_query_markov(model, part, history)?.probability;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::query::{hitting_time, RestrictedDomain, Vocab};
    use rand::{Rng, SeedableRng};

    const P: [[f64; 2]; 2] = [[0.9, 0.1], [0.5, 0.5]];

    fn p2() -> Vec<Vec<f64>> {
        P.iter().map(|r| r.to_vec()).collect()
    }

    fn uniform(n: usize) -> Vec<Vec<f64>> {
        vec![vec![1.0 / n as f64; n]; n]
    }

    /// Sum over every path in `V^K` admitted by `part`, multiplying
    /// transitions directly.
    fn enumerate(model: &MarkovModel, part: &ProductQuery, history: &[Token]) -> f64 {
        let v = model.rows()[0].len();
        let k = part.horizon();
        let mut total = 0.0;
        for mut idx in 0..v.pow(k as u32) {
            let mut seq = vec![0 as Token; k];
            for s in seq.iter_mut().rev() {
                *s = (idx % v) as Token;
                idx /= v;
            }
            if !part.admits(&seq) {
                continue;
            }
            let mut ctx: Vec<Token> = history.to_vec();
            let mut p = 1.0;
            for &t in &seq {
                p *= model.row(&ctx[ctx.len() - model.order()..])[t as usize];
                ctx.push(t);
            }
            total += p;
        }
        total
    }

    #[test]
    fn steady_state_examples() {
        let pi = steady_state(&p2()).unwrap().pi;
        assert!((pi[0] - 5.0 / 6.0).abs() < 1e-12 && (pi[1] - 1.0 / 6.0).abs() < 1e-12);
        let ds = vec![vec![0.2, 0.5, 0.3], vec![0.5, 0.3, 0.2], vec![0.3, 0.2, 0.5]];
        for x in steady_state(&ds).unwrap().pi {
            assert!((x - 1.0 / 3.0).abs() < 1e-12);
        }
        let id = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        assert_eq!(steady_state(&id).unwrap_err(), OracleError::NotErgodic(Ergodicity::Reducible));
    }

    #[test]
    fn steady_state_is_stationary() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let m = MarkovModel::random(Vocab::new(5).unwrap(), 1, 1.5, &mut rng);
            let pi = steady_state(m.rows()).unwrap().pi;
            let next = vec_mat(&pi, m.rows());
            for (a, b) in pi.iter().zip(&next) {
                assert!((a - b).abs() < 1e-10);
            }
            assert!((pi.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn marginal_examples() {
        let m = q2_marginal(&p2(), 0, 1).unwrap();
        assert_eq!(m.probs, vec![0.9, 0.1]);
        assert_eq!(m.multiplications, 1);
        let m = q2_marginal(&p2(), 0, 2).unwrap();
        assert!((m.probs[0] - 0.86).abs() < 1e-15 && (m.probs[1] - 0.14).abs() < 1e-15);
        assert_eq!(m.multiplications, 2);
        let ds = vec![vec![0.2, 0.5, 0.3], vec![0.5, 0.3, 0.2], vec![0.3, 0.2, 0.5]];
        let m = q2_marginal(&ds, 1, 200).unwrap();
        assert_eq!(m.multiplications, 200);
        for x in m.probs {
            assert!((x - 1.0 / 3.0).abs() < 1e-8);
        }
    }

    #[test]
    fn hitting_uniform_both_methods() {
        for k in 1..=8usize {
            let h = q3_hitting(&uniform(3), 1, 0, k).unwrap();
            let expected = (1.0 / 3.0) * (2.0f64 / 3.0).powi(k as i32 - 1);
            assert!((h.recursive - expected).abs() < 1e-15);
            assert!((h.closed_form.unwrap() - expected).abs() < 1e-15);
        }
        let h = q3_hitting(&p2(), 0, 1, 1).unwrap();
        assert_eq!(h.recursive, 0.1);
        assert_eq!(h.closed_form.unwrap(), 0.1);
    }

    #[test]
    fn hitting_recursive_matches_enumeration() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let vocab = Vocab::new(4).unwrap();
        for _ in 0..10 {
            let m = MarkovModel::random(vocab, 1, 1.0, &mut rng);
            let v: Token = rng.gen_range(0..4);
            let a: Token = rng.gen_range(0..4);
            let q = hitting_time(&[a], 6, vocab).unwrap();
            let brute = enumerate(&m, &q.parts()[0], &[v]);
            let h = q3_hitting(m.rows(), v, a, 6).unwrap();
            assert!((h.recursive - brute).abs() < 1e-12);
            // the closed form is reported, not asserted equal
            assert!(h.closed_form.is_ok());
        }
        let periodic = vec![vec![0.0, 1.0], vec![1.0, 0.0]];
        let h = q3_hitting(&periodic, 0, 1, 3).unwrap();
        assert_eq!(h.recursive, 0.0);
        assert!(h.closed_form.is_err());
    }

    #[test]
    fn hitting_mass_is_subprobability() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let m = MarkovModel::random(Vocab::new(4).unwrap(), 1, 2.0, &mut rng);
        let dist = hitting_distribution(m.rows(), 2, 0, 500).unwrap();
        let mut partial = 0.0;
        for x in dist {
            assert!(x >= 0.0);
            let next = partial + x;
            assert!(next >= partial);
            partial = next;
        }
        assert!(partial <= 1.0 + 1e-12);
    }

    #[test]
    fn a_before_b_closed_form() {
        let u = uniform(3);
        assert!((q4_a_before_b(&u, 2, 0, 1).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(q4_a_before_b(&u, 2, 0, 0).unwrap_err(), OracleError::SameTarget);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        for _ in 0..20 {
            let m = MarkovModel::random(Vocab::new(5).unwrap(), 1, 1.0, &mut rng);
            let x = q4_a_before_b(m.rows(), 4, 0, 1).unwrap();
            let y = q4_a_before_b(m.rows(), 4, 1, 0).unwrap();
            assert!((x + y - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn general_query_examples() {
        let vocab = Vocab::new(3).unwrap();
        let chain = MarkovModel::uniform(vocab, 1);
        let full = ProductQuery::full(vocab, 4).unwrap();
        let r = general_query_markov(&chain, &full, &[0]).unwrap();
        assert!((r.probability - 1.0).abs() < 1e-15);
        assert_eq!(r.contractions, 3);
        for k in 1..=6 {
            let q = hitting_time(&[0], k, vocab).unwrap();
            let r = general_query_markov(&chain, &q.parts()[0], &[2]).unwrap();
            assert!((r.probability - (1.0 / 3.0) * (2.0f64 / 3.0).powi(k as i32 - 1)).abs() < 1e-15);
            assert_eq!(r.contractions, k - 1);
        }
    }

    #[test]
    fn second_order_matches_enumeration() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(21);
        let vocab = Vocab::new(3).unwrap();
        for _ in 0..25 {
            let m = MarkovModel::random(vocab, 2, 1.0, &mut rng);
            let domains = (0..4)
                .map(|_| {
                    let toks: Vec<Token> = (0..3).filter(|_| rng.gen_bool(0.6)).collect();
                    if toks.is_empty() {
                        RestrictedDomain::singleton(rng.gen_range(0..3))
                    } else {
                        RestrictedDomain::new(toks, vocab).unwrap()
                    }
                })
                .collect();
            let part = ProductQuery::new(domains).unwrap();
            let history = [rng.gen_range(0..3), rng.gen_range(0..3), rng.gen_range(0..3)];
            let r = general_query_markov(&m, &part, &history).unwrap();
            assert!((r.probability - enumerate(&m, &part, &history)).abs() < 1e-12);
            assert_eq!(r.contractions, 3);
        }
    }
}
