use crate::query::Token;
use crate::stats::logsumexp;

use super::ModelError;

/// Maximum `|logsumexp(logp)|` accepted for a distribution.
pub const NORMALIZATION_TOLERANCE: f64 = 1e-9;

/// Probability vector over the vocabulary, stored as natural logs.
#[derive(Debug, Clone, PartialEq)]
pub struct Distribution {
    logp: Vec<f64>,
}

impl Distribution {
    /// Validates that `logp` normalizes within [`NORMALIZATION_TOLERANCE`].
    pub fn from_log_probs(logp: Vec<f64>) -> Result<Self, ModelError> {
        if logp.iter().any(|x| x.is_nan() || *x > 1e-12) {
            return Err(ModelError::Invalid("log-probabilities must be <= 0".into()));
        }
        let z = logsumexp(&logp);
        if !(z.abs() <= NORMALIZATION_TOLERANCE) {
            return Err(ModelError::NotNormalized(z));
        }
        Ok(Distribution { logp: logp.into_iter().map(|x| x.min(0.0)).collect() })
    }

    /// Softmax of arbitrary finite (or `-inf`) scores.
    pub fn from_logits(logits: &[f64]) -> Result<Self, ModelError> {
        let z = logsumexp(logits);
        if !z.is_finite() {
            return Err(ModelError::Invalid("logits have no finite mass".into()));
        }
        Ok(Distribution { logp: logits.iter().map(|&x| (x - z).min(0.0)).collect() })
    }

    pub fn from_probs(probs: &[f64]) -> Result<Self, ModelError> {
        if probs.iter().any(|p| !(*p >= 0.0) || !p.is_finite()) {
            return Err(ModelError::Invalid("probabilities must be finite and nonnegative".into()));
        }
        Self::from_log_probs(probs.iter().map(|p| p.ln()).collect())
    }

    pub fn uniform(size: usize) -> Self {
        Distribution { logp: vec![-(size as f64).ln(); size] }
    }

    pub fn log_probs(&self) -> &[f64] {
        &self.logp
    }

    pub fn log_prob(&self, token: Token) -> f64 {
        self.logp[token as usize]
    }

    pub fn prob(&self, token: Token) -> f64 {
        self.logp[token as usize].exp()
    }

    pub fn probs(&self) -> Vec<f64> {
        self.logp.iter().map(|x| x.exp()).collect()
    }

    pub fn len(&self) -> usize {
        self.logp.len()
    }

    pub fn is_empty(&self) -> bool {
        self.logp.is_empty()
    }

    /// Index of the first maximal entry.
    pub fn argmax(&self) -> Token {
        let mut best = 0;
        for (i, &x) in self.logp.iter().enumerate() {
            if x > self.logp[best] {
                best = i;
            }
        }
        best as Token
    }

    pub fn entropy(&self) -> f64 {
        -self
            .logp
            .iter()
            .filter(|x| x.is_finite())
            .map(|&x| x.exp() * x)
            .sum::<f64>()
    }

    pub fn with_temperature(&self, temperature: f64) -> Result<Self, ModelError> {
        apply_temperature(self, temperature)
    }
}

/// `p' ∝ p^{1/T}`: `logp' = logp/T − logsumexp(logp/T)`.
pub fn apply_temperature(dist: &Distribution, temperature: f64) -> Result<Distribution, ModelError> {
    if !(temperature > 0.0) || !temperature.is_finite() {
        return Err(ModelError::InvalidTemperature(temperature));
    }
    if temperature == 1.0 {
        return Ok(dist.clone());
    }
    let scaled: Vec<f64> = dist.logp.iter().map(|&x| x / temperature).collect();
    Distribution::from_logits(&scaled)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn probs(d: &Distribution) -> Vec<f64> {
        d.probs()
    }

    #[test]
    fn temperature_examples() {
        let d = Distribution::from_probs(&[0.8, 0.2]).unwrap();
        let t1 = apply_temperature(&d, 1.0).unwrap();
        assert_eq!(t1, d);
        let half = probs(&apply_temperature(&d, 0.5).unwrap());
        assert!((half[0] - 16.0 / 17.0).abs() < 1e-12);
        assert!((half[1] - 1.0 / 17.0).abs() < 1e-12);
        let hot = probs(&apply_temperature(&d, 1e6).unwrap());
        assert!((hot[0] - 0.5).abs() < 1e-5 && (hot[1] - 0.5).abs() < 1e-5);
        assert!(matches!(apply_temperature(&d, 0.0), Err(ModelError::InvalidTemperature(_))));
        assert!(matches!(apply_temperature(&d, -1.0), Err(ModelError::InvalidTemperature(_))));
    }

    #[test]
    fn rejects_unnormalized() {
        assert!(matches!(Distribution::from_probs(&[0.5, 0.4]), Err(ModelError::NotNormalized(_))));
        assert!(Distribution::from_probs(&[1.0, 0.0]).is_ok());
    }

    #[test]
    fn zero_entries_survive_temperature() {
        let d = Distribution::from_probs(&[1.0, 0.0, 0.0]).unwrap();
        let t = apply_temperature(&d, 3.0).unwrap();
        assert_eq!(t.log_prob(1), f64::NEG_INFINITY);
        assert_eq!(t.log_prob(0), 0.0);
    }

    proptest! {
        #[test]
        fn temperature_keeps_argmax_and_normalization(
            logits in proptest::collection::vec(-5.0f64..5.0, 2..8),
            t in 0.05f64..50.0,
        ) {
            let d = Distribution::from_logits(&logits).unwrap();
            let mut sorted = logits.clone();
            sorted.sort_by(|a, b| b.total_cmp(a));
            prop_assume!(sorted[0] - sorted[1] > 1e-9);
            let dt = apply_temperature(&d, t).unwrap();
            prop_assert_eq!(dt.argmax(), d.argmax());
            prop_assert!(logsumexp(dt.log_probs()).abs() < NORMALIZATION_TOLERANCE);
        }
    }
}
