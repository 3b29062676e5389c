use crate::query::{Token, Vocab};

use super::{CallCounter, Distribution, ModelError, SequenceModel};

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// 64-bit FNV-1a over `bytes`, continuing from `state`.
pub fn fnv1a64(state: u64, bytes: &[u8]) -> u64 {
    bytes.iter().fold(state, |h, &b| (h ^ b as u64).wrapping_mul(FNV_PRIME))
}

/// Deterministic non-Markov model with an unbounded context window.
///
/// The context `history ‖ prefix` is folded into a rolling FNV-1a hash over
/// each token's 4 little-endian bytes, starting from the FNV offset basis.
/// Token `v`'s logit is then
///
/// ```text
/// x = fnv1a64(FNV_OFFSET, seed_le8 ‖ context_hash_le8 ‖ v_le4)
/// logit_v = -3 + 6 * (x >> 11) / 2^53
/// ```
///
/// and the distribution is the softmax of the logits.
#[derive(Debug)]
pub struct SyntheticMixerModel {
    vocab: Vocab,
    seed: u64,
    counter: CallCounter,
}

impl SyntheticMixerModel {
    pub fn new(vocab: Vocab, seed: u64) -> Self {
        SyntheticMixerModel { vocab, seed, counter: CallCounter::new() }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn context_hash(history: &[Token], prefix: &[Token]) -> u64 {
        history
            .iter()
            .chain(prefix)
            .fold(FNV_OFFSET, |h, t| fnv1a64(h, &t.to_le_bytes()))
    }

    pub fn logits(&self, history: &[Token], prefix: &[Token]) -> Vec<f64> {
        let ctx = Self::context_hash(history, prefix);
        let base = fnv1a64(fnv1a64(FNV_OFFSET, &self.seed.to_le_bytes()), &ctx.to_le_bytes());
        self.vocab
            .tokens()
            .map(|v| {
                let x = fnv1a64(base, &v.to_le_bytes());
                -3.0 + 6.0 * ((x >> 11) as f64 / (1u64 << 53) as f64)
            })
            .collect()
    }
}

impl SequenceModel for SyntheticMixerModel {
    fn vocab(&self) -> Vocab {
        self.vocab
    }

    fn evaluate(&self, history: &[Token], prefix: &[Token]) -> Result<Distribution, ModelError> {
        Distribution::from_logits(&self.logits(history, prefix))
    }

    fn counter(&self) -> &CallCounter {
        &self.counter
    }

    fn name(&self) -> String {
        format!("synthetic(seed={})", self.seed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::query::History;

    #[test]
    fn fnv_reference_vectors() {
        // published FNV-1a 64 test vectors
        assert_eq!(fnv1a64(FNV_OFFSET, b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(FNV_OFFSET, b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a64(FNV_OFFSET, b"foobar"), 0x85944171f73967e8);
    }

    #[test]
    fn deterministic() {
        let m = SyntheticMixerModel::new(Vocab::new(5).unwrap(), 7);
        let a = m.next(&History::empty(), &[0, 1]).unwrap();
        let b = m.next(&History::empty(), &[0, 1]).unwrap();
        assert_eq!(a, b);
        assert_eq!(m.calls(), 2);
        for lp in a.log_probs() {
            assert!(*lp < 0.0);
        }
    }

    #[test]
    fn depends_on_full_context() {
        let m = SyntheticMixerModel::new(Vocab::new(4).unwrap(), 7);
        // same last token, different earlier tokens
        let a = m.evaluate(&[0, 2], &[1]).unwrap();
        let b = m.evaluate(&[3, 2], &[1]).unwrap();
        assert_ne!(a, b);
        // the history/prefix split does not matter, only the concatenation
        assert_eq!(m.evaluate(&[0, 2], &[1]).unwrap(), m.evaluate(&[0], &[2, 1]).unwrap());
        let logits = m.logits(&[1], &[]);
        assert!(logits.iter().all(|x| (-3.0..3.0).contains(x)));
    }
}
