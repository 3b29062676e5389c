use crate::query::{History, Token, Vocab};

use super::{apply_temperature, CallCounter, Distribution, ModelError, SequenceModel};

/// Applies temperature `T` to every conditional of an inner model.
pub struct TemperatureWrapped<M> {
    inner: M,
    temperature: f64,
    counter: CallCounter,
}

impl<M: SequenceModel> TemperatureWrapped<M> {
    pub fn new(inner: M, temperature: f64) -> Result<Self, ModelError> {
        if !(temperature > 0.0) || !temperature.is_finite() {
            return Err(ModelError::InvalidTemperature(temperature));
        }
        Ok(TemperatureWrapped { inner, temperature, counter: CallCounter::new() })
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn inner(&self) -> &M {
        &self.inner
    }
}

impl<M: SequenceModel> SequenceModel for TemperatureWrapped<M> {
    fn vocab(&self) -> Vocab {
        self.inner.vocab()
    }

    fn evaluate(&self, history: &[Token], prefix: &[Token]) -> Result<Distribution, ModelError> {
        apply_temperature(&self.inner.evaluate(history, prefix)?, self.temperature)
    }

    fn counter(&self) -> &CallCounter {
        &self.counter
    }

    fn name(&self) -> String {
        format!("{}@T={}", self.inner.name(), self.temperature)
    }

    fn next(&self, history: &History, prefix: &[Token]) -> Result<Distribution, ModelError> {
        let dist = self.inner.next(history, prefix)?;
        self.counter.increment();
        apply_temperature(&dist, self.temperature)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::SyntheticMixerModel;

    #[test]
    fn unit_temperature_is_identity() {
        let vocab = Vocab::new(4).unwrap();
        let base = SyntheticMixerModel::new(vocab, 3);
        let wrapped = TemperatureWrapped::new(SyntheticMixerModel::new(vocab, 3), 1.0).unwrap();
        let h = History::new(vec![1, 2]);
        assert_eq!(base.next(&h, &[0]).unwrap(), wrapped.next(&h, &[0]).unwrap());
        assert_eq!(wrapped.calls(), 1);
        assert_eq!(wrapped.inner().calls(), 1);
    }

    #[test]
    fn high_temperature_flattens() {
        let vocab = Vocab::new(4).unwrap();
        let hot = TemperatureWrapped::new(SyntheticMixerModel::new(vocab, 3), 1e6).unwrap();
        let d = hot.next(&History::empty(), &[]).unwrap();
        for p in d.probs() {
            assert!((p - 0.25).abs() < 1e-5);
        }
        assert!(TemperatureWrapped::new(SyntheticMixerModel::new(vocab, 3), 0.0).is_err());
    }
}
