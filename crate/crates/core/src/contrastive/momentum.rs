use crate::error::{Error, Result};
use crate::nn::ParamSet;

/// Query encoder and its exponential-moving-average key encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentumPair {
    pub query: ParamSet,
    pub key: ParamSet,
    pub momentum: f64,
}

impl MomentumPair {
    /// Key encoder starts as an exact copy of the query encoder.
    pub fn new(query: ParamSet, momentum: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&momentum) {
            return Err(Error::config("contrastive.ema", "must lie in [0, 1]"));
        }
        let key = query.weights_only();
        Ok(Self { query, key, momentum })
    }

    pub fn ema_update(&mut self) -> Result<()> {
        ema_update(&mut self.key, &self.query, self.momentum)
    }
}

/// `key <- m·key + (1 - m)·query`, elementwise over every parameter.
pub fn ema_update(key: &mut ParamSet, query: &ParamSet, m: f64) -> Result<()> {
    if !key.same_layout(query) {
        return Err(Error::Contract(
            "key and query encoders have different parameter layouts".into(),
        ));
    }
    for ((_, k), (_, q)) in key.iter_mut().zip(query.iter()) {
        for (kv, qv) in k.data_mut().iter_mut().zip(q.data()) {
            *kv = m * *kv + (1.0 - m) * qv;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Tensor;

    fn one(v: f64) -> ParamSet {
        let mut p = ParamSet::new();
        p.insert("w", Tensor::scalar(v)).unwrap();
        p
    }

    #[test]
    fn midpoint_and_extremes() {
        let q = one(2.0);
        let mut k = one(0.0);
        ema_update(&mut k, &q, 0.5).unwrap();
        assert_eq!(k.get("w").unwrap().data(), &[1.0]);
        ema_update(&mut k, &q, 1.0).unwrap();
        assert_eq!(k.get("w").unwrap().data(), &[1.0]);
        ema_update(&mut k, &q, 0.0).unwrap();
        assert_eq!(k.get("w").unwrap().data(), &[2.0]);
    }

    #[test]
    fn layout_mismatch() {
        let mut k = one(0.0);
        let mut q = ParamSet::new();
        q.insert("v", Tensor::scalar(1.0)).unwrap();
        assert!(matches!(ema_update(&mut k, &q, 0.5), Err(Error::Contract(_))));
    }
}
