use super::queue::check_unit;
use crate::data::LocationId;
use crate::error::{Error, Result};
use crate::nn::functional::info_nce_row;

/// Temperature-scaled InfoNCE for one query.
///
/// `loss = -ln[exp(q·k⁺/τ) / (exp(q·k⁺/τ) + Σ exp(q·k⁻/τ))]`, where the sum
/// skips every negative sharing `query_location` when
/// `mask_false_negatives` is set.
pub fn info_nce(
    q: &[f64],
    k_pos: &[f64],
    negatives: &[(&[f64], LocationId)],
    query_location: LocationId,
    temperature: f64,
    mask_false_negatives: bool,
) -> Result<f64> {
    if !(temperature > 0.0) {
        return Err(Error::config("contrastive.temperature", "must be positive"));
    }
    check_unit("query", q)?;
    check_unit("positive key", k_pos)?;
    for (i, (n, _)) in negatives.iter().enumerate() {
        if n.len() != q.len() {
            return Err(Error::Contract(format!("negative {i} has the wrong dimension")));
        }
        check_unit(&format!("negative {i}"), n)?;
    }
    if k_pos.len() != q.len() {
        return Err(Error::Contract("positive key has the wrong dimension".into()));
    }
    let kept = negatives
        .iter()
        .filter(|(_, loc)| !mask_false_negatives || *loc != query_location)
        .map(|(n, _)| *n);
    Ok(info_nce_row(q, k_pos, kept, temperature).loss)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn orthogonal_single_negative_is_ln2() {
        let q = [1.0, 0.0, 0.0];
        let k = [0.0, 1.0, 0.0];
        let n = [0.0, 0.0, 1.0];
        let loss = info_nce(&q, &k, &[(&n, LocationId(1))], LocationId(0), 1.0, false).unwrap();
        assert!((loss - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn all_masked_is_zero() {
        let q = [1.0, 0.0];
        let k = [0.6, 0.8];
        let n = [0.0, 1.0];
        let negs = [(&n[..], LocationId(4)), (&n[..], LocationId(4))];
        assert_eq!(info_nce(&q, &k, &negs, LocationId(4), 0.2, true).unwrap(), 0.0);
        assert!(info_nce(&q, &k, &negs, LocationId(4), 0.2, false).unwrap() > 0.0);
    }

    #[test]
    fn bad_inputs() {
        let q = [1.0, 0.0];
        assert!(matches!(
            info_nce(&q, &q, &[], LocationId(0), 0.0, false),
            Err(Error::Config { .. })
        ));
        assert!(matches!(
            info_nce(&[0.9, 0.0], &q, &[], LocationId(0), 1.0, false),
            Err(Error::Contract(_))
        ));
    }
}
