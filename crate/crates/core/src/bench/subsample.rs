use rand::seq::index;
use rand::Rng;

use crate::data::Dataset;
use crate::error::{Error, Result};

/// Groups of sample indices chosen together, per class: whole locations
/// when the dataset is temporal, single samples otherwise. Groups are in
/// order of first appearance.
pub fn selection_units(ds: &Dataset) -> Vec<Vec<Vec<usize>>> {
    let mut per_class: Vec<Vec<Vec<usize>>> = vec![Vec::new(); ds.num_classes()];
    if ds.is_temporal() {
        let mut seen = vec![false; ds.location_keys().len()];
        for s in ds.samples() {
            let loc = s.location.0 as usize;
            if !seen[loc] {
                seen[loc] = true;
                per_class[s.label].push(ds.views_at(s.location).to_vec());
            }
        }
    } else {
        for (i, s) in ds.samples().iter().enumerate() {
            per_class[s.label].push(vec![i]);
        }
    }
    per_class
}

/// Splits every class's units into a chosen part of `count(n_c)` units and
/// the rest. Both index lists come back sorted.
fn choose_units(
    ds: &Dataset,
    rng: &mut impl Rng,
    count: impl Fn(usize) -> usize,
) -> Result<(Vec<usize>, Vec<usize>)> {
    let mut chosen = Vec::new();
    let mut rest = Vec::new();
    for (class, units) in selection_units(ds).into_iter().enumerate() {
        if units.is_empty() {
            return Err(Error::config("dataset", format!("class {class} has no samples")));
        }
        let k = count(units.len()).min(units.len());
        let mut take = vec![false; units.len()];
        for i in index::sample(rng, units.len(), k) {
            take[i] = true;
        }
        for (unit, t) in units.into_iter().zip(take) {
            if t {
                chosen.extend(unit);
            } else {
                rest.extend(unit);
            }
        }
    }
    chosen.sort_unstable();
    rest.sort_unstable();
    Ok((chosen, rest))
}

/// Per class with `n_c` units, keeps `max(1, round(n_c * fraction))` units
/// drawn uniformly without replacement. `fraction == 1` returns every
/// index in order.
pub fn stratified_subsample(ds: &Dataset, fraction: f64, rng: &mut impl Rng) -> Result<Vec<usize>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::config("fraction", format!("{fraction} is outside (0, 1]")));
    }
    if fraction == 1.0 {
        if let Some(c) = selection_units(ds).iter().position(Vec::is_empty) {
            return Err(Error::config("dataset", format!("class {c} has no samples")));
        }
        return Ok((0..ds.len()).collect());
    }
    Ok(choose_units(ds, rng, |n| ((n as f64 * fraction).round() as usize).max(1))?.0)
}

/// Holds out `max(1, round(n_c * fraction))` units per class for testing,
/// always leaving at least one for training. Returns `(pool, test)`.
pub fn holdout_split(ds: &Dataset, fraction: f64, rng: &mut impl Rng) -> Result<(Vec<usize>, Vec<usize>)> {
    if let Some(c) = selection_units(ds).iter().position(|u| u.len() < 2) {
        return Err(Error::config(
            "dataset",
            format!("class {c} needs at least two locations to hold out a test split"),
        ));
    }
    let (test, pool) = choose_units(ds, rng, |n| {
        ((n as f64 * fraction).round() as usize).clamp(1, n - 1)
    })?;
    Ok((pool, test))
}

/// Fitting and validation parts of a labeled subset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValSplit {
    pub fit: Vec<usize>,
    pub val: Vec<usize>,
    /// No class had enough units for a validation part, so the fitting data
    /// doubles as validation data.
    pub val_is_fit: bool,
}

/// Moves `floor(n_c * fraction)` units of each class into validation.
pub fn validation_split(ds: &Dataset, fraction: f64, rng: &mut impl Rng) -> Result<ValSplit> {
    let (val, fit) = choose_units(ds, rng, |n| (n as f64 * fraction).floor() as usize)?;
    if val.is_empty() {
        return Ok(ValSplit {
            val: fit.clone(),
            fit,
            val_is_fit: true,
        });
    }
    Ok(ValSplit {
        fit,
        val,
        val_is_fit: false,
    })
}
