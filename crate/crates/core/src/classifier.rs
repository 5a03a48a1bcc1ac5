//! Bayes classifier `argmax_c p(c | y)` induced by a signal model.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measurement::MeasurementModel;
use crate::mixture::SignalModel;
use crate::posterior::PosteriorEngine;

/// Index of the largest entry; ties go to the lowest index.
fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in p.iter().enumerate() {
        if *v > p[best] {
            best = i;
        }
    }
    best
}

/// Most probable class for one measurement, with the full class posterior.
pub fn predict(model: &SignalModel, meas: &MeasurementModel, y: &DVector<f64>) -> Result<(usize, Vec<f64>)> {
    let post = PosteriorEngine::new(model, meas)?.class_posterior(y)?;
    Ok((argmax(&post), post))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionBatch {
    pub predicted: Vec<usize>,
    pub class_posteriors: Vec<Vec<f64>>,
    pub accuracy: f64,
}

/// Classifies every row of `features` from `y = Φx` (no noise is added) and
/// scores against `labels`.
pub fn evaluate(model: &SignalModel, meas: &MeasurementModel, features: &DMatrix<f64>, labels: &[usize]) -> Result<PredictionBatch> {
    let n = features.nrows();
    if labels.len() != n {
        return Err(Error::Dimension(format!("{n} feature rows but {} labels", labels.len())));
    }
    if features.ncols() != meas.dim_in() {
        return Err(Error::Dimension(format!(
            "features have {} columns, projection expects {}",
            features.ncols(),
            meas.dim_in()
        )));
    }
    let m = model.n_classes();
    if let Some((i, l)) = labels.iter().enumerate().find(|(_, l)| **l >= m) {
        return Err(Error::InvalidArgument(format!("label {l} at row {i} out of range for {m} classes")));
    }
    let engine = PosteriorEngine::new(model, meas)?;
    let y_all = features * meas.projection().transpose();
    let class_posteriors = (0..n)
        .into_par_iter()
        .map(|i| engine.class_posterior(&y_all.row(i).transpose()))
        .collect::<Result<Vec<_>>>()?;
    let predicted: Vec<usize> = class_posteriors.iter().map(|p| argmax(p)).collect();
    let correct = predicted.iter().zip(labels).filter(|(a, b)| a == b).count();
    let accuracy = if n == 0 { 0.0 } else { correct as f64 / n as f64 };
    Ok(PredictionBatch {
        predicted,
        class_posteriors,
        accuracy,
    })
}
