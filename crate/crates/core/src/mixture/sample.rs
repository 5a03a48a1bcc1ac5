use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use super::SignalModel;
use crate::error::{Error, Result};
use crate::measurement::MeasurementModel;
use crate::rng::{self, CHUNK_SIZE};

/// Draws of `(c, x, y)` from the joint model; row `i` of `x` and `y` belongs
/// to `labels[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct JointSample {
    pub labels: Vec<usize>,
    pub components: Vec<usize>,
    pub x: DMatrix<f64>,
    pub y: DMatrix<f64>,
}

impl JointSample {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn y_row(&self, i: usize) -> DVector<f64> {
        self.y.row(i).transpose()
    }
}

fn categorical(weights: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return i;
        }
    }
    weights.iter().rposition(|w| *w > 0.0).unwrap_or(0)
}

/// Samples `c ~ Mult(w)`, `x ~ p(x|c)`, `y = Φx + ε`. Draws are generated in
/// fixed chunks of [`CHUNK_SIZE`] rows, each from its own RNG stream, so the
/// output depends only on `seed`.
pub fn sample_joint(model: &SignalModel, meas: &MeasurementModel, n: usize, seed: u64) -> Result<JointSample> {
    if n == 0 {
        return Err(Error::InvalidArgument("sample count must be >= 1".into()));
    }
    let p = model.dim();
    if meas.dim_in() != p {
        return Err(Error::Dimension(format!(
            "model dimension {p} but projection has {} columns",
            meas.dim_in()
        )));
    }
    let d = meas.dim_out();
    let phi = meas.projection();
    let colorer = meas.noise_colorer();
    let noise_dim = colorer.ncols();
    let factors: Vec<Vec<DMatrix<f64>>> = model
        .classes()
        .iter()
        .map(|c| c.components().iter().map(|g| g.cholesky().l()).collect())
        .collect();

    let n_chunks = n.div_ceil(CHUNK_SIZE);
    let chunks: Vec<(Vec<usize>, Vec<usize>, Vec<f64>, Vec<f64>)> = (0..n_chunks)
        .into_par_iter()
        .map(|chunk| {
            let mut rng = rng::stream(seed, chunk as u64);
            let rows = CHUNK_SIZE.min(n - chunk * CHUNK_SIZE);
            let mut labels = Vec::with_capacity(rows);
            let mut comps = Vec::with_capacity(rows);
            let mut xs = Vec::with_capacity(rows * p);
            let mut ys = Vec::with_capacity(rows * d);
            for _ in 0..rows {
                let c = categorical(model.class_priors(), rng.random::<f64>());
                let gmm = &model.classes()[c];
                let o = categorical(gmm.weights(), rng.random::<f64>());
                let z = DVector::from_fn(p, |_, _| StandardNormal.sample(&mut rng));
                let e = DVector::from_fn(noise_dim, |_, _| StandardNormal.sample(&mut rng));
                let x = gmm.components()[o].mean() + &factors[c][o] * z;
                let y = phi * &x + &colorer * e;
                labels.push(c);
                comps.push(o);
                xs.extend(x.iter());
                ys.extend(y.iter());
            }
            (labels, comps, xs, ys)
        })
        .collect();

    let mut labels = Vec::with_capacity(n);
    let mut components = Vec::with_capacity(n);
    let mut xs = Vec::with_capacity(n * p);
    let mut ys = Vec::with_capacity(n * d);
    for (l, c, x, y) in chunks {
        labels.extend(l);
        components.extend(c);
        xs.extend(x);
        ys.extend(y);
    }
    Ok(JointSample {
        labels,
        components,
        x: DMatrix::from_row_slice(n, p, &xs),
        y: DMatrix::from_row_slice(n, d, &ys),
    })
}
