//! Versioned JSON files for fitted models and projections.
//!
//! Matrices are stored row-major. A model file looks like
//!
//! ```json
//! {
//!   "format_version": 1,
//!   "dim": 2,
//!   "class_priors": [0.5, 0.5],
//!   "classes": [
//!     { "weights": [1.0],
//!       "components": [ { "mean": [0.0, 0.0], "covariance": [1.0, 0.0, 0.0, 1.0] } ] },
//!     { "weights": [1.0],
//!       "components": [ { "mean": [1.0, 0.0], "covariance": [1.0, 0.0, 0.0, 1.0] } ] }
//!   ]
//! }
//! ```

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mixture::{ClassGmm, GaussianComponent, SignalModel};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ComponentFile {
    mean: Vec<f64>,
    covariance: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ClassFile {
    weights: Vec<f64>,
    components: Vec<ComponentFile>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    format_version: u32,
    dim: usize,
    class_priors: Vec<f64>,
    classes: Vec<ClassFile>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProjectionFile {
    format_version: u32,
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

fn check_version(found: u32) -> Result<()> {
    if found != FORMAT_VERSION {
        return Err(Error::FormatVersion {
            found,
            expected: FORMAT_VERSION,
        });
    }
    Ok(())
}

pub fn model_to_json(model: &SignalModel) -> Result<String> {
    let file = ModelFile {
        format_version: FORMAT_VERSION,
        dim: model.dim(),
        class_priors: model.class_priors().to_vec(),
        classes: model
            .classes()
            .iter()
            .map(|c| ClassFile {
                weights: c.weights().to_vec(),
                components: c
                    .components()
                    .iter()
                    .map(|g| ComponentFile {
                        mean: g.mean().as_slice().to_vec(),
                        covariance: row_major(g.covariance()),
                    })
                    .collect(),
            })
            .collect(),
    };
    Ok(serde_json::to_string_pretty(&file)?)
}

pub fn model_from_json(text: &str) -> Result<SignalModel> {
    let file: ModelFile = serde_json::from_str(text)?;
    check_version(file.format_version)?;
    let p = file.dim;
    let mut classes = Vec::with_capacity(file.classes.len());
    for (m, c) in file.classes.into_iter().enumerate() {
        let mut comps = Vec::with_capacity(c.components.len());
        for (o, g) in c.components.into_iter().enumerate() {
            if g.mean.len() != p || g.covariance.len() != p * p {
                return Err(Error::Dimension(format!(
                    "class {m} component {o}: expected mean of length {p} and {} covariance entries",
                    p * p
                )));
            }
            let cov = DMatrix::from_row_slice(p, p, &g.covariance);
            comps.push(GaussianComponent::new(DVector::from_vec(g.mean), cov)?);
        }
        classes.push(ClassGmm::new(c.weights, comps)?);
    }
    SignalModel::new(file.class_priors, classes)
}

pub fn projection_to_json(phi: &DMatrix<f64>) -> Result<String> {
    let file = ProjectionFile {
        format_version: FORMAT_VERSION,
        rows: phi.nrows(),
        cols: phi.ncols(),
        data: row_major(phi),
    };
    Ok(serde_json::to_string_pretty(&file)?)
}

pub fn projection_from_json(text: &str) -> Result<DMatrix<f64>> {
    let file: ProjectionFile = serde_json::from_str(text)?;
    check_version(file.format_version)?;
    if file.data.len() != file.rows * file.cols {
        return Err(Error::Dimension(format!(
            "projection header says {}x{} but has {} entries",
            file.rows,
            file.cols,
            file.data.len()
        )));
    }
    Ok(DMatrix::from_row_slice(file.rows, file.cols, &file.data))
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn save_model(model: &SignalModel, path: impl AsRef<Path>) -> Result<()> {
    write(path.as_ref(), &model_to_json(model)?)
}

pub fn load_model(path: impl AsRef<Path>) -> Result<SignalModel> {
    model_from_json(&read(path.as_ref())?)
}

pub fn save_projection(phi: &DMatrix<f64>, path: impl AsRef<Path>) -> Result<()> {
    write(path.as_ref(), &projection_to_json(phi)?)
}

pub fn load_projection(path: impl AsRef<Path>) -> Result<DMatrix<f64>> {
    projection_from_json(&read(path.as_ref())?)
}
