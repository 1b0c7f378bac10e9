use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::Dataset;

/// `(1/2n) sum_i min_q (y_i - v_q^T x_i)^2` with one expert per column.
pub fn metric_mse_samples(test: &Dataset, experts: &DMatrix<f64>) -> Result<f64> {
    let y = test
        .y()
        .ok_or_else(|| Error::InvalidInput("the sample metric needs a regression target".into()))?;
    if experts.ncols() == 0 {
        return Err(Error::InvalidInput("at least one expert is needed".into()));
    }
    if experts.nrows() != test.d() {
        return Err(Error::dim("expert length", test.d(), experts.nrows()));
    }
    let pred = &test.x * experts;
    let total: f64 = (0..test.n())
        .map(|i| {
            pred.row(i)
                .iter()
                .map(|p| (y[i] - p).powi(2))
                .fold(f64::INFINITY, f64::min)
        })
        .sum();
    Ok(total / (2.0 * test.n() as f64))
}

/// `||w* - w||_2`.
pub fn weight_error(w_star: &DVector<f64>, w: &DVector<f64>) -> f64 {
    (w_star - w).norm()
}

/// Half mean squared error of a single linear predictor.
pub fn half_mse(data: &Dataset, w: &DVector<f64>) -> Result<f64> {
    let y = data
        .y()
        .ok_or_else(|| Error::InvalidInput("half_mse needs a regression target".into()))?;
    Ok((&data.x * w - y).norm_squared() / (2.0 * data.n() as f64))
}
