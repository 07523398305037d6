use serde::{Deserialize, Serialize};

use super::MetricsError;

/// Least-squares line `y = slope·x + intercept`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegressionFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub n_points: usize,
}

impl RegressionFit {
    pub fn predict(&self, x: f64) -> f64 {
        self.slope * x + self.intercept
    }
}

/// Simple linear regression on centered sums.
///
/// `R² = 1 − SS_res/SS_tot`; a constant response is fitted exactly and
/// reported with `R² = 1`.
pub fn ols_fit(points: &[(f64, f64)]) -> Result<RegressionFit, MetricsError> {
    let n = points.len();
    if n < 2 {
        return Err(MetricsError::InsufficientPoints(n));
    }
    let x0 = points[0].0;
    if points.iter().all(|&(x, _)| x == x0) {
        return Err(MetricsError::DegenerateAbscissa);
    }
    let nf = n as f64;
    let x_mean = points.iter().map(|p| p.0).sum::<f64>() / nf;
    let y_mean = points.iter().map(|p| p.1).sum::<f64>() / nf;
    let y0 = points[0].1;
    if points.iter().all(|&(_, y)| y == y0) {
        return Ok(RegressionFit {
            slope: 0.0,
            intercept: y0,
            r_squared: 1.0,
            n_points: n,
        });
    }
    let (mut sxx, mut sxy, mut ss_tot) = (0.0, 0.0, 0.0);
    for &(x, y) in points {
        let (dx, dy) = (x - x_mean, y - y_mean);
        sxx += dx * dx;
        sxy += dx * dy;
        ss_tot += dy * dy;
    }
    let slope = sxy / sxx;
    let intercept = y_mean - slope * x_mean;
    let ss_res: f64 = points
        .iter()
        .map(|&(x, y)| {
            let r = y - (slope * x + intercept);
            r * r
        })
        .sum();
    Ok(RegressionFit {
        slope,
        intercept,
        r_squared: 1.0 - ss_res / ss_tot,
        n_points: n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_line() {
        let pts: Vec<_> = (0..10).map(|i| (i as f64, 2.0 * i as f64 + 1.0)).collect();
        let f = ols_fit(&pts).unwrap();
        assert!((f.slope - 2.0).abs() < 1e-9);
        assert!((f.intercept - 1.0).abs() < 1e-9);
        assert!((f.r_squared - 1.0).abs() < 1e-9);
        assert_eq!(f.n_points, 10);
    }

    #[test]
    fn vertical_data_rejected() {
        let pts = [(3.0, 1.0), (3.0, 2.0), (3.0, 5.0)];
        assert_eq!(ols_fit(&pts), Err(MetricsError::DegenerateAbscissa));
    }

    #[test]
    fn too_few_points() {
        assert_eq!(ols_fit(&[(1.0, 1.0)]), Err(MetricsError::InsufficientPoints(1)));
    }

    #[test]
    fn constant_response() {
        let f = ols_fit(&[(0.0, 4.0), (1.0, 4.0), (2.0, 4.0)]).unwrap();
        assert_eq!((f.slope, f.intercept, f.r_squared), (0.0, 4.0, 1.0));
    }

    #[test]
    fn uncorrelated_r_squared_is_zero() {
        // Symmetric V shape: best line is flat.
        let f = ols_fit(&[(-1.0, 1.0), (0.0, 0.0), (1.0, 1.0)]).unwrap();
        assert!(f.slope.abs() < 1e-12);
        assert!(f.r_squared.abs() < 1e-12);
    }
}
