//! Power-law regression shared by the decay and growth instruments.

use serde::Serialize;

use crate::error::{Error, Result};

/// Fitted law `value ≈ amplitude * x^(-exponent)`.
///
/// Growth laws are stored with a negative exponent; [`DecayFit::growth`]
/// reads them back with the natural sign.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DecayFit {
    pub amplitude: f64,
    pub exponent: f64,
    /// RMS of the log-space residuals.
    pub residual: f64,
    /// Abscissa range covered by the samples.
    pub range: (f64, f64),
    pub samples: usize,
    /// Every sample was exactly zero.
    pub infinite_decay: bool,
}

impl DecayFit {
    pub fn decay(&self) -> f64 {
        self.exponent
    }

    pub fn growth(&self) -> f64 {
        -self.exponent
    }

    pub fn predict(&self, x: f64) -> f64 {
        self.amplitude * x.powf(-self.exponent)
    }

    pub fn infinite(range: (f64, f64), samples: usize) -> Self {
        Self {
            amplitude: 0.0,
            exponent: f64::INFINITY,
            residual: 0.0,
            range,
            samples,
            infinite_decay: true,
        }
    }
}

/// Least squares of `ln y` against `ln x`.
pub fn fit_power_law(xs: &[f64], ys: &[f64]) -> Result<DecayFit> {
    if xs.len() != ys.len() {
        return Err(Error::LengthMismatch { expected: xs.len(), got: ys.len() });
    }
    if xs.len() < 2 {
        return Err(Error::InvalidArgument("a power-law fit needs at least two samples".into()));
    }
    if let Some(&x) = xs.iter().find(|&&x| !(x > 0.0 && x.is_finite())) {
        return Err(Error::InvalidArgument(format!("abscissa {x} is not positive")));
    }
    if let Some(&y) = ys.iter().find(|&&y| !(y > 0.0 && y.is_finite())) {
        return Err(Error::InvalidArgument(format!("value {y} is not positive")));
    }
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let k = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / k;
    let my = ly.iter().sum::<f64>() / k;
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidArgument("all abscissae coincide".into()));
    }
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = lx.iter().zip(&ly).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
    let lo = xs.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    Ok(DecayFit {
        amplitude: intercept.exp(),
        exponent: -slope,
        residual: (rss / k).sqrt(),
        range: (lo, hi),
        samples: xs.len(),
        infinite_decay: false,
    })
}

/// Like [`fit_power_law`] but tolerating zeros: all-zero data yield the
/// infinite-decay flag, otherwise only positive samples are fitted.
pub fn fit_decay_with_zeros(xs: &[f64], ys: &[f64]) -> Result<DecayFit> {
    if ys.iter().any(|y| *y < 0.0 || !y.is_finite()) {
        return Err(Error::InvalidArgument("decay samples must be finite and non-negative".into()));
    }
    let lo = xs.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let (px, py): (Vec<f64>, Vec<f64>) = xs.iter().zip(ys).filter(|(_, &y)| y > 0.0).map(|(x, y)| (*x, *y)).unzip();
    if px.is_empty() {
        return Ok(DecayFit::infinite((lo, hi), xs.len()));
    }
    if px.len() < 2 {
        return Err(Error::InvalidArgument("fewer than two non-zero samples".into()));
    }
    fit_power_law(&px, &py)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_power_laws() {
        let ts: Vec<f64> = (1..=6).map(|k| 2f64.powi(k)).collect();
        let ys: Vec<f64> = ts.iter().map(|t| 7.0 * t.powf(-0.3)).collect();
        let fit = fit_power_law(&ts, &ys).unwrap();
        assert!((fit.amplitude - 7.0).abs() < 1e-10);
        assert!((fit.exponent - 0.3).abs() < 1e-10);
        assert!(fit.residual < 1e-12);
    }

    #[test]
    fn zeros_flag_infinite_decay() {
        let fit = fit_decay_with_zeros(&[2.0, 4.0, 8.0], &[0.0; 3]).unwrap();
        assert!(fit.infinite_decay);
        assert!(fit_power_law(&[1.0, 2.0], &[1.0, 0.0]).is_err());
    }
}
