use serde::{Deserialize, Serialize};

use super::SampleSet;
use crate::error::{LabError, Result};
use crate::model::Configuration;
use crate::numerics::{kahan_sum, mean};

/// Integrated autocorrelation time and effective sample size.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainDiagnostics {
    /// `+∞` for a constant trace.
    pub tau: f64,
    pub ess: f64,
}

/// Autocorrelation time of a scalar trace by Geyer's initial positive
/// sequence estimator.
pub fn autocorrelation_time(trace: &[f64]) -> Result<f64> {
    let n = trace.len();
    if n < 10 {
        return Err(LabError::domain("need at least 10 samples for chain diagnostics"));
    }
    let m = mean(trace);
    let c: Vec<f64> = trace.iter().map(|x| x - m).collect();
    let gamma = |lag: usize| kahan_sum((0..n - lag).map(|i| c[i] * c[i + lag])) / n as f64;
    let g0 = gamma(0);
    if !(g0 > 1e-300) {
        return Ok(f64::INFINITY);
    }
    let mut tau = -1.0;
    let mut prev = f64::INFINITY;
    let mut k = 0;
    while 2 * k + 1 < n {
        let pair = (gamma(2 * k) + gamma(2 * k + 1)) / g0;
        if pair <= 0.0 {
            break;
        }
        let pair = pair.min(prev);
        tau += 2.0 * pair;
        prev = pair;
        k += 1;
    }
    Ok(tau.max(1.0 / n as f64))
}

/// Diagnostics of a probe statistic evaluated along the recorded chain.
pub fn chain_diagnostics<F>(samples: &SampleSet, probe: F) -> Result<ChainDiagnostics>
where
    F: Fn(&Configuration) -> f64,
{
    let trace: Vec<f64> = samples.configurations.iter().map(probe).collect();
    let tau = autocorrelation_time(&trace)?;
    Ok(ChainDiagnostics {
        tau,
        ess: trace.len() as f64 / tau,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn iid_trace_has_unit_time() {
        let mut rng = super::super::chain_rng(11, 0);
        let trace: Vec<f64> = (0..20000).map(|_| rng.sample(StandardNormal)).collect();
        let tau = autocorrelation_time(&trace).unwrap();
        assert!((tau - 1.0).abs() < 0.2, "tau = {tau}");
    }

    #[test]
    fn ar1_trace_matches_closed_form() {
        let rho: f64 = 0.9;
        let mut rng = super::super::chain_rng(12, 0);
        let mut x = 0.0;
        let trace: Vec<f64> = (0..200000)
            .map(|_| {
                let e: f64 = rng.sample(StandardNormal);
                x = rho * x + (1.0 - rho * rho).sqrt() * e;
                x
            })
            .collect();
        let tau = autocorrelation_time(&trace).unwrap();
        let exact = (1.0 + rho) / (1.0 - rho);
        assert!((tau - exact).abs() < 0.3 * exact, "tau = {tau}");
    }

    #[test]
    fn constant_trace_is_infinite() {
        assert_eq!(autocorrelation_time(&[2.5; 50]).unwrap(), f64::INFINITY);
        assert!(autocorrelation_time(&[1.0; 5]).is_err());
    }
}
