use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use super::chain_rng;
use super::eigen::{hessenberg_eigenvalues, hessenberg_reduce, ComplexMatrix};
use crate::error::{LabError, Result};
use crate::geometry::Point;
use crate::model::Configuration;

/// How the Hessenberg matrix handed to the QR iteration is produced.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GinibreMethod {
    /// Draw the full matrix and reduce it with Householder reflections.
    Dense,
    /// Draw the Hessenberg form directly: i.i.d. complex Gaussians on and
    /// above the diagonal and `sqrt(Gamma(N - k - 1, 1) / N)` on the
    /// subdiagonal. Same eigenvalue law as `Dense`, without the reduction.
    Hessenberg,
}

impl std::str::FromStr for GinibreMethod {
    type Err = LabError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dense" => Ok(GinibreMethod::Dense),
            "hessenberg" => Ok(GinibreMethod::Hessenberg),
            other => Err(LabError::config(format!("unknown Ginibre method '{other}'"))),
        }
    }
}

fn complex_gaussian<R: Rng>(rng: &mut R, sd: f64) -> Complex64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re * sd, im * sd)
}

/// An `N x N` matrix of i.i.d. complex Gaussians with `E|a_ij|^2 = 1/N`.
pub fn ginibre_matrix<R: Rng>(n: usize, rng: &mut R) -> ComplexMatrix {
    let sd = (0.5 / n as f64).sqrt();
    let data = (0..n * n).map(|_| complex_gaussian(rng, sd)).collect();
    ComplexMatrix::from_rows(n, data).expect("square data")
}

fn ginibre_hessenberg<R: Rng>(n: usize, rng: &mut R) -> Result<ComplexMatrix> {
    let sd = (0.5 / n as f64).sqrt();
    let mut h = ComplexMatrix::zeros(n);
    for i in 0..n {
        for j in i..n {
            h.set(i, j, complex_gaussian(rng, sd));
        }
        if i + 1 < n {
            let shape = (n - i - 1) as f64;
            let g = Gamma::new(shape, 1.0).map_err(|e| LabError::Numeric(e.to_string()))?;
            h.set(i + 1, i, Complex64::new((g.sample(rng) / n as f64).sqrt(), 0.0));
        }
    }
    Ok(h)
}

/// Exact `β = 2` sample for `V = |x|^2 / 2`: the eigenvalues of a Ginibre
/// matrix, computed with the in-repo eigensolver.
pub fn ginibre_exact(n: usize, seed: u64) -> Result<Configuration> {
    ginibre_exact_with(n, seed, GinibreMethod::Dense)
}

pub fn ginibre_exact_with(n: usize, seed: u64, method: GinibreMethod) -> Result<Configuration> {
    if n == 0 {
        return Err(LabError::domain("matrix size must be at least 1"));
    }
    let mut rng = chain_rng(seed, 0);
    let mut h = match method {
        GinibreMethod::Dense => {
            let mut a = ginibre_matrix(n, &mut rng);
            hessenberg_reduce(&mut a);
            a
        }
        GinibreMethod::Hessenberg => ginibre_hessenberg(n, &mut rng)?,
    };
    let eig = hessenberg_eigenvalues(&mut h)?;
    Configuration::from_points(eig.into_iter().map(|z| Point::new(z.re, z.im)).collect(), 2.0)
}

/// Moduli of the Ginibre eigenvalues, exact in law: the squared moduli are
/// independent with `|λ_k|^2 ~ Gamma(k, 1) / N`, `k = 1..N`. Only suitable
/// for rotation-invariant statistics.
pub fn ginibre_moduli(n: usize, seed: u64) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(LabError::domain("matrix size must be at least 1"));
    }
    let mut rng = chain_rng(seed, 1);
    (1..=n)
        .map(|k| {
            let g = Gamma::new(k as f64, 1.0).map_err(|e| LabError::Numeric(e.to_string()))?;
            Ok((g.sample(&mut rng) / n as f64).sqrt())
        })
        .collect()
}
