//! Dense nonsymmetric complex eigenvalues: Householder reduction to upper
//! Hessenberg form followed by single-shift QR with Givens rotations.

use num_complex::Complex64;

use crate::error::{LabError, Result};

const MAX_ITERATIONS_PER_EIGENVALUE: usize = 60;

/// Square complex matrix stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexMatrix {
    n: usize,
    data: Vec<Complex64>,
}

impl ComplexMatrix {
    pub fn zeros(n: usize) -> Self {
        ComplexMatrix {
            n,
            data: vec![Complex64::new(0.0, 0.0); n * n],
        }
    }

    pub fn from_rows(n: usize, data: Vec<Complex64>) -> Result<Self> {
        if data.len() != n * n {
            return Err(LabError::domain("matrix data has the wrong length"));
        }
        Ok(ComplexMatrix { n, data })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        self.data[i * self.n + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: Complex64) {
        self.data[i * self.n + j] = v;
    }

    pub fn as_slice(&self) -> &[Complex64] {
        &self.data
    }
}

/// Reduces `a` in place to upper Hessenberg form by Householder reflections.
pub fn hessenberg_reduce(a: &mut ComplexMatrix) {
    let n = a.n;
    if n < 3 {
        return;
    }
    let mut v = vec![Complex64::new(0.0, 0.0); n];
    for k in 0..n - 2 {
        let len = n - k - 1;
        let norm = (k + 1..n).map(|i| a.get(i, k).norm_sqr()).sum::<f64>().sqrt();
        if norm == 0.0 {
            continue;
        }
        let x0 = a.get(k + 1, k);
        let phase = if x0.norm() > 0.0 {
            x0 / x0.norm()
        } else {
            Complex64::new(1.0, 0.0)
        };
        let alpha = -phase * norm;
        for (t, i) in (k + 1..n).enumerate() {
            v[t] = a.get(i, k);
        }
        v[0] -= alpha;
        let vnorm2: f64 = v[..len].iter().map(|z| z.norm_sqr()).sum();
        if vnorm2 == 0.0 {
            continue;
        }
        let scale = 2.0 / vnorm2;
        // A <- (I - s v v^H) A on rows k+1.., columns k..
        for j in k..n {
            let mut dot = Complex64::new(0.0, 0.0);
            for t in 0..len {
                dot += v[t].conj() * a.get(k + 1 + t, j);
            }
            let f = dot * scale;
            for t in 0..len {
                let idx = (k + 1 + t) * n + j;
                a.data[idx] -= v[t] * f;
            }
        }
        // A <- A (I - s v v^H) on all rows, columns k+1..
        for i in 0..n {
            let row = &mut a.data[i * n + k + 1..i * n + n];
            let mut dot = Complex64::new(0.0, 0.0);
            for t in 0..len {
                dot += row[t] * v[t];
            }
            let f = dot * scale;
            for t in 0..len {
                row[t] -= f * v[t].conj();
            }
        }
        for i in k + 2..n {
            a.set(i, k, Complex64::new(0.0, 0.0));
        }
        a.set(k + 1, k, alpha);
    }
}

#[inline]
fn abs1(z: Complex64) -> f64 {
    z.re.abs() + z.im.abs()
}

/// Givens rotation `(c, s)` with `c` real such that
/// `[c s; -conj(s) c] [x; y] = [r; 0]`.
#[inline]
fn givens(x: Complex64, y: Complex64) -> (f64, Complex64) {
    let ax = x.norm();
    let ay = y.norm();
    if ay == 0.0 {
        return (1.0, Complex64::new(0.0, 0.0));
    }
    if ax == 0.0 {
        return (0.0, Complex64::new(1.0, 0.0));
    }
    let r = ax.hypot(ay);
    let c = ax / r;
    let s = (x / ax) * y.conj() / r;
    (c, s)
}

/// Wilkinson shift: eigenvalue of the trailing 2x2 block closest to its
/// last diagonal entry.
fn wilkinson(a: Complex64, b: Complex64, c: Complex64, d: Complex64) -> Complex64 {
    let half = (a - d) * 0.5;
    let disc = (half * half + b * c).sqrt();
    let l1 = (a + d) * 0.5 + disc;
    let l2 = (a + d) * 0.5 - disc;
    if (l1 - d).norm() <= (l2 - d).norm() {
        l1
    } else {
        l2
    }
}

/// Eigenvalues of an upper Hessenberg matrix (destroyed in the process).
pub fn hessenberg_eigenvalues(h: &mut ComplexMatrix) -> Result<Vec<Complex64>> {
    let n = h.n;
    let mut eig = vec![Complex64::new(0.0, 0.0); n];
    if n == 0 {
        return Ok(eig);
    }
    let data = &mut h.data;
    let mut rot: Vec<(f64, Complex64)> = vec![(1.0, Complex64::new(0.0, 0.0)); n];
    let mut hi = n - 1;
    let mut iter = 0usize;
    let mut total = 0usize;
    loop {
        if hi == 0 {
            eig[0] = data[0];
            break;
        }
        // Deflation search.
        let mut l = hi;
        while l > 0 {
            let sub = data[l * n + l - 1];
            let diag = abs1(data[(l - 1) * n + l - 1]) + abs1(data[l * n + l]);
            if abs1(sub) <= f64::EPSILON * diag || abs1(sub) < f64::MIN_POSITIVE {
                data[l * n + l - 1] = Complex64::new(0.0, 0.0);
                break;
            }
            l -= 1;
        }
        if l == hi {
            eig[hi] = data[hi * n + hi];
            hi -= 1;
            iter = 0;
            continue;
        }
        if iter >= MAX_ITERATIONS_PER_EIGENVALUE {
            return Err(LabError::Numeric(format!(
                "QR iteration did not converge for eigenvalue {hi} after {iter} steps"
            )));
        }
        iter += 1;
        total += 1;
        let shift = if iter % 11 == 0 {
            // Exceptional shift to break cycles.
            let s = data[hi * n + hi - 1].re.abs()
                + if hi >= 2 { data[(hi - 1) * n + hi - 2].re.abs() } else { 0.0 };
            data[hi * n + hi] + Complex64::new(s, 0.0)
        } else {
            wilkinson(
                data[(hi - 1) * n + hi - 1],
                data[(hi - 1) * n + hi],
                data[hi * n + hi - 1],
                data[hi * n + hi],
            )
        };
        for k in l..=hi {
            data[k * n + k] -= shift;
        }
        // H - σI = QR: rotations from the left.
        for k in l..hi {
            let (c, s) = givens(data[k * n + k], data[(k + 1) * n + k]);
            rot[k] = (c, s);
            let (top, bottom) = data.split_at_mut((k + 1) * n);
            let row_k = &mut top[k * n + k..k * n + hi + 1];
            let row_k1 = &mut bottom[k..hi + 1];
            for (a, b) in row_k.iter_mut().zip(row_k1.iter_mut()) {
                let (x, y) = (*a, *b);
                *a = x * c + s * y;
                *b = y * c - s.conj() * x;
            }
        }
        // RQ: rotations from the right, applied row by row. Rotation k
        // touches rows up to k + 1, so row i sees rotations max(l, i - 1)..hi.
        for i in l..=hi {
            let first = i.saturating_sub(1).max(l);
            let row = &mut data[i * n..i * n + hi + 1];
            let mut x = row[first];
            for k in first..hi {
                let (c, s) = rot[k];
                let y = row[k + 1];
                row[k] = x * c + y * s.conj();
                x = y * c - x * s;
            }
            row[hi] = x;
        }
        for k in l..=hi {
            data[k * n + k] += shift;
        }
    }
    log::trace!("QR converged in {total} steps for n = {n}");
    Ok(eig)
}

/// All eigenvalues of a general complex matrix.
pub fn eigenvalues(mut a: ComplexMatrix) -> Result<Vec<Complex64>> {
    hessenberg_reduce(&mut a);
    hessenberg_eigenvalues(&mut a)
}
