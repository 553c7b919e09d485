//! Continuous Lyapunov equation `A X + X Aᵀ + C = 0`.
//!
//! The equation is vectorized into a Kronecker-sum system and solved by a
//! dense LU factorization. The solution is then refined with residuals
//! evaluated in double-double arithmetic and is carried as an unevaluated
//! sum `sigma + sigma_lo`. Note the plain transpose: for complex `A` this is
//! not the Hermitian form used by most control libraries.

use nalgebra::{Complex, DMatrix, Schur};
use thiserror::Error;

use super::dd::Dd;

pub type C64 = Complex<f64>;

/// Relative margin used by the Hurwitz test: `max Re λ < -HURWITZ_TOL · ‖A‖_F`.
pub const HURWITZ_TOL: f64 = 1e-15;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LyapunovError {
    #[error("drift matrix is not Hurwitz: max Re λ = {max_re:e} (required < {bound:e})")]
    NotHurwitz { max_re: f64, bound: f64 },
    #[error("Kronecker system is singular")]
    Singular,
    #[error("eigenvalue iteration did not converge")]
    EigenFailure,
    #[error("shape mismatch: A is {a:?}, C is {c:?}")]
    Shape { a: (usize, usize), c: (usize, usize) },
}

#[derive(Clone, Debug)]
pub struct LyapunovSolution {
    /// Leading part of the solution.
    pub sigma: DMatrix<C64>,
    /// Trailing correction; `sigma + sigma_lo` is the refined solution.
    pub sigma_lo: DMatrix<C64>,
    /// `‖A X + X Aᵀ + C‖_F / ‖C‖_F`, evaluated in double-double.
    pub residual: f64,
    /// Largest real part among the eigenvalues of `A`.
    pub max_real_eigenvalue: f64,
}

#[derive(Clone, Debug)]
pub struct RealLyapunovSolution {
    pub sigma: DMatrix<f64>,
    pub residual: f64,
    pub max_real_eigenvalue: f64,
}

/// Eigenvalues of a complex square matrix via the complex Schur form.
pub fn complex_eigenvalues(a: &DMatrix<C64>) -> Option<Vec<C64>> {
    let n = a.nrows();
    if n == 0 {
        return Some(Vec::new());
    }
    let schur = Schur::try_new(a.clone(), f64::EPSILON, 100_000)?;
    let (_, t) = schur.unpack();
    Some((0..n).map(|i| t[(i, i)]).collect())
}

/// Largest real part of the spectrum of `a`.
pub fn spectral_abscissa(a: &DMatrix<C64>) -> Option<f64> {
    complex_eigenvalues(a).map(|ev| ev.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max))
}

fn check_hurwitz(max_re: f64, norm: f64) -> Result<(), LyapunovError> {
    let bound = -HURWITZ_TOL * norm;
    if max_re < bound {
        Ok(())
    } else {
        Err(LyapunovError::NotHurwitz { max_re, bound })
    }
}

fn kronecker_sum(a: &DMatrix<C64>) -> DMatrix<C64> {
    let n = a.nrows();
    let mut k = DMatrix::<C64>::zeros(n * n, n * n);
    for i in 0..n {
        for j in 0..n {
            let row = i * n + j;
            for m in 0..n {
                k[(row, m * n + j)] += a[(i, m)];
                k[(row, i * n + m)] += a[(j, m)];
            }
        }
    }
    k
}

#[derive(Clone, Copy, Default)]
struct CDd {
    re: Dd,
    im: Dd,
}

impl CDd {
    #[inline]
    fn mul_add(self, a: C64, s: CDd) -> CDd {
        CDd {
            re: self.re.add(s.re.scale(a.re)).add(s.im.scale(-a.im)),
            im: self.im.add(s.im.scale(a.re)).add(s.re.scale(a.im)),
        }
    }
}

fn residual_dd(a: &DMatrix<C64>, c: &DMatrix<C64>, hi: &DMatrix<C64>, lo: &DMatrix<C64>) -> DMatrix<C64> {
    let n = a.nrows();
    let s = |i: usize, j: usize| CDd {
        re: Dd { hi: hi[(i, j)].re, lo: lo[(i, j)].re },
        im: Dd { hi: hi[(i, j)].im, lo: lo[(i, j)].im },
    };
    DMatrix::from_fn(n, n, |i, j| {
        let mut acc = CDd {
            re: Dd::from_f64(c[(i, j)].re),
            im: Dd::from_f64(c[(i, j)].im),
        };
        for k in 0..n {
            acc = acc.mul_add(a[(i, k)], s(k, j));
            acc = acc.mul_add(a[(j, k)], s(i, k));
        }
        C64::new(acc.re.to_f64(), acc.im.to_f64())
    })
}

fn unvec(x: &nalgebra::DVector<C64>, n: usize) -> DMatrix<C64> {
    DMatrix::from_fn(n, n, |i, j| x[i * n + j])
}

fn vec_neg(m: &DMatrix<C64>) -> nalgebra::DVector<C64> {
    let n = m.nrows();
    nalgebra::DVector::from_fn(n * n, |r, _| -m[(r / n, r % n)])
}

fn solve_unchecked(a: &DMatrix<C64>, c: &DMatrix<C64>) -> Result<(DMatrix<C64>, DMatrix<C64>, f64), LyapunovError> {
    let n = a.nrows();
    let c_norm = c.norm();
    if c_norm == 0.0 {
        let z = DMatrix::zeros(n, n);
        return Ok((z.clone(), z, 0.0));
    }
    let lu = kronecker_sum(a).lu();
    let x = lu.solve(&vec_neg(c)).ok_or(LyapunovError::Singular)?;
    if x.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(LyapunovError::Singular);
    }
    let mut hi = unvec(&x, n);
    let mut lo = DMatrix::<C64>::zeros(n, n);
    let mut r = residual_dd(a, c, &hi, &lo);
    let mut rel = r.norm() / c_norm;
    for _ in 0..8 {
        if rel < 1e-15 {
            break;
        }
        let d = match lu.solve(&vec_neg(&r)) {
            Some(d) => unvec(&d, n),
            None => break,
        };
        let mut nhi = hi.clone();
        let mut nlo = lo.clone();
        for i in 0..n * n {
            let re = Dd { hi: hi[i].re, lo: lo[i].re }.add_f64(d[i].re);
            let im = Dd { hi: hi[i].im, lo: lo[i].im }.add_f64(d[i].im);
            nhi[i] = C64::new(re.hi, im.hi);
            nlo[i] = C64::new(re.lo, im.lo);
        }
        let nr = residual_dd(a, c, &nhi, &nlo);
        let nrel = nr.norm() / c_norm;
        if !(nrel < rel) {
            break;
        }
        hi = nhi;
        lo = nlo;
        r = nr;
        rel = nrel;
    }
    Ok((hi, lo, rel))
}

/// Solves `A X + X Aᵀ + C = 0` for a Hurwitz `A`.
pub fn solve_continuous(a: &DMatrix<C64>, c: &DMatrix<C64>) -> Result<LyapunovSolution, LyapunovError> {
    if !a.is_square() || a.shape() != c.shape() {
        return Err(LyapunovError::Shape { a: a.shape(), c: c.shape() });
    }
    let max_re = spectral_abscissa(a).ok_or(LyapunovError::EigenFailure)?;
    check_hurwitz(max_re, a.norm())?;
    let (sigma, sigma_lo, residual) = solve_unchecked(a, c)?;
    Ok(LyapunovSolution {
        sigma,
        sigma_lo,
        residual,
        max_real_eigenvalue: max_re,
    })
}

/// Real-valued variant. The refined solution is rounded to `f64`.
pub fn solve_continuous_real(a: &DMatrix<f64>, c: &DMatrix<f64>) -> Result<RealLyapunovSolution, LyapunovError> {
    if !a.is_square() || a.shape() != c.shape() {
        return Err(LyapunovError::Shape { a: a.shape(), c: c.shape() });
    }
    let max_re = if a.nrows() == 0 {
        f64::NEG_INFINITY
    } else {
        a.complex_eigenvalues().iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max)
    };
    check_hurwitz(max_re, a.norm())?;
    let ac = a.map(|x| C64::new(x, 0.0));
    let cc = c.map(|x| C64::new(x, 0.0));
    let (hi, lo, residual) = solve_unchecked(&ac, &cc)?;
    Ok(RealLyapunovSolution {
        sigma: DMatrix::from_fn(a.nrows(), a.nrows(), |i, j| hi[(i, j)].re + lo[(i, j)].re),
        residual,
        max_real_eigenvalue: max_re,
    })
}
