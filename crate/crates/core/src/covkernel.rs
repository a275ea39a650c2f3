//! Distances, exponential correlation matrices and the Kronecker algebra
//! used to work with separable space-time covariances without ever
//! forming an `M × M` matrix.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// IUGG mean Earth radius in km.
pub const EARTH_RADIUS_KM: f64 = 6371.0088;

const JITTER_START: f64 = 1e-8;
const JITTER_MAX: f64 = 1e-4;

/// Haversine distance in km between two `(lat, lon)` points in degrees.
pub fn great_circle_distance(a: (f64, f64), b: (f64, f64)) -> f64 {
    let (lat1, lon1) = (a.0.to_radians(), a.1.to_radians());
    let (lat2, lon2) = (b.0.to_radians(), b.1.to_radians());
    let dlat = lat2 - lat1;
    let dlon = lon2 - lon1;
    let h = (dlat / 2.0).sin().powi(2) + lat1.cos() * lat2.cos() * (dlon / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * h.sqrt().min(1.0).asin()
}

/// `|t_i − t_j|` for the regular time axis `0..n_times`.
pub fn lag_matrix(n_times: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n_times, n_times, |i, j| (i as f64 - j as f64).abs())
}

/// Entrywise `exp(−decay · d_ij)` of a symmetric, zero-diagonal,
/// nonnegative distance (or lag) matrix.
pub fn exp_decay_matrix(pairwise: &DMatrix<f64>, decay: f64) -> Result<DMatrix<f64>> {
    if !(decay > 0.0) || !decay.is_finite() {
        return Err(Error::input(format!("decay must be positive, got {decay}")));
    }
    if !pairwise.is_square() {
        return Err(Error::input("distance matrix must be square"));
    }
    let n = pairwise.nrows();
    for i in 0..n {
        if pairwise[(i, i)] != 0.0 {
            return Err(Error::input(format!("distance matrix has nonzero diagonal at {i}")));
        }
        for j in (i + 1)..n {
            let (a, b) = (pairwise[(i, j)], pairwise[(j, i)]);
            if (a - b).abs() > 1e-12 * a.abs().max(1.0) {
                return Err(Error::input(format!("distance matrix not symmetric at ({i}, {j})")));
            }
            if !(a >= 0.0) {
                return Err(Error::input(format!("negative distance at ({i}, {j})")));
            }
        }
    }
    Ok(pairwise.map(|d| (-decay * d).exp()))
}

/// Separable exponential correlation `exp(−φ_s·dist) · exp(−φ_t·lag)`.
pub fn separable_correlation(phi_s: f64, phi_t: f64, dist: f64, lag: f64) -> f64 {
    (-phi_s * dist).exp() * (-phi_t * lag).exp()
}

/// `vᵀ (A⁻¹ ⊗ B⁻¹) v` for a time-major vector `v`, evaluated as
/// `tr(B⁻¹ V A⁻¹ Vᵀ)` with `V` the `q × p` matricization of `v`.
pub fn kron_quadratic_form(a_inv: &DMatrix<f64>, b_inv: &DMatrix<f64>, v: &[f64]) -> Result<f64> {
    let p = a_inv.nrows();
    let q = b_inv.nrows();
    if !a_inv.is_square() || !b_inv.is_square() || v.len() != p * q {
        return Err(Error::input(format!(
            "kron_quadratic_form: {}x{} ⊗ {}x{} against a vector of length {}",
            a_inv.nrows(),
            a_inv.ncols(),
            b_inv.nrows(),
            b_inv.ncols(),
            v.len()
        )));
    }
    let vmat = DMatrix::from_column_slice(q, p, v);
    Ok(trace_product(b_inv, &vmat, a_inv))
}

/// `tr(B V A Vᵀ)` for `V` of shape `q × p`.
pub(crate) fn trace_product(b: &DMatrix<f64>, v: &DMatrix<f64>, a: &DMatrix<f64>) -> f64 {
    let bv = b * v;
    let va = v * a;
    bv.component_mul(&va).sum()
}

/// Cholesky factorization, adding `1e-8·I` and escalating tenfold up to
/// `1e-4·I` when the plain factorization fails. Returns the factor and
/// the jitter that was needed (zero when none).
pub fn cholesky_with_jitter(mat: &DMatrix<f64>) -> Result<(Cholesky<f64, Dyn>, f64)> {
    if let Some(c) = Cholesky::new(mat.clone()) {
        return Ok((c, 0.0));
    }
    let n = mat.nrows();
    let mut jitter = JITTER_START;
    while jitter <= JITTER_MAX * (1.0 + 1e-9) {
        let mut m = mat.clone();
        for i in 0..n {
            m[(i, i)] += jitter;
        }
        if let Some(c) = Cholesky::new(m) {
            return Ok((c, jitter));
        }
        jitter *= 10.0;
    }
    Err(Error::numerical(format!(
        "Cholesky failed on a {n}x{n} matrix even with jitter {JITTER_MAX}"
    )))
}

/// `ln |A|` from a Cholesky factor.
pub fn chol_ln_det(chol: &Cholesky<f64, Dyn>) -> f64 {
    2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>()
}

/// Draw `mean + L z` with `L Lᵀ = cov`.
pub fn chol_sample_mvn<R: Rng + ?Sized>(mean: &DVector<f64>, cov: &DMatrix<f64>, rng: &mut R) -> Result<DVector<f64>> {
    if cov.nrows() != mean.len() || !cov.is_square() {
        return Err(Error::input("chol_sample_mvn: covariance shape does not match mean"));
    }
    let (chol, _) = cholesky_with_jitter(cov)?;
    let z = DVector::from_fn(mean.len(), |_, _| rng.sample::<f64, _>(StandardNormal));
    Ok(mean + chol.l() * z)
}

/// Gaussian in canonical form: precision `P` and potential `h`, so the
/// mean is `P⁻¹ h` and the covariance `P⁻¹`.
#[derive(Clone, Debug)]
pub struct CanonicalGaussian {
    pub precision: DMatrix<f64>,
    pub potential: DVector<f64>,
}

impl CanonicalGaussian {
    /// Mean and covariance.
    pub fn moments(&self) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let (chol, _) = cholesky_with_jitter(&self.precision)?;
        Ok((chol.solve(&self.potential), chol.inverse()))
    }

    /// Draw `P⁻¹h + L⁻ᵀ z` with `L Lᵀ = P`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<DVector<f64>> {
        let (chol, _) = cholesky_with_jitter(&self.precision)?;
        let mean = chol.solve(&self.potential);
        let z = DVector::from_fn(mean.len(), |_, _| rng.sample::<f64, _>(StandardNormal));
        let l = chol.l();
        let offset = l
            .transpose()
            .solve_upper_triangular(&z)
            .ok_or_else(|| Error::numerical("singular Cholesky factor"))?;
        Ok(mean + offset)
    }

    /// Log density up to the shared normalizing constant, i.e.
    /// `½ ln|P| − ½ (x − μ)ᵀ P (x − μ)`.
    pub fn ln_density(&self, x: &DVector<f64>) -> Result<f64> {
        let (chol, _) = cholesky_with_jitter(&self.precision)?;
        let mean = chol.solve(&self.potential);
        let d = x - mean;
        Ok(0.5 * chol_ln_det(&chol) - 0.5 * d.dot(&(&self.precision * &d)))
    }
}

/// Conditional law of time slice `t` of a field with covariance
/// `Σ_t ⊗ Σ_s` given all other slices, via the partition of `Σ_t`.
///
/// `field` is `n × T`; returns the `n`-vector mean
/// `(Σ₁₂Σ₂₂⁻¹ ⊗ I_n) V₋ₜ` and covariance `(Σ₁₁ − Σ₁₂Σ₂₂⁻¹Σ₂₁) Σ_s`.
pub fn conditional_time_slice(
    sigma_t: &DMatrix<f64>,
    sigma_s: &DMatrix<f64>,
    t: usize,
    field: &DMatrix<f64>,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let big_t = sigma_t.nrows();
    let n = sigma_s.nrows();
    if t >= big_t || field.nrows() != n || field.ncols() != big_t {
        return Err(Error::input(format!(
            "conditional_time_slice: slice {t} of a {}x{} field with Σ_t {big_t}x{big_t}, Σ_s {n}x{n}",
            field.nrows(),
            field.ncols()
        )));
    }
    if big_t == 1 {
        return Ok((DVector::zeros(n), sigma_s.clone()));
    }
    let rest: Vec<usize> = (0..big_t).filter(|&r| r != t).collect();
    let s22 = DMatrix::from_fn(rest.len(), rest.len(), |a, b| sigma_t[(rest[a], rest[b])]);
    let s21 = DVector::from_fn(rest.len(), |a, _| sigma_t[(rest[a], t)]);
    let (chol, _) = cholesky_with_jitter(&s22)?;
    let weights = chol.solve(&s21);
    let mut mean = DVector::zeros(n);
    for (a, &r) in rest.iter().enumerate() {
        mean.axpy(weights[a], &field.column(r), 1.0);
    }
    let scale = sigma_t[(t, t)] - s21.dot(&weights);
    Ok((mean, sigma_s * scale))
}

/// An exponential correlation matrix with its precision and log
/// determinant.
#[derive(Clone, Debug)]
pub struct CorrFactor {
    pub decay: f64,
    pub corr: DMatrix<f64>,
    pub precision: DMatrix<f64>,
    pub ln_det: f64,
}

impl CorrFactor {
    /// Spatial factor from a distance matrix via a (jittered) Cholesky.
    pub fn spatial(distances: &DMatrix<f64>, decay: f64) -> Result<Self> {
        let corr = exp_decay_matrix(distances, decay)?;
        let (chol, _) = cholesky_with_jitter(&corr)?;
        Ok(Self { decay, ln_det: chol_ln_det(&chol), precision: chol.inverse(), corr })
    }

    /// Temporal factor on the regular axis `0..n_times`.
    ///
    /// With unit spacing the exponential kernel is `ρ^|i−j|`, `ρ = e^{−φ}`,
    /// whose precision is tridiagonal and whose determinant is
    /// `(1 − ρ²)^{T−1}`.
    pub fn temporal(n_times: usize, decay: f64) -> Result<Self> {
        if !(decay > 0.0) || !decay.is_finite() {
            return Err(Error::input(format!("decay must be positive, got {decay}")));
        }
        let rho = (-decay).exp();
        let one_m_rho2 = -(-2.0 * decay).exp_m1();
        let corr = DMatrix::from_fn(n_times, n_times, |i, j| (-decay * (i as f64 - j as f64).abs()).exp());
        let mut precision = DMatrix::zeros(n_times, n_times);
        if n_times == 1 {
            precision[(0, 0)] = 1.0;
        } else {
            for i in 0..n_times {
                let edge = i == 0 || i + 1 == n_times;
                precision[(i, i)] = if edge { 1.0 } else { 1.0 + rho * rho } / one_m_rho2;
                if i + 1 < n_times {
                    precision[(i, i + 1)] = -rho / one_m_rho2;
                    precision[(i + 1, i)] = -rho / one_m_rho2;
                }
            }
        }
        let ln_det = (n_times.saturating_sub(1)) as f64 * one_m_rho2.ln();
        Ok(Self { decay, corr, precision, ln_det })
    }

    pub fn dim(&self) -> usize {
        self.corr.nrows()
    }
}
