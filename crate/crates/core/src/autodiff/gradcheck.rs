use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::AutodiffError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_coord: usize,
    /// Analytic and finite-difference gradient at `worst_coord`.
    pub worst_analytic: f64,
    pub worst_numeric: f64,
    pub checked: usize,
}

/// Compares analytic gradients against central differences
/// `(f(θ+εe) − f(θ−εe)) / 2ε` at the given coordinates.
///
/// `f` returns the scalar value and the full analytic gradient at its
/// argument. The relative error per coordinate is
/// `|g_ad − g_fd| / max(|g_ad|, |g_fd|, 1e-8)`.
pub fn gradient_check<F>(mut f: F, params: &[f64], eps: f64, coords: &[usize]) -> Result<GradCheckReport, AutodiffError>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>), AutodiffError>,
{
    if !(eps.is_finite() && eps > 0.0) {
        return Err(AutodiffError::DegenerateEpsilon(eps));
    }
    let (_, analytic) = f(params)?;
    if analytic.len() != params.len() {
        return Err(AutodiffError::ShapeMismatch(format!(
            "gradient has {} entries for {} parameters",
            analytic.len(),
            params.len()
        )));
    }
    let mut theta = params.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_coord: 0,
        worst_analytic: 0.0,
        worst_numeric: 0.0,
        checked: 0,
    };
    for &i in coords {
        if i >= params.len() {
            return Err(AutodiffError::InvalidArgument(format!("coordinate {i} out of range")));
        }
        theta[i] = params[i] + eps;
        let (up, _) = f(&theta)?;
        theta[i] = params[i] - eps;
        let (down, _) = f(&theta)?;
        theta[i] = params[i];

        let numeric = (up - down) / (2.0 * eps);
        let err = (analytic[i] - numeric).abs() / analytic[i].abs().max(numeric.abs()).max(1e-8);
        if report.checked == 0 || err > report.max_rel_error {
            report.max_rel_error = err;
            report.worst_coord = i;
            report.worst_analytic = analytic[i];
            report.worst_numeric = numeric;
        }
        report.checked += 1;
    }
    Ok(report)
}

/// Up to `k` distinct coordinates out of `n`, sorted, chosen by `seed`.
pub fn sample_coords(n: usize, k: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = sample(&mut rng, n, k.min(n)).into_vec();
    picked.sort_unstable();
    picked
}
