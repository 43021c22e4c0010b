//! Central finite-difference verification of analytic gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::params::ParamSet;

/// Gradients smaller than this are compared in absolute rather than relative terms.
pub const ABS_FLOOR: f64 = 1e-7;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(ABS_FLOOR);
    (analytic - numeric).abs() / denom
}

/// Compares the gradient returned by `loss_fn` against central differences.
///
/// `loss_fn` maps parameters to `(loss, analytic gradient)`. When
/// `max_entries` is smaller than the parameter count, a seeded random subset
/// of that many scalars is checked. Returns the maximum relative error.
pub fn finite_diff_check<P, F>(mut loss_fn: F, params: &P, eps: f64, max_entries: Option<usize>) -> f64
where
    P: ParamSet,
    F: FnMut(&P) -> (f64, P),
{
    assert!(eps > 0.0, "finite-difference step must be positive");
    let (_, analytic) = loss_fn(params);
    let analytic = analytic.flatten();
    let base = params.flatten();
    let n = base.len();
    let indices: Vec<usize> = match max_entries {
        Some(k) if k < n => {
            let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
            let mut idx = sample(&mut rng, n, k).into_vec();
            idx.sort_unstable();
            idx
        }
        _ => (0..n).collect(),
    };
    let mut probe = params.clone();
    let mut flat = base.clone();
    let mut worst: f64 = 0.0;
    for i in indices {
        flat[i] = base[i] + eps;
        probe.assign_flat(&flat);
        let up = loss_fn(&probe).0;
        flat[i] = base[i] - eps;
        probe.assign_flat(&flat);
        let down = loss_fn(&probe).0;
        flat[i] = base[i];
        let numeric = (up - down) / (2.0 * eps);
        worst = worst.max(relative_error(analytic[i], numeric));
    }
    worst
}
