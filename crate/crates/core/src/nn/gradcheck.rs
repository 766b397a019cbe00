//! Central finite-difference verification of analytic gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::param::ParamStore;

/// Result of evaluating a scalar loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    /// Fingerprint of piecewise decisions (see `Graph::kink_fingerprint`).
    pub kinks: u64,
}

impl From<f64> for Evaluation {
    fn from(loss: f64) -> Self {
        Self { loss, kinks: 0 }
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckOptions {
    pub perturbation: f64,
    /// Entries sampled per parameter; parameters with fewer entries are checked
    /// exhaustively.
    pub samples_per_param: usize,
    pub include_frozen: bool,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            perturbation: 1e-4,
            samples_per_param: 8,
            include_frozen: false,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ParamCheck {
    pub name: String,
    pub trainable: bool,
    pub checked: usize,
    /// Entries whose perturbation flipped a ReLU / max-pool / clamp decision.
    pub skipped_kinks: usize,
    pub max_rel_error: f64,
}

#[derive(Debug, Clone, Default)]
pub struct GradCheckReport {
    pub per_param: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.per_param
            .iter()
            .map(|p| p.max_rel_error)
            .fold(0.0, f64::max)
    }

    pub fn checked(&self) -> usize {
        self.per_param.iter().map(|p| p.checked).sum()
    }
}

/// `|a - n| / max(1e-8, |a| + |n|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

/// Compares analytic gradients against central differences.
///
/// `loss_fn(store, backward)` must evaluate the loss at the store's current
/// values; when `backward` is true it must also accumulate gradients into the
/// store (which is zeroed beforehand).
pub fn grad_check<F>(store: &mut ParamStore, mut loss_fn: F, opts: &GradCheckOptions) -> GradCheckReport
where
    F: FnMut(&mut ParamStore, bool) -> Evaluation,
{
    store.zero_grad();
    let base = loss_fn(store, true);
    let analytic: Vec<Vec<f64>> = store.iter().map(|p| p.grad.data().to_vec()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let h = opts.perturbation;
    let mut report = GradCheckReport::default();

    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let (len, trainable, name) = {
            let p = store.get(id);
            (p.len(), p.trainable, p.name.clone())
        };
        if !trainable && !opts.include_frozen {
            continue;
        }
        // Oversample so kink-crossing entries can be replaced.
        let want = opts.samples_per_param.min(len);
        let candidates: Vec<usize> = if len <= opts.samples_per_param {
            (0..len).collect()
        } else {
            sample(&mut rng, len, (4 * want).min(len)).into_vec()
        };
        let mut check = ParamCheck {
            name,
            trainable,
            checked: 0,
            skipped_kinks: 0,
            max_rel_error: 0.0,
        };
        for idx in candidates {
            if check.checked == want {
                break;
            }
            let orig = store.get(id).value.data()[idx];
            store.get_mut(id).value.data_mut()[idx] = orig + h;
            let plus = loss_fn(store, false);
            store.get_mut(id).value.data_mut()[idx] = orig - h;
            let minus = loss_fn(store, false);
            store.get_mut(id).value.data_mut()[idx] = orig;
            if plus.kinks != base.kinks || minus.kinks != base.kinks {
                check.skipped_kinks += 1;
                continue;
            }
            let numeric = (plus.loss - minus.loss) / (2.0 * h);
            let err = relative_error(analytic[id.0][idx], numeric);
            check.max_rel_error = check.max_rel_error.max(err);
            check.checked += 1;
        }
        report.per_param.push(check);
    }
    report
}
