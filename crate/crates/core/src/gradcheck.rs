//! Central finite-difference gradient checking at 64-bit precision.
//!
//! An entry fails only when it exceeds *both* the absolute and the relative
//! tolerance, so gradients that are zero up to round-off do not produce
//! spurious relative errors.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::Parameters;

#[derive(Debug, Clone, Copy)]
pub struct GradCheck {
    pub step: f64,
    pub rel_tol: f64,
    pub abs_tol: f64,
    /// Check at most this many entries per parameter tensor (sampled).
    pub max_per_tensor: Option<usize>,
    pub seed: u64,
}

impl GradCheck {
    pub fn per_op() -> Self {
        Self {
            step: 1e-6,
            rel_tol: 1e-4,
            abs_tol: 1e-8,
            max_per_tensor: None,
            seed: 0,
        }
    }

    pub fn end_to_end() -> Self {
        Self {
            rel_tol: 1e-3,
            abs_tol: 1e-7,
            max_per_tensor: Some(24),
            ..Self::per_op()
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GradReport {
    pub checked: usize,
    pub failures: usize,
    /// Largest relative error among entries above the absolute tolerance.
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub worst: Option<(usize, f64, f64)>,
}

impl GradReport {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }

    pub fn merge(&mut self, other: GradReport) {
        self.checked += other.checked;
        self.failures += other.failures;
        self.max_abs_error = self.max_abs_error.max(other.max_abs_error);
        if other.max_rel_error >= self.max_rel_error {
            self.max_rel_error = other.max_rel_error;
            self.worst = other.worst.or(self.worst);
        }
    }

    fn record(&mut self, cfg: &GradCheck, idx: usize, analytic: f64, numeric: f64) {
        let abs = (analytic - numeric).abs();
        let rel = abs / analytic.abs().max(numeric.abs()).max(f64::MIN_POSITIVE);
        self.checked += 1;
        self.max_abs_error = self.max_abs_error.max(abs);
        if abs > cfg.abs_tol {
            if rel > self.max_rel_error {
                self.max_rel_error = rel;
                self.worst = Some((idx, analytic, numeric));
            }
            if rel > cfg.rel_tol {
                self.failures += 1;
            }
        }
    }
}

impl GradCheck {
    fn indices(&self, len: usize, salt: u64) -> Vec<usize> {
        match self.max_per_tensor {
            Some(m) if m < len => {
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ salt.wrapping_mul(0x9E37_79B9));
                let mut v = sample(&mut rng, len, m).into_vec();
                v.sort_unstable();
                v
            }
            _ => (0..len).collect(),
        }
    }

    /// Checks `analytic` against central differences of `loss` with respect
    /// to the flat vector `x`.
    pub fn check_vector(
        &self,
        x: &[f64],
        analytic: &[f64],
        mut loss: impl FnMut(&[f64]) -> f64,
    ) -> GradReport {
        let mut report = GradReport::default();
        let mut probe = x.to_vec();
        for i in self.indices(x.len(), 1) {
            probe[i] = x[i] + self.step;
            let lp = loss(&probe);
            probe[i] = x[i] - self.step;
            let lm = loss(&probe);
            probe[i] = x[i];
            report.record(self, i, analytic[i], (lp - lm) / (2.0 * self.step));
        }
        report
    }

    /// Checks a parameter-gradient struct against central differences.
    pub fn check_params<P>(&self, params: &P, grads: &P, mut loss: impl FnMut(&P) -> f64) -> GradReport
    where
        P: Parameters<f64> + Clone,
    {
        let mut report = GradReport::default();
        let analytic: Vec<Vec<f64>> = grads.slices().iter().map(|s| s.to_vec()).collect();
        let mut probe = params.clone();
        let mut flat = 0;
        for (t, g) in analytic.iter().enumerate() {
            for j in self.indices(g.len(), t as u64 + 2) {
                let orig = probe.slices()[t][j];
                probe.slices_mut()[t][j] = orig + self.step;
                let lp = loss(&probe);
                probe.slices_mut()[t][j] = orig - self.step;
                let lm = loss(&probe);
                probe.slices_mut()[t][j] = orig;
                report.record(self, flat + j, g[j], (lp - lm) / (2.0 * self.step));
            }
            flat += g.len();
        }
        report
    }
}
