//! Gaussian mixtures over box dimensions (length, width, height) and the
//! plausibility score derived from them.
//!
//! A category's mixture is fit by EM with the component count chosen by BIC.
//! The plausibility of a box is the mode-normalized density of its best
//! component, exp(-half the squared Mahalanobis distance), which lies in
//! (0,1] and makes a 0.5 threshold equivalent to a Mahalanobis gate of
//! sqrt(2 ln 2).

use nalgebra::{Cholesky, Matrix3, SymmetricEigen, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::taxonomy::ClassId;

/// Covariance eigenvalues are clamped from below by this.
pub const COV_FLOOR: f64 = 1e-6;

const MAX_EM_ITERS: usize = 200;

#[derive(Debug, Clone, PartialEq)]
pub struct GmmComponent {
    pub weight: f64,
    pub mean: Vector3<f64>,
    pub covariance: Matrix3<f64>,
}

impl GmmComponent {
    /// Squared Mahalanobis distance of `x` from this component.
    pub fn mahalanobis_sq(&self, x: &Vector3<f64>) -> f64 {
        match Cholesky::new(self.covariance) {
            Some(chol) => {
                let d = x - self.mean;
                d.dot(&chol.solve(&d))
            }
            None => f64::INFINITY,
        }
    }

    /// Log density of the trivariate normal at `x`.
    fn log_density(&self, x: &Vector3<f64>) -> f64 {
        let chol = match Cholesky::new(self.covariance) {
            Some(c) => c,
            None => return f64::NEG_INFINITY,
        };
        let l = chol.l();
        let ln_det = 2.0 * (l[(0, 0)].ln() + l[(1, 1)].ln() + l[(2, 2)].ln());
        let d = x - self.mean;
        let maha = d.dot(&chol.solve(&d));
        -0.5 * (3.0 * (2.0 * std::f64::consts::PI).ln() + ln_det + maha)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GmmModel {
    pub category: ClassId,
    pub components: Vec<GmmComponent>,
}

impl GmmModel {
    pub fn k(&self) -> usize {
        self.components.len()
    }

    /// Weights positive and normalized, covariances symmetric positive
    /// definite.
    pub fn validate(&self) -> Result<()> {
        if self.components.is_empty() {
            return Err(Error::InvariantViolation {
                tag: "GMMC".into(),
                reason: "mixture without components".into(),
            });
        }
        let sum: f64 = self.components.iter().map(|c| c.weight).sum();
        if (sum - 1.0).abs() > 1e-9 || self.components.iter().any(|c| c.weight <= 0.0) {
            return Err(Error::InvariantViolation {
                tag: "GMMC".into(),
                reason: format!("weights must be positive and sum to 1, got sum {sum}"),
            });
        }
        for c in &self.components {
            if !c.mean.iter().all(|v| v.is_finite()) {
                return Err(Error::InvariantViolation {
                    tag: "GMMC".into(),
                    reason: "non-finite mean".into(),
                });
            }
            let sym = (c.covariance - c.covariance.transpose()).abs().max();
            if sym > 1e-9 {
                return Err(Error::InvariantViolation {
                    tag: "GMMC".into(),
                    reason: "covariance not symmetric".into(),
                });
            }
            let eig = SymmetricEigen::new(c.covariance);
            if eig.eigenvalues.min() <= 1e-12 {
                return Err(Error::InvariantViolation {
                    tag: "GMMC".into(),
                    reason: "covariance not positive definite".into(),
                });
            }
        }
        Ok(())
    }
}

/// A fitted mixture plus the selection evidence.
#[derive(Debug, Clone)]
pub struct GmmFit {
    pub model: GmmModel,
    pub bic: f64,
    pub log_likelihood: f64,
    /// Total log-likelihood after each EM iteration, non-decreasing.
    pub ll_trace: Vec<f64>,
}

/// Mode-normalized plausibility of box dimensions under the model: the best
/// component's density divided by its peak. 1.0 at any component mean.
pub fn dim_probability(dims: &Vector3<f64>, model: &GmmModel) -> f64 {
    model
        .components
        .iter()
        .map(|c| (-0.5 * c.mahalanobis_sq(dims)).exp())
        .fold(0.0, f64::max)
}

/// Mahalanobis radius at which the plausibility equals `rho`.
pub fn plausibility_radius(rho: f64) -> f64 {
    (-2.0 * rho.ln()).sqrt()
}

fn floor_covariance(cov: Matrix3<f64>) -> Matrix3<f64> {
    let sym = (cov + cov.transpose()) * 0.5;
    let mut eig = SymmetricEigen::new(sym);
    for v in eig.eigenvalues.iter_mut() {
        if *v < COV_FLOOR {
            *v = COV_FLOOR;
        }
    }
    let rebuilt = eig.recompose();
    (rebuilt + rebuilt.transpose()) * 0.5
}

/// k-means++ seeding: first center uniform, the rest proportional to the
/// squared distance to the nearest chosen center.
fn seed_means(samples: &[Vector3<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vector3<f64>> {
    let mut centers = vec![samples[rng.gen_range(0..samples.len())]];
    let mut d2: Vec<f64> = samples
        .iter()
        .map(|s| (s - centers[0]).norm_squared())
        .collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total <= 0.0 {
            rng.gen_range(0..samples.len())
        } else {
            let target = rng.gen::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = samples.len() - 1;
            for (i, w) in d2.iter().enumerate() {
                acc += w;
                if acc >= target {
                    pick = i;
                    break;
                }
            }
            pick
        };
        let newest = samples[pick];
        centers.push(newest);
        for (i, s) in samples.iter().enumerate() {
            d2[i] = d2[i].min((s - newest).norm_squared());
        }
    }
    centers
}

/// One EM run at a fixed component count.
///
/// The returned trace is monotone non-decreasing by construction: an
/// iteration whose covariance floor pushes the likelihood down is rolled
/// back and the run stops there.
pub fn fit_gmm_k(
    category: ClassId,
    samples: &[Vector3<f64>],
    k: usize,
    seed: u64,
) -> Result<GmmFit> {
    if samples.len() < k || samples.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "{} samples for a {k}-component mixture",
            samples.len()
        )));
    }
    let n = samples.len();
    let nf = n as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut mean_all = Vector3::zeros();
    for s in samples {
        mean_all += s;
    }
    mean_all /= nf;
    let mut cov_all = Matrix3::zeros();
    for s in samples {
        let d = s - mean_all;
        cov_all += d * d.transpose();
    }
    cov_all = floor_covariance(cov_all / nf);

    let mut comps: Vec<GmmComponent> = seed_means(samples, k, &mut rng)
        .into_iter()
        .map(|mean| GmmComponent {
            weight: 1.0 / k as f64,
            mean,
            covariance: cov_all,
        })
        .collect();

    let mut trace: Vec<f64> = Vec::new();
    let mut resp = vec![vec![0.0f64; k]; n];
    let mut prev_comps = comps.clone();

    for _ in 0..MAX_EM_ITERS {
        // E-step and the likelihood of the current parameters
        let mut ll = 0.0;
        for (i, s) in samples.iter().enumerate() {
            let logs: Vec<f64> = comps
                .iter()
                .map(|c| c.weight.ln() + c.log_density(s))
                .collect();
            let m = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = logs.iter().map(|l| (l - m).exp()).sum();
            let lse = m + sum.ln();
            ll += lse;
            for (j, l) in logs.iter().enumerate() {
                resp[i][j] = (l - lse).exp();
            }
        }

        if let Some(&prev) = trace.last() {
            if ll < prev {
                // the floor broke EM's guarantee; keep the better parameters
                comps = prev_comps;
                break;
            }
            trace.push(ll);
            if ll - prev < 1e-9 * (1.0 + ll.abs()) {
                break;
            }
        } else {
            trace.push(ll);
        }
        prev_comps = comps.clone();

        // M-step
        for j in 0..k {
            let nk: f64 = (0..n).map(|i| resp[i][j]).sum();
            if nk < 1e-12 {
                // starved component: keep its shape, let the weight collapse
                comps[j].weight = nk / nf;
                continue;
            }
            let mut mean = Vector3::zeros();
            for (i, s) in samples.iter().enumerate() {
                mean += resp[i][j] * s;
            }
            mean /= nk;
            let mut cov = Matrix3::zeros();
            for (i, s) in samples.iter().enumerate() {
                let d = s - mean;
                cov += resp[i][j] * d * d.transpose();
            }
            comps[j] = GmmComponent {
                weight: nk / nf,
                mean,
                covariance: floor_covariance(cov / nk),
            };
        }
    }

    let ll = *trace.last().expect("at least one E-step ran");
    // free parameters: per component 1 weight + 3 mean + 6 covariance,
    // minus the weight-sum constraint
    let p = (10 * k - 1) as f64;
    Ok(GmmFit {
        model: GmmModel {
            category,
            components: comps,
        },
        bic: -2.0 * ll + p * nf.ln(),
        log_likelihood: ll,
        ll_trace: trace,
    })
}

/// Fit mixtures with 1..=k_max components and keep the lowest BIC.
pub fn fit_gmm(
    category: ClassId,
    samples: &[Vector3<f64>],
    k_max: usize,
    seed: u64,
) -> Result<GmmFit> {
    if samples.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "{} dimension samples, need at least 2",
            samples.len()
        )));
    }
    if samples
        .iter()
        .any(|s| !s.iter().all(|v| v.is_finite() && *v > 0.0))
    {
        return Err(Error::InsufficientData(
            "box dimensions must be positive and finite".into(),
        ));
    }
    let mut best: Option<GmmFit> = None;
    for k in 1..=k_max.max(1) {
        if k > samples.len() {
            break;
        }
        let fit = fit_gmm_k(category, samples, k, seed)?;
        if best.as_ref().map_or(true, |b| fit.bic < b.bic) {
            best = Some(fit);
        }
    }
    Ok(best.expect("k=1 always runs"))
}
