//! Receiver side: template dictionary, colored disturbance, snapshot
//! synthesis, whitened matched-filter bank, CFAR calibration and
//! detection/localization metrics.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::numerics::{cholesky_psd, Cholesky, ComplexMatrix, RngStream};

/// Oversampled Fourier dictionary: column θ is
/// `s_θ[n] = exp(-j2πnθ/N_θ)/√d`.
pub fn build_dictionary(d: usize, n_theta: usize) -> Result<ComplexMatrix> {
    if d < 2 || n_theta < d {
        return Err(Error::config(format!(
            "dictionary needs d >= 2 and n_theta >= d (got d={d}, n_theta={n_theta})"
        )));
    }
    let norm = 1.0 / (d as f64).sqrt();
    Ok(ComplexMatrix::from_fn(d, n_theta, |n, theta| {
        let phase = -2.0 * PI * ((n * theta) % n_theta) as f64 / n_theta as f64;
        Complex64::from_polar(norm, phase)
    }))
}

/// Exponential-correlation clutter `[R_c]_{mn} = r_c^{|m-n|}` and the total
/// disturbance covariance `R_v = σ_c² R_c + σ_n² I`.
pub fn build_disturbance_covariance(
    d: usize,
    sigma_c2: f64,
    sigma_n2: f64,
    r_c: f64,
) -> Result<(ComplexMatrix, ComplexMatrix)> {
    if !(0.0..1.0).contains(&r_c) {
        return Err(Error::config(format!(
            "clutter correlation r_c must be in [0, 1), got {r_c}"
        )));
    }
    if !(sigma_c2 >= 0.0 && sigma_n2 >= 0.0) || !(sigma_c2 + sigma_n2 > 0.0) {
        return Err(Error::config(format!(
            "disturbance powers must be non-negative with positive sum (sigma_c2={sigma_c2}, sigma_n2={sigma_n2})"
        )));
    }
    let r_c_mat = ComplexMatrix::hermitian_from_fn(d, |m, n| Complex64::new(r_c.powi((m - n) as i32), 0.0));
    let r_v = ComplexMatrix::hermitian_from_fn(d, |m, n| {
        let diag = if m == n { sigma_n2 } else { 0.0 };
        Complex64::new(sigma_c2 * r_c_mat[(m, n)].re + diag, 0.0)
    });
    Ok((r_c_mat, r_v))
}

/// Parameters that define a sensing scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneParams {
    pub n_theta: usize,
    pub feat_dim: usize,
    pub r_c: f64,
    pub sigma_c2: f64,
    pub sigma_n2: f64,
    pub alpha_a_mag: f64,
}

impl Default for SceneParams {
    fn default() -> Self {
        Self {
            n_theta: 64,
            feat_dim: 32,
            r_c: 0.5,
            sigma_c2: 1.0,
            sigma_n2: 0.01,
            alpha_a_mag: 3.0,
        }
    }
}

/// Everything about a scene that does not depend on where the users are.
/// Built once, then shared read-only.
#[derive(Debug)]
struct SceneCache {
    params: SceneParams,
    templates: ComplexMatrix,
    r_c: ComplexMatrix,
    r_v: ComplexMatrix,
    clutter_factor: Option<Cholesky>,
    /// Row θ holds `conj(R_v⁻¹ s_θ)`, so `row · x = s_θᴴ R_v⁻¹ x`.
    whitened_conj: Vec<Complex64>,
    /// `s_θᴴ R_v⁻¹ s_θ` per bin.
    whitened_norms: Vec<f64>,
    /// `S ᴴ R_v⁻¹ S`, row-major `N_θ × N_θ`.
    gram: Vec<Complex64>,
}

/// A sensing scene: dictionary, disturbance model, cached whitened
/// templates, and the target/interferer geometry.
#[derive(Debug, Clone)]
pub struct SensingScene {
    cache: Arc<SceneCache>,
    theta_a: usize,
    delta: usize,
}

impl SensingScene {
    pub fn new(params: SceneParams, theta_a: usize, delta: usize) -> Result<Self> {
        let d = params.feat_dim;
        let n = params.n_theta;
        if !(params.alpha_a_mag >= 0.0) {
            return Err(Error::config("alpha_a_mag must be non-negative"));
        }
        let templates = build_dictionary(d, n)?;
        let (r_c, r_v) = build_disturbance_covariance(d, params.sigma_c2, params.sigma_n2, params.r_c)?;
        let rv_factor = cholesky_psd(&r_v, 0.0)?;
        let clutter_factor = if params.sigma_c2 > 0.0 {
            Some(cholesky_psd(&r_c, 0.0)?)
        } else {
            None
        };

        let mut whitened = Vec::with_capacity(n);
        let mut whitened_conj = Vec::with_capacity(n * d);
        let mut whitened_norms = Vec::with_capacity(n);
        for theta in 0..n {
            let s = templates.column(theta);
            let w = rv_factor.solve(&s);
            let norm: f64 = s.iter().zip(&w).map(|(a, b)| (a.conj() * b).re).sum();
            whitened_conj.extend(w.iter().map(|z| z.conj()));
            whitened_norms.push(norm);
            whitened.push(w);
        }
        let mut gram = Vec::with_capacity(n * n);
        for theta in 0..n {
            let s = templates.column(theta);
            for w in &whitened {
                gram.push(s.iter().zip(w).map(|(a, b)| a.conj() * b).sum());
            }
        }

        let cache = SceneCache {
            params,
            templates,
            r_c,
            r_v,
            clutter_factor,
            whitened_conj,
            whitened_norms,
            gram,
        };
        let scene = Self {
            cache: Arc::new(cache),
            theta_a: 0,
            delta: 0,
        };
        scene.with_geometry(theta_a, delta)
    }

    /// Same disturbance model, new target bin and offset. Shares caches.
    pub fn with_geometry(&self, theta_a: usize, delta: usize) -> Result<Self> {
        if theta_a >= self.n_theta() {
            return Err(Error::config(format!(
                "theta_a {theta_a} outside grid of {} bins",
                self.n_theta()
            )));
        }
        Ok(Self {
            cache: Arc::clone(&self.cache),
            theta_a,
            delta,
        })
    }

    pub fn params(&self) -> &SceneParams {
        &self.cache.params
    }

    pub fn n_theta(&self) -> usize {
        self.cache.params.n_theta
    }

    pub fn feat_dim(&self) -> usize {
        self.cache.params.feat_dim
    }

    pub fn theta_a(&self) -> usize {
        self.theta_a
    }

    pub fn delta(&self) -> usize {
        self.delta
    }

    /// `θ_B = (θ_A + Δ) mod N_θ`.
    pub fn theta_b(&self) -> usize {
        (self.theta_a + self.delta) % self.n_theta()
    }

    pub fn templates(&self) -> &ComplexMatrix {
        &self.cache.templates
    }

    pub fn template(&self, theta: usize) -> Vec<Complex64> {
        self.cache.templates.column(theta)
    }

    pub fn clutter_covariance(&self) -> &ComplexMatrix {
        &self.cache.r_c
    }

    pub fn disturbance_covariance(&self) -> &ComplexMatrix {
        &self.cache.r_v
    }

    /// `s_θᴴ R_v⁻¹ s_θ`.
    pub fn whitened_norm(&self, theta: usize) -> f64 {
        self.cache.whitened_norms[theta]
    }

    /// `s_θᴴ R_v⁻¹ s_φ`.
    pub fn whitened_inner(&self, theta: usize, phi: usize) -> Complex64 {
        self.cache.gram[theta * self.n_theta() + phi]
    }

    /// `α_A s_{θ_A} + α_B s_{θ_B} + v`, with terms included per hypothesis.
    pub fn synthesize_snapshot(&self, alpha_b: Complex64, hypothesis: Hypothesis, rng: &mut RngStream) -> Snapshot {
        let d = self.feat_dim();
        let p = &self.cache.params;
        // draw order is fixed regardless of hypothesis so that schemes
        // sharing a stream see identical disturbance
        let phase = 2.0 * PI * rng.uniform();
        let alpha_a_draw = Complex64::from_polar(p.alpha_a_mag, phase);
        let mut x = self.disturbance(rng);
        let (alpha_a, alpha_b) = match hypothesis {
            Hypothesis::H0 => (Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0)),
            Hypothesis::H1 => (alpha_a_draw, alpha_b),
            Hypothesis::UserBOnly => (Complex64::new(0.0, 0.0), alpha_b),
        };
        let t = &self.cache.templates;
        let (ta, tb) = (self.theta_a, self.theta_b());
        for (n, xn) in x.iter_mut().enumerate().take(d) {
            *xn += alpha_a * t[(n, ta)] + alpha_b * t[(n, tb)];
        }
        Snapshot {
            x,
            hypothesis,
            truth: Truth {
                theta_a: self.theta_a,
                theta_b: tb,
                alpha_a,
                alpha_b,
            },
        }
    }

    /// One draw of `v ~ CN(0, R_v)`.
    pub fn disturbance(&self, rng: &mut RngStream) -> Vec<Complex64> {
        let d = self.feat_dim();
        let p = &self.cache.params;
        let wc: Vec<Complex64> = (0..d).map(|_| rng.complex_gaussian()).collect();
        let wn: Vec<Complex64> = (0..d).map(|_| rng.complex_gaussian()).collect();
        let mut v = match &self.cache.clutter_factor {
            Some(l) => {
                let s = p.sigma_c2.sqrt();
                l.mul_lower(&wc).into_iter().map(|z| z * s).collect()
            }
            None => vec![Complex64::new(0.0, 0.0); d],
        };
        let s = p.sigma_n2.sqrt();
        for (vi, wi) in v.iter_mut().zip(&wn) {
            *vi += wi * s;
        }
        v
    }

    /// Whitened matched-filter bank over the whole grid.
    pub fn matched_filter_statistics(&self, x: &[Complex64]) -> Result<DetectionResult> {
        let d = self.feat_dim();
        if x.len() != d {
            return Err(Error::config(format!(
                "snapshot length {} does not match d = {d}",
                x.len()
            )));
        }
        let n = self.n_theta();
        let mut t_all = Vec::with_capacity(n);
        let mut t_max = f64::NEG_INFINITY;
        let mut theta_hat = 0;
        for theta in 0..n {
            let row = &self.cache.whitened_conj[theta * d..(theta + 1) * d];
            let proj: Complex64 = row.iter().zip(x).map(|(w, xi)| w * xi).sum();
            let t = proj.norm_sqr() / self.cache.whitened_norms[theta];
            if t > t_max {
                t_max = t;
                theta_hat = theta;
            }
            t_all.push(t);
        }
        Ok(DetectionResult {
            t_all,
            t_max,
            theta_hat,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Hypothesis {
    /// Pure disturbance.
    H0,
    /// Target present, interferer present.
    H1,
    /// Interferer alone (stealth experiments).
    UserBOnly,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Truth {
    pub theta_a: usize,
    pub theta_b: usize,
    pub alpha_a: Complex64,
    pub alpha_b: Complex64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub x: Vec<Complex64>,
    pub hypothesis: Hypothesis,
    pub truth: Truth,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionResult {
    pub t_all: Vec<f64>,
    pub t_max: f64,
    /// Argmax bin; the smallest index wins exact ties.
    pub theta_hat: usize,
}

impl DetectionResult {
    pub fn detected(&self, tau: f64) -> bool {
        self.t_max > tau
    }
}

/// Draws per parallel work unit during calibration.
const CALIBRATION_BLOCK: usize = 4096;

/// Empirical `(1 - p)` quantile with linear interpolation between order
/// statistics. Sorts `values` in place.
pub fn upper_quantile(values: &mut [f64], p: f64) -> f64 {
    assert!(!values.is_empty());
    values.sort_by(f64::total_cmp);
    let h = (values.len() - 1) as f64 * (1.0 - p);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(values.len() - 1);
    values[lo] + (h - lo as f64) * (values[hi] - values[lo])
}

/// Minimum calibration draws for a target false-alarm rate.
pub fn min_calibration_draws(p_fa: f64) -> usize {
    (50.0 / p_fa).ceil() as usize
}

/// CFAR threshold: the empirical `(1 - P_FA)` quantile of `T_max` over
/// `n_draws` pure-disturbance snapshots.
pub fn calibrate_threshold(scene: &SensingScene, p_fa: f64, n_draws: usize, rng: &mut RngStream) -> Result<f64> {
    calibrate_threshold_with(scene, p_fa, n_draws, rng, |_| Complex64::new(0.0, 0.0))
}

/// Like [`calibrate_threshold`], with an interferer return `α_B s_{θ_B}`
/// added to every null snapshot. `alpha_b` is called once per draw with
/// that draw's stream.
pub fn calibrate_threshold_with<F>(
    scene: &SensingScene,
    p_fa: f64,
    n_draws: usize,
    rng: &mut RngStream,
    alpha_b: F,
) -> Result<f64>
where
    F: Fn(&mut RngStream) -> Complex64 + Sync,
{
    if !(p_fa > 0.0 && p_fa < 1.0) {
        return Err(Error::config(format!("p_fa must be in (0, 1), got {p_fa}")));
    }
    if n_draws < min_calibration_draws(p_fa) {
        return Err(Error::config(format!(
            "{n_draws} calibration draws are too few for p_fa = {p_fa} (need >= {})",
            min_calibration_draws(p_fa)
        )));
    }
    let base = RngStream::new(rng.next_u64(), 0);
    let blocks = n_draws.div_ceil(CALIBRATION_BLOCK);
    let per_block: Vec<Result<Vec<f64>>> = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let mut r = base.derive(b as u64);
            let count = CALIBRATION_BLOCK.min(n_draws - b * CALIBRATION_BLOCK);
            (0..count)
                .map(|_| {
                    let ab = alpha_b(&mut r);
                    let snap = scene.synthesize_snapshot(ab, Hypothesis::UserBOnly, &mut r);
                    scene.matched_filter_statistics(&snap.x).map(|d| d.t_max)
                })
                .collect()
        })
        .collect();
    let mut t_max = Vec::with_capacity(n_draws);
    for block in per_block {
        t_max.extend(block?);
    }
    Ok(upper_quantile(&mut t_max, p_fa))
}

/// Shortest distance between two bins on the circular grid.
pub fn circular_distance(a: usize, b: usize, n_theta: usize) -> usize {
    let diff = a.abs_diff(b) % n_theta;
    diff.min(n_theta - diff)
}

/// What the metrics need from one H1 trial.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrialOutcome {
    pub t_max: f64,
    pub theta_hat: usize,
    pub theta_true: usize,
}

impl TrialOutcome {
    pub fn new(detection: &DetectionResult, theta_true: usize) -> Self {
        Self {
            t_max: detection.t_max,
            theta_hat: detection.theta_hat,
            theta_true,
        }
    }
}

/// Detection and localization metrics over a set of H1 trials.
///
/// Conditional metrics are `None` when nothing was detected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub trials: usize,
    pub detections: usize,
    pub correct_detections: usize,
    pub p_d: f64,
    pub p_det_and_correct: f64,
    pub p_correct_given_det: Option<f64>,
    pub rmse_det: Option<f64>,
}

impl MetricsRecord {
    /// Binomial standard error of `P_D`.
    pub fn p_d_standard_error(&self) -> f64 {
        (self.p_d * (1.0 - self.p_d) / self.trials as f64).sqrt()
    }

    /// Binomial standard error of `P(correct | det)` given the detection count.
    pub fn p_correct_given_det_standard_error(&self) -> Option<f64> {
        self.p_correct_given_det
            .map(|p| (p * (1.0 - p) / self.detections as f64).sqrt())
    }
}

pub fn aggregate_metrics(outcomes: &[TrialOutcome], tau: f64, n_theta: usize) -> Result<MetricsRecord> {
    if outcomes.is_empty() {
        return Err(Error::config("cannot aggregate metrics over zero trials"));
    }
    let mut detections = 0usize;
    let mut correct = 0usize;
    let mut sq_err = 0.0;
    for o in outcomes {
        if o.t_max > tau {
            detections += 1;
            let dist = circular_distance(o.theta_hat, o.theta_true, n_theta);
            if dist == 0 {
                correct += 1;
            }
            sq_err += (dist * dist) as f64;
        }
    }
    let n = outcomes.len() as f64;
    let (p_correct_given_det, rmse_det) = if detections > 0 {
        (
            Some(correct as f64 / detections as f64),
            Some((sq_err / detections as f64).sqrt()),
        )
    } else {
        (None, None)
    };
    Ok(MetricsRecord {
        trials: outcomes.len(),
        detections,
        correct_detections: correct,
        p_d: detections as f64 / n,
        p_det_and_correct: correct as f64 / n,
        p_correct_given_det,
        rmse_det,
    })
}
