//! Port geometry, spatial correlation and port-domain channel sampling.
//!
//! All lengths are in wavelengths.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::sync::OnceLock;

use crate::error::{Error, Result};
use crate::numerics::{bessel_j0, cholesky_psd, sample_standard_complex_gaussian, Cholesky, ComplexMatrix, RngStream};

/// Largest accepted mismatch between grid aspect and aperture aspect.
pub const MAX_ASPECT_MISMATCH: f64 = 4.0;

#[derive(Debug, Clone, PartialEq)]
pub struct PortLayout {
    dim: usize,
    aperture: (f64, f64),
    grid: (usize, usize),
    positions: Vec<[f64; 2]>,
}

impl PortLayout {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_ports(&self) -> usize {
        self.positions.len()
    }

    pub fn aperture(&self) -> (f64, f64) {
        self.aperture
    }

    /// Grid shape `(n_x, n_y)`; `n_y == 1` for linear layouts.
    pub fn grid(&self) -> (usize, usize) {
        self.grid
    }

    /// Port positions; the second coordinate is 0 for linear layouts.
    pub fn positions(&self) -> &[[f64; 2]] {
        &self.positions
    }

    fn displacement(&self, k: usize, l: usize) -> [f64; 2] {
        let (a, b) = (self.positions[k], self.positions[l]);
        [a[0] - b[0], a[1] - b[1]]
    }

    pub fn distance(&self, k: usize, l: usize) -> f64 {
        let d = self.displacement(k, l);
        d[0].hypot(d[1])
    }
}

/// Picks `(n_x, n_y)` with `n_x · n_y = k` whose aspect is closest (in log
/// ratio) to `w_x / w_y`; ties go to the wider grid.
fn grid_factorization(k: usize, w_x: f64, w_y: f64) -> Option<(usize, usize)> {
    let target = (w_x / w_y).ln();
    let mut best: Option<((usize, usize), f64)> = None;
    for n_x in 1..=k {
        if !k.is_multiple_of(n_x) {
            continue;
        }
        let n_y = k / n_x;
        let mismatch = ((n_x as f64 / n_y as f64).ln() - target).abs();
        let better = match best {
            None => true,
            Some((_, m)) => mismatch < m - 1e-12 || ((mismatch - m).abs() <= 1e-12),
        };
        if better {
            best = Some(((n_x, n_y), mismatch));
        }
    }
    best.filter(|(_, m)| *m <= MAX_ASPECT_MISMATCH.ln() + 1e-12)
        .map(|(g, _)| g)
}

fn node(i: usize, n: usize, width: f64) -> f64 {
    if n == 1 {
        0.0
    } else {
        i as f64 * width / (n - 1) as f64
    }
}

/// Uniform linear (`dim = 1`) or row-major rectangular grid (`dim = 2`) of
/// `k` ports spanning the aperture.
pub fn build_port_layout(dim: usize, k: usize, aperture: (f64, f64)) -> Result<PortLayout> {
    if k < 2 {
        return Err(Error::config(format!("need at least 2 ports, got {k}")));
    }
    let (w_x, w_y) = aperture;
    if !(w_x > 0.0) || !w_x.is_finite() {
        return Err(Error::config(format!("aperture width must be positive, got {w_x}")));
    }
    match dim {
        1 => {
            let positions = (0..k).map(|i| [node(i, k, w_x), 0.0]).collect();
            Ok(PortLayout {
                dim,
                aperture: (w_x, 0.0),
                grid: (k, 1),
                positions,
            })
        }
        2 => {
            if !(w_y > 0.0) || !w_y.is_finite() {
                return Err(Error::config(format!("aperture height must be positive, got {w_y}")));
            }
            let (n_x, n_y) = grid_factorization(k, w_x, w_y).ok_or_else(|| {
                Error::config(format!(
                    "{k} ports admit no grid within {MAX_ASPECT_MISMATCH}:1 of aperture {w_x}x{w_y}"
                ))
            })?;
            let mut positions = Vec::with_capacity(k);
            for j in 0..n_y {
                for i in 0..n_x {
                    positions.push([node(i, n_x, w_x), node(j, n_y, w_y)]);
                }
            }
            Ok(PortLayout {
                dim,
                aperture,
                grid: (n_x, n_y),
                positions,
            })
        }
        other => Err(Error::config(format!(
            "port layout dimension must be 1 or 2, got {other}"
        ))),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScatteringRegime {
    #[serde(alias = "rich")]
    RichIsotropic,
    #[serde(alias = "finite")]
    FiniteScattering,
}

impl std::str::FromStr for ScatteringRegime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rich" | "rich_isotropic" => Ok(Self::RichIsotropic),
            "finite" | "finite_scattering" => Ok(Self::FiniteScattering),
            other => Err(Error::config(format!("unknown scattering regime '{other}'"))),
        }
    }
}

/// Spatial correlation model of one scenario.
#[derive(Debug, Clone)]
pub struct ChannelModel {
    regime: ScatteringRegime,
    directions: Vec<[f64; 2]>,
    sigma_g2: f64,
    correlation: ComplexMatrix,
    factor: OnceLock<std::result::Result<Cholesky, (usize, f64)>>,
}

impl ChannelModel {
    pub fn regime(&self) -> ScatteringRegime {
        self.regime
    }

    /// Number of paths (finite scattering only).
    pub fn num_paths(&self) -> Option<usize> {
        match self.regime {
            ScatteringRegime::RichIsotropic => None,
            ScatteringRegime::FiniteScattering => Some(self.directions.len()),
        }
    }

    pub fn directions(&self) -> &[[f64; 2]] {
        &self.directions
    }

    pub fn sigma_g2(&self) -> f64 {
        self.sigma_g2
    }

    /// `R_K`.
    pub fn correlation(&self) -> &ComplexMatrix {
        &self.correlation
    }

    pub fn num_ports(&self) -> usize {
        self.correlation.rows()
    }

    /// Cholesky factor of `R_K`, computed once with the jitter ladder.
    pub fn factor(&self) -> Result<&Cholesky> {
        self.factor
            .get_or_init(|| {
                cholesky_psd(&self.correlation, 0.0).map_err(|e| match e {
                    Error::Singular { pivot, jitter } => (pivot, jitter),
                    _ => (0, 0.0),
                })
            })
            .as_ref()
            .map_err(|&(pivot, jitter)| Error::Singular { pivot, jitter })
    }
}

/// Builds `R_K` for the layout. Finite-scattering directions are drawn once
/// here: uniform on the unit circle in 2-D, ±1 in 1-D.
pub fn build_correlation_matrix(
    layout: &PortLayout,
    regime: ScatteringRegime,
    num_paths: usize,
    sigma_g2: f64,
    rng: &mut RngStream,
) -> Result<ChannelModel> {
    if !(sigma_g2 > 0.0) {
        return Err(Error::config(format!("sigma_g2 must be positive, got {sigma_g2}")));
    }
    let k = layout.num_ports();
    let (directions, correlation) = match regime {
        ScatteringRegime::RichIsotropic => {
            let r = ComplexMatrix::hermitian_from_fn(k, |i, j| {
                let x = 2.0 * PI * layout.distance(i, j);
                Complex64::new(bessel_j0(x).expect("finite port distance"), 0.0)
            });
            (Vec::new(), r)
        }
        ScatteringRegime::FiniteScattering => {
            if num_paths == 0 {
                return Err(Error::config("finite scattering needs at least one path"));
            }
            let directions: Vec<[f64; 2]> = (0..num_paths)
                .map(|_| {
                    if layout.dim() == 1 {
                        [if rng.uniform() < 0.5 { -1.0 } else { 1.0 }, 0.0]
                    } else {
                        let phi = 2.0 * PI * rng.uniform();
                        [phi.cos(), phi.sin()]
                    }
                })
                .collect();
            let r = ComplexMatrix::hermitian_from_fn(k, |i, j| {
                let d = layout.displacement(i, j);
                let s: f64 = directions
                    .iter()
                    .map(|u| (2.0 * PI * (u[0] * d[0] + u[1] * d[1])).cos())
                    .sum();
                Complex64::new(s / num_paths as f64, 0.0)
            });
            (directions, r)
        }
    };
    Ok(ChannelModel {
        regime,
        directions,
        sigma_g2,
        correlation,
        factor: OnceLock::new(),
    })
}

/// Port-domain coupling vector `g_B`.
#[derive(Debug, Clone, PartialEq)]
pub struct PortChannel(pub Vec<Complex64>);

impl PortChannel {
    pub fn as_slice(&self) -> &[Complex64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Draws `g_B ~ CN(0, σ_g² R_K)`.
pub fn sample_port_channel(model: &ChannelModel, rng: &mut RngStream) -> Result<PortChannel> {
    let factor = model.factor()?;
    let w = sample_standard_complex_gaussian(rng, model.num_ports());
    let scale = model.sigma_g2.sqrt();
    Ok(PortChannel(
        factor.mul_lower(&w).into_iter().map(|g| g * scale).collect(),
    ))
}

/// What User B knows about its channel: a masked (optionally noisy) copy.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    mask: Vec<bool>,
    g_tilde: Vec<Complex64>,
}

impl Observation {
    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn observed_count(&self) -> usize {
        self.mask.iter().filter(|m| **m).count()
    }

    /// Zero-filled observed channel `g̃_B`.
    pub fn g_tilde(&self) -> &[Complex64] {
        &self.g_tilde
    }

    pub fn num_ports(&self) -> usize {
        self.mask.len()
    }

    /// `o_B = [m; Re(g̃); Im(g̃)]`, length `3K`.
    pub fn feature_vector(&self) -> Vec<f64> {
        let mut o = Vec::with_capacity(3 * self.mask.len());
        o.extend(self.mask.iter().map(|&m| if m { 1.0 } else { 0.0 }));
        o.extend(self.g_tilde.iter().map(|g| g.re));
        o.extend(self.g_tilde.iter().map(|g| g.im));
        o
    }
}

/// Observes `m_obs` ports chosen uniformly without replacement. With
/// `sigma_obs2 > 0`, each observed entry carries CN(0, σ_obs²) error.
pub fn observe_channel(g: &PortChannel, m_obs: usize, sigma_obs2: f64, rng: &mut RngStream) -> Result<Observation> {
    let k = g.len();
    if m_obs == 0 || m_obs > k {
        return Err(Error::config(format!("m_obs must be in [1, {k}], got {m_obs}")));
    }
    if !(sigma_obs2 >= 0.0) {
        return Err(Error::config(format!(
            "sigma_obs2 must be non-negative, got {sigma_obs2}"
        )));
    }
    let mut mask = vec![false; k];
    for i in rng.sample_without_replacement(k, m_obs) {
        mask[i] = true;
    }
    let noise_scale = sigma_obs2.sqrt();
    let g_tilde =
        g.0.iter()
            .zip(&mask)
            .map(|(&gk, &m)| {
                if !m {
                    Complex64::new(0.0, 0.0)
                } else if sigma_obs2 > 0.0 {
                    gk + rng.complex_gaussian() * noise_scale
                } else {
                    gk
                }
            })
            .collect();
    Ok(Observation { mask, g_tilde })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_endpoints() {
        let l = build_port_layout(1, 2, (1.0, 0.0)).unwrap();
        assert_eq!(l.positions(), &[[0.0, 0.0], [1.0, 0.0]]);
    }

    #[test]
    fn square_corners() {
        let l = build_port_layout(2, 4, (1.0, 1.0)).unwrap();
        assert_eq!(l.grid(), (2, 2));
        assert_eq!(l.positions(), &[[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]);
    }

    /// Independent search over divisor pairs for the aspect rule.
    fn oracle_grid(k: usize, wx: f64, wy: f64) -> Option<(usize, usize)> {
        let pairs: Vec<(usize, usize)> = (1..=k).filter(|&d| k.is_multiple_of(d)).map(|d| (d, k / d)).collect();
        let score = |p: &(usize, usize)| ((p.0 as f64 / p.1 as f64) / (wx / wy)).ln().abs();
        let best = pairs.iter().map(score).fold(f64::INFINITY, f64::min);
        if best > 4f64.ln() + 1e-12 {
            return None;
        }
        pairs
            .into_iter()
            .filter(|p| (score(p) - best).abs() < 1e-12)
            .max_by_key(|p| p.0)
    }

    #[test]
    fn table_scale_grid() {
        let l = build_port_layout(2, 200, (2.0, 2.0)).unwrap();
        assert_eq!(l.grid(), (20, 10));
        assert_eq!(oracle_grid(200, 2.0, 2.0), Some((20, 10)));
        let p = l.positions();
        assert!((p[1][0] - 2.0 / 19.0).abs() < 1e-15);
        assert!((p[20][1] - 2.0 / 9.0).abs() < 1e-15);
        assert_eq!(p[199], [2.0, 2.0]);
    }

    #[test]
    fn grid_rule_matches_divisor_oracle() {
        for k in 2..120 {
            for &(wx, wy) in &[(1.0, 1.0), (2.0, 1.0), (1.0, 3.0), (4.0, 0.5)] {
                let got = build_port_layout(2, k, (wx, wy)).ok().map(|l| l.grid());
                assert_eq!(got, oracle_grid(k, wx, wy), "k={k} w=({wx},{wy})");
            }
        }
    }

    #[test]
    fn prime_count_rejected_in_square_aperture() {
        assert!(matches!(build_port_layout(2, 7, (1.0, 1.0)), Err(Error::Config(_))));
        assert!(build_port_layout(3, 8, (1.0, 1.0)).is_err());
        assert!(build_port_layout(1, 1, (1.0, 1.0)).is_err());
    }

    #[test]
    fn unit_diagonal_and_half_wavelength_entry() {
        let layout = build_port_layout(1, 2, (0.5, 0.0)).unwrap();
        let mut rng = RngStream::new(0, 0);
        let m = build_correlation_matrix(&layout, ScatteringRegime::RichIsotropic, 0, 1.0, &mut rng).unwrap();
        assert_eq!(m.correlation()[(0, 0)].re, 1.0);
        assert!((m.correlation()[(0, 1)].re - (-0.304_242)).abs() < 1e-5);
        let f = build_correlation_matrix(&layout, ScatteringRegime::FiniteScattering, 5, 1.0, &mut rng).unwrap();
        for i in 0..2 {
            assert_eq!(f.correlation()[(i, i)].re, 1.0);
        }
    }

    #[test]
    fn quarter_wavelength_projection() {
        let layout = build_port_layout(1, 2, (0.25, 0.0)).unwrap();
        let mut rng = RngStream::new(3, 0);
        let m = build_correlation_matrix(&layout, ScatteringRegime::FiniteScattering, 1, 1.0, &mut rng).unwrap();
        assert!(m.correlation()[(0, 1)].re.abs() < 1e-12);
    }

    #[test]
    fn finite_directions_are_unit() {
        let layout = build_port_layout(2, 16, (2.0, 2.0)).unwrap();
        let m = build_correlation_matrix(
            &layout,
            ScatteringRegime::FiniteScattering,
            7,
            1.0,
            &mut RngStream::new(1, 1),
        )
        .unwrap();
        assert_eq!(m.num_paths(), Some(7));
        for u in m.directions() {
            assert!((u[0].hypot(u[1]) - 1.0).abs() < 1e-12);
        }
        assert!(build_correlation_matrix(
            &layout,
            ScatteringRegime::FiniteScattering,
            0,
            1.0,
            &mut RngStream::new(1, 1)
        )
        .is_err());
    }

    #[test]
    fn full_observation_is_exact() {
        let g = PortChannel(sample_standard_complex_gaussian(&mut RngStream::new(4, 0), 12));
        let obs = observe_channel(&g, 12, 0.0, &mut RngStream::new(4, 1)).unwrap();
        assert_eq!(obs.g_tilde(), g.as_slice());
        assert!(matches!(
            observe_channel(&g, 0, 0.0, &mut RngStream::new(4, 1)),
            Err(Error::Config(_))
        ));
        assert!(observe_channel(&g, 13, 0.0, &mut RngStream::new(4, 1)).is_err());
    }

    #[test]
    fn observation_layout() {
        let g = PortChannel(sample_standard_complex_gaussian(&mut RngStream::new(8, 0), 200));
        let obs = observe_channel(&g, 30, 0.0, &mut RngStream::new(8, 1)).unwrap();
        assert_eq!(obs.observed_count(), 30);
        let o = obs.feature_vector();
        assert_eq!(o.len(), 600);
        for k in 0..200 {
            if obs.mask()[k] {
                assert_eq!(o[k], 1.0);
                assert_eq!(o[200 + k], g.0[k].re);
                assert_eq!(o[400 + k], g.0[k].im);
            } else {
                assert_eq!((o[k], o[200 + k], o[400 + k]), (0.0, 0.0, 0.0));
            }
        }
    }

    #[test]
    fn noisy_observation_touches_only_observed_ports() {
        let g = PortChannel(sample_standard_complex_gaussian(&mut RngStream::new(8, 0), 20));
        let obs = observe_channel(&g, 5, 0.1, &mut RngStream::new(8, 2)).unwrap();
        for k in 0..20 {
            if obs.mask()[k] {
                assert_ne!(obs.g_tilde()[k], g.0[k]);
            } else {
                assert_eq!(obs.g_tilde()[k], Complex64::new(0.0, 0.0));
            }
        }
    }
}
