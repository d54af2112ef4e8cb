//! Zero-mean random-effects distributions.
//!
//! The two-piece normal has left/right scales `sigma (1 - gamma)` and
//! `sigma (1 + gamma)` and its mode shifted so that the mean is exactly 0.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, StudentT};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{check_len, domain, Result};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;
/// `sqrt(2 / pi)`, the mean of a standard half-normal.
const HALF_NORMAL_MEAN: f64 = 0.797_884_560_802_865_4;

pub const DEFAULT_T_DF: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReFamily {
    Normal,
    #[serde(rename = "t")]
    StudentT,
    #[serde(rename = "tpn")]
    TwoPieceNormal,
}

impl ReFamily {
    pub fn n_params(self) -> usize {
        match self {
            ReFamily::Normal | ReFamily::StudentT => 1,
            ReFamily::TwoPieceNormal => 2,
        }
    }

    pub fn param_names(self) -> &'static [&'static str] {
        match self {
            ReFamily::Normal => &["sigma_u"],
            ReFamily::StudentT => &["t_scale"],
            ReFamily::TwoPieceNormal => &["tpn_sigma", "tpn_gamma"],
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            ReFamily::Normal => "normal",
            ReFamily::StudentT => "t",
            ReFamily::TwoPieceNormal => "tpn",
        }
    }
}

impl std::str::FromStr for ReFamily {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "normal" => Ok(ReFamily::Normal),
            "t" | "student" | "studentt" => Ok(ReFamily::StudentT),
            "tpn" | "twopiece" | "two-piece-normal" => Ok(ReFamily::TwoPieceNormal),
            other => Err(format!("unknown random-effects family `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum RandomEffectsDist {
    Normal { sd: f64 },
    #[serde(rename = "t")]
    StudentT { scale: f64, df: f64 },
    #[serde(rename = "tpn")]
    TwoPieceNormal { sigma: f64, gamma: f64 },
}

impl RandomEffectsDist {
    pub fn normal(sd: f64) -> Result<Self> {
        let d = RandomEffectsDist::Normal { sd };
        d.validate()?;
        Ok(d)
    }

    pub fn student_t(scale: f64, df: f64) -> Result<Self> {
        let d = RandomEffectsDist::StudentT { scale, df };
        d.validate()?;
        Ok(d)
    }

    pub fn two_piece_normal(sigma: f64, gamma: f64) -> Result<Self> {
        let d = RandomEffectsDist::TwoPieceNormal { sigma, gamma };
        d.validate()?;
        Ok(d)
    }

    /// Build from the estimated parameter vector; `df` is only used by the
    /// Student-t family.
    pub fn from_xi(family: ReFamily, xi: &[f64], df: f64) -> Result<Self> {
        check_len("xi", xi.len(), family.n_params())?;
        match family {
            ReFamily::Normal => Self::normal(xi[0]),
            ReFamily::StudentT => Self::student_t(xi[0], df),
            ReFamily::TwoPieceNormal => Self::two_piece_normal(xi[0], xi[1]),
        }
    }

    pub fn family(&self) -> ReFamily {
        match self {
            RandomEffectsDist::Normal { .. } => ReFamily::Normal,
            RandomEffectsDist::StudentT { .. } => ReFamily::StudentT,
            RandomEffectsDist::TwoPieceNormal { .. } => ReFamily::TwoPieceNormal,
        }
    }

    pub fn xi(&self) -> Vec<f64> {
        match *self {
            RandomEffectsDist::Normal { sd } => vec![sd],
            RandomEffectsDist::StudentT { scale, .. } => vec![scale],
            RandomEffectsDist::TwoPieceNormal { sigma, gamma } => vec![sigma, gamma],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            RandomEffectsDist::Normal { sd } => sd.is_finite() && sd > 0.0,
            RandomEffectsDist::StudentT { scale, df } => scale.is_finite() && scale > 0.0 && df > 2.0,
            RandomEffectsDist::TwoPieceNormal { sigma, gamma } => {
                sigma.is_finite() && sigma > 0.0 && gamma > -1.0 && gamma < 1.0
            }
        };
        if ok {
            Ok(())
        } else {
            Err(domain(format!("invalid random-effects distribution {self:?}")))
        }
    }

    /// Location of the mode of the two-piece normal; 0 for the symmetric families.
    pub fn mode(&self) -> f64 {
        match *self {
            RandomEffectsDist::TwoPieceNormal { sigma, gamma } => -2.0 * HALF_NORMAL_MEAN * sigma * gamma,
            _ => 0.0,
        }
    }

    pub fn log_density(&self, u: f64) -> f64 {
        match *self {
            RandomEffectsDist::Normal { sd } => {
                let z = u / sd;
                -LN_SQRT_2PI - sd.ln() - 0.5 * z * z
            }
            RandomEffectsDist::StudentT { scale, df } => {
                let z = u / scale;
                ln_gamma(0.5 * (df + 1.0))
                    - ln_gamma(0.5 * df)
                    - 0.5 * (df * std::f64::consts::PI).ln()
                    - scale.ln()
                    - 0.5 * (df + 1.0) * (z * z / df).ln_1p()
            }
            RandomEffectsDist::TwoPieceNormal { sigma, gamma } => {
                let y = u - self.mode();
                let side = if y < 0.0 { 1.0 - gamma } else { 1.0 + gamma };
                let s = sigma * side;
                // 2 / (sqrt(2 pi) (sigma_1 + sigma_2)) with sigma_1 + sigma_2 = 2 sigma
                -LN_SQRT_2PI - sigma.ln() - 0.5 * (y / s) * (y / s)
            }
        }
    }

    pub fn density(&self, u: f64) -> f64 {
        self.log_density(u).exp()
    }

    /// Gradient of `log_density(u)` with respect to [`xi`](Self::xi).
    pub fn dlog_density_dxi(&self, u: f64) -> [f64; 2] {
        match *self {
            RandomEffectsDist::Normal { sd } => [-1.0 / sd + u * u / (sd * sd * sd), 0.0],
            RandomEffectsDist::StudentT { scale, df } => {
                let r = u * u / (df * scale * scale);
                [-1.0 / scale + (df + 1.0) * r / (scale * (1.0 + r)), 0.0]
            }
            RandomEffectsDist::TwoPieceNormal { sigma, gamma } => {
                let c0 = HALF_NORMAL_MEAN;
                let y = u + 2.0 * c0 * sigma * gamma;
                let (a, da) = if y < 0.0 { (1.0 - gamma, -1.0) } else { (1.0 + gamma, 1.0) };
                let a2 = a * a;
                let dq_dsigma = 2.0 * c0 * gamma * y / (sigma * sigma * a2) - y * y / (sigma * sigma * sigma * a2);
                let dq_dgamma = 2.0 * c0 * y / (sigma * a2) - y * y * da / (sigma * sigma * a2 * a);
                [-1.0 / sigma - dq_dsigma, -dq_dgamma]
            }
        }
    }

    /// First and second derivatives of `log_density` in `u`.
    pub fn dlog_density_du(&self, u: f64) -> (f64, f64) {
        match *self {
            RandomEffectsDist::Normal { sd } => (-u / (sd * sd), -1.0 / (sd * sd)),
            RandomEffectsDist::StudentT { scale, df } => {
                let s2 = scale * scale;
                let q = 1.0 + u * u / (df * s2);
                let c = (df + 1.0) / (df * s2);
                (-c * u / q, -c * (1.0 - u * u / (df * s2)) / (q * q))
            }
            RandomEffectsDist::TwoPieceNormal { sigma, gamma } => {
                let y = u - self.mode();
                let s = sigma * if y < 0.0 { 1.0 - gamma } else { 1.0 + gamma };
                (-y / (s * s), -1.0 / (s * s))
            }
        }
    }

    pub fn variance(&self) -> f64 {
        match *self {
            RandomEffectsDist::Normal { sd } => sd * sd,
            RandomEffectsDist::StudentT { scale, df } => scale * scale * df / (df - 2.0),
            RandomEffectsDist::TwoPieceNormal { sigma, gamma } => {
                sigma * sigma * (1.0 + 3.0 * gamma * gamma - 8.0 * gamma * gamma / std::f64::consts::PI)
            }
        }
    }

    pub fn sd(&self) -> f64 {
        self.variance().sqrt()
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            RandomEffectsDist::Normal { sd } => {
                let z: f64 = StandardNormal.sample(rng);
                sd * z
            }
            RandomEffectsDist::StudentT { scale, df } => {
                let t = StudentT::new(df).expect("validated degrees of freedom");
                scale * t.sample(rng)
            }
            RandomEffectsDist::TwoPieceNormal { sigma, gamma } => {
                let s1 = sigma * (1.0 - gamma);
                let s2 = sigma * (1.0 + gamma);
                let z: f64 = StandardNormal.sample(rng);
                let left = rng.random::<f64>() < s1 / (s1 + s2);
                self.mode() + if left { -s1 * z.abs() } else { s2 * z.abs() }
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<f64> {
        (0..n).map(|_| self.draw(rng)).collect()
    }

    /// Reproducible draws from a seed.
    pub fn sample_seeded(&self, n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.sample(n, &mut rng)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::{integrate_real_line, QuadratureOptions};
    use crate::stats::{mean, sd};
    use approx::assert_relative_eq;

    fn grid() -> Vec<RandomEffectsDist> {
        vec![
            RandomEffectsDist::normal(1.0).unwrap(),
            RandomEffectsDist::normal(0.05).unwrap(),
            RandomEffectsDist::student_t(1.0, 5.0).unwrap(),
            RandomEffectsDist::student_t(0.4, 3.0).unwrap(),
            RandomEffectsDist::two_piece_normal(1.0, 0.0).unwrap(),
            RandomEffectsDist::two_piece_normal(0.7, 0.5).unwrap(),
            RandomEffectsDist::two_piece_normal(1.3, -0.8).unwrap(),
        ]
    }

    fn tight() -> QuadratureOptions {
        QuadratureOptions {
            abs_tol: 1e-13,
            rel_tol: 1e-12,
            max_intervals: 1000,
        }
    }

    #[test]
    fn standard_normal_mode() {
        let d = RandomEffectsDist::normal(1.0).unwrap();
        assert_relative_eq!(d.log_density(0.0), -0.5 * (2.0 * std::f64::consts::PI).ln(), max_relative = 1e-14);
    }

    #[test]
    fn symmetric_two_piece_is_normal() {
        let n = RandomEffectsDist::normal(0.8).unwrap();
        let t = RandomEffectsDist::two_piece_normal(0.8, 0.0).unwrap();
        for k in -40..=40 {
            let u = 0.1 * k as f64;
            assert!((n.log_density(u) - t.log_density(u)).abs() < 1e-12);
        }
    }

    #[test]
    fn densities_normalise_with_zero_mean_and_stated_variance() {
        for d in grid() {
            let s = d.sd();
            let total = integrate_real_line(|u| d.density(u), d.mode(), s, &tight()).result.value;
            let first = integrate_real_line(|u| u * d.density(u), d.mode(), s, &tight()).result.value;
            let second = integrate_real_line(|u| u * u * d.density(u), d.mode(), s, &tight()).result.value;
            assert!((total - 1.0).abs() < 1e-8, "{d:?}: {total}");
            assert!(first.abs() < 1e-8, "{d:?}: mean {first}");
            assert_relative_eq!(second, d.variance(), max_relative = 1e-7);
        }
    }

    #[test]
    fn student_t_at_zero_matches_formula() {
        let d = RandomEffectsDist::student_t(1.0, 5.0).unwrap();
        // Gamma(3) / (Gamma(2.5) sqrt(5 pi))
        let g25 = 1.329_340_388_179_137;
        let expected = (2.0 / (g25 * (5.0 * std::f64::consts::PI).sqrt())).ln();
        assert_relative_eq!(d.log_density(0.0), expected, max_relative = 1e-12);
        assert_relative_eq!(d.variance(), 5.0 / 3.0, max_relative = 1e-14);
    }

    #[test]
    fn variance_examples() {
        assert_relative_eq!(RandomEffectsDist::normal(0.5).unwrap().variance(), 0.25);
        let d = RandomEffectsDist::two_piece_normal(1.0, 0.6).unwrap();
        let xs = d.sample_seeded(1_000_000, 11);
        let v = sd(&xs).powi(2);
        assert!((v / d.variance() - 1.0).abs() < 0.01, "{v} vs {}", d.variance());
    }

    #[test]
    fn normal_sample_moments() {
        let d = RandomEffectsDist::normal(1.0).unwrap();
        let xs = d.sample_seeded(100_000, 7);
        assert!(mean(&xs).abs() < 0.02);
        assert!((sd(&xs) - 1.0).abs() < 0.01);
        assert!(d.sample_seeded(0, 7).is_empty());
        assert_eq!(xs[..10], d.sample_seeded(10, 7)[..]);
    }

    #[test]
    fn skewness_follows_gamma() {
        for &g in &[0.5, -0.5] {
            let d = RandomEffectsDist::two_piece_normal(1.0, g).unwrap();
            let xs = d.sample_seeded(200_000, 3);
            let m = mean(&xs);
            let s = sd(&xs);
            let skew = xs.iter().map(|x| ((x - m) / s).powi(3)).sum::<f64>() / xs.len() as f64;
            assert!(skew.signum() == g.signum() && skew.abs() > 0.1, "gamma {g}: skew {skew}");
            assert!(m.abs() < 0.01);
        }
    }

    #[test]
    fn student_t_approaches_normal_as_df_grows() {
        // KL(t_k || N(0, var_k)) on a grid of k should decrease
        let kl = |df: f64| {
            let t = RandomEffectsDist::student_t(1.0, df).unwrap();
            let n = RandomEffectsDist::normal(t.sd()).unwrap();
            integrate_real_line(
                |u| {
                    let lt = t.log_density(u);
                    lt.exp() * (lt - n.log_density(u))
                },
                0.0,
                1.0,
                &tight(),
            )
            .result
            .value
        };
        let ks = [3.0, 4.0, 6.0, 10.0, 30.0, 100.0];
        let vals: Vec<f64> = ks.iter().map(|&k| kl(k)).collect();
        for w in vals.windows(2) {
            assert!(w[1] < w[0], "{vals:?}");
        }
    }

    #[test]
    fn u_derivatives_match_finite_differences() {
        for d in grid() {
            for &u in &[-2.1, -0.3, 0.05, 0.9, 3.0] {
                let (g1, g2) = d.dlog_density_du(u);
                let h = 1e-5;
                let fd1 = (d.log_density(u + h) - d.log_density(u - h)) / (2.0 * h);
                let fd2 = (d.dlog_density_du(u + h).0 - d.dlog_density_du(u - h).0) / (2.0 * h);
                assert!((g1 - fd1).abs() < 1e-6 * (1.0 + fd1.abs()), "{d:?} u={u}");
                assert!((g2 - fd2).abs() < 1e-5 * (1.0 + fd2.abs()), "{d:?} u={u}");
            }
        }
    }

    #[test]
    fn xi_gradients_match_finite_differences() {
        for d in grid() {
            let xi = d.xi();
            let df = match d {
                RandomEffectsDist::StudentT { df, .. } => df,
                _ => DEFAULT_T_DF,
            };
            for &u in &[-2.1, -0.3, 0.05, 0.9, 3.0] {
                let g = d.dlog_density_dxi(u);
                for k in 0..xi.len() {
                    let h = 1e-6;
                    let mut p = xi.clone();
                    p[k] += h;
                    let mut m = xi.clone();
                    m[k] -= h;
                    let fp = RandomEffectsDist::from_xi(d.family(), &p, df).unwrap().log_density(u);
                    let fm = RandomEffectsDist::from_xi(d.family(), &m, df).unwrap().log_density(u);
                    let fd = (fp - fm) / (2.0 * h);
                    assert!((g[k] - fd).abs() < 1e-5 * (1.0 + fd.abs()), "{d:?} u={u} k={k}: {} vs {fd}", g[k]);
                }
            }
        }
    }

    #[test]
    fn invalid_parameters_are_rejected() {
        assert!(RandomEffectsDist::normal(0.0).is_err());
        assert!(RandomEffectsDist::student_t(1.0, 2.0).is_err());
        assert!(RandomEffectsDist::two_piece_normal(1.0, 1.0).is_err());
    }
}
