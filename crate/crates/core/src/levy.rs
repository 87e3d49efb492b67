//! Symmetric α-stable laws and their Lévy–Itô decomposition.
//!
//! Convention used everywhere in the crate:
//!
//! ```text
//! E[exp(iuZ)] = exp(-scale^alpha * |u|^alpha)
//! ```
//!
//! so the Gaussian case `alpha = 2` has variance `2 * scale^2`, not
//! `scale^2`. For `alpha < 2` the Lévy measure is
//! `nu(dx) = C(alpha) scale^alpha |x|^(-1-alpha) dx` with
//! `C(alpha) = Gamma(1 + alpha) sin(pi alpha / 2) / pi`.

use std::f64::consts::{FRAC_PI_2, PI};

use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use crate::error::{param, Error, Result};

/// Symmetric stable law with index `alpha` in (0, 2] and positive scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawStableLaw", into = "RawStableLaw")]
pub struct StableLaw {
    alpha: f64,
    scale: f64,
    /// `C(alpha)`, zero for the Gaussian.
    density_constant: f64,
}

#[derive(Serialize, Deserialize)]
struct RawStableLaw {
    alpha: f64,
    scale: f64,
}

impl TryFrom<RawStableLaw> for StableLaw {
    type Error = Error;
    fn try_from(raw: RawStableLaw) -> Result<Self> {
        StableLaw::new(raw.alpha, raw.scale)
    }
}

impl From<StableLaw> for RawStableLaw {
    fn from(law: StableLaw) -> Self {
        RawStableLaw {
            alpha: law.alpha,
            scale: law.scale,
        }
    }
}

impl StableLaw {
    pub fn new(alpha: f64, scale: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha <= 2.0) {
            return Err(param("alpha", format!("must lie in (0, 2], got {alpha}")));
        }
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(param("scale", format!("must be positive and finite, got {scale}")));
        }
        let density_constant = if alpha < 2.0 {
            gamma(1.0 + alpha) * (FRAC_PI_2 * alpha).sin() / PI
        } else {
            0.0
        };
        Ok(Self {
            alpha,
            scale,
            density_constant,
        })
    }

    /// Standard law of index `alpha` (scale 1).
    pub fn standard(alpha: f64) -> Result<Self> {
        Self::new(alpha, 1.0)
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn is_gaussian(&self) -> bool {
        self.alpha == 2.0
    }

    pub fn with_scale(&self, scale: f64) -> Result<Self> {
        Self::new(self.alpha, scale)
    }

    /// `exp(-scale^alpha |u|^alpha)`.
    pub fn characteristic_function(&self, u: f64) -> f64 {
        (-(self.scale * u.abs()).powf(self.alpha)).exp()
    }

    /// Lévy density `nu(dx)/dx` at `x != 0`.
    pub fn levy_density(&self, x: f64) -> f64 {
        self.density_constant * self.scale.powf(self.alpha) * x.abs().powf(-1.0 - self.alpha)
    }

    /// Tail constant `K(alpha) = 2 C(alpha) / alpha`, so that
    /// `nu({|x| >= r}) = K(alpha) scale^alpha r^(-alpha)`.
    pub fn tail_constant(&self) -> f64 {
        2.0 * self.density_constant / self.alpha
    }

    fn require_jumps(&self) -> Result<()> {
        if self.is_gaussian() {
            Err(Error::NoJumpPart(
                "the alpha = 2 law is Gaussian and has no Lévy measure".into(),
            ))
        } else {
            Ok(())
        }
    }
}

/// Draw from `law` (Chambers–Mallows–Stuck, symmetric case).
pub fn sample_stable<R: Rng + ?Sized>(law: &StableLaw, rng: &mut R) -> f64 {
    law.scale * sample_standard_stable(law.alpha, rng)
}

/// Draw from the scale-1 symmetric law of index `alpha`.
#[inline]
pub fn sample_standard_stable<R: Rng + ?Sized>(alpha: f64, rng: &mut R) -> f64 {
    // V uniform on (-pi/2, pi/2), W standard exponential.
    let v = PI * (open01(rng) - 0.5);
    if alpha == 1.0 {
        return v.tan();
    }
    let w = -open01(rng).ln();
    if alpha == 2.0 {
        return 2.0 * v.sin() * w.sqrt();
    }
    let cos_v = v.cos();
    (alpha * v).sin() / cos_v.powf(1.0 / alpha)
        * (((1.0 - alpha) * v).cos() / w).powf((1.0 - alpha) / alpha)
}

/// Uniform on the open interval (0, 1).
#[inline]
pub(crate) fn open01<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    // 53-bit lattice shifted by half a step: never 0, never 1.
    ((rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / 9_007_199_254_740_992.0)
}

/// Outcome of [`stable_tail_mass`]; `no_jump_part` is set for the Gaussian.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TailMass {
    pub rate: f64,
    pub no_jump_part: bool,
}

/// `nu({|x| >= r})`: the rate per unit time of jumps of magnitude at least `r`.
pub fn stable_tail_mass(law: &StableLaw, r: f64) -> Result<TailMass> {
    if !(r > 0.0) {
        return Err(param("r", format!("threshold must be positive, got {r}")));
    }
    if law.is_gaussian() {
        return Ok(TailMass {
            rate: 0.0,
            no_jump_part: true,
        });
    }
    Ok(TailMass {
        rate: law.tail_constant() * law.scale.powf(law.alpha) * r.powf(-law.alpha),
        no_jump_part: false,
    })
}

/// Jump size with `|J| >= r1` from `nu` restricted to `{|x| >= r1}` and
/// normalized.
pub fn sample_big_jump<R: Rng + ?Sized>(law: &StableLaw, r1: f64, rng: &mut R) -> Result<f64> {
    law.require_jumps()?;
    if !(r1 > 0.0) {
        return Err(param("r1", format!("threshold must be positive, got {r1}")));
    }
    let u = open01(rng);
    let positive = rng.gen::<bool>();
    Ok(big_jump_from_uniform(law.alpha, r1, u, positive))
}

/// Inverse-tail transform `|J| = r1 * u^(-1/alpha)` with an explicit sign.
pub fn big_jump_from_uniform(alpha: f64, r1: f64, u: f64, positive: bool) -> f64 {
    let magnitude = r1 * u.powf(-1.0 / alpha);
    if positive {
        magnitude
    } else {
        -magnitude
    }
}

/// Arrival times of a homogeneous Poisson process on `(0, horizon)`.
pub fn sample_poisson_times<R: Rng + ?Sized>(rate: f64, horizon: f64, rng: &mut R) -> Result<Vec<f64>> {
    if !(rate >= 0.0) || !rate.is_finite() {
        return Err(param("rate", format!("must be finite and nonnegative, got {rate}")));
    }
    if !(horizon > 0.0) {
        return Err(param("horizon", format!("must be positive, got {horizon}")));
    }
    let mut times = Vec::new();
    if rate == 0.0 {
        return Ok(times);
    }
    let mut t = 0.0;
    loop {
        t += -open01(rng).ln() / rate;
        if t >= horizon {
            break;
        }
        // Exponential gaps are a.s. positive; guard against underflowed gaps.
        if times.last().is_none_or(|&last| t > last) {
            times.push(t);
        }
    }
    Ok(times)
}

/// `int_{|x| < r1} x^2 nu(dx) = 2 C(alpha) scale^alpha r1^(2 - alpha) / (2 - alpha)`.
pub fn small_jump_sigma2(law: &StableLaw, r1: f64) -> Result<f64> {
    law.require_jumps()?;
    if !(r1 > 0.0) {
        return Err(param("r1", format!("threshold must be positive, got {r1}")));
    }
    let a = law.alpha;
    Ok(2.0 * law.density_constant * law.scale.powf(a) * r1.powf(2.0 - a) / (2.0 - a))
}

/// Lévy–Itô split of a stable driver at jump size `r1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JumpDecomposition {
    pub r1: f64,
    /// Rate of jumps with `|x| >= r1`.
    pub big_rate: f64,
    /// Second moment per unit time of the jumps with `|x| < r1`.
    pub small_sigma2: f64,
}

impl JumpDecomposition {
    pub fn new(law: &StableLaw, r1: f64) -> Result<Self> {
        law.require_jumps()?;
        Ok(Self {
            r1,
            big_rate: stable_tail_mass(law, r1)?.rate,
            small_sigma2: small_jump_sigma2(law, r1)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{Lane, StreamKey};
    use crate::stats;

    fn draws(law: &StableLaw, n: usize, seed: u64) -> Vec<f64> {
        let mut rng = StreamKey::new(seed, 0, 0).rng(Lane::Auxiliary);
        (0..n).map(|_| sample_stable(law, &mut rng)).collect()
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(StableLaw::new(0.0, 1.0).is_err());
        assert!(StableLaw::new(2.1, 1.0).is_err());
        assert!(StableLaw::new(1.0, 0.0).is_err());
        assert!(StableLaw::new(1.0, f64::NAN).is_err());
        assert!(StableLaw::new(2.0, 1.0).is_ok());
    }

    #[test]
    fn gaussian_variance_under_cf_convention() {
        // scale 1/sqrt(2) => variance 2 * scale^2 = 1.
        let law = StableLaw::new(2.0, std::f64::consts::FRAC_1_SQRT_2).unwrap();
        let xs = draws(&law, 1_000_000, 1);
        let v = stats::variance(&xs);
        assert!((v - 1.0).abs() < 0.005, "variance {v}");
    }

    #[test]
    fn cauchy_median_and_cf() {
        let law = StableLaw::standard(1.0).unwrap();
        let xs = draws(&law, 200_000, 2);
        let s = stats::sorted(&xs);
        let iqr = stats::quantile_sorted(&s, 0.75) - stats::quantile_sorted(&s, 0.25);
        let med = stats::quantile_sorted(&s, 0.5);
        assert!(med.abs() < 3.0 * iqr / (xs.len() as f64).sqrt());
        let (phi, se) = stats::ecf_cos(&xs, 1.0);
        assert!((phi - (-1.0f64).exp()).abs() < 3.0 * se, "phi {phi} se {se}");
    }

    #[test]
    fn self_similarity() {
        let law = StableLaw::new(1.5, 2.0).unwrap();
        let c = 4.0;
        let direct = draws(&law, 50_000, 3);
        let small = law.with_scale(2.0 / c).unwrap();
        let scaled: Vec<f64> = draws(&small, 50_000, 4).iter().map(|x| c * x).collect();
        assert!(stats::ks_two_sample(&direct, &scaled).p_value > 0.01);
    }

    #[test]
    fn cauchy_tail_mass() {
        let law = StableLaw::standard(1.0).unwrap();
        let m = stable_tail_mass(&law, 1.0).unwrap();
        assert!((m.rate - 2.0 / PI).abs() < 1e-14);
        assert!(!m.no_jump_part);
        assert!(stable_tail_mass(&law, 1e300).unwrap().rate < 1e-299);
    }

    #[test]
    fn gaussian_tail_mass_flags_no_jumps() {
        let law = StableLaw::standard(2.0).unwrap();
        let m = stable_tail_mass(&law, 1.0).unwrap();
        assert_eq!(m.rate, 0.0);
        assert!(m.no_jump_part);
        assert!(small_jump_sigma2(&law, 1.0).is_err());
        assert!(sample_big_jump(&law, 1.0, &mut StreamKey::new(0, 0, 0).rng(Lane::Auxiliary)).is_err());
    }

    #[test]
    fn tail_mass_times_r_alpha_is_constant() {
        for alpha in [0.3, 0.5, 1.0, 1.5, 1.9] {
            let law = StableLaw::new(alpha, 1.3).unwrap();
            let base = stable_tail_mass(&law, 1.0).unwrap().rate;
            for r in [0.01, 0.5, 2.0, 17.0] {
                let v = stable_tail_mass(&law, r).unwrap().rate * r.powf(alpha);
                assert!((v - base).abs() <= 1e-12 * base, "alpha {alpha} r {r}");
            }
        }
    }

    /// Rate of increments `|L(h)| >= r` per unit time approaches `nu({|x| >= r})`.
    #[test]
    fn tail_mass_matches_threshold_crossing_rate() {
        let law = StableLaw::standard(0.5).unwrap();
        let h: f64 = 1e-3;
        let n = 4_000_000usize;
        let incr = law.with_scale(h.powf(1.0 / law.alpha())).unwrap();
        let mut rng = StreamKey::new(5, 0, 0).rng(Lane::Auxiliary);
        let hits = (0..n)
            .filter(|_| sample_stable(&incr, &mut rng).abs() >= 1.0)
            .count() as f64;
        let p = hits / n as f64;
        let rate = p / h;
        let se = (p * (1.0 - p) / n as f64).sqrt() / h;
        let expected = stable_tail_mass(&law, 1.0).unwrap().rate;
        assert!((rate - expected).abs() < 3.0 * se, "rate {rate} expected {expected} se {se}");
    }

    #[test]
    fn big_jump_boundary_and_halving() {
        assert_eq!(big_jump_from_uniform(1.0, 0.7, 1.0, true), 0.7);
        assert_eq!(big_jump_from_uniform(1.0, 0.7, 1.0, false), -0.7);
        let law = StableLaw::standard(1.0).unwrap();
        let mut rng = StreamKey::new(6, 0, 0).rng(Lane::BigJumps);
        let n = 200_000;
        let js: Vec<f64> = (0..n).map(|_| sample_big_jump(&law, 1.0, &mut rng).unwrap()).collect();
        assert!(js.iter().all(|j| j.abs() >= 1.0));
        let p_big = js.iter().filter(|j| j.abs() >= 2.0).count() as f64 / n as f64;
        assert!((p_big - 0.5).abs() < 3.0 * stats::binomial_band(0.5, n, 1.0));
        let p_pos = js.iter().filter(|&&j| j > 0.0).count() as f64 / n as f64;
        assert!((p_pos - 0.5).abs() < 3.0 * stats::binomial_band(0.5, n, 1.0));
    }

    #[test]
    fn poisson_times() {
        let mut rng = StreamKey::new(7, 0, 0).rng(Lane::BigJumps);
        assert!(sample_poisson_times(0.0, 1.0, &mut rng).unwrap().is_empty());
        assert!(sample_poisson_times(-1.0, 1.0, &mut rng).is_err());
        let runs = 100_000;
        let mut total = 0usize;
        let mut firsts = Vec::new();
        for _ in 0..runs {
            let ts = sample_poisson_times(2.0, 1.0, &mut rng).unwrap();
            assert!(ts.windows(2).all(|w| w[0] < w[1]));
            assert!(ts.iter().all(|&t| t > 0.0 && t < 1.0));
            total += ts.len();
            if let Some(&t) = ts.first() {
                firsts.push(t);
            }
        }
        let m = total as f64 / runs as f64;
        assert!((m - 2.0).abs() < 3.0 * 2f64.sqrt() / (runs as f64).sqrt(), "mean count {m}");
        // First arrival given it falls inside (0, 1): truncated exponential.
        let norm = 1.0 - (-2.0f64).exp();
        let ks = stats::ks_one_sample(&firsts, |t| (1.0 - (-2.0 * t).exp()) / norm);
        assert!(ks.p_value > 0.01, "{ks:?}");
    }

    fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
        let h = (b - a) / n as f64;
        let mut s = f(a) + f(b);
        for i in 1..n {
            s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        s * h / 3.0
    }

    /// Quadrature of `2 int_0^r x^2 nu(dx)`; substituting `x = r y^p` with
    /// `p = 2 / (2 - alpha)` turns the `x^(1-alpha)` endpoint singularity
    /// into a linear integrand near zero.
    fn small_sigma2_quadrature(law: &StableLaw, r: f64) -> f64 {
        let p = 2.0 / (2.0 - law.alpha());
        2.0 * simpson(
            |y| {
                if y == 0.0 {
                    return 0.0;
                }
                let x = r * y.powf(p);
                x * x * law.levy_density(x) * r * p * y.powf(p - 1.0)
            },
            0.0,
            1.0,
            20_000,
        )
    }

    #[test]
    fn small_jump_sigma2_matches_quadrature() {
        let cauchy = StableLaw::standard(1.0).unwrap();
        assert!((small_jump_sigma2(&cauchy, 1.0).unwrap() - 2.0 / PI).abs() < 1e-14);
        assert!((small_sigma2_quadrature(&cauchy, 1.0) - 2.0 / PI).abs() < 1e-8);
        for alpha in [0.5, 1.0, 1.5, 1.9] {
            let law = StableLaw::new(alpha, 0.8).unwrap();
            for r in [0.1, 1.0, 3.0] {
                let exact = small_jump_sigma2(&law, r).unwrap();
                let quad = small_sigma2_quadrature(&law, r);
                assert!((exact - quad).abs() < 1e-7 * exact.max(1.0), "alpha {alpha} r {r}");
                let doubled = small_jump_sigma2(&law, 2.0 * r).unwrap();
                let quad_doubled = small_sigma2_quadrature(&law, 2.0 * r);
                assert!((quad_doubled / quad - 2f64.powf(2.0 - alpha)).abs() < 1e-7);
                assert!((doubled / exact - 2f64.powf(2.0 - alpha)).abs() < 1e-12);
            }
            assert!(small_jump_sigma2(&law, 1e-200).unwrap() < 1e-15);
        }
    }

    #[test]
    fn decomposition_rate_decreases() {
        let law = StableLaw::standard(1.2).unwrap();
        let a = JumpDecomposition::new(&law, 0.5).unwrap();
        let b = JumpDecomposition::new(&law, 0.6).unwrap();
        assert!(b.big_rate < a.big_rate);
        assert!(a.small_sigma2.is_finite());
    }

    #[test]
    fn serde_validates() {
        let law: StableLaw = serde_json::from_str(r#"{"alpha":1.5,"scale":2.0}"#).unwrap();
        assert_eq!(law, StableLaw::new(1.5, 2.0).unwrap());
        assert!(serde_json::from_str::<StableLaw>(r#"{"alpha":3.0,"scale":2.0}"#).is_err());
    }
}
