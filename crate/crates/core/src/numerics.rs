//! Numerically stable scalar primitives shared by both players: clamped
//! cross-entropy and the two latent-to-probability mapping functions.

// coefficient tables and frozen test values keep their published digits
#![allow(clippy::excessive_precision)]

use crate::{real, Error, Real, Result};

/// Saturation guard applied to every probability before it feeds a logarithm.
pub const PROB_EPSILON: f64 = 1e-7;

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Clamps a probability into `[ε, 1−ε]` with `ε = 1e−7`.
#[inline]
pub fn clamp_prob<T: Real>(q: T) -> T {
    let eps = real::<T>(PROB_EPSILON);
    q.max(eps).min(T::one() - eps)
}

/// Binary cross-entropy between two scalars in `[0,1]`:
/// `−p·log(clamp(q)) − (1−p)·log(clamp(1−q))`. Finite for all inputs.
#[inline]
pub fn stable_bce<T: Real>(p: T, q: T) -> T {
    let one = T::one();
    -p * clamp_prob(q).ln() - (one - p) * clamp_prob(one - q).ln()
}

/// Derivative of [`stable_bce`] in its second argument, with the same clamps
/// in the denominators so the sign survives saturation.
#[inline]
pub fn stable_bce_grad<T: Real>(p: T, q: T) -> T {
    let one = T::one();
    -p / clamp_prob(q) + (one - p) / clamp_prob(one - q)
}

/// Which squashing function maps latent values onto `[0,1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MappingKind {
    Sigmoid,
    /// CDF of a Gaussian centered at 0.5 with standard deviation `sigma`.
    GaussianCdf,
}

/// The latent-to-probability map `F` together with its spread.
///
/// `sigma` is only meaningful for [`MappingKind::GaussianCdf`]; it controls
/// how fast the probability rises from 0 to 1 around the 0.5 center.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MappingSpec<T> {
    kind: MappingKind,
    sigma: T,
}

impl<T: Real> MappingSpec<T> {
    pub fn sigmoid() -> Self {
        Self {
            kind: MappingKind::Sigmoid,
            sigma: T::one(),
        }
    }

    pub fn gaussian_cdf(sigma: T) -> Result<Self> {
        if !sigma.is_finite() || sigma <= T::zero() {
            return Err(Error::Argument(format!(
                "gaussian mapping needs sigma > 0, got {sigma}"
            )));
        }
        Ok(Self {
            kind: MappingKind::GaussianCdf,
            sigma,
        })
    }

    pub fn kind(&self) -> MappingKind {
        self.kind
    }

    pub fn sigma(&self) -> T {
        self.sigma
    }

    /// Working range for latent values. The endpoints stand in for the
    /// generalized roots at ±∞ without overflowing the map: `0.5 ± 8σ` for
    /// the Gaussian CDF, `±16` for the sigmoid.
    pub fn latent_bounds(&self) -> (T, T) {
        match self.kind {
            MappingKind::Sigmoid => (real(-16.0), real(16.0)),
            MappingKind::GaussianCdf => {
                let half = real::<T>(0.5);
                let spread = real::<T>(8.0) * self.sigma;
                (half - spread, half + spread)
            }
        }
    }

    /// The latent value mapping to probability exactly 0.5.
    pub fn midpoint_latent(&self) -> T {
        match self.kind {
            MappingKind::Sigmoid => T::zero(),
            MappingKind::GaussianCdf => real(0.5),
        }
    }

    pub fn clamp_latent(&self, y: T) -> T {
        let (lo, hi) = self.latent_bounds();
        y.max(lo).min(hi)
    }
}

/// Maps a latent value through `F` into `[0,1]`. Strictly increasing in `y`.
pub fn map_latent<T: Real>(y: T, spec: &MappingSpec<T>) -> T {
    match spec.kind {
        MappingKind::Sigmoid => sigmoid(y),
        MappingKind::GaussianCdf => normal_cdf((y - real::<T>(0.5)) / spec.sigma),
    }
}

/// Analytic derivative of [`map_latent`]: `F'(y)`. For the Gaussian CDF this
/// is the Gaussian density, peaking at `1/(σ√2π)` when `y = 0.5`.
pub fn map_latent_derivative<T: Real>(y: T, spec: &MappingSpec<T>) -> T {
    match spec.kind {
        MappingKind::Sigmoid => {
            let s = sigmoid(y);
            s * (T::one() - s)
        }
        MappingKind::GaussianCdf => normal_pdf((y - real::<T>(0.5)) / spec.sigma) / spec.sigma,
    }
}

/// Overflow-free logistic function.
#[inline]
pub fn sigmoid<T: Real>(y: T) -> T {
    let one = T::one();
    if y >= T::zero() {
        one / (one + (-y).exp())
    } else {
        let e = y.exp();
        e / (one + e)
    }
}

/// Standard normal density `φ(z)`.
#[inline]
pub fn normal_pdf<T: Real>(z: T) -> T {
    let z = z.to_f64().unwrap_or(f64::NAN);
    real(INV_SQRT_2PI * (-0.5 * z * z).exp())
}

/// Standard normal CDF `Φ(z)`, through [`erfc`]. The complementary form
/// avoids cancellation in the lower tail.
#[inline]
pub fn normal_cdf<T: Real>(z: T) -> T {
    let z = z.to_f64().unwrap_or(f64::NAN);
    real(0.5 * erfc(-z / std::f64::consts::SQRT_2))
}

// Rational Chebyshev fits for erf/erfc due to W. J. Cody (Math. Comp. 23,
// 1969), the SPECFUN coefficient set. Absolute error stays below a few ulps
// (~1e-16), far inside the 1e-7 budget the mapping functions need. The
// tables keep their published digits even where f64 rounds them.

const ERF_A: [f64; 5] = [
    3.161_123_743_870_565_6e0,
    1.138_641_541_510_501_56e2,
    3.774_852_376_853_020_2e2,
    3.209_377_589_138_469_47e3,
    1.857_777_061_846_031_53e-1,
];
const ERF_B: [f64; 4] = [
    2.360_129_095_234_412_09e1,
    2.440_246_379_344_441_73e2,
    1.282_616_526_077_372_28e3,
    2.844_236_833_439_170_62e3,
];
const ERFC_C: [f64; 9] = [
    5.641_884_969_886_700_89e-1,
    8.883_149_794_388_375_94e0,
    6.611_919_063_714_162_95e1,
    2.986_351_381_974_001_31e2,
    8.819_522_212_417_690_9e2,
    1.712_047_612_634_070_58e3,
    2.051_078_377_826_071_47e3,
    1.230_339_354_797_997_25e3,
    2.153_115_354_744_038_46e-8,
];
const ERFC_D: [f64; 8] = [
    1.574_492_611_070_983_47e1,
    1.176_939_508_913_124_99e2,
    5.371_811_018_620_098_58e2,
    1.621_389_574_566_690_19e3,
    3.290_799_235_733_459_63e3,
    4.362_619_090_143_247_16e3,
    3.439_367_674_143_721_64e3,
    1.230_339_354_803_749_42e3,
];
const ERFC_P: [f64; 6] = [
    3.053_266_349_612_323_44e-1,
    3.603_448_999_498_044_39e-1,
    1.257_817_261_112_292_46e-1,
    1.608_378_514_874_227_66e-2,
    6.587_491_615_298_378_03e-4,
    1.631_538_713_730_209_78e-2,
];
const ERFC_Q: [f64; 5] = [
    2.568_520_192_289_822_42e0,
    1.872_952_849_923_460_47e0,
    5.279_051_029_514_284_12e-1,
    6.051_834_131_244_131_91e-2,
    2.335_204_976_268_691_85e-3,
];
const INV_SQRT_PI: f64 = 5.641_895_835_477_562_9e-1;

/// Error function, accurate to a few ulps over the whole real line.
pub fn erf(x: f64) -> f64 {
    let y = x.abs();
    if y <= 0.46875 {
        let z = y * y;
        let mut num = ERF_A[4] * z;
        let mut den = z;
        for i in 0..3 {
            num = (num + ERF_A[i]) * z;
            den = (den + ERF_B[i]) * z;
        }
        return x * (num + ERF_A[3]) / (den + ERF_B[3]);
    }
    let v = 1.0 - erfc(y);
    if x >= 0.0 {
        v
    } else {
        -v
    }
}

/// Complementary error function `1 − erf(x)`, accurate in the tails.
pub fn erfc(x: f64) -> f64 {
    let y = x.abs();
    if y <= 0.46875 {
        return 1.0 - erf(x);
    }
    let result = if y <= 4.0 {
        let mut num = ERFC_C[8] * y;
        let mut den = y;
        for i in 0..7 {
            num = (num + ERFC_C[i]) * y;
            den = (den + ERFC_D[i]) * y;
        }
        scaled_exp(y) * (num + ERFC_C[7]) / (den + ERFC_D[7])
    } else if y < 26.5 {
        let z = 1.0 / (y * y);
        let mut num = ERFC_P[5] * z;
        let mut den = z;
        for i in 0..4 {
            num = (num + ERFC_P[i]) * z;
            den = (den + ERFC_Q[i]) * z;
        }
        let r = z * (num + ERFC_P[4]) / (den + ERFC_Q[4]);
        scaled_exp(y) * (INV_SQRT_PI - r) / y
    } else {
        0.0
    };
    if x < 0.0 {
        2.0 - result
    } else {
        result
    }
}

// exp(-y^2) with the argument split at 1/16 granularity, which keeps the
// rounding error of y*y out of the exponential.
#[inline]
fn scaled_exp(y: f64) -> f64 {
    let ysq = (y * 16.0).trunc() / 16.0;
    let del = (y - ysq) * (y + ysq);
    (-ysq * ysq).exp() * (-del).exp()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const LN_2: f64 = std::f64::consts::LN_2;

    fn gauss(sigma: f64) -> MappingSpec<f64> {
        MappingSpec::gaussian_cdf(sigma).unwrap()
    }

    #[test]
    fn stable_bce_known_values() {
        assert!((stable_bce(1.0, 0.5) - LN_2).abs() < 1e-15);
        assert!((stable_bce(0.5, 0.5) - LN_2).abs() < 1e-15);
        // direct evaluation of -0.3 ln 0.7 - 0.7 ln 0.3
        assert!((stable_bce::<f64>(0.3, 0.7) - 0.949_783_446_209_774_8).abs() < 1e-15);
    }

    #[test]
    fn stable_bce_finite_at_the_corners() {
        for &(p, q) in &[(0.0, 0.0), (0.0, 1.0), (1.0, 0.0), (1.0, 1.0)] {
            assert!(stable_bce::<f64>(p, q).is_finite());
        }
        assert!(stable_bce::<f64>(1.0, 0.0) > 10.0); // -ln(1e-7) ≈ 16.1
    }

    #[test]
    fn stable_bce_minimized_at_q_equals_p() {
        for i in 1..20 {
            let p = i as f64 / 20.0;
            let at_p = stable_bce(p, p);
            for j in 0..=100 {
                let q = j as f64 / 100.0;
                assert!(stable_bce(p, q) >= at_p - 1e-12, "p={p} q={q}");
            }
        }
    }

    #[test]
    fn map_latent_known_values() {
        assert_eq!(map_latent(0.5, &gauss(1.0)), 0.5);
        assert_eq!(map_latent(0.0, &MappingSpec::sigmoid()), 0.5);
        // Φ(2) from a standard normal table
        assert!((map_latent(1.5, &gauss(0.5)) - 0.977_249_868_051_820_8).abs() < 1e-14);
    }

    #[test]
    fn map_latent_derivative_known_values() {
        // peak value 1/(σ√2π) at the center
        assert!((map_latent_derivative(0.5, &gauss(1.0)) - 0.398_942_280_401_432_7).abs() < 1e-15);
        assert_eq!(map_latent_derivative(0.0, &MappingSpec::sigmoid()), 0.25);
        // Gaussian density two standard deviations out
        assert!(
            (map_latent_derivative(1.0, &gauss(0.25)) - 0.215_963_866_052_752_25).abs() < 1e-15
        );
    }

    #[test]
    fn erf_matches_reference_values() {
        // (x, erf(x)) computed with 30-digit arithmetic
        let table = [
            (0.0, 0.0),
            (0.1, 0.112_462_916_018_284_9),
            (0.25, 0.276_326_390_168_236_93),
            (0.46875, 0.492_613_473_217_938),
            (0.5, 0.520_499_877_813_046_54),
            (0.75, 0.711_155_633_653_515_1),
            (1.0, 0.842_700_792_949_714_9),
            (1.5, 0.966_105_146_475_310_7),
            (2.0, 0.995_322_265_018_952_7),
            (3.0, 0.999_977_909_503_001_4),
            (4.0, 0.999_999_984_582_742_1),
        ];
        for &(x, want) in &table {
            assert!((erf(x) - want).abs() < 1e-15, "erf({x})");
            assert!((erf(-x) + want).abs() < 1e-15, "erf(-{x})");
        }
        let tails = [
            (2.5, 4.069_520_174_449_589e-4),
            (4.5, 1.966_160_441_542_887_5e-10),
            (5.0, 1.537_459_794_428_034_9e-12),
            (6.0, 2.151_973_671_249_891_3e-17),
        ];
        for &(x, want) in &tails {
            assert!(
                ((erfc(x) - want) / want).abs() < 1e-13,
                "erfc({x}) = {}",
                erfc(x)
            );
        }
    }

    #[test]
    fn normal_cdf_reference_values() {
        let table = [
            (-8.0, 6.220_960_574_271_784e-16),
            (-2.0, 0.022_750_131_948_179_207),
            (-1.0, 0.158_655_253_931_457_05),
            (0.0, 0.5),
            (1.0, 0.841_344_746_068_542_9),
            (2.0, 0.977_249_868_051_820_8),
            (4.0, 0.999_968_328_758_166_9),
        ];
        for &(z, want) in &table {
            let got: f64 = normal_cdf(z);
            assert!(
                (got - want).abs() < 1e-15 || ((got - want) / want).abs() < 1e-13,
                "Phi({z}) = {got}"
            );
        }
    }

    #[test]
    fn gaussian_symmetry_around_center() {
        for sigma in [0.1, 0.3, 0.5, 1.0] {
            let spec = gauss(sigma);
            let mut d = 0.0;
            while d <= 6.0 * sigma {
                let s = map_latent(0.5 + d, &spec) + map_latent(0.5 - d, &spec);
                assert!((s - 1.0).abs() < 1e-9, "sigma={sigma} d={d}");
                d += sigma / 17.0;
            }
        }
    }

    #[test]
    fn derivative_matches_finite_differences() {
        // 1000 quasi-random points per spread over [0.5-4σ, 0.5+4σ]
        for sigma in [0.1, 0.3, 0.5] {
            let spec = gauss(sigma);
            let h = sigma * 1e-4;
            for i in 0..1000 {
                let u = (i as f64 + 0.5) / 1000.0;
                let y = 0.5 + (2.0 * u - 1.0) * 4.0 * sigma;
                let fd = (map_latent(y + h, &spec) - map_latent(y - h, &spec)) / (2.0 * h);
                let an = map_latent_derivative(y, &spec);
                let rel = (fd - an).abs() / an.abs().max(1e-12);
                assert!(rel < 1e-6, "sigma={sigma} y={y} rel={rel}");
            }
        }
        let spec = MappingSpec::sigmoid();
        let h = 1e-5;
        for i in 0..1000 {
            let y = -8.0 + 16.0 * (i as f64 + 0.5) / 1000.0;
            let fd = (map_latent(y + h, &spec) - map_latent(y - h, &spec)) / (2.0 * h);
            let an = map_latent_derivative(y, &spec);
            assert!((fd - an).abs() / an.abs().max(1e-12) < 1e-6);
        }
    }

    #[test]
    fn latent_bounds_follow_the_spread() {
        let spec = gauss(0.3);
        assert_eq!(spec.latent_bounds(), (0.5 - 2.4, 0.5 + 2.4));
        assert_eq!(MappingSpec::<f64>::sigmoid().latent_bounds(), (-16.0, 16.0));
        assert_eq!(spec.clamp_latent(100.0), 2.9);
        assert!(MappingSpec::gaussian_cdf(0.0).is_err());
        assert!(MappingSpec::gaussian_cdf(-1.0).is_err());
    }

    #[test]
    fn midpoint_maps_to_half() {
        for spec in [gauss(0.3), gauss(0.1), MappingSpec::sigmoid()] {
            assert_eq!(map_latent(spec.midpoint_latent(), &spec), 0.5);
        }
    }

    proptest! {
        #[test]
        fn map_latent_is_monotone(
            y1 in -20.0f64..20.0,
            y2 in -20.0f64..20.0,
            sigma in 0.05f64..2.0,
            use_sigmoid in proptest::bool::ANY,
        ) {
            let spec = if use_sigmoid { MappingSpec::sigmoid() } else { gauss(sigma) };
            let (lo, hi) = (y1.min(y2), y1.max(y2));
            prop_assert!(map_latent(lo, &spec) <= map_latent(hi, &spec));
        }

        #[test]
        fn stable_bce_is_nonnegative(p in 0.0f64..=1.0, q in 0.0f64..=1.0) {
            prop_assert!(stable_bce(p, q) >= 0.0);
        }

        #[test]
        fn mapped_values_stay_in_unit_interval(y in -1e6f64..1e6, sigma in 0.05f64..2.0) {
            for spec in [MappingSpec::sigmoid(), gauss(sigma)] {
                let m = map_latent(y, &spec);
                prop_assert!((0.0..=1.0).contains(&m));
                prop_assert!(map_latent_derivative(y, &spec) >= 0.0);
            }
        }
    }
}
