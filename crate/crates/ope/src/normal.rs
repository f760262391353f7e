//! Standard normal CDF and quantile.
//!
//! The CDF uses W. J. Cody's rational approximations for `erf`/`erfc`
//! (SPECFUN), good to near machine precision in `f64`. The quantile uses
//! Acklam's rational approximation (absolute error below 1e-9) followed by
//! one Halley refinement step against the CDF.

use crate::scalar::Real;

const ERF_A: [f64; 5] = [
    3.161_123_743_870_565_5,
    1.138_641_541_510_501_6e2,
    3.774_852_376_853_02e2,
    3.209_377_589_138_469_4e3,
    1.857_777_061_846_031_5e-1,
];
const ERF_B: [f64; 4] = [
    2.360_129_095_234_412_2e1,
    2.440_246_379_344_441_7e2,
    1.282_616_526_077_372_3e3,
    2.844_236_833_439_171e3,
];
const ERFC_C: [f64; 9] = [
    5.641_884_969_886_701e-1,
    8.883_149_794_388_377,
    6.611_919_063_714_163e1,
    2.986_351_381_974_001e2,
    8.819_522_212_417_69e2,
    1.712_047_612_634_070_7e3,
    2.051_078_377_826_071_6e3,
    1.230_339_354_797_997_2e3,
    2.153_115_354_744_038_3e-8,
];
const ERFC_D: [f64; 8] = [
    1.574_492_611_070_983_5e1,
    1.176_939_508_913_125e2,
    5.371_811_018_620_099e2,
    1.621_389_574_566_690_3e3,
    3.290_799_235_733_459_7e3,
    4.362_619_090_143_247e3,
    3.439_367_674_143_721_6e3,
    1.230_339_354_803_749_5e3,
];
const ERFC_P: [f64; 6] = [
    3.053_266_349_612_323_6e-1,
    3.603_448_999_498_044_5e-1,
    1.257_817_261_112_292_6e-1,
    1.608_378_514_874_227_5e-2,
    6.587_491_615_298_378e-4,
    1.631_538_713_730_209_7e-2,
];
const ERFC_Q: [f64; 5] = [
    2.568_520_192_289_822,
    1.872_952_849_923_460_4,
    5.279_051_029_514_285e-1,
    6.051_834_131_244_132e-2,
    2.335_204_976_268_691_8e-3,
];
const ONE_OVER_SQRT_PI: f64 = 5.641_895_835_477_563e-1;

/// Complementary error function.
pub fn erfc<F: Real>(x: F) -> F {
    let y = x.abs();
    let thresh = F::of(0.46875);
    if y <= thresh {
        return F::one() - erf_small(x);
    }
    // erfc on the positive half line, reflected for negative inputs.
    let pos = if y <= F::of(4.0) {
        erfc_mid(y)
    } else if y < F::of(26.543) {
        erfc_tail(y)
    } else {
        F::zero()
    };
    if x < F::zero() {
        F::of(2.0) - pos
    } else {
        pos
    }
}

/// erf for |x| <= 0.46875.
fn erf_small<F: Real>(x: F) -> F {
    let z = x * x;
    let mut num = F::of(ERF_A[4]) * z;
    let mut den = z;
    for i in 0..3 {
        num = (num + F::of(ERF_A[i])) * z;
        den = (den + F::of(ERF_B[i])) * z;
    }
    x * (num + F::of(ERF_A[3])) / (den + F::of(ERF_B[3]))
}

/// erfc for 0.46875 < y <= 4.
fn erfc_mid<F: Real>(y: F) -> F {
    let mut num = F::of(ERFC_C[8]) * y;
    let mut den = y;
    for i in 0..7 {
        num = (num + F::of(ERFC_C[i])) * y;
        den = (den + F::of(ERFC_D[i])) * y;
    }
    scale_by_exp(y, (num + F::of(ERFC_C[7])) / (den + F::of(ERFC_D[7])))
}

/// erfc for y > 4.
fn erfc_tail<F: Real>(y: F) -> F {
    let z = (y * y).recip();
    let mut num = F::of(ERFC_P[5]) * z;
    let mut den = z;
    for i in 0..4 {
        num = (num + F::of(ERFC_P[i])) * z;
        den = (den + F::of(ERFC_Q[i])) * z;
    }
    let r = z * (num + F::of(ERFC_P[4])) / (den + F::of(ERFC_Q[4]));
    scale_by_exp(y, (F::of(ONE_OVER_SQRT_PI) - r) / y)
}

/// Multiply by exp(-y^2), split to preserve precision for large y.
fn scale_by_exp<F: Real>(y: F, r: F) -> F {
    let ysq = (y * F::of(16.0)).trunc() / F::of(16.0);
    let del = (y - ysq) * (y + ysq);
    (-ysq * ysq).exp() * (-del).exp() * r
}

/// Standard normal CDF.
pub fn standard_normal_cdf<F: Real>(x: F) -> F {
    F::of(0.5) * erfc(-x / F::of(std::f64::consts::SQRT_2))
}

const INV_A: [f64; 6] = [
    -3.969683028665376e1,
    2.209460984245205e2,
    -2.759285104469687e2,
    1.383_577_518_672_69e2,
    -3.066479806614716e1,
    2.506628277459239e0,
];
const INV_B: [f64; 5] = [
    -5.447609879822406e1,
    1.615858368580409e2,
    -1.556989798598866e2,
    6.680131188771972e1,
    -1.328068155288572e1,
];
const INV_C: [f64; 6] = [
    -7.784894002430293e-3,
    -3.223964580411365e-1,
    -2.400758277161838e0,
    -2.549732539343734e0,
    4.374664141464968e0,
    2.938163982698783e0,
];
const INV_D: [f64; 4] = [
    7.784695709041462e-3,
    3.224671290700398e-1,
    2.445134137142996e0,
    3.754408661907416e0,
];

/// Standard normal quantile (inverse CDF).
///
/// Returns `-inf`/`+inf` at p = 0 / 1 and NaN outside [0, 1].
pub fn standard_normal_quantile<F: Real>(p: F) -> F {
    if p.is_nan() || p < F::zero() || p > F::one() {
        return F::nan();
    }
    if p == F::zero() {
        return F::neg_infinity();
    }
    if p == F::one() {
        return F::infinity();
    }

    let p_low = F::of(0.02425);
    let x = if p < p_low {
        let q = (F::of(-2.0) * p.ln()).sqrt();
        tail_poly(q)
    } else if p > F::one() - p_low {
        let q = (F::of(-2.0) * (F::one() - p).ln()).sqrt();
        -tail_poly(q)
    } else {
        let q = p - F::of(0.5);
        let r = q * q;
        let num = ((((F::of(INV_A[0]) * r + F::of(INV_A[1])) * r + F::of(INV_A[2])) * r
            + F::of(INV_A[3]))
            * r
            + F::of(INV_A[4]))
            * r
            + F::of(INV_A[5]);
        let den = ((((F::of(INV_B[0]) * r + F::of(INV_B[1])) * r + F::of(INV_B[2])) * r
            + F::of(INV_B[3]))
            * r
            + F::of(INV_B[4]))
            * r
            + F::one();
        num * q / den
    };

    // One Halley step against the high-accuracy CDF.
    let e = standard_normal_cdf(x) - p;
    let u = e * F::of((2.0 * std::f64::consts::PI).sqrt()) * (x * x / F::of(2.0)).exp();
    x - u / (F::one() + x * u / F::of(2.0))
}

fn tail_poly<F: Real>(q: F) -> F {
    let num = ((((F::of(INV_C[0]) * q + F::of(INV_C[1])) * q + F::of(INV_C[2])) * q
        + F::of(INV_C[3]))
        * q
        + F::of(INV_C[4]))
        * q
        + F::of(INV_C[5]);
    let den = (((F::of(INV_D[0]) * q + F::of(INV_D[1])) * q + F::of(INV_D[2])) * q
        + F::of(INV_D[3]))
        * q
        + F::one();
    num / den
}
