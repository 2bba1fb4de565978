//! Special functions, Beta sampling, and adaptive quadrature on the unit interval.
//!
//! Everything here is scalar-generic; the constants are stored as `f64` and
//! converted on use, so `f32` callers get `f32`-rounded results.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Seed for every random stream in the crate.
///
/// Streams are ChaCha8, so a seed reproduces the same draws on every platform.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RngSeed(pub u64);

impl RngSeed {
    pub fn rng(self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.0)
    }

    /// Derives an independent child seed, e.g. one per ensemble member or epoch.
    pub fn derive(self, stream: u64) -> RngSeed {
        // splitmix64 finalizer over (seed, stream)
        let mut z = self
            .0
            .wrapping_add(0x9E37_79B9_7F4A_7C15u64.wrapping_mul(stream.wrapping_add(1)));
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        RngSeed(z ^ (z >> 31))
    }
}

impl From<u64> for RngSeed {
    fn from(v: u64) -> Self {
        RngSeed(v)
    }
}

const LN_PI: f64 = 1.144_729_885_849_400_2;
const LN_2_SQRT_E_OVER_PI: f64 = 0.620_782_237_635_245_2;
const LANCZOS_R: f64 = 10.900511;
const LANCZOS_DK: [f64; 11] = [
    2.485_740_891_387_535_5e-5,
    1.051_423_785_817_219_7,
    -3.456_870_972_220_162_5,
    4.512_277_094_668_948,
    -2.982_852_253_235_766_4,
    1.056_397_115_771_267,
    -1.954_287_731_916_458_7e-1,
    1.709_705_434_044_412e-2,
    -5.719_261_174_043_057e-4,
    4.633_994_733_599_057e-6,
    -2.719_949_084_886_077_2e-9,
];

fn check_positive<T: Scalar>(x: T, what: &str) -> Result<()> {
    if x.is_finite() && x > T::zero() {
        Ok(())
    } else {
        Err(Error::domain(format!("{what} requires a positive finite argument, got {x}")))
    }
}

/// Natural log of the gamma function for `x > 0`.
pub fn ln_gamma<T: Scalar>(x: T) -> Result<T> {
    check_positive(x, "ln_gamma")?;
    Ok(ln_gamma_pos(x))
}

/// Lanczos approximation (Pugh's g = 10.900511, 11 terms). Caller guarantees `x > 0`.
pub(crate) fn ln_gamma_pos<T: Scalar>(x: T) -> T {
    let half = T::half();
    if x < half {
        // reflection: Γ(x)Γ(1-x) = π / sin(πx)
        let pi_x = T::PI() * x;
        return T::lit(LN_PI) - pi_x.sin().ln() - ln_gamma_pos(T::one() - x);
    }
    let s = LANCZOS_DK
        .iter()
        .enumerate()
        .skip(1)
        .fold(T::lit(LANCZOS_DK[0]), |acc, (i, &dk)| {
            acc + T::lit(dk) / (x + T::lit(i as f64) - T::one())
        });
    s.ln()
        + T::lit(LN_2_SQRT_E_OVER_PI)
        + (x - half) * ((x - half + T::lit(LANCZOS_R)) / T::E()).ln()
}

/// `ln B(a, b) = lnΓ(a) + lnΓ(b) − lnΓ(a + b)`.
pub fn ln_beta<T: Scalar>(a: T, b: T) -> Result<T> {
    check_positive(a, "ln_beta")?;
    check_positive(b, "ln_beta")?;
    Ok(ln_beta_pos(a, b))
}

pub(crate) fn ln_beta_pos<T: Scalar>(a: T, b: T) -> T {
    ln_gamma_pos(a) + ln_gamma_pos(b) - ln_gamma_pos(a + b)
}

const ASYMPTOTIC_FROM: f64 = 6.0;

// B_{2k} / (2k), k = 1..7
const DIGAMMA_SERIES: [f64; 7] = [
    1.0 / 12.0,
    -1.0 / 120.0,
    1.0 / 252.0,
    -1.0 / 240.0,
    1.0 / 132.0,
    -691.0 / 32760.0,
    1.0 / 12.0,
];

// B_{2k}, k = 1..7
const TRIGAMMA_SERIES: [f64; 7] = [
    1.0 / 6.0,
    -1.0 / 30.0,
    1.0 / 42.0,
    -1.0 / 30.0,
    5.0 / 66.0,
    -691.0 / 2730.0,
    7.0 / 6.0,
];

/// Digamma ψ(x) = d/dx lnΓ(x) for `x > 0`.
pub fn digamma<T: Scalar>(x: T) -> Result<T> {
    check_positive(x, "digamma")?;
    Ok(digamma_pos(x))
}

/// Upward recurrence ψ(x) = ψ(x+1) − 1/x until x ≥ 6, then the asymptotic series.
pub(crate) fn digamma_pos<T: Scalar>(x: T) -> T {
    let mut shift = T::zero();
    let mut z = x;
    while z < T::lit(ASYMPTOTIC_FROM) {
        shift -= z.recip();
        z += T::one();
    }
    let inv2 = (z * z).recip();
    let mut power = inv2;
    let mut tail = T::zero();
    for &c in &DIGAMMA_SERIES {
        tail += T::lit(c) * power;
        power *= inv2;
    }
    shift + z.ln() - T::half() / z - tail
}

/// Trigamma ψ'(x) for `x > 0`; needed by the analytic loss gradients.
pub fn trigamma<T: Scalar>(x: T) -> Result<T> {
    check_positive(x, "trigamma")?;
    Ok(trigamma_pos(x))
}

pub(crate) fn trigamma_pos<T: Scalar>(x: T) -> T {
    let mut shift = T::zero();
    let mut z = x;
    while z < T::lit(ASYMPTOTIC_FROM) {
        shift += (z * z).recip();
        z += T::one();
    }
    let inv = z.recip();
    let inv2 = inv * inv;
    // 1/z + 1/(2z²) + Σ B_{2k} / z^{2k+1}
    let mut power = inv2 * inv;
    let mut tail = T::zero();
    for &c in &TRIGAMMA_SERIES {
        tail += T::lit(c) * power;
        power *= inv2;
    }
    shift + inv + T::half() * inv2 + tail
}

/// Log density of Beta(a, b) at `p ∈ (0, 1)`.
pub fn beta_ln_pdf<T: Scalar>(p: T, a: T, b: T) -> Result<T> {
    check_positive(a, "beta_ln_pdf")?;
    check_positive(b, "beta_ln_pdf")?;
    if !(p > T::zero() && p < T::one()) {
        return Err(Error::domain(format!("beta density evaluated outside (0,1): {p}")));
    }
    Ok((a - T::one()) * p.ln() + (b - T::one()) * (T::one() - p).ln() - ln_beta_pos(a, b))
}

pub fn beta_pdf<T: Scalar>(p: T, a: T, b: T) -> Result<T> {
    beta_ln_pdf(p, a, b).map(T::exp)
}

/// Draws `n` i.i.d. Beta(alpha, beta) samples as a ratio of two Gamma draws.
///
/// Shapes below one are rejected: evidence-derived opinions always have
/// `alpha, beta >= 1`.
pub fn sample_beta<T: Scalar>(alpha: T, beta: T, seed: RngSeed, n: usize) -> Result<Vec<T>> {
    if !(alpha.is_finite() && beta.is_finite() && alpha >= T::one() && beta >= T::one()) {
        return Err(Error::domain(format!(
            "sample_beta requires alpha, beta >= 1, got ({alpha}, {beta})"
        )));
    }
    if n == 0 {
        return Err(Error::domain("sample_beta requires n >= 1"));
    }
    let ga = Gamma::new(alpha.as_f64(), 1.0).map_err(|e| Error::domain(e.to_string()))?;
    let gb = Gamma::new(beta.as_f64(), 1.0).map_err(|e| Error::domain(e.to_string()))?;
    let mut rng = seed.rng();
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let x: f64 = ga.sample(&mut rng);
        let y: f64 = gb.sample(&mut rng);
        let p = x / (x + y);
        // the open-interval contract excludes exact endpoints from underflow
        if p > 0.0 && p < 1.0 {
            out.push(T::lit(p));
        }
    }
    Ok(out)
}

/// Offset applied to both ends of the unit interval so densities with
/// integrable endpoint singularities are never evaluated at 0 or 1.
pub const ENDPOINT_OFFSET: f64 = 1e-12;

/// Upper bound on integrand evaluations before giving up.
pub const NODE_BUDGET: usize = 200_000;

const KRONROD_NODES: [f64; 8] = [
    0.991_455_371_120_812_639_206_854_697_526_329,
    0.949_107_912_342_758_524_526_189_684_047_851,
    0.864_864_423_359_769_072_789_712_788_640_926,
    0.741_531_185_599_394_439_863_864_773_280_788,
    0.586_087_235_467_691_130_294_144_845_693_013,
    0.405_845_151_377_397_166_906_606_412_076_961,
    0.207_784_955_007_898_467_600_689_403_773_245,
    0.0,
];
const KRONROD_WEIGHTS: [f64; 8] = [
    0.022_935_322_010_529_224_963_732_008_058_970,
    0.063_092_092_629_978_553_290_700_663_189_204,
    0.104_790_010_322_250_183_839_876_322_541_518,
    0.140_653_259_715_525_918_745_189_590_510_238,
    0.169_004_726_639_267_902_826_583_426_598_550,
    0.190_350_578_064_785_409_913_256_402_421_014,
    0.204_432_940_075_298_892_414_161_999_234_649,
    0.209_482_141_084_727_828_012_999_174_891_714,
];
// Gauss weights for Kronrod nodes 1, 3, 5 and the centre.
const GAUSS_WEIGHTS: [f64; 4] = [
    0.129_484_966_168_869_693_270_611_432_679_082,
    0.279_705_391_489_276_667_901_467_771_423_780,
    0.381_830_050_505_118_944_950_369_775_488_975,
    0.417_959_183_673_469_387_755_102_040_816_327,
];

struct Panel<T> {
    lo: T,
    hi: T,
    estimate: T,
    error: T,
}

fn gauss_kronrod<T: Scalar, F: Fn(T) -> T>(f: &F, lo: T, hi: T) -> Panel<T> {
    let centre = T::half() * (lo + hi);
    let half_len = T::half() * (hi - lo);
    let fc = f(centre);
    let mut kronrod = fc * T::lit(KRONROD_WEIGHTS[7]);
    let mut gauss = fc * T::lit(GAUSS_WEIGHTS[3]);
    for j in 0..7 {
        let dx = half_len * T::lit(KRONROD_NODES[j]);
        let pair = f(centre - dx) + f(centre + dx);
        kronrod += T::lit(KRONROD_WEIGHTS[j]) * pair;
        if j % 2 == 1 {
            gauss += T::lit(GAUSS_WEIGHTS[j / 2]) * pair;
        }
    }
    Panel {
        lo,
        hi,
        estimate: kronrod * half_len,
        error: ((kronrod - gauss) * half_len).abs(),
    }
}

/// Globally adaptive 7/15-point Gauss–Kronrod quadrature over `[a, b]`.
///
/// Bisects the panel with the largest error estimate until the summed error
/// falls below `tol`. Exhausting [`NODE_BUDGET`] yields [`Error::Accuracy`]
/// carrying the best estimate.
pub fn integrate<T: Scalar, F: Fn(T) -> T>(f: F, a: T, b: T, tol: T) -> Result<T> {
    if !(tol > T::zero()) {
        return Err(Error::domain("quadrature tolerance must be positive"));
    }
    if !(a.is_finite() && b.is_finite() && a < b) {
        return Err(Error::domain(format!("invalid integration bounds [{a}, {b}]")));
    }
    let mut panels = vec![gauss_kronrod(&f, a, b)];
    let mut evaluations = 15;
    loop {
        let total: T = panels.iter().map(|p| p.estimate).sum();
        let error: T = panels.iter().map(|p| p.error).sum();
        if !total.is_finite() {
            return Err(Error::domain("integrand produced a non-finite value"));
        }
        if error <= tol {
            return Ok(total);
        }
        if evaluations + 30 > NODE_BUDGET {
            return Err(Error::Accuracy {
                estimate: total.as_f64(),
                error_bound: error.as_f64(),
                evaluations,
            });
        }
        let worst = panels
            .iter()
            .enumerate()
            .max_by(|x, y| x.1.error.partial_cmp(&y.1.error).unwrap_or(std::cmp::Ordering::Equal))
            .map(|(i, _)| i)
            .expect("at least one panel");
        let panel = panels.swap_remove(worst);
        let mid = T::half() * (panel.lo + panel.hi);
        panels.push(gauss_kronrod(&f, panel.lo, mid));
        panels.push(gauss_kronrod(&f, mid, panel.hi));
        evaluations += 30;
    }
}

/// Integral of `f` over `(0, 1)`, evaluated on `[1e-12, 1 - 1e-12]`.
pub fn integrate_unit_interval<T: Scalar, F: Fn(T) -> T>(f: F, tol: T) -> Result<T> {
    let eps = T::lit(ENDPOINT_OFFSET);
    integrate(f, eps, T::one() - eps, tol)
}
