//! Scalar densities, link functions and a truncated-Normal sampler.

use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};

pub const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

#[inline]
pub fn expit(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// `ln(1 + e^x)` without overflow.
#[inline]
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// `ln(expit(x))`.
#[inline]
pub fn ln_expit(x: f64) -> f64 {
    -softplus(-x)
}

/// `ln(1 - expit(x))`.
#[inline]
pub fn ln_expit_c(x: f64) -> f64 {
    -softplus(x)
}

/// Log Bernoulli mass of `y` with success probability `expit(x)`.
#[inline]
pub fn ln_bern_logit(y: bool, x: f64) -> f64 {
    if y {
        ln_expit(x)
    } else {
        ln_expit_c(x)
    }
}

/// Log Bernoulli mass of `y` with success probability `p`, `-inf` for an
/// impossible outcome.
#[inline]
pub fn ln_bern(y: bool, p: f64) -> f64 {
    if y {
        p.ln()
    } else {
        (-p).ln_1p()
    }
}

#[inline]
pub fn normal_ln_pdf(x: f64, mean: f64, sd: f64) -> f64 {
    let z = (x - mean) / sd;
    -0.5 * z * z - sd.ln() - LN_SQRT_2PI
}

/// Standard Normal CDF.
pub fn std_normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// Standard Normal upper-tail probability `1 - Phi(x)`.
pub fn std_normal_sf(x: f64) -> f64 {
    0.5 * libm::erfc(x / std::f64::consts::SQRT_2)
}

/// `ln Phi(x)`, accurate deep into the lower tail.
pub fn std_normal_ln_cdf(x: f64) -> f64 {
    if x > -30.0 {
        let p = std_normal_cdf(x);
        if p > 0.5 {
            // 1 - sf keeps full precision near 1
            (-std_normal_sf(x)).ln_1p()
        } else {
            p.ln()
        }
    } else {
        // Mills-ratio asymptotic series
        let x2 = x * x;
        -0.5 * x2 - (-x).ln() - LN_SQRT_2PI + (1.0 - 1.0 / x2 + 3.0 / (x2 * x2)).ln()
    }
}

/// `ln(1 - Phi(x))`.
pub fn std_normal_ln_sf(x: f64) -> f64 {
    std_normal_ln_cdf(-x)
}

/// Log of the standard-Normal probability mass on `(a, b)`.
pub fn std_normal_ln_mass(a: f64, b: f64) -> f64 {
    if !(a < b) {
        return f64::NEG_INFINITY;
    }
    if a >= 0.0 {
        // both in the upper half: work with survival functions
        let la = std_normal_ln_sf(a);
        let lb = std_normal_ln_sf(b);
        la + (-(lb - la).exp()).ln_1p()
    } else if b <= 0.0 {
        let la = std_normal_ln_cdf(a);
        let lb = std_normal_ln_cdf(b);
        lb + (-(la - lb).exp()).ln_1p()
    } else {
        (1.0 - std_normal_cdf(a) - std_normal_sf(b)).ln()
    }
}

/// Log of the Normal(mean, sd) probability mass on `(lo, hi)`.
pub fn normal_ln_mass(mean: f64, sd: f64, lo: f64, hi: f64) -> f64 {
    std_normal_ln_mass((lo - mean) / sd, (hi - mean) / sd)
}

/// Log density at `x` of Normal(mean, sd) truncated to `(lo, hi)`;
/// `-inf` outside the interval.
pub fn truncated_normal_ln_pdf(x: f64, mean: f64, sd: f64, lo: f64, hi: f64) -> f64 {
    if !(x > lo && x < hi) && !(x == lo && lo == f64::NEG_INFINITY) {
        return f64::NEG_INFINITY;
    }
    normal_ln_pdf(x, mean, sd) - normal_ln_mass(mean, sd, lo, hi)
}

/// Draw from Normal(mean, sd) truncated to `(lo, hi)`.
///
/// Uses the rejection samplers of Robert (1995): Normal rejection when the
/// interval straddles the mode and is wide, uniform rejection for narrow
/// intervals, and translated-exponential rejection in the tails.
pub fn sample_truncated_normal<R: Rng + ?Sized>(
    rng: &mut R,
    mean: f64,
    sd: f64,
    lo: f64,
    hi: f64,
) -> f64 {
    debug_assert!(lo < hi);
    let a = (lo - mean) / sd;
    let b = (hi - mean) / sd;
    let z = if a >= 0.0 {
        std_tail(rng, a, b)
    } else if b <= 0.0 {
        -std_tail(rng, -b, -a)
    } else {
        std_straddle(rng, a, b)
    };
    // guard against rounding at the boundary
    (mean + sd * z).clamp(lo, hi)
}

fn std_straddle<R: Rng + ?Sized>(rng: &mut R, a: f64, b: f64) -> f64 {
    if b - a >= 2.5066 {
        loop {
            let z: f64 = StandardNormal.sample(rng);
            if z > a && z < b {
                return z;
            }
        }
    }
    loop {
        let z = rng.random_range(a..b);
        if rng.random::<f64>().ln() <= -0.5 * z * z {
            return z;
        }
    }
}

/// Truncated standard Normal on `(a, b)` with `0 <= a < b`.
fn std_tail<R: Rng + ?Sized>(rng: &mut R, a: f64, b: f64) -> f64 {
    let alpha = 0.5 * (a + (a * a + 4.0).sqrt());
    // uniform proposal wins when the interval is narrow relative to the tail decay
    let root = (a * a + 4.0).sqrt();
    let uniform_bound =
        a + 2.0 * std::f64::consts::E.sqrt() / (a + root) * ((a * a - a * root) / 4.0).exp();
    if b.is_finite() && b <= uniform_bound.max(a + 1e-12) {
        loop {
            let z = rng.random_range(a..b);
            if rng.random::<f64>().ln() <= 0.5 * (a * a - z * z) {
                return z;
            }
        }
    }
    loop {
        let e: f64 = Exp1.sample(rng);
        let z = a + e / alpha;
        if z >= b {
            continue;
        }
        let d = z - alpha;
        if rng.random::<f64>().ln() <= -0.5 * d * d {
            return z;
        }
    }
}

/// Draw an index from unnormalized log weights. Returns `None` when every
/// weight is `-inf` (or NaN).
pub fn sample_log_weights<R: Rng + ?Sized>(rng: &mut R, ln_w: &[f64]) -> Option<usize> {
    let max = ln_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return None;
    }
    let total: f64 = ln_w.iter().map(|&v| (v - max).exp()).sum();
    let mut u = rng.random::<f64>() * total;
    let mut last = None;
    for (k, &v) in ln_w.iter().enumerate() {
        let wk = (v - max).exp();
        if wk > 0.0 {
            last = Some(k);
            if u < wk {
                return Some(k);
            }
            u -= wk;
        }
    }
    last
}

/// Linear-interpolation (type 7) quantile of already sorted data.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}
