//! Deterministic seeded random variates and the special functions under them.
//!
//! Everything downstream (calibration summaries, Monte Carlo comparison) runs on
//! this kernel: Gamma/Beta/Normal sampling plus Beta quantiles. Streams are
//! counter-style substreams of a single ChaCha generator, so sample `i` is
//! reproducible from `(seed, i)` alone regardless of thread count.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Beta distribution parameters, both strictly positive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaParams {
    pub alpha: f64,
    pub beta: f64,
}

impl BetaParams {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        if !(alpha > 0.0) || !(beta > 0.0) {
            return Err(Error::Domain(format!(
                "beta parameters must be positive, got alpha={alpha}, beta={beta}"
            )));
        }
        Ok(Self { alpha, beta })
    }

    pub fn mean(&self) -> f64 {
        self.alpha / (self.alpha + self.beta)
    }
}

/// A deterministic variate stream identified by `(seed, stream_index)`.
///
/// Identical identifiers replay the identical sequence on any platform.
#[derive(Debug, Clone)]
pub struct RandomStream {
    pub seed: u64,
    pub stream_index: u64,
    rng: ChaCha12Rng,
}

/// Substream `index` of the generator seeded with `seed`.
pub fn substream(seed: u64, index: u64) -> RandomStream {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(index);
    RandomStream {
        seed,
        stream_index: index,
        rng,
    }
}

impl RandomStream {
    /// Uniform draw in the open interval (0, 1).
    pub fn uniform(&mut self) -> f64 {
        loop {
            // 53-bit mantissa uniform in [0, 1)
            let u = (self.rng.next_u64() >> 11) as f64 * (1.0 / 9007199254740992.0);
            if u > 0.0 {
                return u;
            }
        }
    }

    /// Standard normal via Box-Muller.
    fn standard_normal(&mut self) -> f64 {
        let u1 = self.uniform();
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }
}

/// Gaussian draw; `sd = 0` returns `mean` exactly without consuming the stream.
pub fn normal_sample(mean: f64, sd: f64, stream: &mut RandomStream) -> Result<f64> {
    if sd < 0.0 {
        return Err(Error::Domain(format!("sd must be non-negative, got {sd}")));
    }
    if sd == 0.0 {
        return Ok(mean);
    }
    Ok(mean + sd * stream.standard_normal())
}

/// Gamma(shape, scale 1) draw by Marsaglia-Tsang rejection.
///
/// Shapes below 1 are boosted: draw Gamma(shape + 1) and multiply by
/// U^(1/shape).
pub fn gamma_sample(shape: f64, stream: &mut RandomStream) -> Result<f64> {
    if !(shape > 0.0) {
        return Err(Error::Domain(format!(
            "gamma shape must be positive, got {shape}"
        )));
    }
    if shape < 1.0 {
        let boost = stream.uniform().powf(1.0 / shape);
        let g = marsaglia_tsang(shape + 1.0, stream);
        return Ok((g * boost).max(f64::MIN_POSITIVE));
    }
    Ok(marsaglia_tsang(shape, stream).max(f64::MIN_POSITIVE))
}

fn marsaglia_tsang(shape: f64, stream: &mut RandomStream) -> f64 {
    debug_assert!(shape >= 1.0);
    let d = shape - 1.0 / 3.0;
    let c = 1.0 / (9.0 * d).sqrt();
    loop {
        let mut x = stream.standard_normal();
        let mut v = 1.0 + c * x;
        while v <= 0.0 {
            x = stream.standard_normal();
            v = 1.0 + c * x;
        }
        let v = v * v * v;
        let u = stream.uniform();
        if u < 1.0 - 0.0331 * x * x * x * x
            || u.ln() < 0.5 * x * x + d * (1.0 - v + v.ln())
        {
            return d * v;
        }
    }
}

/// Beta draw as X/(X+Y) with X ~ Gamma(alpha), Y ~ Gamma(beta).
pub fn beta_sample(params: BetaParams, stream: &mut RandomStream) -> Result<f64> {
    let x = gamma_sample(params.alpha, stream)?;
    let y = gamma_sample(params.beta, stream)?;
    let r = x / (x + y);
    // clamp into the open interval; downstream Bayes formulas divide by
    // expressions that vanish at the endpoints
    Ok(r.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON))
}

/// Regularized incomplete beta function I_x(a, b).
pub fn beta_cdf(params: BetaParams, x: f64) -> f64 {
    let (a, b) = (params.alpha, params.beta);
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b)
        + a * x.ln()
        + b * (1.0 - x).ln();
    if x < (a + 1.0) / (a + b + 2.0) {
        ln_front.exp() * beta_continued_fraction(a, b, x) / a
    } else {
        1.0 - ln_front.exp() * beta_continued_fraction(b, a, 1.0 - x) / b
    }
}

/// Lentz's algorithm for the incomplete beta continued fraction.
fn beta_continued_fraction(a: f64, b: f64, x: f64) -> f64 {
    const MAX_ITER: usize = 300;
    const EPS: f64 = 1e-15;
    const TINY: f64 = 1e-30;

    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;

    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;

    for m in 1..=MAX_ITER {
        let m_f = m as f64;
        let m2 = 2.0 * m_f;

        // even step
        let aa = m_f * (b - m_f) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;

        // odd step
        let aa = -(a + m_f) * (qab + m_f) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// Inverse of the regularized incomplete beta function to absolute
/// tolerance 1e-10, by bisection refined with Newton steps.
pub fn beta_quantile(params: BetaParams, q: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::Domain(format!(
            "quantile level must be in [0, 1], got {q}"
        )));
    }
    if q == 0.0 {
        return Ok(0.0);
    }
    if q == 1.0 {
        return Ok(1.0);
    }

    let (a, b) = (params.alpha, params.beta);
    let ln_norm = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b);
    let pdf = |x: f64| -> f64 {
        if x <= 0.0 || x >= 1.0 {
            return 0.0;
        }
        (ln_norm + (a - 1.0) * x.ln() + (b - 1.0) * (1.0 - x).ln()).exp()
    };

    let mut lo = 0.0_f64;
    let mut hi = 1.0_f64;
    let mut x = params.mean();
    for _ in 0..200 {
        let err = beta_cdf(params, x) - q;
        if err > 0.0 {
            hi = x;
        } else {
            lo = x;
        }
        if err.abs() < 1e-14 || hi - lo < 1e-12 {
            break;
        }
        let slope = pdf(x);
        let newton = x - err / slope;
        x = if slope > 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
    }
    Ok(x)
}

/// Lanczos approximation (g = 7, 9 terms) of ln Gamma.
pub fn ln_gamma(x: f64) -> f64 {
    const COEFFS: [f64; 8] = [
        676.5203681218851,
        -1259.1392167224028,
        771.32342877765313,
        -176.61502916214059,
        12.507343278686905,
        -0.13857109526572012,
        9.9843695780195716e-6,
        1.5056327351493116e-7,
    ];
    if x < 0.5 {
        // reflection
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = 0.99999999999980993;
    for (i, &c) in COEFFS.iter().enumerate() {
        acc += c / (x + i as f64 + 1.0);
    }
    let t = x + 7.5;
    0.5 * (std::f64::consts::TAU).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn mean_and_var(xs: &[f64]) -> (f64, f64) {
        let n = xs.len() as f64;
        let m = xs.iter().sum::<f64>() / n;
        let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
        (m, v)
    }

    #[test]
    fn gamma_mean_matches_shape() {
        let mut s = substream(7, 0);
        let draws: Vec<f64> = (0..1_000_000)
            .map(|_| gamma_sample(2.0, &mut s).unwrap())
            .collect();
        let (m, _) = mean_and_var(&draws);
        assert!((m - 2.0).abs() < 0.01, "mean {m}");
    }

    #[test]
    fn gamma_variance_matches_shape() {
        let mut s = substream(7, 1);
        let draws: Vec<f64> = (0..1_000_000)
            .map(|_| gamma_sample(3.0, &mut s).unwrap())
            .collect();
        let (_, v) = mean_and_var(&draws);
        assert!((v - 3.0).abs() < 0.05, "var {v}");
    }

    #[test]
    fn gamma_rejects_nonpositive_shape() {
        let mut s = substream(1, 0);
        assert!(gamma_sample(0.0, &mut s).is_err());
        assert!(gamma_sample(-1.0, &mut s).is_err());
    }

    #[test]
    fn gamma_small_shape_positive() {
        let mut s = substream(11, 0);
        for _ in 0..10_000 {
            assert!(gamma_sample(0.3, &mut s).unwrap() > 0.0);
        }
    }

    #[test]
    fn beta_uniform_mean() {
        let p = BetaParams::new(1.0, 1.0).unwrap();
        let mut s = substream(3, 0);
        let draws: Vec<f64> = (0..1_000_000)
            .map(|_| beta_sample(p, &mut s).unwrap())
            .collect();
        let (m, _) = mean_and_var(&draws);
        assert!((m - 0.5).abs() < 0.002, "mean {m}");
    }

    #[test]
    fn beta_hotpot_tpr_mean() {
        // Beta(53, 7): TPR posterior of the strongest hotpot metric
        let p = BetaParams::new(53.0, 7.0).unwrap();
        let mut s = substream(3, 1);
        let draws: Vec<f64> = (0..1_000_000)
            .map(|_| beta_sample(p, &mut s).unwrap())
            .collect();
        let (m, _) = mean_and_var(&draws);
        assert!((m - 0.883).abs() < 0.002, "mean {m}");
    }

    #[test]
    fn beta_hotpot_fpr_mean() {
        let p = BetaParams::new(1.0, 9.0).unwrap();
        let mut s = substream(3, 2);
        let draws: Vec<f64> = (0..1_000_000)
            .map(|_| beta_sample(p, &mut s).unwrap())
            .collect();
        let (m, _) = mean_and_var(&draws);
        assert!((m - 0.100).abs() < 0.002, "mean {m}");
    }

    #[test]
    fn beta_quantile_uniform_median() {
        let p = BetaParams::new(1.0, 1.0).unwrap();
        assert!((beta_quantile(p, 0.5).unwrap() - 0.5).abs() < 1e-10);
    }

    #[test]
    fn beta_quantile_table_endpoints() {
        // basic new_correctness: TPR Beta(38, 4), FPR Beta(6, 10)
        let tpr = BetaParams::new(38.0, 4.0).unwrap();
        assert!((beta_quantile(tpr, 0.05).unwrap() - 0.822).abs() < 0.005);
        assert!((beta_quantile(tpr, 0.95).unwrap() - 0.966).abs() < 0.005);
        let fpr = BetaParams::new(6.0, 10.0).unwrap();
        assert!((beta_quantile(fpr, 0.05).unwrap() - 0.191).abs() < 0.005);
        assert!((beta_quantile(fpr, 0.95).unwrap() - 0.577).abs() < 0.005);
    }

    #[test]
    fn beta_quantile_rejects_out_of_range() {
        let p = BetaParams::new(2.0, 3.0).unwrap();
        assert!(beta_quantile(p, -0.1).is_err());
        assert!(beta_quantile(p, 1.1).is_err());
    }

    #[test]
    fn normal_degenerate_and_mean() {
        let mut s = substream(5, 0);
        assert_eq!(normal_sample(0.0, 0.0, &mut s).unwrap(), 0.0);
        let draws: Vec<f64> = (0..1_000_000)
            .map(|_| normal_sample(1.5, 2.0, &mut s).unwrap())
            .collect();
        let (m, _) = mean_and_var(&draws);
        assert!((m - 1.5).abs() < 0.01, "mean {m}");
        assert!(normal_sample(0.0, -1.0, &mut s).is_err());
    }

    #[test]
    fn substream_replay_and_independence() {
        let a: Vec<f64> = {
            let mut s = substream(42, 0);
            (0..100).map(|_| s.uniform()).collect()
        };
        let a2: Vec<f64> = {
            let mut s = substream(42, 0);
            (0..100).map(|_| s.uniform()).collect()
        };
        let b: Vec<f64> = {
            let mut s = substream(42, 1);
            (0..100).map(|_| s.uniform()).collect()
        };
        assert_eq!(a, a2);
        assert_ne!(a, b);
    }

    #[test]
    fn substream_pairwise_correlation_near_zero() {
        let n = 100_000;
        let mut s0 = substream(9, 0);
        let mut s1 = substream(9, 1);
        let xs: Vec<f64> = (0..n).map(|_| s0.uniform()).collect();
        let ys: Vec<f64> = (0..n).map(|_| s1.uniform()).collect();
        let (mx, vx) = mean_and_var(&xs);
        let (my, vy) = mean_and_var(&ys);
        let cov = xs
            .iter()
            .zip(&ys)
            .map(|(x, y)| (x - mx) * (y - my))
            .sum::<f64>()
            / (n as f64 - 1.0);
        let corr = cov / (vx * vy).sqrt();
        assert!(corr.abs() < 0.01, "corr {corr}");
    }

    proptest! {
        #[test]
        fn quantile_monotone_in_q(
            alpha in 0.5f64..60.0,
            beta in 0.5f64..60.0,
            q1 in 0.01f64..0.99,
            q2 in 0.01f64..0.99,
        ) {
            let p = BetaParams::new(alpha, beta).unwrap();
            let (lo, hi) = if q1 <= q2 { (q1, q2) } else { (q2, q1) };
            let xlo = beta_quantile(p, lo).unwrap();
            let xhi = beta_quantile(p, hi).unwrap();
            prop_assert!(xlo <= xhi + 1e-12);
        }

        #[test]
        fn quantile_cdf_inverse_consistency(
            alpha in 0.5f64..60.0,
            beta in 0.5f64..60.0,
            x in 0.02f64..0.98,
        ) {
            let p = BetaParams::new(alpha, beta).unwrap();
            let q = beta_cdf(p, x);
            if q > 1e-9 && q < 1.0 - 1e-9 {
                let back = beta_quantile(p, q).unwrap();
                prop_assert!((back - x).abs() < 1e-6, "x={x} back={back}");
            }
        }

        #[test]
        fn beta_sample_in_open_interval(
            alpha in 0.2f64..100.0,
            beta in 0.2f64..100.0,
            seed in 0u64..1000,
        ) {
            let p = BetaParams::new(alpha, beta).unwrap();
            let mut s = substream(seed, 0);
            for _ in 0..50 {
                let x = beta_sample(p, &mut s).unwrap();
                prop_assert!(x > 0.0 && x < 1.0);
            }
        }

    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]

        #[test]
        fn beta_sample_mean_within_four_se(
            alpha in 1.0f64..80.0,
            beta in 1.0f64..80.0,
            seed in 0u64..100,
        ) {
            let p = BetaParams::new(alpha, beta).unwrap();
            let n = 100_000usize;
            let mut s = substream(seed, 0);
            let mean = (0..n)
                .map(|_| beta_sample(p, &mut s).unwrap())
                .sum::<f64>() / n as f64;
            let ab = alpha + beta;
            let var = alpha * beta / (ab * ab * (ab + 1.0));
            let se = (var / n as f64).sqrt();
            prop_assert!((mean - p.mean()).abs() < 4.0 * se,
                "mean {mean} expected {} se {se}", p.mean());
        }
    }
}
