//! Reference differential entropies by adaptive quadrature of `-∫ p ln p`.

use std::f64::consts::PI;

/// Adaptive Simpson integration of `f` over `[a, b]` to absolute tolerance `tol`.
pub fn adaptive_simpson(f: &impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    let m = 0.5 * (a + b);
    let (fa, fm, fb) = (f(a), f(m), f(b));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson_step(f, a, b, fa, fm, fb, whole, tol, 50)
}

#[allow(clippy::too_many_arguments)]
fn simpson_step(
    f: &impl Fn(f64) -> f64,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm), f(rm));
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    simpson_step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
        + simpson_step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
}

/// A weighted normal component `(weight, mean, variance)`.
pub type Component = (f64, f64, f64);

fn mixture_log_pdf(components: &[Component], x: f64) -> f64 {
    let logs: Vec<f64> = components
        .iter()
        .map(|&(w, m, v)| w.ln() - 0.5 * ((2.0 * PI * v).ln() + (x - m).powi(2) / v))
        .collect();
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + logs.iter().map(|l| (l - max).exp()).sum::<f64>().ln()
}

/// Differential entropy (nats) of a 1-D Gaussian mixture.
///
/// The integral runs over every component's mean ± 10 sd, split into panels at
/// each component's mean and ±{1, 3, 6} sd so narrow spikes are resolved.
pub fn gaussian_mixture_entropy(components: &[Component]) -> f64 {
    let components: Vec<Component> = components.iter().copied().filter(|c| c.0 > 0.0).collect();
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    let mut breaks = Vec::new();
    for &(_, m, v) in &components {
        let sd = v.sqrt();
        lo = lo.min(m - 10.0 * sd);
        hi = hi.max(m + 10.0 * sd);
        for t in [-6.0, -3.0, -1.0, 0.0, 1.0, 3.0, 6.0] {
            breaks.push(m + t * sd);
        }
    }
    breaks.push(lo);
    breaks.push(hi);
    breaks.retain(|b| (lo..=hi).contains(b));
    breaks.sort_by(f64::total_cmp);
    breaks.dedup();

    let integrand = |x: f64| {
        let lp = mixture_log_pdf(&components, x);
        if lp == f64::NEG_INFINITY {
            0.0
        } else {
            -lp.exp() * lp
        }
    };
    let tol = 1e-8;
    let width = hi - lo;
    breaks
        .windows(2)
        .map(|w| adaptive_simpson(&integrand, w[0], w[1], tol * (w[1] - w[0]) / width))
        .sum()
}

/// Closed-form entropy of `N(0, variance)`.
pub fn gaussian_entropy(variance: f64) -> f64 {
    0.5 * (2.0 * PI * std::f64::consts::E * variance).ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simpson_integrates_polynomials_and_exponentials() {
        let v = adaptive_simpson(&|x: f64| x * x, 0.0, 3.0, 1e-12);
        assert!((v - 9.0).abs() < 1e-10);
        let v = adaptive_simpson(&|x: f64| x.exp(), 0.0, 1.0, 1e-12);
        assert!((v - (std::f64::consts::E - 1.0)).abs() < 1e-10);
    }

    #[test]
    fn single_gaussian_matches_closed_form() {
        for var in [1e-4, 0.0025, 1.0, 4.0, 10.0] {
            let h = gaussian_mixture_entropy(&[(1.0, 0.3, var)]);
            assert!((h - gaussian_entropy(var)).abs() < 1e-7, "var {var}: {h}");
        }
    }

    #[test]
    fn far_separated_pair_adds_ln_two() {
        let h = gaussian_mixture_entropy(&[(0.5, -50.0, 1.0), (0.5, 50.0, 1.0)]);
        assert!((h - (gaussian_entropy(1.0) + 2f64.ln())).abs() < 1e-7);
    }

    #[test]
    fn agrees_with_fine_trapezoid_grid() {
        // Independent check: uniform trapezoid rule on a dense grid.
        let comps = [(0.5, 0.0, 0.0025), (0.5, 0.0, 1.9975)];
        let (a, b, n) = (-15.0, 15.0, 3_000_000);
        let step = (b - a) / n as f64;
        let f = |x: f64| {
            let p: f64 = comps
                .iter()
                .map(|&(w, m, v)| {
                    w * (-(x - m) * (x - m) / (2.0 * v)).exp() / (2.0 * PI * v).sqrt()
                })
                .sum();
            if p > 0.0 {
                -p * p.ln()
            } else {
                0.0
            }
        };
        let trap: f64 = (0..=n)
            .map(|i| {
                let w = if i == 0 || i == n { 0.5 } else { 1.0 };
                w * f(a + i as f64 * step)
            })
            .sum::<f64>()
            * step;
        let h = gaussian_mixture_entropy(&comps);
        assert!((h - trap).abs() < 1e-6, "{h} vs {trap}");
        assert!((h - 0.656_176_748).abs() < 1e-6);
    }
}
