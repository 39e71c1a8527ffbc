//! Energy grids and composite quadrature over tabulated values.

/// `n` nodes spaced geometrically on `[lo, hi]`, both endpoints included exactly.
pub fn geometric(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    assert!(n >= 2 && lo > 0.0 && hi > lo, "invalid geometric grid");
    let (l0, l1) = (lo.ln(), hi.ln());
    let step = (l1 - l0) / (n - 1) as f64;
    let mut out: Vec<f64> = (0..n).map(|i| (l0 + step * i as f64).exp()).collect();
    out[0] = lo;
    out[n - 1] = hi;
    out
}

/// Composite Simpson rule for irregularly spaced samples of `f` at `xs`.
/// With an odd number of intervals the last three are integrated by the
/// cubic through their four nodes.
pub fn simpson(xs: &[f64], fs: &[f64]) -> f64 {
    let n = xs.len();
    assert_eq!(n, fs.len());
    if n < 2 {
        return 0.0;
    }
    if n == 2 {
        return 0.5 * (xs[1] - xs[0]) * (fs[0] + fs[1]);
    }
    let intervals = n - 1;
    if intervals % 2 == 1 {
        let k = n - 4;
        return simpson_even(&xs[..=k], &fs[..=k]) + cubic_panel(&xs[k..], &fs[k..]);
    }
    simpson_even(xs, fs)
}

fn simpson_even(xs: &[f64], fs: &[f64]) -> f64 {
    let mut total = 0.0;
    for i in 0..(xs.len() - 1) / 2 {
        let (h0, h1) = (xs[2 * i + 1] - xs[2 * i], xs[2 * i + 2] - xs[2 * i + 1]);
        let hph = h0 + h1;
        let hdh = h1 / h0;
        let hmh = h1 * h0;
        total += hph / 6.0
            * ((2.0 - hdh) * fs[2 * i] + hph * hph / hmh * fs[2 * i + 1] + (2.0 - 1.0 / hdh) * fs[2 * i + 2]);
    }
    total
}

/// Integral over `[x0, x3]` of the Lagrange cubic through four nodes, by
/// two-point Gauss-Legendre (exact for cubics).
fn cubic_panel(xs: &[f64], fs: &[f64]) -> f64 {
    let lagrange = |x: f64| -> f64 {
        (0..4)
            .map(|i| {
                let mut l = fs[i];
                for j in 0..4 {
                    if j != i {
                        l *= (x - xs[j]) / (xs[i] - xs[j]);
                    }
                }
                l
            })
            .sum()
    };
    let half = 0.5 * (xs[3] - xs[0]);
    let mid = 0.5 * (xs[3] + xs[0]);
    let off = half / 3f64.sqrt();
    half * (lagrange(mid - off) + lagrange(mid + off))
}

/// `∫ f(ε) dε` over a positive grid, integrating `f(e^t)·e^t` in `t = ln ε`.
/// On a geometric grid this is the uniform-step Simpson rule in `t`.
pub fn simpson_log(energies: &[f64], fs: &[f64]) -> f64 {
    let ts: Vec<f64> = energies.iter().map(|e| e.ln()).collect();
    let gs: Vec<f64> = energies.iter().zip(fs).map(|(e, f)| e * f).collect();
    simpson(&ts, &gs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn geometric_endpoints_exact() {
        let g = geometric(1e-3, 50.0, 7);
        assert_eq!(g[0], 1e-3);
        assert_eq!(g[6], 50.0);
        let r = g[1] / g[0];
        for w in g.windows(2) {
            assert!((w[1] / w[0] - r).abs() < 1e-12);
        }
    }

    #[test]
    fn simpson_exact_for_quadratics_even_and_odd_counts() {
        for n in [5usize, 6, 9, 10] {
            let xs: Vec<f64> = (0..n).map(|i| (i as f64).powf(1.3) * 0.3).collect();
            let fs: Vec<f64> = xs.iter().map(|x| 3.0 * x * x - x + 2.0).collect();
            let b = xs[n - 1];
            let exact = b.powi(3) - b * b / 2.0 + 2.0 * b;
            assert!((simpson(&xs, &fs) - exact).abs() < 1e-11 * exact.abs(), "n = {n}");
        }
    }

    #[test]
    fn odd_interval_count_keeps_fourth_order() {
        let xs: Vec<f64> = (0..2048).map(|i| i as f64 * 30.0 / 2047.0).collect();
        let fs: Vec<f64> = xs.iter().map(|x| (2.0 * (x - 30.0)).exp()).collect();
        let exact = 0.5 * (1.0 - (-60f64).exp());
        assert!((simpson(&xs, &fs) / exact - 1.0).abs() < 5e-9);
    }

    #[test]
    fn simpson_log_of_exponential() {
        let xs = geometric(1e-9, 60.0, 2048);
        let fs: Vec<f64> = xs.iter().map(|x| (-x).exp()).collect();
        let v = simpson_log(&xs, &fs);
        let exact = (-1e-9f64).exp() - (-60f64).exp();
        assert!((v - exact).abs() < 1e-10, "{v}");
    }
}
