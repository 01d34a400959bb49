//! Real roots of low-degree polynomials.
//!
//! Roots are isolated recursively: the critical points of `p` (real roots of
//! `p'`) split the line into intervals on which `p` is monotone, and each
//! sign change is refined by bisection followed by a Newton polish.

/// Evaluate `sum coeffs[i] * x^i`.
pub fn eval(coeffs: &[f64], x: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, &c| acc * x + c)
}

fn derivative(coeffs: &[f64]) -> Vec<f64> {
    coeffs
        .iter()
        .enumerate()
        .skip(1)
        .map(|(i, &c)| c * i as f64)
        .collect()
}

fn trim(coeffs: &[f64]) -> &[f64] {
    let mut n = coeffs.len();
    while n > 0 && coeffs[n - 1] == 0.0 {
        n -= 1;
    }
    &coeffs[..n]
}

/// All distinct real roots of the polynomial with ascending coefficients,
/// sorted increasingly. The zero polynomial yields no roots.
pub fn real_roots(coeffs: &[f64]) -> Vec<f64> {
    let c = trim(coeffs);
    match c.len() {
        0 | 1 => Vec::new(),
        2 => vec![-c[0] / c[1]],
        _ => {
            let lead = c[c.len() - 1];
            // Cauchy bound on root magnitude.
            let bound = 1.0
                + c[..c.len() - 1]
                    .iter()
                    .map(|&a| (a / lead).abs())
                    .fold(0.0, f64::max);
            let mut knots = vec![-bound];
            knots.extend(
                real_roots(&derivative(c))
                    .into_iter()
                    .filter(|r| r.abs() < bound),
            );
            knots.push(bound);

            let mut roots: Vec<f64> = Vec::new();
            for w in knots.windows(2) {
                let (lo, hi) = (w[0], w[1]);
                let (flo, fhi) = (eval(c, lo), eval(c, hi));
                let root = if flo == 0.0 {
                    Some(lo)
                } else if fhi == 0.0 {
                    Some(hi)
                } else if flo.signum() != fhi.signum() {
                    Some(refine(c, lo, hi, flo))
                } else {
                    None
                };
                if let Some(r) = root {
                    if roots.last().is_none_or(|&last| (r - last).abs() > 1e-14 * (1.0 + r.abs())) {
                        roots.push(r);
                    }
                }
            }
            // Double roots at critical points are touched but never crossed.
            for w in knots.iter().skip(1).take(knots.len().saturating_sub(2)) {
                let f = eval(c, *w);
                let scale = c.iter().map(|a| a.abs()).sum::<f64>() * (1.0 + w.abs()).powi(c.len() as i32);
                if f.abs() <= 1e-13 * scale && !roots.iter().any(|r| (r - w).abs() < 1e-9 * (1.0 + w.abs())) {
                    roots.push(*w);
                }
            }
            roots.sort_by(|a, b| a.total_cmp(b));
            roots
        }
    }
}

fn refine(c: &[f64], mut lo: f64, mut hi: f64, flo: f64) -> f64 {
    let neg_lo = flo < 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let fm = eval(c, mid);
        if fm == 0.0 {
            return mid;
        }
        if (fm < 0.0) == neg_lo {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mut x = 0.5 * (lo + hi);
    let dc = derivative(c);
    for _ in 0..3 {
        let d = eval(&dc, x);
        if d == 0.0 {
            break;
        }
        let next = x - eval(c, x) / d;
        if next < lo || next > hi {
            break;
        }
        x = next;
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_roots() {
        // (x - 1)(x + 2) = x^2 + x - 2
        let r = real_roots(&[-2.0, 1.0, 1.0]);
        assert_eq!(r.len(), 2);
        assert!((r[0] + 2.0).abs() < 1e-12);
        assert!((r[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn quartic_four_roots() {
        // (x-1)(x+1)(x-3)(x+0.5) expanded
        let roots = [1.0, -1.0, 3.0, -0.5];
        let mut c = vec![1.0];
        for &r in &roots {
            let mut next = vec![0.0; c.len() + 1];
            for (i, &a) in c.iter().enumerate() {
                next[i] -= r * a;
                next[i + 1] += a;
            }
            c = next;
        }
        let found = real_roots(&c);
        assert_eq!(found.len(), 4);
        let mut expect = roots.to_vec();
        expect.sort_by(|a, b| a.total_cmp(b));
        for (f, e) in found.iter().zip(expect) {
            assert!((f - e).abs() < 1e-10, "{f} vs {e}");
        }
    }

    #[test]
    fn no_real_roots() {
        assert!(real_roots(&[1.0, 0.0, 1.0]).is_empty());
        assert!(real_roots(&[0.0, 0.0]).is_empty());
    }

    #[test]
    fn double_root_is_reported() {
        // (x - 2)^2
        let r = real_roots(&[4.0, -4.0, 1.0]);
        assert_eq!(r.len(), 1);
        assert!((r[0] - 2.0).abs() < 1e-6);
    }
}
