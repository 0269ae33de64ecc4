//! Piecewise cubic Hermite interpolation.

/// Locates `x` in the sorted `xs`, returning the left index of the bracketing
/// interval, or `None` outside `[xs[0], xs[n-1]]`.
pub fn locate(xs: &[f64], x: f64) -> Option<usize> {
    let n = xs.len();
    if n < 2 || !(x >= xs[0] && x <= xs[n - 1]) {
        return None;
    }
    let idx = xs.partition_point(|&v| v <= x);
    Some(idx.saturating_sub(1).min(n - 2))
}

/// Cubic Hermite value and derivative on `[x0, x1]` from end values and slopes.
pub fn hermite(x0: f64, x1: f64, y0: f64, y1: f64, d0: f64, d1: f64, x: f64) -> (f64, f64) {
    let h = x1 - x0;
    let t = (x - x0) / h;
    let t2 = t * t;
    let t3 = t2 * t;
    let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
    let h10 = t3 - 2.0 * t2 + t;
    let h01 = -2.0 * t3 + 3.0 * t2;
    let h11 = t3 - t2;
    let value = h00 * y0 + h10 * h * d0 + h01 * y1 + h11 * h * d1;
    let dh00 = (6.0 * t2 - 6.0 * t) / h;
    let dh10 = 3.0 * t2 - 4.0 * t + 1.0;
    let dh01 = (-6.0 * t2 + 6.0 * t) / h;
    let dh11 = 3.0 * t2 - 2.0 * t;
    let deriv = dh00 * y0 + dh10 * d0 + dh01 * y1 + dh11 * d1;
    (value, deriv)
}

/// Monotone piecewise cubic interpolant (Fritsch-Carlson slopes).
#[derive(Debug, Clone, PartialEq)]
pub struct MonotoneCubic {
    xs: Vec<f64>,
    ys: Vec<f64>,
    slopes: Vec<f64>,
}

impl MonotoneCubic {
    /// `xs` must be strictly increasing with at least two points.
    pub fn new(xs: Vec<f64>, ys: Vec<f64>) -> Self {
        assert!(xs.len() >= 2 && xs.len() == ys.len());
        let n = xs.len();
        let secants: Vec<f64> = (0..n - 1)
            .map(|i| (ys[i + 1] - ys[i]) / (xs[i + 1] - xs[i]))
            .collect();
        let mut slopes = vec![0.0; n];
        slopes[0] = secants[0];
        slopes[n - 1] = secants[n - 2];
        for i in 1..n - 1 {
            let (a, b) = (secants[i - 1], secants[i]);
            slopes[i] = if a * b <= 0.0 {
                0.0
            } else {
                // Weighted harmonic mean keeps the interpolant monotone.
                let h0 = xs[i] - xs[i - 1];
                let h1 = xs[i + 1] - xs[i];
                let w1 = 2.0 * h1 + h0;
                let w2 = h1 + 2.0 * h0;
                (w1 + w2) / (w1 / a + w2 / b)
            };
        }
        for i in 0..n - 1 {
            let s = secants[i];
            if s == 0.0 {
                slopes[i] = 0.0;
                slopes[i + 1] = 0.0;
                continue;
            }
            let alpha = slopes[i] / s;
            let beta = slopes[i + 1] / s;
            let r = alpha * alpha + beta * beta;
            if r > 9.0 {
                let tau = 3.0 / r.sqrt();
                slopes[i] = tau * alpha * s;
                slopes[i + 1] = tau * beta * s;
            }
        }
        Self { xs, ys, slopes }
    }

    pub fn xs(&self) -> &[f64] {
        &self.xs
    }

    pub fn eval(&self, x: f64) -> Option<f64> {
        let i = locate(&self.xs, x)?;
        Some(
            hermite(
                self.xs[i],
                self.xs[i + 1],
                self.ys[i],
                self.ys[i + 1],
                self.slopes[i],
                self.slopes[i + 1],
                x,
            )
            .0,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn reproduces_nodes_and_rejects_outside() {
        let f = MonotoneCubic::new(vec![0.0, 1.0, 3.0], vec![1.0, 2.0, 2.5]);
        assert_eq!(f.eval(0.0), Some(1.0));
        assert_eq!(f.eval(1.0), Some(2.0));
        assert_eq!(f.eval(3.0), Some(2.5));
        assert_eq!(f.eval(3.1), None);
        assert_eq!(f.eval(-0.1), None);
    }

    #[test]
    fn hermite_is_exact_on_cubics() {
        let p = |x: f64| x * x * x - 2.0 * x + 1.0;
        let dp = |x: f64| 3.0 * x * x - 2.0;
        let (v, d) = hermite(0.5, 2.0, p(0.5), p(2.0), dp(0.5), dp(2.0), 1.3);
        assert!((v - p(1.3)).abs() < 1e-13);
        assert!((d - dp(1.3)).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn monotone_data_gives_monotone_interpolant(
            steps in prop::collection::vec(0.0f64..1.0, 3..12),
            gaps in prop::collection::vec(0.1f64..2.0, 12),
        ) {
            let mut xs = vec![0.0];
            let mut ys = vec![0.0];
            for (i, s) in steps.iter().enumerate() {
                xs.push(xs[i] + gaps[i]);
                ys.push(ys[i] + s);
            }
            let last = *xs.last().unwrap();
            let f = MonotoneCubic::new(xs, ys);
            let mut prev = f64::NEG_INFINITY;
            for k in 0..=400 {
                let v = f.eval((last * k as f64 / 400.0).min(last)).unwrap();
                prop_assert!(v >= prev - 1e-12);
                prev = v;
            }
        }
    }
}
