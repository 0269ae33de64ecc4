//! Globally adaptive Gauss-Kronrod (7/15) quadrature on a finite interval.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];

const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];

const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

/// Tolerance settings for adaptive quadrature.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadratureConfig {
    pub rel_tol: f64,
    pub max_subdivisions: usize,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        Self {
            rel_tol: 1e-10,
            max_subdivisions: 2000,
        }
    }
}

impl QuadratureConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rel_tol > 0.0) || self.max_subdivisions == 0 {
            return Err(Error::InvalidParameter(format!(
                "quadrature needs rel_tol > 0 and at least one subdivision, got {:?}",
                self
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Estimate {
    pub value: f64,
    pub abs_error: f64,
    pub subdivisions: usize,
}

/// Applies the 15-point Kronrod rule to each of `N` integrands sharing the
/// same abscissae. Returns Kronrod values and Gauss-Kronrod differences.
fn kronrod<const N: usize>(
    f: &mut impl FnMut(f64) -> [f64; N],
    a: f64,
    b: f64,
) -> ([f64; N], [f64; N]) {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut k = [0.0; N];
    let mut g = [0.0; N];
    for j in 0..N {
        k[j] = fc[j] * WGK[7];
        g[j] = fc[j] * WG[3];
    }
    for i in 0..7 {
        let dx = half * XGK[i];
        let f1 = f(center - dx);
        let f2 = f(center + dx);
        for j in 0..N {
            let s = f1[j] + f2[j];
            k[j] += WGK[i] * s;
            if i % 2 == 1 {
                g[j] += WG[i / 2] * s;
            }
        }
    }
    let mut diff = [0.0; N];
    for j in 0..N {
        k[j] *= half;
        diff[j] = (k[j] - g[j] * half).abs();
    }
    (k, diff)
}

struct Segment<const N: usize> {
    a: f64,
    b: f64,
    value: [f64; N],
    err: [f64; N],
    /// Largest relative error contribution across components.
    priority: f64,
}

impl<const N: usize> PartialEq for Segment<N> {
    fn eq(&self, other: &Self) -> bool {
        self.priority == other.priority
    }
}
impl<const N: usize> Eq for Segment<N> {}
impl<const N: usize> PartialOrd for Segment<N> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl<const N: usize> Ord for Segment<N> {
    fn cmp(&self, other: &Self) -> Ordering {
        self.priority
            .total_cmp(&other.priority)
            // Earlier (left) segments first on ties so the refinement order is fixed.
            .then_with(|| other.a.total_cmp(&self.a))
    }
}

/// Integrates a vector of integrands over `[a, b]`, refining the segment with
/// the largest error until each component meets `rel_tol` relative to its
/// own total.
pub fn integrate_vec<const N: usize>(
    mut f: impl FnMut(f64) -> [f64; N],
    a: f64,
    b: f64,
    cfg: &QuadratureConfig,
) -> Result<[Estimate; N]> {
    cfg.validate()?;
    let scale = |v: &[f64; N]| -> [f64; N] { std::array::from_fn(|j| v[j].abs().max(1e-300)) };
    let make = |a: f64, b: f64, value: [f64; N], err: [f64; N], total: &[f64; N]| {
        let priority = (0..N)
            .map(|j| err[j] / total[j])
            .fold(0.0_f64, f64::max);
        Segment {
            a,
            b,
            value,
            err,
            priority,
        }
    };
    let (v0, e0) = kronrod(&mut f, a, b);
    let mut total = v0;
    let mut total_err = e0;
    let mut heap = BinaryHeap::new();
    heap.push(make(a, b, v0, e0, &scale(&v0)));
    let mut subdivisions = 1;
    loop {
        let s = scale(&total);
        let done = (0..N).all(|j| total_err[j] <= cfg.rel_tol * s[j] || total_err[j] < 1e-300);
        if done {
            break;
        }
        if subdivisions >= cfg.max_subdivisions {
            return Err(Error::NonConvergence(format!(
                "quadrature on [{a}, {b}] reached {subdivisions} subdivisions with error {:?} for value {:?}",
                total_err, total
            )));
        }
        let seg = heap.pop().expect("heap holds at least one segment");
        let mid = 0.5 * (seg.a + seg.b);
        let (vl, el) = kronrod(&mut f, seg.a, mid);
        let (vr, er) = kronrod(&mut f, mid, seg.b);
        for j in 0..N {
            total[j] += vl[j] + vr[j] - seg.value[j];
            total_err[j] += el[j] + er[j] - seg.err[j];
        }
        let s = scale(&total);
        heap.push(make(seg.a, mid, vl, el, &s));
        heap.push(make(mid, seg.b, vr, er, &s));
        subdivisions += 1;
    }
    // Re-sum from the segments to shed the drift of incremental updates.
    let mut segs: Vec<Segment<N>> = heap.into_vec();
    segs.sort_by(|x, y| x.a.total_cmp(&y.a));
    let mut value = [0.0; N];
    let mut err = [0.0; N];
    for seg in &segs {
        for j in 0..N {
            value[j] += seg.value[j];
            err[j] += seg.err[j];
        }
    }
    Ok(std::array::from_fn(|j| Estimate {
        value: value[j],
        abs_error: err[j],
        subdivisions,
    }))
}

pub fn integrate(
    mut f: impl FnMut(f64) -> f64,
    a: f64,
    b: f64,
    cfg: &QuadratureConfig,
) -> Result<Estimate> {
    let [e] = integrate_vec(|x| [f(x)], a, b, cfg)?;
    Ok(e)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomials_are_exact() {
        let cfg = QuadratureConfig::default();
        let e = integrate(|x| x.powi(6) - 3.0 * x * x + 1.0, -1.0, 2.0, &cfg).unwrap();
        let exact = (128.0 + 1.0) / 7.0 - (8.0 + 1.0) + 3.0;
        assert!((e.value - exact).abs() < 1e-13);
        assert_eq!(e.subdivisions, 1);
    }

    #[test]
    fn endpoint_singularity() {
        let cfg = QuadratureConfig::default();
        let e = integrate(|x| x.powf(-0.5), 0.0, 1.0, &cfg).unwrap();
        assert!((e.value - 2.0).abs() < 1e-9, "{}", e.value);
    }

    #[test]
    fn vector_components_share_nodes() {
        let cfg = QuadratureConfig::default();
        let [s, c] = integrate_vec(|x| [x.sin(), x.cos()], 0.0, 3.0, &cfg).unwrap();
        assert!((s.value - (1.0 - 3f64.cos())).abs() < 1e-12);
        assert!((c.value - 3f64.sin()).abs() < 1e-12);
    }

    #[test]
    fn budget_exhaustion_is_an_error() {
        let cfg = QuadratureConfig {
            rel_tol: 1e-14,
            max_subdivisions: 3,
        };
        assert!(matches!(
            integrate(|x| (50.0 * x).sin().abs(), 0.0, 1.0, &cfg),
            Err(Error::NonConvergence(_))
        ));
    }

    #[test]
    fn deterministic() {
        let cfg = QuadratureConfig::default();
        let f = |x: f64| (-(x - 0.3).powi(2) * 400.0).exp();
        let a = integrate(f, 0.0, 1.0, &cfg).unwrap().value;
        let b = integrate(f, 0.0, 1.0, &cfg).unwrap().value;
        assert_eq!(a.to_bits(), b.to_bits());
    }
}
