//! Adaptive Gauss–Kronrod (7/15) quadrature.
//!
//! Used as an independent numerical oracle: normalisation checks of the
//! importance-weight densities and exact expectations under Gaussians.

/// Nodes of the 15-point Kronrod rule on [-1, 1] (non-negative half).
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

/// Gauss weights for the embedded 7-point rule (odd Kronrod nodes).
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

const MAX_DEPTH: usize = 60;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Integral {
    pub value: f64,
    pub error: f64,
}

fn kronrod<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut kron = WGK[7] * fc;
    let mut gauss = WG[3] * fc;
    for j in 0..7 {
        let dx = half * XGK[j];
        let pair = f(center - dx) + f(center + dx);
        kron += WGK[j] * pair;
        if j % 2 == 1 {
            gauss += WG[j / 2] * pair;
        }
    }
    (kron * half, ((kron - gauss) * half).abs())
}

fn adapt<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64, depth: usize) -> Integral {
    let (value, error) = kronrod(f, a, b);
    if error <= tol || depth >= MAX_DEPTH || (b - a).abs() < 1e-14 * (1.0 + a.abs()) {
        return Integral { value, error };
    }
    let mid = 0.5 * (a + b);
    let left = adapt(f, a, mid, 0.5 * tol, depth + 1);
    let right = adapt(f, mid, b, 0.5 * tol, depth + 1);
    Integral {
        value: left.value + right.value,
        error: left.error + right.error,
    }
}

/// Integrates `f` over the finite interval `[a, b]` to absolute tolerance `abs_tol`.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, abs_tol: f64) -> Integral {
    if a == b {
        return Integral { value: 0.0, error: 0.0 };
    }
    adapt(&f, a, b, abs_tol, 0)
}

/// Integrates `f` over `[a, +inf)`, truncating the domain once the integrand
/// has fallen below `cutoff` and stays there for a doubling of the range.
pub fn integrate_to_infinity<F: Fn(f64) -> f64>(f: F, a: f64, abs_tol: f64, cutoff: f64) -> Integral {
    let mut width = 1.0;
    loop {
        let b = a + width;
        if (f(b).abs() < cutoff && f(a + 2.0 * width).abs() < cutoff) || width > 1e12 {
            return integrate(f, a, b, abs_tol);
        }
        width *= 2.0;
    }
}

/// Integrates `f` over the whole real line, truncating both tails at `cutoff`.
pub fn integrate_real_line<F: Fn(f64) -> f64>(f: F, center: f64, abs_tol: f64, cutoff: f64) -> Integral {
    let right = integrate_to_infinity(&f, center, 0.5 * abs_tol, cutoff);
    let left = integrate_to_infinity(|u| f(2.0 * center - u), center, 0.5 * abs_tol, cutoff);
    Integral {
        value: left.value + right.value,
        error: left.error + right.error,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn polynomial_is_exact() {
        let r = integrate(|x| 3.0 * x * x, 0.0, 2.0, 1e-12);
        assert!((r.value - 8.0).abs() < 1e-12);
    }

    #[test]
    fn gaussian_over_real_line() {
        let r = integrate_real_line(|x| (-0.5 * x * x).exp(), 0.0, 1e-10, 1e-14);
        assert!((r.value - (2.0 * PI).sqrt()).abs() < 1e-9);
    }

    #[test]
    fn exponential_tail() {
        let r = integrate_to_infinity(|x| (-x).exp(), 0.0, 1e-10, 1e-14);
        assert!((r.value - 1.0).abs() < 1e-9);
    }
}
