//! Small fixed-size vector helpers for directions in R² and R³.

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    libm::sqrt(dot(a, a))
}

pub(crate) fn normalized(a: &[f64; 3]) -> [f64; 3] {
    let n = norm(a);
    [a[0] / n, a[1] / n, a[2] / n]
}

pub(crate) fn cross(a: &[f64; 3], b: &[f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub(crate) fn to3(a: &[f64]) -> [f64; 3] {
    let mut out = [0.0; 3];
    out[..a.len()].copy_from_slice(a);
    out
}

/// Any unit vector orthogonal to `a` (which must be nonzero).
pub(crate) fn orthogonal_unit(a: &[f64; 3]) -> [f64; 3] {
    let ax = [a[0].abs(), a[1].abs(), a[2].abs()];
    let e = if ax[0] <= ax[1] && ax[0] <= ax[2] {
        [1.0, 0.0, 0.0]
    } else if ax[1] <= ax[2] {
        [0.0, 1.0, 0.0]
    } else {
        [0.0, 0.0, 1.0]
    };
    normalized(&cross(a, &e))
}

