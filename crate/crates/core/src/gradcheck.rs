//! Central finite differences, used to validate hand-derived gradients.

/// `(f(x + h·eᵢ) − f(x − h·eᵢ)) / 2h`.
pub fn central_difference<F>(mut f: F, x: &[f64], i: usize, h: f64) -> f64
where
    F: FnMut(&[f64]) -> f64,
{
    let mut p = x.to_vec();
    p[i] = x[i] + h;
    let up = f(&p);
    p[i] = x[i] - h;
    let down = f(&p);
    (up - down) / (2.0 * h)
}

/// `|a − b| / max(|a|, |b|)`, or 0 when both magnitudes are below `floor`.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale < floor {
        0.0
    } else {
        (a - b).abs() / scale
    }
}
