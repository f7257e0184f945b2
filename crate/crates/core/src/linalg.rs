//! Slice-level vector helpers shared by the hot loops.

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm_sq(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum()
}

#[inline]
pub fn dist_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// `out = m * x` for a row-major `d x d` matrix.
#[inline]
pub fn matvec(m: &[f64], x: &[f64], out: &mut [f64]) {
    let d = x.len();
    for (r, o) in out.iter_mut().enumerate() {
        *o = dot(&m[r * d..(r + 1) * d], x);
    }
}

/// Row mean of an `n x d` row-major block.
pub fn row_mean(rows: &[f64], d: usize, out: &mut [f64]) {
    let n = rows.len() / d;
    out.iter_mut().for_each(|o| *o = 0.0);
    for row in rows.chunks_exact(d) {
        for (o, v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
    let inv = 1.0 / n as f64;
    out.iter_mut().for_each(|o| *o *= inv);
}
