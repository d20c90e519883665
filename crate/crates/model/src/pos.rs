//! Fixed sinusoidal position codes.

use reasontrack_nn::Mat;

/// `[n, dim]` table; even columns carry sines, odd columns cosines.
pub fn sinusoid_1d(n: usize, dim: usize) -> Mat {
    Mat::from_fn(n, dim, |p, c| {
        let freq = 1.0 / 10_000f64.powf((2 * (c / 2)) as f64 / dim as f64);
        let a = p as f64 * freq;
        if c % 2 == 0 {
            a.sin()
        } else {
            a.cos()
        }
    })
}

/// `[rows * cols, dim]` table for a grid in row-major order: the first half
/// of the columns encodes the row index, the second half the column index.
pub fn sinusoid_2d(rows: usize, cols: usize, dim: usize) -> Mat {
    let half = dim / 2;
    let ry = sinusoid_1d(rows, half);
    let rx = sinusoid_1d(cols, dim - half);
    Mat::from_fn(rows * cols, dim, |i, c| {
        let (y, x) = (i / cols, i % cols);
        if c < half {
            ry.get(y, c)
        } else {
            rx.get(x, c - half)
        }
    })
}
