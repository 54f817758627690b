//! Raw numeric kernels shared by several primitives.

/// `c = a · b + beta · c` for row-major `a: [m, k]`, `b: [k, n]`, with
/// optional transposition of either operand as stored.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    beta: f64,
    c: &mut [f64],
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c.iter_mut().for_each(|v| *v *= beta);
        return;
    }
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: slice lengths are checked above; strides describe the
    // row-major layouts of those slices exactly.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Bilinear tap on an `h × w` grid addressed with normalized coordinates.
///
/// Cell centres sit at `(j + 0.5) / w`; coordinates outside the grid clamp to
/// the border, where the positional derivative is zero.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Tap {
    pub idx: [usize; 4],
    pub wts: [f64; 4],
    /// d(weights)/dx and d(weights)/dy in normalized units.
    pub dwx: [f64; 4],
    pub dwy: [f64; 4],
}

fn axis(coord: f64, size: usize) -> (usize, usize, f64, f64) {
    let u = coord * size as f64 - 0.5;
    let hi = (size - 1) as f64;
    if size == 1 {
        return (0, 0, 0.0, 0.0);
    }
    let (u, du) = if u <= 0.0 {
        (0.0, 0.0)
    } else if u >= hi {
        (hi, 0.0)
    } else {
        (u, size as f64)
    };
    let i0 = (u.floor() as usize).min(size - 2);
    (i0, i0 + 1, u - i0 as f64, du)
}

impl Tap {
    pub fn new(x: f64, y: f64, h: usize, w: usize) -> Self {
        let (x0, x1, fx, dux) = axis(x, w);
        let (y0, y1, fy, duy) = axis(y, h);
        let idx = [y0 * w + x0, y0 * w + x1, y1 * w + x0, y1 * w + x1];
        let wts = [
            (1.0 - fx) * (1.0 - fy),
            fx * (1.0 - fy),
            (1.0 - fx) * fy,
            fx * fy,
        ];
        let dwx = [
            -(1.0 - fy) * dux,
            (1.0 - fy) * dux,
            -fy * dux,
            fy * dux,
        ];
        let dwy = [
            -(1.0 - fx) * duy,
            -fx * duy,
            (1.0 - fx) * duy,
            fx * duy,
        ];
        Self { idx, wts, dwx, dwy }
    }
}
