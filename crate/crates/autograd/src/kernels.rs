//! Raw numeric kernels shared by the forward and backward passes.

/// Row/column strides of a strided matrix view.
#[derive(Debug, Clone, Copy)]
pub(crate) struct View {
    pub offset: usize,
    pub rs: isize,
    pub cs: isize,
}

impl View {
    pub fn row_major(cols: usize) -> Self {
        Self { offset: 0, rs: cols as isize, cs: 1 }
    }

    pub fn transposed(cols: usize) -> Self {
        Self { offset: 0, rs: 1, cs: cols as isize }
    }
}

/// `c ← alpha·a·b + beta·c` with `a: m×k`, `b: k×n`, `c: m×n`, all strided.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    av: View,
    b: &[f64],
    bv: View,
    beta: f64,
    c: &mut [f64],
    cv: View,
) {
    if m == 0 || n == 0 {
        return;
    }
    debug_assert!(extent(m, k, av) <= a.len());
    debug_assert!(extent(k, n, bv) <= b.len());
    debug_assert!(extent(m, n, cv) <= c.len());
    // SAFETY: the debug assertions above bound every strided access; callers
    // construct views from the shapes of the slices passed in.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr().add(av.offset),
            av.rs,
            av.cs,
            b.as_ptr().add(bv.offset),
            bv.rs,
            bv.cs,
            beta,
            c.as_mut_ptr().add(cv.offset),
            cv.rs,
            cv.cs,
        );
    }
}

fn extent(rows: usize, cols: usize, v: View) -> usize {
    if rows == 0 || cols == 0 {
        return 0;
    }
    v.offset + (rows - 1) * v.rs as usize + (cols - 1) * v.cs as usize + 1
}

/// Geometry of a 1-D convolution.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvDims {
    pub c_in: usize,
    pub c_out: usize,
    pub len: usize,
    pub k: usize,
    pub padding: usize,
    pub stride: usize,
}

impl ConvDims {
    pub fn padded_len(&self) -> usize {
        self.len + 2 * self.padding
    }

    pub fn out_len(&self) -> usize {
        (self.padded_len() - self.k) / self.stride + 1
    }

    fn kernel_view(&self, tap: usize) -> View {
        View {
            offset: tap,
            rs: (self.c_in * self.k) as isize,
            cs: self.k as isize,
        }
    }

    fn input_view(&self, tap: usize) -> View {
        View {
            offset: tap,
            rs: self.padded_len() as isize,
            cs: self.stride as isize,
        }
    }
}

pub(crate) fn pad(input: &[f64], d: &ConvDims) -> Vec<f64> {
    let lp = d.padded_len();
    let mut out = vec![0.0; d.c_in * lp];
    for ci in 0..d.c_in {
        out[ci * lp + d.padding..ci * lp + d.padding + d.len]
            .copy_from_slice(&input[ci * d.len..(ci + 1) * d.len]);
    }
    out
}

pub(crate) fn conv1d_forward(padded: &[f64], kernels: &[f64], bias: &[f64], d: &ConvDims) -> Vec<f64> {
    let lo = d.out_len();
    let mut out = vec![0.0; d.c_out * lo];
    for (co, row) in out.chunks_mut(lo).enumerate() {
        row.fill(bias[co]);
    }
    for tap in 0..d.k {
        gemm(
            d.c_out,
            d.c_in,
            lo,
            1.0,
            kernels,
            d.kernel_view(tap),
            padded,
            d.input_view(tap),
            1.0,
            &mut out,
            View::row_major(lo),
        );
    }
    out
}

/// Returns `(d_input, d_kernels, d_bias)`.
pub(crate) fn conv1d_backward(
    padded: &[f64],
    kernels: &[f64],
    grad_out: &[f64],
    d: &ConvDims,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let lo = d.out_len();
    let lp = d.padded_len();
    let mut d_kernels = vec![0.0; d.c_out * d.c_in * d.k];
    let mut d_padded = vec![0.0; d.c_in * lp];
    for tap in 0..d.k {
        // dW_tap = dOut · X_tapᵀ
        let xt = View {
            offset: tap,
            rs: d.stride as isize,
            cs: lp as isize,
        };
        gemm(
            d.c_out,
            lo,
            d.c_in,
            1.0,
            grad_out,
            View::row_major(lo),
            padded,
            xt,
            1.0,
            &mut d_kernels,
            d.kernel_view(tap),
        );
        // dX_tap += W_tapᵀ · dOut
        let wt = View {
            offset: tap,
            rs: d.k as isize,
            cs: (d.c_in * d.k) as isize,
        };
        gemm(
            d.c_in,
            d.c_out,
            lo,
            1.0,
            kernels,
            wt,
            grad_out,
            View::row_major(lo),
            1.0,
            &mut d_padded,
            d.input_view(tap),
        );
    }
    let mut d_input = vec![0.0; d.c_in * d.len];
    for ci in 0..d.c_in {
        d_input[ci * d.len..(ci + 1) * d.len]
            .copy_from_slice(&d_padded[ci * lp + d.padding..ci * lp + d.padding + d.len]);
    }
    let d_bias = grad_out.chunks(lo).map(|row| row.iter().sum()).collect();
    (d_input, d_kernels, d_bias)
}
