//! Dense FP32 tensors and the three primitive transforms every layer is
//! lowered to: im2col, GEMM and coefficient flipping.
//!
//! Layout is channel-major (CHW): for a rank-3 tensor, element `(c, y, x)`
//! lives at `c*H*W + y*W + x`. A rank-2 tensor is a row-major matrix. The
//! GEMM reduction order over `k` is fixed ascending, so results are
//! bit-reproducible across tilings and worker counts.

use crate::error::{Error, Result};

/// Dense FP32 n-dimensional array, channel outermost.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    dims: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        if dims.contains(&0) {
            return Err(Error::Shape(format!("zero extent in dims {dims:?}")));
        }
        let n: usize = dims.iter().product();
        if n != data.len() {
            return Err(Error::Shape(format!(
                "dims {:?} imply {} elements, buffer holds {}",
                dims,
                n,
                data.len()
            )));
        }
        Ok(Tensor { dims, data })
    }

    pub fn zeros(dims: Vec<usize>) -> Self {
        let n: usize = dims.iter().product();
        Tensor {
            dims,
            data: vec![0.0; n],
        }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn rank(&self) -> usize {
        self.dims.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    /// Reinterpret the buffer under new dims; the element count must match.
    pub fn reshape(mut self, dims: Vec<usize>) -> Result<Self> {
        let n: usize = dims.iter().product();
        if n != self.data.len() {
            return Err(Error::Shape(format!(
                "cannot reshape {} elements to {dims:?}",
                self.data.len()
            )));
        }
        self.dims = dims;
        Ok(self)
    }

    /// Number of rows of a rank-2 tensor.
    pub fn rows(&self) -> Result<usize> {
        self.require_rank(2)?;
        Ok(self.dims[0])
    }

    /// Number of columns of a rank-2 tensor.
    pub fn cols(&self) -> Result<usize> {
        self.require_rank(2)?;
        Ok(self.dims[1])
    }

    pub fn require_rank(&self, r: usize) -> Result<()> {
        if self.rank() != r {
            return Err(Error::Shape(format!(
                "expected rank {r}, got dims {:?}",
                self.dims
            )));
        }
        Ok(())
    }

    pub fn require_dims(&self, dims: &[usize]) -> Result<()> {
        if self.dims != dims {
            return Err(Error::Shape(format!(
                "expected dims {dims:?}, got {:?}",
                self.dims
            )));
        }
        Ok(())
    }

    /// Copy of rows `[r0, r1)` of a rank-2 tensor. Models a DMA transfer of
    /// a coefficient tile into local memory.
    pub fn rows_slice(&self, r0: usize, r1: usize) -> Result<Tensor> {
        let (m, n) = (self.rows()?, self.cols()?);
        if r0 >= r1 || r1 > m {
            return Err(Error::Shape(format!(
                "row slice {r0}..{r1} out of bounds for {m}x{n}"
            )));
        }
        Ok(Tensor {
            dims: vec![r1 - r0, n],
            data: self.data[r0 * n..r1 * n].to_vec(),
        })
    }
}

/// Convolution geometry: channel counts, kernel extents, stride, padding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub c_in: usize,
    pub c_out: usize,
    pub k_h: usize,
    pub k_w: usize,
    pub stride: usize,
    pub padding: usize,
    pub depthwise: bool,
}

impl ConvGeometry {
    pub fn new(
        c_in: usize,
        c_out: usize,
        k_h: usize,
        k_w: usize,
        stride: usize,
        padding: usize,
        depthwise: bool,
    ) -> Result<Self> {
        if stride < 1 {
            return Err(Error::Geometry("stride must be >= 1".into()));
        }
        if c_in == 0 || c_out == 0 || k_h == 0 || k_w == 0 {
            return Err(Error::Geometry("zero channel or kernel extent".into()));
        }
        if depthwise && c_in != c_out {
            return Err(Error::Geometry(format!(
                "depthwise requires c_out == c_in, got {c_in} -> {c_out}"
            )));
        }
        Ok(ConvGeometry {
            c_in,
            c_out,
            k_h,
            k_w,
            stride,
            padding,
            depthwise,
        })
    }

    /// Output spatial extent for an input extent, floor division
    /// (`out = (in + 2p - k) / s + 1`, partial trailing windows dropped).
    pub fn out_extent(&self, input: usize, kernel: usize) -> Result<usize> {
        let padded = input + 2 * self.padding;
        if padded < kernel {
            return Err(Error::Geometry(format!(
                "kernel {kernel} exceeds padded input {padded}"
            )));
        }
        Ok((padded - kernel) / self.stride + 1)
    }

    pub fn out_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        Ok((self.out_extent(h, self.k_h)?, self.out_extent(w, self.k_w)?))
    }
}

/// `out[m][n] = sum_k a[m][k] * b[k][n]`, k ascending.
///
/// When `accumulate_into` is given, it must be M x N and the products are
/// added on top of its prior values.
pub fn gemm(a: &Tensor, b: &Tensor, accumulate_into: Option<Tensor>) -> Result<Tensor> {
    let (m, ka) = (a.rows()?, a.cols()?);
    let (kb, n) = (b.rows()?, b.cols()?);
    if ka != kb {
        return Err(Error::Shape(format!(
            "gemm inner extents disagree: {m}x{ka} . {kb}x{n}"
        )));
    }
    let mut out = match accumulate_into {
        Some(t) => {
            t.require_dims(&[m, n])?;
            t
        }
        None => Tensor::zeros(vec![m, n]),
    };
    gemm_into(a.data(), b.data(), out.data_mut(), 0, m, ka, n);
    Ok(out)
}

/// Inner kernel: rows `[r0, r1)` of the output. Each output element is the
/// ascending-k dot product, accumulated on top of the existing value.
fn gemm_into(a: &[f32], b: &[f32], out: &mut [f32], r0: usize, r1: usize, k: usize, n: usize) {
    for i in r0..r1 {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let mut acc = out[i * n + j];
            for (kk, &av) in arow.iter().enumerate() {
                acc += av * b[kk * n + j];
            }
            out[i * n + j] = acc;
        }
    }
}

/// GEMM with output rows partitioned over `workers` threads.
///
/// Each output element is written by exactly one worker and keeps the
/// ascending-k reduction, so the result is bit-identical to [`gemm`] for any
/// worker count.
pub fn gemm_parallel(a: &Tensor, b: &Tensor, workers: usize) -> Result<Tensor> {
    let (m, ka) = (a.rows()?, a.cols()?);
    let (kb, n) = (b.rows()?, b.cols()?);
    if ka != kb {
        return Err(Error::Shape(format!(
            "gemm inner extents disagree: {m}x{ka} . {kb}x{n}"
        )));
    }
    let workers = workers.max(1).min(m.max(1));
    let mut out = Tensor::zeros(vec![m, n]);
    if workers == 1 {
        gemm_into(a.data(), b.data(), out.data_mut(), 0, m, ka, n);
        return Ok(out);
    }
    let chunk = m.div_ceil(workers);
    let adata = a.data();
    let bdata = b.data();
    std::thread::scope(|s| {
        let mut rest = out.data_mut();
        let mut row = 0;
        while row < m {
            let hi = (row + chunk).min(m);
            let (mine, tail) = rest.split_at_mut((hi - row) * n);
            rest = tail;
            let r0 = row;
            s.spawn(move || {
                for i in r0..hi {
                    let arow = &adata[i * ka..(i + 1) * ka];
                    for j in 0..n {
                        let mut acc = 0.0f32;
                        for (kk, &av) in arow.iter().enumerate() {
                            acc += av * bdata[kk * n + j];
                        }
                        mine[(i - r0) * n + j] = acc;
                    }
                }
            });
            row = hi;
        }
    });
    Ok(out)
}

/// `out[m][n] = sum_k a[m][k] * b[n][k]` — GEMM with B transposed in place,
/// k ascending. Used by the gradient kernel (`err . im2col^T`).
pub fn gemm_bt(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, ka) = (a.rows()?, a.cols()?);
    let (n, kb) = (b.rows()?, b.cols()?);
    if ka != kb {
        return Err(Error::Shape(format!(
            "gemm_bt inner extents disagree: {m}x{ka} . ({n}x{kb})^T"
        )));
    }
    let mut out = Tensor::zeros(vec![m, n]);
    let (ad, bd, od) = (a.data(), b.data(), out.data.as_mut_slice());
    for i in 0..m {
        for j in 0..n {
            let mut acc = 0.0f32;
            for kk in 0..ka {
                acc += ad[i * ka + kk] * bd[j * ka + kk];
            }
            od[i * n + j] = acc;
        }
    }
    Ok(out)
}

/// Unroll the receptive fields of a CHW tensor into the columns of a
/// `(C*Kh*Kw) x (Ho*Wo)` matrix. Out-of-bounds (padding) positions
/// contribute 0.0. Row order is `(c, ky, kx)` with the channel outermost,
/// column `j` holds the field of output pixel `j` in row-major scan order.
pub fn im2col(act_in: &Tensor, geom: &ConvGeometry) -> Result<Tensor> {
    act_in.require_rank(3)?;
    let (c, h, w) = (act_in.dims[0], act_in.dims[1], act_in.dims[2]);
    if c != geom.c_in {
        return Err(Error::Shape(format!(
            "im2col expects {} channels, got {c}",
            geom.c_in
        )));
    }
    let (ho, wo) = geom.out_hw(h, w)?;
    let rows = c * geom.k_h * geom.k_w;
    let cols = ho * wo;
    let mut out = vec![0.0f32; rows * cols];
    let src = act_in.data();
    let (s, p) = (geom.stride, geom.padding as isize);
    for ch in 0..c {
        for ky in 0..geom.k_h {
            for kx in 0..geom.k_w {
                let row = (ch * geom.k_h + ky) * geom.k_w + kx;
                let dst = &mut out[row * cols..(row + 1) * cols];
                for oy in 0..ho {
                    let iy = (oy * s) as isize + ky as isize - p;
                    if iy < 0 || iy >= h as isize {
                        continue; // whole row stays padding
                    }
                    for ox in 0..wo {
                        let ix = (ox * s) as isize + kx as isize - p;
                        if ix >= 0 && ix < w as isize {
                            dst[oy * wo + ox] = src[(ch * h + iy as usize) * w + ix as usize];
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![rows, cols], out)
}

/// Inverse of [`im2col`]: scatter-add the columns back onto a CHW tensor of
/// the given input dims. For K=1, stride 1 the fields do not overlap and the
/// round trip is exact.
pub fn col2im(cols_mat: &Tensor, geom: &ConvGeometry, in_dims: &[usize]) -> Result<Tensor> {
    cols_mat.require_rank(2)?;
    if in_dims.len() != 3 {
        return Err(Error::Shape(format!("col2im wants CHW dims, got {in_dims:?}")));
    }
    let (c, h, w) = (in_dims[0], in_dims[1], in_dims[2]);
    let (ho, wo) = geom.out_hw(h, w)?;
    cols_mat.require_dims(&[c * geom.k_h * geom.k_w, ho * wo])?;
    let mut out = Tensor::zeros(in_dims.to_vec());
    let dst = out.data_mut();
    let src = cols_mat.data();
    let (s, p, ncols) = (geom.stride, geom.padding as isize, ho * wo);
    for ch in 0..c {
        for ky in 0..geom.k_h {
            for kx in 0..geom.k_w {
                let row = (ch * geom.k_h + ky) * geom.k_w + kx;
                for oy in 0..ho {
                    let iy = (oy * s) as isize + ky as isize - p;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for ox in 0..wo {
                        let ix = (ox * s) as isize + kx as isize - p;
                        if ix >= 0 && ix < w as isize {
                            dst[(ch * h + iy as usize) * w + ix as usize] +=
                                src[row * ncols + oy * wo + ox];
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Swap the input/output channel axes of a `Cout x Cin x Kh x Kw` coefficient
/// tensor and rotate the spatial window 180 degrees — the kernel that
/// back-propagates errors as a convolution.
pub fn flip_coeff(coeff: &Tensor) -> Result<Tensor> {
    coeff.require_rank(4)?;
    let (co, ci, kh, kw) = (coeff.dims[0], coeff.dims[1], coeff.dims[2], coeff.dims[3]);
    let src = coeff.data();
    let mut out = vec![0.0f32; src.len()];
    for o in 0..co {
        for i in 0..ci {
            for y in 0..kh {
                for x in 0..kw {
                    let v = src[((o * ci + i) * kh + y) * kw + x];
                    out[((i * co + o) * kh + (kh - 1 - y)) * kw + (kw - 1 - x)] = v;
                }
            }
        }
    }
    Tensor::new(vec![ci, co, kh, kw], out)
}
