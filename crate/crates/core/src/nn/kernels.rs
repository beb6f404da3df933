//! Per-layer forward and backward kernels over batched activations.
//!
//! Activations are `[batch, ...sample_shape]` buffers. Image-shaped samples
//! are `[channels, height, width]`.

use crate::tensor::gemm;

pub(crate) fn fc_forward(x: &[f64], w: &[f64], b: &[f64], batch: usize, din: usize, dout: usize) -> Vec<f64> {
    let mut y = vec![0.0; batch * dout];
    gemm(batch, din, dout, x, false, w, false, 0.0, &mut y);
    for row in y.chunks_exact_mut(dout) {
        for (v, bias) in row.iter_mut().zip(b) {
            *v += bias;
        }
    }
    y
}

/// Returns `(dx, dw, db)`.
pub(crate) fn fc_backward(
    x: &[f64],
    w: &[f64],
    dy: &[f64],
    batch: usize,
    din: usize,
    dout: usize,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut dw = vec![0.0; din * dout];
    gemm(din, batch, dout, x, true, dy, false, 0.0, &mut dw);
    let mut db = vec![0.0; dout];
    for row in dy.chunks_exact(dout) {
        for (acc, g) in db.iter_mut().zip(row) {
            *acc += g;
        }
    }
    let mut dx = vec![0.0; batch * din];
    gemm(batch, dout, din, dy, false, w, true, 0.0, &mut dx);
    (dx, dw, db)
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeom {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub f: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    fn patch(&self) -> usize {
        self.c * self.k * self.k
    }
    fn out_pixels(&self) -> usize {
        self.oh * self.ow
    }
    fn in_len(&self) -> usize {
        self.c * self.h * self.w
    }
}

/// Unfolds one sample into `[c·k·k, oh·ow]` columns.
fn im2col(x: &[f64], g: &ConvGeom, cols: &mut [f64]) {
    let np = g.out_pixels();
    for ci in 0..g.c {
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (ci * g.k + ky) * g.k + kx;
                let dst = &mut cols[row * np..(row + 1) * np];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    for ox in 0..g.ow {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        dst[oy * g.ow + ox] = if iy >= 0 && ix >= 0 && (iy as usize) < g.h && (ix as usize) < g.w {
                            x[(ci * g.h + iy as usize) * g.w + ix as usize]
                        } else {
                            0.0
                        };
                    }
                }
            }
        }
    }
}

fn col2im(cols: &[f64], g: &ConvGeom, dx: &mut [f64]) {
    let np = g.out_pixels();
    for ci in 0..g.c {
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (ci * g.k + ky) * g.k + kx;
                let src = &cols[row * np..(row + 1) * np];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy as usize >= g.h {
                        continue;
                    }
                    for ox in 0..g.ow {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix < 0 || ix as usize >= g.w {
                            continue;
                        }
                        dx[(ci * g.h + iy as usize) * g.w + ix as usize] += src[oy * g.ow + ox];
                    }
                }
            }
        }
    }
}

pub(crate) fn conv_forward(x: &[f64], wt: &[f64], b: &[f64], batch: usize, g: &ConvGeom) -> Vec<f64> {
    let (patch, np) = (g.patch(), g.out_pixels());
    let out_len = g.f * np;
    let mut y = vec![0.0; batch * out_len];
    let mut cols = vec![0.0; patch * np];
    for s in 0..batch {
        im2col(&x[s * g.in_len()..(s + 1) * g.in_len()], g, &mut cols);
        let ys = &mut y[s * out_len..(s + 1) * out_len];
        gemm(g.f, patch, np, wt, false, &cols, false, 0.0, ys);
        for (fi, plane) in ys.chunks_exact_mut(np).enumerate() {
            for v in plane {
                *v += b[fi];
            }
        }
    }
    y
}

pub(crate) fn conv_backward(
    x: &[f64],
    wt: &[f64],
    dy: &[f64],
    batch: usize,
    g: &ConvGeom,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let (patch, np) = (g.patch(), g.out_pixels());
    let out_len = g.f * np;
    let mut dw = vec![0.0; g.f * patch];
    let mut db = vec![0.0; g.f];
    let mut dx = vec![0.0; batch * g.in_len()];
    let mut cols = vec![0.0; patch * np];
    let mut dcols = vec![0.0; patch * np];
    for s in 0..batch {
        let xs = &x[s * g.in_len()..(s + 1) * g.in_len()];
        let dys = &dy[s * out_len..(s + 1) * out_len];
        im2col(xs, g, &mut cols);
        gemm(g.f, np, patch, dys, false, &cols, true, 1.0, &mut dw);
        for (fi, plane) in dys.chunks_exact(np).enumerate() {
            db[fi] += plane.iter().sum::<f64>();
        }
        gemm(patch, g.f, np, wt, true, dys, false, 0.0, &mut dcols);
        col2im(&dcols, g, &mut dx[s * g.in_len()..(s + 1) * g.in_len()]);
    }
    (dx, dw, db)
}

/// Returns the pooled output and, per output value, the flat in-sample index
/// of the input that produced it. Ties go to the first position scanned.
pub(crate) fn maxpool_forward(
    x: &[f64],
    batch: usize,
    (c, h, w): (usize, usize, usize),
    win: usize,
) -> (Vec<f64>, Vec<usize>) {
    let (oh, ow) = (h / win, w / win);
    let in_len = c * h * w;
    let out_len = c * oh * ow;
    let mut y = vec![0.0; batch * out_len];
    let mut arg = vec![0usize; batch * out_len];
    for s in 0..batch {
        let xs = &x[s * in_len..(s + 1) * in_len];
        for ci in 0..c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_i = 0;
                    for dy in 0..win {
                        for dx in 0..win {
                            let i = (ci * h + oy * win + dy) * w + ox * win + dx;
                            if xs[i] > best {
                                best = xs[i];
                                best_i = i;
                            }
                        }
                    }
                    let o = s * out_len + (ci * oh + oy) * ow + ox;
                    y[o] = best;
                    arg[o] = best_i;
                }
            }
        }
    }
    (y, arg)
}

pub(crate) fn maxpool_backward(dy: &[f64], arg: &[usize], batch: usize, in_len: usize) -> Vec<f64> {
    let out_len = dy.len() / batch;
    let mut dx = vec![0.0; batch * in_len];
    for s in 0..batch {
        for o in 0..out_len {
            dx[s * in_len + arg[s * out_len + o]] += dy[s * out_len + o];
        }
    }
    dx
}

/// Winner-take-all within consecutive blocks; returns the output and the flat
/// index of each block's winner. Ties go to the lowest index.
pub(crate) fn lwta_forward(x: &[f64], block: usize) -> (Vec<f64>, Vec<usize>) {
    let mut y = vec![0.0; x.len()];
    let mut winners = Vec::with_capacity(x.len() / block);
    for (bi, chunk) in x.chunks_exact(block).enumerate() {
        let mut k = 0;
        for (j, &v) in chunk.iter().enumerate().skip(1) {
            if v > chunk[k] {
                k = j;
            }
        }
        let idx = bi * block + k;
        y[idx] = x[idx];
        winners.push(idx);
    }
    (y, winners)
}

pub(crate) fn lwta_backward(dy: &[f64], winners: &[usize]) -> Vec<f64> {
    let mut dx = vec![0.0; dy.len()];
    for &i in winners {
        dx[i] = dy[i];
    }
    dx
}
