//! Stateless layers with hand-written backward passes.
//!
//! Every layer struct is hyperparameters plus [`ParamId`]s into a shared
//! [`ParamStore`]; `forward` never mutates anything and `backward` takes
//! the same inputs the caller already has (the cached activations),
//! accumulates parameter gradients into a [`Grads`], and returns the
//! gradient with respect to the layer input. Image tensors are `[c, h, w]`.

use rand::Rng;

use crate::nn::params::{Grads, Init, ParamId, ParamStore};
use crate::nn::tensor::Tensor;

// ---------------------------------------------------------------------------
// Convolution
// ---------------------------------------------------------------------------

/// 2-D convolution with square-free (possibly rectangular) kernel,
/// uniform stride, and symmetric zero padding.
#[derive(Clone, Debug)]
pub struct Conv2d {
    /// Weight `[out_ch, in_ch, kh, kw]`.
    pub w: ParamId,
    /// Bias `[out_ch]`.
    pub b: ParamId,
    pub in_ch: usize,
    pub out_ch: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    /// Register weights under `name.w` / `name.b` and build the layer.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        (kh, kw): (usize, usize),
        stride: usize,
        pad: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let fan_in = in_ch * kh * kw;
        let w = store.add(
            &format!("{name}.w"),
            &[out_ch, in_ch, kh, kw],
            Init::He { fan_in },
            rng,
        );
        let b = store.add(&format!("{name}.b"), &[out_ch], Init::Zeros, rng);
        Conv2d {
            w,
            b,
            in_ch,
            out_ch,
            kh,
            kw,
            stride,
            pad,
        }
    }

    /// Rebuild a layer around already-registered parameter ids (tying).
    #[allow(clippy::too_many_arguments)]
    pub fn with_params(
        w: ParamId,
        b: ParamId,
        in_ch: usize,
        out_ch: usize,
        (kh, kw): (usize, usize),
        stride: usize,
        pad: usize,
    ) -> Self {
        Conv2d {
            w,
            b,
            in_ch,
            out_ch,
            kh,
            kw,
            stride,
            pad,
        }
    }

    /// Id of the weight tensor.
    pub fn weight_id(&self) -> ParamId {
        self.w
    }

    /// Id of the bias tensor.
    pub fn bias_id(&self) -> ParamId {
        self.b
    }

    /// Output spatial size for an input of `(h, w)`.
    pub fn out_size(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h + 2 * self.pad - self.kh) / self.stride + 1,
            (w + 2 * self.pad - self.kw) / self.stride + 1,
        )
    }

    /// `y[oc,oy,ox] = b[oc] + Σ w[oc,ic,ky,kx] · x[ic, oy·s−p+ky, ox·s−p+kx]`.
    pub fn forward(&self, ps: &ParamStore, x: &Tensor) -> Tensor {
        let (ic_n, h, w) = x.dims3();
        assert_eq!(ic_n, self.in_ch, "conv input channels");
        let (oh, ow) = self.out_size(h, w);
        let wt = ps.get(self.w);
        let bias = ps.get(self.b);
        let xd = x.data();
        let mut y = vec![0.0; self.out_ch * oh * ow];
        let s = self.stride as isize;
        let p = self.pad as isize;
        for oc in 0..self.out_ch {
            let w_oc = &wt[oc * self.in_ch * self.kh * self.kw..][..self.in_ch * self.kh * self.kw];
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = bias[oc];
                    for ic in 0..self.in_ch {
                        let x_ic = &xd[ic * h * w..][..h * w];
                        let w_ic = &w_oc[ic * self.kh * self.kw..][..self.kh * self.kw];
                        for ky in 0..self.kh {
                            let iy = oy as isize * s - p + ky as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let row = &x_ic[iy as usize * w..][..w];
                            let w_row = &w_ic[ky * self.kw..][..self.kw];
                            for kx in 0..self.kw {
                                let ix = ox as isize * s - p + kx as isize;
                                if ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                acc += w_row[kx] * row[ix as usize];
                            }
                        }
                    }
                    y[(oc * oh + oy) * ow + ox] = acc;
                }
            }
        }
        Tensor::from_vec(&[self.out_ch, oh, ow], y)
    }

    /// Accumulate `dw`, `db` into `grads` and return `dx`.
    pub fn backward(&self, ps: &ParamStore, x: &Tensor, dy: &Tensor, grads: &mut Grads) -> Tensor {
        let (_, h, w) = x.dims3();
        let (oc_n, oh, ow) = dy.dims3();
        assert_eq!(oc_n, self.out_ch, "conv upstream channels");
        let wt = ps.get(self.w);
        let xd = x.data();
        let dyd = dy.data();
        let mut dx = vec![0.0; self.in_ch * h * w];
        let s = self.stride as isize;
        let p = self.pad as isize;
        {
            // Parameter gradients first, then input gradients; both loops
            // visit (oc, oy, ox) and scatter into the smaller buffers.
            let k_n = self.kh * self.kw;
            let dw = grads.get_mut(self.w);
            for oc in 0..self.out_ch {
                let dw_oc = &mut dw[oc * self.in_ch * k_n..][..self.in_ch * k_n];
                for oy in 0..oh {
                    for ox in 0..ow {
                        let g = dyd[(oc * oh + oy) * ow + ox];
                        if g == 0.0 {
                            continue;
                        }
                        for ic in 0..self.in_ch {
                            let x_ic = &xd[ic * h * w..][..h * w];
                            let dw_ic = &mut dw_oc[ic * k_n..][..k_n];
                            for ky in 0..self.kh {
                                let iy = oy as isize * s - p + ky as isize;
                                if iy < 0 || iy >= h as isize {
                                    continue;
                                }
                                let row = &x_ic[iy as usize * w..][..w];
                                for kx in 0..self.kw {
                                    let ix = ox as isize * s - p + kx as isize;
                                    if ix < 0 || ix >= w as isize {
                                        continue;
                                    }
                                    dw_ic[ky * self.kw + kx] += g * row[ix as usize];
                                }
                            }
                        }
                    }
                }
            }
        }
        {
            let db = grads.get_mut(self.b);
            for oc in 0..self.out_ch {
                let plane = &dyd[oc * oh * ow..][..oh * ow];
                db[oc] += plane.iter().sum::<f64>();
            }
        }
        for oc in 0..self.out_ch {
            let w_oc = &wt[oc * self.in_ch * self.kh * self.kw..][..self.in_ch * self.kh * self.kw];
            for oy in 0..oh {
                for ox in 0..ow {
                    let g = dyd[(oc * oh + oy) * ow + ox];
                    if g == 0.0 {
                        continue;
                    }
                    for ic in 0..self.in_ch {
                        let dx_ic = &mut dx[ic * h * w..][..h * w];
                        let w_ic = &w_oc[ic * self.kh * self.kw..][..self.kh * self.kw];
                        for ky in 0..self.kh {
                            let iy = oy as isize * s - p + ky as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for kx in 0..self.kw {
                                let ix = ox as isize * s - p + kx as isize;
                                if ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                dx_ic[iy as usize * w + ix as usize] += g * w_ic[ky * self.kw + kx];
                            }
                        }
                    }
                }
            }
        }
        Tensor::from_vec(&[self.in_ch, h, w], dx)
    }
}

// ---------------------------------------------------------------------------
// Transposed convolution
// ---------------------------------------------------------------------------

/// 2-D transposed (fractionally strided) convolution; the exact adjoint
/// of [`Conv2d`] with the same geometry.
#[derive(Clone, Debug)]
pub struct ConvTranspose2d {
    /// Weight `[in_ch, out_ch, kh, kw]`.
    pub w: ParamId,
    /// Bias `[out_ch]`.
    pub b: ParamId,
    pub in_ch: usize,
    pub out_ch: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvTranspose2d {
    /// Register weights under `name.w` / `name.b` and build the layer.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        (kh, kw): (usize, usize),
        stride: usize,
        pad: usize,
        rng: &mut impl Rng,
    ) -> Self {
        // Fan-in per output unit of a transposed conv is roughly
        // in_ch · k² / s²; He over that keeps signal variance stable.
        let fan_in = (in_ch * kh * kw / (stride * stride)).max(1);
        let w = store.add(
            &format!("{name}.w"),
            &[in_ch, out_ch, kh, kw],
            Init::He { fan_in },
            rng,
        );
        let b = store.add(&format!("{name}.b"), &[out_ch], Init::Zeros, rng);
        ConvTranspose2d {
            w,
            b,
            in_ch,
            out_ch,
            kh,
            kw,
            stride,
            pad,
        }
    }

    /// Rebuild a layer around already-registered parameter ids (tying).
    #[allow(clippy::too_many_arguments)]
    pub fn with_params(
        w: ParamId,
        b: ParamId,
        in_ch: usize,
        out_ch: usize,
        (kh, kw): (usize, usize),
        stride: usize,
        pad: usize,
    ) -> Self {
        ConvTranspose2d {
            w,
            b,
            in_ch,
            out_ch,
            kh,
            kw,
            stride,
            pad,
        }
    }

    /// Id of the weight tensor.
    pub fn weight_id(&self) -> ParamId {
        self.w
    }

    /// Id of the bias tensor.
    pub fn bias_id(&self) -> ParamId {
        self.b
    }

    /// Output spatial size for an input of `(h, w)`.
    pub fn out_size(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h - 1) * self.stride + self.kh - 2 * self.pad,
            (w - 1) * self.stride + self.kw - 2 * self.pad,
        )
    }

    /// Scatter each input pixel through the kernel into the output.
    pub fn forward(&self, ps: &ParamStore, x: &Tensor) -> Tensor {
        let (ic_n, h, w) = x.dims3();
        assert_eq!(ic_n, self.in_ch, "convT input channels");
        let (oh, ow) = self.out_size(h, w);
        let wt = ps.get(self.w);
        let bias = ps.get(self.b);
        let xd = x.data();
        let mut y = vec![0.0; self.out_ch * oh * ow];
        for oc in 0..self.out_ch {
            let plane = &mut y[oc * oh * ow..][..oh * ow];
            plane.iter_mut().for_each(|v| *v = bias[oc]);
        }
        let s = self.stride as isize;
        let p = self.pad as isize;
        for ic in 0..self.in_ch {
            let x_ic = &xd[ic * h * w..][..h * w];
            let w_ic = &wt[ic * self.out_ch * self.kh * self.kw..][..self.out_ch * self.kh * self.kw];
            for iy in 0..h {
                for ix in 0..w {
                    let v = x_ic[iy * w + ix];
                    if v == 0.0 {
                        continue;
                    }
                    for oc in 0..self.out_ch {
                        let w_oc = &w_ic[oc * self.kh * self.kw..][..self.kh * self.kw];
                        let y_oc = &mut y[oc * oh * ow..][..oh * ow];
                        for ky in 0..self.kh {
                            let oy = iy as isize * s - p + ky as isize;
                            if oy < 0 || oy >= oh as isize {
                                continue;
                            }
                            let y_row = &mut y_oc[oy as usize * ow..][..ow];
                            let w_row = &w_oc[ky * self.kw..][..self.kw];
                            for kx in 0..self.kw {
                                let ox = ix as isize * s - p + kx as isize;
                                if ox < 0 || ox >= ow as isize {
                                    continue;
                                }
                                y_row[ox as usize] += v * w_row[kx];
                            }
                        }
                    }
                }
            }
        }
        Tensor::from_vec(&[self.out_ch, oh, ow], y)
    }

    /// Accumulate `dw`, `db` into `grads` and return `dx`.
    pub fn backward(&self, ps: &ParamStore, x: &Tensor, dy: &Tensor, grads: &mut Grads) -> Tensor {
        let (_, h, w) = x.dims3();
        let (oc_n, oh, ow) = dy.dims3();
        assert_eq!(oc_n, self.out_ch, "convT upstream channels");
        let wt = ps.get(self.w);
        let xd = x.data();
        let dyd = dy.data();
        let mut dx = vec![0.0; self.in_ch * h * w];
        let s = self.stride as isize;
        let p = self.pad as isize;
        {
            let db = grads.get_mut(self.b);
            for oc in 0..self.out_ch {
                db[oc] += dyd[oc * oh * ow..][..oh * ow].iter().sum::<f64>();
            }
        }
        let k_n = self.kh * self.kw;
        let dw = grads.get_mut(self.w);
        for ic in 0..self.in_ch {
            let x_ic = &xd[ic * h * w..][..h * w];
            let w_ic = &wt[ic * self.out_ch * k_n..][..self.out_ch * k_n];
            let dw_ic = &mut dw[ic * self.out_ch * k_n..][..self.out_ch * k_n];
            for iy in 0..h {
                for ix in 0..w {
                    let xv = x_ic[iy * w + ix];
                    let mut acc = 0.0;
                    for oc in 0..self.out_ch {
                        let dy_oc = &dyd[oc * oh * ow..][..oh * ow];
                        let w_oc = &w_ic[oc * k_n..][..k_n];
                        let dw_oc = &mut dw_ic[oc * k_n..][..k_n];
                        for ky in 0..self.kh {
                            let oy = iy as isize * s - p + ky as isize;
                            if oy < 0 || oy >= oh as isize {
                                continue;
                            }
                            let dy_row = &dy_oc[oy as usize * ow..][..ow];
                            for kx in 0..self.kw {
                                let ox = ix as isize * s - p + kx as isize;
                                if ox < 0 || ox >= ow as isize {
                                    continue;
                                }
                                let g = dy_row[ox as usize];
                                acc += g * w_oc[ky * self.kw + kx];
                                dw_oc[ky * self.kw + kx] += g * xv;
                            }
                        }
                    }
                    dx[ic * h * w + iy * w + ix] = acc;
                }
            }
        }
        Tensor::from_vec(&[self.in_ch, h, w], dx)
    }
}

// ---------------------------------------------------------------------------
// Fully connected
// ---------------------------------------------------------------------------

/// Dense layer `y = W·x + b` over flattened inputs.
#[derive(Clone, Debug)]
pub struct Linear {
    /// Weight `[out, in]`.
    pub w: ParamId,
    /// Bias `[out]`.
    pub b: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    /// Register weights under `name.w` / `name.b` and build the layer.
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        init: Init,
        rng: &mut impl Rng,
    ) -> Self {
        let w = store.add(&format!("{name}.w"), &[out_dim, in_dim], init, rng);
        let b = store.add(&format!("{name}.b"), &[out_dim], Init::Zeros, rng);
        Linear {
            w,
            b,
            in_dim,
            out_dim,
        }
    }

    /// Rebuild a layer around already-registered parameter ids (tying).
    pub fn with_params(w: ParamId, b: ParamId, in_dim: usize, out_dim: usize) -> Self {
        Linear {
            w,
            b,
            in_dim,
            out_dim,
        }
    }

    /// `y = W·x + b` on a flat `[in_dim]` tensor.
    pub fn forward(&self, ps: &ParamStore, x: &Tensor) -> Tensor {
        assert_eq!(x.numel(), self.in_dim, "linear input size");
        let wt = ps.get(self.w);
        let bias = ps.get(self.b);
        let xd = x.data();
        let mut y = vec![0.0; self.out_dim];
        for o in 0..self.out_dim {
            let row = &wt[o * self.in_dim..][..self.in_dim];
            let mut acc = bias[o];
            for (wv, xv) in row.iter().zip(xd) {
                acc += wv * xv;
            }
            y[o] = acc;
        }
        Tensor::from_vec(&[self.out_dim], y)
    }

    /// Accumulate `dw`, `db` into `grads` and return `dx`.
    pub fn backward(&self, ps: &ParamStore, x: &Tensor, dy: &Tensor, grads: &mut Grads) -> Tensor {
        assert_eq!(dy.numel(), self.out_dim, "linear upstream size");
        let wt = ps.get(self.w);
        let xd = x.data();
        let dyd = dy.data();
        let mut dx = vec![0.0; self.in_dim];
        {
            let dw = grads.get_mut(self.w);
            for o in 0..self.out_dim {
                let g = dyd[o];
                if g == 0.0 {
                    continue;
                }
                let drow = &mut dw[o * self.in_dim..][..self.in_dim];
                for (d, xv) in drow.iter_mut().zip(xd) {
                    *d += g * xv;
                }
            }
        }
        {
            let db = grads.get_mut(self.b);
            for (d, g) in db.iter_mut().zip(dyd) {
                *d += *g;
            }
        }
        for o in 0..self.out_dim {
            let g = dyd[o];
            if g == 0.0 {
                continue;
            }
            let row = &wt[o * self.in_dim..][..self.in_dim];
            for (d, wv) in dx.iter_mut().zip(row) {
                *d += g * wv;
            }
        }
        Tensor::from_vec(&[self.in_dim], dx)
    }
}

// ---------------------------------------------------------------------------
// Max pooling
// ---------------------------------------------------------------------------

/// 2×2 max pooling with stride 2 (both spatial dims must be even).
#[derive(Clone, Copy, Debug, Default)]
pub struct MaxPool2;

impl MaxPool2 {
    /// Returns the pooled tensor and the flat argmax index per output
    /// cell (needed by [`MaxPool2::backward`]).
    pub fn forward(&self, x: &Tensor) -> (Tensor, Vec<usize>) {
        let (c_n, h, w) = x.dims3();
        assert!(h % 2 == 0 && w % 2 == 0, "max-pool needs even dims, got {h}x{w}");
        let (oh, ow) = (h / 2, w / 2);
        let xd = x.data();
        let mut y = vec![0.0; c_n * oh * ow];
        let mut arg = vec![0usize; c_n * oh * ow];
        for c in 0..c_n {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_i = 0;
                    for dy in 0..2 {
                        for dx in 0..2 {
                            let i = (c * h + oy * 2 + dy) * w + ox * 2 + dx;
                            // Strict > keeps the first (row-major) maximum on
                            // ties, which makes pooling deterministic.
                            if xd[i] > best {
                                best = xd[i];
                                best_i = i;
                            }
                        }
                    }
                    let o = (c * oh + oy) * ow + ox;
                    y[o] = best;
                    arg[o] = best_i;
                }
            }
        }
        (Tensor::from_vec(&[c_n, oh, ow], y), arg)
    }

    /// Scatter upstream gradients back to the argmax positions.
    pub fn backward(&self, x_shape: &[usize], arg: &[usize], dy: &Tensor) -> Tensor {
        let mut dx = Tensor::zeros(x_shape);
        let dxd = dx.data_mut();
        for (o, &i) in arg.iter().enumerate() {
            dxd[i] += dy.data()[o];
        }
        dx
    }
}

// ---------------------------------------------------------------------------
// Activations
// ---------------------------------------------------------------------------

/// Elementwise ReLU.
pub fn relu(x: &Tensor) -> Tensor {
    x.map(|v| if v > 0.0 { v } else { 0.0 })
}

/// ReLU backward given the forward *input*.
pub fn relu_bwd(x: &Tensor, dy: &Tensor) -> Tensor {
    assert_eq!(x.numel(), dy.numel());
    let data = x
        .data()
        .iter()
        .zip(dy.data())
        .map(|(&xv, &g)| if xv > 0.0 { g } else { 0.0 })
        .collect();
    Tensor::from_vec(x.shape(), data)
}

/// Elementwise LeakyReLU with slope `alpha` on the negative side.
pub fn leaky_relu(x: &Tensor, alpha: f64) -> Tensor {
    x.map(|v| if v > 0.0 { v } else { alpha * v })
}

/// LeakyReLU backward given the forward *input*.
pub fn leaky_relu_bwd(x: &Tensor, dy: &Tensor, alpha: f64) -> Tensor {
    assert_eq!(x.numel(), dy.numel());
    let data = x
        .data()
        .iter()
        .zip(dy.data())
        .map(|(&xv, &g)| if xv > 0.0 { g } else { alpha * g })
        .collect();
    Tensor::from_vec(x.shape(), data)
}

/// Elementwise logistic sigmoid.
pub fn sigmoid(x: &Tensor) -> Tensor {
    x.map(|v| 1.0 / (1.0 + (-v).exp()))
}

/// Sigmoid backward given the forward *output*.
pub fn sigmoid_bwd(y: &Tensor, dy: &Tensor) -> Tensor {
    assert_eq!(y.numel(), dy.numel());
    let data = y
        .data()
        .iter()
        .zip(dy.data())
        .map(|(&yv, &g)| g * yv * (1.0 - yv))
        .collect();
    Tensor::from_vec(y.shape(), data)
}

/// Numerically stable `ln(1 + e^x)`.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Stable `ln(σ(x)) = −softplus(−x)`.
pub fn log_sigmoid(x: f64) -> f64 {
    -softplus(-x)
}

/// Stable `ln(1 − σ(x)) = −softplus(x)`.
pub fn log_one_minus_sigmoid(x: f64) -> f64 {
    -softplus(x)
}

// ---------------------------------------------------------------------------
// Dropout
// ---------------------------------------------------------------------------

/// Inverted-dropout mask: each kept unit is scaled by `1/(1−p)` so the
/// expected activation is unchanged.
#[derive(Clone, Debug)]
pub struct DropoutMask {
    scale: Vec<f64>,
}

impl DropoutMask {
    /// Apply the mask elementwise.
    pub fn apply(&self, x: &Tensor) -> Tensor {
        assert_eq!(x.numel(), self.scale.len(), "dropout mask size");
        let data = x
            .data()
            .iter()
            .zip(&self.scale)
            .map(|(&v, &s)| v * s)
            .collect();
        Tensor::from_vec(x.shape(), data)
    }

    /// Backward pass: the mask is a constant diagonal map.
    pub fn backward(&self, dy: &Tensor) -> Tensor {
        self.apply(dy)
    }

    /// Mask that keeps everything (dropout disabled).
    pub fn keep_all(n: usize) -> Self {
        DropoutMask {
            scale: vec![1.0; n],
        }
    }
}

/// Draw a fresh mask of `n` units with drop probability `p`.
pub fn dropout_mask(n: usize, p: f64, rng: &mut impl Rng) -> DropoutMask {
    assert!((0.0..1.0).contains(&p), "dropout probability must be in [0,1)");
    if p == 0.0 {
        return DropoutMask::keep_all(n);
    }
    let keep_scale = 1.0 / (1.0 - p);
    let scale = (0..n)
        .map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep_scale })
        .collect();
    DropoutMask { scale }
}

// ---------------------------------------------------------------------------
// Channel concatenation
// ---------------------------------------------------------------------------

/// Concatenate `[c_i, h, w]` tensors along the channel axis.
pub fn concat_channels(parts: &[&Tensor]) -> Tensor {
    assert!(!parts.is_empty());
    let (_, h, w) = parts[0].dims3();
    let mut data = Vec::new();
    let mut c_total = 0;
    for t in parts {
        let (c, th, tw) = t.dims3();
        assert_eq!((th, tw), (h, w), "concat spatial dims");
        c_total += c;
        data.extend_from_slice(t.data());
    }
    Tensor::from_vec(&[c_total, h, w], data)
}

/// Split an upstream gradient back into per-part gradients matching the
/// channel counts passed to [`concat_channels`].
pub fn split_channels_grad(dy: &Tensor, channels: &[usize]) -> Vec<Tensor> {
    let (c_total, h, w) = dy.dims3();
    assert_eq!(c_total, channels.iter().sum::<usize>(), "concat split channels");
    let mut out = Vec::with_capacity(channels.len());
    let mut offset = 0;
    for &c in channels {
        let slice = &dy.data()[offset * h * w..][..c * h * w];
        out.push(Tensor::from_vec(&[c, h, w], slice.to_vec()));
        offset += c;
    }
    out
}
