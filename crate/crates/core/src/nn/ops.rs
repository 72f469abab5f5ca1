//! Forward and backward kernels. Every convolution is a valid (unpadded),
//! stride-1 cross-correlation; biases are per output channel.

use rand::Rng as _;

use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::seed::Rng;

fn dims<const N: usize>(t: &Tensor, what: &str) -> Result<[usize; N]> {
    t.shape()
        .try_into()
        .map_err(|_| Error::domain(format!("{what} must have {N} dimensions, got shape {:?}", t.shape())))
}

/// `z = x·Wᵀ + b` for `x: [batch, in]`, `W: [out, in]`, `b: [out]`.
pub fn affine_forward(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    let [batch, nin] = dims(x, "affine input")?;
    let [nout, win] = dims(w, "affine weight")?;
    let [nb] = dims(b, "affine bias")?;
    if win != nin || nb != nout {
        return Err(Error::domain(format!(
            "affine shapes disagree: x {:?}, W {:?}, b {:?}",
            x.shape(),
            w.shape(),
            b.shape()
        )));
    }
    let (xd, wd, bd) = (x.data(), w.data(), b.data());
    let mut out = vec![0.0; batch * nout];
    for r in 0..batch {
        let xr = &xd[r * nin..(r + 1) * nin];
        for o in 0..nout {
            let wr = &wd[o * nin..(o + 1) * nin];
            out[r * nout + o] = bd[o] + wr.iter().zip(xr).map(|(a, b)| a * b).sum::<f64>();
        }
    }
    Tensor::new(vec![batch, nout], out)
}

/// Gradients `(dx, dW, db)` of the affine map given `dz`.
pub fn affine_backward(x: &Tensor, w: &Tensor, gy: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let (batch, nin) = (x.shape()[0], x.shape()[1]);
    let nout = w.shape()[0];
    let (xd, wd) = (x.data(), w.data());
    let mut gx = vec![0.0; batch * nin];
    let mut gw = vec![0.0; nout * nin];
    let mut gb = vec![0.0; nout];
    for r in 0..batch {
        let xr = &xd[r * nin..(r + 1) * nin];
        let gxr = &mut gx[r * nin..(r + 1) * nin];
        for o in 0..nout {
            let g = gy[r * nout + o];
            if g == 0.0 {
                continue;
            }
            gb[o] += g;
            let wr = &wd[o * nin..(o + 1) * nin];
            let gwr = &mut gw[o * nin..(o + 1) * nin];
            for i in 0..nin {
                gxr[i] += g * wr[i];
                gwr[i] += g * xr[i];
            }
        }
    }
    (gx, gw, gb)
}

/// Geometry of a 2-D convolution, derived and validated from operand shapes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv2dShape {
    pub batch: usize,
    pub cin: usize,
    pub cout: usize,
    pub h: usize,
    pub w: usize,
    pub kh: usize,
    pub kw: usize,
    pub dh: usize,
    pub dw: usize,
    pub oh: usize,
    pub ow: usize,
}

impl Conv2dShape {
    pub fn infer(x: &Tensor, k: &Tensor, b: &Tensor, dilation: (usize, usize)) -> Result<Self> {
        let [batch, cin, h, w] = dims(x, "conv2d input")?;
        let [cout, kcin, kh, kw] = dims(k, "conv2d kernel")?;
        let [nb] = dims(b, "conv2d bias")?;
        let (dh, dw) = dilation;
        if kcin != cin || nb != cout {
            return Err(Error::domain(format!(
                "conv2d channels disagree: x {:?}, kernel {:?}, bias {:?}",
                x.shape(),
                k.shape(),
                b.shape()
            )));
        }
        if kh == 0 || kw == 0 || dh == 0 || dw == 0 {
            return Err(Error::domain("kernel size and dilation must be positive"));
        }
        let eh = (kh - 1) * dh + 1;
        let ew = (kw - 1) * dw + 1;
        if eh > h || ew > w {
            return Err(Error::domain(format!(
                "dilated kernel extent {eh}×{ew} exceeds input {h}×{w}"
            )));
        }
        Ok(Self {
            batch,
            cin,
            cout,
            h,
            w,
            kh,
            kw,
            dh,
            dw,
            oh: h - eh + 1,
            ow: w - ew + 1,
        })
    }
}

/// Dilated 2-D cross-correlation of `x: [batch, cin, H, W]` with
/// `k: [cout, cin, kh, kw]`.
pub fn conv2d_forward(x: &Tensor, k: &Tensor, b: &Tensor, dilation: (usize, usize)) -> Result<Tensor> {
    let s = Conv2dShape::infer(x, k, b, dilation)?;
    let (xd, kd, bd) = (x.data(), k.data(), b.data());
    let mut out = vec![0.0; s.batch * s.cout * s.oh * s.ow];
    let plane = s.oh * s.ow;
    for n in 0..s.batch {
        for co in 0..s.cout {
            let o = &mut out[(n * s.cout + co) * plane..(n * s.cout + co + 1) * plane];
            o.iter_mut().for_each(|v| *v = bd[co]);
            for ci in 0..s.cin {
                let xc = &xd[(n * s.cin + ci) * s.h * s.w..];
                for i in 0..s.kh {
                    for j in 0..s.kw {
                        let kv = kd[((co * s.cin + ci) * s.kh + i) * s.kw + j];
                        for r in 0..s.oh {
                            let xrow = &xc[(r + i * s.dh) * s.w + j * s.dw..];
                            let orow = &mut o[r * s.ow..(r + 1) * s.ow];
                            for (ov, xv) in orow.iter_mut().zip(xrow) {
                                *ov += kv * xv;
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![s.batch, s.cout, s.oh, s.ow], out)
}

/// Gradients `(dx, dk, db)` of the 2-D convolution given `dy`.
pub fn conv2d_backward(x: &Tensor, k: &Tensor, s: &Conv2dShape, gy: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let (xd, kd) = (x.data(), k.data());
    let mut gx = vec![0.0; xd.len()];
    let mut gk = vec![0.0; kd.len()];
    let mut gb = vec![0.0; s.cout];
    let plane = s.oh * s.ow;
    for n in 0..s.batch {
        for co in 0..s.cout {
            let g = &gy[(n * s.cout + co) * plane..(n * s.cout + co + 1) * plane];
            gb[co] += g.iter().sum::<f64>();
            for ci in 0..s.cin {
                let base = (n * s.cin + ci) * s.h * s.w;
                for i in 0..s.kh {
                    for j in 0..s.kw {
                        let kidx = ((co * s.cin + ci) * s.kh + i) * s.kw + j;
                        let kv = kd[kidx];
                        let mut acc = 0.0;
                        for r in 0..s.oh {
                            let off = base + (r + i * s.dh) * s.w + j * s.dw;
                            let grow = &g[r * s.ow..(r + 1) * s.ow];
                            let xrow = &xd[off..off + s.ow];
                            let gxrow = &mut gx[off..off + s.ow];
                            for c in 0..s.ow {
                                acc += grow[c] * xrow[c];
                                gxrow[c] += grow[c] * kv;
                            }
                        }
                        gk[kidx] += acc;
                    }
                }
            }
        }
    }
    (gx, gk, gb)
}

/// Valid 1-D cross-correlation of `x: [batch, cin, L]` with `k: [cout, cin, kl]`.
pub fn conv1d_forward(x: &Tensor, k: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (x4, k4) = conv1d_as_2d(x, k)?;
    let y = conv2d_forward(&x4, &k4, b, (1, 1))?;
    let s = y.shape().to_vec();
    y.reshape(&[s[0], s[1], s[3]])
}

pub(crate) fn conv1d_as_2d(x: &Tensor, k: &Tensor) -> Result<(Tensor, Tensor)> {
    let [batch, cin, len] = dims(x, "conv1d input")?;
    let [cout, kcin, kl] = dims(k, "conv1d kernel")?;
    if kl > len {
        return Err(Error::domain(format!("kernel length {kl} exceeds input length {len}")));
    }
    Ok((
        x.clone().reshape(&[batch, cin, 1, len])?,
        k.clone().reshape(&[cout, kcin, 1, kl])?,
    ))
}

/// `x` where `x ≥ 0`, `slope·x` otherwise.
pub fn leaky_relu(x: &Tensor, slope: f64) -> Tensor {
    let mut t = x.clone();
    t.data_mut()
        .iter_mut()
        .for_each(|v| *v = if *v >= 0.0 { *v } else { slope * *v });
    t
}

pub fn tanh(x: &Tensor) -> Tensor {
    let mut t = x.clone();
    t.data_mut().iter_mut().for_each(|v| *v = v.tanh());
    t
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DropoutMode {
    Train,
    Eval,
}

/// Inverted-dropout mask: each entry is 0 with probability `p`, else `1/(1−p)`.
pub fn dropout_mask(n: usize, p: f64, rng: &mut Rng) -> Vec<f64> {
    let keep = 1.0 / (1.0 - p);
    (0..n)
        .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
        .collect()
}

/// Inverted dropout. Identity in eval mode or when `p == 0`.
pub fn dropout(x: &Tensor, p: f64, mode: DropoutMode, rng: &mut Rng) -> Result<Tensor> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::domain(format!("dropout probability {p} outside [0, 1)")));
    }
    if mode == DropoutMode::Eval || p == 0.0 {
        return Ok(x.clone());
    }
    let mask = dropout_mask(x.numel(), p, rng);
    let mut t = x.clone();
    t.data_mut().iter_mut().zip(&mask).for_each(|(v, m)| *v *= m);
    Ok(t)
}

/// Mean of squared differences over all elements.
pub fn mse(pred: &Tensor, target: &Tensor) -> Result<f64> {
    if pred.shape() != target.shape() {
        return Err(Error::domain(format!(
            "mse shapes disagree: {:?} vs {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    let n = pred.numel().max(1) as f64;
    Ok(pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        / n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_from_seed;
    use approx::assert_abs_diff_eq;

    fn t(shape: &[usize], v: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), v.to_vec()).unwrap()
    }

    #[test]
    fn affine_cases() {
        let x = t(&[2, 2], &[1.0, 2.0, -3.0, 0.5]);
        let eye = t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]);
        let y = affine_forward(&x, &eye, &Tensor::zeros(&[2])).unwrap();
        assert_eq!(y.data(), x.data());

        let y = affine_forward(&t(&[1, 2], &[1.0, 2.0]), &t(&[1, 2], &[1.0, 1.0]), &t(&[1], &[0.5])).unwrap();
        assert_eq!(y.data(), &[3.5]);

        let x = t(&[2, 3], &[0.1, 0.2, 0.3, 0.1, 0.2, 0.3]);
        let w = t(&[2, 3], &[1.0, -2.0, 0.5, 0.3, 0.3, 0.3]);
        let y = affine_forward(&x, &w, &t(&[2], &[0.1, 0.2])).unwrap();
        assert_eq!(y.data()[..2], y.data()[2..]);

        assert!(affine_forward(&x, &eye, &Tensor::zeros(&[2])).is_err());
    }

    #[test]
    fn conv1d_cases() {
        let x = t(&[1, 1, 3], &[1.0, 2.0, 3.0]);
        let y = conv1d_forward(&x, &t(&[1, 1, 1], &[1.0]), &Tensor::zeros(&[1])).unwrap();
        assert_eq!(y.data(), x.data());
        let y = conv1d_forward(&x, &t(&[1, 1, 2], &[1.0, 1.0]), &Tensor::zeros(&[1])).unwrap();
        assert_eq!(y.data(), &[3.0, 5.0]);
        assert_eq!(y.shape(), &[1, 1, 2]);
        assert!(conv1d_forward(&x, &Tensor::zeros(&[1, 1, 4]), &Tensor::zeros(&[1])).is_err());
    }

    #[test]
    fn conv2d_shapes() {
        let x = Tensor::zeros(&[1, 1, 6, 10]);
        let y = conv2d_forward(&x, &Tensor::zeros(&[4, 1, 2, 2]), &Tensor::zeros(&[4]), (3, 1)).unwrap();
        assert_eq!(y.shape(), &[1, 4, 3, 9]);
        let x = Tensor::zeros(&[2, 3, 3, 9]);
        let y = conv2d_forward(&x, &Tensor::zeros(&[5, 3, 2, 2]), &Tensor::zeros(&[5]), (1, 1)).unwrap();
        assert_eq!(y.shape(), &[2, 5, 2, 8]);
        let x = Tensor::zeros(&[1, 1, 3, 9]);
        assert!(conv2d_forward(&x, &Tensor::zeros(&[1, 1, 2, 2]), &Tensor::zeros(&[1]), (3, 1)).is_err());
    }

    #[test]
    fn conv2d_ones_on_constant() {
        let c = 0.7;
        let x = Tensor::from_fn(&[1, 1, 5, 6], |_| c);
        let k = Tensor::from_fn(&[1, 1, 2, 3], |_| 1.0);
        let y = conv2d_forward(&x, &k, &t(&[1], &[0.25]), (2, 1)).unwrap();
        for v in y.data() {
            assert_abs_diff_eq!(*v, 6.0 * c + 0.25, epsilon = 1e-14);
        }
    }

    #[test]
    fn activations() {
        let x = t(&[3], &[-2.0, 3.0, 0.0]);
        let y = leaky_relu(&x, 0.05);
        assert_abs_diff_eq!(y.data()[0], -0.1, epsilon = 1e-16);
        assert_eq!(&y.data()[1..], &[3.0, 0.0]);

        let y = tanh(&t(&[3], &[0.0, 1.0, -1.0]));
        assert_eq!(y.data()[0], 0.0);
        assert_abs_diff_eq!(y.data()[1], 0.7615941559557649, epsilon = 1e-16);
        assert_eq!(y.data()[2], -y.data()[1]);
    }

    #[test]
    fn dropout_cases() {
        let x = Tensor::from_fn(&[100], |i| i as f64);
        let mut rng = rng_from_seed(3);
        assert_eq!(dropout(&x, 0.0, DropoutMode::Train, &mut rng).unwrap(), x);
        assert_eq!(dropout(&x, 0.3, DropoutMode::Eval, &mut rng).unwrap(), x);
        assert!(dropout(&x, 1.0, DropoutMode::Train, &mut rng).is_err());

        let ones = Tensor::from_fn(&[10], |_| 1.0);
        let n = 100_000;
        let mut acc = [0.0; 10];
        for _ in 0..n {
            let y = dropout(&ones, 0.3, DropoutMode::Train, &mut rng).unwrap();
            acc.iter_mut().zip(y.data()).for_each(|(a, v)| *a += v);
        }
        for a in acc {
            assert!((a / n as f64 - 1.0).abs() < 0.01);
        }
    }

    #[test]
    fn mse_cases() {
        let a = t(&[2], &[1.0, 1.0]);
        assert_eq!(mse(&a, &a).unwrap(), 0.0);
        assert_eq!(mse(&a, &Tensor::zeros(&[2])).unwrap(), 1.0);
        let p = t(&[3], &[1.0, 2.0, 3.0]);
        assert_abs_diff_eq!(mse(&p, &t(&[3], &[1.0, 1.0, 1.0])).unwrap(), 5.0 / 3.0, epsilon = 1e-15);
        assert!(mse(&p, &a).is_err());
    }
}
