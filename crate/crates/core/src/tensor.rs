//! Dense binary32 tensors.
//!
//! All arithmetic runs in a fixed order (reduction index ascending, no
//! reassociation) so two runs on equal inputs are bit-identical. Golden and
//! faulty inferences are compared element-for-element, which only works if
//! the fault-free path never drifts.
//!
//! # Serialization
//!
//! [`Tensor::write_to`] emits, all little-endian:
//!
//! ```text
//! u32 rank
//! u32 dim[0] .. u32 dim[rank-1]
//! f32 data[0] .. f32 data[n-1]     (raw IEEE-754 bit patterns, row-major)
//! ```

use std::io::{Read, Write};

use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Dimension(format!(
                "shape {:?} holds {} elements, got {}",
                shape,
                n,
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f32) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> f32) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: (0..n).map(&mut f).collect(),
        }
    }

    /// `n × n` identity matrix.
    pub fn eye(n: usize) -> Self {
        Self::from_fn(&[n, n], |i| if i / n == i % n { 1.0 } else { 0.0 })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
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

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Raw bit pattern of the element at `index`.
    pub fn element_bits(&self, index: usize) -> Result<u32> {
        self.data
            .get(index)
            .map(|v| v.to_bits())
            .ok_or(Error::Index {
                index,
                len: self.data.len(),
            })
    }

    pub fn set_element_bits(&mut self, index: usize, bits: u32) -> Result<()> {
        let len = self.data.len();
        let slot = self.data.get_mut(index).ok_or(Error::Index { index, len })?;
        *slot = f32::from_bits(bits);
        Ok(())
    }

    /// Bitwise equality of shape and payload. Unlike `==` on floats this
    /// treats identical NaN payloads as equal and `0.0`/`-0.0` as distinct.
    pub fn bit_eq(&self, other: &Tensor) -> bool {
        self.shape == other.shape
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }

    pub fn has_non_finite(&self) -> bool {
        self.data.iter().any(|v| !v.is_finite())
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Self> {
        Self::new(shape.to_vec(), self.data)
    }

    /// Transpose of a rank-2 tensor.
    pub fn transpose(&self) -> Result<Self> {
        let (rows, cols) = self.dims2("transpose")?;
        let mut out = vec![0.0; self.data.len()];
        for r in 0..rows {
            for c in 0..cols {
                out[c * rows + r] = self.data[r * cols + c];
            }
        }
        Self::new(vec![cols, rows], out)
    }

    fn dims2(&self, op: &str) -> Result<(usize, usize)> {
        match self.shape[..] {
            [r, c] => Ok((r, c)),
            _ => Err(Error::Dimension(format!(
                "{op} expects a rank-2 tensor, got shape {:?}",
                self.shape
            ))),
        }
    }

    fn check_same_shape(&self, other: &Tensor, op: &str) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::Dimension(format!(
                "{op}: shape {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        Ok(())
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.check_same_shape(other, "add")?;
        Ok(self.zip_map(other, |a, b| a + b))
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.check_same_shape(other, "mul")?;
        Ok(self.zip_map(other, |a, b| a * b))
    }

    fn zip_map(&self, other: &Tensor, f: impl Fn(f32, f32) -> f32) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn relu(&self) -> Tensor {
        self.map(relu)
    }

    pub fn sigmoid(&self) -> Tensor {
        self.map(sigmoid)
    }

    /// `[M×K] × [K×N]`, accumulating over `k` in ascending order.
    pub fn matmul(&self, rhs: &Tensor) -> Result<Tensor> {
        let (m, k) = self.dims2("matmul")?;
        let (k2, n) = rhs.dims2("matmul")?;
        if k != k2 {
            return Err(Error::Dimension(format!(
                "matmul inner dimensions differ: {:?} × {:?}",
                self.shape, rhs.shape
            )));
        }
        let mut out = vec![0.0f32; m * n];
        for i in 0..m {
            let row = &mut out[i * n..(i + 1) * n];
            for kk in 0..k {
                let a = self.data[i * k + kk];
                let b_row = &rhs.data[kk * n..(kk + 1) * n];
                for (o, &b) in row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Tensor::new(vec![m, n], out)
    }

    /// Fully connected layer: `x [N×in]`, `weight [out×in]`, `bias [out]`.
    /// Each output is `(Σ_k x[k]·w[k]) + b`, summed with `k` ascending.
    pub fn linear(&self, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
        let (rows, fan_in) = self.dims2("linear")?;
        let (fan_out, w_in) = weight.dims2("linear weight")?;
        if w_in != fan_in || bias.shape != [fan_out] {
            return Err(Error::Dimension(format!(
                "linear: input {:?}, weight {:?}, bias {:?}",
                self.shape, weight.shape, bias.shape
            )));
        }
        let mut out = Vec::with_capacity(rows * fan_out);
        for r in 0..rows {
            let x = &self.data[r * fan_in..(r + 1) * fan_in];
            for o in 0..fan_out {
                let w = &weight.data[o * fan_in..(o + 1) * fan_in];
                let mut acc = 0.0f32;
                for (a, b) in x.iter().zip(w) {
                    acc += a * b;
                }
                out.push(acc + bias.data[o]);
            }
        }
        Tensor::new(vec![rows, fan_out], out)
    }

    /// 2-D cross-correlation of `C×H×W` input with `F×C×k×k` kernels, zero
    /// padding, no bias. Padded zeros take part in the products, so a
    /// non-finite weight poisons border outputs exactly as a padded
    /// buffer would.
    pub fn conv2d(&self, kernels: &Tensor, stride: usize, padding: usize) -> Result<Tensor> {
        let [c, h, w] = self.shape[..] else {
            return Err(Error::Dimension(format!(
                "conv2d input must be C×H×W, got {:?}",
                self.shape
            )));
        };
        let [f, kc, kh, kw] = kernels.shape[..] else {
            return Err(Error::Dimension(format!(
                "conv2d kernels must be F×C×k×k, got {:?}",
                kernels.shape
            )));
        };
        if kc != c || kh != kw {
            return Err(Error::Dimension(format!(
                "conv2d kernels {:?} incompatible with input {:?}",
                kernels.shape, self.shape
            )));
        }
        if stride == 0 {
            return Err(Error::Dimension("conv2d stride must be >= 1".into()));
        }
        let k = kh;
        let (ph, pw) = (h + 2 * padding, w + 2 * padding);
        if k > ph || k > pw {
            return Err(Error::Dimension(format!(
                "conv2d kernel {k} larger than padded input {ph}×{pw}"
            )));
        }
        let oh = (ph - k) / stride + 1;
        let ow = (pw - k) / stride + 1;
        let mut out = Vec::with_capacity(f * oh * ow);
        for fi in 0..f {
            let kern = &kernels.data[fi * c * k * k..(fi + 1) * c * k * k];
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = 0.0f32;
                    for ci in 0..c {
                        for ky in 0..k {
                            let iy = (oy * stride + ky) as isize - padding as isize;
                            for kx in 0..k {
                                let ix = (ox * stride + kx) as isize - padding as isize;
                                let x = if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w
                                {
                                    self.data[ci * h * w + iy as usize * w + ix as usize]
                                } else {
                                    0.0
                                };
                                acc += x * kern[ci * k * k + ky * k + kx];
                            }
                        }
                    }
                    out.push(acc);
                }
            }
        }
        Tensor::new(vec![f, oh, ow], out)
    }

    /// Adds `bias[c]` to every element of channel `c` of a `C×H×W` tensor.
    pub fn add_channel_bias(&self, bias: &Tensor) -> Result<Tensor> {
        let c = self.shape.first().copied().unwrap_or(0);
        if bias.shape != [c] || self.rank() != 3 {
            return Err(Error::Dimension(format!(
                "channel bias {:?} for tensor {:?}",
                bias.shape, self.shape
            )));
        }
        let plane = self.data.len() / c.max(1);
        let mut out = self.clone();
        for (ci, chunk) in out.data.chunks_mut(plane).enumerate() {
            for v in chunk {
                *v += bias.data[ci];
            }
        }
        Ok(out)
    }

    /// Softmax along `axis`, subtracting the lane maximum first. A NaN
    /// anywhere in a lane makes the whole lane NaN.
    pub fn softmax(&self, axis: usize) -> Result<Tensor> {
        if axis >= self.rank() {
            return Err(Error::Dimension(format!(
                "softmax axis {axis} invalid for shape {:?}",
                self.shape
            )));
        }
        let len = self.shape[axis];
        let inner: usize = self.shape[axis + 1..].iter().product();
        let outer: usize = self.shape[..axis].iter().product();
        let mut out = self.data.clone();
        let mut lane = vec![0.0f32; len];
        for o in 0..outer {
            for i in 0..inner {
                let at = |j: usize| o * len * inner + j * inner + i;
                for (j, slot) in lane.iter_mut().enumerate() {
                    *slot = self.data[at(j)];
                }
                let max = lane.iter().fold(f32::NEG_INFINITY, |m, &v| {
                    if m.is_nan() || v.is_nan() {
                        f32::NAN
                    } else if v > m {
                        v
                    } else {
                        m
                    }
                });
                let mut sum = 0.0f32;
                for v in lane.iter_mut() {
                    *v = libm::expf(*v - max);
                    sum += *v;
                }
                for (j, v) in lane.iter().enumerate() {
                    out[at(j)] = v / sum;
                }
            }
        }
        Tensor::new(self.shape.clone(), out)
    }

    /// Layer normalisation over the last axis with affine `gamma`/`beta`.
    pub fn layernorm(&self, gamma: &Tensor, beta: &Tensor, eps: f32) -> Result<Tensor> {
        if !(eps > 0.0) {
            return Err(Error::Dimension(format!("layernorm eps must be > 0, got {eps}")));
        }
        let d = *self
            .shape
            .last()
            .ok_or_else(|| Error::Dimension("layernorm on rank-0 tensor".into()))?;
        if gamma.shape != [d] || beta.shape != [d] {
            return Err(Error::Dimension(format!(
                "layernorm affine {:?}/{:?} for width {d}",
                gamma.shape, beta.shape
            )));
        }
        let mut out = Vec::with_capacity(self.data.len());
        for row in self.data.chunks(d) {
            let mut mean = 0.0f32;
            for &v in row {
                mean += v;
            }
            mean /= d as f32;
            let mut var = 0.0f32;
            for &v in row {
                let c = v - mean;
                var += c * c;
            }
            var /= d as f32;
            let inv = 1.0 / (var + eps).sqrt();
            for (j, &v) in row.iter().enumerate() {
                out.push((v - mean) * inv * gamma.data[j] + beta.data[j]);
            }
        }
        Tensor::new(self.shape.clone(), out)
    }

    pub fn write_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        w.write_all(&(self.shape.len() as u32).to_le_bytes())?;
        for &d in &self.shape {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(self.data.len() * 4);
        for v in &self.data {
            buf.extend_from_slice(&v.to_bits().to_le_bytes());
        }
        w.write_all(&buf)
    }

    pub fn read_from(r: &mut impl Read) -> Result<Tensor> {
        let rank = read_u32(r, "tensor rank")? as usize;
        if rank > 8 {
            return Err(Error::format("tensor rank", format!("implausible rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(read_u32(r, "tensor dims")? as usize);
        }
        let n = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .filter(|&n| n <= 1 << 30)
            .ok_or_else(|| Error::format("tensor dims", format!("shape {shape:?} too large")))?;
        let mut bytes = vec![0u8; n * 4];
        r.read_exact(&mut bytes)
            .map_err(|e| Error::format("tensor payload", e.to_string()))?;
        let data = bytes
            .chunks_exact(4)
            .map(|b| f32::from_bits(u32::from_le_bytes([b[0], b[1], b[2], b[3]])))
            .collect();
        Tensor::new(shape, data)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_to(&mut out).expect("writing to a Vec cannot fail");
        out
    }
}

pub(crate) fn read_u32(r: &mut impl Read, field: &str) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)
        .map_err(|e| Error::format(field, e.to_string()))?;
    Ok(u32::from_le_bytes(b))
}

/// `max(0, x)`; NaN passes through.
pub fn relu(x: f32) -> f32 {
    if x > 0.0 || x.is_nan() {
        x
    } else {
        0.0
    }
}

pub fn sigmoid(x: f32) -> f32 {
    1.0 / (1.0 + libm::expf(-x))
}

/// Mean and population variance (two-pass, accumulated in f64) of a slice.
pub fn mean_variance(values: &[f32]) -> (f32, f32) {
    if values.is_empty() {
        return (f32::NAN, f32::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().map(|&v| v as f64).sum::<f64>() / n;
    let var = values
        .iter()
        .map(|&v| {
            let c = v as f64 - mean;
            c * c
        })
        .sum::<f64>()
        / n;
    (mean as f32, var as f32)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use proptest::prelude::*;

    fn t(shape: &[usize], data: &[f32]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    fn random(rng: &mut Rng, shape: &[usize]) -> Tensor {
        Tensor::from_fn(shape, |_| rng.uniform(-2.0, 2.0))
    }

    #[test]
    fn shape_mismatch_rejected() {
        assert!(Tensor::new(vec![2, 2], vec![1.0; 3]).is_err());
    }

    #[test]
    fn identity_matmul() {
        let mut rng = Rng::new(1);
        let a = random(&mut rng, &[3, 3]);
        assert!(Tensor::eye(3).matmul(&a).unwrap().bit_eq(&a));
    }

    #[test]
    fn matmul_by_hand() {
        let a = t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let b = t(&[2, 1], &[1.0, 1.0]);
        assert_eq!(a.matmul(&b).unwrap().data(), &[3.0, 7.0]);
    }

    #[test]
    fn matmul_inner_mismatch() {
        let a = Tensor::zeros(&[2, 3]);
        let b = Tensor::zeros(&[2, 3]);
        assert!(matches!(a.matmul(&b), Err(Error::Dimension(_))));
    }

    #[test]
    fn matmul_infinity_propagates() {
        let a = t(&[1, 2], &[f32::INFINITY, f32::INFINITY]);
        let b = t(&[2, 2], &[1.0, -1.0, 2.0, 0.0]);
        let c = a.matmul(&b).unwrap();
        assert_eq!(c.data()[0], f32::INFINITY);
        // -Inf + Inf·0 -> Inf·0 is NaN
        assert!(c.data()[1].is_nan());
    }

    #[test]
    fn matmul_matches_naive_triple_loop() {
        let mut rng = Rng::new(5);
        let a = random(&mut rng, &[4, 7]);
        let b = random(&mut rng, &[7, 3]);
        let c = a.matmul(&b).unwrap();
        for i in 0..4 {
            for j in 0..3 {
                let mut acc = 0.0f32;
                for k in 0..7 {
                    acc += a.data()[i * 7 + k] * b.data()[k * 3 + j];
                }
                assert_eq!(acc.to_bits(), c.data()[i * 3 + j].to_bits());
            }
        }
    }

    #[test]
    fn conv_unit_kernel_is_identity() {
        let mut rng = Rng::new(2);
        let x = random(&mut rng, &[1, 4, 5]);
        let k = t(&[1, 1, 1, 1], &[1.0]);
        assert!(x.conv2d(&k, 1, 0).unwrap().bit_eq(&x));
    }

    #[test]
    fn conv_sum_of_ones() {
        let x = Tensor::full(&[1, 3, 3], 1.0);
        let k = Tensor::full(&[1, 1, 3, 3], 1.0);
        let y = x.conv2d(&k, 1, 0).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1]);
        assert_eq!(y.data(), &[9.0]);
    }

    #[test]
    fn conv_kernel_too_large() {
        let x = Tensor::zeros(&[1, 2, 2]);
        let k = Tensor::zeros(&[1, 1, 3, 3]);
        assert!(x.conv2d(&k, 1, 0).is_err());
        assert!(x.conv2d(&k, 1, 1).is_ok());
    }

    /// Pads explicitly, then runs six nested loops.
    fn conv_oracle(x: &Tensor, k: &Tensor, stride: usize, pad: usize) -> Tensor {
        let [c, h, w] = x.shape()[..] else { unreachable!() };
        let [f, _, ks, _] = k.shape()[..] else { unreachable!() };
        let (ph, pw) = (h + 2 * pad, w + 2 * pad);
        let mut padded = vec![0.0f32; c * ph * pw];
        for ci in 0..c {
            for y in 0..h {
                for xx in 0..w {
                    padded[ci * ph * pw + (y + pad) * pw + xx + pad] = x.data()[ci * h * w + y * w + xx];
                }
            }
        }
        let oh = (ph - ks) / stride + 1;
        let ow = (pw - ks) / stride + 1;
        let mut out = vec![0.0f32; f * oh * ow];
        for fi in 0..f {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = 0.0f32;
                    for ci in 0..c {
                        for ky in 0..ks {
                            for kx in 0..ks {
                                acc += padded[ci * ph * pw + (oy * stride + ky) * pw + ox * stride + kx]
                                    * k.data()[((fi * c + ci) * ks + ky) * ks + kx];
                            }
                        }
                    }
                    out[(fi * oh + oy) * ow + ox] = acc;
                }
            }
        }
        Tensor::new(vec![f, oh, ow], out).unwrap()
    }

    proptest! {
        #[test]
        fn conv_matches_oracle(seed in any::<u64>(), h in 3usize..=8, w in 3usize..=8,
                               c in 1usize..=3, f in 1usize..=3, ks in 1usize..=3,
                               stride in 1usize..=2, pad in 0usize..=1) {
            let mut rng = Rng::new(seed);
            let x = random(&mut rng, &[c, h, w]);
            let k = random(&mut rng, &[f, c, ks, ks]);
            let got = x.conv2d(&k, stride, pad).unwrap();
            prop_assert!(got.bit_eq(&conv_oracle(&x, &k, stride, pad)));
        }

        #[test]
        fn softmax_rows_sum_to_one(seed in any::<u64>(), rows in 1usize..5, cols in 1usize..9) {
            let mut rng = Rng::new(seed);
            let x = Tensor::from_fn(&[rows, cols], |_| rng.uniform(-50.0, 50.0));
            let y = x.softmax(1).unwrap();
            for row in y.data().chunks(cols) {
                let s: f32 = row.iter().sum();
                prop_assert!((s - 1.0).abs() <= 1e-6);
                prop_assert!(row.iter().all(|v| (0.0..=1.0).contains(v)));
            }
        }

        #[test]
        fn bits_roundtrip(bits in any::<u32>()) {
            let mut x = Tensor::zeros(&[2]);
            x.set_element_bits(1, bits).unwrap();
            prop_assert_eq!(x.element_bits(1).unwrap(), bits);
        }

        #[test]
        fn serialization_roundtrip(seed in any::<u64>(), dims in proptest::collection::vec(1usize..5, 0..4)) {
            let mut rng = Rng::new(seed);
            let x = Tensor::from_fn(&dims, |_| f32::from_bits(rng.next_u32()));
            let back = Tensor::read_from(&mut x.to_bytes().as_slice()).unwrap();
            prop_assert!(back.bit_eq(&x));
        }
    }

    #[test]
    fn element_bits_roundtrip_many_patterns() {
        let mut rng = Rng::new(77);
        let mut x = Tensor::zeros(&[1]);
        let specials = [0x7FC0_0001u32, 0xFFFF_FFFF, 0x7F80_0000, 0xFF80_0000, 0x8000_0000, 1];
        let patterns = specials.into_iter().chain((0..100_000).map(|_| rng.next_u32()));
        for bits in patterns {
            x.set_element_bits(0, bits).unwrap();
            assert_eq!(x.element_bits(0).unwrap(), bits);
        }
    }

    #[test]
    fn relu_examples() {
        let y = t(&[3], &[-1.0, 0.0, 2.0]).relu();
        assert_eq!(y.data(), &[0.0, 0.0, 2.0]);
        assert!(relu(f32::NAN).is_nan());
    }

    #[test]
    fn softmax_examples() {
        let y = t(&[2], &[0.0, 0.0]).softmax(0).unwrap();
        assert_eq!(y.data(), &[0.5, 0.5]);
        let y = t(&[2], &[1000.0, 0.0]).softmax(0).unwrap();
        assert_eq!(y.data(), &[1.0, 0.0]);
        assert!(t(&[2], &[1.0, 2.0]).softmax(1).is_err());
    }

    #[test]
    fn softmax_middle_axis() {
        let x = Tensor::from_fn(&[2, 3, 2], |i| i as f32 * 0.3);
        let y = x.softmax(1).unwrap();
        for o in 0..2 {
            for i in 0..2 {
                let s: f32 = (0..3).map(|j| y.data()[o * 6 + j * 2 + i]).sum();
                assert!((s - 1.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn element_bits_examples() {
        let mut x = t(&[2], &[1.0, 0.0]);
        assert_eq!(x.element_bits(0).unwrap(), 0x3F80_0000);
        assert_eq!(x.element_bits(1).unwrap(), 0);
        assert!(matches!(x.element_bits(2), Err(Error::Index { .. })));
        x.set_element_bits(1, 0x7FC0_1234).unwrap();
        assert_eq!(x.element_bits(1).unwrap(), 0x7FC0_1234);
    }

    #[test]
    fn layernorm_normalises_rows() {
        let x = t(&[2, 4], &[1.0, 2.0, 3.0, 4.0, -1.0, -1.0, 1.0, 1.0]);
        let y = x
            .layernorm(&Tensor::full(&[4], 1.0), &Tensor::zeros(&[4]), 1e-5)
            .unwrap();
        for row in y.data().chunks(4) {
            let (m, v) = mean_variance(row);
            assert!(m.abs() < 1e-6);
            assert!((v - 1.0).abs() < 1e-3);
        }
        assert!(x.layernorm(&Tensor::zeros(&[4]), &Tensor::zeros(&[4]), 0.0).is_err());
    }

    #[test]
    fn deterministic_ops() {
        let mut rng = Rng::new(3);
        let x = random(&mut rng, &[2, 6, 6]);
        let k = random(&mut rng, &[3, 2, 3, 3]);
        assert!(x.conv2d(&k, 2, 1).unwrap().bit_eq(&x.conv2d(&k, 2, 1).unwrap()));
    }

    #[test]
    fn truncated_tensor_is_format_error() {
        let bytes = Tensor::full(&[3, 3], 1.5).to_bytes();
        let err = Tensor::read_from(&mut &bytes[..bytes.len() - 2]).unwrap_err();
        assert!(matches!(err, Error::Format { .. }));
    }

    #[test]
    fn serialization_layout() {
        let bytes = t(&[1, 2], &[1.0, -0.0]).to_bytes();
        assert_eq!(
            bytes,
            [2, 0, 0, 0, 1, 0, 0, 0, 2, 0, 0, 0, 0, 0, 0x80, 0x3F, 0, 0, 0, 0x80]
        );
    }
}
