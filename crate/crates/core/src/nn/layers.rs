use rand::Rng;

use super::{gemm, Conv1d, Module, Param, Tensor};

/// Per-channel learned scale and shift with no batch statistics, so train and
/// eval forward passes agree exactly.
#[derive(Debug, Clone)]
pub struct Affine {
    pub scale: Param,
    pub shift: Param,
    input: Option<Tensor>,
}

impl Affine {
    pub fn new(channels: usize) -> Self {
        Self::with_scale(channels, 1.0)
    }

    pub fn with_scale(channels: usize, init: f64) -> Self {
        Self { scale: Param::filled(channels, init), shift: Param::zeros(channels), input: None }
    }

    pub fn forward(&mut self, x: &Tensor) -> Tensor {
        assert_eq!(x.channels, self.scale.len(), "affine channels");
        let mut y = x.clone();
        for c in 0..x.channels {
            let (g, b) = (self.scale.value[c], self.shift.value[c]);
            y.channel_mut(c).iter_mut().for_each(|v| *v = g * *v + b);
        }
        self.input = Some(x.clone());
        y
    }

    pub fn backward(&mut self, gy: &Tensor) -> Tensor {
        let x = self.input.as_ref().expect("backward before forward");
        let mut dx = gy.clone();
        for c in 0..x.channels {
            let (mut dg, mut db) = (0.0, 0.0);
            for (g, v) in gy.channel(c).iter().zip(x.channel(c)) {
                dg += g * v;
                db += g;
            }
            self.scale.grad[c] += dg;
            self.shift.grad[c] += db;
            let s = self.scale.value[c];
            dx.channel_mut(c).iter_mut().for_each(|v| *v *= s);
        }
        dx
    }
}

impl Module for Affine {
    fn visit(&mut self, f: &mut dyn FnMut(&mut Param)) {
        f(&mut self.scale);
        f(&mut self.shift);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActivationKind {
    Relu,
    /// `[relu(x), relu(-x)]` stacked on the channel axis.
    CRelu,
}

#[derive(Debug, Clone)]
pub struct Activation {
    pub kind: ActivationKind,
    input: Option<Tensor>,
}

impl Activation {
    pub fn new(kind: ActivationKind) -> Self {
        Self { kind, input: None }
    }

    pub fn out_channels(&self, cin: usize) -> usize {
        match self.kind {
            ActivationKind::Relu => cin,
            ActivationKind::CRelu => 2 * cin,
        }
    }

    pub fn forward(&mut self, x: &Tensor) -> Tensor {
        let y = match self.kind {
            ActivationKind::Relu => {
                let mut y = x.clone();
                y.data.iter_mut().for_each(|v| *v = v.max(0.0));
                y
            }
            ActivationKind::CRelu => {
                let mut data = Vec::with_capacity(2 * x.data.len());
                data.extend(x.data.iter().map(|v| v.max(0.0)));
                data.extend(x.data.iter().map(|v| (-v).max(0.0)));
                Tensor::new(2 * x.channels, x.batch, x.len, data)
            }
        };
        self.input = Some(x.clone());
        y
    }

    pub fn backward(&mut self, gy: &Tensor) -> Tensor {
        let x = self.input.as_ref().expect("backward before forward");
        let mut dx = Tensor::zeros(x.channels, x.batch, x.len);
        match self.kind {
            ActivationKind::Relu => {
                for ((d, g), v) in dx.data.iter_mut().zip(&gy.data).zip(&x.data) {
                    if *v > 0.0 {
                        *d = *g;
                    }
                }
            }
            ActivationKind::CRelu => {
                let n = x.data.len();
                let (pos, neg) = gy.data.split_at(n);
                for (i, v) in x.data.iter().enumerate() {
                    if *v > 0.0 {
                        dx.data[i] = pos[i];
                    } else if *v < 0.0 {
                        dx.data[i] = -neg[i];
                    }
                }
            }
        }
        dx
    }
}

/// Max pooling with implicit `-inf` padding.
#[derive(Debug, Clone)]
pub struct MaxPool1d {
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    argmax: Vec<usize>,
    in_shape: (usize, usize, usize),
}

impl MaxPool1d {
    pub fn new(kernel: usize, stride: usize, pad: usize) -> Self {
        Self { kernel, stride, pad, argmax: Vec::new(), in_shape: (0, 0, 0) }
    }

    pub fn out_len(&self, len: usize) -> usize {
        (len + 2 * self.pad - self.kernel) / self.stride + 1
    }

    pub fn forward(&mut self, x: &Tensor) -> Tensor {
        let (c, b, l) = x.shape();
        let lout = self.out_len(l);
        let mut y = Tensor::zeros(c, b, lout);
        self.argmax = vec![0; c * b * lout];
        for ch in 0..c {
            for s in 0..b {
                let base = x.idx(ch, s, 0);
                let src = x.lane(ch, s);
                for lo in 0..lout {
                    let first = (lo * self.stride) as isize - self.pad as isize;
                    let mut best = f64::NEG_INFINITY;
                    let mut at = 0;
                    for kk in 0..self.kernel {
                        let p = first + kk as isize;
                        if p >= 0 && (p as usize) < l && src[p as usize] > best {
                            best = src[p as usize];
                            at = p as usize;
                        }
                    }
                    let o = y.idx(ch, s, lo);
                    y.data[o] = best;
                    self.argmax[o] = base + at;
                }
            }
        }
        self.in_shape = x.shape();
        y
    }

    pub fn backward(&mut self, gy: &Tensor) -> Tensor {
        let (c, b, l) = self.in_shape;
        let mut dx = Tensor::zeros(c, b, l);
        for (g, &i) in gy.data.iter().zip(&self.argmax) {
            dx.data[i] += g;
        }
        dx
    }
}

/// Non-overlapping average pooling (`kernel == stride`); a trailing partial
/// window averages only the positions it covers.
#[derive(Debug, Clone)]
pub struct AvgPool1d {
    pub kernel: usize,
    in_shape: (usize, usize, usize),
}

impl AvgPool1d {
    pub fn new(kernel: usize) -> Self {
        Self { kernel, in_shape: (0, 0, 0) }
    }

    pub fn out_len(&self, len: usize) -> usize {
        len.div_ceil(self.kernel)
    }

    pub fn forward(&mut self, x: &Tensor) -> Tensor {
        let (c, b, l) = x.shape();
        let lout = self.out_len(l);
        let mut y = Tensor::zeros(c, b, lout);
        for ch in 0..c {
            for s in 0..b {
                let src = x.lane(ch, s);
                let dst = y.lane_mut(ch, s);
                for (lo, d) in dst.iter_mut().enumerate() {
                    let w = &src[lo * self.kernel..((lo + 1) * self.kernel).min(l)];
                    *d = w.iter().sum::<f64>() / w.len() as f64;
                }
            }
        }
        self.in_shape = x.shape();
        y
    }

    pub fn backward(&mut self, gy: &Tensor) -> Tensor {
        let (c, b, l) = self.in_shape;
        let mut dx = Tensor::zeros(c, b, l);
        for ch in 0..c {
            for s in 0..b {
                let g = gy.lane(ch, s);
                let dst = dx.lane_mut(ch, s);
                for (lo, gv) in g.iter().enumerate() {
                    let end = ((lo + 1) * self.kernel).min(l);
                    let w = (end - lo * self.kernel) as f64;
                    dst[lo * self.kernel..end].iter_mut().for_each(|d| *d += gv / w);
                }
            }
        }
        dx
    }
}

/// Mean over the length axis, output length 1.
#[derive(Debug, Clone, Default)]
pub struct GlobalAvgPool {
    in_shape: (usize, usize, usize),
}

impl GlobalAvgPool {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn forward(&mut self, x: &Tensor) -> Tensor {
        let (c, b, l) = x.shape();
        let mut y = Tensor::zeros(c, b, 1);
        for ch in 0..c {
            for s in 0..b {
                y.data[ch * b + s] = x.lane(ch, s).iter().sum::<f64>() / l as f64;
            }
        }
        self.in_shape = x.shape();
        y
    }

    pub fn backward(&mut self, gy: &Tensor) -> Tensor {
        let (c, b, l) = self.in_shape;
        let mut dx = Tensor::zeros(c, b, l);
        for ch in 0..c {
            for s in 0..b {
                let g = gy.data[ch * b + s] / l as f64;
                dx.lane_mut(ch, s).fill(g);
            }
        }
        dx
    }
}

/// Spatial gate: `x * sigmoid(conv1x1(x))`, one gate value per position
/// shared across channels.
#[derive(Debug, Clone)]
pub struct Gate {
    pub conv: Conv1d,
    input: Option<Tensor>,
    gate: Vec<f64>,
}

impl Gate {
    pub fn new<R: Rng + ?Sized>(channels: usize, rng: &mut R) -> Self {
        Self { conv: Conv1d::new(channels, 1, 1, 1, 0, rng), input: None, gate: Vec::new() }
    }

    pub fn forward(&mut self, x: &Tensor) -> Tensor {
        let z = self.conv.forward(x);
        self.gate = z.data.iter().map(|v| 1.0 / (1.0 + (-v).exp())).collect();
        let mut y = x.clone();
        for ch in 0..x.channels {
            y.channel_mut(ch).iter_mut().zip(&self.gate).for_each(|(v, g)| *v *= g);
        }
        self.input = Some(x.clone());
        y
    }

    pub fn backward(&mut self, gy: &Tensor) -> Tensor {
        let x = self.input.take().expect("backward before forward");
        let (c, b, l) = x.shape();
        let mut dz = Tensor::zeros(1, b, l);
        let mut dx = gy.clone();
        for ch in 0..c {
            for (i, ((d, gv), xv)) in dx.channel_mut(ch).iter_mut().zip(gy.channel(ch)).zip(x.channel(ch)).enumerate() {
                dz.data[i] += gv * xv;
                *d *= self.gate[i];
            }
        }
        for (d, g) in dz.data.iter_mut().zip(&self.gate) {
            *d *= g * (1.0 - g);
        }
        let back = self.conv.backward(&dz);
        dx.add_assign(&back);
        self.input = Some(x);
        dx
    }
}

impl Module for Gate {
    fn visit(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.conv.visit(f);
    }
}

/// Fully connected layer on `[features, batch, 1]` tensors.
#[derive(Debug, Clone)]
pub struct Linear {
    pub fin: usize,
    pub fout: usize,
    pub weight: Param,
    pub bias: Param,
    input: Option<Tensor>,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(fin: usize, fout: usize, rng: &mut R) -> Self {
        // std = 1/sqrt(fin)
        Self {
            fin,
            fout,
            weight: Param::kaiming(fout * fin, fin, 0.5_f64.sqrt(), rng),
            bias: Param::zeros(fout),
            input: None,
        }
    }

    pub fn forward(&mut self, x: &Tensor) -> Tensor {
        assert_eq!((x.channels, x.len), (self.fin, 1), "linear input shape");
        let b = x.batch;
        let mut y = Tensor::zeros(self.fout, b, 1);
        for o in 0..self.fout {
            y.channel_mut(o).fill(self.bias.value[o]);
        }
        gemm(self.fout, self.fin, b, 1.0, &self.weight.value, (self.fin as isize, 1), &x.data, (b as isize, 1), 1.0, &mut y.data);
        self.input = Some(x.clone());
        y
    }

    pub fn backward(&mut self, gy: &Tensor) -> Tensor {
        let x = self.input.as_ref().expect("backward before forward");
        let b = x.batch;
        for o in 0..self.fout {
            self.bias.grad[o] += gy.channel(o).iter().sum::<f64>();
        }
        gemm(self.fout, b, self.fin, 1.0, &gy.data, (b as isize, 1), &x.data, (1, b as isize), 1.0, &mut self.weight.grad);
        let mut dx = Tensor::zeros(self.fin, b, 1);
        gemm(self.fin, self.fout, b, 1.0, &self.weight.value, (1, self.fin as isize), &gy.data, (b as isize, 1), 0.0, &mut dx.data);
        dx
    }
}

impl Module for Linear {
    fn visit(&mut self, f: &mut dyn FnMut(&mut Param)) {
        f(&mut self.weight);
        f(&mut self.bias);
    }
}
