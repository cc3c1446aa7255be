use rand::Rng;

use super::{gemm, Module, Param, Tensor};

/// 1D convolution, either dense (`groups = 1`) or depthwise
/// (`groups = channels`).
#[derive(Debug, Clone)]
pub struct Conv1d {
    pub cin: usize,
    pub cout: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub depthwise: bool,
    pub weight: Param,
    pub bias: Param,
    /// Skip the input gradient (first layer).
    pub input_grad: bool,
    cols: Vec<f64>,
    input: Option<Tensor>,
    in_shape: Option<(usize, usize, usize)>,
    lout: usize,
}

impl Conv1d {
    pub fn new<R: Rng + ?Sized>(cin: usize, cout: usize, kernel: usize, stride: usize, pad: usize, rng: &mut R) -> Self {
        Self::with_gain(cin, cout, kernel, stride, pad, 1.0, rng)
    }

    pub fn with_gain<R: Rng + ?Sized>(
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        gain: f64,
        rng: &mut R,
    ) -> Self {
        Self {
            cin,
            cout,
            kernel,
            stride,
            pad,
            depthwise: false,
            weight: Param::kaiming(cout * cin * kernel, cin * kernel, gain, rng),
            bias: Param::zeros(cout),
            input_grad: true,
            cols: Vec::new(),
            input: None,
            in_shape: None,
            lout: 0,
        }
    }

    pub fn depthwise<R: Rng + ?Sized>(channels: usize, kernel: usize, stride: usize, pad: usize, rng: &mut R) -> Self {
        Self {
            cin: channels,
            cout: channels,
            kernel,
            stride,
            pad,
            depthwise: true,
            weight: Param::kaiming(channels * kernel, kernel, 1.0, rng),
            bias: Param::zeros(channels),
            input_grad: true,
            cols: Vec::new(),
            input: None,
            in_shape: None,
            lout: 0,
        }
    }

    pub fn out_len(&self, len: usize) -> usize {
        (len + 2 * self.pad - self.kernel) / self.stride + 1
    }

    pub fn forward(&mut self, x: &Tensor) -> Tensor {
        assert_eq!(x.channels, self.cin, "conv input channels");
        assert!(x.len + 2 * self.pad >= self.kernel, "conv input too short");
        if self.depthwise {
            return self.forward_depthwise(x);
        }
        let (b, l) = (x.batch, x.len);
        let lout = self.out_len(l);
        let n = b * lout;
        let rows = self.cin * self.kernel;
        self.cols.clear();
        self.cols.resize(rows * n, 0.0);
        for ci in 0..self.cin {
            for kk in 0..self.kernel {
                let row = &mut self.cols[(ci * self.kernel + kk) * n..(ci * self.kernel + kk + 1) * n];
                for s in 0..b {
                    let src = x.lane(ci, s);
                    let dst = &mut row[s * lout..(s + 1) * lout];
                    for (lo, d) in dst.iter_mut().enumerate() {
                        let pos = (lo * self.stride + kk) as isize - self.pad as isize;
                        if pos >= 0 && (pos as usize) < l {
                            *d = src[pos as usize];
                        }
                    }
                }
            }
        }
        let mut y = Tensor::zeros(self.cout, b, lout);
        for co in 0..self.cout {
            y.channel_mut(co).fill(self.bias.value[co]);
        }
        gemm(self.cout, rows, n, 1.0, &self.weight.value, (rows as isize, 1), &self.cols, (n as isize, 1), 1.0, &mut y.data);
        self.lout = lout;
        self.in_shape = Some(x.shape());
        y
    }

    fn forward_depthwise(&mut self, x: &Tensor) -> Tensor {
        let (c, b, l) = x.shape();
        let lout = self.out_len(l);
        let mut y = Tensor::zeros(c, b, lout);
        for ch in 0..c {
            let w = &self.weight.value[ch * self.kernel..(ch + 1) * self.kernel];
            for s in 0..b {
                let src = x.lane(ch, s);
                let dst = y.lane_mut(ch, s);
                for (lo, d) in dst.iter_mut().enumerate() {
                    let mut acc = self.bias.value[ch];
                    for (kk, wk) in w.iter().enumerate() {
                        let pos = (lo * self.stride + kk) as isize - self.pad as isize;
                        if pos >= 0 && (pos as usize) < l {
                            acc += wk * src[pos as usize];
                        }
                    }
                    *d = acc;
                }
            }
        }
        self.lout = lout;
        self.input = Some(x.clone());
        self.in_shape = Some(x.shape());
        y
    }

    pub fn backward(&mut self, gy: &Tensor) -> Tensor {
        let shape = self.in_shape.expect("backward before forward");
        if self.depthwise {
            return self.backward_depthwise(gy);
        }
        let (cin, b, l) = shape;
        let lout = self.lout;
        let n = b * lout;
        let rows = self.cin * self.kernel;
        assert_eq!(gy.shape(), (self.cout, b, lout), "conv grad shape");
        for co in 0..self.cout {
            self.bias.grad[co] += gy.channel(co).iter().sum::<f64>();
        }
        // dW [cout, rows] += gy [cout, n] * cols^T [n, rows]
        gemm(self.cout, n, rows, 1.0, &gy.data, (n as isize, 1), &self.cols, (1, n as isize), 1.0, &mut self.weight.grad);
        let mut dx = Tensor::zeros(cin, b, l);
        if !self.input_grad {
            return dx;
        }
        // dcols [rows, n] = W^T [rows, cout] * gy [cout, n]
        let mut dcols = vec![0.0; rows * n];
        gemm(rows, self.cout, n, 1.0, &self.weight.value, (1, rows as isize), &gy.data, (n as isize, 1), 0.0, &mut dcols);
        for ci in 0..cin {
            for kk in 0..self.kernel {
                let row = &dcols[(ci * self.kernel + kk) * n..(ci * self.kernel + kk + 1) * n];
                for s in 0..b {
                    let src = &row[s * lout..(s + 1) * lout];
                    let dst = dx.lane_mut(ci, s);
                    for (lo, g) in src.iter().enumerate() {
                        let pos = (lo * self.stride + kk) as isize - self.pad as isize;
                        if pos >= 0 && (pos as usize) < l {
                            dst[pos as usize] += g;
                        }
                    }
                }
            }
        }
        dx
    }

    fn backward_depthwise(&mut self, gy: &Tensor) -> Tensor {
        let x = self.input.as_ref().expect("backward before forward");
        let (c, b, l) = x.shape();
        let mut dx = Tensor::zeros(c, b, l);
        for ch in 0..c {
            for s in 0..b {
                let g = gy.lane(ch, s);
                let src = x.lane(ch, s);
                for (lo, &gv) in g.iter().enumerate() {
                    self.bias.grad[ch] += gv;
                    for kk in 0..self.kernel {
                        let pos = (lo * self.stride + kk) as isize - self.pad as isize;
                        if pos >= 0 && (pos as usize) < l {
                            let p = pos as usize;
                            self.weight.grad[ch * self.kernel + kk] += gv * src[p];
                            dx.data[(ch * b + s) * l + p] += gv * self.weight.value[ch * self.kernel + kk];
                        }
                    }
                }
            }
        }
        dx
    }
}

impl Module for Conv1d {
    fn visit(&mut self, f: &mut dyn FnMut(&mut Param)) {
        f(&mut self.weight);
        f(&mut self.bias);
    }
}
