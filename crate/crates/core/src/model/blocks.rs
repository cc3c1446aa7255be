use rand::Rng;

use super::site::DropoutSite;
use super::{ModelError, StepContext, Trace};
use crate::dropout::Mode;
use crate::nn::{Activation, ActivationKind, Affine, AvgPool1d, Conv1d, Gate, MaxPool1d, Module, Param, Tensor};

/// Pre-activation unit: norm, activation, convolution.
#[derive(Debug, Clone)]
pub(crate) struct Unit {
    norm: Affine,
    act: Activation,
    conv: Conv1d,
}

impl Unit {
    #[allow(clippy::too_many_arguments)]
    fn new<R: Rng + ?Sized>(
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        act: ActivationKind,
        gain: f64,
        rng: &mut R,
    ) -> Self {
        let act = Activation::new(act);
        let width = act.out_channels(cin);
        Self { norm: Affine::new(cin), act, conv: Conv1d::with_gain(width, cout, kernel, stride, kernel / 2, gain, rng) }
    }

    fn forward(&mut self, x: &Tensor) -> Tensor {
        let h = self.norm.forward(x);
        let h = self.act.forward(&h);
        self.conv.forward(&h)
    }

    fn backward(&mut self, g: &Tensor) -> Tensor {
        let g = self.conv.backward(g);
        let g = self.act.backward(&g);
        self.norm.backward(&g)
    }
}

impl Module for Unit {
    fn visit(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.norm.visit(f);
        self.conv.visit(f);
    }
}

/// Projection shortcut: average pool then 1x1 conv on the raw block input.
#[derive(Debug, Clone)]
struct Shortcut {
    pool: Option<AvgPool1d>,
    conv: Conv1d,
}

impl Shortcut {
    fn forward(&mut self, x: &Tensor) -> Tensor {
        match &mut self.pool {
            Some(p) => {
                let h = p.forward(x);
                self.conv.forward(&h)
            }
            None => self.conv.forward(x),
        }
    }

    fn backward(&mut self, g: &Tensor) -> Tensor {
        let g = self.conv.backward(g);
        match &mut self.pool {
            Some(p) => p.backward(&g),
            None => g,
        }
    }
}

/// Block geometry; `mid == None` means a basic two-conv block.
#[derive(Debug, Clone, Copy)]
pub(crate) struct BlockSpec {
    pub cin: usize,
    pub cout: usize,
    pub mid: Option<usize>,
    pub stride: usize,
    pub act: ActivationKind,
    /// Init gain of the last conv of the residual branch.
    pub branch_gain: f64,
}

#[derive(Debug, Clone)]
pub(crate) struct ResBlock {
    pub layer: u8,
    pub name: String,
    units: Vec<Unit>,
    shortcut: Option<Shortcut>,
    pub inside: DropoutSite,
    pub outside: DropoutSite,
}

impl ResBlock {
    pub fn new<R: Rng + ?Sized>(layer: u8, index: usize, s: BlockSpec, rng: &mut R) -> Self {
        let name = format!("layer{layer}.{index}");
        let units = match s.mid {
            None => vec![
                Unit::new(s.cin, s.cout, 3, s.stride, s.act, 1.0, rng),
                Unit::new(s.cout, s.cout, 3, 1, s.act, s.branch_gain, rng),
            ],
            Some(mid) => vec![
                Unit::new(s.cin, mid, 1, 1, s.act, 1.0, rng),
                Unit::new(mid, mid, 3, s.stride, s.act, 1.0, rng),
                Unit::new(mid, s.cout, 1, 1, s.act, s.branch_gain, rng),
            ],
        };
        let shortcut = (s.stride > 1 || s.cin != s.cout).then(|| Shortcut {
            pool: (s.stride > 1).then(|| AvgPool1d::new(s.stride)),
            conv: Conv1d::new(s.cin, s.cout, 1, 1, 0, rng),
        });
        Self {
            inside: DropoutSite::empty(format!("{name}.inside")),
            outside: DropoutSite::empty(format!("{name}.outside")),
            layer,
            name,
            units,
            shortcut,
        }
    }

    pub fn forward(&mut self, x: &Tensor, mode: Mode, ctx: StepContext, trace: &mut Trace) -> Result<Tensor, ModelError> {
        let mut h = x.clone();
        for u in &mut self.units {
            h = u.forward(&h);
        }
        trace.record(&format!("{}.branch", self.name), &h)?;
        let h = self.inside.forward(h, mode, ctx)?;
        trace.record(&self.inside.name, &h)?;
        let mut y = match &mut self.shortcut {
            Some(s) => s.forward(x),
            None => x.clone(),
        };
        y.add_assign(&h);
        trace.record(&format!("{}.add", self.name), &y)?;
        let y = self.outside.forward(y, mode, ctx)?;
        trace.record(&self.outside.name, &y)?;
        Ok(y)
    }

    pub fn backward(&mut self, g: Tensor) -> Tensor {
        let g = self.outside.backward(g);
        let mut gb = self.inside.backward(g.clone());
        for u in self.units.iter_mut().rev() {
            gb = u.backward(&gb);
        }
        let gs = match &mut self.shortcut {
            Some(s) => s.backward(&g),
            None => g,
        };
        gb.add_assign(&gs);
        gb
    }
}

impl Module for ResBlock {
    fn visit(&mut self, f: &mut dyn FnMut(&mut Param)) {
        for u in &mut self.units {
            u.visit(f);
        }
        if let Some(s) = &mut self.shortcut {
            s.conv.visit(f);
        }
    }
}

/// Input convolution, norm, activation and max pool.
#[derive(Debug, Clone)]
pub(crate) struct Stem {
    conv: Conv1d,
    norm: Affine,
    act: Activation,
    pool: MaxPool1d,
}

impl Stem {
    pub fn new<R: Rng + ?Sized>(conv_width: usize, act: ActivationKind, rng: &mut R) -> Self {
        let mut conv = Conv1d::new(1, conv_width, 7, 2, 3, rng);
        conv.input_grad = false;
        Self { conv, norm: Affine::new(conv_width), act: Activation::new(act), pool: MaxPool1d::new(3, 2, 1) }
    }

    pub fn forward(&mut self, x: &Tensor) -> Tensor {
        let h = self.conv.forward(x);
        let h = self.norm.forward(&h);
        let h = self.act.forward(&h);
        self.pool.forward(&h)
    }

    pub fn backward(&mut self, g: &Tensor) {
        let g = self.pool.backward(g);
        let g = self.act.backward(&g);
        let g = self.norm.backward(&g);
        self.conv.backward(&g);
    }
}

impl Module for Stem {
    fn visit(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.conv.visit(f);
        self.norm.visit(f);
    }
}

/// Condenser block: norm, ReLU, depthwise stride-2 conv, optional gate.
#[derive(Debug, Clone)]
pub(crate) struct CondenserBlock {
    norm: Affine,
    act: Activation,
    conv: Conv1d,
    gate: Option<Gate>,
}

impl CondenserBlock {
    pub fn new<R: Rng + ?Sized>(channels: usize, attention: bool, rng: &mut R) -> Self {
        Self {
            norm: Affine::new(channels),
            act: Activation::new(ActivationKind::Relu),
            conv: Conv1d::depthwise(channels, 3, 2, 1, rng),
            gate: attention.then(|| Gate::new(channels, rng)),
        }
    }

    pub fn forward(&mut self, x: &Tensor) -> Tensor {
        let h = self.norm.forward(x);
        let h = self.act.forward(&h);
        let h = self.conv.forward(&h);
        match &mut self.gate {
            Some(g) => g.forward(&h),
            None => h,
        }
    }

    pub fn backward(&mut self, g: &Tensor) -> Tensor {
        let g = match &mut self.gate {
            Some(gate) => gate.backward(g),
            None => g.clone(),
        };
        let g = self.conv.backward(&g);
        let g = self.act.backward(&g);
        self.norm.backward(&g)
    }
}

impl Module for CondenserBlock {
    fn visit(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.norm.visit(f);
        self.conv.visit(f);
        if let Some(g) = &mut self.gate {
            g.visit(f);
        }
    }
}
