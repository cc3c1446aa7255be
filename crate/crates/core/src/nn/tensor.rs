/// Feature map stored channel-major: `data[(c * batch + b) * len + l]`.
///
/// Keeping channels outermost lets a convolution over the whole batch run as
/// one matrix product with no transposes.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub channels: usize,
    pub batch: usize,
    pub len: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(channels: usize, batch: usize, len: usize) -> Self {
        Self { channels, batch, len, data: vec![0.0; channels * batch * len] }
    }

    pub fn new(channels: usize, batch: usize, len: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), channels * batch * len, "tensor data length");
        Self { channels, batch, len, data }
    }

    /// Builds from the conventional `[batch, channels, len]` row-major order.
    pub fn from_bcl(batch: usize, channels: usize, len: usize, bcl: &[f64]) -> Self {
        assert_eq!(bcl.len(), channels * batch * len, "tensor data length");
        let mut t = Self::zeros(channels, batch, len);
        for b in 0..batch {
            for c in 0..channels {
                let src = &bcl[(b * channels + c) * len..(b * channels + c + 1) * len];
                t.lane_mut(c, b).copy_from_slice(src);
            }
        }
        t
    }

    pub fn to_bcl(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.data.len());
        for b in 0..self.batch {
            for c in 0..self.channels {
                out.extend_from_slice(self.lane(c, b));
            }
        }
        out
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.batch, self.len)
    }

    #[inline]
    pub fn idx(&self, c: usize, b: usize, l: usize) -> usize {
        (c * self.batch + b) * self.len + l
    }

    #[inline]
    pub fn lane(&self, c: usize, b: usize) -> &[f64] {
        let s = (c * self.batch + b) * self.len;
        &self.data[s..s + self.len]
    }

    #[inline]
    pub fn lane_mut(&mut self, c: usize, b: usize) -> &mut [f64] {
        let s = (c * self.batch + b) * self.len;
        &mut self.data[s..s + self.len]
    }

    /// All samples of one channel, contiguous.
    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.batch * self.len;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.batch * self.len;
        &mut self.data[c * n..(c + 1) * n]
    }

    pub fn same_shape(&self, other: &Tensor) -> bool {
        self.shape() == other.shape()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        debug_assert!(self.same_shape(other));
        self.data.iter_mut().zip(&other.data).for_each(|(a, b)| *a += b);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bcl_round_trip() {
        let bcl: Vec<f64> = (0..24).map(|x| x as f64).collect();
        let t = Tensor::from_bcl(2, 3, 4, &bcl);
        assert_eq!(t.lane(1, 0), &[4.0, 5.0, 6.0, 7.0]);
        assert_eq!(t.lane(0, 1), &[12.0, 13.0, 14.0, 15.0]);
        assert_eq!(t.to_bcl(), bcl);
    }
}
