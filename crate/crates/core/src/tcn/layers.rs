//! Dense matrices and the two layer kinds the TCN is built from.
//!
//! Weights are stored input-major (`[tap][in][out]` for convolutions,
//! `[in][out]` for dense layers) so the forward pass is a sequence of
//! contiguous axpy updates over output channels.

use num_traits::Float;

/// Row-major `rows × cols` matrix; rows are time steps.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<T>,
}

impl<T: Float> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn from_rows<R: AsRef<[T]>>(rows: &[R]) -> Self {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.as_ref().len(), cols, "ragged rows");
            data.extend_from_slice(r.as_ref());
        }
        Self {
            rows: rows.len(),
            cols,
            data,
        }
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [T] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }
}

#[inline]
pub(crate) fn axpy<T: Float>(alpha: T, x: &[T], y: &mut [T]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi = *yi + alpha * xi;
    }
}

/// Dot product with four independent partial sums.
#[inline]
pub(crate) fn dot<T: Float>(a: &[T], b: &[T]) -> T {
    let n = a.len().min(b.len());
    let mut acc = [T::zero(); 4];
    let chunks = n / 4;
    for c in 0..chunks {
        let i = c * 4;
        acc[0] = acc[0] + a[i] * b[i];
        acc[1] = acc[1] + a[i + 1] * b[i + 1];
        acc[2] = acc[2] + a[i + 2] * b[i + 2];
        acc[3] = acc[3] + a[i + 3] * b[i + 3];
    }
    let mut tail = T::zero();
    for i in chunks * 4..n {
        tail = tail + a[i] * b[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Causal dilated 1-D convolution. Tap `j` multiplies the input `j·dilation`
/// frames in the past; frames before the start read as zero.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv1d<T> {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_size: usize,
    pub dilation: usize,
    /// `[tap][in][out]`.
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Float> Conv1d<T> {
    pub fn zeros(in_channels: usize, out_channels: usize, kernel_size: usize, dilation: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel_size,
            dilation,
            weight: vec![T::zero(); kernel_size * in_channels * out_channels],
            bias: vec![T::zero(); out_channels],
        }
    }

    #[inline]
    pub fn tap_input(&self, tap: usize, input: usize) -> &[T] {
        let start = (tap * self.in_channels + input) * self.out_channels;
        &self.weight[start..start + self.out_channels]
    }

    pub fn set_weight(&mut self, tap: usize, input: usize, output: usize, value: T) {
        self.weight[(tap * self.in_channels + input) * self.out_channels + output] = value;
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    /// Computes output rows where `rows[t]` is set (all rows when `None`);
    /// other rows are left at zero.
    pub fn forward_rows(&self, input: &Matrix<T>, rows: Option<&[bool]>) -> Matrix<T> {
        assert_eq!(input.cols, self.in_channels, "conv input channels");
        let mut out = Matrix::zeros(input.rows, self.out_channels);
        for t in 0..input.rows {
            if rows.is_some_and(|r| !r[t]) {
                continue;
            }
            let o = out.row_mut(t);
            o.copy_from_slice(&self.bias);
            for tap in 0..self.kernel_size {
                let lag = tap * self.dilation;
                if lag > t {
                    break;
                }
                let x = input.row(t - lag);
                for (i, &xi) in x.iter().enumerate() {
                    if xi != T::zero() {
                        axpy(xi, self.tap_input(tap, i), o);
                    }
                }
            }
        }
        out
    }
}

/// Output length equals input length; see [`Conv1d`].
pub fn dilated_causal_conv<T: Float>(input: &Matrix<T>, conv: &Conv1d<T>) -> Matrix<T> {
    conv.forward_rows(input, None)
}

/// Fully connected layer, also used as a 1×1 convolution.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T> {
    pub in_features: usize,
    pub out_features: usize,
    /// `[in][out]`.
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Float> Dense<T> {
    pub fn zeros(in_features: usize, out_features: usize) -> Self {
        Self {
            in_features,
            out_features,
            weight: vec![T::zero(); in_features * out_features],
            bias: vec![T::zero(); out_features],
        }
    }

    #[inline]
    pub fn input_row(&self, input: usize) -> &[T] {
        &self.weight[input * self.out_features..(input + 1) * self.out_features]
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    pub fn forward_into(&self, x: &[T], out: &mut [T]) {
        out.copy_from_slice(&self.bias);
        for (i, &xi) in x.iter().enumerate() {
            if xi != T::zero() {
                axpy(xi, self.input_row(i), out);
            }
        }
    }

    pub fn forward(&self, x: &[T]) -> Vec<T> {
        let mut out = vec![T::zero(); self.out_features];
        self.forward_into(x, &mut out);
        out
    }
}

/// Numerically stable softmax.
pub fn softmax<T: Float>(logits: &[T]) -> Vec<T> {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum = exps.iter().copied().fold(T::zero(), |a, b| a + b);
    exps.into_iter().map(|e| e / sum).collect()
}
