use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::matrix::Matrix;
use crate::{Error, Result};

/// Frozen per-dimension input standardization followed by a tanh input
/// projection and one tanh recurrent layer:
///
/// ```text
/// x_t = (f_t - mean) * scale
/// u_t = tanh(W_in x_t + b_in)
/// h_t = tanh(W_x u_t + W_h h_{t-1} + b_h),  h_{-1} = 0
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    pub(crate) mean: Matrix,
    pub(crate) scale: Matrix,
    pub(crate) w_in: Matrix,
    pub(crate) b_in: Matrix,
    pub(crate) w_x: Matrix,
    pub(crate) w_h: Matrix,
    pub(crate) b_h: Matrix,
}

#[derive(Debug, Clone)]
pub struct EncoderCache {
    pub(crate) x: Matrix,
    pub(crate) u: Matrix,
    pub(crate) h: Matrix,
}

impl EncoderCache {
    pub fn hidden(&self) -> &Matrix {
        &self.h
    }
}

pub(crate) fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize, limit: f64) -> Matrix {
    Matrix::from_vec(
        rows,
        cols,
        (0..rows * cols).map(|_| rng.random_range(-limit..limit)).collect(),
    )
}

impl Encoder {
    pub fn new(n_inputs: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        let a_in = (1.0 / n_inputs as f64).sqrt();
        let a_h = (1.0 / hidden as f64).sqrt();
        Self {
            mean: Matrix::zeros(1, n_inputs),
            scale: Matrix::from_vec(1, n_inputs, vec![1.0; n_inputs]),
            w_in: uniform(rng, hidden, n_inputs, a_in),
            b_in: Matrix::zeros(hidden, 1),
            w_x: uniform(rng, hidden, hidden, a_h),
            w_h: uniform(rng, hidden, hidden, a_h),
            b_h: Matrix::zeros(hidden, 1),
        }
    }

    pub fn n_inputs(&self) -> usize {
        self.w_in.cols()
    }

    pub fn hidden(&self) -> usize {
        self.w_in.rows()
    }

    /// Set the frozen standardization from training features.
    pub fn fit_normalization<'a>(&mut self, features: impl IntoIterator<Item = &'a Matrix>) {
        let n = self.n_inputs();
        let mut sum = vec![0.0; n];
        let mut sq = vec![0.0; n];
        let mut count = 0usize;
        for m in features {
            for row in m.iter_rows() {
                for ((s, q), &v) in sum.iter_mut().zip(sq.iter_mut()).zip(row) {
                    *s += v;
                    *q += v * v;
                }
                count += 1;
            }
        }
        if count == 0 {
            return;
        }
        for i in 0..n {
            let mean = sum[i] / count as f64;
            let var = (sq[i] / count as f64 - mean * mean).max(0.0);
            self.mean.as_mut_slice()[i] = mean;
            self.scale.as_mut_slice()[i] = 1.0 / var.sqrt().max(1e-3);
        }
    }

    pub(crate) fn check_width(&self, features: &Matrix) -> Result<()> {
        if features.cols() != self.n_inputs() {
            return Err(Error::Contract(format!(
                "features have {} columns, model expects {}",
                features.cols(),
                self.n_inputs()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, features: &Matrix) -> Result<EncoderCache> {
        self.check_width(features)?;
        let (t_len, hid) = (features.rows(), self.hidden());
        let mut x = features.clone();
        for r in 0..t_len {
            for ((v, m), s) in x
                .row_mut(r)
                .iter_mut()
                .zip(self.mean.as_slice())
                .zip(self.scale.as_slice())
            {
                *v = (*v - m) * s;
            }
        }
        let mut u = Matrix::zeros(t_len, hid);
        let mut h = Matrix::zeros(t_len, hid);
        let mut pre = vec![0.0; hid];
        for t in 0..t_len {
            pre.copy_from_slice(self.b_in.as_slice());
            self.w_in.mul_vec_add(x.row(t), &mut pre);
            for (o, p) in u.row_mut(t).iter_mut().zip(&pre) {
                *o = p.tanh();
            }
            pre.copy_from_slice(self.b_h.as_slice());
            self.w_x.mul_vec_add(u.row(t), &mut pre);
            if t > 0 {
                let (before, after) = h.as_mut_slice().split_at_mut(t * hid);
                self.w_h.mul_vec_add(&before[(t - 1) * hid..], &mut pre);
                for (o, p) in after[..hid].iter_mut().zip(&pre) {
                    *o = p.tanh();
                }
            } else {
                for (o, p) in h.row_mut(0).iter_mut().zip(&pre) {
                    *o = p.tanh();
                }
            }
        }
        Ok(EncoderCache { x, u, h })
    }

    /// Backpropagation through time. Accumulates parameter gradients into
    /// `grads` when given and returns the gradient with respect to the raw
    /// (unnormalized) input features when `want_input` is set.
    pub fn backward(
        &self,
        cache: &EncoderCache,
        grad_h: &Matrix,
        mut grads: Option<&mut Encoder>,
        want_input: bool,
    ) -> Result<Option<Matrix>> {
        if grad_h.shape() != cache.h.shape() {
            return Err(Error::Contract(format!(
                "hidden gradient {:?} does not match cache {:?}",
                grad_h.shape(),
                cache.h.shape()
            )));
        }
        let (t_len, hid) = cache.h.shape();
        let mut input_grad = want_input.then(|| Matrix::zeros(t_len, self.n_inputs()));
        let mut dh_next = vec![0.0; hid];
        let mut da = vec![0.0; hid];
        let mut du = vec![0.0; hid];
        for t in (0..t_len).rev() {
            for i in 0..hid {
                let h = cache.h[(t, i)];
                da[i] = (grad_h[(t, i)] + dh_next[i]) * (1.0 - h * h);
            }
            dh_next.fill(0.0);
            if t > 0 {
                self.w_h.tr_mul_vec_add(&da, &mut dh_next);
            }
            du.fill(0.0);
            self.w_x.tr_mul_vec_add(&da, &mut du);
            for (d, &u) in du.iter_mut().zip(cache.u.row(t)) {
                *d *= 1.0 - u * u;
            }
            if let Some(g) = grads.as_deref_mut() {
                g.w_x.add_outer(&da, cache.u.row(t));
                if t > 0 {
                    g.w_h.add_outer(&da, cache.h.row(t - 1));
                }
                crate::matrix::axpy(1.0, &da, g.b_h.as_mut_slice());
                g.w_in.add_outer(&du, cache.x.row(t));
                crate::matrix::axpy(1.0, &du, g.b_in.as_mut_slice());
            }
            if let Some(ig) = input_grad.as_mut() {
                let row = ig.row_mut(t);
                self.w_in.tr_mul_vec_add(&du, row);
                for (v, s) in row.iter_mut().zip(self.scale.as_slice()) {
                    *v *= s;
                }
            }
        }
        Ok(input_grad)
    }

    pub(crate) fn zeros_like(&self) -> Self {
        let z = |m: &Matrix| Matrix::zeros(m.rows(), m.cols());
        Self {
            mean: self.mean.clone(),
            scale: self.scale.clone(),
            w_in: z(&self.w_in),
            b_in: z(&self.b_in),
            w_x: z(&self.w_x),
            w_h: z(&self.w_h),
            b_h: z(&self.b_h),
        }
    }

    pub(crate) fn trainable(&self) -> Vec<&Matrix> {
        vec![&self.w_in, &self.b_in, &self.w_x, &self.w_h, &self.b_h]
    }

    pub(crate) fn trainable_mut(&mut self) -> Vec<&mut Matrix> {
        vec![
            &mut self.w_in,
            &mut self.b_in,
            &mut self.w_x,
            &mut self.w_h,
            &mut self.b_h,
        ]
    }

    pub(crate) fn all_tensors(&self) -> Vec<&Matrix> {
        let mut v = vec![&self.mean, &self.scale];
        v.extend(self.trainable());
        v
    }

    pub(crate) fn all_tensors_mut(&mut self) -> Vec<&mut Matrix> {
        vec![
            &mut self.mean,
            &mut self.scale,
            &mut self.w_in,
            &mut self.b_in,
            &mut self.w_x,
            &mut self.w_h,
            &mut self.b_h,
        ]
    }
}
