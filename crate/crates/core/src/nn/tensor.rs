use crate::error::{Error, Result};

/// Dense `[n, c, h, w]` tensor in row-major order. Feature matrices use
/// `h = w = 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: [usize; 4],
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: [usize; 4]) -> Self {
        Tensor {
            shape,
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn from_vec(shape: [usize; 4], data: Vec<f64>) -> Result<Self> {
        let n = shape.iter().product();
        if data.len() != n {
            return Err(Error::shape("tensor data", n, data.len()));
        }
        Ok(Tensor { shape, data })
    }

    /// `[rows, cols]` matrix stored as `[rows, cols, 1, 1]`.
    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Tensor::from_vec([rows, cols, 1, 1], data)
    }

    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }

    pub fn batch(&self) -> usize {
        self.shape[0]
    }

    pub fn channels(&self) -> usize {
        self.shape[1]
    }

    pub fn height(&self) -> usize {
        self.shape[2]
    }

    pub fn width(&self) -> usize {
        self.shape[3]
    }

    /// Elements per batch entry.
    pub fn sample_len(&self) -> usize {
        self.shape[1] * self.shape[2] * self.shape[3]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        let l = self.sample_len();
        &self.data[i * l..(i + 1) * l]
    }

    /// Same data viewed as `[n, c*h*w, 1, 1]`.
    pub fn flatten(self) -> Tensor {
        let l = self.sample_len();
        Tensor {
            shape: [self.shape[0], l, 1, 1],
            data: self.data,
        }
    }

    pub fn reshape(self, shape: [usize; 4]) -> Result<Tensor> {
        Tensor::from_vec(shape, self.data)
    }

    /// Concatenates along the channel axis. Batch and spatial sizes must agree.
    pub fn concat_channels(parts: &[&Tensor]) -> Result<Tensor> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Contract("nothing to concatenate".into()))?;
        let [n, _, h, w] = first.shape;
        for p in parts {
            if p.shape[0] != n {
                return Err(Error::shape("concat batch", n, p.shape[0]));
            }
            if p.shape[2] != h || p.shape[3] != w {
                return Err(Error::shape("concat spatial", h * w, p.shape[2] * p.shape[3]));
            }
        }
        let c: usize = parts.iter().map(|p| p.shape[1]).sum();
        let mut data = Vec::with_capacity(n * c * h * w);
        for i in 0..n {
            for p in parts {
                data.extend_from_slice(p.sample(i));
            }
        }
        Ok(Tensor {
            shape: [n, c, h, w],
            data,
        })
    }

    /// Splits along channels into `[0, at)` and `[at, c)`.
    pub fn split_channels(&self, at: usize) -> (Tensor, Tensor) {
        let [n, c, h, w] = self.shape;
        assert!(at <= c, "split point {at} beyond {c} channels");
        let hw = h * w;
        let mut a = Vec::with_capacity(n * at * hw);
        let mut b = Vec::with_capacity(n * (c - at) * hw);
        for i in 0..n {
            let s = self.sample(i);
            a.extend_from_slice(&s[..at * hw]);
            b.extend_from_slice(&s[at * hw..]);
        }
        (
            Tensor {
                shape: [n, at, h, w],
                data: a,
            },
            Tensor {
                shape: [n, c - at, h, w],
                data: b,
            },
        )
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        assert_eq!(self.shape, other.shape, "tensor shapes differ");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    /// Rows `start..end` of the batch.
    pub fn slice_batch(&self, start: usize, end: usize) -> Tensor {
        let l = self.sample_len();
        Tensor {
            shape: [end - start, self.shape[1], self.shape[2], self.shape[3]],
            data: self.data[start * l..end * l].to_vec(),
        }
    }
}
