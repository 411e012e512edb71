use crate::error::{HerdError, Result};

/// Dense row-major `f32` tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        Self { shape: shape.to_vec(), data: vec![0.0; shape.iter().product()] }
    }

    pub fn full(shape: &[usize], v: f32) -> Self {
        Self { shape: shape.to_vec(), data: vec![v; shape.iter().product()] }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f32>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(HerdError::shape("tensor", format!("shape {shape:?} needs {n} values, got {}", data.len())));
        }
        Ok(Self { shape: shape.to_vec(), data })
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

    pub fn dim(&self, i: usize) -> usize {
        self.shape[i]
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(HerdError::shape("reshape", format!("{:?} -> {shape:?}", self.shape)));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn add_assign(&mut self, o: &Tensor) -> Result<()> {
        if self.shape != o.shape {
            return Err(HerdError::shape("add", format!("{:?} vs {:?}", self.shape, o.shape)));
        }
        for (a, b) in self.data.iter_mut().zip(&o.data) {
            *a += *b;
        }
        Ok(())
    }

    pub fn add(&self, o: &Tensor) -> Result<Tensor> {
        let mut out = self.clone();
        out.add_assign(o)?;
        Ok(out)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Concatenates two `[N, C, L]` tensors along the channel axis.
    pub fn concat_channels(a: &Tensor, b: &Tensor) -> Result<Tensor> {
        if a.rank() != 3 || b.rank() != 3 || a.shape[0] != b.shape[0] || a.shape[2] != b.shape[2] {
            return Err(HerdError::shape("concat", format!("{:?} vs {:?}", a.shape, b.shape)));
        }
        let (n, ca, cb, l) = (a.shape[0], a.shape[1], b.shape[1], a.shape[2]);
        let mut data = Vec::with_capacity(n * (ca + cb) * l);
        for i in 0..n {
            data.extend_from_slice(&a.data[i * ca * l..(i + 1) * ca * l]);
            data.extend_from_slice(&b.data[i * cb * l..(i + 1) * cb * l]);
        }
        Tensor::from_vec(&[n, ca + cb, l], data)
    }

    /// Inverse of [`Tensor::concat_channels`] for gradients.
    pub fn split_channels(t: &Tensor, ca: usize) -> Result<(Tensor, Tensor)> {
        if t.rank() != 3 || t.shape[1] < ca {
            return Err(HerdError::shape("split", format!("{:?} at {ca}", t.shape)));
        }
        let (n, c, l) = (t.shape[0], t.shape[1], t.shape[2]);
        let cb = c - ca;
        let mut a = Vec::with_capacity(n * ca * l);
        let mut b = Vec::with_capacity(n * cb * l);
        for i in 0..n {
            let base = i * c * l;
            a.extend_from_slice(&t.data[base..base + ca * l]);
            b.extend_from_slice(&t.data[base + ca * l..base + c * l]);
        }
        Ok((Tensor::from_vec(&[n, ca, l], a)?, Tensor::from_vec(&[n, cb, l], b)?))
    }
}
