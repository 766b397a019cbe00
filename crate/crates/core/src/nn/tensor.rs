use crate::error::ShapeError;

/// Dense row-major `f64` array.
///
/// Activations use `batch x height x width x channels`; convolution kernels
/// use `kh x kw x in_ch x out_ch`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self, ShapeError> {
        let len: usize = shape.iter().product();
        if len != data.len() {
            return Err(ShapeError::DataLength {
                len: data.len(),
                shape: shape.to_vec(),
            });
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
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

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self, ShapeError> {
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(ShapeError::DataLength {
                len: self.data.len(),
                shape: shape.to_vec(),
            });
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    /// `(b, h, w, c)` of a rank-4 tensor.
    pub fn dims4(&self) -> Result<(usize, usize, usize, usize), ShapeError> {
        match self.shape[..] {
            [b, h, w, c] => Ok((b, h, w, c)),
            _ => Err(ShapeError::mismatch("dims4", "rank-4 tensor", &self.shape)),
        }
    }

    #[inline]
    pub fn at4(&self, b: usize, h: usize, w: usize, c: usize) -> f64 {
        let s = &self.shape;
        self.data[((b * s[1] + h) * s[2] + w) * s[3] + c]
    }

    #[inline]
    pub fn set4(&mut self, b: usize, h: usize, w: usize, c: usize, v: f64) {
        let s = &self.shape;
        let i = ((b * s[1] + h) * s[2] + w) * s[3] + c;
        self.data[i] = v;
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Copies image `b` out of a batch as a `1 x H x W x C` tensor.
    pub fn batch_item(&self, b: usize) -> Result<Tensor, ShapeError> {
        let (_, h, w, c) = self.dims4()?;
        let n = h * w * c;
        Tensor::new(&[1, h, w, c], self.data[b * n..(b + 1) * n].to_vec())
    }

    /// Stacks `1 x H x W x C` (or `H x W x C`) tensors along the batch axis.
    pub fn stack(items: &[Tensor]) -> Result<Tensor, ShapeError> {
        let first = items
            .first()
            .ok_or_else(|| ShapeError::mismatch("stack", "at least one tensor", &[]))?;
        let inner: Vec<usize> = match first.shape[..] {
            [1, h, w, c] | [h, w, c] => vec![h, w, c],
            _ => return Err(ShapeError::mismatch("stack", "HxWxC image", &first.shape)),
        };
        let mut data = Vec::with_capacity(items.len() * first.len());
        for t in items {
            let ok = t.len() == first.len() && t.shape.ends_with(&inner);
            if !ok {
                return Err(ShapeError::mismatch("stack", format!("{inner:?}"), &t.shape));
            }
            data.extend_from_slice(&t.data);
        }
        let mut shape = vec![items.len()];
        shape.extend(inner);
        Tensor::new(&shape, data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_checks() {
        assert!(Tensor::new(&[2, 3], vec![0.0; 5]).is_err());
        let t = Tensor::new(&[1, 2, 2, 1], vec![1., 2., 3., 4.]).unwrap();
        assert_eq!(t.at4(0, 1, 0, 0), 3.0);
        assert_eq!(t.clone().reshape(&[4]).unwrap().shape(), &[4]);
        let s = Tensor::stack(&[t.clone(), t.clone()]).unwrap();
        assert_eq!(s.shape(), &[2, 2, 2, 1]);
        assert_eq!(s.batch_item(1).unwrap(), t);
    }
}
