use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::NetError;

/// Shape of one dense layer: `rows` outputs, `cols` inputs.
///
/// Parameters are stored row-major weights followed by the bias vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerShape {
    pub rows: usize,
    pub cols: usize,
}

impl LayerShape {
    pub fn weight_count(&self) -> usize {
        self.rows * self.cols
    }

    pub fn param_count(&self) -> usize {
        self.rows * self.cols + self.rows
    }
}

/// Ordered layer shapes plus the offset of each layer inside the flat array.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamLayout {
    shapes: Vec<LayerShape>,
    offsets: Vec<usize>,
    total: usize,
}

impl ParamLayout {
    pub fn new(shapes: Vec<LayerShape>) -> Self {
        let mut offsets = Vec::with_capacity(shapes.len());
        let mut total = 0;
        for s in &shapes {
            offsets.push(total);
            total += s.param_count();
        }
        Self {
            shapes,
            offsets,
            total,
        }
    }

    pub fn shapes(&self) -> &[LayerShape] {
        &self.shapes
    }

    pub fn offset(&self, layer: usize) -> usize {
        self.offsets[layer]
    }

    pub fn len(&self) -> usize {
        self.total
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }
}

/// Flat parameter array of one network together with its layer layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    values: Vec<f64>,
    layout: Arc<ParamLayout>,
}

impl ParamVector {
    pub fn zeros(layout: Arc<ParamLayout>) -> Self {
        Self {
            values: vec![0.0; layout.len()],
            layout,
        }
    }

    pub fn from_values(layout: Arc<ParamLayout>, values: Vec<f64>) -> Result<Self, NetError> {
        if values.len() != layout.len() {
            return Err(NetError::LayoutMismatch {
                expected: layout.len(),
                got: values.len(),
            });
        }
        Ok(Self { values, layout })
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.layout.clone())
    }

    /// Same layout, new values. Panics on length mismatch.
    pub fn with_values(&self, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), self.layout.len(), "parameter length mismatch");
        Self {
            values,
            layout: self.layout.clone(),
        }
    }

    pub fn layout(&self) -> &Arc<ParamLayout> {
        &self.layout
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Weight matrix (row-major) and bias of one layer.
    pub fn layer(&self, layer: usize) -> (&[f64], &[f64]) {
        let shape = self.layout.shapes()[layer];
        let off = self.layout.offset(layer);
        let w = &self.values[off..off + shape.weight_count()];
        let b = &self.values[off + shape.weight_count()..off + shape.param_count()];
        (w, b)
    }

    pub fn layer_mut(&mut self, layer: usize) -> (&mut [f64], &mut [f64]) {
        let shape = self.layout.shapes()[layer];
        let off = self.layout.offset(layer);
        let (w, b) = self.values[off..off + shape.param_count()].split_at_mut(shape.weight_count());
        (w, b)
    }

    pub fn same_layout(&self, other: &ParamVector) -> bool {
        Arc::ptr_eq(&self.layout, &other.layout) || *self.layout == *other.layout
    }

    pub fn check_layout(&self, other: &ParamVector) -> Result<(), NetError> {
        if self.same_layout(other) {
            Ok(())
        } else {
            Err(NetError::LayoutMismatch {
                expected: self.len(),
                got: other.len(),
            })
        }
    }

    pub fn dot(&self, other: &ParamVector) -> f64 {
        dot(&self.values, &other.values)
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    /// `self += alpha * x`
    pub fn axpy(&mut self, alpha: f64, x: &ParamVector) {
        axpy(alpha, &x.values, &mut self.values);
    }

    pub fn scale(&mut self, alpha: f64) {
        self.values.iter_mut().for_each(|v| *v *= alpha);
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn layout() -> Arc<ParamLayout> {
        Arc::new(ParamLayout::new(vec![
            LayerShape { rows: 3, cols: 2 },
            LayerShape { rows: 1, cols: 3 },
        ]))
    }

    #[test]
    fn layout_counts_and_offsets() {
        let l = layout();
        assert_eq!(l.len(), 9 + 4);
        assert_eq!(l.offset(0), 0);
        assert_eq!(l.offset(1), 9);
    }

    #[test]
    fn layers_partition_the_flat_array() {
        let l = layout();
        let p = ParamVector::from_values(l.clone(), (0..13).map(f64::from).collect()).unwrap();
        let (w0, b0) = p.layer(0);
        let (w1, b1) = p.layer(1);
        assert_eq!(w0, &[0.0, 1.0, 2.0, 3.0, 4.0, 5.0]);
        assert_eq!(b0, &[6.0, 7.0, 8.0]);
        assert_eq!(w1, &[9.0, 10.0, 11.0]);
        assert_eq!(b1, &[12.0]);
    }

    #[test]
    fn wrong_length_rejected() {
        assert!(ParamVector::from_values(layout(), vec![0.0; 5]).is_err());
    }
}
