use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, ArrayView1, ArrayView2, ArrayViewMut2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{NetError, Real};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub output_dim: usize,
}

impl MlpSpec {
    pub fn new(input_dim: usize, hidden: &[usize], output_dim: usize) -> Self {
        Self { input_dim, hidden: hidden.to_vec(), output_dim }
    }

    fn widths(&self) -> Vec<usize> {
        let mut w = Vec::with_capacity(self.hidden.len() + 2);
        w.push(self.input_dim);
        w.extend(&self.hidden);
        w.push(self.output_dim);
        w
    }
}

/// Location of one affine layer inside the flat parameter vector: a
/// row-major `fan_in x fan_out` weight block followed by `fan_out` biases.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerShape {
    pub offset: usize,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl LayerShape {
    fn bias_offset(&self) -> usize {
        self.offset + self.fan_in * self.fan_out
    }

    fn end(&self) -> usize {
        self.bias_offset() + self.fan_out
    }
}

pub fn elu<F: Real>(z: F) -> F {
    if z > F::zero() {
        z
    } else {
        z.exp_m1()
    }
}

fn elu_grad<F: Real>(z: F) -> F {
    if z > F::zero() {
        F::one()
    } else {
        z.exp()
    }
}

/// Dense network: affine + ELU on every hidden layer, linear output.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp<F: Real> {
    spec: MlpSpec,
    layout: Vec<LayerShape>,
    pub params: Vec<F>,
}

/// Activations kept from a forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardPass<F: Real> {
    /// Input to each layer.
    inputs: Vec<Array2<F>>,
    /// Pre-activation of each hidden layer.
    pre: Vec<Array2<F>>,
    pub output: Array2<F>,
}

impl<F: Real> Mlp<F> {
    /// Zero-initialized network.
    pub fn new(spec: MlpSpec) -> Result<Self, NetError> {
        let widths = spec.widths();
        if widths.contains(&0) {
            return Err(NetError::InvalidSpec("layer widths must be positive".into()));
        }
        let mut layout = Vec::with_capacity(widths.len() - 1);
        let mut offset = 0;
        for w in widths.windows(2) {
            let layer = LayerShape { offset, fan_in: w[0], fan_out: w[1] };
            offset = layer.end();
            layout.push(layer);
        }
        Ok(Self { spec, layout, params: vec![F::zero(); offset] })
    }

    /// Uniform fan-in initialization, zero biases, output layer scaled by
    /// `output_scale`.
    pub fn init<R: Rng>(&mut self, rng: &mut R, output_scale: f64) {
        let last = self.layout.len() - 1;
        for (l, layer) in self.layout.iter().enumerate() {
            let mut bound = 1.0 / (layer.fan_in as f64).sqrt();
            if l == last {
                bound *= output_scale;
            }
            for w in &mut self.params[layer.offset..layer.bias_offset()] {
                *w = F::from(rng.random_range(-bound..=bound)).unwrap();
            }
            self.params[layer.bias_offset()..layer.end()].fill(F::zero());
        }
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn layout(&self) -> &[LayerShape] {
        &self.layout
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    fn weights(&self, layer: &LayerShape) -> ArrayView2<'_, F> {
        ArrayView2::from_shape((layer.fan_in, layer.fan_out), &self.params[layer.offset..layer.bias_offset()])
            .expect("layout matches params")
    }

    fn bias(&self, layer: &LayerShape) -> ArrayView1<'_, F> {
        ArrayView1::from(&self.params[layer.bias_offset()..layer.end()])
    }

    fn affine(&self, layer: &LayerShape, x: &ArrayView2<F>) -> Array2<F> {
        let mut z = self.bias(layer).broadcast((x.nrows(), layer.fan_out)).unwrap().to_owned();
        general_mat_mul(F::one(), x, &self.weights(layer), F::one(), &mut z);
        z
    }

    fn check_input(&self, x: &ArrayView2<F>) -> Result<(), NetError> {
        if x.ncols() != self.spec.input_dim {
            return Err(NetError::Dimension { expected: self.spec.input_dim, got: x.ncols() });
        }
        Ok(())
    }

    /// Batched forward pass keeping activations, one sample per row.
    pub fn forward(&self, x: ArrayView2<F>) -> Result<ForwardPass<F>, NetError> {
        self.check_input(&x)?;
        let last = self.layout.len() - 1;
        let mut inputs = Vec::with_capacity(self.layout.len());
        let mut pre = Vec::with_capacity(last);
        let mut h = x.to_owned();
        for (l, layer) in self.layout.iter().enumerate() {
            let z = self.affine(layer, &h.view());
            inputs.push(h);
            if l == last {
                return Ok(ForwardPass { inputs, pre, output: z });
            }
            h = z.mapv(elu);
            pre.push(z);
        }
        unreachable!("network has at least one layer")
    }

    /// Forward pass without keeping activations.
    pub fn predict(&self, x: ArrayView2<F>) -> Result<Array2<F>, NetError> {
        self.check_input(&x)?;
        let last = self.layout.len() - 1;
        let mut h = x.to_owned();
        for (l, layer) in self.layout.iter().enumerate() {
            let z = self.affine(layer, &h.view());
            h = if l == last { z } else { z.mapv(elu) };
        }
        Ok(h)
    }

    /// Reverse pass for upstream gradient `d_out` (same shape as the output).
    /// Parameter gradients are accumulated into `grad`; the gradient with
    /// respect to the input batch is returned.
    pub fn backward(&self, pass: &ForwardPass<F>, d_out: ArrayView2<F>, grad: &mut [F]) -> Array2<F> {
        assert_eq!(grad.len(), self.params.len(), "gradient buffer length");
        assert_eq!(d_out.dim(), pass.output.dim(), "upstream gradient shape");
        let mut dz = d_out.to_owned();
        for (l, layer) in self.layout.iter().enumerate().rev() {
            let x = &pass.inputs[l];
            {
                let (w_part, rest) = grad[layer.offset..layer.end()].split_at_mut(layer.fan_in * layer.fan_out);
                let mut gw = ArrayViewMut2::from_shape((layer.fan_in, layer.fan_out), w_part).unwrap();
                general_mat_mul(F::one(), &x.t(), &dz, F::one(), &mut gw);
                for (g, s) in rest.iter_mut().zip(dz.sum_axis(Axis(0))) {
                    *g = *g + s;
                }
            }
            let mut dx = Array2::zeros((dz.nrows(), layer.fan_in));
            general_mat_mul(F::one(), &dz, &self.weights(layer).t(), F::zero(), &mut dx);
            if l == 0 {
                return dx;
            }
            dx.zip_mut_with(&pass.pre[l - 1], |d, &z| *d = *d * elu_grad(z));
            dz = dx;
        }
        unreachable!("network has at least one layer")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use ndarray::{array, Array1};

    #[test]
    fn elu_values() {
        assert_eq!(elu(0.0f64), 0.0);
        assert_eq!(elu(1.0f64), 1.0);
        assert!((elu(-1.0f64) - (-0.63212)).abs() < 1e-5);
        assert_eq!(elu(-1.0f64), (-1.0f64).exp() - 1.0);
    }

    #[test]
    fn param_count() {
        let net = Mlp::<f32>::new(MlpSpec::new(20, &[256, 128], 4)).unwrap();
        assert_eq!(net.num_params(), 21 * 256 + 257 * 128 + 129 * 4);
        assert!(Mlp::<f32>::new(MlpSpec::new(20, &[0], 4)).is_err());
    }

    #[test]
    fn zero_net_outputs_bias() {
        let mut net = Mlp::<f64>::new(MlpSpec::new(3, &[], 2)).unwrap();
        net.params[6] = 0.5;
        net.params[7] = -1.5;
        let y = net.predict(array![[1.0, 2.0, 3.0], [-4.0, 0.0, 9.0]].view()).unwrap();
        assert_eq!(y, array![[0.5, -1.5], [0.5, -1.5]]);
    }

    #[test]
    fn dimension_mismatch() {
        let net = Mlp::<f64>::new(MlpSpec::new(3, &[4], 2)).unwrap();
        let err = net.forward(Array2::zeros((1, 5)).view()).unwrap_err();
        assert_eq!(err, NetError::Dimension { expected: 3, got: 5 });
    }

    #[test]
    fn zero_upstream_gives_zero_grad() {
        let mut net = Mlp::<f64>::new(MlpSpec::new(4, &[8, 8], 3)).unwrap();
        net.init(&mut seeded(1), 1.0);
        let x = Array2::from_shape_fn((5, 4), |(i, j)| (i as f64 - j as f64) * 0.3);
        let pass = net.forward(x.view()).unwrap();
        let mut g = vec![0.0; net.num_params()];
        net.backward(&pass, Array2::zeros((5, 3)).view(), &mut g);
        assert!(g.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn linear_net_matches_closed_form() {
        // Loss sum((xW + b - y)^2); dL/dW = 2 x^T (xW + b - y).
        let mut net = Mlp::<f64>::new(MlpSpec::new(3, &[], 2)).unwrap();
        net.init(&mut seeded(4), 1.0);
        let x = array![[0.5, -1.0, 2.0], [1.5, 0.25, -0.75], [0.0, 1.0, 1.0], [-2.0, 0.5, 0.1]];
        let y = array![[1.0, 0.0], [-1.0, 2.0], [0.5, 0.5], [0.0, -3.0]];
        let pass = net.forward(x.view()).unwrap();
        let resid = &pass.output - &y;
        let mut g = vec![0.0; net.num_params()];
        net.backward(&pass, (&resid * 2.0).view(), &mut g);
        let w_closed = x.t().dot(&resid) * 2.0;
        let b_closed: Array1<f64> = resid.sum_axis(Axis(0)) * 2.0;
        for i in 0..3 {
            for j in 0..2 {
                assert!((g[i * 2 + j] - w_closed[[i, j]]).abs() < 1e-9);
            }
        }
        assert!((g[6] - b_closed[0]).abs() < 1e-9 && (g[7] - b_closed[1]).abs() < 1e-9);
    }
}
