//! Forward evaluation and hand-written derivatives of dense networks.
//!
//! Every derivative routine replays the layer structure explicitly:
//! reverse mode for vector-Jacobian products (`grad_params`, `grad_input`),
//! forward mode for Jacobian-vector products in parameter space
//! (`jvp_params`). The Gauss-Newton metric of the mean squared policy
//! difference is built from one JVP and one VJP per state.

use super::params::{axpy, ParamVector};
use super::spec::NetworkSpec;
use super::NetError;

/// Activations recorded during a forward pass, reused by the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    input: Vec<f64>,
    /// Pre-activation of each layer.
    pre: Vec<Vec<f64>>,
    /// Post-activation of each layer (the last one before output scaling).
    post: Vec<Vec<f64>>,
    output: Vec<f64>,
}

impl ForwardTrace {
    pub fn output(&self) -> &[f64] {
        &self.output
    }

    pub fn input(&self) -> &[f64] {
        &self.input
    }

    fn layer_input(&self, layer: usize) -> &[f64] {
        if layer == 0 {
            &self.input
        } else {
            &self.post[layer - 1]
        }
    }
}

impl NetworkSpec {
    pub fn forward(&self, params: &ParamVector, x: &[f64]) -> Result<Vec<f64>, NetError> {
        Ok(self.trace(params, x)?.output)
    }

    /// Forward pass keeping intermediate activations.
    pub fn trace(&self, params: &ParamVector, x: &[f64]) -> Result<ForwardTrace, NetError> {
        if x.len() != self.input_dim {
            return Err(NetError::Dimension {
                what: "input",
                expected: self.input_dim,
                got: x.len(),
            });
        }
        self.check_params(params)?;
        Ok(self.trace_unchecked(params, x))
    }

    pub(crate) fn trace_unchecked(&self, params: &ParamVector, x: &[f64]) -> ForwardTrace {
        let layers = self.layer_count();
        let mut pre = Vec::with_capacity(layers);
        let mut post: Vec<Vec<f64>> = Vec::with_capacity(layers);
        for (l, shape) in params.layout().shapes().iter().enumerate() {
            let (w, b) = params.layer(l);
            let input: &[f64] = if l == 0 { x } else { &post[l - 1] };
            let mut z = b.to_vec();
            for (row, zr) in w.chunks_exact(shape.cols).zip(z.iter_mut()) {
                *zr += row.iter().zip(input).map(|(a, b)| a * b).sum::<f64>();
            }
            let act = self.activation(l);
            let a: Vec<f64> = z.iter().map(|&v| act.apply(v)).collect();
            pre.push(z);
            post.push(a);
        }
        let output = post[layers - 1]
            .iter()
            .zip(&self.output_scale)
            .map(|(a, s)| a * s)
            .collect();
        ForwardTrace {
            input: x.to_vec(),
            pre,
            post,
            output,
        }
    }

    /// Jᵀ·upstream with respect to the parameters.
    pub fn grad_params(&self, params: &ParamVector, x: &[f64], upstream: &[f64]) -> Result<ParamVector, NetError> {
        let trace = self.trace(params, x)?;
        self.check_upstream(upstream)?;
        let mut grad = params.zeros_like();
        self.backprop(params, &trace, upstream, Some(grad.values_mut()));
        Ok(grad)
    }

    /// Jᵀ·upstream with respect to the input.
    pub fn grad_input(&self, params: &ParamVector, x: &[f64], upstream: &[f64]) -> Result<Vec<f64>, NetError> {
        let trace = self.trace(params, x)?;
        self.check_upstream(upstream)?;
        Ok(self.backprop(params, &trace, upstream, None))
    }

    /// J·v: directional derivative of the output along parameter direction `v`.
    pub fn jvp_params(&self, params: &ParamVector, x: &[f64], v: &ParamVector) -> Result<Vec<f64>, NetError> {
        let trace = self.trace(params, x)?;
        params.check_layout(v)?;
        Ok(self.jvp_traced(params, &trace, v.values()))
    }

    fn check_upstream(&self, upstream: &[f64]) -> Result<(), NetError> {
        if upstream.len() != self.output_dim {
            return Err(NetError::Dimension {
                what: "upstream",
                expected: self.output_dim,
                got: upstream.len(),
            });
        }
        Ok(())
    }

    /// Reverse sweep over a recorded trace.
    ///
    /// Adds the parameter cotangent into `grad` when given and returns the
    /// input cotangent.
    pub fn backprop(&self, params: &ParamVector, trace: &ForwardTrace, upstream: &[f64], mut grad: Option<&mut [f64]>) -> Vec<f64> {
        let layers = self.layer_count();
        let last = layers - 1;
        let act = self.activation(last);
        let mut delta: Vec<f64> = upstream
            .iter()
            .zip(&self.output_scale)
            .zip(trace.pre[last].iter().zip(&trace.post[last]))
            .map(|((u, s), (z, a))| u * s * act.derivative(*z, *a))
            .collect();
        let layout = params.layout().clone();
        for l in (0..layers).rev() {
            let shape = layout.shapes()[l];
            let input = trace.layer_input(l);
            if let Some(g) = grad.as_deref_mut() {
                let off = layout.offset(l);
                let (gw, gb) = g[off..off + shape.param_count()].split_at_mut(shape.weight_count());
                for (row, d) in gw.chunks_exact_mut(shape.cols).zip(&delta) {
                    if *d != 0.0 {
                        axpy(*d, input, row);
                    }
                }
                for (b, d) in gb.iter_mut().zip(&delta) {
                    *b += d;
                }
            }
            let (w, _) = params.layer(l);
            let mut back = vec![0.0; shape.cols];
            for (row, d) in w.chunks_exact(shape.cols).zip(&delta) {
                if *d != 0.0 {
                    axpy(*d, row, &mut back);
                }
            }
            if l == 0 {
                return back;
            }
            let act = self.activation(l - 1);
            for ((b, z), a) in back.iter_mut().zip(&trace.pre[l - 1]).zip(&trace.post[l - 1]) {
                *b *= act.derivative(*z, *a);
            }
            delta = back;
        }
        unreachable!("network has at least one layer")
    }

    /// Forward-mode tangent propagation for a parameter direction.
    pub fn jvp_traced(&self, params: &ParamVector, trace: &ForwardTrace, v: &[f64]) -> Vec<f64> {
        let layout = params.layout().clone();
        let mut tangent: Vec<f64> = Vec::new();
        for (l, shape) in layout.shapes().iter().enumerate() {
            let (w, _) = params.layer(l);
            let off = layout.offset(l);
            let (vw, vb) = v[off..off + shape.param_count()].split_at(shape.weight_count());
            let input = trace.layer_input(l);
            let mut dz = vb.to_vec();
            for (r, dzr) in dz.iter_mut().enumerate() {
                let vrow = &vw[r * shape.cols..(r + 1) * shape.cols];
                let mut acc: f64 = vrow.iter().zip(input).map(|(a, b)| a * b).sum();
                if l > 0 {
                    let wrow = &w[r * shape.cols..(r + 1) * shape.cols];
                    acc += wrow.iter().zip(&tangent).map(|(a, b)| a * b).sum::<f64>();
                }
                *dzr += acc;
            }
            let act = self.activation(l);
            for ((d, z), a) in dz.iter_mut().zip(&trace.pre[l]).zip(&trace.post[l]) {
                *d *= act.derivative(*z, *a);
            }
            tangent = dz;
        }
        tangent
            .iter()
            .zip(&self.output_scale)
            .map(|(t, s)| t * s)
            .collect()
    }

    /// Full output Jacobian with respect to the parameters, one row per output.
    pub fn param_jacobian(&self, params: &ParamVector, x: &[f64]) -> Result<Vec<Vec<f64>>, NetError> {
        let trace = self.trace(params, x)?;
        Ok(self.param_jacobian_traced(params, &trace))
    }

    pub(crate) fn param_jacobian_traced(&self, params: &ParamVector, trace: &ForwardTrace) -> Vec<Vec<f64>> {
        (0..self.output_dim)
            .map(|k| {
                let mut e = vec![0.0; self.output_dim];
                e[k] = 1.0;
                let mut row = vec![0.0; params.len()];
                self.backprop(params, trace, &e, Some(&mut row));
                row
            })
            .collect()
    }

    /// Gauss-Newton product of the mean squared policy difference:
    /// `(2/|S|) Σ_x J(x)ᵀ J(x) v + damping·v`.
    ///
    /// At the expansion point the residual term of the true Hessian
    /// vanishes, so this is the exact Hessian plus damping.
    pub fn gn_metric_vp(&self, params: &ParamVector, states: &[Vec<f64>], v: &ParamVector, damping: f64) -> Result<ParamVector, NetError> {
        if states.is_empty() {
            return Err(NetError::EmptyStateSet);
        }
        if damping < 0.0 || !damping.is_finite() {
            return Err(NetError::InvalidSpec(format!("damping must be >= 0, got {damping}")));
        }
        params.check_layout(v)?;
        self.check_params(params)?;
        let mut out = v.zeros_like();
        let weight = 2.0 / states.len() as f64;
        for x in states {
            let trace = self.trace(params, x)?;
            let jv = self.jvp_traced(params, &trace, v.values());
            let up: Vec<f64> = jv.iter().map(|t| t * weight).collect();
            self.backprop(params, &trace, &up, Some(out.values_mut()));
        }
        out.axpy(damping, v);
        Ok(out)
    }

    /// Mean squared policy difference between two parameter vectors.
    pub fn mean_squared_difference(&self, a: &ParamVector, b: &ParamVector, states: &[Vec<f64>]) -> Result<f64, NetError> {
        if states.is_empty() {
            return Err(NetError::EmptyStateSet);
        }
        let mut total = 0.0;
        for x in states {
            let ya = self.forward(a, x)?;
            let yb = self.forward(b, x)?;
            total += ya.iter().zip(&yb).map(|(p, q)| (p - q) * (p - q)).sum::<f64>();
        }
        Ok(total / states.len() as f64)
    }
}
