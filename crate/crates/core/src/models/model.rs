use super::spec::{count_params, ModelSpec};
use crate::numerics::{dense_backward, dense_forward, tanh_inplace, Rng, Tensor};
use crate::{Error, Result};

/// A multi-head classifier with its parameters.
///
/// Parameters are stored per dense layer as `[weights, bias]`, trunk layers
/// first, then one pair per head in slot order.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    spec: ModelSpec,
    params: Vec<Tensor>,
    param_count: usize,
}

/// Per-slot logits plus the activations at the feature tap.
#[derive(Debug, Clone)]
pub struct ForwardResult {
    pub logits_per_slot: Vec<Tensor>,
    pub tap_features: Tensor,
}

/// Every intermediate a backward pass needs.
#[derive(Debug, Clone)]
pub struct Trace {
    /// Post-tanh activations of each trunk layer.
    pub hidden: Vec<Tensor>,
    pub logits: Vec<Tensor>,
}

impl Trace {
    pub fn tap(&self, spec: &ModelSpec) -> &Tensor {
        &self.hidden[spec.feature_tap]
    }
}

/// Xavier-uniform weights `U(−a, a)` with `a = sqrt(6 / (fan_in + fan_out))`
/// and zero biases, drawn layer by layer in parameter order.
pub fn init_model(spec: &ModelSpec, rng: &mut Rng) -> Result<Model> {
    spec.validate()?;
    let mut params = Vec::new();
    for (inp, out) in spec.layer_shapes() {
        let a = (6.0 / (inp + out) as f64).sqrt();
        let w: Vec<f64> = (0..inp * out).map(|_| rng.uniform_range(-a, a)).collect();
        params.push(Tensor::from_parts(vec![out, inp], w));
        params.push(Tensor::zeros(&[out]));
    }
    Model::from_params(spec.clone(), params)
}

impl Model {
    pub fn from_params(spec: ModelSpec, params: Vec<Tensor>) -> Result<Self> {
        spec.validate()?;
        let shapes = spec.layer_shapes();
        if params.len() != 2 * shapes.len() {
            return Err(Error::dim("Model params", &[params.len()], &[2 * shapes.len()]));
        }
        for (k, &(inp, out)) in shapes.iter().enumerate() {
            if params[2 * k].shape() != [out, inp] {
                return Err(Error::dim("Model weights", params[2 * k].shape(), &[out, inp]));
            }
            if params[2 * k + 1].shape() != [out] {
                return Err(Error::dim("Model bias", params[2 * k + 1].shape(), &[out]));
            }
        }
        let param_count = count_params(&spec);
        Ok(Self {
            spec,
            params,
            param_count,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub(crate) fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.param_count
    }

    /// Same architecture, different parameter values.
    pub fn with_params(&self, params: Vec<Tensor>) -> Result<Model> {
        Model::from_params(self.spec.clone(), params)
    }

    /// Bitwise equality of all parameters.
    pub fn bitwise_eq(&self, other: &Model) -> bool {
        self.spec == other.spec
            && self.params.iter().zip(&other.params).all(|(a, b)| {
                a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits())
            })
    }

    pub fn trace(&self, x: &Tensor) -> Result<Trace> {
        if x.shape().len() != 2 || x.cols() != self.spec.input_dim {
            return Err(Error::dim("forward input", x.shape(), &[x.rows(), self.spec.input_dim]));
        }
        let depth = self.spec.trunk_dims.len();
        let mut hidden: Vec<Tensor> = Vec::with_capacity(depth);
        for l in 0..depth {
            let input = if l == 0 { x } else { &hidden[l - 1] };
            let mut h = dense_forward(&self.params[2 * l], &self.params[2 * l + 1], input)?;
            tanh_inplace(&mut h);
            hidden.push(h);
        }
        let top = &hidden[depth - 1];
        let logits = (0..self.spec.num_slots)
            .map(|s| {
                let k = depth + s;
                dense_forward(&self.params[2 * k], &self.params[2 * k + 1], top)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Trace { hidden, logits })
    }

    pub fn forward(&self, x: &Tensor) -> Result<ForwardResult> {
        let mut trace = self.trace(x)?;
        let tap_features = trace.hidden.swap_remove(self.spec.feature_tap);
        Ok(ForwardResult {
            logits_per_slot: trace.logits,
            tap_features,
        })
    }

    /// Gradients of a loss with respect to all parameters, given the loss
    /// gradient at each head's logits and optionally at the feature tap.
    pub fn backward(
        &self,
        x: &Tensor,
        trace: &Trace,
        dlogits: &[Tensor],
        dtap: Option<&Tensor>,
    ) -> Result<Vec<Tensor>> {
        let depth = self.spec.trunk_dims.len();
        if dlogits.len() != self.spec.num_slots {
            return Err(Error::dim("backward dlogits", &[dlogits.len()], &[self.spec.num_slots]));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.params.len()];
        let top = &trace.hidden[depth - 1];
        let mut dh = Tensor::zeros(top.shape());
        for (s, dz) in dlogits.iter().enumerate() {
            let k = depth + s;
            if dz.shape() != trace.logits[s].shape() {
                return Err(Error::dim("backward dlogits", dz.shape(), trace.logits[s].shape()));
            }
            let g = dense_backward(&self.params[2 * k], top, dz)?;
            dh.add_scaled(&g.input, 1.0);
            grads[2 * k] = Some(g.weights);
            grads[2 * k + 1] = Some(g.bias);
        }
        if let Some(dt) = dtap {
            if dt.shape() != trace.hidden[self.spec.feature_tap].shape() {
                return Err(Error::dim("backward dtap", dt.shape(), trace.hidden[self.spec.feature_tap].shape()));
            }
        }
        for l in (0..depth).rev() {
            if l == self.spec.feature_tap {
                if let Some(dt) = dtap {
                    dh.add_scaled(dt, 1.0);
                }
            }
            let h = &trace.hidden[l];
            let mut da = dh;
            for (d, &hv) in da.data_mut().iter_mut().zip(h.data()) {
                *d *= 1.0 - hv * hv;
            }
            let input = if l == 0 { x } else { &trace.hidden[l - 1] };
            let g = dense_backward(&self.params[2 * l], input, &da)?;
            grads[2 * l] = Some(g.weights);
            grads[2 * l + 1] = Some(g.bias);
            dh = g.input;
        }
        Ok(grads.into_iter().map(|g| g.expect("every layer visited")).collect())
    }
}
