//! Flexible and fixed scalar parameters with constrained reparameterization.

use crate::error::{Error, Result};

/// Sharpness of the softplus map used for positive parameters.
///
/// With k = 1000 the map is the identity to within 1e-3 absolute for values
/// above a few 1e-3, so learning rates act in the parameter's own units.
pub const POSITIVE_SHARPNESS: f64 = 1000.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Constraint {
    Free,
    /// x = softplus(kθ)/k, x ∈ [0, ∞).
    Positive,
    /// x = sigmoid(θ), x ∈ (0, 1).
    UnitInterval,
    /// x = a + (b − a)·sigmoid(θ).
    Interval(f64, f64),
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

impl Constraint {
    pub fn to_external(self, internal: f64) -> f64 {
        match self {
            Constraint::Free => internal,
            Constraint::Positive => softplus(POSITIVE_SHARPNESS * internal) / POSITIVE_SHARPNESS,
            Constraint::UnitInterval => sigmoid(internal),
            Constraint::Interval(a, b) => a + (b - a) * sigmoid(internal),
        }
    }

    /// dx/dθ; finite everywhere (zero at θ = −∞ for the positive map).
    pub fn derivative(self, internal: f64) -> f64 {
        match self {
            Constraint::Free => 1.0,
            Constraint::Positive => sigmoid(POSITIVE_SHARPNESS * internal),
            Constraint::UnitInterval => {
                let s = sigmoid(internal);
                s * (1.0 - s)
            }
            Constraint::Interval(a, b) => {
                let s = sigmoid(internal);
                (b - a) * s * (1.0 - s)
            }
        }
    }

    /// Inverse map. A positive parameter set to exactly zero is stored as
    /// θ = −∞, which maps back to exactly zero and carries zero gradient.
    pub fn to_internal(self, external: f64) -> Result<f64> {
        if !external.is_finite() {
            return Err(Error::InvalidArgument(format!("parameter value {external} is not finite")));
        }
        match self {
            Constraint::Free => Ok(external),
            Constraint::Positive => {
                if external < 0.0 {
                    return Err(Error::InvalidArgument(format!("positive parameter set to {external}")));
                }
                if external == 0.0 {
                    return Ok(f64::NEG_INFINITY);
                }
                let z = POSITIVE_SHARPNESS * external;
                // θ = ln(e^z − 1)/k, evaluated without overflow.
                Ok((z + (-(-z).exp()).ln_1p()) / POSITIVE_SHARPNESS)
            }
            Constraint::UnitInterval => {
                if external <= 0.0 || external >= 1.0 {
                    return Err(Error::InvalidArgument(format!("unit-interval parameter set to {external}")));
                }
                Ok(logit(external))
            }
            Constraint::Interval(a, b) => {
                if external <= a || external >= b {
                    return Err(Error::InvalidArgument(format!("parameter {external} outside ({a}, {b})")));
                }
                Ok(logit((external - a) / (b - a)))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProcessParam {
    pub name: String,
    pub internal: f64,
    pub constraint: Constraint,
    pub flexible: bool,
    /// Learning-rate override; `None` uses the optimizer default.
    pub lr: Option<f64>,
}

impl ProcessParam {
    pub fn external(&self) -> f64 {
        self.constraint.to_external(self.internal)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

/// Registry of every scalar parameter of a model. Each parameter is
/// registered exactly once and addressed by [`ParamId`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<ProcessParam>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    fn add(&mut self, name: &str, value: f64, constraint: Constraint, flexible: bool) -> Result<ParamId> {
        if self.params.iter().any(|p| p.name == name) {
            return Err(Error::InvalidArgument(format!("parameter `{name}` registered twice")));
        }
        let internal = constraint.to_internal(value)?;
        self.params.push(ProcessParam { name: name.to_string(), internal, constraint, flexible, lr: None });
        Ok(ParamId(self.params.len() - 1))
    }

    pub fn flexible(&mut self, name: &str, value: f64, constraint: Constraint) -> Result<ParamId> {
        self.add(name, value, constraint, true)
    }

    pub fn fixed(&mut self, name: &str, value: f64, constraint: Constraint) -> Result<ParamId> {
        self.add(name, value, constraint, false)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &ProcessParam {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut ProcessParam {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> f64 {
        self.params[id.0].external()
    }

    pub fn set_value(&mut self, id: ParamId, value: f64) -> Result<()> {
        let p = &mut self.params[id.0];
        p.internal = p.constraint.to_internal(value)?;
        Ok(())
    }

    pub fn set_lr(&mut self, id: ParamId, lr: f64) {
        self.params[id.0].lr = Some(lr);
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &ProcessParam)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    /// Ids of the flexible parameters in registration order.
    pub fn flexible_ids(&self) -> Vec<ParamId> {
        self.iter().filter(|(_, p)| p.flexible).map(|(id, _)| id).collect()
    }

    pub fn externals(&self) -> Vec<f64> {
        self.params.iter().map(|p| p.external()).collect()
    }

    pub fn internals(&self) -> Vec<f64> {
        self.params.iter().map(|p| p.internal).collect()
    }

    pub fn set_internals(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.params.len() {
            return Err(Error::Dimension(format!("{} values for {} parameters", values.len(), self.params.len())));
        }
        for (p, &v) in self.params.iter_mut().zip(values) {
            p.internal = v;
        }
        Ok(())
    }

    /// Chains gradients with respect to external values onto internal ones.
    pub fn chain_to_internal(&self, external_grads: &[f64]) -> Vec<f64> {
        self.params
            .iter()
            .zip(external_grads)
            .map(|(p, g)| {
                let d = p.constraint.derivative(p.internal);
                if d == 0.0 {
                    0.0
                } else {
                    g * d
                }
            })
            .collect()
    }
}
