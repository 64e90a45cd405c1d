//! Gaussian radial-basis-function field over displacement space.
//!
//! `f(x) = Σ_i w_i · exp(-(ε·‖x − c_i‖)²)` with four bases, Euclidean norm
//! over `(Δvergence, Δsaccade)` in degrees.

use serde::{Deserialize, Serialize};

use crate::geometry::GazeDisplacement;
use crate::{Error, Result};

/// Number of radial bases per network.
pub const BASES: usize = 4;

/// Learnable scalars per network: centers, weights and the shape parameter.
pub const N_PARAMS: usize = 3 * BASES + 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RbfNet {
    pub centers: [[f64; 2]; BASES],
    pub weights: [f64; BASES],
    pub eps: f64,
}

/// Gradient of [`RbfNet::eval`] with respect to every learnable parameter.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RbfParamGrad {
    pub centers: [[f64; 2]; BASES],
    pub weights: [f64; BASES],
    pub eps: f64,
}

impl RbfNet {
    pub fn new(centers: [[f64; 2]; BASES], weights: [f64; BASES], eps: f64) -> Result<Self> {
        if !(eps > 0.0 && eps.is_finite()) {
            return Err(Error::Domain(format!(
                "shape parameter {eps} must be positive"
            )));
        }
        if centers
            .iter()
            .flatten()
            .chain(weights.iter())
            .any(|v| !v.is_finite())
        {
            return Err(Error::Domain(
                "RBF centers and weights must be finite".into(),
            ));
        }
        Ok(Self {
            centers,
            weights,
            eps,
        })
    }

    /// `exp(-(ε r_i)²)` and the offset `x − c_i` for each basis.
    fn kernels(&self, x: [f64; 2]) -> [(f64, [f64; 2]); BASES] {
        let e2 = self.eps * self.eps;
        self.centers.map(|c| {
            let d = [x[0] - c[0], x[1] - c[1]];
            ((-e2 * (d[0] * d[0] + d[1] * d[1])).exp(), d)
        })
    }

    pub fn eval(&self, x: GazeDisplacement) -> f64 {
        self.eval_at(x.as_array())
    }

    pub fn eval_at(&self, x: [f64; 2]) -> f64 {
        self.kernels(x)
            .iter()
            .zip(&self.weights)
            .map(|((phi, _), w)| w * phi)
            .sum()
    }

    pub fn grad_params(&self, x: GazeDisplacement) -> RbfParamGrad {
        self.grad_params_at(x.as_array())
    }

    pub fn grad_params_at(&self, x: [f64; 2]) -> RbfParamGrad {
        let e = self.eps;
        let mut g = RbfParamGrad::default();
        for (i, (phi, d)) in self.kernels(x).into_iter().enumerate() {
            let w = self.weights[i];
            let r2 = d[0] * d[0] + d[1] * d[1];
            g.weights[i] = phi;
            g.centers[i] = [2.0 * e * e * w * phi * d[0], 2.0 * e * e * w * phi * d[1]];
            g.eps += -2.0 * e * r2 * w * phi;
        }
        g
    }

    /// `(∂f/∂Δv, ∂f/∂Δs)`.
    pub fn grad_input(&self, x: GazeDisplacement) -> [f64; 2] {
        self.grad_input_at(x.as_array())
    }

    pub fn grad_input_at(&self, x: [f64; 2]) -> [f64; 2] {
        let e2 = self.eps * self.eps;
        let mut g = [0.0; 2];
        for ((phi, d), w) in self.kernels(x).iter().zip(&self.weights) {
            g[0] -= 2.0 * e2 * w * phi * d[0];
            g[1] -= 2.0 * e2 * w * phi * d[1];
        }
        g
    }

    /// Parameters as `[c_0x, c_0y, …, w_0, …, ln ε]`, the space training works in.
    pub fn to_unconstrained(&self) -> [f64; N_PARAMS] {
        let mut v = [0.0; N_PARAMS];
        for i in 0..BASES {
            v[2 * i] = self.centers[i][0];
            v[2 * i + 1] = self.centers[i][1];
            v[2 * BASES + i] = self.weights[i];
        }
        v[N_PARAMS - 1] = self.eps.ln();
        v
    }

    pub fn from_unconstrained(v: &[f64; N_PARAMS]) -> Self {
        let mut net = RbfNet {
            centers: [[0.0; 2]; BASES],
            weights: [0.0; BASES],
            eps: v[N_PARAMS - 1].exp(),
        };
        for i in 0..BASES {
            net.centers[i] = [v[2 * i], v[2 * i + 1]];
            net.weights[i] = v[2 * BASES + i];
        }
        net
    }
}

impl RbfParamGrad {
    /// Same layout as [`RbfNet::to_unconstrained`]; the shape entry is taken
    /// with respect to `ln ε`, so it is scaled by `eps`.
    pub fn to_unconstrained(&self, eps: f64) -> [f64; N_PARAMS] {
        let mut v = [0.0; N_PARAMS];
        for i in 0..BASES {
            v[2 * i] = self.centers[i][0];
            v[2 * i + 1] = self.centers[i][1];
            v[2 * BASES + i] = self.weights[i];
        }
        v[N_PARAMS - 1] = self.eps * eps;
        v
    }
}
