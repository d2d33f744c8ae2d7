use super::ObjectiveSpec;
use crate::linalg::norm;
use crate::path::DiscretePath;
use crate::scalar::Scalar;
use crate::{Error, Result};

#[derive(Clone, Debug)]
pub struct FlowResult<T> {
    pub path: DiscretePath<T>,
    pub terminal_grad_norm: T,
}

const BLOW_UP: f64 = 1e6;

/// RK4 integration of `x' = -grad f(x)` over `[0, horizon]`. The step is
/// `horizon / round(horizon / dt)` so the nodes land on the horizon.
pub fn gradient_flow<T: Scalar>(spec: &ObjectiveSpec<T>, x0: &[T], horizon: T, dt: T) -> Result<FlowResult<T>> {
    if !(dt > T::zero()) || horizon < dt {
        return Err(Error::InvalidArgument("gradient_flow requires dt > 0 and horizon >= dt".into()));
    }
    let steps = (horizon / dt).round().to_usize().unwrap_or(1).max(1);
    let h = horizon / T::of_usize(steps);
    let d = x0.len();
    let mut nodes = Vec::with_capacity(steps + 1);
    let mut x = x0.to_vec();
    nodes.push(x.clone());
    let (mut k1, mut k2, mut k3, mut k4) = (vec![T::zero(); d], vec![T::zero(); d], vec![T::zero(); d], vec![T::zero(); d]);
    let mut tmp = vec![T::zero(); d];
    let half = T::c(0.5);
    let sixth = T::one() / T::c(6.0);
    for step in 0..steps {
        spec.grad_into(&x, &mut k1);
        for i in 0..d {
            tmp[i] = x[i] - half * h * k1[i];
        }
        spec.grad_into(&tmp, &mut k2);
        for i in 0..d {
            tmp[i] = x[i] - half * h * k2[i];
        }
        spec.grad_into(&tmp, &mut k3);
        for i in 0..d {
            tmp[i] = x[i] - h * k3[i];
        }
        spec.grad_into(&tmp, &mut k4);
        for i in 0..d {
            x[i] -= h * sixth * (k1[i] + T::c(2.0) * (k2[i] + k3[i]) + k4[i]);
        }
        let nx = norm(&x);
        if !(nx <= T::c(BLOW_UP)) {
            return Err(Error::BlowUp { time: (h * T::of_usize(step + 1)).f64(), norm: nx.f64() });
        }
        nodes.push(x.clone());
    }
    let terminal_grad_norm = norm(&spec.grad(&x));
    Ok(FlowResult { path: DiscretePath::new(nodes, horizon)?, terminal_grad_norm })
}
