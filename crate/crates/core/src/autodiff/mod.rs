//! Reverse-mode differentiation restricted to the trainable subspace.
//!
//! Gradients run the [`Graph`] over `f64`. Hessian-vector products run the
//! same graph over [`Dual`] numbers whose tangent is the probe vector: the
//! reverse pass then yields `∇L` in the primal parts and `∇²L·v` in the
//! tangent parts, exactly and without forming the Hessian.

mod graph;
mod hvp;
mod param;
mod real;

pub use graph::{Graph, Matrix, Var};
pub use hvp::{BatchSource, Curvature, HvpOperator};
pub use param::ParameterVector;
pub use real::{Dual, Real};

use crate::error::{Error, Result};

/// A per-example scalar loss over the trainable subspace.
///
/// Examples are addressed by index `0..len()`; indices are visited in
/// ascending order wherever per-example results are reduced.
pub trait Objective: Sync {
    /// Dimension of the trainable subspace.
    fn dim(&self) -> usize;

    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Stable identifier of example `index`, used in error messages and tables.
    fn example_id(&self, index: usize) -> u64 {
        index as u64
    }

    /// Records the loss of example `index` on `graph` and returns the `1×1` node.
    fn record<S: Real>(&self, graph: &mut Graph<S>, index: usize) -> Result<Var>;
}

/// Loss value and gradient of one example at `theta`.
pub fn loss_and_gradient<O: Objective>(
    objective: &O,
    theta: &ParameterVector,
    index: usize,
) -> Result<(f64, ParameterVector)> {
    check_dim(objective, theta)?;
    let mut graph = Graph::new(theta.as_slice().to_vec());
    let out = objective.record(&mut graph, index)?;
    let loss = graph.scalar(out);
    let id = objective.example_id(index);
    if !loss.is_finite() {
        return Err(Error::numerical(format!("non-finite loss on example {id}")));
    }
    let grad = ParameterVector::new(graph.backward(out));
    if !grad.is_finite() {
        return Err(Error::numerical(format!(
            "non-finite gradient on example {id}"
        )));
    }
    Ok((loss, grad))
}

/// `∇θ L(example)` over the trainable coordinates.
pub fn gradient<O: Objective>(
    objective: &O,
    theta: &ParameterVector,
    index: usize,
) -> Result<ParameterVector> {
    loss_and_gradient(objective, theta, index).map(|(_, g)| g)
}

/// Loss value only.
pub fn loss<O: Objective>(objective: &O, theta: &ParameterVector, index: usize) -> Result<f64> {
    check_dim(objective, theta)?;
    let mut graph = Graph::new(theta.as_slice().to_vec());
    let out = objective.record(&mut graph, index)?;
    let value = graph.scalar(out);
    if !value.is_finite() {
        return Err(Error::numerical(format!(
            "non-finite loss on example {}",
            objective.example_id(index)
        )));
    }
    Ok(value)
}

/// Exact `∇²L(example)·v` by forward-over-reverse.
pub fn example_hvp<O: Objective>(
    objective: &O,
    theta: &ParameterVector,
    index: usize,
    v: &ParameterVector,
) -> Result<ParameterVector> {
    check_dim(objective, theta)?;
    if v.len() != theta.len() {
        return Err(Error::invalid(format!(
            "probe vector has length {}, expected {}",
            v.len(),
            theta.len()
        )));
    }
    let params = theta
        .as_slice()
        .iter()
        .zip(v.as_slice())
        .map(|(&x, &t)| Dual::new(x, t))
        .collect();
    let mut graph = Graph::<Dual>::new(params);
    let out = objective.record(&mut graph, index)?;
    let hv = ParameterVector::new(graph.backward(out).into_iter().map(|d| d.eps).collect());
    if !hv.is_finite() {
        return Err(Error::numerical(format!(
            "non-finite Hessian-vector product on example {}",
            objective.example_id(index)
        )));
    }
    Ok(hv)
}

fn check_dim<O: Objective>(objective: &O, theta: &ParameterVector) -> Result<()> {
    if theta.len() != objective.dim() {
        return Err(Error::invalid(format!(
            "parameter vector has length {}, objective expects {}",
            theta.len(),
            objective.dim()
        )));
    }
    if !theta.is_finite() {
        return Err(Error::numerical("non-finite model parameters"));
    }
    Ok(())
}

/// Sums per-example vectors in index order so the result does not depend on
/// how the items were scheduled.
pub(crate) fn ordered_sum(dim: usize, parts: &[ParameterVector]) -> ParameterVector {
    let mut acc = ParameterVector::zeros(dim);
    for p in parts {
        acc.axpy(1.0, p);
    }
    acc
}

#[cfg(test)]
pub(crate) mod testing {
    //! Small analytic objectives shared by unit tests.
    use super::*;

    /// `½ θᵀ A θ` with a dense symmetric `A`; a single example.
    pub struct Quadratic {
        pub a: Vec<f64>,
        pub dim: usize,
    }

    impl Objective for Quadratic {
        fn dim(&self) -> usize {
            self.dim
        }
        fn len(&self) -> usize {
            1
        }
        fn record<S: Real>(&self, g: &mut Graph<S>, _index: usize) -> Result<Var> {
            let theta = g.param(0, 1, self.dim);
            let a = g.constant_f64(self.dim, self.dim, &self.a);
            let at = g.matmul_t(theta, a);
            let prod = g.mul(at, theta);
            let s = g.sum(prod);
            Ok(g.scale(s, 0.5))
        }
    }

    /// Example `i` has loss `⟨c_i, θ⟩`: constant gradient, zero Hessian.
    pub struct Linear {
        pub rows: Vec<Vec<f64>>,
    }

    impl Objective for Linear {
        fn dim(&self) -> usize {
            self.rows[0].len()
        }
        fn len(&self) -> usize {
            self.rows.len()
        }
        fn example_id(&self, index: usize) -> u64 {
            100 + index as u64
        }
        fn record<S: Real>(&self, g: &mut Graph<S>, index: usize) -> Result<Var> {
            let d = self.dim();
            let theta = g.param(0, 1, d);
            let c = g.constant_f64(1, d, &self.rows[index]);
            let prod = g.mul(theta, c);
            Ok(g.sum(prod))
        }
    }

    /// Constant loss, independent of θ.
    pub struct Constant {
        pub dim: usize,
        pub value: f64,
        pub examples: usize,
    }

    impl Objective for Constant {
        fn dim(&self) -> usize {
            self.dim
        }
        fn len(&self) -> usize {
            self.examples
        }
        fn record<S: Real>(&self, g: &mut Graph<S>, _index: usize) -> Result<Var> {
            Ok(g.constant_f64(1, 1, &[self.value]))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::testing::*;
    use super::*;

    #[test]
    fn constant_loss_has_zero_gradient() {
        let obj = Constant {
            dim: 3,
            value: 2.5,
            examples: 1,
        };
        let g = gradient(&obj, &ParameterVector::new(vec![0.1, -2.0, 4.0]), 0).unwrap();
        assert_eq!(g.as_slice(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn half_squared_norm_gradient_is_identity() {
        let obj = Quadratic {
            a: vec![1.0, 0.0, 0.0, 1.0],
            dim: 2,
        };
        let g = gradient(&obj, &ParameterVector::new(vec![1.0, 2.0]), 0).unwrap();
        assert_eq!(g.as_slice(), &[1.0, 2.0]);
    }

    #[test]
    fn diagonal_quadratic_hvp() {
        let obj = Quadratic {
            a: vec![2.0, 0.0, 0.0, 3.0],
            dim: 2,
        };
        let hv = example_hvp(
            &obj,
            &ParameterVector::new(vec![0.4, -0.7]),
            0,
            &ParameterVector::new(vec![1.0, 1.0]),
        )
        .unwrap();
        assert_eq!(hv.as_slice(), &[2.0, 3.0]);
    }

    #[test]
    fn wrong_dimension_is_rejected() {
        let obj = Constant {
            dim: 3,
            value: 0.0,
            examples: 1,
        };
        assert!(matches!(
            gradient(&obj, &ParameterVector::zeros(2), 0),
            Err(Error::InvalidInput(_))
        ));
    }

    struct Blowup;
    impl Objective for Blowup {
        fn dim(&self) -> usize {
            1
        }
        fn len(&self) -> usize {
            1
        }
        fn example_id(&self, _: usize) -> u64 {
            42
        }
        fn record<S: Real>(&self, g: &mut Graph<S>, _: usize) -> Result<Var> {
            let t = g.param(0, 1, 1);
            let c = g.constant_f64(1, 1, &[1e308]);
            let big = g.mul(t, c);
            let big = g.mul(big, c);
            Ok(g.sum(big))
        }
    }

    #[test]
    fn non_finite_loss_names_the_example() {
        let err = gradient(&Blowup, &ParameterVector::new(vec![1.0]), 0).unwrap_err();
        assert!(err.to_string().contains("42"), "{err}");
    }
}
