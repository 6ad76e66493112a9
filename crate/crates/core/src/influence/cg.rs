use serde::{Deserialize, Serialize};

use crate::autodiff::{BatchSource, Curvature, HvpOperator, Objective, ParameterVector};
use crate::error::{Error, Result};

/// Stopping rule on the recurrence residual `r`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "value")]
pub enum Tolerance {
    /// Stop once `‖r‖ / ‖g‖ < ε`.
    Relative(f64),
    /// Stop once `‖r‖ < ε`.
    Absolute(f64),
}

impl Tolerance {
    fn threshold(self, g_norm: f64) -> f64 {
        match self {
            Tolerance::Relative(eps) => eps * g_norm,
            Tolerance::Absolute(eps) => eps,
        }
    }

    fn value(self) -> f64 {
        match self {
            Tolerance::Relative(eps) | Tolerance::Absolute(eps) => eps,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HvpMode {
    /// A fresh batch of `batch_size` training examples per CG iteration.
    #[default]
    Stochastic,
    /// Every training example on every iteration.
    Deterministic,
}

impl std::str::FromStr for HvpMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "stochastic" => Ok(HvpMode::Stochastic),
            "deterministic" => Ok(HvpMode::Deterministic),
            other => Err(Error::invalid(format!(
                "unknown HVP mode {other:?} (expected stochastic or deterministic)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CgConfig {
    pub damping: f64,
    pub max_iters: usize,
    pub tolerance: Tolerance,
    pub batch_size: usize,
    pub hvp_mode: HvpMode,
    /// Seeds batch sampling in stochastic mode.
    pub seed: u64,
    /// `Zero` drops the Hessian and leaves `λI`.
    pub curvature: Curvature,
}

impl Default for CgConfig {
    fn default() -> Self {
        CgConfig {
            damping: 1e-2,
            max_iters: 10,
            tolerance: Tolerance::Relative(1e-4),
            batch_size: 20,
            hvp_mode: HvpMode::Stochastic,
            seed: 0,
            curvature: Curvature::Exact,
        }
    }
}

impl CgConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.damping > 0.0 && self.damping.is_finite()) {
            return Err(Error::invalid(format!(
                "damping must be positive, got {}",
                self.damping
            )));
        }
        if self.max_iters == 0 {
            return Err(Error::invalid("CG iteration budget must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("HVP batch size must be at least 1"));
        }
        let eps = self.tolerance.value();
        if !(eps >= 0.0 && eps.is_finite()) {
            return Err(Error::invalid(format!("tolerance must be non-negative, got {eps}")));
        }
        Ok(())
    }

    /// The damped operator this configuration describes over `objective`.
    pub fn operator<'a, O: Objective>(
        &self,
        objective: &'a O,
        point: ParameterVector,
    ) -> Result<HvpOperator<'a, O>> {
        self.validate()?;
        let batch = match self.hvp_mode {
            HvpMode::Deterministic => BatchSource::Fixed((0..objective.len()).collect()),
            HvpMode::Stochastic => BatchSource::Sampled {
                size: self.batch_size,
                seed: self.seed,
            },
        };
        Ok(HvpOperator::new(objective, point, self.damping, batch)?.with_curvature(self.curvature))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExitReason {
    /// Residual fell below the tolerance.
    Converged,
    /// Iteration budget spent.
    Budget,
    /// Right-hand side was zero; the solution is zero.
    ZeroRhs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CgReport {
    pub iterations: usize,
    pub initial_residual: f64,
    pub final_residual: f64,
    pub converged: bool,
    pub exit: ExitReason,
    /// `‖r_k‖` for `k = 0..=iterations`.
    pub residual_history: Vec<f64>,
}

/// Solves `(H + λI) x = g` by conjugate gradients, one operator application
/// per iteration.
///
/// Iteration `k` (1-based) applies the operator with step `k - 1`, so a
/// stochastic operator draws a fresh batch each iteration.
pub fn cg_solve<O: Objective>(
    operator: &HvpOperator<'_, O>,
    g: &ParameterVector,
    config: &CgConfig,
) -> Result<(ParameterVector, CgReport)> {
    if g.len() != operator.dim() {
        return Err(Error::invalid(format!(
            "right-hand side has length {}, operator expects {}",
            g.len(),
            operator.dim()
        )));
    }
    if !g.is_finite() {
        return Err(Error::numerical("non-finite right-hand side"));
    }
    if !(operator.damping() > 0.0) {
        return Err(Error::invalid("CG needs positive damping"));
    }
    if config.max_iters == 0 {
        return Err(Error::invalid("CG iteration budget must be at least 1"));
    }

    let g_norm = g.norm();
    let mut x = ParameterVector::zeros(g.len());
    if g_norm == 0.0 {
        return Ok((
            x,
            CgReport {
                iterations: 0,
                initial_residual: 0.0,
                final_residual: 0.0,
                converged: true,
                exit: ExitReason::ZeroRhs,
                residual_history: vec![0.0],
            },
        ));
    }
    let threshold = config.tolerance.threshold(g_norm);
    let mut r = g.clone();
    let mut p = r.clone();
    let mut rr = r.dot(&r);
    let mut history = vec![g_norm];
    let mut exit = ExitReason::Budget;
    let mut iterations = 0;

    for k in 1..=config.max_iters {
        let h = operator.apply(&p, (k - 1) as u64)?;
        let php = p.dot(&h);
        if php.is_nan() {
            return Err(Error::numerical(format!("NaN curvature at CG iteration {k}")));
        }
        if php <= 0.0 {
            return Err(Error::Curvature {
                iteration: k,
                curvature: php,
            });
        }
        let alpha = rr / php;
        x.axpy(alpha, &p);
        r.axpy(-alpha, &h);
        if !x.is_finite() || !r.is_finite() {
            return Err(Error::numerical(format!("non-finite CG iterate at iteration {k}")));
        }
        iterations = k;
        let rr_new = r.dot(&r);
        let norm = rr_new.sqrt();
        history.push(norm);
        if norm < threshold || rr_new == 0.0 {
            exit = ExitReason::Converged;
            break;
        }
        let beta = rr_new / rr;
        let mut next = r.clone();
        next.axpy(beta, &p);
        p = next;
        rr = rr_new;
    }

    let final_residual = *history.last().unwrap_or(&g_norm);
    Ok((
        x,
        CgReport {
            iterations,
            initial_residual: g_norm,
            final_residual,
            converged: exit == ExitReason::Converged,
            exit,
            residual_history: history,
        },
    ))
}
