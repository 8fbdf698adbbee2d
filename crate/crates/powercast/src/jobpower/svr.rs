//! Epsilon-insensitive support vector regression.
//!
//! The dual problem is solved with sequential pairwise coordinate descent
//! over the 2n box-constrained variables (alpha, alpha*), picking the
//! maximal violating pair each step, LIBSVM-style. Training stops when the
//! KKT gap falls below the tolerance or the pass budget is exhausted.
//!
//! Inputs are expanded before the kernel sees them: the job-name code turns
//! into a one-hot block with a reserved bucket for names unseen at training
//! time, and the numeric dimensions are standardized with statistics frozen
//! from the training set.

use crate::error::{Error, Result};
use crate::features::{FeatureVector, UNKNOWN_NAME};

use super::TrainingPoint;

/// Curvature floor for a non-positive-definite working pair.
const TAU: f64 = 1e-12;

pub const DEFAULT_KKT_TOL: f64 = 1e-3;
/// Safety budget: one pass is a dataset sweep, so the solver performs at
/// most `passes * n` pair optimizations before giving up on the tolerance.
pub const DEFAULT_MAX_PASSES: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KernelSpec {
    Rbf { gamma: f64 },
    Linear,
}

impl KernelSpec {
    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        match *self {
            KernelSpec::Rbf { gamma } => {
                let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
                (-gamma * d2).exp()
            }
            KernelSpec::Linear => a.iter().zip(b).map(|(x, y)| x * y).sum(),
        }
    }

    fn validate(&self) -> Result<()> {
        if let KernelSpec::Rbf { gamma } = *self {
            if !(gamma > 0.0) || !gamma.is_finite() {
                return Err(Error::InvalidInput(format!("rbf gamma must be positive, got {gamma}")));
            }
        }
        Ok(())
    }
}

/// Conventional default for the RBF width: one over the input dimension.
pub fn default_gamma(dims: usize) -> f64 {
    1.0 / dims.max(1) as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct SvrParams {
    pub c: f64,
    pub epsilon: f64,
    pub kernel: KernelSpec,
    pub kkt_tol: f64,
    pub max_passes: usize,
}

impl SvrParams {
    pub fn new(c: f64, epsilon: f64, kernel: KernelSpec) -> Self {
        SvrParams { c, epsilon, kernel, kkt_tol: DEFAULT_KKT_TOL, max_passes: DEFAULT_MAX_PASSES }
    }

    fn validate(&self) -> Result<()> {
        if !(self.c > 0.0) {
            return Err(Error::InvalidInput(format!("box constraint C must be positive, got {}", self.c)));
        }
        if self.epsilon < 0.0 {
            return Err(Error::InvalidInput(format!("epsilon must be non-negative, got {}", self.epsilon)));
        }
        self.kernel.validate()
    }
}

/// Raw solution of the dual problem.
#[derive(Debug, Clone)]
pub struct DualSolution {
    pub alpha: Vec<f64>,
    pub alpha_star: Vec<f64>,
    pub bias: f64,
    pub iterations: usize,
    /// Final KKT gap (max violating pair difference).
    pub gap: f64,
}

impl DualSolution {
    /// Expansion coefficients `alpha_i - alpha*_i`.
    pub fn betas(&self) -> Vec<f64> {
        self.alpha.iter().zip(&self.alpha_star).map(|(a, s)| a - s).collect()
    }
}

/// Minimize `1/2 sum_ij beta_i beta_j K_ij + eps sum (a_i + a*_i) - sum y_i beta_i`
/// over `0 <= alpha, alpha* <= C` with `sum beta = 0`, `beta = alpha - alpha*`.
pub fn solve_dual(inputs: &[Vec<f64>], targets: &[f64], params: &SvrParams) -> Result<DualSolution> {
    params.validate()?;
    let n = inputs.len();
    if n < 2 {
        return Err(Error::InvalidInput(format!("need at least 2 training points, got {n}")));
    }
    if targets.len() != n {
        return Err(Error::InvalidInput("inputs and targets disagree in length".into()));
    }
    if targets.iter().any(|y| !y.is_finite()) || inputs.iter().flatten().any(|x| !x.is_finite()) {
        return Err(Error::InvalidInput("non-finite training data".into()));
    }

    let c = params.c;
    let eps = params.epsilon;
    let kernel = &params.kernel;
    let two_n = 2 * n;

    // Variable s < n is alpha_s (sign +1), s >= n is alpha*_{s-n} (sign -1).
    let sign = |s: usize| if s < n { 1.0 } else { -1.0 };
    let point = |s: usize| s % n;

    let diag: Vec<f64> = inputs.iter().map(|x| kernel.eval(x, x)).collect();
    let column = |i: usize| -> Vec<f64> { inputs.iter().map(|x| kernel.eval(&inputs[i], x)).collect() };

    let mut z = vec![0.0f64; two_n];
    let mut grad: Vec<f64> = (0..two_n)
        .map(|s| if s < n { eps - targets[s] } else { eps + targets[s - n] })
        .collect();

    let budget = params.max_passes.saturating_mul(n);
    let mut iterations = 0usize;
    let (m_final, big_m_final);
    loop {
        // Working-set selection: i maximizes -u_s G_s over variables that
        // can move up. j comes from the second-order gain among down-movable
        // variables below i, which converges far faster than the plain
        // maximal violating pair on low-rank kernels.
        let mut m = f64::NEG_INFINITY;
        let mut big_m = f64::INFINITY;
        let mut i = usize::MAX;
        for s in 0..two_n {
            let v = -sign(s) * grad[s];
            let up = if s < n { z[s] < c } else { z[s] > 0.0 };
            let down = if s < n { z[s] > 0.0 } else { z[s] < c };
            if up && v > m {
                m = v;
                i = s;
            }
            if down && v < big_m {
                big_m = v;
            }
        }

        if i == usize::MAX || m - big_m <= params.kkt_tol || iterations >= budget {
            m_final = m;
            big_m_final = big_m;
            break;
        }

        let pi = point(i);
        let ui = sign(i);
        let col_i = column(pi);

        let mut j = usize::MAX;
        let mut best_gain = 0.0;
        for s in 0..two_n {
            let down = if s < n { z[s] > 0.0 } else { z[s] < c };
            if !down {
                continue;
            }
            let v = -sign(s) * grad[s];
            if v >= m {
                continue;
            }
            let mut quad = diag[pi] + diag[point(s)] - 2.0 * col_i[point(s)];
            if quad <= 0.0 {
                quad = TAU;
            }
            let gain = -(m - v) * (m - v) / quad;
            if gain < best_gain {
                best_gain = gain;
                j = s;
            }
        }
        if j == usize::MAX {
            m_final = m;
            big_m_final = big_m;
            break;
        }

        let pj = point(j);
        let uj = sign(j);
        let col_j = column(pj);
        let vj = -uj * grad[j];

        let mut quad = diag[pi] + diag[pj] - 2.0 * col_i[pj];
        if quad <= 0.0 {
            quad = TAU;
        }

        // Step along the feasible direction (dz_i, dz_j) = (delta, -ui*uj*delta).
        let mut delta = ui * (m - vj) / quad;
        let (mut lo, mut hi) = (-z[i], c - z[i]);
        if ui * uj > 0.0 {
            lo = lo.max(z[j] - c);
            hi = hi.min(z[j]);
        } else {
            lo = lo.max(-z[j]);
            hi = hi.min(c - z[j]);
        }
        delta = delta.clamp(lo, hi);

        let dz_i = delta;
        let dz_j = -ui * uj * delta;
        z[i] += dz_i;
        z[j] += dz_j;

        for s in 0..two_n {
            grad[s] += sign(s) * (ui * col_i[point(s)] * dz_i + uj * col_j[point(s)] * dz_j);
        }
        iterations += 1;
    }

    // For free variables -u_s G_s equals the bias exactly; with none free the
    // midpoint of the bracket is the canonical choice.
    let bias = (m_final + big_m_final) / 2.0;

    Ok(DualSolution {
        alpha: z[..n].to_vec(),
        alpha_star: z[n..].to_vec(),
        bias,
        iterations,
        gap: m_final - big_m_final,
    })
}

/// Dual objective value (minimization form) at a given (alpha, alpha*).
pub fn dual_objective(
    inputs: &[Vec<f64>],
    targets: &[f64],
    epsilon: f64,
    kernel: &KernelSpec,
    alpha: &[f64],
    alpha_star: &[f64],
) -> f64 {
    let n = inputs.len();
    let betas: Vec<f64> = alpha.iter().zip(alpha_star).map(|(a, s)| a - s).collect();
    let mut quad = 0.0;
    for i in 0..n {
        for j in 0..n {
            quad += betas[i] * betas[j] * kernel.eval(&inputs[i], &inputs[j]);
        }
    }
    let l1: f64 = alpha.iter().zip(alpha_star).map(|(a, s)| a + s).sum();
    let lin: f64 = targets.iter().zip(&betas).map(|(y, b)| y * b).sum();
    0.5 * quad + epsilon * l1 - lin
}

/// Per-variable KKT residuals of a dual solution, recomputed from scratch.
/// At a solution within tolerance every residual is at most gap/2.
pub fn kkt_residuals(inputs: &[Vec<f64>], targets: &[f64], params: &SvrParams, sol: &DualSolution) -> Vec<f64> {
    let n = inputs.len();
    let betas = sol.betas();
    let mut residuals = Vec::with_capacity(2 * n);
    for s in 0..2 * n {
        let p = s % n;
        let u = if s < n { 1.0 } else { -1.0 };
        let z = if s < n { sol.alpha[p] } else { sol.alpha_star[p] };
        let g_of_point: f64 = (0..n).map(|t| betas[t] * params.kernel.eval(&inputs[t], &inputs[p])).sum();
        let grad = u * g_of_point + if s < n { params.epsilon - targets[p] } else { params.epsilon + targets[p] };
        let v = -u * grad;
        let up = if s < n { z < params.c } else { z > 0.0 };
        let down = if s < n { z > 0.0 } else { z < params.c };
        let r = match (up, down) {
            (true, true) => (v - sol.bias).abs(),
            (true, false) => (v - sol.bias).max(0.0),
            (false, true) => (sol.bias - v).max(0.0),
            (false, false) => 0.0,
        };
        residuals.push(r);
    }
    residuals
}

/// Per-dimension standardization statistics for the numeric feature block.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardization {
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
}

impl Standardization {
    fn from_numeric(rows: &[[f64; FeatureVector::NUMERIC_DIMS]]) -> Standardization {
        let n = rows.len() as f64;
        let dims = FeatureVector::NUMERIC_DIMS;
        let mut means = vec![0.0; dims];
        for row in rows {
            for (m, x) in means.iter_mut().zip(row) {
                *m += x;
            }
        }
        for m in &mut means {
            *m /= n;
        }
        let mut stds = vec![0.0; dims];
        for row in rows {
            for d in 0..dims {
                stds[d] += (row[d] - means[d]).powi(2);
            }
        }
        for s in &mut stds {
            *s = (*s / n).sqrt();
            if *s < 1e-12 {
                *s = 1.0; // constant dimension: center only
            }
        }
        Standardization { means, stds }
    }

    fn apply(&self, row: &[f64; FeatureVector::NUMERIC_DIMS], out: &mut Vec<f64>) {
        for d in 0..FeatureVector::NUMERIC_DIMS {
            out.push((row[d] - self.means[d]) / self.stds[d]);
        }
    }
}

/// A trained per-user SVR predictor.
#[derive(Debug, Clone)]
pub struct SvrModel {
    /// Expanded, standardized inputs with their dual coefficients.
    pub support_vectors: Vec<(Vec<f64>, f64)>,
    pub bias: f64,
    pub kernel: KernelSpec,
    pub standardization: Standardization,
    /// Width of the one-hot name block, not counting the unknown bucket.
    pub name_dims: usize,
}

impl SvrModel {
    /// Total expanded input width (one-hot block, unknown bucket, numerics).
    pub fn input_dims(&self) -> usize {
        self.name_dims + 1 + FeatureVector::NUMERIC_DIMS
    }

    /// One-hot name block plus standardized numeric block.
    pub fn expand(&self, f: &FeatureVector) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.input_dims());
        let bucket = if f.job_name_code == UNKNOWN_NAME || f.job_name_code >= self.name_dims {
            self.name_dims
        } else {
            f.job_name_code
        };
        for d in 0..=self.name_dims {
            out.push(if d == bucket { 1.0 } else { 0.0 });
        }
        self.standardization.apply(&f.numeric(), &mut out);
        out
    }

    /// Kernel expansion without the physical clamp.
    pub fn predict_raw(&self, f: &FeatureVector) -> f64 {
        let x = self.expand(f);
        let mut acc = self.bias;
        for (sv, coef) in &self.support_vectors {
            acc += coef * self.kernel.eval(sv, &x);
        }
        acc
    }
}

/// Width of the expanded input for a training set: distinct name codes,
/// the unknown bucket, and the numeric block.
pub fn expanded_dims(points: &[TrainingPoint]) -> usize {
    name_dims(points) + 1 + FeatureVector::NUMERIC_DIMS
}

fn name_dims(points: &[TrainingPoint]) -> usize {
    points
        .iter()
        .map(|p| p.features.job_name_code)
        .filter(|&c| c != UNKNOWN_NAME)
        .map(|c| c + 1)
        .max()
        .unwrap_or(0)
}

/// Fit an SVR model on a user's training points.
pub fn svr_fit(points: &[TrainingPoint], params: &SvrParams) -> Result<SvrModel> {
    if points.len() < 2 {
        return Err(Error::InvalidInput(format!("svr needs at least 2 points, got {}", points.len())));
    }
    let numeric: Vec<[f64; FeatureVector::NUMERIC_DIMS]> = points.iter().map(|p| p.features.numeric()).collect();
    let standardization = Standardization::from_numeric(&numeric);
    let name_dims = name_dims(points);

    let shell = SvrModel {
        support_vectors: Vec::new(),
        bias: 0.0,
        kernel: params.kernel,
        standardization,
        name_dims,
    };
    let inputs: Vec<Vec<f64>> = points.iter().map(|p| shell.expand(&p.features)).collect();
    let targets: Vec<f64> = points.iter().map(|p| p.target_watts).collect();

    let sol = solve_dual(&inputs, &targets, params)?;
    let betas = sol.betas();
    let support_vectors: Vec<(Vec<f64>, f64)> = inputs
        .into_iter()
        .zip(betas)
        .filter(|(_, b)| *b != 0.0)
        .collect();

    Ok(SvrModel { support_vectors, bias: sol.bias, ..shell })
}

/// Predict a job's power from its features. Power is physical, so negative
/// kernel output is clamped to zero.
pub fn svr_predict(model: &SvrModel, f: &FeatureVector) -> f64 {
    model.predict_raw(f).max(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn point(features: FeatureVector, target: f64) -> TrainingPoint {
        TrainingPoint { features, target_watts: target, job_id: "j".into(), at: 0 }
    }

    fn fv(code: usize, cpu: u32, colo: u32) -> FeatureVector {
        FeatureVector {
            job_name_code: code,
            own_cpu_cores: cpu,
            own_gpus: 0,
            own_mics: 0,
            own_nodes: 1,
            colo_cpu_cores: colo,
            colo_gpus: 0,
            colo_mics: 0,
        }
    }

    #[test]
    fn constant_targets_yield_constant_model() {
        let points: Vec<TrainingPoint> = (0..6).map(|i| point(fv(0, 4 + i % 3, 0), 50.0)).collect();
        let params = SvrParams::new(10.0, 0.5, KernelSpec::Rbf { gamma: 0.1 });
        let model = svr_fit(&points, &params).unwrap();
        for p in &points {
            assert!((svr_predict(&model, &p.features) - 50.0).abs() <= 0.5 + 1e-9);
        }
        // constants solve exactly: no support vectors at all
        assert!(model.support_vectors.is_empty());
    }

    #[test]
    fn linear_kernel_fits_a_line_within_epsilon() {
        // y = 2x on cpu cores, linear kernel, small tube
        let points: Vec<TrainingPoint> = (1..=8).map(|i| point(fv(0, i, 0), 2.0 * f64::from(i))).collect();
        let params = SvrParams::new(100.0, 0.05, KernelSpec::Linear);
        let model = svr_fit(&points, &params).unwrap();
        for p in &points {
            let err = (model.predict_raw(&p.features) - p.target_watts).abs();
            assert!(err <= 0.05 + 1e-6, "error {err}");
        }
    }

    #[test]
    fn negative_raw_output_is_clamped() {
        let model = SvrModel {
            support_vectors: vec![],
            bias: -3.0,
            kernel: KernelSpec::Linear,
            standardization: Standardization { means: vec![0.0; 7], stds: vec![1.0; 7] },
            name_dims: 0,
        };
        assert_eq!(model.predict_raw(&fv(0, 1, 0)), -3.0);
        assert_eq!(svr_predict(&model, &fv(0, 1, 0)), 0.0);
    }

    #[test]
    fn support_vector_predictions_respect_the_tube() {
        // noiseless realizable data: at convergence every training point with
        // zero slack sits within eps (+ the KKT slack) of its target
        let points: Vec<TrainingPoint> = (0..20u32)
            .map(|i| {
                let cpu = 1 + i % 5;
                let colo = (i / 5) % 3;
                point(fv((i % 2) as usize, cpu, colo), 10.0 * f64::from(cpu) + 2.0 * f64::from(colo))
            })
            .collect();
        let params = SvrParams::new(100.0, 0.5, KernelSpec::Rbf { gamma: 0.5 });
        let model = svr_fit(&points, &params).unwrap();
        // interior (non-support) points are strictly inside the tube
        for p in &points {
            let raw = model.predict_raw(&p.features);
            assert!((raw - p.target_watts).abs() <= 0.5 + 1e-2, "{raw} vs {}", p.target_watts);
        }
    }

    #[test]
    fn unknown_name_codes_share_the_reserved_bucket() {
        let points: Vec<TrainingPoint> = (0..4).map(|i| point(fv(i % 2, 2, 0), 20.0)).collect();
        let params = SvrParams::new(1.0, 0.5, KernelSpec::Rbf { gamma: 0.1 });
        let model = svr_fit(&points, &params).unwrap();
        assert_eq!(model.name_dims, 2);
        let seen = model.expand(&fv(1, 2, 0));
        let novel = model.expand(&fv(UNKNOWN_NAME, 2, 0));
        let too_big = model.expand(&fv(7, 2, 0));
        assert_eq!(novel, too_big);
        assert_ne!(seen, novel);
        assert_eq!(novel[2], 1.0); // the reserved bucket
    }

    #[test]
    fn solver_rejects_degenerate_parameters() {
        let points: Vec<TrainingPoint> = (0..2).map(|i| point(fv(0, i + 1, 0), 1.0)).collect();
        assert!(svr_fit(&points[..1], &SvrParams::new(1.0, 0.1, KernelSpec::Linear)).is_err());
        assert!(svr_fit(&points, &SvrParams::new(0.0, 0.1, KernelSpec::Linear)).is_err());
        assert!(svr_fit(&points, &SvrParams::new(1.0, -0.1, KernelSpec::Linear)).is_err());
        assert!(svr_fit(&points, &SvrParams::new(1.0, 0.1, KernelSpec::Rbf { gamma: 0.0 })).is_err());
    }

    #[test]
    fn dual_solution_satisfies_box_and_equality_constraints() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for trial in 0..20 {
            let n = rng.gen_range(2..9);
            let inputs: Vec<Vec<f64>> = (0..n)
                .map(|_| (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect())
                .collect();
            let targets: Vec<f64> = (0..n).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let c = [1.0, 10.0][trial % 2];
            let params = SvrParams::new(c, 0.2, KernelSpec::Rbf { gamma: 0.7 });
            let sol = solve_dual(&inputs, &targets, &params).unwrap();
            let balance: f64 = sol.betas().iter().sum();
            assert!(balance.abs() < 1e-9, "equality constraint violated: {balance}");
            for (&a, &s) in sol.alpha.iter().zip(&sol.alpha_star) {
                assert!((-1e-12..=c + 1e-12).contains(&a));
                assert!((-1e-12..=c + 1e-12).contains(&s));
            }
            assert!(sol.gap <= params.kkt_tol);
            let worst = kkt_residuals(&inputs, &targets, &params, &sol)
                .into_iter()
                .fold(0.0f64, f64::max);
            assert!(worst <= params.kkt_tol, "kkt residual {worst}");
        }
    }
}
