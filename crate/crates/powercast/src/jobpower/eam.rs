//! Enhanced Average Model: per-user average power per component type.
//!
//! Predicted job power is `n_cpu * p_cpu + n_gpu * p_gpu + n_mic * p_mic`,
//! constant over the job's lifetime. Coefficients come from non-negative
//! least squares of the training targets against the per-job resource
//! counts; mixed-resource jobs make naive per-kind averaging ill-defined.
//! Component types the user never touched stay unconstrained by the data
//! and fall back to the supplied (global) averages.

use crate::error::{Error, Result};

use super::TrainingPoint;

/// Average watts per allocated unit, per component type.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EamModel {
    pub p_cpu: f64,
    pub p_gpu: f64,
    pub p_mic: f64,
}

impl EamModel {
    pub const ZERO: EamModel = EamModel { p_cpu: 0.0, p_gpu: 0.0, p_mic: 0.0 };
}

/// Direct evaluation of the average model.
pub fn eam_predict(model: &EamModel, n_cpu: u32, n_gpu: u32, n_mic: u32) -> f64 {
    f64::from(n_cpu) * model.p_cpu + f64::from(n_gpu) * model.p_gpu + f64::from(n_mic) * model.p_mic
}

/// Solve a k-variable (k <= 3) non-negative least squares problem exactly by
/// enumerating active sets: for each subset of variables pinned at zero,
/// solve the unconstrained normal equations on the rest and accept the first
/// subset whose solution is feasible and whose pinned gradients are
/// non-negative. Convexity makes any such point the global optimum.
fn nnls_small(rows: &[Vec<f64>], targets: &[f64]) -> Vec<f64> {
    let k = rows.first().map_or(0, Vec::len);
    debug_assert!(k <= 3);
    let tol = 1e-9 * targets.iter().fold(1.0f64, |m, t| m.max(t.abs()));

    let solve_subset = |free: &[usize]| -> Option<Vec<f64>> {
        let f = free.len();
        if f == 0 {
            return Some(vec![0.0; k]);
        }
        // normal equations restricted to the free columns
        let mut ata = vec![vec![0.0; f]; f];
        let mut atb = vec![0.0; f];
        for (row, &y) in rows.iter().zip(targets) {
            for (a, &ca) in free.iter().enumerate() {
                atb[a] += row[ca] * y;
                for (b, &cb) in free.iter().enumerate() {
                    ata[a][b] += row[ca] * row[cb];
                }
            }
        }
        let sol = solve_linear(&mut ata, &mut atb)?;
        let mut x = vec![0.0; k];
        for (a, &col) in free.iter().enumerate() {
            x[col] = sol[a];
        }
        Some(x)
    };

    let gradient = |x: &[f64]| -> Vec<f64> {
        let mut g = vec![0.0; k];
        for (row, &y) in rows.iter().zip(targets) {
            let r: f64 = row.iter().zip(x).map(|(a, v)| a * v).sum::<f64>() - y;
            for (gi, &a) in g.iter_mut().zip(row) {
                *gi += a * r;
            }
        }
        g
    };

    let mut fallback: Option<(f64, Vec<f64>)> = None;
    for mask in (0u32..(1 << k)).rev() {
        // high bits first: prefer the all-free subset, then smaller ones
        let free: Vec<usize> = (0..k).filter(|&c| mask & (1 << c) != 0).collect();
        let Some(x) = solve_subset(&free) else { continue };
        if x.iter().any(|&v| v < -tol) {
            continue;
        }
        let x: Vec<f64> = x.into_iter().map(|v| v.max(0.0)).collect();
        let g = gradient(&x);
        let kkt_ok = (0..k).all(|cidx| free.contains(&cidx) || g[cidx] >= -tol);
        if kkt_ok {
            return x;
        }
        let residual: f64 = rows
            .iter()
            .zip(targets)
            .map(|(row, &y)| (row.iter().zip(&x).map(|(a, v)| a * v).sum::<f64>() - y).powi(2))
            .sum();
        if fallback.as_ref().is_none_or(|(r, _)| residual < *r) {
            fallback = Some((residual, x));
        }
    }
    // numerically marginal cases: best feasible solution found
    fallback.map(|(_, x)| x).unwrap_or_else(|| vec![0.0; k])
}

/// Gaussian elimination with partial pivoting; None on a singular system.
fn solve_linear(a: &mut [Vec<f64>], b: &mut [f64]) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n).max_by(|&r1, &r2| a[r1][col].abs().total_cmp(&a[r2][col].abs()))?;
        if a[pivot][col].abs() < 1e-12 {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..n {
            let factor = a[row][col] / a[col][col];
            for c in col..n {
                a[row][c] -= factor * a[col][c];
            }
            b[row] -= factor * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let mut acc = b[row];
        for c in row + 1..n {
            acc -= a[row][c] * x[c];
        }
        x[row] = acc / a[row][row];
    }
    Some(x)
}

/// Fit per-unit averages for one user. Component types absent from all of
/// the user's jobs take their coefficient from `defaults`.
pub fn eam_fit(points: &[TrainingPoint], defaults: &EamModel) -> Result<EamModel> {
    if points.is_empty() {
        return Err(Error::Precondition("average model needs at least one training point".into()));
    }
    let used = [
        points.iter().any(|p| p.features.own_cpu_cores > 0),
        points.iter().any(|p| p.features.own_gpus > 0),
        points.iter().any(|p| p.features.own_mics > 0),
    ];
    let free: Vec<usize> = (0..3).filter(|&k| used[k]).collect();

    let rows: Vec<Vec<f64>> = points
        .iter()
        .map(|p| {
            let counts = [
                f64::from(p.features.own_cpu_cores),
                f64::from(p.features.own_gpus),
                f64::from(p.features.own_mics),
            ];
            free.iter().map(|&k| counts[k]).collect()
        })
        .collect();
    let targets: Vec<f64> = points.iter().map(|p| p.target_watts).collect();
    let solved = nnls_small(&rows, &targets);

    let fallback = [defaults.p_cpu, defaults.p_gpu, defaults.p_mic];
    let mut coef = fallback;
    for (slot, &k) in free.iter().enumerate() {
        coef[k] = solved[slot];
    }
    Ok(EamModel { p_cpu: coef[0], p_gpu: coef[1], p_mic: coef[2] })
}

/// The all-users average model, used when a user has no training data at
/// all. Component types nobody used default to zero.
pub fn global_eam_fit(points: &[TrainingPoint]) -> Result<EamModel> {
    if points.is_empty() {
        return Err(Error::Config("no training data at all: cannot fit the global average model".into()));
    }
    eam_fit(points, &EamModel::ZERO)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::FeatureVector;

    fn point(cpu: u32, gpu: u32, mic: u32, target: f64) -> TrainingPoint {
        TrainingPoint {
            features: FeatureVector {
                job_name_code: 0,
                own_cpu_cores: cpu,
                own_gpus: gpu,
                own_mics: mic,
                own_nodes: 1,
                colo_cpu_cores: 0,
                colo_gpus: 0,
                colo_mics: 0,
            },
            target_watts: target,
            job_id: "j".into(),
            at: 0,
        }
    }

    const DEFAULTS: EamModel = EamModel { p_cpu: 7.0, p_gpu: 40.0, p_mic: 25.0 };

    #[test]
    fn single_equation_solve_with_global_defaults() {
        let model = eam_fit(&[point(8, 0, 0, 80.0)], &DEFAULTS).unwrap();
        assert!((model.p_cpu - 10.0).abs() < 1e-9);
        assert_eq!(model.p_gpu, 40.0);
        assert_eq!(model.p_mic, 25.0);
    }

    #[test]
    fn consistent_system_recovers_the_rate() {
        let model = eam_fit(&[point(8, 0, 0, 80.0), point(4, 0, 0, 40.0)], &DEFAULTS).unwrap();
        assert!((model.p_cpu - 10.0).abs() < 1e-9);
    }

    #[test]
    fn empty_input_is_an_error() {
        assert!(matches!(eam_fit(&[], &DEFAULTS), Err(Error::Precondition(_))));
        assert!(matches!(global_eam_fit(&[]), Err(Error::Config(_))));
    }

    #[test]
    fn mixed_resources_solve_exactly_when_consistent() {
        // law: 5 W/core, 60 W/gpu, 30 W/mic
        let pts = vec![
            point(8, 0, 0, 40.0),
            point(4, 1, 0, 80.0),
            point(2, 0, 2, 70.0),
            point(16, 2, 0, 200.0),
        ];
        let model = eam_fit(&pts, &DEFAULTS).unwrap();
        assert!((model.p_cpu - 5.0).abs() < 1e-9);
        assert!((model.p_gpu - 60.0).abs() < 1e-9);
        assert!((model.p_mic - 30.0).abs() < 1e-9);
    }

    #[test]
    fn negative_tendency_is_clipped_at_zero() {
        // targets decrease with gpus: unconstrained LS would want a negative
        // gpu coefficient; NNLS pins it at zero
        let pts = vec![point(8, 0, 0, 80.0), point(8, 1, 0, 60.0), point(8, 2, 0, 40.0)];
        let model = eam_fit(&pts, &DEFAULTS).unwrap();
        assert_eq!(model.p_gpu, 0.0);
        assert!(model.p_cpu > 0.0);
    }

    #[test]
    fn global_fit_of_single_user_matches_user_fit() {
        let pts = vec![point(8, 0, 0, 80.0), point(4, 0, 0, 40.0)];
        let user = eam_fit(&pts, &EamModel::ZERO).unwrap();
        let global = global_eam_fit(&pts).unwrap();
        assert_eq!(user, global);
        // duplicating the data changes nothing
        let doubled: Vec<TrainingPoint> = pts.iter().cloned().chain(pts.iter().cloned()).collect();
        assert_eq!(global_eam_fit(&doubled).unwrap(), global);
    }

    #[test]
    fn predict_is_exact_arithmetic() {
        let model = EamModel { p_cpu: 10.0, p_gpu: 50.0, p_mic: 30.0 };
        assert_eq!(eam_predict(&model, 2, 1, 0), 70.0);
        assert_eq!(eam_predict(&model, 0, 0, 0), 0.0);
        assert_eq!(eam_predict(&model, 8, 0, 2), 140.0);
    }

    #[test]
    fn predict_is_linear_in_counts() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let model = EamModel { p_cpu: 9.25, p_gpu: 41.5, p_mic: 17.75 };
        for _ in 0..100 {
            let a = (rng.gen_range(0..20), rng.gen_range(0..3), rng.gen_range(0..3));
            let b = (rng.gen_range(0..20), rng.gen_range(0..3), rng.gen_range(0..3));
            let lhs = eam_predict(&model, a.0 + b.0, a.1 + b.1, a.2 + b.2);
            let rhs = eam_predict(&model, a.0, a.1, a.2) + eam_predict(&model, b.0, b.1, b.2);
            assert!((lhs - rhs).abs() < 1e-9);
        }
    }

    /// Projected gradient descent oracle for the NNLS objective.
    fn nnls_oracle(rows: &[Vec<f64>], targets: &[f64]) -> Vec<f64> {
        let k = rows[0].len();
        let mut lip = 0.0f64;
        for a in 0..k {
            let mut s = 0.0;
            for b in 0..k {
                s += rows.iter().map(|r| r[a] * r[b]).sum::<f64>().abs();
            }
            lip = lip.max(s);
        }
        let eta = 1.0 / lip.max(1e-12);
        let mut x = vec![0.0; k];
        for _ in 0..200_000 {
            let mut g = vec![0.0; k];
            for (row, &y) in rows.iter().zip(targets) {
                let r: f64 = row.iter().zip(&x).map(|(a, v)| a * v).sum::<f64>() - y;
                for (gi, &a) in g.iter_mut().zip(row) {
                    *gi += a * r;
                }
            }
            for (xi, gi) in x.iter_mut().zip(&g) {
                *xi = (*xi - eta * gi).max(0.0);
            }
        }
        x
    }

    #[test]
    fn nnls_matches_projected_gradient_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        let objective = |rows: &[Vec<f64>], targets: &[f64], x: &[f64]| -> f64 {
            rows.iter()
                .zip(targets)
                .map(|(row, &y)| (row.iter().zip(x).map(|(a, v)| a * v).sum::<f64>() - y).powi(2))
                .sum()
        };
        for _ in 0..20 {
            let n = rng.gen_range(3..12);
            let rows: Vec<Vec<f64>> = (0..n)
                .map(|_| (0..3).map(|_| f64::from(rng.gen_range(0..10u32))).collect())
                .collect();
            let targets: Vec<f64> = (0..n).map(|_| rng.gen_range(-20.0..150.0)).collect();
            let fast = nnls_small(&rows, &targets);
            let slow = nnls_oracle(&rows, &targets);
            let diff = objective(&rows, &targets, &fast) - objective(&rows, &targets, &slow);
            assert!(diff.abs() < 1e-6, "objective mismatch: {diff}");
            assert!(fast.iter().all(|&v| v >= 0.0));
        }
    }
}
