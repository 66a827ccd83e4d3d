//! Derivative-free downhill simplex minimisation.

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NelderMeadOptions {
    pub max_iterations: usize,
    /// Stop when `f_max − f_min ≤ rel_tol · |f_min| + abs_tol` over the simplex.
    pub rel_tol: f64,
    pub abs_tol: f64,
    /// Stop when every vertex lies within this distance of the best one.
    pub x_tol: f64,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        Self {
            max_iterations: 2000,
            rel_tol: 1e-6,
            abs_tol: 1e-12,
            x_tol: 1e-9,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub f: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
}

/// Minimises `f` from `x0` with an initial simplex spanned by `steps`.
/// Non-finite objective values count as worse than any finite one.
pub fn minimize(
    mut f: impl FnMut(&[f64]) -> f64,
    x0: &[f64],
    steps: &[f64],
    opts: NelderMeadOptions,
) -> Minimum {
    let n = x0.len();
    assert_eq!(steps.len(), n, "one step per coordinate");
    let mut evaluations = 0usize;
    let mut eval = |x: &[f64]| {
        evaluations += 1;
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    simplex.push((x0.to_vec(), eval(x0)));
    for (i, &s) in steps.iter().enumerate() {
        let mut x = x0.to_vec();
        x[i] += s;
        let v = eval(&x);
        simplex.push((x, v));
    }
    let (alpha, gamma, rho, shrink) = (1.0, 2.0, 0.5, 0.5);
    let mut iterations = 0;
    let mut converged = false;
    let lerp = |a: &[f64], b: &[f64], t: f64| -> Vec<f64> {
        a.iter().zip(b).map(|(a, b)| a + t * (b - a)).collect()
    };
    while iterations < opts.max_iterations {
        // stable sort keeps the incumbent best on ties
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let (best, worst) = (simplex[0].1, simplex[n].1);
        let spread = simplex[1..]
            .iter()
            .flat_map(|(x, _)| x.iter().zip(&simplex[0].0).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max);
        if (worst - best <= opts.rel_tol * best.abs() + opts.abs_tol) || spread <= opts.x_tol {
            converged = true;
            break;
        }
        iterations += 1;
        let mut centroid = vec![0.0; n];
        for (x, _) in &simplex[..n] {
            for (c, xi) in centroid.iter_mut().zip(x) {
                *c += xi / n as f64;
            }
        }
        let xr = lerp(&centroid, &simplex[n].0, -alpha);
        let fr = eval(&xr);
        if fr < simplex[0].1 {
            let xe = lerp(&centroid, &simplex[n].0, -gamma);
            let fe = eval(&xe);
            simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
            continue;
        }
        if fr < simplex[n - 1].1 {
            simplex[n] = (xr, fr);
            continue;
        }
        let (xc, fc) = if fr < simplex[n].1 {
            let xc = lerp(&centroid, &xr, rho);
            let fc = eval(&xc);
            (xc, fc)
        } else {
            let xc = lerp(&centroid, &simplex[n].0, rho);
            let fc = eval(&xc);
            (xc, fc)
        };
        if fc < simplex[n].1.min(fr) {
            simplex[n] = (xc, fc);
            continue;
        }
        let x_best = simplex[0].0.clone();
        for vertex in simplex.iter_mut().skip(1) {
            vertex.0 = lerp(&x_best, &vertex.0, shrink);
            vertex.1 = eval(&vertex.0);
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    let (x, f) = simplex.swap_remove(0);
    Minimum {
        x,
        f,
        iterations,
        evaluations,
        converged,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rosenbrock() {
        let m = minimize(
            |x| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2),
            &[-1.2, 1.0],
            &[0.5, 0.5],
            NelderMeadOptions {
                max_iterations: 5000,
                rel_tol: 0.0,
                abs_tol: 1e-20,
                x_tol: 1e-10,
            },
        );
        assert!(m.converged);
        assert!(
            (m.x[0] - 1.0).abs() < 1e-5 && (m.x[1] - 1.0).abs() < 1e-5,
            "{:?}",
            m.x
        );
    }

    #[test]
    fn l1_objective_in_three_dims() {
        let target = [0.3, -2.0, 5.0];
        let m = minimize(
            |x| x.iter().zip(&target).map(|(a, b)| (a - b).abs()).sum(),
            &[0.0; 3],
            &[1.0; 3],
            NelderMeadOptions::default(),
        );
        for (a, b) in m.x.iter().zip(&target) {
            assert!((a - b).abs() < 1e-4, "{:?}", m.x);
        }
    }

    #[test]
    fn start_at_minimum_stays_there() {
        let m = minimize(
            |x| x[0].abs() + x[1].abs(),
            &[0.0, 0.0],
            &[0.1, 0.1],
            NelderMeadOptions::default(),
        );
        assert_eq!(m.x, vec![0.0, 0.0]);
        assert_eq!(m.f, 0.0);
    }

    #[test]
    fn iteration_cap_reports_not_converged() {
        let m = minimize(
            |x| x[0] * x[0] + x[1] * x[1],
            &[10.0, 10.0],
            &[1.0, 1.0],
            NelderMeadOptions {
                max_iterations: 3,
                ..NelderMeadOptions::default()
            },
        );
        assert!(!m.converged);
        assert_eq!(m.iterations, 3);
    }
}
