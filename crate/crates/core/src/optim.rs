//! Derivative-free minimisation by the Nelder–Mead simplex method.

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NelderMead {
    /// Edge length of the initial axis-aligned simplex.
    pub step: f64,
    pub max_iter: usize,
    /// Stop when both the spread of simplex values and the simplex diameter
    /// fall below these.
    pub f_tol: f64,
    pub x_tol: f64,
}

impl Default for NelderMead {
    fn default() -> Self {
        Self {
            step: 1.0,
            max_iter: 5000,
            f_tol: 1e-16,
            x_tol: 1e-11,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
}

impl NelderMead {
    pub fn minimize<F: Fn(&[f64]) -> f64>(&self, f: F, start: &[f64]) -> Minimum {
        let n = start.len();
        let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
        simplex.push(start.to_vec());
        for i in 0..n {
            let mut v = start.to_vec();
            v[i] += self.step;
            simplex.push(v);
        }
        let mut values: Vec<f64> = simplex.iter().map(|v| f(v)).collect();
        let mut iterations = 0;
        while iterations < self.max_iter {
            iterations += 1;
            let mut order: Vec<usize> = (0..=n).collect();
            order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
            simplex = order.iter().map(|&i| simplex[i].clone()).collect();
            values = order.iter().map(|&i| values[i]).collect();

            let spread = values[n] - values[0];
            let diameter = simplex[1..]
                .iter()
                .map(|v| v.iter().zip(&simplex[0]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
                .fold(0.0, f64::max);
            if spread <= self.f_tol && diameter <= self.x_tol {
                break;
            }

            let centroid: Vec<f64> = (0..n)
                .map(|c| simplex[..n].iter().map(|v| v[c]).sum::<f64>() / n as f64)
                .collect();
            let along = |t: f64| -> Vec<f64> {
                (0..n).map(|c| centroid[c] + t * (simplex[n][c] - centroid[c])).collect()
            };
            let reflected = along(-1.0);
            let fr = f(&reflected);
            if fr < values[0] {
                let expanded = along(-2.0);
                let fe = f(&expanded);
                if fe < fr {
                    simplex[n] = expanded;
                    values[n] = fe;
                } else {
                    simplex[n] = reflected;
                    values[n] = fr;
                }
                continue;
            }
            if fr < values[n - 1] {
                simplex[n] = reflected;
                values[n] = fr;
                continue;
            }
            let (contracted, fc) = if fr < values[n] {
                let c = along(-0.5);
                let v = f(&c);
                (c, v)
            } else {
                let c = along(0.5);
                let v = f(&c);
                (c, v)
            };
            if fc < values[n].min(fr) {
                simplex[n] = contracted;
                values[n] = fc;
                continue;
            }
            for i in 1..=n {
                for c in 0..n {
                    simplex[i][c] = simplex[0][c] + 0.5 * (simplex[i][c] - simplex[0][c]);
                }
                values[i] = f(&simplex[i]);
            }
        }
        let best = (0..=n)
            .min_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)))
            .expect("non-empty simplex");
        Minimum {
            x: simplex[best].clone(),
            value: values[best],
            iterations,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rosenbrock() {
        let f = |x: &[f64]| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
        let m = NelderMead { step: 0.5, ..Default::default() }.minimize(f, &[-1.2, 1.0]);
        assert!((m.x[0] - 1.0).abs() < 1e-5 && (m.x[1] - 1.0).abs() < 1e-5, "{:?}", m.x);
    }

    #[test]
    fn never_worse_than_start() {
        let f = |x: &[f64]| x[0].abs() + (x[1] - 3.0).abs();
        let start = [5.0, -2.0];
        let m = NelderMead::default().minimize(f, &start);
        assert!(m.value <= f(&start));
        assert!(m.value < 1e-6);
    }
}
