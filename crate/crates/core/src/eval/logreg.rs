use crate::error::{Error, Result};

/// Multinomial logistic regression with an L2 penalty on the weights (not
/// the intercepts), fitted by accelerated gradient descent with
/// backtracking from a zero start.
///
/// The objective is `mean cross-entropy + ||W||² / (2·C·N)`, the per-sample
/// form of the usual `C · Σ loss + ||W||² / 2`.
#[derive(Debug, Clone, PartialEq)]
pub struct LogisticRegression {
    pub classes: usize,
    pub dim: usize,
    /// `[classes, dim]` row-major.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRegConfig {
    pub c: f64,
    pub max_iter: usize,
}

impl Default for LogRegConfig {
    fn default() -> Self {
        Self {
            c: 1.0,
            max_iter: 100,
        }
    }
}

struct Problem<'a> {
    x: &'a [Vec<f64>],
    y: &'a [usize],
    k: usize,
    d: usize,
    lambda: f64,
}

impl Problem<'_> {
    fn logits(&self, theta: &[f64], x: &[f64]) -> Vec<f64> {
        let (w, b) = theta.split_at(self.k * self.d);
        (0..self.k)
            .map(|c| {
                b[c] + w[c * self.d..(c + 1) * self.d]
                    .iter()
                    .zip(x)
                    .map(|(a, b)| a * b)
                    .sum::<f64>()
            })
            .collect()
    }

    /// Objective value and gradient at `theta = [W | b]`.
    fn eval(&self, theta: &[f64], want_grad: bool) -> (f64, Vec<f64>) {
        let (k, d) = (self.k, self.d);
        let n = self.x.len() as f64;
        let mut grad = if want_grad {
            vec![0.0; theta.len()]
        } else {
            Vec::new()
        };
        let mut loss = 0.0;
        for (x, &y) in self.x.iter().zip(self.y) {
            let z = self.logits(theta, x);
            let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            loss += lse - z[y];
            if want_grad {
                for c in 0..k {
                    let r = ((z[c] - lse).exp() - f64::from(u8::from(c == y))) / n;
                    for j in 0..d {
                        grad[c * d + j] += r * x[j];
                    }
                    grad[k * d + c] += r;
                }
            }
        }
        let w = &theta[..k * d];
        let reg = 0.5 * self.lambda * w.iter().map(|v| v * v).sum::<f64>();
        if want_grad {
            for (g, v) in grad.iter_mut().zip(w) {
                *g += self.lambda * v;
            }
        }
        (loss / n + reg, grad)
    }
}

impl LogisticRegression {
    /// Fits on features `x` with class indices `y < classes`.
    pub fn fit(x: &[Vec<f64>], y: &[usize], classes: usize, config: &LogRegConfig) -> Result<Self> {
        if x.is_empty() || x.len() != y.len() {
            return Err(Error::Input(format!(
                "{} feature rows for {} labels",
                x.len(),
                y.len()
            )));
        }
        if classes < 2 {
            return Err(Error::Input(
                "classification needs at least two classes".into(),
            ));
        }
        if y.iter().any(|&c| c >= classes) {
            return Err(Error::Contract("label index out of range".into()));
        }
        if config.c.is_nan() || config.c <= 0.0 {
            return Err(Error::Input(format!(
                "regularisation C must be positive, got {}",
                config.c
            )));
        }
        let d = x[0].len();
        if x.iter().any(|r| r.len() != d) {
            return Err(Error::Input("ragged feature matrix".into()));
        }
        let p = Problem {
            x,
            y,
            k: classes,
            d,
            lambda: 1.0 / (config.c * x.len() as f64),
        };
        let mut theta = vec![0.0; classes * (d + 1)];
        let mut prev = theta.clone();
        let mut t = 1.0f64;
        let mut lip = 1.0f64;
        for _ in 0..config.max_iter {
            let t_next = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
            let beta = (t - 1.0) / t_next;
            let yk: Vec<f64> = theta
                .iter()
                .zip(&prev)
                .map(|(a, b)| a + beta * (a - b))
                .collect();
            let (fy, g) = p.eval(&yk, true);
            let gnorm2: f64 = g.iter().map(|v| v * v).sum();
            if gnorm2 == 0.0 {
                break;
            }
            let next = loop {
                let cand: Vec<f64> = yk.iter().zip(&g).map(|(a, b)| a - b / lip).collect();
                let (fc, _) = p.eval(&cand, false);
                if fc <= fy - gnorm2 / (2.0 * lip) || lip > 1e12 {
                    break cand;
                }
                lip *= 2.0;
            };
            prev = std::mem::replace(&mut theta, next);
            t = t_next;
        }
        let bias = theta.split_off(classes * d);
        Ok(Self {
            classes,
            dim: d,
            weights: theta,
            bias,
        })
    }

    /// Highest-scoring class; ties go to the lowest index.
    pub fn predict(&self, x: &[f64]) -> usize {
        let mut best = (0, f64::NEG_INFINITY);
        for c in 0..self.classes {
            let z = self.bias[c]
                + self.weights[c * self.dim..(c + 1) * self.dim]
                    .iter()
                    .zip(x)
                    .map(|(a, b)| a * b)
                    .sum::<f64>();
            if z > best.1 {
                best = (c, z);
            }
        }
        best.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separable_train_set_fits() {
        let x: Vec<Vec<f64>> = (0..20)
            .map(|i| vec![if i < 10 { -1.0 } else { 1.0 }, (i % 3) as f64])
            .collect();
        let y: Vec<usize> = (0..20).map(|i| usize::from(i >= 10)).collect();
        let m = LogisticRegression::fit(&x, &y, 2, &LogRegConfig::default()).unwrap();
        assert!(x.iter().zip(&y).all(|(r, &c)| m.predict(r) == c));
    }

    #[test]
    fn constant_features_predict_majority() {
        let x = vec![vec![0.3, -0.2]; 10];
        let y = [2, 2, 2, 2, 0, 0, 1, 1, 1, 2];
        let m = LogisticRegression::fit(&x, &y, 3, &LogRegConfig::default()).unwrap();
        assert_eq!(m.predict(&x[0]), 2);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let x = vec![vec![0.5, -1.0], vec![1.5, 0.2], vec![-0.3, 0.8]];
        let y = [0, 2, 1];
        let p = Problem {
            x: &x,
            y: &y,
            k: 3,
            d: 2,
            lambda: 0.1,
        };
        let theta: Vec<f64> = (0..9).map(|i| (i as f64 * 0.37).sin()).collect();
        let (_, g) = p.eval(&theta, true);
        for i in 0..theta.len() {
            let mut a = theta.clone();
            let mut b = theta.clone();
            a[i] += 1e-6;
            b[i] -= 1e-6;
            let num = (p.eval(&a, false).0 - p.eval(&b, false).0) / 2e-6;
            assert!((num - g[i]).abs() < 1e-8, "{i}: {num} vs {}", g[i]);
        }
    }
}
