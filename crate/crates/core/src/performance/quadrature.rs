//! Gauss–Hermite rules by the Golub–Welsch eigenvalue method.

use nalgebra::DMatrix;

/// Nodes and weights for `∫ f(t) e^{−t²} dt ≈ Σ w_i f(t_i)`.
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    let jacobi = DMatrix::from_fn(n, n, |i, j| {
        if i.abs_diff(j) == 1 {
            (i.max(j) as f64 / 2.0).sqrt()
        } else {
            0.0
        }
    });
    let eig = jacobi.symmetric_eigen();
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|i| {
            let v0 = eig.eigenvectors[(0, i)];
            (eig.eigenvalues[i], std::f64::consts::PI.sqrt() * v0 * v0)
        })
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs.into_iter().unzip()
}

/// `E[f(ε)]` for `ε ~ CN(0, var)` on a tensor-product rule.
pub fn complex_gaussian_mean(var: f64, n: usize, f: impl Fn(f64, f64) -> f64) -> f64 {
    if var == 0.0 {
        return f(0.0, 0.0);
    }
    let (t, w) = gauss_hermite(n);
    let s = var.sqrt();
    let mut acc = 0.0;
    for (ti, wi) in t.iter().zip(&w) {
        for (tj, wj) in t.iter().zip(&w) {
            acc += wi * wj * f(s * ti, s * tj);
        }
    }
    acc / std::f64::consts::PI
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn integrates_low_moments() {
        let (t, w) = gauss_hermite(20);
        let pi = std::f64::consts::PI;
        let m0: f64 = w.iter().sum();
        let m2: f64 = t.iter().zip(&w).map(|(t, w)| w * t * t).sum();
        let m4: f64 = t.iter().zip(&w).map(|(t, w)| w * t.powi(4)).sum();
        assert!((m0 - pi.sqrt()).abs() < 1e-12);
        assert!((m2 - pi.sqrt() / 2.0).abs() < 1e-12);
        assert!((m4 - 3.0 * pi.sqrt() / 4.0).abs() < 1e-12);
    }

    #[test]
    fn complex_second_moment() {
        let v = complex_gaussian_mean(0.3, 10, |x, y| x * x + y * y);
        assert!((v - 0.3).abs() < 1e-12);
    }
}
