//! Uniform one-dimensional grids, sampled functions, quadrature and
//! finite-difference derivatives.
//!
//! Everything downstream (profiles, weights, the remainder of a
//! decomposition) lives on a [`GridSpec`] as a [`GridFunction`].
//! Quadrature is composite Simpson, differentiation is 4th-order central
//! in the interior with one-sided stencils at the boundary, so both carry
//! O(h^4) errors.

use crate::error::{CoreError, Result};
use serde::{Deserialize, Serialize};

/// Uniformly spaced nodes on [y_min, y_max], endpoints included.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub y_min: f64,
    pub y_max: f64,
    pub n: usize,
}

impl GridSpec {
    pub fn new(y_min: f64, y_max: f64, n: usize) -> Result<Self> {
        if !(y_min.is_finite() && y_max.is_finite()) || y_min >= y_max {
            return Err(CoreError::InvalidGrid(format!(
                "need y_min < y_max, got [{y_min}, {y_max}]"
            )));
        }
        if n < 16 {
            return Err(CoreError::InvalidGrid(format!("need n >= 16, got {n}")));
        }
        Ok(Self { y_min, y_max, n })
    }

    /// Node spacing h = (y_max - y_min) / (n - 1).
    pub fn h(&self) -> f64 {
        (self.y_max - self.y_min) / (self.n - 1) as f64
    }

    pub fn node(&self, i: usize) -> f64 {
        self.y_min + self.h() * i as f64
    }

    pub fn nodes(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.n).map(move |i| self.node(i))
    }

    /// Reference grid used by the profile and decomposition machinery:
    /// y in [-25, 25] with h = 0.01. The exponential localization of the
    /// profiles makes the boundary truncation ~ e^{-25}, far below the
    /// 1e-6 identity tolerances.
    pub fn reference() -> Self {
        Self {
            y_min: -25.0,
            y_max: 25.0,
            n: 5001,
        }
    }
}

/// Real samples of a function on a [`GridSpec`].
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    pub grid: GridSpec,
    pub values: Vec<f64>,
}

impl GridFunction {
    pub fn new(grid: GridSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.n {
            return Err(CoreError::InvalidGrid(format!(
                "value count {} does not match node count {}",
                values.len(),
                grid.n
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(CoreError::InvalidGrid("non-finite sample".into()));
        }
        Ok(Self { grid, values })
    }

    pub fn from_fn(grid: GridSpec, f: impl Fn(f64) -> f64) -> Self {
        let values = grid.nodes().map(f).collect();
        Self { grid, values }
    }

    pub fn zeros(grid: GridSpec) -> Self {
        Self {
            grid,
            values: vec![0.0; grid.n],
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            grid: self.grid,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_with(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        if self.grid != other.grid {
            return Err(CoreError::GridMismatch);
        }
        Ok(Self {
            grid: self.grid,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn scale(&self, a: f64) -> Self {
        self.map(|v| a * v)
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Even reflection average: g(y) = (f(y) + f(-y)) / 2. Requires a grid
    /// symmetric about 0 (node i pairs with node n-1-i).
    pub fn symmetrize_even(&self) -> Result<Self> {
        if (self.grid.y_min + self.grid.y_max).abs() > 1e-12 * self.grid.h() {
            return Err(CoreError::InvalidGrid(
                "symmetrization needs a grid centered at 0".into(),
            ));
        }
        let n = self.grid.n;
        let values = (0..n)
            .map(|i| 0.5 * (self.values[i] + self.values[n - 1 - i]))
            .collect();
        Ok(Self {
            grid: self.grid,
            values,
        })
    }
}

/// Composite Simpson quadrature. Handles an odd interval count with a
/// 3/8-rule tail, keeping the 4th-order accuracy of the interior rule.
pub fn simpson(f: &GridFunction) -> f64 {
    simpson_slice(&f.values, f.grid.h())
}

pub fn simpson_slice(v: &[f64], h: f64) -> f64 {
    let n = v.len();
    assert!(n >= 4, "quadrature needs at least 4 nodes");
    let intervals = n - 1;
    let (simpson_end, mut total) = if intervals % 2 == 0 {
        (n - 1, 0.0)
    } else {
        // 3/8 rule over the last three intervals.
        let a = n - 4;
        let tail = 3.0 * h / 8.0 * (v[a] + 3.0 * v[a + 1] + 3.0 * v[a + 2] + v[a + 3]);
        (a, tail)
    };
    if simpson_end > 0 {
        let mut s = v[0] + v[simpson_end];
        let mut i = 1;
        while i < simpson_end {
            s += 4.0 * v[i];
            if i + 1 < simpson_end {
                s += 2.0 * v[i + 1];
            }
            i += 2;
        }
        total += h / 3.0 * s;
    }
    total
}

/// L^2 inner product (f, g) = ∫ f g by Simpson quadrature.
pub fn inner(f: &GridFunction, g: &GridFunction) -> Result<f64> {
    let prod = f.zip_with(g, |a, b| a * b)?;
    Ok(simpson(&prod))
}

pub fn l2_norm(f: &GridFunction) -> f64 {
    simpson(&f.map(|v| v * v)).max(0.0).sqrt()
}

// 4th-order one-sided first-derivative stencils (row i uses nodes i..i+5 or
// the mirrored set at the right edge).
const D1_EDGE0: [f64; 5] = [-25.0 / 12.0, 4.0, -3.0, 4.0 / 3.0, -0.25];
const D1_EDGE1: [f64; 5] = [-0.25, -5.0 / 6.0, 1.5, -0.5, 1.0 / 12.0];
const D2_EDGE0: [f64; 6] = [
    45.0 / 12.0,
    -154.0 / 12.0,
    214.0 / 12.0,
    -156.0 / 12.0,
    61.0 / 12.0,
    -10.0 / 12.0,
];
const D2_EDGE1: [f64; 6] = [
    10.0 / 12.0,
    -15.0 / 12.0,
    -4.0 / 12.0,
    14.0 / 12.0,
    -6.0 / 12.0,
    1.0 / 12.0,
];

/// First derivative, 4th order: central (1, -8, 0, 8, -1)/(12h) in the
/// interior, one-sided at the two nodes next to each boundary.
pub fn deriv1(f: &GridFunction) -> GridFunction {
    let n = f.grid.n;
    let h = f.grid.h();
    let v = &f.values;
    let mut d = vec![0.0; n];
    for i in 2..n - 2 {
        d[i] = (v[i - 2] - 8.0 * v[i - 1] + 8.0 * v[i + 1] - v[i + 2]) / (12.0 * h);
    }
    d[0] = D1_EDGE0.iter().enumerate().map(|(j, c)| c * v[j]).sum::<f64>() / h;
    d[1] = D1_EDGE1.iter().enumerate().map(|(j, c)| c * v[j]).sum::<f64>() / h;
    d[n - 1] = -D1_EDGE0
        .iter()
        .enumerate()
        .map(|(j, c)| c * v[n - 1 - j])
        .sum::<f64>()
        / h;
    d[n - 2] = -D1_EDGE1
        .iter()
        .enumerate()
        .map(|(j, c)| c * v[n - 1 - j])
        .sum::<f64>()
        / h;
    GridFunction {
        grid: f.grid,
        values: d,
    }
}

/// Second derivative, 4th order: central (-1, 16, -30, 16, -1)/(12h^2) in
/// the interior, one-sided 6-point stencils at the edges.
pub fn deriv2(f: &GridFunction) -> GridFunction {
    let n = f.grid.n;
    let h2 = f.grid.h() * f.grid.h();
    let v = &f.values;
    let mut d = vec![0.0; n];
    for i in 2..n - 2 {
        d[i] = (-v[i - 2] + 16.0 * v[i - 1] - 30.0 * v[i] + 16.0 * v[i + 1] - v[i + 2])
            / (12.0 * h2);
    }
    d[0] = D2_EDGE0.iter().enumerate().map(|(j, c)| c * v[j]).sum::<f64>() / h2;
    d[1] = D2_EDGE1.iter().enumerate().map(|(j, c)| c * v[j]).sum::<f64>() / h2;
    d[n - 1] = D2_EDGE0
        .iter()
        .enumerate()
        .map(|(j, c)| c * v[n - 1 - j])
        .sum::<f64>()
        / h2;
    d[n - 2] = D2_EDGE1
        .iter()
        .enumerate()
        .map(|(j, c)| c * v[n - 1 - j])
        .sum::<f64>()
        / h2;
    GridFunction {
        grid: f.grid,
        values: d,
    }
}

/// Scaling generator Λf = f/2 + y f'.
pub fn scaling_generator(f: &GridFunction) -> GridFunction {
    let df = deriv1(f);
    let values = f
        .grid
        .nodes()
        .zip(f.values.iter().zip(&df.values))
        .map(|(y, (&v, &dv))| 0.5 * v + y * dv)
        .collect();
    GridFunction {
        grid: f.grid,
        values,
    }
}

/// Natural cubic spline on a uniform grid.
#[derive(Debug, Clone)]
pub struct CubicSpline {
    x0: f64,
    h: f64,
    y: Vec<f64>,
    /// Second derivatives at the nodes.
    m: Vec<f64>,
}

impl CubicSpline {
    pub fn new(x0: f64, h: f64, y: Vec<f64>) -> Self {
        let n = y.len();
        assert!(n >= 3, "spline needs at least 3 nodes");
        // Tridiagonal system for the interior second derivatives
        // (natural boundary conditions m[0] = m[n-1] = 0).
        let mut m = vec![0.0; n];
        if n > 2 {
            let k = n - 2;
            let mut diag = vec![4.0; k];
            let mut rhs = vec![0.0; k];
            for i in 0..k {
                rhs[i] = 6.0 / (h * h) * (y[i] - 2.0 * y[i + 1] + y[i + 2]);
            }
            // Thomas algorithm with unit off-diagonals.
            for i in 1..k {
                let w = 1.0 / diag[i - 1];
                diag[i] -= w;
                rhs[i] -= w * rhs[i - 1];
            }
            m[k] = rhs[k - 1] / diag[k - 1];
            for i in (0..k - 1).rev() {
                m[i + 1] = (rhs[i] - m[i + 2]) / diag[i];
            }
        }
        Self { x0, h, y, m }
    }

    pub fn from_grid_function(f: &GridFunction) -> Self {
        Self::new(f.grid.y_min, f.grid.h(), f.values.clone())
    }

    pub fn x_min(&self) -> f64 {
        self.x0
    }

    pub fn x_max(&self) -> f64 {
        self.x0 + self.h * (self.y.len() - 1) as f64
    }

    /// Evaluate; errors outside the table range.
    pub fn eval(&self, x: f64) -> Result<f64> {
        let n = self.y.len();
        let t = (x - self.x0) / self.h;
        if t < -1e-9 || t > (n - 1) as f64 + 1e-9 {
            return Err(CoreError::InterpolationRange {
                x,
                lo: self.x_min(),
                hi: self.x_max(),
            });
        }
        let i = (t.floor() as usize).min(n - 2);
        let a = t - i as f64;
        let b = 1.0 - a;
        let h2 = self.h * self.h;
        Ok(b * self.y[i]
            + a * self.y[i + 1]
            + h2 / 6.0 * ((b * b * b - b) * self.m[i] + (a * a * a - a) * self.m[i + 1]))
    }

    /// Evaluate, returning `outside` beyond the table range.
    pub fn eval_or(&self, x: f64, outside: f64) -> f64 {
        self.eval(x).unwrap_or(outside)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn grid_validation() {
        assert!(GridSpec::new(0.0, 1.0, 16).is_ok());
        assert!(GridSpec::new(1.0, 0.0, 100).is_err());
        assert!(GridSpec::new(0.0, 1.0, 8).is_err());
        assert!(GridSpec::new(0.0, f64::NAN, 100).is_err());
    }

    #[test]
    fn simpson_exact_on_cubics() {
        // Simpson integrates cubics exactly; check on both parities of
        // interval count.
        for n in [101usize, 102] {
            let grid = GridSpec::new(0.0, 2.0, n).unwrap();
            let f = GridFunction::from_fn(grid, |x| 3.0 * x * x * x - x + 2.0);
            // ∫_0^2 (3x^3 - x + 2) = 12 - 2 + 4 = 14
            assert_relative_eq!(simpson(&f), 14.0, max_relative = 1e-12);
        }
    }

    #[test]
    fn simpson_fourth_order() {
        let exact = 1.0 - (-2.0f64).exp();
        let mut errs = Vec::new();
        for n in [51usize, 101, 201] {
            let grid = GridSpec::new(0.0, 2.0, n).unwrap();
            let f = GridFunction::from_fn(grid, |x| (-x).exp());
            errs.push((simpson(&f) - exact).abs());
        }
        assert!(errs[0] / errs[1] > 12.0);
        assert!(errs[1] / errs[2] > 12.0);
    }

    #[test]
    fn derivatives_exact_on_quartics() {
        let grid = GridSpec::new(-1.0, 1.0, 64).unwrap();
        let f = GridFunction::from_fn(grid, |x| x * x * x * x - 2.0 * x * x + x);
        let d1 = deriv1(&f);
        let d2 = deriv2(&f);
        for (i, y) in grid.nodes().enumerate() {
            assert_relative_eq!(
                d1.values[i],
                4.0 * y * y * y - 4.0 * y + 1.0,
                epsilon = 1e-9
            );
            assert_relative_eq!(d2.values[i], 12.0 * y * y - 4.0, epsilon = 1e-7);
        }
    }

    #[test]
    fn derivative_order_of_accuracy() {
        let mut errs = Vec::new();
        for n in [101usize, 201, 401] {
            let grid = GridSpec::new(-2.0, 2.0, n).unwrap();
            let f = GridFunction::from_fn(grid, |x| (1.5 * x).sin());
            let d = deriv1(&f);
            let err = grid
                .nodes()
                .enumerate()
                .map(|(i, y)| (d.values[i] - 1.5 * (1.5 * y).cos()).abs())
                .fold(0.0f64, f64::max);
            errs.push(err);
        }
        // 4th order: halving h divides the error by ~16.
        assert!(errs[0] / errs[1] > 10.0, "{errs:?}");
        assert!(errs[1] / errs[2] > 10.0, "{errs:?}");
    }

    #[test]
    fn inner_product_parity() {
        let grid = GridSpec::new(-10.0, 10.0, 2001).unwrap();
        let even = GridFunction::from_fn(grid, |y| (-y * y).exp());
        let odd = GridFunction::from_fn(grid, |y| y * (-y * y).exp());
        assert!(inner(&even, &odd).unwrap().abs() < 1e-14);
        let zero = GridFunction::zeros(grid);
        assert_eq!(inner(&zero, &even).unwrap(), 0.0);
    }

    #[test]
    fn inner_grid_mismatch() {
        let a = GridFunction::zeros(GridSpec::new(0.0, 1.0, 32).unwrap());
        let b = GridFunction::zeros(GridSpec::new(0.0, 1.0, 33).unwrap());
        assert!(matches!(inner(&a, &b), Err(CoreError::GridMismatch)));
    }

    #[test]
    fn spline_reproduces_smooth_function() {
        let grid = GridSpec::new(0.0, 6.28318, 801).unwrap();
        let f = GridFunction::from_fn(grid, |x| x.sin());
        let s = CubicSpline::from_grid_function(&f);
        for k in 0..200 {
            let x = 0.1 + 0.03 * k as f64;
            assert!((s.eval(x).unwrap() - x.sin()).abs() < 2e-9);
        }
        assert!(s.eval(-0.5).is_err());
        assert!(s.eval(7.0).is_err());
    }

    #[test]
    fn symmetrize_even_is_even() {
        let grid = GridSpec::new(-3.0, 3.0, 61).unwrap();
        let f = GridFunction::from_fn(grid, |y| y + y * y);
        let g = f.symmetrize_even().unwrap();
        for i in 0..grid.n {
            assert_eq!(g.values[i], g.values[grid.n - 1 - i]);
        }
    }
}
