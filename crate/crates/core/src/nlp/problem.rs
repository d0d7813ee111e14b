use super::poly::Poly;
use crate::linalg::Matrix;
use crate::scalar::Real;

#[derive(Clone, Debug, PartialEq)]
pub struct Variable<T> {
    pub name: String,
    pub lower: T,
    pub upper: T,
    /// Default starting value.
    pub initial: T,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Equality<T> {
    pub name: String,
    pub function: Poly<T>,
}

/// `lower <= function(x) <= upper`; either side may be infinite.
#[derive(Clone, Debug, PartialEq)]
pub struct Inequality<T> {
    pub name: String,
    pub function: Poly<T>,
    pub lower: T,
    pub upper: T,
}

/// Smooth constrained problem `min f(x)` subject to equalities, range
/// inequalities and variable bounds. Derivatives are sparse with a pattern
/// fixed at construction.
#[derive(Clone, Debug, PartialEq)]
pub struct ProblemSpec<T> {
    pub variables: Vec<Variable<T>>,
    pub objective: Poly<T>,
    /// Positive factor applied to the objective inside the solver; reported
    /// objective values are unscaled.
    pub objective_scale: T,
    pub equalities: Vec<Equality<T>>,
    pub inequalities: Vec<Inequality<T>>,
    eq_pattern: Vec<Vec<usize>>,
    ineq_pattern: Vec<Vec<usize>>,
}

/// Sparse Jacobian stored row by row in pattern order.
pub type SparseRows<T> = Vec<Vec<(usize, T)>>;

impl<T: Real> ProblemSpec<T> {
    pub fn new(
        variables: Vec<Variable<T>>,
        objective: Poly<T>,
        equalities: Vec<Equality<T>>,
        inequalities: Vec<Inequality<T>>,
    ) -> Self {
        let equalities: Vec<Equality<T>> = equalities
            .into_iter()
            .map(|e| Equality {
                function: e.function.simplify(),
                ..e
            })
            .collect();
        let inequalities: Vec<Inequality<T>> = inequalities
            .into_iter()
            .map(|e| Inequality {
                function: e.function.simplify(),
                ..e
            })
            .collect();
        let eq_pattern = equalities.iter().map(|e| e.function.support()).collect();
        let ineq_pattern = inequalities.iter().map(|e| e.function.support()).collect();
        ProblemSpec {
            variables,
            objective: objective.simplify(),
            objective_scale: T::one(),
            equalities,
            inequalities,
            eq_pattern,
            ineq_pattern,
        }
    }

    pub fn with_objective_scale(mut self, scale: T) -> Self {
        assert!(scale > T::zero(), "objective scale must be positive");
        self.objective_scale = scale;
        self
    }

    pub fn n_vars(&self) -> usize {
        self.variables.len()
    }

    /// Indices of variables whose lower bound exceeds the upper bound.
    pub fn inconsistent_bounds(&self) -> Vec<usize> {
        self.variables
            .iter()
            .enumerate()
            .filter(|(_, v)| !(v.lower <= v.upper))
            .map(|(i, _)| i)
            .collect()
    }

    pub fn variable_index(&self, name: &str) -> Option<usize> {
        self.variables.iter().position(|v| v.name == name)
    }

    pub fn initial_point(&self) -> Vec<T> {
        self.variables.iter().map(|v| v.initial).collect()
    }

    pub fn objective(&self, x: &[T]) -> T {
        self.objective.eval(x)
    }

    pub fn objective_gradient(&self, x: &[T]) -> Vec<T> {
        self.objective.gradient_dense(x)
    }

    pub fn equality_values(&self, x: &[T]) -> Vec<T> {
        self.equalities.iter().map(|e| e.function.eval(x)).collect()
    }

    pub fn inequality_values(&self, x: &[T]) -> Vec<T> {
        self.inequalities.iter().map(|e| e.function.eval(x)).collect()
    }

    pub fn equality_pattern(&self) -> &[Vec<usize>] {
        &self.eq_pattern
    }

    pub fn inequality_pattern(&self) -> &[Vec<usize>] {
        &self.ineq_pattern
    }

    pub fn equality_jacobian(&self, x: &[T]) -> SparseRows<T> {
        sparse_rows(self.equalities.iter().map(|e| &e.function), &self.eq_pattern, x)
    }

    pub fn inequality_jacobian(&self, x: &[T]) -> SparseRows<T> {
        sparse_rows(
            self.inequalities.iter().map(|e| &e.function),
            &self.ineq_pattern,
            x,
        )
    }

    /// Adds `sigma * hess f + sum lam_eq[i] hess g_i + sum lam_in[j] hess c_j` into `h`.
    pub fn add_lagrangian_hessian(&self, x: &[T], sigma: T, lam_eq: &[T], lam_in: &[T], h: &mut Matrix<T>) {
        if sigma != T::zero() {
            self.objective
                .for_each_second(x, |i, j, d| h[(i, j)] += sigma * d);
        }
        for (e, &l) in self.equalities.iter().zip(lam_eq) {
            if l != T::zero() {
                e.function.for_each_second(x, |i, j, d| h[(i, j)] += l * d);
            }
        }
        for (c, &l) in self.inequalities.iter().zip(lam_in) {
            if l != T::zero() {
                c.function.for_each_second(x, |i, j, d| h[(i, j)] += l * d);
            }
        }
    }

    /// Largest equality residual, range violation or bound violation at `x`.
    pub fn max_violation(&self, x: &[T]) -> T {
        let mut worst = T::zero();
        for e in &self.equalities {
            worst = worst.max(e.function.eval(x).abs());
        }
        for c in &self.inequalities {
            let v = c.function.eval(x);
            worst = worst.max(c.lower - v).max(v - c.upper);
        }
        for (v, &xi) in self.variables.iter().zip(x) {
            worst = worst.max(v.lower - xi).max(xi - v.upper);
        }
        worst
    }
}

fn sparse_rows<'a, T: Real>(
    funcs: impl Iterator<Item = &'a Poly<T>>,
    pattern: &[Vec<usize>],
    x: &[T],
) -> SparseRows<T> {
    funcs
        .zip(pattern)
        .map(|(f, pat)| {
            let mut row: Vec<(usize, T)> = pat.iter().map(|&i| (i, T::zero())).collect();
            f.for_each_partial(x, |i, d| {
                let k = pat.binary_search(&i).expect("pattern covers support");
                row[k].1 += d;
            });
            row
        })
        .collect()
}
