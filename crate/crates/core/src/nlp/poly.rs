//! Sparse multivariate polynomials of degree at most three.
//!
//! Every function in the planning and operational OPF models is a polynomial
//! in the rectangular voltages and the control variables once the dead-band
//! constraint is squared, so values, gradients and Hessians are all exact.

use std::ops::{Add, AddAssign, Mul, Neg, Sub, SubAssign};

use crate::scalar::Real;

pub const MAX_DEGREE: usize = 3;

/// `coef * x[vars[0]] * ... * x[vars[degree-1]]`, variables sorted ascending.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Monomial<T> {
    pub coef: T,
    pub vars: [u32; MAX_DEGREE],
    pub degree: u8,
}

impl<T: Real> Monomial<T> {
    fn vars(&self) -> &[u32] {
        &self.vars[..self.degree as usize]
    }

    fn product_except(&self, x: &[T], skip: &[usize]) -> T {
        self.vars()
            .iter()
            .enumerate()
            .filter(|(p, _)| !skip.contains(p))
            .fold(self.coef, |acc, (_, &v)| acc * x[v as usize])
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Poly<T> {
    pub constant: T,
    pub terms: Vec<Monomial<T>>,
}

impl<T: Real> Poly<T> {
    pub fn zero() -> Self {
        Poly {
            constant: T::zero(),
            terms: Vec::new(),
        }
    }

    pub fn constant(c: T) -> Self {
        Poly {
            constant: c,
            terms: Vec::new(),
        }
    }

    pub fn var(i: usize) -> Self {
        Self::monomial(T::one(), &[i])
    }

    pub fn monomial(coef: T, vars: &[usize]) -> Self {
        assert!(vars.len() <= MAX_DEGREE, "degree above {MAX_DEGREE}");
        if vars.is_empty() {
            return Self::constant(coef);
        }
        let mut v = [0u32; MAX_DEGREE];
        for (slot, &i) in v.iter_mut().zip(vars) {
            *slot = u32::try_from(i).expect("variable index fits u32");
        }
        v[..vars.len()].sort_unstable();
        Poly {
            constant: T::zero(),
            terms: vec![Monomial {
                coef,
                vars: v,
                degree: vars.len() as u8,
            }],
        }
    }

    pub fn is_constant(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn degree(&self) -> usize {
        self.terms.iter().map(|m| m.degree as usize).max().unwrap_or(0)
    }

    pub fn scale(mut self, s: T) -> Self {
        self.constant *= s;
        self.terms.iter_mut().for_each(|m| m.coef *= s);
        self
    }

    pub fn square(&self) -> Self {
        self * self
    }

    /// Merges repeated monomials and drops zero coefficients.
    pub fn simplify(mut self) -> Self {
        self.terms.sort_by(|a, b| (a.degree, a.vars).cmp(&(b.degree, b.vars)));
        let mut out: Vec<Monomial<T>> = Vec::with_capacity(self.terms.len());
        for m in self.terms {
            match out.last_mut() {
                Some(last) if last.degree == m.degree && last.vars == m.vars => last.coef += m.coef,
                _ => out.push(m),
            }
        }
        out.retain(|m| m.coef != T::zero());
        self.terms = out;
        self
    }

    /// Sorted, de-duplicated variables the polynomial depends on.
    pub fn support(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self
            .terms
            .iter()
            .flat_map(|m| m.vars().iter().map(|&i| i as usize))
            .collect();
        v.sort_unstable();
        v.dedup();
        v
    }

    pub fn eval(&self, x: &[T]) -> T {
        self.terms
            .iter()
            .fold(self.constant, |acc, m| acc + m.product_except(x, &[]))
    }

    /// Calls `f(var, d)` once per variable occurrence; values for a variable must be summed.
    pub fn for_each_partial(&self, x: &[T], mut f: impl FnMut(usize, T)) {
        for m in &self.terms {
            for (p, &v) in m.vars().iter().enumerate() {
                f(v as usize, m.product_except(x, &[p]));
            }
        }
    }

    /// Calls `f(i, j, d)` for every ordered pair contribution to the Hessian.
    pub fn for_each_second(&self, x: &[T], mut f: impl FnMut(usize, usize, T)) {
        for m in &self.terms {
            if m.degree < 2 {
                continue;
            }
            let vars = m.vars();
            for p in 0..vars.len() {
                for q in 0..vars.len() {
                    if p != q {
                        f(vars[p] as usize, vars[q] as usize, m.product_except(x, &[p, q]));
                    }
                }
            }
        }
    }

    pub fn gradient_dense(&self, x: &[T]) -> Vec<T> {
        let mut g = vec![T::zero(); x.len()];
        self.for_each_partial(x, |i, d| g[i] += d);
        g
    }
}

impl<T: Real> From<T> for Poly<T> {
    fn from(c: T) -> Self {
        Poly::constant(c)
    }
}

impl<T: Real> AddAssign<&Poly<T>> for Poly<T> {
    fn add_assign(&mut self, rhs: &Poly<T>) {
        self.constant += rhs.constant;
        self.terms.extend_from_slice(&rhs.terms);
    }
}

impl<T: Real> AddAssign<Poly<T>> for Poly<T> {
    fn add_assign(&mut self, rhs: Poly<T>) {
        self.constant += rhs.constant;
        self.terms.extend(rhs.terms);
    }
}

impl<T: Real> SubAssign<Poly<T>> for Poly<T> {
    fn sub_assign(&mut self, rhs: Poly<T>) {
        *self += -rhs;
    }
}

impl<T: Real> Neg for Poly<T> {
    type Output = Poly<T>;
    fn neg(self) -> Poly<T> {
        self.scale(-T::one())
    }
}

impl<T: Real> Add for Poly<T> {
    type Output = Poly<T>;
    fn add(mut self, rhs: Poly<T>) -> Poly<T> {
        self += rhs;
        self
    }
}

impl<T: Real> Sub for Poly<T> {
    type Output = Poly<T>;
    fn sub(mut self, rhs: Poly<T>) -> Poly<T> {
        self -= rhs;
        self
    }
}

impl<T: Real> Mul<&Poly<T>> for &Poly<T> {
    type Output = Poly<T>;
    fn mul(self, rhs: &Poly<T>) -> Poly<T> {
        let mut out = Poly::constant(self.constant * rhs.constant);
        if rhs.constant != T::zero() {
            out.terms
                .extend(self.terms.iter().map(|m| Monomial { coef: m.coef * rhs.constant, ..*m }));
        }
        if self.constant != T::zero() {
            out.terms
                .extend(rhs.terms.iter().map(|m| Monomial { coef: m.coef * self.constant, ..*m }));
        }
        for a in &self.terms {
            for b in &rhs.terms {
                let deg = (a.degree + b.degree) as usize;
                assert!(deg <= MAX_DEGREE, "product degree {deg} above {MAX_DEGREE}");
                let mut v = [0u32; MAX_DEGREE];
                v[..a.degree as usize].copy_from_slice(a.vars());
                v[a.degree as usize..deg].copy_from_slice(b.vars());
                v[..deg].sort_unstable();
                out.terms.push(Monomial {
                    coef: a.coef * b.coef,
                    vars: v,
                    degree: deg as u8,
                });
            }
        }
        out.simplify()
    }
}

impl<T: Real> Mul for Poly<T> {
    type Output = Poly<T>;
    fn mul(self, rhs: Poly<T>) -> Poly<T> {
        &self * &rhs
    }
}

impl<T: Real> Mul<T> for Poly<T> {
    type Output = Poly<T>;
    fn mul(self, rhs: T) -> Poly<T> {
        self.scale(rhs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cubic_derivatives_with_repeated_variable() {
        // p = 3 x0^2 x1 + 2 x1 - 1
        let p = Poly::monomial(3.0f64, &[0, 0, 1]) + Poly::var(1) * 2.0 + Poly::constant(-1.0);
        let x = [2.0f64, -0.5];
        assert!((p.eval(&x) - (3.0 * 4.0 * -0.5 - 1.0 - 1.0)).abs() < 1e-14);
        let g = p.gradient_dense(&x);
        assert!((g[0] - 6.0 * 2.0 * -0.5).abs() < 1e-14);
        assert!((g[1] - (3.0 * 4.0 + 2.0)).abs() < 1e-14);
        let mut h = [[0.0f64; 2]; 2];
        p.for_each_second(&x, |i, j, d| h[i][j] += d);
        assert!((h[0][0] - 6.0 * -0.5).abs() < 1e-14);
        assert!((h[0][1] - 12.0).abs() < 1e-14 && (h[1][0] - 12.0).abs() < 1e-14);
        assert_eq!(h[1][1], 0.0);
    }

    #[test]
    fn product_merges_terms() {
        let a = Poly::var(0) + Poly::constant(1.0f64);
        let sq = a.square();
        // x^2 + 2x + 1
        assert_eq!(sq.terms.len(), 2);
        assert_eq!(sq.constant, 1.0);
        assert!((sq.eval(&[3.0]) - 16.0).abs() < 1e-14);
    }
}
