//! Branch pi-model currents in rectangular coordinates.
//!
//! With series admittance `y = g + jb`, total charging `b_c`, tap ratio `tau`
//! and phase shift `phi`, the current leaving each end is
//!
//! ```text
//! I_from = (y + j b_c/2) / tau^2 * V_from - y e^{+j phi} / tau * V_to
//! I_to   = (y + j b_c/2)         * V_to   - y e^{-j phi} / tau * V_from
//! ```
//!
//! The off-nominal transformer sits at the from end. The from-side expression
//! expands to the usual real/imaginary current equations with `1/tau^2`,
//! `1/tau`, `cos phi` and `sin phi` terms.

use num_complex::Complex;

use crate::grid::Branch;
use crate::scalar::Real;

/// The four complex admittances of a branch: `[I_f; I_t] = [[ff, ft], [tf, tt]] [V_f; V_t]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BranchAdmittance<T> {
    pub ff: Complex<T>,
    pub ft: Complex<T>,
    pub tf: Complex<T>,
    pub tt: Complex<T>,
}

impl<T: Real> BranchAdmittance<T> {
    pub fn of(br: &Branch<T>) -> Self {
        let y = Complex::new(br.series_g, br.series_b);
        let half_charge = Complex::new(T::zero(), br.charging_b / T::lit(2.0));
        let tau = br.tap_ratio;
        let shift = Complex::new(br.phase_shift.cos(), br.phase_shift.sin());
        BranchAdmittance {
            ff: (y + half_charge) / (tau * tau),
            ft: -(y * shift) / tau,
            tf: -(y * shift.conj()) / tau,
            tt: y + half_charge,
        }
    }
}

/// Current leaving the from end, as `(I_R, I_I)`.
pub fn branch_currents<T: Real>(br: &Branch<T>, v_from: (T, T), v_to: (T, T)) -> (T, T) {
    let a = BranchAdmittance::of(br);
    let i = a.ff * Complex::new(v_from.0, v_from.1) + a.ft * Complex::new(v_to.0, v_to.1);
    (i.re, i.im)
}

/// Current leaving the to end, as `(I_R, I_I)`.
pub fn branch_currents_to<T: Real>(br: &Branch<T>, v_from: (T, T), v_to: (T, T)) -> (T, T) {
    let a = BranchAdmittance::of(br);
    let i = a.tf * Complex::new(v_from.0, v_from.1) + a.tt * Complex::new(v_to.0, v_to.1);
    (i.re, i.im)
}
