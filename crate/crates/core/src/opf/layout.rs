use serde::{Deserialize, Serialize};

use crate::nlp::Poly;
use crate::power_flow::{CandidateControl, ControlSet, VoltageState};
use crate::scalar::Real;

/// A model quantity that is either a decision variable or a constant.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Slot<T> {
    Var(usize),
    Fixed(T),
}

impl<T: Real> Slot<T> {
    pub fn poly(&self) -> Poly<T> {
        match *self {
            Slot::Var(i) => Poly::var(i),
            Slot::Fixed(c) => Poly::constant(c),
        }
    }

    pub fn value(&self, x: &[T]) -> T {
        match *self {
            Slot::Var(i) => x[i],
            Slot::Fixed(c) => c,
        }
    }

    pub fn index(&self) -> Option<usize> {
        match *self {
            Slot::Var(i) => Some(i),
            Slot::Fixed(_) => None,
        }
    }

    fn set(&self, x: &mut [T], v: T) {
        if let Slot::Var(i) = *self {
            x[i] = v;
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Polarity {
    Capacitor,
    Inductor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CandidateSlots<T> {
    pub bus: u32,
    pub x_plus: Slot<T>,
    pub x_minus: Slot<T>,
    pub b_plus: Slot<T>,
    pub b_minus: Slot<T>,
}

/// Where every model quantity lives in the variable vector.
#[derive(Clone, Debug, PartialEq)]
pub struct OpfLayout<T> {
    pub v_r: Vec<Slot<T>>,
    pub v_i: Vec<Slot<T>>,
    pub q_g: Vec<Slot<T>>,
    pub p_slack: Slot<T>,
    pub shunt_steps: Vec<Vec<Slot<T>>>,
    pub pv_curtail: Vec<Slot<T>>,
    pub pv_q: Vec<Slot<T>>,
    /// Per bus.
    pub q_dr: Vec<Slot<T>>,
    pub candidates: Vec<CandidateSlots<T>>,
    /// Dead-band slacks of the operational model, `(bus position, slot)`.
    pub deadband_slack: Vec<(usize, Slot<T>)>,
}

impl<T: Real> OpfLayout<T> {
    pub fn state(&self, x: &[T]) -> VoltageState<T> {
        VoltageState {
            v_r: self.v_r.iter().map(|s| s.value(x)).collect(),
            v_i: self.v_i.iter().map(|s| s.value(x)).collect(),
        }
    }

    pub fn candidate_values(&self, x: &[T]) -> Vec<CandidateControl<T>> {
        self.candidates
            .iter()
            .map(|c| CandidateControl {
                bus: c.bus,
                x_plus: c.x_plus.value(x),
                x_minus: c.x_minus.value(x),
                b_plus: c.b_plus.value(x),
                b_minus: c.b_minus.value(x),
            })
            .collect()
    }

    pub fn controls(&self, x: &[T]) -> ControlSet<T> {
        let vals = |v: &[Slot<T>]| v.iter().map(|s| s.value(x)).collect::<Vec<T>>();
        ControlSet {
            q_g: vals(&self.q_g),
            p_slack: self.p_slack.value(x),
            shunt_steps: self.shunt_steps.iter().map(|s| vals(s)).collect(),
            pv_q: vals(&self.pv_q),
            pv_curtail: vals(&self.pv_curtail),
            q_dr: vals(&self.q_dr),
            candidates: self.candidate_values(x),
        }
    }

    /// Writes a voltage state and control values into `x`; constant slots are left alone.
    pub fn fill_point(&self, x: &mut [T], state: &VoltageState<T>, ctrl: &ControlSet<T>) {
        let put = |slots: &[Slot<T>], vals: &[T], x: &mut [T]| {
            for (s, &v) in slots.iter().zip(vals) {
                s.set(x, v);
            }
        };
        put(&self.v_r, &state.v_r, x);
        put(&self.v_i, &state.v_i, x);
        put(&self.q_g, &ctrl.q_g, x);
        self.p_slack.set(x, ctrl.p_slack);
        for (slots, vals) in self.shunt_steps.iter().zip(&ctrl.shunt_steps) {
            put(slots, vals, x);
        }
        put(&self.pv_q, &ctrl.pv_q, x);
        put(&self.pv_curtail, &ctrl.pv_curtail, x);
        put(&self.q_dr, &ctrl.q_dr, x);
        for c in &ctrl.candidates {
            if let Some(s) = self.candidates.iter().find(|s| s.bus == c.bus) {
                s.x_plus.set(x, c.x_plus);
                s.x_minus.set(x, c.x_minus);
                s.b_plus.set(x, c.b_plus);
                s.b_minus.set(x, c.b_minus);
            }
        }
    }

    /// Number of planning decision variables (`X`, `B` of both polarities) left free.
    pub fn n_planning_vars(&self) -> usize {
        self.candidates
            .iter()
            .flat_map(|c| [c.x_plus, c.x_minus, c.b_plus, c.b_minus])
            .filter(|s| s.index().is_some())
            .count()
    }
}
