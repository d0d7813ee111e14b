use super::PowerFlowSolution;
use crate::error::{Error, Result};
use crate::grid::Network;
use crate::scalar::Real;

/// `| |V_i| - V_i^target |` for every target load bus, in bus order.
pub fn bus_deviations<T: Real>(v_mag: &[T], net: &Network<T>) -> Vec<T> {
    net.buses()
        .iter()
        .zip(v_mag)
        .filter(|(b, _)| b.is_target_load)
        .map(|(b, &v)| (v - b.v_target.expect("validated target")).abs())
        .collect()
}

/// Sum of absolute target deviations over the target load buses.
pub fn deviation_index<T: Real>(sol: &PowerFlowSolution<T>, net: &Network<T>) -> Result<T> {
    if !sol.converged {
        return Err(Error::NotConverged(
            "deviation index needs a converged solution".into(),
        ));
    }
    Ok(bus_deviations(&sol.v_mag, net).into_iter().sum())
}

/// Sum over target load buses of the deviation in excess of `deadband`.
pub fn violation_metric<T: Real>(sol: &PowerFlowSolution<T>, net: &Network<T>, deadband: T) -> Result<T> {
    if !sol.converged {
        return Err(Error::NotConverged(
            "violation metric needs a converged solution".into(),
        ));
    }
    if deadband < T::zero() {
        return Err(Error::InvalidInput("dead band must be non-negative".into()));
    }
    Ok(violation_metric_from_deviations(
        &bus_deviations(&sol.v_mag, net),
        deadband,
    ))
}

pub fn violation_metric_from_deviations<T: Real>(deviations: &[T], deadband: T) -> T {
    deviations
        .iter()
        .map(|&d| (d - deadband).max(T::zero()))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn forced_arithmetic() {
        let d = [0.004f64, 0.006];
        assert!((violation_metric_from_deviations(&d, 0.005) - 0.001).abs() < 1e-15);
        let d = [0.01f64, 0.02, 0.005];
        assert!((violation_metric_from_deviations(&d, 0.0) - 0.035).abs() < 1e-15);
        assert_eq!(violation_metric_from_deviations(&[0.001, 0.004], 0.005), 0.0);
    }
}
