//! Krauss car-following and the fuel-rate surrogate.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KraussParams {
    pub accel_mps2: f64,
    pub decel_mps2: f64,
    pub reaction_time_s: f64,
    /// Driver imperfection in `[0, 1]`.
    pub sigma: f64,
}

impl Default for KraussParams {
    fn default() -> Self {
        Self { accel_mps2: 2.6, decel_mps2: 4.5, reaction_time_s: 1.0, sigma: 0.0 }
    }
}

impl KraussParams {
    pub fn is_valid(&self) -> bool {
        self.accel_mps2 > 0.0 && self.decel_mps2 > 0.0 && self.reaction_time_s > 0.0 && (0.0..=1.0).contains(&self.sigma)
    }
}

/// Safe speed behind a leader `gap_m` ahead:
/// `v_l + (g - v_l * tau) / ((v_f + v_l) / (2b) + tau)`, floored at zero.
pub fn krauss_safe_speed(follower_speed: f64, leader_speed: f64, gap_m: f64, params: &KraussParams) -> f64 {
    let tau = params.reaction_time_s;
    let denom = (follower_speed + leader_speed) / (2.0 * params.decel_mps2) + tau;
    (leader_speed + (gap_m - leader_speed * tau) / denom).max(0.0)
}

/// Polynomial fuel surrogate `c0 + c1 v + c2 v^3 + c3 max(a,0) v` in ml/s.
/// The default coefficients are illustrative, not calibrated emission data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FuelCoeffs {
    pub idle: f64,
    pub linear: f64,
    pub cubic: f64,
    pub accel: f64,
}

impl Default for FuelCoeffs {
    fn default() -> Self {
        Self { idle: 0.2, linear: 0.03, cubic: 1.5e-5, accel: 0.06 }
    }
}

pub fn fuel_rate(speed: f64, accel: f64, c: &FuelCoeffs) -> f64 {
    c.idle + c.linear * speed + c.cubic * speed.powi(3) + c.accel * accel.max(0.0) * speed
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn safe_speed_examples() {
        let p = KraussParams::default();
        // 14 / (10/9 + 1)
        let v = krauss_safe_speed(10.0, 0.0, 14.0, &p);
        assert!((v - 6.631_578_947_368_421).abs() < 1e-12);
        assert_eq!(krauss_safe_speed(5.0, 0.0, 0.0, &p), 0.0);
        assert!((krauss_safe_speed(8.0, 8.0, 8.0, &p) - 8.0).abs() < 1e-12);
    }

    #[test]
    fn fuel_examples() {
        let c = FuelCoeffs::default();
        assert_eq!(fuel_rate(0.0, 0.0, &c), 0.2);
        assert!((fuel_rate(10.0, 0.0, &c) - 0.515).abs() < 1e-12);
        assert!(fuel_rate(10.0, 1.0, &c) > fuel_rate(10.0, -1.0, &c));
    }

    proptest! {
        // stopping from the safe speed behind a stopped leader never overshoots the gap
        #[test]
        fn safe_speed_respects_stopped_leader(v in 0.0f64..15.0, gap in 0.0f64..200.0) {
            let p = KraussParams::default();
            let s = krauss_safe_speed(v, 0.0, gap, &p);
            prop_assert!(s >= 0.0);
            prop_assert!(s * p.reaction_time_s <= gap + 1e-12);
        }

        #[test]
        fn fuel_has_idle_floor(v in 0.0f64..20.0, a in -5.0f64..5.0) {
            let c = FuelCoeffs::default();
            prop_assert!(fuel_rate(v, a, &c) >= c.idle);
        }
    }
}
