//! Battery charge and discharge model.
//!
//! Charging from empty follows a linear (constant-current) branch up to
//! `knee_charge` at `knee_minutes`, then an exponential (constant-voltage)
//! branch reaching the rated full charge at `full_minutes`. The rate
//! constant `beta` is fixed by continuity of the two branches.
//!
//! All charge levels are on the operator scale: `0.0` is the reserve
//! buffer `q_min` and `1.0` is the charge-up-to level.

use thiserror::Error;

use crate::Seconds;

const BETA_TOLERANCE: f64 = 1e-10;
const POLICY_GRID_STEP: f64 = 1e-3;

#[derive(Debug, Error, PartialEq)]
pub enum BatteryError {
    #[error("battery parameters out of domain: {0}")]
    Domain(String),
}

/// Inputs to [`BatteryModel::new`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatteryParams {
    pub knee_charge: f64,
    pub knee_minutes: f64,
    pub full_minutes: f64,
    /// Linear charge rate used by the schedulers, fraction per minute.
    pub eta: f64,
    /// Estimated discharge rate while in service, fraction per minute.
    pub q_est: f64,
    pub q_min: f64,
    /// Driving range of a full battery in kilometers.
    pub range_km: f64,
}

impl Default for BatteryParams {
    fn default() -> Self {
        BatteryParams {
            knee_charge: 0.7,
            knee_minutes: 15.0,
            full_minutes: 30.0,
            eta: 1.0 / 30.0,
            q_est: 1.0 / 600.0,
            q_min: 0.15,
            range_km: 180.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatteryModel {
    knee_charge: f64,
    knee_minutes: f64,
    full_minutes: f64,
    beta: f64,
    pub eta: f64,
    pub q_est: f64,
    pub q_min: f64,
    pub range_km: f64,
}

impl BatteryModel {
    pub fn new(p: BatteryParams) -> Result<Self, BatteryError> {
        let beta = solve_beta(p.knee_charge, p.knee_minutes, p.full_minutes)?;
        if !(p.eta > 0.0) || !(p.q_est > 0.0) || !(p.range_km > 0.0) {
            return Err(BatteryError::Domain(
                "eta, q_est and range must be positive".into(),
            ));
        }
        if !(0.0..p.knee_charge).contains(&p.q_min) {
            return Err(BatteryError::Domain(format!(
                "q_min {} must lie in [0, {})",
                p.q_min, p.knee_charge
            )));
        }
        Ok(BatteryModel {
            knee_charge: p.knee_charge,
            knee_minutes: p.knee_minutes,
            full_minutes: p.full_minutes,
            beta,
            eta: p.eta,
            q_est: p.q_est,
            q_min: p.q_min,
            range_km: p.range_km,
        })
    }

    pub fn knee_charge(&self) -> f64 {
        self.knee_charge
    }

    pub fn knee_minutes(&self) -> f64 {
        self.knee_minutes
    }

    pub fn full_minutes(&self) -> f64 {
        self.full_minutes
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// Charge of an initially empty battery after `t` minutes on the charger.
    pub fn charge_curve(&self, t: f64) -> f64 {
        let (q, r, full, b) = (
            self.knee_charge,
            self.knee_minutes,
            self.full_minutes,
            self.beta,
        );
        let c = if t <= r {
            q * t / r
        } else {
            1.0 - (q / (r * b)) * (-b * (full - r)).exp() * ((b * (full - t)).exp() - 1.0)
        };
        c.clamp(0.0, 1.0)
    }

    /// Minutes needed to charge an empty battery to `q`; inverse of [`Self::charge_curve`].
    pub fn charge_time_from_empty(&self, q: f64) -> f64 {
        let (knee, r, full, b) = (
            self.knee_charge,
            self.knee_minutes,
            self.full_minutes,
            self.beta,
        );
        if q <= 0.0 {
            0.0
        } else if q <= knee {
            q * r / knee
        } else if q >= 1.0 {
            full
        } else {
            let scale = (knee / (r * b)) * (-b * (full - r)).exp();
            full - (1.0 + (1.0 - q) / scale).ln() / b
        }
    }

    /// Average cost rate of a charge-up-to-`q_to` policy when each charge
    /// costs `d` minutes of empty travel and offline time costs `cost_rate`.
    pub fn avg_cost(&self, q_to: f64, d: f64, cost_rate: f64) -> Result<f64, BatteryError> {
        if !(q_to > 0.0 && q_to <= 1.0) {
            return Err(BatteryError::Domain(format!(
                "charge-up-to level {q_to} outside (0, 1]"
            )));
        }
        let offline = d + self.charge_time_from_empty(q_to);
        Ok(offline / (offline + q_to / self.q_est) * cost_rate)
    }

    /// Cost-minimising charge-up-to level.
    ///
    /// With `d == 0` every level up to the knee is optimal and the knee is
    /// returned. Otherwise a 0.001 grid locates the basin and a golden-section
    /// search refines it.
    pub fn optimal_charge_to(&self, d: f64, cost_rate: f64) -> f64 {
        if d <= 0.0 {
            return self.knee_charge;
        }
        let cost = |q: f64| {
            self.avg_cost(q, d, cost_rate)
                .expect("grid stays in (0, 1]")
        };
        let steps = (1.0 / POLICY_GRID_STEP).round() as usize;
        let (best, _) = (1..=steps)
            .map(|i| (i, cost(i as f64 * POLICY_GRID_STEP)))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .expect("non-empty grid");
        let lo = ((best - 1) as f64 * POLICY_GRID_STEP).max(1e-12);
        let hi = ((best + 1) as f64 * POLICY_GRID_STEP).min(1.0);
        let refined = golden_section(cost, lo, hi, 1e-10);
        let grid = best as f64 * POLICY_GRID_STEP;
        if cost(refined) <= cost(grid) {
            refined
        } else {
            grid
        }
    }

    /// Charge after driving `distance_m` meters. May drop below 0 into the reserve.
    pub fn discharge(&self, q: f64, distance_m: f64) -> f64 {
        q - distance_m / (self.range_km * 1000.0)
    }

    /// Time at which a vehicle holding `q0` at `t0` is expected to reach 0.
    pub fn predicted_empty_time(&self, q0: f64, t0: Seconds) -> Seconds {
        t0 + q0 / self.q_est * 60.0
    }

    /// Charge gained per `period` seconds on the charger.
    pub fn eta_per(&self, period: Seconds) -> f64 {
        self.eta * period / 60.0
    }

    /// Estimated discharge per `period` seconds of service.
    pub fn q_est_per(&self, period: Seconds) -> f64 {
        self.q_est * period / 60.0
    }
}

/// Rate constant of the exponential branch, by bisection on the continuity
/// condition `(Q / (R b)) (1 - exp(-b (T - R))) = 1 - Q`.
pub fn solve_beta(
    knee_charge: f64,
    knee_minutes: f64,
    full_minutes: f64,
) -> Result<f64, BatteryError> {
    let (q, r, t) = (knee_charge, knee_minutes, full_minutes);
    if !(q > 0.0 && q < 1.0) {
        return Err(BatteryError::Domain(format!(
            "knee charge {q} outside (0, 1)"
        )));
    }
    if !(r > 0.0 && r < t) || !t.is_finite() {
        return Err(BatteryError::Domain(format!(
            "need 0 < R < T, got R = {r}, T = {t}"
        )));
    }
    if q / r <= 1.0 / t {
        return Err(BatteryError::Domain(format!(
            "need Q/R > 1/T, got {} <= {}",
            q / r,
            1.0 / t
        )));
    }
    let residual = |b: f64| continuity_residual(q, r, t, b);
    let mut lo = 1e-12;
    let mut hi = 1.0;
    while residual(hi) > 0.0 {
        hi *= 2.0;
    }
    for _ in 0..400 {
        let mid = 0.5 * (lo + hi);
        if residual(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < BETA_TOLERANCE * 1e-3 {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Left side minus right side of the branch continuity condition.
pub fn continuity_residual(
    knee_charge: f64,
    knee_minutes: f64,
    full_minutes: f64,
    beta: f64,
) -> f64 {
    (knee_charge / (knee_minutes * beta)) * (1.0 - (-beta * (full_minutes - knee_minutes)).exp())
        - (1.0 - knee_charge)
}

/// Closed form of the rate constant through the principal Lambert W branch.
pub fn beta_lambert(knee_charge: f64, knee_minutes: f64, full_minutes: f64) -> f64 {
    let (q, r, t) = (knee_charge, knee_minutes, full_minutes);
    let z = (r - t) / r * q / (1.0 - q);
    q / (r * (1.0 - q)) + lambert_w0(z * z.exp()) / (t - r)
}

/// Principal branch of the Lambert W function for `x >= -1/e`.
pub fn lambert_w0(x: f64) -> f64 {
    let branch = -1.0 / std::f64::consts::E;
    assert!(x >= branch, "lambert_w0 undefined below -1/e");
    if x == 0.0 {
        return 0.0;
    }
    if x - branch < 1e-15 {
        return -1.0;
    }
    let mut w = if x < -0.25 {
        let p = (2.0 * (std::f64::consts::E * x + 1.0)).sqrt();
        -1.0 + p - p * p / 3.0
    } else if x < 3.0 {
        0.5 * (1.0 + x).ln()
    } else {
        let l = x.ln();
        l - l.ln()
    };
    for _ in 0..64 {
        let ew = w.exp();
        let f = w * ew - x;
        let next = w - f / (ew * (w + 1.0) - (w + 2.0) * f / (2.0 * w + 2.0));
        if (next - w).abs() <= 1e-15 * (1.0 + next.abs()) {
            return next;
        }
        w = next;
    }
    w
}

fn golden_section(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - ratio * (b - a);
    let mut d = a + ratio * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > tol {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - ratio * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + ratio * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}
