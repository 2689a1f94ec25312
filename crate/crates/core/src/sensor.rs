//! IR obstacle sensor model.
//!
//! The emitter/receiver pair is reduced to a single function from obstacle
//! distance to a 10-bit analog reading. Inside the sensing gap the reading
//! grows linearly with distance from 0 up to one below the detection
//! threshold; anything outside the gap reads as the clear-path baseline.

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Mounted sensor parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IrSensorConfig {
    pub range_min_cm: f64,
    pub range_max_cm: f64,
    pub adc_full_scale: u16,
    pub baseline_value: u16,
    pub detect_threshold: u16,
    pub noise_amplitude: u16,
}

impl Default for IrSensorConfig {
    fn default() -> Self {
        Self {
            range_min_cm: 2.0,
            range_max_cm: 30.0,
            adc_full_scale: 1023,
            baseline_value: 1000,
            detect_threshold: 824,
            noise_amplitude: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum SensorError {
    #[error("distance must be positive, got {0} cm")]
    InvalidDistance(f64),
    #[error("sensor range must satisfy 0 < min < max")]
    BadRange,
    #[error("thresholds must satisfy detect_threshold <= baseline_value <= adc_full_scale")]
    BadLevels,
    #[error("noise amplitude lets a clear path fall below the detection threshold")]
    NoiseTooLarge,
}

impl IrSensorConfig {
    pub fn validate(&self) -> Result<(), SensorError> {
        // NaN fails both comparisons.
        if !(self.range_min_cm > 0.0 && self.range_min_cm < self.range_max_cm) {
            return Err(SensorError::BadRange);
        }
        if !(self.detect_threshold <= self.baseline_value
            && self.baseline_value <= self.adc_full_scale)
        {
            return Err(SensorError::BadLevels);
        }
        if self.baseline_value - self.detect_threshold < self.noise_amplitude {
            return Err(SensorError::NoiseTooLarge);
        }
        Ok(())
    }

    /// Whether `distance_cm` lies inside the sensing gap (both ends inclusive).
    pub fn in_range(&self, distance_cm: f64) -> bool {
        self.range_min_cm <= distance_cm && distance_cm <= self.range_max_cm
    }
}

/// One analog sample on the ADC scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AnalogReading(u16);

impl AnalogReading {
    pub const fn new(value: u16) -> Self {
        Self(value)
    }

    pub const fn value(self) -> u16 {
        self.0
    }
}

/// Samples the sensor with an obstacle at `distance_cm` (`None` = nothing in front).
pub fn sample<R: RngCore + ?Sized>(
    cfg: &IrSensorConfig,
    distance_cm: Option<f64>,
    rng: &mut R,
) -> Result<AnalogReading, SensorError> {
    let noise = noise(cfg.noise_amplitude, rng);
    let value = match distance_cm {
        Some(d) if d.is_nan() || d <= 0.0 => return Err(SensorError::InvalidDistance(d)),
        Some(d) if cfg.in_range(d) => {
            let top = i32::from(cfg.detect_threshold) - 1;
            let frac = (d - cfg.range_min_cm) / (cfg.range_max_cm - cfg.range_min_cm);
            let clean = round_non_negative(frac * f64::from(top));
            (clean + noise).clamp(0, top.max(0))
        }
        _ => (i32::from(cfg.baseline_value) + noise).clamp(0, i32::from(cfg.adc_full_scale)),
    };
    Ok(AnalogReading(value as u16))
}

/// True iff the reading is strictly below the detection threshold.
pub fn is_detection(reading: AnalogReading, cfg: &IrSensorConfig) -> bool {
    reading.0 < cfg.detect_threshold
}

fn noise<R: RngCore + ?Sized>(amplitude: u16, rng: &mut R) -> i32 {
    if amplitude == 0 {
        return 0;
    }
    let a = i32::from(amplitude);
    rng.gen_range(-a..=a)
}

// Half-away-from-zero for x >= 0; `f64::round` is not available in core.
fn round_non_negative(x: f64) -> i32 {
    (x + 0.5) as i32
}
