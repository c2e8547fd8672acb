use serde::{Deserialize, Serialize};

use super::sensors::SensorConfig;
use super::trace::TraceConfig;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    Urban,
    Suburban,
}

/// Vehicular traffic density.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Vtd {
    Low,
    High,
}

impl Vtd {
    /// Default vehicles per 100 m of road.
    pub fn vehicles_per_100m(self) -> f64 {
        match self {
            Vtd::Low => 4.0,
            Vtd::High => 16.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandConfig {
    pub carrier_frequency_hz: f64,
    pub bandwidth_hz: f64,
}

impl BandConfig {
    /// 60 GHz carrier, 2 GHz bandwidth.
    pub const MMWAVE: BandConfig = BandConfig {
        carrier_frequency_hz: 60e9,
        bandwidth_hz: 2e9,
    };
    /// 5.9 GHz carrier, 20 MHz bandwidth.
    pub const SUB6: BandConfig = BandConfig {
        carrier_frequency_hz: 5.9e9,
        bandwidth_hz: 20e6,
    };

    pub fn wavelength_m(&self) -> f64 {
        super::trace::SPEED_OF_LIGHT / self.carrier_frequency_hz
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.carrier_frequency_hz > 0.0) || !(self.bandwidth_hz > 0.0) {
            return Err(Error::Config(format!(
                "band needs positive carrier and bandwidth, got {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SizeRange {
    pub min: f64,
    pub max: f64,
}

impl SizeRange {
    pub const fn new(min: f64, max: f64) -> Self {
        Self { min, max }
    }

    fn validate(&self, what: &str) -> Result<()> {
        if !(self.min > 0.0) || !(self.max >= self.min) || !self.max.is_finite() {
            return Err(Error::Config(format!(
                "{what} range must be positive and ordered, got [{}, {}]",
                self.min, self.max
            )));
        }
        Ok(())
    }

    pub(crate) fn sample(&self, rng: &mut impl rand::Rng) -> f64 {
        if self.max > self.min {
            rng.random_range(self.min..self.max)
        } else {
            self.min
        }
    }
}

/// Building rows flanking the road.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BuildingRows {
    /// Maximum buildings per roadside.
    pub max_per_side: usize,
    /// Distance from the road axis to the building fronts.
    pub setback_m: f64,
    pub gap_m: SizeRange,
    pub frontage_m: SizeRange,
    pub depth_m: SizeRange,
    pub height_m: SizeRange,
}

/// Static roadside obstacles (kiosks, tree canopies, signage) on the
/// base-station side, between the road and the mast.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObstacleRow {
    pub offset_m: f64,
    pub gap_m: SizeRange,
    pub width_m: SizeRange,
    pub depth_m: f64,
    pub height_m: SizeRange,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub scenario_kind: ScenarioKind,
    pub vtd: Vtd,
    pub band: BandConfig,
    pub road_length_m: f64,
    pub lanes: usize,
    pub lane_width_m: f64,
    pub buildings: BuildingRows,
    pub obstacles: ObstacleRow,
    /// Total vehicles including the Tx vehicle; derived from `vtd` when absent.
    pub vehicle_count: Option<usize>,
    pub vehicle_speed_mps: f64,
    pub snapshot_interval_s: f64,
    pub snapshots: usize,
    pub seed: u64,
    /// Lateral offset of the base station from the road axis.
    pub bs_offset_m: f64,
    pub bs_height_m: f64,
    pub tx_antenna_height_m: f64,
    pub sensors: SensorConfig,
    pub trace: TraceConfig,
}

impl ScenarioConfig {
    pub fn new(scenario_kind: ScenarioKind, vtd: Vtd, band: BandConfig) -> Self {
        let buildings = match scenario_kind {
            ScenarioKind::Urban => BuildingRows {
                max_per_side: 64,
                setback_m: 14.0,
                gap_m: SizeRange::new(2.0, 6.0),
                frontage_m: SizeRange::new(15.0, 30.0),
                depth_m: SizeRange::new(10.0, 20.0),
                height_m: SizeRange::new(15.0, 40.0),
            },
            ScenarioKind::Suburban => BuildingRows {
                max_per_side: 64,
                setback_m: 18.0,
                gap_m: SizeRange::new(12.0, 30.0),
                frontage_m: SizeRange::new(8.0, 14.0),
                depth_m: SizeRange::new(8.0, 12.0),
                height_m: SizeRange::new(4.0, 9.0),
            },
        };
        Self {
            scenario_kind,
            vtd,
            band,
            road_length_m: 160.0,
            lanes: 4,
            lane_width_m: 3.5,
            buildings,
            obstacles: ObstacleRow {
                offset_m: 8.0,
                gap_m: SizeRange::new(4.0, 14.0),
                width_m: SizeRange::new(3.0, 8.0),
                depth_m: 1.0,
                height_m: SizeRange::new(6.5, 9.0),
            },
            vehicle_count: None,
            vehicle_speed_mps: 10.0,
            snapshot_interval_s: 0.03333,
            snapshots: 100,
            seed: 0,
            bs_offset_m: 11.0,
            bs_height_m: 6.0,
            tx_antenna_height_m: 1.5,
            sensors: SensorConfig::default(),
            trace: TraceConfig::default(),
        }
    }

    pub fn resolved_vehicle_count(&self) -> usize {
        self.vehicle_count.unwrap_or_else(|| {
            let n = self.vtd.vehicles_per_100m() * self.road_length_m / 100.0;
            (n.round() as usize).max(1)
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.band.validate()?;
        let positive = [
            ("road_length_m", self.road_length_m),
            ("lane_width_m", self.lane_width_m),
            ("snapshot_interval_s", self.snapshot_interval_s),
            ("bs_height_m", self.bs_height_m),
            ("tx_antenna_height_m", self.tx_antenna_height_m),
            ("obstacles.depth_m", self.obstacles.depth_m),
            ("buildings.setback_m", self.buildings.setback_m),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.vehicle_speed_mps >= 0.0) {
            return Err(Error::Config("vehicle_speed_mps must be non-negative".into()));
        }
        if self.lanes == 0 {
            return Err(Error::Config("lanes must be at least 1".into()));
        }
        if self.vehicle_count == Some(0) {
            return Err(Error::Config("vehicle_count must include the Tx vehicle".into()));
        }
        let b = &self.buildings;
        b.gap_m.validate("buildings.gap_m")?;
        b.frontage_m.validate("buildings.frontage_m")?;
        b.depth_m.validate("buildings.depth_m")?;
        b.height_m.validate("buildings.height_m")?;
        let o = &self.obstacles;
        o.gap_m.validate("obstacles.gap_m")?;
        o.width_m.validate("obstacles.width_m")?;
        o.height_m.validate("obstacles.height_m")?;
        let road_half = self.lanes as f64 * self.lane_width_m / 2.0;
        if !(o.offset_m > road_half && o.offset_m + o.depth_m < self.bs_offset_m) {
            return Err(Error::Config(
                "obstacle row must sit between the road edge and the base station".into(),
            ));
        }
        if !(self.bs_offset_m < b.setback_m) {
            return Err(Error::Config(
                "base station must stand in front of the buildings".into(),
            ));
        }
        self.sensors.validate()?;
        self.trace.validate()?;
        Ok(())
    }
}
