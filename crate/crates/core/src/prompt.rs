//! Propagation-aware text prompts and the byte-level tokenizer.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Byte tokens 0..=255, then the two specials.
pub const VOCAB_SIZE: usize = 258;
pub const PAD_TOKEN: usize = 256;
pub const SEP_TOKEN: usize = 257;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PropagationPrompt {
    pub carrier_frequency_hz: f64,
    pub bandwidth_hz: f64,
    pub distance_m: f64,
    pub azimuth_deg: f64,
    pub elevation_deg: f64,
}

impl PropagationPrompt {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            self.carrier_frequency_hz,
            self.bandwidth_hz,
            self.distance_m,
            self.azimuth_deg,
            self.elevation_deg,
        ];
        if fields.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("non-finite prompt field in {self:?}")));
        }
        if !(self.carrier_frequency_hz > 0.0 && self.bandwidth_hz > 0.0 && self.distance_m > 0.0) {
            return Err(Error::Domain(format!(
                "prompt needs positive frequency, bandwidth and distance: {self:?}"
            )));
        }
        Ok(())
    }

    /// Canonical text form, every value to three decimals.
    pub fn render(&self) -> Result<String> {
        self.validate()?;
        Ok(format!(
            "fc_ghz={:.3} bw_mhz={:.3} dist_m={:.3} az_deg={:.3} el_deg={:.3}",
            self.carrier_frequency_hz / 1e9,
            self.bandwidth_hz / 1e6,
            self.distance_m,
            self.azimuth_deg,
            self.elevation_deg
        ))
    }

    /// Byte tokens of the rendered template followed by one separator.
    pub fn tokens(&self) -> Result<Vec<usize>> {
        let text = self.render()?;
        let mut ids: Vec<usize> = text.bytes().map(usize::from).collect();
        ids.push(SEP_TOKEN);
        Ok(ids)
    }
}
