//! Downlink optical budget: transmitter antenna gain, free-space loss,
//! atmospheric extinction, pointing and receiver losses, and the background
//! light that leaks into the receiver.
//!
//! Every term is in dB. Gains are positive numbers, losses are positive
//! numbers, and `total_db = losses - gains` is the end-to-end attenuation.

use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::orbit::PassSample;

/// Planck constant in J s.
pub const PLANCK_J_S: f64 = 6.626_070_15e-34;
/// Speed of light in m/s.
pub const SPEED_OF_LIGHT_M_S: f64 = 299_792_458.0;

/// Truncation ratio maximising the far-field gain of a truncated Gaussian beam.
pub const OPTIMAL_TRUNCATION_RATIO: f64 = 1.12;
/// Far-field gain efficiency at [`OPTIMAL_TRUNCATION_RATIO`].
pub const OPTIMAL_TRUNCATION_EFFICIENCY: f64 = 0.81;
/// Single-mode fibre background coupling factor.
pub const FIBER_BACKGROUND_COUPLING: f64 = 1.12;

pub fn to_db(ratio: f64) -> f64 {
    10.0 * ratio.log10()
}

pub fn from_db(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransmitterSpec {
    pub aperture_diam_m: f64,
    /// Aperture diameter over Gaussian beam diameter.
    pub truncation_ratio: f64,
    pub m_squared: f64,
    pub wavelength_nm: f64,
    pub pointing_loss_db: f64,
}

impl TransmitterSpec {
    /// 85 mm terminal with optimal truncation and M^2 = 1.2.
    pub fn reference(wavelength_nm: f64) -> Self {
        Self {
            aperture_diam_m: 0.085,
            truncation_ratio: OPTIMAL_TRUNCATION_RATIO,
            m_squared: 1.2,
            wavelength_nm,
            pointing_loss_db: 3.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.aperture_diam_m > 0.0) {
            return Err(invalid("transmitter.aperture_diam_m", "must be positive"));
        }
        if !(self.truncation_ratio >= 1.0) {
            return Err(invalid("transmitter.truncation_ratio", "must be at least 1"));
        }
        if (self.truncation_ratio - OPTIMAL_TRUNCATION_RATIO).abs() > 1e-9 {
            return Err(invalid(
                "transmitter.truncation_ratio",
                format!("gain efficiency is calibrated only at {OPTIMAL_TRUNCATION_RATIO}"),
            ));
        }
        if !(self.m_squared >= 1.0) {
            return Err(invalid("transmitter.m_squared", "must be at least 1"));
        }
        if !(self.wavelength_nm > 0.0) {
            return Err(invalid("transmitter.wavelength_nm", "must be positive"));
        }
        if !(self.pointing_loss_db >= 0.0) {
            return Err(invalid("transmitter.pointing_loss_db", "must be non-negative"));
        }
        Ok(())
    }

    pub fn wavelength_m(&self) -> f64 {
        self.wavelength_nm * 1e-9
    }

    pub fn aperture_area_m2(&self) -> f64 {
        PI * 0.25 * self.aperture_diam_m * self.aperture_diam_m
    }

    pub fn truncation_efficiency(&self) -> f64 {
        OPTIMAL_TRUNCATION_EFFICIENCY
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CouplingMode {
    /// Single-mode fibre behind adaptive optics.
    FiberWithAo,
    /// Large-area free-space detector behind a field stop.
    FreeSpace,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReceiverSpec {
    pub primary_diam_m: f64,
    pub obscuration_diam_m: f64,
    pub path_loss_db: f64,
    pub coupling_mode: CouplingMode,
    pub coupling_loss_db: f64,
    pub field_stop_diam_um: f64,
    pub effective_focal_length_m: f64,
    pub fov_half_angle_urad: f64,
    pub filter_bandwidth_nm: f64,
}

impl ReceiverSpec {
    /// 800/300 mm Cassegrain ground telescope.
    pub fn reference(coupling_mode: CouplingMode) -> Self {
        Self {
            primary_diam_m: 0.8,
            obscuration_diam_m: 0.3,
            path_loss_db: 1.0,
            coupling_mode,
            coupling_loss_db: match coupling_mode {
                CouplingMode::FiberWithAo => 5.0,
                CouplingMode::FreeSpace => 0.0,
            },
            field_stop_diam_um: 25.0,
            effective_focal_length_m: 2.0,
            fov_half_angle_urad: 6.25,
            filter_bandwidth_nm: 5.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.primary_diam_m > 0.0) {
            return Err(invalid("receiver.primary_diam_m", "must be positive"));
        }
        if !(self.obscuration_diam_m >= 0.0 && self.obscuration_diam_m < self.primary_diam_m) {
            return Err(invalid(
                "receiver.obscuration_diam_m",
                "must be non-negative and smaller than the primary",
            ));
        }
        if !(self.path_loss_db >= 0.0) {
            return Err(invalid("receiver.path_loss_db", "must be non-negative"));
        }
        if !(self.coupling_loss_db >= 0.0) {
            return Err(invalid("receiver.coupling_loss_db", "must be non-negative"));
        }
        if !(self.field_stop_diam_um > 0.0) {
            return Err(invalid("receiver.field_stop_diam_um", "must be positive"));
        }
        if !(self.effective_focal_length_m > 0.0) {
            return Err(invalid("receiver.effective_focal_length_m", "must be positive"));
        }
        let expected = self.field_stop_diam_um * 0.5 / self.effective_focal_length_m;
        if !((self.fov_half_angle_urad - expected).abs() <= 1e-6 * expected.max(1.0)) {
            return Err(invalid(
                "receiver.fov_half_angle_urad",
                format!("inconsistent with field stop and focal length (expected {expected} urad)"),
            ));
        }
        if !(self.filter_bandwidth_nm > 0.0) {
            return Err(invalid("receiver.filter_bandwidth_nm", "must be positive"));
        }
        Ok(())
    }

    /// Clear collecting area of the obscured primary.
    pub fn collecting_area_m2(&self) -> f64 {
        PI * 0.25 * (self.primary_diam_m.powi(2) - self.obscuration_diam_m.powi(2))
    }

    pub fn fov_half_angle_rad(&self) -> f64 {
        self.fov_half_angle_urad * 1e-6
    }
}

/// Zenith extinction and night-sky radiance at one wavelength.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AtmosphereBand {
    pub wavelength_nm: f64,
    pub zenith_loss_db: f64,
    /// Sky radiance in W / m^2 / sr / nm.
    pub sky_radiance_w_m2_sr_nm: f64,
}

/// Tabulated `(elevation_deg, loss_db)` rows, interpolated linearly and held
/// constant beyond the first and last rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AtmosphereTable {
    rows: Vec<(f64, f64)>,
}

impl AtmosphereTable {
    pub fn new(mut rows: Vec<(f64, f64)>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::AtmosphereTable("no rows".into()));
        }
        if rows.iter().any(|(e, l)| !e.is_finite() || !l.is_finite() || *l < 0.0) {
            return Err(Error::AtmosphereTable("non-finite or negative entry".into()));
        }
        rows.sort_by(|a, b| a.0.total_cmp(&b.0));
        if rows.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(Error::AtmosphereTable("duplicate elevation".into()));
        }
        Ok(Self { rows })
    }

    /// Parses whitespace- or comma-separated two-column text. Blank lines and
    /// lines starting with `#` are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut rows = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line
                .split(|c: char| c == ',' || c.is_whitespace())
                .filter(|f| !f.is_empty())
                .collect();
            if fields.len() != 2 {
                return Err(Error::AtmosphereTable(format!(
                    "line {}: expected 2 columns, found {}",
                    lineno + 1,
                    fields.len()
                )));
            }
            let parse = |f: &str| {
                f.parse::<f64>()
                    .map_err(|e| Error::AtmosphereTable(format!("line {}: {e}", lineno + 1)))
            };
            rows.push((parse(fields[0])?, parse(fields[1])?));
        }
        Self::new(rows)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::AtmosphereTable(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn loss_db(&self, elevation_deg: f64) -> f64 {
        let rows = &self.rows;
        let idx = rows.partition_point(|(e, _)| *e <= elevation_deg);
        if idx == 0 {
            return rows[0].1;
        }
        if idx == rows.len() {
            return rows[rows.len() - 1].1;
        }
        let (e0, l0) = rows[idx - 1];
        let (e1, l1) = rows[idx];
        l0 + (l1 - l0) * (elevation_deg - e0) / (e1 - e0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AtmosphereModel {
    pub bands: Vec<AtmosphereBand>,
    /// Replaces the airmass scaling when present.
    pub override_table: Option<AtmosphereTable>,
}

impl AtmosphereModel {
    /// Clear night sky, 23 km visibility, full Moon.
    pub fn reference() -> Self {
        Self {
            bands: vec![
                AtmosphereBand {
                    wavelength_nm: 850.0,
                    zenith_loss_db: 0.9,
                    sky_radiance_w_m2_sr_nm: 4e-2,
                },
                AtmosphereBand {
                    wavelength_nm: 1550.0,
                    zenith_loss_db: 0.4,
                    sky_radiance_w_m2_sr_nm: 1e-2,
                },
            ],
            override_table: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for band in &self.bands {
            if !(band.wavelength_nm > 0.0) {
                return Err(invalid("atmosphere.bands.wavelength_nm", "must be positive"));
            }
            if !(band.zenith_loss_db >= 0.0) {
                return Err(invalid("atmosphere.bands.zenith_loss_db", "must be non-negative"));
            }
            if !(band.sky_radiance_w_m2_sr_nm >= 0.0) {
                return Err(invalid(
                    "atmosphere.bands.sky_radiance_w_m2_sr_nm",
                    "must be non-negative",
                ));
            }
        }
        Ok(())
    }

    pub fn band(&self, wavelength_nm: f64) -> Result<&AtmosphereBand> {
        self.bands
            .iter()
            .find(|b| (b.wavelength_nm - wavelength_nm).abs() < 1e-6)
            .ok_or(Error::MissingAtmosphereBand { wavelength_nm })
    }

    pub fn loss_db(&self, elevation_deg: f64, wavelength_nm: f64) -> Result<f64> {
        match &self.override_table {
            Some(table) => {
                if !(elevation_deg > 0.0 && elevation_deg <= 90.0) {
                    return Err(invalid("elevation_deg", "must lie in (0, 90]"));
                }
                Ok(table.loss_db(elevation_deg))
            }
            None => atmospheric_loss(elevation_deg, self.band(wavelength_nm)?.zenith_loss_db),
        }
    }
}

/// Diffraction-limited gain `(pi D / lambda)^2` scaled by the truncation
/// efficiency and the beam-quality penalty `1 / (M^2)^2`, in dB.
pub fn antenna_gain_db(aperture_diam_m: f64, wavelength_m: f64, truncation_efficiency: f64, m_squared: f64) -> f64 {
    let ideal = (PI * aperture_diam_m / wavelength_m).powi(2);
    to_db(truncation_efficiency * ideal / (m_squared * m_squared))
}

pub fn tx_antenna_gain(tx: &TransmitterSpec) -> f64 {
    antenna_gain_db(tx.aperture_diam_m, tx.wavelength_m(), tx.truncation_efficiency(), tx.m_squared)
}

/// `20 log10(4 pi L / lambda)`.
pub fn free_space_loss(slant_range_km: f64, wavelength_nm: f64) -> f64 {
    20.0 * (4.0 * PI * slant_range_km * 1e3 / (wavelength_nm * 1e-9)).log10()
}

/// Plane-parallel airmass scaling of the zenith extinction.
pub fn atmospheric_loss(elevation_deg: f64, zenith_loss_db: f64) -> Result<f64> {
    if !(elevation_deg > 0.0 && elevation_deg <= 90.0) {
        return Err(invalid("elevation_deg", "must lie in (0, 90]"));
    }
    Ok(zenith_loss_db / elevation_deg.to_radians().sin())
}

/// Far-field upper bound on the collected fraction, `A_tx A_rx / (L lambda)^2`.
pub fn collection_bound(slant_range_km: f64, tx: &TransmitterSpec, rx: &ReceiverSpec) -> f64 {
    let l = slant_range_km * 1e3;
    let lambda = tx.wavelength_m();
    tx.aperture_area_m2() * rx.collecting_area_m2() / (l * l * lambda * lambda)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkBudgetBreakdown {
    pub elevation_deg: f64,
    pub slant_range_km: f64,
    pub tx_gain_db: f64,
    /// Receiver aperture expressed as an antenna gain, `4 pi A_rx / lambda^2`.
    pub rx_area_gain_db: f64,
    pub free_space_loss_db: f64,
    pub atmospheric_loss_db: f64,
    pub pointing_loss_db: f64,
    pub rx_path_loss_db: f64,
    pub coupling_loss_db: f64,
    pub total_db: f64,
    pub eta: f64,
}

impl LinkBudgetBreakdown {
    /// Loss terms minus gain terms, recomputed from the parts.
    pub fn terms_sum_db(&self) -> f64 {
        self.free_space_loss_db
            + self.atmospheric_loss_db
            + self.pointing_loss_db
            + self.rx_path_loss_db
            + self.coupling_loss_db
            - self.tx_gain_db
            - self.rx_area_gain_db
    }
}

/// Hardware that fixes the downlink budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkHardware {
    pub transmitter: TransmitterSpec,
    pub receiver: ReceiverSpec,
    pub atmosphere: AtmosphereModel,
}

impl LinkHardware {
    pub fn validate(&self) -> Result<()> {
        self.transmitter.validate()?;
        self.receiver.validate()?;
        self.atmosphere.validate()?;
        self.atmosphere.band(self.transmitter.wavelength_nm)?;
        Ok(())
    }

    pub fn breakdown(&self, sample: &PassSample) -> Result<LinkBudgetBreakdown> {
        end_to_end_transmission(sample, &self.transmitter, &self.receiver, &self.atmosphere)
    }
}

pub fn end_to_end_transmission(
    sample: &PassSample,
    tx: &TransmitterSpec,
    rx: &ReceiverSpec,
    atm: &AtmosphereModel,
) -> Result<LinkBudgetBreakdown> {
    if !(sample.slant_range_km > 0.0) {
        return Err(invalid("slant_range_km", "must be positive"));
    }
    let lambda = tx.wavelength_m();
    let tx_gain_db = tx_antenna_gain(tx);
    let rx_area_gain_db = to_db(4.0 * PI * rx.collecting_area_m2() / (lambda * lambda));
    let free_space_loss_db = free_space_loss(sample.slant_range_km, tx.wavelength_nm);
    let atmospheric_loss_db = atm.loss_db(sample.elevation_deg, tx.wavelength_nm)?;
    let mut breakdown = LinkBudgetBreakdown {
        elevation_deg: sample.elevation_deg,
        slant_range_km: sample.slant_range_km,
        tx_gain_db,
        rx_area_gain_db,
        free_space_loss_db,
        atmospheric_loss_db,
        pointing_loss_db: tx.pointing_loss_db,
        rx_path_loss_db: rx.path_loss_db,
        coupling_loss_db: rx.coupling_loss_db,
        total_db: 0.0,
        eta: 0.0,
    };
    breakdown.total_db = breakdown.terms_sum_db();
    breakdown.eta = from_db(-breakdown.total_db);
    if breakdown.eta > 1.0 {
        return Err(Error::NearFieldUnsupported { eta: breakdown.eta });
    }
    Ok(breakdown)
}

/// Background photo-detections per second from diffuse sky radiance.
///
/// Fibre coupling collects `beta * L * lambda^2 * dlambda`; a free-space
/// receiver collects `L * A_rx * pi theta^2 * dlambda` attenuated by the
/// receiver path loss.
pub fn background_click_rate(
    rx: &ReceiverSpec,
    band: &AtmosphereBand,
    detector_efficiency: f64,
) -> f64 {
    let lambda = band.wavelength_nm * 1e-9;
    let radiance = band.sky_radiance_w_m2_sr_nm;
    let power_w = match rx.coupling_mode {
        CouplingMode::FiberWithAo => {
            FIBER_BACKGROUND_COUPLING * radiance * lambda * lambda * rx.filter_bandwidth_nm
        }
        CouplingMode::FreeSpace => {
            let theta = rx.fov_half_angle_rad();
            radiance
                * rx.collecting_area_m2()
                * PI
                * theta
                * theta
                * rx.filter_bandwidth_nm
                * from_db(-rx.path_loss_db)
        }
    };
    power_w * lambda / (PLANCK_J_S * SPEED_OF_LIGHT_M_S) * detector_efficiency
}
