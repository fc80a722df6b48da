//! Circular-orbit geometry for a single ground station.
//!
//! The Earth is a non-rotating sphere of equatorial radius [`EARTH_RADIUS_KM`]
//! and the satellite moves on a circular orbit. A pass is described by its
//! culmination elevation; the time series is symmetric about culmination
//! (`t = 0`). Earth rotation shifts real pass shapes by well under a percent
//! for the single-pass analyses done here.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Equatorial Earth radius in km.
pub const EARTH_RADIUS_KM: f64 = 6378.137;
/// Standard gravitational parameter of the Earth in km^3/s^2.
pub const EARTH_MU_KM3_S2: f64 = 398_600.441_8;
/// Orbit radius scale of the sun-synchronous inclination approximation.
const SSO_RADIUS_SCALE_KM: f64 = 12_352.0;

/// Circular orbit of altitude `altitude_km` and inclination `inclination_deg`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OrbitSpec {
    pub altitude_km: f64,
    pub inclination_deg: f64,
}

impl OrbitSpec {
    pub fn new(altitude_km: f64, inclination_deg: f64) -> Result<Self> {
        let orbit = Self {
            altitude_km,
            inclination_deg,
        };
        orbit.validate()?;
        Ok(orbit)
    }

    /// Circular sun-synchronous orbit at the given altitude.
    pub fn sun_synchronous(altitude_km: f64) -> Result<Self> {
        Self::new(altitude_km, sso_inclination(altitude_km)?)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.altitude_km > 0.0 && self.altitude_km.is_finite()) {
            return Err(invalid("orbit.altitude_km", "must be positive and finite"));
        }
        if !(0.0..180.0).contains(&self.inclination_deg) {
            return Err(invalid("orbit.inclination_deg", "must lie in [0, 180)"));
        }
        Ok(())
    }

    pub fn radius_km(&self) -> f64 {
        EARTH_RADIUS_KM + self.altitude_km
    }

    /// Mean motion in rad/s.
    pub fn angular_rate(&self) -> f64 {
        (EARTH_MU_KM3_S2 / self.radius_km().powi(3)).sqrt()
    }

    pub fn period_s(&self) -> f64 {
        std::f64::consts::TAU / self.angular_rate()
    }
}

/// Elevation limits of a pass as seen from the ground station.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroundStation {
    /// Lowest elevation at which a link is kept.
    pub min_elevation_deg: f64,
    /// Culmination elevation of the pass.
    pub max_elevation_deg: f64,
}

impl GroundStation {
    /// Highest elevation a two-axis mount tracks reliably.
    pub const DEFAULT_MAX_ELEVATION_DEG: f64 = 80.0;

    pub fn new(min_elevation_deg: f64, max_elevation_deg: f64) -> Result<Self> {
        let station = Self {
            min_elevation_deg,
            max_elevation_deg,
        };
        station.validate()?;
        Ok(station)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.min_elevation_deg > 0.0) {
            return Err(invalid("station.min_elevation_deg", "must be positive"));
        }
        if !(self.max_elevation_deg <= 90.0) {
            return Err(invalid("station.max_elevation_deg", "must not exceed 90"));
        }
        if !(self.min_elevation_deg < self.max_elevation_deg) {
            return Err(Error::InvalidScenario(format!(
                "station.max_elevation_deg {} is not above station.min_elevation_deg {}",
                self.max_elevation_deg, self.min_elevation_deg
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PassSample {
    /// Time from culmination in seconds.
    pub t_s: f64,
    pub elevation_deg: f64,
    pub slant_range_km: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PassGeometry {
    pub samples: Vec<PassSample>,
    pub sample_dt_s: f64,
}

impl PassGeometry {
    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    /// Time between the first and last sample.
    pub fn duration_s(&self) -> f64 {
        match (self.samples.first(), self.samples.last()) {
            (Some(first), Some(last)) => last.t_s - first.t_s,
            _ => 0.0,
        }
    }

    /// Duration of the part of the pass at or above `elevation_deg`.
    pub fn duration_above_s(&self, elevation_deg: f64) -> f64 {
        let above: Vec<&PassSample> = self
            .samples
            .iter()
            .filter(|s| s.elevation_deg >= elevation_deg)
            .collect();
        match (above.first(), above.last()) {
            (Some(first), Some(last)) => last.t_s - first.t_s,
            _ => 0.0,
        }
    }
}

/// Approximate inclination of a circular sun-synchronous orbit, in degrees.
pub fn sso_inclination(altitude_km: f64) -> Result<f64> {
    if !(altitude_km > 0.0) {
        return Err(invalid("altitude_km", "must be positive"));
    }
    let cos_i = -((EARTH_RADIUS_KM + altitude_km) / SSO_RADIUS_SCALE_KM).powf(3.5);
    if cos_i < -1.0 {
        return Err(Error::NoSunSynchronousSolution { altitude_km });
    }
    Ok(cos_i.acos().to_degrees())
}

/// Largest ground distance between two stations that both see the satellite
/// above `eps_min_deg` at the same time.
pub fn max_ground_distance(altitude_km: f64, eps_min_deg: f64) -> Result<f64> {
    if !(altitude_km >= 0.0) {
        return Err(invalid("altitude_km", "must be non-negative"));
    }
    if !(0.0..90.0).contains(&eps_min_deg) {
        return Err(invalid("eps_min_deg", "must lie in [0, 90)"));
    }
    Ok(2.0 * EARTH_RADIUS_KM * central_angle_at_elevation(altitude_km, eps_min_deg))
}

/// Ground coverage of one satellite and the globally averaged link availability.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Coverage {
    pub area_km2: f64,
    pub availability: f64,
}

pub fn coverage_and_availability(altitude_km: f64) -> Result<Coverage> {
    if !(altitude_km > 0.0) {
        return Err(invalid("altitude_km", "must be positive"));
    }
    let ratio = altitude_km / (EARTH_RADIUS_KM + altitude_km);
    Ok(Coverage {
        area_km2: std::f64::consts::TAU * EARTH_RADIUS_KM * EARTH_RADIUS_KM * ratio,
        availability: 0.5 * ratio,
    })
}

/// Earth central angle (rad) between the station and the sub-satellite point
/// when the satellite is seen at `elevation_deg`.
pub fn central_angle_at_elevation(altitude_km: f64, elevation_deg: f64) -> f64 {
    let eps = elevation_deg.to_radians();
    let ratio = EARTH_RADIUS_KM / (EARTH_RADIUS_KM + altitude_km);
    ((ratio * eps.cos()).clamp(-1.0, 1.0)).acos() - eps
}

/// Line-of-sight distance to a satellite seen at `elevation_deg`.
pub fn slant_range_at_elevation(altitude_km: f64, elevation_deg: f64) -> f64 {
    let sin_e = elevation_deg.to_radians().sin();
    let r = EARTH_RADIUS_KM;
    -r * sin_e + (r * r * sin_e * sin_e + altitude_km * altitude_km + 2.0 * r * altitude_km).sqrt()
}

fn elevation_from_central_angle(orbit_radius_km: f64, psi: f64) -> f64 {
    let ratio = EARTH_RADIUS_KM / orbit_radius_km;
    (psi.cos() - ratio).atan2(psi.sin()).to_degrees()
}

fn range_from_central_angle(orbit_radius_km: f64, psi: f64) -> f64 {
    let r = EARTH_RADIUS_KM;
    let rs = orbit_radius_km;
    (r * r + rs * rs - 2.0 * r * rs * psi.cos()).max(0.0).sqrt()
}

/// Samples the part of a pass above `station.min_elevation_deg` every
/// `sample_dt_s` seconds, centred on culmination.
pub fn synth_pass(orbit: &OrbitSpec, station: &GroundStation, sample_dt_s: f64) -> Result<PassGeometry> {
    orbit.validate()?;
    station.validate()?;
    if !(sample_dt_s > 0.0 && sample_dt_s.is_finite()) {
        return Err(invalid("sample_dt_s", "must be positive"));
    }
    let rs = orbit.radius_km();
    let omega = orbit.angular_rate();
    let psi_min = central_angle_at_elevation(orbit.altitude_km, station.max_elevation_deg);
    let psi_edge = central_angle_at_elevation(orbit.altitude_km, station.min_elevation_deg);
    let cos_edge = (psi_edge.cos() / psi_min.cos()).clamp(-1.0, 1.0);
    let half_duration = cos_edge.acos() / omega;
    let half_steps = (half_duration / sample_dt_s + 1e-9).floor() as i64;

    let mut samples = Vec::with_capacity((2 * half_steps + 1) as usize);
    for k in -half_steps..=half_steps {
        let t = k as f64 * sample_dt_s;
        // cos psi(t) = cos psi_min cos(omega t)
        let psi = (psi_min.cos() * (omega * t).cos()).clamp(-1.0, 1.0).acos();
        let elevation = if k == 0 {
            station.max_elevation_deg
        } else {
            elevation_from_central_angle(rs, psi)
        };
        if elevation + 1e-9 < station.min_elevation_deg {
            continue;
        }
        samples.push(PassSample {
            t_s: t,
            elevation_deg: elevation.max(station.min_elevation_deg),
            slant_range_km: range_from_central_angle(rs, psi),
        });
    }
    Ok(PassGeometry {
        samples,
        sample_dt_s,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn sso_inclination_reference_altitude() {
        assert_relative_eq!(sso_inclination(567.0).unwrap(), 97.66, epsilon = 0.05);
        assert_relative_eq!(sso_inclination(400.0).unwrap(), 97.031_028_952, epsilon = 1e-6);
    }

    #[test]
    fn sso_inclination_boundary_and_failure() {
        let h = SSO_RADIUS_SCALE_KM - EARTH_RADIUS_KM;
        assert_relative_eq!(sso_inclination(h).unwrap(), 180.0, epsilon = 1e-9);
        assert!(matches!(
            sso_inclination(h + 10.0),
            Err(Error::NoSunSynchronousSolution { .. })
        ));
    }

    #[test]
    fn max_ground_distance_values() {
        let d = max_ground_distance(574.0, 20.0).unwrap();
        assert!((d - 2325.0).abs() / 2325.0 < 0.01, "{d}");
        assert_relative_eq!(d, 2325.681_525_478, epsilon = 1e-6);
        assert_relative_eq!(
            max_ground_distance(600.0, 10.0).unwrap(),
            3523.191_297_444_7,
            epsilon = 1e-6
        );
        assert_relative_eq!(max_ground_distance(0.0, 35.0).unwrap(), 0.0, epsilon = 1e-9);
    }

    #[test]
    fn max_ground_distance_monotone_on_grid() {
        for h in [300.0, 500.0, 700.0, 900.0] {
            for e in [0.0, 10.0, 20.0, 30.0] {
                let d = max_ground_distance(h, e).unwrap();
                assert!(max_ground_distance(h + 100.0, e).unwrap() > d);
                assert!(max_ground_distance(h, e + 5.0).unwrap() < d);
            }
        }
    }

    #[test]
    fn coverage_values() {
        let c = coverage_and_availability(574.0).unwrap();
        assert_relative_eq!(c.availability, 0.041_282_270_473, epsilon = 1e-9);
        assert_relative_eq!(c.area_km2, 2.110_382_252_3e7, max_relative = 1e-9);
        let far = coverage_and_availability(1e12).unwrap();
        assert!((far.availability - 0.5).abs() < 1e-8);
        assert!(far.availability < 0.5);
    }

    #[test]
    fn slant_range_closed_form() {
        assert_relative_eq!(slant_range_at_elevation(574.0, 20.0), 1341.375_259_369_5, epsilon = 1e-6);
        assert_relative_eq!(slant_range_at_elevation(574.0, 90.0), 574.0, epsilon = 1e-9);
    }

    #[test]
    fn zenith_pass_range_equals_altitude() {
        let orbit = OrbitSpec::new(574.0, 97.7).unwrap();
        let pass = synth_pass(&orbit, &GroundStation::new(20.0, 90.0).unwrap(), 1.0).unwrap();
        let mid = pass.samples.iter().find(|s| s.t_s == 0.0).unwrap();
        assert_relative_eq!(mid.slant_range_km, 574.0, epsilon = 1e-9);
        assert_relative_eq!(mid.elevation_deg, 90.0, epsilon = 1e-9);
    }

    #[test]
    fn pass_is_symmetric_and_bounded() {
        let orbit = OrbitSpec::sun_synchronous(567.0).unwrap();
        let station = GroundStation::new(20.0, 80.0).unwrap();
        let pass = synth_pass(&orbit, &station, 1.0).unwrap();
        let n = pass.len();
        assert_eq!(n % 2, 1);
        let l_edge = slant_range_at_elevation(567.0, 20.0);
        for i in 0..n {
            let a = pass.samples[i];
            let b = pass.samples[n - 1 - i];
            assert_eq!(a.t_s, -b.t_s);
            assert_relative_eq!(a.elevation_deg, b.elevation_deg, epsilon = 1e-9);
            assert_relative_eq!(a.slant_range_km, b.slant_range_km, epsilon = 1e-9);
            assert!(a.slant_range_km >= 567.0 && a.slant_range_km <= l_edge + 1e-6);
            assert!(a.elevation_deg >= 20.0 && a.elevation_deg <= 80.0);
        }
        // range strictly increases away from culmination
        let centre = n / 2;
        for i in centre..n - 1 {
            assert!(pass.samples[i + 1].slant_range_km > pass.samples[i].slant_range_km);
            assert!(pass.samples[i + 1].elevation_deg < pass.samples[i].elevation_deg);
        }
    }

    #[test]
    fn pass_sample_matches_closed_form_range() {
        let orbit = OrbitSpec::new(574.0, 97.7).unwrap();
        let pass = synth_pass(&orbit, &GroundStation::new(10.0, 80.0).unwrap(), 1.0).unwrap();
        for s in &pass.samples {
            assert_relative_eq!(
                s.slant_range_km,
                slant_range_at_elevation(574.0, s.elevation_deg),
                max_relative = 1e-9
            );
        }
    }

    #[test]
    fn reference_pass_duration_corridor() {
        let orbit = OrbitSpec::sun_synchronous(567.0).unwrap();
        let pass = synth_pass(&orbit, &GroundStation::new(20.0, 80.0).unwrap(), 1.0).unwrap();
        let d = pass.duration_s();
        assert!((250.0..=450.0).contains(&d), "{d}");
        assert_eq!(pass.len() as f64, d + 1.0);
    }

    #[test]
    fn rejects_inverted_station() {
        assert!(matches!(GroundStation::new(50.0, 40.0), Err(Error::InvalidScenario(_))));
        assert!(GroundStation::new(0.0, 40.0).is_err());
        assert!(GroundStation::new(10.0, 91.0).is_err());
        assert!(synth_pass(
            &OrbitSpec::new(500.0, 50.0).unwrap(),
            &GroundStation::new(20.0, 80.0).unwrap(),
            0.0
        )
        .is_err());
    }
}
