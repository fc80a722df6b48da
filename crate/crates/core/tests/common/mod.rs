#![allow(dead_code)]

use satqkd_core::channel::{DetectorSpec, SourceSpec};
use satqkd_core::finite_key::{DecoyScheme, SecurityParams};
use satqkd_core::link_budget::{AtmosphereModel, CouplingMode, LinkHardware, ReceiverSpec, TransmitterSpec};
use satqkd_core::optimizer::MissionSetup;
use satqkd_core::orbit::{synth_pass, GroundStation, OrbitSpec, PassGeometry};

#[derive(Clone, Copy, Debug)]
pub enum Receiver {
    Snspd,
    IdQube,
    Spcm,
}

pub fn reference_pass(dt_s: f64) -> PassGeometry {
    let orbit = OrbitSpec::sun_synchronous(567.0).unwrap();
    synth_pass(&orbit, &GroundStation::new(20.0, 80.0).unwrap(), dt_s).unwrap()
}

pub fn source(scheme: DecoyScheme) -> SourceSpec {
    SourceSpec {
        pulse_rate_hz: 1e9,
        signal_intensity: 0.6,
        decoy_intensity: 0.2,
        vacuum_included: scheme.uses_vacuum(),
        p_mu: 0.7,
        p_nu: if scheme.uses_vacuum() { 0.2 } else { 0.3 },
        p_z_alice: 0.9,
        p_z_bob: 0.9,
        misalignment_z: 0.01,
        misalignment_x: 0.01,
    }
}

pub fn setup(receiver: Receiver, scheme: DecoyScheme) -> MissionSetup {
    let (mut detector, wavelength, mode) = match receiver {
        Receiver::Snspd => (DetectorSpec::snspd_id281(), 1550.0, CouplingMode::FiberWithAo),
        Receiver::IdQube => (DetectorSpec::id_qube_nir(), 1550.0, CouplingMode::FreeSpace),
        Receiver::Spcm => (DetectorSpec::spcm_850_14(), 850.0, CouplingMode::FreeSpace),
    };
    detector.n_detectors = 1;
    MissionSetup {
        hardware: LinkHardware {
            transmitter: TransmitterSpec::reference(wavelength),
            receiver: ReceiverSpec::reference(mode),
            atmosphere: AtmosphereModel::reference(),
        },
        detector,
        source: source(scheme),
        security: SecurityParams::default(),
        scheme,
        passive_receiver_basis: false,
    }
}
