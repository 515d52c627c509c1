//! Link budgets for the four platform links.
//!
//! Every link is modelled as free-space path loss plus a fixed excess loss
//! that depends on a Bernoulli line-of-sight draw. SNR feeds a Shannon
//! capacity that is scaled down by the platform load; latency is propagation
//! delay plus the service time of one packet.

use std::ops::{Index, IndexMut};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{slant_distance, Position3D, WorldState};

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;
/// Thermal noise density at 290 K, dBm/Hz.
pub const THERMAL_NOISE_DBM_HZ: f64 = -174.0;
/// Excess loss on top of FSPL for a line-of-sight link, dB.
pub const EXCESS_LOSS_LOS_DB: f64 = 1.0;
/// Excess loss on top of FSPL for a non-line-of-sight link, dB.
pub const EXCESS_LOSS_NLOS_DB: f64 = 20.0;
/// Urban environment constants of the elevation-angle LOS sigmoid.
pub const ELEVATION_SIGMOID_A: f64 = 9.61;
pub const ELEVATION_SIGMOID_B: f64 = 0.16;
/// Minimum elevation at which the satellite is visible, degrees.
pub const LEO_MASK_ANGLE_DEG: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum LinkKind {
    Bs,
    Uav,
    Hap,
    Leo,
}

impl LinkKind {
    /// All kinds in bit order.
    pub const ALL: [LinkKind; 4] = [LinkKind::Bs, LinkKind::Uav, LinkKind::Hap, LinkKind::Leo];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            LinkKind::Bs => "BS",
            LinkKind::Uav => "UAV",
            LinkKind::Hap => "HAP",
            LinkKind::Leo => "LEO",
        }
    }

    /// Position of the serving platform for this link.
    pub fn node_position(self, world: &WorldState) -> Position3D {
        match self {
            LinkKind::Bs => world.bs,
            LinkKind::Uav => world.uav,
            LinkKind::Hap => world.hap,
            LinkKind::Leo => world.leo_position(),
        }
    }
}

impl std::fmt::Display for LinkKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// One value per link kind, indexed by [`LinkKind`].
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PerLink<T>(pub [T; 4]);

impl<T> PerLink<T> {
    pub fn from_fn(mut f: impl FnMut(LinkKind) -> T) -> Self {
        PerLink(LinkKind::ALL.map(&mut f))
    }

    pub fn iter(&self) -> impl Iterator<Item = (LinkKind, &T)> {
        LinkKind::ALL.into_iter().zip(self.0.iter())
    }
}

impl<T> Index<LinkKind> for PerLink<T> {
    type Output = T;
    fn index(&self, kind: LinkKind) -> &T {
        &self.0[kind.index()]
    }
}

impl<T> IndexMut<LinkKind> for PerLink<T> {
    fn index_mut(&mut self, kind: LinkKind) -> &mut T {
        &mut self.0[kind.index()]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkParams {
    pub bandwidth_hz: f64,
    pub carrier_frequency_hz: f64,
    pub tx_power_dbm: f64,
    /// Operating cost of keeping the link active, watts.
    pub power_cost_w: f64,
    pub antenna_gain_tx_dbi: f64,
    pub antenna_gain_rx_dbi: f64,
    pub noise_figure_db: f64,
}

impl LinkParams {
    pub fn default_for(kind: LinkKind) -> Self {
        let (bw_mhz, f_ghz, tx_dbm, cost_w) = match kind {
            LinkKind::Bs => (100.0, 28.0, 30.0, 2.0),
            LinkKind::Uav => (200.0, 26.0, 27.0, 3.0),
            LinkKind::Hap => (200.0, 26.0, 35.0, 4.0),
            LinkKind::Leo => (250.0, 27.0, 40.0, 5.0),
        };
        Self {
            bandwidth_hz: bw_mhz * 1e6,
            carrier_frequency_hz: f_ghz * 1e9,
            tx_power_dbm: tx_dbm,
            power_cost_w: cost_w,
            antenna_gain_tx_dbi: 0.0,
            antenna_gain_rx_dbi: 0.0,
            noise_figure_db: 7.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("bandwidth_hz", self.bandwidth_hz),
            ("carrier_frequency_hz", self.carrier_frequency_hz),
            ("power_cost_w", self.power_cost_w),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("link.{name} must be positive, got {v}")));
            }
        }
        if !(self.noise_figure_db >= 0.0) || !self.tx_power_dbm.is_finite() {
            return Err(Error::Config("link noise figure / tx power invalid".into()));
        }
        Ok(())
    }
}

pub fn default_link_table() -> PerLink<LinkParams> {
    PerLink::from_fn(LinkParams::default_for)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkMetrics {
    pub los: bool,
    pub distance_m: f64,
    pub path_loss_db: f64,
    pub snr_db: f64,
    pub capacity_bps: f64,
    pub latency_s: f64,
    pub power_w: f64,
    pub load: f64,
}

/// Packet size and the latency reported for a link that cannot carry it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ServiceModel {
    pub packet_bits: f64,
    /// Latency assigned when the link rate is zero; also the ceiling for any
    /// link latency.
    pub unavailable_latency_s: f64,
}

impl Default for ServiceModel {
    fn default() -> Self {
        Self {
            packet_bits: 12_000.0,
            unavailable_latency_s: 0.1,
        }
    }
}

/// LOS probability of `kind` for the current geometry.
pub fn los_probability(kind: LinkKind, world: &WorldState) -> f64 {
    let node = kind.node_position(world);
    match kind {
        LinkKind::Bs => uma_los_probability(world.ue.horizontal_distance(&node)),
        LinkKind::Uav | LinkKind::Hap => elevation_los_probability(elevation_or_horizon(&world.ue, &node)),
        LinkKind::Leo => {
            if elevation_or_horizon(&world.ue, &node) >= LEO_MASK_ANGLE_DEG {
                1.0
            } else {
                0.0
            }
        }
    }
}

/// Urban-macro LOS probability at 2D distance `d` (meters).
pub fn uma_los_probability(d: f64) -> f64 {
    if d <= 18.0 {
        1.0
    } else {
        18.0 / d + (-d / 63.0).exp() * (1.0 - 18.0 / d)
    }
}

/// Elevation-angle sigmoid LOS probability (angle in degrees).
pub fn elevation_los_probability(elevation_deg: f64) -> f64 {
    let a = ELEVATION_SIGMOID_A;
    let b = ELEVATION_SIGMOID_B;
    1.0 / (1.0 + a * (-b * (elevation_deg - a)).exp())
}

fn elevation_or_horizon(ue: &Position3D, node: &Position3D) -> f64 {
    crate::geometry::elevation_angle(ue, node).unwrap_or(0.0)
}

/// Free-space path loss in dB (distance in m, frequency in Hz).
pub fn fspl_db(distance_m: f64, frequency_hz: f64) -> f64 {
    20.0 * distance_m.log10() + 20.0 * frequency_hz.log10() - 147.55
}

/// FSPL plus the LOS/NLOS excess loss.
pub fn path_loss_db(distance_m: f64, frequency_hz: f64, los: bool) -> Result<f64> {
    if !(distance_m > 0.0) {
        return Err(Error::InvalidArgument(format!("path loss needs a positive distance, got {distance_m}")));
    }
    let excess = if los { EXCESS_LOSS_LOS_DB } else { EXCESS_LOSS_NLOS_DB };
    Ok(fspl_db(distance_m, frequency_hz) + excess)
}

/// Receiver noise floor in dBm.
pub fn noise_floor_dbm(bandwidth_hz: f64, noise_figure_db: f64) -> f64 {
    THERMAL_NOISE_DBM_HZ + 10.0 * bandwidth_hz.log10() + noise_figure_db
}

pub fn snr_db(params: &LinkParams, path_loss_db: f64) -> f64 {
    params.tx_power_dbm + params.antenna_gain_tx_dbi + params.antenna_gain_rx_dbi
        - path_loss_db
        - noise_floor_dbm(params.bandwidth_hz, params.noise_figure_db)
}

/// Load-scaled Shannon capacity, bits/s.
pub fn link_capacity(bandwidth_hz: f64, snr_db: f64, load: f64) -> f64 {
    let snr = 10f64.powf(snr_db / 10.0);
    (1.0 - load.clamp(0.0, 1.0)) * bandwidth_hz * (1.0 + snr).log2()
}

/// Propagation delay plus single-packet service time. `None` when the link
/// carries no traffic at all.
pub fn link_latency(distance_m: f64, rate_bps: f64, packet_bits: f64) -> Option<f64> {
    if rate_bps > 0.0 {
        Some(propagation_delay(distance_m) + packet_bits / rate_bps)
    } else {
        None
    }
}

pub fn propagation_delay(distance_m: f64) -> f64 {
    distance_m / SPEED_OF_LIGHT
}

/// Draw one LOS state per link.
pub fn draw_los<R: Rng + ?Sized>(world: &WorldState, rng: &mut R) -> PerLink<bool> {
    PerLink::from_fn(|kind| rng.gen::<f64>() < los_probability(kind, world))
}

/// Evaluate every link given already drawn LOS states.
pub fn link_metrics(
    world: &WorldState,
    params: &PerLink<LinkParams>,
    loads: &PerLink<f64>,
    los: &PerLink<bool>,
    service: &ServiceModel,
) -> PerLink<LinkMetrics> {
    PerLink::from_fn(|kind| {
        let p = &params[kind];
        let distance_m = slant_distance(&world.ue, &kind.node_position(world));
        let path_loss_db = path_loss_db(distance_m.max(1e-3), p.carrier_frequency_hz, los[kind])
            .expect("distance is clamped positive");
        let snr = snr_db(p, path_loss_db);
        let capacity_bps = link_capacity(p.bandwidth_hz, snr, loads[kind]);
        let latency_s = link_latency(distance_m, capacity_bps, service.packet_bits)
            .map_or(service.unavailable_latency_s, |l| l.min(service.unavailable_latency_s));
        LinkMetrics {
            los: los[kind],
            distance_m,
            path_loss_db,
            snr_db: snr,
            capacity_bps,
            latency_s,
            power_w: p.power_cost_w,
            load: loads[kind],
        }
    })
}

/// LOS draw followed by the full link budget for all four links.
pub fn evaluate_links<R: Rng + ?Sized>(
    world: &WorldState,
    params: &PerLink<LinkParams>,
    loads: &PerLink<f64>,
    service: &ServiceModel,
    rng: &mut R,
) -> PerLink<LinkMetrics> {
    let los = draw_los(world, rng);
    link_metrics(world, params, loads, &los, service)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Layout, MobilityConfig};
    use crate::rng::stream;
    use proptest::prelude::*;

    fn world() -> WorldState {
        let mut rng = stream(11, "channel-test");
        WorldState::initial(&Layout::default(), &MobilityConfig::default(), &mut rng)
    }

    // Hand-evaluated anchors; see the acceptance suite for the same values.
    #[test]
    fn fspl_anchor() {
        // 20*log10(100) + 20*log10(28e9) - 147.55 = 40 + 208.9432 - 147.55
        assert!((fspl_db(100.0, 28e9) - 101.3932).abs() < 1e-3);
        assert!((path_loss_db(100.0, 28e9, true).unwrap() - 102.39).abs() < 0.01);
        // 20*log10(5.5e5) + 20*log10(2.7e10) - 147.55 = 114.8073 + 208.6273 - 147.55
        assert!((path_loss_db(550_000.0, 27e9, true).unwrap() - 176.8846).abs() < 1e-3);
    }

    #[test]
    fn nlos_is_nineteen_db_worse() {
        for d in [10.0, 250.0, 20_000.0] {
            let los = path_loss_db(d, 26e9, true).unwrap();
            let nlos = path_loss_db(d, 26e9, false).unwrap();
            assert!((nlos - los - 19.0).abs() < 1e-9);
        }
    }

    #[test]
    fn path_loss_rejects_nonpositive_distance() {
        assert!(path_loss_db(0.0, 28e9, true).is_err());
        assert!(path_loss_db(-1.0, 28e9, true).is_err());
    }

    #[test]
    fn noise_floor_and_snr_chain() {
        assert!((noise_floor_dbm(100e6, 7.0) + 87.0).abs() < 1e-9);
        let bs = LinkParams::default_for(LinkKind::Bs);
        assert!((snr_db(&bs, 102.39) - 14.61).abs() < 1e-9);
        assert!((snr_db(&bs, 105.39) - 11.61).abs() < 1e-9);
    }

    #[test]
    fn capacity_examples() {
        assert!((link_capacity(1.0, 0.0, 0.0) - 1.0).abs() < 1e-12);
        assert_eq!(link_capacity(100e6, 25.0, 1.0), 0.0);
        // 100e6 * log2(1 + 10^1.461) = 100e6 * log2(29.9068) = 4.9024e8
        let c = link_capacity(100e6, 14.61, 0.0);
        assert!((c - 4.9024e8).abs() / 4.9024e8 < 1e-4);
        assert!((c - 4.924e8).abs() / 4.924e8 < 0.005);
    }

    #[test]
    fn latency_examples() {
        let prop = link_latency(550_000.0, f64::INFINITY, 12_000.0).unwrap();
        assert!((prop - 1.834_6e-3).abs() < 1e-6);
        let service = link_latency(0.0, 1e8, 12_000.0).unwrap();
        assert!((service - 1.2e-4).abs() < 1e-15);
        let double = link_latency(0.0, 1e8, 24_000.0).unwrap();
        assert!((double - 2.0 * service).abs() < 1e-15);
        assert_eq!(link_latency(10.0, 0.0, 12_000.0), None);
    }

    #[test]
    fn los_examples() {
        assert_eq!(uma_los_probability(10.0), 1.0);
        assert!(elevation_los_probability(90.0) >= 0.9999);
        let mut w = world();
        // Fold angle 5 degrees: elevation just under 5 degrees, below the mask.
        w.leo_arc_deg = 5.0;
        assert_eq!(los_probability(LinkKind::Leo, &w), 0.0);
        w.leo_arc_deg = 90.0;
        assert_eq!(los_probability(LinkKind::Leo, &w), 1.0);
    }

    #[test]
    fn los_monotone_on_grids() {
        let mut prev = 1.0;
        for i in 0..2000 {
            let p = uma_los_probability(f64::from(i));
            assert!(p <= prev + 1e-15);
            prev = p;
        }
        let mut prev = 0.0;
        for i in 0..=900 {
            let p = elevation_los_probability(f64::from(i) / 10.0);
            assert!(p >= prev);
            prev = p;
        }
    }

    #[test]
    fn evaluate_links_fields() {
        let w = world();
        let params = default_link_table();
        let loads = PerLink([0.1, 0.2, 0.3, 0.4]);
        let service = ServiceModel::default();
        let mut a = stream(3, "los");
        let mut b = stream(3, "los");
        let m1 = evaluate_links(&w, &params, &loads, &service, &mut a);
        let m2 = evaluate_links(&w, &params, &loads, &service, &mut b);
        assert_eq!(m1, m2);
        assert_eq!(m1[LinkKind::Bs].power_w, 2.0);
        assert_eq!(m1[LinkKind::Leo].power_w, 5.0);
        assert!(m1[LinkKind::Leo].latency_s >= 1.834e-3);
        for (_, m) in m1.iter() {
            assert!(m.capacity_bps >= 0.0 && m.latency_s > 0.0 && m.snr_db.is_finite());
        }
    }

    proptest! {
        #[test]
        fn capacity_monotone(bw in 1e3..1e9f64, snr in -40.0..40.0f64, load in 0.0..0.99f64, d in 0.01..5.0f64) {
            let c = link_capacity(bw, snr, load);
            prop_assert!(c >= 0.0);
            prop_assert!(link_capacity(bw, snr + d, load) > c);
            prop_assert!(link_capacity(bw * (1.0 + d), snr, load) > c);
            prop_assert!(link_capacity(bw, snr, (load + d / 10.0).min(1.0)) < c);
        }

        #[test]
        fn nlos_never_beats_los(d in 1.0..1e6f64, f in 1e9..1e11f64, load in 0.0..1.0f64) {
            let p = LinkParams::default_for(LinkKind::Uav);
            let los = link_capacity(p.bandwidth_hz, snr_db(&p, path_loss_db(d, f, true).unwrap()), load);
            let nlos = link_capacity(p.bandwidth_hz, snr_db(&p, path_loss_db(d, f, false).unwrap()), load);
            prop_assert!(nlos <= los);
        }

        #[test]
        fn snr_linear_in_path_loss(pl in 50.0..200.0f64, x in 0.0..50.0f64) {
            let p = LinkParams::default_for(LinkKind::Hap);
            prop_assert!((snr_db(&p, pl) - snr_db(&p, pl + x) - x).abs() < 1e-9);
        }
    }
}
