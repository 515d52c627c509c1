//! World geometry and platform mobility.
//!
//! The scenario is a single urban cell centred on the origin. The UE and the
//! terrestrial BS are static, the HAP hovers at a fixed point, the UAV follows
//! a random-waypoint model inside the cell cylinder and the LEO satellite moves
//! on a circular arc in the x-z plane above the cell.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A point in the local cell frame, meters. `z` is height above ground.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Position3D {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Position3D {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn is_valid(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite() && self.z >= 0.0
    }

    pub fn horizontal_distance(&self, other: &Position3D) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Euclidean distance between two points.
pub fn slant_distance(a: &Position3D, b: &Position3D) -> f64 {
    let dx = a.x - b.x;
    let dy = a.y - b.y;
    let dz = a.z - b.z;
    (dx * dx + dy * dy + dz * dz).sqrt()
}

/// Elevation of `node` as seen from `ue`, degrees in `[0, 90]`.
///
/// The node has to be strictly above the UE.
pub fn elevation_angle(ue: &Position3D, node: &Position3D) -> Result<f64> {
    let dz = node.z - ue.z;
    if dz <= 0.0 || !dz.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "elevation undefined: node height {} m is not above UE height {} m",
            node.z, ue.z
        )));
    }
    let deg = dz.atan2(ue.horizontal_distance(node)).to_degrees();
    Ok(deg.clamp(0.0, 90.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MobilityConfig {
    /// UAV cruise speed, m/s.
    pub uav_speed: f64,
    /// LEO arc advance per step, degrees.
    pub leo_arc_step: f64,
    /// Radius of the cell disc the UAV roams in, meters.
    pub cell_radius: f64,
    /// Wall-clock duration of one step, seconds.
    pub step_duration: f64,
}

impl Default for MobilityConfig {
    fn default() -> Self {
        Self {
            uav_speed: 15.0,
            leo_arc_step: 4.0,
            cell_radius: 500.0,
            step_duration: 1.0,
        }
    }
}

impl MobilityConfig {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("uav_speed", self.uav_speed),
            ("leo_arc_step", self.leo_arc_step),
            ("cell_radius", self.cell_radius),
            ("step_duration", self.step_duration),
        ];
        for (name, v) in fields {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("mobility.{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    /// Distance the UAV covers in one step.
    pub fn uav_step_length(&self) -> f64 {
        self.uav_speed * self.step_duration
    }
}

/// Static placement of the scenario nodes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Layout {
    pub ue: Position3D,
    pub bs: Position3D,
    pub hap: Position3D,
    pub uav_min_altitude: f64,
    pub uav_max_altitude: f64,
    pub leo_altitude: f64,
}

impl Default for Layout {
    fn default() -> Self {
        Self {
            ue: Position3D::new(0.0, 0.0, 1.5),
            bs: Position3D::new(200.0, 150.0, 25.0),
            hap: Position3D::new(0.0, 0.0, 20_000.0),
            uav_min_altitude: 120.0,
            uav_max_altitude: 250.0,
            leo_altitude: 550_000.0,
        }
    }
}

impl Layout {
    pub fn validate(&self) -> Result<()> {
        for (name, p) in [("ue", self.ue), ("bs", self.bs), ("hap", self.hap)] {
            if !p.is_valid() {
                return Err(Error::Config(format!("layout.{name} is not a valid position")));
            }
        }
        if !(self.uav_min_altitude > self.ue.z && self.uav_min_altitude <= self.uav_max_altitude) {
            return Err(Error::Config("layout: UAV altitude band is invalid".into()));
        }
        if !(self.leo_altitude > 0.0 && self.leo_altitude.is_finite()) {
            return Err(Error::Config("layout.leo_altitude must be positive".into()));
        }
        Ok(())
    }
}

/// Positions of every node at one time step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub ue: Position3D,
    pub bs: Position3D,
    pub uav: Position3D,
    pub uav_waypoint: Position3D,
    pub hap: Position3D,
    /// Position of the LEO satellite on its arc, degrees in `[0, 360)`.
    pub leo_arc_deg: f64,
    pub leo_altitude: f64,
    pub step_index: u64,
}

impl WorldState {
    /// Fresh world: UAV and its first waypoint drawn uniformly in the cell
    /// cylinder, LEO arc angle uniform on the circle.
    pub fn initial<R: Rng + ?Sized>(layout: &Layout, cfg: &MobilityConfig, rng: &mut R) -> Self {
        let uav = random_waypoint(layout, cfg, rng);
        let uav_waypoint = random_waypoint(layout, cfg, rng);
        let leo_arc_deg = rng.gen_range(0.0..360.0);
        Self {
            ue: layout.ue,
            bs: layout.bs,
            uav,
            uav_waypoint,
            hap: layout.hap,
            leo_arc_deg,
            leo_altitude: layout.leo_altitude,
            step_index: 0,
        }
    }

    /// Cartesian LEO position.
    ///
    /// The arc is a circle of radius `leo_altitude` in the vertical x-z plane,
    /// centred on the cell centre at UE height. The lower half of the circle is
    /// folded onto the upper half so the satellite is never underground and
    /// passes overhead twice per revolution.
    pub fn leo_position(&self) -> Position3D {
        let theta = self.leo_arc_deg.to_radians();
        Position3D::new(
            self.leo_altitude * theta.cos(),
            0.0,
            self.ue.z + self.leo_altitude * theta.sin().abs(),
        )
    }
}

fn random_waypoint<R: Rng + ?Sized>(layout: &Layout, cfg: &MobilityConfig, rng: &mut R) -> Position3D {
    // sqrt(u) radius gives an area-uniform draw on the disc.
    let r = cfg.cell_radius * rng.gen::<f64>().sqrt();
    let phi = rng.gen_range(0.0..std::f64::consts::TAU);
    let z = rng.gen_range(layout.uav_min_altitude..=layout.uav_max_altitude);
    Position3D::new(r * phi.cos(), r * phi.sin(), z)
}

/// Advance all mobile platforms by one step.
pub fn advance_mobility<R: Rng + ?Sized>(
    world: &WorldState,
    layout: &Layout,
    cfg: &MobilityConfig,
    rng: &mut R,
) -> WorldState {
    let mut next = world.clone();
    let step = cfg.uav_step_length();
    let to_go = slant_distance(&world.uav, &world.uav_waypoint);
    if to_go <= step {
        next.uav = world.uav_waypoint;
        next.uav_waypoint = random_waypoint(layout, cfg, rng);
    } else {
        let f = step / to_go;
        next.uav = Position3D::new(
            world.uav.x + f * (world.uav_waypoint.x - world.uav.x),
            world.uav.y + f * (world.uav_waypoint.y - world.uav.y),
            world.uav.z + f * (world.uav_waypoint.z - world.uav.z),
        );
    }
    next.leo_arc_deg = (world.leo_arc_deg + cfg.leo_arc_step).rem_euclid(360.0);
    next.step_index = world.step_index + 1;
    next
}
