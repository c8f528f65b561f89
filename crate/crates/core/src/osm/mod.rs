//! OpenStreetMap elements and the local projection into ego-centric meters.

mod xml;

pub use xml::{parse_osm_xml, write_osm_xml};

use crate::error::{Error, Result};
use crate::geom::{rotate, CenteredRect, Point};
use crate::tags::TagSet;

pub const EARTH_RADIUS_M: f64 = 6_371_000.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ElementKind {
    Node,
    Way,
    Relation,
}

impl ElementKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ElementKind::Node => "node",
            ElementKind::Way => "way",
            ElementKind::Relation => "relation",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "node" => Some(ElementKind::Node),
            "way" => Some(ElementKind::Way),
            "relation" => Some(ElementKind::Relation),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Member {
    pub kind: ElementKind,
    pub id: i64,
    pub role: String,
}

#[derive(Clone, Debug, PartialEq)]
pub enum OsmGeometry {
    Node { lon: f64, lat: f64 },
    Way { nodes: Vec<i64> },
    Relation { members: Vec<Member> },
}

#[derive(Clone, Debug, PartialEq)]
pub struct OsmElement {
    pub id: i64,
    pub tags: TagSet,
    pub geometry: OsmGeometry,
}

impl OsmElement {
    pub fn kind(&self) -> ElementKind {
        match self.geometry {
            OsmGeometry::Node { .. } => ElementKind::Node,
            OsmGeometry::Way { .. } => ElementKind::Way,
            OsmGeometry::Relation { .. } => ElementKind::Relation,
        }
    }
}

/// Ego position and heading (radians, counter-clockwise from east).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EgoPose {
    pub lon: f64,
    pub lat: f64,
    pub heading: f64,
}

impl EgoPose {
    pub fn new(lon: f64, lat: f64, heading: f64) -> Result<Self> {
        let pi = std::f64::consts::PI;
        if !(heading > -pi && heading <= pi) {
            return Err(Error::contract(format!("heading {heading} outside (-pi, pi]")));
        }
        if !(-90.0..=90.0).contains(&lat) || !lon.is_finite() {
            return Err(Error::contract(format!("invalid ego position {lon},{lat}")));
        }
        Ok(EgoPose { lon, lat, heading })
    }

    /// Local equirectangular projection about the ego origin, rotated so the
    /// heading points along +x.
    pub fn project(&self, lon: f64, lat: f64) -> Point {
        let x = EARTH_RADIUS_M * (lon - self.lon).to_radians() * self.lat.to_radians().cos();
        let y = EARTH_RADIUS_M * (lat - self.lat).to_radians();
        rotate([x, y], -self.heading)
    }

    pub fn unproject(&self, p: Point) -> (f64, f64) {
        let [x, y] = rotate(p, self.heading);
        let lon = self.lon + (x / (EARTH_RADIUS_M * self.lat.to_radians().cos())).to_degrees();
        let lat = self.lat + (y / EARTH_RADIUS_M).to_degrees();
        (lon, lat)
    }
}

/// Ego-centric rectangle: `length` along x (driving direction), `width` along y.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RangeSpec {
    pub length: f64,
    pub width: f64,
}

impl RangeSpec {
    pub const NEAR: RangeSpec = RangeSpec {
        length: 60.0,
        width: 30.0,
    };
    pub const FAR: RangeSpec = RangeSpec {
        length: 120.0,
        width: 60.0,
    };

    pub fn new(length: f64, width: f64) -> Result<Self> {
        if !(length > 0.0 && width > 0.0 && length.is_finite() && width.is_finite()) {
            return Err(Error::contract(format!("range must be positive, got {length}x{width}")));
        }
        Ok(RangeSpec { length, width })
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "near" => Some(Self::NEAR),
            "far" => Some(Self::FAR),
            _ => None,
        }
    }

    pub fn rect(&self) -> CenteredRect {
        CenteredRect {
            hx: self.length / 2.0,
            hy: self.width / 2.0,
        }
    }
}
