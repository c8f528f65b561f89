//! Frame-local SD maps and their line-delimited JSON form.

use std::collections::{BTreeSet, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{resample, Point};
use crate::osm::{EgoPose, ElementKind, OsmElement, OsmGeometry, RangeSpec};
use crate::tags::TagSet;

pub const DEFAULT_POINTS: usize = 10;

#[derive(Clone, Debug, PartialEq)]
pub enum FrameGeometry {
    Point(Point),
    Polyline(Vec<Point>),
    /// Consecutive member pairs, referring to element ids in the same frame.
    Relation(Vec<(i64, i64)>),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum FrameKind {
    Point,
    Polyline,
    Relation,
}

impl FrameKind {
    pub fn as_str(self) -> &'static str {
        match self {
            FrameKind::Point => "point",
            FrameKind::Polyline => "polyline",
            FrameKind::Relation => "relation",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FrameElement {
    pub id: i64,
    pub tags: TagSet,
    pub geometry: FrameGeometry,
}

impl FrameElement {
    pub fn kind(&self) -> FrameKind {
        match self.geometry {
            FrameGeometry::Point(_) => FrameKind::Point,
            FrameGeometry::Polyline(_) => FrameKind::Polyline,
            FrameGeometry::Relation(_) => FrameKind::Relation,
        }
    }

    /// Geometric points of a point or polyline element; empty for relations.
    pub fn points(&self) -> &[Point] {
        match &self.geometry {
            FrameGeometry::Point(p) => std::slice::from_ref(p),
            FrameGeometry::Polyline(ps) => ps,
            FrameGeometry::Relation(_) => &[],
        }
    }

    pub fn points_mut(&mut self) -> &mut [Point] {
        match &mut self.geometry {
            FrameGeometry::Point(p) => std::slice::from_mut(p),
            FrameGeometry::Polyline(ps) => ps,
            FrameGeometry::Relation(_) => &mut [],
        }
    }

    /// Distinct element ids a relation refers to.
    pub fn member_ids(&self) -> BTreeSet<i64> {
        match &self.geometry {
            FrameGeometry::Relation(pairs) => pairs.iter().flat_map(|&(a, b)| [a, b]).collect(),
            _ => BTreeSet::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SdFrame {
    pub id: String,
    pub range: RangeSpec,
    pub elements: Vec<FrameElement>,
}

impl SdFrame {
    /// Checks the structural invariants: unique ids, every polyline with
    /// exactly `points` points, and relations referring only to geometric
    /// elements of this frame.
    pub fn validate(&self, points: usize) -> Result<()> {
        let mut ids = HashSet::new();
        for e in &self.elements {
            if !ids.insert(e.id) {
                return Err(Error::data(format!("frame {} repeats element id {}", self.id, e.id)));
            }
        }
        let geometric: HashSet<i64> = self
            .elements
            .iter()
            .filter(|e| e.kind() != FrameKind::Relation)
            .map(|e| e.id)
            .collect();
        for e in &self.elements {
            match &e.geometry {
                FrameGeometry::Polyline(ps) if ps.len() != points => {
                    return Err(Error::data(format!(
                        "polyline {} has {} points, expected {points}",
                        e.id,
                        ps.len()
                    )));
                }
                FrameGeometry::Relation(pairs) => {
                    if pairs.is_empty() {
                        return Err(Error::data(format!("relation {} has no members", e.id)));
                    }
                    if let Some(m) = e.member_ids().into_iter().find(|m| !geometric.contains(m)) {
                        return Err(Error::data(format!("relation {} refers to absent element {m}", e.id)));
                    }
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// Sorts elements by kind (points, polylines, relations), then id.
    pub fn canonicalize(&mut self) {
        self.elements.sort_by_key(|e| (e.kind(), e.id));
    }

    pub fn count(&self, kind: FrameKind) -> usize {
        self.elements.iter().filter(|e| e.kind() == kind).count()
    }

    /// Drops relations with a member that is no longer in the frame.
    pub fn prune_relations(&mut self) {
        let present: HashSet<i64> = self
            .elements
            .iter()
            .filter(|e| e.kind() != FrameKind::Relation)
            .map(|e| e.id)
            .collect();
        self.elements
            .retain(|e| e.member_ids().iter().all(|m| present.contains(m)));
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(&WireFrame::from(self)).expect("frame serialization cannot fail")
    }

    pub fn from_json_line(line: &str) -> Result<Self> {
        let wire: WireFrame = serde_json::from_str(line)?;
        wire.try_into()
    }
}

/// Rounds to 6 decimals and folds negative zero into zero.
pub fn round6(v: f64) -> f64 {
    let r = (v * 1e6).round() / 1e6;
    if r == 0.0 {
        0.0
    } else {
        r
    }
}

#[derive(Serialize, Deserialize)]
struct WireElement {
    id: i64,
    kind: String,
    tags: TagSet,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    xy: Option<Vec<[f64; 2]>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    members: Option<Vec<[i64; 2]>>,
}

#[derive(Serialize, Deserialize)]
struct WireFrame {
    id: String,
    range: [f64; 2],
    elements: Vec<WireElement>,
}

impl From<&SdFrame> for WireFrame {
    fn from(f: &SdFrame) -> Self {
        let round = |p: &Point| [round6(p[0]), round6(p[1])];
        WireFrame {
            id: f.id.clone(),
            range: [f.range.length, f.range.width],
            elements: f
                .elements
                .iter()
                .map(|e| {
                    let (xy, members) = match &e.geometry {
                        FrameGeometry::Point(p) => (Some(vec![round(p)]), None),
                        FrameGeometry::Polyline(ps) => (Some(ps.iter().map(round).collect()), None),
                        FrameGeometry::Relation(pairs) => (None, Some(pairs.iter().map(|&(a, b)| [a, b]).collect())),
                    };
                    WireElement {
                        id: e.id,
                        kind: e.kind().as_str().to_string(),
                        tags: e.tags.clone(),
                        xy,
                        members,
                    }
                })
                .collect(),
        }
    }
}

impl TryFrom<WireFrame> for SdFrame {
    type Error = Error;

    fn try_from(w: WireFrame) -> Result<Self> {
        let range = RangeSpec::new(w.range[0], w.range[1]).map_err(|e| Error::data(e.to_string()))?;
        let elements = w
            .elements
            .into_iter()
            .map(|e| {
                let geometry = match (e.kind.as_str(), e.xy, e.members) {
                    ("point", Some(xy), None) if xy.len() == 1 => FrameGeometry::Point(xy[0]),
                    ("polyline", Some(xy), None) if xy.len() >= 2 => FrameGeometry::Polyline(xy),
                    ("relation", None, Some(m)) => {
                        FrameGeometry::Relation(m.into_iter().map(|[a, b]| (a, b)).collect())
                    }
                    (kind, _, _) => {
                        return Err(Error::data(format!("element {} has malformed {kind:?} geometry", e.id)))
                    }
                };
                Ok(FrameElement {
                    id: e.id,
                    tags: e.tags,
                    geometry,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(SdFrame {
            id: w.id,
            range,
            elements,
        })
    }
}

pub fn write_frames_jsonl(frames: &[SdFrame]) -> String {
    let mut out = String::new();
    for f in frames {
        out.push_str(&f.to_json_line());
        out.push('\n');
    }
    out
}

pub fn read_frames_jsonl(text: &str) -> Result<Vec<SdFrame>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| SdFrame::from_json_line(l).map_err(|e| Error::data(format!("line {}: {e}", i + 1))))
        .collect()
}

/// Projects parsed OSM elements into the ego frame.
///
/// Ways become polylines and tagged nodes become points; untagged nodes only
/// become points when a surviving relation needs them. An element is kept
/// whole when its (resampled) geometry touches the rectangle. Relations are
/// kept only when every member survived, encoded as consecutive member pairs.
pub fn project_to_frame(
    elements: &[OsmElement],
    ego: &EgoPose,
    range: RangeSpec,
    points: usize,
    frame_id: impl Into<String>,
) -> Result<SdFrame> {
    if points < 2 {
        return Err(Error::contract(format!("cannot resample to {points} points")));
    }
    let rect = range.rect();
    let coords: HashMap<i64, (f64, f64)> = elements
        .iter()
        .filter_map(|e| match e.geometry {
            OsmGeometry::Node { lon, lat } => Some((e.id, (lon, lat))),
            _ => None,
        })
        .collect();
    let relation_members: HashSet<(ElementKind, i64)> = elements
        .iter()
        .filter_map(|e| match &e.geometry {
            OsmGeometry::Relation { members } => Some(members.iter().map(|m| (m.kind, m.id))),
            _ => None,
        })
        .flatten()
        .collect();

    let mut kept: Vec<FrameElement> = Vec::new();
    let mut survived: HashSet<(ElementKind, i64)> = HashSet::new();
    for e in elements {
        match &e.geometry {
            OsmGeometry::Node { lon, lat } => {
                let wanted = !e.tags.is_empty() || relation_members.contains(&(ElementKind::Node, e.id));
                let p = ego.project(*lon, *lat);
                if wanted && rect.contains(p) {
                    survived.insert((ElementKind::Node, e.id));
                    kept.push(FrameElement {
                        id: e.id,
                        tags: e.tags.clone(),
                        geometry: FrameGeometry::Point(p),
                    });
                }
            }
            OsmGeometry::Way { nodes } => {
                let raw = nodes
                    .iter()
                    .map(|n| {
                        coords
                            .get(n)
                            .map(|&(lon, lat)| ego.project(lon, lat))
                            .ok_or(Error::DanglingReference { way: e.id, node: *n })
                    })
                    .collect::<Result<Vec<_>>>()?;
                let line = resample(&raw, points)?;
                if rect.intersects_polyline(&line) {
                    survived.insert((ElementKind::Way, e.id));
                    kept.push(FrameElement {
                        id: e.id,
                        tags: e.tags.clone(),
                        geometry: FrameGeometry::Polyline(line),
                    });
                }
            }
            OsmGeometry::Relation { .. } => {}
        }
    }

    let mut ids = HashSet::new();
    for e in &kept {
        if !ids.insert(e.id) {
            return Err(Error::data(format!(
                "node and way share id {} inside one frame; frame element ids must be unique",
                e.id
            )));
        }
    }

    for e in elements {
        if let OsmGeometry::Relation { members } = &e.geometry {
            if !members.iter().all(|m| survived.contains(&(m.kind, m.id))) {
                continue;
            }
            if !ids.insert(e.id) {
                return Err(Error::data(format!(
                    "relation id {} collides with another element",
                    e.id
                )));
            }
            let pairs = if members.len() == 1 {
                vec![(members[0].id, members[0].id)]
            } else {
                members.windows(2).map(|w| (w[0].id, w[1].id)).collect()
            };
            kept.push(FrameElement {
                id: e.id,
                tags: e.tags.clone(),
                geometry: FrameGeometry::Relation(pairs),
            });
        }
    }

    let mut frame = SdFrame {
        id: frame_id.into(),
        range,
        elements: kept,
    };
    frame.canonicalize();
    Ok(frame)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::osm::parse_osm_xml;

    fn tags(pairs: &[(&str, &str)]) -> TagSet {
        TagSet::from_pairs(pairs.iter().copied()).unwrap()
    }

    #[test]
    fn json_round_trip_and_rounding() {
        let f = SdFrame {
            id: "f".into(),
            range: RangeSpec::NEAR,
            elements: vec![
                FrameElement {
                    id: 1,
                    tags: tags(&[("highway", "stop")]),
                    geometry: FrameGeometry::Point([1.234_567_89, -0.000_000_1]),
                },
                FrameElement {
                    id: 2,
                    tags: TagSet::new(),
                    geometry: FrameGeometry::Relation(vec![(1, 1)]),
                },
            ],
        };
        let line = f.to_json_line();
        assert_eq!(
            line,
            r#"{"id":"f","range":[60.0,30.0],"elements":[{"id":1,"kind":"point","tags":[["highway","stop"]],"xy":[[1.234568,0.0]]},{"id":2,"kind":"relation","tags":[],"members":[[1,1]]}]}"#
        );
        let back = SdFrame::from_json_line(&line).unwrap();
        assert_eq!(back.to_json_line(), line);
    }

    #[test]
    fn validate_catches_broken_frames() {
        let mut f = SdFrame {
            id: "f".into(),
            range: RangeSpec::NEAR,
            elements: vec![FrameElement {
                id: 7,
                tags: TagSet::new(),
                geometry: FrameGeometry::Relation(vec![(3, 4)]),
            }],
        };
        assert!(f.validate(10).is_err());
        f.prune_relations();
        assert!(f.elements.is_empty());
        f.validate(10).unwrap();
    }

    #[test]
    fn extraction_keeps_crossing_ways_whole() {
        // Ego at (0, 0) heading east, 60 x 30 m. 0.001 deg is about 111 m.
        let doc = r#"<osm>
  <node id="1" lat="0" lon="-0.001"/>
  <node id="2" lat="0" lon="0.001"/>
  <node id="3" lat="0.001" lon="-0.001"/>
  <node id="4" lat="0.001" lon="0.001"/>
  <node id="5" lat="0" lon="0"><tag k="highway" v="traffic_signals"/></node>
  <node id="6" lat="0.00001" lon="0"/>
  <way id="10"><nd ref="1"/><nd ref="2"/><tag k="highway" v="primary"/></way>
  <way id="11"><nd ref="3"/><nd ref="4"/></way>
  <relation id="20"><member type="way" ref="10" role=""/><member type="node" ref="5" role=""/></relation>
  <relation id="21"><member type="way" ref="11" role=""/></relation>
</osm>"#;
        let els = parse_osm_xml(doc.as_bytes()).unwrap();
        let ego = EgoPose::new(0.0, 0.0, 0.0).unwrap();
        let f = project_to_frame(&els, &ego, RangeSpec::NEAR, 10, "t").unwrap();
        let ids: Vec<i64> = f.elements.iter().map(|e| e.id).collect();
        // Untagged node 6 is not a relation member, way 11 is 111 m north.
        assert_eq!(ids, vec![5, 10, 20]);
        assert_eq!(f.elements[0].points(), &[[0.0, 0.0]]);
        let line = f.elements[1].points();
        assert_eq!(line.len(), 10);
        assert!((line[0][0] + 111.194_926_644_558_74).abs() < 1e-9);
        assert_eq!(f.elements[2].geometry, FrameGeometry::Relation(vec![(10, 5)]));
        f.validate(10).unwrap();
    }
}
