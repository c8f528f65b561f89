use rand::seq::IndexedRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::{round6, FrameElement, FrameGeometry, SdFrame, DEFAULT_POINTS};
use crate::geom::{resample, Point};
use crate::metrics::{MapClass, MapInstance};
use crate::osm::RangeSpec;
use crate::rng;
use crate::tags::TagSet;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneSpec {
    pub roads: usize,
    pub lanes_min: usize,
    pub lanes_max: usize,
    /// Carriageway width in meters, shared by all roads whatever their lane
    /// count, so the boundaries follow from the SD geometry alone.
    pub road_width: f64,
    pub oneway_prob: f64,
    pub signal_prob: f64,
    /// Standard deviation of the SD polyline noise, meters.
    pub noise: f64,
    /// Largest lateral offset of a road's reference point, meters.
    pub max_offset: f64,
    /// Largest heading of a road relative to the ego x axis, radians.
    pub max_angle: f64,
    /// Largest quadratic bend coefficient, 1/m.
    pub max_bend: f64,
    pub points: usize,
    pub range: RangeSpec,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            roads: 1,
            lanes_min: 1,
            lanes_max: 3,
            road_width: 10.5,
            oneway_prob: 0.5,
            signal_prob: 0.3,
            noise: 0.1,
            max_offset: 4.0,
            max_angle: 0.15,
            max_bend: 0.003,
            points: DEFAULT_POINTS,
            range: RangeSpec::NEAR,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.road_width.is_nan() || self.road_width <= 0.0 {
            return Err(Error::contract(format!(
                "road width must be positive, got {}",
                self.road_width
            )));
        }
        if self.roads == 0 || self.lanes_min == 0 || self.lanes_min > self.lanes_max {
            return Err(Error::contract(
                "scene needs at least one road and a non-empty lane-count range",
            ));
        }
        if self.points < 2 {
            return Err(Error::contract("polylines need at least 2 points"));
        }
        for (name, p) in [("oneway_prob", self.oneway_prob), ("signal_prob", self.signal_prob)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::contract(format!("{name} {p} outside [0, 1]")));
            }
        }
        if self.noise < 0.0 {
            return Err(Error::contract("noise must be non-negative"));
        }
        Ok(())
    }

    /// Worst-case number of ground-truth instances per scene.
    pub fn max_instances(&self) -> usize {
        self.roads * (2 * self.lanes_max + 1)
    }
}

/// Geometry and semantics of one synthetic road. The centerline is
/// `y = offset + tan(angle)·x + bend·x²` over the frame length.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoadParams {
    pub offset: f64,
    pub angle: f64,
    pub bend: f64,
    pub lanes: usize,
    pub oneway: bool,
    pub highway: String,
    pub name: String,
}

const HIGHWAYS: &[&str] = &["primary", "secondary", "tertiary", "residential"];
const NAMES: &[&str] = &["park", "oak", "mill", "station", "river", "market", "king", "lake"];
const SUFFIXES: &[&str] = &["street", "road", "avenue", "lane"];
const DENSE: usize = 200;

#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub frame: SdFrame,
    pub gt: Vec<MapInstance>,
}

/// Dense samples of the road reference curve and its unit left normals.
fn reference(road: &RoadParams, half_len: f64) -> (Vec<Point>, Vec<Point>) {
    let slope = road.angle.tan();
    let mut pts = Vec::with_capacity(DENSE);
    let mut normals = Vec::with_capacity(DENSE);
    for i in 0..DENSE {
        let x = -half_len + 2.0 * half_len * i as f64 / (DENSE - 1) as f64;
        let y = road.offset + slope * x + road.bend * x * x;
        let dy = slope + 2.0 * road.bend * x;
        let n = (1.0 + dy * dy).sqrt();
        pts.push([x, y]);
        normals.push([-dy / n, 1.0 / n]);
    }
    (pts, normals)
}

fn offset_curve(pts: &[Point], normals: &[Point], o: f64, points: usize, reverse: bool) -> Result<Vec<Point>> {
    let mut c: Vec<Point> = pts
        .iter()
        .zip(normals)
        .map(|(p, n)| [p[0] + o * n[0], p[1] + o * n[1]])
        .collect();
    if reverse {
        c.reverse();
    }
    resample(&c, points)
}

/// Ground truth of one road with `k` lanes of width `w = road_width/k`: two
/// boundaries at `±road_width/2`, `k−1` dividers at the interior lane edges
/// and one centerline per lane. Two-way roads run their left half of the
/// lanes (rounded down) against the reference direction.
pub fn road_ground_truth(road: &RoadParams, spec: &SceneSpec) -> Result<Vec<MapInstance>> {
    let (pts, normals) = reference(road, spec.range.length / 2.0);
    let k = road.lanes;
    let half = spec.road_width / 2.0;
    let w = spec.road_width / k as f64;
    let mut out = Vec::with_capacity(2 * k + 1);
    for i in 0..k {
        let o = -half + (i as f64 + 0.5) * w;
        let returning = !road.oneway && i >= k - k / 2;
        out.push(MapInstance::gt(
            MapClass::Centerline,
            offset_curve(&pts, &normals, o, spec.points, returning)?,
        ));
    }
    for o in [-half, half] {
        out.push(MapInstance::gt(
            MapClass::Boundary,
            offset_curve(&pts, &normals, o, spec.points, false)?,
        ));
    }
    for i in 1..k {
        let o = -half + i as f64 * w;
        out.push(MapInstance::gt(
            MapClass::Divider,
            offset_curve(&pts, &normals, o, spec.points, false)?,
        ));
    }
    Ok(out)
}

/// SD polyline of a road: the reference curve resampled, with independent
/// Gaussian noise on every point. The lane count never enters.
pub fn road_sd_polyline(road: &RoadParams, spec: &SceneSpec, noise_rng: &mut rng::Rng) -> Result<Vec<Point>> {
    let (pts, _) = reference(road, spec.range.length / 2.0);
    let mut line = resample(&pts, spec.points)?;
    if spec.noise > 0.0 {
        let n = Normal::new(0.0, spec.noise).expect("finite noise");
        for p in &mut line {
            p[0] += n.sample(noise_rng);
            p[1] += n.sample(noise_rng);
        }
    }
    Ok(line)
}

pub fn road_tags(road: &RoadParams) -> TagSet {
    let mut t = TagSet::new();
    t.insert("highway", road.highway.clone());
    t.insert("lanes", road.lanes.to_string());
    t.insert("oneway", if road.oneway { "yes" } else { "no" });
    t.insert("name", road.name.clone());
    t
}

/// Samples a scene. Geometry, semantics and noise come from separate seeded
/// streams, so the SD geometry of a seed does not depend on the lane count.
pub fn generate_scene(spec: &SceneSpec, seed: u64) -> Result<Scene> {
    spec.validate()?;
    let mut geo = rng::derive(seed, "scene-geometry");
    let mut sem = rng::derive(seed, "scene-semantics");
    let spacing = 2.0 * spec.max_offset + spec.road_width;
    let mut roads = Vec::with_capacity(spec.roads);
    for r in 0..spec.roads {
        let center = (r as f64 - (spec.roads - 1) as f64 / 2.0) * spacing;
        roads.push(RoadParams {
            offset: center + geo.random_range(-spec.max_offset..=spec.max_offset),
            angle: geo.random_range(-spec.max_angle..=spec.max_angle),
            bend: geo.random_range(-spec.max_bend..=spec.max_bend),
            lanes: sem.random_range(spec.lanes_min..=spec.lanes_max),
            oneway: sem.random_bool(spec.oneway_prob),
            highway: HIGHWAYS.choose(&mut sem).expect("non-empty").to_string(),
            name: format!(
                "{} {}",
                NAMES.choose(&mut sem).expect("non-empty"),
                SUFFIXES.choose(&mut sem).expect("non-empty")
            ),
        });
    }
    build_scene(&format!("scene-{seed}"), &roads, spec, seed)
}

/// Deterministic scene from explicit road parameters. `seed` drives the SD
/// noise and the optional signal points.
pub fn build_scene(id: &str, roads: &[RoadParams], spec: &SceneSpec, seed: u64) -> Result<Scene> {
    spec.validate()?;
    let mut noise = rng::derive(seed, "scene-noise");
    let mut extras = rng::derive(seed, "scene-signals");
    let mut elements = Vec::new();
    let mut gt = Vec::new();
    for (r, road) in roads.iter().enumerate() {
        let line = road_sd_polyline(road, spec, &mut noise)?;
        if extras.random_bool(spec.signal_prob) {
            let at = line[extras.random_range(1..line.len() - 1)];
            let mut tags = TagSet::new();
            tags.insert("highway", "traffic_signals");
            elements.push(FrameElement {
                id: 100 + r as i64,
                tags,
                geometry: FrameGeometry::Point(at),
            });
        }
        elements.push(FrameElement {
            id: 1 + r as i64,
            tags: road_tags(road),
            geometry: FrameGeometry::Polyline(line),
        });
        gt.extend(road_ground_truth(road, spec)?);
    }
    let mut frame = SdFrame {
        id: id.to_string(),
        range: spec.range,
        elements,
    };
    frame.canonicalize();
    Ok(Scene { frame, gt })
}

pub fn generate_scenes(spec: &SceneSpec, count: usize, seed: u64) -> Result<Vec<Scene>> {
    (0..count)
        .map(|i| generate_scene(spec, seed.wrapping_mul(1_000_003).wrapping_add(i as u64)))
        .collect()
}

#[derive(Serialize, Deserialize)]
struct WireScene {
    frame: serde_json::Value,
    gt: Vec<MapInstance>,
}

fn rounded(inst: &MapInstance) -> MapInstance {
    MapInstance {
        points: inst.points.iter().map(|p| [round6(p[0]), round6(p[1])]).collect(),
        ..inst.clone()
    }
}

impl Scene {
    pub fn to_json_line(&self) -> String {
        let frame: serde_json::Value = serde_json::from_str(&self.frame.to_json_line()).expect("frame json");
        serde_json::to_string(&WireScene {
            frame,
            gt: self.gt.iter().map(rounded).collect(),
        })
        .expect("scene serializes")
    }

    pub fn from_json_line(line: &str) -> Result<Self> {
        let w: WireScene = serde_json::from_str(line)?;
        let frame = SdFrame::from_json_line(&w.frame.to_string())?;
        Ok(Scene { frame, gt: w.gt })
    }
}

pub fn write_scenes_jsonl(scenes: &[Scene]) -> String {
    scenes.iter().map(|s| s.to_json_line() + "\n").collect()
}

pub fn read_scenes_jsonl(text: &str) -> Result<Vec<Scene>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| Scene::from_json_line(l).map_err(|e| Error::data(format!("scene line {}: {e}", i + 1))))
        .collect()
}
