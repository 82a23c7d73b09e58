//! OSM ingestion and the local metric frame.
//!
//! Maps cover at most a few kilometers, so geodetic coordinates are
//! projected onto an equirectangular tangent plane anchored at the centroid
//! of the retained nodes. Curvature error over that extent is below a
//! centimeter, far under the localization error floor.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use thiserror::Error;

/// WGS-84 equatorial radius.
pub const EQUATORIAL_RADIUS_M: f64 = 6_378_137.0;

/// Latitude separation beyond which the tangent-plane approximation is
/// refused.
pub const MAX_LAT_EXTENT_DEG: f64 = 1.0;

#[derive(Debug, Error)]
pub enum MapError {
    #[error("osm xml parse error: {0}")]
    Xml(#[from] roxmltree::Error),
    #[error("malformed osm document: {0}")]
    Malformed(String),
    #[error("node {node}: {what} {value} outside valid range")]
    InvalidCoordinate {
        node: i64,
        what: &'static str,
        value: f64,
    },
    #[error("way {way} references missing node {node}")]
    MissingNode { way: i64, node: i64 },
    #[error("way {way} has fewer than 2 nodes")]
    ShortWay { way: i64 },
    #[error("way {way} repeats node {node} consecutively (zero-length segment)")]
    ZeroLengthSegment { way: i64, node: i64 },
    #[error("no ways match the highway filter")]
    EmptyMap,
    #[error(
        "latitude {lat}\u{b0} is more than {MAX_LAT_EXTENT_DEG}\u{b0} from the frame origin \
         {origin_lat}\u{b0}"
    )]
    OutOfExtent { lat: f64, origin_lat: f64 },
}

/// WGS-84 position in degrees.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeoPoint {
    pub lat: f64,
    pub lon: f64,
}

/// Position in meters east/north of the local frame origin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MapPoint {
    pub e: f64,
    pub n: f64,
}

impl MapPoint {
    pub fn distance_to(self, other: MapPoint) -> f64 {
        (self.e - other.e).hypot(self.n - other.n)
    }
}

/// Directed edge segment between two consecutive way nodes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub a: MapPoint,
    pub b: MapPoint,
}

impl Segment {
    pub fn length(&self) -> f64 {
        self.a.distance_to(self.b)
    }

    /// Squared Euclidean distance from `p` to the closest point of the
    /// segment (projection parameter clamped to the endpoints).
    pub fn distance_sq_to(&self, p: MapPoint) -> f64 {
        let dx = self.b.e - self.a.e;
        let dy = self.b.n - self.a.n;
        let len_sq = dx * dx + dy * dy;
        let t = if len_sq > 0.0 {
            (((p.e - self.a.e) * dx + (p.n - self.a.n) * dy) / len_sq).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let cx = self.a.e + t * dx - p.e;
        let cy = self.a.n + t * dy - p.n;
        cx * cx + cy * cy
    }

    pub fn distance_to(&self, p: MapPoint) -> f64 {
        self.distance_sq_to(p).sqrt()
    }

    /// Point at arc-length parameter `t` in [0, 1].
    pub fn point_at(&self, t: f64) -> MapPoint {
        MapPoint {
            e: self.a.e + t * (self.b.e - self.a.e),
            n: self.a.n + t * (self.b.n - self.a.n),
        }
    }

    /// Heading of the a->b direction, radians in (-pi, pi].
    pub fn heading(&self) -> f64 {
        (self.b.n - self.a.n).atan2(self.b.e - self.a.e)
    }
}

/// One retained OSM way: an ordered polyline of node ids plus its highway
/// class.
#[derive(Debug, Clone)]
pub struct Way {
    pub id: i64,
    pub highway: String,
    pub nodes: Vec<i64>,
}

/// Road network in the local metric frame.
///
/// Immutable after construction; safe to share across threads.
#[derive(Debug, Clone)]
pub struct RoadGraph {
    nodes: BTreeMap<i64, MapPoint>,
    ways: Vec<Way>,
    segments: Vec<Segment>,
    origin: GeoPoint,
}

impl RoadGraph {
    /// Builds a graph directly from metric-frame nodes and ways, bypassing
    /// OSM ingestion. The frame origin is recorded as (0, 0) geodetic.
    /// Subject to the same structural validation as parsing.
    pub fn from_ways(
        nodes: impl IntoIterator<Item = (i64, MapPoint)>,
        ways: Vec<Way>,
    ) -> Result<Self, MapError> {
        let nodes: BTreeMap<i64, MapPoint> = nodes.into_iter().collect();
        if ways.is_empty() {
            return Err(MapError::EmptyMap);
        }
        let mut segments = Vec::new();
        for way in &ways {
            if way.nodes.len() < 2 {
                return Err(MapError::ShortWay { way: way.id });
            }
            for pair in way.nodes.windows(2) {
                let a = *nodes.get(&pair[0]).ok_or(MapError::MissingNode {
                    way: way.id,
                    node: pair[0],
                })?;
                let b = *nodes.get(&pair[1]).ok_or(MapError::MissingNode {
                    way: way.id,
                    node: pair[1],
                })?;
                let seg = Segment { a, b };
                if seg.length() == 0.0 {
                    return Err(MapError::ZeroLengthSegment {
                        way: way.id,
                        node: pair[0],
                    });
                }
                segments.push(seg);
            }
        }
        Ok(RoadGraph {
            nodes,
            ways,
            segments,
            origin: GeoPoint { lat: 0.0, lon: 0.0 },
        })
    }

    pub fn nodes(&self) -> &BTreeMap<i64, MapPoint> {
        &self.nodes
    }

    pub fn ways(&self) -> &[Way] {
        &self.ways
    }

    pub fn way_by_id(&self, id: i64) -> Option<&Way> {
        self.ways.iter().find(|w| w.id == id)
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn origin(&self) -> GeoPoint {
        self.origin
    }

    /// Axis-aligned bounds over all segment endpoints.
    pub fn bounds(&self) -> (MapPoint, MapPoint) {
        let mut min = MapPoint {
            e: f64::INFINITY,
            n: f64::INFINITY,
        };
        let mut max = MapPoint {
            e: f64::NEG_INFINITY,
            n: f64::NEG_INFINITY,
        };
        for s in &self.segments {
            for p in [s.a, s.b] {
                min.e = min.e.min(p.e);
                min.n = min.n.min(p.n);
                max.e = max.e.max(p.e);
                max.n = max.n.max(p.n);
            }
        }
        (min, max)
    }

    pub fn total_length(&self) -> f64 {
        self.segments.iter().map(Segment::length).sum()
    }
}

/// Highway classes retained when no explicit filter is given. Covers the
/// drivable classes from motorways down to farm tracks; footways, paths,
/// and cycleways are excluded.
pub fn default_highway_filter() -> HashSet<String> {
    [
        "motorway",
        "trunk",
        "primary",
        "secondary",
        "tertiary",
        "unclassified",
        "residential",
        "service",
        "track",
    ]
    .into_iter()
    .map(str::to_owned)
    .collect()
}

/// Projects a geodetic point into the tangent frame at `origin`.
pub fn geo_to_map(p: GeoPoint, origin: GeoPoint) -> Result<MapPoint, MapError> {
    if (p.lat - origin.lat).abs() >= MAX_LAT_EXTENT_DEG {
        return Err(MapError::OutOfExtent {
            lat: p.lat,
            origin_lat: origin.lat,
        });
    }
    let e = EQUATORIAL_RADIUS_M * origin.lat.to_radians().cos() * (p.lon - origin.lon).to_radians();
    let n = EQUATORIAL_RADIUS_M * (p.lat - origin.lat).to_radians();
    Ok(MapPoint { e, n })
}

/// Exact algebraic inverse of [`geo_to_map`].
pub fn map_to_geo(p: MapPoint, origin: GeoPoint) -> GeoPoint {
    let lat = origin.lat + (p.n / EQUATORIAL_RADIUS_M).to_degrees();
    let lon =
        origin.lon + (p.e / (EQUATORIAL_RADIUS_M * origin.lat.to_radians().cos())).to_degrees();
    GeoPoint { lat, lon }
}

fn attr<'a>(node: roxmltree::Node<'a, '_>, name: &str) -> Result<&'a str, MapError> {
    node.attribute(name).ok_or_else(|| {
        MapError::Malformed(format!(
            "<{}> element missing required attribute '{name}'",
            node.tag_name().name()
        ))
    })
}

fn num_attr<T: std::str::FromStr>(node: roxmltree::Node, name: &str) -> Result<T, MapError> {
    let raw = attr(node, name)?;
    raw.parse().map_err(|_| {
        MapError::Malformed(format!(
            "<{}> attribute '{name}' is not numeric: '{raw}'",
            node.tag_name().name()
        ))
    })
}

/// Parses an OSM XML document, keeping the ways whose `highway` tag value
/// is in `highway_filter`, and builds the road graph in a tangent frame
/// anchored at the centroid of the retained nodes.
pub fn parse_osm(xml: &str, highway_filter: &HashSet<String>) -> Result<RoadGraph, MapError> {
    let doc = roxmltree::Document::parse(xml)?;
    let root = doc.root_element();

    let mut geo_nodes: HashMap<i64, GeoPoint> = HashMap::new();
    let mut raw_ways: Vec<Way> = Vec::new();

    for el in root.children().filter(|n| n.is_element()) {
        match el.tag_name().name() {
            "node" => {
                let id: i64 = num_attr(el, "id")?;
                let lat: f64 = num_attr(el, "lat")?;
                let lon: f64 = num_attr(el, "lon")?;
                if !(-90.0..=90.0).contains(&lat) {
                    return Err(MapError::InvalidCoordinate {
                        node: id,
                        what: "latitude",
                        value: lat,
                    });
                }
                if !(-180.0..=180.0).contains(&lon) {
                    return Err(MapError::InvalidCoordinate {
                        node: id,
                        what: "longitude",
                        value: lon,
                    });
                }
                geo_nodes.insert(id, GeoPoint { lat, lon });
            }
            "way" => {
                let id: i64 = num_attr(el, "id")?;
                let mut refs = Vec::new();
                let mut highway = None;
                for child in el.children().filter(|n| n.is_element()) {
                    match child.tag_name().name() {
                        "nd" => refs.push(num_attr::<i64>(child, "ref")?),
                        "tag" => {
                            if attr(child, "k")? == "highway" {
                                highway = Some(attr(child, "v")?.to_owned());
                            }
                        }
                        _ => {}
                    }
                }
                if let Some(highway) = highway {
                    if highway_filter.contains(&highway) {
                        raw_ways.push(Way {
                            id,
                            highway,
                            nodes: refs,
                        });
                    }
                }
            }
            _ => {}
        }
    }

    if raw_ways.is_empty() {
        return Err(MapError::EmptyMap);
    }

    // Validate structure and gather the retained node set. Missing
    // referents and degenerate ways are hard errors: silently dropping
    // them would corrupt the distance field with no visible symptom.
    let mut retained: BTreeSet<i64> = BTreeSet::new();
    for way in &raw_ways {
        if way.nodes.len() < 2 {
            return Err(MapError::ShortWay { way: way.id });
        }
        for pair in way.nodes.windows(2) {
            if pair[0] == pair[1] {
                return Err(MapError::ZeroLengthSegment {
                    way: way.id,
                    node: pair[0],
                });
            }
        }
        for &nid in &way.nodes {
            if !geo_nodes.contains_key(&nid) {
                return Err(MapError::MissingNode {
                    way: way.id,
                    node: nid,
                });
            }
            retained.insert(nid);
        }
    }

    let inv = 1.0 / retained.len() as f64;
    let origin = GeoPoint {
        lat: retained.iter().map(|id| geo_nodes[id].lat).sum::<f64>() * inv,
        lon: retained.iter().map(|id| geo_nodes[id].lon).sum::<f64>() * inv,
    };

    let mut nodes = BTreeMap::new();
    for &id in &retained {
        nodes.insert(id, geo_to_map(geo_nodes[&id], origin)?);
    }

    let mut segments = Vec::new();
    for way in &raw_ways {
        for pair in way.nodes.windows(2) {
            let seg = Segment {
                a: nodes[&pair[0]],
                b: nodes[&pair[1]],
            };
            // Distinct geodetic nodes can still collapse under projection
            // if they are pathologically close; the graph invariant is
            // positive segment length, so reject that too.
            if seg.length() == 0.0 {
                return Err(MapError::ZeroLengthSegment {
                    way: way.id,
                    node: pair[0],
                });
            }
            segments.push(seg);
        }
    }

    Ok(RoadGraph {
        nodes,
        ways: raw_ways,
        segments,
        origin,
    })
}
