//! Vectorized HD map: lanes, crosswalks, stop lines and drivable area.
//!
//! Coordinates are meters in a local planar frame attached to one
//! intersection. The map carries no global datum.

use serde::{Deserialize, Serialize};

use crate::geometry::{self, point_in_polygon, polygon_is_simple, Segment, Vec2, EPS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Lane {
    pub lane_id: String,
    pub centerline: Vec<Vec2>,
    pub width: f64,
    #[serde(default)]
    pub successor_ids: Vec<String>,
    #[serde(default)]
    pub signal_group_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StopLine {
    /// Directed so that approaching traffic is on the right (negative side).
    pub segment: Segment,
    pub signal_group_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HdMap {
    pub map_id: String,
    pub lanes: Vec<Lane>,
    pub crosswalks: Vec<Vec<Vec2>>,
    pub stop_lines: Vec<StopLine>,
    /// Union of simple polygons.
    pub drivable_area: Vec<Vec<Vec2>>,
}

#[derive(Debug, thiserror::Error)]
pub enum MapError {
    #[error("map parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("map invariant violated at {field}: {reason}")]
    Invariant { field: String, reason: String },
}

fn invariant(field: impl Into<String>, reason: impl Into<String>) -> MapError {
    MapError::Invariant {
        field: field.into(),
        reason: reason.into(),
    }
}

fn check_polyline(field: &str, line: &[Vec2]) -> Result<(), MapError> {
    if line.len() < 2 {
        return Err(invariant(field, "polyline needs at least 2 points"));
    }
    if line.iter().any(|p| !p.is_finite()) {
        return Err(invariant(field, "non-finite coordinate"));
    }
    if line.windows(2).any(|w| w[0].dist(w[1]) <= EPS) {
        return Err(invariant(field, "zero-length segment"));
    }
    Ok(())
}

fn check_polygon(field: &str, poly: &[Vec2]) -> Result<(), MapError> {
    if poly.len() < 3 {
        return Err(invariant(field, "polygon needs at least 3 vertices"));
    }
    if poly.iter().any(|p| !p.is_finite()) {
        return Err(invariant(field, "non-finite coordinate"));
    }
    if !polygon_is_simple(poly) {
        return Err(invariant(field, "polygon is not simple"));
    }
    Ok(())
}

impl HdMap {
    pub fn from_json(bytes: &[u8]) -> Result<Self, MapError> {
        let map: HdMap = serde_json::from_slice(bytes)?;
        map.check()?;
        Ok(map)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("map serializes")
    }

    /// Checks structural invariants.
    pub fn check(&self) -> Result<(), MapError> {
        for lane in &self.lanes {
            let field = format!("lanes[{}].centerline", lane.lane_id);
            check_polyline(&field, &lane.centerline)?;
            if !(lane.width > 0.0 && lane.width.is_finite()) {
                return Err(invariant(format!("lanes[{}].width", lane.lane_id), "must be > 0"));
            }
        }
        let mut ids: Vec<&str> = self.lanes.iter().map(|l| l.lane_id.as_str()).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(invariant("lanes", "duplicate lane_id"));
        }
        for (i, cw) in self.crosswalks.iter().enumerate() {
            check_polygon(&format!("crosswalks[{i}]"), cw)?;
        }
        for (i, sl) in self.stop_lines.iter().enumerate() {
            check_polyline(&format!("stop_lines[{i}]"), &[sl.segment.a, sl.segment.b])?;
        }
        if self.drivable_area.is_empty() {
            return Err(invariant("drivable_area", "at least one polygon required"));
        }
        for (i, poly) in self.drivable_area.iter().enumerate() {
            check_polygon(&format!("drivable_area[{i}]"), poly)?;
        }
        Ok(())
    }

    pub fn lane(&self, id: &str) -> Option<&Lane> {
        self.lanes.iter().find(|l| l.lane_id == id)
    }

    /// Inside the union of drivable polygons; boundary counts as inside.
    pub fn point_in_drivable(&self, p: Vec2) -> bool {
        self.drivable_area.iter().any(|poly| point_in_polygon(poly, p))
    }

    /// Axis-aligned bounds over all map geometry.
    pub fn bounding_box(&self) -> (Vec2, Vec2) {
        let pts = self
            .lanes
            .iter()
            .flat_map(|l| l.centerline.iter().copied())
            .chain(self.crosswalks.iter().flatten().copied())
            .chain(self.drivable_area.iter().flatten().copied())
            .chain(self.stop_lines.iter().flat_map(|s| [s.segment.a, s.segment.b]));
        geometry::bounds(pts).unwrap_or((Vec2::ZERO, Vec2::ZERO))
    }

    /// Junction polygon: convex hull of all stop-line endpoints.
    pub fn junction_polygon(&self) -> Vec<Vec2> {
        let pts: Vec<Vec2> = self
            .stop_lines
            .iter()
            .flat_map(|s| [s.segment.a, s.segment.b])
            .collect();
        geometry::convex_hull(&pts)
    }

    /// Smallest distance from `p` to any lane centerline.
    pub fn nearest_lane_offset(&self, p: Vec2) -> Option<(f64, &Lane)> {
        self.lanes
            .iter()
            .map(|l| (geometry::project_onto_polyline(&l.centerline, p).distance(), l))
            .min_by(|a, b| a.0.total_cmp(&b.0))
    }

    /// Applies a rigid transform (rotation about the origin then translation).
    pub fn transformed(&self, rotation: f64, translation: Vec2) -> HdMap {
        let tf = |p: Vec2| p.rotate(rotation) + translation;
        HdMap {
            map_id: self.map_id.clone(),
            lanes: self
                .lanes
                .iter()
                .map(|l| Lane {
                    centerline: l.centerline.iter().map(|&p| tf(p)).collect(),
                    ..l.clone()
                })
                .collect(),
            crosswalks: self
                .crosswalks
                .iter()
                .map(|c| c.iter().map(|&p| tf(p)).collect())
                .collect(),
            stop_lines: self
                .stop_lines
                .iter()
                .map(|s| StopLine {
                    segment: Segment::new(tf(s.segment.a), tf(s.segment.b)),
                    signal_group_id: s.signal_group_id.clone(),
                })
                .collect(),
            drivable_area: self
                .drivable_area
                .iter()
                .map(|c| c.iter().map(|&p| tf(p)).collect())
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square_map() -> HdMap {
        HdMap {
            map_id: "m".into(),
            lanes: vec![Lane {
                lane_id: "l0".into(),
                centerline: vec![Vec2::new(0.0, 0.0), Vec2::new(10.0, 0.0)],
                width: 3.5,
                successor_ids: vec![],
                signal_group_id: None,
            }],
            crosswalks: vec![],
            stop_lines: vec![],
            drivable_area: vec![vec![
                Vec2::new(-5.0, -5.0),
                Vec2::new(15.0, -5.0),
                Vec2::new(15.0, 5.0),
                Vec2::new(-5.0, 5.0),
            ]],
        }
    }

    #[test]
    fn roundtrip_and_checks() {
        let m = square_map();
        let back = HdMap::from_json(m.to_json().as_bytes()).unwrap();
        assert_eq!(back, m);
        assert!(m.point_in_drivable(Vec2::new(5.0, 0.0)));
        assert!(!m.point_in_drivable(Vec2::new(25.0, 0.0)));
    }

    #[test]
    fn rejects_zero_length_segment_and_unknown_keys() {
        let mut m = square_map();
        m.lanes[0].centerline = vec![Vec2::new(1.0, 1.0), Vec2::new(1.0, 1.0)];
        assert!(matches!(
            HdMap::from_json(m.to_json().as_bytes()),
            Err(MapError::Invariant { .. })
        ));
        let bad = r#"{"map_id":"x","lanes":[],"crosswalks":[],"stop_lines":[],"drivable_area":[],"extra":1}"#;
        assert!(matches!(HdMap::from_json(bad.as_bytes()), Err(MapError::Parse(_))));
    }
}
