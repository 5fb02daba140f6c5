use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Stretch of road with a constant number of lanes, `[start, end)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub start: f64,
    pub end: f64,
    pub lanes: usize,
}

impl Segment {
    pub fn length(&self) -> f64 {
        self.end - self.start
    }
}

/// Straight multi-lane road. Lane 0 is the rightmost lane; when the lane
/// count drops, the highest-indexed lanes end.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoadNetwork {
    pub total_length: f64,
    pub segments: Vec<Segment>,
    pub speed_limit: f64,
    pub lane_width: f64,
}

/// Named bottleneck layouts.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MapKind {
    /// 4 lanes narrowing to 3.
    Reduction25,
    /// 4 lanes narrowing to 2.
    Reduction50,
    /// 4 -> 3 -> 2 -> 4.
    Combined,
}

impl MapKind {
    pub fn reduction_percent(self) -> f64 {
        match self {
            MapKind::Reduction25 => 25.0,
            MapKind::Reduction50 | MapKind::Combined => 50.0,
        }
    }
}

pub const ROAD_LENGTH: f64 = 1300.0;
pub const SPEED_LIMIT: f64 = 25.0;
pub const LANE_WIDTH: f64 = 3.2;
pub const BASE_LANES: usize = 4;

impl RoadNetwork {
    pub fn new(total_length: f64, segments: Vec<Segment>, speed_limit: f64, lane_width: f64) -> Result<Self> {
        let road = Self { total_length, segments, speed_limit, lane_width };
        road.validate()?;
        Ok(road)
    }

    /// Training layout of a bottleneck map.
    pub fn bottleneck(kind: MapKind) -> Self {
        Self::bottleneck_variant(kind, false)
    }

    /// `shifted = true` moves the reduction further downstream (test map).
    pub fn bottleneck_variant(kind: MapKind, shifted: bool) -> Self {
        let cuts: &[(f64, usize)] = match (kind, shifted) {
            (MapKind::Reduction25, false) => &[(0.0, 4), (600.0, 3), (900.0, 4)],
            (MapKind::Reduction25, true) => &[(0.0, 4), (750.0, 3), (1050.0, 4)],
            (MapKind::Reduction50, false) => &[(0.0, 4), (600.0, 2), (900.0, 4)],
            (MapKind::Reduction50, true) => &[(0.0, 4), (750.0, 2), (1050.0, 4)],
            (MapKind::Combined, false) => &[(0.0, 4), (400.0, 3), (700.0, 2), (1000.0, 4)],
            (MapKind::Combined, true) => &[(0.0, 4), (500.0, 3), (800.0, 2), (1100.0, 4)],
        };
        let segments = cuts
            .iter()
            .enumerate()
            .map(|(i, &(start, lanes))| Segment {
                start,
                end: cuts.get(i + 1).map_or(ROAD_LENGTH, |c| c.0),
                lanes,
            })
            .collect();
        Self::new(ROAD_LENGTH, segments, SPEED_LIMIT, LANE_WIDTH).expect("built-in map is valid")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.total_length > 0.0) || !(self.speed_limit > 0.0) || !(self.lane_width > 0.0) {
            return bad("road length, speed limit and lane width must be positive".into());
        }
        let Some(first) = self.segments.first() else {
            return bad("road needs at least one segment".into());
        };
        if first.start != 0.0 {
            return bad("first segment must start at 0".into());
        }
        for w in self.segments.windows(2) {
            if w[0].end != w[1].start {
                return bad(format!("segments leave a gap or overlap at {}", w[0].end));
            }
        }
        if self.segments.last().map(|s| s.end) != Some(self.total_length) {
            return bad("last segment must end at the road length".into());
        }
        for s in &self.segments {
            if s.lanes == 0 || !(s.end > s.start) {
                return bad(format!("segment [{}, {}) is empty or has no lanes", s.start, s.end));
            }
        }
        Ok(())
    }

    pub fn max_lanes(&self) -> usize {
        self.segments.iter().map(|s| s.lanes).max().unwrap_or(0)
    }

    /// Index of the segment containing `x` (clamped onto the road).
    pub fn segment_index(&self, x: f64) -> usize {
        self.segments.iter().position(|s| x < s.end).unwrap_or(self.segments.len() - 1)
    }

    pub fn lanes_at(&self, x: f64) -> usize {
        self.segments[self.segment_index(x)].lanes
    }

    pub fn lane_exists(&self, lane: usize, x: f64) -> bool {
        lane < self.lanes_at(x)
    }

    /// Where `lane` stops existing at or downstream of `x`; `None` if it
    /// runs to the end of the road.
    pub fn lane_end(&self, lane: usize, x: f64) -> Option<f64> {
        let from = self.segment_index(x);
        self.segments[from..].iter().find(|s| s.lanes <= lane).map(|s| s.start.max(x))
    }

    /// Distance from `x` to the end of `lane`, infinite if it never ends.
    pub fn distance_to_lane_end(&self, lane: usize, x: f64) -> f64 {
        self.lane_end(lane, x).map_or(f64::INFINITY, |e| e - x)
    }

    pub fn lane_center(&self, lane: usize) -> f64 {
        (lane as f64 + 0.5) * self.lane_width
    }

    /// Total length over which `lane` exists.
    pub fn lane_length(&self, lane: usize) -> f64 {
        self.segments.iter().filter(|s| lane < s.lanes).map(Segment::length).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lane_end_lookup() {
        let r = RoadNetwork::bottleneck(MapKind::Reduction50);
        assert_eq!(r.lane_end(3, 100.0), Some(600.0));
        assert_eq!(r.lane_end(2, 100.0), Some(600.0));
        assert_eq!(r.lane_end(1, 100.0), None);
        assert_eq!(r.lane_end(3, 950.0), None);
        assert_eq!(r.lanes_at(650.0), 2);
        assert_eq!(r.lane_length(3), 1000.0);
    }

    #[test]
    fn rejects_gaps_between_segments() {
        let segs = vec![Segment { start: 0.0, end: 100.0, lanes: 2 }, Segment { start: 110.0, end: 200.0, lanes: 2 }];
        assert!(RoadNetwork::new(200.0, segs, 25.0, 3.2).is_err());
    }
}
