//! Small value types shared by every stage of the pipeline.

use serde::{Deserialize, Serialize};
use std::fmt;

/// Tile-level class label. `Mitotic` is the positive class everywhere.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Label {
    Mitotic,
    HardNegative,
}

impl Label {
    pub const ALL: [Label; 2] = [Label::Mitotic, Label::HardNegative];

    pub fn is_positive(self) -> bool {
        matches!(self, Label::Mitotic)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Mitotic => "MITOTIC",
            Label::HardNegative => "HARD_NEGATIVE",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Axis-aligned pixel rectangle with half-open extents: `[x_min, x_max) × [y_min, y_max)`.
///
/// Coordinates are signed so that pre-clamp tile origins may sit outside the slide.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PixelBox {
    pub x_min: i64,
    pub y_min: i64,
    pub x_max: i64,
    pub y_max: i64,
}

impl PixelBox {
    pub fn new(x_min: i64, y_min: i64, x_max: i64, y_max: i64) -> Self {
        Self {
            x_min,
            y_min,
            x_max,
            y_max,
        }
    }

    /// Square of side `side` whose top-left corner is `origin`.
    pub fn square(origin: (i64, i64), side: i64) -> Self {
        Self::new(origin.0, origin.1, origin.0 + side, origin.1 + side)
    }

    pub fn width(&self) -> i64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> i64 {
        self.y_max - self.y_min
    }

    pub fn is_empty(&self) -> bool {
        self.width() <= 0 || self.height() <= 0
    }

    /// Integer center, floor-rounded.
    pub fn center(&self) -> (i64, i64) {
        (
            (self.x_min + self.x_max).div_euclid(2),
            (self.y_min + self.y_max).div_euclid(2),
        )
    }

    /// Non-empty intersection under half-open semantics; touching edges do not intersect.
    pub fn intersects(&self, other: &PixelBox) -> bool {
        !self.is_empty()
            && !other.is_empty()
            && self.x_min < other.x_max
            && other.x_min < self.x_max
            && self.y_min < other.y_max
            && other.y_min < self.y_max
    }

    pub fn contains(&self, other: &PixelBox) -> bool {
        self.x_min <= other.x_min && self.y_min <= other.y_min && other.x_max <= self.x_max && other.y_max <= self.y_max
    }
}

impl fmt::Display for PixelBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}, {}, {}]", self.x_min, self.y_min, self.x_max, self.y_max)
    }
}

/// The (tumor type, species, scanner) triple interpolated into prompts.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SlideMetadata {
    pub tumor_type: String,
    pub species: String,
    pub scanner: String,
}

impl SlideMetadata {
    pub fn new(tumor_type: impl Into<String>, species: impl Into<String>, scanner: impl Into<String>) -> Self {
        Self {
            tumor_type: tumor_type.into(),
            species: species.into(),
            scanner: scanner.into(),
        }
    }

    pub fn is_complete(&self) -> bool {
        [&self.tumor_type, &self.species, &self.scanner]
            .iter()
            .all(|s| !s.trim().is_empty())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn touching_edges_do_not_intersect() {
        let tile = PixelBox::new(276, 0, 500, 224);
        let positive = PixelBox::new(500, 100, 550, 150);
        assert!(!tile.intersects(&positive));
        let shifted = PixelBox::new(277, 0, 501, 224);
        assert!(shifted.intersects(&positive));
    }

    #[test]
    fn center_floors_negative_coordinates() {
        assert_eq!(PixelBox::new(-3, -3, 0, 0).center(), (-2, -2));
        assert_eq!(PixelBox::new(275, 275, 325, 325).center(), (300, 300));
    }
}
