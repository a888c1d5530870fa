use super::{Position, ScenarioConfig};
use crate::error::Result;

/// Number of distinct layouts; each rotates the source set by a fraction of
/// the angular spacing.
pub const LAYOUTS: usize = 5;

#[derive(Debug, Clone, PartialEq)]
pub struct SourcePositions {
    pub speech: Position,
    pub noise: Position,
    pub loudspeakers: Vec<Position>,
}

impl SourcePositions {
    /// Speech, noise, then loudspeakers.
    pub fn all(&self) -> Vec<Position> {
        let mut v = vec![self.speech, self.noise];
        v.extend(self.loudspeakers.iter().copied());
        v
    }
}

/// Azimuths in radians of speech, noise and loudspeakers for a layout.
pub fn layout_angles(layout: usize, loudspeakers: usize) -> Vec<f64> {
    let count = 2 + loudspeakers;
    let spacing = 2.0 * std::f64::consts::PI / count as f64;
    let offset = (layout as f64 - 1.0) * spacing / LAYOUTS as f64;
    (0..count).map(|k| offset + k as f64 * spacing).collect()
}

/// Sources at equal angular spacing on a horizontal circle around the mean
/// microphone position.
pub fn place_sources(config: &ScenarioConfig) -> Result<SourcePositions> {
    config.validate()?;
    let center = config.mean_mic_position();
    let r = config.source_circle_radius;
    let points: Vec<Position> = layout_angles(config.layout, config.loudspeakers)
        .into_iter()
        .map(|a| [center[0] + r * a.cos(), center[1] + r * a.sin(), center[2]])
        .collect();
    Ok(SourcePositions {
        speech: points[0],
        noise: points[1],
        loudspeakers: points[2..].to_vec(),
    })
}
