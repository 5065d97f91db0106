use serde::{Deserialize, Serialize};

use super::render::{self, SceneImage};
use super::{Detection, DetectionKind, LocalMap, Observation, PerceptError};
use crate::world::{FloorId, RelDir, Side};

/// Upper bound on markers drawn in one scene.
pub const MAX_MARKERS: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum CandidateValue {
    Detection(Detection),
    Landmark {
        id: String,
        label: String,
        descriptor: String,
        floor: FloorId,
        thumbnail: LocalMap,
    },
    Direction(RelDir),
    Side(Side),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub value: CandidateValue,
}

impl Candidate {
    pub fn detection(d: Detection) -> Self {
        Self { value: CandidateValue::Detection(d) }
    }

    pub fn direction(d: RelDir) -> Self {
        Self { value: CandidateValue::Direction(d) }
    }

    pub fn side(s: Side) -> Self {
        Self { value: CandidateValue::Side(s) }
    }

    /// Identifier of the resolved parameter: entity id, landmark id or
    /// direction word.
    pub fn resolved(&self) -> String {
        match &self.value {
            CandidateValue::Detection(d) => d.entity_id.clone(),
            CandidateValue::Landmark { id, .. } => id.clone(),
            CandidateValue::Direction(d) => d.as_str().to_string(),
            CandidateValue::Side(s) => s.as_str().to_string(),
        }
    }

    pub fn describe(&self) -> String {
        match &self.value {
            CandidateValue::Detection(d) => match &d.kind {
                DetectionKind::Button { .. } => format!("{}, {}", d.appearance, d.distance_text()),
                _ => format!("{}, {}, {}", d.appearance, d.direction_text(), d.distance_text()),
            },
            CandidateValue::Landmark { label, descriptor, .. } => format!("{label}: {descriptor}"),
            CandidateValue::Direction(d) => format!("arrow endpoint {}", d.as_str()),
            CandidateValue::Side(s) => format!("{} side of the door", s.as_str()),
        }
    }

    fn as_detection(&self) -> Option<&Detection> {
        match &self.value {
            CandidateValue::Detection(d) => Some(d),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Marker {
    pub id: u32,
    pub candidate: Candidate,
    pub annotation: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MarkerSet {
    pub markers: Vec<Marker>,
}

impl MarkerSet {
    pub fn get(&self, id: u32) -> Option<&Marker> {
        self.markers.iter().find(|m| m.id == id)
    }

    pub fn ids(&self) -> Vec<u32> {
        self.markers.iter().map(|m| m.id).collect()
    }

    pub fn len(&self) -> usize {
        self.markers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.markers.is_empty()
    }

    /// Marker whose candidate resolves to `value`.
    pub fn find_resolved(&self, value: &str) -> Option<&Marker> {
        self.markers.iter().find(|m| m.candidate.resolved() == value)
    }

    pub fn text_table(&self) -> String {
        self.markers
            .iter()
            .map(|m| m.annotation.clone())
            .collect::<Vec<_>>()
            .join("\n")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnnotatedScene {
    pub image: SceneImage,
    pub text: String,
}

/// Assigns marker ids and draws them. Detection candidates are ordered by
/// distance (unknown last), then bearing, then entity id; enumerated
/// candidates keep their given order.
pub fn annotate_markers(
    obs: &Observation,
    mut candidates: Vec<Candidate>,
) -> Result<(MarkerSet, AnnotatedScene), PerceptError> {
    if candidates.len() > MAX_MARKERS {
        return Err(PerceptError::MarkerOverflow(candidates.len()));
    }
    if candidates.iter().all(|c| c.as_detection().is_some()) {
        candidates.sort_by(|a, b| {
            let (a, b) = (a.as_detection().unwrap(), b.as_detection().unwrap());
            a.distance
                .is_nan()
                .cmp(&b.distance.is_nan())
                .then(a.distance.total_cmp(&b.distance))
                .then(b.bearing.total_cmp(&a.bearing))
                .then(a.entity_id.cmp(&b.entity_id))
        });
    }
    let markers: Vec<Marker> = candidates
        .into_iter()
        .enumerate()
        .map(|(i, c)| {
            let id = i as u32 + 1;
            let annotation = format!("marker {id}: {}", c.describe());
            Marker { id, candidate: c, annotation }
        })
        .collect();
    let set = MarkerSet { markers };
    let image = render::annotated(obs, &set);
    let text = set.text_table();
    Ok((set, AnnotatedScene { image, text }))
}
