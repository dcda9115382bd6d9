//! Set matching between predictions and ground truth: scene-graph ground
//! truth types, the Hungarian solver, the triplet matching costs, and the
//! full training loss.

mod costs;
mod hungarian;
mod losses;

pub use costs::{cost_entity, cost_predicate, predicate_center_targets, EntityCostWeights};
pub use hungarian::{hungarian, MatchResult};
pub use losses::{entity_detection_loss, predicate_loss, LossBreakdown, LossWeights, TripletsForLoss};

use crate::error::{Error, Result};
use crate::geometry::BBox;
use serde::{Deserialize, Serialize};
use std::collections::HashSet;

/// A ground-truth entity: box plus class label in `[0, C_e)`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GtEntity {
    pub bbox: BBox,
    pub class_id: usize,
}

/// A directed ground-truth relation between two entities.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GtRelation {
    pub subject: usize,
    pub predicate: usize,
    pub object: usize,
}

/// Ground-truth scene graph: entities plus directed relations.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct GroundTruthSceneGraph {
    pub entities: Vec<GtEntity>,
    pub relations: Vec<GtRelation>,
}

impl GroundTruthSceneGraph {
    /// Validate referential integrity: relation endpoints must reference
    /// existing entities, self-relations are rejected, duplicates rejected.
    pub fn validate(&self, num_entity_classes: usize, num_predicates: usize) -> Result<()> {
        for e in &self.entities {
            if e.class_id >= num_entity_classes {
                return Err(Error::InvalidSceneGraph(format!(
                    "entity class {} out of range {num_entity_classes}",
                    e.class_id
                )));
            }
        }
        let mut seen = HashSet::new();
        for r in &self.relations {
            if r.subject >= self.entities.len() || r.object >= self.entities.len() {
                return Err(Error::InvalidSceneGraph(format!(
                    "relation ({}, {}, {}) references missing entity",
                    r.subject, r.predicate, r.object
                )));
            }
            if r.subject == r.object {
                return Err(Error::InvalidSceneGraph("self-relation".into()));
            }
            if r.predicate >= num_predicates {
                return Err(Error::InvalidSceneGraph(format!(
                    "predicate {} out of range {num_predicates}",
                    r.predicate
                )));
            }
            if !seen.insert(*r) {
                return Err(Error::InvalidSceneGraph(format!(
                    "duplicate relation ({}, {}, {})",
                    r.subject, r.predicate, r.object
                )));
            }
        }
        Ok(())
    }

    pub fn subject_box(&self, rel: &GtRelation) -> &BBox {
        &self.entities[rel.subject].bbox
    }

    pub fn object_box(&self, rel: &GtRelation) -> &BBox {
        &self.entities[rel.object].bbox
    }
}
