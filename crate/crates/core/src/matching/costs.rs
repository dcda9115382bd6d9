//! Triplet matching costs between predicate-node predictions and ground
//! truth relations.

use super::GroundTruthSceneGraph;
use crate::geometry::{giou, BBox};
use ndarray::{Array2, ArrayView2};

/// Weights of the three entity-cost terms.
#[derive(Clone, Copy, Debug)]
pub struct EntityCostWeights {
    pub giou: f64,
    pub l1: f64,
    pub cls: f64,
}

impl Default for EntityCostWeights {
    fn default() -> Self {
        EntityCostWeights { giou: 1.0, l1: 1.0, cls: 1.0 }
    }
}

/// Ground-truth predicate center targets: one row per relation, holding the
/// subject center followed by the object center.
pub fn predicate_center_targets(gt: &GroundTruthSceneGraph) -> Array2<f64> {
    let mut t = Array2::zeros((gt.relations.len(), 4));
    for (j, rel) in gt.relations.iter().enumerate() {
        let s = gt.subject_box(rel);
        let o = gt.object_box(rel);
        t[[j, 0]] = s.cx;
        t[[j, 1]] = s.cy;
        t[[j, 2]] = o.cx;
        t[[j, 3]] = o.cy;
    }
    t
}

/// Predicate cost: `exp(-p_gt . p_pred) + |b_pred - b_gt|_1` per
/// (prediction, GT) pair. `pred_scores` holds the reported class scores
/// over the predicate vocabulary, `pred_centers` the four subject/object
/// center coordinates.
pub fn cost_predicate(
    pred_scores: &ArrayView2<f64>,
    pred_centers: &ArrayView2<f64>,
    gt: &GroundTruthSceneGraph,
) -> Array2<f64> {
    let n = pred_scores.shape()[0];
    let m = gt.relations.len();
    let targets = predicate_center_targets(gt);
    let mut cost = Array2::zeros((n, m));
    for (j, rel) in gt.relations.iter().enumerate() {
        for i in 0..n {
            let cls = (-pred_scores[[i, rel.predicate]]).exp();
            let mut l1 = 0.0;
            for k in 0..4 {
                l1 += (pred_centers[[i, k]] - targets[[j, k]]).abs();
            }
            cost[[i, j]] = cls + l1;
        }
    }
    cost
}

/// Entity cost over assembled (or indicator) subject/object predictions:
/// a clipped-GIoU product term, an L1 sum term, and a class-score product
/// term, weighted per [`EntityCostWeights`].
pub fn cost_entity(
    sub_boxes: &[BBox],
    sub_scores: &ArrayView2<f64>,
    obj_boxes: &[BBox],
    obj_scores: &ArrayView2<f64>,
    gt: &GroundTruthSceneGraph,
    weights: EntityCostWeights,
) -> Array2<f64> {
    let n = sub_boxes.len();
    let m = gt.relations.len();
    let mut cost = Array2::zeros((n, m));
    for (j, rel) in gt.relations.iter().enumerate() {
        let gs = gt.subject_box(rel);
        let go = gt.object_box(rel);
        let s_cls = gt.entities[rel.subject].class_id;
        let o_cls = gt.entities[rel.object].class_id;
        for i in 0..n {
            let g_term = (-giou(&sub_boxes[i], gs).clamp(0.0, 1.0)).exp()
                * (-giou(&obj_boxes[i], go).clamp(0.0, 1.0)).exp();
            let l1_term = l1_box(&sub_boxes[i], gs) + l1_box(&obj_boxes[i], go);
            let c_term = (-sub_scores[[i, s_cls]]).exp() * (-obj_scores[[i, o_cls]]).exp();
            cost[[i, j]] = weights.giou * g_term + weights.l1 * l1_term + weights.cls * c_term;
        }
    }
    cost
}

fn l1_box(a: &BBox, b: &BBox) -> f64 {
    (a.cx - b.cx).abs() + (a.cy - b.cy).abs() + (a.w - b.w).abs() + (a.h - b.h).abs()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matching::{GtEntity, GtRelation};
    use ndarray::arr2;

    fn simple_gt() -> GroundTruthSceneGraph {
        GroundTruthSceneGraph {
            entities: vec![
                GtEntity { bbox: BBox::new(0.2, 0.3, 0.1, 0.1).unwrap(), class_id: 0 },
                GtEntity { bbox: BBox::new(0.7, 0.6, 0.2, 0.2).unwrap(), class_id: 2 },
            ],
            relations: vec![GtRelation { subject: 0, predicate: 1, object: 1 }],
        }
    }

    #[test]
    fn perfect_predicate_prediction_costs_exp_minus_one() {
        let gt = simple_gt();
        let scores = arr2(&[[0.0, 1.0, 0.0]]);
        let centers = arr2(&[[0.2, 0.3, 0.7, 0.6]]);
        let c = cost_predicate(&scores.view(), &centers.view(), &gt);
        assert_eq!(c.dim(), (1, 1));
        assert!((c[[0, 0]] - (-1.0f64).exp()).abs() < 1e-12);
        assert!((c[[0, 0]] - 0.3679).abs() < 1e-4);
    }

    #[test]
    fn orthogonal_class_exact_centers_costs_one() {
        let gt = simple_gt();
        let scores = arr2(&[[1.0, 0.0, 0.0]]); // no mass on GT predicate 1
        let centers = arr2(&[[0.2, 0.3, 0.7, 0.6]]);
        let c = cost_predicate(&scores.view(), &centers.view(), &gt);
        assert!((c[[0, 0]] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cost_predicate_shape() {
        let gt = simple_gt();
        let scores = arr2(&[[0.1, 0.2, 0.3], [0.3, 0.2, 0.1], [0.5, 0.5, 0.5]]);
        let centers = arr2(&[[0.5; 4], [0.4; 4], [0.3; 4]]);
        let c = cost_predicate(&scores.view(), &centers.view(), &gt);
        assert_eq!(c.dim(), (3, 1));
    }

    #[test]
    fn perfect_entity_prediction_cost() {
        let gt = simple_gt();
        let sub = vec![*gt.subject_box(&gt.relations[0])];
        let obj = vec![*gt.object_box(&gt.relations[0])];
        let mut sub_scores = Array2::zeros((1, 4));
        sub_scores[[0, 0]] = 1.0;
        let mut obj_scores = Array2::zeros((1, 4));
        obj_scores[[0, 2]] = 1.0;
        let c = cost_entity(
            &sub,
            &sub_scores.view(),
            &obj,
            &obj_scores.view(),
            &gt,
            EntityCostWeights::default(),
        );
        // perfect boxes: clipped GIoU 1 each side -> e^-2; L1 zero;
        // perfect classes -> e^-2
        let expected = (-2.0f64).exp() + 0.0 + (-2.0f64).exp();
        assert!((c[[0, 0]] - expected).abs() < 1e-12);
    }

    #[test]
    fn zero_weights_zero_matrix_and_l1_linearity() {
        let gt = simple_gt();
        let sub = vec![BBox::new(0.3, 0.3, 0.2, 0.2).unwrap()];
        let obj = vec![BBox::new(0.6, 0.5, 0.3, 0.3).unwrap()];
        let sub_scores = arr2(&[[0.25, 0.25, 0.25, 0.25]]);
        let obj_scores = arr2(&[[0.25, 0.25, 0.25, 0.25]]);
        let zero = cost_entity(
            &sub,
            &sub_scores.view(),
            &obj,
            &obj_scores.view(),
            &gt,
            EntityCostWeights { giou: 0.0, l1: 0.0, cls: 0.0 },
        );
        assert_eq!(zero[[0, 0]], 0.0);

        let w1 = EntityCostWeights { giou: 0.0, l1: 1.0, cls: 0.0 };
        let w2 = EntityCostWeights { giou: 0.0, l1: 2.0, cls: 0.0 };
        let c1 = cost_entity(&sub, &sub_scores.view(), &obj, &obj_scores.view(), &gt, w1);
        let c2 = cost_entity(&sub, &sub_scores.view(), &obj, &obj_scores.view(), &gt, w2);
        assert!((c2[[0, 0]] - 2.0 * c1[[0, 0]]).abs() < 1e-12);
    }

    #[test]
    fn gt_permutation_permutes_columns() {
        let mut gt = simple_gt();
        gt.entities.push(GtEntity {
            bbox: BBox::new(0.4, 0.8, 0.15, 0.1).unwrap(),
            class_id: 1,
        });
        gt.relations.push(GtRelation { subject: 2, predicate: 0, object: 0 });
        let scores = arr2(&[[0.2, 0.5, 0.3], [0.6, 0.1, 0.3]]);
        let centers = arr2(&[[0.4, 0.4, 0.5, 0.5], [0.1, 0.9, 0.8, 0.2]]);
        let c = cost_predicate(&scores.view(), &centers.view(), &gt);
        let mut swapped = gt.clone();
        swapped.relations.reverse();
        let cs = cost_predicate(&scores.view(), &centers.view(), &swapped);
        for i in 0..2 {
            for j in 0..2 {
                assert_eq!(c[[i, j]], cs[[i, 1 - j]]);
            }
        }
    }
}
