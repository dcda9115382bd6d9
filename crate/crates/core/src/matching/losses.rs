//! Training losses built on tape variables: DETR-style entity detection
//! loss plus the predicate-generator loss with per-layer auxiliary terms.
//!
//! Matching runs on detached values; the loss terms themselves are
//! differentiable. Classification terms are negative log-likelihoods of
//! probability rows, so a one-hot-perfect prediction has exactly zero loss.

use super::costs::{cost_entity, cost_predicate, predicate_center_targets, EntityCostWeights};
use super::hungarian::hungarian;
use super::GroundTruthSceneGraph;
use crate::error::Result;
use crate::geometry::BBox;
use crate::tensor::{Tape, Var};
use ndarray::{Array2, ArrayView2};
use std::collections::BTreeMap;

/// Loss and matching-cost coefficients. Defaults follow the unit weighting
/// used throughout; all are exposed through the experiment config.
#[derive(Clone, Copy, Debug)]
pub struct LossWeights {
    pub lambda_p: f64,
    pub lambda_e: f64,
    pub entity_cost: EntityCostWeights,
    /// Weight of non-final decoder layers' losses.
    pub aux_weight: f64,
    /// Weight of the anchor-box supervision (spatial mode).
    pub anchor_weight: f64,
    /// Down-weight for the background class in entity classification.
    pub background_weight: f64,
    /// Scale of the whole predicate-generator loss.
    pub lambda_prd: f64,
    /// Scale of the entity-detector loss.
    pub lambda_ent: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_p: 1.0,
            lambda_e: 1.0,
            entity_cost: EntityCostWeights::default(),
            aux_weight: 1.0,
            anchor_weight: 1.0,
            background_weight: 0.1,
            lambda_prd: 1.0,
            lambda_ent: 1.0,
        }
    }
}

/// Per-term loss values for structured logging.
#[derive(Clone, Debug, Default)]
pub struct LossBreakdown {
    pub terms: BTreeMap<String, f64>,
}

impl LossBreakdown {
    pub fn add(&mut self, name: &str, value: f64) {
        *self.terms.entry(name.to_string()).or_insert(0.0) += value;
    }

    pub fn merge(&mut self, other: &LossBreakdown) {
        for (k, v) in &other.terms {
            self.add(k, *v);
        }
    }
}

/// Soft-assembled subject/object predictions of one decoder layer
/// (unified assembling mode only).
#[derive(Clone, Copy)]
pub struct SoftForLoss {
    pub sub_boxes: Var,
    pub sub_probs: Var,
    pub obj_boxes: Var,
    pub obj_probs: Var,
}

/// Everything one decoder layer contributes to the loss.
#[derive(Clone)]
pub struct TripletsForLoss {
    /// Probability rows over predicate classes (softmax), for the CE term.
    pub pred_probs: Var,
    /// Reported predicate scores (sigmoid), used in the matching cost.
    pub pred_scores_value: Array2<f64>,
    /// `N_r x 4` subject/object center predictions.
    pub pred_centers: Var,
    pub sub_boxes: Var,
    pub sub_probs: Var,
    pub obj_boxes: Var,
    pub obj_probs: Var,
    pub soft: Option<SoftForLoss>,
}

fn rows_as_boxes(m: &ArrayView2<f64>) -> Vec<BBox> {
    m.rows()
        .into_iter()
        .map(|r| BBox::from_raw(r[0], r[1], r[2], r[3]))
        .collect()
}

/// Differentiable GIoU of row-aligned center-format box matrices (`n x 4`),
/// returning an `n x 1` column. Extents must be positive so the union and
/// enclosing areas never vanish.
pub fn giou_rows(tape: &mut Tape, a: Var, b: Var) -> Var {
    let half = |t: &mut Tape, v: Var| t.scale(v, 0.5);
    let coords = |t: &mut Tape, v: Var| {
        let cx = t.slice_cols(v, 0, 1);
        let cy = t.slice_cols(v, 1, 1);
        let w = t.slice_cols(v, 2, 1);
        let h = t.slice_cols(v, 3, 1);
        let hw = half(t, w);
        let hh = half(t, h);
        let x1 = t.sub(cx, hw);
        let x2 = t.add(cx, hw);
        let y1 = t.sub(cy, hh);
        let y2 = t.add(cy, hh);
        (x1, y1, x2, y2, w, h)
    };
    let (ax1, ay1, ax2, ay2, aw, ah) = coords(tape, a);
    let (bx1, by1, bx2, by2, bw, bh) = coords(tape, b);

    let ix1 = tape.max_elem(ax1, bx1);
    let iy1 = tape.max_elem(ay1, by1);
    let ix2 = tape.min_elem(ax2, bx2);
    let iy2 = tape.min_elem(ay2, by2);
    let iwr = tape.sub(ix2, ix1);
    let ihr = tape.sub(iy2, iy1);
    let iw = tape.relu(iwr);
    let ih = tape.relu(ihr);
    let inter = tape.mul(iw, ih);

    let area_a = tape.mul(aw, ah);
    let area_b = tape.mul(bw, bh);
    let sum_areas = tape.add(area_a, area_b);
    let union = tape.sub(sum_areas, inter);

    let ex1 = tape.min_elem(ax1, bx1);
    let ey1 = tape.min_elem(ay1, by1);
    let ex2 = tape.max_elem(ax2, bx2);
    let ey2 = tape.max_elem(ay2, by2);
    let ew = tape.sub(ex2, ex1);
    let eh = tape.sub(ey2, ey1);
    let enclose = tape.mul(ew, eh);

    let iou = tape.div(inter, union);
    let gap = tape.sub(enclose, union);
    let penalty = tape.div(gap, enclose);
    tape.sub(iou, penalty)
}

/// Sum of |a - b| over all entries, as a scalar node.
fn l1_sum(tape: &mut Tape, a: Var, b: Var) -> Var {
    let d = tape.sub(a, b);
    let ad = tape.abs(d);
    tape.sum_all(ad)
}

/// Box regression term over matched rows: L1 plus GIoU loss, normalized by
/// the number of matched rows.
fn box_loss(tape: &mut Tape, pred_rows: Var, gt_rows: Var, n: usize) -> (Var, Var) {
    let l1 = l1_sum(tape, pred_rows, gt_rows);
    let l1 = tape.scale(l1, 1.0 / n as f64);
    let g = giou_rows(tape, pred_rows, gt_rows);
    let one_minus = tape.scale(g, -1.0);
    let one_minus = tape.add_scalar(one_minus, 1.0);
    let gl = tape.sum_all(one_minus);
    let gl = tape.scale(gl, 1.0 / n as f64);
    (l1, gl)
}

/// CE over matched rows: mean of `-ln p[target]`.
fn matched_ce(tape: &mut Tape, probs: Var, rows: &[usize], targets: &[usize]) -> Var {
    let gathered = tape.gather_rows(probs, rows);
    let weights = vec![1.0; rows.len()];
    let nll = tape.nll_from_probs(gathered, targets, &weights);
    tape.scale(nll, 1.0 / rows.len() as f64)
}

/// DETR-style entity detection loss: Hungarian matching with class/L1/GIoU
/// costs, background CE on unmatched queries, box losses on matched ones.
pub fn entity_detection_loss(
    tape: &mut Tape,
    boxes: Var,
    probs: Var,
    gt: &GroundTruthSceneGraph,
    weights: &LossWeights,
) -> Result<(Var, LossBreakdown)> {
    let mut breakdown = LossBreakdown::default();
    let n_queries = tape.value2(boxes).shape()[0];
    let n_classes = tape.value2(probs).shape()[1];
    let background = n_classes - 1;
    let n_gt = gt.entities.len();

    // class targets default to background
    let mut targets = vec![background; n_queries];
    let mut matched_rows = Vec::new();
    let mut matched_classes = Vec::new();
    let mut gt_box_rows = Array2::zeros((n_gt, 4));

    if n_gt > 0 {
        let box_vals = tape.value2(boxes).to_owned();
        let prob_vals = tape.value2(probs).to_owned();
        let pred_boxes = rows_as_boxes(&box_vals.view());
        let mut cost = Array2::zeros((n_queries, n_gt));
        for (j, e) in gt.entities.iter().enumerate() {
            for i in 0..n_queries {
                let cls = -prob_vals[[i, e.class_id]];
                let l1 = (pred_boxes[i].cx - e.bbox.cx).abs()
                    + (pred_boxes[i].cy - e.bbox.cy).abs()
                    + (pred_boxes[i].w - e.bbox.w).abs()
                    + (pred_boxes[i].h - e.bbox.h).abs();
                let g = crate::geometry::giou(&pred_boxes[i], &e.bbox);
                cost[[i, j]] = cls + 5.0 * l1 + 2.0 * (1.0 - g);
            }
        }
        let result = hungarian(&cost)?;
        for (j, &i) in result.assignment.iter().enumerate() {
            if i < n_queries {
                targets[i] = gt.entities[j].class_id;
                matched_rows.push(i);
                matched_classes.push(gt.entities[j].class_id);
                let b = &gt.entities[j].bbox;
                gt_box_rows[[matched_rows.len() - 1, 0]] = b.cx;
                gt_box_rows[[matched_rows.len() - 1, 1]] = b.cy;
                gt_box_rows[[matched_rows.len() - 1, 2]] = b.w;
                gt_box_rows[[matched_rows.len() - 1, 3]] = b.h;
            }
        }
    }

    // classification over every query, background down-weighted
    let ce_weights: Vec<f64> = targets
        .iter()
        .map(|&t| if t == background { weights.background_weight } else { 1.0 })
        .collect();
    let weight_sum: f64 = ce_weights.iter().sum();
    let nll = tape.nll_from_probs(probs, &targets, &ce_weights);
    let ce = tape.scale(nll, 1.0 / weight_sum);
    breakdown.add("ent_ce", tape.scalar_value(ce));

    let mut total = ce;
    if !matched_rows.is_empty() {
        let pred_rows = tape.gather_rows(boxes, &matched_rows);
        let gt_rows = tape.leaf2(gt_box_rows);
        let (l1, gl) = box_loss(tape, pred_rows, gt_rows, matched_rows.len());
        let l1w = tape.scale(l1, 5.0);
        let glw = tape.scale(gl, 2.0);
        breakdown.add("ent_l1", tape.scalar_value(l1w));
        breakdown.add("ent_giou", tape.scalar_value(glw));
        let t1 = tape.add(total, l1w);
        total = tape.add(t1, glw);
        let _ = matched_classes;
    }
    Ok((total, breakdown))
}

/// Predicate-generator loss over the full per-layer history.
///
/// Each layer is matched to the ground truth independently; the matching
/// cost combines the predicate cost with an entity cost computed on
/// soft-assembled predictions when available (unified mode) and on the
/// entity indicators otherwise. Anchor boxes, when present, are supervised
/// with the first layer's assignment.
pub fn predicate_loss(
    tape: &mut Tape,
    layers: &[TripletsForLoss],
    anchors: Option<(Var, Var)>,
    gt: &GroundTruthSceneGraph,
    weights: &LossWeights,
) -> Result<(Var, LossBreakdown)> {
    let mut breakdown = LossBreakdown::default();
    let n_gt = gt.relations.len();
    if n_gt == 0 || layers.is_empty() {
        return Ok((tape.scalar(0.0), breakdown));
    }

    let center_targets = predicate_center_targets(gt);
    let pred_class_targets: Vec<usize> = gt.relations.iter().map(|r| r.predicate).collect();
    let sub_class_targets: Vec<usize> =
        gt.relations.iter().map(|r| gt.entities[r.subject].class_id).collect();
    let obj_class_targets: Vec<usize> =
        gt.relations.iter().map(|r| gt.entities[r.object].class_id).collect();
    let mut sub_gt_rows = Array2::zeros((n_gt, 4));
    let mut obj_gt_rows = Array2::zeros((n_gt, 4));
    for (j, r) in gt.relations.iter().enumerate() {
        let s = gt.subject_box(r);
        let o = gt.object_box(r);
        sub_gt_rows[[j, 0]] = s.cx;
        sub_gt_rows[[j, 1]] = s.cy;
        sub_gt_rows[[j, 2]] = s.w;
        sub_gt_rows[[j, 3]] = s.h;
        obj_gt_rows[[j, 0]] = o.cx;
        obj_gt_rows[[j, 1]] = o.cy;
        obj_gt_rows[[j, 2]] = o.w;
        obj_gt_rows[[j, 3]] = o.h;
    }

    let mut total = tape.scalar(0.0);
    let mut first_assignment: Option<Vec<usize>> = None;
    let last = layers.len() - 1;

    for (l, layer) in layers.iter().enumerate() {
        // ---- matching on detached values
        let centers_val = tape.value2(layer.pred_centers).to_owned();
        let c_p = cost_predicate(&layer.pred_scores_value.view(), &centers_val.view(), gt);
        let (sub_box_var, sub_prob_var, obj_box_var, obj_prob_var) = match layer.soft {
            Some(soft) => (soft.sub_boxes, soft.sub_probs, soft.obj_boxes, soft.obj_probs),
            None => (layer.sub_boxes, layer.sub_probs, layer.obj_boxes, layer.obj_probs),
        };
        let sub_box_vals = tape.value2(sub_box_var).to_owned();
        let obj_box_vals = tape.value2(obj_box_var).to_owned();
        let sub_prob_vals = tape.value2(sub_prob_var).to_owned();
        let obj_prob_vals = tape.value2(obj_prob_var).to_owned();
        let c_e = cost_entity(
            &rows_as_boxes(&sub_box_vals.view()),
            &sub_prob_vals.view(),
            &rows_as_boxes(&obj_box_vals.view()),
            &obj_prob_vals.view(),
            gt,
            weights.entity_cost,
        );
        let cost = weights.lambda_p * &c_p + weights.lambda_e * &c_e;
        let assignment = hungarian(&cost)?.assignment;
        let rows: Vec<usize> = assignment.clone();
        if first_assignment.is_none() {
            first_assignment = Some(rows.clone());
        }

        let layer_weight = if l == last { 1.0 } else { weights.aux_weight };
        if layer_weight == 0.0 {
            continue;
        }
        let tag = if l == last { "final" } else { "aux" };

        // ---- predicate term: L1 on centers + CE on predicate class
        let matched_centers = tape.gather_rows(layer.pred_centers, &rows);
        let target_var = tape.leaf2(center_targets.clone());
        let center_l1 = l1_sum(tape, matched_centers, target_var);
        let center_l1 = tape.scale(center_l1, 1.0 / n_gt as f64);
        let pred_ce = matched_ce(tape, layer.pred_probs, &rows, &pred_class_targets);
        breakdown.add(&format!("prd_center_l1_{tag}"), tape.scalar_value(center_l1));
        breakdown.add(&format!("prd_cls_{tag}"), tape.scalar_value(pred_ce));
        let mut layer_loss = tape.add(center_l1, pred_ce);

        // ---- indicator term: box (L1 + GIoU) and CE per role
        let sub_gt_var = tape.leaf2(sub_gt_rows.clone());
        let obj_gt_var = tape.leaf2(obj_gt_rows.clone());
        for (name, box_var, prob_var, gt_var, cls_targets) in [
            ("sub", layer.sub_boxes, layer.sub_probs, sub_gt_var, &sub_class_targets),
            ("obj", layer.obj_boxes, layer.obj_probs, obj_gt_var, &obj_class_targets),
        ] {
            let matched = tape.gather_rows(box_var, &rows);
            let (l1, gl) = box_loss(tape, matched, gt_var, n_gt);
            let ce = matched_ce(tape, prob_var, &rows, cls_targets);
            breakdown.add(&format!("ind_{name}_l1_{tag}"), tape.scalar_value(l1));
            breakdown.add(&format!("ind_{name}_giou_{tag}"), tape.scalar_value(gl));
            breakdown.add(&format!("ind_{name}_ce_{tag}"), tape.scalar_value(ce));
            let s1 = tape.add(l1, gl);
            let s2 = tape.add(s1, ce);
            layer_loss = tape.add(layer_loss, s2);
        }

        // ---- assembly term on soft predictions (unified mode)
        if let Some(soft) = layer.soft {
            for (name, box_var, prob_var, gt_var, cls_targets) in [
                ("sub", soft.sub_boxes, soft.sub_probs, sub_gt_var, &sub_class_targets),
                ("obj", soft.obj_boxes, soft.obj_probs, obj_gt_var, &obj_class_targets),
            ] {
                let matched = tape.gather_rows(box_var, &rows);
                let (l1, gl) = box_loss(tape, matched, gt_var, n_gt);
                let ce = matched_ce(tape, prob_var, &rows, cls_targets);
                breakdown.add(&format!("asm_{name}_l1_{tag}"), tape.scalar_value(l1));
                breakdown.add(&format!("asm_{name}_giou_{tag}"), tape.scalar_value(gl));
                breakdown.add(&format!("asm_{name}_ce_{tag}"), tape.scalar_value(ce));
                let s1 = tape.add(l1, gl);
                let s2 = tape.add(s1, ce);
                layer_loss = tape.add(layer_loss, s2);
            }
        }

        let weighted = tape.scale(layer_loss, layer_weight);
        total = tape.add(total, weighted);
    }

    // ---- anchor supervision against the first layer's matching
    if let (Some((anchor_sub, anchor_obj)), Some(rows)) = (anchors, first_assignment) {
        if weights.anchor_weight > 0.0 {
            let sub_gt_var = tape.leaf2(sub_gt_rows);
            let obj_gt_var = tape.leaf2(obj_gt_rows);
            let ms = tape.gather_rows(anchor_sub, &rows);
            let mo = tape.gather_rows(anchor_obj, &rows);
            let ls = l1_sum(tape, ms, sub_gt_var);
            let lo = l1_sum(tape, mo, obj_gt_var);
            let sum = tape.add(ls, lo);
            let scaled = tape.scale(sum, weights.anchor_weight / n_gt as f64);
            breakdown.add("anchor_l1", tape.scalar_value(scaled));
            total = tape.add(total, scaled);
        }
    }

    Ok((total, breakdown))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matching::{GtEntity, GtRelation};
    use crate::tensor::gradcheck;

    fn toy_gt() -> GroundTruthSceneGraph {
        GroundTruthSceneGraph {
            entities: vec![
                GtEntity { bbox: BBox::new(0.3, 0.3, 0.2, 0.2).unwrap(), class_id: 0 },
                GtEntity { bbox: BBox::new(0.7, 0.6, 0.2, 0.3).unwrap(), class_id: 1 },
            ],
            relations: vec![GtRelation { subject: 0, predicate: 1, object: 1 }],
        }
    }

    fn onehot(n: usize, i: usize) -> Vec<f64> {
        let mut v = vec![0.0; n];
        v[i] = 1.0;
        v
    }

    #[test]
    fn perfect_predictions_have_zero_predicate_loss() {
        let gt = toy_gt();
        let mut tape = Tape::inference();
        // one query, exactly the GT triplet, one-hot probabilities
        let centers = tape.leaf2(ndarray::arr2(&[[0.3, 0.3, 0.7, 0.6]]));
        let pred_probs = tape.leaf2(ndarray::arr2(&[[0.0, 1.0, 0.0]]));
        let sub_boxes = tape.leaf2(ndarray::arr2(&[[0.3, 0.3, 0.2, 0.2]]));
        let obj_boxes = tape.leaf2(ndarray::arr2(&[[0.7, 0.6, 0.2, 0.3]]));
        let sub_probs = tape.leaf2(ndarray::Array2::from_shape_vec((1, 3), onehot(3, 0)).unwrap());
        let obj_probs = tape.leaf2(ndarray::Array2::from_shape_vec((1, 3), onehot(3, 1)).unwrap());
        let layer = TripletsForLoss {
            pred_probs,
            pred_scores_value: ndarray::arr2(&[[0.0, 1.0, 0.0]]),
            pred_centers: centers,
            sub_boxes,
            sub_probs,
            obj_boxes,
            obj_probs,
            soft: None,
        };
        let (loss, _) =
            predicate_loss(&mut tape, &[layer], None, &gt, &LossWeights::default()).unwrap();
        assert!(tape.scalar_value(loss).abs() < 1e-12);
    }

    #[test]
    fn zero_aux_weight_equals_final_layer_only() {
        let gt = toy_gt();
        let build_layer = |tape: &mut Tape, shift: f64| {
            let centers = tape.leaf2(ndarray::arr2(&[
                [0.3 + shift, 0.3, 0.7, 0.6],
                [0.5, 0.5, 0.5, 0.5],
            ]));
            let pred_probs = tape.leaf2(ndarray::arr2(&[[0.2, 0.6, 0.2], [0.4, 0.3, 0.3]]));
            let sub_boxes =
                tape.leaf2(ndarray::arr2(&[[0.32, 0.3, 0.2, 0.2], [0.5, 0.5, 0.2, 0.2]]));
            let obj_boxes =
                tape.leaf2(ndarray::arr2(&[[0.7, 0.62, 0.2, 0.3], [0.5, 0.5, 0.2, 0.2]]));
            let sub_probs = tape.leaf2(ndarray::arr2(&[[0.7, 0.2, 0.1], [0.3, 0.3, 0.4]]));
            let obj_probs = tape.leaf2(ndarray::arr2(&[[0.1, 0.8, 0.1], [0.3, 0.3, 0.4]]));
            TripletsForLoss {
                pred_probs,
                pred_scores_value: ndarray::arr2(&[[0.2, 0.6, 0.2], [0.4, 0.3, 0.3]]),
                pred_centers: centers,
                sub_boxes,
                sub_probs,
                obj_boxes,
                obj_probs,
                soft: None,
            }
        };
        let weights = LossWeights { aux_weight: 0.0, ..Default::default() };
        let mut t1 = Tape::inference();
        let layers = vec![build_layer(&mut t1, 0.1), build_layer(&mut t1, 0.0)];
        let (both, _) = predicate_loss(&mut t1, &layers, None, &gt, &weights).unwrap();
        let mut t2 = Tape::inference();
        let only_final = vec![build_layer(&mut t2, 0.0)];
        let (fin, _) = predicate_loss(&mut t2, &only_final, None, &gt, &weights).unwrap();
        assert!((t1.scalar_value(both) - t2.scalar_value(fin)).abs() < 1e-12);
    }

    #[test]
    fn empty_gt_relations_zero_predicate_loss() {
        let mut gt = toy_gt();
        gt.relations.clear();
        let mut tape = Tape::inference();
        let layer = TripletsForLoss {
            pred_probs: tape.leaf2(ndarray::arr2(&[[0.5, 0.3, 0.2]])),
            pred_scores_value: ndarray::arr2(&[[0.5, 0.3, 0.2]]),
            pred_centers: tape.leaf2(ndarray::arr2(&[[0.5; 4]])),
            sub_boxes: tape.leaf2(ndarray::arr2(&[[0.5, 0.5, 0.2, 0.2]])),
            sub_probs: tape.leaf2(ndarray::arr2(&[[0.4, 0.3, 0.3]])),
            obj_boxes: tape.leaf2(ndarray::arr2(&[[0.5, 0.5, 0.2, 0.2]])),
            obj_probs: tape.leaf2(ndarray::arr2(&[[0.4, 0.3, 0.3]])),
            soft: None,
        };
        let (loss, _) =
            predicate_loss(&mut tape, &[layer], None, &gt, &LossWeights::default()).unwrap();
        assert_eq!(tape.scalar_value(loss), 0.0);
    }

    #[test]
    fn grad_giou_rows_matches_fd() {
        let a = ndarray::arr2(&[[0.4, 0.45, 0.3, 0.25], [0.6, 0.55, 0.2, 0.35]]).into_dyn();
        let b = ndarray::arr2(&[[0.5, 0.5, 0.25, 0.3], [0.3, 0.35, 0.3, 0.2]]).into_dyn();
        gradcheck::check(&[a, b], |t, v| {
            let g = giou_rows(t, v[0], v[1]);
            t.sum_all(g)
        }, 1e-5);
    }

    #[test]
    fn giou_rows_matches_scalar_giou() {
        let rows = ndarray::arr2(&[[0.4, 0.45, 0.3, 0.25], [0.62, 0.5, 0.2, 0.3]]);
        let other = ndarray::arr2(&[[0.5, 0.5, 0.25, 0.3], [0.3, 0.4, 0.35, 0.25]]);
        let mut tape = Tape::inference();
        let a = tape.leaf2(rows.clone());
        let b = tape.leaf2(other.clone());
        let g = giou_rows(&mut tape, a, b);
        let gv = tape.value2(g).to_owned();
        for i in 0..2 {
            let ba = BBox::from_raw(rows[[i, 0]], rows[[i, 1]], rows[[i, 2]], rows[[i, 3]]);
            let bb = BBox::from_raw(other[[i, 0]], other[[i, 1]], other[[i, 2]], other[[i, 3]]);
            assert!((gv[[i, 0]] - crate::geometry::giou(&ba, &bb)).abs() < 1e-9);
        }
    }

    #[test]
    fn entity_loss_perfect_boxes_zero_box_terms() {
        let gt = toy_gt();
        let mut tape = Tape::inference();
        // two queries hitting the two GT entities exactly, one background query
        let boxes = tape.leaf2(ndarray::arr2(&[
            [0.3, 0.3, 0.2, 0.2],
            [0.7, 0.6, 0.2, 0.3],
            [0.5, 0.5, 0.1, 0.1],
        ]));
        let probs = tape.leaf2(ndarray::arr2(&[
            [1.0, 0.0, 0.0],
            [0.0, 1.0, 0.0],
            [0.0, 0.0, 1.0],
        ]));
        let (loss, breakdown) =
            entity_detection_loss(&mut tape, boxes, probs, &gt, &LossWeights::default()).unwrap();
        assert!(tape.scalar_value(loss).abs() < 1e-12);
        assert!(breakdown.terms["ent_l1"].abs() < 1e-12);
        assert!(breakdown.terms["ent_giou"].abs() < 1e-12);
    }
}
