//! Dataset building, serialization, and loading.
//!
//! Annotations are line-delimited JSON (one scene per line); real values
//! round-trip at full precision. The manifest records the generating spec,
//! its hash, split sizes, per-class counts, head/body/tail predicate
//! groups, and the zero-shot combination list withheld from the train
//! split.

use super::{generate_scene, SceneSpec};
use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::matching::{GroundTruthSceneGraph, GtEntity, GtRelation};
use ndarray::Array2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

/// One annotated scene as stored on disk.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SceneRecord {
    pub id: u64,
    pub image: String,
    /// `(cx, cy, w, h, class_id)` per entity.
    pub entities: Vec<(f64, f64, f64, f64, usize)>,
    /// `(subject, predicate, object)` per relation.
    pub relations: Vec<(usize, usize, usize)>,
}

impl SceneRecord {
    pub fn to_graph(&self) -> GroundTruthSceneGraph {
        GroundTruthSceneGraph {
            entities: self
                .entities
                .iter()
                .map(|&(cx, cy, w, h, class_id)| GtEntity {
                    bbox: BBox::from_raw(cx, cy, w, h),
                    class_id,
                })
                .collect(),
            relations: self
                .relations
                .iter()
                .map(|&(s, p, o)| GtRelation { subject: s, predicate: p, object: o })
                .collect(),
        }
    }

    pub fn from_graph(id: u64, image: String, graph: &GroundTruthSceneGraph) -> Self {
        SceneRecord {
            id,
            image,
            entities: graph
                .entities
                .iter()
                .map(|e| (e.bbox.cx, e.bbox.cy, e.bbox.w, e.bbox.h, e.class_id))
                .collect(),
            relations: graph
                .relations
                .iter()
                .map(|r| (r.subject, r.predicate, r.object))
                .collect(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SplitInfo {
    pub file: String,
    pub count: usize,
    pub per_predicate_counts: Vec<usize>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    pub spec: SceneSpec,
    pub spec_hash: String,
    pub n_scenes: usize,
    pub class_names: Vec<String>,
    pub predicate_names: Vec<String>,
    pub train: SplitInfo,
    pub eval: SplitInfo,
    /// Predicate class ids per frequency group, most frequent first.
    pub groups_head: Vec<usize>,
    pub groups_body: Vec<usize>,
    pub groups_tail: Vec<usize>,
    /// `(subject_class, predicate, object_class)` combinations withheld
    /// from the train split.
    pub zero_shot: Vec<(usize, usize, usize)>,
}

pub fn spec_hash(spec: &SceneSpec) -> String {
    let canonical = serde_json::to_string(spec).expect("spec serializes");
    let mut hasher = Sha256::new();
    hasher.update(canonical.as_bytes());
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Generate `n_scenes` scenes, split 80/20 into train/eval, withhold
/// `n_zero_shot` triple combinations from train, write images + JSONL
/// annotations + manifest under `out_dir`.
pub fn build_dataset(
    spec: &SceneSpec,
    n_scenes: usize,
    n_zero_shot: usize,
    out_dir: &Path,
) -> Result<DatasetManifest> {
    spec.validate()?;
    if n_scenes < 5 {
        return Err(Error::Config("need at least 5 scenes".into()));
    }
    let images_dir = out_dir.join("images");
    fs::create_dir_all(&images_dir)?;

    let n_train = n_scenes * 4 / 5;
    let mut train_records = Vec::with_capacity(n_train);
    let mut eval_records = Vec::with_capacity(n_scenes - n_train);
    for idx in 0..n_scenes {
        let seed = spec.seed.wrapping_add(idx as u64);
        let (img, graph) = generate_scene(seed, spec)?;
        let name = format!("scene_{idx:06}.png");
        img.save(images_dir.join(&name))
            .map_err(|e| Error::Image(format!("writing {name}: {e}")))?;
        let record = SceneRecord::from_graph(idx as u64, format!("images/{name}"), &graph);
        if idx < n_train {
            train_records.push(record);
        } else {
            eval_records.push(record);
        }
    }

    // zero-shot selection: combinations present in eval, rarest in train first
    let combos = |records: &[SceneRecord]| {
        let mut map: BTreeMap<(usize, usize, usize), usize> = BTreeMap::new();
        for r in records {
            for &(s, p, o) in &r.relations {
                let key = (r.entities[s].4, p, r.entities[o].4);
                *map.entry(key).or_insert(0) += 1;
            }
        }
        map
    };
    let train_combos = combos(&train_records);
    let eval_combos = combos(&eval_records);
    let mut candidates: Vec<((usize, usize, usize), usize)> = eval_combos
        .keys()
        .map(|k| (*k, train_combos.get(k).copied().unwrap_or(0)))
        .collect();
    candidates.sort_by_key(|&(k, c)| (c, k));
    let zero_shot: Vec<(usize, usize, usize)> =
        candidates.into_iter().take(n_zero_shot).map(|(k, _)| k).collect();
    let zero_set: BTreeSet<_> = zero_shot.iter().cloned().collect();
    for r in &mut train_records {
        let ents = r.entities.clone();
        r.relations.retain(|&(s, p, o)| !zero_set.contains(&(ents[s].4, p, ents[o].4)));
    }

    let count_predicates = |records: &[SceneRecord]| {
        let mut counts = vec![0usize; spec.predicates.len()];
        for r in records {
            for &(_, p, _) in &r.relations {
                counts[p] += 1;
            }
        }
        counts
    };
    let train_counts = count_predicates(&train_records);
    let eval_counts = count_predicates(&eval_records);

    // head/body/tail by train frequency: descending thirds
    let mut order: Vec<usize> = (0..spec.predicates.len()).collect();
    order.sort_by_key(|&p| std::cmp::Reverse((train_counts[p], usize::MAX - p)));
    let third = spec.predicates.len().div_ceil(3);
    let groups_head = order[..third.min(order.len())].to_vec();
    let groups_body = order[third.min(order.len())..(2 * third).min(order.len())].to_vec();
    let groups_tail = order[(2 * third).min(order.len())..].to_vec();

    write_jsonl(&out_dir.join("train.jsonl"), &train_records)?;
    write_jsonl(&out_dir.join("eval.jsonl"), &eval_records)?;

    let manifest = DatasetManifest {
        version: 1,
        spec: spec.clone(),
        spec_hash: spec_hash(spec),
        n_scenes,
        class_names: spec.entity_class_names(),
        predicate_names: spec.predicate_names(),
        train: SplitInfo {
            file: "train.jsonl".into(),
            count: train_records.len(),
            per_predicate_counts: train_counts,
        },
        eval: SplitInfo {
            file: "eval.jsonl".into(),
            count: eval_records.len(),
            per_predicate_counts: eval_counts,
        },
        groups_head,
        groups_body,
        groups_tail,
        zero_shot,
    };
    let manifest_json = serde_json::to_string_pretty(&manifest)?;
    fs::write(out_dir.join("manifest.json"), manifest_json)?;
    Ok(manifest)
}

fn write_jsonl(path: &Path, records: &[SceneRecord]) -> Result<()> {
    let mut f = fs::File::create(path)?;
    for r in records {
        let line = serde_json::to_string(r)?;
        writeln!(f, "{line}")?;
    }
    Ok(())
}

/// A loaded dataset split with lazily loadable images.
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub records: Vec<SceneRecord>,
    root: PathBuf,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Image of record `i` as a `(h*w) x 3` matrix in `[0, 1]`.
    pub fn image_matrix(&self, i: usize) -> Result<Array2<f64>> {
        load_image_matrix(&self.root.join(&self.records[i].image))
    }

    pub fn graph(&self, i: usize) -> GroundTruthSceneGraph {
        self.records[i].to_graph()
    }
}

/// Load one split (`"train"` or `"eval"`) of a dataset directory.
pub fn load_dataset(root: &Path, split: &str) -> Result<Dataset> {
    let manifest_path = root.join("manifest.json");
    let manifest_text = fs::read_to_string(&manifest_path)
        .map_err(|e| Error::Dataset(format!("manifest missing at {}: {e}", manifest_path.display())))?;
    let manifest: DatasetManifest = serde_json::from_str(&manifest_text)
        .map_err(|e| Error::Dataset(format!("manifest corrupt: {e}")))?;
    let expected = spec_hash(&manifest.spec);
    if manifest.spec_hash != expected {
        return Err(Error::Dataset(format!(
            "manifest spec hash {} does not match spec (expected {expected})",
            manifest.spec_hash
        )));
    }
    let info = match split {
        "train" => &manifest.train,
        "eval" => &manifest.eval,
        other => return Err(Error::Dataset(format!("unknown split: {other}"))),
    };
    let file = fs::File::open(root.join(&info.file))?;
    let reader = BufReader::new(file);
    let mut records = Vec::with_capacity(info.count);
    for (index, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::DatasetRecord { index, message: e.to_string() })?;
        if line.trim().is_empty() {
            continue;
        }
        let record: SceneRecord = serde_json::from_str(&line)
            .map_err(|e| Error::DatasetRecord { index, message: e.to_string() })?;
        records.push(record);
    }
    if records.len() != info.count {
        return Err(Error::DatasetRecord {
            index: records.len(),
            message: format!("expected {} records, found {}", info.count, records.len()),
        });
    }
    Ok(Dataset { manifest, records, root: root.to_path_buf() })
}

/// Decode a PNG into a `(h*w) x 3` matrix in `[0, 1]`.
pub fn load_image_matrix(path: &Path) -> Result<Array2<f64>> {
    let img = image::open(path)
        .map_err(|e| Error::Image(format!("{}: {e}", path.display())))?
        .to_rgb8();
    Ok(image_to_matrix(&img))
}

pub fn image_to_matrix(img: &image::RgbImage) -> Array2<f64> {
    let (w, h) = img.dimensions();
    let mut m = Array2::zeros(((w * h) as usize, 3));
    for (i, pixel) in img.pixels().enumerate() {
        for c in 0..3 {
            m[[i, c]] = pixel.0[c] as f64 / 255.0;
        }
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::TempDir;

    #[test]
    fn build_then_load_round_trips() {
        let dir = TempDir::new().unwrap();
        let spec = SceneSpec { seed: 11, ..Default::default() };
        let manifest = build_dataset(&spec, 10, 2, dir.path()).unwrap();
        assert_eq!(manifest.train.count, 8);
        assert_eq!(manifest.eval.count, 2);

        let train = load_dataset(dir.path(), "train").unwrap();
        let eval = load_dataset(dir.path(), "eval").unwrap();
        assert_eq!(train.len(), 8);
        assert_eq!(eval.len(), 2);
        // order matches ids
        for (i, r) in train.records.iter().enumerate() {
            assert_eq!(r.id, i as u64);
        }
        // boxes preserved to full precision
        let (_, gt0) = generate_scene(spec.seed, &spec).unwrap();
        let loaded = train.graph(0);
        for (a, b) in gt0.entities.iter().zip(&loaded.entities) {
            assert_eq!(a.bbox.cx, b.bbox.cx);
            assert_eq!(a.bbox.w, b.bbox.w);
        }
        // manifest counts equal a recount over the records
        let mut recount = vec![0usize; spec.predicates.len()];
        for r in &train.records {
            for &(_, p, _) in &r.relations {
                recount[p] += 1;
            }
        }
        assert_eq!(recount, manifest.train.per_predicate_counts);
        // images load
        let m = train.image_matrix(0).unwrap();
        assert_eq!(m.dim(), (128 * 128, 3));
    }

    #[test]
    fn zero_shot_combos_absent_from_train() {
        let dir = TempDir::new().unwrap();
        let spec = SceneSpec { seed: 5, ..Default::default() };
        let manifest = build_dataset(&spec, 25, 3, dir.path()).unwrap();
        assert!(!manifest.zero_shot.is_empty());
        let train = load_dataset(dir.path(), "train").unwrap();
        let zs: BTreeSet<_> = manifest.zero_shot.iter().cloned().collect();
        for r in &train.records {
            for &(s, p, o) in &r.relations {
                let combo = (r.entities[s].4, p, r.entities[o].4);
                assert!(!zs.contains(&combo), "zero-shot combo {combo:?} leaked into train");
            }
        }
        // and each combo does occur in eval
        let eval = load_dataset(dir.path(), "eval").unwrap();
        let mut eval_combos = BTreeSet::new();
        for r in &eval.records {
            for &(s, p, o) in &r.relations {
                eval_combos.insert((r.entities[s].4, p, r.entities[o].4));
            }
        }
        for combo in &manifest.zero_shot {
            assert!(eval_combos.contains(combo));
        }
    }

    #[test]
    fn truncated_file_reports_bad_record_index() {
        let dir = TempDir::new().unwrap();
        let spec = SceneSpec::default();
        build_dataset(&spec, 10, 0, dir.path()).unwrap();
        // corrupt line 3 of train.jsonl
        let path = dir.path().join("train.jsonl");
        let text = fs::read_to_string(&path).unwrap();
        let mut lines: Vec<&str> = text.lines().collect();
        lines[3] = "{\"id\": 3, \"broken\"";
        fs::write(&path, lines.join("\n")).unwrap();
        match load_dataset(dir.path(), "train") {
            Err(Error::DatasetRecord { index, .. }) => assert_eq!(index, 3),
            Err(other) => panic!("expected record error, got {other:?}"),
            Ok(_) => panic!("expected record error, got success"),
        }
    }

    #[test]
    fn dataset_bytes_deterministic() {
        let d1 = TempDir::new().unwrap();
        let d2 = TempDir::new().unwrap();
        let spec = SceneSpec { seed: 99, ..Default::default() };
        build_dataset(&spec, 8, 1, d1.path()).unwrap();
        build_dataset(&spec, 8, 1, d2.path()).unwrap();
        for f in ["train.jsonl", "eval.jsonl", "manifest.json", "images/scene_000000.png"] {
            let a = fs::read(d1.path().join(f)).unwrap();
            let b = fs::read(d2.path().join(f)).unwrap();
            assert_eq!(a, b, "{f} differs between identical builds");
        }
    }
}
