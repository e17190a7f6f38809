use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{BoundingBox, ClassCatalog, ObjectRecord, RelationRecord, SceneRecord};
use crate::error::{Error, Result};

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct JsonObject {
    class: String,
    #[serde(rename = "box")]
    bbox: BoundingBox,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct JsonRelation {
    sub: usize,
    obj: usize,
    pred: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct JsonScene {
    image_id: u64,
    objects: Vec<JsonObject>,
    relations: Vec<JsonRelation>,
}

/// Reads one scene per line. Blank lines are skipped; a file without any
/// scene is a parse error.
pub fn load_annotations(path: &Path, catalog: &ClassCatalog) -> Result<Vec<SceneRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut scenes = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let raw: JsonScene = serde_json::from_str(line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: line_no,
            message: e.to_string(),
        })?;
        let scene = convert(raw, catalog).map_err(|msg| {
            Error::Data(format!("{}:{line_no}: {msg}", path.display()))
        })?;
        scene.validate(catalog)?;
        scenes.push(scene);
    }
    if scenes.is_empty() {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            message: "no scenes in annotation file".into(),
        });
    }
    Ok(scenes)
}

fn convert(raw: JsonScene, catalog: &ClassCatalog) -> std::result::Result<SceneRecord, String> {
    let objects = raw
        .objects
        .into_iter()
        .map(|o| {
            let class = catalog
                .object_index(&o.class)
                .ok_or_else(|| format!("unknown object class {:?}", o.class))?;
            Ok(ObjectRecord { class, bbox: o.bbox })
        })
        .collect::<std::result::Result<_, String>>()?;
    let relations = raw
        .relations
        .into_iter()
        .map(|r| {
            let predicate = catalog
                .predicate_index(&r.pred)
                .ok_or_else(|| format!("unknown predicate {:?}", r.pred))?;
            Ok(RelationRecord {
                subject: r.sub,
                object: r.obj,
                predicate,
            })
        })
        .collect::<std::result::Result<_, String>>()?;
    Ok(SceneRecord {
        image_id: raw.image_id,
        objects,
        relations,
    })
}

pub fn write_annotations(path: &Path, scenes: &[SceneRecord], catalog: &ClassCatalog) -> Result<()> {
    let mut out = Vec::new();
    for s in scenes {
        let raw = JsonScene {
            image_id: s.image_id,
            objects: s
                .objects
                .iter()
                .map(|o| JsonObject {
                    class: catalog.objects[o.class].clone(),
                    bbox: o.bbox,
                })
                .collect(),
            relations: s
                .relations
                .iter()
                .map(|r| JsonRelation {
                    sub: r.subject,
                    obj: r.object,
                    pred: catalog.predicates[r.predicate].clone(),
                })
                .collect(),
        };
        serde_json::to_writer(&mut out, &raw).expect("scene serializes");
        out.push(b'\n');
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&out).map_err(|e| Error::io(path, e))
}

/// Reads a `name,count` CSV with a header row.
pub fn read_predicate_counts(path: &Path) -> Result<Vec<(String, i64)>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let mut rows = Vec::new();
    for rec in reader.deserialize::<(String, i64)>() {
        rows.push(rec.map_err(|e| csv_error(path, e))?);
    }
    if rows.is_empty() {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            message: "no rows in count file".into(),
        });
    }
    Ok(rows)
}

pub fn write_predicate_counts(path: &Path, rows: &[(String, u64)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record(["name", "count"]).map_err(|e| csv_error(path, e))?;
    for (name, count) in rows {
        w.serialize((name, count)).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    match e.into_kind() {
        csv::ErrorKind::Io(source) => Error::io(path, source),
        kind => Error::Parse {
            path: path.to_path_buf(),
            line,
            message: format!("{kind:?}"),
        },
    }
}
