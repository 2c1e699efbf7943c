//! UTF-8 JSON sketch documents.
//!
//! ```json
//! {"version":1,"category":"lamp","canvas":[256,256],
//!  "strokes":[{"points":[[10,12],[40,12]],"labels":[1,1]}]}
//! ```
//!
//! Unknown fields are ignored on read and never written.

use serde_json::{json, Map, Value};

use super::{Point2, Sketch, SketchError, Stroke};

pub const SKETCH_FORMAT_VERSION: u64 = 1;

pub fn parse_sketch(bytes: &[u8]) -> Result<Sketch, SketchError> {
    let doc: Value =
        serde_json::from_slice(bytes).map_err(|e| SketchError::parse("$", e.to_string()))?;
    sketch_from_value(&doc)
}

pub fn serialize_sketch(sketch: &Sketch) -> Vec<u8> {
    serde_json::to_vec(&sketch_to_value(sketch)).expect("sketch serializes")
}

pub fn sketch_to_value(sketch: &Sketch) -> Value {
    let strokes: Vec<Value> = sketch
        .strokes
        .iter()
        .map(|s| {
            let mut obj = Map::new();
            obj.insert(
                "points".into(),
                Value::Array(s.points.iter().map(|p| json!([p.x, p.y])).collect()),
            );
            if let Some(labels) = &s.gt_labels {
                obj.insert("labels".into(), json!(labels));
            }
            Value::Object(obj)
        })
        .collect();
    json!({
        "version": SKETCH_FORMAT_VERSION,
        "category": sketch.category,
        "canvas": [sketch.canvas_w, sketch.canvas_h],
        "strokes": strokes,
    })
}

fn field<'a>(obj: &'a Map<String, Value>, path: &str, name: &str) -> Result<&'a Value, SketchError> {
    obj.get(name)
        .ok_or_else(|| SketchError::parse(join(path, name), "missing field"))
}

fn join(path: &str, name: &str) -> String {
    if path.is_empty() {
        name.to_string()
    } else {
        format!("{path}.{name}")
    }
}

fn number(v: &Value, path: &str) -> Result<f64, SketchError> {
    v.as_f64()
        .ok_or_else(|| SketchError::parse(path, "expected a number"))
}

pub fn sketch_from_value(doc: &Value) -> Result<Sketch, SketchError> {
    let obj = doc
        .as_object()
        .ok_or_else(|| SketchError::parse("$", "expected an object"))?;
    let version = field(obj, "", "version")?
        .as_u64()
        .ok_or_else(|| SketchError::parse("version", "expected an integer"))?;
    if version != SKETCH_FORMAT_VERSION {
        return Err(SketchError::parse(
            "version",
            format!("unsupported version {version}"),
        ));
    }
    let category = field(obj, "", "category")?
        .as_str()
        .ok_or_else(|| SketchError::parse("category", "expected a string"))?
        .to_string();
    let canvas = field(obj, "", "canvas")?
        .as_array()
        .filter(|a| a.len() == 2)
        .ok_or_else(|| SketchError::parse("canvas", "expected [w, h]"))?;
    let canvas_w = number(&canvas[0], "canvas[0]")?;
    let canvas_h = number(&canvas[1], "canvas[1]")?;
    if canvas_w <= 0.0 || canvas_h <= 0.0 {
        return Err(SketchError::parse("canvas", "canvas size must be positive"));
    }
    let strokes_v = field(obj, "", "strokes")?
        .as_array()
        .ok_or_else(|| SketchError::parse("strokes", "expected an array"))?;

    let mut strokes = Vec::with_capacity(strokes_v.len());
    for (si, sv) in strokes_v.iter().enumerate() {
        let spath = format!("strokes[{si}]");
        let sobj = sv
            .as_object()
            .ok_or_else(|| SketchError::parse(&spath, "expected an object"))?;
        let pts_v = field(sobj, &spath, "points")?
            .as_array()
            .ok_or_else(|| SketchError::parse(join(&spath, "points"), "expected an array"))?;
        if pts_v.is_empty() {
            return Err(SketchError::parse(join(&spath, "points"), "stroke has no points"));
        }
        let mut points = Vec::with_capacity(pts_v.len());
        for (pi, pv) in pts_v.iter().enumerate() {
            let ppath = format!("{spath}.points[{pi}]");
            let pair = pv
                .as_array()
                .filter(|a| a.len() == 2)
                .ok_or_else(|| SketchError::parse(&ppath, "expected [x, y]"))?;
            let x = number(&pair[0], &format!("{ppath}[0]"))?.clamp(0.0, canvas_w);
            let y = number(&pair[1], &format!("{ppath}[1]"))?.clamp(0.0, canvas_h);
            points.push(Point2::new(x, y));
        }
        let gt_labels = match sobj.get("labels") {
            None | Some(Value::Null) => None,
            Some(lv) => {
                let lpath = join(&spath, "labels");
                let arr = lv
                    .as_array()
                    .ok_or_else(|| SketchError::parse(&lpath, "expected an array"))?;
                if arr.len() != points.len() {
                    return Err(SketchError::parse(
                        &lpath,
                        format!(
                            "stroke {si} has {} labels for {} points",
                            arr.len(),
                            points.len()
                        ),
                    ));
                }
                let mut labels = Vec::with_capacity(arr.len());
                for (li, l) in arr.iter().enumerate() {
                    let label = l
                        .as_u64()
                        .filter(|&v| v >= 1 && v <= u32::MAX as u64)
                        .ok_or_else(|| {
                            SketchError::parse(
                                format!("{lpath}[{li}]"),
                                "label must be an integer >= 1",
                            )
                        })?;
                    labels.push(label as u32);
                }
                Some(labels)
            }
        };
        strokes.push(Stroke { points, gt_labels });
    }
    Ok(Sketch {
        category,
        canvas_w,
        canvas_h,
        strokes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn minimal_document() {
        let doc = br#"{"version":1,"category":"lamp","canvas":[100,80],
            "strokes":[{"points":[[1,2],[3,4]]}],"extra":true}"#;
        let s = parse_sketch(doc).unwrap();
        assert_eq!(s.category, "lamp");
        assert_eq!(s.strokes.len(), 1);
        assert_eq!(s.strokes[0].points[1], Point2::new(3.0, 4.0));
        assert!(s.strokes[0].gt_labels.is_none());
    }

    #[test]
    fn short_labels_name_the_stroke() {
        let doc = br#"{"version":1,"category":"c","canvas":[10,10],
            "strokes":[{"points":[[1,1]]},{"points":[[1,2],[3,4]],"labels":[1]}]}"#;
        match parse_sketch(doc) {
            Err(SketchError::Parse { path, .. }) => assert_eq!(path, "strokes[1].labels"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn zero_label_rejected() {
        let doc = br#"{"version":1,"category":"c","canvas":[10,10],
            "strokes":[{"points":[[1,2]],"labels":[0]}]}"#;
        match parse_sketch(doc) {
            Err(SketchError::Parse { path, .. }) => assert_eq!(path, "strokes[0].labels[0]"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_field_and_bad_json() {
        let doc = br#"{"version":1,"canvas":[10,10],"strokes":[]}"#;
        match parse_sketch(doc) {
            Err(SketchError::Parse { path, .. }) => assert_eq!(path, "category"),
            other => panic!("unexpected {other:?}"),
        }
        assert!(parse_sketch(b"{nope").is_err());
        let doc = br#"{"version":2,"category":"c","canvas":[10,10],"strokes":[]}"#;
        assert!(parse_sketch(doc).is_err());
    }

    #[test]
    fn points_clamped_to_canvas() {
        let doc = br#"{"version":1,"category":"c","canvas":[10,10],
            "strokes":[{"points":[[-3,4],[12,11]]}]}"#;
        let s = parse_sketch(doc).unwrap();
        assert_eq!(s.strokes[0].points, vec![Point2::new(0.0, 4.0), Point2::new(10.0, 10.0)]);
    }

    fn arb_sketch() -> impl Strategy<Value = Sketch> {
        let stroke = (1usize..20, any::<bool>()).prop_flat_map(|(n, labeled)| {
            (
                prop::collection::vec((0.0f64..300.0, 0.0f64..200.0), n),
                prop::collection::vec(1u32..12, n),
            )
                .prop_map(move |(pts, labels)| Stroke {
                    points: pts.into_iter().map(|(x, y)| Point2::new(x, y)).collect(),
                    gt_labels: labeled.then_some(labels),
                })
        });
        ("[a-z]{1,8}", prop::collection::vec(stroke, 0..6)).prop_map(|(cat, strokes)| Sketch {
            category: cat,
            canvas_w: 300.0,
            canvas_h: 200.0,
            strokes,
        })
    }

    proptest! {
        #[test]
        fn round_trip(s in arb_sketch()) {
            let back = parse_sketch(&serialize_sketch(&s)).unwrap();
            prop_assert_eq!(back, s);
        }
    }
}
